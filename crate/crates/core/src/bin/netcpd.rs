fn main() {
    std::process::exit(netcpd::cli::main_with_args(std::env::args_os()));
}
