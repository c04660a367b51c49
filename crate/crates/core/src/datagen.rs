//! Seeded synthetic data: the linear-trend and covariance-change sensor
//! models, a direct Gaussian model of similarity scores, and planted
//! two-group instances for the isolation solvers.
//!
//! Change convention: readings at ticks `t >= kappa` are post-change, so an
//! alarm at `T = kappa` has delay `T - kappa + 1 = 1`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{self, Rng};
use crate::snapshot::{EdgeMask, SimilaritySnapshot};
use crate::stream::ObservationFrame;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataGenError {
    #[error("anomalous node {node} out of range for {n} sensors")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("{which} correlation matrix is not positive semidefinite: eigenvalue {eigenvalue:.3e}")]
    NotPsd { which: &'static str, eigenvalue: f64 },
    #[error("correlation {what} = {value} outside [-1, 1]")]
    Correlation { what: &'static str, value: f64 },
    #[error("vector {index} is not unit length (norm {norm})")]
    NotUnit { index: usize, norm: f64 },
    #[error("need at least {need} sensors, got {got}")]
    TooFew { need: usize, got: usize },
}

fn check_nodes(nodes: &[usize], n: usize) -> Result<(), DataGenError> {
    match nodes.iter().find(|&&s| s >= n) {
        Some(&node) => Err(DataGenError::NodeOutOfRange { node, n }),
        None => Ok(()),
    }
}

fn membership(nodes: &[usize], n: usize) -> Vec<bool> {
    let mut out = vec![false; n];
    for &s in nodes {
        out[s] = true;
    }
    out
}

fn default_slope_null() -> f64 {
    1.0
}

fn default_rho_anomalous() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendModelSpec {
    pub n_sensors: usize,
    #[serde(default)]
    pub anomalous: Vec<usize>,
    pub variance: f64,
    #[serde(default = "default_slope_null")]
    pub slope_null: f64,
    pub slope_anomalous: f64,
    #[serde(default)]
    pub kappa: Option<u64>,
    pub horizon: u64,
}

impl TrendModelSpec {
    /// Null model: every sensor has mean `slope_null * t`.
    pub fn null(n_sensors: usize, variance: f64, horizon: u64) -> Self {
        Self {
            n_sensors,
            anomalous: Vec::new(),
            variance,
            slope_null: 1.0,
            slope_anomalous: 1.0,
            kappa: None,
            horizon,
        }
    }

    pub fn validate(&self) -> Result<(), DataGenError> {
        check_nodes(&self.anomalous, self.n_sensors)?;
        if !(self.variance > 0.0) {
            return Err(DataGenError::NonPositive {
                what: "variance",
                value: self.variance,
            });
        }
        Ok(())
    }

    pub fn mean(&self, sensor_is_anomalous: bool, t: u64) -> f64 {
        match self.kappa {
            Some(k) if sensor_is_anomalous && t >= k => {
                self.slope_null * (k as f64 - 1.0) + self.slope_anomalous * (t - k + 1) as f64
            }
            _ => self.slope_null * t as f64,
        }
    }
}

/// Infinite stream of trend-model frames starting at `t = 1`.
#[derive(Debug, Clone)]
pub struct TrendStream {
    spec: TrendModelSpec,
    anomalous: Vec<bool>,
    sd: f64,
    rng: Rng,
    t: u64,
}

impl Iterator for TrendStream {
    type Item = ObservationFrame;

    fn next(&mut self) -> Option<ObservationFrame> {
        self.t += 1;
        let t = self.t;
        let values = (0..self.spec.n_sensors)
            .map(|i| {
                let z: f64 = self.rng.sample(StandardNormal);
                self.spec.mean(self.anomalous[i], t) + self.sd * z
            })
            .collect();
        Some(ObservationFrame::new(t, values))
    }
}

pub fn gen_trend(spec: &TrendModelSpec, seed: u64) -> Result<TrendStream, DataGenError> {
    spec.validate()?;
    Ok(TrendStream {
        anomalous: membership(&spec.anomalous, spec.n_sensors),
        sd: spec.variance.sqrt(),
        spec: spec.clone(),
        rng: seed::rng(seed),
        t: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModelSpec {
    pub n_sensors: usize,
    #[serde(default)]
    pub anomalous: Vec<usize>,
    pub rho_normal: f64,
    pub rho_cross: f64,
    #[serde(default = "default_rho_anomalous")]
    pub rho_anomalous: f64,
    #[serde(default)]
    pub kappa: Option<u64>,
    pub horizon: u64,
}

impl CovarianceModelSpec {
    /// Pre-change (`post = false`) or post-change correlation matrix.
    pub fn correlation(&self, post: bool) -> DMatrix<f64> {
        let n = self.n_sensors;
        let anom = membership(&self.anomalous, n);
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else if !post || (!anom[i] && !anom[j]) {
                self.rho_normal
            } else if anom[i] && anom[j] {
                self.rho_anomalous
            } else {
                self.rho_cross
            }
        })
    }
}

/// A validated covariance-change model holding symmetric square-root factors
/// of its pre- and post-change correlation matrices.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    spec: CovarianceModelSpec,
    pre: DMatrix<f64>,
    post: DMatrix<f64>,
}

const PSD_TOLERANCE: f64 = 1e-10;

fn psd_factor(m: DMatrix<f64>, which: &'static str) -> Result<DMatrix<f64>, DataGenError> {
    let eig = SymmetricEigen::new(m);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOLERANCE {
        return Err(DataGenError::NotPsd { which, eigenvalue: min });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

impl CovarianceModel {
    pub fn new(spec: CovarianceModelSpec) -> Result<Self, DataGenError> {
        check_nodes(&spec.anomalous, spec.n_sensors)?;
        for (what, value) in [
            ("rho_normal", spec.rho_normal),
            ("rho_cross", spec.rho_cross),
            ("rho_anomalous", spec.rho_anomalous),
        ] {
            if !(-1.0..=1.0).contains(&value) {
                return Err(DataGenError::Correlation { what, value });
            }
        }
        let pre = psd_factor(spec.correlation(false), "pre-change")?;
        let post = psd_factor(spec.correlation(true), "post-change")?;
        Ok(Self { spec, pre, post })
    }

    pub fn spec(&self) -> &CovarianceModelSpec {
        &self.spec
    }

    pub fn stream(&self, seed: u64) -> CovarianceStream<'_> {
        CovarianceStream {
            model: self,
            rng: seed::rng(seed),
            z: DVector::zeros(self.spec.n_sensors),
            t: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CovarianceStream<'a> {
    model: &'a CovarianceModel,
    rng: Rng,
    z: DVector<f64>,
    t: u64,
}

impl Iterator for CovarianceStream<'_> {
    type Item = ObservationFrame;

    fn next(&mut self) -> Option<ObservationFrame> {
        self.t += 1;
        for v in self.z.iter_mut() {
            *v = self.rng.sample(StandardNormal);
        }
        let post = self.model.spec.kappa.is_some_and(|k| self.t >= k);
        let factor = if post { &self.model.post } else { &self.model.pre };
        let x = factor * &self.z;
        Some(ObservationFrame::new(self.t, x.iter().copied().collect()))
    }
}

pub fn gen_covariance(spec: &CovarianceModelSpec) -> Result<CovarianceModel, DataGenError> {
    CovarianceModel::new(spec.clone())
}

/// Either sensor model, as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    Trend(TrendModelSpec),
    Covariance(CovarianceModelSpec),
}

impl ModelSpec {
    pub fn n_sensors(&self) -> usize {
        match self {
            ModelSpec::Trend(s) => s.n_sensors,
            ModelSpec::Covariance(s) => s.n_sensors,
        }
    }

    pub fn horizon(&self) -> u64 {
        match self {
            ModelSpec::Trend(s) => s.horizon,
            ModelSpec::Covariance(s) => s.horizon,
        }
    }

    pub fn kappa(&self) -> Option<u64> {
        match self {
            ModelSpec::Trend(s) => s.kappa,
            ModelSpec::Covariance(s) => s.kappa,
        }
    }

    pub fn anomalous(&self) -> &[usize] {
        match self {
            ModelSpec::Trend(s) => &s.anomalous,
            ModelSpec::Covariance(s) => &s.anomalous,
        }
    }

    pub fn build(&self) -> Result<Model, DataGenError> {
        Ok(match self {
            ModelSpec::Trend(s) => {
                s.validate()?;
                Model::Trend(s.clone())
            }
            ModelSpec::Covariance(s) => Model::Covariance(CovarianceModel::new(s.clone())?),
        })
    }
}

/// A validated model ready to produce streams.
#[derive(Debug, Clone)]
pub enum Model {
    Trend(TrendModelSpec),
    Covariance(CovarianceModel),
}

impl Model {
    pub fn n_sensors(&self) -> usize {
        match self {
            Model::Trend(s) => s.n_sensors,
            Model::Covariance(m) => m.spec.n_sensors,
        }
    }

    pub fn kappa(&self) -> Option<u64> {
        match self {
            Model::Trend(s) => s.kappa,
            Model::Covariance(m) => m.spec.kappa,
        }
    }

    pub fn horizon(&self) -> u64 {
        match self {
            Model::Trend(s) => s.horizon,
            Model::Covariance(m) => m.spec.horizon,
        }
    }

    /// Unbounded stream; callers impose their own horizon.
    pub fn stream(&self, seed: u64) -> ModelStream<'_> {
        match self {
            Model::Trend(s) => ModelStream::Trend(gen_trend(s, seed).expect("validated at build")),
            Model::Covariance(m) => ModelStream::Covariance(m.stream(seed)),
        }
    }

    /// The stream truncated at the spec's horizon.
    pub fn frames(&self, seed: u64) -> std::iter::Take<ModelStream<'_>> {
        self.stream(seed).take(self.horizon() as usize)
    }
}

#[derive(Debug, Clone)]
pub enum ModelStream<'a> {
    Trend(TrendStream),
    Covariance(CovarianceStream<'a>),
}

impl Iterator for ModelStream<'_> {
    type Item = ObservationFrame;

    fn next(&mut self) -> Option<ObservationFrame> {
        match self {
            ModelStream::Trend(s) => s.next(),
            ModelStream::Covariance(s) => s.next(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectSimilaritySpec {
    pub u: Vec<Vec<f64>>,
    pub sigma2: f64,
    pub mask: EdgeMask,
    pub horizon: u64,
}

impl DirectSimilaritySpec {
    pub fn validate(&self) -> Result<(), DataGenError> {
        if !(self.sigma2 >= 0.0) {
            return Err(DataGenError::NonPositive {
                what: "sigma2",
                value: self.sigma2,
            });
        }
        for (index, v) in self.u.iter().enumerate() {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(DataGenError::NotUnit { index, norm });
            }
        }
        Ok(())
    }

    pub fn mean(&self, i: usize, j: usize) -> f64 {
        crate::similarity::dot(&self.u[i], &self.u[j])
    }

    /// One snapshot; tick `t` draws from its own derived stream so any range
    /// of ticks can be generated independently.
    pub fn snapshot_at(&self, seed: u64, t: u64) -> SimilaritySnapshot {
        let mut rng = seed::rng(seed::derive(seed, &[seed::tag::TICK, t]));
        let sd = self.sigma2.sqrt();
        SimilaritySnapshot::from_fn(t, self.mask.clone(), |i, j| {
            let z: f64 = rng.sample(StandardNormal);
            self.mean(i, j) + sd * z
        })
    }
}

/// Snapshots at `t = 1..=horizon` with `y_ij ~ N(u_iᵀu_j, sigma2)` i.i.d.
/// over edges and ticks.
pub fn gen_direct_similarity(
    spec: &DirectSimilaritySpec,
    seed: u64,
) -> Result<impl Iterator<Item = SimilaritySnapshot> + '_, DataGenError> {
    spec.validate()?;
    Ok((1..=spec.horizon).map(move |t| spec.snapshot_at(seed, t)))
}

/// Complete-graph snapshot with `N(mu_in, sigma²)` scores within each side
/// of the `(S, complement)` split and `N(mu_cross, sigma²)` across it.
pub fn planted_isolation_instance(
    n: usize,
    s: &[usize],
    mu_in: f64,
    mu_cross: f64,
    sigma: f64,
    seed: u64,
) -> Result<SimilaritySnapshot, DataGenError> {
    check_nodes(s, n)?;
    if sigma < 0.0 {
        return Err(DataGenError::NonPositive {
            what: "sigma",
            value: sigma,
        });
    }
    if n < 2 {
        return Err(DataGenError::TooFew { need: 2, got: n });
    }
    let side = membership(s, n);
    let mut rng = seed::rng(seed);
    Ok(SimilaritySnapshot::from_fn(0, EdgeMask::complete(n), |i, j| {
        let z: f64 = rng.sample(StandardNormal);
        let mu = if side[i] == side[j] { mu_in } else { mu_cross };
        mu + sigma * z
    }))
}

/// Equiangular zero-mean unit vectors in `R^dim`: `u_iᵀu_j = c` for normal
/// pairs and anomalous pairs, `-c` across. Needs `dim >= n + 2`.
pub fn equiangular_vectors(n: usize, anomalous: &[usize], c: f64, dim: usize) -> Result<Vec<Vec<f64>>, DataGenError> {
    check_nodes(anomalous, n)?;
    if dim < n + 2 {
        return Err(DataGenError::TooFew { need: n + 2, got: dim });
    }
    if !(0.0..=1.0).contains(&c) {
        return Err(DataGenError::Correlation { what: "c", value: c });
    }
    // Orthonormal vectors orthogonal to the all-ones vector: normalized
    // Helmert contrasts e_k ∝ (1,…,1,−k,0,…) with k ones.
    let helmert = |k: usize| -> Vec<f64> {
        let scale = 1.0 / ((k * (k + 1)) as f64).sqrt();
        (0..dim)
            .map(|m| match m.cmp(&k) {
                std::cmp::Ordering::Less => scale,
                std::cmp::Ordering::Equal => -(k as f64) * scale,
                std::cmp::Ordering::Greater => 0.0,
            })
            .collect()
    };
    let common = helmert(1);
    let side = membership(anomalous, n);
    Ok((0..n)
        .map(|i| {
            let own = helmert(i + 2);
            let sign = if side[i] { -1.0 } else { 1.0 };
            common
                .iter()
                .zip(&own)
                .map(|(a, b)| sign * c.sqrt() * a + (1.0 - c).sqrt() * b)
                .collect()
        })
        .collect())
}
