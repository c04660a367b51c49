//! Per-sensor sliding windows over a multi-sensor observation stream.
//!
//! A [`WindowBank`] keeps the last `w` readings of every sensor in a flat
//! ring buffer (`N * w` reals total, independent of stream length). Missing
//! readings freeze the affected sensor's buffer: nothing is pushed and its
//! fill count is unchanged.

use std::collections::BTreeSet;
use std::io::Read;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StreamError {
    #[error("out-of-sequence frame: expected t = {expected}, got t = {got}")]
    Sequence { expected: u64, got: u64 },
    #[error("frame has {got} values but the bank tracks {expected} sensors")]
    Width { expected: usize, got: usize },
    #[error("sensor index {index} out of range for {n} sensors")]
    Index { index: usize, n: usize },
    #[error("window length must be at least 1")]
    ZeroWindow,
    #[error("csv line {line}: {message}")]
    Csv { line: u64, message: String },
}

/// One tick of raw readings. `values[i]` is ignored when `i` is in `missing`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame {
    pub t: u64,
    pub values: Vec<f64>,
    pub missing: BTreeSet<usize>,
}

impl ObservationFrame {
    pub fn new(t: u64, values: Vec<f64>) -> Self {
        Self {
            t,
            values,
            missing: BTreeSet::new(),
        }
    }

    pub fn with_missing(t: u64, values: Vec<f64>, missing: impl IntoIterator<Item = usize>) -> Self {
        Self {
            t,
            values,
            missing: missing.into_iter().collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn is_missing(&self, sensor: usize) -> bool {
        self.missing.contains(&sensor)
    }
}

#[derive(Debug, Clone)]
pub struct WindowBank {
    n: usize,
    w: usize,
    data: Vec<f64>,
    /// Index of the oldest reading in each sensor's slot.
    head: Vec<usize>,
    fill: Vec<usize>,
    last_t: Option<u64>,
}

impl WindowBank {
    pub fn new(n: usize, w: usize) -> Result<Self, StreamError> {
        if w == 0 {
            return Err(StreamError::ZeroWindow);
        }
        Ok(Self {
            n,
            w,
            data: vec![0.0; n * w],
            head: vec![0; n],
            fill: vec![0; n],
            last_t: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn fill(&self) -> &[usize] {
        &self.fill
    }

    /// Tick of the most recently pushed frame.
    pub fn current_t(&self) -> Option<u64> {
        self.last_t
    }

    pub fn is_complete(&self, sensor: usize) -> bool {
        self.fill.get(sensor).is_some_and(|&f| f == self.w)
    }

    pub fn complete_count(&self) -> usize {
        self.fill.iter().filter(|&&f| f == self.w).count()
    }

    pub fn push(&mut self, frame: &ObservationFrame) -> Result<(), StreamError> {
        if frame.values.len() != self.n {
            return Err(StreamError::Width {
                expected: self.n,
                got: frame.values.len(),
            });
        }
        if let Some(last) = self.last_t {
            if frame.t != last + 1 {
                return Err(StreamError::Sequence {
                    expected: last + 1,
                    got: frame.t,
                });
            }
        }
        for (i, &x) in frame.values.iter().enumerate() {
            if frame.is_missing(i) {
                continue;
            }
            let slot = &mut self.data[i * self.w..(i + 1) * self.w];
            if self.fill[i] < self.w {
                slot[(self.head[i] + self.fill[i]) % self.w] = x;
                self.fill[i] += 1;
            } else {
                slot[self.head[i]] = x;
                self.head[i] = (self.head[i] + 1) % self.w;
            }
        }
        self.last_t = Some(frame.t);
        Ok(())
    }

    /// The `w` most recent readings of `sensor` in time order, or `None`
    /// while the sensor is still warming up.
    pub fn window(&self, sensor: usize) -> Result<Option<Vec<f64>>, StreamError> {
        let mut out = vec![0.0; self.w];
        Ok(self.window_into(sensor, &mut out)?.then_some(out))
    }

    /// Copies the window into `out` (length `w`); returns `false` if incomplete.
    pub fn window_into(&self, sensor: usize, out: &mut [f64]) -> Result<bool, StreamError> {
        if sensor >= self.n {
            return Err(StreamError::Index {
                index: sensor,
                n: self.n,
            });
        }
        if self.fill[sensor] < self.w {
            return Ok(false);
        }
        let slot = &self.data[sensor * self.w..(sensor + 1) * self.w];
        let (newer, older) = slot.split_at(self.head[sensor]);
        out[..older.len()].copy_from_slice(older);
        out[older.len()..].copy_from_slice(newer);
        Ok(true)
    }
}

/// Parses the `t,s1,...,sN` stream format. Empty cells are missing readings;
/// anything else that is not a number is an error.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<ObservationFrame>, StreamError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| StreamError::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.len() < 2 || &headers[0] != "t" {
        return Err(StreamError::Csv {
            line: 1,
            message: "header must be `t,s1,...,sN`".into(),
        });
    }
    let n = headers.len() - 1;
    let mut frames = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| StreamError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| StreamError::Csv { line, message };
        let t: u64 = record[0]
            .parse()
            .map_err(|_| bad(format!("invalid tick `{}`", &record[0])))?;
        let mut values = Vec::with_capacity(n);
        let mut missing = BTreeSet::new();
        for (i, cell) in record.iter().skip(1).enumerate() {
            if cell.is_empty() {
                missing.insert(i);
                values.push(0.0);
            } else {
                let x: f64 = cell
                    .parse()
                    .map_err(|_| bad(format!("non-numeric cell `{cell}` in column {}", i + 1)))?;
                if !x.is_finite() {
                    return Err(bad(format!("non-finite cell `{cell}` in column {}", i + 1)));
                }
                values.push(x);
            }
        }
        frames.push(ObservationFrame { t, values, missing });
    }
    Ok(frames)
}

/// Writes frames in the format accepted by [`read_csv`]. Floats use the
/// shortest round-trip representation.
pub fn write_csv<W: std::io::Write>(
    writer: W,
    frames: impl IntoIterator<Item = ObservationFrame>,
    n: usize,
) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("s{i}")));
    wtr.write_record(&header)?;
    let mut row = Vec::with_capacity(n + 1);
    for frame in frames {
        row.clear();
        row.push(frame.t.to_string());
        for (i, x) in frame.values.iter().enumerate() {
            row.push(if frame.is_missing(i) {
                String::new()
            } else {
                x.to_string()
            });
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
