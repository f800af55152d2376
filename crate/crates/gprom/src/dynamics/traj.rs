//! Trajectory container and its on-disk formats.
//!
//! Trajectories are CSV files with a header row `t,<label1>,<label2>,...`,
//! one row per time, written with 17 significant digits. A JSON sidecar
//! (same path with extension `.meta.json`) records grid metadata, the noise
//! specification, and seeds.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::noise::NoiseSpec;
use crate::error::{Error, Result};

/// States of one system sampled on a strictly increasing time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// n_state x n_times.
    pub states: DMatrix<f64>,
    pub labels: Vec<String>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::EmptyTimeVector);
        }
        if states.ncols() != times.len() {
            return Err(Error::DimensionMismatch {
                context: "trajectory columns",
                expected: times.len(),
                found: states.ncols(),
            });
        }
        if labels.len() != states.nrows() {
            return Err(Error::DimensionMismatch {
                context: "trajectory labels",
                expected: states.nrows(),
                found: labels.len(),
            });
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        if times.iter().any(|t| !t.is_finite()) || states.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("trajectory contains non-finite values".into()));
        }
        Ok(Self {
            times,
            states,
            labels,
        })
    }

    /// Generic labels `q1..qn`.
    pub fn with_generic_labels(times: Vec<f64>, states: DMatrix<f64>) -> Result<Self> {
        let labels = (1..=states.nrows()).map(|i| format!("q{i}")).collect();
        Self::new(times, states, labels)
    }

    pub fn n_states(&self) -> usize {
        self.states.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// Columns whose times fall in `[t0, t1]` (inclusive), as a new trajectory.
    pub fn window(&self, t0: f64, t1: f64) -> Result<Self> {
        let idx: Vec<usize> = self
            .times
            .iter()
            .enumerate()
            .filter(|(_, &t)| t >= t0 - 1e-14 && t <= t1 + 1e-14)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            return Err(Error::EmptyTimeVector);
        }
        let times = idx.iter().map(|&i| self.times[i]).collect();
        let states = self.states.select_columns(&idx);
        Self::new(times, states, self.labels.clone())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push('t');
        for label in &self.labels {
            out.push(',');
            out.push_str(label);
        }
        out.push('\n');
        for (j, t) in self.times.iter().enumerate() {
            let _ = write!(out, "{t:.16e}");
            for i in 0..self.states.nrows() {
                let _ = write!(out, ",{:.16e}", self.states[(i, j)]);
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("{}: empty file", path.display())))?;
        let mut cols = header.split(',');
        if cols.next() != Some("t") {
            return Err(Error::Parse(format!(
                "{}: header must start with 't'",
                path.display()
            )));
        }
        let labels: Vec<String> = cols.map(str::to_string).collect();
        let n = labels.len();
        let mut times = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != n + 1 {
                return Err(Error::Parse(format!(
                    "{}:{}: expected {} fields, found {}",
                    path.display(),
                    lineno + 2,
                    n + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| {
                    Error::Parse(format!("{}:{}: bad number '{s}'", path.display(), lineno + 2))
                })
            };
            times.push(parse(fields[0])?);
            for f in &fields[1..] {
                values.push(parse(f)?);
            }
        }
        let m = times.len();
        let states = DMatrix::from_fn(n, m, |i, j| values[j * n + i]);
        Self::new(times, states, labels)
    }
}

/// Per-state observation sets with independent time grids (the
/// ODE-estimation data layout). On disk: CSV with header `state,t,value`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateObservations {
    pub labels: Vec<String>,
    pub times: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

impl StateObservations {
    pub fn n_states(&self) -> usize {
        self.labels.len()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("state,t,value\n");
        for (i, label) in self.labels.iter().enumerate() {
            for (t, v) in self.times[i].iter().zip(&self.values[i]) {
                let _ = writeln!(out, "{label},{t:.16e},{v:.16e}");
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some("state,t,value") => {}
            _ => {
                return Err(Error::Parse(format!(
                    "{}: expected header 'state,t,value'",
                    path.display()
                )))
            }
        }
        let mut labels: Vec<String> = Vec::new();
        let mut times: Vec<Vec<f64>> = Vec::new();
        let mut values: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Parse(format!(
                    "{}:{}: expected 3 fields",
                    path.display(),
                    lineno + 2
                )));
            }
            let idx = match labels.iter().position(|l| l == fields[0]) {
                Some(i) => i,
                None => {
                    labels.push(fields[0].to_string());
                    times.push(Vec::new());
                    values.push(Vec::new());
                    labels.len() - 1
                }
            };
            let parse = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| {
                    Error::Parse(format!("{}:{}: bad number '{s}'", path.display(), lineno + 2))
                })
            };
            times[idx].push(parse(fields[1])?);
            values[idx].push(parse(fields[2])?);
        }
        Ok(Self {
            labels,
            times,
            values,
        })
    }
}

/// Sidecar metadata stored next to trajectory CSVs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridMeta>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    /// Per-block nondimensionalization scales, when the stored data are scaled.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridMeta {
    pub n_x: usize,
    pub domain: (f64, f64),
}

impl TrajectoryMeta {
    /// The sidecar path for a trajectory CSV.
    pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
        csv_path.with_extension("meta.json")
    }

    pub fn write(&self, csv_path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(Self::sidecar_path(csv_path), text)?;
        Ok(())
    }

    pub fn read(csv_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(Self::sidecar_path(csv_path))?;
        Ok(serde_json::from_str(&text)?)
    }
}
