use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Iterations (EP / quadratic) or alternations (ULTRA).
    pub outer_iters: usize,
    /// Image iterations per ULTRA alternation.
    #[serde(default = "default_inner")]
    pub inner_iters: usize,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub mu: f64,
    /// ULTRA sparsity threshold.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Over-relaxation α in [1, 2).
    #[serde(default = "default_relaxation")]
    pub relaxation: f64,
    /// Upper bound on λmax(AᵀWA); estimated by power iteration when absent.
    #[serde(default)]
    pub majorizer_norm: Option<f64>,
    #[serde(default = "default_margin")]
    pub norm_margin: f64,
    #[serde(default = "default_norm_iters")]
    pub norm_iters: usize,
    /// Stop early once the relative cost change falls below this (0 = off).
    #[serde(default)]
    pub tolerance: f64,
}

fn default_inner() -> usize {
    5
}
fn default_gamma() -> f64 {
    20.0
}
fn default_relaxation() -> f64 {
    1.999
}
fn default_margin() -> f64 {
    1.1
}
fn default_norm_iters() -> usize {
    30
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            outer_iters: 20,
            inner_iters: default_inner(),
            beta: 0.0,
            mu: 0.0,
            gamma: default_gamma(),
            relaxation: default_relaxation(),
            majorizer_norm: None,
            norm_margin: default_margin(),
            norm_iters: default_norm_iters(),
            tolerance: 0.0,
        }
    }
}

impl SolveConfig {
    pub fn with_iters(outer: usize, inner: usize) -> Self {
        SolveConfig {
            outer_iters: outer,
            inner_iters: inner,
            ..Default::default()
        }
    }

    pub fn validate(&self, ultra: bool) -> Result<()> {
        if self.outer_iters == 0 {
            return Err(Error::arg("outer_iters must be at least 1"));
        }
        if ultra && self.inner_iters == 0 {
            return Err(Error::arg("inner_iters must be at least 1"));
        }
        if !(self.beta >= 0.0 && self.mu >= 0.0) || !self.beta.is_finite() || !self.mu.is_finite() {
            return Err(Error::arg("beta and mu must be finite and nonnegative"));
        }
        if ultra && !(self.gamma >= 0.0) {
            return Err(Error::arg("gamma must be nonnegative"));
        }
        if !(1.0..2.0).contains(&self.relaxation) {
            return Err(Error::arg("relaxation must lie in [1, 2)"));
        }
        if let Some(n) = self.majorizer_norm {
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::arg("majorizer_norm must be positive"));
            }
        }
        if !(self.norm_margin >= 1.0) || self.norm_iters == 0 {
            return Err(Error::arg("norm_margin must be ≥ 1 and norm_iters ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveTrace {
    pub initial_cost: f64,
    /// Cost after each outer iteration (ULTRA: after each alternation).
    pub costs: Vec<f64>,
    /// Cumulative wall time at each entry of `costs`.
    pub seconds: Vec<f64>,
    /// Cost after every image iteration, ULTRA inner steps included.
    pub inner_costs: Vec<f64>,
    /// Steps that fell back to a plain majorize-minimize update.
    pub restarts: usize,
    pub majorizer_norm: f64,
}

impl SolveTrace {
    pub fn iterations(&self) -> usize {
        self.costs.len()
    }

    pub fn final_cost(&self) -> f64 {
        self.costs.last().copied().unwrap_or(self.initial_cost)
    }

    /// `iteration,cost,seconds`, with iteration 0 the initial cost.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "cost", "seconds"])?;
        w.write_record([
            "0".to_string(),
            format!("{:e}", self.initial_cost),
            "0".to_string(),
        ])?;
        for (i, (c, s)) in self.costs.iter().zip(&self.seconds).enumerate() {
            w.write_record([(i + 1).to_string(), format!("{c:e}"), format!("{s:.6}")])?;
        }
        w.flush()
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f).map_err(|e| Error::io(path, e))
    }
}
