//! Numerical estimates with provenance.
//!
//! Every real number produced by an engine carries its uncertainty, sample
//! count and the engine that produced it, so that downstream combinations
//! (sums of potentials, log-ratios, series) can propagate error bars.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Exact,
    Mc,
}

impl std::fmt::Display for EngineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EngineKind::Exact => write!(f, "exact"),
            EngineKind::Mc => write!(f, "mc"),
        }
    }
}

/// A numerically estimated real: value, standard error, provenance.
///
/// Exact-engine values have `stderr == 0.0` and `n_samples == 0`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub engine: EngineKind,
    pub seed: Option<u64>,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            stderr: 0.0,
            n_samples: 0,
            engine: EngineKind::Exact,
            seed: None,
        }
    }

    pub fn mc(value: f64, stderr: f64, n_samples: u64, seed: u64) -> Self {
        Estimate {
            value,
            stderr,
            n_samples,
            engine: EngineKind::Mc,
            seed: Some(seed),
        }
    }

    pub fn is_exact(&self) -> bool {
        self.engine == EngineKind::Exact
    }

    /// Scale by a deterministic constant.
    pub fn scaled(&self, c: f64) -> Self {
        Estimate {
            value: c * self.value,
            stderr: c.abs() * self.stderr,
            ..*self
        }
    }

    /// Shift by a deterministic constant.
    pub fn shifted(&self, c: f64) -> Self {
        Estimate {
            value: self.value + c,
            ..*self
        }
    }

    /// Sum of independent estimates; errors add in quadrature.
    pub fn sum<I: IntoIterator<Item = Estimate>>(terms: I) -> Self {
        let mut value = 0.0;
        let mut var = 0.0;
        let mut n = 0u64;
        let mut engine = EngineKind::Exact;
        let mut seed = None;
        for t in terms {
            value += t.value;
            var += t.stderr * t.stderr;
            n = n.max(t.n_samples);
            if t.engine == EngineKind::Mc {
                engine = EngineKind::Mc;
                seed = seed.or(t.seed);
            }
        }
        Estimate {
            value,
            stderr: var.sqrt(),
            n_samples: n,
            engine,
            seed,
        }
    }
}
