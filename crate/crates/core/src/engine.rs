//! Common evaluator contract shared by the exact-enumeration and Monte Carlo
//! engines: expectations, log-means, log-ratios, and the conditional layer
//! kernel. Potential formulas are written against this trait so they run on
//! either engine.

use thiserror::Error;

use crate::estimate::{EngineKind, Estimate};
use crate::exact::{BoxProblem, ExactEngine, ExactError};
use crate::lattice::{LayerConfig, Spin};
use crate::mc::McError;
use crate::observable::Observable;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error(transparent)]
    Mc(#[from] McError),
}

/// A conditional layer-kernel evaluation: the probability that the layer
/// equals `sigma_v` on the sites `v`, given it equals `omega` elsewhere, in
/// the plus-boundary box of size `n`.
#[derive(Debug, Clone)]
pub struct KernelQuery {
    pub v: Vec<i32>,
    pub sigma_v: Vec<Spin>,
    pub omega: LayerConfig,
    pub n: i32,
    pub beta: f64,
    pub h: f64,
}

pub trait KernelEngine: Sync {
    fn kind(&self) -> EngineKind;

    fn expectation(&self, p: &BoxProblem, f: &Observable) -> Result<Estimate, EngineError>;

    /// ln E[f], for strictly positive f.
    fn log_mean(&self, p: &BoxProblem, f: &Observable) -> Result<Estimate, EngineError>;

    /// ln( E[f·g] / (E[f]·E[g]) ), for strictly positive f, g.
    fn log_ratio(
        &self,
        p: &BoxProblem,
        f: &Observable,
        g: &Observable,
    ) -> Result<Estimate, EngineError>;

    /// E[fg] − E[f]E[g].
    fn covariance(
        &self,
        p: &BoxProblem,
        f: &Observable,
        g: &Observable,
    ) -> Result<Estimate, EngineError>;

    fn layer_kernel(&self, q: &KernelQuery) -> Result<Estimate, EngineError>;

    /// ln of the layer kernel. The default takes the log of `layer_kernel`
    /// with first-order error propagation; the exact engine overrides this
    /// to stay in the log domain for tiny probabilities.
    fn log_layer_kernel(&self, q: &KernelQuery) -> Result<Estimate, EngineError> {
        let e = self.layer_kernel(q)?;
        Ok(Estimate {
            value: e.value.ln(),
            stderr: if e.value > 0.0 {
                e.stderr / e.value
            } else {
                f64::INFINITY
            },
            ..e
        })
    }
}

impl KernelEngine for ExactEngine {
    fn kind(&self) -> EngineKind {
        EngineKind::Exact
    }

    fn expectation(&self, p: &BoxProblem, f: &Observable) -> Result<Estimate, EngineError> {
        Ok(ExactEngine::expectation(self, p, f)?)
    }

    fn log_mean(&self, p: &BoxProblem, f: &Observable) -> Result<Estimate, EngineError> {
        Ok(ExactEngine::log_mean(self, p, f)?)
    }

    fn log_ratio(
        &self,
        p: &BoxProblem,
        f: &Observable,
        g: &Observable,
    ) -> Result<Estimate, EngineError> {
        Ok(ExactEngine::log_ratio(self, p, f, g)?)
    }

    fn covariance(
        &self,
        p: &BoxProblem,
        f: &Observable,
        g: &Observable,
    ) -> Result<Estimate, EngineError> {
        Ok(ExactEngine::covariance(self, p, f, g)?)
    }

    fn layer_kernel(&self, q: &KernelQuery) -> Result<Estimate, EngineError> {
        Ok(Estimate::exact(ExactEngine::layer_kernel(
            self, &q.v, &q.sigma_v, &q.omega, q.n, q.beta, q.h,
        )?))
    }

    fn log_layer_kernel(&self, q: &KernelQuery) -> Result<Estimate, EngineError> {
        Ok(Estimate::exact(ExactEngine::log_layer_kernel(
            self, &q.v, &q.sigma_v, &q.omega, q.n, q.beta, q.h,
        )?))
    }
}
