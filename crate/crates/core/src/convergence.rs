//! Typicality machinery for layer configurations: the running-average
//! lengths ℓ^{α,±}, membership in the good set Ω_U, absolute-convergence
//! sums, exponential decay fits with bootstrap confidence intervals, the
//! two-regime envelope check, and constrained covariance decay.
//!
//! Convention: the running average over a window of length k anchored at i
//! is the *plus density* (#plus)/k, compared against α·8/9 with "≥" by
//! default (a strictness flag switches to ">"). The all-plus configuration
//! has ℓ = 1, so length-1 windows are always defined.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::KernelEngine;
use crate::estimate::Estimate;
use crate::lattice::{LayerConfig, Site2D, PLUS};
use crate::observable::Observable;
use crate::potentials::{GibbsContext, PotentialError, PotentialTable};

#[derive(Debug, Error)]
pub enum ConvergenceError {
    #[error("alpha must satisfy 1 <= alpha < 9/8, got {0}")]
    BadAlpha(f64),
    #[error("decay faster than resolvable: all values below the noise floor")]
    BelowNoiseFloor,
    #[error("too few distinct lengths for a decay fit: {got} < {want}")]
    TooFewLengths { got: usize, want: usize },
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Plus,
    Minus,
}

/// ℓ^{α,dir}_i(ξ): the smallest n ≥ 1 such that every window of length
/// k ≥ n starting at i (towards the given direction, site i included)
/// has plus density meeting the threshold α·8/9.
pub fn ell(
    i: i32,
    xi: &LayerConfig,
    alpha: f64,
    direction: Direction,
    strict: bool,
) -> Result<u32, ConvergenceError> {
    if !(1.0..9.0 / 8.0).contains(&alpha) {
        return Err(ConvergenceError::BadAlpha(alpha));
    }
    let t = alpha * 8.0 / 9.0;
    let site = |k: u32| -> i32 {
        match direction {
            Direction::Plus => i + k as i32,
            Direction::Minus => i - k as i32,
        }
    };
    // Beyond the last minus in this direction the density only improves;
    // once k >= M/(1-t) (M = minus count) the condition holds forever.
    let span = match direction {
        Direction::Plus => (xi.window.k - i).max(0) as u32 + 1,
        Direction::Minus => (i - xi.window.j).max(0) as u32 + 1,
    };
    let mut minus_total = 0u32;
    for k in 0..span {
        if xi.spin(site(k)) != PLUS {
            minus_total += 1;
        }
    }
    let k_max = span.max((minus_total as f64 / (1.0 - t)).ceil() as u32 + 1);
    let ok = |plus: u32, k: u32| {
        let d = plus as f64 / k as f64;
        if strict {
            d > t
        } else {
            d >= t
        }
    };
    let mut plus_count = 0u32;
    let mut last_fail = 0u32;
    for k in 1..=k_max {
        if xi.spin(site(k - 1)) == PLUS {
            plus_count += 1;
        }
        if !ok(plus_count, k) {
            last_fail = k;
        }
    }
    Ok(last_fail + 1)
}

/// The ℓ values of one direction over a window of anchors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllProfile {
    pub alpha: f64,
    pub direction: Direction,
    pub strict: bool,
    pub values: BTreeMap<i32, u32>,
}

impl EllProfile {
    pub fn build(
        xi: &LayerConfig,
        alpha: f64,
        direction: Direction,
        strict: bool,
    ) -> Result<Self, ConvergenceError> {
        let mut values = BTreeMap::new();
        for i in xi.window.sites() {
            values.insert(i, ell(i, xi, alpha, direction, strict)?);
        }
        Ok(EllProfile {
            alpha,
            direction,
            strict,
            values,
        })
    }

    /// ℓ at an anchor; outside the window the plus fill gives 1.
    pub fn get(&self, i: i32) -> u32 {
        self.values.get(&i).copied().unwrap_or(1)
    }

    pub fn max(&self) -> u32 {
        self.values.values().copied().max().unwrap_or(1)
    }

    pub fn to_csv(rows: &[(&EllProfile, &EllProfile)]) -> String {
        let mut out = String::from("i,ell_plus,ell_minus\n");
        for (p, m) in rows {
            for (&i, &lp) in &p.values {
                out.push_str(&format!("{},{},{}\n", i, lp, m.get(i)));
            }
        }
        out
    }
}

/// Ω_U membership with witness profiles. Under plus fill every ℓ is finite,
/// so the verdict is always true and the content is the witness.
pub fn omega_u_member(
    xi: &LayerConfig,
    strict: bool,
) -> Result<(bool, EllProfile, EllProfile), ConvergenceError> {
    let plus = EllProfile::build(xi, 1.0, Direction::Plus, strict)?;
    let minus = EllProfile::build(xi, 1.0, Direction::Minus, strict)?;
    Ok((true, plus, minus))
}

/// Exponential decay fit |U| ≈ C e^{−λ·length} with bootstrap CI on λ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    pub c: f64,
    pub lambda: f64,
    /// 95% bootstrap percentile interval for λ.
    pub lambda_ci: (f64, f64),
    pub n_points: usize,
}

fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    (intercept, slope)
}

/// Fit ln|U| against interval length over table entries, optionally gated to
/// lengths beyond ℓ⁻ at the interval's right endpoint, dropping entries
/// below `noise_mult`·stderr.
pub fn decay_fit(
    table: &PotentialTable,
    gate: Option<&EllProfile>,
    noise_mult: f64,
    bootstrap_seed: u64,
) -> Result<DecayFit, ConvergenceError> {
    // Three distinct lengths is the minimum for an exponential fit with a
    // meaningful bootstrap interval; Monte Carlo noise floors rarely leave
    // more when the decay rate exceeds ~2 per site.
    const MIN_LENGTHS: usize = 3;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for e in &table.entries {
        let len = (e.k - e.j) as f64;
        if let Some(p) = gate {
            if (e.k - e.j) as u32 <= p.get(e.k) {
                continue;
            }
        }
        let v = e.value.value.abs();
        if v <= noise_mult * e.value.stderr || v == 0.0 {
            continue;
        }
        points.push((len, v.ln()));
    }
    if points.is_empty() {
        return Err(ConvergenceError::BelowNoiseFloor);
    }
    let mut lengths: Vec<i64> = points.iter().map(|p| p.0 as i64).collect();
    lengths.sort();
    lengths.dedup();
    if lengths.len() < MIN_LENGTHS {
        return Err(ConvergenceError::TooFewLengths {
            got: lengths.len(),
            want: MIN_LENGTHS,
        });
    }
    let (intercept, slope) = least_squares(&points);
    // Percentile bootstrap over points.
    let mut rng = ChaCha8Rng::seed_from_u64(bootstrap_seed);
    let mut lambdas: Vec<f64> = (0..1000)
        .map(|_| {
            let sample: Vec<(f64, f64)> = (0..points.len())
                .map(|_| points[rng.gen_range(0..points.len())])
                .collect();
            -least_squares(&sample).1
        })
        .filter(|l| l.is_finite())
        .collect();
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = lambdas[(lambdas.len() as f64 * 0.025) as usize];
    let hi = lambdas[((lambdas.len() as f64 * 0.975) as usize).min(lambdas.len() - 1)];
    Ok(DecayFit {
        c: intercept.exp(),
        lambda: -slope,
        lambda_ci: (lo, hi),
        n_points: points.len(),
    })
}

/// Partial absolute-convergence sum at anchor i — Σ |U(A)| over table
/// intervals containing i — plus an analytic tail bound from a decay fit:
/// intervals of length L > cutoff containing i number L+1, each bounded by
/// C e^{−λL}.
pub fn abs_convergence_sum(
    i: i32,
    table: &PotentialTable,
    cutoff: u32,
    fit: Option<&DecayFit>,
) -> (f64, Option<f64>) {
    let partial: f64 = table
        .entries
        .iter()
        .filter(|e| e.j <= i && i <= e.k && (e.k - e.j) as u32 <= cutoff)
        .map(|e| e.value.value.abs())
        .sum();
    let tail = fit.map(|f| {
        let mut t = 0.0;
        let mut len = cutoff as f64 + 1.0;
        loop {
            let term = (len + 1.0) * f.c * (-f.lambda * len).exp();
            t += term;
            if term < 1e-16 || len > 1e6 {
                break;
            }
            len += 1.0;
        }
        t
    });
    (partial, tail)
}

/// Two-regime envelope: |U([j,k])| must obey C1 within ℓ(k) and
/// C2·e^{−λ·len} beyond it. Returns the violating intervals.
pub fn check_hope_bound(
    table: &PotentialTable,
    profile: &EllProfile,
    c1: f64,
    c2: f64,
    lambda: f64,
) -> Vec<(i32, i32)> {
    let mut violations = Vec::new();
    for e in &table.entries {
        let m = (e.k - e.j) as u32;
        let bound = if m <= profile.get(e.k) {
            c1
        } else {
            c2 * (-lambda * m as f64).exp()
        };
        if e.value.value.abs() > bound {
            violations.push((e.j, e.k));
        }
    }
    violations
}

/// |{j ≥ i in the window: ℓ(j) ≥ j − i}|: the absolute-convergence count.
pub fn tata_count(i: i32, profile: &EllProfile) -> u32 {
    profile
        .values
        .iter()
        .filter(|(&j, &l)| j >= i && l as i64 >= (j - i) as i64)
        .count() as u32
}

/// Covariances cov(X(0,1), X(i,1)) for i = 1..=i_max under the constrained
/// measure with the layer frozen to ξ, and the smallest length beyond which
/// the fitted exponential envelope holds.
pub fn constrained_cov_decay(
    ctx: &GibbsContext,
    xi: &LayerConfig,
    i_max: i32,
    eng: &dyn KernelEngine,
) -> Result<Vec<Estimate>, ConvergenceError> {
    let p = ctx.constrained(xi);
    let f = Observable::spin(Site2D::new(0, 1));
    (1..=i_max)
        .map(|i| {
            let g = Observable::spin(Site2D::new(i, 1));
            eng.covariance(&p, &f, &g)
                .map_err(|e| ConvergenceError::Potential(e.into()))
        })
        .collect()
}
