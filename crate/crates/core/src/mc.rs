//! Heat-bath Monte Carlo engine for boxes beyond enumeration reach.
//!
//! Single-site Glauber updates in checkerboard order; frozen spins are never
//! touched. Chains run independently with per-chain RNG streams derived from
//! (seed, chain index), so results are deterministic given the seed and the
//! chain merge is a fixed-order fold. Nonlinear functionals (log-means,
//! log-ratios) use jackknife over 32 pooled blocks; linear expectations use
//! batch means over chains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimate::{EngineKind, Estimate};
use crate::exact::{BoxProblem, Boundary};
use crate::lattice::{LayerConfig, LayerInterval, Site2D, Spin, MINUS, PLUS};
use crate::observable::Observable;

pub const JACKKNIFE_BLOCKS: usize = 32;

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid MC config: {0}")]
    Invalid(String),
    #[error("observable support outside box: {0:?}")]
    SupportOutsideBox(Site2D),
    #[error("log-ratio requires strictly positive observables")]
    NotPositive,
    #[error("too few samples: {got} < {want}")]
    TooFewSamples { got: usize, want: usize },
    #[error("degenerate denominator in log-ratio")]
    DegenerateDenominator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub sweeps: u64,
    pub burn_in: u64,
    pub chains: u32,
    pub seed: u64,
    pub thinning: u64,
}

impl McConfig {
    pub fn new(sweeps: u64, burn_in: u64, chains: u32, seed: u64) -> Self {
        McConfig {
            sweeps,
            burn_in,
            chains,
            seed,
            thinning: 1,
        }
    }

    pub fn with_thinning(mut self, t: u64) -> Self {
        self.thinning = t;
        self
    }

    pub fn validate(&self) -> Result<(), McError> {
        if self.burn_in >= self.sweeps {
            return Err(McError::Invalid(format!(
                "burn_in {} must be < sweeps {}",
                self.burn_in, self.sweeps
            )));
        }
        if self.chains < 2 {
            return Err(McError::Invalid("need at least 2 chains".into()));
        }
        if self.thinning == 0 {
            return Err(McError::Invalid("thinning must be >= 1".into()));
        }
        Ok(())
    }

    pub fn samples_per_chain(&self) -> usize {
        ((self.sweeps - self.burn_in).div_ceil(self.thinning)) as usize
    }
}

fn chain_seed(seed: u64, chain: u32) -> u64 {
    // splitmix64 finalizer over (seed, chain) so chain streams are unrelated.
    let mut z = seed ^ (chain as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Current box state exposed to sample visitors.
pub struct Grid {
    n: i32,
    w: usize,
    spins: Vec<i8>,
}

impl Grid {
    fn idx(&self, s: Site2D) -> usize {
        ((s.y + self.n) as usize) * self.w + (s.x + self.n) as usize
    }

    pub fn spin(&self, s: Site2D) -> Spin {
        self.spins[self.idx(s)]
    }

    pub fn layer_config(&self) -> LayerConfig {
        let window = LayerInterval::new(-self.n, self.n).unwrap();
        let values = (-self.n..=self.n)
            .map(|x| self.spin(Site2D::layer(x)))
            .collect();
        LayerConfig::new(window, values, PLUS).unwrap()
    }
}

/// Precomputed update machinery for one BoxProblem.
struct Sim {
    n: i32,
    w: usize,
    init: Vec<i8>,
    /// Free sites in checkerboard order: all even-parity then all odd-parity.
    order: Vec<u32>,
    /// Up to 4 in-box neighbor indices per site (u32::MAX padding).
    nbrs: Vec<[u32; 4]>,
    /// Static field per site: boundary-spin contributions.
    bfield: Vec<i8>,
    /// Heat-bath P(+) indexed by local field S + 4, S in [-4, 4].
    p_plus: [f64; 9],
}

impl Sim {
    fn new(p: &BoxProblem) -> Sim {
        let n = p.n;
        let w = (2 * n + 1) as usize;
        let idx = |s: Site2D| ((s.y + n) as usize) * w + (s.x + n) as usize;
        let bspin = match p.boundary {
            Boundary::Plus => Some(1i8),
            Boundary::Minus => Some(-1i8),
            Boundary::Free => None,
        };

        let mut init = vec![0i8; w * w];
        let mut nbrs = vec![[u32::MAX; 4]; w * w];
        let mut bfield = vec![0i8; w * w];
        let mut even = Vec::new();
        let mut odd = Vec::new();
        for s in p.sites() {
            let i = idx(s);
            init[i] = p.frozen_spin(s).unwrap_or_else(|| bspin.unwrap_or(PLUS));
            let mut k = 0;
            for t in s.neighbors() {
                if p.in_box(t) {
                    nbrs[i][k] = idx(t) as u32;
                    k += 1;
                } else if let Some(b) = bspin {
                    bfield[i] += b;
                }
            }
            if p.frozen_spin(s).is_none() {
                if (s.x + s.y).rem_euclid(2) == 0 {
                    even.push(i as u32);
                } else {
                    odd.push(i as u32);
                }
            }
        }
        even.extend(odd);

        let mut p_plus = [0.0f64; 9];
        for (si, slot) in p_plus.iter_mut().enumerate() {
            let s = si as f64 - 4.0;
            *slot = 1.0 / (1.0 + (-2.0 * (p.beta * s + p.h)).exp());
        }

        Sim {
            n,
            w,
            init,
            order: even,
            nbrs,
            bfield,
            p_plus,
        }
    }

    fn initial_grid(&self) -> Grid {
        Grid {
            n: self.n,
            w: self.w,
            spins: self.init.clone(),
        }
    }

    #[inline]
    fn sweep(&self, g: &mut Grid, rng: &mut ChaCha8Rng) {
        for &iu in &self.order {
            let i = iu as usize;
            let mut s = self.bfield[i] as i32;
            for &j in &self.nbrs[i] {
                if j != u32::MAX {
                    s += g.spins[j as usize] as i32;
                }
            }
            let p = self.p_plus[(s + 4) as usize];
            g.spins[i] = if rng.gen::<f64>() < p { PLUS } else { MINUS };
        }
    }

    fn run_chain<R, F: Fn(&Grid) -> R>(&self, c: &McConfig, chain: u32, f: &F) -> Vec<R> {
        let mut rng = ChaCha8Rng::seed_from_u64(chain_seed(c.seed, chain));
        let mut g = self.initial_grid();
        let mut out = Vec::with_capacity(c.samples_per_chain());
        for sweep in 0..c.sweeps {
            self.sweep(&mut g, &mut rng);
            if sweep >= c.burn_in && (sweep - c.burn_in) % c.thinning == 0 {
                out.push(f(&g));
            }
        }
        out
    }
}

/// Per-chain sample vectors (chains in index order).
pub fn collect_samples<R, F>(p: &BoxProblem, c: &McConfig, f: F) -> Result<Vec<Vec<R>>, McError>
where
    R: Send,
    F: Fn(&Grid) -> R + Sync,
{
    c.validate()?;
    let sim = Sim::new(p);
    Ok((0..c.chains)
        .into_par_iter()
        .map(|chain| sim.run_chain(c, chain, &f))
        .collect())
}

/// Layer rows of box samples under plus boundary conditions, all chains
/// pooled in chain order.
pub fn sample_layer(beta: f64, h: f64, n: i32, c: &McConfig) -> Result<Vec<LayerConfig>, McError> {
    let p = BoxProblem::new(n, beta, h, Boundary::Plus);
    let per_chain = collect_samples(&p, c, |g| g.layer_config())?;
    Ok(per_chain.into_iter().flatten().collect())
}

fn check_support(p: &BoxProblem, f: &Observable) -> Result<(), McError> {
    for site in f.support() {
        if !p.in_box(site) {
            return Err(McError::SupportOutsideBox(site));
        }
    }
    Ok(())
}

/// Whether the joint expectation of the given observables factorizes after
/// conditioning on every other spin: all factor sites must be free, distinct,
/// and pairwise non-interacting. When this holds, each sample can contribute
/// the exact single-site conditional mean instead of the raw factor value
/// (Rao–Blackwellization), which is unbiased and strictly reduces variance.
fn conditional_means_apply(p: &BoxProblem, obs: &[&Observable]) -> bool {
    let mut sites: Vec<Site2D> = Vec::new();
    for o in obs {
        for f in &o.factors {
            sites.push(f.site);
        }
    }
    for (i, a) in sites.iter().enumerate() {
        if p.frozen_spin(*a).is_some() {
            return false;
        }
        for b in &sites[i + 1..] {
            if a == b || a.neighbors().contains(b) {
                return false;
            }
        }
    }
    true
}

/// E[factor | all other spins] via the heat-bath conditional at its site.
fn conditional_mean(p: &BoxProblem, g: &Grid, f: &crate::observable::SiteFactor) -> f64 {
    let mut field = 0.0;
    for t in f.site.neighbors() {
        field += if p.in_box(t) {
            g.spin(t) as f64
        } else {
            match p.boundary {
                Boundary::Plus => 1.0,
                Boundary::Minus => -1.0,
                Boundary::Free => 0.0,
            }
        };
    }
    let p_plus = 1.0 / (1.0 + (-2.0 * (p.beta * field + p.h)).exp());
    p_plus * f.plus + (1.0 - p_plus) * f.minus
}

fn conditional_product(p: &BoxProblem, g: &Grid, f: &Observable) -> f64 {
    f.factors.iter().map(|sf| conditional_mean(p, g, sf)).product()
}

/// Potential scale reduction factor over split chains; < 1.05 accepts.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut seqs: Vec<&[f64]> = Vec::new();
    for c in chains {
        let half = c.len() / 2;
        seqs.push(&c[..half]);
        seqs.push(&c[half..]);
    }
    let n = seqs.iter().map(|s| s.len()).min().unwrap_or(0);
    if n < 2 {
        return f64::INFINITY;
    }
    let seqs: Vec<&[f64]> = seqs.iter().map(|s| &s[..n]).collect();
    let m = seqs.len() as f64;
    let means: Vec<f64> = seqs
        .iter()
        .map(|s| s.iter().sum::<f64>() / n as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n as f64 / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let wvar = seqs
        .iter()
        .zip(&means)
        .map(|(s, mu)| s.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n as f64 - 1.0))
        .sum::<f64>()
        / m;
    if wvar == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let vp = (n as f64 - 1.0) / n as f64 * wvar + b / n as f64;
    (vp / wvar).sqrt()
}

/// Jackknife over contiguous blocks for a statistic of pooled sums.
/// `stat(sums, count)` maps total sums to the estimate.
fn jackknife<const K: usize>(
    samples: &[[f64; K]],
    blocks: usize,
    stat: impl Fn(&[f64; K], f64) -> f64,
) -> Result<(f64, f64), McError> {
    let n = samples.len();
    if n < blocks {
        return Err(McError::TooFewSamples { got: n, want: blocks });
    }
    let mut block_sums = vec![[0.0f64; K]; blocks];
    let mut block_counts = vec![0usize; blocks];
    for (i, s) in samples.iter().enumerate() {
        let b = i * blocks / n;
        for k in 0..K {
            block_sums[b][k] += s[k];
        }
        block_counts[b] += 1;
    }
    let mut total = [0.0f64; K];
    for bs in &block_sums {
        for k in 0..K {
            total[k] += bs[k];
        }
    }
    let theta = stat(&total, n as f64);
    let loo: Vec<f64> = (0..blocks)
        .map(|b| {
            let mut t = total;
            for k in 0..K {
                t[k] -= block_sums[b][k];
            }
            stat(&t, (n - block_counts[b]) as f64)
        })
        .collect();
    let bn = blocks as f64;
    let mean_loo = loo.iter().sum::<f64>() / bn;
    let var = loo.iter().map(|x| (x - mean_loo).powi(2)).sum::<f64>() * (bn - 1.0) / bn;
    // Bias-corrected jackknife point estimate.
    let value = bn * theta - (bn - 1.0) * mean_loo;
    Ok((value, var.sqrt()))
}

pub struct McEngine {
    pub config: McConfig,
}

impl McEngine {
    pub fn new(config: McConfig) -> Self {
        McEngine { config }
    }

    /// Batch-mean estimate over chains.
    pub fn estimate_expectation(
        &self,
        p: &BoxProblem,
        f: &Observable,
    ) -> Result<Estimate, McError> {
        check_support(p, f)?;
        let per_chain = collect_samples(p, &self.config, |g| f.eval(|s| g.spin(s)))?;
        let means: Vec<f64> = per_chain
            .iter()
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        let m = means.len() as f64;
        let mean = means.iter().sum::<f64>() / m;
        let var = means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let n_total: u64 = per_chain.iter().map(|c| c.len() as u64).sum();
        Ok(Estimate::mc(
            mean,
            (var / m).sqrt(),
            n_total,
            self.config.seed,
        ))
    }

    /// ln E[f] with jackknife error, f > 0 pointwise.
    pub fn estimate_log_mean(&self, p: &BoxProblem, f: &Observable) -> Result<Estimate, McError> {
        check_support(p, f)?;
        if !f.is_positive() {
            return Err(McError::NotPositive);
        }
        let rb = conditional_means_apply(p, &[f]);
        let per_chain = collect_samples(p, &self.config, |g| {
            if rb {
                [conditional_product(p, g, f)]
            } else {
                [f.eval(|s| g.spin(s))]
            }
        })?;
        let pooled: Vec<[f64; 1]> = per_chain.into_iter().flatten().collect();
        let n_total = pooled.len() as u64;
        let (value, stderr) = jackknife(&pooled, JACKKNIFE_BLOCKS, |t, n| (t[0] / n).ln())?;
        Ok(Estimate::mc(value, stderr, n_total, self.config.seed))
    }

    /// ln( E[f·g] / (E[f]·E[g]) ) with jackknife error.
    pub fn estimate_log_ratio(
        &self,
        p: &BoxProblem,
        f: &Observable,
        g: &Observable,
    ) -> Result<Estimate, McError> {
        check_support(p, f)?;
        check_support(p, g)?;
        if !f.is_positive() || !g.is_positive() {
            return Err(McError::NotPositive);
        }
        // Conditionally on the rest of the box, f and g are independent when
        // their sites do not interact, so E[fg|rest] = E[f|rest]·E[g|rest]
        // and all three sequences can be Rao–Blackwellized at once.
        let rb = conditional_means_apply(p, &[f, g]);
        let per_chain = collect_samples(p, &self.config, |gr| {
            let (fv, gv) = if rb {
                (conditional_product(p, gr, f), conditional_product(p, gr, g))
            } else {
                (f.eval(|s| gr.spin(s)), g.eval(|s| gr.spin(s)))
            };
            [fv * gv, fv, gv]
        })?;
        let pooled: Vec<[f64; 3]> = per_chain.into_iter().flatten().collect();
        let n_total = pooled.len() as u64;
        if pooled.iter().any(|t| t[1] <= 0.0 || t[2] <= 0.0) {
            return Err(McError::DegenerateDenominator);
        }
        let (value, stderr) = jackknife(&pooled, JACKKNIFE_BLOCKS, |t, n| {
            (t[0] / n).ln() - (t[1] / n).ln() - (t[2] / n).ln()
        })?;
        Ok(Estimate::mc(value, stderr, n_total, self.config.seed))
    }

    /// E[fg] − E[f]E[g] with jackknife error over blocks.
    pub fn estimate_covariance(
        &self,
        p: &BoxProblem,
        f: &Observable,
        g: &Observable,
    ) -> Result<Estimate, McError> {
        check_support(p, f)?;
        check_support(p, g)?;
        let per_chain = collect_samples(p, &self.config, |gr| {
            let fv = f.eval(|s| gr.spin(s));
            let gv = g.eval(|s| gr.spin(s));
            [fv * gv, fv, gv]
        })?;
        let pooled: Vec<[f64; 3]> = per_chain.into_iter().flatten().collect();
        let n_total = pooled.len() as u64;
        let (value, stderr) = jackknife(&pooled, JACKKNIFE_BLOCKS, |t, n| {
            t[0] / n - (t[1] / n) * (t[2] / n)
        })?;
        Ok(Estimate::mc(value, stderr, n_total, self.config.seed))
    }

    /// MC conditional layer kernel: freeze the layer to omega off `v`, leave
    /// `v` free, and estimate the probability the free sites hit `sigma_v`.
    pub fn layer_kernel(
        &self,
        v: &[i32],
        sigma_v: &[Spin],
        omega: &LayerConfig,
        n: i32,
        beta: f64,
        h: f64,
    ) -> Result<Estimate, McError> {
        assert_eq!(v.len(), sigma_v.len());
        if let Some(&site) = v.iter().find(|&&i| i.abs() > n) {
            return Err(McError::SupportOutsideBox(Site2D::layer(site)));
        }
        let window = LayerInterval::new(-n, n).unwrap();
        let values: Vec<Spin> = window.sites().map(|i| omega.spin(i)).collect();
        let cfg = LayerConfig::new(window, values, PLUS).unwrap();
        let kept: std::collections::BTreeSet<i32> =
            window.sites().filter(|i| !v.contains(i)).collect();
        // The box boundary continues ω's fill: a conditioning configuration
        // pinned to −1 beyond its window is approximated by the minus state.
        let boundary = if omega.fill == PLUS {
            Boundary::Plus
        } else {
            Boundary::Minus
        };
        let p = BoxProblem::new(n, beta, h, boundary).with_masked_layer(cfg, kept);
        let target = Observable::product(
            v.iter()
                .zip(sigma_v)
                .map(|(&i, &s)| Observable::indicator(Site2D::layer(i), s)),
        );
        self.estimate_expectation(&p, &target)
    }
}

impl crate::engine::KernelEngine for McEngine {
    fn kind(&self) -> EngineKind {
        EngineKind::Mc
    }

    fn expectation(
        &self,
        p: &BoxProblem,
        f: &Observable,
    ) -> Result<Estimate, crate::engine::EngineError> {
        Ok(McEngine::estimate_expectation(self, p, f)?)
    }

    fn log_mean(
        &self,
        p: &BoxProblem,
        f: &Observable,
    ) -> Result<Estimate, crate::engine::EngineError> {
        Ok(McEngine::estimate_log_mean(self, p, f)?)
    }

    fn log_ratio(
        &self,
        p: &BoxProblem,
        f: &Observable,
        g: &Observable,
    ) -> Result<Estimate, crate::engine::EngineError> {
        Ok(McEngine::estimate_log_ratio(self, p, f, g)?)
    }

    fn covariance(
        &self,
        p: &BoxProblem,
        f: &Observable,
        g: &Observable,
    ) -> Result<Estimate, crate::engine::EngineError> {
        Ok(McEngine::estimate_covariance(self, p, f, g)?)
    }

    fn layer_kernel(
        &self,
        q: &crate::engine::KernelQuery,
    ) -> Result<Estimate, crate::engine::EngineError> {
        Ok(McEngine::layer_kernel(
            self, &q.v, &q.sigma_v, &q.omega, q.n, q.beta, q.h,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::ExactEngine;

    fn cfg(sweeps: u64, seed: u64) -> McConfig {
        McConfig::new(sweeps, sweeps / 10, 4, seed)
    }

    #[test]
    fn config_validation() {
        assert!(McConfig::new(10, 20, 4, 1).validate().is_err());
        assert!(McConfig::new(10, 2, 1, 1).validate().is_err());
        assert!(McConfig::new(10, 2, 2, 1).with_thinning(0).validate().is_err());
        assert!(McConfig::new(10, 2, 2, 1).validate().is_ok());
    }

    #[test]
    fn beta_zero_mean_is_zero() {
        let eng = McEngine::new(cfg(4000, 7));
        let p = BoxProblem::new(2, 0.0, 0.0, Boundary::Free);
        let e = eng
            .estimate_expectation(&p, &Observable::spin(Site2D::new(0, 0)))
            .unwrap();
        assert!(e.value.abs() < 4.0 * e.stderr, "{} vs {}", e.value, e.stderr);
    }

    #[test]
    fn conditional_mean_matches_heat_bath_average() {
        // On a frozen-layer box the site (0, 1) sees three grid neighbors and
        // the layer spin below; the conditional mean must equal the two-point
        // heat-bath average at that field.
        let w = LayerInterval::new(-2, 2).unwrap();
        let p = BoxProblem::new(2, 0.6, 0.2, Boundary::Plus)
            .with_frozen_layer(LayerConfig::alternating(w));
        let sim = Sim::new(&p);
        let g = sim.initial_grid();
        let fac = crate::observable::SiteFactor {
            site: Site2D::new(0, 1),
            plus: 3.0,
            minus: 0.5,
        };
        let field: f64 = fac
            .site
            .neighbors()
            .iter()
            .map(|&t| if p.in_box(t) { g.spin(t) as f64 } else { 1.0 })
            .sum();
        let pp = 1.0 / (1.0 + (-2.0 * (0.6 * field + 0.2)).exp());
        let want = pp * 3.0 + (1.0 - pp) * 0.5;
        assert!((conditional_mean(&p, &g, &fac) - want).abs() < 1e-14);
    }

    #[test]
    fn conditional_means_eligibility() {
        let w = LayerInterval::new(-2, 2).unwrap();
        let p = BoxProblem::new(2, 0.5, 0.0, Boundary::Plus)
            .with_frozen_layer(LayerConfig::all_minus(w));
        let a = Observable::exp_coupling(Site2D::new(-2, 1), 0.5);
        let b = Observable::exp_coupling(Site2D::new(0, 1), 0.5);
        let adj = Observable::exp_coupling(Site2D::new(-1, 1), 0.5);
        let frozen = Observable::exp_coupling(Site2D::new(0, 0), 0.5);
        assert!(conditional_means_apply(&p, &[&a, &b]));
        assert!(!conditional_means_apply(&p, &[&a, &adj]));
        assert!(!conditional_means_apply(&p, &[&a, &a]));
        assert!(!conditional_means_apply(&p, &[&frozen]));
    }

    #[test]
    fn conditional_means_agree_with_exact_log_ratio() {
        // Rao–Blackwellized estimates must stay unbiased: compare against the
        // enumerated value for a non-adjacent pair on a small box.
        let w = LayerInterval::new(-2, 2).unwrap();
        let p = BoxProblem::new(2, 0.6, 0.0, Boundary::Plus)
            .with_frozen_layer(LayerConfig::all_minus(w));
        let f = Observable::exp_coupling(Site2D::new(-1, 1), 0.6);
        let g = Observable::exp_coupling(Site2D::new(1, 1), 0.6);
        let exact = ExactEngine::default().log_ratio(&p, &f, &g).unwrap();
        let eng = McEngine::new(cfg(20000, 31));
        assert!(conditional_means_apply(&p, &[&f, &g]));
        let mc = eng.estimate_log_ratio(&p, &f, &g).unwrap();
        assert!(
            (mc.value - exact.value).abs() < 4.0 * mc.stderr,
            "{} vs {} ± {}",
            mc.value,
            exact.value,
            mc.stderr
        );
    }

    #[test]
    fn frozen_spins_never_move() {
        let w = LayerInterval::new(-2, 2).unwrap();
        let p = BoxProblem::new(2, 0.4, 0.0, Boundary::Plus)
            .with_frozen_layer(LayerConfig::alternating(w));
        let per_chain = collect_samples(&p, &cfg(200, 3), |g| {
            (-2..=2).all(|i| {
                g.spin(Site2D::layer(i)) == LayerConfig::alternating(w).spin(i)
            })
        })
        .unwrap();
        assert!(per_chain.iter().flatten().all(|&ok| ok));
    }

    #[test]
    fn seed_determinism() {
        let p = BoxProblem::new(2, 0.5, 0.1, Boundary::Plus);
        let f = |g: &Grid| g.spin(Site2D::new(0, 0)) as i64;
        let a = collect_samples(&p, &cfg(500, 42), f).unwrap();
        let b = collect_samples(&p, &cfg(500, 42), f).unwrap();
        let c = collect_samples(&p, &cfg(500, 43), f).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn occupation_matches_exact_distribution() {
        // n=1 box with frozen layer: 6 free spins, 64 states. Compare chain
        // occupation frequencies against exact probabilities.
        let w = LayerInterval::new(-1, 1).unwrap();
        let p = BoxProblem::new(1, 0.4, 0.0, Boundary::Plus)
            .with_frozen_layer(LayerConfig::all_minus(w));
        let free: Vec<Site2D> = (-1..=1)
            .flat_map(|x| [Site2D::new(x, -1), Site2D::new(x, 1)])
            .collect();
        let exact = ExactEngine::default();
        let obs: Vec<Observable> = (0u32..64)
            .map(|m| {
                Observable::product(free.iter().enumerate().map(|(b, &s)| {
                    Observable::indicator(s, if m >> b & 1 == 1 { PLUS } else { MINUS })
                }))
            })
            .collect();
        let probs = exact.expectations(&p, &obs).unwrap();

        let c = McConfig::new(250_000, 2_000, 4, 11);
        let per_chain = collect_samples(&p, &c, |g| {
            let mut m = 0u32;
            for (b, &s) in free.iter().enumerate() {
                if g.spin(s) == PLUS {
                    m |= 1 << b;
                }
            }
            m
        })
        .unwrap();
        let mut counts = [0u64; 64];
        let mut total = 0u64;
        for m in per_chain.into_iter().flatten() {
            counts[m as usize] += 1;
            total += 1;
        }
        let tv: f64 = (0..64)
            .map(|i| (counts[i] as f64 / total as f64 - probs[i]).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "total variation {tv}");
    }

    #[test]
    fn layer_uniform_at_beta_zero() {
        // Chi-square goodness of fit for P(+)=1/2 per layer site.
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let c = McConfig::new(6_000, 500, 4, 5).with_thinning(4);
        let samples = sample_layer(0.0, 0.0, 2, &c).unwrap();
        let n = samples.len() as f64;
        let mut stat = 0.0;
        for i in -2..=2 {
            let plus = samples.iter().filter(|s| s.spin(i) == PLUS).count() as f64;
            let e = n / 2.0;
            stat += (plus - e).powi(2) / e + ((n - plus) - e).powi(2) / e;
        }
        let p_value = 1.0 - ChiSquared::new(5.0).unwrap().cdf(stat);
        assert!(p_value > 1e-3, "chi2={stat}");
    }

    #[test]
    fn magnetized_layer_at_large_beta() {
        let c = McConfig::new(3_000, 500, 4, 9);
        let samples = sample_layer(1.2, 0.0, 8, &c).unwrap();
        let mean: f64 = samples
            .iter()
            .map(|s| {
                (-8..=8).map(|i| s.spin(i) as f64).sum::<f64>() / 17.0
            })
            .sum::<f64>()
            / samples.len() as f64;
        assert!(mean > 0.9, "layer magnetization {mean}");
    }

    #[test]
    fn cross_engine_expectation_and_log_ratio() {
        let exact = ExactEngine::default();
        let w = LayerInterval::new(-2, 2).unwrap();
        let p = BoxProblem::new(2, 0.6, 0.0, Boundary::Plus)
            .with_frozen_layer(LayerConfig::all_minus(w));
        let f = Observable::exp_coupling(Site2D::new(-1, 1), 0.6);
        let g = Observable::exp_coupling(Site2D::new(1, 1), 0.6);

        let mc = McEngine::new(McConfig::new(60_000, 5_000, 4, 17));
        let em = mc.estimate_expectation(&p, &f).unwrap();
        let ev = exact.expectation(&p, &f).unwrap().value;
        assert!((em.value - ev).abs() < 4.0 * em.stderr, "{} vs {ev}", em.value);

        let lm = mc.estimate_log_ratio(&p, &f, &g).unwrap();
        let lv = exact.log_ratio(&p, &f, &g).unwrap().value;
        assert!((lm.value - lv).abs() < 4.0 * lm.stderr, "{} vs {lv}", lm.value);
    }

    #[test]
    fn mc_layer_kernel_matches_exact() {
        let exact = ExactEngine::default();
        let w = LayerInterval::new(-2, 2).unwrap();
        let omega = LayerConfig::alternating(w);
        let want = exact
            .layer_kernel(&[0], &[MINUS], &omega, 2, 0.5, 0.0)
            .unwrap();
        let mc = McEngine::new(McConfig::new(60_000, 5_000, 4, 23));
        let got = mc.layer_kernel(&[0], &[MINUS], &omega, 2, 0.5, 0.0).unwrap();
        assert!(
            (got.value - want).abs() < 4.0 * got.stderr,
            "{} vs {want}",
            got.value
        );
    }

    #[test]
    fn rhat_accepts_equilibrated_chains() {
        let p = BoxProblem::new(2, 0.5, 0.0, Boundary::Plus);
        let per_chain = collect_samples(&p, &McConfig::new(20_000, 2_000, 4, 31), |g| {
            g.spin(Site2D::new(0, 0)) as f64
        })
        .unwrap();
        let r = split_rhat(&per_chain);
        assert!(r < 1.05, "rhat {r}");
    }
}
