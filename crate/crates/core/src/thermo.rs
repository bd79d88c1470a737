//! Thermodynamic functions on the layer: Hamiltonians with free and fixed
//! boundary conditions assembled from interval potentials, partition
//! functions and pressure, energy density by two routes, empirical entropy
//! and relative entropy, the variational gap, and qualitative probes of the
//! plus-phase restriction (minus-weight moments, Bernoulli domination,
//! quasilocality).

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convergence::DecayFit;
use crate::engine::{EngineError, KernelEngine, KernelQuery};
use crate::estimate::{EngineKind, Estimate};
use crate::lattice::{LayerConfig, LayerInterval, Spin, MINUS, PLUS};
use crate::mc::McError;
use crate::potentials::{telescope_potential_closed, GibbsContext, PotentialError};

/// Widest marginal window: direct sums enumerate 2^|V| patterns.
pub const MAX_MARGINAL_WIDTH: usize = 20;

#[derive(Debug, Error)]
pub enum ThermoError {
    #[error("window of width {0} exceeds the direct-enumeration cap {MAX_MARGINAL_WIDTH}")]
    WindowTooWide(usize),
    #[error("probabilities sum to {0}, not 1")]
    BadDistribution(f64),
    #[error("negative probability {0}")]
    NegativeProbability(f64),
    #[error("empty sample set")]
    EmptySamples,
    #[error("series index {0} does not increase the previous index {1}")]
    NotIncreasing(u32, u32),
    #[error("window [{0}, {1}] does not fit the box window [{2}, {3}]")]
    WindowOutsideBox(i32, i32, i32, i32),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Convergence(#[from] crate::convergence::ConvergenceError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Mc(#[from] McError),
}

/// Memoized interval-potential values U([j,k], σ). The value depends on σ
/// only through σ on [j,k], so entries are keyed by the interval plus the
/// minus-pattern over it; this makes 2^|V|-pattern sweeps cheap.
pub struct InteractionCache<'a> {
    pub ctx: &'a GibbsContext,
    pub eng: &'a dyn KernelEngine,
    cache: Mutex<HashMap<(i32, i32, u32), Estimate>>,
}

fn span_pattern(xi: &LayerConfig, j: i32, k: i32) -> u32 {
    let mut bits = 0u32;
    for (t, i) in (j..=k).enumerate() {
        if xi.spin(i) == MINUS {
            bits |= 1 << t;
        }
    }
    bits
}

impl<'a> InteractionCache<'a> {
    pub fn new(ctx: &'a GibbsContext, eng: &'a dyn KernelEngine) -> Self {
        InteractionCache {
            ctx,
            eng,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// U([j,k], σ); zero unless both endpoints carry minus.
    pub fn value(&self, j: i32, k: i32, xi: &LayerConfig) -> Result<Estimate, ThermoError> {
        if xi.spin(j) == PLUS || xi.spin(k) == PLUS {
            return Ok(Estimate::exact(0.0));
        }
        let key = (j, k, span_pattern(xi, j, k));
        if let Some(e) = self.cache.lock().unwrap().get(&key) {
            return Ok(*e);
        }
        let e = telescope_potential_closed(
            self.ctx,
            LayerInterval::new(j, k).unwrap(),
            xi,
            self.eng,
        )?;
        self.cache.lock().unwrap().insert(key, e);
        Ok(e)
    }
}

fn check_in_box(ctx: &GibbsContext, v: LayerInterval) -> Result<(), ThermoError> {
    let w = ctx.box_window();
    if v.j < w.j || v.k > w.k {
        return Err(ThermoError::WindowOutsideBox(v.j, v.k, w.j, w.k));
    }
    Ok(())
}

/// Free-boundary Hamiltonian H^f_V(σ) = Σ_{A⊂V} U(A, σ); vanishes on
/// all-plus and at zero coupling.
pub fn hamiltonian_free_bc(
    v: LayerInterval,
    xi: &LayerConfig,
    cache: &InteractionCache<'_>,
) -> Result<Estimate, ThermoError> {
    check_in_box(cache.ctx, v)?;
    let minus: Vec<i32> = v.sites().filter(|&i| xi.spin(i) == MINUS).collect();
    let mut terms = Vec::new();
    for (a, &j) in minus.iter().enumerate() {
        for &k in &minus[a..] {
            terms.push(cache.value(j, k, xi)?);
        }
    }
    Ok(Estimate::sum(terms))
}

/// σ on V, ω elsewhere, over the full box window, filled with ω's fill.
fn overlay(
    window: LayerInterval,
    v: LayerInterval,
    xi: &LayerConfig,
    omega: &LayerConfig,
) -> LayerConfig {
    let values: Vec<Spin> = window
        .sites()
        .map(|i| if v.contains(i) { xi.spin(i) } else { omega.spin(i) })
        .collect();
    LayerConfig::new(window, values, omega.fill).unwrap()
}

/// Analytic bound on the dropped interval terms: lengths L > cutoff, at most
/// `per_len(L)` intervals each, bounded by C e^{−λL}. None when no usable fit.
fn tail_bound(fit: Option<&DecayFit>, cutoff: u32, per_len: impl Fn(f64) -> f64) -> Option<f64> {
    let f = fit?;
    if f.lambda <= 0.0 {
        return None;
    }
    let mut total = 0.0;
    let mut len = cutoff as f64 + 1.0;
    loop {
        let term = per_len(len) * f.c * (-f.lambda * len).exp();
        total += term;
        if term < 1e-16 * (1.0 + total) || len > 1e6 {
            break;
        }
        len += 1.0;
    }
    Some(total)
}

/// Fixed-boundary Hamiltonian H^ω_V(σ) = Σ_{A∩V≠∅} U(A, σ_V ∨ ω), truncated
/// to interval lengths ≤ cutoff within the box, plus an analytic tail bound
/// (None when no decay fit is supplied — the tail is then unbounded).
pub fn hamiltonian_fixed_bc(
    v: LayerInterval,
    xi: &LayerConfig,
    omega: &LayerConfig,
    cache: &InteractionCache<'_>,
    cutoff: u32,
    fit: Option<&DecayFit>,
) -> Result<(Estimate, Option<f64>), ThermoError> {
    check_in_box(cache.ctx, v)?;
    let w = cache.ctx.box_window();
    let merged = overlay(w, v, xi, omega);
    let minus: Vec<i32> = w.sites().filter(|&i| merged.spin(i) == MINUS).collect();
    let mut terms = Vec::new();
    for (a, &j) in minus.iter().enumerate() {
        for &k in &minus[a..] {
            if (k - j) as u32 > cutoff {
                continue;
            }
            if k < v.j || j > v.k {
                continue; // A ∩ V = ∅
            }
            terms.push(cache.value(j, k, &merged)?);
        }
    }
    let width = v.width() as f64;
    let tail = tail_bound(fit, cutoff, |len| width + len);
    Ok((Estimate::sum(terms), tail))
}

fn check_width(v: LayerInterval) -> Result<(), ThermoError> {
    if v.width() > MAX_MARGINAL_WIDTH {
        return Err(ThermoError::WindowTooWide(v.width()));
    }
    Ok(())
}

/// The layer configuration on `v` (plus fill) whose minus sites are the set
/// bits of `pattern` (bit t ↔ site v.j + t).
pub fn config_from_pattern(v: LayerInterval, pattern: u32) -> LayerConfig {
    let values = (0..v.width())
        .map(|t| if pattern >> t & 1 == 1 { MINUS } else { PLUS })
        .collect();
    LayerConfig::new(v, values, PLUS).unwrap()
}

fn log_sum_exp(terms: &[(f64, f64)]) -> Estimate {
    // terms: (log weight, stderr of the log weight); delta-method error.
    let m = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = terms.iter().map(|t| (t.0 - m).exp()).sum();
    let value = m + z.ln();
    let var: f64 = terms
        .iter()
        .map(|t| {
            let w = (t.0 - m).exp() / z;
            (w * t.1).powi(2)
        })
        .sum();
    Estimate {
        value,
        stderr: var.sqrt(),
        ..Estimate::exact(0.0)
    }
}

/// log Z^f_V by the direct 2^|V| sum over layer patterns.
pub fn log_partition_free_direct(
    v: LayerInterval,
    cache: &InteractionCache<'_>,
) -> Result<Estimate, ThermoError> {
    check_width(v)?;
    let mut terms = Vec::with_capacity(1 << v.width());
    let mut mc = false;
    for pattern in 0..(1u32 << v.width()) {
        let xi = config_from_pattern(v, pattern);
        let hf = hamiltonian_free_bc(v, &xi, cache)?;
        mc |= !hf.is_exact();
        terms.push((-hf.value, hf.stderr));
    }
    let mut e = log_sum_exp(&terms);
    if mc {
        e.engine = EngineKind::Mc;
    }
    Ok(e)
}

/// log Z^f_V = −ln γ_V(+ | +): the kernel route to the same quantity.
pub fn log_partition_free_kernel(
    v: LayerInterval,
    ctx: &GibbsContext,
    eng: &dyn KernelEngine,
) -> Result<Estimate, ThermoError> {
    check_in_box(ctx, v)?;
    let q = KernelQuery {
        v: v.sites().collect(),
        sigma_v: vec![PLUS; v.width()],
        omega: LayerConfig::all_plus(LayerInterval::new(0, 0).unwrap()),
        n: ctx.n,
        beta: ctx.beta,
        h: ctx.h,
    };
    Ok(eng.log_layer_kernel(&q)?.scaled(-1.0))
}

/// log Z^ω_V by the direct pattern sum over e^{−H^ω_V}, with the shared
/// truncation tail bound.
pub fn log_partition_fixed(
    v: LayerInterval,
    omega: &LayerConfig,
    cache: &InteractionCache<'_>,
    cutoff: u32,
    fit: Option<&DecayFit>,
) -> Result<(Estimate, Option<f64>), ThermoError> {
    check_width(v)?;
    let mut terms = Vec::with_capacity(1 << v.width());
    let mut tail = Some(0.0f64);
    let mut mc = false;
    for pattern in 0..(1u32 << v.width()) {
        let xi = config_from_pattern(v, pattern);
        let (h, t) = hamiltonian_fixed_bc(v, &xi, omega, cache, cutoff, fit)?;
        mc |= !h.is_exact();
        tail = match (tail, t) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
        terms.push((-h.value, h.stderr));
    }
    let mut e = log_sum_exp(&terms);
    if mc {
        e.engine = EngineKind::Mc;
    }
    Ok((e, tail))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub n: u32,
    pub value: f64,
    pub stderr: f64,
}

/// A volume-indexed sequence standing in for an infinite-volume limit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThermoSeries {
    pub label: String,
    pub points: Vec<SeriesPoint>,
}

impl ThermoSeries {
    pub fn new(label: impl Into<String>) -> Self {
        ThermoSeries {
            label: label.into(),
            points: Vec::new(),
        }
    }

    pub fn push(&mut self, n: u32, value: f64, stderr: f64) -> Result<(), ThermoError> {
        if let Some(last) = self.points.last() {
            if n <= last.n {
                return Err(ThermoError::NotIncreasing(n, last.n));
            }
        }
        self.points.push(SeriesPoint { n, value, stderr });
        Ok(())
    }

    /// Cauchy diagnostic: |value_{i+1} − value_i|.
    pub fn successive_diffs(&self) -> Vec<f64> {
        self.points
            .windows(2)
            .map(|w| (w[1].value - w[0].value).abs())
            .collect()
    }

    /// Plot-data CSV with header `x,y,y_err,series_label`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,y_err,series_label\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{},{}\n", p.n, p.value, p.stderr, self.label));
        }
        out
    }
}

/// Pressure series |V_m|⁻¹ log Z_{V_m} over half-widths `half_widths`;
/// free boundary when `omega` is None, fixed-ω otherwise (with truncation
/// cutoff and optional decay fit for the tail).
pub fn pressure_series(
    ctx: &GibbsContext,
    half_widths: &[i32],
    omega: Option<&LayerConfig>,
    cache: &InteractionCache<'_>,
    eng: &dyn KernelEngine,
    cutoff: u32,
    fit: Option<&DecayFit>,
) -> Result<ThermoSeries, ThermoError> {
    let mut series = ThermoSeries::new(match omega {
        None => "pressure_free".to_string(),
        Some(_) => "pressure_fixed".to_string(),
    });
    for &m in half_widths {
        let v = LayerInterval::new(-m, m).unwrap();
        let log_z = match omega {
            None => log_partition_free_kernel(v, ctx, eng)?,
            Some(w) => log_partition_fixed(v, w, cache, cutoff, fit)?.0,
        };
        let scale = 1.0 / v.width() as f64;
        series.push(m as u32, log_z.value * scale, log_z.stderr * scale)?;
    }
    Ok(series)
}

/// Energy per site f_U(σ) = Σ_{A∋0} U(A,σ)/|A|, truncated to interval
/// lengths ≤ cutoff within the box, with an analytic tail bound.
pub fn energy_per_site(
    xi: &LayerConfig,
    cache: &InteractionCache<'_>,
    cutoff: u32,
    fit: Option<&DecayFit>,
) -> Result<(Estimate, Option<f64>), ThermoError> {
    let w = cache.ctx.box_window();
    let mut terms = Vec::new();
    for j in w.j..=0 {
        if xi.spin(j) != MINUS {
            continue;
        }
        for k in 0..=w.k {
            if xi.spin(k) != MINUS || (k - j) as u32 > cutoff {
                continue;
            }
            terms.push(cache.value(j, k, xi)?.scaled(1.0 / (k - j + 1) as f64));
        }
    }
    // L+1 intervals of length L contain the origin, each divided by |A| = L+1.
    let tail = tail_bound(fit, cutoff, |_| 1.0);
    Ok((Estimate::sum(terms), tail))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyDensity {
    /// mean over samples of the per-site energy at the origin
    pub ergodic: Estimate,
    /// mean over samples of H^f_V / |V|
    pub volume: Estimate,
}

impl EnergyDensity {
    /// |ergodic − volume| within `mult` combined standard errors.
    pub fn routes_agree(&self, mult: f64) -> bool {
        let tol = mult * (self.ergodic.stderr.powi(2) + self.volume.stderr.powi(2)).sqrt();
        (self.ergodic.value - self.volume.value).abs() <= tol
    }
}

fn sample_mean(values: &[f64]) -> Estimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Estimate {
        value: mean,
        stderr: (var / n).sqrt(),
        n_samples: values.len() as u64,
        engine: EngineKind::Mc,
        seed: None,
    }
}

/// Energy density of the sampled layer measure by both routes.
pub fn energy_density_estimate(
    samples: &[LayerConfig],
    v: LayerInterval,
    cache: &InteractionCache<'_>,
    cutoff: u32,
) -> Result<EnergyDensity, ThermoError> {
    if samples.is_empty() {
        return Err(ThermoError::EmptySamples);
    }
    let mut per_site = Vec::with_capacity(samples.len());
    let mut per_volume = Vec::with_capacity(samples.len());
    for xi in samples {
        per_site.push(energy_per_site(xi, cache, cutoff, None)?.0.value);
        per_volume.push(hamiltonian_free_bc(v, xi, cache)?.value / v.width() as f64);
    }
    Ok(EnergyDensity {
        ergodic: sample_mean(&per_site),
        volume: sample_mean(&per_volume),
    })
}

/// Empirical layer marginal on a window: pattern → probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalMarginal {
    pub v: LayerInterval,
    pub probabilities: HashMap<u32, f64>,
    pub n_samples: u64,
}

impl EmpiricalMarginal {
    pub fn pattern_of(v: LayerInterval, xi: &LayerConfig) -> u32 {
        span_pattern(xi, v.j, v.k)
    }

    pub fn from_patterns(v: LayerInterval, patterns: &[u32]) -> Result<Self, ThermoError> {
        check_width(v)?;
        if patterns.is_empty() {
            return Err(ThermoError::EmptySamples);
        }
        let mut counts: HashMap<u32, u64> = HashMap::new();
        for &p in patterns {
            *counts.entry(p).or_insert(0) += 1;
        }
        let n = patterns.len() as f64;
        Ok(EmpiricalMarginal {
            v,
            probabilities: counts.into_iter().map(|(p, c)| (p, c as f64 / n)).collect(),
            n_samples: patterns.len() as u64,
        })
    }

    pub fn from_samples(v: LayerInterval, samples: &[LayerConfig]) -> Result<Self, ThermoError> {
        let patterns: Vec<u32> = samples.iter().map(|s| Self::pattern_of(v, s)).collect();
        Self::from_patterns(v, &patterns)
    }

    /// A distribution given directly (exact marginals, references); must sum
    /// to one. `n_samples = 0` marks it as exact for entropy bias purposes.
    pub fn from_probabilities(
        v: LayerInterval,
        probabilities: HashMap<u32, f64>,
        n_samples: u64,
    ) -> Result<Self, ThermoError> {
        check_width(v)?;
        let mut total = 0.0;
        for &p in probabilities.values() {
            if p < 0.0 {
                return Err(ThermoError::NegativeProbability(p));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(ThermoError::BadDistribution(total));
        }
        Ok(EmpiricalMarginal {
            v,
            probabilities,
            n_samples,
        })
    }

    pub fn uniform(v: LayerInterval) -> Result<Self, ThermoError> {
        check_width(v)?;
        let p = 1.0 / (1u64 << v.width()) as f64;
        Ok(EmpiricalMarginal {
            v,
            probabilities: (0..(1u32 << v.width())).map(|b| (b, p)).collect(),
            n_samples: 0,
        })
    }

    pub fn point_mass(v: LayerInterval, xi: &LayerConfig) -> Result<Self, ThermoError> {
        check_width(v)?;
        Ok(EmpiricalMarginal {
            v,
            probabilities: HashMap::from([(Self::pattern_of(v, xi), 1.0)]),
            n_samples: 0,
        })
    }

    /// The finite-box Gibbs marginal γ_V(· | ω) evaluated pattern by pattern
    /// (normalized to absorb engine noise).
    pub fn gibbs_marginal(
        ctx: &GibbsContext,
        v: LayerInterval,
        omega: &LayerConfig,
        eng: &dyn KernelEngine,
    ) -> Result<Self, ThermoError> {
        check_width(v)?;
        check_in_box(ctx, v)?;
        let sites: Vec<i32> = v.sites().collect();
        let mut probabilities = HashMap::new();
        let mut total = 0.0;
        for pattern in 0..(1u32 << v.width()) {
            let sigma: Vec<Spin> = (0..v.width())
                .map(|t| if pattern >> t & 1 == 1 { MINUS } else { PLUS })
                .collect();
            let q = KernelQuery {
                v: sites.clone(),
                sigma_v: sigma,
                omega: omega.clone(),
                n: ctx.n,
                beta: ctx.beta,
                h: ctx.h,
            };
            let p = eng.layer_kernel(&q)?.value;
            total += p;
            probabilities.insert(pattern, p);
        }
        for p in probabilities.values_mut() {
            *p /= total;
        }
        Ok(EmpiricalMarginal {
            v,
            probabilities,
            n_samples: 0,
        })
    }

    pub fn prob(&self, pattern: u32) -> f64 {
        self.probabilities.get(&pattern).copied().unwrap_or(0.0)
    }
}

/// Plug-in Shannon entropy (nats) with Miller–Madow bias correction for
/// sampled marginals; clamped to [0, |V| ln 2].
pub fn entropy_empirical(m: &EmpiricalMarginal) -> f64 {
    let plug_in: f64 = m
        .probabilities
        .values()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    let correction = if m.n_samples > 0 {
        let observed = m.probabilities.values().filter(|&&p| p > 0.0).count();
        (observed as f64 - 1.0) / (2.0 * m.n_samples as f64)
    } else {
        0.0
    };
    (plug_in + correction).clamp(0.0, m.v.width() as f64 * std::f64::consts::LN_2)
}

/// KL divergence Σ m(σ) ln(m(σ)/ref(σ)), with 0 ln 0 = 0 and +∞ off support.
pub fn relative_entropy(m: &EmpiricalMarginal, reference: &HashMap<u32, f64>) -> f64 {
    let mut s = 0.0;
    for (&pattern, &p) in &m.probabilities {
        if p == 0.0 {
            continue;
        }
        let q = reference.get(&pattern).copied().unwrap_or(0.0);
        if q == 0.0 {
            return f64::INFINITY;
        }
        s += p * (p / q).ln();
    }
    s.max(0.0)
}

/// Variational gap −S_V(μ) + μ(H^ω_V) + log Z^ω_V ≥ 0, with equality when μ
/// is the γ_V(·|ω)-marginal. `omega = None` uses the free boundary.
pub fn variational_gap(
    m: &EmpiricalMarginal,
    omega: Option<&LayerConfig>,
    cache: &InteractionCache<'_>,
    cutoff: u32,
    fit: Option<&DecayFit>,
) -> Result<Estimate, ThermoError> {
    let v = m.v;
    let s = entropy_empirical(m);
    let mut mean_h = 0.0;
    let mut var_h = 0.0;
    for (&pattern, &p) in &m.probabilities {
        if p == 0.0 {
            continue;
        }
        let xi = config_from_pattern(v, pattern);
        let h = match omega {
            None => hamiltonian_free_bc(v, &xi, cache)?,
            Some(w) => hamiltonian_fixed_bc(v, &xi, w, cache, cutoff, fit)?.0,
        };
        mean_h += p * h.value;
        var_h += (p * h.stderr).powi(2);
    }
    let log_z = match omega {
        None => log_partition_free_direct(v, cache)?,
        Some(w) => log_partition_fixed(v, w, cache, cutoff, fit)?.0,
    };
    Ok(Estimate {
        value: -s + mean_h + log_z.value,
        stderr: (var_h + log_z.stderr.powi(2)).sqrt(),
        n_samples: m.n_samples.max(log_z.n_samples),
        engine: log_z.engine,
        seed: None,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariationalReport {
    /// s_n − e_n: entropy density minus energy density per half-width
    pub functional: ThermoSeries,
    /// P_n = |V_n|⁻¹ log Z^f_{V_n}
    pub pressure: ThermoSeries,
    /// |s_n − e_n − P_n|; equals the per-site variational gap for the
    /// free-boundary finite-volume Gibbs kernel
    pub gaps: Vec<f64>,
}

/// Entropy-minus-energy density of the sampled measure against the pressure,
/// per half-width; the gap must shrink as the window grows when the samples
/// come from the plus phase.
pub fn variational_functional(
    ctx: &GibbsContext,
    samples: &[LayerConfig],
    half_widths: &[i32],
    cache: &InteractionCache<'_>,
    eng: &dyn KernelEngine,
) -> Result<VariationalReport, ThermoError> {
    if samples.is_empty() {
        return Err(ThermoError::EmptySamples);
    }
    let mut functional = ThermoSeries::new("entropy_minus_energy");
    let mut pressure = ThermoSeries::new("pressure_free");
    let mut gaps = Vec::new();
    for &m in half_widths {
        let v = LayerInterval::new(-m, m).unwrap();
        let width = v.width() as f64;
        let marginal = EmpiricalMarginal::from_samples(v, samples)?;
        let s = entropy_empirical(&marginal) / width;
        let mut per_volume = Vec::with_capacity(samples.len());
        for xi in samples {
            per_volume.push(hamiltonian_free_bc(v, xi, cache)?.value / width);
        }
        let e = sample_mean(&per_volume);
        let p = log_partition_free_kernel(v, ctx, eng)?;
        functional.push(m as u32, s - e.value, e.stderr)?;
        pressure.push(m as u32, p.value / width, p.stderr / width)?;
        gaps.push((s - e.value - p.value / width).abs());
    }
    Ok(VariationalReport {
        functional,
        pressure,
        gaps,
    })
}

/// Minus-weight moment series: 2^n e^{−βn} · mean over samples of
/// exp[2β Σ_{i=−n}^{n} (1 − η(i))]. Vanishing for large n diagnoses the
/// plus-phase tail condition at large β; diverging at small β is reported
/// without verdict.
pub fn minus_moment_series(
    samples: &[LayerConfig],
    beta: f64,
    ns: &[i32],
) -> Result<ThermoSeries, ThermoError> {
    if samples.is_empty() {
        return Err(ThermoError::EmptySamples);
    }
    let mut series = ThermoSeries::new("minus_moment");
    for &n in ns {
        let weights: Vec<f64> = samples
            .iter()
            .map(|xi| {
                let deficit: f64 = (-n..=n).map(|i| 1.0 - xi.spin(i) as f64).sum();
                (2.0 * beta * deficit).exp()
            })
            .collect();
        let mean = sample_mean(&weights);
        let scale = (n as f64 * (std::f64::consts::LN_2 - beta)).exp();
        series.push(n as u32, scale * mean.value, scale * mean.stderr)?;
    }
    Ok(series)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominationReport {
    pub beta: f64,
    /// single-site bound e^{−8β} on P(σ_i = −)
    pub bound: f64,
    pub site_checks: usize,
    pub site_failures: usize,
    pub cylinder_checks: usize,
    pub cylinder_failures: usize,
    pub pass: bool,
}

/// Empirical check that the sampled layer measure is dominated by the
/// Bernoulli measure with P(−) = e^{−8β}: per-site minus probabilities and
/// all-minus cylinder events on width-3 windows, each within 3 standard
/// errors of its product bound.
pub fn bernoulli_domination_check(
    samples: &[LayerConfig],
    v: LayerInterval,
    beta: f64,
) -> Result<DominationReport, ThermoError> {
    if samples.is_empty() {
        return Err(ThermoError::EmptySamples);
    }
    let n = samples.len() as f64;
    let bound = (-8.0 * beta).exp();
    let check = |sites: &[i32], limit: f64| -> bool {
        let hits = samples
            .iter()
            .filter(|s| sites.iter().all(|&i| s.spin(i) == MINUS))
            .count() as f64;
        let p = hits / n;
        let se = (p * (1.0 - p) / n).sqrt();
        p <= limit + 3.0 * se
    };
    let mut site_failures = 0;
    let mut site_checks = 0;
    for i in v.sites() {
        site_checks += 1;
        if !check(&[i], bound) {
            site_failures += 1;
        }
    }
    let mut cylinder_failures = 0;
    let mut cylinder_checks = 0;
    for i in v.j..=v.k - 2 {
        for mask in 1u32..8 {
            let sites: Vec<i32> = (0..3).filter(|t| mask >> t & 1 == 1).map(|t| i + t).collect();
            cylinder_checks += 1;
            if !check(&sites, bound.powi(sites.len() as i32)) {
                cylinder_failures += 1;
            }
        }
    }
    Ok(DominationReport {
        beta,
        bound,
        site_checks,
        site_failures,
        cylinder_checks,
        cylinder_failures,
        pass: site_failures == 0 && cylinder_failures == 0,
    })
}

/// Quasilocality probe: D_n = γ^{(N)}_{{0}}(+ | alternating on [−n,n]\{0},
/// plus fill) − the same with minus fill, at N = 2n + margin. D_n staying
/// away from zero signals an essential discontinuity of the conditional
/// kernel; D_n → 0 is the quasilocal (Gibbsian) signature.
pub fn quasilocality_probe(
    beta: f64,
    h: f64,
    ns: &[i32],
    margin: i32,
    eng: &dyn KernelEngine,
) -> Result<ThermoSeries, ThermoError> {
    let mut series = ThermoSeries::new("quasilocality_probe");
    for &n in ns {
        let big_n = 2 * n + margin;
        let omega = LayerConfig::alternating(LayerInterval::new(-n, n).unwrap());
        let mut kernels = Vec::new();
        for fill in [PLUS, MINUS] {
            let q = KernelQuery {
                v: vec![0],
                sigma_v: vec![PLUS],
                omega: omega.with_fill(fill),
                n: big_n,
                beta,
                h,
            };
            kernels.push(eng.layer_kernel(&q)?);
        }
        let d = kernels[0].value - kernels[1].value;
        let se = (kernels[0].stderr.powi(2) + kernels[1].stderr.powi(2)).sqrt();
        series.push(n as u32, d, se)?;
    }
    Ok(series)
}

/// Empirical exponential tail rate of the plus-domination length ℓ at the
/// origin over a sample set: slope of ln P(ℓ > t). None when the survival
/// curve has fewer than two usable points. Recorded as a property of the
/// samples, never asserted as a theorem.
pub fn ell_tail_rate(
    samples: &[LayerConfig],
    alpha: f64,
    direction: crate::convergence::Direction,
) -> Result<Option<f64>, ThermoError> {
    use crate::convergence::ell;
    let mut lengths = Vec::with_capacity(samples.len());
    for s in samples {
        lengths.push(ell(0, s, alpha, direction, false)?);
    }
    let n = lengths.len() as f64;
    let max = *lengths.iter().max().unwrap_or(&1);
    let mut points = Vec::new();
    for t in 1..=max {
        let surv = lengths.iter().filter(|&&l| l > t).count() as f64 / n;
        if surv > 0.0 {
            points.push((t as f64, surv.ln()));
        }
    }
    if points.len() < 2 {
        return Ok(None);
    }
    let m = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    Ok(Some(-slope))
}
