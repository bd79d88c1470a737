//! Layer potentials: relative Hamiltonians from conditional kernels, the
//! vacuum potential by Möbius inversion, the telescoping potential (abstract
//! four-kernel form and interval closed form), decimated variants, identity
//! verification, and table construction.
//!
//! Conventions. All potentials are built from the plus-boundary box of size
//! n. For a layer config ξ and site set S, ξ^S denotes ξ on S and +1
//! elsewhere. The relative Hamiltonian is
//!   H_S(ξ) = ln γ_S(+|+) − ln γ_S(ξ_S|+),
//! the vacuum potential its Möbius inversion, and the telescoping potential
//! on [j,k]
//!   U([j,k],ξ) = ln γ(ξ^{]j,k]}|+) + ln γ(ξ^{[j,k[}|+)
//!              − ln γ(ξ^{]j,k[}|+) − ln γ(ξ^{[j,k]}|+),
//! with U({i},ξ) = H_{{i}}(ξ).
//!
//! Closed forms (exact finite-box identities by the up/down half symmetry of
//! the constrained measure):
//!   j<k:  U = −½(1−ξ_j)(1−ξ_k) ln[E(fg)/(Ef·Eg)] − β(1−ξ_j)(1−ξ_k)δ_{k,j+1}
//!         with f = e^{2βX(j,1)}, g = e^{2βX(k,1)} under the layer frozen to
//!         ξ^{[j,k]};
//!   j=k:  U = (1−ξ_j)[2β + h + ln E e^{2βX(j,1)}].
//! The single-site field term 2β + h (rather than β) is what the four-kernel
//! form produces at finite volume; the telescoping and resummation identity
//! checks below pin it down.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineError, KernelEngine, KernelQuery};
use crate::estimate::{EngineKind, Estimate};
use crate::exact::BoxProblem;
use crate::lattice::{LayerConfig, LayerInterval, RadiusFn, Site2D, Spin, MINUS, PLUS};
use crate::observable::Observable;

#[derive(Debug, Error)]
pub enum PotentialError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("set too large for Möbius inversion: {0} sites (cap 12)")]
    MobiusTooLarge(usize),
    #[error("resummation cell too large: m = {0} (cap 12)")]
    CellTooLarge(u32),
    #[error("decimation step must be >= 2, got {0}")]
    BadDecimationStep(i64),
    #[error("decimated endpoints {0}, {1} not on the decimated lattice (step {2})")]
    OffDecimatedLattice(i32, i32, i64),
    #[error("decimated potential needs two distinct endpoints")]
    DecimatedSingleSite,
}

/// Shared parameters of a family of constrained-box evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsContext {
    pub beta: f64,
    pub h: f64,
    pub n: i32,
}

impl GibbsContext {
    pub fn new(beta: f64, h: f64, n: i32) -> Self {
        GibbsContext { beta, h, n }
    }

    pub fn box_window(&self) -> LayerInterval {
        LayerInterval::new(-self.n, self.n).unwrap()
    }

    /// Plus-boundary box with the whole layer frozen to `xi` (window + fill).
    pub fn constrained(&self, xi: &LayerConfig) -> BoxProblem {
        BoxProblem::new(self.n, self.beta, self.h, crate::exact::Boundary::Plus)
            .with_frozen_layer(xi.clone())
    }

    fn kernel_query(&self, v: &[i32], sigma_v: &[Spin]) -> KernelQuery {
        KernelQuery {
            v: v.to_vec(),
            sigma_v: sigma_v.to_vec(),
            omega: LayerConfig::all_plus(LayerInterval::new(0, 0).unwrap()),
            n: self.n,
            beta: self.beta,
            h: self.h,
        }
    }
}

/// H_S(ξ) = ln γ_S(+|+) − ln γ_S(ξ_S|+): the relative Hamiltonian of ξ^S
/// against the all-plus configuration.
pub fn hamiltonian(
    ctx: &GibbsContext,
    s: &[i32],
    xi: &LayerConfig,
    eng: &dyn KernelEngine,
) -> Result<Estimate, PotentialError> {
    if s.is_empty() {
        return Ok(Estimate::exact(0.0));
    }
    let plus: Vec<Spin> = vec![PLUS; s.len()];
    let sigma: Vec<Spin> = s.iter().map(|&i| xi.spin(i)).collect();
    if sigma == plus {
        return Ok(Estimate::exact(0.0));
    }
    let top = eng.log_layer_kernel(&ctx.kernel_query(s, &plus))?;
    let bot = eng.log_layer_kernel(&ctx.kernel_query(s, &sigma))?;
    Ok(Estimate::sum([top, bot.scaled(-1.0)]))
}

/// Möbius inversion: v(A,ξ) = Σ_{V⊂A} (−1)^{|A\V|} H_V(ξ).
pub fn vacuum_potential(
    ctx: &GibbsContext,
    a: &[i32],
    xi: &LayerConfig,
    eng: &dyn KernelEngine,
) -> Result<Estimate, PotentialError> {
    if a.len() > 12 {
        return Err(PotentialError::MobiusTooLarge(a.len()));
    }
    let mut terms = Vec::with_capacity(1 << a.len());
    for mask in 0u32..(1 << a.len()) {
        let v: Vec<i32> = (0..a.len())
            .filter(|&b| mask >> b & 1 == 1)
            .map(|b| a[b])
            .collect();
        let sign = if (a.len() - v.len()) % 2 == 0 { 1.0 } else { -1.0 };
        terms.push(hamiltonian(ctx, &v, xi, eng)?.scaled(sign));
    }
    Ok(Estimate::sum(terms))
}

/// Telescoping potential on the cell (i, m) via the four-kernel form.
pub fn telescope_potential_abstract(
    ctx: &GibbsContext,
    i: i32,
    m: u32,
    xi: &LayerConfig,
    g: RadiusFn,
    eng: &dyn KernelEngine,
) -> Result<Estimate, PotentialError> {
    if m == 0 {
        return hamiltonian(ctx, &[i], xi, eng);
    }
    let j = i - g.g(m) as i32;
    let v: Vec<i32> = (j..=i).collect();
    let assign = |drop_j: bool, drop_i: bool| -> Vec<Spin> {
        v.iter()
            .map(|&s| {
                if (drop_j && s == j) || (drop_i && s == i) {
                    PLUS
                } else {
                    xi.spin(s)
                }
            })
            .collect()
    };
    // Identically zero when either endpoint already carries +.
    if xi.spin(j) == PLUS || xi.spin(i) == PLUS {
        return Ok(Estimate::exact(0.0));
    }
    let lk = |sigma: &[Spin]| eng.log_layer_kernel(&ctx.kernel_query(&v, sigma));
    Ok(Estimate::sum([
        lk(&assign(true, false))?,
        lk(&assign(false, true))?,
        lk(&assign(true, true))?.scaled(-1.0),
        lk(&assign(false, false))?.scaled(-1.0),
    ]))
}

/// Telescoping potential on [j,k] via the constrained-measure closed form.
pub fn telescope_potential_closed(
    ctx: &GibbsContext,
    jk: LayerInterval,
    xi: &LayerConfig,
    eng: &dyn KernelEngine,
) -> Result<Estimate, PotentialError> {
    let (j, k) = (jk.j, jk.k);
    if xi.spin(j) == PLUS || xi.spin(k) == PLUS {
        return Ok(Estimate::exact(0.0));
    }
    let frozen = xi.restricted_to(&jk.sites().collect::<Vec<_>>());
    let p = ctx.constrained(&frozen);
    if j == k {
        let f = Observable::exp_coupling(Site2D::new(j, 1), ctx.beta);
        let lm = eng.log_mean(&p, &f)?;
        return Ok(lm.shifted(2.0 * ctx.beta + ctx.h).scaled(2.0));
    }
    let f = Observable::exp_coupling(Site2D::new(j, 1), ctx.beta);
    let g = Observable::exp_coupling(Site2D::new(k, 1), ctx.beta);
    let lr = eng.log_ratio(&p, &f, &g)?;
    let nn = if k == j + 1 { -4.0 * ctx.beta } else { 0.0 };
    Ok(lr.scaled(-2.0).shifted(nn))
}

/// Decimated telescoping potential on [j,k] ⊂ bZ: the layer is frozen only
/// on the decimated sublattice (ξ on [j,k], + elsewhere), intermediate layer
/// sites stay free, and the exponential factors collect both rows.
pub fn decimated_potential(
    ctx: &GibbsContext,
    jk: LayerInterval,
    xi: &LayerConfig,
    b: i64,
    eng: &dyn KernelEngine,
) -> Result<Estimate, PotentialError> {
    if b < 2 {
        return Err(PotentialError::BadDecimationStep(b));
    }
    let (j, k) = (jk.j, jk.k);
    if (j as i64).rem_euclid(b) != 0 || (k as i64).rem_euclid(b) != 0 {
        return Err(PotentialError::OffDecimatedLattice(j, k, b));
    }
    let kept: BTreeSet<i32> = ctx
        .box_window()
        .sites()
        .filter(|&i| (i as i64).rem_euclid(b) == 0)
        .collect();
    decimated_potential_masked(ctx, jk, xi, &kept, eng)
}

/// `decimated_potential` for an arbitrary kept-site mask (random decimation);
/// both endpoints must be kept.
pub fn decimated_potential_masked(
    ctx: &GibbsContext,
    jk: LayerInterval,
    xi: &LayerConfig,
    kept: &BTreeSet<i32>,
    eng: &dyn KernelEngine,
) -> Result<Estimate, PotentialError> {
    let (j, k) = (jk.j, jk.k);
    if !kept.contains(&j) || !kept.contains(&k) {
        return Err(PotentialError::OffDecimatedLattice(j, k, 0));
    }
    if j == k {
        return Err(PotentialError::DecimatedSingleSite);
    }
    if xi.spin(j) == PLUS || xi.spin(k) == PLUS {
        return Ok(Estimate::exact(0.0));
    }
    let window = ctx.box_window();
    let kept = kept.clone();
    let values: Vec<Spin> = window
        .sites()
        .map(|i| if jk.contains(i) { xi.spin(i) } else { PLUS })
        .collect();
    let cfg = LayerConfig::new(window, values, PLUS).unwrap();
    let p = BoxProblem::new(ctx.n, ctx.beta, ctx.h, crate::exact::Boundary::Plus)
        .with_masked_layer(cfg, kept);
    let two_row = |i: i32| {
        Observable::exp_coupling(Site2D::new(i, 1), ctx.beta)
            .times(Observable::exp_coupling(Site2D::new(i, -1), ctx.beta))
    };
    let lr = eng.log_ratio(&p, &two_row(j), &two_row(k))?;
    Ok(lr.scaled(-1.0))
}

/// |H_V(ξ) − Σ_{A∩V≠∅} U(A,ξ^V)|: the telescoped-Hamiltonian identity.
/// With plus fill outside V the sum is finite: only intervals inside V with
/// minus endpoints contribute.
pub fn verify_telescoping_identity(
    ctx: &GibbsContext,
    v: LayerInterval,
    xi: &LayerConfig,
    eng: &dyn KernelEngine,
) -> Result<f64, PotentialError> {
    let sites: Vec<i32> = v.sites().collect();
    let lhs = hamiltonian(ctx, &sites, xi, eng)?.value;
    let xi_v = xi.restricted_to(&sites);
    let mut rhs = 0.0;
    for k in v.sites() {
        for j in v.j..=k {
            rhs += telescope_potential_abstract(
                ctx,
                k,
                (k - j) as u32,
                &xi_v,
                RadiusFn::Linear,
                eng,
            )?
            .value;
        }
    }
    Ok((lhs - rhs).abs())
}

/// |U_{L_{i,m}}(ξ) − Σ_{R in the (i,m) cell} v(R,ξ)|: the resummation of the
/// vacuum potential over its telescope cell.
pub fn verify_resummation(
    ctx: &GibbsContext,
    i: i32,
    m: u32,
    xi: &LayerConfig,
    eng: &dyn KernelEngine,
) -> Result<f64, PotentialError> {
    if m > 12 {
        return Err(PotentialError::CellTooLarge(m));
    }
    let u = telescope_potential_abstract(ctx, i, m, xi, RadiusFn::Linear, eng)?.value;
    let mut sum = 0.0;
    for r in crate::lattice::enumerate_telescope_cell(i, m, RadiusFn::Linear) {
        sum += vacuum_potential(ctx, &r, xi, eng)?.value;
    }
    Ok((u - sum).abs())
}

/// Finite-volume Gibbs average of `f(σ_V)` from the potential itself: the
/// Dobrushin operator R^U_V(f)(ω). Returns the value and a truncation bound
/// covering intervals longer than `cutoff` (zero when none were skipped,
/// which is guaranteed once `cutoff` spans every minus site of ω).
#[allow(clippy::too_many_arguments)]
pub fn dobrushin_expectation(
    ctx: &GibbsContext,
    f: &dyn Fn(&[Spin]) -> f64,
    v: LayerInterval,
    omega: &LayerConfig,
    eng: &dyn KernelEngine,
    cutoff: u32,
    decay: Option<(f64, f64)>,
) -> Result<(Estimate, f64), PotentialError> {
    let vsites: Vec<i32> = v.sites().collect();
    let mut weights = Vec::with_capacity(1 << vsites.len());
    let mut sigmas = Vec::with_capacity(1 << vsites.len());
    let mut fvals = Vec::with_capacity(1 << vsites.len());
    let mut truncated = 0.0f64;
    for mask in 0u32..(1 << vsites.len()) {
        let sigma: Vec<Spin> = (0..vsites.len())
            .map(|b| if mask >> b & 1 == 1 { PLUS } else { MINUS })
            .collect();
        // The combined configuration σ_V ∨ ω.
        let mut vals: Vec<Spin> = Vec::new();
        let lo = v.j.min(omega.window.j);
        let hi = v.k.max(omega.window.k);
        for i in lo..=hi {
            vals.push(match vsites.iter().position(|&s| s == i) {
                Some(idx) => sigma[idx],
                None => omega.spin(i),
            });
        }
        let eta = LayerConfig::new(LayerInterval::new(lo, hi).unwrap(), vals, PLUS).unwrap();
        // H^ω_V(σ) = Σ_{A∩V≠∅} U(A,η). Plus fill makes the endpoint set
        // finite: endpoints must carry −1 (or lie in V for single sites).
        let mut ends: Vec<i32> = eta.minus_sites();
        ends.extend(&vsites);
        ends.sort();
        ends.dedup();
        let mut hterms = Vec::new();
        for (ai, &j) in ends.iter().enumerate() {
            for &k in &ends[ai..] {
                if k < v.j || j > v.k {
                    continue; // A ∩ V = ∅
                }
                if (k - j) as u32 > cutoff {
                    if let Some((c, lambda)) = decay {
                        truncated += c * (-lambda * (k - j) as f64).exp();
                    } else {
                        truncated += 10.0 * ctx.beta;
                    }
                    continue;
                }
                hterms.push(telescope_potential_closed(
                    ctx,
                    LayerInterval::new(j, k).unwrap(),
                    &eta,
                    eng,
                )?);
            }
        }
        let hval = Estimate::sum(hterms);
        weights.push((-hval.value).exp());
        sigmas.push(hval.stderr);
        fvals.push(f(&sigma));
    }
    let z: f64 = weights.iter().sum();
    let val = weights
        .iter()
        .zip(&fvals)
        .map(|(w, fv)| w * fv)
        .sum::<f64>()
        / z;
    // Delta method through R = Σ w_i f_i / Σ w_i, w_i = e^{-H_i}:
    // ∂R/∂H_i = -w_i (f_i - R) / Z.
    let var: f64 = weights
        .iter()
        .zip(&fvals)
        .zip(&sigmas)
        .map(|((w, fv), s)| (w * (fv - val) / z * s).powi(2))
        .sum();
    let est = match eng.kind() {
        EngineKind::Exact => Estimate::exact(val),
        EngineKind::Mc => Estimate {
            value: val,
            stderr: var.sqrt(),
            n_samples: 0,
            engine: EngineKind::Mc,
            seed: None,
        },
    };
    Ok((est, truncated))
}

// ---------------------------------------------------------------------------
// Tables

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Vacuum,
    Telescoping,
    TelescopingClosedForm,
    Decimated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableEntry {
    pub j: i32,
    pub k: i32,
    pub value: Estimate,
}

/// Interval-indexed potential values for one fixed configuration ξ.
/// Absent intervals are zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialTable {
    pub xi: LayerConfig,
    pub beta: f64,
    pub h: f64,
    pub n: i32,
    pub engine: EngineKind,
    pub kind: PotentialKind,
    pub entries: Vec<TableEntry>,
}

impl PotentialTable {
    pub fn get(&self, j: i32, k: i32) -> Option<&Estimate> {
        self.entries
            .iter()
            .find(|e| e.j == j && e.k == k)
            .map(|e| &e.value)
    }

    pub fn value(&self, j: i32, k: i32) -> f64 {
        self.get(j, k).map_or(0.0, |e| e.value)
    }

    /// CSV with header `j,k,value,stderr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,k,value,stderr\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{},{}\n", e.j, e.k, e.value.value, e.value.stderr));
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.value.value.abs())
            .fold(0.0, f64::max)
    }
}

/// Build the closed-form telescoping table for ξ: all intervals inside the
/// window with minus endpoints and length ≤ max_len. Entries with a plus
/// endpoint are identically zero and omitted.
pub fn build_closed_table(
    ctx: &GibbsContext,
    xi: &LayerConfig,
    max_len: u32,
    eng: &dyn KernelEngine,
) -> Result<PotentialTable, PotentialError> {
    let minus = xi.minus_sites();
    let mut intervals = Vec::new();
    for (a, &j) in minus.iter().enumerate() {
        for &k in &minus[a..] {
            if (k - j) as u32 <= max_len {
                intervals.push((j, k));
            }
        }
    }
    let entries: Result<Vec<TableEntry>, PotentialError> = intervals
        .into_par_iter()
        .map(|(j, k)| {
            let value =
                telescope_potential_closed(ctx, LayerInterval::new(j, k).unwrap(), xi, eng)?;
            Ok(TableEntry { j, k, value })
        })
        .collect();
    Ok(PotentialTable {
        xi: xi.clone(),
        beta: ctx.beta,
        h: ctx.h,
        n: ctx.n,
        engine: eng.kind(),
        kind: PotentialKind::TelescopingClosedForm,
        entries: entries?,
    })
}

/// Decimated analogue of `build_closed_table`: intervals with endpoints on
/// the decimated lattice carrying minus spins.
pub fn build_decimated_table(
    ctx: &GibbsContext,
    xi: &LayerConfig,
    b: i64,
    max_len: u32,
    eng: &dyn KernelEngine,
) -> Result<PotentialTable, PotentialError> {
    if b < 2 {
        return Err(PotentialError::BadDecimationStep(b));
    }
    let minus: Vec<i32> = xi
        .minus_sites()
        .into_iter()
        .filter(|&i| (i as i64).rem_euclid(b) == 0)
        .collect();
    let mut intervals = Vec::new();
    for (a, &j) in minus.iter().enumerate() {
        for &k in &minus[a + 1..] {
            if (k - j) as u32 <= max_len {
                intervals.push((j, k));
            }
        }
    }
    let entries: Result<Vec<TableEntry>, PotentialError> = intervals
        .into_par_iter()
        .map(|(j, k)| {
            let value = decimated_potential(ctx, LayerInterval::new(j, k).unwrap(), xi, b, eng)?;
            Ok(TableEntry { j, k, value })
        })
        .collect();
    Ok(PotentialTable {
        xi: xi.clone(),
        beta: ctx.beta,
        h: ctx.h,
        n: ctx.n,
        engine: eng.kind(),
        kind: PotentialKind::Decimated,
        entries: entries?,
    })
}
