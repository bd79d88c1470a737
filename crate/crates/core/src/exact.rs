//! Exact-enumeration engine for finite 2D Ising boxes.
//!
//! Boxes are squares {-n..n}² with plus/minus/free boundary conditions and an
//! optional frozen layer (the row y = 0). The Boltzmann weight is
//!   exp[ β Σ_{<xy>} (σ_x σ_y − 1) + h Σ_{x∈Λ} σ_x ],
//! where the bond sum runs over nearest-neighbor pairs with at least one
//! endpoint in the box (boundary bonds drop out under free b.c.). All spins
//! frozen therefore gives log Z = β·(bond sum) + h·(spin sum) exactly.
//!
//! Enumeration runs per conditionally independent component of free spins
//! (a fully frozen layer splits the box into independent halves), walks each
//! component in Gray-code order with *integer* energy accumulators — the
//! energy is always β·a + h·b with integers a, b — and compensated summation,
//! so results are deterministic and free of incremental float drift.

use std::collections::{BTreeSet, HashMap};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimate::Estimate;
use crate::lattice::{LayerConfig, Site2D, Spin, MINUS, PLUS};
use crate::observable::Observable;

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("enumeration too large: component of {got} free spins exceeds cap {cap}")]
    TooLarge { got: usize, cap: usize },
    #[error("observable support outside box: {0:?}")]
    SupportOutsideBox(Site2D),
    #[error("site {0:?} is not a free interior site")]
    NotFree(Site2D),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Plus,
    Minus,
    Free,
}

impl Boundary {
    fn spin(&self) -> Option<Spin> {
        match self {
            Boundary::Plus => Some(PLUS),
            Boundary::Minus => Some(MINUS),
            Boundary::Free => None,
        }
    }
}

/// Which layer sites are frozen, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FrozenLayer {
    None,
    /// Every layer site in the box frozen to `config.spin(i)`.
    Full(LayerConfig),
    /// Only the listed layer sites frozen (decimation); the rest stay free.
    Masked { config: LayerConfig, kept: BTreeSet<i32> },
}

/// A finite-volume constrained Ising problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxProblem {
    pub n: i32,
    pub beta: f64,
    pub h: f64,
    pub boundary: Boundary,
    pub frozen: FrozenLayer,
}

impl BoxProblem {
    pub fn new(n: i32, beta: f64, h: f64, boundary: Boundary) -> Self {
        assert!(n >= 1 && beta >= 0.0);
        BoxProblem {
            n,
            beta,
            h,
            boundary,
            frozen: FrozenLayer::None,
        }
    }

    pub fn with_frozen_layer(mut self, config: LayerConfig) -> Self {
        self.frozen = FrozenLayer::Full(config);
        self
    }

    pub fn with_masked_layer(mut self, config: LayerConfig, kept: BTreeSet<i32>) -> Self {
        self.frozen = FrozenLayer::Masked { config, kept };
        self
    }

    pub fn in_box(&self, s: Site2D) -> bool {
        s.x.abs() <= self.n && s.y.abs() <= self.n
    }

    pub fn frozen_spin(&self, s: Site2D) -> Option<Spin> {
        if s.y != 0 || !self.in_box(s) {
            return None;
        }
        match &self.frozen {
            FrozenLayer::None => None,
            FrozenLayer::Full(c) => Some(c.spin(s.x)),
            FrozenLayer::Masked { config, kept } => {
                if kept.contains(&s.x) {
                    Some(config.spin(s.x))
                } else {
                    None
                }
            }
        }
    }

    pub fn sites(&self) -> Vec<Site2D> {
        let mut v = Vec::with_capacity(((2 * self.n + 1) * (2 * self.n + 1)) as usize);
        for y in -self.n..=self.n {
            for x in -self.n..=self.n {
                v.push(Site2D::new(x, y));
            }
        }
        v
    }

    /// Canonical cache key: geometry, couplings, and the effective frozen
    /// assignment on the layer (0 = free), independent of window bookkeeping.
    fn cache_key(&self) -> ProblemKey {
        let layer: Vec<i8> = (-self.n..=self.n)
            .map(|x| self.frozen_spin(Site2D::layer(x)).unwrap_or(0))
            .collect();
        ProblemKey {
            n: self.n,
            beta: self.beta.to_bits(),
            h: self.h.to_bits(),
            boundary: self.boundary,
            layer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ProblemKey {
    n: i32,
    beta: u64,
    h: u64,
    boundary: Boundary,
    layer: Vec<i8>,
}

// ---------------------------------------------------------------------------
// Component decomposition

struct Component {
    sites: Vec<Site2D>,
    /// Intra-component neighbor local indices, per site.
    nbrs: Vec<Vec<u32>>,
    /// Sum of frozen/boundary neighbor spins, per site.
    sfield: Vec<i32>,
    /// Count of frozen/boundary neighbors, per site (the −1 per bond).
    nsf: Vec<i32>,
}

struct Decomposition {
    components: Vec<Component>,
    /// β-coefficient of the frozen-only energy (frozen-frozen and
    /// frozen-boundary bond terms σσ'−1).
    a_const: i64,
    /// h-coefficient: sum of frozen spins.
    b_const: i64,
}

fn decompose(p: &BoxProblem) -> Decomposition {
    let bspin = p.boundary.spin();
    let mut a_const: i64 = 0;
    let mut b_const: i64 = 0;

    let mut index: HashMap<Site2D, usize> = HashMap::new();
    let mut free: Vec<Site2D> = Vec::new();
    for s in p.sites() {
        match p.frozen_spin(s) {
            Some(v) => b_const += v as i64,
            None => {
                index.insert(s, free.len());
                free.push(s);
            }
        }
    }

    // Classify every bond exactly once: in-box bonds via the +x/+y neighbor,
    // boundary bonds via any neighbor outside the box.
    let mut field = vec![0i32; free.len()];
    let mut nsf = vec![0i32; free.len()];
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); free.len()];
    for s in p.sites() {
        let fs = p.frozen_spin(s);
        for t in [Site2D::new(s.x + 1, s.y), Site2D::new(s.x, s.y + 1)] {
            if p.in_box(t) {
                let ft = p.frozen_spin(t);
                match (fs, ft) {
                    (Some(a), Some(b)) => a_const += (a as i64) * (b as i64) - 1,
                    (Some(a), None) => {
                        let j = index[&t];
                        field[j] += a as i32;
                        nsf[j] += 1;
                    }
                    (None, Some(b)) => {
                        let i = index[&s];
                        field[i] += b as i32;
                        nsf[i] += 1;
                    }
                    (None, None) => {
                        let i = index[&s] as u32;
                        let j = index[&t] as u32;
                        adj[i as usize].push(j);
                        adj[j as usize].push(i);
                    }
                }
            }
        }
        if let Some(b) = bspin {
            for t in s.neighbors() {
                if !p.in_box(t) {
                    match fs {
                        Some(a) => a_const += (a as i64) * (b as i64) - 1,
                        None => {
                            let i = index[&s];
                            field[i] += b as i32;
                            nsf[i] += 1;
                        }
                    }
                }
            }
        }
    }

    // Connected components of free sites.
    let mut comp_of = vec![usize::MAX; free.len()];
    let mut components = Vec::new();
    for start in 0..free.len() {
        if comp_of[start] != usize::MAX {
            continue;
        }
        let cid = components.len();
        let mut members = vec![start];
        comp_of[start] = cid;
        let mut head = 0;
        while head < members.len() {
            let u = members[head];
            head += 1;
            for &v in &adj[u] {
                let v = v as usize;
                if comp_of[v] == usize::MAX {
                    comp_of[v] = cid;
                    members.push(v);
                }
            }
        }
        members.sort();
        let local: HashMap<usize, u32> = members
            .iter()
            .enumerate()
            .map(|(l, &g)| (g, l as u32))
            .collect();
        let nbrs = members
            .iter()
            .map(|&g| {
                let mut v: Vec<u32> = adj[g].iter().map(|&x| local[&(x as usize)]).collect();
                v.sort();
                v
            })
            .collect();
        components.push(Component {
            sites: members.iter().map(|&g| free[g]).collect(),
            nbrs,
            sfield: members.iter().map(|&g| field[g]).collect(),
            nsf: members.iter().map(|&g| nsf[g]).collect(),
        });
    }

    Decomposition {
        components,
        a_const,
        b_const,
    }
}

// ---------------------------------------------------------------------------
// Gray-code enumeration

#[derive(Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

/// An observable's factors restricted to one component: (local index, +val, −val).
type CompFactors = Vec<(u32, f64, f64)>;

struct BlockSums {
    z: Kahan,
    obs: Vec<Kahan>,
}

/// Enumerate the 2^low states with spins above bit `low` fixed by `hi_bits`.
fn block_sums(
    comp: &Component,
    beta: f64,
    h: f64,
    obs: &[CompFactors],
    hi_bits: u64,
    low: u32,
) -> BlockSums {
    let k = comp.sites.len();
    let mut spins: Vec<i32> = (0..k)
        .map(|i| if hi_bits >> i & 1 == 1 { 1 } else { -1 })
        .collect();

    // Exact integer energy coefficients for the start state.
    let mut a: i64 = 0;
    let mut b: i64 = 0;
    for i in 0..k {
        for &j in &comp.nbrs[i] {
            if (j as usize) > i {
                a += (spins[i] * spins[j as usize]) as i64 - 1;
            }
        }
        a += (spins[i] * comp.sfield[i]) as i64 - comp.nsf[i] as i64;
        b += spins[i] as i64;
    }

    let mut sums = BlockSums {
        z: Kahan::default(),
        obs: vec![Kahan::default(); obs.len()],
    };
    let record = |spins: &[i32], a: i64, b: i64, sums: &mut BlockSums| {
        let w = (beta * a as f64 + h * b as f64).exp();
        sums.z.add(w);
        for (o, facs) in obs.iter().enumerate() {
            let mut prod = w;
            for &(l, vp, vm) in facs {
                prod *= if spins[l as usize] == 1 { vp } else { vm };
            }
            sums.obs[o].add(prod);
        }
    };

    record(&spins, a, b, &mut sums);
    for step in 1u64..(1u64 << low) {
        let i = step.trailing_zeros() as usize;
        let s = spins[i];
        let mut nb: i32 = comp.sfield[i];
        for &j in &comp.nbrs[i] {
            nb += spins[j as usize];
        }
        a += (-2 * s * nb) as i64;
        b += (-2 * s) as i64;
        spins[i] = -s;
        record(&spins, a, b, &mut sums);
    }
    sums
}

/// Full component sums: (ln Σ w, per-observable Σ w·f / Σ w).
fn component_sums(comp: &Component, beta: f64, h: f64, obs: &[CompFactors]) -> (f64, Vec<f64>) {
    let k = comp.sites.len() as u32;
    const PAR_LOW: u32 = 16;
    let (z, fo) = if k > PAR_LOW + 2 {
        let low = PAR_LOW;
        let blocks: Vec<BlockSums> = (0u64..(1u64 << (k - low)))
            .into_par_iter()
            .map(|blk| block_sums(comp, beta, h, obs, blk << low, low))
            .collect();
        // Deterministic ordered reduction.
        let mut z = Kahan::default();
        let mut fo = vec![Kahan::default(); obs.len()];
        for b in blocks {
            z.add(b.z.sum);
            for (i, o) in b.obs.iter().enumerate() {
                fo[i].add(o.sum);
            }
        }
        (z, fo)
    } else {
        let b = block_sums(comp, beta, h, obs, 0, k);
        (b.z, b.obs)
    };
    let ratios = fo.iter().map(|o| o.sum / z.sum).collect();
    (z.sum.ln(), ratios)
}

// ---------------------------------------------------------------------------
// Engine

pub struct ExactEngine {
    pub cap: usize,
    cache: Mutex<HashMap<ProblemKey, f64>>,
}

impl Default for ExactEngine {
    fn default() -> Self {
        ExactEngine::new(26)
    }
}

impl ExactEngine {
    pub fn new(cap: usize) -> Self {
        ExactEngine {
            cap,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn check_caps(&self, d: &Decomposition) -> Result<(), ExactError> {
        for c in &d.components {
            if c.sites.len() > self.cap {
                return Err(ExactError::TooLarge {
                    got: c.sites.len(),
                    cap: self.cap,
                });
            }
        }
        Ok(())
    }

    /// log Z of the constrained box (memoized).
    pub fn log_partition(&self, p: &BoxProblem) -> Result<f64, ExactError> {
        let key = p.cache_key();
        if let Some(&v) = self.cache.lock().unwrap().get(&key) {
            return Ok(v);
        }
        let d = decompose(p);
        self.check_caps(&d)?;
        let mut logz = p.beta * d.a_const as f64 + p.h * d.b_const as f64;
        for c in &d.components {
            logz += component_sums(c, p.beta, p.h, &[]).0;
        }
        self.cache.lock().unwrap().insert(key, logz);
        Ok(logz)
    }

    /// Exact expectations of several observables in one enumeration pass.
    pub fn expectations(
        &self,
        p: &BoxProblem,
        obs: &[Observable],
    ) -> Result<Vec<f64>, ExactError> {
        let d = decompose(p);
        self.check_caps(&d)?;

        let mut site_comp: HashMap<Site2D, (usize, u32)> = HashMap::new();
        for (ci, c) in d.components.iter().enumerate() {
            for (li, &s) in c.sites.iter().enumerate() {
                site_comp.insert(s, (ci, li as u32));
            }
        }

        // Split each observable into a frozen-site constant and per-component
        // factor lists.
        let mut consts = vec![1.0f64; obs.len()];
        let mut per_comp: Vec<Vec<CompFactors>> =
            vec![vec![Vec::new(); obs.len()]; d.components.len()];
        for (oi, o) in obs.iter().enumerate() {
            for f in &o.factors {
                if !p.in_box(f.site) {
                    return Err(ExactError::SupportOutsideBox(f.site));
                }
                if let Some(v) = p.frozen_spin(f.site) {
                    consts[oi] *= f.eval(v);
                } else {
                    let (ci, li) = site_comp[&f.site];
                    per_comp[ci][oi].push((li, f.plus, f.minus));
                }
            }
        }

        let mut values = consts;
        for (ci, c) in d.components.iter().enumerate() {
            // Skip components no observable touches.
            if per_comp[ci].iter().all(|f| f.is_empty()) {
                continue;
            }
            let (_, ratios) = component_sums(c, p.beta, p.h, &per_comp[ci]);
            for (oi, r) in ratios.iter().enumerate() {
                if !per_comp[ci][oi].is_empty() {
                    values[oi] *= r;
                }
            }
        }
        Ok(values)
    }

    pub fn expectation(&self, p: &BoxProblem, f: &Observable) -> Result<Estimate, ExactError> {
        Ok(Estimate::exact(
            self.expectations(p, std::slice::from_ref(f))?[0],
        ))
    }

    pub fn covariance(
        &self,
        p: &BoxProblem,
        f: &Observable,
        g: &Observable,
    ) -> Result<Estimate, ExactError> {
        let fg = f.clone().times(g.clone());
        let v = self.expectations(p, &[fg, f.clone(), g.clone()])?;
        Ok(Estimate::exact(v[0] - v[1] * v[2]))
    }

    /// ln( E[f·g] / (E[f]·E[g]) ) for strictly positive f, g.
    pub fn log_ratio(
        &self,
        p: &BoxProblem,
        f: &Observable,
        g: &Observable,
    ) -> Result<Estimate, ExactError> {
        let fg = f.clone().times(g.clone());
        let v = self.expectations(p, &[fg, f.clone(), g.clone()])?;
        Ok(Estimate::exact(v[0].ln() - v[1].ln() - v[2].ln()))
    }

    /// ln E[f].
    pub fn log_mean(&self, p: &BoxProblem, f: &Observable) -> Result<Estimate, ExactError> {
        Ok(Estimate::exact(
            self.expectations(p, std::slice::from_ref(f))?[0].ln(),
        ))
    }

    /// Finite-box conditional layer kernel: the probability that the layer
    /// restricted to the sites of `v` equals `sigma_v`, given the rest of the
    /// layer equals `omega` (window + fill), in the plus-b.c. box of size n.
    pub fn layer_kernel(
        &self,
        v: &[i32],
        sigma_v: &[Spin],
        omega: &LayerConfig,
        n: i32,
        beta: f64,
        h: f64,
    ) -> Result<f64, ExactError> {
        Ok(self.log_layer_kernel(v, sigma_v, omega, n, beta, h)?.exp())
    }

    /// ln of the layer kernel, computed entirely in the log domain.
    pub fn log_layer_kernel(
        &self,
        v: &[i32],
        sigma_v: &[Spin],
        omega: &LayerConfig,
        n: i32,
        beta: f64,
        h: f64,
    ) -> Result<f64, ExactError> {
        assert_eq!(v.len(), sigma_v.len());
        if let Some(&site) = v.iter().find(|&&i| i.abs() > n) {
            return Err(ExactError::SupportOutsideBox(Site2D::layer(site)));
        }
        let window = crate::lattice::LayerInterval::new(-n, n).unwrap();
        let base: Vec<Spin> = window.sites().map(|i| omega.spin(i)).collect();
        let make = |assign: &[Spin]| {
            let mut vals = base.clone();
            for (idx, &site) in v.iter().enumerate() {
                vals[(site + n) as usize] = assign[idx];
            }
            LayerConfig::new(window, vals, PLUS).unwrap()
        };
        // The box boundary continues ω's fill: a conditioning configuration
        // pinned to −1 beyond its window is approximated by the minus state.
        let boundary = if omega.fill == PLUS {
            Boundary::Plus
        } else {
            Boundary::Minus
        };
        let target = self.log_partition(
            &BoxProblem::new(n, beta, h, boundary).with_frozen_layer(make(sigma_v)),
        )?;
        // log-sum-exp over all assignments on v.
        let mut logs = Vec::with_capacity(1 << v.len());
        for mask in 0u32..(1 << v.len()) {
            let assign: Vec<Spin> = (0..v.len())
                .map(|b| if mask >> b & 1 == 1 { PLUS } else { MINUS })
                .collect();
            logs.push(self.log_partition(
                &BoxProblem::new(n, beta, h, boundary).with_frozen_layer(make(&assign)),
            )?);
        }
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom = m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        Ok(target - denom)
    }

    /// Max deviation of single-site conditionals from the analytic heat-bath
    /// form, over all 16 neighbor configurations of a free interior site.
    pub fn dlr_check(&self, p: &BoxProblem, x: Site2D) -> Result<f64, ExactError> {
        if !p.in_box(x) || p.frozen_spin(x).is_some() {
            return Err(ExactError::NotFree(x));
        }
        let nbrs = x.neighbors();
        for t in nbrs {
            if !p.in_box(t) {
                return Err(ExactError::NotFree(t));
            }
        }
        let mut worst = 0.0f64;
        for mask in 0u32..16 {
            let cfg: Vec<Spin> = (0..4)
                .map(|b| if mask >> b & 1 == 1 { PLUS } else { MINUS })
                .collect();
            // Skip configurations contradicting frozen neighbor spins.
            if nbrs
                .iter()
                .zip(&cfg)
                .any(|(&t, &c)| p.frozen_spin(t).map_or(false, |v| v != c))
            {
                continue;
            }
            let ind = Observable::product(
                nbrs.iter()
                    .zip(&cfg)
                    .map(|(&t, &c)| Observable::indicator(t, c)),
            );
            let ind_plus = ind.clone().times(Observable::indicator(x, PLUS));
            let v = self.expectations(p, &[ind_plus, ind])?;
            if v[1] == 0.0 {
                continue;
            }
            let got = v[0] / v[1];
            let s: i32 = cfg.iter().map(|&c| c as i32).sum();
            let want = 1.0 / (1.0 + (-2.0 * p.beta * s as f64 - 2.0 * p.h).exp());
            worst = worst.max((got - want).abs());
        }
        Ok(worst)
    }
}
