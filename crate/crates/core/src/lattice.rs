//! Lattice geometry: 2D sites, layer intervals and configurations, and the
//! telescoping interval family `L_{i,m} = [i - g(m), i]`.
//!
//! The layer is the row `y = 0`; layer sites are identified with integers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Spin = i8;

pub const PLUS: Spin = 1;
pub const MINUS: Spin = -1;

#[derive(Debug, Error, PartialEq)]
pub enum LatticeError {
    #[error("empty set has no decomposition")]
    EmptySet,
    #[error("set not contained in any telescope cell under the chosen radius function")]
    NoCell,
    #[error("interval endpoints out of order: [{0}, {1}]")]
    BadInterval(i32, i32),
    #[error("layer config values length {got} does not match window width {want}")]
    BadWindow { got: usize, want: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site2D {
    pub x: i32,
    pub y: i32,
}

impl Site2D {
    pub fn new(x: i32, y: i32) -> Self {
        Site2D { x, y }
    }

    pub fn layer(i: i32) -> Self {
        Site2D { x: i, y: 0 }
    }

    pub fn neighbors(&self) -> [Site2D; 4] {
        [
            Site2D::new(self.x - 1, self.y),
            Site2D::new(self.x + 1, self.y),
            Site2D::new(self.x, self.y - 1),
            Site2D::new(self.x, self.y + 1),
        ]
    }
}

/// A finite interval `[j, k]` of layer sites, `j <= k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerInterval {
    pub j: i32,
    pub k: i32,
}

impl LayerInterval {
    pub fn new(j: i32, k: i32) -> Result<Self, LatticeError> {
        if j > k {
            return Err(LatticeError::BadInterval(j, k));
        }
        Ok(LayerInterval { j, k })
    }

    pub fn len(&self) -> u32 {
        (self.k - self.j) as u32
    }

    pub fn width(&self) -> usize {
        (self.k - self.j + 1) as usize
    }

    pub fn contains(&self, i: i32) -> bool {
        self.j <= i && i <= self.k
    }

    pub fn sites(&self) -> impl Iterator<Item = i32> {
        self.j..=self.k
    }

    pub fn shifted(&self, a: i32) -> Self {
        LayerInterval {
            j: self.j + a,
            k: self.k + a,
        }
    }
}

/// A ±1 assignment on a finite window of the layer, with an explicit fill
/// spin outside the window.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerConfig {
    pub window: LayerInterval,
    pub values: Vec<Spin>,
    pub fill: Spin,
}

impl LayerConfig {
    pub fn new(window: LayerInterval, values: Vec<Spin>, fill: Spin) -> Result<Self, LatticeError> {
        if values.len() != window.width() {
            return Err(LatticeError::BadWindow {
                got: values.len(),
                want: window.width(),
            });
        }
        debug_assert!(values.iter().all(|&s| s == PLUS || s == MINUS));
        Ok(LayerConfig {
            window,
            values,
            fill,
        })
    }

    pub fn uniform(window: LayerInterval, spin: Spin, fill: Spin) -> Self {
        LayerConfig {
            values: vec![spin; window.width()],
            window,
            fill,
        }
    }

    pub fn all_plus(window: LayerInterval) -> Self {
        Self::uniform(window, PLUS, PLUS)
    }

    pub fn all_minus(window: LayerInterval) -> Self {
        Self::uniform(window, MINUS, PLUS)
    }

    /// Alternating +,-,+,- anchored so that even sites carry +.
    pub fn alternating(window: LayerInterval) -> Self {
        let values = window
            .sites()
            .map(|i| if i.rem_euclid(2) == 0 { PLUS } else { MINUS })
            .collect();
        LayerConfig {
            window,
            values,
            fill: PLUS,
        }
    }

    pub fn spin(&self, i: i32) -> Spin {
        if self.window.contains(i) {
            self.values[(i - self.window.j) as usize]
        } else {
            self.fill
        }
    }

    pub fn with_fill(&self, fill: Spin) -> Self {
        LayerConfig {
            fill,
            ..self.clone()
        }
    }

    /// Override a single site (must lie in the window).
    pub fn with_spin(&self, i: i32, s: Spin) -> Self {
        assert!(self.window.contains(i), "site outside window");
        let mut c = self.clone();
        c.values[(i - self.window.j) as usize] = s;
        c
    }

    /// Plus-fill restriction `ξ^S`: keep ξ on `keep`, set + elsewhere.
    pub fn restricted_to(&self, keep: &[i32]) -> Self {
        let values = self
            .window
            .sites()
            .map(|i| if keep.contains(&i) { self.spin(i) } else { PLUS })
            .collect();
        LayerConfig {
            window: self.window,
            values,
            fill: PLUS,
        }
    }

    pub fn shifted(&self, a: i32) -> Self {
        LayerConfig {
            window: self.window.shifted(a),
            values: self.values.clone(),
            fill: self.fill,
        }
    }

    pub fn minus_sites(&self) -> Vec<i32> {
        self.window
            .sites()
            .filter(|&i| self.spin(i) == MINUS)
            .collect()
    }
}

/// Radius function `g` for the telescoping sets `L_{i,m} = [i - g(m), i]`.
///
/// `g` must be strictly increasing with `g(0) = 0`; the default `g(m) = m`
/// is all the one-dimensional analysis needs, the scaled variant exposes the
/// tuning freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RadiusFn {
    Linear,
    /// g(m) = c * m for integer c >= 1.
    Scaled(u32),
}

impl Default for RadiusFn {
    fn default() -> Self {
        RadiusFn::Linear
    }
}

impl RadiusFn {
    pub fn g(&self, m: u32) -> u32 {
        match self {
            RadiusFn::Linear => m,
            RadiusFn::Scaled(c) => c * m,
        }
    }

    /// Smallest m with g(m) >= d, if any.
    fn inv_ceil(&self, d: u32) -> Option<u32> {
        match self {
            RadiusFn::Linear => Some(d),
            RadiusFn::Scaled(c) => {
                if *c == 0 {
                    None
                } else {
                    Some(d.div_ceil(*c))
                }
            }
        }
    }
}

/// Telescoping set `L_{i,m}`: anchor `i`, radius index `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TelescopeSet {
    pub anchor: i32,
    pub m: u32,
    pub g: RadiusFn,
}

impl TelescopeSet {
    pub fn new(anchor: i32, m: u32) -> Self {
        TelescopeSet {
            anchor,
            m,
            g: RadiusFn::Linear,
        }
    }

    pub fn interval(&self) -> LayerInterval {
        LayerInterval {
            j: self.anchor - self.g.g(self.m) as i32,
            k: self.anchor,
        }
    }

    pub fn sites(&self) -> Vec<i32> {
        self.interval().sites().collect()
    }
}

/// The unique `(i, m)` with `A ∋ i`, `A ⊄ L_{i,m-1}`, `A ⊂ L_{i,m}`.
///
/// `i` is the maximum of `A` and `m` is the smallest radius index whose
/// interval covers the diameter of `A`.
pub fn telescope_decompose(a: &[i32], g: RadiusFn) -> Result<(i32, u32), LatticeError> {
    if a.is_empty() {
        return Err(LatticeError::EmptySet);
    }
    let i = *a.iter().max().unwrap();
    let lo = *a.iter().min().unwrap();
    let d = (i - lo) as u32;
    let m = g.inv_ceil(d).ok_or(LatticeError::NoCell)?;
    // A ⊄ L_{i,m-1} requires g(m-1) < d when m > 0.
    if m > 0 && g.g(m - 1) >= d {
        return Err(LatticeError::NoCell);
    }
    Ok((i, m))
}

/// All sets `R` with `R ∋ i`, `R ⊂ L_{i,m}`, `R ⊄ L_{i,m-1}`, as sorted
/// site lists.
pub fn enumerate_telescope_cell(i: i32, m: u32, g: RadiusFn) -> Vec<Vec<i32>> {
    if m == 0 {
        return vec![vec![i]];
    }
    let outer = g.g(m) as i32;
    let inner = g.g(m - 1) as i32;
    // Candidate sites i-outer .. i; must contain i and at least one site
    // strictly left of i-inner.
    let span: Vec<i32> = (i - outer..i).collect();
    let n = span.len();
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        let mut set: Vec<i32> = (0..n).filter(|&b| mask >> b & 1 == 1).map(|b| span[b]).collect();
        if !set.iter().any(|&s| s < i - inner) {
            continue;
        }
        set.push(i);
        out.push(set);
    }
    out
}
