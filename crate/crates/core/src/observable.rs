//! Product observables over finitely many sites.
//!
//! Everything the potential formulas need — spins, indicators, exponential
//! factors exp(2βσ) — is a product of per-site factors, so that expectations
//! factorize over conditionally independent regions of a constrained box.

use crate::lattice::{Site2D, Spin, PLUS};

/// One multiplicative factor living on a single site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteFactor {
    pub site: Site2D,
    pub plus: f64,
    pub minus: f64,
}

impl SiteFactor {
    pub fn eval(&self, s: Spin) -> f64 {
        if s == PLUS {
            self.plus
        } else {
            self.minus
        }
    }
}

/// A product of site factors (empty product = the constant observable 1).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Observable {
    pub factors: Vec<SiteFactor>,
}

impl Observable {
    pub fn one() -> Self {
        Observable { factors: vec![] }
    }

    /// The spin at a site, as an observable.
    pub fn spin(site: Site2D) -> Self {
        Observable {
            factors: vec![SiteFactor {
                site,
                plus: 1.0,
                minus: -1.0,
            }],
        }
    }

    /// Indicator of the spin at `site` equalling `s`.
    pub fn indicator(site: Site2D, s: Spin) -> Self {
        let (plus, minus) = if s == PLUS { (1.0, 0.0) } else { (0.0, 1.0) };
        Observable {
            factors: vec![SiteFactor { site, plus, minus }],
        }
    }

    /// The factor exp(2βσ(site)).
    pub fn exp_coupling(site: Site2D, beta: f64) -> Self {
        Observable {
            factors: vec![SiteFactor {
                site,
                plus: (2.0 * beta).exp(),
                minus: (-2.0 * beta).exp(),
            }],
        }
    }

    pub fn product<I: IntoIterator<Item = Observable>>(parts: I) -> Self {
        let mut factors = Vec::new();
        for p in parts {
            factors.extend(p.factors);
        }
        Observable { factors }
    }

    pub fn times(mut self, other: Observable) -> Self {
        self.factors.extend(other.factors);
        self
    }

    pub fn support(&self) -> Vec<Site2D> {
        let mut s: Vec<Site2D> = self.factors.iter().map(|f| f.site).collect();
        s.sort();
        s.dedup();
        s
    }

    /// Evaluate on an explicit assignment (used by brute-force oracles).
    pub fn eval<F: Fn(Site2D) -> Spin>(&self, spin_at: F) -> f64 {
        self.factors.iter().map(|f| f.eval(spin_at(f.site))).product()
    }

    /// Strictly positive on every configuration (needed by log-ratio paths).
    pub fn is_positive(&self) -> bool {
        self.factors.iter().all(|f| f.plus > 0.0 && f.minus > 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::MINUS;

    #[test]
    fn spin_and_indicator() {
        let x = Site2D::new(0, 1);
        assert_eq!(Observable::spin(x).eval(|_| PLUS), 1.0);
        assert_eq!(Observable::spin(x).eval(|_| MINUS), -1.0);
        assert_eq!(Observable::indicator(x, MINUS).eval(|_| MINUS), 1.0);
        assert_eq!(Observable::indicator(x, MINUS).eval(|_| PLUS), 0.0);
    }

    #[test]
    fn exp_coupling_values() {
        let x = Site2D::new(2, 1);
        let f = Observable::exp_coupling(x, 0.6);
        assert!((f.eval(|_| PLUS) - (1.2f64).exp()).abs() < 1e-15);
        assert!((f.eval(|_| MINUS) - (-1.2f64).exp()).abs() < 1e-15);
        assert!(f.is_positive());
        assert!(!Observable::indicator(x, PLUS).is_positive());
    }

    #[test]
    fn product_factorizes() {
        let a = Site2D::new(0, 0);
        let b = Site2D::new(1, 0);
        let f = Observable::spin(a).times(Observable::spin(b));
        assert_eq!(f.eval(|s| if s == a { PLUS } else { MINUS }), -1.0);
        assert_eq!(f.support(), vec![a, b]);
    }
}
