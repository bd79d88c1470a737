//! Golden-value store: exact reference values keyed by a canonical problem
//! hash, regenerated on demand and consulted by regression tests. Only the
//! exact engine writes entries, so stored values are bit-reproducible.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exact::{Boundary, BoxProblem, ExactEngine};
use crate::lattice::{LayerConfig, LayerInterval, RadiusFn, Site2D, MINUS, PLUS};
use crate::observable::Observable;
use crate::potentials::{
    decimated_potential, hamiltonian, telescope_potential_abstract, telescope_potential_closed,
    vacuum_potential, GibbsContext,
};
use crate::thermo::{hamiltonian_free_bc, InteractionCache};

#[derive(Debug, Error)]
pub enum GoldenError {
    #[error("io error on golden store: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed golden store: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("failed to compute golden value for {0}: {1}")]
    Compute(String, String),
}

/// One canonical reference problem; the serialized form is the hash preimage,
/// so field order and contents must stay stable.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum GoldenProblem {
    LogPartition {
        n: i32,
        beta: f64,
        h: f64,
        boundary: String,
    },
    ExpectationFrozenMinus {
        n: i32,
        beta: f64,
    },
    CovarianceAlternating {
        n: i32,
        beta: f64,
    },
    KernelPlusAtOrigin {
        n: i32,
        beta: f64,
    },
    HamiltonianAllMinus {
        n: i32,
        beta: f64,
        j: i32,
        k: i32,
    },
    VacuumPairAllMinus {
        n: i32,
        beta: f64,
    },
    TelescopeAbstractAllMinus {
        n: i32,
        beta: f64,
        i: i32,
        m: u32,
    },
    TelescopeClosedAllMinus {
        n: i32,
        beta: f64,
        j: i32,
        k: i32,
    },
    DecimatedMinusEndpoints {
        n: i32,
        beta: f64,
        b: i64,
        j: i32,
        k: i32,
    },
    FreeHamiltonianAlternating {
        n: i32,
        beta: f64,
        j: i32,
        k: i32,
    },
}

impl GoldenProblem {
    pub fn id(&self) -> String {
        match self {
            GoldenProblem::LogPartition { .. } => "log_partition",
            GoldenProblem::ExpectationFrozenMinus { .. } => "expectation_frozen_minus",
            GoldenProblem::CovarianceAlternating { .. } => "covariance_alternating",
            GoldenProblem::KernelPlusAtOrigin { .. } => "kernel_plus_at_origin",
            GoldenProblem::HamiltonianAllMinus { .. } => "hamiltonian_all_minus",
            GoldenProblem::VacuumPairAllMinus { .. } => "vacuum_pair_all_minus",
            GoldenProblem::TelescopeAbstractAllMinus { .. } => "telescope_abstract_all_minus",
            GoldenProblem::TelescopeClosedAllMinus { .. } => "telescope_closed_all_minus",
            GoldenProblem::DecimatedMinusEndpoints { .. } => "decimated_minus_endpoints",
            GoldenProblem::FreeHamiltonianAlternating { .. } => "free_hamiltonian_alternating",
        }
        .to_string()
    }

    /// Canonical hash of the serialized problem.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("golden problem serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn compute(&self, eng: &ExactEngine) -> Result<f64, GoldenError> {
        let fail = |e: &dyn std::fmt::Display| GoldenError::Compute(self.id(), e.to_string());
        match *self {
            GoldenProblem::LogPartition { n, beta, h, ref boundary } => {
                let b = match boundary.as_str() {
                    "plus" => Boundary::Plus,
                    "minus" => Boundary::Minus,
                    _ => Boundary::Free,
                };
                eng.log_partition(&BoxProblem::new(n, beta, h, b))
                    .map_err(|e| fail(&e))
            }
            GoldenProblem::ExpectationFrozenMinus { n, beta } => {
                let window = LayerInterval::new(-n, n).unwrap();
                let p = BoxProblem::new(n, beta, 0.0, Boundary::Plus)
                    .with_frozen_layer(LayerConfig::all_minus(window));
                eng.expectation(&p, &Observable::exp_coupling(Site2D::new(0, 1), beta))
                    .map(|e| e.value)
                    .map_err(|e| fail(&e))
            }
            GoldenProblem::CovarianceAlternating { n, beta } => {
                let window = LayerInterval::new(-n, n).unwrap();
                let p = BoxProblem::new(n, beta, 0.0, Boundary::Plus)
                    .with_frozen_layer(LayerConfig::alternating(window));
                eng.covariance(
                    &p,
                    &Observable::spin(Site2D::new(-1, 1)),
                    &Observable::spin(Site2D::new(1, 1)),
                )
                .map(|e| e.value)
                .map_err(|e| fail(&e))
            }
            GoldenProblem::KernelPlusAtOrigin { n, beta } => {
                let omega = LayerConfig::all_plus(LayerInterval::new(0, 0).unwrap());
                eng.layer_kernel(&[0], &[PLUS], &omega, n, beta, 0.0)
                    .map_err(|e| fail(&e))
            }
            GoldenProblem::HamiltonianAllMinus { n, beta, j, k } => {
                let ctx = GibbsContext::new(beta, 0.0, n);
                let sites: Vec<i32> = (j..=k).collect();
                let xi = LayerConfig::all_minus(ctx.box_window());
                hamiltonian(&ctx, &sites, &xi, eng)
                    .map(|e| e.value)
                    .map_err(|e| fail(&e))
            }
            GoldenProblem::VacuumPairAllMinus { n, beta } => {
                let ctx = GibbsContext::new(beta, 0.0, n);
                let xi = LayerConfig::all_minus(ctx.box_window());
                vacuum_potential(&ctx, &[0, 1], &xi, eng)
                    .map(|e| e.value)
                    .map_err(|e| fail(&e))
            }
            GoldenProblem::TelescopeAbstractAllMinus { n, beta, i, m } => {
                let ctx = GibbsContext::new(beta, 0.0, n);
                let xi = LayerConfig::all_minus(ctx.box_window());
                telescope_potential_abstract(&ctx, i, m, &xi, RadiusFn::Linear, eng)
                    .map(|e| e.value)
                    .map_err(|e| fail(&e))
            }
            GoldenProblem::TelescopeClosedAllMinus { n, beta, j, k } => {
                let ctx = GibbsContext::new(beta, 0.0, n);
                let xi = LayerConfig::all_minus(ctx.box_window());
                telescope_potential_closed(&ctx, LayerInterval::new(j, k).unwrap(), &xi, eng)
                    .map(|e| e.value)
                    .map_err(|e| fail(&e))
            }
            GoldenProblem::DecimatedMinusEndpoints { n, beta, b, j, k } => {
                let ctx = GibbsContext::new(beta, 0.0, n);
                let mut xi = LayerConfig::all_plus(ctx.box_window());
                xi = xi.with_spin(j, MINUS).with_spin(k, MINUS);
                decimated_potential(&ctx, LayerInterval::new(j, k).unwrap(), &xi, b, eng)
                    .map(|e| e.value)
                    .map_err(|e| fail(&e))
            }
            GoldenProblem::FreeHamiltonianAlternating { n, beta, j, k } => {
                let ctx = GibbsContext::new(beta, 0.0, n);
                let cache = InteractionCache::new(&ctx, eng);
                let v = LayerInterval::new(j, k).unwrap();
                let xi = LayerConfig::alternating(v);
                hamiltonian_free_bc(v, &xi, &cache)
                    .map(|e| e.value)
                    .map_err(|e| fail(&e))
            }
        }
    }
}

/// The reference set regenerated by the `golden-regen` subcommand.
///
/// The decimated case uses b=2 in an n=2 box: wider steps need boxes whose
/// free-spin count exceeds the exact engine's enumeration cap.
pub fn standard_problems() -> Vec<GoldenProblem> {
    vec![
        GoldenProblem::LogPartition {
            n: 1,
            beta: 0.5,
            h: 0.0,
            boundary: "plus".into(),
        },
        GoldenProblem::ExpectationFrozenMinus { n: 2, beta: 0.6 },
        GoldenProblem::CovarianceAlternating { n: 2, beta: 0.6 },
        GoldenProblem::KernelPlusAtOrigin { n: 3, beta: 0.6 },
        GoldenProblem::HamiltonianAllMinus {
            n: 3,
            beta: 0.6,
            j: -1,
            k: 1,
        },
        GoldenProblem::VacuumPairAllMinus { n: 3, beta: 0.6 },
        GoldenProblem::TelescopeAbstractAllMinus {
            n: 3,
            beta: 0.6,
            i: 0,
            m: 1,
        },
        GoldenProblem::TelescopeClosedAllMinus {
            n: 3,
            beta: 0.6,
            j: 0,
            k: 2,
        },
        GoldenProblem::DecimatedMinusEndpoints {
            n: 2,
            beta: 0.6,
            b: 2,
            j: 0,
            k: 2,
        },
        GoldenProblem::FreeHamiltonianAlternating {
            n: 3,
            beta: 0.6,
            j: -2,
            k: 2,
        },
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GoldenEntry {
    pub id: String,
    pub problem: GoldenProblem,
    pub value: f64,
    pub engine: String,
    pub code_version: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct GoldenStore {
    pub entries: BTreeMap<String, GoldenEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GoldenCheck {
    Match,
    Mismatch { stored: f64, got: f64 },
    Missing,
}

impl GoldenStore {
    pub fn load(path: &Path) -> Result<Self, GoldenError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), GoldenError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json)?;
        Ok(())
    }

    /// Recompute every standard problem with the exact engine.
    pub fn regenerate(eng: &ExactEngine) -> Result<Self, GoldenError> {
        let mut entries = BTreeMap::new();
        for p in standard_problems() {
            let value = p.compute(eng)?;
            entries.insert(
                p.hash(),
                GoldenEntry {
                    id: p.id(),
                    problem: p,
                    value,
                    engine: "exact".to_string(),
                    code_version: env!("CARGO_PKG_VERSION").to_string(),
                },
            );
        }
        Ok(GoldenStore { entries })
    }

    pub fn check(&self, problem: &GoldenProblem, got: f64, tol: f64) -> GoldenCheck {
        match self.entries.get(&problem.hash()) {
            None => GoldenCheck::Missing,
            Some(e) if (e.value - got).abs() <= tol => GoldenCheck::Match,
            Some(e) => GoldenCheck::Mismatch {
                stored: e.value,
                got,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_are_stable_and_distinct() {
        let problems = standard_problems();
        let hashes: std::collections::HashSet<String> =
            problems.iter().map(|p| p.hash()).collect();
        assert_eq!(hashes.len(), problems.len());
        // Hash depends only on the canonical serialization.
        assert_eq!(problems[0].hash(), standard_problems()[0].hash());
    }

    #[test]
    fn regenerate_roundtrips_and_checks() {
        let eng = ExactEngine::default();
        let store = GoldenStore::regenerate(&eng).unwrap();
        assert_eq!(store.entries.len(), standard_problems().len());

        let dir = std::env::temp_dir().join(format!("golden_test_{}", std::process::id()));
        let path = dir.join("values.json");
        store.save(&path).unwrap();
        let reloaded = GoldenStore::load(&path).unwrap();
        assert_eq!(store, reloaded);
        std::fs::remove_dir_all(&dir).ok();

        for p in standard_problems() {
            let got = p.compute(&eng).unwrap();
            assert_eq!(reloaded.check(&p, got, 0.0), GoldenCheck::Match, "{}", p.id());
        }
        let p0 = &standard_problems()[0];
        let stored = reloaded.entries[&p0.hash()].value;
        assert!(matches!(
            reloaded.check(p0, stored + 1.0, 1e-9),
            GoldenCheck::Mismatch { .. }
        ));
        let missing = GoldenProblem::LogPartition {
            n: 1,
            beta: 0.123,
            h: 0.0,
            boundary: "free".into(),
        };
        assert_eq!(reloaded.check(&missing, 0.0, 0.0), GoldenCheck::Missing);
    }

    #[test]
    fn committed_store_matches_fresh_computation() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../golden/values.json");
        let store = GoldenStore::load(&path).expect("golden/values.json present at repo root");
        let eng = ExactEngine::default();
        for p in standard_problems() {
            let got = p.compute(&eng).unwrap();
            assert_eq!(store.check(&p, got, 1e-12), GoldenCheck::Match, "{}", p.id());
        }
    }

    #[test]
    fn known_closed_forms_anchor_the_store() {
        let eng = ExactEngine::default();
        // Zero coupling, free boundary: log Z = (#sites)·log 2.
        let p = GoldenProblem::LogPartition {
            n: 1,
            beta: 0.0,
            h: 0.0,
            boundary: "free".into(),
        };
        let v = p.compute(&eng).unwrap();
        assert!((v - 9.0 * std::f64::consts::LN_2).abs() < 1e-12);
        // The closed-form pair potential reference must be ≤ 0.
        let c = GoldenProblem::TelescopeClosedAllMinus {
            n: 3,
            beta: 0.6,
            j: 0,
            k: 2,
        };
        assert!(c.compute(&eng).unwrap() <= 0.0);
    }
}
