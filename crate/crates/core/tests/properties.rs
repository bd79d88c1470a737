//! Randomized structural invariants: fast, engine-free properties of the
//! lattice bookkeeping, the ℓ-profile machinery, the decimation margins,
//! and the CLI config round-trip.

use std::collections::BTreeSet;

use proptest::prelude::*;

use layergibbs::cli::RunConfig;
use layergibbs::convergence::{ell, Direction};
use layergibbs::decimation::{make_mask, mask_margin, DecimationScheme};
use layergibbs::lattice::{
    enumerate_telescope_cell, telescope_decompose, LayerConfig, LayerInterval, RadiusFn, MINUS,
    PLUS,
};

fn interval() -> impl Strategy<Value = LayerInterval> {
    (-8i32..=8, 0i32..=10).prop_map(|(j, len)| LayerInterval::new(j, j + len).unwrap())
}

fn config() -> impl Strategy<Value = LayerConfig> {
    (interval(), any::<u32>(), any::<bool>()).prop_map(|(w, bits, plus_fill)| {
        let values = (0..w.width())
            .map(|t| if bits >> (t % 32) & 1 == 1 { MINUS } else { PLUS })
            .collect();
        LayerConfig::new(w, values, if plus_fill { PLUS } else { MINUS }).unwrap()
    })
}

proptest! {
    /// ℓ grows with the threshold: a stricter plus-density demand can only
    /// push the domination length out.
    #[test]
    fn ell_is_monotone_in_alpha(
        xi in config().prop_map(|c| c.with_fill(PLUS)),
        i in -8i32..=8,
        a1 in 1.0f64..1.12,
        a2 in 1.0f64..1.12,
        dir in prop_oneof![Just(Direction::Plus), Just(Direction::Minus)],
    ) {
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let l_lo = ell(i, &xi, lo, dir, false).unwrap();
        let l_hi = ell(i, &xi, hi, dir, false).unwrap();
        prop_assert!(l_lo <= l_hi, "ell({lo}) = {l_lo} > ell({hi}) = {l_hi}");
    }

    /// ℓ shrinks pointwise when a minus flips to plus.
    #[test]
    fn ell_is_antitone_in_the_configuration(
        xi in config().prop_map(|c| c.with_fill(PLUS)),
        i in -8i32..=8,
        flip in -8i32..=8,
        dir in prop_oneof![Just(Direction::Plus), Just(Direction::Minus)],
    ) {
        let flip = flip.clamp(xi.window.j, xi.window.k);
        let raised = xi.with_spin(flip, PLUS);
        let before = ell(i, &xi, 1.0, dir, false).unwrap();
        let after = ell(i, &raised, 1.0, dir, false).unwrap();
        prop_assert!(after <= before);
    }

    /// Every nonempty set inside a window lands in exactly one telescope
    /// cell, and that cell is the one its decomposition names.
    #[test]
    fn telescope_cells_partition_finite_sets(bits in 1u32..(1 << 9)) {
        let a: Vec<i32> = (0..9).filter(|&b| bits >> b & 1 == 1).map(|b| b - 4).collect();
        let (i, m) = telescope_decompose(&a, RadiusFn::Linear).unwrap();
        let cell = enumerate_telescope_cell(i, m, RadiusFn::Linear);
        prop_assert!(cell.contains(&a));
        let mut homes = 0;
        for ci in -8i32..=8 {
            for cm in 0..=9u32 {
                if enumerate_telescope_cell(ci, cm, RadiusFn::Linear).contains(&a) {
                    homes += 1;
                }
            }
        }
        prop_assert_eq!(homes, 1);
    }

    /// The strong margin is the half margin with the minus weight doubled:
    /// strong(k) = 2·half(k) − 2βk for every k.
    #[test]
    fn mask_margins_obey_the_doubling_identity(
        beta in 0.05f64..1.5,
        b in 2i64..=8,
        k_max in 1u32..=60,
        xi in config(),
    ) {
        let mask = make_mask(&DecimationScheme::Regular { b }, LayerInterval::new(0, k_max as i32).unwrap()).unwrap();
        let m = mask_margin(beta, &mask, &xi, k_max);
        for row in &m.rows {
            let expect = 2.0 * row.half - 2.0 * beta * row.k as f64;
            prop_assert!((row.strong - expect).abs() < 1e-9);
        }
    }

    /// Random masks restrict consistently: the mask of a subwindow is the
    /// restriction of the mask of the surrounding window.
    #[test]
    fn random_masks_restrict_consistently(
        seed in any::<u64>(),
        p in 0.0f64..=1.0,
        outer in interval(),
    ) {
        let scheme = DecimationScheme::Random { p, mask_seed: seed };
        let big = make_mask(&scheme, outer).unwrap();
        let inner = LayerInterval::new(outer.j, outer.j + (outer.k - outer.j) / 2).unwrap();
        let small = make_mask(&scheme, inner).unwrap();
        let expected: BTreeSet<i32> = big.iter().copied().filter(|&i| inner.contains(i)).collect();
        prop_assert_eq!(small, expected);
    }

    /// Config round-trip: serialize → parse is the identity.
    #[test]
    fn run_config_round_trips_through_json(
        beta in 0.0f64..2.0,
        h in 0.0f64..1.0,
        n in 1i32..16,
        sweeps in 100u64..1_000_000,
        seed in any::<u64>(),
    ) {
        let mut cfg = RunConfig::default();
        cfg.beta = beta;
        cfg.h = h;
        cfg.n = n;
        cfg.sweeps = sweeps;
        cfg.seed = seed;
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(cfg, back);
    }
}
