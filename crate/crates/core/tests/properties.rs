use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use synthpanel::dgp::{simulate_factor_panel, DgpSpec};
use synthpanel::gsc::{gsc_fit, FactorCount};
use synthpanel::placebo::{
    p_value_left, p_value_two_sided, rmspe_ratio_p, EntryStatus, Horizon, PlaceboDistribution, PlaceboEntry,
    PlaceboStats, Statistic,
};
use synthpanel::scm::{solve_weights, weighted_loss, PredictorMatrices, VMatrix};

fn instance(k: usize, j: usize, vals: &[f64], v: &[f64]) -> (PredictorMatrices, VMatrix) {
    let x1 = DVector::from_fn(k, |r, _| vals[r]);
    let x0 = DMatrix::from_fn(k, j, |r, c| vals[k + r * j + c]);
    let pred = PredictorMatrices::new(
        x1,
        x0,
        (0..k).map(|r| format!("x{r}")).collect(),
        (0..j).map(|c| format!("d{c}")).collect(),
    )
    .unwrap();
    (pred, VMatrix::new(v[..k].to_vec()).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..=6, 2usize..=8).prop_flat_map(|(k, j)| {
        (
            Just(k),
            Just(j),
            prop::collection::vec(-5.0f64..5.0, k * (j + 1)),
            prop::collection::vec(0.01f64..1.0, k),
        )
    })
}

fn dist(stats: &[(f64, f64, f64, f64)]) -> PlaceboDistribution {
    PlaceboDistribution {
        outcome: "y".into(),
        t0: 0,
        periods: Vec::new(),
        entries: stats
            .iter()
            .enumerate()
            .map(|(i, &(t1, end, avg, ratio))| PlaceboEntry {
                unit: format!("u{i}"),
                is_treated: i == 0,
                status: EntryStatus::Ok,
                stats: Some(PlaceboStats {
                    rmspe_pre: 1.0,
                    rmspe_post: ratio,
                    rmspe_ratio: Some(ratio),
                    gap_t0_plus_1: t1,
                    gap_end: end,
                    average_post_gap: avg,
                }),
                fit: None,
            })
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 96, ..ProptestConfig::default() })]

    #[test]
    fn weights_are_feasible((k, j, vals, v) in dims()) {
        let (pred, v) = instance(k, j, &vals, &v);
        let w = solve_weights(&pred, &v).unwrap();
        prop_assert!(w.weights.iter().all(|&x| x >= 0.0));
        prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    /// Shifting and scaling every unit leaves the simplex solution unchanged.
    #[test]
    fn weights_affine_equivariant((k, j, vals, v) in dims(), a in -10.0f64..10.0, b in 0.1f64..10.0) {
        let (pred, vm) = instance(k, j, &vals, &v);
        let moved: Vec<f64> = vals.iter().map(|x| a + b * x).collect();
        let (pred2, _) = instance(k, j, &moved, &v);
        let w1 = solve_weights(&pred, &vm).unwrap();
        let w2 = solve_weights(&pred2, &vm).unwrap();
        let l1 = weighted_loss(&pred, &vm, &w1.weights);
        let l2 = weighted_loss(&pred2, &vm, &w2.weights);
        prop_assert!((l2 - b * b * l1).abs() <= 1e-7 * (1.0 + b * b * l1), "{l1} {l2}");
        // the moved problem's solution is optimal for the original one
        let cross = weighted_loss(&pred, &vm, &w2.weights);
        prop_assert!(cross <= l1 + 1e-7 * (1.0 + l1));
    }

    /// Reordering donors reorders the weights and keeps the objective.
    #[test]
    fn donor_permutation((k, j, vals, v) in dims(), shift in 1usize..8) {
        let (pred, vm) = instance(k, j, &vals, &v);
        let perm: Vec<usize> = (0..j).map(|c| (c + shift) % j).collect();
        let x0 = DMatrix::from_fn(k, j, |r, c| pred.x0[(r, perm[c])]);
        let donors = perm.iter().map(|&c| pred.donors[c].clone()).collect();
        let pred2 = PredictorMatrices::new(pred.x1.clone(), x0, pred.labels.clone(), donors).unwrap();
        let w1 = solve_weights(&pred, &vm).unwrap();
        let w2 = solve_weights(&pred2, &vm).unwrap();
        let l1 = weighted_loss(&pred, &vm, &w1.weights);
        let l2 = weighted_loss(&pred2, &vm, &w2.weights);
        prop_assert!((l1 - l2).abs() <= 1e-8 * (1.0 + l1));
        // unique optimum when the donor columns are affinely independent in k ≥ j dimensions
        if k >= j {
            for d in &pred.donors {
                prop_assert!((w1.get(d).unwrap() - w2.get(d).unwrap()).abs() < 1e-5, "{d}");
            }
        }
    }

    /// Permutation p-values depend only on ranks.
    #[test]
    fn p_values_scale_invariant(
        stats in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0, 0.1f64..5.0), 4..20),
        c in 0.01f64..100.0,
    ) {
        let d1 = dist(&stats);
        let scaled: Vec<_> = stats.iter().map(|&(a, b, e, r)| (c * a, c * b, c * e, c * r)).collect();
        let d2 = dist(&scaled);
        let n = stats.len() as f64;
        for (p, q) in [
            (p_value_left(&d1, Horizon::T0Plus1).unwrap(), p_value_left(&d2, Horizon::T0Plus1).unwrap()),
            (p_value_left(&d1, Horizon::EndOfSample).unwrap(), p_value_left(&d2, Horizon::EndOfSample).unwrap()),
            (
                p_value_two_sided(&d1, Statistic::AveragePostGap).unwrap(),
                p_value_two_sided(&d2, Statistic::AveragePostGap).unwrap(),
            ),
            (rmspe_ratio_p(&d1).unwrap(), rmspe_ratio_p(&d2).unwrap()),
        ] {
            prop_assert_eq!(p.count, q.count);
            prop_assert!(p.count >= 1 && (p.p * n - p.count as f64).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    /// Adding a constant to every unit leaves the factor-model ATT unchanged;
    /// scaling multiplies it.
    #[test]
    fn gsc_affine_equivariant(seed in 0u64..10_000, a in -5.0f64..5.0, b in 0.5f64..4.0) {
        let sim = simulate_factor_panel(&DgpSpec { seed, ..Default::default() }.with_constant_effect(-0.2)).unwrap();
        let y = sim.panel.matrix("y").unwrap();
        let moved = sim.panel.with_outcome("y", y.map(|v| a + b * v));
        let g1 = gsc_fit(&sim.panel, "y", FactorCount::Fixed(2), None).unwrap();
        let g2 = gsc_fit(&moved, "y", FactorCount::Fixed(2), None).unwrap();
        prop_assert!((g2.average_att - b * g1.average_att).abs() < 1e-6 * b, "{} {}", g1.average_att, g2.average_att);
    }
}
