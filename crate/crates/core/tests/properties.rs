use approx::assert_relative_eq;
use modavg::ctp::{is_admissible, Analysis, AnalysisMode, DEFAULT_SEARCH_BUDGET};
use modavg::inference::{
    log_po_to_p_adjusted_raw, log_po_to_p_unadjusted, model_averaged_log_po_mask, p_to_log_po, Hyperparams,
    NullHypothesis,
};
use modavg::linmodel::{fit_submodel, scan_all_models, Dataset, ModelId, NuisanceSpec, VarianceMode};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `nu` candidates with pairwise correlation near `r`; the first carries `beta`.
fn dataset(seed: u64, n: usize, nu: usize, r: f64, beta: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, nu + 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = DMatrix::from_fn(n, nu, |i, j| r.sqrt() * x[(i, nu)] + (1.0 - r).sqrt() * x[(i, j)]);
    let y = (0..n).map(|i| beta * x[(i, 0)] + rng.sample::<f64, _>(StandardNormal)).collect();
    let names = (0..nu).map(|j| format!("v{j}")).collect();
    Dataset::new(y, x, names, NuisanceSpec::new(true, VarianceMode::Profiled)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn p_value_round_trip(logp in -25.0f64..-0.1, k in 1usize..6, mu in 0.01f64..2.0, n in 10usize..100_000) {
        let hyper = Hyperparams::new(mu, 1.0, 9.0, n).unwrap();
        let p = logp.exp();
        let lp = p_to_log_po(p, k, &hyper).unwrap();
        assert_relative_eq!(log_po_to_p_unadjusted(lp, k, &hyper), p, max_relative = 1e-8);
    }

    #[test]
    fn adjustment_never_helps(lp in -5.0f64..60.0, nu in 1usize..40, mu in 0.01f64..1.0) {
        let hyper = Hyperparams::new(mu, 1.0, 9.0, 500).unwrap();
        prop_assert!(log_po_to_p_adjusted_raw(lp, nu, &hyper) >= log_po_to_p_adjusted_raw(lp, 1, &hyper));
    }

    #[test]
    fn posterior_odds_grow_with_the_tested_set(seed in any::<u64>(), a in 1u64..32, b in 1u64..32) {
        let data = dataset(seed, 60, 5, 0.5, 0.3);
        let hyper = Hyperparams::new(0.2, 1.0, 9.0, 60).unwrap();
        let scan = scan_all_models(&data, &hyper).unwrap();
        let small = model_averaged_log_po_mask(&scan.log_po, a).unwrap();
        let big = model_averaged_log_po_mask(&scan.log_po, a | b).unwrap();
        prop_assert!(big >= small - 1e-12, "{big} < {small}");
    }

    #[test]
    fn column_scaling_leaves_evidence_unchanged(seed in any::<u64>(), scale in 0.01f64..100.0, s in 1u64..8) {
        let data = dataset(seed, 40, 3, 0.3, 0.5);
        let mut x = data.x().clone();
        x.column_mut(1).scale_mut(scale);
        let scaled = Dataset::new(data.y().to_vec(), x, data.names().to_vec(), data.nuisance().clone()).unwrap();
        let a = fit_submodel(&data, ModelId(s)).unwrap().log_mlr;
        let b = fit_submodel(&scaled, ModelId(s)).unwrap().log_mlr;
        assert_relative_eq!(a, b, epsilon = 1e-9, max_relative = 1e-9);
    }

    #[test]
    fn significant_groups_are_minimal_and_admissible(seed in any::<u64>(), rho in 0.2f64..1.0) {
        let data = dataset(seed, 80, 6, 0.6, 0.35);
        let hyper = Hyperparams::new(0.1, 1.0, 3.0, 80).unwrap();
        let a = Analysis::new(&data, &hyper, AnalysisMode::Full).unwrap();
        let policy = a.grouping(rho).unwrap();
        let found = a.minimal_significant_groups(hyper.tau, 6, &policy, DEFAULT_SEARCH_BUDGET).unwrap();
        let log_tau = hyper.tau.ln();
        for (i, g) in found.iter().enumerate() {
            let null = NullHypothesis::new(g.clone(), 6).unwrap();
            prop_assert!(is_admissible(&null, &policy));
            prop_assert!(model_averaged_log_po_mask(&a.scan.log_po, null.mask()).unwrap() >= log_tau);
            for (k, h) in found.iter().enumerate() {
                prop_assert!(i == k || !h.iter().all(|j| g.contains(j)), "{h:?} inside {g:?}");
            }
            for drop in g {
                let sub: Vec<usize> = g.iter().copied().filter(|j| j != drop).collect();
                if sub.is_empty() {
                    continue;
                }
                let sub = NullHypothesis::new(sub, 6).unwrap();
                if is_admissible(&sub, &policy) {
                    prop_assert!(model_averaged_log_po_mask(&a.scan.log_po, sub.mask()).unwrap() < log_tau);
                }
            }
        }
    }
}
