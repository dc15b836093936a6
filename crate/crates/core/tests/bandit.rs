use dmliv::bandit::{action_bounds, evaluate_policy, optimal_action_demand, ActionRule, Policy, RandomPolicy};
use dmliv::datagen::{generate_demand, psi_t, DemandConfig, ObservationSet};
use dmliv::learners::FnCounterfactual;
use proptest::prelude::*;

fn demand(n: usize, seed: u64) -> ObservationSet {
    generate_demand(&DemandConfig { n_samples: n, seed, ..Default::default() }).unwrap()
}

/// The true counterfactual function in the stored units of `data`.
fn truth_model(data: &ObservationSet) -> FnCounterfactual<impl Fn(&[f64], &[f64]) -> f64 + '_> {
    FnCounterfactual::new(2, move |c: &[f64], a: &[f64]| data.h0_stored(c, a[0]).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn greedy_action_ignores_context_only_shifts(
        c0 in -3.0f64..3.0,
        c1 in -3.0f64..3.0,
        amp in -50.0f64..50.0,
        grid in 2usize..300,
        seed in any::<u64>(),
    ) {
        let base = |c: &[f64], a: &[f64]| -(a[0] - c[0]).powi(2) + c[1] * a[0];
        let shifted = move |c: &[f64], a: &[f64]| base(c, a) + amp * (c[0].sin() + c[1] * c[1]);
        let p = Policy::new(FnCounterfactual::new(2, base), 2, (-5.0, 5.0), grid, seed).unwrap();
        let q = Policy::new(FnCounterfactual::new(2, shifted), 2, (-5.0, 5.0), grid, seed).unwrap();
        prop_assert_eq!(p.act(&[c0, c1]), q.act(&[c0, c1]));
    }

    #[test]
    fn demand_oracle_matches_the_sign_of_the_price_slope(t in 0.0f64..12.0, s in 1u8..=7, lo in 0.0f64..30.0, w in 0.5f64..40.0) {
        let s = s as f64;
        let hi = lo + w;
        let slope = s * psi_t(t) - 2.0;
        let expected = if slope > 0.0 { hi } else { lo };
        prop_assert_eq!(optimal_action_demand(t, s, (lo, hi)).unwrap(), expected);
    }
}

#[test]
fn finer_grids_do_not_lose_value() {
    let data = demand(2000, 3);
    let bounds = action_bounds(&data, 0.1).unwrap();
    let h = truth_model(&data);
    let mut last = f64::INFINITY;
    for grid in [8, 64, 512, 4096] {
        let p = Policy::new(&h, 2, bounds, grid, 11).unwrap();
        let e = evaluate_policy(&p, &data, bounds, 1000, 0.0, 5).unwrap().known().cloned().unwrap();
        assert!(e.suboptimality <= last + 3.0 * e.suboptimality_se.max(1e-9), "grid {grid}");
        assert!(e.suboptimality >= -3.0 * e.suboptimality_se - 1e-9);
        last = e.suboptimality;
    }
    assert!(last < 0.05, "subopt at the finest grid {last}");
}

#[test]
fn true_model_is_near_optimal_and_random_is_not() {
    let data = demand(2000, 4);
    let bounds = action_bounds(&data, 0.1).unwrap();
    let h = truth_model(&data);
    let p = Policy::new(&h, 2, bounds, 1024, 1).unwrap();
    let r = RandomPolicy { bounds, seed: 2 };
    for shift in [0.0, 1.0] {
        let e = evaluate_policy(&p, &data, bounds, 2000, shift, 6).unwrap().known().cloned().unwrap();
        let er = evaluate_policy(&r, &data, bounds, 2000, shift, 6).unwrap().known().cloned().unwrap();
        assert!(e.suboptimality >= -3.0 * e.suboptimality_se - 1e-9);
        assert!(e.suboptimality < 0.02 * er.suboptimality, "{} vs {}", e.suboptimality, er.suboptimality);
        assert_eq!(e.optimal_value, er.optimal_value);
    }
}

#[test]
fn boundary_optimum_is_exact_at_hand_picked_contexts() {
    // psi(5) = -1, so the slope s * psi - 2 is negative for every s.
    assert_eq!(optimal_action_demand(5.0, 3.0, (10.0, 40.0)).unwrap(), 10.0);
    // psi(0) is negative too; psi(10) = 1/12 gives s / 12 - 2 < 0 for s <= 7.
    assert_eq!(optimal_action_demand(0.0, 7.0, (10.0, 40.0)).unwrap(), 10.0);
    assert_eq!(optimal_action_demand(10.0, 7.0, (10.0, 40.0)).unwrap(), 10.0);
    // Past the season psi grows quickly: psi(11) > 2.5, so the top price wins.
    assert_eq!(optimal_action_demand(11.0, 1.0, (10.0, 40.0)).unwrap(), 40.0);
    assert!(optimal_action_demand(5.0, 3.0, (40.0, 10.0)).is_err());
}
