use dmliv::datagen::{generate_demand, generate_semisynth, DemandConfig, ObservationSet, SemiSynthConfig};
use dmliv::estimation::{
    counterfactual_mse, fit_method, g_hat, make_partition, DmlivConfig, DmlivEstimate, EstimateRecord, Method,
};
use dmliv::learners::{fit_conditional_density, DensityConfig, FnCounterfactual, RegressorConfig};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn tiny_net(epochs: usize) -> RegressorConfig {
    RegressorConfig { layer_widths: vec![16], epochs, ..RegressorConfig::default() }
}

fn tiny_config() -> DmlivConfig {
    DmlivConfig {
        k_folds: 4,
        outcome: tiny_net(5),
        density: DensityConfig { net: tiny_net(5), n_components: 3, ..DensityConfig::default() },
        stage2: tiny_net(12),
        mc_samples: 4,
        eval_mc_samples: 16,
        ..DmlivConfig::default()
    }
}

fn demand(n: usize, seed: u64) -> ObservationSet {
    generate_demand(&DemandConfig { n_samples: n, seed, ..Default::default() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partitions_are_disjoint_covering_and_balanced(n in 2usize..400, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let p = make_partition(n, k, seed).unwrap();
        prop_assert!(p.validate().is_ok());
        let mut all: Vec<usize> = p.folds().iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = p.folds().iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(p, make_partition(n, k, seed).unwrap());
    }

    #[test]
    fn g_hat_passes_constants_through(value in -1e3f64..1e3, m in 1usize..64, seed in any::<u64>()) {
        let x = Array2::from_shape_fn((200, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let a: Array1<f64> = (0..200).map(|i| (i % 13) as f64 / 3.0).collect();
        let cfg = DensityConfig { net: tiny_net(1), n_components: 2, ..DensityConfig::default() };
        let density = fit_conditional_density(x.view(), a.view(), &cfg, 0).unwrap().model;
        let h = FnCounterfactual::new(1, move |_: &[f64], _: &[f64]| value);
        let g = g_hat(&h, &density, &[0.5], &[1.0], m, seed).unwrap();
        prop_assert!((g - value).abs() <= 1e-12 * value.abs().max(1.0));
    }
}

#[test]
fn fits_replay_bit_for_bit_under_a_fixed_seed() {
    let data = demand(400, 1);
    let cfg = tiny_config();
    for method in Method::ALL {
        let a = fit_method(method, &data, &cfg, 9).unwrap();
        let b = fit_method(method, &data, &cfg, 9).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap(), "{method}");
        assert_eq!(a.epoch_losses, b.epoch_losses);
        let c = fit_method(method, &data, &cfg, 10).unwrap();
        assert_ne!(a.to_json().unwrap(), c.to_json().unwrap());
    }
}

#[test]
fn cross_fitted_nuisances_never_see_their_own_fold() {
    let data = demand(400, 2);
    let est = fit_method(Method::Dmliv, &data, &tiny_config(), 3).unwrap();
    assert_eq!(est.k(), 4);
    est.check_cross_fitting().unwrap();
    for (k, pair) in est.nuisances.iter().enumerate() {
        assert_eq!(pair.train_rows, est.partition.complement(k));
        assert!(pair.s_hat.is_some());
    }
}

#[test]
fn variants_record_their_fold_structure() {
    let data = demand(400, 3);
    let ce = fit_method(Method::CeDmliv, &data, &tiny_config(), 4).unwrap();
    assert_eq!(ce.k(), 1);
    assert_eq!(ce.nuisances[0].train_rows.len(), 400);
    assert!(ce.nuisances[0].s_hat.is_some());
    let naive = fit_method(Method::Naive, &data, &tiny_config(), 4).unwrap();
    assert_eq!(naive.k(), 1);
    assert!(naive.nuisances[0].s_hat.is_none());
}

#[test]
fn stage2_loss_decreases_over_the_first_epochs() {
    let data = demand(1000, 4);
    let cfg = DmlivConfig {
        resample_draws: false,
        sample_size_dropout: false,
        stage2: RegressorConfig {
            dropout_rate: 0.0,
            epochs: 10,
            layer_widths: vec![32, 16],
            ..RegressorConfig::default()
        },
        patience: 100,
        ..tiny_config()
    };
    let est = fit_method(Method::Dmliv, &data, &cfg, 5).unwrap();
    let l = &est.epoch_losses;
    assert_eq!(l.len(), 10);
    assert!(l[9] < l[0], "losses {l:?}");
    assert!(l.iter().all(|v| v.is_finite()));
}

#[test]
fn estimate_records_round_trip_through_json() {
    let data = demand(300, 6);
    let est: DmlivEstimate = fit_method(Method::Dmliv, &data, &tiny_config(), 7).unwrap();
    let rec = EstimateRecord::from_json(&est.to_json().unwrap()).unwrap();
    assert_eq!(rec.partition, est.partition);
    let m1 = counterfactual_mse(&est.model, &data, 500, 1).unwrap();
    let m2 = counterfactual_mse(&rec.model, &data, 500, 1).unwrap();
    assert_eq!(m1, m2);
}

#[test]
fn semisynth_and_tree_fits_run_end_to_end() {
    let data = generate_semisynth(&SemiSynthConfig { n_samples: 600, seed: 1, ..Default::default() }).unwrap();
    let est = fit_method(Method::Dmliv, &data, &tiny_config(), 2).unwrap();
    assert!(counterfactual_mse(&est.model, &data, 500, 3).unwrap().is_finite());

    let mut trees = DmlivConfig::trees();
    trees.k_folds = 3;
    for r in [&mut trees.outcome, &mut trees.density.net, &mut trees.stage2] {
        r.n_trees = 20;
    }
    let est = fit_method(Method::Dmliv, &demand(600, 8), &trees, 2).unwrap();
    assert!(est.final_loss.is_finite());
}

#[test]
fn bad_inputs_are_rejected() {
    let data = demand(10, 1);
    assert!(fit_method(Method::Dmliv, &data, &DmlivConfig { k_folds: 10, ..tiny_config() }, 0).is_err());
    let weak = generate_demand(&DemandConfig { n_samples: 500, iv_strength: 0.0, ..Default::default() }).unwrap();
    assert!(fit_method(Method::Dmliv, &weak, &tiny_config(), 0).is_err());
    let allowed = DmlivConfig { allow_weak_instrument: true, ..tiny_config() };
    assert!(fit_method(Method::Dmliv, &weak, &allowed, 0).is_ok());
}
