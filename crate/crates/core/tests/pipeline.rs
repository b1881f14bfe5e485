use proptest::prelude::*;

use cfdiff::harness::{
    fit_model, fold_split, read_point_estimates, write_point_estimates, FoldEstimator, MetricEstimator, ModelArtifact,
    RunConfig,
};
use cfdiff::metric::{iterate_algorithm1, Constant, MetricConfig};
use cfdiff::sim::{simulate, Dataset, GroundTruth, TrialSpec};
use cfdiff::survival::{kaplan_meier, logrank_test, recommend_groups, SurvivalRecord};

fn small_trial(n: usize, seed: u64) -> cfdiff::sim::Trial {
    simulate(&TrialSpec::sphere(n, seed)).unwrap()
}

#[test]
fn test_outcomes_do_not_leak_into_estimates() {
    let trial = small_trial(900, 41);
    let (train, test) = fold_split(900, 0.8, 41, 0);
    let tr = trial.data.select(&train);
    let te = trial.data.select(&test);
    let mut scrambled = te.clone();
    scrambled.records.reverse();
    for r in &mut scrambled.records {
        r.event = !r.event;
        r.time *= 0.5;
    }
    let cfg = RunConfig::default();
    let a = MetricEstimator.estimate(&cfg, &tr, &te, &test, 5).unwrap();
    let b = MetricEstimator.estimate(&cfg, &tr, &scrambled, &test, 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn refit_is_byte_identical_and_round_trips() {
    let trial = small_trial(600, 42);
    let cfg = RunConfig::default();
    let a = fit_model(&cfg, &trial.data, 7).unwrap();
    let b = fit_model(&cfg, &trial.data, 7).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());

    let dir = tempfile::tempdir().unwrap();
    a.save(dir.path()).unwrap();
    let back = ModelArtifact::load(dir.path()).unwrap();
    assert_eq!(back.to_json().unwrap(), a.to_json().unwrap());
    let pts = trial.data.features.select(&[0, 5, 9]);
    assert_eq!(back.estimate_points(&pts).unwrap(), a.estimate_points(&pts).unwrap());
}

#[test]
fn fitted_weights_favor_effect_features() {
    let trial = small_trial(1500, 3);
    let model = fit_model(&RunConfig::default(), &trial.data, 3).unwrap();
    let w = model.metric.weights.mean_feature_weights();
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&i, &j| w[j].total_cmp(&w[i]));
    let mut top = order[..3].to_vec();
    top.sort_unstable();
    assert_eq!(top, vec![0, 1, 2], "weights {w:?}");
}

#[test]
fn constant_functional_gives_zero_weights() {
    let trial = small_trial(400, 44);
    let f = Constant { value: 1.5, min: 20 };
    let metric = iterate_algorithm1(&trial.data.features, &f, &MetricConfig::default(), 1).unwrap();
    assert!(metric.weights.point_weights().iter().all(|&w| w == 0.0));
    assert!(metric.converged);
}

#[test]
fn dataset_and_truth_csv_round_trip() {
    let trial = small_trial(50, 45);
    let dir = tempfile::tempdir().unwrap();
    let (dp, tp) = (dir.path().join("d.csv"), dir.path().join("t.csv"));
    trial.data.write_csv(&dp).unwrap();
    trial.truth.write_csv(&tp, trial.data.ids()).unwrap();
    assert_eq!(Dataset::read_csv(&dp, true).unwrap(), trial.data);
    let (ids, truth) = GroundTruth::read_csv(&tp).unwrap();
    assert_eq!(ids, trial.data.ids());
    assert_eq!(truth, trial.truth);
}

#[test]
fn point_estimates_csv_round_trip() {
    let trial = small_trial(500, 46);
    let model = fit_model(&RunConfig::default(), &trial.data, 2).unwrap();
    let est = model.estimate_points(&trial.data.features.select(&[1, 2, 3, 4])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.csv");
    write_point_estimates(&p, &est, model.reference.dimension).unwrap();
    let back = read_point_estimates(&p).unwrap();
    for (e, (id, f, b)) in est.iter().zip(back) {
        assert_eq!(e.id, id);
        assert_eq!(e.f_hat, f);
        assert_eq!(e.balanced, b);
    }
}

fn records() -> impl Strategy<Value = Vec<SurvivalRecord>> {
    prop::collection::vec((0.0f64..10.0, any::<bool>(), any::<bool>()), 1..60)
        .prop_map(|v| v.into_iter().map(|(t, e, a)| SurvivalRecord::new(t, e, a).unwrap()).collect())
}

proptest! {
    #[test]
    fn km_is_monotone_in_unit_interval(recs in records()) {
        let km = kaplan_meier(&recs);
        let mut prev = 1.0;
        for &s in &km.survival {
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!(s <= prev);
            prev = s;
        }
        prop_assert!(km.times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn logrank_is_symmetric(a in records(), b in records()) {
        if let (Ok(x), Ok(y)) = (logrank_test(&a, &b), logrank_test(&b, &a)) {
            prop_assert!((x.statistic - y.statistic).abs() <= 1e-9 * (1.0 + x.statistic));
        }
    }

    #[test]
    fn groups_partition_subjects(
        recs in records(),
        vals in prop::collection::vec(prop::option::of(-3.0f64..3.0), 60),
        c in 0.0f64..2.0,
    ) {
        let f = &vals[..recs.len()];
        if let Ok(r) = recommend_groups(f, &recs, c) {
            prop_assert_eq!(r.recommended + r.neutral + r.anti_recommended, recs.len());
            for (i, v) in f.iter().enumerate() {
                if v.is_none() {
                    prop_assert_eq!(r.groups[i], cfdiff::survival::Group::Neutral);
                }
            }
        }
    }
}
