use std::collections::HashSet;

use permafrost_core::domain::{Dataset, LocationKey, ScenarioId, ScenarioSpec};
use permafrost_core::features::{build_feature_matrix, build_features_with, col, FeatureMatrix, FeatureStats};
use permafrost_core::io::{generate_synthetic, SynthConfig};
use permafrost_core::learners::{
    fit_elastic_net_detailed, ForestParams, GbmParams, Learner, LearnerParams, Regressor,
};
use permafrost_core::scenario::{
    baseline_features, build_scenario_features, hybrid_project, perturb_baseline, HybridConfig, BASELINE_YEAR,
};
use permafrost_core::stacking::{
    assign_spatial_folds, fit_meta, fit_stacked_ensemble, generate_oof_predictions, predict_with_uncertainty,
    StackedModel, StackingConfig,
};
use permafrost_core::validation::{spatial_cv, temporal_cv, temporal_test_years};
use permafrost_core::{Error, Matrix, Result};

fn small_dataset(n: usize, seed: u64) -> Dataset {
    generate_synthetic(&SynthConfig {
        n_locations: n,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn light_config() -> StackingConfig {
    StackingConfig {
        k: 3,
        sample_cap: 3000,
        params: LearnerParams {
            forest: ForestParams {
                n_trees: 10,
                ..ForestParams::default()
            },
            gbm: GbmParams {
                n_iterations: 30,
                ..GbmParams::default()
            },
            ..LearnerParams::default()
        },
        ..StackingConfig::default()
    }
}

/// Predicts the mean of whatever targets it was trained on.
struct MeanLearner;

struct Constant(f64, usize);

impl Regressor for Constant {
    fn n_features(&self) -> usize {
        self.1
    }

    fn predict_row(&self, _: &[f64]) -> f64 {
        self.0
    }
}

impl Learner for MeanLearner {
    fn name(&self) -> &str {
        "mean"
    }

    fn fit(&self, x: &Matrix, y: &[f64], _: u64) -> Result<Box<dyn Regressor>> {
        Ok(Box::new(Constant(y.iter().sum::<f64>() / y.len() as f64, x.n_cols())))
    }
}

#[test]
fn oof_predictions_come_from_other_folds_only() {
    let ds = small_dataset(60, 3);
    let fm = build_feature_matrix(&ds).unwrap();
    let keys: Vec<LocationKey> = ds.locations().iter().map(|s| s.key).collect();
    let folds = assign_spatial_folds(&keys, 4).unwrap();
    let oof = generate_oof_predictions(&fm, &folds, &[&MeanLearner], 9, usize::MAX).unwrap();
    let row_fold = folds.row_folds(&fm.rows).unwrap();
    for fold in 0..4 {
        let others: Vec<f64> = (0..fm.n_rows()).filter(|&i| row_fold[i] != fold).map(|i| fm.target[i]).collect();
        let expected = others.iter().sum::<f64>() / others.len() as f64;
        for i in (0..fm.n_rows()).filter(|&i| row_fold[i] == fold) {
            assert!((oof.predictions.get(i, 0) - expected).abs() < 1e-9);
        }
    }
    for summary in oof.audit(&fm.rows) {
        assert_eq!(summary.shared_locations, 0);
        assert!(summary.train_locations > 0 && summary.predicted_locations > 0);
    }
}

#[test]
fn downsampling_only_removes_training_rows() {
    let ds = small_dataset(40, 5);
    let fm = build_feature_matrix(&ds).unwrap();
    let keys: Vec<LocationKey> = ds.locations().iter().map(|s| s.key).collect();
    let folds = assign_spatial_folds(&keys, 5).unwrap();
    let oof = generate_oof_predictions(&fm, &folds, &[&MeanLearner], 9, 100).unwrap();
    let mut predicted: Vec<usize> = oof.audits.iter().flat_map(|a| a.predicted_rows.clone()).collect();
    predicted.sort_unstable();
    assert_eq!(predicted, (0..fm.n_rows()).collect::<Vec<_>>());
    assert!(oof.audits.iter().all(|a| a.train_rows.len() == 100));
}

#[test]
fn meta_learner_finds_the_informative_column() {
    let n = 400;
    let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 40.0 + 50.0).collect();
    let data: Vec<f64> = (0..n)
        .flat_map(|i| [y[i], ((i * 7919) % 101) as f64, ((i * 104_729) % 97) as f64])
        .collect();
    let meta = fit_meta(&Matrix::new(n, 3, data).unwrap(), &y, 1e-6).unwrap();
    assert!((meta.coefficients()[0] - 1.0).abs() < 1e-4);
    assert!(meta.coefficients()[1].abs() < 1e-4 && meta.coefficients()[2].abs() < 1e-4);
}

#[test]
fn truncated_features_match_the_full_history() {
    let ds = small_dataset(25, 8);
    let stats = FeatureStats::fit(&ds).unwrap();
    let full = build_features_with(&ds, &stats).unwrap();
    let cut = build_features_with(&ds.truncate_to(2015).unwrap(), &stats).unwrap();
    let mut j = 0;
    for i in 0..full.n_rows() {
        if full.rows[i].year <= 2015 {
            assert_eq!(full.rows[i], cut.rows[j]);
            assert_eq!(full.x.row(i), cut.x.row(j), "row {:?}", full.rows[i]);
            j += 1;
        }
    }
    assert_eq!(j, cut.n_rows());
}

#[test]
fn zero_warming_only_moves_the_clock() {
    let ds = small_dataset(20, 4);
    let stats = FeatureStats::fit(&ds).unwrap();
    let base = baseline_features(&ds, &stats).unwrap();
    let moved = perturb_baseline(&base, 0.0, 10).unwrap();
    for i in 0..base.n_rows() {
        for j in 0..base.names.len() {
            if j != col::YEARS_SINCE_START {
                assert_eq!(base.x.get(i, j), moved.x.get(i, j));
            }
        }
        assert_eq!(moved.x.get(i, col::YEARS_SINCE_START), base.x.get(i, col::YEARS_SINCE_START) + 10.0);
        assert_eq!(moved.rows[i].year, BASELINE_YEAR + 10);
    }
}

#[test]
fn warming_touches_only_temperature_columns() {
    let ds = small_dataset(20, 4);
    let stats = FeatureStats::fit(&ds).unwrap();
    let base = baseline_features(&ds, &stats).unwrap();
    let spec = ScenarioSpec {
        id: ScenarioId::Rcp85,
        arctic_delta_t: 5.0,
        horizon_years: 10,
    };
    let warm = build_scenario_features(&ds, &spec, &stats).unwrap();
    let clock = perturb_baseline(&base, 0.0, 10).unwrap();
    for i in 0..base.n_rows() {
        assert!((warm.x.get(i, col::TEMPERATURE) - base.x.get(i, col::TEMPERATURE) - 5.0).abs() < 1e-12);
        assert!((warm.x.get(i, col::TEMP_LAG1) - base.x.get(i, col::TEMP_LAG1) - 4.5).abs() < 1e-12);
        assert!((warm.x.get(i, col::TEMP_LAG2) - base.x.get(i, col::TEMP_LAG2) - 4.0).abs() < 1e-12);
        for j in [col::PRECIPITATION, col::HUMIDITY, col::PF_LAG1, col::PF_LAG2, col::PF_TREND_LOC, col::LAT_NORM] {
            assert_eq!(warm.x.get(i, j), clock.x.get(i, j));
        }
        assert_eq!(warm.target[i], base.target[i]);
    }
}

#[test]
fn missing_baseline_year_is_reported() {
    let ds = small_dataset(5, 1).truncate_to(2019).unwrap();
    let stats = FeatureStats::fit(&ds).unwrap();
    assert!(matches!(baseline_features(&ds, &stats), Err(Error::MissingBaseline(2021))));
}

#[test]
fn temporal_windows_cover_the_later_years() {
    let years: Vec<i32> = (2005..=2021).collect();
    assert_eq!(temporal_test_years(&years, 8).unwrap(), (2013..=2021).collect::<Vec<_>>());
    assert!(temporal_test_years(&years, 17).is_err());
    assert!(temporal_test_years(&years, 0).is_err());
}

#[test]
fn elastic_net_objective_never_increases() {
    let ds = small_dataset(30, 6);
    let fm = build_feature_matrix(&ds).unwrap();
    for (alpha, lambda) in [(0.5, 0.1), (1.0, 0.01), (0.1, 1.0)] {
        let fit = fit_elastic_net_detailed(&fm.x, &fm.target, alpha, lambda, 1e-8, 500).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0), "{w:?}");
        }
    }
}

fn fitted(ds: &Dataset) -> (FeatureMatrix, StackedModel) {
    let fm = build_feature_matrix(ds).unwrap();
    let model = fit_stacked_ensemble(&fm, &light_config(), 17).unwrap().model;
    (fm, model)
}

#[test]
fn model_round_trip_preserves_predictions() {
    let ds = small_dataset(40, 12);
    let (fm, model) = fitted(&ds);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let loaded = StackedModel::load(&path).unwrap();
    assert_eq!(predict_with_uncertainty(&model, &fm).unwrap(), predict_with_uncertainty(&loaded, &fm).unwrap());

    let mut renamed = fm.names.clone();
    renamed.swap(0, 1);
    assert!(matches!(model.check_manifest(&renamed), Err(Error::ManifestMismatch { .. })));

    let mut value: serde_json::Value = serde_json::from_str(&model.to_json().unwrap()).unwrap();
    value["format_version"] = 99.into();
    assert!(StackedModel::from_json(&value.to_string()).is_err());
}

#[test]
fn stacked_fit_is_deterministic() {
    let ds = small_dataset(30, 2);
    let a = fitted(&ds).1;
    let b = fitted(&ds).1;
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn excluding_pf_history_drops_those_columns() {
    let ds = small_dataset(30, 2);
    let fm = build_feature_matrix(&ds).unwrap();
    let cfg = StackingConfig {
        exclude_pf_history: true,
        ..light_config()
    };
    let model = fit_stacked_ensemble(&cfg.prepare(fm.clone()), &cfg, 1).unwrap().model;
    assert!(model.feature_names.len() < fm.names.len());
    assert!(!model.feature_names.iter().any(|n| n == "pf_lag1" || n == "pf_lag2"));
}

#[test]
fn projections_respect_no_gain_and_clamp() {
    let ds = small_dataset(40, 21);
    let (_, model) = fitted(&ds);
    let hybrid = HybridConfig::default();
    let mut previous_mean = 0.0;
    for (id, dt) in [(ScenarioId::Rcp26, 1.5), (ScenarioId::Rcp45, 3.0), (ScenarioId::Rcp85, 5.0)] {
        let spec = ScenarioSpec {
            id,
            arctic_delta_t: dt,
            horizon_years: 10,
        };
        let results = hybrid_project(&model, &ds, &spec, &hybrid).unwrap();
        assert_eq!(results.len(), ds.n_locations());
        for r in &results {
            assert!(r.hybrid_delta <= 0.0);
            assert!((0.0..=100.0).contains(&r.projected_pf));
            assert!(r.sigma >= 0.0);
            assert!((r.projected_pf - (r.baseline_pf + r.hybrid_delta).clamp(0.0, 100.0)).abs() < 1e-9);
        }
        let phys_mean = results.iter().map(|r| -r.phys_delta).sum::<f64>() / results.len() as f64;
        assert!(phys_mean > previous_mean);
        previous_mean = phys_mean;
    }
}

#[test]
fn validation_splits_never_share_locations() {
    let ds = small_dataset(45, 31);
    let report = spatial_cv(&ds, 3, &light_config(), 5).unwrap();
    assert!(report.audits.iter().all(|a| a.shared_locations == 0 && a.inner_shared_locations == 0));
    let held: Vec<LocationKey> = report.test_locations.iter().flatten().copied().collect();
    assert_eq!(held.len(), ds.n_locations());
    assert_eq!(held.iter().collect::<HashSet<_>>().len(), ds.n_locations());

    let temporal = temporal_cv(&ds, 14, &light_config(), 5).unwrap();
    assert_eq!(temporal.audits.iter().map(|a| a.test_year).collect::<Vec<_>>(), vec![2019, 2020, 2021]);
    assert!(temporal.audits.iter().all(|a| a.max_train_year == a.test_year - 1));
}
