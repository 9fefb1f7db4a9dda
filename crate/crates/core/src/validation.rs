//! Leakage-aware evaluation protocols and regression metrics.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, LocationKey};
use crate::error::{Error, Result};
use crate::features::{build_feature_matrix, build_features_with, FeatureMatrix, FeatureStats};
use crate::io::Table;
use crate::learners::BaseKind;
use crate::rng::{derive_seed, substream};
use crate::stacking::{assign_spatial_folds, fit_stacked_ensemble, StackedModel, StackingConfig};
use crate::stats;

/// Targets below this magnitude (pp) are left out of MAPE.
pub const MAPE_FLOOR: f64 = 1.0;

pub const STACKED: &str = "stacked";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r2: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Percent; NaN when every target is below [`MAPE_FLOOR`].
    pub mape: f64,
    pub n: usize,
    pub mape_excluded: usize,
}

pub fn compute_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<MetricsReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            actual: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::EmptyInput("metrics need at least one row"));
    }
    let n = y_true.len() as f64;
    let y_mean = stats::mean(y_true);
    let (mut ss_res, mut ss_tot, mut abs_sum) = (0.0, 0.0, 0.0);
    let (mut pct_sum, mut pct_n) = (0.0, 0usize);
    for (&y, &p) in y_true.iter().zip(y_pred) {
        let e = y - p;
        ss_res += e * e;
        ss_tot += (y - y_mean) * (y - y_mean);
        abs_sum += e.abs();
        if y.abs() >= MAPE_FLOOR {
            pct_sum += e.abs() / y.abs();
            pct_n += 1;
        }
    }
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(MetricsReport {
        r2,
        rmse: (ss_res / n).sqrt(),
        mae: abs_sum / n,
        mape: if pct_n > 0 { 100.0 * pct_sum / pct_n as f64 } else { f64::NAN },
        n: y_true.len(),
        mape_excluded: y_true.len() - pct_n,
    })
}

/// One row of an evaluation report: a model scored on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// `spatial`, `temporal` or `random`.
    pub protocol: String,
    /// Fold id, test year, `pooled` or `test`.
    pub split: String,
    pub model: String,
    pub metrics: MetricsReport,
}

/// Predictions of the stacked model and each base learner on held-out rows.
#[derive(Clone, Debug, Default, PartialEq)]
struct HeldOut {
    target: Vec<f64>,
    /// Stacked first, then bases in [`BaseKind::ALL`] order.
    predictions: [Vec<f64>; 4],
}

fn model_names() -> [&'static str; 4] {
    [STACKED, BaseKind::ALL[0].as_str(), BaseKind::ALL[1].as_str(), BaseKind::ALL[2].as_str()]
}

impl HeldOut {
    fn predict(model: &StackedModel, test: &FeatureMatrix) -> Result<Self> {
        model.check_manifest(&test.names)?;
        let estimates = model.predict_matrix(&test.x)?;
        let mut out = HeldOut {
            target: test.target.clone(),
            ..HeldOut::default()
        };
        for e in estimates {
            out.predictions[0].push(e.mean);
            for (j, b) in e.base.iter().enumerate() {
                out.predictions[j + 1].push(*b);
            }
        }
        Ok(out)
    }

    fn extend(&mut self, other: &HeldOut) {
        self.target.extend_from_slice(&other.target);
        for (a, b) in self.predictions.iter_mut().zip(&other.predictions) {
            a.extend_from_slice(b);
        }
    }

    fn evaluate(&self, protocol: &str, split: &str) -> Result<Vec<Evaluation>> {
        model_names()
            .iter()
            .zip(&self.predictions)
            .map(|(name, pred)| {
                Ok(Evaluation {
                    protocol: protocol.to_string(),
                    split: split.to_string(),
                    model: name.to_string(),
                    metrics: compute_metrics(&self.target, pred)?,
                })
            })
            .collect()
    }
}

/// Location overlap between one outer fold's training and test sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialSplitAudit {
    pub fold: usize,
    pub train_locations: usize,
    pub test_locations: usize,
    pub shared_locations: usize,
    /// Largest number of inner-OOF shared locations across the stacked model's folds.
    pub inner_shared_locations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpatialCvReport {
    /// Per fold, then pooled; four models each.
    pub evaluations: Vec<Evaluation>,
    pub audits: Vec<SpatialSplitAudit>,
    /// Held-out locations of each fold.
    pub test_locations: Vec<Vec<LocationKey>>,
}

impl SpatialCvReport {
    pub fn pooled(&self, model: &str) -> Option<&MetricsReport> {
        self.evaluations
            .iter()
            .find(|e| e.split == "pooled" && e.model == model)
            .map(|e| &e.metrics)
    }
}

fn features_for(config: &StackingConfig, dataset: &Dataset, stats: &FeatureStats) -> Result<FeatureMatrix> {
    Ok(config.prepare(build_features_with(dataset, stats)?))
}

/// Group k-fold over locations: the whole stacked pipeline, feature
/// statistics included, is refit without each fold's locations.
pub fn spatial_cv(dataset: &Dataset, k: usize, config: &StackingConfig, seed: u64) -> Result<SpatialCvReport> {
    let keys: Vec<LocationKey> = dataset.locations().iter().map(|s| s.key).collect();
    let folds = assign_spatial_folds(&keys, k)?;
    let mut evaluations = Vec::new();
    let mut audits = Vec::new();
    let mut test_locations = Vec::new();
    let mut pooled = HeldOut::default();
    for fold in 0..k {
        let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
            (0..keys.len()).partition(|&i| folds.fold_of(&keys[i]) == Some(fold));
        let train = dataset.subset(&train_idx)?;
        let test = dataset.subset(&test_idx)?;
        let stats = FeatureStats::fit(&train)?;
        let train_fm = features_for(config, &train, &stats)?;
        let test_fm = features_for(config, &test, &stats)?;
        let fit = fit_stacked_ensemble(&train_fm, config, derive_seed(seed, "spatial-cv", fold as u64))?;
        let held = HeldOut::predict(&fit.model, &test_fm)?;

        let train_set: HashSet<LocationKey> = train_fm.rows.iter().map(|r| r.location).collect();
        let test_set: HashSet<LocationKey> = test_fm.rows.iter().map(|r| r.location).collect();
        audits.push(SpatialSplitAudit {
            fold,
            train_locations: train_set.len(),
            test_locations: test_set.len(),
            shared_locations: train_set.intersection(&test_set).count(),
            inner_shared_locations: fit
                .oof
                .audit(&train_fm.rows)
                .iter()
                .map(|a| a.shared_locations)
                .max()
                .unwrap_or(0),
        });
        test_locations.push(test_idx.iter().map(|&i| keys[i]).collect());
        evaluations.extend(held.evaluate("spatial", &fold.to_string())?);
        pooled.extend(&held);
    }
    evaluations.extend(pooled.evaluate("spatial", "pooled")?);
    Ok(SpatialCvReport {
        evaluations,
        audits,
        test_locations,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalSplitAudit {
    pub test_year: i32,
    pub min_train_year: i32,
    pub max_train_year: i32,
    pub train_rows: usize,
    pub test_rows: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalCvReport {
    pub evaluations: Vec<Evaluation>,
    pub audits: Vec<TemporalSplitAudit>,
}

/// Test years of the expanding window.
pub fn temporal_test_years(years: &[i32], min_train_years: usize) -> Result<Vec<i32>> {
    if min_train_years < 1 || years.len() <= min_train_years {
        return Err(Error::InvalidConfig(format!(
            "temporal CV needs more than {min_train_years} years and at least one training year; data spans {}",
            years.len()
        )));
    }
    Ok(years[min_train_years..].to_vec())
}

/// Expanding-window forward chaining. Each split rebuilds features from the
/// data truncated at the test year, with statistics fit on the training years.
pub fn temporal_cv(
    dataset: &Dataset,
    min_train_years: usize,
    config: &StackingConfig,
    seed: u64,
) -> Result<TemporalCvReport> {
    let test_years = temporal_test_years(dataset.years(), min_train_years)?;
    let mut evaluations = Vec::new();
    let mut audits = Vec::new();
    for (i, &year) in test_years.iter().enumerate() {
        let train = dataset.truncate_to(year - 1)?;
        let stats = FeatureStats::fit(&train)?;
        let train_fm = features_for(config, &train, &stats)?;
        let upto = features_for(config, &dataset.truncate_to(year)?, &stats)?;
        let test_rows: Vec<usize> = (0..upto.n_rows()).filter(|&r| upto.rows[r].year == year).collect();
        let test_fm = upto.select_rows(&test_rows);

        let max_train_year = train_fm.rows.iter().map(|r| r.year).max().expect("training rows exist");
        let min_train_year = train_fm.rows.iter().map(|r| r.year).min().expect("training rows exist");
        if max_train_year >= year || test_fm.rows.iter().any(|r| r.year != year) {
            return Err(Error::InvalidConfig(format!("temporal split for {year} reads the future")));
        }
        let fit = fit_stacked_ensemble(&train_fm, config, derive_seed(seed, "temporal-cv", i as u64))?;
        evaluations.extend(HeldOut::predict(&fit.model, &test_fm)?.evaluate("temporal", &year.to_string())?);
        audits.push(TemporalSplitAudit {
            test_year: year,
            min_train_year,
            max_train_year,
            train_rows: train_fm.n_rows(),
            test_rows: test_fm.n_rows(),
        });
    }
    Ok(TemporalCvReport { evaluations, audits })
}

/// Row-level shuffle split; returns (train, test) row indices, each sorted.
pub fn random_split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("test_fraction {test_fraction} must lie in (0, 1)")));
    }
    let n_test = (test_fraction * n as f64).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::InvalidConfig(format!(
            "test_fraction {test_fraction} on {n} rows leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, "random-split", 0));
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomSplitReport {
    pub evaluations: Vec<Evaluation>,
    pub n_train: usize,
    pub n_test: usize,
}

impl RandomSplitReport {
    pub fn metrics(&self, model: &str) -> Option<&MetricsReport> {
        self.evaluations.iter().find(|e| e.model == model).map(|e| &e.metrics)
    }
}

/// Deliberately leaky baseline: rows of the same location and neighbouring
/// years land on both sides of the split.
pub fn random_split_baseline(
    dataset: &Dataset,
    test_fraction: f64,
    config: &StackingConfig,
    seed: u64,
) -> Result<RandomSplitReport> {
    let all = config.prepare(build_feature_matrix(dataset)?);
    let (train_idx, test_idx) = random_split_indices(all.n_rows(), test_fraction, seed)?;
    let train = all.select_rows(&train_idx);
    let test = all.select_rows(&test_idx);
    let fit = fit_stacked_ensemble(&train, config, derive_seed(seed, "random-split-fit", 0))?;
    Ok(RandomSplitReport {
        evaluations: HeldOut::predict(&fit.model, &test)?.evaluate("random", "test")?,
        n_train: train_idx.len(),
        n_test: test_idx.len(),
    })
}

/// Metrics CSV shared by all protocols; random-split rows carry the leakage marker.
pub fn evaluation_table(evaluations: &[Evaluation]) -> Table {
    let mut t = Table::new(&[
        "protocol",
        "split",
        "model",
        "n",
        "r2",
        "rmse",
        "mae",
        "mape",
        "mape_excluded",
        "leakage_demo",
    ]);
    for e in evaluations {
        let m = &e.metrics;
        t.push(vec![
            e.protocol.as_str().into(),
            e.split.as_str().into(),
            e.model.as_str().into(),
            m.n.into(),
            m.r2.into(),
            m.rmse.into(),
            m.mae.into(),
            m.mape.into(),
            m.mape_excluded.into(),
            (e.protocol == "random").into(),
        ]);
    }
    t
}
