//! Two-stage stacking: spatially grouped out-of-fold base predictions feed a
//! ridge meta-learner; base learners are then refit on every row.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::domain::LocationKey;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureStats, RowKey, PF_HISTORY_COLUMNS};
use crate::io::{Cell, Table};
use crate::learners::{fit_ridge, BaseKind, BaseLearner, BaseModel, Learner, LearnerParams, LinearModel, Regressor};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, substream};
use crate::stats;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Locations mapped to `k` longitude bands.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldAssignment {
    k: usize,
    /// Locations in (longitude, latitude) order with their fold ids.
    ordered: Vec<(LocationKey, usize)>,
    index: HashMap<LocationKey, usize>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, key: &LocationKey) -> Option<usize> {
        self.index.get(key).map(|&i| self.ordered[i].1)
    }

    pub fn assignments(&self) -> &[(LocationKey, usize)] {
        &self.ordered
    }

    /// Number of distinct locations per fold.
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &(_, f) in &self.ordered {
            sizes[f] += 1;
        }
        sizes
    }

    /// Fold id of every row.
    pub fn row_folds(&self, rows: &[RowKey]) -> Result<Vec<usize>> {
        rows.iter()
            .map(|r| {
                self.fold_of(&r.location).ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "location ({}, {}) has no fold",
                        r.location.lat, r.location.lon
                    ))
                })
            })
            .collect()
    }
}

/// Sorts the distinct locations by (longitude, latitude) and cuts them into
/// `k` contiguous runs whose sizes differ by at most one.
pub fn assign_spatial_folds(locations: &[LocationKey], k: usize) -> Result<FoldAssignment> {
    let mut unique = locations.to_vec();
    unique.sort_by(LocationKey::cmp_lon_lat);
    unique.dedup();
    if k == 0 {
        return Err(Error::InvalidConfig("fold count must be >= 1".into()));
    }
    if unique.len() < k {
        return Err(Error::InvalidConfig(format!(
            "{} locations cannot fill {k} folds",
            unique.len()
        )));
    }
    let n = unique.len();
    let ordered: Vec<(LocationKey, usize)> = unique.into_iter().enumerate().map(|(r, key)| (key, r * k / n)).collect();
    let index = ordered.iter().enumerate().map(|(i, (key, _))| (*key, i)).collect();
    Ok(FoldAssignment { k, ordered, index })
}

/// What one fold's models were trained on and what they predicted.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldAudit {
    pub fold: usize,
    /// Row indices used for training, after downsampling.
    pub train_rows: Vec<usize>,
    pub predicted_rows: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OofResult {
    /// `n × m` out-of-fold predictions, one column per learner.
    pub predictions: Matrix,
    pub learner_names: Vec<String>,
    pub audits: Vec<FoldAudit>,
}

/// Summary of an OOF disjointness check for one fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAuditSummary {
    pub fold: usize,
    pub train_rows: usize,
    pub train_locations: usize,
    pub predicted_rows: usize,
    pub predicted_locations: usize,
    pub shared_locations: usize,
}

impl OofResult {
    /// Counts, per fold, the locations present both in the training rows and
    /// in the predicted rows.
    pub fn audit(&self, rows: &[RowKey]) -> Vec<FoldAuditSummary> {
        self.audits
            .iter()
            .map(|a| {
                let train: HashSet<LocationKey> = a.train_rows.iter().map(|&i| rows[i].location).collect();
                let predicted: HashSet<LocationKey> = a.predicted_rows.iter().map(|&i| rows[i].location).collect();
                FoldAuditSummary {
                    fold: a.fold,
                    train_rows: a.train_rows.len(),
                    train_locations: train.len(),
                    predicted_rows: a.predicted_rows.len(),
                    predicted_locations: predicted.len(),
                    shared_locations: predicted.intersection(&train).count(),
                }
            })
            .collect()
    }

    /// RMSE of each learner's OOF column.
    pub fn rmse(&self, y: &[f64]) -> Vec<f64> {
        (0..self.predictions.n_cols())
            .map(|j| rmse(&self.predictions.column(j), y))
            .collect()
    }
}

pub fn audit_table(summaries: &[FoldAuditSummary]) -> Table {
    let mut t = Table::new(&[
        "fold",
        "train_rows",
        "train_locations",
        "predicted_rows",
        "predicted_locations",
        "shared_locations",
    ]);
    for s in summaries {
        t.push(vec![
            s.fold.into(),
            s.train_rows.into(),
            s.train_locations.into(),
            s.predicted_rows.into(),
            s.predicted_locations.into(),
            s.shared_locations.into(),
        ]);
    }
    t
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / a.len() as f64).sqrt()
}

/// For each fold, trains every learner on the rows of the other folds
/// (uniformly downsampled to `sample_cap` with stream `("downsample", fold)`)
/// and predicts the fold's rows.
pub fn generate_oof_predictions(
    features: &FeatureMatrix,
    folds: &FoldAssignment,
    learners: &[&dyn Learner],
    seed: u64,
    sample_cap: usize,
) -> Result<OofResult> {
    if sample_cap == 0 {
        return Err(Error::InvalidConfig("sample_cap must be >= 1".into()));
    }
    let row_fold = folds.row_folds(&features.rows)?;
    let n = features.n_rows();
    let mut predictions = Matrix::zeros(n, learners.len());
    let mut audits = Vec::with_capacity(folds.k());
    for fold in 0..folds.k() {
        let predicted_rows: Vec<usize> = (0..n).filter(|&i| row_fold[i] == fold).collect();
        let mut train_rows: Vec<usize> = (0..n).filter(|&i| row_fold[i] != fold).collect();
        if predicted_rows.is_empty() || train_rows.is_empty() {
            return Err(Error::EmptyInput("a spatial fold has no rows"));
        }
        if train_rows.len() > sample_cap {
            let mut rng = substream(seed, "downsample", fold as u64);
            let mut keep = sample(&mut rng, train_rows.len(), sample_cap).into_vec();
            keep.sort_unstable();
            train_rows = keep.into_iter().map(|k| train_rows[k]).collect();
        }
        let x_train = features.x.select_rows(&train_rows);
        let y_train: Vec<f64> = train_rows.iter().map(|&i| features.target[i]).collect();
        let x_pred = features.x.select_rows(&predicted_rows);
        for (j, learner) in learners.iter().enumerate() {
            let model = learner.fit(&x_train, &y_train, derive_seed(seed, learner.name(), fold as u64))?;
            for (&i, p) in predicted_rows.iter().zip(model.predict(&x_pred)?) {
                predictions.set(i, j, p);
            }
        }
        audits.push(FoldAudit {
            fold,
            train_rows,
            predicted_rows,
        });
    }
    Ok(OofResult {
        predictions,
        learner_names: learners.iter().map(|l| l.name().to_string()).collect(),
        audits,
    })
}

/// Ridge meta-learner over base-prediction columns.
pub fn fit_meta(oof: &Matrix, y: &[f64], lambda: f64) -> Result<LinearModel> {
    fit_ridge(oof, y, lambda)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackingConfig {
    pub k: usize,
    pub sample_cap: usize,
    pub params: LearnerParams,
    /// Drops the permafrost-fraction lag, trend and year-over-year columns.
    pub exclude_pf_history: bool,
}

impl Default for StackingConfig {
    fn default() -> Self {
        StackingConfig {
            k: 5,
            sample_cap: 200_000,
            params: LearnerParams::default(),
            exclude_pf_history: false,
        }
    }
}

impl StackingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig("stacking needs k >= 2 folds".into()));
        }
        if self.sample_cap < 1 {
            return Err(Error::InvalidConfig("sample_cap must be >= 1".into()));
        }
        self.params.validate()
    }

    /// Applies the column policy to a full-manifest feature matrix.
    pub fn prepare(&self, features: FeatureMatrix) -> FeatureMatrix {
        if self.exclude_pf_history {
            features.without_columns(&PF_HISTORY_COLUMNS)
        } else {
            features
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub k: usize,
    pub sample_cap: usize,
    pub n_rows: usize,
    pub n_locations: usize,
    pub params: LearnerParams,
    /// OOF RMSE per base learner, in [`BaseKind::ALL`] order.
    pub base_oof_rmse: Vec<f64>,
    /// RMSE of the meta-learner applied to the OOF matrix.
    pub stacked_oof_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackedModel {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    pub manifest_hash: String,
    pub feature_stats: FeatureStats,
    /// Base models in [`BaseKind::ALL`] order.
    pub bases: Vec<BaseModel>,
    pub meta: LinearModel,
    pub metadata: TrainingMetadata,
    /// Free-form origin note (config hash, seed) set by the caller.
    #[serde(default)]
    pub provenance: String,
}

/// Stacked mean, the three base predictions and their spread.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertainEstimate {
    pub mean: f64,
    pub base: [f64; 3],
    pub sigma: f64,
}

impl UncertainEstimate {
    pub fn from_bases(meta: &LinearModel, base: [f64; 3]) -> Self {
        UncertainEstimate {
            mean: meta.predict_row(&base).clamp(0.0, 100.0),
            base,
            sigma: stats::population_sd(&base),
        }
    }
}

impl StackedModel {
    pub fn base(&self, kind: BaseKind) -> &BaseModel {
        let i = BaseKind::ALL.iter().position(|&k| k == kind).expect("every kind is listed");
        &self.bases[i]
    }

    /// Per-row estimates for a matrix whose columns follow the training manifest.
    pub fn predict_matrix(&self, x: &Matrix) -> Result<Vec<UncertainEstimate>> {
        let columns: Vec<Vec<f64>> = self.bases.iter().map(|b| b.predict(x)).collect::<Result<_>>()?;
        Ok((0..x.n_rows())
            .map(|i| UncertainEstimate::from_bases(&self.meta, [columns[0][i], columns[1][i], columns[2][i]]))
            .collect())
    }

    pub fn check_manifest(&self, names: &[String]) -> Result<()> {
        if names != self.feature_names.as_slice() {
            return Err(Error::ManifestMismatch {
                expected: self.feature_names.join(","),
                actual: names.join(","),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: StackedModel = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                model.format_version
            )));
        }
        if model.bases.len() != 3 || model.meta.coefficients().len() != 3 {
            return Err(Error::InvalidConfig("model must hold three base learners".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        StackedModel::from_json(&text)
    }
}

/// Manifest-checked prediction with ensemble-spread uncertainty.
pub fn predict_with_uncertainty(model: &StackedModel, features: &FeatureMatrix) -> Result<Vec<UncertainEstimate>> {
    model.check_manifest(&features.names)?;
    model.predict_matrix(&features.x)
}

/// A fitted ensemble together with the OOF evidence it was built from.
#[derive(Clone, Debug)]
pub struct StackedFit {
    pub model: StackedModel,
    pub oof: OofResult,
}

pub fn fit_stacked_ensemble(features: &FeatureMatrix, config: &StackingConfig, seed: u64) -> Result<StackedFit> {
    config.validate()?;
    let locations: Vec<LocationKey> = features.rows.iter().map(|r| r.location).collect();
    let folds = assign_spatial_folds(&locations, config.k)?;
    let learners = BaseLearner::all(&config.params);
    let dyn_learners: Vec<&dyn Learner> = learners.iter().map(|l| l as &dyn Learner).collect();
    let oof = generate_oof_predictions(features, &folds, &dyn_learners, seed, config.sample_cap)?;
    let meta = fit_meta(&oof.predictions, &features.target, config.params.meta_lambda)?;
    let stacked_oof: Vec<f64> = oof
        .predictions
        .rows_iter()
        .map(|r| meta.predict_row(r).clamp(0.0, 100.0))
        .collect();
    let bases = learners
        .iter()
        .map(|l| l.fit_base(&features.x, &features.target, derive_seed(seed, "refit", l.kind as u64)))
        .collect::<Result<Vec<_>>>()?;
    let model = StackedModel {
        format_version: MODEL_FORMAT_VERSION,
        feature_names: features.names.clone(),
        manifest_hash: features.manifest_hash(),
        feature_stats: features.stats,
        bases,
        meta,
        metadata: TrainingMetadata {
            seed,
            k: config.k,
            sample_cap: config.sample_cap,
            n_rows: features.n_rows(),
            n_locations: folds.assignments().len(),
            params: config.params.clone(),
            base_oof_rmse: oof.rmse(&features.target),
            stacked_oof_rmse: rmse(&stacked_oof, &features.target),
        },
        provenance: String::new(),
    };
    Ok(StackedFit { model, oof })
}

/// OOF matrix as CSV, one row per feature row.
pub fn oof_table(features: &FeatureMatrix, oof: &OofResult, folds: &[usize]) -> Table {
    let mut header = vec!["lat".to_string(), "lon".to_string(), "year".to_string(), "fold".to_string()];
    header.extend(oof.learner_names.iter().cloned());
    header.push("permafrost_fraction".to_string());
    let mut t = Table::new(&header);
    for (i, key) in features.rows.iter().enumerate() {
        let mut row: Vec<Cell> = vec![
            key.location.lat.into(),
            key.location.lon.into(),
            key.year.into(),
            folds[i].into(),
        ];
        row.extend(oof.predictions.row(i).iter().map(|&v| Cell::Float(v)));
        row.push(features.target[i].into());
        t.push(row);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(lons: &[f64]) -> Vec<LocationKey> {
        lons.iter().map(|&lon| LocationKey::new(65.0, lon)).collect()
    }

    #[test]
    fn longitude_bands() {
        let locs = keys(&[39.0, 31.0, 35.0, 30.0, 33.0, 32.0, 34.0, 36.0, 38.0, 37.0]);
        let f = assign_spatial_folds(&locs, 5).unwrap();
        for (key, fold) in f.assignments() {
            assert_eq!(*fold, ((key.lon - 30.0) / 2.0).floor() as usize);
        }
        assert_eq!(f.fold_sizes(), vec![2; 5]);
        let one = assign_spatial_folds(&locs, 1).unwrap();
        assert!(one.assignments().iter().all(|&(_, f)| f == 0));
        assert!(assign_spatial_folds(&locs[..3], 4).is_err());
    }

    #[test]
    fn uneven_fold_sizes_differ_by_one() {
        let locs: Vec<LocationKey> = (0..23).map(|i| LocationKey::new(61.0, 30.0 + f64::from(i))).collect();
        let sizes = assign_spatial_folds(&locs, 5).unwrap().fold_sizes();
        assert_eq!(sizes.iter().sum::<usize>(), 23);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn uncertainty_examples() {
        let meta = LinearModel::from_coefficients(vec![0.5, 0.3, 0.2], 0.0);
        let e = UncertainEstimate::from_bases(&meta, [80.0, 80.0, 80.0]);
        assert!((e.mean - 80.0).abs() < 1e-12);
        assert_eq!(e.sigma, 0.0);
        let e = UncertainEstimate::from_bases(&meta, [70.0, 80.0, 90.0]);
        assert!((e.sigma - 8.1650).abs() < 5e-5);
        let hot = LinearModel::from_coefficients(vec![1.0, 0.0, 0.0], 3.0);
        assert_eq!(UncertainEstimate::from_bases(&hot, [100.0, 0.0, 0.0]).mean, 100.0);
    }
}
