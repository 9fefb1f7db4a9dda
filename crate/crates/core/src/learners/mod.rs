//! Base regressors and the ridge meta-learner.
//!
//! All learners use squared loss. Fitted models are immutable; prediction is
//! a pure function of the model and the input row.

mod forest;
mod gbm;
mod linear;
mod tree;

pub use forest::{fit_random_forest, ForestModel, ForestParams};
pub use gbm::{fit_hist_gbm, BinMapper, GbmModel, GbmParams};
pub use linear::{
    elastic_net_objective, fit_elastic_net, fit_elastic_net_cv, fit_elastic_net_detailed, fit_ridge,
    ElasticNetFit, ElasticNetParams, LinearModel,
};
pub use tree::{fit_tree, Tree, TreeParams};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A fitted model mapping a feature row to a prediction.
pub trait Regressor: Send + Sync {
    fn n_features(&self) -> usize;

    fn predict_row(&self, row: &[f64]) -> f64;

    fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                actual: x.n_cols(),
            });
        }
        Ok((0..x.n_rows()).into_par_iter().map(|i| self.predict_row(x.row(i))).collect())
    }
}

/// Something that can be trained into a [`Regressor`].
pub trait Learner: Send + Sync {
    fn name(&self) -> &str;

    fn fit(&self, x: &Matrix, y: &[f64], seed: u64) -> Result<Box<dyn Regressor>>;
}

pub(crate) fn check_xy(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.n_rows(),
            actual: y.len(),
        });
    }
    if x.n_rows() == 0 {
        return Err(Error::EmptyInput("training matrix has no rows"));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("feature matrix"));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("target vector"));
    }
    Ok(())
}

/// Hyperparameters of the three base learners and the meta-learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerParams {
    pub forest: ForestParams,
    pub gbm: GbmParams,
    pub elastic_net: ElasticNetParams,
    pub meta_lambda: f64,
}

impl Default for LearnerParams {
    fn default() -> Self {
        LearnerParams {
            forest: ForestParams::default(),
            gbm: GbmParams::default(),
            elastic_net: ElasticNetParams::default(),
            meta_lambda: 1.0,
        }
    }
}

impl LearnerParams {
    pub fn validate(&self) -> Result<()> {
        self.forest.validate()?;
        self.gbm.validate()?;
        self.elastic_net.validate()?;
        if !(self.meta_lambda.is_finite() && self.meta_lambda >= 0.0) {
            return Err(Error::InvalidConfig("meta_lambda must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// The three base-learner families, in meta-feature column order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    RandomForest,
    HistGbm,
    ElasticNet,
}

impl BaseKind {
    pub const ALL: [BaseKind; 3] = [BaseKind::RandomForest, BaseKind::HistGbm, BaseKind::ElasticNet];

    pub fn as_str(self) -> &'static str {
        match self {
            BaseKind::RandomForest => "random_forest",
            BaseKind::HistGbm => "hist_gbm",
            BaseKind::ElasticNet => "elastic_net",
        }
    }
}

/// A fitted base model of any family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseModel {
    RandomForest(ForestModel),
    HistGbm(GbmModel),
    ElasticNet(LinearModel),
}

impl Regressor for BaseModel {
    fn n_features(&self) -> usize {
        match self {
            BaseModel::RandomForest(m) => m.n_features(),
            BaseModel::HistGbm(m) => m.n_features(),
            BaseModel::ElasticNet(m) => m.n_features(),
        }
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            BaseModel::RandomForest(m) => m.predict_row(row),
            BaseModel::HistGbm(m) => m.predict_row(row),
            BaseModel::ElasticNet(m) => m.predict_row(row),
        }
    }
}

/// One configured base learner.
#[derive(Clone, Debug)]
pub struct BaseLearner {
    pub kind: BaseKind,
    pub params: LearnerParams,
}

impl BaseLearner {
    pub fn all(params: &LearnerParams) -> [BaseLearner; 3] {
        BaseKind::ALL.map(|kind| BaseLearner {
            kind,
            params: params.clone(),
        })
    }

    pub fn fit_base(&self, x: &Matrix, y: &[f64], seed: u64) -> Result<BaseModel> {
        Ok(match self.kind {
            BaseKind::RandomForest => BaseModel::RandomForest(fit_random_forest(x, y, &self.params.forest, seed)?),
            BaseKind::HistGbm => BaseModel::HistGbm(fit_hist_gbm(x, y, &self.params.gbm, seed)?),
            BaseKind::ElasticNet => BaseModel::ElasticNet(fit_elastic_net_cv(x, y, &self.params.elastic_net)?.0),
        })
    }
}

impl Learner for BaseLearner {
    fn name(&self) -> &str {
        self.kind.as_str()
    }

    fn fit(&self, x: &Matrix, y: &[f64], seed: u64) -> Result<Box<dyn Regressor>> {
        Ok(Box::new(self.fit_base(x, y, seed)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_linear_model_predicts_intercept() {
        let m = LinearModel::constant(3, 75.0);
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-4.0, 0.0, 9.0]]).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![75.0, 75.0]);
        let bad = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(matches!(m.predict(&bad), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn gbm_without_stages_predicts_init() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let y = [70.0, 75.0, 80.0];
        let params = GbmParams {
            n_iterations: 0,
            ..GbmParams::default()
        };
        let m = fit_hist_gbm(&x, &y, &params, 1).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![75.0; 3]);
    }

    #[test]
    fn params_roundtrip_and_validate() {
        let p = LearnerParams::default();
        p.validate().unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<LearnerParams>(&json).unwrap(), p);
        let bad = LearnerParams {
            meta_lambda: -1.0,
            ..LearnerParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
