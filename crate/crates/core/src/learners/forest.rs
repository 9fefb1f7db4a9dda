//! Bagged regression trees with per-node feature subsampling.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::tree::{grow, Presorted, Tree, TreeParams};
use crate::learners::{check_xy, Regressor};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, StreamRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features per node; `None` means ⌈√p⌉.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 5,
            max_features: None,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::InvalidConfig("forest n_trees must be >= 1".into()));
        }
        self.tree_params(1).validate()
    }

    fn tree_params(&self, n_features: usize) -> TreeParams {
        let sqrt = (n_features as f64).sqrt().ceil() as usize;
        TreeParams {
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            max_features: Some(self.max_features.unwrap_or(sqrt).max(1)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    n_features: usize,
    max_features: usize,
    tree_seeds: Vec<u64>,
    trees: Vec<Tree>,
}

impl ForestModel {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn tree_seeds(&self) -> &[u64] {
        &self.tree_seeds
    }

    pub fn max_features(&self) -> usize {
        self.max_features
    }
}

impl Regressor for ForestModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Fits `n_trees` trees, each on a bootstrap replicate drawn from its own
/// stream `derive_seed(seed, "bootstrap", t)`.
pub fn fit_random_forest(x: &Matrix, y: &[f64], params: &ForestParams, seed: u64) -> Result<ForestModel> {
    check_xy(x, y)?;
    params.validate()?;
    if x.n_cols() == 0 {
        return Err(Error::EmptyInput("training matrix has no columns"));
    }
    let n = y.len();
    let tree_params = params.tree_params(x.n_cols());
    let data = Presorted::new(x);
    let tree_seeds: Vec<u64> = (0..params.n_trees)
        .map(|t| derive_seed(seed, "bootstrap", t as u64))
        .collect();
    let trees = tree_seeds
        .par_iter()
        .map(|&s| {
            let mut rng = StreamRng::seed_from_u64(s);
            let weights = if params.bootstrap {
                let mut counts = vec![0u32; n];
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1;
                }
                counts
            } else {
                vec![1; n]
            };
            grow(&data, y, &weights, &tree_params, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        n_features: x.n_cols(),
        max_features: tree_params.max_features.unwrap_or(x.n_cols()),
        tree_seeds,
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::fit_tree;
    use crate::rng::substream;

    fn toy() -> (Matrix, Vec<f64>) {
        let x = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.5], [2.0, 3.0], [3.0, 2.0], [4.0, 9.0], [5.0, 7.0]]).unwrap();
        (x, vec![1.0, 3.0, 2.0, 8.0, 5.0, 9.0])
    }

    #[test]
    fn degenerate_forest_equals_tree() {
        let (x, y) = toy();
        let params = ForestParams {
            n_trees: 1,
            bootstrap: false,
            max_features: Some(2),
            min_samples_leaf: 1,
            ..ForestParams::default()
        };
        let f = fit_random_forest(&x, &y, &params, 5).unwrap();
        let t = fit_tree(&x, &y, &TreeParams::default(), &mut substream(0, "any", 0)).unwrap();
        assert_eq!(f.predict(&x).unwrap(), t.predict(&x).unwrap());
    }

    #[test]
    fn forest_is_mean_of_trees_and_deterministic() {
        let (x, y) = toy();
        let params = ForestParams {
            n_trees: 7,
            min_samples_leaf: 1,
            ..ForestParams::default()
        };
        let a = fit_random_forest(&x, &y, &params, 11).unwrap();
        let b = fit_random_forest(&x, &y, &params, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trees().len(), 7);
        let pa = a.predict(&x).unwrap();
        for (i, row) in x.rows_iter().enumerate() {
            let m = a.trees().iter().map(|t| t.predict_row(row)).sum::<f64>() / 7.0;
            assert_eq!(pa[i], m);
        }
        let c = fit_random_forest(&x, &y, &params, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_feature_subsample_is_ceil_sqrt() {
        let x = Matrix::zeros(4, 38);
        let y = [1.0, 2.0, 3.0, 4.0];
        let m = fit_random_forest(&x, &y, &ForestParams { n_trees: 2, ..ForestParams::default() }, 0).unwrap();
        assert_eq!(m.max_features(), 7);
    }
}
