//! Histogram gradient boosting for squared loss.
//!
//! Features are quantized once into at most `max_bins` bins. Each stage fits a
//! depth-limited tree to the current residuals using per-node histograms;
//! the larger child's histogram is the parent's minus the smaller child's.
//! Split thresholds are stored as raw bin edges, so prediction needs no
//! binning and out-of-range inputs fall into the extreme bins.

use rand::seq::index::sample;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::tree::Tree;
use crate::learners::{check_xy, Regressor};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, StreamRng};
use crate::stats;

/// Rows used to compute bin edges on large inputs.
const BIN_SUBSAMPLE: usize = 200_000;
const MIN_GAIN: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmParams {
    pub n_iterations: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub max_bins: usize,
    pub min_samples_leaf: usize,
}

impl Default for GbmParams {
    fn default() -> Self {
        GbmParams {
            n_iterations: 200,
            learning_rate: 0.1,
            max_depth: 6,
            max_bins: 256,
            min_samples_leaf: 20,
        }
    }
}

impl GbmParams {
    pub(crate) fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("gbm: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1");
        }
        if !(2..=256).contains(&self.max_bins) {
            return bad("max_bins must lie in 2..=256");
        }
        if self.min_samples_leaf < 1 {
            return bad("min_samples_leaf must be >= 1");
        }
        Ok(())
    }
}

/// Per-feature bin edges. `bin(x)` is the number of edges strictly below `x`,
/// so `x <= edges[b]` exactly when `bin(x) <= b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinMapper {
    edges: Vec<Vec<f64>>,
}

impl BinMapper {
    pub fn fit(x: &Matrix, max_bins: usize, seed: u64) -> Self {
        let rows: Vec<usize> = if x.n_rows() > BIN_SUBSAMPLE {
            let mut rng = StreamRng::seed_from_u64(derive_seed(seed, "gbm-bins", 0));
            let mut idx = sample(&mut rng, x.n_rows(), BIN_SUBSAMPLE).into_vec();
            idx.sort_unstable();
            idx
        } else {
            (0..x.n_rows()).collect()
        };
        let edges = (0..x.n_cols())
            .map(|j| {
                let values = stats::sorted(&rows.iter().map(|&i| x.get(i, j)).collect::<Vec<_>>());
                feature_edges(&values, max_bins)
            })
            .collect();
        BinMapper { edges }
    }

    pub fn edges(&self, feature: usize) -> &[f64] {
        &self.edges[feature]
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.edges[feature].len() + 1
    }

    pub fn bin(&self, feature: usize, value: f64) -> u8 {
        self.edges[feature].partition_point(|&e| e < value) as u8
    }

    /// Column-major bin codes.
    pub fn transform(&self, x: &Matrix) -> Vec<Vec<u8>> {
        (0..x.n_cols())
            .map(|j| (0..x.n_rows()).map(|i| self.bin(j, x.get(i, j))).collect())
            .collect()
    }
}

fn feature_edges(sorted: &[f64], max_bins: usize) -> Vec<f64> {
    let mut distinct = sorted.to_vec();
    distinct.dedup();
    if distinct.len() <= max_bins {
        return distinct
            .windows(2)
            .map(|w| {
                let m = w[0] + (w[1] - w[0]) / 2.0;
                if m >= w[1] {
                    w[0]
                } else {
                    m
                }
            })
            .collect();
    }
    let mut edges: Vec<f64> = (1..max_bins)
        .map(|k| stats::quantile_sorted(sorted, k as f64 / max_bins as f64))
        .collect();
    edges.dedup();
    // The top edge must leave the maximum in a bin of its own.
    if edges.last() == sorted.last() {
        edges.pop();
    }
    edges
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    n_features: usize,
    bins: BinMapper,
    init: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
}

impl GbmModel {
    pub fn init(&self) -> f64 {
        self.init
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn bins(&self) -> &BinMapper {
        &self.bins
    }

    /// Keeps only the first `n` stages.
    pub fn truncated(&self, n: usize) -> GbmModel {
        let mut m = self.clone();
        m.trees.truncate(n);
        m
    }
}

impl Regressor for GbmModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        self.init + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }
}

const HIST_STRIDE: usize = 256;

#[derive(Clone)]
struct Histogram {
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl Histogram {
    fn build(binned: &[Vec<u8>], rows: &[u32], residual: &[f64]) -> Self {
        let p = binned.len();
        let mut h = Histogram {
            sum: vec![0.0; p * HIST_STRIDE],
            count: vec![0; p * HIST_STRIDE],
        };
        for (f, codes) in binned.iter().enumerate() {
            let sum = &mut h.sum[f * HIST_STRIDE..(f + 1) * HIST_STRIDE];
            let count = &mut h.count[f * HIST_STRIDE..(f + 1) * HIST_STRIDE];
            for &i in rows {
                let b = codes[i as usize] as usize;
                sum[b] += residual[i as usize];
                count[b] += 1;
            }
        }
        h
    }

    fn subtract(&mut self, other: &Histogram) {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a -= b;
        }
        for (a, b) in self.count.iter_mut().zip(&other.count) {
            *a -= b;
        }
    }
}

struct Grower<'a> {
    binned: &'a [Vec<u8>],
    bins: &'a BinMapper,
    residual: &'a [f64],
    max_depth: usize,
    msl: f64,
    scratch: Vec<u32>,
    /// Leaf value assigned to each training row.
    fitted: Vec<f64>,
}

impl Grower<'_> {
    fn grow(&mut self, tree: &mut Tree, rows: &mut [u32], hist: Histogram, depth: usize, parent: Option<(u32, bool)>) {
        let total_s: f64 = rows.iter().map(|&i| self.residual[i as usize]).sum();
        let total_n = rows.len() as f64;
        let mean = total_s / total_n;

        let best = if depth >= self.max_depth || total_n < 2.0 * self.msl {
            None
        } else {
            self.best_split(&hist, total_s, total_n)
        };
        let node = match best {
            None => tree.push_leaf(mean, rows.len() as u32, depth),
            Some((f, b, _)) => tree.push_split(f, self.bins.edges(f)[b], rows.len() as u32, depth),
        };
        if let Some((p, is_left)) = parent {
            tree.link(p, node, is_left);
        }
        let Some((f, b, _)) = best else {
            for &i in rows.iter() {
                self.fitted[i as usize] = mean;
            }
            return;
        };

        let codes = &self.binned[f];
        self.scratch.clear();
        let mut write = 0;
        for k in 0..rows.len() {
            let i = rows[k];
            if codes[i as usize] as usize <= b {
                rows[write] = i;
                write += 1;
            } else {
                self.scratch.push(i);
            }
        }
        rows[write..].copy_from_slice(&self.scratch);
        let (left, right) = rows.split_at_mut(write);

        let (left_hist, right_hist) = if left.len() <= right.len() {
            let small = Histogram::build(self.binned, left, self.residual);
            let mut large = hist;
            large.subtract(&small);
            (small, large)
        } else {
            let small = Histogram::build(self.binned, right, self.residual);
            let mut large = hist;
            large.subtract(&small);
            (large, small)
        };
        self.grow(tree, left, left_hist, depth + 1, Some((node, true)));
        self.grow(tree, right, right_hist, depth + 1, Some((node, false)));
    }

    /// Lowest feature, then lowest bin, among the maximal-gain splits.
    fn best_split(&self, hist: &Histogram, total_s: f64, total_n: f64) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for f in 0..self.binned.len() {
            let nb = self.bins.n_bins(f);
            let sum = &hist.sum[f * HIST_STRIDE..f * HIST_STRIDE + nb];
            let count = &hist.count[f * HIST_STRIDE..f * HIST_STRIDE + nb];
            let (mut ls, mut ln) = (0.0, 0.0);
            for b in 0..nb - 1 {
                ls += sum[b];
                ln += f64::from(count[b]);
                let rn = total_n - ln;
                if rn < self.msl {
                    break;
                }
                if ln < self.msl {
                    continue;
                }
                let diff = ls / ln - (total_s - ls) / rn;
                let gain = ln * rn / total_n * diff * diff;
                if gain > best.map_or(MIN_GAIN, |(_, _, g)| g) {
                    best = Some((f, b, gain));
                }
            }
        }
        best
    }
}

/// Fits `n_iterations` boosting stages; `seed` only affects which rows define
/// bin edges on inputs larger than 200,000 rows.
pub fn fit_hist_gbm(x: &Matrix, y: &[f64], params: &GbmParams, seed: u64) -> Result<GbmModel> {
    check_xy(x, y)?;
    params.validate()?;
    let n = y.len();
    let bins = BinMapper::fit(x, params.max_bins, seed);
    let binned = bins.transform(x);
    let init = stats::mean(y);
    let mut pred = vec![init; n];
    let mut residual = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_iterations);
    let mut rows: Vec<u32> = (0..n as u32).collect();
    for _ in 0..params.n_iterations {
        for i in 0..n {
            residual[i] = y[i] - pred[i];
        }
        rows.iter_mut().enumerate().for_each(|(k, r)| *r = k as u32);
        let hist = Histogram::build(&binned, &rows, &residual);
        let mut grower = Grower {
            binned: &binned,
            bins: &bins,
            residual: &residual,
            max_depth: params.max_depth,
            msl: params.min_samples_leaf as f64,
            scratch: Vec::new(),
            fitted: vec![0.0; n],
        };
        let mut tree = Tree::new(x.n_cols());
        grower.grow(&mut tree, &mut rows, hist, 0, None);
        for (p, v) in pred.iter_mut().zip(&grower.fitted) {
            *p += params.learning_rate * v;
        }
        trees.push(tree);
    }
    Ok(GbmModel {
        n_features: x.n_cols(),
        bins,
        init,
        learning_rate: params.learning_rate,
        trees,
    })
}
