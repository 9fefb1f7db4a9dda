//! CART regression trees with exact, presorted split search.
//!
//! Samples carry integer weights so a bootstrap replicate is represented by
//! the multiplicity of each distinct row. Every feature keeps its own ordering
//! of the node's samples; after a split all orderings are stably partitioned,
//! which keeps them sorted without re-sorting.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{check_xy, Regressor};
use crate::matrix::Matrix;
use crate::rng::StreamRng;

const LEAF: i32 = -1;

/// Flat array encoding of a binary regression tree.
///
/// Node 0 is the root. For internal nodes `value` is the threshold and a row
/// goes left iff `x[feature] <= threshold`; for leaves `value` is the
/// prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    n_features: usize,
    max_depth: usize,
    feature: Vec<i32>,
    value: Vec<f64>,
    left: Vec<u32>,
    right: Vec<u32>,
    /// Weighted training samples that reached each node.
    n_samples: Vec<u32>,
}

impl Tree {
    pub(crate) fn new(n_features: usize) -> Self {
        Tree {
            n_features,
            max_depth: 0,
            feature: Vec::new(),
            value: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            n_samples: Vec::new(),
        }
    }

    fn push(&mut self, feature: i32, value: f64, n_samples: u32, depth: usize) -> u32 {
        self.max_depth = self.max_depth.max(depth);
        self.feature.push(feature);
        self.value.push(value);
        self.left.push(0);
        self.right.push(0);
        self.n_samples.push(n_samples);
        (self.feature.len() - 1) as u32
    }

    pub(crate) fn push_leaf(&mut self, value: f64, n_samples: u32, depth: usize) -> u32 {
        self.push(LEAF, value, n_samples, depth)
    }

    /// Adds an internal node whose children are attached later with [`Tree::link`].
    pub(crate) fn push_split(&mut self, feature: usize, threshold: f64, n_samples: u32, depth: usize) -> u32 {
        self.push(feature as i32, threshold, n_samples, depth)
    }

    pub(crate) fn link(&mut self, parent: u32, child: u32, is_left: bool) {
        let p = parent as usize;
        if is_left {
            self.left[p] = child;
        } else {
            self.right[p] = child;
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.feature.iter().filter(|&&f| f == LEAF).count()
    }

    pub fn depth(&self) -> usize {
        self.max_depth
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.feature[node] == LEAF
    }

    /// `(feature, threshold)` of an internal node.
    pub fn split(&self, node: usize) -> Option<(usize, f64)> {
        (!self.is_leaf(node)).then(|| (self.feature[node] as usize, self.value[node]))
    }

    pub fn children(&self, node: usize) -> Option<(usize, usize)> {
        (!self.is_leaf(node)).then(|| (self.left[node] as usize, self.right[node] as usize))
    }

    pub fn node_value(&self, node: usize) -> f64 {
        self.value[node]
    }

    pub fn node_samples(&self, node: usize) -> u32 {
        self.n_samples[node]
    }

    /// Weighted sample counts of all leaves.
    pub fn leaf_sample_counts(&self) -> Vec<u32> {
        (0..self.n_nodes())
            .filter(|&i| self.is_leaf(i))
            .map(|i| self.n_samples[i])
            .collect()
    }

    /// Index of the leaf reached by `row`.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut node = 0usize;
        while self.feature[node] != LEAF {
            let f = self.feature[node] as usize;
            node = if row[f] <= self.value[node] {
                self.left[node]
            } else {
                self.right[node]
            } as usize;
        }
        node
    }
}

impl Regressor for Tree {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        self.value[self.leaf_index(row)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features examined per node; `None` examines all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_leaf: 1,
            max_features: None,
        }
    }
}

impl TreeParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.min_samples_leaf < 1 {
            return Err(Error::InvalidConfig("min_samples_leaf must be >= 1".into()));
        }
        if self.max_features == Some(0) {
            return Err(Error::InvalidConfig("max_features must be >= 1".into()));
        }
        Ok(())
    }
}

/// Column-major copy of the training matrix with a per-feature sort order.
pub(crate) struct Presorted {
    pub(crate) columns: Vec<Vec<f64>>,
    /// Per feature, `(dense value rank << 32) | row` in ascending value order.
    pub(crate) orders: Vec<Vec<u64>>,
}

impl Presorted {
    pub(crate) fn new(x: &Matrix) -> Self {
        let columns: Vec<Vec<f64>> = (0..x.n_cols()).map(|j| x.column(j)).collect();
        let orders = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                let mut rank = 0u64;
                idx.iter()
                    .enumerate()
                    .map(|(k, &i)| {
                        if k > 0 && col[idx[k - 1] as usize] < col[i as usize] {
                            rank += 1;
                        }
                        (rank << 32) | u64::from(i)
                    })
                    .collect()
            })
            .collect();
        Presorted { columns, orders }
    }

    fn n_features(&self) -> usize {
        self.columns.len()
    }
}

struct Task {
    start: usize,
    end: usize,
    depth: usize,
    parent: Option<(u32, bool)>,
}

struct Best {
    feature: usize,
    threshold: f64,
    left_w: f64,
}

/// Grows one tree on the samples with non-zero weight.
pub(crate) fn grow(
    data: &Presorted,
    y: &[f64],
    weights: &[u32],
    params: &TreeParams,
    rng: &mut StreamRng,
) -> Tree {
    let p = data.n_features();
    let n = y.len();
    let mtry = params.max_features.unwrap_or(p).clamp(1, p.max(1));
    let max_depth = params.max_depth.unwrap_or(usize::MAX);
    let msl = params.min_samples_leaf as f64;

    let mut orders: Vec<Vec<u64>> = data
        .orders
        .iter()
        .map(|o| o.iter().copied().filter(|&e| weights[row(e)] > 0).collect())
        .collect();
    // (weight, weight * y) side by side: one cache line per sample in the scan.
    let ws: Vec<[f64; 2]> = y
        .iter()
        .zip(weights)
        .map(|(&y, &c)| [f64::from(c), f64::from(c) * y])
        .collect();
    let mut goes_left = vec![false; n];
    let mut scratch: Vec<u64> = vec![0; n];
    let mut perm: Vec<usize> = (0..p).collect();
    let mut selected: Vec<usize> = Vec::with_capacity(p);

    let mut tree = Tree::new(p);
    let m = orders.first().map_or(0, Vec::len);
    let mut stack = vec![Task {
        start: 0,
        end: m,
        depth: 0,
        parent: None,
    }];

    while let Some(task) = stack.pop() {
        let samples = &orders[0][task.start..task.end];
        let (mut total_w, mut total_s) = (0.0, 0.0);
        for &e in samples {
            let i = row(e);
            let [w, wy] = ws[i];
            total_w += w;
            total_s += wy;
        }
        let first_y = y[row(samples[0])];
        let pure = samples.iter().all(|&e| y[row(e)] == first_y);
        let mean = total_s / total_w;

        let best = if pure || task.depth >= max_depth || total_w < 2.0 * msl {
            None
        } else {
            // Draw features until `mtry` non-constant ones are found, then
            // examine them in index order so ties favour the lowest index.
            selected.clear();
            let mut drawn = 0;
            while drawn < p && selected.len() < mtry {
                let k = rng.random_range(drawn..p);
                perm.swap(drawn, k);
                let f = perm[drawn];
                drawn += 1;
                let ord = &orders[f][task.start..task.end];
                if rank(ord[0]) < rank(ord[ord.len() - 1]) {
                    selected.push(f);
                }
            }
            selected.sort_unstable();
            let mut best: Option<Best> = None;
            let mut best_gain = 0.0;
            for &f in &selected {
                let ord = &orders[f][task.start..task.end];
                let col = &data.columns[f];
                let (mut lw, mut ls) = (0.0, 0.0);
                for k in 0..ord.len() - 1 {
                    let i = row(ord[k]);
                    let [w, wy] = ws[i];
                    lw += w;
                    ls += wy;
                    let rw = total_w - lw;
                    if rw < msl {
                        break;
                    }
                    if lw < msl || rank(ord[k]) == rank(ord[k + 1]) {
                        continue;
                    }
                    // gain = num² / den; compared without dividing.
                    let num = ls * total_w - total_s * lw;
                    let den = lw * rw * total_w;
                    if num * num > best_gain * den {
                        best_gain = num * num / den;
                        best = Some(Best {
                            feature: f,
                            threshold: midpoint(col[i], col[row(ord[k + 1])]),
                            left_w: lw,
                        });
                    }
                }
            }
            best
        };

        let node = match &best {
            None => tree.push_leaf(mean, total_w as u32, task.depth),
            Some(b) => tree.push_split(b.feature, b.threshold, total_w as u32, task.depth),
        };
        if let Some((parent, is_left)) = task.parent {
            tree.link(parent, node, is_left);
        }
        let Some(b) = best else { continue };

        let col = &data.columns[b.feature];
        let mut n_left = 0;
        for &e in &orders[b.feature][task.start..task.end] {
            let l = col[row(e)] <= b.threshold;
            goes_left[row(e)] = l;
            n_left += usize::from(l);
        }
        // Children that cannot split only need one ordering to be summarised.
        let terminal = |w: f64| w < 2.0 * msl || task.depth + 1 >= max_depth;
        let n_orders = if terminal(b.left_w) && terminal(total_w - b.left_w) { 1 } else { p };
        for ord in orders.iter_mut().take(n_orders) {
            stable_partition(&mut ord[task.start..task.end], &goes_left, &mut scratch);
        }
        let mid = task.start + n_left;
        stack.push(Task {
            start: mid,
            end: task.end,
            depth: task.depth + 1,
            parent: Some((node, false)),
        });
        stack.push(Task {
            start: task.start,
            end: mid,
            depth: task.depth + 1,
            parent: Some((node, true)),
        });
    }
    tree
}

/// Midpoint that still separates `lo < hi` under the `<=` rule.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}

fn row(entry: u64) -> usize {
    (entry & 0xffff_ffff) as usize
}

fn rank(entry: u64) -> u64 {
    entry >> 32
}

fn stable_partition(slice: &mut [u64], goes_left: &[bool], scratch: &mut [u64]) {
    // Branch-free: the left/right outcome is unpredictable.
    let (mut l, mut r) = (0, 0);
    for k in 0..slice.len() {
        let e = slice[k];
        let left = goes_left[row(e)];
        slice[l] = e;
        scratch[r] = e;
        l += usize::from(left);
        r += usize::from(!left);
    }
    slice[l..].copy_from_slice(&scratch[..r]);
}

/// Fits a single regression tree on all rows with unit weights.
pub fn fit_tree(x: &Matrix, y: &[f64], params: &TreeParams, rng: &mut StreamRng) -> Result<Tree> {
    check_xy(x, y)?;
    params.validate()?;
    if x.n_cols() == 0 {
        return Err(Error::EmptyInput("training matrix has no columns"));
    }
    let data = Presorted::new(x);
    Ok(grow(&data, y, &vec![1; y.len()], params, rng))
}
