//! Elastic net (coordinate descent) and ridge (closed form) on standardized
//! columns. Coefficients are reported on the original feature scale.
//!
//! The elastic-net objective on standardized data `z` and centred target is
//! `(1/2n)·‖y − zb‖² + λ·(α‖b‖₁ + (1−α)/2·‖b‖²)`. Coordinate descent only
//! needs the Gram matrix `zᵀz/n` and `zᵀy/n`, which are accumulated once from
//! shifted sufficient statistics so cross-validation folds can be assembled by
//! subtraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{check_xy, Regressor};
use crate::matrix::Matrix;

/// Columns whose standard deviation falls below this (relative to their
/// magnitude) are treated as constant and receive a zero coefficient.
const CONSTANT_SD: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    coefficients: Vec<f64>,
    intercept: f64,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl LinearModel {
    /// All-zero coefficients with a fixed intercept.
    pub fn constant(n_features: usize, intercept: f64) -> Self {
        LinearModel {
            coefficients: vec![0.0; n_features],
            intercept,
            means: vec![0.0; n_features],
            sds: vec![1.0; n_features],
        }
    }

    /// A model with explicit original-scale coefficients.
    pub fn from_coefficients(coefficients: Vec<f64>, intercept: f64) -> Self {
        let p = coefficients.len();
        LinearModel {
            coefficients,
            intercept,
            means: vec![0.0; p],
            sds: vec![1.0; p],
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    /// Column means used for standardization at fit time.
    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn sds(&self) -> &[f64] {
        &self.sds
    }

    /// Coefficients on the standardized scale.
    pub fn standardized_coefficients(&self) -> Vec<f64> {
        self.coefficients.iter().zip(&self.sds).map(|(c, s)| c * s).collect()
    }

    fn from_standardized(b: &[f64], means: Vec<f64>, sds: Vec<f64>, active: &[bool], y_mean: f64) -> Self {
        let coefficients: Vec<f64> = (0..b.len())
            .map(|j| if active[j] { b[j] / sds[j] } else { 0.0 })
            .collect();
        let intercept = y_mean - coefficients.iter().zip(&means).map(|(c, m)| c * m).sum::<f64>();
        LinearModel {
            coefficients,
            intercept,
            means,
            sds,
        }
    }
}

impl Regressor for LinearModel {
    fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(row).map(|(c, x)| c * x).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElasticNetParams {
    pub l1_ratio: f64,
    pub lambda_grid: Vec<f64>,
    pub cv_folds: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ElasticNetParams {
    fn default() -> Self {
        ElasticNetParams {
            l1_ratio: 0.5,
            lambda_grid: vec![0.001, 0.01, 0.1, 1.0],
            cv_folds: 3,
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

impl ElasticNetParams {
    pub(crate) fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("elastic net: {m}")));
        if !(0.0..=1.0).contains(&self.l1_ratio) {
            return bad("l1_ratio must lie in [0, 1]");
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return bad("lambda_grid must be non-empty with finite values >= 0");
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be >= 2");
        }
        if !(self.tol > 0.0) || self.max_iter < 1 {
            return bad("tol must be > 0 and max_iter >= 1");
        }
        Ok(())
    }
}

/// Shifted first and second moments of `(x, y)` over a set of rows.
#[derive(Clone)]
struct Moments {
    n: f64,
    sx: Vec<f64>,
    sy: f64,
    sxx: Vec<f64>,
    sxy: Vec<f64>,
    syy: f64,
}

impl Moments {
    fn zero(p: usize) -> Self {
        Moments {
            n: 0.0,
            sx: vec![0.0; p],
            sy: 0.0,
            sxx: vec![0.0; p * p],
            sxy: vec![0.0; p],
            syy: 0.0,
        }
    }

    fn accumulate(x: &Matrix, y: &[f64], rows: std::ops::Range<usize>, shift: &Shift) -> Self {
        let p = x.n_cols();
        let mut m = Moments::zero(p);
        let mut d = vec![0.0; p];
        for i in rows {
            for (j, dj) in d.iter_mut().enumerate() {
                *dj = x.get(i, j) - shift.x[j];
            }
            let dy = y[i] - shift.y;
            m.n += 1.0;
            m.sy += dy;
            m.syy += dy * dy;
            for j in 0..p {
                m.sx[j] += d[j];
                m.sxy[j] += d[j] * dy;
                let row = &mut m.sxx[j * p..(j + 1) * p];
                for k in j..p {
                    row[k] += d[j] * d[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                m.sxx[j * p + k] = m.sxx[k * p + j];
            }
        }
        m
    }

    fn minus(&self, other: &Moments) -> Moments {
        let sub = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(a, b)| a - b).collect();
        Moments {
            n: self.n - other.n,
            sx: sub(&self.sx, &other.sx),
            sy: self.sy - other.sy,
            sxx: sub(&self.sxx, &other.sxx),
            sxy: sub(&self.sxy, &other.sxy),
            syy: self.syy - other.syy,
        }
    }

    fn plus(&self, other: &Moments) -> Moments {
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(a, b)| a + b).collect();
        Moments {
            n: self.n + other.n,
            sx: add(&self.sx, &other.sx),
            sy: self.sy + other.sy,
            sxx: add(&self.sxx, &other.sxx),
            sxy: add(&self.sxy, &other.sxy),
            syy: self.syy + other.syy,
        }
    }
}

struct Shift {
    x: Vec<f64>,
    y: f64,
}

impl Shift {
    fn of(x: &Matrix, y: &[f64]) -> Self {
        let n = x.n_rows() as f64;
        let mut sx = vec![0.0; x.n_cols()];
        for row in x.rows_iter() {
            for (s, v) in sx.iter_mut().zip(row) {
                *s += v;
            }
        }
        Shift {
            x: sx.into_iter().map(|s| s / n).collect(),
            y: y.iter().sum::<f64>() / n,
        }
    }
}

/// The standardized least-squares problem derived from [`Moments`].
struct Standardized {
    p: usize,
    gram: Vec<f64>,
    c: Vec<f64>,
    y_var: f64,
    means: Vec<f64>,
    sds: Vec<f64>,
    y_mean: f64,
    active: Vec<bool>,
}

impl Standardized {
    fn from_moments(m: &Moments, shift: &Shift) -> Self {
        let p = m.sx.len();
        let n = m.n;
        let mx: Vec<f64> = m.sx.iter().map(|s| s / n).collect();
        let my = m.sy / n;
        let mut sds = vec![0.0; p];
        let mut active = vec![false; p];
        let means: Vec<f64> = (0..p).map(|j| shift.x[j] + mx[j]).collect();
        for j in 0..p {
            let var = (m.sxx[j * p + j] / n - mx[j] * mx[j]).max(0.0);
            sds[j] = var.sqrt();
            active[j] = sds[j] > CONSTANT_SD * (1.0 + means[j].abs());
        }
        let mut gram = vec![0.0; p * p];
        let mut c = vec![0.0; p];
        for j in (0..p).filter(|&j| active[j]) {
            c[j] = (m.sxy[j] / n - mx[j] * my) / sds[j];
            for k in (0..p).filter(|&k| active[k]) {
                gram[j * p + k] = (m.sxx[j * p + k] / n - mx[j] * mx[k]) / (sds[j] * sds[k]);
            }
        }
        for (j, sd) in sds.iter_mut().enumerate() {
            if !active[j] {
                *sd = 1.0;
            }
        }
        Standardized {
            p,
            gram,
            c,
            y_var: (m.syy / n - my * my).max(0.0),
            means,
            sds,
            y_mean: shift.y + my,
            active,
        }
    }

    fn objective(&self, b: &[f64], l1: f64, l2: f64) -> f64 {
        let p = self.p;
        let mut quad = 0.0;
        for j in 0..p {
            let gb: f64 = (0..p).map(|k| self.gram[j * p + k] * b[k]).sum();
            quad += b[j] * gb;
        }
        let cb: f64 = self.c.iter().zip(b).map(|(c, b)| c * b).sum();
        let l1_norm: f64 = b.iter().map(|v| v.abs()).sum();
        let l2_norm: f64 = b.iter().map(|v| v * v).sum();
        0.5 * (self.y_var - 2.0 * cb + quad) + l1 * l1_norm + 0.5 * l2 * l2_norm
    }

    /// Cyclic coordinate descent from zero. Returns the number of sweeps and
    /// whether the tolerance was met.
    fn solve(&self, l1: f64, l2: f64, tol: f64, max_iter: usize, trace: &mut Vec<f64>) -> (Vec<f64>, usize, bool) {
        let p = self.p;
        let mut b = vec![0.0; p];
        let mut q = vec![0.0; p];
        trace.push(self.objective(&b, l1, l2));
        for sweep in 1..=max_iter {
            let mut max_delta: f64 = 0.0;
            for j in (0..p).filter(|&j| self.active[j]) {
                let gjj = self.gram[j * p + j];
                let rho = self.c[j] - (q[j] - gjj * b[j]);
                let new = soft_threshold(rho, l1) / (gjj + l2);
                let delta = new - b[j];
                if delta != 0.0 {
                    let col = &self.gram[j * p..(j + 1) * p];
                    for (qk, g) in q.iter_mut().zip(col) {
                        *qk += delta * g;
                    }
                    b[j] = new;
                    max_delta = max_delta.max(delta.abs());
                }
            }
            trace.push(self.objective(&b, l1, l2));
            if max_delta < tol {
                return (b, sweep, true);
            }
        }
        (b, max_iter, false)
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Diagnostics of one elastic-net fit.
#[derive(Clone, Debug)]
pub struct ElasticNetFit {
    pub model: LinearModel,
    /// Objective on standardized data before the first sweep and after each sweep.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

fn validate_penalty(l1_ratio: f64, lambda: f64, tol: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&l1_ratio) {
        return Err(Error::InvalidConfig("l1_ratio must lie in [0, 1]".into()));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidConfig("lambda must be finite and >= 0".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig("tol must be > 0".into()));
    }
    Ok(())
}

pub fn fit_elastic_net_detailed(
    x: &Matrix,
    y: &[f64],
    l1_ratio: f64,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<ElasticNetFit> {
    check_xy(x, y)?;
    validate_penalty(l1_ratio, lambda, tol)?;
    if x.n_rows() < 2 {
        return Err(Error::EmptyInput("elastic net needs at least two rows"));
    }
    let shift = Shift::of(x, y);
    let problem = Standardized::from_moments(&Moments::accumulate(x, y, 0..x.n_rows(), &shift), &shift);
    let mut objective_trace = Vec::new();
    let (b, sweeps, converged) = problem.solve(
        lambda * l1_ratio,
        lambda * (1.0 - l1_ratio),
        tol,
        max_iter,
        &mut objective_trace,
    );
    let model = LinearModel::from_standardized(&b, problem.means, problem.sds, &problem.active, problem.y_mean);
    Ok(ElasticNetFit {
        model,
        objective_trace,
        sweeps,
        converged,
    })
}

pub fn fit_elastic_net(
    x: &Matrix,
    y: &[f64],
    l1_ratio: f64,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LinearModel> {
    Ok(fit_elastic_net_detailed(x, y, l1_ratio, lambda, tol, max_iter)?.model)
}

/// Elastic-net objective of `model` on `(x, y)`, standardized with the
/// model's own column statistics.
pub fn elastic_net_objective(model: &LinearModel, x: &Matrix, y: &[f64], l1_ratio: f64, lambda: f64) -> f64 {
    let n = y.len() as f64;
    let rss: f64 = x
        .rows_iter()
        .zip(y)
        .map(|(row, y)| {
            let r = y - model.predict_row(row);
            r * r
        })
        .sum();
    let b = model.standardized_coefficients();
    let l1_norm: f64 = b.iter().map(|v| v.abs()).sum();
    let l2_norm: f64 = b.iter().map(|v| v * v).sum();
    rss / (2.0 * n) + lambda * (l1_ratio * l1_norm + 0.5 * (1.0 - l1_ratio) * l2_norm)
}

/// Chooses λ from `params.lambda_grid` by mean squared error over
/// `cv_folds` contiguous row blocks, then refits on all rows. Ties keep the
/// earlier grid entry. Returns the model and the chosen λ.
pub fn fit_elastic_net_cv(x: &Matrix, y: &[f64], params: &ElasticNetParams) -> Result<(LinearModel, f64)> {
    check_xy(x, y)?;
    params.validate()?;
    let n = x.n_rows();
    let k = params.cv_folds;
    let l1_ratio = params.l1_ratio;
    if n < 2 {
        return Err(Error::EmptyInput("elastic net needs at least two rows"));
    }
    let shift = Shift::of(x, y);
    let mut chosen = params.lambda_grid[0];
    let mut blocks = Vec::new();
    let mut total = Moments::zero(x.n_cols());
    if n >= 2 * k {
        for f in 0..k {
            let range = (f * n / k)..((f + 1) * n / k);
            let m = Moments::accumulate(x, y, range.clone(), &shift);
            total = total.plus(&m);
            blocks.push((range, m));
        }
        let mut best_mse = f64::INFINITY;
        for &lambda in &params.lambda_grid {
            let mut sse = 0.0;
            for (range, held) in &blocks {
                let problem = Standardized::from_moments(&total.minus(held), &shift);
                let (b, _, _) = problem.solve(
                    lambda * l1_ratio,
                    lambda * (1.0 - l1_ratio),
                    params.tol,
                    params.max_iter,
                    &mut Vec::new(),
                );
                let model = LinearModel::from_standardized(
                    &b,
                    problem.means.clone(),
                    problem.sds.clone(),
                    &problem.active,
                    problem.y_mean,
                );
                for i in range.clone() {
                    let r = y[i] - model.predict_row(x.row(i));
                    sse += r * r;
                }
            }
            let mse = sse / n as f64;
            if mse < best_mse {
                best_mse = mse;
                chosen = lambda;
            }
        }
    } else {
        total = Moments::accumulate(x, y, 0..n, &shift);
    }
    let problem = Standardized::from_moments(&total, &shift);
    let (b, _, _) = problem.solve(
        chosen * l1_ratio,
        chosen * (1.0 - l1_ratio),
        params.tol,
        params.max_iter,
        &mut Vec::new(),
    );
    let model = LinearModel::from_standardized(&b, problem.means, problem.sds, &problem.active, problem.y_mean);
    Ok((model, chosen))
}

/// Solves `(zᵀz + λI)β = zᵀ(y − ȳ)` on standardized columns with an
/// unpenalized intercept.
pub fn fit_ridge(x: &Matrix, y: &[f64], lambda: f64) -> Result<LinearModel> {
    check_xy(x, y)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidConfig("ridge lambda must be finite and >= 0".into()));
    }
    let n = x.n_rows();
    let p = x.n_cols();
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    let means: Vec<f64> = (0..p).map(|j| x.column(j).iter().sum::<f64>() / nf).collect();
    let mut sds: Vec<f64> = (0..p)
        .map(|j| {
            let ss: f64 = (0..n).map(|i| (x.get(i, j) - means[j]).powi(2)).sum();
            (ss / nf).sqrt()
        })
        .collect();
    let active: Vec<bool> = (0..p).map(|j| sds[j] > CONSTANT_SD * (1.0 + means[j].abs())).collect();
    let idx: Vec<usize> = (0..p).filter(|&j| active[j]).collect();
    let q = idx.len();

    let mut a = vec![0.0; q * q];
    let mut rhs = vec![0.0; q];
    let mut z = vec![0.0; q];
    for i in 0..n {
        for (k, &j) in idx.iter().enumerate() {
            z[k] = (x.get(i, j) - means[j]) / sds[j];
        }
        let r = y[i] - y_mean;
        for k in 0..q {
            rhs[k] += z[k] * r;
            for l in k..q {
                a[k * q + l] += z[k] * z[l];
            }
        }
    }
    for k in 0..q {
        a[k * q + k] += lambda;
        for l in 0..k {
            a[k * q + l] = a[l * q + k];
        }
    }
    let beta = cholesky_solve(&mut a, &rhs, q).ok_or(Error::Singular)?;
    let mut b = vec![0.0; p];
    for (k, &j) in idx.iter().enumerate() {
        b[j] = beta[k];
    }
    for (j, sd) in sds.iter_mut().enumerate() {
        if !active[j] {
            *sd = 1.0;
        }
    }
    Ok(LinearModel::from_standardized(&b, means, sds, &active, y_mean))
}

/// In-place Cholesky factorisation and solve of a symmetric `q × q` system.
/// `None` when a pivot is not safely positive.
fn cholesky_solve(a: &mut [f64], rhs: &[f64], q: usize) -> Option<Vec<f64>> {
    let scale = (0..q).map(|k| a[k * q + k].abs()).fold(0.0, f64::max);
    let floor = 1e-12 * scale.max(f64::MIN_POSITIVE);
    for j in 0..q {
        let mut d = a[j * q + j];
        for k in 0..j {
            d -= a[j * q + k] * a[j * q + k];
        }
        if !(d > floor) {
            return None;
        }
        let d = d.sqrt();
        a[j * q + j] = d;
        for i in j + 1..q {
            let mut s = a[i * q + j];
            for k in 0..j {
                s -= a[i * q + k] * a[j * q + k];
            }
            a[i * q + j] = s / d;
        }
    }
    let mut v = rhs.to_vec();
    for i in 0..q {
        for k in 0..i {
            v[i] -= a[i * q + k] * v[k];
        }
        v[i] /= a[i * q + i];
    }
    for i in (0..q).rev() {
        for k in i + 1..q {
            v[i] -= a[k * q + i] * v[k];
        }
        v[i] /= a[i * q + i];
    }
    Some(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Matrix, Vec<f64>) {
        let x = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0], [3.0, 5.0], [4.0, 3.0], [5.0, 4.0]]).unwrap();
        (x, vec![3.1, 3.9, 9.2, 8.8, 10.1])
    }

    #[test]
    fn constant_target() {
        let (x, _) = toy();
        let m = fit_elastic_net(&x, &[4.0; 5], 0.5, 0.1, 1e-8, 100).unwrap();
        assert!(m.coefficients().iter().all(|&c| c == 0.0));
        assert!((m.intercept() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn huge_penalty_shrinks_everything() {
        let (x, y) = toy();
        let m = fit_elastic_net(&x, &y, 0.5, 1e9, 1e-8, 100).unwrap();
        assert!(m.coefficients().iter().all(|&c| c == 0.0));
        let r = fit_ridge(&x, &y, 1e9).unwrap();
        assert!(r.coefficients().iter().all(|c| c.abs() < 1e-6));
        assert!((r.intercept() - 7.02).abs() < 1e-5);
    }

    #[test]
    fn constant_column_gets_zero() {
        let x = Matrix::from_rows(&[[1.0, 7.0], [2.0, 7.0], [3.0, 7.0], [5.0, 7.0]]).unwrap();
        let y = [2.0, 4.0, 6.0, 10.0];
        let m = fit_elastic_net(&x, &y, 0.5, 0.0, 1e-12, 1000).unwrap();
        assert_eq!(m.coefficients()[1], 0.0);
        assert!((m.coefficients()[0] - 2.0).abs() < 1e-9);
        let r = fit_ridge(&x, &y, 0.0).unwrap();
        assert_eq!(r.coefficients()[1], 0.0);
        assert!((r.intercept()).abs() < 1e-9);
    }

    #[test]
    fn ridge_singular_without_penalty() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]).unwrap();
        assert!(matches!(fit_ridge(&x, &[1.0, 2.0, 3.0], 0.0), Err(Error::Singular)));
        let m = fit_ridge(&x, &[1.0, 2.0, 3.0], 1.0).unwrap();
        let s = m.standardized_coefficients();
        assert!((s[0] - s[1]).abs() < 1e-12);
    }

    #[test]
    fn cv_picks_from_grid() {
        let rows: Vec<[f64; 3]> = (0..60)
            .map(|i| {
                let t = i as f64;
                [t.sin(), (t * 0.7).cos(), (t * 1.3).sin()]
            })
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] - 2.0 * r[1] + 0.01 * r[2]).collect();
        let (m, lambda) = fit_elastic_net_cv(&x, &y, &ElasticNetParams::default()).unwrap();
        assert_eq!(lambda, 0.001);
        assert!((m.coefficients()[0] - 3.0).abs() < 0.05);
    }

    #[test]
    fn dimension_checks() {
        let (x, _) = toy();
        assert!(matches!(fit_ridge(&x, &[1.0], 1.0), Err(Error::DimensionMismatch { .. })));
        let bad = Matrix::from_rows(&[[f64::NAN], [1.0]]).unwrap();
        assert!(matches!(fit_elastic_net(&bad, &[1.0, 2.0], 0.5, 0.1, 1e-6, 10), Err(Error::NonFinite(_))));
    }
}
