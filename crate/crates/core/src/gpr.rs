//! Exact Gaussian process regression with an RBF kernel.
//!
//! Observed values are standardized to zero mean and unit variance; the GP has
//! unit signal variance in that space. `noise_variance` is given in the units
//! of the observed values and rescaled accordingly.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::{MoewError, Result};

const JITTER_START: f64 = 1e-9;
const JITTER_MAX: f64 = 1e-3;

/// `exp(-|a - b|^2 / (2 width^2))`.
pub fn rbf(a: &[f64], b: &[f64], width: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * width * width)).exp()
}

/// Affine map between observed values and the GP's standardized space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    /// Zero mean / unit variance over `values`; `std = 1` unless there are
    /// at least two distinct values.
    pub fn fit(values: &[f64]) -> Standardization {
        if values.is_empty() {
            return Standardization { mean: 0.0, std: 1.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = if var > 0.0 && var.sqrt() > 1e-12 * mean.abs().max(1.0) {
            var.sqrt()
        } else {
            1.0
        };
        Standardization { mean, std }
    }

    pub fn to_std(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn from_std(&self, v: f64) -> f64 {
        self.mean + self.std * v
    }
}

/// Lower Cholesky factor of a dense symmetric matrix, or `None` if not positive definite.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `L x = b` in place.
fn forward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `L^T x = b` in place.
fn backward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// A fitted GP surrogate.
#[derive(Debug, Clone)]
pub struct GprModel {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    kernel_width: f64,
    noise_variance: f64,
    standardization: Standardization,
    jitter: f64,
    chol: Vec<f64>,
    /// `(K + s I)^{-1} r` for standardized residuals `r`.
    weights: Vec<f64>,
}

impl GprModel {
    pub fn fit(points: &[(Vec<f64>, f64)], kernel_width: f64, noise_variance: f64) -> Result<GprModel> {
        let values: Vec<f64> = points.iter().map(|p| p.1).collect();
        GprModel::fit_with(points, kernel_width, noise_variance, Standardization::fit(&values))
    }

    /// Fits with a caller-chosen standardization.
    pub fn fit_with(
        points: &[(Vec<f64>, f64)],
        kernel_width: f64,
        noise_variance: f64,
        standardization: Standardization,
    ) -> Result<GprModel> {
        if points.is_empty() {
            return Err(MoewError::Numerical("GP needs at least one observation".into()));
        }
        if !(kernel_width > 0.0) {
            return Err(MoewError::Numerical(format!("kernel width {kernel_width} must be positive")));
        }
        if !(noise_variance >= 0.0) {
            return Err(MoewError::Numerical("noise variance must be non-negative".into()));
        }
        let d = points[0].0.len();
        if points.iter().any(|p| p.0.len() != d || !p.1.is_finite()) {
            return Err(MoewError::Numerical("observations must share a dimension and be finite".into()));
        }
        let n = points.len();
        let noise_std = noise_variance / (standardization.std * standardization.std);
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = rbf(&points[i].0, &points[j].0, kernel_width);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        let mut jitter = JITTER_START;
        let chol = loop {
            let mut a = k.clone();
            for i in 0..n {
                a[i * n + i] += noise_std + jitter;
            }
            if let Some(l) = cholesky(&a, n) {
                break l;
            }
            jitter *= 10.0;
            if jitter > JITTER_MAX * (1.0 + 1e-9) {
                return Err(MoewError::Numerical(
                    "kernel matrix is not positive definite even with maximal jitter".into(),
                ));
            }
        };
        let mut weights: Vec<f64> = points.iter().map(|p| standardization.to_std(p.1)).collect();
        forward_solve(&chol, n, &mut weights);
        backward_solve(&chol, n, &mut weights);
        Ok(GprModel {
            points: points.iter().map(|p| p.0.clone()).collect(),
            values: points.iter().map(|p| p.1).collect(),
            kernel_width,
            noise_variance,
            standardization,
            jitter,
            chol,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Posterior mean and function variance (no observation noise), in value units.
    pub fn predict(&self, alpha: &[f64]) -> (f64, f64) {
        let n = self.points.len();
        let mut kx: Vec<f64> = self.points.iter().map(|p| rbf(p, alpha, self.kernel_width)).collect();
        let mean_std: f64 = kx.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
        forward_solve(&self.chol, n, &mut kx);
        let var_std = (1.0 - kx.iter().map(|v| v * v).sum::<f64>()).max(0.0);
        let s = self.standardization.std;
        (self.standardization.from_std(mean_std), s * s * var_std)
    }
}

/// Inverse of the standard normal CDF.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p)
}

/// Standard-normal quantile for a percent level; exactly 0 at 50.
pub fn normal_quantile_percent(level: f64) -> f64 {
    if level == 50.0 {
        0.0
    } else {
        inverse_normal_cdf(level / 100.0)
    }
}

/// `mean + z(level) * sqrt(variance)`, the `level`-percent Gaussian quantile.
pub fn quantile(mean: f64, variance: f64, level: f64) -> f64 {
    let z = normal_quantile_percent(level);
    if z == 0.0 {
        return mean;
    }
    mean + z * variance.max(0.0).sqrt()
}

/// GP posterior over a fixed set of query points, updated one observation at a time.
///
/// Observations must be query points. Adding one costs `O(n * |queries|)`,
/// which is what makes the within-batch hallucination loop affordable.
/// Values are in standardized units throughout.
pub struct QueryPosterior {
    queries: Vec<f64>,
    dim: usize,
    width: f64,
    noise_std: f64,
    jitter: f64,
    /// Row `i` is `L^{-1} k(X, q)` restricted to observation `i`, over all queries.
    v: Vec<Vec<f64>>,
    /// `L^{-1} r`.
    u: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
    observed: Vec<(usize, f64)>,
}

impl QueryPosterior {
    /// `queries` is `S x dim` row-major; `noise_std` is in standardized units.
    pub fn new(queries: Vec<f64>, dim: usize, width: f64, noise_std: f64) -> QueryPosterior {
        QueryPosterior::with_jitter(queries, dim, width, noise_std, JITTER_START)
    }

    fn with_jitter(queries: Vec<f64>, dim: usize, width: f64, noise_std: f64, jitter: f64) -> QueryPosterior {
        let s = queries.len() / dim;
        QueryPosterior {
            queries,
            dim,
            width,
            noise_std,
            jitter,
            v: Vec::new(),
            u: Vec::new(),
            mean: vec![0.0; s],
            var: vec![1.0; s],
            observed: Vec::new(),
        }
    }

    pub fn num_queries(&self) -> usize {
        self.mean.len()
    }

    pub fn query(&self, j: usize) -> &[f64] {
        &self.queries[j * self.dim..(j + 1) * self.dim]
    }

    /// Standardized posterior mean at query `j`.
    pub fn mean(&self, j: usize) -> f64 {
        self.mean[j]
    }

    /// Standardized posterior function variance at query `j`.
    pub fn variance(&self, j: usize) -> f64 {
        self.var[j].max(0.0)
    }

    fn try_observe(&mut self, j: usize, residual: f64) -> bool {
        let l: Vec<f64> = self.v.iter().map(|row| row[j]).collect();
        let diag2 = 1.0 + self.noise_std + self.jitter - l.iter().map(|x| x * x).sum::<f64>();
        if !(diag2 > 0.0) {
            return false;
        }
        let diag = diag2.sqrt();
        let xj = self.query(j).to_vec();
        let s = self.num_queries();
        let mut row = vec![0.0; s];
        for (t, out) in row.iter_mut().enumerate() {
            let mut acc = rbf(self.query(t), &xj, self.width);
            for (li, vi) in l.iter().zip(&self.v) {
                acc -= li * vi[t];
            }
            *out = acc / diag;
        }
        let mut lu = 0.0;
        for (li, ui) in l.iter().zip(&self.u) {
            lu += li * ui;
        }
        let u_new = (residual - lu) / diag;
        for t in 0..s {
            self.mean[t] += row[t] * u_new;
            self.var[t] -= row[t] * row[t];
        }
        self.v.push(row);
        self.u.push(u_new);
        true
    }

    /// Conditions on a standardized observation at query `j`, escalating the
    /// jitter (and replaying earlier observations) if the factor breaks down.
    pub fn observe(&mut self, j: usize, residual: f64) -> Result<()> {
        if self.try_observe(j, residual) {
            self.observed.push((j, residual));
            return Ok(());
        }
        let mut history = std::mem::take(&mut self.observed);
        history.push((j, residual));
        let mut jitter = self.jitter;
        loop {
            jitter *= 10.0;
            if jitter > JITTER_MAX * (1.0 + 1e-9) {
                return Err(MoewError::Numerical(
                    "posterior update is not positive definite even with maximal jitter".into(),
                ));
            }
            let queries = std::mem::take(&mut self.queries);
            *self = QueryPosterior::with_jitter(queries, self.dim, self.width, self.noise_std, jitter);
            if history.iter().all(|&(q, r)| self.try_observe(q, r)) {
                self.observed = history;
                return Ok(());
            }
        }
    }

    /// Posterior mean as the dot product of the stored factor column with `L^{-1} r`;
    /// bitwise equal to the incrementally maintained mean.
    pub fn mean_by_dot(&self, j: usize) -> f64 {
        let mut acc = 0.0;
        for (vi, ui) in self.v.iter().zip(&self.u) {
            acc += vi[j] * ui;
        }
        acc
    }
}
