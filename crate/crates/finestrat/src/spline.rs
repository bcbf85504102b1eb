//! Truncated power spline basis.
//!
//! One basis serves both smoothed functions: the stratum mean `m(x; beta)`
//! and the stratum log-variance `log s^2(x; gamma)`. The basis of degree `q`
//! with knots `k_1 < ... < k_L` evaluates to
//! `(1, x, ..., x^q, (x - k_1)_+^q, ..., (x - k_L)_+^q)`,
//! so its dimension is `p = q + 1 + L`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    degree: usize,
    knots: Vec<f64>,
}

impl SplineBasis {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("knots must be strictly increasing"));
        }
        Ok(SplineBasis { degree, knots })
    }

    /// Quantile-placed basis: knots at the l/(L+1) empirical quantiles of x,
    /// deduplicated to keep them strictly increasing.
    pub fn from_quantiles(x: &[f64], degree: usize, knot_count: usize) -> Result<Self> {
        let knots = place_knots(x, knot_count)?;
        SplineBasis::new(degree, knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Basis dimension `p = q + 1 + L`.
    pub fn dim(&self) -> usize {
        self.degree + 1 + self.knots.len()
    }

    /// Number of truncated (random-effect) coefficients, `L`.
    pub fn tail_len(&self) -> usize {
        self.knots.len()
    }

    /// Evaluate the basis vector at `x`.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        let mut pow = 1.0;
        out.push(1.0);
        for _ in 0..self.degree {
            pow *= x;
            out.push(pow);
        }
        for &k in &self.knots {
            let d = x - k;
            out.push(if d > 0.0 { d.powi(self.degree as i32) } else { 0.0 });
        }
        out
    }
}

/// Interior knots at the `l/(L+1)` empirical quantiles of `x` for
/// `l = 1..=L`, linearly interpolated, deduplicated.
pub fn place_knots(x: &[f64], knot_count: usize) -> Result<Vec<f64>> {
    if knot_count < 1 {
        return Err(Error::config("knot count must be at least 1"));
    }
    let mut sorted: Vec<f64> = x.to_vec();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("knot placement requires finite x"));
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut distinct = sorted.clone();
    distinct.dedup_by(|a, b| a == b);
    if distinct.len() < knot_count + 2 {
        return Err(Error::data(format!(
            "need at least {} distinct x values for {} knots, have {}",
            knot_count + 2,
            knot_count,
            distinct.len()
        )));
    }
    let mut knots: Vec<f64> = (1..=knot_count)
        .map(|l| quantile_linear(&sorted, l as f64 / (knot_count + 1) as f64))
        .collect();
    knots.dedup_by(|a, b| a == b);
    Ok(knots)
}

/// Linear-interpolation empirical quantile of sorted data (R type 7).
fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// `m(x; beta)`: basis dot product.
pub fn mean_at(basis: &SplineBasis, beta: &[f64], x: f64) -> Result<f64> {
    if beta.len() != basis.dim() {
        return Err(Error::config(format!(
            "beta has {} entries, basis dimension is {}",
            beta.len(),
            basis.dim()
        )));
    }
    Ok(dot(&basis.eval(x), beta))
}

/// Clamp for the log-variance dot product; inert in the stationary region
/// but prevents overflow in early iterations.
pub const LOG_VARIANCE_CLAMP: f64 = 50.0;

/// `s^2(x; gamma) = exp(log-variance basis fit)`, clamped to
/// `exp(+-LOG_VARIANCE_CLAMP)`.
pub fn variance_at(basis: &SplineBasis, gamma: &[f64], x: f64) -> Result<f64> {
    if gamma.len() != basis.dim() {
        return Err(Error::config(format!(
            "gamma has {} entries, basis dimension is {}",
            gamma.len(),
            basis.dim()
        )));
    }
    Ok(exp_clamped(dot(&basis.eval(x), gamma)))
}

/// Variance from a precomputed basis row; used in sampler hot loops.
pub(crate) fn exp_clamped(log_variance: f64) -> f64 {
    log_variance.clamp(-LOG_VARIANCE_CLAMP, LOG_VARIANCE_CLAMP).exp()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}
