//! Weighted pseudo-likelihoods.
//!
//! The single-PSU posterior raises each stratum's normal density to its
//! normalized weight; the log-likelihood is the weighted sum
//! `sum_h w~_h log phi(y_h; m(x_h; beta), s^2(x_h; gamma))`.
//!
//! With multiple PSUs the observations are whitened first,
//! `z_h = R(rho)^{-1/2} (y_h - m(x_h) 1)`, and each coordinate's density is
//! raised to its own weight, giving per stratum
//! `-(1/2) log|R(rho)| - (W_h/2) log(2 pi s^2) - z' W z / (2 s^2)`
//! with `W_h = sum_j w~_hj`. At `n_h = 1` this reduces exactly to the
//! single-PSU expression. Additive constants are kept throughout so that
//! independent implementations can be compared on absolute values.

use crate::bayes::equicorr::Equicorr;
use crate::design::{DrawnSample, NormalizedWeights};
use crate::error::{Error, Result};
use crate::spline::{self, SplineBasis};

pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// Weighted normal log-likelihood for one PSU per stratum.
pub fn log_pseudo_likelihood_single(
    sample: &DrawnSample,
    weights: &NormalizedWeights,
    basis: &SplineBasis,
    beta: &[f64],
    gamma: &[f64],
) -> Result<f64> {
    check_dims(sample, weights, basis, beta, gamma)?;
    if sample.max_sample_size() != 1 {
        return Err(Error::config("single-PSU likelihood requires n_h = 1 everywhere"));
    }
    let mut acc = 0.0;
    for (s, w_row) in sample.strata.iter().zip(&weights.per_stratum) {
        let row = basis.eval(s.x);
        let m = spline::dot(&row, beta);
        let log_s2 = clamped_log_variance(&row, gamma);
        let s2 = log_s2.exp();
        let r = s.units[0].y - m;
        acc += w_row[0] * (-0.5 * (LN_2PI + log_s2) - r * r / (2.0 * s2));
    }
    Ok(acc)
}

/// Weighted power log-likelihood for the multi-PSU model.
pub fn log_power_likelihood_multi(
    sample: &DrawnSample,
    weights: &NormalizedWeights,
    basis: &SplineBasis,
    beta: &[f64],
    gamma: &[f64],
    rho: f64,
) -> Result<f64> {
    check_dims(sample, weights, basis, beta, gamma)?;
    let mut acc = 0.0;
    for (s, w_row) in sample.strata.iter().zip(&weights.per_stratum) {
        let row = basis.eval(s.x);
        let m = spline::dot(&row, beta);
        let log_s2 = clamped_log_variance(&row, gamma);
        let s2 = log_s2.exp();
        acc += stratum_power_term(&unit_values(s), w_row, m, log_s2, s2, rho)?;
    }
    Ok(acc)
}

/// One stratum's contribution given precomputed mean and variance.
pub(crate) fn stratum_power_term(
    y: &[f64],
    w: &[f64],
    mean: f64,
    log_s2: f64,
    s2: f64,
    rho: f64,
) -> Result<f64> {
    let eq = Equicorr::new(y.len(), rho)?;
    let residuals: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let z = eq.whiten(&residuals);
    let quad: f64 = z.iter().zip(w.iter()).map(|(zi, wi)| wi * zi * zi).sum();
    let w_sum: f64 = w.iter().sum();
    Ok(-0.5 * eq.logdet() - 0.5 * w_sum * (LN_2PI + log_s2) - quad / (2.0 * s2))
}

pub(crate) fn clamped_log_variance(basis_row: &[f64], gamma: &[f64]) -> f64 {
    spline::dot(basis_row, gamma)
        .clamp(-spline::LOG_VARIANCE_CLAMP, spline::LOG_VARIANCE_CLAMP)
}

pub(crate) fn unit_values(s: &crate::design::SampleStratum) -> Vec<f64> {
    s.units.iter().map(|u| u.y).collect()
}

fn check_dims(
    sample: &DrawnSample,
    weights: &NormalizedWeights,
    basis: &SplineBasis,
    beta: &[f64],
    gamma: &[f64],
) -> Result<()> {
    sample.validate()?;
    if weights.per_stratum.len() != sample.strata.len() {
        return Err(Error::config("weights do not align with sample strata"));
    }
    for (s, w) in sample.strata.iter().zip(&weights.per_stratum) {
        if s.units.len() != w.len() {
            return Err(Error::config(format!(
                "stratum {}: {} weights for {} units",
                s.stratum_id,
                w.len(),
                s.units.len()
            )));
        }
    }
    if beta.len() != basis.dim() || gamma.len() != basis.dim() {
        return Err(Error::config("coefficient length does not match basis dimension"));
    }
    Ok(())
}
