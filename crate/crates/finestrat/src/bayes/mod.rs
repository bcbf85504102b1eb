//! Bayesian mean-variance smoothing.
//!
//! Stratum observations are modeled as normal with mean `m(x_h; beta)` and
//! variance `s^2(x_h; gamma)`, both truncated power splines over the
//! collapsing index, with knot coefficients shrunk as random effects. The
//! posterior raises each stratum's density to its normalized design weight
//! (a pseudo-likelihood under informative sampling) and is sampled by
//! Metropolis-within-Gibbs. Multi-PSU strata add an equicorrelation matrix
//! `R(rho)` inside each stratum. The variance of the HT mean is then
//! estimated from the posterior of the smoothed variance function, without
//! collapsing strata.

pub mod equicorr;
pub mod likelihood;
pub mod sampler;

pub use equicorr::{decorrelate, equicorr_inv_sqrt, equicorr_logdet, Equicorr};
pub use likelihood::{log_power_likelihood_multi, log_pseudo_likelihood_single};
pub use sampler::{
    gibbs_beta_multi, gibbs_beta_single, gibbs_tau2, mh_accept, mh_gamma_single, mh_rho,
    run_chain, run_mcmc_multi, run_mcmc_single, RhoMode,
};

use crate::design::DrawnSample;
use crate::error::{Error, Result};
use crate::estimators::{VarianceDiagnostics, VarianceEstimate, VarianceMethod};
use crate::spline::{self, SplineBasis};

/// Prior hyperparameters: diffuse normals on the fixed coefficients,
/// weakly informative inverse-gammas on the shrinkage variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Priors {
    pub s_beta: f64,
    pub s_gamma: f64,
    pub a_beta: f64,
    pub b_beta: f64,
    pub a_gamma: f64,
    pub b_gamma: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors { s_beta: 100.0, s_gamma: 100.0, a_beta: 1.0, b_beta: 1.0, a_gamma: 1.0, b_gamma: 1.0 }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("S_beta", self.s_beta),
            ("S_gamma", self.s_gamma),
            ("a_beta", self.a_beta),
            ("b_beta", self.b_beta),
            ("a_gamma", self.a_gamma),
            ("b_gamma", self.b_gamma),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(format!("prior {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// All model parameters at one MCMC iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaState {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub tau2_beta: f64,
    pub tau2_gamma: f64,
    /// Equicorrelation parameter; 0 when not sampled.
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    /// Random-walk proposal standard deviation for the gamma block.
    pub step_gamma: f64,
    /// Random-walk proposal standard deviation for rho.
    pub step_rho: f64,
    /// Adapt step sizes during burn-in (Robbins-Monro toward 0.3 acceptance),
    /// frozen afterwards.
    pub adapt: bool,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig { iterations: 4000, burn_in: 1000, step_gamma: 0.05, step_rho: 0.1, adapt: true, seed: 0 }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::config("burn-in must be smaller than the iteration count"));
        }
        if !(self.step_gamma > 0.0) || !(self.step_rho > 0.0) {
            return Err(Error::config("proposal step sizes must be positive"));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        self.iterations - self.burn_in
    }
}

/// Retained post-burn-in draws plus acceptance bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub draws: Vec<ThetaState>,
    /// Post-burn-in acceptance rate of the gamma block.
    pub accept_gamma: f64,
    /// Post-burn-in acceptance rate of the rho block, when sampled.
    pub accept_rho: Option<f64>,
    /// Per-retained-draw accept flags, aligned with `draws`.
    pub gamma_accept_flags: Vec<bool>,
    /// Empty unless rho was sampled.
    pub rho_accept_flags: Vec<bool>,
    /// True when a multi-PSU run had no stratum with two or more PSUs and
    /// rho was pinned at 0.
    pub rho_fixed_fallback: bool,
    /// Step sizes in force after burn-in adaptation.
    pub final_step_gamma: f64,
    pub final_step_rho: f64,
}

/// Extras reported alongside a Bayesian variance estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesDiagnostics {
    pub accept_gamma: f64,
    pub accept_rho: Option<f64>,
    /// Equal-tailed 95% posterior interval of the variance functional.
    pub interval95: (f64, f64),
    /// Posterior mean of `s^2(x_h; gamma)` per stratum, sample order.
    pub stratum_variances: Vec<f64>,
    /// Posterior mean of rho, when sampled.
    pub rho_mean: Option<f64>,
}

/// Bayesian variance estimator for one PSU per stratum:
/// `N^{-2} sum_h w_h^2 shat^2(x_h)` with `w_h = 1/pi_h` and `shat^2` the
/// posterior mean of the smoothed variance function.
pub fn var_bayes_single(
    draws: &PosteriorDraws,
    basis: &SplineBasis,
    sample: &DrawnSample,
) -> Result<VarianceEstimate> {
    sample.validate()?;
    if draws.draws.is_empty() {
        return Err(Error::config("var_bayes needs at least one posterior draw"));
    }
    if sample.max_sample_size() != 1 {
        return Err(Error::config("var_bayes_single requires one PSU per stratum"));
    }
    let h = sample.strata.len();
    let rows: Vec<Vec<f64>> = sample.strata.iter().map(|s| basis.eval(s.x)).collect();
    let sq_weights: Vec<f64> =
        sample.strata.iter().map(|s| (1.0 / s.units[0].pi).powi(2)).collect();
    let n2 = (sample.population_size as f64).powi(2);

    let mut stratum_acc = vec![0.0; h];
    let mut per_draw = Vec::with_capacity(draws.draws.len());
    for theta in &draws.draws {
        let mut v = 0.0;
        for i in 0..h {
            let s2 = spline::exp_clamped(spline::dot(&rows[i], &theta.gamma));
            stratum_acc[i] += s2;
            v += sq_weights[i] * s2;
        }
        per_draw.push(v / n2);
    }
    let count = draws.draws.len() as f64;
    let stratum_variances: Vec<f64> = stratum_acc.iter().map(|a| a / count).collect();
    let value = stratum_variances
        .iter()
        .zip(sq_weights.iter())
        .map(|(s2, w2)| w2 * s2)
        .sum::<f64>()
        / n2;
    let interval95 = equal_tailed_95(&mut per_draw);
    Ok(VarianceEstimate {
        method: VarianceMethod::Bayes,
        value,
        diagnostics: VarianceDiagnostics::Bayes(BayesDiagnostics {
            accept_gamma: draws.accept_gamma,
            accept_rho: draws.accept_rho,
            interval95,
            stratum_variances,
            rho_mean: None,
        }),
    })
}

/// Multi-PSU Bayesian variance estimator:
/// `N^{-2} sum_h w' [posterior mean of s^2(x_h) R_h(rho)] w` with
/// `w = (1/pi_h1, ..., 1/pi_hn)`. The quadratic form is averaged per draw,
/// which equals plugging in the posterior-mean matrix.
pub fn var_bayes_multi(
    draws: &PosteriorDraws,
    basis: &SplineBasis,
    sample: &DrawnSample,
) -> Result<VarianceEstimate> {
    sample.validate()?;
    if draws.draws.is_empty() {
        return Err(Error::config("var_bayes needs at least one posterior draw"));
    }
    let h = sample.strata.len();
    let rows: Vec<Vec<f64>> = sample.strata.iter().map(|s| basis.eval(s.x)).collect();
    // For w' R(rho) w with unit diagonal: (1-rho) sum w^2 + rho (sum w)^2.
    let weight_moments: Vec<(f64, f64)> = sample
        .strata
        .iter()
        .map(|s| {
            let sum: f64 = s.units.iter().map(|u| 1.0 / u.pi).sum();
            let sum_sq: f64 = s.units.iter().map(|u| (1.0 / u.pi).powi(2)).sum();
            (sum, sum_sq)
        })
        .collect();
    let n2 = (sample.population_size as f64).powi(2);

    let mut stratum_acc = vec![0.0; h];
    let mut rho_acc = 0.0;
    let mut per_draw = Vec::with_capacity(draws.draws.len());
    for theta in &draws.draws {
        let mut v = 0.0;
        for i in 0..h {
            let s2 = spline::exp_clamped(spline::dot(&rows[i], &theta.gamma));
            stratum_acc[i] += s2;
            let (sum, sum_sq) = weight_moments[i];
            v += s2 * ((1.0 - theta.rho) * sum_sq + theta.rho * sum * sum);
        }
        rho_acc += theta.rho;
        per_draw.push(v / n2);
    }
    let count = draws.draws.len() as f64;
    let value = per_draw.iter().sum::<f64>() / count;
    let interval95 = equal_tailed_95(&mut per_draw);
    let rho_sampled = draws.accept_rho.is_some();
    Ok(VarianceEstimate {
        method: VarianceMethod::Bayes,
        value,
        diagnostics: VarianceDiagnostics::Bayes(BayesDiagnostics {
            accept_gamma: draws.accept_gamma,
            accept_rho: draws.accept_rho,
            interval95,
            stratum_variances: stratum_acc.iter().map(|a| a / count).collect(),
            rho_mean: rho_sampled.then(|| rho_acc / count),
        }),
    })
}

fn equal_tailed_95(values: &mut [f64]) -> (f64, f64) {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (sorted_quantile(values, 0.025), sorted_quantile(values, 0.975))
}

fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}
