//! Metropolis-within-Gibbs samplers for the smoothing model.
//!
//! One sweep updates, in order: the shrinkage variances (inverse-gamma
//! Gibbs), the mean coefficients (multivariate normal Gibbs from the
//! completed square), the log-variance coefficients (full-vector random-walk
//! Metropolis), and -- when any stratum holds two or more PSUs -- the
//! equicorrelation parameter (random-walk Metropolis restricted to the
//! positive-definite range).
//!
//! The single- and multi-PSU entry points share one engine. The multi-PSU
//! closed forms specialize exactly at `n_h = 1`, and a fixed rho consumes no
//! RNG, so `run_mcmc_multi` on an all-singleton sample replays
//! `run_mcmc_single` bit for bit under the same seed.
//!
//! Proposal step sizes follow the adapted-then-frozen scheme: Robbins-Monro
//! updates toward 0.3 acceptance during burn-in, constant afterwards, so the
//! retained chain targets the exact posterior.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::bayes::equicorr::Equicorr;
use crate::bayes::likelihood::{self, LN_2PI};
use crate::bayes::{McmcConfig, PosteriorDraws, Priors, ThetaState};
use crate::design::{normalized_weights, DrawnSample, NormalizedWeights};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::spline::{self, SplineBasis};

/// How the equicorrelation parameter is treated by the chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoMode {
    Fixed(f64),
    Sampled,
}

const ADAPT_TARGET: f64 = 0.3;
const LOG_STEP_MIN: f64 = -11.5; // ~1e-5
const LOG_STEP_MAX: f64 = 1.6; // ~5

struct AdaptiveStep {
    log_step: f64,
}

impl AdaptiveStep {
    fn new(step: f64) -> Self {
        AdaptiveStep { log_step: step.ln().clamp(LOG_STEP_MIN, LOG_STEP_MAX) }
    }

    fn step(&self) -> f64 {
        self.log_step.exp()
    }

    fn update(&mut self, t: usize, alpha: f64) {
        let gain = ((t + 1) as f64).powf(-0.66);
        self.log_step =
            (self.log_step + gain * (alpha - ADAPT_TARGET)).clamp(LOG_STEP_MIN, LOG_STEP_MAX);
    }
}

struct StratumData {
    y: Vec<f64>,
    w: Vec<f64>,
    w_sum: f64,
    row: Vec<f64>,
}

struct ChainData {
    strata: Vec<StratumData>,
    p: usize,
    fixed_len: usize,
    n_max: usize,
}

impl ChainData {
    fn new(
        sample: &DrawnSample,
        weights: &NormalizedWeights,
        basis: &SplineBasis,
    ) -> Result<Self> {
        sample.validate()?;
        if weights.per_stratum.len() != sample.strata.len() {
            return Err(Error::config("weights do not align with sample strata"));
        }
        let strata = sample
            .strata
            .iter()
            .zip(&weights.per_stratum)
            .map(|(s, w)| {
                if w.len() != s.units.len() {
                    return Err(Error::config(format!(
                        "stratum {}: weight count mismatch",
                        s.stratum_id
                    )));
                }
                Ok(StratumData {
                    y: s.units.iter().map(|u| u.y).collect(),
                    w: w.clone(),
                    w_sum: w.iter().sum(),
                    row: basis.eval(s.x),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n_max = strata.iter().map(|s| s.y.len()).max().unwrap_or(0);
        Ok(ChainData { strata, p: basis.dim(), fixed_len: basis.degree() + 1, n_max })
    }

    fn log_variances(&self, gamma: &[f64]) -> Vec<f64> {
        self.strata
            .iter()
            .map(|s| likelihood::clamped_log_variance(&s.row, gamma))
            .collect()
    }
}

/// Per-sweep quantities that depend on beta and rho but not gamma.
struct SweepCache {
    quads: Vec<f64>,
    logdets: Vec<f64>,
}

fn refresh_cache(data: &ChainData, beta: &[f64], rho: f64) -> Result<SweepCache> {
    let mut quads = Vec::with_capacity(data.strata.len());
    let mut logdets = Vec::with_capacity(data.strata.len());
    for s in &data.strata {
        let eq = Equicorr::new(s.y.len(), rho)?;
        let m = spline::dot(&s.row, beta);
        let residuals: Vec<f64> = s.y.iter().map(|y| y - m).collect();
        let z = eq.whiten(&residuals);
        quads.push(z.iter().zip(s.w.iter()).map(|(zi, wi)| wi * zi * zi).sum());
        logdets.push(eq.logdet());
    }
    Ok(SweepCache { quads, logdets })
}

/// One inverse-gamma Gibbs draw for a shrinkage variance:
/// `IG(a + L/2, b + sum c^2 / 2)`.
pub fn gibbs_tau2(tail_coefs: &[f64], a: f64, b: f64, rng: &mut Rng) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::config("inverse-gamma hyperparameters must be positive"));
    }
    let shape = a + tail_coefs.len() as f64 / 2.0;
    let rate = b + 0.5 * tail_coefs.iter().map(|c| c * c).sum::<f64>();
    let gamma = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::numerical(e.to_string()))?;
    let draw: f64 = gamma.sample(rng);
    Ok((1.0 / draw).max(f64::MIN_POSITIVE))
}

/// The shared accept/reject kernel: accept iff `log u < log_ratio`.
pub fn mh_accept(log_ratio: f64, rng: &mut Rng) -> bool {
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

fn prior_precision(data: &ChainData, tau2_beta: f64, s_fixed: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(data.p, data.p);
    for k in 0..data.p {
        a[(k, k)] = if k < data.fixed_len { 1.0 / s_fixed } else { 1.0 / tau2_beta };
    }
    a
}

/// Posterior precision and linear term for the mean coefficients:
/// `A = D + sum_h b_h (1' M_h 1) b_h' / s^2_h`,
/// `B = sum_h b_h (1' M_h y_h) / s^2_h`, with `M_h = R^{-1/2} W_h R^{-1/2}`.
/// `1' M_h 1 = c1^2 W_h` and `1' M_h y = c1 sum_j w_j (R^{-1/2} y)_j` via the
/// closed-form eigenstructure.
fn normal_equations(
    data: &ChainData,
    s2: &[f64],
    rho: f64,
    tau2_beta: f64,
    priors: &Priors,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut a = prior_precision(data, tau2_beta, priors.s_beta);
    let mut b = DVector::zeros(data.p);
    for (h, s) in data.strata.iter().enumerate() {
        let eq = Equicorr::new(s.y.len(), rho)?;
        let c1 = eq.mean_direction_scale();
        let v = eq.whiten(&s.y);
        let rhs = c1 * v.iter().zip(s.w.iter()).map(|(vi, wi)| wi * vi).sum::<f64>();
        let coeff = c1 * c1 * s.w_sum;
        let sa = coeff / s2[h];
        let sb = rhs / s2[h];
        for i in 0..data.p {
            b[i] += s.row[i] * sb;
            for j in 0..data.p {
                a[(i, j)] += s.row[i] * s.row[j] * sa;
            }
        }
    }
    Ok((a, b))
}

/// Draw from `N(A^{-1} B, A^{-1})` given the precision `A`, with a single
/// jitter retry when the factorization fails.
fn draw_mvn_from_precision(
    mut a: DMatrix<f64>,
    b: &DVector<f64>,
    rng: &mut Rng,
) -> Result<DVector<f64>> {
    let chol = factorize_precision(&mut a)?;
    let mean = chol.solve(b);
    let p = b.len();
    let z = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
    let l = chol.l();
    let u = l
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| Error::numerical("triangular solve failed in beta draw"))?;
    Ok(mean + u)
}

fn solve_precision(mut a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = factorize_precision(&mut a)?;
    Ok(chol.solve(b))
}

fn factorize_precision(a: &mut DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let p = a.nrows();
    let jitter = 1e-8 * a.trace() / p as f64;
    for i in 0..p {
        a[(i, i)] += jitter;
    }
    Cholesky::new(a.clone()).ok_or_else(|| {
        let diag: Vec<f64> = (0..p).map(|i| a[(i, i)]).collect();
        let max = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        Error::numerical(format!(
            "precision matrix not positive definite after jitter {jitter:.3e} \
             (diagonal range [{min:.3e}, {max:.3e}])"
        ))
    })
}

/// Gibbs draw of the mean coefficients, single-PSU model.
pub fn gibbs_beta_single(
    sample: &DrawnSample,
    weights: &NormalizedWeights,
    basis: &SplineBasis,
    gamma: &[f64],
    tau2_beta: f64,
    priors: &Priors,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if sample.max_sample_size() != 1 {
        return Err(Error::config("gibbs_beta_single requires one PSU per stratum"));
    }
    gibbs_beta_multi(sample, weights, basis, gamma, 0.0, tau2_beta, priors, rng)
}

/// Gibbs draw of the mean coefficients, multi-PSU model.
#[allow(clippy::too_many_arguments)]
pub fn gibbs_beta_multi(
    sample: &DrawnSample,
    weights: &NormalizedWeights,
    basis: &SplineBasis,
    gamma: &[f64],
    rho: f64,
    tau2_beta: f64,
    priors: &Priors,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    priors.validate()?;
    if gamma.len() != basis.dim() {
        return Err(Error::config("gamma length does not match basis dimension"));
    }
    let data = ChainData::new(sample, weights, basis)?;
    let s2: Vec<f64> = data.log_variances(gamma).iter().map(|l| l.exp()).collect();
    let (a, b) = normal_equations(&data, &s2, rho, tau2_beta, priors)?;
    Ok(draw_mvn_from_precision(a, &b, rng)?.as_slice().to_vec())
}

fn gamma_log_target(
    data: &ChainData,
    cache: &SweepCache,
    gamma: &[f64],
    tau2_gamma: f64,
    priors: &Priors,
) -> f64 {
    let mut t = 0.0;
    for (h, s) in data.strata.iter().enumerate() {
        let ls2 = likelihood::clamped_log_variance(&s.row, gamma);
        let s2 = ls2.exp();
        t += -0.5 * cache.logdets[h]
            - 0.5 * s.w_sum * (LN_2PI + ls2)
            - cache.quads[h] / (2.0 * s2);
    }
    t + log_prior_coef(gamma, data.fixed_len, priors.s_gamma, tau2_gamma)
}

fn log_prior_coef(coefs: &[f64], fixed_len: usize, s_fixed: f64, tau2: f64) -> f64 {
    let mut t = 0.0;
    for (k, c) in coefs.iter().enumerate() {
        let v = if k < fixed_len { s_fixed } else { tau2 };
        t -= 0.5 * c * c / v;
    }
    t
}

/// Random-walk Metropolis update of the log-variance coefficients under the
/// single-PSU pseudo-likelihood. Returns the new value and the accept flag.
pub fn mh_gamma_single(
    sample: &DrawnSample,
    weights: &NormalizedWeights,
    basis: &SplineBasis,
    state: &ThetaState,
    priors: &Priors,
    step: f64,
    rng: &mut Rng,
) -> Result<(Vec<f64>, bool)> {
    if !(step > 0.0) {
        return Err(Error::config("proposal step must be positive"));
    }
    let fixed_len = basis.degree() + 1;
    let target = |gamma: &[f64]| -> Result<f64> {
        Ok(log_pseudo(sample, weights, basis, &state.beta, gamma)?
            + log_prior_coef(gamma, fixed_len, priors.s_gamma, state.tau2_gamma))
    };
    let current = target(&state.gamma)?;
    let proposal: Vec<f64> =
        state.gamma.iter().map(|g| g + step * sample_normal(rng)).collect();
    let log_ratio = target(&proposal)? - current;
    let accepted = mh_accept(log_ratio, rng);
    Ok((if accepted { proposal } else { state.gamma.clone() }, accepted))
}

fn log_pseudo(
    sample: &DrawnSample,
    weights: &NormalizedWeights,
    basis: &SplineBasis,
    beta: &[f64],
    gamma: &[f64],
) -> Result<f64> {
    likelihood::log_pseudo_likelihood_single(sample, weights, basis, beta, gamma)
}

/// Random-walk Metropolis update of rho. Proposals outside the positive-
/// definite range `(-1/(n_max - 1), 1)` carry log-density `-inf` and are
/// rejected outright; inside it the prior is flat and cancels.
pub fn mh_rho(
    sample: &DrawnSample,
    weights: &NormalizedWeights,
    basis: &SplineBasis,
    state: &ThetaState,
    _priors: &Priors,
    step: f64,
    rng: &mut Rng,
) -> Result<(f64, bool)> {
    if !(step > 0.0) {
        return Err(Error::config("proposal step must be positive"));
    }
    let data = ChainData::new(sample, weights, basis)?;
    if data.n_max < 2 {
        return Err(Error::config("rho is not identified without a multi-PSU stratum"));
    }
    let s2: Vec<f64> = data.log_variances(&state.gamma).iter().map(|l| l.exp()).collect();
    let current = rho_log_target(&data, &state.beta, &s2, state.rho)?;
    let proposal = state.rho + step * sample_normal(rng);
    let log_ratio = match rho_log_target(&data, &state.beta, &s2, proposal) {
        Ok(t) => t - current,
        Err(_) => f64::NEG_INFINITY,
    };
    let accepted = mh_accept(log_ratio, rng);
    Ok((if accepted { proposal } else { state.rho }, accepted))
}

fn rho_log_target(data: &ChainData, beta: &[f64], s2: &[f64], rho: f64) -> Result<f64> {
    let cache = refresh_cache(data, beta, rho)?;
    let mut t = 0.0;
    for ((quad, logdet), s2_h) in cache.quads.iter().zip(&cache.logdets).zip(s2) {
        t += -quad / (2.0 * s2_h) - 0.5 * logdet;
    }
    Ok(t)
}

fn sample_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn initial_state(data: &ChainData, priors: &Priors) -> Result<ThetaState> {
    // Weighted ridge fit of y on the basis with unit variances, then the
    // weighted residual variance seeds the log-variance intercept.
    let ones = vec![1.0; data.strata.len()];
    let (a, b) = normal_equations(data, &ones, 0.0, 1.0, priors)?;
    let beta = solve_precision(a, &b)?.as_slice().to_vec();
    let mut num = 0.0;
    let mut den = 0.0;
    for s in &data.strata {
        let m = spline::dot(&s.row, &beta);
        for (y, w) in s.y.iter().zip(s.w.iter()) {
            num += w * (y - m) * (y - m);
            den += w;
        }
    }
    let resid_var = (num / den).max(1e-8);
    let mut gamma = vec![0.0; data.p];
    gamma[0] = resid_var.ln();
    Ok(ThetaState { beta, gamma, tau2_beta: 1.0, tau2_gamma: 1.0, rho: 0.0 })
}

/// Run one chain with explicit weights (the simulation harness uses this to
/// ablate the design weights). `run_mcmc_single` / `run_mcmc_multi` are the
/// spec'd entry points.
pub fn run_chain(
    sample: &DrawnSample,
    weights: &NormalizedWeights,
    basis: &SplineBasis,
    priors: &Priors,
    cfg: &McmcConfig,
    mode: RhoMode,
) -> Result<PosteriorDraws> {
    priors.validate()?;
    cfg.validate()?;
    let data = ChainData::new(sample, weights, basis)?;
    let sample_rho = match mode {
        RhoMode::Sampled => {
            if data.n_max < 2 {
                return Err(Error::config(
                    "cannot sample rho without a multi-PSU stratum; use RhoMode::Fixed",
                ));
            }
            true
        }
        RhoMode::Fixed(r) => {
            // validate positive definiteness against the widest stratum
            Equicorr::new(data.n_max.max(1), r)?;
            false
        }
    };
    let rho_lower = if data.n_max >= 2 { -1.0 / (data.n_max as f64 - 1.0) } else { -1.0 };

    let mut rng = rng::substream_rng(cfg.seed, 0);
    let mut state = initial_state(&data, priors)?;
    if let RhoMode::Fixed(r) = mode {
        state.rho = r;
    }

    let mut gamma_step = AdaptiveStep::new(cfg.step_gamma);
    let mut rho_step = AdaptiveStep::new(cfg.step_rho);
    let mut draws = Vec::with_capacity(cfg.retained());
    let mut gamma_accepts = 0usize;
    let mut rho_accepts = 0usize;
    let mut gamma_accept_flags = Vec::with_capacity(cfg.retained());
    let mut rho_accept_flags = Vec::with_capacity(if sample_rho { cfg.retained() } else { 0 });

    for t in 0..cfg.iterations {
        state.tau2_beta =
            gibbs_tau2(&state.beta[data.fixed_len..], priors.a_beta, priors.b_beta, &mut rng)?;
        state.tau2_gamma =
            gibbs_tau2(&state.gamma[data.fixed_len..], priors.a_gamma, priors.b_gamma, &mut rng)?;

        let s2: Vec<f64> = data.log_variances(&state.gamma).iter().map(|l| l.exp()).collect();
        let (a, b) = normal_equations(&data, &s2, state.rho, state.tau2_beta, priors)?;
        state.beta = draw_mvn_from_precision(a, &b, &mut rng)?.as_slice().to_vec();

        let cache = refresh_cache(&data, &state.beta, state.rho)?;

        // gamma block
        let current = gamma_log_target(&data, &cache, &state.gamma, state.tau2_gamma, priors);
        let step = gamma_step.step();
        let proposal: Vec<f64> =
            state.gamma.iter().map(|g| g + step * sample_normal(&mut rng)).collect();
        let prop_target = gamma_log_target(&data, &cache, &proposal, state.tau2_gamma, priors);
        let log_ratio = prop_target - current;
        let gamma_accepted = mh_accept(log_ratio, &mut rng);
        if gamma_accepted {
            state.gamma = proposal;
            if t >= cfg.burn_in {
                gamma_accepts += 1;
            }
        }
        if cfg.adapt && t < cfg.burn_in {
            gamma_step.update(t, log_ratio.min(0.0).exp());
        }

        // rho block
        let mut rho_accepted = false;
        if sample_rho {
            let s2: Vec<f64> =
                data.log_variances(&state.gamma).iter().map(|l| l.exp()).collect();
            let current: f64 = (0..data.strata.len())
                .map(|h| -cache.quads[h] / (2.0 * s2[h]) - 0.5 * cache.logdets[h])
                .sum();
            let step = rho_step.step();
            let proposal = state.rho + step * sample_normal(&mut rng);
            let log_ratio = if proposal > rho_lower && proposal < 1.0 {
                rho_log_target(&data, &state.beta, &s2, proposal)? - current
            } else {
                f64::NEG_INFINITY
            };
            rho_accepted = mh_accept(log_ratio, &mut rng);
            if rho_accepted {
                state.rho = proposal;
                if t >= cfg.burn_in {
                    rho_accepts += 1;
                }
            }
            if cfg.adapt && t < cfg.burn_in {
                let alpha = if log_ratio == f64::NEG_INFINITY {
                    0.0
                } else {
                    log_ratio.min(0.0).exp()
                };
                rho_step.update(t, alpha);
            }
        }

        if t >= cfg.burn_in {
            draws.push(state.clone());
            gamma_accept_flags.push(gamma_accepted);
            if sample_rho {
                rho_accept_flags.push(rho_accepted);
            }
        }
    }

    let retained = cfg.retained() as f64;
    Ok(PosteriorDraws {
        draws,
        accept_gamma: gamma_accepts as f64 / retained,
        accept_rho: sample_rho.then(|| rho_accepts as f64 / retained),
        gamma_accept_flags,
        rho_accept_flags,
        rho_fixed_fallback: false,
        final_step_gamma: gamma_step.step(),
        final_step_rho: rho_step.step(),
    })
}

/// Sampler for the single-PSU model (one unit per stratum, rho absent).
pub fn run_mcmc_single(
    sample: &DrawnSample,
    basis: &SplineBasis,
    priors: &Priors,
    cfg: &McmcConfig,
) -> Result<PosteriorDraws> {
    if sample.max_sample_size() != 1 {
        return Err(Error::config("run_mcmc_single requires one PSU per stratum"));
    }
    let weights = normalized_weights(sample);
    run_chain(sample, &weights, basis, priors, cfg, RhoMode::Fixed(0.0))
}

/// Sampler for the multi-PSU model. When no stratum holds two or more PSUs,
/// rho is not identified: it is pinned at 0 (flagged in the result) and the
/// chain coincides with the single-PSU sampler.
pub fn run_mcmc_multi(
    sample: &DrawnSample,
    basis: &SplineBasis,
    priors: &Priors,
    cfg: &McmcConfig,
) -> Result<PosteriorDraws> {
    let weights = normalized_weights(sample);
    if sample.max_sample_size() >= 2 {
        run_chain(sample, &weights, basis, priors, cfg, RhoMode::Sampled)
    } else {
        let mut out = run_chain(sample, &weights, basis, priors, cfg, RhoMode::Fixed(0.0))?;
        out.rho_fixed_fallback = true;
        Ok(out)
    }
}
