//! Monte Carlo replication harness.
//!
//! A scenario fixes one finite population, repeats the design draw R times,
//! computes every requested variance estimator per replication, and
//! aggregates empirical absolute bias, root mean squared error, and 95%
//! coverage against the true design variance. Replications run on a bounded
//! worker pool; each owns a counter-derived RNG substream and aggregation is
//! an ordered reduction, so parallel and serial runs agree bit for bit.

use rayon::prelude::*;

use crate::bayes::{
    run_chain, var_bayes_multi, var_bayes_single, McmcConfig, Priors, RhoMode,
};
use crate::design::{
    draw_pps_systematic, draw_srswor, normalized_weights, true_variance_exact_srswor,
    true_variance_mc, DesignKind, DrawnSample, NormalizedWeights, SamplingPlan,
};
use crate::error::{Error, Result};
use crate::estimators::{
    collapsed_variance, default_bandwidth, kernel_variance, kernel_weights, make_pseudo_strata,
    ht_mean, KernelWeights, PseudoStrataMap,
};
use crate::population::{
    gaussian_population, hmt_population, population_mean, FinitePopulation, GaussianPopConfig,
    HmtPopConfig,
};
use crate::rng::{substream_rng, substream_seed};
use crate::spline::SplineBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Collapsed,
    Kernel,
    Bayes,
    /// Bayes with the design weights dropped from the likelihood
    /// (the weight-ablation arm).
    BayesIgnoreWeights,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Collapsed => "collapsed",
            Method::Kernel => "kernel",
            Method::Bayes => "bayes",
            Method::BayesIgnoreWeights => "bayes_ignore_weights",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "collapsed" => Ok(Method::Collapsed),
            "kernel" => Ok(Method::Kernel),
            "bayes" => Ok(Method::Bayes),
            "bayes_ignore_weights" => Ok(Method::BayesIgnoreWeights),
            other => Err(Error::config(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PopulationConfig {
    Gaussian(GaussianPopConfig),
    Hmt(HmtPopConfig),
}

impl PopulationConfig {
    pub fn build(&self) -> Result<FinitePopulation> {
        match self {
            PopulationConfig::Gaussian(cfg) => gaussian_population(cfg),
            PopulationConfig::Hmt(cfg) => hmt_population(cfg),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub label: String,
    pub population: PopulationConfig,
    pub plan: SamplingPlan,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub mcmc: McmcConfig,
    pub priors: Priors,
    /// Kernel bandwidth; defaults to 1.5/H when absent.
    pub bandwidth: Option<f64>,
    pub spline_degree: usize,
    pub knot_count: usize,
    pub base_seed: u64,
    /// Monte Carlo draws for the truth oracle under systematic designs.
    pub truth_draws: usize,
    /// Abort on any estimator failure instead of recording and skipping.
    pub strict: bool,
    pub threads: Option<usize>,
}

impl SimScenario {
    pub fn new(label: impl Into<String>, population: PopulationConfig, plan: SamplingPlan) -> Self {
        SimScenario {
            label: label.into(),
            population,
            plan,
            methods: vec![Method::Collapsed, Method::Kernel, Method::Bayes],
            replications: 200,
            mcmc: McmcConfig::default(),
            priors: Priors::default(),
            bandwidth: None,
            spline_degree: 2,
            knot_count: 7,
            base_seed: 0,
            truth_draws: 100_000,
            strict: false,
            threads: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::config("at least one replication required"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("at least one method required"));
        }
        self.mcmc.validate()?;
        self.priors.validate()
    }
}

/// One replication's estimates, in scenario method order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub ht: f64,
    /// Variance estimate per method; `Err` message kept for skipped entries.
    pub estimates: Vec<std::result::Result<f64, String>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub ab: f64,
    pub rmse: f64,
    pub cp: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub label: String,
    pub methods: Vec<Method>,
    pub truth: f64,
    pub truth_std_error: Option<f64>,
    pub population_mean: f64,
    pub replications: usize,
    pub summaries: Vec<MethodSummary>,
    pub records: Vec<ReplicationRecord>,
}

struct ScenarioContext {
    plan: SamplingPlan,
    methods: Vec<Method>,
    pseudo: PseudoStrataMap,
    kernel: Option<KernelWeights>,
    kernel_error: Option<String>,
    mcmc: McmcConfig,
    priors: Priors,
    spline_degree: usize,
    knot_count: usize,
    sample_base: u64,
    mcmc_base: u64,
}

/// Run a scenario: one population, `R` design draws, all requested
/// estimators, aggregated metrics.
pub fn run_replications(sc: &SimScenario) -> Result<SimResult> {
    sc.validate()?;
    let pop = sc.population.build()?;
    let truth = scenario_truth(sc, &pop)?;
    let pop_mean = population_mean(&pop);

    let xs: Vec<f64> = pop.strata().iter().map(|s| s.x).collect();
    let pseudo = make_pseudo_strata(&xs)?;
    let bandwidth = match sc.bandwidth {
        Some(b) => b,
        None => default_bandwidth(xs.len())?,
    };
    // A degenerate bandwidth fails every replication (or the whole run in
    // strict mode) rather than the scenario setup, so it is recorded here.
    let (kernel, kernel_error) = match kernel_weights(&xs, bandwidth) {
        Ok(kw) => (Some(kw), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let ctx = ScenarioContext {
        plan: sc.plan.clone(),
        methods: sc.methods.clone(),
        pseudo,
        kernel,
        kernel_error,
        mcmc: sc.mcmc,
        priors: sc.priors,
        spline_degree: sc.spline_degree,
        knot_count: sc.knot_count,
        sample_base: substream_seed(sc.base_seed, 1),
        mcmc_base: substream_seed(sc.base_seed, 2),
    };

    let run_all = || -> Result<Vec<ReplicationRecord>> {
        (0..sc.replications)
            .into_par_iter()
            .map(|r| replicate(&ctx, &pop, r))
            .collect()
    };
    let records = match sc.threads {
        Some(t) if t > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::config(e.to_string()))?
            .install(run_all),
        _ => run_all(),
    }?;

    if sc.strict {
        for rec in &records {
            for (m, est) in sc.methods.iter().zip(&rec.estimates) {
                if let Err(msg) = est {
                    return Err(Error::Numerical(format!(
                        "replication {} failed for {}: {msg}",
                        rec.replication,
                        m.as_str()
                    )));
                }
            }
        }
    }

    let summaries = summarize(&sc.methods, &records, truth.0, pop_mean)?;
    Ok(SimResult {
        label: sc.label.clone(),
        methods: sc.methods.clone(),
        truth: truth.0,
        truth_std_error: truth.1,
        population_mean: pop_mean,
        replications: sc.replications,
        summaries,
        records,
    })
}

fn scenario_truth(sc: &SimScenario, pop: &FinitePopulation) -> Result<(f64, Option<f64>)> {
    match sc.plan.kind {
        DesignKind::Srswor => Ok((true_variance_exact_srswor(pop, &sc.plan)?, None)),
        DesignKind::PpsSystematic => {
            let mc = true_variance_mc(pop, &sc.plan, sc.truth_draws, substream_seed(sc.base_seed, 3))?;
            Ok((mc.variance, Some(mc.std_error)))
        }
    }
}

fn replicate(ctx: &ScenarioContext, pop: &FinitePopulation, r: usize) -> Result<ReplicationRecord> {
    let mut rng = substream_rng(ctx.sample_base, r as u64);
    let sample = match ctx.plan.kind {
        DesignKind::Srswor => draw_srswor(pop, &ctx.plan, &mut rng)?,
        DesignKind::PpsSystematic => draw_pps_systematic(pop, &ctx.plan, &mut rng)?,
    };
    let ht = ht_mean(&sample)?;
    let estimates = ctx
        .methods
        .iter()
        .map(|m| estimate_one(ctx, &sample, *m, r).map_err(|e| e.to_string()))
        .collect();
    Ok(ReplicationRecord { replication: r, ht, estimates })
}

fn estimate_one(
    ctx: &ScenarioContext,
    sample: &DrawnSample,
    method: Method,
    r: usize,
) -> Result<f64> {
    match method {
        Method::Collapsed => Ok(collapsed_variance(sample, &ctx.pseudo)?.value),
        Method::Kernel => match (&ctx.kernel, &ctx.kernel_error) {
            (Some(kw), _) => Ok(kernel_variance(sample, kw)?.value),
            (None, Some(msg)) => Err(Error::numerical(msg.clone())),
            (None, None) => unreachable!("kernel weights neither built nor failed"),
        },
        Method::Bayes => bayes_estimate(ctx, sample, r, false),
        Method::BayesIgnoreWeights => bayes_estimate(ctx, sample, r, true),
    }
}

fn bayes_estimate(
    ctx: &ScenarioContext,
    sample: &DrawnSample,
    r: usize,
    ignore_weights: bool,
) -> Result<f64> {
    let xs: Vec<f64> = sample.strata.iter().map(|s| s.x).collect();
    let basis = SplineBasis::from_quantiles(&xs, ctx.spline_degree, ctx.knot_count)?;
    let weights = if ignore_weights {
        NormalizedWeights::unit(sample)
    } else {
        normalized_weights(sample)
    };
    let mut cfg = ctx.mcmc;
    cfg.seed = substream_seed(ctx.mcmc_base, r as u64);
    let multi = sample.max_sample_size() >= 2;
    let mode = if multi { RhoMode::Sampled } else { RhoMode::Fixed(0.0) };
    let draws = run_chain(sample, &weights, &basis, &ctx.priors, &cfg, mode)?;
    let est = if multi {
        var_bayes_multi(&draws, &basis, sample)?
    } else {
        var_bayes_single(&draws, &basis, sample)?
    };
    Ok(est.value)
}

fn summarize(
    methods: &[Method],
    records: &[ReplicationRecord],
    truth: f64,
    pop_mean: f64,
) -> Result<Vec<MethodSummary>> {
    methods
        .iter()
        .enumerate()
        .map(|(mi, &method)| {
            let mut ht = Vec::new();
            let mut var = Vec::new();
            let mut failures = 0usize;
            for rec in records {
                match &rec.estimates[mi] {
                    Ok(v) => {
                        ht.push(rec.ht);
                        var.push(*v);
                    }
                    Err(_) => failures += 1,
                }
            }
            if var.is_empty() {
                return Err(Error::Numerical(format!(
                    "method {} failed in every replication",
                    method.as_str()
                )));
            }
            let n = var.len() as f64;
            let mean_err = var.iter().map(|v| v - truth).sum::<f64>() / n;
            let mse = var.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / n;
            Ok(MethodSummary {
                method,
                ab: mean_err.abs(),
                rmse: mse.sqrt(),
                cp: metric_cp(&ht, &var, pop_mean)?,
                failures,
            })
        })
        .collect()
}

/// Empirical 95% coverage: the fraction of replications whose interval
/// `ht +- 1.96 sqrt(var)` contains the finite population mean.
pub fn metric_cp(ht_values: &[f64], var_values: &[f64], truth_mean: f64) -> Result<f64> {
    if ht_values.len() != var_values.len() {
        return Err(Error::config("cp inputs differ in length"));
    }
    if ht_values.is_empty() {
        return Err(Error::config("cp needs at least one replication"));
    }
    let mut hits = 0usize;
    for (ht, var) in ht_values.iter().zip(var_values.iter()) {
        if *var < 0.0 {
            return Err(Error::data(format!("negative variance {var} in coverage input")));
        }
        if (ht - truth_mean).abs() <= 1.96 * var.sqrt() {
            hits += 1;
        }
    }
    Ok(hits as f64 / ht_values.len() as f64)
}

/// Appendix-D style weight ablation: two runs sharing the same base seed (so
/// sample draws and chain seeds coincide), one with design weights in the
/// likelihood and one with unit weights.
pub fn weight_ablation(sc: &SimScenario) -> Result<(SimResult, SimResult)> {
    let mut weighted = sc.clone();
    weighted.label = format!("{}/weighted", sc.label);
    weighted.methods = replace_bayes(&sc.methods, Method::Bayes);
    let mut ignored = sc.clone();
    ignored.label = format!("{}/ignore_weights", sc.label);
    ignored.methods = replace_bayes(&sc.methods, Method::BayesIgnoreWeights);
    Ok((run_replications(&weighted)?, run_replications(&ignored)?))
}

fn replace_bayes(methods: &[Method], with: Method) -> Vec<Method> {
    let mut out: Vec<Method> = methods
        .iter()
        .map(|&m| if m == Method::Bayes || m == Method::BayesIgnoreWeights { with } else { m })
        .collect();
    if !out.contains(&with) {
        out.push(with);
    }
    out.dedup();
    out
}
