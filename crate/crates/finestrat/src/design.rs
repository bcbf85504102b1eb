//! Stratified sampling designs and truth oracles.
//!
//! Draws samples under srswor and pps-systematic plans, carries first-order
//! inclusion probabilities on every selected unit, and provides the true
//! design variance of the HT mean -- exactly for srswor, by Monte Carlo for
//! systematic designs where joint inclusion probabilities are intractable.

use crate::error::{Error, Result};
use crate::estimators;
use crate::population::{FinitePopulation, Stratum};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignKind {
    Srswor,
    PpsSystematic,
}

impl DesignKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DesignKind::Srswor => "srswor",
            DesignKind::PpsSystematic => "pps_systematic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "srswor" => Ok(DesignKind::Srswor),
            "pps_systematic" | "systematic" => Ok(DesignKind::PpsSystematic),
            other => Err(Error::config(format!("unknown design kind '{other}'"))),
        }
    }
}

/// Per-stratum sample sizes: one size for all strata or an explicit list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Allocation {
    Uniform(usize),
    PerStratum(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingPlan {
    pub kind: DesignKind,
    pub allocation: Allocation,
}

impl SamplingPlan {
    pub fn uniform(kind: DesignKind, n_h: usize) -> Self {
        SamplingPlan { kind, allocation: Allocation::Uniform(n_h) }
    }

    pub fn sample_size(&self, stratum_index: usize) -> usize {
        match &self.allocation {
            Allocation::Uniform(n) => *n,
            Allocation::PerStratum(ns) => ns[stratum_index],
        }
    }

    fn validate(&self, pop: &FinitePopulation) -> Result<()> {
        if let Allocation::PerStratum(ns) = &self.allocation {
            if ns.len() != pop.stratum_count() {
                return Err(Error::config(format!(
                    "allocation lists {} strata, population has {}",
                    ns.len(),
                    pop.stratum_count()
                )));
            }
        }
        for (i, s) in pop.strata().iter().enumerate() {
            let n_h = self.sample_size(i);
            if n_h < 1 || n_h > s.size() {
                return Err(Error::config(format!(
                    "stratum {}: sample size {} outside 1..={}",
                    s.id,
                    n_h,
                    s.size()
                )));
            }
        }
        Ok(())
    }
}

/// One selected unit: its 1-based index within the stratum, its value, and
/// its first-order inclusion probability.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleUnit {
    pub unit_id: usize,
    pub y: f64,
    pub pi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleStratum {
    pub stratum_id: usize,
    /// Collapsing index of the stratum.
    pub x: f64,
    /// Population size N_h of the stratum.
    pub population_size: usize,
    pub units: Vec<SampleUnit>,
}

impl SampleStratum {
    pub fn sample_size(&self) -> usize {
        self.units.len()
    }

    /// HT estimate of the stratum total, `sum_j y_j / pi_j`.
    pub fn ht_total(&self) -> f64 {
        self.units.iter().map(|u| u.y / u.pi).sum()
    }
}

/// A drawn stratified sample with the design metadata estimators need.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawnSample {
    pub strata: Vec<SampleStratum>,
    pub design: DesignKind,
    /// Total population size N.
    pub population_size: usize,
}

impl DrawnSample {
    pub fn total_sample_size(&self) -> usize {
        self.strata.iter().map(SampleStratum::sample_size).sum()
    }

    pub fn max_sample_size(&self) -> usize {
        self.strata.iter().map(SampleStratum::sample_size).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strata.is_empty() {
            return Err(Error::data("sample has no strata"));
        }
        for s in &self.strata {
            if s.units.is_empty() {
                return Err(Error::data(format!("sampled stratum {} is empty", s.stratum_id)));
            }
            for u in &s.units {
                if !(u.pi > 0.0 && u.pi <= 1.0) {
                    return Err(Error::data(format!(
                        "stratum {} unit {}: pi {} outside (0, 1]",
                        s.stratum_id, u.unit_id, u.pi
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Normalized weights aligned with a sample's strata and units: proportional
/// to `1/pi` and scaled so the global mean is exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedWeights {
    pub per_stratum: Vec<Vec<f64>>,
}

impl NormalizedWeights {
    /// Unit weights (all 1), used to ignore the design in the likelihood.
    pub fn unit(sample: &DrawnSample) -> Self {
        NormalizedWeights {
            per_stratum: sample.strata.iter().map(|s| vec![1.0; s.units.len()]).collect(),
        }
    }

    pub fn stratum_sum(&self, stratum_index: usize) -> f64 {
        self.per_stratum[stratum_index].iter().sum()
    }
}

/// Draw an srswor sample: units selected uniformly without replacement within
/// each stratum, `pi = n_h / N_h`.
pub fn draw_srswor(pop: &FinitePopulation, plan: &SamplingPlan, rng: &mut Rng) -> Result<DrawnSample> {
    if plan.kind != DesignKind::Srswor {
        return Err(Error::config("draw_srswor requires an srswor plan"));
    }
    plan.validate(pop)?;
    let strata = pop
        .strata()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let n_h = plan.sample_size(i);
            let pi = n_h as f64 / s.size() as f64;
            let mut picked = rand::seq::index::sample(rng, s.size(), n_h).into_vec();
            picked.sort_unstable();
            let units = picked
                .into_iter()
                .map(|j| SampleUnit { unit_id: j + 1, y: s.units[j], pi })
                .collect();
            SampleStratum { stratum_id: s.id, x: s.x, population_size: s.size(), units }
        })
        .collect();
    Ok(DrawnSample { strata, design: DesignKind::Srswor, population_size: pop.total_size() })
}

/// Draw a pps-systematic sample: a single uniform random start on the
/// cumulative size scale per stratum, units kept in frame order,
/// `pi_j = n_h s_j / sum_k s_k`.
pub fn draw_pps_systematic(
    pop: &FinitePopulation,
    plan: &SamplingPlan,
    rng: &mut Rng,
) -> Result<DrawnSample> {
    if plan.kind != DesignKind::PpsSystematic {
        return Err(Error::config("draw_pps_systematic requires a pps_systematic plan"));
    }
    plan.validate(pop)?;
    let strata = pop
        .strata()
        .iter()
        .enumerate()
        .map(|(i, s)| pps_systematic_stratum(s, plan.sample_size(i), rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(DrawnSample { strata, design: DesignKind::PpsSystematic, population_size: pop.total_size() })
}

fn pps_systematic_stratum(s: &Stratum, n_h: usize, rng: &mut Rng) -> Result<SampleStratum> {
    let sizes = s
        .sizes
        .as_ref()
        .ok_or_else(|| Error::config(format!("stratum {} has no size measures for pps", s.id)))?;
    let total: f64 = sizes.iter().sum();
    for (j, &sz) in sizes.iter().enumerate() {
        if n_h as f64 * sz > total {
            return Err(Error::config(format!(
                "stratum {} unit {}: size {} forces pi > 1; reduce n_h below {:.3}",
                s.id,
                j + 1,
                sz,
                total / sz
            )));
        }
    }
    let step = total / n_h as f64;
    let start: f64 = rand::Rng::random::<f64>(rng) * step;
    let mut units = Vec::with_capacity(n_h);
    let mut cum = 0.0;
    let mut k = 0usize;
    for (j, &sz) in sizes.iter().enumerate() {
        let upper = cum + sz;
        while k < n_h && start + k as f64 * step < upper {
            units.push(SampleUnit {
                unit_id: j + 1,
                y: s.units[j],
                pi: (n_h as f64 * sz / total).min(1.0),
            });
            k += 1;
        }
        cum = upper;
    }
    debug_assert_eq!(units.len(), n_h);
    Ok(SampleStratum { stratum_id: s.id, x: s.x, population_size: s.size(), units })
}

/// Normalized weights `w~ = pi^{-1} / (sum pi^{-1} / n)`, global mean 1.
pub fn normalized_weights(sample: &DrawnSample) -> NormalizedWeights {
    // equal pi everywhere normalizes to exactly 1
    let mut pis = sample.strata.iter().flat_map(|s| s.units.iter()).map(|u| u.pi);
    if let Some(first) = pis.next() {
        if pis.all(|pi| pi == first) {
            return NormalizedWeights::unit(sample);
        }
    }
    let n = sample.total_sample_size() as f64;
    let inv_sum: f64 =
        sample.strata.iter().flat_map(|s| s.units.iter()).map(|u| 1.0 / u.pi).sum();
    let scale = inv_sum / n;
    NormalizedWeights {
        per_stratum: sample
            .strata
            .iter()
            .map(|s| s.units.iter().map(|u| 1.0 / (u.pi * scale)).collect())
            .collect(),
    }
}

/// Exact `V(ybar_HT)` under srswor:
/// `N^{-2} sum_h N_h^2 (1 - n_h/N_h) S^2_h / n_h` with `S^2_h` the stratum
/// population variance (divisor `N_h - 1`).
pub fn true_variance_exact_srswor(pop: &FinitePopulation, plan: &SamplingPlan) -> Result<f64> {
    if plan.kind != DesignKind::Srswor {
        return Err(Error::config("exact variance is implemented for srswor only"));
    }
    plan.validate(pop)?;
    let n_total = pop.total_size() as f64;
    let mut acc = 0.0;
    for (i, s) in pop.strata().iter().enumerate() {
        let n_h = plan.sample_size(i) as f64;
        let cap_n = s.size() as f64;
        if s.size() <= 1 {
            continue; // a singleton stratum is a census; no variance contribution
        }
        let mean = s.total() / cap_n;
        let s2 = s.units.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (cap_n - 1.0);
        acc += cap_n * cap_n * (1.0 - n_h / cap_n) * s2 / n_h;
    }
    Ok(acc / (n_total * n_total))
}

/// Monte Carlo truth for `V(ybar_HT)` under any supported plan, with its
/// Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McVariance {
    pub variance: f64,
    pub std_error: f64,
    pub draws: usize,
}

pub fn true_variance_mc(
    pop: &FinitePopulation,
    plan: &SamplingPlan,
    draws: usize,
    seed: u64,
) -> Result<McVariance> {
    if draws < 1000 {
        return Err(Error::config("true_variance_mc needs at least 1000 draws"));
    }
    let mut ht = Vec::with_capacity(draws);
    for r in 0..draws {
        let mut rng = rng::substream_rng(seed, r as u64);
        let sample = match plan.kind {
            DesignKind::Srswor => draw_srswor(pop, plan, &mut rng)?,
            DesignKind::PpsSystematic => draw_pps_systematic(pop, plan, &mut rng)?,
        };
        ht.push(estimators::ht_mean(&sample)?);
    }
    let n = draws as f64;
    let mean = ht.iter().sum::<f64>() / n;
    let m2 = ht.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = ht.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let variance = m2 * n / (n - 1.0);
    // Var(s^2) = m4/n - s^4 (n-3) / (n (n-1))
    let var_of_var = (m4 / n - variance * variance * (n - 3.0) / (n * (n - 1.0))).max(0.0);
    Ok(McVariance { variance, std_error: var_of_var.sqrt(), draws })
}

/// Enumerate every possible srswor sample of a small population (equal
/// probability each). Intended for exhaustive oracle checks; the number of
/// samples is the product over strata of `C(N_h, n_h)`.
pub fn enumerate_srswor(pop: &FinitePopulation, plan: &SamplingPlan) -> Result<Vec<DrawnSample>> {
    if plan.kind != DesignKind::Srswor {
        return Err(Error::config("enumeration is implemented for srswor only"));
    }
    plan.validate(pop)?;
    let per_stratum: Vec<Vec<Vec<usize>>> = pop
        .strata()
        .iter()
        .enumerate()
        .map(|(i, s)| combinations(s.size(), plan.sample_size(i)))
        .collect();
    let mut out = Vec::new();
    let mut choice = vec![0usize; per_stratum.len()];
    loop {
        let strata: Vec<SampleStratum> = pop
            .strata()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let idxs = &per_stratum[i][choice[i]];
                let pi = idxs.len() as f64 / s.size() as f64;
                SampleStratum {
                    stratum_id: s.id,
                    x: s.x,
                    population_size: s.size(),
                    units: idxs
                        .iter()
                        .map(|&j| SampleUnit { unit_id: j + 1, y: s.units[j], pi })
                        .collect(),
                }
            })
            .collect();
        out.push(DrawnSample {
            strata,
            design: DesignKind::Srswor,
            population_size: pop.total_size(),
        });
        // advance the mixed-radix counter
        let mut i = 0;
        loop {
            if i == choice.len() {
                return Ok(out);
            }
            choice[i] += 1;
            if choice[i] < per_stratum[i].len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}
