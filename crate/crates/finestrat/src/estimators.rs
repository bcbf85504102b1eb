//! Classical point and variance estimators.
//!
//! The HT mean and its textbook unbiased variance (srswor, `n_h >= 2`), the
//! collapsed-strata estimator over pseudo-strata with its exact design bias,
//! and the kernel-weighted neighborhood estimator with Epanechnikov weights.

use std::collections::HashMap;

use crate::bayes::BayesDiagnostics;
use crate::design::{DesignKind, DrawnSample};
use crate::error::{Error, Result};
use crate::population::FinitePopulation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarianceMethod {
    Unbiased,
    Collapsed,
    Kernel,
    Bayes,
}

impl VarianceMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            VarianceMethod::Unbiased => "unbiased",
            VarianceMethod::Collapsed => "collapsed",
            VarianceMethod::Kernel => "kernel",
            VarianceMethod::Bayes => "bayes",
        }
    }
}

/// Method-specific extras attached to an estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum VarianceDiagnostics {
    None,
    Kernel { c_d: f64, bandwidth: f64 },
    Bayes(BayesDiagnostics),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    pub method: VarianceMethod,
    /// Estimated variance of the HT mean; nonnegative by construction for
    /// collapsed, kernel, and Bayes.
    pub value: f64,
    pub diagnostics: VarianceDiagnostics,
}

impl VarianceEstimate {
    fn plain(method: VarianceMethod, value: f64) -> Self {
        VarianceEstimate { method, value, diagnostics: VarianceDiagnostics::None }
    }
}

/// Horvitz-Thompson estimator of the population mean,
/// `N^{-1} sum_h sum_j y_hj / pi_hj`.
pub fn ht_mean(sample: &DrawnSample) -> Result<f64> {
    sample.validate()?;
    let total: f64 = sample.strata.iter().map(|s| s.ht_total()).sum();
    Ok(total / sample.population_size as f64)
}

/// Textbook unbiased variance estimator, specialized to srswor:
/// `N^{-2} sum_h N_h^2 (1 - n_h/N_h) s^2_h / n_h`. Needs `n_h >= 2`
/// everywhere; a single-PSU stratum makes the design variance inestimable.
pub fn unbiased_variance(sample: &DrawnSample) -> Result<VarianceEstimate> {
    sample.validate()?;
    if sample.design != DesignKind::Srswor {
        return Err(Error::config("unbiased variance is implemented for srswor only"));
    }
    let n_total = sample.population_size as f64;
    let mut acc = 0.0;
    for s in &sample.strata {
        let n_h = s.units.len();
        if n_h < 2 {
            return Err(Error::data(format!(
                "stratum {}: variance not estimable under fine stratification (n_h = 1)",
                s.stratum_id
            )));
        }
        let nh = n_h as f64;
        let cap_n = s.population_size as f64;
        let mean = s.units.iter().map(|u| u.y).sum::<f64>() / nh;
        let s2 = s.units.iter().map(|u| (u.y - mean).powi(2)).sum::<f64>() / (nh - 1.0);
        acc += cap_n * cap_n * (1.0 - nh / cap_n) * s2 / nh;
    }
    Ok(VarianceEstimate::plain(VarianceMethod::Unbiased, acc / (n_total * n_total)))
}

/// Partition of stratum ids into collapsed groups: pairs, plus one triple
/// when the stratum count is odd.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoStrataMap {
    groups: Vec<Vec<usize>>,
}

impl PseudoStrataMap {
    pub fn new(groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = HashMap::new();
        let mut triples = 0usize;
        for (gi, g) in groups.iter().enumerate() {
            match g.len() {
                2 => {}
                3 => triples += 1,
                other => {
                    return Err(Error::config(format!(
                        "pseudo-stratum group {gi} has size {other}; only pairs and one triple allowed"
                    )))
                }
            }
            for &id in g {
                if seen.insert(id, gi).is_some() {
                    return Err(Error::config(format!("stratum {id} appears in two groups")));
                }
            }
        }
        if triples > 1 {
            return Err(Error::config("at most one triple group is allowed"));
        }
        Ok(PseudoStrataMap { groups })
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn stratum_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

/// Sort strata by collapsing index (ties by id) and group consecutive pairs;
/// with an odd count the last three strata form the single triple.
/// `x[i]` is the collapsing index of stratum id `i + 1`.
pub fn make_pseudo_strata(x: &[f64]) -> Result<PseudoStrataMap> {
    let h = x.len();
    if h < 2 {
        return Err(Error::config("pseudo-strata need at least 2 strata"));
    }
    let mut order: Vec<usize> = (0..h).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap().then(a.cmp(&b)));
    let mut groups = Vec::with_capacity(h / 2);
    let pairs = if h % 2 == 0 { h / 2 } else { h / 2 - 1 };
    for g in 0..pairs {
        groups.push(vec![order[2 * g] + 1, order[2 * g + 1] + 1]);
    }
    if h % 2 == 1 {
        groups.push(vec![order[h - 3] + 1, order[h - 2] + 1, order[h - 1] + 1]);
    }
    PseudoStrataMap::new(groups)
}

/// Collapsed-strata variance estimator:
/// `N^{-2} sum_h (1/2) (yhat_h - yhat_partner)^2` over pairs. A triple group
/// contributes `(G/(G-1)) (yhat_h - yhat_group_mean)^2` per member, which
/// equals the pair formula at G = 2 and keeps the design identity
/// `E[var_coll] = V + Bias` exact for any group size.
pub fn collapsed_variance(sample: &DrawnSample, map: &PseudoStrataMap) -> Result<VarianceEstimate> {
    sample.validate()?;
    let totals: HashMap<usize, f64> =
        sample.strata.iter().map(|s| (s.stratum_id, s.ht_total())).collect();
    let value = collapsed_sum(map, |id| totals.get(&id).copied())?
        / (sample.population_size as f64).powi(2);
    Ok(VarianceEstimate::plain(VarianceMethod::Collapsed, value))
}

/// Exact design bias of the collapsed estimator (population oracle):
/// `(2 N^2)^{-1} sum_h (T_h - T_partner)^2` with `T_h` the stratum population
/// total, using the same group rule as [`collapsed_variance`].
pub fn collapsed_bias_exact(pop: &FinitePopulation, map: &PseudoStrataMap) -> Result<f64> {
    let totals: HashMap<usize, f64> =
        pop.strata().iter().map(|s| (s.id, s.total())).collect();
    Ok(collapsed_sum(map, |id| totals.get(&id).copied())? / (pop.total_size() as f64).powi(2))
}

fn collapsed_sum(map: &PseudoStrataMap, total: impl Fn(usize) -> Option<f64>) -> Result<f64> {
    let mut acc = 0.0;
    for g in map.groups() {
        let values = g
            .iter()
            .map(|&id| {
                total(id).ok_or_else(|| Error::data(format!("stratum {id} missing from input")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let k = values.len() as f64;
        let mean: f64 = values.iter().sum::<f64>() / k;
        let factor = k / (k - 1.0);
        for &v in &values {
            acc += factor * (v - mean).powi(2);
        }
    }
    Ok(acc)
}

/// Epanechnikov kernel `K(u) = 0.75 (1 - u^2)` on `|u| <= 1`.
pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// Default bandwidth `(1/H + 2/H) / 2 = 1.5/H`, the midpoint of the
/// recommended `(1/H, 2/H)` range.
pub fn default_bandwidth(stratum_count: usize) -> Result<f64> {
    if stratum_count < 2 {
        return Err(Error::config("bandwidth needs at least 2 strata"));
    }
    Ok(1.5 / stratum_count as f64)
}

/// Row-stochastic kernel weights over strata and the nonrandom normalizing
/// constant `C_d = H^{-1} sum_h (1 - 2 d_hh + sum_l d_lh^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    /// `weights[h][l] = d_{l(h)}`, each row summing to 1.
    pub weights: Vec<Vec<f64>>,
    pub bandwidth: f64,
    pub c_d: f64,
}

/// Kernel weights `d_{l(h)} = K((x_h - x_l)/b) / sum_l K((x_h - x_l)/b)`.
/// Rejects bandwidths that drive `C_d` to zero (self-weight-only rows make
/// the estimator undefined).
pub fn kernel_weights(x: &[f64], bandwidth: f64) -> Result<KernelWeights> {
    if !(bandwidth > 0.0) {
        return Err(Error::config("bandwidth must be positive"));
    }
    let h = x.len();
    if h < 2 {
        return Err(Error::config("kernel weights need at least 2 strata"));
    }
    let mut weights = Vec::with_capacity(h);
    let mut c_d = 0.0;
    for i in 0..h {
        let raw: Vec<f64> = (0..h).map(|l| epanechnikov((x[i] - x[l]) / bandwidth)).collect();
        let sum: f64 = raw.iter().sum();
        let row: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        c_d += 1.0 - 2.0 * row[i] + row.iter().map(|v| v * v).sum::<f64>();
        weights.push(row);
    }
    c_d /= h as f64;
    if c_d <= 1e-12 {
        return Err(Error::numerical(format!(
            "degenerate bandwidth {bandwidth}: C_d = {c_d:.3e} leaves the kernel variance undefined"
        )));
    }
    Ok(KernelWeights { weights, bandwidth, c_d })
}

/// Kernel-weighted variance estimator:
/// `N^{-2} sum_h C_d^{-1} (yhat_h - sum_l d_{l(h)} yhat_l)^2`.
/// Row `h` of the weights corresponds to the `h`-th stratum of the sample.
pub fn kernel_variance(sample: &DrawnSample, kw: &KernelWeights) -> Result<VarianceEstimate> {
    sample.validate()?;
    if kw.weights.len() != sample.strata.len() {
        return Err(Error::config(format!(
            "kernel weights cover {} strata, sample has {}",
            kw.weights.len(),
            sample.strata.len()
        )));
    }
    let totals: Vec<f64> = sample.strata.iter().map(|s| s.ht_total()).collect();
    let mut acc = 0.0;
    for (row, &yhat) in kw.weights.iter().zip(totals.iter()) {
        let smoothed: f64 = row.iter().zip(totals.iter()).map(|(d, t)| d * t).sum();
        acc += (yhat - smoothed).powi(2) / kw.c_d;
    }
    let value = acc / (sample.population_size as f64).powi(2);
    Ok(VarianceEstimate {
        method: VarianceMethod::Kernel,
        value,
        diagnostics: VarianceDiagnostics::Kernel { c_d: kw.c_d, bandwidth: kw.bandwidth },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{
        draw_srswor, enumerate_srswor, true_variance_exact_srswor, Allocation, SamplingPlan,
    };
    use crate::population::Stratum;
    use crate::rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tiny_population() -> FinitePopulation {
        FinitePopulation::new(vec![
            Stratum::new(1, 0.5, vec![1.0, 3.0]).unwrap(),
            Stratum::new(2, 1.0, vec![5.0, 7.0]).unwrap(),
        ])
        .unwrap()
    }

    fn one_per_stratum(pop: &FinitePopulation, picks: &[usize]) -> DrawnSample {
        let strata = pop
            .strata()
            .iter()
            .zip(picks.iter())
            .map(|(s, &j)| crate::design::SampleStratum {
                stratum_id: s.id,
                x: s.x,
                population_size: s.size(),
                units: vec![crate::design::SampleUnit {
                    unit_id: j + 1,
                    y: s.units[j],
                    pi: 1.0 / s.size() as f64,
                }],
            })
            .collect();
        DrawnSample { strata, design: DesignKind::Srswor, population_size: pop.total_size() }
    }

    #[test]
    fn ht_mean_hand_example() {
        let pop = tiny_population();
        let s = one_per_stratum(&pop, &[0, 0]); // picks y = 1 and 5
        assert_relative_eq!(ht_mean(&s).unwrap(), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn ht_mean_census_equals_population_mean() {
        let pop = tiny_population();
        let plan = SamplingPlan::uniform(DesignKind::Srswor, 2);
        let mut rng = rng::substream_rng(4, 0);
        let s = draw_srswor(&pop, &plan, &mut rng).unwrap();
        assert_relative_eq!(
            ht_mean(&s).unwrap(),
            crate::population::population_mean(&pop),
            epsilon = 1e-15
        );
    }

    #[test]
    fn ht_enumeration_on_tiny_population() {
        let pop = tiny_population();
        let plan = SamplingPlan::uniform(DesignKind::Srswor, 1);
        let samples = enumerate_srswor(&pop, &plan).unwrap();
        let mut values: Vec<f64> = samples.iter().map(|s| ht_mean(s).unwrap()).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(values, vec![3.0, 4.0, 4.0, 5.0]);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        assert_relative_eq!(mean, 4.0, epsilon = 1e-15);
    }

    #[test]
    fn unbiased_variance_enumeration_oracle() {
        // One stratum {1,2,3}, n = 2: estimates average to the true variance.
        let pop =
            FinitePopulation::new(vec![Stratum::new(1, 0.5, vec![1.0, 2.0, 3.0]).unwrap()])
                .unwrap();
        let plan = SamplingPlan::uniform(DesignKind::Srswor, 2);
        let truth = true_variance_exact_srswor(&pop, &plan).unwrap();
        assert_relative_eq!(truth * 9.0, 1.5, epsilon = 1e-12); // total scale: V(Yhat) = 1.5
        let samples = enumerate_srswor(&pop, &plan).unwrap();
        assert_eq!(samples.len(), 3);
        let first = unbiased_variance(&samples[0]).unwrap().value;
        assert_relative_eq!(first * 9.0, 0.75, epsilon = 1e-12);
        let mean: f64 =
            samples.iter().map(|s| unbiased_variance(s).unwrap().value).sum::<f64>() / 3.0;
        assert_relative_eq!(mean, truth, epsilon = 1e-12);
    }

    #[test]
    fn unbiased_variance_constant_stratum_is_zero() {
        let pop =
            FinitePopulation::new(vec![Stratum::new(1, 0.5, vec![4.0, 4.0, 4.0]).unwrap()])
                .unwrap();
        let plan = SamplingPlan::uniform(DesignKind::Srswor, 2);
        let mut rng = rng::substream_rng(5, 0);
        let s = draw_srswor(&pop, &plan, &mut rng).unwrap();
        assert_relative_eq!(unbiased_variance(&s).unwrap().value, 0.0);
    }

    #[test]
    fn unbiased_variance_rejects_single_psu() {
        let pop = tiny_population();
        let s = one_per_stratum(&pop, &[0, 1]);
        let err = unbiased_variance(&s).unwrap_err();
        assert!(err.to_string().contains("not estimable"), "{err}");
    }

    #[test]
    fn pseudo_strata_sorts_by_index() {
        let map = make_pseudo_strata(&[0.3, 0.1, 0.2, 0.4]).unwrap();
        assert_eq!(map.groups(), &[vec![2, 3], vec![1, 4]]);
    }

    #[test]
    fn pseudo_strata_two_strata_single_pair() {
        let map = make_pseudo_strata(&[0.7, 0.4]).unwrap();
        assert_eq!(map.groups(), &[vec![2, 1]]);
    }

    #[test]
    fn pseudo_strata_odd_count_forms_one_triple() {
        let map = make_pseudo_strata(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(map.groups(), &[vec![1, 2], vec![3, 4, 5]]);
        let map7 = make_pseudo_strata(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]).unwrap();
        assert_eq!(map7.groups().len(), 3);
        assert_eq!(map7.groups()[2], vec![5, 6, 7]);
    }

    #[test]
    fn pseudo_strata_ties_break_by_id() {
        let map = make_pseudo_strata(&[0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(map.groups(), &[vec![1, 2], vec![3, 4]]);
    }

    #[test]
    fn collapsed_variance_hand_example() {
        let pop = tiny_population();
        let map = make_pseudo_strata(&[0.5, 1.0]).unwrap();
        let s = one_per_stratum(&pop, &[0, 0]); // yhat = (2, 10)
        let v = collapsed_variance(&s, &map).unwrap();
        assert_relative_eq!(v.value, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn collapsed_variance_identical_totals_is_zero() {
        let pop = FinitePopulation::new(vec![
            Stratum::new(1, 0.5, vec![3.0, 3.0]).unwrap(),
            Stratum::new(2, 1.0, vec![3.0, 3.0]).unwrap(),
        ])
        .unwrap();
        let map = make_pseudo_strata(&[0.5, 1.0]).unwrap();
        let s = one_per_stratum(&pop, &[1, 0]);
        assert_relative_eq!(collapsed_variance(&s, &map).unwrap().value, 0.0);
    }

    #[test]
    fn collapsed_bias_hand_example() {
        let pop = tiny_population();
        let map = make_pseudo_strata(&[0.5, 1.0]).unwrap();
        assert_relative_eq!(collapsed_bias_exact(&pop, &map).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn collapsed_bias_matched_pairs_is_zero() {
        let pop = FinitePopulation::new(vec![
            Stratum::new(1, 0.5, vec![2.0, 6.0]).unwrap(),
            Stratum::new(2, 1.0, vec![3.0, 5.0]).unwrap(),
        ])
        .unwrap();
        let map = make_pseudo_strata(&[0.5, 1.0]).unwrap();
        assert_relative_eq!(collapsed_bias_exact(&pop, &map).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn collapsed_enumeration_identity_tiny_case() {
        let pop = tiny_population();
        let plan = SamplingPlan::uniform(DesignKind::Srswor, 1);
        let map = make_pseudo_strata(&[0.5, 1.0]).unwrap();
        let samples = enumerate_srswor(&pop, &plan).unwrap();
        let mut values: Vec<f64> =
            samples.iter().map(|s| collapsed_variance(s, &map).unwrap().value).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(values, vec![1.0, 4.0, 4.0, 9.0]);
        let mean = values.iter().sum::<f64>() / 4.0;
        let truth = true_variance_exact_srswor(&pop, &plan).unwrap();
        let bias = collapsed_bias_exact(&pop, &map).unwrap();
        assert_relative_eq!(mean, truth + bias, epsilon = 1e-10);
        assert_relative_eq!(mean, 4.5, epsilon = 1e-12);
    }

    #[test]
    fn collapsed_enumeration_identity_with_triple() {
        // Identity E[var_coll] = V + Bias must hold for the triple rule too.
        let pop = FinitePopulation::new(vec![
            Stratum::new(1, 0.1, vec![1.0, 2.0]).unwrap(),
            Stratum::new(2, 0.3, vec![4.0, 7.0]).unwrap(),
            Stratum::new(3, 0.5, vec![3.0, 8.0, 2.0]).unwrap(),
            Stratum::new(4, 0.7, vec![6.0, 1.0]).unwrap(),
            Stratum::new(5, 0.9, vec![2.0, 9.0]).unwrap(),
        ])
        .unwrap();
        let plan = SamplingPlan::uniform(DesignKind::Srswor, 1);
        let map = make_pseudo_strata(&[0.1, 0.3, 0.5, 0.7, 0.9]).unwrap();
        let samples = enumerate_srswor(&pop, &plan).unwrap();
        let mean: f64 = samples
            .iter()
            .map(|s| collapsed_variance(s, &map).unwrap().value)
            .sum::<f64>()
            / samples.len() as f64;
        let truth = true_variance_exact_srswor(&pop, &plan).unwrap();
        let bias = collapsed_bias_exact(&pop, &map).unwrap();
        assert_relative_eq!(mean, truth + bias, epsilon = 1e-10);
    }

    #[test]
    fn epanechnikov_examples() {
        assert_relative_eq!(epanechnikov(0.0), 0.75);
        assert_relative_eq!(epanechnikov(1.0), 0.0);
        assert_relative_eq!(epanechnikov(-1.0), 0.0);
        assert_relative_eq!(epanechnikov(2.0 / 3.0), 0.75 * 5.0 / 9.0, epsilon = 1e-12);
        assert_relative_eq!(epanechnikov(1.5), 0.0);
    }

    #[test]
    fn default_bandwidth_matches_reported_values() {
        assert_relative_eq!(default_bandwidth(50).unwrap(), 0.03, epsilon = 1e-15);
        assert_relative_eq!(default_bandwidth(100).unwrap(), 0.015, epsilon = 1e-15);
        assert_relative_eq!(default_bandwidth(20).unwrap(), 0.075, epsilon = 1e-15);
    }

    #[test]
    fn kernel_weights_hand_example() {
        let kw = kernel_weights(&[0.0, 0.5, 1.0], 0.75).unwrap();
        let r0 = &kw.weights[0];
        assert_relative_eq!(r0[0], 0.642857, epsilon = 1e-5);
        assert_relative_eq!(r0[1], 0.357143, epsilon = 1e-5);
        assert_relative_eq!(r0[2], 0.0);
        let r1 = &kw.weights[1];
        assert_relative_eq!(r1[0], 0.263158, epsilon = 1e-5);
        assert_relative_eq!(r1[1], 0.473684, epsilon = 1e-5);
        assert_relative_eq!(r1[2], 0.263158, epsilon = 1e-5);
        assert_relative_eq!(kw.c_d, 0.308572, epsilon = 1e-5);
    }

    #[test]
    fn kernel_weights_tiny_bandwidth_degenerates() {
        let err = kernel_weights(&[0.0, 0.5, 1.0], 1e-9).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "{err}");
    }

    #[test]
    fn kernel_variance_matches_collapsed_for_flat_two_strata_weights() {
        // With H = 2 and d = [[1/2, 1/2]; [1/2, 1/2]], C_d = 1/2 and the
        // kernel estimator reduces algebraically to the collapsed one.
        let pop = tiny_population();
        let s = one_per_stratum(&pop, &[1, 0]); // yhat = (6, 10)
        let kw = KernelWeights {
            weights: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            bandwidth: 1.0,
            c_d: 0.5,
        };
        let map = make_pseudo_strata(&[0.5, 1.0]).unwrap();
        let kv = kernel_variance(&s, &kw).unwrap().value;
        let cv = collapsed_variance(&s, &map).unwrap().value;
        assert_relative_eq!(kv, cv, epsilon = 1e-12);
    }

    #[test]
    fn kernel_variance_constant_totals_is_zero() {
        let pop = FinitePopulation::new(vec![
            Stratum::new(1, 0.5, vec![3.0, 3.0]).unwrap(),
            Stratum::new(2, 1.0, vec![3.0, 3.0]).unwrap(),
        ])
        .unwrap();
        let s = one_per_stratum(&pop, &[0, 1]);
        let kw = kernel_weights(&[0.5, 1.0], 0.75).unwrap();
        assert_relative_eq!(kernel_variance(&s, &kw).unwrap().value, 0.0);
    }

    #[test]
    fn kernel_variance_matches_straight_line_reimplementation() {
        // Independent re-derivation of the kernel estimator for the tiny
        // population, H = 2, x = (0.5, 1.0), frozen here as the oracle.
        let pop = tiny_population();
        let s = one_per_stratum(&pop, &[0, 1]); // y = (1, 7), yhat = (2, 14)
        let b = default_bandwidth(2).unwrap();
        let kw = kernel_weights(&[0.5, 1.0], b).unwrap();
        let yhat = [2.0, 14.0];
        let x = [0.5, 1.0];
        let mut d = [[0.0f64; 2]; 2];
        for h in 0..2 {
            let mut raw = [0.0f64; 2];
            for l in 0..2 {
                let u: f64 = (x[h] - x[l]) / b;
                raw[l] = if u.abs() <= 1.0 { 0.75 * (1.0 - u * u) } else { 0.0 };
            }
            let sum = raw[0] + raw[1];
            d[h][0] = raw[0] / sum;
            d[h][1] = raw[1] / sum;
        }
        let mut c_d = 0.0;
        for h in 0..2 {
            c_d += 1.0 - 2.0 * d[h][h] + d[h][0] * d[h][0] + d[h][1] * d[h][1];
        }
        c_d /= 2.0;
        let mut acc = 0.0;
        for h in 0..2 {
            let smoothed = d[h][0] * yhat[0] + d[h][1] * yhat[1];
            acc += (yhat[h] - smoothed).powi(2) / c_d;
        }
        let expected = acc / 16.0;
        assert_relative_eq!(kernel_variance(&s, &kw).unwrap().value, expected, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn kernel_rows_are_stochastic(
            h in 2usize..12,
            scale in 0.2f64..3.0,
        ) {
            let x: Vec<f64> = (1..=h).map(|i| i as f64 / h as f64).collect();
            let b = default_bandwidth(h).unwrap() * scale;
            if let Ok(kw) = kernel_weights(&x, b) {
                for row in &kw.weights {
                    let sum: f64 = row.iter().sum();
                    prop_assert!((sum - 1.0).abs() < 1e-12);
                    for &v in row {
                        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
                    }
                }
                prop_assert!(kw.c_d > 0.0);
            }
        }

        #[test]
        fn c_d_positive_on_recommended_band(h in 2usize..40, t in 0.05f64..0.95) {
            // b in (1/H, 2/H) on the equispaced grid x_h = h/H.
            let x: Vec<f64> = (1..=h).map(|i| i as f64 / h as f64).collect();
            let b = (1.0 + t) / h as f64;
            let kw = kernel_weights(&x, b).unwrap();
            prop_assert!(kw.c_d > 0.0);
        }

        #[test]
        fn scale_equivariance(c in 0.1f64..10.0, picks in proptest::collection::vec(0usize..2, 2)) {
            let pop = tiny_population();
            let scaled = FinitePopulation::new(
                pop.strata()
                    .iter()
                    .map(|s| {
                        Stratum::new(s.id, s.x, s.units.iter().map(|y| c * y).collect()).unwrap()
                    })
                    .collect(),
            )
            .unwrap();
            let s1 = one_per_stratum(&pop, &picks);
            let s2 = one_per_stratum(&scaled, &picks);
            let map = make_pseudo_strata(&[0.5, 1.0]).unwrap();
            let kw = kernel_weights(&[0.5, 1.0], 0.75).unwrap();
            prop_assert!((ht_mean(&s2).unwrap() - c * ht_mean(&s1).unwrap()).abs() < 1e-9);
            let cv1 = collapsed_variance(&s1, &map).unwrap().value;
            let cv2 = collapsed_variance(&s2, &map).unwrap().value;
            prop_assert!((cv2 - c * c * cv1).abs() < 1e-9 * (1.0 + cv1));
            let kv1 = kernel_variance(&s1, &kw).unwrap().value;
            let kv2 = kernel_variance(&s2, &kw).unwrap().value;
            prop_assert!((kv2 - c * c * kv1).abs() < 1e-9 * (1.0 + kv1));
        }

        #[test]
        fn translation_invariance_under_equal_pi(
            c in -5.0f64..5.0,
            picks in proptest::collection::vec(0usize..2, 2),
        ) {
            // Equal-pi design (1 of 2 in both strata): adding a constant to
            // every y shifts each HT total by the same amount, so deviations
            // and both variance estimators are unchanged.
            let pop = tiny_population();
            let shifted = FinitePopulation::new(
                pop.strata()
                    .iter()
                    .map(|s| {
                        Stratum::new(s.id, s.x, s.units.iter().map(|y| y + c).collect()).unwrap()
                    })
                    .collect(),
            )
            .unwrap();
            let s1 = one_per_stratum(&pop, &picks);
            let s2 = one_per_stratum(&shifted, &picks);
            let map = make_pseudo_strata(&[0.5, 1.0]).unwrap();
            let kw = kernel_weights(&[0.5, 1.0], 0.75).unwrap();
            let cv1 = collapsed_variance(&s1, &map).unwrap().value;
            let cv2 = collapsed_variance(&s2, &map).unwrap().value;
            prop_assert!((cv1 - cv2).abs() < 1e-9);
            let kv1 = kernel_variance(&s1, &kw).unwrap().value;
            let kv2 = kernel_variance(&s2, &kw).unwrap().value;
            prop_assert!((kv1 - kv2).abs() < 1e-9);
        }
    }
}
