//! Finite stratified populations.
//!
//! A population is the ground truth the design operates on: `H` disjoint
//! strata of `y`-values plus a per-stratum collapsing index `x_h` used by the
//! pseudo-strata, kernel, and smoothing estimators. Two synthetic generators
//! are provided -- a Gaussian super-population on an equispaced stratum grid,
//! and the gamma-based HMT population where strata are formed to carry
//! approximately equal totals of the size variable.

use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{Error, Result};
use crate::rng;

/// One stratum: a collapsing index, its unit `y`-values, and optional
/// per-unit size measures (for pps designs) and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    /// 1-based stratum id.
    pub id: usize,
    /// Collapsing index `x_h`, typically in [0, 1].
    pub x: f64,
    /// Unit values, length `N_h >= 1`.
    pub units: Vec<f64>,
    /// Per-unit positive size measure, required by pps designs.
    pub sizes: Option<Vec<f64>>,
    /// Per-unit covariate (standardized x), when units carry their own x.
    pub unit_x: Option<Vec<f64>>,
}

impl Stratum {
    pub fn new(id: usize, x: f64, units: Vec<f64>) -> Result<Self> {
        let s = Stratum { id, x, units, sizes: None, unit_x: None };
        s.validate()?;
        Ok(s)
    }

    pub fn with_sizes(mut self, sizes: Vec<f64>) -> Result<Self> {
        self.sizes = Some(sizes);
        self.validate()?;
        Ok(self)
    }

    pub fn size(&self) -> usize {
        self.units.len()
    }

    pub fn total(&self) -> f64 {
        self.units.iter().sum()
    }

    fn validate(&self) -> Result<()> {
        if self.units.is_empty() {
            return Err(Error::config(format!("stratum {} has no units", self.id)));
        }
        if self.units.iter().any(|y| !y.is_finite()) {
            return Err(Error::data(format!("stratum {} has non-finite y", self.id)));
        }
        if let Some(sizes) = &self.sizes {
            if sizes.len() != self.units.len() {
                return Err(Error::data(format!(
                    "stratum {}: {} sizes for {} units",
                    self.id,
                    sizes.len(),
                    self.units.len()
                )));
            }
            if sizes.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::data(format!("stratum {} has a non-positive size", self.id)));
            }
        }
        if let Some(ux) = &self.unit_x {
            if ux.len() != self.units.len() {
                return Err(Error::data(format!("stratum {}: unit_x length mismatch", self.id)));
            }
        }
        Ok(())
    }
}

/// A finite population partitioned into strata with ids `1..=H`.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePopulation {
    strata: Vec<Stratum>,
}

impl FinitePopulation {
    pub fn new(strata: Vec<Stratum>) -> Result<Self> {
        if strata.is_empty() {
            return Err(Error::config("population has no strata"));
        }
        for (i, s) in strata.iter().enumerate() {
            s.validate()?;
            if s.id != i + 1 {
                return Err(Error::config(format!(
                    "stratum ids must be 1..=H in order; found id {} at position {}",
                    s.id,
                    i + 1
                )));
            }
        }
        Ok(FinitePopulation { strata })
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn stratum_count(&self) -> usize {
        self.strata.len()
    }

    /// Total unit count `N = sum_h N_h`.
    pub fn total_size(&self) -> usize {
        self.strata.iter().map(Stratum::size).sum()
    }
}

/// Configuration for the Gaussian super-population generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPopConfig {
    /// Number of strata `H >= 2`.
    pub strata: usize,
    /// Units per stratum `N_h >= 1`.
    pub stratum_size: usize,
    /// Error standard deviation `phi >= 0`.
    pub phi: f64,
    pub seed: u64,
}

impl GaussianPopConfig {
    fn validate(&self) -> Result<()> {
        if self.strata < 2 {
            return Err(Error::config("gaussian population needs at least 2 strata"));
        }
        if self.stratum_size < 1 {
            return Err(Error::config("stratum size must be at least 1"));
        }
        if !(self.phi >= 0.0) {
            return Err(Error::config("phi must be nonnegative"));
        }
        Ok(())
    }
}

/// Configuration for the HMT gamma population generator.
///
/// Defaults follow the Hansen-Madow-Tepping construction: the size variable
/// is Gamma(2, 5), and `y | x` is gamma with mean `0.4 + 0.25 x` and variance
/// `0.0625 x^{3/2}` (heteroscedastic, increasing in x).
#[derive(Debug, Clone, PartialEq)]
pub struct HmtPopConfig {
    /// Total unit count `N >= H`.
    pub population_size: usize,
    /// Number of strata `H >= 2`.
    pub strata: usize,
    pub seed: u64,
    /// Shape of the x gamma distribution.
    pub x_shape: f64,
    /// Scale of the x gamma distribution.
    pub x_scale: f64,
    /// Intercept of `E(y | x)`.
    pub mean_intercept: f64,
    /// Slope of `E(y | x)`.
    pub mean_slope: f64,
    /// Power of x in `Var(y | x)`.
    pub variance_power: f64,
    /// Multiplier of `Var(y | x)`.
    pub variance_scale: f64,
}

impl HmtPopConfig {
    pub fn new(population_size: usize, strata: usize, seed: u64) -> Self {
        HmtPopConfig {
            population_size,
            strata,
            seed,
            x_shape: 2.0,
            x_scale: 5.0,
            mean_intercept: 0.4,
            mean_slope: 0.25,
            variance_power: 1.5,
            variance_scale: 0.0625,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.strata < 2 {
            return Err(Error::config("hmt population needs at least 2 strata"));
        }
        if self.population_size < self.strata {
            return Err(Error::config("hmt population needs N >= H"));
        }
        for (name, v) in [
            ("x_shape", self.x_shape),
            ("x_scale", self.x_scale),
            ("mean_intercept", self.mean_intercept),
            ("mean_slope", self.mean_slope),
            ("variance_power", self.variance_power),
            ("variance_scale", self.variance_scale),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(format!("hmt parameter {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Rescaled linear trend used by the Gaussian generator; with
/// `g(x) = 1 + 2(x - 0.5)` on [0, 1] the min-max rescaling to [0, 2]
/// simplifies to `2x`.
pub fn gaussian_mean_function(x: f64) -> f64 {
    2.0 * x
}

/// Generate a Gaussian super-population: stratum `h` sits at `x_h = h/H` and
/// its units are i.i.d. `N(m*(x_h), phi^2)`.
pub fn gaussian_population(cfg: &GaussianPopConfig) -> Result<FinitePopulation> {
    cfg.validate()?;
    let mut rng = rng::substream_rng(cfg.seed, 0);
    let noise = Normal::new(0.0, cfg.phi).map_err(|e| Error::config(e.to_string()))?;
    let h_count = cfg.strata as f64;
    let strata = (1..=cfg.strata)
        .map(|h| {
            let x = h as f64 / h_count;
            let mean = gaussian_mean_function(x);
            let units = (0..cfg.stratum_size).map(|_| mean + noise.sample(&mut rng)).collect();
            Stratum::new(h, x, units)
        })
        .collect::<Result<Vec<_>>>()?;
    FinitePopulation::new(strata)
}

/// Generate an HMT population: positive `(x, y)` pairs with gamma marginals,
/// sorted by x and cut into `H` strata of approximately equal x-total. The
/// per-unit size measure is the raw x; the stratum collapsing index is the
/// stratum mean of standardized x.
pub fn hmt_population(cfg: &HmtPopConfig) -> Result<FinitePopulation> {
    cfg.validate()?;
    let mut rng = rng::substream_rng(cfg.seed, 0);
    let x_dist = Gamma::new(cfg.x_shape, cfg.x_scale).map_err(|e| Error::config(e.to_string()))?;

    let mut units: Vec<(f64, f64)> = Vec::with_capacity(cfg.population_size);
    for _ in 0..cfg.population_size {
        let x: f64 = x_dist.sample(&mut rng);
        let mean = cfg.mean_intercept + cfg.mean_slope * x;
        let var = cfg.variance_scale * x.powf(cfg.variance_power);
        // Match the conditional gamma to the target mean and variance.
        let shape = mean * mean / var;
        let scale = var / mean;
        let y_dist = Gamma::new(shape, scale).map_err(|e| Error::numerical(e.to_string()))?;
        let y: f64 = y_dist.sample(&mut rng);
        units.push((x, y));
    }

    units.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("gamma draws are finite"));
    let xs: Vec<f64> = units.iter().map(|u| u.0).collect();
    let std_x = standardize_index(&xs)?;

    // Greedy equal-x-total cuts: close stratum k once the global cumulative
    // x passes k/H of the total, forcing a close when the remaining units
    // are only enough to give each remaining stratum one unit.
    let total: f64 = xs.iter().sum();
    let target = total / cfg.strata as f64;
    let n = units.len();
    let mut strata = Vec::with_capacity(cfg.strata);
    let mut start = 0usize;
    let mut cum = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        cum += x;
        let formed = strata.len();
        let units_left = n - i - 1;
        let strata_left_after_current = cfg.strata - formed - 1;
        let must_close = units_left == strata_left_after_current;
        let target_reached = cum >= (formed + 1) as f64 * target;
        if formed < cfg.strata - 1 && (target_reached || must_close) {
            strata.push(make_hmt_stratum(formed + 1, &units, &std_x, start, i + 1)?);
            start = i + 1;
        }
    }
    strata.push(make_hmt_stratum(strata.len() + 1, &units, &std_x, start, n)?);
    FinitePopulation::new(strata)
}

fn make_hmt_stratum(
    id: usize,
    units: &[(f64, f64)],
    std_x: &[f64],
    start: usize,
    end: usize,
) -> Result<Stratum> {
    let slice = &units[start..end];
    let ys: Vec<f64> = slice.iter().map(|u| u.1).collect();
    let sizes: Vec<f64> = slice.iter().map(|u| u.0).collect();
    let ux: Vec<f64> = std_x[start..end].to_vec();
    let x = ux.iter().sum::<f64>() / ux.len() as f64;
    let mut s = Stratum::new(id, x, ys)?.with_sizes(sizes)?;
    s.unit_x = Some(ux);
    s.validate()?;
    Ok(s)
}

/// Min-max rescaling to [0, 1]; order-preserving, rejects constant input.
pub fn standardize_index(values: &[f64]) -> Result<Vec<f64>> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Err(Error::data("standardize_index needs at least two distinct values"));
    }
    let span = max - min;
    Ok(values.iter().map(|v| (v - min) / span).collect())
}

/// Exact finite-population mean over all units.
pub fn population_mean(pop: &FinitePopulation) -> f64 {
    let total: f64 = pop.strata().iter().map(Stratum::total).sum();
    total / pop.total_size() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Independent oracle: evaluate the min-max rescaling of
    /// g(x) = 1 + 2(x - 0.5) over a fine grid instead of trusting the
    /// simplified closed form.
    fn rescaled_trend_oracle(x: f64) -> f64 {
        let g = |t: f64| 1.0 + 2.0 * (t - 0.5);
        let grid: Vec<f64> = (0..=10_000).map(|i| i as f64 / 10_000.0).collect();
        let min = grid.iter().map(|&t| g(t)).fold(f64::INFINITY, f64::min);
        let max = grid.iter().map(|&t| g(t)).fold(f64::NEG_INFINITY, f64::max);
        2.0 * (g(x) - min) / (max - min)
    }

    #[test]
    fn mean_function_matches_rescaling_oracle() {
        for &x in &[0.0, 0.25, 0.5, 0.77, 1.0] {
            assert_relative_eq!(gaussian_mean_function(x), rescaled_trend_oracle(x), epsilon = 1e-12);
        }
        // m*(0.5) = 1 in particular.
        assert_relative_eq!(gaussian_mean_function(0.5), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_phi_population_is_deterministic_trend() {
        let cfg = GaussianPopConfig { strata: 10, stratum_size: 3, phi: 0.0, seed: 7 };
        let pop = gaussian_population(&cfg).unwrap();
        for s in pop.strata() {
            let expected = 2.0 * s.id as f64 / 10.0;
            for &y in &s.units {
                assert_relative_eq!(y, expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn paper_scale_population_has_converging_stratum_means() {
        let cfg = GaussianPopConfig { strata: 50, stratum_size: 60, phi: 5.0, seed: 12345 };
        let pop = gaussian_population(&cfg).unwrap();
        assert_eq!(pop.total_size(), 3000);
        let bound = 4.0 * cfg.phi / (cfg.stratum_size as f64).sqrt();
        for s in pop.strata() {
            let mean = s.total() / s.size() as f64;
            assert!(
                (mean - 2.0 * s.x).abs() < bound,
                "stratum {} mean {} too far from {}",
                s.id,
                mean,
                2.0 * s.x
            );
        }
    }

    #[test]
    fn gaussian_population_is_seed_deterministic() {
        let cfg = GaussianPopConfig { strata: 5, stratum_size: 4, phi: 2.0, seed: 99 };
        let a = gaussian_population(&cfg).unwrap();
        let b = gaussian_population(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_within_stratum_variance_converges_to_phi_squared() {
        let cfg = GaussianPopConfig { strata: 2, stratum_size: 10_000, phi: 3.0, seed: 5 };
        let pop = gaussian_population(&cfg).unwrap();
        for s in pop.strata() {
            let n = s.size() as f64;
            let mean = s.total() / n;
            let var = s.units.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(
                (var - 9.0).abs() / 9.0 < 0.05,
                "stratum {} empirical variance {} off target",
                s.id,
                var
            );
        }
    }

    #[test]
    fn invalid_gaussian_config_is_rejected() {
        let cfg = GaussianPopConfig { strata: 1, stratum_size: 4, phi: 1.0, seed: 0 };
        assert!(gaussian_population(&cfg).is_err());
        let cfg = GaussianPopConfig { strata: 3, stratum_size: 0, phi: 1.0, seed: 0 };
        assert!(gaussian_population(&cfg).is_err());
        let cfg = GaussianPopConfig { strata: 3, stratum_size: 2, phi: -1.0, seed: 0 };
        assert!(gaussian_population(&cfg).is_err());
    }

    #[test]
    fn hmt_population_balances_x_totals() {
        let cfg = HmtPopConfig::new(2000, 20, 31);
        let pop = hmt_population(&cfg).unwrap();
        assert_eq!(pop.stratum_count(), 20);
        assert_eq!(pop.total_size(), 2000);

        let all_sizes: Vec<f64> =
            pop.strata().iter().flat_map(|s| s.sizes.as_ref().unwrap().clone()).collect();
        let total: f64 = all_sizes.iter().sum();
        let max_x = all_sizes.iter().cloned().fold(0.0, f64::max);
        let target = total / 20.0;
        for s in pop.strata() {
            let t: f64 = s.sizes.as_ref().unwrap().iter().sum();
            assert!(
                (t - target).abs() < max_x,
                "stratum {} x-total {} deviates from {} by more than {}",
                s.id,
                t,
                target,
                max_x
            );
        }
    }

    #[test]
    fn hmt_unit_x_is_standardized_and_strata_contiguous() {
        let cfg = HmtPopConfig::new(500, 10, 3);
        let pop = hmt_population(&cfg).unwrap();
        let ux: Vec<f64> = pop.strata().iter().flat_map(|s| s.unit_x.clone().unwrap()).collect();
        let min = ux.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = ux.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(min, 0.0, epsilon = 1e-12);
        assert_relative_eq!(max, 1.0, epsilon = 1e-12);
        // Contiguity in sorted x: each stratum's unit_x range sits above the previous one.
        let mut last_max = f64::NEG_INFINITY;
        for s in pop.strata() {
            let ux = s.unit_x.as_ref().unwrap();
            let lo = ux.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ux.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo >= last_max - 1e-12);
            last_max = hi;
        }
    }

    #[test]
    fn hmt_x_y_rank_correlation_is_positive() {
        for seed in 0..10 {
            let cfg = HmtPopConfig::new(400, 8, seed);
            let pop = hmt_population(&cfg).unwrap();
            let mut pairs: Vec<(f64, f64)> = pop
                .strata()
                .iter()
                .flat_map(|s| {
                    s.sizes.as_ref().unwrap().iter().cloned().zip(s.units.iter().cloned())
                })
                .collect();
            let n = pairs.len();
            let rank = |v: &[f64]| -> Vec<f64> {
                let mut idx: Vec<usize> = (0..v.len()).collect();
                idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
                let mut r = vec![0.0; v.len()];
                for (pos, &i) in idx.iter().enumerate() {
                    r[i] = pos as f64;
                }
                r
            };
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.drain(..).map(|p| p.1).collect();
            let (rx, ry) = (rank(&xs), rank(&ys));
            let mean = (n as f64 - 1.0) / 2.0;
            let mut num = 0.0;
            let mut dx = 0.0;
            let mut dy = 0.0;
            for i in 0..n {
                num += (rx[i] - mean) * (ry[i] - mean);
                dx += (rx[i] - mean).powi(2);
                dy += (ry[i] - mean).powi(2);
            }
            let rho = num / (dx.sqrt() * dy.sqrt());
            assert!(rho > 0.3, "seed {seed}: rank correlation {rho} too small");
        }
    }

    #[test]
    fn standardize_index_examples() {
        assert_eq!(standardize_index(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(standardize_index(&[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert!(standardize_index(&[3.0, 3.0, 3.0]).is_err());
    }

    #[test]
    fn standardize_index_is_idempotent() {
        let v = vec![0.2, 1.7, -3.0, 0.9, 4.4];
        let once = standardize_index(&v).unwrap();
        let twice = standardize_index(&once).unwrap();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
        let min = once.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = once.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((min, max), (0.0, 1.0));
    }

    #[test]
    fn population_mean_examples() {
        let pop = FinitePopulation::new(vec![
            Stratum::new(1, 0.5, vec![1.0, 3.0]).unwrap(),
            Stratum::new(2, 1.0, vec![5.0, 7.0]).unwrap(),
        ])
        .unwrap();
        assert_relative_eq!(population_mean(&pop), 4.0, epsilon = 1e-15);

        let single = FinitePopulation::new(vec![Stratum::new(1, 0.0, vec![2.0]).unwrap()]).unwrap();
        assert_relative_eq!(population_mean(&single), 2.0, epsilon = 1e-15);

        let constant = FinitePopulation::new(vec![
            Stratum::new(1, 0.2, vec![3.0; 4]).unwrap(),
            Stratum::new(2, 0.8, vec![3.0; 2]).unwrap(),
        ])
        .unwrap();
        assert_relative_eq!(population_mean(&constant), 3.0, epsilon = 1e-15);
    }
}
