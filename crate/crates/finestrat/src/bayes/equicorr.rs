//! Closed-form algebra for the equicorrelation matrix `R(rho)`.
//!
//! `R(rho)` has unit diagonal and constant off-diagonal `rho`; it is positive
//! definite iff `1 + (n-1)rho > 0` and `1 - rho > 0`. Its eigenstructure is
//! explicit -- eigenvalue `1 + (n-1)rho` on the span of `1` and `1 - rho` on
//! its orthogonal complement -- which gives closed forms for the inverse
//! square root, the log determinant, and the whitening transform used by the
//! multi-PSU likelihood.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Scalars of the spectral decomposition:
/// `R^{-1/2} = c1 (J/n) + c2 (I - J/n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equicorr {
    pub n: usize,
    pub rho: f64,
    c1: f64,
    c2: f64,
}

impl Equicorr {
    pub fn new(n: usize, rho: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("equicorrelation dimension must be positive"));
        }
        let mean_eig = 1.0 + (n as f64 - 1.0) * rho;
        let resid_eig = 1.0 - rho;
        if !(mean_eig > 0.0) || !(resid_eig > 0.0) {
            return Err(Error::config(format!(
                "rho = {rho} outside the positive-definite range (-1/{}, 1)",
                n.max(2) - 1
            )));
        }
        Ok(Equicorr { n, rho, c1: mean_eig.sqrt().recip(), c2: resid_eig.sqrt().recip() })
    }

    /// `log |R(rho)| = (n-1) log(1-rho) + log(1+(n-1)rho)`.
    pub fn logdet(&self) -> f64 {
        let nf = self.n as f64;
        (nf - 1.0) * (1.0 - self.rho).ln() + (1.0 + (nf - 1.0) * self.rho).ln()
    }

    /// Apply `R^{-1/2}` to a centered vector:
    /// `z = c2 r + (c1 - c2) rbar 1`.
    pub fn whiten(&self, residuals: &[f64]) -> Vec<f64> {
        debug_assert_eq!(residuals.len(), self.n);
        let mean = residuals.iter().sum::<f64>() / self.n as f64;
        let shift = (self.c1 - self.c2) * mean;
        residuals.iter().map(|r| self.c2 * r + shift).collect()
    }

    /// Scalar applied to the all-ones direction, `R^{-1/2} 1 = c1 1`.
    pub fn mean_direction_scale(&self) -> f64 {
        self.c1
    }

    /// Dense `R^{-1/2}` (symmetric); small-n use only.
    pub fn inv_sqrt_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        let nf = n as f64;
        let diag = self.c1 / nf + self.c2 * (1.0 - 1.0 / nf);
        let off = self.c1 / nf - self.c2 / nf;
        DMatrix::from_fn(n, n, |i, j| if i == j { diag } else { off })
    }

    /// Dense `R(rho)` itself.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| if i == j { 1.0 } else { self.rho })
    }
}

/// Closed-form `R(rho)^{-1/2}` as a dense symmetric matrix.
pub fn equicorr_inv_sqrt(n: usize, rho: f64) -> Result<DMatrix<f64>> {
    Ok(Equicorr::new(n, rho)?.inv_sqrt_matrix())
}

/// Closed-form `log |R(rho)|`.
pub fn equicorr_logdet(n: usize, rho: f64) -> Result<f64> {
    Ok(Equicorr::new(n, rho)?.logdet())
}

/// Whiten one stratum's observations: `z = R^{-1/2} (y - m 1)`.
pub fn decorrelate(y: &[f64], mean: f64, rho: f64) -> Result<Vec<f64>> {
    let eq = Equicorr::new(y.len(), rho)?;
    let residuals: Vec<f64> = y.iter().map(|v| v - mean).collect();
    Ok(eq.whiten(&residuals))
}
