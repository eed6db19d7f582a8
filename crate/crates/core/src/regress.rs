//! Ordinary least squares from the sufficient statistics `(N, yᵀy, Cᵀy, CᵀC)`.
//!
//! Compression reduces each party's rows to these Gram products; combining is
//! a componentwise sum, and every statistic below depends only on the sums.

use crate::error::{DashError, Result};
use crate::linalg::{column_squared_norms, gram, solve_spd, DenseMatrix};
use crate::stats::t_sf_two_sided;

/// Negative `τ̂²` within this fraction of `yᵀy` is rounding and is clamped to 0.
pub const TAU2_CLAMP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionSufficient {
    pub n: u64,
    pub yty: f64,
    pub cty: Vec<f64>,
    pub ctc: DenseMatrix,
}

impl RegressionSufficient {
    pub fn k(&self) -> usize {
        self.cty.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionResult {
    pub gamma_hat: Vec<f64>,
    pub tau2_hat: f64,
    pub se: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    /// `N - K`.
    pub df: u64,
}

pub fn compress_regression(y: &DenseMatrix, c: &DenseMatrix) -> Result<RegressionSufficient> {
    if y.cols() != 1 {
        return Err(DashError::DimensionMismatch(format!("response must be a single column, got {}", y.cols())));
    }
    if y.rows() != c.rows() {
        return Err(DashError::DimensionMismatch(format!("response has {} rows, covariates {}", y.rows(), c.rows())));
    }
    if y.rows() == 0 {
        return Err(DashError::EmptyInput("no samples".into()));
    }
    Ok(RegressionSufficient {
        n: y.rows() as u64,
        yty: column_squared_norms(y)[0],
        cty: gram(c, y)?.into_vec(),
        ctc: gram(c, c)?,
    })
}

/// Componentwise sum over parties. Only shapes are checked; callers are
/// responsible for the covariates meaning the same thing in every part.
pub fn combine_regression(parts: &[RegressionSufficient]) -> Result<RegressionSufficient> {
    let (first, rest) = parts.split_first().ok_or_else(|| DashError::EmptyInput("no parts to combine".into()))?;
    let mut acc = first.clone();
    for p in rest {
        if p.k() != acc.k() || p.ctc.shape() != acc.ctc.shape() {
            return Err(DashError::ShapeMismatch(format!("part has K = {}, expected {}", p.k(), acc.k())));
        }
        acc.n += p.n;
        acc.yty += p.yty;
        for (a, b) in acc.cty.iter_mut().zip(&p.cty) {
            *a += b;
        }
        acc.ctc = acc.ctc.add(&p.ctc)?;
    }
    Ok(acc)
}

pub fn regression_stats(s: &RegressionSufficient) -> Result<RegressionResult> {
    let k = s.k();
    if s.n <= k as u64 {
        return Err(DashError::InsufficientSamples { n: s.n, required: k as u64 });
    }
    let rhs = DenseMatrix::column_vector(s.cty.clone())?;
    let sol = solve_spd(&s.ctc, &rhs)?;
    let gamma_hat = sol.x.into_vec();

    // Pythagorean form: |y - Cγ̂|² = yᵀy - γ̂ᵀ(CᵀC)γ̂ = yᵀy - γ̂ᵀCᵀy.
    let explained: f64 = gamma_hat.iter().zip(&s.cty).map(|(g, c)| g * c).sum();
    let df = s.n - k as u64;
    let mut rss = s.yty - explained;
    if rss < 0.0 {
        if rss.abs() < TAU2_CLAMP * s.yty {
            rss = 0.0;
        } else {
            return Err(DashError::NotPositiveDefinite { index: k, value: rss });
        }
    }
    let tau2_hat = rss / df as f64;
    let tau = tau2_hat.sqrt();

    let se: Vec<f64> = sol.inverse_diagonal.iter().map(|v| tau * v.sqrt()).collect();
    let t_stats: Vec<f64> = gamma_hat.iter().zip(&se).map(|(g, s)| g / s).collect();
    let p_values = t_stats.iter().map(|&t| t_sf_two_sided(t, df as f64)).collect::<Result<Vec<_>>>()?;
    Ok(RegressionResult { gamma_hat, tau2_hat, se, t_stats, p_values, df })
}

/// Compress then solve, for a single party holding all rows.
pub fn regress(y: &DenseMatrix, c: &DenseMatrix) -> Result<RegressionResult> {
    regression_stats(&compress_regression(y, c)?)
}
