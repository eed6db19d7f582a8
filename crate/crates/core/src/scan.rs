//! Association scan: for every transient feature `X_m` and response `y_t`,
//! the coefficient and standard error of `X_m` in the regression of `y_t` on
//! `[X_m, C]`, computed through the projection off `span(C)`:
//!
//! ```text
//! d_m  = X_m·X_m − |QᵀX_m|²
//! β̂    = (X_m·y − QᵀX_m·Qᵀy) / d_m
//! σ̂²   = ((y·y − |Qᵀy|²) / d_m − β̂²) / (N − K − 1)
//! ```
//!
//! with `Q` an orthonormal basis of the permanent covariates `C`.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{DashError, Result};
use crate::linalg::{column_squared_norms, gram, qr_positive, DenseMatrix};
use crate::stats::t_sf_two_sided;

/// A feature is degenerate when `d_m <= DEGENERACY_TOL * X_m·X_m`.
pub const DEGENERACY_TOL: f64 = 1e-10;
/// Absolute floor on `d_m` for all-zero features.
pub const DEGENERACY_FLOOR: f64 = 1e-30;
/// Negative `σ̂²` within this fraction of its scale is treated as zero.
pub const SIGMA2_CLAMP: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct ScanInputs {
    /// `N x T` responses.
    pub y: DenseMatrix,
    /// `N x M` transient covariates.
    pub x: DenseMatrix,
    /// `N x K` permanent covariates; `K = 0` is allowed.
    pub c: DenseMatrix,
    /// Degrees of freedom already consumed outside `c`, e.g. by centering.
    pub absorbed_dof: usize,
}

impl ScanInputs {
    pub fn new(y: DenseMatrix, x: DenseMatrix, c: DenseMatrix) -> Result<Self> {
        let n = y.rows();
        if x.rows() != n || c.rows() != n {
            return Err(DashError::DimensionMismatch(format!(
                "row counts differ: y {n}, x {}, c {}",
                x.rows(),
                c.rows()
            )));
        }
        Ok(Self { y, x, c, absorbed_dof: 0 })
    }

    pub fn with_absorbed_dof(mut self, dof: usize) -> Self {
        self.absorbed_dof = dof;
        self
    }
}

/// Response-side quantities shared by every feature block.
#[derive(Clone, Debug)]
pub struct ScanCore {
    /// `N x T` responses, needed for `X·y`.
    pub y: DenseMatrix,
    pub q: DenseMatrix,
    pub yy: Vec<f64>,
    pub qty: DenseMatrix,
    pub qty_sq: Vec<f64>,
}

/// Per-feature cross statistics for one block of `B` features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    /// `B x T`: `X_m·y_t`.
    pub xy: DenseMatrix,
    /// `X_m·X_m`.
    pub xx: Vec<f64>,
    /// `K x B`: `QᵀX`.
    pub qtx: DenseMatrix,
    /// `B x T`: `QᵀX_m·Qᵀy_t`.
    pub qtx_qty: DenseMatrix,
    /// `|QᵀX_m|²`.
    pub qtx_sq: Vec<f64>,
}

impl FeatureStats {
    pub fn len(&self) -> usize {
        self.xx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xx.is_empty()
    }
}

/// Statistics per (feature, response) pair, stored response-major:
/// entry `(m, t)` lives at index `t * n_features + m`.
///
/// Invalid (degenerate) entries hold NaN in every statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanResult {
    pub n_features: usize,
    pub n_responses: usize,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    /// `N - K - 1`.
    pub df: u64,
    pub valid: Vec<bool>,
}

impl ScanResult {
    #[inline]
    pub fn index(&self, feature: usize, response: usize) -> usize {
        response * self.n_features + feature
    }

    pub fn beta(&self, feature: usize, response: usize) -> f64 {
        self.beta[self.index(feature, response)]
    }

    pub fn se(&self, feature: usize, response: usize) -> f64 {
        self.se[self.index(feature, response)]
    }

    pub fn t_stat(&self, feature: usize, response: usize) -> f64 {
        self.t_stats[self.index(feature, response)]
    }

    pub fn p_value(&self, feature: usize, response: usize) -> f64 {
        self.p_values[self.index(feature, response)]
    }

    pub fn is_valid(&self, feature: usize, response: usize) -> bool {
        self.valid[self.index(feature, response)]
    }

    /// Concatenates results over consecutive feature blocks.
    pub fn concat(blocks: Vec<ScanResult>) -> Result<ScanResult> {
        let first = blocks.first().ok_or_else(|| DashError::EmptyInput("no scan blocks".into()))?;
        let (t, df) = (first.n_responses, first.df);
        if blocks.iter().any(|b| b.n_responses != t || b.df != df) {
            return Err(DashError::ShapeMismatch("scan blocks disagree on T or df".into()));
        }
        let m: usize = blocks.iter().map(|b| b.n_features).sum();
        let mut out = ScanResult {
            n_features: m,
            n_responses: t,
            beta: Vec::with_capacity(m * t),
            se: Vec::with_capacity(m * t),
            t_stats: Vec::with_capacity(m * t),
            p_values: Vec::with_capacity(m * t),
            df,
            valid: Vec::with_capacity(m * t),
        };
        for r in 0..t {
            for b in &blocks {
                let range = r * b.n_features..(r + 1) * b.n_features;
                out.beta.extend_from_slice(&b.beta[range.clone()]);
                out.se.extend_from_slice(&b.se[range.clone()]);
                out.t_stats.extend_from_slice(&b.t_stats[range.clone()]);
                out.p_values.extend_from_slice(&b.p_values[range.clone()]);
                out.valid.extend_from_slice(&b.valid[range]);
            }
        }
        Ok(out)
    }
}

pub fn scan_prepare(y: &DenseMatrix, c: &DenseMatrix) -> Result<ScanCore> {
    if y.rows() != c.rows() {
        return Err(DashError::DimensionMismatch(format!("y has {} rows, c has {}", y.rows(), c.rows())));
    }
    let q = if c.cols() == 0 { DenseMatrix::zeros(c.rows(), 0) } else { qr_positive(c)?.q };
    let qty = gram(&q, y)?;
    Ok(ScanCore { yy: column_squared_norms(y), qty_sq: column_squared_norms(&qty), qty, q, y: y.clone() })
}

pub fn scan_block(core: &ScanCore, x_block: &DenseMatrix) -> Result<FeatureStats> {
    if x_block.rows() != core.q.rows() {
        return Err(DashError::DimensionMismatch(format!(
            "feature block has {} rows, expected {}",
            x_block.rows(),
            core.q.rows()
        )));
    }
    let qtx = gram(&core.q, x_block)?;
    Ok(FeatureStats {
        xy: gram(x_block, &core.y)?,
        xx: column_squared_norms(x_block),
        qtx_qty: gram(&qtx, &core.qty)?,
        qtx_sq: column_squared_norms(&qtx),
        qtx,
    })
}

/// Closed-form β̂ and σ̂ for one block of features.
///
/// `yy` and `qty_sq` are per-response; `n` is the total sample count and `k`
/// the number of covariates projected out (including any absorbed by
/// centering). Degenerate features come back invalid rather than as errors.
pub fn scan_finalize(yy: &[f64], qty_sq: &[f64], features: &FeatureStats, n: u64, k: usize) -> Result<ScanResult> {
    if n <= k as u64 + 1 {
        return Err(DashError::InsufficientSamples { n, required: k as u64 + 1 });
    }
    let t_count = yy.len();
    if qty_sq.len() != t_count || features.xy.cols() != t_count || features.qtx_qty.cols() != t_count {
        return Err(DashError::ShapeMismatch("response counts disagree".into()));
    }
    let m_count = features.len();
    let df = n - k as u64 - 1;
    let dff = df as f64;
    let len = m_count * t_count;
    let mut out = ScanResult {
        n_features: m_count,
        n_responses: t_count,
        beta: vec![f64::NAN; len],
        se: vec![f64::NAN; len],
        t_stats: vec![f64::NAN; len],
        p_values: vec![f64::NAN; len],
        df,
        valid: vec![false; len],
    };
    for m in 0..m_count {
        let xx = features.xx[m];
        let d = xx - features.qtx_sq[m];
        let tol = if xx > 0.0 { DEGENERACY_TOL * xx } else { DEGENERACY_FLOOR };
        if !(d > tol) {
            continue;
        }
        for t in 0..t_count {
            let beta = (features.xy.get(m, t) - features.qtx_qty.get(m, t)) / d;
            let ratio = (yy[t] - qty_sq[t]) / d;
            let mut sigma2 = (ratio - beta * beta) / dff;
            if sigma2 < 0.0 {
                let scale = ratio.abs().max(beta * beta) / dff;
                if sigma2 >= -SIGMA2_CLAMP * scale {
                    sigma2 = 0.0;
                } else {
                    continue;
                }
            }
            let i = t * m_count + m;
            let se = sigma2.sqrt();
            let (tstat, p) = if se > 0.0 {
                let tstat = beta / se;
                (tstat, t_sf_two_sided(tstat, dff)?)
            } else if beta != 0.0 {
                // exact fit with a nonzero effect
                (beta.signum() * f64::INFINITY, 0.0)
            } else {
                continue;
            };
            out.beta[i] = beta;
            out.se[i] = se;
            out.t_stats[i] = tstat;
            out.p_values[i] = p;
            out.valid[i] = true;
        }
    }
    Ok(out)
}

fn block_ranges(m: usize, block_size: usize) -> Vec<Range<usize>> {
    let b = block_size.max(1);
    (0..m).step_by(b).map(|s| s..(s + b).min(m)).collect()
}

/// Single-party scan: prepare once, then compute feature blocks in parallel.
///
/// The result does not depend on `block_size` or `parallelism` (bitwise);
/// `parallelism = 0` uses rayon's default thread count.
pub fn scan(inputs: &ScanInputs, block_size: usize, parallelism: usize) -> Result<ScanResult> {
    let n = inputs.y.rows() as u64;
    let k = inputs.c.cols() + inputs.absorbed_dof;
    if n <= k as u64 + 1 {
        return Err(DashError::InsufficientSamples { n, required: k as u64 + 1 });
    }
    let core = scan_prepare(&inputs.y, &inputs.c)?;
    let run = || -> Result<ScanResult> {
        let blocks = block_ranges(inputs.x.cols(), block_size)
            .into_par_iter()
            .map(|r| {
                let xb = inputs.x.column_range(r);
                let stats = scan_block(&core, &xb)?;
                scan_finalize(&core.yy, &core.qty_sq, &stats, n, k)
            })
            .collect::<Result<Vec<_>>>()?;
        if blocks.is_empty() {
            return scan_finalize(&core.yy, &core.qty_sq, &empty_stats(&core), n, k);
        }
        ScanResult::concat(blocks)
    };
    if parallelism == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| DashError::InvalidArgument(format!("thread pool: {e}")))?
            .install(run)
    }
}

fn empty_stats(core: &ScanCore) -> FeatureStats {
    let t = core.yy.len();
    FeatureStats {
        xy: DenseMatrix::zeros(0, t),
        xx: Vec::new(),
        qtx: DenseMatrix::zeros(core.q.cols(), 0),
        qtx_qty: DenseMatrix::zeros(0, t),
        qtx_sq: Vec::new(),
    }
}
