//! Synthetic multi-party data and an end-to-end self check.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Binomial, Distribution, StandardNormal};

use crate::error::{DashError, Result};
use crate::federate::{combine, compress_party, finalize_scan, PartyCompressed};
use crate::linalg::DenseMatrix;
use crate::scan::{scan, ScanInputs, ScanResult};
use crate::secure::{secure_combine_parties, FixedPointCodec, PairwiseSeeds, RPolicy};

/// `rows x cols` matrix of independent standard normals.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = StdRng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DenseMatrix::from_parts(rows, cols, data)
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub n: usize,
    pub m: usize,
    /// Covariates including the intercept.
    pub k: usize,
    pub t: usize,
    pub parties: usize,
    pub seed: u64,
    /// Fraction of features with a nonzero effect on each response.
    pub causal_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { n: 3000, m: 500, k: 5, t: 2, parties: 3, seed: 1, causal_fraction: 0.01 }
    }
}

#[derive(Clone, Debug)]
pub struct SimData {
    pub y: DenseMatrix,
    pub x: DenseMatrix,
    pub c: DenseMatrix,
}

/// Genotype-like features in {0, 1, 2}, an intercept plus Gaussian
/// covariates, and responses driven by a sparse set of features.
pub fn simulate_data(cfg: &SimConfig) -> Result<SimData> {
    if cfg.k == 0 || cfg.n <= cfg.k + 1 || cfg.t == 0 {
        return Err(DashError::InvalidArgument(format!(
            "need k >= 1, t >= 1 and n > k + 1 (n={}, k={}, t={})",
            cfg.n, cfg.k, cfg.t
        )));
    }
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let n = cfg.n;

    let mut c = vec![1.0; n];
    c.extend((0..n * (cfg.k - 1)).map(|_| rng.sample::<f64, _>(StandardNormal)));

    let mut x = Vec::with_capacity(n * cfg.m);
    for _ in 0..cfg.m {
        let f = rng.random_range(0.05..0.5);
        let dist = Binomial::new(2, f).map_err(|e| DashError::InvalidArgument(e.to_string()))?;
        x.extend((0..n).map(|_| dist.sample(&mut rng) as f64));
    }

    let mut y = Vec::with_capacity(n * cfg.t);
    for _ in 0..cfg.t {
        let mut col: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for j in 0..cfg.k {
            let g: f64 = rng.sample(StandardNormal);
            for (v, cv) in col.iter_mut().zip(&c[j * n..(j + 1) * n]) {
                *v += 0.5 * g * cv;
            }
        }
        for m in 0..cfg.m {
            if rng.random::<f64>() < cfg.causal_fraction {
                let b: f64 = 0.3 * rng.sample::<f64, _>(StandardNormal);
                for (v, xv) in col.iter_mut().zip(&x[m * n..(m + 1) * n]) {
                    *v += b * xv;
                }
            }
        }
        y.extend(col);
    }
    Ok(SimData {
        y: DenseMatrix::from_col_major(n, cfg.t, y)?,
        x: DenseMatrix::from_col_major(n, cfg.m, x)?,
        c: DenseMatrix::from_col_major(n, cfg.k, c)?,
    })
}

/// Row boundaries for `parties` deliberately uneven contiguous blocks
/// (sizes proportional to 1, 2, ..., P), each large enough to compress.
pub fn uneven_split(n: usize, parties: usize, min_rows: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if parties == 0 || n < parties * min_rows {
        return Err(DashError::InvalidArgument(format!("cannot split {n} rows into {parties} parties")));
    }
    let weight: usize = (1..=parties).sum();
    let spare = n - parties * min_rows;
    let mut out = Vec::with_capacity(parties);
    let mut start = 0;
    for p in 0..parties {
        let len = if p + 1 == parties { n - start } else { min_rows + spare * (p + 1) / weight };
        out.push(start..start + len);
        start += len;
    }
    Ok(out)
}

/// Splits pooled data by row ranges and compresses each party.
pub fn compress_split(data: &SimData, ranges: &[std::ops::Range<usize>]) -> Result<Vec<PartyCompressed>> {
    ranges
        .iter()
        .enumerate()
        .map(|(p, r)| {
            compress_party(
                &data.y.row_range(r.clone()),
                &data.x.row_range(r.clone()),
                &data.c.row_range(r.clone()),
                format!("party{p}"),
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discrepancy {
    pub max_abs_t: f64,
    pub max_rel: f64,
    /// Entries whose validity flag differs.
    pub validity_mismatches: usize,
}

/// Largest differences between two scans over entries valid in both.
/// Relative error is `|a - b| / max(|a|, |b|)` on β̂, SE and t.
pub fn compare_scans(a: &ScanResult, b: &ScanResult) -> Result<Discrepancy> {
    if a.beta.len() != b.beta.len() || a.df != b.df {
        return Err(DashError::ShapeMismatch("scan results differ in shape or df".into()));
    }
    let rel = |x: f64, y: f64| {
        let s = x.abs().max(y.abs());
        if s == 0.0 {
            0.0
        } else {
            (x - y).abs() / s
        }
    };
    let mut d = Discrepancy { max_abs_t: 0.0, max_rel: 0.0, validity_mismatches: 0 };
    for i in 0..a.beta.len() {
        if a.valid[i] != b.valid[i] {
            d.validity_mismatches += 1;
            continue;
        }
        if !a.valid[i] {
            continue;
        }
        d.max_abs_t = d.max_abs_t.max((a.t_stats[i] - b.t_stats[i]).abs());
        for (x, y) in [(a.beta[i], b.beta[i]), (a.se[i], b.se[i]), (a.t_stats[i], b.t_stats[i])] {
            d.max_rel = d.max_rel.max(rel(x, y));
        }
    }
    Ok(d)
}

#[derive(Clone, Debug)]
pub struct SimReport {
    pub config: SimConfig,
    pub federated: Discrepancy,
    pub secure: Option<Discrepancy>,
}

/// Simulates, then checks the federated (and optionally secure) scan
/// against the pooled single-site scan.
pub fn run_simulation(cfg: &SimConfig, secure: bool) -> Result<SimReport> {
    let data = simulate_data(cfg)?;
    let pooled = scan(&ScanInputs::new(data.y.clone(), data.x.clone(), data.c.clone())?, 256, 0)?;
    let ranges = uneven_split(cfg.n, cfg.parties, cfg.k + 1)?;
    let parts = compress_split(&data, &ranges)?;
    let federated = compare_scans(&pooled, &finalize_scan(&combine(&parts)?)?)?;
    let secure = if secure {
        let roster: Vec<_> = parts.iter().map(|p| p.party_id.clone()).collect();
        let seeds = PairwiseSeeds::generate(&roster, cfg.seed);
        let cs = secure_combine_parties(&parts, &seeds, 1, RPolicy::MaskedGram, FixedPointCodec::default())?;
        Some(compare_scans(&pooled, &finalize_scan(&cs)?)?)
    } else {
        None
    };
    Ok(SimReport { config: cfg.clone(), federated, secure })
}
