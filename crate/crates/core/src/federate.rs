//! Multi-party scan: each party compresses its rows to covariate-dimension
//! Gram statistics plus the `R` of its covariates; the parties' statistics
//! are summed and their `R` factors stacked and re-factored (TSQR), which
//! recovers the pooled `R` exactly. `QᵀY` and `QᵀX` then follow from
//! `(R⁻¹)ᵀ CᵀY` and `(R⁻¹)ᵀ CᵀX` without any party revealing rows.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{DashError, Result};
use crate::linalg::{column_squared_norms, gram, r_factor, solve_rt_transposed, Cholesky, DenseMatrix};
use crate::scan::{scan_finalize, FeatureStats, ScanResult};

/// `r_pᵀ r_p` must reproduce `C_pᵀ C_p` to this relative accuracy.
pub const R_CHECK_TOL: f64 = 1e-9;

/// Opaque party identifier. Parties are ordered by it wherever order matters.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartyId(pub String);

impl PartyId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PartyId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for PartyId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// Column names for each role. Combining requires every party to agree.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Labels {
    pub responses: Vec<String>,
    pub features: Vec<String>,
    pub covariates: Vec<String>,
}

impl Labels {
    /// `y0.., x0.., c0..`.
    pub fn generic(t: usize, m: usize, k: usize) -> Self {
        let names = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect();
        Self { responses: names("y", t), features: names("x", m), covariates: names("c", k) }
    }
}

/// One party's compressed data: everything that leaves the party.
///
/// Its size depends on `(K, M, T)` only, never on `n_p`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartyCompressed {
    pub party_id: PartyId,
    pub n_p: u64,
    pub labels: Labels,
    /// Degrees of freedom absorbed by local preprocessing (1 if the party
    /// mean-centered its columns, else 0).
    pub absorbed_dof: u32,
    /// `T x T`.
    pub yty: DenseMatrix,
    /// `M x T`.
    pub xty: DenseMatrix,
    /// `X_p·X_p`, length `M`.
    pub xx: Vec<f64>,
    /// `K x T`.
    pub cty: DenseMatrix,
    /// `K x M`.
    pub ctx: DenseMatrix,
    /// `K x K`, upper triangular with positive diagonal.
    pub r_p: DenseMatrix,
}

impl PartyCompressed {
    pub fn k(&self) -> usize {
        self.r_p.rows()
    }

    pub fn m(&self) -> usize {
        self.xx.len()
    }

    pub fn t(&self) -> usize {
        self.yty.rows()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.k(), self.m(), self.t())
    }

    /// `C_pᵀC_p` recovered as `r_pᵀ r_p`.
    pub fn ctc(&self) -> DenseMatrix {
        gram(&self.r_p, &self.r_p).expect("square factor")
    }
}

/// Across-party sums, the global `R`, and the projections it yields.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedStats {
    /// Sorted ids of every party folded in.
    pub parties: Vec<PartyId>,
    pub n: u64,
    pub labels: Labels,
    pub absorbed_dof: u32,
    pub yty: DenseMatrix,
    pub xty: DenseMatrix,
    pub xx: Vec<f64>,
    pub cty: DenseMatrix,
    pub ctx: DenseMatrix,
    pub r: DenseMatrix,
    /// `K x T`: `QᵀY`.
    pub qty: DenseMatrix,
    /// `K x M`: `QᵀX`.
    pub qtx: DenseMatrix,
}

impl CombinedStats {
    pub fn k(&self) -> usize {
        self.r.rows()
    }

    pub fn m(&self) -> usize {
        self.xx.len()
    }

    pub fn t(&self) -> usize {
        self.yty.rows()
    }
}

fn check_rows(n: usize, what: &str, m: &DenseMatrix) -> Result<()> {
    if m.rows() != n {
        return Err(DashError::DimensionMismatch(format!("{what} has {} rows, expected {n}", m.rows())));
    }
    Ok(())
}

/// Compress one party's `(Y_p, X_p, C_p)` with generic labels.
pub fn compress_party(
    y_p: &DenseMatrix,
    x_p: &DenseMatrix,
    c_p: &DenseMatrix,
    party_id: impl Into<PartyId>,
) -> Result<PartyCompressed> {
    let labels = Labels::generic(y_p.cols(), x_p.cols(), c_p.cols());
    compress_party_labeled(y_p, x_p, c_p, party_id.into(), labels)
}

pub fn compress_party_labeled(
    y_p: &DenseMatrix,
    x_p: &DenseMatrix,
    c_p: &DenseMatrix,
    party_id: PartyId,
    labels: Labels,
) -> Result<PartyCompressed> {
    let n = y_p.rows();
    check_rows(n, "X_p", x_p)?;
    check_rows(n, "C_p", c_p)?;
    if labels.responses.len() != y_p.cols()
        || labels.features.len() != x_p.cols()
        || labels.covariates.len() != c_p.cols()
    {
        return Err(DashError::ShapeMismatch("labels do not match column counts".into()));
    }
    if n < c_p.cols() {
        // full column rank is impossible with fewer rows than covariates
        return Err(DashError::RankDeficient { column: n, value: 0.0, tolerance: 0.0 });
    }
    let r_p = stacked_r(&[c_p])?;
    let ctc = gram(c_p, c_p)?;
    let rtr = gram(&r_p, &r_p)?;
    let scale = ctc.max_abs();
    let dev = rtr.add(&ctc.scale(-1.0))?.max_abs();
    if dev > R_CHECK_TOL * scale {
        return Err(DashError::RankDeficient { column: 0, value: dev, tolerance: R_CHECK_TOL * scale });
    }
    Ok(PartyCompressed {
        party_id,
        n_p: n as u64,
        labels,
        absorbed_dof: 0,
        yty: gram(y_p, y_p)?,
        xty: gram(x_p, y_p)?,
        xx: column_squared_norms(x_p),
        cty: gram(c_p, y_p)?,
        ctx: gram(c_p, x_p)?,
        r_p,
    })
}

fn check_compatible(a: &PartyCompressed, b: &PartyCompressed) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(DashError::ShapeMismatch(format!(
            "party `{}` has (K, M, T) = {:?}, party `{}` has {:?}",
            a.party_id,
            a.dims(),
            b.party_id,
            b.dims()
        )));
    }
    if a.labels != b.labels {
        return Err(DashError::ShapeMismatch(format!(
            "parties `{}` and `{}` disagree on column labels",
            a.party_id, b.party_id
        )));
    }
    Ok(())
}

/// Global `R` and projections from summed Gram blocks.
fn project(r: DenseMatrix, cty: &DenseMatrix, ctx: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix)> {
    let qty = solve_rt_transposed(&r, cty)?;
    let qtx = solve_rt_transposed(&r, ctx)?;
    Ok((r, qty, qtx))
}

/// Sums of every Gram field, in the order given.
pub(crate) struct GramSums {
    pub n: u64,
    pub absorbed_dof: u32,
    pub yty: DenseMatrix,
    pub xty: DenseMatrix,
    pub xx: Vec<f64>,
    pub cty: DenseMatrix,
    pub ctx: DenseMatrix,
}

impl GramSums {
    fn of(p: &PartyCompressed) -> Self {
        Self {
            n: p.n_p,
            absorbed_dof: p.absorbed_dof,
            yty: p.yty.clone(),
            xty: p.xty.clone(),
            xx: p.xx.clone(),
            cty: p.cty.clone(),
            ctx: p.ctx.clone(),
        }
    }

    fn add(&mut self, p: &PartyCompressed) -> Result<()> {
        self.n += p.n_p;
        self.absorbed_dof += p.absorbed_dof;
        self.yty = self.yty.add(&p.yty)?;
        self.xty = self.xty.add(&p.xty)?;
        for (a, b) in self.xx.iter_mut().zip(&p.xx) {
            *a += b;
        }
        self.cty = self.cty.add(&p.cty)?;
        self.ctx = self.ctx.add(&p.ctx)?;
        Ok(())
    }
}

/// `R` of the vertical stack of `blocks`; empty when there are no columns.
pub fn stacked_r(blocks: &[&DenseMatrix]) -> Result<DenseMatrix> {
    let stack = DenseMatrix::vstack(blocks)?;
    if stack.cols() == 0 {
        return Ok(DenseMatrix::zeros(0, 0));
    }
    r_factor(&stack)
}

/// Validates a party set and returns it sorted by id.
pub(crate) fn sorted_parties(parts: &[PartyCompressed]) -> Result<Vec<&PartyCompressed>> {
    let first = parts.first().ok_or_else(|| DashError::EmptyInput("no parties to combine".into()))?;
    let mut sorted: Vec<&PartyCompressed> = parts.iter().collect();
    sorted.sort_by(|a, b| a.party_id.cmp(&b.party_id));
    for w in sorted.windows(2) {
        if w[0].party_id == w[1].party_id {
            return Err(DashError::DuplicateParty(w[0].party_id.to_string()));
        }
    }
    for p in &sorted {
        check_compatible(first, p)?;
    }
    Ok(sorted)
}

/// Combine across parties: sum the Gram fields (in party-id order, so the
/// result is bitwise independent of input order), take the `R` of the
/// stacked `r_p` factors, and project `CᵀY`, `CᵀX` onto `Q`.
pub fn combine(parts: &[PartyCompressed]) -> Result<CombinedStats> {
    let sorted = sorted_parties(parts)?;
    let mut sums = GramSums::of(sorted[0]);
    for p in &sorted[1..] {
        sums.add(p)?;
    }
    let stack: Vec<&DenseMatrix> = sorted.iter().map(|p| &p.r_p).collect();
    let r = if stack.len() == 1 { sorted[0].r_p.clone() } else { stacked_r(&stack)? };
    let parties = sorted.iter().map(|p| p.party_id.clone()).collect();
    finish(parties, sorted[0].labels.clone(), sums, r)
}

pub(crate) fn finish(parties: Vec<PartyId>, labels: Labels, sums: GramSums, r: DenseMatrix) -> Result<CombinedStats> {
    let (r, qty, qtx) = project(r, &sums.cty, &sums.ctx)?;
    Ok(CombinedStats {
        parties,
        n: sums.n,
        labels,
        absorbed_dof: sums.absorbed_dof,
        yty: sums.yty,
        xty: sums.xty,
        xx: sums.xx,
        cty: sums.cty,
        ctx: sums.ctx,
        r,
        qty,
        qtx,
    })
}

/// Folds one more party into existing combined statistics. The work is
/// `O(K³ + K²(M + T))`: the new `R` comes from the `2K x K` stack of the
/// existing `R` over `r_p`, so the cost never depends on the samples already
/// absorbed.
pub fn merge_combined(existing: &CombinedStats, new_part: &PartyCompressed) -> Result<CombinedStats> {
    let (k, m, t) = (existing.k(), existing.m(), existing.t());
    if new_part.dims() != (k, m, t) {
        return Err(DashError::ShapeMismatch(format!(
            "combined stats have (K, M, T) = {:?}, party `{}` has {:?}",
            (k, m, t),
            new_part.party_id,
            new_part.dims()
        )));
    }
    if new_part.labels != existing.labels {
        return Err(DashError::ShapeMismatch(format!("party `{}` disagrees on column labels", new_part.party_id)));
    }
    if existing.parties.contains(&new_part.party_id) {
        return Err(DashError::DuplicateParty(new_part.party_id.to_string()));
    }
    let mut sums = GramSums {
        n: existing.n,
        absorbed_dof: existing.absorbed_dof,
        yty: existing.yty.clone(),
        xty: existing.xty.clone(),
        xx: existing.xx.clone(),
        cty: existing.cty.clone(),
        ctx: existing.ctx.clone(),
    };
    sums.add(new_part)?;
    let r = stacked_r(&[&existing.r, &new_part.r_p])?;
    let mut parties = existing.parties.clone();
    parties.push(new_part.party_id.clone());
    parties.sort();
    finish(parties, existing.labels.clone(), sums, r)
}

/// Per-feature inputs to the scan closed forms, from combined statistics.
pub fn feature_stats(cs: &CombinedStats) -> Result<FeatureStats> {
    Ok(FeatureStats {
        xy: cs.xty.clone(),
        xx: cs.xx.clone(),
        qtx_qty: gram(&cs.qtx, &cs.qty)?,
        qtx_sq: column_squared_norms(&cs.qtx),
        qtx: cs.qtx.clone(),
    })
}

/// Scan statistics from combined statistics, exactly as the single-party
/// scan computes them, with `df = n - k - absorbed - 1`.
pub fn finalize_scan(cs: &CombinedStats) -> Result<ScanResult> {
    let yy = cs.yty.diagonal();
    let qty_sq = column_squared_norms(&cs.qty);
    let k = cs.k() + cs.absorbed_dof as usize;
    scan_finalize(&yy, &qty_sq, &feature_stats(cs)?, cs.n, k)
}

/// A choice of which of a party's `[Y | C]` columns act as responses and
/// which as permanent covariates. Indices refer to the current layout:
/// `0..T` are the responses, `T..T+K` the covariates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoleDesignation {
    pub responses: Vec<usize>,
    pub covariates: Vec<usize>,
}

impl RoleDesignation {
    /// The designation that reproduces the party's current split.
    pub fn current(t: usize, k: usize) -> Self {
        Self { responses: (0..t).collect(), covariates: (t..t + k).collect() }
    }
}

/// Re-assigns response/covariate roles over a party's already-compressed
/// `[Y | C]` columns without touching raw data. Only the new `r_p` is
/// recomputed, as the Cholesky factor of the selected `CᵀC` block.
pub fn swap_roles(part: &PartyCompressed, designation: &RoleDesignation) -> Result<PartyCompressed> {
    let (k, m, t) = part.dims();
    let width = t + k;
    let mut seen = BTreeSet::new();
    for &i in designation.responses.iter().chain(&designation.covariates) {
        if i >= width || !seen.insert(i) {
            return Err(DashError::InvalidArgument(format!(
                "column index {i} is out of range or repeated (T + K = {width})"
            )));
        }
    }

    // Full Gram over [Y | C] and cross-products of X with [Y | C].
    let ctc = part.ctc();
    let mut full = DenseMatrix::zeros(width, width);
    for i in 0..width {
        for j in 0..width {
            let v = match (i < t, j < t) {
                (true, true) => part.yty.get(i, j),
                (true, false) => part.cty.get(j - t, i),
                (false, true) => part.cty.get(i - t, j),
                (false, false) => ctc.get(i - t, j - t),
            };
            full.set(i, j, v);
        }
    }
    let x_cross = |col: usize| -> Vec<f64> {
        if col < t {
            part.xty.column(col).to_vec()
        } else {
            (0..m).map(|f| part.ctx.get(col - t, f)).collect()
        }
    };
    let sub = |rows: &[usize], cols: &[usize]| -> DenseMatrix {
        let mut out = DenseMatrix::zeros(rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                out.set(a, b, full.get(i, j));
            }
        }
        out
    };

    let (resp, cov) = (&designation.responses, &designation.covariates);
    let r_p = if *cov == RoleDesignation::current(t, k).covariates {
        part.r_p.clone()
    } else if cov.is_empty() {
        DenseMatrix::zeros(0, 0)
    } else {
        Cholesky::factor(&sub(cov, cov))?.upper()
    };
    let xty_cols: Vec<Vec<f64>> = resp.iter().map(|&c| x_cross(c)).collect();
    let mut ctx = DenseMatrix::zeros(cov.len(), m);
    for (a, &c) in cov.iter().enumerate() {
        for (f, v) in x_cross(c).into_iter().enumerate() {
            ctx.set(a, f, v);
        }
    }
    let names: Vec<&String> = part.labels.responses.iter().chain(&part.labels.covariates).collect();
    let labels = Labels {
        responses: resp.iter().map(|&i| names[i].clone()).collect(),
        features: part.labels.features.clone(),
        covariates: cov.iter().map(|&i| names[i].clone()).collect(),
    };
    Ok(PartyCompressed {
        party_id: part.party_id.clone(),
        n_p: part.n_p,
        labels,
        absorbed_dof: part.absorbed_dof,
        yty: sub(resp, resp),
        xty: DenseMatrix::from_columns(m, &xty_cols)?,
        xx: part.xx.clone(),
        cty: sub(cov, resp),
        ctx,
        r_p,
    })
}

/// Where column means come from when centering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CenteringMode {
    /// Pooled means across all parties. Requires sharing per-party column
    /// sums, which reveals them to whoever pools them.
    Global,
    /// Each party subtracts its own means; nothing leaves the party.
    PerParty,
}

/// Centered data and the means that were subtracted.
#[derive(Clone, Debug, PartialEq)]
pub struct Centered {
    pub data: DenseMatrix,
    pub means: Vec<f64>,
}

pub fn column_means(m: &DenseMatrix) -> Vec<f64> {
    let n = m.rows().max(1) as f64;
    (0..m.cols()).map(|c| m.column(c).iter().sum::<f64>() / n).collect()
}

pub fn subtract_means(m: &DenseMatrix, means: &[f64]) -> Result<DenseMatrix> {
    if means.len() != m.cols() {
        return Err(DashError::DimensionMismatch(format!("{} means for {} columns", means.len(), m.cols())));
    }
    let mut data = Vec::with_capacity(m.rows() * m.cols());
    for (c, mu) in means.iter().enumerate() {
        data.extend(m.column(c).iter().map(|v| v - mu));
    }
    Ok(DenseMatrix::from_parts(m.rows(), m.cols(), data))
}

/// Mean-centers the same block of columns held by several parties.
///
/// Centering with per-party means is equivalent to adding one indicator
/// covariate per party; centering with global means is equivalent to adding
/// an intercept. Either way the consumed degrees of freedom must be
/// accounted for (see [`PartyCompressed::absorbed_dof`]).
pub fn center(parts: &[DenseMatrix], mode: CenteringMode) -> Result<Vec<Centered>> {
    match mode {
        CenteringMode::PerParty => parts
            .iter()
            .map(|p| {
                let means = column_means(p);
                Ok(Centered { data: subtract_means(p, &means)?, means })
            })
            .collect(),
        CenteringMode::Global => {
            let cols = parts.first().map_or(0, |p| p.cols());
            let mut sums = vec![0.0; cols];
            let mut n = 0usize;
            for p in parts {
                if p.cols() != cols {
                    return Err(DashError::DimensionMismatch(format!("parties hold {} and {cols} columns", p.cols())));
                }
                n += p.rows();
                for (c, s) in sums.iter_mut().enumerate() {
                    *s += p.column(c).iter().sum::<f64>();
                }
            }
            let means: Vec<f64> = sums.iter().map(|s| s / n.max(1) as f64).collect();
            parts.iter().map(|p| Ok(Centered { data: subtract_means(p, &means)?, means: means.clone() })).collect()
        }
    }
}

/// Centers `Y_p`, `X_p` and `C_p` with the party's own means and compresses
/// the result, recording one absorbed degree of freedom.
pub fn compress_party_centered(
    y_p: &DenseMatrix,
    x_p: &DenseMatrix,
    c_p: &DenseMatrix,
    party_id: PartyId,
    labels: Labels,
) -> Result<PartyCompressed> {
    let center_one = |m: &DenseMatrix| subtract_means(m, &column_means(m));
    let mut part = compress_party_labeled(&center_one(y_p)?, &center_one(x_p)?, &center_one(c_p)?, party_id, labels)?;
    part.absorbed_dof = 1;
    Ok(part)
}
