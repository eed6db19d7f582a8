//! Secure summation for the combine stage.
//!
//! Threat model: honest-but-curious. Every party follows the protocol; the
//! aggregator (and any single party) only sees masked vectors whose masks
//! cancel in the sum. There is no dropout recovery, no key agreement (the
//! pairwise seeds are provisioned out of band) and no integrity protection.
//! The released sums themselves are not protected.
//!
//! Values are encoded as fixed-point elements of `Z / 2^64` and masked with
//! pairwise ChaCha20 streams: party `a` adds the stream shared with every
//! `b > a` and subtracts the stream shared with every `b < a`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{DashError, Result};
use crate::federate::{finish, sorted_parties, stacked_r, CombinedStats, GramSums, Labels, PartyCompressed, PartyId};
use crate::linalg::{Cholesky, DenseMatrix};

pub const DEFAULT_FRACTIONAL_BITS: u32 = 24;

/// Bits of headroom kept free above the encodable range so that sums of a
/// handful of parties do not wrap.
const HEADROOM_BITS: u32 = 2;

/// Fixed-point codec over the ring of integers modulo 2^64.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedPointCodec {
    fractional_bits: u32,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        Self { fractional_bits: DEFAULT_FRACTIONAL_BITS }
    }
}

impl FixedPointCodec {
    pub fn new(fractional_bits: u32) -> Result<Self> {
        if fractional_bits == 0 || fractional_bits > 52 {
            return Err(DashError::InvalidArgument(format!(
                "fractional bits must be in 1..=52, got {fractional_bits}"
            )));
        }
        Ok(Self { fractional_bits })
    }

    pub fn fractional_bits(&self) -> u32 {
        self.fractional_bits
    }

    fn scale(&self) -> f64 {
        (1u64 << self.fractional_bits) as f64
    }

    /// Magnitudes at or above this bound are rejected: `2^38` at 24 bits.
    pub fn range_limit(&self) -> f64 {
        2f64.powi((64 - HEADROOM_BITS - self.fractional_bits) as i32)
    }

    pub fn encode(&self, x: f64) -> Result<u64> {
        if !x.is_finite() || x.abs() >= self.range_limit() {
            return Err(DashError::RangeOverflow(x));
        }
        Ok((x * self.scale()).round() as i64 as u64)
    }

    pub fn decode(&self, v: u64) -> f64 {
        v as i64 as f64 / self.scale()
    }
}

pub type Seed = [u8; 32];

/// Symmetric table of seeds shared by each pair of parties.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairwiseSeeds {
    seeds: BTreeMap<(PartyId, PartyId), Seed>,
}

fn ordered(a: &PartyId, b: &PartyId) -> (PartyId, PartyId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

impl PairwiseSeeds {
    pub fn insert(&mut self, a: PartyId, b: PartyId, seed: Seed) -> Result<()> {
        if a == b {
            return Err(DashError::InvalidArgument(format!("party `{a}` paired with itself")));
        }
        self.seeds.insert(ordered(&a, &b), seed);
        Ok(())
    }

    pub fn get(&self, a: &PartyId, b: &PartyId) -> Option<&Seed> {
        self.seeds.get(&ordered(a, b))
    }

    /// The seeds `me` shares with each other member of `roster`.
    pub fn peers_of(&self, me: &PartyId, roster: &[PartyId]) -> Result<BTreeMap<PartyId, Seed>> {
        roster
            .iter()
            .filter(|p| *p != me)
            .map(|p| {
                self.get(me, p)
                    .map(|s| (p.clone(), *s))
                    .ok_or_else(|| DashError::Protocol(format!("no seed for pair ({me}, {p})")))
            })
            .collect()
    }

    /// Draws a seed for every pair from a deterministic generator. For
    /// simulation only; real deployments provision seeds out of band.
    pub fn generate(roster: &[PartyId], rng_seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
        let mut out = Self::default();
        let mut ids: Vec<&PartyId> = roster.iter().collect();
        ids.sort();
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                let mut seed = [0u8; 32];
                rng.fill_bytes(&mut seed);
                out.seeds.insert(((*a).clone(), (*b).clone()), seed);
            }
        }
        out
    }

    /// Parses `party_a <TAB> party_b <TAB> 64 hex digits` lines. Blank lines
    /// and lines starting with `#` are skipped.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut out = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |message: String| DashError::Parse { line: i + 1, column: "seed".into(), message };
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", fields.len())));
            }
            let digits = fields[2].trim();
            if digits.len() != 64 {
                return Err(bad(format!("seed must be 64 hex digits, got {}", digits.len())));
            }
            let mut seed = [0u8; 32];
            hex::decode_to_slice(digits, &mut seed).map_err(|e| bad(format!("bad hex: {e}")))?;
            out.insert(PartyId::new(fields[0].trim()), PartyId::new(fields[1].trim()), seed)
                .map_err(|e| bad(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for ((a, b), seed) in &self.seeds {
            let _ = writeln!(s, "{a}\t{b}\t{}", hex::encode(seed));
        }
        s
    }
}

/// One party's masked contribution to a round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedShare {
    pub party_id: PartyId,
    pub round_id: u64,
    pub payload: Vec<u64>,
}

fn mask_stream(seed: &Seed, round_id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::from_seed(*seed);
    rng.set_stream(round_id);
    rng
}

/// Encodes `values` and adds the pairwise masks for `self_id`.
pub fn mask(
    values: &[f64],
    peer_seeds: &BTreeMap<PartyId, Seed>,
    self_id: &PartyId,
    round_id: u64,
    codec: &FixedPointCodec,
) -> Result<MaskedShare> {
    let mut payload = values.iter().map(|&v| codec.encode(v)).collect::<Result<Vec<_>>>()?;
    for (peer, seed) in peer_seeds {
        if peer == self_id {
            return Err(DashError::Protocol(format!("party `{self_id}` listed as its own peer")));
        }
        let mut rng = mask_stream(seed, round_id);
        let add = peer > self_id;
        for p in payload.iter_mut() {
            let r = rng.next_u64();
            *p = if add { p.wrapping_add(r) } else { p.wrapping_sub(r) };
        }
    }
    Ok(MaskedShare { party_id: self_id.clone(), round_id, payload })
}

/// Ring sum of the shares of every party in `roster`; the masks cancel
/// only when the set is complete, so anything else is an error.
pub fn aggregate_ring(shares: &[MaskedShare], roster: &[PartyId]) -> Result<Vec<u64>> {
    let first = shares.first().ok_or_else(|| DashError::EmptyInput("no shares".into()))?;
    let expected: BTreeSet<&PartyId> = roster.iter().collect();
    let mut seen = BTreeSet::new();
    for s in shares {
        if !expected.contains(&s.party_id) {
            return Err(DashError::Protocol(format!("party `{}` is not in the roster", s.party_id)));
        }
        if !seen.insert(&s.party_id) {
            return Err(DashError::DuplicateShare(s.party_id.to_string()));
        }
        if s.round_id != first.round_id {
            return Err(DashError::Protocol(format!(
                "share from `{}` is for round {}, expected {}",
                s.party_id, s.round_id, first.round_id
            )));
        }
        if s.payload.len() != first.payload.len() {
            return Err(DashError::Protocol(format!(
                "share from `{}` has {} elements, expected {}",
                s.party_id,
                s.payload.len(),
                first.payload.len()
            )));
        }
    }
    if let Some(missing) = expected.iter().find(|p| !seen.contains(*p)) {
        return Err(DashError::MissingParty(missing.to_string()));
    }
    let mut sum = vec![0u64; first.payload.len()];
    for s in shares {
        for (a, b) in sum.iter_mut().zip(&s.payload) {
            *a = a.wrapping_add(*b);
        }
    }
    Ok(sum)
}

pub fn aggregate_unmask(shares: &[MaskedShare], roster: &[PartyId], codec: &FixedPointCodec) -> Result<Vec<f64>> {
    Ok(aggregate_ring(shares, roster)?.into_iter().map(|v| codec.decode(v)).collect())
}

/// How the aggregator obtains the global `R`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RPolicy {
    /// Each party adds `r_pᵀ r_p` (its `CᵀC`) to the masked vector; the
    /// aggregator takes the Cholesky factor of the decoded sum. `r_p` never
    /// leaves the party.
    #[default]
    MaskedGram,
    /// Parties send `r_p` in plaintext and the aggregator stacks them.
    PlaintextStack,
}

/// Layout of the flat vector each party masks.
///
/// Order: `n_p`, `absorbed_dof`, `YᵀY` (row-major), `XᵀY` (row-major),
/// `X·X`, `CᵀY` (row-major), `CᵀX` (row-major), then for
/// [`RPolicy::MaskedGram`] the upper triangle of `CᵀC`, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShareLayout {
    pub k: usize,
    pub m: usize,
    pub t: usize,
    pub policy: RPolicy,
}

impl ShareLayout {
    pub fn len(&self) -> usize {
        let (k, m, t) = (self.k, self.m, self.t);
        let gram = match self.policy {
            RPolicy::MaskedGram => k * (k + 1) / 2,
            RPolicy::PlaintextStack => 0,
        };
        2 + t * t + m * t + m + k * t + k * m + gram
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn flatten(&self, part: &PartyCompressed) -> Result<Vec<f64>> {
        if part.dims() != (self.k, self.m, self.t) {
            return Err(DashError::ShapeMismatch(format!(
                "party `{}` has (K, M, T) = {:?}, layout expects {:?}",
                part.party_id,
                part.dims(),
                (self.k, self.m, self.t)
            )));
        }
        let mut v = Vec::with_capacity(self.len());
        v.push(part.n_p as f64);
        v.push(part.absorbed_dof as f64);
        v.extend(part.yty.to_row_major());
        v.extend(part.xty.to_row_major());
        v.extend_from_slice(&part.xx);
        v.extend(part.cty.to_row_major());
        v.extend(part.ctx.to_row_major());
        if self.policy == RPolicy::MaskedGram {
            v.extend(part.ctc().upper_triangle_row_major());
        }
        debug_assert_eq!(v.len(), self.len());
        Ok(v)
    }

    /// Splits decoded sums back into Gram fields plus `CᵀC` when present.
    fn unflatten(&self, v: &[f64]) -> Result<(GramSums, Option<DenseMatrix>)> {
        if v.len() != self.len() {
            return Err(DashError::Protocol(format!(
                "aggregate has {} elements, layout expects {}",
                v.len(),
                self.len()
            )));
        }
        let (k, m, t) = (self.k, self.m, self.t);
        let mut at = 2;
        let mut take = |len: usize| {
            let s = &v[at..at + len];
            at += len;
            s
        };
        let yty = DenseMatrix::from_row_major(t, t, take(t * t))?;
        let xty = DenseMatrix::from_row_major(m, t, take(m * t))?;
        let xx = take(m).to_vec();
        let cty = DenseMatrix::from_row_major(k, t, take(k * t))?;
        let ctx = DenseMatrix::from_row_major(k, m, take(k * m))?;
        let ctc = if self.policy == RPolicy::MaskedGram {
            let upper = DenseMatrix::from_upper_triangle_row_major(k, take(k * (k + 1) / 2))?;
            // mirror the upper triangle
            let mut full = upper.clone();
            for i in 0..k {
                for j in 0..i {
                    full.set(i, j, upper.get(j, i));
                }
            }
            Some(full)
        } else {
            None
        };
        let sums = GramSums {
            n: v[0].round().max(0.0) as u64,
            absorbed_dof: v[1].round().max(0.0) as u32,
            yty,
            xty,
            xx,
            cty,
            ctx,
        };
        Ok((sums, ctc))
    }
}

/// Public parameters of one secure round, known to every participant.
#[derive(Clone, Debug)]
pub struct SecureRound {
    pub round_id: u64,
    pub roster: Vec<PartyId>,
    pub labels: Labels,
    pub policy: RPolicy,
    pub codec: FixedPointCodec,
}

impl SecureRound {
    pub fn layout(&self) -> ShareLayout {
        ShareLayout {
            k: self.labels.covariates.len(),
            m: self.labels.features.len(),
            t: self.labels.responses.len(),
            policy: self.policy,
        }
    }
}

/// Party side: flatten, encode and mask.
pub fn party_share(round: &SecureRound, part: &PartyCompressed, seeds: &PairwiseSeeds) -> Result<MaskedShare> {
    if part.labels != round.labels {
        return Err(DashError::ShapeMismatch(format!(
            "party `{}` disagrees with the round's column labels",
            part.party_id
        )));
    }
    let values = round.layout().flatten(part)?;
    let peers = seeds.peers_of(&part.party_id, &round.roster)?;
    mask(&values, &peers, &part.party_id, round.round_id, &round.codec)
}

/// Aggregator side: unmask the sums and rebuild [`CombinedStats`].
///
/// Under [`RPolicy::PlaintextStack`] `plaintext_r` must hold every party's
/// `r_p`; under [`RPolicy::MaskedGram`] it is ignored.
pub fn secure_combine(
    round: &SecureRound,
    shares: &[MaskedShare],
    plaintext_r: &[(PartyId, DenseMatrix)],
) -> Result<CombinedStats> {
    if let Some(s) = shares.iter().find(|s| s.round_id != round.round_id) {
        return Err(DashError::Protocol(format!(
            "share from `{}` is for round {}, expected {}",
            s.party_id, s.round_id, round.round_id
        )));
    }
    let decoded = aggregate_unmask(shares, &round.roster, &round.codec)?;
    let (sums, ctc) = round.layout().unflatten(&decoded)?;
    let k = round.layout().k;
    let r = match (round.policy, ctc) {
        (_, _) if k == 0 => DenseMatrix::zeros(0, 0),
        (RPolicy::MaskedGram, Some(ctc)) => Cholesky::factor(&ctc)?.upper(),
        (RPolicy::PlaintextStack, _) => {
            let mut rs: Vec<&(PartyId, DenseMatrix)> = plaintext_r.iter().collect();
            rs.sort_by(|a, b| a.0.cmp(&b.0));
            let ids: Vec<&PartyId> = rs.iter().map(|(p, _)| p).collect();
            let mut roster: Vec<&PartyId> = round.roster.iter().collect();
            roster.sort();
            if ids != roster {
                return Err(DashError::Protocol("plaintext R factors do not match the roster".into()));
            }
            let blocks: Vec<&DenseMatrix> = rs.iter().map(|(_, r)| r).collect();
            stacked_r(&blocks)?
        }
        (RPolicy::MaskedGram, None) => unreachable!("layout carries CᵀC under MaskedGram"),
    };
    let mut parties = round.roster.clone();
    parties.sort();
    finish(parties, round.labels.clone(), sums, r)
}

/// Runs a whole secure round in-process: every party masks its statistics
/// with the provisioned seeds and a single aggregator combines them.
pub fn secure_combine_parties(
    parts: &[PartyCompressed],
    seeds: &PairwiseSeeds,
    round_id: u64,
    policy: RPolicy,
    codec: FixedPointCodec,
) -> Result<CombinedStats> {
    let sorted = sorted_parties(parts)?;
    let round = SecureRound {
        round_id,
        roster: sorted.iter().map(|p| p.party_id.clone()).collect(),
        labels: sorted[0].labels.clone(),
        policy,
        codec,
    };
    let shares = sorted.iter().map(|p| party_share(&round, p, seeds)).collect::<Result<Vec<_>>>()?;
    let plaintext_r: Vec<(PartyId, DenseMatrix)> = match policy {
        RPolicy::PlaintextStack => sorted.iter().map(|p| (p.party_id.clone(), p.r_p.clone())).collect(),
        RPolicy::MaskedGram => Vec::new(),
    };
    secure_combine(&round, &shares, &plaintext_r)
}
