//! The `DASH` binary message format.
//!
//! Every message is an envelope around a kind-specific body; all integers
//! and floats are little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "DASH"
//! 4       2     format version (u16) = 1
//! 6       2     kind (u16): 1 PartyCompressed, 2 MaskedShare, 3 ScanResult, 4 CombinedStats
//! 8       8     body length in bytes (u64)
//! 16      len   body
//! 16+len  4     CRC32 (IEEE) of every preceding byte
//! ```
//!
//! Strings are a u16 byte length followed by UTF-8. Matrices are written
//! row-major; triangular factors as their upper triangle, row-major.
//!
//! PartyCompressed body: party id, `n_p` (u64), `K`, `M`, `T`,
//! `absorbed_dof` (u32 each), the `T` response, `M` feature and `K`
//! covariate names, then f64 values `YᵀY`, `XᵀY`, `X·X`, `CᵀY`, `CᵀX`, `R_p`.
//!
//! MaskedShare body: party id, round id (u64), element count (u64), then the
//! ring elements as u64.
//!
//! CombinedStats body: `n` (u64), `K`, `M`, `T`, `absorbed_dof`, party count
//! (u32 each), party ids, names as above, then f64 values `YᵀY`, `XᵀY`,
//! `X·X`, `CᵀY`, `CᵀX`, `R`, `QᵀY`, `QᵀX`.
//!
//! ScanResult body: `df` (u64), `M`, `T` (u32 each), then `M·T` f64 values
//! each of β̂, SE, t and p in response-major order, then `M·T` validity bytes.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{DashError, Result};
use crate::federate::{CombinedStats, Labels, PartyCompressed, PartyId};
use crate::linalg::DenseMatrix;
use crate::scan::ScanResult;
use crate::secure::MaskedShare;

pub const MAGIC: &[u8; 4] = b"DASH";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;
const TRAILER_LEN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum MessageKind {
    PartyCompressed = 1,
    MaskedShare = 2,
    ScanResult = 3,
    CombinedStats = 4,
}

impl MessageKind {
    fn from_u16(v: u16) -> Result<Self> {
        Ok(match v {
            1 => Self::PartyCompressed,
            2 => Self::MaskedShare,
            3 => Self::ScanResult,
            4 => Self::CombinedStats,
            other => return Err(DashError::CorruptMessage(format!("unknown message kind {other}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum WireMessage {
    Party(PartyCompressed),
    Share(MaskedShare),
    Scan(ScanResult),
    Combined(CombinedStats),
}

impl WireMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            WireMessage::Party(_) => MessageKind::PartyCompressed,
            WireMessage::Share(_) => MessageKind::MaskedShare,
            WireMessage::Scan(_) => MessageKind::ScanResult,
            WireMessage::Combined(_) => MessageKind::CombinedStats,
        }
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn str(&mut self, s: &str) {
        let len = u16::try_from(s.len()).expect("names longer than 65535 bytes");
        self.u16(len);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn dim(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("dimension exceeds u32"));
    }
    fn labels(&mut self, l: &Labels) {
        for name in l.responses.iter().chain(&l.features).chain(&l.covariates) {
            self.str(name);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

fn corrupt(msg: impl Into<String>) -> DashError {
    DashError::CorruptMessage(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.at < n {
            return Err(corrupt("unexpected end of message"));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn dim(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| corrupt("length overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn str(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| corrupt("name is not UTF-8"))
    }
    fn strings(&mut self, n: usize) -> Result<Vec<String>> {
        (0..n).map(|_| self.str()).collect()
    }
    fn labels(&mut self, k: usize, m: usize, t: usize) -> Result<Labels> {
        Ok(Labels { responses: self.strings(t)?, features: self.strings(m)?, covariates: self.strings(k)? })
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DenseMatrix> {
        let n = rows.checked_mul(cols).ok_or_else(|| corrupt("length overflow"))?;
        let v = self.f64s(n)?;
        DenseMatrix::from_row_major(rows, cols, &v).map_err(|e| corrupt(e.to_string()))
    }
    fn upper(&mut self, k: usize) -> Result<DenseMatrix> {
        let v = self.f64s(k * (k + 1) / 2)?;
        let r = DenseMatrix::from_upper_triangle_row_major(k, &v).map_err(|e| corrupt(e.to_string()))?;
        if r.diagonal().iter().any(|d| !(*d > 0.0)) {
            return Err(corrupt("triangular factor has a non-positive diagonal"));
        }
        Ok(r)
    }
    fn vector(&mut self, n: usize) -> Result<Vec<f64>> {
        let v = self.f64s(n)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(corrupt("non-finite value"));
        }
        Ok(v)
    }
}

fn write_party(w: &mut Writer, p: &PartyCompressed) {
    w.str(p.party_id.as_str());
    w.u64(p.n_p);
    w.dim(p.k());
    w.dim(p.m());
    w.dim(p.t());
    w.u32(p.absorbed_dof);
    w.labels(&p.labels);
    w.f64s(&p.yty.to_row_major());
    w.f64s(&p.xty.to_row_major());
    w.f64s(&p.xx);
    w.f64s(&p.cty.to_row_major());
    w.f64s(&p.ctx.to_row_major());
    w.f64s(&p.r_p.upper_triangle_row_major());
}

fn read_party(r: &mut Reader) -> Result<PartyCompressed> {
    let party_id = PartyId(r.str()?);
    let n_p = r.u64()?;
    let (k, m, t) = (r.dim()?, r.dim()?, r.dim()?);
    let absorbed_dof = r.u32()?;
    let labels = r.labels(k, m, t)?;
    Ok(PartyCompressed {
        party_id,
        n_p,
        labels,
        absorbed_dof,
        yty: r.matrix(t, t)?,
        xty: r.matrix(m, t)?,
        xx: r.vector(m)?,
        cty: r.matrix(k, t)?,
        ctx: r.matrix(k, m)?,
        r_p: r.upper(k)?,
    })
}

fn write_combined(w: &mut Writer, c: &CombinedStats) {
    w.u64(c.n);
    w.dim(c.k());
    w.dim(c.m());
    w.dim(c.t());
    w.u32(c.absorbed_dof);
    w.dim(c.parties.len());
    for p in &c.parties {
        w.str(p.as_str());
    }
    w.labels(&c.labels);
    w.f64s(&c.yty.to_row_major());
    w.f64s(&c.xty.to_row_major());
    w.f64s(&c.xx);
    w.f64s(&c.cty.to_row_major());
    w.f64s(&c.ctx.to_row_major());
    w.f64s(&c.r.upper_triangle_row_major());
    w.f64s(&c.qty.to_row_major());
    w.f64s(&c.qtx.to_row_major());
}

fn read_combined(r: &mut Reader) -> Result<CombinedStats> {
    let n = r.u64()?;
    let (k, m, t) = (r.dim()?, r.dim()?, r.dim()?);
    let absorbed_dof = r.u32()?;
    let n_parties = r.dim()?;
    let parties: Vec<PartyId> = r.strings(n_parties)?.into_iter().map(PartyId).collect();
    let labels = r.labels(k, m, t)?;
    Ok(CombinedStats {
        parties,
        n,
        labels,
        absorbed_dof,
        yty: r.matrix(t, t)?,
        xty: r.matrix(m, t)?,
        xx: r.vector(m)?,
        cty: r.matrix(k, t)?,
        ctx: r.matrix(k, m)?,
        r: r.upper(k)?,
        qty: r.matrix(k, t)?,
        qtx: r.matrix(k, m)?,
    })
}

fn write_share(w: &mut Writer, s: &MaskedShare) {
    w.str(s.party_id.as_str());
    w.u64(s.round_id);
    w.u64(s.payload.len() as u64);
    for v in &s.payload {
        w.u64(*v);
    }
}

fn read_share(r: &mut Reader) -> Result<MaskedShare> {
    let party_id = PartyId(r.str()?);
    let round_id = r.u64()?;
    let count = usize::try_from(r.u64()?).map_err(|_| corrupt("element count overflow"))?;
    let bytes = r.take(count.checked_mul(8).ok_or_else(|| corrupt("length overflow"))?)?;
    let payload = bytes.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(MaskedShare { party_id, round_id, payload })
}

fn write_scan(w: &mut Writer, s: &ScanResult) {
    w.u64(s.df);
    w.dim(s.n_features);
    w.dim(s.n_responses);
    w.f64s(&s.beta);
    w.f64s(&s.se);
    w.f64s(&s.t_stats);
    w.f64s(&s.p_values);
    w.0.extend(s.valid.iter().map(|&v| v as u8));
}

fn read_scan(r: &mut Reader) -> Result<ScanResult> {
    let df = r.u64()?;
    let (m, t) = (r.dim()?, r.dim()?);
    let len = m.checked_mul(t).ok_or_else(|| corrupt("length overflow"))?;
    let beta = r.f64s(len)?;
    let se = r.f64s(len)?;
    let t_stats = r.f64s(len)?;
    let p_values = r.f64s(len)?;
    let valid = r
        .take(len)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(corrupt("validity flag is not 0 or 1")),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanResult { n_features: m, n_responses: t, beta, se, t_stats, p_values, df, valid })
}

/// Serializes a message, envelope and checksum included.
pub fn write_message(msg: &WireMessage) -> Vec<u8> {
    let mut body = Writer::default();
    match msg {
        WireMessage::Party(p) => write_party(&mut body, p),
        WireMessage::Share(s) => write_share(&mut body, s),
        WireMessage::Scan(s) => write_scan(&mut body, s),
        WireMessage::Combined(c) => write_combined(&mut body, c),
    }
    let mut out = Writer(Vec::with_capacity(HEADER_LEN + body.0.len() + TRAILER_LEN));
    out.0.extend_from_slice(MAGIC);
    out.u16(FORMAT_VERSION);
    out.u16(msg.kind() as u16);
    out.u64(body.0.len() as u64);
    out.0.extend_from_slice(&body.0);
    let crc = crc32fast::hash(&out.0);
    out.u32(crc);
    out.0
}

pub fn read_message(bytes: &[u8]) -> Result<WireMessage> {
    if bytes.len() < HEADER_LEN + TRAILER_LEN {
        return Err(corrupt(format!("message too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(DashError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let kind = MessageKind::from_u16(u16::from_le_bytes([bytes[6], bytes[7]]))?;
    let body_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let expected = (HEADER_LEN + TRAILER_LEN) as u64;
    if body_len.checked_add(expected) != Some(bytes.len() as u64) {
        return Err(corrupt(format!("declared body length {body_len} does not match message size {}", bytes.len())));
    }
    let end = bytes.len() - TRAILER_LEN;
    let stored = u32::from_le_bytes(bytes[end..].try_into().unwrap());
    if crc32fast::hash(&bytes[..end]) != stored {
        return Err(corrupt("checksum mismatch"));
    }
    let mut r = Reader { buf: &bytes[..end], at: HEADER_LEN };
    let msg = match kind {
        MessageKind::PartyCompressed => WireMessage::Party(read_party(&mut r)?),
        MessageKind::MaskedShare => WireMessage::Share(read_share(&mut r)?),
        MessageKind::ScanResult => WireMessage::Scan(read_scan(&mut r)?),
        MessageKind::CombinedStats => WireMessage::Combined(read_combined(&mut r)?),
    };
    if r.at != end {
        return Err(corrupt(format!("{} trailing bytes in body", end - r.at)));
    }
    Ok(msg)
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        DashError::io_at(path, e)
    })
}

pub fn write_message_file(path: &Path, msg: &WireMessage) -> Result<()> {
    write_atomic(path, &write_message(msg))
}

pub fn read_message_file(path: &Path) -> Result<WireMessage> {
    read_message(&fs::read(path).map_err(|e| DashError::io_at(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federate::compress_party;
    use crate::simulate::gaussian_matrix;

    fn party(n: usize, k: usize, m: usize, t: usize, seed: u64) -> PartyCompressed {
        compress_party(
            &gaussian_matrix(n, t, seed),
            &gaussian_matrix(n, m, seed + 1),
            &gaussian_matrix(n, k, seed + 2),
            "site-a",
        )
        .unwrap()
    }

    #[test]
    fn party_round_trip_is_bitwise() {
        let p = party(40, 3, 10, 2, 1);
        let bytes = write_message(&WireMessage::Party(p.clone()));
        assert_eq!(&bytes[..4], b"DASH");
        assert_eq!(read_message(&bytes).unwrap(), WireMessage::Party(p));
    }

    #[test]
    fn share_round_trip() {
        let s = MaskedShare { party_id: "b".into(), round_id: 9, payload: vec![0, u64::MAX, 42] };
        let bytes = write_message(&WireMessage::Share(s.clone()));
        // header + id(2+1) + round + count + 3 elements + crc
        assert_eq!(bytes.len(), 16 + 3 + 8 + 8 + 24 + 4);
        assert_eq!(read_message(&bytes).unwrap(), WireMessage::Share(s));
    }

    #[test]
    fn size_depends_only_on_dimensions() {
        let small = write_message(&WireMessage::Party(party(10, 3, 10, 1, 3)));
        let large = write_message(&WireMessage::Party(party(100_000, 3, 10, 1, 3)));
        assert_eq!(small.len(), large.len());
    }

    #[test]
    fn rejects_damage() {
        let bytes = write_message(&WireMessage::Party(party(20, 2, 4, 1, 5)));
        for cut in [0, 3, 16, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(read_message(&bytes[..cut]), Err(DashError::CorruptMessage(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 0x10;
        assert!(matches!(read_message(&flipped), Err(DashError::CorruptMessage(_))));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(read_message(&magic), Err(DashError::CorruptMessage(_))));
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(read_message(&version), Err(DashError::VersionMismatch { found: 9, .. })));
        let mut extended = bytes.clone();
        extended.push(0);
        assert!(matches!(read_message(&extended), Err(DashError::CorruptMessage(_))));
    }

    #[test]
    fn scan_result_round_trip_keeps_nan() {
        let s = ScanResult {
            n_features: 2,
            n_responses: 1,
            beta: vec![1.5, f64::NAN],
            se: vec![0.5, f64::NAN],
            t_stats: vec![3.0, f64::NAN],
            p_values: vec![0.01, f64::NAN],
            df: 10,
            valid: vec![true, false],
        };
        let back = match read_message(&write_message(&WireMessage::Scan(s.clone()))).unwrap() {
            WireMessage::Scan(b) => b,
            other => panic!("{other:?}"),
        };
        assert_eq!(back.valid, s.valid);
        assert_eq!(back.beta[0], 1.5);
        assert!(back.beta[1].is_nan());
    }
}
