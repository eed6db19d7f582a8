//! Multi-party linear regression and association scans from compressed
//! per-party statistics.
//!
//! Each party reduces its rows to a fixed-size summary ([`PartyCompressed`])
//! whose size depends only on the number of responses, features and
//! covariates. Summaries combine by addition plus a small QR of stacked
//! triangular factors, and the combined statistics yield the same estimates
//! as a scan over the pooled rows. [`secure`] adds pairwise masking so the
//! aggregator only learns the sums.

// `!(x > tol)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

#[cfg(test)]
extern crate self as dash_core;

pub mod dataset;
pub mod error;
pub mod federate;
pub mod linalg;
pub mod regress;
pub mod scan;
pub mod secure;
pub mod simulate;
pub mod stats;
pub mod wire;

#[cfg(test)]
#[path = "../tests/common/oracle.rs"]
mod testutil;

pub use error::{DashError, ErrorKind, Result};
pub use federate::{
    combine, compress_party, compress_party_labeled, finalize_scan, merge_combined, CombinedStats, Labels,
    PartyCompressed, PartyId,
};
pub use linalg::DenseMatrix;
pub use regress::{regress, RegressionResult, RegressionSufficient};
pub use scan::{scan, ScanInputs, ScanResult};
pub use secure::{FixedPointCodec, PairwiseSeeds, RPolicy};
pub use wire::WireMessage;
