//! Fixtures shared by the benchmarks.

use dash_core::federate::{compress_party, PartyCompressed};
use dash_core::simulate::gaussian_matrix;
use dash_core::{DenseMatrix, ScanInputs};

/// Gaussian scan inputs with an intercept among the `k` covariates.
pub fn scan_inputs(n: usize, m: usize, k: usize, t: usize, seed: u64) -> ScanInputs {
    let g = gaussian_matrix(n, k, seed);
    let mut cols = vec![vec![1.0; n]];
    cols.extend((1..k).map(|j| g.column(j).to_vec()));
    let c = DenseMatrix::from_columns(n, &cols).expect("fixture shape");
    ScanInputs::new(gaussian_matrix(n, t, seed + 1), gaussian_matrix(n, m, seed + 2), c).expect("fixture rows")
}

/// `p` compressed parties of `n_p` rows each.
pub fn parties(p: usize, n_p: usize, m: usize, k: usize, t: usize) -> Vec<PartyCompressed> {
    (0..p)
        .map(|i| {
            let inp = scan_inputs(n_p, m, k, t, 10 * i as u64);
            compress_party(&inp.y, &inp.x, &inp.c, format!("p{i}")).expect("fixture compresses")
        })
        .collect()
}
