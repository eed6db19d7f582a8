//! Independent reference computations for tests. Everything here works
//! straight from definitions (triple loops, Gauss-Jordan, quadrature) and
//! shares no numerical code with the library beyond `DenseMatrix` storage.
#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::PI;

use dash_core::linalg::DenseMatrix;

pub use dash_core::simulate::gaussian_matrix;

pub fn naive_gram(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.rows(), b.rows());
    let mut out = vec![0.0; a.cols() * b.cols()];
    for j in 0..b.cols() {
        for i in 0..a.cols() {
            let mut s = 0.0;
            for r in 0..a.rows() {
                s += a.get(r, i) * b.get(r, j);
            }
            out[j * a.cols() + i] = s;
        }
    }
    DenseMatrix::from_col_major(a.cols(), b.cols(), out).unwrap()
}

/// Gauss-Jordan with partial pivoting.
pub fn naive_inverse(a: &DenseMatrix) -> DenseMatrix {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| a.get(i, j)).collect();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        assert!(d.abs() > 1e-300, "singular");
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    let rows: Vec<f64> = m.iter().flat_map(|r| r[n..].to_vec()).collect();
    DenseMatrix::from_row_major(n, n, &rows).unwrap()
}

/// `|a - b| / max(|a|, |b|)`, zero when both are zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// Direct OLS of `y` on `[x, C]`: returns (coefficient of x, its SE, df).
pub fn ols_feature(y: &[f64], x: &[f64], c: &DenseMatrix, absorbed_dof: usize) -> (f64, f64, usize) {
    let n = y.len();
    let k = c.cols();
    let mut cols = vec![x.to_vec()];
    cols.extend((0..k).map(|j| c.column(j).to_vec()));
    let design = DenseMatrix::from_columns(n, &cols).unwrap();
    let yv = DenseMatrix::column_vector(y.to_vec()).unwrap();
    let inv = naive_inverse(&naive_gram(&design, &design));
    let xty = naive_gram(&design, &yv);
    let coef: Vec<f64> = (0..=k).map(|i| (0..=k).map(|j| inv.get(i, j) * xty.get(j, 0)).sum()).collect();
    let mut rss = 0.0;
    for r in 0..n {
        let fit: f64 = (0..=k).map(|j| design.get(r, j) * coef[j]).sum();
        rss += (y[r] - fit).powi(2);
    }
    let df = n - k - 1 - absorbed_dof;
    let sigma2 = rss / df as f64;
    (coef[0], (sigma2 * inv.get(0, 0)).sqrt(), df)
}

/// Adaptive Simpson on `[a, b]`.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Γ((ν+1)/2) / Γ(ν/2) for integer ν by the two-step recurrence, in logs.
pub fn ln_gamma_ratio(df: u64) -> f64 {
    let (mut nu, mut acc) = if df % 2 == 1 {
        (1u64, -0.5 * PI.ln()) // Γ(1)/Γ(1/2)
    } else {
        (2u64, 0.5 * PI.ln() - 2f64.ln()) // Γ(3/2)/Γ(1)
    };
    while nu < df {
        acc += ((nu + 1) as f64 / nu as f64).ln();
        nu += 2;
    }
    acc
}

/// Two-sided Student-t tail by quadrature: p = 1 - 2∫₀^|t| f_ν(s) ds.
pub fn quadrature_p(t: f64, df: u64) -> f64 {
    let nu = df as f64;
    let ln_norm = ln_gamma_ratio(df) - 0.5 * (nu * PI).ln();
    let dens = move |s: f64| (ln_norm - 0.5 * (nu + 1.0) * (s * s / nu).ln_1p()).exp();
    1.0 - 2.0 * simpson(&dens, 0.0, t.abs(), 1e-14)
}

pub fn normal_two_sided(z: f64) -> f64 {
    let dens = |s: f64| (-0.5 * s * s).exp() / (2.0 * PI).sqrt();
    1.0 - 2.0 * simpson(&dens, 0.0, z.abs(), 1e-14)
}

/// Asymptotic Kolmogorov distribution: P(sqrt(n) D_n > lambda).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        s += if j % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS statistic of `samples` against the uniform distribution.
pub fn ks_uniform(samples: &[f64]) -> f64 {
    let mut v: Vec<f64> = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter().enumerate().map(|(i, &u)| ((i as f64 + 1.0) / n - u).max(u - i as f64 / n)).fold(0.0, f64::max)
}
