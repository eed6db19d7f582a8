//! Two-sided Student-t tail probabilities via the regularized incomplete beta
//! function, evaluated by a modified-Lentz continued fraction.

use std::f64::consts::PI;

use crate::error::{DashError, Result};

const CF_MAX_ITER: usize = 300;
const CF_EPS: f64 = 1e-15;
const CF_TINY: f64 = 1e-300;

/// `t` together with its two-sided p-value at `df` degrees of freedom.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTestOutcome {
    pub t: f64,
    pub df: u64,
    pub p_two_sided: f64,
}

impl TTestOutcome {
    pub fn new(t: f64, df: u64) -> Result<Self> {
        Ok(Self { t, df, p_two_sided: t_sf_two_sided(t, df as f64)? })
    }
}

/// `P(|T| >= |t|)` for `T ~ t(df)`.
///
/// Computed as `I_{df/(df+t²)}(df/2, 1/2)`. Infinite `t` gives 0; NaN
/// propagates.
pub fn t_sf_two_sided(t: f64, df: f64) -> Result<f64> {
    if !(df >= 1.0) || !df.is_finite() {
        return Err(DashError::InvalidDf(df));
    }
    if t.is_nan() {
        return Ok(f64::NAN);
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let t2 = t * t;
    // x = df / (df + t²) and 1 - x, each without cancellation.
    let (x, y) = if t2 < df {
        let r = t2 / df;
        (1.0 / (1.0 + r), r / (1.0 + r))
    } else {
        let r = df / t2;
        (r / (1.0 + r), 1.0 / (1.0 + r))
    };
    let p = beta_inc_reg(0.5 * df, 0.5, x, y)?;
    Ok(p.clamp(0.0, 1.0))
}

/// Regularized incomplete beta `I_x(a, b)`, with `y = 1 - x` supplied by the
/// caller so that both tails keep full relative precision.
pub fn beta_inc_reg(a: f64, b: f64, x: f64, y: f64) -> Result<f64> {
    if x <= 0.0 {
        return Ok(0.0);
    }
    if y <= 0.0 {
        return Ok(1.0);
    }
    let ln_x = if x > 0.5 { (-y).ln_1p() } else { x.ln() };
    let ln_y = if y > 0.5 { (-x).ln_1p() } else { y.ln() };
    let ln_front = a * ln_x + b * ln_y - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(ln_front.exp() * beta_cf(a, b, x)? / a)
    } else {
        Ok(1.0 - ln_front.exp() * beta_cf(b, a, y)? / b)
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() <= CF_EPS {
            return Ok(h);
        }
    }
    Err(DashError::NoConvergence { a, b, x })
}

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut s = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        s += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + s.ln()
}

/// Stirling remainder `ln Γ(x) - [(x - ½) ln x - x + ½ ln 2π]` for `x >= 10`.
fn stirling_correction(x: f64) -> f64 {
    let x2 = 1.0 / (x * x);
    (1.0 / 12.0 - x2 * (1.0 / 360.0 - x2 * (1.0 / 1260.0 - x2 * (1.0 / 1680.0 - x2 / 1188.0)))) / x
}

/// `ln B(a, b)`, avoiding the cancellation of three large `ln Γ` terms when
/// one argument is large.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    let (p, q) = if a < b { (a, b) } else { (b, a) };
    if q < 10.0 {
        return ln_gamma(p) + ln_gamma(q) - ln_gamma(p + q);
    }
    let corr = |x: f64| if x >= 10.0 { stirling_correction(x) } else { 0.0 };
    if p >= 10.0 {
        let pq = p + q;
        -0.5 * q.ln() + 0.5 * (2.0 * PI).ln() + corr(p) + corr(q) - corr(pq)
            + (p - 0.5) * (p / pq).ln()
            + q * (-p / pq).ln_1p()
    } else {
        // ln Γ(q) - ln Γ(p + q) from Stirling; ln Γ(p) directly.
        ln_gamma(p) + stirling_correction(q) - stirling_correction(p + q) + p
            - p * (p + q).ln()
            - (q - 0.5) * (p / q).ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{normal_two_sided, quadrature_p};

    #[test]
    fn trivial_values() {
        for df in [1.0, 3.0, 77.0] {
            assert_eq!(t_sf_two_sided(0.0, df).unwrap(), 1.0);
        }
        assert!((t_sf_two_sided(1.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(t_sf_two_sided(f64::INFINITY, 4.0).unwrap(), 0.0);
        assert!(t_sf_two_sided(f64::NAN, 4.0).unwrap().is_nan());
        assert!(matches!(t_sf_two_sided(1.0, 0.0), Err(DashError::InvalidDf(_))));
        assert!(matches!(t_sf_two_sided(1.0, 0.5), Err(DashError::InvalidDf(_))));
    }

    #[test]
    fn df30_against_quadrature() {
        let p = t_sf_two_sided(2.042, 30.0).unwrap();
        assert!((p - quadrature_p(2.042, 30)).abs() < 1e-6);
        assert!((p - 0.05).abs() < 1e-3);
    }

    #[test]
    fn grid_against_quadrature() {
        for df in [1u64, 2, 5, 30, 1000] {
            for i in 0..=16 {
                let t = 0.5 * i as f64;
                let p = t_sf_two_sided(t, df as f64).unwrap();
                let q = quadrature_p(t, df);
                assert!((p - q).abs() <= 1e-9, "df={df} t={t}: {p} vs {q}");
            }
        }
    }

    #[test]
    fn large_df_approaches_normal() {
        for z in [0.1, 0.5, 1.0, 1.96, 3.0, 5.0] {
            let p = t_sf_two_sided(z, 1e6).unwrap();
            assert!((p - normal_two_sided(z)).abs() < 1e-6, "z={z}");
        }
    }

    #[test]
    fn symmetric_and_monotone() {
        for df in [1.0, 4.0, 50.0] {
            let mut last = 1.0;
            for i in 1..200 {
                let t = 0.1 * i as f64;
                let p = t_sf_two_sided(t, df).unwrap();
                assert_eq!(p, t_sf_two_sided(-t, df).unwrap());
                assert!(p <= last);
                last = p;
            }
        }
    }

    #[test]
    fn extreme_tail_is_tiny_not_error() {
        let p = t_sf_two_sided(1e3, 100.0).unwrap();
        assert!((0.0..1e-200).contains(&p));
    }

    #[test]
    fn ln_beta_matches_direct_gamma() {
        for (a, b) in [(0.5, 12.0), (15.0, 0.5), (12.0, 30.0), (3.0, 4.5), (500.0, 0.5)] {
            let direct = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
            assert!((ln_beta(a, b) - direct).abs() < 1e-11 * direct.abs().max(1.0), "{a} {b}");
        }
        // B(1/2, 1/2) = π
        assert!((ln_beta(0.5, 0.5) - PI.ln()).abs() < 1e-14);
    }
}
