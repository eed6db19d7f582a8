//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p dash-core --test acceptance`.

#[path = "common/oracle.rs"]
mod oracle;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use dash_core::dataset::scan_to_tsv;
use dash_core::federate::{
    center, combine, compress_party, compress_party_centered, finalize_scan, merge_combined, CenteringMode,
    CombinedStats, Labels, PartyCompressed, PartyId,
};
use dash_core::linalg::{qr_positive, DenseMatrix};
use dash_core::scan::{scan, ScanInputs, ScanResult};
use dash_core::secure::{
    aggregate_ring, mask, secure_combine_parties, FixedPointCodec, PairwiseSeeds, RPolicy, SecureRound,
};
use dash_core::simulate::{compress_split, simulate_data, uneven_split, SimConfig, SimData};
use dash_core::stats::t_sf_two_sided;
use dash_core::wire::{write_message, WireMessage};

use oracle::{gaussian_matrix, kolmogorov_sf, ks_uniform, ols_feature, quadrature_p, rel_err};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Largest entrywise relative error of `f` over entries valid in both
/// results; differing validity flags are an error.
fn max_rel_valid(a: &ScanResult, b: &ScanResult, f: impl Fn(&ScanResult) -> &[f64]) -> Result<f64, String> {
    ensure(a.valid == b.valid, || "validity flags differ".into())?;
    ensure(a.df == b.df, || format!("df differs: {} vs {}", a.df, b.df))?;
    let (va, vb) = (f(a), f(b));
    Ok((0..va.len()).filter(|&i| a.valid[i]).map(|i| rel_err(va[i], vb[i])).fold(0.0, f64::max))
}

fn max_rel_matrix(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| rel_err(*x, *y)).fold(0.0, f64::max)
}

fn pooled_scan(d: &SimData) -> Result<ScanResult, String> {
    scan(&ScanInputs::new(d.y.clone(), d.x.clone(), d.c.clone()).map_err(e2s)?, 256, 0).map_err(e2s)
}

fn federated_exactness() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut valid = 0usize;
    for seed in 0..20u64 {
        let cfg = SimConfig { n: 3000, m: 500, k: 5, t: 2, parties: 3, seed: 1000 + seed, causal_fraction: 0.02 };
        let d = simulate_data(&cfg).map_err(e2s)?;
        let pooled = pooled_scan(&d)?;
        let parts = compress_split(&d, &uneven_split(cfg.n, cfg.parties, cfg.k + 1).map_err(e2s)?).map_err(e2s)?;
        let fed = finalize_scan(&combine(&parts).map_err(e2s)?).map_err(e2s)?;
        worst = worst.max(max_rel_valid(&fed, &pooled, |r| &r.t_stats)?);
        valid += fed.valid.iter().filter(|v| **v).count();
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-8, || format!("max relative t error {worst:.3e} > 1e-8"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("max rel t err {worst:.2e} over {valid} valid entries, {elapsed:.2?}"))
}

fn scan_matches_ols() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(2);
    let (mut worst_b, mut worst_se) = (0.0f64, 0.0f64);
    for seed in 0..20u64 {
        let k = rng.random_range(1..=8);
        let m = rng.random_range(1..=100);
        let n = rng.random_range(k + 10..=200);
        let y = gaussian_matrix(n, 1, 3 * seed);
        let x = gaussian_matrix(n, m, 3 * seed + 1);
        let c = gaussian_matrix(n, k, 3 * seed + 2);
        let r = scan(&ScanInputs::new(y.clone(), x.clone(), c.clone()).map_err(e2s)?, 32, 1).map_err(e2s)?;
        for f in 0..m {
            let (b, se, df) = ols_feature(y.column(0), x.column(f), &c, 0);
            ensure(r.is_valid(f, 0), || format!("seed {seed}: feature {f} flagged invalid"))?;
            ensure(r.df == df as u64, || format!("df {} vs {df}", r.df))?;
            worst_b = worst_b.max(rel_err(r.beta(f, 0), b));
            worst_se = worst_se.max(rel_err(r.se(f, 0), se));
        }
    }
    let elapsed = start.elapsed();
    ensure(worst_b <= 1e-8 && worst_se <= 1e-8, || format!("beta {worst_b:.3e}, se {worst_se:.3e}"))?;
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("max rel err beta {worst_b:.2e}, se {worst_se:.2e}, {elapsed:.2?}"))
}

fn stacked_r_matches_pooled_qr() -> Outcome {
    let mut rng = StdRng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for p in [2usize, 3, 5] {
        for seed in 0..10u64 {
            let k = rng.random_range(1..=8);
            let sizes: Vec<usize> = (0..p).map(|_| rng.random_range(k..=k + 120)).collect();
            let n: usize = sizes.iter().sum();
            let c = gaussian_matrix(n, k, 100 * p as u64 + seed);
            let y = gaussian_matrix(n, 1, 7);
            let x = gaussian_matrix(n, 1, 8);
            let mut start = 0;
            let mut parts = Vec::new();
            for (i, &len) in sizes.iter().enumerate() {
                let r = start..start + len;
                parts.push(
                    compress_party(&y.row_range(r.clone()), &x.row_range(r.clone()), &c.row_range(r), format!("p{i}"))
                        .map_err(e2s)?,
                );
                start += len;
            }
            let stacked = combine(&parts).map_err(e2s)?.r;
            let pooled = qr_positive(&c).map_err(e2s)?.r;
            worst = worst.max(max_rel_matrix(&stacked, &pooled));
        }
    }
    ensure(worst <= 1e-9, || format!("max entrywise relative error {worst:.3e} > 1e-9"))?;
    Ok(format!("max entrywise rel err {worst:.2e} over 30 configurations"))
}

fn combined_fields_rel(a: &CombinedStats, b: &CombinedStats) -> Result<f64, String> {
    ensure(a.parties == b.parties, || "party lists differ".into())?;
    ensure(a.n == b.n && a.absorbed_dof == b.absorbed_dof, || "counts differ".into())?;
    ensure(a.labels == b.labels, || "labels differ".into())?;
    let mats = [
        (&a.yty, &b.yty),
        (&a.xty, &b.xty),
        (&a.cty, &b.cty),
        (&a.ctx, &b.ctx),
        (&a.r, &b.r),
        (&a.qty, &b.qty),
        (&a.qtx, &b.qtx),
    ];
    let xx = a.xx.iter().zip(&b.xx).map(|(x, y)| rel_err(*x, *y)).fold(0.0, f64::max);
    Ok(mats.iter().map(|(x, y)| max_rel_matrix(x, y)).fold(xx, f64::max))
}

fn combined_bytes(parts: &[PartyCompressed]) -> Result<usize, String> {
    Ok(write_message(&WireMessage::Combined(combine(parts).map_err(e2s)?)).len())
}

fn incremental_merge() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let cfg = SimConfig { n: 2000, m: 50, k: 4, t: 2, parties: 5, seed: 40 + seed, causal_fraction: 0.1 };
        let d = simulate_data(&cfg).map_err(e2s)?;
        let parts = compress_split(&d, &uneven_split(cfg.n, cfg.parties, cfg.k + 1).map_err(e2s)?).map_err(e2s)?;
        let once = combine(&parts).map_err(e2s)?;
        let mut acc = combine(&parts[..1]).map_err(e2s)?;
        for p in &parts[1..] {
            acc = merge_combined(&acc, p).map_err(e2s)?;
        }
        worst = worst.max(combined_fields_rel(&acc, &once)?);
    }
    ensure(worst <= 1e-10, || format!("max field relative error {worst:.3e} > 1e-10"))?;

    // What merge consumes (accumulated stats plus one party) has a size set
    // by (K, M, T) alone.
    let mut sizes = Vec::new();
    for n in [50usize, 5000, 50_000] {
        let d = simulate_data(&SimConfig { n, m: 20, k: 3, t: 1, parties: 2, seed: 5, causal_fraction: 0.0 })
            .map_err(e2s)?;
        let parts = compress_split(&d, &uneven_split(n, 2, 4).map_err(e2s)?).map_err(e2s)?;
        let party = write_message(&WireMessage::Party(parts[1].clone())).len();
        sizes.push((combined_bytes(&parts[..1])?, party));
    }
    ensure(sizes.windows(2).all(|w| w[0] == w[1]), || format!("merge input sizes vary with n: {sizes:?}"))?;
    Ok(format!("max field rel err {worst:.2e}; merge inputs {} + {} bytes for n in 50..50000", sizes[0].0, sizes[0].1))
}

fn secure_fidelity() -> Outcome {
    let cfg = SimConfig { n: 10_000, m: 1000, k: 10, t: 1, parties: 3, seed: 77, causal_fraction: 0.01 };
    let d = simulate_data(&cfg).map_err(e2s)?;
    let parts = compress_split(&d, &uneven_split(cfg.n, cfg.parties, cfg.k + 1).map_err(e2s)?).map_err(e2s)?;
    let roster: Vec<PartyId> = parts.iter().map(|p| p.party_id.clone()).collect();
    let seeds = PairwiseSeeds::generate(&roster, 2024);
    let codec = FixedPointCodec::default();
    let plain = finalize_scan(&combine(&parts).map_err(e2s)?).map_err(e2s)?;
    let mut report = Vec::new();
    for policy in [RPolicy::MaskedGram, RPolicy::PlaintextStack] {
        let cs = secure_combine_parties(&parts, &seeds, 1, policy, codec).map_err(e2s)?;
        let sec = finalize_scan(&cs).map_err(e2s)?;
        let worst = max_rel_valid(&sec, &plain, |r| &r.t_stats)?;
        ensure(worst <= 1e-5, || format!("{policy:?}: max relative t error {worst:.3e} > 1e-5"))?;
        report.push(format!("{policy:?} {worst:.2e}"));
    }

    // Ring sum of masked shares equals the ring sum of the plain encodings.
    let round = SecureRound {
        round_id: 9,
        roster: roster.clone(),
        labels: parts[0].labels.clone(),
        policy: RPolicy::MaskedGram,
        codec,
    };
    let layout = round.layout();
    let mut shares = Vec::new();
    let mut plain_sum = vec![0u64; layout.len()];
    for p in &parts {
        let values = layout.flatten(p).map_err(e2s)?;
        for (s, v) in plain_sum.iter_mut().zip(&values) {
            *s = s.wrapping_add(codec.encode(*v).map_err(e2s)?);
        }
        let peers = seeds.peers_of(&p.party_id, &roster).map_err(e2s)?;
        shares.push(mask(&values, &peers, &p.party_id, round.round_id, &codec).map_err(e2s)?);
    }
    ensure(aggregate_ring(&shares, &roster).map_err(e2s)? == plain_sum, || "masks did not cancel".into())?;
    Ok(format!("max rel t err {}; masks cancel over {} ring elements", report.join(", "), plain_sum.len()))
}

fn message_size_invariance() -> Outcome {
    let (k, m, t) = (3, 5, 1);
    let mut sizes = Vec::new();
    for n in [10usize, 10_000, 1_000_000] {
        let mut c = gaussian_matrix(n, k, n as u64);
        c = DenseMatrix::from_columns(n, &[vec![1.0; n], c.column(1).to_vec(), c.column(2).to_vec()]).map_err(e2s)?;
        let p = compress_party(&gaussian_matrix(n, t, 1), &gaussian_matrix(n, m, 2), &c, "site").map_err(e2s)?;
        sizes.push(write_message(&WireMessage::Party(p)).len());
    }
    ensure(sizes.windows(2).all(|w| w[0] == w[1]), || format!("sizes differ: {sizes:?}"))?;
    Ok(format!("{} bytes for n_p in {{10, 1e4, 1e6}}", sizes[0]))
}

fn time_scan(inputs: &ScanInputs, reps: usize) -> Result<Duration, String> {
    let mut best = Duration::MAX;
    for _ in 0..reps {
        let start = Instant::now();
        let r = scan(inputs, 256, 1).map_err(e2s)?;
        best = best.min(start.elapsed());
        std::hint::black_box(r);
    }
    Ok(best)
}

fn linear_scaling() -> Outcome {
    let n = 10_000;
    let y = gaussian_matrix(n, 1, 1);
    let c = gaussian_matrix(n, 10, 2);
    let x = gaussian_matrix(n, 2000, 3);
    let half = ScanInputs::new(y.clone(), x.column_range(0..1000), c.clone()).map_err(e2s)?;
    let full = ScanInputs::new(y, x, c).map_err(e2s)?;
    time_scan(&half, 1)?;
    let (t1, t2) = (time_scan(&half, 5)?, time_scan(&full, 5)?);
    let ratio = t2.as_secs_f64() / t1.as_secs_f64();
    ensure((1.5..=2.5).contains(&ratio), || format!("M=1000 {t1:.2?}, M=2000 {t2:.2?}, ratio {ratio:.3}"))?;
    Ok(format!("M=1000 {t1:.2?}, M=2000 {t2:.2?}, ratio {ratio:.3}"))
}

fn calibration() -> Outcome {
    let (n, m, k) = (500, 2000, 3);
    let mut c = gaussian_matrix(n, k, 11);
    c = DenseMatrix::from_columns(n, &[vec![1.0; n], c.column(1).to_vec(), c.column(2).to_vec()]).map_err(e2s)?;
    let noise = gaussian_matrix(n, 1, 12);
    let y: Vec<f64> = (0..n).map(|i| 0.5 + 0.3 * c.get(i, 1) - 0.2 * c.get(i, 2) + noise.get(i, 0)).collect();
    let y = DenseMatrix::column_vector(y).map_err(e2s)?;
    let r = scan(&ScanInputs::new(y, gaussian_matrix(n, m, 13), c).map_err(e2s)?, 256, 0).map_err(e2s)?;
    ensure(r.valid.iter().all(|v| *v), || "null scan has invalid entries".into())?;
    let stat = ks_uniform(&r.p_values);
    let p_ks = kolmogorov_sf(stat * (m as f64).sqrt());
    ensure(p_ks > 0.001, || format!("KS D={stat:.4}, p={p_ks:.2e} <= 0.001"))?;

    let mut worst = 0.0f64;
    for df in [1u64, 2, 5, 30, 1000] {
        for i in 0..=16 {
            let t = 0.5 * i as f64;
            let p = t_sf_two_sided(t, df as f64).map_err(e2s)?;
            worst = worst.max((p - quadrature_p(t, df)).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("t tail abs error {worst:.3e} > 1e-9"))?;
    Ok(format!("KS D={stat:.4} (p={p_ks:.3}); t tail max abs err {worst:.2e}"))
}

fn centering_equivalences() -> Outcome {
    let (mut worst_pp, mut worst_gl) = (0.0f64, 0.0f64);
    for seed in 0..5u64 {
        let n = 600;
        let d = SimData {
            y: gaussian_matrix(n, 2, 10 * seed),
            x: gaussian_matrix(n, 40, 10 * seed + 1),
            c: gaussian_matrix(n, 3, 10 * seed + 2),
        };
        let ranges = uneven_split(n, 3, 10).map_err(e2s)?;

        // per-party centering vs one indicator covariate per party
        let mut parts = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for (p, r) in ranges.iter().enumerate() {
            let mut ind = vec![0.0; n];
            ind[r.clone()].iter_mut().for_each(|v| *v = 1.0);
            cols.push(ind);
            parts.push(
                compress_party_centered(
                    &d.y.row_range(r.clone()),
                    &d.x.row_range(r.clone()),
                    &d.c.row_range(r.clone()),
                    PartyId::new(format!("p{p}")),
                    Labels::generic(2, 40, 3),
                )
                .map_err(e2s)?,
            );
        }
        let fed = finalize_scan(&combine(&parts).map_err(e2s)?).map_err(e2s)?;
        cols.extend((0..3).map(|j| d.c.column(j).to_vec()));
        let c_ind = DenseMatrix::from_columns(n, &cols).map_err(e2s)?;
        let reference = scan(&ScanInputs::new(d.y.clone(), d.x.clone(), c_ind).map_err(e2s)?, 64, 1).map_err(e2s)?;
        worst_pp = worst_pp.max(max_rel_valid(&fed, &reference, |r| &r.t_stats)?);

        // global centering vs an intercept covariate
        let pieces = |m: &DenseMatrix| ranges.iter().map(|r| m.row_range(r.clone())).collect::<Vec<_>>();
        let yc = center(&pieces(&d.y), CenteringMode::Global).map_err(e2s)?;
        let xc = center(&pieces(&d.x), CenteringMode::Global).map_err(e2s)?;
        let cc = center(&pieces(&d.c), CenteringMode::Global).map_err(e2s)?;
        let mut parts = Vec::new();
        for p in 0..ranges.len() {
            let mut part = compress_party(&yc[p].data, &xc[p].data, &cc[p].data, format!("p{p}")).map_err(e2s)?;
            // the global mean costs one degree of freedom in total
            part.absorbed_dof = u32::from(p == 0);
            parts.push(part);
        }
        let fed = finalize_scan(&combine(&parts).map_err(e2s)?).map_err(e2s)?;
        let mut cols = vec![vec![1.0; n]];
        cols.extend((0..3).map(|j| d.c.column(j).to_vec()));
        let c_int = DenseMatrix::from_columns(n, &cols).map_err(e2s)?;
        let reference = scan(&ScanInputs::new(d.y.clone(), d.x.clone(), c_int).map_err(e2s)?, 64, 1).map_err(e2s)?;
        worst_gl = worst_gl.max(max_rel_valid(&fed, &reference, |r| &r.t_stats)?);
    }
    ensure(worst_pp <= 1e-8 && worst_gl <= 1e-8, || format!("per-party {worst_pp:.3e}, global {worst_gl:.3e}"))?;
    Ok(format!("max rel t err per-party {worst_pp:.2e}, global {worst_gl:.2e}"))
}

fn pipeline_bytes(threads: usize) -> Result<(String, Vec<Vec<u8>>), String> {
    let cfg = SimConfig { n: 1500, m: 300, k: 4, t: 2, parties: 3, seed: 5, causal_fraction: 0.05 };
    let d = simulate_data(&cfg).map_err(e2s)?;
    let parts = compress_split(&d, &uneven_split(cfg.n, cfg.parties, cfg.k + 1).map_err(e2s)?).map_err(e2s)?;
    let mut messages: Vec<Vec<u8>> = parts.iter().map(|p| write_message(&WireMessage::Party(p.clone()))).collect();
    let cs = combine(&parts).map_err(e2s)?;
    messages.push(write_message(&WireMessage::Combined(cs.clone())));
    let fed = finalize_scan(&cs).map_err(e2s)?;
    messages.push(write_message(&WireMessage::Scan(fed.clone())));
    let roster: Vec<PartyId> = parts.iter().map(|p| p.party_id.clone()).collect();
    let seeds = PairwiseSeeds::generate(&roster, 1);
    let codec = FixedPointCodec::default();
    let round = SecureRound {
        round_id: 3,
        roster: roster.clone(),
        labels: parts[0].labels.clone(),
        policy: RPolicy::MaskedGram,
        codec,
    };
    for p in &parts {
        let share = dash_core::secure::party_share(&round, p, &seeds).map_err(e2s)?;
        messages.push(write_message(&WireMessage::Share(share)));
    }
    let pooled = scan(&ScanInputs::new(d.y, d.x, d.c).map_err(e2s)?, 64, threads).map_err(e2s)?;
    let labels = &parts[0].labels;
    Ok((scan_to_tsv(&fed, labels) + &scan_to_tsv(&pooled, labels), messages))
}

fn determinism() -> Outcome {
    let (text, msgs) = pipeline_bytes(1)?;
    for threads in [1, 4, 0] {
        let (t2, m2) = pipeline_bytes(threads)?;
        ensure(t2 == text, || format!("scan output differs with {threads} threads"))?;
        ensure(m2 == msgs, || "serialized messages differ".into())?;
    }
    let total: usize = msgs.iter().map(Vec::len).sum();
    Ok(format!(
        "{} bytes of scan output and {} messages ({total} bytes) identical over 3 reruns",
        text.len(),
        msgs.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("federated exactness", federated_exactness),
        ("scan equals per-feature OLS", scan_matches_ols),
        ("stacked R equals pooled R", stacked_r_matches_pooled_qr),
        ("incremental merge", incremental_merge),
        ("secure path fidelity", secure_fidelity),
        ("message size invariance", message_size_invariance),
        ("linear scaling in M", linear_scaling),
        ("statistical calibration", calibration),
        ("centering equivalences", centering_equivalences),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS  {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
