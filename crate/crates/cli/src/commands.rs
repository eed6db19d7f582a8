use std::fs;
use std::io::Write as _;
use std::path::Path;

use dash_core::dataset::{dataset_to_tsv, load_dataset, regression_to_tsv, scan_to_tsv, PartyDataset, Schema};
use dash_core::federate::{compress_party_centered, compress_party_labeled, Labels};
use dash_core::simulate::{run_simulation, simulate_data, uneven_split, SimConfig};
use dash_core::wire::{read_message_file, write_atomic, write_message_file, WireMessage};
use dash_core::{
    combine, finalize_scan, merge_combined, regress, scan, DashError, FixedPointCodec, PairwiseSeeds, PartyCompressed,
    PartyId, RPolicy, Result, ScanInputs,
};

use crate::args::*;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Regress(a) => regress_cmd(a),
        Command::Scan(a) => scan_cmd(a),
        Command::Compress(a) => compress_cmd(a),
        Command::Combine(a) => combine_cmd(a),
        Command::Finalize(a) => finalize_cmd(a),
        Command::Merge(a) => merge_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
    }
}

fn schema(data: &DataArgs, responses: Vec<String>, features: Option<Vec<String>>) -> Schema {
    Schema {
        sample_id: data.sample_id.clone(),
        responses,
        features,
        covariates: data.covariates.clone(),
        intercept: data.intercept,
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            std::io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn regress_cmd(a: RegressArgs) -> Result<()> {
    let s = schema(&a.data, vec![a.response.clone()], Some(Vec::new()));
    let d = load_dataset(&a.data.data, &s)?;
    let result = regress(&d.responses, &d.covariates)?;
    emit(a.out.as_deref(), &regression_to_tsv(&result, &d.labels.covariates))
}

fn scan_cmd(a: ScanArgs) -> Result<()> {
    let s = schema(&a.data, a.columns.responses, a.columns.features);
    let d = load_dataset(&a.data.data, &s)?;
    let inputs = ScanInputs::new(d.responses, d.features, d.covariates)?;
    let result = scan(&inputs, a.block_size, a.threads)?;
    emit(a.out.as_deref(), &scan_to_tsv(&result, &d.labels))
}

fn compress_cmd(a: CompressArgs) -> Result<()> {
    if a.center.is_some() && a.data.intercept {
        return Err(DashError::InvalidArgument(
            "--intercept cannot be combined with --center: a centered intercept is all zeros".into(),
        ));
    }
    let s = schema(&a.data, a.columns.responses, a.columns.features);
    let d = load_dataset(&a.data.data, &s)?;
    let id = match a.party_id {
        Some(id) => PartyId::new(id),
        None => PartyId::new(
            a.data
                .data
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| DashError::InvalidArgument("cannot derive a party id; pass --party-id".into()))?,
        ),
    };
    let part = match a.center {
        Some(CenterArg::PerParty) => compress_party_centered(&d.responses, &d.features, &d.covariates, id, d.labels)?,
        None => compress_party_labeled(&d.responses, &d.features, &d.covariates, id, d.labels)?,
    };
    write_message_file(&a.out, &WireMessage::Party(part))
}

fn read_party(path: &Path) -> Result<PartyCompressed> {
    match read_message_file(path)? {
        WireMessage::Party(p) => Ok(p),
        other => Err(DashError::Protocol(format!(
            "{}: expected a compressed party message, found {:?}",
            path.display(),
            other.kind()
        ))),
    }
}

fn read_combined(path: &Path) -> Result<dash_core::CombinedStats> {
    match read_message_file(path)? {
        WireMessage::Combined(c) => Ok(c),
        other => Err(DashError::Protocol(format!(
            "{}: expected combined statistics, found {:?}",
            path.display(),
            other.kind()
        ))),
    }
}

fn combine_cmd(a: CombineArgs) -> Result<()> {
    let parts = a.inputs.iter().map(|p| read_party(p)).collect::<Result<Vec<_>>>()?;
    let combined = if a.secure {
        let seeds_path = a.seeds.as_ref().ok_or_else(|| DashError::InvalidArgument("--secure needs --seeds".into()))?;
        let seeds = PairwiseSeeds::parse_tsv(&fs::read_to_string(seeds_path)?)?;
        let policy = match a.policy {
            PolicyArg::MaskedGram => RPolicy::MaskedGram,
            PolicyArg::PlaintextStack => RPolicy::PlaintextStack,
        };
        let codec = FixedPointCodec::new(a.fractional_bits)?;
        dash_core::secure::secure_combine_parties(&parts, &seeds, a.round, policy, codec)?
    } else {
        combine(&parts)?
    };
    write_message_file(&a.out, &WireMessage::Combined(combined))
}

fn finalize_cmd(a: FinalizeArgs) -> Result<()> {
    let cs = read_combined(&a.input)?;
    let result = finalize_scan(&cs)?;
    emit(a.out.as_deref(), &scan_to_tsv(&result, &cs.labels))
}

fn merge_cmd(a: MergeArgs) -> Result<()> {
    let cs = read_combined(&a.combined)?;
    let part = read_party(&a.input)?;
    write_message_file(&a.out, &WireMessage::Combined(merge_combined(&cs, &part)?))
}

fn simulate_cmd(a: SimulateArgs) -> Result<()> {
    let cfg = SimConfig {
        n: a.samples,
        m: a.features,
        k: a.covariates,
        t: a.responses,
        parties: a.parties,
        seed: a.seed,
        ..SimConfig::default()
    };
    if let Some(dir) = &a.write_parties {
        write_parties(&cfg, dir)?;
    }
    let rep = run_simulation(&cfg, a.secure)?;
    let mut out = format!(
        "parties={} samples={} features={} covariates={} responses={} seed={}\n",
        cfg.parties, cfg.n, cfg.m, cfg.k, cfg.t, cfg.seed
    );
    let line = |name: &str, d: &dash_core::simulate::Discrepancy| {
        format!(
            "{name}\tmax_abs_dt={:.3e}\tmax_rel={:.3e}\tvalidity_mismatches={}\n",
            d.max_abs_t, d.max_rel, d.validity_mismatches
        )
    };
    out.push_str(&line("federated", &rep.federated));
    if let Some(s) = &rep.secure {
        out.push_str(&line("secure", s));
    }
    emit(None, &out)
}

/// Pooled and per-party TSVs with columns `sample_id, y*, x*, c*` (c0 is
/// the intercept).
fn write_parties(cfg: &SimConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let data = simulate_data(cfg)?;
    let labels = Labels::generic(cfg.t, cfg.m, cfg.k);
    let pooled = PartyDataset {
        sample_ids: (0..cfg.n).map(|i| format!("s{i}")).collect(),
        labels,
        responses: data.y,
        features: data.x,
        covariates: data.c,
    };
    write_atomic(&dir.join("pooled.tsv"), dataset_to_tsv(&pooled).as_bytes())?;
    for (p, r) in uneven_split(cfg.n, cfg.parties, cfg.k + 1)?.into_iter().enumerate() {
        let part = PartyDataset {
            sample_ids: pooled.sample_ids[r.clone()].to_vec(),
            labels: pooled.labels.clone(),
            responses: pooled.responses.row_range(r.clone()),
            features: pooled.features.row_range(r.clone()),
            covariates: pooled.covariates.row_range(r),
        };
        write_atomic(&dir.join(format!("party{p}.tsv")), dataset_to_tsv(&part).as_bytes())?;
    }
    Ok(())
}
