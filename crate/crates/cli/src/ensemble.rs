use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use statenet::data::{patient_folds, EegWindow, FoldSplit, WindowConfig};
use statenet::diff::checkpoint::digest;
use statenet::ensemble::{Ensemble, GateConfig};
use statenet::eval::{config_hash, fold_data, score_fold, FoldMetrics, MetricReport};
use statenet::models::{Arch, Model};
use statenet::training::{fit, TrainConfig};

use crate::common::{create_dir, default_run_dir, read_config, read_json, write_json, Cohort};
use crate::train::{model_config, RunConfig, FOLDS_FILE};

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated members: `arch`, `arch:seed`, or `@RUN_DIR` to reuse
    /// the fold checkpoints of a `train` run.
    #[arg(long, value_delimiter = ',')]
    members: Vec<String>,
    #[arg(long)]
    montage: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    /// Only run this fold (1-based).
    #[arg(long)]
    fold: Option<usize>,
    /// Seeds the fold split, validation pick and gate initialisation.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    val_neonates: Option<usize>,
    /// Epochs for freshly trained members and for the gate.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EnsembleFile {
    data: Option<PathBuf>,
    members: Option<Vec<String>>,
    montage: Option<String>,
    folds: Option<usize>,
    seed: Option<u64>,
    val_neonates: Option<usize>,
    window: Option<WindowConfig>,
    /// Per-architecture model fields, keyed by `statenet`, `gru`, `tcn`.
    models: BTreeMap<String, serde_json::Map<String, serde_json::Value>>,
    /// Training settings for freshly trained members (seed comes from the tag).
    train: Option<TrainConfig>,
    gate: Option<GateConfig>,
    gate_train: Option<TrainConfig>,
}

#[derive(Debug, Clone, Serialize)]
struct Resolved {
    data: PathBuf,
    members: Vec<String>,
    montage: String,
    folds: usize,
    seed: u64,
    val_neonates: usize,
    window: WindowConfig,
    models: BTreeMap<String, serde_json::Map<String, serde_json::Value>>,
    train: TrainConfig,
    gate: GateConfig,
    gate_train: TrainConfig,
}

enum Member {
    Fresh { arch: Arch, seed: u64 },
    Reuse { run: PathBuf, cfg: RunConfig },
}

impl Member {
    fn tag(&self) -> String {
        match self {
            Member::Fresh { arch, seed } => format!("{arch}:{seed}"),
            Member::Reuse { cfg, .. } => format!("{}:{}", cfg.model.arch(), cfg.seed),
        }
    }
}

fn parse_member(token: &str, default_seed: u64) -> Result<Member> {
    if let Some(run) = token.strip_prefix('@') {
        let run = PathBuf::from(run);
        let cfg = RunConfig::load(&run)?;
        return Ok(Member::Reuse { run, cfg });
    }
    let (arch, seed) = match token.split_once(':') {
        Some((a, s)) => (a, s.parse().with_context(|| format!("bad seed in member `{token}`"))?),
        None => (token, default_seed),
    };
    Ok(Member::Fresh { arch: arch.parse()?, seed })
}

fn file_name(tag: &str) -> String {
    tag.replace(':', "-")
}

pub fn run(a: Args) -> Result<()> {
    let file: EnsembleFile = read_config(a.config.as_deref())?;
    let Some(data) = a.data.clone().or(file.data.clone()) else {
        bail!("--data is required");
    };
    let mut train = file.train.clone().unwrap_or_default();
    let mut gate_train = file.gate_train.clone().unwrap_or_default();
    if let Some(e) = a.epochs {
        train.max_epochs = e;
        gate_train.max_epochs = e;
    }
    let seed = a.seed.or(file.seed).unwrap_or(1);
    gate_train.seed = seed;
    let cfg = Resolved {
        data,
        members: if a.members.is_empty() {
            file.members.clone().unwrap_or_else(|| ["gru", "tcn", "statenet:1", "statenet:2"].map(String::from).to_vec())
        } else {
            a.members.clone()
        },
        montage: a.montage.clone().or(file.montage.clone()).unwrap_or_else(|| "18".into()),
        folds: a.folds.or(file.folds).unwrap_or(4),
        seed,
        val_neonates: a.val_neonates.or(file.val_neonates).unwrap_or(2),
        window: file.window.unwrap_or_default(),
        models: file.models.clone(),
        train,
        gate: file.gate.clone().unwrap_or_default(),
        gate_train,
    };
    cfg.train.validate()?;
    cfg.gate_train.validate()?;
    cfg.gate.validate()?;
    let members = cfg.members.iter().map(|t| parse_member(t, seed)).collect::<Result<Vec<_>>>()?;
    if members.is_empty() {
        bail!("at least one member is required");
    }
    let tags: Vec<String> = members.iter().map(Member::tag).collect();
    if let Some(dup) = tags.iter().enumerate().find(|(i, t)| tags[..*i].contains(t)) {
        bail!("member `{}` is listed twice", dup.1);
    }

    let cohort = Cohort::load(&cfg.data)?;
    cohort.expect_montage(&cfg.montage)?;
    let windows = cohort.windows(&cfg.window)?;
    let split = patient_folds(&cohort.neonates(), cfg.folds, cfg.seed)?;
    for m in &members {
        if let Member::Reuse { run, .. } = m {
            let theirs: FoldSplit = read_json(&run.join(FOLDS_FILE))?;
            if theirs != split {
                bail!("{} was trained on a different fold split; use the same --folds/--seed and cohort", run.display());
            }
        }
    }
    let out = a.out.clone().unwrap_or_else(|| default_run_dir(&format!("ensemble-m{}-s{seed}", cohort.montage.len())));
    create_dir(&out)?;
    let hash = config_hash(&cfg);
    write_json(&out.join("config.json"), &serde_json::json!({"resolved": cfg, "config_hash": hash}))?;
    write_json(&out.join(FOLDS_FILE), &split)?;

    let folds: Vec<usize> = match a.fold {
        Some(f) if (1..=cfg.folds).contains(&f) => vec![f - 1],
        Some(f) => bail!("--fold {f} is outside 1..={}", cfg.folds),
        None => (0..cfg.folds).collect(),
    };
    let mut moe_rows = Vec::new();
    let mut member_rows: Vec<Vec<FoldMetrics>> = vec![Vec::new(); members.len()];
    let mut weights_csv = format!("neonate_id,fold,{}\n", tags.join(","));
    let mut bundles = Vec::new();
    for f in folds {
        let fd = fold_data(&windows, &split, f, cfg.val_neonates, cfg.seed)?;
        let dir = out.join(format!("fold{}", fd.fold));
        create_dir(&dir)?;
        let mut models = Vec::new();
        let mut paths = Vec::new();
        for (m, tag) in members.iter().zip(&tags) {
            let (model, path) = match m {
                Member::Fresh { arch, seed } => {
                    let mc = model_config(*arch, cfg.models.get(&arch.to_string()), None, None)?;
                    log::info!("fold {}: training member {tag}", fd.fold);
                    let tc = TrainConfig { seed: *seed, ..cfg.train.clone() };
                    let mut fitted = fit(&mc, &fd.train, &fd.val, &tc)?.best;
                    fitted.montage = Some(cohort.montage.clone());
                    let path = dir.join(format!("{}.ckpt", file_name(tag)));
                    fitted.save(&path)?;
                    (fitted, path)
                }
                Member::Reuse { run, .. } => {
                    let path = run.join(format!("fold{}", fd.fold)).join("best.ckpt");
                    (Model::load(&path).with_context(|| format!("loading {}", path.display()))?, fs::canonicalize(&path)?)
                }
            };
            models.push(model);
            paths.push(path);
        }
        let before: Vec<String> = paths.iter().map(|p| fs::read(p).map(|b| digest(&b))).collect::<std::io::Result<_>>()?;
        let mut ens = Ensemble::new(models, tags.clone(), cfg.gate.clone(), cfg.seed)?;
        log::info!("fold {}: training gate over {} members", fd.fold, ens.k());
        // members never stepped on the validation neonates, so the gate sees
        // their held-out behaviour; the same windows pick the best gate epoch
        let gate_fit = ens.train_gate(&fd.val, &fd.val, &cfg.gate_train)?;
        let after: Vec<String> = paths.iter().map(|p| fs::read(p).map(|b| digest(&b))).collect::<std::io::Result<_>>()?;
        let in_memory: Vec<String> = ens.members.iter().map(|m| digest(&m.to_bytes())).collect();
        if before != after || before != in_memory {
            bail!("fold {}: a base checkpoint changed during gate training", fd.fold);
        }
        let rel: Vec<PathBuf> = paths.iter().map(|p| relative_to(p, &dir)).collect();
        bundles.push(ens.save(&dir, Some(&rel))?);
        fs::write(dir.join("gate_history.csv"), statenet::training::history_csv(&gate_fit.history))?;

        let test: Vec<EegWindow> = fd.test(&windows).into_iter().cloned().collect();
        moe_rows.push(score_fold(&ens, &test, fd.fold, &cohort.montage.name)?.0);
        for (i, m) in ens.members.iter().enumerate() {
            member_rows[i].push(score_fold(m, &test, fd.fold, &cohort.montage.name)?.0);
        }
        for (id, w) in ens.mean_weights_by_neonate(&test)? {
            let cells: Vec<String> = w.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(weights_csv, "{id},{},{}", fd.fold, cells.join(","));
        }
    }
    let meta = serde_json::json!({"members": tags, "bundles": bundles, "config_hash": hash});
    let report = MetricReport::new("ensemble", "moe", moe_rows, meta);
    let csv = report.write(&out, "ensemble_report")?;
    let mut members_csv = String::new();
    for (tag, rows) in tags.iter().zip(member_rows) {
        let r = MetricReport::new("member", tag, rows, serde_json::Value::Null);
        let text = r.to_csv();
        let skip = usize::from(!members_csv.is_empty());
        for line in text.lines().skip(skip) {
            members_csv.push_str(line);
            members_csv.push('\n');
        }
    }
    fs::write(out.join("members_report.csv"), members_csv)?;
    let wpath = out.join("ensemble_weights.csv");
    fs::write(&wpath, weights_csv)?;
    for b in &bundles {
        println!("bundle: {}", b.display());
    }
    println!("weights: {}", wpath.display());
    println!("{}", csv.display());
    Ok(())
}

/// `path` relative to `base` when it lies inside it, else unchanged.
fn relative_to(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}
