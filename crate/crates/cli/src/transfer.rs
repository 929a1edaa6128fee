use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use statenet::data::{Fold, FoldSplit};
use statenet::eval::transfer_eval;
use statenet::models::Model;

use crate::common::{default_run_dir, file_digest, read_json, Cohort};
use crate::train::{RunConfig, FOLDS_FILE};

#[derive(clap::Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["run", "ckpt"])))]
pub struct Args {
    /// Training run whose per-fold checkpoints are scored on their own test neonates.
    #[arg(long)]
    run: Option<PathBuf>,
    /// A single checkpoint, scored on every neonate it was not trained on.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Target montage (`18` or `3`).
    #[arg(long)]
    to_montage: String,
    /// Cohort recorded with the target montage.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(a: Args) -> Result<()> {
    let cohort = Cohort::load(&a.data)?;
    cohort.expect_montage(&a.to_montage)?;
    let (paths, split, window, default_out) = match (&a.run, &a.ckpt) {
        (Some(run), _) => {
            let cfg = RunConfig::load(run)?;
            let split: FoldSplit = read_json(&run.join(FOLDS_FILE))?;
            let paths: Vec<PathBuf> = (1..=split.folds.len()).map(|f| run.join(format!("fold{f}")).join("best.ckpt")).collect();
            (paths, split, cfg.window, run.join(format!("transfer-m{}", cohort.montage.len())))
        }
        (None, Some(ckpt)) => {
            let model = Model::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let test: Vec<String> = cohort.neonates().into_iter().filter(|n| !model.train_neonates.contains(n)).collect();
            if test.is_empty() {
                bail!("every neonate in the cohort was used to train {}", ckpt.display());
            }
            let split = FoldSplit {
                folds: vec![Fold {
                    train: model.train_neonates.clone(),
                    test,
                }],
            };
            (vec![ckpt.clone()], split, Default::default(), default_run_dir(&format!("transfer-m{}", cohort.montage.len())))
        }
        (None, None) => unreachable!("clap enforces a source"),
    };
    let before = paths.iter().map(|p| file_digest(p)).collect::<Result<Vec<_>>>()?;
    let models = paths
        .iter()
        .map(|p| Model::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    for m in &models {
        m.ensure_transferable()
            .context("gru and tcn bind the channel count at initialisation; retrain them on the target montage instead")?;
    }
    let windows = cohort.windows(&window)?;
    let mut report = transfer_eval(&models, &split, &windows, &cohort.montage)?;
    let after = paths.iter().map(|p| file_digest(p)).collect::<Result<Vec<_>>>()?;
    if before != after {
        bail!("a checkpoint changed on disk during transfer evaluation");
    }
    if let Some(meta) = report.meta.as_object_mut() {
        meta.insert("checkpoints".into(), serde_json::to_value(&paths)?);
        meta.insert("file_sha256".into(), serde_json::to_value(&after)?);
    }
    let out = a.out.unwrap_or(default_out);
    let csv = report.write(&out, "transfer_report")?;
    println!("{}", csv.display());
    Ok(())
}
