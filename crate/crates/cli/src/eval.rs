use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use statenet::data::{EegWindow, FoldSplit};
use statenet::eval::{score_fold, MetricReport};
use statenet::models::Model;

use crate::common::{read_json, write_json, Cohort};
use crate::train::{RunConfig, FOLDS_FILE};

#[derive(clap::Args)]
pub struct Args {
    /// Training run directory.
    #[arg(long)]
    run: PathBuf,
    /// Cohort to score (default: the one the run was trained on).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint name inside each fold directory.
    #[arg(long, default_value = "best.ckpt")]
    ckpt: String,
    /// Report directory (default: the run directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(a: Args) -> Result<()> {
    let cfg = RunConfig::load(&a.run)?;
    let split: FoldSplit = read_json(&a.run.join(FOLDS_FILE))?;
    let cohort = Cohort::load(a.data.as_deref().unwrap_or(&cfg.data))?;
    cohort.expect_montage(&cfg.montage).context("eval scores the training montage; use `transfer` for another one")?;
    let windows = cohort.windows(&cfg.window)?;
    let mut rows = Vec::new();
    let mut scores = Vec::new();
    for (f, fold) in split.folds.iter().enumerate() {
        let path = a.run.join(format!("fold{}", f + 1)).join(&a.ckpt);
        let model = Model::load(&path).with_context(|| format!("loading {}", path.display()))?;
        if model.arch() != cfg.model.arch() {
            bail!("{} holds a {} model, the run config says {}", path.display(), model.arch(), cfg.model.arch());
        }
        let test: Vec<EegWindow> = windows.iter().filter(|w| fold.test.contains(&w.neonate_id)).cloned().collect();
        let (m, s) = score_fold(&model, &test, f + 1, &cohort.montage.name)?;
        scores.push(serde_json::json!({
            "fold": f + 1,
            "windows": test.iter().zip(&s).map(|(w, p)| serde_json::json!({
                "neonate_id": w.neonate_id, "recording_id": w.recording_id, "offset_s": w.offset_s, "label": w.y, "score": p,
            })).collect::<Vec<_>>(),
        }));
        rows.push(m);
    }
    let meta = serde_json::json!({"run": a.run, "checkpoint": a.ckpt, "config_hash": cfg.config_hash});
    let report = MetricReport::new("evaluation", &cfg.model.arch().to_string(), rows, meta);
    let out = a.out.unwrap_or_else(|| a.run.clone());
    let csv = report.write(&out, "eval_report")?;
    write_json(&out.join("eval_scores.json"), &scores)?;
    if report.mean_auroc.is_none() || report.mean_auprc.is_none() {
        log::warn!("metrics undefined on every fold; see {}", csv.display());
    }
    println!("{}", csv.display());
    Ok(())
}
