use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use statenet::data::{patient_folds, FoldSplit, WindowConfig};
use statenet::eval::{config_hash, cross_validate_par, CvOutcome};
use statenet::models::{Arch, ModelConfig};
use statenet::training::{write_run_dir, TrainConfig};

use crate::common::{create_dir, default_run_dir, read_config, write_json, Cohort};

pub const RUN_CONFIG: &str = "config.json";
pub const FOLDS_FILE: &str = "folds.json";

#[derive(clap::Args)]
pub struct Args {
    /// Cohort directory or manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<Arch>,
    /// Expected montage of the cohort (`18` or `3`).
    #[arg(long)]
    pub montage: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Seeds the fold split, validation pick, initialisation and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training neonates per fold held out for early stopping.
    #[arg(long)]
    pub val_neonates: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub pos_weight: Option<f64>,
    /// Temporal/recurrent feature width.
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Number of dilated conv layers (statenet, tcn).
    #[arg(long)]
    pub tcn_layers: Option<usize>,
    /// Train folds on separate threads.
    #[arg(long)]
    pub parallel_folds: bool,
    /// JSON run config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory (default `$STATENET_RUNS_DIR/<arch>-m<montage>-s<seed>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Optional settings accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainFile {
    pub data: Option<PathBuf>,
    pub arch: Option<Arch>,
    pub montage: Option<String>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub val_neonates: Option<usize>,
    pub window: Option<WindowConfig>,
    /// Architecture fields without the `arch` tag.
    pub model: Option<serde_json::Map<String, serde_json::Value>>,
    pub train: Option<TrainConfig>,
}

/// Everything a training run depends on; written as `config.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    pub montage: String,
    pub folds: usize,
    pub seed: u64,
    pub val_neonates: usize,
    pub window: WindowConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub config_hash: String,
}

impl RunConfig {
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.config_hash.clear();
        config_hash(&c)
    }

    pub fn load(run: &Path) -> Result<Self> {
        crate::common::read_json(&run.join(RUN_CONFIG))
    }
}

/// Builds the model config for `arch` from defaults, file fields and flags.
pub fn model_config(
    arch: Arch,
    fields: Option<&serde_json::Map<String, serde_json::Value>>,
    hidden_dim: Option<usize>,
    tcn_layers: Option<usize>,
) -> Result<ModelConfig> {
    let mut v = serde_json::to_value(ModelConfig::default_for(arch))?;
    let obj = v.as_object_mut().expect("model config is an object");
    if let Some(fields) = fields {
        for (k, x) in fields {
            if k == "arch" {
                bail!("`arch` belongs at the top level of the config, not inside `model`");
            }
            obj.insert(k.clone(), x.clone());
        }
    }
    if let Some(d) = hidden_dim {
        obj.insert("hidden_dim".into(), d.into());
    }
    if let Some(l) = tcn_layers {
        let key = match arch {
            Arch::Statenet => "tcn_layers",
            Arch::Tcn => "layers",
            Arch::Gru => bail!("--tcn-layers does not apply to gru"),
        };
        obj.insert(key.into(), l.into());
    }
    serde_json::from_value(v).context("invalid model settings")
}

pub fn resolve(a: &Args) -> Result<RunConfig> {
    let file: TrainFile = read_config(a.config.as_deref())?;
    let arch = a.arch.or(file.arch).unwrap_or(Arch::Statenet);
    let Some(data) = a.data.clone().or(file.data) else {
        bail!("--data is required");
    };
    let mut train = file.train.unwrap_or_default();
    let seed = a.seed.or(file.seed).unwrap_or(train.seed);
    train.seed = seed;
    if let Some(v) = a.epochs {
        train.max_epochs = v;
    }
    if let Some(v) = a.lr {
        train.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = a.patience {
        train.patience = v;
    }
    if let Some(v) = a.lambda {
        train.lambda = v;
    }
    if let Some(v) = a.pos_weight {
        train.pos_weight = v;
    }
    train.validate()?;
    let mut cfg = RunConfig {
        data,
        montage: a.montage.clone().or(file.montage).unwrap_or_else(|| "18".into()),
        folds: a.folds.or(file.folds).unwrap_or(4),
        seed,
        val_neonates: a.val_neonates.or(file.val_neonates).unwrap_or(2),
        window: file.window.unwrap_or_default(),
        model: model_config(arch, file.model.as_ref(), a.hidden_dim, a.tcn_layers)?,
        train,
        config_hash: String::new(),
    };
    cfg.config_hash = cfg.hash();
    Ok(cfg)
}

/// Writes the per-fold run directories, `folds.json`, the fold test scores
/// and the cross-validation report; returns the report CSV path.
pub fn write_outcome(out: &Path, cfg: &RunConfig, split: &FoldSplit, cv: &CvOutcome) -> Result<PathBuf> {
    write_json(&out.join(FOLDS_FILE), split)?;
    let resolved = serde_json::to_value(cfg)?;
    for r in &cv.runs {
        let dir = out.join(format!("fold{}", r.fold));
        write_run_dir(&dir, &resolved, &r.fit)?;
        write_json(
            &dir.join("split.json"),
            &serde_json::json!({"test": r.test_neonates, "val": r.val_neonates, "best_epoch": r.fit.best_epoch}),
        )?;
    }
    Ok(cv.report.write(out, "cv_report")?)
}

pub fn run(a: Args) -> Result<()> {
    let cfg = resolve(&a)?;
    let cohort = Cohort::load(&cfg.data)?;
    cohort.expect_montage(&cfg.montage)?;
    let windows = cohort.windows(&cfg.window)?;
    let split = patient_folds(&cohort.neonates(), cfg.folds, cfg.seed)?;
    let out = a.out.clone().unwrap_or_else(|| {
        default_run_dir(&format!("{}-m{}-s{}", cfg.model.arch(), cohort.montage.len(), cfg.seed))
    });
    create_dir(&out)?;
    write_json(&out.join(RUN_CONFIG), &cfg)?;
    log::info!("run {} ({} windows, {} folds)", out.display(), windows.len(), cfg.folds);
    let cv = cross_validate_par(
        &cfg.model,
        &windows,
        &cohort.montage,
        &split,
        &cfg.train,
        cfg.val_neonates,
        a.parallel_folds,
    )?;
    let csv = write_outcome(&out, &cfg, &split, &cv)?;
    println!("{}", csv.display());
    Ok(())
}
