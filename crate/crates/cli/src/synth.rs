use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use statenet::data::{save_cohort, synth_cohort, window_cohort, Montage, SynthConfig, WindowConfig};

use crate::common::{default_run_dir, read_config};

#[derive(clap::Args)]
pub struct Args {
    /// Output directory (default `$STATENET_RUNS_DIR/cohort`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with generator settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    neonates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `18` or `3`.
    #[arg(long)]
    montage: Option<String>,
    #[arg(long)]
    minutes: Option<f64>,
    /// Seizures per hour.
    #[arg(long)]
    seizure_rate: Option<f64>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

fn is_nonempty_dir(p: &Path) -> bool {
    fs::read_dir(p).is_ok_and(|mut d| d.next().is_some())
}

pub fn run(a: Args) -> Result<()> {
    let mut cfg: SynthConfig = read_config(a.config.as_deref())?;
    if let Some(v) = a.neonates {
        cfg.n_neonates = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(m) = &a.montage {
        cfg.montage = Montage::preset(m)?;
    }
    if let Some(v) = a.minutes {
        cfg.minutes_per_neonate = v;
    }
    if let Some(v) = a.seizure_rate {
        cfg.seizure_rate = v;
    }
    cfg.validate()?;
    let out = a.out.unwrap_or_else(|| default_run_dir("cohort"));
    if is_nonempty_dir(&out) {
        if !a.force {
            bail!("{} exists and is not empty; pass --force to overwrite", out.display());
        }
        fs::remove_dir_all(&out)?;
    }
    let recs = synth_cohort(&cfg)?;
    save_cohort(&out, "synthetic", &recs, Some(&cfg))?;
    let windows = window_cohort(&recs, &WindowConfig::default())?;
    let pos = windows.iter().filter(|w| w.y == 1).count();
    let hours: f64 = recs.iter().map(|r| r.duration_s()).sum::<f64>() / 3600.0;
    let prevalence = if windows.is_empty() { 0.0 } else { pos as f64 / windows.len() as f64 };
    println!(
        "cohort: {} neonates, {hours:.2} h, montage {} ({} channels), {} windows, {pos} positive, prevalence {prevalence:.4}",
        recs.len(),
        cfg.montage.name,
        cfg.montage.len(),
        windows.len()
    );
    println!("manifest: {}", out.join("manifest.json").display());
    Ok(())
}
