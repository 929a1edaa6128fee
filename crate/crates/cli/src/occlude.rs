use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use statenet::data::EegWindow;
use statenet::ensemble::Ensemble;
use statenet::interpret::{occlude_window, OcclusionMode, DEFAULT_OCC_LEN, DEFAULT_STRIDE};
use statenet::models::{Model, Predictor};

use crate::common::{create_dir, default_run_dir, write_json, Cohort};
use crate::plot::heatmap_png;

#[derive(clap::Args)]
#[command(group(clap::ArgGroup::new("model").required(true).args(["ckpt", "bundle"])))]
pub struct Args {
    /// Model checkpoint.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Ensemble bundle manifest.
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Recording id (default: the first recording with a positive window).
    #[arg(long)]
    recording: Option<String>,
    /// Window index within the recording (default: its first positive window).
    #[arg(long)]
    window: Option<usize>,
    /// Occluder length in samples.
    #[arg(long, default_value_t = DEFAULT_OCC_LEN)]
    occ_len: usize,
    /// Occluder stride in samples.
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    stride: usize,
    /// `temporal` or `channel-temporal`.
    #[arg(long, default_value = "temporal")]
    mode: OcclusionMode,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn pick_window(windows: &[EegWindow], recording: Option<&str>, index: Option<usize>) -> Result<EegWindow> {
    let in_rec = |w: &&EegWindow| recording.is_none_or(|r| w.recording_id == r);
    let candidates: Vec<&EegWindow> = windows.iter().filter(in_rec).collect();
    if candidates.is_empty() {
        bail!("no windows for recording {}", recording.unwrap_or("<any>"));
    }
    let chosen = match index {
        Some(i) => {
            let rec = candidates[0].recording_id.clone();
            let same: Vec<&&EegWindow> = candidates.iter().filter(|w| w.recording_id == rec).collect();
            **same.get(i).with_context(|| format!("recording {rec} has {} windows", same.len()))?
        }
        None => candidates.iter().find(|w| w.y == 1).copied().unwrap_or(candidates[0]),
    };
    Ok(chosen.clone())
}

pub fn run(a: Args) -> Result<()> {
    let cohort = Cohort::load(&a.data)?;
    let windows = cohort.windows(&Default::default())?;
    let w = pick_window(&windows, a.recording.as_deref(), a.window)?;
    let (model, source): (Box<dyn Predictor>, PathBuf) = match (&a.ckpt, &a.bundle) {
        (Some(p), _) => (Box::new(Model::load(p).with_context(|| format!("loading {}", p.display()))?), p.clone()),
        (None, Some(b)) => (Box::new(Ensemble::load(b).with_context(|| format!("loading {}", b.display()))?), b.clone()),
        (None, None) => unreachable!("clap enforces a model"),
    };
    let map = occlude_window(model.as_ref(), &w, a.occ_len, a.stride, a.mode)?;
    let out = a.out.unwrap_or_else(|| default_run_dir(&format!("occlusion-{}-{}", w.recording_id, w.offset_s as u64)));
    create_dir(&out)?;
    let names = cohort.montage.channels.clone();
    fs::write(out.join("occlusion.csv"), map.to_csv(Some(&names)))?;
    write_json(
        &out.join("occlusion.json"),
        &serde_json::json!({
            "model": source,
            "occ_len": a.occ_len,
            "stride": a.stride,
            "events_s": w.events,
            "summary": map.summary(),
        }),
    )?;
    let png = out.join("occlusion.png");
    heatmap_png(&map.heat, &png)?;
    println!("{}", out.join("occlusion.csv").display());
    Ok(())
}
