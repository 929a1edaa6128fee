//! Metrics, patient-wise cross-validation and montage-transfer evaluation.

pub mod metrics;
pub mod report;

pub use metrics::{auprc, auroc};
pub use report::{config_hash, FoldMetrics, MetricReport};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{assert_no_leakage, EegWindow, FoldSplit, Montage};
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig, Predictor};
use crate::training::{fit, FitOutput, TrainConfig};

/// Scores `model` on `windows` and summarises them as one fold row.
pub fn score_fold(
    model: &dyn Predictor,
    windows: &[EegWindow],
    fold: usize,
    montage: &str,
) -> Result<(FoldMetrics, Vec<f64>)> {
    let scores = windows
        .iter()
        .map(|w| model.predict(&crate::models::window_tensor(w)))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<u8> = windows.iter().map(|w| w.y).collect();
    Ok((FoldMetrics::from_scores(fold, montage, &scores, &labels), scores))
}

#[derive(Debug, Clone)]
pub struct FoldRun {
    pub fold: usize,
    pub test_neonates: Vec<String>,
    pub val_neonates: Vec<String>,
    /// Indices into the windows passed to [`cross_validate`].
    pub test_idx: Vec<usize>,
    pub test_scores: Vec<f64>,
    pub fit: FitOutput,
    pub metrics: FoldMetrics,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub runs: Vec<FoldRun>,
    pub report: MetricReport,
}

/// One fold's windows: training neonates minus a seeded validation subset,
/// and the indices of the test neonates' windows.
#[derive(Debug, Clone)]
pub struct FoldData {
    /// 1-based.
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub train: Vec<EegWindow>,
    pub val: Vec<EegWindow>,
    pub test_idx: Vec<usize>,
}

impl FoldData {
    pub fn test<'a>(&self, windows: &'a [EegWindow]) -> Vec<&'a EegWindow> {
        self.test_idx.iter().map(|&i| &windows[i]).collect()
    }
}

/// Partitions fold `index` (0-based) of `split`. The validation neonates are
/// drawn from the training neonates with a generator seeded by `seed`, so
/// every model trained with the same `seed` sees the same partition.
pub fn fold_data(windows: &[EegWindow], split: &FoldSplit, index: usize, val_neonates: usize, seed: u64) -> Result<FoldData> {
    let fold = split
        .folds
        .get(index)
        .ok_or_else(|| Error::invalid(format!("fold {} out of range", index + 1)))?;
    let fold_id = index + 1;
    let mut train_ids = fold.train.clone();
    if val_neonates >= train_ids.len() {
        return Err(Error::invalid("val_neonates leaves no training neonates"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(100 + fold_id as u64);
    train_ids.shuffle(&mut rng);
    let mut val_ids = train_ids.split_off(train_ids.len() - val_neonates);
    val_ids.sort();
    train_ids.sort();
    let pick = |ids: &[String]| -> Vec<usize> { (0..windows.len()).filter(|&i| ids.contains(&windows[i].neonate_id)).collect() };
    let train: Vec<EegWindow> = pick(&train_ids).into_iter().map(|i| windows[i].clone()).collect();
    let val: Vec<EegWindow> = pick(&val_ids).into_iter().map(|i| windows[i].clone()).collect();
    assert_no_leakage(&train, &fold.test)?;
    assert_no_leakage(&val, &fold.test)?;
    Ok(FoldData {
        fold: fold_id,
        train_ids,
        val_ids,
        test_ids: fold.test.clone(),
        train,
        val,
        test_idx: pick(&fold.test),
    })
}

/// Trains one model per fold on the fold's training neonates (minus
/// `val_neonates` held out for early stopping) and scores its test neonates.
pub fn cross_validate(
    config: &ModelConfig,
    windows: &[EegWindow],
    montage: &Montage,
    split: &FoldSplit,
    cfg: &TrainConfig,
    val_neonates: usize,
) -> Result<CvOutcome> {
    cross_validate_par(config, windows, montage, split, cfg, val_neonates, false)
}

fn run_fold(
    config: &ModelConfig,
    windows: &[EegWindow],
    montage: &Montage,
    fd: FoldData,
    cfg: &TrainConfig,
) -> Result<FoldRun> {
    log::info!(
        "fold {}: {} train / {} val / {} test windows",
        fd.fold,
        fd.train.len(),
        fd.val.len(),
        fd.test_idx.len()
    );
    let mut out = fit(config, &fd.train, &fd.val, cfg)?;
    out.best.montage = Some(montage.clone());
    out.last.montage = Some(montage.clone());
    let test: Vec<EegWindow> = fd.test(windows).into_iter().cloned().collect();
    let (metrics, test_scores) = score_fold(&out.best, &test, fd.fold, &montage.name)?;
    Ok(FoldRun {
        fold: fd.fold,
        test_neonates: fd.test_ids,
        val_neonates: fd.val_ids,
        test_idx: fd.test_idx,
        test_scores,
        fit: out,
        metrics,
    })
}

/// [`cross_validate`] with the folds optionally trained on separate threads.
/// Results are identical either way.
pub fn cross_validate_par(
    config: &ModelConfig,
    windows: &[EegWindow],
    montage: &Montage,
    split: &FoldSplit,
    cfg: &TrainConfig,
    val_neonates: usize,
    parallel: bool,
) -> Result<CvOutcome> {
    split.validate()?;
    let data = (0..split.folds.len())
        .map(|f| fold_data(windows, split, f, val_neonates, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    let runs = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = data
                .into_iter()
                .map(|fd| s.spawn(move || run_fold(config, windows, montage, fd, cfg)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        data.into_iter()
            .map(|fd| run_fold(config, windows, montage, fd, cfg))
            .collect::<Result<Vec<_>>>()?
    };
    let meta = serde_json::json!({
        "model": config,
        "train": cfg,
        "val_neonates": val_neonates,
        "folds": split,
        "config_hash": config_hash(&(config, cfg, val_neonates, split)),
    });
    let report = MetricReport::new("cross_validation", &config.arch().to_string(), runs.iter().map(|r| r.metrics.clone()).collect(), meta);
    Ok(CvOutcome { runs, report })
}

/// Evaluates per-fold models on the same folds' test neonates under another
/// montage. No parameter is modified; montage-bound architectures are refused.
pub fn transfer_eval(models: &[Model], split: &FoldSplit, windows: &[EegWindow], montage: &Montage) -> Result<MetricReport> {
    if models.len() != split.folds.len() {
        return Err(Error::invalid(format!("{} models for {} folds", models.len(), split.folds.len())));
    }
    let mut rows = Vec::new();
    let mut hashes = Vec::new();
    for (f, (model, fold)) in models.iter().zip(&split.folds).enumerate() {
        model.ensure_transferable()?;
        hashes.push(crate::diff::checkpoint::digest(&model.to_bytes()));
        let test: Vec<EegWindow> = windows.iter().filter(|w| fold.test.contains(&w.neonate_id)).cloned().collect();
        rows.push(score_fold(model, &test, f + 1, &montage.name)?.0);
    }
    let from = models[0].montage.as_ref().map(|m| m.name.clone());
    let meta = serde_json::json!({
        "from_montage": from,
        "to_montage": montage,
        "checkpoint_sha256": hashes,
        "folds": split,
    });
    Ok(MetricReport::new("transfer", &models[0].arch().to_string(), rows, meta))
}
