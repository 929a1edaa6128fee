//! Times STATENet 4-fold cross-validation on the reference synthetic cohort.
//! Defaults match the acceptance benchmark.
//! Usage: bench_cv [hidden_dim] [tcn_layers] [max_epochs] [learning_rate] [batch_size] [input_scale] [pos_weight]

use std::time::Instant;

use statenet::data::{patient_folds, synth_cohort, window_cohort, Montage, SynthConfig, WindowConfig};
use statenet::eval::cross_validate;
use statenet::models::{ModelConfig, StateNetConfig};
use statenet::training::TrainConfig;

fn main() -> statenet::Result<()> {
    let a: Vec<String> = std::env::args().skip(1).collect();
    let num = |i: usize, d: f64| a.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let model = ModelConfig::Statenet(StateNetConfig {
        hidden_dim: num(0, 6.0) as usize,
        tcn_layers: num(1, 4.0) as usize,
        input_scale: num(5, 0.1),
        ..Default::default()
    });
    let train = TrainConfig {
        max_epochs: num(2, 4.0) as usize,
        learning_rate: num(3, 3e-3),
        batch_size: num(4, 8.0) as usize,
        pos_weight: num(6, 4.0),
        ..Default::default()
    };
    let t = Instant::now();
    let recs = synth_cohort(&SynthConfig::default())?;
    let windows = window_cohort(&recs, &WindowConfig::default())?;
    let ids: Vec<String> = recs.iter().map(|r| r.neonate_id.clone()).collect();
    let split = patient_folds(&ids, 4, 7)?;
    let pos = windows.iter().filter(|w| w.y == 1).count();
    println!("{} windows, {pos} positive, data {:.1}s", windows.len(), t.elapsed().as_secs_f64());
    let out = cross_validate(&model, &windows, &Montage::bipolar_18(), &split, &train, 2)?;
    for r in &out.runs {
        println!("fold {} best epoch {} auroc {:?} auprc {:?}", r.fold, r.fit.best_epoch, r.metrics.auroc, r.metrics.auprc);
        for h in &r.fit.history {
            println!("  epoch {} loss {:.4} val auroc {:?} auprc {:?}", h.epoch, h.train_loss, h.val_auroc, h.val_auprc);
        }
    }
    println!("mean auroc {:?} auprc {:?} total {:.1}s", out.report.mean_auroc, out.report.mean_auprc, t.elapsed().as_secs_f64());
    Ok(())
}
