//! Minibatch training of any architecture against the weighted binary
//! cross-entropy plus `(λ/2)·‖θ_trainable‖²` objective, with Adam updates and
//! early stopping on validation AUPRC.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::EegWindow;
use crate::diff::{Grads, Graph, ParamId, ParamSet, Tensor, PROB_CLAMP};
use crate::error::{Error, Result};
use crate::eval::metrics::{auprc, auroc};
use crate::models::{window_tensor, Model, ModelConfig};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// BCE weight on positive windows.
    pub pos_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            seed: 0,
            pos_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_pos = |v: f64| v > 0.0 && v.is_finite();
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        if !finite_pos(self.learning_rate) || !finite_pos(self.pos_weight) {
            return Err(Error::invalid("learning_rate and pos_weight must be positive"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::invalid("batch_size, max_epochs and patience must be positive"));
        }
        Ok(())
    }
}

/// Adam moments, shaped like the parameter set they were created for.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One Adam update. Frozen parameters are never touched; a trainable
/// parameter without a gradient slot sees a zero gradient. Nothing is
/// updated if any gradient is non-finite.
pub fn opt_step(params: &mut ParamSet, grads: &Grads, state: &mut OptimizerState, lr: f64) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::invalid("optimizer state does not match parameter set"));
    }
    for (id, g) in grads.iter() {
        if let Some(g) = g {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(params.get(id).name.clone()));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
    for i in 0..params.len() {
        let id = ParamId(i);
        let p = params.get_mut(id);
        if !p.trainable {
            continue;
        }
        let g = grads.get(id);
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        let theta = p.value.data_mut();
        for j in 0..theta.len() {
            let gj = g.map_or(0.0, |g| g.data()[j]);
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
            theta[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

pub(crate) fn bce_term(p: f64, y: f64, pos_weight: f64) -> f64 {
    let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let w = if y > 0.5 { pos_weight } else { 1.0 };
    -w * (y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
}

/// Objective and gradient over one batch: mean weighted BCE plus the L2 term.
pub fn batch_objective(
    config: &ModelConfig,
    params: &ParamSet,
    batch: &[(Tensor, u8)],
    pos_weight: f64,
    lambda: f64,
) -> Result<(f64, Grads)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    let n = batch.len() as f64;
    let mut grads = Grads::new(params);
    let mut bce = 0.0;
    for (x, y) in batch {
        let mut g = Graph::new(params);
        let p = config.forward_graph(&mut g, x)?;
        let w = if *y == 1 { pos_weight } else { 1.0 };
        let l = g.bce(p, f64::from(*y), w)?;
        bce += g.value(l).data()[0];
        g.backward_into(l, 1.0 / n, &mut grads);
    }
    grads.add_l2(params, lambda);
    Ok((bce / n + 0.5 * lambda * params.trainable_sq_norm(), grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossParts {
    pub bce: f64,
    pub l2: f64,
    pub total: f64,
}

/// Full-set objective split into its two terms.
pub fn loss_parts(model: &Model, windows: &[EegWindow], cfg: &TrainConfig) -> Result<LossParts> {
    if windows.is_empty() {
        return Err(Error::Empty("windows".into()));
    }
    let mut bce = 0.0;
    for w in windows {
        bce += bce_term(model.predict_window(w)?, f64::from(w.y), cfg.pos_weight);
    }
    let bce = bce / windows.len() as f64;
    let l2 = 0.5 * cfg.lambda * model.params.trainable_sq_norm();
    Ok(LossParts { bce, l2, total: bce + l2 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Epoch 0 is the full-set objective at initialisation; later epochs
    /// average the minibatch objectives seen during the epoch.
    pub train_loss: f64,
    pub val_auroc: Option<f64>,
    pub val_auprc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub best: Model,
    pub last: Model,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

fn val_metrics(model: &Model, val: &[EegWindow]) -> Result<(Option<f64>, Option<f64>)> {
    if val.is_empty() {
        return Ok((None, None));
    }
    let scores = model.predict_windows(val)?;
    let labels: Vec<u8> = val.iter().map(|w| w.y).collect();
    Ok((auroc(&scores, &labels).ok(), auprc(&scores, &labels).ok()))
}

/// Trains `config` from a seeded initialisation and returns the checkpoint
/// with the best validation AUPRC (the last one when validation is empty or
/// single-class).
pub fn fit(config: &ModelConfig, train: &[EegWindow], val: &[EegWindow], cfg: &TrainConfig) -> Result<FitOutput> {
    cfg.validate()?;
    let first = train.first().ok_or_else(|| Error::Empty("training set".into()))?;
    let config = config.clone().with_channels(first.channels);
    let positives = train.iter().filter(|w| w.y == 1).count();
    if positives == 0 || positives == train.len() {
        log::warn!("training set has a single class ({positives}/{} positive)", train.len());
    }
    let mut model = Model::init(config, cfg.seed)?;
    model.train_neonates = train
        .iter()
        .map(|w| w.neonate_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut state = OptimizerState::new(&model.params);
    let initial = loss_parts(&model, train, cfg)?.total;
    let (a0, p0) = val_metrics(&model, val)?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: initial,
        val_auroc: a0,
        val_auprc: p0,
    }];
    let mut best: Option<(f64, usize, Model)> = None;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(Tensor, u8)> = chunk.iter().map(|&i| (window_tensor(&train[i]), train[i].y)).collect();
            let (obj, grads) = batch_objective(&model.config, &model.params, &batch, cfg.pos_weight, cfg.lambda)?;
            opt_step(&mut model.params, &grads, &mut state, cfg.learning_rate)?;
            sum += obj;
            batches += 1;
        }
        let (va, vp) = val_metrics(&model, val)?;
        let rec = EpochRecord {
            epoch,
            train_loss: sum / batches as f64,
            val_auroc: va,
            val_auprc: vp,
        };
        log::info!("epoch {epoch}: loss {:.5} val auprc {:?}", rec.train_loss, vp);
        history.push(rec);
        if let Some(score) = vp {
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, epoch, model.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    log::info!("early stop after epoch {epoch}");
                    break;
                }
            }
        }
    }
    let last_epoch = history.last().map_or(0, |r| r.epoch);
    let (best_epoch, best) = match best {
        Some((_, e, m)) => (e, m),
        None => (last_epoch, model.clone()),
    };
    Ok(FitOutput {
        best,
        last: model,
        best_epoch,
        history,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x}"))
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_auroc,val_auprc\n");
    for r in history {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, fmt_opt(r.val_auroc), fmt_opt(r.val_auprc));
    }
    s
}

/// Writes `config.json`, `history.csv`, `best.ckpt` and `final.ckpt`.
pub fn write_run_dir(dir: &Path, resolved_config: &serde_json::Value, out: &FitOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    let cfg = serde_json::to_string_pretty(resolved_config).expect("config serializes");
    write("config.json", cfg.as_bytes())?;
    write("history.csv", history_csv(&out.history).as_bytes())?;
    write("best.ckpt", &out.best.to_bytes())?;
    write("final.ckpt", &out.last.to_bytes())
}
