//! Mixture of experts over frozen base models. A gate (GRU over the
//! channel-mean series, then one affine map and a softmax) assigns each
//! window its own member weights; the ensemble output is the weighted sum of
//! member probabilities. Only gate parameters are ever updated.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::EegWindow;
use crate::diff::checkpoint::{self, Dtype};
use crate::diff::{Grads, Graph, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::eval::metrics::{auprc, auroc};
use crate::models::{window_tensor, Model, Predictor};
use crate::training::{bce_term, opt_step, EpochRecord, OptimizerState, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    pub gru_hidden: usize,
    /// Multiplies the channel-mean series (µV) before the gate GRU.
    pub input_scale: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            gru_hidden: 16,
            input_scale: 0.02,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gru_hidden == 0 {
            return Err(Error::invalid("gate: gru_hidden must be positive"));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::invalid("gate: input_scale must be positive"));
        }
        Ok(())
    }

    /// `gate.gru.{w_x,w_h,bias}` and `gate.mlp.{weight,bias}` for `k` members.
    pub fn init_params(&self, k: usize, seed: u64) -> Result<ParamSet> {
        self.validate()?;
        if k == 0 {
            return Err(Error::Empty("ensemble members".into()));
        }
        let h = self.gru_hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        ps.insert("gate.gru.w_x", ParamSet::glorot(&mut rng, &[3 * h, 1], 1, h))?;
        ps.insert("gate.gru.w_h", ParamSet::glorot(&mut rng, &[3 * h, h], h, h))?;
        ps.insert("gate.gru.bias", Tensor::zeros(&[3 * h]))?;
        ps.insert("gate.mlp.weight", ParamSet::glorot(&mut rng, &[k, h], h, k))?;
        ps.insert("gate.mlp.bias", Tensor::zeros(&[k]))?;
        Ok(ps)
    }

    /// Records the gate on `g`; returns the `1×K` weight row.
    pub fn weights_graph(&self, g: &mut Graph<'_>, x: &Tensor) -> Result<Var> {
        if x.shape().len() != 2 || x.dim(0) == 0 || x.dim(1) == 0 {
            return Err(Error::shape(format!("gate: expected a C×L window, got {:?}", x.shape())));
        }
        let (c, l) = (x.dim(0), x.dim(1));
        let mut mean = vec![0.0; l];
        for row in x.data().chunks_exact(l) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let s = self.input_scale / c as f64;
        mean.iter_mut().for_each(|m| *m *= s);
        let xv = g.input(Tensor::new(vec![1, l], mean)?);
        let (wx, wh, b) = (g.param_named("gate.gru.w_x")?, g.param_named("gate.gru.w_h")?, g.param_named("gate.gru.bias")?);
        let h = g.gru(xv, wx, wh, b)?;
        let h = g.reshape(h, &[1, self.gru_hidden])?;
        let (w, b) = (g.param_named("gate.mlp.weight")?, g.param_named("gate.mlp.bias")?);
        let z = g.linear(h, w, Some(b))?;
        g.softmax_rows(z)
    }

    /// Records `Σ_k w_k(x) · member_probs[k]`; returns the scalar node.
    pub fn ensemble_graph(&self, g: &mut Graph<'_>, x: &Tensor, member_probs: &[f64]) -> Result<Var> {
        let w = self.weights_graph(g, x)?;
        g.dot_const(w, member_probs.to_vec())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GateMeta {
    gate_config: GateConfig,
    tags: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub members: Vec<Model>,
    /// Display names, e.g. `gru`, `statenet:1`.
    pub tags: Vec<String>,
    pub gate_config: GateConfig,
    pub gate: ParamSet,
}

#[derive(Debug, Clone)]
pub struct GateFit {
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl Ensemble {
    pub fn new(members: Vec<Model>, tags: Vec<String>, gate_config: GateConfig, seed: u64) -> Result<Self> {
        if tags.len() != members.len() {
            return Err(Error::invalid(format!("{} tags for {} members", tags.len(), members.len())));
        }
        let gate = gate_config.init_params(members.len(), seed)?;
        Ok(Self {
            members,
            tags,
            gate_config,
            gate,
        })
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn gate_weights(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.gate);
        let w = self.gate_config.weights_graph(&mut g, x)?;
        Ok(g.value(w).data().to_vec())
    }

    /// Member probabilities; a failing member is reported with its index.
    pub fn member_predictions(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.members
            .iter()
            .enumerate()
            .map(|(index, m)| {
                m.predict(x).map_err(|e| Error::Member {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }

    /// Mean gate weights per neonate, in first-seen neonate order.
    pub fn mean_weights_by_neonate(&self, windows: &[EegWindow]) -> Result<Vec<(String, Vec<f64>)>> {
        let mut rows: Vec<(String, Vec<f64>, usize)> = Vec::new();
        for w in windows {
            let wt = self.gate_weights(&window_tensor(w))?;
            let i = match rows.iter().position(|r| r.0 == w.neonate_id) {
                Some(i) => i,
                None => {
                    rows.push((w.neonate_id.clone(), vec![0.0; self.k()], 0));
                    rows.len() - 1
                }
            };
            rows[i].1.iter_mut().zip(&wt).for_each(|(a, b)| *a += b);
            rows[i].2 += 1;
        }
        Ok(rows
            .into_iter()
            .map(|(id, sum, n)| (id, sum.into_iter().map(|s| s / n as f64).collect()))
            .collect())
    }

    /// `neonate_id,<tag>...` with one row per neonate.
    pub fn weights_csv(&self, rows: &[(String, Vec<f64>)]) -> String {
        let mut s = format!("neonate_id,{}\n", self.tags.join(","));
        for (id, w) in rows {
            let cells: Vec<String> = w.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(s, "{id},{}", cells.join(","));
        }
        s
    }

    /// Fits the gate on `train` with the members frozen, keeping the gate
    /// (initial one included) with the best validation AUPRC. Member outputs
    /// are computed once. `train` should be held out from member training;
    /// on windows the members were fitted to, the gate learns to trust
    /// whichever member overfits most.
    pub fn train_gate(&mut self, train: &[EegWindow], val: &[EegWindow], cfg: &TrainConfig) -> Result<GateFit> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Empty("gate training set".into()));
        }
        let cache = |ws: &[EegWindow]| -> Result<Vec<(Tensor, Vec<f64>, u8)>> {
            ws.iter()
                .map(|w| {
                    let x = window_tensor(w);
                    let p = self.member_predictions(&x)?;
                    Ok((x, p, w.y))
                })
                .collect()
        };
        let train_c = cache(train)?;
        let val_c = cache(val)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(2);
        let mut state = OptimizerState::new(&self.gate);
        let score_val = |gate: &ParamSet| -> Result<(Option<f64>, Option<f64>)> {
            if val_c.is_empty() {
                return Ok((None, None));
            }
            let mut scores = Vec::with_capacity(val_c.len());
            for (x, p, _) in &val_c {
                let mut g = Graph::new(gate);
                let v = self.gate_config.ensemble_graph(&mut g, x, p)?;
                scores.push(g.value(v).data()[0]);
            }
            let labels: Vec<u8> = val_c.iter().map(|c| c.2).collect();
            Ok((auroc(&scores, &labels).ok(), auprc(&scores, &labels).ok()))
        };
        let mut initial = 0.0;
        for (x, p, y) in &train_c {
            let mut g = Graph::new(&self.gate);
            let v = self.gate_config.ensemble_graph(&mut g, x, p)?;
            initial += bce_term(g.value(v).data()[0], f64::from(*y), cfg.pos_weight);
        }
        initial = initial / train_c.len() as f64 + 0.5 * cfg.lambda * self.gate.trainable_sq_norm();
        let (a0, p0) = score_val(&self.gate)?;
        let mut history = vec![EpochRecord {
            epoch: 0,
            train_loss: initial,
            val_auroc: a0,
            val_auprc: p0,
        }];
        // the initial gate is a candidate too, so training never ends worse on val
        let mut best: Option<(f64, usize, ParamSet)> = p0.map(|s| (s, 0, self.gate.clone()));
        let mut stale = 0;
        let mut order: Vec<usize> = (0..train_c.len()).collect();
        for epoch in 1..=cfg.max_epochs {
            order.shuffle(&mut rng);
            let (mut sum, mut batches) = (0.0, 0usize);
            for chunk in order.chunks(cfg.batch_size) {
                let n = chunk.len() as f64;
                let mut grads = Grads::new(&self.gate);
                let mut bce = 0.0;
                for &i in chunk {
                    let (x, p, y) = &train_c[i];
                    let mut g = Graph::new(&self.gate);
                    let v = self.gate_config.ensemble_graph(&mut g, x, p)?;
                    let w = if *y == 1 { cfg.pos_weight } else { 1.0 };
                    let l = g.bce(v, f64::from(*y), w)?;
                    bce += g.value(l).data()[0];
                    g.backward_into(l, 1.0 / n, &mut grads);
                }
                grads.add_l2(&self.gate, cfg.lambda);
                opt_step(&mut self.gate, &grads, &mut state, cfg.learning_rate)?;
                sum += bce / n + 0.5 * cfg.lambda * self.gate.trainable_sq_norm();
                batches += 1;
            }
            let (va, vp) = score_val(&self.gate)?;
            log::info!("gate epoch {epoch}: loss {:.5} val auprc {vp:?}", sum / batches as f64);
            history.push(EpochRecord {
                epoch,
                train_loss: sum / batches as f64,
                val_auroc: va,
                val_auprc: vp,
            });
            if let Some(score) = vp {
                if best.as_ref().is_none_or(|b| score > b.0) {
                    best = Some((score, epoch, self.gate.clone()));
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.patience {
                        break;
                    }
                }
            }
        }
        let best_epoch = match best {
            Some((_, e, gate)) => {
                self.gate = gate;
                e
            }
            None => history.last().map_or(0, |r| r.epoch),
        };
        Ok(GateFit { best_epoch, history })
    }

    /// Full ensemble objective on `windows` (BCE + L2 over gate parameters).
    pub fn loss(&self, windows: &[EegWindow], cfg: &TrainConfig) -> Result<f64> {
        if windows.is_empty() {
            return Err(Error::Empty("windows".into()));
        }
        let mut bce = 0.0;
        for w in windows {
            bce += bce_term(self.predict_window(w)?, f64::from(w.y), cfg.pos_weight);
        }
        Ok(bce / windows.len() as f64 + 0.5 * cfg.lambda * self.gate.trainable_sq_norm())
    }

    pub fn predict_window(&self, w: &EegWindow) -> Result<f64> {
        self.predict(&window_tensor(w))
    }

    pub fn gate_bytes(&self) -> Vec<u8> {
        let meta = GateMeta {
            gate_config: self.gate_config.clone(),
            tags: self.tags.clone(),
        };
        checkpoint::encode(&self.gate, &serde_json::to_value(meta).expect("gate meta serializes"), Dtype::F64)
    }

    /// Writes `gate.ckpt` and `bundle.json` into `dir`. Members are referenced
    /// at `member_paths` when given, otherwise saved as `member{i}.ckpt`.
    pub fn save(&self, dir: &Path, member_paths: Option<&[PathBuf]>) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths: Vec<PathBuf> = match member_paths {
            Some(p) if p.len() == self.k() => p.to_vec(),
            Some(p) => return Err(Error::invalid(format!("{} member paths for {} members", p.len(), self.k()))),
            None => {
                let mut out = Vec::new();
                for (i, m) in self.members.iter().enumerate() {
                    let p = dir.join(format!("member{}.ckpt", i + 1));
                    m.save(&p)?;
                    out.push(PathBuf::from(format!("member{}.ckpt", i + 1)));
                }
                out
            }
        };
        let gate_path = dir.join("gate.ckpt");
        fs::write(&gate_path, self.gate_bytes()).map_err(|e| Error::io(&gate_path, e))?;
        let manifest = BundleManifest {
            k: self.k(),
            members: self
                .members
                .iter()
                .zip(&self.tags)
                .zip(paths)
                .map(|((m, tag), checkpoint)| MemberRef {
                    tag: tag.clone(),
                    arch: m.arch().to_string(),
                    checkpoint,
                })
                .collect(),
            gate_checkpoint: PathBuf::from("gate.ckpt"),
            gate_config: self.gate_config.clone(),
        };
        let path = dir.join("bundle.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Loads a bundle; relative checkpoint paths resolve against the
    /// manifest's directory.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let m: BundleManifest = serde_json::from_str(&text).map_err(|e| Error::json(manifest_path, e))?;
        if m.k == 0 || m.k != m.members.len() {
            return Err(Error::Checkpoint(format!("bundle declares k={} with {} members", m.k, m.members.len())));
        }
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let mut members = Vec::new();
        for (i, r) in m.members.iter().enumerate() {
            let model = Model::load(&resolve(&r.checkpoint)).map_err(|e| Error::Member {
                index: i,
                source: Box::new(e),
            })?;
            if model.arch().to_string() != r.arch {
                return Err(Error::Checkpoint(format!("member {i} is {}, manifest says {}", model.arch(), r.arch)));
            }
            members.push(model);
        }
        let gate_path = resolve(&m.gate_checkpoint);
        let bytes = fs::read(&gate_path).map_err(|e| Error::io(&gate_path, e))?;
        let (gate, _) = checkpoint::decode(&bytes)?;
        let fresh = m.gate_config.init_params(m.k, 0)?;
        for p in fresh.iter() {
            if gate.by_name(&p.name).map(|q| q.value.shape()) != Some(p.value.shape()) {
                return Err(Error::Checkpoint(format!("gate parameter `{}` missing or misshaped", p.name)));
            }
        }
        Ok(Self {
            members,
            tags: m.members.into_iter().map(|r| r.tag).collect(),
            gate_config: m.gate_config,
            gate,
        })
    }
}

impl Predictor for Ensemble {
    fn predict(&self, x: &Tensor) -> Result<f64> {
        let p = self.member_predictions(x)?;
        let w = self.gate_weights(x)?;
        Ok(w.iter().zip(&p).map(|(a, b)| a * b).sum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberRef {
    pub tag: String,
    pub arch: String,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub k: usize,
    pub members: Vec<MemberRef>,
    pub gate_checkpoint: PathBuf,
    pub gate_config: GateConfig,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GruConfig, ModelConfig, StateNetConfig, TcnConfig};

    fn window(seed: u64, c: usize, l: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        Tensor::new(vec![c, l], (0..c * l).map(|_| rng.random_range(-50.0..50.0)).collect()).unwrap()
    }

    fn tiny_members(c: usize) -> Vec<Model> {
        let sn = StateNetConfig {
            tcn_layers: 2,
            hidden_dim: 3,
            mlp_hidden: 3,
            ..Default::default()
        };
        vec![
            Model::init(ModelConfig::Gru(GruConfig { channels: c, hidden_dim: 3, ..Default::default() }), 1).unwrap(),
            Model::init(ModelConfig::Tcn(TcnConfig { channels: c, layers: 2, hidden_dim: 3, ..Default::default() }), 2).unwrap(),
            Model::init(ModelConfig::Statenet(sn), 3).unwrap(),
        ]
    }

    #[test]
    fn single_member_gets_all_weight() {
        let e = Ensemble::new(tiny_members(2).into_iter().take(1).collect(), vec!["gru".into()], GateConfig::default(), 0).unwrap();
        assert_eq!(e.gate_weights(&window(1, 2, 80)).unwrap(), vec![1.0]);
    }

    #[test]
    fn zero_gate_is_uniform_and_equal_members_pass_through() {
        let mut e = Ensemble::new(tiny_members(2), vec!["a".into(), "b".into(), "c".into()], GateConfig::default(), 0).unwrap();
        e.gate.iter_mut().for_each(|p| p.value.data_mut().fill(0.0));
        let w = e.gate_weights(&window(2, 2, 80)).unwrap();
        assert!(w.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let mut g = Graph::new(&e.gate);
        let v = e.gate_config.ensemble_graph(&mut g, &window(2, 2, 80), &[0.7, 0.7, 0.7]).unwrap();
        assert!((g.value(v).data()[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn weights_vary_per_window_and_output_is_convex() {
        let e = Ensemble::new(tiny_members(2), vec!["a".into(), "b".into(), "c".into()], GateConfig::default(), 5).unwrap();
        let (x1, x2) = (window(3, 2, 80), window(4, 2, 80));
        let (w1, w2) = (e.gate_weights(&x1).unwrap(), e.gate_weights(&x2).unwrap());
        assert_ne!(w1, w2);
        for (x, w) in [(&x1, &w1), (&x2, &w2)] {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9 && w.iter().all(|&v| v > 0.0 && v < 1.0));
            let p = e.member_predictions(x).unwrap();
            let y = e.predict(x).unwrap();
            let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo - 1e-15 <= y && y <= hi + 1e-15);
        }
    }

    #[test]
    fn arithmetic_example() {
        let e = Ensemble::new(tiny_members(1).into_iter().take(2).collect(), vec!["a".into(), "b".into()], GateConfig::default(), 0).unwrap();
        let mut gate = e.gate.clone();
        gate.iter_mut().for_each(|p| p.value.data_mut().fill(0.0));
        // softmax([0, ln 3]) = [0.25, 0.75]
        let id = gate.expect_id("gate.mlp.bias").unwrap();
        gate.get_mut(id).value.data_mut()[1] = 3f64.ln();
        let mut g = Graph::new(&gate);
        let v = e.gate_config.ensemble_graph(&mut g, &window(1, 1, 40), &[0.2, 0.8]).unwrap();
        assert!((g.value(v).data()[0] - 0.65).abs() < 1e-12);
    }

    #[test]
    fn member_error_carries_index() {
        let e = Ensemble::new(tiny_members(2), vec!["a".into(), "b".into(), "c".into()], GateConfig::default(), 0).unwrap();
        match e.predict(&window(1, 3, 80)) {
            Err(Error::Member { index: 0, .. }) => {}
            other => panic!("expected member 0 error, got {other:?}"),
        }
    }

    #[test]
    fn empty_ensemble_is_rejected() {
        assert!(matches!(Ensemble::new(vec![], vec![], GateConfig::default(), 0), Err(Error::Empty(_))));
    }
}
