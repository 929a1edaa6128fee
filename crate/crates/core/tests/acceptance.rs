//! Acceptance harness. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass substrings as arguments to run a subset, e.g.
//! `cargo test -p statenet-core --test acceptance -- gradient metric`.
//!
//! The benchmark criteria share one fixture: the reference synthetic cohort
//! (12 neonates, seed 7, 18 channels, 40 min each), a patient-wise 4-fold
//! split and one STATENet cross-validation run that later criteria reuse.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use statenet::data::{patient_folds, synth_cohort, window_cohort, EegWindow, FoldSplit, Montage, SynthConfig, WindowConfig};
use statenet::diff::checkpoint::digest;
use statenet::diff::{grad_check, GradCheckOptions, Grads, Graph, ParamSet, Tensor};
use statenet::ensemble::{Ensemble, GateConfig};
use statenet::eval::{auprc, auroc, cross_validate, fold_data, score_fold, transfer_eval, CvOutcome};
use statenet::interpret::{occlude_window, OcclusionMode, DEFAULT_OCC_LEN, DEFAULT_STRIDE};
use statenet::models::{window_tensor, GruConfig, Model, ModelConfig, Predictor, StateNetConfig, TcnConfig};
use statenet::training::{batch_objective, fit, TrainConfig};
use statenet::Error;

const FOLDS: usize = 4;
const SPLIT_SEED: u64 = 7;
const VAL_NEONATES: usize = 2;

fn benchmark_model() -> ModelConfig {
    ModelConfig::Statenet(StateNetConfig {
        hidden_dim: 6,
        tcn_layers: 4,
        input_scale: 0.1,
        ..Default::default()
    })
}

fn benchmark_train() -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        batch_size: 8,
        max_epochs: 4,
        pos_weight: 4.0,
        ..Default::default()
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

type Res = statenet::Result<Outcome>;

struct Cohort {
    windows: Vec<EegWindow>,
    split: FoldSplit,
}

fn build_cohort(montage: Montage) -> statenet::Result<Cohort> {
    let recs = synth_cohort(&SynthConfig { montage, ..Default::default() })?;
    let windows = window_cohort(&recs, &WindowConfig::default())?;
    let ids: Vec<String> = recs.iter().map(|r| r.neonate_id.clone()).collect();
    let split = patient_folds(&ids, FOLDS, SPLIT_SEED)?;
    Ok(Cohort { windows, split })
}

/// Lazily built benchmark state shared between criteria.
#[derive(Default)]
struct Bench {
    m18: Option<Cohort>,
    cv18: Option<(CvOutcome, Duration)>,
}

impl Bench {
    fn cohort18(&mut self) -> statenet::Result<&Cohort> {
        if self.m18.is_none() {
            let t = Instant::now();
            let c = build_cohort(Montage::bipolar_18())?;
            let pos = c.windows.iter().filter(|w| w.y == 1).count();
            println!("  reference cohort: {} windows, {pos} positive ({:.1}s)", c.windows.len(), t.elapsed().as_secs_f64());
            self.m18 = Some(c);
        }
        Ok(self.m18.as_ref().expect("just built"))
    }

    fn cv18(&mut self) -> statenet::Result<(&Cohort, &CvOutcome, Duration)> {
        if self.cv18.is_none() {
            let t = Instant::now();
            let c = self.cohort18()?;
            let out = cross_validate(&benchmark_model(), &c.windows, &Montage::bipolar_18(), &c.split, &benchmark_train(), VAL_NEONATES)?;
            self.cv18 = Some((out, t.elapsed()));
        }
        let (out, dt) = self.cv18.as_ref().expect("just built");
        Ok((self.m18.as_ref().expect("built with cv"), out, *dt))
    }
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize], sd: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let d = Normal::new(0.0, sd).expect("valid sd");
    Tensor::new(shape.to_vec(), (0..n).map(|_| d.sample(rng)).collect()).expect("shape matches")
}

/// Offsets every parameter so no pre-activation sits exactly on a ReLU kink
/// (zero-initialised biases meeting all-zero inputs would).
fn jitter(ps: &mut ParamSet, rng: &mut ChaCha8Rng) {
    let d = Normal::new(0.0, 0.05).expect("valid sd");
    for p in ps.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v += d.sample(rng));
    }
}

fn sha(m: &Model) -> String {
    digest(&m.to_bytes())
}

// ---------------------------------------------------------------------------

fn gradient_correctness(_: &mut Bench) -> Res {
    let t = Instant::now();
    let l = 64;
    let opts = GradCheckOptions {
        eps: 1e-6,
        max_coords_per_tensor: None,
        seed: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for c in 1..=3usize {
        let batch: Vec<(Tensor, u8)> = (0..2u8).map(|y| (normal_tensor(&mut rng, &[c, l], 40.0), y)).collect();
        let archs = [
            ModelConfig::Statenet(StateNetConfig {
                hidden_dim: 4,
                tcn_layers: 3,
                mlp_hidden: 5,
                ..Default::default()
            }),
            ModelConfig::Gru(GruConfig { hidden_dim: 4, ..Default::default() }),
            ModelConfig::Tcn(TcnConfig {
                layers: 3,
                hidden_dim: 4,
                ..Default::default()
            }),
        ];
        for cfg in archs {
            let cfg = cfg.with_channels(c);
            let mut params = cfg.init_params(c as u64)?;
            jitter(&mut params, &mut rng);
            let r = grad_check(&params, opts, |ps| batch_objective(&cfg, ps, &batch, 2.0, 1e-3))?;
            worst = worst.max(r.max_rel_err);
            lines.push(format!("{}@C{c}={:.1e}{}", cfg.arch(), r.max_rel_err, if r.max_rel_err > 1e-4 { format!("({:?})", r.worst) } else { String::new() }));
        }
        // gate over three frozen members whose outputs are fixed numbers
        let gate = GateConfig { gru_hidden: 4, ..Default::default() };
        let mut params = gate.init_params(3, c as u64)?;
        jitter(&mut params, &mut rng);
        let probs: Vec<Vec<f64>> = (0..2).map(|_| (0..3).map(|_| rng.random_range(0.05..0.95)).collect()).collect();
        let r = grad_check(&params, opts, |ps| {
            let mut grads = Grads::new(ps);
            let mut total = 0.0;
            for ((x, y), p) in batch.iter().zip(&probs) {
                let mut g = Graph::new(ps);
                let v = gate.ensemble_graph(&mut g, x, p)?;
                let loss = g.bce(v, f64::from(*y), 1.0)?;
                total += g.value(loss).data()[0] / 2.0;
                g.backward_into(loss, 0.5, &mut grads);
            }
            Ok((total, grads))
        })?;
        worst = worst.max(r.max_rel_err);
        lines.push(format!("moe-gate@C{c}={:.1e}", r.max_rel_err));
    }
    let dt = t.elapsed();
    Ok(Outcome::new(
        worst <= 1e-4 && dt < Duration::from_secs(120),
        format!("max rel err {worst:.2e} (≤ 1e-4) in {:.1}s; {}", dt.as_secs_f64(), lines.join(" ")),
    ))
}

fn oracle_auroc(s: &[f64], y: &[u8]) -> f64 {
    let (mut num, mut pairs) = (0u64, 0u64);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] == 1 && y[j] == 0 {
                pairs += 2;
                num += if s[i] > s[j] {
                    2
                } else if s[i] == s[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    num as f64 / pairs as f64
}

fn oracle_auprc(s: &[f64], y: &[u8]) -> f64 {
    let mut pos: Vec<usize> = (0..s.len()).filter(|&i| y[i] == 1).collect();
    pos.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut acc = 0.0;
    for &i in &pos {
        let above: Vec<usize> = (0..s.len()).filter(|&j| s[j] >= s[i]).collect();
        let tp = above.iter().filter(|&&j| y[j] == 1).count();
        acc += tp as f64 / above.len() as f64;
    }
    acc / pos.len() as f64
}

fn metric_oracles(_: &mut Bench) -> Res {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut mismatches = 0;
    let mut first = String::new();
    for trial in 0..1000 {
        let n = rng.random_range(2..=200usize);
        let mut y: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
        // both classes present
        y[0] = 1;
        y[1] = 0;
        y.shuffle(&mut rng);
        // distinct scores: a random permutation of a strictly increasing grid
        let mut s: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 + rng.random_range(0.0..0.5 / n as f64)).collect();
        s.shuffle(&mut rng);
        let (a, p) = (auroc(&s, &y)?, auprc(&s, &y)?);
        let (oa, op) = (oracle_auroc(&s, &y), oracle_auprc(&s, &y));
        if a != oa || p != op {
            mismatches += 1;
            if first.is_empty() {
                first = format!("; first at trial {trial}: auroc {a} vs {oa}, auprc {p} vs {op}");
            }
        }
    }
    let dt = t.elapsed();
    Ok(Outcome::new(
        mismatches == 0 && dt < Duration::from_secs(60),
        format!("{mismatches}/1000 instances differ from the O(N²) oracles, {:.1}s{first}", dt.as_secs_f64()),
    ))
}

fn permutation_invariance(_: &mut Bench) -> Res {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let cfg = ModelConfig::Statenet(StateNetConfig {
            hidden_dim: rng.random_range(2..=8),
            tcn_layers: rng.random_range(1..=4),
            gat_layers: rng.random_range(1..=3),
            ..Default::default()
        });
        let model = Model::init(cfg, 1000 + trial)?;
        let c = rng.random_range(2..=18usize);
        let l = rng.random_range(32..=256usize);
        let x = normal_tensor(&mut rng, &[c, l], 50.0);
        let mut perm: Vec<usize> = (0..c).collect();
        perm.shuffle(&mut rng);
        let mut xp = Vec::with_capacity(c * l);
        for &i in &perm {
            xp.extend_from_slice(x.row(i));
        }
        let xp = Tensor::new(vec![c, l], xp)?;
        worst = worst.max((model.predict(&x)? - model.predict(&xp)?).abs());
    }
    Ok(Outcome::new(worst <= 1e-12, format!("max |p(x) - p(Px)| = {worst:.2e} over 100 trials (≤ 1e-12)")))
}

fn montage_agnosticism(_: &mut Bench) -> Res {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let statenet = Model::init(benchmark_model(), 3)?;
    let mut notes = Vec::new();
    let mut ok = true;
    for c in [1usize, 3, 18] {
        let p = statenet.predict(&normal_tensor(&mut rng, &[c, 6000], 50.0))?;
        ok &= p.is_finite() && (0.0..=1.0).contains(&p);
        notes.push(format!("C={c}: p={p:.4}"));
    }
    for cfg in [ModelConfig::Gru(GruConfig::default()), ModelConfig::Tcn(TcnConfig::default())] {
        let m = Model::init(cfg, 3)?;
        let fits = m.predict(&normal_tensor(&mut rng, &[18, 600], 50.0)).is_ok();
        let err = m.predict(&normal_tensor(&mut rng, &[3, 600], 50.0));
        let shape_err = matches!(err, Err(Error::Shape(_)));
        ok &= fits && shape_err;
        notes.push(format!("{} on C=3: {}", m.arch(), err.map_or_else(|e| e.to_string(), |p| format!("accepted (p={p})"))));
    }
    Ok(Outcome::new(ok, notes.join("; ")))
}

fn learnability(b: &mut Bench) -> Res {
    let (_, out, dt) = b.cv18()?;
    let folds: Vec<String> = out
        .runs
        .iter()
        .map(|r| format!("{:.3}/{:.3}", r.metrics.auroc.unwrap_or(f64::NAN), r.metrics.auprc.unwrap_or(f64::NAN)))
        .collect();
    let (a, p) = (out.report.mean_auroc.unwrap_or(0.0), out.report.mean_auprc.unwrap_or(0.0));
    Ok(Outcome::new(
        a >= 0.90 && p >= 0.70 && dt <= Duration::from_secs(15 * 60),
        format!(
            "mean AUROC {a:.3} (≥ 0.90), AUPRC {p:.3} (≥ 0.70), {:.0}s (≤ 900s); per fold {}",
            dt.as_secs_f64(),
            folds.join(" ")
        ),
    ))
}

fn transfer(b: &mut Bench) -> Res {
    let (c18, out, _) = b.cv18()?;
    let models: Vec<Model> = out.runs.iter().map(|r| r.fit.best.clone()).collect();
    let before: Vec<String> = models.iter().map(sha).collect();
    let c3 = build_cohort(Montage::bipolar_3())?;
    if c3.split != c18.split {
        return Ok(Outcome::new(false, "3-channel cohort produced a different fold split"));
    }
    let transferred = transfer_eval(&models, &c3.split, &c3.windows, &Montage::bipolar_3())?;
    let after: Vec<String> = models.iter().map(sha).collect();
    let t = Instant::now();
    let native = cross_validate(&benchmark_model(), &c3.windows, &Montage::bipolar_3(), &c3.split, &benchmark_train(), VAL_NEONATES)?;
    let (ta, na) = (transferred.mean_auroc.unwrap_or(0.0), native.report.mean_auroc.unwrap_or(1.0));
    let recorded: Vec<String> = transferred.meta["checkpoint_sha256"]
        .as_array()
        .map(|v| v.iter().filter_map(|s| s.as_str().map(String::from)).collect())
        .unwrap_or_default();
    let unchanged = before == after && recorded == before;
    Ok(Outcome::new(
        (ta - na).abs() <= 0.15 && unchanged,
        format!(
            "transferred 18→3 AUROC {ta:.3} vs native 3-channel {na:.3} (|Δ| = {:.3} ≤ 0.15, native CV {:.0}s); checkpoint hashes unchanged: {unchanged}",
            (ta - na).abs(),
            t.elapsed().as_secs_f64()
        ),
    ))
}

fn ensemble_gain(b: &mut Bench) -> Res {
    let (c, out, _) = b.cv18()?;
    let train = benchmark_train();
    let members: [(&str, ModelConfig, u64); 3] = [
        ("gru", ModelConfig::Gru(GruConfig { hidden_dim: 8, ..Default::default() }), 0),
        ("tcn", ModelConfig::Tcn(TcnConfig { hidden_dim: 16, ..Default::default() }), 0),
        ("statenet:1", benchmark_model(), 1),
    ];
    let gate_train = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 16,
        max_epochs: 20,
        patience: 5,
        pos_weight: train.pos_weight,
        ..Default::default()
    };
    let tags: Vec<String> = ["statenet:0"].into_iter().chain(members.iter().map(|m| m.0)).map(String::from).collect();
    let mut per_model: Vec<Vec<f64>> = vec![Vec::new(); tags.len() + 1];
    let mut simplex_worst = 0.0f64;
    let mut simplex_ok = true;
    let mut bytes_ok = true;
    for (f, run) in out.runs.iter().enumerate() {
        let t = Instant::now();
        let fd = fold_data(&c.windows, &c.split, f, VAL_NEONATES, train.seed)?;
        let mut models = vec![run.fit.best.clone()];
        for (_, cfg, seed) in &members {
            let fitted = fit(cfg, &fd.train, &fd.val, &TrainConfig { seed: *seed, ..train.clone() })?;
            models.push(fitted.best);
        }
        let before: Vec<Vec<u8>> = models.iter().map(Model::to_bytes).collect();
        let mut ens = Ensemble::new(models, tags.clone(), GateConfig::default(), 0)?;
        ens.train_gate(&fd.val, &fd.val, &gate_train)?;
        bytes_ok &= ens.members.iter().map(Model::to_bytes).collect::<Vec<_>>() == before;
        let test: Vec<EegWindow> = fd.test(&c.windows).into_iter().cloned().collect();
        for w in &test {
            let wts = ens.gate_weights(&window_tensor(w))?;
            let dev = (wts.iter().sum::<f64>() - 1.0).abs();
            simplex_worst = simplex_worst.max(dev);
            simplex_ok &= wts.len() == tags.len() && wts.iter().all(|&v| v >= 0.0 && v.is_finite()) && dev <= 1e-12;
        }
        for (k, m) in ens.members.iter().enumerate() {
            per_model[k].push(score_fold(m, &test, run.fold, "m18")?.0.auroc.unwrap_or(f64::NAN));
        }
        per_model[tags.len()].push(score_fold(&ens, &test, run.fold, "m18")?.0.auroc.unwrap_or(f64::NAN));
        println!(
            "  fold {}: member AUROC {:?}, moe {:.3} ({:.0}s)",
            run.fold,
            per_model[..tags.len()].iter().map(|v| (v[f] * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            per_model[tags.len()][f],
            t.elapsed().as_secs_f64()
        );
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let member_means: Vec<f64> = per_model[..tags.len()].iter().map(|v| mean(v)).collect();
    let best = member_means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let moe = mean(&per_model[tags.len()]);
    let listing: Vec<String> = tags.iter().zip(&member_means).map(|(t, a)| format!("{t} {a:.3}")).collect();
    Ok(Outcome::new(
        moe >= best - 0.02 && simplex_ok && bytes_ok,
        format!(
            "MoE AUROC {moe:.3} vs best member {best:.3} (need ≥ {:.3}); members {}; simplex max |Σw-1| {simplex_worst:.1e}; member bytes unchanged: {bytes_ok}",
            best - 0.02,
            listing.join(", ")
        ),
    ))
}

fn localization(b: &mut Bench) -> Res {
    let (c, out, _) = b.cv18()?;
    let (mut hits, mut total) = (0usize, 0usize);
    for run in &out.runs {
        for (&i, &score) in run.test_idx.iter().zip(&run.test_scores) {
            let w = &c.windows[i];
            if w.y != 1 || score < 0.5 || w.events.len() != 1 {
                continue;
            }
            let map = occlude_window(&run.fit.best, w, DEFAULT_OCC_LEN, DEFAULT_STRIDE, OcclusionMode::Temporal)?;
            // events spanning the whole window leave no outside to compare
            if let Some((inside, outside)) = map.inside_outside(w.events[0]) {
                total += 1;
                hits += usize::from(inside > outside);
            }
        }
    }
    let frac = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
    Ok(Outcome::new(
        total > 0 && frac >= 0.8,
        format!("{hits}/{total} true-positive single-event windows ({:.1}%, need ≥ 80%) have inside heat > outside", 100.0 * frac),
    ))
}

fn reproducibility(_: &mut Bench) -> Res {
    let run = || -> statenet::Result<(Vec<Vec<u8>>, String, String)> {
        let recs = synth_cohort(&SynthConfig {
            n_neonates: 4,
            minutes_per_neonate: 4.0,
            seizure_rate: 30.0,
            ..Default::default()
        })?;
        let windows = window_cohort(&recs, &WindowConfig::default())?;
        let ids: Vec<String> = recs.iter().map(|r| r.neonate_id.clone()).collect();
        let split = patient_folds(&ids, 2, 3)?;
        let model = ModelConfig::Statenet(StateNetConfig {
            hidden_dim: 4,
            tcn_layers: 3,
            ..Default::default()
        });
        let tc = TrainConfig {
            max_epochs: 2,
            batch_size: 4,
            seed: 5,
            ..benchmark_train()
        };
        let out = cross_validate(&model, &windows, &Montage::bipolar_18(), &split, &tc, 1)?;
        let ckpts = out.runs.iter().flat_map(|r| [r.fit.best.to_bytes(), r.fit.last.to_bytes()]).collect();
        let cohort: Vec<u8> = windows.iter().flat_map(|w| w.x.iter().flat_map(|v| v.to_le_bytes())).collect();
        Ok((ckpts, out.report.to_csv() + &out.report.to_json(), digest(&cohort)))
    };
    let (a, b) = (run()?, run()?);
    let same_ckpt = a.0 == b.0;
    let same_report = a.1 == b.1;
    let same_data = a.2 == b.2;
    Ok(Outcome::new(
        same_ckpt && same_report && same_data,
        format!(
            "{} checkpoints bitwise identical: {same_ckpt}; reports identical: {same_report}; cohort identical: {same_data}",
            a.0.len()
        ),
    ))
}

type Check = fn(&mut Bench) -> Res;

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let checks: [(&str, Check); 9] = [
        ("gradient_correctness", gradient_correctness),
        ("metric_oracles", metric_oracles),
        ("permutation_invariance", permutation_invariance),
        ("montage_agnosticism", montage_agnosticism),
        ("reproducibility", reproducibility),
        ("learnability", learnability),
        ("transfer", transfer),
        ("ensemble_gain", ensemble_gain),
        ("localization", localization),
    ];
    let mut bench = Bench::default();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (name, check) in checks {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let outcome = check(&mut bench).unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{tag} {name}: {} [{:.1}s]", outcome.detail, t.elapsed().as_secs_f64());
        if !outcome.pass {
            failed.push(name);
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
