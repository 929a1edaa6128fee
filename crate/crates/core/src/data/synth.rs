//! Synthetic neonatal cohort generator.
//!
//! Activity is simulated per scalp electrode and bipolar channels are derived
//! as electrode differences, so one seed yields the same underlying cohort
//! under any montage. Per neonate:
//!
//! * background: order-2 autoregressive noise per electrode with
//!   neonate-specific resonance frequency and gain, plus a white floor;
//! * seizures: rhythmic spike-and-wave bursts at a neonate-specific
//!   frequency, injected on a focal cluster of electrodes around a random
//!   focus, each with its own gain and lag, under a linear on/off ramp;
//! * annotations: one track per simulated annotator, equal to the true
//!   intervals with independent uniform boundary jitter.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::montage::{Montage, ELECTRODES};
use super::recording::{AnnotationTrack, Interval, Recording};
use crate::error::{Error, Result};

/// Background standard deviation per electrode at unit gain, µV.
const BACKGROUND_UV: f64 = 20.0;
const WHITE_FLOOR_UV: f64 = 2.0;
const EDGE_MARGIN_S: f64 = 5.0;
const BURN_IN: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_neonates: usize,
    pub seed: u64,
    pub montage: Montage,
    pub minutes_per_neonate: f64,
    /// Expected seizure events per hour.
    pub seizure_rate: f64,
    pub sampling_rate_hz: f64,
    pub background_gain: [f64; 2],
    pub background_freq_hz: [f64; 2],
    pub seizure_freq_hz: [f64; 2],
    /// Number of electrodes a seizure involves (inclusive range).
    pub affected_channels: [usize; 2],
    pub seizure_duration_s: [f64; 2],
    pub seizure_amplitude_uv: [f64; 2],
    pub n_annotators: usize,
    pub annotator_jitter_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_neonates: 12,
            seed: 7,
            montage: Montage::bipolar_18(),
            minutes_per_neonate: 40.0,
            seizure_rate: 8.0,
            sampling_rate_hz: 200.0,
            background_gain: [0.7, 1.4],
            background_freq_hz: [0.5, 2.5],
            seizure_freq_hz: [2.0, 4.0],
            affected_channels: [2, 6],
            seizure_duration_s: [20.0, 90.0],
            seizure_amplitude_uv: [100.0, 200.0],
            n_annotators: 3,
            annotator_jitter_s: 1.5,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], positive: bool) -> Result<()> {
    let ok = r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && (!positive || r[0] > 0.0);
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("synth: bad range {name} = {r:?}")))
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_neonates == 0 {
            return Err(Error::invalid("synth: n_neonates must be positive"));
        }
        self.montage.electrode_pairs()?;
        if !(self.minutes_per_neonate > 0.0) || !(self.sampling_rate_hz > 0.0) {
            return Err(Error::invalid("synth: duration and sampling rate must be positive"));
        }
        if !(self.seizure_rate >= 0.0) {
            return Err(Error::invalid("synth: seizure_rate must be non-negative"));
        }
        check_range("background_gain", self.background_gain, true)?;
        check_range("background_freq_hz", self.background_freq_hz, true)?;
        check_range("seizure_freq_hz", self.seizure_freq_hz, true)?;
        check_range("seizure_duration_s", self.seizure_duration_s, true)?;
        check_range("seizure_amplitude_uv", self.seizure_amplitude_uv, false)?;
        let [lo, hi] = self.affected_channels;
        if lo == 0 || lo > hi || hi > ELECTRODES.len() {
            return Err(Error::invalid(format!("synth: bad affected_channels {:?}", self.affected_channels)));
        }
        if self.background_freq_hz[1] >= self.sampling_rate_hz / 2.0 {
            return Err(Error::invalid("synth: background frequency above Nyquist"));
        }
        if self.n_annotators == 0 {
            return Err(Error::invalid("synth: need at least one annotator"));
        }
        if !(self.annotator_jitter_s >= 0.0) || 2.0 * self.annotator_jitter_s >= self.seizure_duration_s[0] {
            return Err(Error::invalid("synth: jitter must be shorter than half the minimum event"));
        }
        Ok(())
    }

    fn min_gap_s(&self) -> f64 {
        (2.0 * self.annotator_jitter_s + 1.0).max(10.0)
    }
}

/// Per-neonate draws shaping that subject's distribution.
#[derive(Debug, Clone)]
struct NeonateTraits {
    gain: f64,
    background_freq: f64,
    pole_radius: f64,
    seizure_freq: f64,
    affected: usize,
}

#[derive(Debug, Clone)]
struct SeizureEvent {
    start_s: f64,
    end_s: f64,
    freq: f64,
    amplitude: f64,
    phase: f64,
    /// (electrode, gain, lag seconds)
    sources: Vec<(usize, f64, f64)>,
}

fn electrodes_nearest(focus: usize, n: usize) -> Vec<usize> {
    let (_, fx, fy) = ELECTRODES[focus];
    let mut idx: Vec<usize> = (0..ELECTRODES.len()).collect();
    idx.sort_by(|&a, &b| {
        let da = (ELECTRODES[a].1 - fx).powi(2) + (ELECTRODES[a].2 - fy).powi(2);
        let db = (ELECTRODES[b].1 - fx).powi(2) + (ELECTRODES[b].2 - fy).powi(2);
        da.total_cmp(&db).then(a.cmp(&b))
    });
    idx.truncate(n);
    idx
}

/// One spike-and-wave cycle, `frac ∈ [0, 1)`, peak ≈ 1.
pub fn spike_wave(frac: f64) -> f64 {
    let spike = (-0.5 * ((frac - 0.08) / 0.045).powi(2)).exp();
    let wave = if frac > 0.15 {
        -0.6 * (PI * (frac - 0.15) / 0.85).sin()
    } else {
        0.0
    };
    spike + wave
}

/// AR(2) coefficients for a resonance at `freq` Hz with pole radius `r`,
/// and the innovation scale giving unit stationary variance.
fn ar2(freq: f64, r: f64, fs: f64) -> (f64, f64, f64) {
    let a1 = 2.0 * r * (2.0 * PI * freq / fs).cos();
    let a2 = -r * r;
    let var = (1.0 - a2) / ((1.0 + a2) * ((1.0 - a2).powi(2) - a1 * a1));
    (a1, a2, 1.0 / var.sqrt())
}

fn draw(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn simulate_neonate(cfg: &SynthConfig, index: usize, pairs: &[(usize, usize)]) -> Result<Recording> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let fs = cfg.sampling_rate_hz;
    let n = (cfg.minutes_per_neonate * 60.0 * fs).round() as usize;
    let dur = n as f64 / fs;

    let traits = NeonateTraits {
        gain: draw(&mut rng, cfg.background_gain),
        background_freq: draw(&mut rng, cfg.background_freq_hz),
        pole_radius: rng.random_range(0.95..0.99),
        seizure_freq: draw(&mut rng, cfg.seizure_freq_hz),
        affected: rng.random_range(cfg.affected_channels[0]..=cfg.affected_channels[1]),
    };

    // Event times.
    let expected = cfg.seizure_rate * dur / 3600.0;
    let count = if expected > 0.0 {
        Poisson::new(expected)
            .map_err(|e| Error::invalid(e.to_string()))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    let gap = cfg.min_gap_s();
    let mut events: Vec<SeizureEvent> = Vec::new();
    for _ in 0..count {
        let d = draw(&mut rng, cfg.seizure_duration_s);
        let hi = dur - d - EDGE_MARGIN_S;
        let mut placed = None;
        for _ in 0..50 {
            if hi <= EDGE_MARGIN_S {
                break;
            }
            let s = rng.random_range(EDGE_MARGIN_S..hi);
            let clear = events
                .iter()
                .all(|e| s + d + gap <= e.start_s || s >= e.end_s + gap);
            if clear {
                placed = Some(s);
                break;
            }
        }
        let Some(start_s) = placed else { continue };
        let focus = rng.random_range(0..ELECTRODES.len());
        let sources = electrodes_nearest(focus, traits.affected)
            .into_iter()
            .enumerate()
            .map(|(i, e)| {
                let g = rng.random_range(0.2..0.9);
                let lag = rng.random_range(0.0..0.08);
                // the focus itself carries the full amplitude
                (e, if i == 0 { 1.0 } else { g }, lag)
            })
            .collect();
        events.push(SeizureEvent {
            start_s,
            end_s: start_s + d,
            freq: traits.seizure_freq * rng.random_range(0.9..1.1),
            amplitude: draw(&mut rng, cfg.seizure_amplitude_uv),
            phase: rng.random_range(0.0..1.0),
            sources,
        });
    }
    events.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));

    let tracks: Vec<AnnotationTrack> = (0..cfg.n_annotators)
        .map(|a| {
            let j = cfg.annotator_jitter_s;
            let iv: Vec<Interval> = events
                .iter()
                .map(|e| {
                    let js = if j > 0.0 { rng.random_range(-j..j) } else { 0.0 };
                    let je = if j > 0.0 { rng.random_range(-j..j) } else { 0.0 };
                    ((e.start_s + js).clamp(0.0, dur), (e.end_s + je).clamp(0.0, dur))
                })
                .collect();
            AnnotationTrack::new(format!("expert{}", a + 1), iv)
        })
        .collect();

    // Electrode-level background.
    let (a1, a2, scale) = ar2(traits.background_freq, traits.pole_radius, fs);
    let mut electrodes: Vec<Vec<f64>> = Vec::with_capacity(ELECTRODES.len());
    for _ in 0..ELECTRODES.len() {
        let e_gain = BACKGROUND_UV * traits.gain * rng.random_range(0.85..1.15);
        let (mut x1, mut x2) = (0.0f64, 0.0f64);
        let mut sig = Vec::with_capacity(n);
        for t in 0..n + BURN_IN {
            let e: f64 = rng.sample(StandardNormal);
            let x = a1 * x1 + a2 * x2 + scale * e;
            x2 = x1;
            x1 = x;
            if t >= BURN_IN {
                let w: f64 = rng.sample(StandardNormal);
                sig.push(e_gain * x + WHITE_FLOOR_UV * w);
            }
        }
        electrodes.push(sig);
    }

    for ev in &events {
        let ramp = (ev.end_s - ev.start_s).min(8.0) / 4.0;
        let t0 = (ev.start_s * fs).floor() as usize;
        let t1 = ((ev.end_s * fs).ceil() as usize).min(n);
        for &(e, g, lag) in &ev.sources {
            let sig = &mut electrodes[e];
            for (t, v) in sig.iter_mut().enumerate().take(t1).skip(t0) {
                let tau = t as f64 / fs - ev.start_s;
                let left = ev.end_s - t as f64 / fs;
                if tau < 0.0 || left <= 0.0 {
                    continue;
                }
                let env = (tau / ramp).min(left / ramp).min(1.0);
                let cyc = ev.freq * (tau - lag) + ev.phase;
                *v += ev.amplitude * g * env * spike_wave(cyc.rem_euclid(1.0));
            }
        }
    }

    let mut signal = Vec::with_capacity(pairs.len() * n);
    for &(a, b) in pairs {
        signal.extend(electrodes[a].iter().zip(&electrodes[b]).map(|(x, y)| (x - y) as f32));
    }
    let neonate_id = format!("N{:02}", index + 1);
    let mut rec = Recording::new(
        format!("{neonate_id}-rec"),
        neonate_id,
        fs,
        cfg.montage.clone(),
        signal,
        tracks,
    )?;
    rec.true_events = events.iter().map(|e| (e.start_s, e.end_s)).collect();
    Ok(rec)
}

/// Generates the cohort described by `cfg`; fully determined by `cfg.seed`.
pub fn synth_cohort(cfg: &SynthConfig) -> Result<Vec<Recording>> {
    cfg.validate()?;
    let pairs = cfg.montage.electrode_pairs()?;
    (0..cfg.n_neonates)
        .map(|i| simulate_neonate(cfg, i, &pairs))
        .collect()
}
