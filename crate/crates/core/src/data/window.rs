//! Non-overlapping windowing and consensus labelling.

use serde::{Deserialize, Serialize};

use super::recording::{AnnotationTrack, EegWindow, Interval, Recording};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub window_s: f64,
    /// Minimum seizure overlap (seconds, inclusive) each annotator must mark.
    pub min_overlap_s: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_s: 30.0,
            min_overlap_s: 1.0,
        }
    }
}

/// 1 iff every track marks at least `min_overlap_s` of seizure inside `span`.
pub fn consensus_label(span: Interval, tracks: &[AnnotationTrack], min_overlap_s: f64) -> Result<u8> {
    if min_overlap_s < 0.0 || !min_overlap_s.is_finite() {
        return Err(Error::invalid("min_overlap_s must be non-negative"));
    }
    if tracks.is_empty() {
        return Err(Error::invalid("consensus needs at least one annotation track"));
    }
    let all = tracks.iter().all(|t| {
        let ov = t.overlap_with(span);
        // a zero threshold still requires some marked seizure
        ov > 0.0 && ov >= min_overlap_s
    });
    Ok(u8::from(all))
}

/// Window length in samples, if `window_s · fs` is a positive integer.
pub fn window_samples(window_s: f64, fs: f64) -> Result<usize> {
    let n = window_s * fs;
    let r = n.round();
    if !(r >= 1.0) || (n - r).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "window of {window_s} s at {fs} Hz is not a whole number of samples"
        )));
    }
    Ok(r as usize)
}

/// Cuts `rec` into consecutive, non-overlapping windows; the trailing
/// remainder is dropped. Recordings without annotations yield label 0.
pub fn make_windows(rec: &Recording, cfg: &WindowConfig) -> Result<Vec<EegWindow>> {
    let len = window_samples(cfg.window_s, rec.sampling_rate_hz)?;
    let count = rec.n_samples / len;
    let c = rec.channels();
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * len;
        let mut x = Vec::with_capacity(c * len);
        for ch in 0..c {
            x.extend_from_slice(&rec.channel(ch)[start..start + len]);
        }
        let offset_s = start as f64 / rec.sampling_rate_hz;
        let span = (offset_s, offset_s + cfg.window_s);
        let y = if rec.annotations.is_empty() {
            0
        } else {
            consensus_label(span, &rec.annotations, cfg.min_overlap_s)?
        };
        let events = rec
            .true_events
            .iter()
            .filter_map(|&(s, e)| {
                let (a, b) = (s.max(span.0), e.min(span.1));
                (b > a).then(|| (a - offset_s, b - offset_s))
            })
            .collect();
        out.push(EegWindow {
            x: x.into(),
            channels: c,
            len,
            y,
            neonate_id: rec.neonate_id.clone(),
            recording_id: rec.id.clone(),
            offset_s,
            sampling_rate_hz: rec.sampling_rate_hz,
            events,
        });
    }
    Ok(out)
}

/// Windows every recording of a cohort.
pub fn window_cohort(recs: &[Recording], cfg: &WindowConfig) -> Result<Vec<EegWindow>> {
    let mut all = Vec::new();
    for r in recs {
        all.extend(make_windows(r, cfg)?);
    }
    Ok(all)
}
