use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::montage::Montage;
use crate::error::{Error, Result};

/// Half-open `[start_s, end_s)` interval in seconds.
pub type Interval = (f64, f64);

/// Seizure intervals marked by one annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTrack {
    pub annotator_id: String,
    pub events: Vec<Interval>,
}

impl AnnotationTrack {
    pub fn new(annotator_id: impl Into<String>, mut events: Vec<Interval>) -> Self {
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            annotator_id: annotator_id.into(),
            events,
        }
    }

    pub fn validate(&self, duration_s: f64) -> Result<()> {
        let mut prev_end = f64::NEG_INFINITY;
        for &(s, e) in &self.events {
            if !(s.is_finite() && e.is_finite()) || s >= e {
                return Err(Error::invalid(format!(
                    "annotator `{}`: bad interval [{s}, {e})",
                    self.annotator_id
                )));
            }
            if s < 0.0 || e > duration_s + 1e-9 {
                return Err(Error::invalid(format!(
                    "annotator `{}`: interval [{s}, {e}) outside [0, {duration_s}]",
                    self.annotator_id
                )));
            }
            if s < prev_end {
                return Err(Error::invalid(format!(
                    "annotator `{}`: overlapping intervals",
                    self.annotator_id
                )));
            }
            prev_end = e;
        }
        Ok(())
    }

    /// Total seizure time of this track within `span`.
    pub fn overlap_with(&self, span: Interval) -> f64 {
        self.events
            .iter()
            .map(|&(s, e)| (e.min(span.1) - s.max(span.0)).max(0.0))
            .sum()
    }
}

/// A continuous multichannel recording of one neonate.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub neonate_id: String,
    pub sampling_rate_hz: f64,
    pub montage: Montage,
    /// Row-major `C × T`, microvolts.
    pub signal: Arc<[f32]>,
    pub n_samples: usize,
    pub annotations: Vec<AnnotationTrack>,
    /// Ground-truth event intervals; only known for synthetic data.
    pub true_events: Vec<Interval>,
}

impl Recording {
    pub fn new(
        id: impl Into<String>,
        neonate_id: impl Into<String>,
        sampling_rate_hz: f64,
        montage: Montage,
        signal: Vec<f32>,
        annotations: Vec<AnnotationTrack>,
    ) -> Result<Self> {
        let c = montage.len();
        if c == 0 || signal.len() % c != 0 {
            return Err(Error::shape(format!(
                "{} samples cannot be split into {c} channels",
                signal.len()
            )));
        }
        let rec = Self {
            id: id.into(),
            neonate_id: neonate_id.into(),
            sampling_rate_hz,
            n_samples: signal.len() / c,
            montage,
            signal: signal.into(),
            annotations,
            true_events: Vec::new(),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        self.montage.validate()?;
        if !(self.sampling_rate_hz > 0.0 && self.sampling_rate_hz.is_finite()) {
            return Err(Error::invalid("sampling rate must be positive"));
        }
        if self.n_samples == 0 {
            return Err(Error::shape("recording has no samples"));
        }
        if self.signal.len() != self.montage.len() * self.n_samples {
            return Err(Error::shape(format!(
                "signal has {} values, expected {} × {}",
                self.signal.len(),
                self.montage.len(),
                self.n_samples
            )));
        }
        if let Some(pos) = self.signal.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample {
                channel: pos / self.n_samples,
                index: pos % self.n_samples,
            });
        }
        let dur = self.duration_s();
        for t in &self.annotations {
            t.validate(dur)?;
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.montage.len()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples as f64 / self.sampling_rate_hz
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.signal[c * self.n_samples..(c + 1) * self.n_samples]
    }
}

/// One fixed-length labelled clip.
#[derive(Debug, Clone, PartialEq)]
pub struct EegWindow {
    /// Row-major `C × L`.
    pub x: Arc<[f32]>,
    pub channels: usize,
    pub len: usize,
    pub y: u8,
    pub neonate_id: String,
    pub recording_id: String,
    pub offset_s: f64,
    pub sampling_rate_hz: f64,
    /// Ground-truth events clipped to the window, relative to its start.
    pub events: Vec<Interval>,
}

impl EegWindow {
    pub fn new(x: Vec<f32>, channels: usize, y: u8, neonate_id: impl Into<String>) -> Result<Self> {
        if channels == 0 || x.is_empty() || x.len() % channels != 0 {
            return Err(Error::shape(format!("{} values for {channels} channels", x.len())));
        }
        Ok(Self {
            len: x.len() / channels,
            x: x.into(),
            channels,
            y,
            neonate_id: neonate_id.into(),
            recording_id: String::new(),
            offset_s: 0.0,
            sampling_rate_hz: 200.0,
            events: Vec::new(),
        })
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.x[c * self.len..(c + 1) * self.len]
    }

    pub fn label(&self) -> bool {
        self.y == 1
    }

    /// Same window restricted/reordered to the given channel indices.
    pub fn select_channels(&self, idx: &[usize]) -> Self {
        let mut x = Vec::with_capacity(idx.len() * self.len);
        for &c in idx {
            x.extend_from_slice(self.channel(c));
        }
        Self {
            x: x.into(),
            channels: idx.len(),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nan() {
        let m = Montage::new("m", vec!["C3-P3".into()]).unwrap();
        let err = Recording::new("r", "n", 200.0, m, vec![0.0, f32::NAN, 1.0], vec![]).unwrap_err();
        assert!(err.to_string().contains("non-finite sample"), "{err}");
    }

    #[test]
    fn track_validation() {
        assert!(AnnotationTrack::new("a", vec![(0.0, 1.0), (0.5, 2.0)]).validate(10.0).is_err());
        assert!(AnnotationTrack::new("a", vec![(2.0, 1.0)]).validate(10.0).is_err());
        assert!(AnnotationTrack::new("a", vec![(9.0, 11.0)]).validate(10.0).is_err());
        assert!(AnnotationTrack::new("a", vec![(3.0, 4.0), (0.0, 1.0)]).validate(10.0).is_ok());
    }

    #[test]
    fn overlap_is_clipped_to_span() {
        let t = AnnotationTrack::new("a", vec![(0.0, 5.0), (8.0, 40.0)]);
        assert_eq!(t.overlap_with((3.0, 33.0)), 2.0 + 25.0);
    }
}
