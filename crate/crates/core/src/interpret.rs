//! Occlusion maps: slide a zeroed span across the window and record how much
//! the predicted seizure probability drops.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{EegWindow, Interval};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::models::{window_tensor, Predictor};

/// One second at 200 Hz.
pub const DEFAULT_OCC_LEN: usize = 200;
pub const DEFAULT_STRIDE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OcclusionMode {
    /// Occlude all channels together; heat is `1×P`.
    Temporal,
    /// Occlude one channel at a time; heat is `C×P`.
    ChannelTemporal,
}

impl std::str::FromStr for OcclusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temporal" => Ok(Self::Temporal),
            "channel-temporal" => Ok(Self::ChannelTemporal),
            _ => Err(Error::invalid(format!("unknown occlusion mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMeta {
    pub neonate_id: String,
    pub recording_id: String,
    pub offset_s: f64,
    pub sampling_rate_hz: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionMap {
    pub mode: OcclusionMode,
    /// Rows are channels (or a single row in temporal mode), columns positions.
    pub heat: Tensor,
    pub occ_len: usize,
    pub stride: usize,
    /// Prediction on the unoccluded window.
    pub base_prob: f64,
    pub window: Option<WindowMeta>,
}

/// Number of occluder positions for a window of `len` samples.
pub fn positions(len: usize, occ_len: usize, stride: usize) -> Result<usize> {
    if occ_len == 0 || occ_len > len {
        return Err(Error::invalid(format!("occluder length {occ_len} must be in 1..={len}")));
    }
    if stride == 0 {
        return Err(Error::invalid("occluder stride must be positive"));
    }
    Ok((len - occ_len) / stride + 1)
}

/// Heat `p̂(x) − p̂(x with the span zeroed)` for every occluder position.
/// Positive heat means the span supports a seizure prediction.
pub fn occlusion_map(model: &dyn Predictor, x: &Tensor, occ_len: usize, stride: usize, mode: OcclusionMode) -> Result<OcclusionMap> {
    if x.shape().len() != 2 || x.dim(0) == 0 {
        return Err(Error::shape(format!("expected a C×L window, got {:?}", x.shape())));
    }
    let (c, l) = (x.dim(0), x.dim(1));
    let p = positions(l, occ_len, stride)?;
    let base_prob = model.predict(x)?;
    let rows: Vec<Vec<usize>> = match mode {
        OcclusionMode::Temporal => vec![(0..c).collect()],
        OcclusionMode::ChannelTemporal => (0..c).map(|ch| vec![ch]).collect(),
    };
    let mut heat = Vec::with_capacity(rows.len() * p);
    let mut occluded = x.clone();
    for chans in &rows {
        for pos in 0..p {
            let span = pos * stride..pos * stride + occ_len;
            for &ch in chans {
                occluded.data_mut()[ch * l..][span.clone()].fill(0.0);
            }
            heat.push(base_prob - model.predict(&occluded)?);
            for &ch in chans {
                occluded.data_mut()[ch * l..][span.clone()].copy_from_slice(&x.data()[ch * l..][span.clone()]);
            }
        }
    }
    let heat = Tensor::new(vec![rows.len(), p], heat)?;
    if !heat.is_finite() {
        return Err(Error::invalid("occlusion produced non-finite heat"));
    }
    Ok(OcclusionMap {
        mode,
        heat,
        occ_len,
        stride,
        base_prob,
        window: None,
    })
}

/// [`occlusion_map`] on a dataset window, keeping its provenance.
pub fn occlude_window(model: &dyn Predictor, w: &EegWindow, occ_len: usize, stride: usize, mode: OcclusionMode) -> Result<OcclusionMap> {
    let mut map = occlusion_map(model, &window_tensor(w), occ_len, stride, mode)?;
    map.window = Some(WindowMeta {
        neonate_id: w.neonate_id.clone(),
        recording_id: w.recording_id.clone(),
        offset_s: w.offset_s,
        sampling_rate_hz: w.sampling_rate_hz,
        label: w.y,
    });
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionSummary {
    pub mode: OcclusionMode,
    pub base_prob: f64,
    pub positions: usize,
    /// Row of the maximum heat (`None` in temporal mode).
    pub argmax_channel: Option<usize>,
    pub argmax_position: usize,
    /// Occluded span of the argmax, in seconds from the window start.
    pub argmax_start_s: f64,
    pub argmax_end_s: f64,
    pub max_heat: f64,
    pub window: Option<WindowMeta>,
}

impl OcclusionMap {
    pub fn positions(&self) -> usize {
        self.heat.dim(1)
    }

    fn fs(&self) -> f64 {
        self.window.as_ref().map_or(200.0, |w| w.sampling_rate_hz)
    }

    /// Start of the occluder at position `p`, in seconds.
    pub fn position_s(&self, p: usize) -> f64 {
        (p * self.stride) as f64 / self.fs()
    }

    /// Centre of the occluder at position `p`, in seconds.
    pub fn center_s(&self, p: usize) -> f64 {
        (p * self.stride) as f64 / self.fs() + self.occ_len as f64 / (2.0 * self.fs())
    }

    /// Heat averaged over rows: one value per position.
    pub fn temporal_profile(&self) -> Vec<f64> {
        let (r, p) = (self.heat.dim(0), self.heat.dim(1));
        (0..p).map(|j| (0..r).map(|i| self.heat.data()[i * p + j]).sum::<f64>() / r as f64).collect()
    }

    /// Mean heat over positions whose occluder centre lies inside `event`
    /// (seconds from the window start) and over the remaining positions.
    /// `None` when either side is empty.
    pub fn inside_outside(&self, event: Interval) -> Option<(f64, f64)> {
        let prof = self.temporal_profile();
        let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
        for (p, h) in prof.iter().enumerate() {
            let t = self.center_s(p);
            if t >= event.0 && t < event.1 {
                si += h;
                ni += 1;
            } else {
                so += h;
                no += 1;
            }
        }
        (ni > 0 && no > 0).then(|| (si / ni as f64, so / no as f64))
    }

    /// `position_s,channel,heat`; channel is `all` in temporal mode.
    pub fn to_csv(&self, channel_names: Option<&[String]>) -> String {
        let mut s = String::from("position_s,channel,heat\n");
        let p = self.positions();
        for r in 0..self.heat.dim(0) {
            let name = match self.mode {
                OcclusionMode::Temporal => "all".to_string(),
                OcclusionMode::ChannelTemporal => channel_names.and_then(|n| n.get(r).cloned()).unwrap_or_else(|| r.to_string()),
            };
            for j in 0..p {
                let _ = writeln!(s, "{},{name},{}", self.position_s(j), self.heat.data()[r * p + j]);
            }
        }
        s
    }

    pub fn summary(&self) -> OcclusionSummary {
        let p = self.positions();
        let (idx, &max_heat) = self
            .heat
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("map has at least one entry");
        let pos = idx % p;
        OcclusionSummary {
            mode: self.mode,
            base_prob: self.base_prob,
            positions: p,
            argmax_channel: (self.mode == OcclusionMode::ChannelTemporal).then_some(idx / p),
            argmax_position: pos,
            argmax_start_s: self.position_s(pos),
            argmax_end_s: self.position_s(pos) + self.occ_len as f64 / self.fs(),
            max_heat,
            window: self.window.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Probability rises with the mean absolute amplitude of the first half.
    struct FirstHalf;

    impl Predictor for FirstHalf {
        fn predict(&self, x: &Tensor) -> Result<f64> {
            let l = x.dim(1);
            let s: f64 = x.data().chunks(l).map(|r| r[..l / 2].iter().map(|v| v.abs()).sum::<f64>()).sum();
            Ok(1.0 - (-s / 1e5).exp())
        }
    }

    fn ramp(c: usize, l: usize) -> Tensor {
        Tensor::new(vec![c, l], (0..c * l).map(|i| (i % l) as f64 - 10.0).collect()).unwrap()
    }

    #[test]
    fn position_count_and_errors() {
        assert_eq!(positions(6000, 200, 100).unwrap(), 59);
        assert_eq!(positions(6000, 6000, 6000).unwrap(), 1);
        assert!(positions(10, 11, 1).is_err());
        assert!(positions(10, 2, 0).is_err());
        assert!(occlusion_map(&FirstHalf, &ramp(2, 20), 21, 1, OcclusionMode::Temporal).is_err());
    }

    #[test]
    fn full_occlusion_is_base_minus_zero_input() {
        let x = ramp(3, 40);
        let m = occlusion_map(&FirstHalf, &x, 40, 40, OcclusionMode::Temporal).unwrap();
        let zero = FirstHalf.predict(&Tensor::zeros(&[3, 40])).unwrap();
        assert_eq!(m.heat.data(), &[FirstHalf.predict(&x).unwrap() - zero]);
    }

    #[test]
    fn zero_span_gives_exactly_zero_heat() {
        let mut x = ramp(2, 40);
        for r in 0..2 {
            x.data_mut()[r * 40..r * 40 + 8].fill(0.0);
        }
        let m = occlusion_map(&FirstHalf, &x, 4, 4, OcclusionMode::ChannelTemporal).unwrap();
        assert_eq!(m.heat.shape(), &[2, 10]);
        for r in 0..2 {
            assert_eq!(m.heat.data()[r * 10], 0.0);
            assert_eq!(m.heat.data()[r * 10 + 1], 0.0);
        }
        // second half is ignored by the model
        assert!(m.heat.data()[9] == 0.0 && m.heat.data()[3] > 0.0);
    }

    #[test]
    fn inside_outside_and_summary() {
        let x = ramp(1, 400);
        let m = occlusion_map(&FirstHalf, &x, 20, 10, OcclusionMode::Temporal).unwrap();
        let (inside, outside) = m.inside_outside((0.0, 1.0)).unwrap();
        assert!(inside > outside);
        let s = m.summary();
        assert!(s.argmax_end_s <= 1.0 + 1e-12);
        assert_eq!(m.to_csv(None).lines().count(), 1 + m.positions());
        assert_eq!(m, occlusion_map(&FirstHalf, &x, 20, 10, OcclusionMode::Temporal).unwrap());
    }
}
