use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalp electrodes of the 10-20 system with approximate 2-d positions
/// (x: left → right, y: back → front) on a unit head.
pub const ELECTRODES: [(&str, f64, f64); 19] = [
    ("Fp1", -0.3, 0.95),
    ("Fp2", 0.3, 0.95),
    ("F7", -0.8, 0.6),
    ("F3", -0.4, 0.55),
    ("Fz", 0.0, 0.5),
    ("F4", 0.4, 0.55),
    ("F8", 0.8, 0.6),
    ("T3", -1.0, 0.0),
    ("C3", -0.5, 0.0),
    ("Cz", 0.0, 0.0),
    ("C4", 0.5, 0.0),
    ("T4", 1.0, 0.0),
    ("T5", -0.8, -0.6),
    ("P3", -0.4, -0.55),
    ("Pz", 0.0, -0.5),
    ("P4", 0.4, -0.55),
    ("T6", 0.8, -0.6),
    ("O1", -0.3, -0.95),
    ("O2", 0.3, -0.95),
];

pub fn electrode_index(name: &str) -> Option<usize> {
    ELECTRODES
        .iter()
        .position(|(n, _, _)| n.eq_ignore_ascii_case(name))
}

const BIPOLAR_18: [&str; 18] = [
    "Fp2-F4", "F4-C4", "C4-P4", "P4-O2", "Fp1-F3", "F3-C3", "C3-P3", "P3-O1", "Fp2-F8", "F8-T4",
    "T4-T6", "T6-O2", "Fp1-F7", "F7-T3", "T3-T5", "T5-O1", "Fz-Cz", "Cz-Pz",
];

const BIPOLAR_3: [&str; 3] = ["C3-P3", "C4-P4", "P3-P4"];

/// Ordered list of bipolar channel labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Montage {
    pub name: String,
    pub channels: Vec<String>,
}

impl Montage {
    pub fn new(name: impl Into<String>, channels: Vec<String>) -> Result<Self> {
        let m = Self {
            name: name.into(),
            channels,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Montage("montage needs at least one channel".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.channels {
            if !seen.insert(c.as_str()) {
                return Err(Error::Montage(format!("duplicate channel `{c}`")));
            }
        }
        Ok(())
    }

    /// Double-banana longitudinal montage plus the midline chain.
    pub fn bipolar_18() -> Self {
        Self {
            name: "bipolar-18".into(),
            channels: BIPOLAR_18.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Reduced central/parietal montage.
    pub fn bipolar_3() -> Self {
        Self {
            name: "bipolar-3".into(),
            channels: BIPOLAR_3.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// `"18"`, `"3"` or a preset name.
    pub fn preset(key: &str) -> Result<Self> {
        match key {
            "18" | "bipolar-18" => Ok(Self::bipolar_18()),
            "3" | "bipolar-3" => Ok(Self::bipolar_3()),
            other => Err(Error::Montage(format!("unknown montage preset `{other}`"))),
        }
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// Resolves each `A-B` label into electrode indices.
    pub fn electrode_pairs(&self) -> Result<Vec<(usize, usize)>> {
        self.channels
            .iter()
            .map(|c| {
                let (a, b) = c
                    .split_once('-')
                    .ok_or_else(|| Error::Montage(format!("`{c}` is not a bipolar label")))?;
                let ia = electrode_index(a.trim())
                    .ok_or_else(|| Error::Montage(format!("unknown electrode `{a}` in `{c}`")))?;
                let ib = electrode_index(b.trim())
                    .ok_or_else(|| Error::Montage(format!("unknown electrode `{b}` in `{c}`")))?;
                if ia == ib {
                    return Err(Error::Montage(format!("`{c}` references one electrode twice")));
                }
                Ok((ia, ib))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        assert_eq!(Montage::bipolar_18().electrode_pairs().unwrap().len(), 18);
        assert_eq!(Montage::bipolar_3().channels, vec!["C3-P3", "C4-P4", "P3-P4"]);
        assert!(Montage::preset("7").is_err());
    }

    #[test]
    fn validation() {
        assert!(Montage::new("x", vec![]).is_err());
        assert!(Montage::new("x", vec!["C3-P3".into(), "C3-P3".into()]).is_err());
        let m = Montage::new("x", vec!["C3-Q9".into()]).unwrap();
        assert!(m.electrode_pairs().is_err());
    }

    #[test]
    fn every_electrode_is_observed_by_the_full_montage() {
        let pairs = Montage::bipolar_18().electrode_pairs().unwrap();
        for e in 0..ELECTRODES.len() {
            assert!(pairs.iter().any(|&(a, b)| a == e || b == e), "{}", ELECTRODES[e].0);
        }
    }
}
