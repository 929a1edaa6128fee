use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{auprc, auroc};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub montage: String,
    pub n_windows: usize,
    pub n_positive: usize,
    /// `None` when the fold's labels make the metric undefined.
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
}

impl FoldMetrics {
    pub fn from_scores(fold: usize, montage: &str, scores: &[f64], labels: &[u8]) -> Self {
        let n_positive = labels.iter().filter(|&&l| l == 1).count();
        Self {
            fold,
            montage: montage.to_string(),
            n_windows: labels.len(),
            n_positive,
            auroc: auroc(scores, labels).ok(),
            auprc: auprc(scores, labels).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub kind: String,
    pub arch: String,
    pub folds: Vec<FoldMetrics>,
    /// Mean over folds where the metric is defined.
    pub mean_auroc: Option<f64>,
    pub mean_auprc: Option<f64>,
    pub meta: serde_json::Value,
}

fn mean_defined(vals: impl Iterator<Item = Option<f64>>, what: &str) -> Option<f64> {
    let all: Vec<Option<f64>> = vals.collect();
    let defined: Vec<f64> = all.iter().flatten().copied().collect();
    if defined.len() < all.len() {
        log::warn!("{what} undefined on {} fold(s); excluded from the average", all.len() - defined.len());
    }
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// SHA-256 of the canonical JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(bytes))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{x:.6}"))
}

impl MetricReport {
    pub fn new(kind: &str, arch: &str, folds: Vec<FoldMetrics>, meta: serde_json::Value) -> Self {
        let mean_auroc = mean_defined(folds.iter().map(|f| f.auroc), "AUROC");
        let mean_auprc = mean_defined(folds.iter().map(|f| f.auprc), "AUPRC");
        Self {
            kind: kind.into(),
            arch: arch.into(),
            folds,
            mean_auroc,
            mean_auprc,
            meta,
        }
    }

    /// One row per fold and montage, then one `average` row per montage.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("arch,fold,montage,n_windows,n_positive,auroc,auprc\n");
        for f in &self.folds {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                self.arch,
                f.fold,
                f.montage,
                f.n_windows,
                f.n_positive,
                cell(f.auroc),
                cell(f.auprc)
            );
        }
        let mut montages: Vec<&str> = self.folds.iter().map(|f| f.montage.as_str()).collect();
        montages.dedup();
        for m in montages {
            let rows: Vec<&FoldMetrics> = self.folds.iter().filter(|f| f.montage == m).collect();
            let a = mean_defined(rows.iter().map(|f| f.auroc), "AUROC");
            let p = mean_defined(rows.iter().map(|f| f.auprc), "AUPRC");
            let n: usize = rows.iter().map(|f| f.n_windows).sum();
            let np: usize = rows.iter().map(|f| f.n_positive).sum();
            let _ = writeln!(s, "{},average,{m},{n},{np},{},{}", self.arch, cell(a), cell(p));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`; returns the CSV path.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))?;
        Ok(csv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(fold: usize, a: Option<f64>) -> FoldMetrics {
        FoldMetrics {
            fold,
            montage: "18".into(),
            n_windows: 10,
            n_positive: 2,
            auroc: a,
            auprc: a.map(|v| v / 2.0),
        }
    }

    #[test]
    fn average_skips_undefined_folds() {
        let r = MetricReport::new("cv", "statenet", vec![row(1, Some(0.8)), row(2, None), row(3, Some(0.9))], serde_json::Value::Null);
        assert!((r.mean_auroc.unwrap() - 0.85).abs() < 1e-12);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 3 + 1);
        assert!(csv.lines().nth(2).unwrap().ends_with("undefined,undefined"));
        assert!(csv.lines().last().unwrap().starts_with("statenet,average,18,30,6,0.850000"));
    }

    #[test]
    fn hash_is_stable() {
        let a = config_hash(&serde_json::json!({"b": 1, "a": [1, 2]}));
        let b = config_hash(&serde_json::json!({"a": [1, 2], "b": 1}));
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
    }
}
