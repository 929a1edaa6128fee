//! Cohort manifests and raw signal files.
//!
//! A manifest is JSON listing recordings; each signal file holds
//! little-endian `f32` samples, row-major `C × T`, exactly `4·C·T` bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::montage::Montage;
use super::recording::{AnnotationTrack, Interval, Recording};
use super::synth::SynthConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub cohort: String,
    /// Generator settings when the cohort is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    pub recordings: Vec<RecordingEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingEntry {
    pub id: String,
    pub neonate_id: String,
    pub fs: f64,
    pub channels: Vec<String>,
    pub n_samples: usize,
    #[serde(default = "default_dtype")]
    pub dtype: String,
    pub signal_file: PathBuf,
    #[serde(default)]
    pub annotations: Vec<AnnotationEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub true_events: Vec<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub montage: Option<String>,
}

fn default_dtype() -> String {
    "float32".into()
}

/// Either `{annotator, events}` or a bare array of `[start_s, end_s]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnnotationEntry {
    Named { annotator: String, events: Vec<Interval> },
    Bare(Vec<Interval>),
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn resolve_manifest(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

fn entry_to_recording(entry: &RecordingEntry, base: &Path) -> Result<Recording> {
    if entry.dtype != "float32" {
        return Err(Error::shape(format!("unsupported dtype `{}`", entry.dtype)));
    }
    let montage = Montage::new(entry.montage.clone().unwrap_or_else(|| "custom".into()), entry.channels.clone())?;
    let path = base.join(&entry.signal_file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let c = montage.len();
    let expected = 4 * c * entry.n_samples;
    if bytes.len() != expected {
        return Err(Error::shape(format!(
            "{}: {} bytes on disk, header declares {c} × {} float32 = {expected} bytes",
            path.display(),
            bytes.len(),
            entry.n_samples
        )));
    }
    let signal: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let tracks = entry
        .annotations
        .iter()
        .enumerate()
        .map(|(i, a)| match a {
            AnnotationEntry::Named { annotator, events } => AnnotationTrack::new(annotator.clone(), events.clone()),
            AnnotationEntry::Bare(events) => AnnotationTrack::new(format!("annotator{}", i + 1), events.clone()),
        })
        .collect();
    let mut rec = Recording::new(&entry.id, &entry.neonate_id, entry.fs, montage, signal, tracks)?;
    if rec.n_samples != entry.n_samples {
        return Err(Error::shape("sample count disagrees with header"));
    }
    rec.true_events = entry.true_events.clone();
    Ok(rec)
}

/// Loads and validates one recording from a manifest (file or cohort dir).
pub fn load_recording(manifest_path: &Path, recording_id: &str) -> Result<Recording> {
    let path = resolve_manifest(manifest_path);
    let manifest = Manifest::read(&path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entry = manifest
        .recordings
        .iter()
        .find(|r| r.id == recording_id)
        .ok_or_else(|| Error::invalid(format!("recording `{recording_id}` not in manifest")))?;
    entry_to_recording(entry, base)
}

/// Loads every recording listed in a manifest.
pub fn load_cohort(manifest_path: &Path) -> Result<(Manifest, Vec<Recording>)> {
    let path = resolve_manifest(manifest_path);
    let manifest = Manifest::read(&path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let recs = manifest
        .recordings
        .iter()
        .map(|e| entry_to_recording(e, base))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, recs))
}

/// Writes `recs` as `dir/manifest.json` plus `dir/signals/<id>.f32`.
pub fn save_cohort(dir: &Path, name: &str, recs: &[Recording], synth: Option<&SynthConfig>) -> Result<Manifest> {
    let sig_dir = dir.join("signals");
    fs::create_dir_all(&sig_dir).map_err(|e| Error::io(&sig_dir, e))?;
    let mut entries = Vec::with_capacity(recs.len());
    for r in recs {
        let rel = PathBuf::from("signals").join(format!("{}.f32", r.id));
        let mut bytes = Vec::with_capacity(r.signal.len() * 4);
        for v in r.signal.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let p = dir.join(&rel);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        entries.push(RecordingEntry {
            id: r.id.clone(),
            neonate_id: r.neonate_id.clone(),
            fs: r.sampling_rate_hz,
            channels: r.montage.channels.clone(),
            n_samples: r.n_samples,
            dtype: default_dtype(),
            signal_file: rel,
            annotations: r
                .annotations
                .iter()
                .map(|t| AnnotationEntry::Named {
                    annotator: t.annotator_id.clone(),
                    events: t.events.clone(),
                })
                .collect(),
            true_events: r.true_events.clone(),
            montage: Some(r.montage.name.clone()),
        });
    }
    let manifest = Manifest {
        cohort: name.to_string(),
        synth: synth.cloned(),
        recordings: entries,
    };
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path, values: &[f32], channels: &[&str], n_samples: usize) -> PathBuf {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join("sig.f32"), bytes).unwrap();
        let m = serde_json::json!({
            "cohort": "t",
            "recordings": [{
                "id": "r1", "neonate_id": "n1", "fs": 200.0,
                "channels": channels, "n_samples": n_samples,
                "signal_file": "sig.f32",
                "annotations": [[[1.0, 2.0]], {"annotator": "b", "events": [[1.5, 3.0]]}]
            }]
        });
        let p = dir.join("manifest.json");
        fs::write(&p, m.to_string()).unwrap();
        p
    }

    #[test]
    fn loads_declared_shape() {
        let dir = tempfile::tempdir().unwrap();
        let vals: Vec<f32> = (0..3 * 12000).map(|i| (i % 97) as f32).collect();
        let p = write_fixture(dir.path(), &vals, &["C3-P3", "C4-P4", "P3-P4"], 12000);
        assert_eq!(fs::metadata(dir.path().join("sig.f32")).unwrap().len(), 144_000);
        let r = load_recording(&p, "r1").unwrap();
        assert_eq!((r.channels(), r.n_samples), (3, 12000));
        assert_eq!(r.annotations[0].annotator_id, "annotator1");
        assert_eq!(r.annotations[1].annotator_id, "b");
        assert_eq!(r.channel(2)[5], vals[2 * 12000 + 5]);
    }

    #[test]
    fn nan_sample_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut vals = vec![0.0f32; 3 * 100];
        vals[150] = f32::NAN;
        let p = write_fixture(dir.path(), &vals, &["C3-P3", "C4-P4", "P3-P4"], 100);
        let err = load_recording(&p, "r1").unwrap_err();
        assert!(err.to_string().contains("non-finite sample"), "{err}");
    }

    #[test]
    fn file_sized_for_more_rows_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let vals = vec![0.0f32; 18 * 100];
        let p = write_fixture(dir.path(), &vals, &["C3-P3", "C4-P4", "P3-P4"], 100);
        assert!(matches!(load_recording(&p, "r1"), Err(Error::Shape(_))));
    }

    #[test]
    fn missing_file_and_unknown_id() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_recording(&dir.path().join("nope.json"), "r1"), Err(Error::Io { .. })));
        let vals = vec![0.0f32; 300];
        let p = write_fixture(dir.path(), &vals, &["C3-P3", "C4-P4", "P3-P4"], 100);
        assert!(load_recording(&p, "zzz").is_err());
        fs::remove_file(dir.path().join("sig.f32")).unwrap();
        assert!(matches!(load_recording(&p, "r1"), Err(Error::Io { .. })));
    }
}
