//! Recordings, montages, windowing, consensus labels, patient-wise folds,
//! file ingestion and the synthetic cohort generator.

pub mod folds;
pub mod io;
pub mod montage;
pub mod recording;
pub mod synth;
pub mod window;

pub use folds::{assert_no_leakage, patient_folds, Fold, FoldSplit};
pub use io::{load_cohort, load_recording, save_cohort, Manifest};
pub use montage::Montage;
pub use recording::{AnnotationTrack, EegWindow, Interval, Recording};
pub use synth::{synth_cohort, SynthConfig};
pub use window::{consensus_label, make_windows, window_cohort, WindowConfig};
