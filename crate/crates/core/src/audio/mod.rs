//! Waveform ingestion, preprocessing and datasets.

pub mod dataset;
pub mod preprocess;
pub mod synth;
pub mod wav;

pub use dataset::{load_samples, make_splits, ColumnMap, Manifest, ManifestRow, Sample};
pub use preprocess::{load_clip, prepare, resample, TARGET_LEN, TARGET_RATE};
pub use synth::{synth_clip, synth_dataset};
pub use wav::{decode_wav, write_wav_pcm16};
