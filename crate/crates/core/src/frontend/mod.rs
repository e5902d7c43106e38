//! Audio ingestion, log-Mel features, deltas, CMVN and sliding windows.

pub mod archive;
pub mod cmvn;
pub mod deltas;
pub mod logmel;
pub mod wav;
pub mod window;

pub use cmvn::{apply_cmvn, CmvnScope, CmvnStats};
pub use deltas::append_deltas;
pub use logmel::{compute_logmel, FrontendConfig, LogMelExtractor, LogMelSpectrogram};
pub use wav::Waveform;
pub use window::{segment_windows, WindowSpec};
