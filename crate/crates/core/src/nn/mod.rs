//! Small dense network engine with hand-written reverse-mode gradients.
//!
//! Networks are chains of [`LayerSpec`]s over row-major matrices (one row per
//! frame). Everything is single-threaded and bit-deterministic for a given
//! seed.

pub mod checkpoint;
pub mod gradcheck;
pub mod layer;
pub mod matrix;
pub mod network;
pub mod online;
pub mod optim;
pub mod train;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckReport};
pub use layer::{lhuc_amplitude, LayerSpec};
pub use matrix::Matrix;
pub use network::{cross_entropy, mse, AuxState, ForwardPass, Gradients, Network, Target};
pub use online::OnlineAvgState;
pub use optim::{Algorithm, OptimState, Schedule};
pub use train::{train, train_with_aux, Dataset, Targets, TrainOptions};
