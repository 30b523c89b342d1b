//! Mask-based speech enhancement with time-frequency attention.
//!
//! The pipeline is waveform → STFT magnitude → ResTCN mask estimator (optionally
//! with time-frequency attention in every block) → mask applied to the noisy
//! spectrum → inverse STFT with the noisy phase.
//!
//! * [`audio`]: WAV I/O, synthetic clean signals, colored noise, SNR mixing.
//! * [`stft`]: square-root-Hann analysis/synthesis at 512/256 samples.
//! * [`layers`]: causal dilated convolution, frame-wise layer norm and affine maps.
//! * [`attention`]: the time/frequency attention branches and their rank-1 combination.
//! * [`restcn`]: the residual TCN backbone and parameter accounting.
//! * [`masks`]: IRM/PSM targets, mask application and enhancement.
//! * [`data`]: on-the-fly mixture generation.
//! * [`train`]: MSE loss, value clipping, Adam and the epoch loop.
//! * [`metrics`]: SI-SDR, segmental SNR and per-condition reports.

pub mod attention;
pub mod audio;
pub mod data;
mod error;
pub mod layers;
pub mod masks;
pub mod metrics;
pub mod restcn;
pub mod stft;
pub mod train;

pub use error::{Error, Result};
