//! Representation learning for arteriovenous-fistula auscultation audio.
//!
//! The pipeline runs from raw 8 kHz PCM recordings through wavelet
//! preprocessing, colored-noise augmentation, denoising-autoencoder
//! pretraining, latent-space arithmetic, and downstream blood-flow
//! classification. A synthetic cohort generator makes the whole chain
//! runnable and testable without clinical data.
//!
//! Module map:
//!
//! - [`signal_io`]: WAV I/O, preprocessing, cohort metadata.
//! - [`transforms`]: DWT coefficient views, FFT/STFT magnitudes, log1p.
//! - [`augment`]: noise synthesis and SNR mixing.
//! - [`nnet`]: the dense / Conv1D autoencoder engine (Adam, MSE).
//! - [`latent`]: latent extraction, site arithmetic, PCA, demographic fusion.
//! - [`downstream`]: RBF-SVM, KNN, boosted trees, metrics, ten-run protocol.
//! - [`synthdata`]: synthetic cohort with flow-class-dependent acoustics.
//! - [`pipeline`]: end-to-end orchestration shared by the CLI.

pub mod augment;
pub mod downstream;
pub mod error;
pub mod latent;
pub mod nnet;
pub mod pipeline;
pub mod seeding;
pub mod signal_io;
pub mod synthdata;
pub mod transforms;

pub use error::{Error, Result};
