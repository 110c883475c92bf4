//! Weakly supervised text-to-video moment retrieval with text-guided
//! temporal attention.
//!
//! A sentence encoder (word embeddings followed by a GRU) and a per-unit
//! video transform are trained jointly so that, for every video-sentence
//! pair, the attention-pooled video feature and the sentence feature land
//! close together in a shared embedding space. Only video-level sentence
//! annotations are used for training. At test time the same attention
//! weights rank temporal candidates inside the video.
//!
//! Module map:
//!
//! - [`dataio`]: feature, manifest and checkpoint formats, synthetic data
//! - [`nn`]: tensors, embedding + GRU, FC/ReLU/dropout, projections, Adam,
//!   finite-difference gradient checking
//! - [`attention`]: cosine similarity, temporal softmax, attention pooling
//! - [`loss`]: joint-space similarity, bidirectional triplet ranking loss,
//!   full batch forward/backward
//! - [`trainer`]: training loop, schedule, validation-driven selection
//! - [`eval`]: candidate generation, ranking, R@K / IoU / mIoU
//! - [`cli`]: the `tga` command-line tool

pub mod attention;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod loss;
pub mod nn;
pub mod real;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;
