//! Numeric kernels with hand-derived backward passes for the fixed
//! sentence-encoder / video-transform / projection architecture.

pub mod adam;
pub mod fc;
pub mod gradcheck;
pub mod gru;
pub mod linalg;
pub mod params;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use fc::{fc_video_backward, fc_video_transform, sample_dropout_mask, FcCache};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, TensorCheck};
pub use gru::{embed_sentence, embed_sentence_backward, GruCache};
pub use linalg::{joint_project, joint_project_backward};
pub use params::{GruParams, ModelDims, ModelParams, NamedTensors, PARAM_NAMES};
pub use tensor::Tensor;
