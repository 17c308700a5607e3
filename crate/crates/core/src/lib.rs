//! Low-light image enhancement network with a small reverse-mode autodiff
//! engine underneath.

pub mod attention;
pub mod augment;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod ilb;
pub mod image;
pub mod kernels;
pub mod lcp;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod seb;
pub mod selftest;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use autograd::{Gradients, Tape, Var};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::DlenConfig;
pub use dataset::{scan_dataset, ImagePair, PairedDataset};
pub use error::{Error, Result};
pub use image::{load_image, save_image, Image};
pub use metrics::{MetricReport, SsimKind};
pub use model::{mae_loss, DlenModel, EnhancedOutput};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::Params;
pub use rng::Prng;
pub use tensor::{Element, Tensor};
pub use train::{TrainOptions, Trainer};
