//! Causal-intervention augmentation for radar target recognition.
//!
//! Synthetic confounded scenes, a Fourier-domain masking and spatial
//! transform augmentation, a small CNN with manual gradients, a hybrid
//! structural/vector similarity and the triplet discrimination loss built on
//! it, and the training and ablation harness that ties them together.

pub mod checkpoint;
pub mod error;
pub mod fourier;
pub mod grid;
pub mod model;
pub mod pgm;
pub mod seed;
pub mod similarity;
pub mod spatial;
pub mod synthdata;
pub mod training;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use error::{Error, Result};
pub use fourier::{fft2, fftshift, ifft2, rfm, sample_mask_spec, MaskSpec};
pub use grid::{normalize_minmax, ComplexGrid2D, Grid2D};
pub use model::{backward, forward, forward_traced, init_params, sgd_step, FeatureBundle, FeatureMap, GradientBundle, ModelParams, ModelShape, Velocity};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};
pub use seed::{derive_sample_seed, SeedStream};
pub use similarity::{hm, hm_backward, stm, vam, HybridScore};
pub use spatial::{rst, sample_transform_spec, TransformKind, TransformSpec};
pub use synthdata::{gen_dataset, render_scene, ConfoundConfig, ImagingCondition, LabeledImage, SceneSpec, Split};
pub use training::experiment::{ExperimentConfig, Variant};
pub use training::{evaluate, train, AugmentConfig, EvalReport, LossReport, TrainConfig, TrainOutcome};
