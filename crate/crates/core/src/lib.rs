//! Anchor-instance multiple-instance learning.
//!
//! Bags of instance features are split into spatial regions, anchor instances
//! are mined by their similarity to both the bag and their own region, and each
//! region is corrected by attending over anchors plus the adjacent region before
//! a gated-attention head predicts region- and bag-level labels.

pub mod ablate;
pub mod arc;
pub mod bag;
pub mod config;
pub mod dam;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod predictor;
pub mod rng;
pub mod saved;
pub mod selfcheck;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use arc::NeighborMode;
pub use config::RunConfig;
pub use bag::{Bag, ManifestRecord, RegionPartition};
pub use dam::{AnchorSet, Selector};
pub use metrics::{FoldReport, Summary};
pub use error::{Error, FormatError, Result};
pub use model::ModelParams;
pub use optim::{AdamWConfig, AdamWState};
pub use saved::SavedModel;
pub use pipeline::{PipelineConfig, Selections, Variant};
pub use synth::SynthConfig;
pub use tape::{Tape, Var};
pub use tensor::{cosine, Real, Tensor};
pub use train::{TrainConfig, Trained};
