//! BAM-CD: a double-stream residual encoder with an attention decoder for
//! bitemporal burnt-area segmentation.
//!
//! Both streams encode one acquisition each. At every level the two feature
//! maps form a skip tensor; the decoder climbs from the deepest level,
//! upsampling and fusing skips through ConvBlocks with scSE attention, and a
//! 1x1 head emits one logit per pixel.

mod config;
mod model;
mod train;

pub use config::{BamCdConfig, Combine, Sharing, SkipMode};
pub use model::{BamCdModel, Mode};
pub use train::{scene_tiles, trace_to_tsv, train, TraceRow, TrainOutcome, PROBABILITY_THRESHOLD};
