//! Network configuration, layers, graph execution and cost accounting.

mod attention;
mod block;
mod config;
mod footprint;
mod graph;
mod manifest;

pub use attention::{attend, rpe, sdpa, AggregationHead, AttentionParams, RpeParams};
pub use block::{average_frequency, bc_resblock, BlockParams, TemporalBranch};
pub use config::{
    BlockPlan, LayerSpec, ModelConfig, NetworkPlan, Operator, Variant, BLOCK_FREQ_KERNEL,
    BLOCK_TIME_KERNEL, EMBED_DIM, FRAMES, HEAD_KERNEL, N_MELS, RPE_KERNEL, RPE_PADDING,
    STEM_KERNEL,
};
pub use footprint::{
    count_macs, count_params, footprint, reference_footprint, Footprint, LayerCost, RowCost,
};
pub use graph::{embed, Model, TraceStep, LOG_MEL_EPS};
pub use manifest::{manifest, RecordKind, RecordSpec};
