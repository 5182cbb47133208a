//! The M2U-Net layer graph: declarative specs, the executable graph, and
//! parameter / multiply-add accounting.

mod audit;
mod graph;
mod spec;

pub use audit::{
    audit, madds_count, param_count, AuditReport, RowReport, CANONICAL_TOTAL_PARAMS,
    PUBLISHED_ROW_PARAMS,
};
pub use graph::{build_m2unet, Block, ConvBn, ModelGrads, ModelGraph, TrainPass, UnitGrads};
pub use spec::{
    hidden_width, m2unet_spec, mini_spec, BlockPlan, BottleneckSpec, GraphSpec, LayerSpec,
    OperatorKind, Plan, RowPlan, SkipSource, UnitPlan, DEFAULT_DECODER_T,
};
