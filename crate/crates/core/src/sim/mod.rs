//! Cycle-level performance model of the hybrid MAT / R-MAC accelerator.

mod config;
mod cost;
mod oracle;
mod report;
mod schedule;
mod timeline;

pub use config::EngineConfig;
pub use cost::{cycles_mat, cycles_rmac_dense, cycles_rmac_dw, DenseWork, DwWork};
pub use oracle::{event_mat, event_operands, event_rmac_dense, event_rmac_dw, EventResult};
pub use report::{layer_overhead, simulate, EngineReport, LayerReport, SimReport, Totals};
pub use schedule::{
    schedule_attention, schedule_chain, schedule_dense, schedule_depthwise, schedule_inter_layer, schedule_intra_layer,
    schedule_pool, AttnJob, Segment, StepCosts,
};
pub use timeline::{Dep, Engine, TileOp, Timeline};

#[cfg(test)]
mod tests;
