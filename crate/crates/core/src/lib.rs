//! Inference benchmark orchestration.
//!
//! A [`model::SweepPlan`] names devices, models, precisions and batch sizes.
//! [`sweep::execute_sweep`] runs the full matrix against a backend (the
//! in-process [`sim::SimBackend`] or an external worker speaking the line
//! protocol in [`protocol`]), producing one [`model::RunRecord`] per run.
//! [`stats`] and [`report`] turn records into summaries, peak tables,
//! speedups, Pareto fronts and performance per watt.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod golden;
pub mod model;
pub mod presets;
pub mod protocol;
pub mod report;
pub mod sim;
pub mod stats;
pub mod sweep;

pub use model::{
    AnalysisReport, ConfigKey, DeviceKind, DeviceSpec, LatencySample, MetricSummary, ModelSpec,
    PrecisionMode, RunKey, RunRecord, RunStatus, SweepPlan, TelemetrySample,
};
pub use protocol::{Backend, BackendError, BackendFactory};
pub use sim::{DeviceProfile, SimBackend, SimFactory};
