//! Rollouts, metric aggregation, forward-pass accounting and timing.

pub mod report;
pub mod rollout;
pub mod timing;
pub mod trace;

pub use report::{evaluate, EvalReport, LatencyStats, RolloutInfo};
pub use rollout::{rollout, ExecMode, PolicyBundle, RolloutConfig, RolloutOutput};
pub use timing::{latency_by_chunk_len, timing_probe, MIN_REPEATS};
pub use trace::{read_traces_csv, write_traces_csv, TraceRow};
