//! Training harness: configuration, optimizer, toy data, training loops,
//! evaluation, and metrics plumbing.

pub mod adam;
pub mod checks;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod toydata;
pub mod train;

pub use adam::{adam_step, AdamParams, AdamState};
pub use checks::{identity_sweep, run_gradcheck, GradLoss, GradcheckReport, IdentityReport};
pub use config::{Method, TrainConfig};
pub use eval::{evaluate, EvalReport};
pub use metrics::{parse_metrics_csv, render_metrics_csv, write_metrics_csv, MetricsRow, METRICS_HEADER};
pub use toydata::{gen_toy_data, task_conditions, TaskKind, SIGMA_BAD, SIGMA_GOOD};
pub use train::{finetune, pretrain_reference, StepHook};
