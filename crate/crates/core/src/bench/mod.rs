//! Generation accuracy and cost sweeps over top-k, modes and lengths.

pub mod metrics;
pub mod report;
pub mod runner;
pub mod timing;

pub use metrics::{accuracy, epr_long, epr_short, mem_per_token, pbs_per_token, throughput};
pub use report::{Aggregates, CellReport, GenerationReport, RunRecord, TokenStep, CSV_COLUMNS, SCHEMA_VERSION};
pub use runner::{load_model, load_prompts, run_experiment, CompiledPlans, ExperimentSpec, Keys, OutputFormat, PlanCache};
pub use timing::{kv_timing, KvTiming};
