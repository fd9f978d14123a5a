//! Fixed-priority schedule simulation and end-to-end latency analysis of
//! cause-effect chains, with a deterministic-data-flow treatment that makes
//! the all-WCET schedule yield the exact maximum reaction time.
//!
//! Pipeline: build a [`System`], simulate it ([`sim`]), analyse chains
//! ([`chain`]), extract and enforce the data flow ([`ddf`]), run the treated
//! system with multi-buffer communication ([`runtime`]), and cross-check
//! everything against brute force ([`oracle`]).

pub mod benchgen;
pub mod chain;
pub mod ddf;
pub mod error;
pub mod io;
pub mod model;
pub mod oracle;
pub mod runtime;
pub mod sim;
pub mod time;

pub use chain::{CommRelation, Iac, Latency, RwBounds, SamplingWindow, Writer};
pub use ddf::{extract_ddf, transform, BufferPlan, Ddf, TransformedTaskSet};
pub use error::{Error, Result};
pub use model::{validate_task_set, CeGraph, Chain, Edge, JobId, System, TaskId, TaskSet, TaskSpec};
pub use sim::{simulate, ExecutionTimePolicy, Extreme, JobRecord, Trace, Workload};
pub use time::{Duration, Time, TickUnit};
