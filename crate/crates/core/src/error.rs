use crate::model::{JobId, TaskId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid task set: {0}")]
    InvalidTaskSet(String),
    #[error("invalid task {task}: {reason}")]
    InvalidTask { task: TaskId, reason: String },
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("cause-effect graph contains a cycle")]
    CyclicGraph,
    #[error("no execution time given for job {0}")]
    MissingExecutionTime(JobId),
    #[error("execution time {exec} of job {job} outside [{bcet}, {wcet}]")]
    ExecutionTimeOutOfRange { job: JobId, exec: u64, bcet: u64, wcet: u64 },
    #[error("scheduler stalled at t={0}: pending jobs but none eligible")]
    Stalled(u64),
    #[error("system is not schedulable: {0} deadline misses, first {1}")]
    Unschedulable(usize, JobId),
    #[error("chain analysis did not converge within {0} ticks of simulation")]
    WindowTooShort(u64),
    #[error("no valid reaction in the analysis window")]
    NoValidChain,
    #[error("DDF relation of edge {0} is not periodic in the steady state")]
    NonPeriodicRelation(crate::model::Edge),
    #[error("edge {0} is not part of the data flow")]
    UnknownEdge(crate::model::Edge),
    #[error("enumeration needs {needed} runs, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
    #[error("benchmark generation failed: {0}")]
    Generation(String),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
