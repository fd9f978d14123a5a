//! Job-level data flow along cause-effect chains and the reaction-time
//! metrics built on it.
//!
//! A [`CommRelation`] maps every reader job of an edge to the writer job it
//! consumed. From the relations of a chain's edges we build immediate forward
//! job chains: starting from the `(m+1)`-th head job, each step moves to the
//! first reader affected by the current job, either directly (it was read) or
//! through a later job of the same task that was read. Augmenting such a job
//! chain with the previous head sample `z` and the final write `z'` gives a
//! reaction whose length is `z' - z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Chain, Edge, JobId, TaskId, TaskSet};
use crate::sim::{schedulability_horizon, check_schedulability, simulate, ExecutionTimePolicy, Trace, Workload};
use crate::time::{Duration, Time};

/// The writer job a reader consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Writer {
    /// Nothing was written yet; the reader sees the initial value.
    Initial,
    /// Job index `k` of the writer task.
    Job(u64),
}

impl Writer {
    pub fn job(self) -> Option<u64> {
        match self {
            Writer::Initial => None,
            Writer::Job(k) => Some(k),
        }
    }
}

/// Reader-to-writer mapping of one edge, total on reader jobs `1..=len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommRelation {
    pub edge: Edge,
    readers: Vec<Writer>,
    // first_reader[l - 1]: smallest reader reading writer job l.
    first_reader: Vec<Option<u64>>,
    // later_reader[l - 1]: smallest reader reading any writer job >= l.
    later_reader: Vec<Option<u64>>,
}

impl CommRelation {
    /// `readers[k - 1]` is the writer read by reader job `k`.
    pub fn from_readers(edge: Edge, readers: Vec<Writer>) -> Self {
        let max_writer = readers.iter().filter_map(|w| w.job()).max().unwrap_or(0) as usize;
        let mut first_reader = vec![None; max_writer];
        for (i, w) in readers.iter().enumerate() {
            if let Writer::Job(l) = *w {
                let slot = &mut first_reader[(l - 1) as usize];
                let k = i as u64 + 1;
                if slot.is_none_or(|prev| k < prev) {
                    *slot = Some(k);
                }
            }
        }
        let mut later_reader = vec![None; max_writer];
        let mut best: Option<u64> = None;
        for l in (0..max_writer).rev() {
            best = match (best, first_reader[l]) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            later_reader[l] = best;
        }
        CommRelation { edge, readers, first_reader, later_reader }
    }

    /// Number of reader jobs covered.
    pub fn len(&self) -> usize {
        self.readers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readers.is_empty()
    }

    pub fn writer_of(&self, reader: u64) -> Option<Writer> {
        reader.checked_sub(1).and_then(|i| self.readers.get(i as usize)).copied()
    }

    /// `(reader, writer)` pairs in reader order.
    pub fn pairs(&self) -> impl Iterator<Item = (u64, Writer)> + '_ {
        self.readers.iter().enumerate().map(|(i, &w)| (i as u64 + 1, w))
    }

    /// Readers of writer job `writer`.
    pub fn readers_of(&self, writer: u64) -> impl Iterator<Item = u64> + '_ {
        self.pairs().filter(move |&(_, w)| w == Writer::Job(writer)).map(|(r, _)| r)
    }

    /// Whether writer job `writer` was read by anyone.
    pub fn is_read(&self, writer: u64) -> bool {
        self.first_reader(writer).is_some()
    }

    fn first_reader(&self, writer: u64) -> Option<u64> {
        writer.checked_sub(1).and_then(|i| self.first_reader.get(i as usize).copied().flatten())
    }

    /// The first reader affected by writer job `writer`.
    ///
    /// If the job was read, that is its smallest reader. Otherwise its output
    /// only reaches readers through later jobs of the same task, and the
    /// successor is the smallest reader of any later job that was read.
    pub fn successor(&self, writer: u64) -> Option<u64> {
        if let Some(r) = self.first_reader(writer) {
            return Some(r);
        }
        self.later_reader.get(writer as usize).copied().flatten()
    }

    /// Restriction to readers whose read happened in the steady state, i.e.
    /// equality of two relations over a reader range.
    pub fn agrees_on(&self, other: &CommRelation, readers: std::ops::RangeInclusive<u64>) -> bool {
        readers.into_iter().all(|k| self.writer_of(k) == other.writer_of(k))
    }
}

/// Register communication: each reader reads the most recent write at or
/// before its read event.
///
/// Readers that start at or after the trace horizon are left out: jobs
/// released from the horizon on are not simulated, so such starts are not
/// reliable.
pub fn register_comm(trace: &Trace, edge: Edge) -> CommRelation {
    let finishes: Vec<Time> = trace.jobs_of(edge.writer).iter().map(|r| r.finish).collect();
    let mut readers = Vec::new();
    for rec in trace.jobs_of(edge.reader) {
        let re = trace.read_event(rec.job).expect("record exists");
        if re >= trace.horizon {
            break;
        }
        let n = finishes.partition_point(|&f| f <= re);
        readers.push(if n == 0 { Writer::Initial } else { Writer::Job(n as u64) });
    }
    CommRelation::from_readers(edge, readers)
}

/// Register relations of every edge of `chain`.
pub fn register_relations(trace: &Trace, chain: &Chain) -> Vec<CommRelation> {
    chain.edges().map(|e| register_comm(trace, e)).collect()
}

/// Immediate forward job chain for sampling index `m`, starting at the
/// `(m+1)`-th head job. `None` when some step runs past the relations.
pub fn immediate_forward_chain(chain: &Chain, relations: &[CommRelation], m: u64) -> Option<Vec<JobId>> {
    debug_assert_eq!(relations.len() + 1, chain.len());
    let mut jobs = Vec::with_capacity(chain.len());
    let mut current = JobId::new(chain.head(), m + 1);
    jobs.push(current);
    for (rel, &next_task) in relations.iter().zip(&chain.tasks()[1..]) {
        let k = rel.successor(current.k)?;
        current = JobId::new(next_task, k);
        jobs.push(current);
    }
    Some(jobs)
}

/// An immediate forward augmented job chain `(z, jobs, z')`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Iac {
    pub m: u64,
    pub z: Time,
    pub jobs: Vec<JobId>,
    pub z_prime: Time,
}

impl Iac {
    pub fn length(&self) -> Duration {
        self.z_prime - self.z
    }
}

/// Adds `z`, the sampling instant of `J_1^m`, and `z' = we(last job)` from the trace.
///
/// `None` for `m = 0` (no earlier sample), when a job is missing from the
/// trace, or when the last job finishes past the horizon.
pub fn augment(jobs: Vec<JobId>, trace: &Trace, m: u64) -> Option<Iac> {
    if m == 0 {
        return None;
    }
    let head = jobs.first()?.task;
    let z = trace.sample_event(JobId::new(head, m))?;
    let z_prime = trace.write_event(*jobs.last()?)?;
    if z_prime > trace.horizon {
        return None;
    }
    debug_assert!(z_prime >= z);
    Some(Iac { m, z, jobs, z_prime })
}

/// Sampling indices analysed: all `m >= 1` whose head job `J_1^m` is released
/// in `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingWindow {
    pub start: Time,
    pub end: Time,
}

impl SamplingWindow {
    /// `[0, 2H + O_max)`, which covers the transient and one steady
    /// hyperperiod.
    pub fn periodic(hyperperiod: Duration, max_phase: Time) -> Self {
        SamplingWindow { start: 0, end: 2 * hyperperiod + max_phase }
    }

    pub fn of_trace(trace: &Trace) -> Self {
        Self::periodic(trace.hyperperiod, trace.max_phase)
    }
}

/// All augmented chains whose head sample falls in `window`.
///
/// Fails with [`Error::WindowTooShort`] if any of them cannot be completed
/// within the trace.
pub fn iacs(trace: &Trace, chain: &Chain, relations: &[CommRelation], window: SamplingWindow) -> Result<Vec<Iac>> {
    let head = chain.head();
    if head >= trace.task_count() {
        return Err(Error::UnknownTask(head));
    }
    let mut out = Vec::new();
    for rec in trace.jobs_of(head) {
        if rec.release < window.start {
            continue;
        }
        if rec.release >= window.end {
            break;
        }
        let m = rec.job.k;
        let iac = immediate_forward_chain(chain, relations, m)
            .and_then(|jobs| augment(jobs, trace, m))
            .ok_or(Error::WindowTooShort(trace.horizon))?;
        out.push(iac);
    }
    Ok(out)
}

/// Result of a max or min reaction-time computation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latency {
    pub value: Duration,
    pub witness: Iac,
}

fn check_chain(trace: &Trace, chain: &Chain) -> Result<()> {
    match chain.tasks().iter().find(|&&t| t >= trace.task_count()) {
        Some(&t) => Err(Error::UnknownTask(t)),
        None => Ok(()),
    }
}

fn refuse_unschedulable(trace: &Trace) -> Result<()> {
    check_schedulability(trace).into_result()
}

/// Maximum reaction time over the sampling window, with the chain attaining it.
pub fn mrt_with(trace: &Trace, chain: &Chain, relations: &[CommRelation], window: SamplingWindow) -> Result<Latency> {
    check_chain(trace, chain)?;
    refuse_unschedulable(trace)?;
    iacs(trace, chain, relations, window)?
        .into_iter()
        // first maximal m wins
        .rev()
        .max_by_key(Iac::length)
        .map(|witness| Latency { value: witness.length(), witness })
        .ok_or(Error::NoValidChain)
}

/// Minimum reaction time over the sampling window.
pub fn mrt_min_with(trace: &Trace, chain: &Chain, relations: &[CommRelation], window: SamplingWindow) -> Result<Latency> {
    check_chain(trace, chain)?;
    refuse_unschedulable(trace)?;
    iacs(trace, chain, relations, window)?
        .into_iter()
        .min_by_key(Iac::length)
        .map(|witness| Latency { value: witness.length(), witness })
        .ok_or(Error::NoValidChain)
}

/// MRT of `chain` in one schedule, under register communication.
pub fn mrt(trace: &Trace, chain: &Chain) -> Result<Latency> {
    check_chain(trace, chain)?;
    mrt_with(trace, chain, &register_relations(trace, chain), SamplingWindow::of_trace(trace))
}

/// Minimum reaction time in one schedule (normally the all-BCET one),
/// under register communication.
pub fn mrt_min(trace: &Trace, chain: &Chain) -> Result<Latency> {
    check_chain(trace, chain)?;
    mrt_min_with(trace, chain, &register_relations(trace, chain), SamplingWindow::of_trace(trace))
}

/// Runs `f` on traces of growing length until it stops failing with
/// [`Error::WindowTooShort`].
///
/// Starts at `3H + O_max` and grows by one hyperperiod at a time, up to
/// `extra_hyperperiods` more.
pub fn with_growing_horizon<W, T>(
    workload: &W,
    policy: &ExecutionTimePolicy,
    extra_hyperperiods: u64,
    mut f: impl FnMut(&Trace) -> Result<T>,
) -> Result<T>
where
    W: Workload + ?Sized,
{
    let h = workload.task_set().hyperperiod();
    let mut horizon = 3 * h + workload.max_phase();
    for _ in 0..=extra_hyperperiods {
        let trace = simulate(workload, policy, horizon)?;
        match f(&trace) {
            Err(Error::WindowTooShort(_)) => horizon += h,
            other => return other,
        }
    }
    Err(Error::WindowTooShort(horizon))
}

/// Hyperperiods beyond `3H + O_max` that a chain of `len` tasks may need.
pub fn extension_budget(len: usize) -> u64 {
    2 * len as u64 + 2
}

/// Simulates `set` under `policy` and computes the register-communication MRT.
pub fn analyze_register(set: &TaskSet, chain: &Chain, policy: &ExecutionTimePolicy) -> Result<Latency> {
    chain.check_against(set)?;
    with_growing_horizon(set, policy, extension_budget(chain.len()), |trace| mrt(trace, chain))
}

/// Minimum counterpart of [`analyze_register`].
pub fn analyze_register_min(set: &TaskSet, chain: &Chain, policy: &ExecutionTimePolicy) -> Result<Latency> {
    chain.check_against(set)?;
    with_growing_horizon(set, policy, extension_budget(chain.len()), |trace| mrt_min(trace, chain))
}

/// Bounds on read and write events of one job across all execution times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobBounds {
    pub re_min: Time,
    pub re_max: Time,
    pub we_min: Time,
    pub we_max: Time,
}

/// Read/write bounds from the all-BCET and all-WCET schedules, extended
/// periodically past the simulated window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RwBounds {
    hyperperiod: Duration,
    frames: Vec<u64>,
    jobs: Vec<Vec<JobBounds>>,
    /// Set when the all-WCET schedule misses a deadline.
    pub unreliable: bool,
}

impl RwBounds {
    /// Builds bounds from explicit per-task tables. `frames[i]` is the number
    /// of jobs of task `i` per hyperperiod.
    pub fn from_parts(hyperperiod: Duration, frames: Vec<u64>, jobs: Vec<Vec<JobBounds>>) -> Self {
        RwBounds { hyperperiod, frames, jobs, unreliable: false }
    }

    pub fn get(&self, job: JobId) -> Option<JobBounds> {
        let table = self.jobs.get(job.task)?;
        let n = table.len() as u64;
        if job.k == 0 {
            return None;
        }
        if job.k <= n {
            return Some(table[(job.k - 1) as usize]);
        }
        let frames = self.frames[job.task];
        let q = (job.k - n).div_ceil(frames);
        let k = job.k.checked_sub(q * frames).filter(|&k| k >= 1)?;
        let b = table[(k - 1) as usize];
        let shift = q * self.hyperperiod;
        Some(JobBounds {
            re_min: b.re_min + shift,
            re_max: b.re_max + shift,
            we_min: b.we_min + shift,
            we_max: b.we_max + shift,
        })
    }

    pub fn jobs_of(&self, task: TaskId) -> &[JobBounds] {
        self.jobs.get(task).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Bounds of every job released in `[0, 2H + O_max)`.
///
/// Simulates one hyperperiod further so that late events of those jobs are
/// not cut short by the horizon.
pub fn rw_bounds<W: Workload + ?Sized>(workload: &W) -> Result<RwBounds> {
    let set = workload.task_set();
    let end = 2 * set.hyperperiod() + workload.max_phase();
    let horizon = schedulability_horizon(workload);
    let best = simulate(workload, &ExecutionTimePolicy::AllBcet, horizon)?;
    let worst = simulate(workload, &ExecutionTimePolicy::AllWcet, horizon)?;
    let unreliable = worst.deadline_misses().next().is_some();
    let jobs = (0..set.len())
        .map(|task| {
            best.jobs_of(task)
                .iter()
                .zip(worst.jobs_of(task))
                .take_while(|(b, _)| b.release < end)
                .map(|(b, w)| JobBounds {
                    re_min: best.read_event(b.job).expect("present"),
                    re_max: worst.read_event(w.job).expect("present"),
                    we_min: b.finish,
                    we_max: w.finish,
                })
                .collect()
        })
        .collect();
    let frames = (0..set.len()).map(|t| set.frames(t)).collect();
    Ok(RwBounds { hyperperiod: set.hyperperiod(), frames, jobs, unreliable })
}
