//! Discrete-event simulation of single-core, time-triggered, fixed-priority
//! preemptive scheduling.
//!
//! The simulator is generic over a [`Workload`], which supplies release
//! times, priorities and an eligibility predicate. A plain [`TaskSet`]
//! releases every job at its periodic release and makes it eligible
//! immediately; the transformed task set in [`crate::ddf`] shifts releases
//! and blocks readers until their writers are done.
//!
//! Events at the same instant are serialized as: finishes, then releases,
//! then the dispatch decision (and with it at most one start).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{JobId, TaskId, TaskSet, TaskSpec};
use crate::time::{Duration, Time};

/// Which bound a job falls back to when a policy does not name it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extreme {
    Bcet,
    Wcet,
}

/// How long each job executes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ExecutionTimePolicy {
    AllWcet,
    AllBcet,
    /// Per-job execution times. Jobs not in the map use `fallback`, or are an
    /// error if there is none.
    Explicit {
        times: BTreeMap<JobId, Duration>,
        fallback: Option<Extreme>,
    },
    /// Uniform integer draw in `[B, W]`, derived from the seed and the job id
    /// only, so a job gets the same time no matter how the schedule unfolds.
    Sampled { seed: u64 },
}

impl ExecutionTimePolicy {
    pub fn explicit(times: BTreeMap<JobId, Duration>) -> Self {
        ExecutionTimePolicy::Explicit { times, fallback: None }
    }

    pub fn exec_time(&self, job: JobId, task: &TaskSpec) -> Result<Duration> {
        let exec = match self {
            ExecutionTimePolicy::AllWcet => task.wcet,
            ExecutionTimePolicy::AllBcet => task.bcet,
            ExecutionTimePolicy::Explicit { times, fallback } => match (times.get(&job), fallback) {
                (Some(&e), _) => e,
                (None, Some(Extreme::Wcet)) => task.wcet,
                (None, Some(Extreme::Bcet)) => task.bcet,
                (None, None) => return Err(Error::MissingExecutionTime(job)),
            },
            ExecutionTimePolicy::Sampled { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(job_seed(*seed, job));
                rng.random_range(task.bcet..=task.wcet)
            }
        };
        if exec < task.bcet || exec > task.wcet {
            return Err(Error::ExecutionTimeOutOfRange { job, exec, bcet: task.bcet, wcet: task.wcet });
        }
        Ok(exec)
    }
}

impl fmt::Display for ExecutionTimePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecutionTimePolicy::AllWcet => f.write_str("all-wcet"),
            ExecutionTimePolicy::AllBcet => f.write_str("all-bcet"),
            ExecutionTimePolicy::Explicit { times, fallback } => {
                write!(f, "explicit({} jobs", times.len())?;
                match fallback {
                    Some(Extreme::Wcet) => f.write_str(", else wcet)"),
                    Some(Extreme::Bcet) => f.write_str(", else bcet)"),
                    None => f.write_str(")"),
                }
            }
            ExecutionTimePolicy::Sampled { seed } => write!(f, "sampled(seed={seed})"),
        }
    }
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed number `index` derived from `seed`, e.g. one per run.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix(seed ^ mix(index.wrapping_add(0x5EED)))
}

fn job_seed(seed: u64, job: JobId) -> u64 {
    mix(mix(seed ^ mix(job.task as u64)) ^ job.k)
}

/// Completion status visible to eligibility predicates.
#[derive(Debug, Clone)]
pub struct SchedulerState {
    finished: Vec<Vec<bool>>,
}

impl SchedulerState {
    pub fn is_finished(&self, job: JobId) -> bool {
        job.k >= 1
            && self
                .finished
                .get(job.task)
                .and_then(|v| v.get((job.k - 1) as usize))
                .copied()
                .unwrap_or(false)
    }
}

/// Something the simulator can schedule.
pub trait Workload {
    fn task_set(&self) -> &TaskSet;

    fn release(&self, job: JobId) -> Time {
        self.task_set().task(job.task).release(job.k)
    }

    /// Absolute deadline: the job's periodic release plus the period.
    fn deadline(&self, job: JobId) -> Time {
        let t = self.task_set().task(job.task);
        t.release(job.k) + t.period
    }

    fn priority(&self, job: JobId) -> i64 {
        self.task_set().task(job.task).priority
    }

    /// Whether a released, unfinished job may run at `now`.
    fn eligible(&self, job: JobId, now: Time, _state: &SchedulerState) -> bool {
        now >= self.release(job)
    }

    /// Latest first-hyperperiod release phase; windows are anchored on it.
    fn max_phase(&self) -> Time {
        self.task_set().max_phase()
    }
}

impl Workload for TaskSet {
    fn task_set(&self) -> &TaskSet {
        self
    }
}

/// Hooks called as the schedule unfolds.
pub trait SimObserver {
    fn on_release(&mut self, _job: JobId, _at: Time) {}
    fn on_start(&mut self, _job: JobId, _at: Time) {}
    fn on_finish(&mut self, _job: JobId, _at: Time) {}
}

impl SimObserver for () {}

/// One executed job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job: JobId,
    pub release: Time,
    pub deadline: Time,
    pub start: Time,
    pub finish: Time,
    pub exec: Duration,
    /// Intervals between start and finish during which the job did not run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub preemptions: Vec<(Time, Time)>,
}

impl JobRecord {
    pub fn deadline_miss(&self) -> bool {
        self.finish > self.deadline
    }

    /// Execution intervals, in order.
    pub fn segments(&self) -> Vec<(Time, Time)> {
        let mut out = Vec::with_capacity(self.preemptions.len() + 1);
        let mut from = self.start;
        for &(a, b) in &self.preemptions {
            out.push((from, a));
            from = b;
        }
        out.push((from, self.finish));
        out
    }
}

/// A complete simulated schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    /// Every job released strictly before the horizon is in the trace.
    pub horizon: Time,
    pub policy: String,
    pub hyperperiod: Duration,
    pub max_phase: Time,
    sensors: BTreeSet<TaskId>,
    jobs: Vec<Vec<JobRecord>>,
}

impl Trace {
    pub fn record(&self, job: JobId) -> Option<&JobRecord> {
        if job.k == 0 {
            return None;
        }
        self.jobs.get(job.task)?.get((job.k - 1) as usize)
    }

    pub fn jobs_of(&self, task: TaskId) -> &[JobRecord] {
        self.jobs.get(task).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn task_count(&self) -> usize {
        self.jobs.len()
    }

    pub fn records(&self) -> impl Iterator<Item = &JobRecord> {
        self.jobs.iter().flatten()
    }

    pub fn is_sensor(&self, task: TaskId) -> bool {
        self.sensors.contains(&task)
    }

    /// Read event of inputs produced by other tasks: the start time.
    pub fn read_event(&self, job: JobId) -> Option<Time> {
        self.record(job).map(|r| r.start)
    }

    /// Sampling instant of external input: release for sensor tasks, start
    /// otherwise.
    pub fn sample_event(&self, job: JobId) -> Option<Time> {
        let r = self.record(job)?;
        Some(if self.is_sensor(job.task) { r.release } else { r.start })
    }

    /// Write event: the finish time.
    pub fn write_event(&self, job: JobId) -> Option<Time> {
        self.record(job).map(|r| r.finish)
    }

    pub fn deadline_misses(&self) -> impl Iterator<Item = &JobRecord> {
        self.records().filter(|r| r.deadline_miss())
    }

    /// Execution segments of every job, sorted by start time.
    pub fn segments(&self) -> Vec<(Time, Time, JobId)> {
        let mut segs: Vec<_> = self
            .records()
            .flat_map(|r| r.segments().into_iter().map(move |(a, b)| (a, b, r.job)))
            .collect();
        segs.sort();
        segs
    }

    pub(crate) fn from_parts(
        horizon: Time,
        policy: String,
        hyperperiod: Duration,
        max_phase: Time,
        sensors: BTreeSet<TaskId>,
        jobs: Vec<Vec<JobRecord>>,
    ) -> Self {
        Trace { horizon, policy, hyperperiod, max_phase, sensors, jobs }
    }
}

struct Pending {
    job: JobId,
    remaining: Duration,
    started: bool,
    preempted_at: Option<Time>,
    record: JobRecord,
}

/// Simulates every job released before `horizon` to completion.
pub fn simulate<W: Workload + ?Sized>(workload: &W, policy: &ExecutionTimePolicy, horizon: Time) -> Result<Trace> {
    simulate_observed(workload, policy, horizon, &mut ())
}

/// [`simulate`], reporting releases, starts and finishes to `observer`.
pub fn simulate_observed<W, O>(
    workload: &W,
    policy: &ExecutionTimePolicy,
    horizon: Time,
    observer: &mut O,
) -> Result<Trace>
where
    W: Workload + ?Sized,
    O: SimObserver + ?Sized,
{
    let set = workload.task_set();
    let mut releases: Vec<(Time, JobId)> = Vec::new();
    let mut counts = Vec::with_capacity(set.len());
    for task in set.tasks() {
        // Workload releases never precede the periodic release, so the
        // periodic release bounds the loop.
        let mut k = 1;
        let mut n = 0;
        while task.release(k) < horizon {
            let job = JobId::new(task.id, k);
            let r = workload.release(job);
            if r < horizon {
                releases.push((r, job));
                n = k;
            }
            k += 1;
        }
        counts.push(n);
    }
    releases.sort_by_key(|&(r, job)| (r, job));

    let mut state = SchedulerState {
        finished: counts.iter().map(|&n| vec![false; n as usize]).collect(),
    };
    let mut jobs: Vec<Vec<JobRecord>> = counts.iter().map(|&n| Vec::with_capacity(n as usize)).collect();
    let mut done: Vec<Vec<Option<JobRecord>>> = counts.iter().map(|&n| vec![None; n as usize]).collect();

    let mut pending: Vec<Pending> = Vec::new();
    let mut next_release = 0usize;
    let mut running: Option<JobId> = None;
    let mut now: Time = releases.first().map(|r| r.0).unwrap_or(0);

    loop {
        while next_release < releases.len() && releases[next_release].0 <= now {
            let (r, job) = releases[next_release];
            let exec = policy.exec_time(job, set.task(job.task))?;
            pending.push(Pending {
                job,
                remaining: exec,
                started: false,
                preempted_at: None,
                record: JobRecord {
                    job,
                    release: r,
                    deadline: workload.deadline(job),
                    start: 0,
                    finish: 0,
                    exec,
                    preemptions: Vec::new(),
                },
            });
            observer.on_release(job, r);
            next_release += 1;
        }

        let mut best: Option<(usize, (i64, std::cmp::Reverse<TaskId>, std::cmp::Reverse<u64>))> = None;
        for (i, p) in pending.iter().enumerate() {
            if !workload.eligible(p.job, now, &state) {
                continue;
            }
            let key = (workload.priority(p.job), std::cmp::Reverse(p.job.task), std::cmp::Reverse(p.job.k));
            if best.as_ref().is_none_or(|(_, bk)| key > *bk) {
                best = Some((i, key));
            }
        }

        let Some((idx, _)) = best else {
            if next_release < releases.len() {
                now = releases[next_release].0;
                running = None;
                continue;
            }
            if pending.is_empty() {
                break;
            }
            return Err(Error::Stalled(now));
        };

        let chosen = pending[idx].job;
        if running != Some(chosen) {
            if let Some(prev) = running {
                if let Some(p) = pending.iter_mut().find(|p| p.job == prev) {
                    p.preempted_at = Some(now);
                }
            }
            let p = &mut pending[idx];
            if !p.started {
                p.started = true;
                p.record.start = now;
                observer.on_start(chosen, now);
            } else if let Some(since) = p.preempted_at.take() {
                p.record.preemptions.push((since, now));
            }
            running = Some(chosen);
        }

        let finish_at = now + pending[idx].remaining;
        let until = match releases.get(next_release) {
            Some(&(r, _)) if r < finish_at => r,
            _ => finish_at,
        };
        pending[idx].remaining -= until - now;
        now = until;
        if pending[idx].remaining == 0 {
            let mut p = pending.swap_remove(idx);
            p.record.finish = now;
            let slot = (p.job.k - 1) as usize;
            state.finished[p.job.task][slot] = true;
            observer.on_finish(p.job, now);
            done[p.job.task][slot] = Some(p.record);
            running = None;
        }
    }

    for (task, recs) in done.into_iter().enumerate() {
        for r in recs {
            jobs[task].push(r.expect("every released job finishes"));
        }
    }

    Ok(Trace::from_parts(
        horizon,
        policy.to_string(),
        set.hyperperiod(),
        workload.max_phase(),
        set.sensors().clone(),
        jobs,
    ))
}

/// Jobs that finished after their deadline.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct SchedulabilityReport {
    pub window_end: Time,
    pub misses: Vec<JobRecord>,
}

impl SchedulabilityReport {
    pub fn is_schedulable(&self) -> bool {
        self.misses.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        match self.misses.first() {
            None => Ok(()),
            Some(first) => Err(Error::Unschedulable(self.misses.len(), first.job)),
        }
    }
}

/// Horizon that makes the deadline check of every job released in
/// `[0, 2H + O_max)` exact: `3H + O_max`.
pub fn schedulability_horizon<W: Workload + ?Sized>(workload: &W) -> Time {
    3 * workload.task_set().hyperperiod() + workload.max_phase()
}

/// Lists every job in the trace with `f(J) > deadline(J)`.
///
/// Jobs released at or after the horizon are not simulated, so finishes
/// after the horizon are lower bounds: misses reported are real, but jobs
/// whose deadline lies past the horizon may miss unnoticed.
pub fn check_schedulability(trace: &Trace) -> SchedulabilityReport {
    SchedulabilityReport {
        window_end: trace.horizon,
        misses: trace.deadline_misses().cloned().collect(),
    }
}

/// Whether the schedule on `[from, from + H)` equals the one on
/// `[from + H, from + 2H)` shifted by `H`. Execution segments are clipped to
/// the windows and compared by task, frame index and time.
pub fn repeats_after(trace: &Trace, set: &TaskSet, from: Time) -> bool {
    let h = trace.hyperperiod;
    let window = |lo: Time, shift: Time| {
        let mut segs: Vec<(Time, Time, TaskId, u64)> = trace
            .segments()
            .into_iter()
            .filter_map(|(a, b, job)| {
                let (a, b) = (a.max(lo), b.min(lo + h));
                (a < b).then(|| (a - shift, b - shift, job.task, (job.k - 1) % set.frames(job.task)))
            })
            .collect();
        segs.sort();
        // Adjacent pieces of the same job split by clipping.
        segs.dedup_by(|b, a| {
            if a.1 == b.0 && a.2 == b.2 && a.3 == b.3 {
                a.1 = b.1;
                true
            } else {
                false
            }
        });
        segs
    };
    window(from, 0) == window(from + h, h)
}
