//! Brute-force search over execution-time assignments.
//!
//! Every job released in a chosen window gets one of `k` evenly spaced
//! durations in `[B, W]`; jobs outside the window run their WCET. The full
//! Cartesian product is simulated, either with plain register communication
//! or, for transformed sets, with buffered communication.

use std::cmp::{Ordering, Reverse};
use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{analyze_register, immediate_forward_chain, register_relations, with_growing_horizon, extension_budget, Iac, Latency};
use crate::ddf::TransformedTaskSet;
use crate::error::{Error, Result};
use crate::model::{Chain, JobId};
use crate::runtime::{analyze_treated, empirical_reaction_times, online_run, run_horizon, treated_iacs};
use crate::sim::{check_schedulability, ExecutionTimePolicy, Extreme, Workload};
use crate::time::{Duration, Time};

/// Default cap on the number of enumerated assignments.
pub const DEFAULT_BUDGET: u128 = 531_441; // 3^12

/// Jobs whose execution time is varied, by release time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleWindow {
    /// `[0, n·H + O_max)`.
    Leading(u64),
    /// `[H + O_max, 2H + O_max)`.
    Steady,
    Explicit { start: Time, end: Time },
}

impl OracleWindow {
    pub fn bounds(self, hyperperiod: Duration, max_phase: Time) -> (Time, Time) {
        match self {
            OracleWindow::Leading(n) => (0, n * hyperperiod + max_phase),
            OracleWindow::Steady => (hyperperiod + max_phase, 2 * hyperperiod + max_phase),
            OracleWindow::Explicit { start, end } => (start, end),
        }
    }
}

/// `k` evenly spaced values in `[b, w]`, endpoints included, duplicates
/// dropped. `k = 1` gives `{b}`.
pub fn levels(b: Duration, w: Duration, k: u32) -> Vec<Duration> {
    let k = k.max(1) as u64;
    if k == 1 {
        return vec![b];
    }
    let mut out: Vec<Duration> = (0..k).map(|i| b + i * (w - b) / (k - 1)).collect();
    out.dedup();
    out
}

/// The assignment space, indexable in mixed radix.
#[derive(Debug, Clone)]
pub struct Enumeration {
    pub jobs: Vec<(JobId, Vec<Duration>)>,
    pub total: u128,
}

impl Enumeration {
    /// Assignment number `index`; the first job varies fastest.
    pub fn policy(&self, mut index: u128) -> ExecutionTimePolicy {
        let mut times = BTreeMap::new();
        for (job, lv) in &self.jobs {
            let n = lv.len() as u128;
            times.insert(*job, lv[(index % n) as usize]);
            index /= n;
        }
        ExecutionTimePolicy::Explicit { times, fallback: Some(Extreme::Wcet) }
    }

    pub fn iter(&self) -> impl Iterator<Item = ExecutionTimePolicy> + '_ {
        (0..self.total).map(|i| self.policy(i))
    }
}

/// Enumerates per-job execution-time assignments over `window`.
pub fn enumerate_assignments<W: Workload + ?Sized>(
    workload: &W,
    k: u32,
    window: OracleWindow,
    budget: u128,
) -> Result<Enumeration> {
    let set = workload.task_set();
    let (start, end) = window.bounds(set.hyperperiod(), workload.max_phase());
    let mut jobs = Vec::new();
    for task in set.tasks() {
        let mut job = JobId::new(task.id, 1);
        loop {
            let r = workload.release(job);
            if r >= end {
                break;
            }
            if r >= start {
                jobs.push((job, levels(task.bcet, task.wcet, k)));
            }
            job = job.next();
        }
    }
    jobs.sort_by_key(|(j, _)| *j);
    let mut total: u128 = 1;
    for (_, lv) in &jobs {
        total = total.saturating_mul(lv.len() as u128);
        if total > budget {
            return Err(Error::BudgetExceeded { needed: total, budget });
        }
    }
    Ok(Enumeration { jobs, total })
}

/// Maximum reaction time over the enumeration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleResult {
    pub value: Duration,
    /// Jobs of the achieving assignment that do not run their WCET.
    pub witness: BTreeMap<JobId, Duration>,
    pub iac: Iac,
    pub runs: u128,
    /// Assignments left out because some job missed its deadline.
    pub excluded: Vec<BTreeMap<JobId, Duration>>,
}

struct Candidate {
    value: Duration,
    deviations: Vec<(JobId, Duration)>,
    iac: Iac,
}

impl Candidate {
    fn key(&self) -> (Duration, Reverse<usize>, Reverse<&[(JobId, Duration)]>) {
        (self.value, Reverse(self.deviations.len()), Reverse(self.deviations.as_slice()))
    }
}

fn better(a: Candidate, b: Candidate) -> Candidate {
    match a.key().cmp(&b.key()) {
        Ordering::Less => b,
        _ => a,
    }
}

enum Outcome {
    Ok(Candidate),
    Missed(Vec<(JobId, Duration)>),
}

fn deviations<W: Workload + ?Sized>(workload: &W, policy: &ExecutionTimePolicy) -> Vec<(JobId, Duration)> {
    let ExecutionTimePolicy::Explicit { times, .. } = policy else {
        return Vec::new();
    };
    times
        .iter()
        .filter(|(j, &d)| d != workload.task_set().task(j.task).wcet)
        .map(|(&j, &d)| (j, d))
        .collect()
}

fn reduce(enumeration: &Enumeration, eval: impl Fn(&ExecutionTimePolicy) -> Result<Outcome> + Sync) -> Result<OracleResult> {
    let (best, mut excluded) = (0..enumeration.total)
        .into_par_iter()
        .map(|i| eval(&enumeration.policy(i)))
        .try_fold(
            || (None::<Candidate>, Vec::new()),
            |(best, mut missed), out| {
                let best = match out? {
                    Outcome::Ok(c) => Some(match best {
                        Some(b) => better(b, c),
                        None => c,
                    }),
                    Outcome::Missed(d) => {
                        missed.push(d);
                        best
                    }
                };
                Ok::<_, Error>((best, missed))
            },
        )
        .try_reduce(
            || (None, Vec::new()),
            |(a, mut ma), (b, mb)| {
                ma.extend(mb);
                let best = match (a, b) {
                    (Some(a), Some(b)) => Some(better(a, b)),
                    (a, b) => a.or(b),
                };
                Ok((best, ma))
            },
        )?;
    excluded.sort();
    let best = best.ok_or(Error::NoValidChain)?;
    Ok(OracleResult {
        value: best.value,
        witness: best.deviations.into_iter().collect(),
        iac: best.iac,
        runs: enumeration.total,
        excluded: excluded.into_iter().map(|d| d.into_iter().collect()).collect(),
    })
}

/// Brute-force MRT of `chain` in the untreated system.
pub fn brute_force_mrt<W: Workload + Sync + ?Sized>(workload: &W, chain: &Chain, k: u32, window: OracleWindow, budget: u128) -> Result<OracleResult> {
    chain.check_against(workload.task_set())?;
    let enumeration = enumerate_assignments(workload, k, window, budget)?;
    let set = workload.task_set();
    reduce(&enumeration, |policy| match analyze_register(set, chain, policy) {
        Ok(lat) => Ok(Outcome::Ok(Candidate { value: lat.value, deviations: deviations(set, policy), iac: lat.witness })),
        Err(Error::Unschedulable(..)) => Ok(Outcome::Missed(deviations(set, policy))),
        Err(e) => Err(e),
    })
}

/// Brute-force MRT of `chain` in the transformed system, running buffered
/// communication. An RFI breach in any run is an error.
pub fn brute_force_mrt_treated(tset: &TransformedTaskSet, chain: &Chain, k: u32, window: OracleWindow, budget: u128) -> Result<OracleResult> {
    chain.check_against(tset.original())?;
    let enumeration = enumerate_assignments(tset, k, window, budget)?;
    let horizon = run_horizon(tset, std::slice::from_ref(chain))?;
    reduce(&enumeration, |policy| {
        let (trace, log) = online_run(tset, policy, horizon)?;
        if !check_schedulability(&trace).is_schedulable() {
            return Ok(Outcome::Missed(deviations(tset, policy)));
        }
        if let Some(v) = log.rfi_violations().next() {
            return Err(Error::Format(format!("RFI violation: {} read {:?}, intended {:?}", v.reader, v.read, v.intended)));
        }
        let sample = empirical_reaction_times(&trace, chain, tset.ddf())?;
        let iacs = treated_iacs(tset.ddf(), &trace, chain)?;
        let (i, &value) = sample.times.iter().enumerate().rev().max_by_key(|(_, &v)| v).expect("non-empty");
        Ok(Outcome::Ok(Candidate { value, deviations: deviations(tset, policy), iac: iacs[i].clone() }))
    })
}

/// Structural explanation of an exceedance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cause {
    /// The job sequence of the chain changed.
    ChangedChain,
    /// Same job sequence, longer span.
    LongerSpan,
}

impl Cause {
    pub fn number(self) -> u8 {
        match self {
            Cause::ChangedChain => 1,
            Cause::LongerSpan => 2,
        }
    }
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cause::ChangedChain => write!(f, "cause 1 (job chain changed)"),
            Cause::LongerSpan => write!(f, "cause 2 (same job chain, longer reaction)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaVerdict {
    pub present: bool,
    pub wcet: Latency,
    pub oracle: OracleResult,
    /// The all-WCET chain for the witness's sampling index.
    pub wcet_iac: Iac,
    pub cause: Option<Cause>,
    pub levels: u32,
}

fn verdict(wcet: Latency, oracle: OracleResult, wcet_iac: Iac, levels: u32) -> TaVerdict {
    let present = oracle.value > wcet.value;
    let cause = present.then(|| if oracle.iac.jobs != wcet_iac.jobs { Cause::ChangedChain } else { Cause::LongerSpan });
    TaVerdict { present, wcet, oracle, wcet_iac, cause, levels }
}

/// Compares the brute-force MRT of the untreated system with its all-WCET
/// MRT.
pub fn detect_ta(set: &crate::model::TaskSet, chain: &Chain, k: u32, window: OracleWindow, budget: u128) -> Result<TaVerdict> {
    let wcet = analyze_register(set, chain, &ExecutionTimePolicy::AllWcet)?;
    let oracle = brute_force_mrt(set, chain, k, window, budget)?;
    let m = oracle.iac.m;
    let wcet_iac = with_growing_horizon(set, &ExecutionTimePolicy::AllWcet, extension_budget(chain.len()), |trace| {
        let jobs = immediate_forward_chain(chain, &register_relations(trace, chain), m).ok_or(Error::WindowTooShort(trace.horizon))?;
        crate::chain::augment(jobs, trace, m).ok_or(Error::WindowTooShort(trace.horizon))
    })?;
    Ok(verdict(wcet, oracle, wcet_iac, k))
}

/// [`detect_ta`] for a transformed system.
pub fn detect_ta_treated(tset: &TransformedTaskSet, chain: &Chain, k: u32, window: OracleWindow, budget: u128) -> Result<TaVerdict> {
    let wcet = analyze_treated(tset, chain, &ExecutionTimePolicy::AllWcet)?;
    let oracle = brute_force_mrt_treated(tset, chain, k, window, budget)?;
    let m = oracle.iac.m;
    let wcet_iac = with_growing_horizon(tset, &ExecutionTimePolicy::AllWcet, extension_budget(chain.len()), |trace| {
        treated_iacs(tset.ddf(), trace, chain)?
            .into_iter()
            .find(|i| i.m == m)
            .ok_or(Error::WindowTooShort(trace.horizon))
    })?;
    Ok(verdict(wcet, oracle, wcet_iac, k))
}
