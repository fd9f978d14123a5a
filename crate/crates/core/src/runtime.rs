//! Online execution of a transformed task set with multi-buffer
//! communication, and the audit of every read against the data flow.

use std::collections::BTreeMap;
use std::io;

use serde::Serialize;

use crate::chain::{iacs, mrt_min_with, mrt_with, with_growing_horizon, extension_budget, CommRelation, Iac, Latency, SamplingWindow, Writer};
use crate::ddf::{BufferPlan, Ddf, TransformedTaskSet};
use crate::error::{Error, Result};
use crate::model::{Chain, Edge, JobId, TaskId};
use crate::sim::{simulate_observed, ExecutionTimePolicy, SimObserver, Trace, Workload};
use crate::time::{Duration, Time};

/// Multi-slot buffers, one set per writer task. Each slot holds the tag of
/// the job that produced it.
#[derive(Debug, Clone)]
pub struct BufferPool {
    plan: BufferPlan,
    slots: BTreeMap<TaskId, Vec<Option<JobId>>>,
    /// Written items that still have intended readers to serve.
    live: BTreeMap<TaskId, BTreeMap<u64, usize>>,
    expected: BTreeMap<JobId, usize>,
    max_occupancy: BTreeMap<TaskId, u64>,
}

impl BufferPool {
    /// `expected` maps writer jobs to the number of reads intended for them.
    pub fn new(plan: BufferPlan, expected: BTreeMap<JobId, usize>) -> Self {
        let slots = plan.sizes.iter().map(|(&w, &bs)| (w, vec![None; bs as usize])).collect();
        let max_occupancy = plan.sizes.keys().map(|&w| (w, 0)).collect();
        BufferPool { plan, slots, live: BTreeMap::new(), expected, max_occupancy }
    }

    pub fn slot_of(&self, job: JobId) -> u64 {
        self.plan.slot(job.task, job.k)
    }

    /// Stores `job`'s output in its slot; returns the slot.
    pub fn write(&mut self, job: JobId) -> Option<u64> {
        let slot = self.slot_of(job);
        let cell = self.slots.get_mut(&job.task)?.get_mut(slot as usize)?;
        *cell = Some(job);
        let pending = self.expected.get(&job).copied().unwrap_or(0);
        let live = self.live.entry(job.task).or_default();
        if pending > 0 {
            live.insert(job.k, pending);
        }
        let occ = live.len() as u64;
        let max = self.max_occupancy.entry(job.task).or_insert(0);
        *max = (*max).max(occ);
        Some(slot)
    }

    /// Reads the slot of intended writer `intended`; returns the slot and
    /// the tag found there.
    pub fn read(&mut self, intended: JobId) -> (u64, Option<JobId>) {
        let slot = self.slot_of(intended);
        let tag = self
            .slots
            .get(&intended.task)
            .and_then(|s| s.get(slot as usize))
            .copied()
            .flatten();
        if let Some(live) = self.live.get_mut(&intended.task) {
            if let Some(n) = live.get_mut(&intended.k) {
                *n -= 1;
                if *n == 0 {
                    live.remove(&intended.k);
                }
            }
        }
        (slot, tag)
    }

    pub fn max_occupancy(&self) -> &BTreeMap<TaskId, u64> {
        &self.max_occupancy
    }
}

/// One read performed by a job.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommEntry {
    pub edge: Edge,
    pub reader: JobId,
    pub intended: Writer,
    /// What was actually read; `Initial` when the slot was empty or the
    /// intended writer precedes the first job.
    pub read: Writer,
    pub time: Time,
    pub slot: Option<u64>,
}

impl CommEntry {
    pub fn tag_ok(&self) -> bool {
        self.read == self.intended
    }
}

#[derive(Debug, Clone, Default)]
pub struct CommLog {
    pub entries: Vec<CommEntry>,
    pub max_occupancy: BTreeMap<TaskId, u64>,
}

#[derive(Serialize)]
struct CsvRow {
    reader: String,
    writer: String,
    time: Time,
    slot: String,
    tag_ok: bool,
}

fn writer_label(edge: Edge, w: Writer) -> String {
    match w {
        Writer::Initial => "init".into(),
        Writer::Job(k) => JobId::new(edge.writer, k).to_string(),
    }
}

impl CommLog {
    /// Reads that did not return the intended producer's data.
    pub fn rfi_violations(&self) -> impl Iterator<Item = &CommEntry> {
        self.entries.iter().filter(|e| !e.tag_ok())
    }

    /// Relation actually observed on `edge`, over the contiguous prefix of
    /// reader jobs present in the log.
    pub fn relation(&self, edge: Edge) -> CommRelation {
        let mut by_reader: BTreeMap<u64, Writer> = BTreeMap::new();
        for e in self.entries.iter().filter(|e| e.edge == edge) {
            by_reader.insert(e.reader.k, e.read);
        }
        let readers = by_reader
            .iter()
            .enumerate()
            .take_while(|(i, (k, _))| **k == *i as u64 + 1)
            .map(|(_, (_, &w))| w)
            .collect();
        CommRelation::from_readers(edge, readers)
    }

    /// Log of plain register communication in `trace`, for comparison with
    /// buffered runs.
    pub fn from_register(trace: &Trace, edges: impl IntoIterator<Item = Edge>) -> Self {
        let mut entries = Vec::new();
        for edge in edges {
            let rel = crate::chain::register_comm(trace, edge);
            for (k, w) in rel.pairs() {
                let reader = JobId::new(edge.reader, k);
                let time = trace.read_event(reader).expect("in trace");
                entries.push(CommEntry { edge, reader, intended: w, read: w, time, slot: None });
            }
        }
        entries.sort_by_key(|e| (e.time, e.reader, e.edge));
        CommLog { entries, max_occupancy: BTreeMap::new() }
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.entries {
            w.serialize(CsvRow {
                reader: e.reader.to_string(),
                writer: writer_label(e.edge, e.read),
                time: e.time,
                slot: e.slot.map(|s| s.to_string()).unwrap_or_default(),
                tag_ok: e.tag_ok(),
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Runtime<'a> {
    tset: &'a TransformedTaskSet,
    incoming: BTreeMap<TaskId, Vec<Edge>>,
    pool: BufferPool,
    log: Vec<CommEntry>,
}

impl SimObserver for Runtime<'_> {
    fn on_start(&mut self, job: JobId, at: Time) {
        let Some(edges) = self.incoming.get(&job.task) else { return };
        for &edge in edges {
            let intended = self.tset.ddf().intended_writer(edge, job.k).expect("edge in ddf");
            let (slot, read) = match intended {
                Writer::Initial => (None, Writer::Initial),
                Writer::Job(l) => {
                    let (slot, tag) = self.pool.read(JobId::new(edge.writer, l));
                    let read = match tag {
                        Some(j) => Writer::Job(j.k),
                        None => Writer::Initial,
                    };
                    (Some(slot), read)
                }
            };
            self.log.push(CommEntry { edge, reader: job, intended, read, time: at, slot });
        }
    }

    fn on_finish(&mut self, job: JobId, _at: Time) {
        self.pool.write(job);
    }
}

/// Reads intended for each writer job, over reader jobs released before
/// `horizon`.
fn expected_reads(tset: &TransformedTaskSet, horizon: Time) -> BTreeMap<JobId, usize> {
    let mut expected = BTreeMap::new();
    for de in &tset.ddf().edges {
        let mut k = 1;
        while tset.release(JobId::new(de.edge.reader, k)) < horizon {
            if let Some(Writer::Job(l)) = tset.ddf().intended_writer(de.edge, k) {
                *expected.entry(JobId::new(de.edge.writer, l)).or_insert(0) += 1;
            }
            k += 1;
        }
    }
    expected
}

/// Runs the transformed set with buffered communication up to `horizon`.
pub fn online_run(tset: &TransformedTaskSet, policy: &ExecutionTimePolicy, horizon: Time) -> Result<(Trace, CommLog)> {
    let mut plan = tset.buffers().clone();
    for de in &tset.ddf().edges {
        plan.sizes.entry(de.edge.writer).or_insert(1);
    }
    let mut incoming: BTreeMap<TaskId, Vec<Edge>> = BTreeMap::new();
    for de in &tset.ddf().edges {
        incoming.entry(de.edge.reader).or_default().push(de.edge);
    }
    let pool = BufferPool::new(plan, expected_reads(tset, horizon));
    let mut rt = Runtime { tset, incoming, pool, log: Vec::new() };
    let trace = simulate_observed(tset, policy, horizon, &mut rt)?;
    let log = CommLog { entries: rt.log, max_occupancy: rt.pool.max_occupancy().clone() };
    Ok((trace, log))
}

/// Whether every logged read matches the data flow.
pub fn verify_ddf(log: &CommLog, ddf: &Ddf) -> bool {
    log.entries.iter().all(|e| ddf.intended_writer(e.edge, e.reader.k) == Some(e.read))
}

/// Data-flow relations of `chain` over the reader jobs present in `trace`.
pub fn ddf_relations(ddf: &Ddf, trace: &Trace, chain: &Chain) -> Result<Vec<CommRelation>> {
    chain
        .edges()
        .map(|e| ddf.unroll(e, trace.jobs_of(e.reader).len() as u64))
        .collect()
}

/// Augmented chains of one treated run: fixed data-flow job sequences with
/// this run's event times.
pub fn treated_iacs(ddf: &Ddf, trace: &Trace, chain: &Chain) -> Result<Vec<Iac>> {
    iacs(trace, chain, &ddf_relations(ddf, trace, chain)?, SamplingWindow::of_trace(trace))
}

/// Reaction times of one run, in sampling order, and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionSample {
    pub times: Vec<Duration>,
    pub art: f64,
}

pub fn empirical_reaction_times(trace: &Trace, chain: &Chain, ddf: &Ddf) -> Result<ReactionSample> {
    let times: Vec<Duration> = treated_iacs(ddf, trace, chain)?.iter().map(Iac::length).collect();
    if times.is_empty() {
        return Err(Error::NoValidChain);
    }
    let art = times.iter().map(|&t| t as f64).sum::<f64>() / times.len() as f64;
    Ok(ReactionSample { times, art })
}

/// MRT of a treated chain under `policy`.
pub fn analyze_treated(tset: &TransformedTaskSet, chain: &Chain, policy: &ExecutionTimePolicy) -> Result<Latency> {
    chain.check_against(tset.original())?;
    with_growing_horizon(tset, policy, extension_budget(chain.len()), |trace| {
        mrt_with(trace, chain, &ddf_relations(tset.ddf(), trace, chain)?, SamplingWindow::of_trace(trace))
    })
}

/// Minimum counterpart of [`analyze_treated`].
pub fn analyze_treated_min(tset: &TransformedTaskSet, chain: &Chain, policy: &ExecutionTimePolicy) -> Result<Latency> {
    chain.check_against(tset.original())?;
    with_growing_horizon(tset, policy, extension_budget(chain.len()), |trace| {
        mrt_min_with(trace, chain, &ddf_relations(tset.ddf(), trace, chain)?, SamplingWindow::of_trace(trace))
    })
}

/// A horizon long enough for every sampled chain of `chains` to complete in
/// any run, since data-flow job sequences do not depend on execution times.
pub fn run_horizon(tset: &TransformedTaskSet, chains: &[Chain]) -> Result<Time> {
    let h = tset.original().hyperperiod();
    let mut horizon = 3 * h + tset.max_phase();
    for chain in chains {
        let last = with_growing_horizon(tset, &ExecutionTimePolicy::AllWcet, extension_budget(chain.len()), |trace| {
            treated_iacs(tset.ddf(), trace, chain)
        })?;
        for iac in last {
            let job = *iac.jobs.last().expect("non-empty");
            horizon = horizon.max(tset.deadline(job));
        }
    }
    Ok(horizon)
}
