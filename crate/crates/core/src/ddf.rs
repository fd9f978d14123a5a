//! Deterministic data flow: extraction from the all-WCET schedule and the
//! task-set transformation that enforces it online.
//!
//! The data flow is a frame-level relation: for each edge, reader frame `j`
//! (the `j`-th job of the reader in a hyperperiod) reads writer frame `l`
//! of the hyperperiod `offset` hyperperiods away from its own.
//!
//! The transformed task set keeps the original tasks but gives every frame
//! its own phase `O*` and a list of writer frames that must finish before
//! the frame may start. That eligibility rule is how precedence between
//! communicating frames is enforced: a reader is simply not a dispatch
//! candidate until its writers are done, which is the same as ranking it
//! below them without ever letting it preempt them. Frames that do not
//! communicate keep their base priority order untouched.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chain::{register_comm, rw_bounds, CommRelation, RwBounds, Writer};
use crate::error::{Error, Result};
use crate::model::{CeGraph, Edge, JobId, TaskId, TaskSet};
use crate::sim::{check_schedulability, schedulability_horizon, simulate, ExecutionTimePolicy, SchedulabilityReport, SchedulerState, Workload};
use crate::time::{Duration, Time};

/// Writer frame read by one reader frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLink {
    pub writer_frame: u64,
    /// Writer hyperperiod minus reader hyperperiod.
    pub offset: i64,
}

/// Frozen relation of one edge, indexed by reader frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdfEdge {
    pub edge: Edge,
    pub links: Vec<FrameLink>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ddf {
    pub hyperperiod: Duration,
    /// Jobs per hyperperiod, per task.
    pub frames: Vec<u64>,
    pub edges: Vec<DdfEdge>,
}

impl Ddf {
    pub fn edge(&self, edge: Edge) -> Option<&DdfEdge> {
        self.edges.iter().find(|e| e.edge == edge)
    }

    /// Writer job that reader job `reader` of `edge` must read.
    pub fn intended_writer(&self, edge: Edge, reader: u64) -> Option<Writer> {
        let de = self.edge(edge)?;
        Some(self.resolve(de, reader))
    }

    fn resolve(&self, de: &DdfEdge, reader: u64) -> Writer {
        let n_r = self.frames[de.edge.reader];
        let n_w = self.frames[de.edge.writer] as i64;
        let h = ((reader - 1) / n_r) as i64;
        let link = de.links[((reader - 1) % n_r) as usize];
        let index = (h + link.offset) * n_w + link.writer_frame as i64 + 1;
        if index < 1 {
            Writer::Initial
        } else {
            Writer::Job(index as u64)
        }
    }

    /// The relation over reader jobs `1..=readers`.
    pub fn unroll(&self, edge: Edge, readers: u64) -> Result<CommRelation> {
        let de = self.edge(edge).ok_or(Error::UnknownEdge(edge))?;
        let links = (1..=readers).map(|k| self.resolve(de, k)).collect();
        Ok(CommRelation::from_readers(edge, links))
    }
}

fn frame_link(frames: &[u64], edge: Edge, reader: u64, writer: u64) -> (u64, FrameLink) {
    let (n_r, n_w) = (frames[edge.reader], frames[edge.writer]);
    let (h_r, j) = ((reader - 1) / n_r, (reader - 1) % n_r);
    let (h_w, l) = ((writer - 1) / n_w, (writer - 1) % n_w);
    (j, FrameLink { writer_frame: l, offset: h_w as i64 - h_r as i64 })
}

/// Extracts the data flow of every edge of `graph` from the all-WCET
/// schedule of `set`.
///
/// Relations are read off the steady window `[H + O_max, 2H + O_max)` and
/// checked against the following hyperperiod.
pub fn extract_ddf(set: &TaskSet, graph: &CeGraph) -> Result<Ddf> {
    let h = set.hyperperiod();
    let steady = set.steady_start();
    let trace = simulate(set, &ExecutionTimePolicy::AllWcet, schedulability_horizon(set).max(steady + 2 * h))?;
    check_schedulability(&trace).into_result()?;
    let frames: Vec<u64> = (0..set.len()).map(|t| set.frames(t)).collect();

    let mut edges = Vec::new();
    for edge in graph.edges() {
        let rel = register_comm(&trace, edge);
        let mut links: Vec<Option<FrameLink>> = vec![None; frames[edge.reader] as usize];
        for (k, writer) in rel.pairs() {
            let release = trace.record(JobId::new(edge.reader, k)).expect("in trace").release;
            if release < steady {
                continue;
            }
            let Writer::Job(w) = writer else {
                return Err(Error::NonPeriodicRelation(edge));
            };
            let (j, link) = frame_link(&frames, edge, k, w);
            let slot = &mut links[j as usize];
            match slot {
                None if release < steady + h => *slot = Some(link),
                Some(prev) if *prev != link => return Err(Error::NonPeriodicRelation(edge)),
                _ => {}
            }
        }
        let links = links.into_iter().collect::<Option<Vec<_>>>().ok_or(Error::NonPeriodicRelation(edge))?;
        edges.push(DdfEdge { edge, links });
    }
    Ok(Ddf { hyperperiod: h, frames, edges })
}

/// One job slot of a task within the hyperperiod.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub task: TaskId,
    pub index: u64,
    /// `O(γ) = T · index + O`.
    pub phase: Time,
    /// Phase after making every reader release no earlier than its writers.
    pub shifted_phase: Time,
    /// `(base priority, precedence rank)`; writers rank below their readers.
    pub np: (i64, u32),
    /// Writer frames (one per incoming edge) that must finish first.
    pub writers: Vec<WriterRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriterRef {
    pub task: TaskId,
    pub frame: u64,
    pub offset: i64,
}

impl WriterRef {
    /// Concrete writer job for a reader frame instance in hyperperiod `h`.
    pub fn job(&self, h: u64, frames_of_writer: u64) -> Option<JobId> {
        let index = (h as i64 + self.offset) * frames_of_writer as i64 + self.frame as i64 + 1;
        (index >= 1).then(|| JobId::new(self.task, index as u64))
    }
}

/// Buffer slots per writer task.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferPlan {
    pub sizes: BTreeMap<TaskId, u64>,
}

impl BufferPlan {
    pub fn size(&self, writer: TaskId) -> u64 {
        self.sizes.get(&writer).copied().unwrap_or(1)
    }

    /// Stored data items over all writer tasks.
    pub fn memory(&self) -> u64 {
        self.sizes.values().sum()
    }

    /// Slot of writer job `k`: round-robin over the whole job sequence.
    pub fn slot(&self, writer: TaskId, k: u64) -> u64 {
        (k - 1) % self.size(writer)
    }
}

/// The original task set plus per-frame phases, writer sets and buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedTaskSet {
    original: TaskSet,
    frames: Vec<Vec<Frame>>,
    ddf: Ddf,
    buffers: BufferPlan,
    max_shifted_phase: Time,
}

/// Builds the transformed task set and sizes its buffers.
///
/// The result is not checked for schedulability; see
/// [`TransformedTaskSet::schedulability`].
pub fn transform(set: &TaskSet, ddf: &Ddf) -> Result<TransformedTaskSet> {
    let mut tset = TransformedTaskSet::assemble(set.clone(), ddf.clone(), BufferPlan::default())?;
    let bounds = rw_bounds(&tset)?;
    tset.buffers = buffer_sizes(&tset, &bounds);
    Ok(tset)
}

impl TransformedTaskSet {
    /// Derives frames from `ddf`; `buffers` is taken as given.
    pub fn assemble(original: TaskSet, ddf: Ddf, buffers: BufferPlan) -> Result<Self> {
        let h = original.hyperperiod() as i64;
        let mut task_graph_edges = CeGraphBuilder::default();
        for de in &ddf.edges {
            if de.edge.writer >= original.len() || de.edge.reader >= original.len() {
                return Err(Error::UnknownEdge(de.edge));
            }
            if de.links.len() as u64 != original.frames(de.edge.reader) {
                return Err(Error::Format(format!("edge {} has {} links, expected {}", de.edge, de.links.len(), original.frames(de.edge.reader))));
            }
            task_graph_edges.push(de.edge);
        }
        let (order, depth) = task_graph_edges.order_and_depth()?;
        let order: Vec<TaskId> = order.into_iter().chain((0..original.len()).filter(|t| !depth.contains_key(t))).collect();

        let mut frames: Vec<Vec<Frame>> = original
            .tasks()
            .iter()
            .map(|t| {
                (0..original.frames(t.id))
                    .map(|j| {
                        let phase = t.period * j + t.phase;
                        Frame {
                            task: t.id,
                            index: j,
                            phase,
                            shifted_phase: phase,
                            np: (t.priority, depth.get(&t.id).copied().unwrap_or(0) as u32),
                            writers: Vec::new(),
                        }
                    })
                    .collect()
            })
            .collect();

        // Writers before readers, so every writer's O* is final when read.
        for &task in &order {
            for de in ddf.edges.iter().filter(|de| de.edge.reader == task) {
                for (j, link) in de.links.iter().enumerate() {
                    let writer = &frames[de.edge.writer][link.writer_frame as usize];
                    let bound = writer.shifted_phase as i64 + link.offset * h;
                    let f = &mut frames[task][j];
                    f.writers.push(WriterRef { task: de.edge.writer, frame: link.writer_frame, offset: link.offset });
                    if bound > f.shifted_phase as i64 {
                        f.shifted_phase = bound as Time;
                    }
                }
            }
        }
        let max_shifted_phase = frames.iter().flatten().map(|f| f.shifted_phase).max().unwrap_or(0);
        let max_shifted_phase = max_shifted_phase.max(original.max_phase());
        // O* stays below the next frame's phase for schedulable inputs.
        for (t, fs) in frames.iter().enumerate() {
            for w in fs.windows(2) {
                if w[0].shifted_phase > w[1].phase {
                    return Err(Error::Format(format!(
                        "frame {} of task {t} shifted past the next frame; the data flow does not fit this task set",
                        w[0].index
                    )));
                }
            }
        }
        Ok(TransformedTaskSet { original, frames, ddf, buffers, max_shifted_phase })
    }

    /// Deadline check of the all-WCET schedule.
    pub fn schedulability(&self) -> Result<SchedulabilityReport> {
        let trace = simulate(self, &ExecutionTimePolicy::AllWcet, schedulability_horizon(self))?;
        Ok(check_schedulability(&trace))
    }

    pub fn original(&self) -> &TaskSet {
        &self.original
    }

    pub fn ddf(&self) -> &Ddf {
        &self.ddf
    }

    pub fn frames(&self, task: TaskId) -> &[Frame] {
        &self.frames[task]
    }

    pub fn all_frames(&self) -> impl Iterator<Item = &Frame> {
        self.frames.iter().flatten()
    }

    pub fn frame_count(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    pub fn buffers(&self) -> &BufferPlan {
        &self.buffers
    }

    /// Replaces the buffer plan, e.g. to study undersized buffers.
    pub fn with_buffers(mut self, buffers: BufferPlan) -> Self {
        self.buffers = buffers;
        self
    }

    fn frame_of(&self, job: JobId) -> (&Frame, u64) {
        let n = self.original.frames(job.task);
        let (h, j) = ((job.k - 1) / n, (job.k - 1) % n);
        (&self.frames[job.task][j as usize], h)
    }

    /// Writer jobs that must finish before `job` may start.
    pub fn blocking_writers(&self, job: JobId) -> impl Iterator<Item = JobId> + '_ {
        let (frame, h) = self.frame_of(job);
        frame
            .writers
            .iter()
            .filter_map(move |w| w.job(h, self.original.frames(w.task)))
    }
}

/// Dispatch eligibility in the transformed system: released (at its shifted
/// phase) and every writer it depends on has finished.
pub fn eligibility(tset: &TransformedTaskSet, job: JobId, now: Time, state: &SchedulerState) -> bool {
    now >= tset.release(job) && tset.blocking_writers(job).all(|w| state.is_finished(w))
}

impl Workload for TransformedTaskSet {
    fn task_set(&self) -> &TaskSet {
        &self.original
    }

    fn release(&self, job: JobId) -> Time {
        let (frame, h) = self.frame_of(job);
        frame.shifted_phase + h * self.original.hyperperiod()
    }

    fn eligible(&self, job: JobId, now: Time, state: &SchedulerState) -> bool {
        eligibility(self, job, now, state)
    }

    fn max_phase(&self) -> Time {
        self.max_shifted_phase
    }
}

#[derive(Default)]
struct CeGraphBuilder {
    edges: Vec<Edge>,
}

impl CeGraphBuilder {
    fn push(&mut self, e: Edge) {
        self.edges.push(e);
    }

    fn order_and_depth(&self) -> Result<(Vec<TaskId>, BTreeMap<TaskId, usize>)> {
        let chains: Vec<crate::model::Chain> = self
            .edges
            .iter()
            .map(|e| crate::model::Chain::new(vec![e.writer, e.reader]))
            .collect::<Result<_>>()?;
        let g = CeGraph::from_chains(&chains)?;
        Ok((g.topological_order()?, g.depths()?))
    }
}

/// Writes of `edge`'s writer that can land in a slot before reader job
/// `reader` reads, counting the intended write itself.
///
/// Counts writer jobs `l >= intended` with `we_min(l) <= re_max(reader)`.
pub fn window_writes(bounds: &RwBounds, edge: Edge, intended: u64, reader: u64) -> u64 {
    let Some(rb) = bounds.get(JobId::new(edge.reader, reader)) else {
        return 1;
    };
    let mut count = 0;
    let mut l = intended;
    while let Some(wb) = bounds.get(JobId::new(edge.writer, l)) {
        if wb.we_min > rb.re_max {
            break;
        }
        count += 1;
        l += 1;
    }
    count.max(1)
}

/// Buffer sizes considering reader jobs of the given hyperperiods.
pub fn buffer_sizes_over(
    tset: &TransformedTaskSet,
    bounds: &RwBounds,
    hyperperiods: std::ops::Range<u64>,
) -> BufferPlan {
    let mut sizes = BTreeMap::new();
    for de in &tset.ddf.edges {
        let n_r = tset.ddf.frames[de.edge.reader];
        let entry = sizes.entry(de.edge.writer).or_insert(1u64);
        for h in hyperperiods.clone() {
            for j in 0..n_r {
                let reader = h * n_r + j + 1;
                if let Writer::Job(l) = tset.ddf.resolve(de, reader) {
                    *entry = (*entry).max(window_writes(bounds, de.edge, l, reader));
                }
            }
        }
    }
    BufferPlan { sizes }
}

/// `bs(τ_w)` for every writer task: the largest number of its writes that
/// may fall between a reader's intended write and that reader's latest read.
///
/// A link with offset `-d` reads the initial value during the first `d`
/// hyperperiods, so readers are considered up to two hyperperiods past the
/// largest such lag. That covers the transient start and the steady state.
pub fn buffer_sizes(tset: &TransformedTaskSet, bounds: &RwBounds) -> BufferPlan {
    let lag = tset
        .ddf
        .edges
        .iter()
        .flat_map(|e| &e.links)
        .map(|l| (-l.offset).max(0) as u64)
        .max()
        .unwrap_or(0);
    buffer_sizes_over(tset, bounds, 0..lag + 2)
}
