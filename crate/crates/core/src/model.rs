//! Task model: periodic tasks, jobs, cause-effect chains and graphs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{Duration, Time};

/// Index of a task inside its [`TaskSet`]. Dense from zero.
pub type TaskId = usize;

/// A periodic task `(T, O, B, W)` with an explicit fixed priority.
///
/// Larger `priority` values are more urgent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub period: Duration,
    pub phase: Duration,
    pub bcet: Duration,
    pub wcet: Duration,
    pub priority: i64,
}

impl TaskSpec {
    pub fn new(id: TaskId, period: Duration, phase: Duration, bcet: Duration, wcet: Duration) -> Self {
        TaskSpec { id, period, phase, bcet, wcet, priority: 0 }
    }

    pub fn with_priority(self, priority: i64) -> Self {
        TaskSpec { priority, ..self }
    }

    /// Release time of the `k`-th job (1-based).
    pub fn release(&self, k: u64) -> Time {
        job_release(self, k)
    }

    pub fn utilization(&self) -> f64 {
        self.wcet as f64 / self.period as f64
    }
}

/// Release of `J^k` for a periodic task: `O + (k - 1) T`.
///
/// `k` must be at least 1.
pub fn job_release(task: &TaskSpec, k: u64) -> Time {
    debug_assert!(k >= 1, "job indices are 1-based");
    task.phase + (k - 1) * task.period
}

/// Identifies the `k`-th job of a task. `k` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JobId {
    pub task: TaskId,
    pub k: u64,
}

impl JobId {
    pub const fn new(task: TaskId, k: u64) -> Self {
        JobId { task, k }
    }

    /// The next job of the same task.
    pub fn next(self) -> Self {
        JobId { task: self.task, k: self.k + 1 }
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "J{}^{}", self.task, self.k)
    }
}

/// A validated task set.
///
/// Besides the tasks themselves it records which tasks are sensors: jobs of
/// those tasks read (sample) at their release instead of at their start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSet {
    tasks: Vec<TaskSpec>,
    hyperperiod: Duration,
    max_phase: Duration,
    sensors: BTreeSet<TaskId>,
}

/// Validates a list of tasks and derives the hyperperiod and maximum phase.
pub fn validate_task_set(tasks: Vec<TaskSpec>) -> Result<TaskSet> {
    TaskSet::new(tasks)
}

impl TaskSet {
    pub fn new(tasks: Vec<TaskSpec>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::InvalidTaskSet("empty task set".into()));
        }
        for (pos, t) in tasks.iter().enumerate() {
            if t.id != pos {
                return Err(Error::InvalidTaskSet(format!(
                    "task ids must be unique and dense from 0: found id {} at position {pos}",
                    t.id
                )));
            }
            if t.period == 0 {
                return Err(Error::InvalidTask { task: t.id, reason: "period must be positive".into() });
            }
            if t.bcet == 0 {
                return Err(Error::InvalidTask { task: t.id, reason: "BCET must be positive".into() });
            }
            if t.bcet > t.wcet {
                return Err(Error::InvalidTask {
                    task: t.id,
                    reason: format!("BCET {} exceeds WCET {}", t.bcet, t.wcet),
                });
            }
            if t.wcet > t.period {
                return Err(Error::InvalidTask {
                    task: t.id,
                    reason: format!("WCET {} exceeds period {}", t.wcet, t.period),
                });
            }
        }
        let mut hyperperiod: Duration = 1;
        for t in &tasks {
            hyperperiod = lcm(hyperperiod, t.period)
                .ok_or_else(|| Error::InvalidTaskSet("hyperperiod overflows u64".into()))?;
        }
        let max_phase = tasks.iter().map(|t| t.phase).max().unwrap_or(0);
        Ok(TaskSet { tasks, hyperperiod, max_phase, sensors: BTreeSet::new() })
    }

    /// Marks the given tasks as sensors (read at release).
    pub fn with_sensors(mut self, sensors: impl IntoIterator<Item = TaskId>) -> Result<Self> {
        let sensors: BTreeSet<TaskId> = sensors.into_iter().collect();
        if let Some(&bad) = sensors.iter().find(|&&s| s >= self.tasks.len()) {
            return Err(Error::UnknownTask(bad));
        }
        self.sensors = sensors;
        Ok(self)
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn task(&self, id: TaskId) -> &TaskSpec {
        &self.tasks[id]
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn hyperperiod(&self) -> Duration {
        self.hyperperiod
    }

    pub fn max_phase(&self) -> Duration {
        self.max_phase
    }

    pub fn sensors(&self) -> &BTreeSet<TaskId> {
        &self.sensors
    }

    pub fn is_sensor(&self, task: TaskId) -> bool {
        self.sensors.contains(&task)
    }

    /// Number of jobs of `task` in one hyperperiod.
    pub fn frames(&self, task: TaskId) -> u64 {
        self.hyperperiod / self.tasks[task].period
    }

    pub fn utilization(&self) -> f64 {
        self.tasks.iter().map(TaskSpec::utilization).sum()
    }

    /// `H + O_max`: start of the steady-state window.
    pub fn steady_start(&self) -> Time {
        self.hyperperiod + self.max_phase
    }

    /// `2H + O_max`: end of the window that has to be simulated.
    pub fn analysis_end(&self) -> Time {
        2 * self.hyperperiod + self.max_phase
    }
}

pub(crate) fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

pub(crate) fn lcm(a: u64, b: u64) -> Option<u64> {
    if a == 0 || b == 0 {
        return Some(0);
    }
    (a / gcd(a, b)).checked_mul(b)
}

/// A cause-effect chain: an ordered list of distinct tasks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Chain {
    tasks: Vec<TaskId>,
}

impl Chain {
    pub fn new(tasks: Vec<TaskId>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::InvalidChain("empty chain".into()));
        }
        let distinct: BTreeSet<_> = tasks.iter().collect();
        if distinct.len() != tasks.len() {
            return Err(Error::InvalidChain(format!("task repeats in chain {tasks:?}")));
        }
        Ok(Chain { tasks })
    }

    pub fn tasks(&self) -> &[TaskId] {
        &self.tasks
    }

    pub fn head(&self) -> TaskId {
        self.tasks[0]
    }

    pub fn tail(&self) -> TaskId {
        *self.tasks.last().expect("chains are non-empty")
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Consecutive `(writer, reader)` pairs.
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.tasks.windows(2).map(|w| Edge { writer: w[0], reader: w[1] })
    }

    pub fn check_against(&self, set: &TaskSet) -> Result<()> {
        match self.tasks.iter().find(|&&t| t >= set.len()) {
            Some(&t) => Err(Error::UnknownTask(t)),
            None => Ok(()),
        }
    }
}

impl fmt::Display for Chain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.tasks.iter().map(|t| format!("t{t}")).collect();
        f.write_str(&parts.join("->"))
    }
}

/// A task-level data dependency: `reader` consumes what `writer` produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub writer: TaskId,
    pub reader: TaskId,
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}->t{}", self.writer, self.reader)
    }
}

/// Union of chains. Always acyclic.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CeGraph {
    edges: BTreeSet<Edge>,
}

impl CeGraph {
    pub fn from_chains<'a>(chains: impl IntoIterator<Item = &'a Chain>) -> Result<Self> {
        let edges = chains.into_iter().flat_map(|c| c.edges()).collect();
        let graph = CeGraph { edges };
        graph.topological_order()?;
        Ok(graph)
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.edges.iter().copied()
    }

    pub fn incoming(&self, reader: TaskId) -> impl Iterator<Item = Edge> + '_ {
        self.edges.iter().copied().filter(move |e| e.reader == reader)
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Tasks touched by some edge, writers before readers. Ties go to the
    /// lower task id. Fails on a cycle.
    pub fn topological_order(&self) -> Result<Vec<TaskId>> {
        let mut indegree: BTreeMap<TaskId, usize> = BTreeMap::new();
        for e in &self.edges {
            indegree.entry(e.writer).or_insert(0);
            *indegree.entry(e.reader).or_insert(0) += 1;
        }
        let mut ready: BTreeSet<TaskId> =
            indegree.iter().filter(|(_, &d)| d == 0).map(|(&t, _)| t).collect();
        let mut order = Vec::with_capacity(indegree.len());
        while let Some(t) = ready.pop_first() {
            order.push(t);
            for e in self.edges.iter().filter(|e| e.writer == t) {
                let d = indegree.get_mut(&e.reader).expect("reader registered");
                *d -= 1;
                if *d == 0 {
                    ready.insert(e.reader);
                }
            }
        }
        if order.len() != indegree.len() {
            return Err(Error::CyclicGraph);
        }
        Ok(order)
    }

    /// Longest path (in edges) from any source to each task.
    pub fn depths(&self) -> Result<BTreeMap<TaskId, usize>> {
        let mut depth = BTreeMap::new();
        for t in self.topological_order()? {
            let d = self
                .incoming(t)
                .map(|e| depth.get(&e.writer).copied().unwrap_or(0) + 1)
                .max()
                .unwrap_or(0);
            depth.insert(t, d);
        }
        Ok(depth)
    }
}

/// A task set together with the chains analysed on it.
#[derive(Debug, Clone, PartialEq)]
pub struct System {
    pub tasks: TaskSet,
    pub chains: Vec<Chain>,
}

impl System {
    /// Builds a system whose sensors are the chain heads.
    pub fn new(tasks: TaskSet, chains: Vec<Chain>) -> Result<Self> {
        let heads: Vec<TaskId> = chains.iter().map(Chain::head).collect();
        let tasks = tasks.with_sensors(heads)?;
        Self::with_explicit_sensors(tasks, chains)
    }

    /// Keeps whatever sensor set `tasks` already carries.
    pub fn with_explicit_sensors(tasks: TaskSet, chains: Vec<Chain>) -> Result<Self> {
        for c in &chains {
            c.check_against(&tasks)?;
        }
        CeGraph::from_chains(&chains)?;
        Ok(System { tasks, chains })
    }

    pub fn graph(&self) -> CeGraph {
        CeGraph::from_chains(&self.chains).expect("validated on construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anomaly_example() -> TaskSet {
        TaskSet::new(vec![
            TaskSpec::new(0, 6000, 0, 500, 2500),
            TaskSpec::new(1, 2000, 0, 500, 1000),
            TaskSpec::new(2, 6000, 0, 500, 500),
        ])
        .unwrap()
    }

    #[test]
    fn anomaly_example_hyperperiod() {
        let set = anomaly_example();
        assert_eq!(set.hyperperiod(), 6000);
        assert_eq!(set.max_phase(), 0);
    }

    #[test]
    fn single_task_set() {
        let set = TaskSet::new(vec![TaskSpec::new(0, 10, 3, 1, 1)]).unwrap();
        assert_eq!(set.hyperperiod(), 10);
        assert_eq!(set.max_phase(), 3);
    }

    #[test]
    fn rejects_invalid_tasks() {
        assert!(TaskSet::new(vec![]).is_err());
        assert!(TaskSet::new(vec![TaskSpec::new(0, 10, 0, 0, 1)]).is_err());
        assert!(TaskSet::new(vec![TaskSpec::new(0, 10, 0, 3, 2)]).is_err());
        assert!(TaskSet::new(vec![TaskSpec::new(0, 2, 0, 1, 3)]).is_err());
        assert!(TaskSet::new(vec![TaskSpec::new(0, 0, 0, 1, 1)]).is_err());
        let dup = vec![TaskSpec::new(0, 10, 0, 1, 1), TaskSpec::new(0, 10, 0, 1, 1)];
        assert!(TaskSet::new(dup).is_err());
    }

    #[test]
    fn releases() {
        assert_eq!(job_release(&TaskSpec::new(0, 2, 0, 1, 1), 3), 4);
        assert_eq!(job_release(&TaskSpec::new(0, 6, 0, 1, 1), 1), 0);
        assert_eq!(job_release(&TaskSpec::new(0, 5, 2, 1, 1), 4), 17);
    }

    #[test]
    fn chains_reject_repeats_and_cycles() {
        assert!(Chain::new(vec![0, 1, 0]).is_err());
        let a = Chain::new(vec![0, 1]).unwrap();
        let b = Chain::new(vec![1, 0]).unwrap();
        assert!(matches!(CeGraph::from_chains([&a, &b]), Err(Error::CyclicGraph)));
        let c = Chain::new(vec![1, 2]).unwrap();
        let g = CeGraph::from_chains([&a, &c]).unwrap();
        assert_eq!(g.topological_order().unwrap(), vec![0, 1, 2]);
        assert_eq!(g.depths().unwrap()[&2], 2);
    }

    #[test]
    fn system_marks_heads_as_sensors() {
        let sys = System::new(anomaly_example(), vec![Chain::new(vec![1, 2]).unwrap()]).unwrap();
        assert!(sys.tasks.is_sensor(1));
        assert!(!sys.tasks.is_sensor(2));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn release_strictly_increasing(period in 1u64..1000, phase in 0u64..1000, k in 1u64..500) {
                let t = TaskSpec::new(0, period, phase, 1, 1);
                prop_assert!(job_release(&t, k + 1) > job_release(&t, k));
            }

            #[test]
            fn jobs_per_hyperperiod_window(periods in prop::collection::vec(prop::sample::select(vec![1u64, 2, 3, 4, 5, 6, 8, 10, 12]), 1..5),
                                           phases in prop::collection::vec(0u64..20, 5),
                                           start in 20u64..120) {
                let tasks: Vec<TaskSpec> = periods.iter().enumerate()
                    .map(|(i, &p)| TaskSpec::new(i, p, phases[i], 1, 1)).collect();
                let set = TaskSet::new(tasks).unwrap();
                let h = set.hyperperiod();
                for t in set.tasks() {
                    let n = (1..).map(|k| job_release(t, k)).take_while(|&r| r < start + h)
                        .filter(|&r| r >= start).count() as u64;
                    prop_assert_eq!(n, h / t.period);
                }
            }

            #[test]
            fn hyperperiod_grows_by_multiples(periods in prop::collection::vec(1u64..30, 1..5), extra in 1u64..30) {
                let mk = |ps: &[u64]| TaskSet::new(ps.iter().enumerate()
                    .map(|(i, &p)| TaskSpec::new(i, p, 0, 1, 1)).collect()).unwrap();
                let base = mk(&periods);
                let mut more = periods.clone();
                more.push(extra);
                prop_assert_eq!(mk(&more).hyperperiod() % base.hyperperiod(), 0);
            }
        }
    }
}
