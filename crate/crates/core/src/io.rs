//! Text formats: systems and transformed systems as TOML, traces as CSV.

use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};

use crate::ddf::{BufferPlan, Ddf, DdfEdge, FrameLink, TransformedTaskSet};
use crate::error::{Error, Result};
use crate::model::{Chain, Edge, System, TaskId, TaskSet, TaskSpec};
use crate::sim::Trace;
use crate::time::{Time, TickUnit};

pub const SYSTEM_FORMAT: &str = "ddf-system/1";
pub const TRANSFORMED_FORMAT: &str = "ddf-transformed/1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskRow {
    id: TaskId,
    period: u64,
    #[serde(default)]
    phase: u64,
    bcet: u64,
    wcet: u64,
    priority: i64,
}

impl From<&TaskSpec> for TaskRow {
    fn from(t: &TaskSpec) -> Self {
        TaskRow { id: t.id, period: t.period, phase: t.phase, bcet: t.bcet, wcet: t.wcet, priority: t.priority }
    }
}

impl From<TaskRow> for TaskSpec {
    fn from(r: TaskRow) -> Self {
        TaskSpec::new(r.id, r.period, r.phase, r.bcet, r.wcet).with_priority(r.priority)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainRow {
    tasks: Vec<TaskId>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemFile {
    format: String,
    tick_unit: TickUnit,
    /// Defaults to the chain heads.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sensors: Option<Vec<TaskId>>,
    #[serde(default)]
    task: Vec<TaskRow>,
    #[serde(default)]
    chain: Vec<ChainRow>,
}

fn parse_error(what: &str, e: impl std::fmt::Display) -> Error {
    Error::Format(format!("{what}: {e}"))
}

fn check_format(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Format(format!("format: expected \"{expected}\", found \"{found}\"")));
    }
    Ok(())
}

fn build_system(tasks: Vec<TaskRow>, chains: Vec<ChainRow>, sensors: Option<Vec<TaskId>>) -> Result<System> {
    let set = TaskSet::new(tasks.into_iter().map(TaskSpec::from).collect())?;
    let chains = chains.into_iter().map(|c| Chain::new(c.tasks)).collect::<Result<Vec<_>>>()?;
    match sensors {
        None => System::new(set, chains),
        Some(s) => System::with_explicit_sensors(set.with_sensors(s)?, chains),
    }
}

fn system_rows(sys: &System) -> (Vec<TaskRow>, Vec<ChainRow>, Option<Vec<TaskId>>) {
    let tasks = sys.tasks.tasks().iter().map(TaskRow::from).collect();
    let chains = sys.chains.iter().map(|c| ChainRow { tasks: c.tasks().to_vec() }).collect();
    let sensors = sys.tasks.sensors().iter().copied().collect();
    (tasks, chains, Some(sensors))
}

pub fn read_system(text: &str) -> Result<(System, TickUnit)> {
    let file: SystemFile = toml::from_str(text).map_err(|e| parse_error("system file", e))?;
    check_format(&file.format, SYSTEM_FORMAT)?;
    Ok((build_system(file.task, file.chain, file.sensors)?, file.tick_unit))
}

pub fn write_system(sys: &System, unit: TickUnit) -> Result<String> {
    let (task, chain, sensors) = system_rows(sys);
    let file = SystemFile { format: SYSTEM_FORMAT.into(), tick_unit: unit, sensors, task, chain };
    toml::to_string(&file).map_err(|e| parse_error("system file", e))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct SlotRule {
    base: u64,
    /// Added per hyperperiod, modulo the buffer size.
    stride: u64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct WriterRow {
    task: TaskId,
    frame: u64,
    delta: i64,
    slot: SlotRule,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct FrameRow {
    task: TaskId,
    id: u64,
    phase: Time,
    shifted_phase: Time,
    np0: i64,
    np1: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    write_slot: Option<SlotRule>,
    #[serde(default)]
    writers: Vec<WriterRow>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRow {
    writer: TaskId,
    reader: TaskId,
    writer_frames: Vec<u64>,
    deltas: Vec<i64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BufferRow {
    writer: TaskId,
    size: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformedFile {
    format: String,
    tick_unit: TickUnit,
    hyperperiod: u64,
    memory: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sensors: Option<Vec<TaskId>>,
    #[serde(default)]
    task: Vec<TaskRow>,
    #[serde(default)]
    chain: Vec<ChainRow>,
    #[serde(default)]
    edge: Vec<EdgeRow>,
    #[serde(default)]
    buffer: Vec<BufferRow>,
    #[serde(default)]
    frame: Vec<FrameRow>,
}

fn frame_rows(tset: &TransformedTaskSet) -> Vec<FrameRow> {
    let set = tset.original();
    let plan = tset.buffers();
    tset.all_frames()
        .map(|f| {
            let write_slot = plan.sizes.get(&f.task).map(|&bs| SlotRule { base: f.index % bs, stride: set.frames(f.task) % bs });
            let writers = f
                .writers
                .iter()
                .map(|w| {
                    let bs = plan.size(w.task);
                    let n_w = set.frames(w.task) as i64;
                    let base = (w.offset * n_w + w.frame as i64).rem_euclid(bs as i64) as u64;
                    WriterRow { task: w.task, frame: w.frame, delta: w.offset, slot: SlotRule { base, stride: n_w as u64 % bs } }
                })
                .collect();
            FrameRow {
                task: f.task,
                id: f.index,
                phase: f.phase,
                shifted_phase: f.shifted_phase,
                np0: f.np.0,
                np1: f.np.1,
                write_slot,
                writers,
            }
        })
        .collect()
}

/// Serializes the transformed system together with its chains.
pub fn write_transformed(tset: &TransformedTaskSet, chains: &[Chain], unit: TickUnit) -> Result<String> {
    let set = tset.original();
    let file = TransformedFile {
        format: TRANSFORMED_FORMAT.into(),
        tick_unit: unit,
        hyperperiod: set.hyperperiod(),
        memory: tset.buffers().memory(),
        sensors: Some(set.sensors().iter().copied().collect()),
        task: set.tasks().iter().map(TaskRow::from).collect(),
        chain: chains.iter().map(|c| ChainRow { tasks: c.tasks().to_vec() }).collect(),
        edge: tset
            .ddf()
            .edges
            .iter()
            .map(|de| EdgeRow {
                writer: de.edge.writer,
                reader: de.edge.reader,
                writer_frames: de.links.iter().map(|l| l.writer_frame).collect(),
                deltas: de.links.iter().map(|l| l.offset).collect(),
            })
            .collect(),
        buffer: tset.buffers().sizes.iter().map(|(&writer, &size)| BufferRow { writer, size }).collect(),
        frame: frame_rows(tset),
    };
    toml::to_string(&file).map_err(|e| parse_error("transformed file", e))
}

/// Parses a transformed system. Frame tables are recomputed from the data
/// flow and must match the file.
pub fn read_transformed(text: &str) -> Result<(TransformedTaskSet, Vec<Chain>, TickUnit)> {
    let file: TransformedFile = toml::from_str(text).map_err(|e| parse_error("transformed file", e))?;
    check_format(&file.format, TRANSFORMED_FORMAT)?;
    let sys = build_system(file.task, file.chain, file.sensors)?;
    let set = sys.tasks;
    let frames: Vec<u64> = (0..set.len()).map(|t| set.frames(t)).collect();
    let mut edges = Vec::new();
    for e in file.edge {
        if e.writer_frames.len() != e.deltas.len() {
            return Err(Error::Format(format!("edge {}->{}: writer_frames and deltas differ in length", e.writer, e.reader)));
        }
        let links = e.writer_frames.iter().zip(&e.deltas).map(|(&writer_frame, &offset)| FrameLink { writer_frame, offset }).collect();
        edges.push(DdfEdge { edge: Edge { writer: e.writer, reader: e.reader }, links });
    }
    let ddf = Ddf { hyperperiod: set.hyperperiod(), frames, edges };
    let mut sizes = BTreeMap::new();
    for b in file.buffer {
        if b.size == 0 {
            return Err(Error::Format(format!("buffer of task {}: size must be positive", b.writer)));
        }
        sizes.insert(b.writer, b.size);
    }
    let tset = TransformedTaskSet::assemble(set, ddf, BufferPlan { sizes })?;
    let expected = frame_rows(&tset);
    if expected != file.frame {
        return Err(Error::Format("frame tables do not match the data flow".into()));
    }
    Ok((tset, sys.chains, file.tick_unit))
}

#[derive(Serialize)]
struct TraceRow {
    task: TaskId,
    k: u64,
    release: Time,
    start: Time,
    finish: Time,
    exec: u64,
    deadline_miss: bool,
}

pub fn write_trace_csv<W: io::Write>(trace: &Trace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut rows: Vec<_> = trace.records().collect();
    rows.sort_by_key(|r| (r.start, r.job));
    for r in rows {
        w.serialize(TraceRow {
            task: r.job.task,
            k: r.job.k,
            release: r.release,
            start: r.start,
            finish: r.finish,
            exec: r.exec,
            deadline_miss: r.deadline_miss(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddf::{extract_ddf, transform};

    const ANOMALY: &str = r#"format = "ddf-system/1"
tick_unit = "1us"
sensors = [1]

[[task]]
id = 0
period = 6000
phase = 0
bcet = 500
wcet = 2500
priority = 2

[[task]]
id = 1
period = 2000
phase = 0
bcet = 500
wcet = 1000
priority = 3

[[task]]
id = 2
period = 6000
phase = 0
bcet = 500
wcet = 500
priority = 1

[[chain]]
tasks = [1, 2]
"#;

    #[test]
    fn system_round_trip_is_byte_stable() {
        let (sys, unit) = read_system(ANOMALY).unwrap();
        assert_eq!(unit, TickUnit::MICROSECOND);
        assert_eq!(sys.tasks.hyperperiod(), 6000);
        let text = write_system(&sys, unit).unwrap();
        assert_eq!(text, ANOMALY);
        let (again, _) = read_system(&text).unwrap();
        assert_eq!(again, sys);
    }

    #[test]
    fn bad_header_rejected() {
        let text = ANOMALY.replace("ddf-system/1", "other/2");
        assert!(read_system(&text).unwrap_err().to_string().contains("format"));
        assert!(read_system("format = \"ddf-system/1\"\ntick_unit = \"1us\"\n[[task]]\nid = 0\nperiod = 0\nbcet = 0\nwcet = 0\npriority = 0\n").is_err());
    }

    #[test]
    fn transformed_round_trip() {
        let (sys, unit) = read_system(ANOMALY).unwrap();
        let ddf = extract_ddf(&sys.tasks, &sys.graph()).unwrap();
        let t = transform(&sys.tasks, &ddf).unwrap();
        let text = write_transformed(&t, &sys.chains, unit).unwrap();
        assert!(text.contains("shifted_phase = 4000"));
        let (back, chains, _) = read_transformed(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(chains, sys.chains);
        assert_eq!(write_transformed(&back, &chains, unit).unwrap(), text);
        let tampered = text.replace("shifted_phase = 4000", "shifted_phase = 3000");
        assert!(read_transformed(&tampered).is_err());
    }

    #[test]
    fn trace_csv_columns() {
        let (sys, _) = read_system(ANOMALY).unwrap();
        let trace = crate::sim::simulate(&sys.tasks, &crate::sim::ExecutionTimePolicy::AllWcet, 6000).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("task,k,release,start,finish,exec,deadline_miss"));
        assert_eq!(lines.next(), Some("1,1,0,0,1000,1000,false"));
        assert_eq!(text.lines().count(), 6);
    }
}
