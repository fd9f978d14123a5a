//! Report rows and file helpers.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::{CliResult, Failure};

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult {
    let tmp = path.with_extension("tmp~");
    let write = || -> std::io::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Failure::at(path, e))
}

pub fn csv_bytes<R: Serialize>(rows: &[R]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Failure::input(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Failure::input(e.to_string()))
}

/// Sends `bytes` to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> CliResult {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => std::io::stdout().write_all(bytes).map_err(|e| Failure::input(e.to_string())),
    }
}

#[derive(Serialize)]
pub struct ManifestRow {
    pub seed: u64,
    pub utilization: f64,
    pub alpha: f64,
    pub index: usize,
    pub path: String,
    pub tasks: usize,
    pub chains: usize,
    pub achieved_utilization: f64,
    pub schedulable: bool,
}

#[derive(Serialize)]
pub struct ChainReport {
    pub index: usize,
    pub chain: String,
    pub mrt: u64,
    pub mrt_min: u64,
    pub jitter: u64,
    pub mrt_ms: f64,
    pub mrt_min_ms: f64,
    pub jitter_ms: f64,
    pub jitter_ratio: f64,
    pub memory: u64,
    pub ta: String,
}

#[derive(Serialize)]
pub struct RunRow {
    pub run: u64,
    pub chain: usize,
    pub art: f64,
    pub min: u64,
    pub max: u64,
}

#[derive(Serialize)]
pub struct SimulationSummary {
    pub chain: usize,
    pub mrt: u64,
    pub mrt_min: u64,
    pub jitter: u64,
    pub art: f64,
    /// Mean over runs of each run's largest reaction. Equals `mrt` when every
    /// job is forced to its WCET.
    pub art_worst: f64,
    pub observed_min: u64,
    pub observed_max: u64,
    pub runs: u64,
    pub in_range: bool,
}

#[derive(Serialize)]
pub struct OccupancyRow {
    pub task: usize,
    pub bs: u64,
    pub max_occupancy: u64,
}

#[derive(Serialize)]
pub struct OccupancyReport {
    pub memory: u64,
    pub writer: Vec<OccupancyRow>,
}

#[derive(Serialize)]
pub struct IacReport {
    pub m: u64,
    pub z: u64,
    pub z_prime: u64,
    pub length: u64,
    pub jobs: Vec<String>,
}

impl From<&ddf_core::Iac> for IacReport {
    fn from(i: &ddf_core::Iac) -> Self {
        IacReport { m: i.m, z: i.z, z_prime: i.z_prime, length: i.length(), jobs: i.jobs.iter().map(|j| j.to_string()).collect() }
    }
}

#[derive(Serialize)]
pub struct WitnessJob {
    pub job: String,
    pub task: usize,
    pub k: u64,
    pub exec: u64,
}

#[derive(Serialize)]
pub struct VerdictReport {
    pub chain: String,
    pub treated: bool,
    pub levels: u32,
    pub window: String,
    pub anomaly: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cause: Option<u8>,
    pub wcet_mrt: u64,
    pub oracle_mrt: u64,
    pub runs: u64,
    pub excluded: usize,
    pub witness: Vec<WitnessJob>,
    pub wcet_iac: IacReport,
    pub oracle_iac: IacReport,
}

pub fn toml_bytes<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    toml::to_string(value).map(String::into_bytes).map_err(|e| Failure::input(e.to_string()))
}
