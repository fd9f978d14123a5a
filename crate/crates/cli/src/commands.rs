use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use ddf_core::benchgen::{generate_system, BenchConfig};
use ddf_core::io::{read_system, read_transformed, write_system, write_transformed, write_trace_csv, SYSTEM_FORMAT, TRANSFORMED_FORMAT};
use ddf_core::oracle::{detect_ta, detect_ta_treated, OracleWindow, TaVerdict};
use ddf_core::runtime::{analyze_treated, analyze_treated_min, empirical_reaction_times, online_run, run_horizon, verify_ddf};
use ddf_core::sim::derive_seed;
use ddf_core::chain::{analyze_register, analyze_register_min};
use ddf_core::{extract_ddf, simulate, transform, Chain, Error, ExecutionTimePolicy, System, TickUnit, TransformedTaskSet, Workload};

use crate::output::*;
use crate::{AnalyzeArgs, Cli, CliResult, Command, Failure, GenArgs, OracleArgs, PolicyArg, ProbeArgs, SimulateArgs, TraceArgs, TransformArgs};

pub fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Gen(a) => gen(a, cli.tick_unit),
        Command::Transform(a) => transform_cmd(a, cli.tick_unit),
        Command::Analyze(a) => analyze(a, cli.tick_unit),
        Command::Simulate(a) => simulate_cmd(a, cli.tick_unit),
        Command::Oracle(a) => oracle(a, cli.tick_unit),
        Command::Trace(a) => trace(a, cli.tick_unit),
    }
}

enum Loaded {
    Plain(System),
    Treated(TransformedTaskSet, Vec<Chain>),
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::at(path, e))
}

fn load(path: &Path, unit: Option<TickUnit>) -> CliResult<(Loaded, TickUnit)> {
    let text = read_text(path)?;
    let table: toml::Table = text.parse().map_err(|e| Failure::at(path, e))?;
    let format = table.get("format").and_then(|v| v.as_str()).unwrap_or_default();
    let at = |e: Error| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    };
    let (loaded, file_unit) = match format {
        SYSTEM_FORMAT => {
            let (sys, u) = read_system(&text).map_err(at)?;
            (Loaded::Plain(sys), u)
        }
        TRANSFORMED_FORMAT => {
            let (t, chains, u) = read_transformed(&text).map_err(at)?;
            (Loaded::Treated(t, chains), u)
        }
        other => return Err(Failure::at(path, format!("unknown format \"{other}\""))),
    };
    Ok((loaded, unit.unwrap_or(file_unit)))
}

fn treat(sys: &System) -> CliResult<TransformedTaskSet> {
    let ddf = extract_ddf(&sys.tasks, &sys.graph())?;
    Ok(transform(&sys.tasks, &ddf)?)
}

fn load_treated(path: &Path, unit: Option<TickUnit>, treat_plain: bool) -> CliResult<(Loaded, TickUnit)> {
    let (loaded, unit) = load(path, unit)?;
    Ok(match loaded {
        Loaded::Plain(sys) if treat_plain => {
            let t = treat(&sys)?;
            (Loaded::Treated(t, sys.chains), unit)
        }
        other => (other, unit),
    })
}

fn gen(a: &GenArgs, unit: Option<TickUnit>) -> CliResult {
    let mut cfg = match &a.config {
        Some(p) => BenchConfig::from_toml(&read_text(p)?).map_err(|e| Failure::at(p, e))?,
        None => BenchConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if !a.util.is_empty() {
        cfg.utilizations = a.util.clone();
    }
    if let Some(alpha) = a.alpha {
        cfg.alpha = alpha;
    }
    if let Some(n) = a.sets {
        cfg.sets_per_utilization = n;
    }
    if let Some(u) = unit {
        cfg.tick_unit = u;
    }
    cfg.validate().map_err(|e| Failure::input(e.to_string()))?;

    let jobs: Vec<(f64, usize)> = cfg
        .utilizations
        .iter()
        .flat_map(|&u| (0..cfg.sets_per_utilization).map(move |i| (u, i)))
        .collect();
    let systems = jobs
        .par_iter()
        .map(|&(u, i)| generate_system(&cfg, u, i).map_err(|e| Failure::infeasible(format!("U={u} set {i}: {e}"))))
        .collect::<CliResult<Vec<_>>>()?;

    let mut manifest = Vec::with_capacity(systems.len());
    for g in &systems {
        let name = format!("u{:03}_{:04}.toml", (g.utilization * 100.0).round() as u64, g.index);
        let text = write_system(&g.system, cfg.tick_unit)?;
        write_atomic(&a.out.join(&name), text.as_bytes())?;
        manifest.push(ManifestRow {
            seed: cfg.seed,
            utilization: g.utilization,
            alpha: cfg.alpha,
            index: g.index,
            path: name,
            tasks: g.system.tasks.len(),
            chains: g.system.chains.len(),
            achieved_utilization: (g.system.tasks.utilization() * 1e6).round() / 1e6,
            schedulable: g.schedulable,
        });
    }
    write_atomic(&a.out.join("manifest.csv"), &csv_bytes(&manifest)?)?;
    let unschedulable = manifest.iter().filter(|m| !m.schedulable).count();
    eprintln!("generated {} systems in {} ({unschedulable} not schedulable)", manifest.len(), a.out.display());
    Ok(())
}

fn transform_cmd(a: &TransformArgs, unit: Option<TickUnit>) -> CliResult {
    let (loaded, unit) = load(&a.system, unit)?;
    let Loaded::Plain(sys) = loaded else {
        return Err(Failure::at(&a.system, "already transformed"));
    };
    let t = treat(&sys)?;
    let text = write_transformed(&t, &sys.chains, unit)?;
    write_atomic(&a.out, text.as_bytes())?;
    let report = t.schedulability()?;
    eprintln!(
        "{} frames, {} tasks with shifted frames, memory {} items",
        t.frame_count(),
        sys.tasks.tasks().iter().filter(|task| t.frames(task.id).iter().any(|f| f.shifted_phase != f.phase)).count(),
        t.buffers().memory()
    );
    if !report.is_schedulable() {
        let first = &report.misses[0];
        return Err(Failure::infeasible(format!(
            "transformed system misses {} deadlines (first {} finishing at {}, deadline {})",
            report.misses.len(),
            first.job,
            first.finish,
            first.deadline
        )));
    }
    Ok(())
}

fn select_chains<'a>(chains: &'a [Chain], wanted: &[usize]) -> CliResult<Vec<(usize, &'a Chain)>> {
    if wanted.is_empty() {
        return Ok(chains.iter().enumerate().collect());
    }
    wanted
        .iter()
        .map(|&i| chains.get(i).map(|c| (i, c)).ok_or_else(|| Failure::input(format!("no chain {i} (system has {})", chains.len()))))
        .collect()
}

fn probe_label(v: &TaVerdict, treated: bool) -> String {
    match (v.present, treated) {
        (false, true) => format!("ta-free(k={})", v.levels),
        (false, false) => format!("none-found(k={})", v.levels),
        (true, _) => format!("anomaly({},{})", v.oracle.value, v.cause.map(|c| c.number()).unwrap_or(0)),
    }
}

fn analyze(a: &AnalyzeArgs, unit: Option<TickUnit>) -> CliResult {
    let (loaded, unit) = load_treated(&a.file, unit, a.treated)?;
    let window = a.probe.window();
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    match &loaded {
        Loaded::Plain(sys) => {
            let memory = sys.graph().edges().map(|e| e.writer).collect::<std::collections::BTreeSet<_>>().len() as u64;
            for (i, chain) in select_chains(&sys.chains, &a.chains)? {
                let max = analyze_register(&sys.tasks, chain, &ExecutionTimePolicy::AllWcet)?.value;
                let min = analyze_register_min(&sys.tasks, chain, &ExecutionTimePolicy::AllBcet)?.value;
                let ta = if a.no_probe {
                    "-".to_string()
                } else {
                    match detect_ta(&sys.tasks, chain, a.probe.levels, window, a.probe.budget) {
                        Ok(v) => probe_label(&v, false),
                        Err(Error::BudgetExceeded { .. }) => "unknown(budget)".into(),
                        Err(e) => return Err(e.into()),
                    }
                };
                rows.push(chain_row(i, chain, max, min, memory, ta, unit));
            }
        }
        Loaded::Treated(t, chains) => {
            let memory = t.buffers().memory();
            for (i, chain) in select_chains(chains, &a.chains)? {
                let max = analyze_treated(t, chain, &ExecutionTimePolicy::AllWcet)?.value;
                let min = analyze_treated_min(t, chain, &ExecutionTimePolicy::AllBcet)?.value;
                let ta = if a.no_probe {
                    "-".to_string()
                } else {
                    match detect_ta_treated(t, chain, a.probe.levels, window, a.probe.budget) {
                        Ok(v) => {
                            if v.present {
                                violations.push(format!("chain {i}: brute force found {} > {}", v.oracle.value, v.wcet.value));
                            }
                            probe_label(&v, true)
                        }
                        Err(Error::BudgetExceeded { .. }) => "unchecked(budget)".into(),
                        Err(e) => return Err(e.into()),
                    }
                };
                rows.push(chain_row(i, chain, max, min, memory, ta, unit));
            }
        }
    }
    emit(a.out.as_deref(), &csv_bytes(&rows)?)?;
    if !violations.is_empty() {
        return Err(Failure::violation(format!("timing anomaly in treated system: {}", violations.join("; "))));
    }
    Ok(())
}

fn chain_row(index: usize, chain: &Chain, mrt: u64, mrt_min: u64, memory: u64, ta: String, unit: TickUnit) -> ChainReport {
    let jitter = mrt - mrt_min;
    ChainReport {
        index,
        chain: chain.to_string(),
        mrt,
        mrt_min,
        jitter,
        mrt_ms: unit.to_ms(mrt),
        mrt_min_ms: unit.to_ms(mrt_min),
        jitter_ms: unit.to_ms(jitter),
        jitter_ratio: if mrt == 0 { 0.0 } else { jitter as f64 / mrt as f64 },
        memory,
        ta,
    }
}

struct RunOutcome {
    per_chain: Vec<(f64, u64, u64)>,
    occupancy: BTreeMap<usize, u64>,
    problems: Vec<String>,
}

fn simulate_cmd(a: &SimulateArgs, unit: Option<TickUnit>) -> CliResult {
    let (loaded, _) = load(&a.file, unit)?;
    let Loaded::Treated(t, chains) = loaded else {
        return Err(Failure::at(&a.file, "expected a transformed system (run `ddf transform` first)"));
    };
    if chains.is_empty() {
        return Err(Failure::input("system has no chains"));
    }
    let bounds: Vec<(u64, u64)> = chains
        .iter()
        .map(|c| {
            let max = analyze_treated(&t, c, &ExecutionTimePolicy::AllWcet)?.value;
            let min = analyze_treated_min(&t, c, &ExecutionTimePolicy::AllBcet)?.value;
            Ok((min, max))
        })
        .collect::<Result<_, Error>>()?;
    let horizon = run_horizon(&t, &chains)?;
    let policy_of = |run: u64| {
        if a.force_wcet {
            ExecutionTimePolicy::AllWcet
        } else {
            ExecutionTimePolicy::Sampled { seed: derive_seed(a.seed, run) }
        }
    };

    let outcomes = (0..a.runs)
        .into_par_iter()
        .map(|run| -> Result<RunOutcome, Error> {
            let (trace, log) = online_run(&t, &policy_of(run), horizon)?;
            let mut problems = Vec::new();
            if let Some(v) = log.rfi_violations().next() {
                problems.push(format!("run {run}: {} read {:?} instead of {:?}", v.reader, v.read, v.intended));
            }
            if !verify_ddf(&log, t.ddf()) {
                problems.push(format!("run {run}: communication differs from the data flow"));
            }
            for (&w, &occ) in &log.max_occupancy {
                if occ > t.buffers().size(w) {
                    problems.push(format!("run {run}: task {w} held {occ} items, buffer has {}", t.buffers().size(w)));
                }
            }
            let mut per_chain = Vec::new();
            for (i, c) in chains.iter().enumerate() {
                let s = empirical_reaction_times(&trace, c, t.ddf())?;
                let (lo, hi) = (*s.times.iter().min().unwrap(), *s.times.iter().max().unwrap());
                if lo < bounds[i].0 || hi > bounds[i].1 {
                    problems.push(format!("run {run}: chain {i} reaction outside [{}, {}]", bounds[i].0, bounds[i].1));
                }
                per_chain.push((s.art, lo, hi));
            }
            Ok(RunOutcome { per_chain, occupancy: log.max_occupancy, problems })
        })
        .collect::<Result<Vec<_>, Error>>()?;

    if let Some(path) = &a.comm_log {
        let (_, log) = online_run(&t, &policy_of(0), horizon)?;
        let mut buf = Vec::new();
        log.write_csv(&mut buf)?;
        write_atomic(path, &buf)?;
    }

    let mut runs = Vec::new();
    for (run, o) in outcomes.iter().enumerate() {
        for (chain, &(art, min, max)) in o.per_chain.iter().enumerate() {
            runs.push(RunRow { run: run as u64, chain, art, min, max });
        }
    }
    if let Some(path) = &a.out {
        write_atomic(path, &csv_bytes(&runs)?)?;
    }

    let summary: Vec<SimulationSummary> = chains
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let arts: Vec<f64> = outcomes.iter().map(|o| o.per_chain[i].0).collect();
            let lo = outcomes.iter().map(|o| o.per_chain[i].1).min().unwrap_or(0);
            let hi = outcomes.iter().map(|o| o.per_chain[i].2).max().unwrap_or(0);
            let (min, max) = bounds[i];
            SimulationSummary {
                chain: i,
                mrt: max,
                mrt_min: min,
                jitter: max - min,
                art: arts.iter().sum::<f64>() / arts.len().max(1) as f64,
                art_worst: outcomes.iter().map(|o| o.per_chain[i].2 as f64).sum::<f64>() / outcomes.len().max(1) as f64,
                observed_min: lo,
                observed_max: hi,
                runs: a.runs,
                in_range: min <= lo && hi <= max,
            }
        })
        .collect();
    emit(None, &csv_bytes(&summary)?)?;

    if let Some(path) = &a.occupancy {
        let mut max_occ: BTreeMap<usize, u64> = BTreeMap::new();
        for o in &outcomes {
            for (&w, &occ) in &o.occupancy {
                let e = max_occ.entry(w).or_insert(0);
                *e = (*e).max(occ);
            }
        }
        let report = OccupancyReport {
            memory: t.buffers().memory(),
            writer: t
                .buffers()
                .sizes
                .iter()
                .map(|(&task, &bs)| OccupancyRow { task, bs, max_occupancy: max_occ.get(&task).copied().unwrap_or(0) })
                .collect(),
        };
        write_atomic(path, &toml_bytes(&report)?)?;
    }

    let problems: Vec<&String> = outcomes.iter().flat_map(|o| &o.problems).collect();
    if let Some(first) = problems.first() {
        return Err(Failure::violation(format!("{} property violations; first: {first}", problems.len())));
    }
    Ok(())
}

fn window_label(w: OracleWindow) -> String {
    match w {
        OracleWindow::Leading(n) => format!("leading({n})"),
        OracleWindow::Steady => "steady".into(),
        OracleWindow::Explicit { start, end } => format!("[{start},{end})"),
    }
}

fn verdict_report(v: &TaVerdict, chain: &Chain, treated: bool, probe: &ProbeArgs) -> VerdictReport {
    VerdictReport {
        chain: chain.to_string(),
        treated,
        levels: v.levels,
        window: window_label(probe.window()),
        anomaly: v.present,
        cause: v.cause.map(|c| c.number()),
        wcet_mrt: v.wcet.value,
        oracle_mrt: v.oracle.value,
        runs: v.oracle.runs as u64,
        excluded: v.oracle.excluded.len(),
        witness: v
            .oracle
            .witness
            .iter()
            .map(|(j, &exec)| WitnessJob { job: j.to_string(), task: j.task, k: j.k, exec })
            .collect(),
        wcet_iac: (&v.wcet_iac).into(),
        oracle_iac: (&v.oracle.iac).into(),
    }
}

fn oracle(a: &OracleArgs, unit: Option<TickUnit>) -> CliResult {
    let (loaded, _) = load_treated(&a.file, unit, a.treated)?;
    let (v, chain, treated) = match &loaded {
        Loaded::Plain(sys) => {
            let chain = select_chains(&sys.chains, &[a.chain])?[0].1;
            (detect_ta(&sys.tasks, chain, a.probe.levels, a.probe.window(), a.probe.budget)?, chain, false)
        }
        Loaded::Treated(t, chains) => {
            let chain = select_chains(chains, &[a.chain])?[0].1;
            (detect_ta_treated(t, chain, a.probe.levels, a.probe.window(), a.probe.budget)?, chain, true)
        }
    };
    if !v.oracle.excluded.is_empty() {
        eprintln!("warning: {} assignments excluded for deadline misses", v.oracle.excluded.len());
    }
    emit(None, &toml_bytes(&verdict_report(&v, chain, treated, &a.probe))?)?;
    if treated && v.present {
        return Err(Failure::violation(format!("treated chain exceeds its all-WCET MRT: {} > {}", v.oracle.value, v.wcet.value)));
    }
    Ok(())
}

fn trace(a: &TraceArgs, unit: Option<TickUnit>) -> CliResult {
    let (loaded, _) = load(&a.file, unit)?;
    let policy = match a.policy {
        PolicyArg::Wcet => ExecutionTimePolicy::AllWcet,
        PolicyArg::Bcet => ExecutionTimePolicy::AllBcet,
        PolicyArg::Sampled => ExecutionTimePolicy::Sampled { seed: a.seed },
    };
    let trace = match &loaded {
        Loaded::Plain(sys) => {
            simulate(&sys.tasks, &policy, a.window_hyperperiods * sys.tasks.hyperperiod() + sys.tasks.max_phase())?
        }
        Loaded::Treated(t, _) => simulate(t, &policy, a.window_hyperperiods * t.original().hyperperiod() + t.max_phase())?,
    };
    let mut buf = Vec::new();
    write_trace_csv(&trace, &mut buf)?;
    emit(a.out.as_deref(), &buf)
}
