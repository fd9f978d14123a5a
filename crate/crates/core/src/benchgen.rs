//! Synthetic automotive-style task sets and cause-effect chains.
//!
//! Periods follow weighted shares, average execution times are Weibull
//! distributed per period group, and WCETs are the average scaled by a
//! uniform factor. Priorities are rate monotonic.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Weibull;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::model::{Chain, System, TaskId, TaskSet, TaskSpec};
use crate::sim::{check_schedulability, schedulability_horizon, simulate, ExecutionTimePolicy};
use crate::time::{Duration, TickUnit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseMode {
    Zero,
    /// Uniform in `[0, T)`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    pub tick_unit: TickUnit,
    /// Periods in ticks.
    pub periods: Vec<Duration>,
    pub period_shares: Vec<f64>,
    /// Mean average execution time of each period group, as a fraction of
    /// the period.
    pub mean_exec_fraction: Vec<f64>,
    pub weibull_shape: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub alpha: f64,
    pub utilizations: Vec<f64>,
    pub sets_per_utilization: usize,
    pub candidates: (usize, usize),
    /// Upper bound on tasks per selected set; 0 means unbounded.
    pub max_tasks: usize,
    pub phases: PhaseMode,
    /// Weights of 1, 2 and 3 activation periods per chain.
    pub activation_shares: Vec<f64>,
    /// Inclusive range of tasks drawn per chain period.
    pub tasks_per_period: (usize, usize),
    pub tasks_per_period_shares: Vec<f64>,
    pub chains_per_set: (usize, usize),
    pub selection_retries: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seed: 1,
            tick_unit: TickUnit::MICROSECOND,
            periods: [1, 2, 5, 10, 20, 50, 100, 200, 1000].iter().map(|ms| ms * 1000).collect(),
            period_shares: vec![0.03, 0.02, 0.02, 0.25, 0.25, 0.03, 0.2, 0.01, 0.04]
                .into_iter()
                .map(|s| s / 0.85)
                .collect(),
            mean_exec_fraction: vec![0.02; 9],
            weibull_shape: 3.0,
            f_min: 1.3,
            f_max: 2.5,
            alpha: 0.5,
            utilizations: vec![0.6, 0.7, 0.8, 0.9],
            sets_per_utilization: 10,
            candidates: (1000, 1500),
            max_tasks: 0,
            phases: PhaseMode::Zero,
            activation_shares: vec![1.0 / 3.0; 3],
            tasks_per_period: (2, 5),
            tasks_per_period_shares: vec![0.25; 4],
            chains_per_set: (30, 60),
            selection_retries: 200,
        }
    }
}

fn check_shares(name: &str, shares: &[f64], len: usize) -> Result<()> {
    let bad = |reason: String| Err(Error::Generation(format!("{name}: {reason}")));
    if shares.len() != len {
        return bad(format!("expected {len} entries, got {}", shares.len()));
    }
    if shares.iter().any(|&s| !(s >= 0.0)) {
        return bad("entries must be non-negative".into());
    }
    let sum: f64 = shares.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return bad(format!("entries sum to {sum}, expected 1"));
    }
    Ok(())
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::Generation(reason.to_string()));
        if self.periods.is_empty() || self.periods.contains(&0) {
            return bad("periods: must be non-empty and positive");
        }
        check_shares("period_shares", &self.period_shares, self.periods.len())?;
        if self.mean_exec_fraction.len() != self.periods.len() || self.mean_exec_fraction.iter().any(|&m| !(m > 0.0 && m <= 1.0)) {
            return bad("mean_exec_fraction: one value in (0, 1] per period");
        }
        if !(self.weibull_shape > 0.0) {
            return bad("weibull_shape: must be positive");
        }
        if !(self.f_min > 0.0 && self.f_min <= self.f_max) {
            return bad("f_min/f_max: need 0 < f_min <= f_max");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha: need 0 < alpha <= 1");
        }
        if self.utilizations.iter().any(|&u| !(u > 0.0 && u <= 1.0)) {
            return bad("utilizations: each in (0, 1]");
        }
        if self.candidates.0 == 0 || self.candidates.0 > self.candidates.1 {
            return bad("candidates: need 0 < min <= max");
        }
        check_shares("activation_shares", &self.activation_shares, 3)?;
        let (lo, hi) = self.tasks_per_period;
        if lo == 0 || lo > hi {
            return bad("tasks_per_period: need 0 < min <= max");
        }
        check_shares("tasks_per_period_shares", &self.tasks_per_period_shares, hi - lo + 1)?;
        if self.chains_per_set.0 > self.chains_per_set.1 {
            return bad("chains_per_set: need min <= max");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: BenchConfig = toml::from_str(text).map_err(|e| Error::Generation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-system RNG derived from the configured seed.
pub fn system_rng(cfg: &BenchConfig, util: f64, index: usize) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&cfg.seed.to_le_bytes());
    seed[8..16].copy_from_slice(&util.to_bits().to_le_bytes());
    seed[16..24].copy_from_slice(&(index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// Draws `n` candidate tasks. Ids follow generation order; priorities are
/// rate monotonic with ties broken by id.
pub fn gen_candidates<R: Rng>(cfg: &BenchConfig, n: usize, rng: &mut R) -> Result<Vec<TaskSpec>> {
    cfg.validate()?;
    let pick = WeightedIndex::new(&cfg.period_shares).map_err(|e| Error::Generation(e.to_string()))?;
    let scale_of_mean = 1.0 / gamma(1.0 + 1.0 / cfg.weibull_shape);
    let mut tasks = Vec::with_capacity(n);
    for id in 0..n {
        let g = pick.sample(rng);
        let period = cfg.periods[g];
        let mean = cfg.mean_exec_fraction[g] * period as f64;
        let weibull = Weibull::new(mean * scale_of_mean, cfg.weibull_shape).map_err(|e| Error::Generation(e.to_string()))?;
        let mut wcet = 0;
        for _ in 0..1000 {
            let avg: f64 = weibull.sample(rng);
            let f = rng.random_range(cfg.f_min..=cfg.f_max);
            wcet = ((avg * f).round() as Duration).min(period);
            if wcet > 0 {
                break;
            }
        }
        if wcet == 0 {
            return Err(Error::Generation(format!("period {period}: execution times round to zero ticks")));
        }
        let bcet = ((cfg.alpha * wcet as f64).round() as Duration).clamp(1, wcet);
        let phase = match cfg.phases {
            PhaseMode::Zero => 0,
            PhaseMode::Uniform => rng.random_range(0..period),
        };
        tasks.push(TaskSpec::new(id, period, phase, bcet, wcet));
    }
    assign_rate_monotonic(&mut tasks);
    Ok(tasks)
}

/// Shorter period gets the higher priority; ties go to the lower id.
pub fn assign_rate_monotonic(tasks: &mut [TaskSpec]) {
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.sort_by_key(|&i| (tasks[i].period, tasks[i].id));
    let n = tasks.len() as i64;
    for (rank, &i) in order.iter().enumerate() {
        tasks[i].priority = n - rank as i64;
    }
}

/// Picks a subset whose total utilization is within 0.01 of `target`.
///
/// Randomized greedy fill followed by improving swaps; restarts with a new
/// shuffle up to `retries` times. `max_tasks = 0` means no size limit.
pub fn select_utilization<R: Rng>(
    candidates: &[TaskSpec],
    target: f64,
    max_tasks: usize,
    retries: usize,
    rng: &mut R,
) -> Result<TaskSet> {
    const TOL: f64 = 0.01;
    if candidates.is_empty() {
        return Err(Error::Generation("no candidates to select from".into()));
    }
    let limit = if max_tasks == 0 { usize::MAX } else { max_tasks };
    let utils: Vec<f64> = candidates.iter().map(TaskSpec::utilization).collect();
    let mut best_gap = f64::INFINITY;
    for _ in 0..retries.max(1) {
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.shuffle(rng);
        let mut chosen = Vec::new();
        let mut rest = Vec::new();
        let mut sum = 0.0;
        for i in order {
            if chosen.len() < limit && sum + utils[i] <= target + TOL {
                sum += utils[i];
                chosen.push(i);
            } else {
                rest.push(i);
            }
        }
        for _ in 0..4 * candidates.len() {
            if (sum - target).abs() <= TOL || chosen.is_empty() || rest.is_empty() {
                break;
            }
            let a = rng.random_range(0..chosen.len());
            let b = rng.random_range(0..rest.len());
            let swapped = sum - utils[chosen[a]] + utils[rest[b]];
            if (swapped - target).abs() < (sum - target).abs() {
                sum = swapped;
                std::mem::swap(&mut chosen[a], &mut rest[b]);
            }
        }
        best_gap = best_gap.min((sum - target).abs());
        if (sum - target).abs() <= TOL {
            chosen.sort_unstable();
            let mut tasks: Vec<TaskSpec> = chosen
                .iter()
                .enumerate()
                .map(|(new_id, &i)| TaskSpec { id: new_id, ..candidates[i] })
                .collect();
            assign_rate_monotonic(&mut tasks);
            return TaskSet::new(tasks);
        }
    }
    Err(Error::Generation(format!(
        "no subset of {} candidates within 0.01 of U={target} after {retries} tries (closest gap {best_gap:.4})",
        candidates.len()
    )))
}

fn draw_range<R: Rng>(range: (usize, usize), rng: &mut R) -> usize {
    rng.random_range(range.0..=range.1)
}

/// Draws chains whose union graph is acyclic: tasks of every chain are
/// ordered along one random permutation of all tasks.
pub fn gen_chains<R: Rng>(set: &TaskSet, cfg: &BenchConfig, rng: &mut R) -> Result<Vec<Chain>> {
    let mut groups: BTreeMap<Duration, Vec<TaskId>> = BTreeMap::new();
    for t in set.tasks() {
        groups.entry(t.period).or_default().push(t.id);
    }
    let mut rank: Vec<usize> = (0..set.len()).collect();
    rank.shuffle(rng);
    let activation = WeightedIndex::new(&cfg.activation_shares).map_err(|e| Error::Generation(e.to_string()))?;
    let per_period = WeightedIndex::new(&cfg.tasks_per_period_shares).map_err(|e| Error::Generation(e.to_string()))?;
    let (lo, _) = cfg.tasks_per_period;
    let count = draw_range(cfg.chains_per_set, rng);
    let mut chains = Vec::with_capacity(count);
    let mut attempts = 0;
    while chains.len() < count {
        attempts += 1;
        if attempts > 100 * (count + 1) {
            return Err(Error::Generation(format!("could not draw {count} chains from {} period groups", groups.len())));
        }
        let p = activation.sample(rng) + 1;
        let eligible: Vec<Duration> = groups.iter().filter(|(_, ts)| ts.len() >= lo).map(|(&t, _)| t).collect();
        if eligible.len() < p {
            continue;
        }
        let periods: Vec<Duration> = eligible.choose_multiple(rng, p).copied().collect();
        let mut tasks = Vec::new();
        let mut short = false;
        for period in periods {
            let group = &groups[&period];
            let want = per_period.sample(rng) + lo;
            if want > group.len() {
                short = true;
                break;
            }
            tasks.extend(group.choose_multiple(rng, want).copied());
        }
        if short {
            continue;
        }
        tasks.sort_by_key(|&t| rank[t]);
        chains.push(Chain::new(tasks)?);
    }
    Ok(chains)
}

/// One generated benchmark system.
#[derive(Debug, Clone)]
pub struct GeneratedSystem {
    pub utilization: f64,
    pub index: usize,
    pub system: System,
    pub schedulable: bool,
}

/// Generates system `index` for target utilization `util`.
pub fn generate_system(cfg: &BenchConfig, util: f64, index: usize) -> Result<GeneratedSystem> {
    cfg.validate()?;
    let mut rng = system_rng(cfg, util, index);
    let n = draw_range(cfg.candidates, &mut rng);
    let candidates = gen_candidates(cfg, n, &mut rng)?;
    let set = select_utilization(&candidates, util, cfg.max_tasks, cfg.selection_retries, &mut rng)?;
    let chains = gen_chains(&set, cfg, &mut rng)?;
    let system = System::new(set, chains)?;
    let horizon = schedulability_horizon(&system.tasks);
    let trace = simulate(&system.tasks, &ExecutionTimePolicy::AllWcet, horizon)?;
    let schedulable = check_schedulability(&trace).is_schedulable();
    Ok(GeneratedSystem { utilization: util, index, system, schedulable })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CeGraph;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn default_config_is_valid() {
        BenchConfig::default().validate().unwrap();
    }

    #[test]
    fn candidates_respect_bounds() {
        let cfg = BenchConfig::default();
        let tasks = gen_candidates(&cfg, 1000, &mut rng(3)).unwrap();
        assert_eq!(tasks.len(), 1000);
        for t in &tasks {
            assert!(1 <= t.bcet && t.bcet <= t.wcet && t.wcet <= t.period, "{t:?}");
        }
        // rate monotonic
        for a in &tasks {
            for b in tasks.iter().take(50) {
                if a.period < b.period {
                    assert!(a.priority > b.priority);
                }
            }
        }
    }

    #[test]
    fn alpha_one_gives_fixed_times() {
        let cfg = BenchConfig { alpha: 1.0, ..BenchConfig::default() };
        assert!(gen_candidates(&cfg, 200, &mut rng(4)).unwrap().iter().all(|t| t.bcet == t.wcet));
    }

    #[test]
    fn same_seed_same_candidates() {
        let cfg = BenchConfig::default();
        assert_eq!(gen_candidates(&cfg, 300, &mut rng(5)).unwrap(), gen_candidates(&cfg, 300, &mut rng(5)).unwrap());
    }

    fn util_task(id: usize, u: f64) -> TaskSpec {
        let w = (u * 1000.0).round() as u64;
        TaskSpec::new(id, 1000, 0, w, w)
    }

    #[test]
    fn exact_subset() {
        let c = vec![util_task(0, 0.3), util_task(1, 0.3), util_task(2, 0.1)];
        let set = select_utilization(&c, 0.7, 0, 50, &mut rng(1)).unwrap();
        assert!((set.utilization() - 0.7).abs() < 1e-9);
    }

    #[test]
    fn empty_candidates_fail() {
        assert!(select_utilization(&[], 0.5, 0, 10, &mut rng(1)).is_err());
    }

    #[test]
    fn high_utilization_over_seeds() {
        let cfg = BenchConfig::default();
        for seed in 0..100 {
            let mut r = rng(seed);
            let c = gen_candidates(&cfg, 1000, &mut r).unwrap();
            let set = select_utilization(&c, 0.9, 0, cfg.selection_retries, &mut r).unwrap();
            assert!((set.utilization() - 0.9).abs() <= 0.01, "seed {seed}: {}", set.utilization());
        }
    }

    #[test]
    fn chains_are_acyclic_and_bounded() {
        let cfg = BenchConfig::default();
        let mut r = rng(9);
        let c = gen_candidates(&cfg, 1000, &mut r).unwrap();
        let set = select_utilization(&c, 0.8, 0, cfg.selection_retries, &mut r).unwrap();
        let chains = gen_chains(&set, &cfg, &mut r).unwrap();
        assert!((30..=60).contains(&chains.len()));
        assert!(chains.iter().all(|ch| (2..=15).contains(&ch.len())));
        let g = CeGraph::from_chains(&chains).unwrap();
        g.topological_order().unwrap();
    }

    #[test]
    fn activation_distribution_matches_weights() {
        let cfg = BenchConfig { activation_shares: vec![0.5, 0.3, 0.2], chains_per_set: (10_000, 10_000), ..BenchConfig::default() };
        // Enough well-populated groups that no draw is rejected.
        let tasks: Vec<TaskSpec> = (0..60).map(|i| TaskSpec::new(i, [10, 20, 50, 100][i % 4], 0, 1, 1)).collect();
        let mut tasks = tasks;
        assign_rate_monotonic(&mut tasks);
        let set = TaskSet::new(tasks).unwrap();
        let chains = gen_chains(&set, &cfg, &mut rng(11)).unwrap();
        let mut counts = [0usize; 3];
        for ch in &chains {
            let mut periods: Vec<_> = ch.tasks().iter().map(|&t| set.task(t).period).collect();
            periods.sort();
            periods.dedup();
            counts[periods.len() - 1] += 1;
        }
        for (c, w) in counts.iter().zip(&cfg.activation_shares) {
            let share = *c as f64 / chains.len() as f64;
            assert!((share - w).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn generated_system_is_deterministic() {
        let cfg = BenchConfig { candidates: (100, 120), chains_per_set: (3, 5), ..BenchConfig::default() };
        let a = generate_system(&cfg, 0.6, 0).unwrap();
        let b = generate_system(&cfg, 0.6, 0).unwrap();
        assert_eq!(a.system, b.system);
        assert!((a.system.tasks.utilization() - 0.6).abs() <= 0.01);
    }

    #[test]
    fn bad_config_reports_field() {
        let err = BenchConfig::from_toml("f_min = 3.0\nf_max = 2.0\n").unwrap_err();
        assert!(err.to_string().contains("f_min"));
        let err = BenchConfig::from_toml("nonsense = 1\n").unwrap_err();
        assert!(err.to_string().contains("nonsense"));
    }
}
