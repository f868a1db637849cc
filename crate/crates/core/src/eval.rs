//! Metrics against the reference solver, seeded multi-run experiments and
//! result files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{initial_action, DesignConfig, InitActionMode, OpfEnv, Provenance};
use crate::error::{Error, Result};
use crate::opf::{reference_optimum, OracleSettings, OracleSolution};
use crate::par::{self, item_seed, Execution};
use crate::rl::{ddpg_train, CheckpointMetrics, DdpgConfig, Policy, TrainLog};
use crate::scenarios::{Dataset, Scenario};

/// J* at or below this cannot serve as a relative-error denominator.
pub const ORACLE_EPSILON: f64 = 1e-9;
pub const DEFAULT_EVAL_SAMPLES: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub objective: f64,
    pub oracle_objective: f64,
    pub valid: bool,
}

/// Mean absolute percentage error over valid samples; `None` when no
/// sample is valid.
pub fn compute_mape(samples: &[MetricSample]) -> Result<Option<f64>> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in samples.iter().filter(|s| s.valid) {
        if s.oracle_objective <= ORACLE_EPSILON {
            return Err(Error::DegenerateOracle(s.oracle_objective));
        }
        sum += (s.objective - s.oracle_objective).abs() / s.oracle_objective;
        n += 1;
    }
    Ok((n > 0).then(|| 100.0 * sum / n as f64))
}

pub fn compute_invalid_share(n_valid: usize, n: usize) -> f64 {
    assert!(n >= 1 && n_valid <= n, "need 0 <= n_valid <= n and n >= 1");
    (1.0 - n_valid as f64 / n as f64) * 100.0
}

/// `n` test rows spread evenly over the test split (all of them if fewer).
pub fn select_test_rows(dataset: &Dataset, n: usize) -> Vec<usize> {
    let rows = dataset.test_rows();
    let len = rows.len();
    if n == 0 || len == 0 {
        return Vec::new();
    }
    if n >= len {
        return rows.collect();
    }
    (0..n).map(|i| rows.start + i * len / n).collect()
}

pub fn test_set_hash(rows: &[usize]) -> String {
    let mut h = Sha256::new();
    for r in rows {
        h.update((*r as u64).to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Reference solutions keyed by scenario content and state id, optionally
/// persisted as one JSON document per scenario.
#[derive(Debug)]
pub struct OracleCache {
    dir: Option<PathBuf>,
    settings: OracleSettings,
    entries: Mutex<BTreeMap<String, BTreeMap<usize, OracleSolution>>>,
}

impl OracleCache {
    pub fn in_memory(settings: OracleSettings) -> Self {
        Self {
            dir: None,
            settings,
            entries: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn on_disk(dir: impl Into<PathBuf>, settings: OracleSettings) -> Self {
        Self {
            dir: Some(dir.into()),
            ..Self::in_memory(settings)
        }
    }

    pub fn settings(&self) -> &OracleSettings {
        &self.settings
    }

    /// Grid, dataset and solver settings all change the stored answers.
    fn key(&self, scenario: &Scenario) -> String {
        let settings = serde_json::to_string(&self.settings).expect("settings serialize");
        let digest = Sha256::digest(format!("{}|{}|{settings}", scenario.spec.grid.content_hash(), scenario.data_hash));
        let hash: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
        format!("{}__{hash}", scenario.kind().name())
    }

    fn file(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.oracle.json")))
    }

    fn load_key(&self, key: &str) -> Result<()> {
        let mut entries = self.entries.lock().expect("oracle cache lock");
        if entries.contains_key(key) {
            return Ok(());
        }
        let mut map = BTreeMap::new();
        if let Some(path) = self.file(key) {
            if path.exists() {
                let text = std::fs::read_to_string(&path)?;
                map = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
            }
        }
        entries.insert(key.to_owned(), map);
        Ok(())
    }

    pub fn get(&self, scenario: &Scenario, row: usize) -> Result<Option<OracleSolution>> {
        let key = self.key(scenario);
        self.load_key(&key)?;
        let entries = self.entries.lock().expect("oracle cache lock");
        Ok(entries[&key].get(&row).cloned())
    }

    pub fn require(&self, scenario: &Scenario, row: usize) -> Result<OracleSolution> {
        self.get(scenario, row)?
            .ok_or_else(|| Error::OracleMissing(format!("{}#{row}", self.key(scenario))))
    }

    /// Solves every row not yet cached and returns the number solved.
    pub fn ensure(&self, scenario: &Scenario, rows: &[usize], execution: Execution) -> Result<usize> {
        let key = self.key(scenario);
        self.load_key(&key)?;
        let missing: Vec<usize> = {
            let entries = self.entries.lock().expect("oracle cache lock");
            rows.iter().copied().filter(|r| !entries[&key].contains_key(r)).collect()
        };
        if missing.is_empty() {
            return Ok(0);
        }
        let solutions = par::try_map(execution, &missing, |&row| {
            let grid = scenario.apply_state(&scenario.state_from_row(row))?;
            // the batch is already parallel; keep each solve sequential
            reference_optimum(&scenario.problem, &grid, &self.settings, Execution::Sequential)
        })?;
        let mut entries = self.entries.lock().expect("oracle cache lock");
        let map = entries.get_mut(&key).expect("key loaded");
        for (row, sol) in missing.iter().zip(solutions) {
            map.insert(*row, sol);
        }
        if let Some(path) = self.file(&key) {
            write_atomic(&path, &serde_json::to_string(map).map_err(|e| Error::Parse(e.to_string()))?)?;
        }
        Ok(missing.len())
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Anything that maps observations to actions during evaluation.
pub trait Controller {
    fn act(&mut self, observation: &[f64], env: &OpfEnv) -> Result<Vec<f64>>;
}

impl Controller for Policy {
    fn act(&mut self, observation: &[f64], _env: &OpfEnv) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Policy::act(self, observation, 0.0, &mut rng)
    }
}

pub struct RandomController {
    rng: ChaCha8Rng,
}

impl RandomController {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Controller for RandomController {
    fn act(&mut self, _observation: &[f64], env: &OpfEnv) -> Result<Vec<f64>> {
        Ok(initial_action(&env.action_box(), InitActionMode::Random, &mut self.rng))
    }
}

/// Plays the cached reference solution of the current state.
pub struct OracleController<'a> {
    pub cache: &'a OracleCache,
}

impl Controller for OracleController<'_> {
    fn act(&mut self, _observation: &[f64], env: &OpfEnv) -> Result<Vec<f64>> {
        let episode = env
            .episode()
            .ok_or_else(|| Error::Config("oracle controller needs an active episode".into()))?;
        match episode.state.provenance {
            Provenance::Row(row) => Ok(self.cache.require(env.scenario(), row)?.action),
            Provenance::Sampled(_) => Err(Error::OracleMissing("sampled state".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub state_id: usize,
    pub objective: f64,
    pub oracle_objective: f64,
    pub oracle_valid: bool,
    pub valid: bool,
    pub total_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_samples: usize,
    pub n_valid: usize,
    /// `None` when no sample is valid.
    pub mape_percent: Option<f64>,
    pub invalid_share_percent: f64,
    pub test_set_hash: String,
    pub samples: Vec<SampleRecord>,
}

impl EvaluationReport {
    pub fn metrics(&self) -> CheckpointMetrics {
        CheckpointMetrics {
            mape_percent: self.mape_percent,
            invalid_share_percent: self.invalid_share_percent,
        }
    }
}

/// Seed for the evaluation environment; fixed so that random initial
/// actions are the same for every policy.
pub const EVAL_ENV_SEED: u64 = 0xe7a1;

/// Runs `controller` noise-free on each test row and scores the final
/// state of the episode against the cached optimum. States where the
/// reference solver found no valid point still count towards the invalid
/// share but are left out of the MAPE.
pub fn evaluate_policy(
    controller: &mut dyn Controller,
    env: &mut OpfEnv,
    rows: &[usize],
    cache: &OracleCache,
) -> Result<EvaluationReport> {
    if rows.is_empty() {
        return Err(Error::Config("evaluation needs at least one test state".into()));
    }
    let scenario = Arc::clone(env.scenario());
    if let Some(&r) = rows.iter().find(|&&r| r < scenario.dataset.split_index) {
        return Err(Error::Config(format!("row {r} is not in the test split")));
    }
    env.reseed(EVAL_ENV_SEED);
    let mut samples = Vec::with_capacity(rows.len());
    for &row in rows {
        let oracle = cache.require(&scenario, row)?;
        let mut obs = env.reset_to(scenario.state_from_row(row))?;
        let last = loop {
            let action = controller.act(&obs, env)?;
            let out = env.step(&action)?;
            if out.terminal {
                break out;
            }
            obs = out.observation;
        };
        samples.push(SampleRecord {
            state_id: row,
            objective: last.info.objective,
            oracle_objective: oracle.objective,
            oracle_valid: oracle.valid,
            valid: last.info.valid,
            total_violation: last.info.report.total_violation,
        });
    }
    let metric: Vec<MetricSample> = samples
        .iter()
        .map(|s| MetricSample {
            objective: s.objective,
            oracle_objective: s.oracle_objective,
            valid: s.valid && s.oracle_valid,
        })
        .collect();
    let n_valid = samples.iter().filter(|s| s.valid).count();
    Ok(EvaluationReport {
        n_samples: samples.len(),
        n_valid,
        mape_percent: compute_mape(&metric)?,
        invalid_share_percent: compute_invalid_share(n_valid, samples.len()),
        test_set_hash: test_set_hash(rows),
        samples,
    })
}

/// One named point of the design grid. `gamma` overrides the learner's
/// discount (n-step variants).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub id: String,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl Variant {
    pub fn new(id: &str, design: DesignConfig) -> Self {
        Self {
            id: id.into(),
            design,
            gamma: None,
        }
    }
}

/// The studied design variants, grouped per axis; each group starts with
/// its own reference point.
pub fn design_variants(default_penalty: f64) -> Vec<Variant> {
    use crate::env::{DataSource, ObsMode, OffsetMode, RewardMode};
    use crate::opf::PenaltyFactors;
    let base = DesignConfig::default();
    let redundant = |init| DesignConfig {
        obs_mode: ObsMode::Redundant,
        init_action_mode: init,
        ..DesignConfig::default()
    };
    let n_step = |gamma: f64, id: &str| Variant {
        id: id.into(),
        design: DesignConfig::n_step(5),
        gamma: Some(gamma),
    };
    let replacement = |mode| DesignConfig {
        reward_mode: RewardMode::Replacement,
        offset_mode: mode,
        ..DesignConfig::default()
    };
    vec![
        Variant::new("time_series", base.clone()),
        Variant::new("uniform", DesignConfig { data_source: DataSource::Uniform, ..base.clone() }),
        Variant::new("normal", DesignConfig { data_source: DataSource::Normal, ..base.clone() }),
        Variant::new("markov", base.clone()),
        Variant::new("redundant_fixed", redundant(InitActionMode::Fixed)),
        Variant::new("redundant_random", redundant(InitActionMode::Random)),
        Variant::new("one_step", redundant(InitActionMode::Random)),
        n_step(0.5, "n_step_g05"),
        n_step(0.9, "n_step_g09"),
        Variant::new("summation", base.clone()),
        Variant::new(
            "summation_10x",
            DesignConfig {
                penalty_factors: Some(PenaltyFactors::uniform(10.0 * default_penalty)),
                ..base
            },
        ),
        Variant::new("replacement_min", replacement(OffsetMode::Min)),
        Variant::new("replacement_mean", replacement(OffsetMode::Mean)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub steps: usize,
    /// Number of test states; spread evenly over the test split.
    pub eval_samples: usize,
    pub ddpg: DdpgConfig,
    /// Zero wall-clock fields so repeated runs write identical files.
    pub deterministic: bool,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Config("plan needs at least one variant".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() || seeds.is_empty() {
            return Err(Error::Config("plan seeds must be distinct and non-empty".into()));
        }
        let mut ids: Vec<&str> = self.variants.iter().map(|v| v.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.variants.len() {
            return Err(Error::Config("variant ids must be unique".into()));
        }
        for v in &self.variants {
            v.design.validate()?;
            if v.id.is_empty() || v.id.contains(['/', '\\', ',']) {
                return Err(Error::Config(format!("bad variant id {:?}", v.id)));
            }
        }
        self.ddpg.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: String,
    pub seed: u64,
    pub report: Option<EvaluationReport>,
    pub log: TrainLog,
    pub wall_clock_s: f64,
    pub steps: usize,
    pub diverged: bool,
}

pub fn result_file_name(variant: &str, seed: u64) -> String {
    format!("{variant}__seed{seed}.result")
}

/// Environment used for evaluation: same design but with the offset k
/// already fixed, so it does not recalibrate.
pub fn evaluation_env(train_env: &OpfEnv) -> Result<OpfEnv> {
    let mut design = train_env.config().clone();
    design.offset_k = Some(train_env.offset_k());
    OpfEnv::new(Arc::clone(train_env.scenario()), design, EVAL_ENV_SEED)
}

/// Trains one (variant, seed) pair and evaluates the final policy.
pub fn run_single(
    scenario: &Arc<Scenario>,
    variant: &Variant,
    seed: u64,
    plan: &ExperimentPlan,
    rows: &[usize],
    cache: &OracleCache,
) -> Result<(RunResult, Policy)> {
    let mut env = OpfEnv::new(Arc::clone(scenario), variant.design.clone(), item_seed(seed, 1))?;
    let mut eval_env = evaluation_env(&env)?;
    let mut config = plan.ddpg.clone();
    config.total_steps = plan.steps;
    config.seed = item_seed(seed, 2);
    config.gamma = match variant.design.episode_mode {
        crate::env::EpisodeMode::OneStep => 0.0,
        crate::env::EpisodeMode::NStep => variant.gamma.unwrap_or(config.gamma),
    };
    let mut final_report = None;
    let outcome = ddpg_train(&mut env, &config, |step, policy| {
        let mut p = policy.clone();
        let report = evaluate_policy(&mut p, &mut eval_env, rows, cache)?;
        let metrics = report.metrics();
        if step == config.total_steps {
            final_report = Some(report);
        }
        Ok(metrics)
    })?;
    let diverged = outcome.diverged();
    let mut log = outcome.log;
    if plan.deterministic {
        log.wall_clock_s = 0.0;
    }
    Ok((
        RunResult {
            variant: variant.id.clone(),
            seed,
            report: final_report,
            wall_clock_s: log.wall_clock_s,
            steps: log.steps,
            diverged,
            log,
        },
        outcome.policy,
    ))
}

/// Runs every (variant, seed) pair on the shared test rows. With an output
/// directory, finished runs are written immediately and runs whose result
/// file already exists are loaded instead of retrained.
pub fn run_experiment(
    scenario: &Arc<Scenario>,
    plan: &ExperimentPlan,
    cache: &OracleCache,
    out_dir: Option<&Path>,
    execution: Execution,
) -> Result<Vec<RunResult>> {
    plan.validate()?;
    let rows = select_test_rows(&scenario.dataset, plan.eval_samples);
    cache.ensure(scenario, &rows, execution)?;
    let jobs: Vec<(usize, u64)> = (0..plan.variants.len())
        .flat_map(|v| plan.seeds.iter().map(move |&s| (v, s)))
        .collect();
    par::try_map(execution, &jobs, |&(v, seed)| {
        let variant = &plan.variants[v];
        if let Some(dir) = out_dir {
            let path = dir.join(result_file_name(&variant.id, seed));
            if path.exists() {
                let text = std::fs::read_to_string(&path)?;
                return serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()));
            }
        }
        let (result, _) = run_single(scenario, variant, seed, plan, &rows, cache)?;
        if let Some(dir) = out_dir {
            write_atomic(&dir.join(result_file_name(&variant.id, seed)), &result_json(&result)?)?;
        }
        Ok(result)
    })
}

fn result_json(result: &RunResult) -> Result<String> {
    serde_json::to_string_pretty(result)
        .map(|s| s + "\n")
        .map_err(|e| Error::Parse(e.to_string()))
}

pub const RESULTS_HEADER: &str = "variant,seed,mape_percent,invalid_share_percent,steps,wall_clock_s";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

/// Writes `results.csv` plus one detail document per run into `dir`.
pub fn export_results(results: &[RunResult], dir: impl AsRef<Path>) -> Result<PathBuf> {
    if results.is_empty() {
        return Err(Error::Config("no results to export".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut table = String::from(RESULTS_HEADER);
    table.push('\n');
    for r in results {
        let (mape, invalid) = match &r.report {
            Some(rep) => (fmt_opt(rep.mape_percent), format!("{}", rep.invalid_share_percent)),
            None => (String::new(), String::new()),
        };
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.variant, r.seed, mape, invalid, r.steps, r.wall_clock_s
        ));
        write_atomic(&dir.join(result_file_name(&r.variant, r.seed)), &result_json(r)?)?;
    }
    let path = dir.join("results.csv");
    write_atomic(&path, &table)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub normalized_objective: f64,
    pub total_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterReport {
    pub points: Vec<ScatterPoint>,
    /// `None` when either series has zero variance.
    pub pearson_r: Option<f64>,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Objective (min-max normalized over the batch) against total violation
/// for random states under uniformly random actions. States come from the
/// environment's configured data source.
pub fn scatter_diagnostic(
    env: &OpfEnv,
    n_samples: usize,
    seed: u64,
    execution: Execution,
) -> Result<ScatterReport> {
    let bounds = env.action_box();
    let scenario = env.scenario();
    let idx: Vec<u64> = (0..n_samples as u64).collect();
    let raw = par::try_map(execution, &idx, |&i| {
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, i));
        let state = env.sample_state(&mut rng)?;
        let grid = scenario.apply_state(&state)?;
        let action: Vec<f64> = bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect();
        let eval = env.problem().evaluate_action(&grid, &action)?;
        Ok::<_, Error>((eval.objective, eval.report.total_violation))
    })?;
    let lo = raw.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let hi = raw.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let points: Vec<ScatterPoint> = raw
        .iter()
        .map(|&(j, v)| ScatterPoint {
            normalized_objective: if hi > lo { (j - lo) / (hi - lo) } else { 0.0 },
            total_violation: v,
        })
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| p.normalized_objective).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.total_violation).collect();
    Ok(ScatterReport {
        pearson_r: pearson(&xs, &ys),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(j: f64, js: f64, valid: bool) -> MetricSample {
        MetricSample {
            objective: j,
            oracle_objective: js,
            valid,
        }
    }

    #[test]
    fn mape_examples() {
        assert_eq!(compute_mape(&[s(5.0, 5.0, true), s(2.0, 2.0, true)]).unwrap(), Some(0.0));
        let m = compute_mape(&[s(110.0, 100.0, true)]).unwrap().unwrap();
        assert!((m - 10.0).abs() < 1e-12);
        let m = compute_mape(&[s(110.0, 100.0, true), s(999.0, 100.0, false)]).unwrap().unwrap();
        assert!((m - 10.0).abs() < 1e-12);
        assert_eq!(compute_mape(&[s(1.0, 1.0, false)]).unwrap(), None);
        assert!(matches!(compute_mape(&[s(1.0, 0.0, true)]), Err(Error::DegenerateOracle(_))));
    }

    #[test]
    fn invalid_share_examples() {
        assert_eq!(compute_invalid_share(10, 10), 0.0);
        assert!((compute_invalid_share(80, 100) - 20.0).abs() < 1e-12);
        assert_eq!(compute_invalid_share(0, 7), 100.0);
    }

    #[test]
    fn pearson_zero_variance() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
        let r = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn thirteen_variants() {
        let v = design_variants(500.0);
        assert_eq!(v.len(), 13);
        for x in &v {
            x.design.validate().unwrap();
        }
    }

    #[test]
    fn test_rows_spread_over_split() {
        let ds = crate::scenarios::split_dataset(
            Dataset::new(
                vec![crate::scenarios::Column::new("a:b")],
                (0..100).map(|i| vec![i as f64]).collect(),
            ),
            0.2,
        )
        .unwrap();
        assert_eq!(select_test_rows(&ds, 4), vec![80, 85, 90, 95]);
        assert_eq!(select_test_rows(&ds, 500).len(), 20);
    }
}
