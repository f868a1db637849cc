//! Gym-style OPF environment. The four design axes (training data,
//! observation, episode, reward) are plain config switches on one
//! environment type.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridModel;
use crate::opf::{Evaluation, OpfProblem, PenaltyFactors, ViolationReport};
use crate::par::item_seed;
use crate::powerflow::PowerFlowResult;
use crate::scenarios::{Dataset, Scenario, ScenarioKind};

pub const CALIBRATION_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    TimeSeries,
    Uniform,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsMode {
    Markov,
    Redundant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitActionMode {
    Fixed,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeMode {
    OneStep,
    NStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Summation,
    Replacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetMode {
    /// k = worst sampled objective
    Min,
    /// k = mean sampled objective
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignConfig {
    pub data_source: DataSource,
    pub obs_mode: ObsMode,
    pub init_action_mode: InitActionMode,
    pub episode_mode: EpisodeMode,
    pub n_steps: usize,
    pub reward_mode: RewardMode,
    /// Scenario default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty_factors: Option<PenaltyFactors>,
    pub offset_mode: OffsetMode,
    /// Calibrated on construction when absent and the reward needs it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset_k: Option<f64>,
    pub normal_sigma_rel: f64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            data_source: DataSource::TimeSeries,
            obs_mode: ObsMode::Markov,
            init_action_mode: InitActionMode::Fixed,
            episode_mode: EpisodeMode::OneStep,
            n_steps: 1,
            reward_mode: RewardMode::Summation,
            penalty_factors: None,
            offset_mode: OffsetMode::Min,
            offset_k: None,
            normal_sigma_rel: 0.3,
        }
    }
}

impl DesignConfig {
    /// The n-step preset: redundant observations with random initial actions.
    pub fn n_step(n: usize) -> Self {
        Self {
            obs_mode: ObsMode::Redundant,
            init_action_mode: InitActionMode::Random,
            episode_mode: EpisodeMode::NStep,
            n_steps: n,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 1 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        match self.episode_mode {
            EpisodeMode::OneStep if self.n_steps != 1 => {
                return Err(Error::Config(format!(
                    "one_step episodes need n_steps = 1, got {}",
                    self.n_steps
                )))
            }
            EpisodeMode::NStep if self.obs_mode != ObsMode::Redundant => {
                return Err(Error::Config(
                    "n_step episodes need redundant observations".into(),
                ))
            }
            _ => {}
        }
        if self.init_action_mode == InitActionMode::Random && self.obs_mode == ObsMode::Markov {
            return Err(Error::Config(
                "random initial actions only apply to redundant observations".into(),
            ));
        }
        if let Some(p) = &self.penalty_factors {
            if !p.is_non_negative() {
                return Err(Error::Config("penalty factors must be non-negative".into()));
            }
        }
        if !(0.0..=10.0).contains(&self.normal_sigma_rel) {
            return Err(Error::Config(format!(
                "normal_sigma_rel {} out of range",
                self.normal_sigma_rel
            )));
        }
        if let Some(k) = self.offset_k {
            if !k.is_finite() {
                return Err(Error::Config("offset_k must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("design config serializes")
    }

    pub fn episode_length(&self) -> usize {
        match self.episode_mode {
            EpisodeMode::OneStep => 1,
            EpisodeMode::NStep => self.n_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Dataset row index.
    Row(usize),
    /// Seed of the sampler draw.
    Sampled(u64),
}

/// Exogenous part of a system state, in the scenario's state-column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogenousState {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

pub fn sample_time_series(
    dataset: &Dataset,
    columns: &[usize],
    rng: &mut impl Rng,
) -> Result<ExogenousState> {
    let rows = dataset.train_rows();
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let row = rng.random_range(rows);
    Ok(ExogenousState {
        values: columns.iter().map(|&c| dataset.rows[row][c]).collect(),
        provenance: Provenance::Row(row),
    })
}

fn check_range(i: usize, lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::SamplerRange {
            column: format!("#{i}"),
            min: lo,
            max: hi,
        });
    }
    Ok(())
}

pub fn sample_uniform(ranges: &[(f64, f64)], rng: &mut impl Rng) -> Result<Vec<f64>> {
    ranges
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| {
            check_range(i, lo, hi)?;
            Ok(if lo == hi { lo } else { rng.random_range(lo..=hi) })
        })
        .collect()
}

/// Normal around `means` with std `sigma_rel * (max - min)`, clipped to the range.
pub fn sample_normal(
    means: &[f64],
    ranges: &[(f64, f64)],
    sigma_rel: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    means
        .iter()
        .zip(ranges)
        .enumerate()
        .map(|(i, (&mu, &(lo, hi)))| {
            check_range(i, lo, hi)?;
            let sigma = sigma_rel * (hi - lo);
            if sigma == 0.0 {
                return Ok(mu.clamp(lo, hi));
            }
            let dist = Normal::new(mu, sigma).map_err(|e| Error::Config(e.to_string()))?;
            Ok(dist.sample(rng).clamp(lo, hi))
        })
        .collect()
}

pub fn initial_action(bounds: &[(f64, f64)], mode: InitActionMode, rng: &mut impl Rng) -> Vec<f64> {
    match mode {
        InitActionMode::Fixed => bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect(),
        InitActionMode::Random => bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect(),
    }
}

pub fn reward_summation(objective: f64, penalty: f64) -> f64 {
    -objective - penalty
}

pub fn reward_replacement(objective: f64, penalty: f64, valid: bool, k: f64) -> f64 {
    if valid {
        -objective + k
    } else {
        -penalty
    }
}

pub fn offset_from_objectives(objectives: &[f64], mode: OffsetMode) -> f64 {
    if objectives.is_empty() {
        return 0.0;
    }
    match mode {
        OffsetMode::Min => objectives.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        OffsetMode::Mean => objectives.iter().sum::<f64>() / objectives.len() as f64,
    }
}

/// Maps `value` from [lo, hi] onto [-1, 1] with clipping; 0 for a
/// degenerate range or a non-finite value.
pub fn scale_value(value: f64, lo: f64, hi: f64) -> f64 {
    if !(hi > lo) || !value.is_finite() {
        return 0.0;
    }
    (2.0 * (value - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Exogenous,
    Voltage,
    Loading,
    ExternalP,
    ExternalQ,
    Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub kind: SlotKind,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationLayout {
    pub slots: Vec<Slot>,
}

impl ObservationLayout {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn scale(&self, raw: &[f64]) -> Vec<f64> {
        self.slots
            .iter()
            .zip(raw)
            .map(|(s, &v)| scale_value(v, s.min, s.max))
            .collect()
    }
}

fn build_layout(scenario: &Scenario, config: &DesignConfig) -> ObservationLayout {
    let ranges = scenario.dataset.train_ranges();
    let mut slots: Vec<Slot> = scenario
        .state_names()
        .into_iter()
        .zip(&scenario.state_columns)
        .map(|(name, &c)| Slot {
            name,
            kind: SlotKind::Exogenous,
            min: ranges[c].0,
            max: ranges[c].1,
        })
        .collect();
    if config.obs_mode == ObsMode::Markov {
        return ObservationLayout { slots };
    }
    let grid = &scenario.spec.grid;
    for bus in &grid.buses {
        let margin = 0.5 * (bus.v_max_pu - bus.v_min_pu);
        slots.push(Slot {
            name: format!("bus{}:vm_pu", bus.id),
            kind: SlotKind::Voltage,
            min: bus.v_min_pu - margin,
            max: bus.v_max_pu + margin,
        });
    }
    for i in 0..grid.branches.len() {
        slots.push(Slot {
            name: format!("branch{i}:loading_percent"),
            kind: SlotKind::Loading,
            min: 0.0,
            max: 200.0,
        });
    }
    // Exchange bounded by everything that could flow through the slack.
    let n_loads = scenario.n_loads();
    let load_p: f64 = (0..n_loads)
        .map(|i| ranges[scenario.state_columns[i]].0.abs().max(ranges[scenario.state_columns[i]].1.abs()))
        .sum();
    let load_q: f64 = (0..n_loads)
        .map(|i| {
            let r = ranges[scenario.state_columns[n_loads + i]];
            r.0.abs().max(r.1.abs())
        })
        .sum();
    let gen_s: f64 = grid.generators.iter().map(|g| g.s_max_mva).sum();
    let p_span = load_p + gen_s;
    let q_span = load_q + gen_s;
    slots.push(Slot {
        name: "ext_grid:p_mw".into(),
        kind: SlotKind::ExternalP,
        min: -p_span,
        max: p_span,
    });
    slots.push(Slot {
        name: "ext_grid:q_mvar".into(),
        kind: SlotKind::ExternalQ,
        min: -q_span,
        max: q_span,
    });
    if config.init_action_mode == InitActionMode::Random {
        for (i, (lo, hi)) in scenario.problem.action_box().into_iter().enumerate() {
            slots.push(Slot {
                name: format!("action{i}"),
                kind: SlotKind::Action,
                min: lo,
                max: hi,
            });
        }
    }
    ObservationLayout { slots }
}

#[derive(Debug, Clone)]
pub struct StepInfo {
    pub objective: f64,
    pub penalty: f64,
    pub valid: bool,
    pub report: ViolationReport,
    pub converged: bool,
    /// The action was outside its box and got clipped.
    pub clipped: bool,
    pub action: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub step_index: usize,
    pub state: ExogenousState,
    pub grid: GridModel,
    pub last_action: Vec<f64>,
    pub last_result: Option<PowerFlowResult>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample {
    pub objective: f64,
    pub penalty: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub k: f64,
    pub samples: Vec<CalibrationSample>,
}

pub struct OpfEnv {
    scenario: Arc<Scenario>,
    config: DesignConfig,
    problem: OpfProblem,
    layout: ObservationLayout,
    sample_ranges: Vec<(f64, f64)>,
    sample_means: Vec<f64>,
    offset_k: f64,
    rng: ChaCha8Rng,
    episode: Option<EpisodeState>,
    power_flow_calls: u64,
}

impl OpfEnv {
    /// Builds an environment; a replacement reward without an explicit
    /// offset is calibrated on a separate rng stream derived from `seed`.
    pub fn new(scenario: Arc<Scenario>, config: DesignConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let penalties = config
            .penalty_factors
            .unwrap_or_else(|| PenaltyFactors::uniform(scenario.spec.default_penalty));
        let problem = scenario.problem.with_penalties(penalties);
        let layout = build_layout(&scenario, &config);
        let (sample_ranges, sample_means) = sampler_ranges(&scenario);
        let mut env = Self {
            scenario,
            config,
            problem,
            layout,
            sample_ranges,
            sample_means,
            offset_k: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            episode: None,
            power_flow_calls: 0,
        };
        if env.config.reward_mode == RewardMode::Replacement {
            env.offset_k = match env.config.offset_k {
                Some(k) => k,
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, 0xca1));
                    env.calibrate_offset(env.config.offset_mode, &mut rng)?.k
                }
            };
            env.config.offset_k = Some(env.offset_k);
        }
        Ok(env)
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn config(&self) -> &DesignConfig {
        &self.config
    }

    pub fn problem(&self) -> &OpfProblem {
        &self.problem
    }

    pub fn layout(&self) -> &ObservationLayout {
        &self.layout
    }

    pub fn observation_dim(&self) -> usize {
        self.layout.len()
    }

    pub fn action_dim(&self) -> usize {
        self.problem.action_dim()
    }

    pub fn action_box(&self) -> Vec<(f64, f64)> {
        self.problem.action_box()
    }

    /// Restarts the environment rng; the current episode is dropped.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.episode = None;
    }

    pub fn offset_k(&self) -> f64 {
        self.offset_k
    }

    pub fn power_flow_calls(&self) -> u64 {
        self.power_flow_calls
    }

    pub fn episode(&self) -> Option<&EpisodeState> {
        self.episode.as_ref()
    }

    /// Per-column sampler ranges: full-dataset min/max, with prices taken
    /// from the scenario price range.
    pub fn sampler_ranges(&self) -> &[(f64, f64)] {
        &self.sample_ranges
    }

    pub fn sample_state(&self, rng: &mut impl Rng) -> Result<ExogenousState> {
        let scenario = &self.scenario;
        match self.config.data_source {
            DataSource::TimeSeries => {
                sample_time_series(&scenario.dataset, &scenario.state_columns, rng)
            }
            DataSource::Uniform | DataSource::Normal => {
                let seed: u64 = rng.random();
                let mut draw_rng = ChaCha8Rng::seed_from_u64(seed);
                let values = if self.config.data_source == DataSource::Uniform {
                    sample_uniform(&self.sample_ranges, &mut draw_rng)?
                } else {
                    self.sample_normal_state(&mut draw_rng)?
                };
                Ok(ExogenousState {
                    values,
                    provenance: Provenance::Sampled(seed),
                })
            }
        }
    }

    fn sample_normal_state(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let price = self.price_slots();
        let mut values =
            sample_normal(&self.sample_means, &self.sample_ranges, self.config.normal_sigma_rel, rng)?;
        // prices stay uniform under every sampler
        for i in price {
            let (lo, hi) = self.sample_ranges[i];
            values[i] = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        }
        Ok(values)
    }

    fn price_slots(&self) -> std::ops::Range<usize> {
        let start = 2 * self.scenario.n_loads();
        start..start + self.scenario.n_generators()
    }

    pub fn reset(&mut self) -> Result<Vec<f64>> {
        let mut rng = self.rng.clone();
        let state = self.sample_state(&mut rng)?;
        self.rng = rng;
        self.reset_to(state)
    }

    /// Starts an episode on a given exogenous state. Random initial
    /// actions still draw from the environment rng.
    pub fn reset_to(&mut self, state: ExogenousState) -> Result<Vec<f64>> {
        let grid = self.scenario.apply_state(&state)?;
        let mut episode = EpisodeState {
            step_index: 0,
            state,
            grid,
            last_action: Vec::new(),
            last_result: None,
        };
        if self.config.obs_mode == ObsMode::Redundant {
            let action = initial_action(
                &self.problem.action_box(),
                self.config.init_action_mode,
                &mut self.rng,
            );
            let eval = self.problem.evaluate_action(&episode.grid, &action)?;
            self.power_flow_calls += 1;
            episode.last_action = action;
            episode.last_result = Some(eval.result);
        }
        let obs = self.observe(&episode);
        self.episode = Some(episode);
        Ok(obs)
    }

    fn observe(&self, episode: &EpisodeState) -> Vec<f64> {
        let mut raw = episode.state.values.clone();
        if self.config.obs_mode == ObsMode::Redundant {
            let result = episode
                .last_result
                .as_ref()
                .expect("redundant episodes always hold a power-flow result");
            raw.extend_from_slice(&result.vm_pu);
            raw.extend_from_slice(&result.loading_percent);
            raw.push(result.ext_p_mw);
            raw.push(result.ext_q_mvar);
            if self.config.init_action_mode == InitActionMode::Random {
                raw.extend_from_slice(&episode.last_action);
            }
        }
        self.layout.scale(&raw)
    }

    pub fn reward(&self, objective: f64, penalty: f64, valid: bool) -> f64 {
        match self.config.reward_mode {
            RewardMode::Summation => reward_summation(objective, penalty),
            RewardMode::Replacement => reward_replacement(objective, penalty, valid, self.offset_k),
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let length = self.config.episode_length();
        let mut episode = match self.episode.take() {
            Some(e) if e.step_index < length => e,
            other => {
                self.episode = other;
                return Err(Error::EpisodeFinished);
            }
        };
        let bounds = self.problem.action_box();
        if action.len() != bounds.len() {
            self.episode = Some(episode);
            return Err(Error::ShapeMismatch {
                expected: bounds.len(),
                got: action.len(),
            });
        }
        let mut clipped = false;
        let applied: Vec<f64> = action
            .iter()
            .zip(&bounds)
            .map(|(&a, &(lo, hi))| {
                let c = if a.is_nan() { 0.5 * (lo + hi) } else { a.clamp(lo, hi) };
                clipped |= c != a;
                c
            })
            .collect();
        let eval = self.problem.evaluate_action(&episode.grid, &applied)?;
        self.power_flow_calls += 1;
        let Evaluation {
            result,
            objective,
            penalty,
            report,
        } = eval;
        let valid = report.valid;
        let reward = self.reward(objective, penalty, valid);
        episode.step_index += 1;
        episode.last_action = applied.clone();
        let converged = result.converged;
        episode.last_result = Some(result);
        let terminal = episode.step_index == length;
        let observation = self.observe(&episode);
        self.episode = Some(episode);
        Ok(StepOutcome {
            observation,
            reward,
            terminal,
            info: StepInfo {
                objective,
                penalty,
                valid,
                report,
                converged,
                clipped,
                action: applied,
            },
        })
    }

    /// Objectives of `CALIBRATION_SAMPLES` random states under uniform
    /// random actions; k is their maximum (`Min`) or mean (`Mean`).
    pub fn calibrate_offset(&self, mode: OffsetMode, rng: &mut impl Rng) -> Result<Calibration> {
        let bounds = self.problem.action_box();
        let mut samples = Vec::with_capacity(CALIBRATION_SAMPLES);
        for _ in 0..CALIBRATION_SAMPLES {
            let state = self.sample_state(rng)?;
            let grid = self.scenario.apply_state(&state)?;
            let action = initial_action(&bounds, InitActionMode::Random, rng);
            let eval = self.problem.evaluate_action(&grid, &action)?;
            samples.push(CalibrationSample {
                objective: eval.objective,
                penalty: eval.penalty,
                valid: eval.report.valid,
            });
        }
        let objectives: Vec<f64> = samples.iter().map(|s| s.objective).collect();
        Ok(Calibration {
            k: offset_from_objectives(&objectives, mode),
            samples,
        })
    }
}

fn sampler_ranges(scenario: &Scenario) -> (Vec<(f64, f64)>, Vec<f64>) {
    let n_loads = scenario.n_loads();
    let n_gens = scenario.n_generators();
    let mut ranges = Vec::new();
    let mut means = Vec::new();
    for (slot, &c) in scenario.state_columns.iter().enumerate() {
        let col = &scenario.dataset.columns[c];
        if (2 * n_loads..2 * n_loads + n_gens).contains(&slot) {
            let (lo, hi) = scenario.spec.price_range;
            ranges.push((lo, hi));
            means.push(0.5 * (lo + hi));
        } else {
            ranges.push((col.min, col.max));
            means.push(col.mean);
        }
    }
    (ranges, means)
}

/// Short label used for result files.
pub fn scenario_label(kind: ScenarioKind) -> &'static str {
    kind.name()
}
