//! Objectives, constraint-violation accounting and the reference OPF
//! solver that supplies the optimum for relative-error metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Generator, GridModel};
use crate::par::{self, Execution};
use crate::powerflow::{InjectionSet, PowerFlowResult, PowerFlowSolver, SolverSettings};

/// Violation magnitude below which a constraint counts as satisfied.
pub const VALIDITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Voltage,
    Loading,
    Exchange,
    Actuator,
    NonConvergence,
}

/// One penalty factor per constraint class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyFactors {
    pub voltage: f64,
    pub loading: f64,
    pub exchange: f64,
    pub actuator: f64,
    pub non_convergence: f64,
}

impl PenaltyFactors {
    pub fn uniform(alpha: f64) -> Self {
        Self {
            voltage: alpha,
            loading: alpha,
            exchange: alpha,
            actuator: alpha,
            non_convergence: alpha,
        }
    }

    pub fn get(&self, kind: ConstraintKind) -> f64 {
        match kind {
            ConstraintKind::Voltage => self.voltage,
            ConstraintKind::Loading => self.loading,
            ConstraintKind::Exchange => self.exchange,
            ConstraintKind::Actuator => self.actuator,
            ConstraintKind::NonConvergence => self.non_convergence,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            voltage: self.voltage * factor,
            loading: self.loading * factor,
            exchange: self.exchange * factor,
            actuator: self.actuator * factor,
            non_convergence: self.non_convergence * factor,
        }
    }

    pub fn is_non_negative(&self) -> bool {
        [self.voltage, self.loading, self.exchange, self.actuator, self.non_convergence]
            .iter()
            .all(|a| *a >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ConstraintKind,
    pub magnitude: f64,
    pub penalty_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub entries: Vec<Violation>,
    pub total_violation: f64,
    pub valid: bool,
}

impl ViolationReport {
    pub fn from_entries(entries: Vec<Violation>, tolerance: f64) -> Self {
        let total_violation = entries.iter().map(|v| v.magnitude).sum();
        let valid = entries.iter().all(|v| v.magnitude <= tolerance);
        Self {
            entries,
            total_violation,
            valid,
        }
    }

    pub fn magnitude(&self, kind: ConstraintKind) -> f64 {
        self.entries
            .iter()
            .filter(|v| v.kind == kind)
            .map(|v| v.magnitude)
            .sum()
    }
}

/// Linear penalty: sum of factor times magnitude over all entries.
pub fn aggregate_penalty(report: &ViolationReport) -> f64 {
    report
        .entries
        .iter()
        .map(|v| v.penalty_factor * v.magnitude)
        .sum()
}

pub fn is_valid(report: &ViolationReport, tolerance: f64) -> bool {
    report.entries.iter().all(|v| v.magnitude <= tolerance)
}

/// Losses priced at `p_price` plus quadratic reactive procurement cost.
pub fn objective_voltage_control(
    result: &PowerFlowResult,
    generators: &[Generator],
    p_price: f64,
) -> Result<f64> {
    if !result.converged {
        return Err(Error::NotConverged);
    }
    Ok(result.total_losses_mw * check_price(p_price)? + reactive_cost(generators)?)
}

fn reactive_cost(generators: &[Generator]) -> Result<f64> {
    generators.iter().try_fold(0.0, |acc, g| {
        Ok(acc + g.q_mvar * g.q_mvar * check_price(g.price_reactive)?)
    })
}

pub fn objective_eco_dispatch(generators: &[Generator]) -> Result<f64> {
    generators
        .iter()
        .try_fold(0.0, |acc, g| Ok(acc + g.p_mw * check_price(g.price_active)?))
}

fn check_price(price: f64) -> Result<f64> {
    if price < 0.0 {
        Err(Error::NegativePrice(price))
    } else {
        Ok(price)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveKind {
    VoltageControl { p_price: f64 },
    EcoDispatch,
}

/// How the external-grid exchange is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeLimit {
    /// |Q_ext| <= q_exchange_max_mvar
    ReactiveSymmetric,
    /// lower <= P_ext <= upper from p_exchange_bounds_mw
    ActiveBand,
    /// -q_exchange_max_mvar <= Q_ext <= 0
    ReactiveOneSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActuatorKind {
    /// Q_g = a * sqrt(S_max^2 - P_g^2), a in [-1, 1]
    Reactive,
    /// P_g = a * P_max, a in [0, 1]
    Active,
}

impl ActuatorKind {
    pub fn action_box(&self) -> (f64, f64) {
        match self {
            ActuatorKind::Reactive => (-1.0, 1.0),
            ActuatorKind::Active => (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actuator {
    pub generator: usize,
    pub kind: ActuatorKind,
}

/// Evaluated outcome of one set of setpoints on one system state.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub result: PowerFlowResult,
    /// Objective value. For non-converged flows the network-dependent
    /// terms (losses) are omitted.
    pub objective: f64,
    pub penalty: f64,
    pub report: ViolationReport,
}

#[derive(Debug, Clone)]
pub struct OpfProblem {
    pub grid: GridModel,
    pub objective: ObjectiveKind,
    pub exchange: ExchangeLimit,
    pub actuators: Vec<Actuator>,
    pub penalties: PenaltyFactors,
    pub validity_tolerance: f64,
    solver: PowerFlowSolver,
}

impl OpfProblem {
    pub fn new(
        grid: GridModel,
        objective: ObjectiveKind,
        exchange: ExchangeLimit,
        actuators: Vec<Actuator>,
        penalties: PenaltyFactors,
    ) -> Result<Self> {
        for a in &actuators {
            if a.generator >= grid.generators.len() {
                return Err(Error::Config(format!(
                    "actuator references missing generator {}",
                    a.generator
                )));
            }
        }
        if !penalties.is_non_negative() {
            return Err(Error::Config("penalty factors must be non-negative".into()));
        }
        let solver = PowerFlowSolver::new(&grid, SolverSettings::default())?;
        Ok(Self {
            grid,
            objective,
            exchange,
            actuators,
            penalties,
            validity_tolerance: VALIDITY_TOLERANCE,
            solver,
        })
    }

    pub fn with_penalties(&self, penalties: PenaltyFactors) -> Self {
        Self {
            penalties,
            ..self.clone()
        }
    }

    pub fn solver(&self) -> &PowerFlowSolver {
        &self.solver
    }

    pub fn action_dim(&self) -> usize {
        self.actuators.len()
    }

    pub fn action_box(&self) -> Vec<(f64, f64)> {
        self.actuators.iter().map(|a| a.kind.action_box()).collect()
    }

    /// Physical setpoint (MW or Mvar) for each actuator given an action.
    pub fn action_to_setpoints(&self, state: &GridModel, action: &[f64]) -> Vec<f64> {
        self.actuators
            .iter()
            .zip(action)
            .map(|(act, &a)| {
                let g = &state.generators[act.generator];
                match act.kind {
                    ActuatorKind::Reactive => a * g.q_max_mvar(),
                    ActuatorKind::Active => a * g.p_max_mw,
                }
            })
            .collect()
    }

    pub fn apply_setpoints(&self, state: &mut GridModel, setpoints: &[f64]) {
        for (act, &s) in self.actuators.iter().zip(setpoints) {
            let g = &mut state.generators[act.generator];
            match act.kind {
                ActuatorKind::Reactive => g.q_mvar = s,
                ActuatorKind::Active => g.p_mw = s,
            }
        }
    }

    pub fn evaluate_action(&self, state: &GridModel, action: &[f64]) -> Result<Evaluation> {
        let setpoints = self.action_to_setpoints(state, action);
        self.evaluate_setpoints(state, &setpoints)
    }

    pub fn evaluate_setpoints(&self, state: &GridModel, setpoints: &[f64]) -> Result<Evaluation> {
        let mut grid = state.clone();
        self.apply_setpoints(&mut grid, setpoints);
        let injections = InjectionSet::from_grid(&grid);
        let result = self.solver.solve(&injections)?;
        let objective = match self.objective {
            ObjectiveKind::VoltageControl { p_price } => {
                if result.converged {
                    objective_voltage_control(&result, &grid.generators, p_price)?
                } else {
                    reactive_cost(&grid.generators)?
                }
            }
            ObjectiveKind::EcoDispatch => objective_eco_dispatch(&grid.generators)?,
        };
        let report = evaluate_constraints(self, &result, &grid);
        let penalty = aggregate_penalty(&report);
        Ok(Evaluation {
            result,
            objective,
            penalty,
            report,
        })
    }
}

/// Violation magnitudes per constraint class, in normalized units: p.u.
/// voltage, fraction of rating, and per-unit of `base_mva` for powers.
/// `grid` must carry the applied setpoints.
pub fn evaluate_constraints(
    problem: &OpfProblem,
    result: &PowerFlowResult,
    grid: &GridModel,
) -> ViolationReport {
    let base = grid.base_mva;
    let alpha = &problem.penalties;
    let entry = |kind, magnitude| Violation {
        kind,
        magnitude,
        penalty_factor: alpha.get(kind),
    };

    let actuator: f64 = problem
        .actuators
        .iter()
        .map(|act| {
            let g = &grid.generators[act.generator];
            match act.kind {
                ActuatorKind::Reactive => (g.q_mvar.abs() - g.q_max_mvar()).max(0.0),
                ActuatorKind::Active => (g.p_mw - g.p_max_mw).max(0.0) + (-g.p_mw).max(0.0),
            }
        })
        .sum::<f64>()
        / base;
    // rounding in sqrt(S^2 - P^2) must not register as a violation
    let actuator = if actuator < 1e-12 { 0.0 } else { actuator };

    if !result.converged {
        return ViolationReport::from_entries(
            vec![
                entry(ConstraintKind::Actuator, actuator),
                entry(ConstraintKind::NonConvergence, 1.0),
            ],
            problem.validity_tolerance,
        );
    }

    let voltage = grid
        .buses
        .iter()
        .zip(&result.vm_pu)
        .map(|(b, &u)| (u - b.v_max_pu).max(b.v_min_pu - u).max(0.0))
        .sum();
    let loading = result
        .loading_percent
        .iter()
        .map(|&s| (s - 100.0).max(0.0) / 100.0)
        .sum();
    let ext = grid.external_grid();
    let exchange = match problem.exchange {
        ExchangeLimit::ReactiveSymmetric => (result.ext_q_mvar.abs() - ext.q_exchange_max_mvar).max(0.0),
        ExchangeLimit::ActiveBand => {
            let (lo, hi) = ext.p_exchange_bounds_mw;
            (result.ext_p_mw - hi).max(lo - result.ext_p_mw).max(0.0)
        }
        ExchangeLimit::ReactiveOneSided => {
            (result.ext_q_mvar).max(-ext.q_exchange_max_mvar - result.ext_q_mvar).max(0.0)
        }
    } / base;

    ViolationReport::from_entries(
        vec![
            entry(ConstraintKind::Voltage, voltage),
            entry(ConstraintKind::Loading, loading),
            entry(ConstraintKind::Exchange, exchange),
            entry(ConstraintKind::Actuator, actuator),
            entry(ConstraintKind::NonConvergence, 0.0),
        ],
        problem.validity_tolerance,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSettings {
    pub starts: usize,
    pub seed: u64,
    /// Initial poll step as a fraction of each box width.
    pub initial_step: f64,
    pub min_step: f64,
    pub max_evaluations_per_start: usize,
    pub penalty_escalation: [f64; 3],
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            starts: 10,
            seed: 0x5eed,
            initial_step: 0.25,
            min_step: 1e-7,
            max_evaluations_per_start: 20_000,
            penalty_escalation: [1.0, 10.0, 100.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub action: Vec<f64>,
    pub setpoints: Vec<f64>,
    pub objective: f64,
    pub valid: bool,
    pub total_violation: f64,
    pub starts: usize,
    pub evaluations: usize,
}

struct StartOutcome {
    action: Vec<f64>,
    objective: f64,
    total_violation: f64,
    valid: bool,
    evaluations: usize,
}

/// Multi-start pattern search over the action box on J + mu * P, with mu
/// escalated until the incumbent is valid. Returns the lowest-objective
/// valid incumbent (lowest start index on ties).
pub fn reference_optimum(
    problem: &OpfProblem,
    state: &GridModel,
    settings: &OracleSettings,
    execution: Execution,
) -> Result<OracleSolution> {
    let bounds = problem.action_box();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut starts = vec![bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect::<Vec<_>>()];
    for _ in 1..settings.starts.max(1) {
        starts.push(bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect());
    }

    let outcomes = par::try_map(execution, &starts, |start| {
        refine_start(problem, state, &bounds, start.clone(), settings)
    })?;

    let evaluations = outcomes.iter().map(|o| o.evaluations).sum();
    let best = outcomes
        .iter()
        .filter(|o| o.valid)
        .fold(None::<&StartOutcome>, |best, o| match best {
            Some(b) if b.objective <= o.objective => Some(b),
            _ => Some(o),
        });
    let (chosen, valid) = match best {
        Some(b) => (b, true),
        None => {
            let least_violating = outcomes
                .iter()
                .fold(&outcomes[0], |b, o| if o.total_violation < b.total_violation { o } else { b });
            (least_violating, false)
        }
    };
    let setpoints = problem.action_to_setpoints(state, &chosen.action);
    Ok(OracleSolution {
        action: chosen.action.clone(),
        setpoints,
        objective: chosen.objective,
        valid,
        total_violation: chosen.total_violation,
        starts: starts.len(),
        evaluations,
    })
}

fn refine_start(
    problem: &OpfProblem,
    state: &GridModel,
    bounds: &[(f64, f64)],
    start: Vec<f64>,
    settings: &OracleSettings,
) -> Result<StartOutcome> {
    let mut x = start;
    let mut evaluations = 0;
    let mut last = problem.evaluate_action(state, &x)?;
    evaluations += 1;
    for &mu in &settings.penalty_escalation {
        let (next, eval, used) = pattern_search(problem, state, bounds, x, mu, settings)?;
        x = next;
        last = eval;
        evaluations += used;
        if last.report.valid {
            break;
        }
    }
    Ok(StartOutcome {
        action: x,
        objective: last.objective,
        total_violation: last.report.total_violation,
        valid: last.report.valid,
        evaluations,
    })
}

fn poll_directions(dim: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for i in 0..dim {
        for sign in [1.0, -1.0] {
            let mut d = vec![0.0; dim];
            d[i] = sign;
            dirs.push(d);
        }
    }
    // Exchange directions move along a kink between two actuators (e.g.
    // shifting output from an expensive to a cheap unit at fixed balance).
    for i in 0..dim {
        for j in 0..dim {
            if i != j {
                let mut d = vec![0.0; dim];
                d[i] = 1.0;
                d[j] = -1.0;
                dirs.push(d);
            }
        }
    }
    dirs
}

fn pattern_search(
    problem: &OpfProblem,
    state: &GridModel,
    bounds: &[(f64, f64)],
    start: Vec<f64>,
    mu: f64,
    settings: &OracleSettings,
) -> Result<(Vec<f64>, Evaluation, usize)> {
    let merit = |e: &Evaluation| e.objective + mu * e.penalty;
    let dirs = poll_directions(bounds.len());
    let mut x = start;
    let mut best = problem.evaluate_action(state, &x)?;
    let mut fx = merit(&best);
    let mut used = 1;
    let mut step = settings.initial_step;
    let mut first_dir = 0;
    let mut trial = x.clone();

    while step >= settings.min_step && used < settings.max_evaluations_per_start {
        let mut improved = false;
        for k in 0..dirs.len() {
            let di = (first_dir + k) % dirs.len();
            let d = &dirs[di];
            for (i, t) in trial.iter_mut().enumerate() {
                let (lo, hi) = bounds[i];
                *t = (x[i] + step * d[i] * (hi - lo)).clamp(lo, hi);
            }
            if trial == x {
                continue;
            }
            let eval = problem.evaluate_action(state, &trial)?;
            used += 1;
            let ft = merit(&eval);
            if ft < fx {
                x.copy_from_slice(&trial);
                fx = ft;
                best = eval;
                improved = true;
                first_dir = di;
                break;
            }
            if used >= settings.max_evaluations_per_start {
                break;
            }
        }
        if improved {
            step = (step * 2.0).min(settings.initial_step);
        } else {
            step *= 0.5;
        }
    }
    Ok((x, best, used))
}
