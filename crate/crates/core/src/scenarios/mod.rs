//! Concrete OPF use cases: reactive-power VoltageControl and active-power
//! EcoDispatch, their bundled desk-scale grids and synthetic data.

pub mod dataset;
pub mod profiles;

use serde::{Deserialize, Serialize};

pub use dataset::{split_dataset, Column, Dataset, Split};
pub use profiles::{
    generate_profiles, GeneratorProfile, LoadProfile, ProfileClass, SyntheticProfileConfig,
};

use crate::env::{ExogenousState, Provenance};
use crate::error::{Error, Result};
use crate::grid::GridModel;
use crate::opf::{Actuator, ActuatorKind, ExchangeLimit, ObjectiveKind, OpfProblem, PenaltyFactors};

pub const LV_DESK_GRID: &str = include_str!("../../assets/lv_desk.grid");
pub const HV_DESK_GRID: &str = include_str!("../../assets/hv_desk.grid");
pub const TWO_BUS_GRID: &str = include_str!("../../assets/two_bus.grid");

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

pub fn lv_desk_grid() -> GridModel {
    GridModel::from_toml_str(LV_DESK_GRID).expect("bundled lv_desk grid is valid")
}

pub fn hv_desk_grid() -> GridModel {
    GridModel::from_toml_str(HV_DESK_GRID).expect("bundled hv_desk grid is valid")
}

pub fn two_bus_grid() -> GridModel {
    GridModel::from_toml_str(TWO_BUS_GRID).expect("bundled two_bus grid is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    VoltageControl,
    EcoDispatch,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::VoltageControl => "voltage_control",
            ScenarioKind::EcoDispatch => "eco_dispatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub grid: GridModel,
    pub actuators: Vec<Actuator>,
    pub exchange: ExchangeLimit,
    /// Price of active losses (VoltageControl only).
    pub loss_price: f64,
    pub price_range: (f64, f64),
    pub default_penalty: f64,
}

impl ScenarioSpec {
    pub fn voltage_control(grid: GridModel) -> Self {
        let actuators = (0..grid.generators.len())
            .map(|g| Actuator { generator: g, kind: ActuatorKind::Reactive })
            .collect();
        Self {
            kind: ScenarioKind::VoltageControl,
            grid,
            actuators,
            exchange: ExchangeLimit::ReactiveSymmetric,
            loss_price: 50.0,
            price_range: (0.0, 1.0),
            default_penalty: 500.0,
        }
    }

    pub fn eco_dispatch(grid: GridModel) -> Self {
        let actuators = (0..grid.generators.len())
            .map(|g| Actuator { generator: g, kind: ActuatorKind::Active })
            .collect();
        Self {
            kind: ScenarioKind::EcoDispatch,
            grid,
            actuators,
            exchange: ExchangeLimit::ActiveBand,
            loss_price: 0.0,
            price_range: (20.0, 100.0),
            default_penalty: 10_000.0,
        }
    }

    fn objective(&self) -> ObjectiveKind {
        match self.kind {
            ScenarioKind::VoltageControl => ObjectiveKind::VoltageControl { p_price: self.loss_price },
            ScenarioKind::EcoDispatch => ObjectiveKind::EcoDispatch,
        }
    }

    /// Dataset columns forming the exogenous state, in observation order:
    /// load P, load Q, one price per generator, then fixed generator P
    /// (VoltageControl only).
    pub fn state_column_names(&self) -> Vec<String> {
        let n_loads = self.grid.loads.len();
        let n_gens = self.grid.generators.len();
        let mut names: Vec<String> = (0..n_loads).map(|i| profiles::load_column(i, "p_mw")).collect();
        names.extend((0..n_loads).map(|i| profiles::load_column(i, "q_mvar")));
        let price = match self.kind {
            ScenarioKind::VoltageControl => "price_reactive",
            ScenarioKind::EcoDispatch => "price_active",
        };
        names.extend((0..n_gens).map(|g| profiles::gen_column(g, price)));
        if self.kind == ScenarioKind::VoltageControl {
            names.extend((0..n_gens).map(|g| profiles::gen_column(g, "p_mw")));
        }
        names
    }
}

/// A scenario bound to its dataset: everything an environment needs that
/// does not depend on design choices.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub dataset: Dataset,
    pub problem: OpfProblem,
    pub state_columns: Vec<usize>,
    /// Content hash of `dataset`, part of the oracle cache key.
    pub data_hash: String,
}

impl Scenario {
    pub fn new(spec: ScenarioSpec, dataset: Dataset) -> Result<Self> {
        let violations = spec.grid.validate();
        if !violations.is_empty() {
            return Err(Error::Validation(format!("{:?}", violations)));
        }
        let state_columns = spec
            .state_column_names()
            .iter()
            .map(|name| {
                dataset
                    .column_index(name)
                    .ok_or_else(|| Error::Config(format!("dataset lacks column {name}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if dataset.rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let problem = OpfProblem::new(
            spec.grid.clone(),
            spec.objective(),
            spec.exchange,
            spec.actuators.clone(),
            PenaltyFactors::uniform(spec.default_penalty),
        )?;
        let scenario = Self {
            spec,
            data_hash: dataset.content_hash(),
            dataset,
            problem,
            state_columns,
        };
        scenario.check_preconditions()?;
        Ok(scenario)
    }

    fn check_preconditions(&self) -> Result<()> {
        match self.spec.kind {
            ScenarioKind::VoltageControl => {
                let n_gens = self.spec.grid.generators.len();
                let p_cols = &self.state_columns[self.state_columns.len() - n_gens..];
                let ok = self.spec.grid.generators.iter().zip(p_cols).any(|(g, &c)| {
                    g.s_max_mva > self.dataset.columns[c].max
                });
                if !ok {
                    return Err(Error::InfeasibleSpec(
                        "no generator has reactive headroom".into(),
                    ));
                }
            }
            ScenarioKind::EcoDispatch => {
                let n_loads = self.spec.grid.loads.len();
                let capacity: f64 = self.spec.grid.generators.iter().map(|g| g.p_max_mw).sum();
                let peak = self
                    .dataset
                    .rows
                    .iter()
                    .map(|r| self.state_columns[..n_loads].iter().map(|&c| r[c]).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max);
                if capacity < peak {
                    return Err(Error::InfeasibleSpec(format!(
                        "generation capacity {capacity} MW below peak load {peak} MW"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> ScenarioKind {
        self.spec.kind
    }

    pub fn n_loads(&self) -> usize {
        self.spec.grid.loads.len()
    }

    pub fn n_generators(&self) -> usize {
        self.spec.grid.generators.len()
    }

    pub fn action_dim(&self) -> usize {
        self.spec.actuators.len()
    }

    pub fn state_names(&self) -> Vec<String> {
        self.spec.state_column_names()
    }

    pub fn state_from_row(&self, row: usize) -> ExogenousState {
        let values = self
            .state_columns
            .iter()
            .map(|&c| self.dataset.rows[row][c])
            .collect();
        ExogenousState {
            values,
            provenance: Provenance::Row(row),
        }
    }

    /// Grid with loads, prices and fixed setpoints taken from `state`;
    /// actuator setpoints zeroed.
    pub fn apply_state(&self, state: &ExogenousState) -> Result<GridModel> {
        let n_loads = self.n_loads();
        let n_gens = self.n_generators();
        if state.values.len() != self.state_columns.len() {
            return Err(Error::ShapeMismatch {
                expected: self.state_columns.len(),
                got: state.values.len(),
            });
        }
        let mut grid = self.spec.grid.clone();
        for (i, load) in grid.loads.iter_mut().enumerate() {
            load.p_mw = state.values[i];
            load.q_mvar = state.values[n_loads + i];
        }
        let prices = &state.values[2 * n_loads..2 * n_loads + n_gens];
        match self.spec.kind {
            ScenarioKind::VoltageControl => {
                let fixed_p = &state.values[2 * n_loads + n_gens..];
                for (g, gen) in grid.generators.iter_mut().enumerate() {
                    gen.price_reactive = prices[g];
                    gen.p_mw = fixed_p[g];
                    gen.q_mvar = 0.0;
                    if gen.p_mw > gen.s_max_mva {
                        return Err(Error::Capability {
                            generator: g,
                            p_mw: gen.p_mw,
                            s_max_mva: gen.s_max_mva,
                        });
                    }
                }
            }
            ScenarioKind::EcoDispatch => {
                for (g, gen) in grid.generators.iter_mut().enumerate() {
                    gen.price_active = prices[g];
                    gen.p_mw = 0.0;
                    gen.q_mvar = 0.0;
                }
            }
        }
        Ok(grid)
    }
}

/// Profile settings matching the bundled `lv_desk` grid.
pub fn lv_desk_profiles(seed: u64) -> SyntheticProfileConfig {
    use ProfileClass::{Commercial as C, Household as H};
    let grid = lv_desk_grid();
    let classes = [H, C, H, C, H, H, C, H, C, H];
    SyntheticProfileConfig {
        horizon: 96 * 42,
        timestep_minutes: 15,
        loads: grid
            .loads
            .iter()
            .zip(classes)
            .map(|(l, class)| LoadProfile { base_p_mw: l.p_mw, class })
            .collect(),
        generators: grid
            .generators
            .iter()
            .map(|g| GeneratorProfile {
                s_max_mva: g.s_max_mva,
                p_fraction: 0.8,
                class: C,
                price_active: (20.0, 100.0),
                price_reactive: (0.0, 1.0),
            })
            .collect(),
        noise: 0.1,
        power_factor: 0.95,
        seed,
    }
}

/// Profile settings matching the bundled `hv_desk` grid. Loads with a
/// negative base are feed-ins sharing a spur with a commercial consumer.
pub fn hv_desk_profiles(seed: u64) -> SyntheticProfileConfig {
    use ProfileClass::{Commercial as C, Household as H};
    let grid = hv_desk_grid();
    let classes = [C, C, C, C, C, C, H, C, H, H, C, H];
    SyntheticProfileConfig {
        horizon: 96 * 42,
        timestep_minutes: 15,
        loads: grid
            .loads
            .iter()
            .zip(classes)
            .map(|(l, class)| LoadProfile { base_p_mw: l.p_mw, class })
            .collect(),
        generators: grid
            .generators
            .iter()
            .map(|g| GeneratorProfile {
                s_max_mva: g.s_max_mva,
                p_fraction: 0.8,
                class: C,
                price_active: (20.0, 100.0),
                price_reactive: (0.0, 1.0),
            })
            .collect(),
        noise: 0.1,
        power_factor: 0.95,
        seed,
    }
}

pub const DEFAULT_DATA_SEED: u64 = 2024;

pub fn bundled_dataset(kind: ScenarioKind) -> Dataset {
    let config = match kind {
        ScenarioKind::VoltageControl => lv_desk_profiles(DEFAULT_DATA_SEED),
        ScenarioKind::EcoDispatch => hv_desk_profiles(DEFAULT_DATA_SEED),
    };
    let ds = generate_profiles(&config).expect("bundled profile config is valid");
    split_dataset(ds, DEFAULT_TEST_FRACTION).expect("valid test fraction")
}

pub fn make_voltage_control(grid: GridModel, dataset: Dataset) -> Result<Scenario> {
    Scenario::new(ScenarioSpec::voltage_control(grid), dataset)
}

pub fn make_eco_dispatch(grid: GridModel, dataset: Dataset) -> Result<Scenario> {
    Scenario::new(ScenarioSpec::eco_dispatch(grid), dataset)
}

/// Bundled desk-scale scenario with its default synthetic dataset.
pub fn bundled(kind: ScenarioKind) -> Scenario {
    let dataset = bundled_dataset(kind);
    match kind {
        ScenarioKind::VoltageControl => make_voltage_control(lv_desk_grid(), dataset),
        ScenarioKind::EcoDispatch => make_eco_dispatch(hv_desk_grid(), dataset),
    }
    .expect("bundled scenario is consistent")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_grids_validate() {
        assert!(lv_desk_grid().validate().is_empty());
        assert!(hv_desk_grid().validate().is_empty());
        assert_eq!(lv_desk_grid().buses.len(), 15);
        assert_eq!(lv_desk_grid().loads.len(), 10);
        assert_eq!(lv_desk_grid().generators.len(), 3);
        assert_eq!(hv_desk_grid().buses.len(), 30);
        assert_eq!(hv_desk_grid().loads.len(), 12);
        assert_eq!(hv_desk_grid().generators.len(), 8);
    }

    #[test]
    fn eco_dispatch_has_larger_action_space() {
        let vc = bundled(ScenarioKind::VoltageControl);
        let ed = bundled(ScenarioKind::EcoDispatch);
        assert!(ed.action_dim() > vc.action_dim());
        assert_eq!((ed.action_dim(), vc.action_dim()), (8, 3));
    }

    #[test]
    fn state_layout_lengths() {
        let vc = bundled(ScenarioKind::VoltageControl);
        assert_eq!(vc.state_columns.len(), 2 * 10 + 3 + 3);
        let ed = bundled(ScenarioKind::EcoDispatch);
        assert_eq!(ed.state_columns.len(), 2 * 12 + 8);
    }

    #[test]
    fn voltage_control_capability_error() {
        let vc = bundled(ScenarioKind::VoltageControl);
        let mut state = vc.state_from_row(0);
        let last = state.values.len() - 1;
        state.values[last] = 100.0;
        assert!(matches!(vc.apply_state(&state), Err(Error::Capability { .. })));
    }

    #[test]
    fn eco_dispatch_headroom_enforced() {
        let mut grid = hv_desk_grid();
        for g in &mut grid.generators {
            g.p_max_mw = 0.1;
        }
        let err = make_eco_dispatch(grid, bundled_dataset(ScenarioKind::EcoDispatch)).unwrap_err();
        assert!(matches!(err, Error::InfeasibleSpec(_)));
    }

    #[test]
    fn missing_column_rejected() {
        let mut ds = bundled_dataset(ScenarioKind::VoltageControl);
        ds.columns[0].name = "other:p_mw".into();
        assert!(make_voltage_control(lv_desk_grid(), ds).is_err());
    }
}
