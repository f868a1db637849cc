//! Static network description in per-unit: buses, branches and the units
//! attached to them, plus admittance-matrix construction.
//!
//! Grid documents are TOML with the top-level keys `base_mva`, `buses`,
//! `branches`, `loads`, `generators` and `external_grid`. Powers in the
//! document are MW/Mvar; impedances are already per-unit on `base_mva`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type BusId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: BusId,
    pub base_voltage_kv: f64,
    #[serde(default = "default_v_min")]
    pub v_min_pu: f64,
    #[serde(default = "default_v_max")]
    pub v_max_pu: f64,
}

fn default_v_min() -> f64 {
    0.95
}

fn default_v_max() -> f64 {
    1.05
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    Line,
    Transformer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r_pu: f64,
    pub x_pu: f64,
    #[serde(default)]
    pub b_shunt_pu: f64,
    pub rating_mva: f64,
    pub kind: BranchKind,
}

impl Branch {
    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(self.r_pu, self.x_pu)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub bus: BusId,
    pub p_mw: f64,
    pub q_mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: BusId,
    pub p_mw: f64,
    pub q_mvar: f64,
    pub p_max_mw: f64,
    pub s_max_mva: f64,
    pub price_active: f64,
    pub price_reactive: f64,
}

impl Generator {
    /// Reactive capability at the current active setpoint.
    pub fn q_max_mvar(&self) -> f64 {
        (self.s_max_mva * self.s_max_mva - self.p_mw * self.p_mw)
            .max(0.0)
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalGrid {
    pub bus: BusId,
    pub q_exchange_max_mvar: f64,
    /// (lower, upper) bound on active import from the external grid.
    pub p_exchange_bounds_mw: (f64, f64),
}

/// A grid as described by a document. `external_grids` holds every
/// external-grid record so that validation can report duplicates; a valid
/// grid has exactly one.
#[derive(Debug, Clone, PartialEq)]
pub struct GridModel {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub loads: Vec<Load>,
    pub generators: Vec<Generator>,
    pub external_grids: Vec<ExternalGrid>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridViolation {
    DanglingReference { element: String, bus: BusId },
    DuplicateId(BusId),
    MissingSlack,
    MultipleSlack(usize),
    Disconnected { unreachable: Vec<BusId> },
    BadVoltageBand { bus: BusId },
    BadBaseVoltage { bus: BusId },
    BadBranch { index: usize, reason: String },
    BadUnit { element: String, reason: String },
    BadBase,
}

impl fmt::Display for GridViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridViolation::DanglingReference { element, bus } => {
                write!(f, "{element} references missing bus {bus}")
            }
            GridViolation::DuplicateId(id) => write!(f, "duplicate bus id {id}"),
            GridViolation::MissingSlack => write!(f, "no external grid"),
            GridViolation::MultipleSlack(n) => write!(f, "{n} external grids, expected one"),
            GridViolation::Disconnected { unreachable } => {
                write!(f, "buses unreachable from slack: {unreachable:?}")
            }
            GridViolation::BadVoltageBand { bus } => {
                write!(f, "bus {bus}: voltage band must satisfy 0 < v_min < v_max")
            }
            GridViolation::BadBaseVoltage { bus } => {
                write!(f, "bus {bus}: base voltage must be positive")
            }
            GridViolation::BadBranch { index, reason } => write!(f, "branch {index}: {reason}"),
            GridViolation::BadUnit { element, reason } => write!(f, "{element}: {reason}"),
            GridViolation::BadBase => write!(f, "base_mva must be positive"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDocument {
    base_mva: f64,
    buses: Vec<Bus>,
    #[serde(default)]
    branches: Vec<Branch>,
    #[serde(default)]
    loads: Vec<Load>,
    #[serde(default)]
    generators: Vec<Generator>,
    external_grid: OneOrMany<ExternalGrid>,
}

impl GridModel {
    /// Slack bus id. Panics on grids that failed validation.
    pub fn slack_bus(&self) -> BusId {
        self.external_grid().bus
    }

    pub fn external_grid(&self) -> &ExternalGrid {
        &self.external_grids[0]
    }

    pub fn bus_index(&self) -> HashMap<BusId, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn slack_index(&self) -> usize {
        let slack = self.slack_bus();
        self.buses
            .iter()
            .position(|b| b.id == slack)
            .expect("slack bus exists in a validated grid")
    }

    /// Stable content hash, used to key cached oracle results.
    pub fn content_hash(&self) -> String {
        let text = self.to_toml_string();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Vec<GridViolation> {
        validate_grid(self)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Parse("empty grid document".into()));
        }
        let doc: GridDocument = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let external_grids = match doc.external_grid {
            OneOrMany::One(e) => vec![e],
            OneOrMany::Many(v) => v,
        };
        let grid = GridModel {
            base_mva: doc.base_mva,
            buses: doc.buses,
            branches: doc.branches,
            loads: doc.loads,
            generators: doc.generators,
            external_grids,
        };
        let violations = grid.validate();
        if !violations.is_empty() {
            let msg = violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::Validation(msg));
        }
        Ok(grid)
    }

    pub fn to_toml_string(&self) -> String {
        let external_grid = if self.external_grids.len() == 1 {
            OneOrMany::One(self.external_grids[0].clone())
        } else {
            OneOrMany::Many(self.external_grids.clone())
        };
        let doc = GridDocument {
            base_mva: self.base_mva,
            buses: self.buses.clone(),
            branches: self.branches.clone(),
            loads: self.loads.clone(),
            generators: self.generators.clone(),
            external_grid,
        };
        toml::to_string(&doc).expect("grid document serializes")
    }

    pub fn total_load_mw(&self) -> f64 {
        self.loads.iter().map(|l| l.p_mw).sum()
    }

    pub fn total_generation_mw(&self) -> f64 {
        self.generators.iter().map(|g| g.p_mw).sum()
    }
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<GridModel> {
    let text = std::fs::read_to_string(path)?;
    GridModel::from_toml_str(&text)
}

pub fn save_grid(grid: &GridModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, grid.to_toml_string())?;
    Ok(())
}

pub fn validate_grid(grid: &GridModel) -> Vec<GridViolation> {
    let mut out = Vec::new();
    if !(grid.base_mva > 0.0) {
        out.push(GridViolation::BadBase);
    }

    let mut seen = HashSet::new();
    for bus in &grid.buses {
        if !seen.insert(bus.id) {
            out.push(GridViolation::DuplicateId(bus.id));
        }
        if !(bus.v_min_pu > 0.0 && bus.v_min_pu < bus.v_max_pu) {
            out.push(GridViolation::BadVoltageBand { bus: bus.id });
        }
        if !(bus.base_voltage_kv > 0.0) {
            out.push(GridViolation::BadBaseVoltage { bus: bus.id });
        }
    }

    let mut dangling = |element: String, bus: BusId| {
        if !seen.contains(&bus) {
            out.push(GridViolation::DanglingReference { element, bus });
        }
    };
    for (i, br) in grid.branches.iter().enumerate() {
        dangling(format!("branch {i}"), br.from_bus);
        dangling(format!("branch {i}"), br.to_bus);
    }
    for (i, l) in grid.loads.iter().enumerate() {
        dangling(format!("load {i}"), l.bus);
    }
    for (i, g) in grid.generators.iter().enumerate() {
        dangling(format!("generator {i}"), g.bus);
    }
    for (i, e) in grid.external_grids.iter().enumerate() {
        dangling(format!("external grid {i}"), e.bus);
    }

    for (index, br) in grid.branches.iter().enumerate() {
        if br.from_bus == br.to_bus {
            out.push(GridViolation::BadBranch {
                index,
                reason: "from_bus equals to_bus".into(),
            });
        }
        if br.r_pu == 0.0 && br.x_pu == 0.0 {
            out.push(GridViolation::BadBranch {
                index,
                reason: "zero impedance".into(),
            });
        }
        if !(br.rating_mva > 0.0) {
            out.push(GridViolation::BadBranch {
                index,
                reason: "rating must be positive".into(),
            });
        }
    }

    for (i, g) in grid.generators.iter().enumerate() {
        if !(0.0 <= g.p_max_mw && g.p_max_mw <= g.s_max_mva) {
            out.push(GridViolation::BadUnit {
                element: format!("generator {i}"),
                reason: "requires 0 <= p_max_mw <= s_max_mva".into(),
            });
        }
        if g.price_active < 0.0 || g.price_reactive < 0.0 {
            out.push(GridViolation::BadUnit {
                element: format!("generator {i}"),
                reason: "prices must be non-negative".into(),
            });
        }
    }
    for (i, e) in grid.external_grids.iter().enumerate() {
        let (lo, hi) = e.p_exchange_bounds_mw;
        if !(e.q_exchange_max_mvar >= 0.0) || !(lo <= hi) {
            out.push(GridViolation::BadUnit {
                element: format!("external grid {i}"),
                reason: "requires q_exchange_max_mvar >= 0 and lower <= upper".into(),
            });
        }
    }

    match grid.external_grids.len() {
        0 => out.push(GridViolation::MissingSlack),
        1 => {}
        n => out.push(GridViolation::MultipleSlack(n)),
    }

    if let Some(ext) = grid.external_grids.first() {
        if seen.contains(&ext.bus) {
            let unreachable = unreachable_buses(grid, ext.bus);
            if !unreachable.is_empty() {
                out.push(GridViolation::Disconnected { unreachable });
            }
        }
    }
    out
}

fn unreachable_buses(grid: &GridModel, root: BusId) -> Vec<BusId> {
    let mut adjacency: HashMap<BusId, Vec<BusId>> = HashMap::new();
    for br in &grid.branches {
        adjacency.entry(br.from_bus).or_default().push(br.to_bus);
        adjacency.entry(br.to_bus).or_default().push(br.from_bus);
    }
    let mut visited = HashSet::from([root]);
    let mut queue = VecDeque::from([root]);
    while let Some(bus) = queue.pop_front() {
        for &next in adjacency.get(&bus).map(Vec::as_slice).unwrap_or(&[]) {
            if visited.insert(next) {
                queue.push_back(next);
            }
        }
    }
    grid.buses
        .iter()
        .map(|b| b.id)
        .filter(|id| !visited.contains(id))
        .collect()
}

/// Bus admittance matrix, rows and columns in `grid.buses` order.
pub fn build_admittance_matrix(grid: &GridModel) -> Result<DMatrix<Complex64>> {
    let n = grid.buses.len();
    if let Some(ext) = grid.external_grids.first() {
        if grid.buses.iter().any(|b| b.id == ext.bus) && !unreachable_buses(grid, ext.bus).is_empty()
        {
            return Err(Error::DisconnectedGrid);
        }
    } else if n > 1 {
        return Err(Error::DisconnectedGrid);
    }
    let index = grid.bus_index();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (k, br) in grid.branches.iter().enumerate() {
        if br.r_pu == 0.0 && br.x_pu == 0.0 {
            return Err(Error::SingularBranch { index: k });
        }
        let (Some(&i), Some(&j)) = (index.get(&br.from_bus), index.get(&br.to_bus)) else {
            return Err(Error::Validation(format!("branch {k} references a missing bus")));
        };
        let ys = br.series_admittance();
        let half_charging = Complex64::new(0.0, br.b_shunt_pu / 2.0);
        y[(i, j)] -= ys;
        y[(j, i)] -= ys;
        y[(i, i)] += ys + half_charging;
        y[(j, j)] += ys + half_charging;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus(r: f64, x: f64) -> GridModel {
        GridModel {
            base_mva: 100.0,
            buses: vec![
                Bus { id: 0, base_voltage_kv: 110.0, v_min_pu: 0.95, v_max_pu: 1.05 },
                Bus { id: 1, base_voltage_kv: 110.0, v_min_pu: 0.95, v_max_pu: 1.05 },
            ],
            branches: vec![Branch {
                from_bus: 0,
                to_bus: 1,
                r_pu: r,
                x_pu: x,
                b_shunt_pu: 0.0,
                rating_mva: 100.0,
                kind: BranchKind::Line,
            }],
            loads: vec![Load { bus: 1, p_mw: 10.0, q_mvar: 5.0 }],
            generators: vec![],
            external_grids: vec![ExternalGrid {
                bus: 0,
                q_exchange_max_mvar: 50.0,
                p_exchange_bounds_mw: (-100.0, 100.0),
            }],
        }
    }

    #[test]
    fn single_bus_gives_zero_matrix() {
        let mut grid = two_bus(0.01, 0.1);
        grid.buses.truncate(1);
        grid.branches.clear();
        grid.loads.clear();
        let y = build_admittance_matrix(&grid).unwrap();
        assert_eq!(y.shape(), (1, 1));
        assert_eq!(y[(0, 0)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn two_bus_off_diagonal() {
        let y = build_admittance_matrix(&two_bus(0.01, 0.1)).unwrap();
        // 1/(0.01+0.1j) = (0.01-0.1j)/0.0101
        assert!((y[(0, 1)].re + 0.990_099_009_9).abs() < 1e-9);
        assert!((y[(0, 1)].im - 9.900_990_099).abs() < 1e-9);
        assert_eq!(y[(0, 1)], y[(1, 0)]);
    }

    #[test]
    fn zero_impedance_branch_is_singular() {
        let err = build_admittance_matrix(&two_bus(0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::SingularBranch { index: 0 }));
    }

    #[test]
    fn line_charging_goes_to_diagonal() {
        let mut grid = two_bus(0.01, 0.1);
        grid.branches[0].b_shunt_pu = 0.2;
        let y = build_admittance_matrix(&grid).unwrap();
        let row_sum: Complex64 = (0..2).map(|j| y[(0, j)]).sum();
        assert!((row_sum - Complex64::new(0.0, 0.1)).norm() < 1e-12);
    }

    #[test]
    fn dangling_load_reported() {
        let mut grid = two_bus(0.01, 0.1);
        grid.loads.push(Load { bus: 99, p_mw: 1.0, q_mvar: 0.0 });
        let v = validate_grid(&grid);
        assert_eq!(
            v,
            vec![GridViolation::DanglingReference { element: "load 1".into(), bus: 99 }]
        );
    }

    #[test]
    fn two_external_grids_reported() {
        let mut grid = two_bus(0.01, 0.1);
        let ext = grid.external_grids[0].clone();
        grid.external_grids.push(ext);
        assert_eq!(validate_grid(&grid), vec![GridViolation::MultipleSlack(2)]);
    }

    #[test]
    fn disconnected_bus_reported() {
        let mut grid = two_bus(0.01, 0.1);
        grid.buses.push(Bus { id: 7, base_voltage_kv: 110.0, v_min_pu: 0.95, v_max_pu: 1.05 });
        assert_eq!(
            validate_grid(&grid),
            vec![GridViolation::Disconnected { unreachable: vec![7] }]
        );
        assert!(matches!(build_admittance_matrix(&grid), Err(Error::DisconnectedGrid)));
    }

    #[test]
    fn empty_document_is_parse_error() {
        assert!(matches!(GridModel::from_toml_str(""), Err(Error::Parse(_))));
        assert!(matches!(GridModel::from_toml_str("  \n"), Err(Error::Parse(_))));
    }

    #[test]
    fn inverted_band_is_validation_error() {
        let mut grid = two_bus(0.01, 0.1);
        grid.buses[1].v_min_pu = 1.1;
        let text = grid.to_toml_string();
        assert!(matches!(GridModel::from_toml_str(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn unknown_key_rejected() {
        let text = two_bus(0.01, 0.1).to_toml_string() + "\nfoo = 1\n";
        assert!(matches!(GridModel::from_toml_str(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn duplicate_external_grid_survives_document_round_trip() {
        let mut grid = two_bus(0.01, 0.1);
        let ext = grid.external_grids[0].clone();
        grid.external_grids.push(ext);
        let text = grid.to_toml_string();
        let err = GridModel::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("2 external grids"));
    }
}
