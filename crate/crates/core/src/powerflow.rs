//! Newton-Raphson AC power flow in polar coordinates.
//!
//! The external-grid bus is the slack at 1.0∠0; every other bus is PQ,
//! generators included (their setpoints are actions, no voltage control).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_admittance_matrix, GridModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub tolerance_pu: f64,
    pub max_iterations: usize,
    pub flat_start: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tolerance_pu: 1e-8,
            max_iterations: 30,
            flat_start: true,
        }
    }
}

/// Net injection per bus in MW/Mvar (generation positive), in `grid.buses` order.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSet {
    pub p_mw: Vec<f64>,
    pub q_mvar: Vec<f64>,
}

impl InjectionSet {
    pub fn zeros(n_buses: usize) -> Self {
        Self {
            p_mw: vec![0.0; n_buses],
            q_mvar: vec![0.0; n_buses],
        }
    }

    /// Sums the current unit setpoints of `grid` onto their buses.
    pub fn from_grid(grid: &GridModel) -> Self {
        let index = grid.bus_index();
        let mut inj = Self::zeros(grid.buses.len());
        for g in &grid.generators {
            let i = index[&g.bus];
            inj.p_mw[i] += g.p_mw;
            inj.q_mvar[i] += g.q_mvar;
        }
        for l in &grid.loads {
            let i = index[&l.bus];
            inj.p_mw[i] -= l.p_mw;
            inj.q_mvar[i] -= l.q_mvar;
        }
        inj
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchFlow {
    pub s_from_mva: Complex64,
    pub s_to_mva: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowResult {
    pub vm_pu: Vec<f64>,
    pub va_rad: Vec<f64>,
    pub branch_flows: Vec<BranchFlow>,
    pub loading_percent: Vec<f64>,
    pub total_losses_mw: f64,
    /// Import from the external grid (positive into the network).
    pub ext_p_mw: f64,
    pub ext_q_mvar: f64,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch_pu: f64,
}

impl PowerFlowResult {
    pub fn branch_loading(&self, branch: usize) -> Result<f64> {
        if !self.converged {
            return Err(Error::NotConverged);
        }
        Ok(self.loading_percent[branch])
    }

    pub fn total_losses(&self) -> Result<f64> {
        if !self.converged {
            return Err(Error::NotConverged);
        }
        Ok(self.total_losses_mw)
    }

    pub fn voltages(&self) -> Vec<Complex64> {
        self.vm_pu
            .iter()
            .zip(&self.va_rad)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    }
}

/// Loading of one branch in percent of its rating.
pub fn branch_loading_percent(flow: &BranchFlow, rating_mva: f64) -> f64 {
    100.0 * flow.s_from_mva.norm().max(flow.s_to_mva.norm()) / rating_mva
}

/// Power-flow solver bound to one grid topology. The admittance matrix is
/// built once; unit setpoints arrive through [`InjectionSet`].
#[derive(Debug, Clone)]
pub struct PowerFlowSolver {
    ybus: DMatrix<Complex64>,
    base_mva: f64,
    slack: usize,
    pq: Vec<usize>,
    branch_ends: Vec<(usize, usize)>,
    branch_y: Vec<(Complex64, Complex64)>,
    ratings: Vec<f64>,
    pub settings: SolverSettings,
}

impl PowerFlowSolver {
    pub fn new(grid: &GridModel, settings: SolverSettings) -> Result<Self> {
        if !(settings.tolerance_pu > 0.0) || settings.max_iterations == 0 {
            return Err(Error::Config(
                "solver needs tolerance_pu > 0 and max_iterations >= 1".into(),
            ));
        }
        let ybus = build_admittance_matrix(grid)?;
        let slack = grid.slack_index();
        let index = grid.bus_index();
        let pq = (0..grid.buses.len()).filter(|&i| i != slack).collect();
        let branch_ends = grid
            .branches
            .iter()
            .map(|b| (index[&b.from_bus], index[&b.to_bus]))
            .collect();
        let branch_y = grid
            .branches
            .iter()
            .map(|b| (b.series_admittance(), Complex64::new(0.0, b.b_shunt_pu / 2.0)))
            .collect();
        let ratings = grid.branches.iter().map(|b| b.rating_mva).collect();
        Ok(Self {
            ybus,
            base_mva: grid.base_mva,
            slack,
            pq,
            branch_ends,
            branch_y,
            ratings,
            settings,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.ybus.nrows()
    }

    fn calc_injection(&self, v: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = v.len();
        let mut current = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n {
                acc += self.ybus[(i, j)] * v[j];
            }
            current[i] = acc;
        }
        let s = v.iter().zip(&current).map(|(vi, ii)| vi * ii.conj()).collect();
        (s, current)
    }

    pub fn solve(&self, injections: &InjectionSet) -> Result<PowerFlowResult> {
        let n = self.n_buses();
        if injections.p_mw.len() != n || injections.q_mvar.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: injections.p_mw.len(),
            });
        }
        let spec: Vec<Complex64> = injections
            .p_mw
            .iter()
            .zip(&injections.q_mvar)
            .map(|(p, q)| Complex64::new(*p, *q) / self.base_mva)
            .collect();

        let mut vm = vec![1.0; n];
        let mut va = vec![0.0; n];
        let npq = self.pq.len();
        let mut iterations = 0;
        let mut converged = false;
        let mut max_mismatch;

        loop {
            let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(vm[i], va[i])).collect();
            let (s_calc, current) = self.calc_injection(&v);
            let mut f = DVector::zeros(2 * npq);
            for (k, &i) in self.pq.iter().enumerate() {
                let d = s_calc[i] - spec[i];
                f[k] = d.re;
                f[npq + k] = d.im;
            }
            max_mismatch = f.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            if !max_mismatch.is_finite() {
                break;
            }
            if max_mismatch <= self.settings.tolerance_pu {
                converged = true;
                break;
            }
            if iterations >= self.settings.max_iterations {
                break;
            }

            // dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
            // dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
            let mut jac = DMatrix::zeros(2 * npq, 2 * npq);
            for (r, &i) in self.pq.iter().enumerate() {
                for (c, &j) in self.pq.iter().enumerate() {
                    let y = self.ybus[(i, j)];
                    let vn = v[j] / vm[j];
                    let mut ds_da = -(y * v[j]).conj();
                    let mut ds_dm = v[i] * (y * vn).conj();
                    if i == j {
                        ds_da += current[i].conj();
                        ds_dm += current[i].conj() * vn;
                    }
                    let ds_da = Complex64::new(0.0, 1.0) * v[i] * ds_da;
                    jac[(r, c)] = ds_da.re;
                    jac[(r, npq + c)] = ds_dm.re;
                    jac[(npq + r, c)] = ds_da.im;
                    jac[(npq + r, npq + c)] = ds_dm.im;
                }
            }
            let Some(dx) = jac.lu().solve(&(-f)) else {
                return Err(Error::Numerical { iteration: iterations });
            };
            iterations += 1;
            for (k, &i) in self.pq.iter().enumerate() {
                va[i] += dx[k];
                vm[i] += dx[npq + k];
            }
            if vm.iter().any(|m| !m.is_finite() || *m < 0.05 || *m > 5.0) {
                break;
            }
        }

        Ok(self.assemble(injections, vm, va, converged, iterations, max_mismatch))
    }

    fn assemble(
        &self,
        injections: &InjectionSet,
        vm: Vec<f64>,
        va: Vec<f64>,
        converged: bool,
        iterations: usize,
        max_mismatch_pu: f64,
    ) -> PowerFlowResult {
        let v: Vec<Complex64> = vm
            .iter()
            .zip(&va)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect();
        let mut branch_flows = Vec::with_capacity(self.branch_ends.len());
        let mut loading_percent = Vec::with_capacity(self.branch_ends.len());
        let mut losses = 0.0;
        for (k, &(f, t)) in self.branch_ends.iter().enumerate() {
            let (ys, ysh) = self.branch_y[k];
            let i_from = (v[f] - v[t]) * ys + v[f] * ysh;
            let i_to = (v[t] - v[f]) * ys + v[t] * ysh;
            let flow = BranchFlow {
                s_from_mva: v[f] * i_from.conj() * self.base_mva,
                s_to_mva: v[t] * i_to.conj() * self.base_mva,
            };
            losses += flow.s_from_mva.re + flow.s_to_mva.re;
            loading_percent.push(branch_loading_percent(&flow, self.ratings[k]));
            branch_flows.push(flow);
        }
        let (s_calc, _) = self.calc_injection(&v);
        let slack_s = s_calc[self.slack] * self.base_mva;
        PowerFlowResult {
            vm_pu: vm,
            va_rad: va,
            branch_flows,
            loading_percent,
            total_losses_mw: losses,
            ext_p_mw: slack_s.re - injections.p_mw[self.slack],
            ext_q_mvar: slack_s.im - injections.q_mvar[self.slack],
            converged,
            iterations,
            max_mismatch_pu,
        }
    }

    /// Largest per-bus power mismatch of `result` recomputed from scratch,
    /// slack excluded.
    pub fn mismatch(&self, injections: &InjectionSet, result: &PowerFlowResult) -> f64 {
        let v = result.voltages();
        let (s_calc, _) = self.calc_injection(&v);
        self.pq
            .iter()
            .map(|&i| {
                let spec = Complex64::new(injections.p_mw[i], injections.q_mvar[i]) / self.base_mva;
                let d = s_calc[i] - spec;
                d.re.abs().max(d.im.abs())
            })
            .fold(0.0, f64::max)
    }
}

pub fn solve_power_flow(
    grid: &GridModel,
    injections: &InjectionSet,
    settings: SolverSettings,
) -> Result<PowerFlowResult> {
    PowerFlowSolver::new(grid, settings)?.solve(injections)
}
