//! AC power flow in polar form.
//!
//! Unknown vector layout: voltage angles (radians) at every PV and PQ bus,
//! followed by voltage magnitudes (pu) at every PQ bus, both in bus order.

mod case;
mod dataset;
mod metrics;

pub use case::{parse_case, Branch, Bus, BusType, Generator, GridCase, IEEE14, IEEE30};
pub use dataset::{
    generate_dataset, read_injections, read_split, write_dataset, DatasetConfig, PfDataset, PfSample, DATASET_FORMAT,
};
pub use metrics::{metrics, PfMetrics, SampleMetrics};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::guidance::{ConstraintPotential, ResidualMap};
use crate::numerics::{norm_inf, Lu, Matrix};

/// Nodal admittance split into conductance and susceptance.
#[derive(Debug, Clone, PartialEq)]
pub struct YBus {
    pub g: Matrix,
    pub b: Matrix,
}

/// Pi-model assembly: series admittance `1/(r + jx)`, half the charging
/// susceptance at each end, off-nominal tap and phase shift on the from side,
/// bus shunts divided by the base power.
pub fn build_ybus(case: &GridCase) -> Result<YBus> {
    let n = case.buses.len();
    let mut y = vec![Complex64::new(0.0, 0.0); n * n];
    for br in &case.branches {
        if br.r == 0.0 && br.x == 0.0 {
            return Err(Error::ZeroImpedanceBranch {
                from: br.from,
                to: br.to,
            });
        }
        let f = case.bus_index(br.from).unwrap();
        let t = case.bus_index(br.to).unwrap();
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let ytt = ys + Complex64::new(0.0, br.b / 2.0);
        let tap = Complex64::from_polar(br.tap, br.shift.to_radians());
        y[f * n + f] += ytt / (br.tap * br.tap);
        y[f * n + t] += -ys / tap.conj();
        y[t * n + f] += -ys / tap;
        y[t * n + t] += ytt;
    }
    for (i, bus) in case.buses.iter().enumerate() {
        y[i * n + i] += Complex64::new(bus.gs, bus.bs) / case.base_mva;
    }
    let g = Matrix::from_vec(n, n, y.iter().map(|v| v.re).collect())?;
    let b = Matrix::from_vec(n, n, y.iter().map(|v| v.im).collect())?;
    Ok(YBus { g, b })
}

/// Bus voltages in polar form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowState {
    pub vm: Vec<f64>,
    /// Radians.
    pub va: Vec<f64>,
}

impl PowerFlowState {
    /// `Vm = 1`, `Va = 0` except set-point magnitudes at slack/PV buses and
    /// the slack reference angle.
    pub fn flat_start(case: &GridCase) -> Self {
        let set = case.voltage_setpoints();
        let mut vm = vec![1.0; case.buses.len()];
        for (i, b) in case.buses.iter().enumerate() {
            if b.kind != BusType::Pq {
                vm[i] = set[i];
            }
        }
        let mut va = vec![0.0; case.buses.len()];
        let s = case.slack_index();
        va[s] = case.buses[s].va.to_radians();
        Self { vm, va }
    }

    /// Voltages stored in the case file.
    pub fn from_case(case: &GridCase) -> Self {
        Self {
            vm: case.buses.iter().map(|b| b.vm).collect(),
            va: case.buses.iter().map(|b| b.va.to_radians()).collect(),
        }
    }

    pub fn unknowns(&self, layout: &Layout) -> Vec<f64> {
        layout
            .pvpq
            .iter()
            .map(|&i| self.va[i])
            .chain(layout.pq.iter().map(|&i| self.vm[i]))
            .collect()
    }

    pub fn set_unknowns(&mut self, layout: &Layout, x: &[f64]) {
        let np = layout.pvpq.len();
        for (k, &i) in layout.pvpq.iter().enumerate() {
            self.va[i] = x[k];
        }
        for (k, &i) in layout.pq.iter().enumerate() {
            self.vm[i] = x[np + k];
        }
    }
}

/// Index sets of the unknown vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub pvpq: Vec<usize>,
    pub pq: Vec<usize>,
}

impl Layout {
    pub fn new(case: &GridCase) -> Self {
        Self {
            pvpq: case.pvpq(),
            pq: case.pq(),
        }
    }

    pub fn len(&self) -> usize {
        self.pvpq.len() + self.pq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Specified net injections in per unit, one entry per bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injections {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Injections {
    pub fn nominal(case: &GridCase) -> Self {
        let (pg, qg) = case.generation();
        Self {
            p: case.buses.iter().zip(&pg).map(|(b, g)| (g - b.pd) / case.base_mva).collect(),
            q: case.buses.iter().zip(&qg).map(|(b, g)| (g - b.qd) / case.base_mva).collect(),
        }
    }

    /// The specified quantities that enter the equations: P at PV+PQ buses,
    /// then Q at PQ buses.
    pub fn to_vector(&self, layout: &Layout) -> Vec<f64> {
        layout
            .pvpq
            .iter()
            .map(|&i| self.p[i])
            .chain(layout.pq.iter().map(|&i| self.q[i]))
            .collect()
    }

    pub fn from_vector(layout: &Layout, n_bus: usize, v: &[f64]) -> Result<Self> {
        ensure_dim("injection vector", layout.len(), v.len())?;
        let mut out = Self {
            p: vec![0.0; n_bus],
            q: vec![0.0; n_bus],
        };
        let np = layout.pvpq.len();
        for (k, &i) in layout.pvpq.iter().enumerate() {
            out.p[i] = v[k];
        }
        for (k, &i) in layout.pq.iter().enumerate() {
            out.q[i] = v[np + k];
        }
        Ok(out)
    }
}

/// Calculated injections `(P_i, Q_i)` for every bus.
pub fn bus_power(ybus: &YBus, state: &PowerFlowState) -> (Vec<f64>, Vec<f64>) {
    let n = state.vm.len();
    let (cos, sin): (Vec<f64>, Vec<f64>) = state.va.iter().map(|a| (a.cos(), a.sin())).unzip();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let (gi, bi) = (ybus.g.row(i), ybus.b.row(i));
        let (mut sp, mut sq) = (0.0, 0.0);
        for j in 0..n {
            if gi[j] == 0.0 && bi[j] == 0.0 {
                continue;
            }
            // cos/sin of (a_i - a_j)
            let c = cos[i] * cos[j] + sin[i] * sin[j];
            let s = sin[i] * cos[j] - cos[i] * sin[j];
            sp += state.vm[j] * (gi[j] * c + bi[j] * s);
            sq += state.vm[j] * (gi[j] * s - bi[j] * c);
        }
        p[i] = state.vm[i] * sp;
        q[i] = state.vm[i] * sq;
    }
    (p, q)
}

/// `sched - calc`: active mismatch at PV+PQ buses, reactive at PQ buses.
pub fn mismatch(layout: &Layout, ybus: &YBus, inj: &Injections, state: &PowerFlowState) -> (Vec<f64>, Vec<f64>) {
    let (p, q) = bus_power(ybus, state);
    (
        layout.pvpq.iter().map(|&i| inj.p[i] - p[i]).collect(),
        layout.pq.iter().map(|&i| inj.q[i] - q[i]).collect(),
    )
}

/// Jacobian of the calculated injections (same rows as the mismatch) with
/// respect to the unknown vector.
pub fn jacobian(layout: &Layout, ybus: &YBus, state: &PowerFlowState) -> Matrix {
    let n = state.vm.len();
    let (p, q) = bus_power(ybus, state);
    let np = layout.pvpq.len();
    let m = layout.len();
    let mut col_of_angle = vec![usize::MAX; n];
    let mut col_of_mag = vec![usize::MAX; n];
    for (k, &i) in layout.pvpq.iter().enumerate() {
        col_of_angle[i] = k;
    }
    for (k, &i) in layout.pq.iter().enumerate() {
        col_of_mag[i] = np + k;
    }
    let mut jac = Matrix::zeros(m, m);
    let rows = layout
        .pvpq
        .iter()
        .map(|&i| (i, true))
        .chain(layout.pq.iter().map(|&i| (i, false)));
    for (r, (i, is_p)) in rows.enumerate() {
        let vi = state.vm[i];
        for j in 0..n {
            let (gij, bij) = (ybus.g[(i, j)], ybus.b[(i, j)]);
            let (ca, cm) = (col_of_angle[j], col_of_mag[j]);
            if i == j {
                let (d_angle, d_mag) = if is_p {
                    (-q[i] - bij * vi * vi, p[i] / vi + gij * vi)
                } else {
                    (p[i] - gij * vi * vi, q[i] / vi - bij * vi)
                };
                if ca != usize::MAX {
                    jac[(r, ca)] = d_angle;
                }
                if cm != usize::MAX {
                    jac[(r, cm)] = d_mag;
                }
                continue;
            }
            if gij == 0.0 && bij == 0.0 {
                continue;
            }
            let th = state.va[i] - state.va[j];
            let (c, s) = (th.cos(), th.sin());
            let vj = state.vm[j];
            let (d_angle, d_mag) = if is_p {
                (vi * vj * (gij * s - bij * c), vi * (gij * c + bij * s))
            } else {
                (-vi * vj * (gij * c + bij * s), vi * (gij * s - bij * c))
            };
            if ca != usize::MAX {
                jac[(r, ca)] = d_angle;
            }
            if cm != usize::MAX {
                jac[(r, cm)] = d_mag;
            }
        }
    }
    jac
}

#[derive(Debug, Clone, PartialEq)]
pub struct NrResult {
    pub state: PowerFlowState,
    pub iterations: usize,
    /// Max-abs mismatch before each update and after the last one.
    pub mismatch_history: Vec<f64>,
}

pub const NR_TOLERANCE: f64 = 1e-8;
pub const NR_MAX_ITER: usize = 50;

/// Newton-Raphson on the polar mismatch equations.
pub fn newton_raphson(
    case: &GridCase,
    ybus: &YBus,
    inj: &Injections,
    x0: &PowerFlowState,
    tol: f64,
    max_iter: usize,
) -> Result<NrResult> {
    let layout = Layout::new(case);
    let mut state = x0.clone();
    let mut history = Vec::new();
    let mut x = state.unknowns(&layout);
    for iteration in 0..=max_iter {
        let (dp, dq) = mismatch(&layout, ybus, inj, &state);
        let f: Vec<f64> = dp.into_iter().chain(dq).collect();
        let err = norm_inf(&f);
        history.push(err);
        if !err.is_finite() {
            break;
        }
        if err < tol {
            return Ok(NrResult {
                state,
                iterations: iteration,
                mismatch_history: history,
            });
        }
        if iteration == max_iter {
            break;
        }
        let jac = jacobian(&layout, ybus, &state);
        let Ok(dx) = Lu::factor(&jac).and_then(|lu| lu.solve(&f)) else { break };
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        state.set_unknowns(&layout, &x);
    }
    Err(Error::NoConvergence {
        iterations: history.len().saturating_sub(1),
        mismatch: *history.last().unwrap_or(&f64::NAN),
    })
}

/// Solve from the flat start with default tolerance.
pub fn solve(case: &GridCase, ybus: &YBus, inj: &Injections) -> Result<NrResult> {
    newton_raphson(case, ybus, inj, &PowerFlowState::flat_start(case), NR_TOLERANCE, NR_MAX_ITER)
}

/// `phi(x) = sum dP^2 + sum dQ^2` over the unknown vector `x`.
#[derive(Debug, Clone)]
pub struct KirchhoffPotential<'a> {
    pub layout: Layout,
    pub ybus: &'a YBus,
    pub injections: Injections,
    /// Supplies the fixed slack angle and PV magnitudes.
    pub base_state: PowerFlowState,
}

impl<'a> KirchhoffPotential<'a> {
    pub fn new(case: &GridCase, ybus: &'a YBus, injections: Injections) -> Self {
        Self {
            layout: Layout::new(case),
            ybus,
            injections,
            base_state: PowerFlowState::flat_start(case),
        }
    }

    pub fn state(&self, x: &[f64]) -> PowerFlowState {
        let mut s = self.base_state.clone();
        s.set_unknowns(&self.layout, x);
        s
    }

    /// `sched - calc` stacked as `[dP; dQ]`.
    pub fn mismatch_vector(&self, x: &[f64]) -> Vec<f64> {
        let (dp, dq) = mismatch(&self.layout, self.ybus, &self.injections, &self.state(x));
        dp.into_iter().chain(dq).collect()
    }
}

impl ConstraintPotential for KirchhoffPotential<'_> {
    fn dim(&self) -> usize {
        self.layout.len()
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let state = self.state(x);
        let f = self.mismatch_vector(x);
        let jac = jacobian(&self.layout, self.ybus, &state);
        // d(sched - calc)/dx = -J
        let grad = jac.tr_mul_vec(&f).into_iter().map(|v| -2.0 * v).collect();
        (f.iter().map(|v| v * v).sum(), grad)
    }
}

impl ResidualMap for KirchhoffPotential<'_> {
    /// `calc - sched`, whose Jacobian is `J`.
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.mismatch_vector(x).into_iter().map(|v| -v).collect()
    }

    fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        Ok(jacobian(&self.layout, self.ybus, &self.state(x)))
    }
}
