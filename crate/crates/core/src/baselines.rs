//! Plain optimizers for the two-dimensional landscape comparison.

use serde::{Deserialize, Serialize};

use crate::diffusion::EpsModel;
use crate::error::{ensure_dim, Error, Result};
use crate::guidance::{refine, ConstraintPotential, RefineConfig};
use crate::numerics::{finite_diff_jacobian, norm2, symmetric_eigenvalues, Lu, Matrix};
use crate::potentials::{locate_stationary_points, MullerBrownPotential, StationaryKind, StationaryPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIterations,
    NonFinite,
    SingularHessian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub x: Vec<f64>,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub x: Vec<f64>,
    pub status: Status,
    pub iterations: usize,
    pub points: Vec<TracePoint>,
    /// Step halvings forced by an increase in phi.
    pub backtracks: usize,
    /// Terminal Hessian indefinite (Newton only).
    pub saddle: Option<bool>,
}

/// `x <- x - step * grad`, halving the step for an iteration whenever phi
/// would increase. Stops once `|grad| < tol`.
pub fn gradient_descent(pot: &dyn ConstraintPotential, x0: &[f64], step: f64, iters: usize, tol: f64) -> Result<Trace> {
    ensure_dim("start point", pot.dim(), x0.len())?;
    if !(step >= 0.0) {
        return Err(Error::InvalidConfig("step must be non-negative".into()));
    }
    let mut x = x0.to_vec();
    let (mut phi, mut grad) = pot.value_and_gradient(&x);
    let mut points = vec![TracePoint { x: x.clone(), phi }];
    let mut backtracks = 0;
    let mut status = Status::MaxIterations;
    let mut k = 0;
    while k < iters {
        if !phi.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            status = Status::NonFinite;
            break;
        }
        if norm2(&grad) < tol || step == 0.0 {
            status = Status::Converged;
            break;
        }
        let mut h = step;
        let mut next;
        let mut halvings = 0;
        loop {
            next = x.iter().zip(&grad).map(|(a, g)| a - h * g).collect::<Vec<_>>();
            let v = pot.value(&next);
            if v <= phi || halvings >= 60 {
                break;
            }
            h *= 0.5;
            halvings += 1;
        }
        backtracks += halvings;
        x = next;
        (phi, grad) = pot.value_and_gradient(&x);
        points.push(TracePoint { x: x.clone(), phi });
        k += 1;
    }
    Ok(Trace {
        x,
        status,
        iterations: k,
        points,
        backtracks,
        saddle: None,
    })
}

/// Central differences of the analytic gradient, symmetrized.
pub fn fd_hessian(pot: &dyn ConstraintPotential, x: &[f64]) -> Result<Matrix> {
    let h = finite_diff_jacobian(|p| pot.gradient(p), x, Some(1e-4))?;
    let n = x.len();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = 0.5 * (h[(i, j)] + h[(j, i)]);
        }
    }
    Ok(s)
}

/// `x <- x - H^{-1} grad` with a finite-difference Hessian. Does not tell
/// minima from saddles; the terminal Hessian's signature is reported.
pub fn newton_raphson_scalar(pot: &dyn ConstraintPotential, x0: &[f64], iters: usize, tol: f64) -> Result<Trace> {
    ensure_dim("start point", pot.dim(), x0.len())?;
    let mut x = x0.to_vec();
    let (mut phi, mut grad) = pot.value_and_gradient(&x);
    let mut points = vec![TracePoint { x: x.clone(), phi }];
    let mut status = Status::MaxIterations;
    let mut k = 0;
    while k < iters {
        if !phi.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            status = Status::NonFinite;
            break;
        }
        if norm2(&grad) < tol {
            status = Status::Converged;
            break;
        }
        let hess = fd_hessian(pot, &x)?;
        let step = Lu::factor(&hess)
            .and_then(|lu| lu.solve(&grad))
            .map_err(|e| match e {
                Error::SingularMatrix { pivot, .. } => Error::SingularHessian { pivot },
                other => other,
            })?;
        for (a, s) in x.iter_mut().zip(&step) {
            *a -= s;
        }
        (phi, grad) = pot.value_and_gradient(&x);
        points.push(TracePoint { x: x.clone(), phi });
        k += 1;
    }
    let saddle = if status == Status::Converged {
        let eig = symmetric_eigenvalues(&fd_hessian(pot, &x)?);
        Some(eig.first().is_some_and(|v| *v < 0.0) && eig.last().is_some_and(|v| *v > 0.0))
    } else {
        None
    };
    Ok(Trace {
        x,
        status,
        iterations: k,
        points,
        backtracks: 0,
        saddle,
    })
}

/// Labels for the landscape's stationary points: minima by increasing value
/// (`global`, `local-1`, `local-2`, ...), saddles as `saddle`.
pub fn landmark_labels(points: &[StationaryPoint]) -> Vec<(String, [f64; 2])> {
    let mut out = Vec::new();
    let mut minima = 0;
    for p in points {
        let label = match p.kind {
            StationaryKind::Minimum => {
                minima += 1;
                if minima == 1 {
                    "global".to_string()
                } else {
                    format!("local-{}", minima - 1)
                }
            }
            StationaryKind::Saddle => "saddle".to_string(),
            StationaryKind::Maximum => "maximum".to_string(),
        };
        out.push((label, p.location));
    }
    out
}

pub const BASIN_RADIUS: f64 = 0.2;

/// Nearest landmark within [`BASIN_RADIUS`], else `diverged`.
pub fn basin_label(landmarks: &[(String, [f64; 2])], x: &[f64]) -> String {
    landmarks
        .iter()
        .map(|(l, p)| (l, (p[0] - x[0]).hypot(p[1] - x[1])))
        .filter(|(_, d)| *d <= BASIN_RADIUS)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(l, _)| l.clone())
        .unwrap_or_else(|| "diverged".into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gd,
    Nr,
    Cardiff,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gd => "gd",
            Method::Nr => "nr",
            Method::Cardiff => "cardiff",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparisonConfig {
    pub gd_step: f64,
    pub gd_iters: usize,
    pub nr_iters: usize,
    pub tol: f64,
    pub refine: RefineConfig,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            gd_step: 1e-4,
            gd_iters: 100_000,
            nr_iters: 100,
            tol: 1e-6,
            refine: RefineConfig {
                steps: 100,
                lambda: 1.0,
                ..RefineConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOutcome {
    pub start: [f64; 2],
    pub method: Method,
    pub terminal: [f64; 2],
    pub phi: f64,
    pub basin: String,
    pub status: Status,
    pub saddle: Option<bool>,
    pub iterations: usize,
    pub trajectory: Vec<TracePoint>,
}

impl ComparisonOutcome {
    /// Distance from the terminal point to `p`.
    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        (self.terminal[0] - p[0]).hypot(self.terminal[1] - p[1])
    }
}

/// Runs each method from each start. `prior` is required for the guided
/// refinement entry, which treats the start as the chain's initial sample.
pub fn trajectory_comparison(
    pot: &MullerBrownPotential,
    starts: &[[f64; 2]],
    methods: &[Method],
    cfg: &ComparisonConfig,
    prior: Option<&EpsModel>,
) -> Result<Vec<ComparisonOutcome>> {
    let landmarks = landmark_labels(&locate_stationary_points(&pot.params));
    let mut out = Vec::new();
    for start in starts {
        for &method in methods {
            let (x, status, saddle, iterations, trajectory) = match method {
                Method::Gd => {
                    let t = gradient_descent(pot, start, cfg.gd_step, cfg.gd_iters, cfg.tol)?;
                    (t.x, t.status, None, t.iterations, t.points)
                }
                Method::Nr => match newton_raphson_scalar(pot, start, cfg.nr_iters, cfg.tol) {
                    Ok(t) => (t.x, t.status, t.saddle, t.iterations, t.points),
                    Err(Error::SingularHessian { .. }) => {
                        (start.to_vec(), Status::SingularHessian, None, 0, Vec::new())
                    }
                    Err(e) => return Err(e),
                },
                Method::Cardiff => {
                    let prior =
                        prior.ok_or_else(|| Error::InvalidConfig("guided refinement needs a noise model".into()))?;
                    let r = refine(start, pot, prior, &prior.data_norm, None, &cfg.refine)?;
                    let mut points = vec![TracePoint {
                        x: start.to_vec(),
                        phi: pot.value(start),
                    }];
                    for s in &r.trajectory.steps {
                        let z: Vec<f64> = match &s.delta {
                            Some(d) => s.x_prime.iter().zip(d).map(|(a, b)| a + s.gamma * b).collect(),
                            None => s.x_prime.clone(),
                        };
                        let x = prior.data_norm.denormalize(&z);
                        points.push(TracePoint { phi: pot.value(&x), x });
                    }
                    let n = r.trajectory.steps.len();
                    (r.x, Status::Converged, None, n, points)
                }
            };
            let phi = pot.value(&x);
            let basin = if x.iter().all(|v| v.is_finite()) {
                basin_label(&landmarks, &x)
            } else {
                "diverged".into()
            };
            out.push(ComparisonOutcome {
                start: *start,
                method,
                terminal: [x[0], x[1]],
                phi,
                basin,
                status,
                saddle,
                iterations,
                trajectory,
            });
        }
    }
    Ok(out)
}

/// Tab-separated outcome table.
pub fn outcome_table(outcomes: &[ComparisonOutcome]) -> String {
    let mut s = String::from("start_x\tstart_y\tmethod\tend_x\tend_y\tphi\tbasin\tstatus\tsaddle\titerations\n");
    for o in outcomes {
        s.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6e}\t{}\t{}\t{}\t{}\n",
            o.start[0],
            o.start[1],
            o.method.name(),
            o.terminal[0],
            o.terminal[1],
            o.phi,
            o.basin,
            serde_json::to_value(o.status).map(|v| v.as_str().unwrap_or("").to_string()).unwrap_or_default(),
            o.saddle.map(|b| b.to_string()).unwrap_or_else(|| "-".into()),
            o.iterations
        ));
    }
    s
}
