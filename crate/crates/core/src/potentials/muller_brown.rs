use serde::{Deserialize, Serialize};

use crate::guidance::ConstraintPotential;
use crate::numerics::{finite_diff_jacobian, solve_linear, symmetric_eigenvalues, Matrix};

/// Exponents are clamped to this magnitude before `exp`.
pub const EXPONENT_CLAMP: f64 = 500.0;

/// Box `[-1.8, 1.2] x [-0.5, 2.2]` holding all stationary points of interest.
pub const WORKING_BOX: ([f64; 2], [f64; 2]) = ([-1.8, -0.5], [1.2, 2.2]);

/// Four-term Gaussian-like landscape
/// `V(x, y) = sum_i A_i exp(a_i (x - x_i)^2 + b_i (x - x_i)(y - y_i) + c_i (y - y_i)^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MullerBrownParams {
    pub amplitude: [f64; 4],
    pub a: [f64; 4],
    pub b: [f64; 4],
    pub c: [f64; 4],
    pub x0: [f64; 4],
    pub y0: [f64; 4],
}

impl Default for MullerBrownParams {
    fn default() -> Self {
        Self {
            amplitude: [-200.0, -100.0, -170.0, 15.0],
            a: [-1.0, -1.0, -6.5, 0.7],
            b: [0.0, 0.0, 11.0, 0.6],
            c: [-10.0, -10.0, -6.5, 0.7],
            x0: [1.0, 0.0, -0.5, -1.0],
            y0: [0.0, 0.5, 1.5, 1.0],
        }
    }
}

impl MullerBrownParams {
    fn exponent(&self, i: usize, p: &[f64]) -> (f64, f64, f64) {
        let dx = p[0] - self.x0[i];
        let dy = p[1] - self.y0[i];
        (self.a[i] * dx * dx + self.b[i] * dx * dy + self.c[i] * dy * dy, dx, dy)
    }

    /// Value and whether any exponent hit the clamp.
    pub fn eval_checked(&self, p: &[f64]) -> (f64, bool) {
        let mut clamped = false;
        let v = (0..4)
            .map(|i| {
                let (e, _, _) = self.exponent(i, p);
                clamped |= e.abs() > EXPONENT_CLAMP;
                self.amplitude[i] * e.clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP).exp()
            })
            .sum();
        (v, clamped)
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        self.eval_checked(p).0
    }

    pub fn gradient(&self, p: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for i in 0..4 {
            let (e, dx, dy) = self.exponent(i, p);
            if e.abs() > EXPONENT_CLAMP {
                continue;
            }
            let w = self.amplitude[i] * e.exp();
            g[0] += w * (2.0 * self.a[i] * dx + self.b[i] * dy);
            g[1] += w * (self.b[i] * dx + 2.0 * self.c[i] * dy);
        }
        g
    }

    /// Central differences of the analytic gradient.
    pub fn hessian(&self, p: &[f64]) -> Matrix {
        let h = finite_diff_jacobian(|q| self.gradient(q).to_vec(), p, Some(1e-4))
            .expect("gradient is finite on clamped exponents");
        // symmetrize
        let off = 0.5 * (h[(0, 1)] + h[(1, 0)]);
        Matrix::from_rows(&[vec![h[(0, 0)], off], vec![off, h[(1, 1)]]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationaryKind {
    Minimum,
    Saddle,
    Maximum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPoint {
    pub kind: StationaryKind,
    pub location: [f64; 2],
    pub value: f64,
}

/// Stationary points inside the working box, sorted by value.
///
/// Newton iterations on the gradient are started from a grid over the box;
/// converged points are deduplicated and classified by Hessian eigenvalue signs.
pub fn locate_stationary_points(params: &MullerBrownParams) -> Vec<StationaryPoint> {
    let (lo, hi) = WORKING_BOX;
    let n = 40;
    let mut found: Vec<StationaryPoint> = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            let mut p = [
                lo[0] + (hi[0] - lo[0]) * i as f64 / n as f64,
                lo[1] + (hi[1] - lo[1]) * j as f64 / n as f64,
            ];
            let mut converged = false;
            for _ in 0..60 {
                let g = params.gradient(&p);
                if g[0].hypot(g[1]) < 1e-10 {
                    converged = true;
                    break;
                }
                let Ok(step) = solve_linear(&params.hessian(&p), &g) else { break };
                p[0] -= step[0];
                p[1] -= step[1];
                if !(p[0].is_finite() && p[1].is_finite()) || p[0].abs() > 10.0 || p[1].abs() > 10.0 {
                    break;
                }
            }
            let inside = (0..2).all(|k| p[k] >= lo[k] && p[k] <= hi[k]);
            if !converged || !inside {
                continue;
            }
            if found.iter().any(|s| (s.location[0] - p[0]).hypot(s.location[1] - p[1]) < 1e-4) {
                continue;
            }
            let eig = symmetric_eigenvalues(&params.hessian(&p));
            let kind = if eig[0] > 0.0 {
                StationaryKind::Minimum
            } else if eig[1] < 0.0 {
                StationaryKind::Maximum
            } else {
                StationaryKind::Saddle
            };
            found.push(StationaryPoint {
                kind,
                location: p,
                value: params.eval(&p),
            });
        }
    }
    found.sort_by(|a, b| a.value.total_cmp(&b.value));
    found
}

/// `phi = max(0, V - v_min)`; zero exactly on the global-minimum neighborhood
/// where `V <= v_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct MullerBrownPotential {
    pub params: MullerBrownParams,
    pub v_min: f64,
}

impl MullerBrownPotential {
    pub fn new(params: MullerBrownParams, v_min: f64) -> Self {
        Self { params, v_min }
    }

    /// Canonical landscape shifted by its located global minimum value.
    pub fn canonical() -> Self {
        let params = MullerBrownParams::default();
        let v_min = locate_stationary_points(&params)
            .iter()
            .find(|s| s.kind == StationaryKind::Minimum)
            .map(|s| s.value)
            .expect("landscape has a minimum");
        Self { params, v_min }
    }
}

impl ConstraintPotential for MullerBrownPotential {
    fn dim(&self) -> usize {
        2
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let v = self.params.eval(x) - self.v_min;
        if v > 0.0 {
            (v, self.params.gradient(x).to_vec())
        } else {
            (0.0, vec![0.0, 0.0])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn landmark_structure() {
        let pts = locate_stationary_points(&MullerBrownParams::default());
        let minima: Vec<_> = pts.iter().filter(|s| s.kind == StationaryKind::Minimum).collect();
        let saddles: Vec<_> = pts.iter().filter(|s| s.kind == StationaryKind::Saddle).collect();
        assert_eq!(minima.len(), 3);
        assert_eq!(saddles.len(), 2);
        let g = minima[0];
        assert!((g.value + 146.7).abs() < 0.5);
        assert!((g.location[0] + 0.558).abs() < 0.01 && (g.location[1] - 1.442).abs() < 0.01);
    }

    #[test]
    fn zero_cross_term_components_are_symmetric_in_y() {
        let p = MullerBrownParams {
            amplitude: [-200.0, -100.0, 0.0, 0.0],
            ..MullerBrownParams::default()
        };
        // First term centered at y = 0, second at y = 0.5; both b = 0.
        let single = |k: usize, q: [f64; 2]| {
            let mut amp = [0.0; 4];
            amp[k] = p.amplitude[k];
            MullerBrownParams { amplitude: amp, ..p.clone() }.eval(&q)
        };
        assert_eq!(single(0, [0.3, 0.2]), single(0, [0.3, -0.2]));
        assert_eq!(single(1, [0.3, 0.5 + 0.17]), single(1, [0.3, 0.5 - 0.17]));
    }

    #[test]
    fn clamp_flag_far_away() {
        let (v, clamped) = MullerBrownParams::default().eval_checked(&[50.0, 50.0]);
        assert!(clamped && v.is_finite());
        let (_, clamped) = MullerBrownParams::default().eval_checked(&[0.0, 0.0]);
        assert!(!clamped);
    }

    #[test]
    fn wrapped_potential_values() {
        let pot = MullerBrownPotential::canonical();
        let pts = locate_stationary_points(&pot.params);
        assert!(pot.value(&pts[0].location) < 0.5);
        assert!(pot.value(&[5.0, 5.0]) >= 0.0);
    }
}
