//! Constraint-guided reverse steps.
//!
//! Each reverse step runs a plain DDIM update to `x'`, then moves along the
//! unit descent direction `delta = -grad(phi)/|grad(phi)|` by
//!
//! ```text
//! gamma = (<r, delta> + lambda * phi * |grad phi|) / (1 + lambda * |grad phi|^2),   r = x0_hat - x'
//! ```
//!
//! which minimizes `|x0_hat - (x' + gamma delta)|^2 + lambda * (phi - gamma |grad phi|)^2`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diffusion::{ddim_from_x0, estimate_x0, forward_noise, timesteps, DdimMode, NoisePredictor};
use crate::error::{ensure_dim, Error, Result};
use crate::nn::Normalizer;
use crate::numerics::{dot, finite_diff_jacobian, least_squares_min_norm, norm2, Matrix, Rng};

/// Non-negative violation measure whose zero set is the feasible manifold.
pub trait ConstraintPotential: Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64 {
        self.value_and_gradient(x).0
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.value_and_gradient(x).1
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>);
}

impl<P: ConstraintPotential + ?Sized> ConstraintPotential for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (**self).value_and_gradient(x)
    }
}

/// `phi = 0` everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ZeroPotential(pub usize);

impl ConstraintPotential for ZeroPotential {
    fn dim(&self) -> usize {
        self.0
    }
    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (0.0, vec![0.0; x.len()])
    }
}

/// Evaluates a physical-space potential at `denormalize(z)`, with the
/// gradient carried back to normalized coordinates.
pub struct NormalizedPotential<'a, P: ?Sized> {
    pub inner: &'a P,
    pub norm: &'a Normalizer,
}

impl<P: ConstraintPotential + ?Sized> ConstraintPotential for NormalizedPotential<'_, P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value_and_gradient(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let (v, g) = self.inner.value_and_gradient(&self.norm.denormalize(z));
        (v, self.norm.grad_to_normalized(&g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaClip {
    None,
    Fixed { max: f64 },
    /// `factor` times the running median of `|x' - x_t|` within the chain.
    Auto { factor: f64 },
}

/// How the base prediction enters the reverse chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    /// Used as `x_{start_step}` as is.
    Clean,
    /// Forward-noised to `start_step` with a seeded draw first.
    Noised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Reverse steps `tau`; 0 returns the input unchanged.
    pub steps: usize,
    /// Chain index at which the prediction is injected; `None` means `T`.
    pub start_step: Option<usize>,
    pub lambda: f64,
    pub gamma_clip: GammaClip,
    pub grad_floor: f64,
    pub mode: DdimMode,
    pub eta: f64,
    pub injection: Injection,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            start_step: None,
            lambda: 0.0,
            gamma_clip: GammaClip::Auto { factor: 10.0 },
            grad_floor: 1e-10,
            mode: DdimMode::Standard,
            eta: 0.0,
            injection: Injection::Clean,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self, total_steps: usize) -> Result<usize> {
        let start = self.start_step.unwrap_or(total_steps);
        if start > total_steps || (self.steps > 0 && self.steps > start) {
            return Err(Error::InvalidConfig(format!(
                "need steps <= start_step <= T, got {} / {start} / {total_steps}",
                self.steps
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig("lambda must be non-negative".into()));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::InvalidConfig("eta must be non-negative".into()));
        }
        Ok(start)
    }
}

/// One executed reverse step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub t_prev: usize,
    /// Unguided DDIM output `x'`.
    pub x_prime: Vec<f64>,
    pub x0_hat: Vec<f64>,
    pub delta: Option<Vec<f64>>,
    pub gamma: f64,
    pub gamma_unclipped: f64,
    pub clipped: bool,
    pub cos_theta: f64,
    pub d: f64,
    /// Potential and gradient norm at `x'`.
    pub phi: f64,
    pub grad_norm: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub steps: Vec<StepRecord>,
}

#[derive(Serialize)]
struct StepLine {
    t: usize,
    phi: f64,
    gamma: f64,
    cos_theta: f64,
    d: f64,
}

impl TrajectoryRecord {
    pub fn clip_events(&self) -> usize {
        self.steps.iter().filter(|s| s.clipped).count()
    }

    /// One JSON object per step: `{"t", "phi", "gamma", "cos_theta", "d"}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.steps {
            let line = StepLine {
                t: s.t,
                phi: s.phi,
                gamma: s.gamma,
                cos_theta: s.cos_theta,
                d: s.d,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Unit vector against the gradient, or `None` below the floor.
pub fn descent_direction(grad: &[f64], grad_floor: f64) -> Result<Option<Vec<f64>>> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    let n = norm2(grad);
    if n < grad_floor {
        return Ok(None);
    }
    Ok(Some(grad.iter().map(|g| -g / n).collect()))
}

/// Closed-form minimizer of the proximal step objective.
pub fn compute_gamma(r: &[f64], delta: &[f64], phi: f64, grad_norm: f64, lambda: f64) -> f64 {
    (dot(r, delta) + lambda * phi * grad_norm) / (1.0 + lambda * grad_norm * grad_norm)
}

/// Clips `gamma` to `[-max, max]`; the flag reports whether it fired.
pub fn clip_gamma(gamma: f64, max: Option<f64>) -> (f64, bool) {
    match max {
        Some(m) if gamma.abs() > m => (m.copysign(gamma), true),
        _ => (gamma, false),
    }
}

/// Running state of one guided chain.
#[derive(Debug, Clone, Default)]
pub struct ChainState {
    step_norms: Vec<f64>,
}

impl ChainState {
    fn clip_limit(&mut self, clip: GammaClip, step_norm: f64) -> Option<f64> {
        self.step_norms.push(step_norm);
        match clip {
            GammaClip::None => None,
            GammaClip::Fixed { max } => Some(max),
            GammaClip::Auto { factor } => {
                let mut v = self.step_norms.clone();
                v.sort_by(f64::total_cmp);
                let n = v.len();
                let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
                Some(factor * median)
            }
        }
    }
}

/// One guided reverse step `t -> t_prev` in the chain's coordinates.
#[allow(clippy::too_many_arguments)]
pub fn guided_step(
    x_t: &[f64],
    t: usize,
    t_prev: usize,
    model: &dyn NoisePredictor,
    pot: &dyn ConstraintPotential,
    cond: Option<&[f64]>,
    cfg: &RefineConfig,
    state: &mut ChainState,
    rng: Option<&mut Rng>,
) -> Result<(Vec<f64>, StepRecord)> {
    let schedule = model.schedule();
    let eps = model.predict(x_t, t, cond)?;
    let x0_hat = estimate_x0(x_t, t, &eps, schedule)?;
    let x_prime = ddim_from_x0(&x0_hat, t, t_prev, &eps, schedule, cfg.eta, cfg.mode, rng)?;
    let r: Vec<f64> = x0_hat.iter().zip(&x_prime).map(|(a, b)| a - b).collect();
    let step_norm = x_prime.iter().zip(x_t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let limit = state.clip_limit(cfg.gamma_clip, step_norm);

    let (phi, grad) = pot.value_and_gradient(&x_prime);
    let grad_norm = norm2(&grad);
    let delta = descent_direction(&grad, cfg.grad_floor)?;
    let d = norm2(&r);
    let (mut gamma, mut gamma_unclipped, mut clipped, mut cos_theta) = (0.0, 0.0, false, 0.0);
    let mut x = x_prime.clone();
    if let Some(delta) = &delta {
        let proj = dot(&r, delta);
        cos_theta = if d > 0.0 { proj / d } else { 0.0 };
        gamma_unclipped = compute_gamma(&r, delta, phi, grad_norm, cfg.lambda);
        (gamma, clipped) = clip_gamma(gamma_unclipped, limit);
        for (xi, di) in x.iter_mut().zip(delta) {
            *xi += gamma * di;
        }
    }
    let record = StepRecord {
        t,
        t_prev,
        x_prime,
        x0_hat,
        delta,
        gamma,
        gamma_unclipped,
        clipped,
        cos_theta,
        d,
        phi,
        grad_norm,
        step_norm,
    };
    Ok((x, record))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    /// Refined point in physical units.
    pub x: Vec<f64>,
    pub trajectory: TrajectoryRecord,
}

/// Refines a physical-space prediction.
///
/// The prediction is normalized with `norm`, injected at `start_step`, run
/// through `steps` guided reverse steps down to 0 and denormalized. `pot`
/// is evaluated in physical units.
pub fn refine(
    x_init: &[f64],
    pot: &dyn ConstraintPotential,
    model: &dyn NoisePredictor,
    norm: &Normalizer,
    cond: Option<&[f64]>,
    cfg: &RefineConfig,
) -> Result<Refinement> {
    ensure_dim("prediction", model.dim(), x_init.len())?;
    let start = cfg.validate(model.schedule().steps())?;
    if cfg.steps == 0 || start == 0 {
        return Ok(Refinement {
            x: x_init.to_vec(),
            trajectory: TrajectoryRecord::default(),
        });
    }
    let npot = NormalizedPotential { inner: pot, norm };
    let mut rng = Rng::new(cfg.seed).fork("refine");
    let mut z = norm.normalize(x_init);
    if cfg.injection == Injection::Noised {
        let eps = rng.normal_vec(z.len());
        z = forward_noise(&z, start, &eps, model.schedule());
    }
    let mut state = ChainState::default();
    let mut trajectory = TrajectoryRecord::default();
    for w in timesteps(start, cfg.steps).windows(2) {
        let stochastic = (cfg.eta > 0.0).then_some(&mut rng);
        let (next, record) = guided_step(&z, w[0], w[1], model, &npot, cond, cfg, &mut state, stochastic)?;
        if next.iter().any(|v| !v.is_finite()) || !record.gamma.is_finite() {
            return Err(Error::NonFiniteRefinement {
                last_valid_step: w[0],
            });
        }
        z = next;
        trajectory.steps.push(record);
    }
    Ok(Refinement {
        x: norm.denormalize(&z),
        trajectory,
    })
}

/// Vector residual `F` with Jacobian, for the pseudoinverse correction.
pub trait ResidualMap {
    fn residual(&self, x: &[f64]) -> Vec<f64>;

    fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        finite_diff_jacobian(|p| self.residual(p), x, None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// `x + r` with `r = -J(x)^+ F(x)`, repeated up to `max_iter` times or until
/// `|F|_inf < tol` (Gauss-Newton).
pub fn residual_correction(map: &dyn ResidualMap, x: &[f64], max_iter: usize, tol: f64) -> Result<Correction> {
    let mut x = x.to_vec();
    let mut f = map.residual(&x);
    let mut iterations = 0;
    while iterations < max_iter && crate::numerics::norm_inf(&f) >= tol {
        let step = least_squares_min_norm(&map.jacobian(&x)?, &f)?.solution;
        for (xi, si) in x.iter_mut().zip(&step) {
            *xi += si;
        }
        f = map.residual(&x);
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("residual after correction".into()));
        }
        iterations += 1;
    }
    Ok(Correction {
        residual_norm: crate::numerics::norm_inf(&f),
        x,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::NoiseSchedule;
    use proptest::prelude::*;
    use crate::numerics::Rng;

    struct Bowl;
    impl ConstraintPotential for Bowl {
        fn dim(&self) -> usize {
            1
        }
        fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
            (x.iter().map(|v| v * v).sum(), x.iter().map(|v| 2.0 * v).collect())
        }
    }

    struct ZeroNoise(NoiseSchedule, usize);
    impl NoisePredictor for ZeroNoise {
        fn schedule(&self) -> &NoiseSchedule {
            &self.0
        }
        fn dim(&self) -> usize {
            self.1
        }
        fn predict(&self, x: &[f64], _t: usize, _c: Option<&[f64]>) -> Result<Vec<f64>> {
            Ok(vec![0.0; x.len()])
        }
    }

    /// Smooth nonzero noise guess so chains actually move.
    struct WavyNoise(NoiseSchedule);
    impl NoisePredictor for WavyNoise {
        fn schedule(&self) -> &NoiseSchedule {
            &self.0
        }
        fn dim(&self) -> usize {
            2
        }
        fn predict(&self, x: &[f64], t: usize, _c: Option<&[f64]>) -> Result<Vec<f64>> {
            Ok(x.iter().map(|v| 0.3 * (v + t as f64 * 0.01).sin()).collect())
        }
    }

    fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..200 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = f(d);
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn direction_examples() {
        assert_eq!(descent_direction(&[6.0, 0.0], 1e-10).unwrap(), Some(vec![-1.0, 0.0]));
        assert_eq!(descent_direction(&[0.0, 0.0], 1e-10).unwrap(), None);
        assert!(descent_direction(&[f64::NAN], 1e-10).is_err());
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(compute_gamma(&[0.0], &[1.0], 0.0, 3.0, 2.0), 0.0);
        let r = [0.3, -1.2];
        let delta = [0.6, 0.8];
        assert_eq!(compute_gamma(&r, &delta, 5.0, 2.0, 0.0), dot(&r, &delta));
        let g = compute_gamma(&[1.0, 0.0], &[1.0, 0.0], 2.0, 4.0, 1.0);
        assert!((g - 9.0 / 17.0).abs() < 1e-15);
        let oracle = golden_section(|g| (g - 1.0) * (g - 1.0) + (2.0 - 4.0 * g).powi(2), -10.0, 10.0);
        assert!((g - oracle).abs() < 1e-6);
    }

    #[test]
    fn gamma_matches_golden_section_on_random_tuples() {
        let mut rng = Rng::new(1234);
        for _ in 0..1000 {
            let dim = 1 + rng.below(5);
            let r: Vec<f64> = (0..dim).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
            let raw: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let delta: Vec<f64> = raw.iter().map(|v| v / norm2(&raw)).collect();
            let phi = rng.uniform_range(0.0, 5.0);
            let gn = rng.uniform_range(0.0, 5.0);
            let lambda = if rng.uniform() < 0.2 { 0.0 } else { rng.uniform_range(0.0, 10.0) };
            let objective = |g: f64| {
                let moved: f64 = r.iter().zip(&delta).map(|(a, b)| (a - g * b).powi(2)).sum();
                moved + lambda * (phi - g * gn).powi(2)
            };
            let oracle = golden_section(objective, -100.0, 100.0);
            let closed = compute_gamma(&r, &delta, phi, gn, lambda);
            assert!((closed - oracle).abs() < 1e-6, "{closed} vs {oracle}");
        }
    }

    proptest! {
        #[test]
        fn gamma_sign_follows_cosine(r in prop::collection::vec(-5.0f64..5.0, 3), raw in prop::collection::vec(-1.0f64..1.0, 3)) {
            let n = norm2(&raw);
            prop_assume!(n > 1e-3 && norm2(&r) > 1e-6);
            let delta: Vec<f64> = raw.iter().map(|v| v / n).collect();
            let g = compute_gamma(&r, &delta, 1.0, 1.0, 0.0);
            let cos = dot(&r, &delta) / norm2(&r);
            prop_assert_eq!(g > 0.0, cos > 0.0);
            // at lambda = 0, gamma = d cos(theta): |gamma| grows with |cos| at fixed d
            prop_assert!((g - norm2(&r) * cos).abs() < 1e-12);
        }

        #[test]
        fn gamma_increases_with_lambda_when_orthogonal(phi in 0.01f64..10.0, gn in 0.01f64..10.0, l1 in 0.0f64..100.0, dl in 0.001f64..100.0) {
            let (r, delta) = ([0.0, 1.0], [1.0, 0.0]);
            let g1 = compute_gamma(&r, &delta, phi, gn, l1);
            let g2 = compute_gamma(&r, &delta, phi, gn, l1 + dl);
            prop_assert!(g2 > g1);
            prop_assert!(g2 < phi / gn);
        }
    }

    #[test]
    fn clipping() {
        assert_eq!(clip_gamma(5.0, Some(2.0)), (2.0, true));
        assert_eq!(clip_gamma(-5.0, Some(2.0)), (-2.0, true));
        assert_eq!(clip_gamma(1.0, Some(2.0)), (1.0, false));
        assert_eq!(clip_gamma(1e9, None), (1e9, false));
    }

    fn two_step_schedule() -> NoiseSchedule {
        // alpha_bar(1) = 0.5, alpha_bar(2) = 0.25
        NoiseSchedule::from_betas(vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn hand_unrolled_one_dimensional_step() {
        let model = ZeroNoise(two_step_schedule(), 1);
        let cfg = RefineConfig { gamma_clip: GammaClip::None, ..RefineConfig::default() };
        let (x, rec) = guided_step(&[1.0], 2, 1, &model, &Bowl, None, &cfg, &mut ChainState::default(), None).unwrap();
        let x0_hat = 1.0 / 0.25f64.sqrt();
        let x_prime = 0.5f64.sqrt() * x0_hat;
        let r = x0_hat - x_prime;
        let delta = -1.0; // -sign(2 x')
        let gamma = r * delta;
        assert_eq!(rec.x0_hat, vec![x0_hat]);
        assert!((rec.x_prime[0] - x_prime).abs() < 1e-15);
        assert_eq!(rec.delta, Some(vec![delta]));
        assert!((rec.gamma - gamma).abs() < 1e-15);
        assert!((rec.cos_theta + 1.0).abs() < 1e-15);
        assert!((x[0] - (x_prime + gamma * delta)).abs() < 1e-15);
    }

    #[test]
    fn zero_residual_means_no_move() {
        // At the last step with alpha_bar(0) = 1 and zero noise, x' = x0_hat.
        let model = ZeroNoise(two_step_schedule(), 1);
        let cfg = RefineConfig::default();
        let (x, rec) = guided_step(&[0.7], 1, 0, &model, &Bowl, None, &cfg, &mut ChainState::default(), None).unwrap();
        assert_eq!(rec.gamma, 0.0);
        assert_eq!(x, rec.x_prime);
    }

    #[test]
    fn zero_potential_reproduces_unguided_chain_bitwise() {
        let schedule = crate::diffusion::ScheduleConfig::default().build().unwrap();
        let model = WavyNoise(schedule.clone());
        let norm = Normalizer::identity(2);
        let cfg = RefineConfig { steps: 25, ..RefineConfig::default() };
        let out = refine(&[0.4, -0.9], &ZeroPotential(2), &model, &norm, None, &cfg).unwrap();
        let mut x = vec![0.4, -0.9];
        for w in timesteps(100, 25).windows(2) {
            let eps = model.predict(&x, w[0], None).unwrap();
            x = crate::diffusion::ddim_step_to(&x, w[0], w[1], &eps, &schedule, 0.0, DdimMode::Standard, None).unwrap();
        }
        assert!(out.x.iter().zip(&x).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(out.trajectory.steps.len(), 25);
    }

    #[test]
    fn zero_steps_return_input() {
        let model = ZeroNoise(two_step_schedule(), 2);
        let cfg = RefineConfig { steps: 0, ..RefineConfig::default() };
        let out = refine(&[3.0, 4.0], &ZeroPotential(2), &model, &Normalizer::identity(2), None, &cfg).unwrap();
        assert_eq!(out.x, vec![3.0, 4.0]);
        assert!(out.trajectory.steps.is_empty());
    }

    #[test]
    fn invalid_step_counts_rejected() {
        let model = ZeroNoise(two_step_schedule(), 1);
        let cfg = RefineConfig { steps: 3, ..RefineConfig::default() };
        assert!(refine(&[0.0], &Bowl, &model, &Normalizer::identity(1), None, &cfg).is_err());
        let cfg = RefineConfig { steps: 1, start_step: Some(5), ..RefineConfig::default() };
        assert!(refine(&[0.0], &Bowl, &model, &Normalizer::identity(1), None, &cfg).is_err());
    }

    #[test]
    fn jsonl_has_one_line_per_step() {
        let schedule = crate::diffusion::ScheduleConfig::default().build().unwrap();
        let model = WavyNoise(schedule);
        let cfg = RefineConfig { steps: 10, ..RefineConfig::default() };
        let out = refine(&[0.4, -0.9], &Bowl2, &model, &Normalizer::identity(2), None, &cfg).unwrap();
        let mut buf = Vec::new();
        out.trajectory.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 10);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["t"], 100);
    }

    struct Bowl2;
    impl ConstraintPotential for Bowl2 {
        fn dim(&self) -> usize {
            2
        }
        fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
            (x.iter().map(|v| v * v).sum(), x.iter().map(|v| 2.0 * v).collect())
        }
    }

    struct Linear {
        a: Matrix,
        b: Vec<f64>,
    }
    impl ResidualMap for Linear {
        fn residual(&self, x: &[f64]) -> Vec<f64> {
            self.a.mul_vec(x).iter().zip(&self.b).map(|(p, q)| p - q).collect()
        }
        fn jacobian(&self, _x: &[f64]) -> Result<Matrix> {
            Ok(self.a.clone())
        }
    }

    #[test]
    fn linear_residual_lands_in_one_step() {
        let map = Linear {
            a: Matrix::from_rows(&[vec![1.0, 2.0, -1.0], vec![0.5, 0.0, 3.0]]),
            b: vec![1.0, -2.0],
        };
        let out = residual_correction(&map, &[3.0, -1.0, 0.5], 1, 0.0).unwrap();
        assert!(out.residual_norm < 1e-9);
        let same = residual_correction(&map, &out.x, 5, 1e-9).unwrap();
        assert_eq!(same.iterations, 0);
        assert_eq!(same.x, out.x);
    }

    #[test]
    fn finite_difference_jacobian_default() {
        struct Circle;
        impl ResidualMap for Circle {
            fn residual(&self, x: &[f64]) -> Vec<f64> {
                vec![x[0] * x[0] + x[1] * x[1] - 1.0]
            }
        }
        let out = residual_correction(&Circle, &[2.0, 1.0], 30, 1e-12).unwrap();
        assert!(out.residual_norm < 1e-12);
    }
}
