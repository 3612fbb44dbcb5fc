//! Noise schedules, forward noising and the DDIM reverse step.
//!
//! Step indices run `0..=T` with `alpha_bar(0) = 1`. A step may jump from `t`
//! to any `t_prev < t`; with consecutive indices this is the textbook update.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::nn::{
    Architecture, Example, ExampleSource, FeedForwardNet, Normalizer, TrainConfig, TrainReport,
};
use crate::numerics::Rng;

const MIN_ALPHA_BAR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleShape {
    Linear,
    Cosine,
}

/// Parameters from which a schedule is rebuilt when a model is loaded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub shape: ScheduleShape,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_min: 1e-4,
            beta_max: 0.02,
            shape: ScheduleShape::Linear,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_min, self.beta_max, self.shape)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    betas: Vec<f64>,
    /// `alpha_bars[t]` for `t = 0..=T`.
    alpha_bars: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64, shape: ScheduleShape) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidScheduleParams("step count must be at least 1".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::InvalidScheduleParams(format!(
            "need 0 < beta_min <= beta_max < 1, got {beta_min} and {beta_max}"
        )));
    }
    let betas: Vec<f64> = match shape {
        ScheduleShape::Linear => (0..steps)
            .map(|k| {
                if steps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * k as f64 / (steps - 1) as f64
                }
            })
            .collect(),
        ScheduleShape::Cosine => {
            let s = 0.008;
            let f = |t: usize| {
                let u = (t as f64 / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
                u.cos().powi(2)
            };
            (1..=steps)
                .map(|t| (1.0 - f(t) / f(t - 1)).clamp(beta_min, beta_max))
                .collect()
        }
    };
    NoiseSchedule::from_betas_with_config(
        betas,
        ScheduleConfig {
            steps,
            beta_min,
            beta_max,
            shape,
        },
    )
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        let config = ScheduleConfig {
            steps: betas.len(),
            beta_min: betas.iter().cloned().fold(f64::INFINITY, f64::min),
            beta_max: betas.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            shape: ScheduleShape::Linear,
        };
        Self::from_betas_with_config(betas, config)
    }

    fn from_betas_with_config(betas: Vec<f64>, config: ScheduleConfig) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::InvalidScheduleParams("every beta must lie in (0, 1)".into()));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        for b in &betas {
            let prev = *alpha_bars.last().unwrap();
            alpha_bars.push((1.0 - b) * prev);
        }
        Ok(Self {
            config,
            betas,
            alpha_bars,
        })
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidScheduleParams(format!(
                "step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DdimMode {
    /// Includes the direction term `sqrt(1 - abar_prev - sigma^2) * eps_hat`.
    #[default]
    Standard,
    /// Drops the direction term and keeps only the rescaled clean estimate
    /// plus fresh noise. Kept for comparison; it does not invert the forward
    /// process even with a perfect noise estimate.
    Truncated,
}

/// `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_noise(x0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Vec<f64> {
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

pub fn estimate_x0(x_t: &[f64], t: usize, eps_hat: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    ensure_dim("noise estimate", x_t.len(), eps_hat.len())?;
    let ab = schedule.alpha_bar(t);
    if ab < MIN_ALPHA_BAR {
        return Err(Error::DegenerateAlpha { t, alpha_bar: ab });
    }
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t.iter().zip(eps_hat).map(|(x, e)| (x - b * e) / a).collect())
}

/// Noise scale of a reverse step from `t` to `t_prev`.
pub fn sigma(schedule: &NoiseSchedule, t: usize, t_prev: usize, eta: f64) -> f64 {
    if eta == 0.0 {
        return 0.0;
    }
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt()
}

/// Reverse step `t -> t_prev` given the noise estimate at `x_t`.
///
/// With `eta == 0` no randomness is drawn and `rng` may be `None`.
#[allow(clippy::too_many_arguments)]
pub fn ddim_step_to(
    x_t: &[f64],
    t: usize,
    t_prev: usize,
    eps_hat: &[f64],
    schedule: &NoiseSchedule,
    eta: f64,
    mode: DdimMode,
    rng: Option<&mut Rng>,
) -> Result<Vec<f64>> {
    if t_prev >= t {
        return Err(Error::InvalidScheduleParams(format!("reverse step {t} -> {t_prev}")));
    }
    let x0 = estimate_x0(x_t, t, eps_hat, schedule)?;
    Ok(ddim_from_x0(&x0, t, t_prev, eps_hat, schedule, eta, mode, rng)?)
}

/// Reverse step `t -> t - 1`.
pub fn ddim_step(
    x_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    schedule: &NoiseSchedule,
    eta: f64,
    mode: DdimMode,
    rng: Option<&mut Rng>,
) -> Result<Vec<f64>> {
    ddim_step_to(x_t, t, t.saturating_sub(1), eps_hat, schedule, eta, mode, rng)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn ddim_from_x0(
    x0: &[f64],
    t: usize,
    t_prev: usize,
    eps_hat: &[f64],
    schedule: &NoiseSchedule,
    eta: f64,
    mode: DdimMode,
    rng: Option<&mut Rng>,
) -> Result<Vec<f64>> {
    let ab_prev = schedule.alpha_bar(t_prev);
    let s = sigma(schedule, t, t_prev, eta);
    let a = ab_prev.sqrt();
    let dir = match mode {
        DdimMode::Standard => (1.0 - ab_prev - s * s).max(0.0).sqrt(),
        DdimMode::Truncated => 0.0,
    };
    let mut out: Vec<f64> = x0.iter().zip(eps_hat).map(|(x, e)| a * x + dir * e).collect();
    if s > 0.0 {
        let rng = rng.ok_or_else(|| Error::InvalidConfig("stochastic reverse step needs a generator".into()))?;
        for o in &mut out {
            *o += s * rng.normal();
        }
    }
    Ok(out)
}

/// Descending step indices from `start` to 0 using `tau` reverse steps.
pub fn timesteps(start: usize, tau: usize) -> Vec<usize> {
    if tau == 0 || start == 0 {
        return vec![start];
    }
    let tau = tau.min(start);
    (0..=tau)
        .rev()
        .map(|i| ((start * i) as f64 / tau as f64).round() as usize)
        .collect()
}

/// Anything that predicts the noise in a (normalized) noisy sample.
pub trait NoisePredictor: Sync {
    fn schedule(&self) -> &NoiseSchedule;
    fn dim(&self) -> usize;
    fn predict(&self, x_t: &[f64], t: usize, c: Option<&[f64]>) -> Result<Vec<f64>>;
}

/// Trained noise network with its schedule and data normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsModel {
    pub net: FeedForwardNet,
    pub schedule: NoiseSchedule,
    pub data_norm: Normalizer,
    pub cond_norm: Option<Normalizer>,
}

impl NoisePredictor for EpsModel {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn dim(&self) -> usize {
        self.net.architecture().output_dim
    }

    fn predict(&self, x_t: &[f64], t: usize, c: Option<&[f64]>) -> Result<Vec<f64>> {
        self.net.forward(x_t, Some(t), c)
    }
}

impl EpsModel {
    pub fn to_file(&self, seed: u64) -> crate::nn::ModelFile {
        let mut f = crate::nn::ModelFile::new("eps", &self.net, seed);
        f.input_norm = Some(self.data_norm.clone());
        f.cond_norm = self.cond_norm.clone();
        f.schedule = Some(self.schedule.config());
        f
    }

    pub fn from_file(file: &crate::nn::ModelFile) -> Result<Self> {
        let config = file
            .schedule
            .ok_or_else(|| Error::Data("noise model file has no schedule".into()))?;
        let net = file.network()?;
        let data_norm = file
            .input_norm
            .clone()
            .unwrap_or_else(|| Normalizer::identity(net.architecture().output_dim));
        Ok(Self {
            net,
            schedule: config.build()?,
            data_norm,
            cond_norm: file.cond_norm.clone(),
        })
    }
}

/// Clean samples (already normalized) served as noised training pairs.
/// Every call draws a fresh step and noise vector.
pub struct NoisedExamples<'a> {
    pub data: &'a [Vec<f64>],
    pub conds: Option<&'a [Vec<f64>]>,
    pub schedule: &'a NoiseSchedule,
}

impl ExampleSource for NoisedExamples<'_> {
    fn len(&self) -> usize {
        self.data.len()
    }

    fn example(&self, index: usize, rng: &mut Rng) -> Example {
        let x0 = &self.data[index];
        let t = 1 + rng.below(self.schedule.steps());
        let eps = rng.normal_vec(x0.len());
        Example {
            x: forward_noise(x0, t, &eps, self.schedule),
            t: Some(t),
            c: self.conds.map(|c| c[index].clone()),
            target: eps,
            context: index,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpsTraining {
    pub net: FeedForwardNet,
    pub report: TrainReport,
    /// Mean squared noise-prediction error on the validation set, one fixed
    /// draw per sample.
    pub val_eps_mse: f64,
}

/// Noise-prediction training. Data and conditions must already be normalized.
#[allow(clippy::too_many_arguments)]
pub fn train_eps_model(
    train: &[Vec<f64>],
    train_conds: Option<&[Vec<f64>]>,
    val: &[Vec<f64>],
    val_conds: Option<&[Vec<f64>]>,
    schedule: &NoiseSchedule,
    arch: Architecture,
    cfg: &TrainConfig,
) -> Result<EpsTraining> {
    if train.is_empty() {
        return Err(Error::Data("empty diffusion training set".into()));
    }
    let mut net = FeedForwardNet::new(arch, cfg.seed)?;
    let source = NoisedExamples {
        data: train,
        conds: train_conds,
        schedule,
    };
    let cfg = TrainConfig {
        loss: crate::nn::LossKind::EpsPrediction,
        ..cfg.clone()
    };
    let report = crate::nn::train(&mut net, &source, &cfg, None)?;
    let val_eps_mse = eps_mse(&net, val, val_conds, schedule, cfg.seed)?;
    Ok(EpsTraining {
        net,
        report,
        val_eps_mse,
    })
}

/// Noise-prediction error with one seeded `(t, eps)` draw per sample.
pub fn eps_mse(
    net: &FeedForwardNet,
    data: &[Vec<f64>],
    conds: Option<&[Vec<f64>]>,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let mut rng = Rng::new(seed).fork("validation");
    let source = NoisedExamples {
        data,
        conds,
        schedule,
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..data.len() {
        let ex = source.example(i, &mut rng);
        let out = net.forward(&ex.x, ex.t, ex.c.as_deref())?;
        total += out.iter().zip(&ex.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += out.len();
    }
    Ok(total / count as f64)
}

/// Unguided deterministic generation from Gaussian noise, in normalized units.
pub fn sample(
    model: &dyn NoisePredictor,
    n: usize,
    tau: usize,
    cond: Option<&[f64]>,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    let schedule = model.schedule();
    let steps = timesteps(schedule.steps(), tau);
    (0..n)
        .map(|_| {
            let mut x = rng.normal_vec(model.dim());
            for w in steps.windows(2) {
                let eps = model.predict(&x, w[0], cond)?;
                x = ddim_step_to(&x, w[0], w[1], &eps, schedule, 0.0, DdimMode::Standard, None)?;
            }
            Ok(x)
        })
        .collect()
}
