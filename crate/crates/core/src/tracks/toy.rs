//! Two-dimensional landscape track: prior training and the optimizer
//! trajectory comparison.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{outcome_table, trajectory_comparison, ComparisonConfig, ComparisonOutcome, Method};
use crate::diffusion::{train_eps_model, EpsModel, ScheduleShape, ScheduleConfig};
use crate::error::{Error, Result};
use crate::nn::{Activation, Architecture, LrSchedule, Normalizer, TrainConfig};
use crate::numerics::derive_seed;
use crate::potentials::{
    locate_stationary_points, sample_manifold_dataset, MullerBrownPotential, Sampler, StationaryKind, WORKING_BOX,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub seed: u64,
    pub samples: usize,
    pub validation_samples: usize,
    pub sampler: Sampler,
    pub schedule: ScheduleConfig,
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub train: TrainConfig,
    pub comparison: ComparisonConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 20_000,
            validation_samples: 1_000,
            sampler: Sampler::metropolis(10.0),
            // Larger final beta than the generic default so the chain starts
            // from nearly pure noise.
            schedule: ScheduleConfig {
                steps: 100,
                beta_min: 1e-4,
                beta_max: 0.1,
                shape: ScheduleShape::Linear,
            },
            hidden: vec![64, 64, 64],
            time_embed_dim: 16,
            train: TrainConfig {
                epochs: 40,
                batch_size: 128,
                learning_rate: 2e-3,
                lr_schedule: LrSchedule::Cosine { final_fraction: 0.05 },
                ..TrainConfig::default()
            },
            comparison: ComparisonConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyPrior {
    pub model: EpsModel,
    pub loss_history: Vec<f64>,
    pub val_eps_mse: f64,
}

/// Box-normalized coordinates: the working box maps onto `[-1, 1]^2`.
pub fn toy_normalizer() -> Normalizer {
    let (lo, hi) = WORKING_BOX;
    Normalizer::from_box(&lo, &hi).expect("working box is non-empty")
}

pub fn toy_dataset(cfg: &ToyConfig, n: usize, label: &str) -> Result<Vec<Vec<f64>>> {
    let pot = MullerBrownPotential::canonical();
    let (lo, hi) = WORKING_BOX;
    sample_manifold_dataset(&pot, &lo, &hi, n, cfg.sampler, derive_seed(cfg.seed, label))
}

pub fn train_toy_prior(cfg: &ToyConfig) -> Result<ToyPrior> {
    let norm = toy_normalizer();
    let train = norm.normalize_all(&toy_dataset(cfg, cfg.samples, "toy/data")?);
    let val = norm.normalize_all(&toy_dataset(cfg, cfg.validation_samples, "toy/validation")?);
    let schedule = cfg.schedule.build()?;
    let arch = Architecture {
        input_dim: 2,
        time_embed_dim: cfg.time_embed_dim,
        cond_dim: 0,
        hidden: cfg.hidden.clone(),
        output_dim: 2,
        activation: Activation::Silu,
        skip_connections: true,
    };
    let tcfg = TrainConfig {
        seed: derive_seed(cfg.seed, "toy/train"),
        ..cfg.train.clone()
    };
    let out = train_eps_model(&train, None, &val, None, &schedule, arch, &tcfg)?;
    Ok(ToyPrior {
        model: EpsModel {
            net: out.net,
            schedule,
            data_norm: norm,
            cond_norm: None,
        },
        loss_history: out.report.loss_history,
        val_eps_mse: out.val_eps_mse,
    })
}

/// Start points shipped with the demo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoStarts {
    /// Starts meant to show the three behaviours side by side.
    pub figure1: Vec<[f64; 2]>,
    /// Far-field starts where the guided chain ends in a non-global basin.
    pub figure2: Vec<[f64; 2]>,
}

pub const DEMO_STARTS: &str = include_str!("../../data/toy_starts.toml");

impl DemoStarts {
    pub fn builtin() -> Self {
        Self::parse(DEMO_STARTS).expect("built-in starts parse")
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("start file: {e}")))
    }

    pub fn all(&self) -> Vec<[f64; 2]> {
        self.figure1.iter().chain(&self.figure2).copied().collect()
    }
}

pub const METHODS: [Method; 3] = [Method::Gd, Method::Nr, Method::Cardiff];

pub fn run_toy(cfg: &ToyConfig, prior: &ToyPrior, starts: &[[f64; 2]]) -> Result<Vec<ComparisonOutcome>> {
    let pot = MullerBrownPotential::canonical();
    trajectory_comparison(&pot, starts, &METHODS, &cfg.comparison, Some(&prior.model))
}

/// Distance from `p` to the working box (0 inside).
pub fn distance_outside_box(p: [f64; 2]) -> f64 {
    let (lo, hi) = WORKING_BOX;
    let dx = (lo[0] - p[0]).max(p[0] - hi[0]).max(0.0);
    let dy = (lo[1] - p[1]).max(p[1] - hi[1]).max(0.0);
    dx.hypot(dy)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToyVerdict {
    /// Starts where descent stops in a local basin, Newton stops at a saddle
    /// and the guided chain ends within 0.1 of the global minimizer.
    pub figure1: Vec<[f64; 2]>,
    /// Starts more than 1.0 outside the box where the guided chain ends in a
    /// local basin.
    pub figure2: Vec<[f64; 2]>,
}

pub fn judge(outcomes: &[ComparisonOutcome]) -> ToyVerdict {
    let pot = MullerBrownPotential::canonical();
    let global = locate_stationary_points(&pot.params)
        .into_iter()
        .find(|s| s.kind == StationaryKind::Minimum)
        .expect("landscape has a minimum")
        .location;
    let mut verdict = ToyVerdict::default();
    let mut starts: Vec<[f64; 2]> = outcomes.iter().map(|o| o.start).collect();
    starts.dedup();
    for s in starts {
        let of = |m: Method| outcomes.iter().find(|o| o.start == s && o.method == m);
        let (Some(gd), Some(nr), Some(cd)) = (of(Method::Gd), of(Method::Nr), of(Method::Cardiff)) else {
            continue;
        };
        if gd.basin.starts_with("local") && nr.saddle == Some(true) && nr.basin == "saddle" && cd.distance_to(global) < 0.1
        {
            verdict.figure1.push(s);
        }
        if distance_outside_box(s) > 1.0 && cd.basin.starts_with("local") {
            verdict.figure2.push(s);
        }
    }
    verdict
}

/// Writes `outcomes.tsv` and `trajectories.jsonl`, one line per point.
pub fn write_outcomes(dir: &Path, outcomes: &[ComparisonOutcome]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("outcomes.tsv"), outcome_table(outcomes))?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("trajectories.jsonl"))?);
    for o in outcomes {
        for (k, p) in o.trajectory.iter().enumerate() {
            let line = serde_json::json!({
                "start": o.start,
                "method": o.method.name(),
                "step": k,
                "x": p.x,
                "phi": p.phi,
            });
            writeln!(f, "{line}")?;
        }
    }
    f.flush()?;
    Ok(())
}
