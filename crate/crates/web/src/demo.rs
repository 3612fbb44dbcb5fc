//! Everything the page computes, in plain Rust so it can be exercised
//! without a browser.

use serde::Serialize;

use cardiff::baselines::{basin_label, landmark_labels, trajectory_comparison, ComparisonConfig, ComparisonOutcome, Method, Status};
use cardiff::diffusion::EpsModel;
use cardiff::guidance::{refine, ConstraintPotential, GammaClip};
use cardiff::nn::ModelFile;
use cardiff::potentials::{locate_stationary_points, MullerBrownPotential};
use cardiff::{Error, Result};

/// Noise model trained by `cardiff toy` with the default configuration.
pub const EMBEDDED_MODEL: &str = include_str!("../data/toy_eps.json");

/// Plotted region. Wider than the working box so the far-field starts fit.
pub const VIEW: ([f64; 2], [f64; 2]) = ([-2.5, -2.6], [3.5, 2.6]);

/// Trajectories sent to the page are thinned to at most this many points.
pub const MAX_POINTS: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    /// Row-major, rows from `lo[1]` upwards.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Landmark {
    pub label: String,
    pub x: [f64; 2],
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSummary {
    pub method: &'static str,
    pub basin: String,
    pub end: [f64; 2],
    pub phi: f64,
    pub status: Status,
    pub saddle: Option<bool>,
    pub iterations: usize,
    /// `[x, y, phi]` triples.
    pub points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub end: [f64; 2],
    pub phi: f64,
    pub basin: String,
    /// Applied step size per reverse step.
    pub gammas: Vec<f64>,
    /// Potential at the unguided proposal per reverse step.
    pub phis: Vec<f64>,
    pub clip_events: usize,
}

pub struct Demo {
    pot: MullerBrownPotential,
    prior: EpsModel,
    landmarks: Vec<(String, [f64; 2])>,
    pub config: ComparisonConfig,
}

impl Demo {
    pub fn embedded() -> Result<Self> {
        Self::from_model_json(EMBEDDED_MODEL)
    }

    pub fn from_model_json(text: &str) -> Result<Self> {
        let prior = EpsModel::from_file(&ModelFile::from_json(text)?)?;
        if prior.data_norm.dim() != 2 {
            return Err(Error::Data("landscape demo needs a two-dimensional noise model".into()));
        }
        let pot = MullerBrownPotential::canonical();
        let landmarks = landmark_labels(&locate_stationary_points(&pot.params));
        Ok(Self {
            pot,
            prior,
            landmarks,
            config: ComparisonConfig::default(),
        })
    }

    pub fn prior(&self) -> &EpsModel {
        &self.prior
    }

    /// Shifted potential on an `nx` by `ny` grid over [`VIEW`], capped at `cap`.
    pub fn landscape(&self, nx: usize, ny: usize, cap: f64) -> Result<Grid> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidConfig("grid needs at least two points per axis".into()));
        }
        let (lo, hi) = VIEW;
        let mut values = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            let y = lo[1] + (hi[1] - lo[1]) * j as f64 / (ny - 1) as f64;
            for i in 0..nx {
                let x = lo[0] + (hi[0] - lo[0]) * i as f64 / (nx - 1) as f64;
                values.push(self.pot.value(&[x, y]).min(cap));
            }
        }
        Ok(Grid { lo, hi, nx, ny, values })
    }

    pub fn landmarks(&self) -> Vec<Landmark> {
        self.landmarks
            .iter()
            .map(|(label, x)| Landmark {
                label: label.clone(),
                x: *x,
                phi: self.pot.value(x),
            })
            .collect()
    }

    /// Descent, Newton and the guided chain from one start.
    pub fn compare(&self, start: [f64; 2], lambda: f64) -> Result<Vec<PathSummary>> {
        let mut cfg = self.config.clone();
        cfg.refine.lambda = lambda;
        let outcomes = trajectory_comparison(
            &self.pot,
            &[start],
            &[Method::Gd, Method::Nr, Method::Cardiff],
            &cfg,
            Some(&self.prior),
        )?;
        Ok(outcomes.into_iter().map(summarize).collect())
    }

    /// Guided chain from one start for each `lambda`. `clip_factor` of
    /// `None` disables step clipping.
    pub fn sweep(&self, start: [f64; 2], lambdas: &[f64], clip_factor: Option<f64>) -> Result<Vec<SweepRow>> {
        let mut rows = Vec::with_capacity(lambdas.len());
        for &lambda in lambdas {
            let mut cfg = self.config.refine.clone();
            cfg.lambda = lambda;
            cfg.gamma_clip = match clip_factor {
                Some(factor) => GammaClip::Auto { factor },
                None => GammaClip::None,
            };
            let r = refine(&start, &self.pot, &self.prior, &self.prior.data_norm, None, &cfg)?;
            let steps = &r.trajectory.steps;
            rows.push(SweepRow {
                lambda,
                end: [r.x[0], r.x[1]],
                phi: self.pot.value(&r.x),
                basin: basin_label(&self.landmarks, &r.x),
                gammas: steps.iter().map(|s| s.gamma).collect(),
                phis: steps.iter().map(|s| s.phi).collect(),
                clip_events: r.trajectory.clip_events(),
            });
        }
        Ok(rows)
    }
}

fn summarize(o: ComparisonOutcome) -> PathSummary {
    let pts: Vec<[f64; 3]> = o.trajectory.iter().map(|p| [p.x[0], p.x[1], p.phi]).collect();
    PathSummary {
        method: o.method.name(),
        basin: o.basin,
        end: o.terminal,
        phi: o.phi,
        status: o.status,
        saddle: o.saddle,
        iterations: o.iterations,
        points: thin(&pts, MAX_POINTS),
    }
}

/// Evenly spaced subset of at most `max` points that keeps both ends.
pub fn thin<T: Copy>(points: &[T], max: usize) -> Vec<T> {
    let n = points.len();
    if n <= max || max < 2 {
        return points[..n.min(max)].to_vec();
    }
    (0..max).map(|k| points[k * (n - 1) / (max - 1)]).collect()
}
