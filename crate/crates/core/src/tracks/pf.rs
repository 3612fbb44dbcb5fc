//! AC power-flow track: base estimator, physics-penalized baseline, noise
//! prior and guided refinement of the base predictions.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{train_eps_model, EpsModel};
use crate::error::{Error, Result};
use crate::guidance::{refine, residual_correction, ConstraintPotential, GammaClip, Injection, RefineConfig, TrajectoryRecord};
use crate::nn::{
    train, Activation, Architecture, Example, FeedForwardNet, LossKind, ModelFile, Normalizer,
    PhysicsPenalty, StaticExamples, TrainConfig,
};
use crate::numerics::derive_seed;

pub use super::{EpsConfig, NetConfig};
use crate::powerflow::{
    build_ybus, generate_dataset, metrics, DatasetConfig, GridCase, Injections, KirchhoffPotential, Layout, PfDataset,
    PfMetrics, PfSample, YBus,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PfTrackConfig {
    pub seed: u64,
    /// `ieee14`, `ieee30` or a case file path.
    pub case: String,
    pub dataset: DatasetConfig,
    pub base: NetConfig,
    pub pinn: NetConfig,
    /// Weight of the squared-potential penalty of the physics baseline.
    pub pinn_lambda: f64,
    pub eps: EpsConfig,
    pub refine: RefineConfig,
    /// Test samples whose refinement trajectories are dumped.
    pub trajectory_dumps: usize,
}

impl Default for PfTrackConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            case: "ieee14".into(),
            dataset: DatasetConfig::default(),
            base: NetConfig::default(),
            pinn: NetConfig::default(),
            pinn_lambda: 1.0,
            eps: EpsConfig::default(),
            refine: RefineConfig {
                steps: 20,
                start_step: Some(20),
                lambda: 1e6,
                gamma_clip: GammaClip::None,
                injection: Injection::Clean,
                ..RefineConfig::default()
            },
            trajectory_dumps: 5,
        }
    }
}

pub fn load_case(name: &str) -> Result<GridCase> {
    match GridCase::builtin(name) {
        Some(c) => Ok(c),
        None => {
            let text = std::fs::read_to_string(name)
                .map_err(|e| Error::Data(format!("cannot read case {name}: {e}")))?;
            crate::powerflow::parse_case(&text)
        }
    }
}

/// Feed-forward map from injections to unknowns with its normalizations.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub net: FeedForwardNet,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
}

impl Predictor {
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let z = self.net.forward(&self.input_norm.normalize(input), None, None)?;
        Ok(self.output_norm.denormalize(&z))
    }

    pub fn to_file(&self, kind: &str, seed: u64, cfg: &TrainConfig) -> ModelFile {
        let mut f = ModelFile::new(kind, &self.net, seed);
        f.train = Some(cfg.clone());
        f.input_norm = Some(self.input_norm.clone());
        f.output_norm = Some(self.output_norm.clone());
        f
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let missing = || Error::Data(format!("{} model file lacks normalization", file.kind));
        Ok(Self {
            net: file.network()?,
            input_norm: file.input_norm.clone().ok_or_else(missing)?,
            output_norm: file.output_norm.clone().ok_or_else(missing)?,
        })
    }
}

pub struct Norms {
    pub input: Normalizer,
    pub output: Normalizer,
}

pub fn fit_norms(ds: &PfDataset) -> Result<Norms> {
    Ok(Norms {
        input: Normalizer::fit(&ds.train.iter().map(|s| s.input.clone()).collect::<Vec<_>>())?,
        output: Normalizer::fit(&ds.train.iter().map(|s| s.target.clone()).collect::<Vec<_>>())?,
    })
}

fn injections(case: &GridCase, s: &PfSample) -> Result<Injections> {
    Injections::from_vector(&Layout::new(case), case.buses.len(), &s.input)
}

/// Squared-mismatch potential per training sample, in normalized output units.
struct KirchhoffPenalty<'a> {
    pots: Vec<KirchhoffPotential<'a>>,
    norm: &'a Normalizer,
}

impl PhysicsPenalty for KirchhoffPenalty<'_> {
    fn penalty(&self, context: usize, output: &[f64]) -> (f64, Vec<f64>) {
        let (v, g) = self.pots[context].value_and_gradient(&self.norm.denormalize(output));
        (v, self.norm.grad_to_normalized(&g))
    }
}

/// Trains the base estimator (`physics_lambda = None`) or the
/// physics-penalized variant.
pub fn train_predictor(
    ds: &PfDataset,
    norms: &Norms,
    cfg: &NetConfig,
    physics_lambda: Option<f64>,
    seed: u64,
) -> Result<Predictor> {
    let n_in = norms.input.dim();
    let n_out = norms.output.dim();
    let mut net = FeedForwardNet::new(Architecture::mlp(n_in, cfg.hidden.clone(), n_out), seed)?;
    let examples = StaticExamples(
        ds.train
            .iter()
            .enumerate()
            .map(|(i, s)| Example {
                x: norms.input.normalize(&s.input),
                t: None,
                c: None,
                target: norms.output.normalize(&s.target),
                context: i,
            })
            .collect(),
    );
    let ybus = build_ybus(&ds.case)?;
    let tcfg = TrainConfig {
        seed,
        loss: match physics_lambda {
            None => LossKind::Mse,
            Some(lambda) => LossKind::Pinn { lambda },
        },
        ..cfg.train.clone()
    };
    let penalty = match physics_lambda {
        Some(_) => Some(KirchhoffPenalty {
            pots: ds
                .train
                .iter()
                .map(|s| Ok(KirchhoffPotential::new(&ds.case, &ybus, injections(&ds.case, s)?)))
                .collect::<Result<_>>()?,
            norm: &norms.output,
        }),
        None => None,
    };
    train(&mut net, &examples, &tcfg, penalty.as_ref().map(|p| p as &dyn PhysicsPenalty))?;
    Ok(Predictor {
        net,
        input_norm: norms.input.clone(),
        output_norm: norms.output.clone(),
    })
}

/// Noise prior over normalized targets, conditioned on normalized injections.
pub fn train_pf_prior(ds: &PfDataset, norms: &Norms, cfg: &EpsConfig, seed: u64) -> Result<(EpsModel, f64)> {
    let data: Vec<Vec<f64>> = ds.train.iter().map(|s| norms.output.normalize(&s.target)).collect();
    let conds: Vec<Vec<f64>> = ds.train.iter().map(|s| norms.input.normalize(&s.input)).collect();
    let vdata: Vec<Vec<f64>> = ds.val.iter().map(|s| norms.output.normalize(&s.target)).collect();
    let vconds: Vec<Vec<f64>> = ds.val.iter().map(|s| norms.input.normalize(&s.input)).collect();
    let schedule = cfg.schedule.build()?;
    let arch = Architecture {
        input_dim: norms.output.dim(),
        time_embed_dim: cfg.time_embed_dim,
        cond_dim: norms.input.dim(),
        hidden: cfg.hidden.clone(),
        output_dim: norms.output.dim(),
        activation: Activation::Silu,
        skip_connections: true,
    };
    let tcfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let out = train_eps_model(&data, Some(&conds), &vdata, Some(&vconds), &schedule, arch, &tcfg)?;
    Ok((
        EpsModel {
            net: out.net,
            schedule,
            data_norm: norms.output.clone(),
            cond_norm: Some(norms.input.clone()),
        },
        out.val_eps_mse,
    ))
}

pub fn predict_all(model: &Predictor, samples: &[PfSample]) -> Result<Vec<Vec<f64>>> {
    samples.iter().map(|s| model.predict(&s.input)).collect()
}

/// Guided refinement of `preds`, one chain per sample.
pub fn refine_all(
    case: &GridCase,
    ybus: &YBus,
    prior: &EpsModel,
    samples: &[PfSample],
    preds: &[Vec<f64>],
    cfg: &RefineConfig,
) -> Result<Vec<(Vec<f64>, TrajectoryRecord)>> {
    let cond_norm = prior
        .cond_norm
        .as_ref()
        .ok_or_else(|| Error::Data("power-flow prior must be conditional".into()))?;
    samples
        .par_iter()
        .zip(preds)
        .map(|(s, p)| {
            let pot = KirchhoffPotential::new(case, ybus, injections(case, s)?);
            let c = cond_norm.normalize(&s.input);
            let r = refine(p, &pot, prior, &prior.data_norm, Some(&c), cfg)?;
            Ok((r.x, r.trajectory))
        })
        .collect()
}

/// One pseudoinverse correction step applied to each prediction.
pub fn correct_all(case: &GridCase, ybus: &YBus, samples: &[PfSample], preds: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    samples
        .par_iter()
        .zip(preds)
        .map(|(s, p)| {
            let pot = KirchhoffPotential::new(case, ybus, injections(case, s)?);
            Ok(residual_correction(&pot, p, 1, 0.0)?.x)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub mse: f64,
    pub mapm: f64,
    pub mrpm: f64,
}

impl MethodRow {
    fn new(method: &str, m: &PfMetrics) -> Self {
        Self {
            method: method.into(),
            mse: m.mse,
            mapm: m.mapm,
            mrpm: m.mrpm,
        }
    }
}

pub fn metrics_table(rows: &[MethodRow]) -> String {
    let mut s = String::from("method\tmse\tmapm_mw\tmrpm_mvar\n");
    for r in rows {
        s.push_str(&format!("{}\t{:.6e}\t{:.6e}\t{:.6e}\n", r.method, r.mse, r.mapm, r.mrpm));
    }
    s
}

/// Everything produced by one run of the track.
pub struct PfRun {
    pub dataset: PfDataset,
    pub base: Predictor,
    pub pinn: Predictor,
    pub prior: EpsModel,
    pub prior_val_eps_mse: f64,
    pub rows: Vec<MethodRow>,
    pub refined: Vec<(Vec<f64>, TrajectoryRecord)>,
}

impl PfRun {
    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Dataset settings with the track-derived seed.
pub fn dataset_config(cfg: &PfTrackConfig) -> DatasetConfig {
    DatasetConfig {
        seed: derive_seed(cfg.seed, "pf/data"),
        ..cfg.dataset.clone()
    }
}

/// Refinement settings with the track-derived seed (used by noised injection).
pub fn refine_config(cfg: &PfTrackConfig) -> RefineConfig {
    RefineConfig {
        seed: derive_seed(cfg.seed, "pf/refine"),
        ..cfg.refine.clone()
    }
}

pub fn train_base(ds: &PfDataset, cfg: &PfTrackConfig) -> Result<Predictor> {
    train_predictor(ds, &fit_norms(ds)?, &cfg.base, None, derive_seed(cfg.seed, "pf/base"))
}

pub fn train_pinn(ds: &PfDataset, cfg: &PfTrackConfig) -> Result<Predictor> {
    train_predictor(ds, &fit_norms(ds)?, &cfg.pinn, Some(cfg.pinn_lambda), derive_seed(cfg.seed, "pf/pinn"))
}

pub fn train_prior(ds: &PfDataset, cfg: &PfTrackConfig) -> Result<(EpsModel, f64)> {
    train_pf_prior(ds, &fit_norms(ds)?, &cfg.eps, derive_seed(cfg.seed, "pf/eps"))
}

/// Generates data, trains all three networks and scores the test split.
pub fn run_pf_track(cfg: &PfTrackConfig) -> Result<PfRun> {
    let case = load_case(&cfg.case)?;
    let dataset = generate_dataset(&case, &dataset_config(cfg))?;
    let base = train_base(&dataset, cfg)?;
    let pinn = train_pinn(&dataset, cfg)?;
    let (prior, prior_val_eps_mse) = train_prior(&dataset, cfg)?;
    let (rows, refined) = evaluate_pf(&dataset, &base, Some(&pinn), &prior, &refine_config(cfg))?;
    Ok(PfRun {
        dataset,
        base,
        pinn,
        prior,
        prior_val_eps_mse,
        rows,
        refined,
    })
}

/// Scores base, physics baseline, guided refinement and the one-step
/// pseudoinverse correction on the test split.
pub fn evaluate_pf(
    ds: &PfDataset,
    base: &Predictor,
    pinn: Option<&Predictor>,
    prior: &EpsModel,
    refine_cfg: &RefineConfig,
) -> Result<(Vec<MethodRow>, Vec<(Vec<f64>, TrajectoryRecord)>)> {
    let case = &ds.case;
    let ybus = build_ybus(case)?;
    let norm = &base.output_norm;
    let test = &ds.test;
    let base_pred = predict_all(base, test)?;
    let mut rows = vec![MethodRow::new("base", &metrics(case, &ybus, norm, test, &base_pred)?)];
    if let Some(p) = pinn {
        let pp = predict_all(p, test)?;
        rows.push(MethodRow::new("pinn", &metrics(case, &ybus, norm, test, &pp)?));
    }
    let refined = refine_all(case, &ybus, prior, test, &base_pred, refine_cfg)?;
    let rp: Vec<Vec<f64>> = refined.iter().map(|r| r.0.clone()).collect();
    rows.push(MethodRow::new("cardiff", &metrics(case, &ybus, norm, test, &rp)?));
    let cp = correct_all(case, &ybus, test, &base_pred)?;
    rows.push(MethodRow::new("pseudoinverse", &metrics(case, &ybus, norm, test, &cp)?));
    Ok((rows, refined))
}

/// Writes `metrics.tsv`, `refined.csv` and the first trajectories.
pub fn write_refine_outputs(
    dir: &Path,
    rows: &[MethodRow],
    refined: &[(Vec<f64>, TrajectoryRecord)],
    dumps: usize,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.tsv"), metrics_table(rows))?;
    let mut text = String::new();
    for (x, _) in refined {
        let row: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(dir.join("refined.csv"), text)?;
    for (i, (_, traj)) in refined.iter().take(dumps).enumerate() {
        let f = std::fs::File::create(dir.join(format!("trajectory_{i:03}.jsonl")))?;
        traj.write_jsonl(std::io::BufWriter::new(f))?;
    }
    Ok(())
}
