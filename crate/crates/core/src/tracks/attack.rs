//! Tabular attack track: synthetic credit records, a classifier, an
//! unconditional prior over feasible records and the attack comparison.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpsConfig, NetConfig};
use crate::adversarial::{
    evaluate_attacks, generate_tabular, train_classifier, AttackConfig, AttackEvaluation, AttackKind, Classifier,
    TabularConfig, TabularDataset,
};
use crate::diffusion::{train_eps_model, EpsModel};
use crate::error::Result;
use crate::nn::{Activation, Architecture, LrSchedule, Normalizer, TrainConfig};
use crate::numerics::derive_seed;
use crate::potentials::RelationalConstraintSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackTrackConfig {
    pub seed: u64,
    pub data: TabularConfig,
    pub classifier: NetConfig,
    pub eps: EpsConfig,
    pub attack: AttackConfig,
}

impl Default for AttackTrackConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: TabularConfig::default(),
            classifier: NetConfig {
                hidden: vec![64, 64],
                train: TrainConfig {
                    epochs: 30,
                    batch_size: 128,
                    learning_rate: 1e-3,
                    lr_schedule: LrSchedule::Cosine { final_fraction: 0.05 },
                    ..TrainConfig::default()
                },
            },
            eps: EpsConfig {
                train: TrainConfig {
                    epochs: 60,
                    batch_size: 128,
                    learning_rate: 2e-3,
                    lr_schedule: LrSchedule::Cosine { final_fraction: 0.02 },
                    ..TrainConfig::default()
                },
                ..EpsConfig::default()
            },
            attack: AttackConfig::default(),
        }
    }
}

pub const ATTACKS: [AttackKind; 4] = [AttackKind::Identity, AttackKind::Pgd, AttackKind::Penalty, AttackKind::Cardiff];

pub fn train_track_classifier(ds: &TabularDataset, cfg: &NetConfig, seed: u64) -> Result<Classifier> {
    let tcfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    Ok(train_classifier(&ds.train, cfg.hidden.clone(), &tcfg)?.0)
}

/// Unconditional prior over z-scored feasible training records.
pub fn train_tabular_prior(ds: &TabularDataset, cfg: &EpsConfig, seed: u64) -> Result<(EpsModel, f64)> {
    let norm = Normalizer::fit(&ds.train.x)?;
    let data = norm.normalize_all(&ds.train.x);
    let val = norm.normalize_all(&ds.val.x);
    let schedule = cfg.schedule.build()?;
    let dim = norm.dim();
    let arch = Architecture {
        input_dim: dim,
        time_embed_dim: cfg.time_embed_dim,
        cond_dim: 0,
        hidden: cfg.hidden.clone(),
        output_dim: dim,
        activation: Activation::Silu,
        skip_connections: true,
    };
    let tcfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let out = train_eps_model(&data, None, &val, None, &schedule, arch, &tcfg)?;
    Ok((
        EpsModel {
            net: out.net,
            schedule,
            data_norm: norm,
            cond_norm: None,
        },
        out.val_eps_mse,
    ))
}

pub struct AttackRun {
    pub dataset: TabularDataset,
    pub classifier: Classifier,
    pub prior: EpsModel,
    pub prior_val_eps_mse: f64,
    pub evaluation: AttackEvaluation,
}

pub fn track_dataset(cfg: &AttackTrackConfig, set: &RelationalConstraintSet) -> Result<TabularDataset> {
    let dcfg = TabularConfig {
        seed: derive_seed(cfg.seed, "attack/data"),
        ..cfg.data.clone()
    };
    generate_tabular(set, &dcfg)
}

pub fn track_classifier(ds: &TabularDataset, cfg: &AttackTrackConfig) -> Result<Classifier> {
    train_track_classifier(ds, &cfg.classifier, derive_seed(cfg.seed, "attack/classifier"))
}

pub fn track_prior(ds: &TabularDataset, cfg: &AttackTrackConfig) -> Result<(EpsModel, f64)> {
    train_tabular_prior(ds, &cfg.eps, derive_seed(cfg.seed, "attack/eps"))
}

/// Attack settings with the track-derived refinement seed.
pub fn attack_config(cfg: &AttackTrackConfig) -> AttackConfig {
    AttackConfig {
        seed: derive_seed(cfg.seed, "attack/refine"),
        ..cfg.attack.clone()
    }
}

pub fn run_attack_track(cfg: &AttackTrackConfig) -> Result<AttackRun> {
    let set = RelationalConstraintSet::credit();
    let dataset = track_dataset(cfg, &set)?;
    let classifier = track_classifier(&dataset, cfg)?;
    let (prior, prior_val_eps_mse) = track_prior(&dataset, cfg)?;
    let evaluation = evaluate_attacks(&classifier, &set, &dataset.test, &ATTACKS, &attack_config(cfg), Some(&prior))?;
    Ok(AttackRun {
        dataset,
        classifier,
        prior,
        prior_val_eps_mse,
        evaluation,
    })
}

/// Writes `attacks.tsv` and `outcomes.jsonl` (one line per attacked sample
/// and attack, with the per-cycle log).
pub fn write_attack_outputs(dir: &Path, eval: &AttackEvaluation) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("attacks.tsv"), eval.table())?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("outcomes.jsonl"))?);
    for (row, per) in eval.rows.iter().zip(&eval.outcomes) {
        for o in per {
            let mut v = serde_json::to_value(o)?;
            v["attack"] = serde_json::Value::from(row.attack.clone());
            writeln!(f, "{v}")?;
        }
    }
    f.flush()?;
    Ok(())
}
