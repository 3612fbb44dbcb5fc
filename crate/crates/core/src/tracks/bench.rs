//! Per-instance wall-clock timings. Each operation is run once per instance
//! after a warm-up pass, and the table reports order statistics of the
//! per-instance times in milliseconds.
//!
//! Cost of every timed operation is independent of how well the networks
//! are trained (fixed step counts), so the tracks train short models here.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::attack::{train_tabular_prior, train_track_classifier, AttackTrackConfig};
use super::pf::{fit_norms, load_case, train_pf_prior, train_predictor, PfTrackConfig};
use super::toy::{train_toy_prior, ToyConfig};
use super::{median, EpsConfig, NetConfig};
use crate::adversarial::{cardiff_attack, generate_tabular, penalty_pgd_attack, pgd_attack, TabularConfig};
use crate::baselines::{gradient_descent, newton_raphson_scalar, Method};
use crate::error::{Error, Result};
use crate::guidance::refine;
use crate::numerics::{derive_seed, Rng};
use crate::potentials::{MullerBrownPotential, RelationalConstraintSet, WORKING_BOX};
use crate::powerflow::{build_ybus, generate_dataset, solve, DatasetConfig, Injections, KirchhoffPotential, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchTrack {
    Pf,
    Attack,
    Toy,
}

impl BenchTrack {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pf" => Ok(Self::Pf),
            "attack" => Ok(Self::Attack),
            "toy" => Ok(Self::Toy),
            _ => Err(Error::InvalidConfig(format!("unknown bench track `{s}` (expected pf, attack or toy)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub seed: u64,
    /// Timed instances per operation.
    pub instances: usize,
    /// Untimed instances run first.
    pub warmup: usize,
    /// Training epochs for the networks whose cost is being measured.
    pub train_epochs: usize,
    pub pf: PfTrackConfig,
    pub attack: AttackTrackConfig,
    pub toy: ToyConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 100,
            warmup: 5,
            train_epochs: 3,
            pf: PfTrackConfig::default(),
            attack: AttackTrackConfig::default(),
            toy: ToyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub operation: String,
    pub runs: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl BenchRow {
    fn from_times(operation: &str, ms: &[f64]) -> Self {
        Self {
            operation: operation.into(),
            runs: ms.len(),
            median_ms: median(ms),
            mean_ms: ms.iter().sum::<f64>() / ms.len().max(1) as f64,
            min_ms: ms.iter().copied().fold(f64::INFINITY, f64::min),
            max_ms: ms.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub track: BenchTrack,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, operation: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.operation == operation)
    }

    pub fn table(&self) -> String {
        let mut s = String::from("operation\truns\tmedian_ms\tmean_ms\tmin_ms\tmax_ms\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
                r.operation, r.runs, r.median_ms, r.mean_ms, r.min_ms, r.max_ms
            ));
        }
        s
    }
}

/// Runs `op` on `warmup` instances untimed, then times one call per
/// instance. Instance indices wrap around `pool`.
fn time_per_instance<F>(pool: usize, instances: usize, warmup: usize, mut op: F) -> Result<Vec<f64>>
where
    F: FnMut(usize) -> Result<()>,
{
    if pool == 0 {
        return Err(Error::Data("no instances to time".into()));
    }
    for i in 0..warmup {
        op(i % pool)?;
    }
    let mut out = Vec::with_capacity(instances);
    for i in 0..instances {
        let t = Instant::now();
        op(i % pool)?;
        out.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(out)
}

fn short(train: &crate::nn::TrainConfig, epochs: usize) -> crate::nn::TrainConfig {
    crate::nn::TrainConfig {
        epochs,
        ..train.clone()
    }
}

pub fn run_bench(track: BenchTrack, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.instances == 0 {
        return Err(Error::InvalidConfig("bench needs at least one instance".into()));
    }
    let rows = match track {
        BenchTrack::Pf => bench_pf(cfg)?,
        BenchTrack::Attack => bench_attack(cfg)?,
        BenchTrack::Toy => bench_toy(cfg)?,
    };
    Ok(BenchReport { track, rows })
}

fn bench_pf(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let p = &cfg.pf;
    let case = load_case(&p.case)?;
    let n = cfg.instances + cfg.warmup;
    let ds = generate_dataset(
        &case,
        &DatasetConfig {
            n_train: n.max(64),
            n_val: 16,
            n_test: n,
            seed: derive_seed(cfg.seed, "bench/pf/data"),
            ..p.dataset.clone()
        },
    )?;
    let norms = fit_norms(&ds)?;
    let net = NetConfig {
        hidden: p.pinn.hidden.clone(),
        train: short(&p.pinn.train, cfg.train_epochs),
    };
    let pinn = train_predictor(&ds, &norms, &net, Some(p.pinn_lambda), derive_seed(cfg.seed, "bench/pf/pinn"))?;
    let eps = EpsConfig {
        train: short(&p.eps.train, cfg.train_epochs),
        ..p.eps.clone()
    };
    let (prior, _) = train_pf_prior(&ds, &norms, &eps, derive_seed(cfg.seed, "bench/pf/eps"))?;
    let ybus = build_ybus(&case)?;
    let layout = Layout::new(&case);
    let test = &ds.test;
    let preds: Vec<Vec<f64>> = test.iter().map(|s| pinn.predict(&s.input)).collect::<Result<_>>()?;

    let forward = time_per_instance(test.len(), cfg.instances, cfg.warmup, |i| {
        std::hint::black_box(pinn.predict(&test[i].input)?);
        Ok(())
    })?;
    let nr = time_per_instance(test.len(), cfg.instances, cfg.warmup, |i| {
        let inj = Injections::from_vector(&layout, case.buses.len(), &test[i].input)?;
        std::hint::black_box(solve(&case, &ybus, &inj)?);
        Ok(())
    })?;
    let cond_norm = prior.cond_norm.clone().ok_or_else(|| Error::Data("prior must be conditional".into()))?;
    let refine_ms = time_per_instance(test.len(), cfg.instances, cfg.warmup, |i| {
        let inj = Injections::from_vector(&layout, case.buses.len(), &test[i].input)?;
        let pot = KirchhoffPotential::new(&case, &ybus, inj);
        let c = cond_norm.normalize(&test[i].input);
        std::hint::black_box(refine(&preds[i], &pot, &prior, &prior.data_norm, Some(&c), &p.refine)?);
        Ok(())
    })?;
    Ok(vec![
        BenchRow::from_times("pinn_forward", &forward),
        BenchRow::from_times("nr_solve", &nr),
        BenchRow::from_times("cardiff_refine", &refine_ms),
    ])
}

fn bench_attack(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let a = &cfg.attack;
    let set = RelationalConstraintSet::credit();
    let n = cfg.instances + cfg.warmup;
    let ds = generate_tabular(
        &set,
        &TabularConfig {
            n_train: 2000,
            n_val: 200,
            n_test: n,
            seed: derive_seed(cfg.seed, "bench/attack/data"),
            ..a.data.clone()
        },
    )?;
    let clf_cfg = NetConfig {
        hidden: a.classifier.hidden.clone(),
        train: short(&a.classifier.train, cfg.train_epochs),
    };
    let clf = train_track_classifier(&ds, &clf_cfg, derive_seed(cfg.seed, "bench/attack/classifier"))?;
    let eps = EpsConfig {
        train: short(&a.eps.train, cfg.train_epochs),
        ..a.eps.clone()
    };
    let (prior, _) = train_tabular_prior(&ds, &eps, derive_seed(cfg.seed, "bench/attack/eps"))?;
    let t = &ds.test;
    let acfg = &a.attack;
    let pgd = time_per_instance(t.len(), cfg.instances, cfg.warmup, |i| {
        std::hint::black_box(pgd_attack(&clf, &set, &t.x[i], t.y[i], acfg)?);
        Ok(())
    })?;
    let penalty = time_per_instance(t.len(), cfg.instances, cfg.warmup, |i| {
        std::hint::black_box(penalty_pgd_attack(&clf, &set, &t.x[i], t.y[i], acfg, acfg.mu)?);
        Ok(())
    })?;
    let cd = time_per_instance(t.len(), cfg.instances, cfg.warmup, |i| {
        std::hint::black_box(cardiff_attack(&clf, &set, &t.x[i], t.y[i], acfg, &prior)?);
        Ok(())
    })?;
    Ok(vec![
        BenchRow::from_times("pgd_attack", &pgd),
        BenchRow::from_times("penalty_pgd_attack", &penalty),
        BenchRow::from_times("cardiff_attack", &cd),
    ])
}

fn bench_toy(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let toy = ToyConfig {
        train: short(&cfg.toy.train, cfg.train_epochs),
        ..cfg.toy.clone()
    };
    let prior = train_toy_prior(&toy)?;
    let pot = MullerBrownPotential::canonical();
    let (lo, hi) = WORKING_BOX;
    let mut rng = Rng::new(derive_seed(cfg.seed, "bench/toy/starts"));
    let starts: Vec<[f64; 2]> = (0..cfg.instances + cfg.warmup)
        .map(|_| [rng.uniform_range(lo[0], hi[0]), rng.uniform_range(lo[1], hi[1])])
        .collect();
    let c = &toy.comparison;
    let m = &prior.model;
    let (n, w) = (cfg.instances, cfg.warmup);
    let gd = time_per_instance(starts.len(), n, w, |i| {
        std::hint::black_box(gradient_descent(&pot, &starts[i], c.gd_step, c.gd_iters, c.tol)?);
        Ok(())
    })?;
    let nr = time_per_instance(starts.len(), n, w, |i| {
        // Singular Hessians end the run early; that is still a timed instance.
        let _ = std::hint::black_box(newton_raphson_scalar(&pot, &starts[i], c.nr_iters, c.tol));
        Ok(())
    })?;
    let cd = time_per_instance(starts.len(), n, w, |i| {
        std::hint::black_box(refine(&starts[i], &pot, m, &m.data_norm, None, &c.refine)?);
        Ok(())
    })?;
    let rows = vec![
        BenchRow::from_times(Method::Gd.name(), &gd),
        BenchRow::from_times(Method::Nr.name(), &nr),
        BenchRow::from_times(Method::Cardiff.name(), &cd),
    ];
    Ok(rows)
}
