//! Attacks on the tabular classifier and their evaluation.
//!
//! Budgets are measured in the classifier's z-scored units: a perturbation
//! is admissible when `|x_j - x0_j| / scale_j <= epsilon` for every feature
//! and the record stays inside the schema bounds. All attacks step in
//! physical units and project there, so bounds hold exactly.

mod data;

pub use data::{
    feasible_example, generate_tabular, train_classifier, Classifier, TabularConfig, TabularDataset, TabularSplit,
    TABULAR_FORMAT,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::EpsModel;
use crate::error::{Error, Result};
use crate::guidance::{refine, ConstraintPotential, GammaClip, Injection, RefineConfig};
use crate::potentials::RelationalConstraintSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// l-infinity budget in z-scored units.
    pub epsilon: f64,
    /// Signed-gradient step, z-scored units.
    pub step_size: f64,
    /// PGD steps per cycle.
    pub k: usize,
    pub cycles: usize,
    /// Reverse steps per refinement block.
    pub tau: usize,
    /// Chain index where refinement starts; defaults to `tau`.
    pub start_step: Option<usize>,
    pub lambda: f64,
    pub gamma_clip: GammaClip,
    /// Penalty weight of the penalized baseline.
    pub mu: f64,
    pub seed: u64,
    /// Attacked samples are capped at this count (first correct ones).
    pub max_samples: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.3,
            step_size: 0.03,
            k: 10,
            cycles: 5,
            tau: 20,
            start_step: None,
            lambda: 1e6,
            gamma_clip: GammaClip::None,
            mu: 10.0,
            seed: 0,
            max_samples: 500,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.step_size > 0.0) {
            return Err(Error::InvalidConfig("epsilon and step size must be positive".into()));
        }
        if self.cycles == 0 {
            return Err(Error::InvalidConfig("need at least one cycle".into()));
        }
        if !(self.mu >= 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig("mu and lambda must be non-negative".into()));
        }
        Ok(())
    }

    fn refine_config(&self) -> RefineConfig {
        RefineConfig {
            steps: self.tau,
            start_step: Some(self.start_step.unwrap_or(self.tau)),
            lambda: self.lambda,
            gamma_clip: self.gamma_clip,
            injection: Injection::Clean,
            seed: self.seed,
            ..RefineConfig::default()
        }
    }
}

/// Admissible box for one sample: the budget ball intersected with bounds.
struct Budget {
    lo: Vec<f64>,
    hi: Vec<f64>,
    scale: Vec<f64>,
}

impl Budget {
    fn new(clf: &Classifier, set: &RelationalConstraintSet, x0: &[f64], eps: f64) -> Self {
        let (blo, bhi) = (set.lower_bounds(), set.upper_bounds());
        let scale = clf.norm.scale.clone();
        let lo = (0..x0.len()).map(|j| (x0[j] - eps * scale[j]).max(blo[j])).collect();
        let hi = (0..x0.len()).map(|j| (x0[j] + eps * scale[j]).min(bhi[j])).collect();
        Self { lo, hi, scale }
    }

    /// Clamps into the box; reports whether anything moved.
    fn project(&self, x: &mut [f64]) -> bool {
        let mut moved = false;
        for (j, v) in x.iter_mut().enumerate() {
            let c = v.clamp(self.lo[j], self.hi[j]);
            moved |= c != *v;
            *v = c;
        }
        moved
    }
}

fn signed_ascent(
    clf: &Classifier,
    x: &mut [f64],
    y: f64,
    steps: usize,
    cfg: &AttackConfig,
    budget: &Budget,
    penalty: Option<(&RelationalConstraintSet, f64)>,
) -> Result<()> {
    for _ in 0..steps {
        let z = clf.norm.normalize(x);
        let mut g = clf.loss_gradient_z(&z, y)?;
        if let Some((set, mu)) = penalty {
            if mu != 0.0 {
                let gp = clf.norm.grad_to_normalized(&set.gradient(x));
                for (a, b) in g.iter_mut().zip(&gp) {
                    *a -= mu * b;
                }
            }
        }
        for j in 0..x.len() {
            let s = if g[j] > 0.0 {
                1.0
            } else if g[j] < 0.0 {
                -1.0
            } else {
                0.0
            };
            x[j] += cfg.step_size * budget.scale[j] * s;
        }
        budget.project(x);
    }
    Ok(())
}

/// `k * cycles` projected signed-gradient ascent steps on the logistic loss.
pub fn pgd_attack(
    clf: &Classifier,
    set: &RelationalConstraintSet,
    x0: &[f64],
    y: f64,
    cfg: &AttackConfig,
) -> Result<Vec<f64>> {
    let budget = Budget::new(clf, set, x0, cfg.epsilon);
    let mut x = x0.to_vec();
    signed_ascent(clf, &mut x, y, cfg.k * cfg.cycles, cfg, &budget, None)?;
    Ok(x)
}

/// Same loop on `L - mu * phi`. A stand-in for constrained PGD variants.
pub fn penalty_pgd_attack(
    clf: &Classifier,
    set: &RelationalConstraintSet,
    x0: &[f64],
    y: f64,
    cfg: &AttackConfig,
    mu: f64,
) -> Result<Vec<f64>> {
    let budget = Budget::new(clf, set, x0, cfg.epsilon);
    let mut x = x0.to_vec();
    signed_ascent(clf, &mut x, y, cfg.k * cfg.cycles, cfg, &budget, Some((set, mu)))?;
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub phi_after_pgd: f64,
    pub phi_after_refine: f64,
    pub phi_after_projection: f64,
    /// The budget projection moved the refined point.
    pub projection_binding: bool,
    pub clip_events: usize,
}

/// Alternates `k` PGD steps with a guided refinement block, re-projecting
/// after each refinement. Ends on a refinement.
pub fn cardiff_attack(
    clf: &Classifier,
    set: &RelationalConstraintSet,
    x0: &[f64],
    y: f64,
    cfg: &AttackConfig,
    prior: &EpsModel,
) -> Result<(Vec<f64>, Vec<CycleRecord>)> {
    let budget = Budget::new(clf, set, x0, cfg.epsilon);
    let rcfg = cfg.refine_config();
    let mut x = x0.to_vec();
    let mut log = Vec::with_capacity(cfg.cycles);
    for cycle in 0..cfg.cycles {
        signed_ascent(clf, &mut x, y, cfg.k, cfg, &budget, None)?;
        let phi_after_pgd = set.value(&x);
        let r = refine(&x, set, prior, &prior.data_norm, None, &rcfg)?;
        x = r.x;
        let phi_after_refine = set.value(&x);
        let projection_binding = budget.project(&mut x);
        log.push(CycleRecord {
            cycle,
            phi_after_pgd,
            phi_after_refine,
            phi_after_projection: set.value(&x),
            projection_binding,
            clip_events: r.trajectory.clip_events(),
        });
    }
    Ok((x, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Identity,
    Pgd,
    /// Penalized PGD, the constrained-attack surrogate.
    Penalty,
    Cardiff,
}

impl AttackKind {
    pub fn label(self) -> &'static str {
        match self {
            AttackKind::Identity => "identity",
            AttackKind::Pgd => "pgd",
            AttackKind::Penalty => "penalty-pgd (surrogate)",
            AttackKind::Cardiff => "cardiff",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" => AttackKind::Identity,
            "pgd" => AttackKind::Pgd,
            "penalty" => AttackKind::Penalty,
            "cardiff" => AttackKind::Cardiff,
            other => return Err(Error::InvalidConfig(format!("unknown attack {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    /// Row in the evaluated split.
    pub index: usize,
    pub label: f64,
    pub success: bool,
    pub phi: f64,
    pub breakdown: Vec<f64>,
    /// Largest z-scored coordinate change.
    pub linf: f64,
    pub x_adv: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cycles: Vec<CycleRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub attack: String,
    pub attacked: usize,
    pub still_correct: usize,
    /// Percent of attacked samples still classified correctly.
    pub robust_accuracy: f64,
    pub success_rate: f64,
    pub mean_phi: f64,
    pub max_linf: f64,
    /// Refinement blocks that raised phi without any clip event.
    pub refine_increases: usize,
    pub refine_blocks: usize,
}

impl AttackRow {
    pub fn from_outcomes(attack: &str, outcomes: &[SampleOutcome]) -> Self {
        let attacked = outcomes.len();
        let still_correct = outcomes.iter().filter(|o| !o.success).count();
        let n = attacked.max(1) as f64;
        let blocks = outcomes.iter().flat_map(|o| &o.cycles);
        Self {
            attack: attack.to_string(),
            attacked,
            still_correct,
            robust_accuracy: 100.0 * still_correct as f64 / n,
            success_rate: (attacked - still_correct) as f64 / n,
            mean_phi: outcomes.iter().map(|o| o.phi).sum::<f64>() / n,
            max_linf: outcomes.iter().fold(0.0, |m, o| m.max(o.linf)),
            refine_increases: blocks
                .clone()
                .filter(|c| c.phi_after_refine > c.phi_after_pgd && c.clip_events == 0)
                .count(),
            refine_blocks: blocks.count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackEvaluation {
    pub clean_accuracy: f64,
    /// Split rows that were attacked.
    pub attacked: Vec<usize>,
    pub rows: Vec<AttackRow>,
    pub outcomes: Vec<Vec<SampleOutcome>>,
}

impl AttackEvaluation {
    /// Tab-separated report, one row per attack.
    pub fn table(&self) -> String {
        let mut s = String::from("attack\tattacked\trobust_accuracy_pct\tsuccess_rate\tmean_phi\tmax_linf\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{}\t{:.3}\t{:.4}\t{:.6e}\t{:.6}\n",
                r.attack, r.attacked, r.robust_accuracy, r.success_rate, r.mean_phi, r.max_linf
            ));
        }
        s
    }
}

/// Runs every attack on the correctly classified rows of `split` (the first
/// `cfg.max_samples` of them, in split order).
pub fn evaluate_attacks(
    clf: &Classifier,
    set: &RelationalConstraintSet,
    split: &TabularSplit,
    kinds: &[AttackKind],
    cfg: &AttackConfig,
    prior: Option<&EpsModel>,
) -> Result<AttackEvaluation> {
    cfg.validate()?;
    let mut correct = Vec::new();
    for (i, (x, y)) in split.x.iter().zip(&split.y).enumerate() {
        if clf.predict(x)? == *y {
            correct.push(i);
        }
    }
    let clean_accuracy = correct.len() as f64 / split.len().max(1) as f64;
    let attacked: Vec<usize> = correct.into_iter().take(cfg.max_samples).collect();
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for &kind in kinds {
        if kind == AttackKind::Cardiff && prior.is_none() {
            return Err(Error::InvalidConfig("the cardiff attack needs a noise model".into()));
        }
        let per: Vec<SampleOutcome> = attacked
            .par_iter()
            .map(|&i| {
                let (x0, y) = (&split.x[i], split.y[i]);
                let (x_adv, cycles) = match kind {
                    AttackKind::Identity => (x0.clone(), Vec::new()),
                    AttackKind::Pgd => (pgd_attack(clf, set, x0, y, cfg)?, Vec::new()),
                    AttackKind::Penalty => (penalty_pgd_attack(clf, set, x0, y, cfg, cfg.mu)?, Vec::new()),
                    AttackKind::Cardiff => cardiff_attack(clf, set, x0, y, cfg, prior.expect("checked above"))?,
                };
                let (phi, _, breakdown) = set.evaluate(&x_adv)?;
                let linf = x_adv
                    .iter()
                    .zip(x0)
                    .zip(&clf.norm.scale)
                    .fold(0.0f64, |m, ((a, b), s)| m.max((a - b).abs() / s));
                Ok(SampleOutcome {
                    index: i,
                    label: y,
                    success: clf.predict(&x_adv)? != y,
                    phi,
                    breakdown,
                    linf,
                    x_adv,
                    cycles,
                })
            })
            .collect::<Result<_>>()?;
        rows.push(AttackRow::from_outcomes(kind.label(), &per));
        outcomes.push(per);
    }
    Ok(AttackEvaluation {
        clean_accuracy,
        attacked,
        rows,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Architecture, FeedForwardNet, Normalizer};

    fn linear_classifier(weights: &[f64]) -> Classifier {
        let n = weights.len();
        let mut p = weights.to_vec();
        p.push(0.0);
        let net = FeedForwardNet::from_params(Architecture::mlp(n, vec![], 1), p).unwrap();
        Classifier {
            net,
            norm: Normalizer::identity(n),
        }
    }

    fn wide_set(n: usize) -> RelationalConstraintSet {
        let mut text = String::new();
        for j in 0..n {
            text.push_str(&format!("[[feature]]\nname = \"f{j}\"\nlower = -100.0\nupper = 100.0\n"));
        }
        RelationalConstraintSet::from_toml(&text).unwrap()
    }

    #[test]
    fn constant_model_leaves_input() {
        let clf = linear_classifier(&[0.0, 0.0]);
        let set = wide_set(2);
        let x = pgd_attack(&clf, &set, &[0.5, -0.5], 1.0, &AttackConfig::default()).unwrap();
        assert_eq!(x, vec![0.5, -0.5]);
    }

    #[test]
    fn linear_logit_pushed_to_ball_edge() {
        // y = 0 and w > 0: the loss grows with x, so PGD walks to x0 + eps.
        let clf = linear_classifier(&[2.0]);
        let set = wide_set(1);
        let x = pgd_attack(&clf, &set, &[-1.0], 0.0, &AttackConfig::default()).unwrap();
        assert!((x[0] - (-1.0 + 0.3)).abs() < 1e-12);
    }

    #[test]
    fn zero_penalty_matches_pgd() {
        let clf = linear_classifier(&[1.0, -2.0, 0.5]);
        let set = wide_set(3);
        let cfg = AttackConfig::default();
        let a = pgd_attack(&clf, &set, &[0.1, 0.2, 0.3], 1.0, &cfg).unwrap();
        let b = penalty_pgd_attack(&clf, &set, &[0.1, 0.2, 0.3], 1.0, &cfg, 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn attack_labels_parse() {
        for k in ["identity", "pgd", "penalty", "cardiff"] {
            AttackKind::parse(k).unwrap();
        }
        assert!(AttackKind::parse("cpgd").is_err());
    }
}
