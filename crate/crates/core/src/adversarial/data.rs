//! Synthetic credit-style records and the attacked classifier.
//!
//! Records are built so the built-in schema's constraints hold exactly:
//! every free quantity is quantized to a binary fraction, so the derived
//! sums and products are exact in floating point.
//!
//! On disk: `train.csv`, `val.csv`, `test.csv` (feature columns in schema
//! order, then `label`) and `dataset.json` holding the schema text and the
//! generator settings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    train, Architecture, Example, FeedForwardNet, LossKind, ModelFile, Normalizer, StaticExamples, TrainConfig,
    TrainReport,
};
use crate::numerics::Rng;
use crate::potentials::RelationalConstraintSet;

pub const TABULAR_FORMAT: &str = "cardiff-tabular-dataset";

const CREDIT_FEATURES: [&str; 12] = [
    "loan_amount",
    "term_years",
    "int_rate",
    "annual_interest",
    "annual_income",
    "revol_limit",
    "revol_util",
    "revol_bal",
    "open_acc",
    "closed_acc",
    "total_acc",
    "total_debt",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TabularConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub label_noise: f64,
    /// Hidden widths of the labelling network.
    pub truth_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self {
            n_train: 10_000,
            n_val: 2_000,
            n_test: 5_000,
            label_noise: 0.05,
            truth_hidden: vec![16],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TabularSplit {
    pub x: Vec<Vec<f64>>,
    /// 0 or 1.
    pub y: Vec<f64>,
}

impl TabularSplit {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    pub format: String,
    pub schema: String,
    pub config: TabularConfig,
    #[serde(skip)]
    pub train: TabularSplit,
    #[serde(skip)]
    pub val: TabularSplit,
    #[serde(skip)]
    pub test: TabularSplit,
}

fn quantize(v: f64, bits: i32) -> f64 {
    let s = 2f64.powi(bits);
    (v * s).round() / s
}

fn check_credit(set: &RelationalConstraintSet) -> Result<()> {
    if set.feature_names() != CREDIT_FEATURES {
        return Err(Error::Validation(
            "the record generator only knows the built-in credit feature list".into(),
        ));
    }
    Ok(())
}

/// Fixed record satisfying every built-in constraint.
pub fn feasible_example(set: &RelationalConstraintSet) -> Vec<f64> {
    let mut x = vec![0.0; set.schema.features.len()];
    for (name, v) in [
        ("loan_amount", 10.0),
        ("term_years", 3.0),
        ("int_rate", 0.125),
        ("annual_interest", 1.25),
        ("annual_income", 50.0),
        ("revol_limit", 20.0),
        ("revol_util", 0.5),
        ("revol_bal", 10.0),
        ("open_acc", 5.0),
        ("closed_acc", 3.0),
        ("total_acc", 8.0),
        ("total_debt", 20.0),
    ] {
        if let Some(i) = set.index_of(name) {
            x[i] = v;
        }
    }
    x
}

fn draw_record(rng: &mut Rng) -> Vec<f64> {
    let income = quantize((60f64.ln() + 0.5 * rng.normal()).exp().clamp(15.0, 200.0), 10);
    let loan = quantize((income * rng.uniform_range(0.05, 0.6)).clamp(1.0, 40.0), 10);
    let term = if rng.uniform() < 0.7 { 3.0 } else { 5.0 };
    let rate = (205 + rng.below(1024)) as f64 / 4096.0;
    let limit = quantize(rng.uniform_range(1.0, 100.0), 10);
    let util = quantize(rng.uniform().powf(0.8), 10);
    let open = (1 + rng.below(30)) as f64;
    let closed = rng.below(41) as f64;
    let revol_bal = util * limit;
    vec![
        loan,
        term,
        rate,
        loan * rate,
        income,
        limit,
        util,
        revol_bal,
        open,
        closed,
        open + closed,
        loan + revol_bal,
    ]
}

/// Feasible records labelled by a fixed seeded network (threshold at the
/// median training logit) with a fraction of labels flipped.
pub fn generate_tabular(set: &RelationalConstraintSet, cfg: &TabularConfig) -> Result<TabularDataset> {
    check_credit(set)?;
    if !(0.0..0.5).contains(&cfg.label_noise) {
        return Err(Error::InvalidConfig("label noise must lie in [0, 0.5)".into()));
    }
    if cfg.n_train == 0 {
        return Err(Error::InvalidConfig("need at least one training record".into()));
    }
    let root = Rng::new(cfg.seed);
    let draw = |label: &str, n: usize| {
        let mut rng = root.fork(label);
        (0..n).map(|_| draw_record(&mut rng)).collect::<Vec<_>>()
    };
    let (xtr, xva, xte) = (draw("train", cfg.n_train), draw("val", cfg.n_val), draw("test", cfg.n_test));
    let norm = Normalizer::fit(&xtr)?;
    let truth = FeedForwardNet::new(Architecture::mlp(12, cfg.truth_hidden.clone(), 1), root.fork("truth").seed())?;
    let logit = |x: &Vec<f64>| truth.forward(&norm.normalize(x), None, None).map(|o| o[0]);
    let mut train_logits = xtr.iter().map(logit).collect::<Result<Vec<_>>>()?;
    let mut sorted = train_logits.clone();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[sorted.len() / 2];
    let label = |label: &str, logits: Vec<f64>| {
        let mut rng = root.fork(label).fork("noise");
        logits
            .into_iter()
            .map(|l| {
                let y = (l > threshold) as u8 as f64;
                if rng.uniform() < cfg.label_noise {
                    1.0 - y
                } else {
                    y
                }
            })
            .collect::<Vec<_>>()
    };
    let ytr = label("train", std::mem::take(&mut train_logits));
    let yva = label("val", xva.iter().map(logit).collect::<Result<_>>()?);
    let yte = label("test", xte.iter().map(logit).collect::<Result<_>>()?);
    Ok(TabularDataset {
        format: TABULAR_FORMAT.into(),
        schema: toml::to_string(&set.schema).map_err(|e| Error::Serialization(e.to_string()))?,
        config: cfg.clone(),
        train: TabularSplit { x: xtr, y: ytr },
        val: TabularSplit { x: xva, y: yva },
        test: TabularSplit { x: xte, y: yte },
    })
}

fn write_split(path: &Path, names: &[&str], split: &TabularSplit) -> Result<()> {
    let mut text = names.join(",");
    text.push_str(",label\n");
    for (x, y) in split.x.iter().zip(&split.y) {
        for v in x {
            text.push_str(&format!("{v},"));
        }
        text.push_str(&format!("{y}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn read_split(path: &Path, names: &[&str]) -> Result<TabularSplit> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let expected = format!("{},label", names.join(","));
    if lines.next() != Some(expected.as_str()) {
        return Err(Error::Data(format!("{}: header does not match the schema", path.display())));
    }
    let mut split = TabularSplit::default();
    for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let vals = line
            .split(',')
            .enumerate()
            .map(|(c, v)| {
                v.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: k + 2,
                    column: c + 1,
                    message: format!("bad number {v:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != names.len() + 1 {
            return Err(Error::Data(format!("{}: row {} has {} fields", path.display(), k + 2, vals.len())));
        }
        split.y.push(vals[names.len()]);
        split.x.push(vals[..names.len()].to_vec());
    }
    Ok(split)
}

impl TabularDataset {
    pub fn constraint_set(&self) -> Result<RelationalConstraintSet> {
        RelationalConstraintSet::from_toml(&self.schema)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let set = self.constraint_set()?;
        let names = set.feature_names();
        write_split(&dir.join("train.csv"), &names, &self.train)?;
        write_split(&dir.join("val.csv"), &names, &self.val)?;
        write_split(&dir.join("test.csv"), &names, &self.test)?;
        std::fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut ds: TabularDataset = serde_json::from_str(&std::fs::read_to_string(dir.join("dataset.json"))?)?;
        if ds.format != TABULAR_FORMAT {
            return Err(Error::Data("not a tabular dataset".into()));
        }
        let set = ds.constraint_set()?;
        let names = set.feature_names();
        ds.train = read_split(&dir.join("train.csv"), &names)?;
        ds.val = read_split(&dir.join("val.csv"), &names)?;
        ds.test = read_split(&dir.join("test.csv"), &names)?;
        Ok(ds)
    }
}

/// Binary classifier on z-scored features; output is a single logit.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub net: FeedForwardNet,
    pub norm: Normalizer,
}

impl Classifier {
    pub fn logit_z(&self, z: &[f64]) -> Result<f64> {
        Ok(self.net.forward(z, None, None)?[0])
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        self.logit_z(&self.norm.normalize(x))
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok((self.logit(x)? > 0.0) as u8 as f64)
    }

    /// Gradient of the logistic loss for label `y` with respect to `z`.
    pub fn loss_gradient_z(&self, z: &[f64], y: f64) -> Result<Vec<f64>> {
        let l = self.logit_z(z)?;
        let s = 1.0 / (1.0 + (-l).exp());
        self.net.input_gradient(z, None, None, &[s - y])
    }

    pub fn accuracy(&self, split: &TabularSplit) -> Result<f64> {
        if split.is_empty() {
            return Ok(f64::NAN);
        }
        let mut hits = 0;
        for (x, y) in split.x.iter().zip(&split.y) {
            hits += (self.predict(x)? == *y) as usize;
        }
        Ok(hits as f64 / split.len() as f64)
    }

    pub fn to_file(&self, seed: u64, cfg: &TrainConfig) -> ModelFile {
        let mut f = ModelFile::new("classifier", &self.net, seed);
        f.train = Some(cfg.clone());
        f.input_norm = Some(self.norm.clone());
        f
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        if file.kind != "classifier" {
            return Err(Error::Data(format!("expected a classifier model, found {}", file.kind)));
        }
        let net = file.network()?;
        let norm = file
            .input_norm
            .clone()
            .ok_or_else(|| Error::Data("classifier file has no input normalization".into()))?;
        Ok(Self { net, norm })
    }
}

pub fn train_classifier(
    data: &TabularSplit,
    hidden: Vec<usize>,
    cfg: &TrainConfig,
) -> Result<(Classifier, TrainReport)> {
    let norm = Normalizer::fit(&data.x)?;
    let dim = norm.dim();
    let mut net = FeedForwardNet::new(Architecture::mlp(dim, hidden, 1), cfg.seed)?;
    let examples = StaticExamples(
        data.x
            .iter()
            .zip(&data.y)
            .enumerate()
            .map(|(i, (x, y))| Example {
                x: norm.normalize(x),
                t: None,
                c: None,
                target: vec![*y],
                context: i,
            })
            .collect(),
    );
    let cfg = TrainConfig {
        loss: LossKind::BinaryCrossEntropy,
        ..cfg.clone()
    };
    let report = train(&mut net, &examples, &cfg, None)?;
    Ok((Classifier { net, norm }, report))
}
