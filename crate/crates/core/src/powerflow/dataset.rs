//! Perturbed-load power-flow datasets.
//!
//! On disk a dataset is a directory with `train.csv`, `val.csv`, `test.csv`
//! and `dataset.json`. Each CSV has a header naming the columns
//! `p_<bus>` (PV+PQ buses), `q_<bus>` (PQ buses), then `va_<bus>` and
//! `vm_<bus>` for the unknowns, and one row per sample. Injections are in per
//! unit, angles in radians.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_ybus, solve, GridCase, Injections, Layout};
use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const DATASET_FORMAT: &str = "cardiff-pf-dataset";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub train_spread: f64,
    /// Defaults to `train_spread`.
    pub val_spread: Option<f64>,
    pub test_spread: f64,
    pub seed: u64,
    /// Redraw budget per sample before the generator gives up.
    pub max_attempts: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_val: 500,
            n_test: 1000,
            train_spread: 0.10,
            val_spread: None,
            test_spread: 0.20,
            seed: 0,
            max_attempts: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfSample {
    /// Specified injections: P at PV+PQ buses, Q at PQ buses (pu).
    pub input: Vec<f64>,
    /// Unknowns: Va at PV+PQ buses (rad), Vm at PQ buses (pu).
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfDataset {
    pub format: String,
    pub case: GridCase,
    pub case_hash: String,
    pub config: DatasetConfig,
    /// Draws rejected because Newton-Raphson did not converge.
    pub failed_draws: usize,
    #[serde(skip)]
    pub train: Vec<PfSample>,
    #[serde(skip)]
    pub val: Vec<PfSample>,
    #[serde(skip)]
    pub test: Vec<PfSample>,
}

fn draw(case: &GridCase, spread: f64, rng: &mut Rng) -> Injections {
    let mut scaled = case.clone();
    let nominal: f64 = case.buses.iter().map(|b| b.pd).sum();
    for b in &mut scaled.buses {
        let fp = 1.0 + spread * rng.uniform_range(-1.0, 1.0);
        let fq = 1.0 + spread * rng.uniform_range(-1.0, 1.0);
        b.pd *= fp;
        b.qd *= fq;
    }
    let total: f64 = scaled.buses.iter().map(|b| b.pd).sum();
    let ratio = if nominal != 0.0 { total / nominal } else { 1.0 };
    let slack = case.buses[case.slack_index()].id;
    for g in &mut scaled.generators {
        if g.bus != slack {
            g.pg *= ratio;
        }
    }
    Injections::nominal(&scaled)
}

/// Draws `n` solvable samples; sample `i` uses its own seeded stream so the
/// result does not depend on the worker count.
fn split(case: &GridCase, n: usize, spread: f64, seed: u64, label: &str, cfg: &DatasetConfig) -> Result<(Vec<PfSample>, usize)> {
    let ybus = build_ybus(case)?;
    let layout = Layout::new(case);
    let root = Rng::new(seed).fork(label);
    let results: Vec<Result<(PfSample, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = root.fork(&i.to_string());
            let mut failed = 0;
            for _ in 0..cfg.max_attempts {
                let inj = draw(case, spread, &mut rng);
                match solve(case, &ybus, &inj) {
                    Ok(sol) => {
                        return Ok((
                            PfSample {
                                input: inj.to_vector(&layout),
                                target: sol.state.unknowns(&layout),
                            },
                            failed,
                        ))
                    }
                    Err(Error::NoConvergence { .. }) => failed += 1,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::DatasetInfeasible {
                failed,
                attempted: failed,
            })
        })
        .collect();
    let mut samples = Vec::with_capacity(n);
    let mut failed = 0;
    for r in results {
        let (s, f) = r?;
        samples.push(s);
        failed += f;
    }
    if 2 * failed > failed + n {
        return Err(Error::DatasetInfeasible {
            failed,
            attempted: failed + n,
        });
    }
    Ok((samples, failed))
}

/// Loads scaled by independent uniform factors in `[1 - s, 1 + s]`,
/// non-slack generation rescaled by the total-load ratio, solved from a flat
/// start. Non-converging draws are redrawn.
pub fn generate_dataset(case: &GridCase, cfg: &DatasetConfig) -> Result<PfDataset> {
    if cfg.train_spread < 0.0 || cfg.test_spread < 0.0 || cfg.val_spread.is_some_and(|v| v < 0.0) {
        return Err(Error::InvalidConfig("spreads must be non-negative".into()));
    }
    let (train, f1) = split(case, cfg.n_train, cfg.train_spread, cfg.seed, "train", cfg)?;
    let val_spread = cfg.val_spread.unwrap_or(cfg.train_spread);
    let (val, f2) = split(case, cfg.n_val, val_spread, cfg.seed, "val", cfg)?;
    let (test, f3) = split(case, cfg.n_test, cfg.test_spread, cfg.seed, "test", cfg)?;
    Ok(PfDataset {
        format: DATASET_FORMAT.into(),
        case: case.clone(),
        case_hash: case.content_hash(),
        config: cfg.clone(),
        failed_draws: f1 + f2 + f3,
        train,
        val,
        test,
    })
}

fn header(case: &GridCase) -> String {
    let layout = Layout::new(case);
    let id = |i: &usize| case.buses[*i].id;
    let cols: Vec<String> = layout
        .pvpq
        .iter()
        .map(|i| format!("p_{}", id(i)))
        .chain(layout.pq.iter().map(|i| format!("q_{}", id(i))))
        .chain(layout.pvpq.iter().map(|i| format!("va_{}", id(i))))
        .chain(layout.pq.iter().map(|i| format!("vm_{}", id(i))))
        .collect();
    cols.join(",")
}

fn write_split(path: &Path, case: &GridCase, samples: &[PfSample]) -> Result<()> {
    let mut text = header(case);
    text.push('\n');
    for s in samples {
        let row: Vec<String> = s.input.iter().chain(&s.target).map(|v| format!("{v}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_dataset(dir: &Path, ds: &PfDataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_split(&dir.join("train.csv"), &ds.case, &ds.train)?;
    write_split(&dir.join("val.csv"), &ds.case, &ds.val)?;
    write_split(&dir.join("test.csv"), &ds.case, &ds.test)?;
    std::fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(ds)?)?;
    Ok(())
}

/// Reads one CSV split, checking its header against the case.
pub fn read_split(path: &Path, case: &GridCase) -> Result<Vec<PfSample>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| Error::Data(format!("{} is empty", path.display())))?;
    if head != header(case) {
        return Err(Error::Data(format!("{}: header does not match the case", path.display())));
    }
    let n_in = Layout::new(case).len();
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            let vals: Vec<f64> = l
                .split(',')
                .enumerate()
                .map(|(c, v)| {
                    v.trim().parse().map_err(|_| Error::Parse {
                        line: k + 2,
                        column: c + 1,
                        message: format!("bad number {v:?}"),
                    })
                })
                .collect::<Result<_>>()?;
            if vals.len() != 2 * n_in {
                return Err(Error::Data(format!("{}: row {} has {} fields", path.display(), k + 2, vals.len())));
            }
            Ok(PfSample {
                input: vals[..n_in].to_vec(),
                target: vals[n_in..].to_vec(),
            })
        })
        .collect()
}

/// Reads injection vectors from a CSV whose header names `p_<id>` and
/// `q_<id>` columns; other columns are ignored, so dataset splits work too.
pub fn read_injections(path: &Path, case: &GridCase) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| Error::Data(format!("{} is empty", path.display())))?;
    let names: Vec<&str> = head.split(',').map(str::trim).collect();
    let columns: Vec<usize> = header(case)
        .split(',')
        .take(Layout::new(case).len())
        .map(|want| {
            names
                .iter()
                .position(|n| *n == want)
                .ok_or_else(|| Error::Data(format!("{}: missing column {want}", path.display())))
        })
        .collect::<Result<_>>()?;
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            let fields: Vec<&str> = l.split(',').collect();
            columns
                .iter()
                .map(|&c| {
                    let v = fields.get(c).ok_or_else(|| Error::Parse {
                        line: k + 2,
                        column: c + 1,
                        message: "missing field".into(),
                    })?;
                    v.trim().parse().map_err(|_| Error::Parse {
                        line: k + 2,
                        column: c + 1,
                        message: format!("bad number {v:?}"),
                    })
                })
                .collect()
        })
        .collect()
}

impl PfDataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let mut ds: PfDataset = serde_json::from_str(&std::fs::read_to_string(dir.join("dataset.json"))?)?;
        if ds.format != DATASET_FORMAT {
            return Err(Error::Data("not a power-flow dataset".into()));
        }
        ds.case.validate()?;
        ds.train = read_split(&dir.join("train.csv"), &ds.case)?;
        ds.val = read_split(&dir.join("val.csv"), &ds.case)?;
        ds.test = read_split(&dir.join("test.csv"), &ds.case)?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::powerflow::{mismatch, PowerFlowState};

    fn small(seed: u64, spread: f64) -> DatasetConfig {
        DatasetConfig {
            n_train: 12,
            n_val: 4,
            n_test: 6,
            train_spread: spread,
            test_spread: spread,
            seed,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn zero_spread_reproduces_nominal() {
        let case = GridCase::ieee14();
        let ds = generate_dataset(&case, &small(1, 0.0)).unwrap();
        let y = build_ybus(&case).unwrap();
        let nominal = solve(&case, &y, &Injections::nominal(&case)).unwrap();
        let target = nominal.state.unknowns(&Layout::new(&case));
        for s in ds.train.iter().chain(&ds.test) {
            assert_eq!(s.target, target);
        }
    }

    #[test]
    fn every_target_satisfies_mismatch_tolerance() {
        let case = GridCase::ieee30();
        let ds = generate_dataset(&case, &small(2, 0.2)).unwrap();
        let y = build_ybus(&case).unwrap();
        let layout = Layout::new(&case);
        for s in ds.train.iter().chain(&ds.val).chain(&ds.test) {
            let inj = Injections::from_vector(&layout, case.buses.len(), &s.input).unwrap();
            let mut st = PowerFlowState::flat_start(&case);
            st.set_unknowns(&layout, &s.target);
            let (dp, dq) = mismatch(&layout, &y, &inj, &st);
            assert!(dp.iter().chain(&dq).all(|v| v.abs() < 1e-8));
        }
    }

    #[test]
    fn seeded_and_round_trips_through_disk() {
        let case = GridCase::ieee14();
        let a = generate_dataset(&case, &small(3, 0.1)).unwrap();
        let b = generate_dataset(&case, &small(3, 0.1)).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &a).unwrap();
        let back = PfDataset::load(dir.path()).unwrap();
        assert_eq!(back.train, a.train);
        assert_eq!(back.test, a.test);
    }

    #[test]
    fn hopeless_spread_is_infeasible() {
        let case = GridCase::ieee14();
        let cfg = DatasetConfig { max_attempts: 3, ..small(4, 40.0) };
        assert!(matches!(generate_dataset(&case, &cfg), Err(Error::DatasetInfeasible { .. })));
    }

    #[test]
    fn injections_read_back_from_a_split() {
        let case = GridCase::ieee14();
        let ds = generate_dataset(&case, &small(3, 0.1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let inj = read_injections(&dir.path().join("test.csv"), &case).unwrap();
        let want: Vec<Vec<f64>> = ds.test.iter().map(|s| s.input.clone()).collect();
        assert_eq!(inj, want);
        std::fs::write(dir.path().join("bad.csv"), "p_2,q_4\n0.1,0.2\n").unwrap();
        assert!(matches!(read_injections(&dir.path().join("bad.csv"), &case), Err(Error::Data(_))));
    }
}
