use std::path::{Path, PathBuf};
use std::time::Instant;

use cardiff::adversarial::{evaluate_attacks, AttackKind, Classifier, TabularDataset, TABULAR_FORMAT};
use cardiff::baselines::outcome_table;
use cardiff::diffusion::EpsModel;
use cardiff::nn::ModelFile;
use cardiff::potentials::RelationalConstraintSet;
use cardiff::powerflow::{
    build_ybus, generate_dataset, read_injections, solve, write_dataset, Injections, Layout, PfDataset,
    DATASET_FORMAT,
};
use cardiff::tracks::attack::{
    attack_config, track_classifier, track_dataset, track_prior, write_attack_outputs, AttackTrackConfig,
};
use cardiff::tracks::bench::{run_bench, BenchConfig, BenchTrack};
use cardiff::tracks::pf::{
    dataset_config, evaluate_pf, load_case, metrics_table, refine_config, train_base, train_pinn, train_prior,
    write_refine_outputs, PfTrackConfig, Predictor,
};
use cardiff::tracks::toy::{judge, run_toy, train_toy_prior, write_outcomes, DemoStarts, ToyConfig, ToyPrior};
use cardiff::tracks::{load_config, mark_incomplete, sha256_file, to_toml, Manifest};
use cardiff::{Error, Result};
use serde::Serialize;

use crate::{AttackArg, Cli, Command, GenData, TrackArg, TrainKind};

fn need<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("missing required option {flag}")))
}

/// Loads the config, applies `--seed`, and handles `--print-config`.
/// Returns `None` when the config was printed.
fn config<T>(cli: &Cli, path: &Option<PathBuf>, seed: impl FnOnce(&mut T) -> &mut u64) -> Result<Option<T>>
where
    T: serde::de::DeserializeOwned + Serialize + Default,
{
    let mut cfg: T = load_config(path.as_deref())?;
    if let Some(s) = cli.seed {
        *seed(&mut cfg) = s;
    }
    if cli.print_config {
        print!("{}", to_toml(&cfg)?);
        return Ok(None);
    }
    Ok(Some(cfg))
}

/// Runs `body` against an output directory and writes its manifest. On
/// failure the directory is marked incomplete.
fn in_out_dir<F>(dir: &Path, command: &str, body: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<Manifest>,
{
    std::fs::create_dir_all(dir)?;
    match body(dir) {
        Ok(m) => m.finish(dir),
        Err(e) => {
            mark_incomplete(dir, command, &e.to_string());
            Err(e)
        }
    }
}

fn load_model(path: &Path) -> Result<ModelFile> {
    ModelFile::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Data(format!("cannot read model {}: {io}", path.display())),
        other => other,
    })
}

fn dataset_format(dir: &Path) -> Result<String> {
    let text = std::fs::read_to_string(dir.join("dataset.json"))
        .map_err(|e| Error::Data(format!("{}: no dataset.json ({e})", dir.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    Ok(v["format"].as_str().unwrap_or_default().to_string())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData { what } => gen_data(cli, what),
        Command::Train {
            kind,
            config,
            data,
            out,
        } => train(cli, *kind, config, data, out),
        Command::Refine {
            model,
            eps,
            pinn,
            data,
            config,
            out,
        } => refine(cli, model, eps, pinn, data, config, out),
        Command::SolvePf { case, injections, out } => solve_pf(cli, case, injections, out),
        Command::Attack {
            kind,
            config,
            out,
            data,
            classifier,
            eps,
        } => attack(cli, *kind, config, out, data, classifier, eps),
        Command::Toy {
            starts,
            out,
            config,
            model,
        } => toy(cli, starts, out, config, model),
        Command::Bench { track, config, out } => bench(cli, *track, config, out),
    }
}

fn gen_data(cli: &Cli, what: &GenData) -> Result<()> {
    match what {
        GenData::Pf { case, config: path, out } => {
            let Some(mut cfg) = config::<PfTrackConfig>(cli, path, |c| &mut c.seed)? else {
                return Ok(());
            };
            if let Some(c) = case {
                cfg.case = c.clone();
            }
            let out = need(out, "--out")?;
            in_out_dir(out, "gen-data pf", |dir| {
                let mut m = Manifest::new("gen-data pf", cfg.seed, &cfg)?;
                if Path::new(&cfg.case).is_file() {
                    m.input_file("case", Path::new(&cfg.case))?;
                }
                let grid = load_case(&cfg.case)?;
                let ds = generate_dataset(&grid, &dataset_config(&cfg))?;
                write_dataset(dir, &ds)?;
                println!(
                    "{}: {} train, {} val, {} test samples ({} failed draws)",
                    grid.name,
                    ds.train.len(),
                    ds.val.len(),
                    ds.test.len(),
                    ds.failed_draws
                );
                Ok(m)
            })
        }
        GenData::Tabular {
            schema,
            config: path,
            out,
        } => {
            let Some(cfg) = config::<AttackTrackConfig>(cli, path, |c| &mut c.seed)? else {
                return Ok(());
            };
            let out = need(out, "--out")?;
            in_out_dir(out, "gen-data tabular", |dir| {
                let mut m = Manifest::new("gen-data tabular", cfg.seed, &cfg)?;
                let set = match schema {
                    Some(p) => {
                        m.input_file("schema", p)?;
                        RelationalConstraintSet::from_toml(&std::fs::read_to_string(p)?)?
                    }
                    None => RelationalConstraintSet::credit(),
                };
                let ds = track_dataset(&cfg, &set)?;
                ds.save(dir)?;
                println!("{} train, {} val, {} test records", ds.train.len(), ds.val.len(), ds.test.len());
                Ok(m)
            })
        }
    }
}

/// Model files are single files; their manifest sits next to them.
fn write_model(out: &Path, file: &ModelFile, mut m: Manifest) -> Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    file.save(out)?;
    let name = out.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
    m.outputs.insert(name.clone(), sha256_file(out)?);
    m.complete = true;
    std::fs::write(out.with_file_name(format!("{name}.manifest.json")), serde_json::to_string_pretty(&m)?)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn train(cli: &Cli, kind: TrainKind, path: &Option<PathBuf>, data: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<()> {
    let command = format!("train {}", format!("{kind:?}").to_lowercase());
    // The tabular config applies to the classifier and to noise models on
    // tabular data; everything else reads the power-flow config.
    let tabular = match (kind, data) {
        (TrainKind::Classifier, _) => true,
        (TrainKind::Eps, Some(d)) => dataset_format(d)? == TABULAR_FORMAT,
        _ => false,
    };
    if tabular {
        let Some(cfg) = config::<AttackTrackConfig>(cli, path, |c| &mut c.seed)? else {
            return Ok(());
        };
        let (data, out) = (need(data, "--data")?, need(out, "--out")?);
        let mut m = Manifest::new(&command, cfg.seed, &cfg)?;
        m.input_file("data", data)?;
        let ds = TabularDataset::load(data)?;
        let file = if kind == TrainKind::Classifier {
            let clf = track_classifier(&ds, &cfg)?;
            println!("validation accuracy {:.4}", clf.accuracy(&ds.val)?);
            clf.to_file(cfg.seed, &cfg.classifier.train)
        } else {
            let (prior, val) = track_prior(&ds, &cfg)?;
            println!("validation noise mse {val:.6}");
            prior.to_file(cfg.seed)
        };
        return write_model(out, &file, m);
    }
    let Some(cfg) = config::<PfTrackConfig>(cli, path, |c| &mut c.seed)? else {
        return Ok(());
    };
    let (data, out) = (need(data, "--data")?, need(out, "--out")?);
    if dataset_format(data)? != DATASET_FORMAT {
        return Err(Error::Data(format!("{} is not a power-flow dataset", data.display())));
    }
    let mut m = Manifest::new(&command, cfg.seed, &cfg)?;
    m.input_file("data", data)?;
    let ds = PfDataset::load(data)?;
    let file = match kind {
        TrainKind::Base => train_base(&ds, &cfg)?.to_file("base", cfg.seed, &cfg.base.train),
        TrainKind::Pinn => train_pinn(&ds, &cfg)?.to_file("pinn", cfg.seed, &cfg.pinn.train),
        _ => {
            let (prior, val) = train_prior(&ds, &cfg)?;
            println!("validation noise mse {val:.6}");
            prior.to_file(cfg.seed)
        }
    };
    write_model(out, &file, m)
}

fn refine(
    cli: &Cli,
    model: &Option<PathBuf>,
    eps: &Option<PathBuf>,
    pinn: &Option<PathBuf>,
    data: &Option<PathBuf>,
    path: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Result<()> {
    let Some(cfg) = config::<PfTrackConfig>(cli, path, |c| &mut c.seed)? else {
        return Ok(());
    };
    let (model, eps, data, out) = (need(model, "--model")?, need(eps, "--eps")?, need(data, "--data")?, need(out, "--out")?);
    in_out_dir(out, "refine", |dir| {
        let mut m = Manifest::new("refine", cfg.seed, &cfg)?;
        m.input_file("model", model)?;
        m.input_file("eps", eps)?;
        m.input_file("data", data)?;
        let base = Predictor::from_file(&load_model(model)?)?;
        let prior = EpsModel::from_file(&load_model(eps)?)?;
        let pinn = match pinn {
            Some(p) => {
                m.input_file("pinn", p)?;
                Some(Predictor::from_file(&load_model(p)?)?)
            }
            None => None,
        };
        let ds = PfDataset::load(data)?;
        let (rows, refined) = evaluate_pf(&ds, &base, pinn.as_ref(), &prior, &refine_config(&cfg))?;
        write_refine_outputs(dir, &rows, &refined, cfg.trajectory_dumps)?;
        print!("{}", metrics_table(&rows));
        Ok(m)
    })
}

fn solve_pf(cli: &Cli, case: &str, injections: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<()> {
    if cli.print_config {
        // No tunable settings beyond the flags.
        return Ok(());
    }
    let grid = load_case(case)?;
    let ybus = build_ybus(&grid)?;
    let layout = Layout::new(&grid);
    let vectors = match injections {
        Some(p) => read_injections(p, &grid)?,
        None => vec![Injections::nominal(&grid).to_vector(&layout)],
    };
    let mut report = String::from("instance\titerations\tmax_mismatch_pu\n");
    let mut timing = String::from("instance\twall_ms\n");
    let mut solutions = String::new();
    println!("instance\titerations\tmax_mismatch_pu\twall_ms");
    for (i, v) in vectors.iter().enumerate() {
        let inj = Injections::from_vector(&layout, grid.buses.len(), v)?;
        let t = Instant::now();
        let r = solve(&grid, &ybus, &inj)?;
        let ms = t.elapsed().as_secs_f64() * 1e3;
        let mismatch = r.mismatch_history.last().copied().unwrap_or(f64::NAN);
        println!("{i}\t{}\t{mismatch:.3e}\t{ms:.4}", r.iterations);
        report.push_str(&format!("{i}\t{}\t{mismatch:.3e}\n", r.iterations));
        timing.push_str(&format!("{i}\t{ms:.6}\n"));
        let x: Vec<String> = r.state.unknowns(&layout).iter().map(|v| format!("{v}")).collect();
        solutions.push_str(&x.join(","));
        solutions.push('\n');
    }
    if let Some(out) = out {
        let seed = cli.seed.unwrap_or(0);
        in_out_dir(out, "solve-pf", |dir| {
            let mut m = Manifest::new("solve-pf", seed, &serde_json::json!({ "case": case }))?;
            if Path::new(case).is_file() {
                m.input_file("case", Path::new(case))?;
            }
            if let Some(p) = injections {
                m.input_file("injections", p)?;
            }
            std::fs::write(dir.join("report.tsv"), &report)?;
            std::fs::write(dir.join("solutions.csv"), &solutions)?;
            std::fs::write(dir.join("timing.tsv"), &timing)?;
            Ok(m)
        })?;
    }
    Ok(())
}

fn attack(
    cli: &Cli,
    kind: AttackArg,
    path: &Option<PathBuf>,
    out: &Option<PathBuf>,
    data: &Option<PathBuf>,
    classifier: &Option<PathBuf>,
    eps: &Option<PathBuf>,
) -> Result<()> {
    let Some(cfg) = config::<AttackTrackConfig>(cli, path, |c| &mut c.seed)? else {
        return Ok(());
    };
    let out = need(out, "--out")?;
    let mut kinds = vec![AttackKind::Identity];
    kinds.extend(match kind {
        AttackArg::Pgd => vec![AttackKind::Pgd],
        AttackArg::Penalty => vec![AttackKind::Penalty],
        AttackArg::Cardiff => vec![AttackKind::Cardiff],
        AttackArg::All => vec![AttackKind::Pgd, AttackKind::Penalty, AttackKind::Cardiff],
    });
    let command = format!("attack {}", format!("{kind:?}").to_lowercase());
    in_out_dir(out, &command, |dir| {
        let mut m = Manifest::new(&command, cfg.seed, &cfg)?;
        let (ds, set) = match data {
            Some(d) => {
                m.input_file("data", d)?;
                let ds = TabularDataset::load(d)?;
                let set = ds.constraint_set()?;
                (ds, set)
            }
            None => {
                let set = RelationalConstraintSet::credit();
                (track_dataset(&cfg, &set)?, set)
            }
        };
        let clf = match classifier {
            Some(p) => {
                m.input_file("classifier", p)?;
                Classifier::from_file(&load_model(p)?)?
            }
            None => {
                let c = track_classifier(&ds, &cfg)?;
                c.to_file(cfg.seed, &cfg.classifier.train).save(&dir.join("classifier.json"))?;
                c
            }
        };
        let prior = match (kinds.contains(&AttackKind::Cardiff), eps) {
            (false, _) => None,
            (true, Some(p)) => {
                m.input_file("eps", p)?;
                Some(EpsModel::from_file(&load_model(p)?)?)
            }
            (true, None) => {
                let (p, _) = track_prior(&ds, &cfg)?;
                p.to_file(cfg.seed).save(&dir.join("eps.json"))?;
                Some(p)
            }
        };
        let eval = evaluate_attacks(&clf, &set, &ds.test, &kinds, &attack_config(&cfg), prior.as_ref())?;
        write_attack_outputs(dir, &eval)?;
        println!("clean accuracy {:.4}", eval.clean_accuracy);
        print!("{}", eval.table());
        Ok(m)
    })
}

fn toy(
    cli: &Cli,
    starts: &Option<PathBuf>,
    out: &Option<PathBuf>,
    path: &Option<PathBuf>,
    model: &Option<PathBuf>,
) -> Result<()> {
    let Some(cfg) = config::<ToyConfig>(cli, path, |c| &mut c.seed)? else {
        return Ok(());
    };
    let out = need(out, "--out")?;
    in_out_dir(out, "toy", |dir| {
        let mut m = Manifest::new("toy", cfg.seed, &cfg)?;
        let demo = match starts {
            Some(p) => {
                m.input_file("starts", p)?;
                DemoStarts::parse(&std::fs::read_to_string(p)?)?
            }
            None => DemoStarts::builtin(),
        };
        let prior = match model {
            Some(p) => {
                m.input_file("model", p)?;
                ToyPrior {
                    model: EpsModel::from_file(&load_model(p)?)?,
                    loss_history: Vec::new(),
                    val_eps_mse: f64::NAN,
                }
            }
            None => {
                let p = train_toy_prior(&cfg)?;
                p.model.to_file(cfg.seed).save(&dir.join("eps.json"))?;
                p
            }
        };
        let outcomes = run_toy(&cfg, &prior, &demo.all())?;
        write_outcomes(dir, &outcomes)?;
        let verdict = judge(&outcomes);
        std::fs::write(dir.join("verdict.json"), serde_json::to_string_pretty(&verdict)?)?;
        print!("{}", outcome_table(&outcomes));
        println!(
            "figure-1 starts reproduced: {}; far-field local endings: {}",
            verdict.figure1.len(),
            verdict.figure2.len()
        );
        Ok(m)
    })
}

fn bench(cli: &Cli, track: TrackArg, path: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<()> {
    let Some(cfg) = config::<BenchConfig>(cli, path, |c| &mut c.seed)? else {
        return Ok(());
    };
    let track = match track {
        TrackArg::Pf => BenchTrack::Pf,
        TrackArg::Attack => BenchTrack::Attack,
        TrackArg::Toy => BenchTrack::Toy,
    };
    let report = run_bench(track, &cfg)?;
    print!("{}", report.table());
    if let Some(out) = out {
        let command = format!("bench {}", format!("{track:?}").to_lowercase());
        in_out_dir(out, &command, |dir| {
            std::fs::write(dir.join("timing.tsv"), report.table())?;
            std::fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&report)?)?;
            Manifest::new(&command, cfg.seed, &cfg)
        })?;
    }
    Ok(())
}
