use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use palpbench_core::calibration::{CalibrationPlan, SpotLocalization};
use palpbench_core::dsp::{read_feature_table, write_feature_table, FeatureRow, Mfcc, SensorMask};
use palpbench_core::learn::{stratified_split, Activation, MlpConfig, ModelDoc, SvmConfig};
use palpbench_core::scan::SpokeParams;
use palpbench_core::sim::{load_phantom, presets};
use palpbench_core::{Phantom, RigSim};
use palpbench_session::config::{data_root_from_env, PlanSpec, RigFile, SessionConfig};
use palpbench_session::events::{Delivery, EventKind};
use palpbench_session::persist::SessionState;
use palpbench_session::replay::replay_session;
use palpbench_session::report::{stiffness_csv, write_report};
use palpbench_session::scenarios::{self, boundary_trial, calibrate, collect_dataset, dataset_from_rows};
use palpbench_session::session::{Service, SessionView};
use palpbench_session::store::DataRoot;

#[derive(Parser)]
#[command(name = "palpbench", version, about = "Simulated multimodal palpation bench")]
struct Cli {
    /// Data root; defaults to $PALPBENCH_DATA or ./palpbench-data.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Phantom documents.
    Phantom {
        #[command(subcommand)]
        cmd: PhantomCmd,
    },
    /// Fit the camera-to-stage transform from a laser grid.
    Calibrate(CalibrateArgs),
    /// Create a session and run it to completion.
    Scan {
        #[command(subcommand)]
        pattern: ScanPattern,
    },
    /// Continue a PAUSED, FAULT or interrupted session from its last checkpoint.
    Resume {
        #[arg(long)]
        id: String,
        #[arg(long)]
        pace_ms: Option<u64>,
    },
    /// Palpate every cell of a phantom and write a labelled feature table,
    /// with the same palpation settings a scan would use.
    Collect {
        #[arg(long)]
        phantom: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rig: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a classifier on labelled feature tables.
    Train {
        kind: ModelKind,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Confusion matrix of a stored model on labelled feature tables.
    Eval {
        #[arg(long)]
        model: String,
        #[arg(long, num_args = 1.., required = true)]
        features: Vec<PathBuf>,
    },
    /// PCA scatter, stiffness table and (with a model) confusion matrix.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        features: Vec<PathBuf>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute a session's tables from its raw records and compare.
    Replay {
        #[arg(long)]
        id: String,
        /// Write the recomputed tables here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// HTTP and WebSocket control server.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Reference experiments against the simulator; JSON on stdout.
    Experiment {
        which: Experiment,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

#[derive(Subcommand)]
enum PhantomCmd {
    /// Print a built-in phantom document, or store it with --save.
    Template {
        kind: PhantomKind,
        #[arg(long)]
        save: Option<String>,
    },
    /// Validate and store a phantom document.
    Import {
        file: PathBuf,
        #[arg(long)]
        id: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PhantomKind {
    /// PLA 15%, PLA 5%, TPU and porcine blocks.
    Blocks,
    /// Blocks with PLA 15% stiffness overlapping PLA 5%.
    Multimodal,
    /// TPU core, PLA 5% ring, PLA 15% outside.
    Concentric,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    id: String,
    /// Phantom on the bed; the block template if omitted.
    #[arg(long)]
    phantom: Option<String>,
    /// Use the rig's reported spot pixel instead of segmenting frames.
    #[arg(long)]
    reported: bool,
    /// Laser positions along X and along Y at each Z level.
    #[arg(long, default_value_t = 3)]
    nx: usize,
    #[arg(long, default_value_t = 3)]
    ny: usize,
    #[arg(long)]
    rig: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SessionArgs {
    #[arg(long)]
    id: String,
    #[arg(long)]
    phantom: String,
    #[arg(long)]
    calibration: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// TOML with optional [sim], [palpation] and [mfcc] tables.
    #[arg(long)]
    rig: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pace_ms: u64,
    /// Create the session without running it.
    #[arg(long)]
    no_run: bool,
}

#[derive(Subcommand)]
enum ScanPattern {
    Raster {
        #[command(flatten)]
        session: SessionArgs,
        /// Stage mm, "x,y".
        #[arg(long, value_parser = parse_pair)]
        origin: [f64; 2],
        #[arg(long)]
        nx: usize,
        #[arg(long)]
        ny: usize,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
    },
    Spokes {
        #[command(flatten)]
        session: SessionArgs,
        /// ROI outline in pixels, "u,v;u,v;...".
        #[arg(long, value_parser = parse_pair, value_delimiter = ';', required = true)]
        roi: Vec<[f64; 2]>,
        #[arg(long, default_value_t = 8)]
        n_spokes: usize,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        #[arg(long, default_value_t = 10.0)]
        max_radius: f64,
    },
    Polyline {
        #[command(flatten)]
        session: SessionArgs,
        /// Vertices in pixels, "u,v;u,v;...".
        #[arg(long, value_parser = parse_pair, value_delimiter = ';', required = true)]
        vertices: Vec<[f64; 2]>,
        #[arg(long, default_value_t = 1.0)]
        spacing: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Svm,
    Mlp,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    id: String,
    #[arg(long, num_args = 1.., required = true)]
    features: Vec<PathBuf>,
    /// all, mics, or a '+'-joined subset of force, left, right.
    #[arg(long, default_value = "all")]
    sensors: String,
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// MLP hidden layer widths, comma separated.
    #[arg(long, default_value = "32")]
    hidden: String,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, value_enum, default_value = "relu")]
    activation: Act,
    /// SVM box constraint.
    #[arg(long, default_value_t = 10.0)]
    c: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Act {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Stiffness,
    Multimodal,
    Boundary,
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected 'a,b', got '{s}'"))?;
    let f = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}"));
    Ok([f(a)?, f(b)?])
}

fn load_rig(path: Option<&Path>) -> Result<RigFile> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RigFile::parse(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(RigFile::default()),
    }
}

fn template(kind: PhantomKind) -> Result<Phantom> {
    Ok(match kind {
        PhantomKind::Blocks => scenarios::block_phantom(presets::reference_materials())?,
        PhantomKind::Multimodal => scenarios::multimodal_phantom()?,
        PhantomKind::Concentric => scenarios::concentric_phantom([4.0, 8.0])?,
    })
}

fn read_tables(paths: &[PathBuf]) -> Result<Vec<FeatureRow>> {
    let mut rows = Vec::new();
    for p in paths {
        let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
        rows.extend(read_feature_table(f).with_context(|| format!("reading {}", p.display()))?);
    }
    Ok(rows)
}

fn class_names(rows: &[FeatureRow]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for r in rows {
        if !r.material.is_empty() && !names.contains(&r.material) {
            names.push(r.material.clone());
        }
    }
    names
}

fn labelled(rows: Vec<FeatureRow>) -> Vec<FeatureRow> {
    rows.into_iter()
        .filter(|r| !r.material.is_empty() && r.mask == SensorMask::ALL)
        .collect()
}

fn print_confusion(c: &palpbench_core::learn::ConfusionMatrix) {
    let w = c.class_names.iter().map(String::len).max().unwrap_or(4).max(5);
    print!("{:w$}", "");
    for n in &c.class_names {
        print!(" {n:>w$}");
    }
    println!();
    for (n, row) in c.class_names.iter().zip(&c.counts) {
        print!("{n:w$}");
        for v in row {
            print!(" {v:>w$}");
        }
        println!();
    }
    println!("accuracy {:.4}", c.accuracy());
}

/// Run (or continue) a session, printing progress until the worker ends.
fn drive(svc: &Service, id: &str, pace_ms: Option<u64>) -> Result<SessionView> {
    let live = svc.get(id)?;
    let sub = live.bus.subscribe([EventKind::State, EventKind::PointResult].into_iter().collect());
    let plan_len = live.view().plan_len;
    svc.run(id, pace_ms)?;
    loop {
        match sub.recv_timeout(Duration::from_millis(200)) {
            Some(Delivery::Event(e)) if e.kind == EventKind::PointResult => {
                let p = &e.payload;
                println!(
                    "point {}/{} ({:.3}, {:.3}) {} -> {}",
                    p["index"].as_u64().unwrap_or(0) + 1,
                    plan_len,
                    p["x"].as_f64().unwrap_or(f64::NAN),
                    p["y"].as_f64().unwrap_or(f64::NAN),
                    p["material"].as_str().unwrap_or("?"),
                    p["predicted"].as_str().unwrap_or("-"),
                );
            }
            Some(Delivery::Event(e)) => println!("state {}", e.payload["state"].as_str().unwrap_or("?")),
            Some(Delivery::Gap { .. }) => {}
            None if !live.is_running() => break,
            None => {}
        }
    }
    while let Some(d) = sub.try_recv() {
        if let Delivery::Event(e) = d {
            if e.kind == EventKind::State {
                println!("state {}", e.payload["state"].as_str().unwrap_or("?"));
            }
        }
    }
    Ok(live.wait()?)
}

fn finish(view: SessionView) -> Result<ExitCode> {
    println!("session {}: {} ({}/{} points)", view.id, view.state.as_str(), view.completed, view.plan_len);
    match view.state {
        SessionState::Done => Ok(ExitCode::SUCCESS),
        SessionState::Fault => bail!("session faulted: {}", view.fault.unwrap_or_default()),
        _ => Ok(ExitCode::SUCCESS),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let root_path = cli.data.unwrap_or_else(data_root_from_env);
    let root = DataRoot::open(&root_path)?;
    match cli.cmd {
        Cmd::Phantom { cmd } => match cmd {
            PhantomCmd::Template { kind, save } => {
                let p = template(kind)?;
                match save {
                    Some(id) => {
                        root.save_phantom(&id, &p)?;
                        println!("saved phantom '{id}'");
                    }
                    None => print!("{}", p.to_document()),
                }
            }
            PhantomCmd::Import { file, id } => {
                let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
                let p = load_phantom(&text)?;
                root.save_phantom(&id, &p)?;
                println!("saved phantom '{id}' ({}x{} cells, {} materials)", p.nx(), p.ny(), p.materials().len());
            }
        },
        Cmd::Calibrate(a) => {
            let rig = load_rig(a.rig.as_deref())?;
            let phantom = match &a.phantom {
                Some(id) => root.load_phantom(id)?,
                None => template(PhantomKind::Blocks)?,
            };
            let mut sim_cfg = rig.sim;
            if let Some(s) = a.seed {
                sim_cfg.seed = s;
            }
            let mut sim = RigSim::new(phantom, sim_cfg)?;
            let plan = CalibrationPlan {
                localization: if a.reported {
                    SpotLocalization::Reported
                } else {
                    SpotLocalization::Segmented
                },
                nx: a.nx,
                ny: a.ny,
                ..CalibrationPlan::default()
            };
            let (doc, _) = calibrate(&mut sim, &plan)?;
            root.save_calibration(&a.id, &doc)?;
            let r = &doc.residuals;
            println!(
                "calibration '{}': {} pairs ({}x{} grid per Z level, an assumed layout), scale {:.6}, residual mean {:.4} mm, max {:.4} mm",
                a.id, doc.n_pairs, a.nx, a.ny, doc.transform.scale, r.mean, r.max
            );
        }
        Cmd::Scan { pattern } => {
            let (s, plan) = match pattern {
                ScanPattern::Raster {
                    session,
                    origin,
                    nx,
                    ny,
                    step,
                } => (session, PlanSpec::Raster { origin, nx, ny, step }),
                ScanPattern::Spokes {
                    session,
                    roi,
                    n_spokes,
                    step,
                    max_radius,
                } => (
                    session,
                    PlanSpec::Spokes {
                        roi_px: roi,
                        params: SpokeParams {
                            n_spokes,
                            step,
                            max_radius,
                        },
                    },
                ),
                ScanPattern::Polyline {
                    session,
                    vertices,
                    spacing,
                } => (
                    session,
                    PlanSpec::Polyline {
                        vertices_px: vertices,
                        spacing,
                    },
                ),
            };
            let rig = load_rig(s.rig.as_deref())?;
            let mut cfg = SessionConfig::new(&s.id, &s.phantom, plan);
            cfg.calibration = s.calibration;
            cfg.model = s.model;
            cfg.sim = rig.sim;
            cfg.palpation = rig.palpation;
            cfg.mfcc = rig.mfcc;
            cfg.pace_ms = s.pace_ms;
            if let Some(seed) = s.seed {
                cfg.sim.seed = seed;
            }
            let svc = Service::new(root);
            let view = svc.create(cfg)?;
            println!("created session '{}' with {} points", view.id, view.plan_len);
            if s.no_run {
                return Ok(ExitCode::SUCCESS);
            }
            return finish(drive(&svc, &s.id, None)?);
        }
        Cmd::Resume { id, pace_ms } => {
            let svc = Service::new(root);
            return finish(drive(&svc, &id, pace_ms)?);
        }
        Cmd::Collect { phantom, out, rig, seed } => {
            let rig = load_rig(rig.as_deref())?;
            let p = root.load_phantom(&phantom)?;
            let mut cfg = rig.sim;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let mfcc = Mfcc::new(rig.mfcc)?;
            let settings = rig.palpation;
            let (_, rows) = collect_dataset(&p, &cfg, |_| settings, &mfcc)?;
            let mut buf = Vec::new();
            write_feature_table(&rows, &mut buf)?;
            fs::write(&out, buf).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
        Cmd::Train { kind, args } => {
            let rows = labelled(read_tables(&args.features)?);
            let names = class_names(&rows);
            let data = dataset_from_rows(&rows, &names)?;
            let mask: SensorMask = args.sensors.parse()?;
            let (train_idx, test_idx) = stratified_split(&data.y, args.test_fraction, args.seed);
            let train = data.subset(&train_idx).with_mask(mask);
            let model = match kind {
                ModelKind::Svm => ModelDoc::train_svm(
                    &train,
                    &SvmConfig {
                        c: args.c,
                        ..SvmConfig::default()
                    },
                )?,
                ModelKind::Mlp => {
                    let hidden = args
                        .hidden
                        .split(',')
                        .filter(|t| !t.is_empty())
                        .map(|t| t.trim().parse::<usize>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|e| anyhow!("--hidden: {e}"))?;
                    let activation = match args.activation {
                        Act::Relu => Activation::Relu,
                        Act::Tanh => Activation::Tanh,
                    };
                    ModelDoc::train_mlp(
                        &train,
                        &MlpConfig {
                            hidden,
                            activation,
                            epochs: args.epochs,
                            seed: args.seed,
                            ..MlpConfig::default()
                        },
                    )?
                }
            };
            root.save_model(&args.id, &model)?;
            println!(
                "model '{}' ({}, {}): {} train rows, {} test rows",
                args.id,
                model.kind(),
                mask,
                train_idx.len(),
                test_idx.len()
            );
            if !test_idx.is_empty() {
                print_confusion(&scenarios::confusion(&model, &data.subset(&test_idx))?);
            }
        }
        Cmd::Eval { model, features } => {
            let m = root.load_model(&model)?;
            let rows = labelled(read_tables(&features)?);
            let rows: Vec<FeatureRow> = rows.into_iter().filter(|r| m.class_names.contains(&r.material)).collect();
            let data = dataset_from_rows(&rows, &m.class_names)?;
            print_confusion(&scenarios::confusion(&m, &data)?);
        }
        Cmd::Report { features, model, out } => {
            let rows = read_tables(&features)?;
            let m = model.map(|id| root.load_model(&id)).transpose()?;
            let s = write_report(&rows, m.as_ref(), &out)?;
            print!("{}", stiffness_csv(&s.stiffness));
            if let Some(a) = s.accuracy {
                println!("accuracy {a:.4}");
            }
            println!("report written to {}", out.display());
        }
        Cmd::Replay { id, out } => {
            let r = replay_session(&root, &id)?;
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("features.csv"), &r.features)?;
                if let Some(p) = &r.predictions {
                    fs::write(dir.join("predictions.csv"), p)?;
                }
            }
            println!(
                "replayed {} records: features {}, predictions {}",
                r.records,
                if r.features_match { "identical" } else { "DIFFER" },
                match r.predictions_match {
                    Some(true) => "identical",
                    Some(false) => "DIFFER",
                    None => "n/a",
                }
            );
            if !r.identical() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Serve { addr } => {
            let svc = Arc::new(Service::new(root));
            let rt = tokio::runtime::Runtime::new()?;
            println!("serving {} on http://{addr}", root_path.display());
            rt.block_on(palpbench_session::api::serve(svc, addr))?;
        }
        Cmd::Experiment { which, seeds } => {
            let mfcc = Mfcc::new(Default::default())?;
            let out = match which {
                Experiment::Stiffness => {
                    let cfg = palpbench_core::SimConfig::default();
                    let stats = presets::reference_materials()
                        .into_iter()
                        .map(|m| scenarios::stiffness_trial(m, 10, &cfg))
                        .collect::<Result<Vec<_>, _>>()?;
                    serde_json::to_value(stats)?
                }
                Experiment::Multimodal => {
                    let phantom = scenarios::multimodal_phantom()?;
                    let mut trials = Vec::new();
                    for seed in 0..seeds {
                        let cfg = palpbench_core::SimConfig::default().with_seed(seed);
                        let (data, _) = collect_dataset(&phantom, &cfg, |_| Default::default(), &mfcc)?;
                        trials.push(scenarios::multimodal_trial(&data, seed)?);
                    }
                    serde_json::to_value(trials)?
                }
                Experiment::Boundary => {
                    let trials = (0..seeds).map(|s| boundary_trial(s, &mfcc)).collect::<Result<Vec<_>, _>>()?;
                    serde_json::to_value(trials)?
                }
            };
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
