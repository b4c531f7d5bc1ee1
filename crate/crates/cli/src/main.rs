use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use flowsandbox::baselines::{BaselineKind, FlowEstimator};
use flowsandbox::experiment::ExperimentConfig;
use flowsandbox::metrics::mean_flow_norm;
use flowsandbox::nets::{checkpoint, FlowExtractorParams};
use flowsandbox::report::{comment_block, evaluate_scenes};
use flowsandbox::scene_gen::{gen_dataset, read_dataset, write_dataset, DatasetKind, MultiSceneConfig, SingleSceneConfig};
use flowsandbox::training::train_loop_with;
use flowsandbox::verify::{format_table, run_checks, standard_checks};
use flowsandbox::{Error, Mechanism, ScenePair};

#[derive(Parser)]
#[command(name = "flowsandbox", version, about = "Synthetic scene flow benchmark and toy training")]
struct Cli {
    /// Worker threads for per-scene parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file.
    Gen(GenArgs),
    /// Evaluate a baseline or a checkpoint on a dataset file.
    Eval(EvalArgs),
    /// Train from an experiment config file.
    Train(TrainArgs),
    /// Run the built-in invariant checks.
    Verify,
    /// One summary row per estimator on a dataset file.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Single,
    Multi,
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    Corr,
    Resample,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Zero,
    Average,
    Knn,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "single")]
    dataset: DatasetArg,
    #[arg(long, default_value_t = 100)]
    scenes: usize,
    /// Points per frame.
    #[arg(long, default_value_t = 512)]
    points: usize,
    /// Surface samples per object; defaults to the generator's.
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long, value_enum, default_value = "resample")]
    mechanism: MechanismArg,
    /// Restrict per-frame motion to translation (single-object only).
    #[arg(long)]
    translation_only: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    baseline: Option<BaselineArg>,
    /// Neighbors for the knn baseline.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory for the checkpoint and the training log.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(clap::Args)]
struct ReportArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Also report this flow checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Config(_) | Error::UnsupportedSize(_) => Failure::Usage(e.to_string()),
            Error::Format { .. } | Error::Io(_) => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn runtime(context: &str, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{context}: {e}"))
}

fn load(path: &Path) -> Result<Vec<ScenePair>, Failure> {
    read_dataset(path).map_err(|e| runtime(&path.display().to_string(), e))
}

fn load_checkpoint(path: &Path) -> Result<FlowExtractorParams, Failure> {
    let arrays = checkpoint::read_arrays(path).map_err(|e| runtime(&path.display().to_string(), e))?;
    FlowExtractorParams::from_checkpoint_arrays(&arrays).map_err(|e| runtime(&path.display().to_string(), e))
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| runtime(&p.display().to_string(), e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn baseline(arg: BaselineArg, k: usize) -> Result<BaselineKind, Failure> {
    let b = match arg {
        BaselineArg::Zero => BaselineKind::Zero,
        BaselineArg::Average => BaselineKind::Average,
        BaselineArg::Knn => BaselineKind::Knn { k },
    };
    b.validate()?;
    Ok(b)
}

fn cmd_gen(a: &GenArgs) -> Outcome {
    if a.scenes == 0 {
        return Err(Failure::Usage("--scenes must be positive".into()));
    }
    let mechanism = match a.mechanism {
        MechanismArg::Corr => Mechanism::Correspondence,
        MechanismArg::Resample => Mechanism::Resampling,
    };
    let kind = match a.dataset {
        DatasetArg::Single => {
            let mut cfg = SingleSceneConfig {
                points_per_frame: a.points,
                mechanism,
                ..Default::default()
            };
            if let Some(p) = a.pool_size {
                cfg.pool_size = p;
            }
            if a.translation_only {
                cfg = cfg.translation_only();
            }
            cfg.validate()?;
            DatasetKind::Single(cfg)
        }
        DatasetArg::Multi => {
            if a.translation_only {
                return Err(Failure::Usage("--translation-only applies to single-object datasets".into()));
            }
            let mut cfg = MultiSceneConfig {
                points_per_frame: a.points,
                mechanism,
                ..Default::default()
            };
            if let Some(p) = a.pool_size {
                cfg.pool_size = p;
            }
            cfg.validate()?;
            DatasetKind::Multi(cfg)
        }
    };
    let scenes = gen_dataset(&kind, a.scenes, a.seed)?;
    write_dataset(&a.out, &scenes).map_err(|e| runtime(&a.out.display().to_string(), e))?;
    let norm = mean_flow_norm(scenes.iter().map(|s| &s.flow))?;
    println!("scenes={} mean_flow_norm={norm}", scenes.len());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Outcome {
    let (estimator, name, settings): (Box<dyn FlowEstimator + Sync>, String, String) = match (&a.checkpoint, a.baseline) {
        (Some(path), _) => {
            let p = load_checkpoint(path)?;
            (Box::new(p), "checkpoint".into(), format!("checkpoint = {:?}\n", path.display().to_string()))
        }
        (None, Some(b)) => {
            let b = baseline(b, a.k)?;
            let name = b.name();
            (Box::new(b), name, format!("baseline = {:?}\n", b.name()))
        }
        (None, None) => return Err(Failure::Usage("need --baseline or --checkpoint".into())),
    };
    let scenes = load(&a.data)?;
    let config = format!("data = {:?}\n{settings}", a.data.display().to_string());
    let report = evaluate_scenes(estimator.as_ref(), &name, &scenes, &config)?;
    let text = match a.format {
        Format::Csv => report.to_csv(),
        Format::Json => report.to_json() + "\n",
    };
    emit(a.out.as_deref(), &text)
}

fn cmd_train(a: &TrainArgs) -> Outcome {
    let cfg = ExperimentConfig::load(&a.config).map_err(|e| match e {
        Error::Io(io) => runtime(&a.config.display().to_string(), io),
        other => Failure::from(other),
    })?;
    let train_cfg = cfg.train_config()?;
    for p in [&cfg.data.train, &cfg.data.val] {
        if !p.is_file() {
            return Err(runtime("dataset not found", p.display()));
        }
    }
    let train = load(&cfg.data.train)?;
    let val = load(&cfg.data.val)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| runtime(&a.out_dir.display().to_string(), e))?;

    let t0 = Instant::now();
    let outcome = train_loop_with(&train_cfg, &train, &val, |r| {
        let embed = r.embed_loss.map(|v| format!(" embed_loss={v:.5}")).unwrap_or_default();
        println!(
            "epoch={} flow_loss={:.5}{embed} val_epe={:.5} val_zepe={:.5} lr={:e} t={:.1}s",
            r.epoch,
            r.flow_loss,
            r.val.epe,
            r.val.zepe,
            r.flow_lr,
            t0.elapsed().as_secs_f64()
        );
    })?;

    let header = comment_block(&cfg.resolved().to_toml());
    let mut log = header.clone();
    log.push_str(&outcome.log.to_csv());
    let write = |name: &str, bytes: &[u8]| {
        let p = a.out_dir.join(name);
        fs::write(&p, bytes).map_err(|e| runtime(&p.display().to_string(), e))
    };
    write("log.csv", log.as_bytes())?;
    let arrays = outcome.flow.checkpoint_arrays();
    let borrowed: Vec<_> = arrays.iter().map(|(n, t)| (n.clone(), t)).collect();
    write("flow.sfnp", &checkpoint::encode_arrays(&borrowed))?;
    if let Some(e) = &outcome.embedder {
        write("embedder.sfnp", &checkpoint::encode_arrays(&e.named()))?;
    }
    let best = outcome.log.best().expect("at least one epoch");
    println!(
        "best_epoch={} val_epe={} val_zepe={} epochs={}",
        outcome.best_epoch,
        best.val.epe,
        best.val.zepe,
        outcome.log.records.len()
    );
    Ok(())
}

fn cmd_verify() -> Outcome {
    let results = run_checks(&standard_checks());
    print!("{}", format_table(&results));
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("failing checks: {}", failed.join(", "))))
    }
}

fn cmd_report(a: &ReportArgs) -> Outcome {
    let scenes = load(&a.data)?;
    let mut rows: Vec<(String, Box<dyn FlowEstimator + Sync>)> = vec![
        ("zero".into(), Box::new(BaselineKind::Zero)),
        ("average".into(), Box::new(BaselineKind::Average)),
    ];
    let knn = baseline(BaselineArg::Knn, a.k)?;
    rows.push((knn.name(), Box::new(knn)));
    if let Some(p) = &a.checkpoint {
        rows.push(("checkpoint".into(), Box::new(load_checkpoint(p)?)));
    }
    let mut config = format!("data = {:?}\nk = {}\n", a.data.display().to_string(), a.k);
    if let Some(p) = &a.checkpoint {
        writeln!(config, "checkpoint = {:?}", p.display().to_string()).unwrap();
    }
    let mut text = comment_block(&config);
    text.push_str("estimator,n_points,epe,zepe,acc01,acc005\n");
    for (name, est) in &rows {
        let r = evaluate_scenes(est.as_ref(), name, &scenes, "")?.aggregate;
        writeln!(text, "{name},{},{},{},{},{}", r.n_points, r.epe, r.zepe, r.acc01, r.acc005).unwrap();
    }
    emit(a.out.as_deref(), &text)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(1);
    }
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Train(a) => cmd_train(a),
        Command::Verify => cmd_verify(),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
