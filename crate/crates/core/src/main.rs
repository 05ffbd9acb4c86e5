use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use async_credit::config::RunConfig;
use async_credit::run::{
    ablation_cells, default_run_id, load_learner, output_root, train_run, write_traces, AblationAxis, FINAL_CHECKPOINT,
};
use async_credit::verify::{run_verify, VerifyOptions};
use async_credit::vsp::Fault;
use async_credit::Error;

#[derive(Parser)]
#[command(name = "async-credit", version, about = "Credit assignment for asynchronous multi-agent RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Run the self-check suite.
    Verify(VerifyArgs),
    /// Train every cell of one ablation axis.
    Ablate(AblateArgs),
    /// Write per-step credit traces from a checkpoint.
    Trace(TraceArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shorthand for --env.name.
    #[arg(long = "env")]
    env: Option<String>,
    /// Shorthand for --mixer.family.
    #[arg(long = "mixer")]
    mixer: Option<String>,
    /// Shorthand for --train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for --wrapper.mode.
    #[arg(long)]
    wrapper: Option<String>,
    /// Output root (default: $ASYNC_CREDIT_OUTDIR, else ./runs).
    #[arg(long)]
    outdir: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
    /// Dotted overrides such as --mixer.order=3 or train.gamma=0.9.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// A checkpoint file or a run directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
}

#[derive(Args)]
struct VerifyArgs {
    /// Write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct AblateArgs {
    /// proxy, order or head_mode.
    #[arg(long)]
    axis: String,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct TraceArgs {
    /// A checkpoint file or a run directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV (default: the run's traces/ directory or ./trace.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Usage and configuration problems exit with 2, everything else with 1.
enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Run(e.to_string()),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

impl ConfigArgs {
    fn resolve(&self) -> std::result::Result<RunConfig, Failure> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        let short = [
            ("env.name", self.env.clone()),
            ("mixer.family", self.mixer.clone()),
            ("train.seed", self.seed.map(|s| s.to_string())),
            ("wrapper.mode", self.wrapper.clone()),
        ];
        pairs.extend(short.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
        for raw in &self.overrides {
            let body = raw.trim_start_matches("--");
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("override `{raw}` is not KEY=VALUE")))?;
            pairs.push((k.to_string(), v.to_string()));
        }
        if let Some(p) = &self.config {
            if !p.is_file() {
                return Err(Failure::Usage(format!("config file {} not found", p.display())));
            }
        }
        RunConfig::load(self.config.as_deref(), &pairs).map_err(usage)
    }
}

fn checkpoint_path(p: &Path) -> std::result::Result<PathBuf, Failure> {
    let file = if p.is_dir() { p.join(FINAL_CHECKPOINT) } else { p.to_path_buf() };
    if !file.is_file() {
        return Err(Failure::Usage(format!("checkpoint {} not found", file.display())));
    }
    Ok(file)
}

fn train(args: TrainArgs) -> Outcome {
    let cfg = args.cfg.resolve()?;
    let root = output_root(args.cfg.outdir.as_deref());
    let id = args.cfg.run_id.clone().unwrap_or_else(|| default_run_id(&cfg));
    let out = train_run(&cfg, &root, &id, |r| {
        eprintln!("step {:>7}  return {:>8.3} ± {:.3}  eps {:.3}", r.step, r.test_mean_return, r.test_return_std, r.epsilon);
    })?;
    let last = out.rows.last().map(|r| r.test_mean_return).unwrap_or(f64::NAN);
    println!("{}  final_mean_return={last}", out.dir.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Outcome {
    let path = checkpoint_path(&args.checkpoint)?;
    let (_, mut learner) = load_learner(&path)?;
    let e = learner.evaluate(args.episodes)?;
    let text = serde_json::json!({
        "checkpoint": path.display().to_string(),
        "episodes": args.episodes,
        "mean_return": e.mean,
        "std_return": e.std,
        "success_rate": e.success_rate,
    });
    println!("{text}");
    Ok(())
}

fn verify(args: VerifyArgs) -> Outcome {
    let fault = match args.inject_fault.as_deref() {
        None => None,
        Some("proxy_decouple") => Some(Fault::ProxyDecouple),
        Some(f) => return Err(Failure::Usage(format!("unknown fault `{f}`"))),
    };
    let report = run_verify(&VerifyOptions {
        fault,
        seed: args.seed,
        ..Default::default()
    });
    for g in &report.groups {
        println!(
            "{} {:<28} checked={:<8} max_dev={:<12.3e} {}",
            if g.passed { "PASS" } else { "FAIL" },
            g.name,
            g.checked,
            g.max_deviation,
            g.detail
        );
    }
    if let Some(p) = &args.json {
        let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Run(e.to_string()))?;
        std::fs::write(p, text).map_err(|e| Failure::Run(format!("{}: {e}", p.display())))?;
    }
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report.groups.iter().filter(|g| !g.passed).map(|g| g.name.as_str()).collect();
        Err(Failure::Run(format!("verification failed: {}", failed.join(", "))))
    }
}

fn ablate(args: AblateArgs) -> Outcome {
    let axis: AblationAxis = args.axis.parse().map_err(usage)?;
    let base = args.cfg.resolve()?;
    let cells = ablation_cells(axis, &base).map_err(usage)?;
    let root = output_root(args.cfg.outdir.as_deref());
    let id = args
        .cfg
        .run_id
        .clone()
        .unwrap_or_else(|| format!("ablate-{}-{}", args.axis, default_run_id(&base)));
    let dir = root.join(&id);
    let mut summary = Vec::new();
    for (label, cfg) in cells {
        eprintln!("cell {label}");
        let out = train_run(&cfg, &dir, &label, |_| {})?;
        let last = out.rows.last().map(|r| (r.test_mean_return, r.test_return_std)).unwrap_or((f64::NAN, f64::NAN));
        let best = out.rows.iter().map(|r| r.test_mean_return).fold(f64::NEG_INFINITY, f64::max);
        summary.push((label, last.0, last.1, best));
    }
    let p = dir.join("summary.csv");
    let mut f = std::fs::File::create(&p).map_err(|e| Failure::Run(format!("{}: {e}", p.display())))?;
    let mut text = String::from("cell,final_mean_return,final_return_std,best_mean_return\n");
    println!("{:<12} {:>12} {:>10} {:>12}", "cell", "final_mean", "final_std", "best_mean");
    for (label, m, s, b) in &summary {
        text.push_str(&format!("{label},{m},{s},{b}\n"));
        println!("{label:<12} {m:>12.4} {s:>10.4} {b:>12.4}");
    }
    f.write_all(text.as_bytes()).map_err(|e| Failure::Run(format!("{}: {e}", p.display())))?;
    println!("{}", dir.display());
    Ok(())
}

fn trace(args: TraceArgs) -> Outcome {
    let path = checkpoint_path(&args.checkpoint)?;
    let (_, mut learner) = load_learner(&path)?;
    let out = args.out.clone().unwrap_or_else(|| {
        if args.checkpoint.is_dir() {
            args.checkpoint.join(format!("traces/trace_seed{}.csv", args.seed))
        } else {
            PathBuf::from("trace.csv")
        }
    });
    if let Some(d) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d).map_err(|e| Failure::Run(format!("{}: {e}", d.display())))?;
    }
    let rows = write_traces(&out, &mut learner, args.episodes, args.seed)?;
    println!("{}  rows={rows}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Verify(a) => verify(a),
        Command::Ablate(a) => ablate(a),
        Command::Trace(a) => trace(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
