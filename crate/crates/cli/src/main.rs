//! `neckspec`: run the neck-analysis experiments from a config file and flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neckspec::experiments::{run, Experiment, ExperimentOutcome, RunConfig};
use neckspec::NeckError;
use serde_json::json;

#[derive(Parser)]
#[command(name = "neckspec", version, about = "Neck analysis of bubbling harmonic maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write <out>/summary.json and <out>/<experiment>.csv.
    Run(RunArgs),
    /// Parse and validate a config file without running it.
    ValidateConfig { path: PathBuf },
    /// List the experiment names.
    ListExperiments,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment name; overrides the config file's.
    experiment: Option<String>,
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Axial samples per unit length.
    #[arg(long)]
    grid_nt: Option<String>,
    #[arg(long)]
    grid_ntheta: Option<String>,
    /// Comma-separated weight exponents.
    #[arg(long)]
    alpha: Option<String>,
    /// Comma-separated, strictly decreasing.
    #[arg(long)]
    lambdas: Option<String>,
    /// Comma-separated half-lengths (poisson-uniformity) or window sizes M (harmonic-bounds).
    #[arg(long = "L")]
    lengths: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// analytic or dirichlet.
    #[arg(long)]
    source: Option<String>,
    /// Any config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<NeckError> for Failure {
    fn from(e: NeckError) -> Self {
        match e {
            NeckError::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn read_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok(RunConfig::parse(&text)?)
}

fn build_config(a: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match (&a.config, &a.experiment) {
        (Some(p), _) => read_config(p)?,
        (None, Some(name)) => RunConfig::new(name.parse::<Experiment>().map_err(|e| Failure::Config(e.to_string()))?),
        (None, None) => return Err(Failure::Config("no experiment given".into())),
    };
    let overrides = [
        ("experiment", &a.experiment),
        ("grid.nt", &a.grid_nt),
        ("grid.ntheta", &a.grid_ntheta),
        ("alpha", &a.alpha),
        ("lambdas", &a.lambdas),
        ("L", &a.lengths),
        ("samples", &a.samples),
        ("seed", &a.seed),
        ("source", &a.source),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(o) = &a.out {
        cfg.output_path = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("NECKSPEC_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Failure::Config(format!("NECKSPEC_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Run(e.to_string()))?;
    }
    Ok(())
}

fn write_reports(cfg: &RunConfig, out: Result<&ExperimentOutcome, &str>) -> Result<(), Failure> {
    let dir = &cfg.output_path;
    let io = |e: std::io::Error| Failure::Run(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let summary = match out {
        Ok(o) => {
            fs::write(dir.join(format!("{}.csv", cfg.experiment.name())), &o.csv).map_err(io)?;
            let mut s = o.summary_json();
            s["config"] = serde_json::to_value(cfg).map_err(|e| Failure::Run(e.to_string()))?;
            s
        }
        Err(msg) => json!({
            "experiment": cfg.experiment.name(),
            "passed": false,
            "error": msg,
            "config": cfg,
        }),
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Run(e.to_string()))?;
    fs::write(dir.join("summary.json"), text + "\n").map_err(io)?;
    Ok(())
}

fn run_command(a: &RunArgs) -> Result<bool, Failure> {
    let cfg = build_config(a)?;
    configure_threads()?;
    match run(&cfg) {
        Ok(out) => {
            write_reports(&cfg, Ok(&out))?;
            for c in &out.checks {
                println!("{} {} {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
            }
            Ok(out.passed())
        }
        Err(NeckError::Config(m)) => Err(Failure::Config(m)),
        Err(e) => {
            let msg = e.to_string();
            write_reports(&cfg, Err(&msg))?;
            Err(Failure::Run(msg))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::ListExperiments => {
            for e in Experiment::ALL {
                println!("{:<22} {}", e.name(), e.description());
            }
            Ok(true)
        }
        Command::ValidateConfig { path } => read_config(path).map(|c| {
            println!("{}: ok ({})", path.display(), c.experiment);
            true
        }),
        Command::Run(a) => run_command(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
