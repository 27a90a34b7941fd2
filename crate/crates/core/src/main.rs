use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ice_core::cli::{self, config, signal, ExtractRequest, TruthFile};
use ice_core::error::{IceError, Result};
use ice_core::linalg::CVector;
use ice_core::simbench::{Algorithm, Background, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ice", version, about = "Independent component and vector extraction")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; any subset of keys, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "ICE_SEED")]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Comma-separated epsilon^2 levels.
    #[arg(long, global = true, value_delimiter = ',')]
    epsilon: Option<Vec<f64>>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Extract one source per input mixture.
    Extract {
        /// Signal files, one per mixture.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        algorithm: String,
        /// Initial mixing vectors as `re,im,...`, one per input, separated by `;`.
        /// Defaults to the `init` of --truth.
        #[arg(long)]
        init: Option<String>,
        /// 1 x N signal file with the pilot of piloted-ogive-s.
        #[arg(long)]
        pilot: Option<PathBuf>,
        /// truth.json written by `ice generate`, for SIR reporting.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run the Monte-Carlo sweep and write results and plots.
    Bench,
    /// Run the gradient, identity and equivalence checks.
    Verify,
    /// Write one seeded benchmark trial as signal files.
    Generate {
        #[arg(long, default_value = "gaussian")]
        background: String,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| IceError::Config(format!("{}: {e}", path.display())))?;
            config::resolve(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = c.trials {
        cfg.trials = t;
    }
    if let Some(e) = &c.epsilon {
        cfg.epsilon_sq = e.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<i32> {
    let c = &cli.common;
    if let Some(j) = c.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| IceError::Config(format!("--jobs: {e}")))?;
    }
    let cfg = load_config(c)?;
    match &cli.command {
        Command::Bench => {
            let out = cli::cmd_bench(&cfg, &c.out)?;
            match c.format {
                Format::Csv => print!("{}", out.report.csv()),
                Format::Json => println!("{}", serde_json::to_string_pretty(&out.report).expect("serializable")),
            }
            for f in &out.files {
                eprintln!("wrote {}", f.display());
            }
            Ok(0)
        }
        Command::Verify => {
            let report = ice_core::verify::run_all(cfg.seed);
            match c.format {
                Format::Csv => print!("{}\n{}", cli::verify_csv(&report), cli::verify_text(&report)),
                Format::Json => println!("{}", serde_json::to_string_pretty(&report).expect("serializable")),
            }
            Ok(if report.all_passed() { 0 } else { 1 })
        }
        Command::Generate { background } => {
            let bg: Background = background.parse()?;
            let eps = c.epsilon.as_ref().and_then(|e| e.first().copied()).unwrap_or(0.0);
            let truth = cli::cmd_generate(&cfg, bg, eps, &c.out)?;
            println!("{}", truth.init);
            Ok(0)
        }
        Command::Extract {
            inputs,
            algorithm,
            init,
            pilot,
            truth,
        } => {
            let algorithm: Algorithm = algorithm.parse()?;
            let inputs = inputs.iter().map(|p| signal::read(p)).collect::<Result<Vec<_>>>()?;
            let truth_file = truth.as_deref().map(TruthFile::read).transpose()?;
            let inits = match (init, &truth_file) {
                (Some(s), _) => cli::parse_init(s)?,
                (None, Some(t)) => cli::parse_init(&t.init)?,
                (None, None) => return Err(IceError::Format("--init is required without --truth".into())),
            };
            let pilot = match pilot {
                Some(p) => {
                    let m = signal::read(p)?;
                    if m.rows() != 1 {
                        return Err(IceError::Format(format!("pilot must have one row, has {}", m.rows())));
                    }
                    Some(CVector::new(m.row(0).to_vec()))
                }
                None => None,
            };
            let truth = truth_file
                .map(|t| t.mixtures.iter().map(|m| m.to_truth()).collect::<Result<Vec<_>>>())
                .transpose()?;
            let req = ExtractRequest {
                algorithm,
                inputs,
                inits,
                pilot,
                truth,
                config: cfg,
            };
            let out = cli::extract(&req)?;
            cli::write_extraction(&out, &c.out)?;
            match c.format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&out.report).expect("serializable")),
                Format::Csv => {
                    println!("mixture,sir_db");
                    for (m, mix) in out.report.mixtures.iter().enumerate() {
                        println!("{m},{}", mix.sir_db.map_or(String::new(), |s| format!("{s:.4}")));
                    }
                }
            }
            if !out.report.converged {
                eprintln!("warning: stopped at the iteration cap after {} iterations", out.report.iterations);
            }
            Ok(cli::extract_status(&out.report))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
