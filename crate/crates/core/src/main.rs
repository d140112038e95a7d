use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedlsr::data::NoiseKind;
use fedlsr::federation::Method;
use fedlsr::harness::{compare_methods, exit_code, run_experiment, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "fedlsr", version, about = "Federated training under noisy labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv and summary.json.
    Run(RunArgs),
    /// Run several methods over several seeds and tabulate final accuracy.
    Compare {
        #[command(flatten)]
        common: RunArgs,
        /// Comma-separated method names.
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<Method>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long = "noise-type")]
    noise_type: Option<NoiseKind>,
    #[arg(long = "noise-ratio")]
    noise_ratio: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for client training (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            method: self.method,
            noise_kind: self.noise_type,
            noise_ratio: self.noise_ratio,
            output: self.out.clone(),
            workers: self.workers,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => run_experiment(&args.config, &args.overrides()),
        Command::Compare {
            common,
            methods,
            seeds,
        } => {
            let result = ExperimentConfig::from_file(&common.config).and_then(|mut cfg| {
                let overrides = common.overrides();
                overrides.apply(&mut cfg);
                let out = cfg.resolve().output.unwrap_or_else(|| "out".into());
                compare_methods(&cfg, &methods, &seeds, &out)
            });
            match result {
                Ok(rows) => {
                    for r in rows {
                        println!("{:<16} {:.4} ± {:.4}", r.method.name(), r.mean, r.std);
                    }
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_code(&e)
                }
            }
        }
    };
    ExitCode::from(code as u8)
}
