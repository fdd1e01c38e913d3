use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedgtg::{compare, emit_plots, format_comparison, load_config, read_table, run_experiment, PlotKind, DATA_DIR_ENV};

#[derive(Parser)]
#[command(version, about = "Federated class-incremental experiments with twin generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every seed of a config into a new run directory.
    Run {
        config: PathBuf,
        /// Dataset root, overriding the config.
        #[arg(long, env = DATA_DIR_ENV)]
        data_dir: Option<PathBuf>,
        /// Output root, overriding the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Render figures from run directories' results tables.
    Plot {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "accuracy_curve,heatmap,flatness,calibration,corruption,client_size")]
        kinds: Vec<PlotKind>,
        /// Defaults to `<first run dir>/plots`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config, printing the fully defaulted result.
    Validate { config: PathBuf },
    /// Tabulate AIA and AF across runs.
    Compare {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> fedgtg::Result<ExitCode> {
    match command {
        Command::Run {
            config,
            data_dir,
            output_dir,
        } => {
            let mut cfg = load_config(&config)?;
            cfg.data_dir = data_dir.or(cfg.data_dir);
            if let Some(out) = output_dir {
                cfg.output_dir = out;
            }
            let manifest = run_experiment(&cfg)?;
            println!("{}", manifest.run_dir.display());
            let failed = manifest.failed_seeds();
            if failed.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("seeds {failed:?} failed; see {}/diagnostics", manifest.run_dir.display());
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Plot { run_dirs, kinds, out } => {
            let mut rows = Vec::new();
            for dir in &run_dirs {
                rows.extend(read_table(&dir.join("results.csv"))?);
            }
            let out = out.unwrap_or_else(|| run_dirs[0].join("plots"));
            let report = emit_plots(&rows, &kinds, &out)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for p in &report.written {
                println!("{}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            print!("{}", load_config(&config)?.to_toml());
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { run_dirs } => {
            print!("{}", format_comparison(&compare(&run_dirs)?));
            Ok(ExitCode::SUCCESS)
        }
    }
}
