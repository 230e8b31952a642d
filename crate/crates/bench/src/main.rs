use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dualmhe_bench::{run_benchmark, Method, Overrides};

#[derive(Parser)]
#[command(
    name = "bench",
    version,
    about = "Monte-Carlo benchmark of constrained minimum-variance estimators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write mse.csv, costs.csv and summary.json.
    Run {
        /// Scenario JSON file.
        #[arg(long)]
        config: PathBuf,
        /// Number of Monte-Carlo paths.
        #[arg(long)]
        paths: Option<usize>,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Moving-horizon length N.
        #[arg(long)]
        horizon: Option<usize>,
        /// Comma-separated subset of kf,mhe,cmhe,cfie,memhe.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write trajectories.csv with every path.
        #[arg(long)]
        dump_trajectories: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            paths,
            seed,
            horizon,
            methods,
            out,
            dump_trajectories,
        } => {
            let overrides = Overrides {
                paths,
                seed,
                horizon,
                methods,
                out,
                dump_trajectories,
            };
            match run_benchmark(&config, &overrides) {
                Ok(outputs) => {
                    for f in &outputs.files {
                        println!("wrote {}", f.display());
                    }
                    println!("dataset digest {}", outputs.summary.dataset_digest);
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("bench: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
