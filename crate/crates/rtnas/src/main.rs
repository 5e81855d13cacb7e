use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use rtnas::cli;
use rtnas::pareto::ValidRegion;

#[derive(Parser)]
#[command(
    name = "rtnas",
    version,
    about = "Latency-constrained differentiable architecture search"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the throughput-constrained differentiable search.
    Search {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's global seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to the config's out_dir, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode converged coefficients into a final multi-path architecture.
    Decode {
        #[arg(long)]
        config: PathBuf,
        /// Coefficient file written by `search`.
        #[arg(long)]
        params: PathBuf,
        /// Number of paths in the decoded network.
        #[arg(long)]
        nl: usize,
        /// Decoding method.
        #[arg(long, value_parser = ["greedy", "ga"])]
        method: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Uniformly sample discrete architectures and evaluate them.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// Number of samples.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the Pareto frontier over evaluated point files.
    Pareto {
        /// Points files produced by `decode` or `sample`.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Valid-region latency bound (ms).
        #[arg(long, default_value_t = 50.0)]
        max_latency: f64,
        /// Valid-region throughput floor (FPS).
        #[arg(long, default_value_t = 22.0)]
        min_throughput: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Search { config, seed, out } => cli::cmd_search(&config, seed, out.as_deref()),
        Cmd::Decode {
            config,
            params,
            nl,
            method,
            seed,
            out,
        } => cli::cmd_decode(&config, &params, nl, &method, seed, out.as_deref()),
        Cmd::Sample { config, n, seed, out } => cli::cmd_sample(&config, n, seed, out.as_deref()),
        Cmd::Pareto {
            files,
            max_latency,
            min_throughput,
            out,
        } => cli::cmd_pareto(
            &files,
            ValidRegion {
                max_latency_ms: max_latency,
                min_throughput_fps: min_throughput,
            },
            out.as_deref(),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
