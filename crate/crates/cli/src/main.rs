//! `factorcli`: run posterior queries, filtering, smoothing, simulation and
//! representation comparisons on factor-graph model files.
//!
//! Exit codes: 0 on success, 2 for input errors (bad flags, unparseable
//! models or data, schema violations), 3 for inference failures at runtime.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use factor_core::FactorError;

mod emit;
mod job;
mod manifest;

use emit::Format;
use job::{Job, Rep};

#[derive(Parser)]
#[command(name = "factorcli", version, about = "Inference on factor-graph model files")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Answer a posterior query on a factor-graph model by variable
    /// elimination.
    Query {
        /// Model file (TOML).
        model: PathBuf,
        /// Query variables, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        query: Vec<String>,
        /// Evidence as name=value pairs, comma separated. Discrete values
        /// are category indices or true/false.
        #[arg(long, value_delimiter = ',')]
        evidence: Vec<String>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Output file; omitted prints to stdout and writes no manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a forward filter over observations from a CSV file.
    Filter(RunArgs),
    /// Run the forward-backward smoother (exact representations only).
    Smooth(RunArgs),
    /// Sample a state and observation trajectory from the model.
    Simulate {
        /// Model file (TOML).
        model: PathBuf,
        /// Number of steps; defaults to the model's built-in horizon.
        #[arg(long, short = 'T')]
        steps: Option<usize>,
        /// Random seed; defaults to the model's built-in seed, else 1.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter the same data under two representations and summarize the
    /// disagreement (RMSE of posterior means, negative log-likelihoods).
    CompareReps {
        /// Model file (TOML).
        model: PathBuf,
        /// Observations CSV.
        #[arg(long)]
        data: PathBuf,
        /// Exactly two representations, comma separated.
        #[arg(long, value_enum, value_delimiter = ',', required = true)]
        reps: Vec<Rep>,
        /// Particle count for sample representations.
        #[arg(long, default_value_t = job::DEFAULT_PARTICLES)]
        particles: usize,
        #[arg(long, default_value_t = job::DEFAULT_SEED)]
        seed: u64,
        /// Output prefix: writes <out>.1-<rep>.csv, <out>.2-<rep>.csv and
        /// <out>.summary.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-execute a recorded run and verify the outputs are byte-identical.
    Rerun {
        /// Manifest JSON written by a previous run.
        manifest: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Model file (TOML).
    model: PathBuf,
    /// Observations CSV; needs one column per observed variable.
    #[arg(long)]
    data: PathBuf,
    /// Posterior representation to filter with.
    #[arg(long, value_enum)]
    rep: Rep,
    /// Particle count for sample representations.
    #[arg(long, default_value_t = job::DEFAULT_PARTICLES)]
    particles: usize,
    /// Random seed; all randomness in a run derives from it.
    #[arg(long, default_value_t = job::DEFAULT_SEED)]
    seed: u64,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Output path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Cmd) -> Result<ExitCode, FactorError> {
    let job = match cmd {
        Cmd::Query {
            model,
            query,
            evidence,
            format,
            out,
        } => Job::Query {
            model,
            query,
            evidence,
            format,
            out,
        },
        Cmd::Filter(a) => filter_job(a, false),
        Cmd::Smooth(a) => filter_job(a, true),
        Cmd::Simulate {
            model,
            steps,
            seed,
            out,
        } => Job::Simulate {
            model,
            steps,
            seed,
            out,
        },
        Cmd::CompareReps {
            model,
            data,
            reps,
            particles,
            seed,
            out,
        } => {
            if reps.len() != 2 {
                return Err(FactorError::ConfigInvalid(format!(
                    "--reps needs exactly two representations, found {}",
                    reps.len()
                )));
            }
            Job::Compare {
                model,
                data,
                reps: (reps[0], reps[1]),
                particles,
                seed,
                out,
            }
        }
        Cmd::Rerun { manifest } => {
            let report = job::rerun(&manifest)?;
            for line in &report.lines {
                println!("{line}");
            }
            return if report.ok {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("error: outputs differ from the recorded run");
                Ok(ExitCode::from(3))
            };
        }
    };

    let produced = job::execute(&job)?;
    if let Some(bytes) = &produced.stdout {
        print!("{}", String::from_utf8_lossy(bytes));
    }
    job::write_outputs(&produced)?;
    Ok(ExitCode::SUCCESS)
}

fn filter_job(a: RunArgs, smoothed: bool) -> Job {
    Job::Filter {
        model: a.model,
        data: a.data,
        rep: a.rep,
        particles: a.particles,
        seed: a.seed,
        format: a.format,
        out: a.out,
        smoothed,
    }
}

/// Input problems (unreadable or malformed inputs, bad configuration) exit
/// with 2; failures inside inference exit with 3. Step-tagged errors report
/// the underlying failure's class.
fn exit_code(e: &FactorError) -> u8 {
    match e.code() {
        "ParseError" | "SchemaError" | "ConfigInvalid" | "MissingVariable" | "DomainMismatch"
        | "EmptyQuery" | "IndexOutOfRange" => 2,
        _ => 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_errors_exit_2_runtime_errors_exit_3() {
        assert_eq!(exit_code(&FactorError::MissingVariable("x".into())), 2);
        assert_eq!(exit_code(&FactorError::ZeroMass("m".into())), 3);
        let at = FactorError::AtStep {
            step: 4,
            source: Box::new(FactorError::Degenerate("d".into())),
        };
        assert_eq!(exit_code(&at), 3);
    }

    #[test]
    fn cli_parses_a_filter_invocation() {
        let cli = Cli::try_parse_from([
            "factorcli", "filter", "m.toml", "--data", "d.csv", "--rep", "hybrid-parametric",
            "--seed", "9", "--out", "o.csv",
        ])
        .unwrap();
        match cli.cmd {
            Cmd::Filter(a) => {
                assert_eq!(a.rep, Rep::HybridParametric);
                assert_eq!(a.seed, 9);
                assert_eq!(a.particles, job::DEFAULT_PARTICLES);
            }
            _ => panic!("parsed the wrong subcommand"),
        }
    }
}
