use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use csahomog::bench::{bench, BenchMatrix};
use csahomog::compare::compare;
use csahomog::run::execute;
use csahomog::{HarnessError, RawConfig};

/// Two-scale homogenization runs, comparisons and benchmarks.
#[derive(Parser)]
#[command(name = "csahomog", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the macroscopic problem described by a configuration file.
    Run {
        config: PathBuf,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        rho: Option<String>,
        #[arg(long)]
        delta: Option<String>,
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Any other configuration key, as key=value; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Coefficient and displacement errors of run A against reference run B.
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
        /// Comma-separated probe names.
        #[arg(long, value_delimiter = ',', required = true)]
        probes: Vec<String>,
        /// Write the error table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every variant of a benchmark matrix.
    Bench { matrix: PathBuf },
}

fn run_command(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run { config, method, rho, delta, seed, out, set } => {
            let mut raw = RawConfig::load(&config)?;
            for (key, value) in [("method", method), ("rho", rho), ("delta", delta), ("seed", seed)] {
                if let Some(v) = value {
                    raw.set(key, &v)?;
                }
            }
            if let Some(out) = out {
                raw.set("out", &out.display().to_string())?;
            }
            for kv in &set {
                let (k, v) = kv.split_once('=').ok_or_else(|| {
                    HarnessError::Config(csahomog::ConfigError { line: None, message: format!("--set '{kv}' is not key=value") })
                })?;
                raw.set(k.trim(), v)?;
            }
            let summary = execute(&raw.resolve()?)?;
            let r = &summary.report;
            println!(
                "ok out={} steps={} evaluations={} micro_solves={} qp_iterations={} total_s={:.3}",
                summary.out.display(),
                r.steps_converged,
                r.evaluations,
                r.micro_solves,
                r.qp_iterations,
                r.total_time.as_secs_f64()
            );
        }
        Command::Compare { dir_a, dir_b, probes, out } => {
            let comparison = compare(&dir_a, &dir_b, &probes)?;
            match out {
                Some(path) => comparison.log.write(&path)?,
                None => print!("{}", comparison.log.to_csv()),
            }
            eprintln!("summary {}", comparison.summary.line());
        }
        Command::Bench { matrix } => {
            let matrix = BenchMatrix::load(&matrix)?;
            let results = bench(&matrix)?;
            println!("ok report={}", matrix.out.join("bench.csv").display());
            if let Some(e) = results.into_values().find_map(Result::err) {
                return Err(e);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // Help and version requests.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.kind().to_string().replace('"', "'");
            eprintln!("{}", e.render().to_string().trim_end());
            eprintln!("error=usage code=2 reason=\"{message}\"");
            return ExitCode::from(2);
        }
    };
    match run_command(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.reason_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
