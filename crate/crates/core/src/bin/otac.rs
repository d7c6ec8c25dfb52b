use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use otac_core::config::RunFile;
use otac_core::experiment::{run_simulation, sweep};
use otac_core::kernel::{Dataset, FieldParams, SyntheticField};
use otac_core::rng::{SeedTree, Stream};
use otac_core::suites::{run_suite, Suite, SuiteOptions};
use otac_core::Error;

#[derive(Parser)]
#[command(name = "otac", version, about = "Over-the-air consensus optimization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run a verification suite: definition3, lemma1, assumption3 or equivalence.
    Verify {
        suite: String,
        #[arg(long)]
        samples: Option<usize>,
        /// Split the agents into two unlinked groups.
        #[arg(long)]
        disconnected: bool,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Write a synthetic `x,y,z,value` dataset.
    GenDataset {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn threads(n: Option<usize>) -> Result<(), Failure> {
    if let Some(n) = n {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn cmd_run(config: &Path, out: &Path, seed: Option<u64>, n_threads: Option<usize>) -> Result<bool, Failure> {
    let mut file = RunFile::load(config).map_err(|e| match e {
        Error::Io { .. } => Failure::Usage(e.to_string()),
        other => other.into(),
    })?;
    if let Some(s) = seed {
        file.sim.seed = s;
    }
    threads(n_threads)?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    write(&out.join("resolved_config.toml"), &file.resolved_toml()?)?;
    match &file.sweep {
        Some(sw) => {
            let table = sweep(sw.axis, &sw.values, &file.sim).map_err(Failure::from)?;
            let name = format!("sweep_{}.csv", sw.axis.label().to_ascii_lowercase());
            write(&out.join(&name), &table.to_csv())?;
            println!("wrote {}", out.join(name).display());
        }
        None => {
            let res = run_simulation(&file.sim).map_err(Failure::from)?;
            write(&out.join("nmse.csv"), &res.nmse_csv())?;
            for log in &res.logs {
                let name = format!("metrics_{}.csv", log.scheme.name().to_ascii_lowercase());
                write(&out.join(name), &log.to_csv())?;
                println!("{:>7}  final NMSE {:8.3} dB", log.scheme.name(), log.final_nmse());
                if log.perturbations.checked > 0 {
                    println!(
                        "         perturbations checked {}, bound violations {}",
                        log.perturbations.checked, log.perturbations.violations
                    );
                }
            }
            println!("wrote {}", out.join("nmse.csv").display());
        }
    }
    Ok(true)
}

fn cmd_verify(suite: &str, opts: SuiteOptions, n_threads: Option<usize>) -> Result<bool, Failure> {
    let suite: Suite = suite.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    threads(n_threads)?;
    let reports = run_suite(suite, &opts)?;
    let mut ok = true;
    for r in &reports {
        print!("{r}");
        ok &= r.passed;
    }
    Ok(ok)
}

fn cmd_gen_dataset(seed: u64, rows: usize, out: &Path) -> Result<bool, Failure> {
    if rows == 0 {
        return Err(Failure::Usage("--rows must be at least 1".into()));
    }
    let seeds = SeedTree::new(seed);
    let field = SyntheticField::new(&FieldParams::default(), &mut seeds.stream(Stream::Field, 0, 0))?;
    let data = Dataset::from_field(&field, rows, &mut seeds.stream(Stream::Dataset, 0, 0));
    data.write_csv(out)?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => cmd_run(&config, &out, seed, threads),
        Command::Verify {
            suite,
            samples,
            disconnected,
            seed,
            threads,
        } => cmd_verify(
            &suite,
            SuiteOptions {
                samples,
                disconnected,
                seed,
            },
            threads,
        ),
        Command::GenDataset { seed, rows, out } => cmd_gen_dataset(seed, rows, &out),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
