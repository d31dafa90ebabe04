use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lscs::harness::{self, ExperimentConfig, HarnessError, StabilityCheckConfig};
use lscs::measurement::{MeasurementMatrix, RipEstimator, RipMode, RipTable};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_ASSERTION: u8 = 3;

#[derive(Parser)]
#[command(name = "lscs", version, about = "Sparse sequence reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory for CSV files and the manifest.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config trial count.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Compute and cache RIP constants for a seeded Gaussian matrix.
    RipTable {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest sparsity level tabulated.
        #[arg(long)]
        max_s: usize,
        #[arg(long, value_enum, default_value_t = Mode::Exhaustive)]
        mode: Mode,
        /// Subset budget (exhaustive) or random subsets per entry (sampled).
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the stability conditions for a JSON config.
    CheckStability {
        config: PathBuf,
        /// Cached RIP table to start from; updated in place.
        #[arg(long)]
        rip_table: Option<PathBuf>,
        /// Exit with status 3 when the conditions do not hold.
        #[arg(long)]
        strict: bool,
    },
    /// Print the library version.
    Version,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exhaustive,
    Sampled,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn harness_fail(e: HarnessError) -> ExitCode {
    fail(if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME }, e)
}

fn run(config: &Path, out: &Path, seed: Option<u64>, trials: Option<usize>) -> ExitCode {
    let mut cfg = match ExperimentConfig::load(config) {
        Ok(c) => c,
        Err(e) => return harness_fail(e),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Err(e) = cfg.validate() {
        return harness_fail(e);
    }
    let output = match harness::run(&cfg) {
        Ok(o) => o,
        Err(e) => return harness_fail(e),
    };
    let manifest = match harness::write_outputs(&cfg, &output, out) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    match serde_json::to_string_pretty(&manifest.summary) {
        Ok(s) => println!("{s}"),
        Err(e) => return fail(EXIT_RUNTIME, e),
    }
    if output.summary.assertion_failed() {
        return fail(EXIT_ASSERTION, "run reported violations; see manifest.json");
    }
    ExitCode::SUCCESS
}

fn rip_table(n: usize, m: usize, seed: u64, max_s: usize, mode: Mode, budget: Option<u64>, out: &Path) -> ExitCode {
    if max_s == 0 || max_s > m {
        return fail(EXIT_CONFIG, format!("max-s must be in 1..={m}"));
    }
    let a = match MeasurementMatrix::gaussian(n, m, seed) {
        Ok(a) => a,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let mode = match (mode, budget) {
        (Mode::Exhaustive, Some(b)) => RipMode::Exhaustive { budget: b },
        (Mode::Exhaustive, None) => RipMode::default(),
        (Mode::Sampled, b) => RipMode::Sampled {
            trials: b.unwrap_or(1000) as usize,
            seed,
        },
    };
    let mut est = RipEstimator::new(&a, mode);
    for s in 1..=max_s {
        if let Err(e) = est.delta(s) {
            return fail(EXIT_RUNTIME, e);
        }
        for sp in s..=max_s.min(m - s) {
            if let Err(e) = est.theta(s, sp) {
                return fail(EXIT_RUNTIME, e);
            }
        }
    }
    write_table(est.table(), out)
}

fn write_table(t: &RipTable, out: &Path) -> ExitCode {
    let json = match serde_json::to_string_pretty(t) {
        Ok(j) => j,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    if let Err(e) = std::fs::write(out, json) {
        return fail(EXIT_RUNTIME, format!("{}: {e}", out.display()));
    }
    ExitCode::SUCCESS
}

fn check_stability(config: &Path, table_path: Option<&Path>, strict: bool) -> ExitCode {
    let text = match std::fs::read_to_string(config) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_CONFIG, format!("{}: {e}", config.display())),
    };
    let cfg: StabilityCheckConfig = match serde_json::from_str(&text) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let table = match table_path.filter(|p| p.exists()) {
        Some(p) => match std::fs::read_to_string(p).map_err(|e| e.to_string()).and_then(|s| {
            serde_json::from_str::<RipTable>(&s).map_err(|e| e.to_string())
        }) {
            Ok(t) => Some(t),
            Err(e) => return fail(EXIT_CONFIG, format!("{}: {e}", p.display())),
        },
        None => None,
    };
    let (out, table) = match harness::check_stability(&cfg, table) {
        Ok(r) => r,
        Err(e) => return harness_fail(e),
    };
    if let Some(p) = table_path {
        let code = write_table(&table, p);
        if code != ExitCode::SUCCESS {
            return code;
        }
    }
    match serde_json::to_string_pretty(&out) {
        Ok(s) => println!("{s}"),
        Err(e) => return fail(EXIT_RUNTIME, e),
    }
    let holds = out.report.as_ref().is_some_and(|r| r.all_hold);
    if strict && !holds {
        return fail(EXIT_ASSERTION, "stability conditions do not hold");
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            trials,
        } => run(&config, &out, seed, trials),
        Command::RipTable {
            n,
            m,
            seed,
            max_s,
            mode,
            budget,
            out,
        } => rip_table(n, m, seed, max_s, mode, budget, &out),
        Command::CheckStability {
            config,
            rip_table,
            strict,
        } => check_stability(&config, rip_table.as_deref(), strict),
        Command::Version => {
            println!("lscs {}", env!("CARGO_PKG_VERSION"));
            ExitCode::SUCCESS
        }
    }
}
