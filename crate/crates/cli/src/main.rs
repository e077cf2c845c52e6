use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use warpski_cli::config::ExperimentConfig;
use warpski_cli::error::CliError;
use warpski_cli::{experiments, io, validate};

#[derive(Parser)]
#[command(name = "warpski", version, about = "Warped structured kernel interpolation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Warped 2-D squared-exponential benchmark: draw, fit, infer, score.
    Numeric2d(RunArgs),
    /// Two-source quasi-periodic separation (synthetic, recorded or custom).
    Separate(RunArgs),
    /// Timing sweep over n and lattice size.
    Sweep(RunArgs),
    /// Run the invariant and dense-oracle checks.
    Validate {
        /// Only run checks whose `module::name` contains this text.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; its values take precedence over flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cg_tol_inference: Option<f64>,
    #[arg(long)]
    cg_tol_separation: Option<f64>,
    #[arg(long)]
    cg_tol_learning: Option<f64>,
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long)]
    lanczos_steps: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    resample_probes: bool,
    #[arg(long)]
    timing_repeats: Option<usize>,
    /// Skip hyperparameter learning.
    #[arg(long)]
    no_fit: bool,
}

impl RunArgs {
    fn flag_table(&self, kind: &str) -> toml::Table {
        let mut t = toml::Table::new();
        t.insert("kind".into(), kind.into());
        let mut put = |k: &str, v: Option<toml::Value>| {
            if let Some(v) = v {
                t.insert(k.into(), v);
            }
        };
        put("n", self.n.map(|v| (v as i64).into()));
        put("seed", self.seed.map(|v| (v as i64).into()));
        put("cg_tol_inference", self.cg_tol_inference.map(Into::into));
        put("cg_tol_separation", self.cg_tol_separation.map(Into::into));
        put("cg_tol_learning", self.cg_tol_learning.map(Into::into));
        put("probes", self.probes.map(|v| (v as i64).into()));
        put("lanczos_steps", self.lanczos_steps.map(|v| (v as i64).into()));
        put("max_steps", self.max_steps.map(|v| (v as i64).into()));
        put("timing_repeats", self.timing_repeats.map(|v| (v as i64).into()));
        if self.resample_probes {
            t.insert("resample_probes".into(), true.into());
        }
        if self.no_fit {
            for section in ["numeric2d", "separation"] {
                let mut sub = toml::Table::new();
                sub.insert("fit".into(), false.into());
                t.insert(section.into(), sub.into());
            }
        }
        t
    }

    fn config(&self, kind: &str) -> Result<ExperimentConfig, CliError> {
        let file = match &self.config {
            None => toml::Table::new(),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
                    path: path.clone(),
                    source: e,
                })?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::ConfigSyntax(format!("{}: {e}", path.display())))?
            }
        };
        let cfg = ExperimentConfig::merged(self.flag_table(kind), file)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(args: &RunArgs, kind: &str, sweep: bool) -> Result<(), CliError> {
    let cfg = args.config(kind)?;
    let output = if sweep { experiments::run_sweep(&cfg)? } else { experiments::run(&cfg)? };
    experiments::write_outputs(&args.out, &cfg, &output)?;
    for (k, v) in output.report.entries() {
        println!("{k:<45} {v}");
    }
    println!("outputs written to {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Numeric2d(a) => execute(a, "numeric2d", false),
        Command::Separate(a) => execute(a, "separation1d", false),
        Command::Sweep(a) => execute(a, "numeric2d", true),
        Command::Validate { filter, out } => {
            let checks = validate::run_checks(filter.as_deref(), |c| println!("{c}"));
            let failed = checks.iter().filter(|c| !c.passed).count();
            let total: f64 = checks.iter().map(|c| c.seconds).sum();
            println!("{} checks, {failed} failed, {total:.1}s", checks.len());
            let written = out.as_ref().map_or(Ok(()), |dir| {
                let rows = checks
                    .iter()
                    .map(|c| (format!("{}::{}", c.module, c.name), if c.passed { "PASS" } else { "FAIL" }.to_string()))
                    .collect::<Vec<_>>();
                io::save_report_csv(&dir.join("report.csv"), &rows)
            });
            match (written, failed) {
                (Err(e), _) => Err(e),
                (Ok(()), 0) => Ok(()),
                (Ok(()), _) => return ExitCode::FAILURE,
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
