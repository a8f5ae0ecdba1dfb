use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use midlmc_cli::commands::{self, ConfigError, Outcome, RunContext};
use midlmc_cli::config::{Config, Mode};

#[derive(Parser)]
#[command(name = "midlmc", version, about = "Multi-index DLMC estimators with importance sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON configuration; defaults reproduce the Kuramoto setting.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    tol_r: Option<f64>,
    #[arg(long, global = true)]
    theta: Option<f64>,
    #[arg(long, global = true)]
    nu: Option<f64>,
    /// Threshold of the mollified indicator observable.
    #[arg(long, global = true)]
    k: Option<f64>,
    /// Control field CSV to use instead of solving one.
    #[arg(long, global = true)]
    control: Option<PathBuf>,
    /// Run without importance sampling.
    #[arg(long, global = true)]
    no_control: bool,
    /// Rates JSON (output of `pilot` or a bare {b, w, s, gamma} object).
    #[arg(long, global = true)]
    rates: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Record wall-clock times (outputs are then no longer reproducible).
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the offline control problem and write the control field.
    SolveControl,
    /// Estimate mixed-difference statistics on the pilot grid and fit rates.
    Pilot,
    /// Run an estimator and write its report.
    Estimate,
    /// Index sets, weights and complexity constants for a rate set.
    Plan {
        /// Index-set levels L.
        #[arg(long, value_delimiter = ',', default_values_t = [2.0, 4.0, 8.0, 16.0])]
        levels: Vec<f64>,
    },
    /// Print the effective configuration as JSON.
    ShowConfig,
}

fn build_context(common: &Common) -> anyhow::Result<RunContext> {
    let mut config = Config::load(common.config.as_deref()).map_err(|e| ConfigError(format!("{e:#}")))?;
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(v) = common.tol_r {
        config.adaptive.tol_r = v;
    }
    if let Some(v) = common.theta {
        config.adaptive.theta = v;
    }
    if let Some(v) = common.nu {
        config.adaptive.nu = v;
    }
    if let Some(k) = common.k {
        config.model.observable = midlmc_cli::config::ObservableConfig::MollifiedIndicator { threshold: k };
    }
    if let Some(m) = common.mode {
        config.adaptive.mode = m;
    }
    if common.no_control {
        config.control_grid.enabled = false;
    }
    config.validate().map_err(|e| ConfigError(format!("{e:#}")))?;
    std::fs::create_dir_all(&common.out)?;
    Ok(RunContext {
        config,
        out: common.out.clone(),
        control_path: if common.no_control { None } else { common.control.clone() },
        rates_path: common.rates.clone(),
        timing: common.timing,
    })
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    let ctx = build_context(&cli.common)?;
    match &cli.command {
        Command::SolveControl => commands::solve_control(&ctx),
        Command::Pilot => commands::pilot(&ctx),
        Command::Estimate => commands::estimate(&ctx),
        Command::Plan { levels } => commands::plan(&ctx, levels),
        Command::ShowConfig => {
            println!("{}", serde_json::to_string_pretty(&ctx.config)?);
            Ok(Outcome::Done)
        }
    }
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<ConfigError>()
            || c.is::<serde_json::Error>()
            || matches!(
                c.downcast_ref::<midlmc::Error>(),
                Some(midlmc::Error::Config(_) | midlmc::Error::InvalidParameter(_) | midlmc::Error::Hierarchy(_) | midlmc::Error::Inadmissible(_))
            )
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("estimator did not reach the tolerance within the budget");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { 3 } else { 1 })
        }
    }
}
