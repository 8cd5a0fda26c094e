use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sixdma::baselines::SchemeId;
use sixdma::scenario::SimConfig;
use sixdma_bench::{run_sweep, write_outputs, BenchError, SweepAxis, SweepOptions, SweepSpec};

#[derive(Parser)]
#[command(name = "sixdma-bench", version, about = "Sum-rate experiments for 6DMA hybrid beamforming")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selected schemes at the configured operating point.
    Run(Common),
    /// Sweep one configuration axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// power_dbm, movable_span_lambda, rot_half_range_deg, paths_per_user or num_users
        #[arg(long)]
        axis: String,
        /// Comma-separated, strictly monotone values.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
        /// Also write one convergence trace per run.
        #[arg(long)]
        traces: bool,
    },
    /// Write convergence traces of the selected schemes.
    Trace(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run.trials`.
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated scheme ids, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "subconn-6dma")]
    scheme: Vec<String>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Skip the additional cold-start runs.
    #[arg(long)]
    no_cold: bool,
}

fn load_config(common: &Common) -> Result<SimConfig, BenchError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            SimConfig::from_toml_str(&text)?
        }
        None => SimConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    if let Some(t) = common.trials {
        cfg.run.trials = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_schemes(names: &[String]) -> Result<Vec<SchemeId>, BenchError> {
    if names.iter().any(|n| n == "all") {
        return Ok(SchemeId::ALL.to_vec());
    }
    let mut out: Vec<SchemeId> = Vec::new();
    for n in names {
        let id: SchemeId = n.parse()?;
        if !out.contains(&id) {
            out.push(id);
        }
    }
    Ok(out)
}

fn execute(cli: Cli) -> Result<(), BenchError> {
    let (common, axis, values, traces, cold) = match cli.command {
        Command::Run(c) => {
            let cold = !c.no_cold;
            (c, None, None, false, cold)
        }
        Command::Sweep {
            common,
            axis,
            values,
            traces,
        } => {
            let cold = !common.no_cold;
            (common, Some(axis.parse::<SweepAxis>()?), Some(values), traces, cold)
        }
        Command::Trace(c) => (c, None, None, true, false),
    };
    let cfg = load_config(&common)?;
    let axis = axis.unwrap_or(SweepAxis::PowerDbm);
    let spec = SweepSpec {
        axis,
        values: values.unwrap_or_else(|| vec![cfg.link.power_dbm]),
        schemes: parse_schemes(&common.scheme)?,
        trials: cfg.run.trials,
        seed: cfg.run.seed,
    };
    let opts = SweepOptions {
        jobs: common.jobs,
        cold,
        keep_reports: traces,
    };
    let out = run_sweep(&spec, &cfg, &opts)?;
    write_outputs(&common.out, &spec, &out)?;
    log::info!("wrote {} rows to {}", out.rows.len(), common.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
