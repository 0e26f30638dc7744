//! `ringsim`: seeded microring experiments from a config file.

mod artifacts;
mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use artifacts::{sha256_hex, ArtifactSet, Manifest};
use commands::{Ctx, Format, Outcome, EXIT_CONFIG, EXIT_CONVERGENCE};
use config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "ringsim", version, about = "Microring weight-bank simulation and calibration experiments")]
struct Cli {
    /// Experiment config (TOML, or JSON for a `.json` file). Built-in
    /// defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "ringsim-out")]
    out: PathBuf,
    /// Root seed; overrides RINGSIM_SEED and the config's seed.
    #[arg(long, global = true, env = "RINGSIM_SEED")]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Svg,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Single-bank calibration on a generated device, with validation gates.
    CalibrateBasic,
    /// Axon-plus-dendrite calibration with trough merging.
    CalibrateCascaded,
    /// Train the 2-3-1 virtual network on the XOR set.
    TrainXor,
    /// Program a parameter set onto the simulated network and sweep it.
    #[command(name = "sweep-231")]
    Sweep231,
    /// Extinction ratio and coupling per interferometer geometry.
    MdmReport,
    /// Re-emit a spectrum, learning-curve or surface CSV as CSV or SVG.
    Export {
        artifact: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::CalibrateBasic => "calibrate-basic",
            Command::CalibrateCascaded => "calibrate-cascaded",
            Command::TrainXor => "train-xor",
            Command::Sweep231 => "sweep-231",
            Command::MdmReport => "mdm-report",
            Command::Export { .. } => "export",
        }
    }
}

/// Inputs loaded before anything is written.
enum Prepared {
    Plain,
    Network(config::NetworkInputs),
    Mdm(Option<commands::MdmSweep>),
    Export(commands::ExportInput),
}

fn prepare(cmd: &Command, cfg: &ExperimentConfig) -> Result<Prepared, String> {
    Ok(match cmd {
        Command::Sweep231 => Prepared::Network(config::load_network_inputs(cfg)?),
        Command::MdmReport => Prepared::Mdm(match &cfg.mdm.sweep_dir {
            Some(d) => Some(commands::read_sweep_dir(d)?),
            None => None,
        }),
        Command::Export { artifact } => Prepared::Export(commands::read_export_input(artifact)?),
        _ => Prepared::Plain,
    })
}

fn config_error(msg: &str) -> ExitCode {
    eprintln!("ringsim: config error: {msg}");
    ExitCode::from(EXIT_CONFIG as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cfg, config_sha256) = match &cli.config {
        Some(p) => match config::load(p) {
            Ok(c) => (c, std::fs::read(p).ok().map(|b| sha256_hex(&b))),
            Err(e) => return config_error(&e),
        },
        None => (ExperimentConfig::default(), None),
    };
    if let Err(e) = cfg.validate() {
        return config_error(&e);
    }
    let prepared = match prepare(&cli.command, &cfg) {
        Ok(p) => p,
        Err(e) => return config_error(&e),
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let ctx = Ctx {
        cfg: &cfg,
        seed,
        format: match cli.format {
            FormatArg::Csv => Format::Csv,
            FormatArg::Svg => Format::Svg,
        },
    };

    let mut set = match ArtifactSet::create(&cli.out) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("ringsim: {e:#}");
            return ExitCode::from(EXIT_CONVERGENCE as u8);
        }
    };
    let result = match (&cli.command, prepared) {
        (Command::CalibrateBasic, _) => commands::calibrate_basic_cmd(&ctx, &mut set),
        (Command::CalibrateCascaded, _) => commands::calibrate_cascaded_cmd(&ctx, &mut set),
        (Command::TrainXor, _) => commands::train_xor_cmd(&ctx, &mut set),
        (Command::Sweep231, Prepared::Network(inputs)) => commands::sweep_231_cmd(&ctx, &inputs, &mut set),
        (Command::MdmReport, Prepared::Mdm(sweep)) => commands::mdm_report_cmd(&ctx, sweep, &mut set),
        (Command::Export { .. }, Prepared::Export(input)) => commands::export_cmd(&ctx, &input, &mut set),
        _ => unreachable!("prepare matches the command"),
    };
    let outcome = result.unwrap_or_else(|e| match e.downcast_ref::<ringsim_core::Error>() {
        Some(core) => Outcome::from_error(core),
        None => Outcome::not_converged(format!("{e:#}")),
    });

    let manifest = Manifest {
        tool: "ringsim".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cli.command.name().into(),
        seed,
        config_sha256,
        exit_code: outcome.code,
        status: outcome.status.into(),
        message: outcome.message.clone(),
        artifacts: vec![],
    };
    let n_artifacts = set.entries().len();
    let out_dir = set.root().to_path_buf();
    if let Err(e) = set.finish(manifest) {
        eprintln!("ringsim: {e:#}");
        return ExitCode::from(EXIT_CONVERGENCE as u8);
    }
    if outcome.code != 0 {
        eprintln!("ringsim {}: {} ({})", cli.command.name(), outcome.message, outcome.status);
    } else if !cli.quiet {
        println!(
            "ringsim {}: {}; {n_artifacts} artifacts in {}",
            cli.command.name(),
            outcome.message,
            out_dir.display()
        );
    }
    ExitCode::from(outcome.code as u8)
}
