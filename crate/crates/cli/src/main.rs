use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use psreg_cli::{cmd_ablate, cmd_dump_routing, cmd_generate, cmd_register, write_json, Axis, CliError, ExperimentConfig};

/// Prior-guided point cloud registration experiments.
///
/// Log verbosity follows the PSMOE_LOG environment variable
/// (error, warn, info, debug, trace; default warn).
#[derive(Parser, Debug)]
#[command(name = "psreg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config JSON; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// First pair seed. The configured number of pairs is kept.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, CliError> {
        let config = ExperimentConfig::load(self.config.as_deref())?;
        Ok(match self.seed {
            Some(s) => config.with_seed_start(s),
            None => config,
        })
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write scene pairs (XYZ clouds and ground-truth JSON) to a directory.
    Generate(Common),
    /// Register every pair and write a JSON benchmark report.
    Register {
        #[command(flatten)]
        common: Common,
        /// Dataset written by `generate`; scenes are generated in memory when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Sweep one axis and write `ablation.json` and `ablation.txt`.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// tau_o, coding or routing.
        #[arg(long)]
        axis: Axis,
        /// Comma-separated values; each axis has a default sweep.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Register one pair and dump per-slot expert assignments and correspondences.
    DumpRouting {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(common) => {
            let manifest = cmd_generate(&common.config()?, &common.out, common.jobs)?;
            println!("wrote {} pairs to {}", manifest.pairs.len(), common.out.display());
        }
        Command::Register { common, data } => {
            let report = cmd_register(&common.config()?, data.as_deref(), common.jobs)?;
            ensure_parent(&common.out)?;
            write_json(&common.out, &report)?;
            let a = &report.aggregates;
            println!(
                "{} pairs: FMR {:.1}%  IR {:.1}%  RR {:.1}%",
                a.pairs,
                100.0 * a.feature_matching_recall,
                100.0 * a.inlier_ratio,
                100.0 * a.registration_recall
            );
        }
        Command::Ablate { common, axis, values, data } => {
            let values = if values.is_empty() { axis.default_values() } else { values };
            let (table, _) = cmd_ablate(&common.config()?, axis, &values, data.as_deref(), common.jobs)?;
            std::fs::create_dir_all(&common.out).map_err(|e| CliError::Io { path: common.out.clone(), source: e })?;
            write_json(&common.out.join("ablation.json"), &table)?;
            let text = table.to_text();
            std::fs::write(common.out.join("ablation.txt"), &text)
                .map_err(|e| CliError::Io { path: common.out.join("ablation.txt"), source: e })?;
            print!("{text}");
        }
        Command::DumpRouting { common, data } => {
            let config = ExperimentConfig::load(common.config.as_deref())?;
            let seed = match common.seed.or(config.seeds.first().copied()) {
                Some(s) => s,
                None => return Err(CliError::Config("no seed given and the config lists none".into())),
            };
            let dump = cmd_dump_routing(&config, seed, data.as_deref(), &common.out)?;
            println!("wrote {} routing slots to {}", dump.slots.len(), common.out.display());
        }
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Io { path: dir.to_path_buf(), source: e })
        }
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PSMOE_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
