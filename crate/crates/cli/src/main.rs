use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ergoprobe::runner::{self, preset, Diagnostic, ScenarioConfig, PRESETS};

#[derive(Parser)]
#[command(
    name = "ergoprobe",
    version,
    about = "Exact-diagonalization probes of ergodicity breaking"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML scenario file; overrides the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named preset (see `ergoprobe presets`).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Base seed; realization r uses seed + r.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Override the number of disorder realizations.
    #[arg(long, global = true)]
    realizations: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Level statistics: r-statistic and spacing distributions.
    Levels,
    /// Entanglement entropy growth.
    Entropy,
    /// Density of states.
    Dos,
    /// Quantum Fisher information growth and regime fits.
    Qfi,
    /// Long-time fluctuations.
    Flucts,
    /// Fluctuation-dissipation check over a scan.
    Fdt,
    /// PXP scar diagnostics with the configured diagnostics.
    Pxp,
    /// Every diagnostic listed in the configuration.
    Run,
    /// Built-in consistency checks.
    Selftest,
    /// List the available presets.
    Presets,
}

impl Command {
    fn default_preset(&self) -> &'static str {
        match self {
            Command::Levels => "fig1b",
            Command::Entropy => "fig1c",
            Command::Dos => "fig1d",
            Command::Qfi => "fig2a",
            Command::Flucts => "fig4",
            Command::Fdt => "fig3a",
            Command::Pxp | Command::Run | Command::Selftest | Command::Presets => "fig2c",
        }
    }

    fn diagnostic(&self) -> Option<Diagnostic> {
        match self {
            Command::Levels => Some(Diagnostic::Levels),
            Command::Entropy => Some(Diagnostic::Entropy),
            Command::Dos => Some(Diagnostic::Dos),
            Command::Qfi => Some(Diagnostic::Qfi),
            Command::Flucts => Some(Diagnostic::Fluctuations),
            Command::Fdt => Some(Diagnostic::Fdt),
            _ => None,
        }
    }
}

fn load_config(command: &Command, args: &GlobalArgs) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => {
            ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        (None, Some(name)) => preset(name)?,
        (None, None) => preset(command.default_preset())?,
    };
    if let Some(d) = command.diagnostic() {
        cfg.diagnostics = vec![d];
    }
    if matches!(command, Command::Pxp) && !cfg.scenario.is_pxp() {
        bail!("`pxp` needs a PXP scenario, got {}", cfg.scenario.label());
    }
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    if let Some(r) = args.realizations {
        cfg.n_realizations = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Presets => {
            for name in PRESETS {
                let cfg = preset(name)?;
                println!("{name}\t{}\t{:?}", cfg.scenario.label(), cfg.diagnostics);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest => {
            let results = runner::selftest::selftest()?;
            let mut ok = true;
            for r in &results {
                println!(
                    "{} {}: {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                );
                ok &= r.passed;
            }
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        ref command => {
            let cfg = load_config(command, &cli.global)?;
            let summary = runner::run_scenario(&cfg, cli.global.threads)?;
            println!(
                "wrote {} files to {}",
                summary.files.len(),
                summary.output.display()
            );
            if summary.failures > 0 {
                eprintln!(
                    "{} of {} tasks failed; see manifest.json",
                    summary.failures, summary.tasks
                );
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
