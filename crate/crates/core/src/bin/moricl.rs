use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mor_icl::experiments::{run, Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "moricl", about = "Mixture-of-regressions experiments; writes CSV and a manifest per run")]
struct Cli {
    #[command(subcommand)]
    command: Option<Cmd>,
    /// Experiment name, as an alternative to the subcommand.
    #[arg(long, global = true)]
    experiment: Option<String>,
    /// TOML config; unset fields take the experiment's defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of seeds (overrides the config).
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand, Clone, Copy)]
#[allow(clippy::enum_variant_names)]
enum Cmd {
    ExpPromptLength,
    ExpNumPrompts,
    ExpDimension,
    ExpRates,
    ExpLsaFlow,
    ExpConstructCheck,
}

impl From<Cmd> for Experiment {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::ExpPromptLength => Experiment::PromptLength,
            Cmd::ExpNumPrompts => Experiment::NumPrompts,
            Cmd::ExpDimension => Experiment::Dimension,
            Cmd::ExpRates => Experiment::Rates,
            Cmd::ExpLsaFlow => Experiment::LsaFlow,
            Cmd::ExpConstructCheck => Experiment::ConstructCheck,
        }
    }
}

fn main_inner(cli: Cli) -> mor_icl::Result<()> {
    let named = match (cli.command, &cli.experiment) {
        (Some(c), _) => Some(Experiment::from(c)),
        (None, Some(name)) => Some(name.parse()?),
        (None, None) => None,
    };
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    let mut cfg = ExperimentConfig::from_toml(&text, named)?;
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Some(s) = cli.seeds {
        cfg.seeds = s;
    }
    let output = run(&cfg, cli.threads)?;
    for path in output.write(&cfg.out)? {
        println!("{}", path.display());
    }
    for r in &output.rates {
        println!("eta={} slope={:.4} r2={:.4}", r.eta, r.fit.slope, r.fit.r2);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
