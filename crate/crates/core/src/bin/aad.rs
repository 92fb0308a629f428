use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trf_aad::cli::{cmd_compare, cmd_decode, cmd_synth, cmd_validate};
use trf_aad::io::RunConfig;
use trf_aad::pipeline::Estimator;
use trf_aad::{AadError, Result};

/// Auditory attention decoding from single-channel EEG.
#[derive(Parser)]
#[command(name = "aad", version)]
struct Cli {
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scene seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scene SNR in dB.
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<f64>,
    /// Overrides the estimator: seq_lmmse, ls_2sec or ls_60sec_overlap.
    #[arg(long)]
    estimator: Option<Estimator>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scene and its ground-truth sidecar.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run the decoding protocol on one scene.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        scene: PathBuf,
    },
    /// Run all estimators on one or more scenes.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
    },
    /// Check a configuration file.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_json(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.scene.seed = seed;
    }
    if let Some(snr) = common.snr_db {
        cfg.scene.snr_db = snr;
    }
    if let Some(est) = common.estimator {
        cfg.estimator = est;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let quiet = cli.quiet;
    let say = |line: String| {
        if !quiet {
            println!("{line}");
        }
    };
    match cli.command {
        Command::Synth { common, out_dir } => {
            let out = cmd_synth(&load(&common)?, &out_dir)?;
            say(format!("{}\n{}", out.scene.display(), out.truth.display()));
        }
        Command::Decode { common, out_dir, scene } => {
            let res = cmd_decode(&scene, &load(&common)?, &out_dir)?;
            say(format!(
                "{} accuracy {:.2}% ({} test trials, chance threshold {:.2}%)",
                res.estimator.name(),
                res.accuracy,
                res.n_test_trials,
                res.significance_level
            ));
        }
        Command::Compare { common, out_dir, scenes } => {
            let table = cmd_compare(&scenes, &load(&common)?, &out_dir)?;
            say(table.to_csv().trim_end().to_owned());
        }
        Command::Validate { config } => {
            let diagnostics = cmd_validate(Path::new(&config))?;
            if !diagnostics.is_empty() {
                return Err(AadError::Config(diagnostics.join("\n")));
            }
            say("ok".into());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let env = env_logger::Env::new().filter_or("AAD_LOG", "info");
    let mut logger = env_logger::Builder::from_env(env);
    if cli.quiet {
        logger.filter_level(log::LevelFilter::Error);
    }
    logger.init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
