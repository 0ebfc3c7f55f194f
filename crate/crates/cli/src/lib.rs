//! `qc`: synthesize pier responses, extract features, train drift regressors and
//! report the feature comparison.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use qc_core::training::FeatureKind;

pub use commands::{
    cmd_evaluate, cmd_extract, cmd_report, cmd_synth, cmd_train, ComparisonReport, ReportRow,
};
pub use config::RunConfig;
pub use error::CliError;

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "QC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "qc", version, about = "Bridge drift regression from accelerometer features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON file of dotted config keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides `seed` from the config
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset manifest written by `qc synth`
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    pub feature: FeatureKind,
    /// Directory written by `qc extract`; features are computed from the records if absent
    #[arg(long)]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset and its manifest
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Extract MFB/MFCC tensors or intensity vectors for every event
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        events: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        feature: FeatureKind,
    },
    /// Train one feature kind into <out>/<feature>/
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Score a trained run on its test ground motions
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Combine the three evaluations under <out> into report.json
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_kind(s: &str) -> Result<FeatureKind, String> {
    s.parse().map_err(|e: qc_core::Error| e.to_string())
}

fn resolve_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Applies `QC_THREADS` to the global pool. Only the first call in a process takes effect.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Synth { common } => {
            let cfg = resolve_config(&common)?;
            let s = cmd_synth(&cfg, &common.out)?;
            println!("wrote {} events to {}", s.events, s.manifest.display());
        }
        Command::Extract { common, events, feature } => {
            let cfg = resolve_config(&common)?;
            let s = cmd_extract(&cfg, &events, feature, &common.out)?;
            println!("{}", s.line());
            if !s.failed.is_empty() {
                for f in &s.failed {
                    eprintln!("qc: {f}");
                }
                let msg = format!("{} events failed to extract", s.failed.len());
                if s.failed.iter().any(|f| matches!(f, CliError::Divergence(_))) {
                    return Err(CliError::Divergence(msg));
                }
                return Err(CliError::Data(msg));
            }
        }
        Command::Train { common, data } => {
            let cfg = resolve_config(&common)?;
            let s = cmd_train(&cfg, &data.events, data.feature, data.features.as_deref(), &common.out)?;
            println!(
                "{}: best epoch {} of {}, val MAE {:.6} -> {}",
                data.feature,
                s.meta.best_epoch.map_or("-".into(), |e| e.to_string()),
                s.meta.epochs_run,
                s.meta.best_val_mae.unwrap_or(f64::NAN),
                s.dir.display()
            );
        }
        Command::Evaluate { common, data } => {
            let cfg = resolve_config(&common)?;
            let r = cmd_evaluate(&cfg, &data.events, data.feature, data.features.as_deref(), &common.out)?;
            println!(
                "{}: test MAE {:.4}% drift over {} events ({:.2} s)",
                r.feature, r.mae_pct, r.n_samples, r.runtime_s
            );
        }
        Command::Report { common } => {
            let cfg = resolve_config(&common)?;
            let r = cmd_report(&cfg, &common.out)?;
            for row in &r.rows {
                println!("{:<10} {:.4}%", row.feature.as_str(), row.test_mae_pct);
            }
            println!(
                "MFB vs intensity: {:+.1}% ({})",
                r.mfb_gain_over_intensity_pct,
                if r.mfb_not_worse_than_intensity { "MFB not worse" } else { "MFB worse" }
            );
        }
    }
    Ok(())
}

/// Parse, run and map the outcome to a process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("qc: {e}");
            e.exit_code()
        }
    }
}
