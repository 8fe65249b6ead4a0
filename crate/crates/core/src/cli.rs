//! Command-line front end. `run` parses arguments, dispatches to the
//! trainer and returns the process exit status.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::error::Error;
use crate::lstm::CellVariant;
use crate::model::TrainConfig;
use crate::trainer::{self, GradCheckReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Relative tolerance that `gradcheck` holds every function kind to.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(
    name = "treegrad",
    version,
    about = "Tree-structured LSTM on a sine wave with a block-constrained backward pass"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write its per-step log.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Per-step log CSV.
        #[arg(long, default_value = "train.csv")]
        out: PathBuf,
    },
    /// Train once per interval length; logs get an `_i<intvl>` suffix.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated interval lengths.
        #[arg(long, value_delimiter = ',', default_value = "5,10,15", value_parser = positive_usize)]
        intvls: Vec<usize>,
        /// Train the configurations on separate threads (pollutes timings).
        #[arg(long)]
        parallel: bool,
        /// Base path for the per-interval log CSVs.
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Train, then generate the wave in closed loop.
    Predict {
        #[command(flatten)]
        config: ConfigArgs,
        /// Closed-loop steps after the prime.
        #[arg(long, default_value_t = 100, value_parser = positive_usize)]
        horizon: usize,
        /// Sine samples used to prime the state.
        #[arg(long, default_value_t = 32, value_parser = positive_usize)]
        prime: usize,
        /// Prediction CSV.
        #[arg(long, default_value = "predict.csv")]
        out: PathBuf,
        /// Optional per-step training log CSV.
        #[arg(long)]
        log_out: Option<PathBuf>,
    },
    /// Compare autodiff against central differences for every function kind.
    Gradcheck {
        /// Hidden width of the LSTM cases.
        #[arg(long, default_value_t = 4, value_parser = positive_usize)]
        hidden: usize,
        /// Random instances per case.
        #[arg(long, default_value_t = 20, value_parser = positive_u64)]
        seeds: u64,
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-6, value_parser = positive_f64)]
        step: f64,
    },
}

/// Flags that override [`TrainConfig`] fields.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Steps between state initializations.
    #[arg(long, default_value_t = TrainConfig::default().intvl, value_parser = positive_usize)]
    pub intvl: usize,
    #[arg(long, default_value_t = TrainConfig::default().epochs, value_parser = positive_usize)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().hidden, value_parser = positive_usize)]
    pub hidden: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr, value_parser = positive_f64)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().seed)]
    pub seed: u64,
    /// Leaf samples per block.
    #[arg(long, default_value_t = TrainConfig::default().seq_len, value_parser = positive_usize)]
    pub seq_len: usize,
    /// Samples in the standardization batch.
    #[arg(long, default_value_t = TrainConfig::default().batch_m, value_parser = positive_usize)]
    pub batch_m: usize,
    /// Variance floor of the standardization.
    #[arg(long, default_value_t = TrainConfig::default().epsilon, value_parser = positive_f64)]
    pub eps: f64,
    /// Phase increment between sine samples.
    #[arg(long, default_value_t = TrainConfig::default().sine_step, value_parser = positive_f64)]
    pub sine_step: f64,
    /// Half-width of the uniform weight initialization.
    #[arg(long, default_value_t = TrainConfig::default().init_scale, value_parser = positive_f64)]
    pub init_scale: f64,
    /// Tree-cell variant: as_printed or symmetric.
    #[arg(long, default_value_t = TrainConfig::default().eq17_variant)]
    pub eq17: CellVariant,
    /// Global gradient-norm bound, or `off`.
    #[arg(long, default_value = "off", value_parser = parse_clip)]
    pub clip: Clip,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Clip(pub Option<f64>);

impl ConfigArgs {
    pub fn to_config(&self) -> TrainConfig {
        TrainConfig {
            intvl: self.intvl,
            epochs: self.epochs,
            hidden: self.hidden,
            lr: self.lr,
            seed: self.seed,
            seq_len: self.seq_len,
            sine_step: self.sine_step,
            batch_m: self.batch_m,
            epsilon: self.eps,
            eq17_variant: self.eq17,
            clip: self.clip.0,
            init_scale: self.init_scale,
        }
    }
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be positive".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn positive_u64(s: &str) -> Result<u64, String> {
    positive_usize(s).map(|v| v as u64)
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .parse()
        .map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err("must be a positive finite number".into())
    }
}

fn parse_clip(s: &str) -> Result<Clip, String> {
    if s.eq_ignore_ascii_case("off") {
        Ok(Clip(None))
    } else {
        positive_f64(s).map(|v| Clip(Some(v)))
    }
}

/// `run.csv` with suffix `_i5` becomes `run_i5.csv`.
pub fn suffixed_path(base: &Path, suffix: &str) -> PathBuf {
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}{suffix}"),
    };
    base.with_file_name(name)
}

/// Help text of the subcommand named in `args`, or of the whole program.
fn flag_help(args: &[OsString]) -> String {
    let mut command = Cli::command();
    command.build();
    let named = args
        .iter()
        .skip(1)
        .filter_map(|a| a.to_str())
        .find(|a| command.find_subcommand(a).is_some())
        .map(str::to_owned);
    match named.and_then(|n| command.find_subcommand_mut(&n).cloned()) {
        Some(mut sub) => sub.render_help().to_string(),
        None => command.render_help().to_string(),
    }
}

/// Parses `args` (program name first) and runs the subcommand. Summaries go
/// to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let display_only =
                matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let rendered = e.render().to_string();
            if display_only {
                let _ = write!(out, "{rendered}");
                return EXIT_OK;
            }
            let _ = write!(err, "{rendered}\n{}", flag_help(&args));
            return EXIT_USAGE;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Argument(_) => EXIT_USAGE,
                _ => EXIT_FAILURE,
            }
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32, Error> {
    let started = Instant::now();
    match command {
        Command::Train { config, out: path } => {
            let config = config.to_config();
            config.validate()?;
            let (_, log) = trainer::train(config).map_err(|f| {
                let _ = f.log.write_csv(&path);
                f.error
            })?;
            log.write_csv(&path)?;
            writeln!(
                out,
                "final loss   {:.6e}",
                log.rows.last().map_or(f64::NAN, |r| r.loss)
            )?;
            writeln!(out, "total time   {:.3} s", started.elapsed().as_secs_f64())?;
            writeln!(out, "log          {}", path.display())?;
            Ok(EXIT_OK)
        }
        Command::Sweep {
            config,
            intvls,
            parallel,
            out: path,
        } => {
            let base = config.to_config();
            for &intvl in &intvls {
                TrainConfig {
                    intvl,
                    ..base.clone()
                }
                .validate()?;
            }
            let mut diverged = false;
            for result in trainer::sweep(&base, &intvls, parallel)? {
                let file = suffixed_path(&path, &format!("_i{}", result.intvl));
                match result.outcome {
                    Ok(log) => {
                        log.write_csv(&file)?;
                        writeln!(
                            out,
                            "intvl {:>3}  final loss {:.6e}  mean step {:.4} ms  {}",
                            result.intvl,
                            log.rows.last().map_or(f64::NAN, |r| r.loss),
                            log.mean_elapsed_ms(),
                            file.display()
                        )?;
                    }
                    Err(failure) => {
                        failure.log.write_csv(&file)?;
                        diverged = true;
                        writeln!(
                            out,
                            "intvl {:>3}  failed: {}  {}",
                            result.intvl,
                            failure,
                            file.display()
                        )?;
                    }
                }
            }
            writeln!(out, "total time   {:.3} s", started.elapsed().as_secs_f64())?;
            Ok(if diverged { EXIT_FAILURE } else { EXIT_OK })
        }
        Command::Predict {
            config,
            horizon,
            prime,
            out: path,
            log_out,
        } => {
            let config = config.to_config();
            config.validate()?;
            let (chain, log) = trainer::train(config.clone()).map_err(|f| f.error)?;
            if let Some(log_path) = &log_out {
                log.write_csv(log_path)?;
            }
            let prime = trainer::gen_sine(prime, config.sine_step, 0.0)?;
            let trace = trainer::predict(&chain, &prime, horizon)?;
            trace.write_csv(&path)?;
            let generated = trace.generated();
            let error = generated
                .iter()
                .map(|r| (r.predicted - r.t.sin()).abs())
                .sum::<f64>()
                / generated.len() as f64;
            writeln!(
                out,
                "final loss   {:.6e}",
                log.rows.last().map_or(f64::NAN, |r| r.loss)
            )?;
            writeln!(
                out,
                "mean |err|   {error:.6e} over {} generated steps",
                generated.len()
            )?;
            writeln!(out, "total time   {:.3} s", started.elapsed().as_secs_f64())?;
            writeln!(out, "predictions  {}", path.display())?;
            if let Some(log_path) = &log_out {
                writeln!(out, "log          {}", log_path.display())?;
            }
            Ok(EXIT_OK)
        }
        Command::Gradcheck {
            hidden,
            seeds,
            step,
        } => {
            let reports = trainer::gradient_suite(hidden, seeds, step)?;
            let mut all_pass = true;
            for (name, report) in &reports {
                let pass = report.passes(GRADCHECK_TOLERANCE);
                all_pass &= pass;
                writeln!(
                    out,
                    "{name:<22} rel {:.3e}  abs {:.3e}  coords {:>6}  {}",
                    report.max_rel_error,
                    report.max_abs_error,
                    report.coordinates,
                    if pass { "ok" } else { "FAIL" }
                )?;
            }
            let worst = reports
                .iter()
                .map(|(_, r)| r.max_rel_error)
                .fold(0.0, f64::max);
            writeln!(
                out,
                "worst relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e}, abs floor {:.0e})",
                GradCheckReport::SMALL
            )?;
            writeln!(out, "total time   {:.3} s", started.elapsed().as_secs_f64())?;
            Ok(if all_pass { EXIT_OK } else { EXIT_FAILURE })
        }
    }
}
