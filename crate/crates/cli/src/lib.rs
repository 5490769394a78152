//! The `drbm` command line.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration or usage
//! error, 3 data error, 4 numeric failure.

pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use drbm::data::{load_csv, read_feature_rows, Dataset, Split};
use drbm::eval::{dataset_loss, grid_search};
use drbm::persist::write_atomic;
use drbm::training::{train_with_observer, TrainConfig, RNG_ALGORITHM};
use drbm::verify::{default_variants, verify_variant, VerifyOptions};
use drbm::{Error, HiddenUnits, SavedModel, StateSet, UnitKind};
use serde::Serialize;

pub use config::{DataConfig, DatasetKind, Overrides, RunConfig};

pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub const MODEL_FILE: &str = "model.drbm";
pub const REPORT_FILE: &str = "report.tsv";
pub const GRID_RECORDS_FILE: &str = "grid.jsonl";
pub const GRID_SUMMARY_FILE: &str = "grid_summary.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { code: EXIT_DATA, message: message.into() }
    }

    pub fn from_config(e: Error) -> Self {
        CliError::config(e.to_string())
    }

    /// Any failure while reading data is a data error.
    pub fn from_data(e: Error) -> Self {
        CliError::data(e.to_string())
    }

    /// Failures once the data is in memory.
    pub fn from_run(e: Error) -> Self {
        let code = match e {
            Error::Domain(_) | Error::NonFinite(_) | Error::CapExceeded { .. } => EXIT_NUMERIC,
            Error::Format { .. } | Error::Io { .. } => EXIT_DATA,
            Error::Usage(_) | Error::Shape(_) => EXIT_CONFIG,
        };
        CliError { code, message: e.to_string() }
    }
}

#[derive(Parser, Debug)]
#[command(name = "drbm", version, about = "Discriminative RBM classifiers over Bernoulli, bipolar, binomial and rectified-linear hidden units")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model with early stopping; writes model.drbm and report.tsv.
    Train {
        #[arg(long, short)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Print every epoch to stderr.
        #[arg(long, short)]
        verbose: bool,
    },
    /// Average 0-1 loss of a saved model on a configured split or a labelled CSV.
    Evaluate {
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long, short, conflicts_with = "csv", required_unless_present = "csv")]
        config: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// `label,features...` rows.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train every cell of the grid over all seeds and select on validation loss.
    GridSearch {
        #[arg(long, short)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Class distribution for every row of an unlabelled CSV feature file.
    Predict {
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long, short)]
        input: PathBuf,
        /// Write the TSV here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Check the exact conditional against enumeration and the gradient
    /// against finite differences on random small models.
    Verify {
        #[arg(long, default_value_t = 500)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parses `args` (including the program name) and runs the command.
/// Regular output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code
        }
    }
}

fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    match cmd {
        Command::Train { config, overrides, verbose } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.apply(&overrides);
            let summary = cmd_train(&cfg, verbose, err)?;
            emit(out, &summary.line())?;
            Ok(0)
        }
        Command::Evaluate { model, config, split, csv } => {
            let saved = SavedModel::load(&model).map_err(CliError::from_data)?;
            let split = Split::from_name(&split)
                .ok_or_else(|| CliError::config(format!("unknown split {split:?}; expected train, valid or test")))?;
            let ds = match (&config, &csv) {
                (_, Some(path)) => load_csv(path, saved.params.dims().n_classes, split).map_err(CliError::from_data)?,
                (Some(path), None) => {
                    let s = RunConfig::load(path)?.load_splits()?;
                    match split {
                        Split::Train => s.train,
                        Split::Valid => s.valid,
                        Split::Test => s.test,
                    }
                }
                (None, None) => return Err(CliError::config("either --config or --csv is required")),
            };
            let loss = cmd_evaluate(&saved, &ds)?;
            emit(out, &format!("evaluate split={split} examples={} loss={loss} percent={:.4}", ds.len(), 100.0 * loss))?;
            Ok(0)
        }
        Command::GridSearch { config, overrides } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.apply(&overrides);
            let text = cmd_grid_search(&cfg, err)?;
            emit(out, text.trim_end())?;
            Ok(0)
        }
        Command::Predict { model, input, output } => {
            let saved = SavedModel::load(&model).map_err(CliError::from_data)?;
            let tsv = cmd_predict(&saved, &input)?;
            match output {
                Some(path) => write_atomic(&path, tsv.as_bytes()).map_err(CliError::from_data)?,
                None => out.write_all(tsv.as_bytes()).map_err(|e| CliError::data(e.to_string()))?,
            }
            Ok(0)
        }
        Command::Verify { instances, seed } => {
            let opts = VerifyOptions { instances, seed, ..VerifyOptions::default() };
            cmd_verify(&opts, &|s| Box::new(s), out)
        }
    }
}

fn emit(out: &mut dyn Write, line: &str) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(|e| CliError::data(format!("cannot write output: {e}")))
}

/// Result of `train`, printed as one `key=value` line.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub config: TrainConfig,
    pub epochs: usize,
    pub termination: String,
    pub val_loss: f64,
    pub test_loss: f64,
    pub model_path: PathBuf,
    pub report_path: PathBuf,
}

impl TrainSummary {
    pub fn line(&self) -> String {
        let experimental = if self.config.variant.kind() == UnitKind::RectifiedLinear {
            " experimental=true"
        } else {
            ""
        };
        format!(
            "train variant={} n_hid={} eta_init={} seed={} epochs={} termination={} val_loss={} test_loss={} test_percent={:.4}{experimental}",
            self.config.variant,
            self.config.n_hid,
            self.config.eta_init,
            self.config.seed,
            self.epochs,
            self.termination,
            self.val_loss,
            self.test_loss,
            100.0 * self.test_loss
        )
    }
}

#[derive(Serialize)]
struct ConfigSnapshot<'a> {
    format: &'static str,
    rng: &'static str,
    train: &'a TrainConfig,
    data: &'a DataConfig,
}

fn experimental_warning(variant: StateSet, err: &mut dyn Write) {
    if variant.kind() == UnitKind::RectifiedLinear {
        let _ = writeln!(
            err,
            "warning: rectified-linear units are experimental; training stops with a numeric error if a pre-activation reaches 0"
        );
    }
}

/// Trains, writes the model and report into the output directory, and
/// returns the summary. With `verbose`, every epoch is logged to `err`.
pub fn cmd_train(cfg: &RunConfig, verbose: bool, err: &mut dyn Write) -> Result<TrainSummary, CliError> {
    let tc = cfg.train_config()?;
    experimental_warning(tc.variant, err);
    let splits = cfg.load_splits()?;
    let report = train_with_observer(&tc, &splits.train, &splits.valid, |r| {
        if verbose {
            let _ = writeln!(err, "epoch {} val_loss={} lr={} {}", r.epoch, r.val_loss, r.lr, r.event.name());
        }
    })
    .map_err(CliError::from_run)?;
    let test_loss = dataset_loss(&report.final_params, &tc.variant, &splits.test).map_err(CliError::from_run)?;

    let dir = cfg.output_dir();
    fs::create_dir_all(&dir).map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
    let snapshot = ConfigSnapshot { format: "drbm-run-config/1", rng: RNG_ALGORITHM, train: &tc, data: &cfg.data };
    let saved = SavedModel {
        units: tc.variant,
        params: report.final_params.clone(),
        seed: tc.seed,
        config_json: serde_json::to_string(&snapshot).expect("config serialises"),
    };
    let model_path = dir.join(MODEL_FILE);
    let report_path = dir.join(REPORT_FILE);
    saved.save(&model_path).map_err(CliError::from_run)?;
    write_atomic(&report_path, report.to_tsv().as_bytes()).map_err(CliError::from_run)?;
    Ok(TrainSummary {
        config: tc,
        epochs: report.epochs_run,
        termination: report.termination_reason.to_string(),
        val_loss: report.best_val_loss,
        test_loss,
        model_path,
        report_path,
    })
}

pub fn cmd_evaluate(saved: &SavedModel, ds: &Dataset) -> Result<f64, CliError> {
    dataset_loss(&saved.params, &saved.units, ds).map_err(CliError::from_run)
}

/// TSV with a header `predicted p_0 ... p_{n-1}` and one row per input row.
pub fn cmd_predict(saved: &SavedModel, input: &Path) -> Result<String, CliError> {
    let x = read_feature_rows(input).map_err(CliError::from_data)?;
    let n_c = saved.params.dims().n_classes;
    let rows = saved.params.predict_batch(&saved.units, x.view()).map_err(CliError::from_run)?;
    let mut tsv = String::from("predicted");
    for y in 0..n_c {
        tsv.push_str(&format!("\tp_{y}"));
    }
    tsv.push('\n');
    for c in rows {
        tsv.push_str(&c.predicted.to_string());
        for p in c.proba() {
            tsv.push_str(&format!("\t{p}"));
        }
        tsv.push('\n');
    }
    Ok(tsv)
}

/// Runs the grid, writes records and summary into the output directory and
/// returns the text printed on success.
pub fn cmd_grid_search(cfg: &RunConfig, err: &mut dyn Write) -> Result<String, CliError> {
    let kind = cfg.unit_kind()?;
    let spec = cfg.grid();
    spec.validate().map_err(CliError::from_config)?;
    let placeholder = StateSet::new(kind, 1).map_err(CliError::from_config)?;
    experimental_warning(placeholder, err);
    let template = cfg.train_config_with(placeholder, 1, 1.0)?;
    let splits = cfg.load_splits()?;
    let outcome = grid_search(&spec, kind, &template, &splits).map_err(CliError::from_run)?;

    let dir = cfg.output_dir();
    fs::create_dir_all(&dir).map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
    let table = outcome.summary_table();
    write_atomic(&dir.join(GRID_RECORDS_FILE), outcome.to_jsonl().as_bytes()).map_err(CliError::from_run)?;
    write_atomic(&dir.join(GRID_SUMMARY_FILE), table.as_bytes()).map_err(CliError::from_run)?;
    let cell = &outcome.cells[outcome.best];
    let best = outcome.best_result();
    Ok(format!(
        "{table}best cell={} variant={} eta_init={} n_hid={} val_mean={} test_mean={} test_std={} test_percent={:.4}\n",
        cell.index,
        cell.variant,
        cell.eta,
        cell.n_hid,
        best.mean_val_loss,
        best.mean_loss,
        best.std_loss,
        100.0 * best.mean_loss
    ))
}

/// Provides the hidden-unit implementation checked for each variant.
pub type UnitsFactory<'a> = dyn Fn(StateSet) -> Box<dyn HiddenUnits> + 'a;

/// Runs both checks for every default variant. Returns 0 if all pass and 1
/// otherwise; failing lines carry the seed of the worst instance.
pub fn cmd_verify(opts: &VerifyOptions, units_for: &UnitsFactory<'_>, out: &mut dyn Write) -> Result<i32, CliError> {
    if opts.instances == 0 {
        return Err(CliError::config("--instances must be at least 1"));
    }
    emit(out, "variant\tinstances\tmax_conditional_error\tmax_gradient_error\tstatus")?;
    let mut failed = Vec::new();
    for variant in default_variants() {
        let units = units_for(variant);
        let r = verify_variant(units.as_ref(), variant, opts).map_err(CliError::from_run)?;
        let cond = r.max_conditional_error.map_or("n/a".to_string(), |e| format!("{e:.3e}"));
        let status = if r.passed {
            "ok".to_string()
        } else {
            failed.push(variant.to_string());
            format!("FAIL (replay seed {})", r.worst_seed)
        };
        emit(out, &format!("{variant}\t{}\t{cond}\t{:.3e}\t{status}", r.instances, r.max_gradient_error))?;
    }
    if failed.is_empty() {
        emit(out, "all variants within tolerance")?;
        Ok(0)
    } else {
        emit(out, &format!("tolerance exceeded for: {}", failed.join(", ")))?;
        Ok(EXIT_VERIFY_FAILED)
    }
}
