//! Stochastic gradient descent with validation-driven early stopping.
//!
//! After every epoch the 0-1 loss on the validation set is compared with the
//! best seen so far. `patience` consecutive epochs without improvement revert
//! the parameters to the best snapshot and continue with learning rate
//! `eta_init / (k + 1)` after the k-th such event; the `max_reductions`-th
//! event ends training.

use std::fmt;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activation::{StateSet, UnitKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::dataset_loss;
use crate::model::DrbmParams;

/// Generator behind every random draw: ChaCha with 8 rounds as implemented
/// by `rand_chacha` 0.9, seeded through `SeedableRng::seed_from_u64`.
/// Initialisation uses stream 0 and shuffling stream 1 of the run seed.
pub const RNG_ALGORITHM: &str = "chacha8/rand_chacha-0.9/seed_from_u64";

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

/// Initial hidden bias for rectified-linear units, keeping every
/// pre-activation inside the convergent region at the start.
pub const RELU_HIDDEN_BIAS_INIT: f64 = -1.0;

pub fn run_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn default_batch_size() -> usize {
    100
}
fn default_max_epochs() -> usize {
    2000
}
fn default_patience() -> usize {
    10
}
fn default_max_reductions() -> usize {
    5
}
fn default_init_scale() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: StateSet,
    pub n_hid: usize,
    pub eta_init: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_max_reductions")]
    pub max_reductions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

impl TrainConfig {
    /// Default protocol values for everything but the variant, hidden size
    /// and initial learning rate.
    pub fn new(variant: StateSet, n_hid: usize, eta_init: f64) -> Self {
        TrainConfig {
            variant,
            n_hid,
            eta_init,
            batch_size: default_batch_size(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            max_reductions: default_max_reductions(),
            seed: 0,
            init_scale: default_init_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_hid", self.n_hid),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("max_reductions", self.max_reductions),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Usage(format!("{name} must be at least 1")));
        }
        if !(self.eta_init.is_finite() && self.eta_init > 0.0) {
            return Err(Error::Usage(format!("eta_init must be positive, got {}", self.eta_init)));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::Usage(format!(
                "init_scale must be non-negative, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

/// Gaussian `R` and `U` with standard deviation `init_scale`, zero `d`, and
/// zero `c` except for rectified-linear units (see [`RELU_HIDDEN_BIAS_INIT`]).
pub fn init_params(cfg: &TrainConfig, n_i: usize, n_c: usize) -> Result<DrbmParams> {
    cfg.validate()?;
    if n_i == 0 || n_c < 2 {
        return Err(Error::Shape(format!("cannot initialise a model with {n_i} inputs and {n_c} classes")));
    }
    let mut rng = run_rng(cfg.seed, INIT_STREAM);
    let scale = cfg.init_scale;
    let mut draw = |rows, cols| {
        Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
    };
    let r = draw(n_i, cfg.n_hid);
    let u = draw(n_c, cfg.n_hid);
    let c0 = if cfg.variant.kind() == UnitKind::RectifiedLinear {
        RELU_HIDDEN_BIAS_INIT
    } else {
        0.0
    };
    DrbmParams::new(r, u, Array1::from_elem(cfg.n_hid, c0), Array1::zeros(n_c))
}

/// One shuffled pass over `train` in mini-batches of `batch_size`.
pub fn sgd_epoch<R: Rng + ?Sized>(
    mut params: DrbmParams,
    units: &StateSet,
    train: &Dataset,
    lr: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<DrbmParams> {
    if train.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    if batch_size == 0 {
        return Err(Error::Usage("batch_size must be at least 1".into()));
    }
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::Usage(format!("learning rate must be non-negative, got {lr}")));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let features = train.features();
    let labels = train.labels();
    for batch in order.chunks(batch_size) {
        let x = features.select(Axis(0), batch);
        let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
        params = params.sgd_step(units, x.view(), &y, lr)?.0;
    }
    Ok(params)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepAction {
    Continue,
    RevertAndReduce,
    Terminate,
}

/// Early-stopping bookkeeping.
#[derive(Clone, Debug)]
pub struct ScheduleState {
    eta_init: f64,
    best_val_loss: f64,
    best_params: DrbmParams,
    consecutive_worse: usize,
    reduction_count: usize,
    improved_last: bool,
}

impl ScheduleState {
    /// `initial` is the snapshot returned if no epoch ever improves, which
    /// cannot happen since the first loss always beats infinity.
    pub fn new(eta_init: f64, initial: DrbmParams) -> Self {
        ScheduleState {
            eta_init,
            best_val_loss: f64::INFINITY,
            best_params: initial,
            consecutive_worse: 0,
            reduction_count: 0,
            improved_last: false,
        }
    }

    pub fn best_val_loss(&self) -> f64 {
        self.best_val_loss
    }

    pub fn best_params(&self) -> &DrbmParams {
        &self.best_params
    }

    pub fn into_best_params(self) -> DrbmParams {
        self.best_params
    }

    pub fn consecutive_worse(&self) -> usize {
        self.consecutive_worse
    }

    pub fn reduction_count(&self) -> usize {
        self.reduction_count
    }

    pub fn current_lr(&self) -> f64 {
        self.eta_init / (self.reduction_count + 1) as f64
    }

    /// Whether the last step recorded a new best.
    pub fn improved_last(&self) -> bool {
        self.improved_last
    }

    /// Feeds one epoch's validation loss; `params` are the parameters that
    /// produced it. A loss equal to the best counts as worse. On
    /// `RevertAndReduce` the caller continues from [`Self::best_params`].
    pub fn step(&mut self, val_loss: f64, params: &DrbmParams, patience: usize, max_reductions: usize) -> StepAction {
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.best_params = params.clone();
            self.consecutive_worse = 0;
            self.improved_last = true;
            return StepAction::Continue;
        }
        self.improved_last = false;
        self.consecutive_worse += 1;
        if self.consecutive_worse < patience {
            return StepAction::Continue;
        }
        self.consecutive_worse = 0;
        self.reduction_count += 1;
        if self.reduction_count >= max_reductions {
            return StepAction::Terminate;
        }
        StepAction::RevertAndReduce
    }
}

/// [`ScheduleState::step`] with the limits taken from `cfg`.
pub fn early_stopping_step(st: &mut ScheduleState, val_loss: f64, params: &DrbmParams, cfg: &TrainConfig) -> StepAction {
    st.step(val_loss, params, cfg.patience, cfg.max_reductions)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    ReductionsExhausted,
    MaxEpochs,
}

impl TerminationReason {
    pub fn name(self) -> &'static str {
        match self {
            TerminationReason::ReductionsExhausted => "reductions_exhausted",
            TerminationReason::MaxEpochs => "max_epochs",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [TerminationReason::ReductionsExhausted, TerminationReason::MaxEpochs]
            .into_iter()
            .find(|r| r.name() == name)
    }
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What happened at the end of an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochEvent {
    Improved,
    Worse,
    Reduced,
    Terminated,
}

impl EpochEvent {
    pub fn name(self) -> &'static str {
        match self {
            EpochEvent::Improved => "improved",
            EpochEvent::Worse => "worse",
            EpochEvent::Reduced => "reduced",
            EpochEvent::Terminated => "terminated",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [EpochEvent::Improved, EpochEvent::Worse, EpochEvent::Reduced, EpochEvent::Terminated]
            .into_iter()
            .find(|e| e.name() == name)
    }
}

/// One epoch as seen by an observer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub event: EpochEvent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Best snapshot, not the last-epoch parameters.
    pub final_params: DrbmParams,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub val_loss_history: Vec<f64>,
    pub lr_history: Vec<f64>,
    pub events: Vec<EpochEvent>,
    /// Epochs (1-based) at which the patience ran out, including the
    /// terminating one.
    pub reduction_epochs: Vec<usize>,
    pub termination_reason: TerminationReason,
}

pub const REPORT_HEADER: &str = "# drbm train report v1";

impl TrainReport {
    pub fn records(&self) -> impl Iterator<Item = EpochRecord> + '_ {
        (0..self.epochs_run).map(|i| EpochRecord {
            epoch: i + 1,
            val_loss: self.val_loss_history[i],
            lr: self.lr_history[i],
            event: self.events[i],
        })
    }

    /// Tab-separated trace, one epoch per line after a versioned header.
    /// Floats use the shortest representation that parses back exactly.
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "{REPORT_HEADER}\n# rng\t{RNG_ALGORITHM}\n# termination\t{}\n# best_val_loss\t{}\nepoch\tval_loss\tlr\tevent\n",
            self.termination_reason, self.best_val_loss
        );
        for r in self.records() {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.epoch, r.val_loss, r.lr, r.event.name()));
        }
        out
    }
}

/// The per-epoch part of a report read back from its TSV form.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportTrace {
    pub termination_reason: TerminationReason,
    pub records: Vec<EpochRecord>,
}

impl ReportTrace {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == REPORT_HEADER => {}
            _ => return Err("line 1: missing report header".into()),
        }
        let mut termination = None;
        let mut records = Vec::new();
        for (i, line) in lines {
            let n = i + 1;
            if let Some(meta) = line.strip_prefix("# ") {
                if let Some(v) = meta.strip_prefix("termination\t") {
                    termination = Some(
                        TerminationReason::from_name(v).ok_or(format!("line {n}: unknown termination {v:?}"))?,
                    );
                }
                continue;
            }
            if line.starts_with("epoch\t") {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(format!("line {n}: expected 4 fields, found {}", f.len()));
            }
            let bad = |what: &str| format!("line {n}: bad {what}");
            records.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad("epoch"))?,
                val_loss: f[1].parse().map_err(|_| bad("val_loss"))?,
                lr: f[2].parse().map_err(|_| bad("lr"))?,
                event: EpochEvent::from_name(f[3]).ok_or_else(|| bad("event"))?,
            });
        }
        Ok(ReportTrace {
            termination_reason: termination.ok_or("missing termination line")?,
            records,
        })
    }
}

/// Drives the schedule over an arbitrary sequence of validation losses.
/// `params` is fixed, so only the bookkeeping is exercised.
pub fn simulate_schedule(losses: &[f64], cfg: &TrainConfig, params: &DrbmParams) -> (Vec<EpochRecord>, Option<TerminationReason>) {
    let mut st = ScheduleState::new(cfg.eta_init, params.clone());
    let mut out = Vec::new();
    for (i, &loss) in losses.iter().enumerate() {
        let lr = st.current_lr();
        let action = early_stopping_step(&mut st, loss, params, cfg);
        out.push(EpochRecord {
            epoch: i + 1,
            val_loss: loss,
            lr,
            event: event_of(action, &st),
        });
        if action == StepAction::Terminate {
            return (out, Some(TerminationReason::ReductionsExhausted));
        }
    }
    (out, None)
}

fn event_of(action: StepAction, st: &ScheduleState) -> EpochEvent {
    match action {
        StepAction::Continue if st.improved_last() => EpochEvent::Improved,
        StepAction::Continue => EpochEvent::Worse,
        StepAction::RevertAndReduce => EpochEvent::Reduced,
        StepAction::Terminate => EpochEvent::Terminated,
    }
}

pub fn train(cfg: &TrainConfig, train: &Dataset, valid: &Dataset) -> Result<TrainReport> {
    train_with_observer(cfg, train, valid, |_| {})
}

/// [`train`], calling `observer` after every epoch.
pub fn train_with_observer(
    cfg: &TrainConfig,
    train: &Dataset,
    valid: &Dataset,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.n_inputs() != valid.n_inputs() || train.n_classes() != valid.n_classes() {
        return Err(Error::Usage(format!(
            "training data is {} inputs x {} classes but validation data is {} x {}",
            train.n_inputs(),
            train.n_classes(),
            valid.n_inputs(),
            valid.n_classes()
        )));
    }
    if valid.is_empty() {
        return Err(Error::Usage("validation set is empty".into()));
    }
    let units = cfg.variant;
    let mut params = init_params(cfg, train.n_inputs(), train.n_classes())?;
    let mut rng = run_rng(cfg.seed, SHUFFLE_STREAM);
    let mut st = ScheduleState::new(cfg.eta_init, params.clone());

    let mut val_loss_history = Vec::new();
    let mut lr_history = Vec::new();
    let mut events = Vec::new();
    let mut reduction_epochs = Vec::new();
    let mut termination_reason = TerminationReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let lr = st.current_lr();
        params = sgd_epoch(params, &units, train, lr, cfg.batch_size, &mut rng)?;
        let loss = dataset_loss(&params, &units, valid)?;
        let action = early_stopping_step(&mut st, loss, &params, cfg);
        let record = EpochRecord {
            epoch,
            val_loss: loss,
            lr,
            event: event_of(action, &st),
        };
        val_loss_history.push(loss);
        lr_history.push(lr);
        events.push(record.event);
        observer(&record);
        match action {
            StepAction::Continue => {}
            StepAction::RevertAndReduce => {
                reduction_epochs.push(epoch);
                params = st.best_params().clone();
            }
            StepAction::Terminate => {
                reduction_epochs.push(epoch);
                termination_reason = TerminationReason::ReductionsExhausted;
                break;
            }
        }
    }

    Ok(TrainReport {
        best_val_loss: st.best_val_loss(),
        final_params: st.into_best_params(),
        epochs_run: val_loss_history.len(),
        val_loss_history,
        lr_history,
        events,
        reduction_epochs,
        termination_reason,
    })
}
