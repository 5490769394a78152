//! Per-hidden-unit log-partition and mean-state functions.
//!
//! A hidden unit with state set `{s_k}` and pre-activation `alpha` contributes
//! the factor `sum_k exp(s_k * alpha)` to the class score. Everything here is
//! evaluated in the log domain: for a 784-pixel input `alpha` easily reaches
//! magnitudes where `exp(alpha)` overflows.
//!
//! | kind              | states      | `log_state_sum`              | `mean_state`  |
//! |-------------------|-------------|------------------------------|---------------|
//! | `Bernoulli01`     | {0, 1}      | `softplus(a)`                | `sigmoid(a)`  |
//! | `BipolarPm1`      | {-1, +1}    | `log(e^-a + e^a)`            | `tanh(a)`     |
//! | `Binomial`        | {0, .., N}  | `log((1 - e^((N+1)a)) / (1 - e^a))` | derivative of the former |
//! | `RectifiedLinear` | {0, 1, ..}  | `-log(1 - e^a)`, `a < 0`     | `e^a / (1 - e^a)` |

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnitKind {
    #[serde(rename = "bernoulli")]
    Bernoulli01,
    #[serde(rename = "bipolar")]
    BipolarPm1,
    #[serde(rename = "binomial")]
    Binomial,
    #[serde(rename = "relu")]
    RectifiedLinear,
}

impl UnitKind {
    pub const ALL: [UnitKind; 4] = [
        UnitKind::Bernoulli01,
        UnitKind::BipolarPm1,
        UnitKind::Binomial,
        UnitKind::RectifiedLinear,
    ];

    /// Short name used on the command line and in output files.
    pub fn name(self) -> &'static str {
        match self {
            UnitKind::Bernoulli01 => "bernoulli",
            UnitKind::BipolarPm1 => "bipolar",
            UnitKind::Binomial => "binomial",
            UnitKind::RectifiedLinear => "relu",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        UnitKind::ALL.into_iter().find(|k| k.name() == name)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            UnitKind::Bernoulli01 => 0,
            UnitKind::BipolarPm1 => 1,
            UnitKind::Binomial => 2,
            UnitKind::RectifiedLinear => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        UnitKind::ALL.into_iter().find(|k| k.code() == code)
    }
}

/// The set of values each hidden unit may take. Selects the model variant.
///
/// `n_bins` is the largest state value `N` of a Binomial unit (states
/// `0..=N`); it is fixed to 1 for the other kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawStateSet", into = "RawStateSet")]
pub struct StateSet {
    kind: UnitKind,
    n_bins: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStateSet {
    kind: UnitKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_bins: Option<u32>,
}

impl TryFrom<RawStateSet> for StateSet {
    type Error = Error;

    fn try_from(raw: RawStateSet) -> Result<Self> {
        match (raw.kind, raw.n_bins) {
            (UnitKind::Binomial, None) => Err(Error::Usage("binomial units need n_bins".into())),
            (kind, n) => StateSet::new(kind, n.unwrap_or(1)),
        }
    }
}

impl From<StateSet> for RawStateSet {
    fn from(s: StateSet) -> Self {
        RawStateSet {
            kind: s.kind,
            n_bins: (s.kind == UnitKind::Binomial).then_some(s.n_bins),
        }
    }
}

impl StateSet {
    /// Builds a state set; `n_bins` is ignored unless `kind` is Binomial.
    pub fn new(kind: UnitKind, n_bins: u32) -> Result<Self> {
        match kind {
            UnitKind::Binomial if n_bins == 0 => {
                Err(Error::Usage("binomial units need n_bins >= 1".into()))
            }
            UnitKind::Binomial => Ok(StateSet { kind, n_bins }),
            _ => Ok(StateSet { kind, n_bins: 1 }),
        }
    }

    pub const fn bernoulli() -> Self {
        StateSet {
            kind: UnitKind::Bernoulli01,
            n_bins: 1,
        }
    }

    pub const fn bipolar() -> Self {
        StateSet {
            kind: UnitKind::BipolarPm1,
            n_bins: 1,
        }
    }

    pub fn binomial(n_bins: u32) -> Result<Self> {
        StateSet::new(UnitKind::Binomial, n_bins)
    }

    pub const fn rectified_linear() -> Self {
        StateSet {
            kind: UnitKind::RectifiedLinear,
            n_bins: 1,
        }
    }

    pub fn kind(&self) -> UnitKind {
        self.kind
    }

    pub fn n_bins(&self) -> u32 {
        self.n_bins
    }

    /// Number of states per unit, `None` for the unbounded rectified-linear set.
    pub fn state_count(&self) -> Option<u64> {
        match self.kind {
            UnitKind::Bernoulli01 | UnitKind::BipolarPm1 => Some(2),
            UnitKind::Binomial => Some(u64::from(self.n_bins) + 1),
            UnitKind::RectifiedLinear => None,
        }
    }

    /// The exact finite list of states, in increasing order.
    pub fn enumerate_states(&self) -> Result<Vec<f64>> {
        match self.kind {
            UnitKind::Bernoulli01 => Ok(vec![0.0, 1.0]),
            UnitKind::BipolarPm1 => Ok(vec![-1.0, 1.0]),
            UnitKind::Binomial => Ok((0..=self.n_bins).map(f64::from).collect()),
            UnitKind::RectifiedLinear => Err(Error::Usage(
                "rectified-linear units have no finite state enumeration".into(),
            )),
        }
    }

    /// `log sum_k exp(s_k * alpha)`.
    pub fn log_state_sum(&self, alpha: f64) -> Result<f64> {
        self.check_domain(alpha)?;
        Ok(match self.kind {
            UnitKind::Bernoulli01 => softplus(alpha),
            UnitKind::BipolarPm1 => {
                let a = alpha.abs();
                a + (-2.0 * a).exp().ln_1p()
            }
            UnitKind::Binomial => binomial_log_sum(self.n_bins, alpha),
            UnitKind::RectifiedLinear => -log1m_exp(alpha),
        })
    }

    /// Expected state under `p(s_k) ∝ exp(s_k * alpha)`, i.e. the derivative
    /// of [`log_state_sum`](Self::log_state_sum) with respect to `alpha`.
    pub fn mean_state(&self, alpha: f64) -> Result<f64> {
        self.check_domain(alpha)?;
        Ok(match self.kind {
            UnitKind::Bernoulli01 => sigmoid(alpha),
            UnitKind::BipolarPm1 => alpha.tanh(),
            UnitKind::Binomial => binomial_mean(self.n_bins, alpha),
            UnitKind::RectifiedLinear => 1.0 / (-alpha).exp_m1(),
        })
    }

    fn check_domain(&self, alpha: f64) -> Result<()> {
        if !alpha.is_finite() {
            return Err(Error::Domain(format!("non-finite pre-activation {alpha}")));
        }
        if self.kind == UnitKind::RectifiedLinear && alpha >= 0.0 {
            return Err(Error::Domain(format!(
                "rectified-linear state sum diverges for pre-activation {alpha} >= 0"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for StateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            UnitKind::Binomial => write!(f, "binomial({})", self.n_bins),
            kind => f.write_str(kind.name()),
        }
    }
}

/// The per-unit functions the model needs. [`StateSet`] is the real
/// implementation; the trait lets verification code substitute a faulty one.
pub trait HiddenUnits: Sync {
    fn log_state_sum(&self, alpha: f64) -> Result<f64>;
    fn mean_state(&self, alpha: f64) -> Result<f64>;
}

impl HiddenUnits for StateSet {
    fn log_state_sum(&self, alpha: f64) -> Result<f64> {
        StateSet::log_state_sum(self, alpha)
    }

    fn mean_state(&self, alpha: f64) -> Result<f64> {
        StateSet::mean_state(self, alpha)
    }
}

/// `log(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 - e^x)` for `x < 0`, switching between the two accurate forms at `-ln 2`.
fn log1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

fn binomial_log_sum(n: u32, alpha: f64) -> f64 {
    let states = f64::from(n) + 1.0;
    if alpha == 0.0 {
        return states.ln();
    }
    // Geometric series. For alpha > 0 the largest term exp(N alpha) is
    // factored out so both remaining factors are series in exp(-alpha).
    if alpha < 0.0 {
        log1m_exp(states * alpha) - log1m_exp(alpha)
    } else {
        f64::from(n) * alpha + log1m_exp(-states * alpha) - log1m_exp(-alpha)
    }
}

fn binomial_mean(n: u32, alpha: f64) -> f64 {
    // The distribution of N - s at -alpha mirrors that of s at alpha.
    if alpha > 0.0 {
        f64::from(n) - binomial_mean_nonpositive(n, -alpha)
    } else {
        binomial_mean_nonpositive(n, alpha)
    }
}

fn binomial_mean_nonpositive(n: u32, beta: f64) -> f64 {
    let big_n = f64::from(n);
    let states = big_n + 1.0;
    if states * beta.abs() < 1e-3 {
        // Cumulant series of the discrete uniform on 0..=N; the closed form
        // below cancels catastrophically here.
        let s2 = states * states;
        let k2 = (s2 - 1.0) / 12.0;
        let k4 = -(s2 - 1.0) * (s2 + 1.0) / 120.0;
        return 0.5 * big_n + k2 * beta + k4 * beta.powi(3) / 6.0;
    }
    1.0 / (-beta).exp_m1() - states / (-states * beta).exp_m1()
}
