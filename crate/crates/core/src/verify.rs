//! Randomised self-checks: the closed-form conditional against brute-force
//! enumeration, and the analytic gradient against central differences.
//!
//! Each instance is generated from its own seed so a failure can be replayed
//! with [`instance`].

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::activation::{HiddenUnits, StateSet, UnitKind};
use crate::error::{Error, Result};
use crate::model::{Dims, DrbmParams};
use crate::oracle::JointRbmView;

/// Margin kept between every rectified-linear pre-activation and zero.
const RELU_MARGIN: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub instances: usize,
    pub seed: u64,
    pub conditional_tol: f64,
    pub gradient_tol: f64,
    pub fd_step: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            instances: 500,
            seed: 0,
            conditional_tol: 1e-10,
            gradient_tol: 1e-5,
            fd_step: 1e-5,
        }
    }
}

/// One randomly drawn model with a single labelled example.
#[derive(Clone, Debug)]
pub struct Instance {
    pub seed: u64,
    pub params: DrbmParams,
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct VariantReport {
    pub variant: StateSet,
    pub instances: usize,
    /// `None` when the state set has no finite enumeration.
    pub max_conditional_error: Option<f64>,
    pub max_gradient_error: f64,
    /// Seed of the instance with the largest error, for replay.
    pub worst_seed: u64,
    pub passed: bool,
}

/// The variants covered by a default run.
pub fn default_variants() -> Vec<StateSet> {
    let mut v = vec![StateSet::bernoulli(), StateSet::bipolar()];
    v.extend([1, 2, 4, 8].map(|n| StateSet::binomial(n).expect("n_bins >= 1")));
    v.push(StateSet::rectified_linear());
    v
}

/// Seed of the `k`-th instance of a run. SplitMix64 finaliser so adjacent
/// run seeds do not share instances.
pub fn instance_seed(run_seed: u64, k: usize) -> u64 {
    let mut z = run_seed
        .wrapping_add((k as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws an instance with `n_i <= 6`, `n_c <= 4`, `n_h <= 4` and standard
/// normal parameters. For rectified-linear units the hidden biases are
/// lowered until every pre-activation of the example is at most -0.5.
pub fn instance(variant: StateSet, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims {
        n_inputs: rng.random_range(1..=6),
        n_hidden: rng.random_range(1..=4),
        n_classes: rng.random_range(2..=4),
    };
    let mut flat: Vec<f64> = (0..dims.param_count())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let x = Array2::from_shape_fn((1, dims.n_inputs), |_| rng.random::<f64>());
    let labels = vec![rng.random_range(0..dims.n_classes)];

    if variant.kind() == UnitKind::RectifiedLinear {
        let p = DrbmParams::from_flat(dims, &flat).expect("dims are valid");
        let hidden_in: Array1<f64> = x.row(0).dot(&p.r()) + &p.c();
        let c_offset = dims.n_inputs * dims.n_hidden + dims.n_classes * dims.n_hidden;
        for j in 0..dims.n_hidden {
            let top = (0..dims.n_classes)
                .map(|y| hidden_in[j] + p.u()[[y, j]])
                .fold(f64::NEG_INFINITY, f64::max);
            if top > -RELU_MARGIN {
                flat[c_offset + j] -= top + RELU_MARGIN;
            }
        }
    }

    Instance {
        seed,
        params: DrbmParams::from_flat(dims, &flat).expect("dims are valid"),
        x,
        labels,
    }
}

/// Largest absolute gap between model and oracle log-probabilities.
pub fn conditional_error<H: HiddenUnits + ?Sized>(
    units: &H,
    variant: StateSet,
    inst: &Instance,
) -> Result<f64> {
    let oracle = JointRbmView::new(&inst.params, variant)?;
    let row = inst.x.row(0);
    let want = oracle.log_conditional_by_enumeration(row.as_slice().expect("contiguous row"))?;
    let got = inst.params.predict_log_proba(units, row)?;
    Ok(got
        .log_proba
        .iter()
        .zip(&want)
        .map(|(g, w)| (g - w).abs())
        .fold(0.0, f64::max))
}

/// Entry-wise relative error `|a - n| / max(|a|, |n|, 1e-4)`; the floor keeps
/// exactly-zero entries (from zero inputs) from dividing by rounding noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Central differences of the mean NLL for every parameter.
pub fn numeric_gradient(units: &StateSet, inst: &Instance, step: f64) -> Result<Vec<f64>> {
    let dims = inst.params.dims();
    let base = inst.params.to_flat();
    let mut out = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for k in 0..base.len() {
        probe[k] = base[k] + step;
        let up = DrbmParams::from_flat(dims, &probe)?.nll(units, inst.x.view(), &inst.labels)?;
        probe[k] = base[k] - step;
        let down = DrbmParams::from_flat(dims, &probe)?.nll(units, inst.x.view(), &inst.labels)?;
        probe[k] = base[k];
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Largest entry-wise relative error of the analytic gradient computed with
/// `units` against central differences of the true `variant` loss.
pub fn gradient_error<H: HiddenUnits + ?Sized>(
    units: &H,
    variant: StateSet,
    inst: &Instance,
    step: f64,
) -> Result<f64> {
    let analytic = inst.params.gradient(units, inst.x.view(), &inst.labels)?.to_flat();
    let numeric = numeric_gradient(&variant, inst, step)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

/// Runs both checks over `opts.instances` instances of one variant, with
/// model computations going through `units`.
pub fn verify_variant<H: HiddenUnits + ?Sized>(
    units: &H,
    variant: StateSet,
    opts: &VerifyOptions,
) -> Result<VariantReport> {
    if opts.instances == 0 {
        return Err(Error::Usage("at least one instance is required".into()));
    }
    let enumerable = variant.state_count().is_some();
    let mut max_cond: f64 = 0.0;
    let mut max_grad: f64 = 0.0;
    let mut worst_seed = instance_seed(opts.seed, 0);
    let mut worst_score = f64::NEG_INFINITY;
    for k in 0..opts.instances {
        let inst = instance(variant, instance_seed(opts.seed, k));
        let cond = if enumerable {
            conditional_error(units, variant, &inst)?
        } else {
            0.0
        };
        let grad = gradient_error(units, variant, &inst, opts.fd_step)?;
        max_cond = max_cond.max(cond);
        max_grad = max_grad.max(grad);
        let score = (cond / opts.conditional_tol).max(grad / opts.gradient_tol);
        if score > worst_score {
            worst_score = score;
            worst_seed = inst.seed;
        }
    }
    Ok(VariantReport {
        variant,
        instances: opts.instances,
        max_conditional_error: enumerable.then_some(max_cond),
        max_gradient_error: max_grad,
        worst_seed,
        passed: max_cond < opts.conditional_tol && max_grad < opts.gradient_tol,
    })
}

pub fn verify_all(opts: &VerifyOptions) -> Result<Vec<VariantReport>> {
    default_variants()
        .into_iter()
        .map(|v| verify_variant(&v, v, opts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct FlippedMean(StateSet);

    impl HiddenUnits for FlippedMean {
        fn log_state_sum(&self, alpha: f64) -> Result<f64> {
            self.0.log_state_sum(alpha)
        }

        fn mean_state(&self, alpha: f64) -> Result<f64> {
            self.0.mean_state(alpha).map(|m| -m)
        }
    }

    #[test]
    fn instances_replay_from_seed() {
        let a = instance(StateSet::bipolar(), 99);
        let b = instance(StateSet::bipolar(), 99);
        assert_eq!(a.params, b.params);
        assert_eq!(a.x, b.x);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn relu_instances_stay_in_domain() {
        let relu = StateSet::rectified_linear();
        for k in 0..50 {
            let inst = instance(relu, instance_seed(3, k));
            for y in 0..inst.params.dims().n_classes {
                let alphas = inst.params.activations(inst.x.row(0), y).unwrap();
                assert!(alphas.iter().all(|&a| a <= -RELU_MARGIN + 1e-12));
            }
        }
    }

    #[test]
    fn small_run_passes() {
        let opts = VerifyOptions {
            instances: 20,
            ..VerifyOptions::default()
        };
        for report in verify_all(&opts).unwrap() {
            assert!(report.passed, "{report:?}");
        }
    }

    #[test]
    fn flipped_bipolar_mean_is_caught() {
        let opts = VerifyOptions {
            instances: 10,
            ..VerifyOptions::default()
        };
        let bip = StateSet::bipolar();
        let report = verify_variant(&FlippedMean(bip), bip, &opts).unwrap();
        assert!(!report.passed);
        assert!(report.max_conditional_error.unwrap() < 1e-10);
        assert!(report.max_gradient_error > 1e-2);
    }

    #[test]
    fn zero_instances_is_a_usage_error() {
        let opts = VerifyOptions {
            instances: 0,
            ..VerifyOptions::default()
        };
        assert!(matches!(
            verify_variant(&StateSet::bernoulli(), StateSet::bernoulli(), &opts),
            Err(Error::Usage(_))
        ));
    }
}
