//! Brute-force ground truth by exhaustive enumeration.
//!
//! Everything here works on plain `Vec<f64>` copies of the parameters with
//! scalar loops, and touches `activation` only to list the states. It must
//! stay independent of the vectorised paths in [`crate::model`] so the two
//! can be compared.

use crate::activation::StateSet;
use crate::error::{Error, Result};
use crate::model::DrbmParams;

pub const DEFAULT_CAP: u64 = 1_000_000;

/// A DRBM viewed as the joint RBM over `(x, y, h)`, including the input bias
/// `a` that the discriminative model drops.
#[derive(Clone, Debug)]
pub struct JointRbmView {
    r: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    c: Vec<f64>,
    d: Vec<f64>,
    a: Vec<f64>,
    states: Vec<f64>,
    cap: u64,
}

impl JointRbmView {
    pub fn new(params: &DrbmParams, units: StateSet) -> Result<Self> {
        let dims = params.dims();
        let states = units.enumerate_states()?;
        let mut r = vec![vec![0.0; dims.n_hidden]; dims.n_inputs];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, w) in row.iter_mut().enumerate() {
                *w = params.r()[[i, j]];
            }
        }
        let mut u = vec![vec![0.0; dims.n_hidden]; dims.n_classes];
        for (y, row) in u.iter_mut().enumerate() {
            for (j, w) in row.iter_mut().enumerate() {
                *w = params.u()[[y, j]];
            }
        }
        Ok(JointRbmView {
            r,
            u,
            c: params.c().iter().copied().collect(),
            d: params.d().iter().copied().collect(),
            a: vec![0.0; dims.n_inputs],
            states,
            cap: DEFAULT_CAP,
        })
    }

    pub fn with_input_bias(mut self, a: Vec<f64>) -> Result<Self> {
        if a.len() != self.r.len() {
            return Err(Error::Shape(format!(
                "input bias has {} entries, model has {} inputs",
                a.len(),
                self.r.len()
            )));
        }
        self.a = a;
        Ok(self)
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }

    fn n_inputs(&self) -> usize {
        self.r.len()
    }

    fn n_hidden(&self) -> usize {
        self.c.len()
    }

    fn n_classes(&self) -> usize {
        self.d.len()
    }

    fn check_cap(&self, required: u128) -> Result<()> {
        if required > u128::from(self.cap) {
            return Err(Error::CapExceeded {
                required,
                cap: self.cap,
            });
        }
        Ok(())
    }

    fn hidden_configurations(&self) -> u128 {
        (self.states.len() as u128).saturating_pow(self.n_hidden() as u32)
    }

    /// `E = -a.x - d.y - c.h - x^T R h - y^T U h` for a one-hot `y`.
    pub fn energy(&self, x: &[f64], y: &[f64], h: &[f64]) -> Result<f64> {
        if x.len() != self.n_inputs() || y.len() != self.n_classes() || h.len() != self.n_hidden() {
            return Err(Error::Shape("configuration does not match the model".into()));
        }
        let ones = y.iter().filter(|&&v| v == 1.0).count();
        let zeros = y.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != y.len() {
            return Err(Error::Domain("class vector is not one-hot".into()));
        }
        if let Some(bad) = h.iter().find(|v| !self.states.contains(v)) {
            return Err(Error::Domain(format!("hidden value {bad} is not an allowed state")));
        }
        let mut e = 0.0;
        for i in 0..x.len() {
            e -= self.a[i] * x[i];
        }
        for k in 0..y.len() {
            e -= self.d[k] * y[k];
        }
        for j in 0..h.len() {
            e -= self.c[j] * h[j];
        }
        for i in 0..x.len() {
            for j in 0..h.len() {
                e -= x[i] * self.r[i][j] * h[j];
            }
        }
        for k in 0..y.len() {
            for j in 0..h.len() {
                e -= y[k] * self.u[k][j] * h[j];
            }
        }
        Ok(e)
    }

    fn one_hot(&self, y: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_classes()];
        v[y] = 1.0;
        v
    }

    /// Calls `f` with every hidden configuration, odometer order.
    fn for_each_hidden(&self, mut f: impl FnMut(&[f64]) -> Result<()>) -> Result<()> {
        let n_h = self.n_hidden();
        let mut idx = vec![0usize; n_h];
        let mut h: Vec<f64> = vec![self.states[0]; n_h];
        loop {
            f(&h)?;
            let mut j = 0;
            loop {
                if j == n_h {
                    return Ok(());
                }
                idx[j] += 1;
                if idx[j] < self.states.len() {
                    h[j] = self.states[idx[j]];
                    break;
                }
                idx[j] = 0;
                h[j] = self.states[0];
                j += 1;
            }
        }
    }

    /// `-log sum_h exp(-E(x, y, h))`.
    pub fn free_energy(&self, x: &[f64], y: usize) -> Result<f64> {
        self.check_cap(self.hidden_configurations())?;
        if y >= self.n_classes() {
            return Err(Error::Shape(format!("class {y} out of range")));
        }
        let y_vec = self.one_hot(y);
        let mut neg_energies = Vec::new();
        self.for_each_hidden(|h| {
            neg_energies.push(-self.energy(x, &y_vec, h)?);
            Ok(())
        })?;
        Ok(-log_sum_exp(&neg_energies))
    }

    /// `log P(y|x)` for every class, each term by enumeration.
    pub fn log_conditional_by_enumeration(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_cap(self.hidden_configurations() * self.n_classes() as u128)?;
        let mut neg_free = Vec::with_capacity(self.n_classes());
        for y in 0..self.n_classes() {
            neg_free.push(-self.free_energy(x, y)?);
        }
        let norm = log_sum_exp(&neg_free);
        Ok(neg_free.into_iter().map(|v| v - norm).collect())
    }

    pub fn conditional_by_enumeration(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .log_conditional_by_enumeration(x)?
            .into_iter()
            .map(f64::exp)
            .collect())
    }

    /// `log Z` over binary inputs, one-hot classes and all hidden states.
    pub fn partition_function(&self) -> Result<f64> {
        let n_i = self.n_inputs();
        let inputs = 1u128.checked_shl(n_i as u32).unwrap_or(u128::MAX);
        let required = inputs
            .saturating_mul(self.n_classes() as u128)
            .saturating_mul(self.hidden_configurations());
        self.check_cap(required)?;
        let mut neg_energies = Vec::with_capacity(required as usize);
        for bits in 0..(1u64 << n_i) {
            let x: Vec<f64> = (0..n_i).map(|i| ((bits >> i) & 1) as f64).collect();
            for y in 0..self.n_classes() {
                let y_vec = self.one_hot(y);
                self.for_each_hidden(|h| {
                    neg_energies.push(-self.energy(&x, &y_vec, h)?);
                    Ok(())
                })?;
            }
        }
        Ok(log_sum_exp(&neg_energies))
    }
}

/// Max-shifted `log sum exp`, scalar loop.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        if v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return max;
    }
    let mut total = 0.0;
    for &v in values {
        total += (v - max).exp();
    }
    max + total.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dims;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_params(rng: &mut ChaCha8Rng, dims: Dims) -> DrbmParams {
        let flat: Vec<f64> = (0..dims.param_count())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        DrbmParams::from_flat(dims, &flat).unwrap()
    }

    fn finite_sets() -> [StateSet; 4] {
        [
            StateSet::bernoulli(),
            StateSet::bipolar(),
            StateSet::binomial(2).unwrap(),
            StateSet::binomial(4).unwrap(),
        ]
    }

    #[test]
    fn zero_params_zero_energy() {
        let p = DrbmParams::zeros(Dims { n_inputs: 2, n_hidden: 3, n_classes: 2 }).unwrap();
        let m = JointRbmView::new(&p, StateSet::bipolar()).unwrap();
        assert_eq!(m.energy(&[1.0, 0.3], &[0.0, 1.0], &[-1.0, 1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn single_weight_energy() {
        let mut r = Array2::zeros((2, 2));
        r[[0, 0]] = 2.0;
        let p = DrbmParams::new(r, Array2::zeros((2, 2)), Array1::zeros(2), Array1::zeros(2)).unwrap();
        let m = JointRbmView::new(&p, StateSet::bernoulli()).unwrap();
        assert_eq!(m.energy(&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]).unwrap(), -2.0);
    }

    #[test]
    fn energy_matches_vectorised_form() {
        // Triple-loop energy against E = -a.x - d.y - (c + R^T x + U^T y) . h.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dims = Dims { n_inputs: 3, n_hidden: 2, n_classes: 3 };
        let p = random_params(&mut rng, dims);
        let a = vec![0.4, -1.2, 0.7];
        let m = JointRbmView::new(&p, StateSet::binomial(3).unwrap())
            .unwrap()
            .with_input_bias(a.clone())
            .unwrap();
        let x = array![0.2, 0.9, 0.5];
        let h = array![2.0, 1.0];
        let y = 1;
        let pre = x.dot(&p.r()) + &p.c() + &p.u().row(y);
        let want = -ndarray::arr1(&a).dot(&x) - p.d()[y] - pre.dot(&h);
        let got = m.energy(x.as_slice().unwrap(), &[0.0, 1.0, 0.0], h.as_slice().unwrap()).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-13);
    }

    #[test]
    fn invalid_configurations() {
        let p = DrbmParams::zeros(Dims { n_inputs: 1, n_hidden: 1, n_classes: 2 }).unwrap();
        let m = JointRbmView::new(&p, StateSet::bernoulli()).unwrap();
        assert!(matches!(m.energy(&[0.0], &[1.0, 0.0], &[-1.0]), Err(Error::Domain(_))));
        assert!(matches!(m.energy(&[0.0], &[1.0, 1.0], &[1.0]), Err(Error::Domain(_))));
        assert!(JointRbmView::new(&p, StateSet::rectified_linear()).is_err());
    }

    #[test]
    fn free_energy_of_zero_model() {
        let p = DrbmParams::zeros(Dims { n_inputs: 2, n_hidden: 3, n_classes: 2 }).unwrap();
        let m = JointRbmView::new(&p, StateSet::bernoulli()).unwrap();
        assert_abs_diff_eq!(m.free_energy(&[0.5, 1.0], 0).unwrap(), -3.0 * 2f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn single_hidden_unit_free_energy() {
        let p = DrbmParams::new(
            array![[0.5]],
            array![[0.25], [-1.0]],
            array![0.1],
            array![0.3, -0.2],
        )
        .unwrap();
        let m = JointRbmView::new(&p, StateSet::binomial(2).unwrap()).unwrap();
        // alpha = 0.1 + 0.5 * 0.8 + 0.25 = 0.75 for class 0; states 0, 1, 2.
        let alpha: f64 = 0.75;
        let want = -(0.3 + (1.0 + alpha.exp() + (2.0 * alpha).exp()).ln());
        assert_abs_diff_eq!(m.free_energy(&[0.8], 0).unwrap(), want, epsilon = 1e-14);
    }

    #[test]
    fn free_energy_factorises() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for units in finite_sets() {
            let dims = Dims { n_inputs: 4, n_hidden: 3, n_classes: 3 };
            let p = random_params(&mut rng, dims);
            let a: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            let m = JointRbmView::new(&p, units).unwrap().with_input_bias(a.clone()).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            for y in 0..3 {
                let alphas = p.activations(ndarray::ArrayView1::from(&x), y).unwrap();
                let factored: f64 = p.d()[y]
                    + alphas.iter().map(|&al| units.log_state_sum(al).unwrap()).sum::<f64>()
                    + a.iter().zip(&x).map(|(ai, xi)| ai * xi).sum::<f64>();
                assert_abs_diff_eq!(m.free_energy(&x, y).unwrap(), -factored, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn conditional_examples() {
        let p = DrbmParams::zeros(Dims { n_inputs: 2, n_hidden: 2, n_classes: 4 }).unwrap();
        let m = JointRbmView::new(&p, StateSet::bernoulli()).unwrap();
        for q in m.conditional_by_enumeration(&[0.3, 0.6]).unwrap() {
            assert_abs_diff_eq!(q, 0.25, epsilon = 1e-15);
        }
        let p = DrbmParams::new(
            Array2::zeros((1, 1)),
            Array2::zeros((2, 1)),
            Array1::zeros(1),
            array![3f64.ln(), 0.0],
        )
        .unwrap();
        let m = JointRbmView::new(&p, StateSet::bernoulli()).unwrap();
        let q = m.conditional_by_enumeration(&[1.0]).unwrap();
        assert_abs_diff_eq!(q[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(q[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn conditional_ignores_input_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let dims = Dims { n_inputs: 5, n_hidden: 3, n_classes: 4 };
        for units in finite_sets() {
            let p = random_params(&mut rng, dims);
            let x: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
            let base = JointRbmView::new(&p, units).unwrap();
            let plain = base.log_conditional_by_enumeration(&x).unwrap();
            let a: Vec<f64> = (0..5).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let biased = base.with_input_bias(a).unwrap().log_conditional_by_enumeration(&x).unwrap();
            for (l, m) in plain.iter().zip(&biased) {
                assert!((l - m).abs() <= 1e-12, "{units}: {l} vs {m}");
            }
        }
    }

    #[test]
    fn partition_function_of_zero_model() {
        let p = DrbmParams::zeros(Dims { n_inputs: 2, n_hidden: 1, n_classes: 2 }).unwrap();
        let m = JointRbmView::new(&p, StateSet::bernoulli()).unwrap();
        assert_abs_diff_eq!(m.partition_function().unwrap(), 16f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn partition_function_by_hand() {
        // n_i = 1, n_c = 2, n_h = 1 with only r = w and d = (b, 0):
        // configurations with exp(-E) = exp(b)^y0 * exp(w)^(x h)
        let (w, b): (f64, f64) = (0.7, -0.4);
        let p = DrbmParams::new(array![[w]], Array2::zeros((2, 1)), Array1::zeros(1), array![b, 0.0]).unwrap();
        let m = JointRbmView::new(&p, StateSet::bernoulli()).unwrap();
        let per_class = 3.0 + w.exp();
        let want = ((b.exp() + 1.0) * per_class).ln();
        assert_abs_diff_eq!(m.partition_function().unwrap(), want, epsilon = 1e-14);
    }

    #[test]
    fn joint_probabilities_normalise() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let dims = Dims { n_inputs: 3, n_hidden: 2, n_classes: 2 };
        for units in finite_sets() {
            let p = random_params(&mut rng, dims);
            let a: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let m = JointRbmView::new(&p, units).unwrap().with_input_bias(a).unwrap();
            let log_z = m.partition_function().unwrap();
            let mut total = 0.0;
            for bits in 0..8u32 {
                let x: Vec<f64> = (0..3).map(|i| f64::from((bits >> i) & 1)).collect();
                for y in 0..2 {
                    total += (-m.free_energy(&x, y).unwrap() - log_z).exp();
                }
            }
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn enumeration_order_is_irrelevant() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let values: Vec<f64> = (0..500).map(|_| 20.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut reversed = values.clone();
        reversed.reverse();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let base = log_sum_exp(&values);
        assert!((base - log_sum_exp(&reversed)).abs() <= 1e-13 * base.abs().max(1.0));
        assert!((base - log_sum_exp(&sorted)).abs() <= 1e-13 * base.abs().max(1.0));
    }

    #[test]
    fn cap_is_enforced() {
        let p = DrbmParams::zeros(Dims { n_inputs: 2, n_hidden: 6, n_classes: 2 }).unwrap();
        let m = JointRbmView::new(&p, StateSet::binomial(8).unwrap()).unwrap().with_cap(1000);
        match m.free_energy(&[0.0, 0.0], 0) {
            Err(Error::CapExceeded { required, cap }) => {
                assert_eq!(required, 9u128.pow(6));
                assert_eq!(cap, 1000);
            }
            other => panic!("expected refusal, got {other:?}"),
        }
        assert!(matches!(m.partition_function(), Err(Error::CapExceeded { .. })));
    }
}
