//! DRBM parameters and the class-conditional distribution they define.
//!
//! For class `y` the score is `d_y + sum_j log_state_sum(alpha_yj)` with
//! `alpha_yj = c_j + r_j . x + u_yj`, and `P(y|x)` is the softmax of the
//! scores. The input bias of the underlying RBM multiplies every class score
//! by the same factor and is therefore not represented.
//!
//! The class bias is called `d` here; it is the same quantity that is
//! sometimes written `b_y`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use crate::activation::HiddenUnits;
use crate::error::{Error, Result};

/// Trainable parameters: input-to-hidden weights `r` (n_i x n_h),
/// class-to-hidden weights `u` (n_c x n_h), hidden bias `c` and class bias `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct DrbmParams {
    r: Array2<f64>,
    u: Array2<f64>,
    c: Array1<f64>,
    d: Array1<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub n_inputs: usize,
    pub n_hidden: usize,
    pub n_classes: usize,
}

impl Dims {
    pub fn param_count(&self) -> usize {
        self.n_inputs * self.n_hidden + self.n_classes * self.n_hidden + self.n_hidden + self.n_classes
    }
}

impl DrbmParams {
    pub fn new(r: Array2<f64>, u: Array2<f64>, c: Array1<f64>, d: Array1<f64>) -> Result<Self> {
        let (n_i, n_h) = r.dim();
        let n_c = u.nrows();
        if n_i == 0 || n_h == 0 {
            return Err(Error::Shape(format!("weight matrix is {n_i} x {n_h}")));
        }
        if n_c < 2 {
            return Err(Error::Shape(format!("need at least 2 classes, got {n_c}")));
        }
        if u.ncols() != n_h || c.len() != n_h || d.len() != n_c {
            return Err(Error::Shape(format!(
                "inconsistent shapes: r {:?}, u {:?}, c {}, d {}",
                r.dim(),
                u.dim(),
                c.len(),
                d.len()
            )));
        }
        let params = DrbmParams { r, u, c, d };
        if !params.is_finite() {
            return Err(Error::NonFinite("parameter entries must be finite".into()));
        }
        Ok(params)
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        DrbmParams::new(
            Array2::zeros((dims.n_inputs, dims.n_hidden)),
            Array2::zeros((dims.n_classes, dims.n_hidden)),
            Array1::zeros(dims.n_hidden),
            Array1::zeros(dims.n_classes),
        )
    }

    /// Rebuilds parameters from the flat layout of [`to_flat`](Self::to_flat).
    pub fn from_flat(dims: Dims, flat: &[f64]) -> Result<Self> {
        if flat.len() != dims.param_count() {
            return Err(Error::Shape(format!(
                "expected {} values, got {}",
                dims.param_count(),
                flat.len()
            )));
        }
        let Dims {
            n_inputs: n_i,
            n_hidden: n_h,
            n_classes: n_c,
        } = dims;
        let (r, rest) = flat.split_at(n_i * n_h);
        let (u, rest) = rest.split_at(n_c * n_h);
        let (c, d) = rest.split_at(n_h);
        let shape_err = |e: ndarray::ShapeError| Error::Shape(e.to_string());
        DrbmParams::new(
            Array2::from_shape_vec((n_i, n_h), r.to_vec()).map_err(shape_err)?,
            Array2::from_shape_vec((n_c, n_h), u.to_vec()).map_err(shape_err)?,
            Array1::from(c.to_vec()),
            Array1::from(d.to_vec()),
        )
    }

    /// All parameters in row-major order: `r`, `u`, `c`, `d`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dims().param_count());
        out.extend(self.r.iter());
        out.extend(self.u.iter());
        out.extend(self.c.iter());
        out.extend(self.d.iter());
        out
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n_inputs: self.r.nrows(),
            n_hidden: self.r.ncols(),
            n_classes: self.u.nrows(),
        }
    }

    pub fn r(&self) -> ArrayView2<'_, f64> {
        self.r.view()
    }

    pub fn u(&self) -> ArrayView2<'_, f64> {
        self.u.view()
    }

    pub fn c(&self) -> ArrayView1<'_, f64> {
        self.c.view()
    }

    pub fn d(&self) -> ArrayView1<'_, f64> {
        self.d.view()
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(&self.u).chain(&self.c).chain(&self.d).all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.r
            .iter()
            .chain(&self.u)
            .chain(&self.c)
            .chain(&self.d)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self - lr * step`, consuming `self`.
    pub fn descend(mut self, step: &DrbmParams, lr: f64) -> Result<Self> {
        if self.dims() != step.dims() {
            return Err(Error::Shape("step has different dimensions".into()));
        }
        self.r.scaled_add(-lr, &step.r);
        self.u.scaled_add(-lr, &step.u);
        self.c.scaled_add(-lr, &step.c);
        self.d.scaled_add(-lr, &step.d);
        if !self.is_finite() {
            return Err(Error::NonFinite("parameters diverged during descent".into()));
        }
        Ok(self)
    }

    fn check_input(&self, x: ArrayView1<'_, f64>) -> Result<()> {
        if x.len() != self.r.nrows() {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.r.nrows()
            )));
        }
        Ok(())
    }

    fn check_class(&self, y: usize) -> Result<()> {
        if y >= self.u.nrows() {
            return Err(Error::Shape(format!(
                "class {y} out of range for {} classes",
                self.u.nrows()
            )));
        }
        Ok(())
    }

    fn check_batch(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::Usage("empty batch".into()));
        }
        if x.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} labels",
                x.nrows(),
                labels.len()
            )));
        }
        if x.ncols() != self.r.nrows() {
            return Err(Error::Shape(format!(
                "inputs have {} features, model expects {}",
                x.ncols(),
                self.r.nrows()
            )));
        }
        labels.iter().try_for_each(|&y| self.check_class(y))
    }

    /// Class-independent part of the pre-activations, `c + R^T x` per row.
    fn hidden_input(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = x.dot(&self.r);
        h += &self.c;
        h
    }

    /// Pre-activations `alpha_yj = c_j + r_j . x + u_yj` for one class.
    pub fn activations(&self, x: ArrayView1<'_, f64>, y: usize) -> Result<Array1<f64>> {
        self.check_input(x)?;
        self.check_class(y)?;
        Ok(x.dot(&self.r) + &self.c + &self.u.row(y))
    }

    /// Unnormalised log scores `d_y + sum_j log_state_sum(alpha_yj)`.
    pub fn class_log_scores<H: HiddenUnits + ?Sized>(
        &self,
        units: &H,
        x: ArrayView1<'_, f64>,
    ) -> Result<Array1<f64>> {
        self.check_input(x)?;
        let h = x.dot(&self.r) + &self.c;
        let mut scores = Array1::zeros(self.u.nrows());
        self.scores_into(units, h.view(), scores.view_mut().into_slice().unwrap())?;
        Ok(scores)
    }

    fn scores_into<H: HiddenUnits + ?Sized>(
        &self,
        units: &H,
        hidden_in: ArrayView1<'_, f64>,
        out: &mut [f64],
    ) -> Result<()> {
        for (y, (score, u_row)) in out.iter_mut().zip(self.u.rows()).enumerate() {
            let mut acc = self.d[y];
            for (&h, &u) in hidden_in.iter().zip(u_row) {
                acc += units.log_state_sum(h + u)?;
            }
            *score = acc;
        }
        Ok(())
    }

    /// `log P(y|x)` for every class, plus the arg-max class.
    pub fn predict_log_proba<H: HiddenUnits + ?Sized>(
        &self,
        units: &H,
        x: ArrayView1<'_, f64>,
    ) -> Result<ClassConditional> {
        let scores = self.class_log_scores(units, x)?;
        Ok(ClassConditional::from_scores(scores.to_vec()))
    }

    /// Conditionals for every row of `x`. Rows are independent, so this runs
    /// in parallel without affecting the result.
    pub fn predict_batch<H: HiddenUnits + ?Sized>(
        &self,
        units: &H,
        x: ArrayView2<'_, f64>,
    ) -> Result<Vec<ClassConditional>> {
        if x.ncols() != self.r.nrows() {
            return Err(Error::Shape(format!(
                "inputs have {} features, model expects {}",
                x.ncols(),
                self.r.nrows()
            )));
        }
        let h = self.hidden_input(x);
        let n_c = self.u.nrows();
        h.axis_iter(Axis(0))
            .into_par_iter()
            .map(|row| {
                let mut scores = vec![0.0; n_c];
                self.scores_into(units, row, &mut scores)?;
                Ok(ClassConditional::from_scores(scores))
            })
            .collect()
    }

    /// Arg-max class for every row of `x`.
    pub fn predict_labels<H: HiddenUnits + ?Sized>(
        &self,
        units: &H,
        x: ArrayView2<'_, f64>,
    ) -> Result<Vec<usize>> {
        Ok(self
            .predict_batch(units, x)?
            .into_iter()
            .map(|c| c.predicted)
            .collect())
    }

    /// Mean negative log-likelihood `-log P(y_i|x_i)` over the batch.
    pub fn nll<H: HiddenUnits + ?Sized>(
        &self,
        units: &H,
        x: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> Result<f64> {
        self.check_batch(x, labels)?;
        let conditionals = self.predict_batch(units, x)?;
        let total: f64 = conditionals
            .iter()
            .zip(labels)
            .map(|(c, &y)| -c.log_proba[y])
            .sum();
        Ok(total / labels.len() as f64)
    }

    /// Gradient of the mean negative log-likelihood (the loss, not the
    /// likelihood: gradient descent subtracts it).
    pub fn gradient<H: HiddenUnits + ?Sized>(
        &self,
        units: &H,
        x: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> Result<DrbmParams> {
        self.loss_and_gradient(units, x, labels).map(|(_, g)| g)
    }

    /// Mean negative log-likelihood and its gradient in one pass.
    ///
    /// With `mu_yj = mean_state(alpha_yj)`, `pi_y = P(y|x)` and true class
    /// `t`, one example contributes
    /// `dc_j = -(mu_tj - sum_y pi_y mu_yj)`, `dr_ij = x_i dc_j`,
    /// `du_yj = -(1[y=t] - pi_y) mu_yj` and `dd_y = -(1[y=t] - pi_y)`.
    pub fn loss_and_gradient<H: HiddenUnits + ?Sized>(
        &self,
        units: &H,
        x: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> Result<(f64, DrbmParams)> {
        let parts = self.backprop(units, x, labels)?;
        let scale = 1.0 / labels.len() as f64;
        let mut grad_r = x.t().dot(&parts.hidden_delta);
        grad_r *= scale;
        let mut grad_c = parts.hidden_delta.sum_axis(Axis(0));
        grad_c *= scale;
        let grad = DrbmParams::new(grad_r, parts.grad_u * scale, grad_c, parts.grad_d * scale)?;
        Ok((parts.loss * scale, grad))
    }

    /// `self - lr * gradient(x, labels)` computed in place. The input weights
    /// receive one rank-1 update per example, skipping zero inputs, which is
    /// much cheaper than forming the dense gradient for sparse inputs such as
    /// images. Returns the updated parameters and the batch loss before the
    /// step.
    pub fn sgd_step<H: HiddenUnits + ?Sized>(
        mut self,
        units: &H,
        x: ArrayView2<'_, f64>,
        labels: &[usize],
        lr: f64,
    ) -> Result<(Self, f64)> {
        let parts = self.backprop(units, x, labels)?;
        let scale = 1.0 / labels.len() as f64;
        if !parts.hidden_delta.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("gradient is not finite".into()));
        }
        let mut touched = vec![false; self.r.nrows()];
        for (x_row, delta) in x.rows().into_iter().zip(parts.hidden_delta.rows()) {
            for (i, &xi) in x_row.iter().enumerate() {
                if xi != 0.0 {
                    touched[i] = true;
                    let a = -lr * (xi * scale);
                    Zip::from(self.r.row_mut(i)).and(delta).for_each(|r, &dj| *r += a * dj);
                }
            }
        }
        let grad_c = parts.hidden_delta.sum_axis(Axis(0));
        self.c.scaled_add(-lr * scale, &grad_c);
        self.u.scaled_add(-lr * scale, &parts.grad_u);
        self.d.scaled_add(-lr * scale, &parts.grad_d);
        let rows_finite = touched
            .iter()
            .enumerate()
            .filter(|(_, &t)| t)
            .all(|(i, _)| self.r.row(i).iter().all(|v| v.is_finite()));
        let rest_finite = self.u.iter().chain(&self.c).chain(&self.d).all(|v| v.is_finite());
        if !(rows_finite && rest_finite) {
            return Err(Error::NonFinite("parameters diverged during descent".into()));
        }
        Ok((self, parts.loss * scale))
    }

    /// Unscaled batch sums shared by the gradient and the in-place step.
    fn backprop<H: HiddenUnits + ?Sized>(
        &self,
        units: &H,
        x: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> Result<Backprop> {
        self.check_batch(x, labels)?;
        let n_c = self.u.nrows();
        let n_h = self.u.ncols();
        let h = self.hidden_input(x);

        // Row b of `hidden_delta` holds -(mu_tj - sum_y pi_y mu_yj) for example b.
        let mut hidden_delta = Array2::<f64>::zeros((labels.len(), n_h));
        let mut grad_u = Array2::<f64>::zeros((n_c, n_h));
        let mut grad_d = Array1::<f64>::zeros(n_c);
        let mut loss = 0.0;

        let mut scores = vec![0.0; n_c];
        let mut means = Array2::<f64>::zeros((n_c, n_h));
        for ((h_row, mut delta_row), &target) in
            h.rows().into_iter().zip(hidden_delta.rows_mut()).zip(labels)
        {
            for (y, (u_row, mut mu_row)) in self.u.rows().into_iter().zip(means.rows_mut()).enumerate() {
                let mut acc = self.d[y];
                for ((&hj, &uj), mu) in h_row.iter().zip(u_row).zip(mu_row.iter_mut()) {
                    let alpha = hj + uj;
                    acc += units.log_state_sum(alpha)?;
                    *mu = units.mean_state(alpha)?;
                }
                scores[y] = acc;
            }
            let cond = ClassConditional::from_scores(scores.clone());
            loss -= cond.log_proba[target];

            delta_row.assign(&means.row(target));
            delta_row *= -1.0;
            for (y, (mu_row, mut gu_row)) in means.rows().into_iter().zip(grad_u.rows_mut()).enumerate() {
                let pi = cond.log_proba[y].exp();
                let coef = f64::from(u8::from(y == target)) - pi;
                delta_row.scaled_add(pi, &mu_row);
                gu_row.scaled_add(-coef, &mu_row);
                grad_d[y] -= coef;
            }
        }
        Ok(Backprop {
            loss,
            hidden_delta,
            grad_u,
            grad_d,
        })
    }
}

struct Backprop {
    loss: f64,
    hidden_delta: Array2<f64>,
    grad_u: Array2<f64>,
    grad_d: Array1<f64>,
}

/// `log P(y|x)` for each class and the predicted (arg-max) class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassConditional {
    pub log_proba: Vec<f64>,
    pub predicted: usize,
}

impl ClassConditional {
    /// Log-softmax of unnormalised log scores. Ties in the arg-max go to the
    /// lowest class index.
    pub fn from_scores(mut scores: Vec<f64>) -> Self {
        let mut predicted = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[predicted] {
                predicted = i;
            }
        }
        let max = scores[predicted];
        let log_norm = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        for s in &mut scores {
            *s -= log_norm;
        }
        ClassConditional {
            log_proba: scores,
            predicted,
        }
    }

    pub fn proba(&self) -> Vec<f64> {
        self.log_proba.iter().map(|l| l.exp()).collect()
    }
}

/// Element-wise helper used by tests and verification: largest absolute
/// difference between two parameter sets of equal shape.
pub fn max_abs_diff(a: &DrbmParams, b: &DrbmParams) -> f64 {
    let mut m: f64 = 0.0;
    Zip::from(&a.r).and(&b.r).for_each(|x, y| m = m.max((x - y).abs()));
    Zip::from(&a.u).and(&b.u).for_each(|x, y| m = m.max((x - y).abs()));
    Zip::from(&a.c).and(&b.c).for_each(|x, y| m = m.max((x - y).abs()));
    Zip::from(&a.d).and(&b.d).for_each(|x, y| m = m.max((x - y).abs()));
    m
}
