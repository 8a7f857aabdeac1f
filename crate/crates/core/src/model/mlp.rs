use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::linalg::{axpy, dot, Matrix};
use crate::{seeds, Error, Result, Scalar};

/// Output nonlinearity and matching loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Independent sigmoids with summed binary cross-entropy.
    Sigmoid,
    /// Softmax with categorical cross-entropy.
    Softmax,
}

/// Per-epoch mean training loss, measured before each batch update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Single hidden layer network with all parameters in one flat buffer:
/// `W1 (H x D) | b1 (H) | W2 (C x H) | b2 (C)`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    input: usize,
    hidden: usize,
    outputs: usize,
    output: OutputKind,
    params: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn new(input: usize, hidden: usize, outputs: usize, output: OutputKind, seed: u64) -> Self {
        let mut rng = seeds::rng(seeds::derive(seed, "mlp-init", 0));
        let n = Self::param_count(input, hidden, outputs);
        let mut params = vec![T::zero(); n];
        let a1 = (6.0 / (input + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + outputs) as f64).sqrt();
        let (w1, rest) = params.split_at_mut(hidden * input);
        for w in w1.iter_mut() {
            *w = T::of(rng.random_range(-a1..a1));
        }
        let w2 = &mut rest[hidden..hidden + outputs * hidden];
        for w in w2.iter_mut() {
            *w = T::of(rng.random_range(-a2..a2));
        }
        Self {
            input,
            hidden,
            outputs,
            output,
            params,
        }
    }

    pub fn from_params(input: usize, hidden: usize, outputs: usize, output: OutputKind, params: Vec<T>) -> Result<Self> {
        if params.len() != Self::param_count(input, hidden, outputs) {
            return Err(Error::ModelFormat(format!(
                "expected {} parameters for {input}x{hidden}x{outputs}, got {}",
                Self::param_count(input, hidden, outputs),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::ModelFormat("non-finite parameter".into()));
        }
        Ok(Self {
            input,
            hidden,
            outputs,
            output,
            params,
        })
    }

    pub fn param_count(input: usize, hidden: usize, outputs: usize) -> usize {
        hidden * input + hidden + outputs * hidden + outputs
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.outputs
    }

    pub fn output_kind(&self) -> OutputKind {
        self.output
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.outputs * self.hidden;
        (b1, w2, b2)
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input {
            return Err(Error::Precondition(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.input
            )));
        }
        Ok(())
    }

    fn hidden_into(&self, x: &[T], h: &mut [T]) {
        let (b1, _, _) = self.offsets();
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &self.params[j * self.input..(j + 1) * self.input];
            *hj = (dot(row, x) + self.params[b1 + j]).tanh();
        }
    }

    fn logits_into(&self, h: &[T], z: &mut [T]) {
        let (_, w2, b2) = self.offsets();
        for (c, zc) in z.iter_mut().enumerate() {
            let row = &self.params[w2 + c * self.hidden..w2 + (c + 1) * self.hidden];
            *zc = dot(row, h) + self.params[b2 + c];
        }
    }

    fn activate(&self, z: &mut [T]) {
        match self.output {
            OutputKind::Sigmoid => {
                for v in z.iter_mut() {
                    *v = sigmoid(*v);
                }
            }
            OutputKind::Softmax => softmax_in_place(z),
        }
    }

    /// Hidden activation of `x`.
    pub fn hidden(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut h = vec![T::zero(); self.hidden];
        self.hidden_into(x, &mut h);
        Ok(h)
    }

    /// Output probabilities and hidden activation of `x`.
    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let h = self.hidden(x)?;
        let mut z = vec![T::zero(); self.outputs];
        self.logits_into(&h, &mut z);
        self.activate(&mut z);
        Ok((z, h))
    }

    /// Mean loss over the examples and its gradient with respect to
    /// [`Mlp::params`].
    pub fn loss_and_gradient(&self, xs: &[&[T]], ys: &[&[T]]) -> Result<(T, Vec<T>)> {
        if xs.len() != ys.len() || xs.is_empty() {
            return Err(Error::Precondition("need equally many inputs and targets".into()));
        }
        for (x, y) in xs.iter().zip(ys) {
            self.check_input(x)?;
            if y.len() != self.outputs {
                return Err(Error::Precondition("target has wrong width".into()));
            }
        }
        let mut grad = vec![T::zero(); self.params.len()];
        let mut scratch = Scratch::default();
        let loss = self.accumulate(xs, ys, &mut grad, &mut scratch);
        Ok((loss, grad))
    }

    /// Adds the batch-mean gradient into `grad` and returns the batch-mean loss.
    ///
    /// Loops run over weight rows outermost so each row is read once per
    /// batch; every gradient entry still accumulates examples in batch order.
    fn accumulate(&self, xs: &[&[T]], ys: &[&[T]], grad: &mut [T], s: &mut Scratch<T>) -> T {
        let (b1, w2, b2) = self.offsets();
        let (hd, out) = (self.hidden, self.outputs);
        let batch = xs.len();
        let inv = T::one() / T::of_usize(batch);
        s.resize(batch, hd, out);
        for j in 0..hd {
            let row = &self.params[j * self.input..(j + 1) * self.input];
            let bias = self.params[b1 + j];
            for (b, x) in xs.iter().enumerate() {
                s.h[b * hd + j] = (dot(row, x) + bias).tanh();
            }
        }
        let mut total = T::zero();
        for (b, y) in ys.iter().enumerate() {
            let h = &s.h[b * hd..(b + 1) * hd];
            let z = &mut s.z[b * out..(b + 1) * out];
            for (c, zc) in z.iter_mut().enumerate() {
                *zc = dot(&self.params[w2 + c * hd..w2 + (c + 1) * hd], h) + self.params[b2 + c];
            }
            total += example_loss(self.output, z, y);
            let p = &mut s.p[..out];
            p.copy_from_slice(z);
            self.activate(p);
            for c in 0..out {
                s.dz[b * out + c] = (p[c] - y[c]) * inv;
            }
        }
        s.dh.iter_mut().for_each(|v| *v = T::zero());
        for b in 0..batch {
            let h = &s.h[b * hd..(b + 1) * hd];
            let dh = &mut s.dh[b * hd..(b + 1) * hd];
            for c in 0..out {
                let dz = s.dz[b * out + c];
                let off = w2 + c * hd;
                axpy(dz, h, &mut grad[off..off + hd]);
                grad[b2 + c] += dz;
                axpy(dz, &self.params[off..off + hd], dh);
            }
            for j in 0..hd {
                dh[j] *= T::one() - h[j] * h[j];
            }
        }
        let (w1, rest) = grad.split_at_mut(b1);
        for (j, g) in w1.chunks_exact_mut(self.input).enumerate() {
            for (b, x) in xs.iter().enumerate() {
                let dpre = s.dh[b * hd + j];
                if dpre != T::zero() {
                    axpy(dpre, x, g);
                }
                rest[j] += dpre;
            }
        }
        total * inv
    }

    /// Minibatch Adam on `(x, y)` starting from the current parameters.
    pub fn fit(&mut self, x: &Matrix<T>, y: &Matrix<T>, config: &TrainConfig) -> Result<TrainReport> {
        config.validate()?;
        if x.rows() != y.rows() || x.rows() == 0 {
            return Err(Error::Precondition(format!(
                "training set has {} inputs and {} targets",
                x.rows(),
                y.rows()
            )));
        }
        if x.cols() != self.input || y.cols() != self.outputs {
            return Err(Error::Precondition("training matrix shape does not match model".into()));
        }
        let n = x.rows();
        let batches = n.div_ceil(config.batch_size);
        let total_steps = batches * config.epochs;
        let mut adam = Adam::new(self.params.len(), config);
        let mut grad = vec![T::zero(); self.params.len()];
        let mut scratch = Scratch::default();
        let mut xs: Vec<&[T]> = Vec::with_capacity(config.batch_size);
        let mut ys: Vec<&[T]> = Vec::with_capacity(config.batch_size);
        let mut order: Vec<usize> = (0..n).collect();
        let mut report = TrainReport::default();
        for epoch in 0..config.epochs {
            let mut rng = seeds::rng(seeds::derive(config.seed, "mlp-shuffle", epoch as u64));
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for (batch, idx) in order.chunks(config.batch_size).enumerate() {
                grad.iter_mut().for_each(|g| *g = T::zero());
                xs.clear();
                ys.clear();
                xs.extend(idx.iter().map(|&i| x.row(i)));
                ys.extend(idx.iter().map(|&i| y.row(i)));
                let loss = self.accumulate(&xs, &ys, &mut grad, &mut scratch);
                report.steps += 1;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step: report.steps,
                        epoch,
                        batch,
                    });
                }
                epoch_loss += loss.as_f64() * idx.len() as f64;
                let lr = config.learning_rate_at(report.steps, total_steps);
                adam.step(&mut self.params, &grad, lr);
            }
            if self.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    step: report.steps,
                    epoch,
                    batch: batches - 1,
                });
            }
            report.epoch_losses.push(epoch_loss / n as f64);
        }
        tracing::debug!(
            epochs = config.epochs,
            steps = report.steps,
            final_loss = report.epoch_losses.last().copied().unwrap_or(f64::NAN),
            "trained head"
        );
        Ok(report)
    }
}

#[derive(Default)]
struct Scratch<T> {
    h: Vec<T>,
    z: Vec<T>,
    p: Vec<T>,
    dz: Vec<T>,
    dh: Vec<T>,
}

impl<T: Scalar> Scratch<T> {
    fn resize(&mut self, batch: usize, hidden: usize, outputs: usize) {
        self.h.resize(batch * hidden, T::zero());
        self.z.resize(batch * outputs, T::zero());
        self.p.resize(outputs, T::zero());
        self.dz.resize(batch * outputs, T::zero());
        self.dh.resize(batch * hidden, T::zero());
    }
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
    beta1: T,
    beta2: T,
    epsilon: T,
}

impl<T: Scalar> Adam<T> {
    fn new(n: usize, c: &TrainConfig) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
            beta1: T::of(c.beta1),
            beta2: T::of(c.beta2),
            epsilon: T::of(c.epsilon),
        }
    }

    fn step(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        self.t += 1;
        let c1 = T::one() - self.beta1.powi(self.t);
        let c2 = T::one() - self.beta2.powi(self.t);
        let lr = T::of(lr);
        let (b1, b2) = (self.beta1, self.beta2);
        let (ob1, ob2) = (T::one() - b1, T::one() - b2);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + ob1 * g;
            *v = b2 * *v + ob2 * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + self.epsilon);
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(z: &mut [T]) {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

fn example_loss<T: Scalar>(kind: OutputKind, z: &[T], y: &[T]) -> T {
    match kind {
        OutputKind::Sigmoid => z
            .iter()
            .zip(y)
            .map(|(&z, &y)| z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p())
            .sum(),
        OutputKind::Softmax => {
            let m = z.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            lse - z.iter().zip(y).map(|(&z, &y)| z * y).sum::<T>()
        }
    }
}
