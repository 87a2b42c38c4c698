//! Downstream classifiers: a one-vs-rest linear hinge probe and a one-hidden-
//! layer softmax network. Both standardise inputs with statistics of their
//! training features and predict by argmax, ties to the lower class id.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::checkpoint::Checkpoint;
use crate::dataset::LabelVector;
use crate::matrix::Matrix;
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

/// Index of the largest score; the first one wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = c;
        }
    }
    best
}

/// Per-column mean and standard deviation; zero deviations become 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(d: usize) -> Self {
        Standardizer {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn fit(x: &Matrix) -> Self {
        let n = x.rows() as f64;
        let d = x.cols();
        let mut mean = vec![0.0; d];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for row in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

fn check_training(features: &Matrix, n_labels: usize, classes: usize) -> Result<()> {
    if features.rows() != n_labels {
        return Err(Error::DimensionMismatch {
            expected: features.rows(),
            got: n_labels,
        });
    }
    if features.rows() == 0 {
        return Err(Error::invalid("empty training set"));
    }
    if let Some((row, column)) = features.first_non_finite() {
        return Err(Error::NonFinite { row, column });
    }
    if classes < 2 {
        return Err(Error::invalid("a classifier needs at least 2 classes"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearConfig {
    pub lambda: f64,
    pub epochs: usize,
    /// Step in epoch `e` (1-based) is `step / sqrt(e)`.
    pub step: f64,
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            lambda: 1.0,
            epochs: 200,
            step: 1e-3,
            seed: 0,
        }
    }
}

/// One-vs-rest linear scorer: row `c` of `weights` holds class `c`'s
/// weights followed by its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub weights: Matrix,
    pub standardizer: Standardizer,
    pub config: LinearConfig,
    /// Objective of the best iterate after each epoch (index 0 is the start).
    pub objective: Vec<f64>,
}

impl LinearModel {
    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dims(&self) -> usize {
        self.weights.cols() - 1
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let z = self.standardizer.apply(x);
        scores(&self.weights, &z)
    }

    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        check_dims(self.dims(), features.cols())?;
        Ok(features.iter_rows().map(|x| argmax(&self.scores(x))).collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let (k, d1) = (self.weights.rows(), self.weights.cols());
        let mut values = self.weights.as_slice().to_vec();
        values.extend_from_slice(&self.standardizer.mean);
        values.extend_from_slice(&self.standardizer.std);
        Checkpoint::new("linear", vec![(k, d1), (1, d1 - 1), (1, d1 - 1)], values)
            .expect("layout matches")
    }
}

fn scores(weights: &Matrix, z: &[f64]) -> Vec<f64> {
    let d = z.len();
    weights
        .iter_rows()
        .map(|w| w[..d].iter().zip(z).fold(w[d], |acc, (a, b)| acc + a * b))
        .collect()
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `lambda/2 |W|^2 + mean_i sum_c max(0, 1 - y_ic s_c(x_i))`, biases unregularised.
pub fn linear_objective(weights: &Matrix, z: &[Vec<f64>], labels: &[usize], lambda: f64) -> f64 {
    let d = weights.cols() - 1;
    let reg: f64 = weights
        .iter_rows()
        .map(|w| w[..d].iter().map(|v| v * v).sum::<f64>())
        .sum();
    let mut hinge = 0.0;
    for (x, &y) in z.iter().zip(labels) {
        for (c, s) in scores(weights, x).into_iter().enumerate() {
            let sign = if c == y { 1.0 } else { -1.0 };
            hinge += (1.0 - sign * s).max(0.0);
        }
    }
    0.5 * lambda * reg + hinge / z.len() as f64
}

/// Full-batch subgradient descent; the lowest-objective iterate is kept.
pub fn train_linear(
    features: &Matrix,
    labels: &[usize],
    classes: usize,
    config: &LinearConfig,
) -> Result<LinearModel> {
    check_training(features, labels.len(), classes)?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!("label {bad} outside [0, {classes})")));
    }
    let mut present = vec![false; classes];
    for &l in labels {
        present[l] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::invalid("linear probe needs at least 2 distinct classes"));
    }
    if !(config.lambda >= 0.0) || !(config.step > 0.0) {
        return Err(Error::invalid("linear probe settings out of range"));
    }
    let standardizer = Standardizer::fit(features);
    let z: Vec<Vec<f64>> = features.iter_rows().map(|x| standardizer.apply(x)).collect();
    let d = features.cols();
    let n = z.len() as f64;
    let mut w = Matrix::zeros(classes, d + 1);
    let mut best = w.clone();
    let mut best_obj = linear_objective(&w, &z, labels, config.lambda);
    let mut objective = vec![best_obj];
    let mut grad = Matrix::zeros(classes, d + 1);
    for epoch in 1..=config.epochs {
        grad.as_mut_slice().fill(0.0);
        for (x, &y) in z.iter().zip(labels) {
            for (c, s) in scores(&w, x).into_iter().enumerate() {
                let sign = if c == y { 1.0 } else { -1.0 };
                if sign * s < 1.0 {
                    let g = grad.row_mut(c);
                    for k in 0..d {
                        g[k] -= sign * x[k] / n;
                    }
                    g[d] -= sign / n;
                }
            }
        }
        let eta = config.step / (epoch as f64).sqrt();
        for c in 0..classes {
            let row = w.row_mut(c);
            let g = grad.row(c);
            for k in 0..=d {
                let reg = if k < d { config.lambda * row[k] } else { 0.0 };
                row[k] -= eta * (g[k] + reg);
            }
        }
        let obj = linear_objective(&w, &z, labels, config.lambda);
        if obj < best_obj {
            best_obj = obj;
            best.as_mut_slice().copy_from_slice(w.as_slice());
        }
        objective.push(best_obj);
    }
    Ok(LinearModel {
        weights: best,
        standardizer,
        config: config.clone(),
        objective,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxConfig {
    pub hidden: usize,
    pub epochs: usize,
    /// Initial step, decayed linearly to 0 over all updates.
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        SoftmaxConfig {
            hidden: 64,
            epochs: 15,
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// `input -> hidden (ReLU) -> classes` with softmax output. Parameters are
/// flat: `W1 (hidden x input)`, `b1`, `W2 (classes x hidden)`, `b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxModel {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    pub params: Vec<f64>,
    pub standardizer: Standardizer,
}

impl SoftmaxModel {
    pub fn initial(input: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = seeded(derive_seed(seed, "softmax-init"));
        let mut params = vec![0.0; hidden * input + hidden + classes * hidden + classes];
        let l1 = (6.0 / input as f64).sqrt();
        let l2 = (6.0 / hidden as f64).sqrt();
        let w2_at = hidden * input + hidden;
        for v in &mut params[..hidden * input] {
            *v = rng.random_range(-l1..l1);
        }
        for v in &mut params[w2_at..w2_at + classes * hidden] {
            *v = rng.random_range(-l2..l2);
        }
        SoftmaxModel {
            input,
            hidden,
            classes,
            params,
            standardizer: Standardizer::identity(input),
        }
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (h, i, k) = (self.hidden, self.input, self.classes);
        let (w1, rest) = self.params.split_at(h * i);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(k * h);
        (w1, b1, w2, b2)
    }

    /// Hidden activations and class probabilities for a standardised row.
    fn forward(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (w1, b1, w2, b2) = self.split();
        let i = self.input;
        let h: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let a = w1[j * i..(j + 1) * i]
                    .iter()
                    .zip(z)
                    .fold(b1[j], |acc, (w, x)| acc + w * x);
                a.max(0.0)
            })
            .collect();
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| {
                w2[c * self.hidden..(c + 1) * self.hidden]
                    .iter()
                    .zip(&h)
                    .fold(b2[c], |acc, (w, x)| acc + w * x)
            })
            .collect();
        (h, softmax(&logits))
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        self.forward(&self.standardizer.apply(x)).1
    }

    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        check_dims(self.input, features.cols())?;
        Ok(features
            .iter_rows()
            .map(|x| argmax(&self.probabilities(x)))
            .collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let (h, i, k) = (self.hidden, self.input, self.classes);
        let mut values = self.params.clone();
        values.extend_from_slice(&self.standardizer.mean);
        values.extend_from_slice(&self.standardizer.std);
        Checkpoint::new(
            "softmax",
            vec![(h, i), (h, 1), (k, h), (k, 1), (1, i), (1, i)],
            values,
        )
        .expect("layout matches")
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean cross-entropy of `model` over standardised rows `z` and its gradient.
pub fn cross_entropy_gradient(
    model: &SoftmaxModel,
    z: &[Vec<f64>],
    labels: &[usize],
) -> (f64, Vec<f64>) {
    let (h_n, i_n, k_n) = (model.hidden, model.input, model.classes);
    let (_, _, w2, _) = model.split();
    let b1_at = h_n * i_n;
    let w2_at = b1_at + h_n;
    let b2_at = w2_at + k_n * h_n;
    let mut grad = vec![0.0; model.params.len()];
    let mut loss = 0.0;
    let scale = 1.0 / z.len() as f64;
    for (x, &y) in z.iter().zip(labels) {
        let (h, p) = model.forward(x);
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        let dlogit: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(c, &pc)| (pc - f64::from(u8::from(c == y))) * scale)
            .collect();
        let mut dh = vec![0.0; h_n];
        for (c, &g) in dlogit.iter().enumerate() {
            for j in 0..h_n {
                grad[w2_at + c * h_n + j] += g * h[j];
                dh[j] += g * w2[c * h_n + j];
            }
            grad[b2_at + c] += g;
        }
        for j in 0..h_n {
            if h[j] <= 0.0 {
                continue;
            }
            for k in 0..i_n {
                grad[j * i_n + k] += dh[j] * x[k];
            }
            grad[b1_at + j] += dh[j];
        }
    }
    (loss * scale, grad)
}

/// Minibatch SGD with momentum on cross-entropy; every row must carry a
/// (true or pseudo) label.
pub fn train_softmax(
    features: &Matrix,
    labels: &LabelVector,
    classes: usize,
    config: &SoftmaxConfig,
) -> Result<SoftmaxModel> {
    check_training(features, labels.len(), classes)?;
    let y: Vec<usize> = (0..labels.len())
        .map(|i| labels.class(i).ok_or(Error::MissingLabel(i)))
        .collect::<Result<_>>()?;
    if let Some(&bad) = y.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!("label {bad} outside [0, {classes})")));
    }
    if config.hidden == 0 || config.batch_size == 0 || !(config.learning_rate >= 0.0) {
        return Err(Error::invalid("softmax settings out of range"));
    }
    let mut model = SoftmaxModel::initial(features.cols(), config.hidden, classes, config.seed);
    model.standardizer = Standardizer::fit(features);
    let z: Vec<Vec<f64>> = features
        .iter_rows()
        .map(|x| model.standardizer.apply(x))
        .collect();
    let n = z.len();
    let per_epoch = n.div_ceil(config.batch_size);
    let total = (per_epoch * config.epochs) as f64;
    let mut velocity = vec![0.0; model.params.len()];
    let mut rng = seeded(derive_seed(config.seed, "softmax-order"));
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let bz: Vec<Vec<f64>> = chunk.iter().map(|&i| z[i].clone()).collect();
            let by: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (_, grad) = cross_entropy_gradient(&model, &bz, &by);
            let lr = config.learning_rate * (1.0 - t as f64 / total);
            for ((p, v), g) in model.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = config.momentum * *v + g;
                *p -= lr * *v;
            }
            t += 1;
        }
        if model.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("softmax parameters diverged".into()));
        }
    }
    Ok(model)
}
