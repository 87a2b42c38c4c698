//! Contrastive representation learning on feature vectors.
//!
//! The encoder is a two-layer MLP (`d -> hidden (ReLU) -> latent`) whose
//! latent output is the extracted feature. A projection head
//! (`latent -> head_hidden (ReLU) -> output`, L2-normalised) is used only
//! inside the losses. Views are produced by Gaussian noise plus coordinate
//! dropout and come in interleaved pairs: rows `2i` and `2i + 1` of a
//! [`ViewBatch`] are the two views of one source sample.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::checkpoint::Checkpoint;
use crate::dataset::{generate_blobs, BlobSpec};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, seeded, Rng};
use crate::{Error, Result};

/// Norms at or below this are treated as zero when normalising the head.
pub const NORM_EPS: f64 = 1e-12;

pub const CHECKPOINT_KIND: &str = "encoder";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Noise standard deviation as a multiple of each feature's spread.
    pub noise: f64,
    pub dropout: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            noise: 0.1,
            dropout: 0.1,
        }
    }
}

/// Population standard deviation of each column over `rows`.
pub fn feature_scale(data: &Matrix, rows: &[usize]) -> Vec<f64> {
    let d = data.cols();
    if rows.is_empty() {
        return vec![0.0; d];
    }
    let n = rows.len() as f64;
    (0..d)
        .map(|j| {
            let mean = rows.iter().map(|&r| data.get(r, j)).sum::<f64>() / n;
            let var = rows
                .iter()
                .map(|&r| (data.get(r, j) - mean).powi(2))
                .sum::<f64>()
                / n;
            var.sqrt()
        })
        .collect()
}

/// `x + N(0, (noise * scale_j)^2)` per coordinate, then each coordinate is
/// zeroed with probability `dropout`. Always draws two numbers per
/// coordinate so the stream position does not depend on the strength.
pub fn augment(x: &[f64], scale: &[f64], config: &AugmentConfig, rng: &mut Rng) -> Vec<f64> {
    x.iter()
        .zip(scale)
        .map(|(&v, &s)| {
            let z: f64 = StandardNormal.sample(rng);
            let u: f64 = rng.random();
            if u < config.dropout {
                0.0
            } else {
                v + config.noise * s * z
            }
        })
        .collect()
}

/// Layer widths; the defaults are 64 / 32 / 32 / 16.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub hidden: usize,
    pub latent: usize,
    pub head_hidden: usize,
    pub output: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            hidden: 64,
            latent: 32,
            head_hidden: 32,
            output: 16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderShape {
    pub input: usize,
    pub arch: Architecture,
}

impl EncoderShape {
    pub fn new(input: usize, arch: Architecture) -> Self {
        EncoderShape { input, arch }
    }

    /// `(fan_in, fan_out)` of the four dense layers.
    pub fn layers(&self) -> [(usize, usize); 4] {
        let a = self.arch;
        [
            (self.input, a.hidden),
            (a.hidden, a.latent),
            (a.latent, a.head_hidden),
            (a.head_hidden, a.output),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| (i + 1) * o).sum()
    }

    fn offsets(&self) -> [(usize, usize); 4] {
        let mut out = [(0, 0); 4];
        let mut at = 0;
        for (k, (i, o)) in self.layers().into_iter().enumerate() {
            out[k] = (at, at + i * o);
            at += (i + 1) * o;
        }
        out
    }
}

/// Encoder and head weights in one flat vector: for each layer the weight
/// matrix (`fan_out x fan_in`, row-major) followed by its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    shape: EncoderShape,
    values: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(shape: EncoderShape) -> Self {
        EncoderParams {
            values: vec![0.0; shape.parameter_count()],
            shape,
        }
    }

    /// Uniform He initialisation: weights in `±sqrt(6 / fan_in)`, zero biases.
    pub fn he_uniform(shape: EncoderShape, rng: &mut Rng) -> Self {
        let mut p = EncoderParams::zeros(shape);
        for layer in 0..4 {
            let fan_in = shape.layers()[layer].0 as f64;
            let limit = (6.0 / fan_in).sqrt();
            for w in p.weights_mut(layer) {
                *w = rng.random_range(-limit..limit);
            }
        }
        p
    }

    pub fn shape(&self) -> EncoderShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let (w, b) = self.shape.offsets()[layer];
        &self.values[w..b]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let (w, b) = self.shape.offsets()[layer];
        &mut self.values[w..b]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let (_, b) = self.shape.offsets()[layer];
        &self.values[b..b + self.shape.layers()[layer].1]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let (_, b) = self.shape.offsets()[layer];
        let o = self.shape.layers()[layer].1;
        &mut self.values[b..b + o]
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut shapes = Vec::with_capacity(8);
        for (i, o) in self.shape.layers() {
            shapes.push((o, i));
            shapes.push((o, 1));
        }
        Checkpoint::new(CHECKPOINT_KIND, shapes, self.values.clone())
            .expect("layout matches parameter count")
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CHECKPOINT_KIND)?;
        let s = &ckpt.shapes;
        let bad = || Error::Checkpoint("encoder tensor table is inconsistent".into());
        if s.len() != 8 {
            return Err(bad());
        }
        let shape = EncoderShape::new(
            s[0].1,
            Architecture {
                hidden: s[0].0,
                latent: s[2].0,
                head_hidden: s[4].0,
                output: s[6].0,
            },
        );
        for (k, (i, o)) in shape.layers().into_iter().enumerate() {
            if s[2 * k] != (o, i) || s[2 * k + 1] != (o, 1) {
                return Err(bad());
            }
        }
        if ckpt.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite encoder parameter".into()));
        }
        Ok(EncoderParams {
            shape,
            values: ckpt.values.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        EncoderParams::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| {
            let row = &w[o * n_in..(o + 1) * n_in];
            row.iter().zip(x).fold(bias, |acc, (a, b)| acc + a * b)
        })
        .collect()
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&a| a.max(0.0)).collect()
}

/// Activations kept for backpropagation.
struct Trace {
    x: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    latent: Vec<f64>,
    a3: Vec<f64>,
    h3: Vec<f64>,
    norm: f64,
    z: Vec<f64>,
}

fn normalize(u: &[f64]) -> (f64, Vec<f64>) {
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > NORM_EPS {
        (norm, u.iter().map(|v| v / norm).collect())
    } else {
        let mut e0 = vec![0.0; u.len()];
        e0[0] = 1.0;
        (norm, e0)
    }
}

fn forward(p: &EncoderParams, x: &[f64]) -> Trace {
    let a1 = dense(p.weights(0), p.bias(0), x);
    let h1 = relu(&a1);
    let latent = dense(p.weights(1), p.bias(1), &h1);
    let a3 = dense(p.weights(2), p.bias(2), &latent);
    let h3 = relu(&a3);
    let u = dense(p.weights(3), p.bias(3), &h3);
    let (norm, z) = normalize(&u);
    Trace {
        x: x.to_vec(),
        a1,
        h1,
        latent,
        a3,
        h3,
        norm,
        z,
    }
}

/// Accumulates `d(loss)/d(params)` into `grad` given `d(loss)/dz`.
fn backward(p: &EncoderParams, t: &Trace, dz: &[f64], grad: &mut [f64]) {
    let offsets = p.shape.offsets();
    let du: Vec<f64> = if t.norm > NORM_EPS {
        let proj: f64 = t.z.iter().zip(dz).map(|(a, b)| a * b).sum();
        dz.iter()
            .zip(&t.z)
            .map(|(g, z)| (g - z * proj) / t.norm)
            .collect()
    } else {
        vec![0.0; dz.len()]
    };
    let dh3 = dense_backward(p, 3, offsets[3], &t.h3, &du, grad);
    let da3: Vec<f64> = gate(&dh3, &t.a3);
    let dlatent = dense_backward(p, 2, offsets[2], &t.latent, &da3, grad);
    let dh1 = dense_backward(p, 1, offsets[1], &t.h1, &dlatent, grad);
    let da1 = gate(&dh1, &t.a1);
    dense_backward(p, 0, offsets[0], &t.x, &da1, grad);
}

fn gate(g: &[f64], pre: &[f64]) -> Vec<f64> {
    g.iter()
        .zip(pre)
        .map(|(g, a)| if *a > 0.0 { *g } else { 0.0 })
        .collect()
}

/// Weight and bias gradients of one layer; returns the input gradient.
fn dense_backward(
    p: &EncoderParams,
    layer: usize,
    (w_at, b_at): (usize, usize),
    input: &[f64],
    dout: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let n_in = input.len();
    let w = p.weights(layer);
    let mut din = vec![0.0; n_in];
    for (o, &g) in dout.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let gw = &mut grad[w_at + o * n_in..w_at + (o + 1) * n_in];
        for (k, (gwk, &xk)) in gw.iter_mut().zip(input).enumerate() {
            *gwk += g * xk;
            din[k] += g * w[o * n_in + k];
        }
        grad[b_at + o] += g;
    }
    din
}

/// Latent feature and normalised head output of one input.
pub fn encode(params: &EncoderParams, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_input(params, x.len())?;
    let t = forward(params, x);
    Ok((t.latent, t.z))
}

fn check_input(params: &EncoderParams, d: usize) -> Result<()> {
    if d != params.shape.input {
        return Err(Error::DimensionMismatch {
            expected: params.shape.input,
            got: d,
        });
    }
    Ok(())
}

/// Latent features of the given rows, in order.
pub fn extract_features(params: &EncoderParams, data: &Matrix, rows: &[usize]) -> Result<Matrix> {
    check_input(params, data.cols())?;
    let m = params.shape.arch.latent;
    let mut out = Matrix::zeros(rows.len(), m);
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(k).copy_from_slice(&forward(params, data.row(r)).latent);
    }
    Ok(out)
}

/// Two augmented views per source sample, interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewBatch {
    pub views: Matrix,
    pub sources: Vec<usize>,
    pub labels: Option<Vec<usize>>,
}

impl ViewBatch {
    /// `members` index rows of `data`; `labels`, when given, is indexed the same way.
    pub fn build(
        data: &Matrix,
        members: &[usize],
        labels: Option<&[usize]>,
        scale: &[f64],
        config: &AugmentConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let d = data.cols();
        let mut views = Matrix::zeros(2 * members.len(), d);
        let mut sources = Vec::with_capacity(2 * members.len());
        let mut view_labels = labels.map(|_| Vec::with_capacity(2 * members.len()));
        for (k, &m) in members.iter().enumerate() {
            for v in 0..2 {
                let row = augment(data.row(m), scale, config, rng);
                views.row_mut(2 * k + v).copy_from_slice(&row);
                sources.push(m);
                if let (Some(out), Some(l)) = (view_labels.as_mut(), labels) {
                    out.push(l[m]);
                }
            }
        }
        Ok(ViewBatch {
            views,
            sources,
            labels: view_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.views.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.views.rows() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradient with respect to each row of the head outputs.
    pub grad: Matrix,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// Mean over anchors of `logsumexp_{a != i}(s_ia) - mean_{p in P(i)} s_ip`
/// with `s_ia = z_i . z_a / tau`.
fn contrastive(z: &Matrix, positives: &[Vec<usize>], tau: f64) -> LossOutput {
    let n = z.rows();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for a in 0..n {
            if a != i {
                let dot: f64 = z.row(i).iter().zip(z.row(a)).map(|(x, y)| x * y).sum();
                s.set(i, a, dot / tau);
            }
        }
    }
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(n, z.cols());
    let scale = 1.0 / (n as f64 * tau);
    let mut coef = vec![0.0; n];
    for i in 0..n {
        let si = s.row(i);
        let max = (0..n)
            .filter(|&a| a != i)
            .map(|a| si[a])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for a in 0..n {
            coef[a] = if a == i { 0.0 } else { (si[a] - max).exp() };
            total += coef[a];
        }
        let lse = max + total.ln();
        let pos = &positives[i];
        let w = 1.0 / pos.len() as f64;
        let pos_mean = pos.iter().map(|&p| si[p]).sum::<f64>() * w;
        loss += lse - pos_mean;
        for c in coef.iter_mut() {
            *c /= total;
        }
        for &p in pos {
            coef[p] -= w;
        }
        for a in 0..n {
            if a == i || coef[a] == 0.0 {
                continue;
            }
            let c = coef[a] * scale;
            for d in 0..z.cols() {
                let za = z.get(a, d);
                let zi = z.get(i, d);
                grad.row_mut(i)[d] += c * za;
                grad.row_mut(a)[d] += c * zi;
            }
        }
    }
    LossOutput {
        loss: loss / n as f64,
        grad,
    }
}

/// NT-Xent over interleaved view pairs (the partner of row `i` is `i ^ 1`).
pub fn ntxent_loss(z: &Matrix, tau: f64) -> Result<LossOutput> {
    check_tau(tau)?;
    let n = z.rows();
    if n < 4 || n % 2 != 0 {
        return Err(Error::invalid(format!(
            "NT-Xent needs an even number of at least 4 views, got {n}"
        )));
    }
    let positives: Vec<Vec<usize>> = (0..n).map(|i| vec![i ^ 1]).collect();
    Ok(contrastive(z, &positives, tau))
}

/// Supervised contrastive loss; positives of a view are all other views
/// sharing its label. View `i` is reported as coming from sample `i / 2`.
pub fn supcon_loss(z: &Matrix, labels: &[usize], tau: f64) -> Result<LossOutput> {
    check_tau(tau)?;
    let n = z.rows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if n < 2 {
        return Err(Error::invalid("SupCon needs at least 2 views"));
    }
    let mut positives = Vec::with_capacity(n);
    for i in 0..n {
        let p: Vec<usize> = (0..n).filter(|&a| a != i && labels[a] == labels[i]).collect();
        if p.is_empty() {
            return Err(Error::NoPositive {
                view: i,
                source_index: i / 2,
                class: labels[i],
            });
        }
        positives.push(p);
    }
    Ok(contrastive(z, &positives, tau))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    SimClr,
    SupCon,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SimClr => "simclr",
            Mode::SupCon => "supcon",
        }
    }
}

/// Loss over a batch and its gradient with respect to every parameter.
pub fn batch_loss_and_gradient(
    params: &EncoderParams,
    batch: &ViewBatch,
    mode: Mode,
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    check_input(params, batch.views.cols())?;
    let traces: Vec<Trace> = batch.views.iter_rows().map(|x| forward(params, x)).collect();
    let p = params.shape.arch.output;
    let mut z = Matrix::zeros(traces.len(), p);
    for (k, t) in traces.iter().enumerate() {
        z.row_mut(k).copy_from_slice(&t.z);
    }
    let out = match mode {
        Mode::SimClr => ntxent_loss(&z, tau)?,
        Mode::SupCon => {
            let labels = batch
                .labels
                .as_deref()
                .ok_or_else(|| Error::invalid("SupCon batch carries no labels"))?;
            supcon_loss(&z, labels, tau).map_err(|e| match e {
                Error::NoPositive { view, class, .. } => Error::NoPositive {
                    view,
                    source_index: batch.sources[view],
                    class,
                },
                other => other,
            })?
        }
    };
    let mut grad = vec![0.0; params.values.len()];
    for (k, t) in traces.iter().enumerate() {
        backward(params, t, out.grad.row(k), &mut grad);
    }
    Ok((out.loss, grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            learning_rate: 5e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, cfg: &AdamW, lr: f64, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * grad[k];
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
            let mhat = self.m[k] / c1;
            let vhat = self.v[k] / c2;
            params[k] -= lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * params[k]);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitMode {
    Scratch,
    WarmStart(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub optimizer: AdamW,
    /// Cosine annealing floor.
    pub min_learning_rate: f64,
    /// Cosine half-period in epochs; `None` uses `epochs`.
    pub schedule_period: Option<usize>,
    pub init: InitMode,
    pub validation_fraction: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            temperature: 0.07,
            optimizer: AdamW::default(),
            min_learning_rate: 5e-4 / 50.0,
            schedule_period: None,
            init: InitMode::Scratch,
            validation_fraction: 0.1,
            seed: 0,
            augment: AugmentConfig::default(),
            architecture: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return Err(Error::invalid("validation fraction must lie in (0, 0.5)"));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0)
            || !(o.weight_decay >= 0.0)
            || !(0.0..1.0).contains(&o.beta1)
            || !(0.0..1.0).contains(&o.beta2)
            || !(o.eps > 0.0)
            || !(self.min_learning_rate >= 0.0)
        {
            return Err(Error::invalid("optimizer settings out of range"));
        }
        if !(self.augment.noise >= 0.0) || !(0.0..=1.0).contains(&self.augment.dropout) {
            return Err(Error::invalid("augmentation settings out of range"));
        }
        let a = self.architecture;
        if a.hidden == 0 || a.latent == 0 || a.head_hidden == 0 || a.output == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if self.schedule_period == Some(0) {
            return Err(Error::invalid("schedule period must be positive"));
        }
        Ok(())
    }

    /// Step size for a 0-based epoch under cosine annealing.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let period = self.schedule_period.unwrap_or(self.epochs).max(1) as f64;
        let phase = (epoch as f64).min(period) / period;
        let (hi, lo) = (self.optimizer.learning_rate, self.min_learning_rate);
        lo + 0.5 * (hi - lo) * (1.0 + (std::f64::consts::PI * phase).cos())
    }

    /// `key = value` lines describing this configuration.
    pub fn describe(&self) -> Vec<(String, String)> {
        let o = &self.optimizer;
        let a = self.architecture;
        let init = match &self.init {
            InitMode::Scratch => "scratch".to_string(),
            InitMode::WarmStart(p) => format!("warm_start:{}", p.display()),
        };
        [
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("temperature", self.temperature.to_string()),
            ("learning_rate", o.learning_rate.to_string()),
            ("weight_decay", o.weight_decay.to_string()),
            ("beta1", o.beta1.to_string()),
            ("beta2", o.beta2.to_string()),
            ("eps", o.eps.to_string()),
            ("min_learning_rate", self.min_learning_rate.to_string()),
            (
                "schedule_period",
                self.schedule_period.unwrap_or(self.epochs).to_string(),
            ),
            ("init", init),
            ("validation_fraction", self.validation_fraction.to_string()),
            ("seed", self.seed.to_string()),
            ("augment_noise", self.augment.noise.to_string()),
            ("augment_dropout", self.augment.dropout.to_string()),
            (
                "architecture",
                format!("{}-{}-{}-{}", a.hidden, a.latent, a.head_hidden, a.output),
            ),
            (
                "supcon_batches",
                "stratified, every included class has at least 2 samples".to_string(),
            ),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    /// Epoch (1-based) whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// Loss on fixed views of the training set before and after training.
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    /// True when the training set was too small to hold samples out and
    /// validation used fresh views of the training samples instead.
    pub validation_reused: bool,
}

/// Shuffled batches of local positions `0..n`; a trailing singleton joins
/// the previous batch.
fn plain_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

/// Batches in which every class present has at least two samples.
/// `labels` are per local position; every class must have two or more samples.
pub fn stratified_batches(labels: &[usize], batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let n = labels.len();
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    let count = n.div_ceil(batch_size).max(1);
    let mut batches: Vec<Vec<usize>> = vec![Vec::new(); count];
    let mut cursor = 0;
    for group in groups.iter_mut().filter(|g| !g.is_empty()) {
        group.shuffle(rng);
        let chunks = count.min(group.len() / 2).max(1);
        let base = group.len() / chunks;
        let extra = group.len() % chunks;
        let mut at = 0;
        for k in 0..chunks {
            let size = base + usize::from(k < extra);
            batches[(cursor + k) % count].extend_from_slice(&group[at..at + size]);
            at += size;
        }
        cursor = (cursor + chunks) % count;
    }
    batches.retain(|b| !b.is_empty());
    batches
}

struct Holdout {
    train: Vec<usize>,
    validation: Vec<usize>,
    reused: bool,
}

fn holdout(n: usize, labels: Option<&[usize]>, fraction: f64, rng: &mut Rng) -> Holdout {
    let target = (fraction * n as f64).round() as usize;
    let mut validation = Vec::new();
    match labels {
        None => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            if target >= 2 && n - target >= 2 {
                validation = order[..target].to_vec();
            }
        }
        Some(labels) => {
            let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
            let mut groups: Vec<Vec<usize>> = vec![Vec::new(); classes];
            for (i, &l) in labels.iter().enumerate() {
                groups[l].push(i);
            }
            for g in groups.iter_mut() {
                g.shuffle(rng);
            }
            // Round-robin over classes, never leaving a class with fewer than 2.
            let mut taken = vec![0; classes];
            let mut progress = true;
            while validation.len() < target && progress {
                progress = false;
                for c in 0..classes {
                    if validation.len() == target {
                        break;
                    }
                    if groups[c].len() - taken[c] >= 3 {
                        validation.push(groups[c][taken[c]]);
                        taken[c] += 1;
                        progress = true;
                    }
                }
            }
            if validation.len() < 2 {
                validation.clear();
            }
        }
    }
    if validation.is_empty() {
        return Holdout {
            train: (0..n).collect(),
            validation: (0..n).collect(),
            reused: true,
        };
    }
    validation.sort_unstable();
    let mut held = vec![false; n];
    for &v in &validation {
        held[v] = true;
    }
    Holdout {
        train: (0..n).filter(|&i| !held[i]).collect(),
        validation,
        reused: false,
    }
}

/// Training data in local coordinates.
struct Local<'a> {
    features: &'a Matrix,
    labels: Option<&'a [usize]>,
    scale: Vec<f64>,
}

impl Local<'_> {
    fn batches(&self, members: &[usize], batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
        match self.labels {
            None => plain_batches(members.len(), batch_size, rng)
                .into_iter()
                .map(|b| b.into_iter().map(|k| members[k]).collect())
                .collect(),
            Some(labels) => {
                let sub: Vec<usize> = members.iter().map(|&m| labels[m]).collect();
                stratified_batches(&sub, batch_size, rng)
                    .into_iter()
                    .map(|b| b.into_iter().map(|k| members[k]).collect())
                    .collect()
            }
        }
    }

    /// Fixed views for repeatable loss evaluation.
    fn fixed_views(
        &self,
        members: &[usize],
        config: &TrainConfig,
        seed: u64,
    ) -> Result<Vec<ViewBatch>> {
        let mut rng = seeded(seed);
        self.batches(members, config.batch_size, &mut rng)
            .iter()
            .map(|b| {
                ViewBatch::build(
                    self.features,
                    b,
                    self.labels,
                    &self.scale,
                    &config.augment,
                    &mut rng,
                )
            })
            .collect()
    }
}

fn mean_loss(params: &EncoderParams, batches: &[ViewBatch], mode: Mode, tau: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut views = 0usize;
    for b in batches {
        let (loss, _) = batch_loss_and_gradient(params, b, mode, tau)?;
        total += loss * b.len() as f64;
        views += b.len();
    }
    Ok(total / views as f64)
}

/// Initial parameters for `config.init`.
pub fn initial_params(input_dim: usize, config: &TrainConfig) -> Result<EncoderParams> {
    let shape = EncoderShape::new(input_dim, config.architecture);
    match &config.init {
        InitMode::Scratch => Ok(EncoderParams::he_uniform(
            shape,
            &mut seeded(derive_seed(config.seed, "encoder-init")),
        )),
        InitMode::WarmStart(path) => {
            let p = EncoderParams::load(path)?;
            if p.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "warm-start checkpoint {} has shape {:?}, expected {:?}",
                    path.display(),
                    p.shape,
                    shape
                )));
            }
            Ok(p)
        }
    }
}

/// Trains an encoder on `rows` of `data`. SupCon needs `labels`, indexed
/// like `data`; SimCLR ignores them.
pub fn train(
    mode: Mode,
    data: &Matrix,
    rows: &[usize],
    labels: Option<&[usize]>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let init = initial_params(data.cols(), config)?;
    train_from(init, mode, data, rows, labels, config)
}

/// SupCon training starting from existing parameters.
pub fn finetune_supcon(
    params: &EncoderParams,
    data: &Matrix,
    rows: &[usize],
    labels: &[usize],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    train_from(params.clone(), Mode::SupCon, data, rows, Some(labels), config)
}

fn train_from(
    mut params: EncoderParams,
    mode: Mode,
    data: &Matrix,
    rows: &[usize],
    labels: Option<&[usize]>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    check_input(&params, data.cols())?;
    if rows.is_empty() {
        return Err(Error::invalid("training role set is empty"));
    }
    if rows.len() < 2 {
        return Err(Error::invalid("contrastive training needs at least 2 samples"));
    }
    let features = data.select_rows(rows);
    let local_labels: Option<Vec<usize>> = match mode {
        Mode::SimClr => None,
        Mode::SupCon => {
            let labels = labels.ok_or_else(|| Error::invalid("SupCon training needs labels"))?;
            if labels.len() != data.rows() {
                return Err(Error::DimensionMismatch {
                    expected: data.rows(),
                    got: labels.len(),
                });
            }
            let local: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
            let classes = local.iter().copied().max().map_or(0, |m| m + 1);
            let mut counts = vec![0usize; classes];
            for &l in &local {
                counts[l] += 1;
            }
            if let Some((class, &count)) = counts.iter().enumerate().find(|(_, &c)| c == 1) {
                return Err(Error::ClassTooSmall { class, count });
            }
            Some(local)
        }
    };
    let all: Vec<usize> = (0..rows.len()).collect();
    let local = Local {
        features: &features,
        labels: local_labels.as_deref(),
        scale: feature_scale(&features, &all),
    };
    let split = holdout(
        rows.len(),
        local.labels,
        config.validation_fraction,
        &mut seeded(derive_seed(config.seed, "holdout")),
    );
    let tau = config.temperature;
    let validation_views =
        local.fixed_views(&split.validation, config, derive_seed(config.seed, "validation"))?;
    let train_views = local.fixed_views(&split.train, config, derive_seed(config.seed, "train-eval"))?;
    let initial_train_loss = mean_loss(&params, &train_views, mode, tau)?;

    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_loss = f64::INFINITY;
    let mut batch_rng = seeded(derive_seed(config.seed, "batches"));
    let mut aug_rng = seeded(derive_seed(config.seed, "augment"));
    let mut adam = AdamState::new(params.values.len());
    let mut train_loss = Vec::with_capacity(config.epochs);
    let mut validation_loss = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        let mut total = 0.0;
        let mut views = 0usize;
        for members in local.batches(&split.train, config.batch_size, &mut batch_rng) {
            let batch = ViewBatch::build(
                &features,
                &members,
                local.labels,
                &local.scale,
                &config.augment,
                &mut aug_rng,
            )?;
            let (loss, grad) = batch_loss_and_gradient(&params, &batch, mode, tau)?;
            adam.step(&config.optimizer, lr, &mut params.values, &grad);
            total += loss * batch.len() as f64;
            views += batch.len();
        }
        if params.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "encoder parameters diverged in epoch {}",
                epoch + 1
            )));
        }
        train_loss.push(total / views as f64);
        let v = mean_loss(&params, &validation_views, mode, tau)?;
        validation_loss.push(v);
        if v < best_loss {
            best_loss = v;
            best_epoch = epoch + 1;
            best.values.copy_from_slice(&params.values);
        }
    }
    let final_train_loss = mean_loss(&best, &train_views, mode, tau)?;
    Ok(TrainOutcome {
        params: best,
        best_epoch,
        train_loss,
        validation_loss,
        initial_train_loss,
        final_train_loss,
        validation_reused: split.reused,
    })
}

/// Stand-in for pretrained weights: SimCLR on a synthetic auxiliary corpus
/// of 8 Gaussian blobs in `input_dim` dimensions.
pub fn pretrain_auxiliary(input_dim: usize, config: &TrainConfig) -> Result<EncoderParams> {
    let corpus = generate_blobs(&BlobSpec {
        classes: 8,
        per_class: 40,
        dims: input_dim,
        spread: 1.0,
        center_dist: 6.0,
        seed: derive_seed(config.seed, "auxiliary-corpus"),
    })?;
    let rows: Vec<usize> = (0..corpus.len()).collect();
    let scratch = TrainConfig {
        init: InitMode::Scratch,
        ..config.clone()
    };
    Ok(train(Mode::SimClr, corpus.features(), &rows, None, &scratch)?.params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_shape() -> EncoderShape {
        EncoderShape::new(
            3,
            Architecture {
                hidden: 4,
                latent: 3,
                head_hidden: 3,
                output: 2,
            },
        )
    }

    #[test]
    fn augment_limits() {
        let mut rng = seeded(1);
        let x = [1.0, -2.0, 3.5];
        let s = [1.0, 1.0, 1.0];
        let none = AugmentConfig {
            noise: 0.0,
            dropout: 0.0,
        };
        assert_eq!(augment(&x, &s, &none, &mut rng), x.to_vec());
        let all = AugmentConfig {
            noise: 0.5,
            dropout: 1.0,
        };
        assert_eq!(augment(&x, &s, &all, &mut rng), vec![0.0; 3]);
    }

    #[test]
    fn zero_params_give_first_basis_vector() {
        let p = EncoderParams::zeros(small_shape());
        let (latent, head) = encode(&p, &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(latent, vec![0.0; 3]);
        assert_eq!(head, vec![1.0, 0.0]);
        assert!(matches!(
            encode(&p, &[1.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn degenerate_batches_hit_uniform_softmax() {
        for b in [2usize, 3, 5] {
            let mut z = Matrix::zeros(2 * b, 4);
            for i in 0..2 * b {
                z.set(i, 1, 1.0);
            }
            let want = ((2 * b - 1) as f64).ln();
            assert!((ntxent_loss(&z, 0.07).unwrap().loss - want).abs() < 1e-9);
            let same = vec![0; 2 * b];
            assert!((supcon_loss(&z, &same, 0.07).unwrap().loss - want).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_argument_errors() {
        let z = Matrix::zeros(4, 2);
        assert!(ntxent_loss(&z, 0.0).is_err());
        assert!(ntxent_loss(&Matrix::zeros(2, 2), 0.1).is_err());
        assert!(matches!(
            supcon_loss(&z, &[0, 0, 1, 2], 0.1),
            Err(Error::NoPositive { view: 2, source_index: 1, class: 1 })
        ));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate_at(0), 5e-4);
        assert!((c.learning_rate_at(50) - 1e-5).abs() < 1e-18);
        assert!((c.learning_rate_at(25) - (5e-4 + 1e-5) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn stratified_batches_keep_pairs() {
        let labels: Vec<usize> = (0..37).map(|i| i % 4).chain([4, 4]).collect();
        let mut rng = seeded(3);
        let batches = stratified_batches(&labels, 8, &mut rng);
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..labels.len()).collect::<Vec<_>>());
        for b in &batches {
            for &i in b {
                assert!(b.iter().filter(|&&j| labels[j] == labels[i]).count() >= 2);
            }
        }
    }

    #[test]
    fn singleton_class_rejected() {
        let data = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let err = train(Mode::SupCon, &data, &[0, 1, 2], Some(&[0, 0, 1, 1]), &cfg).unwrap_err();
        assert!(matches!(err, Error::ClassTooSmall { class: 1, count: 1 }));
        assert!(train(Mode::SimClr, &data, &[], None, &cfg).is_err());
    }

    #[test]
    fn zero_epochs_return_initial_params() {
        let data = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [3.0, 1.0]]).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            seed: 11,
            ..TrainConfig::default()
        };
        let out = train(Mode::SimClr, &data, &[0, 1, 2, 3], None, &cfg).unwrap();
        assert_eq!(out.params, initial_params(2, &cfg).unwrap());
        assert_eq!(out.best_epoch, 0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = EncoderParams::he_uniform(small_shape(), &mut seeded(5));
        let back = EncoderParams::from_checkpoint(&p.to_checkpoint()).unwrap();
        assert_eq!(back, p);
    }
}
