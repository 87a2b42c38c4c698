//! Exact t-SNE to two dimensions.
//!
//! Affinities are Gaussian conditionals calibrated per row to the requested
//! perplexity and symmetrised; the embedding minimises KL(P || Q) with a
//! Student-t kernel by gradient descent with momentum and per-coordinate
//! gains, early exaggeration first. Everything is O(n²) and accumulated in
//! index order so a run is bit-reproducible for a fixed seed.

use rand_distr::{Distribution, Normal};

use crate::matrix::{squared_euclidean, Matrix};
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub seed: u64,
    pub entropy_tolerance: f64,
    /// Standard deviation of the Gaussian initial layout.
    pub init_std: f64,
    pub min_gain: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            seed: 0,
            entropy_tolerance: 1e-5,
            init_std: 1e-4,
            min_gain: 0.01,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 4 {
            return Err(Error::invalid("t-SNE needs at least 4 points"));
        }
        if !(self.perplexity > 1.0) || self.perplexity >= n as f64 {
            return Err(Error::invalid(format!(
                "perplexity {} must lie in (1, {n})",
                self.perplexity
            )));
        }
        if self.iterations < 1 {
            return Err(Error::invalid("t-SNE needs at least one iteration"));
        }
        let positive = [
            self.learning_rate,
            self.early_exaggeration,
            self.initial_momentum,
            self.final_momentum,
            self.entropy_tolerance,
            self.init_std,
            self.min_gain,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("t-SNE rates must be positive"));
        }
        Ok(())
    }

    /// Lowers the perplexity to `(n - 1) / 3` when `n` is too small for it.
    pub fn fitted_to(&self, n: usize) -> ProjectionConfig {
        let cap = (n.saturating_sub(1)) as f64 / 3.0;
        ProjectionConfig {
            perplexity: self.perplexity.min(cap).max(1.5),
            ..self.clone()
        }
    }
}

/// Result of a projection run.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding2D {
    pub coords: Matrix,
    pub final_kl: f64,
    pub iterations_run: usize,
    /// `(iteration, KL)` samples: every 50 iterations and each of the last 50.
    pub kl_trace: Vec<(usize, f64)>,
    /// KL never rose by more than 1e-3 between consecutive iterations of the last 50.
    pub kl_settled: bool,
}

/// Row-conditional Gaussian affinities `p_{j|i}` and the precision `beta_i`
/// (`1 / 2 sigma_i^2`) found for each row. `beta_i = 0` marks a degenerate
/// row whose distances are all equal and which was set uniform.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalAffinities {
    pub conditional: Matrix,
    pub beta: Vec<f64>,
}

const BRACKET_STEPS: usize = 64;
const BISECTION_STEPS: usize = 200;

/// Entropy in bits and the normalised row, for distances already shifted so
/// their minimum is 0.
fn row_entropy(shifted: &[f64], beta: f64, out: &mut [f64]) -> f64 {
    let mut z = 0.0;
    for (o, &d) in out.iter_mut().zip(shifted) {
        *o = (-beta * d).exp();
        z += *o;
    }
    let mut weighted = 0.0;
    for (o, &d) in out.iter_mut().zip(shifted) {
        *o /= z;
        weighted += *o * d;
    }
    (beta * weighted + z.ln()) / std::f64::consts::LN_2
}

pub fn conditional_affinities(
    features: &Matrix,
    perplexity: f64,
    tol: f64,
) -> Result<ConditionalAffinities> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::invalid("affinities need at least 2 points"));
    }
    if !(perplexity > 1.0) {
        return Err(Error::invalid("perplexity must exceed 1"));
    }
    let mut conditional = Matrix::zeros(n, n);
    let mut beta = vec![0.0; n];
    let mut shifted = vec![0.0; n - 1];
    let mut row = vec![0.0; n - 1];
    for i in 0..n {
        let xi = features.row(i);
        let mut k = 0;
        for j in (0..n).filter(|&j| j != i) {
            shifted[k] = squared_euclidean(xi, features.row(j));
            k += 1;
        }
        let min = shifted.iter().copied().fold(f64::INFINITY, f64::min);
        let max = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for d in shifted.iter_mut() {
            *d -= min;
        }
        if max - min == 0.0 {
            row.fill(1.0 / (n - 1) as f64);
        } else {
            if perplexity >= (n - 1) as f64 {
                return Err(Error::Numerical(format!(
                    "row {i}: perplexity {perplexity} unreachable with {} neighbours",
                    n - 1
                )));
            }
            beta[i] = calibrate_row(&shifted, perplexity, tol, &mut row)
                .map_err(|m| Error::Numerical(format!("row {i}: {m}")))?;
        }
        let mut k = 0;
        for j in (0..n).filter(|&j| j != i) {
            conditional.set(i, j, row[k]);
            k += 1;
        }
    }
    Ok(ConditionalAffinities { conditional, beta })
}

fn calibrate_row(
    shifted: &[f64],
    perplexity: f64,
    tol: f64,
    row: &mut [f64],
) -> std::result::Result<f64, String> {
    let target = perplexity.log2();
    let mean = shifted.iter().sum::<f64>() / shifted.len() as f64;
    let mut beta = 1.0 / mean;
    let mut h = row_entropy(shifted, beta, row);
    let (mut lo, mut hi);
    if h > target {
        // Too flat: sharpen until the entropy drops below target.
        lo = beta;
        let mut steps = 0;
        loop {
            beta *= 2.0;
            h = row_entropy(shifted, beta, row);
            if h <= target {
                hi = beta;
                break;
            }
            lo = beta;
            steps += 1;
            if steps >= BRACKET_STEPS {
                return Err("could not bracket the precision".into());
            }
        }
    } else {
        hi = beta;
        let mut steps = 0;
        loop {
            beta *= 0.5;
            h = row_entropy(shifted, beta, row);
            if h >= target {
                lo = beta;
                break;
            }
            hi = beta;
            steps += 1;
            if steps >= BRACKET_STEPS {
                return Err("could not bracket the precision".into());
            }
        }
    }
    for _ in 0..BISECTION_STEPS {
        if (h.exp2() - perplexity).abs() <= tol {
            return Ok(beta);
        }
        beta = 0.5 * (lo + hi);
        h = row_entropy(shifted, beta, row);
        if h > target {
            lo = beta;
        } else {
            hi = beta;
        }
    }
    if (h.exp2() - perplexity).abs() <= tol {
        Ok(beta)
    } else {
        Err(format!(
            "bisection stalled at perplexity {} (target {perplexity})",
            h.exp2()
        ))
    }
}

/// Symmetric joint affinities `P = (P_cond + P_cond^T) / 2n`.
pub fn pairwise_affinities(features: &Matrix, perplexity: f64, tol: f64) -> Result<Matrix> {
    let cond = conditional_affinities(features, perplexity, tol)?.conditional;
    Ok(symmetrize(&cond))
}

pub fn symmetrize(conditional: &Matrix) -> Matrix {
    let n = conditional.rows();
    let mut p = Matrix::zeros(n, n);
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p.set(i, j, (conditional.get(i, j) + conditional.get(j, i)) / denom);
            }
        }
    }
    p
}

const Q_FLOOR: f64 = 1e-12;

fn student_t(a: &[f64], b: &[f64]) -> f64 {
    1.0 / (1.0 + squared_euclidean(a, b))
}

fn normaliser(coords: &Matrix) -> f64 {
    let n = coords.rows();
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += student_t(coords.row(i), coords.row(j));
            }
        }
    }
    z
}

/// `sum_{i != j} p_ij ln(p_ij / q_ij)` with `0 ln 0 = 0` and `q` floored at 1e-12.
pub fn kl_divergence(p: &Matrix, coords: &Matrix) -> Result<f64> {
    check_shapes(p, coords)?;
    let n = coords.rows();
    let z = normaliser(coords);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p.get(i, j);
            if i == j || pij <= 0.0 {
                continue;
            }
            let q = (student_t(coords.row(i), coords.row(j)) / z).max(Q_FLOOR);
            kl += pij * (pij / q).ln();
        }
    }
    Ok(kl)
}

/// `dC/dy_i = 4 sum_j (p_ij - q_ij)(y_i - y_j) / (1 + |y_i - y_j|^2)`.
pub fn kl_gradient(p: &Matrix, coords: &Matrix) -> Result<Matrix> {
    check_shapes(p, coords)?;
    let mut grad = Matrix::zeros(coords.rows(), coords.cols());
    gradient_into(p, 1.0, coords, &mut grad);
    Ok(grad)
}

fn check_shapes(p: &Matrix, coords: &Matrix) -> Result<()> {
    let n = coords.rows();
    if p.rows() != n || p.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: p.rows(),
        });
    }
    Ok(())
}

fn gradient_into(p: &Matrix, exaggeration: f64, coords: &Matrix, grad: &mut Matrix) {
    let n = coords.rows();
    let dims = coords.cols();
    let z = normaliser(coords);
    for i in 0..n {
        let yi = coords.row(i);
        let gi = grad.row_mut(i);
        gi.fill(0.0);
        for j in 0..n {
            if i == j {
                continue;
            }
            let yj = coords.row(j);
            let w = student_t(yi, yj);
            let mult = 4.0 * (exaggeration * p.get(i, j) - w / z) * w;
            for d in 0..dims {
                gi[d] += mult * (yi[d] - yj[d]);
            }
        }
    }
}

fn center(coords: &mut Matrix) {
    let n = coords.rows() as f64;
    for d in 0..coords.cols() {
        let mean = (0..coords.rows()).map(|i| coords.get(i, d)).sum::<f64>() / n;
        for i in 0..coords.rows() {
            coords.set(i, d, coords.get(i, d) - mean);
        }
    }
}

/// Step-wise t-SNE optimiser; [`tsne_project`] runs it to completion.
pub struct Tsne {
    config: ProjectionConfig,
    p: Matrix,
    coords: Matrix,
    update: Matrix,
    gains: Matrix,
    grad: Matrix,
    iteration: usize,
}

impl Tsne {
    pub fn new(features: &Matrix, config: &ProjectionConfig) -> Result<Self> {
        let n = features.rows();
        config.validate(n)?;
        let p = pairwise_affinities(features, config.perplexity, config.entropy_tolerance)?;
        let mut rng = seeded(derive_seed(config.seed, "tsne-init"));
        let normal = Normal::new(0.0, config.init_std)
            .map_err(|e| Error::invalid(format!("init std: {e}")))?;
        let mut coords = Matrix::zeros(n, 2);
        for v in coords.as_mut_slice() {
            *v = normal.sample(&mut rng);
        }
        center(&mut coords);
        Ok(Tsne {
            config: config.clone(),
            p,
            update: Matrix::zeros(n, 2),
            gains: Matrix::new(n, 2, vec![1.0; n * 2])?,
            grad: Matrix::zeros(n, 2),
            coords,
            iteration: 0,
        })
    }

    pub fn affinities(&self) -> &Matrix {
        &self.p
    }

    pub fn coords(&self) -> &Matrix {
        &self.coords
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// One gradient step followed by re-centering.
    pub fn step(&mut self) -> Result<()> {
        let cfg = &self.config;
        let exaggeration = if self.iteration < cfg.exaggeration_iterations {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if self.iteration < cfg.momentum_switch {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };
        gradient_into(&self.p, exaggeration, &self.coords, &mut self.grad);
        let grad = self.grad.as_slice();
        let update = self.update.as_mut_slice();
        let gains = self.gains.as_mut_slice();
        let coords = self.coords.as_mut_slice();
        for k in 0..coords.len() {
            if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] += 0.2;
            } else {
                gains[k] *= 0.8;
            }
            gains[k] = gains[k].max(cfg.min_gain);
            update[k] = momentum * update[k] - cfg.learning_rate * gains[k] * grad[k];
            coords[k] += update[k];
        }
        center(&mut self.coords);
        self.iteration += 1;
        if let Some((row, column)) = self.coords.first_non_finite() {
            return Err(Error::Numerical(format!(
                "embedding diverged at iteration {} (point {row}, axis {column})",
                self.iteration
            )));
        }
        Ok(())
    }

    pub fn kl(&self) -> f64 {
        kl_divergence(&self.p, &self.coords).expect("shapes fixed at construction")
    }
}

const KL_WINDOW: usize = 50;
const KL_SLACK: f64 = 1e-3;

pub fn tsne_project(features: &Matrix, config: &ProjectionConfig) -> Result<Embedding2D> {
    let mut run = Tsne::new(features, config)?;
    let total = config.iterations;
    let window_start = total.saturating_sub(KL_WINDOW);
    let mut trace = Vec::new();
    let mut settled = true;
    let mut previous: Option<f64> = None;
    while run.iteration() < total {
        run.step()?;
        let it = run.iteration();
        let in_window = it > window_start;
        if in_window || it % 50 == 0 {
            let kl = run.kl();
            if in_window {
                if let Some(prev) = previous {
                    if kl > prev + KL_SLACK {
                        settled = false;
                    }
                }
                previous = Some(kl);
            }
            trace.push((it, kl));
        }
    }
    let final_kl = trace.last().map_or_else(|| run.kl(), |t| t.1);
    Ok(Embedding2D {
        coords: run.coords,
        final_kl,
        iterations_run: total,
        kl_trace: trace,
        kl_settled: settled,
    })
}
