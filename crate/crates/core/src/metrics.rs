//! Classification and propagation quality metrics.

use crate::dataset::LabelVector;
use crate::matrix::{squared_euclidean, Matrix};
use crate::{Error, Result};

/// k×k counts, rows = truth, columns = prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
    total: u64,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::DimensionMismatch {
                expected: classes * classes,
                got: counts.len(),
            });
        }
        let total = counts.iter().sum();
        if total == 0 {
            return Err(Error::invalid("confusion matrix with no samples"));
        }
        Ok(ConfusionMatrix {
            classes,
            counts,
            total,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.classes)
            .map(|r| (0..self.classes).map(|c| self.get(r, c)).sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.classes)
            .map(|c| (0..self.classes).map(|r| self.get(r, c)).sum())
            .collect()
    }

    /// Chance agreement `sum_c row_c * col_c / n^2`.
    pub fn expected_agreement(&self) -> f64 {
        let rows = self.row_sums();
        let cols = self.col_sums();
        let dot: u128 = rows
            .iter()
            .zip(&cols)
            .map(|(&r, &c)| u128::from(r) * u128::from(c))
            .sum();
        dot as f64 / (u128::from(self.total) * u128::from(self.total)) as f64
    }
}

/// Confusion matrix of `pred` against `truth` over `indices`.
pub fn confusion(
    pred: &LabelVector,
    truth: &LabelVector,
    indices: &[usize],
    classes: usize,
) -> Result<ConfusionMatrix> {
    if indices.is_empty() {
        return Err(Error::invalid("confusion over an empty index set"));
    }
    let mut counts = vec![0u64; classes * classes];
    for &i in indices {
        let t = truth.class(i).ok_or(Error::MissingLabel(i))?;
        let p = pred.class(i).ok_or(Error::MissingLabel(i))?;
        if t >= classes || p >= classes {
            return Err(Error::invalid(format!(
                "index {i}: label outside [0, {classes})"
            )));
        }
        counts[t * classes + p] += 1;
    }
    ConfusionMatrix::from_counts(classes, counts)
}

pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    cm.trace() as f64 / cm.total() as f64
}

/// Cohen's kappa `(p_o - p_e) / (1 - p_e)`; 1 when both agreements are 1.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> f64 {
    let observed = accuracy(cm);
    let expected = cm.expected_agreement();
    if expected >= 1.0 {
        // p_e = 1 forces every sample into one cell, hence p_o = 1 too.
        return 1.0;
    }
    (observed - expected) / (1.0 - expected)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub accuracy: f64,
    pub kappa: f64,
    pub per_class_recall: Vec<f64>,
}

impl ScoreReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let rows = cm.row_sums();
        let per_class_recall = (0..cm.classes())
            .map(|c| {
                if rows[c] == 0 {
                    f64::NAN
                } else {
                    cm.get(c, c) as f64 / rows[c] as f64
                }
            })
            .collect();
        ScoreReport {
            accuracy: accuracy(cm),
            kappa: cohen_kappa(cm),
            per_class_recall,
        }
    }

    /// `dataset,method,seed,accuracy,kappa`
    pub fn csv_row(&self, dataset: &str, method: &str, seed: u64) -> String {
        format!(
            "{dataset},{method},{seed},{:.6},{:.6}",
            self.accuracy, self.kappa
        )
    }
}

pub fn score(
    pred: &LabelVector,
    truth: &LabelVector,
    indices: &[usize],
    classes: usize,
) -> Result<ScoreReport> {
    Ok(ScoreReport::from_confusion(&confusion(
        pred, truth, indices, classes,
    )?))
}

pub const DEFAULT_KNN_K: usize = 10;

/// Mean fraction of each point's `k` nearest neighbours (Euclidean, distance
/// ties to the lower index) that share its label. `k` is capped at `n - 1`.
pub fn knn_consistency(points: &Matrix, labels: &LabelVector, k: usize) -> Result<f64> {
    let n = points.rows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if n < 2 {
        return Err(Error::invalid("k-NN consistency needs at least 2 points"));
    }
    let k = k.min(n - 1);
    if k == 0 {
        return Err(Error::invalid("k-NN consistency needs k >= 1"));
    }
    let classes = labels.classes_at(&(0..n).collect::<Vec<_>>())?;
    let mut agree: u64 = 0;
    let mut neighbours: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        neighbours.clear();
        let pi = points.row(i);
        neighbours.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_euclidean(pi, points.row(j)), j)),
        );
        let by_distance_then_index =
            |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < neighbours.len() {
            neighbours.select_nth_unstable_by(k - 1, by_distance_then_index);
        }
        agree += neighbours[..k]
            .iter()
            .filter(|&&(_, j)| classes[j] == classes[i])
            .count() as u64;
    }
    Ok(agree as f64 / (n as u64 * k as u64) as f64)
}

/// Average ranks (1-based), ties share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation; `None` when either series is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::invalid("rank correlation needs at least 2 pairs"));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx * syy).sqrt()))
}
