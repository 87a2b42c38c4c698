use epl_core::dataset::{
    load_features, save_features, stratified_split, Dataset, Format, LabelVector, Role,
    SplitFractions,
};
use epl_core::metrics::{cohen_kappa, confusion, knn_consistency, spearman, ConfusionMatrix};
use epl_core::rng::seeded;
use epl_core::Matrix;
use proptest::prelude::*;
use rand::Rng;

fn dataset(counts: &[usize], d: usize, seed: u64) -> Dataset {
    let mut rng = seeded(seed);
    let n: usize = counts.iter().sum();
    let labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &m)| std::iter::repeat_n(c, m))
        .collect();
    let values = (0..n * d).map(|_| rng.random_range(-5.0..5.0)).collect();
    Dataset::new("t", Matrix::new(n, d, values).unwrap(), Some(labels), counts.len()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn split_partitions_and_covers_classes(
        counts in proptest::collection::vec(3usize..80, 2..6),
        s in 0.005f64..0.2,
        t in 0.1f64..0.4,
        seed in any::<u64>(),
    ) {
        let ds = dataset(&counts, 1, 0);
        let fractions = SplitFractions { supervised: s, unsupervised: 1.0 - s - t, test: t };
        let n = ds.len();
        let Ok(split) = stratified_split(&ds, fractions, seed) else {
            return Ok(());
        };
        prop_assert_eq!(split.len(), n);
        let sizes = [Role::Supervised, Role::Unsupervised, Role::Test].map(|r| split.count(r));
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        let labels = ds.labels().unwrap();
        for c in 0..counts.len() {
            prop_assert!(split.indices(Role::Supervised).iter().any(|&i| labels[i] == c));
        }
        prop_assert!(sizes[0] >= ((s * n as f64) - 1e-9).ceil() as usize);
        prop_assert_eq!(sizes[2], ((t * n as f64) + 0.5 + 1e-9).floor() as usize);
        let again = stratified_split(&ds, fractions, seed).unwrap();
        prop_assert_eq!(&again.roles, &split.roles);
    }
}

#[test]
fn io_round_trip_hundred_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seeded(5);
    for i in 0..100 {
        let n = rng.random_range(2..40);
        let d = rng.random_range(1..7);
        let values: Vec<f64> = (0..n * d)
            .map(|_| {
                let m: f64 = rng.random_range(-1.0..1.0);
                m * 10f64.powi(rng.random_range(-8..8))
            })
            .collect();
        let labelled = i % 3 != 0;
        let k = rng.random_range(1..5);
        let labels = labelled.then(|| (0..n).map(|_| rng.random_range(0..k)).collect::<Vec<_>>());
        let ds = Dataset::new("r", Matrix::new(n, d, values).unwrap(), labels, k).unwrap();
        for format in [Format::Text, Format::Binary] {
            let path = dir.path().join(format!("d{i}.{format:?}"));
            save_features(&ds, &path, format).unwrap();
            let back = load_features(&path, format).unwrap();
            assert_eq!(back.features(), ds.features());
            assert_eq!(back.labels(), ds.labels());
        }
    }
}

/// `(p_o - p_e) / (1 - p_e)` from raw counts.
fn kappa_oracle(k: usize, counts: &[u64]) -> f64 {
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let po: f64 = (0..k).map(|i| counts[i * k + i] as f64).sum::<f64>() / total;
    let mut pe = 0.0;
    for c in 0..k {
        let row: f64 = (0..k).map(|j| counts[c * k + j] as f64).sum();
        let col: f64 = (0..k).map(|i| counts[i * k + c] as f64).sum();
        pe += (row / total) * (col / total);
    }
    if pe == 1.0 {
        1.0
    } else {
        (po - pe) / (1.0 - pe)
    }
}

#[test]
fn kappa_matches_direct_formula() {
    let mut rng = seeded(6);
    for _ in 0..10_000 {
        let k = rng.random_range(2..7);
        let counts: Vec<u64> = (0..k * k).map(|_| rng.random_range(0..50)).collect();
        if counts.iter().sum::<u64>() == 0 {
            continue;
        }
        let cm = ConfusionMatrix::from_counts(k, counts.clone()).unwrap();
        let kappa = cohen_kappa(&cm);
        assert!((kappa - kappa_oracle(k, &counts)).abs() <= 1e-12);
        assert!((-1.0..=1.0).contains(&kappa));
    }
}

proptest! {
    #[test]
    fn kappa_invariant_under_class_relabeling(
        pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60),
        perm in Just([0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let idx: Vec<usize> = (0..pairs.len()).collect();
        let base = cohen_kappa(&confusion(&LabelVector::from_true(&pred), &LabelVector::from_true(&truth), &idx, 4).unwrap());
        let pt: Vec<usize> = truth.iter().map(|&c| perm[c]).collect();
        let pp: Vec<usize> = pred.iter().map(|&c| perm[c]).collect();
        let moved = cohen_kappa(&confusion(&LabelVector::from_true(&pp), &LabelVector::from_true(&pt), &idx, 4).unwrap());
        prop_assert!((base - moved).abs() <= 1e-12);
        let same = cohen_kappa(&confusion(&LabelVector::from_true(&truth), &LabelVector::from_true(&truth), &idx, 4).unwrap());
        prop_assert_eq!(same, 1.0);
    }

    #[test]
    fn knn_consistency_invariant_under_rotation(
        pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 5..40),
        angle in 0.0f64..std::f64::consts::TAU,
        seed in any::<u64>(),
    ) {
        let mut rng = seeded(seed);
        let n = pts.len();
        let labels = LabelVector::from_true(&(0..n).map(|_| rng.random_range(0..3)).collect::<Vec<_>>());
        let a = Matrix::from_rows(&pts.iter().map(|p| [p.0, p.1]).collect::<Vec<_>>()).unwrap();
        let (s, c) = angle.sin_cos();
        let b = Matrix::from_rows(&pts.iter().map(|p| [c * p.0 - s * p.1, s * p.0 + c * p.1]).collect::<Vec<_>>()).unwrap();
        // Rotation perturbs distances by rounding; compare only when no
        // neighbour ranking is within that noise.
        let k = 10.min(n - 1);
        let stable = (0..n).all(|i| {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| {
                let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
                dx * dx + dy * dy
            }).collect();
            d.sort_by(f64::total_cmp);
            k == n - 1 || d[k] - d[k - 1] > 1e-9
        });
        if stable {
            let ka = knn_consistency(&a, &labels, 10).unwrap();
            let kb = knn_consistency(&b, &labels, 10).unwrap();
            prop_assert!((ka - kb).abs() <= 1e-12);
        }
    }
}

/// Spearman via explicit average ranks and Pearson sums.
fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn spearman_matches_brute_force() {
    let mut rng = seeded(7);
    for _ in 0..500 {
        let n = rng.random_range(5..30);
        let x: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8u8))).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        match spearman(&x, &y).unwrap() {
            Some(r) => assert!((r - spearman_oracle(&x, &y)).abs() <= 1e-12),
            None => assert!(x.iter().all(|v| *v == x[0])),
        }
    }
    let up: Vec<f64> = (0..8).map(f64::from).collect();
    let down: Vec<f64> = up.iter().rev().copied().collect();
    assert_eq!(spearman(&up, &up).unwrap(), Some(1.0));
    assert_eq!(spearman(&up, &down).unwrap(), Some(-1.0));
}
