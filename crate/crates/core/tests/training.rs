use epl_core::contrastive::{
    augment, encode, extract_features, finetune_supcon, train, Architecture, AugmentConfig,
    EncoderParams, EncoderShape, Mode, TrainConfig,
};
use epl_core::dataset::{generate_blobs, BlobSpec, LabelVector};
use epl_core::probe::{train_linear, train_softmax, LinearConfig, SoftmaxConfig, SoftmaxModel};
use epl_core::rng::seeded;
use epl_core::Matrix;
use rand::Rng;

fn blobs(classes: usize, per_class: usize, dims: usize, center_dist: f64, seed: u64) -> epl_core::dataset::Dataset {
    generate_blobs(&BlobSpec {
        classes,
        per_class,
        dims,
        spread: 1.0,
        center_dist,
        seed,
    })
    .unwrap()
}

#[test]
fn dropout_rate_matches_probability() {
    let mut rng = seeded(1);
    let cfg = AugmentConfig {
        noise: 0.0,
        dropout: 0.3,
    };
    let zeros = (0..10_000)
        .filter(|_| augment(&[1.0], &[1.0], &cfg, &mut rng)[0] == 0.0)
        .count();
    assert!((zeros as f64 / 10_000.0 - 0.3).abs() <= 0.01);
}

#[test]
fn head_outputs_are_unit_norm() {
    let shape = EncoderShape::new(7, Architecture::default());
    let p = EncoderParams::he_uniform(shape, &mut seeded(2));
    let mut rng = seeded(3);
    for _ in 0..1000 {
        let x: Vec<f64> = (0..7).map(|_| rng.random_range(-20.0..20.0)).collect();
        let (_, z) = encode(&p, &x).unwrap();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn head_direction_ignores_positive_output_scale() {
    let shape = EncoderShape::new(4, Architecture::default());
    let p = EncoderParams::he_uniform(shape, &mut seeded(4));
    let mut q = p.clone();
    for v in q.weights_mut(3) {
        *v *= 2.0;
    }
    for v in q.bias_mut(3) {
        *v *= 2.0;
    }
    let x = [0.5, -1.0, 2.0, 0.25];
    assert_eq!(encode(&p, &x).unwrap().1, encode(&q, &x).unwrap().1);
}

#[test]
fn identity_weights_extract_inputs() {
    let arch = Architecture {
        hidden: 3,
        latent: 3,
        head_hidden: 2,
        output: 2,
    };
    let mut p = EncoderParams::zeros(EncoderShape::new(3, arch));
    for layer in 0..2 {
        let w = p.weights_mut(layer);
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
    }
    let data = Matrix::from_rows(&[[0.0, 1.5, 2.0], [3.0, 0.25, 0.0]]).unwrap();
    let f = extract_features(&p, &data, &[0, 1]).unwrap();
    assert_eq!(f, data);
    assert_eq!(extract_features(&p, &data, &[1]).unwrap().rows(), 1);
    assert!(extract_features(&p, &Matrix::zeros(1, 2), &[0]).is_err());
}

fn quick(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic() {
    let ds = blobs(3, 20, 5, 6.0, 5);
    let rows: Vec<usize> = (0..ds.len()).collect();
    let a = train(Mode::SimClr, ds.features(), &rows, None, &quick(9, 3)).unwrap();
    let b = train(Mode::SimClr, ds.features(), &rows, None, &quick(9, 3)).unwrap();
    assert_eq!(a, b);
    let c = train(Mode::SimClr, ds.features(), &rows, None, &quick(10, 3)).unwrap();
    assert_ne!(a.params, c.params);
    let f1 = extract_features(&a.params, ds.features(), &rows).unwrap();
    let f2 = extract_features(&a.params, ds.features(), &rows).unwrap();
    assert_eq!(f1, f2);
}

#[test]
fn supcon_reduces_training_loss_on_separable_blobs() {
    let ds = blobs(2, 30, 4, 10.0, 6);
    let rows: Vec<usize> = (0..ds.len()).collect();
    let out = train(Mode::SupCon, ds.features(), &rows, ds.labels(), &quick(1, 50)).unwrap();
    assert!(
        out.final_train_loss < out.initial_train_loss,
        "{} -> {}",
        out.initial_train_loss,
        out.final_train_loss
    );
    assert!(out.best_epoch >= 1);
}

#[test]
fn finetune_zero_epochs_is_identity_and_deterministic() {
    let ds = blobs(2, 10, 3, 6.0, 7);
    let rows: Vec<usize> = (0..ds.len()).collect();
    let labels = ds.labels().unwrap();
    let base = train(Mode::SimClr, ds.features(), &rows, None, &quick(2, 2)).unwrap().params;
    let same = finetune_supcon(&base, ds.features(), &rows, labels, &quick(3, 0)).unwrap();
    assert_eq!(same.params, base);
    let a = finetune_supcon(&base, ds.features(), &rows, labels, &quick(3, 4)).unwrap();
    let b = finetune_supcon(&base, ds.features(), &rows, labels, &quick(3, 4)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn linear_probe_separates_blobs_and_ignores_duplicates() {
    let ds = blobs(2, 40, 2, 20.0, 8);
    let y = ds.labels().unwrap();
    let m = train_linear(ds.features(), y, 2, &LinearConfig::default()).unwrap();
    assert_eq!(m.predict(ds.features()).unwrap(), y.to_vec());
    for w in m.objective.windows(2) {
        assert!(w[1] <= w[0] + 1e-6);
    }

    let n = ds.len();
    let doubled_rows: Vec<usize> = (0..2 * n).map(|i| i % n).collect();
    let doubled = ds.features().select_rows(&doubled_rows);
    let doubled_y: Vec<usize> = doubled_rows.iter().map(|&i| y[i]).collect();
    let m2 = train_linear(&doubled, &doubled_y, 2, &LinearConfig::default()).unwrap();
    let mut grid = Vec::new();
    for i in -20..=20 {
        for j in -20..=20 {
            grid.push([f64::from(i) * 2.0, f64::from(j) * 2.0]);
        }
    }
    let grid = Matrix::from_rows(&grid).unwrap();
    assert_eq!(m.predict(&grid).unwrap(), m2.predict(&grid).unwrap());

    let mut shifted = m.clone();
    for c in 0..2 {
        for (k, v) in shifted.weights.row_mut(c).iter_mut().enumerate() {
            *v += [0.5, -0.25, 0.125][k];
        }
    }
    assert_eq!(m.predict(&grid).unwrap(), shifted.predict(&grid).unwrap());
}

#[test]
fn softmax_learns_separable_blobs() {
    let ds = blobs(4, 100, 6, 12.0, 9);
    let y = ds.labels().unwrap();
    let train_rows: Vec<usize> = (0..ds.len()).filter(|i| i % 3 != 0).collect();
    let test_rows: Vec<usize> = (0..ds.len()).filter(|i| i % 3 == 0).collect();
    let x = ds.features().select_rows(&train_rows);
    let labels = LabelVector::from_true(&train_rows.iter().map(|&i| y[i]).collect::<Vec<_>>());
    let model = train_softmax(&x, &labels, 4, &SoftmaxConfig::default()).unwrap();
    let pred = model.predict(&ds.features().select_rows(&test_rows)).unwrap();
    let correct = pred
        .iter()
        .zip(&test_rows)
        .filter(|(p, &i)| **p == y[i])
        .count();
    assert!(correct as f64 / test_rows.len() as f64 >= 0.98);

    let untrained = train_softmax(
        &x,
        &labels,
        4,
        &SoftmaxConfig {
            epochs: 0,
            ..SoftmaxConfig::default()
        },
    )
    .unwrap();
    assert_eq!(untrained.params, SoftmaxModel::initial(6, 64, 4, 0).params);
}
