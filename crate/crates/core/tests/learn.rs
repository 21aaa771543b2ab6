mod common {
    pub mod oracles;
}

use common::oracles::{fd_gradient, rel_err};
use palpbench_core::dsp::SensorMask;
use palpbench_core::learn::{
    pca_fit, stratified_split, Activation, Classifier, Dataset, MlpConfig, MlpModel, ModelDoc, Standardizer, SvmConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn blobs(n_per: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.4).unwrap();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for c in 0..3 {
        for _ in 0..n_per {
            x.push((0..dim).map(|j| if j % 3 == c { 2.0 } else { 0.0 } + noise.sample(&mut rng)).collect());
            y.push(c);
        }
    }
    Dataset::new(x, y, vec!["a".into(), "b".into(), "c".into()], SensorMask::FORCE).unwrap()
}

fn max_grad_rel_err(sizes: &[usize], act: Activation, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let n_out = *sizes.last().unwrap();
    let names = (0..n_out).map(|i| i.to_string()).collect();
    let mut model = MlpModel::init(sizes, act, names, seed);
    // non-zero biases so every parameter is exercised
    let p: Vec<f64> = model.params().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
    model.set_params(&p);
    let x: Vec<Vec<f64>> = (0..8).map(|_| (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let y: Vec<usize> = (0..8).map(|i| i % n_out).collect();
    let (_, grad) = model.loss_and_grad(&x, &y);
    let mut probe = model.clone();
    let fd = fd_gradient(
        &mut |q| {
            probe.set_params(q);
            probe.loss(&x, &y)
        },
        &p,
        1e-6,
    );
    grad.iter().zip(&fd).map(|(a, b)| rel_err(*a, *b, 1e-6)).fold(0.0, f64::max)
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let archs: [(&[usize], Activation); 3] = [
        (&[3, 4], Activation::Relu),
        (&[5, 8, 3], Activation::Tanh),
        (&[6, 7, 5, 4], Activation::Relu),
    ];
    for (sizes, act) in archs {
        for seed in 0..5 {
            let e = max_grad_rel_err(sizes, act, seed);
            assert!(e < 1e-4, "{sizes:?} {act:?} seed {seed}: {e}");
        }
    }
}

#[test]
fn pca_components_are_orthonormal_and_decorrelating() {
    let data = blobs(40, 6, 3);
    let fit = pca_fit(&data.x, 4).unwrap();
    let m = &fit.model;
    for (i, a) in m.components.iter().enumerate() {
        for (j, b) in m.components.iter().enumerate() {
            let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
            assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
    }
    let scores = m.project(&data.x);
    let n = scores.len() as f64;
    for i in 0..4 {
        for j in 0..i {
            let cov: f64 = scores.iter().map(|s| s[i] * s[j]).sum::<f64>() / (n - 1.0);
            assert!(cov.abs() < 1e-9, "cov[{i}][{j}] = {cov}");
        }
    }
    let ratios = &m.explained_variance_ratio;
    assert!(ratios.windows(2).all(|w| w[0] >= w[1]));
    let full = pca_fit(&data.x, 6).unwrap().model;
    assert!((full.explained_variance_ratio.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for row in &data.x {
        let back = full.reconstruct_row(&full.project_row(row));
        assert!(row.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}

#[test]
fn pca_isotropic_data_has_equal_ratios() {
    // vertices of a cross: equal variance along every axis
    let d = 4;
    let mut x = Vec::new();
    for j in 0..d {
        for s in [-1.0, 1.0] {
            let mut r = vec![0.0; d];
            r[j] = s;
            x.push(r);
        }
    }
    let fit = pca_fit(&x, d).unwrap();
    assert!(fit.model.explained_variance_ratio.iter().all(|r| (r - 0.25).abs() < 1e-12));
    assert!(pca_fit(&x, 5).is_err());
}

#[test]
fn svm_predictions_survive_affine_feature_rescaling() {
    let data = blobs(30, 3, 5);
    let scaled = data.map_x(|r| r.iter().enumerate().map(|(j, v)| v * [4.0, 0.25, 1024.0][j] + [0.0, 7.0, -3.0][j]).collect());
    let a = ModelDoc::train_svm(&data, &SvmConfig::default()).unwrap();
    let b = ModelDoc::train_svm(&scaled, &SvmConfig::default()).unwrap();
    assert_eq!(a.predict(&data.x).unwrap(), b.predict(&scaled.x).unwrap());
    for p in a.predict_proba(&data.x).unwrap() {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let acc = a.predict(&data.x).unwrap().iter().zip(&data.y).filter(|(p, t)| p == t).count();
    assert!(acc as f64 / data.len() as f64 > 0.95);
}

#[test]
fn model_json_round_trip_is_exact() {
    let data = blobs(15, 3, 9);
    let cfg = MlpConfig {
        epochs: 20,
        ..MlpConfig::default()
    };
    for doc in [ModelDoc::train_svm(&data, &SvmConfig::default()).unwrap(), ModelDoc::train_mlp(&data, &cfg).unwrap()] {
        let back = ModelDoc::from_json(&doc.to_json()).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.predict_proba(&data.x).unwrap(), doc.predict_proba(&data.x).unwrap());
    }
}

proptest! {
    #[test]
    fn standardized_columns_have_zero_mean_unit_sd(rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 4), 3..40).prop_filter("distinct rows", |r| r.windows(2).any(|w| w[0] != w[1]))) {
        let s = Standardizer::fit(&rows).unwrap();
        let z = s.apply_all(&rows);
        let n = rows.len() as f64;
        for j in 0..4 {
            let m = z.iter().map(|r| r[j]).sum::<f64>() / n;
            prop_assert!(m.abs() < 1e-9);
            let var = z.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            prop_assert!((var - 1.0).abs() < 1e-6, "column {} variance {}", j, var);
        }
    }

    #[test]
    fn stratified_split_partitions_each_class(labels in proptest::collection::vec(0usize..4, 1..200), seed in 0u64..1000) {
        let (train, test) = stratified_split(&labels, 0.3, seed);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for c in 0..4 {
            let n = labels.iter().filter(|&&l| l == c).count();
            let t = test.iter().filter(|&&i| labels[i] == c).count();
            prop_assert_eq!(t, (n as f64 * 0.3).round() as usize);
        }
        prop_assert_eq!(stratified_split(&labels, 0.3, seed), (train, test));
    }
}
