use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semstyle::colorspace::{make_basis, BasisKind, LabColor};
use semstyle::network::{
    forward, loss_and_gradient, train, Activation, Batch, BatchSample, DropoutMasks, HeadKind,
    Mode, NetworkArchitecture, NetworkWeights, TrainingHyperparams,
};
use semstyle::pipeline::{scene_examples, SceneParams, StyleConfig, SyntheticStyleSpec};
use semstyle::sampling::{build_training_set, SamplingParams, TrainingSet};
use semstyle::semantics::CategoryTable;

#[test]
fn eval_output_is_mask_expectation_for_linear_units() {
    // one hidden layer of 2 units: 4 masks, each equally likely at p = 0.5
    let mut arch = NetworkArchitecture::new(3, vec![2], BasisKind::Affine);
    arch.activation = Activation::Identity;
    let w = NetworkWeights::init(&arch, 9).unwrap();
    let x = array![[0.4, -1.2, 2.0]];
    let eval = forward(&w, &arch, x.view(), Mode::Eval).unwrap().output;
    let mut mean = Array2::<f64>::zeros(eval.raw_dim());
    for bits in 0..4u8 {
        let mask = array![[
            if bits & 1 == 1 { 2.0 } else { 0.0 },
            if bits & 2 == 2 { 2.0 } else { 0.0 }
        ]];
        let masks = DropoutMasks { layers: vec![mask] };
        mean += &(forward(&w, &arch, x.view(), Mode::Train(&masks)).unwrap().output / 4.0);
    }
    for (a, b) in eval.iter().zip(&mean) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn eval_rows_are_independent() {
    let arch = NetworkArchitecture::new(4, vec![16, 8], BasisKind::Quadratic);
    let w = NetworkWeights::init(&arch, 1).unwrap();
    let x = array![[0.1, 0.2, -0.3, 1.0], [2.0, -1.0, 0.5, 0.0], [0.0, 0.0, 0.0, 0.0]];
    let all = forward(&w, &arch, x.view(), Mode::Eval).unwrap().output;
    assert_eq!(all, forward(&w, &arch, x.view(), Mode::Eval).unwrap().output);
    for r in 0..3 {
        let one = forward(&w, &arch, x.slice(ndarray::s![r..r + 1, ..]), Mode::Eval).unwrap().output;
        for (a, b) in one.row(0).iter().zip(all.row(r)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn masks_keep_expected_share() {
    let arch = NetworkArchitecture::new(4, vec![200, 200], BasisKind::Quadratic);
    let masks = DropoutMasks::sample(&arch, 50, 0.5, &mut ChaCha8Rng::seed_from_u64(2));
    for l in &masks.layers {
        assert_eq!(l.dim(), (50, 200));
        let kept = l.iter().filter(|&&v| v != 0.0).count() as f64 / l.len() as f64;
        assert!((kept - 0.5).abs() < 0.02, "kept {kept}");
        assert!(l.iter().all(|&v| v == 0.0 || v == 2.0));
    }
}

#[test]
fn direct_head_gradient_matches_differences() {
    let mut arch = NetworkArchitecture::new(3, vec![5], BasisKind::Affine);
    arch.head = HeadKind::Direct;
    arch.activation = Activation::Identity;
    let w = NetworkWeights::init(&arch, 4).unwrap();
    let batch = Batch {
        features: array![[0.5, -0.2, 1.0], [1.5, 0.3, -0.7]],
        samples: vec![
            BatchSample { row: 0, basis: make_basis(LabColor::new(40.0, 3.0, 2.0), BasisKind::Affine), target: [0.3, 0.1, -0.2] },
            BatchSample { row: 1, basis: make_basis(LabColor::new(60.0, -3.0, 9.0), BasisKind::Affine), target: [0.6, 0.0, 0.1] },
        ],
    };
    let (_, grad) = loss_and_gradient(&w, &arch, &batch, Mode::Eval).unwrap();
    // with identity units the loss is a quadratic in each weight, so a
    // central difference is exact up to rounding
    let h = 1e-4;
    for i in 0..w.param_count() {
        let mut plus = w.clone();
        *plus.param_mut(i) += h;
        let mut minus = w.clone();
        *minus.param_mut(i) -= h;
        let fd = (loss_and_gradient(&plus, &arch, &batch, Mode::Eval).unwrap().0
            - loss_and_gradient(&minus, &arch, &batch, Mode::Eval).unwrap().0)
            / (2.0 * h);
        assert!((fd - grad.param(i)).abs() < 1e-7, "param {i}: {fd} vs {}", grad.param(i));
    }
}

fn small_set() -> TrainingSet {
    let scenes = SceneParams { width: 64, height: 64, seed: 21, ..Default::default() };
    let examples = scene_examples(&scenes, 0..4, &SyntheticStyleSpec::three_category_demo()).unwrap();
    let cats = CategoryTable::new(vec!["x".into(), "y".into(), "z".into()]).unwrap();
    let cfg = StyleConfig::new("m.csv", "o.json");
    let params = SamplingParams { samples_per_superpixel: 10, analysis: cfg.analysis(3) };
    build_training_set(&examples, &cats, &params, BasisKind::Quadratic, 0).unwrap()
}

#[test]
fn training_is_deterministic_and_descends() {
    let set = small_set();
    let hyper = TrainingHyperparams { epochs: 6, seed: 3, ..Default::default() };
    let a = train(&set, &[32, 32], HeadKind::Transform, &hyper).unwrap();
    let b = train(&set, &[32, 32], HeadKind::Transform, &hyper).unwrap();
    assert_eq!(a, b);
    let losses = &a.meta.train_loss;
    assert_eq!(losses.len(), 6);
    assert!(losses[5] < losses[0], "{losses:?}");
    let c = train(&set, &[32, 32], HeadKind::Transform, &TrainingHyperparams { seed: 4, ..hyper }).unwrap();
    assert_ne!(a.weights, c.weights);
}

#[test]
fn trained_model_predicts_for_every_feature() {
    let set = small_set();
    let hyper = TrainingHyperparams { epochs: 2, ..Default::default() };
    let model = train(&set, &[16, 16], HeadKind::Direct, &hyper).unwrap();
    let raw: Vec<Vec<f64>> = set.superpixels.iter().take(20).map(|s| s.feature.clone()).collect();
    let preds = model.predict_batch(&raw).unwrap();
    assert_eq!(preds.len(), 20);
    assert!(model.predict_transform(&raw[0]).is_err());
    assert!(model.predict(&raw[0][1..]).is_err());
}
