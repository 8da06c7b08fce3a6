mod common;

use common::{numeric_gradient, random_grid, relative_error, rng, Bed};
use hdm_core::gateway::{
    class_score, target_score_and_gradient, Classifier, PreprocessConfig, ScoreKind,
};
use hdm_core::mask_math::{consistency_loss, loss_and_gradient, loss_value, MaskChain, Objective};
use hdm_core::testbed::{ConstantClassifier, LinearClassifier};
use hdm_core::{MaskGrid, RawImage};
use rand::Rng;

const STEP: f64 = 1e-5;

fn check_chain(
    bed: &Bed,
    kind: ScoreKind,
    trainable: &MaskGrid,
    chain: MaskChain<'_>,
    factor: f64,
) -> f64 {
    let x = &bed.images[0];
    let objective = Objective::new(&bed.model, x, bed.data.labels[0], kind).unwrap();
    let (_, grad) = loss_and_gradient(&objective, trainable, chain, factor).unwrap();
    let numeric = numeric_gradient(trainable, STEP, |g| {
        loss_value(&objective, g, chain, factor).unwrap().total
    });
    relative_error(grad.values(), &numeric)
}

#[test]
fn direct_chain_matches_finite_differences() {
    let bed = Bed::small();
    let mut r = rng(1);
    let d = random_grid(&mut r, 4, 4, 0.1, 0.9);
    for kind in [ScoreKind::Logit, ScoreKind::Probability] {
        let err = check_chain(&bed, kind, &d, MaskChain::Direct, 0.7);
        assert!(err < 1e-4, "{kind:?}: relative error {err:e}");
    }
}

#[test]
fn guided_chain_matches_finite_differences() {
    let bed = Bed::small();
    let mut r = rng(2);
    let predecessor = random_grid(&mut r, 4, 4, 0.1, 0.9);
    let c1 = random_grid(&mut r, 8, 8, 0.1, 0.9);
    for kind in [ScoreKind::Logit, ScoreKind::Probability] {
        let err = check_chain(
            &bed,
            kind,
            &c1,
            MaskChain::Guided {
                predecessor: &predecessor,
            },
            2.0,
        );
        assert!(err < 1e-4, "{kind:?}: relative error {err:e}");
    }
}

#[test]
fn mix_chain_matches_finite_differences() {
    let bed = Bed::small();
    let mut r = rng(3);
    let masks: Vec<MaskGrid> = (0..3)
        .map(|_| random_grid(&mut r, 16, 16, 0.0, 1.0))
        .collect();
    let v = random_grid(&mut r, 1, 3, 0.1, 0.9);
    for kind in [ScoreKind::Logit, ScoreKind::Probability] {
        let err = check_chain(&bed, kind, &v, MaskChain::Mix { masks: &masks }, 1e-2);
        assert!(err < 1e-4, "{kind:?}: relative error {err:e}");
    }
}

#[test]
fn regularizer_only_gradient_with_constant_model() {
    let model = ConstantClassifier {
        shape: (8, 8, 1),
        scores: vec![0.3, 0.1],
    };
    let x = PreprocessConfig::identity((8, 8), 1)
        .apply(&RawImage::new(8, 8, 1, vec![0.5; 64]).unwrap())
        .unwrap();
    let objective = Objective::new(&model, &x, 0, ScoreKind::Logit).unwrap();
    let d = MaskGrid::filled(2, 2, 0.5);
    let (loss, grad) = loss_and_gradient(&objective, &d, MaskChain::Direct, 0.0).unwrap();
    assert_eq!(loss.consistency, 0.0);
    assert!(grad.values().iter().all(|&g| g == 0.0));
}

fn random_linear(seed: u64, shape: (usize, usize, usize), classes: usize) -> LinearClassifier {
    let mut r = rng(seed);
    let dim = shape.0 * shape.1 * shape.2;
    LinearClassifier::new(
        shape,
        classes,
        (0..dim * classes)
            .map(|_| r.random_range(-1.0..1.0))
            .collect(),
        (0..classes).map(|_| r.random_range(-0.5..0.5)).collect(),
    )
    .unwrap()
}

#[test]
fn classifier_gradient_matches_finite_differences() {
    let model = random_linear(4, (8, 8, 1), 3);
    let mut r = rng(5);
    let raw = RawImage::new(8, 8, 1, (0..64).map(|_| r.random::<f64>()).collect()).unwrap();
    let x = PreprocessConfig::identity((8, 8), 1).apply(&raw).unwrap();
    for p in 0..3 {
        let (score, grad) = target_score_and_gradient(&model, &x, p).unwrap();
        assert_eq!(score, model.scores(x.pixels()).unwrap()[p]);
        assert_eq!(grad, model.weight_row(p));
        let at = MaskGrid::new(8, 8, x.pixels().to_vec()).unwrap();
        let numeric = numeric_gradient(&at, 1e-3, |g| model.scores(g.values()).unwrap()[p]);
        assert!(relative_error(&grad, &numeric) < 1e-4);
    }
}

#[test]
fn probability_gradient_matches_finite_differences() {
    let model = random_linear(6, (4, 4, 1), 4);
    let mut r = rng(7);
    let at = random_grid(&mut r, 4, 4, 0.0, 1.0);
    let x = PreprocessConfig::identity((4, 4), 1)
        .apply(&RawImage::new(4, 4, 1, at.values().to_vec()).unwrap())
        .unwrap();
    let ones = MaskGrid::filled(4, 4, 1.0);
    let objective = Objective::new(&model, &x, 1, ScoreKind::Probability).unwrap();
    let prob = |g: &MaskGrid| {
        let img = x.masked(g).unwrap();
        class_score(&model, &img, 1, ScoreKind::Probability).unwrap()
    };
    // dJ/dm at m = 1 vanishes (J = 0 there), so probe an interior mask instead
    let m = random_grid(&mut r, 4, 4, 0.2, 0.8);
    let (_, grad) = loss_and_gradient(&objective, &m, MaskChain::Direct, 0.0).unwrap();
    let reference = prob(&ones);
    let numeric = numeric_gradient(&m, STEP, |g| (prob(g) - reference).powi(2));
    assert!(relative_error(grad.values(), &numeric) < 1e-4);
}

#[test]
fn consistency_loss_closed_form_for_zero_mask() {
    let bed = Bed::desk(hdm_core::testbed::PatchMode::Single);
    let x = &bed.images[3];
    let p = bed.data.labels[3];
    let w = bed.model.weight_row(p);
    let b = bed.model.bias()[p];
    let f_x: f64 = w.iter().zip(x.pixels()).map(|(a, v)| a * v).sum::<f64>() + b;
    let expected = (b - f_x).powi(2);
    assert!(expected > 0.0);
    let zeros = MaskGrid::zeros(32, 32);
    let j = consistency_loss(&bed.model, x, &zeros, p, ScoreKind::Logit).unwrap();
    assert!(
        (j - expected).abs() <= 1e-9 * expected.max(1.0),
        "{j} vs {expected}"
    );
    let ones = MaskGrid::filled(32, 32, 1.0);
    assert_eq!(
        consistency_loss(&bed.model, x, &ones, p, ScoreKind::Logit).unwrap(),
        0.0
    );
}
