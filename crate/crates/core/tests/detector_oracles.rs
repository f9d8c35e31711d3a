use proptest::prelude::*;
use rand::Rng;
use reliascore_core::detectors::{
    detect, energy_score, max_logit_score, max_softmax_score, odin_score_at, Detector, DetectorConfig,
    GradientOracle,
};
use reliascore_core::runtime::{Architecture, ToyModel};
use reliascore_core::{sampling, Matrix};

fn pairwise(id: &[f64], ood: &[f64]) -> f64 {
    let wins: f64 = id
        .iter()
        .flat_map(|a| ood.iter().map(move |b| if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 }))
        .sum();
    wins / (id.len() * ood.len()) as f64
}

fn score_rows(logits: &Matrix, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    logits.iter_rows().map(f).collect()
}

#[test]
fn detect_matches_pairwise_oracle_per_detector() {
    let id = Matrix::from_rows(&[[3.0, 0.0, 0.1], [2.0, 2.0, 0.0], [0.5, 4.0, 1.0], [1.0, 1.0, 1.0]]).unwrap();
    let ood = Matrix::from_rows(&[[0.2, 0.1, 0.0], [1.0, 1.0, 1.0], [2.5, 0.0, 2.4]]).unwrap();
    let config = DetectorConfig {
        enabled: vec![Detector::MaxSoftmax, Detector::MaxLogit, Detector::Energy],
        ..DetectorConfig::default()
    };
    let result = detect(&id, &ood, None, &config).unwrap();
    let expected = [
        pairwise(&score_rows(&id, max_softmax_score), &score_rows(&ood, max_softmax_score)),
        pairwise(&score_rows(&id, max_logit_score), &score_rows(&ood, max_logit_score)),
        pairwise(
            &score_rows(&id, |r| energy_score(r, 1.0).unwrap()),
            &score_rows(&ood, |r| energy_score(r, 1.0).unwrap()),
        ),
    ];
    for (r, e) in result.iter().zip(expected) {
        assert!((r.auroc - e).abs() <= 1e-12);
    }
    assert_eq!(result.iter().map(|r| r.detector).collect::<Vec<_>>(), config.enabled);
}

#[test]
fn odin_with_oracle_matches_direct_scores() {
    let mut rng = sampling::rng(1, 0);
    let model = ToyModel::init(Architecture::Mlp { hidden: 6 }, 4, 3, &mut rng).unwrap();
    let id_x = Matrix::new(20, 4, (0..80).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let ood_x = Matrix::new(15, 4, (0..60).map(|_| rng.random_range(-0.3..0.3)).collect()).unwrap();
    let config = DetectorConfig {
        enabled: vec![Detector::Odin],
        ..DetectorConfig::default()
    };
    let oracle = GradientOracle {
        model: &model,
        id_inputs: &id_x,
        ood_inputs: &ood_x,
        logit_temperature: 1.0,
    };
    let result = detect(&model.forward(&id_x).unwrap(), &model.forward(&ood_x).unwrap(), Some(&oracle), &config).unwrap();
    let odin = |x: &[f64]| odin_score_at(&model, x, 1000.0, 0.0014).unwrap();
    let expected = pairwise(&score_rows(&id_x, odin), &score_rows(&ood_x, odin));
    assert!((result[0].auroc - expected).abs() <= 1e-12);
}

#[test]
fn odin_on_linear_model_rises_with_small_perturbation() {
    let w = Matrix::from_rows(&[[2.0, -1.0], [-1.0, 1.5], [0.3, 0.2]]).unwrap();
    let model = ToyModel::linear(&w, &[0.1, -0.2, 0.0]).unwrap();
    let mut rng = sampling::rng(2, 0);
    for _ in 0..50 {
        let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let base = odin_score_at(&model, &x, 1000.0, 0.0).unwrap();
        let nudged = odin_score_at(&model, &x, 1000.0, 0.0014).unwrap();
        assert!(nudged >= base);
        let z = model.logits(&x).unwrap();
        assert!((odin_score_at(&model, &x, 1.0, 0.0).unwrap() - max_softmax_score(&z)).abs() <= 1e-12);
    }
}

proptest! {
    #[test]
    fn detect_ignores_ood_order_and_global_logit_shift(
        id in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..20),
        ood in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..20),
        c in -50.0f64..50.0,
        split in 1usize..19,
    ) {
        let config = DetectorConfig {
            enabled: vec![Detector::MaxSoftmax, Detector::MaxLogit, Detector::Energy],
            ..DetectorConfig::default()
        };
        let id_m = Matrix::from_rows(&id).unwrap();
        let ood_m = Matrix::from_rows(&ood).unwrap();
        let base = detect(&id_m, &ood_m, None, &config).unwrap();

        let s = split.min(ood.len() - 1);
        let mut reordered = ood[s..].to_vec();
        reordered.extend_from_slice(&ood[..s]);
        let again = detect(&id_m, &Matrix::from_rows(&reordered).unwrap(), None, &config).unwrap();
        for (a, b) in base.iter().zip(&again) {
            prop_assert!((a.auroc - b.auroc).abs() <= 1e-12);
        }

        let shifted = detect(&id_m.map(|v| v + c), &ood_m.map(|v| v + c), None, &config).unwrap();
        prop_assert!((base[1].auroc - shifted[1].auroc).abs() <= 1e-12);
    }

    #[test]
    fn single_class_max_logit_equals_energy(z in -100.0f64..100.0) {
        prop_assert!((max_logit_score(&[z]) - energy_score(&[z], 1.0).unwrap()).abs() <= 1e-12);
    }
}
