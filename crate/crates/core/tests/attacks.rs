use proptest::prelude::*;
use rand::Rng;
use reliascore_core::metrics::argmax;
use reliascore_core::runtime::{
    attack, evaluate_adversarial, fgsm, train, Architecture, AttackConfig, AttackMethod, ToyModel, TrainConfig,
};
use reliascore_core::{sampling, Matrix};

/// Three tight blobs whose separation is a few attack budgets wide.
fn blobs(n: usize, seed: u64) -> (Matrix, Vec<i32>) {
    let mut rng = sampling::rng(seed, 5);
    let centers = [[0.06, 0.0], [-0.03, 0.05], [-0.03, -0.05]];
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.random_range(0..3);
        for c in centers[y] {
            data.push(c + 0.02 * (rng.random::<f64>() + rng.random::<f64>() - 1.0));
        }
        labels.push(y as i32);
    }
    (Matrix::new(n, 2, data).unwrap(), labels)
}

fn trained() -> (ToyModel, Matrix, Vec<i32>) {
    let (x, y) = blobs(400, 1);
    let config = TrainConfig {
        learning_rate: 0.5,
        ..TrainConfig::default()
    };
    let model = train(&x, &y, 3, &config).unwrap().model;
    let (xt, yt) = blobs(400, 2);
    (model, xt, yt)
}

fn corner_flips(model: &ToyModel, x: &Matrix, y: &[i32], eps: f64, draws: usize, seed: u64) -> usize {
    let mut rng = sampling::rng(seed, 9);
    let per = draws / x.rows();
    let mut flips = 0;
    for (row, &label) in x.iter_rows().zip(y) {
        if argmax(&model.logits(row).unwrap()) != label as usize {
            continue;
        }
        let found = (0..per).any(|_| {
            let corner: Vec<f64> = row
                .iter()
                .map(|v| if rng.random_bool(0.5) { v + eps } else { v - eps })
                .collect();
            argmax(&model.logits(&corner).unwrap()) != label as usize
        });
        flips += found as usize;
    }
    flips
}

#[test]
fn pgd_lowers_accuracy_and_beats_random_corners() {
    let (model, x, y) = trained();
    let sub = Matrix::new(128, 2, x.as_slice()[..256].to_vec()).unwrap();
    let ysub = &y[..128];
    let eps = 3.0 / 255.0;
    let eval = evaluate_adversarial(&model, &sub, ysub, &AttackConfig::pgd(eps), 128, 0).unwrap();
    assert!(eval.clean_accuracy > 0.9);
    assert!(eval.adversarial_accuracy <= eval.clean_accuracy);
    let pgd_flips = ((eval.clean_accuracy - eval.adversarial_accuracy) * 128.0).round() as usize;
    assert!(pgd_flips >= corner_flips(&model, &sub, ysub, eps, 10_000, 3));
}

#[test]
fn larger_budget_never_helps_the_model() {
    let (model, x, y) = trained();
    let weak = evaluate_adversarial(&model, &x, &y, &AttackConfig::pgd(1.0 / 255.0), 128, 0).unwrap();
    let strong = evaluate_adversarial(&model, &x, &y, &AttackConfig::pgd(8.0 / 255.0), 128, 0).unwrap();
    assert_eq!(weak.clean_accuracy, strong.clean_accuracy);
    assert!(strong.adversarial_accuracy <= weak.adversarial_accuracy);
    let oracle_weak = corner_flips(&model, &x.select_rows(&(0..128).collect::<Vec<_>>()), &y[..128], 1.0 / 255.0, 10_000, 4);
    let oracle_strong = corner_flips(&model, &x.select_rows(&(0..128).collect::<Vec<_>>()), &y[..128], 8.0 / 255.0, 10_000, 4);
    assert!(oracle_strong >= oracle_weak);
}

#[test]
fn evaluation_caps_at_128_samples() {
    let (model, _, _) = trained();
    let (x, y) = blobs(1000, 3);
    let eval = evaluate_adversarial(&model, &x, &y, &AttackConfig::pgd(3.0 / 255.0), 128, 0).unwrap();
    assert_eq!(eval.n_evaluated, 128);
}

fn arb_config() -> impl Strategy<Value = AttackConfig> {
    (0.0f64..0.5, 1usize..12, 0.001f64..0.3, any::<bool>(), any::<bool>(), any::<u64>()).prop_map(
        |(epsilon, steps, step_size, random_start, fgsm, seed)| AttackConfig {
            method: if fgsm { AttackMethod::Fgsm } else { AttackMethod::Pgd },
            epsilon,
            steps,
            step_size,
            random_start,
            seed,
            clip: None,
        },
    )
}

proptest! {
    #[test]
    fn attacks_stay_inside_the_ball(
        config in arb_config(),
        x in prop::collection::vec(-3.0f64..3.0, 3),
        seed in any::<u64>(),
        y in 0usize..4,
    ) {
        let model = ToyModel::init(Architecture::Mlp { hidden: 5 }, 3, 4, &mut sampling::rng(seed, 0)).unwrap();
        let adv = attack(&model, &x, y, &config, 0).unwrap();
        let dist = adv.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(dist <= config.epsilon + 1e-12);
    }

    #[test]
    fn linear_ascent_steps_never_lower_the_loss(
        x in prop::collection::vec(-3.0f64..3.0, 4),
        seed in any::<u64>(),
        eps in 0.0f64..0.5,
        y in 0usize..3,
    ) {
        let model = ToyModel::init(Architecture::Linear, 4, 3, &mut sampling::rng(seed, 0)).unwrap();
        let before = model.loss(&x, y).unwrap();
        let one = fgsm(&model, &x, y, eps).unwrap();
        prop_assert!(model.loss(&one, y).unwrap() >= before - 1e-12);
        let config = AttackConfig { random_start: false, ..AttackConfig::pgd(eps) };
        let many = attack(&model, &x, y, &config, 0).unwrap();
        prop_assert!(model.loss(&many, y).unwrap() >= before - 1e-12);
    }
}
