use rand::Rng;
use reliascore_core::runtime::{Architecture, ToyModel};
use reliascore_core::sampling;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn random_model(rng: &mut impl Rng) -> ToyModel {
    let d = rng.random_range(1..7);
    let k = rng.random_range(1..6);
    let arch = if rng.random_bool(0.5) {
        Architecture::Linear
    } else {
        Architecture::Mlp {
            hidden: rng.random_range(1..9),
        }
    };
    let mut model = ToyModel::init(arch, d, k, rng).unwrap();
    for p in model.params_mut() {
        *p += rng.random_range(-0.5..0.5);
    }
    model
}

/// Smallest distance of a hidden pre-activation from the relu kink.
fn kink_distance(model: &ToyModel, x: &[f64]) -> f64 {
    let Architecture::Mlp { hidden } = model.architecture() else {
        return f64::INFINITY;
    };
    let d = model.input_dim();
    let p = model.params();
    (0..hidden)
        .map(|j| {
            let pre: f64 = (0..d).map(|i| p[j * d + i] * x[i]).sum::<f64>() + p[hidden * d + j];
            pre.abs()
        })
        .fold(f64::INFINITY, f64::min)
}

fn random_point(model: &ToyModel, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..model.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        if kink_distance(model, &x) > 1e-3 {
            return x;
        }
    }
}

#[test]
fn gradients_match_central_differences_on_random_models() {
    let mut rng = sampling::rng(2024, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut model = random_model(&mut rng);
        let x = random_point(&model, &mut rng);
        let y = rng.random_range(0..model.num_classes());
        let g = model.gradients(&x, y).unwrap();
        assert_eq!(g.input, model.input_gradient(&x, y).unwrap());

        for i in 0..x.len() {
            let (mut hi, mut lo) = (x.clone(), x.clone());
            hi[i] += STEP;
            lo[i] -= STEP;
            let numeric = (model.loss(&hi, y).unwrap() - model.loss(&lo, y).unwrap()) / (2.0 * STEP);
            worst = worst.max(relative_error(g.input[i], numeric));
        }
        for j in 0..model.params().len() {
            let base = model.params()[j];
            model.params_mut()[j] = base + STEP;
            let up = model.loss(&x, y).unwrap();
            model.params_mut()[j] = base - STEP;
            let down = model.loss(&x, y).unwrap();
            model.params_mut()[j] = base;
            if kink_distance(&model, &x) > 1e-3 {
                worst = worst.max(relative_error(g.params[j], (up - down) / (2.0 * STEP)));
            }
        }
    }
    assert!(worst < TOLERANCE, "max relative error {worst}");
}

#[test]
fn mlp_gradient_with_dead_units_is_exact_zero_through_them() {
    let w1 = reliascore_core::Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let w2 = reliascore_core::Matrix::from_rows(&[[1.0, -1.0], [0.5, 2.0]]).unwrap();
    let model = ToyModel::mlp(&w1, &[-10.0, -10.0], &w2, &[0.0, 0.0]).unwrap();
    let g = model.input_gradient(&[0.3, -0.2], 1).unwrap();
    assert_eq!(g, vec![0.0, 0.0]);
}
