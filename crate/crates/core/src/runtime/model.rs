use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::metrics::check_temperature;
use crate::{Error, Matrix, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Network shape of a [`ToyModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Architecture {
    /// `Wx + b`
    Linear,
    /// `W₂ relu(W₁x + b₁) + b₂`
    Mlp { hidden: usize },
}

/// A small differentiable classifier.
///
/// Parameters live in one flat buffer. Linear models store `W (K×d)` then
/// `b (K)`; MLPs store `W₁ (h×d)`, `b₁ (h)`, `W₂ (K×h)`, `b₂ (K)`, all
/// row-major.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ToyModel {
    architecture: Architecture,
    input_dim: usize,
    num_classes: usize,
    params: Vec<f64>,
}

/// Loss, input gradient and parameter gradient of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub input: Vec<f64>,
    pub params: Vec<f64>,
}

fn param_count(architecture: Architecture, d: usize, k: usize) -> usize {
    match architecture {
        Architecture::Linear => k * d + k,
        Architecture::Mlp { hidden } => hidden * d + hidden + k * hidden + k,
    }
}

impl ToyModel {
    /// Builds a model from a flat parameter buffer.
    pub fn from_params(
        architecture: Architecture,
        input_dim: usize,
        num_classes: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        let model = Self {
            architecture,
            input_dim,
            num_classes,
            params,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks dimensions and finiteness; run after deserialising.
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive"));
        }
        if let Architecture::Mlp { hidden: 0 } = self.architecture {
            return Err(Error::InvalidConfig("hidden width must be positive"));
        }
        let expected = param_count(self.architecture, self.input_dim, self.num_classes);
        if self.params.len() != expected {
            return Err(Error::ShapeMismatch {
                what: "model parameters",
                expected,
                found: self.params.len(),
            });
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(())
    }

    pub fn zeros(architecture: Architecture, input_dim: usize, num_classes: usize) -> Result<Self> {
        let n = param_count(architecture, input_dim, num_classes);
        Self::from_params(architecture, input_dim, num_classes, vec![0.0; n])
    }

    /// `Wx + b` with `W` given as a `K × d` matrix.
    pub fn linear(weights: &Matrix, bias: &[f64]) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::ShapeMismatch {
                what: "linear bias",
                expected: weights.rows(),
                found: bias.len(),
            });
        }
        let mut params = weights.as_slice().to_vec();
        params.extend_from_slice(bias);
        Self::from_params(Architecture::Linear, weights.cols(), weights.rows(), params)
    }

    /// One-hidden-layer rectifier network.
    pub fn mlp(w1: &Matrix, b1: &[f64], w2: &Matrix, b2: &[f64]) -> Result<Self> {
        let hidden = w1.rows();
        if b1.len() != hidden || w2.cols() != hidden || b2.len() != w2.rows() {
            return Err(Error::ShapeMismatch {
                what: "mlp layers",
                expected: hidden,
                found: w2.cols(),
            });
        }
        let mut params = w1.as_slice().to_vec();
        params.extend_from_slice(b1);
        params.extend_from_slice(w2.as_slice());
        params.extend_from_slice(b2);
        Self::from_params(Architecture::Mlp { hidden }, w1.cols(), w2.rows(), params)
    }

    /// Xavier-uniform weights and zero biases.
    pub fn init<R: Rng>(
        architecture: Architecture,
        input_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(architecture, input_dim, num_classes)?;
        let mut fill = |slice: &mut [f64], fan_in: usize, fan_out: usize| {
            let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
            for w in slice {
                *w = rng.random_range(-limit..limit);
            }
        };
        let (d, k) = (input_dim, num_classes);
        match architecture {
            Architecture::Linear => fill(&mut model.params[..k * d], d, k),
            Architecture::Mlp { hidden: h } => {
                fill(&mut model.params[..h * d], d, h);
                let w2 = h * d + h;
                fill(&mut model.params[w2..w2 + k * h], h, k);
            }
        }
        Ok(model)
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Multiplies the output layer (weights and bias) by `factor`, so that
    /// every logit is scaled by it.
    pub fn scale_output(&mut self, factor: f64) {
        let start = match self.architecture {
            Architecture::Linear => 0,
            Architecture::Mlp { hidden: h } => h * self.input_dim + h,
        };
        for p in &mut self.params[start..] {
            *p *= factor;
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::ShapeMismatch {
                what: "model input",
                expected: self.input_dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.num_classes {
            return Err(Error::LabelOutOfRange {
                label: y as i64,
                classes: self.num_classes,
            });
        }
        Ok(())
    }

    /// `out = W x + b` for a row-major `W` of `out.len()` rows.
    fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
        let d = x.len();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &w[i * d..(i + 1) * d];
            *o = b[i] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
        }
    }

    /// Logits of a single input.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let (d, k) = (self.input_dim, self.num_classes);
        let mut z = vec![0.0; k];
        match self.architecture {
            Architecture::Linear => {
                Self::affine(&self.params[..k * d], &self.params[k * d..], x, &mut z);
            }
            Architecture::Mlp { hidden: h } => {
                let (w1, rest) = self.params.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(k * h);
                let mut a = vec![0.0; h];
                Self::affine(w1, b1, x, &mut a);
                for v in &mut a {
                    *v = v.max(0.0);
                }
                Self::affine(w2, b2, &a, &mut z);
            }
        }
        Ok(z)
    }

    /// Logits of every row of `inputs`.
    pub fn forward(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.cols() != self.input_dim && inputs.rows() > 0 {
            return Err(Error::ShapeMismatch {
                what: "model input",
                expected: self.input_dim,
                found: inputs.cols(),
            });
        }
        let mut out = Matrix::zeros(inputs.rows(), self.num_classes);
        for (i, x) in inputs.iter_rows().enumerate() {
            out.row_mut(i).copy_from_slice(&self.logits(x)?);
        }
        Ok(out)
    }

    /// Cross-entropy of `softmax(f(x) / temperature)` against `y`.
    pub fn loss_at(&self, x: &[f64], y: usize, temperature: f64) -> Result<f64> {
        check_temperature(temperature)?;
        self.check_label(y)?;
        let z = self.logits(x)?;
        Ok(math::log_sum_exp(&z, temperature) - z[y] / temperature)
    }

    pub fn loss(&self, x: &[f64], y: usize) -> Result<f64> {
        self.loss_at(x, y, 1.0)
    }

    /// Gradient of the cross-entropy loss with respect to the input.
    pub fn input_gradient(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        Ok(self.gradients_at(x, y, 1.0)?.input)
    }

    pub fn gradients(&self, x: &[f64], y: usize) -> Result<Gradients> {
        self.gradients_at(x, y, 1.0)
    }

    /// Reverse-mode gradients of `CE(softmax(f(x) / temperature), y)`.
    ///
    /// At the rectifier kink the subgradient 0 is used.
    pub fn gradients_at(&self, x: &[f64], y: usize, temperature: f64) -> Result<Gradients> {
        check_temperature(temperature)?;
        self.check_input(x)?;
        self.check_label(y)?;
        let (d, k) = (self.input_dim, self.num_classes);
        let mut grad = vec![0.0; self.params.len()];
        let mut dx = vec![0.0; d];

        // dL/dz = (softmax(z/T) - onehot(y)) / T
        let output_delta = |z: &[f64]| -> (f64, Vec<f64>) {
            let mut p = Vec::with_capacity(k);
            math::softmax_into(z, temperature, &mut p);
            let loss = math::log_sum_exp(z, temperature) - z[y] / temperature;
            p[y] -= 1.0;
            for v in &mut p {
                *v /= temperature;
            }
            (loss, p)
        };

        let loss = match self.architecture {
            Architecture::Linear => {
                let w = &self.params[..k * d];
                let mut z = vec![0.0; k];
                Self::affine(w, &self.params[k * d..], x, &mut z);
                let (loss, dz) = output_delta(&z);
                let (gw, gb) = grad.split_at_mut(k * d);
                for c in 0..k {
                    gb[c] = dz[c];
                    for j in 0..d {
                        gw[c * d + j] = dz[c] * x[j];
                        dx[j] += dz[c] * w[c * d + j];
                    }
                }
                loss
            }
            Architecture::Mlp { hidden: h } => {
                let (w1, rest) = self.params.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(k * h);
                let mut pre = vec![0.0; h];
                Self::affine(w1, b1, x, &mut pre);
                let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
                let mut z = vec![0.0; k];
                Self::affine(w2, b2, &act, &mut z);
                let (loss, dz) = output_delta(&z);

                let (gw1, rest) = grad.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(k * h);
                let mut dact = vec![0.0; h];
                for c in 0..k {
                    gb2[c] = dz[c];
                    for j in 0..h {
                        gw2[c * h + j] = dz[c] * act[j];
                        dact[j] += dz[c] * w2[c * h + j];
                    }
                }
                for j in 0..h {
                    let dpre = if pre[j] > 0.0 { dact[j] } else { 0.0 };
                    gb1[j] = dpre;
                    for i in 0..d {
                        gw1[j * d + i] = dpre * x[i];
                        dx[i] += dpre * w1[j * d + i];
                    }
                }
                loss
            }
        };
        Ok(Gradients {
            loss,
            input: dx,
            params: grad,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::rng;

    #[test]
    fn linear_identity_forward() {
        let w = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let m = ToyModel::linear(&w, &[0.0, 0.0]).unwrap();
        assert_eq!(m.logits(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_mlp_outputs_zero_and_has_zero_input_gradient() {
        let m = ToyModel::zeros(Architecture::Mlp { hidden: 4 }, 3, 2).unwrap();
        assert_eq!(m.logits(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(m.input_gradient(&[1.0, -2.0, 3.0], 1).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn batched_forward_matches_per_sample() {
        let m = ToyModel::init(Architecture::Mlp { hidden: 5 }, 3, 4, &mut rng(3, 0)).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]]).unwrap();
        let batch = m.forward(&x).unwrap();
        for i in 0..2 {
            assert_eq!(batch.row(i), m.logits(x.row(i)).unwrap().as_slice());
        }
    }

    #[test]
    fn linear_input_gradient_closed_form() {
        let w = Matrix::from_rows(&[[0.5, -1.0, 2.0], [1.5, 0.25, -0.5]]).unwrap();
        let m = ToyModel::linear(&w, &[0.1, -0.2]).unwrap();
        let x = [0.3, -0.7, 1.1];
        let p = crate::metrics::softmax(&m.logits(&x).unwrap(), 1.0).unwrap();
        let y = 1;
        let g = m.input_gradient(&x, y).unwrap();
        for j in 0..3 {
            let expected: f64 = (0..2)
                .map(|c| (p[c] - if c == y { 1.0 } else { 0.0 }) * w.row(c)[j])
                .sum();
            assert!((g[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_and_label_errors() {
        let m = ToyModel::zeros(Architecture::Linear, 2, 3).unwrap();
        assert!(matches!(m.logits(&[1.0]), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(m.input_gradient(&[1.0, 2.0], 3), Err(Error::LabelOutOfRange { .. })));
        assert!(ToyModel::from_params(Architecture::Linear, 2, 3, vec![0.0; 5]).is_err());
        assert!(ToyModel::from_params(Architecture::Linear, 1, 1, vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn scale_output_scales_logits() {
        let m = ToyModel::init(Architecture::Mlp { hidden: 3 }, 2, 3, &mut rng(1, 0)).unwrap();
        let mut s = m.clone();
        s.scale_output(2.5);
        let x = [0.4, -1.2];
        let a = m.logits(&x).unwrap();
        let b = s.logits(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((2.5 * u - v).abs() < 1e-12);
        }
    }
}
