use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LearnError;
use crate::preprocess::ScalerParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: (usize, usize),
    pub epochs: usize,
    pub step: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl MlpConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            hidden: (8, 8),
            epochs: 2000,
            step: 0.01,
            seed,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `weights[out][in]`
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

/// Fully connected net `[1, h1, h2, 1]` with tanh hidden units and a linear
/// output. Inputs are rescaled to [0, 1] with the training range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub input_scaler: ScalerParams,
    pub config: MlpConfig,
    pub first_loss: f64,
    pub final_loss: f64,
}

struct Forward {
    /// activations[0] is the input; the last entry is the output.
    activations: Vec<Vec<f64>>,
}

impl MlpModel {
    pub fn new(config: &MlpConfig) -> Self {
        let sizes = [1, config.hidden.0, config.hidden.1, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weights: (0..fan_out)
                        .map(|_| (0..fan_in).map(|_| rng.random_range(-limit..limit)).collect())
                        .collect(),
                    biases: vec![0.0; fan_out],
                }
            })
            .collect();
        Self {
            layers,
            input_scaler: ScalerParams { min: 0.0, max: 1.0 },
            config: config.clone(),
            first_loss: f64::NAN,
            final_loss: f64::NAN,
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weights[0].len()];
        sizes.extend(self.layers.iter().map(|l| l.biases.len()));
        sizes
    }

    fn forward(&self, input: &[f64]) -> Forward {
        let mut activations = vec![input.to_vec()];
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let prev = activations.last().expect("input present");
            let out: Vec<f64> = layer
                .weights
                .iter()
                .zip(&layer.biases)
                .map(|(w, b)| {
                    let z = b + w.iter().zip(prev).map(|(a, x)| a * x).sum::<f64>();
                    if li == last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            activations.push(out);
        }
        Forward { activations }
    }

    /// Output for an input already on the model's internal [0, 1] scale.
    pub fn predict_scaled(&self, u: f64) -> f64 {
        self.forward(&[u]).activations.last().expect("output")[0]
    }

    pub fn predict(&self, t: f64) -> f64 {
        self.predict_scaled(self.scale_input(t))
    }

    /// Affine map onto the training range; unlike MinMax scaling of data
    /// columns this does not clamp, so extrapolation stays extrapolation.
    pub fn scale_input(&self, t: f64) -> f64 {
        let s = &self.input_scaler;
        if s.max == s.min {
            0.5
        } else {
            (t - s.min) / (s.max - s.min)
        }
    }

    /// All weights and biases, layer by layer, weights row-major then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter().flatten());
            out.extend(&l.biases);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().flatten() {
                *w = it.next().expect("parameter count");
            }
            for b in &mut l.biases {
                *b = it.next().expect("parameter count");
            }
        }
        assert!(it.next().is_none(), "too many parameters");
    }

    /// Mean squared error over scaled inputs and its gradient with respect
    /// to [`Self::params`], by backpropagation.
    pub fn loss_and_gradient(&self, inputs: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
        let n = inputs.len() as f64;
        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|l| Layer {
                weights: vec![vec![0.0; l.weights[0].len()]; l.weights.len()],
                biases: vec![0.0; l.biases.len()],
            })
            .collect();
        let mut loss = 0.0;
        for (&u, &y) in inputs.iter().zip(targets) {
            let fwd = self.forward(&[u]);
            let out = fwd.activations.last().expect("output")[0];
            let err = out - y;
            loss += err * err;
            // dL/dz for the output layer
            let mut delta = vec![2.0 * err / n];
            for li in (0..self.layers.len()).rev() {
                let input = &fwd.activations[li];
                for (o, d) in delta.iter().enumerate() {
                    grads[li].biases[o] += d;
                    for (i, a) in input.iter().enumerate() {
                        grads[li].weights[o][i] += d * a;
                    }
                }
                if li == 0 {
                    break;
                }
                // back through the weights, then tanh' = 1 - a^2
                let layer = &self.layers[li];
                delta = (0..input.len())
                    .map(|i| {
                        let back: f64 = delta
                            .iter()
                            .enumerate()
                            .map(|(o, d)| d * layer.weights[o][i])
                            .sum();
                        back * (1.0 - input[i] * input[i])
                    })
                    .collect();
            }
        }
        let mut flat = Vec::new();
        for g in &grads {
            flat.extend(g.weights.iter().flatten());
            flat.extend(&g.biases);
        }
        (loss / n, flat)
    }
}

/// Full-batch Adam on mean squared error.
pub fn fit_mlp(t: &[f64], y: &[f64], config: &MlpConfig) -> Result<MlpModel, LearnError> {
    if t.len() != y.len() {
        return Err(LearnError::ShapeMismatch(format!("{} inputs, {} targets", t.len(), y.len())));
    }
    if t.len() < 2 {
        return Err(LearnError::DegenerateInput("need at least two points".into()));
    }
    if config.hidden.0 == 0 || config.hidden.1 == 0 || config.epochs == 0 {
        return Err(LearnError::InvalidParams("hidden sizes and epochs must be positive".into()));
    }
    let mut model = MlpModel::new(config);
    model.input_scaler = ScalerParams::fit(t.iter().copied()).expect("non-empty input");
    let inputs: Vec<f64> = t.iter().map(|&v| model.scale_input(v)).collect();

    let mut params = model.params();
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut first_loss = f64::NAN;
    for epoch in 1..=config.epochs {
        let (loss, grad) = model.loss_and_gradient(&inputs, y);
        if epoch == 1 {
            first_loss = loss;
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(LearnError::NonFiniteLoss {
                epoch,
                loss,
                first_loss,
            });
        }
        let bc1 = 1.0 - config.beta1.powi(epoch as i32);
        let bc2 = 1.0 - config.beta2.powi(epoch as i32);
        for (((p, g), m), v) in params.iter_mut().zip(&grad).zip(&mut m).zip(&mut v) {
            *m = config.beta1 * *m + (1.0 - config.beta1) * g;
            *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
            *p -= config.step * (*m / bc1) / ((*v / bc2).sqrt() + config.epsilon);
        }
        model.set_params(&params);
    }
    let (final_loss, _) = model.loss_and_gradient(&inputs, y);
    if !final_loss.is_finite() {
        return Err(LearnError::NonFiniteLoss {
            epoch: config.epochs + 1,
            loss: final_loss,
            first_loss,
        });
    }
    model.first_loss = first_loss;
    model.final_loss = final_loss;
    Ok(model)
}

pub fn predict_mlp(model: &MlpModel, t: f64) -> f64 {
    model.predict(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architecture_is_two_hidden_layers() {
        let m = MlpModel::new(&MlpConfig::with_seed(1));
        assert_eq!(m.layer_sizes(), [1, 8, 8, 1]);
        assert_eq!(m.params().len(), 8 + 8 + 64 + 8 + 8 + 1);
    }

    #[test]
    fn constant_target_converges() {
        let t = [2006.0, 2011.0, 2016.0, 2021.0];
        let y = [0.3; 4];
        let m = fit_mlp(&t, &y, &MlpConfig::with_seed(5)).unwrap();
        assert!(m.final_loss < 1e-6, "{}", m.final_loss);
        assert!(m.final_loss <= m.first_loss);
    }

    #[test]
    fn same_seed_bit_identical() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let y = [0.1, 0.5, 0.2, 0.4];
        let a = fit_mlp(&t, &y, &MlpConfig::with_seed(11)).unwrap();
        let b = fit_mlp(&t, &y, &MlpConfig::with_seed(11)).unwrap();
        let bits = |m: &MlpModel| m.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = fit_mlp(&t, &y, &MlpConfig::with_seed(12)).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = MlpConfig {
            step: 1e300,
            ..MlpConfig::with_seed(1)
        };
        let err = fit_mlp(&[0.0, 1.0, 2.0], &[1e300, -1e300, 1e300], &cfg).unwrap_err();
        assert!(matches!(err, LearnError::NonFiniteLoss { .. }));
    }
}
