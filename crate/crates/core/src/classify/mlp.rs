//! 16-4-1 sigmoid network trained by full-batch gradient descent on squared error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training_set, Prediction};
use crate::error::{Error, Result};
use crate::features::StandardizationTransform;
use crate::signal::Label;

pub const INPUTS: usize = 16;
pub const HIDDEN: usize = 4;
/// Length of the flattened parameter vector.
pub const NUM_WEIGHTS: usize = HIDDEN * INPUTS + HIDDEN + HIDDEN + 1;

const INIT_RANGE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            learning_rate: 0.5,
            epochs: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMlp")]
pub struct MlpModel {
    /// `HIDDEN` rows of `INPUTS` weights.
    pub hidden_weights: Vec<Vec<f64>>,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
    pub seed: u64,
    pub transform: StandardizationTransform,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMlp {
    hidden_weights: Vec<Vec<f64>>,
    hidden_bias: Vec<f64>,
    output_weights: Vec<f64>,
    output_bias: f64,
    seed: u64,
    transform: StandardizationTransform,
}

impl TryFrom<RawMlp> for MlpModel {
    type Error = Error;

    fn try_from(r: RawMlp) -> Result<Self> {
        let m = MlpModel {
            hidden_weights: r.hidden_weights,
            hidden_bias: r.hidden_bias,
            output_weights: r.output_weights,
            output_bias: r.output_bias,
            seed: r.seed,
            transform: r.transform,
        };
        m.check_shapes()?;
        Ok(m)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_dim(len: usize) -> Result<()> {
    if len != INPUTS {
        return Err(Error::invalid(format!(
            "the network takes {INPUTS} features, got {len}"
        )));
    }
    Ok(())
}

impl MlpModel {
    /// Weights drawn uniformly from `[-0.5, 0.5]`.
    pub fn initial(seed: u64, transform: StandardizationTransform) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat: Vec<f64> = (0..NUM_WEIGHTS)
            .map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE))
            .collect();
        Self::from_flat(&flat, seed, transform)
    }

    pub fn from_flat(w: &[f64], seed: u64, transform: StandardizationTransform) -> Self {
        assert_eq!(w.len(), NUM_WEIGHTS);
        let hidden_weights = (0..HIDDEN)
            .map(|h| w[h * INPUTS..(h + 1) * INPUTS].to_vec())
            .collect();
        let off = HIDDEN * INPUTS;
        MlpModel {
            hidden_weights,
            hidden_bias: w[off..off + HIDDEN].to_vec(),
            output_weights: w[off + HIDDEN..off + 2 * HIDDEN].to_vec(),
            output_bias: w[NUM_WEIGHTS - 1],
            seed,
            transform,
        }
    }

    /// Layout: hidden weights row by row, hidden biases, output weights, output bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut w: Vec<f64> = self.hidden_weights.iter().flatten().copied().collect();
        w.extend(&self.hidden_bias);
        w.extend(&self.output_weights);
        w.push(self.output_bias);
        w
    }

    fn check_shapes(&self) -> Result<()> {
        let ok = self.hidden_weights.len() == HIDDEN
            && self.hidden_weights.iter().all(|r| r.len() == INPUTS)
            && self.hidden_bias.len() == HIDDEN
            && self.output_weights.len() == HIDDEN
            && self.transform.dim() == INPUTS;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "network weights must have shape {INPUTS}-{HIDDEN}-1"
            )))
        }
    }

    /// Output for an already standardized input.
    fn forward(&self, z: &[f64]) -> f64 {
        let w = self.to_flat();
        forward_flat(&w, z).1
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        check_dim(x.len())?;
        Ok(self.forward(&self.transform.apply(x)?))
    }
}

fn forward_flat(w: &[f64], z: &[f64]) -> ([f64; HIDDEN], f64) {
    let off = HIDDEN * INPUTS;
    let mut hidden = [0.0; HIDDEN];
    for (h, out) in hidden.iter_mut().enumerate() {
        let row = &w[h * INPUTS..(h + 1) * INPUTS];
        let a: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + w[off + h];
        *out = sigmoid(a);
    }
    let o = hidden
        .iter()
        .zip(&w[off + HIDDEN..off + 2 * HIDDEN])
        .map(|(h, v)| h * v)
        .sum::<f64>()
        + w[NUM_WEIGHTS - 1];
    (hidden, sigmoid(o))
}

/// Mean squared error over the set and its gradient with respect to the
/// flattened weights. Targets are 1 for abnormal and 0 for normal.
pub fn loss_and_gradient(w: &[f64], z: &[Vec<f64>], targets: &[f64]) -> (f64, Vec<f64>) {
    let off = HIDDEN * INPUTS;
    let n = z.len() as f64;
    let mut grad = vec![0.0; NUM_WEIGHTS];
    let mut loss = 0.0;
    for (x, t) in z.iter().zip(targets) {
        let (hidden, out) = forward_flat(w, x);
        let err = out - t;
        loss += err * err;
        let d_out = 2.0 * err * out * (1.0 - out) / n;
        grad[NUM_WEIGHTS - 1] += d_out;
        for h in 0..HIDDEN {
            grad[off + HIDDEN + h] += d_out * hidden[h];
            let d_hidden = d_out * w[off + HIDDEN + h] * hidden[h] * (1.0 - hidden[h]);
            grad[off + h] += d_hidden;
            for (g, xi) in grad[h * INPUTS..(h + 1) * INPUTS].iter_mut().zip(x) {
                *g += d_hidden * xi;
            }
        }
    }
    (loss / n, grad)
}

pub fn mlp_train(x: &[Vec<f64>], y: &[Label], params: &MlpParams) -> Result<MlpModel> {
    check_training_set(x, y)?;
    check_dim(x[0].len())?;
    if !(params.learning_rate > 0.0) || !params.learning_rate.is_finite() {
        return Err(Error::invalid(format!(
            "learning rate must be positive, got {}",
            params.learning_rate
        )));
    }
    let transform = StandardizationTransform::fit(x)?;
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| transform.apply(r))
        .collect::<Result<_>>()?;
    let targets: Vec<f64> = y
        .iter()
        .map(|l| if l.is_abnormal() { 1.0 } else { 0.0 })
        .collect();
    let init = MlpModel::initial(params.seed, transform);
    let mut w = init.to_flat();
    for _ in 0..params.epochs {
        let (_, g) = loss_and_gradient(&w, &z, &targets);
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= params.learning_rate * gi;
        }
    }
    Ok(MlpModel::from_flat(&w, params.seed, init.transform))
}

/// Abnormal only when the score is strictly above 0.5.
pub fn mlp_predict(model: &MlpModel, x: &[f64]) -> Result<Prediction> {
    let score = model.score(x)?;
    Ok(Prediction {
        label: if score > 0.5 {
            Label::Abnormal
        } else {
            Label::Normal
        },
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn identity() -> StandardizationTransform {
        StandardizationTransform {
            means: vec![0.0; INPUTS],
            scales: vec![1.0; INPUTS],
        }
    }

    fn random_set(n: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
        let z = (0..n)
            .map(|_| (0..INPUTS).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let t = (0..n).map(|i| (i % 2) as f64).collect();
        (z, t)
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let eps = 1e-5;
        for _ in 0..20 {
            let w: Vec<f64> = (0..NUM_WEIGHTS).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (z, t) = random_set(8, &mut rng);
            let (_, g) = loss_and_gradient(&w, &z, &t);
            let numeric: Vec<f64> = (0..NUM_WEIGHTS)
                .map(|k| {
                    let mut up = w.clone();
                    let mut down = w.clone();
                    up[k] += eps;
                    down[k] -= eps;
                    (loss_and_gradient(&up, &z, &t).0 - loss_and_gradient(&down, &z, &t).0)
                        / (2.0 * eps)
                })
                .collect();
            let diff: f64 = g
                .iter()
                .zip(&numeric)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            assert!(diff / norm < 1e-4, "relative error {}", diff / norm);
        }
    }

    fn toy(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Label>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let shift = if i % 2 == 0 { 1.5 } else { -1.5 };
            x.push(
                (0..INPUTS)
                    .map(|k| if k < 3 { shift } else { 0.0 } + noise.sample(&mut rng))
                    .collect(),
            );
            y.push(if i % 2 == 0 {
                Label::Abnormal
            } else {
                Label::Normal
            });
        }
        (x, y)
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let (x, y) = toy(20, 1);
        let params = MlpParams {
            epochs: 0,
            seed: 5,
            ..MlpParams::default()
        };
        let m = mlp_train(&x, &y, &params).unwrap();
        let init = MlpModel::initial(5, StandardizationTransform::fit(&x).unwrap());
        assert_eq!(m, init);
        assert!(m.to_flat().iter().all(|w| w.abs() <= INIT_RANGE));
    }

    #[test]
    fn learns_separable_toy_set() {
        let (x, y) = toy(200, 2);
        let m = mlp_train(&x, &y, &MlpParams::default()).unwrap();
        let hits = x
            .iter()
            .zip(&y)
            .filter(|(xi, yi)| mlp_predict(&m, xi).unwrap().label == **yi)
            .count();
        assert!(hits as f64 / 200.0 >= 0.95);
        assert_eq!(m, mlp_train(&x, &y, &MlpParams::default()).unwrap());
    }

    #[test]
    fn tie_predicts_normal() {
        let m = MlpModel::from_flat(&[0.0; NUM_WEIGHTS], 0, identity());
        let p = mlp_predict(&m, &[0.3; INPUTS]).unwrap();
        assert_eq!(p.score, 0.5);
        assert_eq!(p.label, Label::Normal);
    }

    #[test]
    fn output_bias_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w: Vec<f64> = (0..NUM_WEIGHTS).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..INPUTS).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut last = f64::NEG_INFINITY;
        for b in -20..=20 {
            let mut wb = w.clone();
            wb[NUM_WEIGHTS - 1] = b as f64 * 0.5;
            let s = MlpModel::from_flat(&wb, 0, identity()).score(&x).unwrap();
            assert!(s >= last);
            last = s;
        }
    }

    #[test]
    fn dimension_checks() {
        let (x, y) = toy(10, 3);
        let short: Vec<Vec<f64>> = x.iter().map(|r| r[..8].to_vec()).collect();
        assert!(mlp_train(&short, &y, &MlpParams::default()).is_err());
        let m = MlpModel::initial(0, identity());
        assert!(mlp_predict(&m, &[1.0; 8]).is_err());
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<MlpModel>(&json).unwrap(), m);
        let bad = json.replacen(
            "\"output_bias\"",
            "\"output_weights\":[1.0],\"x\":0,\"output_bias\"",
            1,
        );
        assert!(serde_json::from_str::<MlpModel>(&bad).is_err());
    }
}
