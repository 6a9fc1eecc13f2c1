//! Fully connected tanh network used as the classical baseline.
//!
//! Parameters are flattened layer by layer, each layer storing its weight
//! matrix (row-major, `out × in`) followed by its biases.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adam_step, AdamState, DifferentiableModel, Ensemble, TrainReport};
use crate::autodiff::GradientVector;
use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::linalg::{Matrix, SymMatrix};
use crate::qsim::ShotConfig;
use crate::rng::{rng_from_seed, shuffle, split_seed, SimRng};

/// Step of the central differences of the analytic loss gradient that give
/// the loss Hessian.
pub const MLP_HESSIAN_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Layer widths including input and output, e.g. `[1, 16, 16, 1]`.
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            widths: vec![1, 16, 16, 1],
            epochs: 2000,
            learning_rate: 1e-2,
            batch_size: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub widths: Vec<usize>,
    pub params: Vec<f64>,
    pub report: TrainReport,
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpModel {
    /// Network with the given widths and flattened parameters.
    pub fn from_params(widths: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) || *widths.last().unwrap() != 1 {
            return Err(Error::InvalidArgument(format!(
                "MLP widths {widths:?} must have >= 2 positive layers and a scalar output"
            )));
        }
        check_len("MLP parameters", param_count(&widths), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("MLP parameters"));
        }
        Ok(Self {
            widths,
            params,
            report: TrainReport {
                final_train_loss: 0.0,
                test_accuracy: None,
                loss_history: Vec::new(),
            },
        })
    }

    /// Uniform `[−1/√fan_in, 1/√fan_in]` initialization of weights and biases.
    pub fn init(widths: Vec<usize>, rng: &mut SimRng) -> Result<Self> {
        let mut params = Vec::with_capacity(param_count(&widths));
        for w in widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(rng.random_range(-bound..=bound));
            }
        }
        Self::from_params(widths, params)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Layer activations: `acts[0]` is the input, the last entry the output.
    fn forward(&self, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let mut offset = 0;
        let n_layers = self.widths.len() - 1;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &params[offset..offset + fan_in * fan_out];
            let biases = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let input = acts.last().unwrap();
            let out: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let z = biases[o]
                        + weights[o * fan_in..(o + 1) * fan_in]
                            .iter()
                            .zip(input)
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    if l + 1 < n_layers {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    fn output_with(&self, params: &[f64], x: &[f64]) -> f64 {
        self.forward(params, x).last().unwrap()[0]
    }

    /// Backpropagated `∂ŷ/∂params` at `params`.
    fn grad_with(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let acts = self.forward(params, x);
        let mut grad = vec![0.0; params.len()];
        let n_layers = self.widths.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.widths.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        // delta = ∂ŷ/∂z for the current layer's pre-activations.
        let mut delta = vec![1.0];
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let off = offsets[l];
            let input = &acts[l];
            for o in 0..fan_out {
                for i in 0..fan_in {
                    grad[off + o * fan_in + i] = delta[o] * input[i];
                }
                grad[off + fan_in * fan_out + o] = delta[o];
            }
            if l == 0 {
                break;
            }
            let weights = &params[off..off + fan_in * fan_out];
            delta = (0..fan_in)
                .map(|i| {
                    let back: f64 = (0..fan_out).map(|o| weights[o * fan_in + i] * delta[o]).sum();
                    // acts[l] = tanh(z) for hidden layers.
                    back * (1.0 - input[i] * input[i])
                })
                .collect();
        }
        grad
    }

    pub fn output(&self, x: &[f64]) -> f64 {
        self.output_with(&self.params, x)
    }

    /// Mean-squared loss and its gradient over `data` at `params`.
    fn loss_and_grad(&self, params: &[f64], data: &Dataset, indices: &[usize]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        let scale = 2.0 / indices.len() as f64;
        for &k in indices {
            let p = &data.points[k];
            let r = self.output_with(params, &p.x) - p.y;
            loss += r * r;
            for (acc, g) in grad.iter_mut().zip(self.grad_with(params, &p.x)) {
                *acc += scale * r * g;
            }
        }
        (loss / indices.len() as f64, grad)
    }

    pub fn loss(&self, data: &Dataset) -> f64 {
        let idx: Vec<usize> = (0..data.len()).collect();
        self.loss_and_grad(&self.params, data, &idx).0
    }
}

/// `∂ŷ/∂(all parameters)` in the flattened layer order.
pub fn mlp_grad_prediction(model: &MlpModel, x: &[f64]) -> Result<GradientVector> {
    check_len("MLP input", model.widths[0], x.len())?;
    Ok(model.grad_with(&model.params, x))
}

/// Trains an MLP by Adam on the MSE loss (full batch unless configured).
pub fn train_mlp(data: &Dataset, cfg: &MlpConfig) -> Result<MlpModel> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.epochs == 0 || cfg.batch_size == Some(0) {
        return Err(Error::InvalidArgument(
            "epochs and batch size must be >= 1".into(),
        ));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let mut model = MlpModel::init(cfg.widths.clone(), &mut rng)?;
    check_len("MLP input", model.widths[0], data.feature_dim)?;
    let mut adam = AdamState::new(model.n_params());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = cfg.batch_size.unwrap_or(data.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if batch < data.len() {
            shuffle(&mut order, &mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let (loss, grad) = model.loss_and_grad(&model.params, data, chunk);
            epoch_loss += loss * chunk.len() as f64;
            adam_step(&mut model.params, &grad, &mut adam, cfg.learning_rate)?;
        }
        let epoch_loss = epoch_loss / data.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: epoch_loss,
            });
        }
        history.push(epoch_loss);
    }
    model.report = TrainReport {
        final_train_loss: model.loss(data),
        test_accuracy: None,
        loss_history: history,
    };
    Ok(model)
}

pub fn train_mlp_ensemble(data: &Dataset, cfg: &MlpConfig, n_members: usize) -> Result<Ensemble<MlpModel>> {
    if n_members < 2 {
        return Err(Error::InvalidArgument(format!(
            "an ensemble needs at least 2 members, got {n_members}"
        )));
    }
    let seeds: Vec<u64> = (0..n_members).map(|k| split_seed(cfg.seed, k as u64)).collect();
    let members = seeds
        .par_iter()
        .enumerate()
        .map(|(k, &seed)| {
            train_mlp(data, &MlpConfig { seed, ..cfg.clone() }).map_err(|e| Error::Member {
                member: k,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { members, seeds })
}

impl DifferentiableModel for MlpModel {
    fn n_params(&self) -> usize {
        self.params.len()
    }

    fn predict(&self, x: &[f64], _shots: ShotConfig, _rng: &mut SimRng) -> Result<f64> {
        check_len("MLP input", self.widths[0], x.len())?;
        Ok(self.output(x))
    }

    fn gradient(&self, x: &[f64], _shots: ShotConfig, _rng: &mut SimRng) -> Result<GradientVector> {
        mlp_grad_prediction(self, x)
    }

    /// Central differences (step [`MLP_HESSIAN_STEP`]) of the backpropagated
    /// loss gradient, symmetrized.
    fn loss_hessian(&self, data: &Dataset, _shots: ShotConfig, _rng: &mut SimRng) -> Result<SymMatrix> {
        if data.is_empty() {
            return Err(Error::Empty("loss Hessian"));
        }
        let n = self.n_params();
        let idx: Vec<usize> = (0..data.len()).collect();
        let columns: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut probe = self.params.clone();
                probe[i] += MLP_HESSIAN_STEP;
                let (_, gp) = self.loss_and_grad(&probe, data, &idx);
                probe[i] = self.params[i] - MLP_HESSIAN_STEP;
                let (_, gm) = self.loss_and_grad(&probe, data, &idx);
                gp.iter()
                    .zip(&gm)
                    .map(|(a, b)| (a - b) / (2.0 * MLP_HESSIAN_STEP))
                    .collect()
            })
            .collect();
        let h = Matrix::from_fn(n, n, |r, c| columns[c][r]);
        if !h.is_finite() {
            return Err(Error::NonFinite("MLP loss Hessian"));
        }
        SymMatrix::new(h)
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn predict_with(&self, params: &[f64], x: &[f64]) -> Result<f64> {
        check_len("MLP parameters", self.params.len(), params.len())?;
        Ok(self.output_with(params, x))
    }
}
