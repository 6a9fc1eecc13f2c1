//! MSE training of circuit models with Adam, seeded ensembles, and the
//! [`DifferentiableModel`] view shared by circuits and the MLP baseline.

pub mod mlp;

use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_prediction, hessian_loss, value_and_grad, GradientVector};
use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::linalg::SymMatrix;
use crate::qsim::{predict, CircuitTemplate, ShotConfig};
use crate::rng::{rng_from_seed, shuffle, split_seed, SimRng};

/// Anything the underdetermination pipeline can score: a prediction, its
/// parameter gradient, and the Hessian of the training loss.
pub trait DifferentiableModel: Sync {
    fn n_params(&self) -> usize;
    fn predict(&self, x: &[f64], shots: ShotConfig, rng: &mut SimRng) -> Result<f64>;
    fn gradient(&self, x: &[f64], shots: ShotConfig, rng: &mut SimRng) -> Result<GradientVector>;
    fn loss_hessian(&self, data: &Dataset, shots: ShotConfig, rng: &mut SimRng) -> Result<SymMatrix>;
    fn params(&self) -> &[f64];
    /// The same model evaluated at other parameters.
    fn predict_with(&self, params: &[f64], x: &[f64]) -> Result<f64>;
}

/// `(1/N) Σ (p − t)²`.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_len("mse_loss", predictions.len(), targets.len())?;
    if predictions.is_empty() {
        return Err(Error::Empty("mse_loss"));
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / predictions.len() as f64)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    check_len("adam parameters", params.len(), grad.len())?;
    check_len("adam state", params.len(), state.m.len())?;
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub shots: ShotConfig,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch size must be >= 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Exact (shot-free) MSE over the training set at the final parameters.
    pub final_train_loss: f64,
    pub test_accuracy: Option<f64>,
    /// Mean squared residual seen during each epoch.
    pub loss_history: Vec<f64>,
}

/// A circuit template with optimized parameters `θ*`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub template: CircuitTemplate,
    pub theta: Vec<f64>,
    pub report: TrainReport,
}

impl TrainedModel {
    /// Exact-expectation predictions over `data`.
    pub fn predictions(&self, data: &Dataset) -> Result<Vec<f64>> {
        let mut rng = rng_from_seed(0);
        data.points
            .iter()
            .map(|p| predict(&self.template, &self.theta, &p.x, ShotConfig::Analytic, &mut rng))
            .collect()
    }

    /// Fraction of points where `sign(ŷ)` matches the ±1 label.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        let preds = self.predictions(data)?;
        Ok(sign_accuracy(&preds, &data.targets()))
    }

    pub fn loss(&self, data: &Dataset) -> Result<f64> {
        mse_loss(&self.predictions(data)?, &data.targets())
    }
}

/// Classification readout: `ŷ ≥ 0` predicts `+1`.
pub fn sign_accuracy(predictions: &[f64], labels: &[f64]) -> f64 {
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, y)| (**p >= 0.0) == (**y > 0.0))
        .count();
    hits as f64 / predictions.len() as f64
}

impl DifferentiableModel for TrainedModel {
    fn n_params(&self) -> usize {
        self.theta.len()
    }

    fn predict(&self, x: &[f64], shots: ShotConfig, rng: &mut SimRng) -> Result<f64> {
        predict(&self.template, &self.theta, x, shots, rng)
    }

    fn gradient(&self, x: &[f64], shots: ShotConfig, rng: &mut SimRng) -> Result<GradientVector> {
        grad_prediction(&self.template, &self.theta, x, shots, rng)
    }

    fn loss_hessian(&self, data: &Dataset, shots: ShotConfig, rng: &mut SimRng) -> Result<SymMatrix> {
        hessian_loss(&self.template, &self.theta, data, shots, rng)
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn predict_with(&self, params: &[f64], x: &[f64]) -> Result<f64> {
        predict(&self.template, params, x, ShotConfig::Analytic, &mut rng_from_seed(0))
    }
}

/// Trains `template` on `data` by mini-batch Adam on the MSE loss.
///
/// Parameters start uniform in `[0, 2π)`; the same seeded stream shuffles the
/// data every epoch and drives shot sampling, so the result is a pure
/// function of `(template, data, cfg)`.
pub fn train(template: &CircuitTemplate, data: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    check_len("training features", template.n_features, data.feature_dim)?;
    let mut rng = rng_from_seed(cfg.seed);
    let m = template.n_trainable;
    let mut theta: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..TAU)).collect();
    let mut adam = AdamState::new(m);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        shuffle(&mut order, &mut rng);
        let mut epoch_sq = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; m];
            let scale = 2.0 / batch.len() as f64;
            for &k in batch {
                let point = &data.points[k];
                let (y_hat, g) = value_and_grad(template, &theta, &point.x, cfg.shots, &mut rng)?;
                let residual = y_hat - point.y;
                epoch_sq += residual * residual;
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += scale * residual * gi;
                }
            }
            adam_step(&mut theta, &grad, &mut adam, cfg.learning_rate)?;
        }
        let epoch_loss = epoch_sq / data.len() as f64;
        if !epoch_loss.is_finite() || theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                loss: epoch_loss,
            });
        }
        history.push(epoch_loss);
    }

    let mut model = TrainedModel {
        template: template.clone(),
        theta,
        report: TrainReport {
            final_train_loss: 0.0,
            test_accuracy: None,
            loss_history: history,
        },
    };
    model.report.final_train_loss = model.loss(data)?;
    Ok(model)
}

/// Independently seeded members of one model family.
#[derive(Debug, Clone)]
pub struct Ensemble<M = TrainedModel> {
    pub members: Vec<M>,
    pub seeds: Vec<u64>,
}

impl<M> Ensemble<M> {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Seed of ensemble member `k`.
pub fn member_seed(base_seed: u64, k: usize) -> u64 {
    split_seed(base_seed, k as u64)
}

/// Trains `n_members` models in parallel, member `k` seeded with
/// [`member_seed`]`(cfg.seed, k)`.
pub fn train_ensemble(
    template: &CircuitTemplate,
    data: &Dataset,
    cfg: &TrainConfig,
    n_members: usize,
) -> Result<Ensemble> {
    if n_members < 2 {
        return Err(Error::InvalidArgument(format!(
            "an ensemble needs at least 2 members, got {n_members}"
        )));
    }
    let seeds: Vec<u64> = (0..n_members).map(|k| member_seed(cfg.seed, k)).collect();
    let members = seeds
        .par_iter()
        .enumerate()
        .map(|(k, &seed)| {
            train(template, data, &TrainConfig { seed, ..*cfg }).map_err(|e| Error::Member {
                member: k,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { members, seeds })
}

/// Mean and population standard deviation of member predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub mean: f64,
    pub std: f64,
    pub per_member: Vec<f64>,
}

impl EnsemblePrediction {
    pub fn from_members(per_member: Vec<f64>) -> Result<Self> {
        if per_member.is_empty() {
            return Err(Error::Empty("ensemble prediction"));
        }
        let n = per_member.len() as f64;
        let mean = per_member.iter().sum::<f64>() / n;
        let var = per_member.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt(),
            per_member,
        })
    }
}

pub fn ensemble_predict<M: DifferentiableModel>(
    ensemble: &Ensemble<M>,
    x: &[f64],
    shots: ShotConfig,
    rng: &mut SimRng,
) -> Result<EnsemblePrediction> {
    let preds = ensemble
        .members
        .iter()
        .map(|m| m.predict(x, shots, rng))
        .collect::<Result<Vec<_>>>()?;
    EnsemblePrediction::from_members(preds)
}
