//! Underdetermination scores for parameterized quantum circuits.
//!
//! Train circuit (or MLP) ensembles, take the Hessian of the training loss
//! at each optimum, and score new inputs by how much of their prediction
//! gradient falls into the flat part of the loss landscape.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod qsim;
pub mod rng;
pub mod training;
pub mod underdet;

pub use autodiff::{grad_prediction, hessian_loss, hessian_prediction, GradientVector, HessianMatrix};
pub use data::{Dataset, ImageRecord, LabeledPoint, Normalization};
pub use error::{Error, Result};
pub use experiments::{
    run_experiment, Experiment, ExperimentConfig, ModelFamily, RunReport, Table, ThresholdFit,
};
pub use linalg::{eigh_symmetric, pearson, spearman, Matrix, PcaModel, Spectrum, SymMatrix};
pub use qsim::{build_template, CircuitTemplate, GateOp, ShotConfig, Statevector, TemplateKind};
pub use rng::{rng_from_seed, split_seed, SimRng};
pub use training::mlp::{MlpConfig, MlpModel};
pub use training::{DifferentiableModel, Ensemble, EnsemblePrediction, TrainConfig, TrainedModel};
pub use underdet::{extrapolation_score, flat_projector, FlatProjector, ScoreReport, ScoreRow};
