//! Extrapolation scores: project the prediction gradient onto the span of the
//! flattest Hessian eigenvectors and take its norm.
//!
//! With the loss Hessian at `θ*` decomposed as `U Λ Uᵀ` (eigenvalues ordered by
//! decreasing magnitude), `U_m` keeps the `M − m` eigenvectors with the
//! smallest `|λ|`, and the score of an input `x` is `‖U_mᵀ ∇_θ ŷ(x, θ*)‖₂`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, eigh_symmetric, norm2, Matrix, Spectrum};
use crate::qsim::ShotConfig;
use crate::rng::{rng_from_seed, split_seed, standard_normal, SimRng};
use crate::training::{DifferentiableModel, EnsemblePrediction};

/// Basis of the low-curvature subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatProjector {
    pub m: usize,
    /// `M × (M − m)`, columns ordered by ascending `|λ|`.
    pub basis: Matrix,
}

impl FlatProjector {
    pub fn dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn n_flat(&self) -> usize {
        self.basis.cols()
    }
}

/// Keeps the eigenvectors of the `M − m` smallest-magnitude eigenvalues.
pub fn flat_projector(spectrum: &Spectrum, m: usize) -> Result<FlatProjector> {
    let dim = spectrum.dim();
    if m > dim {
        return Err(Error::InvalidArgument(format!(
            "cut-off m = {m} exceeds parameter count {dim}"
        )));
    }
    let kept: Vec<usize> = (m..dim).rev().collect();
    let basis = Matrix::from_fn(dim, kept.len(), |i, j| spectrum.eigenvectors.get(i, kept[j]));
    Ok(FlatProjector { m, basis })
}

/// `‖U_mᵀ g‖₂`.
pub fn extrapolation_score(proj: &FlatProjector, g: &[f64]) -> Result<f64> {
    check_len("extrapolation_score gradient", proj.dim(), g.len())?;
    if proj.m == 0 {
        // U_0 is orthogonal, so the projection keeps the full norm.
        return Ok(norm2(g));
    }
    // Accumulate from the flattest direction outward so that scores are
    // monotone in m bit-for-bit.
    let mut sum = 0.0;
    for j in 0..proj.n_flat() {
        let mut c = 0.0;
        for (i, gi) in g.iter().enumerate() {
            c += proj.basis.get(i, j) * gi;
        }
        sum += c * c;
    }
    Ok(sum.sqrt())
}

/// Arithmetic mean of member scores at `x`, each member using its own projector.
pub fn mean_extrapolation_score<M: DifferentiableModel>(
    members: &[M],
    projectors: &[FlatProjector],
    x: &[f64],
    shots: ShotConfig,
    rng: &mut SimRng,
) -> Result<f64> {
    check_len("projectors per member", members.len(), projectors.len())?;
    if members.is_empty() {
        return Err(Error::Empty("mean_extrapolation_score"));
    }
    let mut total = 0.0;
    for (model, proj) in members.iter().zip(projectors) {
        total += extrapolation_score(proj, &model.gradient(x, shots, rng)?)?;
    }
    Ok(total / members.len() as f64)
}

/// Draws `k` parameter vectors `θ* + ε·u`, where `u` is a unit vector along a
/// standard-normal combination of the flat eigenvectors.
pub fn local_ensemble_sample(
    theta_star: &[f64],
    spectrum: &Spectrum,
    m: usize,
    epsilon: f64,
    k: usize,
    rng: &mut SimRng,
) -> Result<Vec<Vec<f64>>> {
    check_len("local ensemble parameters", spectrum.dim(), theta_star.len())?;
    if m >= spectrum.dim() {
        return Err(Error::InvalidArgument(
            "no flat directions to sample (m = M)".into(),
        ));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad radius {epsilon}")));
    }
    let proj = flat_projector(spectrum, m)?;
    let mut samples = Vec::with_capacity(k);
    for _ in 0..k {
        let coeffs: Vec<f64> = (0..proj.n_flat()).map(|_| standard_normal(rng)).collect();
        let mut dir = proj.basis.matvec(&coeffs)?;
        let len = norm2(&dir);
        dir.iter_mut().for_each(|d| *d *= epsilon / len);
        samples.push(theta_star.iter().zip(&dir).map(|(t, d)| t + d).collect());
    }
    Ok(samples)
}

/// Eigenvalue magnitudes (nonincreasing) with a suggested cut-off at the
/// largest log-gap between consecutive magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub magnitudes: Vec<f64>,
    /// Diagnostic only; never applied automatically.
    pub suggested_m: Option<usize>,
}

pub fn spectrum_report(spectrum: &Spectrum) -> SpectrumReport {
    let magnitudes: Vec<f64> = spectrum.eigenvalues.iter().map(|l| l.abs()).collect();
    let floor = f64::MIN_POSITIVE;
    let suggested_m = (1..magnitudes.len())
        .map(|i| (i, (magnitudes[i - 1].max(floor) / magnitudes[i].max(floor)).ln()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    SpectrumReport {
        magnitudes,
        suggested_m,
    }
}

/// Per-test-point scores of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub x: Vec<f64>,
    pub member_scores: Vec<f64>,
    pub mean_score: f64,
    pub prediction: EnsemblePrediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub m: usize,
    pub spectra: Vec<SpectrumReport>,
    pub rows: Vec<ScoreRow>,
}

impl ScoreReport {
    pub fn mean_scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean_score).collect()
    }

    pub fn stds(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.prediction.std).collect()
    }

    pub fn mean_predictions(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.prediction.mean).collect()
    }
}

/// Per-member projectors, built from each member's own loss Hessian.
pub fn member_projectors<M: DifferentiableModel>(
    members: &[M],
    train: &Dataset,
    m: usize,
    shots: ShotConfig,
    seed: u64,
) -> Result<(Vec<Spectrum>, Vec<FlatProjector>)> {
    let mut spectra = Vec::with_capacity(members.len());
    let mut projectors = Vec::with_capacity(members.len());
    for (k, model) in members.iter().enumerate() {
        if m > model.n_params() {
            return Err(Error::InvalidArgument(format!(
                "cut-off m = {m} exceeds parameter count {}",
                model.n_params()
            )));
        }
        let mut rng = rng_from_seed(split_seed(seed, k as u64));
        let h = model.loss_hessian(train, shots, &mut rng)?;
        let spectrum = eigh_symmetric(&h)?;
        projectors.push(flat_projector(&spectrum, m)?);
        spectra.push(spectrum);
    }
    Ok((spectra, projectors))
}

/// Scores every test point with every member. Shot noise for test point `i`
/// and member `k` comes from its own split stream of `seed`, so points may be
/// evaluated in parallel without changing the result.
pub fn score_points<M: DifferentiableModel>(
    members: &[M],
    projectors: &[FlatProjector],
    test: &Dataset,
    shots: ShotConfig,
    seed: u64,
) -> Result<Vec<ScoreRow>> {
    check_len("projectors per member", members.len(), projectors.len())?;
    test.points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let point_seed = split_seed(seed, i as u64);
            let mut preds = Vec::with_capacity(members.len());
            let mut scores = Vec::with_capacity(members.len());
            for (k, (model, proj)) in members.iter().zip(projectors).enumerate() {
                let mut rng = rng_from_seed(split_seed(point_seed, k as u64));
                preds.push(model.predict(&p.x, shots, &mut rng)?);
                scores.push(extrapolation_score(proj, &model.gradient(&p.x, shots, &mut rng)?)?);
            }
            let mean_score = scores.iter().sum::<f64>() / scores.len() as f64;
            Ok(ScoreRow {
                x: p.x.clone(),
                member_scores: scores,
                mean_score,
                prediction: EnsemblePrediction::from_members(preds)?,
            })
        })
        .collect()
}

/// Full pipeline: Hessians on `train`, projectors at cut-off `m`, scores on `test`.
pub fn score_ensemble<M: DifferentiableModel>(
    members: &[M],
    train: &Dataset,
    test: &Dataset,
    m: usize,
    shots: ShotConfig,
    seed: u64,
) -> Result<ScoreReport> {
    if members.is_empty() {
        return Err(Error::Empty("score_ensemble"));
    }
    let (spectra, projectors) = member_projectors(members, train, m, shots, split_seed(seed, 0))?;
    let rows = score_points(members, &projectors, test, shots, split_seed(seed, 1))?;
    Ok(ScoreReport {
        m,
        spectra: spectra.iter().map(spectrum_report).collect(),
        rows,
    })
}

/// Population std of predictions at `x` across a set of parameter vectors.
pub fn parameter_set_std<M: DifferentiableModel>(
    model: &M,
    params: &[Vec<f64>],
    x: &[f64],
) -> Result<f64> {
    let preds = params
        .iter()
        .map(|p| model.predict_with(p, x))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsemblePrediction::from_members(preds)?.std)
}

/// Squared length of the component of `g` along eigenvector `k`.
pub fn eigen_component(spectrum: &Spectrum, k: usize, g: &[f64]) -> f64 {
    dot(&spectrum.eigenvector(k), g).powi(2)
}
