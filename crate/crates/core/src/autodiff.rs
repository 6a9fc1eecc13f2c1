//! Parameter-shift derivatives of circuit predictions and of the MSE training
//! loss, plus central finite differences used as an independent check.
//!
//! Every rotation in the templates is `exp(−i φ P / 2)`, so first derivatives
//! follow from `±π/2` shifts and second derivatives from double shifts. When a
//! trainable parameter feeds several gates, each occurrence is shifted
//! separately and the contributions summed.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::linalg::{Matrix, SymMatrix};
use crate::qsim::{
    run_from, z_expectation_unchecked, CircuitTemplate, ShotConfig, Statevector, READOUT_QUBIT,
};
use crate::rng::{rng_from_seed, split_seed, SimRng};

/// `∇_θ ŷ(x, θ)`.
pub type GradientVector = Vec<f64>;

/// Second derivatives of the training loss.
pub type HessianMatrix = SymMatrix;

/// Central-difference step for gradients.
pub const FD_GRADIENT_STEP: f64 = 1e-5;
/// Central-difference step for Hessians.
pub const FD_HESSIAN_STEP: f64 = 1e-3;

/// A circuit evaluated at fixed `(θ, x)` with every intermediate state cached,
/// so shifted evaluations restart from the state just before the shifted gate.
struct ShiftEvaluator<'a> {
    template: &'a CircuitTemplate,
    angles: Vec<f64>,
    /// `prefix[p]` is the state before gate `p`; the last entry is the output.
    prefix: Vec<Statevector>,
    /// Gate positions of trainable rotations, in circuit order.
    positions: Vec<usize>,
    /// Parameter index of each entry of `positions`.
    param_of: Vec<usize>,
    cfg: ShotConfig,
}

impl<'a> ShiftEvaluator<'a> {
    fn new(template: &'a CircuitTemplate, theta: &[f64], x: &[f64], cfg: ShotConfig) -> Result<Self> {
        let angles = template.resolve_angles(theta, x)?;
        let mut prefix = Vec::with_capacity(template.gates.len() + 1);
        let mut state = Statevector::plus(template.n_qubits);
        for (gate, &angle) in template.gates.iter().zip(&angles) {
            prefix.push(state.clone());
            state.apply_unchecked(gate, angle);
        }
        prefix.push(state);

        let mut positions = Vec::new();
        let mut param_of = Vec::new();
        for (pos, gate) in template.gates.iter().enumerate() {
            if let Some(crate::qsim::AngleSource::Trainable(i)) = gate.angle_source() {
                positions.push(pos);
                param_of.push(i);
            }
        }
        Ok(Self {
            template,
            angles,
            prefix,
            positions,
            param_of,
            cfg,
        })
    }

    fn n_params(&self) -> usize {
        self.template.n_trainable
    }

    fn measure(&self, state: &Statevector, rng: &mut SimRng) -> f64 {
        self.cfg
            .measure(z_expectation_unchecked(state, READOUT_QUBIT), rng)
    }

    fn value(&self, rng: &mut SimRng) -> f64 {
        self.measure(self.prefix.last().expect("non-empty"), rng)
    }

    /// Runs the circuit with gate `pos` shifted by `delta` and returns the
    /// state right after that gate.
    fn shifted_at(&self, pos: usize, delta: f64) -> Statevector {
        let mut s = self.prefix[pos].clone();
        s.apply_unchecked(&self.template.gates[pos], self.angles[pos] + delta);
        s
    }

    fn finish(&self, mut state: Statevector, from: usize, rng: &mut SimRng) -> f64 {
        run_from(self.template, &self.angles, &mut state, from);
        self.measure(&state, rng)
    }

    fn single_shift(&self, pos: usize, delta: f64, rng: &mut SimRng) -> f64 {
        let s = self.shifted_at(pos, delta);
        self.finish(s, pos + 1, rng)
    }

    fn gradient(&self, rng: &mut SimRng) -> GradientVector {
        let mut grad = vec![0.0; self.n_params()];
        for (&pos, &param) in self.positions.iter().zip(&self.param_of) {
            let plus = self.single_shift(pos, FRAC_PI_2, rng);
            let minus = self.single_shift(pos, -FRAC_PI_2, rng);
            grad[param] += 0.5 * (plus - minus);
        }
        grad
    }

    /// Hessian of the prediction with respect to the trainable parameters.
    /// `f0` is the (possibly sampled) unshifted value used on the diagonal.
    fn hessian(&self, f0: f64, rng: &mut SimRng) -> Matrix {
        let t = self.positions.len();
        // Second derivatives with respect to individual gate angles.
        let mut gate_hess = Matrix::zeros(t, t);
        for a in 0..t {
            let p = self.positions[a];
            let plus = self.single_shift(p, PI, rng);
            let minus = self.single_shift(p, -PI, rng);
            gate_hess.set(a, a, 0.25 * (plus - 2.0 * f0 + minus));

            // f(s_p, s_q) for the four sign pairs, walking forward from gate p.
            let mut pair = vec![[0.0f64; 4]; t];
            for (si, sp) in [FRAC_PI_2, -FRAC_PI_2].into_iter().enumerate() {
                let mut cur = self.shifted_at(p, sp);
                let mut next_b = a + 1;
                for g in (p + 1)..self.template.gates.len() {
                    if next_b < t && self.positions[next_b] == g {
                        for (ti, sq) in [FRAC_PI_2, -FRAC_PI_2].into_iter().enumerate() {
                            let mut s = cur.clone();
                            s.apply_unchecked(&self.template.gates[g], self.angles[g] + sq);
                            pair[next_b][si * 2 + ti] = self.finish(s, g + 1, rng);
                        }
                        next_b += 1;
                    }
                    cur.apply_unchecked(&self.template.gates[g], self.angles[g]);
                }
            }
            for (b, f) in pair.iter().enumerate().skip(a + 1) {
                let d = 0.25 * (f[0] - f[1] - f[2] + f[3]);
                gate_hess.set(a, b, d);
                gate_hess.set(b, a, d);
            }
        }

        let m = self.n_params();
        let mut hess = Matrix::zeros(m, m);
        for a in 0..t {
            for b in 0..t {
                let (i, j) = (self.param_of[a], self.param_of[b]);
                hess.set(i, j, hess.get(i, j) + gate_hess.get(a, b));
            }
        }
        hess
    }
}

/// Parameter-shift gradient of the prediction.
pub fn grad_prediction(
    template: &CircuitTemplate,
    theta: &[f64],
    x: &[f64],
    cfg: ShotConfig,
    rng: &mut SimRng,
) -> Result<GradientVector> {
    Ok(ShiftEvaluator::new(template, theta, x, cfg)?.gradient(rng))
}

/// Prediction and its parameter-shift gradient from one cached forward pass.
pub fn value_and_grad(
    template: &CircuitTemplate,
    theta: &[f64],
    x: &[f64],
    cfg: ShotConfig,
    rng: &mut SimRng,
) -> Result<(f64, GradientVector)> {
    let ev = ShiftEvaluator::new(template, theta, x, cfg)?;
    let value = ev.value(rng);
    Ok((value, ev.gradient(rng)))
}

/// Double parameter-shift Hessian of the prediction.
pub fn hessian_prediction(
    template: &CircuitTemplate,
    theta: &[f64],
    x: &[f64],
    cfg: ShotConfig,
    rng: &mut SimRng,
) -> Result<SymMatrix> {
    let ev = ShiftEvaluator::new(template, theta, x, cfg)?;
    let f0 = ev.value(rng);
    SymMatrix::new(ev.hessian(f0, rng))
}

/// Prediction, gradient and Hessian at one input.
#[derive(Debug, Clone)]
pub struct PredictionDerivatives {
    pub value: f64,
    pub gradient: GradientVector,
    pub hessian: Matrix,
}

pub fn prediction_derivatives(
    template: &CircuitTemplate,
    theta: &[f64],
    x: &[f64],
    cfg: ShotConfig,
    rng: &mut SimRng,
) -> Result<PredictionDerivatives> {
    let ev = ShiftEvaluator::new(template, theta, x, cfg)?;
    let value = ev.value(rng);
    let gradient = ev.gradient(rng);
    let hessian = ev.hessian(value, rng);
    Ok(PredictionDerivatives {
        value,
        gradient,
        hessian,
    })
}

/// Hessian of `L(θ) = (1/N) Σ (ŷ_k − y_k)²` at `theta`:
/// `(2/N) Σ [g_k g_kᵀ + (ŷ_k − y_k) ∇²ŷ_k]`, symmetrized.
///
/// Per-point work runs in parallel; each point draws its shot noise from its
/// own stream split off `rng`, and the sum is taken in point order.
pub fn hessian_loss(
    template: &CircuitTemplate,
    theta: &[f64],
    data: &Dataset,
    cfg: ShotConfig,
    rng: &mut SimRng,
) -> Result<HessianMatrix> {
    if data.is_empty() {
        return Err(Error::Empty("hessian_loss"));
    }
    check_len("trainable parameters", template.n_trainable, theta.len())?;
    let base: u64 = rng.random();
    let per_point: Vec<PredictionDerivatives> = data
        .points
        .par_iter()
        .enumerate()
        .map(|(k, point)| {
            let mut local = rng_from_seed(split_seed(base, k as u64));
            prediction_derivatives(template, theta, &point.x, cfg, &mut local)
        })
        .collect::<Result<_>>()?;

    let m = template.n_trainable;
    let mut acc = Matrix::zeros(m, m);
    for (d, point) in per_point.iter().zip(&data.points) {
        let residual = d.value - point.y;
        for i in 0..m {
            for j in 0..m {
                let v = d.gradient[i] * d.gradient[j] + residual * d.hessian.get(i, j);
                acc.set(i, j, acc.get(i, j) + v);
            }
        }
    }
    let scale = 2.0 / data.len() as f64;
    let hess = Matrix::from_fn(m, m, |i, j| acc.get(i, j) * scale);
    if !hess.is_finite() {
        return Err(Error::NonFinite("loss Hessian"));
    }
    SymMatrix::new(hess)
}

/// Central-difference gradient of `f` at `theta`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, theta: &[f64], step: f64) -> GradientVector {
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            probe[i] = theta[i] + step;
            let plus = f(&probe);
            probe[i] = theta[i] - step;
            let minus = f(&probe);
            probe[i] = theta[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Central-difference Hessian of `f` at `theta`.
pub fn fd_hessian(f: impl Fn(&[f64]) -> f64, theta: &[f64], step: f64) -> SymMatrix {
    assert!(step > 0.0, "finite-difference step must be positive");
    let n = theta.len();
    let f0 = f(theta);
    let mut probe = theta.to_vec();
    let mut eval = |shifts: &[(usize, f64)]| {
        for &(i, d) in shifts {
            probe[i] += d;
        }
        let v = f(&probe);
        probe.copy_from_slice(theta);
        v
    };
    let mut h = Matrix::zeros(n, n);
    for i in 0..n {
        let plus = eval(&[(i, step)]);
        let minus = eval(&[(i, -step)]);
        h.set(i, i, (plus - 2.0 * f0 + minus) / (step * step));
        for j in (i + 1)..n {
            let pp = eval(&[(i, step), (j, step)]);
            let pm = eval(&[(i, step), (j, -step)]);
            let mp = eval(&[(i, -step), (j, step)]);
            let mm = eval(&[(i, -step), (j, -step)]);
            let v = (pp - pm - mp + mm) / (4.0 * step * step);
            h.set(i, j, v);
            h.set(j, i, v);
        }
    }
    SymMatrix::new(h).expect("square")
}
