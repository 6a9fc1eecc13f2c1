//! Statevector simulation of the circuit families used by the experiments.
//!
//! Qubit `q` of an `n`-qubit register is stored in bit `n - 1 - q` of the
//! basis index, so `|10⟩` means qubit 0 is set. Every circuit starts from
//! `|+⟩^⊗n` and the model prediction is `⟨Z⟩` on qubit 0.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::SimRng;

/// Qubit whose `Z` expectation is the model output.
pub const READOUT_QUBIT: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Where a rotation gate takes its angle from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AngleSource {
    Trainable(usize),
    Feature(usize),
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GateOp {
    /// `exp(−i φ P / 2)` for Pauli `P` on `target`.
    Rotation {
        axis: Axis,
        target: usize,
        angle: AngleSource,
    },
    Cnot {
        control: usize,
        target: usize,
    },
    Hadamard {
        target: usize,
    },
}

impl GateOp {
    pub fn rx(target: usize, angle: AngleSource) -> Self {
        GateOp::Rotation {
            axis: Axis::X,
            target,
            angle,
        }
    }

    pub fn ry(target: usize, angle: AngleSource) -> Self {
        GateOp::Rotation {
            axis: Axis::Y,
            target,
            angle,
        }
    }

    pub fn rz(target: usize, angle: AngleSource) -> Self {
        GateOp::Rotation {
            axis: Axis::Z,
            target,
            angle,
        }
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        GateOp::Cnot { control, target }
    }

    pub fn angle_source(&self) -> Option<AngleSource> {
        match self {
            GateOp::Rotation { angle, .. } => Some(*angle),
            _ => None,
        }
    }

    fn max_qubit(&self) -> usize {
        match *self {
            GateOp::Rotation { target, .. } | GateOp::Hadamard { target } => target,
            GateOp::Cnot { control, target } => control.max(target),
        }
    }
}

/// Named circuit families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    Iris,
    Sine1d,
    Fmnist,
}

impl TemplateKind {
    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::Iris => "iris",
            TemplateKind::Sine1d => "sine1d",
            TemplateKind::Fmnist => "fmnist",
        }
    }
}

impl FromStr for TemplateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iris" => Ok(TemplateKind::Iris),
            "sine1d" => Ok(TemplateKind::Sine1d),
            "fmnist" => Ok(TemplateKind::Fmnist),
            other => Err(Error::UnknownTemplate(other.to_string())),
        }
    }
}

/// A parameterized circuit `ŷ(x, θ)`: gate list plus parameter/feature counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitTemplate {
    pub name: String,
    pub n_qubits: usize,
    pub gates: Vec<GateOp>,
    pub n_trainable: usize,
    pub n_features: usize,
}

impl CircuitTemplate {
    /// Validates qubit indices and that every trainable and feature slot is used.
    pub fn new(
        name: impl Into<String>,
        n_qubits: usize,
        gates: Vec<GateOp>,
        n_trainable: usize,
        n_features: usize,
    ) -> Result<Self> {
        if n_qubits == 0 || n_qubits > 20 {
            return Err(Error::InvalidTemplate(format!(
                "unsupported qubit count {n_qubits}"
            )));
        }
        let mut seen_trainable = vec![false; n_trainable];
        let mut seen_feature = vec![false; n_features];
        for (pos, gate) in gates.iter().enumerate() {
            if gate.max_qubit() >= n_qubits {
                return Err(Error::InvalidTemplate(format!(
                    "gate {pos} addresses qubit {} of {n_qubits}",
                    gate.max_qubit()
                )));
            }
            if let GateOp::Cnot { control, target } = *gate {
                if control == target {
                    return Err(Error::InvalidTemplate(format!(
                        "gate {pos}: CNOT control equals target"
                    )));
                }
            }
            match gate.angle_source() {
                Some(AngleSource::Trainable(i)) => match seen_trainable.get_mut(i) {
                    Some(flag) => *flag = true,
                    None => {
                        return Err(Error::InvalidTemplate(format!(
                            "gate {pos}: trainable index {i} >= {n_trainable}"
                        )))
                    }
                },
                Some(AngleSource::Feature(i)) => match seen_feature.get_mut(i) {
                    Some(flag) => *flag = true,
                    None => {
                        return Err(Error::InvalidTemplate(format!(
                            "gate {pos}: feature index {i} >= {n_features}"
                        )))
                    }
                },
                _ => {}
            }
        }
        if let Some(i) = seen_trainable.iter().position(|s| !s) {
            return Err(Error::InvalidTemplate(format!("trainable {i} unused")));
        }
        if let Some(i) = seen_feature.iter().position(|s| !s) {
            return Err(Error::InvalidTemplate(format!("feature {i} unused")));
        }
        Ok(Self {
            name: name.into(),
            n_qubits,
            gates,
            n_trainable,
            n_features,
        })
    }

    /// Gate positions fed by each trainable parameter.
    pub fn occurrences(&self) -> Vec<Vec<usize>> {
        let mut occ = vec![Vec::new(); self.n_trainable];
        for (pos, gate) in self.gates.iter().enumerate() {
            if let Some(AngleSource::Trainable(i)) = gate.angle_source() {
                occ[i].push(pos);
            }
        }
        occ
    }

    /// Resolves the angle of every gate (0 for non-rotations).
    pub fn resolve_angles(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        check_len("trainable parameters", self.n_trainable, theta.len())?;
        check_len("features", self.n_features, x.len())?;
        Ok(self
            .gates
            .iter()
            .map(|g| match g.angle_source() {
                Some(AngleSource::Trainable(i)) => theta[i],
                Some(AngleSource::Feature(i)) => x[i],
                Some(AngleSource::Constant(c)) => c,
                None => 0.0,
            })
            .collect())
    }
}

/// Returns one of the fixed experiment architectures.
pub fn build_template(kind: TemplateKind) -> CircuitTemplate {
    use AngleSource::{Feature, Trainable};
    let mut gates = Vec::new();
    let mut next = 0usize;
    let mut param = || {
        let p = Trainable(next);
        next += 1;
        p
    };
    let (n_qubits, n_features) = match kind {
        TemplateKind::Iris => {
            gates.extend([
                GateOp::rz(0, Feature(0)),
                GateOp::rz(1, Feature(1)),
                GateOp::rx(0, Feature(2)),
                GateOp::rx(1, Feature(3)),
            ]);
            for _ in 0..3 {
                gates.push(GateOp::ry(0, param()));
                gates.push(GateOp::ry(1, param()));
                gates.push(GateOp::cnot(0, 1));
                gates.push(GateOp::rx(0, param()));
                gates.push(GateOp::rx(1, param()));
            }
            (2, 4)
        }
        TemplateKind::Sine1d => {
            for _ in 0..3 {
                gates.push(GateOp::rz(0, Feature(0)));
                gates.push(GateOp::rz(1, Feature(0)));
                gates.push(GateOp::rx(0, param()));
                gates.push(GateOp::rx(1, param()));
                gates.push(GateOp::cnot(0, 1));
                gates.push(GateOp::ry(0, param()));
                gates.push(GateOp::ry(1, param()));
            }
            gates.push(GateOp::ry(0, param()));
            gates.push(GateOp::ry(1, param()));
            (2, 1)
        }
        TemplateKind::Fmnist => {
            let n = 7;
            for _ in 0..5 {
                for q in 0..n {
                    gates.push(GateOp::rz(q, Feature(q)));
                }
                for q in 0..n {
                    gates.push(GateOp::rx(q, param()));
                }
                for q in 0..n {
                    gates.push(GateOp::cnot(q, (q + 1) % n));
                }
                for q in 0..n {
                    gates.push(GateOp::ry(q, param()));
                }
            }
            (n, n)
        }
    };
    let n_trainable = next;
    CircuitTemplate::new(kind.name(), n_qubits, gates, n_trainable, n_features)
        .expect("built-in templates are valid")
}

/// Looks a template up by its experiment tag.
pub fn build_template_named(name: &str) -> Result<CircuitTemplate> {
    Ok(build_template(name.parse()?))
}

/// Pure state of `n` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl Statevector {
    /// `|0…0⟩`.
    pub fn zero(n_qubits: usize) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Self {
            n_qubits,
            amplitudes,
        }
    }

    /// `|+⟩^⊗n`.
    pub fn plus(n_qubits: usize) -> Self {
        let dim = 1usize << n_qubits;
        let a = 1.0 / (dim as f64).sqrt();
        Self {
            n_qubits,
            amplitudes: vec![Complex64::new(a, 0.0); dim],
        }
    }

    /// Computational basis state; `bits[q]` is the value of qubit `q`.
    pub fn basis(bits: &[bool]) -> Self {
        let n = bits.len();
        let mut idx = 0;
        for (q, &b) in bits.iter().enumerate() {
            if b {
                idx |= 1 << (n - 1 - q);
            }
        }
        let mut s = Self::zero(n);
        s.amplitudes[0] = Complex64::new(0.0, 0.0);
        s.amplitudes[idx] = Complex64::new(1.0, 0.0);
        s
    }

    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let dim = amplitudes.len();
        if dim == 0 || !dim.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "statevector length {dim} is not a power of two"
            )));
        }
        Ok(Self {
            n_qubits: dim.trailing_zeros() as usize,
            amplitudes,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Probability of reading `1` on `qubit`.
    pub fn probability_one(&self, qubit: usize) -> Result<f64> {
        self.check_qubit(qubit)?;
        let mask = self.mask(qubit);
        Ok(self
            .amplitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    #[inline]
    fn mask(&self, qubit: usize) -> usize {
        1 << (self.n_qubits - 1 - qubit)
    }

    fn check_qubit(&self, qubit: usize) -> Result<()> {
        if qubit < self.n_qubits {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                what: "qubit",
                index: qubit,
                limit: self.n_qubits,
            })
        }
    }

    fn apply_single(&mut self, qubit: usize, u: [[Complex64; 2]; 2]) {
        let mask = self.mask(qubit);
        for i in 0..self.amplitudes.len() {
            if i & mask != 0 {
                continue;
            }
            let j = i | mask;
            let a = self.amplitudes[i];
            let b = self.amplitudes[j];
            self.amplitudes[i] = u[0][0] * a + u[0][1] * b;
            self.amplitudes[j] = u[1][0] * a + u[1][1] * b;
        }
    }

    fn apply_phase(&mut self, qubit: usize, zero: Complex64, one: Complex64) {
        let mask = self.mask(qubit);
        for (i, a) in self.amplitudes.iter_mut().enumerate() {
            *a *= if i & mask == 0 { zero } else { one };
        }
    }

    fn apply_cnot(&mut self, control: usize, target: usize) {
        let cm = self.mask(control);
        let tm = self.mask(target);
        for i in 0..self.amplitudes.len() {
            if i & cm != 0 && i & tm == 0 {
                self.amplitudes.swap(i, i | tm);
            }
        }
    }

    /// Applies `gate` in place with rotation angle `angle` (ignored for CNOT/H).
    pub(crate) fn apply_unchecked(&mut self, gate: &GateOp, angle: f64) {
        match *gate {
            GateOp::Rotation { axis, target, .. } => {
                let (s, c) = (angle / 2.0).sin_cos();
                match axis {
                    Axis::X => {
                        let cc = Complex64::new(c, 0.0);
                        let ms = Complex64::new(0.0, -s);
                        self.apply_single(target, [[cc, ms], [ms, cc]]);
                    }
                    Axis::Y => {
                        let cc = Complex64::new(c, 0.0);
                        let sp = Complex64::new(s, 0.0);
                        self.apply_single(target, [[cc, -sp], [sp, cc]]);
                    }
                    Axis::Z => {
                        self.apply_phase(target, Complex64::new(c, -s), Complex64::new(c, s));
                    }
                }
            }
            GateOp::Cnot { control, target } => self.apply_cnot(control, target),
            GateOp::Hadamard { target } => {
                let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
                self.apply_single(target, [[h, h], [h, -h]]);
            }
        }
    }

    fn check_gate(&self, gate: &GateOp) -> Result<()> {
        self.check_qubit(gate.max_qubit())?;
        if let GateOp::Cnot { control, target } = *gate {
            if control == target {
                return Err(Error::InvalidArgument("CNOT control equals target".into()));
            }
        }
        Ok(())
    }
}

/// Returns `gate(angle) |state⟩`.
pub fn apply_gate(state: &Statevector, gate: &GateOp, angle: f64) -> Result<Statevector> {
    state.check_gate(gate)?;
    let mut out = state.clone();
    out.apply_unchecked(gate, angle);
    Ok(out)
}

/// Applies gates `from..` of `template` to `state` using pre-resolved angles.
pub(crate) fn run_from(
    template: &CircuitTemplate,
    angles: &[f64],
    state: &mut Statevector,
    from: usize,
) {
    for (gate, &angle) in template.gates[from..].iter().zip(&angles[from..]) {
        state.apply_unchecked(gate, angle);
    }
}

/// Prepares `|+⟩^⊗n` and applies the template's gates in order.
pub fn run_circuit(template: &CircuitTemplate, theta: &[f64], x: &[f64]) -> Result<Statevector> {
    let angles = template.resolve_angles(theta, x)?;
    let mut state = Statevector::plus(template.n_qubits);
    run_from(template, &angles, &mut state, 0);
    Ok(state)
}

/// Exact `⟨Z_qubit⟩`.
pub fn expectation_z(state: &Statevector, qubit: usize) -> Result<f64> {
    state.check_qubit(qubit)?;
    Ok(z_expectation_unchecked(state, qubit))
}

#[inline]
pub(crate) fn z_expectation_unchecked(state: &Statevector, qubit: usize) -> f64 {
    let mask = state.mask(qubit);
    let mut acc = 0.0;
    for (i, a) in state.amplitudes.iter().enumerate() {
        let p = a.norm_sqr();
        if i & mask == 0 {
            acc += p;
        } else {
            acc -= p;
        }
    }
    acc
}

/// Exact expectation or a finite number of measurement shots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShotConfig {
    #[default]
    Analytic,
    Shots(u32),
}

impl ShotConfig {
    pub fn shots(n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("shot count must be >= 1".into()));
        }
        Ok(ShotConfig::Shots(n))
    }

    pub fn is_analytic(self) -> bool {
        matches!(self, ShotConfig::Analytic)
    }

    /// Turns an exact `⟨Z⟩` into the value a measurement would report.
    pub fn measure(self, exact: f64, rng: &mut SimRng) -> f64 {
        match self {
            ShotConfig::Analytic => exact,
            ShotConfig::Shots(b) => {
                let p_plus = ((1.0 + exact) / 2.0).clamp(0.0, 1.0);
                let n_plus = Binomial::new(u64::from(b), p_plus)
                    .expect("probability clamped to [0, 1]")
                    .sample(rng);
                (2.0 * n_plus as f64 - f64::from(b)) / f64::from(b)
            }
        }
    }
}

impl fmt::Display for ShotConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShotConfig::Analytic => f.write_str("analytic"),
            ShotConfig::Shots(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for ShotConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("analytic") || s.eq_ignore_ascii_case("exact") {
            return Ok(ShotConfig::Analytic);
        }
        let n: u32 = s
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad shot count {s:?}")))?;
        ShotConfig::shots(n)
    }
}

impl Serialize for ShotConfig {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ShotConfig::Analytic => serializer.serialize_str("analytic"),
            ShotConfig::Shots(n) => serializer.serialize_u32(*n),
        }
    }
}

impl<'de> Deserialize<'de> for ShotConfig {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u32),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Count(n) => ShotConfig::shots(n).map_err(serde::de::Error::custom),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// `⟨Z⟩` estimated from `cfg` shots (exact when analytic).
pub fn sample_expectation_z(
    state: &Statevector,
    qubit: usize,
    cfg: ShotConfig,
    rng: &mut SimRng,
) -> Result<f64> {
    let exact = expectation_z(state, qubit)?;
    Ok(cfg.measure(exact, rng))
}

/// Model prediction `ŷ(x, θ)`.
pub fn predict(
    template: &CircuitTemplate,
    theta: &[f64],
    x: &[f64],
    cfg: ShotConfig,
    rng: &mut SimRng,
) -> Result<f64> {
    let state = run_circuit(template, theta, x)?;
    Ok(cfg.measure(z_expectation_unchecked(&state, READOUT_QUBIT), rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    type Dense = Vec<Vec<Complex64>>;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn kron(a: &Dense, b: &Dense) -> Dense {
        let (n, m) = (a.len(), b.len());
        let mut out = vec![vec![c(0.0, 0.0); n * m]; n * m];
        for i in 0..n {
            for j in 0..n {
                for k in 0..m {
                    for l in 0..m {
                        out[i * m + k][j * m + l] = a[i][j] * b[k][l];
                    }
                }
            }
        }
        out
    }

    fn matmul(a: &Dense, b: &Dense) -> Dense {
        let n = a.len();
        let mut out = vec![vec![c(0.0, 0.0); n]; n];
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    out[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        out
    }

    fn eye(n: usize) -> Dense {
        (0..n)
            .map(|i| (0..n).map(|j| c(if i == j { 1.0 } else { 0.0 }, 0.0)).collect())
            .collect()
    }

    fn single(g: &GateOp, angle: f64) -> Dense {
        let (s, co) = (angle / 2.0).sin_cos();
        match g {
            GateOp::Rotation { axis: Axis::X, .. } => {
                vec![vec![c(co, 0.0), c(0.0, -s)], vec![c(0.0, -s), c(co, 0.0)]]
            }
            GateOp::Rotation { axis: Axis::Y, .. } => {
                vec![vec![c(co, 0.0), c(-s, 0.0)], vec![c(s, 0.0), c(co, 0.0)]]
            }
            GateOp::Rotation { axis: Axis::Z, .. } => {
                vec![vec![c(co, -s), c(0.0, 0.0)], vec![c(0.0, 0.0), c(co, s)]]
            }
            GateOp::Hadamard { .. } => {
                let h = FRAC_1_SQRT_2;
                vec![vec![c(h, 0.0), c(h, 0.0)], vec![c(h, 0.0), c(-h, 0.0)]]
            }
            GateOp::Cnot { .. } => unreachable!(),
        }
    }

    /// Full `2^n × 2^n` unitary of one gate, built by Kronecker products
    /// (qubit 0 is the leftmost factor).
    fn dense_gate(n: usize, g: &GateOp, angle: f64) -> Dense {
        match *g {
            GateOp::Cnot { control, target } => {
                let dim = 1 << n;
                let mut u = vec![vec![c(0.0, 0.0); dim]; dim];
                for (col, row) in (0..dim).map(|i| {
                    let cbit = (i >> (n - 1 - control)) & 1;
                    let j = if cbit == 1 { i ^ (1 << (n - 1 - target)) } else { i };
                    (i, j)
                }) {
                    u[row][col] = c(1.0, 0.0);
                }
                u
            }
            GateOp::Rotation { target, .. } | GateOp::Hadamard { target } => {
                let mut u = vec![vec![c(1.0, 0.0)]];
                for q in 0..n {
                    let f = if q == target { single(g, angle) } else { eye(2) };
                    u = kron(&u, &f);
                }
                u
            }
        }
    }

    fn dense_expectation(template: &CircuitTemplate, theta: &[f64], x: &[f64]) -> f64 {
        let n = template.n_qubits;
        let dim = 1 << n;
        let angles = template.resolve_angles(theta, x).unwrap();
        let mut u = eye(dim);
        for (g, &a) in template.gates.iter().zip(&angles) {
            u = matmul(&dense_gate(n, g, a), &u);
        }
        let amp0 = 1.0 / (dim as f64).sqrt();
        let psi: Vec<Complex64> = (0..dim)
            .map(|i| (0..dim).map(|j| u[i][j] * amp0).sum())
            .collect();
        psi.iter()
            .enumerate()
            .map(|(i, a)| {
                let sign = if (i >> (n - 1)) & 1 == 0 { 1.0 } else { -1.0 };
                sign * a.norm_sqr()
            })
            .sum()
    }

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn rx_pi_flips_zero() {
        let s = apply_gate(&Statevector::zero(1), &GateOp::rx(0, AngleSource::Constant(0.0)), PI)
            .unwrap();
        assert!(close(s.amplitudes()[0], c(0.0, 0.0)));
        assert!(close(s.amplitudes()[1], c(0.0, -1.0)));
        assert!((expectation_z(&s, 0).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cnot_on_ten() {
        let s = Statevector::basis(&[true, false]);
        let out = apply_gate(&s, &GateOp::cnot(0, 1), 0.0).unwrap();
        assert_eq!(out, Statevector::basis(&[true, true]));
    }

    #[test]
    fn rz_preserves_probabilities() {
        let s = Statevector::zero(1);
        let out = apply_gate(&s, &GateOp::rz(0, AngleSource::Constant(0.0)), 1.234).unwrap();
        assert!((out.probability_one(0).unwrap()).abs() < 1e-15);
        assert!((out.norm_sqr() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gate_index_errors() {
        let s = Statevector::zero(2);
        assert!(matches!(
            apply_gate(&s, &GateOp::rx(2, AngleSource::Constant(0.0)), 0.1),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(apply_gate(&s, &GateOp::cnot(1, 1), 0.0).is_err());
        assert!(expectation_z(&s, 5).is_err());
    }

    #[test]
    fn expectation_values() {
        assert_eq!(expectation_z(&Statevector::zero(1), 0).unwrap(), 1.0);
        assert!(expectation_z(&Statevector::plus(1), 0).unwrap().abs() < 1e-15);
        for phi in [0.0, 0.4, 1.9, -2.5] {
            let s = apply_gate(&Statevector::zero(1), &GateOp::rx(0, AngleSource::Constant(0.0)), phi)
                .unwrap();
            assert!((expectation_z(&s, 0).unwrap() - phi.cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_circuit_is_plus() {
        let t = CircuitTemplate::new("empty", 1, vec![], 0, 0).unwrap();
        let s = run_circuit(&t, &[], &[]).unwrap();
        assert_eq!(s, Statevector::plus(1));
        assert!(expectation_z(&s, 0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn trainable_rx_on_plus_keeps_zero() {
        let t = CircuitTemplate::new(
            "rx",
            1,
            vec![GateOp::rx(0, AngleSource::Trainable(0))],
            1,
            0,
        )
        .unwrap();
        for theta in [0.0, 0.7, 2.0, 5.5] {
            let s = run_circuit(&t, &[theta], &[]).unwrap();
            assert!(expectation_z(&s, 0).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn sine_template_matches_dense_oracle_at_origin() {
        let t = build_template(TemplateKind::Sine1d);
        let theta = vec![0.0; t.n_trainable];
        let s = run_circuit(&t, &theta, &[0.0]).unwrap();
        let ours = expectation_z(&s, 0).unwrap();
        assert!((ours - dense_expectation(&t, &theta, &[0.0])).abs() < 1e-12);
    }

    #[test]
    fn template_shapes() {
        let iris = build_template(TemplateKind::Iris);
        assert_eq!((iris.n_qubits, iris.n_trainable, iris.n_features), (2, 12, 4));
        let sine = build_template(TemplateKind::Sine1d);
        assert_eq!((sine.n_qubits, sine.n_trainable, sine.n_features), (2, 14, 1));
        let fm = build_template(TemplateKind::Fmnist);
        assert_eq!((fm.n_qubits, fm.n_trainable, fm.n_features), (7, 70, 7));
        let rz_layers = fm
            .gates
            .iter()
            .filter(|g| matches!(g, GateOp::Rotation { axis: Axis::Z, target: 0, .. }))
            .count();
        assert_eq!(rz_layers, 5);
        assert!(matches!(
            build_template_named("mnist"),
            Err(Error::UnknownTemplate(_))
        ));
    }

    #[test]
    fn template_validation() {
        let unused = CircuitTemplate::new(
            "t",
            1,
            vec![GateOp::rx(0, AngleSource::Trainable(1))],
            2,
            0,
        );
        assert!(matches!(unused, Err(Error::InvalidTemplate(_))));
        let oob = CircuitTemplate::new("t", 1, vec![GateOp::cnot(0, 1)], 0, 0);
        assert!(oob.is_err());
        let t = build_template(TemplateKind::Sine1d);
        assert!(run_circuit(&t, &[0.0; 3], &[0.0]).is_err());
        assert!(run_circuit(&t, &[0.0; 14], &[]).is_err());
    }

    #[test]
    fn shot_sampling() {
        let mut rng = rng_from_seed(1);
        let zero = Statevector::zero(1);
        for b in [1, 7, 100] {
            let v = sample_expectation_z(&zero, 0, ShotConfig::Shots(b), &mut rng).unwrap();
            assert_eq!(v, 1.0);
        }
        let plus = Statevector::plus(1);
        for _ in 0..200 {
            let v = sample_expectation_z(&plus, 0, ShotConfig::Shots(4), &mut rng).unwrap();
            assert!([-1.0, -0.5, 0.0, 0.5, 1.0].contains(&v), "{v}");
        }
        let exact = expectation_z(&plus, 0).unwrap();
        assert_eq!(
            sample_expectation_z(&plus, 0, ShotConfig::Analytic, &mut rng).unwrap(),
            exact
        );
    }

    #[test]
    fn shot_estimator_is_unbiased() {
        // Each estimate has std 1/√B; the mean of R repeats has std 1/√(B·R).
        let mut rng = rng_from_seed(2);
        let plus = Statevector::plus(1);
        let (b, reps) = (1024u32, 10_000);
        let mean = (0..reps)
            .map(|_| sample_expectation_z(&plus, 0, ShotConfig::Shots(b), &mut rng).unwrap())
            .sum::<f64>()
            / reps as f64;
        let se = 1.0 / (f64::from(b) * reps as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}, 3se {}", 3.0 * se);
    }

    #[test]
    fn shot_config_parsing() {
        assert_eq!("analytic".parse::<ShotConfig>().unwrap(), ShotConfig::Analytic);
        assert_eq!("32".parse::<ShotConfig>().unwrap(), ShotConfig::Shots(32));
        assert!("0".parse::<ShotConfig>().is_err());
        let json = serde_json::to_string(&vec![ShotConfig::Shots(8), ShotConfig::Analytic]).unwrap();
        assert_eq!(json, r#"[8,"analytic"]"#);
        let back: Vec<ShotConfig> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![ShotConfig::Shots(8), ShotConfig::Analytic]);
    }

    fn random_small_template(n: usize, gates: &[(u8, usize, usize)]) -> CircuitTemplate {
        let mut ops = Vec::new();
        let mut m = 0;
        for &(kind, a, b) in gates {
            let (a, b) = (a % n, b % n);
            match kind % 5 {
                0 => ops.push(GateOp::rx(a, AngleSource::Trainable(m))),
                1 => ops.push(GateOp::ry(a, AngleSource::Trainable(m))),
                2 => ops.push(GateOp::rz(a, AngleSource::Trainable(m))),
                3 if n > 1 && a != b => {
                    ops.push(GateOp::cnot(a, b));
                    continue;
                }
                _ => {
                    ops.push(GateOp::Hadamard { target: a });
                    continue;
                }
            }
            m += 1;
        }
        CircuitTemplate::new("random", n, ops, m, 0).unwrap()
    }

    proptest! {
        #[test]
        fn matches_dense_unitary_oracle(
            n in 1usize..4,
            gates in proptest::collection::vec((0u8..5, 0usize..3, 0usize..3), 0..25),
            seed in 0u64..1000,
        ) {
            let t = random_small_template(n, &gates);
            let mut rng = rng_from_seed(seed);
            let theta: Vec<f64> = (0..t.n_trainable).map(|_| rand::Rng::random_range(&mut rng, -PI..PI)).collect();
            let s = run_circuit(&t, &theta, &[]).unwrap();
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-10);
            let ours = expectation_z(&s, 0).unwrap();
            prop_assert!((ours - dense_expectation(&t, &theta, &[])).abs() < 1e-12);
        }

        #[test]
        fn predictions_bounded(seed in 0u64..200, which in 0usize..3) {
            let kind = [TemplateKind::Iris, TemplateKind::Sine1d, TemplateKind::Fmnist][which];
            let t = build_template(kind);
            let mut rng = rng_from_seed(seed);
            let theta: Vec<f64> = (0..t.n_trainable).map(|_| rand::Rng::random_range(&mut rng, 0.0..6.3)).collect();
            let x: Vec<f64> = (0..t.n_features).map(|_| rand::Rng::random_range(&mut rng, -4.0..4.0)).collect();
            let s = run_circuit(&t, &theta, &x).unwrap();
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-10);
            let y = predict(&t, &theta, &x, ShotConfig::Analytic, &mut rng).unwrap();
            prop_assert!((-1.0..=1.0).contains(&y));
        }
    }
}
