//! Dressed quantum circuit layer.
//!
//! Per sample: Hadamard on every qubit, one RZ angle embedding per qubit,
//! then `q_depth` variational layers. Layer `k` (counted from 1) is
//!
//! * odd `k`: full CNOT entangler, then RX(w) followed by RY(w) on each qubit
//!   with one shared weight per qubit;
//! * even `k`: shifted entangler (CRZ(π/2) chain plus SWAPs), then RY(w).
//!
//! The layer reads out `<Z>` on every qubit. Inputs are squashed with
//! `tanh(x)·π/2` before the embedding.

use std::f64::consts::{FRAC_PI_2, PI};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::qsim::{
    dagger, h_matrix, param_shift_grad, rotation_derivative, rotation_matrix, rz_matrix,
    GateKind, GateOp, Mat2, ParamGate, ParametricProgram, StateVector, MAX_QUBITS,
};
use crate::{seed, Error, Result};

pub const MAX_DEPTH: usize = 8;

/// Fixed CRZ angle of the shifted entangler.
pub const SHIFTED_CRZ_ANGLE: f64 = FRAC_PI_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitShape {
    pub n_qubits: usize,
    pub q_depth: usize,
}

impl Default for CircuitShape {
    fn default() -> Self {
        Self {
            n_qubits: 4,
            q_depth: 2,
        }
    }
}

impl CircuitShape {
    pub fn new(n_qubits: usize, q_depth: usize) -> Result<Self> {
        let s = Self { n_qubits, q_depth };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_QUBITS).contains(&self.n_qubits) {
            return Err(Error::InvalidArgument(format!(
                "n_qubits must be in 1..={MAX_QUBITS}, got {}",
                self.n_qubits
            )));
        }
        if !(1..=MAX_DEPTH).contains(&self.q_depth) {
            return Err(Error::InvalidArgument(format!(
                "q_depth must be in 1..={MAX_DEPTH}, got {}",
                self.q_depth
            )));
        }
        Ok(())
    }

    /// Trainable weights: `q_depth × n_qubits`.
    pub fn n_weights(&self) -> usize {
        self.n_qubits * self.q_depth
    }
}

/// How [`DressedCircuit::backward`] differentiates the circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMethod {
    /// Adjoint (reverse) sweep through the statevector.
    #[default]
    Adjoint,
    /// Parameter-shift rule, two circuit evaluations per rotation occurrence.
    ParameterShift,
}

/// Row-major batch of embedding angles, each in `[-π/2, π/2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleBatch {
    width: usize,
    angles: Vec<f64>,
}

impl AngleBatch {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.angles.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.angles[i * self.width..(i + 1) * self.width]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.angles
    }

    /// Chain factor `d angle / d feature = (π/2)(1 - tanh²)`, from the angle.
    fn feature_factor(angle: f64) -> f64 {
        let t = angle / FRAC_PI_2;
        FRAC_PI_2 * (1.0 - t * t)
    }
}

/// `tanh(x)·π/2`, elementwise over a row-major `B × width` matrix.
pub fn preprocess(features: &[f64], width: usize) -> Result<AngleBatch> {
    if width == 0 || !features.len().is_multiple_of(width) {
        return Err(Error::Dimension(format!(
            "{} features cannot be read as rows of width {width}",
            features.len()
        )));
    }
    if features.iter().any(|f| !f.is_finite()) {
        return Err(Error::NonFinite("dressed circuit input".into()));
    }
    Ok(AngleBatch {
        width,
        angles: features.iter().map(|f| f.tanh() * FRAC_PI_2).collect(),
    })
}

/// CNOT(i, j) for every `i < j`, in lexicographic order.
pub fn full_entangle_gates(n_qubits: usize) -> Vec<GateOp> {
    let mut v = Vec::new();
    for i in 0..n_qubits {
        for j in i + 1..n_qubits {
            v.push(GateOp::cnot(i, j));
        }
    }
    v
}

/// CRZ(π/2, i, i+1) for every `i`, then SWAP(i, i+1) for even `i`.
pub fn shifted_entangle_gates(n_qubits: usize) -> Vec<GateOp> {
    let mut v = Vec::new();
    for i in 0..n_qubits.saturating_sub(1) {
        v.push(GateOp::crz(i, i + 1, SHIFTED_CRZ_ANGLE));
    }
    for i in (0..n_qubits.saturating_sub(1)).step_by(2) {
        v.push(GateOp::swap(i, i + 1));
    }
    v
}

pub fn full_entangle(s: &mut StateVector) {
    for g in full_entangle_gates(s.n_qubits()) {
        s.apply_unchecked(&g);
    }
}

pub fn shifted_entangle(s: &mut StateVector) {
    for g in shifted_entangle_gates(s.n_qubits()) {
        s.apply_unchecked(&g);
    }
}

/// Angle slot layout shared by the bound and parametric programs:
/// slots `0..n` are embedding angles, `n + k*n + i` is weight `w[k][i]`.
fn weight_slot(shape: &CircuitShape, k: usize, i: usize) -> usize {
    shape.n_qubits + k * shape.n_qubits + i
}

/// The gate program as parametric gates over `[angles, weights]`.
pub fn parametric_program(shape: &CircuitShape) -> ParametricProgram {
    let n = shape.n_qubits;
    let mut p = ParametricProgram::new(n);
    for q in 0..n {
        p.push(ParamGate::fixed(GateOp::h(q)));
    }
    for q in 0..n {
        p.push(ParamGate::param(GateKind::Rz, vec![q], q));
    }
    for k in 0..shape.q_depth {
        // k is 0-based here, so layer number k+1 is odd when k is even.
        if k % 2 == 0 {
            full_entangle_gates(n)
                .into_iter()
                .for_each(|g| p.push(ParamGate::fixed(g)));
            for q in 0..n {
                let slot = weight_slot(shape, k, q);
                p.push(ParamGate::param(GateKind::Rx, vec![q], slot));
                p.push(ParamGate::param(GateKind::Ry, vec![q], slot));
            }
        } else {
            shifted_entangle_gates(n)
                .into_iter()
                .for_each(|g| p.push(ParamGate::fixed(g)));
            for q in 0..n {
                p.push(ParamGate::param(GateKind::Ry, vec![q], weight_slot(shape, k, q)));
            }
        }
    }
    p
}

/// One step of the compiled program.
#[derive(Clone)]
enum Step {
    Fixed(GateOp),
    /// Embedding RZ on qubit `q` reading input angle `q`.
    Embed(usize),
    /// Trainable rotation reading `weights[slot]`.
    Rot {
        q: usize,
        slot: usize,
        mat: Mat2,
        dmat: Mat2,
    },
}

/// A dressed circuit with its weights bound, ready to run many samples.
struct Compiled {
    n_qubits: usize,
    steps: Vec<Step>,
}

impl Compiled {
    fn new(shape: &CircuitShape, weights: &[f64]) -> Self {
        let n = shape.n_qubits;
        let steps = parametric_program(shape)
            .gates
            .into_iter()
            .map(|g| match g.angle {
                Some(crate::qsim::AngleSource::Param(slot)) if slot < n => Step::Embed(g.qubits[0]),
                Some(crate::qsim::AngleSource::Param(slot)) => {
                    let w = weights[slot - n];
                    Step::Rot {
                        q: g.qubits[0],
                        slot: slot - n,
                        mat: rotation_matrix(g.kind, w),
                        dmat: rotation_derivative(g.kind, w),
                    }
                }
                Some(crate::qsim::AngleSource::Fixed(a)) => Step::Fixed(GateOp {
                    kind: g.kind,
                    qubits: g.qubits,
                    angle: Some(a),
                }),
                None => Step::Fixed(GateOp {
                    kind: g.kind,
                    qubits: g.qubits,
                    angle: None,
                }),
            })
            .collect();
        Self { n_qubits: n, steps }
    }

    fn apply(&self, s: &mut StateVector, step: &Step, angles: &[f64]) {
        match step {
            Step::Fixed(g) => s.apply_unchecked(g),
            Step::Embed(q) => {
                let m = rz_matrix(angles[*q]);
                s.apply_phase(*q, m[0][0], m[1][1]);
            }
            Step::Rot { q, mat, .. } => s.apply_mat2(*q, mat),
        }
    }

    fn apply_inverse(&self, s: &mut StateVector, step: &Step, angles: &[f64]) {
        match step {
            Step::Fixed(g) => match g.kind {
                GateKind::H => s.apply_mat2(g.qubits[0], &h_matrix()),
                GateKind::Crz => {
                    s.apply_controlled_mat2(g.qubits[0], g.qubits[1], &rz_matrix(-g.angle.unwrap_or(0.0)))
                }
                // CNOT and SWAP are involutions; other fixed rotations do not occur.
                _ => s.apply_unchecked(g),
            },
            Step::Embed(q) => {
                let m = rz_matrix(-angles[*q]);
                s.apply_phase(*q, m[0][0], m[1][1]);
            }
            Step::Rot { q, mat, .. } => s.apply_mat2(*q, &dagger(mat)),
        }
    }

    fn run(&self, angles: &[f64]) -> StateVector {
        let mut s = StateVector::init_zero(self.n_qubits).expect("validated register size");
        for step in &self.steps {
            self.apply(&mut s, step, angles);
        }
        s
    }

    /// Adjoint-method gradient of `Σ_q upstream[q]·<Z_q>`; accumulates into
    /// `grad_w` and returns the gradient with respect to the embedding angles.
    fn adjoint(&self, angles: &[f64], upstream: &[f64], grad_w: &mut [f64]) -> Vec<f64> {
        let mut psi = self.run(angles);
        let n = self.n_qubits;
        let mut lambda = psi.clone();
        {
            let amps = lambda.amplitudes_mut();
            for (i, a) in amps.iter_mut().enumerate() {
                let z: f64 = (0..n)
                    .map(|q| if i >> (n - 1 - q) & 1 == 0 { upstream[q] } else { -upstream[q] })
                    .sum();
                *a *= z;
            }
        }
        let mut grad_a = vec![0.0; angles.len()];
        for step in self.steps.iter().rev() {
            self.apply_inverse(&mut psi, step, angles);
            match step {
                Step::Embed(q) => {
                    let mut mu = psi.clone();
                    let d = rotation_derivative(GateKind::Rz, angles[*q]);
                    mu.apply_phase(*q, d[0][0], d[1][1]);
                    grad_a[*q] += 2.0 * lambda.inner(&mu).re;
                }
                Step::Rot { q, slot, dmat, .. } => {
                    let mut mu = psi.clone();
                    mu.apply_mat2(*q, dmat);
                    grad_w[*slot] += 2.0 * lambda.inner(&mu).re;
                }
                Step::Fixed(_) => {}
            }
            self.apply_inverse(&mut lambda, step, angles);
        }
        grad_a
    }
}

/// `<Z_q>` on every qubit for one sample of embedding angles.
pub fn expectations(shape: &CircuitShape, weights: &[f64], angles: &[f64]) -> Vec<f64> {
    Compiled::new(shape, weights).run(angles).expect_z_all()
}

fn check_weights(shape: &CircuitShape, weights: &[f64]) -> Result<()> {
    shape.validate()?;
    if weights.len() != shape.n_weights() {
        return Err(Error::Dimension(format!(
            "weights must be {}×{}, got {} values",
            shape.q_depth,
            shape.n_qubits,
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("circuit weights".into()));
    }
    Ok(())
}

/// Batched forward: `B × n_qubits` expectations.
pub fn forward_batch(shape: &CircuitShape, weights: &[f64], batch: &AngleBatch) -> Result<Vec<f64>> {
    check_weights(shape, weights)?;
    if batch.width() != shape.n_qubits {
        return Err(Error::Dimension(format!(
            "angle width {} does not match {} qubits",
            batch.width(),
            shape.n_qubits
        )));
    }
    let c = Compiled::new(shape, weights);
    let mut out = Vec::with_capacity(batch.as_slice().len());
    for i in 0..batch.len() {
        out.extend(c.run(batch.row(i)).expect_z_all());
    }
    Ok(out)
}

/// Gradients of `Σ upstream ⊙ outputs` with respect to the weights (summed
/// over the batch) and to the embedding angles (per sample).
pub fn backward_batch(
    shape: &CircuitShape,
    weights: &[f64],
    batch: &AngleBatch,
    upstream: &[f64],
    method: GradMethod,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_weights(shape, weights)?;
    let n = shape.n_qubits;
    if upstream.len() != batch.as_slice().len() || batch.width() != n {
        return Err(Error::Dimension(format!(
            "upstream has {} entries for a {}×{} batch",
            upstream.len(),
            batch.len(),
            batch.width()
        )));
    }
    let mut grad_w = vec![0.0; shape.n_weights()];
    let mut grad_a = Vec::with_capacity(upstream.len());
    match method {
        GradMethod::Adjoint => {
            let c = Compiled::new(shape, weights);
            for i in 0..batch.len() {
                let up = &upstream[i * n..(i + 1) * n];
                if up.iter().all(|&u| u == 0.0) {
                    grad_a.extend(std::iter::repeat_n(0.0, n));
                    continue;
                }
                grad_a.extend(c.adjoint(batch.row(i), up, &mut grad_w));
            }
        }
        GradMethod::ParameterShift => {
            let program = parametric_program(shape);
            let obs: Vec<usize> = (0..n).collect();
            for i in 0..batch.len() {
                let up = &upstream[i * n..(i + 1) * n];
                let mut params = batch.row(i).to_vec();
                params.extend_from_slice(weights);
                let jac = param_shift_grad(&program, &params, &obs)?;
                let mut g = vec![0.0; params.len()];
                for (row, u) in jac.iter().zip(up) {
                    for (gk, j) in g.iter_mut().zip(row) {
                        *gk += u * j;
                    }
                }
                grad_a.extend_from_slice(&g[..n]);
                for (gw, v) in grad_w.iter_mut().zip(&g[n..]) {
                    *gw += v;
                }
            }
        }
    }
    Ok((grad_w, grad_a))
}

/// A standalone dressed circuit with its own weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DressedCircuit {
    pub shape: CircuitShape,
    pub q_delta: f64,
    /// Row-major `q_depth × n_qubits`.
    pub weights: Vec<f64>,
}

/// Output of [`DressedCircuit::forward`], needed for the backward pass.
#[derive(Debug, Clone)]
pub struct DressedForward {
    pub angles: AngleBatch,
    /// Row-major `B × n_qubits`, every entry in `[-1, 1]`.
    pub outputs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DressedGrads {
    /// Same layout as the weights.
    pub weights: Vec<f64>,
    /// Gradient with respect to the raw (pre-tanh) features.
    pub features: Vec<f64>,
}

impl DressedCircuit {
    /// Weights drawn from `N(0, q_delta)`.
    pub fn new(shape: CircuitShape, q_delta: f64, seed_value: u64) -> Result<Self> {
        shape.validate()?;
        let normal = Normal::new(0.0, q_delta)
            .map_err(|e| Error::InvalidArgument(format!("q_delta {q_delta}: {e}")))?;
        let mut rng = seed::rng(seed_value);
        let weights = (0..shape.n_weights()).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self {
            shape,
            q_delta,
            weights,
        })
    }

    pub fn with_weights(shape: CircuitShape, weights: Vec<f64>) -> Result<Self> {
        check_weights(&shape, &weights)?;
        Ok(Self {
            shape,
            q_delta: 0.0,
            weights,
        })
    }

    pub fn preprocess(&self, features: &[f64]) -> Result<AngleBatch> {
        preprocess(features, self.shape.n_qubits)
    }

    pub fn forward(&self, angles: &AngleBatch) -> Result<DressedForward> {
        let outputs = forward_batch(&self.shape, &self.weights, angles)?;
        Ok(DressedForward {
            angles: angles.clone(),
            outputs,
        })
    }

    pub fn backward(
        &self,
        fwd: &DressedForward,
        upstream: &[f64],
        method: GradMethod,
    ) -> Result<DressedGrads> {
        let (weights, grad_a) = backward_batch(&self.shape, &self.weights, &fwd.angles, upstream, method)?;
        let features = grad_a
            .iter()
            .zip(fwd.angles.as_slice())
            .map(|(g, a)| g * AngleBatch::feature_factor(*a))
            .collect();
        Ok(DressedGrads { weights, features })
    }

    /// The concrete gate program for one sample of embedding angles.
    pub fn program(&self, angles: &[f64]) -> Result<Vec<GateOp>> {
        if angles.len() != self.shape.n_qubits {
            return Err(Error::Dimension(format!(
                "{} angles for {} qubits",
                angles.len(),
                self.shape.n_qubits
            )));
        }
        let mut params = angles.to_vec();
        params.extend_from_slice(&self.weights);
        parametric_program(&self.shape).bind(&params)
    }
}

/// Tape node: raw features `B×n` and weights `q_depth×n` in, expectations out.
struct DressedOp {
    shape: CircuitShape,
    angles: AngleBatch,
    method: GradMethod,
}

impl CustomOp for DressedOp {
    fn name(&self) -> &str {
        "dressed_circuit"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, upstream: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let weights = inputs[1];
        let (gw, ga) = backward_batch(&self.shape, weights.data(), &self.angles, upstream.data(), self.method)?;
        let gf: Vec<f64> = ga
            .iter()
            .zip(self.angles.as_slice())
            .map(|(g, a)| g * AngleBatch::feature_factor(*a))
            .collect();
        Ok(vec![
            Some(Tensor::new(inputs[0].shape().to_vec(), gf)?),
            Some(Tensor::new(weights.shape().to_vec(), gw)?),
        ])
    }
}

/// Record a dressed circuit application on the tape.
pub fn dressed_on_tape(
    tape: &mut Tape,
    features: Var,
    weights: Var,
    shape: CircuitShape,
    method: GradMethod,
) -> Result<Var> {
    let (rows, width) = tape.value(features).dims2()?;
    if width != shape.n_qubits {
        return Err(Error::Dimension(format!(
            "dressed circuit on {} qubits got {width} features per row",
            shape.n_qubits
        )));
    }
    let angles = preprocess(tape.value(features).data(), width)?;
    let out = forward_batch(&shape, tape.value(weights).data(), &angles)?;
    let output = Tensor::matrix(rows, width, out)?;
    tape.custom(
        &[features, weights],
        output,
        Box::new(DressedOp {
            shape,
            angles,
            method,
        }),
    )
}

/// Every weight shifted by a full turn leaves the layer unchanged.
pub const WEIGHT_PERIOD: f64 = 2.0 * PI;
