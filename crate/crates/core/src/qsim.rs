//! Dense statevector simulator.
//!
//! Qubit 0 is the most significant bit of the amplitude index, so for two
//! qubits the basis order is `|00>, |01>, |10>, |11>` with the left label
//! belonging to qubit 0.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MAX_QUBITS: usize = 12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A 2×2 complex matrix in row-major order.
pub type Mat2 = [[Complex64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GateKind {
    H,
    Rx,
    Ry,
    Rz,
    Cnot,
    Crz,
    Swap,
}

impl GateKind {
    pub fn arity(self) -> usize {
        match self {
            GateKind::H | GateKind::Rx | GateKind::Ry | GateKind::Rz => 1,
            GateKind::Cnot | GateKind::Crz | GateKind::Swap => 2,
        }
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, GateKind::Rx | GateKind::Ry | GateKind::Rz | GateKind::Crz)
    }
}

/// One gate record: `{kind, qubits, angle}`. For controlled gates the
/// control is `qubits[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOp {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
}

impl GateOp {
    pub fn h(q: usize) -> Self {
        Self::single(GateKind::H, q, None)
    }
    pub fn rx(q: usize, angle: f64) -> Self {
        Self::single(GateKind::Rx, q, Some(angle))
    }
    pub fn ry(q: usize, angle: f64) -> Self {
        Self::single(GateKind::Ry, q, Some(angle))
    }
    pub fn rz(q: usize, angle: f64) -> Self {
        Self::single(GateKind::Rz, q, Some(angle))
    }
    pub fn cnot(control: usize, target: usize) -> Self {
        Self::pair(GateKind::Cnot, control, target, None)
    }
    pub fn crz(control: usize, target: usize, angle: f64) -> Self {
        Self::pair(GateKind::Crz, control, target, Some(angle))
    }
    pub fn swap(a: usize, b: usize) -> Self {
        Self::pair(GateKind::Swap, a, b, None)
    }

    fn single(kind: GateKind, q: usize, angle: Option<f64>) -> Self {
        Self {
            kind,
            qubits: vec![q],
            angle,
        }
    }

    fn pair(kind: GateKind, a: usize, b: usize, angle: Option<f64>) -> Self {
        Self {
            kind,
            qubits: vec![a, b],
            angle,
        }
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        if self.qubits.len() != self.kind.arity() {
            return Err(Error::InvalidArgument(format!(
                "{:?} takes {} qubit(s), got {:?}",
                self.kind,
                self.kind.arity(),
                self.qubits
            )));
        }
        if let Some(&q) = self.qubits.iter().find(|&&q| q >= n_qubits) {
            return Err(Error::Index(format!(
                "qubit {q} on a {n_qubits}-qubit register"
            )));
        }
        if self.qubits.len() == 2 && self.qubits[0] == self.qubits[1] {
            return Err(Error::InvalidArgument(format!(
                "{:?} needs distinct qubits, got {:?}",
                self.kind, self.qubits
            )));
        }
        match (self.kind.is_rotation(), self.angle) {
            (true, None) => Err(Error::InvalidArgument(format!("{:?} needs an angle", self.kind))),
            (false, Some(_)) => Err(Error::InvalidArgument(format!(
                "{:?} takes no angle",
                self.kind
            ))),
            (true, Some(a)) if !a.is_finite() => {
                Err(Error::InvalidArgument(format!("non-finite angle {a}")))
            }
            _ => Ok(()),
        }
    }
}

pub fn h_matrix() -> Mat2 {
    let s = Complex64::new(FRAC_1_SQRT_2, 0.0);
    [[s, s], [s, -s]]
}

pub fn rx_matrix(theta: f64) -> Mat2 {
    let (s, c) = (theta / 2.0).sin_cos();
    [
        [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
        [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
    ]
}

pub fn ry_matrix(theta: f64) -> Mat2 {
    let (s, c) = (theta / 2.0).sin_cos();
    [
        [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
        [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
    ]
}

pub fn rz_matrix(theta: f64) -> Mat2 {
    [
        [Complex64::from_polar(1.0, -theta / 2.0), ZERO],
        [ZERO, Complex64::from_polar(1.0, theta / 2.0)],
    ]
}

/// Derivative of a rotation matrix with respect to its angle.
pub fn rotation_derivative(kind: GateKind, theta: f64) -> Mat2 {
    let (s, c) = (theta / 2.0).sin_cos();
    let half = |z: Complex64| z * 0.5;
    match kind {
        GateKind::Rx => [
            [half(Complex64::new(-s, 0.0)), half(Complex64::new(0.0, -c))],
            [half(Complex64::new(0.0, -c)), half(Complex64::new(-s, 0.0))],
        ],
        GateKind::Ry => [
            [half(Complex64::new(-s, 0.0)), half(Complex64::new(-c, 0.0))],
            [half(Complex64::new(c, 0.0)), half(Complex64::new(-s, 0.0))],
        ],
        GateKind::Rz => [
            [Complex64::new(0.0, -0.5) * Complex64::from_polar(1.0, -theta / 2.0), ZERO],
            [ZERO, Complex64::new(0.0, 0.5) * Complex64::from_polar(1.0, theta / 2.0)],
        ],
        _ => [[ZERO; 2]; 2],
    }
}

pub fn rotation_matrix(kind: GateKind, theta: f64) -> Mat2 {
    match kind {
        GateKind::Rx => rx_matrix(theta),
        GateKind::Ry => ry_matrix(theta),
        GateKind::Rz => rz_matrix(theta),
        _ => [[ONE, ZERO], [ZERO, ONE]],
    }
}

/// Conjugate transpose.
pub fn dagger(m: &Mat2) -> Mat2 {
    [[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]]
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// `|0…0>` on `n_qubits` qubits.
    pub fn init_zero(n_qubits: usize) -> Result<Self> {
        if !(1..=MAX_QUBITS).contains(&n_qubits) {
            return Err(Error::InvalidArgument(format!(
                "register size must be in 1..={MAX_QUBITS}, got {n_qubits}"
            )));
        }
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[0] = ONE;
        Ok(Self { n_qubits, amps })
    }

    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let n = amps.len().trailing_zeros() as usize;
        if amps.len() != 1 << n || !(1..=MAX_QUBITS).contains(&n) {
            return Err(Error::Dimension(format!(
                "{} amplitudes is not a supported register size",
                amps.len()
            )));
        }
        Ok(Self { n_qubits: n, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    #[inline]
    fn mask(&self, q: usize) -> usize {
        1 << (self.n_qubits - 1 - q)
    }

    /// Apply a 2×2 matrix to qubit `q`. Each amplitude pair is visited once.
    pub fn apply_mat2(&mut self, q: usize, m: &Mat2) {
        let mask = self.mask(q);
        let dim = self.amps.len();
        let mut base = 0;
        while base < dim {
            for i in base..base + mask {
                let j = i | mask;
                let (a, b) = (self.amps[i], self.amps[j]);
                self.amps[i] = m[0][0] * a + m[0][1] * b;
                self.amps[j] = m[1][0] * a + m[1][1] * b;
            }
            base += mask << 1;
        }
    }

    /// Apply a 2×2 matrix to `target` on the branch where `control` is 1.
    pub fn apply_controlled_mat2(&mut self, control: usize, target: usize, m: &Mat2) {
        let (cm, tm) = (self.mask(control), self.mask(target));
        for i in 0..self.amps.len() {
            if i & cm != 0 && i & tm == 0 {
                let j = i | tm;
                let (a, b) = (self.amps[i], self.amps[j]);
                self.amps[i] = m[0][0] * a + m[0][1] * b;
                self.amps[j] = m[1][0] * a + m[1][1] * b;
            }
        }
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) {
        let (cm, tm) = (self.mask(control), self.mask(target));
        for i in 0..self.amps.len() {
            if i & cm != 0 && i & tm == 0 {
                self.amps.swap(i, i | tm);
            }
        }
    }

    pub fn apply_swap(&mut self, a: usize, b: usize) {
        let (am, bm) = (self.mask(a), self.mask(b));
        for i in 0..self.amps.len() {
            if i & am != 0 && i & bm == 0 {
                self.amps.swap(i, (i & !am) | bm);
            }
        }
    }

    /// Diagonal phase gate on qubit `q`: multiply the bit-0 branch by `p0`
    /// and the bit-1 branch by `p1`.
    pub fn apply_phase(&mut self, q: usize, p0: Complex64, p1: Complex64) {
        let mask = self.mask(q);
        for (i, a) in self.amps.iter_mut().enumerate() {
            *a *= if i & mask == 0 { p0 } else { p1 };
        }
    }

    pub fn apply_gate(&mut self, g: &GateOp) -> Result<()> {
        g.validate(self.n_qubits)?;
        self.apply_unchecked(g);
        Ok(())
    }

    pub(crate) fn apply_unchecked(&mut self, g: &GateOp) {
        let q = &g.qubits;
        let angle = g.angle.unwrap_or(0.0);
        match g.kind {
            GateKind::H => self.apply_mat2(q[0], &h_matrix()),
            GateKind::Rx => self.apply_mat2(q[0], &rx_matrix(angle)),
            GateKind::Ry => self.apply_mat2(q[0], &ry_matrix(angle)),
            GateKind::Rz => {
                let m = rz_matrix(angle);
                self.apply_phase(q[0], m[0][0], m[1][1]);
            }
            GateKind::Cnot => self.apply_cnot(q[0], q[1]),
            GateKind::Crz => self.apply_controlled_mat2(q[0], q[1], &rz_matrix(angle)),
            GateKind::Swap => self.apply_swap(q[0], q[1]),
        }
    }

    /// `<Z_q>`: probability of bit 0 minus probability of bit 1.
    pub fn expect_z(&self, q: usize) -> Result<f64> {
        if q >= self.n_qubits {
            return Err(Error::Index(format!(
                "qubit {q} on a {}-qubit register",
                self.n_qubits
            )));
        }
        Ok(self.expect_z_unchecked(q))
    }

    pub(crate) fn expect_z_unchecked(&self, q: usize) -> f64 {
        let mask = self.mask(q);
        self.amps
            .iter()
            .enumerate()
            .map(|(i, a)| if i & mask == 0 { a.norm_sqr() } else { -a.norm_sqr() })
            .sum()
    }

    /// `<Z_q>` for every qubit.
    pub fn expect_z_all(&self) -> Vec<f64> {
        (0..self.n_qubits).map(|q| self.expect_z_unchecked(q)).collect()
    }

    /// `<self|other>`
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

/// Apply `program` to `|0…0>` in order.
pub fn run_program(n_qubits: usize, program: &[GateOp]) -> Result<StateVector> {
    let mut s = StateVector::init_zero(n_qubits)?;
    for (position, g) in program.iter().enumerate() {
        s.apply_gate(g).map_err(|e| Error::Gate {
            position,
            source: Box::new(e),
        })?;
    }
    Ok(s)
}

/// Where a gate angle comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AngleSource {
    Fixed(f64),
    /// Index into the bound parameter list.
    Param(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGate {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    pub angle: Option<AngleSource>,
}

impl ParamGate {
    pub fn fixed(g: GateOp) -> Self {
        Self {
            kind: g.kind,
            qubits: g.qubits,
            angle: g.angle.map(AngleSource::Fixed),
        }
    }

    pub fn param(kind: GateKind, qubits: Vec<usize>, index: usize) -> Self {
        Self {
            kind,
            qubits,
            angle: Some(AngleSource::Param(index)),
        }
    }
}

/// A gate program whose angles may refer to logical parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricProgram {
    pub n_qubits: usize,
    pub gates: Vec<ParamGate>,
}

impl ParametricProgram {
    pub fn new(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            gates: Vec::new(),
        }
    }

    pub fn push(&mut self, g: ParamGate) {
        self.gates.push(g);
    }

    /// Number of logical parameters referenced.
    pub fn n_params(&self) -> usize {
        self.gates
            .iter()
            .filter_map(|g| match g.angle {
                Some(AngleSource::Param(i)) => Some(i + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Check that parameters only feed rotation gates.
    pub fn validate(&self) -> Result<()> {
        for (position, g) in self.gates.iter().enumerate() {
            if matches!(g.angle, Some(AngleSource::Param(_))) && !g.kind.is_rotation() {
                return Err(Error::Gate {
                    position,
                    source: Box::new(Error::InvalidArgument(format!(
                        "parameter feeds non-rotation gate {:?}",
                        g.kind
                    ))),
                });
            }
        }
        Ok(())
    }

    /// Concrete program for the given parameter values.
    pub fn bind(&self, params: &[f64]) -> Result<Vec<GateOp>> {
        self.bind_with(params, None)
    }

    /// Bind, adding `shift` to the angle of gate number `shifted`.
    fn bind_with(&self, params: &[f64], shift: Option<(usize, f64)>) -> Result<Vec<GateOp>> {
        self.gates
            .iter()
            .enumerate()
            .map(|(pos, g)| {
                let mut angle = match g.angle {
                    None => None,
                    Some(AngleSource::Fixed(a)) => Some(a),
                    Some(AngleSource::Param(i)) => Some(*params.get(i).ok_or_else(|| {
                        Error::Index(format!("parameter {i} of {}", params.len()))
                    })?),
                };
                if let (Some((s_pos, delta)), Some(a)) = (shift, angle.as_mut()) {
                    if s_pos == pos {
                        *a += delta;
                    }
                }
                Ok(GateOp {
                    kind: g.kind,
                    qubits: g.qubits.clone(),
                    angle,
                })
            })
            .collect()
    }

    fn expectations(&self, params: &[f64], shift: Option<(usize, f64)>, obs: &[usize]) -> Result<Vec<f64>> {
        let s = run_program(self.n_qubits, &self.bind_with(params, shift)?)?;
        obs.iter().map(|&q| s.expect_z(q)).collect()
    }
}

/// Parameter-shift gradient of `<Z_q>` for each `q` in `observables` with
/// respect to every logical parameter. Result is indexed `[q][k]`.
///
/// Single-qubit rotations use the two-term rule with shifts of ±π/2.
/// A controlled RZ has generator eigenvalues {0, ±1/2}, so it uses the
/// four-term rule with shifts of ±π/2 and ±3π/2.
pub fn param_shift_grad(
    program: &ParametricProgram,
    params: &[f64],
    observables: &[usize],
) -> Result<Vec<Vec<f64>>> {
    program.validate()?;
    if params.len() < program.n_params() {
        return Err(Error::Dimension(format!(
            "program references {} parameters, got {}",
            program.n_params(),
            params.len()
        )));
    }
    let mut grad = vec![vec![0.0; params.len()]; observables.len()];
    let sqrt2 = std::f64::consts::SQRT_2;
    let c_plus = (sqrt2 + 1.0) / (4.0 * sqrt2);
    let c_minus = (sqrt2 - 1.0) / (4.0 * sqrt2);
    for (pos, g) in program.gates.iter().enumerate() {
        let Some(AngleSource::Param(k)) = g.angle else { continue };
        let eval = |delta: f64| program.expectations(params, Some((pos, delta)), observables);
        let contrib: Vec<f64> = if g.kind == GateKind::Crz {
            let (p1, m1) = (eval(FRAC_PI_2)?, eval(-FRAC_PI_2)?);
            let (p3, m3) = (eval(3.0 * FRAC_PI_2)?, eval(-3.0 * FRAC_PI_2)?);
            (0..observables.len())
                .map(|o| c_plus * (p1[o] - m1[o]) - c_minus * (p3[o] - m3[o]))
                .collect()
        } else {
            let (p, m) = (eval(FRAC_PI_2)?, eval(-FRAC_PI_2)?);
            p.iter().zip(&m).map(|(a, b)| (a - b) / 2.0).collect()
        };
        for (row, c) in grad.iter_mut().zip(contrib) {
            row[k] += c;
        }
    }
    Ok(grad)
}
