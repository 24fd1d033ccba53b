//! Minkowski-space geometry with signature (+, -, -, -).

use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

/// Metric tensor diagonal.
pub const METRIC: [f64; 4] = [1.0, -1.0, -1.0, -1.0];

/// Slack allowed on the mass shell of a physical particle.
pub const MASS_SHELL_TOL: f64 = 1e-6;

/// Energy-momentum four-vector `(e, px, py, pz)` in natural units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FourVector {
    pub e: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
}

impl FourVector {
    pub const ZERO: FourVector = FourVector::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(e: f64, px: f64, py: f64, pz: f64) -> Self {
        Self { e, px, py, pz }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.e, self.px, self.py, self.pz]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }

    /// Finite, non-negative energy and not measurably tachyonic.
    pub fn is_physical(&self) -> bool {
        self.is_finite() && self.e >= 0.0 && invariant_mass2(*self) >= -MASS_SHELL_TOL
    }

    /// Transverse momentum.
    pub fn pt(&self) -> f64 {
        self.px.hypot(self.py)
    }

    pub fn spatial_norm(&self) -> f64 {
        (self.px * self.px + self.py * self.py + self.pz * self.pz).sqrt()
    }
}

impl Add for FourVector {
    type Output = FourVector;
    fn add(self, o: FourVector) -> FourVector {
        FourVector::new(self.e + o.e, self.px + o.px, self.py + o.py, self.pz + o.pz)
    }
}

impl Sub for FourVector {
    type Output = FourVector;
    fn sub(self, o: FourVector) -> FourVector {
        FourVector::new(self.e - o.e, self.px - o.px, self.py - o.py, self.pz - o.pz)
    }
}

impl Neg for FourVector {
    type Output = FourVector;
    fn neg(self) -> FourVector {
        FourVector::new(-self.e, -self.px, -self.py, -self.pz)
    }
}

impl Mul<f64> for FourVector {
    type Output = FourVector;
    fn mul(self, s: f64) -> FourVector {
        FourVector::new(self.e * s, self.px * s, self.py * s, self.pz * s)
    }
}

/// `a.e*b.e - a.px*b.px - a.py*b.py - a.pz*b.pz`
#[inline]
pub fn mink_inner(a: FourVector, b: FourVector) -> f64 {
    a.e * b.e - a.px * b.px - a.py * b.py - a.pz * b.pz
}

/// Squared Minkowski norm of `a - b`.
#[inline]
pub fn mink_norm2_diff(a: FourVector, b: FourVector) -> f64 {
    let d = a - b;
    mink_inner(d, d)
}

#[inline]
pub fn invariant_mass2(v: FourVector) -> f64 {
    mink_inner(v, v)
}

/// Log compression `sgn(z) * ln(|z| + 1)`.
///
/// Odd, monotone and bounded in magnitude by `|z|`.
#[inline]
pub fn psi_n(z: f64) -> f64 {
    let m = z.abs().ln_1p();
    if z < 0.0 {
        -m
    } else if z > 0.0 {
        m
    } else {
        0.0
    }
}

/// Derivative of [`psi_n`]: `1 / (1 + |z|)`.
#[inline]
pub fn psi_n_grad(z: f64) -> f64 {
    1.0 / (1.0 + z.abs())
}

/// A 4×4 real matrix acting on `(e, px, py, pz)` column vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzTransform {
    pub m: [[f64; 4]; 4],
}

impl LorentzTransform {
    pub const IDENTITY: LorentzTransform = LorentzTransform {
        m: [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ],
    };

    /// Boost along +z with the given rapidity.
    pub fn boost_z(rapidity: f64) -> Self {
        let (sh, ch) = (rapidity.sinh(), rapidity.cosh());
        let mut t = Self::IDENTITY;
        t.m[0][0] = ch;
        t.m[0][3] = sh;
        t.m[3][0] = sh;
        t.m[3][3] = ch;
        t
    }

    /// Spatial rotation from a unit quaternion `(w, x, y, z)`.
    pub fn rotation_from_quaternion(q: [f64; 4]) -> Self {
        let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        let [w, x, y, z] = q.map(|c| c / n);
        let r = [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ];
        let mut t = Self::IDENTITY;
        for i in 0..3 {
            for j in 0..3 {
                t.m[i + 1][j + 1] = r[i][j];
            }
        }
        t
    }

    /// `r2 · boost_z(rapidity) · r1`
    pub fn from_parts(r1: LorentzTransform, rapidity: f64, r2: LorentzTransform) -> Self {
        r2.compose(&Self::boost_z(rapidity)).compose(&r1)
    }

    /// Parity: spatial inversion.
    pub fn parity() -> Self {
        let mut t = Self::IDENTITY;
        for i in 1..4 {
            t.m[i][i] = -1.0;
        }
        t
    }

    /// Time reversal.
    pub fn time_reversal() -> Self {
        let mut t = Self::IDENTITY;
        t.m[0][0] = -1.0;
        t
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &LorentzTransform) -> LorentzTransform {
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..4).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        LorentzTransform { m: out }
    }

    pub fn apply(&self, v: FourVector) -> FourVector {
        apply_lorentz(self, v)
    }

    /// Largest entry of `|Mᵀ g M - g|`.
    pub fn metric_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let s: f64 = (0..4).map(|k| self.m[k][i] * METRIC[k] * self.m[k][j]).sum();
                let g = if i == j { METRIC[i] } else { 0.0 };
                worst = worst.max((s - g).abs());
            }
        }
        worst
    }

    pub fn determinant(&self) -> f64 {
        // Laplace expansion along the first row on 3x3 minors.
        let m = &self.m;
        let minor = |skip_col: usize| -> f64 {
            let cols: Vec<usize> = (0..4).filter(|&c| c != skip_col).collect();
            let a = |r: usize, c: usize| m[r][cols[c]];
            a(1, 0) * (a(2, 1) * a(3, 2) - a(2, 2) * a(3, 1))
                - a(1, 1) * (a(2, 0) * a(3, 2) - a(2, 2) * a(3, 0))
                + a(1, 2) * (a(2, 0) * a(3, 1) - a(2, 1) * a(3, 0))
        };
        (0..4)
            .map(|c| {
                let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[0][c] * minor(c)
            })
            .sum()
    }
}

/// Matrix-vector product in `(e, px, py, pz)` order.
pub fn apply_lorentz(t: &LorentzTransform, v: FourVector) -> FourVector {
    let a = v.to_array();
    let row = |i: usize| t.m[i].iter().zip(a.iter()).map(|(x, y)| x * y).sum::<f64>();
    FourVector::new(row(0), row(1), row(2), row(3))
}

/// Options for [`random_lorentz_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomLorentzOptions {
    /// Also draw parity and time reversal with probability 1/2 each.
    pub include_discrete: bool,
}

/// A proper orthochronous transform `R2 · B_z(φ) · R1` with uniformly random
/// rotations and `φ ~ U(-max_rapidity, max_rapidity)`.
pub fn random_lorentz(seed: u64, max_rapidity: f64) -> Result<LorentzTransform> {
    random_lorentz_with(seed, max_rapidity, RandomLorentzOptions::default())
}

pub fn random_lorentz_with(
    seed: u64,
    max_rapidity: f64,
    opts: RandomLorentzOptions,
) -> Result<LorentzTransform> {
    if !max_rapidity.is_finite() || max_rapidity < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "max_rapidity must be finite and non-negative, got {max_rapidity}"
        )));
    }
    let mut rng = seed::rng(seed::derive_named(seed, "random_lorentz"));
    let mut quat = || -> [f64; 4] {
        // Normalized 4D Gaussian is uniform on S^3, i.e. Haar on SO(3).
        loop {
            let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            if q.iter().map(|c| c * c).sum::<f64>() > 1e-12 {
                return q;
            }
        }
    };
    let r1 = LorentzTransform::rotation_from_quaternion(quat());
    let r2 = LorentzTransform::rotation_from_quaternion(quat());
    let phi = if max_rapidity > 0.0 {
        rng.random_range(-max_rapidity..=max_rapidity)
    } else {
        0.0
    };
    let mut t = LorentzTransform::from_parts(r1, phi, r2);
    if opts.include_discrete {
        if rng.random_bool(0.5) {
            t = LorentzTransform::parity().compose(&t);
        }
        if rng.random_bool(0.5) {
            t = LorentzTransform::time_reversal().compose(&t);
        }
    }
    Ok(t)
}
