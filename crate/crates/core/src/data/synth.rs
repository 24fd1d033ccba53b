use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use super::{JetRecord, DEFAULT_MIN_PARTICLES};
use crate::seed;

/// Charged pion mass, GeV.
pub const PION_MASS: f64 = 0.139_570_39;

/// Class-conditional generator settings. Index 0 / 1 is the class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    /// Poisson mean of the multiplicity before clipping.
    pub mean_multiplicity: [f64; 2],
    /// Rayleigh scale of the particle angle to the jet axis, radians.
    pub angular_spread: [f64; 2],
    /// Mean of the exponential kinetic-energy spectrum, GeV.
    pub mean_kinetic_energy: f64,
    /// Jet-axis pseudorapidity is uniform in `[-max_abs_eta, max_abs_eta]`.
    pub max_abs_eta: f64,
    pub min_particles: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            mean_multiplicity: [15.0, 25.0],
            angular_spread: [0.05, 0.15],
            mean_kinetic_energy: 5.0,
            max_abs_eta: 2.0,
            min_particles: DEFAULT_MIN_PARTICLES,
        }
    }
}

fn unit_axis(rng: &mut impl Rng, max_abs_eta: f64) -> [f64; 3] {
    let eta = if max_abs_eta > 0.0 {
        rng.random_range(-max_abs_eta..=max_abs_eta)
    } else {
        0.0
    };
    let phi = rng.random_range(-PI..PI);
    let ch = eta.cosh();
    [phi.cos() / ch, phi.sin() / ch, eta.tanh()]
}

/// Two unit vectors completing `n` to an orthonormal basis.
fn transverse_basis(n: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    };
    let u = cross(n, helper);
    let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let u = u.map(|c| c / norm);
    (u, cross(n, u))
}

/// One jet together with its true axis.
pub(crate) fn synth_jet(rng: &mut impl Rng, label: u8, p: &SynthParams) -> (JetRecord, [f64; 3]) {
    let c = usize::from(label);
    let n = Poisson::new(p.mean_multiplicity[c])
        .map(|d| d.sample(rng) as usize)
        .unwrap_or(0)
        .max(p.min_particles)
        .max(1);
    let axis = unit_axis(rng, p.max_abs_eta);
    let (u, v) = transverse_basis(axis);
    let kinetic = Exp::new(1.0 / p.mean_kinetic_energy).expect("positive mean energy");
    let sigma = p.angular_spread[c];
    let particles = (0..n)
        .map(|_| {
            // Rayleigh(sigma) polar angle, uniform azimuth about the axis.
            let uniform: f64 = rng.random();
            let theta = sigma * (-2.0 * (1.0 - uniform).ln()).sqrt();
            let alpha = rng.random_range(-PI..PI);
            let (st, ct) = theta.sin_cos();
            let (sa, ca) = alpha.sin_cos();
            let dir: [f64; 3] = std::array::from_fn(|k| ct * axis[k] + st * (ca * u[k] + sa * v[k]));
            let e = PION_MASS + kinetic.sample(rng);
            let pmag = (e * e - PION_MASS * PION_MASS).max(0.0).sqrt();
            [e, pmag * dir[0], pmag * dir[1], pmag * dir[2]]
        })
        .collect();
    (
        JetRecord {
            label,
            particles,
            scalars: None,
        },
        axis,
    )
}

/// `2 * n_per_class` jets with alternating labels `0, 1, 0, 1, ...`.
///
/// Jet `k` draws from its own stream keyed on `(seed, k)`, so the output is a
/// pure function of the arguments.
pub fn synth_jets(seed: u64, n_per_class: usize, params: &SynthParams) -> Vec<JetRecord> {
    (0..2 * n_per_class)
        .map(|k| {
            let mut rng = seed::rng(seed::derive(seed, &[0x5e17, k as u64]));
            synth_jet(&mut rng, (k % 2) as u8, params).0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minkowski::invariant_mass2;
    use crate::FourVector;

    fn angle(p: &[f64; 4], axis: [f64; 3]) -> f64 {
        let norm = (p[1] * p[1] + p[2] * p[2] + p[3] * p[3]).sqrt();
        let cos = (p[1] * axis[0] + p[2] * axis[1] + p[3] * axis[2]) / norm;
        cos.clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn clipped_balanced_and_deterministic() {
        let jets = synth_jets(7, 200, &SynthParams::default());
        assert_eq!(jets.len(), 400);
        assert!(jets.iter().all(|j| j.particles.len() >= 10));
        assert_eq!(jets.iter().filter(|j| j.label == 1).count(), 200);
        assert_eq!(jets, synth_jets(7, 200, &SynthParams::default()));
        assert_ne!(jets, synth_jets(8, 200, &SynthParams::default()));
        for p in jets.iter().flat_map(|j| &j.particles) {
            let m2 = invariant_mass2(FourVector::from_array(*p));
            assert!((m2 - PION_MASS * PION_MASS).abs() < 1e-9 * p[0] * p[0]);
        }
    }

    /// `E[max(N, lo)]` for `N ~ Poisson(mu)`, summed directly.
    fn clipped_poisson_moments(mu: f64, lo: usize) -> (f64, f64) {
        let (mut pk, mut m1, mut m2) = ((-mu).exp(), 0.0, 0.0);
        for k in 0..400usize {
            if k > 0 {
                pk *= mu / k as f64;
            }
            let x = k.max(lo) as f64;
            m1 += pk * x;
            m2 += pk * x * x;
        }
        (m1, m2 - m1 * m1)
    }

    #[test]
    fn class_means_match_configuration() {
        let p = SynthParams::default();
        let n_jets = 10_000;
        for label in 0..2u8 {
            let c = usize::from(label);
            let mut rng = seed::rng(99 + u64::from(label));
            let (mut mult, mut theta2, mut ke) = (Vec::new(), Vec::new(), Vec::new());
            for _ in 0..n_jets {
                let (jet, axis) = synth_jet(&mut rng, label, &p);
                mult.push(jet.particles.len() as f64);
                for q in &jet.particles {
                    theta2.push(angle(q, axis).powi(2));
                    ke.push(q[0] - PION_MASS);
                }
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let (mu, var) = clipped_poisson_moments(p.mean_multiplicity[c], p.min_particles);
            assert!((mean(&mult) - mu).abs() < 3.0 * (var / n_jets as f64).sqrt(), "multiplicity class {label}");
            // Rayleigh: E[theta^2] = 2 sigma^2, Var[theta^2] = 4 sigma^4.
            let s2 = p.angular_spread[c].powi(2);
            let se = (4.0 * s2 * s2 / theta2.len() as f64).sqrt();
            assert!((mean(&theta2) - 2.0 * s2).abs() < 3.0 * se, "spread class {label}");
            let e = p.mean_kinetic_energy;
            assert!((mean(&ke) - e).abs() < 3.0 * e / (ke.len() as f64).sqrt(), "energy class {label}");
        }
    }

    /// Mann-Whitney AUC by direct pair counting.
    fn auc(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (s1, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 1) {
            for (s0, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 0) {
                pairs += 1.0;
                wins += if s1 > s0 { 1.0 } else if s1 == s0 { 0.5 } else { 0.0 };
            }
        }
        wins / pairs
    }

    #[test]
    fn two_feature_logistic_probe_separates_classes() {
        let jets = synth_jets(2024, 500, &SynthParams::default());
        // Features: multiplicity and RMS angle to the momentum-sum axis.
        let feats: Vec<[f64; 2]> = jets
            .iter()
            .map(|j| {
                let mut s = [0.0; 3];
                for p in &j.particles {
                    for k in 0..3 {
                        s[k] += p[k + 1];
                    }
                }
                let n = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
                let axis = s.map(|c| c / n);
                let msa = j.particles.iter().map(|p| angle(p, axis).powi(2)).sum::<f64>() / j.particles.len() as f64;
                [j.particles.len() as f64, msa.sqrt()]
            })
            .collect();
        let labels: Vec<u8> = jets.iter().map(|j| j.label).collect();
        let dim_mean = |k: usize| feats.iter().map(|f| f[k]).sum::<f64>() / feats.len() as f64;
        let dim_std = |k: usize, m: f64| (feats.iter().map(|f| (f[k] - m).powi(2)).sum::<f64>() / feats.len() as f64).sqrt();
        let mu = [dim_mean(0), dim_mean(1)];
        let sd = [dim_std(0, mu[0]), dim_std(1, mu[1])];
        let z: Vec<[f64; 2]> = feats.iter().map(|f| [(f[0] - mu[0]) / sd[0], (f[1] - mu[1]) / sd[1]]).collect();
        let mut w = [0.0; 3];
        for _ in 0..500 {
            let mut g = [0.0; 3];
            for (x, &y) in z.iter().zip(&labels) {
                let p = 1.0 / (1.0 + (-(w[0] * x[0] + w[1] * x[1] + w[2])).exp());
                let r = p - f64::from(y);
                g[0] += r * x[0];
                g[1] += r * x[1];
                g[2] += r;
            }
            for k in 0..3 {
                w[k] -= 0.5 * g[k] / z.len() as f64;
            }
        }
        let scores: Vec<f64> = z.iter().map(|x| w[0] * x[0] + w[1] * x[1] + w[2]).collect();
        let a = auc(&scores, &labels);
        assert!(a >= 0.95, "probe AUC {a}");
    }
}
