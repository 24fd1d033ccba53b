//! Randomized invariant suites for a model.
//!
//! Every check reports the worst deviation seen and the tolerance it is
//! held to. All randomness derives from [`VerifyOptions::seed`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::JetGraph;
use crate::dressed::{backward_batch, parametric_program, GradMethod};
use crate::lgeqb::{block_forward, irc_prefactors, BlockState, Edges};
use crate::minkowski::{random_lorentz, FourVector};
use crate::model::{LorentzEqgnn, Mode};
use crate::qsim::{param_shift_grad, GateOp, StateVector};
use crate::{seed, CircuitShape, Error, Result, Tensor};

pub const LORENTZ_TOL: f64 = 1e-6;
pub const PERMUTATION_TOL: f64 = 1e-9;
pub const CIRCUIT_GRAD_TOL: f64 = 1e-6;
pub const MODEL_GRAD_TOL: f64 = 1e-4;
pub const NORM_DRIFT_TOL: f64 = 1e-12;
/// Soft ratios must lie in `[z/2, 2z]`, i.e. `|log2(ratio/z)| ≤ 1`.
pub const IRC_LOG2_TOL: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Lorentz,
    Permutation,
    Irc,
    Gradients,
    Unitarity,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 6] = ["lorentz", "permutation", "irc", "gradients", "unitarity", "all"];
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lorentz" => Suite::Lorentz,
            "permutation" => Suite::Permutation,
            "irc" => Suite::Irc,
            "gradients" => Suite::Gradients,
            "unitarity" => Suite::Unitarity,
            "all" => Suite::All,
            other => return Err(Error::InvalidArgument(format!("unknown suite `{other}`, expected one of {:?}", Suite::NAMES))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub max_deviation: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(name: &str, max_deviation: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            max_deviation,
            tolerance,
        }
    }

    /// NaN deviations fail.
    pub fn passed(&self) -> bool {
        self.max_deviation <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{status} {} max_deviation={:.3e} tolerance={:.1e}", self.name, self.max_deviation, self.tolerance)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub seed: u64,
    pub n_graphs: usize,
    pub n_transforms: usize,
    pub max_rapidity: f64,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub n_soft_jets: usize,
    pub n_circuits: usize,
    pub n_programs: usize,
    pub program_len: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            n_graphs: 100,
            n_transforms: 20,
            max_rapidity: 2.0,
            min_nodes: 10,
            max_nodes: 30,
            n_soft_jets: 50,
            n_circuits: 20,
            n_programs: 20,
            program_len: 50,
        }
    }
}

/// A jet of `n` massive particles travelling roughly along +z.
pub fn random_jet(n: usize, seed_value: u64) -> JetGraph {
    let mut rng = seed::rng(seed::derive_named(seed_value, "random_jet"));
    let momenta = (0..n)
        .map(|_| {
            let p = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(5.0..30.0)];
            let m: f64 = rng.random_range(0.0..0.5);
            let e = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] + m * m).sqrt();
            FourVector::new(e, p[0], p[1], p[2])
        })
        .collect();
    JetGraph::from_momenta(momenta, (seed_value % 2) as u8)
}

/// The corpus shared by the Lorentz and permutation suites.
pub fn corpus(opts: &VerifyOptions) -> Vec<JetGraph> {
    let mut rng = seed::rng(seed::derive_named(opts.seed, "corpus"));
    (0..opts.n_graphs)
        .map(|k| {
            let n = rng.random_range(opts.min_nodes..=opts.max_nodes);
            random_jet(n, seed::derive(opts.seed, &[0xc0, k as u64]))
        })
        .collect()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    num / a.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300)
}

fn max_of(mut v: impl Iterator<Item = Result<f64>>) -> Result<f64> {
    // NaN is kept so that it fails the check.
    v.try_fold(0.0f64, |acc, d| d.map(|d| if d.is_nan() || acc.is_nan() { f64::NAN } else { acc.max(d) }))
}

/// Logit invariance under random proper Lorentz transforms, and coordinate
/// equivariance of the first block.
pub fn lorentz_checks(model: &LorentzEqgnn, opts: &VerifyOptions) -> Result<Vec<Check>> {
    let jets = corpus(opts);
    let transforms = (0..opts.n_transforms)
        .map(|t| random_lorentz(seed::derive(opts.seed, &[0x1a, t as u64]), opts.max_rapidity))
        .collect::<Result<Vec<_>>>()?;
    let logits = max_of(
        jets.par_iter()
            .map(|jet| {
                let base = model.forward(jet, Mode::Eval)?.logits;
                max_of(transforms.iter().map(|t| Ok(rel(&base, &model.forward(&jet.transformed(t), Mode::Eval)?.logits))))
            })
            .collect::<Vec<_>>()
            .into_iter(),
    )?;

    let block = &model.blocks[0];
    let opts_b = model.config.block_options();
    let coords = max_of(
        jets.par_iter()
            .enumerate()
            .map(|(k, jet)| {
                let mut rng = seed::rng(seed::derive(opts.seed, &[0x4b, k as u64]));
                let h: Vec<f64> = (0..jet.n_nodes() * model.config.n_hidden).map(|_| rng.random_range(-1.0..1.0)).collect();
                let h = Tensor::matrix(jet.n_nodes(), model.config.n_hidden, h)?;
                let out = block_forward(block, &BlockState::new(jet.momenta.clone(), h.clone())?, opts_b)?;
                max_of(transforms.iter().map(|t| {
                    let bx: Vec<FourVector> = jet.momenta.iter().map(|&v| t.apply(v)).collect();
                    let moved = block_forward(block, &BlockState::new(bx, h.clone())?, opts_b)?;
                    Ok(out
                        .x
                        .iter()
                        .zip(&moved.x)
                        .map(|(&a, &b)| rel(&t.apply(a).to_array(), &b.to_array()))
                        .fold(0.0, f64::max))
                }))
            })
            .collect::<Vec<_>>()
            .into_iter(),
    )?;
    Ok(vec![
        Check::new("lorentz.logit_invariance", logits, LORENTZ_TOL),
        Check::new("lorentz.coordinate_equivariance", coords, LORENTZ_TOL),
    ])
}

/// Logits under random node relabelling, in absolute terms.
pub fn permutation_checks(model: &LorentzEqgnn, opts: &VerifyOptions) -> Result<Vec<Check>> {
    let jets = corpus(opts);
    let dev = max_of(
        jets.par_iter()
            .enumerate()
            .map(|(k, jet)| {
                let mut rng = seed::rng(seed::derive(opts.seed, &[0x9e, k as u64]));
                let mut perm: Vec<usize> = (0..jet.n_nodes()).collect();
                rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
                let a = model.forward(jet, Mode::Eval)?.logits;
                let b = model.forward(&jet.permuted(&perm), Mode::Eval)?.logits;
                Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
            })
            .collect::<Vec<_>>()
            .into_iter(),
    )?;
    Ok(vec![Check::new("permutation.logit_invariance", dev, PERMUTATION_TOL)])
}

/// Soft scaling of the IRC prefactor: shrinking particle `j` by `z` must
/// shrink every prefactor `a_ij` by a factor within `[z/2, 2z]`.
pub fn irc_checks(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (name, z) in [("irc.soft_scaling_1e-2", 1e-2), ("irc.soft_scaling_1e-4", 1e-4)] {
        let mut worst: f64 = 0.0;
        for k in 0..opts.n_soft_jets {
            let mut rng = seed::rng(seed::derive(opts.seed, &[0x12c, k as u64]));
            let n = rng.random_range(opts.min_nodes..=opts.max_nodes);
            let jet = random_jet(n, seed::derive(opts.seed, &[0x12d, k as u64]));
            let j = rng.random_range(0..n);
            let edges = Edges::complete(n, false);
            let base = irc_prefactors(&jet.momenta)?;
            let mut x = jet.momenta.clone();
            x[j] = x[j] * z;
            let soft = irc_prefactors(&x)?;
            for i in (0..n).filter(|&i| i != j) {
                let e = edges.find(i, j).expect("complete graph");
                worst = worst.max((soft[e] / base[e] / z).log2().abs());
            }
        }
        out.push(Check::new(name, worst, IRC_LOG2_TOL));
    }
    Ok(out)
}

/// Parameter-shift against central differences and adjoint sweeps on random
/// 4-qubit circuits, then model loss gradients against a five-point stencil
/// on a 5-node jet.
pub fn gradient_checks(model: &LorentzEqgnn, opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut shift_vs_fd: f64 = 0.0;
    let mut adjoint_vs_shift: f64 = 0.0;
    for k in 0..opts.n_circuits {
        let mut rng = seed::rng(seed::derive(opts.seed, &[0x6a, k as u64]));
        let shape = CircuitShape::new(4, 1 + k % 3)?;
        let program = parametric_program(&shape);
        let features: Vec<f64> = (0..shape.n_qubits).map(|_| rng.random_range(-2.0..2.0)).collect();
        let batch = crate::dressed::preprocess(&features, shape.n_qubits)?;
        let mut params = batch.as_slice().to_vec();
        params.extend((0..shape.n_weights()).map(|_| rng.random_range(-3.0..3.0)));
        let obs = [0, 1, 2, 3];
        let grad = param_shift_grad(&program, &params, &obs)?;
        let h = 1e-5;
        for p in 0..params.len() {
            let at = |d: f64| -> Result<Vec<f64>> {
                let mut q = params.clone();
                q[p] += d;
                let s = crate::qsim::run_program(4, &program.bind(&q)?)?;
                obs.iter().map(|&o| s.expect_z(o)).collect()
            };
            let (plus, minus) = (at(h)?, at(-h)?);
            for o in 0..obs.len() {
                shift_vs_fd = shift_vs_fd.max((grad[o][p] - (plus[o] - minus[o]) / (2.0 * h)).abs());
            }
        }
        // Σ_q <Z_q> through the adjoint sweep against the summed shift rule.
        let weights = &params[shape.n_qubits..];
        let (gw, ga) = backward_batch(&shape, weights, &batch, &[1.0; 4], GradMethod::Adjoint)?;
        for (p, g) in ga.iter().chain(&gw).enumerate() {
            let want: f64 = (0..4).map(|o| grad[o][p]).sum();
            adjoint_vs_shift = adjoint_vs_shift.max((g - want).abs());
        }
    }

    let jet = random_jet(5, seed::derive_named(opts.seed, "gradient_jet"));
    let mut m = model.clone();
    let (_, g, _) = m.loss_and_grad(&jet, Mode::Eval)?;
    let theta = m.flat_params();
    // Near the optimal five-point step ε^(1/5) for unit-scale parameters.
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for k in 0..theta.len() {
        let mut eval_at = |v: f64| -> Result<f64> {
            let mut t = theta.clone();
            t[k] = v;
            m.set_flat_params(&t)?;
            Ok(m.loss_and_grad(&jet, Mode::Eval)?.0)
        };
        let x = theta[k];
        let fd = (-eval_at(x + 2.0 * h)? + 8.0 * eval_at(x + h)? - 8.0 * eval_at(x - h)? + eval_at(x - 2.0 * h)?) / (12.0 * h);
        let dev = (g[k] - fd).abs() / (g[k].abs().max(fd.abs()) + 1e-8);
        worst = if dev.is_nan() { f64::NAN } else { worst.max(dev) };
    }
    Ok(vec![
        Check::new("gradients.parameter_shift_vs_finite_difference", shift_vs_fd, CIRCUIT_GRAD_TOL),
        Check::new("gradients.adjoint_vs_parameter_shift", adjoint_vs_shift, CIRCUIT_GRAD_TOL),
        Check::new("gradients.model_loss_vs_finite_difference", worst, MODEL_GRAD_TOL),
    ])
}

/// A random program over every gate kind.
pub fn random_program(n_qubits: usize, len: usize, seed_value: u64) -> Vec<GateOp> {
    let mut rng = seed::rng(seed::derive_named(seed_value, "random_program"));
    (0..len)
        .map(|_| {
            let a = rng.random_range(0..n_qubits);
            let b = (a + rng.random_range(1..n_qubits)) % n_qubits;
            let t = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            match rng.random_range(0..7) {
                0 => GateOp::h(a),
                1 => GateOp::rx(a, t),
                2 => GateOp::ry(a, t),
                3 => GateOp::rz(a, t),
                4 => GateOp::cnot(a, b),
                5 => GateOp::crz(a, b, t),
                _ => GateOp::swap(a, b),
            }
        })
        .collect()
}

/// Norm drift of random programs, checked after every gate.
pub fn unitarity_checks(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut drift: f64 = 0.0;
    for k in 0..opts.n_programs {
        let n = 2 + k % 3;
        let mut s = StateVector::init_zero(n)?;
        for g in random_program(n, opts.program_len, seed::derive(opts.seed, &[0x0a, k as u64])) {
            s.apply_gate(&g)?;
            drift = drift.max((s.norm_sqr() - 1.0).abs());
        }
    }
    Ok(vec![Check::new("unitarity.norm_drift", drift, NORM_DRIFT_TOL)])
}

pub fn run_suite(model: &LorentzEqgnn, suite: Suite, opts: &VerifyOptions) -> Result<Vec<Check>> {
    Ok(match suite {
        Suite::Lorentz => lorentz_checks(model, opts)?,
        Suite::Permutation => permutation_checks(model, opts)?,
        Suite::Irc => irc_checks(opts)?,
        Suite::Gradients => gradient_checks(model, opts)?,
        Suite::Unitarity => unitarity_checks(opts)?,
        Suite::All => {
            let mut all = Vec::new();
            for s in [Suite::Lorentz, Suite::Permutation, Suite::Irc, Suite::Gradients, Suite::Unitarity] {
                all.extend(run_suite(model, s, opts)?);
            }
            all
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn small() -> VerifyOptions {
        VerifyOptions {
            n_graphs: 4,
            n_transforms: 3,
            max_nodes: 12,
            n_soft_jets: 5,
            n_circuits: 3,
            n_programs: 4,
            ..VerifyOptions::default()
        }
    }

    #[test]
    fn fresh_model_passes_everything() {
        let m = LorentzEqgnn::new(ModelConfig::default(), 1).unwrap();
        let checks = run_suite(&m, Suite::All, &small()).unwrap();
        assert_eq!(checks.len(), 9);
        for c in &checks {
            assert!(c.passed(), "{c}");
        }
    }

    #[test]
    fn coordinate_decoding_fails_lorentz() {
        let cfg = ModelConfig { decode_coordinates: true, ..Default::default() };
        let m = LorentzEqgnn::new(cfg, 1).unwrap();
        let checks = lorentz_checks(&m, &small()).unwrap();
        assert!(!checks[0].passed(), "{}", checks[0]);
    }

    #[test]
    fn suite_names_parse() {
        for name in Suite::NAMES {
            assert!(name.parse::<Suite>().is_ok());
        }
        assert!("boost".parse::<Suite>().is_err());
    }

    #[test]
    fn nan_fails() {
        assert!(!Check::new("x", f64::NAN, 1.0).passed());
    }
}
