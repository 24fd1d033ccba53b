//! The end-to-end classifier: scalar embedding, a stack of blocks, mean
//! pooling and a two-layer decoder.
//!
//! Parameter count at the default configuration:
//!
//! | component | shapes | count |
//! |-----------|--------|-------|
//! | embed | 1×4 + 4 | 8 |
//! | block reducers | 10×4 + 4, 8×4 + 4 | 80 |
//! | block circuits | 4 × (2×4) | 32 |
//! | block heads | 4×1 + 1, 4×1 | 9 |
//! | decoder | 4×4 + 4, 4×2 + 2 | 30 |
//!
//! In general `count = (s + 1)h + L[(2h+2)q + q + 2h·q + q + 4·d·q + 2q + 1] + (h + 1)h + 2(h + 1)`
//! with `s = n_scalar_in`, `h = n_hidden`, `q = n_qubits`, `d = q_depth`,
//! which is 159 at the defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Tape, Tensor, Var};
use crate::data::JetGraph;
use crate::dressed::{CircuitShape, GradMethod};
use crate::lgeqb::{block_on_tape, uniform_fan_in, BlockOptions, BlockVars, Edges, LgeqbParams, PARAM_NAMES};
use crate::minkowski::{invariant_mass2, psi_n};
use crate::{seed, Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_hidden: usize,
    pub n_qubits: usize,
    pub q_depth: usize,
    /// Coordinate update scale.
    pub c: f64,
    pub dropout_p: f64,
    pub irc_safe: bool,
    pub n_scalar_in: usize,
    /// Standard deviation of the initial circuit weights.
    pub q_delta: f64,
    pub self_edges: bool,
    pub grad_method: GradMethod,
    /// Adds pooled coordinates to the decoder input. Breaks Lorentz
    /// invariance; exists for negative tests of the verifier.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub decode_coordinates: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 1,
            n_hidden: 4,
            n_qubits: 4,
            q_depth: 2,
            c: 1e-3,
            dropout_p: 0.2,
            irc_safe: false,
            n_scalar_in: 1,
            q_delta: 0.01,
            self_edges: false,
            grad_method: GradMethod::Adjoint,
            decode_coordinates: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_layers == 0 {
            return bad("n_layers must be at least 1".into());
        }
        if self.n_hidden != self.n_qubits {
            return bad(format!("n_hidden ({}) must equal n_qubits ({})", self.n_hidden, self.n_qubits));
        }
        if self.n_scalar_in == 0 {
            return bad("n_scalar_in must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must be in [0, 1), got {}", self.dropout_p));
        }
        if !(self.c.is_finite() && self.c >= 0.0) {
            return bad(format!("c must be finite and non-negative, got {}", self.c));
        }
        if !(self.q_delta.is_finite() && self.q_delta >= 0.0) {
            return bad(format!("q_delta must be finite and non-negative, got {}", self.q_delta));
        }
        self.circuit_shape().map(|_| ())
    }

    pub fn circuit_shape(&self) -> Result<CircuitShape> {
        CircuitShape::new(self.n_qubits, self.q_depth)
    }

    pub fn block_options(&self) -> BlockOptions {
        BlockOptions {
            irc_safe: self.irc_safe,
            self_edges: self.self_edges,
            grad_method: self.grad_method,
        }
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let (s, h, q, d) = (self.n_scalar_in, self.n_hidden, self.n_qubits, self.q_depth);
        let block = (2 * h + 2) * q + q + 2 * h * q + q + 4 * d * q + 2 * q + 1;
        (s + 1) * h + self.n_layers * block + (h + 1) * h + 2 * (h + 1)
    }
}

/// Dropout is active only in `Train`; `step` separates the draws of
/// successive calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64, step: u64 },
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

impl Prediction {
    /// Score for class 1.
    pub fn score(&self) -> f64 {
        self.probs[1]
    }

    pub fn class(&self) -> u8 {
        u8::from(self.probs[1] > self.probs[0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LorentzEqgnn {
    pub config: ModelConfig,
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub blocks: Vec<LgeqbParams>,
    pub dec1_w: Tensor,
    pub dec1_b: Tensor,
    pub dec2_w: Tensor,
    pub dec2_b: Tensor,
}

/// Per-jet outputs of a recorded forward pass.
pub struct Recorded {
    pub params: Vec<Var>,
    pub logits: Var,
    /// Final coordinates `N×4`.
    pub x: Var,
    /// Final scalars `N×n_hidden`.
    pub h: Var,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format_version: u32,
    config: ModelConfig,
    params: BTreeMap<String, ParamEntry>,
}

impl LorentzEqgnn {
    pub fn new(config: ModelConfig, seed_value: u64) -> Result<Self> {
        config.validate()?;
        let shape = config.circuit_shape()?;
        let (s, h) = (config.n_scalar_in, config.n_hidden);
        let mut rng = seed::rng(seed::derive_named(seed_value, "model_init"));
        let embed_w = uniform_fan_in(&mut rng, vec![s, h], s);
        let embed_b = uniform_fan_in(&mut rng, vec![h], s);
        let blocks = (0..config.n_layers)
            .map(|_| LgeqbParams::init(h, shape, config.c, config.q_delta, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            embed_w,
            embed_b,
            blocks,
            dec1_w: uniform_fan_in(&mut rng, vec![h, h], h),
            dec1_b: uniform_fan_in(&mut rng, vec![h], h),
            dec2_w: uniform_fan_in(&mut rng, vec![h, 2], h),
            dec2_b: uniform_fan_in(&mut rng, vec![2], h),
            config,
        })
    }

    /// Parameter names in flat-vector order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["embed.weight".to_string(), "embed.bias".to_string()];
        for l in 0..self.blocks.len() {
            names.extend(PARAM_NAMES.iter().map(|n| format!("blocks.{l}.{n}")));
        }
        names.extend(["decoder.0.weight", "decoder.0.bias", "decoder.1.weight", "decoder.1.bias"].map(String::from));
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embed_w, &self.embed_b];
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out.extend([&self.dec1_w, &self.dec1_b, &self.dec2_w, &self.dec2_b]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embed_w, &mut self.embed_b];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.extend([&mut self.dec1_w, &mut self.dec1_b, &mut self.dec2_w, &mut self.dec2_b]);
        out
    }

    fn expected_shapes(&self) -> Vec<Vec<usize>> {
        let (s, h) = (self.config.n_scalar_in, self.config.n_hidden);
        let shape = self.config.circuit_shape().expect("validated");
        let mut out = vec![vec![s, h], vec![h]];
        for _ in 0..self.config.n_layers {
            out.extend(LgeqbParams::expected_shapes(h, shape));
        }
        out.extend([vec![h, h], vec![h], vec![h, 2], vec![2]]);
        out
    }

    /// Exact number of trainable scalars.
    pub fn count_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.count_params() {
            return Err(Error::Dimension(format!("{} values for {} parameters", flat.len(), self.count_params())));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Node scalar inputs: `[ψ(m²), extra scalars...]`, zero-padded to `n_scalar_in`.
    pub fn node_inputs(&self, jet: &JetGraph) -> Result<Tensor> {
        let n = jet.n_nodes();
        if n < 2 {
            return Err(Error::DegenerateGraph(format!("a jet needs at least 2 particles, got {n}")));
        }
        let width = self.config.n_scalar_in;
        let mut data = Vec::with_capacity(n * width);
        for (p, extra) in jet.momenta.iter().zip(&jet.scalars) {
            if 1 + extra.len() > width {
                return Err(Error::Dimension(format!(
                    "{} node scalars exceed n_scalar_in = {width}",
                    1 + extra.len()
                )));
            }
            data.push(psi_n(invariant_mass2(*p)));
            data.extend_from_slice(extra);
            data.extend(std::iter::repeat_n(0.0, width - 1 - extra.len()));
        }
        Tensor::matrix(n, width, data)
    }

    /// Records the full forward pass for one jet on `tape`.
    pub fn record(&self, tape: &mut Tape, jet: &JetGraph, mode: Mode, trainable: bool) -> Result<Recorded> {
        let s = self.node_inputs(jet)?;
        if !jet.momenta.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("jet momenta".into()));
        }
        let n = jet.n_nodes();
        let mut params = Vec::with_capacity(self.tensors().len());
        let embed_w = tape.leaf(self.embed_w.clone(), trainable);
        let embed_b = tape.leaf(self.embed_b.clone(), trainable);
        params.extend([embed_w, embed_b]);
        let block_vars: Vec<BlockVars> = self.blocks.iter().map(|b| b.on_tape(tape, trainable)).collect();
        for v in &block_vars {
            params.extend(v.all());
        }
        let dec: Vec<Var> = [&self.dec1_w, &self.dec1_b, &self.dec2_w, &self.dec2_b]
            .iter()
            .map(|t| tape.leaf((*t).clone(), trainable))
            .collect();
        params.extend(&dec);

        let sv = tape.constant(s);
        let mut h = tape.affine(sv, embed_w, Some(embed_b))?;
        let coords = Tensor::matrix(n, 4, jet.momenta.iter().flat_map(|p| p.to_array()).collect())?;
        let mut x = tape.constant(coords);
        let edges = Edges::complete(n, self.config.self_edges);
        let opts = self.config.block_options();
        for v in &block_vars {
            (x, h) = block_on_tape(tape, v, x, h, &edges, opts)?;
        }

        let mut pooled = tape.mean_rows(h)?;
        if self.config.decode_coordinates {
            let xm = tape.mean_rows(x)?;
            let xm = tape.scale(xm, 1e-2)?;
            let width = self.config.n_hidden;
            let xm = if width == 4 {
                xm
            } else {
                let idx = (0..width).map(|k| k % 4).collect::<Vec<_>>();
                // Reuse coordinate columns cyclically to match the hidden width.
                let t = tape.value(xm).clone();
                let data = idx.iter().map(|&k| t.data()[k]).collect();
                tape.constant(Tensor::matrix(1, width, data)?)
            };
            pooled = tape.add(pooled, xm)?;
        }
        let (training, seed_value) = match mode {
            Mode::Train { seed, step } => (true, seed::derive(seed, &[step])),
            Mode::Eval => (false, 0),
        };
        let p = self.config.dropout_p;
        let z = tape.dropout(pooled, p, training, seed::derive(seed_value, &[1]))?;
        let z = tape.affine(z, dec[0], Some(dec[1]))?;
        let z = tape.activate(z, Activation::Relu)?;
        let z = tape.dropout(z, p, training, seed::derive(seed_value, &[2]))?;
        let logits = tape.affine(z, dec[2], Some(dec[3]))?;
        Ok(Recorded { params, logits, x, h })
    }

    pub fn forward(&self, jet: &JetGraph, mode: Mode) -> Result<Prediction> {
        let mut tape = Tape::new();
        let r = self.record(&mut tape, jet, mode, false)?;
        let l = tape.value(r.logits).data();
        let logits = [l[0], l[1]];
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("model logits".into()));
        }
        let p = crate::autodiff::softmax_rows(&logits, 1, 2);
        Ok(Prediction {
            logits,
            probs: [p[0], p[1]],
        })
    }

    /// Cross-entropy loss of one jet and its gradient over the flat parameters.
    pub fn loss_and_grad(&self, jet: &JetGraph, mode: Mode) -> Result<(f64, Vec<f64>, Prediction)> {
        let mut tape = Tape::new();
        let r = self.record(&mut tape, jet, mode, true)?;
        let (loss, probs) = tape.softmax_xent(r.logits, &[usize::from(jet.label)])?;
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        let mut flat = Vec::with_capacity(self.count_params());
        for &v in &r.params {
            flat.extend(grads.get_or_zeros(v, tape.value(v).len()));
        }
        let l = tape.value(r.logits).data();
        let pred = Prediction {
            logits: [l[0], l[1]],
            probs: [probs.data()[0], probs.data()[1]],
        };
        Ok((value, flat, pred))
    }

    pub fn to_json(&self) -> Result<String> {
        let params = self
            .param_names()
            .into_iter()
            .zip(self.tensors())
            .map(|(name, t)| {
                (
                    name,
                    ParamEntry {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect();
        let ck = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.config.clone(),
            params,
        };
        Ok(serde_json::to_string_pretty(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                ck.format_version
            )));
        }
        ck.config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut model = Self::new(ck.config, 0)?;
        let names = model.param_names();
        let shapes = model.expected_shapes();
        if ck.params.len() != names.len() {
            return Err(Error::Checkpoint(format!("{} parameter tensors, expected {}", ck.params.len(), names.len())));
        }
        for ((name, shape), t) in names.iter().zip(shapes).zip(model.tensors_mut()) {
            let entry = ck
                .params
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if entry.shape != shape {
                return Err(Error::Checkpoint(format!("`{name}` has shape {:?}, expected {shape:?}", entry.shape)));
            }
            if !entry.data.iter().all(|v| v.is_finite()) {
                return Err(Error::Checkpoint(format!("`{name}` contains non-finite values")));
            }
            *t = Tensor::new(entry.shape, entry.data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minkowski::{random_lorentz, FourVector};
    use rand::Rng;

    pub(crate) fn random_jet(n: usize, seed_value: u64) -> JetGraph {
        let mut rng = seed::rng(seed_value);
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

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        num / b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300)
    }

    #[test]
    fn default_count_is_159() {
        let m = LorentzEqgnn::new(ModelConfig::default(), 0).unwrap();
        assert_eq!(m.count_params(), 159);
        assert_eq!(ModelConfig::default().param_count(), 159);
        assert_eq!(m.param_names().len(), m.tensors().len());
        let deep = LorentzEqgnn::new(ModelConfig { n_layers: 2, ..Default::default() }, 0).unwrap();
        assert_eq!(deep.count_params() - m.count_params(), 121);
        for d in 1..=3 {
            let cfg = ModelConfig { q_depth: d, n_scalar_in: 3, n_layers: 3, ..Default::default() };
            assert_eq!(LorentzEqgnn::new(cfg.clone(), 1).unwrap().count_params(), cfg.param_count());
        }
    }

    #[test]
    fn embedding_inputs() {
        let m = LorentzEqgnn::new(ModelConfig::default(), 0).unwrap();
        let massless = FourVector::new(3.0, 0.0, 0.0, 3.0);
        let jet = JetGraph::from_momenta(vec![massless, FourVector::new(5.0, 0.0, 3.0, 0.0)], 0);
        let s = m.node_inputs(&jet).unwrap();
        assert_eq!(s.row(0), &[0.0]);
        assert_eq!(s.row(1), &[psi_n(16.0)]);
        let one = JetGraph::from_momenta(vec![massless], 0);
        assert!(matches!(m.forward(&one, Mode::Eval), Err(Error::DegenerateGraph(_))));
        let with_pid = ModelConfig { n_scalar_in: 3, ..Default::default() };
        let m3 = LorentzEqgnn::new(with_pid, 0).unwrap();
        let jet = JetGraph::new(vec![massless, massless], vec![vec![1.0], vec![-1.0]], 0);
        assert_eq!(m3.node_inputs(&jet).unwrap().row(1), &[0.0, -1.0, 0.0]);
    }

    #[test]
    fn eval_is_deterministic_and_normalised() {
        let m = LorentzEqgnn::new(ModelConfig::default(), 5).unwrap();
        let jet = random_jet(12, 3);
        let a = m.forward(&jet, Mode::Eval).unwrap();
        assert_eq!(a, m.forward(&jet, Mode::Eval).unwrap());
        assert!((a.probs[0] + a.probs[1] - 1.0).abs() < 1e-12);
        assert!(a.probs.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn lorentz_and_permutation_invariance() {
        for irc_safe in [false, true] {
            let m = LorentzEqgnn::new(ModelConfig { irc_safe, q_delta: 0.5, ..Default::default() }, 7).unwrap();
            let jet = random_jet(11, 8);
            let base = m.forward(&jet, Mode::Eval).unwrap();
            for k in 0..20 {
                let t = random_lorentz(k, 2.0).unwrap();
                let b = m.forward(&jet.transformed(&t), Mode::Eval).unwrap();
                assert!(rel(&b.logits, &base.logits) < 1e-6);
            }
            let perm = [4, 9, 0, 1, 10, 3, 2, 8, 7, 5, 6];
            let p = m.forward(&jet.permuted(&perm), Mode::Eval).unwrap();
            assert!(rel(&p.logits, &base.logits) < 1e-9);
        }
    }

    #[test]
    fn coordinate_decoding_breaks_invariance() {
        let cfg = ModelConfig { decode_coordinates: true, ..Default::default() };
        let m = LorentzEqgnn::new(cfg, 7).unwrap();
        let jet = random_jet(11, 8);
        let base = m.forward(&jet, Mode::Eval).unwrap();
        let t = random_lorentz(3, 2.0).unwrap();
        let b = m.forward(&jet.transformed(&t), Mode::Eval).unwrap();
        assert!(rel(&b.logits, &base.logits) > 1e-3);
    }

    #[test]
    fn dropout_only_in_training() {
        let m = LorentzEqgnn::new(ModelConfig { dropout_p: 0.5, ..Default::default() }, 1).unwrap();
        let jet = random_jet(10, 2);
        let eval = m.forward(&jet, Mode::Eval).unwrap();
        let differs = (0..20).any(|step| m.forward(&jet, Mode::Train { seed: 4, step }).unwrap() != eval);
        assert!(differs);
        let t = Mode::Train { seed: 4, step: 3 };
        assert_eq!(m.forward(&jet, t).unwrap(), m.forward(&jet, t).unwrap());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for cfg in [
            ModelConfig { q_delta: 0.5, ..Default::default() },
            ModelConfig { q_delta: 0.5, n_layers: 2, irc_safe: true, c: 0.05, ..Default::default() },
        ] {
            let mut m = LorentzEqgnn::new(cfg, 11).unwrap();
            let jet = random_jet(5, 12);
            let mode = Mode::Train { seed: 1, step: 0 };
            let (_, g, _) = m.loss_and_grad(&jet, mode).unwrap();
            let theta = m.flat_params();
            // Five-point stencil: truncation O(h^4), round-off ~1e-16 / h.
            let h = 1e-4;
            let mut worst: f64 = 0.0;
            for k in 0..theta.len() {
                let mut eval_at = |v: f64| {
                    let mut t = theta.clone();
                    t[k] = v;
                    m.set_flat_params(&t).unwrap();
                    m.loss_and_grad(&jet, mode).unwrap().0
                };
                let x = theta[k];
                let fd = (-eval_at(x + 2.0 * h) + 8.0 * eval_at(x + h) - 8.0 * eval_at(x - h) + eval_at(x - 2.0 * h)) / (12.0 * h);
                // The floor sits above the stencil's round-off for exactly-zero gradients.
                worst = worst.max((g[k] - fd).abs() / (g[k].abs().max(fd.abs()) + 1e-8));
            }
            m.set_flat_params(&theta).unwrap();
            assert!(worst < 1e-4, "max relative error {worst}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = ModelConfig { n_layers: 2, irc_safe: true, ..Default::default() };
        let m = LorentzEqgnn::new(cfg, 3).unwrap();
        let text = m.to_json().unwrap();
        let back = LorentzEqgnn::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);
        assert!(!text.contains("decode_coordinates"));
        let broken = text.replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(matches!(LorentzEqgnn::from_json(&broken), Err(Error::Checkpoint(_))));
        let unknown = text.replacen("\"n_layers\"", "\"n_layer\"", 1);
        assert!(LorentzEqgnn::from_json(&unknown).is_err());
    }
}
