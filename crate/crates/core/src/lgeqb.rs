//! The Lorentz group equivariant quantum block.
//!
//! One block maps node coordinates `x` (N×4, GeV) and node scalars `h`
//! (N×n_hidden) to updated `(x', h')`:
//!
//! ```text
//! m_ij  = φ_e(R_e [h_i, h_j, ψ(‖x_i − x_j‖²), ψ(⟨x_i, x_j⟩)])
//! w_ij  = sigmoid(A_m φ_m(m_ij) + b_m)
//! x_i'  = x_i + c Σ_j (A_x φ_x(m_ij)) x_j
//! h_i'  = h_i + φ_h(R_h [h_i, Σ_j w_ij m_ij])
//! ```
//!
//! where each `φ` is a dressed circuit, `R` are affine reducers and `ψ` is
//! the signed log compression. In IRC-safe mode `m_ij` is multiplied by
//! `⟨x_i, x_j⟩ / Σ_k ⟨x_i, x_k⟩`.
//!
//! Every step is recorded on an autodiff [`Tape`]; the free functions at the
//! bottom of this module evaluate single steps on a private tape.

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, CustomOp, Tape, Tensor, Var};
use crate::dressed::{dressed_on_tape, CircuitShape, GradMethod};
use crate::minkowski::{mink_inner, mink_norm2_diff, psi_n, psi_n_grad, FourVector};
use crate::{Error, Result};

/// Largest allowed `‖Δx_i‖∞` per block update, GeV.
pub const COORD_CLAMP: f64 = 1e3;

/// Smallest `|Σ_k ⟨x_i, x_k⟩|` accepted in IRC-safe mode.
pub const IRC_MIN_DENOMINATOR: f64 = 1e-12;

/// Number of Minkowski edge attributes.
pub const N_EDGE_ATTRIBUTES: usize = 2;

/// Directed edge list grouped by source node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edges {
    n_nodes: usize,
    src: Vec<usize>,
    dst: Vec<usize>,
}

impl Edges {
    /// All ordered pairs `(i, j)`, `i != j` unless `self_edges`.
    pub fn complete(n_nodes: usize, self_edges: bool) -> Self {
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        for i in 0..n_nodes {
            for j in 0..n_nodes {
                if i != j || self_edges {
                    src.push(i);
                    dst.push(j);
                }
            }
        }
        Self { n_nodes, src, dst }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn src(&self) -> &[usize] {
        &self.src
    }

    pub fn dst(&self) -> &[usize] {
        &self.dst
    }

    /// Position of edge `(i, j)`.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        self.src.iter().zip(&self.dst).position(|(&a, &b)| a == i && b == j)
    }
}

/// Options that change the block's dataflow but carry no parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BlockOptions {
    pub irc_safe: bool,
    pub self_edges: bool,
    pub grad_method: GradMethod,
}

/// Trainable parameters of one block. Affine weights are `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LgeqbParams {
    pub n_hidden: usize,
    pub shape: CircuitShape,
    /// Coordinate update scale.
    pub c: f64,
    pub reducer_e_w: Tensor,
    pub reducer_e_b: Tensor,
    pub reducer_h_w: Tensor,
    pub reducer_h_b: Tensor,
    pub phi_e: Tensor,
    pub phi_h: Tensor,
    pub phi_m: Tensor,
    pub phi_x: Tensor,
    pub head_m_w: Tensor,
    pub head_m_b: Tensor,
    pub head_x_w: Tensor,
}

/// Parameter names in storage order.
pub const PARAM_NAMES: [&str; 11] = [
    "reducer_e.weight",
    "reducer_e.bias",
    "reducer_h.weight",
    "reducer_h.bias",
    "phi_e.weights",
    "phi_h.weights",
    "phi_m.weights",
    "phi_x.weights",
    "phi_m.head.weight",
    "phi_m.head.bias",
    "phi_x.head.weight",
];

/// `U(-1/√fan_in, 1/√fan_in)` entries.
pub(crate) fn uniform_fan_in(rng: &mut impl Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

impl LgeqbParams {
    /// Affine layers use fan-in uniform initialisation; circuit weights are
    /// `N(0, q_delta)`.
    pub fn init(n_hidden: usize, shape: CircuitShape, c: f64, q_delta: f64, rng: &mut impl Rng) -> Result<Self> {
        shape.validate()?;
        if n_hidden != shape.n_qubits {
            return Err(Error::InvalidArgument(format!(
                "n_hidden ({n_hidden}) must equal n_qubits ({})",
                shape.n_qubits
            )));
        }
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::InvalidArgument(format!("coordinate scale c must be finite and >= 0, got {c}")));
        }
        let normal = Normal::new(0.0, q_delta).map_err(|e| Error::InvalidArgument(format!("q_delta {q_delta}: {e}")))?;
        let nq = shape.n_qubits;
        let e_in = 2 * n_hidden + N_EDGE_ATTRIBUTES;
        let h_in = 2 * n_hidden;
        let circuit = |rng: &mut _| {
            let data = (0..shape.n_weights()).map(|_| normal.sample(rng)).collect();
            Tensor::matrix(shape.q_depth, nq, data).expect("circuit shape")
        };
        Ok(Self {
            n_hidden,
            shape,
            c,
            reducer_e_w: uniform_fan_in(rng, vec![e_in, nq], e_in),
            reducer_e_b: uniform_fan_in(rng, vec![nq], e_in),
            reducer_h_w: uniform_fan_in(rng, vec![h_in, nq], h_in),
            reducer_h_b: uniform_fan_in(rng, vec![nq], h_in),
            phi_e: circuit(rng),
            phi_h: circuit(rng),
            phi_m: circuit(rng),
            phi_x: circuit(rng),
            head_m_w: uniform_fan_in(rng, vec![nq, 1], nq),
            head_m_b: uniform_fan_in(rng, vec![1], nq),
            head_x_w: uniform_fan_in(rng, vec![nq, 1], nq),
        })
    }

    /// Tensors in [`PARAM_NAMES`] order.
    pub fn tensors(&self) -> [&Tensor; 11] {
        [
            &self.reducer_e_w,
            &self.reducer_e_b,
            &self.reducer_h_w,
            &self.reducer_h_b,
            &self.phi_e,
            &self.phi_h,
            &self.phi_m,
            &self.phi_x,
            &self.head_m_w,
            &self.head_m_b,
            &self.head_x_w,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 11] {
        [
            &mut self.reducer_e_w,
            &mut self.reducer_e_b,
            &mut self.reducer_h_w,
            &mut self.reducer_h_b,
            &mut self.phi_e,
            &mut self.phi_h,
            &mut self.phi_m,
            &mut self.phi_x,
            &mut self.head_m_w,
            &mut self.head_m_b,
            &mut self.head_x_w,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Expected tensor shapes, in [`PARAM_NAMES`] order.
    pub fn expected_shapes(n_hidden: usize, shape: CircuitShape) -> [Vec<usize>; 11] {
        let nq = shape.n_qubits;
        let circ = vec![shape.q_depth, nq];
        [
            vec![2 * n_hidden + N_EDGE_ATTRIBUTES, nq],
            vec![nq],
            vec![2 * n_hidden, nq],
            vec![nq],
            circ.clone(),
            circ.clone(),
            circ.clone(),
            circ,
            vec![nq, 1],
            vec![1],
            vec![nq, 1],
        ]
    }

    /// Record every parameter as a leaf.
    pub fn on_tape(&self, tape: &mut Tape, trainable: bool) -> BlockVars {
        let [a, b, c, d, e, f, g, h, i, j, k] = self.tensors().map(|t| tape.leaf(t.clone(), trainable));
        BlockVars {
            reducer_e_w: a,
            reducer_e_b: b,
            reducer_h_w: c,
            reducer_h_b: d,
            phi_e: e,
            phi_h: f,
            phi_m: g,
            phi_x: h,
            head_m_w: i,
            head_m_b: j,
            head_x_w: k,
            shape: self.shape,
            n_hidden: self.n_hidden,
            c: self.c,
        }
    }
}

/// Tape handles for one block's parameters.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub reducer_e_w: Var,
    pub reducer_e_b: Var,
    pub reducer_h_w: Var,
    pub reducer_h_b: Var,
    pub phi_e: Var,
    pub phi_h: Var,
    pub phi_m: Var,
    pub phi_x: Var,
    pub head_m_w: Var,
    pub head_m_b: Var,
    pub head_x_w: Var,
    pub shape: CircuitShape,
    pub n_hidden: usize,
    pub c: f64,
}

impl BlockVars {
    /// Handles in [`PARAM_NAMES`] order.
    pub fn all(&self) -> [Var; 11] {
        [
            self.reducer_e_w,
            self.reducer_e_b,
            self.reducer_h_w,
            self.reducer_h_b,
            self.phi_e,
            self.phi_h,
            self.phi_m,
            self.phi_x,
            self.head_m_w,
            self.head_m_b,
            self.head_x_w,
        ]
    }
}

fn row4(x: &Tensor, i: usize) -> FourVector {
    let r = x.row(i);
    FourVector::new(r[0], r[1], r[2], r[3])
}

/// `η v` with `η = diag(1, -1, -1, -1)`.
fn lower(v: FourVector) -> [f64; 4] {
    [v.e, -v.px, -v.py, -v.pz]
}

fn check_coords(tape: &Tape, x: Var) -> Result<usize> {
    let (n, w) = tape.value(x).dims2()?;
    if w != 4 {
        return Err(Error::Dimension(format!("coordinates must be N×4, got N×{w}")));
    }
    Ok(n)
}

struct EdgeInvariantsOp {
    src: Vec<usize>,
    dst: Vec<usize>,
}

impl CustomOp for EdgeInvariantsOp {
    fn name(&self) -> &str {
        "edge_invariants"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, upstream: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let x = inputs[0];
        let mut g = vec![0.0; x.len()];
        for (e, (&i, &j)) in self.src.iter().zip(&self.dst).enumerate() {
            let (xi, xj) = (row4(x, i), row4(x, j));
            let d = xi - xj;
            let g_norm = upstream.at(e, 0) * psi_n_grad(mink_inner(d, d));
            let g_inner = upstream.at(e, 1) * psi_n_grad(mink_inner(xi, xj));
            let (ld, li, lj) = (lower(d), lower(xi), lower(xj));
            for k in 0..4 {
                g[i * 4 + k] += 2.0 * g_norm * ld[k] + g_inner * lj[k];
                g[j * 4 + k] += -2.0 * g_norm * ld[k] + g_inner * li[k];
            }
        }
        Ok(vec![Some(Tensor::new(x.shape().to_vec(), g)?)])
    }
}

/// `E×2` matrix `[ψ(‖x_i − x_j‖²), ψ(⟨x_i, x_j⟩)]` per edge.
pub fn edge_invariants_on_tape(tape: &mut Tape, x: Var, edges: &Edges) -> Result<Var> {
    let n = check_coords(tape, x)?;
    if n != edges.n_nodes() {
        return Err(Error::Dimension(format!("{n} coordinate rows for {} nodes", edges.n_nodes())));
    }
    let xv = tape.value(x);
    let mut out = Vec::with_capacity(2 * edges.len());
    for (&i, &j) in edges.src().iter().zip(edges.dst()) {
        let (xi, xj) = (row4(xv, i), row4(xv, j));
        out.push(psi_n(mink_norm2_diff(xi, xj)));
        out.push(psi_n(mink_inner(xi, xj)));
    }
    let t = Tensor::matrix(edges.len(), 2, out)?;
    tape.custom(
        &[x],
        t,
        Box::new(EdgeInvariantsOp {
            src: edges.src().to_vec(),
            dst: edges.dst().to_vec(),
        }),
    )
}

struct IrcPrefactorOp {
    src: Vec<usize>,
    dst: Vec<usize>,
    denominators: Vec<f64>,
}

impl CustomOp for IrcPrefactorOp {
    fn name(&self) -> &str {
        "irc_prefactor"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, upstream: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let x = inputs[0];
        // dL/ds_ik = (g_ik - Σ_j g_ij a_ij) / D_i
        let mut weighted = vec![0.0; self.denominators.len()];
        for (e, &i) in self.src.iter().enumerate() {
            weighted[i] += upstream.data()[e] * output.data()[e];
        }
        let mut g = vec![0.0; x.len()];
        for (e, (&i, &j)) in self.src.iter().zip(&self.dst).enumerate() {
            let gs = (upstream.data()[e] - weighted[i]) / self.denominators[i];
            let (li, lj) = (lower(row4(x, i)), lower(row4(x, j)));
            for k in 0..4 {
                g[i * 4 + k] += gs * lj[k];
                g[j * 4 + k] += gs * li[k];
            }
        }
        Ok(vec![Some(Tensor::new(x.shape().to_vec(), g)?)])
    }
}

/// `E×1` prefactors `⟨x_i, x_j⟩ / Σ_{k∈N(i)} ⟨x_i, x_k⟩`.
pub fn irc_prefactors_on_tape(tape: &mut Tape, x: Var, edges: &Edges) -> Result<Var> {
    let n = check_coords(tape, x)?;
    let xv = tape.value(x);
    let inner: Vec<f64> = edges
        .src()
        .iter()
        .zip(edges.dst())
        .map(|(&i, &j)| mink_inner(row4(xv, i), row4(xv, j)))
        .collect();
    let mut den = vec![0.0; n];
    for (&i, s) in edges.src().iter().zip(&inner) {
        den[i] += s;
    }
    if let Some((node, &d)) = den.iter().enumerate().find(|(_, d)| d.abs() < IRC_MIN_DENOMINATOR) {
        return Err(Error::DegenerateKinematics {
            node,
            denominator: d.abs(),
        });
    }
    let out: Vec<f64> = edges.src().iter().zip(&inner).map(|(&i, s)| s / den[i]).collect();
    let t = Tensor::matrix(edges.len(), 1, out)?;
    tape.custom(
        &[x],
        t,
        Box::new(IrcPrefactorOp {
            src: edges.src().to_vec(),
            dst: edges.dst().to_vec(),
            denominators: den,
        }),
    )
}

/// `E×(2·n_hidden + 2)` edge features `[h_i, h_j, ψ(‖x_i − x_j‖²), ψ(⟨x_i, x_j⟩)]`.
pub fn edge_features_on_tape(tape: &mut Tape, x: Var, h: Var, edges: &Edges) -> Result<Var> {
    let inv = edge_invariants_on_tape(tape, x, edges)?;
    let hi = tape.gather_rows(h, edges.src().to_vec())?;
    let hj = tape.gather_rows(h, edges.dst().to_vec())?;
    tape.concat_cols(&[hi, hj, inv])
}

/// Messages `m_ij`, `E×n_qubits`.
pub fn messages_on_tape(tape: &mut Tape, p: &BlockVars, x: Var, h: Var, edges: &Edges, opts: BlockOptions) -> Result<Var> {
    let feats = edge_features_on_tape(tape, x, h, edges)?;
    let reduced = tape.affine(feats, p.reducer_e_w, Some(p.reducer_e_b))?;
    let m = dressed_on_tape(tape, reduced, p.phi_e, p.shape, opts.grad_method)?;
    if opts.irc_safe {
        let a = irc_prefactors_on_tape(tape, x, edges)?;
        tape.mul_column(m, a)
    } else {
        Ok(m)
    }
}

/// Edge weights `w_ij ∈ (0, 1)`, `E×1`.
pub fn edge_weights_on_tape(tape: &mut Tape, p: &BlockVars, m: Var, opts: BlockOptions) -> Result<Var> {
    let q = dressed_on_tape(tape, m, p.phi_m, p.shape, opts.grad_method)?;
    let logit = tape.affine(q, p.head_m_w, Some(p.head_m_b))?;
    tape.activate(logit, Activation::Sigmoid)
}

struct ClampRowsOp {
    factors: Vec<f64>,
}

impl CustomOp for ClampRowsOp {
    fn name(&self) -> &str {
        "clamp_rows"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, upstream: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let cols = inputs[0].shape()[1];
        let g = upstream
            .data()
            .iter()
            .enumerate()
            .map(|(k, u)| u * self.factors[k / cols])
            .collect();
        Ok(vec![Some(Tensor::new(inputs[0].shape().to_vec(), g)?)])
    }
}

/// Rescales rows whose max-norm exceeds `limit`. The gradient holds the
/// rescaling factor fixed.
fn clamp_rows_on_tape(tape: &mut Tape, d: Var, limit: f64) -> Result<Var> {
    let dv = tape.value(d);
    let (rows, cols) = dv.dims2()?;
    let factors: Vec<f64> = (0..rows)
        .map(|r| {
            let m = dv.row(r).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if m > limit {
                limit / m
            } else {
                1.0
            }
        })
        .collect();
    if factors.iter().all(|&f| f == 1.0) {
        return Ok(d);
    }
    let clamped = factors.iter().filter(|&&f| f < 1.0).count();
    warn!("coordinate update clamped to |dx| <= {limit:e} on {clamped} of {rows} nodes");
    let data = dv.data().iter().enumerate().map(|(k, v)| v * factors[k / cols]).collect();
    let t = Tensor::matrix(rows, cols, data)?;
    tape.custom(&[d], t, Box::new(ClampRowsOp { factors }))
}

/// `x_i + c Σ_j (A_x φ_x(m_ij)) x_j`, with the update clamped.
pub fn coordinates_on_tape(tape: &mut Tape, p: &BlockVars, x: Var, m: Var, edges: &Edges, opts: BlockOptions) -> Result<Var> {
    let q = dressed_on_tape(tape, m, p.phi_x, p.shape, opts.grad_method)?;
    let s = tape.affine(q, p.head_x_w, None)?;
    let xj = tape.gather_rows(x, edges.dst().to_vec())?;
    let contrib = tape.mul_column(xj, s)?;
    let agg = tape.segment_sum(contrib, edges.src().to_vec(), edges.n_nodes())?;
    let delta = tape.scale(agg, p.c)?;
    let delta = clamp_rows_on_tape(tape, delta, COORD_CLAMP)?;
    tape.add(x, delta)
}

/// `h_i + φ_h(R_h [h_i, Σ_j w_ij m_ij])`.
pub fn scalars_on_tape(tape: &mut Tape, p: &BlockVars, h: Var, m: Var, w: Var, edges: &Edges, opts: BlockOptions) -> Result<Var> {
    let wm = tape.mul_column(m, w)?;
    let agg = tape.segment_sum(wm, edges.src().to_vec(), edges.n_nodes())?;
    let cat = tape.concat_cols(&[h, agg])?;
    let reduced = tape.affine(cat, p.reducer_h_w, Some(p.reducer_h_b))?;
    let dh = dressed_on_tape(tape, reduced, p.phi_h, p.shape, opts.grad_method)?;
    tape.add(h, dh)
}

/// One full block update `(x, h) -> (x', h')`.
pub fn block_on_tape(tape: &mut Tape, p: &BlockVars, x: Var, h: Var, edges: &Edges, opts: BlockOptions) -> Result<(Var, Var)> {
    let (n, width) = tape.value(h).dims2()?;
    if width != p.n_hidden || n != edges.n_nodes() {
        return Err(Error::Dimension(format!(
            "block expects h of {}×{}, got {n}×{width}",
            edges.n_nodes(),
            p.n_hidden
        )));
    }
    if n < 2 {
        return Err(Error::DegenerateGraph(format!("a block needs at least 2 nodes, got {n}")));
    }
    let m = messages_on_tape(tape, p, x, h, edges, opts)?;
    let w = edge_weights_on_tape(tape, p, m, opts)?;
    let x_next = coordinates_on_tape(tape, p, x, m, edges, opts)?;
    let h_next = scalars_on_tape(tape, p, h, m, w, edges, opts)?;
    Ok((x_next, h_next))
}

/// Node state between blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockState {
    pub x: Vec<FourVector>,
    /// `N × n_hidden`.
    pub h: Tensor,
}

impl BlockState {
    pub fn new(x: Vec<FourVector>, h: Tensor) -> Result<Self> {
        let (n, _) = h.dims2()?;
        if n != x.len() {
            return Err(Error::Dimension(format!("{} coordinates for {n} scalar rows", x.len())));
        }
        if n < 2 {
            return Err(Error::DegenerateGraph(format!("need at least 2 nodes, got {n}")));
        }
        if !h.all_finite() || !x.iter().all(FourVector::is_finite) {
            return Err(Error::NonFinite("block state".into()));
        }
        Ok(Self { x, h })
    }

    pub fn n_nodes(&self) -> usize {
        self.x.len()
    }

    fn coords_tensor(&self) -> Tensor {
        Tensor::matrix(self.x.len(), 4, self.x.iter().flat_map(|v| v.to_array()).collect()).expect("N×4")
    }
}

fn tensor_to_coords(t: &Tensor) -> Vec<FourVector> {
    (0..t.shape()[0]).map(|i| row4(t, i)).collect()
}

/// Messages indexed by edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMessages {
    pub edges: Edges,
    /// `E × n_qubits`.
    pub values: Tensor,
}

impl EdgeMessages {
    pub fn get(&self, i: usize, j: usize) -> Option<&[f64]> {
        self.edges.find(i, j).map(|e| self.values.row(e))
    }
}

struct Scratch {
    tape: Tape,
    vars: BlockVars,
}

impl Scratch {
    fn new(p: &LgeqbParams) -> Self {
        let mut tape = Tape::new();
        let vars = p.on_tape(&mut tape, false);
        Self { tape, vars }
    }
}

/// Edge feature vector for the ordered pair `(i, j)`.
pub fn edge_features(x: &[FourVector], h: &Tensor, i: usize, j: usize) -> Result<Vec<f64>> {
    if i == j {
        return Err(Error::InvalidArgument(format!("self-edge ({i}, {i}) has no features")));
    }
    let n = x.len();
    if i >= n || j >= n {
        return Err(Error::Index(format!("edge ({i}, {j}) in a {n}-node graph")));
    }
    if h.dims2()?.0 != n {
        return Err(Error::Dimension(format!("{} scalar rows for {n} nodes", h.dims2()?.0)));
    }
    let (xi, xj) = (x[i], x[j]);
    let mut f = h.row(i).to_vec();
    f.extend_from_slice(h.row(j));
    f.push(psi_n(mink_norm2_diff(xi, xj)));
    f.push(psi_n(mink_inner(xi, xj)));
    Ok(f)
}

/// `φ_e(R_e feats)` for one edge feature vector.
pub fn compute_message(p: &LgeqbParams, feats: &[f64]) -> Result<Vec<f64>> {
    let want = 2 * p.n_hidden + N_EDGE_ATTRIBUTES;
    if feats.len() != want {
        return Err(Error::Dimension(format!("edge features have length {}, expected {want}", feats.len())));
    }
    let mut s = Scratch::new(p);
    let f = s.tape.constant(Tensor::matrix(1, want, feats.to_vec())?);
    let r = s.tape.affine(f, s.vars.reducer_e_w, Some(s.vars.reducer_e_b))?;
    let m = dressed_on_tape(&mut s.tape, r, s.vars.phi_e, p.shape, GradMethod::Adjoint)?;
    Ok(s.tape.value(m).data().to_vec())
}

/// Messages for every edge of the complete graph.
pub fn compute_messages(p: &LgeqbParams, state: &BlockState, opts: BlockOptions) -> Result<EdgeMessages> {
    let edges = Edges::complete(state.n_nodes(), opts.self_edges);
    let mut s = Scratch::new(p);
    let x = s.tape.constant(state.coords_tensor());
    let h = s.tape.constant(state.h.clone());
    let m = messages_on_tape(&mut s.tape, &s.vars, x, h, &edges, opts)?;
    Ok(EdgeMessages {
        values: s.tape.value(m).clone(),
        edges,
    })
}

/// Messages with the IRC-safe prefactor applied.
pub fn irc_safe_messages(p: &LgeqbParams, state: &BlockState) -> Result<EdgeMessages> {
    compute_messages(
        p,
        state,
        BlockOptions {
            irc_safe: true,
            ..BlockOptions::default()
        },
    )
}

/// IRC prefactors for the complete graph without self-edges, in edge order.
pub fn irc_prefactors(x: &[FourVector]) -> Result<Vec<f64>> {
    let edges = Edges::complete(x.len(), false);
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::matrix(x.len(), 4, x.iter().flat_map(|v| v.to_array()).collect())?);
    let a = irc_prefactors_on_tape(&mut tape, xv, &edges)?;
    Ok(tape.value(a).data().to_vec())
}

/// `sigmoid(A_m φ_m(m) + b_m)` for one message.
pub fn edge_weight(p: &LgeqbParams, m: &[f64]) -> Result<f64> {
    if m.len() != p.shape.n_qubits {
        return Err(Error::Dimension(format!("message of length {}, expected {}", m.len(), p.shape.n_qubits)));
    }
    let mut s = Scratch::new(p);
    let mv = s.tape.constant(Tensor::matrix(1, m.len(), m.to_vec())?);
    let w = edge_weights_on_tape(&mut s.tape, &s.vars, mv, BlockOptions::default())?;
    Ok(s.tape.value(w).data()[0])
}

fn check_messages(p: &LgeqbParams, n: usize, messages: &EdgeMessages) -> Result<()> {
    if messages.edges.n_nodes() != n {
        return Err(Error::Dimension(format!("messages for {} nodes, state has {n}", messages.edges.n_nodes())));
    }
    if messages.values.dims2()? != (messages.edges.len(), p.shape.n_qubits) {
        return Err(Error::Dimension(format!("message matrix {:?}", messages.values.shape())));
    }
    Ok(())
}

/// Coordinate update from precomputed messages.
pub fn update_coordinates(p: &LgeqbParams, x: &[FourVector], messages: &EdgeMessages) -> Result<Vec<FourVector>> {
    check_messages(p, x.len(), messages)?;
    let mut s = Scratch::new(p);
    let xv = s.tape.constant(Tensor::matrix(x.len(), 4, x.iter().flat_map(|v| v.to_array()).collect())?);
    let m = s.tape.constant(messages.values.clone());
    let out = coordinates_on_tape(&mut s.tape, &s.vars, xv, m, &messages.edges, BlockOptions::default())?;
    Ok(tensor_to_coords(s.tape.value(out)))
}

/// Scalar update from precomputed messages and one weight per edge.
pub fn update_scalars(p: &LgeqbParams, h: &Tensor, messages: &EdgeMessages, weights: &[f64]) -> Result<Tensor> {
    let (n, _) = h.dims2()?;
    check_messages(p, n, messages)?;
    if weights.len() != messages.edges.len() {
        return Err(Error::Dimension(format!("{} weights for {} edges", weights.len(), messages.edges.len())));
    }
    let mut s = Scratch::new(p);
    let hv = s.tape.constant(h.clone());
    let m = s.tape.constant(messages.values.clone());
    let w = s.tape.constant(Tensor::matrix(weights.len(), 1, weights.to_vec())?);
    let out = scalars_on_tape(&mut s.tape, &s.vars, hv, m, w, &messages.edges, BlockOptions::default())?;
    Ok(s.tape.value(out).clone())
}

/// One block update outside any training tape.
pub fn block_forward(p: &LgeqbParams, state: &BlockState, opts: BlockOptions) -> Result<BlockState> {
    let edges = Edges::complete(state.n_nodes(), opts.self_edges);
    let mut s = Scratch::new(p);
    let x = s.tape.constant(state.coords_tensor());
    let h = s.tape.constant(state.h.clone());
    let (x2, h2) = block_on_tape(&mut s.tape, &s.vars, x, h, &edges, opts)?;
    Ok(BlockState {
        x: tensor_to_coords(s.tape.value(x2)),
        h: s.tape.value(h2).clone(),
    })
}

/// Additivity check for a collinear splitting in IRC-safe mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollinearReport {
    /// `‖m(i, j_a) + m(i, j_b) − m(i, j)‖₂`.
    pub residual: f64,
    /// `‖m(i, j)‖₂`.
    pub reference: f64,
}

/// Splits node `j` into two exactly collinear daughters carrying momentum
/// fractions `z` and `1 − z` (scalars copied) and measures how far the IRC
/// messages from node `i` are from adding up.
pub fn collinear_residual(p: &LgeqbParams, state: &BlockState, i: usize, j: usize, z: f64) -> Result<CollinearReport> {
    let n = state.n_nodes();
    if i == j || i >= n || j >= n {
        return Err(Error::Index(format!("nodes ({i}, {j}) in a {n}-node graph")));
    }
    if !(0.0..1.0).contains(&z) || z == 0.0 {
        return Err(Error::InvalidArgument(format!("momentum fraction must be in (0, 1), got {z}")));
    }
    let whole = irc_safe_messages(p, state)?;
    let mut x = state.x.clone();
    x[j] = state.x[j] * z;
    x.push(state.x[j] * (1.0 - z));
    let mut h = state.h.data().to_vec();
    h.extend_from_slice(state.h.row(j));
    let split_state = BlockState::new(x, Tensor::matrix(n + 1, p.n_hidden, h)?)?;
    let split = irc_safe_messages(p, &split_state)?;
    let m = whole.get(i, j).expect("edge exists");
    let (ma, mb) = (split.get(i, j).expect("edge exists"), split.get(i, n).expect("edge exists"));
    let residual = m.iter().zip(ma).zip(mb).map(|((m, a), b)| (a + b - m).powi(2)).sum::<f64>().sqrt();
    let reference = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(CollinearReport { residual, reference })
}
