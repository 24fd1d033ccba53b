//! Hybrid quantum-classical graph network for jet tagging.
//!
//! Message passing is built from Minkowski invariants, so the network is
//! Lorentz invariant in its scalar channel and Lorentz equivariant in its
//! coordinate channel. Every learned sub-network of a block is a dressed
//! variational quantum circuit, simulated exactly on a small statevector
//! register and differentiated either by the adjoint method or by the
//! parameter-shift rule.
//!
//! Layout:
//! * [`minkowski`]: four-vectors, the metric, random Lorentz transforms.
//! * [`autodiff`]: dense tensors and a reverse-mode tape.
//! * [`qsim`]: statevector simulator with parameter-shift gradients.
//! * [`dressed`]: the dressed quantum circuit layer.
//! * [`lgeqb`]: one Lorentz group equivariant quantum block.
//! * [`model`]: the full network, parameter store and checkpoints.
//! * [`data`]: JSONL ingestion, image graphs, splits, synthetic jets.
//! * [`train`]: AdamW, learning-rate schedule, metrics, k-fold training.
//! * [`verify`]: randomized invariant suites shared by the CLI.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod dressed;
mod error;
pub mod lgeqb;
pub mod minkowski;
pub mod model;
pub mod qsim;
pub mod seed;
pub mod train;
pub mod verify;

pub use error::{Error, Result};

pub use autodiff::{Tape, Tensor, Var};
pub use config::RunConfig;
pub use data::{JetGraph, JetRecord};
pub use dressed::{CircuitShape, DressedCircuit};
pub use minkowski::{FourVector, LorentzTransform};
pub use model::{LorentzEqgnn, ModelConfig, Mode, Prediction};
pub use qsim::{GateKind, GateOp, StateVector};
pub use train::{MetricsReport, TrainConfig};
