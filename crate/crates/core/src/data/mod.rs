//! Dataset ingestion and graph construction.

mod energyflow;
mod image;
mod jsonl;
mod split;
mod synth;

use serde::{Deserialize, Serialize};

use crate::minkowski::{FourVector, LorentzTransform};

pub use energyflow::{convert_energyflow_jsonl, pid_charge, pid_mass, pt_eta_phi_to_fourvector, ConvertStats};
pub use image::{image_to_graph, parse_image_jsonl, FeatureMode, ImageRecord, HEP8_WIDTH, POINT4_WIDTH};
pub use jsonl::{ingest_jsonl, parse_jsonl, parse_jsonl_str, write_jsonl, IngestReport};
pub use split::{stratified_folds, stratified_split, DatasetSplit};
pub use synth::{synth_jets, SynthParams};

/// Default minimum multiplicity for a jet to become a graph.
pub const DEFAULT_MIN_PARTICLES: usize = 10;

/// One jet as stored in the JSONL interchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JetRecord {
    pub label: u8,
    /// `(e, px, py, pz)` per particle, GeV.
    pub particles: Vec<[f64; 4]>,
    /// Optional extra per-particle scalars (PID, charge, ...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalars: Option<Vec<Vec<f64>>>,
}

/// A fully connected particle graph.
#[derive(Debug, Clone, PartialEq)]
pub struct JetGraph {
    pub momenta: Vec<FourVector>,
    /// Extra per-node scalars; every row has the same width (possibly 0).
    pub scalars: Vec<Vec<f64>>,
    pub label: u8,
}

impl JetGraph {
    pub fn new(momenta: Vec<FourVector>, scalars: Vec<Vec<f64>>, label: u8) -> Self {
        debug_assert_eq!(momenta.len(), scalars.len());
        Self {
            momenta,
            scalars,
            label,
        }
    }

    pub fn from_momenta(momenta: Vec<FourVector>, label: u8) -> Self {
        let scalars = vec![Vec::new(); momenta.len()];
        Self::new(momenta, scalars, label)
    }

    pub fn n_nodes(&self) -> usize {
        self.momenta.len()
    }

    /// `N (N - 1)` ordered pairs.
    pub fn edge_count(&self) -> usize {
        let n = self.n_nodes();
        n * n.saturating_sub(1)
    }

    /// Ordered edges `(i, j)` with `i != j`, grouped by `i`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n_nodes();
        (0..n).flat_map(move |i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
    }

    /// Node `k` of the result is node `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> JetGraph {
        JetGraph {
            momenta: perm.iter().map(|&i| self.momenta[i]).collect(),
            scalars: perm.iter().map(|&i| self.scalars[i].clone()).collect(),
            label: self.label,
        }
    }

    pub fn transformed(&self, t: &LorentzTransform) -> JetGraph {
        JetGraph {
            momenta: self.momenta.iter().map(|&p| t.apply(p)).collect(),
            scalars: self.scalars.clone(),
            label: self.label,
        }
    }

    pub fn to_record(&self) -> JetRecord {
        let has_scalars = self.scalars.iter().any(|s| !s.is_empty());
        JetRecord {
            label: self.label,
            particles: self.momenta.iter().map(|p| p.to_array()).collect(),
            scalars: has_scalars.then(|| self.scalars.clone()),
        }
    }
}

/// A graph when the record has at least `min_particles` particles, else `None`.
/// Particle order is preserved as node order.
pub fn build_jet_graph(r: &JetRecord, min_particles: usize) -> Option<JetGraph> {
    if r.particles.len() < min_particles {
        return None;
    }
    let momenta = r.particles.iter().map(|&p| FourVector::from_array(p)).collect();
    let scalars = match &r.scalars {
        Some(s) => s.clone(),
        None => vec![Vec::new(); r.particles.len()],
    };
    Some(JetGraph::new(momenta, scalars, r.label))
}
