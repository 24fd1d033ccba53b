//! Converter from `(pT, eta, phi, PID)` particle rows to the jet interchange format.
//!
//! Input is JSONL with one jet per line:
//! `{"label": 0|1, "particles": [[pt, eta, phi, pid], ...]}`, which is how the
//! public quark-gluon arrays look after a `numpy -> json` dump. Rows with
//! `pt == 0` are zero padding and are dropped.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::JetRecord;
use crate::{Error, Result};

/// `(|PID|, mass in GeV, charge for the positive PID)`.
const PID_TABLE: &[(i64, f64, f64)] = &[
    (11, 0.000_510_998_95, -1.0),
    (13, 0.105_658_375_5, -1.0),
    (22, 0.0, 0.0),
    (130, 0.497_611, 0.0),
    (211, 0.139_570_39, 1.0),
    (321, 0.493_677, 1.0),
    (2112, 0.939_565_42, 0.0),
    (2212, 0.938_272_088, 1.0),
];

pub fn pid_mass(pid: i64) -> Option<f64> {
    PID_TABLE.iter().find(|e| e.0 == pid.abs()).map(|e| e.1)
}

pub fn pid_charge(pid: i64) -> Option<f64> {
    PID_TABLE
        .iter()
        .find(|e| e.0 == pid.abs())
        .map(|e| e.2 * pid.signum() as f64)
}

/// `(e, px, py, pz)` with `e = sqrt(|p|^2 + m^2)`.
pub fn pt_eta_phi_to_fourvector(pt: f64, eta: f64, phi: f64, mass: f64) -> [f64; 4] {
    let (px, py, pz) = (pt * phi.cos(), pt * phi.sin(), pt * eta.sinh());
    let p2 = px * px + py * py + pz * pz;
    [(p2 + mass * mass).sqrt(), px, py, pz]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvertStats {
    pub read: usize,
    pub written: usize,
    pub padding_rows_dropped: usize,
    pub errors: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJet {
    label: u8,
    particles: Vec<[f64; 4]>,
}

fn convert_line(line: &str, lineno: usize, with_charge: bool, dropped: &mut usize) -> Result<JetRecord> {
    let schema = |field: String, message: String| Error::Schema {
        line: lineno,
        field,
        message,
    };
    let raw: RawJet = serde_json::from_str(line).map_err(|e| schema("$".into(), e.to_string()))?;
    if raw.label > 1 {
        return Err(schema("label".into(), format!("expected 0 or 1, got {}", raw.label)));
    }
    let mut particles = Vec::new();
    let mut charges = Vec::new();
    for (k, &[pt, eta, phi, pid]) in raw.particles.iter().enumerate() {
        if pt == 0.0 {
            *dropped += 1;
            continue;
        }
        let field = format!("particles[{k}]");
        if ![pt, eta, phi, pid].iter().all(|v| v.is_finite()) || pt < 0.0 {
            return Err(schema(field, "non-finite value or negative pT".into()));
        }
        let pid = pid.round() as i64;
        let mass = pid_mass(pid).ok_or_else(|| schema(field.clone(), format!("unknown PID {pid}")))?;
        particles.push(pt_eta_phi_to_fourvector(pt, eta, phi, mass));
        charges.push(vec![pid_charge(pid).unwrap_or(0.0)]);
    }
    if particles.is_empty() {
        return Err(schema("particles".into(), "no particle with nonzero pT".into()));
    }
    Ok(JetRecord {
        label: raw.label,
        particles,
        scalars: with_charge.then_some(charges),
    })
}

/// Converts a `(pT, eta, phi, PID)` JSONL file. Malformed jets are listed in
/// the returned stats and skipped. With `with_charge`, each particle gets its
/// electric charge as the single extra scalar.
pub fn convert_energyflow_jsonl(input: impl AsRef<Path>, output: impl AsRef<Path>, with_charge: bool) -> Result<ConvertStats> {
    let (input, output) = (input.as_ref(), output.as_ref());
    let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let file = fs::File::create(output).map_err(|e| Error::io(output, e))?;
    let mut w = BufWriter::new(file);
    let mut stats = ConvertStats::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        stats.read += 1;
        match convert_line(line, i + 1, with_charge, &mut stats.padding_rows_dropped) {
            Ok(rec) => {
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n").map_err(|e| Error::io(output, e))?;
                stats.written += 1;
            }
            Err(e) => stats.errors.push(e.to_string()),
        }
    }
    w.flush().map_err(|e| Error::io(output, e))?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_jsonl;
    use crate::minkowski::invariant_mass2;
    use crate::FourVector;

    #[test]
    fn kinematics_reproduce_mass_and_pt() {
        let p = pt_eta_phi_to_fourvector(30.0, 1.2, -2.0, 0.13957039);
        let v = FourVector::from_array(p);
        assert!((v.pt() - 30.0).abs() < 1e-12);
        assert!((invariant_mass2(v) - 0.13957039f64.powi(2)).abs() < 1e-9);
        assert!((p[3] / 30.0 - 1.2f64.sinh()).abs() < 1e-12);
    }

    #[test]
    fn pid_lookup() {
        assert_eq!(pid_charge(-211), Some(-1.0));
        assert_eq!(pid_charge(11), Some(-1.0));
        assert_eq!(pid_charge(-11), Some(1.0));
        assert_eq!(pid_mass(22), Some(0.0));
        assert_eq!(pid_mass(999), None);
    }

    #[test]
    fn converts_file_and_drops_padding() {
        let dir = tempfile::tempdir().unwrap();
        let (src, dst) = (dir.path().join("qg.jsonl"), dir.path().join("jets.jsonl"));
        fs::write(
            &src,
            "{\"label\":1,\"particles\":[[10,0.1,0.2,211],[5,-0.1,0.3,22],[0,0,0,0]]}\n\
             {\"label\":0,\"particles\":[[10,0.1,0.2,777]]}\n",
        )
        .unwrap();
        let stats = convert_energyflow_jsonl(&src, &dst, true).unwrap();
        assert_eq!((stats.read, stats.written, stats.padding_rows_dropped), (2, 1, 1));
        assert!(stats.errors[0].contains("unknown PID 777"));
        let recs = parse_jsonl(&dst).unwrap();
        assert_eq!(recs[0].particles.len(), 2);
        assert_eq!(recs[0].scalars, Some(vec![vec![1.0], vec![0.0]]));
    }
}
