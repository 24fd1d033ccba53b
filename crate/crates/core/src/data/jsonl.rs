use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{build_jet_graph, JetGraph, JetRecord};
use crate::{Error, Result};

/// Summary of one ingestion run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub read: usize,
    pub parsed: usize,
    pub skipped_min_particles: usize,
    pub errors: Vec<String>,
}

impl IngestReport {
    pub fn merge(&mut self, other: IngestReport) {
        self.read += other.read;
        self.parsed += other.parsed;
        self.skipped_min_particles += other.skipped_min_particles;
        self.errors.extend(other.errors);
    }
}

fn schema(line: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        line,
        field: field.into(),
        message: message.into(),
    }
}

fn finite_number(v: &Value, line: usize, field: &str) -> Result<f64> {
    match v.as_f64() {
        Some(x) if x.is_finite() => Ok(x),
        Some(x) => Err(schema(line, field, format!("non-finite value {x}"))),
        None => Err(schema(line, field, format!("expected a number, got {v}"))),
    }
}

pub(super) fn parse_record(text: &str, line: usize) -> Result<JetRecord> {
    let v: Value = serde_json::from_str(text).map_err(|e| schema(line, "$", e.to_string()))?;
    let obj = v
        .as_object()
        .ok_or_else(|| schema(line, "$", "expected a JSON object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "label" | "particles" | "scalars") {
            return Err(schema(line, key.clone(), "unknown field"));
        }
    }
    let label = match obj.get("label").and_then(Value::as_u64) {
        Some(l @ (0 | 1)) => l as u8,
        Some(l) => return Err(schema(line, "label", format!("expected 0 or 1, got {l}"))),
        None => return Err(schema(line, "label", "missing or not an integer")),
    };
    let raw = obj
        .get("particles")
        .and_then(Value::as_array)
        .ok_or_else(|| schema(line, "particles", "missing or not an array"))?;
    if raw.is_empty() {
        return Err(schema(line, "particles", "at least one particle required"));
    }
    let mut particles = Vec::with_capacity(raw.len());
    for (k, p) in raw.iter().enumerate() {
        let field = format!("particles[{k}]");
        let comps = p
            .as_array()
            .ok_or_else(|| schema(line, &field, "expected [e, px, py, pz]"))?;
        if comps.len() != 4 {
            return Err(schema(
                line,
                &field,
                format!("expected 4 components, got {}", comps.len()),
            ));
        }
        let mut four = [0.0; 4];
        for (c, slot) in four.iter_mut().enumerate() {
            *slot = finite_number(&comps[c], line, &format!("{field}[{c}]"))?;
        }
        particles.push(four);
    }
    let scalars = match obj.get("scalars") {
        None | Some(Value::Null) => None,
        Some(Value::Array(rows)) => {
            if rows.len() != particles.len() {
                return Err(schema(
                    line,
                    "scalars",
                    format!("{} rows for {} particles", rows.len(), particles.len()),
                ));
            }
            let mut out = Vec::with_capacity(rows.len());
            let mut width = None;
            for (k, row) in rows.iter().enumerate() {
                let field = format!("scalars[{k}]");
                let vals = row
                    .as_array()
                    .ok_or_else(|| schema(line, &field, "expected an array"))?;
                if *width.get_or_insert(vals.len()) != vals.len() {
                    return Err(schema(line, &field, "rows must share one width"));
                }
                out.push(
                    vals.iter()
                        .enumerate()
                        .map(|(c, x)| finite_number(x, line, &format!("{field}[{c}]")))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            Some(out)
        }
        Some(_) => return Err(schema(line, "scalars", "expected an array of arrays")),
    };
    Ok(JetRecord {
        label,
        particles,
        scalars,
    })
}

/// Strict parse: the first malformed line is an error. Blank lines are skipped.
pub fn parse_jsonl_str(text: &str) -> Result<Vec<JetRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_record(l, i + 1))
        .collect()
}

pub fn parse_jsonl(path: impl AsRef<Path>) -> Result<Vec<JetRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl_str(&text)
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[JetRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Lenient ingestion: malformed lines are recorded in the report and skipped.
pub fn ingest_jsonl(path: impl AsRef<Path>, min_particles: usize) -> Result<(Vec<JetGraph>, IngestReport)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut report = IngestReport::default();
    let mut graphs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.read += 1;
        match parse_record(line, i + 1) {
            Ok(r) => {
                report.parsed += 1;
                match build_jet_graph(&r, min_particles) {
                    Some(g) => graphs.push(g),
                    None => report.skipped_min_particles += 1,
                }
            }
            Err(e) => report.errors.push(e.to_string()),
        }
    }
    Ok((graphs, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_input_is_empty() {
        assert!(parse_jsonl_str("").unwrap().is_empty());
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(parse_jsonl(f.path()).unwrap().is_empty());
    }

    #[test]
    fn one_valid_line_is_bit_exact() {
        let text = r#"{"label": 1, "particles": [[1.5, 0.1, -0.2, 0.30000000000000004]]}"#;
        let r = parse_jsonl_str(text).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].label, 1);
        assert_eq!(r[0].particles[0], [1.5, 0.1, -0.2, 0.30000000000000004]);
        assert_eq!(r[0].scalars, None);
    }

    #[test]
    fn three_component_particle_names_line_and_field() {
        let text = r#"{"label": 0, "particles": [[1.0, 0.0, 0.0]]}"#;
        match parse_jsonl_str(text) {
            Err(Error::Schema { line, field, .. }) => {
                assert_eq!(line, 1);
                assert_eq!(field, "particles[0]");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn other_schema_violations() {
        for bad in [
            r#"{"label": 2, "particles": [[1,0,0,0]]}"#,
            r#"{"particles": [[1,0,0,0]]}"#,
            r#"{"label": 0, "particles": []}"#,
            r#"{"label": 0, "particles": [[1,0,0,"x"]]}"#,
            r#"{"label": 0, "particles": [[1,0,0,0]], "scalars": [[1],[2]]}"#,
            r#"{"label": 0, "particles": [[1,0,0,0]], "extra": 1}"#,
            "not json",
        ] {
            assert!(matches!(parse_jsonl_str(bad), Err(Error::Schema { .. })), "{bad}");
        }
        let two = "{\"label\":0,\"particles\":[[1,0,0,0]]}\n{\"label\":0}";
        assert!(matches!(parse_jsonl_str(two), Err(Error::Schema { line: 2, .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(parse_jsonl("/nonexistent/jets.jsonl"), Err(Error::Io { .. })));
    }

    #[test]
    fn ingestion_report_counts() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        let big: Vec<[f64; 4]> = (0..10).map(|i| [5.0 + i as f64, 1.0, 0.0, 1.0]).collect();
        let ok = JetRecord { label: 0, particles: big, scalars: None };
        writeln!(f, "{}", serde_json::to_string(&ok).unwrap()).unwrap();
        writeln!(f, r#"{{"label": 1, "particles": [[1,0,0,0]]}}"#).unwrap();
        writeln!(f, r#"{{"label": 1, "particles": [[1,0,0]]}}"#).unwrap();
        let (graphs, rep) = ingest_jsonl(f.path(), 10).unwrap();
        assert_eq!(graphs.len(), 1);
        assert_eq!((rep.read, rep.parsed, rep.skipped_min_particles), (3, 2, 1));
        assert_eq!(rep.errors.len(), 1);
        assert!(rep.errors[0].contains("line 3"));
    }

    fn record_strategy() -> impl Strategy<Value = JetRecord> {
        (
            0u8..2,
            prop::collection::vec(prop::array::uniform4(-1e3f64..1e3), 1..20),
            any::<bool>(),
        )
            .prop_map(|(label, particles, with_scalars)| {
                let scalars = with_scalars.then(|| particles.iter().map(|p| vec![p[0].signum(), p[1] * 0.5]).collect());
                JetRecord { label, particles, scalars }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn write_then_parse_round_trips(records in prop::collection::vec(record_strategy(), 0..8)) {
            let f = tempfile::NamedTempFile::new().unwrap();
            write_jsonl(f.path(), &records).unwrap();
            prop_assert_eq!(parse_jsonl(f.path()).unwrap(), records);
        }
    }
}
