use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::JetGraph;
use crate::minkowski::FourVector;
use crate::{Error, Result};

pub const HEP8_WIDTH: usize = 8;
pub const POINT4_WIDTH: usize = 4;

/// Pixels must exceed this fraction of the image maximum to become nodes.
pub const DEFAULT_THRESHOLD: f64 = 0.01;

/// Per-node feature layout for image-derived graphs.
///
/// * `Hep8`: `[intensity, x_norm, y_norm, r, azimuth, ln(1 + intensity),
///   intensity / total, rank percentile]`, where `r` and `azimuth` are taken
///   about the image centre `(0.5, 0.5)`, `total` sums the selected pixels and
///   the brightest node has percentile 1.
/// * `Point4`: `[x_norm, y_norm, intensity, 0]`.
///
/// Normalised coordinates are pixel centres: `x_norm = (col + 0.5) / W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Hep8,
    Point4,
}

impl FeatureMode {
    pub fn width(self) -> usize {
        match self {
            FeatureMode::Hep8 => HEP8_WIDTH,
            FeatureMode::Point4 => POINT4_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub label: u8,
    pub pixels: Vec<Vec<f64>>,
}

/// Builds a fully connected graph from the `max_points` brightest pixels.
///
/// Nodes are ordered by descending intensity; ties keep row-major order.
/// Momenta are `(intensity, x_norm, y_norm, 0)` and the features land in
/// [`JetGraph::scalars`].
pub fn image_to_graph(
    pixels: &[Vec<f64>],
    max_points: usize,
    mode: FeatureMode,
    label: u8,
) -> Result<JetGraph> {
    let h = pixels.len();
    let w = pixels.first().map_or(0, Vec::len);
    if h == 0 || w == 0 {
        return Err(Error::EmptyGraph("image has no pixels".into()));
    }
    if let Some(r) = pixels.iter().position(|row| row.len() != w) {
        return Err(Error::Dimension(format!(
            "row {r} has {} pixels, expected {w}",
            pixels[r].len()
        )));
    }
    if pixels.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("image contains non-finite pixels".into()));
    }
    if max_points == 0 {
        return Err(Error::InvalidArgument("max_points must be positive".into()));
    }
    let max = pixels.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        return Err(Error::EmptyGraph("no pixel has positive intensity".into()));
    }
    let cut = DEFAULT_THRESHOLD * max;
    let mut lit: Vec<(usize, usize, f64)> = pixels
        .iter()
        .enumerate()
        .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, &v)| (r, c, v)))
        .filter(|&(_, _, v)| v > cut)
        .collect();
    lit.sort_by(|a, b| b.2.total_cmp(&a.2));
    lit.truncate(max_points);

    let n = lit.len();
    let total: f64 = lit.iter().map(|p| p.2).sum();
    let mut momenta = Vec::with_capacity(n);
    let mut scalars = Vec::with_capacity(n);
    for (rank, &(r, c, v)) in lit.iter().enumerate() {
        let x = (c as f64 + 0.5) / w as f64;
        let y = (r as f64 + 0.5) / h as f64;
        momenta.push(FourVector::new(v, x, y, 0.0));
        scalars.push(match mode {
            FeatureMode::Point4 => vec![x, y, v, 0.0],
            FeatureMode::Hep8 => {
                let (dx, dy) = (x - 0.5, y - 0.5);
                vec![
                    v,
                    x,
                    y,
                    dx.hypot(dy),
                    dy.atan2(dx),
                    v.ln_1p(),
                    v / total,
                    (n - rank) as f64 / n as f64,
                ]
            }
        });
    }
    Ok(JetGraph::new(momenta, scalars, label))
}

/// Strict parse of `{"label": int, "pixels": [[...], ...]}` lines.
pub fn parse_image_jsonl(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<ImageRecord>(l).map_err(|e| Error::Schema {
                line: i + 1,
                field: "$".into(),
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn blank(h: usize, w: usize) -> Vec<Vec<f64>> {
        vec![vec![0.0; w]; h]
    }

    #[test]
    fn centre_pixel_is_centred() {
        let mut img = blank(33, 33);
        img[16][16] = 3.0;
        let g = image_to_graph(&img, 10, FeatureMode::Hep8, 0).unwrap();
        assert_eq!(g.n_nodes(), 1);
        let s = &g.scalars[0];
        assert_eq!(s.len(), HEP8_WIDTH);
        assert!((s[1] - 0.5).abs() < 1e-12 && (s[2] - 0.5).abs() < 1e-12);
        assert!(s[3].abs() < 1e-12);
        assert_eq!(s[6], 1.0);
        assert_eq!(s[7], 1.0);
    }

    #[test]
    fn top_k_keeps_the_brightest() {
        let mut img = blank(10, 10);
        for k in 0..50 {
            img[k / 10][k % 10] = 1.0 + k as f64;
        }
        let g = image_to_graph(&img, 10, FeatureMode::Point4, 1).unwrap();
        assert_eq!(g.n_nodes(), 10);
        let got: Vec<f64> = g.scalars.iter().map(|s| s[2]).collect();
        let want: Vec<f64> = (41..=50).rev().map(f64::from).collect();
        assert_eq!(got, want);
        assert_eq!(g.edge_count(), 90);
    }

    #[test]
    fn point4_placeholder_is_zero() {
        let img: Vec<Vec<f64>> = (0..8).map(|r| (0..8).map(|c| ((r * 8 + c) % 7) as f64).collect()).collect();
        let g = image_to_graph(&img, 10, FeatureMode::Point4, 0).unwrap();
        assert!(g.scalars.iter().all(|s| s.len() == POINT4_WIDTH && s[3] == 0.0));
        for (p, s) in g.momenta.iter().zip(&g.scalars) {
            assert_eq!([p.e, p.px, p.py, p.pz], [s[2], s[0], s[1], 0.0]);
        }
    }

    #[test]
    fn threshold_drops_faint_pixels() {
        let mut img = blank(4, 4);
        img[0][0] = 100.0;
        img[1][1] = 1.0;
        img[2][2] = 1.5;
        let g = image_to_graph(&img, 10, FeatureMode::Hep8, 0).unwrap();
        assert_eq!(g.n_nodes(), 2);
    }

    #[test]
    fn all_zero_image_is_empty_graph() {
        assert!(matches!(
            image_to_graph(&blank(5, 5), 10, FeatureMode::Hep8, 0),
            Err(Error::EmptyGraph(_))
        ));
        let ragged = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(matches!(image_to_graph(&ragged, 3, FeatureMode::Hep8, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn image_jsonl_parses() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"label": 1, "pixels": [[0, 1], [2, 3]]}}"#).unwrap();
        let recs = parse_image_jsonl(f.path()).unwrap();
        assert_eq!(recs, vec![ImageRecord { label: 1, pixels: vec![vec![0.0, 1.0], vec![2.0, 3.0]] }]);
        writeln!(f, r#"{{"label": 1}}"#).unwrap();
        assert!(matches!(parse_image_jsonl(f.path()), Err(Error::Schema { line: 2, .. })));
    }
}
