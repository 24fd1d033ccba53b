use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// `1/ε_B`. Serialised as a number, the string `"inf"` when no background
/// passes the cut, or `null` when undefined (NaN).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Rejection(pub f64);

impl Rejection {
    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else if self.0.is_nan() {
            f.write_str("undefined")
        } else {
            write!(f, "{:.3}", self.0)
        }
    }
}

impl Serialize for Rejection {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else if self.0.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_str("inf")
        }
    }
}

impl<'de> Deserialize<'de> for Rejection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Rejection;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number, \"inf\" or null")
            }
            fn visit_unit<E: de::Error>(self) -> std::result::Result<Rejection, E> {
                Ok(Rejection(f64::NAN))
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Rejection, E> {
                Ok(Rejection(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Rejection, E> {
                Ok(Rejection(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Rejection, E> {
                Ok(Rejection(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Rejection, E> {
                match v {
                    "inf" => Ok(Rejection(f64::INFINITY)),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("classifier scores".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "need both classes, got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUC: `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`, from tie-averaged ranks.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps tied (half-integer) ranks exact.
    let mut rank2_pos: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank2 = (i + 1 + j + 1) as u128;
        let n_pos_tied = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank2_pos += rank2 * n_pos_tied;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u2 = rank2_pos - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Background rejection `1/ε_B` at signal efficiency `eps_s`.
///
/// Jets with `score >= threshold` are tagged as signal. The threshold is the
/// tightest one whose true-positive rate is still at least `eps_s`, i.e. the
/// `ceil(eps_s · n_signal)`-th highest signal score.
pub fn background_rejection(scores: &[f64], labels: &[u8], eps_s: f64) -> Result<Rejection> {
    let (pos, neg) = class_counts(scores, labels)?;
    if !(eps_s > 0.0 && eps_s < 1.0) {
        return Err(Error::InvalidArgument(format!("signal efficiency must be in (0, 1), got {eps_s}")));
    }
    let mut sig: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(s, _)| *s).collect();
    sig.sort_by(|a, b| b.total_cmp(a));
    let k = ((eps_s * pos as f64).ceil() as usize).clamp(1, pos);
    let threshold = sig[k - 1];
    let fp = scores.iter().zip(labels).filter(|(s, &l)| l == 0 && **s >= threshold).count();
    Ok(Rejection(if fp == 0 { f64::INFINITY } else { neg as f64 / fp as f64 }))
}

/// `(fpr, tpr)` points for every distinct threshold, from strictest to loosest.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (idx, &k) in order.iter().enumerate() {
        if labels[k] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(idx + 1).is_none_or(|&n| scores[n] != scores[k]);
        if last_of_tie {
            out.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        }
    }
    Ok(out)
}

/// Fraction of `predicted == labels`.
pub fn accuracy(predicted: &[u8], labels: &[u8]) -> Result<f64> {
    if predicted.len() != labels.len() || labels.is_empty() {
        return Err(Error::Dimension(format!("{} predictions for {} labels", predicted.len(), labels.len())));
    }
    let hits = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in (0..scores.len()).filter(|&i| labels[i] == 1) {
            for j in (0..scores.len()).filter(|&j| labels[j] == 0) {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        num / den
    }

    /// Tries every observed score as a threshold.
    fn sweep_rejection(scores: &[f64], labels: &[u8], eps_s: f64) -> f64 {
        let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
        let neg = labels.len() as f64 - pos;
        let mut best: Option<(f64, f64)> = None;
        for &t in scores {
            let tpr = scores.iter().zip(labels).filter(|(s, &l)| l == 1 && **s >= t).count() as f64 / pos;
            if tpr >= eps_s && best.is_none_or(|(bt, _)| t > bt) {
                let fpr = scores.iter().zip(labels).filter(|(s, &l)| l == 0 && **s >= t).count() as f64 / neg;
                best = Some((t, fpr));
            }
        }
        let fpr = best.expect("some threshold passes").1;
        if fpr == 0.0 {
            f64::INFINITY
        } else {
            1.0 / fpr
        }
    }

    fn random_scores(n: usize, seed_value: u64, coarse: bool) -> (Vec<f64>, Vec<u8>) {
        let mut rng = seed::rng(seed_value);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores = labels
            .iter()
            .map(|&l| {
                let s: f64 = rng.random::<f64>() + 0.3 * f64::from(l);
                if coarse {
                    (s * 8.0).round() / 8.0
                } else {
                    s
                }
            })
            .collect();
        (scores, labels)
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
        let mut rng = seed::rng(77);
        let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let labels: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..2)).collect();
        assert!((roc_auc(&scores, &labels).unwrap() - 0.5).abs() < 0.02);
    }

    #[test]
    fn rejection_examples() {
        let r = background_rejection(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], 0.5).unwrap();
        assert!(r.is_infinite());
        assert_eq!(serde_json::to_string(&r).unwrap(), "\"inf\"");
        assert_eq!(serde_json::from_str::<Rejection>("\"inf\"").unwrap(), r);
        assert_eq!(serde_json::from_str::<Rejection>("2.5").unwrap(), Rejection(2.5));
        let mut rng = seed::rng(78);
        let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let labels: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..2)).collect();
        let r = background_rejection(&scores, &labels, 0.3).unwrap().0;
        assert!((r - 1.0 / 0.3).abs() < 0.15 / 0.3, "rejection {r}");
        assert!(background_rejection(&scores, &labels, 1.0).is_err());
    }

    #[test]
    fn roc_curve_endpoints() {
        let (s, l) = random_scores(60, 3, true);
        let c = roc_curve(&s, &l).unwrap();
        assert_eq!(c[0], (0.0, 0.0));
        assert_eq!(*c.last().unwrap(), (1.0, 1.0));
        assert!(c.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
        // Trapezoid area equals the Mann-Whitney statistic.
        let area: f64 = c.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
        assert!((area - roc_auc(&s, &l).unwrap()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_oracle(n in 2usize..200, seed_value in any::<u64>(), coarse in any::<bool>()) {
            let (s, l) = random_scores(n, seed_value, coarse);
            let a = roc_auc(&s, &l).unwrap();
            prop_assert!((a - pairwise_auc(&s, &l)).abs() < 1e-12);
            let flipped: Vec<u8> = l.iter().map(|x| 1 - x).collect();
            prop_assert!((roc_auc(&s, &flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
        }

        #[test]
        fn rejection_matches_sweep_and_is_monotone(n in 2usize..200, seed_value in any::<u64>(), coarse in any::<bool>()) {
            let (s, l) = random_scores(n, seed_value, coarse);
            for eps in [0.3, 0.5] {
                let got = background_rejection(&s, &l, eps).unwrap().0;
                let want = sweep_rejection(&s, &l, eps);
                prop_assert!(got == want || (got - want).abs() < 1e-12 * want, "{} vs {}", got, want);
            }
            prop_assert!(background_rejection(&s, &l, 0.5).unwrap() <= background_rejection(&s, &l, 0.3).unwrap());
        }
    }
}
