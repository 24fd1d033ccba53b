use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamWState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// `θ ← θ − lr·m̂/(√v̂ + eps) − lr·weight_decay·θ`.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamWState,
    lr: f64,
    weight_decay: f64,
    hyper: AdamWHyper,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Dimension(format!(
            "adamw: {} params, {} grads, state of {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for k in 0..params.len() {
        let g = grads[k];
        state.m[k] = hyper.beta1 * state.m[k] + (1.0 - hyper.beta1) * g;
        state.v[k] = hyper.beta2 * state.v[k] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[k] / bc1;
        let v_hat = state.v[k] / bc2;
        let theta = params[k];
        params[k] = theta - lr * m_hat / (v_hat.sqrt() + hyper.eps) - lr * weight_decay * theta;
    }
    Ok(())
}

/// When the optimizer applies weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightDecaySchedule {
    /// Every epoch.
    #[default]
    Constant,
    /// Only the last three epochs.
    FinalThree,
    None,
}

/// Weight decay in effect during `epoch`.
pub fn weight_decay_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    match cfg.weight_decay_schedule {
        WeightDecaySchedule::Constant => cfg.weight_decay,
        WeightDecaySchedule::FinalThree if epoch + 3 >= cfg.epochs => cfg.weight_decay,
        WeightDecaySchedule::FinalThree | WeightDecaySchedule::None => 0.0,
    }
}

/// Linear warmup to `lr_peak`, then cosine annealing with warm restarts
/// (cycle lengths `t0, t0·t_mult, t0·t_mult², ...`, floor 0).
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::InvalidArgument(format!("epoch {epoch} outside 0..{}", cfg.epochs)));
    }
    if epoch < cfg.warmup_epochs {
        return Ok(cfg.lr_peak * (epoch + 1) as f64 / cfg.warmup_epochs as f64);
    }
    let (t, len) = cycle_position(epoch - cfg.warmup_epochs, cfg.t0, cfg.t_mult);
    Ok(cfg.lr_peak * (1.0 + (PI * t as f64 / len as f64).cos()) / 2.0)
}

/// Offset within the current cycle and that cycle's length.
fn cycle_position(mut e: usize, t0: usize, t_mult: usize) -> (usize, usize) {
    let mut len = t0;
    while e >= len {
        e -= len;
        len *= t_mult;
    }
    (e, len)
}

/// Post-warmup epoch indices where a new cycle begins, below `limit`.
pub fn restart_epochs(cfg: &TrainConfig, limit: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let (mut start, mut len) = (cfg.t0, cfg.t0 * cfg.t_mult);
    while start < limit {
        out.push(start);
        start += len;
        len *= cfg.t_mult;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut p = vec![1.0, -2.0, 0.5];
        let mut s = AdamWState::new(3);
        adamw_step(&mut p, &[0.0; 3], &mut s, 1e-3, 0.01, AdamWHyper::default()).unwrap();
        let f = 1.0 - 1e-3 * 0.01;
        assert_eq!(p, vec![1.0 * f, -2.0 * f, 0.5 * f]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.3, 0.3];
        let mut s = AdamWState::new(2);
        adamw_step(&mut p, &[2.5, -0.1], &mut s, 1e-3, 0.0, AdamWHyper::default()).unwrap();
        // m̂ = g and v̂ = g², so the step is lr·g/(|g| + eps).
        assert!((p[0] - (0.3 - 1e-3 * 2.5 / (2.5 + 1e-8))).abs() < 1e-15);
        assert!((p[1] - (0.3 + 1e-3 * 0.1 / (0.1 + 1e-8))).abs() < 1e-15);
        assert!(adamw_step(&mut p, &[1.0], &mut s, 1e-3, 0.0, AdamWHyper::default()).is_err());
    }

    #[test]
    fn adamw_is_deterministic() {
        let run = || {
            let mut p = vec![0.1, 0.2, 0.3];
            let mut s = AdamWState::new(3);
            for k in 0..10 {
                let g: Vec<f64> = p.iter().map(|x| (x * 7.0 + k as f64).sin()).collect();
                adamw_step(&mut p, &g, &mut s, 1e-2, 0.01, AdamWHyper::default()).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn schedule_examples() {
        let c = cfg();
        assert_eq!(lr_at(4, &c).unwrap(), 1e-3);
        assert_eq!(lr_at(5, &c).unwrap(), 1e-3);
        assert!((lr_at(0, &c).unwrap() - 2e-4).abs() < 1e-18);
        assert_eq!(restart_epochs(&c, 45), vec![4, 12, 28]);
        for r in [4, 12, 28] {
            assert_eq!(lr_at(c.warmup_epochs + r, &c).unwrap(), 1e-3);
            assert!(lr_at(c.warmup_epochs + r - 1, &c).unwrap() < lr_at(c.warmup_epochs + r, &c).unwrap());
        }
        assert!(lr_at(50, &c).is_err());
    }

    #[test]
    fn weight_decay_readings() {
        let mut c = cfg();
        assert_eq!(weight_decay_at(0, &c), 0.01);
        c.weight_decay_schedule = WeightDecaySchedule::FinalThree;
        assert_eq!(weight_decay_at(46, &c), 0.0);
        assert_eq!(weight_decay_at(47, &c), 0.01);
        c.weight_decay_schedule = WeightDecaySchedule::None;
        assert_eq!(weight_decay_at(49, &c), 0.0);
    }

    proptest! {
        #[test]
        fn schedule_bounded_and_matches_cycle_oracle(epoch in 0usize..50) {
            let c = cfg();
            let lr = lr_at(epoch, &c).unwrap();
            prop_assert!((0.0..=c.lr_peak).contains(&lr));
            if epoch >= c.warmup_epochs {
                // Oracle: walk the epochs one by one tracking the cycle.
                let (mut t, mut len) = (0usize, c.t0);
                for _ in c.warmup_epochs..epoch {
                    t += 1;
                    if t == len {
                        t = 0;
                        len *= c.t_mult;
                    }
                }
                let want = c.lr_peak * 0.5 * (1.0 + (PI * t as f64 / len as f64).cos());
                prop_assert!((lr - want).abs() < 1e-18);
            }
        }
    }
}
