//! Optimisation, evaluation and cross-validation.

mod metrics;
mod optim;

use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{stratified_folds, stratified_split, DatasetSplit, JetGraph};
use crate::model::{LorentzEqgnn, Mode, Prediction};
use crate::{seed, Error, Result};

pub use metrics::{accuracy, background_rejection, roc_auc, roc_curve, Rejection};
pub use optim::{adamw_step, lr_at, restart_epochs, weight_decay_at, AdamWHyper, AdamWState, WeightDecaySchedule};

/// Which held-out set picks the best epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_peak: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub t0: usize,
    pub t_mult: usize,
    pub weight_decay: f64,
    pub weight_decay_schedule: WeightDecaySchedule,
    pub batch_size: usize,
    /// `1` trains once on the train/validation/test split; `k > 1` runs
    /// k-fold cross-validation over train ∪ validation with the test set fixed.
    pub folds: usize,
    pub seed: u64,
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_peak: 1e-3,
            warmup_epochs: 5,
            epochs: 50,
            t0: 4,
            t_mult: 2,
            weight_decay: 0.01,
            weight_decay_schedule: WeightDecaySchedule::Constant,
            batch_size: 16,
            folds: 5,
            seed: 42,
            selection: Selection::Validation,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs <= self.warmup_epochs {
            return bad(format!("epochs ({}) must exceed warmup_epochs ({})", self.epochs, self.warmup_epochs));
        }
        if !(self.lr_peak.is_finite() && self.lr_peak > 0.0) {
            return bad(format!("lr_peak must be positive, got {}", self.lr_peak));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 || self.t0 == 0 || self.t_mult == 0 || self.folds == 0 {
            return bad("batch_size, t0, t_mult and folds must be positive".into());
        }
        Ok(())
    }
}

/// Held-out metrics for one set of jets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub auc: f64,
    pub loss: f64,
    pub rej03: Rejection,
    pub rej05: Rejection,
}

/// Eval-mode predictions in index order.
pub fn predict(model: &LorentzEqgnn, graphs: &[JetGraph], idx: &[usize]) -> Result<Vec<Prediction>> {
    idx.par_iter().map(|&i| model.forward(&graphs[i], Mode::Eval)).collect()
}

fn mean_xent(preds: &[Prediction], labels: &[u8]) -> f64 {
    let total: f64 = preds
        .iter()
        .zip(labels)
        .map(|(p, &l)| {
            // log-softmax from logits for accuracy at saturation
            let z = p.logits;
            let m = z[0].max(z[1]);
            let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
            lse - z[usize::from(l)]
        })
        .sum();
    total / preds.len() as f64
}

pub fn metrics_from_predictions(preds: &[Prediction], labels: &[u8]) -> Result<EvalMetrics> {
    let scores: Vec<f64> = preds.iter().map(Prediction::score).collect();
    let classes: Vec<u8> = preds.iter().map(Prediction::class).collect();
    Ok(EvalMetrics {
        accuracy: accuracy(&classes, labels)?,
        auc: roc_auc(&scores, labels)?,
        loss: mean_xent(preds, labels),
        rej03: background_rejection(&scores, labels, 0.3)?,
        rej05: background_rejection(&scores, labels, 0.5)?,
    })
}

pub fn evaluate(model: &LorentzEqgnn, graphs: &[JetGraph], idx: &[usize]) -> Result<EvalMetrics> {
    let preds = predict(model, graphs, idx)?;
    let labels: Vec<u8> = idx.iter().map(|&i| graphs[i].label).collect();
    metrics_from_predictions(&preds, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub train_loss: f64,
    pub selection_accuracy: f64,
}

/// Test metrics of the selected checkpoint of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub epoch_best: usize,
    pub selection_accuracy: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub loss: f64,
    pub rej03: Rejection,
    pub rej05: Rejection,
}

pub struct FoldOutcome {
    pub metrics: FoldMetrics,
    pub model: LorentzEqgnn,
    /// Test-set ROC of the selected checkpoint.
    pub roc: Vec<(f64, f64)>,
    pub history: Vec<EpochLog>,
}

/// Trains one model on `split.train`, keeps the epoch with the best
/// selection accuracy (earliest on ties) and reports its test metrics.
pub fn train_fold(mut model: LorentzEqgnn, graphs: &[JetGraph], split: &DatasetSplit, cfg: &TrainConfig, fold: usize) -> Result<FoldOutcome> {
    cfg.validate()?;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::InsufficientData("train and test sets must be non-empty".into()));
    }
    let select_idx = match cfg.selection {
        Selection::Validation if !split.validation.is_empty() => &split.validation,
        Selection::Validation => return Err(Error::InsufficientData("validation set is empty".into())),
        Selection::Test => &split.test,
    };
    let select_labels: Vec<u8> = select_idx.iter().map(|&i| graphs[i].label).collect();
    let fold_seed = seed::derive(cfg.seed, &[0x70a1, fold as u64]);
    let mut params = model.flat_params();
    let mut state = AdamWState::new(params.len());
    let hyper = AdamWHyper::default();
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order = split.train.clone();

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg)?;
        let wd = weight_decay_at(epoch, cfg);
        order.shuffle(&mut seed::rng(seed::derive(fold_seed, &[epoch as u64])));
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let base = (epoch * order.len() + b * cfg.batch_size) as u64;
            let results: Vec<(f64, Vec<f64>, Prediction)> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| model.loss_and_grad(&graphs[i], Mode::Train { seed: fold_seed, step: base + k as u64 }))
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; params.len()];
            for (loss, g, _) in &results {
                loss_sum += loss;
                for (a, v) in grad.iter_mut().zip(g) {
                    *a += v;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|v| *v *= inv);
            if !grad.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient at epoch {epoch}, batch {b}")));
            }
            adamw_step(&mut params, &grad, &mut state, lr, wd, hyper)?;
            model.set_flat_params(&params)?;
        }
        let preds = predict(&model, graphs, select_idx)?;
        let classes: Vec<u8> = preds.iter().map(Prediction::class).collect();
        let sel_acc = accuracy(&classes, &select_labels)?;
        let train_loss = loss_sum / order.len() as f64;
        info!("fold {fold} epoch {epoch}: lr {lr:.3e} train loss {train_loss:.4} selection accuracy {sel_acc:.4}");
        history.push(EpochLog {
            epoch,
            lr,
            weight_decay: wd,
            train_loss,
            selection_accuracy: sel_acc,
        });
        if best.as_ref().is_none_or(|(_, a, _)| sel_acc > *a) {
            best = Some((epoch, sel_acc, params.clone()));
        }
    }

    let (epoch_best, selection_accuracy, best_params) = best.expect("at least one epoch");
    model.set_flat_params(&best_params)?;
    let preds = predict(&model, graphs, &split.test)?;
    let labels: Vec<u8> = split.test.iter().map(|&i| graphs[i].label).collect();
    let m = metrics_from_predictions(&preds, &labels)?;
    let scores: Vec<f64> = preds.iter().map(Prediction::score).collect();
    let roc = roc_curve(&scores, &labels)?;
    debug!("fold {fold}: best epoch {epoch_best}, test accuracy {:.4}", m.accuracy);
    Ok(FoldOutcome {
        metrics: FoldMetrics {
            fold,
            epoch_best,
            selection_accuracy,
            accuracy: m.accuracy,
            auc: m.auc,
            loss: m.loss,
            rej03: m.rej03,
            rej05: m.rej05,
        },
        model,
        roc,
        history,
    })
}

/// Splits for k-fold cross-validation: fold `f` validates on the `f`-th
/// stratified part of `pool`, trains on the rest and tests on `test`.
pub fn fold_plan(graphs: &[JetGraph], pool: &[usize], test: &[usize], k: usize, seed_value: u64) -> Result<Vec<DatasetSplit>> {
    let labels: Vec<u8> = graphs.iter().map(|g| g.label).collect();
    let parts = stratified_folds(&labels, pool, k, seed_value)?;
    Ok((0..k)
        .map(|f| {
            let mut train: Vec<usize> = parts.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, p)| p.iter().copied()).collect();
            train.sort_unstable();
            DatasetSplit {
                train,
                validation: parts[f].clone(),
                test: test.to_vec(),
            }
        })
        .collect())
}

/// Cross-validation with one fresh model per fold.
pub fn run_kfold<F>(factory: F, graphs: &[JetGraph], pool: &[usize], test: &[usize], cfg: &TrainConfig) -> Result<Vec<FoldOutcome>>
where
    F: Fn(usize) -> Result<LorentzEqgnn>,
{
    let plan = fold_plan(graphs, pool, test, cfg.folds, seed::derive_named(cfg.seed, "folds"))?;
    plan.iter()
        .enumerate()
        .map(|(f, split)| {
            factory(f)
                .and_then(|m| train_fold(m, graphs, split, cfg, f))
                .map_err(|e| Error::Fold { fold: f, source: Box::new(e) })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy: f64,
    pub auc: f64,
    pub loss: f64,
    pub rej03: Rejection,
    pub rej05: Rejection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_digest: String,
    pub folds: Vec<FoldMetrics>,
    pub mean: Summary,
    /// Sample standard deviation across folds (0 for a single fold).
    pub std: Summary,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 || !mean.is_finite() {
        let std = if mean.is_finite() { 0.0 } else { f64::NAN };
        return (mean, std);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricsReport {
    pub fn from_folds(config_digest: String, folds: Vec<FoldMetrics>) -> Self {
        let col = |f: fn(&FoldMetrics) -> f64| mean_std(&folds.iter().map(f).collect::<Vec<_>>());
        let (acc, auc, loss) = (col(|m| m.accuracy), col(|m| m.auc), col(|m| m.loss));
        let (r3, r5) = (col(|m| m.rej03.0), col(|m| m.rej05.0));
        Self {
            config_digest,
            mean: Summary {
                accuracy: acc.0,
                auc: auc.0,
                loss: loss.0,
                rej03: Rejection(r3.0),
                rej05: Rejection(r5.0),
            },
            std: Summary {
                accuracy: acc.1,
                auc: auc.1,
                loss: loss.1,
                rej03: Rejection(r3.1),
                rej05: Rejection(r5.1),
            },
            folds,
        }
    }
}

pub struct Experiment {
    pub report: MetricsReport,
    pub folds: Vec<FoldOutcome>,
    pub split: DatasetSplit,
}

/// Full protocol from a run configuration: stratified split, then a single
/// training run (`folds == 1`) or k-fold cross-validation.
pub fn run_experiment(cfg: &RunConfig, graphs: &[JetGraph]) -> Result<Experiment> {
    cfg.validate()?;
    let labels: Vec<u8> = graphs.iter().map(|g| g.label).collect();
    let split = stratified_split(&labels, cfg.data.split_ratios(), seed::derive_named(cfg.train.seed, "split"))?;
    let factory = |fold: usize| LorentzEqgnn::new(cfg.model.clone(), seed::derive(cfg.train.seed, &[0x0de1, fold as u64]));
    let folds = if cfg.train.folds == 1 {
        let outcome = factory(0)
            .and_then(|m| train_fold(m, graphs, &split, &cfg.train, 0))
            .map_err(|e| Error::Fold { fold: 0, source: Box::new(e) })?;
        vec![outcome]
    } else {
        let mut pool: Vec<usize> = split.train.iter().chain(&split.validation).copied().collect();
        pool.sort_unstable();
        run_kfold(factory, graphs, &pool, &split.test, &cfg.train)?
    };
    let report = MetricsReport::from_folds(cfg.digest()?, folds.iter().map(|f| f.metrics.clone()).collect());
    Ok(Experiment { report, folds, split })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::config::{DataOptions, RunConfig};
    use crate::data::{build_jet_graph, synth_jets, SynthParams};
    use crate::model::ModelConfig;

    fn graphs(n_per_class: usize, seed_value: u64) -> Vec<JetGraph> {
        synth_jets(seed_value, n_per_class, &SynthParams::default())
            .iter()
            .filter_map(|r| build_jet_graph(r, 10))
            .collect()
    }

    #[test]
    fn constant_model_scores_the_majority_share() {
        let g: Vec<JetGraph> = graphs(30, 1);
        let idx: Vec<usize> = (0..g.len()).filter(|i| i % 3 != 0 || g[*i].label == 0).collect();
        let mut m = LorentzEqgnn::new(ModelConfig::default(), 0).unwrap();
        m.dec2_w = Tensor::zeros(vec![4, 2]);
        m.dec2_b = Tensor::vector(vec![1.0, 0.0]);
        let e = evaluate(&m, &g, &idx).unwrap();
        let share0 = idx.iter().filter(|&&i| g[i].label == 0).count() as f64 / idx.len() as f64;
        assert_eq!(e.accuracy, share0);
        assert_eq!(e.auc, 0.5);
    }

    #[test]
    fn fold_plan_layout() {
        let g: Vec<JetGraph> = graphs(400, 2);
        let pool: Vec<usize> = (0..800).collect();
        let plan = fold_plan(&g, &pool, &[], 5, 3).unwrap();
        let mut seen = vec![0; 800];
        for s in &plan {
            assert_eq!(s.validation.len(), 160);
            assert_eq!(s.train.len(), 640);
            for &i in &s.validation {
                seen[i] += 1;
                assert!(s.train.binary_search(&i).is_err());
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    fn smoke_config(folds: usize) -> RunConfig {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig {
                epochs: 3,
                warmup_epochs: 1,
                folds,
                seed: 5,
                ..TrainConfig::default()
            },
            data: DataOptions::default(),
        }
    }

    #[test]
    fn experiment_is_deterministic() {
        let g = graphs(25, 3);
        for folds in [1, 2] {
            let cfg = smoke_config(folds);
            let a = run_experiment(&cfg, &g).unwrap();
            let b = run_experiment(&cfg, &g).unwrap();
            assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
            assert_eq!(a.report.folds.len(), folds);
            for f in &a.folds {
                assert_eq!(f.history.len(), 3);
                assert!(f.metrics.epoch_best < 3);
                assert!((0.0..=1.0).contains(&f.metrics.accuracy));
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let g = graphs(25, 4);
        let cfg = smoke_config(1);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| serde_json::to_string(&run_experiment(&cfg, &g).unwrap().report).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let c = TrainConfig { epochs: 5, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { lr_peak: 0.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn summary_statistics() {
        let fm = |acc: f64, r: f64| FoldMetrics {
            fold: 0,
            epoch_best: 0,
            selection_accuracy: 0.0,
            accuracy: acc,
            auc: 0.5,
            loss: 1.0,
            rej03: Rejection(r),
            rej05: Rejection(2.0),
        };
        let r = MetricsReport::from_folds("d".into(), vec![fm(0.7, 3.0), fm(0.8, f64::INFINITY)]);
        assert!((r.mean.accuracy - 0.75).abs() < 1e-15);
        assert!((r.std.accuracy - (0.005f64).sqrt()).abs() < 1e-15);
        assert!(r.mean.rej03.is_infinite());
        assert!(r.std.rej03.0.is_nan());
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains(r#""rej03":null"#));
        let back = serde_json::from_str::<MetricsReport>(&text).unwrap();
        assert_eq!(back.folds, r.folds);
        assert!(back.std.rej03.0.is_nan());
    }
}
