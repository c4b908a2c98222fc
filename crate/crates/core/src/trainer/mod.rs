//! Joint training of both stages with Adam, early stopping on validation
//! span F1, and single-file checkpoints.

mod checkpoint;
mod loss;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use loss::{
    batch_gradients, plan_batch, total_loss, total_loss_planned, BatchPlan, LossGraph, LossTerms,
};

use std::fmt;

use rand::seq::SliceRandom;

use crate::autodiff::{AdamConfig, AdamState, ParamStore};
use crate::classifier::{KlDirection, PclcHyperparams};
use crate::data::{Corpus, ExperimentSplit, Utterance};
use crate::error::{Error, Result};
use crate::evaluator::{span_f1, ScoreCore};
use crate::exec::Execution;
use crate::model::PclcModel;
use crate::rng::{child_seed, Rng};

/// Which prototype rows the contrastive denominator ranges over for
/// source-domain entities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PcRows {
    #[default]
    All,
    Source,
}

pub const ZERO_SHOT_EPOCHS: usize = 30;
pub const FEW_SHOT_EPOCHS: usize = 60;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub hyper: PclcHyperparams,
    pub enable_pcl: bool,
    pub enable_lc: bool,
    pub kl_direction: KlDirection,
    pub pc_rows: PcRows,
    /// Multiplier on the CRF term.
    pub crf_weight: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    pub few_shot: usize,
    /// Also score the training set after every epoch.
    pub track_train_f1: bool,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 64,
            patience: 15,
            max_epochs: ZERO_SHOT_EPOCHS,
            hyper: PclcHyperparams::default(),
            enable_pcl: true,
            enable_lc: true,
            kl_direction: KlDirection::default(),
            pc_rows: PcRows::default(),
            crf_weight: 1.0,
            clip_norm: 5.0,
            few_shot: 0,
            track_train_f1: false,
            execution: Execution::available_parallel(),
        }
    }
}

impl TrainConfig {
    /// Defaults with the epoch budget of the zero- or few-shot setting.
    pub fn for_setting(few_shot: usize) -> Self {
        TrainConfig {
            few_shot,
            max_epochs: if few_shot > 0 { FEW_SHOT_EPOCHS } else { ZERO_SHOT_EPOCHS },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.adam.lr)));
        }
        if !(self.clip_norm > 0.0) || !(self.crf_weight >= 0.0) {
            return Err(Error::Config("clip_norm must be > 0 and crf_weight >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stops once `patience` epochs (at least one) have passed without a strict
/// improvement over the best value.
pub fn early_stop_check(history: &[f64], patience: usize) -> StopDecision {
    let Some(best) = best_index(history) else {
        return StopDecision::Continue;
    };
    let since = history.len() - 1 - best;
    if since >= patience.max(1) {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

/// Index of the first occurrence of the maximum.
fn best_index(history: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in history.iter().enumerate() {
        if best.map_or(true, |b| v > history[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub terms: LossTerms,
    pub val_f1: f64,
    pub train_f1: Option<f64>,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={}\tL_crf={:.6}\tL_pc={:.6}\tL_kl={:.6}\tL_ce={:.6}\tL_total={:.6}\tval_f1={:.6}",
            self.epoch,
            self.terms.crf,
            self.terms.pc,
            self.terms.kl,
            self.terms.ce,
            self.terms.total,
            self.val_f1
        )?;
        if let Some(t) = self.train_f1 {
            write!(f, "\ttrain_f1={t:.6}")?;
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    /// Best-epoch parameters and optimizer state.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Scores `model` on the utterances at `indices` of `corpus`.
pub fn evaluate_indices(
    model: &PclcModel,
    corpus: &Corpus,
    indices: &[usize],
    exec_mode: Execution,
) -> Result<ScoreCore> {
    let utts: Vec<&Utterance> = indices.iter().map(|&i| &corpus.utterances[i]).collect();
    let predicted = model.predict_many(&utts, exec_mode)?;
    let gold: Vec<_> = utts.iter().map(|u| u.gold_spans()).collect();
    span_f1(&gold, &predicted)
}

/// Element-wise mean of batch terms weighted by batch utterance count.
fn epoch_terms(batches: &[LossTerms]) -> LossTerms {
    let n: usize = batches.iter().map(|t| t.utterances).sum();
    let mut out = LossTerms::default();
    for t in batches {
        let w = t.utterances as f64 / n as f64;
        out.crf += w * t.crf;
        out.pc += w * t.pc;
        out.kl += w * t.kl;
        out.ce += w * t.ce;
        out.total += w * t.total;
        out.utterances += t.utterances;
        out.entities += t.entities;
    }
    out
}

/// Trains `model` in place on `split.train`, keeping the parameters of the
/// best validation epoch. `on_epoch` sees each record as it is produced.
/// On return `model` holds the best parameters.
pub fn train_run(
    model: &mut PclcModel,
    corpus: &Corpus,
    split: &ExperimentSplit,
    cfg: &TrainConfig,
    rng: &mut Rng,
    config_snapshot: Vec<(String, String)>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::invalid("train_run", "empty training set"));
    }
    let mut adam = AdamState::new(cfg.adam, &model.store);
    let mut order = split.train.clone();
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut val_history: Vec<f64> = Vec::new();
    let mut best: Option<(ParamStore, AdamState, usize, f64)> = None;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(rng);
        let mut batch_terms = Vec::new();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Utterance> = chunk.iter().map(|&i| &corpus.utterances[i]).collect();
            let seeds: Vec<u64> = batch.iter().map(|_| child_seed(rng)).collect();
            model.store.zero_grads();
            let terms = batch_gradients(model, &batch, &seeds, cfg, cfg.execution)?;
            if let Some(term) = terms.non_finite() {
                return Err(Error::NonFinite {
                    term,
                    epoch,
                    batch: b + 1,
                });
            }
            let norm = model.store.clip_grad_norm(cfg.clip_norm);
            if !norm.is_finite() {
                return Err(Error::NonFinite {
                    term: "gradient norm",
                    epoch,
                    batch: b + 1,
                });
            }
            let ids = model.store.ids_with_grad();
            adam.step(&mut model.store, &ids)?;
            batch_terms.push(terms);
        }
        let val_f1 = if split.validation.is_empty() {
            0.0
        } else {
            evaluate_indices(model, corpus, &split.validation, cfg.execution)?.f1()
        };
        let train_f1 = if cfg.track_train_f1 {
            Some(evaluate_indices(model, corpus, &split.train, cfg.execution)?.f1())
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            terms: epoch_terms(&batch_terms),
            val_f1,
            train_f1,
        };
        on_epoch(&record);
        history.push(record);
        let improved = best.as_ref().map_or(true, |(_, _, _, f)| val_f1 > *f);
        if improved {
            best = Some((model.store.clone(), adam.clone(), epoch, val_f1));
        }
        val_history.push(val_f1);
        if early_stop_check(&val_history, cfg.patience) == StopDecision::Stop {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }

    let (store, adam, epoch, best_f1) = best.expect("at least one epoch ran");
    model.store.copy_values_from(&store)?;
    let checkpoint = Checkpoint::capture(model, &adam, epoch, best_f1, config_snapshot);
    Ok(TrainOutcome {
        checkpoint,
        history,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_examples() {
        use StopDecision::*;
        assert_eq!(early_stop_check(&[0.5, 0.6, 0.6], 2), Continue);
        assert_eq!(early_stop_check(&[0.5, 0.6, 0.6, 0.6], 2), Stop);
        let mono: Vec<f64> = (0..20).map(|i| i as f64).collect();
        for n in 1..=mono.len() {
            assert_eq!(early_stop_check(&mono[..n], 3), Continue);
        }
        for p in 0..5 {
            assert_eq!(early_stop_check(&[0.7], p), Continue);
        }
        assert_eq!(early_stop_check(&[0.5, 0.4], 0), Stop);
        assert_eq!(early_stop_check(&[0.5, 0.6], 0), Continue);
    }

    #[test]
    fn record_line_format() {
        let r = EpochRecord {
            epoch: 3,
            terms: LossTerms {
                crf: 1.5,
                ..LossTerms::default()
            },
            val_f1: 0.25,
            train_f1: None,
        };
        let line = r.to_string();
        assert!(line.starts_with("epoch=3\tL_crf=1.500000\t"));
        assert!(line.ends_with("val_f1=0.250000"));
    }
}
