use crate::autodiff::{Mode, ParamGrads, Tape, Tensor, Var};
use crate::classifier::{
    candidate_cross_entropy, confusion_target, kl_confusion_loss, proto_contrastive_loss,
    smooth_distribution,
};
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::model::PclcModel;
use crate::rng::seeded;
use crate::tagger::TaggedSpan;

use super::{PcRows, TrainConfig};

/// Batch-averaged loss terms: `crf` is an utterance mean, `pc`, `kl` and
/// `ce` are entity means (0 when not computed).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub crf: f64,
    pub pc: f64,
    pub kl: f64,
    pub ce: f64,
    pub total: f64,
    pub utterances: usize,
    pub entities: usize,
}

impl LossTerms {
    /// First non-finite term, by name.
    pub fn non_finite(&self) -> Option<&'static str> {
        [
            ("L_crf", self.crf),
            ("L_pc", self.pc),
            ("L_kl", self.kl),
            ("L_ce", self.ce),
            ("L_total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Per-entity training target derived from the current prototype values.
#[derive(Clone, Debug)]
struct EntityPlan {
    span: TaggedSpan,
    gold_row: usize,
    candidates: Vec<usize>,
    smooth: Option<Vec<f64>>,
}

fn plan_entities(
    model: &PclcModel,
    protos: &Tensor,
    utt: &Utterance,
    cfg: &TrainConfig,
) -> Result<Vec<EntityPlan>> {
    let layout = &model.layout;
    let candidates = layout.candidates(&utt.domain)?.to_vec();
    let target_block = if cfg.enable_lc {
        Some(Tensor::matrix(
            layout.num_target(),
            protos.cols(),
            protos.data()[layout.boundary() * protos.cols()..].to_vec(),
        )?)
    } else {
        None
    };
    let mut plans = Vec::new();
    for gold in utt.gold_spans() {
        let gold_row = layout.gold_row(&utt.domain, &gold.slot)?;
        let smooth = match &target_block {
            None => None,
            Some(block) if gold_row < layout.boundary() => {
                let d_tgt = confusion_target(protos.row_slice(gold_row), block)?;
                Some(smooth_distribution(
                    gold_row,
                    layout.num_source(),
                    &d_tgt,
                    cfg.hyper.lambda,
                )?)
            }
            Some(_) => {
                let mut one_hot = vec![0.0; layout.len()];
                one_hot[gold_row] = 1.0;
                Some(one_hot)
            }
        };
        plans.push(EntityPlan {
            span: TaggedSpan {
                start: gold.start,
                end: gold.end,
            },
            gold_row,
            candidates: candidates.clone(),
            smooth,
        });
    }
    Ok(plans)
}

/// Unweighted per-utterance loss nodes.
struct UtteranceVars {
    crf: Var,
    pc: Vec<Var>,
    kl: Vec<Var>,
    ce: Vec<Var>,
}

fn utterance_graph(
    model: &PclcModel,
    tape: &mut Tape,
    protos: Var,
    utt: &Utterance,
    plans: &[EntityPlan],
    cfg: &TrainConfig,
    mode: Mode,
    seed: u64,
) -> Result<UtteranceVars> {
    let mut rng = seeded(seed);
    let tokens = model.tokens(&utt.tokens);
    let hidden = model
        .encoder
        .encode_utterance(tape, &model.store, &tokens, mode, &mut rng)?;
    let emissions = model.encoder.emissions(tape, &model.store, hidden)?;
    let crf = model
        .encoder
        .crf
        .nll(tape, &model.store, emissions, &utt.bio_tags)?;
    let boundary = model.layout.boundary();
    let source_only = match cfg.pc_rows {
        PcRows::Source if boundary > 0 => Some(tape.slice_rows(protos, 0, boundary)?),
        _ => None,
    };
    let baseline = !cfg.enable_pcl && !cfg.enable_lc;
    let mut vars = UtteranceVars {
        crf,
        pc: Vec::new(),
        kl: Vec::new(),
        ce: Vec::new(),
    };
    for plan in plans {
        let r = model.entity.encode_entity(tape, &model.store, hidden, plan.span)?;
        if cfg.enable_pcl {
            let rows = match source_only {
                Some(src) if plan.gold_row < boundary => src,
                _ => protos,
            };
            vars.pc
                .push(proto_contrastive_loss(tape, r, rows, plan.gold_row, cfg.hyper.tau)?);
        }
        if let Some(smooth) = &plan.smooth {
            vars.kl
                .push(kl_confusion_loss(tape, r, protos, smooth, cfg.kl_direction)?);
        }
        if baseline {
            vars.ce.push(candidate_cross_entropy(
                tape,
                r,
                protos,
                &plan.candidates,
                plan.gold_row,
            )?);
        }
    }
    Ok(vars)
}

/// Weights turning summed per-utterance nodes into the batch objective.
#[derive(Clone, Copy)]
struct Weights {
    crf: f64,
    pc: f64,
    kl: f64,
    ce: f64,
}

impl Weights {
    fn new(cfg: &TrainConfig, utterances: usize, entities: usize) -> Self {
        let per_entity = if entities == 0 { 0.0 } else { 1.0 / entities as f64 };
        Weights {
            crf: cfg.crf_weight / utterances as f64,
            pc: if cfg.enable_pcl { per_entity } else { 0.0 },
            kl: if cfg.enable_lc { cfg.hyper.alpha * per_entity } else { 0.0 },
            ce: per_entity,
        }
    }
}

/// Value sums before weighting.
#[derive(Clone, Copy, Default)]
struct Sums {
    crf: f64,
    pc: f64,
    kl: f64,
    ce: f64,
}

fn weighted_sum(tape: &mut Tape, vars: &UtteranceVars, w: Weights) -> Result<(Var, Sums)> {
    let mut sums = Sums {
        crf: tape.value(vars.crf).item(),
        ..Sums::default()
    };
    let mut acc = tape.scale(vars.crf, w.crf);
    for (list, weight, slot) in [
        (&vars.pc, w.pc, &mut sums.pc),
        (&vars.kl, w.kl, &mut sums.kl),
        (&vars.ce, w.ce, &mut sums.ce),
    ] {
        for &v in list {
            *slot += tape.value(v).item();
            let term = tape.scale(v, weight);
            acc = tape.add(acc, term)?;
        }
    }
    Ok((acc, sums))
}

fn finish_terms(sums: &[Sums], utterances: usize, entities: usize, cfg: &TrainConfig) -> LossTerms {
    let mut total = Sums::default();
    for s in sums {
        total.crf += s.crf;
        total.pc += s.pc;
        total.kl += s.kl;
        total.ce += s.ce;
    }
    let mean = |v: f64| if entities == 0 { 0.0 } else { v / entities as f64 };
    let crf = total.crf / utterances as f64;
    let (pc, kl, ce) = (mean(total.pc), mean(total.kl), mean(total.ce));
    let stage2 = if !cfg.enable_pcl && !cfg.enable_lc {
        ce
    } else {
        let mut s = 0.0;
        if cfg.enable_pcl {
            s += pc;
        }
        if cfg.enable_lc {
            s += cfg.hyper.alpha * kl;
        }
        s
    };
    LossTerms {
        crf,
        pc,
        kl,
        ce,
        total: cfg.crf_weight * crf + stage2,
        utterances,
        entities,
    }
}

fn count_entities(batch: &[&Utterance]) -> usize {
    batch.iter().map(|u| u.entity_spans().len()).sum()
}

/// Entity targets for a batch, fixed from the prototype values at the time
/// of planning. The label-confusion target is a constant of the objective.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    entities: Vec<Vec<EntityPlan>>,
}

impl BatchPlan {
    pub fn num_entities(&self) -> usize {
        self.entities.iter().map(Vec::len).sum()
    }

    /// Label-confusion targets in batch order (empty unless LC is on).
    pub fn smooth_targets(&self) -> Vec<Vec<f64>> {
        self.entities
            .iter()
            .flatten()
            .filter_map(|e| e.smooth.clone())
            .collect()
    }
}

pub fn plan_batch(model: &PclcModel, batch: &[&Utterance], cfg: &TrainConfig) -> Result<BatchPlan> {
    let protos = model.prototype_matrix()?.values;
    let entities = batch
        .iter()
        .map(|u| plan_entities(model, &protos, u, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchPlan { entities })
}

/// The batch objective and each of its batch-averaged terms as nodes of one
/// tape. Terms that were not computed are `None`.
pub struct LossGraph {
    pub tape: Tape,
    pub total: Var,
    pub crf: Var,
    pub pc: Option<Var>,
    pub kl: Option<Var>,
    pub ce: Option<Var>,
    pub terms: LossTerms,
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for &v in vars {
        acc = Some(match acc {
            None => v,
            Some(a) => tape.add(a, v)?,
        });
    }
    Ok(acc)
}

/// [`total_loss_planned`] with a plan taken at the current parameters.
pub fn total_loss(
    model: &PclcModel,
    batch: &[&Utterance],
    seeds: &[u64],
    cfg: &TrainConfig,
    mode: Mode,
) -> Result<LossGraph> {
    let plan = plan_batch(model, batch, cfg)?;
    total_loss_planned(model, batch, &plan, seeds, cfg, mode)
}

/// The batch objective recorded on a single tape, prototypes included.
/// `seeds[i]` drives dropout for `batch[i]`.
pub fn total_loss_planned(
    model: &PclcModel,
    batch: &[&Utterance],
    plan: &BatchPlan,
    seeds: &[u64],
    cfg: &TrainConfig,
    mode: Mode,
) -> Result<LossGraph> {
    if batch.is_empty() {
        return Err(Error::invalid("total_loss", "empty batch"));
    }
    if seeds.len() != batch.len() || plan.entities.len() != batch.len() {
        return Err(Error::invalid("total_loss", "one seed and one plan per utterance required"));
    }
    let mut tape = Tape::new();
    let protos = model.prototypes(&mut tape)?;
    let entities = plan.num_entities();
    let (mut crf, mut pc, mut kl, mut ce) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for ((utt, &seed), plans) in batch.iter().zip(seeds).zip(&plan.entities) {
        let vars = utterance_graph(model, &mut tape, protos, utt, plans, cfg, mode, seed)?;
        crf.push(vars.crf);
        pc.extend(vars.pc);
        kl.extend(vars.kl);
        ce.extend(vars.ce);
    }
    let crf_sum = sum_vars(&mut tape, &crf)?.expect("non-empty batch");
    let crf_mean = tape.scale(crf_sum, 1.0 / batch.len() as f64);
    let mean = |tape: &mut Tape, vars: &[Var]| -> Result<Option<Var>> {
        Ok(sum_vars(tape, vars)?.map(|s| tape.scale(s, 1.0 / entities as f64)))
    };
    let pc_mean = mean(&mut tape, &pc)?;
    let kl_mean = mean(&mut tape, &kl)?;
    let ce_mean = mean(&mut tape, &ce)?;

    let mut total = tape.scale(crf_mean, cfg.crf_weight);
    if let (true, Some(v)) = (cfg.enable_pcl, pc_mean) {
        total = tape.add(total, v)?;
    }
    if let (true, Some(v)) = (cfg.enable_lc, kl_mean) {
        let w = tape.scale(v, cfg.hyper.alpha);
        total = tape.add(total, w)?;
    }
    if let Some(v) = ce_mean {
        total = tape.add(total, v)?;
    }
    let value = |t: &Tape, v: Option<Var>| v.map_or(0.0, |v| t.value(v).item());
    let terms = LossTerms {
        crf: tape.value(crf_mean).item(),
        pc: value(&tape, pc_mean),
        kl: value(&tape, kl_mean),
        ce: value(&tape, ce_mean),
        total: tape.value(total).item(),
        utterances: batch.len(),
        entities,
    };
    Ok(LossGraph {
        tape,
        total,
        crf: crf_mean,
        pc: pc_mean,
        kl: kl_mean,
        ce: ce_mean,
        terms,
    })
}

/// Gradient of the batch objective accumulated into the model's parameter
/// gradients. Each utterance runs on its own
/// tape with the prototype matrix as an input; the per-utterance gradients
/// are reduced in batch order and the prototype gradient is pushed through
/// the prototype network afterwards, so both execution modes give the same
/// bits.
pub fn batch_gradients(
    model: &mut PclcModel,
    batch: &[&Utterance],
    seeds: &[u64],
    cfg: &TrainConfig,
    exec_mode: Execution,
) -> Result<LossTerms> {
    if batch.is_empty() {
        return Err(Error::invalid("batch_gradients", "empty batch"));
    }
    if seeds.len() != batch.len() {
        return Err(Error::invalid("batch_gradients", "one seed per utterance required"));
    }
    let mut proto_tape = Tape::new();
    let protos = model.prototypes(&mut proto_tape)?;
    let proto_values = proto_tape.value(protos).clone();
    let entities = count_entities(batch);
    let weights = Weights::new(cfg, batch.len(), entities);

    let shared: &PclcModel = model;
    let work: Vec<(&Utterance, u64)> = batch.iter().copied().zip(seeds.iter().copied()).collect();
    let results = exec::map(exec_mode, &work, |_, &(utt, seed)| -> Result<(ParamGrads, Vec<f64>, Sums)> {
        let plans = plan_entities(shared, &proto_values, utt, cfg)?;
        let mut tape = Tape::new();
        let p = tape.input(proto_values.clone());
        let vars = utterance_graph(shared, &mut tape, p, utt, &plans, cfg, Mode::Train, seed)?;
        let (loss, sums) = weighted_sum(&mut tape, &vars, weights)?;
        let grads = tape.backward(loss)?;
        let p_grad = grads
            .wrt(p)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; proto_values.numel()]);
        Ok((grads.param_grads(&tape), p_grad, sums))
    });

    let mut proto_grad = vec![0.0; proto_values.numel()];
    let mut sums = Vec::with_capacity(batch.len());
    for r in results {
        let (grads, p_grad, s) = r?;
        grads.accumulate_into(&mut model.store);
        for (a, b) in proto_grad.iter_mut().zip(&p_grad) {
            *a += b;
        }
        sums.push(s);
    }
    let grads = proto_tape.backward_seeded(&[(protos, proto_grad)])?;
    grads.accumulate_into(&proto_tape, &mut model.store);
    Ok(finish_terms(&sums, batch.len(), entities, cfg))
}
