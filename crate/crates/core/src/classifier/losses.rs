//! Entity-level objectives over the prototype matrix and the label-confusion
//! target construction.

use crate::autodiff::{cosine_similarity, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Hyperparameters of the two prototype objectives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PclcHyperparams {
    /// Contrastive temperature, > 0.
    pub tau: f64,
    /// Label-confusion factor in `[0, 1]`: mass kept on the gold source slot.
    pub lambda: f64,
    /// Weight of the KL term, >= 0.
    pub alpha: f64,
}

impl Default for PclcHyperparams {
    fn default() -> Self {
        PclcHyperparams {
            tau: 1.0,
            lambda: 0.6,
            alpha: 1.0,
        }
    }
}

impl PclcHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Which side of the KL divergence is the fixed target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KlDirection {
    /// `KL(D_smooth || softmax(scores))`.
    #[default]
    TargetToPrediction,
    /// `KL(softmax(scores) || D_smooth)`, with `D_smooth` floored at
    /// [`REVERSE_KL_FLOOR`] inside the logarithm.
    PredictionToTarget,
}

pub const REVERSE_KL_FLOOR: f64 = 1e-12;

/// `[1, C]` dot-product scores `r . z^c`.
pub fn prototype_scores(tape: &mut Tape, r: Var, protos: Var) -> Result<Var> {
    let pt = tape.transpose(protos)?;
    tape.matmul(r, pt)
}

/// `-log softmax(r . z / tau)[gold]` over all rows of `protos`.
pub fn proto_contrastive_loss(
    tape: &mut Tape,
    r: Var,
    protos: Var,
    gold: usize,
    tau: f64,
) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::invalid(
            "proto_contrastive_loss",
            format!("temperature must be > 0, got {tau}"),
        ));
    }
    let rows = tape.shape(protos)[0];
    if gold >= rows {
        return Err(Error::invalid(
            "proto_contrastive_loss",
            format!("gold row {gold} out of range for {rows} prototypes"),
        ));
    }
    let scores = prototype_scores(tape, r, protos)?;
    let scaled = tape.scale(scores, 1.0 / tau);
    let log_probs = tape.log_softmax(scaled, 1)?;
    let picked = tape.pick(log_probs, &[(0, gold)])?;
    Ok(tape.scale(picked, -1.0))
}

/// Soft distribution over target slots from cosine similarity to the gold
/// prototype. Negative similarities are clamped to zero before L1
/// normalization; if nothing positive remains the result is uniform.
pub fn confusion_target(gold: &[f64], target_block: &Tensor) -> Result<Vec<f64>> {
    let n = target_block.rows();
    if n == 0 {
        return Err(Error::invalid("confusion_target", "empty target block"));
    }
    let mut sims = Vec::with_capacity(n);
    for j in 0..n {
        let s = cosine_similarity(gold, target_block.row_slice(j))?;
        sims.push(s.max(0.0));
    }
    Ok(normalize_l1(sims))
}

/// L1 normalization of nonnegative weights, uniform when they sum to zero.
pub fn normalize_l1(weights: Vec<f64>) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.into_iter().map(|w| w / total).collect()
    } else {
        let n = weights.len() as f64;
        vec![1.0 / n; weights.len()]
    }
}

/// `concat(lambda * one_hot(gold), (1 - lambda) * target_dist)`.
pub fn smooth_distribution(
    gold: usize,
    num_source: usize,
    target_dist: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    if gold >= num_source {
        return Err(Error::invalid(
            "smooth_distribution",
            format!("gold index {gold} out of range for {num_source} source slots"),
        ));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(
            "smooth_distribution",
            format!("lambda {lambda} outside [0, 1]"),
        ));
    }
    let mut out = vec![0.0; num_source + target_dist.len()];
    out[gold] = lambda;
    for (o, p) in out[num_source..].iter_mut().zip(target_dist) {
        *o = (1.0 - lambda) * p;
    }
    Ok(out)
}

/// KL divergence between the label-confusion target and the prototype
/// posterior `log_softmax(protos . r)`. Terms with zero target mass
/// contribute nothing.
pub fn kl_confusion_loss(
    tape: &mut Tape,
    r: Var,
    protos: Var,
    target: &[f64],
    direction: KlDirection,
) -> Result<Var> {
    let rows = tape.shape(protos)[0];
    if target.len() != rows {
        return Err(Error::shape("kl_confusion_loss", &[&[target.len()], &[rows]]));
    }
    let scores = prototype_scores(tape, r, protos)?;
    let log_pred = tape.log_softmax(scores, 1)?;
    match direction {
        KlDirection::TargetToPrediction => {
            let neg_entropy: f64 = target
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum();
            let weights = tape.constant(Tensor::row(target.to_vec()));
            let weighted = tape.mul(log_pred, weights)?;
            let cross = tape.sum(weighted);
            let c = tape.constant(Tensor::scalar(neg_entropy));
            tape.sub(c, cross)
        }
        KlDirection::PredictionToTarget => {
            let log_target: Vec<f64> = target.iter().map(|&p| p.max(REVERSE_KL_FLOOR).ln()).collect();
            let lt = tape.constant(Tensor::row(log_target));
            let pred = tape.exp(log_pred);
            let diff = tape.sub(log_pred, lt)?;
            let terms = tape.mul(pred, diff)?;
            Ok(tape.sum(terms))
        }
    }
}

/// Plain cross-entropy over dot-product scores restricted to `candidates`.
pub fn candidate_cross_entropy(
    tape: &mut Tape,
    r: Var,
    protos: Var,
    candidates: &[usize],
    gold_row: usize,
) -> Result<Var> {
    let pos = candidates.iter().position(|&c| c == gold_row).ok_or_else(|| {
        Error::invalid(
            "candidate_cross_entropy",
            format!("gold row {gold_row} not among candidates"),
        )
    })?;
    let sub = tape.gather_rows(protos, candidates)?;
    proto_contrastive_loss(tape, r, sub, pos, 1.0)
}

/// Highest dot-product row among `candidates`; ties go to the earliest
/// candidate.
pub fn predict_slot_type(r: &[f64], protos: &Tensor, candidates: &[usize]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::invalid("predict_slot_type", "no candidate prototypes"));
    }
    if r.len() != protos.cols() {
        return Err(Error::shape("predict_slot_type", &[&[r.len()], protos.shape()]));
    }
    let score = |row: usize| -> f64 {
        protos
            .row_slice(row)
            .iter()
            .zip(r)
            .map(|(a, b)| a * b)
            .sum()
    };
    let mut best = candidates[0];
    let mut best_score = score(best);
    for &c in &candidates[1..] {
        let s = score(c);
        if s > best_score {
            best = c;
            best_score = s;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn loss_value(build: impl FnOnce(&mut Tape) -> Var) -> f64 {
        let mut tape = Tape::new();
        let v = build(&mut tape);
        tape.value(v).item()
    }

    #[test]
    fn contrastive_uniform_and_degenerate() {
        let two = loss_value(|t| {
            let r = t.constant(Tensor::row(vec![1.0, 0.0]));
            let p = t.constant(Tensor::matrix(2, 2, vec![0.5, 1.0, 0.5, -3.0]).unwrap());
            proto_contrastive_loss(t, r, p, 1, 1.0).unwrap()
        });
        assert!((two - std::f64::consts::LN_2).abs() < 1e-15);
        let one = loss_value(|t| {
            let r = t.constant(Tensor::row(vec![0.3, 0.7]));
            let p = t.constant(Tensor::matrix(1, 2, vec![2.0, -1.0]).unwrap());
            proto_contrastive_loss(t, r, p, 0, 0.5).unwrap()
        });
        assert_eq!(one, 0.0);
    }

    #[test]
    fn contrastive_rejects_bad_temperature() {
        let mut tape = Tape::new();
        let r = tape.constant(Tensor::row(vec![1.0]));
        let p = tape.constant(Tensor::matrix(1, 1, vec![1.0]).unwrap());
        assert!(proto_contrastive_loss(&mut tape, r, p, 0, 0.0).is_err());
        assert!(proto_contrastive_loss(&mut tape, r, p, 0, -1.0).is_err());
    }

    #[test]
    fn confusion_target_cases() {
        let single = Tensor::matrix(1, 2, vec![0.2, 0.1]).unwrap();
        assert_eq!(confusion_target(&[1.0, 0.0], &single).unwrap(), vec![1.0]);
        let n = normalize_l1(vec![0.6, 0.2]);
        assert!((n[0] - 0.75).abs() < 1e-15 && (n[1] - 0.25).abs() < 1e-15);
        // cos = 0.5 and -0.5 against gold (1, 0)
        let block = Tensor::matrix(2, 2, vec![0.5, 0.75f64.sqrt(), -0.5, 0.75f64.sqrt()]).unwrap();
        let d = confusion_target(&[1.0, 0.0], &block).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-15 && d[1] == 0.0);
        // all negative -> uniform
        let neg = Tensor::matrix(2, 2, vec![-1.0, 0.0, -1.0, -0.1]).unwrap();
        assert_eq!(confusion_target(&[1.0, 0.0], &neg).unwrap(), vec![0.5, 0.5]);
        let zero = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(confusion_target(&[1.0, 0.0], &zero).is_err());
    }

    #[test]
    fn smooth_distribution_cases() {
        let d = smooth_distribution(1, 2, &[0.75, 0.25], 0.6).unwrap();
        let expected = [0.0, 0.6, 0.3, 0.1];
        for (a, b) in d.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(
            smooth_distribution(0, 2, &[0.5, 0.5], 1.0).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            smooth_distribution(0, 2, &[0.25, 0.75], 0.0).unwrap(),
            vec![0.0, 0.0, 0.25, 0.75]
        );
        assert!(smooth_distribution(2, 2, &[1.0], 0.5).is_err());
    }

    #[test]
    fn kl_zero_on_matching_distribution() {
        let mut tape = Tape::new();
        let r = tape.constant(Tensor::row(vec![0.4, -1.2, 0.3]));
        let p = tape.constant(
            Tensor::matrix(3, 3, vec![0.1, 0.2, 0.3, -0.5, 0.4, 0.0, 1.0, 1.0, -1.0]).unwrap(),
        );
        let scores = prototype_scores(&mut tape, r, p).unwrap();
        let lp = tape.log_softmax(scores, 1).unwrap();
        let target: Vec<f64> = tape.value(lp).data().iter().map(|v| v.exp()).collect();
        let kl = kl_confusion_loss(&mut tape, r, p, &target, KlDirection::TargetToPrediction).unwrap();
        assert!(tape.value(kl).item().abs() < 1e-12);
        let rev = kl_confusion_loss(&mut tape, r, p, &target, KlDirection::PredictionToTarget).unwrap();
        assert!(tape.value(rev).item().abs() < 1e-12);
    }

    #[test]
    fn kl_ignores_scores_where_target_is_zero() {
        let run = |far: f64| {
            let mut tape = Tape::new();
            let r = tape.constant(Tensor::row(vec![1.0, 0.0]));
            let p = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, far, 0.0]).unwrap());
            let scores = prototype_scores(&mut tape, r, p).unwrap();
            let lp = tape.log_softmax(scores, 1).unwrap();
            let lp0 = tape.value(lp).get(0, 0);
            let kl = kl_confusion_loss(&mut tape, r, p, &[1.0, 0.0], KlDirection::TargetToPrediction)
                .unwrap();
            (tape.value(kl).item(), -lp0)
        };
        for far in [-5.0, 0.0, 5.0] {
            let (kl, expected) = run(far);
            assert!((kl - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn kl_length_mismatch() {
        let mut tape = Tape::new();
        let r = tape.constant(Tensor::row(vec![1.0]));
        let p = tape.constant(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
        assert!(kl_confusion_loss(&mut tape, r, p, &[1.0], KlDirection::default()).is_err());
    }

    #[test]
    fn predict_cases() {
        let protos = Tensor::identity(3);
        assert_eq!(predict_slot_type(&[0.0, 0.0, 2.0], &protos, &[0, 1, 2]).unwrap(), 2);
        assert_eq!(predict_slot_type(&[1.0, 1.0, 1.0], &protos, &[1, 2]).unwrap(), 1);
        assert!(predict_slot_type(&[1.0, 1.0, 1.0], &protos, &[]).is_err());

        let mut rng = seeded(12);
        let data = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let protos = Tensor::matrix(6, 5, data).unwrap();
        let r: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cands = [2, 3, 4, 5];
        let scan = cands
            .iter()
            .copied()
            .max_by(|&a, &b| {
                let sa: f64 = (0..5).map(|c| protos.get(a, c) * r[c]).sum();
                let sb: f64 = (0..5).map(|c| protos.get(b, c) * r[c]).sum();
                sa.partial_cmp(&sb).unwrap()
            })
            .unwrap();
        assert_eq!(predict_slot_type(&r, &protos, &cands).unwrap(), scan);
    }

    proptest! {
        #[test]
        fn smooth_distribution_is_a_distribution(
            gold_vec in prop::collection::vec(-1.0f64..1.0, 4),
            target in prop::collection::vec(-1.0f64..1.0, 12),
            lambda in 0.0f64..=1.0,
        ) {
            prop_assume!(gold_vec.iter().any(|v| v.abs() > 1e-6));
            let block = Tensor::matrix(3, 4, target).unwrap();
            prop_assume!((0..3).all(|r| block.row_slice(r).iter().any(|v| v.abs() > 1e-6)));
            let d_tgt = confusion_target(&gold_vec, &block).unwrap();
            let d = smooth_distribution(1, 3, &d_tgt, lambda).unwrap();
            prop_assert!(d.iter().all(|&x| x >= 0.0));
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn argmax_invariant_under_positive_scaling(
            r in prop::collection::vec(-1.0f64..1.0, 3),
            p in prop::collection::vec(-1.0f64..1.0, 12),
            k in 0.1f64..10.0,
        ) {
            let protos = Tensor::matrix(4, 3, p.clone()).unwrap();
            let scaled = Tensor::matrix(4, 3, p.iter().map(|v| v * k).collect()).unwrap();
            let rs: Vec<f64> = r.iter().map(|v| v * k).collect();
            let cands = [0, 1, 2, 3];
            let scores: Vec<f64> = (0..4).map(|i| (0..3).map(|c| protos.get(i, c) * r[c]).sum()).collect();
            let mut sorted = scores.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            // Skip near-ties where rounding could flip the order.
            prop_assume!(sorted[0] - sorted[1] > 1e-9);
            prop_assert_eq!(
                predict_slot_type(&r, &protos, &cands).unwrap(),
                predict_slot_type(&rs, &scaled, &cands).unwrap()
            );
        }

        #[test]
        fn contrastive_tau_one_is_softmax_nll(
            r in prop::collection::vec(-2.0f64..2.0, 3),
            p in prop::collection::vec(-2.0f64..2.0, 15),
            gold in 0usize..5,
        ) {
            let mut tape = Tape::new();
            let rv = tape.constant(Tensor::row(r.clone()));
            let pv = tape.constant(Tensor::matrix(5, 3, p.clone()).unwrap());
            let l = proto_contrastive_loss(&mut tape, rv, pv, gold, 1.0).unwrap();
            let scores: Vec<f64> = (0..5).map(|i| (0..3).map(|c| p[i * 3 + c] * r[c]).sum()).collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            let direct = -(scores[gold].exp() / z).ln();
            prop_assert!((tape.value(l).item() - direct).abs() < 1e-10);
        }

        #[test]
        fn kl_is_nonnegative(
            r in prop::collection::vec(-2.0f64..2.0, 3),
            p in prop::collection::vec(-2.0f64..2.0, 12),
            w in prop::collection::vec(0.0f64..1.0, 4),
        ) {
            prop_assume!(w.iter().sum::<f64>() > 1e-6);
            let target = normalize_l1(w);
            let mut tape = Tape::new();
            let rv = tape.constant(Tensor::row(r));
            let pv = tape.constant(Tensor::matrix(4, 3, p).unwrap());
            let kl = kl_confusion_loss(&mut tape, rv, pv, &target, KlDirection::TargetToPrediction).unwrap();
            prop_assert!(tape.value(kl).item() >= -1e-12);
        }
    }
}
