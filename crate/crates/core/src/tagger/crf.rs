//! Linear-chain CRF over the three coarse tags with explicit start and end
//! scores.

use crate::autodiff::{log_sum_exp_slice, ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::BioTag;
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::lstm::uniform_param;

pub const NUM_TAGS: usize = 3;

/// Trainable CRF parameters: `transitions[i][j]` scores tag `i` followed by
/// tag `j`.
#[derive(Clone, Debug)]
pub struct CrfLayer {
    pub transitions: ParamId,
    pub start: ParamId,
    pub end: ParamId,
}

/// Plain values of the CRF parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfScores {
    pub transitions: Tensor,
    pub start: Tensor,
    pub end: Tensor,
}

impl CrfScores {
    pub fn zeros() -> Self {
        CrfScores {
            transitions: Tensor::zeros(&[NUM_TAGS, NUM_TAGS]),
            start: Tensor::zeros(&[1, NUM_TAGS]),
            end: Tensor::zeros(&[1, NUM_TAGS]),
        }
    }
}

impl CrfLayer {
    pub fn register(store: &mut ParamStore, prefix: &str, rng: &mut Rng) -> Self {
        CrfLayer {
            transitions: uniform_param(store, &format!("{prefix}.transitions"), 3, 3, 0.1, rng),
            start: uniform_param(store, &format!("{prefix}.start"), 1, 3, 0.1, rng),
            end: uniform_param(store, &format!("{prefix}.end"), 1, 3, 0.1, rng),
        }
    }

    pub fn scores(&self, store: &ParamStore) -> CrfScores {
        CrfScores {
            transitions: store.value(self.transitions).clone(),
            start: store.value(self.start).clone(),
            end: store.value(self.end).clone(),
        }
    }

    /// Negative log-likelihood of `gold` under this layer's parameters.
    pub fn nll(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        emissions: Var,
        gold: &[BioTag],
    ) -> Result<Var> {
        let trans = tape.param(store, self.transitions);
        let start = tape.param(store, self.start);
        let end = tape.param(store, self.end);
        crf_nll(tape, emissions, gold, trans, start, end)
    }
}

fn check_emissions(op: &'static str, shape: &[usize]) -> Result<usize> {
    if shape.len() != 2 || shape[1] != NUM_TAGS {
        return Err(Error::shape(op, &[shape, &[0, NUM_TAGS]]));
    }
    if shape[0] == 0 {
        return Err(Error::invalid(op, "empty sequence"));
    }
    Ok(shape[0])
}

/// `log Z - score(gold)` with the partition function computed by the
/// forward algorithm on the tape.
pub fn crf_nll(
    tape: &mut Tape,
    emissions: Var,
    gold: &[BioTag],
    transitions: Var,
    start: Var,
    end: Var,
) -> Result<Var> {
    let steps = check_emissions("crf_nll", tape.shape(emissions))?;
    if gold.len() != steps {
        return Err(Error::shape("crf_nll", &[&[steps], &[gold.len()]]));
    }
    let first = tape.slice_rows(emissions, 0, 1)?;
    let mut alpha = tape.add(start, first)?;
    for t in 1..steps {
        let col = tape.transpose(alpha)?;
        let scores = tape.add(col, transitions)?;
        let reduced = tape.log_sum_exp(scores, 0)?;
        let emit = tape.slice_rows(emissions, t, 1)?;
        alpha = tape.add(reduced, emit)?;
    }
    let closing = tape.add(alpha, end)?;
    let log_z = tape.log_sum_exp(closing, 1)?;

    let tags: Vec<usize> = gold.iter().map(|t| t.index()).collect();
    let emit_coords: Vec<(usize, usize)> = tags.iter().enumerate().map(|(t, &y)| (t, y)).collect();
    let emit_pick = tape.pick(emissions, &emit_coords)?;
    let mut gold_score = tape.sum(emit_pick);
    if steps > 1 {
        let trans_coords: Vec<(usize, usize)> = tags.windows(2).map(|w| (w[0], w[1])).collect();
        let trans_pick = tape.pick(transitions, &trans_coords)?;
        let trans_sum = tape.sum(trans_pick);
        gold_score = tape.add(gold_score, trans_sum)?;
    }
    let start_pick = tape.pick(start, &[(0, tags[0])])?;
    let end_pick = tape.pick(end, &[(0, tags[steps - 1])])?;
    gold_score = tape.add(gold_score, start_pick)?;
    gold_score = tape.add(gold_score, end_pick)?;
    tape.sub(log_z, gold_score)
}

/// Forward-algorithm log partition on plain values.
pub fn log_partition(emissions: &Tensor, crf: &CrfScores) -> Result<f64> {
    let steps = check_emissions("log_partition", emissions.shape())?;
    let mut alpha: Vec<f64> = (0..NUM_TAGS)
        .map(|j| crf.start.get(0, j) + emissions.get(0, j))
        .collect();
    for t in 1..steps {
        alpha = (0..NUM_TAGS)
            .map(|j| {
                let incoming: Vec<f64> = (0..NUM_TAGS)
                    .map(|i| alpha[i] + crf.transitions.get(i, j))
                    .collect();
                log_sum_exp_slice(&incoming) + emissions.get(t, j)
            })
            .collect();
    }
    let closing: Vec<f64> = (0..NUM_TAGS).map(|j| alpha[j] + crf.end.get(0, j)).collect();
    Ok(log_sum_exp_slice(&closing))
}

/// Unnormalized score of one tag path.
pub fn path_score(emissions: &Tensor, crf: &CrfScores, path: &[BioTag]) -> f64 {
    let mut s = crf.start.get(0, path[0].index()) + crf.end.get(0, path[path.len() - 1].index());
    for (t, tag) in path.iter().enumerate() {
        s += emissions.get(t, tag.index());
    }
    for w in path.windows(2) {
        s += crf.transitions.get(w[0].index(), w[1].index());
    }
    s
}

/// Highest-scoring tag path. Ties go to the lowest tag index, both for the
/// final tag and at every backtrack step.
pub fn viterbi_decode(emissions: &Tensor, crf: &CrfScores) -> Result<Vec<BioTag>> {
    let steps = check_emissions("viterbi_decode", emissions.shape())?;
    let mut delta: Vec<f64> = (0..NUM_TAGS)
        .map(|j| crf.start.get(0, j) + emissions.get(0, j))
        .collect();
    let mut back: Vec<[usize; NUM_TAGS]> = Vec::with_capacity(steps);
    for t in 1..steps {
        let mut next = [0.0; NUM_TAGS];
        let mut ptr = [0usize; NUM_TAGS];
        for j in 0..NUM_TAGS {
            let mut best = 0;
            let mut best_score = delta[0] + crf.transitions.get(0, j);
            for i in 1..NUM_TAGS {
                let s = delta[i] + crf.transitions.get(i, j);
                if s > best_score {
                    best = i;
                    best_score = s;
                }
            }
            next[j] = best_score + emissions.get(t, j);
            ptr[j] = best;
        }
        back.push(ptr);
        delta = next.to_vec();
    }
    let mut last = 0;
    let mut last_score = delta[0] + crf.end.get(0, 0);
    for j in 1..NUM_TAGS {
        let s = delta[j] + crf.end.get(0, j);
        if s > last_score {
            last = j;
            last_score = s;
        }
    }
    let mut path = vec![last];
    for ptr in back.iter().rev() {
        let prev = ptr[*path.last().expect("non-empty")];
        path.push(prev);
    }
    path.reverse();
    Ok(path
        .into_iter()
        .map(|i| BioTag::from_index(i).expect("tag index < 3"))
        .collect())
}
