use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::{Corpus, SlotSchema};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Validation size used when the target domain is large enough.
pub const VALIDATION_SIZE: usize = 500;

/// Leave-one-domain-out partition. Partitions hold indices into
/// [`Corpus::utterances`], each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExperimentSplit {
    pub target_domain: String,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seen_slots: BTreeSet<String>,
    pub unseen_slots: BTreeSet<String>,
    /// Number of target utterances moved into `train`.
    pub few_shot: usize,
    pub seed: u64,
}

/// Partitions the target domain's slots into those that also occur in some
/// source domain (seen) and the rest (unseen).
pub fn classify_seen_unseen(
    schema: &SlotSchema,
    target: &str,
) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    let target_slots = schema.slots_of(target)?;
    let mut source: BTreeSet<&str> = BTreeSet::new();
    for d in schema.source_domains(target)? {
        source.extend(schema.slots_of(d)?.iter().map(String::as_str));
    }
    let (seen, unseen): (Vec<&String>, Vec<&String>) = target_slots
        .iter()
        .partition(|s| source.contains(s.as_str()));
    Ok((
        seen.into_iter().cloned().collect(),
        unseen.into_iter().cloned().collect(),
    ))
}

/// Holds out `target` as the evaluation domain. All other domains form the
/// training set. The target's utterances are split by a seeded uniform draw
/// into validation (500, or half of the domain when it has 500 or fewer
/// utterances) and test (the rest).
pub fn split_leave_one_out(corpus: &Corpus, target: &str, seed: u64) -> Result<ExperimentSplit> {
    let schema = &corpus.schema;
    if !schema.has_domain(target) {
        return Err(Error::UnknownDomain(target.to_string()));
    }
    let mut target_idx = Vec::new();
    let mut train = Vec::new();
    for (i, u) in corpus.utterances.iter().enumerate() {
        if u.domain == target {
            target_idx.push(i);
        } else {
            train.push(i);
        }
    }
    let n = target_idx.len();
    let val_size = if n > VALIDATION_SIZE {
        VALIDATION_SIZE
    } else {
        n / 2
    };
    let mut rng = seeded(seed);
    target_idx.shuffle(&mut rng);
    let mut validation = target_idx[..val_size].to_vec();
    let mut test = target_idx[val_size..].to_vec();
    validation.sort_unstable();
    test.sort_unstable();
    let (seen_slots, unseen_slots) = classify_seen_unseen(schema, target)?;
    Ok(ExperimentSplit {
        target_domain: target.to_string(),
        train,
        validation,
        test,
        seen_slots,
        unseen_slots,
        few_shot: 0,
        seed,
    })
}

/// Moves `k` uniformly drawn target utterances from the test pool into the
/// training set. Validation is untouched.
pub fn fewshot_select(split: &ExperimentSplit, k: usize, seed: u64) -> Result<ExperimentSplit> {
    if k > split.test.len() {
        return Err(Error::invalid(
            "fewshot_select",
            format!("k = {k} exceeds the test pool of {}", split.test.len()),
        ));
    }
    let mut out = split.clone();
    if k == 0 {
        return Ok(out);
    }
    let mut pool = split.test.clone();
    let mut rng = seeded(seed ^ 0x5eed_f00d);
    pool.shuffle(&mut rng);
    let chosen: BTreeSet<usize> = pool[..k].iter().copied().collect();
    out.test.retain(|i| !chosen.contains(i));
    out.train.extend(chosen.iter().copied());
    out.train.sort_unstable();
    out.few_shot = split.few_shot + k;
    Ok(out)
}

impl ExperimentSplit {
    /// Line-oriented manifest listing the utterance ids of each partition.
    pub fn to_manifest(&self, corpus: &Corpus) -> String {
        let mut out = String::from("# pclc split manifest v1\n");
        out.push_str(&format!("target\t{}\n", self.target_domain));
        out.push_str(&format!("seed\t{}\n", self.seed));
        out.push_str(&format!("few_shot\t{}\n", self.few_shot));
        for (name, part) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            for &i in part {
                out.push_str(&format!("{name}\t{}\n", corpus.utterances[i].id));
            }
        }
        out
    }

    pub fn from_manifest(text: &str, corpus: &Corpus) -> Result<Self> {
        let index: std::collections::HashMap<&str, usize> = corpus
            .utterances
            .iter()
            .enumerate()
            .map(|(i, u)| (u.id.as_str(), i))
            .collect();
        let bad = |line: usize, msg: String| Error::Parse {
            path: "split manifest".into(),
            line,
            msg,
        };
        let mut target = None;
        let mut seed = 0;
        let mut few_shot = 0;
        let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('\t')
                .ok_or_else(|| bad(i + 1, format!("expected `key<TAB>value`, got `{line}`")))?;
            let lookup = |v: &str| {
                index
                    .get(v)
                    .copied()
                    .ok_or_else(|| bad(i + 1, format!("unknown utterance id `{v}`")))
            };
            match key {
                "target" => target = Some(value.to_string()),
                "seed" => seed = value.parse().map_err(|e| bad(i + 1, format!("{e}")))?,
                "few_shot" => few_shot = value.parse().map_err(|e| bad(i + 1, format!("{e}")))?,
                "train" => train.push(lookup(value)?),
                "validation" => validation.push(lookup(value)?),
                "test" => test.push(lookup(value)?),
                other => return Err(bad(i + 1, format!("unknown key `{other}`"))),
            }
        }
        let target = target.ok_or_else(|| bad(0, "missing target".into()))?;
        let (seen_slots, unseen_slots) = classify_seen_unseen(&corpus.schema, &target)?;
        Ok(ExperimentSplit {
            target_domain: target,
            train,
            validation,
            test,
            seen_slots,
            unseen_slots,
            few_shot,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_conll_str, Utterance};
    use std::path::Path;

    fn toy_corpus(target_count: usize) -> Corpus {
        let mut text = String::from("# domain: Music\n");
        for i in 0..8 {
            text.push_str(&format!("play\tO\nsong{i}\tB-track\n\n"));
        }
        text.push_str("# domain: Weather\n");
        for i in 0..target_count {
            text.push_str(&format!("rain\tB-condition\nin\tO\ncity{i}\tB-city\n\n"));
        }
        let utts: Vec<Utterance> = parse_conll_str(&text, "x", Path::new("toy")).unwrap();
        Corpus::from_utterances(utts).unwrap()
    }

    #[test]
    fn small_target_uses_half_for_validation() {
        let c = toy_corpus(10);
        let s = split_leave_one_out(&c, "Weather", 3).unwrap();
        assert_eq!(s.validation.len(), 5);
        assert_eq!(s.test.len(), 5);
        assert!(s.train.iter().all(|&i| c.utterances[i].domain == "Music"));
        assert_eq!(s.train.len(), 8);
    }

    #[test]
    fn large_target_caps_validation() {
        let c = toy_corpus(620);
        let s = split_leave_one_out(&c, "Weather", 3).unwrap();
        assert_eq!(s.validation.len(), 500);
        assert_eq!(s.test.len(), 120);
    }

    #[test]
    fn deterministic_per_seed() {
        let c = toy_corpus(40);
        assert_eq!(
            split_leave_one_out(&c, "Weather", 9).unwrap(),
            split_leave_one_out(&c, "Weather", 9).unwrap()
        );
        assert_ne!(
            split_leave_one_out(&c, "Weather", 9).unwrap().validation,
            split_leave_one_out(&c, "Weather", 10).unwrap().validation
        );
    }

    #[test]
    fn unknown_domain() {
        let c = toy_corpus(4);
        assert!(matches!(
            split_leave_one_out(&c, "Nope", 0),
            Err(Error::UnknownDomain(_))
        ));
    }

    #[test]
    fn seen_unseen_partition() {
        let c = toy_corpus(4);
        let (seen, unseen) = classify_seen_unseen(&c.schema, "Weather").unwrap();
        assert!(seen.is_empty());
        assert_eq!(unseen.len(), 2);
        let schema = SlotSchema::from_slot_lists([
            ("A", vec!["x", "y"]),
            ("B", vec!["x", "z"]),
            ("C", vec!["y"]),
        ])
        .unwrap();
        let (seen, unseen) = classify_seen_unseen(&schema, "B").unwrap();
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec!["x"]);
        assert_eq!(unseen.into_iter().collect::<Vec<_>>(), vec!["z"]);
        let (_, unseen) = classify_seen_unseen(&schema, "C").unwrap();
        assert!(unseen.is_empty());
    }

    #[test]
    fn few_shot_moves_from_test_only() {
        let c = toy_corpus(40);
        let s = split_leave_one_out(&c, "Weather", 1).unwrap();
        assert_eq!(fewshot_select(&s, 0, 1).unwrap(), s);
        let f = fewshot_select(&s, 5, 1).unwrap();
        assert_eq!(f.train.len(), s.train.len() + 5);
        assert_eq!(f.test.len(), s.test.len() - 5);
        assert_eq!(f.validation, s.validation);
        let moved: Vec<_> = f.train.iter().filter(|i| !s.train.contains(i)).collect();
        assert!(moved.iter().all(|i| s.test.contains(i)));
        assert!(fewshot_select(&s, 1000, 1).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let c = toy_corpus(12);
        let s = fewshot_select(&split_leave_one_out(&c, "Weather", 4).unwrap(), 2, 4).unwrap();
        let text = s.to_manifest(&c);
        assert_eq!(ExperimentSplit::from_manifest(&text, &c).unwrap(), s);
    }
}
