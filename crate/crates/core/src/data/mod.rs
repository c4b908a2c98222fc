//! Corpus ingestion: BIO-labeled utterances, slot schemas, vocabularies,
//! embedding tables and leave-one-domain-out experiment splits.

mod conll;
mod embeddings;
pub mod snips;
mod split;
mod vocab;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub use conll::{load_corpus_dir, parse_conll, parse_conll_str, write_conll, Corpus};
pub use embeddings::{load_embeddings, random_table, EmbeddingTable};
pub use split::{
    classify_seen_unseen, fewshot_select, split_leave_one_out, ExperimentSplit,
};
pub use vocab::{build_vocab, Vocab, PAD, UNK};

use crate::error::{Error, Result};
use crate::tagger::{extract_spans, TaggedSpan};

/// Coarse entity tag. Indices are fixed: O=0, B=1, I=2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BioTag {
    O = 0,
    B = 1,
    I = 2,
}

impl BioTag {
    pub const ALL: [BioTag; 3] = [BioTag::O, BioTag::B, BioTag::I];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<BioTag> {
        BioTag::ALL.get(i).copied()
    }
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BioTag::O => "O",
            BioTag::B => "B",
            BioTag::I => "I",
        };
        f.write_str(s)
    }
}

/// A tokenized, labeled sentence from one domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    /// `<domain>:<position within the domain>`; stable across runs.
    pub id: String,
    pub tokens: Vec<String>,
    pub bio_tags: Vec<BioTag>,
    /// Fine slot label behind each `B`/`I`; `None` exactly where the tag is `O`.
    pub slot_types: Vec<Option<String>>,
    pub domain: String,
}

/// A typed gold or predicted span (inclusive token bounds).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotSpan {
    pub start: usize,
    pub end: usize,
    pub slot: String,
}

impl Utterance {
    /// Builds an utterance from `(token, tag)` pairs where tags are `O`,
    /// `B-slot` or `I-slot`. An `I-x` that does not continue an `x` span is
    /// rewritten as `B-x`.
    pub fn from_tagged(
        id: impl Into<String>,
        domain: impl Into<String>,
        pairs: &[(String, String)],
    ) -> std::result::Result<Self, String> {
        let mut tokens = Vec::with_capacity(pairs.len());
        let mut bio_tags = Vec::with_capacity(pairs.len());
        let mut slot_types: Vec<Option<String>> = Vec::with_capacity(pairs.len());
        for (token, tag) in pairs {
            let (bio, slot) = parse_tag(tag)?;
            let bio = match (bio, &slot, slot_types.last()) {
                (BioTag::I, Some(s), Some(Some(prev))) if prev == s => BioTag::I,
                (BioTag::I, _, _) => BioTag::B,
                (b, _, _) => b,
            };
            tokens.push(token.clone());
            bio_tags.push(bio);
            slot_types.push(slot);
        }
        Ok(Utterance {
            id: id.into(),
            tokens,
            bio_tags,
            slot_types,
            domain: domain.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The tag string for token `i` (`O`, `B-x`, `I-x`).
    pub fn tag_string(&self, i: usize) -> String {
        match (&self.bio_tags[i], &self.slot_types[i]) {
            (BioTag::O, _) | (_, None) => "O".to_string(),
            (b, Some(s)) => format!("{b}-{s}"),
        }
    }

    pub fn entity_spans(&self) -> Vec<TaggedSpan> {
        extract_spans(&self.bio_tags)
    }

    pub fn gold_spans(&self) -> Vec<SlotSpan> {
        self.entity_spans()
            .into_iter()
            .map(|s| SlotSpan {
                start: s.start,
                end: s.end,
                slot: self.slot_types[s.start].clone().expect("B/I tokens carry a slot"),
            })
            .collect()
    }
}

fn parse_tag(tag: &str) -> std::result::Result<(BioTag, Option<String>), String> {
    if tag == "O" {
        return Ok((BioTag::O, None));
    }
    let (prefix, slot) = tag
        .split_once('-')
        .ok_or_else(|| format!("tag `{tag}` is neither `O` nor `B-`/`I-` prefixed"))?;
    if slot.is_empty() {
        return Err(format!("tag `{tag}` has an empty slot name"));
    }
    let bio = match prefix {
        "B" => BioTag::B,
        "I" => BioTag::I,
        other => return Err(format!("unknown tag prefix `{other}` in `{tag}`")),
    };
    Ok((bio, Some(slot.to_string())))
}

/// Splits a slot label into lowercase description words on underscores and
/// camel-case boundaries: `timeRange` -> `["time", "range"]`.
pub fn description_tokens(slot: &str) -> Vec<String> {
    let mut out = Vec::new();
    for part in slot.split(['_', '-', ' ']) {
        let mut cur = String::new();
        let mut prev_lower = false;
        for ch in part.chars() {
            if ch.is_uppercase() && prev_lower && !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            prev_lower = ch.is_lowercase() || ch.is_ascii_digit();
            cur.extend(ch.to_lowercase());
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Domains, their slot inventories, and slot description words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotSchema {
    domains: Vec<String>,
    slots_of: BTreeMap<String, Vec<String>>,
    descriptions: BTreeMap<String, Vec<String>>,
}

impl SlotSchema {
    /// Builds a schema from explicit `(domain, slots)` lists, keeping the
    /// given orders.
    pub fn from_slot_lists<D, S>(lists: impl IntoIterator<Item = (D, Vec<S>)>) -> Result<Self>
    where
        D: Into<String>,
        S: Into<String>,
    {
        let mut domains = Vec::new();
        let mut slots_of = BTreeMap::new();
        let mut descriptions = BTreeMap::new();
        for (domain, slots) in lists {
            let domain = domain.into();
            let slots: Vec<String> = slots.into_iter().map(Into::into).collect();
            for s in &slots {
                let desc = description_tokens(s);
                if desc.is_empty() {
                    return Err(Error::invalid(
                        "schema",
                        format!("slot `{s}` has an empty description"),
                    ));
                }
                descriptions.insert(s.clone(), desc);
            }
            if slots_of.insert(domain.clone(), slots).is_some() {
                return Err(Error::invalid("schema", format!("duplicate domain `{domain}`")));
            }
            domains.push(domain);
        }
        Ok(SlotSchema {
            domains,
            slots_of,
            descriptions,
        })
    }

    /// Collects each domain's slots from the utterances. Domains are ordered
    /// by name and slots sorted within a domain.
    pub fn from_utterances(utterances: &[Utterance]) -> Result<Self> {
        let mut map: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for u in utterances {
            let entry = map.entry(u.domain.clone()).or_default();
            entry.extend(u.slot_types.iter().flatten().cloned());
        }
        Self::from_slot_lists(
            map.into_iter()
                .map(|(d, s)| (d, s.into_iter().collect::<Vec<_>>())),
        )
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn has_domain(&self, domain: &str) -> bool {
        self.slots_of.contains_key(domain)
    }

    pub fn slots_of(&self, domain: &str) -> Result<&[String]> {
        self.slots_of
            .get(domain)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownDomain(domain.to_string()))
    }

    pub fn description(&self, slot: &str) -> Option<&[String]> {
        self.descriptions.get(slot).map(Vec::as_slice)
    }

    /// All distinct slot labels across domains.
    pub fn all_slots(&self) -> BTreeSet<&str> {
        self.slots_of.values().flatten().map(String::as_str).collect()
    }

    pub fn source_domains(&self, target: &str) -> Result<Vec<&str>> {
        if !self.has_domain(target) {
            return Err(Error::UnknownDomain(target.to_string()));
        }
        Ok(self
            .domains
            .iter()
            .filter(|d| d.as_str() != target)
            .map(String::as_str)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn stray_inside_tag_becomes_begin() {
        let u = Utterance::from_tagged(
            "d:0",
            "d",
            &pairs(&[("a", "I-x"), ("b", "I-x"), ("c", "O"), ("d", "I-y"), ("e", "I-x")]),
        )
        .unwrap();
        use BioTag::*;
        assert_eq!(u.bio_tags, vec![B, I, O, B, B]);
        let spans = u.gold_spans();
        assert_eq!(spans.len(), 3);
        assert_eq!(spans[2].slot, "x");
    }

    #[test]
    fn bad_prefix_is_rejected() {
        let err = Utterance::from_tagged("d:0", "d", &pairs(&[("a", "S-x")])).unwrap_err();
        assert!(err.contains("unknown tag prefix"));
    }

    #[test]
    fn description_splitting() {
        assert_eq!(description_tokens("playlist_owner"), vec!["playlist", "owner"]);
        assert_eq!(description_tokens("timeRange"), vec!["time", "range"]);
        assert_eq!(description_tokens("object_type"), vec!["object", "type"]);
        assert_eq!(description_tokens("city"), vec!["city"]);
    }

    #[test]
    fn schema_unknown_domain() {
        let schema = SlotSchema::from_slot_lists([("a", vec!["x"])]).unwrap();
        assert!(matches!(schema.slots_of("b"), Err(Error::UnknownDomain(_))));
    }
}
