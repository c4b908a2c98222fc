use std::collections::{BTreeSet, HashMap};

use super::{SlotSchema, Utterance};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Word and character index maps. Index 0 is padding and 1 is unknown; real
/// entries follow in sorted order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    word_index: HashMap<String, usize>,
    chars: Vec<char>,
    char_index: HashMap<char, usize>,
}

impl Vocab {
    /// Rebuilds a vocabulary from its entry lists (without the two
    /// reserved entries), e.g. when restoring a checkpoint.
    pub fn from_entries(words: Vec<String>, chars: Vec<char>) -> Self {
        let mut all_words = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all_words.extend(words);
        let word_index = all_words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        // Reserved char slots hold placeholder codepoints that never match.
        let mut all_chars = vec!['\u{0}', '\u{1}'];
        all_chars.extend(chars);
        let char_index = all_chars
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, c)| (*c, i))
            .collect();
        Vocab {
            words: all_words,
            word_index,
            chars: all_chars,
            char_index,
        }
    }

    pub fn word_id(&self, word: &str) -> usize {
        self.word_index.get(word).copied().unwrap_or(UNK)
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.word_index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    /// Real word entries, excluding the reserved ones.
    pub fn word_entries(&self) -> &[String] {
        &self.words[2..]
    }

    pub fn char_entries(&self) -> &[char] {
        &self.chars[2..]
    }
}

/// Builds the vocabulary over every corpus token and character and every
/// slot-description word in the schema. Insertion is sorted, so the result
/// does not depend on utterance order.
pub fn build_vocab(utterances: &[Utterance], schema: &SlotSchema) -> Vocab {
    let mut words: BTreeSet<String> = BTreeSet::new();
    let mut chars: BTreeSet<char> = BTreeSet::new();
    let mut add = |w: &str| {
        chars.extend(w.chars());
        words.insert(w.to_string());
    };
    for u in utterances {
        for t in &u.tokens {
            add(t);
        }
    }
    for slot in schema.all_slots() {
        for w in schema.description(slot).unwrap_or_default() {
            add(w);
        }
    }
    words.remove(PAD_TOKEN);
    words.remove(UNK_TOKEN);
    Vocab::from_entries(words.into_iter().collect(), chars.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_conll_str;
    use std::path::Path;

    fn corpus(text: &str) -> Vec<Utterance> {
        parse_conll_str(text, "d", Path::new("t")).unwrap()
    }

    #[test]
    fn small_corpus() {
        let utts = corpus("a\tO\nb\tO\n\nb\tO\nc\tO\n");
        let schema = SlotSchema::from_slot_lists(Vec::<(&str, Vec<&str>)>::new()).unwrap();
        let v = build_vocab(&utts, &schema);
        assert_eq!(v.num_words(), 5);
        assert_eq!(v.word_entries(), &["a", "b", "c"]);
        assert_eq!(v.word_id("zzz"), UNK);
        assert_ne!(v.word_id("a"), UNK);
        assert_ne!(v.word_id("a"), PAD);
    }

    #[test]
    fn description_words_are_included() {
        let utts = corpus("a\tO\n");
        let schema = SlotSchema::from_slot_lists([("d", vec!["object_type"])]).unwrap();
        let v = build_vocab(&utts, &schema);
        assert!(v.contains_word("object"));
        assert!(v.contains_word("type"));
    }

    #[test]
    fn order_independent() {
        let utts = corpus("x\tO\ny\tB-s\n\nq\tO\nr\tO\n\nm\tB-t\n");
        let schema = SlotSchema::from_utterances(&utts).unwrap();
        let mut rev = utts.clone();
        rev.reverse();
        assert_eq!(build_vocab(&utts, &schema), build_vocab(&rev, &schema));
    }
}
