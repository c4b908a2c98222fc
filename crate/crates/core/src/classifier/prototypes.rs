use std::collections::HashMap;
use std::fmt;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::{SlotSchema, Vocab};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tagger::lstm::uniform_param;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Block {
    Source,
    Target,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Block::Source => "source",
            Block::Target => "target",
        })
    }
}

impl std::str::FromStr for Block {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "source" => Ok(Block::Source),
            "target" => Ok(Block::Target),
            other => Err(format!("unknown prototype block `{other}`")),
        }
    }
}

/// Row order of the prototype matrix: every source-domain slot once (in
/// domain order, first occurrence wins), then every target-domain slot.
/// A slot shared by both sides has a row in each block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrototypeLayout {
    rows: Vec<(String, Block)>,
    boundary: usize,
    target_domain: String,
    domain_rows: HashMap<String, Vec<usize>>,
}

impl PrototypeLayout {
    pub fn new(schema: &SlotSchema, target: &str) -> Result<Self> {
        let mut rows: Vec<(String, Block)> = Vec::new();
        let mut source_row: HashMap<String, usize> = HashMap::new();
        let mut domain_rows = HashMap::new();
        for d in schema.source_domains(target)? {
            let mut mine = Vec::new();
            for s in schema.slots_of(d)? {
                let r = *source_row.entry(s.clone()).or_insert_with(|| {
                    rows.push((s.clone(), Block::Source));
                    rows.len() - 1
                });
                mine.push(r);
            }
            mine.sort_unstable();
            domain_rows.insert(d.to_string(), mine);
        }
        let boundary = rows.len();
        let target_slots = schema.slots_of(target)?;
        if target_slots.is_empty() {
            return Err(Error::invalid(
                "prototype_layout",
                format!("target domain `{target}` has no slots"),
            ));
        }
        let mut mine = Vec::new();
        for s in target_slots {
            rows.push((s.clone(), Block::Target));
            mine.push(rows.len() - 1);
        }
        domain_rows.insert(target.to_string(), mine);
        Ok(PrototypeLayout {
            rows,
            boundary,
            target_domain: target.to_string(),
            domain_rows,
        })
    }

    pub fn rows(&self) -> &[(String, Block)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Index of the first target-block row.
    pub fn boundary(&self) -> usize {
        self.boundary
    }

    pub fn num_source(&self) -> usize {
        self.boundary
    }

    pub fn num_target(&self) -> usize {
        self.rows.len() - self.boundary
    }

    pub fn target_domain(&self) -> &str {
        &self.target_domain
    }

    pub fn target_rows(&self) -> std::ops::Range<usize> {
        self.boundary..self.rows.len()
    }

    pub fn label(&self, row: usize) -> &str {
        &self.rows[row].0
    }

    /// Candidate rows when classifying entities of `domain`: the target
    /// block for the target domain, otherwise that domain's source rows.
    pub fn candidates(&self, domain: &str) -> Result<&[usize]> {
        self.domain_rows
            .get(domain)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownDomain(domain.to_string()))
    }

    /// Gold row of `slot` for an entity from `domain`.
    pub fn gold_row(&self, domain: &str, slot: &str) -> Result<usize> {
        let block = if domain == self.target_domain {
            Block::Target
        } else {
            Block::Source
        };
        self.rows
            .iter()
            .position(|(s, b)| s == slot && *b == block)
            .ok_or_else(|| {
                Error::invalid(
                    "gold_row",
                    format!("slot `{slot}` of domain `{domain}` has no {block} prototype"),
                )
            })
    }

    /// Rebuilds a layout from persisted rows and checks it against the one
    /// derived from `schema`.
    pub fn verify_rows(&self, rows: &[(String, Block)]) -> Result<()> {
        if rows != self.rows.as_slice() {
            return Err(Error::Checkpoint(format!(
                "prototype row order differs: checkpoint has {} rows, schema gives {}; first difference at row {}",
                rows.len(),
                self.rows.len(),
                rows.iter()
                    .zip(&self.rows)
                    .position(|(a, b)| a != b)
                    .unwrap_or(rows.len().min(self.rows.len()))
            )));
        }
        Ok(())
    }
}

/// Slot-name encoder: mean description-word embedding followed by
/// `z = e W_skip + tanh(e W_in + b_in) W_out + b_out`.
#[derive(Clone, Debug)]
pub struct PrototypeNet {
    pub dim: usize,
    skip: ParamId,
    w_in: ParamId,
    b_in: ParamId,
    w_out: ParamId,
    b_out: ParamId,
}

impl PrototypeNet {
    /// `W_skip` starts as the identity when `word_dim == dim`.
    pub fn register(store: &mut ParamStore, word_dim: usize, dim: usize, rng: &mut Rng) -> Self {
        let k_in = 1.0 / (word_dim as f64).sqrt();
        let k_out = 1.0 / (dim as f64).sqrt();
        let skip = if word_dim == dim {
            store.insert("proto.skip", Tensor::identity(dim))
        } else {
            uniform_param(store, "proto.skip", word_dim, dim, k_in, rng)
        };
        PrototypeNet {
            dim,
            skip,
            w_in: uniform_param(store, "proto.w_in", word_dim, dim, k_in, rng),
            b_in: uniform_param(store, "proto.b_in", 1, dim, k_in, rng),
            w_out: uniform_param(store, "proto.w_out", dim, dim, k_out, rng),
            b_out: store.insert("proto.b_out", Tensor::zeros(&[1, dim])),
        }
    }

    pub fn w_out(&self) -> ParamId {
        self.w_out
    }

    pub fn b_out(&self) -> ParamId {
        self.b_out
    }

    /// Records the full prototype matrix `[rows, dim]` for `layout`.
    pub fn build_prototypes(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        word_emb: ParamId,
        layout: &PrototypeLayout,
        schema: &SlotSchema,
        vocab: &Vocab,
    ) -> Result<Var> {
        let mut ids = Vec::new();
        let mut spans = Vec::with_capacity(layout.len());
        for (slot, _) in layout.rows() {
            let desc = schema
                .description(slot)
                .filter(|d| !d.is_empty())
                .ok_or_else(|| {
                    Error::invalid("build_prototypes", format!("slot `{slot}` has no description"))
                })?;
            let start = ids.len();
            ids.extend(desc.iter().map(|w| vocab.word_id(w)));
            spans.push((start, desc.len()));
        }
        // Averaging matrix: row r holds 1/n over its description words.
        let mut avg = Tensor::zeros(&[layout.len(), ids.len()]);
        for (r, (start, n)) in spans.iter().enumerate() {
            for k in *start..start + n {
                avg.set(r, k, 1.0 / *n as f64);
            }
        }
        let words = tape.embedding_lookup(store, word_emb, &ids)?;
        let avg = tape.constant(avg);
        let names = tape.matmul(avg, words)?;

        let skip = tape.param(store, self.skip);
        let w_in = tape.param(store, self.w_in);
        let b_in = tape.param(store, self.b_in);
        let w_out = tape.param(store, self.w_out);
        let b_out = tape.param(store, self.b_out);
        let linear = tape.matmul(names, skip)?;
        let pre = tape.matmul(names, w_in)?;
        let pre = tape.add(pre, b_in)?;
        let hidden = tape.tanh(pre);
        let out = tape.matmul(hidden, w_out)?;
        let z = tape.add(linear, out)?;
        tape.add(z, b_out)
    }
}

/// Built prototype vectors together with their row layout.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeMatrix {
    pub layout: PrototypeLayout,
    pub values: Tensor,
}

impl PrototypeMatrix {
    pub fn row(&self, r: usize) -> &[f64] {
        self.values.row_slice(r)
    }

    /// `[num_target, dim]` copy of the target block.
    pub fn target_block(&self) -> Tensor {
        let b = self.layout.boundary();
        let d = self.values.cols();
        Tensor::matrix(
            self.layout.num_target(),
            d,
            self.values.data()[b * d..].to_vec(),
        )
        .expect("sized")
    }

    /// Fails if any row is non-finite or has zero norm.
    pub fn check_rows(&self) -> Result<()> {
        for r in 0..self.values.rows() {
            let row = self.row(r);
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::ZeroNorm("prototype row"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, random_table, snips};
    use crate::rng::seeded;

    #[test]
    fn snips_layout_for_get_weather() {
        let schema = snips::reference_schema();
        let layout = PrototypeLayout::new(&schema, "GetWeather").unwrap();
        let mut expected_source: Vec<&str> = Vec::new();
        for d in schema.source_domains("GetWeather").unwrap() {
            for s in schema.slots_of(d).unwrap() {
                if !expected_source.contains(&s.as_str()) {
                    expected_source.push(s);
                }
            }
        }
        let source: Vec<&str> = layout.rows()[..layout.boundary()]
            .iter()
            .map(|(s, _)| s.as_str())
            .collect();
        assert_eq!(source, expected_source);
        assert_eq!(layout.num_source(), 35);
        let target: Vec<&str> = layout.rows()[layout.boundary()..]
            .iter()
            .map(|(s, _)| s.as_str())
            .collect();
        assert_eq!(target, schema.slots_of("GetWeather").unwrap());
        // `city` is shared: one row in each block.
        assert_eq!(layout.rows().iter().filter(|(s, _)| s == "city").count(), 2);
        assert!(layout.gold_row("BookRestaurant", "city").unwrap() < layout.boundary());
        assert!(layout.gold_row("GetWeather", "city").unwrap() >= layout.boundary());
    }

    fn tiny() -> (SlotSchema, Vocab, ParamStore, ParamId, PrototypeNet, PrototypeLayout) {
        let schema = SlotSchema::from_slot_lists([
            ("A", vec!["artist", "music_item"]),
            ("B", vec!["item_music", "city"]),
        ])
        .unwrap();
        let vocab = build_vocab(&[], &schema);
        let mut rng = seeded(3);
        let mut store = ParamStore::new();
        let emb = store.insert("word_emb", random_table(vocab.num_words(), 4, &mut rng));
        let net = PrototypeNet::register(&mut store, 4, 4, &mut rng);
        let layout = PrototypeLayout::new(&schema, "B").unwrap();
        (schema, vocab, store, emb, net, layout)
    }

    #[test]
    fn zero_hidden_path_gives_linear_map_of_mean_embedding() {
        let (schema, vocab, mut store, emb, net, layout) = tiny();
        store.get_mut(net.w_out()).value = Tensor::zeros(&[4, 4]);
        let mut tape = Tape::new();
        let z = net
            .build_prototypes(&mut tape, &store, emb, &layout, &schema, &vocab)
            .unwrap();
        let table = store.value(emb);
        let (m, i) = (vocab.word_id("music"), vocab.word_id("item"));
        let mean: Vec<f64> = (0..4)
            .map(|c| (table.get(m, c) + table.get(i, c)) / 2.0)
            .collect();
        let row = layout.gold_row("A", "music_item").unwrap();
        for c in 0..4 {
            assert!((tape.value(z).get(row, c) - mean[c]).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_descriptions_give_identical_rows() {
        let (schema, vocab, store, emb, net, layout) = tiny();
        let mut tape = Tape::new();
        let z = net
            .build_prototypes(&mut tape, &store, emb, &layout, &schema, &vocab)
            .unwrap();
        let a = layout.gold_row("A", "music_item").unwrap();
        let b = layout.gold_row("B", "item_music").unwrap();
        assert_eq!(tape.value(z).row_slice(a), tape.value(z).row_slice(b));
    }
}
