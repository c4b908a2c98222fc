//! The joint two-stage model: stage-1 tagger, entity encoder and prototype
//! network over one parameter store.

use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::{Mode, ParamStore, Tape, Tensor, Var};
use crate::classifier::{predict_slot_type, EntityEncoder, PrototypeLayout, PrototypeMatrix, PrototypeNet};
use crate::data::{
    build_vocab, load_embeddings, random_table, BioTag, Corpus, EmbeddingTable, SlotSchema,
    SlotSpan, Utterance, Vocab,
};
use crate::exec::{self, Execution};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tagger::{extract_spans, viterbi_decode, EncodedTokens, Encoder, EncoderConfig};

/// A predicted or gold typed span.
pub type SpanPrediction = SlotSpan;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Per direction.
    pub entity_hidden: usize,
    /// Prototype and entity representation width `d`.
    pub proto_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            entity_hidden: 200,
            proto_dim: 300,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.entity_hidden == 0 || self.proto_dim == 0 {
            return Err(Error::Config("entity_hidden and proto_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let e = &self.encoder;
        [
            ("word_dim", e.word_dim.to_string()),
            ("char_dim", e.char_dim.to_string()),
            ("char_hidden", e.char_hidden.to_string()),
            ("layers", e.layers.to_string()),
            ("hidden", e.hidden.to_string()),
            ("dropout", format!("{:?}", e.dropout)),
            ("entity_hidden", self.entity_hidden.to_string()),
            ("proto_dim", self.proto_dim.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Reads the keys written by [`ModelConfig::to_pairs`]; missing keys keep
    /// their defaults.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(pairs: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
            match pairs.get(key) {
                None => Ok(default),
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`"))),
            }
        }
        let d = ModelConfig::default();
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                word_dim: get(pairs, "word_dim", d.encoder.word_dim)?,
                char_dim: get(pairs, "char_dim", d.encoder.char_dim)?,
                char_hidden: get(pairs, "char_hidden", d.encoder.char_hidden)?,
                layers: get(pairs, "layers", d.encoder.layers)?,
                hidden: get(pairs, "hidden", d.encoder.hidden)?,
                dropout: get(pairs, "dropout", d.encoder.dropout)?,
            },
            entity_hidden: get(pairs, "entity_hidden", d.entity_hidden)?,
            proto_dim: get(pairs, "proto_dim", d.proto_dim)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
pub struct PclcModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub entity: EntityEncoder,
    pub proto_net: PrototypeNet,
    pub layout: PrototypeLayout,
    pub schema: SlotSchema,
    pub vocab: Vocab,
}

impl PclcModel {
    /// Registers every parameter in a fixed order: embeddings, stage-1
    /// encoder and CRF, entity encoder, prototype network.
    pub fn new(
        config: ModelConfig,
        schema: SlotSchema,
        target: &str,
        vocab: Vocab,
        words: EmbeddingTable,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        if words.matrix.rows() != vocab.num_words() {
            return Err(Error::Config(format!(
                "embedding table has {} rows for {} vocabulary words",
                words.matrix.rows(),
                vocab.num_words()
            )));
        }
        let layout = PrototypeLayout::new(&schema, target)?;
        let chars = random_table(vocab.num_chars(), config.encoder.char_dim, rng);
        let mut store = ParamStore::new();
        let encoder = Encoder::register(&mut store, &config.encoder, words.matrix, chars, rng)?;
        if !words.trainable {
            store.get_mut(encoder.word_emb).requires_grad = false;
        }
        let entity = EntityEncoder::register(
            &mut store,
            config.encoder.output_dim(),
            config.entity_hidden,
            config.proto_dim,
            rng,
        );
        let proto_net = PrototypeNet::register(&mut store, config.encoder.word_dim, config.proto_dim, rng);
        Ok(PclcModel {
            config,
            store,
            encoder,
            entity,
            proto_net,
            layout,
            schema,
            vocab,
        })
    }

    /// Vocabulary over the whole corpus and schema, word vectors from
    /// `embeddings` where available, then [`PclcModel::new`].
    pub fn from_corpus(
        config: ModelConfig,
        corpus: &Corpus,
        target: &str,
        embeddings: Option<&Path>,
        require_pretrained: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !corpus.schema.has_domain(target) {
            return Err(Error::UnknownDomain(target.to_string()));
        }
        let vocab = build_vocab(&corpus.utterances, &corpus.schema);
        let words = load_embeddings(
            embeddings,
            &vocab,
            config.encoder.word_dim,
            require_pretrained,
            rng,
        )?;
        PclcModel::new(config, corpus.schema.clone(), target, vocab, words, rng)
    }

    pub fn target_domain(&self) -> &str {
        self.layout.target_domain()
    }

    /// Records the prototype matrix on `tape`.
    pub fn prototypes(&self, tape: &mut Tape) -> Result<Var> {
        self.proto_net.build_prototypes(
            tape,
            &self.store,
            self.encoder.word_emb,
            &self.layout,
            &self.schema,
            &self.vocab,
        )
    }

    /// Current prototype values.
    pub fn prototype_matrix(&self) -> Result<PrototypeMatrix> {
        let mut tape = Tape::new();
        let p = self.prototypes(&mut tape)?;
        Ok(PrototypeMatrix {
            layout: self.layout.clone(),
            values: tape.value(p).clone(),
        })
    }

    pub fn tokens(&self, tokens: &[String]) -> EncodedTokens {
        EncodedTokens::new(tokens, &self.vocab)
    }

    /// Eval-mode Viterbi tags followed by slot typing of every extracted
    /// span against the candidate rows of `domain`.
    pub fn predict(
        &self,
        protos: &PrototypeMatrix,
        tokens: &[String],
        domain: &str,
    ) -> Result<(Vec<BioTag>, Vec<SpanPrediction>)> {
        let candidates = self.layout.candidates(domain)?;
        let encoded = self.tokens(tokens);
        let mut tape = Tape::new();
        // Eval mode never draws from the generator.
        let mut unused = crate::rng::seeded(0);
        let hidden = self
            .encoder
            .encode_utterance(&mut tape, &self.store, &encoded, Mode::Eval, &mut unused)?;
        let emissions = self.encoder.emissions(&mut tape, &self.store, hidden)?;
        let crf = self.encoder.crf.scores(&self.store);
        let tags = viterbi_decode(tape.value(emissions), &crf)?;
        let mut spans = Vec::new();
        for span in extract_spans(&tags) {
            let r = self.entity.encode_entity(&mut tape, &self.store, hidden, span)?;
            let row = predict_slot_type(tape.value(r).data(), &protos.values, candidates)?;
            spans.push(SlotSpan {
                start: span.start,
                end: span.end,
                slot: self.layout.label(row).to_string(),
            });
        }
        Ok((tags, spans))
    }

    /// Span predictions for each utterance, in input order, using its own
    /// domain's candidate rows.
    pub fn predict_many(
        &self,
        utterances: &[&Utterance],
        exec_mode: Execution,
    ) -> Result<Vec<Vec<SpanPrediction>>> {
        let protos = self.prototype_matrix()?;
        exec::map(exec_mode, utterances, |_, u| {
            self.predict(&protos, &u.tokens, &u.domain).map(|(_, spans)| spans)
        })
        .into_iter()
        .collect()
    }

    /// Replaces parameter values from `values` (same names and shapes).
    pub fn load_values(&mut self, values: &ParamStore) -> Result<()> {
        self.store.copy_values_from(values)
    }

    pub fn parameter_tensor(&self, name: &str) -> Option<&Tensor> {
        self.store.id(name).map(|id| self.store.value(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn tiny() -> PclcModel {
        let tagged = |pairs: &[(&str, &str)]| -> Vec<(String, String)> {
            pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
        };
        let utts = vec![
            Utterance::from_tagged("a:0", "a", &tagged(&[("play", "O"), ("jazz", "B-genre")])).unwrap(),
            Utterance::from_tagged("b:0", "b", &tagged(&[("in", "O"), ("paris", "B-city")])).unwrap(),
        ];
        let schema = SlotSchema::from_utterances(&utts).unwrap();
        let vocab = build_vocab(&utts, &schema);
        let mut rng = seeded(3);
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                word_dim: 4,
                char_dim: 3,
                char_hidden: 2,
                layers: 1,
                hidden: 3,
                dropout: 0.0,
            },
            entity_hidden: 2,
            proto_dim: 4,
        };
        let words = load_embeddings(None, &vocab, 4, false, &mut rng).unwrap();
        PclcModel::new(cfg, schema, "b", vocab, words, &mut rng).unwrap()
    }

    #[test]
    fn config_pairs_round_trip() {
        let cfg = tiny().config;
        let pairs: BTreeMap<_, _> = cfg.to_pairs().into_iter().collect();
        assert_eq!(ModelConfig::from_pairs(&pairs).unwrap(), cfg);
    }

    #[test]
    fn predictions_use_candidate_rows() {
        let model = tiny();
        let protos = model.prototype_matrix().unwrap();
        assert_eq!(protos.values.shape(), &[2, 4]);
        let toks: Vec<String> = ["in", "paris", "jazz"].iter().map(|s| s.to_string()).collect();
        let (tags, spans) = model.predict(&protos, &toks, "b").unwrap();
        assert_eq!(tags.len(), 3);
        assert!(spans.iter().all(|s| s.slot == "city"));
        let (_, again) = model.predict(&protos, &toks, "b").unwrap();
        assert_eq!(spans, again);
    }
}
