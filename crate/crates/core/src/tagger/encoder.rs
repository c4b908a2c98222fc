use super::crf::{CrfLayer, NUM_TAGS};
use super::lstm::{uniform_param, BiLstm};
use crate::autodiff::{Mode, ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    /// Per direction.
    pub char_hidden: usize,
    pub layers: usize,
    /// Per direction.
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            word_dim: 300,
            char_dim: 25,
            char_hidden: 25,
            layers: 2,
            hidden: 200,
            dropout: 0.3,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("char_hidden", self.char_hidden),
            ("layers", self.layers),
            ("hidden", self.hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Width of each per-token hidden state.
    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }
}

/// Token indices of one utterance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedTokens {
    pub words: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
}

impl EncodedTokens {
    pub fn new(tokens: &[String], vocab: &Vocab) -> Self {
        EncodedTokens {
            words: tokens.iter().map(|t| vocab.word_id(t)).collect(),
            chars: tokens
                .iter()
                .map(|t| t.chars().map(|c| vocab.char_id(c)).collect())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Stage-1 network: word + character embeddings, stacked BiLSTM, emission
/// projection and CRF.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub word_emb: ParamId,
    pub char_emb: ParamId,
    char_lstm: BiLstm,
    layers: Vec<BiLstm>,
    emission_w: ParamId,
    emission_b: ParamId,
    pub crf: CrfLayer,
}

impl Encoder {
    pub fn register(
        store: &mut ParamStore,
        config: &EncoderConfig,
        word_table: Tensor,
        char_table: Tensor,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        if word_table.cols() != config.word_dim || char_table.cols() != config.char_dim {
            return Err(Error::Config(format!(
                "embedding tables {:?}/{:?} do not match word_dim {} / char_dim {}",
                word_table.shape(),
                char_table.shape(),
                config.word_dim,
                config.char_dim
            )));
        }
        let word_emb = store.insert("word_emb", word_table);
        let char_emb = store.insert("char_emb", char_table);
        let char_lstm = BiLstm::register(store, "char_lstm", config.char_dim, config.char_hidden, rng);
        let mut layers = Vec::with_capacity(config.layers);
        let mut input = config.word_dim + 2 * config.char_hidden;
        for l in 0..config.layers {
            layers.push(BiLstm::register(store, &format!("encoder.l{l}"), input, config.hidden, rng));
            input = 2 * config.hidden;
        }
        let k = 1.0 / (input as f64).sqrt();
        let emission_w = uniform_param(store, "emission.w", input, NUM_TAGS, k, rng);
        let emission_b = uniform_param(store, "emission.b", 1, NUM_TAGS, k, rng);
        let crf = CrfLayer::register(store, "crf", rng);
        Ok(Encoder {
            config: config.clone(),
            word_emb,
            char_emb,
            char_lstm,
            layers,
            emission_w,
            emission_b,
            crf,
        })
    }

    /// Per-token hidden states `[T, 2 * hidden]`: forward and backward
    /// states of the last BiLSTM layer. Dropout applies only in train mode.
    pub fn encode_utterance(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        tokens: &EncodedTokens,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::invalid("encode_utterance", "empty utterance"));
        }
        let words = tape.embedding_lookup(store, self.word_emb, &tokens.words)?;
        let mut char_states = Vec::with_capacity(tokens.len());
        for chars in &tokens.chars {
            if chars.is_empty() {
                return Err(Error::invalid("encode_utterance", "token without characters"));
            }
            let emb = tape.embedding_lookup(store, self.char_emb, chars)?;
            char_states.push(self.char_lstm.run(tape, store, emb)?.final_state);
        }
        let chars = tape.concat(&char_states, 0)?;
        let mut x = tape.concat(&[words, chars], 1)?;
        for layer in &self.layers {
            x = tape.dropout(x, self.config.dropout, mode, rng)?;
            x = layer.run(tape, store, x)?.states;
        }
        Ok(x)
    }

    /// Per-token tag scores `[T, 3]`.
    pub fn emissions(&self, tape: &mut Tape, store: &ParamStore, hidden: Var) -> Result<Var> {
        let w = tape.param(store, self.emission_w);
        let b = tape.param(store, self.emission_b);
        let e = tape.matmul(hidden, w)?;
        tape.add(e, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::random_table;
    use crate::rng::seeded;

    fn small() -> (ParamStore, Encoder, Vocab) {
        let vocab = Vocab::from_entries(
            vec!["play".into(), "some".into(), "jazz".into()],
            "adjlmosyz".chars().collect(),
        );
        let cfg = EncoderConfig {
            word_dim: 6,
            char_dim: 3,
            char_hidden: 2,
            layers: 2,
            hidden: 200,
            dropout: 0.3,
        };
        let mut rng = seeded(0);
        let mut store = ParamStore::new();
        let words = random_table(vocab.num_words(), 6, &mut rng);
        let chars = random_table(vocab.num_chars(), 3, &mut rng);
        let enc = Encoder::register(&mut store, &cfg, words, chars, &mut rng).unwrap();
        (store, enc, vocab)
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn output_is_one_400_dim_vector_per_token() {
        let (store, enc, vocab) = small();
        let t = EncodedTokens::new(&toks("play some jazz play unknownword"), &vocab);
        let mut tape = Tape::new();
        let h = enc
            .encode_utterance(&mut tape, &store, &t, Mode::Eval, &mut seeded(1))
            .unwrap();
        assert_eq!(tape.shape(h), &[5, 400]);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let (store, enc, vocab) = small();
        let t = EncodedTokens::new(&toks("play jazz"), &vocab);
        let run = |seed| {
            let mut tape = Tape::new();
            let h = enc
                .encode_utterance(&mut tape, &store, &t, Mode::Eval, &mut seeded(seed))
                .unwrap();
            tape.value(h).clone()
        };
        assert_eq!(run(1), run(2));
    }

    #[test]
    fn single_token_and_empty() {
        let (store, enc, vocab) = small();
        let mut tape = Tape::new();
        let t = EncodedTokens::new(&toks("jazz"), &vocab);
        let h = enc
            .encode_utterance(&mut tape, &store, &t, Mode::Train, &mut seeded(1))
            .unwrap();
        assert_eq!(tape.shape(h), &[1, 400]);
        let empty = EncodedTokens::new(&[], &vocab);
        assert!(enc
            .encode_utterance(&mut tape, &store, &empty, Mode::Eval, &mut seeded(1))
            .is_err());
    }
}
