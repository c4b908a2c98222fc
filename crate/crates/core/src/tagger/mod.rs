//! Stage 1: coarse BIO entity tagging with a word+char BiLSTM encoder and a
//! linear-chain CRF.

pub mod crf;
mod encoder;
pub mod lstm;
mod spans;

pub use crf::{crf_nll, log_partition, path_score, viterbi_decode, CrfLayer, CrfScores, NUM_TAGS};
pub use encoder::{EncodedTokens, Encoder, EncoderConfig};
pub use lstm::{BiLstm, BiLstmOutput, Lstm};
pub use spans::{extract_spans, TaggedSpan};
