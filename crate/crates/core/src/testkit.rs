//! Small in-memory corpora and models for tests, benches and examples.

use std::path::PathBuf;

use crate::data::{Corpus, Utterance};
use crate::error::Result;
use crate::model::{ModelConfig, PclcModel};
use crate::rng::Rng;
use crate::tagger::EncoderConfig;

/// Directory of the bundled fixture corpora and embeddings.
pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub const TOY_TARGET: &str = "gamma";

const TOY: &[(&str, &[&str])] = &[
    ("alpha", &["show/O me/O red/B-color", "the/O big/B-size red/B-color", "show/O the/O small/B-size blue/B-color", "show/O me/O the/O"]),
    ("beta", &["show/O round/B-shape", "the/O square/B-shape", "me/O round/B-shape square/I-shape"]),
    ("gamma", &["me/O happy/B-mood loud/B-tone", "the/O sad/B-mood", "show/O soft/B-tone"]),
];

/// Three domains; `gamma` is the target with two unseen slots. The word
/// vocabulary has exactly 20 entries including padding and unknown.
pub fn toy_corpus() -> Corpus {
    let mut utterances = Vec::new();
    for (domain, lines) in TOY {
        for (n, line) in lines.iter().enumerate() {
            let pairs: Vec<(String, String)> = line
                .split(' ')
                .map(|p| {
                    let (w, t) = p.split_once('/').expect("word/tag");
                    (w.to_string(), t.to_string())
                })
                .collect();
            utterances.push(
                Utterance::from_tagged(format!("{domain}:{n}"), *domain, &pairs).expect("valid toy tags"),
            );
        }
    }
    Corpus::from_utterances(utterances).expect("valid toy corpus")
}

/// Prototype dimension 8, tiny recurrent widths.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            word_dim: 8,
            char_dim: 3,
            char_hidden: 2,
            layers: 2,
            hidden: 3,
            dropout: 0.3,
        },
        entity_hidden: 3,
        proto_dim: 8,
    }
}

pub fn toy_model(rng: &mut Rng) -> Result<PclcModel> {
    PclcModel::from_corpus(toy_config(), &toy_corpus(), TOY_TARGET, None, false, rng)
}

/// Widths used for the bundled fixture corpora (16-d embeddings).
pub fn fixture_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            word_dim: 16,
            char_dim: 8,
            char_hidden: 8,
            layers: 2,
            hidden: 16,
            dropout: 0.3,
        },
        entity_hidden: 16,
        proto_dim: 16,
    }
}
