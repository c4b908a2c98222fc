use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{Vocab, PAD};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{uniform, Rng};

/// Initialization range for rows without a pretrained vector.
pub const RANDOM_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub trainable: bool,
    /// Rows filled from the pretrained file.
    pub pretrained_rows: usize,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

/// A `rows x dim` table drawn uniformly from `[-0.1, 0.1]`, with a zero
/// padding row.
pub fn random_table(rows: usize, dim: usize, rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(&[rows, dim]);
    for r in 0..rows {
        if r == PAD {
            continue;
        }
        for c in 0..dim {
            t.set(r, c, uniform(rng, RANDOM_INIT_SCALE));
        }
    }
    t
}

/// Loads GloVe-style text vectors (`word f1 ... fd` per line) for the words
/// of `vocab`. Words missing from the file get uniform random rows drawn in
/// index order; the padding row is zero.
///
/// With no file, the whole table is random unless `require_pretrained` is
/// set, in which case that is an error.
pub fn load_embeddings(
    path: Option<&Path>,
    vocab: &Vocab,
    dim: usize,
    require_pretrained: bool,
    rng: &mut Rng,
) -> Result<EmbeddingTable> {
    let mut found: HashMap<usize, Vec<f64>> = HashMap::new();
    match path {
        Some(p) if p.exists() => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let mut file_dim: Option<usize> = None;
            for (i, line) in text.lines().enumerate() {
                let mut parts = line.split_whitespace();
                let Some(word) = parts.next() else { continue };
                let values: Vec<f64> = parts
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse {
                        path: p.to_path_buf(),
                        line: i + 1,
                        msg: format!("bad float: {e}"),
                    })?;
                match file_dim {
                    None => file_dim = Some(values.len()),
                    Some(d) if d != values.len() => {
                        return Err(Error::Parse {
                            path: p.to_path_buf(),
                            line: i + 1,
                            msg: format!("dimension {} differs from {d}", values.len()),
                        })
                    }
                    _ => {}
                }
                if vocab.contains_word(word) {
                    found.entry(vocab.word_id(word)).or_insert(values);
                }
            }
            if let Some(d) = file_dim {
                if d != dim {
                    return Err(Error::Config(format!(
                        "embedding file {} has dimension {d}, configured word_dim is {dim}",
                        p.display()
                    )));
                }
            }
        }
        Some(p) if require_pretrained => {
            return Err(Error::Config(format!(
                "pretrained embeddings required but {} does not exist",
                p.display()
            )))
        }
        None if require_pretrained => {
            return Err(Error::Config(
                "pretrained embeddings required but no file configured".into(),
            ))
        }
        _ => {}
    }
    let mut matrix = Tensor::zeros(&[vocab.num_words(), dim]);
    for r in 0..vocab.num_words() {
        if r == PAD {
            continue;
        }
        match found.get(&r) {
            Some(v) => {
                for (c, x) in v.iter().enumerate() {
                    matrix.set(r, c, *x);
                }
            }
            None => {
                for c in 0..dim {
                    matrix.set(r, c, uniform(rng, RANDOM_INIT_SCALE));
                }
            }
        }
    }
    Ok(EmbeddingTable {
        matrix,
        trainable: true,
        pretrained_rows: found.len(),
    })
}
