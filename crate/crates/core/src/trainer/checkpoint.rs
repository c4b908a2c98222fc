//! Single-file checkpoint: a text manifest terminated by `end_manifest`,
//! followed by a raw little-endian f64 payload.
//!
//! ```text
//! pclc-checkpoint
//! format_version<TAB>1
//! epoch<TAB>12
//! best_val_f1<TAB>0.8125
//! config<TAB>key<TAB>value
//! vocab_word<TAB>word
//! vocab_char<TAB>codepoint
//! proto_row<TAB>slot<TAB>source|target
//! param<TAB>name<TAB>rows<TAB>cols<TAB>offset<TAB>trainable
//! adam<TAB>step<TAB>lr<TAB>beta1<TAB>beta2<TAB>eps
//! adam_moment<TAB>name<TAB>first_offset<TAB>second_offset
//! payload_bytes<TAB>n
//! end_manifest
//! ```
//!
//! Offsets count f64 values from the start of the payload.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autodiff::{AdamConfig, AdamState, ParamStore, Tensor};
use crate::classifier::Block;
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::model::PclcModel;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "pclc-checkpoint";
const END: &str = "end_manifest\n";

#[derive(Clone, Debug, PartialEq)]
pub struct SavedParam {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SavedMoments {
    pub name: String,
    pub first: Tensor,
    pub second: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub best_val_f1: f64,
    pub config: Vec<(String, String)>,
    pub vocab_words: Vec<String>,
    pub vocab_chars: Vec<char>,
    pub proto_rows: Vec<(String, Block)>,
    pub params: Vec<SavedParam>,
    pub adam_config: AdamConfig,
    pub adam_step: u64,
    pub moments: Vec<SavedMoments>,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn capture(
        model: &PclcModel,
        adam: &AdamState,
        epoch: usize,
        best_val_f1: f64,
        config: Vec<(String, String)>,
    ) -> Self {
        let params = model
            .store
            .iter()
            .map(|(_, p)| SavedParam {
                name: p.name.clone(),
                value: p.value.clone(),
                trainable: p.requires_grad,
            })
            .collect();
        let moments = model
            .store
            .iter()
            .filter_map(|(id, p)| {
                let first = adam.first_moment.get(id.index())?.as_ref()?;
                let second = adam.second_moment.get(id.index())?.as_ref()?;
                Some(SavedMoments {
                    name: p.name.clone(),
                    first: first.clone(),
                    second: second.clone(),
                })
            })
            .collect();
        Checkpoint {
            epoch,
            best_val_f1,
            config,
            vocab_words: model.vocab.word_entries().to_vec(),
            vocab_chars: model.vocab.char_entries().to_vec(),
            proto_rows: model.layout.rows().to_vec(),
            params,
            adam_config: adam.config,
            adam_step: adam.step,
            moments,
        }
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::from_entries(self.vocab_words.clone(), self.vocab_chars.clone())
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Copies the saved parameters into `model`. Refuses on a different
    /// prototype row order, a missing or extra parameter, or a shape change.
    pub fn apply_to(&self, model: &mut PclcModel) -> Result<()> {
        model.layout.verify_rows(&self.proto_rows)?;
        if self.params.len() != model.store.len() {
            return Err(err(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for saved in &self.params {
            let id = model
                .store
                .id(&saved.name)
                .ok_or_else(|| err(format!("model has no parameter `{}`", saved.name)))?;
            let p = model.store.get_mut(id);
            if p.value.shape() != saved.value.shape() {
                return Err(err(format!(
                    "shape mismatch for `{}`: checkpoint {:?}, model {:?}",
                    saved.name,
                    saved.value.shape(),
                    p.value.shape()
                )));
            }
            p.value = saved.value.clone();
            p.requires_grad = saved.trainable;
            p.grad = None;
        }
        Ok(())
    }

    /// Optimizer state laid out for `store`.
    pub fn adam_state(&self, store: &ParamStore) -> Result<AdamState> {
        let mut adam = AdamState::new(self.adam_config, store);
        adam.step = self.adam_step;
        for m in &self.moments {
            let id = store
                .id(&m.name)
                .ok_or_else(|| err(format!("optimizer state for unknown parameter `{}`", m.name)))?;
            if store.value(id).shape() != m.first.shape() {
                return Err(err(format!("optimizer state shape mismatch for `{}`", m.name)));
            }
            adam.first_moment[id.index()] = Some(m.first.clone());
            adam.second_moment[id.index()] = Some(m.second.clone());
        }
        Ok(adam)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::new();
        let mut payload: Vec<f64> = Vec::new();
        let _ = writeln!(manifest, "{MAGIC}");
        let _ = writeln!(manifest, "format_version\t{CHECKPOINT_FORMAT_VERSION}");
        let _ = writeln!(manifest, "epoch\t{}", self.epoch);
        let _ = writeln!(manifest, "best_val_f1\t{:?}", self.best_val_f1);
        for (k, v) in &self.config {
            let _ = writeln!(manifest, "config\t{k}\t{v}");
        }
        for w in &self.vocab_words {
            let _ = writeln!(manifest, "vocab_word\t{w}");
        }
        for c in &self.vocab_chars {
            let _ = writeln!(manifest, "vocab_char\t{}", *c as u32);
        }
        for (slot, block) in &self.proto_rows {
            let _ = writeln!(manifest, "proto_row\t{slot}\t{block}");
        }
        for p in &self.params {
            let _ = writeln!(
                manifest,
                "param\t{}\t{}\t{}\t{}\t{}",
                p.name,
                p.value.rows(),
                p.value.cols(),
                payload.len(),
                p.trainable
            );
            payload.extend_from_slice(p.value.data());
        }
        let a = &self.adam_config;
        let _ = writeln!(
            manifest,
            "adam\t{}\t{:?}\t{:?}\t{:?}\t{:?}",
            self.adam_step, a.lr, a.beta1, a.beta2, a.eps
        );
        for m in &self.moments {
            let first = payload.len();
            payload.extend_from_slice(m.first.data());
            let second = payload.len();
            payload.extend_from_slice(m.second.data());
            let _ = writeln!(manifest, "adam_moment\t{}\t{first}\t{second}", m.name);
        }
        let _ = writeln!(manifest, "payload_bytes\t{}", payload.len() * 8);
        manifest.push_str(END);
        let mut bytes = manifest.into_bytes();
        bytes.reserve(payload.len() * 8);
        for v in payload {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let end = find(bytes, END.as_bytes())
            .ok_or_else(|| err("manifest terminator `end_manifest` not found"))?;
        let manifest = std::str::from_utf8(&bytes[..end])
            .map_err(|_| err("manifest is not valid UTF-8"))?;
        let payload = &bytes[end + END.len()..];
        let mut lines = manifest.lines();
        if lines.next() != Some(MAGIC) {
            return Err(err("not a checkpoint file (bad magic line)"));
        }

        let mut ck = Checkpoint {
            epoch: 0,
            best_val_f1: 0.0,
            config: Vec::new(),
            vocab_words: Vec::new(),
            vocab_chars: Vec::new(),
            proto_rows: Vec::new(),
            params: Vec::new(),
            adam_config: AdamConfig::default(),
            adam_step: 0,
            moments: Vec::new(),
        };
        let mut version: Option<u32> = None;
        let mut declared_bytes: Option<usize> = None;
        let mut param_specs: Vec<(String, usize, usize, usize, bool)> = Vec::new();
        let mut moment_specs: Vec<(String, usize, usize)> = Vec::new();
        for (n, line) in lines.enumerate() {
            let lineno = n + 2;
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = || err(format!("malformed manifest line {lineno}: `{line}`"));
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
            let float = |s: &str| s.parse::<f64>().map_err(|_| bad());
            match fields.as_slice() {
                ["format_version", v] => {
                    let v: u32 = v.parse().map_err(|_| bad())?;
                    if v != CHECKPOINT_FORMAT_VERSION {
                        return Err(err(format!(
                            "format version {v} is not supported (expected {CHECKPOINT_FORMAT_VERSION})"
                        )));
                    }
                    version = Some(v);
                }
                ["epoch", v] => ck.epoch = num(v)?,
                ["best_val_f1", v] => ck.best_val_f1 = float(v)?,
                ["config", k, v] => ck.config.push((k.to_string(), v.to_string())),
                ["vocab_word", w] => ck.vocab_words.push(w.to_string()),
                ["vocab_char", c] => {
                    let code: u32 = c.parse().map_err(|_| bad())?;
                    ck.vocab_chars.push(char::from_u32(code).ok_or_else(bad)?);
                }
                ["proto_row", slot, block] => {
                    let block: Block = block.parse().map_err(|_| bad())?;
                    ck.proto_rows.push((slot.to_string(), block));
                }
                ["param", name, rows, cols, offset, trainable] => param_specs.push((
                    name.to_string(),
                    num(rows)?,
                    num(cols)?,
                    num(offset)?,
                    trainable.parse().map_err(|_| bad())?,
                )),
                ["adam", step, lr, b1, b2, eps] => {
                    ck.adam_step = step.parse().map_err(|_| bad())?;
                    ck.adam_config = AdamConfig {
                        lr: float(lr)?,
                        beta1: float(b1)?,
                        beta2: float(b2)?,
                        eps: float(eps)?,
                    };
                }
                ["adam_moment", name, first, second] => {
                    moment_specs.push((name.to_string(), num(first)?, num(second)?))
                }
                ["payload_bytes", v] => declared_bytes = Some(num(v)?),
                _ => return Err(bad()),
            }
        }
        if version.is_none() {
            return Err(err("manifest lacks format_version"));
        }
        let expected = declared_bytes.ok_or_else(|| err("manifest lacks payload_bytes"))?;
        if payload.len() != expected {
            return Err(err(format!(
                "truncated or corrupted payload: expected {expected} bytes, found {}",
                payload.len()
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let slice = |offset: usize, len: usize, what: &str| -> Result<Vec<f64>> {
            values
                .get(offset..offset + len)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| err(format!("{what} lies outside the payload")))
        };
        let mut shapes = std::collections::HashMap::new();
        for (name, rows, cols, offset, trainable) in param_specs {
            let data = slice(offset, rows * cols, &name)?;
            shapes.insert(name.clone(), (rows, cols));
            ck.params.push(SavedParam {
                name,
                value: Tensor::matrix(rows, cols, data)?,
                trainable,
            });
        }
        for (name, first, second) in moment_specs {
            let &(rows, cols) = shapes
                .get(&name)
                .ok_or_else(|| err(format!("optimizer state for unknown parameter `{name}`")))?;
            ck.moments.push(SavedMoments {
                first: Tensor::matrix(rows, cols, slice(first, rows * cols, &name)?)?,
                second: Tensor::matrix(rows, cols, slice(second, rows * cols, &name)?)?,
                name,
            });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(err(format!("checkpoint not found: {}", path.display())));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}
