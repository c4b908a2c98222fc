//! `key = value` run configuration with command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use pclc_core::classifier::{KlDirection, PclcHyperparams};
use pclc_core::exec::Execution;
use pclc_core::model::ModelConfig;
use pclc_core::tagger::EncoderConfig;
use pclc_core::trainer::{PcRows, TrainConfig, FEW_SHOT_EPOCHS, ZERO_SHOT_EPOCHS};

/// Environment variable naming the root for relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "PCLC_OUTPUT_ROOT";

/// Every recognised key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("corpus_dir", "data/snips", "directory of <domain>.conll files"),
    ("embeddings", "", "GloVe-style text vectors; empty for random init"),
    ("require_pretrained", "false", "fail when the embeddings file is missing"),
    ("target", "GetWeather", "held-out target domain"),
    ("output_dir", "runs/latest", "run directory; relative paths resolve under $PCLC_OUTPUT_ROOT"),
    ("seed", "1", "seed for splits, initialization, shuffling and dropout"),
    ("few_shot", "0", "target utterances moved from test into train"),
    ("lr", "0.0005", "Adam learning rate"),
    ("batch_size", "64", "utterances per batch"),
    ("patience", "15", "epochs without validation improvement before stopping"),
    ("max_epochs", "auto", "epoch cap; auto = 30 zero-shot, 60 few-shot"),
    ("lambda", "0.6", "label-confusion factor"),
    ("tau", "1.0", "contrastive temperature"),
    ("alpha", "1.0", "KL term weight"),
    ("enable_pcl", "true", "prototypical contrastive loss"),
    ("enable_lc", "true", "label-confusion KL loss"),
    ("kl_direction", "target_to_pred", "target_to_pred | pred_to_target"),
    ("pc_rows", "all", "contrastive denominator rows: all | source"),
    ("crf_weight", "1.0", "CRF loss multiplier"),
    ("clip_norm", "5.0", "global gradient-norm ceiling"),
    ("execution", "parallel", "parallel | sequential"),
    ("track_train_f1", "false", "also log training-set span F1 each epoch"),
    ("word_dim", "300", "word embedding width"),
    ("char_dim", "25", "character embedding width"),
    ("char_hidden", "25", "character BiLSTM width per direction"),
    ("layers", "2", "BiLSTM layers"),
    ("hidden", "200", "BiLSTM width per direction"),
    ("dropout", "0.3", "dropout before each BiLSTM layer"),
    ("entity_hidden", "200", "entity BiLSTM width per direction"),
    ("proto_dim", "300", "prototype width"),
];

/// Keys describing where a run lives rather than what it computes; left
/// out of checkpoints so identical runs in different places match.
const LOCATION_KEYS: &[&str] = &["output_dir"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS
                .iter()
                .map(|(k, v, _)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

fn parse_line(line: &str) -> Result<Option<(String, String)>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| anyhow!("expected `key = value`, got `{line}`"))?;
    Ok(Some((k.trim().to_string(), v.trim().to_string())))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            if let Some((k, v)) = parse_line(line).with_context(|| format!("config line {}", n + 1))? {
                cfg.set(&k, &v).with_context(|| format!("config line {}", n + 1))?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Sets a known key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => bail!("unknown config key `{key}`"),
        }
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (k, v) = parse_line(spec)?
            .ok_or_else(|| anyhow!("empty override"))?;
        self.set(&k, &v)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| anyhow!("config key `{key}`: cannot parse `{v}`"))
    }

    pub fn target(&self) -> &str {
        self.get("target")
    }

    pub fn seed(&self) -> Result<u64> {
        self.parsed("seed")
    }

    pub fn few_shot(&self) -> Result<usize> {
        self.parsed("few_shot")
    }

    pub fn corpus_dir(&self) -> PathBuf {
        PathBuf::from(self.get("corpus_dir"))
    }

    pub fn embeddings(&self) -> Option<PathBuf> {
        let v = self.get("embeddings");
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn require_pretrained(&self) -> Result<bool> {
        self.parsed("require_pretrained")
    }

    /// The run directory, resolved under `$PCLC_OUTPUT_ROOT` when relative.
    pub fn output_dir(&self) -> PathBuf {
        let dir = PathBuf::from(self.get("output_dir"));
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
            _ => dir,
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                word_dim: self.parsed("word_dim")?,
                char_dim: self.parsed("char_dim")?,
                char_hidden: self.parsed("char_hidden")?,
                layers: self.parsed("layers")?,
                hidden: self.parsed("hidden")?,
                dropout: self.parsed("dropout")?,
            },
            entity_hidden: self.parsed("entity_hidden")?,
            proto_dim: self.parsed("proto_dim")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let few_shot = self.few_shot()?;
        let max_epochs = match self.get("max_epochs") {
            "auto" if few_shot > 0 => FEW_SHOT_EPOCHS,
            "auto" => ZERO_SHOT_EPOCHS,
            _ => self.parsed("max_epochs")?,
        };
        let mut cfg = TrainConfig::for_setting(few_shot);
        cfg.adam.lr = self.parsed("lr")?;
        cfg.batch_size = self.parsed("batch_size")?;
        cfg.patience = self.parsed("patience")?;
        cfg.max_epochs = max_epochs;
        cfg.hyper = PclcHyperparams {
            tau: self.parsed("tau")?,
            lambda: self.parsed("lambda")?,
            alpha: self.parsed("alpha")?,
        };
        cfg.enable_pcl = self.parsed("enable_pcl")?;
        cfg.enable_lc = self.parsed("enable_lc")?;
        cfg.kl_direction = match self.get("kl_direction") {
            "target_to_pred" => KlDirection::TargetToPrediction,
            "pred_to_target" => KlDirection::PredictionToTarget,
            other => bail!("config key `kl_direction`: unknown value `{other}`"),
        };
        cfg.pc_rows = match self.get("pc_rows") {
            "all" => PcRows::All,
            "source" => PcRows::Source,
            other => bail!("config key `pc_rows`: unknown value `{other}`"),
        };
        cfg.crf_weight = self.parsed("crf_weight")?;
        cfg.clip_norm = self.parsed("clip_norm")?;
        cfg.track_train_f1 = self.parsed("track_train_f1")?;
        cfg.execution = match self.get("execution") {
            "parallel" => Execution::available_parallel(),
            "sequential" => Execution::Sequential,
            other => bail!("config key `execution`: unknown value `{other}`"),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that every value parses.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.require_pretrained()?;
        self.model_config()?;
        self.train_config()?;
        Ok(())
    }

    /// One `key = value` line per key, sorted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Pairs recorded in checkpoints (run location keys excluded).
    pub fn snapshot(&self) -> Vec<(String, String)> {
        self.values
            .iter()
            .filter(|(k, _)| !LOCATION_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

/// `--help` text listing every key.
pub fn keys_help() -> String {
    let mut out = String::from("Config keys (key = default: meaning):\n");
    for (k, v, d) in KEYS {
        let shown = if v.is_empty() { "\"\"" } else { v };
        let _ = writeln!(out, "  {k} = {shown}: {d}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let t = cfg.train_config().unwrap();
        assert_eq!(t.max_epochs, 30);
        assert_eq!(t.batch_size, 64);
        assert_eq!(t.patience, 15);
        assert_eq!(t.hyper.lambda, 0.6);
        assert_eq!(t.adam.lr, 0.0005);
        let m = cfg.model_config().unwrap();
        assert_eq!((m.encoder.layers, m.encoder.hidden), (2, 200));
    }

    #[test]
    fn few_shot_switches_epoch_default() {
        let mut cfg = RunConfig::default();
        cfg.set("few_shot", "50").unwrap();
        assert_eq!(cfg.train_config().unwrap().max_epochs, 60);
    }

    #[test]
    fn parse_and_override() {
        let mut cfg = RunConfig::parse("# comment\nlambda = 0.2\n\nseed=9\n").unwrap();
        assert_eq!(cfg.get("lambda"), "0.2");
        cfg.apply_override("lambda=0.8").unwrap();
        assert_eq!(cfg.train_config().unwrap().hyper.lambda, 0.8);
        assert!(cfg.to_text().contains("lambda = 0.8\n"));
    }

    #[test]
    fn unknown_and_malformed_rejected() {
        assert!(RunConfig::parse("colour = red\n").is_err());
        assert!(RunConfig::parse("just words\n").is_err());
        let mut cfg = RunConfig::default();
        cfg.set("lambda", "1.5").unwrap();
        assert!(cfg.train_config().is_err());
        cfg.set("lambda", "x").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn snapshot_leaves_out_location() {
        let cfg = RunConfig::default();
        assert!(cfg.snapshot().iter().all(|(k, _)| k != "output_dir"));
        assert_eq!(cfg.snapshot().len(), KEYS.len() - 1);
    }
}
