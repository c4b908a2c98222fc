//! Subcommand implementations. Each returns a value for the caller to print
//! and writes its artifacts into the run directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Child, Command};

use anyhow::{anyhow, bail, Context, Result};
use pclc_core::autodiff::Tensor;
use pclc_core::data::{
    fewshot_select, load_corpus_dir, split_leave_one_out, write_conll, BioTag, Corpus,
    EmbeddingTable, ExperimentSplit, Utterance,
};
use pclc_core::evaluator::{export_prototypes, seen_unseen_report, setting_tag, EvalReport};
use pclc_core::model::{ModelConfig, PclcModel};
use pclc_core::rng::seeded;
use pclc_core::trainer::{evaluate_indices, train_run, Checkpoint};

use crate::config::RunConfig;

pub const CONFIG_FILE: &str = "config.txt";
pub const SPLIT_FILE: &str = "split.manifest";
pub const LOG_FILE: &str = "train.log";
pub const CHECKPOINT_FILE: &str = "checkpoint.pclc";
pub const REPORT_FILE: &str = "report.txt";
pub const REPORT_KV_FILE: &str = "report.kv";
pub const PROTOS_FILE: &str = "prototypes.tsv";
pub const SWEEP_FILE: &str = "sweep_lambda.tsv";

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub output_dir: PathBuf,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub stopped_early: bool,
}

impl std::fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "trained {} epochs (best epoch {}, val F1 {:.4}{}); artifacts in {}",
            self.epochs_run,
            self.best_epoch,
            self.best_val_f1,
            if self.stopped_early { ", stopped early" } else { "" },
            self.output_dir.display()
        )
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let dir = cfg.corpus_dir();
    load_corpus_dir(&dir).with_context(|| format!("loading corpus from {}", dir.display()))
}

/// The split described by `cfg`: leave-one-out on the target, then the
/// few-shot move when requested.
pub fn build_split(cfg: &RunConfig, corpus: &Corpus) -> Result<ExperimentSplit> {
    let seed = cfg.seed()?;
    let split = split_leave_one_out(corpus, cfg.target(), seed)?;
    Ok(fewshot_select(&split, cfg.few_shot()?, seed)?)
}

/// Builds the split, trains, and writes the effective config, split
/// manifest, per-epoch log and best checkpoint to the output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    let out = cfg.output_dir();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join(CONFIG_FILE), &cfg.to_text())?;

    let corpus = load_corpus(cfg)?;
    let split = build_split(cfg, &corpus)?;
    write_file(&out.join(SPLIT_FILE), &split.to_manifest(&corpus))?;

    let mut rng = seeded(cfg.seed()?);
    let embeddings = cfg.embeddings();
    let mut model = PclcModel::from_corpus(
        model_cfg,
        &corpus,
        cfg.target(),
        embeddings.as_deref(),
        cfg.require_pretrained()?,
        &mut rng,
    )?;

    let log_path = out.join(LOG_FILE);
    let mut log = fs::File::create(&log_path)
        .with_context(|| format!("creating {}", log_path.display()))?;
    let mut log_err = None;
    let outcome = train_run(
        &mut model,
        &corpus,
        &split,
        &train_cfg,
        &mut rng,
        cfg.snapshot(),
        |record| {
            if log_err.is_none() {
                if let Err(e) = writeln!(log, "{record}").and_then(|_| log.flush()) {
                    log_err = Some(e);
                }
            }
        },
    )?;
    if let Some(e) = log_err {
        return Err(anyhow!(e).context(format!("writing {}", log_path.display())));
    }
    let ckpt = &outcome.checkpoint;
    writeln!(
        log,
        "best_epoch={}\tbest_val_f1={:.6}\tstopped_early={}",
        ckpt.epoch, ckpt.best_val_f1, outcome.stopped_early
    )?;
    ckpt.save(&out.join(CHECKPOINT_FILE))?;
    Ok(TrainSummary {
        output_dir: out,
        epochs_run: outcome.history.len(),
        best_epoch: ckpt.epoch,
        best_val_f1: ckpt.best_val_f1,
        stopped_early: outcome.stopped_early,
    })
}

/// The checkpoint to use: `explicit`, or the one in the output directory.
pub fn checkpoint_path(cfg: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir().join(CHECKPOINT_FILE))
}

/// Rebuilds the model recorded in `ckpt` for the target domain of `cfg`.
pub fn restore_model(cfg: &RunConfig, ckpt: &Checkpoint, corpus: &Corpus) -> Result<PclcModel> {
    if let Some(t) = ckpt.config_value("target") {
        if t != cfg.target() {
            bail!(
                "incompatible checkpoint: trained with target `{t}`, config asks for `{}`",
                cfg.target()
            );
        }
    }
    let pairs: BTreeMap<String, String> = ckpt.config.iter().cloned().collect();
    let model_cfg = ModelConfig::from_pairs(&pairs)?;
    let vocab = ckpt.vocab();
    let words = EmbeddingTable {
        matrix: Tensor::zeros(&[vocab.num_words(), model_cfg.encoder.word_dim]),
        trainable: ckpt
            .params
            .iter()
            .find(|p| p.name == "word_emb")
            .map_or(true, |p| p.trainable),
        pretrained_rows: 0,
    };
    // Initial values are overwritten by the checkpoint.
    let mut rng = seeded(0);
    let mut model = PclcModel::new(
        model_cfg,
        corpus.schema.clone(),
        cfg.target(),
        vocab,
        words,
        &mut rng,
    )?;
    ckpt.apply_to(&mut model)
        .map_err(|e| anyhow!("incompatible checkpoint: {e}"))?;
    Ok(model)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Ok(Checkpoint::load(path)?)
}

/// Scores the checkpoint on the target test set and writes `report.txt`
/// and `report.kv`. `split_manifest` replaces the split derived from the
/// config.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    split_manifest: Option<&Path>,
) -> Result<EvalReport> {
    cfg.validate()?;
    let ckpt = load_checkpoint(&checkpoint_path(cfg, checkpoint))?;
    let corpus = load_corpus(cfg)?;
    let split = match split_manifest {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentSplit::from_manifest(&text, &corpus)?
        }
        None => build_split(cfg, &corpus)?,
    };
    if split.target_domain != cfg.target() {
        bail!(
            "split manifest targets `{}`, config asks for `{}`",
            split.target_domain,
            cfg.target()
        );
    }
    let model = restore_model(cfg, &ckpt, &corpus)?;
    let exec = cfg.train_config()?.execution;
    let core = evaluate_indices(&model, &corpus, &split.test, exec)?;
    let report = seen_unseen_report(
        core,
        &split.seen_slots,
        &split.unseen_slots,
        &split.target_domain,
        &setting_tag(split.few_shot),
    )?;
    let out = cfg.output_dir();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join(REPORT_FILE), &report.to_text())?;
    write_file(&out.join(REPORT_KV_FILE), &report.to_key_values())?;
    Ok(report)
}

/// Tags every line of `input` (whitespace-tokenized, blank lines skipped)
/// against `domain`'s slots and returns CoNLL text.
pub fn cmd_predict(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    input: &str,
    domain: Option<&str>,
) -> Result<String> {
    cfg.validate()?;
    let ckpt = load_checkpoint(&checkpoint_path(cfg, checkpoint))?;
    let corpus = load_corpus(cfg)?;
    let model = restore_model(cfg, &ckpt, &corpus)?;
    let domain = domain.unwrap_or(cfg.target());
    if !corpus.schema.has_domain(domain) {
        bail!("unknown domain `{domain}`");
    }
    let protos = model.prototype_matrix()?;
    let mut tagged = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            continue;
        }
        let (_, spans) = model.predict(&protos, &tokens, domain)?;
        let mut tags = vec!["O".to_string(); tokens.len()];
        for s in &spans {
            tags[s.start] = format!("{}-{}", BioTag::B, s.slot);
            for t in &mut tags[s.start + 1..=s.end] {
                *t = format!("{}-{}", BioTag::I, s.slot);
            }
        }
        let pairs: Vec<(String, String)> = tokens.into_iter().zip(tags).collect();
        let utt = Utterance::from_tagged(format!("input:{}", n + 1), domain, &pairs)
            .map_err(|e| anyhow!("line {}: {e}", n + 1))?;
        tagged.push(utt);
    }
    Ok(write_conll(&tagged))
}

/// Writes the prototype matrix of the checkpoint as TSV; returns the path.
pub fn cmd_export_protos(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    out: Option<&Path>,
) -> Result<PathBuf> {
    cfg.validate()?;
    let ckpt = load_checkpoint(&checkpoint_path(cfg, checkpoint))?;
    let corpus = load_corpus(cfg)?;
    let model = restore_model(cfg, &ckpt, &corpus)?;
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let dir = cfg.output_dir();
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            dir.join(PROTOS_FILE)
        }
    };
    export_prototypes(&model.prototype_matrix()?, &path)?;
    Ok(path)
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub lambda: f64,
    pub report: EvalReport,
}

/// Drops repeated values, keeping first occurrences in order. Returns the
/// kept values and the dropped ones.
pub fn dedup_lambdas(lambdas: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut seen = BTreeSet::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for &l in lambdas {
        if seen.insert(l.to_bits()) {
            kept.push(l);
        } else {
            dropped.push(l);
        }
    }
    (kept, dropped)
}

fn lambda_dir_name(lambda: f64) -> String {
    format!("lambda-{lambda}")
}

pub fn sweep_tsv(rows: &[SweepRow]) -> String {
    let mut out = String::from("lambda\tf1\tseen_f1\tunseen_f1\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\n",
            r.lambda,
            r.report.f1(),
            r.report.seen.f1(),
            r.report.unseen.f1()
        ));
    }
    out
}

/// Trains and evaluates once per λ under a shared seed, one run directory
/// per value below the output directory, and writes `sweep_lambda.tsv`.
/// With `parallel_exe`, training runs as concurrent `train` processes of
/// that executable.
pub fn cmd_sweep_lambda(
    cfg: &RunConfig,
    lambdas: &[f64],
    parallel_exe: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if lambdas.is_empty() {
        bail!("no λ values given");
    }
    if let Some(bad) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        bail!("λ must lie in [0, 1], got {bad}");
    }
    let (lambdas, dropped) = dedup_lambdas(lambdas);
    if !dropped.is_empty() {
        eprintln!("warning: ignoring repeated λ values {dropped:?}");
    }
    let base = cfg.output_dir();
    fs::create_dir_all(&base).with_context(|| format!("creating {}", base.display()))?;
    let runs: Vec<(f64, RunConfig)> = lambdas
        .iter()
        .map(|&l| {
            let mut sub = cfg.clone();
            sub.set("lambda", &l.to_string())?;
            let dir = base.join(lambda_dir_name(l));
            let dir = dir.to_str().ok_or_else(|| anyhow!("non-UTF-8 output path"))?;
            sub.set("output_dir", dir)?;
            Ok((l, sub))
        })
        .collect::<Result<_>>()?;

    match parallel_exe {
        None => {
            for (_, sub) in &runs {
                cmd_train(sub)?;
            }
        }
        Some(exe) => {
            let mut children: Vec<(f64, Child)> = Vec::new();
            for (l, sub) in &runs {
                let dir = sub.output_dir();
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                let cfg_path = dir.join("sweep.cfg");
                write_file(&cfg_path, &sub.to_text())?;
                let stdout_path = dir.join("sweep.stdout");
                let stdout = fs::File::create(&stdout_path)
                    .with_context(|| format!("creating {}", stdout_path.display()))?;
                let child = Command::new(exe)
                    .arg("train")
                    .arg("--config")
                    .arg(&cfg_path)
                    .env_remove(crate::config::OUTPUT_ROOT_ENV)
                    .stdout(stdout)
                    .spawn()
                    .with_context(|| format!("spawning {}", exe.display()))?;
                children.push((*l, child));
            }
            let mut failed = Vec::new();
            for (l, mut child) in children {
                if !child.wait()?.success() {
                    failed.push(l);
                }
            }
            if !failed.is_empty() {
                bail!("training failed for λ values {failed:?}");
            }
        }
    }

    let mut rows = Vec::new();
    for (l, sub) in &runs {
        let report = cmd_eval(sub, None, Some(&sub.output_dir().join(SPLIT_FILE)))?;
        rows.push(SweepRow { lambda: *l, report });
    }
    write_file(&base.join(SWEEP_FILE), &sweep_tsv(&rows))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedup_keeps_first_occurrence() {
        let (kept, dropped) = dedup_lambdas(&[0.2, 0.4, 0.2, 0.6, 0.4]);
        assert_eq!(kept, vec![0.2, 0.4, 0.6]);
        assert_eq!(dropped, vec![0.2, 0.4]);
    }

    #[test]
    fn lambda_dirs_are_distinct() {
        assert_eq!(lambda_dir_name(0.6), "lambda-0.6");
        assert_ne!(lambda_dir_name(0.0), lambda_dir_name(1.0));
    }
}
