use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pclc_cli::commands::{cmd_sweep_lambda, SWEEP_FILE};
use pclc_cli::config::RunConfig;

const BIN: &str = env!("CARGO_BIN_EXE_pclc");

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixtures() -> PathBuf {
    workspace().join("crates/core/fixtures")
}

/// Short smoke-corpus runs for exercising the commands.
fn quick_args(out: &Path) -> Vec<String> {
    let mut args = vec![
        "--config".to_string(),
        workspace().join("configs/smoke.cfg").display().to_string(),
        "--corpus-dir".to_string(),
        fixtures().join("smoke").display().to_string(),
        "--embeddings".to_string(),
        fixtures().join("embeddings16.txt").display().to_string(),
        "--output-dir".to_string(),
        out.display().to_string(),
    ];
    for s in ["max_epochs=2", "track_train_f1=false"] {
        args.push("--set".to_string());
        args.push(s.to_string());
    }
    args
}

fn pclc(sub: &str, args: &[String]) -> Output {
    Command::new(BIN)
        .arg(sub)
        .args(args)
        .env_remove("PCLC_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn train_eval_predict_export() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let mut args = quick_args(&out);
    args.extend(["--lambda".to_string(), "0.4".to_string()]);
    let train = pclc("train", &args);
    assert!(train.status.success(), "{}", text(&train.stderr));
    for f in ["config.txt", "split.manifest", "train.log", "checkpoint.pclc"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let echoed = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echoed.contains("lambda = 0.4\n"));
    assert!(echoed.contains("max_epochs = 2\n"));
    let log = std::fs::read_to_string(out.join("train.log")).unwrap();
    assert!(log.starts_with("epoch=1\tL_crf="));
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch=")).count(), 2);

    let eval = pclc("eval", &args);
    assert!(eval.status.success(), "{}", text(&eval.stderr));
    let report = text(&eval.stdout);
    assert!(report.contains("seen") && report.contains("unseen") && report.contains("per type:"));
    let kv = std::fs::read_to_string(out.join("report.kv")).unwrap();
    assert!(kv.contains("setting=zero-shot\n"));
    assert!(kv.contains("unseen.f1="));

    let input = tmp.path().join("input.txt");
    std::fs::write(&input, "is it cold in oslo today\n\nweather for paris\n").unwrap();
    let mut p = args.clone();
    p.extend(["--input".to_string(), input.display().to_string()]);
    let pred = pclc("predict", &p);
    assert!(pred.status.success(), "{}", text(&pred.stderr));
    let conll = text(&pred.stdout);
    assert_eq!(conll.matches("\n\n").count(), 2);
    assert!(conll.lines().any(|l| l == "oslo\tO" || l.starts_with("oslo\tB-")));

    let export = pclc("export-protos", &args);
    assert!(export.status.success(), "{}", text(&export.stderr));
    let tsv = std::fs::read_to_string(out.join("prototypes.tsv")).unwrap();
    assert!(tsv.lines().any(|l| l.starts_with("condition_temperature\ttarget\t")));
    let again = pclc("export-protos", &args);
    assert!(again.status.success());
    assert_eq!(tsv, std::fs::read_to_string(out.join("prototypes.tsv")).unwrap());
}

#[test]
fn failures_exit_nonzero_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let args = quick_args(&tmp.path().join("empty"));
    let eval = pclc("eval", &args);
    assert!(!eval.status.success());
    assert!(text(&eval.stderr).contains("checkpoint not found"), "{}", text(&eval.stderr));

    let mut bad = args.clone();
    bad.extend(["--set".to_string(), "colour=red".to_string()]);
    let out = pclc("train", &bad);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("unknown config key `colour`"));

    let mut unknown = args.clone();
    unknown.extend(["--target".to_string(), "Nowhere".to_string()]);
    let out = pclc("train", &unknown);
    assert!(!out.status.success());
    assert!(!text(&out.stderr).is_empty());
}

#[test]
fn checkpoint_for_another_target_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let args = quick_args(&out);
    assert!(pclc("train", &args).status.success());
    let mut other = args.clone();
    other.extend(["--target".to_string(), "PlayMusic".to_string()]);
    let eval = pclc("eval", &other);
    assert!(!eval.status.success());
    assert!(text(&eval.stderr).contains("incompatible checkpoint"), "{}", text(&eval.stderr));
}

#[test]
fn help_documents_config_keys() {
    let out = Command::new(BIN).arg("--help").output().unwrap();
    let help = text(&out.stdout);
    for key in ["lambda = 0.6", "batch_size = 64", "patience = 15", "enable_lc", "PCLC_OUTPUT_ROOT"] {
        assert!(help.contains(key), "--help lacks {key}");
    }
}

#[test]
fn output_root_applies_to_relative_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = quick_args(Path::new("rel/run"));
    args.extend(["--set".to_string(), "max_epochs=1".to_string()]);
    let out = Command::new(BIN)
        .arg("train")
        .args(&args)
        .env("PCLC_OUTPUT_ROOT", tmp.path())
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(tmp.path().join("rel/run/checkpoint.pclc").exists());
}

fn sweep_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&workspace().join("configs/smoke.cfg")).unwrap();
    cfg.set("corpus_dir", fixtures().join("smoke").to_str().unwrap()).unwrap();
    cfg.set("embeddings", fixtures().join("embeddings16.txt").to_str().unwrap()).unwrap();
    cfg.set("output_dir", out.to_str().unwrap()).unwrap();
    cfg.set("max_epochs", "1").unwrap();
    cfg.set("track_train_f1", "false").unwrap();
    cfg
}

#[test]
fn sweep_writes_one_row_per_distinct_lambda() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = sweep_config(&tmp.path().join("seq"));
    let rows = cmd_sweep_lambda(&cfg, &[0.2, 0.4, 0.6, 0.8, 0.4], None).unwrap();
    assert_eq!(rows.len(), 4);
    let tsv = std::fs::read_to_string(tmp.path().join("seq").join(SWEEP_FILE)).unwrap();
    assert_eq!(tsv.lines().count(), 5);
    assert!(tsv.starts_with("lambda\tf1\tseen_f1\tunseen_f1\n"));

    let par_cfg = sweep_config(&tmp.path().join("par"));
    let par = cmd_sweep_lambda(&par_cfg, &[0.2, 0.4, 0.6, 0.8], Some(Path::new(BIN))).unwrap();
    for (a, b) in rows.iter().zip(&par) {
        assert_eq!(a.lambda, b.lambda);
        assert_eq!(a.report, b.report);
    }
    assert!(cmd_sweep_lambda(&cfg, &[1.5], None).is_err());
}

#[test]
fn sweep_subcommand_warns_on_duplicates() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = quick_args(&tmp.path().join("cli-sweep"));
    args.extend(["--set".to_string(), "max_epochs=1".to_string(), "--lambdas".to_string(), "0.3,0.3".to_string()]);
    let out = pclc("sweep-lambda", &args);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("warning"));
    assert_eq!(text(&out.stdout).lines().count(), 2);
}
