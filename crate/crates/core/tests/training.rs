use std::collections::BTreeSet;

use pclc_core::data::{load_corpus_dir, split_leave_one_out, Corpus, ExperimentSplit, Utterance};
use pclc_core::error::Error;
use pclc_core::exec::Execution;
use pclc_core::model::PclcModel;
use pclc_core::rng::seeded;
use pclc_core::testkit::{fixture_config, fixture_dir};
use pclc_core::trainer::{batch_gradients, train_run, TrainConfig, TrainOutcome};

fn smoke() -> (Corpus, ExperimentSplit) {
    let corpus = load_corpus_dir(&fixture_dir().join("smoke")).unwrap();
    let split = split_leave_one_out(&corpus, "GetWeather", 1).unwrap();
    (corpus, split)
}

fn model(corpus: &Corpus, seed: u64) -> PclcModel {
    let emb = fixture_dir().join("embeddings16.txt");
    PclcModel::from_corpus(fixture_config(), corpus, "GetWeather", Some(&emb), true, &mut seeded(seed)).unwrap()
}

fn cfg(epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::for_setting(0);
    c.adam.lr = 0.005;
    c.batch_size = 4;
    c.max_epochs = epochs;
    c.patience = epochs;
    c
}

fn run(seed: u64, cfg: &TrainConfig) -> TrainOutcome {
    let (corpus, split) = smoke();
    let mut m = model(&corpus, seed);
    train_run(&mut m, &corpus, &split, cfg, &mut seeded(seed), vec![], |_| {}).unwrap()
}

#[test]
fn every_trainable_parameter_receives_gradient() {
    let (corpus, split) = smoke();
    for (pcl, lc) in [(true, true), (false, false)] {
        let mut m = model(&corpus, 3);
        let c = TrainConfig { enable_pcl: pcl, enable_lc: lc, ..cfg(1) };
        let mut touched = BTreeSet::new();
        for (b, chunk) in split.train.chunks(c.batch_size).enumerate() {
            let batch: Vec<&Utterance> = chunk.iter().map(|&i| &corpus.utterances[i]).collect();
            let seeds = vec![b as u64; batch.len()];
            m.store.zero_grads();
            batch_gradients(&mut m, &batch, &seeds, &c, Execution::Sequential).unwrap();
            for id in m.store.ids_with_grad() {
                let g = m.store.get(id).grad.as_ref().unwrap();
                if g.data().iter().any(|v| *v != 0.0) {
                    touched.insert(m.store.get(id).name.clone());
                }
            }
        }
        for (_, p) in m.store.iter().filter(|(_, p)| p.requires_grad) {
            assert!(touched.contains(&p.name), "no gradient reached `{}` (pcl={pcl}, lc={lc})", p.name);
        }
    }
}

#[test]
fn same_seed_same_trajectory() {
    let c = cfg(3);
    let a = run(5, &c);
    let b = run(5, &c);
    let lines = |o: &TrainOutcome| o.history.iter().map(|r| r.to_string()).collect::<Vec<_>>();
    assert_eq!(lines(&a), lines(&b));
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    let other = run(6, &c);
    assert_ne!(lines(&a), lines(&other));
}

#[test]
fn sequential_and_parallel_training_agree() {
    let seq = run(7, &TrainConfig { execution: Execution::Sequential, ..cfg(2) });
    let par = run(7, &TrainConfig { execution: Execution::Parallel, ..cfg(2) });
    assert_eq!(seq.checkpoint.to_bytes(), par.checkpoint.to_bytes());
}

#[test]
fn kept_checkpoint_is_the_first_best_epoch() {
    let out = run(2, &TrainConfig { patience: 2, ..cfg(12) });
    let vals: Vec<f64> = out.history.iter().map(|r| r.val_f1).collect();
    let best = vals.iter().cloned().fold(f64::MIN, f64::max);
    let first = vals.iter().position(|v| *v == best).unwrap() + 1;
    assert_eq!(out.checkpoint.epoch, first);
    assert_eq!(out.checkpoint.best_val_f1, best);
    if out.stopped_early {
        assert_eq!(out.history.len(), first + 2);
    }
}

#[test]
fn non_finite_loss_aborts_naming_the_term() {
    let (corpus, split) = smoke();
    let mut m = model(&corpus, 1);
    let id = m
        .store
        .iter()
        .find(|(_, p)| p.name.ends_with(".transitions"))
        .map(|(id, _)| id)
        .expect("a CRF transition matrix");
    m.store.get_mut(id).value.data_mut()[0] = f64::NAN;
    let err = train_run(&mut m, &corpus, &split, &cfg(1), &mut seeded(1), vec![], |_| {})
        .err()
        .expect("training must abort");
    match err {
        Error::NonFinite { term, epoch, batch } => {
            assert!(term.starts_with("L_"), "{term}");
            assert_eq!((epoch, batch), (1, 1));
        }
        other => panic!("unexpected error {other}"),
    }
}
