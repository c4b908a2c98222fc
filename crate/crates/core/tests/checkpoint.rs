use pclc_core::autodiff::AdamState;
use pclc_core::data::Utterance;
use pclc_core::exec::Execution;
use pclc_core::model::PclcModel;
use pclc_core::rng::seeded;
use pclc_core::testkit::{toy_config, toy_corpus, toy_model};
use pclc_core::trainer::{batch_gradients, Checkpoint, TrainConfig};

/// A toy model after two optimizer steps, with its optimizer state.
fn trained() -> (PclcModel, AdamState) {
    let corpus = toy_corpus();
    let mut model = toy_model(&mut seeded(12)).unwrap();
    let cfg = TrainConfig::default();
    let mut adam = AdamState::new(cfg.adam, &model.store);
    let batch: Vec<&Utterance> = corpus.utterances.iter().collect();
    for step in 0..2u64 {
        model.store.zero_grads();
        let seeds: Vec<u64> = (0..batch.len() as u64).map(|i| step * 100 + i).collect();
        batch_gradients(&mut model, &batch, &seeds, &cfg, Execution::Sequential).unwrap();
        let ids = model.store.ids_with_grad();
        adam.step(&mut model.store, &ids).unwrap();
    }
    (model, adam)
}

fn capture() -> (PclcModel, Checkpoint) {
    let (model, adam) = trained();
    let config = vec![("seed".to_string(), "12".to_string()), ("note".to_string(), "a b".to_string())];
    let ck = Checkpoint::capture(&model, &adam, 2, 0.25, config);
    (model, ck)
}

#[test]
fn round_trip_is_bit_exact() {
    let (model, ck) = capture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pclc");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), ck.to_bytes());

    let mut fresh = toy_model(&mut seeded(99)).unwrap();
    back.apply_to(&mut fresh).unwrap();
    for ((_, a), (_, b)) in model.store.iter().zip(fresh.store.iter()) {
        let bits = |t: &pclc_core::autodiff::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value), "{}", a.name);
    }
    let p1 = model.prototype_matrix().unwrap().values;
    let p2 = fresh.prototype_matrix().unwrap().values;
    assert_eq!(p1, p2);
    let corpus = toy_corpus();
    let utts: Vec<&Utterance> = corpus.utterances.iter().collect();
    assert_eq!(
        model.predict_many(&utts, Execution::Sequential).unwrap(),
        fresh.predict_many(&utts, Execution::Sequential).unwrap()
    );

    let adam = back.adam_state(&fresh.store).unwrap();
    assert_eq!(adam.step, 2);
    assert_eq!(back.vocab(), model.vocab);
}

#[test]
fn truncated_payload_names_byte_counts() {
    let (_, ck) = capture();
    let bytes = ck.to_bytes();
    let cut = &bytes[..bytes.len() - 12];
    let msg = Checkpoint::from_bytes(cut).unwrap_err().to_string();
    assert!(msg.contains("expected"), "{msg}");
    let payload = {
        let text = String::from_utf8_lossy(&bytes);
        let line = text.lines().find(|l| l.starts_with("payload_bytes\t")).unwrap().to_string();
        line["payload_bytes\t".len()..].parse::<usize>().unwrap()
    };
    assert!(msg.contains(&format!("expected {payload} bytes")), "{msg}");
    assert!(msg.contains(&format!("found {}", payload - 12)), "{msg}");
}

#[test]
fn other_format_version_is_refused() {
    let (_, ck) = capture();
    let text = ck.to_bytes();
    let needle = b"format_version\t1\n";
    let at = text.windows(needle.len()).position(|w| w == needle).unwrap();
    let mut bytes = text.clone();
    bytes[at + needle.len() - 2] = b'7';
    let msg = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
    assert!(msg.contains("version 7"), "{msg}");
}

#[test]
fn shape_mismatch_is_refused() {
    let (_, ck) = capture();
    let mut cfg = toy_config();
    cfg.encoder.hidden += 1;
    let mut other = PclcModel::from_corpus(cfg, &toy_corpus(), "gamma", None, false, &mut seeded(1)).unwrap();
    let msg = ck.apply_to(&mut other).unwrap_err().to_string();
    assert!(msg.contains("shape mismatch"), "{msg}");
}

#[test]
fn different_prototype_order_is_refused() {
    let (_, ck) = capture();
    let mut other = PclcModel::from_corpus(toy_config(), &toy_corpus(), "beta", None, false, &mut seeded(1)).unwrap();
    assert!(ck.apply_to(&mut other).is_err());
    let mut reordered = ck.clone();
    reordered.proto_rows.swap(0, 1);
    let mut same = toy_model(&mut seeded(1)).unwrap();
    assert!(reordered.apply_to(&mut same).is_err());
}

#[test]
fn missing_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let msg = Checkpoint::load(&dir.path().join("nope.pclc")).unwrap_err().to_string();
    assert!(msg.contains("checkpoint not found"), "{msg}");
}
