use std::path::Path;

use spontts::acoustic::{AcousticModel, PARAM_GROUPS};
use spontts::config::{Profile, RunConfig};
use spontts::corpus::{generate_synthetic_corpus, LabelSource, SyntheticConfig};
use spontts::pipeline::*;
use spontts::Error;

fn small_config() -> RunConfig {
    let mut c = RunConfig::for_profile(Profile::Desk);
    c.detector.epochs = 2;
    c.train.pretrain_steps = 4;
    c.train.finetune_steps = 3;
    c.train.batch_size = 4;
    c.train.log_every = 1;
    c
}

fn write_corpora(dir: &Path) {
    let base = SyntheticConfig {
        conversations: 4,
        utterances_per_conversation: 3,
        test_conversations: 1,
        min_chars: 3,
        max_chars: 5,
        ..Default::default()
    };
    generate_synthetic_corpus(1, &base).unwrap().write(&dir.join("hq")).unwrap();
    let lq = SyntheticConfig {
        conversations: 2,
        test_conversations: 0,
        label_source: LabelSource::None,
        id_prefix: "lq".into(),
        ..base
    };
    generate_synthetic_corpus(2, &lq).unwrap().write(&dir.join("lq")).unwrap();
}

fn run_all(corpora: &Path, out: &Path) -> Run {
    let mut run = Run::open(out, small_config()).unwrap();
    assert_eq!(prepare(&mut run, HIGH_QUALITY, &corpora.join("hq/manifest.jsonl")).unwrap().failed, 0);
    assert_eq!(prepare(&mut run, LOW_QUALITY, &corpora.join("lq/manifest.jsonl")).unwrap().failed, 0);
    stage_train_detectors(&mut run).unwrap();
    stage_extract_pseudo_labels(&mut run).unwrap();
    stage_pretrain(&mut run).unwrap();
    stage_finetune(&mut run).unwrap();
    run
}

fn artifact_hashes(run: &Run) -> Vec<(String, String)> {
    run.state
        .stages
        .values()
        .flat_map(|r| r.artifacts.values().map(|a| (a.path.clone(), a.sha256.clone())))
        .collect()
}

#[test]
fn full_pipeline_is_deterministic_and_honours_stage_contracts() {
    let dir = tempfile::tempdir().unwrap();
    write_corpora(dir.path());
    let a = run_all(dir.path(), &dir.path().join("a"));
    let b = run_all(dir.path(), &dir.path().join("b"));
    assert_eq!(a.state.stages.len(), 4);
    assert_eq!(artifact_hashes(&a), artifact_hashes(&b));

    // Pseudo labels: stored scores reproduce the stored decisions.
    let pseudo = spontts::corpus::load_corpus(a.path(PSEUDO_MANIFEST)).unwrap();
    for u in pseudo.utterances() {
        let s = load_pseudo_sidecar(&a.out, &u.id).unwrap();
        assert_eq!(rederive_decisions(&s).unwrap(), s.decisions);
        assert_eq!(u.char_labels.as_ref().unwrap().0, s.decisions);
        assert_eq!(u.label_source, LabelSource::Pseudo);
        assert_eq!(s.detectors.len(), 2);
    }

    // Fine-tune: only the decoder was reset, from the recorded seed.
    let (pre, _) = AcousticModel::load(&a.path(PRETRAIN_CKPT), None).unwrap();
    let init: FinetuneInit =
        serde_json::from_str(&std::fs::read_to_string(a.path("acoustic/finetune_init.json")).unwrap()).unwrap();
    for g in PARAM_GROUPS {
        let before = pre.store().content_hash(Some(g)).unwrap();
        assert_eq!(init.hashes_before[g], before, "{g}");
        assert_eq!(init.hashes_after[g] == before, g != "decoder", "{g}");
    }
    assert_eq!(init.multipliers["decoder"], 10.0);
    let (ft, step) = AcousticModel::load(&a.path(FINETUNE_CKPT), None).unwrap();
    assert_eq!(step, 3);
    assert_eq!(ft.reinit_seeds().get("decoder"), Some(&init.decoder_seed));

    let rows = evaluate_detectors(&a).unwrap();
    assert_eq!(rows.len(), 4);
}

#[test]
fn rerunning_an_earlier_stage_invalidates_later_ones() {
    let dir = tempfile::tempdir().unwrap();
    write_corpora(dir.path());
    let mut run = run_all(dir.path(), &dir.path().join("a"));
    stage_extract_pseudo_labels(&mut run).unwrap();
    assert!(run.state.stages.contains_key(&Stage::PseudoLabeled));
    assert!(!run.state.stages.contains_key(&Stage::Pretrained));
    assert!(matches!(stage_finetune(&mut run), Err(Error::Precondition(m)) if m.contains("pretrain")));
}

#[test]
fn pseudo_labelling_rejects_a_swapped_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    write_corpora(dir.path());
    let mut run = Run::open(&dir.path().join("a"), small_config()).unwrap();
    prepare(&mut run, HIGH_QUALITY, &dir.path().join("hq/manifest.jsonl")).unwrap();
    prepare(&mut run, LOW_QUALITY, &dir.path().join("lq/manifest.jsonl")).unwrap();
    stage_train_detectors(&mut run).unwrap();
    use spontts::detector::{Behavior, InputType};
    let fp = run.path(&detector_path(Behavior::FilledPause, InputType::TextSpeech));
    let pr = run.path(&detector_path(Behavior::Prolongation, InputType::TextSpeech));
    std::fs::copy(&pr, &fp).unwrap();
    // The stage record notices the changed file first.
    assert!(matches!(stage_extract_pseudo_labels(&mut run), Err(Error::Precondition(m)) if m.contains("changed")));
    // With the record refreshed, the behavior check still rejects it.
    let mut rec = run.state.stages[&Stage::DetectorsTrained].clone();
    for a in rec.artifacts.values_mut() {
        *a = run.artifact(&a.path).unwrap();
    }
    run.record(rec).unwrap();
    assert!(matches!(stage_extract_pseudo_labels(&mut run), Err(Error::Checkpoint(m)) if m.contains("prolongation")));
}
