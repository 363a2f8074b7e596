use super::*;
use crate::acoustic::{AcousticConfig, AcousticModel, PhonemeVocab, VarianceStats};
use crate::config::{Profile, RunConfig};
use crate::corpus::{generate_synthetic_corpus, SyntheticConfig};
use crate::labels::LabelClass;
use candle_core::DType;
use proptest::prelude::*;

fn spec() -> OptimizerSpec {
    OptimizerSpec::default()
}

#[test]
fn lr_halves_at_half_and_quadruple_warmup() {
    let s = spec();
    let peak = lr_at(4000, &s, 256).unwrap();
    assert_eq!(lr_at(2000, &s, 256).unwrap(), 0.5 * peak);
    assert_eq!(lr_at(16000, &s, 256).unwrap(), 0.5 * peak);
    assert_eq!(peak, 256f64.powf(-0.5) * 4000f64.powf(-0.5));
}

#[test]
fn lr_rejects_step_zero() {
    assert!(matches!(lr_at(0, &spec(), 256), Err(Error::Validation(_))));
}

#[test]
fn lr_peaks_at_warmup_and_is_continuous() {
    let s = spec();
    let f = |t| lr_at(t, &s, 256).unwrap();
    for t in 1..4000 {
        assert!(f(t) < f(t + 1), "not increasing at {t}");
    }
    for t in 4000..20000 {
        assert!(f(t) > f(t + 1), "not decreasing at {t}");
    }
    // Both branches meet at the warmup step.
    let w = 4000f64;
    assert!((w.powf(-0.5) - w * w.powf(-1.5)).abs() < 1e-15);
    assert!((f(4000) - f(4001)).abs() / f(4000) < 1e-3);
}

#[test]
fn optimizer_spec_validation() {
    assert!(spec().validate().is_ok());
    let mut bad = spec();
    bad.multipliers.insert("decoder".into(), 0.0);
    assert!(bad.validate().is_err());
    let mut bad = spec();
    bad.multipliers.insert("vocoder".into(), 1.0);
    assert!(bad.validate().is_err());
    assert!(OptimizerSpec { decoder_multiplier: -1.0, ..spec() }.validate().is_err());
    assert!(OptimizerSpec { beta2: 1.0, ..spec() }.validate().is_err());
}

#[test]
fn finetune_multipliers_only_touch_the_decoder() {
    let mut s = spec();
    s.multipliers.insert("encoder".into(), 0.5);
    let adam = s.adam(true).unwrap();
    assert_eq!(adam.multiplier("decoder"), 10.0);
    assert_eq!(adam.multiplier("encoder"), 0.5);
    assert_eq!(adam.multiplier("variance_adaptor"), 1.0);
    assert_eq!(s.adam(false).unwrap().multiplier("decoder"), 1.0);
}

#[test]
fn lock_is_exclusive_and_released_on_drop() {
    let dir = tempfile::tempdir().unwrap();
    let a = PipelineLock::acquire(dir.path()).unwrap();
    assert!(matches!(PipelineLock::acquire(dir.path()), Err(Error::Precondition(_))));
    drop(a);
    assert!(PipelineLock::acquire(dir.path()).is_ok());
}

#[test]
fn stages_refuse_to_run_out_of_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = Run::open(dir.path(), RunConfig::for_profile(Profile::Desk)).unwrap();
    match stage_pretrain(&mut run) {
        Err(Error::Precondition(m)) => assert!(m.contains("pseudo_labeled") && m.contains("pseudo-label"), "{m}"),
        other => panic!("{:?}", other.map(|_| ())),
    }
    match stage_train_detectors(&mut run) {
        Err(Error::Precondition(m)) => assert!(m.contains("prepare"), "{m}"),
        other => panic!("{:?}", other.map(|_| ())),
    }
    assert!(!dir.path().join("pipeline.lock").exists());
}

#[test]
fn require_names_a_missing_or_changed_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = Run::open(dir.path(), RunConfig::for_profile(Profile::Desk)).unwrap();
    std::fs::create_dir_all(dir.path().join("detectors")).unwrap();
    std::fs::write(dir.path().join("detectors/x.ckpt"), b"abc").unwrap();
    let mut rec = run.stage_record(Stage::DetectorsTrained, Default::default());
    rec.artifacts.insert("x".into(), run.artifact("detectors/x.ckpt").unwrap());
    run.record(rec).unwrap();
    assert!(run.require(Stage::DetectorsTrained).is_ok());
    std::fs::write(dir.path().join("detectors/x.ckpt"), b"abd").unwrap();
    assert!(matches!(run.require(Stage::DetectorsTrained), Err(Error::Precondition(m)) if m.contains("changed")));
    std::fs::remove_file(dir.path().join("detectors/x.ckpt")).unwrap();
    assert!(matches!(run.require(Stage::DetectorsTrained), Err(Error::Precondition(m)) if m.contains("x.ckpt")));
    // Reloaded state sees the same record.
    let again = Run::open(dir.path(), RunConfig::for_profile(Profile::Desk)).unwrap();
    assert!(again.state.stages.contains_key(&Stage::DetectorsTrained));
}

#[test]
fn recording_a_stage_drops_later_ones() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = Run::open(dir.path(), RunConfig::for_profile(Profile::Desk)).unwrap();
    for s in Stage::ALL {
        let r = run.stage_record(s, Default::default());
        run.record(r).unwrap();
    }
    let r = run.stage_record(Stage::PseudoLabeled, Default::default());
    run.record(r).unwrap();
    assert_eq!(
        run.state.stages.keys().copied().collect::<Vec<_>>(),
        vec![Stage::DetectorsTrained, Stage::PseudoLabeled]
    );
}

fn sidecar(fp: Vec<f64>, pr: Vec<f64>) -> PseudoSidecar {
    PseudoSidecar {
        schema_version: 1,
        utt_id: "u".into(),
        scores_fp: fp,
        scores_pr: pr,
        decisions: Vec::new(),
        threshold_fp: 0.85,
        threshold_pr: 0.95,
        detectors: Default::default(),
    }
}

#[test]
fn rederived_decisions_combine_both_behaviors() {
    let s = sidecar(vec![0.9, 0.1, 0.9, 0.85], vec![0.1, 0.96, 0.99, 0.5]);
    assert_eq!(
        rederive_decisions(&s).unwrap(),
        vec![LabelClass::ALL[1], LabelClass::ALL[2], LabelClass::ALL[3], LabelClass::ALL[1]]
    );
    assert!(rederive_decisions(&sidecar(vec![0.1], vec![])).is_err());
}

proptest! {
    #[test]
    fn raising_thresholds_never_adds_positives(
        scores in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..40),
        t in (0.01f64..0.5, 0.01f64..0.5),
        dt in (0.0f64..0.49, 0.0f64..0.49),
    ) {
        let (fp, pr): (Vec<f64>, Vec<f64>) = scores.into_iter().unzip();
        let s = sidecar(fp, pr);
        let lo = rederive_with(&s, t.0, t.1).unwrap();
        let hi = rederive_with(&s, t.0 + dt.0, t.1 + dt.1).unwrap();
        for (a, b) in lo.iter().zip(&hi) {
            prop_assert!(a.flags().filled_pause || !b.flags().filled_pause);
            prop_assert!(a.flags().prolongation || !b.flags().prolongation);
        }
        let count = |v: &[LabelClass]| v.iter().filter(|c| c.is_positive()).count();
        prop_assert!(count(&hi) <= count(&lo));
    }

    #[test]
    fn sidecar_json_round_trip_preserves_decisions(
        scores in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..20),
    ) {
        let (fp, pr): (Vec<f64>, Vec<f64>) = scores.into_iter().unzip();
        let mut s = sidecar(fp, pr);
        s.decisions = rederive_decisions(&s).unwrap();
        let back: PseudoSidecar = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(rederive_decisions(&back).unwrap(), s.decisions);
    }
}

fn tiny_model() -> AcousticModel {
    let cfg = AcousticConfig {
        d_model: 8,
        ffn_filter: 8,
        ffn_kernel: 3,
        variance_filter: 8,
        pitch_bins: 4,
        energy_bins: 4,
        history_hidden: 4,
        n_mels: 6,
        encoder_layers: 1,
        decoder_layers: 1,
        ..AcousticConfig::default()
    };
    let vocab = PhonemeVocab::build(&["a".to_string(), "b".to_string()]);
    AcousticModel::new(cfg, vocab, VarianceStats::default(), 3, DType::F32).unwrap()
}

#[test]
fn finetune_init_resets_only_the_decoder() {
    let mut m = tiny_model();
    let init = finetune_init(&mut m, &spec(), 77).unwrap();
    for g in crate::acoustic::PARAM_GROUPS {
        let same = init.hashes_before[g] == init.hashes_after[g];
        assert_eq!(same, g != "decoder", "{g}");
    }
    assert_eq!(init.decoder_seed, 77);
    assert_eq!(m.reinit_seeds().get("decoder"), Some(&77));
    assert_eq!(init.multipliers["decoder"], 10.0);
    assert!(init.multipliers.iter().filter(|(g, _)| *g != "decoder").all(|(_, &v)| v == 1.0));
    // The reset is a function of the seed alone.
    let mut other = tiny_model();
    let again = finetune_init(&mut other, &spec(), 77).unwrap();
    assert_eq!(again.hashes_after, init.hashes_after);
}

#[test]
fn gradient_checks_pass_for_every_head() {
    for head in GradHead::ALL {
        let r = gradient_check(head, 1e-6).unwrap();
        assert!(r.max_rel_error < head.tolerance(), "{head:?}: {}", r.max_rel_error);
    }
}

#[test]
fn grad_head_parses_from_snake_case() {
    assert_eq!("label_ce".parse::<GradHead>().unwrap(), GradHead::LabelCe);
    assert!("nope".parse::<GradHead>().is_err());
}

fn tiny_corpus_dir(dir: &std::path::Path) -> crate::corpus::Corpus {
    let cfg = SyntheticConfig {
        conversations: 2,
        utterances_per_conversation: 3,
        test_conversations: 1,
        min_chars: 2,
        max_chars: 4,
        ..Default::default()
    };
    generate_synthetic_corpus(5, &cfg).unwrap().write(dir).unwrap()
}

#[test]
fn feature_cache_hits_on_rerun_and_misses_on_changed_audio() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus_dir(&dir.path().join("c"));
    let cache = FeatureCache::open(&dir.path().join("f"), &Default::default()).unwrap();
    let first = prepare_corpus(&corpus, &cache);
    assert_eq!((first.computed, first.cached, first.failed), (6, 0, 0));
    let second = prepare_corpus(&corpus, &cache);
    assert_eq!((second.computed, second.cached, second.failed), (0, 6, 0));
    let u = corpus.utterances().next().unwrap();
    let (a, _) = cache.get_or_compute(u).unwrap();
    assert_eq!(a.durations.iter().sum::<usize>(), a.mel.num_frames());
    assert_eq!(a.prosody.pitch.len(), u.phonemes.len());
    // A different audio file is a different key.
    let wav = u.audio_ref.clone().unwrap();
    let (mut x, sr) = crate::features::audio::read_wav(&wav).unwrap();
    x[100] += 0.01;
    crate::features::audio::write_wav(&wav, &x, sr).unwrap();
    assert!(cache.get(u).unwrap().is_none());
}

#[test]
fn corrupt_audio_fails_only_its_utterance() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus_dir(&dir.path().join("c"));
    let bad = corpus.utterances().nth(2).unwrap();
    std::fs::write(bad.audio_ref.as_ref().unwrap(), b"RIFF not really").unwrap();
    let cache = FeatureCache::open(&dir.path().join("f"), &Default::default()).unwrap();
    let r = prepare_corpus(&corpus, &cache);
    assert_eq!(r.failed, 1);
    let failed: Vec<&str> = r
        .utterances
        .iter()
        .filter(|e| e.status == CacheStatus::Failed)
        .map(|e| e.utt_id.as_str())
        .collect();
    assert_eq!(failed, vec![bad.id.as_str()]);
    assert!(matches!(load_features(&corpus, &cache), Err(Error::Precondition(m)) if m.contains(&bad.id)));
}

#[test]
fn acoustic_items_carry_window_and_targets() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus_dir(&dir.path().join("c"));
    let cache = FeatureCache::open(&dir.path().join("f"), &Default::default()).unwrap();
    prepare_corpus(&corpus, &cache);
    let feats = load_features(&corpus, &cache).unwrap();
    let vocab = build_vocab([&corpus]);
    let emb = build_embedder(&Default::default(), None);
    let items = acoustic_items(&corpus, Some(&feats), &vocab, &emb, 5, |_| true).unwrap();
    assert_eq!(items.len(), 6);
    let cfg = AcousticConfig::default();
    for it in &items {
        it.validate(&cfg).unwrap();
    }
    // The first turn of a conversation has an empty history: zero rows before it.
    assert!(items[0].history.row(0).iter().all(|&v| v == 0.0));
    assert!(items[0].history.row(5).iter().any(|&v| v != 0.0));
    assert_eq!(items[1].history.row(4), items[0].history.row(5));
}

fn synth_fixture(dir: &std::path::Path) -> (AcousticModel, std::path::PathBuf, crate::acoustic::AcousticItem) {
    let model = tiny_model();
    let ckpt = dir.join("m.ckpt");
    model.save(&ckpt, "h", 3, 0).unwrap();
    let text = AdHocText::parse("xyz", "a|b a|b").unwrap();
    let cfg = RunConfig::for_profile(Profile::Desk);
    let item = synthesis_item(&model, &cfg, None, &SynthSource::Text(&text)).unwrap();
    (model, ckpt, item)
}

fn tiny_features() -> crate::features::FeatureConfig {
    crate::features::FeatureConfig {
        n_mels: 6,
        ..Default::default()
    }
}

#[test]
fn ad_hoc_text_needs_one_phoneme_group_per_character() {
    let t = AdHocText::parse("ab", "n i3 | h ao3").unwrap();
    assert_eq!(t.phonemes, vec![vec!["n", "i3"], vec!["h", "ao3"]]);
    assert!(AdHocText::parse("abc", "a|b").unwrap_err().is_validation());
    assert!(AdHocText::parse("ab", "a|").unwrap_err().is_validation());
    assert!(AdHocText::parse("", "").unwrap_err().is_validation());
}

#[test]
fn label_lists_parse_and_reject_out_of_range_classes() {
    let l = parse_labels("0, 1,3").unwrap();
    assert_eq!(l.0, vec![LabelClass::None, LabelClass::FilledPause, LabelClass::Both]);
    assert!(parse_labels("0,4").unwrap_err().is_validation());
    assert!(parse_labels("0,x").unwrap_err().is_validation());
}

#[test]
fn explicit_labels_are_applied_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let (model, ckpt, item) = synth_fixture(dir.path());
    let labels = parse_labels("0,1,0").unwrap();
    let out = dir.path().join("out");
    let s = synthesize_to(&model, &ckpt, &item, Some(&labels), &tiny_features(), &out, "u", None).unwrap();
    assert_eq!(s.label_source, crate::acoustic::AppliedLabelSource::Explicit);
    assert_eq!(s.applied_labels, labels.0);
    assert_eq!(s.frames, s.durations.iter().sum::<usize>());
    assert_eq!(s.checkpoint_sha256, crate::util::file_sha256(&ckpt).unwrap());
    let back: SynthSidecar = serde_json::from_slice(&std::fs::read(out.join("u.json")).unwrap()).unwrap();
    assert_eq!(back, s);
    assert!(out.join("u.mel").exists() && !out.join("u.wav").exists());
}

#[test]
fn missing_labels_fall_back_to_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let (model, ckpt, item) = synth_fixture(dir.path());
    let s = synthesize_to(&model, &ckpt, &item, None, &tiny_features(), dir.path(), "u", Some(None)).unwrap();
    assert_eq!(s.label_source, crate::acoustic::AppliedLabelSource::Predicted);
    assert_eq!(s.applied_labels.len(), 3);
    assert_eq!(s.label_estimates.len(), 4);
    assert_eq!(s.vocoder.as_deref(), Some("griffin_lim"));
    assert!(dir.path().join("u.wav").exists());
}

#[test]
fn label_count_mismatch_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let (model, ckpt, item) = synth_fixture(dir.path());
    let labels = parse_labels("0,1").unwrap();
    let err = synthesize_to(&model, &ckpt, &item, Some(&labels), &tiny_features(), dir.path(), "u", None).unwrap_err();
    assert!(err.is_validation(), "{err}");
}

#[test]
fn external_vocoder_is_invoked_with_mel_and_wav_paths() {
    let dir = tempfile::tempdir().unwrap();
    let (model, ckpt, item) = synth_fixture(dir.path());
    let f = tiny_features();
    let s = synthesize_to(&model, &ckpt, &item, None, &f, dir.path(), "u", Some(Some("cp"))).unwrap();
    assert_eq!(s.vocoder.as_deref(), Some("cp"));
    assert_eq!(std::fs::read(dir.path().join("u.wav")).unwrap(), std::fs::read(dir.path().join("u.mel")).unwrap());
    let err = synthesize_to(&model, &ckpt, &item, None, &f, dir.path(), "v", Some(Some("false"))).unwrap_err();
    assert!(matches!(err, crate::error::Error::Audio(_)), "{err}");
}

#[test]
fn unknown_phonemes_are_rejected() {
    let model = tiny_model();
    let text = AdHocText::parse("x", "zz").unwrap();
    let cfg = RunConfig::for_profile(Profile::Desk);
    let err = synthesis_item(&model, &cfg, None, &SynthSource::Text(&text)).unwrap_err();
    assert!(err.is_validation(), "{err}");
}

#[test]
fn region_difference_covers_only_labelled_characters() {
    let a = ndarray::Array2::<f32>::zeros((5, 2));
    let mut b = a.clone();
    b.row_mut(0).fill(1.0);
    b.row_mut(4).fill(2.0);
    // Characters: [0,1) with 2 frames, [1,3) with 1+2 frames.
    let labels = parse_labels("0,2").unwrap();
    let d = label_region_difference(&a, &[2, 1, 2], &b, &[2, 1, 2], &[1, 2], &labels).unwrap();
    assert_eq!((d.characters, d.frames_a, d.frames_b), (1, 3, 3));
    assert!((d.mean_abs_diff - 2.0 / 3.0).abs() < 1e-12);
    let none = label_region_difference(&a, &[2, 1, 2], &b, &[2, 1, 2], &[1, 2], &parse_labels("0,0").unwrap()).unwrap();
    assert_eq!((none.characters, none.mean_abs_diff), (0, 0.0));
    assert!(label_region_difference(&a, &[2, 1, 1], &b, &[2, 1, 2], &[1, 2], &labels).is_err());
}
