use super::*;
use crate::labels::LabelClass;
use crate::nn::{check_gradients, length_mask, Ctx};
use candle_core::{DType, Device, Tensor, Var};
use proptest::prelude::*;
use rand::Rng;

fn tiny_config() -> AcousticConfig {
    AcousticConfig {
        d_model: 8,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        ffn_filter: 12,
        ffn_kernel: 3,
        dropout: 0.0,
        variance_filter: 6,
        variance_kernel: 3,
        variance_dropout: 0.0,
        pitch_bins: 4,
        energy_bins: 4,
        history_hidden: 5,
        n_mels: 6,
        ..AcousticConfig::default()
    }
}

fn vocab() -> PhonemeVocab {
    let s: Vec<String> = ["a", "e", "k", "n", "o", "s"].iter().map(|s| s.to_string()).collect();
    PhonemeVocab::build(&s)
}

fn model(cfg: AcousticConfig, dtype: DType) -> AcousticModel {
    let items: Vec<AcousticItem> = (0..4).map(|s| item(s, 5, &cfg)).collect();
    let stats = VarianceStats::from_targets(items.iter().map(|i| i.targets.as_ref().unwrap()));
    AcousticModel::new(cfg, vocab(), stats, 11, dtype).unwrap()
}

fn item(seed: u64, chars: usize, cfg: &AcousticConfig) -> AcousticItem {
    let mut rng = crate::util::keyed_rng(seed, "acoustic-test-item");
    let grouping: Vec<usize> = (0..chars).map(|_| rng.random_range(1..=2)).collect();
    let n: usize = grouping.iter().sum();
    let phoneme_ids: Vec<u32> = (0..n).map(|_| rng.random_range(4..10)).collect();
    let mut conversation_ids = vec![PhonemeVocab::CLS];
    conversation_ids.extend((0..5).map(|_| rng.random_range(4..10u32)));
    conversation_ids.push(PhonemeVocab::SEP);
    conversation_ids.extend(phoneme_ids.iter().copied());
    let durations: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let t: usize = durations.iter().sum();
    let mut labels = PhonemeLabelSeq(vec![LabelClass::None; n]);
    let last = grouping.iter().sum::<usize>() - 1;
    labels.0[last] = LabelClass::ALL[rng.random_range(1..4)];
    AcousticItem {
        utt_id: format!("u{seed}"),
        phoneme_ids,
        grouping,
        conversation_ids,
        history: Array2::from_shape_fn((cfg.window(), crate::corpus::EMBEDDING_DIM), |_| rng.random_range(-1.0..1.0)),
        targets: Some(AcousticTargets {
            mel: Array2::from_shape_fn((t, cfg.n_mels), |_| rng.random_range(-4.0..1.0)),
            durations,
            pitch: (0..n).map(|_| if rng.random_bool(0.7) { rng.random_range(80.0..300.0) } else { 0.0 }).collect(),
            energy: (0..n).map(|_| rng.random_range(0.0..2.0)).collect(),
            labels,
        }),
    }
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.sub(b).unwrap().abs().unwrap().max_all().unwrap().to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

#[test]
fn vocab_reserves_special_ids_and_rejects_unknown_symbols() {
    let v = vocab();
    assert_eq!(v.len(), 10);
    assert_eq!(v.id("a"), Some(4));
    assert!(v.encode(&["zz".to_string()]).is_err());
    assert_eq!(v.encode_lossy(&["zz".to_string()]), vec![PhonemeVocab::UNK]);
    let u = crate::corpus::test_util::utt("x", &["a", "b"], &[1, 1]);
    let seq = v.conversation_sequence(&[None, Some(&u), Some(&u)]);
    assert_eq!(seq[0], PhonemeVocab::CLS);
    assert_eq!(seq.iter().filter(|&&i| i == PhonemeVocab::SEP).count(), 1);
}

#[test]
fn config_validation() {
    assert!(AcousticConfig::default().validate().is_ok());
    assert!(AcousticConfig::desk().validate().is_ok());
    assert!(AcousticConfig { heads: 3, ..tiny_config() }.validate().is_err());
    assert!(AcousticConfig { ffn_kernel: 4, ..tiny_config() }.validate().is_err());
}

#[test]
fn padding_does_not_change_valid_encoder_rows() {
    let cfg = tiny_config();
    let m = model(cfg.clone(), DType::F32);
    let (a, b) = (item(1, 3, &cfg), item(2, 7, &cfg));
    let single = m.batch(&[&a]).unwrap();
    let pair = m.batch(&[&a, &b]).unwrap();
    let hs = m.encode_phonemes(&single.ids, &single.mask, &mut Ctx::eval()).unwrap();
    let hp = m.encode_phonemes(&pair.ids, &pair.mask, &mut Ctx::eval()).unwrap();
    let n = a.phoneme_ids.len();
    let rows = hp.narrow(0, 0, 1).unwrap().narrow(1, 0, n).unwrap();
    assert!(max_abs_diff(&rows, &hs) < 1e-5);
    let pad = hp.narrow(0, 0, 1).unwrap().narrow(1, n, hp.dim(1).unwrap() - n).unwrap();
    assert_eq!(pad.abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap(), 0.0);
}

#[test]
fn history_context_has_model_width_and_checks_window() {
    let cfg = tiny_config();
    let m = model(cfg.clone(), DType::F32);
    let b = m.batch(&[&item(1, 3, &cfg), &item(2, 4, &cfg)]).unwrap();
    assert_eq!(m.encode_history(&b.history).unwrap().dims(), &[2, cfg.d_model]);
    let short = b.history.narrow(1, 0, 5).unwrap();
    assert!(m.encode_history(&short).is_err());
}

#[test]
fn conversation_requires_cls() {
    let cfg = tiny_config();
    let m = model(cfg.clone(), DType::F32);
    let b = m.batch(&[&item(1, 3, &cfg)]).unwrap();
    assert!(m.encode_conversation(&b.conv_ids, &b.conv_mask, &mut Ctx::eval()).is_ok());
    let mut bad = item(1, 3, &cfg);
    bad.conversation_ids[0] = PhonemeVocab::SEP;
    assert!(m.batch(&[&bad]).is_err());
}

fn set_identity(m: &AcousticModel, name: &str, d: usize) {
    let eye = Tensor::eye(d, DType::F64, &Device::Cpu).unwrap();
    m.store().get(&format!("{name}.weight")).unwrap().set(&eye).unwrap();
    m.store().get(&format!("{name}.bias")).unwrap().set(&Tensor::zeros(d, DType::F64, &Device::Cpu).unwrap()).unwrap();
}

#[test]
fn single_key_attention_returns_value_plus_cls_state() {
    let cfg = tiny_config();
    let m = model(cfg.clone(), DType::F64);
    for p in ["q", "k", "v", "o"] {
        set_identity(&m, &format!("linguistic_encoder.cross.{p}"), cfg.d_model);
    }
    let dev = Device::Cpu;
    let h_u = Tensor::rand(-1.0, 1.0, (1, 4, cfg.d_model), &dev).unwrap();
    let h_c = Tensor::rand(-1.0, 1.0, (1, 3, cfg.d_model), &dev).unwrap();
    let mask = length_mask(&[2], 3, DType::F64, &dev).unwrap();
    let (out, w) = m.linguistic_attend(&h_u, &h_c, &mask).unwrap();
    let expect = h_c.narrow(1, 1, 1).unwrap().add(&h_c.narrow(1, 0, 1).unwrap()).unwrap();
    assert!(max_abs_diff(&out, &expect.broadcast_as(out.shape()).unwrap()) < 1e-12);
    for row in w.flatten_to(2).unwrap().to_vec2::<f64>().unwrap() {
        assert_eq!(row, vec![0.0, 1.0, 0.0]);
    }
}

#[test]
fn attention_weights_skip_cls_and_padding() {
    let cfg = tiny_config();
    let m = model(cfg.clone(), DType::F64);
    let b = m.batch(&[&item(3, 4, &cfg), &item(4, 2, &cfg)]).unwrap();
    let mut ctx = Ctx::eval();
    let h_u = m.encode_phonemes(&b.ids, &b.mask, &mut ctx).unwrap();
    let h_c = m.encode_conversation(&b.conv_ids, &b.conv_mask, &mut ctx).unwrap();
    let (_, w) = m.linguistic_attend(&h_u, &h_c, &b.conv_mask).unwrap();
    let mask = b.conv_mask.to_vec2::<f64>().unwrap();
    for bi in 0..2 {
        for row in w.get(bi).unwrap().flatten_to(1).unwrap().to_vec2::<f64>().unwrap() {
            assert_eq!(row[0], 0.0);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (j, &x) in row.iter().enumerate() {
                if mask[bi][j] == 0.0 {
                    assert_eq!(x, 0.0);
                }
            }
        }
    }
}

#[test]
fn context_terms_commute_exactly() {
    let cfg = tiny_config();
    let m = model(cfg.clone(), DType::F32);
    let b = m.batch(&[&item(5, 4, &cfg)]).unwrap();
    let mut ctx = Ctx::eval();
    let h_u = m.encode_phonemes(&b.ids, &b.mask, &mut ctx).unwrap();
    let hist = m.encode_history(&b.history).unwrap().unsqueeze(1).unwrap();
    let h_c = m.encode_conversation(&b.conv_ids, &b.conv_mask, &mut ctx).unwrap();
    let (ling, _) = m.linguistic_attend(&h_u, &h_c, &b.conv_mask).unwrap();
    let x = h_u.broadcast_add(&hist.broadcast_add(&ling).unwrap()).unwrap();
    let y = h_u.broadcast_add(&ling.broadcast_add(&hist).unwrap()).unwrap();
    assert_eq!(x.flatten_all().unwrap().to_vec1::<f32>().unwrap(), y.flatten_all().unwrap().to_vec1::<f32>().unwrap());
}

#[test]
fn label_embedding_rows_follow_class_ids() {
    let cfg = tiny_config();
    let m = model(cfg.clone(), DType::F64);
    let table = m.store().get("label_embedding.table").unwrap().as_tensor().clone();
    assert_eq!(table.dims(), &[4, cfg.d_model]);
    let ids = Tensor::new(&[[3u32, 0, 2]], &Device::Cpu).unwrap();
    let e = m.embed_labels(&ids).unwrap().squeeze(0).unwrap().to_vec2::<f64>().unwrap();
    let t = table.to_vec2::<f64>().unwrap();
    assert_eq!(e, vec![t[3].clone(), t[0].clone(), t[2].clone()]);
    assert!(m.embed_labels(&Tensor::new(&[[4u32]], &Device::Cpu).unwrap()).is_err());
}

#[test]
fn predicted_log_durations_map_to_at_least_one_frame() {
    assert_eq!(duration_from_log(-5.0), 1);
    assert_eq!(duration_from_log(4f64.ln()), 3);
    assert_eq!(duration_from_log(f64::NAN), 1);
    assert_eq!(duration_from_log(0.0), 1);
}

#[test]
fn bucketize_covers_range_edges() {
    assert_eq!(bucketize(-10.0, (-1.0, 1.0), 4), 0);
    assert_eq!(bucketize(10.0, (-1.0, 1.0), 4), 3);
    assert_eq!(bucketize(0.1, (-1.0, 1.0), 4), 2);
    assert_eq!(bucketize(0.0, (-1.0, 1.0), 1), 0);
}

#[test]
fn variance_stats_use_voiced_pitch_only() {
    let cfg = tiny_config();
    let items: Vec<AcousticItem> = (0..3).map(|s| item(s, 5, &cfg)).collect();
    let stats = VarianceStats::from_targets(items.iter().map(|i| i.targets.as_ref().unwrap()));
    let voiced: Vec<f64> =
        items.iter().flat_map(|i| i.targets.as_ref().unwrap().pitch.iter().map(|&p| p as f64)).filter(|&p| p > 0.0).collect();
    let mean = voiced.iter().sum::<f64>() / voiced.len() as f64;
    assert!((stats.pitch_mean - mean).abs() < 1e-9);
    assert_eq!(stats.norm_pitch(0.0), 0.0);
}

fn naive_regulate(rows: &[Vec<f64>], durations: &[usize]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for (r, &d) in rows.iter().zip(durations) {
        for _ in 0..d {
            out.push(r.clone());
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn length_regulation_repeats_rows_in_order(durations in prop::collection::vec(0usize..5, 1..12)) {
        let n = durations.len();
        let rows: Vec<Vec<f64>> = (0..n).map(|k| vec![k as f64, -(k as f64) - 0.5]).collect();
        let h = Tensor::from_vec(rows.concat(), (1, n, 2), &Device::Cpu).unwrap();
        let (out, lengths) = length_regulate(&h, std::slice::from_ref(&durations)).unwrap();
        let total: usize = durations.iter().sum();
        prop_assert_eq!(lengths[0], total);
        let got = out.squeeze(0).unwrap().to_vec2::<f64>().unwrap();
        prop_assert_eq!(&got[..total], &naive_regulate(&rows, &durations)[..]);
        prop_assert!(got[total..].iter().all(|r| r.iter().all(|&x| x == 0.0)));
    }
}

#[test]
fn length_regulation_rejects_extra_durations() {
    let h = Tensor::zeros((1, 2, 3), DType::F32, &Device::Cpu).unwrap();
    assert!(length_regulate(&h, &[vec![1, 1, 1]]).is_err());
    assert!(length_regulate(&h, &[vec![1], vec![1]]).is_err());
}

#[test]
fn training_loss_is_sum_of_components() {
    let cfg = tiny_config();
    let m = model(cfg.clone(), DType::F32);
    let b = m.batch(&[&item(1, 3, &cfg), &item(2, 5, &cfg)]).unwrap();
    let v = m.forward_train(&b, &mut Ctx::train(1)).unwrap().values().unwrap();
    let sum = v.mel + v.duration + v.pitch + v.energy + v.label;
    assert!((v.total - sum).abs() < 1e-5 * sum.max(1.0));
    assert!([v.mel, v.duration, v.pitch, v.energy, v.label].iter().all(|x| x.is_finite() && *x >= 0.0));
}

#[test]
fn decoded_mel_has_frame_rows() {
    let cfg = tiny_config();
    let m = model(cfg.clone(), DType::F32);
    let it = item(7, 4, &cfg);
    let out = m.synthesize(SynthesisInput { item: &it, labels: None }).unwrap();
    assert_eq!(out.mel.dim(), (out.durations.iter().sum(), cfg.n_mels));
    assert!(out.durations.iter().all(|&d| d >= 1));
}

fn group_vars(m: &AcousticModel, groups: &[&str]) -> Vec<(String, Var)> {
    m.store()
        .vars()
        .filter(|(n, _)| groups.contains(&crate::nn::ParamStore::group_of(n)))
        .map(|(n, v)| (n.to_string(), v.clone()))
        .collect()
}

fn grad_error(head: &str, label_head: LabelHead, groups: &[&str]) -> f64 {
    let cfg = AcousticConfig {
        label_head,
        ..tiny_config()
    };
    let m = model(cfg.clone(), DType::F64);
    let (a, b) = (item(1, 3, &cfg), item(2, 4, &cfg));
    let batch = m.batch(&[&a, &b]).unwrap();
    let pick = |l: LossComponents| match head {
        "mel" => l.mel,
        "duration" => l.duration,
        "pitch" => l.pitch,
        "energy" => l.energy,
        _ => l.label,
    };
    let loss = || Ok(pick(m.forward_train(&batch, &mut Ctx::eval())?));
    check_gradients(&group_vars(&m, groups), &loss, 1e-6, 6).unwrap().max_rel_error
}

#[test]
fn label_mse_gradient_matches_finite_differences() {
    let e = grad_error("label", LabelHead::Regression, &["label_predictor", "encoder", "history_encoder"]);
    assert!(e < 1e-4, "{e}");
}

#[test]
fn label_ce_gradient_matches_finite_differences() {
    let e = grad_error("label", LabelHead::Classification, &["label_predictor", "linguistic_encoder"]);
    assert!(e < 1e-4, "{e}");
}

#[test]
fn variance_gradients_match_finite_differences() {
    for head in ["duration", "pitch", "energy"] {
        let e = grad_error(head, LabelHead::Regression, &["variance_adaptor", "label_embedding"]);
        assert!(e < 1e-4, "{head}: {e}");
    }
}

#[test]
fn mel_l1_gradient_matches_finite_differences() {
    let e = grad_error("mel", LabelHead::Regression, &["decoder", "variance_adaptor"]);
    assert!(e < 1e-4, "{e}");
}

#[test]
fn synthesis_applies_explicit_or_predicted_labels() {
    let cfg = tiny_config();
    let m = model(cfg.clone(), DType::F32);
    let it = item(9, 3, &cfg);
    let labels = CharLabelSeqBuilder::from(&[0, 3, 1]);
    let out = m.synthesize(SynthesisInput { item: &it, labels: Some(&labels) }).unwrap();
    assert_eq!(out.applied_char_labels, labels);
    assert_eq!(out.label_source, AppliedLabelSource::Explicit);

    let out = m.synthesize(SynthesisInput { item: &it, labels: None }).unwrap();
    assert_eq!(out.label_source, AppliedLabelSource::Predicted);
    let expect: Vec<LabelClass> = out.label_estimates.iter().map(|&e| LabelClass::from_estimate(e)).collect();
    assert_eq!(out.applied_phoneme_labels.0, expect);

    let wrong = CharLabelSeqBuilder::from(&[0, 1]);
    assert!(m.synthesize(SynthesisInput { item: &it, labels: Some(&wrong) }).is_err());
}

struct CharLabelSeqBuilder;

impl CharLabelSeqBuilder {
    fn from(v: &[u8]) -> crate::labels::CharLabelSeq {
        crate::labels::CharLabelSeq(v.iter().map(|&x| LabelClass::ALL[x as usize]).collect())
    }
}

#[test]
fn classification_head_predicts_argmax_classes() {
    let cfg = AcousticConfig {
        label_head: LabelHead::Classification,
        ..tiny_config()
    };
    let m = model(cfg.clone(), DType::F32);
    let it = item(4, 3, &cfg);
    let out = m.synthesize(SynthesisInput { item: &it, labels: None }).unwrap();
    assert!(out.label_estimates.iter().all(|&e| e.fract() == 0.0 && (0.0..=3.0).contains(&e)));
}

#[test]
fn checkpoint_round_trip_and_config_hash_check() {
    let cfg = tiny_config();
    let mut m = model(cfg.clone(), DType::F32);
    m.reinit_group("decoder", 77).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.ckpt");
    m.save(&p, "cfg-a", 11, 5).unwrap();
    let (back, step) = AcousticModel::load(&p, Some("cfg-a")).unwrap();
    assert_eq!(step, 5);
    assert_eq!(back.reinit_seeds().get("decoder"), Some(&77));
    assert_eq!(back.store().content_hash(None).unwrap(), m.store().content_hash(None).unwrap());
    let it = item(3, 3, &cfg);
    let a = m.synthesize(SynthesisInput { item: &it, labels: None }).unwrap();
    let b = back.synthesize(SynthesisInput { item: &it, labels: None }).unwrap();
    assert_eq!(a, b);
    assert!(matches!(AcousticModel::load(&p, Some("cfg-b")), Err(Error::Checkpoint(_))));
    assert!(AcousticModel::load(&p, None).is_ok());
}

#[test]
fn reinit_touches_only_its_group() {
    let cfg = tiny_config();
    let mut m = model(cfg, DType::F32);
    let before: Vec<String> = PARAM_GROUPS.iter().map(|g| m.store().content_hash(Some(g)).unwrap()).collect();
    m.reinit_group("decoder", 3).unwrap();
    for (g, h) in PARAM_GROUPS.iter().zip(&before) {
        let now = m.store().content_hash(Some(g)).unwrap();
        assert_eq!(&now == h, *g != "decoder", "{g}");
    }
    assert!(m.reinit_group("nope", 1).is_err());
    let groups: Vec<String> = m.store().groups().into_iter().collect();
    let mut expect: Vec<String> = PARAM_GROUPS.iter().map(|s| s.to_string()).collect();
    expect.sort();
    assert_eq!(groups, expect);
}

#[test]
fn short_training_reduces_loss() {
    let cfg = tiny_config();
    let m = model(cfg.clone(), DType::F32);
    let items: Vec<AcousticItem> = (0..3).map(|s| item(s, 4, &cfg)).collect();
    let refs: Vec<&AcousticItem> = items.iter().collect();
    let batch = m.batch(&refs).unwrap();
    let mut opt = crate::nn::Adam::new(crate::nn::AdamConfig::default());
    let first = m.forward_train(&batch, &mut Ctx::eval()).unwrap().values().unwrap().total;
    for _ in 0..60 {
        let loss = m.forward_train(&batch, &mut Ctx::eval()).unwrap().total().unwrap();
        let grads = loss.backward().unwrap();
        opt.step(m.store(), &grads, 3e-3).unwrap();
    }
    let last = m.forward_train(&batch, &mut Ctx::eval()).unwrap().values().unwrap().total;
    assert!(last < 0.7 * first, "{first} -> {last}");
}
