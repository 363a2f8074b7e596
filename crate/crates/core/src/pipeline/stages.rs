use std::collections::BTreeMap;
use std::path::Path;

use candle_core::DType;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{acoustic_items, build_embedder, build_vocab, detector_examples, load_features, FeatureCache};
use super::state::{ArtifactRecord, Run, Stage};
use super::{lr_at, OptimizerSpec};
use crate::acoustic::{AcousticItem, AcousticModel, LossValues, VarianceStats, PARAM_GROUPS};
use crate::corpus::{load_corpus, write_manifest, Corpus, LabelSource, Split, Utterance};
use crate::detector::{
    evaluate_detector, positive_rates, threshold_decisions, train_detector, Behavior, Detector, DetectorExample,
    DetectorScores, InputType, MetricsRecord,
};
use crate::error::{Error, Result};
use crate::labels::{combine, BehaviorFlags, CharLabelSeq, LabelClass};
use crate::nn::Ctx;
use crate::util::{file_sha256, keyed_rng, write_atomic};

pub const HIGH_QUALITY: &str = "high_quality";
pub const LOW_QUALITY: &str = "low_quality";
pub const PSEUDO_SCHEMA_VERSION: u32 = 1;

pub const PSEUDO_MANIFEST: &str = "pseudo/manifest.jsonl";
const PSEUDO_SUMMARY: &str = "pseudo/summary.json";
const PSEUDO_INDEX: &str = "pseudo/labels/index.json";
pub const PRETRAIN_CKPT: &str = "acoustic/pretrain.ckpt";
pub const FINETUNE_CKPT: &str = "acoustic/finetune.ckpt";

/// Checkpoint path of a detector, relative to the output directory.
pub fn detector_path(behavior: Behavior, input_type: InputType) -> String {
    let input = match input_type {
        InputType::Speech => "speech",
        InputType::TextSpeech => "text_speech",
        InputType::Text => "text",
    };
    format!("detectors/{}.{input}.ckpt", behavior.as_str())
}

fn json_artifact<T: Serialize>(run: &Run, rel: &str, value: &T) -> Result<ArtifactRecord> {
    write_atomic(&run.path(rel), serde_json::to_string_pretty(value)?.as_bytes())?;
    run.artifact(rel)
}

fn corpus_input(run: &Run, role: &str) -> Result<(Corpus, ArtifactRecord)> {
    let rec = run.corpus(role)?;
    let corpus = load_corpus(&rec.manifest)?;
    let sha = file_sha256(&rec.manifest)?;
    if sha != rec.sha256 {
        return Err(Error::Precondition(format!(
            "{} changed since it was prepared (run prepare again)",
            rec.manifest.display()
        )));
    }
    Ok((
        corpus,
        ArtifactRecord {
            path: rec.manifest.display().to_string(),
            sha256: sha,
        },
    ))
}

fn feature_cache(run: &Run) -> Result<FeatureCache> {
    FeatureCache::open(&run.path("features"), &run.config.features)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSummary {
    pub behavior: Behavior,
    pub input_type: InputType,
    pub checkpoint: ArtifactRecord,
    pub seed: u64,
    pub final_loss: f64,
    /// Held-out metrics on the test split, when it is non-empty.
    pub metrics: Option<MetricsRecord>,
}

/// Trains one detector per behavior and configured input type on the
/// labelled training split of the high-quality corpus.
pub fn stage_train_detectors(run: &mut Run) -> Result<Vec<DetectorSummary>> {
    let _lock = run.lock()?;
    let (hq, hq_input) = corpus_input(run, HIGH_QUALITY)?;
    if let Some(u) = hq.utterances().find(|u| hq.split_of(&u.id) == Split::Train && u.char_labels.is_none()) {
        return Err(Error::Precondition(format!(
            "training utterance '{}' has no labels; detectors need human or planted labels",
            u.id
        )));
    }
    let feats = load_features(&hq, &feature_cache(run)?)?;
    let cfg = &run.config;
    let mut summaries = Vec::new();
    let mut rec = run.stage_record(Stage::DetectorsTrained, BTreeMap::new());
    rec.inputs.insert("high_quality_manifest".into(), hq_input);
    for &input_type in &cfg.detector.input_types {
        for behavior in Behavior::ALL {
            let tag = format!("detector:{}:{}", behavior.as_str(), input_type.as_str());
            let seed = cfg.stage_seed(&tag);
            let train = detector_examples(&hq, &feats, behavior, |u| hq.split_of(&u.id) == Split::Train)?;
            let test = detector_examples(&hq, &feats, behavior, |u| {
                hq.split_of(&u.id) == Split::Test && u.char_labels.is_some()
            })?;
            let dcfg = cfg.detector.detector_config(behavior, input_type, cfg.features.n_mels);
            log::info!("training {tag} on {} utterances", train.len());
            let (det, tlog) = train_detector(&train, &dcfg, seed)?;
            let rel = detector_path(behavior, input_type);
            det.save(&run.path(&rel), &run.config_hash, seed, tlog.steps)?;
            let metrics = if test.is_empty() {
                None
            } else {
                Some(MetricsRecord::new(behavior, input_type, &score_and_evaluate(&det, &test, dcfg.threshold)?))
            };
            let checkpoint = run.artifact(&rel)?;
            rec.seeds.insert(tag.clone(), seed);
            rec.artifacts.insert(tag, checkpoint.clone());
            summaries.push(DetectorSummary {
                behavior,
                input_type,
                checkpoint,
                seed,
                final_loss: tlog.epoch_losses.last().copied().unwrap_or(f64::NAN),
                metrics,
            });
        }
    }
    rec.artifacts
        .insert("metrics".into(), json_artifact(run, "detectors/metrics.json", &summaries)?);
    run.record(rec)?;
    Ok(summaries)
}

fn score_and_evaluate(det: &Detector, examples: &[DetectorExample], threshold: f64) -> Result<crate::detector::DetectorMetrics> {
    let scored: Vec<(Vec<bool>, Vec<bool>)> = examples
        .par_iter()
        .map(|e| {
            let refs = e
                .labels
                .clone()
                .ok_or_else(|| Error::Validation(format!("{}: no reference labels", e.utt_id)))?;
            Ok((threshold_decisions(&det.score(e)?, threshold)?, refs))
        })
        .collect::<Result<_>>()?;
    let (d, r): (Vec<_>, Vec<_>) = scored.into_iter().unzip();
    evaluate_detector(&d, &r)
}

fn load_detector(run: &Run, behavior: Behavior, input_type: InputType) -> Result<(Detector, String)> {
    let rel = detector_path(behavior, input_type);
    let path = run.path(&rel);
    if !path.exists() {
        return Err(Error::Precondition(format!(
            "missing artifact {} (run train-detector with input type {} first)",
            path.display(),
            input_type.as_str()
        )));
    }
    let det = Detector::load(&path)?;
    let c = det.config();
    if c.behavior != behavior || c.input_type != input_type {
        return Err(Error::Checkpoint(format!(
            "{} holds a {} {} detector, expected {} {}",
            path.display(),
            c.behavior.as_str(),
            c.input_type.as_str(),
            behavior.as_str(),
            input_type.as_str()
        )));
    }
    let hash = file_sha256(&path)?;
    Ok((det, hash))
}

/// Per-utterance pseudo-label record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoSidecar {
    pub schema_version: u32,
    pub utt_id: String,
    pub scores_fp: Vec<f64>,
    pub scores_pr: Vec<f64>,
    /// Combined class per character.
    pub decisions: Vec<LabelClass>,
    pub threshold_fp: f64,
    pub threshold_pr: f64,
    /// Detector checkpoint hash by behavior.
    pub detectors: BTreeMap<String, String>,
}

/// Classes implied by a sidecar's stored scores and thresholds.
pub fn rederive_decisions(s: &PseudoSidecar) -> Result<Vec<LabelClass>> {
    rederive_with(s, s.threshold_fp, s.threshold_pr)
}

pub fn rederive_with(s: &PseudoSidecar, threshold_fp: f64, threshold_pr: f64) -> Result<Vec<LabelClass>> {
    if s.scores_fp.len() != s.scores_pr.len() {
        return Err(Error::Shape(format!("{}: score sequences differ in length", s.utt_id)));
    }
    let fp = threshold_decisions(&DetectorScores(s.scores_fp.clone()), threshold_fp)?;
    let pr = threshold_decisions(&DetectorScores(s.scores_pr.clone()), threshold_pr)?;
    Ok(fp.iter().zip(&pr).map(|(&a, &b)| combine(BehaviorFlags::new(a, b))).collect())
}

pub fn sidecar_path(utt_id: &str) -> String {
    format!("pseudo/labels/{}.json", utt_id.replace('/', "_"))
}

pub fn load_pseudo_sidecar(out: &Path, utt_id: &str) -> Result<PseudoSidecar> {
    let p = out.join(sidecar_path(utt_id));
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoSummary {
    pub utterances: usize,
    pub characters: usize,
    pub input_type: InputType,
    pub threshold_fp: f64,
    pub threshold_pr: f64,
    /// Fraction of characters flagged, by behavior.
    pub positive_rates: BTreeMap<String, f64>,
    /// Character count per combined class value.
    pub class_counts: [usize; 4],
}

/// Labels the low-quality corpus with the stage-1 detectors.
pub fn stage_extract_pseudo_labels(run: &mut Run) -> Result<PseudoSummary> {
    let _lock = run.lock()?;
    let det_rec = run.require(Stage::DetectorsTrained)?.clone();
    let (lq, lq_input) = corpus_input(run, LOW_QUALITY)?;
    let feats = load_features(&lq, &feature_cache(run)?)?;
    let input_type = run.config.detector.pseudo_input_type();
    let (fp_det, fp_hash) = load_detector(run, Behavior::FilledPause, input_type)?;
    let (pr_det, pr_hash) = load_detector(run, Behavior::Prolongation, input_type)?;
    let (t_fp, t_pr) = (run.config.detector.threshold_fp, run.config.detector.threshold_pr);
    let detectors: BTreeMap<String, String> = [
        (Behavior::FilledPause.as_str().to_string(), fp_hash.clone()),
        (Behavior::Prolongation.as_str().to_string(), pr_hash.clone()),
    ]
    .into();

    let utts: Vec<&Utterance> = lq.utterances().collect();
    let sidecars: Vec<PseudoSidecar> = utts
        .par_iter()
        .map(|u| {
            let f = &feats[&u.id];
            let score = |det: &Detector, b| det.score(&DetectorExample::build(u, &f.mel, &f.durations, b)?);
            let mut s = PseudoSidecar {
                schema_version: PSEUDO_SCHEMA_VERSION,
                utt_id: u.id.clone(),
                scores_fp: score(&fp_det, Behavior::FilledPause)?.0,
                scores_pr: score(&pr_det, Behavior::Prolongation)?.0,
                decisions: Vec::new(),
                threshold_fp: t_fp,
                threshold_pr: t_pr,
                detectors: detectors.clone(),
            };
            s.decisions = rederive_decisions(&s)?;
            Ok(s)
        })
        .collect::<Result<_>>()?;

    let mut index = BTreeMap::new();
    for s in &sidecars {
        let rel = sidecar_path(&s.utt_id);
        write_atomic(&run.path(&rel), serde_json::to_string(s)?.as_bytes())?;
        index.insert(s.utt_id.clone(), file_sha256(&run.path(&rel))?);
    }

    let by_id: BTreeMap<&str, &PseudoSidecar> = sidecars.iter().map(|s| (s.utt_id.as_str(), s)).collect();
    let mut pseudo = lq.clone();
    for conv in &mut pseudo.conversations {
        for u in &mut conv.utterances {
            u.char_labels = Some(CharLabelSeq(by_id[u.id.as_str()].decisions.clone()));
            u.label_source = LabelSource::Pseudo;
        }
    }
    std::fs::create_dir_all(run.path("pseudo")).map_err(|e| Error::io(run.path("pseudo"), e))?;
    write_manifest(&pseudo, run.path(PSEUDO_MANIFEST))?;

    let mut per_behavior: BTreeMap<Behavior, Vec<Vec<bool>>> = BTreeMap::new();
    let mut class_counts = [0usize; 4];
    for s in &sidecars {
        for b in Behavior::ALL {
            per_behavior
                .entry(b)
                .or_default()
                .push(s.decisions.iter().map(|c| b.present_in(c.flags())).collect());
        }
        for c in &s.decisions {
            class_counts[c.value() as usize] += 1;
        }
    }
    let summary = PseudoSummary {
        utterances: sidecars.len(),
        characters: class_counts.iter().sum(),
        input_type,
        threshold_fp: t_fp,
        threshold_pr: t_pr,
        positive_rates: positive_rates(&per_behavior),
        class_counts,
    };

    let mut rec = run.stage_record(Stage::PseudoLabeled, BTreeMap::new());
    rec.inputs.insert("low_quality_manifest".into(), lq_input);
    for (role, a) in det_rec.artifacts {
        rec.inputs.insert(role, a);
    }
    rec.artifacts.insert("manifest".into(), run.artifact(PSEUDO_MANIFEST)?);
    rec.artifacts.insert("summary".into(), json_artifact(run, PSEUDO_SUMMARY, &summary)?);
    rec.artifacts.insert("sidecars".into(), json_artifact(run, PSEUDO_INDEX, &index)?);
    run.record(rec)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: u64,
    pub seed: u64,
    pub items: usize,
    /// Eval-mode loss over the training items before the first update.
    pub initial: LossValues,
    /// Eval-mode loss over the training items after the last update.
    #[serde(rename = "final")]
    pub final_: LossValues,
    /// `(step, training-batch loss)` every `log_every` steps.
    pub curve: Vec<(u64, LossValues)>,
}

/// Mean eval-mode loss over `items`, in batches of `batch_size`, weighted by batch size.
pub fn evaluate_loss(model: &AcousticModel, items: &[AcousticItem], batch_size: usize) -> Result<LossValues> {
    let mut acc = [0.0f64; 6];
    for chunk in items.chunks(batch_size.max(1)) {
        let refs: Vec<&AcousticItem> = chunk.iter().collect();
        let v = model.forward_train(&model.batch(&refs)?, &mut Ctx::eval())?.values()?;
        let w = chunk.len() as f64;
        for (a, x) in acc.iter_mut().zip([v.mel, v.duration, v.pitch, v.energy, v.label, v.total]) {
            *a += w * x;
        }
    }
    let n = items.len().max(1) as f64;
    Ok(LossValues {
        mel: acc[0] / n,
        duration: acc[1] / n,
        pitch: acc[2] / n,
        energy: acc[3] / n,
        label: acc[4] / n,
        total: acc[5] / n,
    })
}

/// Optimization loop shared by pre-training and fine-tuning. Batches are
/// drawn from per-epoch permutations keyed by `seed`; the schedule starts
/// at step 1 and Adam moments start at zero.
#[allow(clippy::too_many_arguments)]
pub fn train_acoustic(
    model: &AcousticModel,
    items: &[AcousticItem],
    steps: u64,
    spec: &OptimizerSpec,
    batch_size: usize,
    seed: u64,
    finetune: bool,
    log_every: u64,
    on_checkpoint: &mut dyn FnMut(u64, &AcousticModel) -> Result<()>,
    checkpoint_every: u64,
) -> Result<TrainLog> {
    if items.is_empty() {
        return Err(Error::Validation("no training items".into()));
    }
    let bs = batch_size.clamp(1, items.len());
    let mut adam = spec.adam(finetune)?;
    let d = model.config().d_model;
    let initial = evaluate_loss(model, items, bs)?;
    let mut curve = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0;
    for step in 1..=steps {
        let mut picked = Vec::with_capacity(bs);
        while picked.len() < bs {
            if cursor == order.len() {
                order = (0..items.len()).collect();
                order.shuffle(&mut keyed_rng(seed, &format!("acoustic-epoch-{epoch}")));
                epoch += 1;
                cursor = 0;
            }
            picked.push(&items[order[cursor]]);
            cursor += 1;
        }
        let batch = model.batch(&picked)?;
        let mut ctx = Ctx::train(crate::util::derive_seed(seed, &format!("dropout-{step}")));
        let losses = model.forward_train(&batch, &mut ctx)?;
        let total = losses.total()?;
        let grads = total.backward()?;
        if step == 1 || step % log_every.max(1) == 0 || step == steps {
            let v = losses.values()?;
            if !v.total.is_finite() {
                return Err(Error::Numerical(format!("acoustic loss {} at step {step}", v.total)));
            }
            log::debug!("step {step}: loss {:.4}", v.total);
            curve.push((step, v));
        }
        adam.step(model.store(), &grads, lr_at(step, spec, d)?)?;
        if checkpoint_every > 0 && step % checkpoint_every == 0 && step < steps {
            on_checkpoint(step, model)?;
        }
    }
    Ok(TrainLog {
        steps,
        seed,
        items: items.len(),
        initial,
        final_: evaluate_loss(model, items, bs)?,
        curve,
    })
}

fn acoustic_training_items(
    run: &Run,
    corpus: &Corpus,
    vocab: &crate::acoustic::PhonemeVocab,
    history: usize,
    keep: impl Fn(&Utterance) -> bool,
) -> Result<Vec<AcousticItem>> {
    let feats = load_features(corpus, &feature_cache(run)?)?;
    let embedder = build_embedder(&run.config.embed, Some(run.path("embeddings")));
    acoustic_items(corpus, Some(&feats), vocab, &embedder, history, keep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticStageReport {
    pub checkpoint: ArtifactRecord,
    pub log: TrainLog,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<FinetuneInit>,
}

/// Trains the acoustic model from scratch on the pseudo-labelled corpus
/// (plus the labelled training split when `train.mix_high_quality`).
pub fn stage_pretrain(run: &mut Run) -> Result<AcousticStageReport> {
    let _lock = run.lock()?;
    let pseudo_rec = run.require(Stage::PseudoLabeled)?.clone();
    let (hq, hq_input) = corpus_input(run, HIGH_QUALITY)?;
    let pseudo = load_corpus(run.path(PSEUDO_MANIFEST))?;
    let cfg = run.config.clone();
    let vocab = build_vocab([&hq, &pseudo]);
    let history = cfg.acoustic.history;
    let mut items = acoustic_training_items(run, &pseudo, &vocab, history, |_| true)?;
    if cfg.train.mix_high_quality {
        items.extend(acoustic_training_items(run, &hq, &vocab, history, |u| {
            hq.split_of(&u.id) == Split::Train
        })?);
    }
    let stats = VarianceStats::from_targets(items.iter().filter_map(|i| i.targets.as_ref()));
    let init_seed = cfg.stage_seed("acoustic:init");
    let train_seed = cfg.stage_seed("acoustic:pretrain");
    let model = AcousticModel::new(cfg.acoustic.clone(), vocab, stats, init_seed, DType::F32)?;
    let ckpt = run.path(PRETRAIN_CKPT);
    let hash = run.config_hash.clone();
    let mut save = |step: u64, m: &AcousticModel| m.save(&ckpt, &hash, init_seed, step);
    log::info!("pre-training on {} utterances for {} steps", items.len(), cfg.train.pretrain_steps);
    let log = train_acoustic(
        &model,
        &items,
        cfg.train.pretrain_steps,
        &cfg.optimizer,
        cfg.train.batch_size,
        train_seed,
        false,
        cfg.train.log_every,
        &mut save,
        cfg.train.checkpoint_every,
    )?;
    model.save(&ckpt, &run.config_hash, init_seed, cfg.train.pretrain_steps)?;

    let mut rec = run.stage_record(
        Stage::Pretrained,
        [("acoustic:init".to_string(), init_seed), ("acoustic:pretrain".to_string(), train_seed)].into(),
    );
    rec.inputs.insert("pseudo_manifest".into(), pseudo_rec.artifacts["manifest"].clone());
    rec.inputs.insert("high_quality_manifest".into(), hq_input);
    let checkpoint = run.artifact(PRETRAIN_CKPT)?;
    rec.artifacts.insert("checkpoint".into(), checkpoint.clone());
    rec.artifacts
        .insert("log".into(), json_artifact(run, "acoustic/pretrain_log.json", &log)?);
    run.record(rec)?;
    Ok(AcousticStageReport {
        checkpoint,
        log,
        init: None,
    })
}

/// State of the model at the start of fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneInit {
    pub decoder_seed: u64,
    /// Content hash per group before and after the decoder reset.
    pub hashes_before: BTreeMap<String, String>,
    pub hashes_after: BTreeMap<String, String>,
    /// Learning-rate multiplier per group.
    pub multipliers: BTreeMap<String, f64>,
}

/// Resets the decoder from `decoder_seed`, leaving every other group untouched.
pub fn finetune_init(model: &mut AcousticModel, spec: &OptimizerSpec, decoder_seed: u64) -> Result<FinetuneInit> {
    let groups = model.store().groups();
    if !groups.contains("decoder") {
        return Err(Error::Checkpoint("model has no decoder parameter group".into()));
    }
    let hashes = |m: &AcousticModel| -> Result<BTreeMap<String, String>> {
        PARAM_GROUPS
            .iter()
            .map(|g| Ok((g.to_string(), m.store().content_hash(Some(g))?)))
            .collect()
    };
    let hashes_before = hashes(model)?;
    model.reinit_group("decoder", decoder_seed)?;
    let hashes_after = hashes(model)?;
    Ok(FinetuneInit {
        decoder_seed,
        hashes_before,
        hashes_after,
        multipliers: spec.adam(true)?.group_report(model.store()),
    })
}

/// Fine-tunes the pre-trained model on the labelled training split of the
/// high-quality corpus with a freshly initialized decoder.
pub fn stage_finetune(run: &mut Run) -> Result<AcousticStageReport> {
    let _lock = run.lock()?;
    let pre = run.require(Stage::Pretrained)?.clone();
    let (hq, hq_input) = corpus_input(run, HIGH_QUALITY)?;
    let (mut model, _) = AcousticModel::load(&run.path(PRETRAIN_CKPT), Some(&pre.config_hash))?;
    let cfg = run.config.clone();
    let decoder_seed = cfg.stage_seed("acoustic:decoder");
    let train_seed = cfg.stage_seed("acoustic:finetune");
    let init = finetune_init(&mut model, &cfg.optimizer, decoder_seed)?;
    json_artifact(run, "acoustic/finetune_init.json", &init)?;
    let vocab = model.vocab().clone();
    let items = acoustic_training_items(run, &hq, &vocab, model.config().history, |u| {
        hq.split_of(&u.id) == Split::Train
    })?;
    let ckpt = run.path(FINETUNE_CKPT);
    let hash = run.config_hash.clone();
    let mut save = |step: u64, m: &AcousticModel| m.save(&ckpt, &hash, train_seed, step);
    log::info!("fine-tuning on {} utterances for {} steps", items.len(), cfg.train.finetune_steps);
    let log = train_acoustic(
        &model,
        &items,
        cfg.train.finetune_steps,
        &cfg.optimizer,
        cfg.train.batch_size,
        train_seed,
        true,
        cfg.train.log_every,
        &mut save,
        cfg.train.checkpoint_every,
    )?;
    model.save(&ckpt, &run.config_hash, train_seed, cfg.train.finetune_steps)?;

    let mut rec = run.stage_record(
        Stage::Finetuned,
        [("acoustic:decoder".to_string(), decoder_seed), ("acoustic:finetune".to_string(), train_seed)].into(),
    );
    rec.inputs.insert("pretrain_checkpoint".into(), pre.artifacts["checkpoint"].clone());
    rec.inputs.insert("high_quality_manifest".into(), hq_input);
    let checkpoint = run.artifact(FINETUNE_CKPT)?;
    rec.artifacts.insert("checkpoint".into(), checkpoint.clone());
    rec.artifacts.insert("init".into(), run.artifact("acoustic/finetune_init.json")?);
    rec.artifacts
        .insert("log".into(), json_artifact(run, "acoustic/finetune_log.json", &log)?);
    run.record(rec)?;
    Ok(AcousticStageReport {
        checkpoint,
        log,
        init: Some(init),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub input_type: InputType,
    pub behavior: Behavior,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// P/R/F1 of the speech-only and text+speech detectors for both behaviors
/// on the labelled test split of the high-quality corpus.
pub fn evaluate_detectors(run: &Run) -> Result<Vec<EvaluationRow>> {
    run.require(Stage::DetectorsTrained)?;
    let (hq, _) = corpus_input(run, HIGH_QUALITY)?;
    let feats = load_features(&hq, &feature_cache(run)?)?;
    let mut rows = Vec::with_capacity(4);
    for input_type in [InputType::Speech, InputType::TextSpeech] {
        for behavior in Behavior::ALL {
            let (det, _) = load_detector(run, behavior, input_type)?;
            let test = detector_examples(&hq, &feats, behavior, |u| {
                hq.split_of(&u.id) == Split::Test && u.char_labels.is_some()
            })?;
            if test.is_empty() {
                return Err(Error::Precondition("the high-quality corpus has no labelled test split".into()));
            }
            let m = score_and_evaluate(&det, &test, run.config.detector.threshold(behavior))?;
            rows.push(EvaluationRow {
                input_type,
                behavior,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                tp: m.tp,
                fp: m.fp,
                fn_: m.fn_,
            });
        }
    }
    Ok(rows)
}
