//! Character-level detectors for filled pauses and prolongations.
//!
//! A mel-spectrogram is downsampled by a strided CNN, summed into one vector
//! per character over the character's aligned frames, optionally
//! concatenated with a character embedding, and scored by a BLSTM with a
//! 2-way softmax head. One detector is trained per behavior.

mod metrics;

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::corpus::Utterance;
use crate::features::{char_spans_from_durations, reconcile_durations, CharSpans, MelSpectrogram};
use crate::labels::BehaviorFlags;
use crate::nn::{
    load_checkpoint, mask_rows, pad_ids, save_checkpoint, softmax_last, Adam, AdamConfig, Blstm, Conv1d,
    Embedding, Linear, PadMode, ParamStore,
};
use crate::util::keyed_rng;

pub use metrics::{evaluate_detector, f1_from_pr, threshold_decisions, DetectorMetrics, MetricsRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    FilledPause,
    Prolongation,
}

impl Behavior {
    pub const ALL: [Behavior; 2] = [Behavior::FilledPause, Behavior::Prolongation];

    pub fn present_in(self, flags: BehaviorFlags) -> bool {
        match self {
            Behavior::FilledPause => flags.filled_pause,
            Behavior::Prolongation => flags.prolongation,
        }
    }

    /// Decision threshold used for pseudo-labelling.
    pub fn default_threshold(self) -> f64 {
        match self {
            Behavior::FilledPause => 0.85,
            Behavior::Prolongation => 0.95,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Behavior::FilledPause => "filled_pause",
            Behavior::Prolongation => "prolongation",
        }
    }
}

/// Which modalities reach the recurrent scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputType {
    /// Pooled acoustic features only.
    #[serde(rename = "speech")]
    Speech,
    /// Pooled acoustic features concatenated with the character embedding.
    #[serde(rename = "text+speech")]
    TextSpeech,
    /// Character embedding with the acoustic part zeroed.
    #[serde(rename = "text")]
    Text,
}

impl InputType {
    pub fn as_str(self) -> &'static str {
        match self {
            InputType::Speech => "speech",
            InputType::TextSpeech => "text+speech",
            InputType::Text => "text",
        }
    }

    fn uses_text(self) -> bool {
        !matches!(self, InputType::Speech)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub behavior: Behavior,
    pub input_type: InputType,
    pub threshold: f64,
    pub cnn_layers: usize,
    pub cnn_channels: usize,
    pub cnn_kernel: usize,
    pub cnn_stride: usize,
    pub hidden: usize,
    pub char_embedding_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Inverse-frequency class weights in the cross-entropy.
    pub class_weighting: bool,
    pub n_mels: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::for_behavior(Behavior::FilledPause)
    }
}

impl DetectorConfig {
    pub fn for_behavior(behavior: Behavior) -> Self {
        Self {
            behavior,
            input_type: InputType::TextSpeech,
            threshold: behavior.default_threshold(),
            cnn_layers: 2,
            cnn_channels: 32,
            cnn_kernel: 3,
            cnn_stride: 2,
            hidden: 128,
            char_embedding_dim: 64,
            epochs: 50,
            batch_size: 16,
            learning_rate: 2e-3,
            class_weighting: true,
            n_mels: 80,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} not in (0, 1)", self.threshold)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        let sizes = [
            self.cnn_layers,
            self.cnn_channels,
            self.cnn_kernel,
            self.cnn_stride,
            self.hidden,
            self.char_embedding_dim,
            self.batch_size,
            self.n_mels,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config("detector sizes must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn stride_product(&self) -> usize {
        self.cnn_stride.pow(self.cnn_layers as u32)
    }

    pub fn cnn_padding(&self) -> usize {
        self.cnn_kernel / 2
    }
}

/// Per-character positive-class posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorScores(pub Vec<f64>);

/// Character inventory of the detector's embedding table. Id 0 pads, id 1
/// stands for characters unseen in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharVocab {
    pub chars: Vec<String>,
}

impl CharVocab {
    pub const PAD: u32 = 0;
    pub const UNK: u32 = 1;

    pub fn build<'a>(chars: impl IntoIterator<Item = &'a String>) -> Self {
        let mut set: Vec<String> = chars.into_iter().cloned().collect();
        set.sort();
        set.dedup();
        Self { chars: set }
    }

    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: &str) -> u32 {
        match self.chars.binary_search_by(|x| x.as_str().cmp(c)) {
            Ok(i) => i as u32 + 2,
            Err(_) => Self::UNK,
        }
    }

    pub fn encode(&self, chars: &[String]) -> Vec<u32> {
        chars.iter().map(|c| self.id(c)).collect()
    }
}

/// One utterance prepared for a detector.
#[derive(Debug, Clone)]
pub struct DetectorExample {
    pub utt_id: String,
    /// `T x n_mels` log-mel frames.
    pub mel: Array2<f32>,
    /// Frame span of each character at the mel rate.
    pub spans: CharSpans,
    pub chars: Vec<String>,
    /// Reference decisions for the detector's behavior, when labelled.
    pub labels: Option<Vec<bool>>,
}

impl DetectorExample {
    /// Builds an example from an utterance, its mel and its phoneme
    /// durations. Durations are reconciled to the mel length first.
    pub fn build(utt: &Utterance, mel: &MelSpectrogram, durations: &[usize], behavior: Behavior) -> Result<Self> {
        let mut durations = durations.to_vec();
        if durations.len() != utt.phonemes.len() {
            return Err(Error::Shape(format!(
                "{}: {} durations for {} phonemes",
                utt.id,
                durations.len(),
                utt.phonemes.len()
            )));
        }
        reconcile_durations(&mut durations, mel.num_frames())?;
        Ok(Self {
            utt_id: utt.id.clone(),
            mel: mel.frames.clone(),
            spans: char_spans_from_durations(&durations, &utt.grouping)?,
            chars: utt.chars.clone(),
            labels: utt.char_labels.as_ref().map(|l| l.behavior_mask(behavior)),
        })
    }

    pub fn validate(&self, n_mels: usize) -> Result<()> {
        if self.mel.ncols() != n_mels {
            return Err(Error::Shape(format!("{}: mel has {} bands, expected {n_mels}", self.utt_id, self.mel.ncols())));
        }
        if self.mel.nrows() == 0 {
            return Err(Error::Shape(format!("{}: empty mel", self.utt_id)));
        }
        if self.spans.len() != self.chars.len() {
            return Err(Error::Shape(format!(
                "{}: {} spans for {} characters",
                self.utt_id,
                self.spans.len(),
                self.chars.len()
            )));
        }
        if let Some((s, e)) = self.spans.0.iter().find(|(s, e)| s > e || *e > self.mel.nrows()) {
            return Err(Error::Shape(format!(
                "{}: span ({s}, {e}) out of bounds for {} frames",
                self.utt_id,
                self.mel.nrows()
            )));
        }
        if let Some(l) = &self.labels {
            if l.len() != self.chars.len() {
                return Err(Error::Shape(format!("{}: {} labels for {} characters", self.utt_id, l.len(), self.chars.len())));
            }
        }
        Ok(())
    }
}

/// Per-bin mel statistics used to standardize detector input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl MelStats {
    pub fn identity(n_mels: usize) -> Self {
        Self {
            mean: vec![0.0; n_mels],
            std: vec![1.0; n_mels],
        }
    }

    pub fn from_examples(examples: &[DetectorExample], n_mels: usize) -> Self {
        let mut sum = vec![0.0f64; n_mels];
        let mut sq = vec![0.0f64; n_mels];
        let mut n = 0usize;
        for ex in examples {
            for row in ex.mel.rows() {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v as f64;
                    sq[j] += (v as f64).powi(2);
                }
                n += 1;
            }
        }
        if n == 0 {
            return Self::identity(n_mels);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| ((s / n as f64 - m * m).max(0.0).sqrt().max(1e-3)) as f32)
            .collect();
        Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DetectorMeta {
    config: DetectorConfig,
    vocab: CharVocab,
    mel_stats: MelStats,
}

pub struct Detector {
    cfg: DetectorConfig,
    vocab: CharVocab,
    mel_stats: MelStats,
    store: ParamStore,
    convs: Vec<Conv1d>,
    char_emb: Option<Embedding>,
    rnn: Blstm,
    head: Linear,
}

impl Detector {
    pub fn new(cfg: DetectorConfig, vocab: CharVocab, mel_stats: MelStats, seed: u64, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        if mel_stats.mean.len() != cfg.n_mels || mel_stats.std.len() != cfg.n_mels {
            return Err(Error::Shape("mel statistics do not match n_mels".into()));
        }
        let mut store = ParamStore::new(dtype, seed);
        let mut convs = Vec::with_capacity(cfg.cnn_layers);
        let mut c_in = cfg.n_mels;
        for l in 0..cfg.cnn_layers {
            convs.push(Conv1d::new(
                &mut store,
                &format!("cnn.{l}"),
                c_in,
                cfg.cnn_channels,
                cfg.cnn_kernel,
                cfg.cnn_stride,
                cfg.cnn_padding(),
                PadMode::Replicate,
            )?);
            c_in = cfg.cnn_channels;
        }
        let char_emb = if cfg.input_type.uses_text() {
            Some(Embedding::new(&mut store, "char_embedding", vocab.len(), cfg.char_embedding_dim)?)
        } else {
            None
        };
        let rnn_in = cfg.cnn_channels + if char_emb.is_some() { cfg.char_embedding_dim } else { 0 };
        let rnn = Blstm::new(&mut store, "blstm", rnn_in, cfg.hidden)?;
        let head = Linear::new(&mut store, "head", 2 * cfg.hidden, 2, true)?;
        Ok(Self {
            cfg,
            vocab,
            mel_stats,
            store,
            convs,
            char_emb,
            rnn,
            head,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &CharVocab {
        &self.vocab
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    fn device(&self) -> &Device {
        self.store.device()
    }

    /// `B x T x n_mels` standardized mel tensor, right-padded by repeating the last frame.
    fn mel_batch(&self, mels: &[&Array2<f32>]) -> Result<Tensor> {
        let t_max = mels.iter().map(|m| m.nrows()).max().unwrap_or(1);
        let n = self.cfg.n_mels;
        let mut data = Vec::with_capacity(mels.len() * t_max * n);
        for m in mels {
            for t in 0..t_max {
                let row = m.row(t.min(m.nrows() - 1));
                for (j, &v) in row.iter().enumerate() {
                    data.push(((v - self.mel_stats.mean[j]) / self.mel_stats.std[j]) as f64);
                }
            }
        }
        Ok(Tensor::from_vec(data, (mels.len(), t_max, n), self.device())?.to_dtype(self.store.dtype())?)
    }

    /// CNN stack over `B x T x n_mels`, ReLU after each layer. Output length
    /// is the per-layer strided length; a constant input yields a constant output.
    pub fn downsample_acoustic(&self, mel: &Tensor) -> Result<Tensor> {
        let mut x = mel.clone();
        for conv in &self.convs {
            x = conv.forward(&x)?.relu()?;
        }
        Ok(x)
    }

    /// Downsampled length for `t` mel frames.
    pub fn downsampled_len(&self, t: usize) -> usize {
        self.convs.iter().fold(t, |len, c| c.output_len(len).max(1))
    }

    /// Character spans on the downsampled axis.
    pub fn scale_spans(&self, spans: &CharSpans, frames: usize) -> CharSpans {
        spans.rescale(self.cfg.stride_product(), self.downsampled_len(frames))
    }

    /// Scores a padded batch, returning logits `B x N x 2`.
    fn logits(&self, examples: &[&DetectorExample]) -> Result<(Tensor, Tensor)> {
        let mels: Vec<&Array2<f32>> = examples.iter().map(|e| &e.mel).collect();
        let feats = self.downsample_acoustic(&self.mel_batch(&mels)?)?;
        let spans: Vec<CharSpans> = examples
            .iter()
            .map(|e| self.scale_spans(&e.spans, e.mel.nrows()))
            .collect();
        let n_max = examples.iter().map(|e| e.chars.len()).max().unwrap_or(1).max(1);
        let char_feats = pool_to_chars(&feats, &spans, n_max)?;
        let lengths: Vec<usize> = examples.iter().map(|e| e.chars.len()).collect();
        let mask = crate::nn::length_mask(&lengths, n_max, self.store.dtype(), self.device())?;
        let ids: Vec<Vec<u32>> = examples.iter().map(|e| self.vocab.encode(&e.chars)).collect();
        let (ids, _) = pad_ids(&ids, CharVocab::PAD, self.device())?;
        let ids = ids.narrow(1, 0, n_max)?;
        Ok((self.score_logits(&char_feats, &ids, &mask)?, mask))
    }

    /// BLSTM + linear head over per-character features (`B x N x C`) and ids
    /// (`B x N`); returns logits `B x N x 2`, zero at masked characters.
    pub fn score_logits(&self, char_feats: &Tensor, char_ids: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, n, _) = char_feats.dims3()?;
        if char_ids.dims() != [b, n] {
            return Err(Error::Shape(format!(
                "{:?} character ids for {b} x {n} character features",
                char_ids.dims()
            )));
        }
        let acoustic = match self.cfg.input_type {
            InputType::Text => char_feats.zeros_like()?,
            _ => char_feats.clone(),
        };
        let x = match &self.char_emb {
            Some(emb) => Tensor::cat(&[&acoustic, &emb.forward(char_ids)?], D::Minus1)?,
            None => acoustic,
        };
        let h = self.rnn.forward(&x, mask)?;
        mask_rows(&self.head.forward(&h)?, mask)
    }

    /// Per-character positive-class posterior for one utterance.
    pub fn score(&self, example: &DetectorExample) -> Result<DetectorScores> {
        example.validate(self.cfg.n_mels)?;
        let (logits, _) = self.logits(&[example])?;
        let p = softmax_last(&logits.to_dtype(DType::F64)?)?;
        let pos = p.narrow(D::Minus1, 1, 1)?.flatten_all()?.to_vec1::<f64>()?;
        Ok(DetectorScores(pos[..example.chars.len()].to_vec()))
    }

    /// Both softmax columns `(negative, positive)` per character.
    pub fn posteriors(&self, example: &DetectorExample) -> Result<Vec<(f64, f64)>> {
        example.validate(self.cfg.n_mels)?;
        let (logits, _) = self.logits(&[example])?;
        let p = softmax_last(&logits.to_dtype(DType::F64)?)?.squeeze(0)?.to_vec2::<f64>()?;
        Ok(p.into_iter().take(example.chars.len()).map(|r| (r[0], r[1])).collect())
    }

    /// Weighted-mean cross-entropy over unmasked characters of a batch.
    pub fn loss(&self, examples: &[&DetectorExample], class_weights: [f64; 2]) -> Result<Tensor> {
        let (logits, mask) = self.logits(examples)?;
        let n_max = logits.dim(1)?;
        let mut target = Vec::with_capacity(examples.len() * n_max * 2);
        for e in examples {
            let labels = e
                .labels
                .as_ref()
                .ok_or_else(|| Error::Validation(format!("{}: no labels", e.utt_id)))?;
            for k in 0..n_max {
                match labels.get(k) {
                    Some(&y) => {
                        let w = class_weights[y as usize];
                        target.extend(if y { [0.0, w] } else { [w, 0.0] });
                    }
                    None => target.extend_from_slice(&[0.0, 0.0]),
                }
            }
        }
        let target = Tensor::from_vec(target, (examples.len(), n_max, 2), self.device())?.to_dtype(self.store.dtype())?;
        weighted_cross_entropy(&logits, &target, &mask)
    }

    pub fn save(&self, path: &Path, config_hash: &str, seed: u64, step: u64) -> Result<()> {
        let meta = DetectorMeta {
            config: self.cfg.clone(),
            vocab: self.vocab.clone(),
            mel_stats: self.mel_stats.clone(),
        };
        save_checkpoint(path, &self.store, "detector", config_hash, seed, step, serde_json::to_value(meta)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        if ck.header.kind != "detector" {
            return Err(Error::Checkpoint(format!("{} is a '{}' checkpoint, not a detector", path.display(), ck.header.kind)));
        }
        let meta: DetectorMeta = serde_json::from_value(ck.header.meta.clone())?;
        let dtype = if ck.header.dtype == "f64" { DType::F64 } else { DType::F32 };
        let det = Self::new(meta.config, meta.vocab, meta.mel_stats, ck.header.seed, dtype)?;
        det.store.load_host(&ck.values)?;
        Ok(det)
    }
}

/// Sums frame features `B x L x C` over each character span, giving
/// `B x n_max x C`; characters past an utterance's span count are zero.
pub fn pool_to_chars(feats: &Tensor, spans: &[CharSpans], n_max: usize) -> Result<Tensor> {
    let (b, l, _) = feats.dims3()?;
    if spans.len() != b {
        return Err(Error::Shape(format!("{} span lists for a batch of {b}", spans.len())));
    }
    let mut assign = vec![0.0f64; b * n_max * l];
    for (bi, s) in spans.iter().enumerate() {
        if s.len() > n_max {
            return Err(Error::Shape(format!("{} characters exceed n_max {n_max}", s.len())));
        }
        for (k, &(start, end)) in s.0.iter().enumerate() {
            if start > end || end > l {
                return Err(Error::Shape(format!("span ({start}, {end}) out of bounds for {l} steps")));
            }
            for t in start..end {
                assign[(bi * n_max + k) * l + t] = 1.0;
            }
        }
    }
    let a = Tensor::from_vec(assign, (b, n_max, l), feats.device())?.to_dtype(feats.dtype())?;
    Ok(a.matmul(&feats.contiguous()?)?)
}

/// `sum(target * -log_softmax(logits)) / sum(target)` over unmasked rows,
/// where `target` carries the class weight at the true class.
pub fn weighted_cross_entropy(logits: &Tensor, target: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let m = logits.max_keepdim(D::Minus1)?.detach();
    let shifted = logits.broadcast_sub(&m)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    let logp = shifted.broadcast_sub(&lse)?;
    let target = mask_rows(target, mask)?;
    let total = target.sum_all()?;
    Ok(logp.mul(&target)?.sum_all()?.neg()?.div(&total)?)
}

/// `w_c = N / (2 N_c)`; classes absent from the data get weight 1.
pub fn class_weights(examples: &[DetectorExample]) -> [f64; 2] {
    let mut counts = [0usize; 2];
    for e in examples {
        for &y in e.labels.iter().flatten() {
            counts[y as usize] += 1;
        }
    }
    let n = (counts[0] + counts[1]) as f64;
    counts.map(|c| if c == 0 { 1.0 } else { n / (2.0 * c as f64) })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epoch_losses: Vec<f64>,
    pub class_weights: [f64; 2],
    pub steps: u64,
}

/// Trains a detector on labelled examples. Deterministic given `seed`.
pub fn train_detector(examples: &[DetectorExample], cfg: &DetectorConfig, seed: u64) -> Result<(Detector, TrainingLog)> {
    cfg.validate()?;
    let labelled: Vec<&DetectorExample> = examples.iter().filter(|e| e.labels.is_some()).collect();
    if labelled.is_empty() {
        return Err(Error::Validation("no labelled utterances for detector training".into()));
    }
    for e in &labelled {
        e.validate(cfg.n_mels)?;
    }
    let owned: Vec<DetectorExample> = labelled.iter().map(|e| (*e).clone()).collect();
    let vocab = CharVocab::build(owned.iter().flat_map(|e| e.chars.iter()));
    let stats = MelStats::from_examples(&owned, cfg.n_mels);
    let det = Detector::new(cfg.clone(), vocab, stats, seed, DType::F32)?;
    let weights = if cfg.class_weighting { class_weights(&owned) } else { [1.0, 1.0] };
    let mut opt = Adam::new(AdamConfig {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        clip_norm: Some(5.0),
    });
    let mut order: Vec<usize> = (0..owned.len()).collect();
    let mut log = TrainingLog {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        class_weights: weights,
        steps: 0,
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut keyed_rng(seed, &format!("detector-epoch-{epoch}")));
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&DetectorExample> = chunk.iter().map(|&i| &owned[i]).collect();
            let loss = det.loss(&batch, weights)?;
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::Numerical(format!("detector loss {value} at epoch {epoch}")));
            }
            let grads = loss.backward()?;
            opt.step(&det.store, &grads, cfg.learning_rate)?;
            sum += value;
            batches += 1;
        }
        log.steps = opt.steps_taken();
        log.epoch_losses.push(sum / batches as f64);
    }
    Ok((det, log))
}

/// Scores, thresholds and evaluates a detector on labelled examples.
pub fn evaluate_on(det: &Detector, examples: &[DetectorExample]) -> Result<DetectorMetrics> {
    let mut decisions = Vec::new();
    let mut refs = Vec::new();
    for e in examples {
        let labels = e
            .labels
            .clone()
            .ok_or_else(|| Error::Validation(format!("{}: no reference labels", e.utt_id)))?;
        decisions.push(threshold_decisions(&det.score(e)?, det.cfg.threshold)?);
        refs.push(labels);
    }
    evaluate_detector(&decisions, &refs)
}

/// Character-level accuracy of thresholded decisions against references.
pub fn accuracy(det: &Detector, examples: &[DetectorExample]) -> Result<f64> {
    let mut hit = 0usize;
    let mut n = 0usize;
    for e in examples {
        let d = threshold_decisions(&det.score(e)?, det.cfg.threshold)?;
        for (a, b) in d.iter().zip(e.labels.iter().flatten()) {
            hit += (a == b) as usize;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { hit as f64 / n as f64 })
}

/// Positive-rate summary per behavior, keyed by behavior name.
pub fn positive_rates(decisions: &BTreeMap<Behavior, Vec<Vec<bool>>>) -> BTreeMap<String, f64> {
    decisions
        .iter()
        .map(|(b, d)| {
            let n: usize = d.iter().map(Vec::len).sum();
            let p: usize = d.iter().flatten().filter(|&&x| x).count();
            (b.as_str().to_string(), if n == 0 { 0.0 } else { p as f64 / n as f64 })
        })
        .collect()
}
