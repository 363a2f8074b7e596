use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    bucketize, AcousticConfig, AcousticItem, AcousticMeta, LabelHead, PhonemeVocab, VarianceStats, PARAM_GROUPS,
};
use crate::corpus::EMBEDDING_DIM;
use crate::error::{Error, Result};
use crate::labels::{char_labels_from_final_phonemes, expand_char_to_phoneme, CharLabelSeq, LabelClass, PhonemeLabelSeq};
use crate::nn::{
    length_mask, load_checkpoint, mask_rows, pad_ids, positional_encoding, save_checkpoint, softmax_last, Ctx,
    Embedding, FftBlock, Gru, Linear, MultiHeadAttention, ParamStore, VariancePredictor,
};

struct PhonemeEncoder {
    embedding: Embedding,
    blocks: Vec<FftBlock>,
}

impl PhonemeEncoder {
    fn new(store: &mut ParamStore, name: &str, cfg: &AcousticConfig, vocab: usize) -> Result<Self> {
        let blocks = (0..cfg.encoder_layers)
            .map(|l| {
                FftBlock::new(
                    store,
                    &format!("{name}.block{l}"),
                    cfg.d_model,
                    cfg.heads,
                    cfg.ffn_filter,
                    cfg.ffn_kernel,
                    cfg.dropout,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            embedding: Embedding::new(store, &format!("{name}.embedding"), vocab, cfg.d_model)?,
            blocks,
        })
    }

    fn forward(&self, ids: &Tensor, mask: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let e = self.embedding.forward(ids)?;
        let (_, t, d) = e.dims3()?;
        let pe = positional_encoding(t, d, e.dtype(), e.device())?;
        let mut x = mask_rows(&e.broadcast_add(&pe)?, mask)?;
        for b in &self.blocks {
            x = b.forward(&x, mask, ctx)?;
        }
        Ok(x)
    }
}

/// Padded tensors for a batch of items. Targets are present only when every
/// item carries them.
pub struct Batch {
    pub ids: Tensor,
    pub mask: Tensor,
    pub lengths: Vec<usize>,
    pub conv_ids: Tensor,
    pub conv_mask: Tensor,
    pub history: Tensor,
    pub targets: Option<BatchTargets>,
}

pub struct BatchTargets {
    pub mel: Tensor,
    pub frame_mask: Tensor,
    pub durations: Vec<Vec<usize>>,
    pub log_durations: Tensor,
    pub pitch: Tensor,
    pub energy: Tensor,
    pub pitch_buckets: Tensor,
    pub energy_buckets: Tensor,
    pub label_ids: Tensor,
    pub label_values: Tensor,
}

/// Scalar loss tensors; the total is their plain sum.
pub struct LossComponents {
    pub mel: Tensor,
    pub duration: Tensor,
    pub pitch: Tensor,
    pub energy: Tensor,
    pub label: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub mel: f64,
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
    pub label: f64,
    pub total: f64,
}

impl LossComponents {
    pub fn total(&self) -> Result<Tensor> {
        Ok(self
            .mel
            .add(&self.duration)?
            .add(&self.pitch)?
            .add(&self.energy)?
            .add(&self.label)?)
    }

    pub fn values(&self) -> Result<LossValues> {
        let f = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
        Ok(LossValues {
            mel: f(&self.mel)?,
            duration: f(&self.duration)?,
            pitch: f(&self.pitch)?,
            energy: f(&self.energy)?,
            label: f(&self.label)?,
            total: f(&self.total()?)?,
        })
    }
}

pub struct VarianceOutput {
    /// `B x T x d`, zero past each item's frame count.
    pub expanded: Tensor,
    pub frame_mask: Tensor,
    pub frame_lengths: Vec<usize>,
    pub log_duration: Tensor,
    pub pitch: Tensor,
    pub energy: Tensor,
    /// Durations used for expansion (targets in training, predictions otherwise).
    pub durations: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppliedLabelSource {
    Explicit,
    Predicted,
}

pub struct SynthesisInput<'a> {
    pub item: &'a AcousticItem,
    pub labels: Option<&'a CharLabelSeq>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOutput {
    /// `T x n_mels` log-mel frames.
    pub mel: Array2<f32>,
    pub durations: Vec<usize>,
    pub label_estimates: Vec<f64>,
    pub applied_phoneme_labels: PhonemeLabelSeq,
    pub applied_char_labels: CharLabelSeq,
    pub label_source: AppliedLabelSource,
}

/// Repeats row `k` of each item `durations[k]` times, in order. Output is
/// `B x max(sum) x d` with rows past an item's total zeroed.
pub fn length_regulate(h: &Tensor, durations: &[Vec<usize>]) -> Result<(Tensor, Vec<usize>)> {
    let (b, n, d) = h.dims3()?;
    if durations.len() != b {
        return Err(Error::Shape(format!("{} duration lists for a batch of {b}", durations.len())));
    }
    if let Some(dur) = durations.iter().find(|dur| dur.len() > n) {
        return Err(Error::Shape(format!("{} durations for {n} phoneme rows", dur.len())));
    }
    let lengths: Vec<usize> = durations.iter().map(|dur| dur.iter().sum()).collect();
    let t_max = lengths.iter().copied().max().unwrap_or(0).max(1);
    let mut idx: Vec<u32> = Vec::with_capacity(b * t_max);
    for (i, dur) in durations.iter().enumerate() {
        let start = idx.len();
        for (k, &c) in dur.iter().enumerate() {
            idx.extend(std::iter::repeat_n((i * n + k) as u32, c));
        }
        idx.resize(start + t_max, (i * n) as u32);
    }
    let flat = h.contiguous()?.reshape((b * n, d))?;
    let idx = Tensor::from_vec(idx, b * t_max, h.device())?;
    let out = flat.index_select(&idx, 0)?.reshape((b, t_max, d))?;
    let mask = length_mask(&lengths, t_max, h.dtype(), h.device())?;
    Ok((mask_rows(&out, &mask)?, lengths))
}

fn masked_mean(x: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let denom = mask.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?.max(1.0);
    Ok((x.mul(mask)?.sum_all()? / denom)?)
}

fn float_tensor(data: Vec<f64>, shape: (usize, usize), dtype: DType, dev: &Device) -> Result<Tensor> {
    Ok(Tensor::from_vec(data, shape, dev)?.to_dtype(dtype)?)
}

pub struct AcousticModel {
    cfg: AcousticConfig,
    vocab: PhonemeVocab,
    stats: VarianceStats,
    reinit_seeds: BTreeMap<String, u64>,
    store: ParamStore,
    encoder: PhonemeEncoder,
    history_gru: Gru,
    history_proj: Linear,
    conversation: PhonemeEncoder,
    cross_attention: MultiHeadAttention,
    label_predictor: VariancePredictor,
    label_embedding: Embedding,
    duration: VariancePredictor,
    pitch: VariancePredictor,
    energy: VariancePredictor,
    pitch_embedding: Embedding,
    energy_embedding: Embedding,
    decoder: Vec<FftBlock>,
    mel_head: Linear,
}

impl AcousticModel {
    pub fn new(cfg: AcousticConfig, vocab: PhonemeVocab, stats: VarianceStats, seed: u64, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(dtype, seed);
        let s = &mut store;
        let d = cfg.d_model;
        let vp = |s: &mut ParamStore, name: &str, out: usize| {
            VariancePredictor::new(s, name, d, cfg.variance_filter, cfg.variance_kernel, out, cfg.variance_dropout)
        };
        let label_out = match cfg.label_head {
            LabelHead::Regression => 1,
            LabelHead::Classification => 4,
        };
        let encoder = PhonemeEncoder::new(s, "encoder", &cfg, vocab.len())?;
        let history_gru = Gru::new(s, "history_encoder.gru", EMBEDDING_DIM, cfg.history_hidden)?;
        let history_proj = Linear::new(s, "history_encoder.proj", cfg.history_hidden, d, true)?;
        let conversation = PhonemeEncoder::new(s, "linguistic_encoder", &cfg, vocab.len())?;
        let cross_attention = MultiHeadAttention::new(s, "linguistic_encoder.cross", d, cfg.heads)?;
        let label_predictor = vp(s, "label_predictor", label_out)?;
        let label_embedding = Embedding::new(s, "label_embedding", LabelClass::ALL.len(), d)?;
        let duration = vp(s, "variance_adaptor.duration", 1)?;
        let pitch = vp(s, "variance_adaptor.pitch", 1)?;
        let energy = vp(s, "variance_adaptor.energy", 1)?;
        let pitch_embedding = Embedding::new(s, "variance_adaptor.pitch_embedding", cfg.pitch_bins, d)?;
        let energy_embedding = Embedding::new(s, "variance_adaptor.energy_embedding", cfg.energy_bins, d)?;
        let decoder = (0..cfg.decoder_layers)
            .map(|l| {
                FftBlock::new(s, &format!("decoder.block{l}"), d, cfg.heads, cfg.ffn_filter, cfg.ffn_kernel, cfg.dropout)
            })
            .collect::<Result<_>>()?;
        let mel_head = Linear::new(s, "decoder.mel", d, cfg.n_mels, true)?;
        Ok(Self {
            cfg,
            vocab,
            stats,
            reinit_seeds: BTreeMap::new(),
            store,
            encoder,
            history_gru,
            history_proj,
            conversation,
            cross_attention,
            label_predictor,
            label_embedding,
            duration,
            pitch,
            energy,
            pitch_embedding,
            energy_embedding,
            decoder,
            mel_head,
        })
    }

    pub fn config(&self) -> &AcousticConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &PhonemeVocab {
        &self.vocab
    }

    pub fn stats(&self) -> &VarianceStats {
        &self.stats
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn reinit_seeds(&self) -> &BTreeMap<String, u64> {
        &self.reinit_seeds
    }

    /// Redraws every parameter of `group` from `seed`, recording the seed.
    pub fn reinit_group(&mut self, group: &str, seed: u64) -> Result<()> {
        if !PARAM_GROUPS.contains(&group) {
            return Err(Error::Config(format!("unknown parameter group '{group}'")));
        }
        self.store.reinit_group(group, seed)?;
        self.reinit_seeds.insert(group.to_string(), seed);
        Ok(())
    }

    fn dtype(&self) -> DType {
        self.store.dtype()
    }

    fn device(&self) -> &Device {
        self.store.device()
    }

    /// `ids` `B x N` → `B x N x d`; padded rows are zero.
    pub fn encode_phonemes(&self, ids: &Tensor, mask: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        self.encoder.forward(ids, mask, ctx)
    }

    /// `window` `B x (history+1) x 512`, oldest first → context vector `B x d`.
    pub fn encode_history(&self, window: &Tensor) -> Result<Tensor> {
        let (_, w, e) = window.dims3()?;
        if w != self.cfg.window() || e != EMBEDDING_DIM {
            return Err(Error::Shape(format!(
                "history window is {w} x {e}, expected {} x {EMBEDDING_DIM}",
                self.cfg.window()
            )));
        }
        self.history_proj.forward(&self.history_gru.final_state(window)?)
    }

    /// CLS-prefixed conversation ids `B x M` → `B x M x d`.
    pub fn encode_conversation(&self, ids: &Tensor, mask: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let first = ids.narrow(1, 0, 1)?.flatten_all()?.to_vec1::<u32>()?;
        if first.iter().any(|&i| i != PhonemeVocab::CLS) {
            return Err(Error::Validation("conversation sequence must start with CLS".into()));
        }
        self.conversation.forward(ids, mask, ctx)
    }

    /// Cross-attention from phoneme states to non-CLS conversation states,
    /// plus the CLS state broadcast over phonemes. Returns `B x N x d` and
    /// the attention weights `B x H x N x M` (zero at CLS and padding).
    pub fn linguistic_attend(&self, h_u: &Tensor, h_c: &Tensor, conv_mask: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, m) = conv_mask.dims2()?;
        let key_mask = Tensor::cat(
            &[
                Tensor::zeros((b, 1), conv_mask.dtype(), conv_mask.device())?,
                conv_mask.narrow(1, 1, m - 1)?,
            ],
            1,
        )?;
        let (att, weights) = self.cross_attention.forward(h_u, h_c, &key_mask)?;
        let h0 = h_c.narrow(1, 0, 1)?;
        Ok((att.broadcast_add(&h0)?, weights))
    }

    /// Regression: estimates `B x N`. Classification: logits `B x N x 4`.
    pub fn predict_labels(&self, h: &Tensor, mask: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let out = self.label_predictor.forward(h, mask, ctx)?;
        match self.cfg.label_head {
            LabelHead::Regression => Ok(out.squeeze(D::Minus1)?),
            LabelHead::Classification => Ok(out),
        }
    }

    /// Per-phoneme classes from the label head output, one row per item.
    pub fn label_estimates(&self, out: &Tensor, lengths: &[usize]) -> Result<Vec<Vec<f64>>> {
        let rows: Vec<Vec<f64>> = match self.cfg.label_head {
            LabelHead::Regression => out.to_dtype(DType::F64)?.to_vec2::<f64>()?,
            LabelHead::Classification => out
                .argmax(D::Minus1)?
                .to_vec2::<u32>()?
                .into_iter()
                .map(|r| r.into_iter().map(f64::from).collect())
                .collect(),
        };
        Ok(rows.into_iter().zip(lengths).map(|(r, &l)| r[..l].to_vec()).collect())
    }

    /// Label class ids `B x N` (u32, 0..=3) → `B x N x d`.
    pub fn embed_labels(&self, classes: &Tensor) -> Result<Tensor> {
        self.label_embedding.forward(classes)
    }

    /// Predicts log-durations, pitch and energy, adds the pitch and energy
    /// embeddings and expands to frames. With `targets`, expansion and the
    /// embeddings use the reference values.
    pub fn variance_adapt(
        &self,
        h: &Tensor,
        mask: &Tensor,
        lengths: &[usize],
        targets: Option<&BatchTargets>,
        ctx: &mut Ctx,
    ) -> Result<VarianceOutput> {
        let log_duration = self.duration.forward(h, mask, ctx)?.squeeze(D::Minus1)?;
        let pitch = self.pitch.forward(h, mask, ctx)?.squeeze(D::Minus1)?;
        let energy = self.energy.forward(h, mask, ctx)?.squeeze(D::Minus1)?;
        let (pitch_ids, energy_ids, durations) = match targets {
            Some(t) => (t.pitch_buckets.clone(), t.energy_buckets.clone(), t.durations.clone()),
            None => {
                let bucket = |x: &Tensor, range, bins| -> Result<Tensor> {
                    let v = x.to_dtype(DType::F64)?.to_vec2::<f64>()?;
                    let (b, n) = (v.len(), v.first().map_or(0, Vec::len));
                    let ids: Vec<u32> = v.iter().flatten().map(|&p| bucketize(p, range, bins)).collect();
                    Ok(Tensor::from_vec(ids, (b, n), x.device())?)
                };
                let ld = log_duration.to_dtype(DType::F64)?.to_vec2::<f64>()?;
                let durations = ld
                    .iter()
                    .zip(lengths)
                    .map(|(row, &l)| row[..l].iter().map(|&x| duration_from_log(x)).collect())
                    .collect();
                (
                    bucket(&pitch, self.stats.pitch_range, self.cfg.pitch_bins)?,
                    bucket(&energy, self.stats.energy_range, self.cfg.energy_bins)?,
                    durations,
                )
            }
        };
        let h = h
            .add(&self.pitch_embedding.forward(&pitch_ids)?)?
            .add(&self.energy_embedding.forward(&energy_ids)?)?;
        let h = mask_rows(&h, mask)?;
        let (expanded, frame_lengths) = length_regulate(&h, &durations)?;
        let frame_mask = length_mask(&frame_lengths, expanded.dim(1)?, self.dtype(), self.device())?;
        Ok(VarianceOutput {
            expanded,
            frame_mask,
            frame_lengths,
            log_duration,
            pitch,
            energy,
            durations,
        })
    }

    /// `B x T x d` frame states → `B x T x n_mels`.
    pub fn decode_mel(&self, x: &Tensor, frame_mask: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let (_, t, d) = x.dims3()?;
        let pe = positional_encoding(t, d, x.dtype(), x.device())?;
        let mut x = mask_rows(&x.broadcast_add(&pe)?, frame_mask)?;
        for b in &self.decoder {
            x = b.forward(&x, frame_mask, ctx)?;
        }
        mask_rows(&self.mel_head.forward(&x)?, frame_mask)
    }

    /// Phoneme states with history and linguistic context added, before labels.
    /// The two context terms are summed first so their order never matters.
    fn contextual_states(&self, batch: &Batch, ctx: &mut Ctx) -> Result<Tensor> {
        let h_u = self.encode_phonemes(&batch.ids, &batch.mask, ctx)?;
        let hist = self.encode_history(&batch.history)?.unsqueeze(1)?;
        let context = if self.cfg.use_linguistic_encoder {
            let h_c = self.encode_conversation(&batch.conv_ids, &batch.conv_mask, ctx)?;
            let (ling, _) = self.linguistic_attend(&h_u, &h_c, &batch.conv_mask)?;
            hist.broadcast_add(&ling)?
        } else {
            hist
        };
        mask_rows(&h_u.broadcast_add(&context)?, &batch.mask)
    }

    fn label_loss(&self, out: &Tensor, t: &BatchTargets, mask: &Tensor) -> Result<Tensor> {
        match self.cfg.label_head {
            LabelHead::Regression => masked_mean(&out.sub(&t.label_values)?.sqr()?, mask),
            LabelHead::Classification => {
                let logp = softmax_last(out)?.clamp(1e-12, 1.0)?.log()?;
                let picked = logp.gather(&t.label_ids.unsqueeze(D::Minus1)?, D::Minus1)?.squeeze(D::Minus1)?;
                masked_mean(&picked.neg()?, mask)
            }
        }
    }

    /// Teacher-forced forward pass with reference labels, durations, pitch and energy.
    pub fn forward_train(&self, batch: &Batch, ctx: &mut Ctx) -> Result<LossComponents> {
        let t = batch
            .targets
            .as_ref()
            .ok_or_else(|| Error::Validation("training batch has no targets".into()))?;
        let h = self.contextual_states(batch, ctx)?;
        let label_out = self.predict_labels(&h, &batch.mask, ctx)?;
        let h = h.add(&mask_rows(&self.embed_labels(&t.label_ids)?, &batch.mask)?)?;
        let va = self.variance_adapt(&h, &batch.mask, &batch.lengths, Some(t), ctx)?;
        let mel = self.decode_mel(&va.expanded, &va.frame_mask, ctx)?;
        let n_mels = self.cfg.n_mels as f64;
        let mel_loss = (masked_mean(&mel.sub(&t.mel)?.abs()?.sum(D::Minus1)?, &t.frame_mask)? / n_mels)?;
        Ok(LossComponents {
            mel: mel_loss,
            duration: masked_mean(&va.log_duration.sub(&t.log_durations)?.sqr()?, &batch.mask)?,
            pitch: masked_mean(&va.pitch.sub(&t.pitch)?.sqr()?, &batch.mask)?,
            energy: masked_mean(&va.energy.sub(&t.energy)?.sqr()?, &batch.mask)?,
            label: self.label_loss(&label_out, t, &batch.mask)?,
        })
    }

    /// Inference for one item. Explicit character labels are applied as
    /// given; otherwise the rounded, clamped predictions are applied.
    pub fn synthesize(&self, input: SynthesisInput<'_>) -> Result<SynthesisOutput> {
        let item = input.item;
        let batch = self.batch(&[item])?;
        let mut ctx = Ctx::eval();
        let h = self.contextual_states(&batch, &mut ctx)?;
        let label_out = self.predict_labels(&h, &batch.mask, &mut ctx)?;
        let estimates = self.label_estimates(&label_out, &batch.lengths)?.remove(0);
        let (applied, source) = match input.labels {
            Some(l) => {
                if l.len() != item.grouping.len() {
                    return Err(Error::Validation(format!(
                        "{} labels for {} characters",
                        l.len(),
                        item.grouping.len()
                    )));
                }
                (expand_char_to_phoneme(l, &item.grouping)?, AppliedLabelSource::Explicit)
            }
            None => (
                PhonemeLabelSeq(estimates.iter().map(|&e| LabelClass::from_estimate(e)).collect()),
                AppliedLabelSource::Predicted,
            ),
        };
        let ids: Vec<u32> = applied.values().into_iter().map(u32::from).collect();
        let n = ids.len();
        let ids = Tensor::from_vec(ids, (1, n), self.device())?;
        let h = h.add(&self.embed_labels(&ids)?)?;
        let va = self.variance_adapt(&h, &batch.mask, &batch.lengths, None, &mut ctx)?;
        let mel = self.decode_mel(&va.expanded, &va.frame_mask, &mut ctx)?;
        let rows = mel.squeeze(0)?.to_dtype(DType::F32)?.to_vec2::<f32>()?;
        let t = va.frame_lengths[0];
        let mel = Array2::from_shape_fn((t, self.cfg.n_mels), |(i, j)| rows[i][j]);
        Ok(SynthesisOutput {
            mel,
            durations: va.durations[0].clone(),
            label_estimates: estimates,
            applied_char_labels: char_labels_from_final_phonemes(&applied, &item.grouping)?,
            applied_phoneme_labels: applied,
            label_source: source,
        })
    }

    /// Pads a batch. Targets are built only when every item has them.
    pub fn batch(&self, items: &[&AcousticItem]) -> Result<Batch> {
        if items.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        for it in items {
            it.validate(&self.cfg)?;
        }
        let (dtype, dev) = (self.dtype(), self.device().clone());
        let (ids, lengths) = pad_ids(&items.iter().map(|i| i.phoneme_ids.clone()).collect::<Vec<_>>(), PhonemeVocab::PAD, &dev)?;
        let n = ids.dim(1)?;
        let mask = length_mask(&lengths, n, dtype, &dev)?;
        let (conv_ids, conv_lengths) =
            pad_ids(&items.iter().map(|i| i.conversation_ids.clone()).collect::<Vec<_>>(), PhonemeVocab::PAD, &dev)?;
        let conv_mask = length_mask(&conv_lengths, conv_ids.dim(1)?, dtype, &dev)?;
        let w = self.cfg.window();
        let hist: Vec<f32> = items.iter().flat_map(|i| i.history.iter().copied()).collect();
        let history = Tensor::from_vec(hist, (items.len(), w, EMBEDDING_DIM), &dev)?.to_dtype(dtype)?;
        let targets = if items.iter().all(|i| i.targets.is_some()) {
            Some(self.batch_targets(items, n, &lengths)?)
        } else {
            None
        };
        Ok(Batch {
            ids,
            mask,
            lengths,
            conv_ids,
            conv_mask,
            history,
            targets,
        })
    }

    fn batch_targets(&self, items: &[&AcousticItem], n: usize, lengths: &[usize]) -> Result<BatchTargets> {
        let (dtype, dev) = (self.dtype(), self.device());
        let b = items.len();
        let tg: Vec<_> = items.iter().map(|i| i.targets.as_ref().expect("checked")).collect();
        let frames: Vec<usize> = tg.iter().map(|t| t.mel.nrows()).collect();
        let t_max = frames.iter().copied().max().unwrap_or(0).max(1);
        let n_mels = self.cfg.n_mels;
        let mut mel = vec![0f32; b * t_max * n_mels];
        for (i, t) in tg.iter().enumerate() {
            for (r, row) in t.mel.rows().into_iter().enumerate() {
                let off = (i * t_max + r) * n_mels;
                mel[off..off + n_mels].iter_mut().zip(row).for_each(|(d, &s)| *d = s);
            }
        }
        let padded = |f: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
            (0..b)
                .flat_map(|i| (0..n).map(move |k| (i, k)))
                .map(|(i, k)| if k < lengths[i] { f(i, k) } else { 0.0 })
                .collect()
        };
        let s = &self.stats;
        let log_dur = padded(&|i, k| (tg[i].durations[k] as f64 + 1.0).ln());
        let pitch = padded(&|i, k| s.norm_pitch(tg[i].pitch[k] as f64));
        let energy = padded(&|i, k| s.norm_energy(tg[i].energy[k] as f64));
        let labels = padded(&|i, k| tg[i].labels.0[k].value() as f64);
        let ids = |v: &[f64], range, bins| -> Result<Tensor> {
            let x: Vec<u32> = v.iter().map(|&p| bucketize(p, range, bins)).collect();
            Ok(Tensor::from_vec(x, (b, n), dev)?)
        };
        Ok(BatchTargets {
            mel: Tensor::from_vec(mel, (b, t_max, n_mels), dev)?.to_dtype(dtype)?,
            frame_mask: length_mask(&frames, t_max, dtype, dev)?,
            durations: tg.iter().map(|t| t.durations.clone()).collect(),
            pitch_buckets: ids(&pitch, s.pitch_range, self.cfg.pitch_bins)?,
            energy_buckets: ids(&energy, s.energy_range, self.cfg.energy_bins)?,
            label_ids: Tensor::from_vec(labels.iter().map(|&v| v as u32).collect::<Vec<_>>(), (b, n), dev)?,
            log_durations: float_tensor(log_dur, (b, n), dtype, dev)?,
            pitch: float_tensor(pitch, (b, n), dtype, dev)?,
            energy: float_tensor(energy, (b, n), dtype, dev)?,
            label_values: float_tensor(labels, (b, n), dtype, dev)?,
        })
    }

    pub fn meta(&self) -> AcousticMeta {
        AcousticMeta {
            config: self.cfg.clone(),
            vocab: self.vocab.clone(),
            stats: self.stats.clone(),
            reinit_seeds: self.reinit_seeds.clone(),
        }
    }

    pub fn save(&self, path: &Path, config_hash: &str, seed: u64, step: u64) -> Result<()> {
        save_checkpoint(path, &self.store, "acoustic", config_hash, seed, step, serde_json::to_value(self.meta())?)
    }

    /// Loads a checkpoint. With `expected_config_hash`, a different stored
    /// hash is an error; pass `None` to accept any.
    pub fn load(path: &Path, expected_config_hash: Option<&str>) -> Result<(Self, u64)> {
        let ck = load_checkpoint(path)?;
        if ck.header.kind != "acoustic" {
            return Err(Error::Checkpoint(format!(
                "{} is a '{}' checkpoint, not an acoustic model",
                path.display(),
                ck.header.kind
            )));
        }
        if let Some(h) = expected_config_hash {
            if h != ck.header.config_hash {
                return Err(Error::Checkpoint(format!(
                    "{} was written under config {} but the current config is {h}",
                    path.display(),
                    ck.header.config_hash
                )));
            }
        }
        let groups = ck.groups();
        if groups.iter().map(String::as_str).ne(sorted_groups()) {
            return Err(Error::Checkpoint(format!("{}: unexpected parameter groups {groups:?}", path.display())));
        }
        let meta: AcousticMeta = serde_json::from_value(ck.header.meta.clone())?;
        let dtype = if ck.header.dtype == "f64" { DType::F64 } else { DType::F32 };
        let mut model = Self::new(meta.config, meta.vocab, meta.stats, ck.header.seed, dtype)?;
        model.reinit_seeds = meta.reinit_seeds;
        model.store.load_host(&ck.values)?;
        Ok((model, ck.header.step))
    }
}

fn sorted_groups() -> impl Iterator<Item = &'static str> {
    let mut g = PARAM_GROUPS.to_vec();
    g.sort();
    g.into_iter()
}

/// Frames for a predicted log-duration `l` (target `ln(d + 1)`): `max(round(e^l - 1), 1)`.
pub fn duration_from_log(l: f64) -> usize {
    let d = (l.exp() - 1.0).round();
    if d.is_finite() && d >= 1.0 {
        d as usize
    } else {
        1
    }
}
