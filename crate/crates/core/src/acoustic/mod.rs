//! Label-conditioned conversational acoustic model.
//!
//! Phoneme encoder, dialogue-history encoder, conversation-level
//! linguistic encoder with cross-attention, spontaneous-behavior label
//! predictor and label embedding, variance adaptor with length regulation,
//! and mel decoder. Parameters live in seven named groups.

mod model;

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{Utterance, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::labels::PhonemeLabelSeq;

pub use model::{
    duration_from_log, length_regulate, AcousticModel, AppliedLabelSource, Batch, BatchTargets, LossComponents,
    LossValues, SynthesisInput, SynthesisOutput, VarianceOutput,
};

/// Parameter groups of the acoustic model, in checkpoint order.
pub const PARAM_GROUPS: [&str; 7] = [
    "encoder",
    "history_encoder",
    "linguistic_encoder",
    "label_predictor",
    "label_embedding",
    "variance_adaptor",
    "decoder",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelHead {
    /// One real per phoneme, MSE against the class value.
    Regression,
    /// Four logits per phoneme, cross-entropy against the class.
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcousticConfig {
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_filter: usize,
    pub ffn_kernel: usize,
    pub dropout: f64,
    pub variance_filter: usize,
    pub variance_kernel: usize,
    pub variance_dropout: f64,
    pub pitch_bins: usize,
    pub energy_bins: usize,
    pub history: usize,
    pub history_hidden: usize,
    pub n_mels: usize,
    pub label_head: LabelHead,
    pub use_linguistic_encoder: bool,
}

impl Default for AcousticConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            heads: 2,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_filter: 1024,
            ffn_kernel: 9,
            dropout: 0.2,
            variance_filter: 256,
            variance_kernel: 3,
            variance_dropout: 0.5,
            pitch_bins: 256,
            energy_bins: 256,
            history: crate::corpus::DEFAULT_HISTORY,
            history_hidden: 256,
            n_mels: 80,
            label_head: LabelHead::Regression,
            use_linguistic_encoder: true,
        }
    }
}

impl AcousticConfig {
    /// Small widths for laptop-scale runs.
    pub fn desk() -> Self {
        Self {
            d_model: 64,
            ffn_filter: 128,
            ffn_kernel: 3,
            dropout: 0.1,
            variance_filter: 64,
            variance_dropout: 0.1,
            pitch_bins: 32,
            energy_bins: 32,
            history_hidden: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.d_model,
            self.heads,
            self.encoder_layers,
            self.decoder_layers,
            self.ffn_filter,
            self.ffn_kernel,
            self.variance_filter,
            self.variance_kernel,
            self.pitch_bins,
            self.energy_bins,
            self.history_hidden,
            self.n_mels,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config("acoustic model sizes must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!("d_model {} not divisible by {} heads", self.d_model, self.heads)));
        }
        if self.ffn_kernel % 2 == 0 || self.variance_kernel % 2 == 0 {
            return Err(Error::Config("convolution kernels must be odd".into()));
        }
        for p in [self.dropout, self.variance_dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("dropout {p} not in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn window(&self) -> usize {
        self.history + 1
    }
}

/// Phoneme inventory with reserved ids PAD, CLS, SEP and UNK.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonemeVocab {
    pub symbols: Vec<String>,
}

impl PhonemeVocab {
    pub const PAD: u32 = 0;
    pub const CLS: u32 = 1;
    pub const SEP: u32 = 2;
    pub const UNK: u32 = 3;
    const RESERVED: u32 = 4;

    pub fn build<'a>(symbols: impl IntoIterator<Item = &'a String>) -> Self {
        let mut s: Vec<String> = symbols.into_iter().cloned().collect();
        s.sort();
        s.dedup();
        Self { symbols: s }
    }

    pub fn len(&self) -> usize {
        self.symbols.len() + Self::RESERVED as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.symbols
            .binary_search_by(|x| x.as_str().cmp(symbol))
            .ok()
            .map(|i| i as u32 + Self::RESERVED)
    }

    /// Strict encoding: unknown symbols are an error.
    pub fn encode(&self, symbols: &[String]) -> Result<Vec<u32>> {
        symbols
            .iter()
            .map(|s| {
                self.id(s)
                    .ok_or_else(|| Error::Validation(format!("unknown phoneme '{s}'")))
            })
            .collect()
    }

    /// Encoding for context utterances, where unknown symbols become UNK.
    pub fn encode_lossy(&self, symbols: &[String]) -> Vec<u32> {
        symbols.iter().map(|s| self.id(s).unwrap_or(Self::UNK)).collect()
    }

    /// CLS, then each present utterance's phonemes in dialogue order with SEP between them.
    pub fn conversation_sequence(&self, window: &[Option<&Utterance>]) -> Vec<u32> {
        let mut out = vec![Self::CLS];
        let mut first = true;
        for u in window.iter().flatten() {
            if !first {
                out.push(Self::SEP);
            }
            first = false;
            out.extend(self.encode_lossy(&u.phonemes));
        }
        out
    }
}

/// Normalization statistics for pitch (voiced phonemes only) and energy,
/// and the bucket ranges in normalized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceStats {
    pub pitch_mean: f64,
    pub pitch_std: f64,
    pub energy_mean: f64,
    pub energy_std: f64,
    pub pitch_range: (f64, f64),
    pub energy_range: (f64, f64),
}

impl Default for VarianceStats {
    fn default() -> Self {
        Self {
            pitch_mean: 0.0,
            pitch_std: 1.0,
            energy_mean: 0.0,
            energy_std: 1.0,
            pitch_range: (-3.0, 3.0),
            energy_range: (-3.0, 3.0),
        }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 1.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt().max(1e-6))
}

fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if lo.is_finite() && hi > lo {
        (lo, hi)
    } else {
        (-3.0, 3.0)
    }
}

impl VarianceStats {
    pub fn from_targets<'a>(targets: impl IntoIterator<Item = &'a AcousticTargets> + Clone) -> Self {
        let voiced: Vec<f64> = targets
            .clone()
            .into_iter()
            .flat_map(|t| t.pitch.iter().map(|&p| p as f64))
            .filter(|&p| p > 0.0)
            .collect();
        let energy: Vec<f64> = targets
            .clone()
            .into_iter()
            .flat_map(|t| t.energy.iter().map(|&e| e as f64))
            .collect();
        let (pitch_mean, pitch_std) = mean_std(&voiced);
        let (energy_mean, energy_std) = mean_std(&energy);
        let mut s = Self {
            pitch_mean,
            pitch_std,
            energy_mean,
            energy_std,
            ..Self::default()
        };
        s.pitch_range = range(voiced.iter().map(|&p| s.norm_pitch(p)));
        s.energy_range = range(energy.iter().map(|&e| s.norm_energy(e)));
        s
    }

    /// Unvoiced (0 Hz) maps to the mean, i.e. 0.
    pub fn norm_pitch(&self, hz: f64) -> f64 {
        if hz > 0.0 {
            (hz - self.pitch_mean) / self.pitch_std
        } else {
            0.0
        }
    }

    pub fn norm_energy(&self, e: f64) -> f64 {
        (e - self.energy_mean) / self.energy_std
    }
}

/// Index of `value` among `bins` equal-width buckets over `range`;
/// values outside the range fall in the edge buckets.
pub fn bucketize(value: f64, range: (f64, f64), bins: usize) -> u32 {
    let (lo, hi) = range;
    let boundaries = bins.saturating_sub(1);
    let mut idx = 0;
    for i in 1..=boundaries {
        let b = lo + (hi - lo) * i as f64 / bins as f64;
        if value > b {
            idx = i;
        }
    }
    idx as u32
}

/// Training targets for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticTargets {
    /// `T x n_mels` log-mel frames; `T == sum(durations)`.
    pub mel: Array2<f32>,
    pub durations: Vec<usize>,
    /// Per-phoneme Hz (0 for unvoiced).
    pub pitch: Vec<f32>,
    pub energy: Vec<f32>,
    pub labels: PhonemeLabelSeq,
}

/// One utterance with its dialogue context.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticItem {
    pub utt_id: String,
    pub phoneme_ids: Vec<u32>,
    pub grouping: Vec<usize>,
    /// CLS-prefixed conversation phoneme sequence.
    pub conversation_ids: Vec<u32>,
    /// `(history + 1) x 512` utterance embeddings, oldest first; absent slots are zero rows.
    pub history: Array2<f32>,
    pub targets: Option<AcousticTargets>,
}

impl AcousticItem {
    pub fn validate(&self, cfg: &AcousticConfig) -> Result<()> {
        if self.phoneme_ids.is_empty() {
            return Err(Error::Validation(format!("{}: no phonemes", self.utt_id)));
        }
        if self.grouping.iter().sum::<usize>() != self.phoneme_ids.len() {
            return Err(Error::Shape(format!("{}: grouping does not cover the phonemes", self.utt_id)));
        }
        if self.conversation_ids.first() != Some(&PhonemeVocab::CLS) {
            return Err(Error::Validation(format!("{}: conversation sequence lacks CLS", self.utt_id)));
        }
        if self.history.dim() != (cfg.window(), EMBEDDING_DIM) {
            return Err(Error::Shape(format!(
                "{}: history window is {:?}, expected ({}, {EMBEDDING_DIM})",
                self.utt_id,
                self.history.dim(),
                cfg.window()
            )));
        }
        if let Some(t) = &self.targets {
            let n = self.phoneme_ids.len();
            if t.durations.len() != n || t.pitch.len() != n || t.energy.len() != n || t.labels.len() != n {
                return Err(Error::Shape(format!("{}: target lengths differ from {n} phonemes", self.utt_id)));
            }
            if t.durations.iter().sum::<usize>() != t.mel.nrows() {
                return Err(Error::Shape(format!(
                    "{}: durations sum to {} but the mel has {} frames",
                    self.utt_id,
                    t.durations.iter().sum::<usize>(),
                    t.mel.nrows()
                )));
            }
            if t.mel.ncols() != cfg.n_mels {
                return Err(Error::Shape(format!("{}: mel has {} bands", self.utt_id, t.mel.ncols())));
            }
        }
        Ok(())
    }
}

/// Metadata stored alongside acoustic checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticMeta {
    pub config: AcousticConfig,
    pub vocab: PhonemeVocab,
    pub stats: VarianceStats,
    /// Seed used for each group's current initialization, when reset.
    pub reinit_seeds: BTreeMap<String, u64>,
}

#[cfg(test)]
mod tests;
