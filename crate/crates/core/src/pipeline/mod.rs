//! Four-stage training pipeline with persisted state.
//!
//! Layout under the output directory:
//!
//! | path | written by |
//! |---|---|
//! | `state.json` | every stage |
//! | `features/` | prepare (content-addressed cache) |
//! | `embeddings/` | history embedding cache |
//! | `detectors/{behavior}.{input}.ckpt`, `detectors/metrics.json` | train-detector |
//! | `pseudo/labels/*.json`, `pseudo/manifest.jsonl`, `pseudo/summary.json` | pseudo-label |
//! | `acoustic/pretrain.ckpt`, `acoustic/pretrain_log.json` | pretrain |
//! | `acoustic/finetune.ckpt`, `acoustic/finetune_log.json`, `acoustic/finetune_init.json` | finetune |

mod data;
mod gradcheck;
mod stages;
mod state;
mod synth;

#[cfg(test)]
mod tests;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use std::path::Path;

use crate::acoustic::PARAM_GROUPS;
use crate::corpus::load_corpus;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};

pub use data::{
    acoustic_items, build_embedder, build_vocab, compute_features, detector_examples, load_features, prepare_corpus,
    CacheStatus, FeatureCache, PrepareEntry, PrepareReport, UttFeatures,
};
pub use gradcheck::{gradient_check, GradHead};
pub use stages::{
    detector_path, evaluate_detectors, evaluate_loss, finetune_init, load_pseudo_sidecar, rederive_decisions,
    rederive_with, sidecar_path, stage_extract_pseudo_labels, stage_finetune, stage_pretrain, stage_train_detectors,
    train_acoustic, AcousticStageReport, DetectorSummary, EvaluationRow, FinetuneInit, PseudoSidecar, PseudoSummary,
    TrainLog, FINETUNE_CKPT, HIGH_QUALITY, LOW_QUALITY, PRETRAIN_CKPT, PSEUDO_MANIFEST,
};
pub use synth::{
    label_region_difference, parse_labels, synthesis_item, synthesize_to, vocode, AdHocText, RegionDiff, SynthSidecar,
    SynthSource, SYNTH_SCHEMA_VERSION,
};
pub use state::{
    ArtifactRecord, CorpusRecord, PipelineLock, PipelineState, Run, Stage, StageRecord, STATE_SCHEMA_VERSION,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSpec {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: u64,
    pub lr_scale: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Per-group learning-rate multipliers; absent groups use 1.
    pub multipliers: BTreeMap<String, f64>,
    /// Decoder multiplier applied during fine-tuning.
    pub decoder_multiplier: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            warmup_steps: 4000,
            lr_scale: 1.0,
            clip_norm: 1.0,
            multipliers: BTreeMap::new(),
            decoder_multiplier: 10.0,
        }
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("optimizer: {m}")));
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) || !(self.lr_scale > 0.0) || self.warmup_steps == 0 || !(self.clip_norm >= 0.0) {
            return bad("eps, lr_scale and warmup_steps must be positive".into());
        }
        if !(self.decoder_multiplier > 0.0 && self.decoder_multiplier.is_finite()) {
            return bad("decoder_multiplier must be positive".into());
        }
        for (g, &m) in &self.multipliers {
            if !PARAM_GROUPS.contains(&g.as_str()) {
                return bad(format!("unknown parameter group '{g}'"));
            }
            if !(m > 0.0 && m.is_finite()) {
                return bad(format!("multiplier for '{g}' must be positive"));
            }
        }
        Ok(())
    }

    /// Adam with this spec's multipliers; `finetune` applies `decoder_multiplier`.
    pub fn adam(&self, finetune: bool) -> Result<Adam> {
        let mut adam = Adam::new(AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
        });
        for (g, &m) in &self.multipliers {
            adam.set_multiplier(g, m)?;
        }
        if finetune {
            adam.set_multiplier("decoder", self.decoder_multiplier)?;
        }
        Ok(adam)
    }
}

/// `scale * d^-0.5 * min(step^-0.5, step * warmup^-1.5)`; steps start at 1.
///
/// Evaluated as `peak * min(sqrt(w / s), s / w)` with the peak factored
/// out, so steps at power-of-two multiples of the warmup give exact ratios.
pub fn lr_at(step: u64, spec: &OptimizerSpec, d_model: usize) -> Result<f64> {
    if step < 1 {
        return Err(Error::Validation("learning-rate schedule steps start at 1".into()));
    }
    let s = step as f64;
    let w = spec.warmup_steps as f64;
    let peak = spec.lr_scale * (d_model as f64).powf(-0.5) * w.powf(-0.5);
    Ok(peak * (w / s).sqrt().min(s / w))
}

/// Extracts features for a corpus into the run's cache and, when every
/// utterance succeeds, records the corpus under `role`.
pub fn prepare(run: &mut Run, role: &str, manifest: &Path) -> Result<PrepareReport> {
    if role != HIGH_QUALITY && role != LOW_QUALITY {
        return Err(Error::Validation(format!("unknown corpus role '{role}'")));
    }
    let _lock = run.lock()?;
    let corpus = load_corpus(manifest)?;
    let cache = FeatureCache::open(&run.path("features"), &run.config.features)?;
    let report = prepare_corpus(&corpus, &cache);
    if report.failed == 0 {
        let manifest = std::path::absolute(manifest).map_err(|e| Error::io(manifest, e))?;
        run.state.corpora.insert(
            role.to_string(),
            CorpusRecord {
                sha256: crate::util::file_sha256(&manifest)?,
                manifest,
                utterances: corpus.num_utterances(),
            },
        );
        run.save()?;
    }
    Ok(report)
}
