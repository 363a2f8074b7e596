//! Run configuration: profile defaults, then a TOML file, then command-line
//! overrides. Every key has a value after resolution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acoustic::AcousticConfig;
use crate::corpus::{LabelSource, SyntheticConfig};
use crate::detector::{Behavior, DetectorConfig, InputType};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::pipeline::OptimizerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Paper,
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::Config(format!("unknown profile '{s}' (expected paper or desk)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub threshold_fp: f64,
    pub threshold_pr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub cnn_layers: usize,
    pub cnn_channels: usize,
    pub cnn_kernel: usize,
    pub cnn_stride: usize,
    pub hidden: usize,
    pub char_embedding_dim: usize,
    pub class_weighting: bool,
    /// Input types trained in stage 1; the first one produces pseudo labels.
    pub input_types: Vec<InputType>,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let d = DetectorConfig::default();
        Self {
            threshold_fp: Behavior::FilledPause.default_threshold(),
            threshold_pr: Behavior::Prolongation.default_threshold(),
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            cnn_layers: d.cnn_layers,
            cnn_channels: d.cnn_channels,
            cnn_kernel: d.cnn_kernel,
            cnn_stride: d.cnn_stride,
            hidden: d.hidden,
            char_embedding_dim: d.char_embedding_dim,
            class_weighting: d.class_weighting,
            input_types: vec![InputType::TextSpeech, InputType::Speech],
        }
    }
}

impl DetectorSection {
    pub fn threshold(&self, b: Behavior) -> f64 {
        match b {
            Behavior::FilledPause => self.threshold_fp,
            Behavior::Prolongation => self.threshold_pr,
        }
    }

    pub fn pseudo_input_type(&self) -> InputType {
        self.input_types.first().copied().unwrap_or(InputType::TextSpeech)
    }

    pub fn detector_config(&self, behavior: Behavior, input_type: InputType, n_mels: usize) -> DetectorConfig {
        DetectorConfig {
            behavior,
            input_type,
            threshold: self.threshold(behavior),
            cnn_layers: self.cnn_layers,
            cnn_channels: self.cnn_channels,
            cnn_kernel: self.cnn_kernel,
            cnn_stride: self.cnn_stride,
            hidden: self.hidden,
            char_embedding_dim: self.char_embedding_dim,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            class_weighting: self.class_weighting,
            n_mels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub pretrain_steps: u64,
    pub finetune_steps: u64,
    pub batch_size: usize,
    /// Adds the labelled high-quality training split to pre-training.
    pub mix_high_quality: bool,
    /// Intermediate checkpoint period in steps (0 = final checkpoint only).
    pub checkpoint_every: u64,
    /// Loss-curve sampling period in steps.
    pub log_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            pretrain_steps: 300_000,
            finetune_steps: 150_000,
            batch_size: 16,
            mix_high_quality: false,
            checkpoint_every: 10_000,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedProvider {
    /// Deterministic seeded-hash vectors.
    #[default]
    Hash,
    /// External sentence-embedding service at `embed.url`.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    pub provider: EmbedProvider,
    pub url: String,
    pub timeout_s: f64,
    pub retries: u32,
    /// Seed of the hash provider.
    pub hash_seed: u64,
}

impl Default for EmbedSection {
    fn default() -> Self {
        Self {
            provider: EmbedProvider::Hash,
            url: String::new(),
            timeout_s: 10.0,
            retries: 3,
            hash_seed: 0,
        }
    }
}

/// Synthetic corpora generated by `demo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoSection {
    pub high_quality_seed: u64,
    pub low_quality_seed: u64,
    pub high_quality: SyntheticConfig,
    pub low_quality: SyntheticConfig,
    /// Utterance synthesized at the end of the demo (first test utterance when empty).
    pub synth_utterance: String,
}

impl Default for DemoSection {
    fn default() -> Self {
        Self {
            high_quality_seed: 1,
            low_quality_seed: 2,
            high_quality: SyntheticConfig::default(),
            low_quality: SyntheticConfig {
                conversations: 24,
                test_conversations: 0,
                label_source: LabelSource::None,
                id_prefix: "lq".into(),
                ..SyntheticConfig::default()
            },
            synth_utterance: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub features: FeatureConfig,
    pub detector: DetectorSection,
    pub acoustic: AcousticConfig,
    pub optimizer: OptimizerSpec,
    pub train: TrainSection,
    pub embed: EmbedSection,
    pub demo: DemoSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Paper)
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let paper = Self {
            profile: Profile::Paper,
            seed: 1,
            features: FeatureConfig::default(),
            detector: DetectorSection::default(),
            acoustic: AcousticConfig::default(),
            optimizer: OptimizerSpec::default(),
            train: TrainSection::default(),
            embed: EmbedSection::default(),
            demo: DemoSection::default(),
        };
        match profile {
            Profile::Paper => paper,
            Profile::Desk => Self {
                profile: Profile::Desk,
                detector: DetectorSection {
                    hidden: 64,
                    char_embedding_dim: 32,
                    ..paper.detector
                },
                acoustic: AcousticConfig::desk(),
                optimizer: OptimizerSpec {
                    warmup_steps: 400,
                    ..paper.optimizer
                },
                train: TrainSection {
                    pretrain_steps: 600,
                    finetune_steps: 300,
                    batch_size: 8,
                    checkpoint_every: 0,
                    log_every: 20,
                    ..paper.train
                },
                ..paper
            },
        }
    }

    /// Profile defaults, overlaid with `file` (if any), then `overrides`
    /// (a TOML table of dotted keys already split into nested tables).
    pub fn resolve(file: Option<&Path>, profile: Option<Profile>, seed: Option<u64>) -> Result<Self> {
        let file_value: toml::Table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let file_profile = match file_value.get("profile") {
            Some(toml::Value::String(s)) => Some(s.parse::<Profile>()?),
            Some(_) => return Err(Error::Config("profile must be a string".into())),
            None => None,
        };
        let profile = profile.or(file_profile).unwrap_or_default();
        let base = toml::Table::try_from(Self::for_profile(profile))
            .map_err(|e| Error::Config(format!("serializing defaults: {e}")))?;
        let mut merged = toml::Value::Table(base);
        merge(&mut merged, toml::Value::Table(file_value));
        let mut cfg: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.profile = profile;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.acoustic.validate()?;
        self.optimizer.validate()?;
        if self.acoustic.n_mels != self.features.n_mels {
            return Err(Error::Config(format!(
                "acoustic.n_mels {} differs from features.n_mels {}",
                self.acoustic.n_mels, self.features.n_mels
            )));
        }
        if self.detector.input_types.is_empty() {
            return Err(Error::Config("detector.input_types is empty".into()));
        }
        for b in Behavior::ALL {
            self.detector
                .detector_config(b, self.detector.pseudo_input_type(), self.features.n_mels)
                .validate()?;
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.embed.provider == EmbedProvider::Http && self.embed.url.is_empty() {
            return Err(Error::Config("embed.provider = http requires embed.url".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> Result<String> {
        crate::util::config_hash(self)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Stage seeds derived from the run seed, by tag.
    pub fn stage_seed(&self, tag: &str) -> u64 {
        crate::util::derive_seed(self.seed, tag)
    }

    /// Seeds recorded in reports.
    pub fn seeds(&self, tags: &[&str]) -> BTreeMap<String, u64> {
        let mut m: BTreeMap<String, u64> = tags.iter().map(|t| (t.to_string(), self.stage_seed(t))).collect();
        m.insert("run".into(), self.seed);
        m
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Path of a file under the run's output directory.
pub fn out_path(out: &Path, rel: &str) -> PathBuf {
    out.join(rel)
}
