use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::util::{file_sha256, write_atomic};

pub const STATE_SCHEMA_VERSION: u32 = 1;
const STATE_FILE: &str = "state.json";
const LOCK_FILE: &str = "pipeline.lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    DetectorsTrained,
    PseudoLabeled,
    Pretrained,
    Finetuned,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::DetectorsTrained, Stage::PseudoLabeled, Stage::Pretrained, Stage::Finetuned];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::DetectorsTrained => "detectors_trained",
            Stage::PseudoLabeled => "pseudo_labeled",
            Stage::Pretrained => "pretrained",
            Stage::Finetuned => "finetuned",
        }
    }

    /// CLI command that produces this stage.
    pub fn command(self) -> &'static str {
        match self {
            Stage::DetectorsTrained => "train-detector",
            Stage::PseudoLabeled => "pseudo-label",
            Stage::Pretrained => "pretrain",
            Stage::Finetuned => "finetune",
        }
    }

    pub fn previous(self) -> Option<Stage> {
        match self {
            Stage::DetectorsTrained => None,
            Stage::PseudoLabeled => Some(Stage::DetectorsTrained),
            Stage::Pretrained => Some(Stage::PseudoLabeled),
            Stage::Finetuned => Some(Stage::Pretrained),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Artifacts consumed, by role.
    pub inputs: BTreeMap<String, ArtifactRecord>,
    /// Artifacts produced, by role.
    pub artifacts: BTreeMap<String, ArtifactRecord>,
}

/// A prepared corpus: its manifest and content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub manifest: PathBuf,
    pub sha256: String,
    pub utterances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub schema_version: u32,
    /// Prepared corpora by role (`high_quality`, `low_quality`).
    pub corpora: BTreeMap<String, CorpusRecord>,
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl Default for PipelineState {
    fn default() -> Self {
        Self {
            schema_version: STATE_SCHEMA_VERSION,
            corpora: BTreeMap::new(),
            stages: BTreeMap::new(),
        }
    }
}

/// Exclusive marker for the output directory; removed on drop.
#[derive(Debug)]
pub struct PipelineLock {
    path: PathBuf,
}

impl PipelineLock {
    pub fn acquire(out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Precondition(format!(
                "another stage is running on {} (remove {} if it is stale)",
                out.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for PipelineLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// An output directory with its configuration and persisted state.
pub struct Run {
    pub out: PathBuf,
    pub config: RunConfig,
    pub config_hash: String,
    pub state: PipelineState,
}

impl Run {
    pub fn open(out: &Path, config: RunConfig) -> Result<Self> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let state_path = out.join(STATE_FILE);
        let state = if state_path.exists() {
            let text = std::fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
            let s: PipelineState = serde_json::from_str(&text)?;
            if s.schema_version != STATE_SCHEMA_VERSION {
                return Err(Error::Validation(format!(
                    "{}: schema version {} (expected {STATE_SCHEMA_VERSION})",
                    state_path.display(),
                    s.schema_version
                )));
            }
            s
        } else {
            PipelineState::default()
        };
        Ok(Self {
            out: out.to_path_buf(),
            config_hash: config.hash()?,
            config,
            state,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    pub fn lock(&self) -> Result<PipelineLock> {
        PipelineLock::acquire(&self.out)
    }

    pub fn save(&self) -> Result<()> {
        write_atomic(&self.out.join(STATE_FILE), serde_json::to_string_pretty(&self.state)?.as_bytes())
    }

    pub fn artifact(&self, rel: &str) -> Result<ArtifactRecord> {
        Ok(ArtifactRecord {
            path: rel.to_string(),
            sha256: file_sha256(&self.path(rel))?,
        })
    }

    pub fn corpus(&self, role: &str) -> Result<&CorpusRecord> {
        self.state.corpora.get(role).ok_or_else(|| {
            Error::Precondition(format!("no {} corpus has been prepared (run prepare first)", role.replace('_', "-")))
        })
    }

    /// The record of `stage`, after checking that every artifact it lists is
    /// present and unchanged.
    pub fn require(&self, stage: Stage) -> Result<&StageRecord> {
        let rec = self.state.stages.get(&stage).ok_or_else(|| {
            Error::Precondition(format!(
                "stage {} has not run: missing its artifacts under {} (run {} first)",
                stage.as_str(),
                self.out.display(),
                stage.command()
            ))
        })?;
        for (role, a) in &rec.artifacts {
            let p = self.path(&a.path);
            if !p.exists() {
                return Err(Error::Precondition(format!(
                    "missing artifact {} ({role} of stage {}; run {} first)",
                    p.display(),
                    stage.as_str(),
                    stage.command()
                )));
            }
            if file_sha256(&p)? != a.sha256 {
                return Err(Error::Precondition(format!(
                    "artifact {} changed since stage {} ran (run {} again)",
                    p.display(),
                    stage.as_str(),
                    stage.command()
                )));
            }
        }
        Ok(rec)
    }

    /// Records `rec` and discards later stages, which were built on older inputs.
    pub fn record(&mut self, rec: StageRecord) -> Result<()> {
        let stage = rec.stage;
        self.state.stages.retain(|s, _| *s < stage);
        self.state.stages.insert(stage, rec);
        self.save()
    }

    pub fn stage_record(&self, stage: Stage, seeds: BTreeMap<String, u64>) -> StageRecord {
        StageRecord {
            stage,
            config_hash: self.config_hash.clone(),
            seeds,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }
}
