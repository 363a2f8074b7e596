//! Conversational corpus data model.
//!
//! A corpus is a set of conversations, each an ordered list of utterances.
//! Characters are grapheme groups; `grouping[k]` is the number of phonemes
//! that spell character `k`, so phonemes and labels can be mapped between
//! the two resolutions.

mod embedding;
mod history;
mod manifest;
mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::CharLabelSeq;

pub use embedding::{
    hash_embedding, CachedEmbedder, EmbeddingProvider, HashEmbeddingProvider, HttpEmbeddingProvider,
    UtteranceEmbedding, EMBEDDING_DIM,
};
pub use history::{history_window, DEFAULT_HISTORY};
pub use manifest::{load_corpus, write_manifest, ManifestRecord, MANIFEST_SCHEMA_VERSION};
pub use synthetic::{
    default_vocabulary, generate_synthetic_corpus, read_truth, PhonemeRender, SpeakerVoice, SyntheticConfig,
    SyntheticCorpus, UtteranceRender, VocabEntry,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Human,
    Pseudo,
    Planted,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    pub chars: Vec<String>,
    pub phonemes: Vec<String>,
    pub grouping: Vec<usize>,
    pub char_labels: Option<CharLabelSeq>,
    pub audio_ref: Option<PathBuf>,
    pub duration_ref: Option<PathBuf>,
    pub label_source: LabelSource,
}

impl Utterance {
    pub fn text(&self) -> String {
        self.chars.concat()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(format!("utterance '{}': {msg}", self.id)));
        if self.grouping.len() != self.chars.len() {
            return bad(format!(
                "grouping has {} entries for {} characters",
                self.grouping.len(),
                self.chars.len()
            ));
        }
        if self.grouping.contains(&0) {
            return bad("grouping contains a zero phoneme count".into());
        }
        let total: usize = self.grouping.iter().sum();
        if total != self.phonemes.len() {
            return bad(format!(
                "sum(grouping)={total} but {} phonemes",
                self.phonemes.len()
            ));
        }
        match (&self.char_labels, self.label_source) {
            (Some(l), _) if l.len() != self.chars.len() => {
                return bad(format!("{} labels for {} characters", l.len(), self.chars.len()))
            }
            (Some(_), LabelSource::None) => return bad("labels present but label_source is none".into()),
            (None, LabelSource::Human | LabelSource::Pseudo | LabelSource::Planted) => {
                return bad("label_source requires labels".into())
            }
            _ => {}
        }
        Ok(())
    }

    /// Index of the last phoneme of every character.
    pub fn final_phoneme_indices(&self) -> Vec<usize> {
        let mut end = 0;
        self.grouping
            .iter()
            .map(|&g| {
                end += g;
                end - 1
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub conversations: usize,
    pub utterances: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub conversations: Vec<Conversation>,
    pub split: BTreeMap<String, Split>,
}

impl Corpus {
    pub fn new(conversations: Vec<Conversation>, split: BTreeMap<String, Split>) -> Result<Self> {
        let corpus = Self {
            conversations,
            split,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for conv in &self.conversations {
            for u in &conv.utterances {
                u.validate()?;
                if !ids.insert(u.id.as_str()) {
                    return Err(Error::Validation(format!("duplicate utterance id '{}'", u.id)));
                }
            }
        }
        if let Some(k) = self.split.keys().find(|k| !ids.contains(k.as_str())) {
            return Err(Error::Validation(format!("split references unknown utterance '{k}'")));
        }
        Ok(())
    }

    pub fn split_of(&self, utt_id: &str) -> Split {
        self.split.get(utt_id).copied().unwrap_or_default()
    }

    pub fn utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.conversations.iter().flat_map(|c| c.utterances.iter())
    }

    pub fn num_utterances(&self) -> usize {
        self.conversations.iter().map(|c| c.utterances.len()).sum()
    }

    /// `(conversation index, utterance index)` pairs in corpus order, optionally restricted to a split.
    pub fn positions(&self, split: Option<Split>) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (ci, conv) in self.conversations.iter().enumerate() {
            for (ui, u) in conv.utterances.iter().enumerate() {
                if split.is_none_or(|s| self.split_of(&u.id) == s) {
                    out.push((ci, ui));
                }
            }
        }
        out
    }

    /// Number of conversations and utterances assigned to `split`. A
    /// conversation counts if any of its utterances is in the split.
    pub fn split_report(&self, split: Split) -> SplitReport {
        let mut report = SplitReport {
            conversations: 0,
            utterances: 0,
        };
        for conv in &self.conversations {
            let n = conv
                .utterances
                .iter()
                .filter(|u| self.split_of(&u.id) == split)
                .count();
            if n > 0 {
                report.conversations += 1;
                report.utterances += n;
            }
        }
        report
    }

    pub fn find(&self, utt_id: &str) -> Option<(usize, usize)> {
        self.conversations.iter().enumerate().find_map(|(ci, c)| {
            c.utterances
                .iter()
                .position(|u| u.id == utt_id)
                .map(|ui| (ci, ui))
        })
    }
}
