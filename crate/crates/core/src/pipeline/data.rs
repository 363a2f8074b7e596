use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustic::{AcousticItem, AcousticTargets, PhonemeVocab};
use crate::config::{EmbedProvider, EmbedSection};
use crate::corpus::{
    history_window, CachedEmbedder, Corpus, EmbeddingProvider, HashEmbeddingProvider, HttpEmbeddingProvider, Utterance,
    EMBEDDING_DIM,
};
use crate::detector::{Behavior, DetectorExample};
use crate::error::{Error, Result};
use crate::features::{
    audio::read_wav, extract_mel, extract_prosody, read_durations, read_mel, read_prosody, reconcile_durations,
    write_durations, write_mel, write_prosody, FeatureConfig, MelSpectrogram, ProsodyTracks,
};
use crate::labels::expand_char_to_phoneme;
use crate::util::{config_hash, file_sha256, sha256_hex};

/// Features of one utterance; `durations` sum to the mel frame count.
#[derive(Debug, Clone, PartialEq)]
pub struct UttFeatures {
    pub mel: MelSpectrogram,
    pub durations: Vec<usize>,
    pub prosody: ProsodyTracks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheStatus {
    Cached,
    Computed,
    Failed,
}

/// Content-addressed feature store. The key covers the feature
/// configuration, the audio and alignment bytes, and the phoneme sequence,
/// so any input change misses.
pub struct FeatureCache {
    dir: PathBuf,
    cfg: FeatureConfig,
    cfg_hash: String,
}

impl FeatureCache {
    pub fn open(dir: &Path, cfg: &FeatureConfig) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            cfg: cfg.clone(),
            cfg_hash: config_hash(cfg)?,
        })
    }

    fn refs(u: &Utterance) -> Result<(&Path, &Path)> {
        match (&u.audio_ref, &u.duration_ref) {
            (Some(a), Some(d)) => Ok((a, d)),
            (None, _) => Err(Error::Precondition(format!("utterance '{}' has no audio file", u.id))),
            (_, None) => Err(Error::Precondition(format!("utterance '{}' has no duration file", u.id))),
        }
    }

    pub fn key(&self, u: &Utterance) -> Result<String> {
        let (audio, dur) = Self::refs(u)?;
        let v = serde_json::json!({
            "features": self.cfg_hash,
            "audio": file_sha256(audio)?,
            "durations": file_sha256(dur)?,
            "phonemes": u.phonemes,
        });
        Ok(sha256_hex(serde_json::to_string(&v)?.as_bytes()))
    }

    fn paths(&self, key: &str) -> [PathBuf; 3] {
        ["mel", "dur", "prosody.json"].map(|ext| self.dir.join(format!("{key}.{ext}")))
    }

    /// Cached features, or `None` on a miss.
    pub fn get(&self, u: &Utterance) -> Result<Option<UttFeatures>> {
        let key = self.key(u)?;
        let [mel, dur, pros] = self.paths(&key);
        if !(mel.exists() && dur.exists() && pros.exists()) {
            return Ok(None);
        }
        Ok(Some(UttFeatures {
            mel: read_mel(&mel)?,
            durations: read_durations(&dur)?,
            prosody: read_prosody(&pros)?,
        }))
    }

    pub fn get_or_compute(&self, u: &Utterance) -> Result<(UttFeatures, CacheStatus)> {
        if let Some(f) = self.get(u)? {
            return Ok((f, CacheStatus::Cached));
        }
        let f = compute_features(u, &self.cfg)?;
        let [mel, dur, pros] = self.paths(&self.key(u)?);
        // `get` needs all three files, so an interrupted write reads as a miss.
        write_durations(&dur, &f.durations)?;
        write_prosody(&pros, &f.prosody)?;
        write_mel(&mel, &f.mel)?;
        Ok((f, CacheStatus::Computed))
    }
}

pub fn compute_features(u: &Utterance, cfg: &FeatureConfig) -> Result<UttFeatures> {
    let (audio, dur) = FeatureCache::refs(u)?;
    let (wav, sr) = read_wav(audio)?;
    let mel = extract_mel(&wav, sr, cfg)?;
    let mut durations = read_durations(dur)?;
    if durations.len() != u.phonemes.len() {
        return Err(Error::Validation(format!(
            "utterance '{}': {} durations for {} phonemes",
            u.id,
            durations.len(),
            u.phonemes.len()
        )));
    }
    reconcile_durations(&mut durations, mel.num_frames())?;
    let prosody = extract_prosody(&wav, sr, &durations, cfg)?;
    Ok(UttFeatures { mel, durations, prosody })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareEntry {
    pub utt_id: String,
    pub status: CacheStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub computed: usize,
    pub cached: usize,
    pub failed: usize,
    pub utterances: Vec<PrepareEntry>,
}

/// Extracts (or finds cached) features for every utterance. A failing
/// utterance is reported and does not stop the others.
pub fn prepare_corpus(corpus: &Corpus, cache: &FeatureCache) -> PrepareReport {
    let utts: Vec<&Utterance> = corpus.utterances().collect();
    let utterances: Vec<PrepareEntry> = utts
        .par_iter()
        .map(|u| match cache.get_or_compute(u) {
            Ok((f, status)) => PrepareEntry {
                utt_id: u.id.clone(),
                status,
                frames: Some(f.mel.num_frames()),
                error: None,
            },
            Err(e) => PrepareEntry {
                utt_id: u.id.clone(),
                status: CacheStatus::Failed,
                frames: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let count = |s| utterances.iter().filter(|e| e.status == s).count();
    PrepareReport {
        computed: count(CacheStatus::Computed),
        cached: count(CacheStatus::Cached),
        failed: count(CacheStatus::Failed),
        utterances,
    }
}

/// Cached features of every utterance in `corpus`; a miss is a precondition error.
pub fn load_features(corpus: &Corpus, cache: &FeatureCache) -> Result<BTreeMap<String, UttFeatures>> {
    let utts: Vec<&Utterance> = corpus.utterances().collect();
    utts.par_iter()
        .map(|u| match cache.get(u)? {
            Some(f) => Ok((u.id.clone(), f)),
            None => Err(Error::Precondition(format!(
                "missing features for utterance '{}' (run prepare first)",
                u.id
            ))),
        })
        .collect()
}

/// Detector examples for the utterances of `corpus` accepted by `keep`.
pub fn detector_examples(
    corpus: &Corpus,
    feats: &BTreeMap<String, UttFeatures>,
    behavior: Behavior,
    keep: impl Fn(&Utterance) -> bool,
) -> Result<Vec<DetectorExample>> {
    corpus
        .utterances()
        .filter(|u| keep(u))
        .map(|u| {
            let f = feats
                .get(&u.id)
                .ok_or_else(|| Error::Precondition(format!("missing features for utterance '{}'", u.id)))?;
            DetectorExample::build(u, &f.mel, &f.durations, behavior)
        })
        .collect()
}

/// Phoneme vocabulary over every corpus given.
pub fn build_vocab<'a>(corpora: impl IntoIterator<Item = &'a Corpus>) -> PhonemeVocab {
    let symbols: Vec<&String> = corpora
        .into_iter()
        .flat_map(|c| c.utterances().flat_map(|u| u.phonemes.iter()))
        .collect();
    PhonemeVocab::build(symbols)
}

pub fn build_embedder(cfg: &EmbedSection, cache_dir: Option<PathBuf>) -> CachedEmbedder {
    let provider: Arc<dyn EmbeddingProvider> = match cfg.provider {
        EmbedProvider::Hash => Arc::new(HashEmbeddingProvider::new(cfg.hash_seed)),
        EmbedProvider::Http => Arc::new(HttpEmbeddingProvider::new(
            cfg.url.clone(),
            Duration::from_secs_f64(cfg.timeout_s),
            cfg.retries,
        )),
    };
    CachedEmbedder::new(provider, cache_dir)
}

/// Acoustic items for the utterances of `corpus` accepted by `keep`.
///
/// With `feats`, every kept utterance gets training targets and must carry
/// labels; without, items have no targets.
pub fn acoustic_items(
    corpus: &Corpus,
    feats: Option<&BTreeMap<String, UttFeatures>>,
    vocab: &PhonemeVocab,
    embedder: &CachedEmbedder,
    history: usize,
    keep: impl Fn(&Utterance) -> bool,
) -> Result<Vec<AcousticItem>> {
    let mut out = Vec::new();
    for conv in &corpus.conversations {
        for (i, u) in conv.utterances.iter().enumerate() {
            if !keep(u) {
                continue;
            }
            let window = history_window(conv, i, history)?;
            let mut hist = Array2::<f32>::zeros((window.len(), EMBEDDING_DIM));
            for (r, w) in window.iter().enumerate() {
                let e = embedder.embed_utterance(*w)?;
                hist.row_mut(r).assign(&ndarray::ArrayView1::from(e.as_slice()));
            }
            let targets = match feats {
                None => None,
                Some(map) => {
                    let f = map
                        .get(&u.id)
                        .ok_or_else(|| Error::Precondition(format!("missing features for utterance '{}'", u.id)))?;
                    let labels = u.char_labels.as_ref().ok_or_else(|| {
                        Error::Precondition(format!("utterance '{}' has no labels for acoustic training", u.id))
                    })?;
                    Some(AcousticTargets {
                        mel: f.mel.frames.clone(),
                        durations: f.durations.clone(),
                        pitch: f.prosody.pitch.clone(),
                        energy: f.prosody.energy.clone(),
                        labels: expand_char_to_phoneme(labels, &u.grouping)?,
                    })
                }
            };
            out.push(AcousticItem {
                utt_id: u.id.clone(),
                phoneme_ids: vocab.encode(&u.phonemes)?,
                grouping: u.grouping.clone(),
                conversation_ids: vocab.conversation_sequence(&window),
                history: hist,
                targets,
            });
        }
    }
    Ok(out)
}
