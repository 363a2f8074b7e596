//! Line-delimited JSON corpus manifests, one record per utterance.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Conversation, Corpus, LabelSource, Split, Utterance};
use crate::error::{Error, Result};
use crate::labels::CharLabelSeq;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub schema_version: u32,
    pub conv_id: String,
    pub utt_index: usize,
    /// Defaults to `"{conv_id}/{utt_index}"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utt_id: Option<String>,
    pub speaker: String,
    pub chars: Vec<String>,
    pub phonemes: Vec<String>,
    pub grouping: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<String>,
    /// Per-phoneme frame counts, one integer per line. Defaults to the
    /// audio path with a `.dur` extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_path: Option<String>,
    pub label_source: LabelSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let joined = base.join(p);
    std::path::absolute(&joined).unwrap_or(joined)
}

fn relativize(base: &Path, p: &Path) -> String {
    let abs_base = std::path::absolute(base).unwrap_or_else(|_| base.to_path_buf());
    p.strip_prefix(&abs_base)
        .unwrap_or(p)
        .to_string_lossy()
        .into_owned()
}

/// Streams a manifest and returns the validated corpus.
pub fn load_corpus(manifest_path: impl AsRef<Path>) -> Result<Corpus> {
    let path = manifest_path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let mut order: Vec<String> = Vec::new();
    let mut convs: HashMap<String, BTreeMap<usize, Utterance>> = HashMap::new();
    let mut split = BTreeMap::new();

    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if rec.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(parse_err(format!(
                "unsupported schema_version {} (expected {MANIFEST_SCHEMA_VERSION})",
                rec.schema_version
            )));
        }
        let id = rec
            .utt_id
            .clone()
            .unwrap_or_else(|| format!("{}/{}", rec.conv_id, rec.utt_index));
        let char_labels = rec
            .labels
            .as_deref()
            .map(CharLabelSeq::from_values)
            .transpose()
            .map_err(|e| parse_err(format!("utterance '{id}': {e}")))?;
        let audio_ref = rec.audio_path.as_deref().map(|p| resolve(&base, p));
        let duration_ref = match (&rec.duration_path, &audio_ref) {
            (Some(p), _) => Some(resolve(&base, p)),
            (None, Some(a)) => Some(a.with_extension("dur")),
            (None, None) => None,
        };
        let utt = Utterance {
            id: id.clone(),
            speaker: rec.speaker,
            chars: rec.chars,
            phonemes: rec.phonemes,
            grouping: rec.grouping,
            char_labels,
            audio_ref,
            duration_ref,
            label_source: rec.label_source,
        };
        utt.validate()?;
        if let Some(s) = rec.split {
            split.insert(id.clone(), s);
        }
        let slot = convs.entry(rec.conv_id.clone()).or_insert_with(|| {
            order.push(rec.conv_id.clone());
            BTreeMap::new()
        });
        if slot.insert(rec.utt_index, utt).is_some() {
            return Err(parse_err(format!(
                "duplicate utt_index {} in conversation '{}'",
                rec.utt_index, rec.conv_id
            )));
        }
    }

    let conversations = order
        .into_iter()
        .map(|id| {
            let utterances = convs.remove(&id).unwrap_or_default().into_values().collect();
            Conversation { id, utterances }
        })
        .collect();
    Corpus::new(conversations, split)
}

pub fn manifest_records(corpus: &Corpus, base: &Path) -> Vec<ManifestRecord> {
    let mut out = Vec::with_capacity(corpus.num_utterances());
    for conv in &corpus.conversations {
        for (i, u) in conv.utterances.iter().enumerate() {
            let default_id = format!("{}/{}", conv.id, i);
            let default_dur = u.audio_ref.as_ref().map(|a| a.with_extension("dur"));
            out.push(ManifestRecord {
                schema_version: MANIFEST_SCHEMA_VERSION,
                conv_id: conv.id.clone(),
                utt_index: i,
                utt_id: (u.id != default_id).then(|| u.id.clone()),
                speaker: u.speaker.clone(),
                chars: u.chars.clone(),
                phonemes: u.phonemes.clone(),
                grouping: u.grouping.clone(),
                labels: u
                    .char_labels
                    .as_ref()
                    .map(|l| l.0.iter().map(|c| c.value() as i64).collect()),
                audio_path: u.audio_ref.as_deref().map(|p| relativize(base, p)),
                duration_path: u
                    .duration_ref
                    .as_deref()
                    .filter(|d| Some(d.to_path_buf()) != default_dur)
                    .map(|p| relativize(base, p)),
                label_source: u.label_source,
                split: corpus.split.get(&u.id).copied(),
            });
        }
    }
    out
}

/// Writes `corpus` as a manifest. File paths under the manifest's directory are stored relative to it.
pub fn write_manifest(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in manifest_records(corpus, base) {
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
