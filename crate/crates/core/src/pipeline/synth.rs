use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::data::{acoustic_items, build_embedder};
use crate::acoustic::{AcousticItem, AcousticModel, AppliedLabelSource, SynthesisInput};
use crate::config::RunConfig;
use crate::corpus::{Conversation, Corpus, LabelSource, Utterance};
use crate::error::{Error, Result};
use crate::features::{audio::write_wav, griffin_lim, write_mel, FeatureConfig, MelSpectrogram};
use crate::labels::{CharLabelSeq, LabelClass};
use crate::util::{file_sha256, write_atomic};

pub const SYNTH_SCHEMA_VERSION: u32 = 1;
const GRIFFIN_LIM_ITERATIONS: usize = 32;

/// Ad hoc input: one character per `char`, and the phonemes of each character.
#[derive(Debug, Clone, PartialEq)]
pub struct AdHocText {
    pub chars: Vec<String>,
    pub phonemes: Vec<Vec<String>>,
}

impl AdHocText {
    /// `text` is split into characters; `phonemes` holds one `|`-separated
    /// group of whitespace-separated phonemes per character.
    pub fn parse(text: &str, phonemes: &str) -> Result<Self> {
        let chars: Vec<String> = text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect();
        let groups: Vec<Vec<String>> = phonemes
            .split('|')
            .map(|g| g.split_whitespace().map(String::from).collect::<Vec<_>>())
            .collect();
        if chars.is_empty() {
            return Err(Error::Validation("empty text".into()));
        }
        if groups.len() != chars.len() {
            return Err(Error::Validation(format!(
                "{} phoneme groups for {} characters",
                groups.len(),
                chars.len()
            )));
        }
        if groups.iter().any(Vec::is_empty) {
            return Err(Error::Validation("every character needs at least one phoneme".into()));
        }
        Ok(Self { chars, phonemes: groups })
    }

    fn utterance(&self) -> Utterance {
        Utterance {
            id: "adhoc".into(),
            speaker: String::new(),
            chars: self.chars.clone(),
            phonemes: self.phonemes.iter().flatten().cloned().collect(),
            grouping: self.phonemes.iter().map(Vec::len).collect(),
            char_labels: None,
            audio_ref: None,
            duration_ref: None,
            label_source: LabelSource::None,
        }
    }
}

/// Parses `0,1,0` into character labels.
pub fn parse_labels(s: &str) -> Result<CharLabelSeq> {
    s.split(',')
        .map(|t| {
            let v: i64 = t
                .trim()
                .parse()
                .map_err(|_| Error::Validation(format!("label '{}' is not an integer", t.trim())))?;
            LabelClass::try_from(v)
        })
        .collect::<Result<Vec<_>>>()
        .map(CharLabelSeq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSidecar {
    pub schema_version: u32,
    pub utt_id: String,
    pub checkpoint_sha256: String,
    pub label_source: AppliedLabelSource,
    /// Character-level labels that conditioned synthesis.
    pub applied_labels: Vec<LabelClass>,
    /// Raw per-phoneme label-predictor outputs.
    pub label_estimates: Vec<f64>,
    pub durations: Vec<usize>,
    pub frames: usize,
    pub mel: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wav: Option<PathBuf>,
    /// `griffin_lim`, or the external command that produced the waveform.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocoder: Option<String>,
}

pub enum SynthSource<'a> {
    /// An utterance of `corpus`, with its conversation as history.
    Utterance { corpus: &'a Corpus, utt_id: &'a str },
    Text(&'a AdHocText),
}

/// Builds the item to synthesize, with history embeddings from `cfg.embed`.
pub fn synthesis_item(model: &AcousticModel, cfg: &RunConfig, cache: Option<PathBuf>, src: &SynthSource<'_>) -> Result<AcousticItem> {
    let embedder = build_embedder(&cfg.embed, cache);
    let history = model.config().history;
    let (corpus, id) = match src {
        SynthSource::Utterance { corpus, utt_id } => {
            if !corpus.utterances().any(|u| u.id == *utt_id) {
                return Err(Error::Validation(format!("utterance '{utt_id}' is not in the corpus")));
            }
            ((*corpus).clone(), utt_id.to_string())
        }
        SynthSource::Text(t) => {
            let u = t.utterance();
            let id = u.id.clone();
            let corpus = Corpus::new(
                vec![Conversation {
                    id: "adhoc".into(),
                    utterances: vec![u],
                }],
                Default::default(),
            )?;
            (corpus, id)
        }
    };
    let mut items = acoustic_items(&corpus, None, model.vocab(), &embedder, history, |u| u.id == id)?;
    items.pop().ok_or_else(|| Error::Validation(format!("utterance '{id}' not found")))
}

/// Runs `vocoder <mel> <wav>`, or Griffin-Lim when no command is given.
pub fn vocode(mel: &MelSpectrogram, mel_path: &Path, wav_path: &Path, cfg: &FeatureConfig, vocoder: Option<&str>) -> Result<String> {
    match vocoder {
        Some(cmd) => {
            let status = Command::new(cmd)
                .arg(mel_path)
                .arg(wav_path)
                .status()
                .map_err(|e| Error::io(cmd, e))?;
            if !status.success() {
                return Err(Error::Audio(format!("vocoder '{cmd}' exited with {status}")));
            }
            if !wav_path.exists() {
                return Err(Error::Audio(format!("vocoder '{cmd}' wrote no {}", wav_path.display())));
            }
            Ok(cmd.to_string())
        }
        None => {
            write_wav(wav_path, &griffin_lim(mel, cfg, GRIFFIN_LIM_ITERATIONS), cfg.sample_rate)?;
            Ok("griffin_lim".into())
        }
    }
}

/// Synthesizes one item and writes `<stem>.mel`, `<stem>.json` and, unless
/// `vocoder` is `Some(None)`, `<stem>.wav` under `out_dir`.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_to(
    model: &AcousticModel,
    checkpoint: &Path,
    item: &AcousticItem,
    labels: Option<&CharLabelSeq>,
    features: &FeatureConfig,
    out_dir: &Path,
    stem: &str,
    vocoder: Option<Option<&str>>,
) -> Result<SynthSidecar> {
    let out = model.synthesize(SynthesisInput { item, labels })?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mel = MelSpectrogram {
        frames: out.mel,
        sample_rate: features.sample_rate,
        hop: features.hop_length,
        win: features.win_length,
    };
    let mel_path = out_dir.join(format!("{stem}.mel"));
    write_mel(&mel_path, &mel)?;
    let (wav, vocoder) = match vocoder {
        Some(v) => {
            let wav_path = out_dir.join(format!("{stem}.wav"));
            let used = vocode(&mel, &mel_path, &wav_path, features, v)?;
            (Some(wav_path), Some(used))
        }
        None => (None, None),
    };
    let sidecar = SynthSidecar {
        schema_version: SYNTH_SCHEMA_VERSION,
        utt_id: item.utt_id.clone(),
        checkpoint_sha256: file_sha256(checkpoint)?,
        label_source: out.label_source,
        applied_labels: out.applied_char_labels.0,
        label_estimates: out.label_estimates,
        durations: out.durations,
        frames: mel.num_frames(),
        mel: mel_path,
        wav,
        vocoder,
    };
    write_atomic(
        &out_dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&sidecar)?.as_bytes(),
    )?;
    Ok(sidecar)
}

/// Difference between two syntheses of one item over the characters whose
/// label is non-zero in `labels`. Each output is segmented by its own
/// durations; spans are compared frame by frame up to the shorter length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionDiff {
    pub characters: usize,
    pub frames_a: usize,
    pub frames_b: usize,
    /// Mean absolute mel difference over the compared frames.
    pub mean_abs_diff: f64,
}

pub fn label_region_difference(
    mel_a: &ndarray::Array2<f32>,
    durations_a: &[usize],
    mel_b: &ndarray::Array2<f32>,
    durations_b: &[usize],
    grouping: &[usize],
    labels: &CharLabelSeq,
) -> Result<RegionDiff> {
    let spans = |durations: &[usize], frames: usize| -> Result<Vec<(usize, usize)>> {
        if durations.len() != grouping.iter().sum::<usize>() || durations.iter().sum::<usize>() != frames {
            return Err(Error::Shape("durations do not match the grouping and mel length".into()));
        }
        let mut out = Vec::with_capacity(grouping.len());
        let (mut p, mut f) = (0, 0);
        for &g in grouping {
            let len: usize = durations[p..p + g].iter().sum();
            out.push((f, f + len));
            p += g;
            f += len;
        }
        Ok(out)
    };
    if labels.len() != grouping.len() {
        return Err(Error::Validation(format!("{} labels for {} characters", labels.len(), grouping.len())));
    }
    let sa = spans(durations_a, mel_a.nrows())?;
    let sb = spans(durations_b, mel_b.nrows())?;
    let mut diff = RegionDiff {
        characters: 0,
        frames_a: 0,
        frames_b: 0,
        mean_abs_diff: 0.0,
    };
    let (mut sum, mut cells) = (0.0f64, 0usize);
    for (c, l) in labels.0.iter().enumerate() {
        if *l == LabelClass::None {
            continue;
        }
        diff.characters += 1;
        let (a0, a1) = sa[c];
        let (b0, b1) = sb[c];
        diff.frames_a += a1 - a0;
        diff.frames_b += b1 - b0;
        for k in 0..(a1 - a0).min(b1 - b0) {
            for (x, y) in mel_a.row(a0 + k).iter().zip(mel_b.row(b0 + k)) {
                sum += (x - y).abs() as f64;
                cells += 1;
            }
        }
    }
    if cells > 0 {
        diff.mean_abs_diff = sum / cells as f64;
    }
    Ok(diff)
}
