//! Seeded synthetic conversational corpus with planted spontaneous behaviors.
//!
//! Stands in for real spontaneous corpora. Behaviors are planted only after
//! *cue* characters, so text carries information about where they can
//! occur. Each planted behavior is rendered with either a clear or a subtle
//! acoustic signature. Non-cue characters occasionally receive confounders:
//! events acoustically identical to the subtle signatures but not labeled.
//! Audio alone therefore cannot separate subtle behaviors from confounders;
//! audio plus text can.
//!
//! A filled pause appends a low, nasal filler segment after the character's
//! last phoneme. A prolongation stretches the final phoneme by the configured
//! factor with a falling pitch glide and decaying amplitude. Both extra
//! segments are attributed to the character's last phoneme in the duration
//! file, as a forced aligner would do with untranscribed material.
//!
//! Random streams are independent ChaCha8 generators keyed by
//! `SHA-256(seed LE || tag)`. The `behavior` stream draws, for each
//! utterance in corpus order and each character in order, four uniforms
//! `(planted fp, planted pr, subtle fp, subtle pr)` at cue characters and
//! two uniforms `(confound fp, confound pr)` elsewhere.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{write_manifest, Conversation, Corpus, LabelSource, Split, Utterance};
use crate::error::{Error, Result};
use crate::features::audio::write_wav;
use crate::labels::{combine, BehaviorFlags, CharLabelSeq};
use crate::util::keyed_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub char: String,
    pub phonemes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerVoice {
    pub name: String,
    /// Base fundamental frequency in Hz.
    pub f0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub conversations: usize,
    pub utterances_per_conversation: usize,
    pub min_chars: usize,
    pub max_chars: usize,
    pub vocabulary: Vec<VocabEntry>,
    pub cue_chars: Vec<String>,
    /// Probability that a drawn character comes from the cue set.
    pub cue_prob: f64,
    /// Probability of a planted filled pause at a cue character.
    pub rate_fp: f64,
    /// Probability of a planted prolongation at a cue character.
    pub rate_pr: f64,
    /// Fraction of planted behaviors rendered with the subtle signature.
    pub subtle_fraction: f64,
    /// Per non-cue character, per behavior probability of an unlabeled confounder.
    pub confound_rate: f64,
    pub prolong_factor: f64,
    pub subtle_prolong_factor: f64,
    pub filler_frames: [usize; 2],
    pub subtle_filler_frames: [usize; 2],
    pub initial_frames: [usize; 2],
    pub final_frames: [usize; 2],
    /// Standard deviation of additive white noise (0 = clean).
    pub noise_amplitude: f64,
    /// The last `test_conversations` conversations form the test split.
    pub test_conversations: usize,
    /// `planted` writes labels into the manifest; `none` withholds them.
    pub label_source: LabelSource,
    pub speakers: Vec<SpeakerVoice>,
    pub sample_rate: u32,
    pub hop: usize,
    pub id_prefix: String,
}

/// Mandarin characters with pinyin-style phonemes (initial + toned final).
pub fn default_vocabulary() -> Vec<VocabEntry> {
    const ENTRIES: &[(&str, &[&str])] = &[
        ("我", &["w", "o3"]),
        ("你", &["n", "i3"]),
        ("他", &["t", "a1"]),
        ("是", &["sh", "i4"]),
        ("的", &["d", "e5"]),
        ("了", &["l", "e5"]),
        ("在", &["z", "ai4"]),
        ("有", &["y", "ou3"]),
        ("们", &["m", "en5"]),
        ("来", &["l", "ai2"]),
        ("说", &["sh", "uo1"]),
        ("么", &["m", "e5"]),
        ("好", &["h", "ao3"]),
        ("去", &["q", "v4"]),
        ("看", &["k", "an4"]),
        ("吃", &["ch", "i1"]),
        ("天", &["t", "ian1"]),
        ("还", &["h", "ai2"]),
        ("想", &["x", "iang3"]),
        ("对", &["d", "ui4"]),
        ("也", &["y", "e3"]),
        ("啊", &["a1"]),
        ("一", &["y", "i1"]),
        ("饭", &["f", "an4"]),
        ("今", &["j", "in1"]),
        ("明", &["m", "ing2"]),
        ("很", &["h", "en3"]),
        ("会", &["h", "ui4"]),
        ("没", &["m", "ei2"]),
        ("要", &["y", "ao4"]),
        ("哦", &["o2"]),
        ("那", &["n", "a4"]),
        ("就", &["j", "iu4"]),
        ("这", &["zh", "e4"]),
        ("然", &["r", "an2"]),
        ("呢", &["n", "e5"]),
        ("吧", &["b", "a5"]),
    ];
    ENTRIES
        .iter()
        .map(|(c, p)| VocabEntry {
            char: c.to_string(),
            phonemes: p.iter().map(|s| s.to_string()).collect(),
        })
        .collect()
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            conversations: 40,
            utterances_per_conversation: 8,
            min_chars: 6,
            max_chars: 14,
            vocabulary: default_vocabulary(),
            cue_chars: ["那", "就", "这", "然", "呢", "吧"].iter().map(|s| s.to_string()).collect(),
            cue_prob: 0.3,
            rate_fp: 0.35,
            rate_pr: 0.35,
            subtle_fraction: 0.4,
            confound_rate: 0.25,
            prolong_factor: 2.6,
            subtle_prolong_factor: 1.7,
            filler_frames: [10, 14],
            subtle_filler_frames: [4, 6],
            initial_frames: [2, 3],
            final_frames: [5, 7],
            noise_amplitude: 0.0,
            test_conversations: 8,
            label_source: LabelSource::Planted,
            speakers: vec![
                SpeakerVoice {
                    name: "A".into(),
                    f0: 210.0,
                },
                SpeakerVoice {
                    name: "B".into(),
                    f0: 175.0,
                },
            ],
            sample_rate: 22050,
            hop: 256,
            id_prefix: String::new(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic corpus: {m}")));
        for (name, v) in [
            ("cue_prob", self.cue_prob),
            ("rate_fp", self.rate_fp),
            ("rate_pr", self.rate_pr),
            ("subtle_fraction", self.subtle_fraction),
            ("confound_rate", self.confound_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name}={v} is outside [0, 1]"));
            }
        }
        if self.vocabulary.is_empty() {
            return bad("empty vocabulary".into());
        }
        if let Some(e) = self.vocabulary.iter().find(|e| e.phonemes.is_empty()) {
            return bad(format!("character '{}' has no phonemes", e.char));
        }
        if let Some(c) = self.cue_chars.iter().find(|c| !self.vocabulary.iter().any(|e| &e.char == *c)) {
            return bad(format!("cue character '{c}' not in vocabulary"));
        }
        if self.cue_prob > 0.0 && self.cue_chars.is_empty() {
            return bad("cue_prob > 0 but no cue characters".into());
        }
        if self.cue_prob < 1.0 && self.vocabulary.len() == self.cue_chars.len() {
            return bad("cue_prob < 1 but every character is a cue".into());
        }
        if self.min_chars == 0 || self.min_chars > self.max_chars {
            return bad(format!("invalid character range {}..={}", self.min_chars, self.max_chars));
        }
        if self.speakers.is_empty() {
            return bad("no speakers".into());
        }
        if self.prolong_factor < 1.0 || self.subtle_prolong_factor < 1.0 {
            return bad("prolongation factors must be >= 1".into());
        }
        for r in [
            self.filler_frames,
            self.subtle_filler_frames,
            self.initial_frames,
            self.final_frames,
        ] {
            if r[0] == 0 || r[0] > r[1] {
                return bad(format!("invalid frame range {r:?}"));
            }
        }
        if !matches!(self.label_source, LabelSource::Planted | LabelSource::None) {
            return bad("label_source must be planted or none".into());
        }
        if self.test_conversations > self.conversations {
            return bad("more test conversations than conversations".into());
        }
        Ok(())
    }
}

/// Acoustic plan for one phoneme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonemeRender {
    pub symbol: String,
    pub base_frames: usize,
    /// Prolongation extension frames (0 when absent).
    pub extension_frames: usize,
    /// Filler frames appended after the phoneme (0 when absent).
    pub filler_frames: usize,
    pub filler_gain: f64,
}

impl PhonemeRender {
    pub fn total_frames(&self) -> usize {
        self.base_frames + self.extension_frames + self.filler_frames
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRender {
    pub utt_id: String,
    pub f0: f64,
    pub noise_seed: u64,
    pub phonemes: Vec<PhonemeRender>,
}

impl UtteranceRender {
    pub fn durations(&self) -> Vec<usize> {
        self.phonemes.iter().map(PhonemeRender::total_frames).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// Planted labels for every utterance, also when the manifest withholds them.
    pub truth: BTreeMap<String, CharLabelSeq>,
    pub renders: BTreeMap<String, UtteranceRender>,
    pub config: SyntheticConfig,
}

fn uniform_frames(rng: &mut ChaCha8Rng, r: [usize; 2]) -> usize {
    rng.random_range(r[0]..=r[1])
}

pub fn generate_synthetic_corpus(seed: u64, cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut text_rng = keyed_rng(seed, "text");
    let mut behavior_rng = keyed_rng(seed, "behavior");
    let mut acoustic_rng = keyed_rng(seed, "acoustic");

    let cues: Vec<&VocabEntry> = cfg
        .vocabulary
        .iter()
        .filter(|e| cfg.cue_chars.contains(&e.char))
        .collect();
    let plain: Vec<&VocabEntry> = cfg
        .vocabulary
        .iter()
        .filter(|e| !cfg.cue_chars.contains(&e.char))
        .collect();

    let mut conversations = Vec::with_capacity(cfg.conversations);
    let mut split = BTreeMap::new();
    let mut truth = BTreeMap::new();
    let mut renders = BTreeMap::new();

    for ci in 0..cfg.conversations {
        let conv_id = format!("{}c{ci:03}", cfg.id_prefix);
        let is_test = ci >= cfg.conversations - cfg.test_conversations;
        let mut utterances = Vec::with_capacity(cfg.utterances_per_conversation);
        for ui in 0..cfg.utterances_per_conversation {
            let id = format!("{conv_id}/{ui}");
            let speaker = &cfg.speakers[ui % cfg.speakers.len()];
            let n_chars = text_rng.random_range(cfg.min_chars..=cfg.max_chars);
            let mut entries = Vec::with_capacity(n_chars);
            for _ in 0..n_chars {
                let cue = !cues.is_empty() && text_rng.random::<f64>() < cfg.cue_prob;
                let pool = if cue { &cues } else { &plain };
                entries.push((pool[text_rng.random_range(0..pool.len())], cue));
            }

            let f0 = speaker.f0 * acoustic_rng.random_range(0.95..1.05);
            let mut labels = Vec::with_capacity(n_chars);
            let mut phonemes = Vec::new();
            for (entry, cue) in &entries {
                // Behavior stream: fixed number of draws per position.
                let (fp, pr, fp_subtle, pr_subtle) = if *cue {
                    let u_fp = behavior_rng.random::<f64>();
                    let u_pr = behavior_rng.random::<f64>();
                    let s_fp = behavior_rng.random::<f64>();
                    let s_pr = behavior_rng.random::<f64>();
                    (
                        u_fp < cfg.rate_fp,
                        u_pr < cfg.rate_pr,
                        s_fp < cfg.subtle_fraction,
                        s_pr < cfg.subtle_fraction,
                    )
                } else {
                    let c_fp = behavior_rng.random::<f64>();
                    let c_pr = behavior_rng.random::<f64>();
                    // Confounders reuse the subtle slots; they are never labeled.
                    (false, false, c_fp < cfg.confound_rate, c_pr < cfg.confound_rate)
                };
                labels.push(combine(BehaviorFlags::new(fp, pr)));
                let render_fp = fp || (!*cue && fp_subtle);
                let render_pr = pr || (!*cue && pr_subtle);
                let subtle_fp = !*cue || fp_subtle;
                let subtle_pr = !*cue || pr_subtle;

                let last = entry.phonemes.len() - 1;
                for (pi, sym) in entry.phonemes.iter().enumerate() {
                    let is_final = pi == last;
                    let base = if is_final {
                        uniform_frames(&mut acoustic_rng, cfg.final_frames)
                    } else {
                        uniform_frames(&mut acoustic_rng, cfg.initial_frames)
                    };
                    let mut ph = PhonemeRender {
                        symbol: sym.clone(),
                        base_frames: base,
                        extension_frames: 0,
                        filler_frames: 0,
                        filler_gain: 0.0,
                    };
                    if is_final && render_pr {
                        let factor = if subtle_pr {
                            cfg.subtle_prolong_factor
                        } else {
                            cfg.prolong_factor
                        };
                        ph.extension_frames = ((base as f64) * (factor - 1.0)).round().max(1.0) as usize;
                    }
                    if is_final && render_fp {
                        let (range, gain) = if subtle_fp {
                            (cfg.subtle_filler_frames, 0.5)
                        } else {
                            (cfg.filler_frames, 0.9)
                        };
                        ph.filler_frames = uniform_frames(&mut acoustic_rng, range);
                        ph.filler_gain = gain;
                    }
                    phonemes.push(ph);
                }
            }

            let char_labels = CharLabelSeq(labels);
            let utt = Utterance {
                id: id.clone(),
                speaker: speaker.name.clone(),
                chars: entries.iter().map(|(e, _)| e.char.clone()).collect(),
                phonemes: entries.iter().flat_map(|(e, _)| e.phonemes.clone()).collect(),
                grouping: entries.iter().map(|(e, _)| e.phonemes.len()).collect(),
                char_labels: (cfg.label_source == LabelSource::Planted).then(|| char_labels.clone()),
                audio_ref: None,
                duration_ref: None,
                label_source: cfg.label_source,
            };
            truth.insert(id.clone(), char_labels);
            renders.insert(
                id.clone(),
                UtteranceRender {
                    utt_id: id.clone(),
                    f0,
                    noise_seed: acoustic_rng.random(),
                    phonemes,
                },
            );
            split.insert(id, if is_test { Split::Test } else { Split::Train });
            utterances.push(utt);
        }
        conversations.push(Conversation {
            id: conv_id,
            utterances,
        });
    }

    Ok(SyntheticCorpus {
        corpus: Corpus::new(conversations, split)?,
        truth,
        renders,
        config: cfg.clone(),
    })
}

/// Deterministic spectral envelope of a phoneme symbol.
struct Timbre {
    voiced: bool,
    formants: [f64; 2],
    /// Pitch contour multipliers at segment start, middle and end.
    contour: [f64; 3],
}

fn timbre(symbol: &str) -> Timbre {
    let tone = symbol.chars().last().and_then(|c| c.to_digit(10));
    let base: String = symbol.chars().filter(|c| !c.is_ascii_digit()).collect();
    let d = Sha256::digest(base.as_bytes());
    let f1 = 300.0 + 600.0 * (d[0] as f64 / 255.0);
    let f2 = 1000.0 + 1800.0 * (d[1] as f64 / 255.0);
    let contour = match tone {
        Some(1) => [1.1, 1.1, 1.1],
        Some(2) => [0.9, 1.0, 1.15],
        Some(3) => [0.9, 0.78, 0.95],
        Some(4) => [1.2, 1.0, 0.82],
        _ => [1.0, 0.98, 0.96],
    };
    Timbre {
        voiced: tone.is_some(),
        formants: [f1, f2],
        contour,
    }
}

fn formant_gain(freq: f64, formants: &[f64; 2], bandwidth: f64) -> f64 {
    let g: f64 = formants
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let w = if i == 0 { 1.0 } else { 0.6 };
            w * (-(freq - f).powi(2) / (2.0 * bandwidth * bandwidth)).exp()
        })
        .sum();
    0.05 + g
}

const MAX_HARMONICS: usize = 48;
const HARMONIC_CEILING_HZ: f64 = 6000.0;

struct Oscillator {
    phases: [f64; MAX_HARMONICS],
    gains: [f64; MAX_HARMONICS],
}

impl Oscillator {
    fn new() -> Self {
        Self {
            phases: [0.0; MAX_HARMONICS],
            gains: [0.0; MAX_HARMONICS],
        }
    }

    /// Appends a harmonic segment. `f0_at` and `amp_at` take the position in
    /// the segment in `[0, 1)`. Harmonic gains are crossfaded from the
    /// previous segment over the first 128 samples.
    fn render(
        &mut self,
        out: &mut Vec<f64>,
        n: usize,
        sr: f64,
        f0_at: impl Fn(f64) -> f64,
        amp_at: impl Fn(f64) -> f64,
        target: &[f64; MAX_HARMONICS],
    ) {
        let fade = 128.min(n.max(1));
        let start = self.gains;
        for s in 0..n {
            let pos = s as f64 / n as f64;
            let f0 = f0_at(pos);
            let a = amp_at(pos);
            let mix = ((s + 1) as f64 / fade as f64).min(1.0);
            let mut acc = 0.0;
            for h in 0..MAX_HARMONICS {
                let fh = f0 * (h + 1) as f64;
                let g = start[h] + (target[h] - start[h]) * mix;
                if fh < sr / 2.0 {
                    self.phases[h] = (self.phases[h] + 2.0 * PI * fh / sr) % (2.0 * PI);
                    acc += g * self.phases[h].sin();
                }
            }
            out.push(a * acc);
        }
        self.gains = *target;
    }
}

fn harmonic_gains(f0: f64, formants: &[f64; 2], bandwidth: f64) -> [f64; MAX_HARMONICS] {
    let mut g = [0.0; MAX_HARMONICS];
    let mut total = 0.0;
    for (h, slot) in g.iter_mut().enumerate() {
        let fh = f0 * (h + 1) as f64;
        if fh < HARMONIC_CEILING_HZ {
            *slot = formant_gain(fh, formants, bandwidth);
            total += *slot;
        }
    }
    if total > 0.0 {
        for v in &mut g {
            *v /= total;
        }
    }
    g
}

fn contour_at(c: &[f64; 3], pos: f64) -> f64 {
    if pos < 0.5 {
        c[0] + (c[1] - c[0]) * pos * 2.0
    } else {
        c[1] + (c[2] - c[1]) * (pos - 0.5) * 2.0
    }
}

/// Renders the utterance waveform; length is `sum(durations) * hop` samples.
pub fn render_waveform(render: &UtteranceRender, cfg: &SyntheticConfig) -> Vec<f32> {
    let sr = cfg.sample_rate as f64;
    let hop = cfg.hop;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(render.noise_seed);
    let mut osc = Oscillator::new();
    let mut out: Vec<f64> = Vec::with_capacity(render.durations().iter().sum::<usize>() * hop);
    let f0 = render.f0;
    let silent = [0.0; MAX_HARMONICS];

    for ph in &render.phonemes {
        let t = timbre(&ph.symbol);
        let base_n = ph.base_frames * hop;
        if t.voiced {
            let gains = harmonic_gains(f0 * t.contour[1], &t.formants, 220.0);
            osc.render(&mut out, base_n, sr, |p| f0 * contour_at(&t.contour, p), |_| 0.6, &gains);
            if ph.extension_frames > 0 {
                let end_f0 = f0 * t.contour[2];
                osc.render(
                    &mut out,
                    ph.extension_frames * hop,
                    sr,
                    |p| end_f0 * (1.0 - 0.15 * p),
                    |p| 0.6 * (1.0 - 0.35 * p),
                    &gains,
                );
            }
        } else {
            // Fricative-like burst: random-phase partials inside a band.
            let center = t.formants[1] + 2000.0;
            let partials: Vec<(f64, f64)> = (0..12)
                .map(|_| {
                    (
                        center + noise_rng.random_range(-900.0..900.0),
                        noise_rng.random_range(0.0..2.0 * PI),
                    )
                })
                .collect();
            let n0 = out.len();
            for s in 0..base_n {
                let tt = (n0 + s) as f64 / sr;
                let v: f64 = partials.iter().map(|&(f, ph0)| (2.0 * PI * f * tt + ph0).sin()).sum();
                out.push(0.04 * v);
            }
            osc.gains = silent;
            if ph.extension_frames > 0 {
                let n0 = out.len();
                for s in 0..ph.extension_frames * hop {
                    let tt = (n0 + s) as f64 / sr;
                    let v: f64 = partials.iter().map(|&(f, ph0)| (2.0 * PI * f * tt + ph0).sin()).sum();
                    out.push(0.03 * v);
                }
            }
        }
        if ph.filler_frames > 0 {
            // Nasal hum: low fundamental, energy concentrated below 600 Hz.
            let filler_f0 = f0 * 0.72;
            let gains = harmonic_gains(filler_f0, &[260.0, 2300.0], 120.0);
            let gain = ph.filler_gain;
            osc.render(&mut out, ph.filler_frames * hop, sr, |_| filler_f0, |_| gain, &gains);
        }
    }

    if cfg.noise_amplitude > 0.0 {
        for v in &mut out {
            // Sum of uniforms approximates a Gaussian without extra dependencies.
            let g: f64 = (0..4).map(|_| noise_rng.random_range(-1.0..1.0)).sum::<f64>() * 0.866;
            *v += cfg.noise_amplitude * g;
        }
    }
    out.into_iter().map(|v| v as f32).collect()
}

impl SyntheticCorpus {
    pub fn render_waveform(&self, utt_id: &str) -> Option<Vec<f32>> {
        self.renders.get(utt_id).map(|r| render_waveform(r, &self.config))
    }

    /// Writes `manifest.jsonl`, `audio/*.wav`, `audio/*.dur` and `truth.jsonl`
    /// under `dir`, and returns the corpus with audio references filled in.
    pub fn write(&self, dir: &Path) -> Result<Corpus> {
        let audio_dir = dir.join("audio");
        fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
        let mut corpus = self.corpus.clone();
        for conv in &mut corpus.conversations {
            for u in &mut conv.utterances {
                let stem = u.id.replace('/', "_");
                let wav = audio_dir.join(format!("{stem}.wav"));
                let dur = audio_dir.join(format!("{stem}.dur"));
                let render = &self.renders[&u.id];
                write_wav(&wav, &render_waveform(render, &self.config), self.config.sample_rate)?;
                crate::features::write_durations(&dur, &render.durations())?;
                u.audio_ref = Some(std::path::absolute(&wav).unwrap_or(wav));
                u.duration_ref = Some(std::path::absolute(&dur).unwrap_or(dur));
            }
        }
        write_manifest(&corpus, dir.join("manifest.jsonl"))?;

        let truth_path = dir.join("truth.jsonl");
        let mut f = fs::File::create(&truth_path).map_err(|e| Error::io(&truth_path, e))?;
        for u in corpus.utterances() {
            let line = serde_json::json!({ "utt_id": u.id, "labels": self.truth[&u.id] });
            writeln!(f, "{line}").map_err(|e| Error::io(&truth_path, e))?;
        }
        Ok(corpus)
    }
}

/// Reads a `truth.jsonl` file written by [`SyntheticCorpus::write`].
pub fn read_truth(path: &Path) -> Result<BTreeMap<String, CharLabelSeq>> {
    #[derive(Deserialize)]
    struct Line {
        utt_id: String,
        labels: CharLabelSeq,
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str::<Line>(l)
                .map(|x| (x.utt_id, x.labels))
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}
