//! Acoustic features: mel-spectrograms, alignment durations, character
//! spans and phoneme-level prosody targets.

pub mod audio;
mod griffin_lim;
mod io;
mod mel;
mod prosody;
mod resample;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use griffin_lim::griffin_lim;
pub use io::{read_mel, read_prosody, write_mel, write_prosody, MEL_FILE_VERSION};
pub use mel::{extract_mel, frame_count, mel_filterbank, MelSpectrogram};
pub use prosody::{extract_prosody, frame_pitch_energy, ProsodyTracks};
pub use resample::resample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Floor applied before the log.
    pub log_floor: f64,
    pub pitch_fmin: f64,
    pub pitch_fmax: f64,
    /// Minimum normalized autocorrelation peak for a voiced frame.
    pub voicing_threshold: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_fft: 1024,
            win_length: 1024,
            hop_length: 256,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-5,
            pitch_fmin: 50.0,
            pitch_fmax: 600.0,
            voicing_threshold: 0.5,
        }
    }
}

/// Per-phoneme frame counts from forced alignment.
pub type DurationSeq = Vec<usize>;

/// Half-open frame interval per character.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpans(pub Vec<(usize, usize)>);

impl CharSpans {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Spans on a time axis downsampled by `stride`: start rounded down, end
    /// rounded up, both clipped to `len` steps.
    pub fn rescale(&self, stride: usize, len: usize) -> CharSpans {
        CharSpans(
            self.0
                .iter()
                .map(|&(s, e)| ((s / stride).min(len), e.div_ceil(stride).min(len)))
                .collect(),
        )
    }
}

pub fn char_spans_from_durations(durations: &[usize], grouping: &[usize]) -> Result<CharSpans> {
    let total: usize = grouping.iter().sum();
    if total != durations.len() {
        return Err(Error::Shape(format!(
            "grouping covers {total} phonemes but {} durations given",
            durations.len()
        )));
    }
    let mut spans = Vec::with_capacity(grouping.len());
    let mut phone = 0;
    let mut frame = 0;
    for &g in grouping {
        let len: usize = durations[phone..phone + g].iter().sum();
        spans.push((frame, frame + len));
        frame += len;
        phone += g;
    }
    Ok(CharSpans(spans))
}

/// Frame boundaries `[start, end)` of every phoneme.
pub fn phoneme_spans(durations: &[usize]) -> Vec<(usize, usize)> {
    let mut start = 0;
    durations
        .iter()
        .map(|&d| {
            let s = (start, start + d);
            start += d;
            s
        })
        .collect()
}

/// Converts time-stamped phone intervals (seconds) into frame counts by
/// rounding each boundary to the nearest frame, so rounding error never
/// accumulates.
pub fn durations_from_intervals(intervals: &[(f64, f64)], sample_rate: u32, hop: usize) -> Result<DurationSeq> {
    let to_frame = |t: f64| (t * sample_rate as f64 / hop as f64).round() as i64;
    let mut out = Vec::with_capacity(intervals.len());
    let mut prev_end: Option<f64> = None;
    for (i, &(start, end)) in intervals.iter().enumerate() {
        if !(start.is_finite() && end.is_finite()) || end < start {
            return Err(Error::Validation(format!("interval {i} is invalid: [{start}, {end})")));
        }
        if let Some(p) = prev_end {
            if (start - p).abs() > 1e-6 {
                return Err(Error::Validation(format!(
                    "interval {i} starts at {start} but the previous one ends at {p}"
                )));
            }
        }
        prev_end = Some(end);
        out.push((to_frame(end) - to_frame(start)).max(0) as usize);
    }
    Ok(out)
}

/// Parses `start<TAB>end<TAB>phone` lines (seconds) into frame durations.
pub fn read_alignment_intervals(path: &Path, sample_rate: u32, hop: usize) -> Result<(Vec<String>, DurationSeq)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut phones = Vec::new();
    let mut intervals = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(parse_err(format!("expected 3 tab-separated fields, got {}", cols.len())));
        }
        let start: f64 = cols[0].trim().parse().map_err(|e| parse_err(format!("start: {e}")))?;
        let end: f64 = cols[1].trim().parse().map_err(|e| parse_err(format!("end: {e}")))?;
        intervals.push((start, end));
        phones.push(cols[2].trim().to_string());
    }
    Ok((phones, durations_from_intervals(&intervals, sample_rate, hop)?))
}

pub fn write_durations(path: &Path, durations: &[usize]) -> Result<()> {
    let mut s = String::with_capacity(durations.len() * 3);
    for d in durations {
        s.push_str(&d.to_string());
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_durations(path: &Path) -> Result<DurationSeq> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Largest mismatch between alignment total and mel frame count that is
/// absorbed by [`reconcile_durations`].
pub const MAX_FRAME_SLACK: usize = 2;

/// Makes `sum(durations) == frames` by adjusting the last phoneme with a
/// nonzero duration. Centered framing yields one frame more than a
/// frame-aligned alignment covers; larger gaps are an error.
pub fn reconcile_durations(durations: &mut [usize], frames: usize) -> Result<()> {
    let total: usize = durations.iter().sum();
    if total.abs_diff(frames) > MAX_FRAME_SLACK {
        return Err(Error::Validation(format!(
            "durations cover {total} frames but the mel has {frames}"
        )));
    }
    if total < frames {
        if let Some(last) = durations.last_mut() {
            *last += frames - total;
        }
    } else {
        let mut excess = total - frames;
        for d in durations.iter_mut().rev() {
            let take = excess.min(*d);
            *d -= take;
            excess -= take;
            if excess == 0 {
                break;
            }
        }
    }
    Ok(())
}
