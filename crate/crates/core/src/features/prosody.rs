//! Pitch and energy targets.
//!
//! Frames follow the mel framing (centered, reflection padded). Pitch per
//! frame is the normalized-autocorrelation estimate in the configured band;
//! energy per frame is the RMS of the Hann-windowed frame. Phoneme values
//! average over the phoneme's frames (pitch over voiced frames only).

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::mel::{frame_count, hann_periodic, prepare_signal, reflect_index};
use super::{phoneme_spans, FeatureConfig, MAX_FRAME_SLACK};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsodyTracks {
    /// Hz; 0 marks unvoiced.
    pub pitch: Vec<f32>,
    pub energy: Vec<f32>,
}

/// Frame-level `(pitch, energy)` of a signal already at `cfg.sample_rate`.
pub fn frame_pitch_energy(x: &[f64], cfg: &FeatureConfig) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let win = cfg.win_length;
    let hop = cfg.hop_length;
    let frames = frame_count(n, hop);
    let window = hann_periodic(win);
    let pad = (win / 2) as isize;
    let sr = cfg.sample_rate as f64;
    let min_lag = (sr / cfg.pitch_fmax).floor().max(2.0) as usize;
    let max_lag = ((sr / cfg.pitch_fmin).ceil() as usize).min(win - 2);

    let fft_len = (2 * win).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(fft_len);
    let inv = planner.plan_fft_inverse(fft_len);

    let mut pitch = Vec::with_capacity(frames);
    let mut energy = Vec::with_capacity(frames);
    let mut frame = vec![0.0; win];
    let mut buf = vec![Complex::new(0.0, 0.0); fft_len];
    let mut cum = vec![0.0; win + 1];

    for t in 0..frames {
        let start = (t * hop) as isize - pad;
        for (j, v) in frame.iter_mut().enumerate() {
            *v = if n == 0 { 0.0 } else { x[reflect_index(start + j as isize, n)] };
        }
        let e: f64 = frame.iter().zip(&window).map(|(v, w)| (v * w) * (v * w)).sum::<f64>() / win as f64;
        energy.push(e.sqrt());

        for i in 0..win {
            cum[i + 1] = cum[i] + frame[i] * frame[i];
        }
        if cum[win] < 1e-10 {
            pitch.push(0.0);
            continue;
        }

        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(if i < win { frame[i] } else { 0.0 }, 0.0);
        }
        fwd.process(&mut buf);
        for c in buf.iter_mut() {
            *c = Complex::new(c.norm_sqr(), 0.0);
        }
        inv.process(&mut buf);
        let scale = fft_len as f64;
        let r = |lag: usize| -> f64 {
            let raw = buf[lag].re / scale;
            let e1 = cum[win - lag];
            let e2 = cum[win] - cum[lag];
            let den = (e1 * e2).sqrt();
            if den <= 0.0 {
                0.0
            } else {
                raw / den
            }
        };
        let corr: Vec<f64> = (min_lag - 1..=max_lag + 1).map(r).collect();
        let at = |lag: usize| corr[lag + 1 - min_lag];
        let best = (min_lag..=max_lag).map(at).fold(f64::NEG_INFINITY, f64::max);
        if best < cfg.voicing_threshold {
            pitch.push(0.0);
            continue;
        }
        // Smallest-lag local peak close to the global best avoids octave errors.
        let lag = (min_lag..=max_lag)
            .find(|&l| {
                let v = at(l);
                v >= 0.9 * best && v >= at(l - 1) && v >= at(l + 1)
            })
            .unwrap_or(min_lag);
        let (a, b, c) = (at(lag - 1), at(lag), at(lag + 1));
        let den = a - 2.0 * b + c;
        let delta = if den.abs() > 1e-12 { 0.5 * (a - c) / den } else { 0.0 };
        pitch.push(sr / (lag as f64 + delta.clamp(-0.5, 0.5)));
    }
    (pitch, energy)
}

pub fn extract_prosody(
    waveform: &[f32],
    source_rate: u32,
    durations: &[usize],
    cfg: &FeatureConfig,
) -> Result<ProsodyTracks> {
    let x = prepare_signal(waveform, source_rate, cfg)?;
    let frames = frame_count(x.len(), cfg.hop_length);
    let total: usize = durations.iter().sum();
    if total > frames || frames - total > MAX_FRAME_SLACK {
        return Err(Error::Validation(format!(
            "durations cover {total} frames but the waveform has {frames}"
        )));
    }
    let (pitch, energy) = frame_pitch_energy(&x, cfg);
    let mut out = ProsodyTracks {
        pitch: Vec::with_capacity(durations.len()),
        energy: Vec::with_capacity(durations.len()),
    };
    for (s, e) in phoneme_spans(durations) {
        if s == e {
            out.pitch.push(0.0);
            out.energy.push(0.0);
            continue;
        }
        let voiced: Vec<f64> = pitch[s..e].iter().copied().filter(|&p| p > 0.0).collect();
        let p = if voiced.is_empty() {
            0.0
        } else {
            voiced.iter().sum::<f64>() / voiced.len() as f64
        };
        out.pitch.push(p as f32);
        out.energy.push((energy[s..e].iter().sum::<f64>() / (e - s) as f64) as f32);
    }
    Ok(out)
}
