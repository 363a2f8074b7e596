//! Log-mel spectrogram extraction.
//!
//! Framing is centered: the signal is reflection-padded by `n_fft / 2` on
//! both sides and frame `t` starts at `t * hop` in the padded signal, giving
//! `1 + n / hop` frames for `n` samples. Each frame is multiplied by a
//! periodic Hann window, transformed, and its magnitude spectrum projected
//! onto a Slaney-style mel filterbank (area-normalized triangles). Values are
//! `ln(max(mel, log_floor))`.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::resample::resample;
use super::FeatureConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// `T x n_mels` log-mel magnitudes.
    pub frames: Array2<f32>,
    pub sample_rate: u32,
    pub hop: usize,
    pub win: usize,
}

impl MelSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.ncols()
    }

    pub fn validate(&self, n_mels: usize) -> Result<()> {
        if self.n_mels() != n_mels {
            return Err(Error::Shape(format!("mel has {} bands, expected {n_mels}", self.n_mels())));
        }
        if self.frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("mel contains non-finite values".into()));
        }
        Ok(())
    }

    /// Truncates or edge-pads to exactly `t` frames.
    pub fn fit_frames(&mut self, t: usize) {
        let cur = self.num_frames();
        if t == cur || cur == 0 {
            return;
        }
        let n_mels = self.n_mels();
        let mut out = Array2::<f32>::zeros((t, n_mels));
        for i in 0..t {
            out.row_mut(i).assign(&self.frames.row(i.min(cur - 1)));
        }
        self.frames = out;
    }
}

pub fn frame_count(n_samples: usize, hop: usize) -> usize {
    1 + n_samples / hop
}

/// Index into `0..n` for a reflection (without edge repeat) of position `i`.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

pub(crate) fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

fn hz_to_mel(f: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if f >= min_log_hz {
        min_log_mel + (f / min_log_hz).ln() / logstep
    } else {
        f / f_sp
    }
}

fn mel_to_hz(m: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if m >= min_log_mel {
        min_log_hz * (logstep * (m - min_log_mel)).exp()
    } else {
        f_sp * m
    }
}

/// `n_mels x (n_fft/2 + 1)` filterbank.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize, fmin: f64, fmax: f64) -> Array2<f64> {
    let n_bins = n_fft / 2 + 1;
    let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::<f64>::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let enorm = 2.0 / (hi - lo);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let lower = (f - lo) / (c - lo);
            let upper = (hi - f) / (hi - c);
            fb[[m, k]] = lower.min(upper).max(0.0) * enorm;
        }
    }
    fb
}

/// Short-time magnitude spectra of an `f64` signal, `T x (n_fft/2+1)`.
pub(crate) struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, win_length: usize, hop: usize) -> Self {
        // A shorter window is zero-padded to n_fft and centered.
        let mut window = vec![0.0; n_fft];
        let w = hann_periodic(win_length.min(n_fft));
        let off = (n_fft - w.len()) / 2;
        window[off..off + w.len()].copy_from_slice(&w);
        Self {
            n_fft,
            hop,
            window,
            fft: FftPlanner::new().plan_fft_forward(n_fft),
        }
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn complex(&self, x: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let n = x.len();
        let pad = (self.n_fft / 2) as isize;
        let frames = frame_count(n, self.hop);
        let mut out = Vec::with_capacity(frames);
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        for t in 0..frames {
            let start = (t * self.hop) as isize - pad;
            for (j, slot) in buf.iter_mut().enumerate() {
                let v = x[reflect_index(start + j as isize, n)];
                *slot = Complex::new(v * self.window[j], 0.0);
            }
            self.fft.process(&mut buf);
            out.push(buf[..self.n_fft / 2 + 1].to_vec());
        }
        out
    }
}

pub(crate) fn prepare_signal(waveform: &[f32], source_rate: u32, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    if waveform.is_empty() {
        return Err(Error::Validation("empty waveform".into()));
    }
    if source_rate == 0 {
        return Err(Error::Validation("sample rate must be positive".into()));
    }
    if let Some(i) = waveform.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("waveform sample {i} is not finite")));
    }
    let x: Vec<f64> = waveform.iter().map(|&v| v as f64).collect();
    Ok(resample(&x, source_rate, cfg.sample_rate))
}

pub fn extract_mel(waveform: &[f32], source_rate: u32, cfg: &FeatureConfig) -> Result<MelSpectrogram> {
    let x = prepare_signal(waveform, source_rate, cfg)?;
    Ok(mel_from_signal(&x, cfg))
}

pub(crate) fn mel_from_signal(x: &[f64], cfg: &FeatureConfig) -> MelSpectrogram {
    let stft = Stft::new(cfg.n_fft, cfg.win_length, cfg.hop_length);
    let fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax);
    let spectra = stft.complex(x);
    let mut frames = Array2::<f32>::zeros((spectra.len(), cfg.n_mels));
    for (t, spec) in spectra.iter().enumerate() {
        let mag: Vec<f64> = spec.iter().map(|c| c.norm()).collect();
        for m in 0..cfg.n_mels {
            let v: f64 = fb.row(m).iter().zip(&mag).map(|(w, a)| w * a).sum();
            frames[[t, m]] = v.max(cfg.log_floor).ln() as f32;
        }
    }
    MelSpectrogram {
        frames,
        sample_rate: cfg.sample_rate,
        hop: cfg.hop_length,
        win: cfg.win_length,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cfg() -> FeatureConfig {
        FeatureConfig::default()
    }

    #[test]
    fn one_second_frame_count_matches_reference_stft() {
        // torch.stft(n_fft=1024, hop_length=256, center=True) yields 87 frames for 22050 samples.
        let mel = extract_mel(&vec![0.1f32; 22050], 22050, &cfg()).unwrap();
        assert_eq!(mel.num_frames(), 87);
        assert_eq!(mel.n_mels(), 80);
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let mel = extract_mel(&vec![0.0f32; 5000], 22050, &cfg()).unwrap();
        let floor = (1e-5f64).ln() as f32;
        assert!(mel.frames.iter().all(|&v| v == floor));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(extract_mel(&[], 22050, &cfg()).is_err());
        assert!(extract_mel(&[0.0, f32::NAN], 22050, &cfg()).is_err());
        assert!(extract_mel(&[0.0, 1.0], 0, &cfg()).is_err());
    }

    #[test]
    fn deterministic() {
        let x: Vec<f32> = (0..4000).map(|i| ((i * 7919) % 113) as f32 / 113.0 - 0.5).collect();
        let a = extract_mel(&x, 16000, &cfg()).unwrap();
        let b = extract_mel(&x, 16000, &cfg()).unwrap();
        assert_eq!(a.frames, b.frames);
    }

    /// 220 Hz tone with 50 ms raised-cosine fades and 100 ms of silence on each side.
    fn faded_tone(sr: f64) -> Vec<f32> {
        let silence = (0.1 * sr) as usize;
        let body = (0.8 * sr) as usize;
        let fade = 0.05 * sr;
        let mut out = vec![0.0f32; silence];
        for i in 0..body {
            let t = i as f64 / sr;
            let env = if (i as f64) < fade {
                0.5 - 0.5 * (PI * i as f64 / fade).cos()
            } else if ((body - i) as f64) < fade {
                0.5 - 0.5 * (PI * (body - i) as f64 / fade).cos()
            } else {
                1.0
            };
            out.push((0.5 * env * (2.0 * PI * 220.0 * t).sin()) as f32);
        }
        out.extend(std::iter::repeat_n(0.0, silence));
        out
    }

    #[test]
    fn resampled_tone_matches_native_rate() {
        let native = extract_mel(&faded_tone(22050.0), 22050, &cfg()).unwrap();
        let resampled = extract_mel(&faded_tone(44100.0), 44100, &cfg()).unwrap();
        assert_eq!(native.num_frames(), resampled.num_frames());
        let worst = native
            .frames
            .iter()
            .zip(resampled.frames.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 1e-3, "max per-bin difference {worst}");
    }

    #[test]
    fn matches_reference_mel_values() {
        // Values from librosa.feature.melspectrogram(power=1, n_fft=1024,
        // hop_length=256, n_mels=80, fmin=0, fmax=8000, center=True,
        // pad_mode="reflect", norm="slaney", htk=False), then ln(max(x, 1e-5)),
        // for 0.5*sin(2*pi*220*t) + 0.25*sin(2*pi*3000*t), 8000 samples at 22050 Hz.
        let x: Vec<f32> = (0..8000)
            .map(|i| {
                let t = i as f64 / 22050.0;
                (0.5 * (2.0 * PI * 220.0 * t).sin() + 0.25 * (2.0 * PI * 3000.0 * t).sin()) as f32
            })
            .collect();
        let mel = extract_mel(&x, 22050, &cfg()).unwrap();
        assert_eq!(mel.num_frames(), REFERENCE_FRAMES);
        for &(t, m, v) in REFERENCE_VALUES {
            let got = mel.frames[[t, m]] as f64;
            assert!((got - v).abs() < 1e-4, "frame {t} bin {m}: {got} vs {v}");
        }
    }

    const REFERENCE_FRAMES: usize = 32;
    const REFERENCE_VALUES: &[(usize, usize, f64)] = &[
        (0, 0, -0.24949167620101736),
        (0, 5, 0.877147465342247),
        (10, 3, -2.8847192384974942),
        (10, 4, 0.5386900874490711),
        (10, 40, -11.512925464970229),
        (10, 50, -9.442610821108563),
        (15, 60, -10.693866533884052),
        (31, 79, -6.345075657175948),
        (20, 20, -9.537668559812325),
        (5, 47, -10.864593200539725),
    ];
}
