//! Griffin-Lim phase reconstruction, used when no neural vocoder is supplied.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::mel::{mel_filterbank, Stft};
use super::{FeatureConfig, MelSpectrogram};

/// Approximate linear magnitudes for a log-mel frame by non-negative
/// multiplicative least squares against the filterbank.
fn mel_to_linear(mel: &MelSpectrogram, cfg: &FeatureConfig) -> Vec<Vec<f64>> {
    let fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax);
    let bins = cfg.n_fft / 2 + 1;
    let fbt_m = |m: &[f64]| -> Vec<f64> {
        (0..bins)
            .map(|k| (0..cfg.n_mels).map(|j| fb[[j, k]] * m[j]).sum())
            .collect()
    };
    mel.frames
        .rows()
        .into_iter()
        .map(|row| {
            let target: Vec<f64> = row.iter().map(|&v| (v as f64).exp()).collect();
            let num = fbt_m(&target);
            let mut s = vec![1e-3; bins];
            for _ in 0..50 {
                let proj: Vec<f64> = (0..cfg.n_mels)
                    .map(|j| fb.row(j).iter().zip(&s).map(|(w, v)| w * v).sum())
                    .collect();
                let den = fbt_m(&proj);
                for k in 0..bins {
                    s[k] *= num[k] / (den[k] + 1e-12);
                }
            }
            s
        })
        .collect()
}

/// Reconstructs a waveform of `frames * hop` samples from a log-mel
/// spectrogram. Deterministic: phase starts at zero.
pub fn griffin_lim(mel: &MelSpectrogram, cfg: &FeatureConfig, iterations: usize) -> Vec<f32> {
    let mags = mel_to_linear(mel, cfg);
    let t = mags.len();
    if t == 0 {
        return Vec::new();
    }
    let n_fft = cfg.n_fft;
    let hop = cfg.hop_length;
    let stft = Stft::new(n_fft, cfg.win_length, hop);
    let inv = FftPlanner::<f64>::new().plan_fft_inverse(n_fft);
    let out_len = (t - 1) * hop;
    let pad = n_fft / 2;

    let istft = |spec: &[Vec<Complex<f64>>]| -> Vec<f64> {
        let total = out_len + n_fft;
        let mut acc = vec![0.0; total];
        let mut norm = vec![0.0; total];
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        for (i, frame) in spec.iter().enumerate() {
            for k in 0..n_fft {
                buf[k] = if k <= n_fft / 2 { frame[k] } else { frame[n_fft - k].conj() };
            }
            inv.process(&mut buf);
            for k in 0..n_fft {
                let w = stft.window()[k];
                acc[i * hop + k] += buf[k].re / n_fft as f64 * w;
                norm[i * hop + k] += w * w;
            }
        }
        (0..out_len.max(1))
            .map(|j| {
                let n = norm[j + pad];
                if n > 1e-8 {
                    acc[j + pad] / n
                } else {
                    0.0
                }
            })
            .collect()
    };

    let mut spec: Vec<Vec<Complex<f64>>> = mags
        .iter()
        .map(|m| m.iter().map(|&a| Complex::new(a, 0.0)).collect())
        .collect();
    let mut x = istft(&spec);
    for _ in 0..iterations {
        let est = stft.complex(&x);
        for (frame, (e, m)) in spec.iter_mut().zip(est.iter().zip(&mags)) {
            for (slot, (c, &a)) in frame.iter_mut().zip(e.iter().zip(m)) {
                let n = c.norm();
                *slot = if n > 1e-12 { c * (a / n) } else { Complex::new(a, 0.0) };
            }
        }
        x = istft(&spec);
    }
    let mut out: Vec<f32> = x.iter().map(|&v| v as f32).collect();
    out.resize(t * hop, 0.0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::extract_mel;
    use std::f64::consts::PI;

    #[test]
    fn reconstruction_recovers_spectral_envelope() {
        let cfg = FeatureConfig::default();
        let x: Vec<f32> = (0..22050)
            .map(|i| (0.5 * (2.0 * PI * 440.0 * i as f64 / 22050.0).sin()) as f32)
            .collect();
        let mel = extract_mel(&x, 22050, &cfg).unwrap();
        let y = griffin_lim(&mel, &cfg, 16);
        assert_eq!(y.len(), mel.num_frames() * cfg.hop_length);
        assert!(y.iter().all(|v| v.is_finite()));
        let mel2 = extract_mel(&y, 22050, &cfg).unwrap();
        let t = mel.num_frames().min(mel2.num_frames());
        let mid = t / 2;
        let peak = |m: &MelSpectrogram| {
            (0..cfg.n_mels)
                .max_by(|&a, &b| m.frames[[mid, a]].total_cmp(&m.frames[[mid, b]]))
                .unwrap()
        };
        assert_eq!(peak(&mel), peak(&mel2));
    }
}
