//! Band-limited resampling with a Kaiser-windowed sinc kernel.

use std::f64::consts::PI;

const ZERO_CROSSINGS: f64 = 64.0;
const KAISER_BETA: f64 = 12.0;
const ROLLOFF: f64 = 0.95;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

pub fn output_len(n: usize, from: u32, to: u32) -> usize {
    ((n as u64 * to as u64).div_ceil(from as u64)) as usize
}

/// Resamples `x` from `from` Hz to `to` Hz. Samples outside the signal are zero.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    let g = gcd(from as u64, to as u64);
    let (up, down) = (to as u64 / g, from as u64 / g);
    let cutoff = ROLLOFF * (to as f64 / from as f64).min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let reach = half_width.ceil() as i64;
    let i0_beta = bessel_i0(KAISER_BETA);

    // Output n sits at input position n*down/up; its fractional part cycles
    // through `up` phases, so one kernel per phase is enough.
    let taps = (2 * reach + 1) as usize;
    let kernels: Vec<Vec<f64>> = (0..up)
        .map(|phase| {
            let frac = phase as f64 / up as f64;
            (0..taps)
                .map(|j| {
                    let u = frac - (j as i64 - reach) as f64;
                    if u.abs() >= half_width {
                        return 0.0;
                    }
                    let arg = cutoff * u;
                    let sinc = if arg == 0.0 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
                    let r = u / half_width;
                    let window = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
                    cutoff * sinc * window
                })
                .collect()
        })
        .collect();

    let n_out = output_len(x.len(), from, to);
    (0..n_out as u64)
        .map(|n| {
            let num = n * down;
            let base = (num / up) as i64;
            let kernel = &kernels[(num % up) as usize];
            let mut acc = 0.0;
            for (j, &h) in kernel.iter().enumerate() {
                let k = base + j as i64 - reach;
                if k >= 0 && (k as usize) < x.len() {
                    acc += h * x[k as usize];
                }
            }
            acc
        })
        .collect()
}
