use std::f64::consts::PI;

use super::bundle::{DatasetBundle, InputKind};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::Rng;

/// Frequency band (cycles per frame) of class `k`; bands are disjoint and
/// ascending in `k`.
pub fn signal_band(k: usize) -> (f64, f64) {
    (1.0 + 2.0 * k as f64, 3.0 + 2.0 * k as f64)
}

/// Labels cycle through the classes; each channel is a sum of 2 to 4
/// random-phase sinusoids drawn from the class band plus white noise.
pub fn synth_signals(count: usize, t: usize, n: usize, classes: usize, rng: &mut Rng) -> Result<DatasetBundle> {
    if count == 0 || t == 0 || n == 0 || classes == 0 {
        return Err(Error::invalid("synthetic signals need positive sizes"));
    }
    let mut data = vec![0f32; count * t * n];
    let labels: Vec<usize> = (0..count).map(|i| i % classes).collect();
    for (i, &k) in labels.iter().enumerate() {
        let (lo, hi) = signal_band(k);
        let frame = &mut data[i * t * n..(i + 1) * t * n];
        for ch in 0..n {
            let waves = 2 + rng.below(3);
            let comps: Vec<(f64, f64, f64)> = (0..waves)
                .map(|_| (rng.uniform_in(0.5, 1.5), rng.uniform_in(lo, hi), rng.uniform_in(0.0, 2.0 * PI)))
                .collect();
            for s in 0..t {
                let x = s as f64 / t as f64;
                let v: f64 = comps.iter().map(|&(a, f, p)| a * (2.0 * PI * f * x + p).sin()).sum();
                frame[s * n + ch] = (v + 0.1 * rng.normal()) as f32;
            }
        }
    }
    DatasetBundle::new(InputKind::Signal, Tensor::new(vec![count, t, n], data)?, Some(labels))
}

/// Class `k` images carry `k + 1` Gaussian blobs on a noisy dim
/// background; blob positions are shared across channels, amplitudes vary.
pub fn synth_images(count: usize, h: usize, w: usize, c: usize, classes: usize, rng: &mut Rng) -> Result<DatasetBundle> {
    if count == 0 || h == 0 || w == 0 || c == 0 || classes == 0 {
        return Err(Error::invalid("synthetic images need positive sizes"));
    }
    let mut data = vec![0f32; count * h * w * c];
    let labels: Vec<usize> = (0..count).map(|i| i % classes).collect();
    let side = h.min(w) as f64;
    for (i, &k) in labels.iter().enumerate() {
        let img = &mut data[i * h * w * c..(i + 1) * h * w * c];
        let blobs: Vec<(f64, f64, f64, Vec<f64>)> = (0..=k)
            .map(|_| {
                let cy = rng.uniform_in(0.15, 0.85) * (h - 1) as f64;
                let cx = rng.uniform_in(0.15, 0.85) * (w - 1) as f64;
                let sigma = rng.uniform_in(0.06, 0.12) * side;
                let amp = (0..c).map(|_| rng.uniform_in(0.45, 0.7)).collect();
                (cy, cx, sigma, amp)
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut v = 0.15 + 0.03 * rng.normal();
                    for (cy, cx, s, amp) in &blobs {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        v += amp[ch] * (-d2 / (2.0 * s * s)).exp();
                    }
                    img[(y * w + x) * c + ch] = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
    DatasetBundle::new(InputKind::Image, Tensor::new(vec![count, h, w, c], data)?, Some(labels))
}
