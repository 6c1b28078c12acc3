use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::audio::Waveform;
use super::config::DspConfig;
use crate::error::{Error, Result};

/// Magnitude spectrogram, `(fft_size/2 + 1) × frames`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSpectrogram {
    pub magnitudes: Array2<f32>,
    pub frame_hop: usize,
}

impl LinearSpectrogram {
    pub fn bins(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn frames(&self) -> usize {
        self.magnitudes.ncols()
    }
}

/// Frames produced for a signal of `len` samples with centered framing.
pub fn frame_count(len: usize, hop: usize) -> usize {
    len.div_ceil(hop)
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reflect-pad (without repeating the edge sample) by `pad` on both sides.
pub fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    assert!(x.len() > pad, "reflect padding needs more than {pad} samples");
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[n - 2 - i]));
    out
}

/// Forward/inverse short-time Fourier transform on an already padded signal.
pub struct StftPlan {
    pub n_fft: usize,
    pub hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl StftPlan {
    pub fn new(config: &DspConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft: config.fft_size,
            hop: config.hop_size,
            window: hann(config.window_size),
            forward: planner.plan_fft_forward(config.fft_size),
            inverse: planner.plan_fft_inverse(config.fft_size),
        }
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Signal length spanned by `frames` frames without extra padding.
    pub fn span(&self, frames: usize) -> usize {
        (frames - 1) * self.hop + self.n_fft
    }

    /// Half-spectrum of every frame starting at `f · hop`; returns
    /// `frames × bins` row-major.
    pub fn analyze(&self, y: &[f64], frames: usize) -> Vec<Complex64> {
        assert!(y.len() >= self.span(frames), "signal shorter than frame span");
        let bins = self.bins();
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        for f in 0..frames {
            let start = f * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(y[start + i] * self.window[i], 0.0);
            }
            self.forward.process(&mut buf);
            out.extend_from_slice(&buf[..bins]);
        }
        out
    }

    /// Least-squares signal whose frames best match the given half-spectra:
    /// windowed overlap-add divided by the summed squared window.
    pub fn synthesize(&self, spectra: &[Complex64], frames: usize) -> Vec<f64> {
        let bins = self.bins();
        let n = self.n_fft;
        let len = self.span(frames);
        let mut acc = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for f in 0..frames {
            let half = &spectra[f * bins..(f + 1) * bins];
            buf[..bins].copy_from_slice(half);
            for k in bins..n {
                buf[k] = half[n - k].conj();
            }
            // A real frame has real DC and Nyquist bins.
            buf[0] = Complex64::new(buf[0].re, 0.0);
            if n.is_multiple_of(2) {
                buf[n / 2] = Complex64::new(buf[n / 2].re, 0.0);
            }
            self.inverse.process(&mut buf);
            let start = f * self.hop;
            for i in 0..n {
                let w = self.window[i];
                acc[start + i] += w * buf[i].re / n as f64;
                norm[start + i] += w * w;
            }
        }
        acc.iter()
            .zip(&norm)
            .map(|(&a, &d)| if d > 1e-10 { a / d } else { 0.0 })
            .collect()
    }
}

/// Centered magnitude STFT with reflect padding; `ceil(len / hop)` frames.
pub fn stft(wave: &Waveform, config: &DspConfig) -> Result<LinearSpectrogram> {
    if wave.len() < config.window_size {
        return Err(Error::TooShort {
            found: wave.len(),
            need: config.window_size,
            unit: "samples",
        });
    }
    let plan = StftPlan::new(config);
    let x: Vec<f64> = wave.samples.iter().map(|&s| s as f64).collect();
    let padded = reflect_pad(&x, config.fft_size / 2);
    let frames = frame_count(x.len(), config.hop_size);
    let spectra = plan.analyze(&padded, frames);
    let bins = plan.bins();
    let magnitudes = Array2::from_shape_fn((bins, frames), |(k, f)| spectra[f * bins + k].norm() as f32);
    Ok(LinearSpectrogram {
        magnitudes,
        frame_hop: config.hop_size,
    })
}
