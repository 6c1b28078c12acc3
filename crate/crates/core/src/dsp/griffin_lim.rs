use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::audio::Waveform;
use super::config::DspConfig;
use super::mel::MelFilterbank;
use super::normalize::{from_log_normalized, MelSpectrogram};
use super::stft::{LinearSpectrogram, StftPlan};
use crate::error::{Error, Result};

/// Peak level of every synthesized waveform.
pub const OUTPUT_PEAK: f32 = 0.95;

/// Reconstruction before peak normalization, with the spectral-convergence
/// error `‖|STFT(x̂)| − s‖ / ‖s‖` of the estimate after each iteration
/// (`errors[0]` is the random-phase initialization).
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub samples: Vec<f64>,
    pub errors: Vec<f64>,
}

/// Alternating projection between STFT-consistent signals and spectra with
/// the target magnitudes, starting from seeded random phases. Operates on the
/// full padded frame span, so each inverse STFT is an exact least-squares
/// projection and the error is non-increasing.
pub fn reconstruct(spec: &LinearSpectrogram, config: &DspConfig, iters: usize, seed: u64) -> Result<Reconstruction> {
    reconstruct_with_momentum(spec, config, iters, seed, config.griffin_lim_momentum)
}

/// [`reconstruct`] with an explicit momentum; `0` is the classic algorithm.
///
/// With momentum, each iteration first tries the projection steered by the
/// extrapolated spectrum `c + momentum · (c − c_prev)`. If that would raise
/// the error it falls back to the plain projection from the current estimate
/// and drops the momentum, so the error sequence never increases.
pub fn reconstruct_with_momentum(
    spec: &LinearSpectrogram,
    config: &DspConfig,
    iters: usize,
    seed: u64,
    momentum: f64,
) -> Result<Reconstruction> {
    let plan = StftPlan::new(config);
    if spec.bins() != plan.bins() {
        return Err(Error::shape(
            format!("{} frequency bins", plan.bins()),
            format!("{} frequency bins", spec.bins()),
        ));
    }
    let frames = spec.frames();
    let bins = plan.bins();
    let out_len = frames * config.hop_size;
    let pad = config.fft_size / 2;
    // frames × bins, matching the plan's layout.
    let target: Vec<f64> = (0..frames * bins)
        .map(|i| spec.magnitudes[[i % bins, i / bins]] as f64)
        .collect();
    let target_norm = target.iter().map(|v| v * v).sum::<f64>().sqrt();
    if frames == 0 || target_norm == 0.0 {
        return Ok(Reconstruction {
            samples: vec![0.0; out_len],
            errors: Vec::new(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init: Vec<Complex64> = target
        .iter()
        .map(|&m| Complex64::from_polar(m, rng.gen::<f64>() * TAU))
        .collect();
    // Consistent spectrum of the current estimate, and the momentum-extrapolated
    // spectrum whose phases drive the next projection.
    let mut y = plan.synthesize(&init, frames);
    let mut current = plan.analyze(&y, frames);
    let mut err = convergence(&current, &target, target_norm);
    let mut errors = Vec::with_capacity(iters + 1);
    errors.push(err);
    let mut steer = current.clone();
    for _ in 0..iters {
        let candidate_y = plan.synthesize(&impose(&steer, &target), frames);
        let candidate = plan.analyze(&candidate_y, frames);
        let candidate_err = convergence(&candidate, &target, target_norm);
        let (next_y, next, next_err, accelerated) = if candidate_err <= err || momentum == 0.0 {
            (candidate_y, candidate, candidate_err, true)
        } else {
            let plain_y = plan.synthesize(&impose(&current, &target), frames);
            let plain = plan.analyze(&plain_y, frames);
            let plain_err = convergence(&plain, &target, target_norm);
            (plain_y, plain, plain_err, false)
        };
        steer = if accelerated {
            next.iter()
                .zip(&current)
                .map(|(&n, &c)| n + (n - c) * momentum)
                .collect()
        } else {
            next.clone()
        };
        y = next_y;
        current = next;
        err = next_err;
        errors.push(err);
    }

    let mut samples: Vec<f64> = y.into_iter().skip(pad).take(out_len).collect();
    samples.resize(out_len, 0.0);
    Ok(Reconstruction { samples, errors })
}

/// Target magnitudes with the phases of `spectra`.
fn impose(spectra: &[Complex64], target: &[f64]) -> Vec<Complex64> {
    spectra
        .iter()
        .zip(target)
        .map(|(a, &m)| {
            let norm = a.norm();
            if norm > 0.0 {
                a * (m / norm)
            } else {
                Complex64::new(m, 0.0)
            }
        })
        .collect()
}

fn convergence(analysis: &[Complex64], target: &[f64], target_norm: f64) -> f64 {
    analysis
        .iter()
        .zip(target)
        .map(|(a, &m)| (a.norm() - m).powi(2))
        .sum::<f64>()
        .sqrt()
        / target_norm
}

/// Scale so the largest magnitude is [`OUTPUT_PEAK`]; silence stays silent.
pub fn peak_normalize(samples: &[f64]) -> Vec<f32> {
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak == 0.0 {
        return vec![0.0; samples.len()];
    }
    let gain = OUTPUT_PEAK as f64 / peak;
    samples.iter().map(|&s| (s * gain) as f32).collect()
}

pub fn griffin_lim(spec: &LinearSpectrogram, config: &DspConfig) -> Result<Waveform> {
    if config.griffin_lim_iters == 0 {
        return Err(Error::Config("griffin_lim_iters must be at least 1".into()));
    }
    let rec = reconstruct(spec, config, config.griffin_lim_iters, config.griffin_lim_seed)?;
    Ok(Waveform::new(peak_normalize(&rec.samples), config.sample_rate))
}

/// Normalized mel → linear mel → linear magnitudes → phase reconstruction,
/// before peak normalization.
pub fn spectrogram_to_reconstruction(m: &MelSpectrogram, config: &DspConfig) -> Result<Reconstruction> {
    let mel = from_log_normalized(m)?;
    let linear = MelFilterbank::new(config).invert(&mel, config.hop_size)?;
    reconstruct(&linear, config, config.griffin_lim_iters, config.griffin_lim_seed)
}

pub fn spectrogram_to_waveform(m: &MelSpectrogram, config: &DspConfig) -> Result<Waveform> {
    let rec = spectrogram_to_reconstruction(m, config)?;
    Ok(Waveform::new(peak_normalize(&rec.samples), config.sample_rate))
}
