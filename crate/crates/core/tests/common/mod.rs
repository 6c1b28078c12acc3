//! Synthetic audio domains and analysis helpers shared by integration tests.
#![allow(dead_code)]

pub mod gradcheck;

use melganvc::dsp::normalize::max_log_amplitude;
use melganvc::dsp::{to_log_normalized, waveform_to_mel, DspConfig, MelSpectrogram, NormalizationStats, Waveform};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Noise built from many random partials in `[lo, hi]` Hz under a slow
/// amplitude envelope.
pub fn band_noise(seconds: f64, sample_rate: u32, lo: f64, hi: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * sample_rate as f64).round() as usize;
    let partials: Vec<(f64, f64)> = (0..48)
        .map(|_| (rng.gen_range(lo..hi), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    let rate = rng.gen_range(1.5..4.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let samples: Vec<f32> = (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            let env = 0.6 + 0.4 * (std::f64::consts::TAU * rate * t + phase).sin();
            let s: f64 = partials.iter().map(|&(f, p)| (std::f64::consts::TAU * f * t + p).sin()).sum();
            (0.5 * env * s / partials.len() as f64 * 4.0) as f32
        })
        .collect();
    Waveform::new(samples, sample_rate)
}

/// Low-band (domain A) and high-band (domain B) clips as normalized mel
/// spectrograms sharing one reference level.
pub fn toy_domains(dsp: &DspConfig, clips: usize, seconds: f64) -> (Vec<MelSpectrogram>, Vec<MelSpectrogram>) {
    let sr = dsp.sample_rate;
    let mels = |lo: f64, hi: f64, base: u64| -> Vec<Array2<f32>> {
        (0..clips)
            .map(|k| waveform_to_mel(&band_noise(seconds, sr, lo, hi, base + k as u64), dsp).unwrap())
            .collect()
    };
    let a = mels(150.0, 1200.0, 1000);
    let b = mels(3500.0, 7000.0, 2000);
    let ref_db = a.iter().chain(&b).map(|m| max_log_amplitude(m, dsp)).fold(f64::NEG_INFINITY, f64::max);
    let stats = NormalizationStats::new(dsp.min_db, ref_db).unwrap();
    let norm = |v: Vec<Array2<f32>>| v.iter().map(|m| to_log_normalized(m, stats, dsp)).collect();
    (norm(a), norm(b))
}

/// Energy-weighted mean mel channel over all frames, scaled to `[0, 1]`;
/// a value of -1 carries no weight.
pub fn mel_centroid(values: &Array2<f32>) -> f64 {
    let m = values.nrows();
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for ((row, _), &v) in values.indexed_iter() {
        let w = (v as f64 + 1.0) / 2.0;
        num += w * row as f64;
        den += w;
    }
    if den == 0.0 {
        0.5
    } else {
        num / den / (m - 1) as f64
    }
}

pub fn mean_centroid(specs: &[MelSpectrogram]) -> f64 {
    specs.iter().map(|s| mel_centroid(&s.values)).sum::<f64>() / specs.len() as f64
}

/// Scaled-down training setup for the synthetic domains: 32-sample hop
/// (32 mel channels, 16-frame crops) and 16-wide networks.
pub fn toy_config() -> melganvc::trainer::RunConfig {
    let mut cfg = melganvc::trainer::RunConfig::for_hop(32);
    cfg.model.g_base_channels = 16;
    cfg.model.d_base_channels = 16;
    cfg.model.s_base_channels = 16;
    cfg.train.d_updates_per_gs = 2;
    cfg
}
