use std::f64::consts::PI;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::config::DspConfig;
use crate::error::{Error, Result};

/// Mono PCM audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// Read a RIFF/WAVE file, mix to mono and resample to `config.sample_rate`.
pub fn load_audio(path: &Path, config: &DspConfig) -> Result<Waveform> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnsupportedAudio("zero channels".into()));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader.samples::<f32>().collect::<Result<_, _>>()?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedAudio(format!("{fmt:?} with {bits} bits per sample")))
        }
    };
    if interleaved.is_empty() {
        return Err(Error::EmptyAudio(path.to_path_buf()));
    }
    let mono: Vec<f32> = interleaved
        .chunks_exact(channels)
        .map(|frame| {
            let sum: f64 = frame.iter().map(|&s| s as f64).sum();
            (sum / channels as f64) as f32
        })
        .collect();
    let samples = resample(&mono, spec.sample_rate, config.sample_rate);
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("audio samples of {}", path.display())));
    }
    Ok(Waveform::new(samples, config.sample_rate))
}

/// Write 16-bit PCM mono.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in &wave.samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}

const SINC_ZEROS: f64 = 16.0;

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// The output has `round(len · to / from)` samples.
pub fn resample(input: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || input.is_empty() {
        return input.to_vec();
    }
    let (from_u, to_u) = (from as u64, to as u64);
    let out_len = ((input.len() as u64 * to_u + from_u / 2) / from_u) as usize;
    let ratio = from as f64 / to as f64;
    // Low-pass at the lower of the two Nyquist rates.
    let cutoff = (to as f64 / from as f64).min(1.0);
    let half_width = SINC_ZEROS / cutoff;
    let n = input.len() as isize;
    (0..out_len)
        .map(|i| {
            let center = i as f64 * ratio;
            let lo = (center - half_width).ceil() as isize;
            let hi = (center + half_width).floor() as isize;
            let mut acc = 0.0f64;
            for j in lo.max(0)..=hi.min(n - 1) {
                let d = center - j as f64;
                let x = cutoff * d;
                let sinc = if x.abs() < 1e-12 { 1.0 } else { (PI * x).sin() / (PI * x) };
                let window = 0.5 + 0.5 * (PI * d / half_width).cos();
                acc += input[j as usize] as f64 * cutoff * sinc * window;
            }
            acc as f32
        })
        .collect()
}
