//! Waveform ⇄ normalized log-mel spectrogram frontend.

pub mod audio;
pub mod cache;
pub mod config;
pub mod griffin_lim;
pub mod mel;
pub mod normalize;
pub mod stft;

pub use audio::{load_audio, resample, write_wav, Waveform};
pub use config::DspConfig;
pub use griffin_lim::{griffin_lim, spectrogram_to_waveform};
pub use mel::{mel_invert, mel_project, MelFilterbank};
pub use normalize::{from_log_normalized, to_log_normalized, MelSpectrogram, NormalizationStats};
pub use stft::{stft, LinearSpectrogram};

use crate::error::Result;

/// Waveform to un-normalized mel amplitudes.
pub fn waveform_to_mel(wave: &Waveform, config: &DspConfig) -> Result<ndarray::Array2<f32>> {
    MelFilterbank::new(config).project(&stft(wave, config)?)
}
