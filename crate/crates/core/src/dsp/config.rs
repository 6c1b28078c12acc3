use sha2::{Digest, Sha256};

use crate::config::{key_value_struct, render, KeyValue};
use crate::error::{Error, Result};

/// Analysis/synthesis parameters for the mel frontend.
#[derive(Clone, Debug, PartialEq)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub hop_size: usize,
    pub window_size: usize,
    pub fft_size: usize,
    pub mel_channels: usize,
    pub mel_fmin: f64,
    pub mel_fmax: f64,
    /// Linear amplitude floor applied before taking logs.
    pub amp_floor: f64,
    /// Lower end of the normalized dB range.
    pub min_db: f64,
    pub griffin_lim_iters: usize,
    pub griffin_lim_seed: u64,
    /// Phase-reconstruction acceleration; `0` is plain alternating projection.
    pub griffin_lim_momentum: f64,
}

key_value_struct!(DspConfig {
    sample_rate,
    hop_size,
    window_size,
    fft_size,
    mel_channels,
    mel_fmin,
    mel_fmax,
    amp_floor,
    min_db,
    griffin_lim_iters,
    griffin_lim_seed,
    griffin_lim_momentum,
});

impl Default for DspConfig {
    fn default() -> Self {
        Self::with_hop(192)
    }
}

impl DspConfig {
    /// Configuration derived from a hop size: six-hop windows, one mel
    /// channel per hop sample, 16 kHz audio.
    pub fn with_hop(hop_size: usize) -> Self {
        Self {
            sample_rate: 16_000,
            hop_size,
            window_size: 6 * hop_size,
            fft_size: 6 * hop_size,
            mel_channels: hop_size,
            mel_fmin: 0.0,
            mel_fmax: 8_000.0,
            amp_floor: 1e-5,
            min_db: -100.0,
            griffin_lim_iters: 60,
            griffin_lim_seed: 0,
            griffin_lim_momentum: 0.99,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.sample_rate == 0 {
            return fail("sample_rate must be positive".into());
        }
        if self.hop_size == 0 || self.window_size != 6 * self.hop_size {
            return fail(format!(
                "window_size must equal 6 * hop_size (hop {}, window {})",
                self.hop_size, self.window_size
            ));
        }
        if self.mel_channels != self.hop_size {
            return fail(format!(
                "mel_channels must equal hop_size ({} != {})",
                self.mel_channels, self.hop_size
            ));
        }
        if self.fft_size != self.window_size {
            return fail("fft_size must equal window_size".into());
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.mel_fmin >= 0.0 && self.mel_fmin < self.mel_fmax && self.mel_fmax <= nyquist) {
            return fail(format!(
                "mel range [{}, {}] must lie within [0, {nyquist}]",
                self.mel_fmin, self.mel_fmax
            ));
        }
        if !(self.amp_floor > 0.0) {
            return fail("amp_floor must be positive".into());
        }
        if !(0.0..1.0).contains(&self.griffin_lim_momentum) {
            return fail("griffin_lim_momentum must lie in [0, 1)".into());
        }
        if self.griffin_lim_iters == 0 {
            return fail("griffin_lim_iters must be at least 1".into());
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Short identifier of every field, stored alongside derived artifacts.
    pub fn digest(&self) -> String {
        let text = render(&[self as &dyn KeyValue]);
        let hash = Sha256::digest(text.as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
