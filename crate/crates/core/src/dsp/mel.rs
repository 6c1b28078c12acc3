use ndarray::{Array1, Array2, Axis};

use super::config::DspConfig;
use super::stft::LinearSpectrogram;
use crate::error::{Error, Result};

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel < MIN_LOG_MEL {
        mel * F_SP
    } else {
        MIN_LOG_HZ * ((mel - MIN_LOG_MEL) * log_step()).exp()
    }
}

/// Triangular mel filterbank (`mel_channels × bins`, unit peak) plus the
/// normalized transpose used to go back to linear frequency.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    weights: Array2<f32>,
    row_sums: Array1<f64>,
    /// `bins × mel_channels`: columns of `weights` scaled to sum to one per
    /// bin, then divided by each filter's row sum.
    inverse: Array2<f32>,
}

impl MelFilterbank {
    pub fn new(config: &DspConfig) -> Self {
        let bins = config.n_bins();
        let m = config.mel_channels;
        let lo = hz_to_mel(config.mel_fmin);
        let hi = hz_to_mel(config.mel_fmax);
        let edges: Vec<f64> = (0..m + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (m + 1) as f64))
            .collect();
        let bin_hz = config.sample_rate as f64 / config.fft_size as f64;
        let weights = Array2::from_shape_fn((m, bins), |(row, k)| {
            let f = k as f64 * bin_hz;
            let (left, center, right) = (edges[row], edges[row + 1], edges[row + 2]);
            let rise = (f - left) / (center - left);
            let fall = (right - f) / (right - center);
            rise.min(fall).max(0.0) as f32
        });
        let row_sums = weights.map_axis(Axis(1), |r| r.iter().map(|&w| w as f64).sum::<f64>());
        let col_sums = weights.map_axis(Axis(0), |c| c.iter().map(|&w| w as f64).sum::<f64>());
        let inverse = Array2::from_shape_fn((bins, m), |(k, row)| {
            let w = weights[[row, k]] as f64;
            if w == 0.0 || col_sums[k] == 0.0 || row_sums[row] == 0.0 {
                0.0
            } else {
                (w / col_sums[k] / row_sums[row]) as f32
            }
        });
        Self {
            weights,
            row_sums,
            inverse,
        }
    }

    pub fn weights(&self) -> &Array2<f32> {
        &self.weights
    }

    pub fn row_sums(&self) -> &Array1<f64> {
        &self.row_sums
    }

    pub fn channels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn bins(&self) -> usize {
        self.weights.ncols()
    }

    /// Linear magnitudes to mel amplitudes.
    pub fn project(&self, spec: &LinearSpectrogram) -> Result<Array2<f32>> {
        if spec.bins() != self.bins() {
            return Err(Error::shape(
                format!("{} frequency bins", self.bins()),
                format!("{} frequency bins", spec.bins()),
            ));
        }
        Ok(self.weights.dot(&spec.magnitudes))
    }

    /// Approximate linear magnitudes from mel amplitudes; a flat spectrum is
    /// recovered exactly.
    pub fn invert(&self, mel: &Array2<f32>, frame_hop: usize) -> Result<LinearSpectrogram> {
        if mel.nrows() != self.channels() {
            return Err(Error::shape(
                format!("{} mel channels", self.channels()),
                format!("{} mel channels", mel.nrows()),
            ));
        }
        let mut magnitudes = self.inverse.dot(mel);
        magnitudes.mapv_inplace(|v| v.max(0.0));
        Ok(LinearSpectrogram {
            magnitudes,
            frame_hop,
        })
    }
}

pub fn mel_project(spec: &LinearSpectrogram, config: &DspConfig) -> Result<Array2<f32>> {
    MelFilterbank::new(config).project(spec)
}

pub fn mel_invert(mel: &Array2<f32>, config: &DspConfig) -> Result<LinearSpectrogram> {
    MelFilterbank::new(config).invert(mel, config.hop_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 300.0, 999.0, 1000.0, 4321.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn every_filter_covers_at_least_one_bin() {
        for hop in [64, 192] {
            let fb = MelFilterbank::new(&DspConfig::with_hop(hop));
            assert!(fb.row_sums().iter().all(|&s| s > 0.0), "hop {hop}");
        }
    }

    #[test]
    fn all_ones_column_projects_to_row_sums() {
        let cfg = DspConfig::default();
        let fb = MelFilterbank::new(&cfg);
        let spec = LinearSpectrogram {
            magnitudes: Array2::ones((cfg.n_bins(), 1)),
            frame_hop: cfg.hop_size,
        };
        let mel = fb.project(&spec).unwrap();
        // Independent row sums straight from the weight matrix.
        for m in 0..cfg.mel_channels {
            let expect: f64 = (0..cfg.n_bins()).map(|k| fb.weights()[[m, k]] as f64).sum();
            assert!((mel[[m, 0]] as f64 - expect).abs() < 1e-4 * expect.max(1.0));
        }
    }

    #[test]
    fn projection_and_inversion_are_linear_and_zero_preserving() {
        let cfg = DspConfig::with_hop(64);
        let fb = MelFilterbank::new(&cfg);
        let spec = LinearSpectrogram {
            magnitudes: Array2::from_shape_fn((cfg.n_bins(), 3), |(k, f)| ((k * 3 + f) % 17) as f32 * 0.1),
            frame_hop: cfg.hop_size,
        };
        let mel = fb.project(&spec).unwrap();
        let doubled = LinearSpectrogram {
            magnitudes: &spec.magnitudes * 2.0,
            frame_hop: cfg.hop_size,
        };
        let mel2 = fb.project(&doubled).unwrap();
        for (a, b) in mel.iter().zip(mel2.iter()) {
            assert!((2.0 * a - b).abs() <= 1e-5 * b.abs().max(1.0));
            assert!(*a >= 0.0);
        }
        let zero = Array2::<f32>::zeros((cfg.mel_channels, 2));
        assert!(fb.invert(&zero, cfg.hop_size).unwrap().magnitudes.iter().all(|&v| v == 0.0));
        let inv = fb.invert(&mel, cfg.hop_size).unwrap();
        let inv3 = fb.invert(&(&mel * 3.0), cfg.hop_size).unwrap();
        for (a, b) in inv.magnitudes.iter().zip(inv3.magnitudes.iter()) {
            assert!((3.0 * a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let cfg = DspConfig::with_hop(64);
        let fb = MelFilterbank::new(&cfg);
        let wrong = LinearSpectrogram {
            magnitudes: Array2::zeros((10, 2)),
            frame_hop: 64,
        };
        assert!(fb.project(&wrong).is_err());
        assert!(fb.invert(&Array2::zeros((10, 2)), 64).is_err());
    }
}
