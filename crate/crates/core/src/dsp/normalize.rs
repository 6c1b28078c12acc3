use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::DspConfig;
use crate::error::{Error, Result};

/// dB range mapped onto `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min_db: f64,
    pub ref_db: f64,
}

impl NormalizationStats {
    pub fn new(min_db: f64, ref_db: f64) -> Result<Self> {
        if !(min_db.is_finite() && ref_db.is_finite() && min_db < ref_db) {
            return Err(Error::Config(format!(
                "normalization range needs min_db < ref_db, got [{min_db}, {ref_db}]"
            )));
        }
        Ok(Self { min_db, ref_db })
    }

    fn span(&self) -> f64 {
        self.ref_db - self.min_db
    }

    pub fn db_to_unit(&self, db: f64) -> f64 {
        2.0 * (db.clamp(self.min_db, self.ref_db) - self.min_db) / self.span() - 1.0
    }

    pub fn unit_to_db(&self, v: f64) -> f64 {
        (v + 1.0) * 0.5 * self.span() + self.min_db
    }
}

/// Normalized log-amplitude mel matrix, `mel_channels × frames`, entries in
/// `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f32>,
    pub stats: NormalizationStats,
    pub config_digest: String,
}

impl MelSpectrogram {
    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }

    /// Express the same dB values under a wider range. Entries keep their
    /// decibel meaning; only the affine map changes.
    pub fn renormalize(&self, stats: NormalizationStats) -> MelSpectrogram {
        let values = self
            .values
            .mapv(|v| stats.db_to_unit(self.stats.unit_to_db(v as f64)) as f32);
        MelSpectrogram {
            values,
            stats,
            config_digest: self.config_digest.clone(),
        }
    }
}

pub fn amplitude_to_db(a: f64, amp_floor: f64) -> f64 {
    20.0 * a.max(amp_floor).log10()
}

/// Largest log-amplitude in a mel matrix, used as a corpus reference level.
pub fn max_log_amplitude(mel: &Array2<f32>, config: &DspConfig) -> f64 {
    mel.iter()
        .map(|&a| amplitude_to_db(a as f64, config.amp_floor))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Floor, take `20·log10`, clip to `[min_db, ref_db]` and map affinely onto
/// `[-1, 1]`.
pub fn to_log_normalized(mel: &Array2<f32>, stats: NormalizationStats, config: &DspConfig) -> MelSpectrogram {
    let values = mel.mapv(|a| stats.db_to_unit(amplitude_to_db(a as f64, config.amp_floor)) as f32);
    MelSpectrogram {
        values,
        stats,
        config_digest: config.digest(),
    }
}

/// Inverse of [`to_log_normalized`] on its unclipped range.
pub fn from_log_normalized(m: &MelSpectrogram) -> Result<Array2<f32>> {
    if let Some(bad) = m.values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
        return Err(Error::OutOfRange(format!(
            "normalized mel value {bad} outside [-1, 1]"
        )));
    }
    Ok(m.values.mapv(|v| 10f64.powf(m.stats.unit_to_db(v as f64) / 20.0) as f32))
}
