//! Fixed-width crops, half splits and padded chunk sequences.
//!
//! Training feeds `M × L` crops to the discriminator and their `M × L/2`
//! halves to the generator. Inference slices an arbitrary-width spectrogram
//! into consecutive `M × L/2` chunks, right-padding the last one with the
//! normalized silence value, and trims the padding after translation.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::config::key_value_struct;
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};

/// Normalized value of silence; used for right padding.
pub const PAD_VALUE: f32 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkConfig {
    /// Crop width in frames.
    pub crop_frames: usize,
}

key_value_struct!(ChunkConfig { crop_frames });

impl Default for ChunkConfig {
    fn default() -> Self {
        Self::for_hop(192)
    }
}

impl ChunkConfig {
    /// Crops of `hop / 2` frames.
    pub fn for_hop(hop_size: usize) -> Self {
        Self {
            crop_frames: hop_size / 2,
        }
    }

    pub fn half(&self) -> usize {
        self.crop_frames / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_frames == 0 || !self.crop_frames.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "crop_frames must be a positive even number, got {}",
                self.crop_frames
            )));
        }
        Ok(())
    }
}

/// `M × L` training slice.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingCrop {
    pub values: Array2<f32>,
    pub source_id: usize,
    pub offset: usize,
}

/// `M × L/2` generator input or output.
#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    pub values: Array2<f32>,
}

impl Chunk {
    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }
}

/// Chunks covering a spectrogram plus the padding needed to undo them.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkSequence {
    pub chunks: Vec<Chunk>,
    pub original_frames: usize,
    pub pad_frames: usize,
}

/// Contiguous `M × L` slice at a uniform offset in `[0, t − L]`.
pub fn random_crop<R: Rng + ?Sized>(
    spec: &MelSpectrogram,
    source_id: usize,
    cfg: &ChunkConfig,
    rng: &mut R,
) -> Result<TrainingCrop> {
    let l = cfg.crop_frames;
    let t = spec.frames();
    if t < l {
        return Err(Error::TooShort {
            found: t,
            need: l,
            unit: "frames",
        });
    }
    let offset = rng.gen_range(0..=t - l);
    Ok(TrainingCrop {
        values: spec.values.slice(s![.., offset..offset + l]).to_owned(),
        source_id,
        offset,
    })
}

/// Left half = frames `[0, L/2)`, right half = frames `[L/2, L)`.
pub fn split_crop(crop: &TrainingCrop) -> Result<(Chunk, Chunk)> {
    let l = crop.values.ncols();
    if !l.is_multiple_of(2) {
        return Err(Error::shape("even crop width", format!("width {l}")));
    }
    let half = l / 2;
    Ok((
        Chunk {
            values: crop.values.slice(s![.., ..half]).to_owned(),
        },
        Chunk {
            values: crop.values.slice(s![.., half..]).to_owned(),
        },
    ))
}

/// Column-wise concatenation in order.
pub fn concat(chunks: &[Chunk]) -> Result<Array2<f32>> {
    let first = chunks
        .first()
        .ok_or_else(|| Error::shape("at least one chunk", "none"))?;
    let m = first.channels();
    if let Some(bad) = chunks.iter().find(|c| c.channels() != m) {
        return Err(Error::shape(
            format!("{m} mel channels"),
            format!("{} mel channels", bad.channels()),
        ));
    }
    let views: Vec<ArrayView2<f32>> = chunks.iter().map(|c| c.values.view()).collect();
    Ok(concatenate(Axis(1), &views).expect("channel counts checked"))
}

/// Right-pad to a multiple of `L/2` with [`PAD_VALUE`] and slice into
/// non-overlapping chunks.
pub fn chunk_sequence(spec: &Array2<f32>, cfg: &ChunkConfig) -> Result<ChunkSequence> {
    let half = cfg.half();
    let (m, t) = spec.dim();
    if t == 0 {
        return Err(Error::TooShort {
            found: 0,
            need: 1,
            unit: "frames",
        });
    }
    let count = t.div_ceil(half);
    let pad_frames = count * half - t;
    let chunks = (0..count)
        .map(|i| {
            let start = i * half;
            let end = (start + half).min(t);
            let mut values = Array2::from_elem((m, half), PAD_VALUE);
            values
                .slice_mut(s![.., ..end - start])
                .assign(&spec.slice(s![.., start..end]));
            Chunk { values }
        })
        .collect();
    Ok(ChunkSequence {
        chunks,
        original_frames: t,
        pad_frames,
    })
}

/// Concatenate and trim the right padding; exactly `original_frames` wide.
pub fn unchunk(seq: &ChunkSequence) -> Result<Array2<f32>> {
    let joined = concat(&seq.chunks)?;
    let width = joined.ncols();
    if seq.original_frames + seq.pad_frames != width
        || seq.original_frames == 0
        || seq.chunks.iter().any(|c| c.frames() != seq.chunks[0].frames())
        || seq.pad_frames >= seq.chunks[0].frames()
    {
        return Err(Error::format(
            "chunk sequence",
            format!(
                "{} chunks spanning {width} frames cannot hold {} frames plus {} padding",
                seq.chunks.len(),
                seq.original_frames,
                seq.pad_frames
            ),
        ));
    }
    Ok(joined.slice(s![.., ..seq.original_frames]).to_owned())
}
