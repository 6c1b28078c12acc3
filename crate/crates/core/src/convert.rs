//! Arbitrary-length translation: waveform → mel → chunks → generator →
//! unchunk → waveform.

use std::path::Path;

use crate::chunker::{chunk_sequence, unchunk, Chunk, ChunkConfig};
use crate::dsp::{
    load_audio, spectrogram_to_waveform, to_log_normalized, waveform_to_mel, write_wav, DspConfig, MelSpectrogram,
    NormalizationStats, Waveform,
};
use crate::error::{Error, Result};
use crate::models::{matrices_to_tensor, tensor_to_matrices, Generator};
use crate::nn::Real;
use crate::trainer::TrainState;

/// Chunks translated per generator call.
const CONVERT_BATCH: usize = 32;

/// Anything that maps `M × L/2` chunks to chunks of the same shape.
pub trait ChunkTranslator {
    fn translate_chunks(&self, chunks: &[Chunk]) -> Result<Vec<Chunk>>;
}

impl<T: Real> ChunkTranslator for Generator<T> {
    fn translate_chunks(&self, chunks: &[Chunk]) -> Result<Vec<Chunk>> {
        let mut out = Vec::with_capacity(chunks.len());
        for group in chunks.chunks(CONVERT_BATCH) {
            let x = matrices_to_tensor::<T>(&group.iter().map(|c| &c.values).collect::<Vec<_>>())?;
            out.extend(tensor_to_matrices(&self.infer(&x)?).into_iter().map(|values| Chunk { values }));
        }
        Ok(out)
    }
}

/// Returns chunks unchanged.
pub struct IdentityTranslator;

impl ChunkTranslator for IdentityTranslator {
    fn translate_chunks(&self, chunks: &[Chunk]) -> Result<Vec<Chunk>> {
        Ok(chunks.to_vec())
    }
}

/// Translate a spectrogram of any width; the result has the same shape and
/// normalization.
pub fn translate_spectrogram(
    translator: &dyn ChunkTranslator,
    spec: &MelSpectrogram,
    chunk: &ChunkConfig,
) -> Result<MelSpectrogram> {
    let mut seq = chunk_sequence(&spec.values, chunk)?;
    let translated = translator.translate_chunks(&seq.chunks)?;
    if translated.len() != seq.chunks.len() {
        return Err(Error::shape(
            format!("{} translated chunks", seq.chunks.len()),
            translated.len(),
        ));
    }
    for (a, b) in seq.chunks.iter().zip(&translated) {
        if a.values.dim() != b.values.dim() {
            return Err(Error::shape(format!("{:?}", a.values.dim()), format!("{:?}", b.values.dim())));
        }
    }
    seq.chunks = translated;
    Ok(MelSpectrogram {
        values: unchunk(&seq)?,
        stats: spec.stats,
        config_digest: spec.config_digest.clone(),
    })
}

#[derive(Clone, Debug)]
pub struct Conversion {
    pub input: MelSpectrogram,
    pub output: MelSpectrogram,
    pub waveform: Waveform,
}

pub fn convert_waveform(
    translator: &dyn ChunkTranslator,
    wave: &Waveform,
    dsp: &DspConfig,
    chunk: &ChunkConfig,
    stats: NormalizationStats,
) -> Result<Conversion> {
    let input = to_log_normalized(&waveform_to_mel(wave, dsp)?, stats, dsp);
    let output = translate_spectrogram(translator, &input, chunk)?;
    let waveform = spectrogram_to_waveform(&output, dsp)?;
    Ok(Conversion {
        input,
        output,
        waveform,
    })
}

/// Convert an audio file with a trained generator, using the normalization
/// stored in the checkpoint.
pub fn convert_file(state: &TrainState, input: &Path, output: &Path) -> Result<Conversion> {
    let dsp = &state.config.dsp;
    let wave = load_audio(input, dsp)?;
    let conversion = convert_waveform(&state.g, &wave, dsp, &state.config.chunk, state.stats)?;
    write_wav(output, &conversion.waveform)?;
    Ok(conversion)
}
