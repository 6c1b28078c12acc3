//! The three networks: u-net generator, patch discriminator and siamese
//! encoder, all over `[N, 1, mel, frames]` inputs.

mod discriminator;
mod generator;
mod siamese;

pub use discriminator::{DiscriminatorCache, Discriminator};
pub use generator::{Generator, GeneratorCache};
pub use siamese::{Siamese, SiameseCache};

use ndarray::Array2;

use crate::chunker::{split_crop, Chunk, TrainingCrop};
use crate::config::key_value_struct;
use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Siamese latent length.
    pub len_s: usize,
    pub g_base_channels: usize,
    /// Number of stride-2 encoder stages in the generator.
    pub g_depth: usize,
    pub d_layers: usize,
    pub d_base_channels: usize,
    pub s_layers: usize,
    pub s_base_channels: usize,
    /// Kernel extent of generator and siamese convolutions (odd).
    pub kernel_size: usize,
    pub d_kernel_size: usize,
    /// Power iterations per spectral-norm refresh.
    pub norm_power_iters: usize,
}

key_value_struct!(ModelConfig {
    len_s,
    g_base_channels,
    g_depth,
    d_layers,
    d_base_channels,
    s_layers,
    s_base_channels,
    kernel_size,
    d_kernel_size,
    norm_power_iters,
});

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            len_s: 128,
            g_base_channels: 64,
            g_depth: 3,
            d_layers: 4,
            d_base_channels: 64,
            s_layers: 4,
            s_base_channels: 64,
            kernel_size: 3,
            d_kernel_size: 4,
            norm_power_iters: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.len_s == 0 {
            return fail("len_s must be at least 1");
        }
        if self.g_depth == 0 || self.d_layers == 0 || self.s_layers == 0 {
            return fail("g_depth, d_layers and s_layers must be at least 1");
        }
        if self.g_base_channels == 0 || self.d_base_channels == 0 || self.s_base_channels == 0 {
            return fail("channel widths must be positive");
        }
        if self.kernel_size.is_multiple_of(2) {
            return fail("kernel_size must be odd");
        }
        if self.d_kernel_size < 2 {
            return fail("d_kernel_size must be at least 2");
        }
        if self.norm_power_iters == 0 {
            return fail("norm_power_iters must be at least 1");
        }
        Ok(())
    }

    /// Check that `mel × half` chunks and `mel × 2·half` crops fit the
    /// strided stacks exactly.
    pub fn validate_chunk(&self, mel: usize, half: usize) -> Result<()> {
        self.validate()?;
        let g = 1 << self.g_depth;
        if !mel.is_multiple_of(g) || !half.is_multiple_of(g) {
            return Err(Error::Config(format!(
                "generator depth {} needs chunk sides divisible by {g}, got {mel}×{half}",
                self.g_depth
            )));
        }
        let d = 1 << self.d_layers;
        if !mel.is_multiple_of(d) || !(2 * half).is_multiple_of(d) {
            return Err(Error::Config(format!(
                "discriminator depth {} needs crop sides divisible by {d}, got {mel}×{}",
                self.d_layers,
                2 * half
            )));
        }
        Ok(())
    }
}

/// Padding that halves even sides under stride 2 and keeps them under stride 1
/// for odd kernels.
pub(crate) fn same_pad(kernel: usize) -> usize {
    (kernel - 1) / 2
}

/// Stack equally shaped matrices into a `[N, 1, rows, cols]` tensor.
pub fn matrices_to_tensor<T: Real>(items: &[&Array2<f32>]) -> Result<Tensor<T>> {
    let first = items.first().ok_or_else(|| Error::shape("at least one input", "none"))?;
    let (h, w) = first.dim();
    let mut data = Vec::with_capacity(items.len() * h * w);
    for m in items {
        if m.dim() != (h, w) {
            return Err(Error::shape(format!("{h}×{w}"), format!("{}×{}", m.nrows(), m.ncols())));
        }
        data.extend(m.iter().map(|&v| T::of(v as f64)));
    }
    Ok(Tensor::from_vec([items.len(), 1, h, w], data))
}

/// Split a single-channel batch back into matrices.
pub fn tensor_to_matrices<T: Real>(t: &Tensor<T>) -> Vec<Array2<f32>> {
    assert_eq!(t.channels(), 1, "expected single-channel maps");
    let (h, w) = (t.height(), t.width());
    (0..t.batch())
        .map(|n| {
            let data = t.item(n).iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
            Array2::from_shape_vec((h, w), data).expect("item length matches")
        })
        .collect()
}

/// Crop translated half by half in inference mode; the halves never mix.
pub fn g_composite<T: Real>(g: &Generator<T>, crop: &TrainingCrop) -> Result<Array2<f32>> {
    let (left, right) = split_crop(crop)?;
    let left = g.translate(&left)?;
    let right = g.translate(&right)?;
    crate::chunker::concat(&[left, right])
}

impl<T: Real> Generator<T> {
    /// Inference-mode translation of one chunk.
    pub fn translate(&self, chunk: &Chunk) -> Result<Chunk> {
        let x = matrices_to_tensor::<T>(&[&chunk.values])?;
        let y = self.infer(&x)?;
        let values = tensor_to_matrices(&y).pop().expect("one item");
        Ok(Chunk { values })
    }
}
