use rand::Rng;

use super::{same_pad, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::layers::{leaky_relu, leaky_relu_backward};
use crate::nn::{Conv2d, ConvCache, ConvShape, ParamStore, Real, Tensor};

/// Patch discriminator: `d_layers` stride-2 spectrally normalized
/// convolutions with leaky ReLU and no normalization, then a single-channel
/// convolution emitting unbounded per-patch logits.
#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    pub store: ParamStore<T>,
    power_iters: usize,
    layers: Vec<Conv2d>,
    head: Conv2d,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorCache<T> {
    convs: Vec<ConvCache<T>>,
    /// Convolution outputs, the leaky ReLU inputs.
    pre: Vec<Tensor<T>>,
    head: ConvCache<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let base = cfg.d_base_channels;
        let width = |i: usize| (base << i).min(8 * base);
        let k = cfg.d_kernel_size;
        let mut layers = Vec::with_capacity(cfg.d_layers);
        for i in 0..cfg.d_layers {
            let shape = ConvShape {
                in_ch: if i == 0 { 1 } else { width(i - 1) },
                out_ch: width(i),
                kernel: k,
                stride: 2,
                pad: same_pad(k),
            };
            layers.push(Conv2d::new(&mut store, &format!("layer{i}.conv"), shape, true, rng));
        }
        let head = Conv2d::new(
            &mut store,
            "head.conv",
            ConvShape {
                in_ch: width(cfg.d_layers - 1),
                out_ch: 1,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            true,
            rng,
        );
        Ok(Self {
            store,
            power_iters: cfg.norm_power_iters,
            layers,
            head,
        })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let side = 1 << self.layers.len();
        if x.channels() != 1 || !x.height().is_multiple_of(side) || !x.width().is_multiple_of(side) || x.height() == 0 || x.width() == 0 {
            return Err(Error::shape(
                format!("[N, 1, H, W] with H, W multiples of {side}"),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        self.layers.iter().chain(std::iter::once(&self.head))
    }

    pub fn head(&self) -> &Conv2d {
        &self.head
    }

    pub fn power_iterate(&mut self) {
        let iters = self.power_iters;
        let convs: Vec<Conv2d> = self.convs().cloned().collect();
        for c in &convs {
            c.power_iterate(&mut self.store, iters);
        }
    }

    /// Score map `[N, 1, H / 2^d, W / 2^d]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, DiscriminatorCache<T>)> {
        self.check_input(x)?;
        let mut convs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for conv in &self.layers {
            let (z, cache) = conv.forward(&self.store, &h);
            h = leaky_relu(&z);
            convs.push(cache);
            pre.push(z);
        }
        let (scores, head) = self.head.forward(&self.store, &h);
        Ok((scores, DiscriminatorCache { convs, pre, head }))
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for conv in &self.layers {
            h = leaky_relu(&conv.infer(&self.store, &h));
        }
        Ok(self.head.infer(&self.store, &h))
    }

    pub fn backward(&mut self, cache: &DiscriminatorCache<T>, grad_out: &Tensor<T>, param_grads: bool) -> Tensor<T> {
        let mut g = self.head.backward(&mut self.store, &cache.head, grad_out, param_grads);
        for i in (0..self.layers.len()).rev() {
            let g_z = leaky_relu_backward(&cache.pre[i], &g);
            g = self.layers[i].backward(&mut self.store, &cache.convs[i], &g_z, param_grads);
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn four_layers_turn_192_by_96_into_12_by_6() {
        let cfg = ModelConfig {
            d_base_channels: 4,
            ..ModelConfig::default()
        };
        let d = Discriminator::<f32>::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let s = d.infer(&Tensor::full([1, 1, 192, 96], 0.5)).unwrap();
        assert_eq!(s.shape(), [1, 1, 12, 6]);
        assert!(s.is_finite());
    }

    #[test]
    fn zeroed_head_scores_zero() {
        let cfg = ModelConfig {
            d_base_channels: 2,
            d_layers: 2,
            ..ModelConfig::default()
        };
        let mut d = Discriminator::<f32>::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (w, b) = (d.head.weight_id(), d.head.bias_id());
        d.store.value_mut(w).fill(0.0);
        d.store.value_mut(b).fill(0.0);
        let s = d.infer(&Tensor::full([2, 1, 8, 8], -0.4)).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
    }
}
