use rand::Rng;

use super::{same_pad, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::layers::{global_avg_pool, global_avg_pool_backward, leaky_relu, leaky_relu_backward};
use crate::nn::{BatchNorm2d, BatchNormCache, Conv2d, ConvCache, ConvShape, Linear, Mode, ParamStore, Real, Tensor};

/// Siamese encoder: stride-2 convolutions with batch norm and leaky ReLU,
/// global average pooling, then an affine map to `len_s` latent values.
#[derive(Clone, Debug)]
pub struct Siamese<T> {
    pub store: ParamStore<T>,
    layers: Vec<(Conv2d, BatchNorm2d)>,
    project: Linear,
    len_s: usize,
}

#[derive(Clone, Debug)]
pub struct SiameseCache<T> {
    convs: Vec<ConvCache<T>>,
    norms: Vec<BatchNormCache<T>>,
    pre: Vec<Tensor<T>>,
    pooled_from: [usize; 4],
    pooled: Tensor<T>,
}

impl<T: Real> Siamese<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let base = cfg.s_base_channels;
        let width = |i: usize| (base << i).min(8 * base);
        let k = cfg.kernel_size;
        let mut layers = Vec::with_capacity(cfg.s_layers);
        for i in 0..cfg.s_layers {
            let shape = ConvShape {
                in_ch: if i == 0 { 1 } else { width(i - 1) },
                out_ch: width(i),
                kernel: k,
                stride: 2,
                pad: same_pad(k),
            };
            let conv = Conv2d::new(&mut store, &format!("layer{i}.conv"), shape, false, rng);
            let norm = BatchNorm2d::new(&mut store, &format!("layer{i}.bn"), width(i));
            layers.push((conv, norm));
        }
        let project = Linear::new(&mut store, "project", width(cfg.s_layers - 1), cfg.len_s, rng);
        Ok(Self {
            store,
            layers,
            project,
            len_s: cfg.len_s,
        })
    }

    pub fn len_s(&self) -> usize {
        self.len_s
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != 1 || x.height() == 0 || x.width() == 0 {
            return Err(Error::shape("[N, 1, H, W] with H, W ≥ 1", format!("{:?}", x.shape())));
        }
        Ok(())
    }

    /// Latent vectors as `[N, len_s, 1, 1]`.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, SiameseCache<T>)> {
        self.check_input(x)?;
        let mut convs = Vec::with_capacity(self.layers.len());
        let mut norms = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (conv, norm) in &self.layers {
            let (z, conv_cache) = conv.forward(&self.store, &h);
            let (p, norm_cache) = norm.forward(&mut self.store, &z, mode);
            h = leaky_relu(&p);
            convs.push(conv_cache);
            norms.push(norm_cache);
            pre.push(p);
        }
        let pooled = global_avg_pool(&h);
        let out = self.project.forward(&self.store, &pooled);
        Ok((
            out,
            SiameseCache {
                convs,
                norms,
                pre,
                pooled_from: h.shape(),
                pooled,
            },
        ))
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (conv, norm) in &self.layers {
            h = leaky_relu(&norm.infer(&self.store, &conv.infer(&self.store, &h)));
        }
        Ok(self.project.forward(&self.store, &global_avg_pool(&h)))
    }

    pub fn backward(&mut self, cache: &SiameseCache<T>, grad_out: &Tensor<T>, param_grads: bool) -> Tensor<T> {
        let g = self.project.backward(&mut self.store, &cache.pooled, grad_out, param_grads);
        let mut g = global_avg_pool_backward(cache.pooled_from, &g);
        for i in (0..self.layers.len()).rev() {
            let (conv, norm) = &self.layers[i];
            let g_p = leaky_relu_backward(&cache.pre[i], &g);
            let g_z = norm.backward(&mut self.store, &cache.norms[i], &g_p, param_grads);
            g = conv.backward(&mut self.store, &cache.convs[i], &g_z, param_grads);
        }
        g
    }
}
