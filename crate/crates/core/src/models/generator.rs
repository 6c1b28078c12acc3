use rand::Rng;

use super::{same_pad, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::layers::{leaky_relu, leaky_relu_backward, pixel_shuffle, pixel_unshuffle, tanh, tanh_backward};
use crate::nn::{BatchNorm2d, BatchNormCache, Conv2d, ConvCache, ConvShape, Mode, ParamStore, Real, Tensor};

/// U-net: `depth` stride-2 encoder stages, matching sub-pixel decoder stages
/// with channel-concatenated skips (the input itself is the outermost skip),
/// and a single-channel `tanh` head. Every convolution is spectrally
/// normalized.
#[derive(Clone, Debug)]
pub struct Generator<T> {
    pub store: ParamStore<T>,
    depth: usize,
    power_iters: usize,
    encoder: Vec<(Conv2d, BatchNorm2d)>,
    /// `decoder[i]` produces resolution `H / 2^i`.
    decoder: Vec<(Conv2d, BatchNorm2d)>,
    head: Conv2d,
}

#[derive(Clone, Debug)]
struct Stage<T> {
    conv: ConvCache<T>,
    norm: BatchNormCache<T>,
    /// Batch-norm output, the leaky ReLU input.
    pre: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct GeneratorCache<T> {
    input_shape: [usize; 4],
    encoder: Vec<Stage<T>>,
    decoder: Vec<Stage<T>>,
    head: ConvCache<T>,
    output: Tensor<T>,
}

impl<T: Real> Generator<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let base = cfg.g_base_channels;
        let k = cfg.kernel_size;
        let width = |i: usize| base << i;
        let mut encoder = Vec::with_capacity(cfg.g_depth);
        for i in 0..cfg.g_depth {
            let in_ch = if i == 0 { 1 } else { width(i - 1) };
            let shape = ConvShape {
                in_ch,
                out_ch: width(i),
                kernel: k,
                stride: 2,
                pad: same_pad(k),
            };
            let conv = Conv2d::new(&mut store, &format!("enc{i}.conv"), shape, true, rng);
            let norm = BatchNorm2d::new(&mut store, &format!("enc{i}.bn"), width(i));
            encoder.push((conv, norm));
        }
        // Output channels of decoder stage i after the shuffle.
        let dec_out = |i: usize| if i == 0 { base } else { width(i - 1) };
        let mut decoder = Vec::with_capacity(cfg.g_depth);
        for i in (0..cfg.g_depth).rev() {
            let in_ch = if i + 1 == cfg.g_depth {
                width(i)
            } else {
                dec_out(i + 1) + width(i)
            };
            let shape = ConvShape {
                in_ch,
                out_ch: 4 * dec_out(i),
                kernel: k,
                stride: 1,
                pad: same_pad(k),
            };
            let conv = Conv2d::new(&mut store, &format!("dec{i}.conv"), shape, true, rng);
            let norm = BatchNorm2d::new(&mut store, &format!("dec{i}.bn"), dec_out(i));
            decoder.push((conv, norm));
        }
        decoder.reverse();
        let head = Conv2d::new(
            &mut store,
            "head.conv",
            ConvShape {
                in_ch: dec_out(0) + 1,
                out_ch: 1,
                kernel: k,
                stride: 1,
                pad: same_pad(k),
            },
            true,
            rng,
        );
        Ok(Self {
            store,
            depth: cfg.g_depth,
            power_iters: cfg.norm_power_iters,
            encoder,
            decoder,
            head,
        })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let side = 1 << self.depth;
        if x.channels() != 1 || !x.height().is_multiple_of(side) || !x.width().is_multiple_of(side) || x.height() == 0 || x.width() == 0 {
            return Err(Error::shape(
                format!("[N, 1, H, W] with H, W multiples of {side}"),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    /// Convolutions in application order, for spectral-norm refreshes and
    /// direct weight access.
    pub fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        self.encoder
            .iter()
            .map(|(c, _)| c)
            .chain(self.decoder.iter().map(|(c, _)| c))
            .chain(std::iter::once(&self.head))
    }

    pub fn head(&self) -> &Conv2d {
        &self.head
    }

    /// Refresh every spectral-norm estimate with the configured iteration count.
    pub fn power_iterate(&mut self) {
        let iters = self.power_iters;
        let convs: Vec<Conv2d> = self.convs().cloned().collect();
        for c in &convs {
            c.power_iterate(&mut self.store, iters);
        }
    }

    /// Forward pass that records activations for [`Self::backward`]. In
    /// [`Mode::Train`] batch-norm running statistics are updated.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, GeneratorCache<T>)> {
        self.check_input(x)?;
        let mut encoder = Vec::with_capacity(self.depth);
        let mut skips = Vec::with_capacity(self.depth);
        let mut h = x.clone();
        for (conv, norm) in &self.encoder {
            let (z, conv_cache) = conv.forward(&self.store, &h);
            let (pre, norm_cache) = norm.forward(&mut self.store, &z, mode);
            h = leaky_relu(&pre);
            skips.push(h.clone());
            encoder.push(Stage {
                conv: conv_cache,
                norm: norm_cache,
                pre,
            });
        }
        let mut decoder: Vec<Option<Stage<T>>> = vec![None; self.depth];
        for i in (0..self.depth).rev() {
            let (conv, norm) = &self.decoder[i];
            let (z, conv_cache) = conv.forward(&self.store, &h);
            let up = pixel_shuffle(&z, 2).expect("decoder width is a multiple of 4");
            let (pre, norm_cache) = norm.forward(&mut self.store, &up, mode);
            let act = leaky_relu(&pre);
            let skip = if i > 0 { &skips[i - 1] } else { x };
            h = Tensor::cat_channels(&act, skip);
            decoder[i] = Some(Stage {
                conv: conv_cache,
                norm: norm_cache,
                pre,
            });
        }
        let (z, head) = self.head.forward(&self.store, &h);
        let output = tanh(&z);
        Ok((
            output.clone(),
            GeneratorCache {
                input_shape: x.shape(),
                encoder,
                decoder: decoder.into_iter().map(|s| s.expect("every stage ran")).collect(),
                head,
                output,
            },
        ))
    }

    /// Evaluation-mode forward pass that leaves every buffer untouched.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut skips = Vec::with_capacity(self.depth);
        let mut h = x.clone();
        for (conv, norm) in &self.encoder {
            h = leaky_relu(&norm.infer(&self.store, &conv.infer(&self.store, &h)));
            skips.push(h.clone());
        }
        for i in (0..self.depth).rev() {
            let (conv, norm) = &self.decoder[i];
            let up = pixel_shuffle(&conv.infer(&self.store, &h), 2).expect("decoder width is a multiple of 4");
            let act = leaky_relu(&norm.infer(&self.store, &up));
            let skip = if i > 0 { &skips[i - 1] } else { x };
            h = Tensor::cat_channels(&act, skip);
        }
        Ok(tanh(&self.head.infer(&self.store, &h)))
    }

    /// Backpropagate `grad_out` (gradient at the `tanh` output). Parameter
    /// gradients are accumulated into the store when `param_grads`; the input
    /// gradient is always returned.
    pub fn backward(&mut self, cache: &GeneratorCache<T>, grad_out: &Tensor<T>, param_grads: bool) -> Tensor<T> {
        let mut grad_x = Tensor::zeros(cache.input_shape);
        let g = tanh_backward(&cache.output, grad_out);
        let g = self.head.backward(&mut self.store, &cache.head, &g, param_grads);
        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; self.depth];
        let mut g = g;
        for i in 0..self.depth {
            let (conv, norm) = &self.decoder[i];
            let stage = &cache.decoder[i];
            let act_ch = stage.pre.channels();
            let (g_act, g_skip) = g.split_channels(act_ch);
            if i > 0 {
                skip_grads[i - 1] = Some(g_skip);
            } else {
                grad_x.add_assign(&g_skip);
            }
            let g_pre = leaky_relu_backward(&stage.pre, &g_act);
            let g_up = norm.backward(&mut self.store, &stage.norm, &g_pre, param_grads);
            let g_z = pixel_unshuffle(&g_up, 2);
            g = conv.backward(&mut self.store, &stage.conv, &g_z, param_grads);
        }
        // `g` is now the gradient at the deepest encoder activation.
        for i in (0..self.depth).rev() {
            if let Some(s) = skip_grads[i].take() {
                g.add_assign(&s);
            }
            let (conv, norm) = &self.encoder[i];
            let stage = &cache.encoder[i];
            let g_pre = leaky_relu_backward(&stage.pre, &g);
            let g_z = norm.backward(&mut self.store, &stage.norm, &g_pre, param_grads);
            g = conv.backward(&mut self.store, &stage.conv, &g_z, param_grads);
        }
        grad_x.add_assign(&g);
        grad_x
    }
}
