use rand::Rng;

use super::param::{gaussian_init, random_unit, ParamId, ParamStore};
use super::spectral::{normalized_weight_grad, power_iterate, sigma};
use super::tensor::{gemm, Real, Tensor};

/// Geometry of a square-kernel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let out = |x: usize| (x + 2 * self.pad - self.kernel) / self.stride + 1;
        (out(h), out(w))
    }

    fn receptive(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

/// Output positions `o` in `[lo, hi)` whose input index `o·stride + offset −
/// pad` falls inside `[0, len)`.
fn valid_range(offset: usize, pad: usize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(offset).div_ceil(stride);
    let hi = (len + pad).saturating_sub(offset).div_ceil(stride).min(out_len);
    (lo.min(hi), hi)
}

/// Unfold a batch `[N, C, H, W]` into `[C·k·k, N·Ho·Wo]`, written in
/// storage order.
fn im2col<T: Real>(x: &Tensor<T>, g: &ConvShape) -> (Vec<T>, usize, usize) {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = g.output_hw(h, w);
    let (k, s) = (g.kernel, g.stride);
    let zero = T::zero();
    let mut cols = Vec::with_capacity(c * k * k * n * ho * wo);
    for ch in 0..c {
        for ki in 0..k {
            let (oh_lo, oh_hi) = valid_range(ki, g.pad, s, h, ho);
            for kj in 0..k {
                let (ow_lo, ow_hi) = valid_range(kj, g.pad, s, w, wo);
                let iw_lo = ow_lo * s + kj - g.pad;
                let width = ow_hi - ow_lo;
                for b in 0..n {
                    let src = &x.item(b)[ch * h * w..(ch + 1) * h * w];
                    cols.resize(cols.len() + oh_lo * wo, zero);
                    for oh in oh_lo..oh_hi {
                        let ih = oh * s + ki - g.pad;
                        let src_row = &src[ih * w + iw_lo..];
                        cols.resize(cols.len() + ow_lo, zero);
                        if s == 1 {
                            cols.extend_from_slice(&src_row[..width]);
                        } else {
                            cols.extend(src_row.iter().step_by(s).take(width).copied());
                        }
                        cols.resize(cols.len() + wo - ow_hi, zero);
                    }
                    cols.resize(cols.len() + (ho - oh_hi) * wo, zero);
                }
            }
        }
    }
    (cols, ho, wo)
}

/// Fold `[C·k·k, N·Ho·Wo]` column gradients back onto an input-shaped tensor.
fn col2im<T: Real>(cols: &[T], shape: [usize; 4], g: &ConvShape, ho: usize, wo: usize) -> Tensor<T> {
    let [n, c, h, w] = shape;
    let plane = ho * wo;
    let cols_n = n * plane;
    let (k, s) = (g.kernel, g.stride);
    let mut out = Tensor::zeros(shape);
    for ki in 0..k {
        let (oh_lo, oh_hi) = valid_range(ki, g.pad, s, h, ho);
        for kj in 0..k {
            let (ow_lo, ow_hi) = valid_range(kj, g.pad, s, w, wo);
            let iw_lo = ow_lo * s + kj - g.pad;
            for ch in 0..c {
                let row = (ch * k + ki) * k + kj;
                for b in 0..n {
                    let src = &cols[row * cols_n + b * plane..row * cols_n + (b + 1) * plane];
                    let dst = &mut out.item_mut(b)[ch * h * w..(ch + 1) * h * w];
                    for oh in oh_lo..oh_hi {
                        let ih = oh * s + ki - g.pad;
                        let dst_row = &mut dst[ih * w + iw_lo..];
                        let src_row = &src[oh * wo + ow_lo..oh * wo + ow_hi];
                        for (d, v) in dst_row.iter_mut().step_by(s).zip(src_row) {
                            *d += *v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Power iterations run at construction so the first normalizer is
/// already close to the top singular value.
const INIT_POWER_ITERS: usize = 15;

/// Saved activations for [`Conv2d::backward`].
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    input: Tensor<T>,
    w_eff: Vec<T>,
    sigma: T,
}

/// 2-D convolution with bias and optional spectral normalization.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub shape: ConvShape,
    weight: ParamId,
    bias: ParamId,
    /// Left/right power-iteration vectors when spectrally normalized.
    power: Option<(ParamId, ParamId)>,
}

impl Conv2d {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        shape: ConvShape,
        spectral: bool,
        rng: &mut R,
    ) -> Self {
        let k = shape.kernel;
        let weight = store.add_param(
            format!("{name}.weight"),
            &[shape.out_ch, shape.in_ch, k, k],
            gaussian_init(rng, shape.out_ch * shape.receptive()),
        );
        let bias = store.add_param(format!("{name}.bias"), &[shape.out_ch], vec![T::zero(); shape.out_ch]);
        let power = spectral.then(|| {
            let u = store.add_buffer(
                format!("{name}.sn_u"),
                &[shape.out_ch],
                random_unit(rng, shape.out_ch),
            );
            let v = store.add_buffer(
                format!("{name}.sn_v"),
                &[shape.receptive()],
                random_unit(rng, shape.receptive()),
            );
            (u, v)
        });
        let conv = Self {
            shape,
            weight,
            bias,
            power,
        };
        conv.power_iterate(store, INIT_POWER_ITERS);
        conv
    }

    pub fn weight_id(&self) -> ParamId {
        self.weight
    }

    pub fn bias_id(&self) -> ParamId {
        self.bias
    }

    pub fn is_spectral(&self) -> bool {
        self.power.is_some()
    }

    /// Refine the singular-vector estimates; no-op without spectral norm.
    pub fn power_iterate<T: Real>(&self, store: &mut ParamStore<T>, iters: usize) {
        if let Some((u_id, v_id)) = self.power {
            let rows = self.shape.out_ch;
            let cols = self.shape.receptive();
            let w = store.value(self.weight).to_vec();
            let mut u = store.value(u_id).to_vec();
            let mut v = store.value(v_id).to_vec();
            power_iterate(&w, rows, cols, &mut u, &mut v, iters);
            store.value_mut(u_id).copy_from_slice(&u);
            store.value_mut(v_id).copy_from_slice(&v);
        }
    }

    /// Weight actually applied in the forward pass and its normalizer.
    pub fn effective_weight<T: Real>(&self, store: &ParamStore<T>) -> (Vec<T>, T) {
        let w = store.value(self.weight);
        match self.power {
            None => (w.to_vec(), T::one()),
            Some((u_id, v_id)) => {
                let s = sigma(
                    w,
                    self.shape.out_ch,
                    self.shape.receptive(),
                    store.value(u_id),
                    store.value(v_id),
                );
                if s == T::zero() {
                    (w.to_vec(), T::zero())
                } else {
                    (w.iter().map(|&a| a / s).collect(), s)
                }
            }
        }
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> (Tensor<T>, ConvCache<T>) {
        assert_eq!(x.channels(), self.shape.in_ch, "conv input channel mismatch");
        let (w_eff, sigma) = self.effective_weight(store);
        let y = self.apply(store, x, &w_eff);
        (
            y,
            ConvCache {
                input: x.clone(),
                w_eff,
                sigma,
            },
        )
    }

    /// Forward pass without saving anything for backward.
    pub fn infer<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.channels(), self.shape.in_ch, "conv input channel mismatch");
        let (w_eff, _) = self.effective_weight(store);
        self.apply(store, x, &w_eff)
    }

    fn apply<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>, w_eff: &[T]) -> Tensor<T> {
        let n = x.batch();
        let co = self.shape.out_ch;
        let kdim = self.shape.receptive();
        let (cols, ho, wo) = im2col(x, &self.shape);
        let plane = ho * wo;
        let mut tmp = vec![T::zero(); co * n * plane];
        gemm(co, kdim, n * plane, w_eff, false, &cols, false, T::zero(), &mut tmp);
        let bias = store.value(self.bias);
        let mut y = Tensor::zeros([n, co, ho, wo]);
        for b in 0..n {
            let item = y.item_mut(b);
            for c in 0..co {
                let src = &tmp[c * n * plane + b * plane..c * n * plane + (b + 1) * plane];
                for (d, &s) in item[c * plane..(c + 1) * plane].iter_mut().zip(src) {
                    *d = s + bias[c];
                }
            }
        }
        y
    }

    /// Accumulate parameter gradients (when `param_grads`) and return the
    /// gradient with respect to the input.
    pub fn backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        cache: &ConvCache<T>,
        grad_out: &Tensor<T>,
        param_grads: bool,
    ) -> Tensor<T> {
        let x = &cache.input;
        let n = x.batch();
        let co = self.shape.out_ch;
        let kdim = self.shape.receptive();
        let [_, _, ho, wo] = grad_out.shape();
        let plane = ho * wo;
        // [Cout, N·P] layout of the output gradient.
        let mut g = vec![T::zero(); co * n * plane];
        for b in 0..n {
            let item = grad_out.item(b);
            for c in 0..co {
                g[c * n * plane + b * plane..c * n * plane + (b + 1) * plane]
                    .copy_from_slice(&item[c * plane..(c + 1) * plane]);
            }
        }
        let (cols, _, _) = im2col(x, &self.shape);
        if param_grads {
            let mut gw_eff = vec![T::zero(); co * kdim];
            gemm(co, n * plane, kdim, &g, false, &cols, true, T::zero(), &mut gw_eff);
            let gw = match self.power {
                Some((u_id, v_id)) => normalized_weight_grad(
                    &gw_eff,
                    &cache.w_eff,
                    cache.sigma,
                    store.value(u_id),
                    store.value(v_id),
                ),
                None => gw_eff,
            };
            for (acc, d) in store.grad_mut(self.weight).iter_mut().zip(gw) {
                *acc += d;
            }
            let gb = store.grad_mut(self.bias);
            for c in 0..co {
                let s: T = g[c * n * plane..(c + 1) * n * plane].iter().copied().sum();
                gb[c] += s;
            }
        }
        let mut gcols = vec![T::zero(); kdim * n * plane];
        gemm(kdim, co, n * plane, &cache.w_eff, true, &g, false, T::zero(), &mut gcols);
        col2im(&gcols, x.shape(), &self.shape, ho, wo)
    }
}
