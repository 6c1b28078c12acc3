use rand::Rng;

use super::param::{gaussian_init, ParamId, ParamStore};
use super::tensor::{gemm, Real, Tensor};

/// Whether batch statistics or running statistics drive batch norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; nothing is mutated.
    Eval,
}

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalization over `(N, H, W)`.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    channels: usize,
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    /// Running statistics were used, so channels are decoupled.
    eval: bool,
}

impl BatchNorm2d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: store.add_param(format!("{name}.gamma"), &[channels], vec![T::one(); channels]),
            beta: store.add_param(format!("{name}.beta"), &[channels], vec![T::zero(); channels]),
            running_mean: store.add_buffer(
                format!("{name}.running_mean"),
                &[channels],
                vec![T::zero(); channels],
            ),
            running_var: store.add_buffer(
                format!("{name}.running_var"),
                &[channels],
                vec![T::one(); channels],
            ),
        }
    }

    /// Per-channel (mean, biased variance) over the batch, accumulated in a
    /// fixed order.
    fn batch_stats<T: Real>(&self, x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
        let [n, c, h, w] = x.shape();
        let plane = h * w;
        let count = T::of((n * plane) as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for b in 0..n {
                s += x.item(b)[ch * plane..(ch + 1) * plane].iter().copied().sum::<T>();
            }
            let m = s / count;
            let mut ss = T::zero();
            for b in 0..n {
                ss += x.item(b)[ch * plane..(ch + 1) * plane]
                    .iter()
                    .map(|&v| (v - m) * (v - m))
                    .sum::<T>();
            }
            mean[ch] = m;
            var[ch] = ss / count;
        }
        (mean, var)
    }

    fn normalize<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
        mean: &[T],
        inv_std: &[T],
    ) -> (Tensor<T>, Tensor<T>) {
        let [n, c, h, w] = x.shape();
        let plane = h * w;
        let gamma = store.value(self.gamma);
        let beta = store.value(self.beta);
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for b in 0..n {
            let src = x.item(b);
            for ch in 0..c {
                let range = ch * plane..(ch + 1) * plane;
                for (xh, &v) in xhat.item_mut(b)[range.clone()].iter_mut().zip(&src[range.clone()]) {
                    *xh = (v - mean[ch]) * inv_std[ch];
                }
                let xh_slice = &xhat.item(b)[range.clone()];
                for (o, &xh) in y.item_mut(b)[range].iter_mut().zip(xh_slice) {
                    *o = gamma[ch] * xh + beta[ch];
                }
            }
        }
        (y, xhat)
    }

    pub fn forward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        x: &Tensor<T>,
        mode: Mode,
    ) -> (Tensor<T>, BatchNormCache<T>) {
        assert_eq!(x.channels(), self.channels, "batch norm channel mismatch");
        let eps = T::of(BN_EPS);
        match mode {
            Mode::Eval => {
                let mean = store.value(self.running_mean).to_vec();
                let inv_std: Vec<T> = store
                    .value(self.running_var)
                    .iter()
                    .map(|&v| T::one() / (v + eps).sqrt())
                    .collect();
                let (y, xhat) = self.normalize(store, x, &mean, &inv_std);
                (
                    y,
                    BatchNormCache {
                        xhat,
                        inv_std,
                        eval: true,
                    },
                )
            }
            Mode::Train => {
                let (mean, var) = self.batch_stats(x);
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                let (y, xhat) = self.normalize(store, x, &mean, &inv_std);
                let count = x.batch() * x.height() * x.width();
                let unbias = if count > 1 {
                    T::of(count as f64 / (count - 1) as f64)
                } else {
                    T::one()
                };
                let mom = T::of(BN_MOMENTUM);
                let keep = T::one() - mom;
                for (r, &m) in store.value_mut(self.running_mean).iter_mut().zip(&mean) {
                    *r = keep * *r + mom * m;
                }
                for (r, &v) in store.value_mut(self.running_var).iter_mut().zip(&var) {
                    *r = keep * *r + mom * v * unbias;
                }
                (
                    y,
                    BatchNormCache {
                        xhat,
                        inv_std,
                        eval: false,
                    },
                )
            }
        }
    }

    /// Evaluation-mode forward that leaves the store untouched.
    pub fn infer<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        let eps = T::of(BN_EPS);
        let mean = store.value(self.running_mean).to_vec();
        let inv_std: Vec<T> = store
            .value(self.running_var)
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        self.normalize(store, x, &mean, &inv_std).0
    }

    pub fn backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        cache: &BatchNormCache<T>,
        grad_out: &Tensor<T>,
        param_grads: bool,
    ) -> Tensor<T> {
        let [n, c, h, w] = grad_out.shape();
        let plane = h * w;
        let count = T::of((n * plane) as f64);
        let gamma = store.value(self.gamma).to_vec();
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for ch in 0..c {
            for b in 0..n {
                let range = ch * plane..(ch + 1) * plane;
                for (&g, &xh) in grad_out.item(b)[range.clone()]
                    .iter()
                    .zip(&cache.xhat.item(b)[range])
                {
                    sum_g[ch] += g;
                    sum_gx[ch] += g * xh;
                }
            }
        }
        if param_grads {
            for (acc, &s) in store.grad_mut(self.gamma).iter_mut().zip(&sum_gx) {
                *acc += s;
            }
            for (acc, &s) in store.grad_mut(self.beta).iter_mut().zip(&sum_g) {
                *acc += s;
            }
        }
        let mut gx = Tensor::zeros(grad_out.shape());
        for b in 0..n {
            for ch in 0..c {
                let range = ch * plane..(ch + 1) * plane;
                let scale = gamma[ch] * cache.inv_std[ch];
                let go = &grad_out.item(b)[range.clone()];
                let xh = &cache.xhat.item(b)[range.clone()];
                let dst = &mut gx.item_mut(b)[range];
                if cache.eval {
                    for (d, &g) in dst.iter_mut().zip(go) {
                        *d = scale * g;
                    }
                } else {
                    let mg = sum_g[ch] / count;
                    let mgx = sum_gx[ch] / count;
                    for ((d, &g), &x) in dst.iter_mut().zip(go).zip(xh) {
                        *d = scale * (g - mg - x * mgx);
                    }
                }
            }
        }
        gx
    }
}

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let slope = T::of(LEAKY_SLOPE);
    x.map(|v| if v > T::zero() { v } else { slope * v })
}

/// Backward of [`leaky_relu`] given the forward input.
pub fn leaky_relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let slope = T::of(LEAKY_SLOPE);
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { slope * g })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

pub fn tanh<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Backward of [`tanh`] given the forward output.
pub fn tanh_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * (T::one() - y * y))
        .collect();
    Tensor::from_vec(output.shape(), data)
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("pixel shuffle needs channels divisible by {factor}², got {channels}")]
pub struct ShuffleError {
    pub channels: usize,
    pub factor: usize,
}

/// Periodic shuffle `[N, C·r², H, W] → [N, C, H·r, W·r]`, with
/// `out[c, h·r + i, w·r + j] = in[c·r² + i·r + j, h, w]`.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>, ShuffleError> {
    let [n, c, h, w] = x.shape();
    if r == 0 || c % (r * r) != 0 {
        return Err(ShuffleError {
            channels: c,
            factor: r,
        });
    }
    let co = c / (r * r);
    let (ho, wo) = (h * r, w * r);
    let mut y = Tensor::zeros([n, co, ho, wo]);
    for b in 0..n {
        let src = x.item(b);
        let dst = y.item_mut(b);
        for oc in 0..co {
            for i in 0..r {
                for j in 0..r {
                    let ic = oc * r * r + i * r + j;
                    for hh in 0..h {
                        for ww in 0..w {
                            dst[(oc * ho + hh * r + i) * wo + ww * r + j] = src[(ic * h + hh) * w + ww];
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Inverse rearrangement of [`pixel_shuffle`], which is also its gradient.
pub fn pixel_unshuffle<T: Real>(y: &Tensor<T>, r: usize) -> Tensor<T> {
    let [n, co, ho, wo] = y.shape();
    let (h, w) = (ho / r, wo / r);
    let c = co * r * r;
    let mut x = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        let src = y.item(b);
        let dst = x.item_mut(b);
        for oc in 0..co {
            for i in 0..r {
                for j in 0..r {
                    let ic = oc * r * r + i * r + j;
                    for hh in 0..h {
                        for ww in 0..w {
                            dst[(ic * h + hh) * w + ww] = src[(oc * ho + hh * r + i) * wo + ww * r + j];
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[N, C, H, W] → [N, C, 1, 1]` spatial mean.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let denom = T::of(plane as f64);
    let mut data = Vec::with_capacity(n * c);
    for b in 0..n {
        let item = x.item(b);
        for ch in 0..c {
            data.push(item[ch * plane..(ch + 1) * plane].iter().copied().sum::<T>() / denom);
        }
    }
    Tensor::from_vec([n, c, 1, 1], data)
}

pub fn global_avg_pool_backward<T: Real>(input_shape: [usize; 4], grad_out: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input_shape;
    let plane = h * w;
    let denom = T::of(plane as f64);
    let mut gx = Tensor::zeros(input_shape);
    for b in 0..n {
        let g = grad_out.item(b);
        let dst = gx.item_mut(b);
        for ch in 0..c {
            let v = g[ch] / denom;
            dst[ch * plane..(ch + 1) * plane].iter_mut().for_each(|d| *d = v);
        }
    }
    gx
}

/// Fully connected layer on `[N, in, 1, 1]` inputs.
#[derive(Clone, Debug)]
pub struct Linear {
    in_features: usize,
    out_features: usize,
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            in_features,
            out_features,
            weight: store.add_param(
                format!("{name}.weight"),
                &[out_features, in_features],
                gaussian_init(rng, in_features * out_features),
            ),
            bias: store.add_param(format!("{name}.bias"), &[out_features], vec![T::zero(); out_features]),
        }
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        let n = x.batch();
        assert_eq!(x.item_len(), self.in_features, "linear input size mismatch");
        let mut out = vec![T::zero(); n * self.out_features];
        gemm(
            n,
            self.in_features,
            self.out_features,
            x.data(),
            false,
            store.value(self.weight),
            true,
            T::zero(),
            &mut out,
        );
        let bias = store.value(self.bias);
        for row in out.chunks_exact_mut(self.out_features) {
            for (o, &b) in row.iter_mut().zip(bias) {
                *o += b;
            }
        }
        Tensor::from_rows(n, self.out_features, out)
    }

    pub fn backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        input: &Tensor<T>,
        grad_out: &Tensor<T>,
        param_grads: bool,
    ) -> Tensor<T> {
        let n = input.batch();
        if param_grads {
            let mut gw = vec![T::zero(); self.out_features * self.in_features];
            gemm(
                self.out_features,
                n,
                self.in_features,
                grad_out.data(),
                true,
                input.data(),
                false,
                T::zero(),
                &mut gw,
            );
            for (acc, d) in store.grad_mut(self.weight).iter_mut().zip(gw) {
                *acc += d;
            }
            let gb = store.grad_mut(self.bias);
            for row in grad_out.data().chunks_exact(self.out_features) {
                for (acc, &g) in gb.iter_mut().zip(row) {
                    *acc += g;
                }
            }
        }
        let mut gx = vec![T::zero(); n * self.in_features];
        gemm(
            n,
            self.out_features,
            self.in_features,
            grad_out.data(),
            false,
            store.value(self.weight),
            false,
            T::zero(),
            &mut gx,
        );
        Tensor::from_vec(input.shape(), gx)
    }
}
