//! Directional finite-difference checks of single-precision analytic
//! gradients through miniature networks. Every objective is written once
//! over `Real`; the oracle evaluates the same objective in double precision.

use melganvc::losses::{
    d_hinge_grad, d_hinge_loss, g_adv_grad, g_adv_loss, identity_grad, identity_loss, margin_grad, margin_loss,
    travel_grad, travel_loss,
};
use melganvc::models::{Discriminator, Generator, ModelConfig, Siamese};
use melganvc::nn::{Mode, ParamStore, Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

pub const PROBES: usize = 24;

/// Generator on 8×4 halves, discriminator on 8×4 maps, siamese with a
/// length-3 latent; each under 1k parameters.
pub fn mini_config() -> ModelConfig {
    ModelConfig {
        len_s: 3,
        g_base_channels: 2,
        g_depth: 1,
        d_layers: 2,
        d_base_channels: 2,
        s_layers: 2,
        s_base_channels: 2,
        kernel_size: 3,
        d_kernel_size: 4,
        norm_power_iters: 1,
    }
}

#[derive(Clone)]
pub struct Nets<T> {
    pub g: Generator<T>,
    pub d: Discriminator<T>,
    pub s: Siamese<T>,
}

impl Nets<f32> {
    pub fn new(seed: u64) -> Self {
        let cfg = mini_config();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nets = Self {
            g: Generator::new(&cfg, &mut rng).unwrap(),
            d: Discriminator::new(&cfg, &mut rng).unwrap(),
            s: Siamese::new(&cfg, &mut rng).unwrap(),
        };
        // Default initial weights are tiny; spread them so every path carries signal.
        for store in [&mut nets.g.store, &mut nets.d.store, &mut nets.s.store] {
            let dist = Uniform::new(-0.5f32, 0.5);
            for e in store.entries_mut().iter_mut().filter(|e| e.trainable()) {
                e.value.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
            }
        }
        nets
    }

    pub fn to_f64(&self) -> Nets<f64> {
        self.cast()
    }

    /// Same weights at another precision.
    pub fn cast<T: Real>(&self) -> Nets<T> {
        let cfg = mini_config();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Generator::<T>::new(&cfg, &mut rng).unwrap();
        let mut d = Discriminator::<T>::new(&cfg, &mut rng).unwrap();
        let mut s = Siamese::<T>::new(&cfg, &mut rng).unwrap();
        g.store = self.g.store.cast();
        d.store = self.d.store.cast();
        s.store = self.s.store.cast();
        Nets { g, d, s }
    }
}

/// Which networks' parameters and which inputs a check differentiates.
#[derive(Clone, Copy)]
pub enum Objective {
    DHinge,
    GAdv,
    Travel,
    Margin,
    Identity,
}

impl Objective {
    pub const ALL: [Objective; 5] = [Self::DHinge, Self::GAdv, Self::Travel, Self::Margin, Self::Identity];

    pub fn name(self) -> &'static str {
        match self {
            Self::DHinge => "d_hinge",
            Self::GAdv => "g_adv",
            Self::Travel => "travel",
            Self::Margin => "margin",
            Self::Identity => "identity",
        }
    }

    fn uses(self) -> [bool; 3] {
        match self {
            Self::DHinge => [false, true, false],
            Self::GAdv => [true, true, false],
            Self::Travel => [true, false, true],
            Self::Margin => [false, false, true],
            Self::Identity => [true, false, false],
        }
    }
}


fn trainable<T: Real>(store: &ParamStore<T>) -> Vec<f64> {
    store
        .entries()
        .iter()
        .filter(|e| e.trainable())
        .flat_map(|e| e.value.iter().map(|v| v.to_f64().unwrap()))
        .collect()
}

fn trainable_grads<T: Real>(store: &ParamStore<T>) -> Vec<f64> {
    store
        .entries()
        .iter()
        .filter(|e| e.trainable())
        .flat_map(|e| e.grad.iter().map(|v| v.to_f64().unwrap()))
        .collect()
}

fn load<T: Real>(store: &mut ParamStore<T>, flat: &[f64]) -> usize {
    let mut k = 0;
    for e in store.entries_mut().iter_mut().filter(|e| e.trainable()) {
        for v in e.value.iter_mut() {
            *v = T::of(flat[k]);
            k += 1;
        }
    }
    k
}

fn tensor<T: Real>(shape: [usize; 4], flat: &[f64]) -> Tensor<T> {
    Tensor::from_vec(shape, flat.iter().map(|&v| T::of(v)).collect())
}

fn flat<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64().unwrap()).collect()
}

/// Four inputs of 8×4.
pub const INPUT: [usize; 4] = [4, 1, 8, 4];

/// Loss and, when `grads`, the gradient over (used parameters, inputs).
fn evaluate<T: Real>(
    obj: Objective,
    nets: &mut Nets<T>,
    x: &[f64],
    y: &[f64],
    delta: f64,
    grads: bool,
) -> (f64, Vec<f64>) {
    let xa: Tensor<T> = tensor(INPUT, x);
    let xb: Tensor<T> = tensor(INPUT, y);
    for store in [&mut nets.g.store, &mut nets.d.store, &mut nets.s.store] {
        store.zero_grad();
    }
    let (loss, gx, gy) = match obj {
        Objective::DHinge => {
            let (real, rc) = nets.d.forward(&xa).unwrap();
            let (fake, fc) = nets.d.forward(&xb).unwrap();
            let loss = d_hinge_loss(real.data(), fake.data()).unwrap();
            let (gr, gf) = d_hinge_grad(real.data(), fake.data()).unwrap();
            let gx = nets.d.backward(&rc, &Tensor::from_vec(real.shape(), gr), grads);
            let gy = nets.d.backward(&fc, &Tensor::from_vec(fake.shape(), gf), grads);
            (loss, flat(&gx), flat(&gy))
        }
        Objective::GAdv => {
            let (out, gc) = nets.g.forward(&xa, Mode::Train).unwrap();
            let (scores, dc) = nets.d.forward(&out).unwrap();
            let loss = g_adv_loss(scores.data()).unwrap();
            let g = nets.d.backward(&dc, &Tensor::from_vec(scores.shape(), g_adv_grad(scores.data()).unwrap()), grads);
            let gx = nets.g.backward(&gc, &g, grads);
            (loss, flat(&gx), vec![0.0; y.len()])
        }
        Objective::Travel => {
            let (out, gc) = nets.g.forward(&xa, Mode::Train).unwrap();
            let (zs, sc) = nets.s.forward(&xa, Mode::Train).unwrap();
            let (zt, tc) = nets.s.forward(&out, Mode::Train).unwrap();
            let loss = travel_loss(&zs, &zt).unwrap();
            let (_, g_src, g_tr) = travel_grad(&zs, &zt).unwrap();
            let mut gx = nets.s.backward(&sc, &g_src, grads);
            let g_out = nets.s.backward(&tc, &g_tr, grads);
            gx.add_assign(&nets.g.backward(&gc, &g_out, grads));
            (loss, flat(&gx), vec![0.0; y.len()])
        }
        Objective::Margin => {
            let (z, sc) = nets.s.forward(&xa, Mode::Train).unwrap();
            let delta = T::of(delta);
            let loss = margin_loss(&z, delta).unwrap();
            let (_, gz) = margin_grad(&z, delta).unwrap();
            let gx = nets.s.backward(&sc, &gz, grads);
            (loss, flat(&gx), vec![0.0; y.len()])
        }
        Objective::Identity => {
            let (out, gc) = nets.g.forward(&xb, Mode::Train).unwrap();
            let loss = identity_loss(&out, &xb).unwrap();
            let g = identity_grad(&out, &xb).unwrap();
            let mut gy = nets.g.backward(&gc, &g, grads);
            // The target is the input as well.
            for (a, b) in gy.data_mut().iter_mut().zip(g.data()) {
                *a -= *b;
            }
            (loss, vec![0.0; x.len()], flat(&gy))
        }
    };
    let mut grad = Vec::new();
    if grads {
        let [ug, ud, us] = obj.uses();
        if ug {
            grad.extend(trainable_grads(&nets.g.store));
        }
        if ud {
            grad.extend(trainable_grads(&nets.d.store));
        }
        if us {
            grad.extend(trainable_grads(&nets.s.store));
        }
        grad.extend(gx);
        grad.extend(gy);
    }
    (loss.to_f64().unwrap(), grad)
}

fn point<T: Real>(obj: Objective, nets: &Nets<T>, x: &[f64], y: &[f64]) -> Vec<f64> {
    let [ug, ud, us] = obj.uses();
    let mut theta = Vec::new();
    if ug {
        theta.extend(trainable(&nets.g.store));
    }
    if ud {
        theta.extend(trainable(&nets.d.store));
    }
    if us {
        theta.extend(trainable(&nets.s.store));
    }
    theta.extend_from_slice(x);
    theta.extend_from_slice(y);
    theta
}

fn loss_at(obj: Objective, base: &Nets<f64>, theta: &[f64], delta: f64) -> f64 {
    let mut nets = base.clone();
    let [ug, ud, us] = obj.uses();
    let mut k = 0;
    if ug {
        k += load(&mut nets.g.store, &theta[k..]);
    }
    if ud {
        k += load(&mut nets.d.store, &theta[k..]);
    }
    if us {
        k += load(&mut nets.s.store, &theta[k..]);
    }
    let n = INPUT.iter().product::<usize>();
    let (x, y) = (&theta[k..k + n], &theta[k + n..k + 2 * n]);
    evaluate(obj, &mut nets, x, y, delta, false).0
}

pub struct CheckReport {
    pub parameters: usize,
    /// Smallest |directional derivative| seen; a zero would make the check vacuous.
    pub min_abs_derivative: f64,
    pub max_rel_error: f64,
    pub probes: usize,
}

/// Median pairwise latent distance, so the margin hinge is active for about
/// half of the pairs.
fn median_distance(nets: &Nets<f64>, x: &[f64]) -> f64 {
    let (z, _) = nets.s.clone().forward(&tensor(INPUT, x), Mode::Train).unwrap();
    let (n, len) = (z.batch(), z.item_len());
    let mut d = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            d.push(z.item(i).iter().zip(z.item(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        }
    }
    assert!(len > 0 && !d.is_empty());
    d.sort_by(f64::total_cmp);
    (d[d.len() / 2 - 1] + d[d.len() / 2]) / 2.0
}

/// Compare the analytic gradient at precision `T` with double-precision
/// central differences along `PROBES` random directions.
pub fn check<T: Real>(obj: Objective, seed: u64) -> CheckReport {
    let nets32 = Nets::new(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let n = INPUT.iter().product::<usize>();
    let unit = Uniform::new(-1.0f32, 1.0);
    // Inputs are representable in f32, so both precisions see the same point.
    let x: Vec<f64> = (0..n).map(|_| unit.sample(&mut rng) as f64).collect();
    let y: Vec<f64> = (0..n).map(|_| unit.sample(&mut rng) as f64).collect();
    let nets64 = nets32.to_f64();
    let delta = median_distance(&nets64, &x);
    let mut nets = nets32.cast::<T>();
    let theta = point(obj, &nets, &x, &y);
    let (_, grad) = evaluate(obj, &mut nets, &x, &y, delta, true);
    assert_eq!(grad.len(), theta.len());
    let h = 1e-6;
    let mut max_rel_error = 0.0f64;
    let mut min_abs_derivative = f64::INFINITY;
    for _ in 0..PROBES {
        let dir: Vec<f64> = (0..theta.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        let dir: Vec<f64> = dir.iter().map(|d| d / norm).collect();
        let shifted = |s: f64| -> Vec<f64> { theta.iter().zip(&dir).map(|(t, d)| t + s * d).collect() };
        let numeric = (loss_at(obj, &nets64, &shifted(h), delta) - loss_at(obj, &nets64, &shifted(-h), delta)) / (2.0 * h);
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        max_rel_error = max_rel_error.max(rel);
        min_abs_derivative = min_abs_derivative.min(numeric.abs());
    }
    CheckReport {
        parameters: theta.len() - 2 * n,
        min_abs_derivative,
        max_rel_error,
        probes: PROBES,
    }
}
