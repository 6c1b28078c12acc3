//! Adversarial, transformation-vector, margin and identity losses with their
//! analytic gradients.
//!
//! Scores are flat slices over batch and patch positions. Latent batches are
//! `[N, len, 1, 1]` tensors. Pairwise losses visit unordered pairs `i < j`
//! in lexicographic order, so accumulation order is fixed.

use crate::config::key_value_struct;
use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Identity term in the generator objective; `0` disables it.
    pub alpha: f64,
    /// Transformation-vector term, shared by generator and siamese objectives.
    pub beta: f64,
    /// Siamese margin term.
    pub gamma: f64,
    /// Minimum latent distance enforced by the margin term.
    pub delta: f64,
}

key_value_struct!(LossWeights {
    alpha,
    beta,
    gamma,
    delta,
});

impl Default for LossWeights {
    fn default() -> Self {
        Self::voice()
    }
}

impl LossWeights {
    pub fn voice() -> Self {
        Self {
            alpha: 1.0,
            beta: 10.0,
            gamma: 10.0,
            delta: 10.0,
        }
    }

    /// No identity term.
    pub fn music() -> Self {
        Self {
            alpha: 0.0,
            ..Self::voice()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(value >= 0.0) {
                return Err(Error::NegativeWeight { name, value });
            }
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

fn need(found: usize, need: usize) -> Result<()> {
    if found < need {
        return Err(Error::BatchTooSmall { found, need });
    }
    Ok(())
}

fn mean<T: Real>(values: impl Iterator<Item = T>, count: usize) -> T {
    values.fold(T::zero(), |acc, v| acc + v) / T::of(count as f64)
}

/// `−mean(min(0, −1 + real)) − mean(min(0, −1 − fake))`.
pub fn d_hinge_loss<T: Real>(real: &[T], fake: &[T]) -> Result<T> {
    need(real.len(), 1)?;
    need(fake.len(), 1)?;
    let one = T::one();
    let r = mean(real.iter().map(|&s| (one - s).max(T::zero())), real.len());
    let f = mean(fake.iter().map(|&s| (one + s).max(T::zero())), fake.len());
    Ok(r + f)
}

/// Gradients of [`d_hinge_loss`] with respect to real and fake scores.
pub fn d_hinge_grad<T: Real>(real: &[T], fake: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    need(real.len(), 1)?;
    need(fake.len(), 1)?;
    let one = T::one();
    let wr = T::of(1.0 / real.len() as f64);
    let wf = T::of(1.0 / fake.len() as f64);
    let gr = real.iter().map(|&s| if s < one { -wr } else { T::zero() }).collect();
    let gf = fake.iter().map(|&s| if s > -one { wf } else { T::zero() }).collect();
    Ok((gr, gf))
}

/// `−mean(fake)`.
pub fn g_adv_loss<T: Real>(fake: &[T]) -> Result<T> {
    need(fake.len(), 1)?;
    Ok(-mean(fake.iter().copied(), fake.len()))
}

pub fn g_adv_grad<T: Real>(fake: &[T]) -> Result<Vec<T>> {
    need(fake.len(), 1)?;
    Ok(vec![T::of(-1.0 / fake.len() as f64); fake.len()])
}

/// `x_j − x_i`.
pub fn transformation_vector<T: Real>(x_i: &[T], x_j: &[T]) -> Result<Vec<T>> {
    if x_i.len() != x_j.len() {
        return Err(Error::shape(format!("length {}", x_i.len()), format!("length {}", x_j.len())));
    }
    Ok(x_i.iter().zip(x_j).map(|(&a, &b)| b - a).collect())
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn pair_count(n: usize) -> usize {
    n * (n - 1) / 2
}

fn check_latents<T: Real>(src: &Tensor<T>, tr: &Tensor<T>) -> Result<()> {
    if src.shape() != tr.shape() {
        return Err(Error::shape(format!("{:?}", src.shape()), format!("{:?}", tr.shape())));
    }
    need(src.batch(), 2)
}

/// Pair term of the transformation-vector loss and its gradients with
/// respect to `t` and `t'`. A zero vector contributes a cosine term of 1 and
/// no angular gradient.
fn travel_pair<T: Real>(t: &[T], tp: &[T]) -> (T, Vec<T>, Vec<T>) {
    let (tt, tptp) = (dot(t, t), dot(tp, tp));
    let nt = tt.sqrt();
    let ntp = tptp.sqrt();
    let diff: Vec<T> = t.iter().zip(tp).map(|(&a, &b)| a - b).collect();
    let sq = dot(&diff, &diff);
    let two = T::of(2.0);
    let mut gt: Vec<T> = diff.iter().map(|&d| two * d).collect();
    let mut gtp: Vec<T> = diff.iter().map(|&d| -two * d).collect();
    if nt == T::zero() || ntp == T::zero() {
        return (T::one() + sq, gt, gtp);
    }
    // One rounded square root, so t = t' gives cos = 1 exactly.
    let cos = dot(t, tp) / (tt * tptp).sqrt();
    // d(1 − cos)/dt = −(t'/(|t||t'|) − cos · t/|t|²), symmetric for t'.
    let inv = T::one() / (nt * ntp);
    let (ct, ctp) = (cos / (nt * nt), cos / (ntp * ntp));
    for k in 0..t.len() {
        gt[k] -= tp[k] * inv - ct * t[k];
        gtp[k] -= t[k] * inv - ctp * tp[k];
    }
    (T::one() - cos + sq, gt, gtp)
}

fn diff_rows<T: Real>(x: &Tensor<T>, i: usize, j: usize) -> Vec<T> {
    x.item(i).iter().zip(x.item(j)).map(|(&a, &b)| a - b).collect()
}

/// Mean over pairs `i < j` of `(1 − cos(t, t')) + ‖t − t'‖²` with
/// `t = src_i − src_j` and `t' = tr_i − tr_j`, where `tr_i` is the encoding
/// of the translation of source `i`.
pub fn travel_loss<T: Real>(src: &Tensor<T>, tr: &Tensor<T>) -> Result<T> {
    check_latents(src, tr)?;
    let n = src.batch();
    let mut total = T::zero();
    for i in 0..n {
        for j in i + 1..n {
            total += travel_pair(&diff_rows(src, i, j), &diff_rows(tr, i, j)).0;
        }
    }
    Ok(total / T::of(pair_count(n) as f64))
}

/// [`travel_loss`] with its gradients with respect to both latent batches.
pub fn travel_grad<T: Real>(src: &Tensor<T>, tr: &Tensor<T>) -> Result<(T, Tensor<T>, Tensor<T>)> {
    check_latents(src, tr)?;
    let n = src.batch();
    let scale = T::of(1.0 / pair_count(n) as f64);
    let mut total = T::zero();
    let mut g_src = Tensor::zeros(src.shape());
    let mut g_tr = Tensor::zeros(tr.shape());
    for i in 0..n {
        for j in i + 1..n {
            let (v, gt, gtp) = travel_pair(&diff_rows(src, i, j), &diff_rows(tr, i, j));
            total += v;
            for (grad, g) in [(&mut g_src, &gt), (&mut g_tr, &gtp)] {
                for (d, &x) in grad.item_mut(i).iter_mut().zip(g) {
                    *d += x * scale;
                }
                for (d, &x) in grad.item_mut(j).iter_mut().zip(g) {
                    *d -= x * scale;
                }
            }
        }
    }
    Ok((total * scale, g_src, g_tr))
}

/// Mean over pairs `i < j` of `max(0, δ − ‖enc_i − enc_j‖)`.
pub fn margin_loss<T: Real>(enc: &Tensor<T>, delta: T) -> Result<T> {
    let n = enc.batch();
    need(n, 2)?;
    let mut total = T::zero();
    for i in 0..n {
        for j in i + 1..n {
            let d = diff_rows(enc, i, j);
            total += (delta - dot(&d, &d).sqrt()).max(T::zero());
        }
    }
    Ok(total / T::of(pair_count(n) as f64))
}

/// [`margin_loss`] and its gradient. Coincident encodings get a zero
/// subgradient.
pub fn margin_grad<T: Real>(enc: &Tensor<T>, delta: T) -> Result<(T, Tensor<T>)> {
    let n = enc.batch();
    need(n, 2)?;
    let scale = T::of(1.0 / pair_count(n) as f64);
    let mut total = T::zero();
    let mut grad = Tensor::zeros(enc.shape());
    for i in 0..n {
        for j in i + 1..n {
            let d = diff_rows(enc, i, j);
            let dist = dot(&d, &d).sqrt();
            if dist >= delta {
                continue;
            }
            total += delta - dist;
            if dist == T::zero() {
                continue;
            }
            let w = scale / dist;
            for (g, &x) in grad.item_mut(i).iter_mut().zip(&d) {
                *g -= w * x;
            }
            for (g, &x) in grad.item_mut(j).iter_mut().zip(&d) {
                *g += w * x;
            }
        }
    }
    Ok((total * scale, grad))
}

fn check_pair<T: Real>(output: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if output.shape() != target.shape() {
        return Err(Error::shape(format!("{:?}", target.shape()), format!("{:?}", output.shape())));
    }
    need(output.batch(), 1)
}

/// Mean over the batch of per-item mean squared error.
pub fn identity_loss<T: Real>(output: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    check_pair(output, target)?;
    let count = output.data().len();
    Ok(mean(
        output.data().iter().zip(target.data()).map(|(&a, &b)| (a - b) * (a - b)),
        count,
    ))
}

pub fn identity_grad<T: Real>(output: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    check_pair(output, target)?;
    let w = T::of(2.0 / output.data().len() as f64);
    let data = output.data().iter().zip(target.data()).map(|(&a, &b)| w * (a - b)).collect();
    Ok(Tensor::from_vec(output.shape(), data))
}

/// Discriminator objective: the hinge loss itself.
pub fn total_d_loss(d_adv: f64) -> f64 {
    d_adv
}

/// `adv + α·identity + β·travel`; with `α = 0` the identity value is ignored.
pub fn total_g_loss(adv: f64, identity: f64, travel: f64, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    let id = if w.alpha == 0.0 { 0.0 } else { w.alpha * identity };
    Ok(adv + id + w.beta * travel)
}

/// `β·travel + γ·margin`.
pub fn total_s_loss(travel: f64, margin: f64, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    Ok(w.beta * travel + w.gamma * margin)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(data: &[&[f64]]) -> Tensor<f64> {
        let len = data[0].len();
        Tensor::from_rows(data.len(), len, data.iter().flat_map(|r| r.iter().copied()).collect())
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(d_hinge_loss(&[1.0f64; 4], &[-1.0; 4]).unwrap(), 0.0);
        assert_eq!(d_hinge_loss(&[0.0f64; 4], &[0.0; 4]).unwrap(), 2.0);
        assert_eq!(d_hinge_loss(&[2.0f64], &[-3.0]).unwrap(), 0.0);
        assert!(d_hinge_loss::<f64>(&[], &[0.0]).is_err());
    }

    #[test]
    fn adversarial_examples() {
        assert_eq!(g_adv_loss(&[0.75f64; 5]).unwrap(), -0.75);
        assert_eq!(g_adv_loss(&[1.0f64, -1.0]).unwrap(), 0.0);
        assert!(g_adv_loss::<f32>(&[]).is_err());
    }

    #[test]
    fn transformation_vector_examples() {
        assert_eq!(transformation_vector(&[1.0f64, 2.0], &[4.0, 6.0]).unwrap(), vec![3.0, 4.0]);
        assert!(transformation_vector(&[1.0f64], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn travel_examples() {
        let zero = rows(&[&[0.0, 0.0], &[0.0, 0.0]]);
        let src = rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let tr = rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(travel_loss(&src, &tr).unwrap(), 3.0);
        let src = rows(&[&[2.0, 0.0], &[0.0, 0.0]]);
        let tr = rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(travel_loss(&src, &tr).unwrap(), 1.0);
        assert_eq!(travel_loss(&zero, &zero).unwrap(), 1.0);
        assert!(travel_loss(&rows(&[&[1.0]]), &rows(&[&[1.0]])).is_err());
    }

    #[test]
    fn margin_examples() {
        let far = rows(&[&[0.0, 0.0], &[10.0, 0.0], &[0.0, 12.0]]);
        assert_eq!(margin_loss(&far, 10.0).unwrap(), 0.0);
        let same = rows(&[&[1.0, 2.0], &[1.0, 2.0]]);
        assert_eq!(margin_loss(&same, 10.0).unwrap(), 10.0);
        let half = rows(&[&[0.0, 0.0], &[3.0, 4.0]]);
        assert_eq!(margin_loss(&half, 10.0).unwrap(), 5.0);
    }

    #[test]
    fn identity_examples() {
        let b = Tensor::from_vec([2, 1, 2, 2], vec![0.1f64, 0.2, 0.3, 0.4, -0.1, -0.2, -0.3, -0.4]);
        assert_eq!(identity_loss(&b, &b).unwrap(), 0.0);
        let shifted = b.map(|v| v + 0.5);
        assert!((identity_loss(&shifted, &b).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn weighted_totals() {
        let w = LossWeights::voice();
        assert_eq!(total_g_loss(1.0, 2.0, 3.0, &w).unwrap(), 33.0);
        assert_eq!(total_s_loss(3.0, 4.0, &w).unwrap(), 70.0);
        let off = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            delta: 10.0,
        };
        assert_eq!(total_g_loss(1.0, 2.0, 3.0, &off).unwrap(), 1.0);
        assert_eq!(total_s_loss(3.0, 4.0, &off).unwrap(), 0.0);
        let bad = LossWeights { beta: -1.0, ..w };
        assert!(matches!(total_s_loss(1.0, 1.0, &bad), Err(Error::NegativeWeight { name: "beta", .. })));
    }

    #[test]
    fn travel_gradient_matches_finite_differences() {
        let src = rows(&[&[0.3, -0.2, 0.5], &[0.1, 0.4, -0.6], &[-0.7, 0.2, 0.05]]);
        let tr = rows(&[&[0.2, 0.1, -0.3], &[0.5, -0.4, 0.2], &[0.0, 0.3, 0.6]]);
        let (_, gs, gt) = travel_grad(&src, &tr).unwrap();
        let h = 1e-6;
        for k in 0..src.data().len() {
            for (which, analytic) in [(0, &gs), (1, &gt)] {
                let bump = |sign: f64| {
                    let (mut a, mut b) = (src.clone(), tr.clone());
                    let t = if which == 0 { &mut a } else { &mut b };
                    t.data_mut()[k] += sign * h;
                    travel_loss(&a, &b).unwrap()
                };
                let fd = (bump(1.0) - bump(-1.0)) / (2.0 * h);
                assert!((fd - analytic.data()[k]).abs() < 1e-7, "k={k} which={which}");
            }
        }
    }

    #[test]
    fn margin_gradient_matches_finite_differences() {
        let enc = rows(&[&[0.3, -0.2], &[1.1, 0.4], &[-0.7, 2.0]]);
        let (_, g) = margin_grad(&enc, 2.5).unwrap();
        let h = 1e-6;
        for k in 0..enc.data().len() {
            let bump = |sign: f64| {
                let mut e = enc.clone();
                e.data_mut()[k] += sign * h;
                margin_loss(&e, 2.5).unwrap()
            };
            let fd = (bump(1.0) - bump(-1.0)) / (2.0 * h);
            assert!((fd - g.data()[k]).abs() < 1e-7, "k={k}");
        }
    }
}
