use melganvc::models::{Discriminator, Generator, ModelConfig, Siamese};
use melganvc::nn::spectral::{spectral_normalize, PowerState};
use melganvc::nn::{Mode, Tensor};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> ModelConfig {
    ModelConfig {
        g_base_channels: 4,
        d_base_channels: 4,
        s_base_channels: 4,
        len_s: 16,
        ..ModelConfig::default()
    }
}

fn input(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec([n, 1, h, w], (0..n * h * w).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
}

#[test]
fn construction_is_seed_deterministic() {
    let build = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            Generator::<f32>::new(&small(), &mut rng).unwrap().store,
            Discriminator::<f32>::new(&small(), &mut rng).unwrap().store,
            Siamese::<f32>::new(&small(), &mut rng).unwrap().store,
        )
    };
    let (a, b) = (build(1), build(1));
    assert_eq!(a, b);
    assert_eq!(a.0.num_trainable(), build(2).0.num_trainable());
    assert_ne!(a.0, build(2).0);
}

#[test]
fn generator_preserves_full_size_chunk_shape() {
    let cfg = small();
    let g = Generator::<f32>::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let y = g.infer(&input(2, 192, 48, 1)).unwrap();
    assert_eq!(y.shape(), [2, 1, 192, 48]);
    assert!(y.data().iter().all(|v| v.abs() < 1.0));
}

#[test]
fn discriminator_logits_are_finite_on_the_unit_range() {
    let d = Discriminator::<f32>::new(&small(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let y = d.infer(&input(3, 64, 32, 2)).unwrap();
    assert_eq!(y.shape(), [3, 1, 4, 2]);
    assert!(y.is_finite());
}

#[test]
fn siamese_inference_is_deterministic() {
    let mut s = Siamese::<f32>::new(&small(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let x = input(4, 32, 16, 3);
    assert_eq!(s.infer(&x).unwrap(), s.infer(&x).unwrap());
    let (z, _) = s.forward(&x, Mode::Train).unwrap();
    assert_eq!(z.shape(), [4, 16, 1, 1]);
}

fn top_singular(w: &[f64], rows: usize) -> f64 {
    DMatrix::from_row_slice(rows, w.len() / rows, w).singular_values().max()
}

#[test]
fn spectral_normalization_matches_an_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // A random orthogonal matrix is already normalized.
    let q = DMatrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
    let w: Vec<f64> = (0..5).flat_map(|r| (0..5).map(move |c| (r, c))).map(|(r, c)| q[(r, c)]).collect();
    let mut st = PowerState { u: vec![1.0; 5], v: vec![1.0; 5] };
    let out = spectral_normalize(&w, 5, 5, &mut st, 20);
    assert!(out.iter().zip(&w).all(|(a, b)| (a - b).abs() < 1e-3));

    for (rows, cols) in [(3, 7), (8, 4), (16, 36)] {
        // A clear gap between the top two singular values.
        let mut m = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
        let svd = m.clone().svd(true, true);
        let (u, v) = (svd.u.unwrap(), svd.v_t.unwrap());
        m += u.column(0) * v.row(0) * 5.0;
        let w: Vec<f64> = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|(r, c)| m[(r, c)]).collect();
        let mut st = PowerState { u: vec![1.0; rows], v: vec![1.0; cols] };
        let out = spectral_normalize(&w, rows, cols, &mut st, 20);
        let s = top_singular(&out, rows);
        assert!((s - 1.0).abs() < 1e-3, "{rows}x{cols}: {s}");
        let scaled: Vec<f64> = w.iter().map(|x| 10.0 * x).collect();
        let mut st2 = PowerState { u: vec![1.0; rows], v: vec![1.0; cols] };
        let out2 = spectral_normalize(&scaled, rows, cols, &mut st2, 20);
        assert!(out.iter().zip(&out2).all(|(a, b)| (a - b).abs() < 1e-3));
    }
}
