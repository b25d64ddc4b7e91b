#![allow(dead_code)]

use pianovis::nn::layers::*;
use pianovis::nn::loss::{focal_loss, label_distribution_loss};
use pianovis::nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-4;

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero and from each other so kinks of relu and
/// max pooling stay further than the finite-difference step.
pub fn spread(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0) * 0.01 + 0.005).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.gen_range(0..=i));
    }
    for x in v.iter_mut() {
        if rng.gen_bool(0.5) {
            *x = -*x;
        }
    }
    Tensor::from_vec(shape, v).unwrap()
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Max relative error between `analytic` and central differences of `f`
/// with respect to every entry of `inputs[which]`.
pub fn compare(
    inputs: &[Tensor],
    which: usize,
    analytic: &Tensor,
    f: &dyn Fn(&[Tensor]) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for i in 0..inputs[which].len() {
        let orig = inputs[which].data()[i];
        probe[which].data_mut()[i] = orig + STEP;
        let up = f(&probe);
        probe[which].data_mut()[i] = orig - STEP;
        let down = f(&probe);
        probe[which].data_mut()[i] = orig;
        worst = worst.max(rel(analytic.data()[i], (up - down) / (2.0 * STEP)));
    }
    worst
}

fn weighted(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

pub fn conv2d_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, k, b) = (random(&mut rng, &[2, 4, 5, 2]), random(&mut rng, &[3, 3, 2, 3]), random(&mut rng, &[3]));
    let r = random(&mut rng, &[2, 4, 5, 3]);
    let (dx, dk, db) = conv2d_backward(&x, &k, &r, true).unwrap();
    let f = |t: &[Tensor]| weighted(&conv2d_forward(&t[0], &t[1], &t[2]).unwrap(), &r);
    let inputs = [x, k, b];
    compare(&inputs, 0, &dx.unwrap(), &f)
        .max(compare(&inputs, 1, &dk, &f))
        .max(compare(&inputs, 2, &db, &f))
}

pub fn conv3d_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, k, b) = (random(&mut rng, &[2, 5, 3, 4, 1]), random(&mut rng, &[5, 1, 1, 1, 3]), random(&mut rng, &[3]));
    let r = random(&mut rng, &[2, 3, 4, 3]);
    let (dx, dk, db) = conv3d_backward(&x, &k, &r, true).unwrap();
    let f = |t: &[Tensor]| weighted(&conv3d_early_fusion(&t[0], &t[1], &t[2]).unwrap(), &r);
    let inputs = [x, k, b];
    compare(&inputs, 0, &dx.unwrap(), &f)
        .max(compare(&inputs, 1, &dk, &f))
        .max(compare(&inputs, 2, &db, &f))
}

pub fn dense_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, w, b) = (random(&mut rng, &[3, 6]), random(&mut rng, &[6, 4]), random(&mut rng, &[4]));
    let r = random(&mut rng, &[3, 4]);
    let (dx, dw, db) = dense_backward(&x, &w, &r, true).unwrap();
    let f = |t: &[Tensor]| weighted(&dense_forward(&t[0], &t[1], &t[2]).unwrap(), &r);
    let inputs = [x, w, b];
    compare(&inputs, 0, &dx.unwrap(), &f)
        .max(compare(&inputs, 1, &dw, &f))
        .max(compare(&inputs, 2, &db, &f))
}

pub fn pool_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = spread(&mut rng, &[2, 5, 3, 2]);
    let (y, arg) = maxpool2x2_forward(&x).unwrap();
    let r = random(&mut rng, y.shape());
    let dx = maxpool2x2_backward(x.shape(), &arg, &r);
    let f = |t: &[Tensor]| weighted(&maxpool2x2_forward(&t[0]).unwrap().0, &r);
    compare(&[x], 0, &dx, &f)
}

pub fn relu_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = spread(&mut rng, &[2, 3, 4, 2]);
    let r = random(&mut rng, x.shape());
    let dx = relu_backward(&x, &r);
    let f = |t: &[Tensor]| weighted(&relu_forward(&t[0]), &r);
    compare(&[x], 0, &dx, &f)
}

pub fn focal_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = random(&mut rng, &[4, 2]);
    let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..2)).collect();
    let alpha = [rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0)];
    let (_, g) = focal_loss(&softmax(&logits), &labels, 2.0, &alpha).unwrap();
    let f = |t: &[Tensor]| focal_loss(&softmax(&t[0]), &labels, 2.0, &alpha).unwrap().0;
    compare(&[logits], 0, &g, &f)
}

pub fn label_distribution_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = random(&mut rng, &[4, 5]);
    let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..5)).collect();
    let (_, g) = label_distribution_loss(&softmax(&logits), &labels, 1.0).unwrap();
    let f = |t: &[Tensor]| label_distribution_loss(&softmax(&t[0]), &labels, 1.0).unwrap().0;
    compare(&[logits], 0, &g, &f)
}

pub type Check = (&'static str, fn(u64) -> f64);

pub const CHECKS: [Check; 7] = [
    ("conv2d", conv2d_error),
    ("conv3d", conv3d_error),
    ("dense", dense_error),
    ("maxpool", pool_error),
    ("relu", relu_error),
    ("softmax+focal", focal_error),
    ("softmax+label_distribution", label_distribution_error),
];
