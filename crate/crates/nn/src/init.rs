//! Weight initializers.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::{Real, Tensor};

/// He (Kaiming) normal: `N(0, 2 / fan_in)`.
pub fn he_normal<S: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<S> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            S::from_f64_lossy(z * std)
        })
        .collect();
    Tensor::from_vec(shape, data)
}

/// Glorot (Xavier) uniform.
pub fn glorot_uniform<S: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<S> {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n)
            .map(|_| S::from_f64_lossy(dist.sample(rng)))
            .collect(),
    )
}

/// Random matrix with orthonormal rows or columns (whichever is fewer), from
/// the QR factorization of a Gaussian matrix.
pub fn orthogonal<S: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<S> {
    let (big, small) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(big, small, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    // Fix the sign ambiguity so the result is uniformly distributed.
    let r = qr.r();
    for j in 0..small {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let m = if rows >= cols { q } else { q.transpose() };
    let data = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .map(|(i, j)| S::from_f64_lossy(m[(i, j)]))
        .collect();
    Tensor::from_vec(&[rows, cols], data)
}
