use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::curve::Trajectory;
use crate::manifold::{center_landmarks, LandmarkConfig, OrthogonalAligner};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: &mut impl Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| r.sample(StandardNormal))
}

pub fn random_config(r: &mut impl Rng, n: usize, d: usize) -> LandmarkConfig {
    center_landmarks(&gaussian(r, n, d)).unwrap()
}

/// Haar-ish orthogonal matrix; half of the draws are reflections.
pub fn random_orthogonal(r: &mut impl Rng, d: usize) -> OrthogonalAligner {
    let qr = gaussian(r, d, d).qr();
    let (q, rr) = (qr.q(), qr.r());
    let mut q = DMatrix::from_fn(d, d, |i, j| q[(i, j)] * rr[(j, j)].signum());
    if r.random_bool(0.5) {
        q.column_mut(0).neg_mut();
    }
    OrthogonalAligner::new(q).unwrap()
}

pub fn random_sequence(r: &mut impl Rng, len: usize, n: usize, d: usize) -> Trajectory {
    Trajectory::from_points((0..len).map(|_| random_config(r, n, d)).collect()).unwrap()
}

/// Smoothly deforming configuration with additive noise.
pub fn noisy_trajectory(seed: u64, len: usize, n: usize, d: usize, noise: f64) -> Trajectory {
    let mut r = rng(seed);
    let base = gaussian(&mut r, n, d);
    let drift = gaussian(&mut r, n, d);
    let points = (0..len)
        .map(|i| {
            let t = i as f64 / len as f64;
            let raw = &base + &drift * (2.0 * t).sin() + gaussian(&mut r, n, d) * noise;
            center_landmarks(&raw).unwrap()
        })
        .collect();
    Trajectory::from_points(points).unwrap().with_label("c").with_subject("s")
}
