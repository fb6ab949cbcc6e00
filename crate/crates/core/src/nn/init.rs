//! Weight initializers.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// Glorot/Xavier uniform: `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> ArrayD<f32> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
}

/// He normal: `N(0, 2 / fan_in)`.
pub fn he_normal<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> ArrayD<f32> {
    let std = (2.0 / fan_in as f64).sqrt() as f32;
    let dist = Normal::new(0.0f32, std).expect("positive std");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
}

/// Square matrix with orthonormal rows (Gram-Schmidt on a Gaussian draw).
pub fn orthogonal<R: Rng>(n: usize, rng: &mut R) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let mut m: Array2<f64> = Array2::from_shape_simple_fn((n, n), || normal.sample(rng));
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let proj = m.row(i).dot(&m.row(j));
                let rj = m.row(j).to_owned();
                m.row_mut(i).scaled_add(-proj, &rj);
            }
            let norm = m.row(i).dot(&m.row(i)).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            m.row_mut(i).mapv_inplace(|v| v / norm);
        }
        if ok {
            return m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = orthogonal(6, &mut rng);
        let eye = q.dot(&q.t());
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((eye[[i, j]] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = glorot_uniform(&[10, 20], 10, 20, &mut rng);
        let limit = (6.0f32 / 30.0).sqrt();
        assert!(w.iter().all(|v| v.abs() <= limit));
    }
}
