use ndarray::{Array2, Axis, Ix1, Ix2};
use rand::Rng;

use super::{init, HasParams, Param};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

/// Fully connected layer, kernel stored `(in, out)`. `l2` adds
/// `l2 * sum(kernel^2)` to the loss.
#[derive(Debug, Clone)]
pub struct Dense {
    pub name: String,
    pub kernel: Param,
    pub bias: Param,
    pub activation: Activation,
    pub l2: f32,
    cache: Option<(Array2<f32>, Array2<f32>)>,
}

impl Dense {
    pub fn new<R: Rng>(name: &str, input: usize, units: usize, activation: Activation, l2: f32, rng: &mut R) -> Self {
        let kernel = init::glorot_uniform(&[input, units], input, units, rng);
        Dense {
            name: name.to_string(),
            kernel: Param::weight(format!("{name}/kernel"), kernel),
            bias: Param::weight(format!("{name}/bias"), ndarray::ArrayD::zeros(vec![units])),
            activation,
            l2,
            cache: None,
        }
    }

    pub fn units(&self) -> usize {
        self.kernel.value.shape()[1]
    }

    pub fn infer(&self, x: &Array2<f32>) -> Array2<f32> {
        let w = self.kernel.value.view().into_dimensionality::<Ix2>().expect("2-D kernel");
        let b = self.bias.value.view().into_dimensionality::<Ix1>().expect("1-D bias");
        let mut y = x.dot(&w) + b;
        if self.activation == Activation::Relu {
            y.mapv_inplace(|v| v.max(0.0));
        }
        y
    }

    pub fn forward(&mut self, x: &Array2<f32>) -> Array2<f32> {
        let y = self.infer(x);
        self.cache = Some((x.clone(), y.clone()));
        y
    }

    pub fn backward(&mut self, grad: &Array2<f32>) -> crate::Result<Array2<f32>> {
        let (x, y) = self.cache.as_ref().ok_or(crate::Error::MissingCache)?;
        let mut g = grad.clone();
        if self.activation == Activation::Relu {
            g.zip_mut_with(y, |g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            });
        }
        let w = self.kernel.value.view().into_dimensionality::<Ix2>().expect("2-D kernel");
        let dx = g.dot(&w.t());
        if self.kernel.trainable {
            let mut dw = x.t().dot(&g);
            if self.l2 > 0.0 {
                dw.scaled_add(2.0 * self.l2, &w);
            }
            let mut kg = self.kernel.grad.view_mut().into_dimensionality::<Ix2>().expect("2-D");
            kg += &dw;
            let mut bg = self.bias.grad.view_mut().into_dimensionality::<Ix1>().expect("1-D");
            bg += &g.sum_axis(Axis(0));
        }
        Ok(dx)
    }

    pub fn l2_penalty(&self) -> f64 {
        if self.l2 == 0.0 {
            return 0.0;
        }
        self.l2 as f64 * self.kernel.value.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>()
    }
}

impl HasParams for Dense {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.kernel);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.kernel);
        f(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::random;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(d: &Dense, x: &Array2<f32>, up: &Array2<f32>) -> f64 {
        (d.infer(x) * up).iter().map(|&v| v as f64).sum::<f64>() + d.l2_penalty()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Dense::new("d", 4, 3, Activation::Relu, 0.01, &mut rng);
        let x = random(&[5, 4], 1).into_dimensionality::<Ix2>().unwrap();
        let up = random(&[5, 3], 2).into_dimensionality::<Ix2>().unwrap();
        d.forward(&x);
        let dx = d.backward(&up).unwrap();
        let eps = 1e-2f32;
        for idx in [[0usize, 0usize], [2, 1], [3, 2]] {
            let mut p = d.clone();
            p.kernel.value[[idx[0], idx[1]]] += eps;
            let mut m = d.clone();
            m.kernel.value[[idx[0], idx[1]]] -= eps;
            let fd = (loss(&p, &x, &up) - loss(&m, &x, &up)) / (2.0 * eps as f64);
            assert!((fd - d.kernel.grad[[idx[0], idx[1]]] as f64).abs() < 1e-2, "{fd}");
        }
        let mut xp = x.clone();
        xp[[1, 2]] += eps;
        let mut xm = x.clone();
        xm[[1, 2]] -= eps;
        let fd = (loss(&d, &xp, &up) - loss(&d, &xm, &up)) / (2.0 * eps as f64);
        assert!((fd - dx[[1, 2]] as f64).abs() < 1e-2);
    }

    #[test]
    fn l2_penalty_positive_when_weights_nonzero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Dense::new("d", 2, 2, Activation::Linear, 0.01, &mut rng);
        assert!(d.l2_penalty() > 0.0);
        d.kernel.value.fill(0.0);
        assert_eq!(d.l2_penalty(), 0.0);
    }
}
