use ndarray::Array2;
use rand::Rng;

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f32,
    mask: Option<Array2<f32>>,
}

impl Dropout {
    pub fn new(rate: f32) -> Self {
        Dropout { rate, mask: None }
    }

    pub fn forward<R: Rng>(&mut self, x: &Array2<f32>, rng: &mut R) -> Array2<f32> {
        if self.rate <= 0.0 {
            self.mask = Some(Array2::ones(x.raw_dim()));
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
            if rng.random::<f32>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let y = x * &mask;
        self.mask = Some(mask);
        y
    }

    pub fn backward(&self, grad: &Array2<f32>) -> crate::Result<Array2<f32>> {
        let mask = self.mask.as_ref().ok_or(crate::Error::MissingCache)?;
        Ok(grad * mask)
    }
}
