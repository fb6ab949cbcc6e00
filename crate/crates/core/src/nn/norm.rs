use ndarray::{Array1, Array2, ArrayD, Axis, Ix1};

use super::{HasParams, Param};

/// Batch normalization over the last axis.
///
/// A frozen layer (non-trainable `gamma`) always normalizes with its moving
/// statistics, even in training mode.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub name: String,
    pub gamma: Param,
    pub beta: Param,
    pub moving_mean: Param,
    pub moving_variance: Param,
    pub momentum: f32,
    pub epsilon: f32,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array2<f32>,
    inv_std: Array1<f32>,
    batch_stats: bool,
}

fn as_rows(x: &ArrayD<f32>) -> Array2<f32> {
    let c = *x.shape().last().expect("non-scalar input");
    let m = x.len() / c.max(1);
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((m, c))
        .expect("contiguous reshape")
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize, momentum: f32, epsilon: f32) -> Self {
        BatchNorm {
            name: name.to_string(),
            gamma: Param::weight(format!("{name}/gamma"), ArrayD::ones(vec![channels])),
            beta: Param::weight(format!("{name}/beta"), ArrayD::zeros(vec![channels])),
            moving_mean: Param::buffer(format!("{name}/moving_mean"), ArrayD::zeros(vec![channels])),
            moving_variance: Param::buffer(format!("{name}/moving_variance"), ArrayD::ones(vec![channels])),
            momentum,
            epsilon,
            cache: None,
        }
    }

    fn vec(p: &Param) -> ndarray::ArrayView1<'_, f32> {
        p.value.view().into_dimensionality::<Ix1>().expect("1-D")
    }

    fn normalize(&self, rows: &Array2<f32>, mean: &Array1<f32>, inv_std: &Array1<f32>) -> (Array2<f32>, Array2<f32>) {
        let xhat = (rows - mean) * inv_std;
        let y = &xhat * &Self::vec(&self.gamma) + Self::vec(&self.beta);
        (xhat, y)
    }

    fn moving_inv_std(&self) -> Array1<f32> {
        Self::vec(&self.moving_variance).mapv(|v| 1.0 / (v + self.epsilon).sqrt())
    }

    pub fn infer(&self, x: &ArrayD<f32>) -> ArrayD<f32> {
        let rows = as_rows(x);
        let (_, y) = self.normalize(&rows, &Self::vec(&self.moving_mean).to_owned(), &self.moving_inv_std());
        y.into_shape_with_order(x.raw_dim()).expect("same size")
    }

    /// Training-mode forward: batch statistics (and a moving-average update)
    /// unless the layer is frozen.
    pub fn forward(&mut self, x: &ArrayD<f32>) -> ArrayD<f32> {
        let rows = as_rows(x);
        let batch_stats = self.gamma.trainable;
        let (mean, inv_std) = if batch_stats {
            let mean = rows.mean_axis(Axis(0)).expect("non-empty batch");
            let var = rows.var_axis(Axis(0), 0.0);
            let m = self.momentum;
            let mut mm = self.moving_mean.value.view_mut().into_dimensionality::<Ix1>().expect("1-D");
            mm.zip_mut_with(&mean, |a, &b| *a = *a * m + b * (1.0 - m));
            let mut mv = self.moving_variance.value.view_mut().into_dimensionality::<Ix1>().expect("1-D");
            mv.zip_mut_with(&var, |a, &b| *a = *a * m + b * (1.0 - m));
            let inv_std = var.mapv(|v| 1.0 / (v + self.epsilon).sqrt());
            (mean, inv_std)
        } else {
            (Self::vec(&self.moving_mean).to_owned(), self.moving_inv_std())
        };
        let (xhat, y) = self.normalize(&rows, &mean, &inv_std);
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            batch_stats,
        });
        y.into_shape_with_order(x.raw_dim()).expect("same size")
    }

    pub fn backward(&mut self, grad: &ArrayD<f32>) -> crate::Result<ArrayD<f32>> {
        let cache = self.cache.as_ref().ok_or(crate::Error::MissingCache)?;
        let g = as_rows(grad);
        let gamma = Self::vec(&self.gamma).to_owned();
        let scale = &gamma * &cache.inv_std;
        let dx = if cache.batch_stats {
            let m = g.nrows() as f32;
            let sum_g = g.sum_axis(Axis(0));
            let sum_gx = (&g * &cache.xhat).sum_axis(Axis(0));
            let inner = &g * m - &sum_g - &cache.xhat * &sum_gx;
            inner * &(&scale / m)
        } else {
            &g * &scale
        };
        if self.gamma.trainable {
            let dgamma = (&g * &cache.xhat).sum_axis(Axis(0));
            let dbeta = g.sum_axis(Axis(0));
            let mut gg = self.gamma.grad.view_mut().into_dimensionality::<Ix1>().expect("1-D");
            gg += &dgamma;
            let mut bg = self.beta.grad.view_mut().into_dimensionality::<Ix1>().expect("1-D");
            bg += &dbeta;
        }
        Ok(dx.into_shape_with_order(grad.raw_dim()).expect("same size"))
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.gamma.trainable = trainable;
        self.beta.trainable = trainable;
    }
}

impl HasParams for BatchNorm {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.moving_mean);
        f(&self.moving_variance);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.moving_mean);
        f(&mut self.moving_variance);
    }
}
