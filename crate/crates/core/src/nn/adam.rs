use std::collections::HashMap;

use ndarray::ArrayD;

use super::HasParams;

/// Adam with bias correction folded into the step size.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    t: i32,
    moments: HashMap<String, (ArrayD<f32>, ArrayD<f32>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            t: 0,
            moments: HashMap::new(),
        }
    }
}

impl Adam {
    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Apply one update to every trainable weight of `model` using its
    /// accumulated gradients.
    pub fn step(&mut self, lr: f32, model: &mut dyn HasParams) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let lr_t = lr * (1.0 - b2.powi(self.t)).sqrt() / (1.0 - b1.powi(self.t));
        let moments = &mut self.moments;
        model.visit_params_mut(&mut |p| {
            if !p.is_trainable_weight() {
                return;
            }
            let (m, v) = moments
                .entry(p.name.clone())
                .or_insert_with(|| (ArrayD::zeros(p.value.raw_dim()), ArrayD::zeros(p.value.raw_dim())));
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr_t * *m / (v.sqrt() + eps);
                });
        });
    }
}
