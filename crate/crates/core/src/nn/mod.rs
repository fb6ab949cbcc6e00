//! Minimal layer toolkit with explicit forward/backward passes.
//!
//! Layers keep whatever they need from the last training-mode forward pass
//! and accumulate parameter gradients on `backward`. Inference goes through
//! `infer(&self, ..)`, which never touches caches or running statistics.

mod adam;
mod conv;
mod dense;
mod dropout;
pub mod io;
pub mod init;
mod loss;
mod norm;

use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};

pub use adam::Adam;
pub use conv::{global_avg_pool, global_avg_pool_backward, Conv2d, DepthwiseConv2d, Padding, ZeroPad2d};
pub use dense::{Activation, Dense};
pub use dropout::Dropout;
pub use loss::{accuracy, argmax, cross_entropy, softmax_cross_entropy, softmax_rows};
pub(crate) use conv::to4;
pub use norm::BatchNorm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Learned by gradient descent.
    Weight,
    /// State carried alongside the weights (running statistics).
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
    pub trainable: bool,
    pub kind: ParamKind,
}

impl Param {
    pub fn weight(name: impl Into<String>, value: ArrayD<f32>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param {
            name: name.into(),
            value,
            grad,
            trainable: true,
            kind: ParamKind::Weight,
        }
    }

    pub fn buffer(name: impl Into<String>, value: ArrayD<f32>) -> Self {
        Param {
            name: name.into(),
            value,
            grad: ArrayD::zeros(IxDyn(&[0])),
            trainable: false,
            kind: ParamKind::Buffer,
        }
    }

    pub fn is_trainable_weight(&self) -> bool {
        self.trainable && self.kind == ParamKind::Weight
    }

    pub fn zero_grad(&mut self) {
        if self.kind == ParamKind::Weight {
            self.grad.fill(0.0);
        }
    }
}

/// Anything that owns named parameters.
pub trait HasParams {
    fn visit_params(&self, f: &mut dyn FnMut(&Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    fn param_names(&self, trainable_only: bool) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |p| {
            if !trainable_only || p.is_trainable_weight() {
                names.push(p.name.clone());
            }
        });
        names
    }

    fn state_dict(&self) -> BTreeMap<String, ArrayD<f32>> {
        let mut out = BTreeMap::new();
        self.visit_params(&mut |p| {
            out.insert(p.name.clone(), p.value.clone());
        });
        out
    }

    /// Copy values by name. Every parameter must be present with a matching
    /// shape.
    fn load_state_dict(&mut self, state: &BTreeMap<String, ArrayD<f32>>) -> crate::Result<()> {
        let mut err = None;
        self.visit_params_mut(&mut |p| {
            if err.is_some() {
                return;
            }
            match state.get(&p.name) {
                Some(v) if v.shape() == p.value.shape() => p.value.assign(v),
                Some(v) => {
                    err = Some(crate::Error::Checkpoint(format!(
                        "{}: shape {:?} does not match {:?}",
                        p.name,
                        v.shape(),
                        p.value.shape()
                    )))
                }
                None => err = Some(crate::Error::Checkpoint(format!("missing tensor {}", p.name))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// Order-sensitive checksum over every parameter value's bits.
    fn param_checksum(&self, trainable: Option<bool>) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        self.visit_params(&mut |p| {
            if trainable.is_none_or(|t| t == p.trainable) {
                for v in p.value.iter() {
                    h ^= v.to_bits() as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        });
        h
    }
}
