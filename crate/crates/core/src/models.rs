//! The two classifiers.
//!
//! * spatio-temporal: frozen per-frame backbone → fixed feature scaler → LSTM
//!   → BatchNorm → Dropout → Dense(ReLU, L2) → BatchNorm → Dropout → Dense(C)
//!   → softmax
//! * spatial: backbone → global average pooling → [Dense(ReLU, L2) →
//!   Dropout] × 2 → Dense(C) → softmax
//!
//! Models return logits from their training-mode passes; the softmax is
//! folded into the cross-entropy. `predict` returns probabilities.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, Array4, Array5, ArrayD, Axis, Ix1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{FeatureExtractor, LayerSummary};
use crate::nn::{softmax_rows, Activation, BatchNorm, Dense, Dropout, HasParams, Param};
use crate::temporal::LstmLayer;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    SpatioTemporal,
    Spatial,
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pipeline::SpatioTemporal => "spatiotemporal",
            Pipeline::Spatial => "spatial",
        })
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatiotemporal" => Ok(Pipeline::SpatioTemporal),
            "spatial" => Ok(Pipeline::Spatial),
            other => Err(Error::Config(format!(
                "unknown pipeline {other:?} (expected spatiotemporal or spatial)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    /// Hidden dense widths; the C-way output layer is added on top.
    pub widths: Vec<usize>,
    pub dropout: f32,
    /// Coefficient of `sum(w^2)` over hidden dense kernels.
    pub l2: f32,
    pub use_batchnorm: bool,
    pub bn_momentum: f32,
    pub bn_epsilon: f32,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self::spatiotemporal()
    }
}

impl HeadConfig {
    pub fn spatiotemporal() -> Self {
        HeadConfig {
            widths: vec![64],
            dropout: 0.25,
            l2: 0.01,
            use_batchnorm: true,
            bn_momentum: 0.99,
            bn_epsilon: 1e-3,
        }
    }

    pub fn spatial() -> Self {
        HeadConfig {
            widths: vec![128, 64],
            dropout: 0.5,
            l2: 0.01,
            use_batchnorm: false,
            bn_momentum: 0.99,
            bn_epsilon: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("head widths must be non-empty and positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::Config(format!("l2 {} must be non-negative", self.l2)));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || !(self.bn_epsilon > 0.0) {
            return Err(Error::Config("batch-norm momentum must be in [0, 1) and epsilon positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum HeadLayer {
    Dense(Dense),
    BatchNorm(BatchNorm),
    Dropout(String, Dropout),
}

/// Dense classifier head operating on feature rows.
#[derive(Debug, Clone)]
pub struct Head {
    layers: Vec<HeadLayer>,
    rng: ChaCha8Rng,
}

impl Head {
    /// `norm_input` names a BatchNorm + Dropout pair applied to the incoming
    /// features when batch normalization is enabled.
    fn new(cfg: &HeadConfig, input: usize, classes: usize, norm_input: Option<&str>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let bn = |name: &str, n: usize| HeadLayer::BatchNorm(BatchNorm::new(name, n, cfg.bn_momentum, cfg.bn_epsilon));
        if let (true, Some(name)) = (cfg.use_batchnorm, norm_input) {
            layers.push(bn(&format!("{name}_bn"), input));
            layers.push(HeadLayer::Dropout(format!("{name}_dropout"), Dropout::new(cfg.dropout)));
        }
        let mut width = input;
        for (i, &w) in cfg.widths.iter().enumerate() {
            let name = format!("dense_{}", i + 1);
            layers.push(HeadLayer::Dense(Dense::new(&name, width, w, Activation::Relu, cfg.l2, &mut rng)));
            if cfg.use_batchnorm {
                layers.push(bn(&format!("{name}_bn"), w));
            }
            layers.push(HeadLayer::Dropout(format!("{name}_dropout"), Dropout::new(cfg.dropout)));
            width = w;
        }
        layers.push(HeadLayer::Dense(Dense::new("output", width, classes, Activation::Linear, 0.0, &mut rng)));
        Head { layers, rng }
    }

    fn infer(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                HeadLayer::Dense(d) => d.infer(&h),
                HeadLayer::BatchNorm(b) => b.infer(&h.into_dyn()).into_dimensionality().expect("2-D"),
                HeadLayer::Dropout(..) => h,
            };
        }
        h
    }

    fn forward(&mut self, x: &Array2<f32>) -> Array2<f32> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = match layer {
                HeadLayer::Dense(d) => d.forward(&h),
                HeadLayer::BatchNorm(b) => b.forward(&h.into_dyn()).into_dimensionality().expect("2-D"),
                HeadLayer::Dropout(_, d) => d.forward(&h, &mut self.rng),
            };
        }
        h
    }

    fn backward(&mut self, grad: &Array2<f32>) -> Result<Array2<f32>> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = match layer {
                HeadLayer::Dense(d) => d.backward(&g)?,
                HeadLayer::BatchNorm(b) => b.backward(&g.into_dyn())?.into_dimensionality().expect("2-D"),
                HeadLayer::Dropout(_, d) => d.backward(&g)?,
            };
        }
        Ok(g)
    }

    fn l2_penalty(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| match l {
                HeadLayer::Dense(d) => d.l2_penalty(),
                _ => 0.0,
            })
            .sum()
    }

    fn summary(&self, input: usize, start: usize) -> Vec<LayerSummary> {
        let mut width = input;
        self.layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let (name, kind) = match layer {
                    HeadLayer::Dense(d) => {
                        width = d.units();
                        (d.name.clone(), "Dense")
                    }
                    HeadLayer::BatchNorm(b) => (b.name.clone(), "BatchNormalization"),
                    HeadLayer::Dropout(n, _) => (n.clone(), "Dropout"),
                };
                let mut params = 0;
                let mut names = Vec::new();
                visit_layer(layer, &mut |p| {
                    params += p.value.len();
                    names.push(p.name.clone());
                });
                LayerSummary {
                    index: start + i,
                    name,
                    kind: kind.into(),
                    output_shape: vec![width],
                    params,
                    trainable: true,
                    param_names: names,
                }
            })
            .collect()
    }
}

fn visit_layer(layer: &HeadLayer, f: &mut dyn FnMut(&Param)) {
    match layer {
        HeadLayer::Dense(d) => d.visit_params(f),
        HeadLayer::BatchNorm(b) => b.visit_params(f),
        HeadLayer::Dropout(..) => {}
    }
}

impl HasParams for Head {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        for layer in &self.layers {
            visit_layer(layer, f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for layer in &mut self.layers {
            match layer {
                HeadLayer::Dense(d) => d.visit_params_mut(f),
                HeadLayer::BatchNorm(b) => b.visit_params_mut(f),
                HeadLayer::Dropout(..) => {}
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub pipeline: Pipeline,
    pub backbone: String,
    pub classes: usize,
    pub layers: Vec<LayerSummary>,
    pub trainable_params: Vec<String>,
    pub frozen_params: Vec<String>,
}

fn census(model: &dyn HasParams) -> (Vec<String>, Vec<String>) {
    let mut trainable = Vec::new();
    let mut frozen = Vec::new();
    model.visit_params(&mut |p| {
        if p.is_trainable_weight() {
            trainable.push(p.name.clone());
        } else if p.kind == crate::nn::ParamKind::Weight {
            frozen.push(p.name.clone());
        }
    });
    (trainable, frozen)
}

fn check_classes(classes: usize) -> Result<()> {
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    Ok(())
}

/// Fixed per-dimension map `(x - mean) * scale` on frame features. It is the
/// identity until fitted and is never trained.
#[derive(Debug, Clone)]
pub struct FeatureScaler {
    pub mean: Param,
    pub scale: Param,
}

impl FeatureScaler {
    pub fn identity(name: &str, dim: usize) -> Self {
        FeatureScaler {
            mean: Param::buffer(format!("{name}/mean"), ArrayD::zeros(vec![dim])),
            scale: Param::buffer(format!("{name}/scale"), ArrayD::ones(vec![dim])),
        }
    }

    /// Set mean and inverse population standard deviation from `rows`
    /// `(n, dim)`. Dimensions with std below 1e-6 keep scale 1.
    pub fn fit(&mut self, rows: &Array2<f32>) -> Result<()> {
        let dim = self.mean.value.len();
        if rows.nrows() == 0 || rows.ncols() != dim {
            return Err(Error::Shape(format!(
                "scaler over {dim} features cannot be fitted to {:?} rows",
                rows.dim()
            )));
        }
        let x = rows.mapv(f64::from);
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x.std_axis(Axis(0), 0.0);
        self.mean.value = mean.mapv(|v| v as f32).into_dyn();
        self.scale.value = std.mapv(|s| if s < 1e-6 { 1.0 } else { (1.0 / s) as f32 }).into_dyn();
        Ok(())
    }

    pub fn apply(&self, feats: &Array3<f32>) -> Array3<f32> {
        let mean = self.mean.value.view().into_dimensionality::<Ix1>().expect("1-D");
        let scale = self.scale.value.view().into_dimensionality::<Ix1>().expect("1-D");
        (feats - &mean) * scale
    }

    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.mean);
        f(&self.scale);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.mean);
        f(&mut self.scale);
    }
}

#[derive(Debug, Clone)]
pub struct SpatioTemporalModel {
    pub backbone: FeatureExtractor,
    pub frame_norm: FeatureScaler,
    pub lstm: LstmLayer,
    pub head: Head,
    pub classes: usize,
}

/// Frozen backbone (every layer is frozen here), LSTM over the frame
/// features, then the head.
pub fn build_spatiotemporal(
    mut backbone: FeatureExtractor,
    hidden: usize,
    head: &HeadConfig,
    classes: usize,
    seed: u64,
) -> Result<SpatioTemporalModel> {
    check_classes(classes)?;
    head.validate()?;
    if hidden == 0 {
        return Err(Error::Config("LSTM needs at least one hidden unit".into()));
    }
    backbone.freeze_all();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lstm = LstmLayer::new("lstm", hidden, backbone.feature_dim, &mut rng);
    let head = Head::new(head, hidden, classes, Some("lstm"), seed.wrapping_add(1));
    Ok(SpatioTemporalModel {
        frame_norm: FeatureScaler::identity("frame_norm", backbone.feature_dim),
        backbone,
        lstm,
        head,
        classes,
    })
}

impl SpatioTemporalModel {
    /// Logits from precomputed frame features `(batch, L, D)`, inference mode.
    pub fn infer_features(&self, feats: &Array3<f32>) -> Result<Array2<f32>> {
        Ok(self.head.infer(&self.lstm.infer(&self.frame_norm.apply(feats))?))
    }

    /// Training-mode logits from precomputed frame features.
    pub fn forward_features(&mut self, feats: &Array3<f32>) -> Result<Array2<f32>> {
        let h = self.lstm.forward(&self.frame_norm.apply(feats))?;
        Ok(self.head.forward(&h))
    }

    /// Backpropagate a logit gradient through head and LSTM; the backbone
    /// is frozen.
    pub fn backward(&mut self, dlogits: &Array2<f32>) -> Result<()> {
        let dh = self.head.backward(dlogits)?;
        self.lstm.backward(&dh)?;
        Ok(())
    }

    /// Class probabilities for image sequences `(batch, L, side, side, 3)`.
    pub fn predict(&self, x: &Array5<f32>) -> Result<Array2<f32>> {
        let feats = self.backbone.extract_timedistributed(x)?;
        Ok(softmax_rows(&self.infer_features(&feats)?))
    }

    pub fn l2_penalty(&self) -> f64 {
        self.head.l2_penalty()
    }

    pub fn summary(&self) -> ModelSummary {
        let mut layers = self.backbone.summary();
        let start = layers.len();
        let lstm_params: Vec<String> = self.lstm.param_names(false);
        layers.push(LayerSummary {
            index: start,
            name: self.lstm.name.clone(),
            kind: "LSTM".into(),
            output_shape: vec![self.lstm.hidden()],
            params: {
                let mut n = 0;
                self.lstm.visit_params(&mut |p| n += p.value.len());
                n
            },
            trainable: true,
            param_names: lstm_params,
        });
        layers.extend(self.head.summary(self.lstm.hidden(), start + 1));
        let (trainable_params, frozen_params) = census(self);
        ModelSummary {
            pipeline: Pipeline::SpatioTemporal,
            backbone: self.backbone.name.clone(),
            classes: self.classes,
            layers,
            trainable_params,
            frozen_params,
        }
    }
}

impl HasParams for SpatioTemporalModel {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.backbone.visit_params(f);
        self.frame_norm.visit_params(f);
        self.lstm.visit_params(f);
        self.head.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.backbone.visit_params_mut(f);
        self.frame_norm.visit_params_mut(f);
        self.lstm.visit_params_mut(f);
        self.head.visit_params_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct SpatialModel {
    pub backbone: FeatureExtractor,
    pub head: Head,
    pub classes: usize,
}

/// Backbone (with whatever freeze the caller set) and a dense head on its
/// pooled features.
pub fn build_spatial(backbone: FeatureExtractor, head: &HeadConfig, classes: usize, seed: u64) -> Result<SpatialModel> {
    check_classes(classes)?;
    head.validate()?;
    let head = Head::new(head, backbone.feature_dim, classes, None, seed.wrapping_add(1));
    Ok(SpatialModel {
        backbone,
        head,
        classes,
    })
}

impl SpatialModel {
    pub fn infer(&self, x: &Array4<f32>) -> Result<Array2<f32>> {
        Ok(self.head.infer(&self.backbone.extract(x)?))
    }

    pub fn forward(&mut self, x: &Array4<f32>) -> Result<Array2<f32>> {
        let feats = self.backbone.forward_train(x)?;
        Ok(self.head.forward(&feats))
    }

    pub fn backward(&mut self, dlogits: &Array2<f32>) -> Result<()> {
        let dfeat = self.head.backward(dlogits)?;
        self.backbone.backward(&dfeat)
    }

    pub fn predict(&self, x: &Array4<f32>) -> Result<Array2<f32>> {
        Ok(softmax_rows(&self.infer(x)?))
    }

    pub fn l2_penalty(&self) -> f64 {
        self.head.l2_penalty()
    }

    pub fn summary(&self) -> ModelSummary {
        let mut layers = self.backbone.summary();
        let start = layers.len();
        layers.push(LayerSummary {
            index: start,
            name: "global_average_pooling".into(),
            kind: "GlobalAveragePooling2D".into(),
            output_shape: vec![self.backbone.feature_dim],
            params: 0,
            trainable: true,
            param_names: Vec::new(),
        });
        layers.extend(self.head.summary(self.backbone.feature_dim, start + 1));
        let (trainable_params, frozen_params) = census(self);
        ModelSummary {
            pipeline: Pipeline::Spatial,
            backbone: self.backbone.name.clone(),
            classes: self.classes,
            layers,
            trainable_params,
            frozen_params,
        }
    }
}

impl HasParams for SpatialModel {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.backbone.visit_params(f);
        self.head.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.backbone.visit_params_mut(f);
        self.head.visit_params_mut(f);
    }
}

/// Max-shifted softmax of one logit vector.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax of non-finite logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn images(n: usize, side: usize, seed: u64) -> Array4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_simple_fn((n, side, side, 3), || rng.random_range(0.0..1.0))
    }

    fn sequences(n: usize, l: usize, side: usize, seed: u64) -> Array5<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array5::from_shape_simple_fn((n, l, side, side, 3), || rng.random_range(0.0..1.0))
    }

    fn assert_simplex(p: &Array2<f32>) {
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(softmax(&[1.0, 2.0, 3.0]).unwrap(), softmax(&[101.0, 102.0, 103.0]).unwrap());
        // direct formula without the max shift
        let z = [1.0f64, 2.0, 3.0];
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        for (got, v) in softmax(&z).unwrap().iter().zip(z) {
            assert!((got - v.exp() / denom).abs() < 1e-12);
        }
        assert!(matches!(softmax(&[f64::NAN, 0.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn spatiotemporal_layout_and_outputs() {
        let fx = FeatureExtractor::tiny_cnn(16, 0);
        let model = build_spatiotemporal(fx, 8, &HeadConfig::spatiotemporal(), 3, 1).unwrap();
        let x = sequences(4, 5, 16, 2);
        let p = model.predict(&x).unwrap();
        assert_eq!(p.dim(), (4, 3));
        assert_simplex(&p);
        assert_eq!(p, model.predict(&x).unwrap());

        let summary = model.summary();
        let head: Vec<&str> = summary.layers[7..].iter().map(|l| l.name.as_str()).collect();
        assert_eq!(
            head,
            ["lstm", "lstm_bn", "lstm_dropout", "dense_1", "dense_1_bn", "dense_1_dropout", "output"]
        );
        assert!(summary.trainable_params.iter().all(|n| !n.starts_with("conv")));
        assert_eq!(summary.frozen_params.len(), 6);
        let json = serde_json::to_string(&summary).unwrap();
        assert_eq!(serde_json::from_str::<ModelSummary>(&json).unwrap(), summary);
    }

    #[test]
    fn fitted_scaler_standardizes_rows() {
        let mut sc = FeatureScaler::identity("n", 3);
        let feats = Array3::from_shape_fn((2, 2, 3), |(b, t, d)| (b * 2 + t) as f32 * (d as f32 + 0.5) + 7.0);
        assert_eq!(sc.apply(&feats), feats);
        let rows = feats.to_shape((4, 3)).unwrap().to_owned();
        sc.fit(&rows).unwrap();
        let out = sc.apply(&feats).to_shape((4, 3)).unwrap().to_owned();
        for col in out.columns() {
            assert!(col.mean().unwrap().abs() < 1e-5);
            assert!((col.std(0.0) - 1.0).abs() < 1e-5);
        }
        let mut flat = FeatureScaler::identity("n", 2);
        flat.fit(&Array2::from_elem((5, 2), 3.0)).unwrap();
        assert_eq!(flat.scale.value.as_slice().unwrap(), &[1.0, 1.0]);
        assert!(matches!(flat.fit(&Array2::zeros((0, 2))), Err(Error::Shape(_))));
    }

    #[test]
    fn spatial_layout_and_outputs() {
        let fx = FeatureExtractor::tiny_cnn(16, 0).with_freeze(3).unwrap();
        let model = build_spatial(fx, &HeadConfig::spatial(), 3, 1).unwrap();
        let p = model.predict(&images(1, 16, 3)).unwrap();
        assert_eq!(p.dim(), (1, 3));
        assert_simplex(&p);
        let s = model.summary();
        let names: Vec<&str> = s.layers[7..].iter().map(|l| l.name.as_str()).collect();
        assert_eq!(
            names,
            ["global_average_pooling", "dense_1", "dense_1_dropout", "dense_2", "dense_2_dropout", "output"]
        );
        assert!(model.l2_penalty() > 0.0);
        assert!(s.frozen_params.contains(&"conv1/kernel".to_string()));
        assert!(s.trainable_params.contains(&"conv2/kernel".to_string()));
    }

    #[test]
    fn rejects_single_class() {
        let fx = FeatureExtractor::tiny_cnn(16, 0);
        assert!(matches!(
            build_spatial(fx.clone(), &HeadConfig::spatial(), 1, 0),
            Err(Error::Config(_))
        ));
        assert!(build_spatiotemporal(fx, 8, &HeadConfig::spatiotemporal(), 1, 0).is_err());
    }

    #[test]
    fn dropout_is_stochastic_only_in_training() {
        let fx = FeatureExtractor::tiny_cnn(16, 0);
        let mut model = build_spatial(fx, &HeadConfig::spatial(), 3, 1).unwrap();
        let x = images(4, 16, 5);
        let a = model.forward(&x).unwrap();
        let b = model.forward(&x).unwrap();
        assert_ne!(a, b);
        assert_eq!(model.infer(&x).unwrap(), model.infer(&x).unwrap());
    }

    #[test]
    fn frozen_parameters_survive_training_steps() {
        let fx = FeatureExtractor::tiny_cnn(16, 0);
        let mut model = build_spatiotemporal(fx, 8, &HeadConfig::spatiotemporal(), 3, 1).unwrap();
        let before = model.backbone.param_checksum(None);
        let x = sequences(4, 3, 16, 7);
        let feats = model.backbone.extract_timedistributed(&x).unwrap();
        let mut adam = crate::nn::Adam::default();
        let head_before = model.head.param_checksum(None);
        for _ in 0..3 {
            model.zero_grads();
            let logits = model.forward_features(&feats).unwrap();
            let (_, g, _) = crate::nn::softmax_cross_entropy(&logits, &[0, 1, 2, 0]);
            model.backward(&g).unwrap();
            adam.step(0.01, &mut model);
        }
        assert_eq!(model.backbone.param_checksum(None), before);
        assert_ne!(model.head.param_checksum(None), head_before);
    }
}
