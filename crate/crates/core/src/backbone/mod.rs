//! Per-frame feature extractors.
//!
//! Both variants are a flat list of named layers executed in order; a
//! residual `Add` layer also reads the output of an earlier layer. Layer
//! indices in [`FeatureExtractor::set_freeze`] refer to positions in this
//! list, input layer included. For MobileNetV2 the list mirrors the reference
//! Keras definition (154 layers, no classifier top), so freezing the first 18
//! layers freezes everything up to and including `block_1_project_BN`.
//!
//! Features are the global average of the last layer's output.

mod mobilenet;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{s, Array2, Array3, Array4, Array5, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::io::{load_tensors, save_tensors, TensorMap};
use crate::nn::{global_avg_pool, global_avg_pool_backward, to4, BatchNorm, Conv2d, DepthwiseConv2d, HasParams, Padding, Param, ZeroPad2d};
use crate::{Error, Result};

/// Environment variable consulted when no weights path is configured.
pub const WEIGHTS_ENV: &str = "STRESSSEQ_WEIGHTS";

/// Input side of the pretrained extractor.
pub const PRETRAINED_SIDE: usize = 224;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BackboneName {
    #[default]
    #[serde(rename = "mobilenetv2_pretrained")]
    MobileNetV2Pretrained,
    #[serde(rename = "tiny_cnn")]
    TinyCnn,
}

impl fmt::Display for BackboneName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackboneName::MobileNetV2Pretrained => "mobilenetv2_pretrained",
            BackboneName::TinyCnn => "tiny_cnn",
        })
    }
}

impl FromStr for BackboneName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mobilenetv2_pretrained" => Ok(BackboneName::MobileNetV2Pretrained),
            "tiny_cnn" => Ok(BackboneName::TinyCnn),
            other => Err(Error::Config(format!(
                "unknown backbone {other:?} (expected mobilenetv2_pretrained or tiny_cnn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub name: BackboneName,
    pub weights_path: Option<PathBuf>,
}

impl BackboneConfig {
    /// Configured weights path, else the environment variable.
    pub fn resolved_weights_path(&self) -> Option<PathBuf> {
        self.weights_path
            .clone()
            .or_else(|| std::env::var_os(WEIGHTS_ENV).map(PathBuf::from))
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    /// Graph input; `rescale` maps `[0, 1]` to `[-1, 1]`.
    Input { rescale: bool },
    Conv(Conv2d),
    Depthwise(DepthwiseConv2d),
    BatchNorm(BatchNorm),
    Relu,
    Relu6,
    /// Zero padding ahead of a stride-2 depthwise convolution: one row/column
    /// after, plus one before when the extent is odd.
    CorrectPad,
    /// Sum of the previous layer's output and the output of layer `.0`.
    Add(usize),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "InputLayer",
            Op::Conv(_) => "Conv2D",
            Op::Depthwise(_) => "DepthwiseConv2D",
            Op::BatchNorm(_) => "BatchNormalization",
            Op::Relu | Op::Relu6 => "ReLU",
            Op::CorrectPad => "ZeroPadding2D",
            Op::Add(_) => "Add",
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        match self {
            Op::Conv(c) => c.visit_params(f),
            Op::Depthwise(d) => d.visit_params(f),
            Op::BatchNorm(b) => b.visit_params(f),
            _ => {}
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            Op::Conv(c) => c.visit_params_mut(f),
            Op::Depthwise(d) => d.visit_params_mut(f),
            Op::BatchNorm(b) => b.visit_params_mut(f),
            _ => {}
        }
    }
}

fn correct_pad(h: usize, w: usize) -> ZeroPad2d {
    ZeroPad2d {
        top: h % 2,
        bottom: 1,
        left: w % 2,
        right: 1,
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Layer {
    pub(crate) name: String,
    pub(crate) op: Op,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub index: usize,
    pub name: String,
    pub kind: String,
    /// Per-sample output shape `(h, w, c)`.
    pub output_shape: Vec<usize>,
    pub params: usize,
    pub trainable: bool,
    pub param_names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub name: String,
    pub input_side: usize,
    pub feature_dim: usize,
    layers: Vec<Layer>,
    freeze_upto: usize,
    outputs: Option<Vec<Array4<f32>>>,
}

impl FeatureExtractor {
    /// Three stride-2 3×3 convolutions (8, 16, 32 channels) with ReLU.
    pub fn tiny_cnn(input_side: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = vec![Layer {
            name: "input".into(),
            op: Op::Input { rescale: false },
        }];
        let mut cin = 3;
        for (i, cout) in [8, 16, 32].into_iter().enumerate() {
            let name = format!("conv{}", i + 1);
            let conv = Conv2d::new(&name, 3, cin, cout, 2, Padding::Same, true, &mut rng);
            layers.push(Layer {
                name: name.clone(),
                op: Op::Conv(conv),
            });
            layers.push(Layer {
                name: format!("{name}_relu"),
                op: Op::Relu,
            });
            cin = cout;
        }
        FeatureExtractor {
            name: BackboneName::TinyCnn.to_string(),
            input_side,
            feature_dim: 32,
            layers,
            freeze_upto: 0,
            outputs: None,
        }
    }

    /// MobileNetV2 architecture with freshly initialized weights.
    pub fn mobilenet_v2(input_side: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureExtractor {
            name: BackboneName::MobileNetV2Pretrained.to_string(),
            input_side,
            feature_dim: mobilenet::FEATURE_DIM,
            layers: mobilenet::layers(&mut rng),
            freeze_upto: 0,
            outputs: None,
        }
    }

    /// MobileNetV2 with every weight and running statistic read from a
    /// safetensors file keyed `"{layer}/{kernel|depthwise_kernel|gamma|...}"`.
    pub fn mobilenet_v2_pretrained(weights: &Path) -> Result<Self> {
        let mut fx = Self::mobilenet_v2(PRETRAINED_SIDE, 0);
        fx.load_weights(weights)?;
        Ok(fx)
    }

    /// Build the configured extractor. A pretrained request without a
    /// readable weights file falls back to the tiny CNN; the returned
    /// warnings say so.
    pub fn from_config(cfg: &BackboneConfig, tiny_side: usize, seed: u64) -> Result<(Self, Vec<String>)> {
        match cfg.name {
            BackboneName::TinyCnn => Ok((Self::tiny_cnn(tiny_side, seed), Vec::new())),
            BackboneName::MobileNetV2Pretrained => match cfg.resolved_weights_path() {
                Some(path) if path.is_file() => Ok((Self::mobilenet_v2_pretrained(&path)?, Vec::new())),
                other => {
                    let why = match other {
                        Some(p) => format!("weights file {} not found", p.display()),
                        None => format!("no weights path configured and {WEIGHTS_ENV} is unset"),
                    };
                    Ok((
                        Self::tiny_cnn(tiny_side, seed),
                        vec![format!("{why}; falling back to the tiny_cnn backbone")],
                    ))
                }
            },
        }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.name.as_str()).collect()
    }

    /// True when no layer is trainable.
    pub fn frozen(&self) -> bool {
        self.freeze_upto == self.layers.len()
    }

    /// First trainable layer, if any.
    pub fn trainable_from_layer(&self) -> Option<usize> {
        (!self.frozen()).then_some(self.freeze_upto)
    }

    /// Freeze layers `0..upto`; the rest become trainable. Frozen batch
    /// normalization layers always use their moving statistics.
    pub fn set_freeze(&mut self, upto: usize) -> Result<()> {
        if upto > self.layers.len() {
            return Err(Error::Config(format!(
                "cannot freeze {upto} layers: {} has {}",
                self.name,
                self.layers.len()
            )));
        }
        self.freeze_upto = upto;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let trainable = i >= upto;
            match &mut layer.op {
                Op::BatchNorm(b) => b.set_trainable(trainable),
                op => op.visit_mut(&mut |p| p.trainable = trainable),
            }
        }
        Ok(())
    }

    pub fn with_freeze(mut self, upto: usize) -> Result<Self> {
        self.set_freeze(upto)?;
        Ok(self)
    }

    pub fn freeze_all(&mut self) {
        self.set_freeze(self.layers.len()).expect("in range");
    }

    fn check_input(&self, dims: (usize, usize, usize), what: &str) -> Result<()> {
        let (h, w, c) = dims;
        if h != self.input_side || w != self.input_side || c != 3 {
            return Err(Error::Shape(format!(
                "{}: {what} frames must be ({side}, {side}, 3), got ({h}, {w}, {c})",
                self.name,
                side = self.input_side
            )));
        }
        Ok(())
    }

    /// Inference-mode pass over a batch of one or more images.
    fn run(&self, x: Array4<f32>) -> Array4<f32> {
        let mut outputs: Vec<Array4<f32>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = outputs.last().unwrap_or(&x);
            let y = match &layer.op {
                Op::Input { rescale: true } => x.mapv(|v| v * 2.0 - 1.0),
                Op::Input { rescale: false } => x.clone(),
                Op::Conv(c) => c.infer(input),
                Op::Depthwise(d) => d.infer(input),
                Op::BatchNorm(b) => to4(b.infer(&input.clone().into_dyn())),
                Op::Relu => input.mapv(|v| v.max(0.0)),
                Op::Relu6 => input.mapv(|v| v.clamp(0.0, 6.0)),
                Op::CorrectPad => correct_pad(input.dim().1, input.dim().2).forward(input),
                Op::Add(k) => input + &outputs[*k],
            };
            outputs.push(y);
        }
        outputs.pop().unwrap_or(x)
    }

    /// One feature row per image. Images are processed one at a time, so a
    /// row never depends on the rest of the batch.
    pub fn extract(&self, x: &Array4<f32>) -> Result<Array2<f32>> {
        let (n, h, w, c) = x.dim();
        self.check_input((h, w, c), "input")?;
        let mut out = Array2::zeros((n, self.feature_dim));
        for i in 0..n {
            let one = x.slice(s![i..i + 1, .., .., ..]).to_owned();
            let y = self.run(one);
            out.row_mut(i).assign(&global_avg_pool(&y).row(0));
        }
        Ok(out)
    }

    /// The same extractor applied to every frame of every sequence.
    pub fn extract_timedistributed(&self, x: &Array5<f32>) -> Result<Array3<f32>> {
        let (b, l, h, w, c) = x.dim();
        self.check_input((h, w, c), "sequence")?;
        let frames = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b * l, h, w, c))
            .expect("contiguous");
        let feats = self.extract(&frames)?;
        Ok(feats.into_shape_with_order((b, l, self.feature_dim)).expect("sized"))
    }

    /// Training-mode pass keeping what `backward` needs. Frozen layers run
    /// in inference mode.
    pub fn forward_train(&mut self, x: &Array4<f32>) -> Result<Array2<f32>> {
        let (_, h, w, c) = x.dim();
        self.check_input((h, w, c), "input")?;
        if self.frozen() {
            self.outputs = None;
            return self.extract(x);
        }
        let upto = self.freeze_upto;
        let mut outputs: Vec<Array4<f32>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let input = outputs.last().unwrap_or(x);
            let train = i >= upto;
            let y = match &mut layer.op {
                Op::Input { rescale: true } => x.mapv(|v| v * 2.0 - 1.0),
                Op::Input { rescale: false } => x.clone(),
                Op::Conv(c) if train => c.forward(input),
                Op::Conv(c) => c.infer(input),
                Op::Depthwise(d) if train => d.forward(input),
                Op::Depthwise(d) => d.infer(input),
                Op::BatchNorm(b) if train => to4(b.forward(&input.clone().into_dyn())),
                Op::BatchNorm(b) => to4(b.infer(&input.clone().into_dyn())),
                Op::Relu => input.mapv(|v| v.max(0.0)),
                Op::Relu6 => input.mapv(|v| v.clamp(0.0, 6.0)),
                Op::CorrectPad => correct_pad(input.dim().1, input.dim().2).forward(input),
                Op::Add(k) => input + &outputs[*k],
            };
            outputs.push(y);
        }
        let feats = global_avg_pool(outputs.last().expect("non-empty graph"));
        self.outputs = Some(outputs);
        Ok(feats)
    }

    /// Accumulate gradients of the trainable layers given the gradient on the
    /// pooled features of the last `forward_train` call.
    pub fn backward(&mut self, grad: &Array2<f32>) -> Result<()> {
        if self.frozen() {
            return Ok(());
        }
        let outputs = self.outputs.take().ok_or(Error::MissingCache)?;
        let n = self.layers.len();
        let (_, h, w, _) = outputs[n - 1].dim();
        let mut grads: Vec<Option<Array4<f32>>> = vec![None; n];
        grads[n - 1] = Some(global_avg_pool_backward(grad, h, w));
        let upto = self.freeze_upto.max(1);
        fn accumulate(slot: &mut Option<Array4<f32>>, g: Array4<f32>) {
            match slot {
                Some(acc) => *acc += &g,
                None => *slot = Some(g),
            }
        }
        for idx in (upto..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let need_input = idx > upto;
            let input = &outputs[idx - 1];
            let dx = match &mut self.layers[idx].op {
                Op::Input { .. } => None,
                Op::Conv(c) => c.backward(&g, need_input)?,
                Op::Depthwise(d) => d.backward(&g, need_input)?,
                Op::BatchNorm(b) => Some(to4(b.backward(&g.into_dyn())?)),
                Op::Relu => Some(ndarray::Zip::from(&g).and(input).map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 })),
                Op::Relu6 => Some(
                    ndarray::Zip::from(&g)
                        .and(input)
                        .map_collect(|&g, &x| if x > 0.0 && x < 6.0 { g } else { 0.0 }),
                ),
                Op::CorrectPad => Some(correct_pad(input.dim().1, input.dim().2).backward(&g)),
                Op::Add(k) => {
                    let k = *k;
                    if k >= upto {
                        accumulate(&mut grads[k], g.clone());
                    }
                    Some(g)
                }
            };
            if let (Some(dx), true) = (dx, need_input) {
                accumulate(&mut grads[idx - 1], dx);
            }
        }
        Ok(())
    }

    /// Per-layer census for an input of `input_side`.
    pub fn summary(&self) -> Vec<LayerSummary> {
        let mut shapes: Vec<[usize; 4]> = Vec::with_capacity(self.layers.len());
        let side = self.input_side;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = shapes.last().copied().unwrap_or([1, side, side, 3]);
            let shape = match &layer.op {
                Op::Conv(c) => c.output_shape(input),
                Op::Depthwise(d) => d.output_shape(input),
                Op::CorrectPad => {
                    let p = correct_pad(input[1], input[2]);
                    [input[0], input[1] + p.top + p.bottom, input[2] + p.left + p.right, input[3]]
                }
                _ => input,
            };
            shapes.push(shape);
            let mut params = 0;
            let mut names = Vec::new();
            layer.op.visit(&mut |p| {
                params += p.value.len();
                names.push(p.name.clone());
            });
            out.push(LayerSummary {
                index: i,
                name: layer.name.clone(),
                kind: layer.op.kind().to_string(),
                output_shape: shape[1..].to_vec(),
                params,
                trainable: i >= self.freeze_upto,
                param_names: names,
            });
        }
        out
    }

    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        let (tensors, _) = load_tensors(path)?;
        self.load_state_dict(&tensors)
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        save_tensors(path, &self.state_dict(), None)
    }

    /// Checksum over every value (weights and running statistics) held by
    /// the frozen layers.
    pub fn frozen_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for layer in &self.layers[..self.freeze_upto] {
            layer.op.visit(&mut |p| {
                for v in p.value.iter() {
                    h ^= v.to_bits() as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            });
        }
        h
    }

    pub fn tensors(&self) -> TensorMap {
        self.state_dict()
    }
}

impl HasParams for FeatureExtractor {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        for layer in &self.layers {
            layer.op.visit(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for layer in &mut self.layers {
            layer.op.visit_mut(f);
        }
    }
}

/// Stack per-frame features `(frames, D)` into sequences by index lists.
pub fn gather_sequences(features: &Array2<f32>, frames: &[Vec<usize>]) -> Array3<f32> {
    let l = frames.first().map_or(0, Vec::len);
    let d = features.ncols();
    let mut out = Array3::zeros((frames.len(), l, d));
    for (b, seq) in frames.iter().enumerate() {
        for (t, &f) in seq.iter().enumerate() {
            out.slice_mut(s![b, t, ..]).assign(&features.index_axis(Axis(0), f));
        }
    }
    out
}
