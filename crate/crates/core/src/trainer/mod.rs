//! K-fold training: configuration, learning-rate schedules, the epoch loop
//! with best-validation-loss checkpoints, and cross-validation.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{s, Array2, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{gather_sequences, BackboneConfig, BackboneName, FeatureExtractor};
use crate::ingest::ImageRecord;
use crate::models::{build_spatial, build_spatiotemporal, HeadConfig, ModelSummary, Pipeline, SpatialModel, SpatioTemporalModel};
use crate::nn::io::{load_tensors, save_tensors};
use crate::nn::{argmax, softmax_cross_entropy, Adam, HasParams, Param};
use crate::report::{confusion_matrix, precision_recall_f1, FoldResult, RunReport};
use crate::sequencer::{build_sequences, encode_labels, load_image_batch, stratified_kfold, FoldSplit, Grouping};
use crate::{Error, Result};

pub mod augment;

pub use augment::augment;

/// Leading MobileNetV2 layers kept frozen in the spatial pipeline.
pub const MOBILENET_FROZEN_LAYERS: usize = 18;
/// Input layer and first convolution of the tiny CNN.
pub const TINY_CNN_FROZEN_LAYERS: usize = 3;

const EVAL_BATCH: usize = 64;
const EXTRACT_BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    ExponentialStaircase,
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrSchedule::Constant => "constant",
            LrSchedule::ExponentialStaircase => "exponential_staircase",
        })
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "exponential_staircase" => Ok(LrSchedule::ExponentialStaircase),
            other => Err(Error::Config(format!("unknown learning-rate schedule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub pipeline: Pipeline,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub folds: usize,
    /// Frames per sample (spatio-temporal only).
    pub sequence_length: usize,
    /// Window step within a group (spatio-temporal only).
    pub stride: usize,
    pub grouping: Grouping,
    pub lr_schedule: LrSchedule,
    pub decay_rate: f64,
    /// Epochs between staircase drops.
    pub decay_steps_multiplier: f64,
    /// Random affine augmentation of training images (spatial only).
    pub augment: bool,
    pub lstm_units: usize,
    /// Standardize frame features with statistics of each fold's training
    /// frames before the LSTM (spatio-temporal only).
    pub standardize_features: bool,
    pub head: HeadConfig,
    /// Leading backbone layers frozen in the spatial pipeline; `None`
    /// picks 18 for MobileNetV2 and 3 for the tiny CNN.
    pub freeze_layers: Option<usize>,
    pub backbone: BackboneConfig,
    /// Input side for the tiny CNN; the pretrained backbone uses 224.
    pub image_side: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::spatiotemporal()
    }
}

impl TrainConfig {
    pub fn spatiotemporal() -> Self {
        TrainConfig {
            pipeline: Pipeline::SpatioTemporal,
            batch_size: 16,
            epochs: 20,
            lr: 0.001,
            seed: 42,
            folds: 5,
            sequence_length: 5,
            stride: 1,
            grouping: Grouping::ClassOnly,
            lr_schedule: LrSchedule::Constant,
            decay_rate: 0.9,
            decay_steps_multiplier: 10.0,
            augment: false,
            lstm_units: 128,
            standardize_features: false,
            head: HeadConfig::spatiotemporal(),
            freeze_layers: None,
            backbone: BackboneConfig::default(),
            image_side: 224,
        }
    }

    pub fn spatial() -> Self {
        TrainConfig {
            pipeline: Pipeline::Spatial,
            batch_size: 64,
            epochs: 250,
            lr_schedule: LrSchedule::ExponentialStaircase,
            augment: true,
            head: HeadConfig::spatial(),
            ..Self::spatiotemporal()
        }
    }

    pub fn for_pipeline(pipeline: Pipeline) -> Self {
        match pipeline {
            Pipeline::SpatioTemporal => Self::spatiotemporal(),
            Pipeline::Spatial => Self::spatial(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if self.folds < 2 {
            return bad(format!("need at least 2 folds, got {}", self.folds));
        }
        if self.sequence_length == 0 || self.stride == 0 {
            return bad("sequence_length and stride must be at least 1".into());
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return bad(format!("decay_rate {} outside (0, 1]", self.decay_rate));
        }
        if !(self.decay_steps_multiplier > 0.0 && self.decay_steps_multiplier.is_finite()) {
            return bad(format!("decay_steps_multiplier {} must be positive", self.decay_steps_multiplier));
        }
        if self.augment && self.pipeline == Pipeline::SpatioTemporal {
            return bad("augmentation applies to the spatial pipeline only".into());
        }
        if self.standardize_features && self.pipeline == Pipeline::Spatial {
            return bad("feature standardization applies to the spatio-temporal pipeline only".into());
        }
        if self.lstm_units == 0 {
            return bad("lstm_units must be at least 1".into());
        }
        if self.image_side < 8 {
            return bad(format!("image_side {} is below 8", self.image_side));
        }
        self.head.validate()
    }
}

/// Learning rate for optimizer step `step` (0-based).
pub fn lr_at(step: usize, cfg: &TrainConfig, steps_per_epoch: usize) -> f64 {
    match cfg.lr_schedule {
        LrSchedule::Constant => cfg.lr,
        LrSchedule::ExponentialStaircase => {
            let decay_steps = steps_per_epoch.max(1) as f64 * cfg.decay_steps_multiplier;
            cfg.lr * cfg.decay_rate.powf((step as f64 / decay_steps).floor())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// A model of either pipeline.
#[derive(Debug, Clone)]
pub enum Model {
    SpatioTemporal(SpatioTemporalModel),
    Spatial(SpatialModel),
}

impl Model {
    /// Fresh model for `cfg.pipeline` on a copy of `backbone`.
    pub fn build(backbone: FeatureExtractor, cfg: &TrainConfig, classes: usize, seed: u64) -> Result<Self> {
        Ok(match cfg.pipeline {
            Pipeline::SpatioTemporal => {
                Model::SpatioTemporal(build_spatiotemporal(backbone, cfg.lstm_units, &cfg.head, classes, seed)?)
            }
            Pipeline::Spatial => Model::Spatial(build_spatial(backbone, &cfg.head, classes, seed)?),
        })
    }

    pub fn pipeline(&self) -> Pipeline {
        match self {
            Model::SpatioTemporal(_) => Pipeline::SpatioTemporal,
            Model::Spatial(_) => Pipeline::Spatial,
        }
    }

    pub fn summary(&self) -> ModelSummary {
        match self {
            Model::SpatioTemporal(m) => m.summary(),
            Model::Spatial(m) => m.summary(),
        }
    }

    pub fn backbone(&self) -> &FeatureExtractor {
        match self {
            Model::SpatioTemporal(m) => &m.backbone,
            Model::Spatial(m) => &m.backbone,
        }
    }

    /// Fit the frame-feature scaler to rows `(n, D)`.
    pub fn fit_frame_scaler(&mut self, rows: &Array2<f32>) -> Result<()> {
        match self {
            Model::SpatioTemporal(m) => m.frame_norm.fit(rows),
            Model::Spatial(_) => Err(mismatch()),
        }
    }

    pub fn l2_penalty(&self) -> f64 {
        match self {
            Model::SpatioTemporal(m) => m.l2_penalty(),
            Model::Spatial(m) => m.l2_penalty(),
        }
    }

    fn forward(&mut self, x: &Batch) -> Result<Array2<f32>> {
        match (self, x) {
            (Model::SpatioTemporal(m), Batch::Features(f)) => m.forward_features(f),
            (Model::Spatial(m), Batch::Images(i)) => m.forward(i),
            _ => Err(mismatch()),
        }
    }

    fn infer(&self, x: &Batch) -> Result<Array2<f32>> {
        match (self, x) {
            (Model::SpatioTemporal(m), Batch::Features(f)) => m.infer_features(f),
            (Model::Spatial(m), Batch::Images(i)) => m.infer(i),
            _ => Err(mismatch()),
        }
    }

    fn backward(&mut self, dlogits: &Array2<f32>) -> Result<()> {
        match self {
            Model::SpatioTemporal(m) => m.backward(dlogits),
            Model::Spatial(m) => m.backward(dlogits),
        }
    }

    /// Write every parameter plus the summary JSON as metadata.
    pub fn save_checkpoint(&self, path: &Path, epoch: usize, val_loss: f64) -> Result<()> {
        let meta = HashMap::from([
            ("summary".to_string(), serde_json::to_string(&self.summary())?),
            ("epoch".to_string(), epoch.to_string()),
            ("val_loss".to_string(), format!("{val_loss:e}")),
        ]);
        save_tensors(path, &self.state_dict(), Some(meta))
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let (tensors, _) = load_tensors(path)?;
        self.load_state_dict(&tensors)
    }
}

fn mismatch() -> Error {
    Error::Config("model pipeline does not match the data".into())
}

impl HasParams for Model {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        match self {
            Model::SpatioTemporal(m) => m.visit_params(f),
            Model::Spatial(m) => m.visit_params(f),
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            Model::SpatioTemporal(m) => m.visit_params_mut(f),
            Model::Spatial(m) => m.visit_params_mut(f),
        }
    }
}

/// Model inputs for every sample of a run.
#[derive(Debug, Clone, Copy)]
pub enum Inputs<'a> {
    /// Cached per-image backbone features `(images, D)` and each sample's
    /// frame rows.
    Features { features: &'a Array2<f32>, frames: &'a [Vec<usize>] },
    /// Decoded images `(samples, side, side, 3)`.
    Images(&'a Array4<f32>),
}

#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub inputs: Inputs<'a>,
    pub labels: &'a [usize],
}

enum Batch {
    Features(Array3<f32>),
    Images(Array4<f32>),
}

impl Dataset<'_> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Inputs for `ids`; with `augment_seed` each image is augmented using
    /// a seed derived from it and the sample index.
    fn batch(&self, ids: &[usize], augment_seed: Option<u64>) -> Batch {
        match self.inputs {
            Inputs::Features { features, frames } => {
                let picked: Vec<Vec<usize>> = ids.iter().map(|&i| frames[i].clone()).collect();
                Batch::Features(gather_sequences(features, &picked))
            }
            Inputs::Images(images) => {
                let (_, h, w, c) = images.dim();
                let mut out = Array4::zeros((ids.len(), h, w, c));
                for (b, &i) in ids.iter().enumerate() {
                    let img = images.index_axis(Axis(0), i);
                    let dst = out.slice_mut(s![b, .., .., ..]);
                    match augment_seed {
                        Some(seed) => augment(&img.to_owned(), mix(&[seed, i as u64])).assign_to(dst),
                        None => img.assign_to(dst),
                    }
                }
                Batch::Images(out)
            }
        }
    }

    fn check(&self) -> Result<()> {
        let n = match self.inputs {
            Inputs::Features { frames, features } => {
                if let Some(bad) = frames.iter().flatten().find(|&&r| r >= features.nrows()) {
                    return Err(Error::Data(format!("frame row {bad} beyond {} cached features", features.nrows())));
                }
                frames.len()
            }
            Inputs::Images(images) => images.dim().0,
        };
        if n != self.labels.len() {
            return Err(Error::Data(format!("{n} samples but {} labels", self.labels.len())));
        }
        Ok(())
    }
}

/// Deterministic 64-bit mix of several values (splitmix64 chain).
pub fn mix(values: &[u64]) -> u64 {
    let mut z = 0x9E37_79B9_7F4A_7C15u64;
    for &v in values {
        z = z.wrapping_add(v).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Mean cross-entropy plus the L2 penalty.
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

/// Inference-mode loss, accuracy and predictions over `ids`, in order.
pub fn evaluate(model: &Model, data: &Dataset, ids: &[usize]) -> Result<Evaluation> {
    if ids.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let mut ce_sum = 0.0;
    let mut predictions = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(EVAL_BATCH) {
        let logits = model.infer(&data.batch(chunk, None))?;
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let (ce, _, probs) = softmax_cross_entropy(&logits, &labels);
        ce_sum += ce * chunk.len() as f64;
        predictions.extend(probs.rows().into_iter().map(argmax));
    }
    let hits = ids.iter().zip(&predictions).filter(|(&i, &p)| data.labels[i] == p).count();
    Ok(Evaluation {
        loss: ce_sum / ids.len() as f64 + model.l2_penalty(),
        accuracy: hits as f64 / ids.len() as f64,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldTraining {
    pub history: Vec<EpochRecord>,
    pub best_checkpoint: PathBuf,
    /// 1-based.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

fn check_split(split: &FoldSplit, n: usize) -> Result<()> {
    if split.train_ids.is_empty() || split.val_ids.is_empty() {
        return Err(Error::Data(format!(
            "fold {} has {} training and {} validation samples; both must be non-empty",
            split.fold_index,
            split.train_ids.len(),
            split.val_ids.len()
        )));
    }
    if let Some(bad) = split.train_ids.iter().chain(&split.val_ids).find(|&&i| i >= n) {
        return Err(Error::Data(format!("fold {} refers to sample {bad} of {n}", split.fold_index)));
    }
    let train: BTreeSet<usize> = split.train_ids.iter().copied().collect();
    if split.val_ids.iter().any(|i| train.contains(i)) {
        return Err(Error::Data(format!("fold {} shares samples between training and validation", split.fold_index)));
    }
    Ok(())
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in history {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Train `model` for `cfg.epochs` epochs on the split, saving
/// `fold_dir/best.ckpt` whenever validation loss reaches a new minimum and
/// `fold_dir/history.csv` at the end.
pub fn train_fold(model: &mut Model, data: &Dataset, split: &FoldSplit, cfg: &TrainConfig, fold_dir: &Path) -> Result<FoldTraining> {
    cfg.validate()?;
    data.check()?;
    check_split(split, data.len())?;
    if model.pipeline() != cfg.pipeline {
        return Err(mismatch());
    }
    std::fs::create_dir_all(fold_dir).map_err(|e| Error::io(fold_dir, e))?;
    let best_checkpoint = fold_dir.join("best.ckpt");
    let fold = split.fold_index;
    let steps_per_epoch = split.train_ids.len().div_ceil(cfg.batch_size);
    let augmenting = cfg.augment && cfg.pipeline == Pipeline::Spatial;

    let mut adam = Adam::default();
    let mut order = split.train_ids.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64)> = None;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[cfg.seed, fold as u64, epoch as u64]));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let aug_seed = augmenting.then(|| mix(&[cfg.seed, fold as u64, epoch as u64, b as u64]));
            let x = data.batch(chunk, aug_seed);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            model.zero_grads();
            let logits = model.forward(&x)?;
            let (ce, dlogits, probs) = softmax_cross_entropy(&logits, &labels);
            let loss = ce + model.l2_penalty();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    fold,
                    epoch,
                    batch: b,
                    loss,
                });
            }
            model.backward(&dlogits)?;
            adam.step(lr_at(step, cfg, steps_per_epoch) as f32, model);
            step += 1;
            loss_sum += loss * chunk.len() as f64;
            hits += probs.rows().into_iter().zip(&labels).filter(|(p, &l)| argmax(p.view()) == l).count();
        }
        let n = order.len() as f64;
        let val = evaluate(model, data, &split.val_ids)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: hits as f64 / n,
            val_loss: val.loss,
            val_acc: val.accuracy,
        };
        log::info!(
            "fold {} epoch {epoch}/{}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            fold + 1,
            cfg.epochs,
            record.train_loss,
            record.train_acc,
            record.val_loss,
            record.val_acc
        );
        if best.is_none_or(|(_, l)| val.loss < l) {
            model.save_checkpoint(&best_checkpoint, epoch, val.loss)?;
            best = Some((epoch, val.loss));
        }
        history.push(record);
    }
    write_history(&fold_dir.join("history.csv"), &history)?;
    let (best_epoch, best_val_loss) = best.expect("at least one epoch ran");
    Ok(FoldTraining {
        history,
        best_checkpoint,
        best_epoch,
        best_val_loss,
    })
}

/// Default number of frozen leading layers for the spatial pipeline.
pub fn default_freeze(backbone: &FeatureExtractor) -> usize {
    if backbone.name == BackboneName::TinyCnn.to_string() {
        TINY_CNN_FROZEN_LAYERS
    } else {
        MOBILENET_FROZEN_LAYERS
    }
}

/// Backbone features `(records, D)` for every record, in inference mode.
pub fn extract_all(backbone: &FeatureExtractor, records: &[ImageRecord]) -> Result<Array2<f32>> {
    let mut out = Array2::zeros((records.len(), backbone.feature_dim));
    let ids: Vec<usize> = (0..records.len()).collect();
    for chunk in ids.chunks(EXTRACT_BATCH) {
        let images = load_image_batch(records, chunk, backbone.input_side)?;
        let feats = backbone.extract(&images)?;
        out.slice_mut(s![chunk[0]..chunk[0] + chunk.len(), ..]).assign(&feats);
    }
    Ok(out)
}

/// Samples, labels and class names of a run, before any training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub classes: Vec<String>,
    pub labels: Vec<usize>,
    /// Record indices per sample (one per spatial sample).
    pub frames: Vec<Vec<usize>>,
    pub folds: Vec<FoldSplit>,
    pub warnings: Vec<String>,
}

/// Build samples and fold assignments; touches no image data.
pub fn prepare(records: &[ImageRecord], cfg: &TrainConfig) -> Result<Prepared> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Data("manifest is empty".into()));
    }
    let (classes, labels, frames, warnings) = match cfg.pipeline {
        Pipeline::SpatioTemporal => {
            let set = build_sequences(records, cfg.sequence_length, cfg.grouping, cfg.stride)?;
            if set.samples.is_empty() {
                return Err(Error::Data(format!(
                    "no sequences of length {} could be built",
                    cfg.sequence_length
                )));
            }
            let labels = set.labels();
            let frames = set.samples.into_iter().map(|s| s.frames).collect();
            (set.encoder.classes().to_vec(), labels, frames, set.warnings)
        }
        Pipeline::Spatial => {
            let names: BTreeSet<&str> = records.iter().map(|r| r.label.as_str()).collect();
            let names: Vec<&str> = names.into_iter().collect();
            let encoder = encode_labels(&names)?;
            let labels = records
                .iter()
                .map(|r| encoder.index_of(&r.label).expect("label was encoded"))
                .collect();
            (encoder.classes().to_vec(), labels, (0..records.len()).map(|i| vec![i]).collect(), Vec::new())
        }
    };
    let folds = stratified_kfold(&labels, cfg.folds, cfg.seed)?;
    Ok(Prepared {
        classes,
        labels,
        frames,
        folds,
        warnings,
    })
}

/// Full cross-validation: per fold a fresh model from the same base
/// backbone, training, restoring the best checkpoint and evaluating it on
/// the fold's validation set. Artifacts go under `run_dir/fold<k>/`.
pub fn run_cv(records: &[ImageRecord], cfg: &TrainConfig, run_dir: &Path, run_id: &str) -> Result<RunReport> {
    let prepared = prepare(records, cfg)?;
    let mut warnings = prepared.warnings.clone();
    let (mut base, fallback) = FeatureExtractor::from_config(&cfg.backbone, cfg.image_side, cfg.seed)?;
    for w in &fallback {
        log::warn!("{w}");
    }
    warnings.extend(fallback);

    let features;
    let images;
    let inputs = match cfg.pipeline {
        Pipeline::SpatioTemporal => {
            log::info!("extracting {} frame features with {}", records.len(), base.name);
            features = extract_all(&base, records)?;
            Inputs::Features {
                features: &features,
                frames: &prepared.frames,
            }
        }
        Pipeline::Spatial => {
            base.set_freeze(cfg.freeze_layers.unwrap_or_else(|| default_freeze(&base)))?;
            let ids: Vec<usize> = (0..records.len()).collect();
            images = load_image_batch(records, &ids, base.input_side)?;
            Inputs::Images(&images)
        }
    };
    let data = Dataset {
        inputs,
        labels: &prepared.labels,
    };

    let classes = prepared.classes.len();
    let mut folds = Vec::with_capacity(prepared.folds.len());
    for split in &prepared.folds {
        let k = split.fold_index;
        let mut model = Model::build(base.clone(), cfg, classes, mix(&[cfg.seed, k as u64]))?;
        if cfg.standardize_features {
            if let Inputs::Features { features, frames } = &data.inputs {
                let rows: BTreeSet<usize> =
                    split.train_ids.iter().flat_map(|&i| frames[i].iter().copied()).collect();
                let rows: Vec<usize> = rows.into_iter().collect();
                model.fit_frame_scaler(&features.select(Axis(0), &rows))?;
            }
        }
        let frozen_before = model.backbone().frozen_checksum();
        let fold_dir = run_dir.join(format!("fold{}", k + 1));
        let trained = train_fold(&mut model, &data, split, cfg, &fold_dir)?;
        if model.backbone().frozen_checksum() != frozen_before {
            return Err(Error::Numeric(format!("fold {}: frozen parameters changed during training", k + 1)));
        }
        model.load_checkpoint(&trained.best_checkpoint)?;
        let eval = evaluate(&model, &data, &split.val_ids)?;
        let y_true: Vec<usize> = split.val_ids.iter().map(|&i| prepared.labels[i]).collect();
        let confusion = confusion_matrix(&y_true, &eval.predictions, classes)?;
        let best = trained.history[trained.best_epoch - 1];
        folds.push(FoldResult {
            fold: k,
            epoch: trained.best_epoch,
            train_accuracy: best.train_acc,
            train_loss: best.train_loss,
            val_accuracy: best.val_acc,
            val_loss: best.val_loss,
            test_accuracy: eval.accuracy,
            test_loss: eval.loss,
            scores: precision_recall_f1(&confusion)?,
            confusion,
            history: trained.history,
            eval_ids: split.val_ids.clone(),
            checkpoint: Some(trained.best_checkpoint.display().to_string()),
        });
        log::info!("fold {} best epoch {} test accuracy {:.4}", k + 1, trained.best_epoch, eval.accuracy);
    }
    let mut report = RunReport::new(run_id.to_string(), cfg.pipeline, base.name.clone(), prepared.classes, folds);
    report.warnings = warnings;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::random;

    #[test]
    fn defaults_match_published_settings() {
        let st = TrainConfig::spatiotemporal();
        assert_eq!(
            (st.batch_size, st.epochs, st.lr, st.seed, st.folds, st.sequence_length, st.lr_schedule),
            (16, 20, 0.001, 42, 5, 5, LrSchedule::Constant)
        );
        let sp = TrainConfig::spatial();
        assert_eq!((sp.batch_size, sp.epochs, sp.lr, sp.seed, sp.folds), (64, 250, 0.001, 42, 5));
        assert_eq!(sp.lr_schedule, LrSchedule::ExponentialStaircase);
        assert_eq!((sp.decay_rate, sp.decay_steps_multiplier), (0.9, 10.0));
        assert!(sp.augment && !st.augment);
        st.validate().unwrap();
        sp.validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cases: [fn(&mut TrainConfig); 5] = [
            |c| c.batch_size = 0,
            |c| c.epochs = 0,
            |c| c.lr = -1.0,
            |c| c.folds = 1,
            |c| c.augment = true,
        ];
        for f in cases {
            let mut c = TrainConfig::spatiotemporal();
            f(&mut c);
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
        let mut c = TrainConfig::spatial();
        c.standardize_features = true;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn staircase_schedule() {
        let cfg = TrainConfig::spatial();
        let spe = 5;
        assert_eq!(lr_at(0, &cfg, spe), 0.001);
        assert_eq!(lr_at(spe * 10 - 1, &cfg, spe), 0.001);
        assert!((lr_at(spe * 10, &cfg, spe) - 0.0009).abs() < 1e-15);
        assert!((lr_at(spe * 20, &cfg, spe) - 0.00081).abs() < 1e-15);
        let constant = TrainConfig::spatiotemporal();
        assert_eq!(lr_at(10_000, &constant, spe), 0.001);
    }

    #[test]
    fn schedule_names_round_trip() {
        for s in [LrSchedule::Constant, LrSchedule::ExponentialStaircase] {
            assert_eq!(s.to_string().parse::<LrSchedule>().unwrap(), s);
        }
        assert!("cosine".parse::<LrSchedule>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn staircase_never_increases(a in 0usize..100_000, b in 0usize..100_000, spe in 1usize..50) {
            let cfg = TrainConfig::spatial();
            let (lo, hi) = (a.min(b), a.max(b));
            proptest::prop_assert!(lr_at(hi, &cfg, spe) <= lr_at(lo, &cfg, spe));
        }
    }

    /// Three separable classes of 12-dimensional features, 4 frames each.
    fn toy_features() -> (Array2<f32>, Vec<Vec<usize>>, Vec<usize>) {
        let n = 60;
        let noise = random(&[n * 4, 12], 3);
        let mut features = Array2::zeros((n * 4, 12));
        let mut frames = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 3;
            for t in 0..4 {
                let row = i * 4 + t;
                for d in 0..12 {
                    features[[row, d]] = 0.3 * noise[[row, d]] + if d % 3 == label { 1.0 } else { 0.0 };
                }
            }
            frames.push((i * 4..i * 4 + 4).collect());
            labels.push(label);
        }
        (features, frames, labels)
    }

    fn toy_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            lr: 0.01,
            lstm_units: 8,
            head: HeadConfig {
                widths: vec![8],
                ..HeadConfig::spatiotemporal()
            },
            backbone: BackboneConfig {
                name: BackboneName::TinyCnn,
                weights_path: None,
            },
            image_side: 16,
            ..TrainConfig::spatiotemporal()
        }
    }

    fn toy_model(cfg: &TrainConfig, dim: usize) -> Model {
        let mut fx = FeatureExtractor::tiny_cnn(16, 1);
        fx.feature_dim = dim;
        Model::build(fx, cfg, 3, 7).unwrap()
    }

    #[test]
    fn checkpoint_is_the_loss_minimum_and_restores_it() {
        let dir = tempfile::tempdir().unwrap();
        let (features, frames, labels) = toy_features();
        let data = Dataset {
            inputs: Inputs::Features {
                features: &features,
                frames: &frames,
            },
            labels: &labels,
        };
        let cfg = toy_config(12);
        let split = &stratified_kfold(&labels, 5, 42).unwrap()[0];
        let mut model = toy_model(&cfg, 12);
        let frozen = model.backbone().frozen_checksum();
        let out = train_fold(&mut model, &data, split, &cfg, dir.path()).unwrap();
        assert_eq!(out.history.len(), 12);
        let min = out.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val_loss, min);
        assert_eq!(out.history[out.best_epoch - 1].val_loss, min);
        assert_eq!(model.backbone().frozen_checksum(), frozen);

        let mut restored = toy_model(&cfg, 12);
        restored.load_checkpoint(&out.best_checkpoint).unwrap();
        let again = evaluate(&restored, &data, &split.val_ids).unwrap();
        assert!((again.loss - min).abs() <= 1e-6, "{} vs {min}", again.loss);

        let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
        assert_eq!(history.lines().next().unwrap(), "epoch,train_loss,train_acc,val_loss,val_acc");
        assert_eq!(history.lines().count(), 13);
        for r in &out.history {
            assert!((0.0..=1.0).contains(&r.train_acc) && (0.0..=1.0).contains(&r.val_acc));
            assert!(r.train_loss >= 0.0 && r.val_loss >= 0.0);
        }
        // Separable toy data is learned.
        assert!(out.history.last().unwrap().val_acc > 0.9, "{:?}", out.history);
    }

    #[test]
    fn one_epoch_checkpoints_epoch_one() {
        let dir = tempfile::tempdir().unwrap();
        let (features, frames, labels) = toy_features();
        let data = Dataset {
            inputs: Inputs::Features {
                features: &features,
                frames: &frames,
            },
            labels: &labels,
        };
        let cfg = toy_config(1);
        let split = &stratified_kfold(&labels, 5, 1).unwrap()[2];
        let out = train_fold(&mut toy_model(&cfg, 12), &data, split, &cfg, dir.path()).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best_epoch, 1);
        assert!(out.best_checkpoint.is_file());
    }

    #[test]
    fn empty_or_overlapping_splits_fail() {
        let dir = tempfile::tempdir().unwrap();
        let (features, frames, labels) = toy_features();
        let data = Dataset {
            inputs: Inputs::Features {
                features: &features,
                frames: &frames,
            },
            labels: &labels,
        };
        let cfg = toy_config(1);
        let mut model = toy_model(&cfg, 12);
        let empty = FoldSplit {
            fold_index: 0,
            train_ids: vec![0, 1],
            val_ids: vec![],
        };
        assert!(matches!(train_fold(&mut model, &data, &empty, &cfg, dir.path()), Err(Error::Data(_))));
        let overlap = FoldSplit {
            fold_index: 0,
            train_ids: vec![0, 1, 2],
            val_ids: vec![2, 3],
        };
        assert!(matches!(train_fold(&mut model, &data, &overlap, &cfg, dir.path()), Err(Error::Data(_))));
    }

    #[test]
    fn exploding_loss_aborts_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let (mut features, frames, labels) = toy_features();
        features[[0, 0]] = f32::NAN;
        let data = Dataset {
            inputs: Inputs::Features {
                features: &features,
                frames: &frames,
            },
            labels: &labels,
        };
        let cfg = toy_config(2);
        let split = FoldSplit {
            fold_index: 3,
            train_ids: (0..40).collect(),
            val_ids: (40..60).collect(),
        };
        let err = train_fold(&mut toy_model(&cfg, 12), &data, &split, &cfg, dir.path()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { fold: 3, epoch: 1, .. }), "{err:?}");
    }

    #[test]
    fn mix_is_order_sensitive() {
        assert_eq!(mix(&[1, 2]), mix(&[1, 2]));
        assert_ne!(mix(&[1, 2]), mix(&[2, 1]));
    }
}
