//! End-to-end training and evaluation.
//!
//! [`train`] reads features, labels and the class list from disk, splits off
//! a validation set, and runs Adam over class-balanced epochs. After each
//! epoch the weights are rounded to `f32` (the checkpoint precision) and
//! scored on the validation split; the best such snapshot is the checkpoint.
//! Every random choice derives from `TrainConfig::seed`, so a config fully
//! determines the run.

pub mod experiments;
pub mod synth;

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::classifier::{accumulate_weight_grad, ClassifierWeights, DEFAULT_GAMMA};
use crate::dataio::{self, Dtype, FeatureMatrix, LabelMatrix, Role, Sidecar};
use crate::error::{Error, Result};
use crate::labelspace::ClassList;
use crate::losses::{ClassStats, Loss, LossKind};
use crate::matrix::Matrix;
use crate::metrics::{map_eval, ApReport};
use crate::optim::{AdamState, Schedule};
use crate::sampler::{self, DEFAULT_MIN_PER_CLASS, DEFAULT_VAL_FRACTION};

pub const DEFAULT_BASE_LR: f64 = 1e-4;
/// Suggested learning rate when features are already aligned with the
/// text embeddings (contrastive image-text backbones).
pub const ALIGNED_BASE_LR: f64 = 1e-5;
/// Learning rate used for ablations on the synthetic benchmark.
pub const BENCHMARK_BASE_LR: f64 = 1e-3;
pub const DEFAULT_EPOCHS: usize = 10;
pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_RESTART_PERIOD: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Init {
    Random { seed: u64 },
    Embeddings { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub features_path: PathBuf,
    pub labels_path: PathBuf,
    pub classes_path: PathBuf,
    pub init: Init,
    pub loss: LossKind,
    pub gamma: f64,
    pub base_lr: f64,
    pub min_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub min_per_class: usize,
    pub val_fraction: f64,
    pub restart_period: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_features_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels_path: Option<PathBuf>,
    /// Where the checkpoint and run record go; nothing is written if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl TrainConfig {
    /// Defaults for everything but the inputs.
    pub fn new(
        features_path: impl Into<PathBuf>,
        labels_path: impl Into<PathBuf>,
        classes_path: impl Into<PathBuf>,
        init: Init,
    ) -> Self {
        Self {
            features_path: features_path.into(),
            labels_path: labels_path.into(),
            classes_path: classes_path.into(),
            init,
            loss: LossKind::LseSign,
            gamma: DEFAULT_GAMMA,
            base_lr: DEFAULT_BASE_LR,
            min_lr: 0.0,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            min_per_class: DEFAULT_MIN_PER_CLASS,
            val_fraction: DEFAULT_VAL_FRACTION,
            restart_period: DEFAULT_RESTART_PERIOD,
            seed: 0,
            test_features_path: None,
            test_labels_path: None,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return bad(format!("base lr must be positive, got {}", self.base_lr));
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.base_lr) {
            return bad(format!("min lr must lie in [0, base lr], got {}", self.min_lr));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.restart_period == 0 {
            return bad("restart period must be at least 1".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        if self.test_features_path.is_some() != self.test_labels_path.is_some() {
            return bad("test features and test labels must be given together".into());
        }
        Ok(())
    }
}

/// Inputs for one run, loaded and cross-checked.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub classes: ClassList,
    pub features: FeatureMatrix,
    pub labels: LabelMatrix,
    pub embeddings: Option<Matrix>,
    pub test: Option<(FeatureMatrix, LabelMatrix)>,
}

impl Dataset {
    pub fn new(
        classes: ClassList,
        features: FeatureMatrix,
        labels: LabelMatrix,
        embeddings: Option<Matrix>,
        test: Option<(FeatureMatrix, LabelMatrix)>,
    ) -> Result<Self> {
        let c = classes.len();
        if features.len() != labels.rows() {
            return Err(Error::dims("feature rows", features.len(), "label rows", labels.rows()));
        }
        if labels.cols() != c {
            return Err(Error::dims("label cols", labels.cols(), "class count", c));
        }
        if let Some(e) = &embeddings {
            if e.rows() != c {
                return Err(Error::dims("embedding rows", e.rows(), "class count", c));
            }
            if e.cols() != features.dim() {
                return Err(Error::dims("embedding dim", e.cols(), "feature dim", features.dim()));
            }
        }
        if let Some((tf, tl)) = &test {
            if tf.len() != tl.rows() {
                return Err(Error::dims("test feature rows", tf.len(), "test label rows", tl.rows()));
            }
            if tf.dim() != features.dim() {
                return Err(Error::dims("test feature dim", tf.dim(), "feature dim", features.dim()));
            }
            if tl.cols() != c {
                return Err(Error::dims("test label cols", tl.cols(), "class count", c));
            }
        }
        Ok(Self {
            classes,
            features,
            labels,
            embeddings,
            test,
        })
    }

    pub fn load(config: &TrainConfig) -> Result<Self> {
        let classes = ClassList::read(&config.classes_path)?;
        let features = FeatureMatrix::read(&config.features_path)?;
        let labels = LabelMatrix::read(&config.labels_path)?;
        let hash = classes.sha256();
        check_sidecar(&config.features_path, &hash)?;
        check_sidecar(&config.labels_path, &hash)?;
        let embeddings = match &config.init {
            Init::Embeddings { path } => {
                let (e, dtype) = dataio::read_matrix(path)?;
                if dtype != Dtype::F32 {
                    return Err(Error::Config(format!("{}: embeddings must be f32", path.display())));
                }
                check_sidecar(path, &hash)?;
                Some(e)
            }
            Init::Random { .. } => None,
        };
        let test = match (&config.test_features_path, &config.test_labels_path) {
            (Some(f), Some(l)) => Some((FeatureMatrix::read(f)?, LabelMatrix::read(l)?)),
            _ => None,
        };
        Self::new(classes, features, labels, embeddings, test)
    }
}

fn check_sidecar(path: &Path, classes_hash: &str) -> Result<()> {
    if let Some(meta) = Sidecar::read(path)? {
        if meta.classes_sha256 != classes_hash {
            warn!(
                "{}: sidecar class-list hash {} does not match the class list ({})",
                path.display(),
                meta.classes_sha256,
                classes_hash
            );
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch's plan.
    pub train_loss: f64,
    pub val_map: f64,
    /// Optimizer steps taken so far, this epoch included.
    pub global_step: u64,
    pub lr_last: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept (highest validation mAP,
    /// earliest on ties).
    pub best_epoch: usize,
    pub best_val_map: f64,
    pub final_val_map: f64,
    /// mAP of the kept weights on the training split.
    pub train_map: f64,
    pub test_map: Option<f64>,
    pub steps_per_epoch: usize,
    pub epoch_size: usize,
    pub checkpoint: Option<PathBuf>,
    pub wall_time_secs: f64,
}

impl RunRecord {
    /// The record with wall-clock time zeroed; everything left is a pure
    /// function of the config and inputs.
    pub fn without_timing(&self) -> RunRecord {
        RunRecord {
            wall_time_secs: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub record: RunRecord,
    pub initial: ClassifierWeights,
    /// Best-validation snapshot, already at checkpoint (f32) precision.
    pub best: ClassifierWeights,
    /// Weights after the last step.
    pub last: ClassifierWeights,
    pub split: sampler::SplitPlan,
}

/// Independent RNG streams from one seed (splitmix64 finalizer).
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SPLIT: u64 = 1;
const STREAM_EPOCH: u64 = 1 << 32;

pub fn initial_weights(config: &TrainConfig, data: &Dataset) -> Result<ClassifierWeights> {
    match (&config.init, &data.embeddings) {
        (Init::Embeddings { .. }, Some(e)) => ClassifierWeights::from_embeddings(e, config.gamma),
        (Init::Embeddings { path }, None) => Err(Error::Config(format!(
            "embedding init requested but {} was not loaded",
            path.display()
        ))),
        (Init::Random { seed }, _) => ClassifierWeights::random(
            data.classes.len(),
            data.features.dim(),
            *seed,
            config.gamma,
        ),
    }
}

/// Trains on an already loaded dataset. Writes nothing.
pub fn fit(config: &TrainConfig, data: &Dataset) -> Result<TrainOutput> {
    config.validate()?;
    let started = Instant::now();
    let split = sampler::split(
        data.features.len(),
        config.val_fraction,
        derive_seed(config.seed, STREAM_SPLIT),
    )?;
    let val_features = data.features.select_rows(&split.val);
    let val_labels = data.labels.select_rows(&split.val);
    let train_labels = data.labels.select_rows(&split.train);

    let stats = ClassStats::from_labels(&train_labels);
    let loss = Loss::new(config.loss, Some(&stats))?;

    let initial = initial_weights(config, data)?;
    let mut weights = initial.clone();
    let mut adam = AdamState::new(weights.weights().as_slice().len());

    let plan_for = |epoch: usize| {
        sampler::plan_epoch(
            &data.labels,
            &split.train,
            config.min_per_class,
            derive_seed(config.seed, STREAM_EPOCH + epoch as u64),
        )
    };
    let epoch_size = plan_for(0).len();
    let steps_per_epoch = epoch_size.div_ceil(config.batch_size);
    let schedule = Schedule::new(config.base_lr, config.min_lr, config.restart_period, steps_per_epoch)?;

    let mut global_step = 0u64;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ClassifierWeights)> = None;
    let gamma = config.gamma;
    let (classes, dim) = (weights.classes(), weights.dim());

    for epoch in 0..config.epochs {
        let plan = plan_for(epoch);
        let mut loss_sum = 0.0;
        let mut lr = schedule.lr_at(global_step);
        for batch in plan.batches(config.batch_size)? {
            let norms = weights.row_norms()?;
            let mut grad = Matrix::zeros(classes, dim);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            let mut logits = vec![0.0; classes];
            for &i in batch {
                let x = data.features.row(i);
                crate::classifier::forward_into(x, weights.weights(), &norms, gamma, &mut logits)?;
                let (l, dl_ds) = loss.value_and_grad(&logits, data.labels.row(i))?;
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss { step: global_step });
                }
                batch_loss += l;
                accumulate_weight_grad(x, weights.weights(), &norms, gamma, &dl_ds, scale, &mut grad)?;
            }
            loss_sum += batch_loss;
            lr = schedule.lr_at(global_step);
            adam.step(weights.weights_mut().as_mut_slice(), grad.as_slice(), lr)?;
            global_step += 1;
            if weights.weights().as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss { step: global_step });
            }
        }

        let snapshot = ClassifierWeights::new(weights.weights().rounded_to_f32(), gamma)?;
        let val_map = map_eval(&snapshot.score_matrix(val_features.matrix())?, &val_labels)?.map;
        let train_loss = loss_sum / plan.len() as f64;
        info!(
            "epoch {:>3}  loss {:.6}  val mAP {:.4}  lr {:.3e}",
            epoch + 1,
            train_loss,
            val_map,
            lr
        );
        epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            val_map,
            global_step,
            lr_last: lr,
        });
        if best.as_ref().is_none_or(|(_, m, _)| val_map > *m) {
            best = Some((epoch + 1, val_map, snapshot));
        }
    }

    let (best_epoch, best_val_map, best_weights) = best.expect("epochs >= 1");
    let train_features = data.features.select_rows(&split.train);
    let train_map = map_eval(&best_weights.score_matrix(train_features.matrix())?, &train_labels)?.map;
    let test_map = match &data.test {
        Some((tf, tl)) => Some(map_eval(&best_weights.score_matrix(tf.matrix())?, tl)?.map),
        None => None,
    };
    let final_val_map = epochs.last().map_or(0.0, |e| e.val_map);

    Ok(TrainOutput {
        record: RunRecord {
            config: config.clone(),
            epochs,
            best_epoch,
            best_val_map,
            final_val_map,
            train_map,
            test_map,
            steps_per_epoch,
            epoch_size,
            checkpoint: None,
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
        initial,
        best: best_weights,
        last: weights,
        split,
    })
}

pub const CHECKPOINT_FILE: &str = "weights.bin";
pub const INITIAL_WEIGHTS_FILE: &str = "init_weights.bin";
pub const LAST_WEIGHTS_FILE: &str = "last_weights.bin";
pub const RUN_RECORD_FILE: &str = "run.json";

/// Loads the inputs named in `config`, trains, and (when `out_dir` is set)
/// writes the best weights, the initial and last weights, and `run.json`.
pub fn train(config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    let data = Dataset::load(config)?;
    let mut out = fit(config, &data)?;
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let hash = data.classes.sha256();
        let ckpt = dir.join(CHECKPOINT_FILE);
        out.best.save(&ckpt, &hash)?;
        out.initial.save(&dir.join(INITIAL_WEIGHTS_FILE), &hash)?;
        out.last.save(&dir.join(LAST_WEIGHTS_FILE), &hash)?;
        out.record.checkpoint = Some(ckpt);
        let path = dir.join(RUN_RECORD_FILE);
        let mut text = serde_json::to_string_pretty(&out.record).map_err(|e| Error::Sidecar(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(out)
}

/// Result of [`evaluate`], with any warnings raised along the way.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: ApReport,
    pub gamma: f64,
    pub warnings: Vec<String>,
}

/// Scores `features` with saved weights and computes per-class AP.
///
/// `gamma` is the value to use; it is compared against the one recorded in
/// the weights sidecar and a mismatch (or a missing sidecar value) only
/// produces a warning. mAP does not depend on gamma, since it scales every
/// logit of a class by the same positive factor.
pub fn evaluate(weights_path: &Path, features_path: &Path, labels_path: &Path, gamma: f64) -> Result<Evaluation> {
    let (loaded, meta) = ClassifierWeights::load(weights_path, gamma)?;
    let mut warnings = Vec::new();
    match meta.as_ref().and_then(|m| m.gamma) {
        Some(g) if g != gamma => warnings.push(format!(
            "gamma {gamma} differs from the value recorded at training time ({g}); using {gamma}"
        )),
        Some(_) => {}
        None => warnings.push(format!("no gamma recorded for {}; using {gamma}", weights_path.display())),
    }
    if let Some(m) = &meta {
        if m.role != Role::Weights {
            warnings.push(format!("{}: sidecar role is {:?}, expected weights", weights_path.display(), m.role));
        }
    }
    for w in &warnings {
        warn!("{w}");
    }
    let weights = ClassifierWeights::new(loaded.weights().clone(), gamma)?;
    let features = FeatureMatrix::read(features_path)?;
    let labels = LabelMatrix::read(labels_path)?;
    if features.len() != labels.rows() {
        return Err(Error::dims("feature rows", features.len(), "label rows", labels.rows()));
    }
    if labels.cols() != weights.classes() {
        return Err(Error::dims("label cols", labels.cols(), "weight rows", weights.classes()));
    }
    let report = map_eval(&weights.score_matrix(features.matrix())?, &labels)?;
    Ok(Evaluation {
        report,
        gamma,
        warnings,
    })
}
