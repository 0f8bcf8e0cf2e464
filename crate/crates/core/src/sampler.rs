//! Train/validation split and per-epoch class-balanced oversampling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::LabelMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_VAL_FRACTION: f64 = 0.10;
pub const DEFAULT_MIN_PER_CLASS: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    /// Ascending.
    pub train: Vec<usize>,
    /// Ascending.
    pub val: Vec<usize>,
    pub val_fraction: f64,
    pub seed: u64,
}

/// Uniform random split of `0..n` with `round(val_fraction * n)` images
/// held out for validation.
pub fn split(n: usize, val_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 images to split, got {n}")));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let n_val = (val_fraction * n as f64).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::Config(format!(
            "validation fraction {val_fraction} of {n} images leaves {n_val} validation and {} training images",
            n.saturating_sub(n_val)
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok(SplitPlan {
        train,
        val,
        val_fraction,
        seed,
    })
}

/// One epoch's sequence of training image indices, replicas included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochPlan {
    pub indices: Vec<usize>,
    pub min_per_class: usize,
    pub seed: u64,
}

impl EpochPlan {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Consecutive chunks of `batch_size`; the last one may be shorter.
    pub fn batches(&self, batch_size: usize) -> Result<std::slice::Chunks<'_, usize>> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(self.indices.chunks(batch_size))
    }

    /// Number of entries whose label row is positive for each class.
    pub fn coverage(&self, labels: &LabelMatrix) -> Vec<usize> {
        let mut cov = vec![0; labels.cols()];
        for &i in &self.indices {
            add_coverage(&mut cov, labels.row(i));
        }
        cov
    }
}

fn add_coverage(cov: &mut [usize], row: &[i8]) {
    for (c, &y) in cov.iter_mut().zip(row) {
        if y == 1 {
            *c += 1;
        }
    }
}

/// Builds an epoch over `train` (indices into `labels`).
///
/// Every training index appears once. Classes are then visited in
/// ascending order; a class whose positive coverage is still below
/// `min_per_class` has its positive images replicated round-robin until it
/// reaches the floor. A replica counts toward every class it is positive
/// for, so later rare classes may already be covered by earlier ones.
/// Classes with no positive training image are skipped. The result is
/// shuffled with `seed`.
pub fn plan_epoch(labels: &LabelMatrix, train: &[usize], min_per_class: usize, seed: u64) -> EpochPlan {
    let mut indices = train.to_vec();
    let mut cov = vec![0usize; labels.cols()];
    for &i in train {
        add_coverage(&mut cov, labels.row(i));
    }
    for class in 0..labels.cols() {
        if cov[class] >= min_per_class {
            continue;
        }
        let positives: Vec<usize> = train
            .iter()
            .copied()
            .filter(|&i| labels.is_positive(i, class))
            .collect();
        if positives.is_empty() {
            continue;
        }
        for &i in positives.iter().cycle() {
            if cov[class] >= min_per_class {
                break;
            }
            indices.push(i);
            add_coverage(&mut cov, labels.row(i));
        }
    }
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    EpochPlan {
        indices,
        min_per_class,
        seed,
    }
}
