//! Average precision / mAP, and a measure of how much the geometry of the
//! classifier rows changes during training.

use serde::{Deserialize, Serialize};

use crate::dataio::LabelMatrix;
use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};

/// Non-interpolated AP: mean over positives of precision at their rank.
///
/// Items are ranked by descending score; equal scores keep ascending index
/// order. Returns `None` when there is no positive label, which callers
/// treat as "skip this class" rather than an AP of zero.
pub fn average_precision(scores: &[f64], labels: &[i8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub map: f64,
    /// One entry per class; skipped classes hold `null` in JSON.
    pub per_class_ap: Vec<Option<f64>>,
    #[serde(rename = "skipped")]
    pub skipped_classes: Vec<usize>,
}

impl ApReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Per-class AP over the columns of an N×C score matrix.
pub fn map_eval(scores: &Matrix, labels: &LabelMatrix) -> Result<ApReport> {
    if scores.rows() != labels.rows() {
        return Err(Error::dims("score rows", scores.rows(), "label rows", labels.rows()));
    }
    if scores.cols() != labels.cols() {
        return Err(Error::dims("score cols", scores.cols(), "label cols", labels.cols()));
    }
    let per_class_ap: Vec<Option<f64>> = (0..scores.cols())
        .map(|c| {
            let col: Vec<f64> = (0..scores.rows()).map(|r| scores.get(r, c)).collect();
            average_precision(&col, &labels.column(c))
        })
        .collect();
    let skipped_classes: Vec<usize> = per_class_ap
        .iter()
        .enumerate()
        .filter_map(|(c, ap)| ap.is_none().then_some(c))
        .collect();
    let scored: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(Error::AllClassesSkipped);
    }
    let map = scored.iter().sum::<f64>() / scored.len() as f64;
    Ok(ApReport {
        map,
        per_class_ap,
        skipped_classes,
    })
}

pub const DEFAULT_DRIFT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// `|S_init - S_final|_F / C` over the C×C row-cosine matrices.
    pub frobenius_drift: f64,
    /// Mean fraction of each class's k nearest classes (by row cosine)
    /// shared between the two weight matrices.
    pub nn_overlap: f64,
    pub k: usize,
}

/// Row-cosine similarity matrix of `w`.
pub fn cosine_matrix(w: &Matrix) -> Result<Matrix> {
    let mut unit = w.clone();
    for i in 0..unit.rows() {
        let row = unit.row_mut(i);
        let n = norm(row);
        if n == 0.0 {
            return Err(Error::ZeroNorm { what: "weight", row: i });
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    let c = unit.rows();
    let mut s = Matrix::zeros(c, c);
    for i in 0..c {
        for j in i..c {
            let v = dot(unit.row(i), unit.row(j));
            s.row_mut(i)[j] = v;
            s.row_mut(j)[i] = v;
        }
    }
    Ok(s)
}

/// The `k` classes most similar to `class`, excluding itself. Ties go to
/// the lower index.
fn neighbors(sim: &Matrix, class: usize, k: usize) -> Vec<usize> {
    let row = sim.row(class);
    let mut others: Vec<usize> = (0..row.len()).filter(|&j| j != class).collect();
    others.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    others.truncate(k);
    others
}

pub fn structure_drift(w_init: &Matrix, w_final: &Matrix, k: usize) -> Result<DriftReport> {
    if w_init.rows() != w_final.rows() {
        return Err(Error::dims("initial classes", w_init.rows(), "final classes", w_final.rows()));
    }
    if w_init.cols() != w_final.cols() {
        return Err(Error::dims("initial dim", w_init.cols(), "final dim", w_final.cols()));
    }
    let c = w_init.rows();
    if k == 0 || k >= c {
        return Err(Error::Config(format!(
            "neighbour count k must lie in 1..{c} for {c} classes, got {k}"
        )));
    }
    let s0 = cosine_matrix(w_init)?;
    let s1 = cosine_matrix(w_final)?;
    let frob = s0
        .as_slice()
        .iter()
        .zip(s1.as_slice())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut overlap = 0.0;
    for i in 0..c {
        let a = neighbors(&s0, i, k);
        let b = neighbors(&s1, i, k);
        let shared = a.iter().filter(|j| b.contains(j)).count();
        overlap += shared as f64 / k as f64;
    }
    Ok(DriftReport {
        frobenius_drift: frob / c as f64,
        nn_overlap: overlap / c as f64,
        k,
    })
}
