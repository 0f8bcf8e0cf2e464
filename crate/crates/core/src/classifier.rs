//! Bias-free cosine classifier.
//!
//! The logit for class `i` is `gamma * cos(x, w_i)`, so every logit lies in
//! `[-gamma, gamma]` and is invariant to the scale of both `x` and `w_i`.
//! Gradients flow to the weights only; features are frozen inputs.

use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{self, Dtype, Role, Sidecar};
use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};

pub const DEFAULT_GAMMA: f64 = 100.0;

/// Per-class proxy rows `w_i` plus the fixed logit scale `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    w: Matrix,
    gamma: f64,
}

impl ClassifierWeights {
    pub fn new(w: Matrix, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        w.check_finite()?;
        check_rows(&w, "weight")?;
        Ok(Self { w, gamma })
    }

    /// Unit-normalizes each embedding row; class order is preserved.
    pub fn from_embeddings(embeddings: &Matrix, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        embeddings.check_finite()?;
        let mut w = embeddings.clone();
        for i in 0..w.rows() {
            let row = w.row_mut(i);
            let n = norm(row);
            if n == 0.0 {
                return Err(Error::ZeroNorm {
                    what: "embedding",
                    row: i,
                });
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(Self { w, gamma })
    }

    /// Entries i.i.d. uniform on the open interval `(-1/sqrt(D), 1/sqrt(D))`.
    pub fn random(classes: usize, dim: usize, seed: u64, gamma: f64) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(Error::Config(format!(
                "random init needs C, D >= 1 (got {classes}x{dim})"
            )));
        }
        check_gamma(gamma)?;
        let bound = 1.0 / (dim as f64).sqrt();
        let dist = Uniform::new(-bound, bound).expect("bound is finite and positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(classes * dim);
        while data.len() < classes * dim {
            let v = dist.sample(&mut rng);
            if v != -bound {
                data.push(v);
            }
        }
        let w = Matrix::from_vec(classes, dim, data)?;
        // A zero row is measure-zero but would break every cosine downstream.
        check_rows(&w, "weight")?;
        Ok(Self { w, gamma })
    }

    pub fn weights(&self) -> &Matrix {
        &self.w
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.w
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn classes(&self) -> usize {
        self.w.rows()
    }

    pub fn dim(&self) -> usize {
        self.w.cols()
    }

    pub fn row_norms(&self) -> Result<Vec<f64>> {
        row_norms(&self.w)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        forward(x, &self.w, self.gamma)
    }

    pub fn weight_grad(&self, x: &[f64], dl_ds: &[f64]) -> Result<Matrix> {
        weight_grad(x, &self.w, self.gamma, dl_ds)
    }

    /// Logits for every row of `features`, as an N×C matrix.
    pub fn score_matrix(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.dim() {
            return Err(Error::dims("feature dim", features.cols(), "weight dim", self.dim()));
        }
        let norms = self.row_norms()?;
        let mut out = Matrix::zeros(features.rows(), self.classes());
        for (r, x) in features.iter_rows().enumerate() {
            forward_into(x, &self.w, &norms, self.gamma, out.row_mut(r)).map_err(|e| match e {
                Error::ZeroNorm { what, .. } => Error::ZeroNorm { what, row: r },
                e => e,
            })?;
        }
        Ok(out)
    }

    /// Writes the weights as an f32 container with a `weights` sidecar.
    pub fn save(&self, path: &Path, classes_sha256: &str) -> Result<()> {
        dataio::write_matrix(&self.w, Dtype::F32, path)?;
        let mut meta = Sidecar::new(Role::Weights, classes_sha256);
        meta.gamma = Some(self.gamma);
        meta.write(path)
    }

    /// Loads weights; gamma comes from the sidecar when present, else
    /// `fallback_gamma`. Returns the sidecar alongside.
    pub fn load(path: &Path, fallback_gamma: f64) -> Result<(Self, Option<Sidecar>)> {
        let (w, dtype) = dataio::read_matrix(path)?;
        if dtype != Dtype::F32 {
            return Err(Error::Config(format!("{}: weights must be f32", path.display())));
        }
        let meta = Sidecar::read(path)?;
        let gamma = meta.as_ref().and_then(|m| m.gamma).unwrap_or(fallback_gamma);
        Ok((Self::new(w, gamma)?, meta))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("gamma must be positive, got {gamma}")))
    }
}

fn check_rows(w: &Matrix, what: &'static str) -> Result<()> {
    match w.iter_rows().position(|r| norm(r) == 0.0) {
        Some(row) => Err(Error::ZeroNorm { what, row }),
        None => Ok(()),
    }
}

pub fn row_norms(w: &Matrix) -> Result<Vec<f64>> {
    w.iter_rows()
        .enumerate()
        .map(|(row, r)| match norm(r) {
            n if n > 0.0 => Ok(n),
            _ => Err(Error::ZeroNorm { what: "weight", row }),
        })
        .collect()
}

/// `s_i = gamma * x.w_i / (|x| |w_i|)` for every class.
pub fn forward(x: &[f64], w: &Matrix, gamma: f64) -> Result<Vec<f64>> {
    check_dim(x, w)?;
    let norms = row_norms(w)?;
    let mut s = vec![0.0; w.rows()];
    forward_into(x, w, &norms, gamma, &mut s)?;
    Ok(s)
}

/// Forward pass with precomputed weight row norms.
pub fn forward_into(
    x: &[f64],
    w: &Matrix,
    w_norms: &[f64],
    gamma: f64,
    out: &mut [f64],
) -> Result<()> {
    let xn = norm(x);
    if xn == 0.0 {
        return Err(Error::ZeroNorm {
            what: "feature",
            row: 0,
        });
    }
    for ((s, wi), &wn) in out.iter_mut().zip(w.iter_rows()).zip(w_norms) {
        *s = gamma * (dot(x, wi) / (xn * wn)).clamp(-1.0, 1.0);
    }
    Ok(())
}

/// Gradient of a loss with respect to `W`, given the loss gradient with
/// respect to the logits of a single feature row.
///
/// Row `i` is `dl_ds[i] * gamma * (x / (|x| |w_i|) - cos_i * w_i / |w_i|^2)`.
pub fn weight_grad(x: &[f64], w: &Matrix, gamma: f64, dl_ds: &[f64]) -> Result<Matrix> {
    check_dim(x, w)?;
    if dl_ds.len() != w.rows() {
        return Err(Error::dims("dL/ds length", dl_ds.len(), "classes", w.rows()));
    }
    let norms = row_norms(w)?;
    let mut g = Matrix::zeros(w.rows(), w.cols());
    accumulate_weight_grad(x, w, &norms, gamma, dl_ds, 1.0, &mut g)?;
    Ok(g)
}

/// Adds `scale * weight_grad(x, ..)` into `acc`. Summing over a batch in a
/// fixed row order keeps results reproducible.
pub fn accumulate_weight_grad(
    x: &[f64],
    w: &Matrix,
    w_norms: &[f64],
    gamma: f64,
    dl_ds: &[f64],
    scale: f64,
    acc: &mut Matrix,
) -> Result<()> {
    let xn = norm(x);
    if xn == 0.0 {
        return Err(Error::ZeroNorm {
            what: "feature",
            row: 0,
        });
    }
    for (i, (&gi, &wn)) in dl_ds.iter().zip(w_norms).enumerate() {
        if gi == 0.0 {
            continue;
        }
        let wi = w.row(i);
        let cos = dot(x, wi) / (xn * wn);
        let a = scale * gi * gamma / (xn * wn);
        let b = scale * gi * gamma * cos / (wn * wn);
        for ((g, &xv), &wv) in acc.row_mut(i).iter_mut().zip(x).zip(wi) {
            *g += a * xv - b * wv;
        }
    }
    Ok(())
}

fn check_dim(x: &[f64], w: &Matrix) -> Result<()> {
    if x.len() != w.cols() {
        return Err(Error::dims("feature dim", x.len(), "weight dim", w.cols()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn identical_and_orthogonal() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![-2.0, 1.0]]).unwrap();
        let s = forward(&[1.0, 2.0], &w, 100.0).unwrap();
        assert_relative_eq!(s[0], 100.0, max_relative = 1e-12);
        assert_relative_eq!(s[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn hand_computed_cosine() {
        let w = Matrix::from_rows(&[vec![4.0, 3.0]]).unwrap();
        let s = forward(&[3.0, 4.0], &w, 100.0).unwrap();
        assert_relative_eq!(s[0], 96.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_feature_is_degenerate() {
        let w = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            forward(&[0.0, 0.0], &w, 1.0),
            Err(Error::ZeroNorm { what: "feature", .. })
        ));
    }

    #[test]
    fn grad_orthogonal_unit_vectors() {
        let w = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let g = weight_grad(&[1.0, 0.0], &w, 1.0, &[1.0]).unwrap();
        assert_eq!(g.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_grad() {
        let w = Matrix::from_rows(&[vec![0.3, 1.0], vec![2.0, -1.0]]).unwrap();
        let g = weight_grad(&[1.0, 0.5], &w, 100.0, &[0.0, 0.0]).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embedding_init_normalizes_rows() {
        let e = Matrix::from_rows(&[vec![3.0, 4.0], vec![0.6, 0.8]]).unwrap();
        let w = ClassifierWeights::from_embeddings(&e, 100.0).unwrap();
        assert_relative_eq!(w.weights().row(0)[0], 0.6, epsilon = 1e-15);
        assert_relative_eq!(w.weights().row(0)[1], 0.8, epsilon = 1e-15);
        for (a, b) in w.weights().row(1).iter().zip([0.6, 0.8]) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn embedding_init_names_zero_row() {
        let e = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            ClassifierWeights::from_embeddings(&e, 100.0),
            Err(Error::ZeroNorm { what: "embedding", row: 1 })
        ));
    }

    #[test]
    fn embedding_init_full_vocabulary_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = (0..600 * 512).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e = Matrix::from_vec(600, 512, data).unwrap();
        let w = ClassifierWeights::from_embeddings(&e, DEFAULT_GAMMA).unwrap();
        assert_eq!(w.weights().shape(), (600, 512));
        for r in w.weights().iter_rows() {
            assert!((norm(r) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn random_init_is_reproducible_and_bounded() {
        let a = ClassifierWeights::random(7, 9, 42, 100.0).unwrap();
        let b = ClassifierWeights::random(7, 9, 42, 100.0).unwrap();
        assert_eq!(a, b);
        let c = ClassifierWeights::random(7, 9, 43, 100.0).unwrap();
        assert_ne!(a, c);
        let bound = 1.0 / 3.0;
        assert!(a.weights().as_slice().iter().all(|v| v.abs() < bound));
        assert!(ClassifierWeights::random(0, 3, 1, 1.0).is_err());
    }

    #[test]
    fn random_init_mean_is_zero() {
        let d = 1000;
        let w = ClassifierWeights::random(1000, d, 7, 1.0).unwrap();
        let vals = w.weights().as_slice();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        // uniform(-b, b) has variance b^2 / 3
        let b = 1.0 / (d as f64).sqrt();
        let sigma_mean = b / 3f64.sqrt() / n.sqrt();
        assert!(mean.abs() < 3.0 * sigma_mean, "mean {mean} vs 3σ {}", 3.0 * sigma_mean);
    }

    #[test]
    fn gamma_must_be_positive() {
        let w = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(ClassifierWeights::new(w.clone(), 0.0).is_err());
        assert!(ClassifierWeights::new(w, -1.0).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        let w = ClassifierWeights::random(3, 4, 1, 64.0).unwrap();
        w.save(&p, "hash").unwrap();
        let (back, meta) = ClassifierWeights::load(&p, 1.0).unwrap();
        assert_eq!(back.gamma(), 64.0);
        assert_eq!(back.weights(), &w.weights().rounded_to_f32());
        assert_eq!(meta.unwrap().classes_sha256, "hash");
    }
}
