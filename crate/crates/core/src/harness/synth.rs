//! Synthetic benchmark generator.
//!
//! Classes are `verb object` pairs. Each class has a prototype direction
//! built from a shared verb vector, a shared object vector and a
//! class-specific component, so classes sharing a verb or an object are
//! near each other. Image features are sums of the prototypes of their
//! labels plus isotropic noise. Class frequencies follow a power law, and
//! an image may carry several classes that share one object (e.g. "cut
//! carrot" with "hold carrot").
//!
//! "Text embeddings" are the prototypes perturbed by independent noise:
//! they carry the class structure but are not the optimal classifier.
//!
//! All matrices are rounded to `f32` so in-memory runs match runs from
//! files written by [`SynthData::write`].

use std::path::Path;

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::{self, Dtype, FeatureMatrix, LabelMatrix, Role, Sidecar};
use crate::error::{Error, Result};
use crate::labelspace::ClassList;
use crate::matrix::{norm, Matrix};

const VERBS: &str = include_str!("../../data/hico_verbs.txt");

const OBJECTS: [&str; 80] = [
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat",
    "traffic_light", "fire_hydrant", "stop_sign", "parking_meter", "bench", "bird", "cat", "dog",
    "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella",
    "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard", "sports_ball", "kite",
    "baseball_bat", "baseball_glove", "skateboard", "surfboard", "tennis_racket", "bottle",
    "wine_glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange",
    "broccoli", "carrot", "hot_dog", "pizza", "donut", "cake", "chair", "couch", "potted_plant",
    "bed", "dining_table", "toilet", "tv", "laptop", "mouse", "remote", "keyboard", "cell_phone",
    "microwave", "oven", "toaster", "sink", "refrigerator", "book", "clock", "vase", "scissors",
    "teddy_bear", "hair_drier", "toothbrush",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub images: usize,
    pub test_images: usize,
    pub dim: usize,
    pub verbs: usize,
    pub objects: usize,
    /// Class frequency is proportional to `(rank + 1)^-power`.
    pub power: f64,
    /// Probability of each extra same-object label, up to `max_labels`.
    pub cooccur_prob: f64,
    pub max_labels: usize,
    pub verb_weight: f64,
    pub object_weight: f64,
    pub unique_weight: f64,
    /// Norm of the feature noise relative to a unit prototype.
    pub feature_noise: f64,
    /// Norm of the embedding perturbation relative to a unit prototype.
    pub embedding_noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// D = 32, C = 64 (8 verbs × 8 objects), power-law frequencies,
    /// multi-label images.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            images: 2000,
            test_images: 0,
            dim: 32,
            verbs: 8,
            objects: 8,
            power: 1.0,
            cooccur_prob: 0.3,
            max_labels: 3,
            verb_weight: 1.0,
            object_weight: 1.0,
            unique_weight: 1.0,
            feature_noise: 0.6,
            embedding_noise: 1.5,
            seed,
        }
    }

    /// N = 512, D = 16, C = 8; one label per image and little noise, so
    /// every class is linearly separable from the rest.
    pub fn separable(seed: u64) -> Self {
        Self {
            images: 512,
            test_images: 0,
            dim: 16,
            verbs: 4,
            objects: 2,
            power: 0.0,
            cooccur_prob: 0.0,
            max_labels: 1,
            verb_weight: 0.0,
            object_weight: 0.0,
            unique_weight: 1.0,
            feature_noise: 0.05,
            embedding_noise: 0.3,
            seed,
        }
    }

    pub fn classes(&self) -> usize {
        self.verbs * self.objects
    }

    fn validate(&self) -> Result<()> {
        let verbs = VERBS.lines().filter(|v| *v != crate::labelspace::NO_INTERACTION).count();
        let bad = |m: String| Err(Error::Config(m));
        if self.verbs == 0 || self.verbs > verbs {
            return bad(format!("verbs must lie in 1..={verbs}"));
        }
        if self.objects == 0 || self.objects > OBJECTS.len() {
            return bad(format!("objects must lie in 1..={}", OBJECTS.len()));
        }
        if self.images < 2 || self.dim == 0 {
            return bad("need at least 2 images and dim >= 1".into());
        }
        if self.max_labels == 0 {
            return bad("max labels must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.cooccur_prob) {
            return bad("co-occurrence probability must lie in [0, 1]".into());
        }
        let finite = [
            self.power,
            self.verb_weight,
            self.object_weight,
            self.unique_weight,
            self.feature_noise,
            self.embedding_noise,
        ];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("weights, noise levels and power must be finite and non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub classes: ClassList,
    pub prototypes: Matrix,
    pub embeddings: Matrix,
    pub features: FeatureMatrix,
    pub labels: LabelMatrix,
    pub test: Option<(FeatureMatrix, LabelMatrix)>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z / (dim as f64).sqrt()
        })
        .collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn sample_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // rounding left u at the top edge
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let c = spec.classes();

    let verb_names: Vec<&str> = VERBS
        .lines()
        .filter(|v| *v != crate::labelspace::NO_INTERACTION)
        .take(spec.verbs)
        .collect();
    let text: String = (0..c)
        .map(|k| format!("{} {}\n", verb_names[k / spec.objects], OBJECTS[k % spec.objects]))
        .collect();
    let classes = ClassList::parse(&text)?;

    let verb_vecs: Vec<Vec<f64>> = (0..spec.verbs).map(|_| gaussian(&mut rng, d, 1.0)).collect();
    let object_vecs: Vec<Vec<f64>> = (0..spec.objects).map(|_| gaussian(&mut rng, d, 1.0)).collect();
    let mut protos = Vec::with_capacity(c);
    for k in 0..c {
        let u = gaussian(&mut rng, d, 1.0);
        let (v, o) = (&verb_vecs[k / spec.objects], &object_vecs[k % spec.objects]);
        let p: Vec<f64> = (0..d)
            .map(|j| spec.verb_weight * v[j] + spec.object_weight * o[j] + spec.unique_weight * u[j])
            .collect();
        if norm(&p) == 0.0 {
            return Err(Error::Config("all prototype weights are zero".into()));
        }
        protos.push(normalized(p));
    }
    let embeddings: Vec<Vec<f64>> = protos
        .iter()
        .map(|p| {
            let n = gaussian(&mut rng, d, spec.embedding_noise);
            normalized(p.iter().zip(&n).map(|(a, b)| a + b).collect())
        })
        .collect();

    // frequency ranks are a random permutation of the classes
    let mut ranks: Vec<usize> = (0..c).collect();
    for i in (1..c).rev() {
        let j = rng.random_range(0..=i);
        ranks.swap(i, j);
    }
    let freq: Vec<f64> = ranks.iter().map(|&r| ((r + 1) as f64).powf(-spec.power)).collect();

    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Result<(FeatureMatrix, LabelMatrix)> {
        let mut positives = Vec::with_capacity(n);
        let mut feats = Vec::with_capacity(n * d);
        for _ in 0..n {
            let primary = sample_weighted(rng, &freq);
            let mut labels = vec![primary];
            let object = primary % spec.objects;
            while labels.len() < spec.max_labels && rng.random_bool(spec.cooccur_prob) {
                let w: Vec<f64> = (0..c)
                    .map(|k| {
                        if k % spec.objects == object && !labels.contains(&k) {
                            freq[k]
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if w.iter().all(|&x| x == 0.0) {
                    break;
                }
                labels.push(sample_weighted(rng, &w));
            }
            labels.sort_unstable();
            let noise = gaussian(rng, d, spec.feature_noise);
            for j in 0..d {
                let x: f64 = labels.iter().map(|&k| protos[k][j]).sum::<f64>() + noise[j];
                feats.push(x as f32 as f64);
            }
            positives.push(labels);
        }
        Ok((
            FeatureMatrix::new(Matrix::from_vec(n, d, feats)?)?,
            LabelMatrix::from_positives(c, &positives)?,
        ))
    };
    let (features, labels) = draw(spec.images, &mut rng)?;
    let test = match spec.test_images {
        0 => None,
        n => Some(draw(n, &mut rng)?),
    };

    Ok(SynthData {
        spec: spec.clone(),
        classes,
        prototypes: Matrix::from_rows(&protos)?.rounded_to_f32(),
        embeddings: Matrix::from_rows(&embeddings)?.rounded_to_f32(),
        features,
        labels,
        test,
    })
}

pub const CLASSES_FILE: &str = "classes.txt";
pub const FEATURES_FILE: &str = "features.bin";
pub const LABELS_FILE: &str = "labels.bin";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const TEST_FEATURES_FILE: &str = "test_features.bin";
pub const TEST_LABELS_FILE: &str = "test_labels.bin";

impl SynthData {
    /// Writes the class list, the matrices and their sidecars into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let classes_path = dir.join(CLASSES_FILE);
        std::fs::write(&classes_path, self.classes.to_text()).map_err(|e| Error::io(classes_path, e))?;
        let hash = self.classes.sha256();
        let put = |name: &str, m: &Matrix, role: Role| -> Result<()> {
            let p = dir.join(name);
            dataio::write_matrix(m, Dtype::F32, &p)?;
            Sidecar::new(role, hash.clone()).write(&p)
        };
        let put_labels = |name: &str, l: &LabelMatrix| -> Result<()> {
            let p = dir.join(name);
            l.write(&p)?;
            Sidecar::new(Role::Labels, hash.clone()).write(&p)
        };
        put(FEATURES_FILE, self.features.matrix(), Role::Features)?;
        put_labels(LABELS_FILE, &self.labels)?;
        put(EMBEDDINGS_FILE, &self.embeddings, Role::Embeddings)?;
        if let Some((tf, tl)) = &self.test {
            put(TEST_FEATURES_FILE, tf.matrix(), Role::Features)?;
            put_labels(TEST_LABELS_FILE, tl)?;
        }
        Ok(())
    }

    /// Training config for ablations on this data: in-memory embeddings,
    /// seed and learning rate taken from the preset.
    pub fn config(&self, base_lr: f64) -> super::TrainConfig {
        super::TrainConfig {
            base_lr,
            seed: self.spec.seed,
            ..super::TrainConfig::new(
                FEATURES_FILE,
                LABELS_FILE,
                CLASSES_FILE,
                super::Init::Embeddings { path: EMBEDDINGS_FILE.into() },
            )
        }
    }

    pub fn dataset(&self, with_embeddings: bool) -> Result<super::Dataset> {
        super::Dataset::new(
            self.classes.clone(),
            self.features.clone(),
            self.labels.clone(),
            with_embeddings.then(|| self.embeddings.clone()),
            self.test.clone(),
        )
    }
}
