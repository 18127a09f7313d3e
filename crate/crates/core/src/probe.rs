//! Linear FG/BG probe on exported patches.
//!
//! L2-regularized logistic regression trained by full-batch gradient
//! descent on z-scored features (mean and spread taken from the training
//! split). The split is stratified per class and driven by a seeded
//! ChaCha stream, so a report depends only on the data and the seed.

use std::path::{Path, PathBuf};

use image::ImageReader;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{embed_image, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::export::LABELS_FILE;
use crate::scalar::Scalar;

/// Fewest patches per class accepted as input.
pub const MIN_PER_CLASS: usize = 20;
/// Fewest held-out samples per class for the accuracy to mean anything.
pub const MIN_TEST_PER_CLASS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams {
    /// Fraction of each class used for training.
    pub split_ratio: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    /// Permute the labels before splitting (chance-level control).
    pub shuffle_labels: bool,
    /// Evaluate on the training split itself.
    pub test_on_train: bool,
    pub embedding_dim: usize,
}

impl Default for ProbeParams {
    fn default() -> Self {
        ProbeParams {
            split_ratio: 0.8,
            epochs: 200,
            learning_rate: 0.1,
            l2: 1e-4,
            seed: 0,
            shuffle_labels: false,
            test_on_train: false,
            embedding_dim: DEFAULT_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Regularized training loss after each epoch.
    pub losses: Vec<f64>,
}

impl ProbeReport {
    pub fn summary(&self) -> String {
        format!(
            "accuracy={:.4} train_accuracy={:.4} n_train={} n_test={} final_loss={:.6}",
            self.accuracy,
            self.train_accuracy,
            self.n_train,
            self.n_test,
            self.losses.last().copied().unwrap_or(f64::NAN)
        )
    }
}

/// A fitted linear classifier `sigmoid(w·x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> LogisticModel<T> {
    pub fn logit(&self, x: &[T]) -> T {
        self.weights.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>() + self.bias
    }

    pub fn predict(&self, x: &[T]) -> bool {
        self.logit(x) > T::zero()
    }
}

/// log(1 + e^z) without overflow.
fn softplus<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Mean logistic loss plus `l2/2·|w|²` (the bias is not penalized).
pub fn logistic_loss<T: Scalar>(model: &LogisticModel<T>, x: &[Vec<T>], y: &[bool], l2: f64) -> T {
    let n = T::of(x.len() as f64);
    let data: T = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let z = model.logit(xi);
            softplus(if yi { -z } else { z })
        })
        .sum::<T>()
        / n;
    let reg: T = model.weights.iter().map(|&w| w * w).sum();
    data + T::of(l2 / 2.0) * reg
}

/// Full-batch gradient descent from zero weights. Returns the model and the
/// loss after every epoch.
pub fn train_logistic<T: Scalar>(
    x: &[Vec<T>],
    y: &[bool],
    epochs: usize,
    learning_rate: f64,
    l2: f64,
) -> Result<(LogisticModel<T>, Vec<f64>)> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InsufficientData(format!(
            "{} samples for {} labels",
            x.len(),
            y.len()
        )));
    }
    let dim = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != dim) {
        return Err(Error::EmbeddingLength(dim, bad.len()));
    }
    let n = T::of(x.len() as f64);
    let (lr, lambda) = (T::of(learning_rate), T::of(l2));
    let mut model = LogisticModel {
        weights: vec![T::zero(); dim],
        bias: T::zero(),
    };
    let mut losses = Vec::with_capacity(epochs);
    let mut grad = vec![T::zero(); dim];
    for _ in 0..epochs {
        grad.iter_mut().for_each(|g| *g = T::zero());
        let mut grad_b = T::zero();
        for (xi, &yi) in x.iter().zip(y) {
            let target = if yi { T::one() } else { T::zero() };
            let r = sigmoid(model.logit(xi)) - target;
            for (g, &v) in grad.iter_mut().zip(xi) {
                *g = *g + r * v;
            }
            grad_b = grad_b + r;
        }
        for (w, &g) in model.weights.iter_mut().zip(&grad) {
            *w = *w - lr * (g / n + lambda * *w);
        }
        model.bias = model.bias - lr * grad_b / n;
        losses.push(logistic_loss(&model, x, y, l2).to_f64_lossy());
    }
    Ok((model, losses))
}

fn accuracy<T: Scalar>(model: &LogisticModel<T>, x: &[Vec<T>], y: &[bool]) -> f64 {
    let right = x.iter().zip(y).filter(|(xi, &yi)| model.predict(xi) == yi).count();
    right as f64 / x.len() as f64
}

/// Per-feature mean and standard deviation of a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(x: &[Vec<T>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = T::of(x.len().max(1) as f64);
        let mean: Vec<T> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<T>() / n).collect();
        let std = (0..d)
            .map(|j| {
                let var = x.iter().map(|r| (r[j] - mean[j]) * (r[j] - mean[j])).sum::<T>() / n;
                var.sqrt()
            })
            .collect();
        Standardizer { mean, std }
    }

    /// Constant features map to zero.
    pub fn apply(&self, row: &[T]) -> Vec<T> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| if s > T::of(1e-12) { (v - m) / s } else { T::zero() })
            .collect()
    }
}

/// Stratified split: per class, a seeded shuffle of its indices with the
/// first `round(ratio·n)` going to training. Both halves come back sorted.
pub fn stratified_split(labels: &[bool], ratio: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        let cut = (idx.len() as f64 * ratio).round() as usize;
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Trains on a stratified split of `(features, labels)` and reports held-out
/// accuracy. `true` is the foreground class.
pub fn linear_probe<T: Scalar>(features: &[Vec<T>], labels: &[bool], params: &ProbeParams) -> Result<ProbeReport> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let fg = labels.iter().filter(|&&l| l).count();
    let bg = labels.len() - fg;
    if fg.min(bg) < MIN_PER_CLASS {
        return Err(Error::InsufficientData(format!(
            "need at least {MIN_PER_CLASS} patches per class, got {fg} FG and {bg} BG"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut labels = labels.to_vec();
    if params.shuffle_labels {
        labels.shuffle(&mut rng);
    }
    let (train, held_out) = stratified_split(&labels, params.split_ratio, &mut rng);
    let test = if params.test_on_train { train.clone() } else { held_out };
    for class in [true, false] {
        let n = test.iter().filter(|&&i| labels[i] == class).count();
        if n < MIN_TEST_PER_CLASS {
            return Err(Error::InsufficientData(format!(
                "{} test samples for class {}, need {MIN_TEST_PER_CLASS}",
                n,
                if class { "FG" } else { "BG" }
            )));
        }
    }

    let pick = |idx: &[usize]| -> (Vec<Vec<T>>, Vec<bool>) {
        (
            idx.iter().map(|&i| features[i].clone()).collect(),
            idx.iter().map(|&i| labels[i]).collect(),
        )
    };
    let (xtr, ytr) = pick(&train);
    let (xte, yte) = pick(&test);
    let z = Standardizer::fit(&xtr);
    let xtr: Vec<Vec<T>> = xtr.iter().map(|r| z.apply(r)).collect();
    let xte: Vec<Vec<T>> = xte.iter().map(|r| z.apply(r)).collect();
    let (model, losses) = train_logistic(&xtr, &ytr, params.epochs, params.learning_rate, params.l2)?;
    Ok(ProbeReport {
        accuracy: accuracy(&model, &xte, &yte),
        train_accuracy: accuracy(&model, &xtr, &ytr),
        n_train: xtr.len(),
        n_test: xte.len(),
        losses,
    })
}

/// Entries of a dataset's label file, paths resolved against `dir`.
pub fn read_labels(dir: &Path) -> Result<Vec<(PathBuf, bool)>> {
    let path = dir.join(LABELS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let malformed = |n: usize, reason: &str| Error::Malformed {
        kind: "labels",
        path: path.clone(),
        reason: format!("line {n}: {reason}"),
    };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() {
            continue;
        }
        let (file, label) = line
            .rsplit_once(' ')
            .ok_or_else(|| malformed(n, "expected `path label`"))?;
        let fg = match label {
            "1" => true,
            "0" => false,
            other => return Err(malformed(n, &format!("label {other:?} is not 0 or 1"))),
        };
        out.push((dir.join(file), fg));
    }
    Ok(out)
}

/// Embeds every patch listed in `dir`'s label file.
pub fn load_dataset<T: Scalar>(dir: &Path, dim: usize) -> Result<(Vec<Vec<T>>, Vec<bool>)> {
    let entries = read_labels(dir)?;
    let mut features = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    for (path, fg) in entries {
        let img = ImageReader::open(&path)
            .map_err(|e| Error::io(&path, e))?
            .decode()
            .map_err(|e| Error::FrameRead {
                path: path.clone(),
                reason: e.to_string(),
            })?
            .to_rgb8();
        features.push(embed_image::<T>(&img, dim)?.values().to_vec());
        labels.push(fg);
    }
    Ok((features, labels))
}

/// [`linear_probe`] on an exported dataset directory.
pub fn probe_dataset<T: Scalar>(dir: &Path, params: &ProbeParams) -> Result<ProbeReport> {
    let (features, labels) = load_dataset::<T>(dir, params.embedding_dim)?;
    linear_probe(&features, &labels, params)
}
