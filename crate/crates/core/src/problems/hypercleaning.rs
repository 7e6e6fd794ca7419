//! Data hyper-cleaning: learn one weight per training sample so that a
//! classifier trained on the reweighted, partly corrupted training set
//! does well on a clean validation set.
//!
//! Upper level: `f(lambda, theta) = (1/n) sum_j CE(theta d_j^val, y_j^val)`.
//! Lower level: `g(lambda, theta) = (1/m) sum_i sigma(lambda_i) CE(theta d_i, y_i) + C_r ||theta||^2`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::data::{self, Dataset, IdxData};
use super::loss;
use crate::error::{invalid, Result};
use crate::model::BilevelProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DigitSource {
    /// Built-in generator of `side x side` digit-like images.
    Synthetic { side: usize },
    /// IDX image and label files; paths may be relative to the dataset root.
    Idx { images: PathBuf, labels: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperCleaningSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub p_tilde: f64,
    pub c_r: f64,
    pub source: DigitSource,
}

impl Default for HyperCleaningSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 1000,
            n_val: 500,
            n_test: 1000,
            p_tilde: 0.5,
            c_r: 0.2,
            source: DigitSource::Synthetic { side: 8 },
        }
    }
}

pub const CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct HyperCleaning {
    train: Vec<Vec<f64>>,
    train_labels: Vec<u8>,
    flags: Vec<bool>,
    val: Vec<Vec<f64>>,
    val_labels: Vec<u8>,
    test: Vec<Vec<f64>>,
    test_labels: Vec<u8>,
    c_r: f64,
    /// Feature dimension including the bias column.
    p: usize,
    max_sq_norm: f64,
}

impl HyperCleaning {
    /// Builds the problem from clean splits, corrupting the training labels.
    pub fn new(train: &Dataset, val: &Dataset, test: &Dataset, p_tilde: f64, c_r: f64, seed: u64) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(invalid("training and validation sets must be non-empty"));
        }
        if !(c_r > 0.0 && c_r.is_finite()) {
            return Err(invalid(format!("ridge weight must be positive, got {c_r}")));
        }
        let dim = train.dim();
        if val.dim() != dim || (!test.is_empty() && test.dim() != dim) {
            return Err(invalid("splits have different feature dimensions"));
        }
        if [train, val, test].iter().any(|d| d.labels.iter().any(|&y| y as usize >= CLASSES)) {
            return Err(invalid("labels must lie in 0..10"));
        }
        let (train_labels, flags) = data::corrupt_labels(&train.labels, p_tilde, CLASSES as u8, seed)?;
        let train_b = loss::with_bias(&train.features);
        let max_sq_norm = train_b
            .iter()
            .map(|d| d.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        Ok(Self {
            train: train_b,
            train_labels,
            flags,
            val: loss::with_bias(&val.features),
            val_labels: val.labels.clone(),
            test: loss::with_bias(&test.features),
            test_labels: test.labels.clone(),
            c_r,
            p: dim + 1,
            max_sq_norm,
        })
    }

    pub fn corruption_flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn train_labels(&self) -> &[u8] {
        &self.train_labels
    }

    pub fn ridge(&self) -> f64 {
        self.c_r
    }

    pub fn test_error(&self, theta: &[f64]) -> f64 {
        loss::error_rate(theta, &self.test, &self.test_labels, CLASSES)
    }

    /// Mean `sigma(lambda_i)` over corrupted and clean training samples.
    pub fn weight_split(&self, lambda: &[f64]) -> (f64, f64) {
        let (mut sc, mut nc, mut sk, mut nk) = (0.0, 0usize, 0.0, 0usize);
        for (&l, &f) in lambda.iter().zip(&self.flags) {
            if f {
                sc += loss::sigmoid(l);
                nc += 1;
            } else {
                sk += loss::sigmoid(l);
                nk += 1;
            }
        }
        (sc / nc.max(1) as f64, sk / nk.max(1) as f64)
    }
}

pub fn make_hypercleaning(spec: &HyperCleaningSpec, data_root: Option<&std::path::Path>) -> Result<HyperCleaning> {
    let total = spec.n_train + spec.n_val + spec.n_test;
    let all = match &spec.source {
        DigitSource::Synthetic { side } => {
            if *side == 0 {
                return Err(invalid("synthetic digit side must be positive"));
            }
            data::synthetic_digits(spec.seed, total, *side)
        }
        DigitSource::Idx { images, labels } => {
            let resolve = |p: &PathBuf| match data_root {
                Some(root) if p.is_relative() => root.join(p),
                _ => p.clone(),
            };
            let features = match data::load_idx(&resolve(images))? {
                IdxData::Images { pixels, .. } => pixels,
                IdxData::Labels(_) => return Err(invalid("image file holds labels")),
            };
            let labels = match data::load_idx(&resolve(labels))? {
                IdxData::Labels(l) => l,
                IdxData::Images { .. } => return Err(invalid("label file holds images")),
            };
            if features.len() != labels.len() {
                return Err(invalid("image and label counts differ"));
            }
            if features.len() < total {
                return Err(invalid(format!("need {total} samples, file has {}", features.len())));
            }
            Dataset { features, labels }
        }
    };
    let (a, b) = (spec.n_train, spec.n_train + spec.n_val);
    HyperCleaning::new(&all.take(0..a), &all.take(a..b), &all.take(b..total), spec.p_tilde, spec.c_r, spec.seed)
}

impl BilevelProblem for HyperCleaning {
    fn n(&self) -> usize {
        self.val.len()
    }
    fn m(&self) -> usize {
        self.train.len()
    }
    fn dim_x(&self) -> usize {
        self.train.len()
    }
    fn dim_y(&self) -> usize {
        CLASSES * self.p
    }

    fn grad1_f(&self, _: usize, _: &[f64], _: &[f64], _: f64, _: &mut [f64]) {}

    fn grad2_f(&self, j: usize, _x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        let d = &self.val[j];
        let r = loss::residual(y, d, self.val_labels[j] as usize, CLASSES);
        loss::outer_acc(&r, d, scale, out);
    }

    fn grad2_g(&self, i: usize, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        let d = &self.train[i];
        let r = loss::residual(y, d, self.train_labels[i] as usize, CLASSES);
        loss::outer_acc(&r, d, scale * loss::sigmoid(x[i]), out);
        let w = 2.0 * self.c_r * scale;
        for (o, t) in out.iter_mut().zip(y) {
            *o += w * t;
        }
    }

    fn hvp22_g(&self, i: usize, x: &[f64], y: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        let d = &self.train[i];
        let coef = loss::ce_hessian_coef(y, v, d, CLASSES);
        loss::outer_acc(&coef, d, scale * loss::sigmoid(x[i]), out);
        let w = 2.0 * self.c_r * scale;
        for (o, t) in out.iter_mut().zip(v) {
            *o += w * t;
        }
    }

    fn jvp12_g(&self, i: usize, x: &[f64], y: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        let d = &self.train[i];
        let r = loss::residual(y, d, self.train_labels[i] as usize, CLASSES);
        let mut s = 0.0;
        for (c, &rc) in r.iter().enumerate() {
            let row = &v[c * self.p..(c + 1) * self.p];
            s += rc * row.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
        }
        let sg = loss::sigmoid(x[i]);
        out[i] += scale * sg * (1.0 - sg) * s;
    }

    fn value_f(&self, j: usize, _x: &[f64], y: &[f64]) -> f64 {
        loss::cross_entropy(y, &self.val[j], self.val_labels[j] as usize, CLASSES)
    }

    fn value_g(&self, i: usize, x: &[f64], y: &[f64]) -> f64 {
        let ce = loss::cross_entropy(y, &self.train[i], self.train_labels[i] as usize, CLASSES);
        loss::sigmoid(x[i]) * ce + self.c_r * y.iter().map(|t| t * t).sum::<f64>()
    }

    /// The softmax Hessian has norm at most 1/2 and `sigma <= 1`.
    fn lower_curvature(&self, _x: &[f64]) -> (f64, f64) {
        let mu = 2.0 * self.c_r;
        (mu, mu + 0.5 * self.max_sq_norm)
    }

    fn test_metric(&self, _x: &[f64], y: &[f64]) -> Option<f64> {
        (!self.test.is_empty()).then(|| self.test_error(y))
    }
}
