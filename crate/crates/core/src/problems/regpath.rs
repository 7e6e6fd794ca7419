//! Regularization selection for logistic regression.
//!
//! The upper level is the validation loss; the lower level is the
//! training loss plus an exponential ridge whose coefficients are the
//! upper-level variable:
//!
//! - per feature (binary labels): `1/2 sum_k e^{lambda_k} theta_k^2`
//! - per class (multiclass): `sum_c e^{lambda_c} ||theta_c||^2`

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::data::{self, Dataset};
use super::loss;
use crate::error::{invalid, Result};
use crate::model::BilevelProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Penalty {
    PerFeature,
    PerClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TabularSource {
    /// Gaussian-mixture data.
    Synthetic { dim: usize, classes: u8, separation: f64 },
    /// LIBSVM text file. Per-feature runs map labels `> 0` to `+1`;
    /// per-class runs map the distinct labels, in increasing order, to `0..C`.
    Libsvm { path: PathBuf, dims: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegPathSpec {
    pub seed: u64,
    pub penalty: Penalty,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub source: TabularSource,
}

impl Default for RegPathSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            penalty: Penalty::PerFeature,
            n_train: 1000,
            n_val: 500,
            n_test: 1000,
            source: TabularSource::Synthetic {
                dim: 20,
                classes: 2,
                separation: 2.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegPathLogReg {
    penalty: Penalty,
    classes: usize,
    p: usize,
    train: Dataset,
    val: Dataset,
    test: Dataset,
    max_sq_norm: f64,
}

fn sign(label: u8) -> f64 {
    if label == 1 {
        1.0
    } else {
        -1.0
    }
}

impl RegPathLogReg {
    /// Labels are class indices; the per-feature variant needs them in `{0, 1}`.
    pub fn new(penalty: Penalty, classes: usize, train: Dataset, val: Dataset, test: Dataset) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(invalid("training and validation sets must be non-empty"));
        }
        let p = train.dim();
        if p == 0 || val.dim() != p || (!test.is_empty() && test.dim() != p) {
            return Err(invalid("splits must share a positive feature dimension"));
        }
        let limit = match penalty {
            Penalty::PerFeature => 2,
            Penalty::PerClass => classes,
        };
        if classes < 2 || [&train, &val, &test].iter().any(|d| d.labels.iter().any(|&y| y as usize >= limit)) {
            return Err(invalid(format!("labels must lie in 0..{limit}")));
        }
        let max_sq_norm = train
            .features
            .iter()
            .map(|d| d.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        Ok(Self {
            penalty,
            classes,
            p,
            train,
            val,
            test,
            max_sq_norm,
        })
    }

    pub fn penalty(&self) -> Penalty {
        self.penalty
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn test_error(&self, theta: &[f64]) -> f64 {
        match self.penalty {
            Penalty::PerClass => loss::error_rate(theta, &self.test.features, &self.test.labels, self.classes),
            Penalty::PerFeature => {
                if self.test.is_empty() {
                    return 0.0;
                }
                let wrong = self
                    .test
                    .features
                    .iter()
                    .zip(&self.test.labels)
                    .filter(|(d, &y)| dot(theta, d) * sign(y) <= 0.0)
                    .count();
                wrong as f64 / self.test.len() as f64
            }
        }
    }

    fn data_grad(&self, set: &Dataset, i: usize, theta: &[f64], scale: f64, out: &mut [f64]) {
        let d = &set.features[i];
        match self.penalty {
            Penalty::PerFeature => {
                let s = sign(set.labels[i]);
                let w = scale * s * loss::logistic_d1(s * dot(theta, d));
                for (o, dk) in out.iter_mut().zip(d) {
                    *o += w * dk;
                }
            }
            Penalty::PerClass => {
                let r = loss::residual(theta, d, set.labels[i] as usize, self.classes);
                loss::outer_acc(&r, d, scale, out);
            }
        }
    }

    fn data_loss(&self, set: &Dataset, i: usize, theta: &[f64]) -> f64 {
        let d = &set.features[i];
        match self.penalty {
            Penalty::PerFeature => loss::logistic(sign(set.labels[i]) * dot(theta, d)),
            Penalty::PerClass => loss::cross_entropy(theta, d, set.labels[i] as usize, self.classes),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relabel(labels: &[f64], penalty: Penalty) -> Result<(Vec<u8>, usize)> {
    match penalty {
        Penalty::PerFeature => Ok((labels.iter().map(|&l| u8::from(l > 0.0)).collect(), 2)),
        Penalty::PerClass => {
            let mut distinct: Vec<f64> = labels.to_vec();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            if distinct.len() > u8::MAX as usize {
                return Err(invalid("too many distinct labels"));
            }
            let out = labels
                .iter()
                .map(|l| distinct.iter().position(|d| d == l).unwrap_or(0) as u8)
                .collect();
            Ok((out, distinct.len().max(2)))
        }
    }
}

pub fn make_regpath(spec: &RegPathSpec, data_root: Option<&std::path::Path>) -> Result<RegPathLogReg> {
    let total = spec.n_train + spec.n_val + spec.n_test;
    let (all, classes) = match &spec.source {
        TabularSource::Synthetic {
            dim,
            classes,
            separation,
        } => {
            if *dim == 0 || *classes < 2 {
                return Err(invalid("synthetic data needs dim >= 1 and at least two classes"));
            }
            if spec.penalty == Penalty::PerFeature && *classes != 2 {
                return Err(invalid("per-feature penalty needs binary labels"));
            }
            (data::synthetic_classes(spec.seed, total, *dim, *classes, *separation), *classes as usize)
        }
        TabularSource::Libsvm { path, dims } => {
            let path = match data_root {
                Some(root) if path.is_relative() => root.join(path),
                _ => path.clone(),
            };
            let sparse = data::load_libsvm(&path, *dims)?;
            if sparse.rows.len() < total {
                return Err(invalid(format!("need {total} samples, file has {}", sparse.rows.len())));
            }
            let (labels, classes) = relabel(&sparse.labels[..total], spec.penalty)?;
            let features = (0..total).map(|i| sparse.dense_row(i)).collect();
            (Dataset { features, labels }, classes)
        }
    };
    let (a, b) = (spec.n_train, spec.n_train + spec.n_val);
    RegPathLogReg::new(spec.penalty, classes, all.take(0..a), all.take(a..b), all.take(b..total))
}

impl BilevelProblem for RegPathLogReg {
    fn n(&self) -> usize {
        self.val.len()
    }
    fn m(&self) -> usize {
        self.train.len()
    }
    fn dim_x(&self) -> usize {
        match self.penalty {
            Penalty::PerFeature => self.p,
            Penalty::PerClass => self.classes,
        }
    }
    fn dim_y(&self) -> usize {
        match self.penalty {
            Penalty::PerFeature => self.p,
            Penalty::PerClass => self.classes * self.p,
        }
    }

    fn grad1_f(&self, _: usize, _: &[f64], _: &[f64], _: f64, _: &mut [f64]) {}

    fn grad2_f(&self, j: usize, _x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        self.data_grad(&self.val, j, y, scale, out);
    }

    fn grad2_g(&self, i: usize, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        self.data_grad(&self.train, i, y, scale, out);
        self.ridge_apply(x, y, scale, out);
    }

    fn hvp22_g(&self, i: usize, x: &[f64], y: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        let d = &self.train.features[i];
        match self.penalty {
            Penalty::PerFeature => {
                let s = sign(self.train.labels[i]);
                let w = scale * loss::logistic_d2(s * dot(y, d)) * dot(v, d);
                for (o, dk) in out.iter_mut().zip(d) {
                    *o += w * dk;
                }
            }
            Penalty::PerClass => {
                let coef = loss::ce_hessian_coef(y, v, d, self.classes);
                loss::outer_acc(&coef, d, scale, out);
            }
        }
        self.ridge_apply(x, v, scale, out);
    }

    fn jvp12_g(&self, _i: usize, x: &[f64], y: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        match self.penalty {
            Penalty::PerFeature => {
                for k in 0..self.p {
                    out[k] += scale * x[k].exp() * y[k] * v[k];
                }
            }
            Penalty::PerClass => {
                let p = self.p;
                for c in 0..self.classes {
                    let s = dot(&y[c * p..(c + 1) * p], &v[c * p..(c + 1) * p]);
                    out[c] += scale * 2.0 * x[c].exp() * s;
                }
            }
        }
    }

    fn value_f(&self, j: usize, _x: &[f64], y: &[f64]) -> f64 {
        self.data_loss(&self.val, j, y)
    }

    fn value_g(&self, i: usize, x: &[f64], y: &[f64]) -> f64 {
        let reg = match self.penalty {
            Penalty::PerFeature => 0.5 * x.iter().zip(y).map(|(l, t)| l.exp() * t * t).sum::<f64>(),
            Penalty::PerClass => {
                let p = self.p;
                (0..self.classes)
                    .map(|c| x[c].exp() * y[c * p..(c + 1) * p].iter().map(|t| t * t).sum::<f64>())
                    .sum()
            }
        };
        self.data_loss(&self.train, i, y) + reg
    }

    fn lower_curvature(&self, x: &[f64]) -> (f64, f64) {
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min).exp();
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max).exp();
        match self.penalty {
            Penalty::PerFeature => (lo, hi + 0.25 * self.max_sq_norm),
            Penalty::PerClass => (2.0 * lo, 2.0 * hi + 0.5 * self.max_sq_norm),
        }
    }

    fn test_metric(&self, _x: &[f64], y: &[f64]) -> Option<f64> {
        (!self.test.is_empty()).then(|| self.test_error(y))
    }
}

impl RegPathLogReg {
    /// Accumulates `scale * (d/d theta) ridge(lambda, theta)` applied to `v`.
    fn ridge_apply(&self, x: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        match self.penalty {
            Penalty::PerFeature => {
                for k in 0..self.p {
                    out[k] += scale * x[k].exp() * v[k];
                }
            }
            Penalty::PerClass => {
                let p = self.p;
                for c in 0..self.classes {
                    let w = scale * 2.0 * x[c].exp();
                    for k in c * p..(c + 1) * p {
                        out[k] += w * v[k];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(penalty: Penalty) -> RegPathLogReg {
        let classes = if penalty == Penalty::PerFeature { 2 } else { 4 };
        make_regpath(
            &RegPathSpec {
                penalty,
                n_train: 40,
                n_val: 20,
                n_test: 20,
                source: TabularSource::Synthetic {
                    dim: 6,
                    classes,
                    separation: 2.0,
                },
                ..Default::default()
            },
            None,
        )
        .unwrap()
    }

    #[test]
    fn zero_point_gradient_is_data_term() {
        let rp = small(Penalty::PerFeature);
        let x = vec![0.0; rp.dim_x()];
        let y = vec![0.0; rp.dim_y()];
        let mut g = vec![0.0; rp.dim_y()];
        rp.grad2_g(3, &x, &y, 1.0, &mut g);
        let s = sign(rp.train.labels[3]);
        for (gk, dk) in g.iter().zip(&rp.train.features[3]) {
            assert!((gk - (-0.5 * s * dk)).abs() < 1e-15);
        }
        assert!((rp.value_g(3, &x, &y) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn dimensions() {
        let rp = small(Penalty::PerClass);
        assert_eq!((rp.dim_x(), rp.dim_y()), (4, 24));
        let rp = small(Penalty::PerFeature);
        assert_eq!((rp.dim_x(), rp.dim_y()), (6, 6));
    }

    #[test]
    fn per_feature_needs_binary_labels() {
        let spec = RegPathSpec {
            source: TabularSource::Synthetic {
                dim: 3,
                classes: 3,
                separation: 1.0,
            },
            ..Default::default()
        };
        assert!(make_regpath(&spec, None).is_err());
    }

    #[test]
    fn libsvm_labels_relabelled() {
        let (l, c) = relabel(&[3.0, 1.0, 7.0, 3.0], Penalty::PerClass).unwrap();
        assert_eq!((l, c), (vec![1, 0, 2, 1], 3));
        let (l, _) = relabel(&[-1.0, 1.0], Penalty::PerFeature).unwrap();
        assert_eq!(l, vec![0, 1]);
    }
}
