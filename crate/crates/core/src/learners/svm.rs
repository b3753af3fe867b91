use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_xy, classes_of, dot, Classifier, LinearModel, Matrix};
use crate::error::{invalid, Result};
use crate::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// Regularization strength of the Pegasos objective `λ/2·‖w‖² + mean hinge`.
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            epochs: 30,
            seed: 0,
        }
    }
}

/// One-vs-rest linear SVM. Ties in the decision go to the lowest class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub classes: Vec<usize>,
    pub models: Vec<LinearModel>,
}

impl LinearSvm {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() != self.models.len() || self.classes.len() < 2 {
            return Err(invalid("svm needs one model per class and at least two classes"));
        }
        let dim = self.models[0].dim;
        for m in &self.models {
            m.validate()?;
            if m.dim != dim {
                return Err(invalid("svm models disagree on dimension"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.models[0].dim
    }

    pub fn decisions(&self, x: &[f64]) -> Vec<f64> {
        self.models.iter().map(|m| m.decision(x)).collect()
    }
}

impl Classifier for LinearSvm {
    fn predict_class(&self, x: &[f64]) -> usize {
        let scores = self.decisions(x);
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = i;
            }
        }
        self.classes[best]
    }
}

/// Pegasos on one binary problem. The bias is an extra always-one feature,
/// so it is regularized with the weights. `w = scale · v` keeps the
/// per-step shrink O(1).
fn pegasos(x: &Matrix, y: &[f64], cfg: &SvmConfig) -> LinearModel {
    let d = x.cols();
    let mut v = vec![0.0; d];
    let mut v_bias = 0.0;
    let mut scale = 1.0f64;
    let mut rng = rng_from_seed(cfg.seed);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut t = 0usize;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (cfg.lambda * t as f64);
            let row = x.row(i);
            let margin = y[i] * scale * (dot(&v, row) + v_bias);
            let shrink = 1.0 - eta * cfg.lambda;
            if shrink <= 0.0 {
                // First step: w is reset to zero before the hinge update.
                v.iter_mut().for_each(|c| *c = 0.0);
                v_bias = 0.0;
                scale = 1.0;
            } else {
                scale *= shrink;
            }
            if margin < 1.0 {
                let step = eta * y[i] / scale;
                for (c, xv) in v.iter_mut().zip(row) {
                    if *xv != 0.0 {
                        *c += step * xv;
                    }
                }
                v_bias += step;
            }
            if scale < 1e-9 {
                v.iter_mut().for_each(|c| *c *= scale);
                v_bias *= scale;
                scale = 1.0;
            }
        }
    }
    LinearModel {
        dim: d,
        w: v.iter().map(|c| c * scale).collect(),
        b: v_bias * scale,
    }
}

/// Hinge-loss linear SVM trained one-vs-rest by stochastic subgradient
/// descent (Pegasos).
pub fn svm_fit(x: &Matrix, labels: &[usize], cfg: &SvmConfig) -> Result<LinearSvm> {
    check_xy(x, labels.len())?;
    if !(cfg.lambda > 0.0) || cfg.epochs == 0 {
        return Err(invalid("svm needs lambda > 0 and epochs > 0"));
    }
    let classes = classes_of(labels)?;
    let models = classes
        .iter()
        .map(|&c| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
            pegasos(x, &y, cfg)
        })
        .collect();
    Ok(LinearSvm { classes, models })
}
