use serde::{Deserialize, Serialize};

use super::{check_xy, classes_of, Classifier, Matrix};
use crate::error::{invalid, Result};

/// Gaussian naive Bayes.
///
/// Per-class variances get `var_smoothing × (largest feature variance)`
/// added, plus a tiny absolute floor so constant features stay finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayes {
    pub dim: usize,
    pub classes: Vec<usize>,
    pub log_priors: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

pub const DEFAULT_VAR_SMOOTHING: f64 = 1e-9;
const ABSOLUTE_VAR_FLOOR: f64 = 1e-12;

pub fn nb_fit(x: &Matrix, labels: &[usize], var_smoothing: f64) -> Result<NaiveBayes> {
    check_xy(x, labels.len())?;
    if !(var_smoothing >= 0.0) {
        return Err(invalid("var_smoothing must be nonnegative"));
    }
    let classes = classes_of(labels)?;
    let d = x.cols();
    let n = x.rows() as f64;

    let mut overall_mean = vec![0.0; d];
    for row in x.iter_rows() {
        for (m, v) in overall_mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut max_var = 0.0f64;
    for j in 0..d {
        let var = x.iter_rows().map(|r| (r[j] - overall_mean[j]).powi(2)).sum::<f64>() / n;
        max_var = max_var.max(var);
    }
    let floor = var_smoothing * max_var + ABSOLUTE_VAR_FLOOR;

    let mut log_priors = Vec::new();
    let mut means = Vec::new();
    let mut variances = Vec::new();
    for &c in &classes {
        let members: Vec<&[f64]> = x
            .iter_rows()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .map(|(r, _)| r)
            .collect();
        let m = members.len() as f64;
        let mut mean = vec![0.0; d];
        for r in &members {
            for (s, v) in mean.iter_mut().zip(*r) {
                *s += v / m;
            }
        }
        let mut var = vec![floor; d];
        for r in &members {
            for ((s, v), mu) in var.iter_mut().zip(*r).zip(&mean) {
                *s += (v - mu).powi(2) / m;
            }
        }
        log_priors.push((m / n).ln());
        means.push(mean);
        variances.push(var);
    }
    Ok(NaiveBayes {
        dim: d,
        classes,
        log_priors,
        means,
        variances,
    })
}

impl NaiveBayes {
    pub fn validate(&self) -> Result<()> {
        let k = self.classes.len();
        if k < 2 || self.log_priors.len() != k || self.means.len() != k || self.variances.len() != k {
            return Err(invalid("naive bayes class arrays disagree"));
        }
        if self
            .means
            .iter()
            .chain(&self.variances)
            .any(|v| v.len() != self.dim)
        {
            return Err(invalid("naive bayes parameter width does not match dim"));
        }
        if self.variances.iter().flatten().any(|v| !(*v > 0.0)) {
            return Err(invalid("naive bayes variances must be positive"));
        }
        Ok(())
    }

    pub fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes.len())
            .map(|c| {
                let ll: f64 = x
                    .iter()
                    .zip(&self.means[c])
                    .zip(&self.variances[c])
                    .map(|((v, mu), var)| {
                        -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (v - mu).powi(2) / var)
                    })
                    .sum();
                self.log_priors[c] + ll
            })
            .collect()
    }
}

impl Classifier for NaiveBayes {
    fn predict_class(&self, x: &[f64]) -> usize {
        let scores = self.log_joint(x);
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = i;
            }
        }
        self.classes[best]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::accuracy;
    use crate::rng_from_seed;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn separated_blobs() {
        // Unit-variance blobs 6σ apart: Bayes error ≈ Φ(-3) ≈ 0.0013.
        let mut rng = rng_from_seed(21);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut sample = |centre: f64, n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| vec![centre + noise.sample(&mut rng), centre + noise.sample(&mut rng)])
                .collect()
        };
        let (a, b) = (sample(-3.0 / 2f64.sqrt(), 200), sample(3.0 / 2f64.sqrt(), 200));
        let train: Vec<Vec<f64>> = a[..100].iter().chain(&b[..100]).cloned().collect();
        let test: Vec<Vec<f64>> = a[100..].iter().chain(&b[100..]).cloned().collect();
        let labels: Vec<usize> = [0; 100].iter().chain(&[1; 100]).copied().collect();
        let m = nb_fit(&Matrix::from_rows(&train).unwrap(), &labels, DEFAULT_VAR_SMOOTHING).unwrap();
        let acc = accuracy(&labels, &m.predict(&Matrix::from_rows(&test).unwrap())).unwrap();
        assert!(acc > 0.95, "accuracy {acc}");
    }

    #[test]
    fn constant_features_stay_finite() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 5.0], vec![1.0, 6.0]]).unwrap();
        let m = nb_fit(&x, &[0, 0, 1, 1], DEFAULT_VAR_SMOOTHING).unwrap();
        m.validate().unwrap();
        assert!(m.log_joint(&[1.0, 0.5]).iter().all(|v| v.is_finite()));
        assert_eq!(m.predict_class(&[1.0, 0.5]), 0);
        assert_eq!(m.predict_class(&[1.0, 5.5]), 1);
    }

    #[test]
    fn single_class_rejected() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(nb_fit(&x, &[1, 1], DEFAULT_VAR_SMOOTHING).is_err());
    }
}
