//! From-scratch models and their evaluation: least-squares and ε-insensitive
//! linear regression, one-vs-rest linear SVM, Gaussian naive Bayes, a
//! one-hidden-layer perceptron trained with Adam, SMOTE oversampling, k-fold
//! splitting and the regression/classification metrics.

mod linear;
mod metrics;
mod mlp;
mod nb;
mod persist;
mod scaler;
mod smote;
mod split;
mod svm;

pub use linear::{linreg_fit, linreg_fit_multi, svr_fit, LinearModel, SvrConfig, TraitCombiner, TraitLinearModels};
pub use metrics::{accuracy, evs, majority_accuracy, rmse};
pub use mlp::{
    mlp_backward, mlp_forward, mlp_train, mlp_train_logged, Activation, MlpGradients, MlpParams, TrainConfig,
    MLP_OUTPUTS,
};
pub use nb::{nb_fit, NaiveBayes, DEFAULT_VAR_SMOOTHING};
pub use persist::SavedModel;
pub use scaler::MaxAbsScaler;
pub use smote::{smote, SmoteResult, SyntheticOrigin};
pub use split::{kfold_split, train_test_split};
pub use svm::{svm_fit, LinearSvm, SvmConfig};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Dense row-major matrix of samples × features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(invalid(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != cols) {
            return Err(invalid(format!("ragged rows: {} vs {cols} columns", r.len())));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if self.rows > 0 && row.len() != self.cols {
            return Err(invalid(format!(
                "row of {} values does not fit {} columns",
                row.len(),
                self.cols
            )));
        }
        if self.rows == 0 {
            self.cols = row.len();
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }
}

pub trait Regressor {
    fn predict_one(&self, x: &[f64]) -> f64;

    fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.iter_rows().map(|r| self.predict_one(r)).collect()
    }
}

pub trait Classifier {
    fn predict_class(&self, x: &[f64]) -> usize;

    fn predict(&self, x: &Matrix) -> Vec<usize> {
        x.iter_rows().map(|r| self.predict_class(r)).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_xy(x: &Matrix, n_targets: usize) -> Result<()> {
    if x.rows() == 0 {
        return Err(invalid("no training samples"));
    }
    if x.rows() != n_targets {
        return Err(invalid(format!(
            "{} samples but {n_targets} targets",
            x.rows()
        )));
    }
    Ok(())
}

/// Sorted distinct class indices; at least two are required.
pub(crate) fn classes_of(labels: &[usize]) -> Result<Vec<usize>> {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(invalid("need at least two classes"));
    }
    Ok(classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_basics() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 2));
        assert_eq!(m.row(1), [3.0, 4.0]);
        assert_eq!(m.select_rows(&[2, 0]).data(), [5.0, 6.0, 1.0, 2.0]);
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
    }
}
