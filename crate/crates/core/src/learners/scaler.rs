use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{invalid, Result};

/// Scales each column by its largest absolute training value, so zeros stay
/// zero and sparse count columns land in [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxAbsScaler {
    scale: Vec<f64>,
}

impl MaxAbsScaler {
    pub fn fit(x: &Matrix) -> Self {
        let mut scale = vec![0.0f64; x.cols()];
        for row in x.iter_rows() {
            for (s, v) in scale.iter_mut().zip(row) {
                *s = s.max(v.abs());
            }
        }
        // Columns never seen nonzero pass through unchanged.
        for s in &mut scale {
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        Self { scale }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn transform_row(&self, row: &mut [f64]) -> Result<()> {
        if row.len() != self.scale.len() {
            return Err(invalid(format!(
                "row has {} features, scaler expects {}",
                row.len(),
                self.scale.len()
            )));
        }
        for (v, s) in row.iter_mut().zip(&self.scale) {
            *v /= s;
        }
        Ok(())
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.clone();
        for i in 0..out.rows() {
            self.transform_row(out.row_mut(i))?;
        }
        Ok(out)
    }
}
