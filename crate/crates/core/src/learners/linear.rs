use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_xy, dot, Matrix, Regressor};
use crate::concern::{sigmoid_score, WeightVector, GOLD_NORMALIZER};
use crate::error::{invalid, Result};
use crate::rng_from_seed;

/// `y = w·x + b`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub dim: usize,
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            w: vec![0.0; dim],
            b: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.len() != self.dim {
            return Err(invalid(format!(
                "linear model declares dim {} but has {} weights",
                self.dim,
                self.w.len()
            )));
        }
        Ok(())
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }
}

impl Regressor for LinearModel {
    fn predict_one(&self, x: &[f64]) -> f64 {
        self.decision(x)
    }
}

/// Least-squares fit in closed form.
///
/// Columns and target are centred, the centred system is solved through the
/// SVD of the design matrix (minimum-norm solution, so it also works when
/// there are more features than samples), and the intercept is recovered
/// from the means. When features outnumber samples the fit interpolates.
pub fn linreg_fit(x: &Matrix, y: &[f64]) -> Result<LinearModel> {
    let mut models = linreg_fit_multi(x, &[y.to_vec()])?;
    Ok(models.remove(0))
}

/// [`linreg_fit`] for several targets over one design, sharing the SVD.
pub fn linreg_fit_multi(x: &Matrix, targets: &[Vec<f64>]) -> Result<Vec<LinearModel>> {
    for y in targets {
        check_xy(x, y.len())?;
    }
    let (n, d, k) = (x.rows(), x.cols(), targets.len());
    let mut x_mean = vec![0.0; d];
    for row in x.iter_rows() {
        for (m, v) in x_mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    x_mean.iter_mut().for_each(|m| *m /= n as f64);
    let y_means: Vec<f64> = targets.iter().map(|y| y.iter().sum::<f64>() / n as f64).collect();

    let centred = DMatrix::from_fn(n, d, |i, j| x.row(i)[j] - x_mean[j]);
    let rhs = DMatrix::from_fn(n, k, |i, t| targets[t][i] - y_means[t]);

    let svd = centred.svd(true, true);
    let max_sv = svd.singular_values.max();
    let w = if max_sv == 0.0 {
        DMatrix::zeros(d, k)
    } else {
        let tol = max_sv * n.max(d) as f64 * f64::EPSILON;
        svd.solve(&rhs, tol)
            .map_err(|e| invalid(format!("least squares solve failed: {e}")))?
    };
    Ok((0..k)
        .map(|t| {
            let w: Vec<f64> = w.column(t).iter().copied().collect();
            let b = y_means[t] - dot(&w, &x_mean);
            LinearModel { dim: d, w, b }
        })
        .collect())
}

/// How five per-trait predictions become one concern score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraitCombiner {
    /// `sigmoid(Σ v_i·y_i)`
    Sigmoid,
    /// `(1/125)·Σ v_i·y_i`, clamped to [0, 1]
    GoldLinear,
}

/// Five independent least-squares models, one per trait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitLinearModels {
    pub models: Vec<LinearModel>,
    pub weights: WeightVector,
    pub combiner: TraitCombiner,
}

impl TraitLinearModels {
    pub fn fit(
        x: &Matrix,
        traits: &[[f64; 5]],
        weights: WeightVector,
        combiner: TraitCombiner,
    ) -> Result<Self> {
        check_xy(x, traits.len())?;
        let targets: Vec<Vec<f64>> = (0..5).map(|t| traits.iter().map(|s| s[t]).collect()).collect();
        let models = linreg_fit_multi(x, &targets)?;
        Ok(Self {
            models,
            weights,
            combiner,
        })
    }

    pub fn predict_traits(&self, x: &[f64]) -> [f64; 5] {
        let mut out = [0.0; 5];
        for (o, m) in out.iter_mut().zip(&self.models) {
            *o = m.decision(x);
        }
        out
    }
}

impl Regressor for TraitLinearModels {
    fn predict_one(&self, x: &[f64]) -> f64 {
        let y = self.predict_traits(x);
        match self.combiner {
            TraitCombiner::Sigmoid => sigmoid_score(&y, &self.weights).map_or(f64::NAN, |s| s.value()),
            TraitCombiner::GoldLinear => (self.weights.dot(&y) / GOLD_NORMALIZER).clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrConfig {
    /// Half-width of the insensitive tube.
    pub epsilon: f64,
    /// L2 penalty `λ/2·‖w‖²`.
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SvrConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            lambda: 1e-4,
            epochs: 200,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

fn svr_objective(model: &LinearModel, x: &Matrix, y: &[f64], cfg: &SvrConfig) -> f64 {
    let loss: f64 = x
        .iter_rows()
        .zip(y)
        .map(|(r, t)| ((model.decision(r) - t).abs() - cfg.epsilon).max(0.0))
        .sum::<f64>()
        / y.len() as f64;
    loss + 0.5 * cfg.lambda * dot(&model.w, &model.w)
}

/// Linear support-vector regression by stochastic subgradient descent on
/// the ε-insensitive loss plus an L2 penalty on the weights.
///
/// The step size decays as `η₀/√t`; the iterate with the lowest objective
/// seen at an epoch boundary is returned.
pub fn svr_fit(x: &Matrix, y: &[f64], cfg: &SvrConfig) -> Result<LinearModel> {
    check_xy(x, y.len())?;
    if !(cfg.epsilon >= 0.0 && cfg.lambda >= 0.0 && cfg.learning_rate > 0.0) || cfg.epochs == 0 {
        return Err(invalid("svr needs epsilon >= 0, lambda >= 0, learning_rate > 0, epochs > 0"));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let mut model = LinearModel::zeros(x.cols());
    model.b = y.iter().sum::<f64>() / y.len() as f64;
    let mut best = model.clone();
    let mut best_obj = svr_objective(&model, x, y, cfg);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut t = 0usize;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = cfg.learning_rate / (t as f64).sqrt();
            let row = x.row(i);
            let residual = model.decision(row) - y[i];
            if cfg.lambda > 0.0 {
                let shrink = 1.0 - eta * cfg.lambda;
                model.w.iter_mut().for_each(|w| *w *= shrink);
            }
            if residual.abs() > cfg.epsilon {
                let g = residual.signum();
                for (w, v) in model.w.iter_mut().zip(row) {
                    *w -= eta * g * v;
                }
                model.b -= eta * g;
            }
        }
        let obj = svr_objective(&model, x, y, cfg);
        if !obj.is_finite() {
            return Err(crate::Error::Diverged(format!("svr objective became {obj}")));
        }
        if obj < best_obj {
            best_obj = obj;
            best = model.clone();
        }
    }
    Ok(best)
}
