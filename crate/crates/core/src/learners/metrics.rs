use crate::error::{invalid, Result};

fn check_lengths(n: usize, m: usize, min: usize) -> Result<()> {
    if n != m {
        return Err(invalid(format!("length mismatch: {n} vs {m}")));
    }
    if n < min {
        return Err(invalid(format!("need at least {min} values, got {n}")));
    }
    Ok(())
}

/// Root mean square error.
pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y.len(), y_hat.len(), 1)?;
    let sse: f64 = y.iter().zip(y_hat).map(|(a, b)| (b - a).powi(2)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

fn variance(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    v.map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Explained variance score, `1 − Var(y − ŷ) / Var(y)`.
///
/// A constant target is only scorable when the residual is constant too
/// (score 1).
pub fn evs(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y.len(), y_hat.len(), 2)?;
    let var_y = variance(y.iter().copied());
    let var_res = variance(y.iter().zip(y_hat).map(|(a, b)| a - b));
    if var_y == 0.0 {
        return if var_res == 0.0 {
            Ok(1.0)
        } else {
            Err(invalid("explained variance undefined for a constant target"))
        };
    }
    Ok(1.0 - var_res / var_y)
}

/// Fraction of exact label matches.
pub fn accuracy(labels: &[usize], predicted: &[usize]) -> Result<f64> {
    check_lengths(labels.len(), predicted.len(), 1)?;
    let hits = labels.iter().zip(predicted).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Accuracy of always predicting the most frequent label.
pub fn majority_accuracy(labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(invalid("no labels"));
    }
    let mut counts = std::collections::HashMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let best = counts.values().max().copied().unwrap_or(0);
    Ok(best as f64 / labels.len() as f64)
}
