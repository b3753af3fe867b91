//! Differential-privacy primitives: database adjacency, Laplace noise and an
//! empirical check of the (ε, δ) ratio bound.
//!
//! A mechanism `M` is (ε, δ)-differentially private when for every pair of
//! databases at distance at most one and every output set `S`
//!
//! ```text
//! Pr[M(D) ∈ S] ≤ e^ε · Pr[M(D') ∈ S] + δ
//! ```
//!
//! [`verify_dp_ratio`] tests this inequality on histogram bins of sampled
//! outputs. It cannot prove privacy; it catches mechanisms that clearly
//! violate the bound.

use std::collections::HashSet;

use rand::distr::Open01;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::{rng_from_seed, Rng};

/// Minimum number of samples per database accepted by [`verify_dp_ratio`].
pub const MIN_VERIFY_SAMPLES: usize = 100_000;

/// One record of a [`DatabaseView`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Row {
    pub id: String,
    pub payload: Vec<f64>,
}

impl Row {
    pub fn new(id: impl Into<String>, payload: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            payload,
        }
    }
}

// Bitwise payload comparison so that equality is reflexive even for NaN.
impl PartialEq for Row {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.payload.len() == other.payload.len()
            && self
                .payload
                .iter()
                .zip(&other.payload)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// An ordered list of records with unique identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseView {
    rows: Vec<Row>,
}

impl DatabaseView {
    pub fn new(rows: Vec<Row>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(rows.len());
        for row in &rows {
            if !seen.insert(row.id.as_str()) {
                return Err(invalid(format!("duplicate row id `{}`", row.id)));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Returns a copy with row `index` replaced, i.e. a neighbouring database.
    pub fn with_row(&self, index: usize, row: Row) -> Result<Self> {
        if index >= self.rows.len() {
            return Err(invalid(format!(
                "row index {index} out of range for view of {} rows",
                self.rows.len()
            )));
        }
        let mut rows = self.rows.clone();
        rows[index] = row;
        Self::new(rows)
    }
}

/// Number of positions at which two equal-length views differ.
pub fn db_distance(a: &DatabaseView, b: &DatabaseView) -> Result<usize> {
    if a.len() != b.len() {
        return Err(invalid(format!(
            "cannot compare views of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.rows.iter().zip(&b.rows).filter(|(x, y)| x != y).count())
}

/// True iff every component is at least `-tol` and the components sum to one
/// within `tol`.
pub fn is_probability_simplex(v: &[f64], tol: f64) -> Result<bool> {
    if v.is_empty() {
        return Err(invalid("empty vector is not a distribution"));
    }
    let sum: f64 = v.iter().sum();
    Ok(v.iter().all(|&x| x >= -tol) && (sum - 1.0).abs() <= tol)
}

/// Inverse CDF of Laplace(0, scale) evaluated at `u ∈ (0, 1)`.
pub fn laplace_inverse_cdf(u: f64, scale: f64) -> f64 {
    let centered = u - 0.5;
    if centered == 0.0 {
        return 0.0;
    }
    -scale * centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
}

/// One draw from Laplace(0, scale).
pub fn laplace_sample(scale: f64, rng: &mut Rng) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(invalid(format!("laplace scale must be positive, got {scale}")));
    }
    let u: f64 = rng.sample(Open01);
    Ok(laplace_inverse_cdf(u, scale))
}

/// Privacy parameter and query sensitivity for the Laplace mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    epsilon: f64,
    sensitivity: f64,
}

impl NoiseSpec {
    pub fn new(epsilon: f64, sensitivity: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(sensitivity > 0.0 && sensitivity.is_finite()) {
            return Err(invalid(format!(
                "sensitivity must be positive, got {sensitivity}"
            )));
        }
        Ok(Self {
            epsilon,
            sensitivity,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    pub fn scale(&self) -> f64 {
        self.sensitivity / self.epsilon
    }
}

/// `true_value + Lap(sensitivity / epsilon)`.
pub fn laplace_mechanism(true_value: f64, spec: &NoiseSpec, rng: &mut Rng) -> Result<f64> {
    Ok(true_value + laplace_sample(spec.scale(), rng)?)
}

/// Number of rows whose payload satisfies `predicate`. Sensitivity 1 under
/// row replacement.
pub fn counting_query(view: &DatabaseView, predicate: impl Fn(&[f64]) -> bool) -> f64 {
    view.rows().iter().filter(|r| predicate(&r.payload)).count() as f64
}

/// Settings for [`verify_dp_ratio`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyParams {
    pub epsilon: f64,
    pub delta: f64,
    pub bins: usize,
    pub samples: usize,
    pub seed: u64,
    /// Per-bin allowance, in standard errors of the log-ratio estimate, for
    /// sampling noise.
    pub z: f64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            delta: 0.0,
            bins: 100,
            samples: 1_000_000,
            seed: 0,
            z: 4.0,
        }
    }
}

/// Ratio statistics for one histogram bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRatio {
    pub lo: f64,
    pub hi: f64,
    pub count_a: u64,
    pub count_b: u64,
    /// `(P̂_a − δ) / P̂_b` with the denominator smoothed.
    pub ratio_ab: f64,
    /// `(P̂_b − δ) / P̂_a` with the denominator smoothed.
    pub ratio_ba: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpVerdict {
    pub epsilon: f64,
    pub delta: f64,
    pub max_ratio: f64,
    /// `e^ε`
    pub threshold: f64,
    pub pass: bool,
    pub bins: Vec<BinRatio>,
}

/// Empirically checks the (ε, δ) inequality for `mechanism` on two databases
/// at distance at most one.
///
/// Both output samples are histogrammed over shared equal-width bins spanning
/// the pooled range. Each denominator bin gets one pseudo-count. A bin fails
/// when its log-ratio exceeds ε by more than `z` standard errors, so sparse
/// tail bins need a large excess before they count as violations. Both
/// orderings of the pair are checked.
pub fn verify_dp_ratio<M>(
    mechanism: M,
    d1: &DatabaseView,
    d2: &DatabaseView,
    params: &VerifyParams,
) -> Result<DpVerdict>
where
    M: Fn(&DatabaseView, &mut Rng) -> Result<f64>,
{
    if db_distance(d1, d2)? > 1 {
        return Err(invalid("databases are not adjacent (distance > 1)"));
    }
    if params.samples < MIN_VERIFY_SAMPLES {
        return Err(invalid(format!(
            "need at least {MIN_VERIFY_SAMPLES} samples, got {}",
            params.samples
        )));
    }
    if params.bins == 0 {
        return Err(invalid("bins must be positive"));
    }
    if !(params.epsilon >= 0.0) || !(0.0..1.0).contains(&params.delta) {
        return Err(invalid("need epsilon >= 0 and 0 <= delta < 1"));
    }

    let mut rng = rng_from_seed(params.seed);
    let draw = |db: &DatabaseView, rng: &mut Rng| -> Result<Vec<f64>> {
        (0..params.samples).map(|_| mechanism(db, rng)).collect()
    };
    let a = draw(d1, &mut rng)?;
    let b = draw(d2, &mut rng)?;

    let (mut lo, mut hi) = a
        .iter()
        .chain(&b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(invalid("mechanism produced non-finite output"));
    }
    if hi - lo <= 0.0 {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / params.bins as f64;
    let bin_of = |x: f64| (((x - lo) / width) as usize).min(params.bins - 1);

    let mut counts_a = vec![0u64; params.bins];
    let mut counts_b = vec![0u64; params.bins];
    for &x in &a {
        counts_a[bin_of(x)] += 1;
    }
    for &x in &b {
        counts_b[bin_of(x)] += 1;
    }

    let n = params.samples as f64;
    let smoothed_total = n + params.bins as f64;
    // Returns (ratio, within tolerance).
    let directed = |num: u64, den: u64| -> (f64, bool) {
        let p_num = num as f64 / n - params.delta;
        if p_num <= 0.0 {
            return (0.0, true);
        }
        let p_den = (den as f64 + 1.0) / smoothed_total;
        let ratio = p_num / p_den;
        let se = (1.0 / num as f64 + 1.0 / (den as f64 + 1.0)).sqrt();
        (ratio, ratio.ln() - params.z * se <= params.epsilon)
    };

    let mut bins = Vec::with_capacity(params.bins);
    let mut max_ratio = 0.0f64;
    for i in 0..params.bins {
        let (ca, cb) = (counts_a[i], counts_b[i]);
        let (ratio_ab, ok_ab) = directed(ca, cb);
        let (ratio_ba, ok_ba) = directed(cb, ca);
        max_ratio = max_ratio.max(ratio_ab).max(ratio_ba);
        bins.push(BinRatio {
            lo: lo + width * i as f64,
            hi: lo + width * (i + 1) as f64,
            count_a: ca,
            count_b: cb,
            ratio_ab,
            ratio_ba,
            pass: ok_ab && ok_ba,
        });
    }

    Ok(DpVerdict {
        epsilon: params.epsilon,
        delta: params.delta,
        max_ratio,
        threshold: params.epsilon.exp(),
        pass: bins.iter().all(|b| b.pass),
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(payloads: &[f64]) -> DatabaseView {
        DatabaseView::new(
            payloads
                .iter()
                .enumerate()
                .map(|(i, &p)| Row::new(format!("r{i}"), vec![p]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn distance_examples() {
        let d = view(&[0.0; 10]);
        assert_eq!(db_distance(&d, &d).unwrap(), 0);

        let one = d.with_row(4, Row::new("r4", vec![1.0])).unwrap();
        assert_eq!(db_distance(&d, &one).unwrap(), 1);

        let mut three = d.clone();
        for i in [2, 5, 7] {
            three = three.with_row(i, Row::new(format!("r{i}"), vec![9.0])).unwrap();
        }
        assert_eq!(db_distance(&d, &three).unwrap(), 3);
        assert_eq!(db_distance(&three, &d).unwrap(), 3);
    }

    #[test]
    fn distance_rejects_length_mismatch() {
        assert!(db_distance(&view(&[1.0]), &view(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let rows = vec![Row::new("x", vec![]), Row::new("x", vec![1.0])];
        assert!(DatabaseView::new(rows).is_err());
    }

    #[test]
    fn simplex_examples() {
        assert!(is_probability_simplex(&[0.5, 0.5], 1e-9).unwrap());
        assert!(is_probability_simplex(&[1.0], 1e-9).unwrap());
        assert!(!is_probability_simplex(&[0.7, 0.4], 1e-9).unwrap());
        assert!(!is_probability_simplex(&[1.5, -0.5], 1e-9).unwrap());
        assert!(is_probability_simplex(&[], 1e-9).is_err());
    }

    #[test]
    fn inverse_cdf_median_is_zero() {
        assert_eq!(laplace_inverse_cdf(0.5, 3.0), 0.0);
        // F(x) = 1 - e^{-x/b}/2 for x > 0; F^{-1}(0.75) = b ln 2.
        assert!((laplace_inverse_cdf(0.75, 2.0) - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((laplace_inverse_cdf(0.25, 2.0) + 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn laplace_rejects_bad_scale() {
        let mut rng = rng_from_seed(1);
        assert!(laplace_sample(0.0, &mut rng).is_err());
        assert!(laplace_sample(-1.0, &mut rng).is_err());
        assert!(NoiseSpec::new(0.0, 1.0).is_err());
        assert!(NoiseSpec::new(1.0, 0.0).is_err());
    }

    #[test]
    fn laplace_is_deterministic() {
        let a = laplace_sample(1.0, &mut rng_from_seed(42)).unwrap();
        let b = laplace_sample(1.0, &mut rng_from_seed(42)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn laplace_moments() {
        let scale = 1.5;
        let n = 1_000_000;
        let mut rng = rng_from_seed(7);
        let xs: Vec<f64> = (0..n).map(|_| laplace_sample(scale, &mut rng).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expected = 2.0 * scale * scale;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - expected).abs() / expected < 0.05, "var {var}");
    }

    #[test]
    fn mechanism_vanishing_noise_and_unbiasedness() {
        let mut rng = rng_from_seed(3);
        let tight = NoiseSpec::new(1e6, 1.0).unwrap();
        let out = laplace_mechanism(42.0, &tight, &mut rng).unwrap();
        assert!((out - 42.0).abs() < 1e-3);

        let spec = NoiseSpec::new(1.0, 1.0).unwrap();
        let n = 1_000_000;
        let mean = (0..n)
            .map(|_| laplace_mechanism(0.0, &spec, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    fn adjacent_pair() -> (DatabaseView, DatabaseView) {
        let d1 = view(&[1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        let d2 = d1.with_row(1, Row::new("r1", vec![1.0])).unwrap();
        (d1, d2)
    }

    fn is_one(p: &[f64]) -> bool {
        p[0] > 0.5
    }

    #[test]
    fn laplace_counting_passes_ratio_test() {
        let (d1, d2) = adjacent_pair();
        for eps in [0.1, 1.0] {
            let spec = NoiseSpec::new(eps, 1.0).unwrap();
            let mech = |db: &DatabaseView, rng: &mut Rng| {
                laplace_mechanism(counting_query(db, is_one), &spec, rng)
            };
            let params = VerifyParams {
                epsilon: eps,
                samples: 200_000,
                ..Default::default()
            };
            let verdict = verify_dp_ratio(mech, &d1, &d2, &params).unwrap();
            assert!(verdict.pass, "eps {eps}: max ratio {}", verdict.max_ratio);
        }
    }

    #[test]
    fn noiseless_count_fails_ratio_test() {
        let (d1, d2) = adjacent_pair();
        let mech = |db: &DatabaseView, _: &mut Rng| Ok(counting_query(db, is_one));
        let params = VerifyParams {
            samples: MIN_VERIFY_SAMPLES,
            ..Default::default()
        };
        let verdict = verify_dp_ratio(mech, &d1, &d2, &params).unwrap();
        assert!(!verdict.pass);
        assert!(verdict.max_ratio > verdict.threshold);
    }

    #[test]
    fn identical_databases_pass_even_at_zero_epsilon() {
        let (d1, _) = adjacent_pair();
        let spec = NoiseSpec::new(1.0, 1.0).unwrap();
        let mech = |db: &DatabaseView, rng: &mut Rng| {
            laplace_mechanism(counting_query(db, is_one), &spec, rng)
        };
        let params = VerifyParams {
            epsilon: 0.0,
            samples: MIN_VERIFY_SAMPLES,
            ..Default::default()
        };
        assert!(verify_dp_ratio(mech, &d1, &d1, &params).unwrap().pass);
        let noiseless = |db: &DatabaseView, _: &mut Rng| Ok(counting_query(db, is_one));
        assert!(verify_dp_ratio(noiseless, &d1, &d1, &params).unwrap().pass);
    }

    #[test]
    fn verify_rejects_non_adjacent_and_small_samples() {
        let d1 = view(&[0.0, 0.0, 0.0]);
        let d2 = view(&[1.0, 1.0, 0.0]);
        let mech = |_: &DatabaseView, _: &mut Rng| Ok(0.0);
        assert!(verify_dp_ratio(mech, &d1, &d2, &VerifyParams::default()).is_err());
        let small = VerifyParams {
            samples: 10,
            ..Default::default()
        };
        assert!(verify_dp_ratio(mech, &d1, &d1, &small).is_err());
    }

    #[test]
    fn verdict_json_shape() {
        let (d1, d2) = adjacent_pair();
        let mech = |db: &DatabaseView, _: &mut Rng| Ok(counting_query(db, is_one));
        let params = VerifyParams {
            samples: MIN_VERIFY_SAMPLES,
            bins: 4,
            ..Default::default()
        };
        let verdict = verify_dp_ratio(mech, &d1, &d2, &params).unwrap();
        let json = serde_json::to_value(&verdict).unwrap();
        for key in ["epsilon", "delta", "max_ratio", "threshold", "pass", "bins"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["bins"].as_array().unwrap().len(), 4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn small_view() -> impl Strategy<Value = Vec<u8>> {
            prop::collection::vec(0u8..3, 6)
        }

        fn to_view(v: &[u8]) -> DatabaseView {
            view(&v.iter().map(|&x| x as f64).collect::<Vec<_>>())
        }

        proptest! {
            #[test]
            fn distance_is_a_metric(a in small_view(), b in small_view(), c in small_view()) {
                let (a, b, c) = (to_view(&a), to_view(&b), to_view(&c));
                let ab = db_distance(&a, &b).unwrap();
                prop_assert_eq!(ab, db_distance(&b, &a).unwrap());
                prop_assert_eq!(ab == 0, a == b);
                let brute = a.rows().iter().zip(b.rows()).filter(|(x, y)| x.payload != y.payload).count();
                prop_assert_eq!(ab, brute);
                prop_assert!(db_distance(&a, &c).unwrap() <= ab + db_distance(&b, &c).unwrap());
            }
        }
    }
}
