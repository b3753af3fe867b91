//! Synthetic minority oversampling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{invalid, Result};
use crate::rng_from_seed;

/// Provenance of one synthetic row: `x = x[base] + gap · (x[neighbor] − x[base])`,
/// with `base` and `neighbor` indexing the input rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOrigin {
    pub row: usize,
    pub base: usize,
    pub neighbor: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoteResult {
    /// Input rows first, in input order, then the synthetic rows.
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub origins: Vec<SyntheticOrigin>,
}

impl SmoteResult {
    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        count(&self.labels)
    }
}

fn count(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    counts
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` members of `class` closest to `base`, excluding itself. Ties in
/// distance go to the lower row index.
fn nearest(x: &Matrix, class: &[usize], base: usize, k: usize) -> Vec<usize> {
    let mut cands: Vec<(f64, usize)> = class
        .iter()
        .filter(|&&i| i != base)
        .map(|&i| (sq_dist(x.row(base), x.row(i)), i))
        .collect();
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cands.truncate(k);
    cands.into_iter().map(|(_, i)| i).collect()
}

/// Oversamples every class up to the majority count. Bases are visited
/// round-robin over a seeded permutation of the class, and each synthetic
/// point interpolates towards a random one of the base's `k` nearest
/// same-class neighbours.
pub fn smote(x: &Matrix, labels: &[usize], k: usize, seed: u64) -> Result<SmoteResult> {
    if x.rows() != labels.len() {
        return Err(invalid(format!(
            "{} samples but {} labels",
            x.rows(),
            labels.len()
        )));
    }
    if k == 0 {
        return Err(invalid("SMOTE needs k >= 1"));
    }
    let counts = count(labels);
    let majority = counts.values().copied().max().unwrap_or(0);
    for (&class, &n) in &counts {
        if n < majority && n < 2 {
            return Err(invalid(format!(
                "class {class} has a single sample; SMOTE needs at least two to interpolate"
            )));
        }
    }

    let mut rng = rng_from_seed(seed);
    let mut out = x.clone();
    let mut out_labels = labels.to_vec();
    let mut origins = Vec::new();
    let mut synthetic = vec![0.0; x.cols()];

    for (&class, &n) in &counts {
        let need = majority - n;
        if need == 0 {
            continue;
        }
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let mut bases = members.clone();
        bases.shuffle(&mut rng);
        let k_eff = k.min(members.len() - 1);
        let mut neighbours: BTreeMap<usize, Vec<usize>> = BTreeMap::new();

        for s in 0..need {
            let base = bases[s % bases.len()];
            let nn = neighbours
                .entry(base)
                .or_insert_with(|| nearest(x, &members, base, k_eff));
            let neighbor = nn[rng.random_range(0..nn.len())];
            let gap: f64 = rng.random_range(0.0..=1.0);
            for ((v, a), b) in synthetic.iter_mut().zip(x.row(base)).zip(x.row(neighbor)) {
                *v = a + gap * (b - a);
            }
            origins.push(SyntheticOrigin {
                row: out.rows(),
                base,
                neighbor,
                gap,
            });
            out.push_row(&synthetic)?;
            out_labels.push(class);
        }
    }

    Ok(SmoteResult {
        x: out,
        labels: out_labels,
        origins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(counts: &[usize], dim: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = rng_from_seed(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (class, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                rows.push((0..dim).map(|_| rng.random_range(-1.0..1.0) + class as f64).collect());
                labels.push(class);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn balances_to_majority() {
        let (x, labels) = dataset(&[9, 212, 29], 6, 1);
        let r = smote(&x, &labels, 5, 0).unwrap();
        let counts: Vec<usize> = r.class_counts().into_values().collect();
        assert_eq!(counts, vec![212, 212, 212]);
        assert_eq!(r.origins.len(), 203 + 183);
        // Originals are untouched and first.
        assert_eq!(&r.x.data()[..x.data().len()], x.data());
        assert_eq!(&r.labels[..labels.len()], &labels[..]);
    }

    #[test]
    fn balanced_input_is_unchanged() {
        let (x, labels) = dataset(&[7, 7], 3, 2);
        let r = smote(&x, &labels, 5, 0).unwrap();
        assert_eq!(r.x, x);
        assert_eq!(r.labels, labels);
        assert!(r.origins.is_empty());
    }

    #[test]
    fn identical_minority_points() {
        let x = Matrix::from_rows(&[
            vec![1.0, 2.0],
            vec![1.0, 2.0],
            vec![5.0, 5.0],
            vec![6.0, 5.0],
            vec![7.0, 5.0],
            vec![8.0, 5.0],
        ])
        .unwrap();
        let labels = [0, 0, 1, 1, 1, 1];
        let r = smote(&x, &labels, 5, 4).unwrap();
        for o in &r.origins {
            assert_eq!(r.x.row(o.row), [1.0, 2.0]);
        }
    }

    #[test]
    fn singleton_minority_rejected() {
        let (x, labels) = dataset(&[1, 5], 2, 3);
        let err = smote(&x, &labels, 5, 0).unwrap_err();
        assert!(err.to_string().contains("single sample"));
        let (x, labels) = dataset(&[3, 5], 2, 3);
        assert!(smote(&x, &labels, 0, 0).is_err());
    }

    #[test]
    fn deterministic() {
        let (x, labels) = dataset(&[4, 20, 9], 3, 5);
        assert_eq!(smote(&x, &labels, 5, 11).unwrap(), smote(&x, &labels, 5, 11).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn synthetics_lie_on_recorded_segments(
            a in 2usize..12, b in 2usize..30, c in 2usize..12, seed in any::<u64>(), k in 1usize..7,
        ) {
            let (x, labels) = dataset(&[a, b, c], 4, seed);
            let r = smote(&x, &labels, k, seed).unwrap();
            let majority = a.max(b).max(c);
            prop_assert!(r.class_counts().values().all(|&n| n == majority));
            for o in &r.origins {
                prop_assert_eq!(labels[o.base], labels[o.neighbor]);
                prop_assert_eq!(r.labels[o.row], labels[o.base]);
                prop_assert_ne!(o.base, o.neighbor);
                prop_assert!((0.0..=1.0).contains(&o.gap));
                // The neighbour must be one of the base's k nearest.
                let members: Vec<usize> =
                    (0..labels.len()).filter(|&i| labels[i] == labels[o.base]).collect();
                let mut d: Vec<f64> = members
                    .iter()
                    .filter(|&&i| i != o.base)
                    .map(|&i| sq_dist(x.row(o.base), x.row(i)))
                    .collect();
                d.sort_by(f64::total_cmp);
                let kth = d[k.min(d.len()) - 1];
                prop_assert!(sq_dist(x.row(o.base), x.row(o.neighbor)) <= kth);
                for ((s, p), q) in r.x.row(o.row).iter().zip(x.row(o.base)).zip(x.row(o.neighbor)) {
                    prop_assert!((s - (p + o.gap * (q - p))).abs() < 1e-12);
                }
            }
        }
    }
}
