//! Signed one-dimensional Wasserstein distance from a baseline distribution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::SkinDistribution;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedDistance {
    pub sample_id: String,
    pub baseline_id: String,
    pub magnitude: f64,
    pub sign: i8,
    pub value: f64,
}

/// Exact W1 between two empirical distributions: the integral of
/// `|F0 - F1|` over the merged support.
pub fn wasserstein1(d0: &SkinDistribution, d1: &SkinDistribution) -> f64 {
    wasserstein1_sorted(d0.samples(), d1.samples())
}

/// Same as [`wasserstein1`] on raw ascending slices. Both must be non-empty.
pub fn wasserstein1_sorted(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "wasserstein1 on empty sample");
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut total = 0.0;
    let mut prev = a[0].min(b[0]);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        // F0 and F1 are constant on [prev, next).
        let gap = (i as f64 / na - j as f64 / nb).abs();
        total += gap * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    total
}

/// `-1` when `median(base) >= median(other)`, else `+1`.
pub fn sign(base: &SkinDistribution, other: &SkinDistribution) -> i8 {
    if base.median() >= other.median() {
        -1
    } else {
        1
    }
}

pub fn signed_distance(base: &SkinDistribution, other: &SkinDistribution) -> SignedDistance {
    let magnitude = wasserstein1(base, other);
    let sign = sign(base, other);
    // Adding +0.0 turns a negative zero into positive zero.
    let value = magnitude * f64::from(sign) + 0.0;
    SignedDistance {
        sample_id: other.source_id().to_owned(),
        baseline_id: base.source_id().to_owned(),
        magnitude,
        sign,
        value,
    }
}

/// Signed distance of every member of `collection` from the member named
/// `base_id`, in input order.
pub fn distance_table(base_id: &str, collection: &[SkinDistribution]) -> Result<Vec<SignedDistance>> {
    let base = collection
        .iter()
        .find(|d| d.source_id() == base_id)
        .ok_or_else(|| Error::UnknownSample(base_id.to_owned()))?;
    Ok(collection.par_iter().map(|d| signed_distance(base, d)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(id: &str, v: &[f64]) -> SkinDistribution {
        SkinDistribution::new(id, v.to_vec()).unwrap()
    }

    #[test]
    fn identical_and_point_masses() {
        let a = dist("a", &[1.0, 4.0, 4.0, 9.0]);
        assert_eq!(wasserstein1(&a, &a), 0.0);
        assert_eq!(wasserstein1(&dist("x", &[10.0]), &dist("y", &[25.0])), 15.0);
    }

    #[test]
    fn spread_versus_point() {
        let d0 = dist("b", &[0.0, 10.0]);
        let d1 = dist("o", &[5.0, 5.0]);
        assert_eq!(wasserstein1(&d0, &d1), 5.0);
        let s = signed_distance(&d0, &d1);
        assert_eq!(s.sign, -1);
        assert_eq!(s.value, -5.0);
    }

    #[test]
    fn sign_cases() {
        assert_eq!(sign(&dist("a", &[30.0]), &dist("b", &[50.0])), 1);
        assert_eq!(sign(&dist("a", &[50.0]), &dist("b", &[30.0])), -1);
        assert_eq!(sign(&dist("a", &[40.0]), &dist("b", &[39.0, 41.0])), -1);
    }

    #[test]
    fn self_distance_is_positive_zero() {
        let a = dist("a", &[3.0, 7.0]);
        let s = signed_distance(&a, &a);
        assert_eq!((s.magnitude, s.sign), (0.0, -1));
        assert!(s.value == 0.0 && s.value.is_sign_positive());
    }

    #[test]
    fn table_keeps_order_and_rejects_unknown_base() {
        let c = vec![dist("base", &[10.0]), dist("light", &[25.0]), dist("dark", &[0.0])];
        let t = distance_table("base", &c).unwrap();
        let v: Vec<f64> = t.iter().map(|s| s.value).collect();
        assert_eq!(v, vec![0.0, 15.0, -10.0]);
        assert!(t.iter().all(|s| s.baseline_id == "base"));
        assert!(matches!(distance_table("nope", &c), Err(Error::UnknownSample(_))));
        assert_eq!(distance_table("base", &c[..1]).unwrap()[0].value, 0.0);
    }

    #[test]
    fn unequal_sizes() {
        // F0 jumps to 1 at 0; F1 = 1/3 on [0, 3), 1 after.
        let d0 = dist("a", &[0.0]);
        let d1 = dist("b", &[0.0, 3.0, 3.0]);
        assert!((wasserstein1(&d0, &d1) - 2.0).abs() < 1e-15);
    }
}
