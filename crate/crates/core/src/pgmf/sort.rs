//! Stable descending argsort of per-token scores.
//!
//! The radix path sorts order-preserving 64-bit keys with an LSD byte radix
//! sort, skipping passes where every key shares the byte. `-0.0` is folded
//! into `+0.0` first so that the two compare equal, as they do numerically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortMethod {
    /// Linear-time LSD radix sort over 8 byte passes.
    #[default]
    Radix,
    /// `O(N log N)` stable comparison sort.
    Comparison,
}

impl std::fmt::Display for SortMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SortMethod::Radix => "radix",
            SortMethod::Comparison => "comparison",
        })
    }
}

/// Maps a finite score to a `u64` whose ascending order is descending score order.
fn descending_key(v: f64) -> u64 {
    let bits = (v + 0.0).to_bits();
    let ascending = if bits >> 63 == 1 { !bits } else { bits | (1 << 63) };
    !ascending
}

/// Positions sorted by descending score; ties keep ascending position.
pub fn argsort_descending<T: Real>(scores: &[T], method: SortMethod) -> Result<Vec<usize>> {
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numerical {
            path: format!("scores[{i}]"),
            message: "priority score is not finite".into(),
        });
    }
    Ok(match method {
        SortMethod::Radix => radix(scores),
        SortMethod::Comparison => {
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            idx.sort_by(|&a, &b| scores[b].f64().partial_cmp(&scores[a].f64()).expect("finite"));
            idx
        }
    })
}

fn radix<T: Real>(scores: &[T]) -> Vec<usize> {
    let n = scores.len();
    // Keys and indices live in separate arrays: 12 bytes per entry instead of
    // a padded 16-byte tuple keeps both buffers cache-resident for longer.
    let mut keys: Vec<u64> = scores.iter().map(|s| descending_key(s.f64())).collect();
    let mut idx: Vec<u32> = (0..n as u32).collect();
    let mut keys_buf = vec![0u64; n];
    let mut idx_buf = vec![0u32; n];
    for pass in 0..8 {
        let shift = pass * 8;
        let mut counts = [0usize; 256];
        for &k in &keys {
            counts[((k >> shift) & 0xff) as usize] += 1;
        }
        if counts.iter().any(|&c| c == n) {
            continue;
        }
        let mut offset = 0;
        for c in counts.iter_mut() {
            let here = *c;
            *c = offset;
            offset += here;
        }
        for (&k, &i) in keys.iter().zip(&idx) {
            let slot = &mut counts[((k >> shift) & 0xff) as usize];
            keys_buf[*slot] = k;
            idx_buf[*slot] = i;
            *slot += 1;
        }
        std::mem::swap(&mut keys, &mut keys_buf);
        std::mem::swap(&mut idx, &mut idx_buf);
    }
    idx.into_iter().map(|i| i as usize).collect()
}

/// Whether `perm` is a permutation of `0..n`.
pub fn is_permutation(perm: &[usize], n: usize) -> bool {
    if perm.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    perm.iter().all(|&p| p < n && !std::mem::replace(&mut seen[p], true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_cases() {
        for m in [SortMethod::Radix, SortMethod::Comparison] {
            assert_eq!(argsort_descending(&[0.2, 0.9, 0.5], m).unwrap(), vec![1, 2, 0]);
            assert_eq!(argsort_descending(&[2.0, 3.0, 2.0], m).unwrap(), vec![1, 0, 2]);
            assert_eq!(argsort_descending(&[1.0f32; 5], m).unwrap(), vec![0, 1, 2, 3, 4]);
            assert_eq!(argsort_descending(&[-0.0, 0.0, -1.0, f64::MIN_POSITIVE], m).unwrap(), vec![3, 0, 1, 2]);
        }
    }

    #[test]
    fn rejects_nan() {
        assert!(argsort_descending(&[1.0, f64::NAN], SortMethod::Radix).is_err());
    }

    #[test]
    fn permutation_check() {
        assert!(is_permutation(&[2, 0, 1], 3));
        assert!(!is_permutation(&[0, 0, 1], 3));
        assert!(!is_permutation(&[0, 3, 1], 3));
        assert!(!is_permutation(&[0, 1], 3));
    }

    proptest! {
        #[test]
        fn radix_agrees_with_stable_comparison(v in prop::collection::vec(prop_oneof![
            -1e6f64..1e6,
            (-3i32..3).prop_map(|i| i as f64),
        ], 0..300)) {
            let r = argsort_descending(&v, SortMethod::Radix).unwrap();
            let c = argsort_descending(&v, SortMethod::Comparison).unwrap();
            prop_assert_eq!(&r, &c);
            prop_assert!(is_permutation(&r, v.len()));
            for w in r.windows(2) {
                prop_assert!(v[w[0]] > v[w[1]] || (v[w[0]] == v[w[1]] && w[0] < w[1]));
            }
        }

        #[test]
        fn shifting_scores_keeps_order(v in prop::collection::vec(-100i32..100, 1..200), shift in -50i32..50) {
            let a: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            let b: Vec<f64> = v.iter().map(|&x| (x + shift) as f64).collect();
            prop_assert_eq!(
                argsort_descending(&a, SortMethod::Radix).unwrap(),
                argsort_descending(&b, SortMethod::Radix).unwrap()
            );
        }
    }
}
