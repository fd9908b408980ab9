//! Named access to the learnable tensors of a block.
//!
//! Every parameterised block exposes its tensors under stable dotted paths
//! (`psn.conv1.weight`, ...). Gradient containers reuse the block's own type,
//! so analytic gradients and finite-difference probes can be matched path by
//! path, and parameter bundles can be written to disk without a bespoke
//! schema per block.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Real;

pub trait Parameters<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T]));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Flattened `(path, values)` listing in visiting order.
pub fn collect<T: Real, P: Parameters<T> + ?Sized>(p: &P) -> Vec<(String, Vec<T>)> {
    let mut out = Vec::new();
    p.visit("", &mut |path, v| out.push((path.to_string(), v.to_vec())));
    out
}

pub fn count<T: Real, P: Parameters<T> + ?Sized>(p: &P) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, v| n += v.len());
    n
}

/// A copy of `p` with every parameter set to zero; the natural gradient accumulator.
pub fn zeros_like<T: Real, P: Parameters<T> + Clone>(p: &P) -> P {
    let mut z = p.clone();
    z.visit_mut("", &mut |_, v| v.iter_mut().for_each(|x| *x = T::zero()));
    z
}

/// Reads one coordinate.
pub fn get<T: Real, P: Parameters<T> + ?Sized>(p: &P, path: &str, index: usize) -> Option<T> {
    let mut out = None;
    p.visit("", &mut |name, v| {
        if name == path {
            out = v.get(index).copied();
        }
    });
    out
}

/// Overwrites one coordinate; returns whether the path and index existed.
pub fn set<T: Real, P: Parameters<T> + ?Sized>(p: &mut P, path: &str, index: usize, value: T) -> bool {
    let mut hit = false;
    p.visit_mut("", &mut |name, v| {
        if name == path {
            if let Some(slot) = v.get_mut(index) {
                *slot = value;
                hit = true;
            }
        }
    });
    hit
}

/// Loads values by path, requiring every path of `p` to be present with the right length.
pub fn assign<T: Real, P: Parameters<T> + ?Sized>(
    p: &mut P,
    values: &BTreeMap<String, Vec<T>>,
) -> Result<()> {
    let mut err = None;
    p.visit_mut("", &mut |name, v| {
        if err.is_some() {
            return;
        }
        match values.get(name) {
            Some(src) if src.len() == v.len() => v.copy_from_slice(src),
            Some(src) => {
                err = Some(Error::shape(format!(
                    "parameter {name}: expected {} values, found {}",
                    v.len(),
                    src.len()
                )))
            }
            None => err = Some(Error::arg(format!("parameter {name} missing from bundle"))),
        }
    });
    err.map_or(Ok(()), Err)
}

/// Fails with the offending path if any value is NaN or infinite.
pub fn check_finite<T: Real, P: Parameters<T> + ?Sized>(p: &P, what: &str) -> Result<()> {
    let mut bad = None;
    p.visit("", &mut |name, v| {
        if bad.is_none() {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                bad = Some(format!("{name}[{i}]"));
            }
        }
    });
    match bad {
        Some(path) => Err(Error::Numerical {
            path,
            message: format!("{what} is not finite"),
        }),
        None => Ok(()),
    }
}
