//! Parameter bundles: one tensor file per parameter path plus `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dde::{DdeConfig, DdeParams};
use crate::error::{Error, Result};
use crate::params::{assign, collect, Parameters};
use crate::pgmf::{PgmfConfig, PgmfParams};
use crate::tensor::{read_tensor_file, write_tensor_file, DType, FeatureMap, Prng, Real, Shape};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BundleModel {
    Dde(DdeConfig),
    Pgmf(PgmfConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub path: String,
    pub file: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub seed: u64,
    pub dtype: DType,
    pub model: BundleModel,
    pub tensors: Vec<TensorEntry>,
}

/// Writes every parameter of `params` as a `1×1×1×len` tensor.
pub fn write_bundle<T: Real, P: Parameters<T>>(
    dir: impl AsRef<Path>,
    seed: u64,
    model: BundleModel,
    params: &P,
) -> Result<BundleManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    for (path, values) in collect(params) {
        let file = format!("{path}.depf");
        let len = values.len();
        let t = FeatureMap::new(Shape::new(1, 1, 1, len), values)?;
        write_tensor_file(dir.join(&file), &t)?;
        tensors.push(TensorEntry { path, file, len });
    }
    let manifest = BundleManifest {
        seed,
        dtype: T::DTYPE,
        model,
        tensors,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<BundleManifest> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.as_ref().join(MANIFEST))?)?)
}

fn read_values<T: Real>(dir: &Path, manifest: &BundleManifest) -> Result<BTreeMap<String, Vec<T>>> {
    let mut out = BTreeMap::new();
    for e in &manifest.tensors {
        let t = read_tensor_file(dir.join(&e.file))?.into_dtype::<T>();
        if t.shape().numel() != e.len {
            return Err(Error::shape(format!(
                "{}: manifest says {} values, file holds {}",
                e.file,
                e.len,
                t.shape().numel()
            )));
        }
        out.insert(e.path.clone(), t.into_data());
    }
    Ok(out)
}

pub fn write_dde_bundle<T: Real>(dir: impl AsRef<Path>, seed: u64, params: &DdeParams<T>) -> Result<BundleManifest> {
    write_bundle(dir, seed, BundleModel::Dde(params.config.clone()), params)
}

pub fn write_pgmf_bundle<T: Real>(
    dir: impl AsRef<Path>,
    seed: u64,
    cfg: &PgmfConfig,
    params: &PgmfParams<T>,
) -> Result<BundleManifest> {
    write_bundle(dir, seed, BundleModel::Pgmf(cfg.clone()), params)
}

pub fn read_dde_bundle<T: Real>(dir: impl AsRef<Path>) -> Result<(BundleManifest, DdeParams<T>)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let BundleModel::Dde(cfg) = &manifest.model else {
        return Err(Error::arg(format!("{} does not hold enhancement parameters", dir.display())));
    };
    let mut params = DdeParams::identity(cfg)?;
    assign(&mut params, &read_values(dir, &manifest)?)?;
    Ok((manifest, params))
}

pub fn read_pgmf_bundle<T: Real>(dir: impl AsRef<Path>) -> Result<(BundleManifest, PgmfParams<T>)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let BundleModel::Pgmf(cfg) = &manifest.model else {
        return Err(Error::arg(format!("{} does not hold fusion parameters", dir.display())));
    };
    let mut params = PgmfParams::random(cfg, &mut Prng::new(0))?;
    assign(&mut params, &read_values(dir, &manifest)?)?;
    Ok((manifest, params))
}
