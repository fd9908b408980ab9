//! Run configuration shared by the command-line front end and the reports.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dde::{check_kernel_sizes, DdeConfig, DEFAULT_KERNEL_SIZES, DEFAULT_STATE_DIM, KERNEL_SIZE_CHOICES};
use crate::error::{Error, Result};
use crate::pgmf::{FusionVariant, PgmfConfig};
use crate::ssm::Discretization;
use crate::tensor::DType;
use crate::wavelet::{Basis, DEFAULT_LEVELS};

pub const DEFAULT_SEED: u64 = 42;

/// How parameters are produced when no bundle is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamInit {
    #[default]
    Random,
    /// Every enhancement block is the identity map.
    Identity,
}

impl std::str::FromStr for ParamInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(ParamInit::Random),
            "identity" => Ok(ParamInit::Identity),
            other => Err(Error::arg(format!("unknown parameter init {other:?} (expected random or identity)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub levels: usize,
    pub basis: Basis,
    pub kernel_sizes: Vec<usize>,
    pub variant: FusionVariant,
    pub discretization: Discretization,
    pub dropout: f64,
    pub dtype: DType,
    pub init: ParamInit,
    /// Parameter bundle directory to load instead of initializing.
    pub params: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: DEFAULT_SEED,
            levels: DEFAULT_LEVELS,
            basis: Basis::Haar,
            kernel_sizes: DEFAULT_KERNEL_SIZES.to_vec(),
            variant: FusionVariant::D,
            discretization: Discretization::Zoh,
            dropout: 0.0,
            dtype: DType::F32,
            init: ParamInit::Random,
            params: None,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::arg("levels must be at least 1"));
        }
        check_kernel_sizes(&self.kernel_sizes)?;
        if !KERNEL_SIZE_CHOICES.iter().any(|c| c[..] == self.kernel_sizes[..]) {
            return Err(Error::InvalidKernel(format!(
                "kernel sizes {:?} not among {KERNEL_SIZE_CHOICES:?}",
                self.kernel_sizes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::arg(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn dde_config(&self, channels: usize) -> DdeConfig {
        DdeConfig {
            channels,
            levels: self.levels,
            basis: self.basis,
            kernel_sizes: self.kernel_sizes.clone(),
            state_dim: DEFAULT_STATE_DIM,
            discretization: self.discretization,
        }
    }

    pub fn pgmf_config(&self, channels: usize) -> PgmfConfig {
        PgmfConfig {
            channels,
            variant: self.variant,
            dropout: self.dropout,
            dropout_seed: self.seed,
            discretization: self.discretization,
            ..PgmfConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.basis, c.levels, c.variant), (Basis::Haar, 2, FusionVariant::D));
        assert_eq!(c.kernel_sizes, vec![3, 5, 7]);
        assert_eq!(c.discretization, Discretization::Zoh);
        assert_eq!(c.dropout, 0.0);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = RunConfig::from_json(r#"{"levels": 3, "variant": "b", "kernel_sizes": [5, 7, 9]}"#).unwrap();
        assert_eq!(c.levels, 3);
        assert_eq!(c.variant, FusionVariant::B);
        assert_eq!(c.basis, Basis::Haar);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(RunConfig::from_json(r#"{"level": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"kernel_sizes": [3, 5, 11]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"dropout": 1.0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"levels": 0}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig {
            params: Some("p".into()),
            dtype: DType::F64,
            ..RunConfig::default()
        };
        let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
