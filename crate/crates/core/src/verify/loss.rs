use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Class weight `α_t > 0`.
    pub alpha_t: f64,
    /// Focusing exponent `γ_t >= 0`.
    pub gamma_t: f64,
    /// Detection-loss weight.
    pub alpha: f64,
    /// Regression-loss weight.
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha_t: 1.0,
            gamma_t: 2.0,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

/// `−α_t · (p(1−t) + t(1−p))^γ · log(p_t)` with `p_t = p` for `t = 1`, else `1 − p`.
pub fn focal_loss(p: f64, target: u8, cfg: &LossConfig) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability {p} outside (0, 1)")));
    }
    if target > 1 {
        return Err(Error::Domain(format!("class label {target} is not 0 or 1")));
    }
    if !(cfg.alpha_t > 0.0) || !(cfg.gamma_t >= 0.0) {
        return Err(Error::Domain("need alpha_t > 0 and gamma_t >= 0".into()));
    }
    let t = target as f64;
    let p_t = if target == 1 { p } else { 1.0 - p };
    let modulating = (p * (1.0 - t) + t * (1.0 - p)).powf(cfg.gamma_t);
    Ok(-cfg.alpha_t * modulating * p_t.ln())
}

/// Quadratic for `|d| < 1`, linear beyond; `d = y_gt − y_pred`.
pub fn smooth_l1(y_gt: f64, y_pred: f64) -> f64 {
    let d = (y_gt - y_pred).abs();
    if d < 1.0 {
        0.5 * d * d
    } else {
        d - 0.5
    }
}

pub fn total_loss(det: f64, reg: f64, cfg: &LossConfig) -> f64 {
    cfg.alpha * det + cfg.beta * reg
}
