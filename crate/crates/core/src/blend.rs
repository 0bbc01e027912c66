//! Soft D-map blending and the training objectives.
//!
//! `blend` selects per pixel between the continuously interpolated frame and
//! the previous input frame:
//!
//! ```text
//! out(x) = continuous(x) * (1 - d(x)) + previous(x) * d(x)
//! ```
//!
//! Both losses are means of the Charbonnier penalty `sqrt(r^2 + eps^2)` over
//! all elements, so they do not scale with resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Frame, Mask};

pub const DEFAULT_EPSILON: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub epsilon: f64,
    pub lambda_d: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            epsilon: DEFAULT_EPSILON,
            lambda_d: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.lambda_d >= 0.0) || !self.lambda_d.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda_d must be non-negative, got {}",
                self.lambda_d
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l1: f64,
    pub l_d: f64,
    pub total: f64,
}

#[inline]
pub fn charbonnier(r: f64, eps: f64) -> f64 {
    (r * r + eps * eps).sqrt()
}

#[inline]
pub fn charbonnier_derivative(r: f64, eps: f64) -> f64 {
    r / charbonnier(r, eps)
}

pub fn blend(continuous: &Frame, previous: &Frame, d: &Mask) -> Result<Frame> {
    continuous.ensure_same_dims(previous)?;
    d.ensure_dims(continuous.dims())?;
    let (h, w) = continuous.dims();
    let mut data = Vec::with_capacity(h * w * 3);
    for (i, &m) in d.data().iter().enumerate() {
        for c in 0..3 {
            let k = i * 3 + c;
            data.push(blend_value(continuous.data()[k], previous.data()[k], m));
        }
    }
    Frame::new(h, w, data)
}

/// Evaluates the convex combination so that `m == 0` and `m == 1` return
/// the respective source exactly.
#[inline]
pub fn blend_value(continuous: f64, previous: f64, m: f64) -> f64 {
    let v = continuous * (1.0 - m) + previous * m;
    // guards against rounding a hair outside the source interval
    v.clamp(continuous.min(previous), continuous.max(previous))
}

/// Gradients of a scalar loss with respect to the three blend operands,
/// given the upstream gradient on the output. Slices use the same layout:
/// frames channel-planar `[3, H*W]`, mask `[H*W]`.
pub struct BlendGrads {
    pub continuous: Vec<f64>,
    pub previous: Vec<f64>,
    pub mask: Vec<f64>,
}

pub fn blend_backward(continuous: &[f64], previous: &[f64], mask: &[f64], grad_out: &[f64]) -> BlendGrads {
    let plane = mask.len();
    assert_eq!(continuous.len(), plane * 3);
    assert_eq!(previous.len(), plane * 3);
    assert_eq!(grad_out.len(), plane * 3);
    let mut g_c = vec![0.0; plane * 3];
    let mut g_p = vec![0.0; plane * 3];
    let mut g_m = vec![0.0; plane];
    for c in 0..3 {
        let off = c * plane;
        for i in 0..plane {
            let g = grad_out[off + i];
            let m = mask[i];
            g_c[off + i] = g * (1.0 - m);
            g_p[off + i] = g * m;
            g_m[i] += g * (previous[off + i] - continuous[off + i]);
        }
    }
    BlendGrads {
        continuous: g_c,
        previous: g_p,
        mask: g_m,
    }
}

/// Mean Charbonnier penalty of `pred - target` over all elements.
pub fn charbonnier_mean(pred: &[f64], target: &[f64], eps: f64) -> f64 {
    assert_eq!(pred.len(), target.len());
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| charbonnier(p - t, eps)).sum();
    sum / pred.len() as f64
}

/// Gradient of [`charbonnier_mean`] with respect to `pred`.
pub fn charbonnier_mean_grad(pred: &[f64], target: &[f64], eps: f64) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(p, t)| charbonnier_derivative(p - t, eps) / n)
        .collect()
}

pub fn charbonnier_loss(pred: &Frame, gt: &Frame, cfg: &LossConfig) -> Result<f64> {
    pred.ensure_same_dims(gt)?;
    cfg.validate()?;
    Ok(charbonnier_mean(pred.data(), gt.data(), cfg.epsilon))
}

pub fn dmap_loss(d: &Mask, dgt: &Mask, cfg: &LossConfig) -> Result<f64> {
    dgt.ensure_dims(d.dims())?;
    cfg.validate()?;
    Ok(charbonnier_mean(d.data(), dgt.data(), cfg.epsilon))
}

pub fn total_loss(l1: f64, l_d: f64, cfg: &LossConfig) -> Result<LossReport> {
    if !l1.is_finite() || !l_d.is_finite() {
        return Err(Error::NonFinite(format!("loss terms l1={l1}, l_d={l_d}")));
    }
    cfg.validate()?;
    Ok(LossReport {
        l1,
        l_d,
        total: l1 + cfg.lambda_d * l_d,
    })
}
