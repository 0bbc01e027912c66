//! Fixed (non-trained) continuous interpolators for the four-input setting.
//!
//! Inputs are the four input frames in temporal order; the target lies
//! between `inputs[1]` and `inputs[2]`.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image::Frame;
use crate::registry::Registry;

pub const DEFAULT_INTERPOLATOR: &str = "nearest-average";

pub trait ContinuousInterpolator: Send + Sync {
    fn name(&self) -> &'static str;
    fn interpolate(&self, inputs: &[&Frame; 4]) -> Result<Frame>;
}

fn check_dims(inputs: &[&Frame; 4]) -> Result<()> {
    for f in &inputs[1..] {
        inputs[0].ensure_same_dims(f)?;
    }
    Ok(())
}

/// Pixelwise mean of the two temporally nearest inputs.
pub struct NearestAverage;

impl ContinuousInterpolator for NearestAverage {
    fn name(&self) -> &'static str {
        "nearest-average"
    }

    fn interpolate(&self, inputs: &[&Frame; 4]) -> Result<Frame> {
        check_dims(inputs)?;
        let (a, b) = (inputs[1], inputs[2]);
        let (h, w) = a.dims();
        let data = a.data().iter().zip(b.data()).map(|(x, y)| 0.5 * (x + y)).collect();
        Frame::new(h, w, data)
    }
}

/// Repeats the nearest preceding input. Equivalent to a D-map of all ones.
pub struct RepeatPrevious;

impl ContinuousInterpolator for RepeatPrevious {
    fn name(&self) -> &'static str {
        "repeat-previous"
    }

    fn interpolate(&self, inputs: &[&Frame; 4]) -> Result<Frame> {
        check_dims(inputs)?;
        Ok(inputs[1].clone())
    }
}

/// Cubic (Catmull-Rom) blend of all four inputs at the midpoint, clamped to
/// `[0, 1]`.
pub struct CubicMidpoint;

impl ContinuousInterpolator for CubicMidpoint {
    fn name(&self) -> &'static str {
        "cubic-midpoint"
    }

    fn interpolate(&self, inputs: &[&Frame; 4]) -> Result<Frame> {
        check_dims(inputs)?;
        const W: [f64; 4] = [-0.0625, 0.5625, 0.5625, -0.0625];
        let (h, w) = inputs[0].dims();
        let n = h * w * 3;
        let data = (0..n)
            .map(|k| {
                let v: f64 = inputs.iter().zip(W).map(|(f, wt)| wt * f.data()[k]).sum();
                v.clamp(0.0, 1.0)
            })
            .collect();
        Frame::new(h, w, data)
    }
}

pub fn interpolators() -> &'static Registry<dyn ContinuousInterpolator> {
    static REGISTRY: OnceLock<Registry<dyn ContinuousInterpolator>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut r: Registry<dyn ContinuousInterpolator> = Registry::new("interpolator");
        r.register("nearest-average", || Box::new(NearestAverage))
            .register("repeat-previous", || Box::new(RepeatPrevious))
            .register("cubic-midpoint", || Box::new(CubicMidpoint));
        r
    })
}

pub fn interpolator(name: &str) -> Result<Box<dyn ContinuousInterpolator>> {
    interpolators().create(name)
}

/// The default continuous branch.
pub fn continuous_branch(inputs: &[&Frame; 4]) -> Result<Frame> {
    NearestAverage.interpolate(inputs)
}

pub(crate) fn as_array(frames: &[Frame]) -> Result<[&Frame; 4]> {
    match frames {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::FrameCount {
            expected: 4,
            actual: frames.len(),
        }),
    }
}
