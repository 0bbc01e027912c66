//! Frames, masks and frame sequences, plus the generic spatial and temporal
//! augmentations applied before overlay mixing.
//!
//! Pixel values are `f64` in `[0, 1]`; quantization to 8 bits happens only
//! when reading or writing files (see [`io`]).

pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An RGB image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Frame {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width * Self::CHANNELS {
            return Err(Error::InvalidArgument(format!(
                "frame {height}x{width} needs {} samples, got {}",
                height * width * Self::CHANNELS,
                data.len()
            )));
        }
        check_unit_range(&data, "frame")?;
        Ok(Frame { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Frame::new(height, width, vec![value; height * width * Self::CHANNELS])
            .expect("filled frame must have positive dims and a value in [0, 1]")
    }

    /// Builds a frame from a per-pixel closure returning RGB.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Frame::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Overwrites one pixel. Panics if a component leaves `[0, 1]`.
    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        assert!(
            rgb.iter().all(|v| (0.0..=1.0).contains(v)),
            "pixel value out of range: {rgb:?}"
        );
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn ensure_same_dims(&self, other: &Frame) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }

    /// Channel-planar copy (`[3, H, W]`), the layout used by the estimator.
    pub fn to_planar(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * 3];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            out[i] = px[0];
            out[plane + i] = px[1];
            out[2 * plane + i] = px[2];
        }
        out
    }

    pub fn from_planar(height: usize, width: usize, planar: &[f64]) -> Result<Self> {
        let plane = height * width;
        if planar.len() != plane * 3 {
            return Err(Error::InvalidArgument(format!(
                "planar buffer of {} values does not fit {height}x{width}x3",
                planar.len()
            )));
        }
        let mut data = Vec::with_capacity(plane * 3);
        for i in 0..plane {
            data.extend_from_slice(&[planar[i], planar[plane + i], planar[2 * plane + i]]);
        }
        Frame::new(height, width, data)
    }

    fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Frame {
        let mut data = Vec::with_capacity(h * w * 3);
        for y in top..top + h {
            let start = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Frame {
            height: h,
            width: w,
            data,
        }
    }

    fn mirrored(&self, horizontal: bool) -> Frame {
        let (h, w) = self.dims();
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = if horizontal { (y, w - 1 - x) } else { (h - 1 - y, x) };
                data.extend_from_slice(&self.pixel(sy, sx));
            }
        }
        Frame {
            height: h,
            width: w,
            data,
        }
    }
}

/// A single-channel map in `[0, 1]` aligned with a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        check_unit_range(&data, "mask")?;
        Ok(Mask { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Mask::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Mask::new(height, width, vec![value; height * width])
            .expect("filled mask must have positive dims and a value in [0, 1]")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        assert!((0.0..=1.0).contains(&v), "mask value out of range: {v}");
        self.data[y * self.width + x] = v;
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Number of entries equal to 1.
    pub fn popcount(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Pointwise maximum, i.e. set union for binary masks.
    pub fn union_with(&mut self, other: &Mask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = a.max(b);
        }
        Ok(())
    }

    pub fn ensure_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::dims(dims, self.dims()));
        }
        Ok(())
    }
}

fn check_unit_range(data: &[f64], what: &str) -> Result<()> {
    if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!(
            "{what} value {v} at index {i} is outside [0, 1]"
        )));
    }
    Ok(())
}

/// Which frames of a sequence are fed to the interpolator and which one is
/// the ground-truth target. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleMap {
    pub inputs: Vec<usize>,
    pub target: usize,
}

impl RoleMap {
    fn validate(&self, len: usize) -> Result<()> {
        if self.inputs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "input indices must be strictly increasing: {:?}",
                self.inputs
            )));
        }
        if self.inputs.contains(&self.target) {
            return Err(Error::InvalidArgument(format!(
                "target {} is also an input",
                self.target
            )));
        }
        if self.target >= len || self.inputs.iter().any(|&i| i >= len) {
            return Err(Error::InvalidArgument(format!(
                "role map {self:?} does not fit a {len}-frame sequence"
            )));
        }
        Ok(())
    }

    /// The last input that precedes the target in time.
    pub fn previous_input(&self) -> Option<usize> {
        self.inputs.iter().copied().rfind(|&i| i < self.target)
    }
}

/// An ordered run of equally sized frames with optional input/target roles.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    frames: Vec<Frame>,
    roles: Option<RoleMap>,
}

pub const SEPTUPLET_LEN: usize = 7;
/// Target frame of a septuplet (the 4th frame, 0-based 3).
pub const SEPTUPLET_TARGET: usize = 3;
/// Nearest input preceding the septuplet target (the 3rd frame, 0-based 2).
pub const SEPTUPLET_PREVIOUS: usize = 2;

impl Sequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("a sequence needs at least one frame".into()))?;
        let dims = first.dims();
        for f in &frames[1..] {
            if f.dims() != dims {
                return Err(Error::dims(dims, f.dims()));
            }
        }
        Ok(Sequence { frames, roles: None })
    }

    pub fn with_roles(frames: Vec<Frame>, roles: RoleMap) -> Result<Self> {
        let mut seq = Sequence::new(frames)?;
        roles.validate(seq.len())?;
        seq.roles = Some(roles);
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &Frame {
        &self.frames[i]
    }

    pub fn roles(&self) -> Option<&RoleMap> {
        self.roles.as_ref()
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    /// Replaces the frames while keeping the role map. All produced frames must
    /// share one size.
    pub(crate) fn map_frames(&self, mut f: impl FnMut(usize, &Frame) -> Frame) -> Sequence {
        let frames: Vec<Frame> = self.frames.iter().enumerate().map(|(i, fr)| f(i, fr)).collect();
        debug_assert!(frames.iter().all(|fr| fr.dims() == frames[0].dims()));
        Sequence {
            frames,
            roles: self.roles.clone(),
        }
    }

    pub fn inputs(&self) -> Vec<&Frame> {
        self.roles
            .as_ref()
            .map(|r| r.inputs.iter().map(|&i| &self.frames[i]).collect())
            .unwrap_or_default()
    }

    pub fn target(&self) -> Option<&Frame> {
        self.roles.as_ref().map(|r| &self.frames[r.target])
    }
}

pub fn crop(seq: &Sequence, top: usize, left: usize, h: usize, w: usize) -> Result<Sequence> {
    let (fh, fw) = seq.dims();
    if h == 0 || w == 0 || top + h > fh || left + w > fw {
        return Err(Error::OutOfBounds {
            top,
            left,
            height: h,
            width: w,
            frame_height: fh,
            frame_width: fw,
        });
    }
    Ok(seq.map_frames(|_, f| f.crop(top, left, h, w)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipAxis {
    Horizontal,
    Vertical,
    Temporal,
}

pub fn flip(seq: &Sequence, axis: FlipAxis) -> Sequence {
    match axis {
        FlipAxis::Horizontal => seq.map_frames(|_, f| f.mirrored(true)),
        FlipAxis::Vertical => seq.map_frames(|_, f| f.mirrored(false)),
        FlipAxis::Temporal => {
            let n = seq.len();
            let frames = seq.frames.iter().rev().cloned().collect();
            let roles = seq.roles.as_ref().map(|r| RoleMap {
                inputs: r.inputs.iter().rev().map(|&i| n - 1 - i).collect(),
                target: n - 1 - r.target,
            });
            Sequence { frames, roles }
        }
    }
}

/// Assigns input/target roles on a septuplet: four inputs are frames
/// 1, 3, 5, 7 and two inputs are frames 3, 5; the target is frame 4 (1-based).
pub fn split_roles(seq: &Sequence, n_inputs: usize) -> Result<Sequence> {
    if seq.len() != SEPTUPLET_LEN {
        return Err(Error::FrameCount {
            expected: SEPTUPLET_LEN,
            actual: seq.len(),
        });
    }
    let inputs = match n_inputs {
        4 => vec![0, 2, 4, 6],
        2 => vec![2, 4],
        n => return Err(Error::InvalidArgument(format!("n_inputs must be 2 or 4, got {n}"))),
    };
    Ok(Sequence {
        frames: seq.frames.clone(),
        roles: Some(RoleMap {
            inputs,
            target: SEPTUPLET_TARGET,
        }),
    })
}
