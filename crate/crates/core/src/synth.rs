//! Synthetic sequences with discontinuous screen elements over a
//! continuously translating background, with exact ground truth.
//!
//! The background is a periodic texture translated by an integer velocity
//! per frame with toroidal wrap, so the true middle frame is an integer shift
//! of its neighbours. Overlays are a static HUD rectangle, a digit counter
//! that increments every frame, and text whose position is resampled every
//! frame. The target frame (index 3) shows each overlay in the state of the
//! previous frame (index 2).

use std::f64::consts::TAU;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::font;
use crate::ftm::Anchor;
use crate::image::{io, split_roles, Frame, Mask, Sequence, SEPTUPLET_LEN, SEPTUPLET_PREVIOUS, SEPTUPLET_TARGET};

pub const MAX_SPEED: i64 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    /// Integer cycles across the frame height and width, so the texture tiles.
    pub cycles_y: i64,
    pub cycles_x: i64,
    pub phase: f64,
    pub amplitude: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub base: [f64; 3],
    pub waves: Vec<Wave>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthOverlay {
    Hud {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
        color: [f64; 3],
    },
    /// A filled box with a zero-padded number that increments every frame.
    /// The box (and thus the support) does not change size.
    Counter {
        top: usize,
        left: usize,
        scale: usize,
        digits: usize,
        start: u64,
        box_color: [f64; 3],
        ink_color: [f64; 3],
    },
    JumpText {
        text: String,
        scale: usize,
        color: [f64; 3],
        /// One anchor per frame.
        positions: Vec<Anchor>,
    },
}

impl SynthOverlay {
    fn counter_box(scale: usize, digits: usize) -> (usize, usize) {
        let (th, tw) = font::text_extent(&"0".repeat(digits), scale);
        (th + 2 * scale, tw + 2 * scale)
    }

    fn validate(&self, (h, w): (usize, usize), frames: usize) -> Result<()> {
        let oob = |what: &str| Err(Error::InvalidArgument(format!("{what} lies outside the {h}x{w} frame")));
        match self {
            SynthOverlay::Hud {
                top,
                left,
                height,
                width,
                ..
            } => {
                if *height == 0 || *width == 0 || top + height > h || left + width > w {
                    return oob("HUD rectangle");
                }
            }
            SynthOverlay::Counter {
                top,
                left,
                scale,
                digits,
                ..
            } => {
                let (bh, bw) = Self::counter_box(*scale, *digits);
                if *digits == 0 || *scale == 0 || top + bh > h || left + bw > w {
                    return oob("counter");
                }
            }
            SynthOverlay::JumpText {
                text, scale, positions, ..
            } => {
                if !font::is_drawable(text) || *scale == 0 {
                    return Err(Error::InvalidArgument(format!("undrawable text {text:?}")));
                }
                if positions.len() != frames {
                    return Err(Error::InvalidArgument(format!(
                        "jumping text needs {frames} positions, got {}",
                        positions.len()
                    )));
                }
                let (th, tw) = font::text_extent(text, *scale);
                for p in positions {
                    if p.top < 0 || p.left < 0 || p.top as usize + th > h || p.left as usize + tw > w {
                        return oob("jumping text");
                    }
                }
            }
        }
        Ok(())
    }

    /// Paints the overlay as it appears on `state` (a frame index) and marks
    /// its support in `mask`.
    fn draw(&self, frame: &mut Frame, mask: &mut Mask, state: usize) {
        let mut paint = |y: usize, x: usize, c: [f64; 3]| {
            frame.set_pixel(y, x, c);
            mask.set(y, x, 1.0);
        };
        match self {
            SynthOverlay::Hud {
                top,
                left,
                height,
                width,
                color,
            } => {
                for y in *top..top + height {
                    for x in *left..left + width {
                        paint(y, x, *color);
                    }
                }
            }
            SynthOverlay::Counter {
                top,
                left,
                scale,
                digits,
                start,
                box_color,
                ink_color,
            } => {
                let (bh, bw) = Self::counter_box(*scale, *digits);
                for y in *top..top + bh {
                    for x in *left..left + bw {
                        paint(y, x, *box_color);
                    }
                }
                let modulus = 10u64.pow(*digits as u32);
                let value = (start + state as u64) % modulus;
                let text = format!("{value:0width$}", width = *digits);
                font::for_each_lit_pixel(&text, *scale, |dy, dx| {
                    paint(top + scale + dy, left + scale + dx, *ink_color);
                });
            }
            SynthOverlay::JumpText {
                text,
                scale,
                color,
                positions,
            } => {
                let p = positions[state];
                font::for_each_lit_pixel(text, *scale, |dy, dx| {
                    paint(p.top as usize + dy, p.left as usize + dx, *color);
                });
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Background displacement in pixels per frame, `(vx, vy)`.
    pub velocity: (i64, i64),
    pub background: Background,
    pub overlays: Vec<SynthOverlay>,
    pub frames: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidArgument("scene dimensions must be positive".into()));
        }
        if self.frames != SEPTUPLET_LEN {
            return Err(Error::FrameCount {
                expected: SEPTUPLET_LEN,
                actual: self.frames,
            });
        }
        let (vx, vy) = self.velocity;
        if vx.abs() > MAX_SPEED || vy.abs() > MAX_SPEED {
            return Err(Error::InvalidArgument(format!(
                "velocity ({vx}, {vy}) exceeds {MAX_SPEED} px/frame"
            )));
        }
        for o in &self.overlays {
            o.validate((self.height, self.width), self.frames)?;
        }
        Ok(())
    }

    /// The untranslated background texture, quantized to 8-bit levels.
    pub fn base_texture(&self) -> Frame {
        let (h, w) = (self.height, self.width);
        let bg = &self.background;
        Frame::from_fn(h, w, |y, x| {
            let mut rgb = bg.base;
            for wave in &bg.waves {
                let arg = TAU
                    * (wave.cycles_y as f64 * y as f64 / h as f64 + wave.cycles_x as f64 * x as f64 / w as f64)
                    + wave.phase;
                let s = arg.sin();
                for c in 0..3 {
                    rgb[c] += wave.amplitude[c] * s;
                }
            }
            rgb.map(|v| io::dequantize(io::quantize(v)))
        })
        .expect("texture values are clamped to [0, 1]")
    }
}

/// Toroidal translation: `out(y, x) = src(y - dy, x - dx)`.
pub fn translate(src: &Frame, dx: i64, dy: i64) -> Frame {
    let (h, w) = src.dims();
    Frame::from_fn(h, w, |y, x| {
        let sy = (y as i64 - dy).rem_euclid(h as i64) as usize;
        let sx = (x as i64 - dx).rem_euclid(w as i64) as usize;
        src.pixel(sy, sx)
    })
    .expect("translation preserves range")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    /// Septuplet with four-input roles; frame index 3 is the true middle frame.
    pub sequence: Sequence,
    /// Overlay support on every frame (index 3 is the ground-truth D-map).
    pub masks: Vec<Mask>,
    pub spec: SceneSpec,
}

impl SynthSample {
    pub fn dgt(&self) -> &Mask {
        &self.masks[SEPTUPLET_TARGET]
    }

    pub fn coverage(&self) -> f64 {
        self.dgt().mean()
    }
}

/// Overlay state shown on frame `t`; the target repeats the previous frame.
fn overlay_state(t: usize) -> usize {
    if t == SEPTUPLET_TARGET {
        SEPTUPLET_PREVIOUS
    } else {
        t
    }
}

pub fn generate_sequence(spec: &SceneSpec) -> Result<SynthSample> {
    spec.validate()?;
    let base = spec.base_texture();
    let (vx, vy) = spec.velocity;
    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut frame = translate(&base, vx * t as i64, vy * t as i64);
        let mut mask = Mask::zeros(spec.height, spec.width);
        for o in &spec.overlays {
            o.draw(&mut frame, &mut mask, overlay_state(t));
        }
        frames.push(frame);
        masks.push(mask);
    }
    let sequence = split_roles(&Sequence::new(frames)?, 4)?;
    Ok(SynthSample {
        sequence,
        masks,
        spec: spec.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    /// Velocity components are drawn from the even integers in this range.
    pub max_speed: i64,
    pub waves: usize,
    pub max_cycles: i64,
    /// Overall amplitude of the background texture.
    pub contrast: f64,
    /// Draw overlay color channels from {0, 1} instead of uniformly, so
    /// overlays stand out from the mid-gray background.
    pub extreme_colors: bool,
    pub p_hud: f64,
    pub p_counter: f64,
    pub p_text: f64,
    pub hud_size: (usize, usize),
    pub counter_digits: (usize, usize),
    pub counter_scale: (usize, usize),
    pub text_len: (usize, usize),
    pub text_scale: (usize, usize),
    /// Overlay layouts are resampled until the target coverage reaches this
    /// fraction (ignored when no overlay can be drawn).
    pub min_coverage: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            height: 64,
            width: 64,
            max_speed: 4,
            waves: 6,
            max_cycles: 6,
            contrast: 0.3,
            extreme_colors: false,
            p_hud: 0.8,
            p_counter: 0.6,
            p_text: 0.6,
            hud_size: (6, 20),
            counter_digits: (2, 4),
            counter_scale: (1, 2),
            text_len: (2, 5),
            text_scale: (1, 2),
            min_coverage: 0.0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_owned()));
        if self.height < 8 || self.width < 8 {
            return bad("synthetic frames must be at least 8x8");
        }
        if !(0.0..=0.5).contains(&self.contrast) {
            return bad("contrast must lie in [0, 0.5]");
        }
        if !(0..=MAX_SPEED).contains(&self.max_speed) {
            return bad("max_speed must lie in 0..=8");
        }
        for p in [self.p_hud, self.p_counter, self.p_text] {
            if !(0.0..=1.0).contains(&p) {
                return bad("overlay probabilities must lie in [0, 1]");
            }
        }
        for (lo, hi) in [
            self.hud_size,
            self.counter_digits,
            self.counter_scale,
            self.text_len,
            self.text_scale,
        ] {
            if lo == 0 || lo > hi {
                return bad("overlay ranges must satisfy 1 <= min <= max");
            }
        }
        if !(0.0..1.0).contains(&self.min_coverage) {
            return bad("min_coverage must lie in [0, 1)");
        }
        Ok(())
    }
}

fn random_color(rng: &mut ChaCha8Rng, extreme: bool) -> [f64; 3] {
    if extreme {
        [0; 3].map(|_: u8| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
    } else {
        [0; 3].map(|_: u8| io::dequantize(rng.gen()))
    }
}

fn sample_background(rng: &mut ChaCha8Rng, p: &SynthParams) -> Background {
    let base = [0; 3].map(|_: u8| rng.gen_range(0.35..0.65));
    let amp_each = p.contrast / (p.waves.max(1) as f64).sqrt();
    let waves = (0..p.waves)
        .map(|_| {
            let (mut cy, mut cx) = (0, 0);
            while cy == 0 && cx == 0 {
                cy = rng.gen_range(-p.max_cycles..=p.max_cycles);
                cx = rng.gen_range(-p.max_cycles..=p.max_cycles);
            }
            Wave {
                cycles_y: cy,
                cycles_x: cx,
                phase: rng.gen_range(0.0..TAU),
                amplitude: [0; 3].map(|_: u8| rng.gen_range(0.3..1.0) * amp_each),
            }
        })
        .collect();
    Background { base, waves }
}

fn sample_velocity(rng: &mut ChaCha8Rng, max_speed: i64) -> (i64, i64) {
    let evens: Vec<i64> = (-max_speed..=max_speed).filter(|v| v % 2 == 0).collect();
    if max_speed < 2 {
        return (0, 0);
    }
    loop {
        let v = (*evens.choose(rng).unwrap(), *evens.choose(rng).unwrap());
        if v != (0, 0) {
            return v;
        }
    }
}

fn sample_overlays(rng: &mut ChaCha8Rng, p: &SynthParams) -> Vec<SynthOverlay> {
    let (h, w) = (p.height, p.width);
    let mut out = Vec::new();
    if rng.gen_bool(p.p_hud) {
        let hh = rng.gen_range(p.hud_size.0..=p.hud_size.1).min(h);
        let hw = rng.gen_range(p.hud_size.0..=p.hud_size.1).min(w);
        out.push(SynthOverlay::Hud {
            top: rng.gen_range(0..=h - hh),
            left: rng.gen_range(0..=w - hw),
            height: hh,
            width: hw,
            color: random_color(rng, p.extreme_colors),
        });
    }
    if rng.gen_bool(p.p_counter) {
        let digits = rng.gen_range(p.counter_digits.0..=p.counter_digits.1);
        let scale = rng.gen_range(p.counter_scale.0..=p.counter_scale.1);
        let (bh, bw) = SynthOverlay::counter_box(scale, digits);
        if bh <= h && bw <= w {
            let box_color = random_color(rng, p.extreme_colors);
            let ink_color = box_color.map(|c| io::dequantize(255 - io::quantize(c)));
            out.push(SynthOverlay::Counter {
                top: rng.gen_range(0..=h - bh),
                left: rng.gen_range(0..=w - bw),
                scale,
                digits,
                start: rng.gen_range(0..10u64.pow(digits as u32)),
                box_color,
                ink_color,
            });
        }
    }
    if rng.gen_bool(p.p_text) {
        let charset: Vec<char> = font::CHARSET.chars().collect();
        let len = rng.gen_range(p.text_len.0..=p.text_len.1);
        let text: String = (0..len).map(|_| *charset.choose(rng).unwrap()).collect();
        let scale = rng.gen_range(p.text_scale.0..=p.text_scale.1);
        let (th, tw) = font::text_extent(&text, scale);
        if th <= h && tw <= w {
            let mut positions: Vec<Anchor> = (0..SEPTUPLET_LEN)
                .map(|_| Anchor {
                    top: rng.gen_range(0..=h - th) as i64,
                    left: rng.gen_range(0..=w - tw) as i64,
                })
                .collect();
            // never shown: the target uses the previous frame's state
            positions[SEPTUPLET_TARGET] = positions[SEPTUPLET_PREVIOUS];
            out.push(SynthOverlay::JumpText {
                text,
                scale,
                color: random_color(rng, p.extreme_colors),
                positions,
            });
        }
    }
    out
}

fn target_coverage(spec: &SceneSpec) -> f64 {
    let mut frame = Frame::filled(spec.height, spec.width, 0.0);
    let mut mask = Mask::zeros(spec.height, spec.width);
    for o in &spec.overlays {
        o.draw(&mut frame, &mut mask, SEPTUPLET_PREVIOUS);
    }
    mask.mean()
}

/// Samples a scene from `params`, deterministic in `seed`.
pub fn sample_scene(seed: u64, params: &SynthParams) -> Result<SceneSpec> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = sample_background(&mut rng, params);
    let velocity = sample_velocity(&mut rng, params.max_speed);
    let any_overlay = params.p_hud > 0.0 || params.p_counter > 0.0 || params.p_text > 0.0;
    let mut spec = SceneSpec {
        height: params.height,
        width: params.width,
        velocity,
        background,
        overlays: Vec::new(),
        frames: SEPTUPLET_LEN,
        seed,
    };
    for _ in 0..1000 {
        spec.overlays = sample_overlays(&mut rng, params);
        if !any_overlay || target_coverage(&spec) >= params.min_coverage {
            return Ok(spec);
        }
    }
    Err(Error::InvalidArgument(format!(
        "could not reach overlay coverage {} with the given parameters",
        params.min_coverage
    )))
}

/// Seed of sample `index` in a dataset generated from `seed`.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.gen()
}

pub fn sample_id(index: usize) -> String {
    format!("sample_{index:05}")
}

/// Writes `n` samples under `root` plus the manifest, returning the manifest.
pub fn generate_dataset(root: &Path, n: usize, seed: u64, params: &SynthParams) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    params.validate()?;
    std::fs::create_dir_all(root).map_err(|source| Error::Write {
        path: root.to_owned(),
        source,
    })?;
    let entries = (0..n)
        .into_par_iter()
        .map(|i| {
            let id = sample_id(i);
            let spec = sample_scene(sample_seed(seed, i as u64), params)?;
            let sample = generate_sequence(&spec)?;
            let dir = dataset::sample_dir(root, &id);
            dataset::write_sample(&dir, sample.sequence.frames(), sample.dgt())?;
            dataset::write_json(&dir.join("spec.json"), &spec)?;
            Ok(ManifestEntry {
                id: id.clone(),
                dir: id,
                coverage: sample.coverage(),
                details: serde_json::Value::Null,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        kind: "synth-gdm".into(),
        seed,
        params: serde_json::to_value(params)?,
        samples: entries,
    };
    manifest.write(root)?;
    Ok(manifest)
}

/// Generates samples in memory (no files).
pub fn generate_samples(n: usize, seed: u64, params: &SynthParams) -> Result<Vec<SynthSample>> {
    (0..n)
        .into_par_iter()
        .map(|i| generate_sequence(&sample_scene(sample_seed(seed, i as u64), params)?))
        .collect()
}
