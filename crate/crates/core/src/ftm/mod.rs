//! Figure Mixing and Text Mixing: opaque overlays composited onto
//! septuplets, plus the ground-truth discontinuity map they induce.
//!
//! Figures are drawn identically on all seven frames. Text follows one of
//! four temporal modes; on the target frame (index 3) it always matches the
//! preceding frames, so every overlay pixel on the target can be recovered by
//! copying frame index 2.

pub mod raster;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::font;
use crate::image::{Frame, Mask, Sequence, SEPTUPLET_LEN, SEPTUPLET_TARGET};

pub use raster::{rasterize_overlay, support_pixels};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub top: i64,
    pub left: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Geometry {
    Rectangle {
        top: i64,
        left: i64,
        height: usize,
        width: usize,
    },
    /// Pixel `(y, x)` is covered when its distance to the center is at most
    /// `radius` (pixel centers sit on integer coordinates).
    Circle {
        center_y: f64,
        center_x: f64,
        radius: f64,
    },
    Line {
        y0: f64,
        x0: f64,
        y1: f64,
        x1: f64,
        thickness: f64,
    },
    Text {
        text: String,
        scale: usize,
        anchor: Anchor,
    },
}

impl Geometry {
    pub fn is_text(&self) -> bool {
        matches!(self, Geometry::Text { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TemporalMode {
    Static,
    Appear,
    Disappear,
    Jump,
}

impl TemporalMode {
    pub const ALL: [TemporalMode; 4] = [
        TemporalMode::Static,
        TemporalMode::Appear,
        TemporalMode::Disappear,
        TemporalMode::Jump,
    ];
}

/// Where an overlay is drawn on a given frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Anchor,
    Jump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlaySpec {
    pub geometry: Geometry,
    pub color: [f64; 3],
    pub mode: TemporalMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jump_position: Option<Anchor>,
}

impl OverlaySpec {
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidArgument(m));
        if !self.color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return invalid(format!("overlay color {:?} outside [0, 1]", self.color));
        }
        match &self.geometry {
            Geometry::Text { text, scale, .. } => {
                if !font::is_drawable(text) {
                    return invalid(format!("text {text:?} must be non-empty [A-Za-z0-9]"));
                }
                if !(1..=4).contains(scale) {
                    return invalid(format!("glyph scale {scale} not in 1..=4"));
                }
            }
            _ if self.mode != TemporalMode::Static => {
                return invalid("figures must be STATIC".into());
            }
            Geometry::Circle { radius, .. } if !(*radius > 0.0) => {
                return invalid(format!("circle radius {radius} must be positive"));
            }
            Geometry::Line { thickness, .. } if !(*thickness > 0.0) => {
                return invalid(format!("line thickness {thickness} must be positive"));
            }
            _ => {}
        }
        if (self.mode == TemporalMode::Jump) != self.jump_position.is_some() {
            return invalid("jump_position must be present exactly for JUMP overlays".into());
        }
        Ok(())
    }

    /// Placement on septuplet frame `frame` (0-based), or `None` when the
    /// overlay is absent there.
    pub fn placement_on(&self, frame: usize) -> Option<Placement> {
        let past = frame <= SEPTUPLET_TARGET;
        match self.mode {
            TemporalMode::Static => Some(Placement::Anchor),
            TemporalMode::Appear => (!past).then_some(Placement::Anchor),
            TemporalMode::Disappear => past.then_some(Placement::Anchor),
            TemporalMode::Jump => Some(if past { Placement::Anchor } else { Placement::Jump }),
        }
    }
}

/// Everything needed to replay an augmentation bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub seed: u64,
    pub overlays: Vec<OverlaySpec>,
    pub fm_applied: bool,
    pub tm_applied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub original: Sequence,
    pub augmented: Sequence,
    pub record: AugmentationRecord,
    pub dgt: Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FtmParams {
    pub p_fm: f64,
    pub p_tm: f64,
    pub figures: (usize, usize),
    pub figure_size: (usize, usize),
    pub texts: (usize, usize),
    pub text_len: (usize, usize),
    pub glyph_scale: (usize, usize),
}

impl Default for FtmParams {
    fn default() -> Self {
        FtmParams {
            p_fm: 0.5,
            p_tm: 0.5,
            figures: (1, 4),
            figure_size: (8, 64),
            texts: (1, 3),
            text_len: (3, 12),
            glyph_scale: (1, 4),
        }
    }
}

impl FtmParams {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (usize, usize)| lo <= hi;
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(self.p_fm) || !prob_ok(self.p_tm) {
            return Err(Error::InvalidArgument("FTM probabilities must lie in [0, 1]".into()));
        }
        if ![
            self.figures,
            self.figure_size,
            self.texts,
            self.text_len,
            self.glyph_scale,
        ]
        .into_iter()
        .all(range_ok)
        {
            return Err(Error::InvalidArgument("FTM ranges must satisfy min <= max".into()));
        }
        if self.figure_size.0 == 0 || self.text_len.0 == 0 {
            return Err(Error::InvalidArgument(
                "figure size and text length must be >= 1".into(),
            ));
        }
        if self.glyph_scale.0 < 1 || self.glyph_scale.1 > 4 {
            return Err(Error::InvalidArgument("glyph scale must lie in 1..=4".into()));
        }
        Ok(())
    }
}

/// A source of randomly sampled overlays for one augmentation family.
pub trait OverlaySampler {
    fn name(&self) -> &'static str;
    fn sample(&self, rng: &mut ChaCha8Rng, dims: (usize, usize)) -> Vec<OverlaySpec>;
}

pub struct FigureMixing<'a>(pub &'a FtmParams);
pub struct TextMixing<'a>(pub &'a FtmParams);

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    // 8-bit representable so files round-trip exactly
    [0; 3].map(|_: u8| rng.gen_range(0..=255u8) as f64 / 255.0)
}

fn clamp_range((lo, hi): (usize, usize), max: usize) -> (usize, usize) {
    let hi = hi.min(max).max(1);
    (lo.min(hi).max(1), hi)
}

impl OverlaySampler for FigureMixing<'_> {
    fn name(&self) -> &'static str {
        "figure-mixing"
    }

    fn sample(&self, rng: &mut ChaCha8Rng, (h, w): (usize, usize)) -> Vec<OverlaySpec> {
        let p = self.0;
        let count = rng.gen_range(p.figures.0..=p.figures.1);
        let (smin, smax) = clamp_range(p.figure_size, h.max(w));
        (0..count)
            .map(|_| {
                let geometry = match rng.gen_range(0..3) {
                    0 => {
                        let fh = rng.gen_range(smin..=smax).min(h);
                        let fw = rng.gen_range(smin..=smax).min(w);
                        Geometry::Rectangle {
                            top: rng.gen_range(0..=h - fh) as i64,
                            left: rng.gen_range(0..=w - fw) as i64,
                            height: fh,
                            width: fw,
                        }
                    }
                    1 => Geometry::Circle {
                        center_y: rng.gen_range(0..h) as f64,
                        center_x: rng.gen_range(0..w) as f64,
                        radius: rng.gen_range(smin..=smax) as f64 / 2.0,
                    },
                    _ => {
                        let len = rng.gen_range(smin..=smax) as f64;
                        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                        let y0 = rng.gen_range(0..h) as f64;
                        let x0 = rng.gen_range(0..w) as f64;
                        Geometry::Line {
                            y0,
                            x0,
                            y1: (y0 + len * angle.sin()).round(),
                            x1: (x0 + len * angle.cos()).round(),
                            thickness: rng.gen_range(1..=4) as f64,
                        }
                    }
                };
                OverlaySpec {
                    geometry,
                    color: random_color(rng),
                    mode: TemporalMode::Static,
                    jump_position: None,
                }
            })
            .collect()
    }
}

impl OverlaySampler for TextMixing<'_> {
    fn name(&self) -> &'static str {
        "text-mixing"
    }

    fn sample(&self, rng: &mut ChaCha8Rng, (h, w): (usize, usize)) -> Vec<OverlaySpec> {
        let p = self.0;
        let charset: Vec<char> = font::CHARSET.chars().collect();
        let count = rng.gen_range(p.texts.0..=p.texts.1);
        (0..count)
            .map(|_| {
                let len = rng.gen_range(p.text_len.0..=p.text_len.1);
                let text: String = (0..len).map(|_| *charset.choose(rng).unwrap()).collect();
                let scale = rng.gen_range(p.glyph_scale.0..=p.glyph_scale.1);
                let (th, tw) = font::text_extent(&text, scale);
                let place = |rng: &mut ChaCha8Rng| Anchor {
                    top: rng.gen_range(0..=h.saturating_sub(th)) as i64,
                    left: rng.gen_range(0..=w.saturating_sub(tw)) as i64,
                };
                let anchor = place(rng);
                let mode = *TemporalMode::ALL.choose(rng).unwrap();
                let jump_position = (mode == TemporalMode::Jump).then(|| {
                    let mut b = place(rng);
                    for _ in 0..8 {
                        if b != anchor {
                            break;
                        }
                        b = place(rng);
                    }
                    b
                });
                OverlaySpec {
                    geometry: Geometry::Text { text, scale, anchor },
                    color: random_color(rng),
                    mode,
                    jump_position,
                }
            })
            .collect()
    }
}

fn require_septuplet(seq: &Sequence) -> Result<()> {
    if seq.len() != SEPTUPLET_LEN {
        return Err(Error::FrameCount {
            expected: SEPTUPLET_LEN,
            actual: seq.len(),
        });
    }
    if let Some(r) = seq.roles() {
        if r.target != SEPTUPLET_TARGET {
            return Err(Error::InvalidArgument(format!(
                "overlay mixing needs the target at frame index {SEPTUPLET_TARGET}, got {}",
                r.target
            )));
        }
    }
    Ok(())
}

/// Paints `overlays` in list order onto every frame they are present on.
/// Overlays that fall entirely outside the frame draw nothing.
pub fn composite(seq: &Sequence, overlays: &[OverlaySpec]) -> Result<Sequence> {
    require_septuplet(seq)?;
    let dims = seq.dims();
    let mut supports = Vec::with_capacity(overlays.len());
    for o in overlays {
        o.validate()?;
        let mut per_placement = [None, None];
        for (slot, placement) in [Placement::Anchor, Placement::Jump].into_iter().enumerate() {
            if placement == Placement::Jump && o.mode != TemporalMode::Jump {
                continue;
            }
            per_placement[slot] = support_pixels(o, placement, dims).ok();
        }
        supports.push(per_placement);
    }
    Ok(seq.map_frames(|i, frame| {
        let mut out: Frame = frame.clone();
        for (o, sup) in overlays.iter().zip(&supports) {
            let slot = match o.placement_on(i) {
                Some(Placement::Anchor) => 0,
                Some(Placement::Jump) => 1,
                None => continue,
            };
            for &(y, x) in sup[slot].iter().flatten() {
                out.set_pixel(y, x, o.color);
            }
        }
        out
    }))
}

pub fn apply_figure_mixing(
    seq: &Sequence,
    rng: &mut ChaCha8Rng,
    params: &FtmParams,
) -> Result<(Sequence, Vec<OverlaySpec>)> {
    require_septuplet(seq)?;
    let overlays = FigureMixing(params).sample(rng, seq.dims());
    Ok((composite(seq, &overlays)?, overlays))
}

pub fn apply_text_mixing(
    seq: &Sequence,
    rng: &mut ChaCha8Rng,
    params: &FtmParams,
) -> Result<(Sequence, Vec<OverlaySpec>)> {
    require_septuplet(seq)?;
    let overlays = TextMixing(params).sample(rng, seq.dims());
    Ok((composite(seq, &overlays)?, overlays))
}

/// Union of the supports of every overlay visible on the target frame.
pub fn derive_dgt(record: &AugmentationRecord, dims: (usize, usize)) -> Result<Mask> {
    let (h, w) = dims;
    let mut dgt = Mask::zeros(h, w);
    for o in &record.overlays {
        o.validate()?;
        let Some(placement) = o.placement_on(SEPTUPLET_TARGET) else {
            continue;
        };
        if let Ok(pixels) = support_pixels(o, placement, dims) {
            for (y, x) in pixels {
                dgt.set(y, x, 1.0);
            }
        }
    }
    Ok(dgt)
}

/// Figure Mixing and Text Mixing, each gated by its own probability.
pub fn apply_ftm(seq: &Sequence, seed: u64, params: &FtmParams) -> Result<AugmentedSample> {
    require_septuplet(seq)?;
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fm_applied = rng.gen_bool(params.p_fm);
    let tm_applied = rng.gen_bool(params.p_tm);
    let dims = seq.dims();
    let mut overlays = Vec::new();
    if fm_applied {
        overlays.extend(FigureMixing(params).sample(&mut rng, dims));
    }
    if tm_applied {
        overlays.extend(TextMixing(params).sample(&mut rng, dims));
    }
    let record = AugmentationRecord {
        seed,
        overlays,
        fm_applied,
        tm_applied,
    };
    replay(seq, record)
}

/// Rebuilds an augmented sample from its record without drawing any
/// random numbers.
pub fn replay(original: &Sequence, record: AugmentationRecord) -> Result<AugmentedSample> {
    let augmented = composite(original, &record.overlays)?;
    let dgt = derive_dgt(&record, original.dims())?;
    Ok(AugmentedSample {
        original: original.clone(),
        augmented,
        record,
        dgt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{split_roles, SEPTUPLET_PREVIOUS};

    fn textured_septuplet(h: usize, w: usize, salt: u64) -> Sequence {
        let mut rng = ChaCha8Rng::seed_from_u64(salt);
        let frames = (0..7)
            .map(|_| Frame::from_fn(h, w, |_, _| [0; 3].map(|_: u8| rng.gen_range(0..=255u8) as f64 / 255.0)).unwrap())
            .collect();
        split_roles(&Sequence::new(frames).unwrap(), 4).unwrap()
    }

    fn text(mode: TemporalMode, jump: Option<Anchor>) -> OverlaySpec {
        OverlaySpec {
            geometry: Geometry::Text {
                text: "Ab3".into(),
                scale: 2,
                anchor: Anchor { top: 2, left: 3 },
            },
            color: [1.0, 1.0, 0.0],
            mode,
            jump_position: jump,
        }
    }

    fn differs(a: &Frame, b: &Frame) -> bool {
        a != b
    }

    #[test]
    fn zero_figures_leave_sequence_unchanged() {
        let seq = textured_septuplet(16, 16, 1);
        let params = FtmParams {
            figures: (0, 0),
            ..FtmParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (out, overlays) = apply_figure_mixing(&seq, &mut rng, &params).unwrap();
        assert!(overlays.is_empty());
        assert_eq!(out, seq);
    }

    #[test]
    fn opaque_rectangle_on_all_frames() {
        let seq = textured_septuplet(20, 20, 2);
        let rect = OverlaySpec {
            geometry: Geometry::Rectangle {
                top: 4,
                left: 5,
                height: 6,
                width: 7,
            },
            color: [0.0, 1.0, 0.0],
            mode: TemporalMode::Static,
            jump_position: None,
        };
        let out = composite(&seq, std::slice::from_ref(&rect)).unwrap();
        for (a, o) in out.frames().iter().zip(seq.frames()) {
            for y in 0..20 {
                for x in 0..20 {
                    let inside = (4..10).contains(&y) && (5..12).contains(&x);
                    let expect = if inside { rect.color } else { o.pixel(y, x) };
                    assert_eq!(a.pixel(y, x), expect);
                }
            }
        }
    }

    #[test]
    fn figure_mixing_is_deterministic() {
        let seq = textured_septuplet(32, 32, 4);
        let params = FtmParams::default();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            apply_figure_mixing(&seq, &mut rng, &params).unwrap()
        };
        assert_eq!(run(), run());
        let (_, overlays) = run();
        assert!(overlays
            .iter()
            .all(|o| o.mode == TemporalMode::Static && !o.geometry.is_text()));
    }

    #[test]
    fn text_modes_follow_frame_membership() {
        let seq = textured_septuplet(24, 40, 5);
        let b = Anchor { top: 12, left: 15 };
        let cases = [
            (TemporalMode::Static, None, [true; 7]),
            (
                TemporalMode::Appear,
                None,
                [false, false, false, false, true, true, true],
            ),
            (
                TemporalMode::Disappear,
                None,
                [true, true, true, true, false, false, false],
            ),
        ];
        for (mode, jump, present) in cases {
            let o = text(mode, jump);
            let out = composite(&seq, std::slice::from_ref(&o)).unwrap();
            let (support, _) = rasterize_overlay(&o, Placement::Anchor, seq.dims()).unwrap();
            for i in 0..7 {
                let f = out.frame(i);
                let on_support = (0..24)
                    .flat_map(|y| (0..40).map(move |x| (y, x)))
                    .filter(|&(y, x)| support.get(y, x) == 1.0)
                    .all(|(y, x)| f.pixel(y, x) == o.color);
                assert_eq!(on_support, present[i], "{mode:?} frame {i}");
                assert_eq!(differs(f, seq.frame(i)), present[i], "{mode:?} frame {i}");
            }
        }

        let jump = text(TemporalMode::Jump, Some(b));
        let out = composite(&seq, std::slice::from_ref(&jump)).unwrap();
        let (at_a, _) = rasterize_overlay(&jump, Placement::Anchor, seq.dims()).unwrap();
        let (at_b, _) = rasterize_overlay(&jump, Placement::Jump, seq.dims()).unwrap();
        let target = out.frame(SEPTUPLET_TARGET);
        let mut a_pixels = 0;
        for y in 0..24 {
            for x in 0..40 {
                if at_a.get(y, x) == 1.0 {
                    a_pixels += 1;
                    assert_eq!(target.pixel(y, x), jump.color);
                } else if at_b.get(y, x) == 1.0 {
                    // B is never drawn on the target
                    assert_eq!(target.pixel(y, x), seq.frame(SEPTUPLET_TARGET).pixel(y, x));
                }
            }
        }
        assert!(a_pixels > 0);
        for i in 4..7 {
            for y in 0..24 {
                for x in 0..40 {
                    if at_b.get(y, x) == 1.0 {
                        assert_eq!(out.frame(i).pixel(y, x), jump.color);
                    }
                }
            }
        }
    }

    #[test]
    fn dgt_cases() {
        let dims = (24, 40);
        let empty = AugmentationRecord {
            seed: 0,
            overlays: vec![],
            fm_applied: false,
            tm_applied: false,
        };
        assert_eq!(derive_dgt(&empty, dims).unwrap().popcount(), 0);

        let appear = AugmentationRecord {
            overlays: vec![text(TemporalMode::Appear, None)],
            tm_applied: true,
            ..empty.clone()
        };
        assert_eq!(derive_dgt(&appear, dims).unwrap().popcount(), 0);

        let jump = text(TemporalMode::Jump, Some(Anchor { top: 12, left: 15 }));
        let rec = AugmentationRecord {
            overlays: vec![jump.clone()],
            tm_applied: true,
            ..empty
        };
        let (at_a, _) = rasterize_overlay(&jump, Placement::Anchor, dims).unwrap();
        assert_eq!(derive_dgt(&rec, dims).unwrap(), at_a);
    }

    #[test]
    fn static_rectangle_dgt_equals_pixel_difference() {
        // black content, white figure: no coincidences, so differencing and
        // support agree exactly
        let frames = vec![Frame::filled(16, 16, 0.0); 7];
        let seq = split_roles(&Sequence::new(frames).unwrap(), 4).unwrap();
        let record = AugmentationRecord {
            seed: 0,
            overlays: vec![OverlaySpec {
                geometry: Geometry::Rectangle {
                    top: 3,
                    left: 2,
                    height: 5,
                    width: 9,
                },
                color: [1.0, 1.0, 1.0],
                mode: TemporalMode::Static,
                jump_position: None,
            }],
            fm_applied: true,
            tm_applied: false,
        };
        let s = replay(&seq, record).unwrap();
        let orig = s.original.frame(SEPTUPLET_TARGET);
        let aug = s.augmented.frame(SEPTUPLET_TARGET);
        for y in 0..16 {
            for x in 0..16 {
                let diff = (0..3).any(|c| (aug.get(y, x, c) - orig.get(y, x, c)).abs() > 0.0);
                assert_eq!(s.dgt.get(y, x) == 1.0, diff);
            }
        }
        assert_eq!(s.dgt.popcount(), 45);
    }

    #[test]
    fn ftm_gates() {
        let seq = textured_septuplet(32, 32, 6);
        let off = FtmParams {
            p_fm: 0.0,
            p_tm: 0.0,
            ..FtmParams::default()
        };
        let s = apply_ftm(&seq, 11, &off).unwrap();
        assert_eq!(s.augmented, seq);
        assert_eq!(s.dgt.popcount(), 0);
        assert!(!s.record.fm_applied && !s.record.tm_applied);

        let fm_only = FtmParams {
            p_fm: 1.0,
            p_tm: 0.0,
            ..FtmParams::default()
        };
        let a = apply_ftm(&seq, 12, &fm_only).unwrap();
        assert_eq!(a, apply_ftm(&seq, 12, &fm_only).unwrap());
        assert!(a.record.fm_applied && !a.record.tm_applied);
        assert_eq!(replay(&seq, a.record.clone()).unwrap(), a);
    }

    #[test]
    fn dgt_support_is_explained_by_differences_or_coincidence() {
        let params = FtmParams {
            p_fm: 1.0,
            p_tm: 1.0,
            ..FtmParams::default()
        };
        for seed in 0..40 {
            let seq = textured_septuplet(48, 48, 100 + seed);
            let s = apply_ftm(&seq, seed, &params).unwrap();
            let orig = s.original.frame(SEPTUPLET_TARGET);
            let aug = s.augmented.frame(SEPTUPLET_TARGET);
            for y in 0..48 {
                for x in 0..48 {
                    if s.dgt.get(y, x) != 1.0 {
                        continue;
                    }
                    let changed = aug.pixel(y, x) != orig.pixel(y, x);
                    let coincidence = s.record.overlays.iter().any(|o| o.color == orig.pixel(y, x));
                    assert!(changed || coincidence, "seed {seed} ({y},{x})");
                }
            }
        }
    }

    #[test]
    fn copy_consistency_and_locality() {
        let params = FtmParams {
            p_fm: 0.8,
            p_tm: 0.8,
            ..FtmParams::default()
        };
        for seed in 0..60 {
            let seq = textured_septuplet(40, 56, seed);
            let s = apply_ftm(&seq, seed * 7 + 1, &params).unwrap();
            assert!(s.dgt.is_binary());
            let prev = s.augmented.frame(SEPTUPLET_PREVIOUS);
            let target = s.augmented.frame(SEPTUPLET_TARGET);
            let mut any = Mask::zeros(40, 56);
            for o in &s.record.overlays {
                for p in [Placement::Anchor, Placement::Jump] {
                    if p == Placement::Jump && o.mode != TemporalMode::Jump {
                        continue;
                    }
                    if let Ok((m, _)) = rasterize_overlay(o, p, (40, 56)) {
                        any.union_with(&m).unwrap();
                    }
                }
            }
            for y in 0..40 {
                for x in 0..56 {
                    if s.dgt.get(y, x) == 1.0 {
                        assert_eq!(target.pixel(y, x), prev.pixel(y, x));
                    }
                    if any.get(y, x) == 0.0 {
                        for i in 0..7 {
                            assert_eq!(s.augmented.frame(i).pixel(y, x), seq.frame(i).pixel(y, x));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn record_json_round_trip() {
        let seq = textured_septuplet(32, 32, 9);
        let params = FtmParams {
            p_fm: 1.0,
            p_tm: 1.0,
            ..FtmParams::default()
        };
        let s = apply_ftm(&seq, u64::MAX - 3, &params).unwrap();
        let json = serde_json::to_string(&s.record).unwrap();
        let back: AugmentationRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s.record);
        assert_eq!(replay(&seq, back).unwrap().augmented, s.augmented);
    }

    #[test]
    fn invalid_overlays_rejected() {
        let mut bad = text(TemporalMode::Static, None);
        if let Geometry::Text { text, .. } = &mut bad.geometry {
            *text = "a b".into();
        }
        assert!(bad.validate().is_err());
        let jumping_figure = OverlaySpec {
            geometry: Geometry::Circle {
                center_y: 1.0,
                center_x: 1.0,
                radius: 2.0,
            },
            color: [0.0; 3],
            mode: TemporalMode::Jump,
            jump_position: Some(Anchor { top: 0, left: 0 }),
        };
        assert!(jumping_figure.validate().is_err());
        assert!(text(TemporalMode::Jump, None).validate().is_err());
        assert!(text(TemporalMode::Static, Some(Anchor { top: 0, left: 0 }))
            .validate()
            .is_err());
    }

    #[test]
    fn non_septuplet_rejected() {
        let seq = Sequence::new(vec![Frame::filled(4, 4, 0.5); 6]).unwrap();
        assert!(apply_ftm(&seq, 0, &FtmParams::default()).is_err());
    }
}
