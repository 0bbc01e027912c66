//! Geometry and glyph rasterization for overlays.

use super::{Anchor, Geometry, OverlaySpec, Placement};
use crate::error::{Error, Result};
use crate::font;
use crate::image::{Frame, Mask};

/// Pixels covered by `spec` drawn at `placement`, in row-major order.
pub fn support_pixels(spec: &OverlaySpec, placement: Placement, dims: (usize, usize)) -> Result<Vec<(usize, usize)>> {
    let (h, w) = dims;
    let mut out = Vec::new();
    match &spec.geometry {
        Geometry::Rectangle {
            top,
            left,
            height,
            width,
        } => {
            let y0 = (*top).max(0) as usize;
            let x0 = (*left).max(0) as usize;
            let y1 = (top + *height as i64).clamp(0, h as i64) as usize;
            let x1 = (left + *width as i64).clamp(0, w as i64) as usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    out.push((y, x));
                }
            }
        }
        Geometry::Circle {
            center_y,
            center_x,
            radius,
        } => {
            let r2 = radius * radius;
            let (ylo, yhi) = span(*center_y, *radius, h);
            let (xlo, xhi) = span(*center_x, *radius, w);
            for y in ylo..yhi {
                for x in xlo..xhi {
                    let dy = y as f64 - center_y;
                    let dx = x as f64 - center_x;
                    if dy * dy + dx * dx <= r2 {
                        out.push((y, x));
                    }
                }
            }
        }
        Geometry::Line {
            y0,
            x0,
            y1,
            x1,
            thickness,
        } => {
            let half = thickness / 2.0;
            let (ylo, yhi) = span(y0.min(*y1), half, h);
            let (ylo2, yhi2) = span(y0.max(*y1), half, h);
            let (xlo, xhi) = span(x0.min(*x1), half, w);
            let (xlo2, xhi2) = span(x0.max(*x1), half, w);
            for y in ylo.min(ylo2)..yhi.max(yhi2) {
                for x in xlo.min(xlo2)..xhi.max(xhi2) {
                    if segment_distance(y as f64, x as f64, *y0, *x0, *y1, *x1) <= half {
                        out.push((y, x));
                    }
                }
            }
        }
        Geometry::Text { text, scale, anchor } => {
            let at = match placement {
                Placement::Anchor => *anchor,
                Placement::Jump => spec.jump_position.ok_or_else(|| {
                    Error::InvalidArgument("jump placement requested for a non-jumping overlay".into())
                })?,
            };
            let Anchor { top, left } = at;
            font::for_each_lit_pixel(text, *scale, |dy, dx| {
                let y = top + dy as i64;
                let x = left + dx as i64;
                if (0..h as i64).contains(&y) && (0..w as i64).contains(&x) {
                    out.push((y as usize, x as usize));
                }
            });
            out.sort_unstable();
        }
    }
    if out.is_empty() {
        return Err(Error::OverlayOutsideFrame { height: h, width: w });
    }
    Ok(out)
}

/// Binary support mask and the color layer (spec color on the support,
/// zero elsewhere).
pub fn rasterize_overlay(spec: &OverlaySpec, placement: Placement, dims: (usize, usize)) -> Result<(Mask, Frame)> {
    spec.validate()?;
    let pixels = support_pixels(spec, placement, dims)?;
    let (h, w) = dims;
    let mut support = Mask::zeros(h, w);
    let mut layer = Frame::filled(h, w, 0.0);
    for (y, x) in pixels {
        support.set(y, x, 1.0);
        layer.set_pixel(y, x, spec.color);
    }
    Ok((support, layer))
}

/// Integer pixel range `[lo, hi)` of centers within `reach` of `c`.
fn span(c: f64, reach: f64, limit: usize) -> (usize, usize) {
    let lo = (c - reach).ceil().max(0.0);
    let hi = ((c + reach).floor() + 1.0).clamp(0.0, limit as f64);
    if lo >= hi {
        return (0, 0);
    }
    (lo as usize, hi as usize)
}

fn segment_distance(py: f64, px: f64, y0: f64, x0: f64, y1: f64, x1: f64) -> f64 {
    let (dy, dx) = (y1 - y0, x1 - x0);
    let len2 = dy * dy + dx * dx;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((py - y0) * dy + (px - x0) * dx) / len2).clamp(0.0, 1.0)
    };
    let (qy, qx) = (y0 + t * dy, x0 + t * dx);
    ((py - qy).powi(2) + (px - qx).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ftm::TemporalMode;

    fn figure(geometry: Geometry) -> OverlaySpec {
        OverlaySpec {
            geometry,
            color: [0.2, 0.4, 0.6],
            mode: TemporalMode::Static,
            jump_position: None,
        }
    }

    #[test]
    fn rectangle_popcount_matches_point_test() {
        let spec = figure(Geometry::Rectangle {
            top: 5,
            left: 7,
            height: 10,
            width: 20,
        });
        let (support, layer) = rasterize_overlay(&spec, Placement::Anchor, (40, 40)).unwrap();
        let mut brute = 0;
        for y in 0..40 {
            for x in 0..40 {
                let inside = (5..15).contains(&y) && (7..27).contains(&x);
                brute += inside as usize;
                assert_eq!(support.get(y, x) == 1.0, inside);
                let expect = if inside { spec.color } else { [0.0; 3] };
                assert_eq!(layer.pixel(y, x), expect);
            }
        }
        assert_eq!(brute, 200);
        assert_eq!(support.popcount(), 200);
        assert!(support.is_binary());
    }

    #[test]
    fn degenerate_circle_is_one_pixel() {
        let spec = figure(Geometry::Circle {
            center_y: 6.0,
            center_x: 3.0,
            radius: 0.5,
        });
        let (support, _) = rasterize_overlay(&spec, Placement::Anchor, (10, 10)).unwrap();
        assert_eq!(support.popcount(), 1);
        assert_eq!(support.get(6, 3), 1.0);
    }

    #[test]
    fn circle_matches_brute_force() {
        let spec = figure(Geometry::Circle {
            center_y: 9.3,
            center_x: -1.5,
            radius: 6.2,
        });
        let (support, _) = rasterize_overlay(&spec, Placement::Anchor, (20, 12)).unwrap();
        for y in 0..20 {
            for x in 0..12 {
                let d2 = (y as f64 - 9.3).powi(2) + (x as f64 + 1.5).powi(2);
                assert_eq!(support.get(y, x) == 1.0, d2 <= 6.2 * 6.2, "({y},{x})");
            }
        }
    }

    #[test]
    fn line_matches_brute_force() {
        let spec = figure(Geometry::Line {
            y0: 2.0,
            x0: 1.0,
            y1: 14.5,
            x1: 20.0,
            thickness: 3.0,
        });
        let (support, _) = rasterize_overlay(&spec, Placement::Anchor, (16, 24)).unwrap();
        for y in 0..16 {
            for x in 0..24 {
                let d = segment_distance(y as f64, x as f64, 2.0, 1.0, 14.5, 20.0);
                assert_eq!(support.get(y, x) == 1.0, d <= 1.5, "({y},{x})");
            }
        }
        assert!(support.popcount() > 0);
    }

    #[test]
    fn text_scale_squared_law() {
        let a = font::glyph_popcount('A').unwrap();
        for scale in 1..=4 {
            let spec = OverlaySpec {
                geometry: Geometry::Text {
                    text: "A".into(),
                    scale,
                    anchor: Anchor { top: 1, left: 2 },
                },
                color: [1.0, 1.0, 1.0],
                mode: TemporalMode::Static,
                jump_position: None,
            };
            let (support, _) = rasterize_overlay(&spec, Placement::Anchor, (40, 40)).unwrap();
            assert_eq!(support.popcount(), scale * scale * a);
        }
    }

    #[test]
    fn jump_placement_moves_text() {
        let spec = OverlaySpec {
            geometry: Geometry::Text {
                text: "Hi".into(),
                scale: 1,
                anchor: Anchor { top: 0, left: 0 },
            },
            color: [1.0, 0.0, 0.0],
            mode: TemporalMode::Jump,
            jump_position: Some(Anchor { top: 10, left: 12 }),
        };
        let a = support_pixels(&spec, Placement::Anchor, (20, 30)).unwrap();
        let b = support_pixels(&spec, Placement::Jump, (20, 30)).unwrap();
        assert_eq!(a.len(), b.len());
        for (&(ya, xa), &(yb, xb)) in a.iter().zip(&b) {
            assert_eq!((ya + 10, xa + 12), (yb, xb));
        }
    }

    #[test]
    fn overlay_outside_frame_is_rejected() {
        let spec = figure(Geometry::Rectangle {
            top: 50,
            left: 0,
            height: 3,
            width: 3,
        });
        assert!(matches!(
            rasterize_overlay(&spec, Placement::Anchor, (10, 10)),
            Err(Error::OverlayOutsideFrame { .. })
        ));
        let far = figure(Geometry::Circle {
            center_y: -5.0,
            center_x: -5.0,
            radius: 2.0,
        });
        assert!(rasterize_overlay(&far, Placement::Anchor, (10, 10)).is_err());
    }

    #[test]
    fn partially_visible_rectangle_is_clipped() {
        let spec = figure(Geometry::Rectangle {
            top: -2,
            left: 8,
            height: 5,
            width: 5,
        });
        let (support, _) = rasterize_overlay(&spec, Placement::Anchor, (10, 10)).unwrap();
        assert_eq!(support.popcount(), 3 * 2);
    }
}
