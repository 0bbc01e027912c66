//! Side-by-side review panel: previous input | D-map | target with the D-map
//! outline drawn in red.

use dvfi_core::image::{Frame, Mask};
use dvfi_core::Result;

pub const GUTTER: usize = 4;
const GUTTER_VALUE: f64 = 1.0;
const OUTLINE: [f64; 3] = [1.0, 0.0, 0.0];

/// Width of a panel built from frames of width `w`.
pub fn panel_width(w: usize) -> usize {
    3 * w + 2 * GUTTER
}

/// Pixels with `d >= 0.5` that touch a pixel below 0.5 or the frame border.
fn outline(d: &Mask) -> Vec<bool> {
    let (h, w) = d.dims();
    let on = |y: usize, x: usize| d.get(y, x) >= 0.5;
    let mut edge = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !on(y, x) {
                continue;
            }
            let border = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
            edge[y * w + x] = border || !on(y - 1, x) || !on(y + 1, x) || !on(y, x - 1) || !on(y, x + 1);
        }
    }
    edge
}

pub fn render(previous: &Frame, d: &Mask, target: &Frame) -> Result<Frame> {
    previous.ensure_same_dims(target)?;
    d.ensure_dims(target.dims())?;
    let (h, w) = target.dims();
    let edge = outline(d);
    let stride = w + GUTTER;
    Frame::from_fn(h, panel_width(w), |y, x| {
        let (tile, tx) = (x / stride, x % stride);
        if tx >= w {
            return [GUTTER_VALUE; 3];
        }
        match tile {
            0 => previous.pixel(y, tx),
            1 => [d.get(y, tx); 3],
            _ if edge[y * w + tx] => OUTLINE,
            _ => target.pixel(y, tx),
        }
    })
}
