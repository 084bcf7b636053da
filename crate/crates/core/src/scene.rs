//! Deterministic synthetic scenes with natural-image-like content: smooth
//! shading, occluding shapes with sharp edges, and fine texture.

use rand::Rng;

use crate::error::Result;
use crate::image::{Encoding, Image};
use crate::rng::stream_rng;

enum Shape {
    Disc { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
        }
    }
}

/// A `height x width` scene in `[0.05, 0.95]` with `channels` (1 or 3) channels.
pub fn natural_scene(height: usize, width: usize, channels: usize, seed: u64) -> Result<Image> {
    let mut rng = stream_rng(seed, 0);
    let (hf, wf) = (height as f64, width as f64);
    let scale = hf.min(wf);
    let shape_count = 6 + (height * width / 1024).min(18);
    let mut shapes = Vec::with_capacity(shape_count);
    for _ in 0..shape_count {
        let cx = rng.random_range(0.0..wf);
        let cy = rng.random_range(0.0..hf);
        let size = rng.random_range(0.06..0.3) * scale;
        let shape = if rng.random_bool(0.5) {
            Shape::Disc { cx, cy, r: size }
        } else {
            let aspect = rng.random_range(0.4..2.5);
            Shape::Rect {
                x0: cx - size * aspect,
                y0: cy - size / aspect,
                x1: cx + size * aspect,
                y1: cy + size / aspect,
            }
        };
        let color: [f64; 3] = [
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
        ];
        let textured = rng.random_bool(0.4);
        let freq = rng.random_range(0.4..1.6);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        shapes.push((shape, color, textured, freq, angle));
    }
    let shading = [
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.3..0.3),
        rng.random_range(0.3..0.6),
    ];
    Image::from_fn(height, width, channels, |c, y, x| {
        let (xf, yf) = (x as f64, y as f64);
        let mut v = shading[2] + shading[0] * (xf / wf - 0.5) + shading[1] * (yf / hf - 0.5);
        v += 0.05 * (xf * 0.21 + yf * 0.13).sin() * (yf * 0.17).cos();
        for (shape, color, textured, freq, angle) in &shapes {
            if shape.contains(xf, yf) {
                v = color[c.min(2)];
                if *textured {
                    let t = xf * angle.cos() + yf * angle.sin();
                    v += 0.08 * (freq * t).sin();
                }
            }
        }
        v.clamp(0.05, 0.95)
    })
    .map(|img| img.with_encoding(Encoding::Gamma))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = natural_scene(40, 50, 3, 11).unwrap();
        assert_eq!(a, natural_scene(40, 50, 3, 11).unwrap());
        assert_ne!(a, natural_scene(40, 50, 3, 12).unwrap());
        assert!(a.data().iter().all(|&v| (0.05..=0.95).contains(&v)));
    }
}
