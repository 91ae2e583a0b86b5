//! Deterministic frames for the benchmarks.

use image::{Rgb, RgbImage};

/// Smooth colored blobs over a mid-gray base, seeded by a small LCG so the
/// benches need no RNG crate.
pub fn textured_frame(w: u32, h: u32, seed: u64) -> RgbImage {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as f64 / (1u64 << 31) as f64
    };
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..120)
        .map(|_| {
            (
                next() * w as f64,
                next() * h as f64,
                3.0 + next() * 10.0,
                [next() * 240.0 - 120.0, next() * 240.0 - 120.0, next() * 240.0 - 120.0],
            )
        })
        .collect();
    RgbImage::from_fn(w, h, |x, y| {
        let mut c = [110.0, 120.0, 100.0];
        for (bx, by, r, col) in &blobs {
            let g = (-((x as f64 - bx).powi(2) + (y as f64 - by).powi(2)) / (2.0 * r * r)).exp();
            for i in 0..3 {
                c[i] += col[i] * g;
            }
        }
        Rgb(c.map(|v| v.clamp(0.0, 255.0) as u8))
    })
}

/// `w x h` frame mirrored about its vertical center line.
pub fn mirrored_frame(w: u32, h: u32, seed: u64) -> RgbImage {
    let base = textured_frame(w, h, seed);
    RgbImage::from_fn(w, h, |x, y| *base.get_pixel(if x < w / 2 { x } else { w - 1 - x }, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(textured_frame(40, 30, 3), textured_frame(40, 30, 3));
        assert_ne!(textured_frame(40, 30, 3), textured_frame(40, 30, 4));
        let m = mirrored_frame(41, 20, 1);
        for y in 0..20 {
            for x in 0..41 {
                assert_eq!(m.get_pixel(x, y), m.get_pixel(40 - x, y));
            }
        }
    }
}
