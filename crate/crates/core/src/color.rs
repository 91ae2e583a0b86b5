//! sRGB (D65) to CIE L*a*b* conversion.
//!
//! Bin assignment downstream compares LAB values exactly, so every caller
//! goes through [`srgb_to_lab`] and nothing else.

use serde::{Deserialize, Serialize};

/// D65 reference white, 2° observer.
const WHITE_X: f64 = 0.95047;
const WHITE_Y: f64 = 1.0;
const WHITE_Z: f64 = 1.08883;

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl Lab {
    pub const fn new(l: f64, a: f64, b: f64) -> Self {
        Lab { l, a, b }
    }

    pub fn distance(&self, other: &Lab) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn distance_sq(&self, other: &Lab) -> f64 {
        let dl = self.l - other.l;
        let da = self.a - other.a;
        let db = self.b - other.b;
        dl * dl + da * da + db * db
    }

    pub fn is_finite(&self) -> bool {
        self.l.is_finite() && self.a.is_finite() && self.b.is_finite()
    }
}

fn linearize(channel: u8) -> f64 {
    let c = channel as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

/// Converts one 8-bit sRGB pixel to LAB.
pub fn srgb_to_lab(rgb: [u8; 3]) -> Lab {
    let r = linearize(rgb[0]);
    let g = linearize(rgb[1]);
    let b = linearize(rgb[2]);

    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;

    let fx = lab_f(x / WHITE_X);
    let fy = lab_f(y / WHITE_Y);
    let fz = lab_f(z / WHITE_Z);

    Lab {
        l: 116.0 * fy - 16.0,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

/// Converts a whole RGB raster to a row-major LAB buffer.
pub fn image_to_lab(img: &image::RgbImage) -> Vec<Lab> {
    img.pixels().map(|p| srgb_to_lab(p.0)).collect()
}

/// BT.601 luma on the 0..255 scale, unrounded.
pub fn luma(rgb: [u8; 3]) -> f64 {
    0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_and_white() {
        let black = srgb_to_lab([0, 0, 0]);
        assert!(black.l.abs() < 1e-9 && black.a.abs() < 1e-9 && black.b.abs() < 1e-9);
        let white = srgb_to_lab([255, 255, 255]);
        assert!((white.l - 100.0).abs() < 1e-3);
        assert!(white.a.abs() < 1e-2 && white.b.abs() < 1e-2);
    }

    #[test]
    fn reference_red() {
        // Common published value for sRGB red under D65.
        let red = srgb_to_lab([255, 0, 0]);
        assert!((red.l - 53.24).abs() < 0.05);
        assert!((red.a - 80.09).abs() < 0.05);
        assert!((red.b - 67.20).abs() < 0.05);
    }

    #[test]
    fn grays_are_neutral() {
        for v in [10u8, 64, 128, 200] {
            let lab = srgb_to_lab([v, v, v]);
            assert!(lab.a.abs() < 0.01 && lab.b.abs() < 0.01, "{v}: {lab:?}");
        }
    }
}
