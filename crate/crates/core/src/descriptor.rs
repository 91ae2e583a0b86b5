//! Holistic scene descriptor built from spatially pooled Gabor energies.
//!
//! Frames are converted to gray, resized to a square, optionally whitened and
//! contrast-normalized, filtered with a bank of frequency-domain Gabor
//! filters and pooled over a coarse grid. The result is L2-normalized so a
//! dot product compares two scenes.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use image::imageops::FilterType;
use image::RgbImage;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::color::luma;
use crate::error::{Error, Result};
use crate::ingest::FrameRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GistConfig {
    pub orientations: usize,
    pub scales: usize,
    /// Pooling cells per axis.
    pub grid: usize,
    /// Whitening plus local contrast normalization before filtering.
    pub prefilter: bool,
    /// Side of the square the frame is resized to.
    pub image_size: usize,
}

impl Default for GistConfig {
    fn default() -> Self {
        GistConfig {
            orientations: 8,
            scales: 4,
            grid: 4,
            prefilter: true,
            image_size: 128,
        }
    }
}

impl GistConfig {
    pub fn validate(&self) -> Result<()> {
        if self.orientations < 1 || self.scales < 1 || self.grid < 1 {
            return Err(Error::InvalidInput(
                "GIST orientations, scales and grid must all be at least 1".into(),
            ));
        }
        if self.image_size < self.grid || self.image_size < 16 {
            return Err(Error::InvalidInput(format!(
                "GIST image size {} too small",
                self.image_size
            )));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.orientations * self.scales * self.grid * self.grid
    }
}

/// Unit-norm descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GistDescriptor {
    pub values: Vec<f64>,
}

impl GistDescriptor {
    /// Normalizes `raw`; an all-zero (or non-finite) vector becomes the
    /// uniform vector `1/sqrt(dim)`.
    pub fn from_raw(mut raw: Vec<f64>) -> Self {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 && norm.is_finite() {
            raw.iter_mut().for_each(|v| *v /= norm);
        } else {
            let u = 1.0 / (raw.len().max(1) as f64).sqrt();
            raw.iter_mut().for_each(|v| *v = u);
        }
        GistDescriptor { values: raw }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// `a . b` clamped to `[0, 1]`.
pub fn gist_similarity(a: &GistDescriptor, b: &GistDescriptor) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "descriptor dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(0.0, 1.0))
}

struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    fn transpose(&self, data: &mut [Complex<f64>]) {
        let n = self.n;
        for r in 0..n {
            for c in (r + 1)..n {
                data.swap(r * n + c, c * n + r);
            }
        }
    }

    fn run(&self, data: &mut [Complex<f64>], inverse: bool) {
        let plan = if inverse { &self.inverse } else { &self.forward };
        plan.process(data);
        self.transpose(data);
        plan.process(data);
        self.transpose(data);
        if inverse {
            let scale = 1.0 / (self.n * self.n) as f64;
            data.iter_mut().for_each(|v| *v *= scale);
        }
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

fn pad_symmetric(img: &[f64], n: usize, pad: usize) -> Vec<Complex<f64>> {
    let m = n + 2 * pad;
    let mut out = vec![Complex::new(0.0, 0.0); m * m];
    for y in 0..m {
        let sy = reflect(y as isize - pad as isize, n);
        for x in 0..m {
            let sx = reflect(x as isize - pad as isize, n);
            out[y * m + x] = Complex::new(img[sy * n + sx], 0.0);
        }
    }
    out
}

fn crop_real(data: &[Complex<f64>], m: usize, pad: usize, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            out.push(data[(y + pad) * m + x + pad].re);
        }
    }
    out
}

/// Signed frequency of FFT bin `k` for an `m`-point transform, in cycles per sample * m.
fn freq(k: usize, m: usize) -> f64 {
    if k < m.div_ceil(2) {
        k as f64
    } else {
        k as f64 - m as f64
    }
}

const PREFILTER_PAD: usize = 5;
const PREFILTER_FC: f64 = 4.0;
const FILTER_PAD: usize = 16;

/// Precomputed filter bank, shared read-only across frames.
pub struct GistExtractor {
    cfg: GistConfig,
    prefilter_fft: Fft2,
    prefilter_gain: Vec<f64>,
    filter_fft: Fft2,
    filters: Vec<Vec<f64>>,
}

impl GistExtractor {
    pub fn new(cfg: GistConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.image_size;

        let pm = n + 2 * PREFILTER_PAD;
        let s1 = PREFILTER_FC / 2f64.ln().sqrt();
        let mut prefilter_gain = Vec::with_capacity(pm * pm);
        for y in 0..pm {
            for x in 0..pm {
                let (fx, fy) = (freq(x, pm), freq(y, pm));
                prefilter_gain.push((-(fx * fx + fy * fy) / (s1 * s1)).exp());
            }
        }

        let m = n + 2 * FILTER_PAD;
        let mut filters = Vec::with_capacity(cfg.scales * cfg.orientations);
        let o = cfg.orientations as f64;
        for s in 0..cfg.scales {
            let center = 0.3 / 1.85f64.powi(s as i32);
            let angular = 16.0 * o * o / (32.0 * 32.0);
            for j in 0..cfg.orientations {
                let theta = std::f64::consts::PI / o * j as f64;
                let mut g = Vec::with_capacity(m * m);
                for y in 0..m {
                    for x in 0..m {
                        let (fx, fy) = (freq(x, m), freq(y, m));
                        let fr = (fx * fx + fy * fy).sqrt();
                        let mut t = fy.atan2(fx) + theta;
                        if t < -std::f64::consts::PI {
                            t += 2.0 * std::f64::consts::PI;
                        } else if t > std::f64::consts::PI {
                            t -= 2.0 * std::f64::consts::PI;
                        }
                        let radial = fr / m as f64 / center - 1.0;
                        g.push(
                            (-10.0 * 0.35 * radial * radial
                                - 2.0 * angular * std::f64::consts::PI * t * t)
                                .exp(),
                        );
                    }
                }
                filters.push(g);
            }
        }

        Ok(GistExtractor {
            prefilter_fft: Fft2::new(pm),
            prefilter_gain,
            filter_fft: Fft2::new(m),
            filters,
            cfg,
        })
    }

    pub fn config(&self) -> &GistConfig {
        &self.cfg
    }

    fn gray_square(&self, raster: &RgbImage) -> Vec<f64> {
        let n = self.cfg.image_size as u32;
        let resized = image::imageops::resize(raster, n, n, FilterType::Triangle);
        resized.pixels().map(|p| luma(p.0)).collect()
    }

    /// Whitening and local contrast normalization.
    fn prefilter(&self, img: &[f64]) -> Vec<f64> {
        let n = self.cfg.image_size;
        let pm = n + 2 * PREFILTER_PAD;
        let logged: Vec<f64> = img.iter().map(|v| (v + 1.0).ln()).collect();

        let mut spec = pad_symmetric(&logged, n, PREFILTER_PAD);
        self.prefilter_fft.run(&mut spec, false);
        let mut low = spec.clone();
        for (v, g) in low.iter_mut().zip(&self.prefilter_gain) {
            *v *= *g;
        }
        self.prefilter_fft.run(&mut low, true);
        let mut padded = pad_symmetric(&logged, n, PREFILTER_PAD);
        for (v, l) in padded.iter_mut().zip(&low) {
            *v = Complex::new(v.re - l.re, 0.0);
        }
        let highpass: Vec<f64> = padded.iter().map(|v| v.re).collect();

        let mut energy: Vec<Complex<f64>> =
            highpass.iter().map(|v| Complex::new(v * v, 0.0)).collect();
        self.prefilter_fft.run(&mut energy, false);
        for (v, g) in energy.iter_mut().zip(&self.prefilter_gain) {
            *v *= *g;
        }
        self.prefilter_fft.run(&mut energy, true);

        let normalized: Vec<Complex<f64>> = highpass
            .iter()
            .zip(&energy)
            .map(|(h, e)| Complex::new(h / (0.2 + e.norm().sqrt()), 0.0))
            .collect();
        crop_real(&normalized, pm, PREFILTER_PAD, n)
    }

    /// Raw (unnormalized) pooled energies.
    fn pooled(&self, img: &[f64]) -> Vec<f64> {
        let n = self.cfg.image_size;
        let m = n + 2 * FILTER_PAD;
        let grid = self.cfg.grid;
        let mut spec = pad_symmetric(img, n, FILTER_PAD);
        self.filter_fft.run(&mut spec, false);

        let mut out = Vec::with_capacity(self.cfg.dimension());
        let mut work = vec![Complex::new(0.0, 0.0); m * m];
        for g in &self.filters {
            for ((w, s), gain) in work.iter_mut().zip(&spec).zip(g) {
                *w = *s * *gain;
            }
            self.filter_fft.run(&mut work, true);
            for gy in 0..grid {
                let (y0, y1) = (gy * n / grid, (gy + 1) * n / grid);
                for gx in 0..grid {
                    let (x0, x1) = (gx * n / grid, (gx + 1) * n / grid);
                    let mut sum = 0.0;
                    for y in y0..y1 {
                        let row = (y + FILTER_PAD) * m + FILTER_PAD;
                        for x in x0..x1 {
                            sum += work[row + x].norm();
                        }
                    }
                    out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        out
    }

    pub fn describe(&self, raster: &RgbImage) -> GistDescriptor {
        let gray = self.gray_square(raster);
        let input = if self.cfg.prefilter {
            self.prefilter(&gray)
        } else {
            gray.iter().map(|v| v / 255.0).collect()
        };
        GistDescriptor::from_raw(self.pooled(&input))
    }
}

/// Descriptor of one frame. Builds the filter bank on every call; reuse a
/// [`GistExtractor`] for sequences.
pub fn gist(frame: &FrameRecord, cfg: &GistConfig) -> Result<GistDescriptor> {
    frame.validate()?;
    Ok(GistExtractor::new(cfg.clone())?.describe(&frame.raster))
}

const CACHE_MAGIC: &[u8; 4] = b"GIST";
const CACHE_VERSION: u32 = 1;

/// Writes `(frame position, descriptor)` records to a little-endian binary
/// file stamped with `config_hash` (64 hex chars).
pub fn write_descriptor_cache(
    path: &Path,
    config_hash: &str,
    records: &[(u64, GistDescriptor)],
) -> Result<()> {
    let hash = hex::decode(config_hash)
        .ok()
        .filter(|h| h.len() == 32)
        .ok_or_else(|| Error::InvalidInput("config hash must be 64 hex chars".into()))?;
    let dim = records.first().map_or(0, |r| r.1.dim());
    if records.iter().any(|r| r.1.dim() != dim) {
        return Err(Error::InvalidInput("mixed descriptor dimensions".into()));
    }
    let mut buf = Vec::with_capacity(48 + records.len() * (8 + dim * 8));
    buf.write_all(CACHE_MAGIC).unwrap();
    buf.write_all(&CACHE_VERSION.to_le_bytes()).unwrap();
    buf.write_all(&hash).unwrap();
    buf.write_all(&(dim as u32).to_le_bytes()).unwrap();
    buf.write_all(&(records.len() as u64).to_le_bytes()).unwrap();
    for (idx, d) in records {
        buf.write_all(&idx.to_le_bytes()).unwrap();
        for v in &d.values {
            buf.write_all(&v.to_le_bytes()).unwrap();
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    crate::util::write_atomic(path, &buf)
}

/// Reads a descriptor cache. Returns `None` when the file is missing or was
/// written under a different config hash.
pub fn read_descriptor_cache(
    path: &Path,
    config_hash: &str,
) -> Result<Option<Vec<(u64, GistDescriptor)>>> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let bad = |m: &str| Error::parse(path.display().to_string(), m);
    let mut r = bytes.as_slice();
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != CACHE_MAGIC {
        return Err(bad("not a descriptor cache"));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
    if u32::from_le_bytes(u32buf) != CACHE_VERSION {
        return Ok(None);
    }
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash).map_err(|_| bad("truncated header"))?;
    if hex::encode(hash) != config_hash {
        return Ok(None);
    }
    r.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u64buf).map_err(|_| bad("truncated header"))?;
    let count = u64::from_le_bytes(u64buf) as usize;
    if r.len() != count * (8 + dim * 8) {
        return Err(bad("record section has the wrong length"));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u64buf).unwrap();
        let idx = u64::from_le_bytes(u64buf);
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut u64buf).unwrap();
            values.push(f64::from_le_bytes(u64buf));
        }
        out.push((idx, GistDescriptor { values }));
    }
    Ok(Some(out))
}
