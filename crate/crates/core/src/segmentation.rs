//! Per-frame superpixel segmentation.
//!
//! Two stages on 4-connected pixels in LAB space: a graph-based
//! over-segmentation (Felzenszwalb-Huttenlocher), then agglomerative merging
//! of adjacent regions by mean-color distance until the closest adjacent pair
//! is at least `coarseness` apart. Regions below a minimum size are finally
//! folded into their most similar neighbour.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::color::{image_to_lab, Lab};
use crate::error::{Error, Result};
use crate::ingest::FrameRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    /// Scale of the graph-based stage; larger favours bigger components.
    pub graph_scale: f64,
    /// Adjacent regions closer than this (LAB units) are merged.
    pub coarseness: f64,
    /// Regions smaller than this fraction of the frame are absorbed.
    pub min_size_fraction: f64,
    /// Segment count up to which the simplicity weight stays at 1.
    pub simplicity_plateau: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            graph_scale: 40.0,
            coarseness: 12.0,
            min_size_fraction: 0.002,
            simplicity_plateau: 12,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.graph_scale >= 0.0) || !(self.coarseness >= 0.0) {
            return Err(Error::InvalidInput(
                "graph scale and coarseness must be non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.min_size_fraction) {
            return Err(Error::InvalidInput("min_size_fraction must be in [0, 1)".into()));
        }
        if self.simplicity_plateau < 1 {
            return Err(Error::InvalidInput("simplicity plateau must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentStat {
    /// Pixel count.
    pub size: usize,
    /// Mean pixel centre in `[0, 1]^2`, x to the right and y down.
    pub centroid: (f64, f64),
    pub mean_lab: Lab,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMap {
    pub width: usize,
    pub height: usize,
    /// Row-major labels in `0..segments.len()`, numbered in raster order of
    /// first appearance.
    pub labels: Vec<u32>,
    pub segments: Vec<SegmentStat>,
}

impl SegmentMap {
    pub fn count(&self) -> usize {
        self.segments.len()
    }

    /// Builds the map (with statistics) from any labelling of `lab`.
    pub fn from_labels(width: usize, height: usize, raw: &[usize], lab: &[Lab]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        for &r in raw {
            let next = remap.len() as u32;
            labels.push(*remap.entry(r).or_insert(next));
        }
        let m = remap.len();
        let mut acc = vec![(0usize, 0.0, 0.0, 0.0, 0.0, 0.0); m];
        for (i, &l) in labels.iter().enumerate() {
            let a = &mut acc[l as usize];
            a.0 += 1;
            a.1 += (i % width) as f64;
            a.2 += (i / width) as f64;
            a.3 += lab[i].l;
            a.4 += lab[i].a;
            a.5 += lab[i].b;
        }
        let segments = acc
            .into_iter()
            .map(|(n, sx, sy, l, a, b)| {
                let nf = n as f64;
                SegmentStat {
                    size: n,
                    centroid: ((sx / nf + 0.5) / width as f64, (sy / nf + 0.5) / height as f64),
                    mean_lab: Lab::new(l / nf, a / nf, b / nf),
                }
            })
            .collect();
        SegmentMap {
            width,
            height,
            labels,
            segments,
        }
    }

    /// Writes the label map as an indexed PNG coloured by segment mean
    /// (16-bit gray labels when there are more than 256 segments).
    pub fn write_debug_png(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(
            std::io::BufWriter::new(file),
            self.width as u32,
            self.height as u32,
        );
        let data: Vec<u8> = if self.count() <= 256 {
            let palette: Vec<u8> = self
                .segments
                .iter()
                .flat_map(|s| lab_to_display(s.mean_lab))
                .collect();
            enc.set_color(png::ColorType::Indexed);
            enc.set_depth(png::BitDepth::Eight);
            enc.set_palette(palette);
            self.labels.iter().map(|&l| l as u8).collect()
        } else {
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            self.labels
                .iter()
                .flat_map(|&l| (l.min(u16::MAX as u32) as u16).to_be_bytes())
                .collect()
        };
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        writer
            .write_image_data(&data)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))
    }
}

/// Rough LAB -> sRGB for debug palettes only.
fn lab_to_display(lab: Lab) -> [u8; 3] {
    let fy = (lab.l + 16.0) / 116.0;
    let fx = fy + lab.a / 500.0;
    let fz = fy - lab.b / 200.0;
    let inv = |f: f64| {
        if f.powi(3) > 216.0 / 24389.0 {
            f.powi(3)
        } else {
            (116.0 * f - 16.0) / (24389.0 / 27.0)
        }
    };
    let (x, y, z) = (inv(fx) * 0.95047, inv(fy), inv(fz) * 1.08883);
    let r = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    let g = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    let b = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    let enc = |c: f64| {
        let c = if c <= 0.0031308 {
            12.92 * c
        } else {
            1.055 * c.powf(1.0 / 2.4) - 0.055
        };
        (c.clamp(0.0, 1.0) * 255.0).round() as u8
    };
    [enc(r), enc(g), enc(b)]
}

struct Dsu {
    parent: Vec<usize>,
    size: Vec<usize>,
    internal: Vec<f64>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu {
            parent: (0..n).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize, w: f64) {
        let (big, small) = if self.size[a] >= self.size[b] { (a, b) } else { (b, a) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        self.internal[big] = w;
    }
}

/// Graph-based over-segmentation; returns a root label per pixel.
fn graph_segment(lab: &[Lab], width: usize, height: usize, scale: f64) -> Vec<usize> {
    let n = width * height;
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(2 * n);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if x + 1 < width {
                edges.push((lab[i].distance(&lab[i + 1]), i, i + 1));
            }
            if y + 1 < height {
                edges.push((lab[i].distance(&lab[i + width]), i, i + width));
            }
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut dsu = Dsu::new(n);
    for (w, a, b) in edges {
        let (ra, rb) = (dsu.find(a), dsu.find(b));
        if ra == rb {
            continue;
        }
        let ta = dsu.internal[ra] + scale / dsu.size[ra] as f64;
        let tb = dsu.internal[rb] + scale / dsu.size[rb] as f64;
        if w <= ta.min(tb) {
            dsu.union(ra, rb, w);
        }
    }
    (0..n).map(|i| dsu.find(i)).collect()
}

struct Region {
    count: usize,
    sum: [f64; 3],
    neighbours: BTreeSet<usize>,
    version: u32,
    alive: bool,
}

impl Region {
    fn mean(&self) -> Lab {
        let n = self.count as f64;
        Lab::new(self.sum[0] / n, self.sum[1] / n, self.sum[2] / n)
    }
}

#[derive(PartialEq)]
struct Candidate {
    dist: f64,
    a: usize,
    b: usize,
    va: u32,
    vb: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // min-heap on (dist, a, b)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.a.cmp(&self.a))
            .then(other.b.cmp(&self.b))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct RegionGraph {
    regions: Vec<Region>,
    /// Region of each pixel before path compression.
    owner: Vec<usize>,
    forward: Vec<usize>,
}

impl RegionGraph {
    fn build(lab: &[Lab], width: usize, height: usize, roots: &[usize]) -> Self {
        let mut index = std::collections::HashMap::new();
        let mut owner = Vec::with_capacity(roots.len());
        for &r in roots {
            let next = index.len();
            owner.push(*index.entry(r).or_insert(next));
        }
        let mut regions: Vec<Region> = (0..index.len())
            .map(|_| Region {
                count: 0,
                sum: [0.0; 3],
                neighbours: BTreeSet::new(),
                version: 0,
                alive: true,
            })
            .collect();
        for (i, &o) in owner.iter().enumerate() {
            let r = &mut regions[o];
            r.count += 1;
            r.sum[0] += lab[i].l;
            r.sum[1] += lab[i].a;
            r.sum[2] += lab[i].b;
        }
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                let here = owner[i];
                let mut link = |j: usize| {
                    let there = owner[j];
                    if there != here {
                        regions[here].neighbours.insert(there);
                        regions[there].neighbours.insert(here);
                    }
                };
                if x + 1 < width {
                    link(i + 1);
                }
                if y + 1 < height {
                    link(i + width);
                }
            }
        }
        let forward = (0..regions.len()).collect();
        RegionGraph {
            regions,
            owner,
            forward,
        }
    }

    fn candidate(&self, a: usize, b: usize) -> Candidate {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        Candidate {
            dist: self.regions[a].mean().distance(&self.regions[b].mean()),
            a,
            b,
            va: self.regions[a].version,
            vb: self.regions[b].version,
        }
    }

    /// Merges `b` into `a` (or the other way round to keep the larger
    /// neighbour set) and returns the survivor.
    fn merge(&mut self, a: usize, b: usize) -> usize {
        let (keep, gone) = if self.regions[a].neighbours.len() >= self.regions[b].neighbours.len() {
            (a, b)
        } else {
            (b, a)
        };
        let moved = std::mem::take(&mut self.regions[gone].neighbours);
        for &n in &moved {
            let ns = &mut self.regions[n].neighbours;
            ns.remove(&gone);
            if n != keep {
                ns.insert(keep);
            }
        }
        let (count, sum) = (self.regions[gone].count, self.regions[gone].sum);
        self.regions[gone].alive = false;
        self.forward[gone] = keep;
        let k = &mut self.regions[keep];
        k.neighbours.extend(moved.into_iter().filter(|&n| n != keep));
        k.neighbours.remove(&gone);
        k.count += count;
        for c in 0..3 {
            k.sum[c] += sum[c];
        }
        k.version += 1;
        keep
    }

    fn merge_below(&mut self, coarseness: f64) {
        let mut heap = BinaryHeap::new();
        for (a, r) in self.regions.iter().enumerate() {
            for &b in &r.neighbours {
                if a < b {
                    heap.push(self.candidate(a, b));
                }
            }
        }
        while let Some(c) = heap.pop() {
            if c.dist >= coarseness {
                break;
            }
            let (ra, rb) = (&self.regions[c.a], &self.regions[c.b]);
            if !ra.alive || !rb.alive || ra.version != c.va || rb.version != c.vb {
                continue;
            }
            let keep = self.merge(c.a, c.b);
            let neighbours: Vec<usize> = self.regions[keep].neighbours.iter().copied().collect();
            for n in neighbours {
                heap.push(self.candidate(keep, n));
            }
        }
    }

    fn absorb_small(&mut self, min_size: usize) {
        loop {
            let mut small: Vec<(usize, usize)> = self
                .regions
                .iter()
                .enumerate()
                .filter(|(_, r)| r.alive && r.count < min_size && !r.neighbours.is_empty())
                .map(|(i, r)| (r.count, i))
                .collect();
            if small.is_empty() {
                return;
            }
            small.sort_unstable();
            for (_, i) in small {
                let r = &self.regions[i];
                if !r.alive || r.count >= min_size || r.neighbours.is_empty() {
                    continue;
                }
                let mean = r.mean();
                let best = r
                    .neighbours
                    .iter()
                    .copied()
                    .min_by(|&x, &y| {
                        let dx = self.regions[x].mean().distance(&mean);
                        let dy = self.regions[y].mean().distance(&mean);
                        dx.total_cmp(&dy).then(x.cmp(&y))
                    })
                    .expect("non-empty neighbours");
                self.merge(i, best);
            }
        }
    }

    fn resolve(&mut self, mut r: usize) -> usize {
        let start = r;
        while self.forward[r] != r {
            r = self.forward[r];
        }
        let root = r;
        let mut r = start;
        while self.forward[r] != root && self.forward[r] != r {
            let next = self.forward[r];
            self.forward[r] = root;
            r = next;
        }
        root
    }

    fn labels(&mut self) -> Vec<usize> {
        let owner = std::mem::take(&mut self.owner);
        owner.iter().map(|&o| self.resolve(o)).collect()
    }
}

/// Segments a raster.
pub fn segment_raster(raster: &image::RgbImage, cfg: &SegmentationConfig) -> Result<SegmentMap> {
    cfg.validate()?;
    let (w, h) = (raster.width() as usize, raster.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidInput("empty raster".into()));
    }
    let lab = image_to_lab(raster);
    let roots = graph_segment(&lab, w, h, cfg.graph_scale);
    let mut graph = RegionGraph::build(&lab, w, h, &roots);
    graph.merge_below(cfg.coarseness);
    let min_size = (cfg.min_size_fraction * (w * h) as f64).floor() as usize;
    if min_size > 1 {
        graph.absorb_small(min_size);
    }
    let labels = graph.labels();
    Ok(SegmentMap::from_labels(w, h, &labels, &lab))
}

pub fn segment(frame: &FrameRecord, cfg: &SegmentationConfig) -> Result<SegmentMap> {
    segment_raster(&frame.raster, cfg)
}

/// Weight for scene simplicity: 1 up to `plateau` segments, then `plateau / m`.
pub fn simplicity_weight(m: usize, plateau: usize) -> Result<f64> {
    if m < 1 {
        return Err(Error::InvalidInput("segment count must be at least 1".into()));
    }
    if plateau < 1 {
        return Err(Error::InvalidInput("simplicity plateau must be at least 1".into()));
    }
    Ok(if m <= plateau {
        1.0
    } else {
        plateau as f64 / m as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::srgb_to_lab;
    use image::{Rgb, RgbImage};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 4-connected components of equal colours, by explicit flood fill.
    fn flood_fill_components(img: &RgbImage) -> usize {
        let (w, h) = (img.width() as i64, img.height() as i64);
        let mut seen = vec![false; (w * h) as usize];
        let mut count = 0;
        for start in 0..(w * h) {
            if seen[start as usize] {
                continue;
            }
            count += 1;
            let colour = *img.get_pixel((start % w) as u32, (start / w) as u32);
            let mut stack = vec![start];
            seen[start as usize] = true;
            while let Some(p) = stack.pop() {
                let (x, y) = (p % w, p / w);
                for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let q = ny * w + nx;
                    if !seen[q as usize] && *img.get_pixel(nx as u32, ny as u32) == colour {
                        seen[q as usize] = true;
                        stack.push(q);
                    }
                }
            }
        }
        count
    }

    #[test]
    fn constant_frame_is_one_segment() {
        let img = RgbImage::from_pixel(64, 48, Rgb([40, 120, 200]));
        let map = segment_raster(&img, &SegmentationConfig::default()).unwrap();
        assert_eq!(map.count(), 1);
        assert_eq!(map.segments[0].size, 64 * 48);
        let (cx, cy) = map.segments[0].centroid;
        assert!((cx - 0.5).abs() < 1e-12 && (cy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn red_blue_halves() {
        let img = RgbImage::from_fn(64, 40, |x, _| {
            if x < 32 {
                Rgb([255, 0, 0])
            } else {
                Rgb([0, 0, 255])
            }
        });
        let map = segment_raster(&img, &SegmentationConfig::default()).unwrap();
        assert_eq!(map.count(), 2);
        assert_eq!(map.segments[0].size, 64 * 40 / 2);
        assert_eq!(map.segments[1].size, 64 * 40 / 2);
        let c0 = map.segments[0].centroid;
        let c1 = map.segments[1].centroid;
        assert!((c0.0 - 0.25).abs() < 1e-12 && (c0.1 - 0.5).abs() < 1e-12);
        assert!((c1.0 - 0.75).abs() < 1e-12 && (c1.1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn checkerboard_cells_stay_separate() {
        let img = RgbImage::from_fn(64, 64, |x, y| {
            if (x / 16 + y / 16) % 2 == 0 {
                Rgb([200, 180, 40])
            } else {
                Rgb([30, 60, 160])
            }
        });
        let cfg = SegmentationConfig::default();
        let gap = srgb_to_lab([200, 180, 40]).distance(&srgb_to_lab([30, 60, 160]));
        assert!(cfg.coarseness < gap);
        let map = segment_raster(&img, &cfg).unwrap();
        assert_eq!(flood_fill_components(&img), 16);
        assert_eq!(map.count(), 16);
        assert!(map.segments.iter().all(|s| s.size == 256));
    }

    #[test]
    fn labels_partition_and_means_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = RgbImage::from_fn(48, 36, |x, y| {
            let base = if x < 20 { [180u8, 60, 40] } else if y < 18 { [40, 160, 60] } else { [50, 60, 170] };
            let n: i16 = rng.random_range(-6..=6);
            Rgb(base.map(|c| (c as i16 + n).clamp(0, 255) as u8))
        });
        let map = segment_raster(&img, &SegmentationConfig::default()).unwrap();
        let m = map.count();
        assert!(map.labels.iter().all(|&l| (l as usize) < m));
        assert_eq!(map.segments.iter().map(|s| s.size).sum::<usize>(), 48 * 36);
        for (label, seg) in map.segments.iter().enumerate() {
            let mut acc = [0.0; 3];
            let mut n = 0usize;
            for (i, p) in img.pixels().enumerate() {
                if map.labels[i] as usize == label {
                    let lab = srgb_to_lab(p.0);
                    acc[0] += lab.l;
                    acc[1] += lab.a;
                    acc[2] += lab.b;
                    n += 1;
                }
            }
            assert_eq!(n, seg.size);
            assert!((acc[0] / n as f64 - seg.mean_lab.l).abs() < 1e-6);
            assert!((acc[1] / n as f64 - seg.mean_lab.a).abs() < 1e-6);
            assert!((acc[2] / n as f64 - seg.mean_lab.b).abs() < 1e-6);
            assert!((0.0..=1.0).contains(&seg.centroid.0) && (0.0..=1.0).contains(&seg.centroid.1));
        }
        // labels dense and numbered by first appearance
        let mut next = 0;
        for &l in &map.labels {
            assert!(l <= next);
            if l == next {
                next += 1;
            }
        }
        assert_eq!(next as usize, m);
    }

    #[test]
    fn segments_are_connected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = RgbImage::from_fn(40, 40, |_, _| {
            let v: u8 = rng.random_range(0..4) * 60;
            Rgb([v, 255 - v, v / 2])
        });
        let map = segment_raster(&img, &SegmentationConfig::default()).unwrap();
        // every label's pixels form a single 4-connected component
        let labelled = RgbImage::from_fn(40, 40, |x, y| {
            let l = map.labels[(y * 40 + x) as usize];
            Rgb([(l & 0xff) as u8, ((l >> 8) & 0xff) as u8, 0])
        });
        assert_eq!(flood_fill_components(&labelled), map.count());
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = RgbImage::from_fn(50, 30, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
        let cfg = SegmentationConfig::default();
        assert_eq!(segment_raster(&img, &cfg).unwrap(), segment_raster(&img, &cfg).unwrap());
    }

    #[test]
    fn simplicity_examples() {
        assert_eq!(simplicity_weight(1, 12).unwrap(), 1.0);
        assert_eq!(simplicity_weight(12, 12).unwrap(), 1.0);
        assert_eq!(simplicity_weight(24, 12).unwrap(), 0.5);
        assert!(simplicity_weight(0, 12).is_err());
        for m in 1..500 {
            let a = simplicity_weight(m, 12).unwrap();
            let b = simplicity_weight(m + 1, 12).unwrap();
            assert!(a >= b && b > 0.0 && a <= 1.0);
        }
    }

    #[test]
    fn debug_png_writes() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(32, 32, |x, _| if x < 16 { Rgb([255, 0, 0]) } else { Rgb([0, 255, 0]) });
        let map = segment_raster(&img, &SegmentationConfig::default()).unwrap();
        let p = dir.path().join("labels.png");
        map.write_debug_png(&p).unwrap();
        let back = image::open(&p).unwrap().to_rgb8();
        assert_eq!(back.dimensions(), (32, 32));
        assert_ne!(back.get_pixel(0, 0), back.get_pixel(31, 0));
    }
}
