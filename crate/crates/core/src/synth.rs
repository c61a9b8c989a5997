//! Synthetic edge dataset: textured regions bounded by rasterized shape
//! outlines, with simulated annotators.
//!
//! Each shape is an implicit function `f(y, x)` that is negative inside and
//! measures (approximately) perpendicular distance to the outline; a pixel
//! belongs to the shape when `f ≤ offset` at its centre. Later shapes
//! occlude earlier ones. A pixel is a true edge when one of its 4-neighbours
//! belongs to a lower region. Every annotator traces each shape grown or
//! shrunk by its own integer offset in `[-jitter, jitter]`; the consensus is
//! the fraction of annotators marking a pixel.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::loss::dilate_box;
use crate::par::{self, Execution};
use crate::pgm;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Circle,
    Triangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub image_size: usize,
    pub num_images: usize,
    pub shapes_min: usize,
    pub shapes_max: usize,
    pub kinds: Vec<ShapeKind>,
    /// Largest texture amplitude (intensity deviation from the region base).
    pub texture_amplitude: f64,
    pub texture_period_min: usize,
    pub texture_period_max: usize,
    pub annotators: usize,
    /// Largest perpendicular offset of an annotator's outline, in pixels.
    pub annotator_jitter: usize,
    /// Clearance between every (jittered) shape and the image border.
    pub margin: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            num_images: 200,
            shapes_min: 1,
            shapes_max: 4,
            kinds: vec![ShapeKind::Rectangle, ShapeKind::Circle, ShapeKind::Triangle],
            texture_amplitude: 0.4,
            texture_period_min: 2,
            texture_period_max: 6,
            annotators: 5,
            annotator_jitter: 1,
            margin: 2,
            seed: 0,
        }
    }
}

/// Smallest half-extent of a shape.
const MIN_HALF: usize = 3;
const MAX_ATTEMPTS: usize = 200;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_images == 0 {
            return bad("synth.num_images must be at least 1".into());
        }
        if self.shapes_min == 0 || self.shapes_min > self.shapes_max {
            return bad(format!(
                "synth shape count range {}..={} is empty or starts at 0",
                self.shapes_min, self.shapes_max
            ));
        }
        if self.kinds.is_empty() {
            return bad("synth.kinds must list at least one shape kind".into());
        }
        if !(0.0..=0.4).contains(&self.texture_amplitude) {
            return bad(format!("synth.texture_amplitude {} outside [0, 0.4]", self.texture_amplitude));
        }
        if self.texture_period_min < 2 || self.texture_period_min > self.texture_period_max {
            return bad(format!(
                "synth texture periods {}..={} invalid (minimum 2)",
                self.texture_period_min, self.texture_period_max
            ));
        }
        if self.annotators == 0 {
            return bad("synth.annotators must be at least 1".into());
        }
        if self.margin < 2 {
            return bad(format!("synth.margin {} below 2 px", self.margin));
        }
        let need = 2 * (self.margin + self.annotator_jitter + MIN_HALF) + 1;
        if self.image_size < need {
            return bad(format!(
                "shapes cannot fit: image_size {} < {need} needed for margin {}, jitter {} and the smallest shape",
                self.image_size, self.margin, self.annotator_jitter
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rectangle { cy: f64, cx: f64, hh: f64, hw: f64 },
    Circle { cy: f64, cx: f64, r: f64 },
    /// Outward unit normals `(ny, nx)` and offsets: inside when `n·p ≤ d`.
    Triangle { planes: [(f64, f64, f64); 3] },
}

impl Shape {
    fn field(&self, y: f64, x: f64) -> f64 {
        match *self {
            Shape::Rectangle { cy, cx, hh, hw } => ((y - cy).abs() - hh).max((x - cx).abs() - hw),
            Shape::Circle { cy, cx, r } => (y - cy).hypot(x - cx) - r,
            Shape::Triangle { planes } => planes
                .iter()
                .map(|&(ny, nx, d)| ny * y + nx * x - d)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    fn random(kind: ShapeKind, size: usize, spec: &SynthSpec, rng: &mut Rng) -> Self {
        let lo = MIN_HALF as f64;
        let hi = (size as f64 * 0.3).max(lo + 1.0);
        let c = size as f64 / 2.0;
        let centre = |rng: &mut Rng, half: f64| {
            let reach = (c - half - (spec.margin + spec.annotator_jitter) as f64).max(0.0);
            (
                (c + rng.uniform_range(-reach, reach)).floor(),
                (c + rng.uniform_range(-reach, reach)).floor(),
            )
        };
        match kind {
            ShapeKind::Rectangle => {
                let hh = rng.int_range(lo as i64, hi as i64) as f64;
                let hw = rng.int_range(lo as i64, hi as i64) as f64;
                let (cy, cx) = centre(rng, hh.max(hw));
                Shape::Rectangle { cy, cx, hh, hw }
            }
            ShapeKind::Circle => {
                let r = rng.uniform_range(lo + 0.5, hi);
                let (cy, cx) = centre(rng, r);
                Shape::Circle { cy, cx, r }
            }
            ShapeKind::Triangle => {
                let r = rng.uniform_range(lo + 2.0, hi + 1.0);
                let (cy, cx) = centre(rng, r);
                let a0 = rng.uniform_range(0.0, std::f64::consts::TAU);
                let step = std::f64::consts::TAU / 3.0;
                let v: Vec<(f64, f64)> = (0..3)
                    .map(|i| {
                        let a = a0 + step * i as f64 + rng.uniform_range(-0.3, 0.3);
                        (cy + r * a.sin(), cx + r * a.cos())
                    })
                    .collect();
                let mut planes = [(0.0, 0.0, 0.0); 3];
                for i in 0..3 {
                    let (ay, ax) = v[i];
                    let (by, bx) = v[(i + 1) % 3];
                    let (ey, ex) = (by - ay, bx - ax);
                    let len = ey.hypot(ex);
                    let (mut ny, mut nx) = (ex / len, -ey / len);
                    // point the normal away from the centre
                    if ny * (cy - ay) + nx * (cx - ax) > 0.0 {
                        ny = -ny;
                        nx = -nx;
                    }
                    planes[i] = (ny, nx, ny * ay + nx * ax);
                }
                Shape::Triangle { planes }
            }
        }
    }
}

/// Region index per pixel: 0 for background, `i + 1` for shape `i`, with
/// each shape grown by its offset.
fn regions(shapes: &[Shape], offsets: &[f64], size: usize) -> Vec<u16> {
    let mut ids = vec![0u16; size * size];
    for (i, (s, &o)) in shapes.iter().zip(offsets).enumerate() {
        for y in 0..size {
            for x in 0..size {
                if s.field(y as f64, x as f64) <= o {
                    ids[y * size + x] = (i + 1) as u16;
                }
            }
        }
    }
    ids
}

fn boundary(ids: &[u16], size: usize) -> Grid {
    Grid::from_fn(size, size, 1, |_, y, x| {
        let id = ids[y * size + x];
        let lower = |yy: usize, xx: usize| ids[yy * size + xx] < id;
        let edge = (y > 0 && lower(y - 1, x))
            || (y + 1 < size && lower(y + 1, x))
            || (x > 0 && lower(y, x - 1))
            || (x + 1 < size && lower(y, x + 1));
        f64::from(u8::from(edge))
    })
}

/// True when some 2×2 block is entirely edge.
pub fn has_thick_block(edges: &Grid) -> bool {
    let (h, w, _) = edges.shape();
    (0..h.saturating_sub(1)).any(|y| {
        (0..w.saturating_sub(1)).any(|x| {
            edges.at(y, x) > 0.0 && edges.at(y + 1, x) > 0.0 && edges.at(y, x + 1) > 0.0 && edges.at(y + 1, x + 1) > 0.0
        })
    })
}

#[derive(Debug, Clone, Copy)]
enum Texture {
    Flat,
    Sinusoid { period: f64, angle: f64, phase: f64 },
    Checker { cell: usize },
}

impl Texture {
    fn pattern(&self, y: usize, x: usize) -> f64 {
        match *self {
            Texture::Flat => 0.0,
            Texture::Sinusoid { period, angle, phase } => {
                let t = y as f64 * angle.sin() + x as f64 * angle.cos();
                (std::f64::consts::TAU * t / period + phase).sin()
            }
            Texture::Checker { cell } => {
                if (y / cell + x / cell) % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    fn random(spec: &SynthSpec, rng: &mut Rng) -> Self {
        let period = rng.int_range(spec.texture_period_min as i64, spec.texture_period_max as i64) as usize;
        match rng.index(3) {
            0 => Texture::Flat,
            1 => Texture::Sinusoid {
                period: period as f64,
                angle: rng.uniform_range(0.0, std::f64::consts::PI),
                phase: rng.uniform_range(0.0, std::f64::consts::TAU),
            },
            _ => Texture::Checker {
                cell: (period / 2).max(1),
            },
        }
    }
}

/// One generated image with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthItem {
    pub image: Grid,
    /// Fraction of annotators marking each pixel.
    pub consensus: Grid,
    /// The exact rasterized boundary.
    pub edges: Grid,
}

fn fits(shape: &Shape, spec: &SynthSpec) -> bool {
    let n = spec.image_size;
    let grow = spec.annotator_jitter as f64;
    let m = spec.margin;
    for y in 0..n {
        for x in 0..n {
            let inside_band = y >= m && y < n - m && x >= m && x < n - m;
            if !inside_band && shape.field(y as f64, x as f64) <= grow {
                return false;
            }
        }
    }
    // must own at least one pixel when shrunk by the jitter
    (0..n).any(|y| (0..n).any(|x| shape.field(y as f64, x as f64) <= -grow))
}

fn generate_one(spec: &SynthSpec, index: usize) -> Result<SynthItem> {
    let n = spec.image_size;
    let mut rng = Rng::for_item(spec.seed, index as u64);
    for _ in 0..MAX_ATTEMPTS {
        let count = rng.int_range(spec.shapes_min as i64, spec.shapes_max as i64) as usize;
        let mut shapes = Vec::with_capacity(count);
        let mut tries = 0;
        while shapes.len() < count && tries < MAX_ATTEMPTS {
            tries += 1;
            let kind = spec.kinds[rng.index(spec.kinds.len())];
            let s = Shape::random(kind, n, spec, &mut rng);
            if fits(&s, spec) {
                shapes.push(s);
            }
        }
        if shapes.len() < count {
            continue;
        }
        let ids = regions(&shapes, &vec![0.0; count], n);
        let edges = boundary(&ids, n);
        let visible = (1..=count as u16).all(|i| ids.contains(&i));
        if !visible || has_thick_block(&edges) {
            continue;
        }

        let j = spec.annotator_jitter as i64;
        let band = dilate_box(&edges, 2 * spec.annotator_jitter + 1);
        let mut votes = Grid::zeros(n, n, 1);
        for _ in 0..spec.annotators {
            let offsets: Vec<f64> = (0..count).map(|_| rng.int_range(-j, j) as f64).collect();
            let marks = boundary(&regions(&shapes, &offsets, n), n);
            for ((v, &m), &b) in votes.data_mut().iter_mut().zip(marks.data()).zip(band.data()) {
                if m > 0.0 && b > 0.0 {
                    *v += 1.0;
                }
            }
        }
        let consensus = votes.map(|v| v / spec.annotators as f64);

        let mut levels = [0.1, 0.3, 0.5, 0.7, 0.9];
        rng.shuffle(&mut levels);
        let mut base = Vec::with_capacity(count + 1);
        let mut tex = Vec::with_capacity(count + 1);
        let mut amp = Vec::with_capacity(count + 1);
        for r in 0..=count {
            let level = levels.get(r).copied().unwrap_or_else(|| rng.uniform_range(0.1, 0.9));
            base.push(level + rng.uniform_range(-0.03, 0.03));
            let t = Texture::random(spec, &mut rng);
            amp.push(match t {
                Texture::Flat => 0.0,
                _ => rng.uniform_range(0.0, spec.texture_amplitude),
            });
            tex.push(t);
        }
        let image = Grid::from_fn(n, n, 1, |_, y, x| {
            let r = ids[y * n + x] as usize;
            (base[r] + amp[r] * tex[r].pattern(y, x)).clamp(0.0, 1.0)
        });
        return Ok(SynthItem {
            image,
            consensus,
            edges,
        });
    }
    Err(Error::Config(format!(
        "could not place shapes in image {index} after {MAX_ATTEMPTS} attempts; enlarge image_size or reduce shapes"
    )))
}

/// Generates the dataset; a pure function of `spec`.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthItem>> {
    generate_with(spec, Execution::available_parallel())
}

pub fn generate_with(spec: &SynthSpec, exec: Execution) -> Result<Vec<SynthItem>> {
    spec.validate()?;
    par::map_indexed(spec.num_images, exec, |i| generate_one(spec, i))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub spec: SynthSpec,
    pub images: Vec<String>,
    pub labels: Vec<String>,
}

pub fn item_name(index: usize) -> String {
    format!("{index:04}.pgm")
}

/// Writes `images/NNNN.pgm`, `labels/NNNN.pgm` (consensus) and
/// `manifest.json` under `dir`.
pub fn write_dataset(dir: &Path, spec: &SynthSpec, items: &[SynthItem]) -> Result<()> {
    let images = dir.join("images");
    let labels = dir.join("labels");
    for d in [&images, &labels] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut manifest = Manifest {
        spec: spec.clone(),
        images: Vec::new(),
        labels: Vec::new(),
    };
    for (i, it) in items.iter().enumerate() {
        let name = item_name(i);
        pgm::write_pgm(&it.image, &images.join(&name))?;
        pgm::write_pgm(&it.consensus, &labels.join(&name))?;
        manifest.images.push(format!("images/{name}"));
        manifest.labels.push(format!("labels/{name}"));
    }
    let path = dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Sorted `*.pgm` files of a directory.
pub fn list_pgm(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e == "pgm") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// An image/consensus pair read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedItem {
    pub name: String,
    pub image: Grid,
    pub consensus: Grid,
}

/// Reads a dataset directory. Consensus values are snapped to multiples of
/// `1 / annotators` when a manifest is present, undoing 8-bit quantization.
pub fn read_dataset(dir: &Path) -> Result<(Option<Manifest>, Vec<LoadedItem>)> {
    let mpath = dir.join("manifest.json");
    let manifest: Option<Manifest> = if mpath.exists() {
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        Some(serde_json::from_str(&text)?)
    } else {
        None
    };
    let images = list_pgm(&dir.join("images"))?;
    let mut out = Vec::with_capacity(images.len());
    for p in images {
        let name = p.file_name().expect("file").to_string_lossy().into_owned();
        let lpath = dir.join("labels").join(&name);
        let mut consensus = pgm::read_pgm(&lpath)?;
        if let Some(m) = &manifest {
            let a = m.spec.annotators as f64;
            consensus = consensus.map(|v| (v * a).round() / a);
        }
        out.push(LoadedItem {
            name,
            image: pgm::read_pgm(&p)?,
            consensus,
        });
    }
    Ok((manifest, out))
}
