//! Panorama corpora: manifests, image loading, wrap augmentation and the
//! synthetic generator.

use std::collections::HashSet;
use std::f32::consts::TAU;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{ImageBuffer, Rgb, RgbImage};
use lookout_core::{GridGeometry, Image};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::mix_seed;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CLASSES_FILE: &str = "classes.json";
pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Resolved against the manifest's directory.
    pub path: PathBuf,
    pub label: Option<usize>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    path: String,
    #[serde(default)]
    label: Option<usize>,
    split: Split,
}

impl DatasetManifest {
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Reads a JSON Lines manifest and the `classes.json` sidecar next to it. The
/// sidecar may be omitted when no entry carries a label.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or(Path::new("."));
    let classes_path = root.join(CLASSES_FILE);
    let class_names: Option<Vec<String>> = if classes_path.exists() {
        let raw = fs::read_to_string(&classes_path).map_err(|e| Error::io(&classes_path, e))?;
        Some(serde_json::from_str(&raw).map_err(|e| Error::Manifest {
            path: classes_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?)
    } else {
        None
    };

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Manifest {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let raw: RawEntry = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if let Some(label) = raw.label {
            let count = class_names
                .as_ref()
                .ok_or_else(|| bad(format!("labelled entry but no {CLASSES_FILE} next to the manifest")))?
                .len();
            if label >= count {
                return Err(bad(format!("label {label} out of range for {count} classes")));
            }
        }
        if !seen.insert(raw.path.clone()) {
            return Err(bad(format!("duplicate path {:?}", raw.path)));
        }
        entries.push(ManifestEntry {
            path: root.join(&raw.path),
            label: raw.label,
            split: raw.split,
        });
    }
    Ok(DatasetManifest {
        entries,
        class_names: class_names.unwrap_or_default(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanoramaSample {
    pub id: String,
    pub pixels: Image,
    pub label: Option<usize>,
}

impl PanoramaSample {
    /// Copy at another grid geometry, area-averaged.
    pub fn downsample(&self, geom: &GridGeometry) -> Result<Self> {
        Ok(Self {
            id: self.id.clone(),
            pixels: self.pixels.area_downsample(geom.height(), geom.width())?,
            label: self.label,
        })
    }
}

/// Decodes an RGB image and brings it to `height × width` in [0,1]. Sources of
/// the exact target size are only rescaled; integer multiples of the target
/// size are area-averaged; anything else is resized bilinearly.
pub fn load_panorama(path: &Path, height: usize, width: usize) -> Result<Image> {
    let decoded = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = decoded.to_rgb8();
    let (sw, sh) = (rgb.width() as usize, rgb.height() as usize);
    if sw == 0 || sh == 0 {
        return Err(Error::EmptyImage(path.to_path_buf()));
    }
    let to_image = |buf: &RgbImage| {
        let data = buf.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Image::from_vec(buf.height() as usize, buf.width() as usize, data)
    };
    if (sh, sw) == (height, width) {
        return Ok(to_image(&rgb)?);
    }
    if sh % height == 0 && sw % width == 0 {
        return Ok(to_image(&rgb)?.area_downsample(height, width)?);
    }
    let float: ImageBuffer<Rgb<f32>, Vec<f32>> = ImageBuffer::from_raw(
        sw as u32,
        sh as u32,
        rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
    )
    .expect("buffer matches dimensions");
    let resized = image::imageops::resize(&float, width as u32, height as u32, FilterType::Triangle);
    let data = resized.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok(Image::from_vec(height, width, data)?)
}

/// Loads every entry of `split` at the geometry's resolution.
pub fn load_split(manifest: &DatasetManifest, split: Split, geom: &GridGeometry) -> Result<Vec<PanoramaSample>> {
    manifest
        .split(split)
        .map(|e| {
            Ok(PanoramaSample {
                id: e
                    .path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                pixels: load_panorama(&e.path, geom.height(), geom.width())?,
                label: e.label,
            })
        })
        .collect()
}

/// Moves column `c` to column `(c + offset) mod W`.
pub fn augment_wrap(sample: &PanoramaSample, offset: usize) -> PanoramaSample {
    PanoramaSample {
        id: sample.id.clone(),
        pixels: sample.pixels.roll_columns(offset % sample.pixels.width().max(1)),
        label: sample.label,
    }
}

/// Parameters of the synthetic panorama generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub count: usize,
    pub seed: u64,
    pub classes: usize,
    /// Range of the mean horizon height as a fraction of the image height.
    pub horizon_min: f32,
    pub horizon_max: f32,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Per-image jitter of the class hues.
    pub hue_jitter: f32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            count: 2600,
            seed: 0,
            classes: crate::nets::DEFAULT_CLASSES,
            horizon_min: 0.42,
            horizon_max: 0.58,
            min_objects: 3,
            max_objects: 7,
            hue_jitter: 0.01,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.count == 0 {
            return bad("count must be positive");
        }
        if self.classes < 2 {
            return bad("class count must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.horizon_min) || self.horizon_min > self.horizon_max || self.horizon_max > 1.0 {
            return bad("horizon range must satisfy 0 <= min <= max <= 1");
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects exceeds max_objects");
        }
        Ok(())
    }

    /// Number of sky hues; classes beyond it reuse the hues with another
    /// ground style.
    fn hue_levels(&self) -> usize {
        if self.classes >= 4 {
            self.classes.div_ceil(2)
        } else {
            self.classes
        }
    }
}

pub const SYNTH_HEIGHT: usize = 128;
pub const SYNTH_WIDTH: usize = 256;

/// Generates `spec.count` x-periodic 128×256 panoramas. Labels are assigned
/// round-robin (`i mod classes`); sample `i` depends only on `(seed, i)`.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<PanoramaSample>> {
    spec.validate()?;
    Ok((0..spec.count).map(|i| synth_sample(spec, i)).collect())
}

/// As [`synth_generate`], area-averaged to the geometry's resolution.
pub fn synth_generate_at(spec: &SynthSpec, geom: &GridGeometry) -> Result<Vec<PanoramaSample>> {
    synth_generate(spec)?.iter().map(|s| s.downsample(geom)).collect()
}

#[derive(Clone, Copy)]
enum ShapeKind {
    Building,
    Tree,
    Dome,
}

struct Shape {
    kind: ShapeKind,
    center: f32,
    half_width: f32,
    height: f32,
    color: [f32; 3],
    accent: [f32; 3],
}

fn synth_sample(spec: &SynthSpec, index: usize) -> PanoramaSample {
    let (h, w) = (SYNTH_HEIGHT, SYNTH_WIDTH);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, index as u64));
    let class = index % spec.classes;
    let levels = spec.hue_levels();
    let hue_step = 1.0 / levels as f32;
    let style = class / levels;
    let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-1.0..=1.0) * spec.hue_jitter;
    let sky_hue = (class % levels) as f32 * hue_step + jitter(&mut rng);
    let ground_hue = sky_hue + 0.5 + jitter(&mut rng);
    let ground_value = [0.35f32, 0.75, 0.55][style % 3];
    let ground_sat = if style % 2 == 0 { 0.55 } else { 0.35 };

    let horizon_mean = rng.random_range(spec.horizon_min..=spec.horizon_max) * h as f32;
    let freq = rng.random_range(1..=3) as f32;
    let amp = rng.random_range(0.0..0.05) * h as f32;
    let phase = rng.random_range(0.0..TAU);
    let horizon = |x: f32| horizon_mean + amp * (TAU * freq * x / w as f32 + phase).sin();

    let kind = [ShapeKind::Building, ShapeKind::Tree, ShapeKind::Dome][class % 3];
    let n_objects = rng.random_range(spec.min_objects..=spec.max_objects);
    let shapes: Vec<Shape> = (0..n_objects)
        .map(|_| {
            let hue = rng.random_range(0.0..1.0);
            Shape {
                kind,
                center: rng.random_range(0.0..w as f32),
                half_width: rng.random_range(4.0..14.0),
                height: rng.random_range(10.0..36.0),
                color: hsv(hue, rng.random_range(0.3..0.8), rng.random_range(0.2..0.9)),
                accent: hsv(hue + 0.5, 0.3, rng.random_range(0.6..1.0)),
            }
        })
        .collect();

    let pixels = Image::from_fn(h, w, |y, x, c| {
        let (yf, xf) = (y as f32 + 0.5, x as f32 + 0.5);
        let mut px = background_pixel(yf, horizon(xf), h as f32, sky_hue, ground_hue, ground_sat, ground_value);
        for s in &shapes {
            let base = horizon(s.center) + 2.0;
            if let Some(color) = shape_pixel(s, xf, yf, base, w as f32) {
                px = color;
            }
        }
        px[c]
    });
    PanoramaSample {
        id: format!("synth-{index:05}"),
        pixels,
        label: Some(class),
    }
}

fn background_pixel(y: f32, horizon: f32, h: f32, sky_hue: f32, ground_hue: f32, sat: f32, value: f32) -> [f32; 3] {
    if y < horizon {
        let t = y / horizon.max(1.0);
        hsv(sky_hue, 0.55, 0.6 + 0.35 * t)
    } else {
        let t = (y - horizon) / (h - horizon).max(1.0);
        hsv(ground_hue, sat, value * (1.0 - 0.3 * t))
    }
}

fn shape_pixel(s: &Shape, x: f32, y: f32, base: f32, w: f32) -> Option<[f32; 3]> {
    // Signed horizontal distance on the cylinder.
    let dx = (x - s.center + 1.5 * w).rem_euclid(w) - 0.5 * w;
    let top = base - s.height;
    match s.kind {
        ShapeKind::Building => {
            if dx.abs() > s.half_width || y < top || y > base {
                return None;
            }
            let wx = (dx + s.half_width).rem_euclid(6.0);
            let wy = (y - top).rem_euclid(6.0);
            let window = (2.0..4.5).contains(&wx) && (2.0..4.5).contains(&wy) && y < base - 3.0;
            Some(if window { s.accent } else { s.color })
        }
        ShapeKind::Tree => {
            let trunk_w = (s.half_width * 0.25).max(1.0);
            let crown_r = s.half_width;
            let crown_cy = top + crown_r;
            let in_crown = dx * dx + (y - crown_cy) * (y - crown_cy) <= crown_r * crown_r;
            if in_crown {
                Some(s.color)
            } else if dx.abs() <= trunk_w && y >= crown_cy && y <= base {
                Some(s.accent)
            } else {
                None
            }
        }
        ShapeKind::Dome => {
            if y > base {
                return None;
            }
            let rx = s.half_width;
            let ry = s.height.min(2.0 * rx);
            let u = dx / rx;
            let v = (base - y) / ry;
            if u * u + v * v > 1.0 {
                return None;
            }
            let band = ((base - y) / 4.0).floor() as i32 % 2 == 0;
            Some(if band { s.color } else { s.accent })
        }
    }
}

fn hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let rgb = match i as i32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    };
    rgb.map(|c| c.clamp(0.0, 1.0))
}

/// Encodes an image as 8-bit RGB.
pub fn to_rgb8(img: &Image) -> RgbImage {
    let data = img
        .as_slice()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    RgbImage::from_raw(img.width() as u32, img.height() as u32, data).expect("buffer matches dimensions")
}

pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    to_rgb8(img).save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `images/`, `manifest.jsonl` and `classes.json` under `dir`. A
/// seeded shuffle puts `round(test_fraction · n)` samples in the test split.
pub fn write_corpus(
    dir: &Path,
    samples: &[PanoramaSample],
    class_names: &[String],
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test fraction {test_fraction} outside [0,1]")));
    }
    let images = dir.join(IMAGES_DIR);
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (test_fraction * samples.len() as f64).round() as usize;
    let mut split = vec![Split::Train; samples.len()];
    for &i in &order[..n_test] {
        split[i] = Split::Test;
    }

    let manifest_path = dir.join(MANIFEST_FILE);
    let mut out = Vec::new();
    let mut entries = Vec::with_capacity(samples.len());
    for (s, sp) in samples.iter().zip(&split) {
        let rel = format!("{IMAGES_DIR}/{}.png", s.id);
        save_png(&s.pixels, &dir.join(&rel))?;
        let raw = RawEntry {
            path: rel.clone(),
            label: s.label,
            split: *sp,
        };
        serde_json::to_writer(&mut out, &raw).map_err(|e| Error::Invalid(e.to_string()))?;
        out.push(b'\n');
        entries.push(ManifestEntry {
            path: dir.join(rel),
            label: s.label,
            split: *sp,
        });
    }
    let mut f = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    f.write_all(&out).map_err(|e| Error::io(&manifest_path, e))?;
    let classes_path = dir.join(CLASSES_FILE);
    let classes_json = serde_json::to_string_pretty(class_names).map_err(|e| Error::Invalid(e.to_string()))?;
    fs::write(&classes_path, classes_json).map_err(|e| Error::io(&classes_path, e))?;
    Ok(DatasetManifest {
        entries,
        class_names: class_names.to_vec(),
    })
}

/// Names of the synthetic classes.
pub fn synth_class_names(classes: usize) -> Vec<String> {
    (0..classes).map(|k| format!("synth-{k:02}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        assert_eq!(hsv(1.0 / 3.0, 1.0, 1.0)[1], 1.0);
        assert_eq!(hsv(0.5, 0.0, 0.4), [0.4, 0.4, 0.4]);
    }

    #[test]
    fn synth_is_periodic_in_x() {
        // The generator evaluates everything on the cylinder, so a rolled copy
        // of a sample is itself a plausible sample: left and right edges meet
        // without a seam wider than the content's own variation.
        let spec = SynthSpec {
            count: 4,
            ..SynthSpec::default()
        };
        for s in synth_generate(&spec).unwrap() {
            let p = &s.pixels;
            let mut seam = 0f32;
            let mut inner = 0f32;
            for y in 0..p.height() {
                for c in 0..3 {
                    seam = seam.max((p.get(y, 0, c) - p.get(y, SYNTH_WIDTH - 1, c)).abs());
                    for x in 0..SYNTH_WIDTH - 1 {
                        inner = inner.max((p.get(y, x, c) - p.get(y, x + 1, c)).abs());
                    }
                }
            }
            assert!(seam <= inner + 1e-6, "seam {seam} inner {inner}");
        }
    }

    #[test]
    fn spec_validation() {
        assert!(SynthSpec {
            count: 0,
            ..SynthSpec::default()
        }
        .validate()
        .is_err());
        assert!(SynthSpec {
            classes: 1,
            ..SynthSpec::default()
        }
        .validate()
        .is_err());
        assert!(SynthSpec::default().validate().is_ok());
    }
}
