//! Deterministic synthetic shapes dataset (disks, squares, triangles on a
//! flat background) with controllable corruption: occluding patches, box
//! blur, and gaussian noise, applied in that fixed order.
//!
//! Every sample is a pure function of (spec.seed, index), so datasets are
//! reproducible byte-for-byte and samples are independent across indices.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::boxes::{iou, BoxF};
use crate::error::{Error, Result};
use crate::ppm;
use crate::rng::{stream, stream_rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Square,
    Triangle,
}

impl ShapeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ShapeKind::Disk => "disk",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }

    pub fn parse(s: &str) -> Result<ShapeKind> {
        match s {
            "disk" => Ok(ShapeKind::Disk),
            "square" => Ok(ShapeKind::Square),
            "triangle" => Ok(ShapeKind::Triangle),
            _ => Err(Error::Config(format!("unknown shape kind '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorruptionSpec {
    /// Probability of placing one occluding patch per target box.
    pub occlusion_prob: f64,
    /// Occluder side as a fraction of the image min-dimension (min, max).
    pub occluder_size: (f64, f64),
    /// Gaussian noise sigma (0 disables).
    pub noise_sigma: f64,
    /// Box-blur radius in pixels (0 disables).
    pub blur_radius: usize,
}

impl CorruptionSpec {
    pub fn none() -> CorruptionSpec {
        CorruptionSpec {
            occlusion_prob: 0.0,
            occluder_size: (0.15, 0.3),
            noise_sigma: 0.0,
            blur_radius: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub classes: Vec<ShapeKind>,
    /// Objects per image, inclusive range.
    pub objects: (usize, usize),
    /// Object half-size as a fraction of the image min-dimension.
    pub object_size: (f64, f64),
    /// Per-channel object intensity range.
    pub intensity: (f64, f64),
    /// Per-channel background intensity range.
    pub background: (f64, f64),
    pub corruption: CorruptionSpec,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::InvalidArg("image size must be at least 8x8".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::InvalidArg("at least one class required".into()));
        }
        if self.objects.0 == 0 || self.objects.0 > self.objects.1 {
            return Err(Error::InvalidArg(format!(
                "objects range {:?} must be non-empty and start at 1+",
                self.objects
            )));
        }
        for (name, (lo, hi)) in [
            ("object_size", self.object_size),
            ("intensity", self.intensity),
            ("background", self.background),
            ("occluder_size", self.corruption.occluder_size),
        ] {
            if !(lo <= hi && lo >= 0.0) {
                return Err(Error::InvalidArg(format!("{name} range ({lo}, {hi}) is invalid")));
            }
        }
        if !(0.0..=1.0).contains(&self.corruption.occlusion_prob) {
            return Err(Error::InvalidArg("occlusion_prob outside [0, 1]".into()));
        }
        if self.corruption.noise_sigma < 0.0 {
            return Err(Error::InvalidArg("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GtObject {
    pub class: usize,
    pub bounds: BoxF,
}

#[derive(Clone, Debug)]
pub struct DetectionSample {
    /// `[3, H, W]`, values in [0, 1].
    pub image: Tensor,
    pub gt: Vec<GtObject>,
    pub index: u64,
    pub seed: u64,
    /// Occluding patches applied during corruption (not persisted).
    pub occluders: Vec<BoxF>,
}

/// Geometry of one placed object, kept so tests can re-rasterize.
#[derive(Clone, Copy, Debug)]
pub struct PlacedShape {
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    pub half: f64,
}

/// Pixel centers covered by a shape, in row-major order.
pub fn rasterize(shape: &PlacedShape, h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut px = Vec::new();
    let y0 = ((shape.cy - shape.half).floor().max(0.0)) as usize;
    let y1 = ((shape.cy + shape.half).ceil().min(h as f64)) as usize;
    let x0 = ((shape.cx - shape.half).floor().max(0.0)) as usize;
    let x1 = ((shape.cx + shape.half).ceil().min(w as f64)) as usize;
    for y in y0..y1 {
        for x in x0..x1 {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = match shape.kind {
                ShapeKind::Disk => {
                    let (dx, dy) = (fx - shape.cx, fy - shape.cy);
                    dx * dx + dy * dy <= shape.half * shape.half
                }
                ShapeKind::Square => {
                    (fx - shape.cx).abs() <= shape.half && (fy - shape.cy).abs() <= shape.half
                }
                ShapeKind::Triangle => {
                    // upward isoceles: apex (cx, cy-half), base y = cy+half
                    let t = (fy - (shape.cy - shape.half)) / (2.0 * shape.half);
                    t >= 0.0 && t <= 1.0 && (fx - shape.cx).abs() <= t * shape.half
                }
            };
            if inside {
                px.push((y, x));
            }
        }
    }
    px
}

fn pixel_bounds(px: &[(usize, usize)]) -> Option<BoxF> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
    for &(y, x) in px {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if px.is_empty() {
        None
    } else {
        Some(BoxF::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64))
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    }
}

/// Applies corruption in the fixed order occlude -> blur -> noise; the
/// order is part of the dataset contract. One occluder is drawn per
/// `anchors` entry with probability `occlusion_prob`, centered inside that
/// anchor; with no anchors a single image-anywhere occluder is attempted.
/// Returns the corrupted image (clamped to [0, 1]) and the occluders.
pub fn corrupt(
    image: &Tensor,
    spec: &CorruptionSpec,
    anchors: &[BoxF],
    rng: &mut ChaCha8Rng,
) -> (Tensor, Vec<BoxF>) {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let mut out = image.clone();
    let mut occluders = Vec::new();
    let min_dim = h.min(w) as f64;

    // 1. occlusion
    if spec.occlusion_prob > 0.0 {
        let full_image = [BoxF::new(0.0, 0.0, w as f64, h as f64)];
        let targets: &[BoxF] = if anchors.is_empty() { &full_image } else { anchors };
        for anchor in targets {
            if rng.random_range(0.0..1.0) >= spec.occlusion_prob {
                continue;
            }
            let side = (uniform_in(rng, spec.occluder_size) * min_dim).max(1.0);
            let cx = uniform_in(rng, (anchor.x1, anchor.x2));
            let cy = uniform_in(rng, (anchor.y1, anchor.y2));
            let rect = BoxF::new(cx - side / 2.0, cy - side / 2.0, cx + side / 2.0, cy + side / 2.0)
                .clamped(w as f64, h as f64);
            let color = [
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            ];
            let (x0, y0) = (rect.x1.floor() as usize, rect.y1.floor() as usize);
            let (x1, y1) = ((rect.x2.ceil() as usize).min(w), (rect.y2.ceil() as usize).min(h));
            for c in 0..3 {
                for y in y0..y1 {
                    for x in x0..x1 {
                        let idx = out.idx3(c, y, x);
                        out.data_mut()[idx] = color[c];
                    }
                }
            }
            if x1 > x0 && y1 > y0 {
                occluders.push(rect);
            }
        }
    }

    // 2. box blur with edge clamping
    if spec.blur_radius > 0 {
        let r = spec.blur_radius as isize;
        let mut blurred = out.clone();
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    let mut count = 0.0;
                    for dy in -r..=r {
                        let yy = y as isize + dy;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for dx in -r..=r {
                            let xx = x as isize + dx;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            acc += out.at3(c, yy as usize, xx as usize);
                            count += 1.0;
                        }
                    }
                    let idx = blurred.idx3(c, y, x);
                    blurred.data_mut()[idx] = acc / count;
                }
            }
        }
        out = blurred;
    }

    // 3. clipped gaussian noise
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
        for v in out.data_mut() {
            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
        }
    }

    (out, occluders)
}

const PLACEMENT_RETRIES: usize = 100;
/// GT boxes of distinct objects may overlap at most this much.
const MAX_OBJECT_IOU: f64 = 0.3;

/// One deterministic sample: pure function of (spec.seed, index).
pub fn generate_sample(spec: &SceneSpec, index: u64) -> Result<DetectionSample> {
    generate_sample_detailed(spec, index).map(|(s, _)| s)
}

/// Like [`generate_sample`] but also returns the placed-shape geometry so
/// label soundness can be re-checked by re-rasterization.
pub fn generate_sample_detailed(
    spec: &SceneSpec,
    index: u64,
) -> Result<(DetectionSample, Vec<PlacedShape>)> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, &[stream::DATASET, index]);
    let (h, w) = (spec.height, spec.width);
    let min_dim = h.min(w) as f64;
    let n_objects = rng.random_range(spec.objects.0..=spec.objects.1);

    let bg = [
        uniform_in(&mut rng, spec.background),
        uniform_in(&mut rng, spec.background),
        uniform_in(&mut rng, spec.background),
    ];
    let mut image = Tensor::zeros(&[3, h, w]);
    for c in 0..3 {
        for i in 0..h * w {
            image.data_mut()[c * h * w + i] = bg[c];
        }
    }

    let mut gt: Vec<GtObject> = Vec::new();
    let mut shapes: Vec<PlacedShape> = Vec::new();
    for obj in 0..n_objects {
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            let half = uniform_in(&mut rng, spec.object_size) * min_dim;
            let half = half.max(2.0);
            if 2.0 * half + 2.0 >= w as f64 || 2.0 * half + 2.0 >= h as f64 {
                continue;
            }
            let cx = rng.random_range(half + 1.0..w as f64 - half - 1.0);
            let cy = rng.random_range(half + 1.0..h as f64 - half - 1.0);
            let kind_idx = rng.random_range(0..spec.classes.len());
            let shape = PlacedShape {
                kind: spec.classes[kind_idx],
                cx,
                cy,
                half,
            };
            let px = rasterize(&shape, h, w);
            let Some(bounds) = pixel_bounds(&px) else { continue };
            if gt.iter().any(|g| iou(&g.bounds, &bounds) > MAX_OBJECT_IOU) {
                continue;
            }
            let color = [
                uniform_in(&mut rng, spec.intensity),
                uniform_in(&mut rng, spec.intensity),
                uniform_in(&mut rng, spec.intensity),
            ];
            for &(y, x) in &px {
                for c in 0..3 {
                    let idx = image.idx3(c, y, x);
                    image.data_mut()[idx] = color[c];
                }
            }
            gt.push(GtObject {
                class: kind_idx,
                bounds,
            });
            shapes.push(shape);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Data(format!(
                "could not place object {obj} of sample {index} after {PLACEMENT_RETRIES} tries"
            )));
        }
    }

    let boxes: Vec<BoxF> = gt.iter().map(|g| g.bounds).collect();
    let (image, occluders) = corrupt(&image, &spec.corruption, &boxes, &mut rng);
    Ok((
        DetectionSample {
            image,
            gt,
            index,
            seed: spec.seed,
            occluders,
        },
        shapes,
    ))
}

pub fn generate_dataset(spec: &SceneSpec, n: usize) -> Result<Vec<DetectionSample>> {
    if n == 0 {
        return Err(Error::InvalidArg("dataset size must be at least 1".into()));
    }
    (0..n as u64).map(|i| generate_sample(spec, i)).collect()
}

// ---------------------------------------------------------------------------
// dataset files: PPM images plus a JSON-lines manifest

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    file: String,
    boxes: Vec<[f64; 4]>,
    classes: Vec<usize>,
    index: u64,
}

pub fn write_dataset(dir: &Path, samples: &[DetectionSample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = fs::File::create(dir.join("manifest.jsonl"))?;
    for sample in samples {
        let file = format!("img-{:06}.ppm", sample.index);
        ppm::write_ppm(&dir.join(&file), &sample.image)?;
        let line = ManifestLine {
            file,
            boxes: sample
                .gt
                .iter()
                .map(|g| [g.bounds.x1, g.bounds.y1, g.bounds.x2, g.bounds.y2])
                .collect(),
            classes: sample.gt.iter().map(|g| g.class).collect(),
            index: sample.index,
        };
        let json = serde_json::to_string(&line)
            .map_err(|e| Error::Data(format!("manifest encode: {e}")))?;
        writeln!(manifest, "{json}")?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Vec<DetectionSample>> {
    let manifest_path = dir.join("manifest.jsonl");
    let file = fs::File::open(&manifest_path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", manifest_path.display())))?;
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!(
                "manifest line {}: malformed entry: {e}",
                lineno + 1
            ))
        })?;
        if parsed.boxes.len() != parsed.classes.len() {
            return Err(Error::Data(format!(
                "manifest line {}: {} boxes but {} classes",
                lineno + 1,
                parsed.boxes.len(),
                parsed.classes.len()
            )));
        }
        let image = ppm::read_ppm(&dir.join(&parsed.file))?;
        let gt = parsed
            .boxes
            .iter()
            .zip(&parsed.classes)
            .map(|(b, &class)| GtObject {
                class,
                bounds: BoxF::new(b[0], b[1], b[2], b[3]),
            })
            .collect();
        samples.push(DetectionSample {
            image,
            gt,
            index: parsed.index,
            seed: 0,
            occluders: Vec::new(),
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SceneSpec {
        SceneSpec {
            height: 48,
            width: 48,
            classes: vec![ShapeKind::Disk, ShapeKind::Square, ShapeKind::Triangle],
            objects: (1, 2),
            object_size: (0.12, 0.2),
            intensity: (0.55, 0.95),
            background: (0.05, 0.4),
            corruption: CorruptionSpec::none(),
            seed: 42,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&spec(), 8).unwrap();
        let b = generate_dataset(&spec(), 8).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.image.bits_eq(&y.image));
            assert_eq!(x.gt, y.gt);
        }
    }

    #[test]
    fn clean_images_stay_in_unit_range() {
        for sample in generate_dataset(&spec(), 10).unwrap() {
            assert!(sample
                .image
                .data()
                .iter()
                .all(|&v| (0.0..=1.0).contains(&v)));
            assert!(!sample.gt.is_empty());
            assert!(sample.occluders.is_empty());
        }
    }

    #[test]
    fn boxes_stay_inside_the_image() {
        for sample in generate_dataset(&spec(), 10).unwrap() {
            for g in &sample.gt {
                assert!(g.bounds.x1 >= 0.0 && g.bounds.y1 >= 0.0);
                assert!(g.bounds.x2 <= 48.0 && g.bounds.y2 <= 48.0);
                assert!(g.bounds.is_valid());
            }
        }
    }

    #[test]
    fn occlusion_prob_one_records_occluders() {
        let mut s = spec();
        s.corruption.occlusion_prob = 1.0;
        for sample in generate_dataset(&s, 10).unwrap() {
            assert!(!sample.occluders.is_empty());
            // every occluder overlaps some object box
            for occ in &sample.occluders {
                assert!(sample.gt.iter().any(|g| occ.intersection_area(&g.bounds) > 0.0));
            }
        }
    }

    #[test]
    fn zero_strength_corruption_is_identity() {
        let img = Tensor::from_fn(&[3, 16, 16], |i| (i % 7) as f64 / 7.0);
        let mut rng = stream_rng(0, &[stream::DATASET]);
        let (out, occ) = corrupt(&img, &CorruptionSpec::none(), &[], &mut rng);
        assert!(out.bits_eq(&img));
        assert!(occ.is_empty());
    }

    #[test]
    fn full_image_occluder_gives_constant_image() {
        let img = Tensor::from_fn(&[3, 16, 16], |i| (i % 5) as f64 / 5.0);
        let spec = CorruptionSpec {
            occlusion_prob: 1.0,
            occluder_size: (2.0, 2.0), // side = 2 * min_dim, covers everything
            noise_sigma: 0.0,
            blur_radius: 0,
        };
        let mut rng = stream_rng(1, &[stream::DATASET]);
        let (out, occ) = corrupt(&img, &spec, &[], &mut rng);
        assert_eq!(occ.len(), 1);
        for c in 0..3 {
            let v = out.at3(c, 0, 0);
            assert!((0..16).all(|y| (0..16).all(|x| out.at3(c, y, x) == v)));
        }
    }

    #[test]
    fn noise_statistics_match_sigma() {
        let img = Tensor::filled(&[3, 100, 100], 0.5);
        let spec = CorruptionSpec {
            occlusion_prob: 0.0,
            occluder_size: (0.1, 0.1),
            noise_sigma: 0.1,
            blur_radius: 0,
        };
        let mut rng = stream_rng(3, &[stream::DATASET]);
        let (out, _) = corrupt(&img, &spec, &[], &mut rng);
        let n = out.len() as f64;
        let mean: f64 = out
            .data()
            .iter()
            .zip(img.data())
            .map(|(a, b)| a - b)
            .sum::<f64>()
            / n;
        let var: f64 = out
            .data()
            .iter()
            .zip(img.data())
            .map(|(a, b)| (a - b - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        assert!(
            (std - 0.1).abs() < 0.01,
            "std {std} not within 10% of 0.1"
        );
    }

    #[test]
    fn rendered_pixels_lie_inside_recorded_boxes() {
        let s = spec();
        for idx in 0..10u64 {
            let (sample, shapes) = generate_sample_detailed(&s, idx).unwrap();
            assert_eq!(sample.gt.len(), shapes.len());
            for (g, shape) in sample.gt.iter().zip(&shapes) {
                let px = rasterize(shape, s.height, s.width);
                assert!(!px.is_empty());
                for (y, x) in px {
                    let (fx, fy) = (x as f64, y as f64);
                    assert!(
                        fx >= g.bounds.x1
                            && fx + 1.0 <= g.bounds.x2
                            && fy >= g.bounds.y1
                            && fy + 1.0 <= g.bounds.y2,
                        "pixel ({y}, {x}) outside box {:?}",
                        g.bounds
                    );
                }
            }
        }
    }

    #[test]
    fn round_trip_preserves_manifest_and_quantized_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_dataset(&spec(), 5).unwrap();
        write_dataset(dir.path(), &samples).unwrap();
        let loaded = read_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), samples.len());
        for (a, b) in samples.iter().zip(&loaded) {
            assert!(a.image.max_abs_diff(&b.image) <= 1.0 / 510.0 + 1e-12);
            assert_eq!(a.gt, b.gt);
            assert_eq!(a.index, b.index);
        }
        // manifest bytes are reproducible
        let manifest1 = fs::read(dir.path().join("manifest.jsonl")).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        write_dataset(dir2.path(), &samples).unwrap();
        let manifest2 = fs::read(dir2.path().join("manifest.jsonl")).unwrap();
        assert_eq!(manifest1, manifest2);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &[]).unwrap();
        assert!(read_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn malformed_manifest_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_dataset(&spec(), 2).unwrap();
        write_dataset(dir.path(), &samples).unwrap();
        let path = dir.path().join("manifest.jsonl");
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("{not json\n");
        fs::write(&path, text).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn missing_image_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_dataset(&spec(), 1).unwrap();
        write_dataset(dir.path(), &samples).unwrap();
        fs::remove_file(dir.path().join("img-000000.ppm")).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("img-000000.ppm"), "{err}");
    }
}
