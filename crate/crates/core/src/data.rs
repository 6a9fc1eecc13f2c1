//! Datasets: the 1-D synthetic regression tasks, binary Iris, and
//! Fashion-MNIST images read from IDX files.

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, PcaModel};
use crate::rng::{normal, shuffle, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: Vec<f64>,
    pub y: f64,
    pub in_train_domain: bool,
}

impl LabeledPoint {
    pub fn new(x: Vec<f64>, y: f64, in_train_domain: bool) -> Self {
        Self {
            x,
            y,
            in_train_domain,
        }
    }
}

/// Per-feature min/max used to map raw features onto `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub target: (f64, f64),
}

impl Normalization {
    /// Records the per-column range of `rows`; constant columns are rejected.
    pub fn fit(rows: &[Vec<f64>], target: (f64, f64)) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for row in rows {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        if let Some(j) = (0..d).find(|&j| max[j] <= min[j]) {
            return Err(Error::Malformed(format!("feature {j} is constant")));
        }
        Ok(Self { min, max, target })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (lo, hi) = self.target;
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (mn, mx))| lo + (hi - lo) * (v - mn) / (mx - mn))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub points: Vec<LabeledPoint>,
    pub feature_dim: usize,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(points: Vec<LabeledPoint>) -> Result<Self> {
        let first = points.first().ok_or(Error::Empty("dataset"))?;
        let feature_dim = first.x.len();
        for p in &points {
            if p.x.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    context: "dataset features",
                    expected: feature_dim,
                    got: p.x.len(),
                });
            }
            if !p.y.is_finite() || p.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dataset point"));
            }
        }
        Ok(Self {
            points,
            feature_dim,
            normalization: None,
        })
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = Some(normalization);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.y).collect()
    }

    pub fn domain_flags(&self) -> Vec<bool> {
        self.points.iter().map(|p| p.in_train_domain).collect()
    }
}

/// Intervals the 1-D training inputs are drawn from.
pub const TRAIN_INTERVALS: [(f64, f64); 2] = [(-1.0, 0.0), (1.0, 2.0)];
/// Range of the 1-D test inputs.
pub const TEST_RANGE: (f64, f64) = (-3.0, 4.0);
/// Noise standard deviation of both synthetic tasks.
pub const SYNTHETIC_NOISE_STD: f64 = 0.25;

pub fn in_train_domain(x: f64) -> bool {
    TRAIN_INTERVALS.iter().any(|&(lo, hi)| (lo..=hi).contains(&x))
}

/// The two 1-D regression problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticTask {
    /// `y = sin(4x) + noise`
    Sine,
    /// `y = x/4 + noise`
    Linear,
}

impl SyntheticTask {
    pub fn target(self, x: f64) -> f64 {
        match self {
            SyntheticTask::Sine => (4.0 * x).sin(),
            SyntheticTask::Linear => x / 4.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SyntheticTask::Sine => "sine",
            SyntheticTask::Linear => "linear",
        }
    }
}

/// Draws a train set from the two training intervals (equal mass per unit
/// length) and a test set uniform over the full range, sorted by `x`.
pub fn gen_synthetic(
    task: SyntheticTask,
    n_train: usize,
    n_test: usize,
    noise_std: f64,
    rng: &mut SimRng,
) -> Result<(Dataset, Dataset)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::InvalidArgument(
            "synthetic datasets need at least one train and one test point".into(),
        ));
    }
    let sample = |x: f64, rng: &mut SimRng| {
        let y = normal(rng, task.target(x), noise_std);
        LabeledPoint::new(vec![x], y, in_train_domain(x))
    };
    let total_len: f64 = TRAIN_INTERVALS.iter().map(|(lo, hi)| hi - lo).sum();
    let train: Vec<LabeledPoint> = (0..n_train)
        .map(|_| {
            let mut u = rng.random::<f64>() * total_len;
            let mut x = TRAIN_INTERVALS[TRAIN_INTERVALS.len() - 1].1;
            for &(lo, hi) in &TRAIN_INTERVALS {
                if u <= hi - lo {
                    x = lo + u;
                    break;
                }
                u -= hi - lo;
            }
            sample(x, rng)
        })
        .collect();
    let (lo, hi) = TEST_RANGE;
    let mut test: Vec<LabeledPoint> = (0..n_test)
        .map(|_| {
            let x = rng.random_range(lo..hi);
            sample(x, rng)
        })
        .collect();
    test.sort_by(|a, b| a.x[0].total_cmp(&b.x[0]));
    Ok((Dataset::new(train)?, Dataset::new(test)?))
}

/// `y = sin(4x) + N(0, 1/4²)`.
pub fn gen_sine(n_train: usize, n_test: usize, rng: &mut SimRng) -> Result<(Dataset, Dataset)> {
    gen_synthetic(SyntheticTask::Sine, n_train, n_test, SYNTHETIC_NOISE_STD, rng)
}

/// `y = x/4 + N(0, 1/16)`.
pub fn gen_linear(n_train: usize, n_test: usize, rng: &mut SimRng) -> Result<(Dataset, Dataset)> {
    gen_synthetic(SyntheticTask::Linear, n_train, n_test, SYNTHETIC_NOISE_STD, rng)
}

/// Setosa and versicolor rows of the Iris data (100 rows, 4 features).
pub const IRIS_CSV: &str = include_str!("../assets/iris_binary.csv");

const IRIS_HEADER: &str = "sepal_length,sepal_width,petal_length,petal_width,class";

/// Parses the binary Iris CSV into raw features and ±1 labels
/// (setosa → −1, versicolor → +1).
pub fn parse_iris_csv(csv: &str) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == IRIS_HEADER => {}
        other => {
            return Err(Error::Malformed(format!(
                "unexpected Iris header {other:?}"
            )))
        }
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != 5 {
                return Err(Error::Malformed(format!(
                    "row {}: expected 5 fields, got {}",
                    i + 1,
                    fields.len()
                )));
            }
            let x = fields[..4]
                .iter()
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Malformed(format!("row {}: bad number {f:?}", i + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            let y = match fields[4].trim() {
                "setosa" => -1.0,
                "versicolor" => 1.0,
                other => {
                    return Err(Error::Malformed(format!(
                        "row {}: unexpected class {other:?}",
                        i + 1
                    )))
                }
            };
            Ok((x, y))
        })
        .collect()
}

/// Loads binary Iris, min-max normalizes every feature to `[0, π]` over all
/// rows, and splits each class by seeded shuffle (`train_fraction` of each
/// class goes to training).
pub fn load_iris_binary(
    csv: &str,
    rng: &mut SimRng,
    train_fraction: f64,
) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside [0, 1]"
        )));
    }
    let rows = parse_iris_csv(csv)?;
    if rows.is_empty() {
        return Err(Error::Malformed("Iris CSV has no rows".into()));
    }
    let raw: Vec<Vec<f64>> = rows.iter().map(|(x, _)| x.clone()).collect();
    let norm = Normalization::fit(&raw, (0.0, PI))?;

    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for label in [-1.0, 1.0] {
        let mut idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].1 == label).collect();
        shuffle(&mut idx, rng);
        let n_train = (idx.len() as f64 * train_fraction).round() as usize;
        train_idx.extend_from_slice(&idx[..n_train]);
        test_idx.extend_from_slice(&idx[n_train..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let build = |idx: &[usize]| -> Result<Dataset> {
        let pts = idx
            .iter()
            .map(|&i| LabeledPoint::new(norm.apply(&rows[i].0), rows[i].1, true))
            .collect();
        Ok(Dataset::new(pts)?.with_normalization(norm.clone()))
    };
    Ok((build(&train_idx)?, build(&test_idx)?))
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

/// A 28×28 grayscale image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub pixels: Vec<f64>,
    pub label: u8,
}

impl ImageRecord {
    pub fn new(pixels: Vec<f64>, label: u8) -> Result<Self> {
        if pixels.len() != IMAGE_PIXELS {
            return Err(Error::DimensionMismatch {
                context: "image pixels",
                expected: IMAGE_PIXELS,
                got: pixels.len(),
            });
        }
        Ok(Self { pixels, label })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * IMAGE_SIDE + col]
    }
}

/// Returns the payload, inflating it when it starts with the gzip magic.
pub fn maybe_gunzip(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let chunk = bytes.get(offset..offset + 4).ok_or(Error::Truncated {
        needed: offset + 4,
        available: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("four bytes")))
}

fn expect_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = read_u32(bytes, 0)?;
    if found == expected {
        Ok(())
    } else {
        Err(Error::BadMagic { expected, found })
    }
}

/// Raw pixel bytes of every image in an IDX3 payload.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Vec<u8>>> {
    expect_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(Error::Malformed(format!(
            "expected {IMAGE_SIDE}x{IMAGE_SIDE} images, got {rows}x{cols}"
        )));
    }
    let needed = 16 + count * IMAGE_PIXELS;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    Ok(bytes[16..needed]
        .chunks_exact(IMAGE_PIXELS)
        .map(<[u8]>::to_vec)
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    expect_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    Ok(bytes[8..needed].to_vec())
}

/// Reads an IDX3 image file (optionally gzip-compressed); pixels scaled by 1/255.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let bytes = maybe_gunzip(std::fs::read(path)?)?;
    Ok(parse_idx_images(&bytes)?
        .into_iter()
        .map(|img| img.into_iter().map(|b| f64::from(b) / 255.0).collect())
        .collect())
}

/// Reads an IDX1 label file (optionally gzip-compressed).
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&maybe_gunzip(std::fs::read(path)?)?)
}

/// Pairs images with labels; the two files must hold the same count.
pub fn load_idx_dataset(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
) -> Result<Vec<ImageRecord>> {
    let images = load_idx_images(images)?;
    let labels = load_idx_labels(labels)?;
    if images.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "IDX image/label count",
            expected: images.len(),
            got: labels.len(),
        });
    }
    images
        .into_iter()
        .zip(labels)
        .map(|(px, label)| ImageRecord::new(px, label))
        .collect()
}

/// Serializes 28×28 byte images as an uncompressed IDX3 payload.
pub fn encode_idx_images(images: &[Vec<u8>]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + images.len() * IMAGE_PIXELS);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    out.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    for img in images {
        if img.len() != IMAGE_PIXELS {
            return Err(Error::DimensionMismatch {
                context: "IDX image bytes",
                expected: IMAGE_PIXELS,
                got: img.len(),
            });
        }
        out.extend_from_slice(img);
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Rotates `img` by `angle_degrees` (counter-clockwise as displayed) about
/// the pixel-grid center with bilinear interpolation; samples falling outside
/// the image read as 0.
pub fn rotate_image(img: &ImageRecord, angle_degrees: f64) -> ImageRecord {
    let center = (IMAGE_SIDE as f64 - 1.0) / 2.0;
    let (sin, cos) = angle_degrees.to_radians().sin_cos();
    let read = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= IMAGE_SIDE as isize || c >= IMAGE_SIDE as isize {
            0.0
        } else {
            img.get(r as usize, c as usize)
        }
    };
    let mut pixels = Vec::with_capacity(IMAGE_PIXELS);
    for row in 0..IMAGE_SIDE {
        for col in 0..IMAGE_SIDE {
            let dx = col as f64 - center;
            let dy = center - row as f64;
            // Inverse rotation maps the output pixel back into the source.
            let sx = cos * dx + sin * dy;
            let sy = -sin * dx + cos * dy;
            let src_col = center + sx;
            let src_row = center - sy;
            let r0 = src_row.floor();
            let c0 = src_col.floor();
            let fr = src_row - r0;
            let fc = src_col - c0;
            let (r0, c0) = (r0 as isize, c0 as isize);
            let v = (1.0 - fr) * ((1.0 - fc) * read(r0, c0) + fc * read(r0, c0 + 1))
                + fr * ((1.0 - fc) * read(r0 + 1, c0) + fc * read(r0 + 1, c0 + 1));
            pixels.push(v.clamp(0.0, 1.0));
        }
    }
    ImageRecord {
        pixels,
        label: img.label,
    }
}

/// Subsample sizes and class pair for the Fashion-MNIST task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmnistOptions {
    pub class_a: u8,
    pub class_b: u8,
    pub n_components: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl Default for FmnistOptions {
    fn default() -> Self {
        Self {
            class_a: 0,
            class_b: 1,
            n_components: 7,
            train_per_class: 500,
            test_per_class: 200,
        }
    }
}

/// Two-class Fashion-MNIST reduced to `n_components` PCA features scaled to
/// `[0, π]` with training statistics.
#[derive(Debug, Clone)]
pub struct FmnistData {
    pub train: Dataset,
    pub pca: PcaModel,
    pub normalization: Normalization,
    pub test_images: Vec<ImageRecord>,
    pub options: FmnistOptions,
}

impl FmnistData {
    /// ±1 label of `class` (`class_a` → −1).
    pub fn target(&self, class: u8) -> f64 {
        if class == self.options.class_a {
            -1.0
        } else {
            1.0
        }
    }

    /// PCA projection followed by the training normalization.
    pub fn featurize(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        Ok(self.normalization.apply(&self.pca.project(pixels)?))
    }

    /// Test images rotated by `angle_degrees`, featurized.
    pub fn rotated_test_set(&self, angle_degrees: f64) -> Result<Dataset> {
        let pts = self
            .test_images
            .iter()
            .map(|img| {
                let rotated = if angle_degrees == 0.0 {
                    img.clone()
                } else {
                    rotate_image(img, angle_degrees)
                };
                Ok(LabeledPoint::new(
                    self.featurize(&rotated.pixels)?,
                    self.target(img.label),
                    angle_degrees == 0.0,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(pts)
    }
}

/// Draws the seeded per-class subsample, fits PCA on the training images
/// only, and normalizes projected features with training min/max.
pub fn prepare_fmnist(
    records: &[ImageRecord],
    options: FmnistOptions,
    rng: &mut SimRng,
) -> Result<FmnistData> {
    if options.class_a == options.class_b {
        return Err(Error::InvalidArgument(
            "Fashion-MNIST classes must differ".into(),
        ));
    }
    let mut train_imgs: Vec<&ImageRecord> = Vec::new();
    let mut test_images = Vec::new();
    for class in [options.class_a, options.class_b] {
        let mut idx: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].label == class)
            .collect();
        if idx.is_empty() {
            return Err(Error::MissingClass(class));
        }
        let want = options.train_per_class + options.test_per_class;
        if idx.len() < want {
            return Err(Error::InvalidArgument(format!(
                "class {class} has {} images, need {want}",
                idx.len()
            )));
        }
        shuffle(&mut idx, rng);
        train_imgs.extend(idx[..options.train_per_class].iter().map(|&i| &records[i]));
        test_images.extend(
            idx[options.train_per_class..want]
                .iter()
                .map(|&i| records[i].clone()),
        );
    }

    let rows: Vec<Vec<f64>> = train_imgs.iter().map(|r| r.pixels.clone()).collect();
    let pca = crate::linalg::pca_fit(&Matrix::from_rows(&rows)?, options.n_components)?;
    let projected = rows
        .iter()
        .map(|r| pca.project(r))
        .collect::<Result<Vec<_>>>()?;
    let normalization = Normalization::fit(&projected, (0.0, PI))?;
    let points = projected
        .iter()
        .zip(&train_imgs)
        .map(|(p, img)| {
            let y = if img.label == options.class_a { -1.0 } else { 1.0 };
            LabeledPoint::new(normalization.apply(p), y, true)
        })
        .collect();
    let train = Dataset::new(points)?.with_normalization(normalization.clone());
    Ok(FmnistData {
        train,
        pca,
        normalization,
        test_images,
        options,
    })
}
