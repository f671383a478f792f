//! Isochromatic decomposition: K-means over pixel colors treated as points in
//! RGB space, split back into one image layer per cluster.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Cursor;

use image::{ImageFormat, RgbaImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_K: usize = 6;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IsochromeError {
    #[error("could not decode image: {0}")]
    Decode(String),
    #[error("unsupported image format")]
    UnsupportedFormat,
    #[error("stride must be at least 1")]
    InvalidStride,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("{distinct} distinct points cannot support k = {k}")]
    InsufficientPoints { distinct: usize, k: usize },
    #[error("model holds {assignments} assignments but the raster has {pixels} pixels")]
    DimensionMismatch { assignments: usize, pixels: usize },
    #[error("raster has {got} pixels, expected {expected}")]
    InvalidRaster { expected: usize, got: usize },
    #[error("could not encode layer: {0}")]
    Encode(String),
}

impl IsochromeError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Decode(_) => "DecodeError",
            Self::UnsupportedFormat => "UnsupportedFormat",
            Self::InvalidStride => "InvalidStride",
            Self::InvalidK => "InvalidK",
            Self::InsufficientPoints { .. } => "InsufficientPoints",
            Self::DimensionMismatch { .. } => "DimensionMismatch",
            Self::InvalidRaster { .. } => "InvalidRaster",
            Self::Encode(_) => "EncodeError",
        }
    }
}

/// A decoded RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRaster {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
}

impl ImageRaster {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self, IsochromeError> {
        let expected = width as usize * height as usize;
        if width == 0 || height == 0 || pixels.len() != expected {
            return Err(IsochromeError::InvalidRaster {
                expected,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Encodes the raster as an opaque RGB PNG.
    pub fn to_png(&self) -> Result<Vec<u8>, IsochromeError> {
        let flat: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        let img = image::RgbImage::from_raw(self.width, self.height, flat)
            .expect("raster length checked at construction");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| IsochromeError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }
}

/// A pixel color as a point in 3D space: x = red, y = green, z = blue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl ColorPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_rgb(rgb: [u8; 3]) -> Self {
        Self::new(rgb[0] as f64, rgb[1] as f64, rgb[2] as f64)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn distance_sq(&self, c: &[f64; 3]) -> f64 {
        let dx = self.x - c[0];
        let dy = self.y - c[1];
        let dz = self.z - c[2];
        dx * dx + dy * dy + dz * dz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            seed: 0,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

/// Result of a K-means fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Vec<[f64; 3]>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia measured after every assignment step, in order.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Centroid rounded to the nearest displayable color.
    pub fn centroid_color(&self, cluster: usize) -> [u8; 3] {
        let c = self.centroids[cluster];
        [round_channel(c[0]), round_channel(c[1]), round_channel(c[2])]
    }
}

fn round_channel(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Pixels assigned to one cluster, masked over the full raster.
#[derive(Debug, Clone, PartialEq)]
pub struct IsochromaticLayer {
    pub cluster: usize,
    pub centroid_color: [u8; 3],
    pub width: u32,
    pub height: u32,
    pub mask: Vec<bool>,
    pub pixel_count: usize,
}

impl IsochromaticLayer {
    /// RGBA image holding the member pixels' source colors; everything else is
    /// fully transparent.
    pub fn to_rgba(&self, raster: &ImageRaster) -> RgbaImage {
        let mut img = RgbaImage::new(self.width, self.height);
        for (i, (&member, px)) in self.mask.iter().zip(raster.pixels()).enumerate() {
            if member {
                let x = i as u32 % self.width;
                let y = i as u32 / self.width;
                img.put_pixel(x, y, image::Rgba([px[0], px[1], px[2], 255]));
            }
        }
        img
    }

    pub fn to_png(&self, raster: &ImageRaster) -> Result<Vec<u8>, IsochromeError> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgba(raster)
            .write_to(&mut out, ImageFormat::Png)
            .map_err(|e| IsochromeError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }
}

/// Decodes a PNG or JPEG stream, dropping any alpha channel.
pub fn decode_image(bytes: &[u8]) -> Result<ImageRaster, IsochromeError> {
    let format = image::guess_format(bytes).map_err(|_| {
        if looks_truncated(bytes) {
            IsochromeError::Decode("stream too short to identify".into())
        } else {
            IsochromeError::UnsupportedFormat
        }
    })?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(IsochromeError::UnsupportedFormat);
    }
    let img = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| IsochromeError::Decode(e.to_string()))?
        .to_rgb8();
    let (width, height) = img.dimensions();
    let pixels = img.pixels().map(|p| p.0).collect();
    ImageRaster::new(width, height, pixels)
}

// A prefix of a PNG or JPEG signature is a cut-off stream, not a foreign format.
fn looks_truncated(bytes: &[u8]) -> bool {
    const PNG: &[u8] = b"\x89PNG\r\n\x1a\n";
    const JPEG: &[u8] = &[0xFF, 0xD8, 0xFF];
    bytes.is_empty()
        || PNG.starts_with(&bytes[..bytes.len().min(PNG.len())])
        || JPEG.starts_with(&bytes[..bytes.len().min(JPEG.len())])
}

/// Samples every `stride`-th pixel along both axes, row-major.
pub fn pixels_to_points(
    raster: &ImageRaster,
    stride: usize,
) -> Result<Vec<ColorPoint>, IsochromeError> {
    if stride == 0 {
        return Err(IsochromeError::InvalidStride);
    }
    let mut points = Vec::new();
    for y in (0..raster.height).step_by(stride) {
        for x in (0..raster.width).step_by(stride) {
            points.push(ColorPoint::from_rgb(raster.pixel(x, y)));
        }
    }
    Ok(points)
}

/// Smallest stride that keeps the sampled point count at or below `max_points`.
pub fn stride_for_budget(raster: &ImageRaster, max_points: usize) -> usize {
    let max_points = max_points.max(1);
    let (w, h) = (raster.width as usize, raster.height as usize);
    (1..)
        .find(|s| w.div_ceil(*s) * h.div_ceil(*s) <= max_points)
        .expect("stride equal to the larger side samples one pixel")
}

fn count_distinct(points: &[ColorPoint]) -> usize {
    points
        .iter()
        .map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
        .collect::<HashSet<_>>()
        .len()
}

/// Index of the nearest centroid by squared Euclidean distance. Ties go to the
/// lowest index.
pub fn nearest_centroid(centroids: &[[f64; 3]], p: &ColorPoint) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = p.distance_sq(c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

pub fn assign_point(model: &ClusterModel, p: &ColorPoint) -> usize {
    nearest_centroid(&model.centroids, p)
}

/// Sum of squared distances from each point to its assigned centroid.
pub fn inertia(points: &[ColorPoint], model: &ClusterModel) -> f64 {
    sum_sq(points, &model.centroids, &model.assignments)
}

fn sum_sq(points: &[ColorPoint], centroids: &[[f64; 3]], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| p.distance_sq(&centroids[a]))
        .sum()
}

/// k-means++ seeding: the first center is uniform, each later one is drawn with
/// probability proportional to its squared distance from the nearest chosen
/// center.
fn seed_centroids(points: &[ColorPoint], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())].as_array());
    let mut dist: Vec<f64> = points.iter().map(|p| p.distance_sq(&centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let mut target = rng.random::<f64>() * total;
        // Fall back to the last positive-weight point if rounding runs past the end.
        let mut chosen = dist.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        for (i, &d) in dist.iter().enumerate() {
            if d > 0.0 && target < d {
                chosen = i;
                break;
            }
            target -= d;
        }
        let c = points[chosen].as_array();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(p.distance_sq(&c));
        }
        centroids.push(c);
    }
    centroids
}

fn cluster_means(points: &[ColorPoint], assignments: &[usize], k: usize) -> (Vec<[f64; 3]>, Vec<usize>) {
    let mut sums = vec![[0.0f64; 3]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        sums[a][0] += p.x;
        sums[a][1] += p.y;
        sums[a][2] += p.z;
        counts[a] += 1;
    }
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| {
            if n == 0 {
                [f64::NAN; 3]
            } else {
                let n = n as f64;
                [s[0] / n, s[1] / n, s[2] / n]
            }
        })
        .collect();
    (means, counts)
}

/// Mean step. Empty clusters steal the point farthest from its own centroid,
/// then every mean is recomputed from the final assignment.
fn update_centroids(points: &[ColorPoint], assignments: &mut [usize], k: usize) -> Vec<[f64; 3]> {
    let (mut means, mut counts) = cluster_means(points, assignments, k);
    while let Some(empty) = counts.iter().position(|&n| n == 0) {
        let mut far = None;
        let mut far_d = -1.0;
        for (i, (p, &a)) in points.iter().zip(assignments.iter()).enumerate() {
            if counts[a] < 2 {
                continue;
            }
            let d = p.distance_sq(&means[a]);
            if d > far_d {
                far = Some(i);
                far_d = d;
            }
        }
        let Some(i) = far else { break };
        counts[assignments[i]] -= 1;
        assignments[i] = empty;
        counts[empty] = 1;
        means[empty] = points[i].as_array();
    }
    cluster_means(points, assignments, k).0
}

/// Lloyd's algorithm from k-means++ seeds.
///
/// Iteration stops once an assignment step reproduces the previous assignment,
/// at which point the model is a fixed point, or after `max_iter` assignment
/// steps. A run cut off by `max_iter` still counts as converged when its last
/// centroid move was below `tol`.
pub fn kmeans_fit(points: &[ColorPoint], params: &KMeansParams) -> Result<ClusterModel, IsochromeError> {
    let k = params.k;
    if k == 0 {
        return Err(IsochromeError::InvalidK);
    }
    let distinct = count_distinct(points);
    if distinct < k {
        return Err(IsochromeError::InsufficientPoints { distinct, k });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut last_shift = f64::INFINITY;

    while iterations < params.max_iter.max(1) {
        let next: Vec<usize> = points.iter().map(|p| nearest_centroid(&centroids, p)).collect();
        iterations += 1;
        history.push(sum_sq(points, &centroids, &next));
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;

        let updated = update_centroids(points, &mut assignments, k);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| {
                let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            })
            .fold(0.0, f64::max);
        centroids = updated;
        last_shift = shift;
    }
    if !converged && last_shift < params.tol {
        converged = true;
    }

    if assignments.len() != points.len() {
        assignments = points.iter().map(|p| nearest_centroid(&centroids, p)).collect();
    }
    let inertia = sum_sq(points, &centroids, &assignments);
    Ok(ClusterModel {
        centroids,
        assignments,
        inertia,
        inertia_history: history,
        iterations,
        converged,
    })
}

pub fn luminance(c: &[f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// How pixel-to-cluster membership is obtained when building layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerAssignment {
    /// Reuse the model's stored assignments; the model must have been fit on
    /// every pixel (stride 1).
    Reuse,
    /// Assign each pixel to its nearest centroid.
    Nearest,
}

/// One layer per cluster, ordered by ascending centroid luminance.
pub fn extract_layers(
    raster: &ImageRaster,
    model: &ClusterModel,
    mode: LayerAssignment,
) -> Result<Vec<IsochromaticLayer>, IsochromeError> {
    let labels: Vec<usize> = match mode {
        LayerAssignment::Reuse => {
            if model.assignments.len() != raster.len() {
                return Err(IsochromeError::DimensionMismatch {
                    assignments: model.assignments.len(),
                    pixels: raster.len(),
                });
            }
            model.assignments.clone()
        }
        LayerAssignment::Nearest => raster
            .pixels()
            .iter()
            .map(|px| assign_point(model, &ColorPoint::from_rgb(*px)))
            .collect(),
    };

    let mut order: Vec<usize> = (0..model.k()).collect();
    order.sort_by(|&a, &b| {
        luminance(&model.centroids[a])
            .total_cmp(&luminance(&model.centroids[b]))
            .then(a.cmp(&b))
    });

    Ok(order
        .into_iter()
        .map(|cluster| {
            let mask: Vec<bool> = labels.iter().map(|&l| l == cluster).collect();
            let pixel_count = mask.iter().filter(|&&m| m).count();
            IsochromaticLayer {
                cluster,
                centroid_color: model.centroid_color(cluster),
                width: raster.width,
                height: raster.height,
                mask,
                pixel_count,
            }
        })
        .collect())
}

/// ASCII PLY with float positions and uchar colors taken from each point's
/// assigned centroid. Points without a stored assignment are assigned to
/// their nearest centroid.
pub fn export_point_cloud(points: &[ColorPoint], model: &ClusterModel) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", points.len());
    out.push_str(
        "property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
    );
    let reuse = model.assignments.len() == points.len();
    for (i, p) in points.iter().enumerate() {
        let cluster = if reuse {
            model.assignments[i]
        } else {
            assign_point(model, p)
        };
        let [r, g, b] = model.centroid_color(cluster);
        let _ = writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, r, g, b);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub cluster: usize,
    pub color: [u8; 3],
    pub pixel_count: usize,
}

/// The model summary written next to the layer images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub k: usize,
    pub width: u32,
    pub height: u32,
    pub stride: usize,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub centroids: Vec<[f64; 3]>,
    pub inertia: f64,
    pub layers: Vec<LayerSummary>,
}

/// Everything produced by one decomposition.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub raster: ImageRaster,
    pub stride: usize,
    pub points: Vec<ColorPoint>,
    pub model: ClusterModel,
    pub layers: Vec<IsochromaticLayer>,
}

impl Decomposition {
    pub fn summary(&self, seed: u64) -> ModelSummary {
        ModelSummary {
            k: self.model.k(),
            width: self.raster.width,
            height: self.raster.height,
            stride: self.stride,
            seed,
            iterations: self.model.iterations,
            converged: self.model.converged,
            centroids: self.model.centroids.clone(),
            inertia: self.model.inertia,
            layers: self
                .layers
                .iter()
                .map(|l| LayerSummary {
                    cluster: l.cluster,
                    color: l.centroid_color,
                    pixel_count: l.pixel_count,
                })
                .collect(),
        }
    }

    pub fn point_cloud(&self) -> String {
        export_point_cloud(&self.points, &self.model)
    }
}

/// Samples, fits and layers a raster in one go.
pub fn decompose(
    raster: ImageRaster,
    stride: usize,
    params: &KMeansParams,
) -> Result<Decomposition, IsochromeError> {
    let points = pixels_to_points(&raster, stride)?;
    let model = kmeans_fit(&points, params)?;
    let mode = if stride == 1 {
        LayerAssignment::Reuse
    } else {
        LayerAssignment::Nearest
    };
    let layers = extract_layers(&raster, &model, mode)?;
    Ok(Decomposition {
        raster,
        stride,
        points,
        model,
        layers,
    })
}
