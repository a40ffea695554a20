//! Synthetic attenuation images: Shepp-Logan heads and random geometric shapes.
//!
//! Pixel `(r, c)` of an `N × N` image has its center at
//! `x = c - (N-1)/2`, `y = (N-1)/2 - r` (unit spacing, y pointing up).

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, DatasetManifest};
use crate::radon;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    size: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(size: usize, pixels: Vec<f64>) -> Result<Self> {
        if size == 0 || pixels.len() != size * size {
            return Err(Error::contract("image", format!("{} pixels do not form a {size}x{size} image", pixels.len())));
        }
        Ok(Image { size, pixels })
    }

    pub fn zeros(size: usize) -> Self {
        Image { size, pixels: vec![0.0; size * size] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.size + c]
    }

    pub fn scaled(&self, f: f64) -> Image {
        Image { size: self.size, pixels: self.pixels.iter().map(|v| v * f).collect() }
    }

    /// Centered coordinates of pixel `(r, c)`.
    pub fn coords(size: usize, r: usize, c: usize) -> (f64, f64) {
        let c0 = (size as f64 - 1.0) / 2.0;
        (c as f64 - c0, c0 - r as f64)
    }

    /// Whether the center of pixel `(r, c)` lies in the inscribed circle.
    pub fn in_fov(size: usize, r: usize, c: usize) -> bool {
        let (x, y) = Self::coords(size, r, c);
        let rad = size as f64 / 2.0;
        x * x + y * y <= rad * rad
    }

    /// Range `[0, 1]`, finiteness, and support inside the inscribed circle.
    pub fn check_invariants(&self) -> Result<()> {
        for r in 0..self.size {
            for c in 0..self.size {
                let v = self.get(r, c);
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(Error::contract("image", format!("pixel ({r},{c}) = {v} outside [0,1]")));
                }
                if v != 0.0 && !Self::in_fov(self.size, r, c) {
                    return Err(Error::contract("image", format!("pixel ({r},{c}) outside the field of view")));
                }
            }
        }
        Ok(())
    }
}

fn check_size(op: &'static str, size: usize) -> Result<()> {
    if size < 16 || size % 2 != 0 {
        return Err(Error::contract(op, format!("size must be even and >= 16, got {size}")));
    }
    Ok(())
}

/// One ellipse in normalized coordinates (`[-1, 1]` spans the image).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub intensity: f64,
    pub semi_x: f64,
    pub semi_y: f64,
    pub center_x: f64,
    pub center_y: f64,
    /// Rotation in degrees, counter-clockwise.
    pub angle_deg: f64,
}

const fn ellipse(intensity: f64, semi_x: f64, semi_y: f64, center_x: f64, center_y: f64, angle_deg: f64) -> Ellipse {
    Ellipse { intensity, semi_x, semi_y, center_x, center_y, angle_deg }
}

/// The ten-ellipse head phantom with Toft's contrast-enhanced intensities,
/// whose sum stays within `[0, 1]`.
pub const SHEPP_LOGAN: [Ellipse; 10] = [
    ellipse(1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    ellipse(-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    ellipse(-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    ellipse(-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    ellipse(0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    ellipse(0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    ellipse(0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    ellipse(0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    ellipse(0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    ellipse(0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// Per-sample perturbation ranges for generated Shepp-Logan datasets.
pub const SHEPP_INTENSITY_JITTER: f64 = 0.10;
pub const SHEPP_ROTATION_JITTER_DEG: f64 = 5.0;

/// Renders ellipses by center-point membership, then clips into `[0, 1]`.
pub fn render_ellipses(size: usize, table: &[Ellipse]) -> Image {
    let half = size as f64 / 2.0;
    let mut pixels = vec![0.0; size * size];
    for r in 0..size {
        for c in 0..size {
            let (x, y) = Image::coords(size, r, c);
            let (xn, yn) = (x / half, y / half);
            let mut v = 0.0;
            for e in table {
                let (s, co) = e.angle_deg.to_radians().sin_cos();
                let dx = xn - e.center_x;
                let dy = yn - e.center_y;
                let u = dx * co + dy * s;
                let w = -dx * s + dy * co;
                if (u / e.semi_x).powi(2) + (w / e.semi_y).powi(2) <= 1.0 {
                    v += e.intensity;
                }
            }
            pixels[r * size + c] = v.clamp(0.0, 1.0);
        }
    }
    Image { size, pixels }
}

pub fn shepp_logan(size: usize) -> Result<Image> {
    check_size("shepp_logan", size)?;
    Ok(render_ellipses(size, &SHEPP_LOGAN))
}

/// Shepp-Logan with every ellipse's intensity scaled by `1 ± 10%` and its
/// rotation shifted by `± 5°`, drawn from `rng`.
pub fn perturbed_shepp_logan(size: usize, rng: &mut rng::Rng) -> Result<Image> {
    check_size("shepp_logan", size)?;
    let table: Vec<Ellipse> = SHEPP_LOGAN
        .iter()
        .map(|e| Ellipse {
            intensity: e.intensity * (1.0 + rng.random_range(-SHEPP_INTENSITY_JITTER..=SHEPP_INTENSITY_JITTER)),
            angle_deg: e.angle_deg + rng.random_range(-SHEPP_ROTATION_JITTER_DEG..=SHEPP_ROTATION_JITTER_DEG),
            ..*e
        })
        .collect();
    Ok(render_ellipses(size, &table))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Circle {
        cx: f64,
        cy: f64,
        radius: f64,
        intensity: f64,
    },
    /// Rectangle with half extents, rotated by `angle` radians.
    Rect {
        cx: f64,
        cy: f64,
        half_w: f64,
        half_h: f64,
        angle: f64,
        intensity: f64,
    },
    Triangle {
        vertices: [(f64, f64); 3],
        intensity: f64,
    },
}

impl Shape {
    pub fn intensity(&self) -> f64 {
        match self {
            Shape::Circle { intensity, .. } | Shape::Rect { intensity, .. } | Shape::Triangle { intensity, .. } => {
                *intensity
            }
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Circle { cx, cy, radius, .. } => (x - cx).powi(2) + (y - cy).powi(2) <= radius * radius,
            Shape::Rect { cx, cy, half_w, half_h, angle, .. } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                (dx * c + dy * s).abs() <= half_w && (-dx * s + dy * c).abs() <= half_h
            }
            Shape::Triangle { vertices: [a, b, c], .. } => {
                let cross = |p: (f64, f64), q: (f64, f64)| (q.0 - p.0) * (y - p.1) - (q.1 - p.1) * (x - p.0);
                let (d1, d2, d3) = (cross(a, b), cross(b, c), cross(c, a));
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(neg && pos)
            }
        }
    }
}

/// Sub-samples per pixel edge for anti-aliasing.
const SUPERSAMPLE: usize = 4;

/// Anti-aliased rendering (coverage × intensity), composited by maximum,
/// zeroed outside the inscribed circle.
pub fn render_shapes(size: usize, shapes: &[Shape]) -> Image {
    let mut pixels = vec![0.0; size * size];
    let step = 1.0 / SUPERSAMPLE as f64;
    let samples = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for r in 0..size {
        for c in 0..size {
            if !Image::in_fov(size, r, c) {
                continue;
            }
            let (x0, y0) = Image::coords(size, r, c);
            let mut v: f64 = 0.0;
            for shape in shapes {
                let mut hits = 0usize;
                for i in 0..SUPERSAMPLE {
                    for j in 0..SUPERSAMPLE {
                        let x = x0 - 0.5 + (j as f64 + 0.5) * step;
                        let y = y0 + 0.5 - (i as f64 + 0.5) * step;
                        hits += shape.contains(x, y) as usize;
                    }
                }
                v = v.max(shape.intensity() * hits as f64 / samples);
            }
            pixels[r * size + c] = v.clamp(0.0, 1.0);
        }
    }
    Image { size, pixels }
}

/// Draws the layout used by [`random_shapes`]: between 1 and `max_shapes`
/// shapes, each with a bounding circle inside 90% of the field of view.
pub fn random_shape_layout(size: usize, seed: u64, max_shapes: usize) -> Result<Vec<Shape>> {
    check_size("random_shapes", size)?;
    if !(1..=16).contains(&max_shapes) {
        return Err(Error::contract("random_shapes", format!("max_shapes must be in 1..=16, got {max_shapes}")));
    }
    let mut rng = rng::seeded(seed);
    let half = size as f64 / 2.0;
    let count = rng.random_range(1..=max_shapes);
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = rng.random_range(0..3u8);
        let radius = rng.random_range(0.08..0.30) * half;
        let reach = 0.9 * half - radius;
        let rho = reach * rng.random::<f64>().sqrt();
        let phi = rng.random_range(0.0..2.0 * PI);
        let (cx, cy) = (rho * phi.cos(), rho * phi.sin());
        let intensity = rng.random_range(0.2..=1.0);
        shapes.push(match kind {
            0 => Shape::Circle { cx, cy, radius, intensity },
            1 => Shape::Rect {
                cx,
                cy,
                half_w: radius * rng.random_range(0.3..0.7),
                half_h: radius * rng.random_range(0.3..0.7),
                angle: rng.random_range(0.0..PI),
                intensity,
            },
            _ => {
                let base = rng.random_range(0.0..2.0 * PI);
                let mut vertices = [(0.0, 0.0); 3];
                for (k, v) in vertices.iter_mut().enumerate() {
                    let a = base + k as f64 * 2.0 * PI / 3.0 + rng.random_range(-0.4..0.4);
                    *v = (cx + radius * a.cos(), cy + radius * a.sin());
                }
                Shape::Triangle { vertices, intensity }
            }
        });
    }
    Ok(shapes)
}

pub fn random_shapes(size: usize, seed: u64, max_shapes: usize) -> Result<Image> {
    let layout = random_shape_layout(size, seed, max_shapes)?;
    Ok(render_shapes(size, &layout))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Shepp,
    Shapes,
}

/// Maximum shapes per image in generated `shapes` datasets.
pub const DATASET_MAX_SHAPES: usize = 6;

/// The `index`-th image of a dataset. Sample streams are independent, so any
/// subset can be regenerated without the others.
pub fn dataset_image(kind: DatasetKind, size: usize, seed: u64, index: usize) -> Result<Image> {
    match kind {
        DatasetKind::Shepp => perturbed_shepp_logan(size, &mut rng::derive(seed, index as u64)),
        DatasetKind::Shapes => {
            let sample_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64);
            random_shapes(size, sample_seed, DATASET_MAX_SHAPES)
        }
    }
}

/// Writes `count` images (and, with `n_angles`, their sinograms) into
/// `out_dir` with a `manifest.json`.
pub fn gen_dataset(
    kind: DatasetKind,
    count: usize,
    size: usize,
    seed: u64,
    n_angles: Option<usize>,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    check_size("gen_dataset", size)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest =
        DatasetManifest { kind, count, size, seed, n_angles, images: Vec::with_capacity(count), sinograms: Vec::new() };
    for i in 0..count {
        let img = dataset_image(kind, size, seed, i)?;
        let name = format!("image_{i:05}.sint");
        io::write_tensor_f64(&out_dir.join(&name), &[size, size], img.pixels())?;
        manifest.images.push(name);
        if let Some(a) = n_angles {
            let sino = radon::project(&img, a)?;
            let name = format!("sino_{i:05}.sint");
            io::write_tensor_f64(&out_dir.join(&name), &[a, size], sino.values())?;
            manifest.sinograms.push(name);
        }
    }
    io::write_json(&out_dir.join(io::MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent per-pixel evaluation of the ellipse table.
    fn oracle_pixel(size: usize, r: usize, c: usize) -> f64 {
        let table: [[f64; 6]; 10] = [
            [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
            [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
            [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
            [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
            [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
            [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
            [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
            [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
            [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
            [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
        ];
        let n = size as f64;
        let x = (2.0 * c as f64 + 1.0 - n) / n;
        let y = (n - 2.0 * r as f64 - 1.0) / n;
        let mut v = 0.0;
        for [a, ax, ay, x0, y0, deg] in table {
            let t = deg * PI / 180.0;
            let xr = (x - x0) * t.cos() + (y - y0) * t.sin();
            let yr = (y - y0) * t.cos() - (x - x0) * t.sin();
            if xr * xr / (ax * ax) + yr * yr / (ay * ay) <= 1.0 {
                v += a;
            }
        }
        v.clamp(0.0, 1.0)
    }

    #[test]
    fn shepp_logan_matches_direct_ellipse_sum() {
        let img = shepp_logan(128).unwrap();
        let mut worst: f64 = 0.0;
        for r in 0..128 {
            for c in 0..128 {
                worst = worst.max((img.get(r, c) - oracle_pixel(128, r, c)).abs());
            }
        }
        assert!(worst < 1e-12, "max deviation {worst}");
        img.check_invariants().unwrap();
        assert_eq!(img, shepp_logan(128).unwrap());
    }

    #[test]
    fn shepp_logan_rejects_bad_sizes() {
        assert!(shepp_logan(15).is_err());
        assert!(shepp_logan(33).is_err());
        assert!(shepp_logan(14).is_err());
    }

    #[test]
    fn shepp_support_strictly_inside_circle() {
        let img = shepp_logan(128).unwrap();
        let max_r = (0..128)
            .flat_map(|r| (0..128).map(move |c| (r, c)))
            .filter(|&(r, c)| img.get(r, c) > 0.0)
            .map(|(r, c)| {
                let (x, y) = Image::coords(128, r, c);
                (x * x + y * y).sqrt()
            })
            .fold(0.0, f64::max);
        assert!(max_r < 64.0, "support reaches radius {max_r}");
    }

    #[test]
    fn centered_disk_area() {
        let img = render_shapes(64, &[Shape::Circle { cx: 0.0, cy: 0.0, radius: 12.0, intensity: 0.7 }]);
        let sum: f64 = img.pixels().iter().sum();
        let expect = PI * 144.0 * 0.7;
        assert!((sum - expect).abs() / expect < 0.02, "{sum} vs {expect}");
    }

    #[test]
    fn single_random_circle_area() {
        let seed = (0..1000u64)
            .find(|&s| {
                let l = random_shape_layout(64, s, 1).unwrap();
                matches!(l[0], Shape::Circle { .. })
            })
            .expect("some seed yields a circle");
        let layout = random_shape_layout(64, seed, 1).unwrap();
        let Shape::Circle { radius, intensity, .. } = layout[0] else { unreachable!() };
        let img = random_shapes(64, seed, 1).unwrap();
        let sum: f64 = img.pixels().iter().sum();
        let expect = PI * radius * radius * intensity;
        assert!((sum - expect).abs() / expect < 0.02, "{sum} vs {expect}");
    }

    #[test]
    fn random_shapes_deterministic_and_valid() {
        for seed in 0..20 {
            let a = random_shapes(48, seed, 8).unwrap();
            assert_eq!(a, random_shapes(48, seed, 8).unwrap());
            a.check_invariants().unwrap();
            assert!(a.pixels().iter().any(|&v| v > 0.0));
        }
        assert!(random_shapes(48, 0, 0).is_err());
        assert!(random_shapes(48, 0, 17).is_err());
    }

    #[test]
    fn gen_dataset_reproducible() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m = gen_dataset(DatasetKind::Shapes, 10, 64, 7, None, d1.path()).unwrap();
        gen_dataset(DatasetKind::Shapes, 10, 64, 7, None, d2.path()).unwrap();
        assert_eq!(m.images.len(), 10);
        for name in &m.images {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b);
        }
        assert!(d1.path().join(io::MANIFEST_FILE).exists());
    }

    #[test]
    fn gen_dataset_shepp_samples_differ() {
        let d = tempfile::tempdir().unwrap();
        let m = gen_dataset(DatasetKind::Shepp, 3, 64, 1, Some(16), d.path()).unwrap();
        let imgs: Vec<Vec<f64>> = m.images.iter().map(|n| io::read_tensor_f64(&d.path().join(n)).unwrap().1).collect();
        for i in 0..3 {
            for j in i + 1..3 {
                let diff = imgs[i].iter().zip(&imgs[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(diff > 0.0);
            }
            Image::new(64, imgs[i].clone()).unwrap().check_invariants().unwrap();
        }
        assert_eq!(m.sinograms.len(), 3);
    }

    #[test]
    fn gen_dataset_empty() {
        let d = tempfile::tempdir().unwrap();
        let m = gen_dataset(DatasetKind::Shepp, 0, 32, 1, None, d.path()).unwrap();
        assert!(m.images.is_empty());
    }

    #[test]
    fn gen_dataset_reports_path_on_io_failure() {
        let d = tempfile::tempdir().unwrap();
        let file = d.path().join("not_a_dir");
        std::fs::write(&file, b"x").unwrap();
        let err = gen_dataset(DatasetKind::Shepp, 1, 32, 1, None, &file.join("sub")).unwrap_err();
        assert!(err.to_string().contains("not_a_dir"), "{err}");
    }
}
