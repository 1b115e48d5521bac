//! Procedural desk-scale stand-in dataset.
//!
//! Each scene is a handful of boxes and spheres resting on a ground plane,
//! viewed straight down by an orthographic camera (north is up, east is
//! right). A single directional light at fixed elevation gives Lambertian
//! shading and hard ray-traced shadows; the light colour multiplies the
//! image by the blackbody RGB of its temperature.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_manifest, Illumination, ImageRecord};
use crate::envmap::kelvin_to_rgb;
use crate::error::{Error, Result};
use crate::image::RgbImage;

pub const LIGHT_ELEVATION_DEG: f64 = 35.0;
pub const AMBIENT: f64 = 0.15;
const EXPOSURE: f64 = 1.25;
const CAMERA_HEIGHT: f64 = 10.0;
const EPS: f64 = 1e-7;

type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn add_scaled(a: Vec3, b: Vec3, s: f64) -> Vec3 {
    [a[0] + b[0] * s, a[1] + b[1] * s, a[2] + b[2] * s]
}

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Sphere { center: Vec3, radius: f64 },
    /// Axis-aligned box.
    Cuboid { min: Vec3, max: Vec3 },
}

impl Primitive {
    /// Nearest hit with `t > EPS` along `origin + t * dir`, with its outward normal.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<(f64, Vec3)> {
        match *self {
            Primitive::Sphere { center, radius } => {
                let oc = [origin[0] - center[0], origin[1] - center[1], origin[2] - center[2]];
                let a = dot(dir, dir);
                let b = 2.0 * dot(oc, dir);
                let c = dot(oc, oc) - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
                    .into_iter()
                    .find(|&t| t > EPS)?;
                let p = add_scaled(origin, dir, t);
                let n = [
                    (p[0] - center[0]) / radius,
                    (p[1] - center[1]) / radius,
                    (p[2] - center[2]) / radius,
                ];
                Some((t, n))
            }
            Primitive::Cuboid { min, max } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                let mut near_axis = 0;
                let mut near_sign = 0.0;
                for axis in 0..3 {
                    if dir[axis].abs() < 1e-15 {
                        if origin[axis] < min[axis] || origin[axis] > max[axis] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (min[axis] - origin[axis]) / dir[axis];
                    let t2 = (max[axis] - origin[axis]) / dir[axis];
                    let (lo, hi, sign) = if t1 < t2 { (t1, t2, -1.0) } else { (t2, t1, 1.0) };
                    if lo > t_near {
                        t_near = lo;
                        near_axis = axis;
                        near_sign = sign;
                    }
                    t_far = t_far.min(hi);
                }
                if t_near > t_far || t_far <= EPS {
                    return None;
                }
                if t_near > EPS {
                    let mut n = [0.0; 3];
                    n[near_axis] = near_sign;
                    Some((t_near, n))
                } else {
                    // origin inside the box; report the exit so shadow rays still register
                    Some((t_far, [0.0, 1.0, 0.0]))
                }
            }
        }
    }

    /// Ground-plane footprint centre `(x, z)`.
    pub fn footprint_center(&self) -> (f64, f64) {
        match *self {
            Primitive::Sphere { center, .. } => (center[0], center[2]),
            Primitive::Cuboid { min, max } => ((min[0] + max[0]) / 2.0, (min[2] + max[2]) / 2.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyObject {
    pub shape: Primitive,
    pub albedo: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyScene {
    pub objects: Vec<ToyObject>,
    pub ground_albedo: Vec3,
}

/// What the camera ray through a pixel sees.
#[derive(Clone, Copy, Debug)]
pub struct SurfaceHit {
    pub point: Vec3,
    pub normal: Vec3,
    pub albedo: Vec3,
    pub object: Option<usize>,
}

/// Unit vector pointing towards a light at compass `azimuth_deg` (clockwise from north).
pub fn light_vector(azimuth_deg: f64) -> Vec3 {
    let az = azimuth_deg.to_radians();
    let el = LIGHT_ELEVATION_DEG.to_radians();
    [az.sin() * el.cos(), el.sin(), -az.cos() * el.cos()]
}

impl ToyScene {
    /// 2-5 objects with random placement, size and albedo.
    pub fn sample(rng: &mut impl Rng) -> Self {
        let count = rng.random_range(2..=5);
        let mut objects: Vec<ToyObject> = Vec::with_capacity(count);
        let mut attempts = 0;
        while objects.len() < count && attempts < 200 {
            attempts += 1;
            let cx = rng.random_range(-0.6..0.6);
            let cz = rng.random_range(-0.6..0.6);
            let shape = if rng.random_bool(0.5) {
                let r = rng.random_range(0.1..0.2);
                Primitive::Sphere {
                    center: [cx, r, cz],
                    radius: r,
                }
            } else {
                let hx = rng.random_range(0.07..0.16);
                let hz = rng.random_range(0.07..0.16);
                let h = rng.random_range(0.1..0.35);
                Primitive::Cuboid {
                    min: [cx - hx, 0.0, cz - hz],
                    max: [cx + hx, h, cz + hz],
                }
            };
            let clear = objects.iter().all(|o| {
                let (ox, oz) = o.shape.footprint_center();
                ((ox - cx).powi(2) + (oz - cz).powi(2)).sqrt() > 0.42
            });
            if !clear {
                continue;
            }
            let albedo = [
                rng.random_range(0.2..0.95),
                rng.random_range(0.2..0.95),
                rng.random_range(0.2..0.95),
            ];
            objects.push(ToyObject { shape, albedo });
        }
        let g = rng.random_range(0.55..0.8);
        let ground_albedo = [
            g + rng.random_range(-0.05..0.05),
            g + rng.random_range(-0.05..0.05),
            g + rng.random_range(-0.05..0.05),
        ];
        Self {
            objects,
            ground_albedo,
        }
    }

    /// Scene `k` of a toy dataset generated with `seed`.
    pub fn for_dataset(seed: u64, k: usize) -> Self {
        let stream = seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Self::sample(&mut ChaCha8Rng::seed_from_u64(stream))
    }

    /// World `(x, z)` at the centre of pixel `(px, py)` of a `size x size` render.
    pub fn ground_point(px: usize, py: usize, size: usize) -> (f64, f64) {
        let s = size as f64;
        (-1.0 + 2.0 * (px as f64 + 0.5) / s, -1.0 + 2.0 * (py as f64 + 0.5) / s)
    }

    /// Inverse of [`ground_point`](Self::ground_point) along x.
    pub fn column_of(x: f64, size: usize) -> f64 {
        (x + 1.0) / 2.0 * size as f64 - 0.5
    }

    fn nearest(&self, origin: Vec3, dir: Vec3) -> Option<(f64, Vec3, usize)> {
        self.objects
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.shape.intersect(origin, dir).map(|(t, n)| (t, n, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    pub fn primary_hit(&self, x: f64, z: f64) -> SurfaceHit {
        let origin = [x, CAMERA_HEIGHT, z];
        let down = [0.0, -1.0, 0.0];
        match self.nearest(origin, down) {
            Some((t, normal, i)) => SurfaceHit {
                point: add_scaled(origin, down, t),
                normal,
                albedo: self.objects[i].albedo,
                object: Some(i),
            },
            None => SurfaceHit {
                point: [x, 0.0, z],
                normal: [0.0, 1.0, 0.0],
                albedo: self.ground_albedo,
                object: None,
            },
        }
    }

    /// First object blocking the light from `hit`, if any.
    pub fn occluder(&self, hit: &SurfaceHit, light: Vec3) -> Option<usize> {
        if dot(hit.normal, light) <= 0.0 {
            return None;
        }
        let origin = add_scaled(hit.point, hit.normal, 1e-6);
        self.nearest(origin, light).map(|(_, _, i)| i)
    }

    /// Render under a light at `azimuth_deg` and `kelvin`, optionally without shadows.
    pub fn render(&self, size: usize, azimuth_deg: f64, kelvin: f64, shadows: bool) -> Result<RgbImage> {
        let tint = kelvin_to_rgb(kelvin)?;
        let light = light_vector(azimuth_deg);
        Ok(RgbImage::from_fn(size, size, |px, py| {
            let (x, z) = Self::ground_point(px, py, size);
            let hit = self.primary_hit(x, z);
            let lambert = dot(hit.normal, light).max(0.0);
            let visible = if shadows && self.occluder(&hit, light).is_some() {
                0.0
            } else {
                1.0
            };
            let shade = EXPOSURE * (AMBIENT + (1.0 - AMBIENT) * lambert * visible);
            [0, 1, 2].map(|c| (hit.albedo[c] * tint[c] * shade).clamp(0.0, 1.0) as f32)
        }))
    }

    pub fn render_illumination(&self, size: usize, illum: &Illumination) -> Result<RgbImage> {
        self.render(size, illum.direction_degrees(), illum.temperature.kelvin(), true)
    }
}

/// Render `n_scenes` toy scenes under all 40 illuminations into `out_dir`
/// (`scene_<k>/<direction>_<kelvin>.png`) and write `manifest.csv` at its root.
pub fn generate_toy_dataset(out_dir: &Path, n_scenes: usize, image_size: usize, seed: u64) -> Result<PathBuf> {
    if n_scenes < 2 {
        return Err(Error::Config(
            "restricted pairing needs ≥ 2 scenes (got fewer)".into(),
        ));
    }
    if image_size < 64 {
        return Err(Error::Config(format!("image size must be at least 64, got {image_size}")));
    }
    fs::create_dir_all(out_dir)?;
    let mut records = Vec::with_capacity(n_scenes * super::IMAGES_PER_SCENE);
    for k in 0..n_scenes {
        let scene = ToyScene::for_dataset(seed, k);
        let scene_id = format!("scene_{k}");
        let dir = out_dir.join(&scene_id);
        fs::create_dir_all(&dir)?;
        for illum in Illumination::all() {
            let path = dir.join(format!("{}_{}.png", illum.direction, illum.temperature));
            scene.render_illumination(image_size, &illum)?.save_png(&path)?;
            records.push(ImageRecord {
                scene_id: scene_id.clone(),
                illumination: illum,
                path,
            });
        }
    }
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&manifest, out_dir, &records)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_manifest, Direction, Temperature};

    fn channel_means(img: &RgbImage) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for px in img.as_slice().chunks(3) {
            for c in 0..3 {
                acc[c] += px[c] as f64;
            }
        }
        let n = (img.width() * img.height()) as f64;
        acc.map(|v| v / n)
    }

    #[test]
    fn generates_forty_images_per_scene() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_toy_dataset(dir.path(), 3, 64, 9).unwrap();
        let idx = parse_manifest(&m).unwrap();
        assert_eq!(idx.len(), 120);
        let rows = std::fs::read_to_string(&m).unwrap().lines().count();
        assert_eq!(rows, 121);
        assert!(dir.path().join("scene_2/NW_6500.png").is_file());
    }

    #[test]
    fn too_few_scenes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = generate_toy_dataset(dir.path(), 1, 64, 0).unwrap_err();
        assert!(err.to_string().contains("restricted pairing needs ≥ 2 scenes"));
        assert!(generate_toy_dataset(dir.path(), 2, 32, 0).is_err());
    }

    #[test]
    fn sphere_and_box_intersections() {
        let s = Primitive::Sphere {
            center: [0.0, 0.5, 0.0],
            radius: 0.5,
        };
        let (t, n) = s.intersect([0.0, 10.0, 0.0], [0.0, -1.0, 0.0]).unwrap();
        assert!((t - 9.0).abs() < 1e-12);
        assert_eq!(n, [0.0, 1.0, 0.0]);
        let b = Primitive::Cuboid {
            min: [-0.1, 0.0, -0.1],
            max: [0.1, 0.3, 0.1],
        };
        let (t, n) = b.intersect([-1.0, 0.1, 0.0], [1.0, 0.0, 0.0]).unwrap();
        assert!((t - 0.9).abs() < 1e-12);
        assert_eq!(n, [-1.0, 0.0, 0.0]);
        assert!(b.intersect([-1.0, 0.5, 0.0], [1.0, 0.0, 0.0]).is_none());
    }

    #[test]
    fn warm_light_is_redder() {
        let scene = ToyScene::for_dataset(4, 0);
        let warm = channel_means(&scene.render(64, 90.0, 2500.0, true).unwrap());
        let cold = channel_means(&scene.render(64, 90.0, 6500.0, true).unwrap());
        assert!(warm[0] / warm[2] > cold[0] / cold[2]);
    }

    #[test]
    fn shadows_only_darken() {
        let scene = ToyScene::for_dataset(1, 2);
        for d in Direction::ALL {
            let lit = scene.render(64, d.degrees(), 4500.0, false).unwrap();
            let shadowed = scene.render(64, d.degrees(), 4500.0, true).unwrap();
            for (a, b) in shadowed.as_slice().iter().zip(lit.as_slice()) {
                assert!(a <= b);
            }
            assert_ne!(lit, shadowed);
        }
    }

    #[test]
    fn luminance_roughly_direction_invariant() {
        for k in 0..4 {
            let scene = ToyScene::for_dataset(17, k);
            let lum: Vec<f64> = Direction::ALL
                .iter()
                .map(|d| {
                    let m = channel_means(&scene.render(64, d.degrees(), 5500.0, true).unwrap());
                    m.iter().sum::<f64>()
                })
                .collect();
            let mean = lum.iter().sum::<f64>() / lum.len() as f64;
            for l in &lum {
                assert!((l / mean - 1.0).abs() <= 0.2, "{lum:?}");
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = ToyScene::for_dataset(3, 1);
        let b = ToyScene::for_dataset(3, 1);
        assert_eq!(a, b);
        let illum = Illumination::new(Temperature::K3500, Direction::SW);
        assert_eq!(
            a.render_illumination(64, &illum).unwrap(),
            b.render_illumination(64, &illum).unwrap()
        );
    }
}
