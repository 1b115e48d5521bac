//! Ground-truth environment maps synthesised from a known illumination.
//!
//! Light colour comes from a blackbody approximation of the colour
//! temperature; light direction becomes a horizontal Gaussian brightness
//! bump on a 16x32 latitude-longitude grid. Two encodings are produced: a
//! full RGB image, and a compact 514-vector of `[hue, saturation, 512
//! brightness values]`.
//!
//! Colours are handled in hue/saturation/value space: the brightness bump
//! scales the value channel, so the compact form converts back to the RGB
//! form exactly.

use crate::data::Illumination;
use crate::error::{Error, Result};

pub const ENVMAP_HEIGHT: usize = 16;
pub const ENVMAP_WIDTH: usize = 32;
pub const ENVMAP_PIXELS: usize = ENVMAP_HEIGHT * ENVMAP_WIDTH;
/// `hue + saturation + 512 brightness values`
pub const COMPACT_LEN: usize = ENVMAP_PIXELS + 2;

pub const KELVIN_MIN: f64 = 1000.0;
pub const KELVIN_MAX: f64 = 12000.0;

/// Second radiation constant in nm*K.
const PLANCK_C2: f64 = 1.4388e7;

/// Linear sRGB from CIE XYZ (D65).
const XYZ_TO_SRGB: [[f64; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];

fn piecewise_gaussian(x: f64, alpha: f64, mu: f64, sigma_lo: f64, sigma_hi: f64) -> f64 {
    let sigma = if x < mu { sigma_lo } else { sigma_hi };
    let t = (x - mu) / sigma;
    alpha * (-0.5 * t * t).exp()
}

/// Multi-lobe analytic fit of the CIE 1931 2-degree observer.
fn cie_cmf(lambda_nm: f64) -> [f64; 3] {
    let l = lambda_nm;
    let x = piecewise_gaussian(l, 1.056, 599.8, 37.9, 31.0)
        + piecewise_gaussian(l, 0.362, 442.0, 16.0, 26.7)
        + piecewise_gaussian(l, -0.065, 501.1, 20.4, 26.2);
    let y = piecewise_gaussian(l, 0.821, 568.8, 46.9, 40.5)
        + piecewise_gaussian(l, 0.286, 530.9, 16.3, 31.1);
    let z = piecewise_gaussian(l, 1.217, 437.0, 11.8, 36.0)
        + piecewise_gaussian(l, 0.681, 459.0, 26.2, 13.8);
    [x, y, z]
}

fn srgb_encode(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// Chromaticity `(x, y)` of a blackbody radiator at `kelvin`.
pub fn blackbody_chromaticity(kelvin: f64) -> (f64, f64) {
    let [x, y, z] = blackbody_xyz(kelvin);
    let s = x + y + z;
    (x / s, y / s)
}

fn blackbody_xyz(kelvin: f64) -> [f64; 3] {
    let mut xyz = [0.0; 3];
    for step in 0..=470 {
        let lambda = 360.0 + step as f64;
        let radiance = 1.0 / (lambda.powi(5) * (PLANCK_C2 / (lambda * kelvin)).exp_m1());
        let cmf = cie_cmf(lambda);
        for (acc, w) in xyz.iter_mut().zip(cmf) {
            *acc += radiance * w;
        }
    }
    xyz
}

/// Display RGB of a blackbody light at `kelvin`, scaled so the largest
/// channel is exactly 1.
///
/// Planck's law is integrated against the colour matching functions, the
/// XYZ result is mapped to linear sRGB, clipped at zero, max-normalised and
/// finally sRGB-encoded. 6500 K comes out close to neutral white.
pub fn kelvin_to_rgb(kelvin: f64) -> Result<[f64; 3]> {
    if !(KELVIN_MIN..=KELVIN_MAX).contains(&kelvin) {
        return Err(Error::Value(format!(
            "colour temperature {kelvin} K outside [{KELVIN_MIN}, {KELVIN_MAX}]"
        )));
    }
    let xyz = blackbody_xyz(kelvin);
    let s: f64 = xyz.iter().sum();
    let mut rgb = [0.0; 3];
    for (out, row) in rgb.iter_mut().zip(XYZ_TO_SRGB) {
        *out = (row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2]) / s;
        *out = out.max(0.0);
    }
    let max = rgb.iter().cloned().fold(0.0, f64::max);
    let encoded = rgb.map(|c| srgb_encode(c / max));
    // the transfer curve maps 1 to 1 - 1ulp; pin the peak channel back to 1
    let peak = encoded.iter().cloned().fold(0.0, f64::max);
    Ok(encoded.map(|c| c / peak))
}

/// RGB -> (hue in `[0, 1)`, saturation, value).
pub fn rgb_to_hsv(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let sat = if max <= 0.0 { 0.0 } else { delta / max };
    [hue.rem_euclid(1.0), sat, max]
}

pub fn hsv_to_rgb(hsv: [f64; 3]) -> [f64; 3] {
    let [h, s, v] = hsv;
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Circular distance between columns on a ring of `width` columns.
pub fn circular_distance(x: f64, mu: f64, width: f64) -> f64 {
    let d = (x - mu).rem_euclid(width);
    d.min(width - d)
}

/// Horizontal brightness bump for a light at `direction_degrees`.
///
/// The mean sits at `direction / 360 * width` (columns indexed at integers),
/// the spread is 10% of the map height, distances wrap around the ring and
/// the profile is rescaled so that its maximum is exactly 1.
pub fn direction_profile(direction_degrees: f64, width: usize, height: usize) -> Vec<f64> {
    let mu = direction_degrees.rem_euclid(360.0) / 360.0 * width as f64;
    let sigma = 0.1 * height as f64;
    let raw: Vec<f64> = (0..width)
        .map(|x| {
            let d = circular_distance(x as f64, mu, width as f64);
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let peak = raw.iter().cloned().fold(0.0, f64::max);
    raw.into_iter().map(|v| v / peak).collect()
}

/// 16x32 RGB environment map, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMapRgb {
    data: Vec<f32>,
}

impl EnvironmentMapRgb {
    pub fn from_raw(data: Vec<f32>) -> Result<Self> {
        if data.len() != ENVMAP_PIXELS * 3 {
            return Err(Error::Shape(format!(
                "environment map needs {} values, got {}",
                ENVMAP_PIXELS * 3,
                data.len()
            )));
        }
        Ok(Self { data })
    }

    pub fn get(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * ENVMAP_WIDTH + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * ENVMAP_WIDTH * 3..(row + 1) * ENVMAP_WIDTH * 3]
    }

    /// `[R(512), G(512), B(512)]`, the layout the weighted-pool head emits.
    pub fn to_channel_major(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(ENVMAP_PIXELS * 3);
        for c in 0..3 {
            out.extend(self.data.iter().skip(c).step_by(3));
        }
        out
    }

    pub fn from_channel_major(values: &[f32]) -> Result<Self> {
        if values.len() != ENVMAP_PIXELS * 3 {
            return Err(Error::Shape(format!(
                "channel-major environment map needs {} values, got {}",
                ENVMAP_PIXELS * 3,
                values.len()
            )));
        }
        let mut data = vec![0.0; ENVMAP_PIXELS * 3];
        for p in 0..ENVMAP_PIXELS {
            for c in 0..3 {
                data[p * 3 + c] = values[c * ENVMAP_PIXELS + p];
            }
        }
        Ok(Self { data })
    }

    pub fn luminance_column_argmax(&self) -> usize {
        (0..ENVMAP_WIDTH)
            .map(|x| {
                let [r, g, b] = self.get(0, x);
                (x, 0.2126 * r + 0.7152 * g + 0.0722 * b)
            })
            .fold((0, f32::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0
    }

    pub fn to_image(&self) -> crate::image::RgbImage {
        crate::image::RgbImage::from_fn(ENVMAP_WIDTH, ENVMAP_HEIGHT, |x, y| self.get(y, x))
    }
}

/// Compact environment map: hue, saturation and a row-major 16x32 brightness grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMapHsl {
    pub hue: f32,
    pub saturation: f32,
    pub brightness: Vec<f32>,
}

impl EnvironmentMapHsl {
    /// `[hue, saturation, brightness...]`
    pub fn to_vec(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(COMPACT_LEN);
        v.push(self.hue);
        v.push(self.saturation);
        v.extend_from_slice(&self.brightness);
        v
    }

    pub fn from_slice(values: &[f32]) -> Result<Self> {
        if values.len() != COMPACT_LEN {
            return Err(Error::Shape(format!(
                "compact environment map needs {COMPACT_LEN} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            hue: values[0],
            saturation: values[1],
            brightness: values[2..].to_vec(),
        })
    }

    pub fn to_rgb(&self) -> EnvironmentMapRgb {
        let mut data = Vec::with_capacity(ENVMAP_PIXELS * 3);
        for &b in &self.brightness {
            let rgb = hsv_to_rgb([self.hue as f64, self.saturation as f64, b as f64]);
            data.extend(rgb.iter().map(|&c| c as f32));
        }
        EnvironmentMapRgb { data }
    }
}

fn light_hsv(illum: &Illumination) -> [f64; 3] {
    let rgb = kelvin_to_rgb(illum.temperature.kelvin())
        .expect("every temperature of the illumination set is in range");
    rgb_to_hsv(rgb)
}

pub fn generate_envmap_rgb(illum: &Illumination) -> EnvironmentMapRgb {
    envmap_rgb_from_hsv(light_hsv(illum), illum.direction.degrees())
}

/// Environment map for an arbitrary direction and temperature, outside the
/// discrete illumination set.
pub fn envmap_rgb_continuous(direction_degrees: f64, kelvin: f64) -> Result<EnvironmentMapRgb> {
    Ok(envmap_rgb_from_hsv(rgb_to_hsv(kelvin_to_rgb(kelvin)?), direction_degrees))
}

fn envmap_rgb_from_hsv([h, s, v]: [f64; 3], direction_degrees: f64) -> EnvironmentMapRgb {
    let profile = direction_profile(direction_degrees, ENVMAP_WIDTH, ENVMAP_HEIGHT);
    let row: Vec<f32> = profile
        .iter()
        .flat_map(|&p| hsv_to_rgb([h, s, p * v]).map(|c| c as f32))
        .collect();
    EnvironmentMapRgb { data: row.repeat(ENVMAP_HEIGHT) }
}

pub fn generate_envmap_hsl(illum: &Illumination) -> EnvironmentMapHsl {
    let [h, s, v] = light_hsv(illum);
    let profile = direction_profile(illum.direction.degrees(), ENVMAP_WIDTH, ENVMAP_HEIGHT);
    let row: Vec<f32> = profile.iter().map(|&p| (p * v) as f32).collect();
    EnvironmentMapHsl {
        hue: h as f32,
        saturation: s as f32,
        brightness: row.repeat(ENVMAP_HEIGHT),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Direction, Temperature};

    #[test]
    fn continuous_agrees_on_the_grid() {
        for i in Illumination::all() {
            let c = envmap_rgb_continuous(i.direction.degrees(), i.temperature.kelvin()).unwrap();
            assert_eq!(c, generate_envmap_rgb(&i));
        }
        assert!(envmap_rgb_continuous(0.0, 500.0).is_err());
    }

    fn illum(t: Temperature, d: Direction) -> Illumination {
        Illumination::new(t, d)
    }

    #[test]
    fn neutral_at_6500() {
        let rgb = kelvin_to_rgb(6500.0).unwrap();
        for c in rgb {
            assert!((c - 1.0).abs() <= 0.05, "{rgb:?}");
        }
    }

    #[test]
    fn warm_light_has_depressed_blue() {
        let [r, g, b] = kelvin_to_rgb(2500.0).unwrap();
        assert_eq!(r, 1.0);
        assert!(b < g && g < r);
    }

    #[test]
    fn blue_to_red_ratio_increases_over_temperature_set() {
        let ratios: Vec<f64> = Temperature::ALL
            .iter()
            .map(|t| {
                let [r, _, b] = kelvin_to_rgb(t.kelvin()).unwrap();
                b / r
            })
            .collect();
        assert!(ratios.windows(2).all(|w| w[0] < w[1]), "{ratios:?}");
    }

    #[test]
    fn out_of_range_temperature_rejected() {
        assert!(matches!(kelvin_to_rgb(999.0), Err(Error::Value(_))));
        assert!(matches!(kelvin_to_rgb(12001.0), Err(Error::Value(_))));
    }

    #[test]
    fn kelvin_curve_has_no_jumps() {
        let mut prev = kelvin_to_rgb(1000.0).unwrap();
        let mut k = 1000.0;
        while k < 12000.0 {
            k += 5.0;
            let cur = kelvin_to_rgb(k).unwrap();
            for c in 0..3 {
                assert!((cur[c] - prev[c]).abs() < 0.02, "jump at {k} K");
            }
            prev = cur;
        }
    }

    #[test]
    fn blackbody_chromaticity_near_reference_locus() {
        // CIE 1960/1931 Planckian locus at 6500 K is about (0.3135, 0.3237).
        let (x, y) = blackbody_chromaticity(6500.0);
        assert!((x - 0.3135).abs() < 2e-3 && (y - 0.3237).abs() < 2e-3, "({x}, {y})");
    }

    #[test]
    fn hsv_roundtrip() {
        for rgb in [[1.0, 0.5, 0.25], [0.1, 0.9, 0.3], [0.2, 0.3, 0.8], [0.5, 0.5, 0.5]] {
            let back = hsv_to_rgb(rgb_to_hsv(rgb));
            for c in 0..3 {
                assert!((back[c] - rgb[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn profile_north_peaks_at_column_zero() {
        let p = direction_profile(0.0, 32, 16);
        assert_eq!(p[0], 1.0);
        assert!(p.iter().all(|&v| v <= 1.0));
    }

    #[test]
    fn profile_south_is_symmetric() {
        let p = direction_profile(180.0, 32, 16);
        assert_eq!(p[16], 1.0);
        for k in 1..16 {
            assert_eq!(p[16 - k], p[16 + k]);
        }
    }

    #[test]
    fn profile_wraps_around() {
        let p = direction_profile(354.0, 32, 16);
        let peak = p.iter().cloned().fold(0.0, f64::max);
        assert!(p[31] > 0.5 * peak && p[0] > 0.5 * peak);
        // independent evaluation: mu = 31.4666.., sigma = 1.6
        let mu = 354.0 / 360.0 * 32.0;
        let g = |d: f64| (-d * d / (2.0 * 1.6 * 1.6)).exp();
        let expect0 = g(32.0 - mu) / g(31.0 - mu);
        assert!((p[0] - expect0).abs() < 1e-12);
    }

    #[test]
    fn rgb_map_rows_identical() {
        let m = generate_envmap_rgb(&illum(Temperature::K3500, Direction::SE));
        for r in 1..ENVMAP_HEIGHT {
            assert_eq!(m.row(r), m.row(0));
        }
    }

    #[test]
    fn rgb_map_peak_follows_direction() {
        for d in Direction::ALL {
            let m = generate_envmap_rgb(&illum(Temperature::K6500, d));
            assert_eq!(m.luminance_column_argmax(), (d.degrees() / 360.0 * 32.0) as usize);
        }
    }

    #[test]
    fn east_west_maps_are_mirror_images() {
        let e = generate_envmap_rgb(&illum(Temperature::K2500, Direction::E));
        let w = generate_envmap_rgb(&illum(Temperature::K2500, Direction::W));
        for r in 0..ENVMAP_HEIGHT {
            for x in 0..ENVMAP_WIDTH {
                assert_eq!(e.get(r, x), w.get(r, (ENVMAP_WIDTH - x) % ENVMAP_WIDTH));
            }
        }
    }

    #[test]
    fn compact_map_neutral_and_warm_hue() {
        let n = generate_envmap_hsl(&illum(Temperature::K6500, Direction::N));
        assert!(n.saturation < 0.05, "{}", n.saturation);
        let w = generate_envmap_hsl(&illum(Temperature::K2500, Direction::N));
        assert!((0.0..0.17).contains(&w.hue), "{}", w.hue);
    }

    #[test]
    fn compact_brightness_has_one_peak_per_row() {
        let m = generate_envmap_hsl(&illum(Temperature::K4500, Direction::NE));
        let max = m.brightness.iter().cloned().fold(f32::MIN, f32::max);
        assert_eq!(max, 1.0);
        assert_eq!(m.brightness.iter().filter(|&&b| b == max).count(), ENVMAP_HEIGHT);
    }

    #[test]
    fn compact_and_rgb_forms_agree() {
        for t in Temperature::ALL {
            for d in Direction::ALL {
                let l = illum(t, d);
                let rgb = generate_envmap_rgb(&l);
                let back = generate_envmap_hsl(&l).to_rgb();
                let err = rgb
                    .as_slice()
                    .iter()
                    .zip(back.as_slice())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f32::max);
                assert!(err <= 1e-6, "{t:?} {d:?}: {err}");
            }
        }
    }

    #[test]
    fn channel_major_roundtrip() {
        let m = generate_envmap_rgb(&illum(Temperature::K2500, Direction::SW));
        let cm = m.to_channel_major();
        assert_eq!(cm[0], m.get(0, 0)[0]);
        assert_eq!(cm[ENVMAP_PIXELS + 5], m.get(0, 5)[1]);
        assert_eq!(EnvironmentMapRgb::from_channel_major(&cm).unwrap(), m);
    }
}
