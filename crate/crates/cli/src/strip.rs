//! Four-panel comparison strip: input, target, ground truth, relit. Panels
//! whose light direction is known get a compass glyph in the top-right
//! corner pointing toward the light.

use relight_core::image::RgbImage;
use relight_core::Result;

const GUTTER: usize = 4;
const ARROW: [f32; 3] = [1.0, 0.85, 0.2];

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Draws the glyph in place. Degrees run clockwise from north (up).
pub fn draw_direction_glyph(img: &mut RgbImage, degrees: f64) {
    let side = img.width().min(img.height()) as f64;
    let r = (side / 10.0).max(5.0);
    let c = (img.width() as f64 - r - 3.0, r + 3.0);
    let theta = degrees.to_radians();
    let tip = (c.0 + 0.8 * r * theta.sin(), c.1 - 0.8 * r * theta.cos());
    let x0 = (c.0 - r - 1.0).max(0.0) as usize;
    let y1 = ((c.1 + r + 1.0) as usize).min(img.height() - 1);
    for y in 0..=y1 {
        for x in x0..img.width() {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let d = ((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt();
            if d > r {
                continue;
            }
            let px = img.get(x, y);
            let mut out = px.map(|v| v * 0.35);
            if d > r - 1.2 {
                out = [0.9; 3];
            }
            if segment_distance(p, c, tip) < (r / 9.0).max(1.0) || ((p.0 - tip.0).powi(2) + (p.1 - tip.1).powi(2)).sqrt() < r / 4.0 {
                out = ARROW;
            }
            img.set(x, y, out);
        }
    }
}

pub struct Panel<'a> {
    pub image: &'a RgbImage,
    pub direction: Option<f64>,
}

pub fn comparison_strip(panels: &[Panel]) -> Result<RgbImage> {
    let tiles: Vec<RgbImage> = panels
        .iter()
        .map(|p| {
            let mut t = p.image.clone();
            if let Some(d) = p.direction {
                draw_direction_glyph(&mut t, d);
            }
            t
        })
        .collect();
    let refs: Vec<&RgbImage> = tiles.iter().collect();
    RgbImage::grid(&refs, refs.len(), GUTTER)
}
