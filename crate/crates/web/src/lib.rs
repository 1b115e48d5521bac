//! wasm-bindgen bindings for the static demo page in `www/`.
//!
//! Every export returns plain byte or float buffers; the page draws them
//! into canvases with `ImageData`.

use relight_core::data::toy::ToyScene;
use relight_core::envmap::{envmap_rgb_continuous, kelvin_to_rgb, ENVMAP_HEIGHT, ENVMAP_WIDTH};
use relight_core::image::RgbImage;
use relight_core::Result;
use wasm_bindgen::prelude::*;

fn rgba(img: &RgbImage) -> Vec<u8> {
    img.as_slice()
        .chunks_exact(3)
        .flat_map(|px| {
            let [r, g, b] = [0, 1, 2].map(|c| (px[c].clamp(0.0, 1.0) * 255.0).round() as u8);
            [r, g, b, 255]
        })
        .collect()
}

pub fn envmap_pixels(direction_degrees: f64, kelvin: f64, scale: usize) -> Result<Vec<u8>> {
    let map = envmap_rgb_continuous(direction_degrees, kelvin)?;
    Ok(rgba(&map.to_image().upscale_nearest(scale.max(1))))
}

pub fn toy_pixels(seed: u32, scene: u32, size: usize, azimuth_degrees: f64, kelvin: f64, shadows: bool) -> Result<Vec<u8>> {
    let s = ToyScene::for_dataset(seed as u64, scene as usize);
    Ok(rgba(&s.render(size, azimuth_degrees, kelvin, shadows)?))
}

/// `[k, r, g, b]` rows for `steps` temperatures spread evenly over `[min, max]`.
pub fn kelvin_samples(min: f64, max: f64, steps: usize) -> Result<Vec<f64>> {
    let steps = steps.max(2);
    let mut out = Vec::with_capacity(4 * steps);
    for i in 0..steps {
        let k = min + (max - min) * i as f64 / (steps - 1) as f64;
        let [r, g, b] = kelvin_to_rgb(k)?;
        out.extend([k, r, g, b]);
    }
    Ok(out)
}

fn js(e: relight_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// RGBA bytes of the 16x32 environment map, each pixel scaled to `scale x scale`.
#[wasm_bindgen(js_name = envmapRgba)]
pub fn envmap_rgba(direction_degrees: f64, kelvin: f64, scale: usize) -> std::result::Result<Vec<u8>, JsError> {
    envmap_pixels(direction_degrees, kelvin, scale).map_err(js)
}

#[wasm_bindgen(js_name = envmapWidth)]
pub fn envmap_width() -> usize {
    ENVMAP_WIDTH
}

#[wasm_bindgen(js_name = envmapHeight)]
pub fn envmap_height() -> usize {
    ENVMAP_HEIGHT
}

/// RGBA bytes of toy scene `scene` of the dataset generated with `seed`.
#[wasm_bindgen(js_name = toyRgba)]
pub fn toy_rgba(seed: u32, scene: u32, size: usize, azimuth_degrees: f64, kelvin: f64, shadows: bool) -> std::result::Result<Vec<u8>, JsError> {
    toy_pixels(seed, scene, size, azimuth_degrees, kelvin, shadows).map_err(js)
}

#[wasm_bindgen(js_name = kelvinCurve)]
pub fn kelvin_curve(min: f64, max: f64, steps: usize) -> std::result::Result<Vec<f64>, JsError> {
    kelvin_samples(min, max, steps).map_err(js)
}
