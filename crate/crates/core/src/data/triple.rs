use std::path::Path;

use super::{Illumination, PairKey, SceneIndex};
use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Input `I`, target `T` and ground truth `G(I, T)`: `I`'s scene under `T`'s light.
#[derive(Clone, Debug)]
pub struct RelightingTriple {
    pub input: RgbImage,
    pub target: RgbImage,
    pub ground_truth: RgbImage,
    pub illum_input: Illumination,
    pub illum_target: Illumination,
    pub scene_input: String,
    pub scene_target: String,
    pub key: PairKey,
    pub ground_truth_id: usize,
}

/// Load a PNG and bilinearly resample it to `size x size`.
pub fn load_image(path: &Path, size: usize) -> Result<RgbImage> {
    Ok(RgbImage::load_png(path)?.resize_bilinear(size, size))
}

/// Id of the image showing `key.input`'s scene under `key.target`'s light.
pub fn ground_truth_id(index: &SceneIndex, key: PairKey) -> Result<usize> {
    let input = index.record(key.input);
    let target = index.record(key.target);
    index
        .find(&input.scene_id, target.illumination)
        .ok_or_else(|| {
            Error::Data(format!(
                "no ground truth for scene {} under {}",
                input.scene_id, target.illumination
            ))
        })
}

pub fn load_triple(index: &SceneIndex, key: PairKey, size: usize) -> Result<RelightingTriple> {
    if key.input >= index.len() || key.target >= index.len() {
        return Err(Error::Data(format!("pair {key:?} outside index of {} images", index.len())));
    }
    let gt = ground_truth_id(index, key)?;
    let input_rec = index.record(key.input);
    let target_rec = index.record(key.target);
    let gt_path = &index.record(gt).path;
    if !gt_path.is_file() {
        return Err(Error::Data(format!("ground truth file {} is missing", gt_path.display())));
    }
    Ok(RelightingTriple {
        input: load_image(&input_rec.path, size)?,
        target: load_image(&target_rec.path, size)?,
        ground_truth: load_image(gt_path, size)?,
        illum_input: input_rec.illumination,
        illum_target: target_rec.illumination,
        scene_input: input_rec.scene_id.clone(),
        scene_target: target_rec.scene_id.clone(),
        key,
        ground_truth_id: gt,
    })
}

/// Loads triples, keeping every decoded image in memory so repeated pairs
/// touch the disk once.
pub struct TripleLoader {
    index: std::sync::Arc<SceneIndex>,
    size: usize,
    cache: std::collections::HashMap<usize, RgbImage>,
}

impl TripleLoader {
    pub fn new(index: std::sync::Arc<SceneIndex>, size: usize) -> Self {
        Self {
            index,
            size,
            cache: Default::default(),
        }
    }

    pub fn index(&self) -> &std::sync::Arc<SceneIndex> {
        &self.index
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn image(&mut self, id: usize) -> Result<RgbImage> {
        if let Some(img) = self.cache.get(&id) {
            return Ok(img.clone());
        }
        if id >= self.index.len() {
            return Err(Error::Data(format!("image {id} outside index of {} images", self.index.len())));
        }
        let rec = self.index.record(id);
        if !rec.path.is_file() {
            return Err(Error::Data(format!("image file {} is missing", rec.path.display())));
        }
        let img = load_image(&rec.path, self.size)?;
        self.cache.insert(id, img.clone());
        Ok(img)
    }

    pub fn load(&mut self, key: PairKey) -> Result<RelightingTriple> {
        if key.input >= self.index.len() || key.target >= self.index.len() {
            return Err(Error::Data(format!("pair {key:?} outside index of {} images", self.index.len())));
        }
        let gt = ground_truth_id(&self.index, key)?;
        let input_rec = self.index.record(key.input).clone();
        let target_rec = self.index.record(key.target).clone();
        Ok(RelightingTriple {
            input: self.image(key.input)?,
            target: self.image(key.target)?,
            ground_truth: self.image(gt)?,
            illum_input: input_rec.illumination,
            illum_target: target_rec.illumination,
            scene_input: input_rec.scene_id,
            scene_target: target_rec.scene_id,
            key,
            ground_truth_id: gt,
        })
    }
}
