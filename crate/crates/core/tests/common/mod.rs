#![allow(dead_code)]

use relight_core::data::{generate_toy_dataset, parse_manifest, SceneIndex};
use relight_core::relightnet::{Variant, VariantConfig};
use tempfile::TempDir;

/// Toy dataset in a temporary directory; keep the `TempDir` alive while the index is used.
pub fn toy(scenes: usize, size: usize, seed: u64) -> (TempDir, SceneIndex) {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_toy_dataset(dir.path(), scenes, size, seed).unwrap();
    let index = parse_manifest(&manifest).unwrap();
    (dir, index)
}

pub fn tiny(variant: Variant, size: usize, width: usize) -> VariantConfig {
    VariantConfig::preset(variant).with_image_size(size).with_base_width(width)
}
