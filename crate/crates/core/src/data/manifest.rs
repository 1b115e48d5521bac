use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Direction, Illumination, Temperature, IMAGES_PER_SCENE};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 4] = ["scene_id", "direction", "temperature", "relpath"];

#[derive(Debug, Deserialize, Serialize)]
struct ManifestRow {
    scene_id: String,
    direction: String,
    temperature: String,
    relpath: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub scene_id: String,
    pub illumination: Illumination,
    pub path: PathBuf,
}

/// Complete set of scenes, each rendered under all 40 illuminations.
///
/// Records are sorted by `(scene_id, temperature, direction)` so that image
/// ids are stable regardless of manifest row order.
#[derive(Clone, Debug)]
pub struct SceneIndex {
    records: Vec<ImageRecord>,
    lookup: HashMap<(String, Illumination), usize>,
    scenes: Vec<String>,
}

impl SceneIndex {
    pub fn from_records(mut records: Vec<ImageRecord>) -> Result<Self> {
        records.sort_by(|a, b| {
            (a.scene_id.as_str(), a.illumination).cmp(&(b.scene_id.as_str(), b.illumination))
        });
        let mut lookup = HashMap::with_capacity(records.len());
        let mut per_scene: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if lookup
                .insert((r.scene_id.clone(), r.illumination), i)
                .is_some()
            {
                return Err(Error::Schema(format!(
                    "duplicate entry for scene {} under {}",
                    r.scene_id, r.illumination
                )));
            }
            *per_scene.entry(&r.scene_id).or_default() += 1;
        }
        if let Some((scene, &found)) = per_scene.iter().find(|(_, &n)| n != IMAGES_PER_SCENE) {
            return Err(Error::IncompleteScene {
                scene: scene.to_string(),
                found,
            });
        }
        let scenes = per_scene.keys().map(|s| s.to_string()).collect();
        Ok(Self {
            records,
            lookup,
            scenes,
        })
    }

    /// Synthetic index with `n_scenes` complete scenes and placeholder paths.
    pub fn synthetic(n_scenes: usize) -> Self {
        let records = (0..n_scenes)
            .flat_map(|s| {
                Illumination::all().map(move |illumination| ImageRecord {
                    scene_id: format!("scene_{s:04}"),
                    illumination,
                    path: PathBuf::from(format!("scene_{s:04}/{}_{}.png", illumination.direction, illumination.temperature)),
                })
            })
            .collect();
        Self::from_records(records).expect("synthetic index is complete")
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn record(&self, id: usize) -> &ImageRecord {
        &self.records[id]
    }

    pub fn scenes(&self) -> &[String] {
        &self.scenes
    }

    pub fn scene_count(&self) -> usize {
        self.scenes.len()
    }

    pub fn images_in_scene(&self, scene: &str) -> usize {
        self.records.iter().filter(|r| r.scene_id == scene).count()
    }

    pub fn find(&self, scene: &str, illumination: Illumination) -> Option<usize> {
        self.lookup.get(&(scene.to_string(), illumination)).copied()
    }

    /// Sub-index keeping only (or dropping) the given scenes.
    pub fn select_scenes(&self, scenes: &[String], keep: bool) -> Result<Self> {
        let records = self
            .records
            .iter()
            .filter(|r| scenes.contains(&r.scene_id) == keep)
            .cloned()
            .collect();
        Self::from_records(records)
    }
}

fn parse_row(row: ManifestRow, base: &Path) -> Result<ImageRecord> {
    let direction: Direction = row.direction.parse()?;
    let kelvin: u32 = row
        .temperature
        .trim()
        .parse()
        .map_err(|_| Error::Value(format!("temperature {:?} is not an integer", row.temperature)))?;
    let temperature = Temperature::from_kelvin(kelvin)?;
    let path = base.join(row.relpath.trim());
    if !path.is_file() {
        return Err(Error::Ingestion {
            path,
            reason: "referenced image does not exist".into(),
        });
    }
    Ok(ImageRecord {
        scene_id: row.scene_id.trim().to_string(),
        illumination: Illumination::new(temperature, direction),
        path,
    })
}

/// Read a `scene_id,direction,temperature,relpath` manifest; paths are relative
/// to the manifest's directory.
pub fn parse_manifest(path: &Path) -> Result<SceneIndex> {
    if !path.is_file() {
        return Err(Error::Ingestion {
            path: path.to_path_buf(),
            reason: "manifest not found".into(),
        });
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != MANIFEST_HEADER {
        return Err(Error::Schema(format!(
            "manifest header must be {}, found {}",
            MANIFEST_HEADER.join(","),
            header.join(",")
        )));
    }
    let records = reader
        .deserialize::<ManifestRow>()
        .map(|row| parse_row(row?, base))
        .collect::<Result<Vec<_>>>()?;
    SceneIndex::from_records(records)
}

/// Write a manifest for `records`, storing paths relative to `root`.
pub fn write_manifest(path: &Path, root: &Path, records: &[ImageRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for r in records {
        let rel = r.path.strip_prefix(root).unwrap_or(&r.path);
        writer.serialize(ManifestRow {
            scene_id: r.scene_id.clone(),
            direction: r.illumination.direction.label().to_string(),
            temperature: r.illumination.temperature.to_string(),
            relpath: rel.to_string_lossy().replace('\\', "/"),
        })?;
    }
    writer.flush()?;
    Ok(())
}
