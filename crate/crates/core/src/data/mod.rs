//! Dataset ingestion, pair enumeration and the procedural toy dataset.

mod manifest;
mod pairs;
pub mod toy;
mod triple;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use manifest::{parse_manifest, write_manifest, ImageRecord, SceneIndex, MANIFEST_HEADER};
pub use pairs::{
    enumerate_pairs, filter_subset, restricted_pair_count, unrestricted_pair_count, PairKey,
    PairSet, SubsetPredicate,
};
pub use toy::generate_toy_dataset;
pub use triple::{ground_truth_id, load_image, load_triple, RelightingTriple, TripleLoader};

/// Images per scene: one per (temperature, direction).
pub const IMAGES_PER_SCENE: usize = Temperature::ALL.len() * Direction::ALL.len();

/// Compass light direction; degrees run clockwise from north.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl Direction {
    pub const ALL: [Direction; 8] = [
        Direction::N,
        Direction::NE,
        Direction::E,
        Direction::SE,
        Direction::S,
        Direction::SW,
        Direction::W,
        Direction::NW,
    ];

    pub fn degrees(self) -> f64 {
        45.0 * self as u8 as f64
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::N => "N",
            Direction::NE => "NE",
            Direction::E => "E",
            Direction::SE => "SE",
            Direction::S => "S",
            Direction::SW => "SW",
            Direction::W => "W",
            Direction::NW => "NW",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Direction::ALL
            .into_iter()
            .find(|d| d.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Value(format!("unknown light direction {s:?}")))
    }
}

/// Light colour temperature, restricted to the five rendered values.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Temperature {
    K2500,
    K3500,
    K4500,
    K5500,
    K6500,
}

impl Temperature {
    pub const ALL: [Temperature; 5] = [
        Temperature::K2500,
        Temperature::K3500,
        Temperature::K4500,
        Temperature::K5500,
        Temperature::K6500,
    ];

    pub fn kelvin(self) -> f64 {
        self.kelvin_u32() as f64
    }

    pub fn kelvin_u32(self) -> u32 {
        2500 + 1000 * self as u32
    }

    pub fn from_kelvin(k: u32) -> Result<Self> {
        Temperature::ALL
            .into_iter()
            .find(|t| t.kelvin_u32() == k)
            .ok_or_else(|| Error::Value(format!("colour temperature {k} K is not one of 2500..6500 step 1000")))
    }
}

impl fmt::Display for Temperature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kelvin_u32())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Illumination {
    pub temperature: Temperature,
    pub direction: Direction,
}

impl Illumination {
    pub fn new(temperature: Temperature, direction: Direction) -> Self {
        Self {
            temperature,
            direction,
        }
    }

    pub fn direction_degrees(&self) -> f64 {
        self.direction.degrees()
    }

    /// All 40 illuminations, temperature-major.
    pub fn all() -> impl Iterator<Item = Illumination> {
        Temperature::ALL
            .into_iter()
            .flat_map(|t| Direction::ALL.into_iter().map(move |d| Illumination::new(t, d)))
    }
}

impl fmt::Display for Illumination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}K/{}", self.temperature, self.direction)
    }
}
