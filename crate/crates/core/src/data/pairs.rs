use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SceneIndex, Direction, IMAGES_PER_SCENE};
use crate::error::{Error, Result};

/// Ordered (input, target) pair of image ids into a [`SceneIndex`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub input: usize,
    pub target: usize,
}

impl PairKey {
    pub fn new(input: usize, target: usize) -> Self {
        Self { input, target }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetPredicate {
    SameTemperature,
    SameDirection,
}

/// Lazily described set of training pairs.
///
/// The full pair space of a real dataset runs to hundreds of millions of
/// entries, so membership and size are computed from the index rather than
/// stored.
#[derive(Clone, Debug)]
pub struct PairSet {
    index: Arc<SceneIndex>,
    restricted: bool,
    filters: Vec<SubsetPredicate>,
    scene_of: Arc<Vec<u32>>,
}

/// `n^2`: every ordered pair, including an image with itself.
pub fn unrestricted_pair_count(n_images: u64) -> u64 {
    n_images * n_images
}

/// Pairs from different scenes under different light directions, for
/// `n_scenes` complete scenes.
pub fn restricted_pair_count(n_scenes: u64) -> u64 {
    let per_scene = IMAGES_PER_SCENE as u64;
    let other_directions = per_scene - per_scene / Direction::ALL.len() as u64;
    per_scene * n_scenes * other_directions * n_scenes.saturating_sub(1)
}

pub fn enumerate_pairs(index: Arc<SceneIndex>, restricted: bool) -> PairSet {
    if restricted && index.scene_count() < 2 {
        log::warn!("restricted pairing over a single scene yields no pairs");
    }
    let scene_pos: HashMap<&str, u32> = index
        .scenes()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    let scene_of = index
        .records()
        .iter()
        .map(|r| scene_pos[r.scene_id.as_str()])
        .collect();
    PairSet {
        index,
        restricted,
        filters: Vec::new(),
        scene_of: Arc::new(scene_of),
    }
}

pub fn filter_subset(pairs: &PairSet, predicate: SubsetPredicate) -> PairSet {
    let mut out = pairs.clone();
    if !out.filters.contains(&predicate) {
        out.filters.push(predicate);
    }
    out
}

type CountKey = (Option<u32>, Option<u8>, Option<u8>);

impl PairSet {
    pub fn index(&self) -> &Arc<SceneIndex> {
        &self.index
    }

    pub fn is_restricted(&self) -> bool {
        self.restricted
    }

    pub fn filters(&self) -> &[SubsetPredicate] {
        &self.filters
    }

    fn same_temperature(&self) -> bool {
        self.filters.contains(&SubsetPredicate::SameTemperature)
    }

    fn same_direction(&self) -> bool {
        self.filters.contains(&SubsetPredicate::SameDirection)
    }

    pub fn contains(&self, key: PairKey) -> bool {
        let n = self.index.len();
        if key.input >= n || key.target >= n {
            return false;
        }
        let a = &self.index.record(key.input).illumination;
        let b = &self.index.record(key.target).illumination;
        if self.same_temperature() && a.temperature != b.temperature {
            return false;
        }
        if self.same_direction() && a.direction != b.direction {
            return false;
        }
        if self.restricted
            && (self.scene_of[key.input] == self.scene_of[key.target] || a.direction == b.direction)
        {
            return false;
        }
        true
    }

    fn count_key(&self, id: usize, with_scene: bool, with_direction: bool) -> CountKey {
        let illum = &self.index.record(id).illumination;
        (
            with_scene.then(|| self.scene_of[id]),
            self.same_temperature().then_some(illum.temperature as u8),
            (with_direction || self.same_direction()).then_some(illum.direction as u8),
        )
    }

    /// Number of pairs, by inclusion-exclusion over per-key image counts.
    pub fn len(&self) -> u64 {
        let combos: &[(bool, bool)] = if self.restricted {
            &[(false, false), (true, false), (false, true), (true, true)]
        } else {
            &[(false, false)]
        };
        let mut counts: HashMap<CountKey, u64> = HashMap::new();
        for id in 0..self.index.len() {
            for &(s, d) in combos {
                *counts.entry(self.count_key(id, s, d)).or_default() += 1;
            }
        }
        let c = |id: usize, s: bool, d: bool| counts[&self.count_key(id, s, d)] as i64;
        let total: i64 = (0..self.index.len())
            .map(|id| {
                if self.restricted {
                    c(id, false, false) - c(id, true, false) - c(id, false, true) + c(id, true, true)
                } else {
                    c(id, false, false)
                }
            })
            .sum();
        total as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pairs in `(input, target)` lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = PairKey> + '_ {
        let n = self.index.len();
        (0..n)
            .flat_map(move |i| (0..n).map(move |j| PairKey::new(i, j)))
            .filter(move |&k| self.contains(k))
    }

    /// `n` distinct pairs drawn uniformly without replacement; deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<PairKey>> {
        let len = self.len();
        if n as u64 > len {
            return Err(Error::Size {
                requested: n,
                available: len as usize,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        const MATERIALIZE_LIMIT: u64 = 4_000_000;
        if len <= MATERIALIZE_LIMIT || 2 * n as u64 > len {
            let mut all: Vec<PairKey> = self.iter().collect();
            for k in 0..n {
                let j = rng.random_range(k..all.len());
                all.swap(k, j);
            }
            all.truncate(n);
            return Ok(all);
        }
        let size = self.index.len();
        let mut seen = HashSet::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let key = PairKey::new(rng.random_range(0..size), rng.random_range(0..size));
            if self.contains(key) && seen.insert(key) {
                out.push(key);
            }
        }
        Ok(out)
    }
}
