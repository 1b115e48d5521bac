use std::collections::HashSet;
use std::sync::Arc;

use relight_core::data::toy::{light_vector, ToyScene};
use relight_core::data::{enumerate_pairs, Direction, SceneIndex};

const SIZE: usize = 96;

/// Ground pixels whose light ray is blocked by object `i`.
fn shadow_columns(scene: &ToyScene, i: usize, azimuth: f64) -> Vec<usize> {
    let light = light_vector(azimuth);
    let mut cols = Vec::new();
    for py in 0..SIZE {
        for px in 0..SIZE {
            let (x, z) = ToyScene::ground_point(px, py, SIZE);
            let hit = scene.primary_hit(x, z);
            if hit.object.is_none() && scene.occluder(&hit, light) == Some(i) {
                cols.push(px);
            }
        }
    }
    cols
}

fn mean(v: &[usize]) -> f64 {
    v.iter().sum::<usize>() as f64 / v.len() as f64
}

#[test]
fn east_and_west_shadows_fall_on_opposite_sides() {
    let (east, west) = (Direction::E.degrees(), Direction::W.degrees());
    let mut checked = 0;
    for k in 0..6 {
        let scene = ToyScene::for_dataset(7, k);
        for (i, obj) in scene.objects.iter().enumerate() {
            let col = ToyScene::column_of(obj.shape.footprint_center().0, SIZE);
            let e = shadow_columns(&scene, i, east);
            let w = shadow_columns(&scene, i, west);
            if e.is_empty() || w.is_empty() {
                continue;
            }
            checked += 1;
            assert!(mean(&e) < col, "scene {k} object {i}: E shadow at {} vs object {col}", mean(&e));
            assert!(mean(&w) > col, "scene {k} object {i}: W shadow at {} vs object {col}", mean(&w));
        }
    }
    assert!(checked >= 6, "only {checked} objects cast visible shadows");
}

#[test]
fn rendered_shadows_match_the_geometry() {
    let scene = ToyScene::for_dataset(3, 0);
    let az = Direction::E.degrees();
    let lit = scene.render(SIZE, az, 6500.0, false).unwrap();
    let shaded = scene.render(SIZE, az, 6500.0, true).unwrap();
    let light = light_vector(az);
    for py in 0..SIZE {
        for px in 0..SIZE {
            let (x, z) = ToyScene::ground_point(px, py, SIZE);
            let hit = scene.primary_hit(x, z);
            let blocked = scene.occluder(&hit, light).is_some();
            let (a, b) = (lit.get(px, py), shaded.get(px, py));
            if blocked {
                assert!(b.iter().sum::<f32>() < a.iter().sum::<f32>(), "({px},{py}) should be darker");
            } else {
                assert_eq!(a, b, "({px},{py}) should be unchanged");
            }
        }
    }
}

#[test]
fn independent_samples_overlap_as_expected() {
    let pairs = enumerate_pairs(Arc::new(SceneIndex::synthetic(3)), true);
    assert_eq!(pairs.len(), 8400);
    let trials = 1000;
    let mut total = 0usize;
    for t in 0..trials {
        let a: HashSet<_> = pairs.sample(100, 2 * t).unwrap().into_iter().collect();
        let b = pairs.sample(100, 2 * t + 1).unwrap();
        total += b.iter().filter(|k| a.contains(k)).count();
    }
    let observed = total as f64 / trials as f64;
    let expected = 100.0 * 100.0 / 8400.0;
    assert!((observed - expected).abs() <= 0.5, "mean overlap {observed} vs {expected}");
}
