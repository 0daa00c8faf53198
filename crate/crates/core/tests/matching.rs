use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use vo_core::frontend::{FeatureSet, DESCRIPTOR_DIM};
use vo_core::geometry::PixelPoint;
use vo_core::matcher::*;
use vo_core::synthscene::{make_orbit_scene, random_unit_descriptor, NoiseModel};

fn set_from(descs: &[Vec<f32>], dim: usize) -> FeatureSet {
    let n = descs.len();
    FeatureSet::new(
        (0..n)
            .map(|i| PixelPoint::new((i % 600) as f64, (i / 600) as f64))
            .collect(),
        vec![1.0; n],
        descs.concat(),
        dim,
        (640, 480),
    )
    .unwrap()
}

fn normalize(v: &mut [f32]) {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Plain restatement of mutual nearest neighbours with the two-sided ratio
/// test: every similarity recomputed inside the loops.
fn oracle(a: &FeatureSet, b: &FeatureSet, ratio: f32, min_sim: f32) -> Vec<(usize, usize)> {
    let sim = |i: usize, j: usize| -> f32 { a.descriptor(i).iter().zip(b.descriptor(j)).map(|(x, y)| x * y).sum() };
    let dist = |s: f32| (2.0 - 2.0 * s).max(0.0).sqrt();
    let best_of = |n: usize, f: &dyn Fn(usize) -> f32| {
        let mut best = 0;
        for j in 1..n {
            if f(j) > f(best) {
                best = j;
            }
        }
        let second = (0..n)
            .filter(|&j| j != best)
            .map(f)
            .fold(None, |m: Option<f32>, s| Some(m.map_or(s, |m| m.max(s))));
        (best, f(best), second)
    };
    let ratio_ok = |best: f32, second: Option<f32>| match second {
        None => true,
        Some(s) => dist(s) > 0.0 && dist(best) <= ratio * dist(s),
    };
    let mut out = Vec::new();
    for i in 0..a.len() {
        let (j, s, second) = best_of(b.len(), &|j| sim(i, j));
        let (back, _, back_second) = best_of(a.len(), &|k| sim(k, j));
        if back == i && s >= min_sim && ratio_ok(s, second) && ratio_ok(s, back_second) {
            out.push((i, j));
        }
    }
    out
}

/// 100 noisy, shuffled copies of `a` mixed with unrelated distractors.
fn instance(rng: &mut ChaCha8Rng, dim: usize) -> (FeatureSet, FeatureSet) {
    let noise = Normal::new(0.0, 0.04).unwrap();
    let a: Vec<Vec<f32>> = (0..100).map(|_| random_unit_descriptor(rng, dim)).collect();
    let mut b: Vec<Vec<f32>> = a
        .iter()
        .take(70)
        .map(|d| {
            let mut v: Vec<f32> = d.iter().map(|x| x + noise.sample(rng) as f32).collect();
            normalize(&mut v);
            v
        })
        .collect();
    b.extend((0..30).map(|_| random_unit_descriptor(rng, dim)));
    b.shuffle(rng);
    (set_from(&a, dim), set_from(&b, dim))
}

#[test]
fn mutual_nn_equals_double_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for dim in [8, 32, DESCRIPTOR_DIM] {
        for _ in 0..5 {
            let (a, b) = instance(&mut rng, dim);
            let m = builtin_mutual_nn(&a, &b, 0.9, 0.2).unwrap();
            assert_eq!(m.pairs(), oracle(&a, &b, 0.9, 0.2).as_slice());
            assert!(m.is_one_to_one());
        }
    }
}

#[test]
fn permutation_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a: Vec<Vec<f32>> = (0..50)
        .map(|_| random_unit_descriptor(&mut rng, DESCRIPTOR_DIM))
        .collect();
    let mut perm: Vec<usize> = (0..50).collect();
    perm.shuffle(&mut rng);
    let b: Vec<Vec<f32>> = perm.iter().map(|&i| a[i].clone()).collect();
    let m = builtin_mutual_nn(&set_from(&a, DESCRIPTOR_DIM), &set_from(&b, DESCRIPTOR_DIM), 0.9, 0.2).unwrap();
    assert_eq!(m.len(), 50);
    for (i, j, c) in m.iter() {
        assert_eq!(perm[j], i);
        assert!((c - 1.0).abs() < 1e-5);
    }
}

#[test]
fn candidate_resolution_is_one_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..500 {
        let (na, nb) = (rng.random_range(1..20), rng.random_range(1..20));
        let cands: Vec<(usize, usize, f32)> = (0..rng.random_range(0..60))
            .map(|_| {
                (
                    rng.random_range(0..na + 2),
                    rng.random_range(0..nb + 2),
                    rng.random_range(0..5) as f32 / 4.0,
                )
            })
            .collect();
        let m = MatchSet::from_candidates(cands.clone(), na, nb, 0.25);
        assert!(m.is_one_to_one());
        for ((a, b), c) in m.pairs().iter().zip(m.confidences()) {
            assert!(*a < na && *b < nb && *c >= 0.25);
            assert!(cands.iter().any(|x| x.0 == *a && x.1 == *b && x.2 == *c));
            // No discarded candidate on either index beats the kept one.
            for x in &cands {
                if (x.0 == *a || x.1 == *b) && x.0 < na && x.1 < nb {
                    let free = !m.pairs().iter().any(|p| p.0 == x.0 && p != &(*a, *b))
                        && !m.pairs().iter().any(|p| p.1 == x.1 && p != &(*a, *b));
                    assert!(!(free && x.2 > *c), "{x:?} beats ({a}, {b}, {c})");
                }
            }
        }
    }
}

#[test]
fn prior_matching_agrees_with_scene_association() {
    let scene = Arc::new(make_orbit_scene(3.0, 30, 300, 4).with_noise(NoiseModel {
        pixel_sigma: 1.0,
        ..NoiseModel::default()
    }));
    let matcher = MutualNnMatcher::default();
    let mut agree = 0;
    let mut total = 0;
    for f in 0..scene.len() {
        let (fs, assoc, _) = scene.features(f);
        let visible = scene.visible(f);
        let prior = PriorFeatures {
            positions: visible.iter().map(|v| v.1).collect(),
            descriptors: visible
                .iter()
                .flat_map(|v| scene.landmarks[v.0].descriptor.clone())
                .collect(),
            dim: DESCRIPTOR_DIM,
        };
        let m = matcher.match_with_prior(&prior, &fs, 0.2).unwrap();
        for &(p, j) in m.pairs() {
            total += 1;
            if visible[p].0 == assoc[j] {
                agree += 1;
            }
        }
    }
    assert!(total > 0);
    assert!(agree as f64 >= 0.95 * total as f64, "{agree}/{total}");
}

#[test]
fn empty_prior_gives_no_matches() {
    let prior = PriorFeatures {
        positions: vec![],
        descriptors: vec![],
        dim: DESCRIPTOR_DIM,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fs = set_from(&[random_unit_descriptor(&mut rng, DESCRIPTOR_DIM)], DESCRIPTOR_DIM);
    assert!(MutualNnMatcher::default()
        .match_with_prior(&prior, &fs, 0.2)
        .unwrap()
        .is_empty());
}
