//! Invariants of the public API checked on random small rings.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trman_core::completion::{objective, sampled_values, CompletionProblem, RingModel};
use trman_core::geometry::{horizontal_residual, project, residual_norm, vertical_map_matrix, TangentVector};
use trman_core::tr::{gauge_apply, injectivity_check, tr_entry, tr_full, utr_full, DEFAULT_INJECTIVITY_TOL};
use trman_core::utr_geometry::{u_horizontal_residual, u_project, UtrTangent};
use trman_core::{CoreDistribution, GaugeElement, SampleSet, Shape, TrCores, TrRank, UtrCore};

fn ring(seed: u64, dims: &[usize], ranks: &[usize]) -> TrCores {
    let shape = Shape::new(dims.to_vec()).unwrap();
    let rank = TrRank::new(ranks.to_vec()).unwrap();
    TrCores::random(&shape, &rank, seed, CoreDistribution::Gaussian).unwrap()
}

fn ring_strategy() -> impl Strategy<Value = (u64, Vec<usize>, Vec<usize>)> {
    (any::<u64>(), 2usize..5).prop_flat_map(|(seed, d)| {
        (Just(seed), proptest::collection::vec(1usize..6, d), proptest::collection::vec(1usize..4, d))
    })
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gauge_action_preserves_the_tensor((seed, dims, ranks) in ring_strategy()) {
        let u = ring(seed, &dims, &ranks);
        let g = GaugeElement::random(&u.rank(), &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let moved = gauge_apply(&u, &g).unwrap();
        let a = tr_full(&u).unwrap();
        let b = tr_full(&moved).unwrap();
        prop_assert!(rel_diff(b.data(), a.data()) < 1e-9);
        let back = gauge_apply(&moved, &g.inverse().unwrap()).unwrap();
        for k in 0..u.order() {
            prop_assert!(back.core(k).sub(u.core(k)).unwrap().fro_norm() < 1e-8 * (1.0 + u.core(k).fro_norm()));
        }
    }

    #[test]
    fn sampled_values_match_entries((seed, dims, ranks) in ring_strategy()) {
        let u = ring(seed, &dims, &ranks);
        let full = tr_full(&u).unwrap();
        let shape = u.shape();
        let indices: Vec<Vec<usize>> = (0..shape.numel()).step_by(3).map(|o| shape.multi_index(o)).collect();
        let set = SampleSet::from_tensor(&full, indices.clone()).unwrap();
        let vals = sampled_values(&u, &set);
        for (idx, v) in set.iter_indices().zip(&vals) {
            prop_assert!((tr_entry(&u, idx).unwrap() - v).abs() < 1e-12 * (1.0 + v.abs()));
        }
        let p = CompletionProblem::new(set);
        prop_assert!(objective(&p, &u) < 1e-20 * (1.0 + full.fro_norm().powi(2)));
    }

    #[test]
    fn projection_splits_every_tangent((seed, dims, ranks) in ring_strategy()) {
        let u = ring(seed, &dims, &ranks);
        let v = ring(seed.wrapping_add(7), &dims, &ranks).as_tangent();
        let p = project(&u, &v).unwrap();
        let mut sum = p.vertical.clone();
        sum.axpy(1.0, &p.horizontal);
        prop_assert!(sum.sub(&v).norm() <= 4.0 * f64::EPSILON * v.norm());
        if !p.rank_deficient {
            prop_assert!(p.vertical.inner(&p.horizontal).abs() <= 1e-9 * v.norm().powi(2));
            let scale = v.norm() * u.as_tangent().norm();
            prop_assert!(residual_norm(&horizontal_residual(&u, &p.horizontal).unwrap()) <= 1e-8 * scale);
        }
    }

    #[test]
    fn vertical_space_has_gauge_dimension((seed, dims, ranks) in ring_strategy()) {
        let u = ring(seed, &dims, &ranks);
        prop_assume!(injectivity_check(&u, DEFAULT_INJECTIVITY_TOL).injective());
        let rank = vertical_map_matrix(&u).unwrap().numerical_rank(1e-10);
        prop_assert_eq!(rank, u.rank().gauge_dim() - 1);
    }

    #[test]
    fn uniform_ring_matches_its_replication(seed in any::<u64>(), r in 1usize..4, n in 1usize..6, d in 2usize..5) {
        let c = UtrCore::random(r, n, d, seed, CoreDistribution::Gaussian).unwrap();
        let a = utr_full(&c).unwrap();
        let b = tr_full(&c.replicate()).unwrap();
        prop_assert!(rel_diff(a.data(), b.data()) < 1e-12);
    }

    #[test]
    fn uniform_projection_splits(seed in any::<u64>(), r in 1usize..4, n in 1usize..8, d in 2usize..5) {
        let c = UtrCore::random(r, n, d, seed, CoreDistribution::Gaussian).unwrap();
        let w = UtrCore::random(r, n, d, seed ^ 5, CoreDistribution::Gaussian).unwrap();
        let v = UtrTangent::from_core(&w);
        let p = u_project(&c, &v).unwrap();
        let mut sum = p.vertical.clone();
        sum.axpy(1.0, &p.horizontal);
        prop_assert!(sum.sub(&v).norm() <= 4.0 * f64::EPSILON * v.norm());
        if !p.rank_deficient {
            let scale = v.norm() * c.as_tangent().norm();
            prop_assert!(u_horizontal_residual(&c, &p.horizontal).unwrap().fro_norm() <= 1e-8 * scale);
        }
    }
}
