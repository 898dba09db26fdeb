//! Structural invariants over random models, checked with proptest.

mod common;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, RowDVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_query, region_mass};
use phasehit::expmat::expm;
use phasehit::fixtures::{random_model, RandomModelSpec};
use phasehit::hitting::{joint_density, taboo_distribution, DensityQuery};
use phasehit::mcore::{mask, projector, IntensityModel, StateSet, TargetKey};
use phasehit::partitions::{classify, enumerate_partitions, waiting_target_sets, Region, SubPartition, TimeVector};
use phasehit::simkit::region_frequencies;
use phasehit::tails::{canonicalize, constraints_hold, tail_p, tail_p_alt, Constraint, TailQuery};

fn model(seed: u64, states: usize, targets: usize) -> IntensityModel {
    random_model(seed, &RandomModelSpec { states, targets, ..Default::default() })
}

fn set_from_bits(n: usize, bits: u32) -> StateSet {
    StateSet::from_indices(n, (0..n).filter(|i| bits >> i & 1 == 1))
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn off_target_states(m: &IntensityModel) -> Vec<usize> {
    let gamma = m.union_of(m.targets().keys()).unwrap();
    (0..m.n_states()).filter(|&i| !gamma.contains(i)).collect()
}

fn tau_strategy(keys: usize) -> impl Strategy<Value = BTreeMap<TargetKey, f64>> {
    // a small grid of values so that ties and misses both show up
    prop::collection::vec(prop_oneof![(0u8..4).prop_map(|v| v as f64 * 0.5), Just(f64::INFINITY)], keys)
        .prop_map(|v| v.into_iter().enumerate().map(|(i, x)| (i as TargetKey + 1, x)).collect())
}

fn constraint_strategy(keys: u32) -> impl Strategy<Value = Constraint> {
    prop_oneof![
        (1..=keys, 0u8..4).prop_map(|(k, c)| Constraint::Greater(k, c as f64 * 0.5 + 0.25)),
        (1..=keys, 1..=keys).prop_filter_map("distinct keys", |(a, b)| (a != b).then_some(Constraint::Equal(a, b))),
        (1..=keys, 1..=keys).prop_filter_map("distinct keys", |(a, b)| (a != b).then_some(Constraint::NotEqual(a, b))),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_is_a_projector_sandwich(seed in 0u64..1000, n in 2usize..7, a in 1u32..64, b in 1u32..64) {
        let m = model(seed, n, 2);
        let a = set_from_bits(n, a);
        let b = set_from_bits(n, b);
        let lhs = mask(&m, &a, &b).unwrap().into_matrix();
        let rhs = projector(&a).matrix() * m.lambda() * projector(&b).matrix();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn projectors_are_idempotent_and_multiply_as_intersections(n in 1usize..9, a in 0u32..256, b in 0u32..256) {
        let a = set_from_bits(n, a);
        let b = set_from_bits(n, b);
        let pa = projector(&a).into_matrix();
        let pb = projector(&b).into_matrix();
        prop_assert_eq!(&pa * &pa, pa.clone());
        prop_assert_eq!(&pa * &pb, projector(&a.intersection(&b)).into_matrix());
        prop_assert_eq!(&pa + &pb - &pa * &pb, projector(&a.union(&b)).into_matrix());
        prop_assert_eq!(&pa + projector(&a.complement()).matrix(), DMatrix::identity(n, n));
    }

    #[test]
    fn complement_mask_identity(seed in 0u64..1000, n in 2usize..7, bits in 1u32..63) {
        let m = model(seed, n, 2);
        let a = set_from_bits(n, bits);
        let lhs = mask(&m, &a.complement(), &a).unwrap().into_matrix();
        let ia = projector(&a).into_matrix();
        let rhs = m.lambda() * &ia - &ia * m.lambda() * &ia;
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn transition_matrices_conserve_mass_and_compose(seed in 0u64..1000, s in 0.0f64..2.0, t in 0.0f64..2.0) {
        let m = model(seed, 6, 2);
        let l = m.lambda();
        let ps = expm(&(l * s)).unwrap();
        let pt = expm(&(l * t)).unwrap();
        let pst = expm(&(l * (s + t))).unwrap();
        prop_assert!(max_abs(&(&ps * &pt - &pst)) < 1e-11);
        for row in pst.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&x| x > -1e-14));
        }
    }

    #[test]
    fn forward_equation(seed in 0u64..1000, t in 0.1f64..2.0) {
        let m = model(seed, 5, 2);
        let l = m.lambda();
        let h = 1e-4;
        let derivative = (expm(&(l * (t + h))).unwrap() - expm(&(l * (t - h))).unwrap()) / (2.0 * h);
        let p = expm(&(l * t)).unwrap();
        prop_assert!(max_abs(&(&derivative - &p * l)) < 1e-6);
        prop_assert!(max_abs(&(&derivative - l * &p)) < 1e-6);
    }

    #[test]
    fn taboo_law_solves_its_forward_equation(seed in 0u64..1000, bits in 1u32..31, u in 0.1f64..2.0) {
        let m = model(seed, 6, 2);
        let m = m.with_alpha(m.delta(0)).unwrap();
        let d = set_from_bits(6, bits << 1);
        let h = 1e-6;
        let p = taboo_distribution(&m, &d, u).unwrap();
        let derivative = (taboo_distribution(&m, &d, u + h).unwrap() - &p) / h;
        let free = d.complement();
        let rhs = &p * mask(&m, &free, &free).unwrap().matrix();
        let scale = m.lambda().amax();
        prop_assert!((derivative - rhs).amax() < 1e-5 * scale * scale);
    }

    #[test]
    fn classify_lands_in_the_enumeration(times in prop::collection::vec(0u8..4, 1..5)) {
        let t = TimeVector::new(times.iter().enumerate().map(|(i, &v)| (i as TargetKey + 1, v as f64))).unwrap();
        let region = classify(&t);
        prop_assert!(region.contains(&t));
        let all = enumerate_partitions(&t.keys()).unwrap();
        prop_assert_eq!(all.iter().filter(|r| r.contains(&t)).count(), 1);
        prop_assert!(all.contains(&region));
    }

    #[test]
    fn targets_lie_in_the_next_waiting_set(seed in 0u64..1000, pick in 0usize..13) {
        let m = model(seed, 6, 3);
        let regions = enumerate_partitions(&[1, 2, 3]).unwrap();
        let region = &regions[pick % regions.len()];
        let sets = waiting_target_sets(&m, region.partition()).unwrap();
        for pair in sets.windows(2) {
            prop_assert!(pair[0].1.is_subset(&pair[1].0));
            prop_assert!(pair[0].0.is_subset(&pair[1].0));
        }
        for ((_, t), block) in sets.iter().zip(region.partition().blocks()) {
            prop_assert!(t.is_subset(&m.intersection_of(block).unwrap()));
        }
    }

    #[test]
    fn density_is_nonnegative_and_zero_on_empty_targets(seed in 0u64..1000, pick in 0usize..13, raw in prop::collection::vec(0.01f64..2.0, 3)) {
        let m = model(seed, 6, 3);
        let regions = enumerate_partitions(&[1, 2, 3]).unwrap();
        let region = regions[pick % regions.len()].clone();
        let mut times = raw[..region.len()].to_vec();
        times.sort_by(f64::total_cmp);
        let q = DensityQuery::from_block_times(region.clone(), &times).unwrap();
        let d = joint_density(&m, &q).unwrap().value;
        prop_assert!(d >= 0.0);
        let sets = waiting_target_sets(&m, region.partition()).unwrap();
        if sets.iter().any(|(_, t)| t.is_empty()) {
            prop_assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn density_is_linear_in_the_initial_law(seed in 0u64..1000, w in 0.0f64..1.0, raw in prop::collection::vec(0.01f64..2.0, 2)) {
        let m = model(seed, 6, 2);
        let free = off_target_states(&m);
        let n = m.n_states();
        let a1 = m.delta(free[0]);
        let mut a2 = RowDVector::zeros(n);
        for &i in &free {
            a2[i] = 1.0 / free.len() as f64;
        }
        let mut times = raw.clone();
        times.sort_by(f64::total_cmp);
        let region: Region = "{1}<{2}".parse().unwrap();
        let q = DensityQuery::from_block_times(region, &times).unwrap();
        let f = |alpha: RowDVector<f64>| joint_density(&m.with_alpha(alpha).unwrap(), &q).unwrap().value;
        let mixed = f(&a1 * w + &a2 * (1.0 - w));
        let expected = w * f(a1.clone()) + (1.0 - w) * f(a2.clone());
        prop_assert!((mixed - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn tail_decreases_in_each_threshold(seed in 0u64..1000, qseed in 0u64..1000, bump in 0.0f64..1.0) {
        let m = model(seed, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(qseed);
        let q = random_query(&mut rng, &[1, 2, 3], 2);
        prop_assume!(!q.s1().is_empty());
        let mut later = q.t().to_vec();
        *later.last_mut().unwrap() += bump;
        let q2 = TailQuery::distinct(q.s1().clone(), q.s2().clone(), later).unwrap();
        let p = tail_p(&m, &q).unwrap().value;
        let p2 = tail_p(&m, &q2).unwrap().value;
        prop_assert!(p2 <= p + 1e-10, "{} then {}", p, p2);
        prop_assert!((-1e-10..=1.0 + 1e-10).contains(&p));
    }

    #[test]
    fn relaxed_singletons_in_the_untimed_part_are_free(seed in 0u64..1000, c in 0.0f64..1.5) {
        let m = model(seed, 5, 3);
        let s1 = SubPartition::new(vec![vec![1]]).unwrap();
        let with = TailQuery::relaxed(s1.clone(), SubPartition::new(vec![vec![2], vec![3]]).unwrap(), vec![c]).unwrap();
        let without = TailQuery::relaxed(s1, SubPartition::empty(), vec![c]).unwrap();
        let a = tail_p(&m, &with).unwrap().value;
        let b = tail_p(&m, &without).unwrap().value;
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn both_tail_routes_agree(seed in 0u64..1000, qseed in 0u64..1000) {
        let m = model(seed, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(qseed);
        let q = random_query(&mut rng, &[1, 2, 3], 2);
        let a = tail_p(&m, &q).unwrap().value;
        let b = tail_p_alt(&m, &q).unwrap().value;
        prop_assert!((a - b).abs() < 1e-7, "{}: {} vs {}", q, a, b);
    }

    #[test]
    fn query_events_match_their_constraints(qseed in 0u64..1000, relaxed in any::<bool>(), tau in tau_strategy(3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(qseed);
        let q = random_query(&mut rng, &[1, 2, 3], 2);
        let q = if relaxed {
            TailQuery::relaxed(q.s1().clone(), q.s2().clone(), q.t().to_vec()).unwrap()
        } else {
            q
        };
        prop_assert_eq!(q.holds(&tau), constraints_hold(&q.constraints(), &tau));
    }

    #[test]
    fn canonical_queries_split_the_event(cs in prop::collection::vec(constraint_strategy(3), 1..5), tau in tau_strategy(3)) {
        let Ok(parts) = canonicalize(&cs) else { return Ok(()) };
        let hits = parts.iter().filter(|q| q.holds(&tau)).count();
        prop_assert!(hits <= 1);
        prop_assert_eq!(hits == 1, constraints_hold(&cs, &tau));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn region_masses_sum_to_one_when_every_target_is_reached(seed in 0u64..1000) {
        let m = model(seed, 5, 2);
        let total: f64 = enumerate_partitions(&[1, 2]).unwrap().iter().map(|r| region_mass(&m, r, 1e-11)).sum();
        prop_assert!((total - 1.0).abs() < 1e-6, "{}", total);
    }

    #[test]
    fn region_report_accounts_for_every_path(seed in 0u64..1000, n in 1usize..2000) {
        let m = model(seed, 5, 3);
        let rep = region_frequencies(&m, &[1, 2, 3], n, 5.0, seed).unwrap();
        prop_assert_eq!(rep.total(), n);
        prop_assert_eq!(rep.regions.values().sum::<usize>() + rep.never + rep.censored, n);
    }
}
