//! Analytic results against the Monte Carlo simulator.

mod common;

use common::{random_query, region_mass, sigma};
use nalgebra::{DMatrix, DVector, RowDVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use phasehit::expmat::{integrate, try_integrate_interval, QuadratureRule};
use phasehit::fixtures::{exponential_chain, random_model, RandomModelSpec};
use phasehit::hitting::{density_single, joint_density, post_jump_distribution, survival_single, taboo_distribution, DensityQuery};
use phasehit::mcore::{IntensityModel, StateSet, StateSpace};
use phasehit::modelfile::example_lattice_model;
use phasehit::partitions::Region;
use phasehit::simkit::{
    binned_density, estimate_constraints, estimate_equality_jump_chain, estimate_post_jump, estimate_region_prob,
    estimate_tail, estimate_taboo, region_frequencies, Simulator, TimeBox,
};
use phasehit::tails::{equality_prob, parse_constraints, raw_probability, tail_p, TailEngine};
use phasehit::Error;

const N: usize = 1_000_000;

fn within(measured: f64, expected: f64, sd: f64, k: f64) -> bool {
    (measured - expected).abs() <= k * sd
}

#[test]
fn taboo_law_matches_frequencies() {
    let m = random_model(11, &RandomModelSpec::default());
    let d = m.target(1).unwrap().clone();
    let u = 0.8;
    let law = taboo_distribution(&m, &d, u).unwrap();
    let est = estimate_taboo(&m, &d, u, N, 5).unwrap();
    for (i, e) in est.iter().enumerate() {
        let p = law[i];
        assert!(within(e.value, p, sigma(p, N).max(1.0 / N as f64), 3.0), "state {i}: {} vs {p}", e.value);
        if d.contains(i) {
            assert_eq!(e.value, 0.0);
        }
    }
}

#[test]
fn single_target_masses_add_up() {
    for seed in 0..6 {
        let spec = RandomModelSpec {
            states: 6,
            irreducible: seed % 2 == 0,
            ..Default::default()
        };
        let m = random_model(seed, &spec);
        let a = m.target(1).unwrap().clone();
        let b = m.target(2).unwrap().difference(&a);
        let rule = QuadratureRule::adaptive(1e-12);
        let mass = |x: &StateSet, y: &StateSet| {
            phasehit::expmat::try_integrate_to_infinity::<Error, _>(
                |u| Ok(DVector::from_element(1, density_single(&m, x, y, u)?)),
                0.0,
                &rule,
            )
            .unwrap()[0]
        };
        let first_a = mass(&a, &b);
        let first_b = if b.is_empty() { 0.0 } else { mass(&b, &a) };
        let never = survival_single(&m, &a.union(&b), 1e4).unwrap().survival;
        assert!((first_a + first_b + never - 1.0).abs() < 1e-6, "seed {seed}: {first_a} + {first_b} + {never}");
        // the defective part agrees with the simulator
        let est = estimate_constraints(&m, &parse_constraints("tau(1) > 1000").unwrap(), 200_000, 50.0, seed).unwrap();
        if never == 0.0 {
            assert!(est.value < 1e-3, "seed {seed}");
        }
    }
}

#[test]
fn post_jump_law_matches_binned_entries() {
    let m = random_model(4, &RandomModelSpec { states: 6, ..Default::default() });
    let a = m.target(1).unwrap().clone();
    let b = m.target(2).unwrap().difference(&a);
    let (u, h) = (0.4, 0.1);
    let rule = QuadratureRule::fixed(4);
    let weighted = try_integrate_interval::<Error, _>(
        |v| {
            let w = density_single(&m, &a, &b, v)?;
            Ok((post_jump_distribution(&m, &a, &b, v)? * w).transpose())
        },
        u,
        u + h,
        &rule,
    )
    .unwrap();
    let law = &weighted / weighted.sum();
    let (est, total) = estimate_post_jump(&m, &a, &b, u, h, N, 8).unwrap();
    assert!(total > 10_000, "{total}");
    for i in 0..m.n_states() {
        let p = law[i];
        assert!(within(est[i].value, p, sigma(p, total).max(1.0 / total as f64), 3.0), "state {i}: {} vs {p}", est[i].value);
    }
}

#[test]
fn box_mass_matches_simulated_frequency() {
    let m = random_model(21, &RandomModelSpec { states: 5, targets: 2, ..Default::default() });
    let region: Region = "{1}<{2}".parse().unwrap();
    let bin = TimeBox { lo: vec![0.2, 0.6], hi: vec![0.5, 1.0] };
    let rule = QuadratureRule::fixed(2);
    let mass = try_integrate_interval::<Error, _>(
        |x| {
            let inner = try_integrate_interval::<Error, _>(
                |y| {
                    let q = DensityQuery::from_block_times(region.clone(), &[x, y])?;
                    Ok(DVector::from_element(1, joint_density(&m, &q)?.value))
                },
                0.6,
                1.0,
                &rule,
            )?;
            Ok(inner)
        },
        0.2,
        0.5,
        &rule,
    )
    .unwrap()[0];
    let est = binned_density(&m, &region, &[bin], N, 50.0, 2).unwrap();
    assert!(within(est[0].mass.value, mass, sigma(mass, N), 3.0), "{} vs {mass}", est[0].mass.value);
}

#[test]
fn charged_initial_law_matches_simulation() {
    let spec = RandomModelSpec {
        alpha_off_targets: false,
        states: 5,
        targets: 3,
        ..Default::default()
    };
    for seed in [3, 8] {
        let m = random_model(seed, &spec);
        let engine = TailEngine::new(&m);
        for expr in ["tau(1) > 0.3 && tau(2) > 0.1", "tau(1) == tau(2)", "tau(1) != tau(3) && tau(2) > 0.5"] {
            let c = parse_constraints(expr).unwrap();
            let p = raw_probability(&engine, &c).unwrap();
            let est = estimate_constraints(&m, &c, N, 1e4, seed).unwrap();
            assert!(est.censored < 1e-4);
            assert!(within(est.value, p, sigma(p, N).max(1.0 / N as f64), 3.0), "seed {seed} `{expr}`: {} vs {p}", est.value);
        }
    }
}

#[test]
fn late_tie_on_the_lattice_model() {
    let m = example_lattice_model();
    let engine = TailEngine::new(&m);
    for t in [0.1, 0.5, 1.0] {
        let c = parse_constraints(&format!("tau(2) == tau(3) && tau(2) > {t}")).unwrap();
        let p = raw_probability(&engine, &c).unwrap();
        let est = estimate_constraints(&m, &c, N, 200.0, 17).unwrap();
        assert!(within(est.value, p, sigma(p, N), 3.0), "t={t}: {} vs {p}", est.value);
    }
}

#[test]
fn equality_probability_matches_jump_chain_paths() {
    let m = random_model(6, &RandomModelSpec { states: 6, ..Default::default() });
    let q = equality_prob(&m, 1, 2).unwrap();
    let est = estimate_equality_jump_chain(&m, 1, 2, 0, N, 100_000, 4).unwrap();
    assert_eq!(est.censored, 0.0);
    assert!(within(est.value, q[0], sigma(q[0], N).max(1.0 / N as f64), 3.0), "{} vs {}", est.value, q[0]);
}

#[test]
fn mean_holding_time() {
    let r = 2.5;
    let m = exponential_chain(r);
    let sim = Simulator::new(&m).unwrap();
    let mut sum = 0.0;
    for i in 0..N {
        let p = sim.sample_path_indexed(1e6, 9, i);
        sum += p.jump_times[1];
    }
    let mean = sum / N as f64;
    assert!(within(mean, 1.0 / r, (1.0 / r) / (N as f64).sqrt(), 3.0), "{mean}");
}

#[test]
fn random_tail_queries_match_simulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for i in 0..5 {
        let m = random_model(100 + i, &RandomModelSpec { states: 5, targets: 3, ..Default::default() });
        let q = random_query(&mut rng, &[1, 2, 3], 2);
        let p = tail_p(&m, &q).unwrap().value;
        let est = estimate_tail(&m, &q, N, 200.0, i).unwrap();
        assert!(est.censored < 1e-4);
        assert!(within(est.value, p, sigma(p, N).max(1.0 / N as f64), 3.0), "{q}: {} vs {p}", est.value);
    }
}

#[test]
fn region_probabilities_match_quadrature() {
    let m = random_model(40, &RandomModelSpec { states: 6, targets: 2, ..Default::default() });
    for text in ["{1}<{2}", "{2}<{1}", "{1,2}"] {
        let region: Region = text.parse().unwrap();
        let p = region_mass(&m, &region, 1e-11);
        let est = estimate_region_prob(&m, &region, N, 200.0, 12).unwrap();
        assert!(within(est.value, p, sigma(p, N).max(1.0 / N as f64), 3.0), "{text}: {} vs {p}", est.value);
    }
}

#[test]
fn stderr_shrinks_with_the_square_root_of_n() {
    let m = random_model(2, &RandomModelSpec::default());
    let c = parse_constraints("tau(1) > 0.5").unwrap();
    let a = estimate_constraints(&m, &c, 100_000, 50.0, 1).unwrap();
    let b = estimate_constraints(&m, &c, 400_000, 50.0, 1).unwrap();
    assert!(a.value > 0.05 && a.value < 0.95);
    let ratio = b.stderr / a.stderr;
    assert!((ratio - 0.5).abs() < 0.025, "{ratio}");
}

#[test]
fn ties_come_only_from_single_jumps() {
    // 0 → 1 → 2 and 0 → 2; target 1 = {1, 2}, target 2 = {2}
    let lambda = DMatrix::from_row_slice(3, 3, &[-3.0, 2.0, 1.0, 0.0, -4.0, 4.0, 0.0, 0.0, 0.0]);
    let targets = [(1, StateSet::from_indices(3, [1, 2])), (2, StateSet::from_indices(3, [2]))].into_iter().collect();
    let m = IntensityModel::new(StateSpace::numbered(3), lambda, targets, RowDVector::from_row_slice(&[1.0, 0.0, 0.0])).unwrap();
    let rep = region_frequencies(&m, &[1, 2], N, 100.0, 3).unwrap();
    let tie = rep.estimate(&"{1,2}".parse().unwrap());
    assert!(within(tie.value, 1.0 / 3.0, sigma(1.0 / 3.0, N), 3.0), "{}", tie.value);
    assert_eq!(rep.estimate(&"{2}<{1}".parse().unwrap()).value, 0.0);
    assert_eq!(rep.total(), N);
    let sim = Simulator::new(&m).unwrap();
    for i in 0..1000 {
        let p = sim.sample_path_indexed(100.0, 3, i);
        let tied = p.tau[&1] == p.tau[&2];
        assert_eq!(tied, p.states.get(1) == Some(&2));
    }
}

#[test]
fn integrate_helper_is_consistent_with_survival() {
    // ∫₀^T density = 1 − survival(T) for one absorbing target
    let m = exponential_chain(0.7);
    let g = m.target(1).unwrap().clone();
    let empty = StateSet::empty(2);
    let v = integrate(|u| DVector::from_element(1, density_single(&m, &g, &empty, u).unwrap()), 3.0, &QuadratureRule::adaptive(1e-12)).unwrap();
    assert!((v[0] - (1.0 - survival_single(&m, &g, 3.0).unwrap().survival)).abs() < 1e-10);
}
