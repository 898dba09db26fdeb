//! Small reference models with known answers, and seeded random models.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mcore::{IntensityModel, StateSet, StateSpace, TargetKey};

fn model(lambda: DMatrix<f64>, targets: BTreeMap<TargetKey, StateSet>, alpha: RowDVector<f64>) -> IntensityModel {
    let n = lambda.nrows();
    IntensityModel::new(StateSpace::numbered(n), lambda, targets, alpha).expect("fixture is valid")
}

/// `0 → 1` at rate `r`, target 1 = `{1}`, started at 0.
pub fn exponential_chain(r: f64) -> IntensityModel {
    let lambda = DMatrix::from_row_slice(2, 2, &[-r, r, 0.0, 0.0]);
    let targets = [(1, StateSet::from_indices(2, [1]))].into_iter().collect();
    model(lambda, targets, RowDVector::from_row_slice(&[1.0, 0.0]))
}

/// Pure-birth chain on `0..=levels` at rate `r` with target `k` = `{j ≥ k}`.
///
/// The last level absorbs. Hitting times are the first `levels` jump times
/// of a Poisson process.
pub fn pure_birth(levels: usize, r: f64) -> IntensityModel {
    let n = levels + 1;
    let mut lambda = DMatrix::zeros(n, n);
    for i in 0..levels {
        lambda[(i, i)] = -r;
        lambda[(i, i + 1)] = r;
    }
    let targets = (1..=levels)
        .map(|k| (k as TargetKey, StateSet::from_indices(n, k..n)))
        .collect();
    let mut alpha = RowDVector::zeros(n);
    alpha[0] = 1.0;
    model(lambda, targets, alpha)
}

/// Options for [`random_model`].
#[derive(Debug, Clone)]
pub struct RandomModelSpec {
    pub states: usize,
    pub targets: usize,
    /// Probability that an off-diagonal rate is nonzero.
    pub density: f64,
    pub max_rate: f64,
    /// Zero every rate leaving a target set.
    pub absorbing: bool,
    /// Keep the initial law off the union of the targets.
    pub alpha_off_targets: bool,
    /// Force a cycle through all states so that every state is reachable.
    pub irreducible: bool,
}

impl Default for RandomModelSpec {
    fn default() -> Self {
        RandomModelSpec {
            states: 5,
            targets: 2,
            density: 0.6,
            max_rate: 3.0,
            absorbing: false,
            alpha_off_targets: true,
            irreducible: true,
        }
    }
}

/// A seeded random model. Target `k` (keys `1..=targets`) is a random
/// nonempty set avoiding state 0, so the initial law can always sit off the
/// targets.
pub fn random_model(seed: u64, spec: &RandomModelSpec) -> IntensityModel {
    assert!(spec.states >= 2, "need a free state and a target state");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.states;
    let mut targets = BTreeMap::new();
    for k in 1..=spec.targets {
        let mut set = StateSet::empty(n);
        for i in 1..n {
            if rng.gen_bool(0.35) {
                set.insert(i);
            }
        }
        if set.is_empty() {
            set.insert(rng.gen_range(1..n));
        }
        targets.insert(k as TargetKey, set);
    }
    let union = targets.values().fold(StateSet::empty(n), |acc, s| acc.union(s));
    let mut lambda = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen_bool(spec.density) {
                lambda[(i, j)] = rng.gen_range(0.1..spec.max_rate);
            }
        }
    }
    if spec.irreducible {
        for i in 0..n {
            let j = (i + 1) % n;
            if lambda[(i, j)] == 0.0 {
                lambda[(i, j)] = rng.gen_range(0.1..spec.max_rate);
            }
        }
    }
    if spec.absorbing {
        for i in union.iter() {
            for j in 0..n {
                let stays = targets.values().all(|g| !g.contains(i) || g.contains(j));
                if !stays {
                    lambda[(i, j)] = 0.0;
                }
            }
        }
    }
    for i in 0..n {
        lambda[(i, i)] = 0.0;
        let s: f64 = lambda.row(i).sum();
        lambda[(i, i)] = -s;
    }
    let mut alpha = RowDVector::zeros(n);
    for i in 0..n {
        if !(spec.alpha_off_targets && union.contains(i)) {
            alpha[i] = rng.gen_range(0.0..1.0);
        }
    }
    alpha[0] += 0.1;
    let total = alpha.sum();
    alpha /= total;
    model(lambda, targets, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_models_are_valid_and_reproducible() {
        for seed in 0..20 {
            let spec = RandomModelSpec {
                absorbing: seed % 2 == 0,
                ..RandomModelSpec::default()
            };
            let a = random_model(seed, &spec);
            let b = random_model(seed, &spec);
            assert_eq!(a.lambda(), b.lambda());
            assert_eq!(a.alpha_mass(&a.union_of(a.targets().keys()).unwrap()), 0.0);
            if spec.absorbing {
                for g in a.targets().values() {
                    assert!(a.is_absorbing(g));
                }
            }
        }
    }

    #[test]
    fn pure_birth_targets_are_nested() {
        let m = pure_birth(3, 2.0);
        assert_eq!(m.target(1).unwrap().indices(), vec![1, 2, 3]);
        assert_eq!(m.target(3).unwrap().indices(), vec![3]);
        assert!(m.is_absorbing(m.target(2).unwrap()));
    }
}
