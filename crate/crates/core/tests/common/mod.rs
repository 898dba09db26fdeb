#![allow(dead_code)]

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use phasehit::expmat::{expm_apply, try_integrate_to_infinity, QuadratureRule};
use phasehit::mcore::{mask, IntensityModel, TargetKey};
use phasehit::partitions::{waiting_target_sets, Region, SubPartition};
use phasehit::tails::TailQuery;
use phasehit::Error;

/// `P(τ ∈ R_s)` by integrating the density over the gaps between block
/// times one at a time; the integrand factorizes, so each stage is a 1-D
/// quadrature of a row vector.
pub fn region_mass(model: &IntensityModel, region: &Region, tol: f64) -> f64 {
    let rule = QuadratureRule::adaptive(tol);
    let sets = waiting_target_sets(model, region.partition()).unwrap();
    let mut v = model.alpha().clone();
    for (wait, target) in &sets {
        if target.is_empty() {
            return 0.0;
        }
        let a = mask(model, wait, wait).unwrap().into_matrix();
        let start = v.clone();
        let integral = try_integrate_to_infinity::<Error, _>(
            |g| Ok(expm_apply(&start, &a, g)?.transpose()),
            0.0,
            &rule,
        )
        .unwrap();
        v = integral.transpose() * mask(model, wait, target).unwrap().matrix();
    }
    v.sum()
}

/// Uniform random set partition of `keys` as a list of blocks.
pub fn random_blocks(rng: &mut ChaCha8Rng, keys: &[TargetKey]) -> Vec<Vec<TargetKey>> {
    let mut blocks: Vec<Vec<TargetKey>> = Vec::new();
    for &k in keys {
        let i = rng.gen_range(0..=blocks.len());
        if i == blocks.len() {
            blocks.push(vec![k]);
        } else {
            blocks[i].push(k);
        }
    }
    blocks
}

/// A random distinct tail query over `keys` with at most `max_s2` untimed blocks.
pub fn random_query(rng: &mut ChaCha8Rng, keys: &[TargetKey], max_s2: usize) -> TailQuery {
    let mut blocks = random_blocks(rng, keys);
    let n2 = rng.gen_range(0..=max_s2.min(blocks.len()));
    let s2: Vec<Vec<TargetKey>> = blocks.split_off(blocks.len() - n2);
    let mut t: Vec<f64> = (0..blocks.len()).map(|_| rng.gen_range(0.0..1.5)).collect();
    t.sort_by(f64::total_cmp);
    TailQuery::distinct(SubPartition::new(blocks).unwrap(), SubPartition::new(s2).unwrap(), t).unwrap()
}

pub fn sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

pub fn dvec(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}
