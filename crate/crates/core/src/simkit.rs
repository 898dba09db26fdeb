//! Monte Carlo simulation of the chain and empirical estimators.
//!
//! Path `i` of a run with seed `s` draws from ChaCha8 seeded with `s` on
//! stream `i`, so estimates do not depend on the number of worker threads.
//! A path stops at the horizon, or as soon as no unhit target can still be
//! reached; in the second case the remaining hitting times are exactly `∞`.
//! Paths stopped at the horizon with an unhit, reachable target are
//! *censored* and record `∞` for it.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mcore::{IntensityModel, StateSet, TargetKey};
use crate::partitions::{Region, SubPartition};
use crate::tails::{constraints_hold, Constraint, TailQuery};

/// One simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    /// Entry time of each visited state; `jump_times[0] = 0`.
    pub jump_times: Vec<f64>,
    pub states: Vec<usize>,
    /// Hitting time per target, `f64::INFINITY` if not hit.
    pub tau: BTreeMap<TargetKey, f64>,
    pub horizon: f64,
    pub censored: bool,
}

/// A frequency estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
    pub seed: u64,
    /// Fraction of paths cut off at the horizon with a reachable target unhit.
    pub censored: f64,
}

impl EmpiricalEstimate {
    fn frequency(hits: usize, censored: usize, n: usize, seed: u64) -> Self {
        let value = hits as f64 / n as f64;
        EmpiricalEstimate {
            value,
            stderr: (value * (1.0 - value) / n as f64).sqrt(),
            n,
            seed,
            censored: censored as f64 / n as f64,
        }
    }

    /// Whether `x` lies within `k` standard errors, with a floor of `floor`
    /// on the standard error for frequencies near 0 or 1.
    pub fn agrees_with(&self, x: f64, k: f64, floor: f64) -> bool {
        (self.value - x).abs() <= k * self.stderr.max(floor)
    }
}

/// `20 / (smallest positive total jump rate)`, or 1 when nothing moves.
pub fn default_horizon(model: &IntensityModel) -> f64 {
    let lambda = model.lambda();
    let slowest = (0..model.n_states())
        .map(|i| -lambda[(i, i)])
        .filter(|&r| r > 0.0)
        .fold(f64::INFINITY, f64::min);
    if slowest.is_finite() {
        20.0 / slowest
    } else {
        1.0
    }
}

fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn check_run(n: usize, horizon: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::domain("sample count must be positive"));
    }
    if !(horizon > 0.0) {
        return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
    }
    Ok(())
}

/// Precomputed jump tables for fast simulation.
pub struct Simulator<'m> {
    model: &'m IntensityModel,
    keys: Vec<TargetKey>,
    membership: Vec<u64>,
    reachable: Vec<u64>,
    exit_rate: Vec<f64>,
    jumps: Vec<Vec<(usize, f64)>>,
    start: Vec<(usize, f64)>,
}

fn cumulative<I: IntoIterator<Item = (usize, f64)>>(weights: I) -> Vec<(usize, f64)> {
    let mut acc = 0.0;
    weights
        .into_iter()
        .filter(|&(_, w)| w > 0.0)
        .map(|(j, w)| {
            acc += w;
            (j, acc)
        })
        .collect()
}

fn draw(table: &[(usize, f64)], rng: &mut ChaCha8Rng) -> usize {
    let total = table.last().expect("nonempty table").1;
    let u = rng.gen::<f64>() * total;
    let idx = table.partition_point(|&(_, c)| c <= u);
    table[idx.min(table.len() - 1)].0
}

/// Outcome of one path when only the hitting times are needed.
struct Hits {
    tau: Vec<f64>,
    censored: bool,
}

impl<'m> Simulator<'m> {
    pub fn new(model: &'m IntensityModel) -> Result<Self> {
        let keys = model.target_keys();
        if keys.len() > 64 {
            return Err(Error::domain("the simulator supports at most 64 targets"));
        }
        let n = model.n_states();
        let lambda = model.lambda();
        let membership: Vec<u64> = (0..n)
            .map(|i| {
                keys.iter()
                    .enumerate()
                    .filter(|(_, k)| model.targets()[k].contains(i))
                    .fold(0u64, |m, (b, _)| m | (1 << b))
            })
            .collect();
        let exit_rate: Vec<f64> = (0..n).map(|i| (-lambda[(i, i)]).max(0.0)).collect();
        let jumps: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| cumulative((0..n).filter(|&j| j != i).map(|j| (j, lambda[(i, j)]))))
            .collect();
        // targets reachable from each state, itself included
        let mut reachable = membership.clone();
        loop {
            let mut changed = false;
            for i in 0..n {
                let mut r = reachable[i];
                for &(j, _) in &jumps[i] {
                    r |= reachable[j];
                }
                if r != reachable[i] {
                    reachable[i] = r;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let start = cumulative(model.alpha().iter().copied().enumerate());
        if start.is_empty() {
            return Err(Error::domain("initial distribution has no mass"));
        }
        Ok(Simulator {
            model,
            keys,
            membership,
            reachable,
            exit_rate,
            jumps,
            start,
        })
    }

    pub fn model(&self) -> &IntensityModel {
        self.model
    }

    pub fn keys(&self) -> &[TargetKey] {
        &self.keys
    }

    fn all_bits(&self) -> u64 {
        if self.keys.len() == 64 {
            u64::MAX
        } else {
            (1u64 << self.keys.len()) - 1
        }
    }

    fn run(&self, horizon: f64, rng: &mut ChaCha8Rng, mut visit: impl FnMut(f64, usize)) -> Hits {
        let mut tau = vec![f64::INFINITY; self.keys.len()];
        let mut state = draw(&self.start, rng);
        visit(0.0, state);
        let mut hit = 0u64;
        let mark = |hit: &mut u64, tau: &mut [f64], state: usize, t: f64| {
            let fresh = self.membership[state] & !*hit;
            if fresh != 0 {
                for (b, slot) in tau.iter_mut().enumerate() {
                    if fresh & (1 << b) != 0 {
                        *slot = t;
                    }
                }
                *hit |= fresh;
            }
        };
        mark(&mut hit, &mut tau, state, 0.0);
        let all = self.all_bits();
        let mut t = 0.0;
        loop {
            // with no targets at all, run to the horizon
            if !self.keys.is_empty() && (hit == all || self.reachable[state] & !hit == 0) {
                return Hits { tau, censored: false };
            }
            if self.exit_rate[state] == 0.0 {
                return Hits { tau, censored: false };
            }
            let e: f64 = rng.sample(Exp1);
            t += e / self.exit_rate[state];
            if t > horizon {
                return Hits { tau, censored: true };
            }
            state = draw(&self.jumps[state], rng);
            visit(t, state);
            mark(&mut hit, &mut tau, state, t);
        }
    }

    fn tau_map(&self, tau: &[f64]) -> BTreeMap<TargetKey, f64> {
        self.keys.iter().copied().zip(tau.iter().copied()).collect()
    }

    /// Path number `index` of a run seeded with `seed`.
    pub fn sample_path_indexed(&self, horizon: f64, seed: u64, index: usize) -> PathSample {
        let mut rng = path_rng(seed, index);
        let mut jump_times = Vec::new();
        let mut states = Vec::new();
        let hits = self.run(horizon, &mut rng, |t, s| {
            jump_times.push(t);
            states.push(s);
        });
        PathSample {
            jump_times,
            states,
            tau: self.tau_map(&hits.tau),
            horizon,
            censored: hits.censored,
        }
    }

    /// Counts paths whose hitting times satisfy `pred`; returns `(hits, censored)`.
    pub fn count<F>(&self, n: usize, horizon: f64, seed: u64, pred: F) -> (usize, usize)
    where
        F: Fn(&BTreeMap<TargetKey, f64>) -> bool + Sync,
    {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = path_rng(seed, i);
                let hits = self.run(horizon, &mut rng, |_, _| {});
                let tau = self.tau_map(&hits.tau);
                (pred(&tau) as usize, hits.censored as usize)
            })
            .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
    }

    pub fn estimate<F>(&self, n: usize, horizon: f64, seed: u64, pred: F) -> Result<EmpiricalEstimate>
    where
        F: Fn(&BTreeMap<TargetKey, f64>) -> bool + Sync,
    {
        check_run(n, horizon)?;
        let (hits, censored) = self.count(n, horizon, seed, pred);
        Ok(EmpiricalEstimate::frequency(hits, censored, n, seed))
    }
}

/// One exact CTMC path, reproducible from `seed`.
pub fn sample_path(model: &IntensityModel, horizon: f64, seed: u64) -> Result<PathSample> {
    check_run(1, horizon)?;
    Ok(Simulator::new(model)?.sample_path_indexed(horizon, seed, 0))
}

/// Whether `tau` (restricted to the region's keys) lies in `region`.
pub fn in_region(region: &Region, tau: &BTreeMap<TargetKey, f64>) -> bool {
    let mut previous = f64::NEG_INFINITY;
    for block in region.partition().blocks() {
        let v = tau.get(&block[0]).copied().unwrap_or(f64::INFINITY);
        if !v.is_finite() || v <= previous || block.iter().any(|k| tau.get(k).copied() != Some(v)) {
            return false;
        }
        previous = v;
    }
    true
}

/// Frequency of `τ ∈ R_s` over `n` paths.
pub fn estimate_region_prob(
    model: &IntensityModel,
    region: &Region,
    n: usize,
    horizon: f64,
    seed: u64,
) -> Result<EmpiricalEstimate> {
    let sim = Simulator::new(model)?;
    for k in region.keys() {
        model.target(k)?;
    }
    sim.estimate(n, horizon, seed, |tau| in_region(region, tau))
}

/// Region counts over the targets `keys`; every path is counted exactly once
/// in `regions`, `never` (some τ exactly ∞) or `censored`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionReport {
    pub n: usize,
    pub seed: u64,
    pub regions: BTreeMap<Region, usize>,
    pub never: usize,
    pub censored: usize,
}

impl RegionReport {
    pub fn estimate(&self, region: &Region) -> EmpiricalEstimate {
        let hits = self.regions.get(region).copied().unwrap_or(0);
        EmpiricalEstimate::frequency(hits, self.censored, self.n, self.seed)
    }

    pub fn total(&self) -> usize {
        self.regions.values().sum::<usize>() + self.never + self.censored
    }
}

/// Ranks of the times, with ties sharing a rank; `None` if any is infinite.
fn pattern(tau: &[f64]) -> Option<Vec<u8>> {
    if tau.iter().any(|t| !t.is_finite()) {
        return None;
    }
    let mut distinct: Vec<f64> = tau.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    Some(
        tau.iter()
            .map(|t| distinct.partition_point(|d| d < t) as u8)
            .collect(),
    )
}

pub fn region_frequencies(
    model: &IntensityModel,
    keys: &[TargetKey],
    n: usize,
    horizon: f64,
    seed: u64,
) -> Result<RegionReport> {
    check_run(n, horizon)?;
    let sim = Simulator::new(model)?;
    let positions: Vec<usize> = keys
        .iter()
        .map(|k| sim.keys.iter().position(|j| j == k).ok_or(Error::Model(crate::mcore::ModelError::UnknownTarget(*k))))
        .collect::<Result<_>>()?;
    let (counts, never, censored) = (0..n)
        .into_par_iter()
        .fold(
            || (HashMap::<Vec<u8>, usize>::new(), 0usize, 0usize),
            |(mut counts, mut never, mut censored), i| {
                let mut rng = path_rng(seed, i);
                let hits = sim.run(horizon, &mut rng, |_, _| {});
                let tau: Vec<f64> = positions.iter().map(|&p| hits.tau[p]).collect();
                match pattern(&tau) {
                    Some(p) => *counts.entry(p).or_insert(0) += 1,
                    None if hits.censored => censored += 1,
                    None => never += 1,
                }
                (counts, never, censored)
            },
        )
        .reduce(
            || (HashMap::new(), 0, 0),
            |(mut a, an, ac), (b, bn, bc)| {
                for (k, v) in b {
                    *a.entry(k).or_insert(0) += v;
                }
                (a, an + bn, ac + bc)
            },
        );
    let mut regions = BTreeMap::new();
    for (ranks, count) in counts {
        let blocks = (0..=*ranks.iter().max().unwrap_or(&0)).map(|r| {
            keys.iter()
                .zip(&ranks)
                .filter(|(_, &q)| q == r)
                .map(|(&k, _)| k)
                .collect::<Vec<_>>()
        });
        let region = Region::over_own_keys(SubPartition::new(blocks)?);
        regions.insert(region, count);
    }
    Ok(RegionReport {
        n,
        seed,
        regions,
        never,
        censored,
    })
}

/// Frequency of a canonical tail event, evaluated per path with [`TailQuery::holds`].
pub fn estimate_tail(model: &IntensityModel, q: &TailQuery, n: usize, horizon: f64, seed: u64) -> Result<EmpiricalEstimate> {
    for k in q.keys() {
        model.target(k)?;
    }
    Simulator::new(model)?.estimate(n, horizon, seed, |tau| q.holds(tau))
}

/// Frequency of a raw conjunction of constraints.
pub fn estimate_constraints(
    model: &IntensityModel,
    constraints: &[Constraint],
    n: usize,
    horizon: f64,
    seed: u64,
) -> Result<EmpiricalEstimate> {
    Simulator::new(model)?.estimate(n, horizon, seed, |tau| constraints_hold(constraints, tau))
}

/// An axis-aligned box `[lo, hi)` in the block-time coordinates of a region.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl TimeBox {
    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *l <= *v && *v < *h)
    }

    fn overlaps(&self, other: &TimeBox) -> bool {
        (0..self.lo.len()).all(|d| self.lo[d] < other.hi[d] && other.lo[d] < self.hi[d])
    }
}

/// Histogram estimate of the density over one box.
#[derive(Debug, Clone, PartialEq)]
pub struct BinEstimate {
    pub bin: TimeBox,
    /// Fraction of paths with `τ ∈ R_s` and block times in the box.
    pub mass: EmpiricalEstimate,
    pub density: f64,
    pub density_stderr: f64,
}

/// Histogram of `τ` over boxes in the block-time chart of `region`. Boxes
/// must be disjoint, have positive volume and lie in the ordered cone
/// (`hi_n ≤ lo_{n+1}`), so each is a subset of the region's chart.
pub fn binned_density(
    model: &IntensityModel,
    region: &Region,
    boxes: &[TimeBox],
    n: usize,
    horizon: f64,
    seed: u64,
) -> Result<Vec<BinEstimate>> {
    check_run(n, horizon)?;
    let dim = region.len();
    for b in boxes {
        if b.lo.len() != dim || b.hi.len() != dim {
            return Err(Error::inconsistent(format!("box dimension must be {dim}")));
        }
        if b.lo.iter().chain(&b.hi).any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::domain("box corners must be finite and nonnegative"));
        }
        if !(b.volume() > 0.0) || b.lo.iter().zip(&b.hi).any(|(l, h)| !(h > l)) {
            return Err(Error::domain("box has zero volume"));
        }
        if (1..dim).any(|d| b.hi[d - 1] > b.lo[d]) {
            return Err(Error::domain("box leaves the ordered cone of block times"));
        }
    }
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            if boxes[i].overlaps(&boxes[j]) {
                return Err(Error::domain(format!("boxes {i} and {j} overlap")));
            }
        }
    }
    let sim = Simulator::new(model)?;
    for k in region.keys() {
        model.target(k)?;
    }
    let firsts: Vec<TargetKey> = region.partition().blocks().iter().map(|b| b[0]).collect();
    let (counts, censored) = (0..n)
        .into_par_iter()
        .fold(
            || (vec![0usize; boxes.len()], 0usize),
            |(mut counts, mut censored), i| {
                let mut rng = path_rng(seed, i);
                let hits = sim.run(horizon, &mut rng, |_, _| {});
                censored += hits.censored as usize;
                let tau = sim.tau_map(&hits.tau);
                if in_region(region, &tau) {
                    let x: Vec<f64> = firsts.iter().map(|k| tau[k]).collect();
                    if let Some(b) = boxes.iter().position(|b| b.contains(&x)) {
                        counts[b] += 1;
                    }
                }
                (counts, censored)
            },
        )
        .reduce(
            || (vec![0; boxes.len()], 0),
            |(mut a, ac), (b, bc)| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                (a, ac + bc)
            },
        );
    Ok(boxes
        .iter()
        .zip(counts)
        .map(|(b, c)| {
            let mass = EmpiricalEstimate::frequency(c, censored, n, seed);
            let vol = b.volume();
            BinEstimate {
                bin: b.clone(),
                mass,
                density: mass.value / vol,
                density_stderr: mass.stderr / vol,
            }
        })
        .collect())
}

/// Per-state frequency of `X_u` on paths that avoid `d` on `[0, u]`.
pub fn estimate_taboo(model: &IntensityModel, d: &StateSet, u: f64, n: usize, seed: u64) -> Result<Vec<EmpiricalEstimate>> {
    check_run(n, 1.0)?;
    if !(u >= 0.0 && u.is_finite()) {
        return Err(Error::domain(format!("time must be finite and nonnegative, got {u}")));
    }
    // simulate without targets so paths run to `u`
    let free = IntensityModel::new(
        model.space().clone(),
        model.lambda().clone(),
        BTreeMap::new(),
        model.alpha().clone(),
    )?;
    let sim = Simulator::new(&free)?;
    let states = model.n_states();
    let counts = (0..n)
        .into_par_iter()
        .fold(
            || vec![0usize; states],
            |mut counts, i| {
                let mut rng = path_rng(seed, i);
                let mut last = 0;
                let mut avoided = true;
                sim.run(u, &mut rng, |_, s| {
                    last = s;
                    avoided &= !d.contains(s);
                });
                if avoided {
                    counts[last] += 1;
                }
                counts
            },
        )
        .reduce(
            || vec![0; states],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    Ok(counts
        .into_iter()
        .map(|c| EmpiricalEstimate::frequency(c, 0, n, seed))
        .collect())
}

/// Law of the entry state into `a`, over paths that enter `a ∪ b` first
/// through `a` at a time in `[u, u + h)`. Returns the per-state frequencies
/// within that event and the number of paths in it.
pub fn estimate_post_jump(
    model: &IntensityModel,
    a: &StateSet,
    b: &StateSet,
    u: f64,
    h: f64,
    n: usize,
    seed: u64,
) -> Result<(Vec<EmpiricalEstimate>, usize)> {
    check_run(n, u + h)?;
    let d = a.union(b);
    let exit = IntensityModel::new(
        model.space().clone(),
        model.lambda().clone(),
        [(0, d)].into_iter().collect(),
        model.alpha().clone(),
    )?;
    let sim = Simulator::new(&exit)?;
    let states = model.n_states();
    let counts = (0..n)
        .into_par_iter()
        .fold(
            || vec![0usize; states],
            |mut counts, i| {
                let mut rng = path_rng(seed, i);
                let mut last = 0;
                let hits = sim.run(u + h, &mut rng, |_, s| last = s);
                let t = hits.tau[0];
                if t >= u && t < u + h && a.contains(last) {
                    counts[last] += 1;
                }
                counts
            },
        )
        .reduce(
            || vec![0; states],
            |mut x, y| {
                for (p, q) in x.iter_mut().zip(y) {
                    *p += q;
                }
                x
            },
        );
    let total: usize = counts.iter().sum();
    let m = total.max(1);
    Ok((
        counts
            .into_iter()
            .map(|c| EmpiricalEstimate::frequency(c, 0, m, seed))
            .collect(),
        total,
    ))
}

/// Frequency of "the jump chain enters both targets at the same step" over
/// `n` discrete-time paths of at most `max_steps` steps.
pub fn estimate_equality_jump_chain(
    model: &IntensityModel,
    k1: TargetKey,
    k2: TargetKey,
    start: usize,
    n: usize,
    max_steps: usize,
    seed: u64,
) -> Result<EmpiricalEstimate> {
    check_run(n, 1.0)?;
    let g1 = model.target(k1)?.clone();
    let g2 = model.target(k2)?.clone();
    let (chain, _) = crate::tails::embedded_chain(model);
    let states = model.n_states();
    let tables: Vec<Vec<(usize, f64)>> = (0..states)
        .map(|i| cumulative((0..states).map(|j| (j, chain[(i, j)]))))
        .collect();
    let (hits, censored) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let mut s = start;
            for _ in 0..=max_steps {
                let (in1, in2) = (g1.contains(s), g2.contains(s));
                if in1 || in2 {
                    return ((in1 && in2) as usize, 0);
                }
                if tables[s].len() == 1 && tables[s][0].0 == s {
                    return (0, 0);
                }
                s = draw(&tables[s], &mut rng);
            }
            (0, 1)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(EmpiricalEstimate::frequency(hits, censored, n, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{exponential_chain, random_model, RandomModelSpec};

    #[test]
    fn path_invariants_and_reproducibility() {
        let m = random_model(1, &RandomModelSpec { alpha_off_targets: false, ..Default::default() });
        let sim = Simulator::new(&m).unwrap();
        for i in 0..200 {
            let p = sim.sample_path_indexed(10.0, 42, i);
            assert_eq!(p, sim.sample_path_indexed(10.0, 42, i));
            assert_eq!(p.jump_times[0], 0.0);
            assert!(p.jump_times.windows(2).all(|w| w[0] < w[1]));
            assert!(p.states.windows(2).all(|w| w[0] != w[1]));
            for (k, &t) in &p.tau {
                let g = m.target(*k).unwrap();
                let first = p.states.iter().position(|&s| g.contains(s));
                match first {
                    Some(idx) => assert_eq!(t, p.jump_times[idx]),
                    None => assert_eq!(t, f64::INFINITY),
                }
            }
        }
        assert_ne!(sample_path(&m, 10.0, 1).unwrap(), sample_path(&m, 10.0, 2).unwrap());
    }

    #[test]
    fn absorbing_chain_has_at_most_one_jump() {
        let m = exponential_chain(2.0);
        for seed in 0..50 {
            let p = sample_path(&m, 100.0, seed).unwrap();
            assert!(p.states.len() <= 2);
            assert!(!p.censored);
        }
    }

    #[test]
    fn exponential_tail_frequency() {
        let r = 1.3;
        let m = exponential_chain(r);
        let q = TailQuery::distinct("{1}".parse().unwrap(), SubPartition::empty(), vec![0.5]).unwrap();
        let est = estimate_tail(&m, &q, 200_000, 50.0, 7).unwrap();
        assert!(est.agrees_with((-r * 0.5f64).exp(), 4.0, 0.0), "{est:?}");
    }

    #[test]
    fn region_report_is_total() {
        let m = random_model(2, &RandomModelSpec { targets: 3, irreducible: false, ..Default::default() });
        let rep = region_frequencies(&m, &[1, 2, 3], 20_000, 3.0, 9).unwrap();
        assert_eq!(rep.total(), rep.n);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let m = random_model(3, &RandomModelSpec::default());
        let region: Region = "{1} < {2}".parse().unwrap();
        let a = estimate_region_prob(&m, &region, 5000, 20.0, 3).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| estimate_region_prob(&m, &region, 5000, 20.0, 3).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn box_validation() {
        let m = random_model(3, &RandomModelSpec::default());
        let region: Region = "{1} < {2}".parse().unwrap();
        let bad = [
            TimeBox { lo: vec![0.0, 1.0], hi: vec![1.0, 1.0] },
            TimeBox { lo: vec![0.0, 0.5], hi: vec![1.0, 2.0] },
            TimeBox { lo: vec![0.0], hi: vec![1.0] },
        ];
        for b in bad {
            assert!(binned_density(&m, &region, &[b], 10, 5.0, 1).is_err());
        }
        let overlapping = [
            TimeBox { lo: vec![0.0, 1.0], hi: vec![1.0, 2.0] },
            TimeBox { lo: vec![0.5, 1.5], hi: vec![1.0, 2.5] },
        ];
        assert!(binned_density(&m, &region, &overlapping, 10, 5.0, 1).is_err());
    }

    #[test]
    fn default_horizon_examples() {
        assert_eq!(default_horizon(&exponential_chain(4.0)), 5.0);
    }
}
