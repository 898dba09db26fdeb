//! Densities of first hitting times.
//!
//! Every product formula is evaluated as a single row vector pushed through
//! alternating exponential actions and masked rate matrices, left to right.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, RowDVector};

use crate::error::{Error, Result};
use crate::expmat::{expm_apply, ExpmWorkspace};
use crate::mcore::{mask, IntensityModel, StateSet, TargetKey};
use crate::partitions::{
    block_intersection, classify, union_targets, waiting_target_sets, Region, SubPartition, TimeVector,
};

fn check_alpha_off(model: &IntensityModel, set: &StateSet) -> Result<()> {
    let mass = model.alpha_mass(set);
    if mass > 0.0 {
        return Err(Error::InitialMassOnTargets { mass });
    }
    Ok(())
}

/// `α e^{uλ(d^c)}`: the law of `X_u` restricted to paths that avoid `d` on `[0, u]`.
pub fn taboo_distribution(model: &IntensityModel, d: &StateSet, u: f64) -> Result<RowDVector<f64>> {
    check_alpha_off(model, d)?;
    let free = d.complement();
    Ok(expm_apply(model.alpha(), mask(model, &free, &free)?.matrix(), u)?)
}

/// `P(τ_d > u)` together with the atom `P(τ_d = 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleSurvival {
    pub survival: f64,
    pub immediate: f64,
}

/// Survival of `τ_d`; mass that `α` puts on `d` is reported as the atom at 0.
pub fn survival_single(model: &IntensityModel, d: &StateSet, u: f64) -> Result<SingleSurvival> {
    let free = d.complement();
    let mut start = model.alpha().clone();
    for i in d.iter() {
        start[i] = 0.0;
    }
    let survival = expm_apply(&start, mask(model, &free, &free)?.matrix(), u)?.sum();
    Ok(SingleSurvival {
        survival,
        immediate: model.alpha_mass(d),
    })
}

fn single_entry_vector(model: &IntensityModel, a: &StateSet, b: &StateSet, u: f64) -> Result<RowDVector<f64>> {
    if a.is_empty() {
        return Err(Error::domain("target set must be nonempty"));
    }
    if !a.is_disjoint(b) {
        return Err(Error::Overlap);
    }
    let d = a.union(b);
    check_alpha_off(model, &d)?;
    let free = d.complement();
    let p = expm_apply(model.alpha(), mask(model, &free, &free)?.matrix(), u)?;
    Ok(p * mask(model, &free, a)?.matrix())
}

/// Density of `τ_a` at `u` on the event that `b` is avoided before `τ_a`.
pub fn density_single(model: &IntensityModel, a: &StateSet, b: &StateSet, u: f64) -> Result<f64> {
    Ok(single_entry_vector(model, a, b, u)?.sum().max(0.0))
}

/// Law of `X_{τ_a}` given `τ_a = u` and that `b` was avoided; zero outside `a`.
pub fn post_jump_distribution(
    model: &IntensityModel,
    a: &StateSet,
    b: &StateSet,
    u: f64,
) -> Result<RowDVector<f64>> {
    let entry = single_entry_vector(model, a, b, u)?;
    let total = entry.sum();
    if !(total > 0.0) {
        return Err(Error::NullConditioning);
    }
    Ok(entry / total)
}

/// Arguments of a joint density evaluation. Without a region, the region is
/// read off the ties and ranking of `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityQuery {
    pub t: TimeVector,
    pub region: Option<Region>,
}

impl DensityQuery {
    pub fn new(t: TimeVector) -> Self {
        DensityQuery { t, region: None }
    }

    pub fn in_region(t: TimeVector, region: Region) -> Self {
        DensityQuery {
            t,
            region: Some(region),
        }
    }

    /// Block times `t̄` for a region: every key in block `n` gets `times[n]`.
    pub fn from_block_times(region: Region, times: &[f64]) -> Result<Self> {
        if times.len() != region.len() {
            return Err(Error::inconsistent(format!(
                "{} block times for a region with {} blocks",
                times.len(),
                region.len()
            )));
        }
        let entries = region
            .partition()
            .blocks()
            .iter()
            .zip(times)
            .flat_map(|(b, &v)| b.iter().map(move |&k| (k, v)));
        let t = TimeVector::new(entries)?;
        Ok(DensityQuery::in_region(t, region))
    }

    /// The region and block times after consistency checks.
    pub fn resolve(&self) -> Result<(Region, Vec<f64>)> {
        let region = match &self.region {
            Some(r) => {
                let want: BTreeSet<_> = r.keys().into_iter().collect();
                let got: BTreeSet<_> = self.t.keys().into_iter().collect();
                if want != got {
                    return Err(Error::inconsistent("time vector and region mention different targets"));
                }
                r.clone()
            }
            None => classify(&self.t),
        };
        if region.is_empty() {
            return Err(Error::domain("density query needs at least one target"));
        }
        let times = self.t.block_times(region.partition())?;
        if !times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::inconsistent(format!("times are not ranked as in region {region}")));
        }
        if let Some((k, _)) = self.t.iter().find(|&(_, v)| v <= 0.0) {
            return Err(Error::domain(format!("hitting time of target {k} must be positive")));
        }
        Ok((region, times))
    }
}

/// A density value and the region whose `|s|`-dimensional Lebesgue measure it refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityValue {
    pub value: f64,
    pub region: Region,
    pub reference_dimension: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exponent {
    Masked,
    Full,
}

/// Zeroes the entries of `v = v₀ e^{Gt}` at states that `G` cannot reach
/// from `support`; they are zero exactly and only carry rounding noise.
fn clear_unreachable(v: &mut RowDVector<f64>, support: &[usize], generator: &DMatrix<f64>) {
    let n = v.len();
    let mut seen = vec![false; n];
    let mut stack = support.to_vec();
    for &i in support {
        seen[i] = true;
    }
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if !seen[j] && generator[(i, j)] != 0.0 {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    for (i, x) in v.iter_mut().enumerate() {
        if !seen[i] {
            *x = 0.0;
        }
    }
}

fn product_formula(
    model: &IntensityModel,
    ws: Option<&ExpmWorkspace>,
    sets: &[(StateSet, StateSet)],
    times: &[f64],
    exponent: Exponent,
) -> Result<f64> {
    if sets.iter().any(|(_, t)| t.is_empty()) {
        return Ok(0.0);
    }
    let mut v = model.alpha().clone();
    let mut previous = 0.0;
    for ((wait, target), &t) in sets.iter().zip(times) {
        let support: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
        let generator = match exponent {
            Exponent::Masked => mask(model, wait, wait)?.into_matrix(),
            Exponent::Full => model.lambda().clone(),
        };
        let gap = t - previous;
        v = match ws {
            Some(ws) => ws.apply(&v, &generator, gap)?,
            None => expm_apply(&v, &generator, gap)?,
        };
        clear_unreachable(&mut v, &support, &generator);
        v = &v * mask(model, wait, target)?.matrix();
        if v.iter().all(|&x| x == 0.0) {
            return Ok(0.0);
        }
        previous = t;
    }
    Ok(v.sum().max(0.0))
}

fn prepare(model: &IntensityModel, q: &DensityQuery) -> Result<(Region, Vec<f64>)> {
    let (region, times) = q.resolve()?;
    check_alpha_off(model, &union_targets(model, region.partition())?)?;
    Ok((region, times))
}

fn value(region: Region, value: f64) -> DensityValue {
    let reference_dimension = region.len();
    DensityValue {
        value,
        region,
        reference_dimension,
    }
}

/// Joint density of `(τ_k)` over the keys of `q.t` at `q.t`.
pub fn joint_density(model: &IntensityModel, q: &DensityQuery) -> Result<DensityValue> {
    joint_density_in(None, model, q)
}

/// [`joint_density`] with exponential factors memoized in `ws`.
pub fn joint_density_in(ws: Option<&ExpmWorkspace>, model: &IntensityModel, q: &DensityQuery) -> Result<DensityValue> {
    let (region, times) = prepare(model, q)?;
    let sets = waiting_target_sets(model, region.partition())?;
    let v = product_formula(model, ws, &sets, &times, Exponent::Masked)?;
    Ok(value(region, v))
}

fn check_absorbing(model: &IntensityModel, keys: &[TargetKey]) -> Result<()> {
    for &k in keys {
        let g = model.target(k)?;
        if let Some((i, j, rate)) = model.escaping_rate(g) {
            return Err(Error::NotAbsorbing {
                key: k,
                from: model.space().label(i).to_string(),
                to: model.space().label(j).to_string(),
                rate,
            });
        }
    }
    Ok(())
}

/// Joint density for absorbing targets, using the full generator in every
/// exponential factor.
pub fn joint_density_absorbing(model: &IntensityModel, q: &DensityQuery) -> Result<DensityValue> {
    let (region, times) = prepare(model, q)?;
    check_absorbing(model, &region.keys())?;
    let sets = waiting_target_sets(model, region.partition())?;
    let v = product_formula(model, None, &sets, &times, Exponent::Full)?;
    Ok(value(region, v))
}

/// Waiting and target sets built from intersections of the targets hit so
/// far; valid when every target absorbs.
pub fn absorbing_waiting_target_sets(model: &IntensityModel, s: &SubPartition) -> Result<Vec<(StateSet, StateSet)>> {
    let mut hit: Vec<TargetKey> = Vec::new();
    let mut previous = union_targets(model, s)?.complement();
    let mut out = Vec::with_capacity(s.len());
    for n in 0..s.len() {
        hit.extend_from_slice(s.block(n)?);
        let reached = block_intersection(model, &hit)?;
        let target = reached.difference(&union_targets(model, &s.left_shift(n + 1)?)?);
        out.push((previous, target.clone()));
        previous = target;
    }
    Ok(out)
}

/// [`joint_density_absorbing`] with the intersection-based waiting and target sets.
pub fn joint_density_absorbing_alt(model: &IntensityModel, q: &DensityQuery) -> Result<DensityValue> {
    let (region, times) = prepare(model, q)?;
    check_absorbing(model, &region.keys())?;
    let sets = absorbing_waiting_target_sets(model, region.partition())?;
    let v = product_formula(model, None, &sets, &times, Exponent::Full)?;
    Ok(value(region, v))
}

/// One term of the split of `α` into a part off the targets and point
/// masses on target states.
#[derive(Debug, Clone)]
pub struct InitialComponent {
    pub weight: f64,
    /// Model whose initial law avoids all of its targets.
    pub model: IntensityModel,
    /// Targets already hit at time 0 for this component (their `τ` is 0).
    pub frozen: Vec<TargetKey>,
    /// The starting state for point-mass components.
    pub start: Option<usize>,
}

/// `P_α = ᾱ′ P_{α′} + Σ_{i∈γ} α(i) P_i` with `γ` the union of the targets.
pub fn decompose_initial(model: &IntensityModel) -> Result<Vec<InitialComponent>> {
    let gamma = model.union_of(model.targets().keys())?;
    let alpha = model.alpha();
    let charged: Vec<usize> = gamma.iter().filter(|&i| alpha[i] > 0.0).collect();
    let mut out = Vec::new();
    let mut rest = alpha.clone();
    for &i in &charged {
        rest[i] = 0.0;
    }
    let rest_mass = rest.sum();
    if rest_mass > 0.0 {
        out.push(InitialComponent {
            weight: rest_mass,
            model: model.with_alpha(rest / rest_mass)?,
            frozen: Vec::new(),
            start: None,
        });
    }
    for i in charged {
        let (frozen, free): (Vec<TargetKey>, Vec<TargetKey>) =
            model.targets().iter().map(|(&k, _)| k).partition(|&k| model.targets()[&k].contains(i));
        out.push(InitialComponent {
            weight: alpha[i],
            model: model.with_alpha(model.delta(i))?.with_targets(&free)?,
            frozen,
            start: Some(i),
        });
    }
    Ok(out)
}

/// What has been observed of the path by time `u₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub state: usize,
    /// Hitting times of the targets visited strictly before `u₀`.
    pub visited: BTreeMap<TargetKey, f64>,
}

/// Conditional density of the remaining hitting times `τ_k − u₀` of the
/// unvisited targets, evaluated at `t` (keys = unvisited targets).
pub fn conditional_density(
    model: &IntensityModel,
    u0: f64,
    observed: &Observation,
    t: &TimeVector,
) -> Result<DensityValue> {
    if !(u0.is_finite() && u0 >= 0.0) {
        return Err(Error::domain(format!("observation time must be finite and nonnegative, got {u0}")));
    }
    if observed.state >= model.n_states() {
        return Err(Error::inconsistent(format!("state index {} out of range", observed.state)));
    }
    for (&k, &v) in &observed.visited {
        model.target(k)?;
        if !(v >= 0.0 && v < u0) {
            return Err(Error::inconsistent(format!(
                "visited target {k} has time {v}, which is not in [0, {u0})"
            )));
        }
    }
    let unvisited: Vec<TargetKey> = model
        .target_keys()
        .into_iter()
        .filter(|k| !observed.visited.contains_key(k))
        .collect();
    if let Some(k) = unvisited.iter().find(|&&k| model.targets()[&k].contains(observed.state)) {
        return Err(Error::inconsistent(format!(
            "current state lies in target {k}, which is marked unvisited"
        )));
    }
    let want: BTreeSet<_> = unvisited.iter().copied().collect();
    let got: BTreeSet<_> = t.keys().into_iter().collect();
    if want != got {
        return Err(Error::inconsistent("times must be given for exactly the unvisited targets"));
    }
    if unvisited.is_empty() {
        return Ok(value(Region::over_own_keys(SubPartition::empty()), 1.0));
    }
    let residual = model.with_alpha(model.delta(observed.state))?.with_targets(&unvisited)?;
    joint_density(&residual, &DensityQuery::new(t.clone()))
}
