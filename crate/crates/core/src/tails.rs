//! Tail probabilities of hitting times with explicit equality patterns.
//!
//! A [`TailQuery`] describes the event that the targets in each block of
//! `s1` are hit simultaneously after the block's threshold, that the targets
//! in each block of `s2` are hit simultaneously, and that different blocks
//! are hit at different times (see [`TiePolicy`]).
//!
//! Conventions: a target that is never hit has `τ = ∞`; `τ > c` holds for
//! `τ = ∞`; two hitting times are *equal* only when both are finite and
//! equal, and *unequal* otherwise.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expmat::{expm, solve, try_integrate_interval, QuadratureRule};
use crate::hitting::decompose_initial;
use crate::mcore::{mask, restrict_matrix, IntensityModel, StateSet, TargetKey};
use crate::partitions::{block_intersection, subpermutations, union_targets, SubPartition};

/// Which pairs of blocks must be hit at different times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TiePolicy {
    /// Every pair of blocks is hit at different times.
    Distinct,
    /// Only pairs of blocks with two or more targets each; a single-target
    /// block may tie with anything.
    Relaxed,
}

/// An extended tail event; see the module docs.
#[derive(Debug, Clone, PartialEq)]
pub struct TailQuery {
    s1: SubPartition,
    s2: SubPartition,
    t: Vec<f64>,
    policy: TiePolicy,
}

impl TailQuery {
    /// `t` holds one nondecreasing, finite, nonnegative threshold per block of `s1`.
    pub fn new(s1: SubPartition, s2: SubPartition, t: Vec<f64>, policy: TiePolicy) -> Result<Self> {
        s1.concat(&s2)?;
        if t.len() != s1.len() {
            return Err(Error::inconsistent(format!(
                "{} thresholds for {} time-constrained blocks",
                t.len(),
                s1.len()
            )));
        }
        if let Some(c) = t.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::domain(format!("thresholds must be finite and nonnegative, got {c}")));
        }
        if !t.windows(2).all(|w| w[0] <= w[1]) {
            return Err(Error::domain("thresholds must be nondecreasing"));
        }
        Ok(TailQuery { s1, s2, t, policy })
    }

    pub fn distinct(s1: SubPartition, s2: SubPartition, t: Vec<f64>) -> Result<Self> {
        Self::new(s1, s2, t, TiePolicy::Distinct)
    }

    pub fn relaxed(s1: SubPartition, s2: SubPartition, t: Vec<f64>) -> Result<Self> {
        Self::new(s1, s2, t, TiePolicy::Relaxed)
    }

    pub fn s1(&self) -> &SubPartition {
        &self.s1
    }

    pub fn s2(&self) -> &SubPartition {
        &self.s2
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn policy(&self) -> TiePolicy {
        self.policy
    }

    /// Every target the event mentions, ascending.
    pub fn keys(&self) -> Vec<TargetKey> {
        let mut k = self.s1.keys();
        k.extend(self.s2.keys());
        k.sort_unstable();
        k
    }

    /// Whether the event holds for hitting times `tau` (`f64::INFINITY` = never hit).
    /// Missing keys count as never hit.
    pub fn holds(&self, tau: &BTreeMap<TargetKey, f64>) -> bool {
        let time = |k: &TargetKey| tau.get(k).copied().unwrap_or(f64::INFINITY);
        let blocks: Vec<&Vec<TargetKey>> = self.s1.blocks().iter().chain(self.s2.blocks()).collect();
        let mut reps = Vec::with_capacity(blocks.len());
        for b in &blocks {
            let first = time(&b[0]);
            if b.len() > 1 && !(first.is_finite() && b.iter().all(|k| time(k) == first)) {
                return false;
            }
            reps.push(first);
        }
        for (n, c) in self.t.iter().enumerate() {
            if !(reps[n] > *c) {
                return false;
            }
        }
        for i in 0..blocks.len() {
            for j in i + 1..blocks.len() {
                let checked = match self.policy {
                    TiePolicy::Distinct => true,
                    TiePolicy::Relaxed => blocks[i].len() > 1 && blocks[j].len() > 1,
                };
                if checked && reps[i].is_finite() && reps[i] == reps[j] {
                    return false;
                }
            }
        }
        true
    }

    /// The event as a raw conjunction. For a distinct query, canonicalizing
    /// the result gives back exactly this query.
    pub fn constraints(&self) -> Vec<Constraint> {
        let blocks: Vec<&Vec<TargetKey>> = self.s1.blocks().iter().chain(self.s2.blocks()).collect();
        let mut out = Vec::new();
        for (b, c) in self.s1.blocks().iter().zip(&self.t) {
            out.extend(b.iter().map(|&k| Constraint::Greater(k, *c)));
        }
        for b in &blocks {
            out.extend(b[1..].iter().map(|&k| Constraint::Equal(b[0], k)));
        }
        for i in 0..blocks.len() {
            for j in i + 1..blocks.len() {
                let checked = match self.policy {
                    TiePolicy::Distinct => true,
                    TiePolicy::Relaxed => blocks[i].len() > 1 && blocks[j].len() > 1,
                };
                if checked {
                    out.push(Constraint::NotEqual(blocks[i][0], blocks[j][0]));
                }
            }
        }
        out
    }
}

impl fmt::Display for TailQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        for (b, c) in self.s1.blocks().iter().zip(&self.t) {
            parts.push(format!("{} > {c}", SubPartition::new([b.clone()]).expect("valid block")));
        }
        for b in self.s2.blocks() {
            parts.push(SubPartition::new([b.clone()]).expect("valid block").to_string());
        }
        if parts.is_empty() {
            parts.push("{}".to_string());
        }
        let ties = match self.policy {
            TiePolicy::Distinct => "distinct",
            TiePolicy::Relaxed => "relaxed",
        };
        write!(f, "{} [{ties}]", parts.join(", "))
    }
}

/// Per-start-state probabilities `p` and the value `α p`.
#[derive(Debug, Clone, PartialEq)]
pub struct TailResult {
    pub p: DVector<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exponent {
    Masked,
    Full,
}

struct Structure {
    wait: StateSet,
    wait_generator: DMatrix<f64>,
    /// `(position in s2, λ(W, T_n))` for nonempty `T_n`.
    exits: Vec<(usize, DMatrix<f64>)>,
}

/// States of `within` from which `goal` can be reached along a path whose
/// intermediate states stay in `within`.
pub fn reaching_states(model: &IntensityModel, within: &StateSet, goal: &StateSet) -> StateSet {
    let lambda = model.lambda();
    let mut found = StateSet::empty(model.n_states());
    let mut queue: VecDeque<usize> = goal.iter().collect();
    let mut seen = goal.clone();
    while let Some(j) = queue.pop_front() {
        for i in within.iter() {
            if i != j && !seen.contains(i) && lambda[(i, j)] > 0.0 {
                seen.insert(i);
                found.insert(i);
                queue.push_back(i);
            }
        }
    }
    found
}

/// Evaluates tail probabilities for one model, caching the set algebra per
/// `(s1, s2)` and the equality-only base vectors per `s2`.
pub struct TailEngine<'m> {
    model: &'m IntensityModel,
    rule: QuadratureRule,
    structures: RwLock<HashMap<(SubPartition, SubPartition), Arc<Structure>>>,
    bases: RwLock<HashMap<SubPartition, Arc<DVector<f64>>>>,
}

/// Quadrature used by [`TailEngine::new`].
pub fn default_tail_rule() -> QuadratureRule {
    QuadratureRule::adaptive(1e-10)
}

impl<'m> TailEngine<'m> {
    pub fn new(model: &'m IntensityModel) -> Self {
        Self::with_rule(model, default_tail_rule())
    }

    pub fn with_rule(model: &'m IntensityModel, rule: QuadratureRule) -> Self {
        TailEngine {
            model,
            rule,
            structures: RwLock::new(HashMap::new()),
            bases: RwLock::new(HashMap::new()),
        }
    }

    pub fn model(&self) -> &IntensityModel {
        self.model
    }

    fn normalize(&self, s2: &SubPartition, policy: TiePolicy) -> SubPartition {
        match policy {
            TiePolicy::Distinct => s2.clone(),
            TiePolicy::Relaxed => {
                SubPartition::new(s2.blocks().iter().filter(|b| b.len() > 1).cloned()).expect("subset of valid blocks")
            }
        }
    }

    fn check_start(&self, q: &TailQuery) -> Result<()> {
        let mentioned = self.model.union_of(q.keys().iter())?;
        let mass = self.model.alpha_mass(&mentioned);
        if mass > 0.0 {
            return Err(Error::InitialMassOnTargets { mass });
        }
        Ok(())
    }

    fn structure(&self, s1: &SubPartition, s2: &SubPartition) -> Result<Arc<Structure>> {
        let key = (s1.clone(), s2.clone());
        if let Some(s) = self.structures.read().ok().and_then(|m| m.get(&key).cloned()) {
            return Ok(s);
        }
        let model = self.model;
        let all = s1.concat(s2)?;
        let wait = union_targets(model, &all)?.complement();
        let wait_generator = mask(model, &wait, &wait)?.into_matrix();
        let mut exits = Vec::new();
        for n in 0..s2.len() {
            let others = all.remove_block(s1.len() + n)?;
            let target = block_intersection(model, s2.block(n)?)?.difference(&union_targets(model, &others)?);
            if !target.is_empty() {
                let m = mask(model, &wait, &target)?.into_matrix();
                if m.iter().any(|&x| x != 0.0) {
                    exits.push((n, m));
                }
            }
        }
        let s = Arc::new(Structure {
            wait,
            wait_generator,
            exits,
        });
        if let Ok(mut m) = self.structures.write() {
            m.insert(key, s.clone());
        }
        Ok(s)
    }

    /// `p(∅, s2, 0)`: probability, per start state, that each block of `s2`
    /// is hit simultaneously and that different blocks are hit at different
    /// times. Blocks with one target may stay unhit.
    pub fn base(&self, s2: &SubPartition) -> Result<Arc<DVector<f64>>> {
        if let Some(v) = self.bases.read().ok().and_then(|m| m.get(s2).cloned()) {
            return Ok(v);
        }
        let model = self.model;
        let n = model.n_states();
        let value = if s2.is_empty() {
            DVector::from_element(n, 1.0)
        } else {
            let outside = union_targets(model, s2)?;
            let wait = outside.complement();
            let mut boundary = DVector::zeros(n);
            for b in 0..s2.len() {
                let rest = s2.remove_block(b)?;
                let target = block_intersection(model, s2.block(b)?)?.difference(&union_targets(model, &rest)?);
                if target.is_empty() {
                    continue;
                }
                let inner = self.base(&rest)?;
                for j in target.iter() {
                    boundary[j] = inner[j];
                }
            }
            let stuck_value = if s2.all_singletons() { 1.0 } else { 0.0 };
            let moving = reaching_states(model, &wait, &outside);
            let stuck = wait.difference(&moving);
            let mut value = boundary.clone();
            for i in stuck.iter() {
                value[i] = stuck_value;
            }
            if !moving.is_empty() {
                let lambda = model.lambda();
                let a = -restrict_matrix(lambda, &moving, &moving)?;
                let rhs = DVector::from_iterator(
                    moving.len(),
                    moving.iter().map(|i| {
                        let to_stuck: f64 = stuck.iter().map(|j| lambda[(i, j)]).sum::<f64>() * stuck_value;
                        let to_out: f64 = outside.iter().map(|j| lambda[(i, j)] * boundary[j]).sum();
                        to_stuck + to_out
                    }),
                );
                let x = solve(&a, &rhs)?;
                for (v, i) in x.iter().zip(moving.iter()) {
                    value[i] = *v;
                }
            }
            value
        };
        let value = Arc::new(value);
        if let Ok(mut m) = self.bases.write() {
            m.insert(s2.clone(), value.clone());
        }
        Ok(value)
    }

    fn recursion(&self, s1: &SubPartition, s2: &SubPartition, t: &[f64], policy: TiePolicy, exponent: Exponent) -> Result<DVector<f64>> {
        let s2 = self.normalize(s2, policy);
        if s1.is_empty() {
            return Ok(self.base(&s2)?.as_ref().clone());
        }
        let st = self.structure(s1, &s2)?;
        let generator = match exponent {
            Exponent::Masked => st.wait_generator.clone(),
            Exponent::Full => self.model.lambda().clone(),
        };
        let t1 = t[0];
        let next_s1 = s1.left_shift(1)?;
        let next_s2 = s2.add_block(s1.block(0)?.iter().copied())?;
        let next_t: Vec<f64> = t[1..].iter().map(|c| c - t1).collect();
        let mut after = self.recursion(&next_s1, &next_s2, &next_t, policy, exponent)?;
        if exponent == Exponent::Full {
            for i in 0..after.len() {
                if !st.wait.contains(i) {
                    after[i] = 0.0;
                }
            }
        }
        let mut total = if t1 > 0.0 { expm(&(&generator * t1))? * after } else { after };
        if t1 > 0.0 && !st.exits.is_empty() {
            let integral = try_integrate_interval(
                |u| -> Result<DVector<f64>> {
                    let shifted: Vec<f64> = t.iter().map(|c| c - u).collect();
                    let mut acc = DVector::zeros(self.model.n_states());
                    for (n, jump) in &st.exits {
                        let rest = s2.remove_block(*n)?;
                        let p = self.recursion(s1, &rest, &shifted, policy, exponent)?;
                        acc += jump * p;
                    }
                    Ok(expm(&(&generator * u))? * acc)
                },
                0.0,
                t1,
                &self.rule,
            )?;
            total += integral;
        }
        Ok(total)
    }

    fn finish(&self, p: DVector<f64>) -> TailResult {
        let value = (self.model.alpha() * &p)[0];
        TailResult { p, value }
    }

    /// Tail probability by the first-exit recursion with quadrature.
    pub fn tail_p(&self, q: &TailQuery) -> Result<TailResult> {
        self.check_start(q)?;
        let p = self.recursion(&q.s1, &q.s2, &q.t, q.policy, Exponent::Masked)?;
        Ok(self.finish(p))
    }

    /// [`TailEngine::tail_p`] for absorbing targets, with full-generator exponentials.
    pub fn tail_p_absorbing(&self, q: &TailQuery) -> Result<TailResult> {
        self.check_start(q)?;
        for k in q.keys() {
            let g = self.model.target(k)?;
            if let Some((i, j, rate)) = self.model.escaping_rate(g) {
                return Err(Error::NotAbsorbing {
                    key: k,
                    from: self.model.space().label(i).to_string(),
                    to: self.model.space().label(j).to_string(),
                    rate,
                });
            }
        }
        let p = self.recursion(&q.s1, &q.s2, &q.t, q.policy, Exponent::Full)?;
        Ok(self.finish(p))
    }

    /// Tail probability by summing over the orders in which equality-only
    /// blocks can complete before the first threshold. The simplex integrals
    /// are read off one block-triangular matrix exponential per order.
    pub fn tail_p_alt(&self, q: &TailQuery) -> Result<TailResult> {
        self.check_start(q)?;
        let p = self.alt(&q.s1, &q.s2, &q.t, q.policy)?;
        Ok(self.finish(p))
    }

    fn alt(&self, s1: &SubPartition, s2: &SubPartition, t: &[f64], policy: TiePolicy) -> Result<DVector<f64>> {
        let s2 = self.normalize(s2, policy);
        if s1.is_empty() {
            return Ok(self.base(&s2)?.as_ref().clone());
        }
        let model = self.model;
        let n = model.n_states();
        let t1 = t[0];
        let next_s1 = s1.left_shift(1)?;
        let next_t: Vec<f64> = t[1..].iter().map(|c| c - t1).collect();
        let all = s1.concat(&s2)?;
        let mut continuation: HashMap<Vec<usize>, DVector<f64>> = HashMap::new();
        let mut total = DVector::zeros(n);
        'orders: for order in subpermutations(s2.len()) {
            // waits[m] = complement of the targets still pending after the first m blocks of `order`
            let mut waits = Vec::with_capacity(order.len() + 1);
            for m in 0..=order.len() {
                let removed: Vec<usize> = order[..m].iter().map(|&b| s1.len() + b).collect();
                waits.push(union_targets(model, &all.remove_blocks(&removed)?)?.complement());
            }
            let mut jumps = Vec::with_capacity(order.len());
            for (m, &b) in order.iter().enumerate() {
                let target = block_intersection(model, s2.block(b)?)?.intersection(&waits[m + 1]);
                let jump = mask(model, &waits[m], &target)?.into_matrix();
                if jump.iter().all(|&x| x == 0.0) {
                    continue 'orders;
                }
                jumps.push(jump);
            }
            let size = order.len() + 1;
            let mut big = DMatrix::zeros(size * n, size * n);
            for m in 0..size {
                big.view_mut((m * n, m * n), (n, n))
                    .copy_from(mask(model, &waits[m], &waits[m])?.matrix());
                if m + 1 < size {
                    big.view_mut((m * n, (m + 1) * n), (n, n)).copy_from(&jumps[m]);
                }
            }
            let integral = expm(&(big * t1))?.view((0, order.len() * n), (n, n)).clone_owned();
            let mut hit: Vec<usize> = order.clone();
            hit.sort_unstable();
            let after = match continuation.get(&hit) {
                Some(v) => v.clone(),
                None => {
                    let rest = s2.remove_blocks(&hit)?;
                    let next_s2 = rest.add_block(s1.block(0)?.iter().copied())?;
                    let v = self.alt(&next_s1, &next_s2, &next_t, policy)?;
                    continuation.insert(hit, v.clone());
                    v
                }
            };
            total += integral * after;
        }
        Ok(total)
    }
}

/// [`TailEngine::tail_p`] with a fresh engine.
pub fn tail_p(model: &IntensityModel, q: &TailQuery) -> Result<TailResult> {
    TailEngine::new(model).tail_p(q)
}

pub fn tail_p_alt(model: &IntensityModel, q: &TailQuery) -> Result<TailResult> {
    TailEngine::new(model).tail_p_alt(q)
}

pub fn tail_p_absorbing(model: &IntensityModel, q: &TailQuery) -> Result<TailResult> {
    TailEngine::new(model).tail_p_absorbing(q)
}

/// `P(τ_k > t_n for k in block n, all n)` for single-target blocks, with
/// ties allowed: `α ∏ e^{λ(W_n)(t_n − t_{n−1})} 𝟙`.
pub fn tail_p_simple(model: &IntensityModel, s1: &SubPartition, t: &[f64]) -> Result<TailResult> {
    if s1.is_empty() || t.len() != s1.len() {
        return Err(Error::inconsistent("need one threshold per block and at least one block"));
    }
    if !s1.all_singletons() {
        return Err(Error::domain("every block must hold a single target"));
    }
    if let Some(c) = t.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
        return Err(Error::domain(format!("thresholds must be finite and nonnegative, got {c}")));
    }
    if !t.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::domain("thresholds must be strictly increasing"));
    }
    let mentioned = union_targets(model, s1)?;
    let mass = model.alpha_mass(&mentioned);
    if mass > 0.0 {
        return Err(Error::InitialMassOnTargets { mass });
    }
    let mut p = DVector::from_element(model.n_states(), 1.0);
    for n in (0..s1.len()).rev() {
        let wait = union_targets(model, &s1.left_shift(n)?)?.complement();
        let gap = t[n] - if n == 0 { 0.0 } else { t[n - 1] };
        p = expm(&(mask(model, &wait, &wait)?.into_matrix() * gap))? * p;
    }
    let value = (model.alpha() * &p)[0];
    Ok(TailResult { p, value })
}

/// Transition matrix `λ̄ = I + Dλ` of the jump chain and the diagonal `D`.
/// A state with no outgoing rate gets a self-loop and `D(i,i) = 0`.
pub fn embedded_chain(model: &IntensityModel) -> (DMatrix<f64>, DMatrix<f64>) {
    let lambda = model.lambda();
    let n = model.n_states();
    let mut d = DMatrix::zeros(n, n);
    let mut chain = DMatrix::zeros(n, n);
    for i in 0..n {
        let out = -lambda[(i, i)];
        if out > 0.0 {
            d[(i, i)] = 1.0 / out;
            for j in 0..n {
                if j != i {
                    chain[(i, j)] = lambda[(i, j)] / out;
                }
            }
        } else {
            chain[(i, i)] = 1.0;
        }
    }
    (chain, d)
}

/// `q(i) = P_i(τ_{k1} = τ_{k2})`.
pub fn equality_prob(model: &IntensityModel, k1: TargetKey, k2: TargetKey) -> Result<DVector<f64>> {
    let g1 = model.target(k1)?;
    let g2 = model.target(k2)?;
    let both = g1.intersection(g2);
    let free = g1.union(g2).complement();
    let mut q = DVector::zeros(model.n_states());
    for i in both.iter() {
        q[i] = 1.0;
    }
    let communicating = reaching_states(model, &free, &both);
    if communicating.is_empty() {
        return Ok(q);
    }
    let lambda = model.lambda();
    let a = -restrict_matrix(lambda, &communicating, &communicating)?;
    let rhs = restrict_matrix(lambda, &communicating, &both)? * DVector::from_element(both.len(), 1.0);
    let x = solve(&a, &rhs).map_err(|e| {
        Error::inconsistent(format!(
            "equality system on {} communicating states failed: {e}",
            communicating.len()
        ))
    })?;
    for (v, i) in x.iter().zip(communicating.iter()) {
        q[i] = *v;
    }
    Ok(q)
}

/// One conjunct of a raw tail event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    /// `τ_k > c`
    Greater(TargetKey, f64),
    /// `τ_j = τ_k`, both finite
    Equal(TargetKey, TargetKey),
    /// not `τ_j = τ_k`
    NotEqual(TargetKey, TargetKey),
}

impl Constraint {
    pub fn keys(&self) -> Vec<TargetKey> {
        match *self {
            Constraint::Greater(k, _) => vec![k],
            Constraint::Equal(j, k) | Constraint::NotEqual(j, k) => vec![j, k],
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::Greater(k, c) => write!(f, "tau({k}) > {c}"),
            Constraint::Equal(j, k) => write!(f, "tau({j}) == tau({k})"),
            Constraint::NotEqual(j, k) => write!(f, "tau({j}) != tau({k})"),
        }
    }
}

/// Whether a conjunction holds for hitting times `tau` (`f64::INFINITY` = never).
pub fn constraints_hold(constraints: &[Constraint], tau: &BTreeMap<TargetKey, f64>) -> bool {
    let time = |k: &TargetKey| tau.get(k).copied().unwrap_or(f64::INFINITY);
    constraints.iter().all(|c| match c {
        Constraint::Greater(k, v) => time(k) > *v,
        Constraint::Equal(j, k) => time(j).is_finite() && time(j) == time(k),
        Constraint::NotEqual(j, k) => !(time(j).is_finite() && time(j) == time(k)),
    })
}

/// Splits a conjunction into disjoint canonical events, one per equality
/// pattern among the mentioned targets compatible with the constraints.
/// An empty result means the constraints contradict each other.
pub fn canonicalize(constraints: &[Constraint]) -> Result<Vec<TailQuery>> {
    let mut keys: Vec<TargetKey> = constraints.iter().flat_map(|c| c.keys()).collect();
    keys.sort_unstable();
    keys.dedup();
    let mut thresholds: BTreeMap<TargetKey, f64> = BTreeMap::new();
    for c in constraints {
        if let Constraint::Greater(k, v) = *c {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(format!("threshold for target {k} must be finite and nonnegative, got {v}")));
            }
            let e = thresholds.entry(k).or_insert(v);
            *e = e.max(v);
        }
    }
    let mut out = Vec::new();
    for blocks in set_partitions(&keys) {
        let block_of = |k: TargetKey| blocks.iter().position(|b| b.contains(&k)).expect("every key is placed");
        let compatible = constraints.iter().all(|c| match *c {
            Constraint::Greater(..) => true,
            Constraint::Equal(j, k) => j != k && block_of(j) == block_of(k),
            Constraint::NotEqual(j, k) => block_of(j) != block_of(k),
        });
        if !compatible {
            continue;
        }
        let mut timed: Vec<(f64, Vec<TargetKey>)> = Vec::new();
        let mut untimed: Vec<Vec<TargetKey>> = Vec::new();
        for b in blocks {
            let c = b.iter().filter_map(|k| thresholds.get(k)).copied().fold(None, |m: Option<f64>, v| {
                Some(m.map_or(v, |m| m.max(v)))
            });
            match c {
                Some(c) => timed.push((c, b)),
                None => untimed.push(b),
            }
        }
        timed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let t = timed.iter().map(|x| x.0).collect();
        let s1 = SubPartition::new(timed.into_iter().map(|x| x.1))?;
        let s2 = SubPartition::new(untimed)?;
        out.push(TailQuery::distinct(s1, s2, t)?);
    }
    Ok(out)
}

/// Unordered set partitions of `keys`; blocks and partitions in a fixed order.
fn set_partitions(keys: &[TargetKey]) -> Vec<Vec<Vec<TargetKey>>> {
    let mut current: Vec<Vec<Vec<TargetKey>>> = vec![Vec::new()];
    for &k in keys {
        let mut next = Vec::new();
        for blocks in &current {
            for i in 0..blocks.len() {
                let mut joined = blocks.clone();
                joined[i].push(k);
                next.push(joined);
            }
            let mut fresh = blocks.clone();
            fresh.push(vec![k]);
            next.push(fresh);
        }
        current = next;
    }
    current
}

/// Probability of a raw conjunction under the model's initial law. Initial
/// mass on target states is handled by splitting the law: targets containing
/// the start state are hit at time 0.
pub fn raw_probability(engine: &TailEngine<'_>, constraints: &[Constraint]) -> Result<f64> {
    let model = engine.model();
    for c in constraints {
        for k in c.keys() {
            model.target(k)?;
        }
    }
    let mut total = 0.0;
    for part in decompose_initial(model)? {
        let frozen = |k: &TargetKey| part.frozen.contains(k);
        let mut residual = Vec::new();
        let mut possible = true;
        for c in constraints {
            match *c {
                Constraint::Greater(k, _) if frozen(&k) => possible = false,
                Constraint::Equal(j, k) | Constraint::NotEqual(j, k) if frozen(&j) || frozen(&k) => {
                    let same = frozen(&j) && frozen(&k);
                    let want_equal = matches!(c, Constraint::Equal(..));
                    if same != want_equal {
                        possible = false;
                    }
                }
                _ => residual.push(*c),
            }
        }
        if !possible {
            continue;
        }
        let mut mass = 0.0;
        for q in canonicalize(&residual)? {
            let p = engine.recursion(&q.s1, &q.s2, &q.t, q.policy, Exponent::Masked)?;
            mass += (part.model.alpha() * p)[0];
        }
        if residual.is_empty() {
            mass = 1.0;
        }
        total += part.weight * mass;
    }
    Ok(total)
}

/// Parses `tau(1) > 0.5 && tau(2) == tau(3) && tau(1) != tau(3)`.
/// `t(k)` is accepted for `tau(k)`.
pub fn parse_constraints(text: &str) -> Result<Vec<Constraint>> {
    let err = |pos: usize, message: String| Error::Parse {
        path: "<expression>".to_string(),
        line: 1,
        column: pos + 1,
        message,
    };
    let bytes = text.as_bytes();
    let mut pos = 0;
    let skip = |pos: &mut usize| {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
    };
    let tau = |pos: &mut usize| -> Result<TargetKey> {
        skip(pos);
        let rest = &text[*pos..];
        let name = if rest.starts_with("tau(") {
            4
        } else if rest.starts_with("t(") {
            2
        } else {
            return Err(err(*pos, "expected `tau(<target>)`".to_string()));
        };
        *pos += name;
        skip(pos);
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        let key = text[start..*pos]
            .parse()
            .map_err(|_| err(start, "expected a target index".to_string()))?;
        skip(pos);
        if bytes.get(*pos) != Some(&b')') {
            return Err(err(*pos, "expected `)`".to_string()));
        }
        *pos += 1;
        Ok(key)
    };
    let mut out = Vec::new();
    loop {
        let left = tau(&mut pos)?;
        skip(&mut pos);
        let rest = &text[pos..];
        if rest.starts_with("==") || rest.starts_with("!=") {
            let equal = rest.starts_with("==");
            pos += 2;
            let right = tau(&mut pos)?;
            out.push(if equal {
                Constraint::Equal(left, right)
            } else {
                Constraint::NotEqual(left, right)
            });
        } else if rest.starts_with('>') {
            pos += 1;
            skip(&mut pos);
            let start = pos;
            while pos < bytes.len() && (bytes[pos].is_ascii_alphanumeric() || b".+-_".contains(&bytes[pos])) {
                pos += 1;
            }
            let v: f64 = text[start..pos]
                .parse()
                .map_err(|_| err(start, "expected a number".to_string()))?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(err(start, format!("threshold must be finite and nonnegative, got {v}")));
            }
            out.push(Constraint::Greater(left, v));
        } else {
            return Err(err(pos, "expected `>`, `==` or `!=`".to_string()));
        }
        skip(&mut pos);
        if pos == bytes.len() {
            return Ok(out);
        }
        if text[pos..].starts_with("&&") {
            pos += 2;
        } else {
            return Err(err(pos, "expected `&&` or end of input".to_string()));
        }
    }
}
