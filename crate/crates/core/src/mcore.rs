//! State space, intensity matrix and the projector/mask calculus.
//!
//! Every formula in this crate is written in terms of a handful of set
//! operations on the state space: masked rate matrices `λ(a, b)`, diagonal
//! projectors `I_a`, and restriction/extension of vectors between index sets.
//! States carry string labels for presentation; all arithmetic is on dense
//! indices `0..n`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

/// Identifier of a target set `Γ_k`.
pub type TargetKey = u32;

/// Absolute tolerance for row sums of the intensity matrix and the mass of `α`.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("state space must contain at least one state")]
    EmptyStateSpace,
    #[error("duplicate state label `{0}`")]
    DuplicateLabel(String),
    #[error("unknown state label `{0}`")]
    UnknownLabel(String),
    #[error("unknown target index {0}")]
    UnknownTarget(TargetKey),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("restriction to the empty set is not defined")]
    EmptySet,
    #[error("source index set is not contained in the target index set")]
    NotSubset,
    #[error("invalid model:\n{0}")]
    Invalid(ValidationReport),
}

/// A subset of `0..dim`, stored as a bitset.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateSet {
    dim: usize,
    words: Vec<u64>,
}

impl StateSet {
    pub fn empty(dim: usize) -> Self {
        StateSet {
            dim,
            words: vec![0; dim.div_ceil(64)],
        }
    }

    pub fn full(dim: usize) -> Self {
        Self::empty(dim).complement()
    }

    /// Builds a set from indices; panics if an index is `>= dim`.
    pub fn from_indices<I: IntoIterator<Item = usize>>(dim: usize, indices: I) -> Self {
        let mut set = Self::empty(dim);
        for i in indices {
            set.insert(i);
        }
        set
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.dim && self.words[i / 64] & (1u64 << (i % 64)) != 0
    }

    pub fn insert(&mut self, i: usize) {
        assert!(i < self.dim, "state index {i} out of range 0..{}", self.dim);
        self.words[i / 64] |= 1u64 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        if i < self.dim {
            self.words[i / 64] &= !(1u64 << (i % 64));
        }
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim).filter(move |&i| self.contains(i))
    }

    pub fn indices(&self) -> Vec<usize> {
        self.iter().collect()
    }

    fn zip_with(&self, other: &StateSet, f: impl Fn(u64, u64) -> u64) -> StateSet {
        assert_eq!(self.dim, other.dim, "state sets over different spaces");
        StateSet {
            dim: self.dim,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn union(&self, other: &StateSet) -> StateSet {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn intersection(&self, other: &StateSet) -> StateSet {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn difference(&self, other: &StateSet) -> StateSet {
        self.zip_with(other, |a, b| a & !b)
    }

    pub fn complement(&self) -> StateSet {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        let tail = self.dim % 64;
        if tail != 0 {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
        StateSet {
            dim: self.dim,
            words,
        }
    }

    pub fn is_subset(&self, other: &StateSet) -> bool {
        self.difference(other).is_empty()
    }

    pub fn is_disjoint(&self, other: &StateSet) -> bool {
        self.intersection(other).is_empty()
    }
}

impl fmt::Debug for StateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// Ordered, duplicate-free state labels with the inverse index.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl StateSpace {
    pub fn new<S: Into<String>, I: IntoIterator<Item = S>>(labels: I) -> Result<Self, ModelError> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(ModelError::EmptyStateSpace);
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(ModelError::DuplicateLabel(l.clone()));
            }
        }
        Ok(StateSpace { labels, index })
    }

    /// States labelled `"0"`, `"1"`, ... .
    pub fn numbered(n: usize) -> Self {
        Self::new((0..n).map(|i| i.to_string())).expect("numbered labels are distinct")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Result<usize, ModelError> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| ModelError::UnknownLabel(label.to_string()))
    }

    pub fn set_of<'a, I: IntoIterator<Item = &'a str>>(&self, labels: I) -> Result<StateSet, ModelError> {
        let mut set = StateSet::empty(self.len());
        for l in labels {
            set.insert(self.index_of(l)?);
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Issue {
    NotSquare { rows: usize, cols: usize },
    NonFinite { row: usize, col: usize },
    NegativeRate { from: usize, to: usize, rate: f64 },
    RowSum { row: usize, sum: f64 },
    TargetDimension { key: TargetKey, dim: usize },
    EmptyTarget { key: TargetKey },
    AlphaDimension { len: usize },
    AlphaNegative { state: usize, weight: f64 },
    AlphaSum { sum: f64 },
    /// `α` charges `∪Γ_k`; handled by the initial-mass decomposition.
    AlphaOnTargets { mass: f64 },
    /// Every state lies in some target set.
    NoFreeState,
}

impl Issue {
    pub fn severity(&self) -> Severity {
        match self {
            Issue::AlphaOnTargets { .. } | Issue::NoFreeState => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::NotSquare { rows, cols } => write!(f, "rate matrix is {rows}x{cols}, not square"),
            Issue::NonFinite { row, col } => write!(f, "rate ({row},{col}) is not finite"),
            Issue::NegativeRate { from, to, rate } => {
                write!(f, "negative off-diagonal rate {rate} from state {from} to {to}")
            }
            Issue::RowSum { row, sum } => write!(f, "row {row} sums to {sum:e}, expected 0"),
            Issue::TargetDimension { key, dim } => {
                write!(f, "target {key} is defined over {dim} states")
            }
            Issue::EmptyTarget { key } => write!(f, "target {key} is empty"),
            Issue::AlphaDimension { len } => write!(f, "initial distribution has {len} entries"),
            Issue::AlphaNegative { state, weight } => {
                write!(f, "initial weight {weight} on state {state} is negative")
            }
            Issue::AlphaSum { sum } => write!(f, "initial distribution sums to {sum}, expected 1"),
            Issue::AlphaOnTargets { mass } => {
                write!(f, "initial distribution puts mass {mass} on the union of targets")
            }
            Issue::NoFreeState => write!(f, "every state belongs to some target set"),
        }
    }
}

/// Outcome of [`validate`]: every violated invariant, errors and warnings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity() == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity() == Severity::Warning)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            let tag = match issue.severity() {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            writeln!(f, "{tag}: {issue}")?;
        }
        Ok(())
    }
}

/// Checks the invariants of a rate matrix, target family and initial law.
pub fn validate(
    lambda: &DMatrix<f64>,
    targets: &BTreeMap<TargetKey, StateSet>,
    alpha: &RowDVector<f64>,
) -> ValidationReport {
    let mut issues = Vec::new();
    let (rows, cols) = lambda.shape();
    if rows != cols {
        issues.push(Issue::NotSquare { rows, cols });
        return ValidationReport { issues };
    }
    let n = rows;
    for i in 0..n {
        let mut sum = 0.0;
        let mut finite = true;
        for j in 0..n {
            let r = lambda[(i, j)];
            if !r.is_finite() {
                issues.push(Issue::NonFinite { row: i, col: j });
                finite = false;
                continue;
            }
            if i != j && r < 0.0 {
                issues.push(Issue::NegativeRate { from: i, to: j, rate: r });
            }
            sum += r;
        }
        if finite && sum.abs() > ROW_SUM_TOL {
            issues.push(Issue::RowSum { row: i, sum });
        }
    }
    let mut union = StateSet::empty(n);
    for (&key, set) in targets {
        if set.dim() != n {
            issues.push(Issue::TargetDimension { key, dim: set.dim() });
            continue;
        }
        if set.is_empty() {
            issues.push(Issue::EmptyTarget { key });
        }
        union = union.union(set);
    }
    if !targets.is_empty() && union.len() == n {
        issues.push(Issue::NoFreeState);
    }
    if alpha.len() != n {
        issues.push(Issue::AlphaDimension { len: alpha.len() });
    } else {
        for (i, &w) in alpha.iter().enumerate() {
            if !(w >= 0.0) {
                issues.push(Issue::AlphaNegative { state: i, weight: w });
            }
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            issues.push(Issue::AlphaSum { sum });
        }
        let on_targets: f64 = union.iter().map(|i| alpha[i]).sum();
        if on_targets > 0.0 {
            issues.push(Issue::AlphaOnTargets { mass: on_targets });
        }
    }
    ValidationReport { issues }
}

/// Whether the diagonal of the rate matrix is taken as given or recomputed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiagonalPolicy {
    #[default]
    Strict,
    /// Overwrite `λ(i,i)` with minus the sum of the off-diagonal rates.
    Recompute,
}

/// A finite-state Markov process: rates, target family `{Γ_k}` and initial law `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityModel {
    space: StateSpace,
    lambda: DMatrix<f64>,
    targets: BTreeMap<TargetKey, StateSet>,
    alpha: RowDVector<f64>,
}

impl IntensityModel {
    pub fn new(
        space: StateSpace,
        lambda: DMatrix<f64>,
        targets: BTreeMap<TargetKey, StateSet>,
        alpha: RowDVector<f64>,
    ) -> Result<Self, ModelError> {
        Self::with_policy(space, lambda, targets, alpha, DiagonalPolicy::Strict)
    }

    pub fn with_policy(
        space: StateSpace,
        mut lambda: DMatrix<f64>,
        targets: BTreeMap<TargetKey, StateSet>,
        alpha: RowDVector<f64>,
        policy: DiagonalPolicy,
    ) -> Result<Self, ModelError> {
        if lambda.nrows() != space.len() {
            return Err(ModelError::DimensionMismatch {
                expected: space.len(),
                found: lambda.nrows(),
            });
        }
        if policy == DiagonalPolicy::Recompute && lambda.is_square() {
            repair_diagonal(&mut lambda);
        }
        let report = validate(&lambda, &targets, &alpha);
        if report.has_errors() {
            return Err(ModelError::Invalid(report));
        }
        Ok(IntensityModel {
            space,
            lambda,
            targets,
            alpha,
        })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn n_states(&self) -> usize {
        self.space.len()
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn alpha(&self) -> &RowDVector<f64> {
        &self.alpha
    }

    pub fn targets(&self) -> &BTreeMap<TargetKey, StateSet> {
        &self.targets
    }

    pub fn target_keys(&self) -> Vec<TargetKey> {
        self.targets.keys().copied().collect()
    }

    pub fn target(&self, key: TargetKey) -> Result<&StateSet, ModelError> {
        self.targets.get(&key).ok_or(ModelError::UnknownTarget(key))
    }

    /// Warnings that survived construction (for example `α` charging the targets).
    pub fn validation(&self) -> ValidationReport {
        validate(&self.lambda, &self.targets, &self.alpha)
    }

    /// Same dynamics and targets, different initial law.
    pub fn with_alpha(&self, alpha: RowDVector<f64>) -> Result<Self, ModelError> {
        Self::new(self.space.clone(), self.lambda.clone(), self.targets.clone(), alpha)
    }

    /// Same dynamics and initial law, targets restricted to `keys`.
    pub fn with_targets(&self, keys: &[TargetKey]) -> Result<Self, ModelError> {
        let mut targets = BTreeMap::new();
        for &k in keys {
            targets.insert(k, self.target(k)?.clone());
        }
        Self::new(self.space.clone(), self.lambda.clone(), targets, self.alpha.clone())
    }

    /// Point mass on state `i`.
    pub fn delta(&self, i: usize) -> RowDVector<f64> {
        let mut a = RowDVector::zeros(self.n_states());
        a[i] = 1.0;
        a
    }

    pub fn full_set(&self) -> StateSet {
        StateSet::full(self.n_states())
    }

    pub fn empty_set(&self) -> StateSet {
        StateSet::empty(self.n_states())
    }

    /// `∪_{k ∈ keys} Γ_k`.
    pub fn union_of<'a, I: IntoIterator<Item = &'a TargetKey>>(&self, keys: I) -> Result<StateSet, ModelError> {
        let mut set = self.empty_set();
        for k in keys {
            set = set.union(self.target(*k)?);
        }
        Ok(set)
    }

    /// `∩_{k ∈ keys} Γ_k`; the full space for an empty key list.
    pub fn intersection_of<'a, I: IntoIterator<Item = &'a TargetKey>>(
        &self,
        keys: I,
    ) -> Result<StateSet, ModelError> {
        let mut set = self.full_set();
        for k in keys {
            set = set.intersection(self.target(*k)?);
        }
        Ok(set)
    }

    /// `λ(a, b)`: entries of `λ` with row in `a` and column in `b`, zero elsewhere.
    pub fn mask(&self, a: &StateSet, b: &StateSet) -> Result<MaskedMatrix, ModelError> {
        mask(self, a, b)
    }

    /// A set `a` is absorbing when `λ(a, a^c) = 0`.
    pub fn is_absorbing(&self, a: &StateSet) -> bool {
        let out = a.complement();
        a.iter().all(|i| out.iter().all(|j| self.lambda[(i, j)] == 0.0))
    }

    /// First nonzero rate leaving `a`, if any.
    pub fn escaping_rate(&self, a: &StateSet) -> Option<(usize, usize, f64)> {
        let out = a.complement();
        let found = a
            .iter()
            .flat_map(|i| out.iter().map(move |j| (i, j)))
            .map(|(i, j)| (i, j, self.lambda[(i, j)]))
            .find(|&(_, _, r)| r != 0.0);
        found
    }

    /// Total probability `α` assigns to `set`.
    pub fn alpha_mass(&self, set: &StateSet) -> f64 {
        set.iter().map(|i| self.alpha[i]).sum()
    }
}

fn repair_diagonal(lambda: &mut DMatrix<f64>) {
    let n = lambda.nrows();
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| lambda[(i, j)]).sum();
        lambda[(i, i)] = -off;
    }
}

/// A square matrix produced by the `I_a λ I_b` calculus.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix(DMatrix<f64>);

impl MaskedMatrix {
    pub fn from_matrix(m: DMatrix<f64>) -> Self {
        MaskedMatrix(m)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

impl std::ops::Deref for MaskedMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn mask(model: &IntensityModel, a: &StateSet, b: &StateSet) -> Result<MaskedMatrix, ModelError> {
    let n = model.n_states();
    for s in [a, b] {
        if s.dim() != n {
            return Err(ModelError::DimensionMismatch {
                expected: n,
                found: s.dim(),
            });
        }
    }
    let lambda = model.lambda();
    let m = DMatrix::from_fn(n, n, |i, j| {
        if a.contains(i) && b.contains(j) {
            lambda[(i, j)]
        } else {
            0.0
        }
    });
    Ok(MaskedMatrix(m))
}

/// `I_a`: the identity with the rows indexed by `a^c` zeroed.
pub fn projector(a: &StateSet) -> MaskedMatrix {
    let n = a.dim();
    MaskedMatrix(DMatrix::from_fn(n, n, |i, j| {
        if i == j && a.contains(i) {
            1.0
        } else {
            0.0
        }
    }))
}

fn check_dim(expected: usize, set: &StateSet) -> Result<(), ModelError> {
    if set.dim() != expected {
        return Err(ModelError::DimensionMismatch {
            expected,
            found: set.dim(),
        });
    }
    if set.is_empty() {
        return Err(ModelError::EmptySet);
    }
    Ok(())
}

/// `y|_a`, entries in increasing index order.
pub fn restrict_vector(y: &DVector<f64>, a: &StateSet) -> Result<DVector<f64>, ModelError> {
    check_dim(y.len(), a)?;
    Ok(DVector::from_iterator(a.len(), a.iter().map(|i| y[i])))
}

/// Row-vector version of [`restrict_vector`].
pub fn restrict_row(y: &RowDVector<f64>, a: &StateSet) -> Result<RowDVector<f64>, ModelError> {
    check_dim(y.len(), a)?;
    Ok(RowDVector::from_iterator(a.len(), a.iter().map(|i| y[i])))
}

/// `M|_{rows × cols}`.
pub fn restrict_matrix(m: &DMatrix<f64>, rows: &StateSet, cols: &StateSet) -> Result<DMatrix<f64>, ModelError> {
    check_dim(m.nrows(), rows)?;
    check_dim(m.ncols(), cols)?;
    let r = rows.indices();
    let c = cols.indices();
    Ok(DMatrix::from_fn(r.len(), c.len(), |i, j| m[(r[i], c[j])]))
}

/// `x|^b` for `x ∈ ℝ^a`: agrees with `x` on `a`, zero on `b ∖ a`.
///
/// Vectors over an index set are stored in increasing index order, so the
/// result has length `|b|`.
pub fn extend(x: &DVector<f64>, a: &StateSet, b: &StateSet) -> Result<DVector<f64>, ModelError> {
    if a.dim() != b.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: b.dim(),
            found: a.dim(),
        });
    }
    if x.len() != a.len() {
        return Err(ModelError::DimensionMismatch {
            expected: a.len(),
            found: x.len(),
        });
    }
    if !a.is_subset(b) {
        return Err(ModelError::NotSubset);
    }
    let mut values = x.iter();
    let out = b.iter().map(|i| {
        if a.contains(i) {
            *values.next().expect("length checked")
        } else {
            0.0
        }
    });
    Ok(DVector::from_iterator(b.len(), out))
}
