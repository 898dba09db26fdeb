//! Ordered subpartitions of the target index set and the regions they label.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::mcore::{IntensityModel, ModelError, StateSet, TargetKey};

/// Largest index set [`enumerate_partitions`] accepts by default.
pub const DEFAULT_ENUMERATION_CAP: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("blocks must be nonempty")]
    EmptyBlock,
    #[error("target index {0} appears in more than one block")]
    Overlap(TargetKey),
    #[error("block position {index} out of range for a subpartition with {len} blocks")]
    Range { index: usize, len: usize },
    #[error("blocks do not cover the index set exactly")]
    NotFull,
    #[error("index set of size {size} exceeds the enumeration cap {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error("time for target {0} is missing")]
    MissingTime(TargetKey),
    #[error("time for target {key} must be finite and nonnegative, got {value}")]
    InvalidTime { key: TargetKey, value: f64 },
    #[error("times of block {block} are not all equal")]
    UnequalBlock { block: usize },
    #[error("parse error at column {column}: {message}")]
    Parse { column: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// An ordered sequence of nonempty, pairwise disjoint blocks of target indices.
///
/// Positions are 0-based; block `n` here is `s(n+1)` in one-based notation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SubPartition {
    blocks: Vec<Vec<TargetKey>>,
}

impl SubPartition {
    pub fn new<B, I>(blocks: I) -> Result<Self, PartitionError>
    where
        B: IntoIterator<Item = TargetKey>,
        I: IntoIterator<Item = B>,
    {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for block in blocks {
            let mut b: Vec<TargetKey> = block.into_iter().collect();
            if b.is_empty() {
                return Err(PartitionError::EmptyBlock);
            }
            b.sort_unstable();
            for &k in &b {
                if !seen.insert(k) {
                    return Err(PartitionError::Overlap(k));
                }
            }
            out.push(b);
        }
        Ok(SubPartition { blocks: out })
    }

    pub fn empty() -> Self {
        SubPartition { blocks: Vec::new() }
    }

    /// One singleton block per key, in the given order.
    pub fn singletons<I: IntoIterator<Item = TargetKey>>(keys: I) -> Result<Self, PartitionError> {
        Self::new(keys.into_iter().map(|k| [k]))
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Vec<TargetKey>] {
        &self.blocks
    }

    pub fn block(&self, n: usize) -> Result<&[TargetKey], PartitionError> {
        self.blocks.get(n).map(|b| b.as_slice()).ok_or(PartitionError::Range {
            index: n,
            len: self.len(),
        })
    }

    /// All keys mentioned, ascending.
    pub fn keys(&self) -> Vec<TargetKey> {
        let mut k: Vec<TargetKey> = self.blocks.iter().flatten().copied().collect();
        k.sort_unstable();
        k
    }

    pub fn contains_key(&self, key: TargetKey) -> bool {
        self.blocks.iter().any(|b| b.contains(&key))
    }

    pub fn all_singletons(&self) -> bool {
        self.blocks.iter().all(|b| b.len() == 1)
    }

    /// `L^m s`: drops the first `m` blocks.
    pub fn left_shift(&self, m: usize) -> Result<Self, PartitionError> {
        if m > self.len() {
            return Err(PartitionError::Range {
                index: m,
                len: self.len(),
            });
        }
        Ok(SubPartition {
            blocks: self.blocks[m..].to_vec(),
        })
    }

    /// `s − s(n)`.
    pub fn remove_block(&self, n: usize) -> Result<Self, PartitionError> {
        if n >= self.len() {
            return Err(PartitionError::Range {
                index: n,
                len: self.len(),
            });
        }
        let mut blocks = self.blocks.clone();
        blocks.remove(n);
        Ok(SubPartition { blocks })
    }

    /// `s − {s(n) : n ∈ positions}`.
    pub fn remove_blocks(&self, positions: &[usize]) -> Result<Self, PartitionError> {
        for &p in positions {
            if p >= self.len() {
                return Err(PartitionError::Range {
                    index: p,
                    len: self.len(),
                });
            }
        }
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .filter(|(i, _)| !positions.contains(i))
            .map(|(_, b)| b.clone())
            .collect();
        Ok(SubPartition { blocks })
    }

    /// `s + A`: appends `A` as the last block.
    pub fn add_block<I: IntoIterator<Item = TargetKey>>(&self, block: I) -> Result<Self, PartitionError> {
        Self::new(self.blocks.iter().cloned().chain(std::iter::once(block.into_iter().collect::<Vec<_>>())))
    }

    /// Blocks of `self` followed by the blocks of `other`.
    pub fn concat(&self, other: &SubPartition) -> Result<Self, PartitionError> {
        Self::new(self.blocks.iter().chain(other.blocks.iter()).cloned())
    }
}

impl fmt::Display for SubPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.blocks.is_empty() {
            return write!(f, "{{}}");
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                write!(f, " < ")?;
            }
            write!(f, "{{")?;
            for (j, k) in b.iter().enumerate() {
                if j > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{k}")?;
            }
            write!(f, "}}")?;
        }
        Ok(())
    }
}

/// Parses `{2,3} < {1}`; whitespace is free and `{}` is the empty subpartition.
impl FromStr for SubPartition {
    type Err = PartitionError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let err = |column: usize, message: &str| PartitionError::Parse {
            column: column + 1,
            message: message.to_string(),
        };
        let chars: Vec<(usize, char)> = text.char_indices().filter(|(_, c)| !c.is_whitespace()).collect();
        if chars.len() == 2 && chars[0].1 == '{' && chars[1].1 == '}' {
            return Ok(SubPartition::empty());
        }
        let mut blocks: Vec<Vec<TargetKey>> = Vec::new();
        let mut pos = 0;
        loop {
            let Some(&(col, c)) = chars.get(pos) else {
                return Err(err(text.len(), "expected `{`"));
            };
            if c != '{' {
                return Err(err(col, "expected `{`"));
            }
            pos += 1;
            let mut block = Vec::new();
            loop {
                let start = pos;
                while chars.get(pos).is_some_and(|(_, c)| c.is_ascii_digit()) {
                    pos += 1;
                }
                let col = chars.get(start).map_or(text.len(), |c| c.0);
                if start == pos {
                    return Err(err(col, "expected a target index"));
                }
                let digits: String = chars[start..pos].iter().map(|c| c.1).collect();
                let key = digits.parse().map_err(|_| err(col, "target index out of range"))?;
                block.push(key);
                match chars.get(pos) {
                    Some((_, ',')) => pos += 1,
                    Some((_, '}')) => {
                        pos += 1;
                        break;
                    }
                    Some(&(col, _)) => return Err(err(col, "expected `,` or `}`")),
                    None => return Err(err(text.len(), "unterminated block")),
                }
            }
            blocks.push(block);
            match chars.get(pos) {
                None => break,
                Some((_, '<')) => pos += 1,
                Some(&(col, _)) => return Err(err(col, "expected `<` between blocks")),
            }
        }
        SubPartition::new(blocks)
    }
}

/// A full ordered partition `s` of an index set `K`; it labels the region
/// `R_s` of time vectors whose ties and ranking are described by `s`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Region {
    partition: SubPartition,
}

impl Region {
    /// Checks that the blocks cover `keys` exactly.
    pub fn new(partition: SubPartition, keys: &[TargetKey]) -> Result<Self, PartitionError> {
        let want: BTreeSet<_> = keys.iter().copied().collect();
        let got: BTreeSet<_> = partition.keys().into_iter().collect();
        if want != got {
            return Err(PartitionError::NotFull);
        }
        Ok(Region { partition })
    }

    /// A region over exactly the keys its blocks mention.
    pub fn over_own_keys(partition: SubPartition) -> Self {
        Region { partition }
    }

    pub fn partition(&self) -> &SubPartition {
        &self.partition
    }

    pub fn keys(&self) -> Vec<TargetKey> {
        self.partition.keys()
    }

    pub fn len(&self) -> usize {
        self.partition.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partition.is_empty()
    }

    /// Whether `t` ties and ranks its entries exactly as the blocks say.
    pub fn contains(&self, t: &TimeVector) -> bool {
        let mut previous = f64::NEG_INFINITY;
        for block in self.partition.blocks() {
            let Some(first) = t.get(block[0]) else {
                return false;
            };
            if block.iter().any(|&k| t.get(k) != Some(first)) || first <= previous {
                return false;
            }
            previous = first;
        }
        t.len() == self.partition.keys().len()
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.partition.fmt(f)
    }
}

impl FromStr for Region {
    type Err = PartitionError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        Ok(Region::over_own_keys(text.parse()?))
    }
}

/// Hitting times indexed by target key.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeVector {
    times: BTreeMap<TargetKey, f64>,
}

impl TimeVector {
    pub fn new<I: IntoIterator<Item = (TargetKey, f64)>>(entries: I) -> Result<Self, PartitionError> {
        let mut times = BTreeMap::new();
        for (key, value) in entries {
            if !(value.is_finite() && value >= 0.0) {
                return Err(PartitionError::InvalidTime { key, value });
            }
            times.insert(key, value);
        }
        Ok(TimeVector { times })
    }

    pub fn get(&self, key: TargetKey) -> Option<f64> {
        self.times.get(&key).copied()
    }

    pub fn keys(&self) -> Vec<TargetKey> {
        self.times.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TargetKey, f64)> + '_ {
        self.times.iter().map(|(&k, &v)| (k, v))
    }

    /// Common time of each block of `s`, in block order (the `t̄_n`).
    pub fn block_times(&self, s: &SubPartition) -> Result<Vec<f64>, PartitionError> {
        s.blocks()
            .iter()
            .enumerate()
            .map(|(n, block)| {
                let first = self.get(block[0]).ok_or(PartitionError::MissingTime(block[0]))?;
                for &k in block {
                    let v = self.get(k).ok_or(PartitionError::MissingTime(k))?;
                    if v != first {
                        return Err(PartitionError::UnequalBlock { block: n });
                    }
                }
                Ok(first)
            })
            .collect()
    }
}

/// The region containing `t`: blocks group bit-equal times, ordered by time.
pub fn classify(t: &TimeVector) -> Region {
    classify_with_tolerance(t, 0.0)
}

/// Like [`classify`], but sorted times closer than `eps` to the start of
/// their running group are merged into it.
pub fn classify_with_tolerance(t: &TimeVector, eps: f64) -> Region {
    let mut entries: Vec<(f64, TargetKey)> = t.iter().map(|(k, v)| (v, k)).collect();
    entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut blocks: Vec<Vec<TargetKey>> = Vec::new();
    let mut anchor = f64::NAN;
    for (v, k) in entries {
        let same = !blocks.is_empty() && (v == anchor || (eps > 0.0 && v - anchor <= eps));
        if same {
            blocks.last_mut().expect("nonempty").push(k);
        } else {
            blocks.push(vec![k]);
            anchor = v;
        }
    }
    Region::over_own_keys(SubPartition::new(blocks).expect("keys of a map are distinct"))
}

/// Every ordered partition of `keys`, each once, in lexicographic block order.
pub fn enumerate_partitions(keys: &[TargetKey]) -> Result<Vec<Region>, PartitionError> {
    enumerate_partitions_capped(keys, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_partitions_capped(keys: &[TargetKey], cap: usize) -> Result<Vec<Region>, PartitionError> {
    let distinct: BTreeSet<_> = keys.iter().copied().collect();
    if distinct.len() != keys.len() {
        let dup = keys.iter().find(|k| keys.iter().filter(|j| j == k).count() > 1);
        return Err(PartitionError::Overlap(*dup.expect("a duplicate exists")));
    }
    if keys.len() > cap {
        return Err(PartitionError::TooLarge { size: keys.len(), cap });
    }
    let mut current: Vec<Vec<Vec<TargetKey>>> = vec![Vec::new()];
    for &k in &distinct {
        let mut next = Vec::new();
        for blocks in &current {
            for i in 0..blocks.len() {
                let mut joined = blocks.clone();
                joined[i].push(k);
                next.push(joined);
            }
            for gap in 0..=blocks.len() {
                let mut inserted = blocks.clone();
                inserted.insert(gap, vec![k]);
                next.push(inserted);
            }
        }
        current = next;
    }
    let mut regions: Vec<Region> = current
        .into_iter()
        .filter(|b| !b.is_empty())
        .map(|b| Region::over_own_keys(SubPartition::new(b).expect("disjoint by construction")))
        .collect();
    regions.sort();
    Ok(regions)
}

/// Number of ordered partitions of an `n`-element set.
pub fn fubini_number(n: usize) -> u128 {
    // a(n) = Σ_{k=1}^{n} C(n,k) a(n−k)
    let mut a = vec![1u128; n + 1];
    for m in 1..=n {
        let mut binom = 1u128;
        let mut sum = 0u128;
        for k in 1..=m {
            binom = binom * (m - k + 1) as u128 / k as u128;
            sum += binom * a[m - k];
        }
        a[m] = sum;
    }
    a[n]
}

/// `S(s)`: union of the targets mentioned by `s`.
pub fn union_targets(model: &IntensityModel, s: &SubPartition) -> Result<StateSet, PartitionError> {
    Ok(model.union_of(s.blocks().iter().flatten())?)
}

/// `∩_{k ∈ block} Γ_k`.
pub fn block_intersection(model: &IntensityModel, block: &[TargetKey]) -> Result<StateSet, PartitionError> {
    Ok(model.intersection_of(block)?)
}

/// Waiting and target sets `(W_n, T_n)` for each block of `s`:
/// `W_n` is the complement of the targets not yet hit before block `n`, and
/// `T_n` the states hitting exactly block `n` from `W_n`.
pub fn waiting_target_sets(
    model: &IntensityModel,
    s: &SubPartition,
) -> Result<Vec<(StateSet, StateSet)>, PartitionError> {
    let mut waits = Vec::with_capacity(s.len() + 1);
    for n in 0..=s.len() {
        waits.push(union_targets(model, &s.left_shift(n)?)?.complement());
    }
    let mut out = Vec::with_capacity(s.len());
    for (n, block) in s.blocks().iter().enumerate() {
        let target = block_intersection(model, block)?.intersection(&waits[n + 1]);
        out.push((waits[n].clone(), target));
    }
    Ok(out)
}

/// All sequences of distinct elements of `0..n` (including the empty one),
/// shortest first and lexicographic within a length.
pub fn subpermutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..n {
        let mut next = Vec::new();
        for seq in &frontier {
            for i in 0..n {
                if !seq.contains(&i) {
                    let mut longer = seq.clone();
                    longer.push(i);
                    next.push(longer);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}
