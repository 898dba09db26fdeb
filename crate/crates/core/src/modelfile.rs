//! TOML model files.
//!
//! Explicit form:
//!
//! ```toml
//! states = ["idle", "busy", "down"]
//! rates = [["idle", "busy", 2.0], ["busy", "down", 0.5]]
//!
//! [targets]
//! 1 = ["down"]
//!
//! [alpha]
//! idle = 1.0
//! ```
//!
//! Diagonal rates are not written; each is minus its row's off-diagonal sum.
//! `alpha` may also be the string `"uniform"` or `"uniform-off-targets"`.
//!
//! Lattice form, replacing `states` and `rates`:
//!
//! ```toml
//! alpha = "uniform-off-targets"
//!
//! [lattice]
//! shape = [3, 3, 3]
//! targets = "zero-faces"
//! increments = [
//!     { step = [1, 0, 0], rate = 2.0 },
//!     { step = [-1, 0, 0], rate = 1.0 },
//! ]
//! ```
//!
//! States are the points `z` with `0 <= z_k < shape_k`, labelled `(z_1,z_2,...)`
//! in lexicographic order. A move `z → z + step` whose end point leaves the
//! box is suppressed (reflecting faces). With `targets = "zero-faces"`,
//! target `k` is `{z : z_k = 0}` and is absorbing: every move that changes
//! coordinate `k` is suppressed while `z_k = 0`. With `targets = "none"` the
//! `[targets]` table names the targets by label.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, RowDVector};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Error, Result};
use crate::mcore::{DiagonalPolicy, IntensityModel, StateSet, StateSpace, TargetKey};

/// `[from, to, rate]`
type RawRate = (Spanned<String>, Spanned<String>, f64);

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    states: Option<Spanned<Vec<Spanned<String>>>>,
    rates: Option<Vec<Spanned<RawRate>>>,
    targets: Option<BTreeMap<Spanned<String>, Vec<Spanned<String>>>>,
    alpha: Option<Spanned<toml::Value>>,
    lattice: Option<Spanned<RawLattice>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Increment {
    pub step: Vec<i64>,
    pub rate: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLattice {
    shape: Vec<usize>,
    #[serde(default = "default_lattice_targets")]
    targets: String,
    increments: Vec<Spanned<Increment>>,
}

fn default_lattice_targets() -> String {
    "zero-faces".into()
}

/// Locates byte offsets in the source text.
struct Source<'a> {
    path: &'a str,
    text: &'a str,
}

impl Source<'_> {
    /// Span of the first occurrence of `key` inside `within`, bare or quoted.
    fn find_key(&self, within: Range<usize>, key: &str) -> Option<Range<usize>> {
        let end = within.end.min(self.text.len());
        let region = &self.text[within.start.min(end)..end];
        let quoted = format!("\"{key}\"");
        region
            .find(&quoted)
            .or_else(|| region.find(key))
            .map(|off| within.start + off..within.start + off + key.len())
            .or(Some(within))
    }

    fn error(&self, span: Option<Range<usize>>, message: impl Into<String>) -> Error {
        let (line, column) = match span {
            Some(r) => {
                let before = &self.text[..r.start.min(self.text.len())];
                let line = before.matches('\n').count() + 1;
                let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
                (line, column)
            }
            None => (1, 1),
        };
        Error::Parse {
            path: self.path.to_string(),
            line,
            column,
            message: message.into(),
        }
    }
}

fn lattice_label(z: &[usize]) -> String {
    let parts: Vec<String> = z.iter().map(|c| c.to_string()).collect();
    format!("({})", parts.join(","))
}

fn lattice_points(shape: &[usize]) -> Vec<Vec<usize>> {
    let mut points = vec![vec![]];
    for &m in shape {
        points = points
            .into_iter()
            .flat_map(|p| {
                (0..m).map(move |c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    points
}

/// States, off-diagonal rates and targets of a lattice description.
struct Expanded {
    labels: Vec<String>,
    lambda: DMatrix<f64>,
    targets: BTreeMap<TargetKey, StateSet>,
}

fn expand_lattice(src: &Source<'_>, lat: &Spanned<RawLattice>) -> Result<Expanded> {
    let l = lat.get_ref();
    let span = Some(lat.span());
    let d = l.shape.len();
    if d == 0 || l.shape.contains(&0) {
        return Err(src.error(span, "lattice shape must be a nonempty list of positive sizes"));
    }
    let total = l.shape.iter().try_fold(1usize, |acc, &m| acc.checked_mul(m));
    if total.is_none_or(|n| n > 4096) {
        return Err(src.error(span, "lattice has more than 4096 states"));
    }
    let zero_faces = match l.targets.as_str() {
        "zero-faces" => true,
        "none" => false,
        other => {
            return Err(src.error(span, format!("unknown lattice target rule `{other}`; expected `zero-faces` or `none`")))
        }
    };
    for inc in &l.increments {
        let i = inc.get_ref();
        if i.step.len() != d {
            return Err(src.error(Some(inc.span()), format!("step has {} coordinates, lattice has {d}", i.step.len())));
        }
        if i.step.iter().all(|&s| s == 0) {
            return Err(src.error(Some(inc.span()), "step must be nonzero"));
        }
        if !(i.rate >= 0.0 && i.rate.is_finite()) {
            return Err(src.error(Some(inc.span()), format!("rate must be finite and nonnegative, got {}", i.rate)));
        }
    }
    let points = lattice_points(&l.shape);
    let n = points.len();
    let index = |z: &[usize]| z.iter().zip(&l.shape).fold(0usize, |acc, (&c, &m)| acc * m + c);
    let mut lambda = DMatrix::zeros(n, n);
    for (i, z) in points.iter().enumerate() {
        for inc in &l.increments {
            let inc = inc.get_ref();
            let end: Option<Vec<usize>> = z
                .iter()
                .zip(&inc.step)
                .zip(&l.shape)
                .map(|((&c, &s), &m)| {
                    let e = c as i64 + s;
                    (e >= 0 && e < m as i64).then_some(e as usize)
                })
                .collect();
            let Some(end) = end else { continue };
            if zero_faces && inc.step.iter().zip(z).any(|(&s, &c)| s != 0 && c == 0) {
                continue;
            }
            lambda[(i, index(&end))] += inc.rate;
        }
    }
    let mut targets = BTreeMap::new();
    if zero_faces {
        for k in 0..d {
            let set = StateSet::from_indices(n, points.iter().enumerate().filter(|(_, z)| z[k] == 0).map(|(i, _)| i));
            targets.insert(k as TargetKey + 1, set);
        }
    }
    Ok(Expanded {
        labels: points.iter().map(|z| lattice_label(z)).collect(),
        lambda,
        targets,
    })
}

fn parse_key(src: &Source<'_>, key: &Spanned<String>) -> Result<TargetKey> {
    key.get_ref()
        .trim()
        .parse::<TargetKey>()
        .map_err(|_| src.error(Some(key.span()), format!("target key `{}` is not a nonnegative integer", key.get_ref())))
}

fn lookup(src: &Source<'_>, space: &StateSpace, label: &Spanned<String>) -> Result<usize> {
    space
        .index_of(label.get_ref())
        .map_err(|_| src.error(Some(label.span()), format!("unknown state label `{}`", label.get_ref())))
}

/// Parses a model from TOML text; `path` only labels error messages.
pub fn parse_model(text: &str, path: &str) -> Result<IntensityModel> {
    let src = Source { path, text };
    let raw: RawModel = toml::from_str(text).map_err(|e| src.error(e.span(), e.message().to_string()))?;
    let (space, mut lambda, mut targets) = match (&raw.lattice, &raw.states) {
        (Some(lat), None) => {
            if let Some(r) = raw.rates.as_ref().and_then(|r| r.first()) {
                return Err(src.error(Some(r.span()), "`rates` cannot be combined with `[lattice]`"));
            }
            let e = expand_lattice(&src, lat)?;
            (StateSpace::new(e.labels)?, e.lambda, e.targets)
        }
        (Some(lat), Some(_)) => return Err(src.error(Some(lat.span()), "`states` cannot be combined with `[lattice]`")),
        (None, Some(states)) => {
            let mut seen = BTreeMap::new();
            for s in states.get_ref() {
                if seen.insert(s.get_ref().as_str(), ()).is_some() {
                    return Err(src.error(Some(s.span()), format!("duplicate state label `{}`", s.get_ref())));
                }
            }
            let space = StateSpace::new(states.get_ref().iter().map(|s| s.get_ref().clone()))
                .map_err(|e| src.error(Some(states.span()), e.to_string()))?;
            let n = space.len();
            let mut lambda = DMatrix::zeros(n, n);
            let mut given = BTreeMap::new();
            for entry in raw.rates.iter().flatten() {
                let (from, to, rate) = entry.get_ref();
                let (i, j) = (lookup(&src, &space, from)?, lookup(&src, &space, to)?);
                if i == j {
                    return Err(src.error(Some(entry.span()), "self-transition rates are implied by the row sums"));
                }
                if !(*rate >= 0.0 && rate.is_finite()) {
                    return Err(src.error(Some(entry.span()), format!("rate must be finite and nonnegative, got {rate}")));
                }
                if given.insert((i, j), ()).is_some() {
                    return Err(src.error(
                        Some(entry.span()),
                        format!("duplicate rate from `{}` to `{}`", from.get_ref(), to.get_ref()),
                    ));
                }
                lambda[(i, j)] = *rate;
            }
            (space, lambda, BTreeMap::new())
        }
        (None, None) => return Err(src.error(None, "model needs either `states` and `rates` or a `[lattice]` table")),
    };
    let n = space.len();
    if let Some(table) = &raw.targets {
        if !targets.is_empty() {
            let first = table.keys().next().map(|k| k.span());
            return Err(src.error(first, "explicit targets conflict with the lattice target rule"));
        }
        for (key, labels) in table {
            let k = parse_key(&src, key)?;
            let mut set = StateSet::empty(n);
            for l in labels {
                set.insert(lookup(&src, &space, l)?);
            }
            if targets.insert(k, set).is_some() {
                return Err(src.error(Some(key.span()), format!("duplicate target key {k}")));
            }
        }
    }
    let union = targets.values().fold(StateSet::empty(n), |acc, s| acc.union(s));
    let alpha = match &raw.alpha {
        None => return Err(src.error(None, "missing initial distribution `alpha`")),
        Some(a) => match a.get_ref() {
            toml::Value::String(rule) => {
                let support: Vec<usize> = match rule.as_str() {
                    "uniform" => (0..n).collect(),
                    "uniform-off-targets" => (0..n).filter(|&i| !union.contains(i)).collect(),
                    other => {
                        return Err(src.error(
                            Some(a.span()),
                            format!("unknown alpha rule `{other}`; expected `uniform` or `uniform-off-targets`"),
                        ))
                    }
                };
                if support.is_empty() {
                    return Err(src.error(Some(a.span()), "alpha rule selects no states"));
                }
                let mut alpha = RowDVector::zeros(n);
                let w = 1.0 / support.len() as f64;
                for i in support {
                    alpha[i] = w;
                }
                alpha
            }
            toml::Value::Table(weights) => {
                let mut alpha = RowDVector::zeros(n);
                for (label, w) in weights {
                    // key spans are not kept inside a dynamic value; search the table text
                    let at = src.find_key(a.span(), label);
                    let w = match w {
                        toml::Value::Float(x) => *x,
                        toml::Value::Integer(x) => *x as f64,
                        _ => return Err(src.error(at, format!("weight of `{label}` must be a number"))),
                    };
                    let i = space
                        .index_of(label)
                        .map_err(|_| src.error(at, format!("unknown state label `{label}`")))?;
                    alpha[i] = w;
                }
                alpha
            }
            _ => return Err(src.error(Some(a.span()), "alpha must be a table of weights or a rule name")),
        },
    };
    for i in 0..n {
        lambda[(i, i)] = 0.0;
    }
    IntensityModel::with_policy(space, lambda, targets, alpha, DiagonalPolicy::Recompute)
        .map_err(|e| src.error(None, format!("invalid model: {e}")))
}

/// Reads and parses a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<IntensityModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_model(&text, &path.display().to_string())
}

#[derive(Serialize)]
struct ExplicitModel<'a> {
    states: &'a [String],
    rates: Vec<(&'a str, &'a str, f64)>,
    targets: BTreeMap<String, Vec<&'a str>>,
    alpha: BTreeMap<&'a str, f64>,
}

/// Writes `model` in the explicit form. Parsing the output gives back a
/// model with bit-identical rates and initial law.
pub fn to_toml(model: &IntensityModel) -> String {
    let labels = model.space().labels();
    let lambda = model.lambda();
    let n = model.n_states();
    let mut rates = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && lambda[(i, j)] != 0.0 {
                rates.push((labels[i].as_str(), labels[j].as_str(), lambda[(i, j)]));
            }
        }
    }
    let targets = model
        .targets()
        .iter()
        .map(|(k, set)| (k.to_string(), set.iter().map(|i| labels[i].as_str()).collect()))
        .collect();
    let alpha = model
        .alpha()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w != 0.0)
        .map(|(i, &w)| (labels[i].as_str(), w))
        .collect();
    let doc = ExplicitModel {
        states: labels,
        rates,
        targets,
        alpha,
    };
    toml::to_string(&doc).expect("model serializes")
}

/// The bundled 27-state lattice model with three absorbing targets.
pub const EXAMPLE_LATTICE: &str = include_str!("../models/example_s5.toml");

pub fn example_lattice_model() -> IntensityModel {
    parse_model(EXAMPLE_LATTICE, "example_s5.toml").expect("bundled model is valid")
}
