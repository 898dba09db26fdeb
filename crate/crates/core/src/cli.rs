//! Command-line front end: `density`, `tail`, `simulate`, `verify`, `inspect`.
//!
//! Every command produces a [`ResultTable`], printed as CSV (or JSON with
//! `--json`). Numbers carry 12 significant digits and rows come out in a
//! fixed order whatever the number of worker threads.

use std::collections::BTreeMap;
use std::ffi::OsString;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expmat::{try_integrate_interval, QuadratureRule};
use crate::fixtures::{exponential_chain, pure_birth};
use crate::hitting::{density_single, joint_density, joint_density_absorbing, survival_single, DensityQuery};
use crate::mcore::{IntensityModel, StateSet, TargetKey};
use crate::modelfile::{example_lattice_model, load_model, to_toml};
use crate::partitions::{enumerate_partitions, fubini_number, subpermutations, Region, SubPartition, TimeVector};
use crate::simkit::{
    binned_density, default_horizon, estimate_constraints, region_frequencies, EmpiricalEstimate, TimeBox,
};
use crate::tails::{
    canonicalize, default_tail_rule, equality_prob, parse_constraints, raw_probability, Constraint, TailEngine,
    TailQuery,
};

/// Name that selects the bundled lattice model instead of a file.
pub const BUILTIN_EXAMPLE: &str = "builtin:example_s5";

/// Formats like C's `%.12g`: 12 significant digits, trailing zeros dropped.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..12).contains(&exp) {
        trim(&format!("{:.*}", (11 - exp) as usize, x))
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    fn render(&self) -> String {
        match self {
            Cell::Num(x) => fmt_num(*x),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

/// Rows of a command's output, with notes for the user printed separately.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub notes: Vec<String>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl ResultTable {
    pub fn new<S: Into<String>, I: IntoIterator<Item = S>>(columns: I) -> Self {
        ResultTable {
            columns: columns.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric value in column `name` of the first row whose first cell is `query`.
    pub fn lookup(&self, query: &str, name: &str) -> Option<f64> {
        let c = self.column(name)?;
        self.rows.iter().find(|r| r[0] == Cell::text(query)).and_then(|r| match r[c] {
            Cell::Num(x) => Some(x),
            _ => None,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self.columns.iter().map(|c| csv_field(c)).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.rows {
            let fields: Vec<String> = row.iter().map(|c| csv_field(&c.render())).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: serde_json::Map<String, serde_json::Value> = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(name, cell)| {
                        let v = match cell {
                            Cell::Num(x) if x.is_finite() => {
                                serde_json::json!(fmt_num(*x).parse::<f64>().expect("formatted number parses"))
                            }
                            Cell::Num(x) => serde_json::Value::String(fmt_num(*x)),
                            Cell::Text(s) => serde_json::Value::String(s.clone()),
                            Cell::Empty => serde_json::Value::Null,
                        };
                        (name.clone(), v)
                    })
                    .collect();
                serde_json::Value::Object(obj)
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&rows).expect("rows serialize");
        s.push('\n');
        s
    }
}

/// Reads a model file, or the bundled model for [`BUILTIN_EXAMPLE`].
pub fn resolve_model(spec: &str) -> Result<IntensityModel> {
    if spec == BUILTIN_EXAMPLE {
        Ok(example_lattice_model())
    } else {
        load_model(spec)
    }
}

/// One axis of a grid: `n` equal cells on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

/// Parses `lo:hi:n` axes separated by commas.
pub fn parse_grid(text: &str) -> Result<Vec<GridAxis>> {
    text.split(',')
        .map(|axis| {
            let parts: Vec<&str> = axis.split(':').map(str::trim).collect();
            let bad = || Error::domain(format!("grid axis `{}` is not of the form lo:hi:n", axis.trim()));
            if parts.len() != 3 {
                return Err(bad());
            }
            let lo: f64 = parts[0].parse().map_err(|_| bad())?;
            let hi: f64 = parts[1].parse().map_err(|_| bad())?;
            let n: usize = parts[2].parse().map_err(|_| bad())?;
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi > lo && n > 0) {
                return Err(Error::domain(format!(
                    "grid axis `{}` needs 0 <= lo < hi and n >= 1",
                    axis.trim()
                )));
            }
            Ok(GridAxis { lo, hi, n })
        })
        .collect()
}

/// Cells of the grid that lie in the ordered cone `hi_n <= lo_{n+1}`, in
/// lexicographic order of their indices.
pub fn grid_cells(axes: &[GridAxis]) -> Vec<TimeBox> {
    let mut cells = vec![TimeBox { lo: vec![], hi: vec![] }];
    for a in axes {
        let h = (a.hi - a.lo) / a.n as f64;
        cells = cells
            .into_iter()
            .flat_map(|c| {
                (0..a.n).map(move |i| {
                    let mut c = c.clone();
                    c.lo.push(a.lo + i as f64 * h);
                    c.hi.push(if i + 1 == a.n { a.hi } else { a.lo + (i + 1) as f64 * h });
                    c
                })
            })
            .collect();
    }
    cells
        .into_iter()
        .filter(|c| (1..c.lo.len()).all(|d| c.hi[d - 1] <= c.lo[d]))
        .collect()
}

fn center(b: &TimeBox) -> Vec<f64> {
    b.lo.iter().zip(&b.hi).map(|(l, h)| 0.5 * (l + h)).collect()
}

/// Parses `1=0.5, 2=0.7` into a time vector.
pub fn parse_times(text: &str) -> Result<TimeVector> {
    let mut entries = Vec::new();
    for item in text.split(',') {
        let bad = || Error::domain(format!("time entry `{}` is not of the form key=value", item.trim()));
        let (k, v) = item.split_once('=').ok_or_else(bad)?;
        let k: TargetKey = k.trim().parse().map_err(|_| bad())?;
        let v: f64 = v.trim().parse().map_err(|_| bad())?;
        entries.push((k, v));
    }
    Ok(TimeVector::new(entries)?)
}

fn parse_region(text: &str) -> Result<Region> {
    Ok(text.parse::<Region>()?)
}

/// Average of `f` over a box, by tensor Gauss–Legendre.
fn box_average<F>(f: &F, b: &TimeBox) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    fn nest<F: Fn(&[f64]) -> Result<f64>>(f: &F, b: &TimeBox, prefix: &mut Vec<f64>) -> Result<f64> {
        let d = prefix.len();
        if d == b.lo.len() {
            return f(prefix);
        }
        let rule = QuadratureRule::fixed(1);
        let v = try_integrate_interval::<Error, _>(
            |x| {
                prefix.push(x);
                let r = nest(f, b, prefix);
                prefix.pop();
                Ok(DVector::from_element(1, r?))
            },
            b.lo[d],
            b.hi[d],
            &rule,
        )?;
        Ok(v[0])
    }
    Ok(nest(f, b, &mut Vec::new())? / b.volume())
}

/// What `density` evaluates.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityRequest {
    /// One time vector; the region is read off its ties unless given.
    Point { t: TimeVector, region: Option<Region> },
    /// Cells of a grid in block-time coordinates of `region`, evaluated at
    /// the centers or, with `average`, averaged over each cell.
    Grid { region: Region, axes: Vec<GridAxis>, average: bool },
}

pub fn cmd_density(model: &IntensityModel, req: &DensityRequest) -> Result<ResultTable> {
    match req {
        DensityRequest::Point { t, region } => {
            let q = match region {
                Some(r) => DensityQuery::in_region(t.clone(), r.clone()),
                None => DensityQuery::new(t.clone()),
            };
            let v = joint_density(model, &q)?;
            let mut table = ResultTable::new(
                ["query", "region"]
                    .into_iter()
                    .map(String::from)
                    .chain(t.keys().iter().map(|k| format!("t({k})")))
                    .chain(["value", "method", "stderr"].map(String::from)),
            );
            let mut row = vec![Cell::text("density"), Cell::text(v.region.to_string())];
            row.extend(t.iter().map(|(_, x)| Cell::Num(x)));
            row.extend([Cell::Num(v.value), Cell::text("analytic"), Cell::Empty]);
            table.push(row);
            Ok(table)
        }
        DensityRequest::Grid { region, axes, average } => {
            if axes.len() != region.len() {
                return Err(Error::inconsistent(format!(
                    "grid has {} axes but region {region} has {} blocks",
                    axes.len(),
                    region.len()
                )));
            }
            for k in region.keys() {
                model.target(k)?;
            }
            let cells = grid_cells(axes);
            let f = |x: &[f64]| -> Result<f64> {
                Ok(joint_density(model, &DensityQuery::from_block_times(region.clone(), x)?)?.value)
            };
            let values: Vec<f64> = cells
                .par_iter()
                .map(|c| if *average { box_average(&f, c) } else { f(&center(c)) })
                .collect::<Result<_>>()?;
            let mut table = grid_table(region.len());
            let label = if *average { "density-cell-average" } else { "density" };
            for (c, v) in cells.iter().zip(values) {
                let mut row = vec![Cell::text(label), Cell::text(region.to_string())];
                row.extend(center(c).into_iter().map(Cell::Num));
                row.extend([Cell::Num(v), Cell::text("analytic"), Cell::Empty]);
                table.push(row);
            }
            Ok(table)
        }
    }
}

fn grid_table(dim: usize) -> ResultTable {
    ResultTable::new(
        ["query", "region"]
            .into_iter()
            .map(String::from)
            .chain((1..=dim).map(|n| format!("tbar({n})")))
            .chain(["value", "method", "stderr"].map(String::from)),
    )
}

/// Path count, horizon and seed of a simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub n: usize,
    pub horizon: Option<f64>,
    pub seed: u64,
}

impl SimSettings {
    fn horizon(&self, model: &IntensityModel) -> f64 {
        self.horizon.unwrap_or_else(|| default_horizon(model))
    }
}

fn tail_table() -> ResultTable {
    ResultTable::new(["query", "value", "method", "stderr", "censored"])
}

fn simulated_row(query: String, e: &EmpiricalEstimate) -> Vec<Cell> {
    vec![
        Cell::Text(query),
        Cell::Num(e.value),
        Cell::text("simulated"),
        Cell::Num(e.stderr),
        Cell::Num(e.censored),
    ]
}

fn engine_rule(tol: Option<f64>) -> QuadratureRule {
    tol.map_or_else(default_tail_rule, QuadratureRule::adaptive)
}

/// Splits the constraint expression into canonical events and lists each
/// probability and the total; with `sim`, adds simulated rows.
pub fn cmd_tail(model: &IntensityModel, expr: &str, sim: Option<SimSettings>, tol: Option<f64>) -> Result<ResultTable> {
    let constraints = parse_constraints(expr)?;
    for c in &constraints {
        for k in c.keys() {
            model.target(k)?;
        }
    }
    let queries = canonicalize(&constraints)?;
    let engine = TailEngine::with_rule(model, engine_rule(tol));
    let mut table = tail_table();
    if queries.is_empty() {
        table.notes.push("constraints contradict each other; the event is empty".into());
    }
    let values: Vec<f64> = queries
        .par_iter()
        .map(|q| raw_probability(&engine, &q.constraints()))
        .collect::<Result<_>>()?;
    for (q, v) in queries.iter().zip(&values) {
        table.push(vec![Cell::text(q.to_string()), Cell::Num(*v), Cell::text("analytic"), Cell::Empty, Cell::Empty]);
    }
    let total = raw_probability(&engine, &constraints)?;
    table.push(vec![Cell::text("total"), Cell::Num(total), Cell::text("analytic"), Cell::Empty, Cell::Empty]);
    if let [Constraint::Equal(j, k)] = constraints[..] {
        if let (Ok(q), true) = (equality_prob(model, j, k), model.alpha_mass(&model.union_of([j, k].iter())?) == 0.0) {
            table.push(vec![
                Cell::text(format!("equality system tau({j}) == tau({k})")),
                Cell::Num((model.alpha() * q)[0]),
                Cell::text("analytic"),
                Cell::Empty,
                Cell::Empty,
            ]);
        }
    }
    if let Some(s) = sim {
        let horizon = s.horizon(model);
        for q in &queries {
            let e = estimate_constraints(model, &q.constraints(), s.n, horizon, s.seed)?;
            table.push(simulated_row(q.to_string(), &e));
        }
        let e = estimate_constraints(model, &constraints, s.n, horizon, s.seed)?;
        table.push(simulated_row("total".into(), &e));
    }
    Ok(table)
}

/// Which empirical report `simulate` produces.
#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    /// Frequency of every region over all targets.
    Regions,
    /// Canonical events of a constraint expression.
    Tails(String),
    /// Histogram density over grid cells of a region.
    Histogram { region: Region, axes: Vec<GridAxis> },
}

pub fn cmd_simulate(model: &IntensityModel, sim: SimSettings, report: &Report) -> Result<ResultTable> {
    let horizon = sim.horizon(model);
    match report {
        Report::Regions => {
            let keys = model.target_keys();
            let rep = region_frequencies(model, &keys, sim.n, horizon, sim.seed)?;
            let mut table = tail_table();
            let censored = rep.censored as f64 / rep.n as f64;
            let freq = |count: usize| EmpiricalEstimate {
                value: count as f64 / rep.n as f64,
                stderr: {
                    let p = count as f64 / rep.n as f64;
                    (p * (1.0 - p) / rep.n as f64).sqrt()
                },
                n: rep.n,
                seed: sim.seed,
                censored,
            };
            let mut distinct = 0;
            for (region, &count) in &rep.regions {
                if region.partition().all_singletons() {
                    distinct += count;
                }
                table.push(simulated_row(region.to_string(), &freq(count)));
            }
            table.push(simulated_row("all distinct".into(), &freq(distinct)));
            table.push(simulated_row("some target never hit".into(), &freq(rep.never)));
            table.push(simulated_row("censored at horizon".into(), &freq(rep.censored)));
            if rep.censored > 0 {
                table.notes.push(format!(
                    "{} of {} paths reached the horizon {} with a target still unhit",
                    rep.censored,
                    rep.n,
                    fmt_num(horizon)
                ));
            }
            Ok(table)
        }
        Report::Tails(expr) => {
            let constraints = parse_constraints(expr)?;
            let mut table = tail_table();
            for q in canonicalize(&constraints)? {
                let e = estimate_constraints(model, &q.constraints(), sim.n, horizon, sim.seed)?;
                table.push(simulated_row(q.to_string(), &e));
            }
            let e = estimate_constraints(model, &constraints, sim.n, horizon, sim.seed)?;
            table.push(simulated_row("total".into(), &e));
            Ok(table)
        }
        Report::Histogram { region, axes } => {
            if axes.len() != region.len() {
                return Err(Error::inconsistent(format!(
                    "grid has {} axes but region {region} has {} blocks",
                    axes.len(),
                    region.len()
                )));
            }
            let cells = grid_cells(axes);
            let bins = binned_density(model, region, &cells, sim.n, horizon, sim.seed)?;
            let mut table = grid_table(region.len());
            for b in bins {
                let mut row = vec![Cell::text("histogram"), Cell::text(region.to_string())];
                row.extend(center(&b.bin).into_iter().map(Cell::Num));
                row.extend([Cell::Num(b.density), Cell::text("simulated"), Cell::Num(b.density_stderr)]);
                table.push(row);
            }
            Ok(table)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// Closed forms: exponential and Poisson reductions, partition counts.
    SpecialCases,
    /// Agreement between independent analytic routes on the model.
    CrossOracles,
    /// Analytic values against simulation of the model.
    Simulation,
}

struct Checks {
    table: ResultTable,
}

impl Checks {
    fn new() -> Self {
        Checks {
            table: ResultTable::new(["check", "measured", "reference", "discrepancy", "tolerance", "status"]),
        }
    }

    fn push(&mut self, name: String, measured: f64, reference: f64, discrepancy: f64, tol: f64) {
        let ok = discrepancy <= tol;
        self.table.push(vec![
            Cell::Text(name),
            Cell::Num(measured),
            Cell::Num(reference),
            Cell::Num(discrepancy),
            Cell::Num(tol),
            Cell::text(if ok { "PASS" } else { "FAIL" }),
        ]);
    }

    fn abs(&mut self, name: String, measured: f64, reference: f64, tol: f64) {
        self.push(name, measured, reference, (measured - reference).abs(), tol);
    }

    fn rel(&mut self, name: String, measured: f64, reference: f64, tol: f64) {
        let d = (measured - reference).abs() / reference.abs().max(1e-300);
        let d = if measured == reference { 0.0 } else { d };
        self.push(name, measured, reference, d, tol);
    }

    fn failure(&mut self, name: String, e: &Error) {
        self.table.push(vec![
            Cell::Text(format!("{name}: {e}")),
            Cell::Empty,
            Cell::Empty,
            Cell::Empty,
            Cell::Empty,
            Cell::text("FAIL"),
        ]);
    }
}

fn sample_times(len: usize) -> Vec<f64> {
    [0.3, 0.7, 1.2, 1.9, 2.6, 3.4, 4.1, 5.0][..len].to_vec()
}

fn all_absorbing(model: &IntensityModel) -> bool {
    model.targets().values().all(|g| model.is_absorbing(g))
}

fn special_cases(c: &mut Checks) -> Result<()> {
    for r in [0.5, 2.0] {
        let m = exponential_chain(r);
        let g = m.target(1)?.clone();
        for u in [0.1, 1.0, 5.0] {
            let d = density_single(&m, &g, &StateSet::empty(2), u)?;
            c.abs(format!("exponential density r={r} u={u}"), d, r * (-r * u).exp(), 1e-10);
            let s = survival_single(&m, &g, u)?.survival;
            c.abs(format!("exponential survival r={r} u={u}"), s, (-r * u).exp(), 1e-10);
        }
    }
    let r = 1.7;
    let m = pure_birth(3, r);
    for t in [[0.2, 0.5, 1.1], [0.05, 1.0, 1.01], [1.0, 2.0, 4.0]] {
        let q = DensityQuery::new(TimeVector::new([(1, t[0]), (2, t[1]), (3, t[2])])?);
        let f = joint_density(&m, &q)?.value;
        c.rel(format!("Poisson arrival density t={t:?}"), f, r.powi(3) * (-r * t[2]).exp(), 1e-10);
    }
    for n in 1..=4u32 {
        let keys: Vec<TargetKey> = (1..=n).collect();
        let count = enumerate_partitions(&keys)?.len() as f64;
        c.abs(format!("ordered partitions of {n} targets"), count, fubini_number(n as usize) as f64, 0.0);
    }
    c.abs("subpermutations of 2 blocks".into(), subpermutations(2).len() as f64, 5.0, 0.0);
    Ok(())
}

fn cross_oracles(model: &IntensityModel, c: &mut Checks, tol: Option<f64>) -> Result<()> {
    let keys = model.target_keys();
    let engine = TailEngine::with_rule(model, engine_rule(tol));
    let off_targets = model.alpha_mass(&model.union_of(keys.iter())?) == 0.0;
    let absorbing = all_absorbing(model);
    if off_targets {
        for region in enumerate_partitions(&keys)? {
            let q = DensityQuery::from_block_times(region.clone(), &sample_times(region.len()))?;
            let f = joint_density(model, &q)?.value;
            if absorbing {
                let g = joint_density_absorbing(model, &q)?.value;
                c.rel(format!("density absorbing form {region}"), g, f, 1e-8);
            }
        }
    }
    let t = sample_times(keys.len());
    let mut queries = vec![TailQuery::distinct(SubPartition::singletons(keys.iter().copied())?, SubPartition::empty(), t)?];
    for i in 0..keys.len() {
        for j in i + 1..keys.len() {
            let rest: Vec<TargetKey> = keys.iter().copied().filter(|&k| k != keys[i] && k != keys[j]).collect();
            let s1 = SubPartition::singletons(rest.iter().copied())?;
            let thresholds = sample_times(rest.len());
            queries.push(TailQuery::distinct(s1, SubPartition::new([vec![keys[i], keys[j]]])?, thresholds)?);
        }
    }
    if off_targets {
        for q in &queries {
            let a = engine.tail_p(q)?.value;
            let b = engine.tail_p_alt(q)?.value;
            c.abs(format!("tail recursion vs subpermutation sum {q}"), b, a, 1e-7);
            if absorbing {
                let d = engine.tail_p_absorbing(q)?.value;
                c.abs(format!("tail recursion absorbing form {q}"), d, a, 1e-8);
            }
        }
        for i in 0..keys.len() {
            for j in i + 1..keys.len() {
                let (a, b) = (keys[i], keys[j]);
                let aq = (model.alpha() * equality_prob(model, a, b)?)[0];
                let raw = raw_probability(&engine, &[Constraint::Equal(a, b)])?;
                c.abs(format!("equality system vs tail base tau({a}) == tau({b})"), aq, raw, 1e-8);
            }
        }
    }
    Ok(())
}

fn simulation_suite(model: &IntensityModel, c: &mut Checks, sim: SimSettings, tol: Option<f64>) -> Result<()> {
    let keys = model.target_keys();
    let engine = TailEngine::with_rule(model, engine_rule(tol));
    let mut events: Vec<Vec<Constraint>> = Vec::new();
    for i in 0..keys.len() {
        for j in i + 1..keys.len() {
            events.push(vec![Constraint::Equal(keys[i], keys[j])]);
        }
    }
    let mut distinct = Vec::new();
    for i in 0..keys.len() {
        for j in i + 1..keys.len() {
            distinct.push(Constraint::NotEqual(keys[i], keys[j]));
        }
    }
    if !distinct.is_empty() {
        events.push(distinct);
    }
    events.push(keys.iter().zip(sample_times(keys.len())).map(|(&k, t)| Constraint::Greater(k, t)).collect());
    let horizon = sim.horizon(model);
    for ev in events {
        let name = ev.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" && ");
        let p = raw_probability(&engine, &ev)?;
        let e = estimate_constraints(model, &ev, sim.n, horizon, sim.seed)?;
        // four binomial standard errors at the analytic value, at least 1/n
        let sd = (p * (1.0 - p) / sim.n as f64).sqrt().max(1.0 / sim.n as f64);
        c.push(format!("simulated {name}"), e.value, p, (e.value - p).abs() / sd, 4.0);
    }
    Ok(())
}

/// Runs a check suite; failures are rows of the report, not errors.
pub fn cmd_verify(model: &IntensityModel, suite: Suite, sim: SimSettings, tol: Option<f64>) -> ResultTable {
    let mut c = Checks::new();
    let outcome = match suite {
        Suite::SpecialCases => special_cases(&mut c),
        Suite::CrossOracles => cross_oracles(model, &mut c, tol),
        Suite::Simulation => simulation_suite(model, &mut c, sim, tol),
    };
    if let Err(e) = outcome {
        c.failure("suite aborted".into(), &e);
    }
    let failed = c.table.rows.iter().filter(|r| r.last() == Some(&Cell::text("FAIL"))).count();
    c.table.notes.push(format!("{} checks, {failed} failed", c.table.rows.len()));
    c.table
}

/// Summary of a model: sizes, targets and the support of `α`.
pub fn cmd_inspect_summary(model: &IntensityModel) -> ResultTable {
    let mut t = ResultTable::new(["item", "value"]);
    let labels = |s: &StateSet| s.iter().map(|i| model.space().label(i)).collect::<Vec<_>>().join(" ");
    t.push(vec![Cell::text("states"), Cell::Num(model.n_states() as f64)]);
    for (k, g) in model.targets() {
        let kind = if model.is_absorbing(g) { "absorbing" } else { "open" };
        t.push(vec![Cell::text(format!("target {k} ({kind})")), Cell::Text(labels(g))]);
    }
    let support = StateSet::from_indices(model.n_states(), (0..model.n_states()).filter(|&i| model.alpha()[i] > 0.0));
    t.push(vec![Cell::text("alpha support"), Cell::Text(labels(&support))]);
    t.push(vec![Cell::text("default horizon"), Cell::Num(default_horizon(model))]);
    for issue in model.validation().warnings() {
        t.push(vec![Cell::text("warning"), Cell::Text(issue.to_string())]);
    }
    t
}

#[derive(Debug, Parser)]
#[command(name = "phasehit", version, about = "Joint laws of first hitting times of finite Markov chains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Print rows as a JSON array instead of CSV.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ModelArg {
    /// Model file (TOML), or `builtin:example_s5`.
    pub model: String,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Number of simulated paths.
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Time at which paths are cut off [default: 20 / slowest jump rate].
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

impl SimArgs {
    fn settings(&self) -> Result<SimSettings> {
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::domain(format!("horizon must be positive and finite, got {h}")));
            }
        }
        Ok(SimSettings {
            n: self.n as usize,
            horizon: self.horizon,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the expanded model in explicit form.
    Inspect {
        #[command(flatten)]
        model: ModelArg,
        /// Print a summary table instead of the model file.
        #[arg(long)]
        summary: bool,
    },
    /// Joint density of the hitting times at a point or over a grid.
    Density {
        #[command(flatten)]
        model: ModelArg,
        /// Hitting times, e.g. `1=0.5,2=0.7,3=0.7`.
        #[arg(long, conflicts_with = "grid")]
        t: Option<String>,
        /// Region such as `{2,3}<{1}`; required with --grid.
        #[arg(long)]
        region: Option<String>,
        /// Grid in block-time coordinates, `lo:hi:n` per block.
        #[arg(long, requires = "region")]
        grid: Option<String>,
        /// Average the density over each grid cell instead of taking its center.
        #[arg(long, requires = "grid")]
        average: bool,
        /// Override the quadrature tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Probability of a conjunction such as `tau(1) > 0.5 && tau(2) == tau(3)`.
    Tail {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        expr: String,
        /// Also estimate every row from this many simulated paths.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        simulate: Option<u64>,
        #[arg(long, requires = "simulate")]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Empirical estimates from simulated paths.
    Simulate {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, value_enum, default_value_t = ReportKind::Regions)]
        report: ReportKind,
        /// Constraint expression for `--report tails`.
        #[arg(long)]
        expr: Option<String>,
        /// Region for `--report histogram`.
        #[arg(long)]
        region: Option<String>,
        /// Grid for `--report histogram`, `lo:hi:n` per block.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Run a check suite and report each check as PASS or FAIL.
    Verify {
        /// Model file [default: the bundled example].
        model: Option<String>,
        #[arg(long, value_enum)]
        suite: Suite,
        /// Paths for the simulation suite.
        #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
        budget: u64,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        tol: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    Regions,
    Tails,
    Histogram,
}

fn check_tol(tol: Option<f64>) -> Result<()> {
    match tol {
        Some(t) if !(t > 0.0 && t.is_finite()) => Err(Error::domain(format!("--tol must be positive, got {t}"))),
        _ => Ok(()),
    }
}

/// Output of a command: the text for stdout and notes for stderr.
pub struct Output {
    pub stdout: String,
    pub notes: Vec<String>,
}

fn render(table: ResultTable, json: bool) -> Output {
    Output {
        stdout: if json { table.to_json() } else { table.to_csv() },
        notes: table.notes,
    }
}

/// Executes a parsed command line.
pub fn execute(cli: &Cli) -> Result<Output> {
    let json = cli.json;
    match &cli.command {
        Command::Inspect { model, summary } => {
            let m = resolve_model(&model.model)?;
            if *summary {
                Ok(render(cmd_inspect_summary(&m), json))
            } else if json {
                let value: toml::Value = toml::from_str(&to_toml(&m)).expect("serialized model parses");
                let mut s = serde_json::to_string_pretty(&value).expect("model serializes");
                s.push('\n');
                Ok(Output { stdout: s, notes: vec![] })
            } else {
                Ok(Output { stdout: to_toml(&m), notes: vec![] })
            }
        }
        Command::Density { model, t, region, grid, average, tol } => {
            check_tol(*tol)?;
            let m = resolve_model(&model.model)?;
            let region = region.as_deref().map(parse_region).transpose()?;
            let req = match (t, grid, region) {
                (Some(t), None, region) => DensityRequest::Point { t: parse_times(t)?, region },
                (None, Some(g), Some(region)) => DensityRequest::Grid {
                    region,
                    axes: parse_grid(g)?,
                    average: *average,
                },
                _ => return Err(Error::inconsistent("density needs either --t or --region with --grid")),
            };
            Ok(render(cmd_density(&m, &req)?, json))
        }
        Command::Tail { model, expr, simulate, horizon, seed, tol } => {
            check_tol(*tol)?;
            let m = resolve_model(&model.model)?;
            let sim = simulate.map(|n| SimSettings {
                n: n as usize,
                horizon: *horizon,
                seed: *seed,
            });
            Ok(render(cmd_tail(&m, expr, sim, *tol)?, json))
        }
        Command::Simulate { model, sim, report, expr, region, grid } => {
            let m = resolve_model(&model.model)?;
            let settings = sim.settings()?;
            let report = match report {
                ReportKind::Regions => {
                    if expr.is_some() || region.is_some() || grid.is_some() {
                        return Err(Error::inconsistent("--report regions takes no --expr, --region or --grid"));
                    }
                    Report::Regions
                }
                ReportKind::Tails => {
                    if region.is_some() || grid.is_some() {
                        return Err(Error::inconsistent("--report tails takes no --region or --grid"));
                    }
                    Report::Tails(expr.clone().ok_or_else(|| Error::inconsistent("--report tails needs --expr"))?)
                }
                ReportKind::Histogram => {
                    if expr.is_some() {
                        return Err(Error::inconsistent("--report histogram takes no --expr"));
                    }
                    match (region, grid) {
                        (Some(r), Some(g)) => Report::Histogram {
                            region: parse_region(r)?,
                            axes: parse_grid(g)?,
                        },
                        _ => return Err(Error::inconsistent("--report histogram needs --region and --grid")),
                    }
                }
            };
            Ok(render(cmd_simulate(&m, settings, &report)?, json))
        }
        Command::Verify { model, suite, budget, horizon, seed, tol } => {
            check_tol(*tol)?;
            let m = resolve_model(model.as_deref().unwrap_or(BUILTIN_EXAMPLE))?;
            let sim = SimSettings {
                n: *budget as usize,
                horizon: *horizon,
                seed: *seed,
            };
            Ok(render(cmd_verify(&m, *suite, sim, *tol), json))
        }
    }
}

/// Caps the worker pool at `PHASEHIT_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PHASEHIT_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::domain(format!("PHASEHIT_THREADS must be a positive integer, got `{v}`")))?;
        // a pool that already exists keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Entry point of the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = configure_threads().and_then(|_| execute(&cli));
    match result {
        Ok(out) => {
            print!("{}", out.stdout);
            for n in out.notes {
                eprintln!("note: {n}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Counts of each status in a verify report.
pub fn status_counts(table: &ResultTable) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    if let Some(c) = table.column("status") {
        for r in &table.rows {
            *counts.entry(r[c].render()).or_insert(0) += 1;
        }
    }
    counts
}
