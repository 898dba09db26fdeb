//! Numerical kernels: matrix exponential, dense linear solves and quadrature.
//!
//! The exponential uses scaling and squaring with a diagonal Padé approximant
//! of degree 3, 5, 7, 9 or 13 chosen from the 1-norm of the scaled matrix
//! (Higham's 2005 backward-error bounds).

use std::collections::hash_map::DefaultHasher;
use std::collections::{BinaryHeap, HashMap};
use std::hash::{Hash, Hasher};
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is numerically singular (reciprocal condition estimate {rcond:e})")]
    Singular { rcond: f64 },
    #[error("quadrature did not reach tolerance {requested:e}; best error estimate {achieved:e}")]
    Accuracy { achieved: f64, requested: f64 },
}

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE_9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn check_finite(m: &DMatrix<f64>, what: &'static str) -> Result<(), NumericError> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NumericError::NonFinite(what))
    }
}

/// Low-degree Padé numerator/denominator pieces `(U, V)` from even powers.
fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let mut even_power = ident.clone();
    let mut u_inner = &ident * b[1];
    let mut v = &ident * b[0];
    for k in 1..b.len() / 2 {
        even_power = &even_power * &a2;
        u_inner += &even_power * b[2 * k + 1];
        v += &even_power * b[2 * k];
    }
    (a * u_inner, v)
}

fn pade_13(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let b = &PADE_13;
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_high = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (u_high + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let v_high = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_high + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    (u, v)
}

/// `e^{M}` by scaling and squaring.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>, NumericError> {
    if !m.is_square() {
        return Err(NumericError::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    check_finite(m, "matrix exponential input")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let norm = norm1(m);
    if norm == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let (u, v, squarings) = if norm <= THETA_3 {
        let (u, v) = pade_low(m, &PADE_3);
        (u, v, 0)
    } else if norm <= THETA_5 {
        let (u, v) = pade_low(m, &PADE_5);
        (u, v, 0)
    } else if norm <= THETA_7 {
        let (u, v) = pade_low(m, &PADE_7);
        (u, v, 0)
    } else if norm <= THETA_9 {
        let (u, v) = pade_low(m, &PADE_9);
        (u, v, 0)
    } else {
        let s = (norm / THETA_13).log2().ceil().max(0.0) as i32;
        let scaled = m * 2f64.powi(-s);
        let (u, v) = pade_13(&scaled);
        (u, v, s)
    };
    let denom = &v - &u;
    let numer = &v + &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .ok_or(NumericError::Singular { rcond: 0.0 })?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    check_finite(&r, "matrix exponential")?;
    Ok(r)
}

fn check_time(t: f64) -> Result<(), NumericError> {
    if !t.is_finite() {
        return Err(NumericError::NonFinite("time"));
    }
    if t < 0.0 {
        return Err(NumericError::NegativeTime(t));
    }
    Ok(())
}

/// `v e^{tM}` for a row vector `v`.
pub fn expm_apply(v: &RowDVector<f64>, m: &DMatrix<f64>, t: f64) -> Result<RowDVector<f64>, NumericError> {
    check_time(t)?;
    if v.len() != m.nrows() {
        return Err(NumericError::DimensionMismatch {
            expected: m.nrows(),
            found: v.len(),
        });
    }
    if t == 0.0 {
        return Ok(v.clone());
    }
    Ok(v * expm(&(m * t))?)
}

/// `e^{tM} x` for a column vector `x`.
pub fn expm_apply_col(m: &DMatrix<f64>, t: f64, x: &DVector<f64>) -> Result<DVector<f64>, NumericError> {
    check_time(t)?;
    if x.len() != m.ncols() {
        return Err(NumericError::DimensionMismatch {
            expected: m.ncols(),
            found: x.len(),
        });
    }
    if t == 0.0 {
        return Ok(x.clone());
    }
    Ok(expm(&(m * t))? * x)
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    fingerprint: u64,
    dim: usize,
    time_bits: u64,
}

struct CacheEntry {
    source: Arc<DMatrix<f64>>,
    value: Arc<DMatrix<f64>>,
}

/// Memoized `e^{tM}` factors.
///
/// Safe to share between threads. Two threads missing on the same key may
/// both compute the factor; the first insert wins.
pub struct ExpmWorkspace {
    cache: RwLock<HashMap<CacheKey, CacheEntry>>,
    capacity: usize,
}

impl Default for ExpmWorkspace {
    fn default() -> Self {
        Self::with_capacity(4096)
    }
}

impl ExpmWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        ExpmWorkspace {
            cache: RwLock::new(HashMap::new()),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.cache.read().map(|c| c.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(m: &DMatrix<f64>, t: f64) -> CacheKey {
        let mut h = DefaultHasher::new();
        for x in m.iter() {
            x.to_bits().hash(&mut h);
        }
        CacheKey {
            fingerprint: h.finish(),
            dim: m.nrows(),
            time_bits: t.to_bits(),
        }
    }

    /// `e^{tM}`, computed once per `(M, t)`.
    pub fn exp(&self, m: &DMatrix<f64>, t: f64) -> Result<Arc<DMatrix<f64>>, NumericError> {
        check_time(t)?;
        let key = Self::key(m, t);
        if let Ok(cache) = self.cache.read() {
            if let Some(entry) = cache.get(&key) {
                if entry.source.as_ref() == m {
                    return Ok(entry.value.clone());
                }
            }
        }
        let value = Arc::new(expm(&(m * t))?);
        if let Ok(mut cache) = self.cache.write() {
            if cache.len() >= self.capacity {
                cache.clear();
            }
            cache.entry(key).or_insert_with(|| CacheEntry {
                source: Arc::new(m.clone()),
                value: value.clone(),
            });
        }
        Ok(value)
    }

    pub fn apply(&self, v: &RowDVector<f64>, m: &DMatrix<f64>, t: f64) -> Result<RowDVector<f64>, NumericError> {
        check_time(t)?;
        if t == 0.0 {
            return Ok(v.clone());
        }
        Ok(v * self.exp(m, t)?.as_ref())
    }

    pub fn apply_col(&self, m: &DMatrix<f64>, t: f64, x: &DVector<f64>) -> Result<DVector<f64>, NumericError> {
        check_time(t)?;
        if t == 0.0 {
            return Ok(x.clone());
        }
        Ok(self.exp(m, t)?.as_ref() * x)
    }
}

/// Smallest reciprocal 1-norm condition number accepted by [`solve`].
pub const MIN_RCOND: f64 = 1e-13;

/// Solves `A x = b` by LU with partial pivoting and one refinement step.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, NumericError> {
    if !a.is_square() || a.nrows() != b.len() {
        return Err(NumericError::DimensionMismatch {
            expected: a.nrows(),
            found: b.len(),
        });
    }
    check_finite(a, "linear system")?;
    if a.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let lu = a.clone().lu();
    let inverse = lu.try_inverse().ok_or(NumericError::Singular { rcond: 0.0 })?;
    let rcond = 1.0 / (norm1(a) * norm1(&inverse));
    if !(rcond >= MIN_RCOND) {
        return Err(NumericError::Singular { rcond });
    }
    let mut x = lu.solve(b).ok_or(NumericError::Singular { rcond })?;
    let residual = b - a * &x;
    if let Some(dx) = lu.solve(&residual) {
        x += dx;
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureKind {
    /// Globally adaptive 7/15-point Gauss–Kronrod bisection.
    Adaptive,
    /// Composite 10-point Gauss–Legendre on equal panels.
    FixedPanel,
}

/// How `∫ f` is discretized. For [`QuadratureKind::Adaptive`], `panels` is
/// the subdivision budget; for [`QuadratureKind::FixedPanel`], the panel count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureRule {
    pub kind: QuadratureKind,
    pub panels: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        QuadratureRule {
            kind: QuadratureKind::Adaptive,
            panels: 512,
            abs_tol: 1e-9,
            rel_tol: 0.0,
        }
    }
}

impl QuadratureRule {
    pub fn adaptive(abs_tol: f64) -> Self {
        QuadratureRule {
            abs_tol,
            ..Self::default()
        }
    }

    pub fn fixed(panels: usize) -> Self {
        QuadratureRule {
            kind: QuadratureKind::FixedPanel,
            panels: panels.max(1),
            ..Self::default()
        }
    }

    /// Highest polynomial degree integrated exactly on a single panel.
    pub fn exactness_degree(&self) -> usize {
        match self.kind {
            QuadratureKind::Adaptive => 22,
            QuadratureKind::FixedPanel => 19,
        }
    }
}

const KRONROD_X: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const KRONROD_W: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
// Gauss weights at KRONROD_X[1], [3], [5], [7].
const GAUSS7_W: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

const LEGENDRE10_X: [f64; 5] = [
    0.1488743389816312108848260,
    0.4333953941292471907992659,
    0.6794095682990244062343274,
    0.8650633666889845107320967,
    0.9739065285171717200779640,
];
const LEGENDRE10_W: [f64; 5] = [
    0.2955242247147528701738930,
    0.2692667193099963550912269,
    0.2190863625159820439955349,
    0.1494513491505805931457763,
    0.0666713443086881375935688,
];

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Panel {
    lo: f64,
    hi: f64,
    value: DVector<f64>,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod_panel<E, F>(f: &mut F, lo: f64, hi: f64) -> Result<Panel, E>
where
    F: FnMut(f64) -> Result<DVector<f64>, E>,
{
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center)?;
    let mut kronrod = &fc * KRONROD_W[7];
    let mut gauss = &fc * GAUSS7_W[3];
    for j in 0..7 {
        let dx = half * KRONROD_X[j];
        let sum = f(center - dx)? + f(center + dx)?;
        kronrod += &sum * KRONROD_W[j];
        if j % 2 == 1 {
            gauss += &sum * GAUSS7_W[j / 2];
        }
    }
    kronrod *= half;
    gauss *= half;
    let error = inf_norm(&(&kronrod - &gauss));
    Ok(Panel {
        lo,
        hi,
        value: kronrod,
        error,
    })
}

fn legendre_panel<E, F>(f: &mut F, lo: f64, hi: f64) -> Result<DVector<f64>, E>
where
    F: FnMut(f64) -> Result<DVector<f64>, E>,
{
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut acc: Option<DVector<f64>> = None;
    for j in 0..5 {
        let dx = half * LEGENDRE10_X[j];
        let sum = (f(center - dx)? + f(center + dx)?) * LEGENDRE10_W[j];
        acc = Some(match acc {
            Some(a) => a + sum,
            None => sum,
        });
    }
    Ok(acc.expect("five nodes") * half)
}

/// `∫_lo^hi f(u) du` componentwise, for an integrand that may fail.
pub fn try_integrate_interval<E, F>(mut f: F, lo: f64, hi: f64, rule: &QuadratureRule) -> Result<DVector<f64>, E>
where
    F: FnMut(f64) -> Result<DVector<f64>, E>,
    E: From<NumericError>,
{
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(NumericError::NonFinite("integration bounds").into());
    }
    if hi < lo {
        return Err(NumericError::NegativeTime(hi - lo).into());
    }
    if hi == lo {
        return Ok(f(lo)? * 0.0);
    }
    match rule.kind {
        QuadratureKind::FixedPanel => {
            let panels = rule.panels.max(1);
            let width = (hi - lo) / panels as f64;
            let mut total: Option<DVector<f64>> = None;
            for p in 0..panels {
                let a = lo + width * p as f64;
                let b = if p + 1 == panels { hi } else { a + width };
                let v = legendre_panel(&mut f, a, b)?;
                total = Some(match total {
                    Some(t) => t + v,
                    None => v,
                });
            }
            Ok(total.expect("at least one panel"))
        }
        QuadratureKind::Adaptive => {
            let mut heap = BinaryHeap::new();
            let first = kronrod_panel(&mut f, lo, hi)?;
            let mut total = first.value.clone();
            let mut error = first.error;
            heap.push(first);
            loop {
                let target = rule.abs_tol.max(rule.rel_tol * inf_norm(&total));
                if error <= target {
                    return Ok(total);
                }
                if heap.len() >= rule.panels.max(1) {
                    return Err(NumericError::Accuracy {
                        achieved: error,
                        requested: target,
                    }
                    .into());
                }
                let worst = heap.pop().expect("heap is never empty");
                let mid = 0.5 * (worst.lo + worst.hi);
                if !(mid > worst.lo && mid < worst.hi) {
                    return Err(NumericError::Accuracy {
                        achieved: error,
                        requested: target,
                    }
                    .into());
                }
                let left = kronrod_panel(&mut f, worst.lo, mid)?;
                let right = kronrod_panel(&mut f, mid, worst.hi)?;
                total += &left.value + &right.value - &worst.value;
                error += left.error + right.error - worst.error;
                heap.push(left);
                heap.push(right);
            }
        }
    }
}

/// `∫_0^T f(u) du` componentwise; `T = 0` gives the zero vector.
pub fn integrate<F>(mut f: F, horizon: f64, rule: &QuadratureRule) -> Result<DVector<f64>, NumericError>
where
    F: FnMut(f64) -> DVector<f64>,
{
    try_integrate_interval(|u| Ok::<_, NumericError>(f(u)), 0.0, horizon, rule)
}

/// `∫_lo^∞ f(u) du` through the substitution `u = lo + x / (1 - x)`.
///
/// The integrand must decay fast enough for the transformed integrand to
/// vanish at `x = 1`.
pub fn try_integrate_to_infinity<E, F>(mut f: F, lo: f64, rule: &QuadratureRule) -> Result<DVector<f64>, E>
where
    F: FnMut(f64) -> Result<DVector<f64>, E>,
    E: From<NumericError>,
{
    try_integrate_interval(
        |x| {
            let one_minus = 1.0 - x;
            let u = lo + x / one_minus;
            let v = f(u)?;
            if v.iter().all(|&c| c == 0.0) {
                return Ok(v);
            }
            Ok(v / (one_minus * one_minus))
        },
        0.0,
        1.0,
        rule,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Truncated Taylor series `Σ_{k<terms} M^k / k!` on `M / 2^s`, squared back.
    fn taylor_expm(m: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
        let n = m.nrows();
        let s = 6;
        let scaled = m / 2f64.powi(s);
        let mut term = DMatrix::identity(n, n);
        let mut sum = term.clone();
        for k in 1..terms {
            term = &term * &scaled / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    fn random_generator(n: usize, seed: u64) -> DMatrix<f64> {
        // small LCG so the oracle has no dependence on the crate's RNG plumbing
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64)
        };
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m[(i, j)] = 3.0 * next();
                }
            }
            let s: f64 = m.row(i).sum();
            m[(i, i)] = -s;
        }
        m
    }

    #[test]
    fn exp_at_zero_time_is_identity_action() {
        let m = random_generator(4, 1);
        let v = RowDVector::from_row_slice(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(expm_apply(&v, &m, 0.0).unwrap(), v);
    }

    #[test]
    fn scalar_exponential() {
        let m = DMatrix::from_element(1, 1, -2.0);
        let v = RowDVector::from_element(1, 1.0);
        for t in [0.1, 1.0, 5.0] {
            let got = expm_apply(&v, &m, t).unwrap()[0];
            assert!((got - (-2.0 * t).exp()).abs() <= 1e-15 * (1.0 + got.abs()));
        }
    }

    #[test]
    fn matches_taylor_oracle() {
        for seed in 0..5 {
            let m = random_generator(5, seed);
            for t in [0.01, 0.3, 2.0] {
                let got = expm(&(&m * t)).unwrap();
                let want = taylor_expm(&(&m * t), 200);
                let err = (&got - &want).amax();
                assert!(err < 1e-10, "seed {seed} t {t}: {err}");
            }
        }
    }

    #[test]
    fn negative_time_and_nonfinite_rejected() {
        let m = random_generator(3, 2);
        let v = RowDVector::from_element(3, 1.0 / 3.0);
        assert_eq!(expm_apply(&v, &m, -1.0), Err(NumericError::NegativeTime(-1.0)));
        let mut bad = m.clone();
        bad[(0, 1)] = f64::NAN;
        assert!(matches!(expm_apply(&v, &bad, 1.0), Err(NumericError::NonFinite(_))));
    }

    #[test]
    fn semigroup_and_mass_conservation() {
        let m = random_generator(6, 9);
        let v = RowDVector::from_fn(6, |_, j| (j + 1) as f64 / 21.0);
        let a = expm_apply(&expm_apply(&v, &m, 0.7).unwrap(), &m, 1.3).unwrap();
        let b = expm_apply(&v, &m, 2.0).unwrap();
        assert!((&a - &b).amax() < 1e-10);
        assert!((b.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn workspace_cache_agrees_with_direct() {
        let ws = ExpmWorkspace::new();
        let m = random_generator(4, 3);
        let first = ws.exp(&m, 0.5).unwrap();
        let second = ws.exp(&m, 0.5).unwrap();
        assert!(Arc::ptr_eq(&first, &second));
        let direct = expm(&(&m * 0.5)).unwrap();
        assert!((first.as_ref() - direct).amax() == 0.0);
        let other = ws.exp(&m, 0.25).unwrap();
        assert!(!Arc::ptr_eq(&first, &other));
        assert_eq!(ws.len(), 2);
    }

    fn cofactor_det(m: &DMatrix<f64>) -> f64 {
        let n = m.nrows();
        if n == 1 {
            return m[(0, 0)];
        }
        (0..n)
            .map(|j| {
                let minor = m.clone().remove_row(0).remove_column(j);
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[(0, j)] * cofactor_det(&minor)
            })
            .sum()
    }

    #[test]
    fn solve_trivial_systems() {
        let b = DVector::from_row_slice(&[2.0, 8.0]);
        assert_eq!(solve(&DMatrix::identity(2, 2), &b).unwrap(), b);
        let d = DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 4.0]));
        assert_eq!(solve(&d, &b).unwrap(), DVector::from_row_slice(&[1.0, 2.0]));
    }

    #[test]
    fn solve_matches_cramer_oracle() {
        let n = 8;
        let mut a = random_generator(n, 17);
        for i in 0..n {
            a[(i, i)] -= 1.0;
        }
        let b = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin());
        let det = cofactor_det(&a);
        let want = DVector::from_fn(n, |i, _| {
            let mut ai = a.clone();
            ai.set_column(i, &b);
            cofactor_det(&ai) / det
        });
        let got = solve(&a, &b).unwrap();
        assert!((&got - &want).amax() < 1e-9);
        let residual = (&a * &got - &b).amax();
        assert!(residual <= 1e-10 * (1.0 + b.amax()));
    }

    #[test]
    fn solve_reports_singularity() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_row_slice(&[1.0, 1.0]);
        assert!(matches!(solve(&a, &b), Err(NumericError::Singular { .. })));
    }

    #[test]
    fn quadrature_exactness() {
        for rule in [QuadratureRule::adaptive(1e-14), QuadratureRule::fixed(1)] {
            let d = rule.exactness_degree() as i32;
            let got = integrate(|u| DVector::from_element(1, u.powi(d)), 1.0, &rule).unwrap()[0];
            assert!((got - 1.0 / (d as f64 + 1.0)).abs() < 1e-13, "{rule:?}");
        }
    }

    #[test]
    fn quadrature_examples() {
        let rule = QuadratureRule::adaptive(1e-12);
        let c = integrate(|_| DVector::from_row_slice(&[3.0, -1.0]), 1.0, &rule).unwrap();
        assert!((c[0] - 3.0).abs() < 1e-14 && (c[1] + 1.0).abs() < 1e-14);
        let e = integrate(|u| DVector::from_element(1, (-u).exp()), 1.0, &rule).unwrap()[0];
        assert!((e - (1.0 - (-1.0f64).exp())).abs() < 1e-10);
        let z = integrate(|u| DVector::from_element(2, u), 0.0, &rule).unwrap();
        assert_eq!(z, DVector::zeros(2));
    }

    #[test]
    fn quadrature_of_matrix_exponential_action() {
        // ∫_0^T α e^{uM} w du = α M^{-1} (e^{TM} - I) w for invertible M
        let n = 4;
        let mut m = random_generator(n, 5);
        for i in 0..n {
            m[(i, i)] -= 0.5;
        }
        let alpha = RowDVector::from_row_slice(&[0.4, 0.3, 0.2, 0.1]);
        let w = DVector::from_row_slice(&[1.0, -2.0, 0.5, 3.0]);
        let horizon = 1.7;
        let rule = QuadratureRule::adaptive(1e-12);
        let got = integrate(
            |u| DVector::from_element(1, (&alpha * expm(&(&m * u)).unwrap() * &w)[0]),
            horizon,
            &rule,
        )
        .unwrap()[0];
        let inv = m.clone().try_inverse().unwrap();
        let ident = DMatrix::identity(n, n);
        let want = (&alpha * inv * (expm(&(&m * horizon)).unwrap() - ident) * &w)[0];
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn quadrature_budget_exhaustion() {
        let rule = QuadratureRule {
            panels: 2,
            abs_tol: 1e-15,
            ..QuadratureRule::default()
        };
        let res = integrate(|u| DVector::from_element(1, (50.0 * u).sin().abs()), 1.0, &rule);
        assert!(matches!(res, Err(NumericError::Accuracy { .. })));
    }

    #[test]
    fn semi_infinite_exponential() {
        let rule = QuadratureRule::adaptive(1e-12);
        let got = try_integrate_to_infinity(
            |u| Ok::<_, NumericError>(DVector::from_element(1, 2.0 * (-2.0 * u).exp())),
            0.5,
            &rule,
        )
        .unwrap()[0];
        assert!((got - (-1.0f64).exp()).abs() < 1e-11);
    }
}
