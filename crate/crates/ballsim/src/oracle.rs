//! Exact one-step expectations, drift inequality verifiers, the appendix
//! counterexamples and an exact gap distribution for tiny instances.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::framework::{distribution_vector, side_extremes, Prob};
use crate::process::{resolve_target, stream, ProcessConfig, ProcessState, StopRule, TraceMode};
use crate::state::{big_f64, psi_alpha, LoadState, Rational};

/// One possible outcome of a round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Branch {
    /// Probability numerator over the kernel's denominator.
    pub numer: i128,
    pub placements: Vec<(usize, i64)>,
    pub cache: Option<usize>,
}

impl Branch {
    pub fn weight(&self) -> i64 {
        self.placements.iter().map(|p| p.1).sum()
    }
}

/// All outcomes of one round with their probabilities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Kernel {
    pub denom: i128,
    pub branches: Vec<Branch>,
}

/// Enumerates the next round: by target rank for rank-based processes, by sample for Caching.
pub fn transition_kernel(config: &ProcessConfig, state: &ProcessState) -> Result<Kernel> {
    config.validate()?;
    let load = &state.load;
    let n = load.n();
    if *config == ProcessConfig::Caching {
        let branches = (0..n)
            .map(|i| {
                let (target, cache) = match state.cache {
                    None => (i, Some(i)),
                    Some(b) if load.load(i) < load.load(b) => (i, Some(i)),
                    Some(b) if load.load(i) == load.load(b) => (i, Some(b)),
                    Some(b) => (b, Some(b)),
                };
                Branch { numer: 1, placements: vec![(target, 1)], cache }
            })
            .collect();
        return Ok(Kernel { denom: n as i128, branches });
    }
    let p = distribution_vector(config, state)?;
    let order = load.sorted_order();
    let mut branches = Vec::with_capacity(n);
    for (rank, &numer) in p.numerators().iter().enumerate() {
        if numer == 0 {
            continue;
        }
        let mut placements = Vec::with_capacity(1);
        resolve_target(config, load, order[rank], &mut placements);
        branches.push(Branch { numer, placements, cache: None });
    }
    Ok(Kernel { denom: p.denominator(), branches })
}

/// Applies a branch to a copy of `state`.
pub fn apply_branch(state: &ProcessState, branch: &Branch) -> Result<ProcessState> {
    let mut next = state.clone();
    for &(bin, balls) in &branch.placements {
        next.load.add(bin, balls)?;
    }
    next.cache = branch.cache;
    next.round += 1;
    Ok(next)
}

/// Functional of a load vector whose expectation the oracle computes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "potential", rename_all = "snake_case")]
pub enum Potential {
    Constant,
    /// `sum |y_i|`.
    Delta,
    /// `sum y_i^2`.
    Upsilon,
    /// `sum over y_i >= 2 of exp(alpha y_i)`.
    Phi {
        alpha: f64,
    },
    /// `sum over y_i >= 0 of exp(alpha y_i)`.
    PhiNonneg {
        alpha: f64,
    },
    /// `sum exp(alpha |y_i|)`.
    Lambda {
        alpha: f64,
    },
    /// `Lambda` at a small exponent.
    V {
        alpha_tilde: f64,
    },
    /// `sum over y_i >= 2 of exp(y_i / (12 n))`.
    Psi,
}

impl Potential {
    pub fn is_exact(&self) -> bool {
        matches!(self, Potential::Constant | Potential::Delta | Potential::Upsilon)
    }

    pub fn id(&self) -> &'static str {
        match self {
            Potential::Constant => "constant",
            Potential::Delta => "delta",
            Potential::Upsilon => "upsilon",
            Potential::Phi { .. } => "phi",
            Potential::PhiNonneg { .. } => "phi_nonneg",
            Potential::Lambda { .. } => "lambda",
            Potential::V { .. } => "v",
            Potential::Psi => "psi",
        }
    }

    /// Natural log of the term for scaled load `z`, or `None` when the bin does not count.
    fn log_term(&self, n: i64, z: i64) -> Option<f64> {
        let y = z as f64 / n as f64;
        match *self {
            Potential::Phi { alpha } => (z >= 2 * n).then_some(alpha * y),
            Potential::PhiNonneg { alpha } => (z >= 0).then_some(alpha * y),
            Potential::Lambda { alpha } => Some(alpha * y.abs()),
            Potential::V { alpha_tilde } => Some(alpha_tilde * y.abs()),
            Potential::Psi => (z >= 2 * n).then(|| psi_alpha(n as usize) * y),
            _ => unreachable!("exact potentials have no log term"),
        }
    }
}

/// A value that is either an exact rational or a positive real held as its logarithm.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Exact(BigRational),
    Log(f64),
}

impl Value {
    pub fn to_f64(&self) -> f64 {
        match self {
            Value::Exact(r) => big_f64(r),
            Value::Log(l) => l.exp(),
        }
    }

    pub fn ln(&self) -> f64 {
        match self {
            Value::Exact(r) => big_f64(r).ln(),
            Value::Log(l) => *l,
        }
    }
}

/// Current value and exact conditional expectation of a potential.
#[derive(Clone, Debug, PartialEq)]
pub struct Expectation {
    pub current: Value,
    pub expected: Value,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn log_sum<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let v: Vec<f64> = terms.into_iter().collect();
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + v.iter().map(|t| (t - hi).exp()).sum::<f64>().ln()
}

fn big(x: impl Into<BigInt>) -> BigInt {
    x.into()
}

/// `E[F(next) | state]` by enumerating every branch of the kernel.
pub fn expectation_with_kernel(kernel: &Kernel, load: &LoadState, potential: Potential) -> Expectation {
    let n = load.n() as i64;
    let z: Vec<i64> = load.scaled_loads().z;
    let bn = big(n);
    let denom = big(kernel.denom);
    match potential {
        Potential::Constant => {
            let one = BigRational::from_integer(big(1));
            let total: i128 = kernel.branches.iter().map(|b| b.numer).sum();
            Expectation { current: Value::Exact(one), expected: Value::Exact(BigRational::new(big(total), denom)) }
        }
        Potential::Delta | Potential::Upsilon => {
            let square = potential == Potential::Upsilon;
            let f = |v: i64| -> BigInt {
                if square {
                    big(v) * big(v)
                } else {
                    big(v.unsigned_abs())
                }
            };
            let mut base: HashMap<i64, BigInt> = HashMap::new();
            let mut acc = BigInt::zero();
            for b in &kernel.branches {
                let w = b.weight();
                let value = if b.placements.len() == 1 {
                    let (j, r) = b.placements[0];
                    let all = base.entry(w).or_insert_with(|| z.iter().map(|&zk| f(zk - w)).sum());
                    all.clone() - f(z[j] - w) + f(z[j] + n * r - w)
                } else {
                    let mut add = vec![0i64; z.len()];
                    for &(j, r) in &b.placements {
                        add[j] += r;
                    }
                    z.iter().zip(&add).map(|(&zk, &r)| f(zk + n * r - w)).sum()
                };
                acc += value * big(b.numer);
            }
            let scale = if square { &bn * &bn } else { bn.clone() };
            let current: BigInt = z.iter().map(|&zk| f(zk)).sum();
            Expectation {
                current: Value::Exact(BigRational::new(current, scale.clone())),
                expected: Value::Exact(BigRational::new(acc, denom * scale)),
            }
        }
        _ => {
            let term = |v: i64| potential.log_term(n, v).unwrap_or(f64::NEG_INFINITY);
            // prefix[k] = log sum of terms 0..k, suffix[k] = log sum of terms k..n
            let mut tables: HashMap<i64, (Vec<f64>, Vec<f64>)> = HashMap::new();
            let mut logs = Vec::with_capacity(kernel.branches.len());
            for b in &kernel.branches {
                let w = b.weight();
                let lf = if b.placements.len() == 1 {
                    let (j, r) = b.placements[0];
                    let (prefix, suffix) = tables.entry(w).or_insert_with(|| {
                        let t: Vec<f64> = z.iter().map(|&zk| term(zk - w)).collect();
                        let mut prefix = vec![f64::NEG_INFINITY; t.len() + 1];
                        let mut suffix = vec![f64::NEG_INFINITY; t.len() + 1];
                        for k in 0..t.len() {
                            prefix[k + 1] = log_add(prefix[k], t[k]);
                        }
                        for k in (0..t.len()).rev() {
                            suffix[k] = log_add(suffix[k + 1], t[k]);
                        }
                        (prefix, suffix)
                    });
                    log_add(log_add(prefix[j], suffix[j + 1]), term(z[j] + n * r - w))
                } else {
                    let mut add = vec![0i64; z.len()];
                    for &(j, r) in &b.placements {
                        add[j] += r;
                    }
                    log_sum(z.iter().zip(&add).map(|(&zk, &r)| term(zk + n * r - w)))
                };
                logs.push((b.numer as f64 / kernel.denom as f64).ln() + lf);
            }
            Expectation {
                current: Value::Log(log_sum(z.iter().map(|&zk| term(zk)))),
                expected: Value::Log(log_sum(logs)),
            }
        }
    }
}

/// Relative tolerance applied to inequalities between double-valued potentials.
pub const REL_TOL: f64 = 1e-10;

/// Both sides of a drift inequality at one state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpectationResult {
    pub potential: String,
    pub current: f64,
    pub expected: f64,
    pub bound: f64,
    /// Natural logs of the three sides, usable when the plain values overflow.
    pub ln_current: f64,
    pub ln_expected: f64,
    pub ln_bound: f64,
    #[serde(serialize_with = "crate::serde_ratio::opt_big")]
    pub exact_current: Option<BigRational>,
    #[serde(serialize_with = "crate::serde_ratio::opt_big")]
    pub exact_expected: Option<BigRational>,
    #[serde(serialize_with = "crate::serde_ratio::opt_big")]
    pub exact_bound: Option<BigRational>,
    pub tolerance: f64,
    pub satisfied: bool,
    /// Regime notes and fitted constants.
    pub details: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl ExpectationResult {
    fn exact(potential: &str, current: BigRational, expected: BigRational, bound: BigRational) -> Self {
        let satisfied = expected <= bound;
        let (c, e, b) = (big_f64(&current), big_f64(&expected), big_f64(&bound));
        ExpectationResult {
            potential: potential.into(),
            current: c,
            expected: e,
            bound: b,
            ln_current: c.ln(),
            ln_expected: e.ln(),
            ln_bound: b.ln(),
            exact_current: Some(current),
            exact_expected: Some(expected),
            exact_bound: Some(bound),
            tolerance: 0.0,
            satisfied,
            details: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    /// `expected <= bound` up to `tolerance`, or `expected >= bound` when `lower` is set.
    fn logs(potential: &str, ln_current: f64, ln_expected: f64, ln_bound: f64, tolerance: f64, lower: bool) -> Self {
        let satisfied = if lower { ln_expected >= ln_bound - tolerance } else { ln_expected <= ln_bound + tolerance };
        ExpectationResult {
            potential: potential.into(),
            current: ln_current.exp(),
            expected: ln_expected.exp(),
            bound: ln_bound.exp(),
            ln_current,
            ln_expected,
            ln_bound,
            exact_current: None,
            exact_expected: None,
            exact_bound: None,
            tolerance,
            satisfied,
            details: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    /// `expected / current`, formed in log space.
    pub fn ratio(&self) -> f64 {
        (self.ln_expected - self.ln_current).exp()
    }
}

/// `E[F(next) | state]` for one round of `config`; the bound is the current value.
pub fn one_step_expectation(
    config: &ProcessConfig,
    state: &ProcessState,
    potential: Potential,
) -> Result<ExpectationResult> {
    let kernel = transition_kernel(config, state)?;
    let e = expectation_with_kernel(&kernel, &state.load, potential);
    Ok(match (e.current, e.expected) {
        (Value::Exact(c), Value::Exact(x)) => {
            let mut r = ExpectationResult::exact(potential.id(), c.clone(), x, c);
            r.satisfied = true;
            r
        }
        (c, x) => {
            let mut r = ExpectationResult::logs(potential.id(), c.ln(), x.ln(), c.ln(), REL_TOL, false);
            r.satisfied = true;
            r
        }
    })
}

/// `(w_+, w_-)` of a process with constant branch weights.
fn weights(config: &ProcessConfig) -> Result<(i64, i64)> {
    config.branch_weights().ok_or_else(|| Error::Unsupported(format!("{config} has no constant branch weights")))
}

/// Lemma constant `c_1` for the quadratic drift: `min(k1, k2)` or `w_- - w_+`.
pub fn drift_constant(config: &ProcessConfig) -> Option<Prob> {
    match config {
        ProcessConfig::MeanThinning => Some(Prob::from_integer(1)),
        ProcessConfig::OnePlusEtaMeanThinning { eta } => Some(Prob::new(*eta.numer() as i128, *eta.denom() as i128)),
        ProcessConfig::Twinning => Some(Prob::from_integer(1)),
        _ => None,
    }
}

fn prob_big(p: Prob) -> BigRational {
    BigRational::new(big(*p.numer()), big(*p.denom()))
}

/// Quadratic potential drop: `E[U'] <= U - (p_- w_- - p_+ w_+) D + 4 w_-^2`, exactly.
pub fn verify_upsilon_drop(config: &ProcessConfig, state: &ProcessState) -> Result<ExpectationResult> {
    let (wp, wm) = weights(config)?;
    let p = distribution_vector(config, state)?;
    let (plus, minus) = side_extremes(&p, &state.load);
    let zero = Prob::from_integer(0);
    let drift =
        minus.unwrap_or(zero) * Prob::from_integer(wm as i128) - plus.unwrap_or(zero) * Prob::from_integer(wp as i128);
    let kernel = transition_kernel(config, state)?;
    let Value::Exact(expected) = expectation_with_kernel(&kernel, &state.load, Potential::Upsilon).expected else {
        unreachable!()
    };
    let upsilon = state.load.upsilon();
    let delta = state.load.delta();
    let bound = &upsilon - prob_big(drift) * &delta + BigRational::from_integer(big(4 * wm * wm));
    let mut r = ExpectationResult::exact("upsilon", upsilon, expected, bound);
    r.details.insert("drift".into(), drift.to_f64().unwrap_or(f64::NAN));
    if let Some(c1) = drift_constant(config) {
        r.details.insert("c1".into(), c1.to_f64().unwrap_or(f64::NAN));
    }
    Ok(r)
}

/// The `Phi` bound for a filling process with uniform target distribution.
pub fn verify_phi_bound(config: &ProcessConfig, state: &ProcessState, alpha: f64) -> Result<ExpectationResult> {
    if !config.filling() {
        return Err(Error::Unsupported(format!("{config} is not a filling process")));
    }
    let load = &state.load;
    let n = load.n() as i64;
    let nf = n as f64;
    let kernel = transition_kernel(config, state)?;
    let e = expectation_with_kernel(&kernel, load, Potential::Phi { alpha });
    let mut bracket = 0.0;
    let mut at_least_one = 0i64;
    for i in 0..load.n() {
        if load.z(i) < n {
            bracket += (-alpha * (load.ceil_neg_y(i) + 1) as f64 / nf).exp();
        } else {
            at_least_one += 1;
        }
    }
    bracket += (at_least_one - 1) as f64 * (-alpha / nf).exp() + (alpha - alpha / nf).exp();
    let phi = e.current.to_f64();
    let bound = phi * bracket / nf + (3.0 * alpha).exp();
    let mut r = ExpectationResult::logs("phi", e.current.ln(), e.expected.ln(), bound.ln(), 1e-9, false);
    r.details.insert("bracket".into(), bracket);
    Ok(r)
}

/// Largest admissible `alpha` for the exponential potential of a process with
/// quantile band `eps`.
pub fn lambda_alpha_cap(config: &ProcessConfig, eps: f64) -> Result<f64> {
    let (wp, wm) = weights(config)?;
    let (wp, wm) = (wp as f64, wm as f64);
    if wp < wm {
        return Ok((1.0 / wm).min(eps * (wm - wp) / (4.0 * wm * wm)).min(eps / (2.0 * wm * (2.0 + eps))));
    }
    let k = drift_constant(config)
        .and_then(|c| c.to_f64())
        .ok_or_else(|| Error::Unsupported(format!("{config} has no quantile bias constants")))?;
    Ok((1.0 / wm).min(k * eps / (2.0 * wm * (1.0 + k * eps))).min(k * eps / (2.0 * wp * (1.0 - k * eps))))
}

/// Exponential potential change: the general increase bound always, plus the fitted
/// drop constant `c_3` when the quantile lies in `(eps, 1 - eps)`.
pub fn verify_lambda_change(
    config: &ProcessConfig,
    state: &ProcessState,
    eps: f64,
    alpha: f64,
) -> Result<ExpectationResult> {
    let (_, wm) = weights(config)?;
    let n = state.n() as f64;
    let kernel = transition_kernel(config, state)?;
    let e = expectation_with_kernel(&kernel, &state.load, Potential::Lambda { alpha });
    let (lc, le) = (e.current.ln(), e.expected.ln());
    let wmf = wm as f64;
    let c4 = 3.0 * wmf * (2.0 * wmf).exp();
    let ln_bound = log_add(lc + (alpha * alpha * c4 / (2.0 * n)).ln_1p(), c4.ln());
    let mut r = ExpectationResult::logs("lambda", lc, le, ln_bound, REL_TOL, false);
    r.details.insert("c4".into(), c4);
    let delta = state.load.overloaded_count() as f64 / n;
    let in_band = delta > eps && delta < 1.0 - eps;
    r.details.insert("in_band".into(), if in_band { 1.0 } else { 0.0 });
    if in_band {
        // E <= L (1 - 2 c3 a / n) + 3 (c3 + w) e^{2w}  <=>  c3 (2 a L / n - 3 e^{2w}) <= L + 3 w e^{2w} - E
        let lam = lc.exp();
        let ex = le.exp();
        let coef = 2.0 * alpha * lam / n - 3.0 * (2.0 * wmf).exp();
        let slack = lam + 3.0 * wmf * (2.0 * wmf).exp() - ex;
        if coef > 0.0 && lam.is_finite() {
            r.details.insert("c3_fit".into(), slack / coef);
        } else {
            r.notes.push("c3 unbounded at this state".into());
        }
    } else {
        r.notes.push("quantile outside the band; drop branch not applicable".into());
    }
    Ok(r)
}

/// Default small exponent for the `V` potential of a process.
pub fn v_alpha_tilde(config: &ProcessConfig, n: usize) -> Result<f64> {
    let (wp, wm) = weights(config)?;
    let (wp, wm, n) = (wp as f64, wm as f64, n as f64);
    if wp < wm {
        return Ok(((wm - wp) / (4.0 * wm * wm * n)).min(1.0 / (wm * (4.0 * n + 2.0))));
    }
    let k = drift_constant(config)
        .and_then(|c| c.to_f64())
        .ok_or_else(|| Error::Unsupported(format!("{config} has no quantile bias constants")))?;
    Ok((k / (2.0 * wm * (n - k))).min(k / (2.0 * wm * (n + k))))
}

/// `E[V'] <= V (1 - c5 / n^3) + 2n` with the largest `c5` this state allows.
pub fn verify_v_drop(
    config: &ProcessConfig,
    state: &ProcessState,
    alpha_tilde: Option<f64>,
) -> Result<ExpectationResult> {
    let n = state.n() as f64;
    let at = match alpha_tilde {
        Some(a) => a,
        None => v_alpha_tilde(config, state.n())?,
    };
    let kernel = transition_kernel(config, state)?;
    let e = expectation_with_kernel(&kernel, &state.load, Potential::V { alpha_tilde: at });
    let (v, ex) = (e.current.to_f64(), e.expected.to_f64());
    let c5 = n.powi(3) * (v + 2.0 * n - ex) / v;
    let bound = v * (1.0 - c5 / n.powi(3)) + 2.0 * n;
    let mut r = ExpectationResult::logs("v", v.ln(), ex.ln(), bound.ln(), REL_TOL, false);
    r.satisfied = c5 > 0.0;
    r.details.insert("alpha_tilde".into(), at);
    r.details.insert("c5_fit".into(), c5);
    Ok(r)
}

/// `E[Psi] after two Caching rounds <= Psi (1 - 1/(24 n^3)) + 6` with cache `cache`.
pub fn caching_two_step_expectation(load: &LoadState, cache: usize) -> Result<ExpectationResult> {
    let n = load.n();
    if n > 512 {
        return Err(Error::InvalidParameter("two-step enumeration is limited to n <= 512".into()));
    }
    if cache >= n {
        return Err(Error::InvalidParameter(format!("cache {cache} out of range")));
    }
    let ni = n as i64;
    let a = psi_alpha(n);
    let z: Vec<i64> = load.scaled_loads().z;
    let psi = |v: i64| if v >= 2 * ni { (a * v as f64 / ni as f64).exp() } else { 0.0 };
    let shifted: Vec<f64> = z.iter().map(|&v| psi(v - 2)).collect();
    let base: f64 = shifted.iter().sum();
    let x = load.loads();
    let pick = |loads: &dyn Fn(usize) -> i64, i: usize, b: usize| -> (usize, usize) {
        let (xi, xb) = (loads(i), loads(b));
        if xi < xb {
            (i, i)
        } else if xi == xb {
            (i, b)
        } else {
            (b, b)
        }
    };
    let mut total = 0.0;
    for i1 in 0..n {
        let (t1, c1) = pick(&|k| x[k], i1, cache);
        let after = |k: usize| x[k] + (k == t1) as i64;
        let base1 = base - shifted[t1];
        for i2 in 0..n {
            let (t2, _) = pick(&after, i2, c1);
            let value = if t2 == t1 {
                base1 + psi(z[t1] + 2 * ni - 2)
            } else {
                base1 - shifted[t2] + psi(z[t1] + ni - 2) + psi(z[t2] + ni - 2)
            };
            total += value;
        }
    }
    let expected = total / (n * n) as f64;
    let current: f64 = z.iter().map(|&v| psi(v)).sum();
    let bound = current * (1.0 - 1.0 / (24.0 * (n as f64).powi(3))) + 6.0;
    let mut r = ExpectationResult::logs("psi_two_step", current.ln(), expected.ln(), bound.ln(), REL_TOL, false);
    r.details.insert("cache".into(), cache as f64);
    Ok(r)
}

/// The two-step bound at the worst cache position.
pub fn caching_two_step_worst(load: &LoadState) -> Result<ExpectationResult> {
    let mut worst: Option<ExpectationResult> = None;
    for b in 0..load.n() {
        let r = caching_two_step_expectation(load, b)?;
        let margin = r.ln_expected - r.ln_bound;
        if worst.as_ref().is_none_or(|w| margin > w.ln_expected - w.ln_bound) {
            worst = Some(r);
        }
    }
    Ok(worst.expect("n >= 2"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Counterexample {
    B1,
    B2,
}

fn isqrt(n: usize) -> usize {
    let mut s = (n as f64).sqrt() as usize;
    while s * s > n {
        s -= 1;
    }
    while (s + 1) * (s + 1) <= n {
        s += 1;
    }
    s
}

/// Integer loads realizing the appendix configurations.
///
/// `B1`: `y = (s, 0 x (n-s-1), -1 x s)` with `s = sqrt(n)`, offset `s`.
/// `B2`: `y = (n^2, n x (n-3), -n(2n-3)/2 x 2)`, offset `n(2n-3)/2`.
pub fn counterexample_config(kind: Counterexample, n: usize) -> Result<LoadState> {
    let ni = n as i64;
    let loads = match kind {
        Counterexample::B1 => {
            let s = isqrt(n);
            if s * s != n || n < 4 {
                return Err(Error::InvalidParameter(format!("B1 needs a square n >= 4, got {n}")));
            }
            let s = s as i64;
            let mut x = vec![2 * s];
            x.extend(std::iter::repeat_n(s, n - s as usize - 1));
            x.extend(std::iter::repeat_n(s - 1, s as usize));
            x
        }
        Counterexample::B2 => {
            if !n.is_multiple_of(2) || n < 4 {
                return Err(Error::InvalidParameter(format!("B2 needs an even n >= 4, got {n}")));
            }
            let c = ni * (2 * ni - 3) / 2;
            let mut x = vec![ni * ni + c];
            x.extend(std::iter::repeat_n(ni + c, n - 3));
            x.extend([0, 0]);
            x
        }
    };
    LoadState::from_loads(loads)
}

/// Lower-bound checks `E[F'] >= F (1 + 0.1 alpha^2 / n)` on both configurations:
/// Packing with `Phi` over `y >= 0` on B1, MeanThinning with `Lambda` on B2.
pub fn verify_counterexamples(n: usize, alpha: f64) -> Result<(ExpectationResult, ExpectationResult)> {
    let check = |config: ProcessConfig, load: LoadState, potential: Potential| -> Result<ExpectationResult> {
        let n = load.n() as f64;
        let state = ProcessState::from_load(load);
        let kernel = transition_kernel(&config, &state)?;
        let e = expectation_with_kernel(&kernel, &state.load, potential);
        let target = (0.1 * alpha * alpha / n).ln_1p();
        let (lc, le) = (e.current.ln(), e.expected.ln());
        let mut r = ExpectationResult::logs(potential.id(), lc, le, lc + target, 0.0, true);
        r.details.insert("ln_ratio".into(), le - lc);
        r.details.insert("ln_required".into(), target);
        r.details.insert("n".into(), n);
        Ok(r)
    };
    let b1 =
        check(ProcessConfig::Packing, counterexample_config(Counterexample::B1, n)?, Potential::PhiNonneg { alpha })?;
    let b2 =
        check(ProcessConfig::MeanThinning, counterexample_config(Counterexample::B2, n)?, Potential::Lambda { alpha })?;
    Ok((b1, b2))
}

/// Claim B.1 also evaluated with the `y >= 2` version of `Phi`.
pub fn b1_with_phi(n: usize, alpha: f64) -> Result<ExpectationResult> {
    let state = ProcessState::from_load(counterexample_config(Counterexample::B1, n)?);
    let kernel = transition_kernel(&ProcessConfig::Packing, &state)?;
    let e = expectation_with_kernel(&kernel, &state.load, Potential::Phi { alpha });
    let target = (0.1 * alpha * alpha / n as f64).ln_1p();
    let (lc, le) = (e.current.ln(), e.expected.ln());
    Ok(ExpectationResult::logs("phi", lc, le, lc + target, 0.0, true))
}

/// Exact distribution of the gap after `m` balls.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactGapDistribution {
    pub process: ProcessConfig,
    pub n: usize,
    pub m: i64,
    #[serde(serialize_with = "ser_gap_map")]
    pub probs: BTreeMap<Rational, BigRational>,
}

fn ser_gap_map<S: serde::Serializer>(
    m: &BTreeMap<Rational, BigRational>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut map = s.serialize_map(Some(m.len()))?;
    for (k, v) in m {
        map.serialize_entry(&crate::state::fmt_ratio(k), &crate::state::fmt_ratio(v))?;
    }
    map.end()
}

impl ExactGapDistribution {
    pub fn prob(&self, gap: Rational) -> BigRational {
        self.probs.get(&gap).cloned().unwrap_or_else(BigRational::zero)
    }
}

fn canonical(mut state: ProcessState) -> ProcessState {
    let cache_load = state.cache.map(|b| state.load.load(b));
    let mut loads = state.load.loads().to_vec();
    loads.sort_unstable_by(|a, b| b.cmp(a));
    state.cache = cache_load.map(|c| loads.iter().position(|&x| x == c).expect("present"));
    state.load = LoadState::from_loads(loads).expect("valid");
    state
}

/// Dynamic program over sorted load multisets (and the cached load for Caching).
pub fn exact_gap_distribution(config: &ProcessConfig, n: usize, m: i64) -> Result<ExactGapDistribution> {
    if n > 4 || !(0..=12).contains(&m) {
        return Err(Error::InvalidParameter("exact distribution needs n <= 4 and m <= 12".into()));
    }
    let stop = StopRule::balls(config, m);
    let mut frontier: HashMap<ProcessState, BigRational> = HashMap::new();
    frontier.insert(ProcessState::new(n)?, BigRational::from_integer(big(1)));
    let mut probs: BTreeMap<Rational, BigRational> = BTreeMap::new();
    while !frontier.is_empty() {
        let mut next: HashMap<ProcessState, BigRational> = HashMap::new();
        for (state, p) in frontier {
            if stop.done(&state) {
                *probs.entry(state.load.gap()).or_insert_with(BigRational::zero) += p;
                continue;
            }
            let kernel = transition_kernel(config, &state)?;
            for b in &kernel.branches {
                let q = &p * BigRational::new(big(b.numer), big(kernel.denom));
                let s = canonical(apply_branch(&state, b)?);
                *next.entry(s).or_insert_with(BigRational::zero) += q;
            }
        }
        frontier = next;
    }
    Ok(ExactGapDistribution { process: config.clone(), n, m, probs })
}

/// Empirical gap distribution over `samples` seeded runs of `m` balls.
pub fn monte_carlo_gap_distribution(
    config: &ProcessConfig,
    n: usize,
    m: i64,
    samples: u64,
    seed: u64,
) -> Result<BTreeMap<Rational, u64>> {
    let stop = StopRule::balls(config, m);
    let chunk = 10_000u64;
    let chunks: Vec<u64> = (0..samples.div_ceil(chunk)).collect();
    let parts: Vec<Result<BTreeMap<Rational, u64>>> = chunks
        .par_iter()
        .map(|&c| {
            let mut rng = stream(seed, c);
            let mut counts = BTreeMap::new();
            let params = Default::default();
            for _ in c * chunk..((c + 1) * chunk).min(samples) {
                let (s, _) =
                    crate::process::run(config, ProcessState::new(n)?, stop, &mut rng, TraceMode::Final, &params)?;
                *counts.entry(s.load.gap()).or_insert(0) += 1;
            }
            Ok(counts)
        })
        .collect();
    let mut out = BTreeMap::new();
    for part in parts {
        for (k, v) in part? {
            *out.entry(k).or_insert(0) += v;
        }
    }
    Ok(out)
}

/// Total variation distance between an exact and an empirical distribution.
pub fn total_variation(exact: &ExactGapDistribution, empirical: &BTreeMap<Rational, u64>) -> f64 {
    let total: u64 = empirical.values().sum();
    let mut keys: Vec<Rational> = exact.probs.keys().cloned().collect();
    keys.extend(empirical.keys().cloned());
    keys.sort();
    keys.dedup();
    0.5 * keys
        .iter()
        .map(|k| {
            let p = big_f64(&exact.prob(*k));
            let q = *empirical.get(k).unwrap_or(&0) as f64 / total as f64;
            (p - q).abs()
        })
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::ratio;

    fn at(loads: &[i64]) -> ProcessState {
        ProcessState::from_load(LoadState::from_loads(loads.to_vec()).unwrap())
    }

    fn q(p: i64, d: i64) -> BigRational {
        BigRational::new(big(p), big(d))
    }

    #[test]
    fn twinning_upsilon_by_hand() {
        let s = at(&[1, 0]);
        let r = one_step_expectation(&ProcessConfig::Twinning, &s, Potential::Upsilon).unwrap();
        assert_eq!(r.exact_expected, Some(q(5, 4)));
        let v = verify_upsilon_drop(&ProcessConfig::Twinning, &s).unwrap();
        // 1/2 - (1/2 * 2 - 1/2 * 1) * 1 + 4 * 2^2
        assert_eq!(v.exact_bound, Some(q(16, 1)));
        assert!(v.satisfied);
    }

    #[test]
    fn empty_state_delta() {
        for n in 2..6usize {
            let s = ProcessState::new(n).unwrap();
            for c in
                [ProcessConfig::OneChoice, ProcessConfig::Twinning, ProcessConfig::MeanThinning, ProcessConfig::Packing]
            {
                let r = one_step_expectation(&c, &s, Potential::Delta).unwrap();
                assert_eq!(r.exact_expected, Some(q(2 * (n as i64 - 1), n as i64)), "{c} n={n}");
            }
        }
    }

    #[test]
    fn constant_is_preserved() {
        let mut s = at(&[3, 1, 0, 2, 2]);
        for c in [
            ProcessConfig::OnePlusBeta { beta: ratio(1, 3) },
            ProcessConfig::OverPacking,
            ProcessConfig::Thinning { f: ratio(1, 2) },
        ] {
            let r = one_step_expectation(&c, &s, Potential::Constant).unwrap();
            assert_eq!(r.exact_expected, Some(q(1, 1)));
        }
        s.cache = Some(3);
        let r = one_step_expectation(&ProcessConfig::Caching, &s, Potential::Constant).unwrap();
        assert_eq!(r.exact_expected, Some(q(1, 1)));
    }

    #[test]
    fn mean_thinning_at_full_quantile_matches_one_choice() {
        let s = at(&[2, 2, 2]);
        for pot in [Potential::Upsilon, Potential::Lambda { alpha: 0.3 }] {
            let a = one_step_expectation(&ProcessConfig::MeanThinning, &s, pot).unwrap();
            let b = one_step_expectation(&ProcessConfig::OneChoice, &s, pot).unwrap();
            assert_eq!(a.exact_expected, b.exact_expected);
            assert!((a.expected - b.expected).abs() < 1e-12);
        }
    }

    #[test]
    fn log_domain_matches_direct_sum() {
        let s = at(&[9, 4, 0, 1, 7, 3]);
        for c in [ProcessConfig::MeanThinning, ProcessConfig::Packing, ProcessConfig::OverPacking] {
            let k = transition_kernel(&c, &s).unwrap();
            let e = expectation_with_kernel(&k, &s.load, Potential::Lambda { alpha: 0.4 });
            let mut direct = 0.0;
            for b in &k.branches {
                let next = apply_branch(&s, b).unwrap();
                direct += b.numer as f64 / k.denom as f64 * next.load.lambda(0.4);
            }
            assert!((e.expected.to_f64() / direct - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn phi_bound_examples() {
        let r = verify_phi_bound(&ProcessConfig::Packing, &ProcessState::new(4).unwrap(), 0.01).unwrap();
        assert!(r.satisfied);
        let r = verify_phi_bound(&ProcessConfig::Packing, &at(&[5, 3, 2, 2]), 0.01).unwrap();
        assert!(r.satisfied);
    }

    #[test]
    fn counterexample_shapes() {
        assert_eq!(counterexample_config(Counterexample::B1, 4).unwrap().loads(), &[4, 2, 1, 1]);
        let b2 = counterexample_config(Counterexample::B2, 4).unwrap();
        assert_eq!(b2.loads(), &[26, 14, 0, 0]);
        assert_eq!(b2.total(), 40);
        assert_eq!(b2.scaled_loads().z, vec![64, 16, -40, -40]);
        assert!(counterexample_config(Counterexample::B1, 5).is_err());
        assert!(counterexample_config(Counterexample::B2, 5).is_err());
    }

    #[test]
    fn exact_small_distributions() {
        let d = exact_gap_distribution(&ProcessConfig::OneChoice, 2, 2).unwrap();
        assert_eq!(d.prob(ratio(0, 1)), q(1, 2));
        assert_eq!(d.prob(ratio(1, 1)), q(1, 2));
        let d = exact_gap_distribution(&ProcessConfig::Twinning, 2, 1).unwrap();
        assert_eq!(d.probs.len(), 1);
        assert_eq!(d.prob(ratio(1, 2)), q(1, 1));
        let d = exact_gap_distribution(&ProcessConfig::two_choice(), 2, 2).unwrap();
        assert_eq!(d.prob(ratio(0, 1)), q(3, 4));
        assert_eq!(d.prob(ratio(1, 1)), q(1, 4));
        assert!(exact_gap_distribution(&ProcessConfig::OneChoice, 5, 2).is_err());
    }

    #[test]
    fn caching_two_step_empty() {
        let s = LoadState::new(5).unwrap();
        let r = caching_two_step_worst(&s).unwrap();
        assert!(r.satisfied);
        assert_eq!(r.expected, 0.0);
    }

    #[test]
    fn lambda_alpha_cap_for_mean_thinning() {
        let a = lambda_alpha_cap(&ProcessConfig::MeanThinning, 0.1).unwrap();
        assert!((a - 0.1 / (2.0 * 1.1)).abs() < 1e-12);
        let t = v_alpha_tilde(&ProcessConfig::Twinning, 10).unwrap();
        assert!((t - 1.0 / 160.0).abs() < 1e-15);
        let m = v_alpha_tilde(&ProcessConfig::MeanThinning, 10).unwrap();
        assert!((m - 1.0 / 22.0).abs() < 1e-15);
    }
}
