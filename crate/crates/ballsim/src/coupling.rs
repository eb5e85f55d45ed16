//! Coupled Thinning runs and the (1+beta) / (1+eta) majorization check.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::framework::{distribution_vector, Condition, ConditionReport, Constants, DistributionVector, Witness};
use crate::process::{below_thinning_threshold, stream, ProcessConfig, ProcessState};
use crate::state::{LoadState, Rational};

/// Two Thinning runs driven by the same samples: `A` from empty, `B` from `f` balls per bin,
/// both with threshold `t/n + f`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CoupledTrace {
    pub n: usize,
    pub m: u64,
    pub f: i64,
    pub samples: Vec<(usize, usize)>,
    /// Loads of `A` before round 0 and after every round.
    pub a: Vec<Vec<i64>>,
    pub b: Vec<Vec<i64>>,
    /// Whether `x_i(A) <= x_i(B)` for every bin, per recorded state.
    pub dominated: Vec<bool>,
    /// Rounds where `A` used its second sample but `B` did not.
    pub case2_disagreements: u64,
}

impl CoupledTrace {
    pub fn violations(&self) -> usize {
        self.dominated.iter().filter(|d| !**d).count()
    }

    pub fn identical(&self) -> bool {
        self.a == self.b
    }
}

/// Outcome of a coupled run without the per-round trajectories.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CouplingSummary {
    /// Rounds after which some bin had `x_i(A) > x_i(B)`.
    pub violations: u64,
    pub case2_disagreements: u64,
    /// Whether both trajectories agreed at every round.
    pub identical: bool,
    #[serde(serialize_with = "crate::serde_ratio::small")]
    pub gap_a: Rational,
}

fn coupled<F: FnMut(usize, usize, &LoadState, &LoadState)>(
    n: usize,
    m: u64,
    f: i64,
    seed: u64,
    mut record: F,
) -> Result<CouplingSummary> {
    if f < 0 {
        return Err(Error::InvalidParameter("f must be non-negative".into()));
    }
    let mut a = LoadState::new(n)?;
    let mut b = LoadState::from_loads(vec![f; n])?;
    let threshold = Rational::from_integer(f);
    let mut rng = stream(seed, 0);
    let mut summary = CouplingSummary { violations: 0, case2_disagreements: 0, identical: a == b, gap_a: a.gap() };
    record(usize::MAX, usize::MAX, &a, &b);
    for t in 0..m {
        let i1 = rng.gen_range(0..n);
        let i2 = rng.gen_range(0..n);
        let a_first = below_thinning_threshold(&a, i1, t, &threshold);
        let b_first = below_thinning_threshold(&b, i1, t, &threshold);
        if !a_first && b_first {
            summary.case2_disagreements += 1;
        }
        a.add(if a_first { i1 } else { i2 }, 1)?;
        b.add(if b_first { i1 } else { i2 }, 1)?;
        if a.loads().iter().zip(b.loads()).any(|(xa, xb)| xa > xb) {
            summary.violations += 1;
        }
        summary.identical &= a == b;
        record(i1, i2, &a, &b);
    }
    summary.gap_a = a.gap();
    Ok(summary)
}

/// Runs the coupling for `m` rounds, keeping both trajectories.
pub fn coupled_thinning(n: usize, m: u64, f: i64, seed: u64) -> Result<CoupledTrace> {
    let mut trace = CoupledTrace {
        n,
        m,
        f,
        samples: Vec::with_capacity(m as usize),
        a: Vec::new(),
        b: Vec::new(),
        dominated: Vec::new(),
        case2_disagreements: 0,
    };
    let summary = coupled(n, m, f, seed, |i1, i2, a, b| {
        if i1 != usize::MAX {
            trace.samples.push((i1, i2));
        }
        trace.a.push(a.loads().to_vec());
        trace.b.push(b.loads().to_vec());
        trace.dominated.push(a.loads().iter().zip(b.loads()).all(|(xa, xb)| xa <= xb));
    })?;
    trace.case2_disagreements = summary.case2_disagreements;
    Ok(trace)
}

/// Runs the coupling for `m` rounds, keeping only counts.
pub fn coupled_thinning_summary(n: usize, m: u64, f: i64, seed: u64) -> Result<CouplingSummary> {
    coupled(n, m, f, seed, |_, _, _, _| {})
}

/// One-sided comparison of two empirical distributions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DominanceReport {
    pub holds: bool,
    /// Largest `P(X >= g) - P(Y + shift >= g)` in units of its standard error.
    pub worst_z: f64,
    pub worst_at: i64,
    pub checked: Vec<(i64, f64, f64)>,
}

/// Whether `P(X >= g) <= P(Y + shift >= g) + z * se` at every integer `g` in the joint range.
pub fn tail_dominance(x: &[Rational], y: &[Rational], shift: Rational, z: f64) -> DominanceReport {
    let tail = |s: &[Rational], g: Rational, off: Rational| {
        s.iter().filter(|&&v| v + off >= g).count() as f64 / s.len() as f64
    };
    let lo = x.iter().chain(y.iter()).min().map(|v| v.floor().to_integer()).unwrap_or(0);
    let hi = x.iter().copied().chain(y.iter().map(|v| *v + shift)).max().map(|v| v.ceil().to_integer()).unwrap_or(0);
    let mut report = DominanceReport { holds: true, worst_z: f64::NEG_INFINITY, worst_at: lo, checked: Vec::new() };
    for g in lo..=hi + 1 {
        let gr = Rational::from_integer(g);
        let p = tail(x, gr, Rational::from_integer(0));
        let q = tail(y, gr, shift);
        let se = (p * (1.0 - p) / x.len() as f64 + q * (1.0 - q) / y.len() as f64).sqrt();
        let diff = p - q;
        let score = if se > 0.0 {
            diff / se
        } else if diff > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if score > report.worst_z {
            report.worst_z = score;
            report.worst_at = g;
        }
        if diff > z * se {
            report.holds = false;
        }
        report.checked.push((g, p, q));
    }
    report
}

/// For every quantile `j/n`, checks that the `(1+eta)` vector with `eta = beta`
/// majorizes the `(1+beta)` vector, with equal prefix sums at `k = j`.
pub fn beta_eta_prefix_check(n: usize, beta: Rational) -> Result<ConditionReport> {
    let eta = ProcessConfig::OnePlusEtaMeanThinning { eta: beta };
    let plus_beta = ProcessConfig::OnePlusBeta { beta };
    eta.validate()?;
    let constants = Constants {
        k1: Some(crate::framework::Prob::new(*beta.numer() as i128, *beta.denom() as i128)),
        ..Constants::default()
    };
    for j in 1..=n {
        let loads = (0..n).map(|i| (i < j) as i64).collect();
        let state = ProcessState::from_load(LoadState::from_loads(loads)?);
        debug_assert_eq!(state.load.overloaded_count(), j);
        let p = distribution_vector(&eta, &state)?;
        let q = distribution_vector(&plus_beta, &state)?;
        if let Some(k) = first_failure(&p, &q, j) {
            return Ok(ConditionReport {
                condition: Condition::Majorization,
                holds: false,
                vacuous: false,
                witness: Some(Witness { index: j as u64, inequality: k }),
                constants,
            });
        }
    }
    Ok(ConditionReport { condition: Condition::Majorization, holds: true, vacuous: false, witness: None, constants })
}

fn first_failure(p: &DistributionVector, q: &DistributionVector, j: usize) -> Option<String> {
    let (dp, dq) = (p.denominator(), q.denominator());
    let (mut sp, mut sq) = (0i128, 0i128);
    for k in 0..p.n() {
        sp += p.numerators()[k];
        sq += q.numerators()[k];
        let (lhs, rhs) = (sp * dq, sq * dp);
        if lhs < rhs {
            return Some(format!("prefix {} below at k = {}", j, k + 1));
        }
        if k + 1 == j && lhs != rhs {
            return Some(format!("prefix sums differ at the boundary k = {j}"));
        }
    }
    None
}
