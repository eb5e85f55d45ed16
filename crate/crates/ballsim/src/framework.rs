//! Allocation distribution vectors, condition checkers, majorization and unfolding.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::Ratio;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::process::{below_thinning_threshold, AllocationEvent, ProcessConfig, ProcessState};
use crate::state::LoadState;

/// Exact rational with wide parts, used for probabilities and condition constants.
pub type Prob = Ratio<i128>;

/// Per-rank probabilities of being the allocation target, rank 1 being the most loaded.
///
/// Stored as integer numerators over one common denominator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DistributionVector {
    numer: Vec<i128>,
    denom: i128,
}

fn le_frac(a: i128, b: i128, c: i128, d: i128) -> bool {
    match (a.checked_mul(d), c.checked_mul(b)) {
        (Some(x), Some(y)) => x <= y,
        _ => BigInt::from(a) * BigInt::from(d) <= BigInt::from(c) * BigInt::from(b),
    }
}

impl DistributionVector {
    pub fn new(numer: Vec<i128>, denom: i128) -> Result<Self> {
        if denom <= 0 || numer.iter().any(|&p| p < 0) || numer.iter().sum::<i128>() != denom {
            return Err(Error::InvalidParameter("probabilities must be non-negative and sum to 1".into()));
        }
        Ok(DistributionVector { numer, denom })
    }

    pub fn uniform(n: usize) -> Self {
        DistributionVector { numer: vec![1; n], denom: n as i128 }
    }

    pub fn n(&self) -> usize {
        self.numer.len()
    }

    pub fn numerators(&self) -> &[i128] {
        &self.numer
    }

    pub fn denominator(&self) -> i128 {
        self.denom
    }

    /// Probability of rank `i` (0-based).
    pub fn prob(&self, i: usize) -> Prob {
        Prob::new(self.numer[i], self.denom)
    }

    pub fn probs(&self) -> Vec<Prob> {
        (0..self.n()).map(|i| self.prob(i)).collect()
    }
}

/// Target distribution of one round of `config` from `state`, over the sorted labeling.
pub fn distribution_vector(config: &ProcessConfig, state: &ProcessState) -> Result<DistributionVector> {
    let load = &state.load;
    let n = load.n() as i128;
    let nn = n * n;
    let q = load.overloaded_count() as i128;
    let ranks = 1..=n;
    let v = match config {
        ProcessConfig::OneChoice | ProcessConfig::Packing | ProcessConfig::OverPacking | ProcessConfig::Twinning => {
            DistributionVector::uniform(load.n())
        }
        ProcessConfig::DChoice { d } => {
            let d = *d;
            let denom = n.checked_pow(d).ok_or(Error::Overflow)?;
            let numer = ranks.map(|i| i.pow(d) - (i - 1).pow(d)).collect();
            DistributionVector { numer, denom }
        }
        ProcessConfig::OnePlusBeta { beta } => {
            let (a, b) = (*beta.numer() as i128, *beta.denom() as i128);
            let numer = ranks.map(|i| (b - a) * n + a * (2 * i - 1)).collect();
            DistributionVector { numer, denom: b * nn }
        }
        ProcessConfig::MeanThinning => threshold_vector(n, q, 0, 1),
        ProcessConfig::Thinning { f } => {
            let heavy = (0..load.n()).filter(|&i| !below_thinning_threshold(load, i, state.round, f)).count() as i128;
            threshold_vector(n, heavy, 0, 1)
        }
        ProcessConfig::OnePlusEtaMeanThinning { eta } => {
            threshold_vector(n, q, *eta.numer() as i128, *eta.denom() as i128)
        }
        ProcessConfig::Caching => {
            // An empty cache only occurs before the first ball, which goes to a uniform bin.
            let Some(b) = state.cache else { return Ok(DistributionVector::uniform(n as usize)) };
            let xb = load.load(b);
            let heavier = load.loads().iter().filter(|&&x| x > xb).count();
            let order = load.sorted_order();
            let numer = order
                .iter()
                .map(|&i| {
                    if i == b {
                        1 + heavier as i128
                    } else if load.load(i) > xb {
                        0
                    } else {
                        1
                    }
                })
                .collect();
            DistributionVector { numer, denom: n }
        }
    };
    debug_assert_eq!(v.numer.iter().sum::<i128>(), v.denom);
    Ok(v)
}

/// Two-sample threshold rule with `heavy` bins at or above the threshold, mixed with
/// one-choice with weight `1 - a/b` (`a = 0` means no mixing).
fn threshold_vector(n: i128, heavy: i128, a: i128, b: i128) -> DistributionVector {
    let (a, b) = if a == 0 { (1, 1) } else { (a, b) };
    let over = (b - a) * n + a * heavy;
    let under = (b - a) * n + a * (n + heavy);
    let numer = (0..n).map(|i| if i < heavy { over } else { under }).collect();
    DistributionVector { numer, denom: b * n * n }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Condition {
    P1,
    P2,
    P3,
    P4,
    W1,
    W2,
    W3,
    /// Prefix majorization of one vector over another.
    Majorization,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// First place a condition failed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    /// Rank (1-based) for distribution conditions, round for weight conditions.
    pub index: u64,
    pub inequality: String,
}

/// Constants certified or used by a check.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Constants {
    #[serde(serialize_with = "crate::serde_ratio::opt_wide")]
    pub k1: Option<Prob>,
    #[serde(serialize_with = "crate::serde_ratio::opt_wide")]
    pub k2: Option<Prob>,
    #[serde(serialize_with = "crate::serde_ratio::opt_wide")]
    pub eps: Option<Prob>,
    #[serde(serialize_with = "crate::serde_ratio::opt_wide")]
    pub k4: Option<Prob>,
    #[serde(serialize_with = "crate::serde_ratio::opt_wide")]
    pub p_plus: Option<Prob>,
    #[serde(serialize_with = "crate::serde_ratio::opt_wide")]
    pub p_minus: Option<Prob>,
    pub w_plus: Option<i64>,
    pub w_minus: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub holds: bool,
    /// The condition's hypothesis did not apply (for example an empty side or `delta` outside the band).
    pub vacuous: bool,
    pub witness: Option<Witness>,
    pub constants: Constants,
}

impl ConditionReport {
    fn pass(condition: Condition, constants: Constants) -> Self {
        ConditionReport { condition, holds: true, vacuous: false, witness: None, constants }
    }

    fn fail(condition: Condition, index: u64, inequality: String, constants: Constants) -> Self {
        ConditionReport {
            condition,
            holds: false,
            vacuous: false,
            witness: Some(Witness { index, inequality }),
            constants,
        }
    }
}

/// Whether prefix sums stay below those of the uniform distribution.
pub fn check_p1(p: &DistributionVector) -> ConditionReport {
    let n = p.n() as i128;
    let mut prefix = 0i128;
    for (k, &x) in p.numer.iter().enumerate() {
        prefix += x;
        let k = k as i128 + 1;
        if !le_frac(prefix, p.denom, k, n) {
            return ConditionReport::fail(
                Condition::P1,
                k as u64,
                format!("prefix {} > {}/{}", Prob::new(prefix, p.denom), k, n),
                Constants::default(),
            );
        }
    }
    ConditionReport::pass(Condition::P1, Constants::default())
}

/// `(p_+, p_-)`: the largest overloaded and smallest underloaded probabilities.
pub fn side_extremes(p: &DistributionVector, load: &LoadState) -> (Option<Prob>, Option<Prob>) {
    let q = load.overloaded_count();
    let plus = p.numer[..q].iter().max().map(|&x| Prob::new(x, p.denom));
    let minus = p.numer[q..].iter().min().map(|&x| Prob::new(x, p.denom));
    (plus, minus)
}

fn quantile(load: &LoadState) -> Prob {
    Prob::new(load.overloaded_count() as i128, load.n() as i128)
}

pub fn check_p2(p: &DistributionVector, state: &ProcessState) -> ConditionReport {
    let load = &state.load;
    let inv_n = Prob::new(1, load.n() as i128);
    let (plus, minus) = side_extremes(p, load);
    let constants = Constants { p_plus: plus, p_minus: minus, ..Default::default() };
    if let Some(pp) = plus {
        if pp > inv_n {
            return ConditionReport::fail(Condition::P2, 1, format!("p_+ = {pp} > 1/n"), constants);
        }
    }
    if let Some(pm) = minus {
        if pm < inv_n {
            return ConditionReport::fail(Condition::P2, 1, format!("p_- = {pm} < 1/n"), constants);
        }
    }
    let mut r = ConditionReport::pass(Condition::P2, constants);
    r.vacuous = minus.is_none();
    r
}

pub fn check_p3(p: &DistributionVector, state: &ProcessState, k1: Prob, k2: Prob) -> ConditionReport {
    let load = &state.load;
    let n = Prob::from_integer(load.n() as i128);
    let delta = quantile(load);
    let one = Prob::from_integer(1);
    let (plus, minus) = side_extremes(p, load);
    let constants = Constants { k1: Some(k1), k2: Some(k2), p_plus: plus, p_minus: minus, ..Default::default() };
    let plus_cap = (one - k1 * (one - delta)) / n;
    let minus_floor = (one + k2 * delta) / n;
    if let Some(pp) = plus {
        if pp > plus_cap {
            return ConditionReport::fail(Condition::P3, 1, format!("p_+ = {pp} > {plus_cap}"), constants);
        }
    }
    if let Some(pm) = minus {
        if pm < minus_floor {
            return ConditionReport::fail(Condition::P3, 1, format!("p_- = {pm} < {minus_floor}"), constants);
        }
    }
    let mut r = ConditionReport::pass(Condition::P3, constants);
    r.vacuous = minus.is_none();
    r
}

/// Largest `(k1, k2)` that this state satisfies; `None` means unconstrained.
pub fn fit_p3(p: &DistributionVector, state: &ProcessState) -> (Option<Prob>, Option<Prob>) {
    let load = &state.load;
    let n = Prob::from_integer(load.n() as i128);
    let delta = quantile(load);
    let one = Prob::from_integer(1);
    let (plus, minus) = side_extremes(p, load);
    let k1 = match plus {
        Some(pp) if delta < one => Some((one - n * pp) / (one - delta)),
        _ => None,
    };
    let k2 = minus.map(|pm| (n * pm - one) / delta);
    (k1, k2)
}

pub fn check_p4(p: &DistributionVector, state: &ProcessState, eps: Prob) -> ConditionReport {
    let delta = quantile(&state.load);
    let one = Prob::from_integer(1);
    let mut constants = Constants { eps: Some(eps), ..Default::default() };
    if !(delta > eps && delta < one - eps) {
        let mut r = ConditionReport::pass(Condition::P4, constants);
        r.vacuous = true;
        return r;
    }
    let k4 = fit_p4(p);
    constants.k4 = Some(k4);
    if k4 > Prob::from_integer(0) {
        ConditionReport::pass(Condition::P4, constants)
    } else {
        let rank = p.numer.iter().position(|&x| x == 0).unwrap_or(0) as u64 + 1;
        ConditionReport::fail(Condition::P4, rank, "p_i = 0".into(), constants)
    }
}

/// `n * min_i p_i`.
pub fn fit_p4(p: &DistributionVector) -> Prob {
    let min = *p.numer.iter().min().expect("non-empty");
    Prob::new(min * p.n() as i128, p.denom)
}

/// Whether `p` majorizes `q`: every prefix sum of `p` is at least that of `q`.
pub fn majorizes(p: &DistributionVector, q: &DistributionVector) -> bool {
    first_majorization_failure(p, q).is_none()
}

/// First prefix length `k` at which `p` falls below `q`.
pub fn first_majorization_failure(p: &DistributionVector, q: &DistributionVector) -> Option<usize> {
    assert_eq!(p.n(), q.n());
    let (mut sp, mut sq) = (0i128, 0i128);
    for k in 0..p.n() {
        sp += p.numer[k];
        sq += q.numer[k];
        if !le_frac(sq, q.denom, sp, p.denom) {
            return Some(k + 1);
        }
    }
    None
}

/// Checks the caps on one filling round: no bin receives more than `ceil(-y)+1` balls,
/// at most one receives exactly that many, and at most two receive `ceil(-y)` or more.
/// `received` pairs each receiving bin with its `ceil(-y)` at the reference state.
pub fn w1_caps(received: &[(usize, i64, i64)]) -> std::result::Result<(), String> {
    let mut plus_one = 0;
    let mut at_least = 0;
    for &(bin, balls, ceil) in received {
        if balls > ceil + 1 {
            return Err(format!("bin {bin} received {balls} > ceil(-y)+1 = {}", ceil + 1));
        }
        if balls == ceil + 1 {
            plus_one += 1;
        }
        if balls >= ceil {
            at_least += 1;
        }
    }
    if plus_one > 1 {
        return Err(format!("{plus_one} bins received ceil(-y)+1 balls"));
    }
    if at_least > 2 {
        return Err(format!("{at_least} bins received at least ceil(-y) balls"));
    }
    Ok(())
}

fn aggregate(placements: &[(usize, i64)]) -> BTreeMap<usize, i64> {
    let mut m = BTreeMap::new();
    for &(bin, balls) in placements {
        *m.entry(bin).or_insert(0) += balls;
    }
    m
}

/// Checks one round against the filling condition.
pub fn w1_round(pre: &LoadState, ev: &AllocationEvent) -> std::result::Result<(), String> {
    let i = *ev.samples.first().ok_or("round without a sample")?;
    if pre.z(i) >= 0 {
        if ev.placements != [(i, 1)] {
            return Err(format!("overloaded sample {i} but placements {:?}", ev.placements));
        }
        return Ok(());
    }
    let want = pre.ceil_neg_y(i) + 1;
    if ev.weight != want {
        return Err(format!("underloaded sample {i}: weight {} != ceil(-y)+1 = {want}", ev.weight));
    }
    let received: Vec<(usize, i64, i64)> =
        aggregate(&ev.placements).into_iter().map(|(b, r)| (b, r, pre.ceil_neg_y(b))).collect();
    w1_caps(&received)
}

/// Streaming classifier of realized round weights.
#[derive(Clone, Debug)]
pub struct WeightClassifier {
    condition: Condition,
    w_plus: Option<i64>,
    w_minus: Option<i64>,
    failure: Option<Witness>,
}

impl WeightClassifier {
    pub fn new(condition: Condition) -> Result<Self> {
        if !matches!(condition, Condition::W1 | Condition::W2 | Condition::W3) {
            return Err(Error::InvalidParameter(format!("{condition} is not a weight condition")));
        }
        Ok(WeightClassifier { condition, w_plus: None, w_minus: None, failure: None })
    }

    pub fn observe(&mut self, pre: &LoadState, ev: &AllocationEvent) {
        if self.failure.is_some() {
            return;
        }
        let fail = |msg: String| Some(Witness { index: ev.round, inequality: msg });
        if self.condition == Condition::W1 {
            if let Err(msg) = w1_round(pre, ev) {
                self.failure = fail(msg);
            }
            return;
        }
        if ev.placements.len() != 1 {
            self.failure = fail(format!("{} bins received balls", ev.placements.len()));
            return;
        }
        let target = ev.target();
        let slot = if pre.z(target) >= 0 { &mut self.w_plus } else { &mut self.w_minus };
        match *slot {
            None => *slot = Some(ev.weight),
            Some(w) if w != ev.weight => {
                let side = if pre.z(target) >= 0 { "w_+" } else { "w_-" };
                self.failure = fail(format!("{side} changed from {w} to {}", ev.weight));
            }
            _ => {}
        }
    }

    pub fn report(&self) -> ConditionReport {
        let constants = Constants { w_plus: self.w_plus, w_minus: self.w_minus, ..Default::default() };
        if let Some(w) = &self.failure {
            return ConditionReport::fail(self.condition, w.index, w.inequality.clone(), constants);
        }
        match (self.condition, self.w_plus, self.w_minus) {
            (Condition::W1, _, _) => ConditionReport::pass(Condition::W1, constants),
            (c, Some(p), Some(m)) => {
                let ok = if c == Condition::W3 { p < m } else { 1 <= p && p <= m };
                if ok {
                    ConditionReport::pass(c, constants)
                } else {
                    ConditionReport::fail(c, 0, format!("w_+ = {p}, w_- = {m}"), constants)
                }
            }
            (c, _, _) => {
                let mut r = ConditionReport::pass(c, constants);
                r.holds = c != Condition::W3;
                if !r.holds {
                    r.witness = Some(Witness { index: 0, inequality: "a branch was never observed".into() });
                }
                r.vacuous = true;
                r
            }
        }
    }
}

/// Classifies a recorded trace against `condition`; `states[t]` is the state before round `t`.
pub fn classify_weights(
    condition: Condition,
    trace: &[AllocationEvent],
    states: &[LoadState],
) -> Result<ConditionReport> {
    if trace.len() != states.len() {
        return Err(Error::InvalidParameter(format!("{} events but {} pre-states", trace.len(), states.len())));
    }
    let mut c = WeightClassifier::new(condition)?;
    for (ev, pre) in trace.iter().zip(states) {
        c.observe(pre, ev);
    }
    Ok(c.report())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AtomicAllocation {
    pub round: u64,
    pub bin: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Unfolded {
    pub atoms: Vec<AtomicAllocation>,
    /// Index of the first atomic allocation of each round.
    pub boundaries: Vec<usize>,
}

/// Expands rounds into single-ball allocations, with the bins receiving `ceil(-y)+1`
/// and then `ceil(-y)` balls placed first.
pub fn unfold(trace: &[AllocationEvent], states: &[LoadState]) -> Result<Unfolded> {
    if trace.len() != states.len() {
        return Err(Error::InvalidParameter("trace and states differ in length".into()));
    }
    let mut out = Unfolded { atoms: Vec::new(), boundaries: Vec::with_capacity(trace.len()) };
    for (ev, pre) in trace.iter().zip(states) {
        out.boundaries.push(out.atoms.len());
        let mut order: Vec<(usize, i64)> = ev.placements.clone();
        let rank = |&(bin, balls): &(usize, i64)| {
            let c = pre.ceil_neg_y(bin);
            if balls == c + 1 {
                0
            } else if balls == c {
                1
            } else {
                2
            }
        };
        order.sort_by_key(rank);
        for (bin, balls) in order {
            for _ in 0..balls {
                out.atoms.push(AtomicAllocation { round: ev.round, bin });
            }
        }
    }
    Ok(out)
}

/// One round of the folded process built from consecutive Caching allocations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CachingGroup {
    /// Atomic index of the first allocation in the group.
    pub start: u64,
    pub chosen: usize,
    /// Allocations the group should contain.
    pub size: i64,
    /// Allocations it actually contains (smaller only for a trailing group).
    pub len: i64,
    /// `(bin, balls, ceil(-y) at the group start)`.
    pub received: Vec<(usize, i64, i64)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GroupedTrace {
    pub groups: Vec<CachingGroup>,
    pub report: ConditionReport,
}

/// Open group, `W` at its start, and `(balls received, -floor(y) at the start)` per bin.
type OpenGroup = (CachingGroup, i64, BTreeMap<usize, (i64, i64)>);

/// Streaming grouping of a Caching trace into filling rounds.
#[derive(Clone, Debug)]
pub struct CachingGrouper {
    keep: bool,
    groups: Vec<CachingGroup>,
    count: usize,
    open: Option<OpenGroup>,
    failure: Option<Witness>,
}

impl CachingGrouper {
    /// With `keep` false only the verdict and group count are retained.
    pub fn new(keep: bool) -> Self {
        CachingGrouper { keep, groups: Vec::new(), count: 0, open: None, failure: None }
    }

    pub fn group_count(&self) -> usize {
        self.count
    }

    pub fn observe(&mut self, pre: &LoadState, ev: &AllocationEvent) {
        if ev.weight != 1 || ev.placements.len() != 1 {
            self.failure.get_or_insert(Witness { index: ev.round, inequality: "not a single-ball round".into() });
            return;
        }
        let bin = ev.target();
        if self.open.is_none() {
            let size = if pre.z(bin) >= 0 { 1 } else { pre.ceil_neg_y(bin) + 1 };
            let g = CachingGroup { start: ev.round, chosen: bin, size, len: 0, received: Vec::new() };
            self.open = Some((g, pre.total(), BTreeMap::new()));
        }
        let n = pre.n() as i64;
        let (g, w_start, seen) = self.open.as_mut().expect("open group");
        // A bin's load at the group start equals its load before its first ball in the group.
        let entry = seen.entry(bin).or_insert_with(|| {
            let z = n * pre.load(bin) - *w_start;
            (0, -num_integer::Integer::div_floor(&z, &n))
        });
        entry.0 += 1;
        g.len += 1;
        if g.len == g.size {
            self.close(true);
        }
    }

    fn close(&mut self, complete: bool) {
        let Some((mut g, _, seen)) = self.open.take() else { return };
        g.received = seen.into_iter().map(|(b, (r, c))| (b, r, c)).collect();
        self.count += 1;
        if self.failure.is_none() {
            let verdict = if g.size == 1 {
                if g.received == [(g.chosen, 1, g.received[0].2)] {
                    Ok(())
                } else {
                    Err("size-one group placed elsewhere".to_string())
                }
            } else {
                w1_caps(&g.received).and_then(|()| {
                    if complete && g.len != g.size {
                        Err(format!("group holds {} balls, expected {}", g.len, g.size))
                    } else {
                        Ok(())
                    }
                })
            };
            if let Err(msg) = verdict {
                self.failure = Some(Witness { index: g.start, inequality: msg });
            }
        }
        if self.keep {
            self.groups.push(g);
        }
    }

    pub fn finish(mut self) -> GroupedTrace {
        self.close(false);
        let report = match self.failure {
            None => ConditionReport::pass(Condition::W1, Constants::default()),
            Some(w) => ConditionReport::fail(Condition::W1, w.index, w.inequality, Constants::default()),
        };
        GroupedTrace { groups: self.groups, report }
    }
}

/// Groups a Caching trace; `states[t]` is the load before atomic step `t`.
pub fn group_caching_trace(trace: &[AllocationEvent], states: &[LoadState]) -> Result<GroupedTrace> {
    if trace.len() != states.len() {
        return Err(Error::InvalidParameter("trace and states differ in length".into()));
    }
    let mut g = CachingGrouper::new(true);
    for (ev, pre) in trace.iter().zip(states) {
        g.observe(pre, ev);
    }
    Ok(g.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::ratio;

    fn at(loads: &[i64]) -> ProcessState {
        ProcessState::from_load(LoadState::from_loads(loads.to_vec()).unwrap())
    }

    fn pr(p: i128, q: i128) -> Prob {
        Prob::new(p, q)
    }

    #[test]
    fn mean_thinning_vector() {
        let s = at(&[5, 3, 2, 2]);
        let p = distribution_vector(&ProcessConfig::MeanThinning, &s).unwrap();
        assert_eq!(p.probs(), vec![pr(1, 8), pr(1, 8), pr(3, 8), pr(3, 8)]);
        let r = check_p2(&p, &s);
        assert!(r.holds);
        assert_eq!(r.constants.p_plus, Some(pr(1, 8)));
        assert_eq!(r.constants.p_minus, Some(pr(3, 8)));
        assert!(check_p3(&p, &s, pr(1, 1), pr(1, 1)).holds);
    }

    #[test]
    fn one_plus_beta_vector() {
        let s = at(&[0, 0]);
        let p = distribution_vector(&ProcessConfig::OnePlusBeta { beta: ratio(1, 2) }, &s).unwrap();
        assert_eq!(p.probs(), vec![pr(3, 8), pr(5, 8)]);
    }

    #[test]
    fn twinning_is_uniform_and_tight() {
        let s = at(&[4, 1, 0, 3]);
        let p = distribution_vector(&ProcessConfig::Twinning, &s).unwrap();
        assert_eq!(p, DistributionVector::uniform(4));
        let r = check_p2(&p, &s);
        assert!(r.holds);
        assert_eq!(r.constants.p_plus, Some(pr(1, 4)));
        assert_eq!(r.constants.p_minus, Some(pr(1, 4)));
        assert_eq!(check_p4(&p, &s, pr(1, 10)).constants.k4, Some(pr(1, 1)));
    }

    #[test]
    fn p1_examples() {
        assert!(check_p1(&DistributionVector::uniform(5)).holds);
        let bad = DistributionVector::new(vec![2, 1, 1, 0], 4).unwrap();
        let r = check_p1(&bad);
        assert!(!r.holds);
        assert_eq!(r.witness.unwrap().index, 1);
    }

    #[test]
    fn p2_fails_on_light_underloaded_rank() {
        let s = at(&[1, 0]);
        let p = DistributionVector::new(vec![3, 1], 4).unwrap();
        assert!(!check_p2(&p, &s).holds);
    }

    #[test]
    fn p3_uniform_fails_with_positive_k1() {
        let s = at(&[1, 1, 0, 0]);
        let p = DistributionVector::uniform(4);
        assert!(!check_p3(&p, &s, pr(1, 2), pr(0, 1)).holds);
    }

    #[test]
    fn p3_one_plus_eta() {
        let c = ProcessConfig::OnePlusEtaMeanThinning { eta: ratio(1, 3) };
        for loads in [[3, 1, 0, 0, 0], [1, 1, 1, 0, 0], [1, 1, 1, 1, 1]] {
            let s = at(&loads);
            let p = distribution_vector(&c, &s).unwrap();
            assert!(check_p3(&p, &s, pr(1, 3), pr(1, 3)).holds);
            assert!(!check_p3(&p, &s, pr(1, 2), pr(1, 2)).holds || s.load.overloaded_count() == 5);
        }
    }

    #[test]
    fn p4_constants() {
        let s = at(&[1, 1, 0, 0]);
        let mt = distribution_vector(&ProcessConfig::MeanThinning, &s).unwrap();
        assert_eq!(check_p4(&mt, &s, pr(1, 10)).constants.k4, Some(pr(1, 2)));
        let b = distribution_vector(&ProcessConfig::OnePlusBeta { beta: ratio(1, 2) }, &s).unwrap();
        let k4 = check_p4(&b, &s, pr(1, 10)).constants.k4.unwrap();
        assert!(k4 >= pr(1, 2));
        assert_eq!(k4, pr(1, 2) + pr(1, 8));
        let all = at(&[1, 1, 1, 1]);
        assert!(check_p4(&mt, &all, pr(1, 10)).vacuous);
    }

    #[test]
    fn caching_vector_routes_heavier_mass_to_cache() {
        let mut s = at(&[5, 1, 3, 1]);
        s.cache = Some(2);
        let p = distribution_vector(&ProcessConfig::Caching, &s).unwrap();
        assert_eq!(p.numerators(), &[0, 2, 1, 1]);
        assert!(check_p1(&p).holds);
        s.cache = None;
        assert_eq!(distribution_vector(&ProcessConfig::Caching, &s).unwrap(), DistributionVector::uniform(4));
    }

    #[test]
    fn majorization_examples() {
        let u = DistributionVector::uniform(4);
        assert!(majorizes(&u, &u));
        let two = distribution_vector(&ProcessConfig::two_choice(), &at(&[0; 4])).unwrap();
        assert_eq!(two.numerators(), &[1, 3, 5, 7]);
        assert!(majorizes(&u, &two));
        assert!(!majorizes(&two, &u));
        assert_eq!(first_majorization_failure(&two, &u), Some(1));
    }

    #[test]
    fn w1_caps_rules() {
        assert!(w1_caps(&[(0, 3, 2)]).is_ok());
        assert!(w1_caps(&[(0, 4, 2)]).is_err());
        assert!(w1_caps(&[(0, 3, 2), (1, 2, 1)]).is_err());
        assert!(w1_caps(&[(0, 3, 2), (1, 1, 1), (2, 0, 3)]).is_ok());
        assert!(w1_caps(&[(0, 2, 2), (1, 1, 1), (2, 2, 2)]).is_err());
    }

    #[test]
    fn weight_classifier_detects_violations() {
        let pre = LoadState::from_loads(vec![5, 3, 2, 2]).unwrap();
        let good = AllocationEvent { round: 0, samples: vec![2], cache: None, placements: vec![(2, 2)], weight: 2 };
        let short = AllocationEvent { placements: vec![(2, 1)], weight: 1, ..good.clone() };
        assert!(
            classify_weights(Condition::W1, std::slice::from_ref(&good), std::slice::from_ref(&pre)).unwrap().holds
        );
        assert!(!classify_weights(Condition::W1, &[short], std::slice::from_ref(&pre)).unwrap().holds);
        assert!(classify_weights(Condition::W1, &[good], &[]).is_err());

        // ceil(-y) is 1, 2, 3 for bins 2, 3, 4
        let pre = LoadState::from_loads(vec![8, 5, 2, 1, 0, 0]).unwrap();
        let ev = |placements: Vec<(usize, i64)>| AllocationEvent {
            round: 0,
            samples: vec![4],
            cache: None,
            placements,
            weight: 4,
        };
        let w1 = |e: AllocationEvent| classify_weights(Condition::W1, &[e], std::slice::from_ref(&pre)).unwrap().holds;
        assert!(w1(ev(vec![(4, 4)])));
        assert!(w1(ev(vec![(2, 1), (3, 1), (4, 2)])));
        assert!(!w1(ev(vec![(2, 4)])));
    }

    #[test]
    fn unfold_puts_designated_bins_first() {
        let pre = LoadState::from_loads(vec![8, 5, 2, 1, 0, 0]).unwrap();
        let ev = AllocationEvent {
            round: 0,
            samples: vec![4],
            cache: None,
            placements: vec![(2, 1), (3, 1), (4, 2)],
            weight: 4,
        };
        let one = AllocationEvent { round: 1, samples: vec![0], cache: None, placements: vec![(0, 1)], weight: 1 };
        let u = unfold(&[ev, one], &[pre.clone(), pre]).unwrap();
        let bins: Vec<usize> = u.atoms.iter().map(|a| a.bin).collect();
        assert_eq!(bins, vec![2, 3, 4, 4, 0]);
        assert_eq!(u.boundaries, vec![0, 4]);
    }
}
