//! Step functions for the allocation processes.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{fmt_ratio, psi_alpha, LoadState, PotentialReport, Rational};

/// One allocation process together with its parameters.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ProcessConfig {
    OneChoice,
    DChoice {
        d: u32,
    },
    OnePlusBeta {
        #[serde(with = "crate::serde_ratio::string")]
        beta: Rational,
    },
    Caching,
    Packing,
    OverPacking,
    Twinning,
    Thinning {
        #[serde(with = "crate::serde_ratio::string")]
        f: Rational,
    },
    MeanThinning,
    OnePlusEtaMeanThinning {
        #[serde(with = "crate::serde_ratio::string")]
        eta: Rational,
    },
}

impl ProcessConfig {
    pub fn two_choice() -> Self {
        ProcessConfig::DChoice { d: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, r: &Rational| {
            if *r.numer() <= 0 || r > &Rational::from_integer(1) {
                Err(Error::InvalidParameter(format!("{name} must lie in (0, 1], got {}", fmt_ratio(r))))
            } else {
                Ok(())
            }
        };
        match self {
            ProcessConfig::DChoice { d } if *d == 0 => Err(Error::InvalidParameter("d must be positive".into())),
            ProcessConfig::OnePlusBeta { beta } => unit("beta", beta),
            ProcessConfig::OnePlusEtaMeanThinning { eta } => unit("eta", eta),
            ProcessConfig::Thinning { f } if *f.numer() < 0 => {
                Err(Error::InvalidParameter("f must be non-negative".into()))
            }
            _ => Ok(()),
        }
    }

    /// Whether every round places exactly one ball.
    pub fn single_ball(&self) -> bool {
        !matches!(self, ProcessConfig::Packing | ProcessConfig::OverPacking | ProcessConfig::Twinning)
    }

    /// Whether the sampled bin receives a fill of `ceil(-y) + 1` balls when underloaded.
    pub fn filling(&self) -> bool {
        matches!(self, ProcessConfig::Packing | ProcessConfig::OverPacking)
    }

    /// `(w_+, w_-)` for processes with constant per-branch weights.
    pub fn branch_weights(&self) -> Option<(i64, i64)> {
        match self {
            ProcessConfig::Twinning => Some((1, 2)),
            c if c.single_ball() => Some((1, 1)),
            _ => None,
        }
    }
}

impl fmt::Display for ProcessConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProcessConfig::OneChoice => write!(f, "one-choice"),
            ProcessConfig::DChoice { d: 2 } => write!(f, "two-choice"),
            ProcessConfig::DChoice { d } => write!(f, "d-choice:{d}"),
            ProcessConfig::OnePlusBeta { beta } => write!(f, "one-plus-beta:{}", fmt_ratio(beta)),
            ProcessConfig::Caching => write!(f, "caching"),
            ProcessConfig::Packing => write!(f, "packing"),
            ProcessConfig::OverPacking => write!(f, "over-packing"),
            ProcessConfig::Twinning => write!(f, "twinning"),
            ProcessConfig::Thinning { f: off } => write!(f, "thinning:{}", fmt_ratio(off)),
            ProcessConfig::MeanThinning => write!(f, "mean-thinning"),
            ProcessConfig::OnePlusEtaMeanThinning { eta } => {
                write!(f, "one-plus-eta-mean-thinning:{}", fmt_ratio(eta))
            }
        }
    }
}

/// Parses `p`, `p/q` or a short decimal such as `0.25`.
pub fn parse_ratio(s: &str) -> Result<Rational> {
    let bad = || Error::InvalidParameter(format!("not a rational: {s:?}"));
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let p: i64 = p.trim().parse().map_err(|_| bad())?;
        let q: i64 = q.trim().parse().map_err(|_| bad())?;
        if q == 0 {
            return Err(bad());
        }
        return Ok(Rational::new(p, q));
    }
    if let Some((int, frac)) = s.split_once('.') {
        if frac.len() > 12 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let neg = int.starts_with('-');
        let ip: i64 = if int.is_empty() || int == "-" { 0 } else { int.parse().map_err(|_| bad())? };
        let den = 10i64.pow(frac.len() as u32);
        let fp: i64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let num = ip.abs() * den + fp;
        return Ok(Rational::new(if neg { -num } else { num }, den));
    }
    Ok(Rational::from_integer(s.parse().map_err(|_| bad())?))
}

impl FromStr for ProcessConfig {
    type Err = Error;

    /// Accepts `name` or `name:param`, e.g. `two-choice`, `d-choice:3`, `thinning:3`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let need =
            |what: &str| param.ok_or_else(|| Error::InvalidParameter(format!("{name} requires a {what} parameter")));
        let config = match name.to_ascii_lowercase().as_str() {
            "one-choice" | "onechoice" => ProcessConfig::OneChoice,
            "two-choice" | "twochoice" => ProcessConfig::two_choice(),
            "d-choice" | "dchoice" => {
                ProcessConfig::DChoice { d: need("d")?.parse().map_err(|_| Error::InvalidParameter("bad d".into()))? }
            }
            "one-plus-beta" | "1+beta" => ProcessConfig::OnePlusBeta { beta: parse_ratio(need("beta")?)? },
            "caching" => ProcessConfig::Caching,
            "packing" => ProcessConfig::Packing,
            "over-packing" | "overpacking" => ProcessConfig::OverPacking,
            "twinning" => ProcessConfig::Twinning,
            "thinning" => ProcessConfig::Thinning { f: parse_ratio(need("f")?)? },
            "mean-thinning" | "meanthinning" => ProcessConfig::MeanThinning,
            "one-plus-eta-mean-thinning" | "1+eta-mean-thinning" | "1+eta" => {
                ProcessConfig::OnePlusEtaMeanThinning { eta: parse_ratio(need("eta")?)? }
            }
            _ => return Err(Error::InvalidParameter(format!("unknown process {name:?}"))),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Loads plus the process-specific memory.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProcessState {
    pub load: LoadState,
    pub cache: Option<usize>,
    pub round: u64,
}

impl ProcessState {
    pub fn new(n: usize) -> Result<Self> {
        Ok(ProcessState { load: LoadState::new(n)?, cache: None, round: 0 })
    }

    pub fn from_load(load: LoadState) -> Self {
        ProcessState { load, cache: None, round: 0 }
    }

    pub fn n(&self) -> usize {
        self.load.n()
    }
}

/// What happened in one round.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationEvent {
    pub round: u64,
    /// Uniform samples in the order drawn.
    pub samples: Vec<usize>,
    /// Cache read by a Caching round.
    pub cache: Option<usize>,
    /// `(bin, balls)` pairs.
    pub placements: Vec<(usize, i64)>,
    pub weight: i64,
}

impl AllocationEvent {
    fn clear(&mut self, round: u64) {
        self.round = round;
        self.samples.clear();
        self.cache = None;
        self.placements.clear();
        self.weight = 0;
    }

    /// The bin that the process chose before spreading balls.
    pub fn target(&self) -> usize {
        self.placements[0].0
    }
}

/// Random stream for repetition `rep` of an experiment seeded with `seed`.
pub fn stream(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

#[inline]
fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: &Rational) -> bool {
    rng.gen_range(0..*p.denom() as u64) < *p.numer() as u64
}

/// Least loaded of `d` uniform samples; ties go to the larger bin index.
#[inline]
fn d_choice<R: Rng + ?Sized>(load: &LoadState, d: u32, rng: &mut R, ev: &mut AllocationEvent) -> usize {
    let n = load.n();
    let mut best = rng.gen_range(0..n);
    ev.samples.push(best);
    for _ in 1..d {
        let i = rng.gen_range(0..n);
        ev.samples.push(i);
        let (xi, xb) = (load.load(i), load.load(best));
        if xi < xb || (xi == xb && i > best) {
            best = i;
        }
    }
    best
}

#[inline]
fn mean_thinning<R: Rng + ?Sized>(load: &LoadState, rng: &mut R, ev: &mut AllocationEvent) -> usize {
    let n = load.n();
    let i1 = rng.gen_range(0..n);
    let i2 = rng.gen_range(0..n);
    ev.samples.push(i1);
    ev.samples.push(i2);
    if load.z(i1) < 0 {
        i1
    } else {
        i2
    }
}

/// Whether the first sample of a Thinning(f) round at round `t` lies below `t/n + f`.
#[inline]
pub fn below_thinning_threshold(load: &LoadState, i: usize, t: u64, f: &Rational) -> bool {
    let n = load.n() as i128;
    let (fp, fq) = (*f.numer() as i128, *f.denom() as i128);
    n * load.load(i) as i128 * fq < t as i128 * fq + n * fp
}

/// Balls placed by the process once it has settled on `target`.
pub fn resolve_target(config: &ProcessConfig, load: &LoadState, target: usize, out: &mut Vec<(usize, i64)>) {
    match config {
        ProcessConfig::Packing if load.z(target) < 0 => {
            out.push((target, load.ceil_neg_y(target) + 1));
        }
        ProcessConfig::Twinning if load.z(target) < 0 => out.push((target, 2)),
        ProcessConfig::OverPacking if load.z(target) < 0 => over_pack(load, target, out),
        _ => out.push((target, 1)),
    }
}

/// Spreads `ceil(-y_i) + 1` balls: first the most loaded underloaded bin is lifted to
/// `ceil(W/n)`, then the next most loaded bins are raised one ball at a time while they
/// stay strictly below the old average. A leftover ball returns to the first bin.
fn over_pack(load: &LoadState, sampled: usize, out: &mut Vec<(usize, i64)>) {
    let level = load.ceil_avg();
    let x = load.loads();
    // Next bin in sorted order (load descending, index ascending) strictly below `cap`, after `prev`.
    let next_below = |cap: i64, prev: Option<(i64, usize)>| -> Option<usize> {
        let mut best: Option<usize> = None;
        for (j, &xj) in x.iter().enumerate() {
            if xj >= cap || prev.is_some_and(|(pl, pj)| (xj, std::cmp::Reverse(j)) >= (pl, std::cmp::Reverse(pj))) {
                continue;
            }
            if best.is_none_or(|b| xj > x[b]) {
                best = Some(j);
            }
        }
        best
    };
    let first = next_below(level, None).expect("an underloaded bin exists");
    let lift = level - x[first];
    let mut rest = load.ceil_neg_y(sampled) + 1 - lift;
    out.push((first, lift));
    let mut prev = (x[first], first);
    while rest > 0 {
        let Some(j) = next_below(level - 1, Some(prev)) else { break };
        let give = (level - 1 - x[j]).min(rest);
        out.push((j, give));
        rest -= give;
        prev = (x[j], j);
    }
    if rest > 0 {
        out[0].1 += rest;
    }
}

/// Applies one round in place, writing what happened into `ev`.
pub fn step_mut<R: Rng + ?Sized>(
    config: &ProcessConfig,
    state: &mut ProcessState,
    rng: &mut R,
    ev: &mut AllocationEvent,
) -> Result<()> {
    ev.clear(state.round);
    let load = &state.load;
    let n = load.n();
    let target = match config {
        ProcessConfig::OneChoice | ProcessConfig::Packing | ProcessConfig::OverPacking | ProcessConfig::Twinning => {
            let i = rng.gen_range(0..n);
            ev.samples.push(i);
            i
        }
        ProcessConfig::DChoice { d } => d_choice(load, *d, rng, ev),
        ProcessConfig::OnePlusBeta { beta } => {
            let d = if bernoulli(rng, beta) { 2 } else { 1 };
            d_choice(load, d, rng, ev)
        }
        ProcessConfig::Caching => {
            let i = rng.gen_range(0..n);
            ev.samples.push(i);
            ev.cache = state.cache;
            match state.cache {
                None => {
                    state.cache = Some(i);
                    i
                }
                Some(b) => {
                    if load.load(i) < load.load(b) {
                        state.cache = Some(i);
                        i
                    } else if load.load(i) == load.load(b) {
                        i
                    } else {
                        b
                    }
                }
            }
        }
        ProcessConfig::Thinning { f } => {
            let i1 = rng.gen_range(0..n);
            let i2 = rng.gen_range(0..n);
            ev.samples.push(i1);
            ev.samples.push(i2);
            if below_thinning_threshold(load, i1, state.round, f) {
                i1
            } else {
                i2
            }
        }
        ProcessConfig::MeanThinning => mean_thinning(load, rng, ev),
        ProcessConfig::OnePlusEtaMeanThinning { eta } => {
            if bernoulli(rng, eta) {
                mean_thinning(load, rng, ev)
            } else {
                let i = rng.gen_range(0..n);
                ev.samples.push(i);
                i
            }
        }
    };
    resolve_target(config, load, target, &mut ev.placements);
    for &(bin, balls) in &ev.placements {
        state.load.add(bin, balls)?;
        ev.weight += balls;
    }
    state.round += 1;
    Ok(())
}

/// Applies one round and returns the new state with its event.
pub fn step<R: Rng + ?Sized>(
    config: &ProcessConfig,
    state: &ProcessState,
    rng: &mut R,
) -> Result<(ProcessState, AllocationEvent)> {
    let mut next = state.clone();
    let mut ev = AllocationEvent::default();
    step_mut(config, &mut next, rng, &mut ev)?;
    Ok((next, ev))
}

/// When a simulation ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    Rounds(u64),
    /// First round at which the total weight reaches the given number of balls.
    Balls(i64),
}

impl StopRule {
    /// `m` balls: `m` rounds for single-ball processes, otherwise the first round with `W >= m`.
    pub fn balls(config: &ProcessConfig, m: i64) -> Self {
        if config.single_ball() {
            StopRule::Rounds(m.max(0) as u64)
        } else {
            StopRule::Balls(m)
        }
    }

    pub fn done(&self, state: &ProcessState) -> bool {
        match *self {
            StopRule::Rounds(r) => state.round >= r,
            StopRule::Balls(m) => state.load.total() >= m,
        }
    }
}

/// Which states a simulation reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    Final,
    EveryK(u64),
    Full,
}

impl FromStr for TraceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(TraceMode::Final),
            "full" => Ok(TraceMode::Full),
            _ => match s.strip_prefix("every:").map(str::parse::<u64>) {
                Some(Ok(k)) if k > 0 => Ok(TraceMode::EveryK(k)),
                _ => Err(Error::InvalidParameter(format!("bad trace mode {s:?}"))),
            },
        }
    }
}

/// Exponents used when logging potentials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialParams {
    pub alpha_phi: f64,
    pub alpha_lambda: f64,
    /// Defaults to `1 / (12 n)` when absent.
    pub alpha_tilde: Option<f64>,
}

impl Default for PotentialParams {
    fn default() -> Self {
        PotentialParams { alpha_phi: 0.01, alpha_lambda: 0.7, alpha_tilde: None }
    }
}

impl PotentialParams {
    pub fn alpha_tilde_for(&self, n: usize) -> f64 {
        self.alpha_tilde.unwrap_or_else(|| psi_alpha(n))
    }

    pub fn report(&self, load: &LoadState) -> PotentialReport {
        PotentialReport {
            delta: load.delta(),
            upsilon: load.upsilon(),
            phi: load.phi(self.alpha_phi),
            lambda: load.lambda(self.alpha_lambda),
            v: load.lambda(self.alpha_tilde_for(load.n())),
            psi: load.psi(),
            quantile: load.quantile(),
            gap: load.gap(),
        }
    }
}

/// One logged state of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TracePoint {
    pub round: u64,
    pub balls: i64,
    pub gap_max_min: i64,
    pub report: PotentialReport,
}

fn trace_point(state: &ProcessState, params: &PotentialParams) -> TracePoint {
    TracePoint {
        round: state.round,
        balls: state.load.total(),
        gap_max_min: state.load.gap_max_min(),
        report: params.report(&state.load),
    }
}

/// Runs `config` from `start` until `stop`, calling `observe(pre_state, event)` after each round.
pub fn run_observed<R, F>(
    config: &ProcessConfig,
    start: ProcessState,
    stop: StopRule,
    rng: &mut R,
    mut observe: F,
) -> Result<ProcessState>
where
    R: Rng + ?Sized,
    F: FnMut(&ProcessState, &AllocationEvent, &ProcessState),
{
    config.validate()?;
    let mut state = start;
    let mut prev = state.clone();
    let mut ev = AllocationEvent::default();
    while !stop.done(&state) {
        prev.clone_from(&state);
        step_mut(config, &mut state, rng, &mut ev)?;
        observe(&prev, &ev, &state);
    }
    Ok(state)
}

/// Runs `config` from `start` until `stop`, logging potentials per `trace`.
pub fn run<R: Rng + ?Sized>(
    config: &ProcessConfig,
    start: ProcessState,
    stop: StopRule,
    rng: &mut R,
    trace: TraceMode,
    params: &PotentialParams,
) -> Result<(ProcessState, Option<Vec<TracePoint>>)> {
    config.validate()?;
    let mut state = start;
    let mut ev = AllocationEvent::default();
    if trace == TraceMode::Final {
        while !stop.done(&state) {
            step_mut(config, &mut state, rng, &mut ev)?;
        }
        return Ok((state, None));
    }
    let every = match trace {
        TraceMode::EveryK(k) => k,
        _ => 1,
    };
    let mut points = vec![trace_point(&state, params)];
    let mut logged = state.round;
    while !stop.done(&state) {
        step_mut(config, &mut state, rng, &mut ev)?;
        if state.round.is_multiple_of(every) {
            points.push(trace_point(&state, params));
            logged = state.round;
        }
    }
    if logged != state.round {
        points.push(trace_point(&state, params));
    }
    Ok((state, Some(points)))
}

/// Runs `rounds` rounds from the empty state with stream `(seed, 0)` and default potential exponents.
pub fn simulate(
    config: &ProcessConfig,
    n: usize,
    rounds: u64,
    seed: u64,
    trace: TraceMode,
) -> Result<(ProcessState, Option<Vec<TracePoint>>)> {
    let mut rng = stream(seed, 0);
    run(config, ProcessState::new(n)?, StopRule::Rounds(rounds), &mut rng, trace, &PotentialParams::default())
}

/// Simulates a uniformly chosen number of rounds in `[0, max_rounds]`.
pub fn random_reachable<R: Rng + ?Sized>(
    config: &ProcessConfig,
    n: usize,
    max_rounds: u64,
    rng: &mut R,
) -> Result<ProcessState> {
    let rounds = rng.gen_range(0..=max_rounds);
    let (state, _) = run(
        config,
        ProcessState::new(n)?,
        StopRule::Rounds(rounds),
        rng,
        TraceMode::Final,
        &PotentialParams::default(),
    )?;
    Ok(state)
}

/// Exact shorthand used in tests and examples.
pub fn ratio(p: i64, q: i64) -> Rational {
    Ratio::new(p, q)
}
