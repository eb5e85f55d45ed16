//! Experiment drivers, seeded parallel repetitions and artifact formatting.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use num_traits::ToPrimitive;
use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::coupling::{beta_eta_prefix_check, coupled_thinning_summary, tail_dominance};
use crate::error::{Error, Result};
use crate::framework::{
    check_p1, check_p2, check_p3, distribution_vector, fit_p4, CachingGrouper, Condition, Prob, WeightClassifier,
};
use crate::oracle::{
    b1_with_phi, caching_two_step_worst, counterexample_config, exact_gap_distribution, lambda_alpha_cap,
    monte_carlo_gap_distribution, total_variation, verify_counterexamples, verify_lambda_change, verify_phi_bound,
    verify_upsilon_drop, verify_v_drop, Counterexample, ExpectationResult,
};
use crate::process::{
    random_reachable, ratio, run, run_observed, stream, PotentialParams, ProcessConfig, ProcessState, StopRule,
    TraceMode, TracePoint,
};
use crate::state::{big_f64, fmt_ratio, ratio_f64, LoadState, Rational};

/// Initial load vector of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StartState {
    Empty,
    /// Half the bins at `+L`, half at `-L` relative to the average.
    HalfSplit(i64),
    B1,
    B2,
}

impl StartState {
    pub fn build(&self, n: usize) -> Result<LoadState> {
        match *self {
            StartState::Empty => LoadState::new(n),
            StartState::HalfSplit(l) => {
                if !n.is_multiple_of(2) || l < 0 {
                    return Err(Error::InvalidParameter("half-split needs an even n and L >= 0".into()));
                }
                LoadState::from_loads((0..n).map(|i| if i < n / 2 { 2 * l } else { 0 }).collect())
            }
            StartState::B1 => counterexample_config(Counterexample::B1, n),
            StartState::B2 => counterexample_config(Counterexample::B2, n),
        }
    }
}

impl fmt::Display for StartState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StartState::Empty => write!(f, "empty"),
            StartState::HalfSplit(l) => write!(f, "half-split:{l}"),
            StartState::B1 => write!(f, "b1"),
            StartState::B2 => write!(f, "b2"),
        }
    }
}

impl FromStr for StartState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empty" => Ok(StartState::Empty),
            "b1" => Ok(StartState::B1),
            "b2" => Ok(StartState::B2),
            _ => match s.strip_prefix("half-split:").map(str::parse::<i64>) {
                Some(Ok(l)) if l >= 0 => Ok(StartState::HalfSplit(l)),
                _ => Err(Error::InvalidParameter(format!("bad start state {s:?}"))),
            },
        }
    }
}

impl Serialize for StartState {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StartState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything needed to replay an experiment. The worker count is deliberately absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub process: ProcessConfig,
    pub n: usize,
    pub stop: StopRule,
    pub reps: u64,
    pub seed: u64,
    pub trace: TraceMode,
    pub start: StartState,
    pub params: PotentialParams,
    pub eps: f64,
    /// First round whose potentials normalize the trajectory columns.
    pub burn_in: u64,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(process: ProcessConfig, n: usize, stop: StopRule) -> Self {
        ExperimentSpec {
            process,
            n,
            stop,
            reps: 1,
            seed: 0,
            trace: TraceMode::Final,
            start: StartState::Empty,
            params: PotentialParams::default(),
            eps: 0.25,
            burn_in: 0,
            out: None,
        }
    }

    /// `m` balls in the process's own unit.
    pub fn with_balls(process: ProcessConfig, n: usize, m: i64) -> Self {
        let stop = StopRule::balls(&process, m);
        Self::new(process, n, stop)
    }

    pub fn validate(&self) -> Result<()> {
        self.process.validate()?;
        if self.reps == 0 {
            return Err(Error::InvalidParameter("reps must be at least 1".into()));
        }
        self.start.build(self.n).map(|_| ())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    fn initial(&self) -> Result<(ProcessState, StopRule)> {
        let load = self.start.build(self.n)?;
        let stop = match self.stop {
            StopRule::Balls(m) => StopRule::Balls(load.total() + m),
            r => r,
        };
        Ok((ProcessState::from_load(load), stop))
    }
}

/// Runs `f(rep)` for every repetition on a pool of `threads` workers (0 = all cores),
/// returning results in repetition order.
pub fn par_reps<T, F>(reps: u64, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| (0..reps).into_par_iter().map(&f).collect())
}

/// Final state of repetition `rep`.
pub fn run_rep(spec: &ExperimentSpec, rep: u64) -> Result<ProcessState> {
    let (start, stop) = spec.initial()?;
    let mut rng = stream(spec.seed, rep);
    Ok(run(&spec.process, start, stop, &mut rng, TraceMode::Final, &spec.params)?.0)
}

/// Final gaps of all repetitions, in repetition order.
pub fn gap_samples(spec: &ExperimentSpec, threads: usize) -> Result<Vec<Rational>> {
    spec.validate()?;
    par_reps(spec.reps, threads, |rep| Ok(run_rep(spec, rep)?.load.gap()))
}

fn serialize_counts<S: Serializer>(counts: &BTreeMap<Rational, u64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut map = s.serialize_map(Some(counts.len()))?;
    for (k, v) in counts {
        map.serialize_entry(&fmt_ratio(k), v)?;
    }
    map.end()
}

/// Final-gap counts over all repetitions, keyed by the exact gap.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapHistogram {
    pub spec: ExperimentSpec,
    #[serde(serialize_with = "serialize_counts")]
    pub counts: BTreeMap<Rational, u64>,
    pub mean: f64,
}

impl GapHistogram {
    pub fn from_samples(spec: ExperimentSpec, samples: &[Rational]) -> Self {
        let mut counts = BTreeMap::new();
        for g in samples {
            *counts.entry(*g).or_insert(0) += 1;
        }
        let mean = samples.iter().map(ratio_f64).sum::<f64>() / samples.len().max(1) as f64;
        GapHistogram { spec, counts, mean }
    }

    pub fn reps(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Repetitions with gap in `[lo, hi]`.
    pub fn count_in(&self, lo: Rational, hi: Rational) -> u64 {
        self.counts.range(lo..=hi).map(|(_, c)| c).sum()
    }

    /// `gap : percent` lines.
    pub fn table(&self) -> String {
        let reps = self.reps() as f64;
        let mut out = String::new();
        for (g, c) in &self.counts {
            let pct = 100.0 * *c as f64 / reps;
            let _ = writeln!(out, "{} : {}%", fmt_ratio(g), trim_float(pct));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("histogram serializes")
    }
}

fn trim_float(x: f64) -> String {
    let s = format!("{x:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Gap histogram over `spec.reps` seeded repetitions.
pub fn gapdist(spec: &ExperimentSpec, threads: usize) -> Result<GapHistogram> {
    let samples = gap_samples(spec, threads)?;
    Ok(GapHistogram::from_samples(spec.clone(), &samples))
}

const TRAJECTORY_HEADER: &str =
    "t,balls,gap,gap_max_min,delta,upsilon,phi,lambda,v,psi,quantile,delta_norm,upsilon_norm,lambda_norm";

fn norm(x: f64, base: Option<f64>) -> String {
    match base {
        Some(b) if b != 0.0 && b.is_finite() => format!("{}", x / b),
        _ => String::new(),
    }
}

/// Trajectory rows for repetition 0, preceded by a `# spec=` line and the column header.
pub fn trajectory_csv(spec: &ExperimentSpec) -> Result<String> {
    spec.validate()?;
    let (start, stop) = spec.initial()?;
    let mode = if spec.trace == TraceMode::Final { TraceMode::Full } else { spec.trace };
    let mut rng = stream(spec.seed, 0);
    let (_, points) = run(&spec.process, start, stop, &mut rng, mode, &spec.params)?;
    let mut points = points.unwrap_or_default();
    if spec.trace == TraceMode::Final && points.len() > 1 {
        let last = points.pop().expect("non-empty");
        points.truncate(1);
        points.push(last);
    }
    Ok(render_trajectory(spec, &points))
}

fn render_trajectory(spec: &ExperimentSpec, points: &[TracePoint]) -> String {
    let mut out = format!("# spec={}\n{TRAJECTORY_HEADER}\n", spec.to_json());
    let base = points.iter().find(|p| p.round >= spec.burn_in);
    let base_delta = base.map(|p| big_f64(&p.report.delta));
    let base_upsilon = base.map(|p| big_f64(&p.report.upsilon));
    let base_lambda = base.map(|p| p.report.lambda);
    for p in points {
        let r = &p.report;
        let (d, u) = (big_f64(&r.delta), big_f64(&r.upsilon));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.round,
            p.balls,
            ratio_f64(&r.gap),
            p.gap_max_min,
            d,
            u,
            r.phi,
            r.lambda,
            r.v,
            r.psi,
            ratio_f64(&r.quantile),
            norm(d, base_delta),
            norm(u, base_upsilon),
            norm(r.lambda, base_lambda),
        );
    }
    out
}

/// Average final gap per process and bin count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingSpec {
    pub processes: Vec<ProcessConfig>,
    pub ns: Vec<usize>,
    /// Balls per bin.
    pub m_factor: i64,
    pub reps: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub process: ProcessConfig,
    pub n: usize,
    pub mean_gap: f64,
    pub std_err: f64,
    #[serde(serialize_with = "crate::serde_ratio::small")]
    pub min_gap: Rational,
    #[serde(serialize_with = "crate::serde_ratio::small")]
    pub max_gap: Rational,
}

pub fn scaling(spec: &ScalingSpec, threads: usize) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::new();
    for p in &spec.processes {
        for &n in &spec.ns {
            let mut e = ExperimentSpec::with_balls(p.clone(), n, spec.m_factor * n as i64);
            e.reps = spec.reps;
            e.seed = spec.seed;
            let g = gap_samples(&e, threads)?;
            let xs: Vec<f64> = g.iter().map(ratio_f64).collect();
            let (mean, se) = mean_se(&xs);
            rows.push(ScalingRow {
                process: p.clone(),
                n,
                mean_gap: mean,
                std_err: se,
                min_gap: *g.iter().min().expect("reps >= 1"),
                max_gap: *g.iter().max().expect("reps >= 1"),
            });
        }
    }
    Ok(rows)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

pub fn scaling_csv(spec: &ScalingSpec, rows: &[ScalingRow]) -> String {
    let mut out = format!(
        "# spec={}\nprocess,n,balls,reps,mean_gap,std_err,min_gap,max_gap\n",
        serde_json::to_string(spec).expect("spec serializes")
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.process,
            r.n,
            spec.m_factor * r.n as i64,
            spec.reps,
            r.mean_gap,
            r.std_err,
            fmt_ratio(&r.min_gap),
            fmt_ratio(&r.max_gap)
        );
    }
    out
}

/// Frequency of `Gap(ceil(k n ln n)) >= k ln n`, with `t` counted in rounds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LowerBoundReport {
    pub spec: ExperimentSpec,
    #[serde(serialize_with = "crate::serde_ratio::small")]
    pub k: Rational,
    pub rounds: u64,
    pub threshold: f64,
    pub hits: u64,
    pub frequency: f64,
}

pub fn lowerbound(
    process: ProcessConfig,
    n: usize,
    k: Rational,
    reps: u64,
    seed: u64,
    threads: usize,
) -> Result<LowerBoundReport> {
    if *k.numer() <= 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    let kf = ratio_f64(&k);
    let ln_n = (n as f64).ln();
    let rounds = (kf * n as f64 * ln_n).ceil() as u64;
    let threshold = kf * ln_n;
    let mut spec = ExperimentSpec::new(process, n, StopRule::Rounds(rounds));
    spec.reps = reps;
    spec.seed = seed;
    let gaps = gap_samples(&spec, threads)?;
    let hits = gaps.iter().filter(|g| ratio_f64(g) >= threshold).count() as u64;
    Ok(LowerBoundReport { spec, k, rounds, threshold, hits, frequency: hits as f64 / reps as f64 })
}

/// Exact and sampled gap distributions of a tiny instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub process: ProcessConfig,
    pub n: usize,
    pub m: i64,
    pub samples: u64,
    pub seed: u64,
    pub exact: BTreeMap<String, String>,
    pub empirical: BTreeMap<String, u64>,
    pub tv: f64,
}

pub fn oracle_report(
    config: &ProcessConfig,
    n: usize,
    m: i64,
    samples: u64,
    seed: u64,
    threads: usize,
) -> Result<OracleReport> {
    let exact = exact_gap_distribution(config, n, m)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let emp = pool.install(|| monte_carlo_gap_distribution(config, n, m, samples, seed))?;
    let tv = total_variation(&exact, &emp);
    Ok(OracleReport {
        process: config.clone(),
        n,
        m,
        samples,
        seed,
        exact: exact.probs.iter().map(|(k, v)| (fmt_ratio(k), fmt_ratio(v))).collect(),
        empirical: emp.iter().map(|(k, v)| (fmt_ratio(k), *v)).collect(),
        tv,
    })
}

/// Named invariant suites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Framework,
    Drift,
    Counterexamples,
    Couplings,
    Caching2step,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "framework" => Suite::Framework,
            "drift" => Suite::Drift,
            "counterexamples" => Suite::Counterexamples,
            "couplings" => Suite::Couplings,
            "caching2step" => Suite::Caching2step,
            _ => return Err(Error::InvalidParameter(format!("unknown suite {s:?}"))),
        })
    }
}

/// Size knobs of a verify suite; `None` picks the suite default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub n: Option<usize>,
    /// Random states, traces or coupled runs per check.
    pub cases: Option<u64>,
    /// Balls per trace or run.
    pub m: Option<i64>,
    pub seed: u64,
    pub alpha: Option<f64>,
    pub eps: Option<f64>,
}

/// Outcome of one check within a suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub cases: u64,
    pub violations: u64,
    /// Largest `ln(expected) - ln(bound)` (or the check's own margin); negative means slack.
    pub worst_margin: Option<f64>,
    pub fitted: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl CheckSummary {
    fn new(name: impl Into<String>) -> Self {
        CheckSummary {
            name: name.into(),
            cases: 0,
            violations: 0,
            worst_margin: None,
            fitted: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    fn margin(&mut self, m: f64) {
        if self.worst_margin.is_none_or(|w| m > w) {
            self.worst_margin = Some(m);
        }
    }

    fn fit_min(&mut self, key: &str, v: f64) {
        let e = self.fitted.entry(key.into()).or_insert(v);
        *e = e.min(v);
    }

    fn fit_max(&mut self, key: &str, v: f64) {
        let e = self.fitted.entry(key.into()).or_insert(v);
        *e = e.max(v);
    }

    fn note_first(&mut self, msg: String) {
        if self.notes.len() < 5 {
            self.notes.push(msg);
        }
    }

    fn expectation(&mut self, r: &ExpectationResult) {
        self.cases += 1;
        if !r.satisfied {
            self.violations += 1;
        }
        let m = match (&r.exact_expected, &r.exact_bound) {
            (Some(e), Some(b)) => big_f64(&(e - b)),
            _ => r.ln_expected - r.ln_bound,
        };
        self.margin(m);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub options: VerifyOptions,
    pub passed: bool,
    pub checks: Vec<CheckSummary>,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs one invariant suite.
pub fn verify(suite: Suite, options: &VerifyOptions, threads: usize) -> Result<VerifyReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let checks = pool.install(|| match suite {
        Suite::Framework => framework_suite(options),
        Suite::Drift => drift_suite(options),
        Suite::Counterexamples => counterexample_suite(options),
        Suite::Couplings => coupling_suite(options),
        Suite::Caching2step => caching_suite(options),
    })?;
    let passed = checks.iter().all(|c| c.violations == 0);
    Ok(VerifyReport { suite, options: options.clone(), passed, checks })
}

fn merge(name: &str, parts: Vec<CheckSummary>) -> CheckSummary {
    let mut out = CheckSummary::new(name);
    for p in parts {
        out.cases += p.cases;
        out.violations += p.violations;
        if let Some(m) = p.worst_margin {
            out.margin(m);
        }
        for (k, v) in p.fitted {
            if k.starts_with("max_") {
                out.fit_max(&k, v);
            } else {
                out.fit_min(&k, v);
            }
        }
        for n in p.notes {
            out.note_first(n);
        }
    }
    out
}

/// Runs `per_case(case)` for `cases` cases in parallel and merges the summaries in case order.
fn par_check<F>(name: &str, cases: u64, per_case: F) -> Result<CheckSummary>
where
    F: Fn(u64) -> Result<CheckSummary> + Sync + Send,
{
    let parts: Result<Vec<CheckSummary>> = (0..cases).into_par_iter().map(per_case).collect();
    Ok(merge(name, parts?))
}

fn p_f64(p: Prob) -> f64 {
    p.to_f64().unwrap_or(f64::NAN)
}

fn framework_suite(o: &VerifyOptions) -> Result<Vec<CheckSummary>> {
    let n = o.n.unwrap_or(64);
    let traces = o.cases.unwrap_or(100);
    let m = o.m.unwrap_or(10_000);
    let mut checks = Vec::new();

    for config in [ProcessConfig::Packing, ProcessConfig::OverPacking, ProcessConfig::Caching] {
        let name = format!("p1[{config}]");
        checks.push(par_check(&name, traces, |rep| {
            let mut c = CheckSummary::new("");
            let mut rng = stream(o.seed, rep);
            let filling = config.filling();
            let mut w1 = WeightClassifier::new(Condition::W1)?;
            let mut err = None;
            run_observed(&config, ProcessState::new(n)?, StopRule::balls(&config, m), &mut rng, |pre, ev, post| {
                if err.is_some() {
                    return;
                }
                match distribution_vector(&config, pre) {
                    Ok(p) => {
                        c.cases += 1;
                        let r = check_p1(&p);
                        if !r.holds {
                            c.violations += 1;
                            c.note_first(format!("round {}: {:?}", pre.round, r.witness));
                        }
                    }
                    Err(e) => err = Some(e),
                }
                if filling {
                    w1.observe(&pre.load, ev);
                    // Delta grows by at most 4 per round: sum |z| by at most 4n.
                    let grow = post.load.abs_sum() - pre.load.abs_sum();
                    let limit = 4 * n as i128;
                    if grow > limit {
                        c.violations += 1;
                        c.note_first(format!("round {}: delta grew by {}/{n}", pre.round, grow));
                    }
                    c.fit_max("max_delta_step", grow as f64 / n as f64);
                }
            })?;
            if let Some(e) = err {
                return Err(e);
            }
            if filling {
                let r = w1.report();
                if !r.holds {
                    c.violations += 1;
                    c.note_first(format!("W1: {:?}", r.witness));
                }
            }
            Ok(c)
        })?);
    }

    checks.push(single_ball_check(
        "p3[mean-thinning]",
        n,
        traces,
        m,
        o.seed,
        ProcessConfig::MeanThinning,
        |p, s, c| {
            let one = Prob::from_integer(1);
            let r = check_p3(p, s, one, one);
            if !r.holds {
                c.violations += 1;
                c.note_first(format!("round {}: {:?}", s.round, r.witness));
            }
        },
    )?);

    checks.push(par_check("p2-equality[twinning]", traces, |rep| {
        let mut c = CheckSummary::new("");
        let config = ProcessConfig::Twinning;
        let mut rng = stream(o.seed, rep);
        let mut w = WeightClassifier::new(Condition::W3)?;
        let uniform = Prob::new(1, n as i128);
        let mut err = None;
        run_observed(&config, ProcessState::new(n)?, StopRule::balls(&config, m), &mut rng, |pre, ev, _| {
            w.observe(&pre.load, ev);
            let p = match distribution_vector(&config, pre) {
                Ok(p) => p,
                Err(e) => {
                    err.get_or_insert(e);
                    return;
                }
            };
            c.cases += 1;
            let r = check_p2(&p, pre);
            let tight = [r.constants.p_plus, r.constants.p_minus].iter().flatten().all(|q| *q == uniform);
            if !r.holds || !tight {
                c.violations += 1;
                c.note_first(format!("round {}: P2 {:?}", pre.round, r.witness));
            }
        })?;
        if let Some(e) = err {
            return Err(e);
        }
        let r = w.report();
        if !r.holds || r.constants.w_plus.unwrap_or(1) != 1 || r.constants.w_minus.unwrap_or(2) != 2 {
            c.violations += 1;
            c.note_first(format!("W3: {:?}", r.witness));
        }
        Ok(c)
    })?);

    checks.push(single_ball_check(
        "p4[one-plus-beta:1/2]",
        n,
        traces.min(20),
        m,
        o.seed,
        ProcessConfig::OnePlusBeta { beta: ratio(1, 2) },
        |p, _, c| {
            let k4 = p_f64(fit_p4(p));
            c.fit_min("k4", k4);
            if k4 < 0.5 {
                c.violations += 1;
            }
        },
    )?);

    checks.push(par_check("w1[caching-groups]", traces * 10, |rep| {
        let mut c = CheckSummary::new("");
        let config = ProcessConfig::Caching;
        let mut rng = stream(o.seed.wrapping_add(1), rep);
        let mut g = CachingGrouper::new(false);
        run_observed(&config, ProcessState::new(n)?, StopRule::Rounds(m.max(0) as u64), &mut rng, |pre, ev, _| {
            g.observe(&pre.load, ev);
        })?;
        c.cases = g.group_count() as u64;
        let r = g.finish().report;
        if !r.holds {
            c.violations += 1;
            c.note_first(format!("trace {rep}: {:?}", r.witness));
        }
        Ok(c)
    })?);
    Ok(checks)
}

fn single_ball_check<F>(
    name: &str,
    n: usize,
    traces: u64,
    m: i64,
    seed: u64,
    config: ProcessConfig,
    check: F,
) -> Result<CheckSummary>
where
    F: Fn(&crate::framework::DistributionVector, &ProcessState, &mut CheckSummary) + Sync + Send,
{
    par_check(name, traces, |rep| {
        let mut c = CheckSummary::new("");
        let mut rng = stream(seed, rep);
        let mut err = None;
        run_observed(&config, ProcessState::new(n)?, StopRule::balls(&config, m), &mut rng, |pre, _, _| {
            match distribution_vector(&config, pre) {
                Ok(p) => {
                    c.cases += 1;
                    check(&p, pre, &mut c);
                }
                Err(e) => {
                    err.get_or_insert(e);
                }
            }
        })?;
        match err {
            Some(e) => Err(e),
            None => Ok(c),
        }
    })
}

/// Random reachable state number `case` of a drift check.
fn drift_state(config: &ProcessConfig, n: usize, seed: u64, case: u64) -> Result<ProcessState> {
    let mut rng = stream(seed, case);
    random_reachable(config, n, 50 * n as u64, &mut rng)
}

fn drift_suite(o: &VerifyOptions) -> Result<Vec<CheckSummary>> {
    let n = o.n.unwrap_or(64);
    let states = o.cases.unwrap_or(1000);
    let eps = o.eps.unwrap_or(0.25);
    let non_filling = [
        ProcessConfig::Twinning,
        ProcessConfig::MeanThinning,
        ProcessConfig::OnePlusEtaMeanThinning { eta: ratio(1, 2) },
    ];
    let mut checks = Vec::new();
    for config in &non_filling {
        checks.push(par_check(&format!("upsilon-drop[{config}]"), states, |case| {
            let s = drift_state(config, n, o.seed, case)?;
            let mut c = CheckSummary::new("");
            c.expectation(&verify_upsilon_drop(config, &s)?);
            Ok(c)
        })?);
    }
    let phi_alpha = o.alpha.unwrap_or(0.01);
    checks.push(par_check("phi-bound[packing]", states, |case| {
        let s = drift_state(&ProcessConfig::Packing, n, o.seed, case)?;
        let mut c = CheckSummary::new("");
        c.expectation(&verify_phi_bound(&ProcessConfig::Packing, &s, phi_alpha)?);
        Ok(c)
    })?);
    for config in &non_filling {
        let alpha = lambda_alpha_cap(config, eps)?;
        let mut check = par_check(&format!("lambda-increase[{config}]"), states, |case| {
            let s = drift_state(config, n, o.seed, case)?;
            let r = verify_lambda_change(config, &s, eps, alpha)?;
            let mut c = CheckSummary::new("");
            c.expectation(&r);
            if let Some(&v) = r.details.get("c3_fit") {
                c.fit_min("c3", v);
            }
            Ok(c)
        })?;
        check.fitted.insert("alpha".into(), alpha);
        checks.push(check);
    }
    for config in [ProcessConfig::Twinning, ProcessConfig::MeanThinning] {
        checks.push(par_check(&format!("v-drop[{config}]"), states.min(100), |case| {
            let s = drift_state(&config, n, o.seed, case)?;
            let r = verify_v_drop(&config, &s, None)?;
            let mut c = CheckSummary::new("");
            c.cases = 1;
            if !r.satisfied {
                c.violations = 1;
            }
            c.fit_min("c5", r.details["c5_fit"]);
            Ok(c)
        })?);
    }
    Ok(checks)
}

fn caching_suite(o: &VerifyOptions) -> Result<Vec<CheckSummary>> {
    let n = o.n.unwrap_or(100);
    let states = o.cases.unwrap_or(100);
    Ok(vec![par_check("caching-two-step", states, |case| {
        let s = drift_state(&ProcessConfig::Caching, n, o.seed, case)?;
        let mut c = CheckSummary::new("");
        c.expectation(&caching_two_step_worst(&s.load)?);
        Ok(c)
    })?])
}

fn counterexample_suite(o: &VerifyOptions) -> Result<Vec<CheckSummary>> {
    let n = o.n.unwrap_or(10_000);
    let alpha = o.alpha.unwrap_or(0.5);
    let (b1, b2) = verify_counterexamples(n, alpha)?;
    let mut checks = Vec::new();
    for (name, r) in [("b1[packing,phi y>=0]", &b1), ("b2[mean-thinning,lambda]", &b2)] {
        let mut c = CheckSummary::new(name);
        c.cases = 1;
        c.violations = (!r.satisfied) as u64;
        // For lower bounds the margin is how far the increase falls short.
        c.margin(r.ln_bound - r.ln_expected);
        c.fitted.insert("ln_ratio".into(), r.details["ln_ratio"]);
        c.fitted.insert("ln_required".into(), r.details["ln_required"]);
        checks.push(c);
    }
    let phi2 = b1_with_phi(n, alpha)?;
    let mut c = CheckSummary::new("b1[packing,phi y>=2]");
    c.cases = 1;
    c.margin(phi2.ln_bound - phi2.ln_expected);
    c.fitted.insert("ln_ratio".into(), phi2.ln_expected - phi2.ln_current);
    if !phi2.satisfied {
        c.notes.push("no increase with the y >= 2 potential".into());
    }
    checks.push(c);
    let b2_state = counterexample_config(Counterexample::B2, n)?;
    let mut q = CheckSummary::new("b2-quantile");
    q.cases = 1;
    if b2_state.quantile() != Rational::new(n as i64 - 2, n as i64) {
        q.violations = 1;
        q.notes.push(format!("quantile {}", fmt_ratio(&b2_state.quantile())));
    }
    checks.push(q);
    Ok(checks)
}

fn coupling_suite(o: &VerifyOptions) -> Result<Vec<CheckSummary>> {
    let runs = o.cases.unwrap_or(1000);
    let n = o.n.unwrap_or(50);
    let m = o.m.unwrap_or(5000).max(0) as u64;
    let mut checks = Vec::new();
    checks.push(par_check("thinning-domination[f=3]", runs, |rep| {
        let s = coupled_thinning_summary(n, m, 3, o.seed.wrapping_add(rep))?;
        let mut c = CheckSummary::new("");
        c.cases = m;
        c.violations = s.violations + s.case2_disagreements;
        Ok(c)
    })?);
    checks.push(par_check("thinning-identity[f=0]", runs.min(100), |rep| {
        let s = coupled_thinning_summary(n, m, 0, o.seed.wrapping_add(rep))?;
        let mut c = CheckSummary::new("");
        c.cases = 1;
        c.violations = (!s.identical) as u64;
        Ok(c)
    })?);
    checks.push(gap_dominance(100, 10_000, 3, runs, o.seed, 0)?);
    let mut maj = CheckSummary::new("beta-eta-prefix");
    for beta in [ratio(1, 4), ratio(1, 2), ratio(3, 4), ratio(1, 1)] {
        let reports: Result<Vec<_>> = (2..=128usize).into_par_iter().map(|n| beta_eta_prefix_check(n, beta)).collect();
        for (i, r) in reports?.into_iter().enumerate() {
            maj.cases += 1;
            if !r.holds {
                maj.violations += 1;
                maj.note_first(format!("n = {}, beta = {}: {:?}", i + 2, fmt_ratio(&beta), r.witness));
            }
        }
    }
    checks.push(maj);
    Ok(checks)
}

/// One-sided ECDF check of `Gap` under `Thinning(f)` against `Gap + f` under MeanThinning,
/// with a 3 standard-error allowance.
pub fn gap_dominance(n: usize, m: i64, f: i64, reps: u64, seed: u64, threads: usize) -> Result<CheckSummary> {
    let mut thin = ExperimentSpec::with_balls(ProcessConfig::Thinning { f: Rational::from_integer(f) }, n, m);
    thin.reps = reps;
    thin.seed = seed;
    let mut mean = ExperimentSpec::with_balls(ProcessConfig::MeanThinning, n, m);
    mean.reps = reps;
    mean.seed = seed ^ 0x5eed;
    let (a, b) = if threads == 0 {
        let a: Result<Vec<Rational>> = (0..reps).into_par_iter().map(|r| Ok(run_rep(&thin, r)?.load.gap())).collect();
        let b: Result<Vec<Rational>> = (0..reps).into_par_iter().map(|r| Ok(run_rep(&mean, r)?.load.gap())).collect();
        (a?, b?)
    } else {
        (gap_samples(&thin, threads)?, gap_samples(&mean, threads)?)
    };
    let d = tail_dominance(&a, &b, Rational::from_integer(f), 3.0);
    let mut c = CheckSummary::new(format!("gap-dominance[f={f}]"));
    c.cases = reps;
    c.violations = (!d.holds) as u64;
    c.margin(d.worst_z - 3.0);
    c.fitted.insert("worst_z".into(), d.worst_z);
    c.fitted.insert("worst_at".into(), d.worst_at as f64);
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn start_states() {
        assert_eq!(StartState::HalfSplit(3).build(4).unwrap().loads(), &[6, 6, 0, 0]);
        assert!(StartState::HalfSplit(3).build(5).is_err());
        assert_eq!("half-split:7".parse::<StartState>().unwrap(), StartState::HalfSplit(7));
        assert!("half".parse::<StartState>().is_err());
        assert_eq!(StartState::B2.build(4).unwrap().loads(), &[26, 14, 0, 0]);
    }

    #[test]
    fn spec_json_round_trips_without_threads_or_paths() {
        let mut s = ExperimentSpec::with_balls(ProcessConfig::Twinning, 10, 100);
        s.out = Some("x.csv".into());
        let j = s.to_json();
        assert!(!j.contains("thread"));
        assert!(!j.contains("x.csv"));
        let back: ExperimentSpec = serde_json::from_str(&j).unwrap();
        assert_eq!(back.out, None);
        assert_eq!(back.stop, StopRule::Balls(100));
    }

    #[test]
    fn empty_trajectory_has_one_row() {
        let spec = ExperimentSpec::new(ProcessConfig::MeanThinning, 8, StopRule::Rounds(0));
        let csv = trajectory_csv(&spec).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("# spec="));
        assert_eq!(lines[1], TRAJECTORY_HEADER);
        assert!(lines[2].starts_with("0,0,0,0,"));
    }

    #[test]
    fn histogram_table_and_counts() {
        let spec = ExperimentSpec::new(ProcessConfig::OneChoice, 2, StopRule::Rounds(1));
        let g = GapHistogram::from_samples(spec, &[ratio(1, 2), ratio(2, 1), ratio(2, 1), ratio(3, 1)]);
        assert_eq!(g.table(), "1/2 : 25%\n2 : 50%\n3 : 25%\n");
        assert_eq!(g.count_in(ratio(1, 1), ratio(2, 1)), 2);
        assert!(g.to_json().contains("\"1/2\": 1"));
    }

    #[test]
    fn balls_stop_is_relative_to_start() {
        let mut spec = ExperimentSpec::with_balls(ProcessConfig::Packing, 4, 10);
        spec.start = StartState::HalfSplit(2);
        let s = run_rep(&spec, 0).unwrap();
        assert!(s.load.total() >= 18);
    }
}
