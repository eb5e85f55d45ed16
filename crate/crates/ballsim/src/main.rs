use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ballsim::harness::{
    gapdist, lowerbound, oracle_report, scaling, scaling_csv, trajectory_csv, verify, ExperimentSpec, ScalingSpec,
    StartState, Suite, VerifyOptions,
};
use ballsim::process::{parse_ratio, ProcessConfig, StopRule};
use ballsim::{Error, Result};

#[derive(Parser)]
#[command(name = "ballsim", version, about = "Balls-into-bins simulations and invariant checks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Potential trajectory of one run as CSV.
    Run(RunArgs),
    /// Final-gap histogram over seeded repetitions.
    Gapdist(Common),
    /// Average gap per process and bin count as CSV.
    Scaling(ScalingArgs),
    /// Run an invariant suite; exits 1 on any violation.
    Verify(VerifyArgs),
    /// Exact small-instance gap distribution against Monte-Carlo.
    Oracle(Common),
    /// Frequency of Gap(ceil(k n ln n)) >= k ln n.
    Lowerbound(LowerArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Table,
}

#[derive(Args)]
struct Output {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "BALLSIM_THREADS", default_value_t = 0)]
    threads: usize,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct ProcessArgs {
    #[arg(long, default_value = "mean-thinning")]
    process: String,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    f: Option<String>,
    #[arg(long)]
    d: Option<u32>,
}

impl ProcessArgs {
    fn config(&self) -> Result<ProcessConfig> {
        parse_process(&self.process, self)
    }
}

fn parse_process(name: &str, p: &ProcessArgs) -> Result<ProcessConfig> {
    if name.contains(':') {
        return name.parse();
    }
    let param = match name {
        "one-plus-beta" | "1+beta" => p.beta.clone(),
        "one-plus-eta-mean-thinning" | "1+eta-mean-thinning" | "1+eta" => p.eta.clone(),
        "thinning" => p.f.clone(),
        "d-choice" | "dchoice" => p.d.map(|d| d.to_string()),
        _ => None,
    };
    match param {
        Some(v) => format!("{name}:{v}").parse(),
        None => name.parse(),
    }
}

#[derive(Args)]
struct Common {
    #[command(flatten)]
    process: ProcessArgs,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, conflicts_with = "rounds")]
    balls: Option<i64>,
    #[arg(long)]
    rounds: Option<u64>,
    #[arg(long, default_value_t = 1)]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Exponent of the two-sided exponential potential.
    #[arg(long)]
    alpha: Option<f64>,
    /// Exponent of the one-sided exponential potential.
    #[arg(long)]
    alpha_phi: Option<f64>,
    #[arg(long)]
    alpha_tilde: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value = "final")]
    trace: String,
    #[arg(long, default_value = "empty")]
    start: String,
    #[command(flatten)]
    output: Output,
}

impl Common {
    fn spec(&self, default_balls: i64) -> Result<ExperimentSpec> {
        let config = self.process.config()?;
        let stop = match (self.rounds, self.balls) {
            (Some(r), _) => StopRule::Rounds(r),
            (None, Some(m)) => StopRule::balls(&config, m),
            (None, None) => StopRule::balls(&config, default_balls),
        };
        let mut spec = ExperimentSpec::new(config, self.n, stop);
        spec.reps = self.reps;
        spec.seed = self.seed;
        spec.trace = self.trace.parse()?;
        spec.start = self.start.parse::<StartState>()?;
        if let Some(a) = self.alpha {
            spec.params.alpha_lambda = a;
        }
        if let Some(a) = self.alpha_phi {
            spec.params.alpha_phi = a;
        }
        spec.params.alpha_tilde = self.alpha_tilde;
        if let Some(e) = self.eps {
            spec.eps = e;
        }
        spec.out = self.output.out.clone();
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Round whose potentials normalize the `_norm` columns.
    #[arg(long, default_value_t = 0)]
    burn_in: u64,
}

#[derive(Args)]
struct ScalingArgs {
    /// Comma-separated process names.
    #[arg(long, default_value = "caching,mean-thinning,packing,twinning", value_delimiter = ',')]
    processes: Vec<String>,
    /// Comma-separated bin counts.
    #[arg(long = "ns", alias = "n", default_value = "1000,10000", value_delimiter = ',')]
    ns: Vec<usize>,
    /// Balls per bin.
    #[arg(long, default_value_t = 1000)]
    m_factor: i64,
    #[arg(long, default_value_t = 100)]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(value_parser = ["framework", "drift", "counterexamples", "couplings", "caching2step"])]
    suite: String,
    #[arg(long)]
    n: Option<usize>,
    /// States, traces or runs per check.
    #[arg(long)]
    cases: Option<u64>,
    /// Balls per trace.
    #[arg(long)]
    balls: Option<i64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct LowerArgs {
    #[command(flatten)]
    process: ProcessArgs,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value = "1/20")]
    k: String,
    #[arg(long, default_value_t = 100)]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

fn emit(output: &Output, text: &str) -> Result<()> {
    match &output.out {
        Some(path) => fs::write(path, text).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| Error::InvalidParameter(format!("stdout: {e}")))
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Run(a) => {
            let mut spec = a.common.spec(0)?;
            spec.burn_in = a.burn_in;
            emit(&a.common.output, &trajectory_csv(&spec)?)?;
            Ok(true)
        }
        Cmd::Gapdist(c) => {
            let spec = c.spec(1000 * c.n as i64)?;
            let h = gapdist(&spec, c.output.threads)?;
            let text = match c.output.format {
                Some(Format::Table) => format!("# spec={}\n{}", spec.to_json(), h.table()),
                _ => h.to_json() + "\n",
            };
            emit(&c.output, &text)?;
            Ok(true)
        }
        Cmd::Scaling(a) => {
            let none = ProcessArgs { process: String::new(), beta: None, eta: None, f: None, d: None };
            let processes = a.processes.iter().map(|p| parse_process(p, &none)).collect::<Result<Vec<_>>>()?;
            let spec = ScalingSpec { processes, ns: a.ns, m_factor: a.m_factor, reps: a.reps, seed: a.seed };
            let rows = scaling(&spec, a.output.threads)?;
            let text = match a.output.format {
                Some(Format::Json) => json(&serde_json::json!({ "spec": spec, "rows": rows })),
                _ => scaling_csv(&spec, &rows),
            };
            emit(&a.output, &text)?;
            Ok(true)
        }
        Cmd::Verify(a) => {
            let suite: Suite = a.suite.parse()?;
            let options =
                VerifyOptions { n: a.n, cases: a.cases, m: a.balls, seed: a.seed, alpha: a.alpha, eps: a.eps };
            let report = verify(suite, &options, a.output.threads)?;
            emit(&a.output, &(report.to_json() + "\n"))?;
            Ok(report.passed)
        }
        Cmd::Oracle(c) => {
            let config = c.process.config()?;
            let m = c.balls.or(c.rounds.map(|r| r as i64)).unwrap_or(6);
            let samples = if c.reps > 1 { c.reps } else { 1_000_000 };
            let r = oracle_report(&config, c.n, m, samples, c.seed, c.output.threads)?;
            let text = match c.output.format {
                Some(Format::Table) => {
                    let mut s = format!("# {} n={} m={} samples={} seed={}\n", config, c.n, m, samples, c.seed);
                    for (g, p) in &r.exact {
                        let e = r.empirical.get(g).copied().unwrap_or(0);
                        s += &format!("{g} : {p} : {}\n", e as f64 / samples as f64);
                    }
                    s + &format!("tv : {}\n", r.tv)
                }
                _ => json(&r),
            };
            emit(&c.output, &text)?;
            Ok(true)
        }
        Cmd::Lowerbound(a) => {
            let config = a.process.config()?;
            let r = lowerbound(config, a.n, parse_ratio(&a.k)?, a.reps, a.seed, a.output.threads)?;
            emit(&a.output, &json(&r))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
