use std::fmt;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use serde::Serialize;
use splitkit::integrators::Method;
use splitkit::models::{FhnParams, ModelSpec, ToyParams};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Converge,
    Moments,
    Spectrum,
    Density,
    Check,
    Nll,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Converge => "converge",
            Command::Moments => "moments",
            Command::Spectrum => "spectrum",
            Command::Density => "density",
            Command::Check => "check",
            Command::Nll => "nll",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Toy,
    Fhn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelParams {
    Toy(ToyParams),
    Fhn(FhnParams),
}

pub const DEFAULT_TOY: ToyParams = ToyParams { sigma: 0.5 };
pub const DEFAULT_FHN: FhnParams = FhnParams { eps: 0.05, gamma: 1.5, beta: 0.1, sigma1: 0.1, sigma2: 0.2 };

impl ModelParams {
    pub fn build(&self) -> Result<ModelSpec, splitkit::models::ModelError> {
        match *self {
            ModelParams::Toy(p) => ModelSpec::toy(p),
            ModelParams::Fhn(p) => ModelSpec::fhn(p),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelParams::Toy(_) => 1,
            ModelParams::Fhn(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ModelParams::Toy(_) => "toy",
            ModelParams::Fhn(_) => "fhn",
        }
    }

    fn render(&self) -> String {
        match self {
            ModelParams::Toy(p) => format!("sigma={:?}", p.sigma),
            ModelParams::Fhn(p) => format!(
                "eps={:?},gamma={:?},beta={:?},sigma1={:?},sigma2={:?}",
                p.eps, p.gamma, p.beta, p.sigma1, p.sigma2
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    TEnd(f64),
    Steps(usize),
}

/// A fully validated run description. Every default is resolved at parse
/// time, so rendering and re-parsing reproduces the value exactly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub model: ModelParams,
    pub methods: Vec<Method>,
    pub dt: Option<f64>,
    pub dt_list: Vec<f64>,
    pub dt_ref: Option<f64>,
    pub horizon: Option<Horizon>,
    pub x0: Vec<f64>,
    pub seed: u64,
    pub paths: usize,
    pub out: PathBuf,
    pub manifest: Option<PathBuf>,
    pub threads: Option<usize>,
    pub span: f64,
    pub bandwidth: Option<f64>,
    /// 1-based state component used by `spectrum` and `density`.
    pub component: usize,
    /// Leading time discarded by `spectrum` and `density`.
    pub burn_in: f64,
    pub data: Option<PathBuf>,
    pub sample_box: f64,
    pub samples: usize,
    pub dt_grid: Vec<f64>,
}

impl RunConfig {
    /// Number of steps of size `dt` covering the horizon.
    pub fn steps(&self) -> Option<usize> {
        match (self.horizon?, self.dt?) {
            (Horizon::Steps(n), _) => Some(n),
            (Horizon::TEnd(t), dt) => Some((t / dt).round() as usize),
        }
    }

    pub fn t_end(&self) -> Option<f64> {
        match self.horizon? {
            Horizon::TEnd(t) => Some(t),
            Horizon::Steps(n) => Some(n as f64 * self.dt?),
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| {
            let mut name = self.out.file_stem().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            self.out.with_file_name(name)
        })
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sde-splitkit",
    version,
    about = "Splitting integrators for semi-linear SDEs",
    allow_negative_numbers = true
)]
struct RawArgs {
    command: Command,
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    /// Comma-separated `name=value` pairs.
    #[arg(long, allow_hyphen_values = true)]
    params: Option<String>,
    #[arg(long, conflicts_with = "methods")]
    method: Option<String>,
    /// Comma-separated method tags.
    #[arg(long)]
    methods: Option<String>,
    /// Step size; accepts `2^-k` notation.
    #[arg(long, allow_hyphen_values = true)]
    dt: Option<String>,
    /// `2^-a..2^-b` or a comma-separated list.
    #[arg(long, allow_hyphen_values = true)]
    dt_list: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    dt_ref: Option<String>,
    #[arg(long, conflicts_with = "steps", allow_hyphen_values = true)]
    t_end: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    steps: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    paths: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    threads: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    span: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    bandwidth: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    component: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    burn_in: Option<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long = "box", allow_hyphen_values = true)]
    sample_box: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    samples: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    dt_grid: Option<String>,
}

fn bad(flag: &'static str, message: impl Into<String>) -> CliError {
    CliError::Flag { flag, message: message.into() }
}

/// Plain decimal or `b^e` (e.g. `2^-6`).
fn parse_number(flag: &'static str, s: &str) -> Result<f64, CliError> {
    let s = s.trim();
    let value = match s.split_once('^') {
        Some((base, exp)) => {
            let base: f64 = base.trim().parse().map_err(|_| bad(flag, format!("malformed number '{s}'")))?;
            let exp: i32 = exp.trim().parse().map_err(|_| bad(flag, format!("malformed exponent in '{s}'")))?;
            base.powi(exp)
        }
        None => s.parse().map_err(|_| bad(flag, format!("malformed number '{s}'")))?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(bad(flag, format!("'{s}' is not finite")))
    }
}

fn parse_count(flag: &'static str, s: &str) -> Result<usize, CliError> {
    let v = parse_number(flag, s)?;
    if v >= 1.0 && v.fract() == 0.0 && v <= 1e15 {
        Ok(v as usize)
    } else {
        Err(bad(flag, format!("expected a positive integer, got '{s}'")))
    }
}

fn parse_list(flag: &'static str, s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',').map(|item| parse_number(flag, item)).collect()
}

/// `b^p..b^q` expands to every integer power between `p` and `q`, inclusive.
fn parse_step_list(flag: &'static str, s: &str) -> Result<Vec<f64>, CliError> {
    let Some((from, to)) = s.split_once("..") else {
        return parse_list(flag, s);
    };
    let power = |part: &str| -> Result<(f64, i32), CliError> {
        let (base, exp) = part
            .trim()
            .split_once('^')
            .ok_or_else(|| bad(flag, format!("range ends must look like 2^-k, got '{part}'")))?;
        let base: f64 = base.parse().map_err(|_| bad(flag, format!("malformed base in '{part}'")))?;
        let exp: i32 = exp.parse().map_err(|_| bad(flag, format!("malformed exponent in '{part}'")))?;
        Ok((base, exp))
    };
    let ((b1, p), (b2, q)) = (power(from)?, power(to)?);
    if b1 != b2 || b1 <= 1.0 || b1.is_nan() {
        return Err(bad(flag, "range ends must share a base greater than 1"));
    }
    let exps: Vec<i32> = if p >= q { (q..=p).rev().collect() } else { (p..=q).collect() };
    Ok(exps.into_iter().map(|e| b1.powi(e)).collect())
}

fn parse_methods(flag: &'static str, s: &str) -> Result<Vec<Method>, CliError> {
    let mut out = Vec::new();
    for item in s.split(',') {
        let m: Method = item.trim().parse().map_err(|_| bad(flag, format!("unknown method '{}'", item.trim())))?;
        if out.contains(&m) {
            return Err(bad(flag, format!("method {m} listed twice")));
        }
        out.push(m);
    }
    Ok(out)
}

fn parse_params(kind: ModelKind, s: Option<&str>) -> Result<ModelParams, CliError> {
    let mut toy = DEFAULT_TOY;
    let mut fhn = DEFAULT_FHN;
    for pair in s.into_iter().flat_map(|s| s.split(',')).filter(|p| !p.trim().is_empty()) {
        let (key, value) =
            pair.split_once('=').ok_or_else(|| bad("--params", format!("expected name=value, got '{pair}'")))?;
        let value = parse_number("--params", value)?;
        let slot = match (kind, key.trim()) {
            (ModelKind::Toy, "sigma") => &mut toy.sigma,
            (ModelKind::Fhn, "eps") => &mut fhn.eps,
            (ModelKind::Fhn, "gamma") => &mut fhn.gamma,
            (ModelKind::Fhn, "beta") => &mut fhn.beta,
            (ModelKind::Fhn, "sigma1") => &mut fhn.sigma1,
            (ModelKind::Fhn, "sigma2") => &mut fhn.sigma2,
            (_, other) => return Err(bad("--params", format!("unknown parameter '{other}' for this model"))),
        };
        *slot = value;
    }
    let params = match kind {
        ModelKind::Toy => ModelParams::Toy(toy),
        ModelKind::Fhn => ModelParams::Fhn(fhn),
    };
    params.build().map_err(|e| bad("--params", e.to_string()))?;
    Ok(params)
}

fn step_in_unit(flag: &'static str, v: f64, closed: bool) -> Result<f64, CliError> {
    let ok = v > 0.0 && if closed { v <= 1.0 } else { v < 1.0 };
    if ok {
        Ok(v)
    } else {
        Err(bad(flag, format!("step must lie in (0, 1{}, got {v}", if closed { "]" } else { ")" })))
    }
}

fn positive(flag: &'static str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(bad(flag, format!("must be > 0, got {v}")))
    }
}

/// Parses and validates a command line. `argv[0]` is the program name.
pub fn parse_args<I, T>(argv: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let raw = RawArgs::try_parse_from(argv)?;
    let command = raw.command;
    let missing = |flag: &'static str| CliError::Missing { flag, command: command.name() };

    let model = parse_params(raw.model.unwrap_or(ModelKind::Fhn), raw.params.as_deref())?;
    let methods = match (&raw.method, &raw.methods) {
        (Some(m), _) => parse_methods("--method", m)?,
        (None, Some(m)) => parse_methods("--methods", m)?,
        (None, None) if command == Command::Converge => Method::ALL.to_vec(),
        (None, None) => vec![Method::Strang],
    };
    if command != Command::Converge && methods.len() != 1 {
        return Err(bad("--methods", format!("{command} takes exactly one method")));
    }

    let dt =
        raw.dt.as_deref().map(|s| parse_number("--dt", s).and_then(|v| step_in_unit("--dt", v, false))).transpose()?;
    let horizon = match (&raw.t_end, &raw.steps) {
        (Some(t), _) => Some(Horizon::TEnd(positive("--t-end", parse_number("--t-end", t)?)?)),
        (None, Some(n)) => Some(Horizon::Steps(parse_count("--steps", n)?)),
        (None, None) if command == Command::Converge => Some(Horizon::TEnd(10.0)),
        (None, None) => None,
    };
    let needs_path = matches!(command, Command::Simulate | Command::Moments | Command::Spectrum | Command::Density);
    if (needs_path || command == Command::Nll) && dt.is_none() {
        return Err(missing("--dt"));
    }
    if needs_path && horizon.is_none() {
        return Err(missing("--t-end"));
    }
    if let (Some(Horizon::TEnd(t)), Some(dt)) = (horizon, dt) {
        let n = (t / dt).round();
        if n < 1.0 || (n * dt - t).abs() > 1e-9 * t {
            return Err(bad("--t-end", format!("horizon {t} is not a whole number of steps of size {dt}")));
        }
    }

    let (dt_list, dt_ref) = if command == Command::Converge {
        let list = match &raw.dt_list {
            Some(s) => parse_step_list("--dt-list", s)?,
            None => parse_step_list("--dt-list", "2^-6..2^-10")?,
        };
        if list.is_empty() {
            return Err(bad("--dt-list", "empty list"));
        }
        for &v in &list {
            step_in_unit("--dt-list", v, false)?;
        }
        let dt_ref = match &raw.dt_ref {
            Some(s) => parse_number("--dt-ref", s)?,
            None => 2f64.powi(-13),
        };
        (list, Some(step_in_unit("--dt-ref", dt_ref, false)?))
    } else {
        let list = raw.dt_list.as_deref().map(|s| parse_step_list("--dt-list", s)).transpose()?.unwrap_or_default();
        let dt_ref = raw
            .dt_ref
            .as_deref()
            .map(|s| parse_number("--dt-ref", s).and_then(|v| step_in_unit("--dt-ref", v, false)))
            .transpose()?;
        (list, dt_ref)
    };

    let x0 = match &raw.x0 {
        Some(s) => parse_list("--x0", s)?,
        None => vec![0.0; model.dim()],
    };
    if x0.len() != model.dim() {
        return Err(bad("--x0", format!("expected {} entries for this model, got {}", model.dim(), x0.len())));
    }

    let seed = match &raw.seed {
        Some(s) => {
            s.trim().parse::<u64>().map_err(|_| bad("--seed", format!("expected an unsigned integer, got '{s}'")))?
        }
        None => 42,
    };
    let paths = match (&raw.paths, command) {
        (Some(s), _) => parse_count("--paths", s)?,
        (None, Command::Converge) => 100,
        (None, Command::Moments) => 1000,
        (None, _) => 1,
    };
    if command == Command::Moments && paths < 2 {
        return Err(bad("--paths", "moments needs at least 2 paths"));
    }
    let threads = raw.threads.as_deref().map(|s| parse_count("--threads", s)).transpose()?;
    let span = match &raw.span {
        Some(s) => parse_number("--span", s)?,
        None => 0.3,
    };
    if !(span > 0.0 && span < 1.0) {
        return Err(bad("--span", format!("must lie in (0, 1), got {span}")));
    }
    let bandwidth = raw
        .bandwidth
        .as_deref()
        .map(|s| parse_number("--bandwidth", s).and_then(|v| positive("--bandwidth", v)))
        .transpose()?;
    let component = match &raw.component {
        Some(s) => parse_count("--component", s)?,
        None => 1,
    };
    if component > model.dim() {
        return Err(bad("--component", format!("model has {} components, got {component}", model.dim())));
    }
    let burn_in = match &raw.burn_in {
        Some(s) => parse_number("--burn-in", s)?,
        None => 0.0,
    };
    if burn_in < 0.0 {
        return Err(bad("--burn-in", format!("must be >= 0, got {burn_in}")));
    }
    if command == Command::Nll && raw.data.is_none() {
        return Err(missing("--data"));
    }
    let sample_box =
        positive("--box", raw.sample_box.as_deref().map(|s| parse_number("--box", s)).transpose()?.unwrap_or(100.0))?;
    let samples = match &raw.samples {
        Some(s) => parse_count("--samples", s)?,
        None => 100_000,
    };
    if command == Command::Check && samples < 1000 {
        return Err(bad("--samples", format!("need at least 1000 samples, got {samples}")));
    }
    let dt_grid = match &raw.dt_grid {
        Some(s) => parse_step_list("--dt-grid", s)?,
        None => vec![1e-4, 1e-3, 1e-2, 1e-1, 0.5, 1.0],
    };
    for &v in &dt_grid {
        step_in_unit("--dt-grid", v, true)?;
    }
    let out = raw.out.ok_or_else(|| missing("--out"))?;

    Ok(RunConfig {
        command,
        model,
        methods,
        dt,
        dt_list,
        dt_ref,
        horizon,
        x0,
        seed,
        paths,
        out,
        manifest: raw.manifest,
        threads,
        span,
        bandwidth,
        component,
        burn_in,
        data: raw.data,
        sample_box,
        samples,
        dt_grid,
    })
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

/// Renders a config as `--flag=value` arguments (without the program name)
/// that parse back to the same config.
pub fn to_args(config: &RunConfig) -> Vec<String> {
    let mut args = vec![config.command.name().to_string()];
    let mut push = |flag: &str, value: String| args.push(format!("--{flag}={value}"));
    push("model", config.model.kind().to_string());
    push("params", config.model.render());
    push("methods", config.methods.iter().map(|m| m.tag()).collect::<Vec<_>>().join(","));
    if let Some(dt) = config.dt {
        push("dt", format!("{dt:?}"));
    }
    if !config.dt_list.is_empty() {
        push("dt-list", join(&config.dt_list));
    }
    if let Some(v) = config.dt_ref {
        push("dt-ref", format!("{v:?}"));
    }
    match config.horizon {
        Some(Horizon::TEnd(t)) => push("t-end", format!("{t:?}")),
        Some(Horizon::Steps(n)) => push("steps", n.to_string()),
        None => {}
    }
    push("x0", join(&config.x0));
    push("seed", config.seed.to_string());
    push("paths", config.paths.to_string());
    push("out", config.out.display().to_string());
    if let Some(p) = &config.manifest {
        push("manifest", p.display().to_string());
    }
    if let Some(n) = config.threads {
        push("threads", n.to_string());
    }
    push("span", format!("{:?}", config.span));
    if let Some(h) = config.bandwidth {
        push("bandwidth", format!("{h:?}"));
    }
    push("component", config.component.to_string());
    push("burn-in", format!("{:?}", config.burn_in));
    if let Some(p) = &config.data {
        push("data", p.display().to_string());
    }
    push("box", format!("{:?}", config.sample_box));
    push("samples", config.samples.to_string());
    push("dt-grid", join(&config.dt_grid));
    args
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(line: &[&str]) -> Result<RunConfig, CliError> {
        parse_args(std::iter::once("sde-splitkit").chain(line.iter().copied()))
    }

    #[test]
    fn numbers() {
        assert_eq!(parse_number("--dt", "2^-6").unwrap(), 0.015625);
        assert_eq!(parse_number("--dt", "2e-4").unwrap(), 2e-4);
        assert!(parse_number("--dt", "abc").is_err());
        assert!(parse_number("--dt", "1e400").is_err());
        assert_eq!(parse_step_list("--dt-list", "2^-6..2^-8").unwrap(), vec![0.015625, 0.0078125, 0.00390625]);
        assert_eq!(parse_step_list("--dt-list", "0.1,0.2").unwrap(), vec![0.1, 0.2]);
        assert!(parse_step_list("--dt-list", "2^-6..3^-8").is_err());
    }

    #[test]
    fn simulate_example() {
        let c = parse(&[
            "simulate",
            "--model",
            "fhn",
            "--method",
            "strang",
            "--dt",
            "2e-4",
            "--t-end",
            "20",
            "--x0",
            "-1,0",
            "--params",
            "eps=0.05,gamma=1.5,beta=0.1,sigma1=0.1,sigma2=0.2",
            "--seed",
            "42",
            "--out",
            "path.csv",
        ])
        .unwrap();
        assert_eq!(c.methods, vec![Method::Strang]);
        assert_eq!(c.x0, vec![-1.0, 0.0]);
        assert_eq!(c.steps(), Some(100_000));
        assert_eq!(c.model, ModelParams::Fhn(DEFAULT_FHN));
        assert_eq!(c.manifest_path(), PathBuf::from("path.manifest.json"));
    }

    #[test]
    fn converge_example() {
        let c =
            parse(&["converge", "--dt-list", "2^-6..2^-12", "--dt-ref", "2^-14", "--paths", "1000", "--out", "c.csv"])
                .unwrap();
        assert_eq!(c.dt_list.len(), 7);
        assert_eq!(c.dt_list[6], 2f64.powi(-12));
        assert_eq!(c.dt_ref, Some(2f64.powi(-14)));
        assert_eq!(c.methods.len(), 7);
        assert_eq!(c.paths, 1000);
        assert_eq!(c.horizon, Some(Horizon::TEnd(10.0)));
    }

    fn flag_of(e: CliError) -> String {
        match e {
            CliError::Flag { flag, .. } | CliError::Missing { flag, .. } => flag.to_string(),
            other => other.to_string(),
        }
    }

    #[test]
    fn errors_name_the_flag() {
        let base = ["simulate", "--t-end", "1", "--out", "x.csv"];
        let with = |extra: &[&'static str]| {
            let mut v: Vec<&str> = base.to_vec();
            v.extend_from_slice(extra);
            parse(&v).unwrap_err()
        };
        assert_eq!(flag_of(with(&["--dt", "-1"])), "--dt");
        assert_eq!(flag_of(with(&["--dt", "x"])), "--dt");
        assert_eq!(flag_of(with(&[])), "--dt");
        assert_eq!(flag_of(with(&["--dt", "0.1", "--x0", "1"])), "--x0");
        assert_eq!(flag_of(with(&["--dt", "0.1", "--params", "eps=-1"])), "--params");
        assert_eq!(flag_of(with(&["--dt", "0.1", "--params", "zeta=1"])), "--params");
        assert_eq!(flag_of(with(&["--dt", "0.3"])), "--t-end");
        assert_eq!(flag_of(with(&["--dt", "0.1", "--method", "rk4"])), "--method");
        assert!(with(&["--dt", "0.1", "--bogus", "1"]).to_string().contains("--bogus"));
        assert_eq!(flag_of(parse(&["simulate", "--dt", "0.1", "--t-end", "1"]).unwrap_err()), "--out");
        assert_eq!(flag_of(parse(&["nll", "--dt", "0.1", "--out", "n.csv"]).unwrap_err()), "--data");
    }

    #[test]
    fn renders_round_trip() {
        let c = parse(&[
            "moments", "--model", "toy", "--dt", "0.01", "--t-end", "10", "--x0", "2", "--paths", "50", "--out",
            "m.csv",
        ])
        .unwrap();
        let again = parse_args(std::iter::once("sde-splitkit".to_string()).chain(to_args(&c))).unwrap();
        assert_eq!(again, c);
    }
}
