use std::path::PathBuf;
use std::time::Instant;

use serde_json::json;
use splitkit::analysis::{
    bounds_1d, check_assumptions, hypoellipticity_report, kde, lt_nll, moment_series, periodogram, rmse_study,
    AssumptionCheckConfig, RmseStudyConfig,
};
use splitkit::integrators::{simulate_ensemble, simulate_path, Trajectory};
use splitkit::models::ModelSpec;
use splitkit::noise::StreamKey;

use crate::config::{to_args, Command, ModelParams, RunConfig};
use crate::output::{emit_csv, read_trajectory, write_json, Cell, Manifest, Schema, Versions};
use crate::CliError;

pub const THREADS_ENV: &str = "SDE_SPLITKIT_THREADS";

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub outputs: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub summary: serde_json::Value,
}

fn worker_count(config: &RunConfig) -> Result<usize, CliError> {
    if let Some(n) = config.threads {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Flag {
                flag: "--threads",
                message: format!("{THREADS_ENV}='{s}' is not a positive integer"),
            }),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Executes the configured command on a dedicated worker pool, writes its
/// outputs and a JSON manifest.
pub fn run(config: &RunConfig) -> Result<RunOutcome, CliError> {
    let started_at = chrono::Local::now().to_rfc3339();
    let clock = Instant::now();
    let threads = worker_count(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Internal(format!("cannot start worker pool: {e}")))?;
    let summary = pool.install(|| execute(config))?;

    let manifest_path = config.manifest_path();
    let manifest = Manifest {
        command: config.command.name(),
        config,
        args: to_args(config),
        seed: config.seed,
        threads,
        started_at,
        wall_seconds: clock.elapsed().as_secs_f64(),
        outputs: vec![config.out.clone()],
        versions: Versions { splitkit: splitkit::VERSION, cli: env!("CARGO_PKG_VERSION") },
        summary: summary.clone(),
    };
    write_json(&manifest_path, &manifest)?;
    Ok(RunOutcome { outputs: vec![config.out.clone()], manifest: manifest_path, summary })
}

fn execute(config: &RunConfig) -> Result<serde_json::Value, CliError> {
    let model = config.model.build()?;
    match config.command {
        Command::Simulate => simulate(config, &model),
        Command::Converge => converge(config, &model),
        Command::Moments => moments(config, &model),
        Command::Spectrum => spectrum(config, &model),
        Command::Density => density(config, &model),
        Command::Check => check(config, &model),
        Command::Nll => nll(config, &model),
    }
}

fn required<T>(value: Option<T>, flag: &'static str, config: &RunConfig) -> Result<T, CliError> {
    value.ok_or(CliError::Missing { flag, command: config.command.name() })
}

fn single_path(config: &RunConfig, model: &ModelSpec) -> Result<Trajectory, CliError> {
    let dt = required(config.dt, "--dt", config)?;
    let steps = required(config.steps(), "--t-end", config)?;
    Ok(simulate_path(model, config.methods[0], dt, steps, &config.x0, StreamKey::new(config.seed, 0))?)
}

/// The chosen component after the burn-in, rejecting exploded paths.
fn stationary_series(config: &RunConfig, model: &ModelSpec) -> Result<(Vec<f64>, f64), CliError> {
    let path = single_path(config, model)?;
    if let Some(i) = path.exploded_at {
        return Err(CliError::Data(format!("{} path exploded at step {i}", path.method)));
    }
    let skip = (config.burn_in / path.delta).ceil() as usize;
    let series: Vec<f64> = path.component(config.component - 1).into_iter().skip(skip).collect();
    Ok((series, path.delta))
}

fn simulate(config: &RunConfig, model: &ModelSpec) -> Result<serde_json::Value, CliError> {
    let path = single_path(config, model)?;
    let rows = (0..path.len()).map(|i| {
        std::iter::once(Cell::Float(path.time(i))).chain(path.state(i).iter().map(|v| Cell::Float(*v))).collect()
    });
    emit_csv(&config.out, Schema::Trajectory(model.dim()), rows)?;
    Ok(json!({ "method": path.method, "states": path.len(), "exploded_at": path.exploded_at }))
}

fn converge(config: &RunConfig, model: &ModelSpec) -> Result<serde_json::Value, CliError> {
    let study = RmseStudyConfig {
        methods: config.methods.clone(),
        deltas: config.dt_list.clone(),
        delta_ref: required(config.dt_ref, "--dt-ref", config)?,
        t_end: required(config.t_end(), "--t-end", config)?,
        x0: config.x0.clone(),
        paths: config.paths,
        master_seed: config.seed,
    };
    let table = rmse_study(model, &study)?;
    let rows = table.records.iter().map(|r| {
        vec![
            Cell::Text(r.method.tag().to_string()),
            Cell::Float(r.delta),
            Cell::Float(r.rmse),
            Cell::Int(r.paths as u64),
            Cell::Int(r.excluded as u64),
        ]
    });
    emit_csv(&config.out, Schema::Convergence, rows)?;
    let orders: serde_json::Map<String, serde_json::Value> =
        table.fitted_orders.iter().map(|(m, p)| (m.tag().to_string(), json!(p))).collect();
    Ok(json!({ "fitted_orders": orders, "records": table.records.len() }))
}

fn moments(config: &RunConfig, model: &ModelSpec) -> Result<serde_json::Value, CliError> {
    let dt = required(config.dt, "--dt", config)?;
    let steps = required(config.steps(), "--t-end", config)?;
    let ensemble = simulate_ensemble(model, config.methods[0], dt, steps, &config.x0, config.seed, config.paths)?;
    let series = moment_series(&ensemble)?;
    // The closed-form bounds exist for the scalar model only.
    let bounds = match config.model {
        ModelParams::Toy(p) => {
            let c4 = model.constants().flow_energy.unwrap_or(0.0);
            Some(bounds_1d(1.0, p.sigma, c4, dt, config.x0[0] * config.x0[0], &series.times)?)
        }
        ModelParams::Fhn(_) => None,
    };
    let rows = (0..series.times.len()).map(|i| {
        let (k_lt, k_s) = bounds.as_ref().map_or((f64::NAN, f64::NAN), |b| (b.k_lt[i], b.k_s[i]));
        vec![
            Cell::Float(series.times[i]),
            Cell::Float(series.mean_sq[i]),
            Cell::Float(series.std_err[i]),
            Cell::Float(k_lt),
            Cell::Float(k_s),
        ]
    });
    emit_csv(&config.out, Schema::Moments, rows)?;
    let below = bounds.as_ref().map(|b| series.mean_sq.iter().zip(&b.k_lt).all(|(m, k)| m <= k));
    Ok(json!({
        "paths_used": series.paths_used,
        "excluded": series.excluded,
        "K_LT_inf": bounds.as_ref().map(|b| b.k_lt_inf),
        "K_S_inf": bounds.as_ref().map(|b| b.k_s_inf),
        "below_K_LT": below,
    }))
}

fn spectrum(config: &RunConfig, model: &ModelSpec) -> Result<serde_json::Value, CliError> {
    let (series, dt) = stationary_series(config, model)?;
    let s = periodogram(&series, dt, config.span)?;
    let rows = s.frequencies.iter().zip(&s.power).map(|(f, p)| vec![Cell::Float(*f), Cell::Float(*p)]);
    emit_csv(&config.out, Schema::Spectrum, rows)?;
    Ok(json!({ "peak_frequency": s.peak_frequency(), "half_width": s.half_width, "samples": s.len }))
}

fn density(config: &RunConfig, model: &ModelSpec) -> Result<serde_json::Value, CliError> {
    let (series, _) = stationary_series(config, model)?;
    let grid = kde(&series, config.bandwidth)?;
    let rows = grid.x.iter().zip(&grid.density).map(|(x, d)| vec![Cell::Float(*x), Cell::Float(*d)]);
    emit_csv(&config.out, Schema::Density, rows)?;
    Ok(json!({ "bandwidth": grid.bandwidth, "samples": grid.samples }))
}

fn check(config: &RunConfig, model: &ModelSpec) -> Result<serde_json::Value, CliError> {
    let assumptions = check_assumptions(
        model,
        &AssumptionCheckConfig {
            sample_box: config.sample_box,
            samples: config.samples,
            delta_grid: config.dt_grid.clone(),
            seed: config.seed,
        },
    )?;
    let hypo = hypoellipticity_report(model, &config.dt_grid)?;
    write_json(&config.out, &json!({ "assumptions": assumptions, "hypoellipticity": hypo }))?;
    let verdicts: serde_json::Map<String, serde_json::Value> =
        assumptions.entries.iter().map(|e| (e.name.to_string(), json!(e.verdict))).collect();
    Ok(json!({ "verdicts": verdicts, "one_step_hypoelliptic": hypo.one_step_hypoelliptic }))
}

fn nll(config: &RunConfig, model: &ModelSpec) -> Result<serde_json::Value, CliError> {
    let dt = required(config.dt, "--dt", config)?;
    let path = required(config.data.as_ref(), "--data", config)?;
    let data = read_trajectory(path, model.dim())?;
    let v = lt_nll(model, dt, &data)?;
    let row =
        vec![Cell::Int(v.transitions as u64), Cell::Float(v.log_det), Cell::Float(v.quadratic), Cell::Float(v.nll)];
    emit_csv(&config.out, Schema::Nll, [row])?;
    Ok(json!(v))
}
