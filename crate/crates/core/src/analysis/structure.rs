use std::collections::BTreeMap;

use serde::Serialize;

use super::{lyapunov_constants, AnalysisError, LyapunovConstants};
use crate::linalg::{log_norm, spectral_norm, symmetric_eigen, Matrix};
use crate::models::ModelSpec;
use crate::noise::{derive_stream, NoiseStream, StreamKey};

/// Relative slack allowed when comparing a sampled quantity with its bound.
const SAMPLE_SLACK: f64 = 1e-9;

/// `det C ≤ HYPO_TOL·(tr C)^d` counts as degenerate.
const HYPO_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Fails,
    /// No constant was declared, so there is nothing to test against.
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionEntry {
    pub name: &'static str,
    pub verdict: Verdict,
    /// `"exact"` or `"sampled"`.
    pub method: &'static str,
    /// Declared constants; present only when the check held.
    pub constants: BTreeMap<String, f64>,
    /// Worst observed ratio, margin or norm.
    pub observed: BTreeMap<String, f64>,
    /// Worst sample: the point(s) followed by the step where relevant.
    pub witness: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub model: String,
    pub sample_box: f64,
    pub samples: usize,
    pub delta_grid: Vec<f64>,
    pub entries: Vec<AssumptionEntry>,
    /// Discrete drift-condition constants per step, when A5 holds and a
    /// flow-energy constant is declared.
    pub lyapunov: Vec<LyapunovConstants>,
}

impl AssumptionReport {
    pub fn entry(&self, name: &str) -> Option<&AssumptionEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheckConfig {
    /// Points are drawn from `[−sample_box, sample_box]^d`.
    pub sample_box: f64,
    pub samples: usize,
    pub delta_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for AssumptionCheckConfig {
    fn default() -> Self {
        Self { sample_box: 100.0, samples: 100_000, delta_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 0.5, 1.0], seed: 42 }
    }
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Half the draws are uniform in the box; the rest have log-uniform
/// magnitudes in `[1e-3, box]` so that small and large scales both appear.
fn sample_point(stream: &mut NoiseStream, d: usize, sample_box: f64, out: &mut [f64]) {
    let log_range = (1e-3f64.min(sample_box).ln(), sample_box.ln());
    let uniform = stream.uniform(0.0, 1.0) < 0.5;
    for v in out.iter_mut().take(d) {
        *v = if uniform {
            stream.uniform(-sample_box, sample_box)
        } else {
            let sign = if stream.uniform(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
            sign * stream.uniform(log_range.0, log_range.1).exp()
        };
    }
}

/// Second point of a pair: independent, or a small perturbation of the first.
fn sample_partner(stream: &mut NoiseStream, x: &[f64], sample_box: f64, out: &mut [f64]) {
    if stream.uniform(0.0, 1.0) < 0.5 {
        sample_point(stream, x.len(), sample_box, out);
    } else {
        let h = stream.uniform(-8.0 * std::f64::consts::LN_10, 0.0).exp();
        for (o, xi) in out.iter_mut().zip(x) {
            *o = (xi + h * stream.standard_normal()).clamp(-sample_box, sample_box);
        }
    }
}

fn sample_step(stream: &mut NoiseStream, max_delta: f64) -> f64 {
    max_delta * (1.0 - stream.uniform(0.0, 1.0))
}

/// Tracks the largest `value` and the sample that produced it.
struct Worst {
    value: f64,
    witness: Vec<f64>,
    violated: bool,
}

impl Worst {
    fn new() -> Self {
        Self { value: f64::NEG_INFINITY, witness: Vec::new(), violated: false }
    }

    fn offer(&mut self, value: f64, violated: bool, witness: impl FnOnce() -> Vec<f64>) {
        // Violations take precedence over merely large values.
        if (violated && !self.violated) || (violated == self.violated && value > self.value) {
            self.value = value;
            self.witness = witness();
            self.violated = violated;
        }
    }
}

fn sampled_entry(
    name: &'static str,
    declared: Option<BTreeMap<String, f64>>,
    observed_key: &str,
    worst: Worst,
) -> AssumptionEntry {
    let verdict = match (&declared, worst.violated) {
        (None, _) => Verdict::Undetermined,
        (Some(_), false) => Verdict::Holds,
        (Some(_), true) => Verdict::Fails,
    };
    AssumptionEntry {
        name,
        verdict,
        method: "sampled",
        constants: if verdict == Verdict::Holds { declared.unwrap_or_default() } else { BTreeMap::new() },
        observed: BTreeMap::from([(observed_key.to_string(), worst.value)]),
        witness: Some(worst.witness),
    }
}

fn named(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Falsification tests of the structural assumptions. Conditions on `A` are
/// decided exactly; conditions on `N` and its flow are tested on random
/// samples against the model's declared constants.
pub fn check_assumptions(model: &ModelSpec, config: &AssumptionCheckConfig) -> Result<AssumptionReport, AnalysisError> {
    if !(config.sample_box > 0.0 && config.sample_box.is_finite()) {
        return Err(AnalysisError::Argument(format!("sample box must be finite and > 0, got {}", config.sample_box)));
    }
    if config.samples < 1000 {
        return Err(AnalysisError::Argument(format!("need at least 1000 samples, got {}", config.samples)));
    }
    if config.delta_grid.is_empty() || config.delta_grid.iter().any(|d| !(*d > 0.0 && *d <= 1.0)) {
        return Err(AnalysisError::Argument("step grid must be non-empty and lie in (0, 1]".into()));
    }
    let d = model.dim();
    let k = model.constants();
    let max_delta = config.delta_grid.iter().copied().fold(0.0, f64::max);
    let mut stream = derive_stream(StreamKey::new(config.seed, 0));
    let (mut x, mut y, mut nx, mut ny, mut fx) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);

    let mut lipschitz = Worst::new();
    let mut growth = Worst::new();
    let mut increment = Worst::new();
    let mut energy = Worst::new();
    let mut dissipative = Worst::new();
    for _ in 0..config.samples {
        sample_point(&mut stream, d, config.sample_box, &mut x);
        sample_partner(&mut stream, &x, config.sample_box, &mut y);
        let step = sample_step(&mut stream, max_delta);
        model.nonlinear_drift(&x, &mut nx);
        model.nonlinear_drift(&y, &mut ny);
        let diff: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let ndiff: Vec<f64> = nx.iter().zip(&ny).map(|(a, b)| a - b).collect();
        let dist_sq = norm_sq(&diff);
        let pair = || x.iter().chain(&y).copied().collect::<Vec<f64>>();

        if dist_sq > 0.0 {
            let ratio = dot(&ndiff, &diff) / dist_sq;
            let violated = k.one_sided_lipschitz.is_some_and(|c1| ratio > c1 * (1.0 + SAMPLE_SLACK) + SAMPLE_SLACK);
            lipschitz.offer(ratio, violated, pair);

            let ratio = match k.polynomial_growth {
                Some((c2, chi)) => {
                    let p = 2.0 * chi - 2.0;
                    norm_sq(&ndiff) / (c2 * (1.0 + norm_sq(&x).powf(p / 2.0) + norm_sq(&y).powf(p / 2.0)) * dist_sq)
                }
                None => norm_sq(&ndiff) / dist_sq,
            };
            growth.offer(ratio, k.polynomial_growth.is_some() && ratio > 1.0 + SAMPLE_SLACK, pair);
        }

        model.flow(&x, step, &mut fx);
        let with_step = || x.iter().copied().chain([step]).collect::<Vec<f64>>();
        let rate_sq = fx.iter().zip(&x).map(|(f, xi)| ((f - xi) / step).powi(2)).sum::<f64>();
        let ratio = match k.flow_increment {
            Some((c3, q)) => {
                let powered = x.iter().map(|v| v.abs().powi(2 * q as i32).powi(2)).sum::<f64>().sqrt();
                rate_sq.sqrt() / (c3 * (1.0 + powered))
            }
            None => rate_sq.sqrt(),
        };
        increment.offer(ratio, k.flow_increment.is_some() && ratio > 1.0 + SAMPLE_SLACK, with_step);

        // Excess of ‖f(x;Δ)‖² − ‖x‖² over the allowance c4Δ.
        let scale = norm_sq(&x).max(1.0);
        let growth_per_step = (norm_sq(&fx) - norm_sq(&x)) / step;
        let excess = growth_per_step - k.flow_energy.unwrap_or(0.0);
        let violated = k.flow_energy.is_some() && excess * step > SAMPLE_SLACK * 1e-3 * scale;
        energy.offer(growth_per_step, violated, with_step);

        model.full_drift(&x, &mut nx);
        let inner = dot(&nx, &x);
        let margin = match k.dissipativity {
            Some((alpha, delta)) => inner - (alpha - delta * norm_sq(&x)),
            None => inner,
        };
        let violated = k.dissipativity.is_some() && margin > SAMPLE_SLACK * scale;
        dissipative.offer(margin, violated, || x.clone());
    }

    let mut entries = vec![
        sampled_entry("A1", k.one_sided_lipschitz.map(|c| named(&[("c1", c)])), "max_one_sided_ratio", lipschitz),
        sampled_entry(
            "A2",
            k.polynomial_growth.map(|(c2, chi)| named(&[("c2", c2), ("chi", chi)])),
            "max_growth_ratio",
            growth,
        ),
        sampled_entry(
            "A4.1",
            k.flow_increment.map(|(c3, q)| named(&[("c3", c3), ("q", q as f64)])),
            "max_increment_ratio",
            increment,
        ),
        sampled_entry("A4.2", k.flow_energy.map(|c4| named(&[("c4", c4)])), "max_energy_growth_rate", energy),
    ];

    // A5: contraction of the linear propagator at every grid step.
    let mut worst_norm = f64::NEG_INFINITY;
    let mut worst_delta = 0.0;
    for &delta in &config.delta_grid {
        let n = spectral_norm(&model.propagator(delta)?.transition)?;
        if n > worst_norm {
            worst_norm = n;
            worst_delta = delta;
        }
    }
    let a5 = worst_norm < 1.0;
    entries.push(AssumptionEntry {
        name: "A5",
        verdict: if a5 { Verdict::Holds } else { Verdict::Fails },
        method: "exact",
        constants: BTreeMap::new(),
        observed: named(&[("max_transition_norm", worst_norm), ("at_delta", worst_delta)]),
        witness: (!a5).then(|| vec![worst_delta]),
    });

    // A6: strictly negative logarithmic norm, up to rounding in A.
    let a = model.drift_matrix();
    let mu = log_norm(a)?;
    let a6 = mu < -1e-12 * a.max_abs().max(f64::MIN_POSITIVE);
    entries.push(AssumptionEntry {
        name: "A6",
        verdict: if a6 { Verdict::Holds } else { Verdict::Fails },
        method: "exact",
        constants: BTreeMap::new(),
        observed: named(&[("log_norm", mu)]),
        witness: None,
    });

    entries.push(sampled_entry(
        "dissipativity",
        k.dissipativity.map(|(alpha, delta)| named(&[("alpha", alpha), ("delta", delta)])),
        "max_margin",
        dissipative,
    ));

    let lyapunov = if a5 && k.flow_energy.is_some() {
        config.delta_grid.iter().map(|&delta| lyapunov_constants(model, delta)).collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };

    Ok(AssumptionReport {
        model: model.label().to_string(),
        sample_box: config.sample_box,
        samples: config.samples,
        delta_grid: config.delta_grid.clone(),
        entries,
        lyapunov,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypoEntry {
    pub delta: f64,
    pub det: f64,
    /// Eigenvalues of `C(Δ)`, ascending.
    pub eigenvalues: Vec<f64>,
    pub trace: f64,
    /// `det C(Δ) > 1e-14·(tr C(Δ))^d`.
    pub one_step_hypoelliptic: bool,
    /// Rank of the Euler one-step covariance `ΔΣΣᵀ`.
    pub euler_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypoReport {
    pub model: String,
    pub entries: Vec<HypoEntry>,
    pub one_step_hypoelliptic: bool,
    pub euler_full_rank: bool,
}

fn numeric_rank(m: &Matrix) -> Result<usize, AnalysisError> {
    let (values, _) = symmetric_eigen(m)?;
    let top = values.last().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Ok(0);
    }
    Ok(values.iter().filter(|v| **v > 1e-12 * top).count())
}

pub fn hypoellipticity_report(model: &ModelSpec, delta_grid: &[f64]) -> Result<HypoReport, AnalysisError> {
    if delta_grid.is_empty() || delta_grid.iter().any(|d| !(*d > 0.0 && *d <= 1.0)) {
        return Err(AnalysisError::Argument("step grid must be non-empty and lie in (0, 1]".into()));
    }
    let d = model.dim();
    let sigma = model.diffusion_matrix();
    let noise_gram = sigma.matmul(&sigma.transpose());
    let mut entries = Vec::with_capacity(delta_grid.len());
    for &delta in delta_grid {
        let c = model.propagator(delta)?.covariance;
        let det = c.determinant()?;
        let trace = c.trace();
        let (eigenvalues, _) = symmetric_eigen(&c)?;
        entries.push(HypoEntry {
            delta,
            det,
            eigenvalues,
            trace,
            one_step_hypoelliptic: det > HYPO_TOL * trace.powi(d as i32),
            euler_rank: numeric_rank(&noise_gram.scale(delta))?,
        });
    }
    Ok(HypoReport {
        model: model.label().to_string(),
        one_step_hypoelliptic: entries.iter().all(|e| e.one_step_hypoelliptic),
        euler_full_rank: entries.iter().all(|e| e.euler_rank == d),
        entries,
    })
}
