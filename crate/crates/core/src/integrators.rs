//! One-step maps and path/ensemble drivers.
//!
//! The splitting schemes compose the exact flow of `dx/dt = N(x)` with the
//! exact Gaussian transition of the linear part. The Euler-type schemes
//! discretize the full drift directly and differ only in how they rescale
//! the increment.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::models::{LinearPropagator, ModelError, ModelSpec};
use crate::noise::{derive_stream, NoiseStream, StreamKey};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegratorError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// States whose norm exceeds this are treated as having blown up. Finite
/// but astronomically large states only precede an overflow by a step or two.
pub const DEFAULT_EXPLOSION_BOUND: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    LieTrotter,
    Strang,
    EulerMaruyama,
    TamedEuler,
    DiffusionTamedEuler,
    TruncatedEuler,
    DiffusionTruncatedEuler,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::LieTrotter,
        Method::Strang,
        Method::EulerMaruyama,
        Method::TamedEuler,
        Method::DiffusionTamedEuler,
        Method::TruncatedEuler,
        Method::DiffusionTruncatedEuler,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::LieTrotter => "LT",
            Method::Strang => "S",
            Method::EulerMaruyama => "EM",
            Method::TamedEuler => "TEM",
            Method::DiffusionTamedEuler => "DTEM",
            Method::TruncatedEuler => "TrEM",
            Method::DiffusionTruncatedEuler => "DTrEM",
        }
    }

    pub fn is_splitting(self) -> bool {
        matches!(self, Method::LieTrotter | Method::Strang)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = IntegratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let m = match s.to_ascii_lowercase().as_str() {
            "lt" | "lie-trotter" | "lie_trotter" | "lietrotter" => Method::LieTrotter,
            "s" | "strang" => Method::Strang,
            "em" | "euler" | "euler-maruyama" => Method::EulerMaruyama,
            "tem" | "tamed" => Method::TamedEuler,
            "dtem" => Method::DiffusionTamedEuler,
            "trem" | "truncated" => Method::TruncatedEuler,
            "dtrem" => Method::DiffusionTruncatedEuler,
            _ => return Err(IntegratorError::Argument(format!("unknown method '{s}'"))),
        };
        Ok(m)
    }
}

/// Everything a method needs that depends only on the step size.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub delta: f64,
    pub sqrt_delta: f64,
    /// Present for the splitting schemes.
    pub propagator: Option<LinearPropagator>,
}

impl StepContext {
    pub fn new(model: &ModelSpec, method: Method, delta: f64) -> Result<Self, IntegratorError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(IntegratorError::Argument(format!("step size must lie in (0, 1), got {delta}")));
        }
        let propagator = if method.is_splitting() { Some(model.propagator(delta)?) } else { None };
        Ok(Self { delta, sqrt_delta: delta.sqrt(), propagator })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `x' = e^{AΔ} f(x; Δ) + ξ`.
pub fn lie_trotter_step(
    prop: &LinearPropagator,
    model: &ModelSpec,
    x: &[f64],
    xi: &[f64],
    scratch: &mut [f64],
    out: &mut [f64],
) {
    model.flow(x, prop.delta, scratch);
    prop.transition.mul_vec_into(scratch, out);
    for (o, n) in out.iter_mut().zip(xi) {
        *o += n;
    }
}

/// `x' = f(e^{AΔ} f(x; Δ/2) + ξ; Δ/2)` with the full-step `ξ`.
pub fn strang_step(
    prop: &LinearPropagator,
    model: &ModelSpec,
    x: &[f64],
    xi: &[f64],
    scratch: &mut [f64],
    out: &mut [f64],
) {
    let half = 0.5 * prop.delta;
    model.flow(x, half, out);
    prop.transition.mul_vec_into(out, scratch);
    for (s, n) in scratch.iter_mut().zip(xi.iter()) {
        *s += n;
    }
    model.flow(scratch, half, out);
}

/// Euler-type update driven by the Brownian increment `dw` (variance Δ per
/// component). `scratch` needs `2·d` entries.
pub fn euler_step(
    method: Method,
    model: &ModelSpec,
    x: &[f64],
    delta: f64,
    dw: &[f64],
    scratch: &mut [f64],
    out: &mut [f64],
) {
    let d = x.len();
    let (drift, noise) = scratch.split_at_mut(d);
    model.full_drift(x, drift);
    model.diffusion_matrix().mul_vec_into(dw, &mut noise[..d]);
    let noise = &noise[..d];
    let drift_norm = norm(drift);
    match method {
        Method::EulerMaruyama => {
            for i in 0..d {
                out[i] = x[i] + drift[i] * delta + noise[i];
            }
        }
        Method::TamedEuler => {
            let damp = 1.0 + drift_norm * delta;
            for i in 0..d {
                out[i] = x[i] + drift[i] * delta / damp + noise[i];
            }
        }
        Method::DiffusionTamedEuler => {
            let damp = 1.0 + drift_norm * delta + norm(noise);
            for i in 0..d {
                out[i] = x[i] + (drift[i] * delta + noise[i]) / damp;
            }
        }
        Method::TruncatedEuler => {
            let damp = (drift_norm * delta).max(1.0);
            for i in 0..d {
                out[i] = x[i] + drift[i] * delta / damp + noise[i];
            }
        }
        Method::DiffusionTruncatedEuler => {
            let incr_norm = (0..d).map(|i| (drift[i] * delta + noise[i]).powi(2)).sum::<f64>().sqrt();
            let damp = (delta * incr_norm).max(1.0);
            for i in 0..d {
                out[i] = x[i] + (drift[i] * delta + noise[i]) / damp;
            }
        }
        Method::LieTrotter | Method::Strang => unreachable!("not an Euler-type method"),
    }
}

/// A method bound to a model and step size, with its own scratch space.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    model: &'a ModelSpec,
    method: Method,
    ctx: StepContext,
    noise: Vec<f64>,
    normals: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a ModelSpec, method: Method, delta: f64) -> Result<Self, IntegratorError> {
        let ctx = StepContext::new(model, method, delta)?;
        let d = model.dim();
        let noise_len = if method.is_splitting() { d } else { model.noise_dim() };
        Ok(Self {
            model,
            method,
            ctx,
            noise: vec![0.0; noise_len],
            normals: vec![0.0; noise_len],
            scratch: vec![0.0; 2 * d],
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn context(&self) -> &StepContext {
        &self.ctx
    }

    /// Length of the noise input of [`Stepper::step_with_noise`]: `d` for
    /// the splitting schemes (the Gaussian vector ξ), `m` otherwise (the
    /// Brownian increment).
    pub fn noise_len(&self) -> usize {
        self.noise.len()
    }

    pub fn step_with_noise(&mut self, x: &[f64], noise: &[f64], out: &mut [f64]) {
        let d = x.len();
        match (self.method, &self.ctx.propagator) {
            (Method::LieTrotter, Some(p)) => lie_trotter_step(p, self.model, x, noise, &mut self.scratch[..d], out),
            (Method::Strang, Some(p)) => strang_step(p, self.model, x, noise, &mut self.scratch[..d], out),
            (m, _) => euler_step(m, self.model, x, self.ctx.delta, noise, &mut self.scratch, out),
        }
    }

    /// One step with fresh noise drawn from `stream`.
    pub fn step(&mut self, x: &[f64], stream: &mut NoiseStream, out: &mut [f64]) {
        stream.fill_standard_normal(&mut self.normals);
        let mut noise = std::mem::take(&mut self.noise);
        match &self.ctx.propagator {
            Some(p) => p.factor.factor.mul_vec_into(&self.normals, &mut noise),
            None => {
                for (w, z) in noise.iter_mut().zip(&self.normals) {
                    *w = self.ctx.sqrt_delta * z;
                }
            }
        }
        self.step_with_noise(x, &noise, out);
        self.noise = noise;
    }
}

pub fn step_lie_trotter(ctx: &StepContext, model: &ModelSpec, x: &[f64], stream: &mut NoiseStream) -> Vec<f64> {
    let prop = ctx.propagator.as_ref().expect("splitting context");
    let xi = crate::noise::sample_xi(&prop.factor, stream);
    let mut scratch = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    lie_trotter_step(prop, model, x, &xi, &mut scratch, &mut out);
    out
}

pub fn step_strang(ctx: &StepContext, model: &ModelSpec, x: &[f64], stream: &mut NoiseStream) -> Vec<f64> {
    let prop = ctx.propagator.as_ref().expect("splitting context");
    let xi = crate::noise::sample_xi(&prop.factor, stream);
    let mut scratch = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    strang_step(prop, model, x, &xi, &mut scratch, &mut out);
    out
}

pub fn step_euler_family(
    method: Method,
    model: &ModelSpec,
    x: &[f64],
    delta: f64,
    stream: &mut NoiseStream,
) -> Result<Vec<f64>, IntegratorError> {
    if method.is_splitting() {
        return Err(IntegratorError::Argument(format!("{method} is not an Euler-type method")));
    }
    if !(delta > 0.0) {
        return Err(IntegratorError::Argument(format!("step size must be > 0, got {delta}")));
    }
    let dw: Vec<f64> = (0..model.noise_dim()).map(|_| delta.sqrt() * stream.standard_normal()).collect();
    let mut scratch = vec![0.0; 2 * x.len()];
    let mut out = vec![0.0; x.len()];
    euler_step(method, model, x, delta, &dw, &mut scratch, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub method: Method,
    pub delta: f64,
    pub key: StreamKey,
    dim: usize,
    states: Vec<f64>,
    /// Step index whose result was non-finite or beyond the explosion bound.
    /// That state is not stored.
    pub exploded_at: Option<usize>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored states (grid times `0..len()`).
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.delta
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn is_exploded(&self) -> bool {
        self.exploded_at.is_some()
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.states.iter().skip(k).step_by(self.dim).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub master_seed: u64,
    pub method: Method,
    pub delta: f64,
    pub paths: Vec<Trajectory>,
}

impl Ensemble {
    pub fn exploded_count(&self) -> usize {
        self.paths.iter().filter(|p| p.is_exploded()).count()
    }
}

pub fn simulate_path(
    model: &ModelSpec,
    method: Method,
    delta: f64,
    n_steps: usize,
    x0: &[f64],
    key: StreamKey,
) -> Result<Trajectory, IntegratorError> {
    simulate_path_bounded(model, method, delta, n_steps, x0, key, DEFAULT_EXPLOSION_BOUND)
}

pub fn simulate_path_bounded(
    model: &ModelSpec,
    method: Method,
    delta: f64,
    n_steps: usize,
    x0: &[f64],
    key: StreamKey,
    explosion_bound: f64,
) -> Result<Trajectory, IntegratorError> {
    let d = model.dim();
    if x0.len() != d {
        return Err(IntegratorError::Argument(format!(
            "initial state has {} entries, model dimension is {d}",
            x0.len()
        )));
    }
    let mut stepper = Stepper::new(model, method, delta)?;
    let mut stream = derive_stream(key);
    let mut states = Vec::with_capacity((n_steps + 1) * d);
    states.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; d];
    let mut exploded_at = None;
    for i in 1..=n_steps {
        stepper.step(&x, &mut stream, &mut next);
        if next.iter().any(|v| !v.is_finite()) || norm(&next) > explosion_bound {
            exploded_at = Some(i);
            break;
        }
        states.extend_from_slice(&next);
        std::mem::swap(&mut x, &mut next);
    }
    Ok(Trajectory { method, delta, key, dim: d, states, exploded_at })
}

/// `paths` independent trajectories with path indices `0..paths`, computed in
/// parallel and returned in index order.
pub fn simulate_ensemble(
    model: &ModelSpec,
    method: Method,
    delta: f64,
    n_steps: usize,
    x0: &[f64],
    master_seed: u64,
    paths: usize,
) -> Result<Ensemble, IntegratorError> {
    if paths == 0 {
        return Err(IntegratorError::Argument("path count must be at least 1".into()));
    }
    // Fail fast on bad arguments before spawning work.
    StepContext::new(model, method, delta)?;
    let trajectories = (0..paths as u64)
        .into_par_iter()
        .map(|l| simulate_path(model, method, delta, n_steps, x0, StreamKey::new(master_seed, l)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Ensemble { master_seed, method, delta, paths: trajectories })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::models::{fhn_cov, fhn_flow, fhn_mat_exp, toy_flow, CustomModel, FhnParams, ToyParams};
    use std::sync::Arc;

    fn toy() -> ModelSpec {
        ModelSpec::toy(ToyParams { sigma: 0.5 }).unwrap()
    }

    fn fhn_params() -> FhnParams {
        FhnParams { eps: 0.05, gamma: 1.5, beta: 0.1, sigma1: 0.1, sigma2: 0.2 }
    }

    /// FitzHugh-Nagumo drift with the noise switched off.
    fn silent_fhn(p: FhnParams) -> ModelSpec {
        ModelSpec::custom(CustomModel {
            label: "silent-fhn".into(),
            drift_matrix: p.drift_matrix(),
            diffusion_matrix: Matrix::zeros(2, 2),
            nonlinear_drift: Arc::new(move |x, out| {
                out[0] = (x[0] - x[0].powi(3)) / p.eps;
                out[1] = p.beta;
            }),
            flow: Arc::new(move |x, t, out| out.copy_from_slice(&fhn_flow([x[0], x[1]], t, &p))),
            constants: Default::default(),
        })
        .unwrap()
    }

    fn rk4(field: impl Fn(&[f64]) -> Vec<f64>, x0: &[f64], t: f64, steps: usize) -> Vec<Vec<f64>> {
        let h = t / steps as f64;
        let mut x = x0.to_vec();
        let mut out = vec![x.clone()];
        let axpy = |x: &[f64], k: &[f64], s: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + s * b).collect() };
        for _ in 0..steps {
            let k1 = field(&x);
            let k2 = field(&axpy(&x, &k1, h / 2.0));
            let k3 = field(&axpy(&x, &k2, h / 2.0));
            let k4 = field(&axpy(&x, &k3, h));
            for i in 0..x.len() {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            out.push(x.clone());
        }
        out
    }

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.tag().parse::<Method>().unwrap(), m);
        }
        assert_eq!("strang".parse::<Method>().unwrap(), Method::Strang);
        assert!("rk4".parse::<Method>().is_err());
    }

    #[test]
    fn deterministic_splitting_steps() {
        let model = toy();
        let mut s = Stepper::new(&model, Method::LieTrotter, 0.1).unwrap();
        let mut out = [0.0];
        s.step_with_noise(&[2.0], &[0.0], &mut out);
        assert!((out[0] - (-0.1f64).exp() * toy_flow(2.0, 0.1)).abs() < 1e-15);

        let mut s = Stepper::new(&model, Method::Strang, 0.1).unwrap();
        s.step_with_noise(&[2.0], &[0.0], &mut out);
        let expected = toy_flow((-0.1f64).exp() * toy_flow(2.0, 0.05), 0.05);
        assert!((out[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn splitting_is_exact_ou_step_without_nonlinearity() {
        let a = Matrix::from_rows(&[&[-0.5, 1.0], &[-1.0, -0.3]]).unwrap();
        let model = ModelSpec::custom(CustomModel::linear("ou", a.clone(), Matrix::diag(&[0.2, 0.1]))).unwrap();
        let x = [0.7, -0.4];
        let xi = [0.01, -0.02];
        let expected = crate::linalg::mat_exp(&a, 0.2).unwrap().mul_vec(&x);
        for m in [Method::LieTrotter, Method::Strang] {
            let mut s = Stepper::new(&model, m, 0.2).unwrap();
            let mut out = [0.0; 2];
            s.step_with_noise(&x, &xi, &mut out);
            for i in 0..2 {
                assert!((out[i] - expected[i] - xi[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn strang_is_second_order_deterministically() {
        // Noise-free toy model, global error at T = 1 against RK4.
        let model = toy();
        let exact = rk4(|x| vec![-x[0].powi(3)], &[2.0], 1.0, 100_000).pop().unwrap()[0];
        let errs: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&dt| {
                let mut s = Stepper::new(&model, Method::Strang, dt).unwrap();
                let mut x = [2.0];
                let mut next = [0.0];
                for _ in 0..(1.0 / dt).round() as usize {
                    s.step_with_noise(&x, &[0.0], &mut next);
                    x = next;
                }
                (x[0] - exact).abs()
            })
            .collect();
        let slope = (errs[0] / errs[2]).log2() / 2.0;
        assert!(slope >= 1.8, "{errs:?} slope={slope}");
    }

    #[test]
    fn lie_trotter_one_step_law() {
        let p = fhn_params();
        let model = ModelSpec::fhn(p).unwrap();
        let ctx = StepContext::new(&model, Method::LieTrotter, 0.01).unwrap();
        let x = [1.0, 1.0];
        let mean = fhn_mat_exp(&p, 0.01).mul_vec(&fhn_flow(x, 0.01, &p));
        let cov = fhn_cov(&p, 0.01);
        let mut s = derive_stream(StreamKey::new(3, 0));
        let n = 100_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| step_lie_trotter(&ctx, &model, &x, &mut s)).collect();
        for i in 0..2 {
            let m = draws.iter().map(|v| v[i]).sum::<f64>() / n as f64;
            let se = (cov[(i, i)] / n as f64).sqrt();
            assert!((m - mean[i]).abs() < 4.0 * se, "mean {i}");
        }
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            let prods: Vec<f64> = draws.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).collect();
            let c = prods.iter().sum::<f64>() / n as f64;
            let var = prods.iter().map(|q| (q - c).powi(2)).sum::<f64>() / n as f64;
            let se = (var / n as f64).sqrt();
            assert!((c - cov[(i, j)]).abs() < 3.0 * se, "cov ({i},{j})");
        }
    }

    #[test]
    fn euler_family_without_drift() {
        let model =
            ModelSpec::custom(CustomModel::linear("bm", Matrix::zeros(2, 2), Matrix::diag(&[0.5, 2.0]))).unwrap();
        let x = [1.0, -1.0];
        let delta: f64 = 0.01;
        let psi = [0.3, -1.2];
        let dw = [delta.sqrt() * psi[0], delta.sqrt() * psi[1]];
        let g = [0.5 * dw[0], 2.0 * dw[1]];
        let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
        let mut scratch = [0.0; 4];
        let mut out = [0.0; 2];
        for m in [Method::EulerMaruyama, Method::TamedEuler, Method::TruncatedEuler] {
            euler_step(m, &model, &x, delta, &dw, &mut scratch, &mut out);
            assert_eq!(out, [x[0] + g[0], x[1] + g[1]]);
        }
        euler_step(Method::DiffusionTamedEuler, &model, &x, delta, &dw, &mut scratch, &mut out);
        for i in 0..2 {
            assert!((out[i] - (x[i] + g[i] / (1.0 + gn))).abs() < 1e-15);
        }
        euler_step(Method::DiffusionTruncatedEuler, &model, &x, delta, &dw, &mut scratch, &mut out);
        for i in 0..2 {
            assert!((out[i] - (x[i] + g[i] / (delta * gn).max(1.0))).abs() < 1e-15);
        }
    }

    #[test]
    fn euler_family_at_large_initial_value() {
        let model = toy();
        let mut scratch = [0.0; 2];
        let mut out = [0.0];
        euler_step(Method::TamedEuler, &model, &[1e4], 1e-4, &[0.0], &mut scratch, &mut out);
        assert!((out[0] - (1e4 - 1e8 / (1.0 + 1e8))).abs() < 1e-9);
        euler_step(Method::EulerMaruyama, &model, &[1e4], 1e-4, &[0.0], &mut scratch, &mut out);
        assert!((out[0] + 99_990_000.0).abs() < 1e-6);
    }

    #[test]
    fn path_basics() {
        let model = toy();
        let key = StreamKey::new(42, 0);
        let t = simulate_path(&model, Method::LieTrotter, 0.01, 0, &[2.0], key).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.state(0), &[2.0]);
        let a = simulate_path(&model, Method::Strang, 0.01, 500, &[2.0], key).unwrap();
        let b = simulate_path(&model, Method::Strang, 0.01, 500, &[2.0], key).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.times().len(), a.len());
        assert_eq!(a.time(500), 5.0);
        assert!(simulate_path(&model, Method::Strang, 1.0, 5, &[2.0], key).is_err());
        assert!(simulate_path(&model, Method::Strang, -0.1, 5, &[2.0], key).is_err());
        assert!(simulate_path(&model, Method::Strang, 0.1, 5, &[2.0, 1.0], key).is_err());
    }

    #[test]
    fn em_explosion_is_marked() {
        let model = toy();
        let t = simulate_path(&model, Method::EulerMaruyama, 1e-4, 10, &[1e4], StreamKey::new(42, 0)).unwrap();
        assert!(t.exploded_at.is_some_and(|i| i <= 3), "{:?}", t.exploded_at);
        assert!(t.len() <= 3);
        let lt = simulate_path(&model, Method::LieTrotter, 1e-4, 10, &[1e4], StreamKey::new(42, 0)).unwrap();
        assert!(!lt.is_exploded());
    }

    fn noise_free_strang_sup_error(p: FhnParams, dt: f64) -> f64 {
        let model = silent_fhn(p);
        let n = (1.0 / dt).round() as usize;
        let traj = simulate_path(&model, Method::Strang, dt, n, &[-1.0, 0.0], StreamKey::new(0, 0)).unwrap();
        let substeps = 100;
        let reference = rk4(
            |x| vec![(x[0] - x[0].powi(3) - x[1]) / p.eps, p.gamma * x[0] - x[1] + p.beta],
            &[-1.0, 0.0],
            1.0,
            n * substeps,
        );
        (0..=n)
            .map(|i| {
                let r = &reference[i * substeps];
                let s = traj.state(i);
                ((s[0] - r[0]).powi(2) + (s[1] - r[1]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn noise_free_strang_tracks_ode() {
        let unit = FhnParams { eps: 1.0, gamma: 1.0, beta: 1.0, sigma1: 1.0, sigma2: 1.0 };
        let sup = noise_free_strang_sup_error(unit, 1e-3);
        assert!(sup < 1e-4, "sup={sup:e}");
        // Stiff voltage dynamics: larger constant, same second-order decay.
        let coarse = noise_free_strang_sup_error(fhn_params(), 2e-3);
        let fine = noise_free_strang_sup_error(fhn_params(), 1e-3);
        assert!(coarse / fine > 3.5, "{coarse:e} {fine:e}");
    }

    #[test]
    fn ensemble_matches_single_path_and_thread_count() {
        let model = ModelSpec::fhn(fhn_params()).unwrap();
        let single = simulate_path(&model, Method::LieTrotter, 0.01, 100, &[0.0, 0.0], StreamKey::new(7, 0)).unwrap();
        let e1 = simulate_ensemble(&model, Method::LieTrotter, 0.01, 100, &[0.0, 0.0], 7, 1).unwrap();
        assert_eq!(e1.paths[0], single);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_ensemble(&model, Method::TamedEuler, 0.01, 200, &[0.0, 0.0], 7, 33).unwrap())
        };
        assert_eq!(run(1), run(4));
        assert!(simulate_ensemble(&model, Method::TamedEuler, 0.01, 10, &[0.0, 0.0], 7, 0).is_err());
    }

    #[test]
    fn splitting_exact_on_ou_ensemble() {
        let p = fhn_params();
        let model = ModelSpec::custom(CustomModel::linear("ou", p.drift_matrix(), p.diffusion_matrix())).unwrap();
        let x0 = [1.0, 0.5];
        let (dt, n) = (0.05, 20);
        let t_end = dt * n as f64;
        let mean = fhn_mat_exp(&p, t_end).mul_vec(&x0);
        let cov = fhn_cov(&p, t_end);
        for m in [Method::LieTrotter, Method::Strang] {
            let e = simulate_ensemble(&model, m, dt, n, &x0, 5, 20_000).unwrap();
            let finals: Vec<&[f64]> = e.paths.iter().map(|t| t.last()).collect();
            let k = finals.len() as f64;
            for i in 0..2 {
                let mi = finals.iter().map(|v| v[i]).sum::<f64>() / k;
                assert!((mi - mean[i]).abs() < 4.0 * (cov[(i, i)] / k).sqrt(), "{m} mean {i}");
            }
            for (i, j) in [(0, 0), (0, 1), (1, 1)] {
                let prods: Vec<f64> = finals.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).collect();
                let c = prods.iter().sum::<f64>() / k;
                let se = (prods.iter().map(|q| (q - c).powi(2)).sum::<f64>() / k / k).sqrt();
                assert!((c - cov[(i, j)]).abs() < 4.0 * se, "{m} cov ({i},{j})");
            }
        }
    }

    #[test]
    fn lie_trotter_discrete_lyapunov_bound() {
        // E[X'² | x] = (e^{-Δ} f(x;Δ))² + C(Δ) for the scalar cubic model.
        let model = toy();
        for dt in [1e-3, 1e-2, 0.1, 0.5] {
            let prop = model.propagator(dt).unwrap();
            let c = prop.covariance[(0, 0)];
            for x in [-1e6, -50.0, -2.0, -0.3, 0.0, 0.7, 1.0, 3.0, 1e3] {
                let m = prop.transition[(0, 0)] * toy_flow(x, dt);
                let second = m * m + c;
                let bound = (-2.0 * dt).exp() * (x * x + dt / 2.0) + c;
                assert!(second <= bound + 1e-10 * (1.0 + x * x), "dt={dt} x={x}");
            }
        }
    }

    #[test]
    fn schemes_agree_as_step_shrinks() {
        // LT, S and TEM driven by the same Brownian path converge to each other.
        use crate::noise::{ConvolutionKernel, FineBrownianPath};
        let p = FhnParams { eps: 1.0, gamma: 1.0, beta: 1.0, sigma1: 1.0, sigma2: 1.0 };
        let model = ModelSpec::fhn(p).unwrap();
        let fine_dt = 2f64.powi(-12);
        let mut stream = derive_stream(StreamKey::new(1, 0));
        let fine = FineBrownianPath::generate(&mut stream, 2, fine_dt, 4096).unwrap();
        let sup_gap = |dt: f64| -> f64 {
            let r = (dt / fine_dt).round() as usize;
            let n = fine.len() / r;
            let kernel = ConvolutionKernel::new(model.drift_matrix(), model.diffusion_matrix(), dt, fine_dt).unwrap();
            let mut lt = Stepper::new(&model, Method::LieTrotter, dt).unwrap();
            let mut st = Stepper::new(&model, Method::Strang, dt).unwrap();
            let mut tem = Stepper::new(&model, Method::TamedEuler, dt).unwrap();
            let (mut a, mut b, mut c) = ([0.0; 2], [0.0; 2], [0.0; 2]);
            let mut next = [0.0; 2];
            let (mut xi, mut dw) = ([0.0; 2], [0.0; 2]);
            let mut gap: f64 = 0.0;
            for i in 0..n {
                kernel.apply(&fine, i * r, &mut xi);
                fine.aggregate(i * r, r, &mut dw);
                lt.step_with_noise(&a, &xi, &mut next);
                a = next;
                st.step_with_noise(&b, &xi, &mut next);
                b = next;
                tem.step_with_noise(&c, &dw, &mut next);
                c = next;
                for (u, v) in [(a, b), (a, c), (b, c)] {
                    gap = gap.max(((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2)).sqrt());
                }
            }
            gap
        };
        let gaps: Vec<f64> = [2f64.powi(-4), 2f64.powi(-6), 2f64.powi(-8)].iter().map(|&d| sup_gap(d)).collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }
}
