use serde::Serialize;

use super::AnalysisError;
use crate::linalg::spectral_norm;
use crate::models::ModelSpec;

/// Closed-form second-moment bounds for scalar models with `A = −a`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSeries1D {
    pub times: Vec<f64>,
    pub k_lt: Vec<f64>,
    pub k_s: Vec<f64>,
    pub k_lt_inf: f64,
    pub k_s_inf: f64,
    pub a: f64,
    pub sigma: f64,
    pub c4: f64,
    pub delta0: f64,
    pub initial_second_moment: f64,
}

pub fn bounds_1d(
    a: f64,
    sigma: f64,
    c4: f64,
    delta0: f64,
    initial_second_moment: f64,
    times: &[f64],
) -> Result<BoundSeries1D, AnalysisError> {
    let check = |ok: bool, what: &str| if ok { Ok(()) } else { Err(AnalysisError::Argument(what.to_string())) };
    check(a > 0.0 && a.is_finite(), "decay rate a must be > 0")?;
    check(sigma > 0.0 && sigma.is_finite(), "sigma must be > 0")?;
    check(c4 >= 0.0 && c4.is_finite(), "c4 must be >= 0")?;
    check(delta0 > 0.0 && delta0.is_finite(), "step bound delta0 must be > 0")?;
    check(initial_second_moment >= 0.0, "initial second moment must be >= 0")?;
    check(times.iter().all(|t| *t >= 0.0 && t.is_finite()), "times must be finite and >= 0")?;

    let noise = sigma * sigma / (2.0 * a);
    let k_lt_inf = c4 / (2.0 * a) + noise;
    let k_s_inf = c4 / 2.0 * (delta0 / -(-2.0 * a * delta0).exp_m1() + 1.0 / (2.0 * a)) + noise;
    let blend = |limit: f64, t: f64| {
        let w = (-2.0 * a * t).exp();
        w * initial_second_moment + (1.0 - w) * limit
    };
    Ok(BoundSeries1D {
        times: times.to_vec(),
        k_lt: times.iter().map(|&t| blend(k_lt_inf, t)).collect(),
        k_s: times.iter().map(|&t| blend(k_s_inf, t)).collect(),
        k_lt_inf,
        k_s_inf,
        a,
        sigma,
        c4,
        delta0,
        initial_second_moment,
    })
}

/// Constants of the one-step drift condition `E[L(X')|x] ≤ ρ L(x) + η` with
/// `L(x) = 1 + ‖x‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovConstants {
    pub delta: f64,
    pub rho: f64,
    pub eta_lie_trotter: f64,
    pub eta_strang: f64,
}

/// Requires a declared flow-energy constant `c4`.
pub fn lyapunov_constants(model: &ModelSpec, delta: f64) -> Result<LyapunovConstants, AnalysisError> {
    let c4 = model
        .constants()
        .flow_energy
        .ok_or_else(|| AnalysisError::Argument(format!("{} declares no flow-energy constant", model.label())))?;
    let prop = model.propagator(delta)?;
    let rho = spectral_norm(&prop.transition)?.powi(2);
    let trace = prop.covariance.trace();
    Ok(LyapunovConstants {
        delta,
        rho,
        eta_lie_trotter: 1.0 + rho * c4 * delta + trace,
        eta_strang: 1.0 + rho * c4 * delta / 2.0 + trace + c4 * delta / 2.0,
    })
}
