//! Semi-linear SDE models `dX = (AX + N(X)) dt + Σ dW`.
//!
//! A model carries the linear drift `A`, the diffusion matrix `Σ`, the
//! nonlinear part `N` and the exact flow of `dx/dt = N(x)`. Two concrete
//! models are built in: a cubic scalar equation and the stochastic
//! FitzHugh-Nagumo neuron model.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix, PsdFactor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model parameters: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// |κ| below this uses the critically damped closed forms.
pub const KAPPA_ZERO_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ToyParams {
    pub sigma: f64,
}

impl ToyParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.sigma > 0.0 && self.sigma.is_finite() {
            Ok(())
        } else {
            Err(ModelError::Invalid(vec![format!("sigma must be > 0, got {}", self.sigma)]))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FhnParams {
    /// Time-scale separation between voltage and recovery variable.
    pub eps: f64,
    pub gamma: f64,
    pub beta: f64,
    /// Noise on the voltage; zero gives the hypoelliptic model.
    pub sigma1: f64,
    pub sigma2: f64,
}

impl FhnParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut problems = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                problems.push(msg);
            }
        };
        need(self.eps > 0.0 && self.eps.is_finite(), format!("eps must be > 0, got {}", self.eps));
        need(self.gamma > 0.0 && self.gamma.is_finite(), format!("gamma must be > 0, got {}", self.gamma));
        need(self.beta >= 0.0 && self.beta.is_finite(), format!("beta must be >= 0, got {}", self.beta));
        need(self.sigma1 >= 0.0 && self.sigma1.is_finite(), format!("sigma1 must be >= 0, got {}", self.sigma1));
        need(self.sigma2 > 0.0 && self.sigma2.is_finite(), format!("sigma2 must be > 0, got {}", self.sigma2));
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Invalid(problems))
        }
    }

    pub fn drift_matrix(&self) -> Matrix {
        Matrix::from_rows(&[&[0.0, -1.0 / self.eps], &[self.gamma, -1.0]]).expect("finite entries")
    }

    pub fn diffusion_matrix(&self) -> Matrix {
        Matrix::diag(&[self.sigma1, self.sigma2])
    }
}

/// Exact flow of `dx/dt = x − x³`.
pub fn toy_flow(x: f64, t: f64) -> f64 {
    if x == 0.0 || t == 0.0 {
        return x;
    }
    let decay = (-2.0 * t).exp();
    let grow = -(-2.0 * t).exp_m1();
    if x.abs() <= 1.0 {
        x / (decay + x * x * grow).sqrt()
    } else {
        // Divide through by x² so huge inputs do not overflow.
        x.signum() / (decay / (x * x) + grow).sqrt()
    }
}

/// Exact flow of the FitzHugh-Nagumo nonlinearity: the voltage follows the
/// cubic flow on time scale `eps`, the recovery variable drifts at rate `beta`.
pub fn fhn_flow(x: [f64; 2], t: f64, p: &FhnParams) -> [f64; 2] {
    [toy_flow(x[0], t / p.eps), x[1] + p.beta * t]
}

/// Damping discriminant `4γ/ε − 1`.
pub fn fhn_kappa(p: &FhnParams) -> f64 {
    4.0 * p.gamma / p.eps - 1.0
}

/// `e^{At}` for the FitzHugh-Nagumo linear part, by damping regime.
pub fn fhn_mat_exp(p: &FhnParams, t: f64) -> Matrix {
    let kappa = fhn_kappa(p);
    let (ch, sh) = if kappa.abs() < KAPPA_ZERO_THRESHOLD {
        let g = (-0.5 * t).exp();
        (g, g * 0.5 * t)
    } else if kappa > 0.0 {
        let r = kappa.sqrt();
        let g = (-0.5 * t).exp();
        (g * (0.5 * r * t).cos(), g * (0.5 * r * t).sin() / r)
    } else {
        // r < 1 here, so both exponents are non-positive for t >= 0.
        let r = (-kappa).sqrt();
        let hi = (0.5 * (r - 1.0) * t).exp();
        let lo = (-0.5 * (r + 1.0) * t).exp();
        (0.5 * (hi + lo), 0.5 * (hi - lo) / r)
    };
    let mut e = Matrix::zeros(2, 2);
    e[(0, 0)] = ch + sh;
    e[(0, 1)] = -2.0 / p.eps * sh;
    e[(1, 0)] = if kappa.abs() < KAPPA_ZERO_THRESHOLD { p.eps / 4.0 * 2.0 * sh } else { 2.0 * p.gamma * sh };
    e[(1, 1)] = ch - sh;
    e
}

/// `e^t − Σ_{j<3} t^j/j!` without cancellation for small `t`.
fn exp_tail3(t: f64) -> f64 {
    if t.abs() < 1.0 {
        let mut term = t * t * t / 6.0;
        let mut sum = term;
        for j in 4..30 {
            term *= t / j as f64;
            sum += term;
            if term.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        t.exp() - 1.0 - t - 0.5 * t * t
    }
}

/// Covariance `C(t)` of the FitzHugh-Nagumo stochastic convolution.
pub fn fhn_cov(p: &FhnParams, t: f64) -> Matrix {
    if t == 0.0 {
        return Matrix::zeros(2, 2);
    }
    let (eps, gamma) = (p.eps, p.gamma);
    let s1 = p.sigma1 * p.sigma1;
    let s2 = p.sigma2 * p.sigma2;
    let kappa = fhn_kappa(p);
    let decay = (-t).exp();

    let (c11, c12, c22) = if kappa.abs() < KAPPA_ZERO_THRESHOLD {
        let r3 = exp_tail3(t);
        let r1 = t.exp_m1();
        let c11 = decay / (4.0 * eps * eps) * (8.0 * s2 * r3 + eps * eps * s1 * (10.0 * r3 + 4.0 * t + 4.0 * t * t));
        let c12 = decay / (8.0 * eps) * (-4.0 * s2 * t * t + eps * eps * s1 * (4.0 * r3 + t * t));
        let c22 = decay / 16.0 * (4.0 * s2 * (2.0 * r1 + 2.0 * t - t * t) + 2.0 * eps * eps * s1 * r3);
        (c11, c12, c22)
    } else {
        // co = e^{-t}cos(√κ t) (cosh for κ<0), sc = e^{-t}sin(√κ t)/√κ
        // (sinh(√-κ t)/√-κ for κ<0); √κ·sin = κ·sc in both regimes.
        let (co, sc) = if kappa > 0.0 {
            let r = kappa.sqrt();
            (decay * (r * t).cos(), decay * (r * t).sin() / r)
        } else {
            let r = (-kappa).sqrt();
            let hi = ((r - 1.0) * t).exp();
            let lo = (-(r + 1.0) * t).exp();
            (0.5 * (hi + lo), 0.5 * (hi - lo) / r)
        };
        let ge = gamma / eps;
        let c11 = eps / (2.0 * gamma * kappa)
            * (-(4.0 * gamma / (eps * eps)) * (s1 * gamma + s2 / eps) * decay
                + kappa * (s1 * (1.0 + ge) + s2 / (eps * eps))
                + (s1 * (1.0 - 3.0 * ge) + s2 / (eps * eps)) * co
                - kappa * (s1 * (1.0 - ge) + s2 / (eps * eps)) * sc);
        let c12 = eps / (2.0 * kappa)
            * (s1 * kappa - 2.0 / eps * (s1 * gamma + s2 / eps) * decay
                + (s1 * (1.0 - 2.0 * ge) + 2.0 * s2 / (eps * eps)) * co
                - s1 * kappa * sc);
        let c22 = eps / (2.0 * kappa)
            * ((s2 / eps + s1 * gamma) * (co - 4.0 * ge * decay + kappa) + (s2 / eps - s1 * gamma) * kappa * sc);
        (c11, c12, c22)
    };
    Matrix::from_rows(&[&[c11, c12], &[c12, c22]]).expect("finite covariance")
}

/// Limit of `C(t)` as `t → ∞`: the invariant covariance of the linear part.
pub fn fhn_stationary_cov(p: &FhnParams) -> Matrix {
    let (eps, gamma) = (p.eps, p.gamma);
    let s1 = p.sigma1 * p.sigma1;
    let s2 = p.sigma2 * p.sigma2;
    let c11 = eps / (2.0 * gamma) * (s1 + gamma * s1 / eps + s2 / (eps * eps));
    let c12 = eps * s1 / 2.0;
    let c22 = (eps * gamma * s1 + s2) / 2.0;
    Matrix::from_rows(&[&[c11, c12], &[c12, c22]]).expect("finite covariance")
}

/// Constants for which the structural assumptions on `N` and its flow are
/// claimed. `None` means no claim is made.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AssumptionConstants {
    /// `(N(x)−N(y))·(x−y) ≤ c1‖x−y‖²`.
    pub one_sided_lipschitz: Option<f64>,
    /// `(c2, χ)` with `‖N(x)−N(y)‖² ≤ c2(1+‖x‖^{2χ−2}+‖y‖^{2χ−2})‖x−y‖²`.
    pub polynomial_growth: Option<(f64, f64)>,
    /// `(c3, q)` with `‖(f(x;Δ)−x)/Δ‖ ≤ c3(1+‖(|x_i|^{2q})_i‖)`.
    pub flow_increment: Option<(f64, u32)>,
    /// `c4` with `‖f(x;Δ)‖² ≤ ‖x‖² + c4Δ`.
    pub flow_energy: Option<f64>,
    /// `(α, δ)` with `(F(x), x) ≤ α − δ‖x‖²` for the full drift `F`.
    pub dissipativity: Option<(f64, f64)>,
}

pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type FlowMap = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

/// A user-supplied model. The flow must be the exact solution of
/// `dx/dt = N(x)`.
#[derive(Clone)]
pub struct CustomModel {
    pub label: String,
    pub drift_matrix: Matrix,
    pub diffusion_matrix: Matrix,
    pub nonlinear_drift: VectorField,
    pub flow: FlowMap,
    pub constants: AssumptionConstants,
}

impl CustomModel {
    /// `N ≡ 0`, so the flow is the identity and the SDE is Ornstein-Uhlenbeck.
    pub fn linear(label: impl Into<String>, drift_matrix: Matrix, diffusion_matrix: Matrix) -> Self {
        Self {
            label: label.into(),
            drift_matrix,
            diffusion_matrix,
            nonlinear_drift: Arc::new(|_, out| out.fill(0.0)),
            flow: Arc::new(|x, _, out| out.copy_from_slice(x)),
            constants: AssumptionConstants {
                one_sided_lipschitz: Some(0.0),
                flow_energy: Some(0.0),
                ..Default::default()
            },
        }
    }
}

impl fmt::Debug for CustomModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomModel")
            .field("label", &self.label)
            .field("drift_matrix", &self.drift_matrix)
            .field("diffusion_matrix", &self.diffusion_matrix)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum ModelRequest {
    Toy(ToyParams),
    Fhn(FhnParams),
    Custom(CustomModel),
}

#[derive(Debug, Clone)]
enum Kind {
    Toy(ToyParams),
    Fhn(FhnParams),
    Custom(CustomModel),
}

/// An assembled model. Immutable and cheap to share across threads.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    kind: Kind,
    drift_matrix: Matrix,
    diffusion_matrix: Matrix,
    label: String,
    constants: AssumptionConstants,
}

/// `e^{AΔ}`, `C(Δ)` and a square root of `C(Δ)` for one step size.
#[derive(Debug, Clone)]
pub struct LinearPropagator {
    pub delta: f64,
    pub transition: Matrix,
    pub covariance: Matrix,
    pub factor: PsdFactor,
}

pub fn build_model(request: ModelRequest) -> Result<ModelSpec, ModelError> {
    match request {
        ModelRequest::Toy(p) => ModelSpec::toy(p),
        ModelRequest::Fhn(p) => ModelSpec::fhn(p),
        ModelRequest::Custom(c) => ModelSpec::custom(c),
    }
}

impl ModelSpec {
    /// `dX = −X³ dt + σ dW`, split as `A = −1`, `N(x) = x − x³`.
    pub fn toy(p: ToyParams) -> Result<Self, ModelError> {
        p.validate()?;
        Ok(Self {
            kind: Kind::Toy(p),
            drift_matrix: Matrix::scalar(-1.0),
            diffusion_matrix: Matrix::scalar(p.sigma),
            label: format!("toy(sigma={})", p.sigma),
            constants: AssumptionConstants {
                one_sided_lipschitz: Some(1.0),
                polynomial_growth: Some((16.0, 3.0)),
                flow_increment: Some((1.0, 2)),
                flow_energy: Some(0.5),
                dissipativity: Some((2.0, 2.0)),
            },
        })
    }

    pub fn fhn(p: FhnParams) -> Result<Self, ModelError> {
        p.validate()?;
        let inv_eps = 1.0 / p.eps;
        let coupling = (p.gamma - inv_eps).abs();
        let delta = (inv_eps - coupling / 2.0).min(1.0 - p.beta - coupling / 2.0);
        Ok(Self {
            kind: Kind::Fhn(p),
            drift_matrix: p.drift_matrix(),
            diffusion_matrix: p.diffusion_matrix(),
            label: format!(
                "fhn(eps={},gamma={},beta={},sigma1={},sigma2={})",
                p.eps, p.gamma, p.beta, p.sigma1, p.sigma2
            ),
            constants: AssumptionConstants {
                one_sided_lipschitz: Some(inv_eps),
                polynomial_growth: Some((16.0 * inv_eps * inv_eps, 3.0)),
                flow_increment: Some((inv_eps + p.beta, 2)),
                flow_energy: (p.beta == 0.0).then_some(0.5 * inv_eps),
                dissipativity: (delta > 0.0).then_some((p.beta + inv_eps, delta)),
            },
        })
    }

    pub fn custom(c: CustomModel) -> Result<Self, ModelError> {
        let mut problems = Vec::new();
        let d = c.drift_matrix.rows();
        if !c.drift_matrix.is_square() {
            problems.push(format!(
                "drift matrix must be square, got {}x{}",
                c.drift_matrix.rows(),
                c.drift_matrix.cols()
            ));
        }
        if c.diffusion_matrix.rows() != d {
            problems.push(format!("diffusion matrix needs {d} rows, got {}", c.diffusion_matrix.rows()));
        }
        if problems.is_empty() {
            let mut out = vec![0.0; d];
            for probe in [vec![0.0; d], vec![1.0; d], (0..d).map(|i| i as f64 - 0.5).collect()] {
                (c.flow)(&probe, 0.0, &mut out);
                if out != probe {
                    problems.push("flow at t = 0 must be the identity".into());
                    break;
                }
            }
        }
        if !problems.is_empty() {
            return Err(ModelError::Invalid(problems));
        }
        Ok(Self {
            drift_matrix: c.drift_matrix.clone(),
            diffusion_matrix: c.diffusion_matrix.clone(),
            label: c.label.clone(),
            constants: c.constants,
            kind: Kind::Custom(c),
        })
    }

    pub fn dim(&self) -> usize {
        self.drift_matrix.rows()
    }

    pub fn noise_dim(&self) -> usize {
        self.diffusion_matrix.cols()
    }

    pub fn drift_matrix(&self) -> &Matrix {
        &self.drift_matrix
    }

    pub fn diffusion_matrix(&self) -> &Matrix {
        &self.diffusion_matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn constants(&self) -> &AssumptionConstants {
        &self.constants
    }

    pub fn fhn_params(&self) -> Option<&FhnParams> {
        match &self.kind {
            Kind::Fhn(p) => Some(p),
            _ => None,
        }
    }

    pub fn toy_params(&self) -> Option<&ToyParams> {
        match &self.kind {
            Kind::Toy(p) => Some(p),
            _ => None,
        }
    }

    pub fn nonlinear_drift(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            Kind::Toy(_) => out[0] = x[0] - x[0] * x[0] * x[0],
            Kind::Fhn(p) => {
                out[0] = (x[0] - x[0] * x[0] * x[0]) / p.eps;
                out[1] = p.beta;
            }
            Kind::Custom(c) => (c.nonlinear_drift)(x, out),
        }
    }

    /// Exact solution of `dx/dt = N(x)` after time `t`.
    pub fn flow(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match &self.kind {
            Kind::Toy(_) => out[0] = toy_flow(x[0], t),
            Kind::Fhn(p) => out.copy_from_slice(&fhn_flow([x[0], x[1]], t, p)),
            Kind::Custom(c) => (c.flow)(x, t, out),
        }
    }

    /// `Ax + N(x)`.
    pub fn full_drift(&self, x: &[f64], out: &mut [f64]) {
        self.nonlinear_drift(x, out);
        let d = self.dim();
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate().take(d) {
                acc += self.drift_matrix[(i, j)] * xj;
            }
            *o += acc;
        }
    }

    /// Closed forms for the built-in models, generic exponential and
    /// quadrature for custom ones.
    pub fn propagator(&self, delta: f64) -> Result<LinearPropagator, ModelError> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(ModelError::Invalid(vec![format!("step size must be > 0, got {delta}")]));
        }
        let (transition, covariance) = match &self.kind {
            Kind::Toy(p) => {
                (Matrix::scalar((-delta).exp()), Matrix::scalar(-p.sigma * p.sigma * (-2.0 * delta).exp_m1() / 2.0))
            }
            Kind::Fhn(p) => (fhn_mat_exp(p, delta), fhn_cov(p, delta)),
            Kind::Custom(_) => (
                linalg::mat_exp(&self.drift_matrix, delta)?,
                linalg::cov_quadrature(
                    &self.drift_matrix,
                    &self.diffusion_matrix,
                    delta,
                    linalg::DEFAULT_QUADRATURE_TOL,
                )?,
            ),
        };
        let factor = linalg::psd_factor(&covariance)?;
        Ok(LinearPropagator { delta, transition, covariance, factor })
    }
}
