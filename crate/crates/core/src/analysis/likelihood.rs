use serde::Serialize;

use super::AnalysisError;
use crate::linalg::Matrix;
use crate::models::{LinearPropagator, ModelSpec};

/// `det C(Δ) ≤ SINGULAR_TOL·(tr C)^d` counts as singular.
const SINGULAR_TOL: f64 = 1e-14;

/// −2 log-likelihood of the Lie-Trotter one-step transitions without the
/// `n·d·log 2π` constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NllValue {
    pub transitions: usize,
    pub log_det: f64,
    /// `Σ rᵢᵀ C⁻¹ rᵢ`.
    pub quadratic: f64,
    pub nll: f64,
}

struct Prepared<'a> {
    model: &'a ModelSpec,
    prop: LinearPropagator,
    precision: Matrix,
    log_det: f64,
}

impl<'a> Prepared<'a> {
    fn new(model: &'a ModelSpec, delta: f64) -> Result<Self, AnalysisError> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(AnalysisError::Argument(format!("step must lie in (0, 1], got {delta}")));
        }
        let prop = model.propagator(delta)?;
        let c = &prop.covariance;
        let d = c.rows();
        let det = c.determinant()?;
        if !(det > SINGULAR_TOL * c.trace().powi(d as i32)) {
            return Err(AnalysisError::NotHypoelliptic { det });
        }
        let precision = c.inverse()?;
        Ok(Self { model, prop, precision, log_det: det.ln() })
    }

    fn quadratic(&self, from: &[f64], to: &[f64], flowed: &mut [f64], r: &mut [f64]) -> Result<f64, AnalysisError> {
        let d = self.model.dim();
        if from.len() != d || to.len() != d {
            return Err(AnalysisError::Argument(format!("data points must have {d} entries")));
        }
        self.model.flow(from, self.prop.delta, flowed);
        self.prop.transition.mul_vec_into(flowed, r);
        for (ri, ti) in r.iter_mut().zip(to) {
            *ri = ti - *ri;
        }
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += r[i] * self.precision[(i, j)] * r[j];
            }
        }
        Ok(q)
    }

    fn evaluate<'b>(&self, pairs: impl Iterator<Item = (&'b [f64], &'b [f64])>) -> Result<NllValue, AnalysisError> {
        let d = self.model.dim();
        let (mut flowed, mut r) = (vec![0.0; d], vec![0.0; d]);
        let mut quadratic = 0.0;
        let mut n = 0;
        for (from, to) in pairs {
            quadratic += self.quadratic(from, to, &mut flowed, &mut r)?;
            n += 1;
        }
        Ok(NllValue { transitions: n, log_det: self.log_det, quadratic, nll: quadratic + n as f64 * self.log_det })
    }
}

/// `Σ rᵢᵀC(Δ)⁻¹rᵢ + n·log det C(Δ)` over consecutive observations, with
/// `rᵢ = xᵢ − e^{AΔ}f(xᵢ₋₁;Δ)`.
pub fn lt_nll(model: &ModelSpec, delta: f64, data: &[Vec<f64>]) -> Result<NllValue, AnalysisError> {
    if data.len() < 2 {
        return Err(AnalysisError::Argument(format!("need at least 2 observations, got {}", data.len())));
    }
    Prepared::new(model, delta)?.evaluate(data.windows(2).map(|w| (w[0].as_slice(), w[1].as_slice())))
}

/// Same criterion over an arbitrary collection of `(from, to)` pairs.
pub fn lt_nll_transitions(
    model: &ModelSpec,
    delta: f64,
    transitions: &[(Vec<f64>, Vec<f64>)],
) -> Result<NllValue, AnalysisError> {
    if transitions.is_empty() {
        return Err(AnalysisError::Argument("no transitions given".into()));
    }
    Prepared::new(model, delta)?.evaluate(transitions.iter().map(|(a, b)| (a.as_slice(), b.as_slice())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::{simulate_path, Method};
    use crate::models::{FhnParams, ToyParams};
    use crate::noise::StreamKey;
    use proptest::prelude::*;

    fn fhn(eps: f64, sigma1: f64) -> ModelSpec {
        ModelSpec::fhn(FhnParams { eps, gamma: 1.5, beta: 0.1, sigma1, sigma2: 0.2 }).unwrap()
    }

    fn path(model: &ModelSpec, seed: u64, steps: usize) -> Vec<Vec<f64>> {
        let tr = simulate_path(model, Method::LieTrotter, 0.01, steps, &[0.1, 0.1], StreamKey::new(seed, 0)).unwrap();
        (0..tr.len()).map(|i| tr.state(i).to_vec()).collect()
    }

    /// −2 log N(y; m, C) for a 2-vector, written out by hand.
    fn gaussian_m2logpdf(y: &[f64], m: &[f64], c: &Matrix) -> f64 {
        let (a, b, d) = (c[(0, 0)], c[(0, 1)], c[(1, 1)]);
        let det = a * d - b * b;
        let (r0, r1) = (y[0] - m[0], y[1] - m[1]);
        let q = (d * r0 * r0 - 2.0 * b * r0 * r1 + a * r1 * r1) / det;
        2.0 * (2.0 * std::f64::consts::PI).ln() + det.ln() + q
    }

    #[test]
    fn skeleton_data_gives_log_det_only() {
        let model = fhn(0.05, 0.1);
        let prop = model.propagator(0.01).unwrap();
        let mut data = vec![vec![0.3, -0.2]];
        for _ in 0..20 {
            let mut f = vec![0.0; 2];
            model.flow(data.last().unwrap(), 0.01, &mut f);
            data.push(prop.transition.mul_vec(&f));
        }
        let v = lt_nll(&model, 0.01, &data).unwrap();
        let expected = 20.0 * prop.covariance.determinant().unwrap().ln();
        assert!(v.quadratic.abs() < 1e-9);
        assert!((v.nll - expected).abs() < 1e-9 * expected.abs());
    }

    #[test]
    fn matches_gaussian_logpdf() {
        let model = fhn(0.05, 0.1);
        let data = path(&model, 3, 500);
        let prop = model.propagator(0.01).unwrap();
        let oracle: f64 = data
            .windows(2)
            .map(|w| {
                let mut f = vec![0.0; 2];
                model.flow(&w[0], 0.01, &mut f);
                gaussian_m2logpdf(&w[1], &prop.transition.mul_vec(&f), &prop.covariance)
            })
            .sum::<f64>()
            - 500.0 * 2.0 * (2.0 * std::f64::consts::PI).ln();
        let v = lt_nll(&model, 0.01, &data).unwrap();
        assert!((v.nll - oracle).abs() <= 1e-10 * oracle.abs().max(1.0), "{} vs {oracle}", v.nll);
    }

    #[test]
    fn additive_across_junction() {
        let model = fhn(0.05, 0.1);
        let data = path(&model, 4, 200);
        let (left, right) = data.split_at(120);
        let whole = lt_nll(&model, 0.01, &data).unwrap().nll;
        let junction = lt_nll(&model, 0.01, &[left[119].clone(), right[0].clone()]).unwrap().nll;
        let parts = lt_nll(&model, 0.01, left).unwrap().nll + lt_nll(&model, 0.01, right).unwrap().nll;
        assert!((whole - junction - parts).abs() < 1e-9 * whole.abs());
    }

    #[test]
    fn true_parameters_preferred() {
        let truth = fhn(0.05, 0.1);
        let perturbed = fhn(0.075, 0.1);
        let wins = (0..10)
            .filter(|&seed| {
                let data = path(&truth, 100 + seed, 10_000);
                lt_nll(&truth, 0.01, &data).unwrap().nll < lt_nll(&perturbed, 0.01, &data).unwrap().nll
            })
            .count();
        assert!(wins > 5, "true parameters won {wins}/10");
    }

    #[test]
    fn singular_covariance_is_rejected() {
        use crate::models::CustomModel;
        let model =
            ModelSpec::custom(CustomModel::linear("degenerate", Matrix::identity(2).scale(-1.0), Matrix::zeros(2, 2)))
                .unwrap();
        let err = lt_nll(&model, 0.1, &[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap_err();
        assert!(matches!(err, AnalysisError::NotHypoelliptic { .. }));
        let toy = ModelSpec::toy(ToyParams { sigma: 0.5 }).unwrap();
        assert!(lt_nll(&toy, 0.1, &[vec![0.0]]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn invariant_under_reordering(seed in 0u64..500, shift in 1usize..40) {
            let model = fhn(0.05, 0.1);
            let data = path(&model, seed, 40);
            let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = data.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
            let a = lt_nll_transitions(&model, 0.01, &pairs).unwrap().nll;
            pairs.rotate_left(shift);
            pairs.reverse();
            let b = lt_nll_transitions(&model, 0.01, &pairs).unwrap().nll;
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            prop_assert_eq!(a, lt_nll(&model, 0.01, &data).unwrap().nll);
        }
    }
}
