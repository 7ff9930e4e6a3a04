use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::AnalysisError;
use crate::integrators::{Method, Stepper, DEFAULT_EXPLOSION_BOUND};
use crate::models::ModelSpec;
use crate::noise::{derive_stream, ConvolutionKernel, FineBrownianPath, StreamKey};

#[derive(Debug, Clone)]
pub struct RmseStudyConfig {
    pub methods: Vec<Method>,
    pub deltas: Vec<f64>,
    pub delta_ref: f64,
    pub t_end: f64,
    pub x0: Vec<f64>,
    pub paths: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRecord {
    pub method: Method,
    pub delta: f64,
    pub rmse: f64,
    pub paths: usize,
    /// Paths left out of the average because a trajectory blew up.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub records: Vec<ConvergenceRecord>,
    /// Methods with fewer than three usable step sizes are absent.
    pub fitted_orders: BTreeMap<Method, f64>,
}

impl ConvergenceTable {
    pub fn new(records: Vec<ConvergenceRecord>) -> Self {
        let mut fitted_orders = BTreeMap::new();
        let mut methods: Vec<Method> = records.iter().map(|r| r.method).collect();
        methods.sort();
        methods.dedup();
        for m in methods {
            let subset: Vec<ConvergenceRecord> = records.iter().filter(|r| r.method == m).cloned().collect();
            if let Ok(fit) = fit_order(&subset) {
                fitted_orders.extend(fit);
            }
        }
        Self { records, fitted_orders }
    }

    pub fn rmse(&self, method: Method, delta: f64) -> Option<f64> {
        self.records.iter().find(|r| r.method == method && (r.delta - delta).abs() <= 1e-12 * delta).map(|r| r.rmse)
    }
}

/// Least-squares slope of `log2 RMSE` against `log2 Δ`, per method, using
/// only records without excluded paths.
pub fn fit_order(records: &[ConvergenceRecord]) -> Result<BTreeMap<Method, f64>, AnalysisError> {
    let mut by_method: BTreeMap<Method, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        let entry = by_method.entry(r.method).or_default();
        if r.excluded == 0 && r.rmse > 0.0 && r.rmse.is_finite() {
            entry.push((r.delta.log2(), r.rmse.log2()));
        }
    }
    let mut out = BTreeMap::new();
    for (method, points) in by_method {
        if points.len() < 3 {
            return Err(AnalysisError::Argument(format!(
                "order fit for {method} needs at least 3 usable step sizes, got {}",
                points.len()
            )));
        }
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if sxx == 0.0 {
            return Err(AnalysisError::Argument(format!("order fit for {method} needs distinct step sizes")));
        }
        out.insert(method, sxy / sxx);
    }
    Ok(out)
}

/// Integer `k` with `value = k·unit`, if there is one.
fn exact_multiple(value: f64, unit: f64) -> Option<usize> {
    let k = value / unit;
    let r = k.round();
    (r >= 1.0 && (k - r).abs() <= 1e-9 * r).then_some(r as usize)
}

/// Pathwise RMSE at time `t_end` against a tamed-Euler reference on the
/// fine grid `delta_ref`.
///
/// Each path draws one set of fine Brownian increments. The reference uses
/// them directly; Euler-type methods use their sums over a coarse step; the
/// splitting schemes use the left-point convolution of the increments with
/// `e^{A(Δ−s)}Σ`, shared between Lie-Trotter and Strang.
pub fn rmse_study(model: &ModelSpec, config: &RmseStudyConfig) -> Result<ConvergenceTable, AnalysisError> {
    let RmseStudyConfig { methods, deltas, delta_ref, t_end, x0, paths, master_seed } = config;
    let (delta_ref, t_end, master_seed) = (*delta_ref, *t_end, *master_seed);
    if methods.is_empty() || deltas.is_empty() {
        return Err(AnalysisError::Argument("need at least one method and one step size".into()));
    }
    if *paths == 0 {
        return Err(AnalysisError::Argument("path count must be at least 1".into()));
    }
    if x0.len() != model.dim() {
        return Err(AnalysisError::Argument(format!(
            "initial state has {} entries, model dimension is {}",
            x0.len(),
            model.dim()
        )));
    }
    if !(delta_ref > 0.0) {
        return Err(AnalysisError::Argument(format!("reference step must be > 0, got {delta_ref}")));
    }
    let n_fine = exact_multiple(t_end, delta_ref).ok_or_else(|| {
        AnalysisError::Argument(format!("horizon {t_end} is not a multiple of the reference step {delta_ref}"))
    })?;
    let mut ratios = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let r = exact_multiple(delta, delta_ref).filter(|r| r.is_power_of_two()).ok_or_else(|| {
            AnalysisError::Argument(format!(
                "step {delta} is not a power-of-two multiple of the reference step {delta_ref}"
            ))
        })?;
        if n_fine % r != 0 {
            return Err(AnalysisError::Argument(format!("horizon {t_end} is not a multiple of step {delta}")));
        }
        ratios.push(r);
    }

    // Step-size dependent pieces are shared by all paths.
    let kernels = deltas
        .iter()
        .map(|&delta| {
            if methods.iter().any(|m| m.is_splitting()) {
                ConvolutionKernel::new(model.drift_matrix(), model.diffusion_matrix(), delta, delta_ref).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let reference = Stepper::new(model, Method::TamedEuler, delta_ref)?;
    let steppers = deltas
        .iter()
        .map(|&delta| methods.iter().map(|&m| Stepper::new(model, m, delta)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;

    let d = model.dim();
    let m = model.noise_dim();
    let blown = |x: &[f64]| {
        x.iter().any(|v| !v.is_finite()) || x.iter().map(|v| v * v).sum::<f64>().sqrt() > DEFAULT_EXPLOSION_BOUND
    };

    // Squared errors per path, indexed [delta][method]; None marks an excluded path.
    let per_path = (0..*paths as u64)
        .into_par_iter()
        .map(|l| -> Result<Vec<Vec<Option<f64>>>, AnalysisError> {
            let mut stream = derive_stream(StreamKey::new(master_seed, l));
            let fine = FineBrownianPath::generate(&mut stream, m, delta_ref, n_fine)?;

            let mut stepper = reference.clone();
            let mut x = x0.clone();
            let mut next = vec![0.0; d];
            let mut ref_ok = true;
            for j in 0..n_fine {
                stepper.step_with_noise(&x, fine.increment(j), &mut next);
                std::mem::swap(&mut x, &mut next);
                if blown(&x) {
                    ref_ok = false;
                    break;
                }
            }
            let x_ref = x;

            let mut errors = Vec::with_capacity(deltas.len());
            for (k, &r) in ratios.iter().enumerate() {
                let n = n_fine / r;
                let mut local: Vec<Stepper> = steppers[k].clone();
                let mut states: Vec<Vec<f64>> = vec![x0.clone(); methods.len()];
                let mut alive = vec![ref_ok; methods.len()];
                let mut xi = vec![0.0; d];
                let mut dw = vec![0.0; m];
                for i in 0..n {
                    if let Some(kernel) = &kernels[k] {
                        kernel.apply(&fine, i * r, &mut xi);
                    }
                    fine.aggregate(i * r, r, &mut dw);
                    for (q, method) in methods.iter().enumerate() {
                        if !alive[q] {
                            continue;
                        }
                        let noise = if method.is_splitting() { &xi } else { &dw };
                        local[q].step_with_noise(&states[q], noise, &mut next);
                        if blown(&next) {
                            alive[q] = false;
                        } else {
                            states[q].copy_from_slice(&next);
                        }
                    }
                }
                errors.push(
                    (0..methods.len())
                        .map(|q| alive[q].then(|| states[q].iter().zip(&x_ref).map(|(a, b)| (a - b).powi(2)).sum()))
                        .collect(),
                );
            }
            Ok(errors)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut records = Vec::with_capacity(deltas.len() * methods.len());
    for (q, &method) in methods.iter().enumerate() {
        for (k, &delta) in deltas.iter().enumerate() {
            let (mut sum, mut used) = (0.0, 0usize);
            for path in &per_path {
                if let Some(e) = path[k][q] {
                    sum += e;
                    used += 1;
                }
            }
            let rmse = if used > 0 { (sum / used as f64).sqrt() } else { f64::NAN };
            records.push(ConvergenceRecord { method, delta, rmse, paths: *paths, excluded: paths - used });
        }
    }
    Ok(ConvergenceTable::new(records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FhnParams, ToyParams};

    fn record(method: Method, delta: f64, rmse: f64) -> ConvergenceRecord {
        ConvergenceRecord { method, delta, rmse, paths: 1, excluded: 0 }
    }

    #[test]
    fn slope_of_exact_power_laws() {
        let deltas: Vec<f64> = (6..=10).map(|k| 2f64.powi(-k)).collect();
        let mut recs: Vec<ConvergenceRecord> = deltas.iter().map(|&d| record(Method::Strang, d, 0.7 * d)).collect();
        recs.extend(deltas.iter().map(|&d| record(Method::TamedEuler, d, 3.0 * d.sqrt())));
        let fit = fit_order(&recs).unwrap();
        assert!((fit[&Method::Strang] - 1.0).abs() < 1e-12);
        assert!((fit[&Method::TamedEuler] - 0.5).abs() < 1e-12);
        assert!(fit_order(&recs[..2]).is_err());
    }

    #[test]
    fn slope_ignores_records_with_exclusions() {
        let mut recs: Vec<ConvergenceRecord> =
            (6..=9).map(|k| record(Method::EulerMaruyama, 2f64.powi(-k), 2f64.powi(-k))).collect();
        recs[0].excluded = 3;
        recs[0].rmse = 50.0;
        assert!((fit_order(&recs).unwrap()[&Method::EulerMaruyama] - 1.0).abs() < 1e-12);
        recs[1].excluded = 1;
        assert!(fit_order(&recs).is_err());
    }

    #[test]
    fn printed_strang_column_has_unit_slope() {
        let values = [0.01348, 0.00689, 0.00331, 0.00165, 0.00082, 0.0004, 0.00021];
        let recs: Vec<ConvergenceRecord> =
            values.iter().enumerate().map(|(i, &v)| record(Method::Strang, 2f64.powi(-6 - i as i32), v)).collect();
        let slope = fit_order(&recs).unwrap()[&Method::Strang];
        assert!((slope - 1.0).abs() < 0.05, "{slope}");
    }

    fn unit_fhn() -> ModelSpec {
        ModelSpec::fhn(FhnParams { eps: 1.0, gamma: 1.0, beta: 1.0, sigma1: 1.0, sigma2: 1.0 }).unwrap()
    }

    #[test]
    fn self_comparison_at_reference_step_is_zero() {
        let model = unit_fhn();
        let config = RmseStudyConfig {
            methods: vec![Method::TamedEuler],
            deltas: vec![2f64.powi(-8)],
            delta_ref: 2f64.powi(-8),
            t_end: 1.0,
            x0: vec![0.0, 0.0],
            paths: 8,
            master_seed: 1,
        };
        let table = rmse_study(&model, &config).unwrap();
        assert_eq!(table.records[0].rmse, 0.0);
    }

    #[test]
    fn rejects_non_dyadic_grids() {
        let model = unit_fhn();
        let mut config = RmseStudyConfig {
            methods: vec![Method::Strang],
            deltas: vec![0.03],
            delta_ref: 2f64.powi(-10),
            t_end: 1.0,
            x0: vec![0.0, 0.0],
            paths: 2,
            master_seed: 1,
        };
        assert!(rmse_study(&model, &config).is_err());
        config.deltas = vec![3.0 * 2f64.powi(-10)];
        assert!(rmse_study(&model, &config).is_err());
        config.deltas = vec![2f64.powi(-6)];
        config.t_end = 1.0 + 2f64.powi(-8);
        assert!(rmse_study(&model, &config).is_err());
    }

    #[test]
    fn exploding_paths_are_excluded_and_counted() {
        let model = ModelSpec::toy(ToyParams { sigma: 0.5 }).unwrap();
        let config = RmseStudyConfig {
            methods: vec![Method::EulerMaruyama, Method::LieTrotter],
            deltas: vec![2f64.powi(-4), 2f64.powi(-5)],
            delta_ref: 2f64.powi(-9),
            t_end: 1.0,
            x0: vec![40.0],
            paths: 4,
            master_seed: 3,
        };
        let table = rmse_study(&model, &config).unwrap();
        let em = table.records.iter().find(|r| r.method == Method::EulerMaruyama).unwrap();
        assert_eq!(em.excluded, 4);
        assert!(em.rmse.is_nan());
        let lt = table.records.iter().find(|r| r.method == Method::LieTrotter).unwrap();
        assert_eq!(lt.excluded, 0);
        assert!(lt.rmse.is_finite());
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let model = unit_fhn();
        let config = RmseStudyConfig {
            methods: Method::ALL.to_vec(),
            deltas: vec![2f64.powi(-4), 2f64.powi(-5), 2f64.powi(-6)],
            delta_ref: 2f64.powi(-8),
            t_end: 1.0,
            x0: vec![0.0, 0.0],
            paths: 17,
            master_seed: 9,
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| rmse_study(&model, &config).unwrap())
        };
        assert_eq!(run(1), run(3));
    }
}
