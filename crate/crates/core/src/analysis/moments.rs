use serde::Serialize;

use super::AnalysisError;
use crate::integrators::Ensemble;

/// Per-time Monte Carlo estimate of `E‖X(t)‖²`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSeries {
    pub times: Vec<f64>,
    pub mean_sq: Vec<f64>,
    pub std_err: Vec<f64>,
    pub paths_used: usize,
    /// Exploded paths, left out of every time point.
    pub excluded: usize,
}

pub fn moment_series(ensemble: &Ensemble) -> Result<MomentSeries, AnalysisError> {
    let used: Vec<_> = ensemble.paths.iter().filter(|p| !p.is_exploded()).collect();
    let excluded = ensemble.paths.len() - used.len();
    if used.len() < 2 {
        return Err(AnalysisError::Argument(format!(
            "need at least 2 non-exploded paths, got {} ({excluded} exploded)",
            used.len()
        )));
    }
    let steps = used[0].len();
    if used.iter().any(|p| p.len() != steps) {
        return Err(AnalysisError::Argument("paths have different lengths".into()));
    }
    let m = used.len() as f64;
    let mut mean_sq = Vec::with_capacity(steps);
    let mut std_err = Vec::with_capacity(steps);
    for i in 0..steps {
        let sq = || used.iter().map(|p| p.state(i).iter().map(|v| v * v).sum::<f64>());
        let mean = sq().sum::<f64>() / m;
        let var = sq().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0);
        mean_sq.push(mean);
        std_err.push((var / m).sqrt());
    }
    Ok(MomentSeries { times: used[0].times(), mean_sq, std_err, paths_used: used.len(), excluded })
}
