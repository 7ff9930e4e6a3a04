use serde::Serialize;

use super::AnalysisError;

/// Number of output points of [`kde`].
pub const KDE_GRID_POINTS: usize = 512;

/// Samples are linearly binned onto this many points before the kernel sum.
const BINNING_POINTS: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityGrid {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    pub samples: usize,
}

impl DensityGrid {
    /// Trapezoid rule over the output grid.
    pub fn integral(&self) -> f64 {
        self.x.windows(2).zip(self.density.windows(2)).map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1])).sum()
    }
}

/// Linear-interpolation quantile of sorted data (the usual "type 7").
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Normal-reference bandwidth `0.9·min(sd, IQR/1.34)·n^{-1/5}`. Falls back to
/// whichever spread measure is nonzero.
pub fn nrd0_bandwidth(samples: &[f64]) -> Result<f64, AnalysisError> {
    let n = samples.len();
    if n < 2 {
        return Err(AnalysisError::Argument(format!("need at least 2 samples, got {n}")));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(AnalysisError::Argument("samples contain non-finite values".into()));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => return Err(AnalysisError::Argument("samples have zero spread".into())),
    };
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

/// Gaussian kernel density estimate on 512 points spanning
/// `[min − 3h, max + 3h]`.
pub fn kde(samples: &[f64], bandwidth: Option<f64>) -> Result<DensityGrid, AnalysisError> {
    let default_h = nrd0_bandwidth(samples)?;
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(AnalysisError::Argument(format!("bandwidth must be > 0, got {h}"))),
        None => default_h,
    };
    let n = samples.len();
    let (min, max) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));

    // Linear binning onto a fine grid over the data range.
    let bin_step = (max - min) / (BINNING_POINTS - 1) as f64;
    let mut weights = vec![0.0; BINNING_POINTS];
    for &x in samples {
        let pos = ((x - min) / bin_step).clamp(0.0, (BINNING_POINTS - 1) as f64);
        let lo = (pos.floor() as usize).min(BINNING_POINTS - 2);
        let frac = pos - lo as f64;
        weights[lo] += 1.0 - frac;
        weights[lo + 1] += frac;
    }
    let centres: Vec<(f64, f64)> =
        weights.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(j, w)| (min + j as f64 * bin_step, *w)).collect();

    let lo = min - 3.0 * h;
    let step = (max - min + 6.0 * h) / (KDE_GRID_POINTS - 1) as f64;
    let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let x: Vec<f64> = (0..KDE_GRID_POINTS).map(|i| lo + i as f64 * step).collect();
    let density = x
        .iter()
        .map(|&g| {
            let s: f64 = centres
                .iter()
                .map(|&(c, w)| {
                    let z = (g - c) / h;
                    if z.abs() > 40.0 {
                        0.0
                    } else {
                        w * (-0.5 * z * z).exp()
                    }
                })
                .sum();
            s * norm
        })
        .collect();
    Ok(DensityGrid { x, density, bandwidth: h, samples: n })
}
