use rustfft::{num_complex::Complex, FftPlanner};
use serde::Serialize;

use super::AnalysisError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralDensity {
    /// Cycles per time unit, `k/(nΔ)` for `k = 1..=n/2`.
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
    /// Half-width of the modified Daniell window, in frequency bins
    /// (0 means unsmoothed).
    pub half_width: usize,
    pub delta: f64,
    pub len: usize,
}

impl SpectralDensity {
    /// Frequency of the largest ordinate. Smoothing a line spectrum leaves a
    /// flat top, so the centre of the run of bins within a relative `1e-9`
    /// of the maximum is reported.
    pub fn peak_frequency(&self) -> f64 {
        let (k, max) =
            self.power
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &p)| if p > best.1 { (k, p) } else { best });
        let near = |i: usize| self.power[i] >= max * (1.0 - 1e-9);
        let mut lo = k;
        while lo > 0 && near(lo - 1) {
            lo -= 1;
        }
        let mut hi = k;
        while hi + 1 < self.power.len() && near(hi + 1) {
            hi += 1;
        }
        self.frequencies[(lo + hi) / 2]
    }

    /// Integral of the two-sided density over frequency; equals the sample
    /// variance for the raw periodogram.
    pub fn integrated_power(&self) -> f64 {
        let n = self.len;
        let total: f64 = self
            .power
            .iter()
            .enumerate()
            .map(|(i, p)| if n.is_multiple_of(2) && i + 1 == n / 2 { *p } else { 2.0 * p })
            .sum();
        total / (n as f64 * self.delta)
    }
}

/// Full-length `Δ|X_k|²/n` of the mean-removed series, `k = 0..n`.
fn two_sided_ordinates(series: &[f64], delta: f64) -> Vec<f64> {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = series.iter().map(|x| Complex::new(x - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.iter().map(|c| delta * c.norm_sqr() / n as f64).collect()
}

fn validate(series: &[f64], delta: f64) -> Result<(), AnalysisError> {
    if series.len() < 16 {
        return Err(AnalysisError::Argument(format!("series needs at least 16 points, got {}", series.len())));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(AnalysisError::Argument(format!("sampling step must be > 0, got {delta}")));
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(AnalysisError::Argument("series contains non-finite values".into()));
    }
    Ok(())
}

fn one_sided(ordinates: &[f64], delta: f64, half_width: usize) -> SpectralDensity {
    let n = ordinates.len();
    let frequencies = (1..=n / 2).map(|k| k as f64 / (n as f64 * delta)).collect();
    SpectralDensity { frequencies, power: ordinates[1..=n / 2].to_vec(), half_width, delta, len: n }
}

pub fn raw_periodogram(series: &[f64], delta: f64) -> Result<SpectralDensity, AnalysisError> {
    validate(series, delta)?;
    Ok(one_sided(&two_sided_ordinates(series, delta), delta, 0))
}

/// Modified Daniell moving average with wrap-around indexing: weights
/// `1/(2m)` inside and `1/(4m)` at the two ends.
pub fn smooth_modified_daniell(values: &[f64], half_width: usize) -> Vec<f64> {
    smooth_range(values, half_width, values.len())
}

/// Smoothed values at indices `0..count` only. Summed directly rather than
/// by prefix differences, which lose the small tail ordinates.
fn smooth_range(values: &[f64], half_width: usize, count: usize) -> Vec<f64> {
    let n = values.len() as isize;
    if half_width == 0 || n == 0 {
        return values[..count].to_vec();
    }
    let m = half_width as isize;
    let at = |i: isize| values[i.rem_euclid(n) as usize];
    (0..count as isize)
        .map(|k| {
            let inner: f64 = (k - m + 1..k + m).map(at).sum();
            (inner + 0.5 * (at(k - m) + at(k + m))) / (2.0 * m as f64)
        })
        .collect()
}

/// Smoothed periodogram. The Daniell window spans `span_fraction·T` bins
/// (`T = nΔ`), i.e. a half-width of `⌊span_fraction·T/2⌋` bins.
pub fn periodogram(series: &[f64], delta: f64, span_fraction: f64) -> Result<SpectralDensity, AnalysisError> {
    validate(series, delta)?;
    if !(span_fraction > 0.0 && span_fraction < 1.0) {
        return Err(AnalysisError::Argument(format!("span fraction must lie in (0, 1), got {span_fraction}")));
    }
    let n = series.len();
    let span_bins = (span_fraction * n as f64 * delta).round() as usize;
    let half_width = (span_bins / 2).min(n / 2);
    let mut ordinates = two_sided_ordinates(series, delta);
    // The zero-frequency ordinate is an artefact of mean removal.
    ordinates[0] = 0.5 * (ordinates[1] + ordinates[n - 1]);
    let smoothed = smooth_range(&ordinates, half_width, n / 2 + 1);
    let frequencies = (1..=n / 2).map(|k| k as f64 / (n as f64 * delta)).collect();
    Ok(SpectralDensity { frequencies, power: smoothed[1..].to_vec(), half_width, delta, len: n })
}
