//! Reproducible random streams and Brownian-path coupling.
//!
//! Every simulated path owns a stream derived from `(master_seed,
//! path_index)` alone, so results never depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix, PsdFactor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("window [{start}, {end}] is not aligned to the fine grid of step {step}")]
    Misaligned { start: f64, end: f64, step: f64 },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub struct StreamKey {
    pub master_seed: u64,
    pub path_index: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        Self { master_seed, path_index }
    }
}

/// A single-owner pseudo-random stream.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_stream(key: StreamKey) -> NoiseStream {
    let mut state = key.master_seed;
    let mixed = splitmix64(&mut state);
    let mut state = mixed ^ key.path_index.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    NoiseStream { rng: ChaCha8Rng::from_seed(seed) }
}

impl NoiseStream {
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.rng.sample(StandardNormal);
        }
    }

    /// Uniform on `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.rng.random::<f64>()
    }
}

/// `out = L z` with `z` standard normal; `scratch` must have `L.cols()` entries.
pub fn sample_xi_into(factor: &PsdFactor, stream: &mut NoiseStream, scratch: &mut [f64], out: &mut [f64]) {
    stream.fill_standard_normal(scratch);
    factor.factor.mul_vec_into(scratch, out);
}

pub fn sample_xi(factor: &PsdFactor, stream: &mut NoiseStream) -> Vec<f64> {
    let mut z = vec![0.0; factor.factor.cols()];
    let mut out = vec![0.0; factor.factor.rows()];
    sample_xi_into(factor, stream, &mut z, &mut out);
    out
}

/// Brownian increments on a fine grid, stored row-major (`len × dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct FineBrownianPath {
    delta_fine: f64,
    dim: usize,
    increments: Vec<f64>,
}

impl FineBrownianPath {
    pub fn generate(stream: &mut NoiseStream, dim: usize, delta_fine: f64, len: usize) -> Result<Self, NoiseError> {
        if !(delta_fine > 0.0) || !delta_fine.is_finite() {
            return Err(NoiseError::Argument(format!("fine step must be > 0, got {delta_fine}")));
        }
        let scale = delta_fine.sqrt();
        let mut increments = vec![0.0; len * dim];
        stream.fill_standard_normal(&mut increments);
        for v in &mut increments {
            *v *= scale;
        }
        Ok(Self { delta_fine, dim, increments })
    }

    pub fn from_increments(delta_fine: f64, dim: usize, increments: Vec<f64>) -> Result<Self, NoiseError> {
        if dim == 0 || !increments.len().is_multiple_of(dim) {
            return Err(NoiseError::Argument("increment count is not a multiple of the dimension".into()));
        }
        if !(delta_fine > 0.0) {
            return Err(NoiseError::Argument(format!("fine step must be > 0, got {delta_fine}")));
        }
        Ok(Self { delta_fine, dim, increments })
    }

    pub fn delta_fine(&self) -> f64 {
        self.delta_fine
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of sub-steps.
    pub fn len(&self) -> usize {
        self.increments.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.len() as f64 * self.delta_fine
    }

    pub fn increment(&self, j: usize) -> &[f64] {
        &self.increments[j * self.dim..(j + 1) * self.dim]
    }

    /// Sum of `count` increments starting at sub-step `start`.
    pub fn aggregate(&self, start: usize, count: usize, out: &mut [f64]) {
        out.fill(0.0);
        for j in start..start + count {
            for (o, w) in out.iter_mut().zip(self.increment(j)) {
                *o += w;
            }
        }
    }

    /// Index range of the sub-steps covering `[start, end]`.
    fn window_indices(&self, start: f64, end: f64) -> Result<(usize, usize), NoiseError> {
        let misaligned = || NoiseError::Misaligned { start, end, step: self.delta_fine };
        let to_index = |t: f64| -> Option<usize> {
            let k = t / self.delta_fine;
            let r = k.round();
            ((k - r).abs() <= 1e-9 * r.max(1.0) && r >= 0.0).then_some(r as usize)
        };
        let (i0, i1) = (to_index(start).ok_or_else(misaligned)?, to_index(end).ok_or_else(misaligned)?);
        if i1 <= i0 || i1 > self.len() {
            return Err(misaligned());
        }
        Ok((i0, i1))
    }
}

/// Precomputed weights `e^{A(Δ−s_j)}Σ` for the left-point approximation of
/// the stochastic convolution over one coarse step.
#[derive(Debug, Clone)]
pub struct ConvolutionKernel {
    weights: Vec<Matrix>,
    dim: usize,
}

impl ConvolutionKernel {
    pub fn new(a: &Matrix, sigma: &Matrix, delta: f64, delta_fine: f64) -> Result<Self, NoiseError> {
        let ratio = delta / delta_fine;
        let r = ratio.round();
        if !(r >= 1.0) || (ratio - r).abs() > 1e-9 * r {
            return Err(NoiseError::Argument(format!(
                "coarse step {delta} is not a multiple of the fine step {delta_fine}"
            )));
        }
        if sigma.rows() != a.rows() {
            return Err(LinalgError::DimensionMismatch("diffusion rows vs drift size".into()).into());
        }
        let weights = (0..r as usize)
            .map(|j| Ok(linalg::mat_exp(a, delta - j as f64 * delta_fine)?.matmul(sigma)))
            .collect::<Result<Vec<_>, NoiseError>>()?;
        Ok(Self { weights, dim: a.rows() })
    }

    /// Number of fine sub-steps per coarse step.
    pub fn substeps(&self) -> usize {
        self.weights.len()
    }

    /// Adds up the weighted increments `first .. first + substeps()`.
    pub fn apply(&self, fine: &FineBrownianPath, first: usize, out: &mut [f64]) {
        out.fill(0.0);
        for (j, w) in self.weights.iter().enumerate() {
            let dw = fine.increment(first + j);
            for i in 0..self.dim {
                let mut acc = 0.0;
                for (k, v) in dw.iter().enumerate() {
                    acc += w[(i, k)] * v;
                }
                out[i] += acc;
            }
        }
    }
}

/// Left-point approximation of `∫ e^{A(t_end−s)} Σ dW(s)` over the window.
pub fn xi_from_fine_path(
    a: &Matrix,
    sigma: &Matrix,
    fine: &FineBrownianPath,
    window: (f64, f64),
) -> Result<Vec<f64>, NoiseError> {
    if sigma.cols() != fine.dim() {
        return Err(LinalgError::DimensionMismatch("diffusion columns vs Brownian dimension".into()).into());
    }
    let (i0, i1) = fine.window_indices(window.0, window.1)?;
    let kernel = ConvolutionKernel::new(a, sigma, (i1 - i0) as f64 * fine.delta_fine(), fine.delta_fine())?;
    let mut out = vec![0.0; a.rows()];
    kernel.apply(fine, i0, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fhn_cov, FhnParams, ModelSpec};

    fn sample_cov(samples: &[Vec<f64>]) -> (Matrix, Matrix) {
        // Returns (covariance about zero mean, standard errors of each entry).
        let d = samples[0].len();
        let n = samples.len() as f64;
        let mut mean = Matrix::zeros(d, d);
        let mut sq = Matrix::zeros(d, d);
        for s in samples {
            for i in 0..d {
                for j in 0..d {
                    let v = s[i] * s[j];
                    mean[(i, j)] += v;
                    sq[(i, j)] += v * v;
                }
            }
        }
        let mut se = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let m = mean[(i, j)] / n;
                mean[(i, j)] = m;
                se[(i, j)] = ((sq[(i, j)] / n - m * m) / n).sqrt();
            }
        }
        (mean, se)
    }

    #[test]
    fn same_key_same_sequence() {
        let key = StreamKey::new(42, 3);
        let mut a = derive_stream(key);
        let mut b = derive_stream(key);
        for _ in 0..1000 {
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
        let mut c = derive_stream(StreamKey::new(43, 3));
        assert_ne!(derive_stream(key).standard_normal(), c.standard_normal());
    }

    #[test]
    fn neighbouring_streams_are_uncorrelated() {
        let mut a = derive_stream(StreamKey::new(42, 0));
        let mut b = derive_stream(StreamKey::new(42, 1));
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|_| a.standard_normal()).collect();
        let ys: Vec<f64> = (0..n).map(|_| b.standard_normal()).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        assert!((cov / (vx * vy).sqrt()).abs() < 0.05);
    }

    #[test]
    fn normal_moments() {
        let mut s = derive_stream(StreamKey::new(1, 0));
        let n = 1_000_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let z = s.standard_normal();
            sum += z;
            sum2 += z * z;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.004, "{mean}");
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn xi_trivial_factors() {
        let mut s = derive_stream(StreamKey::new(0, 0));
        let zero = linalg::psd_factor(&Matrix::zeros(2, 2)).unwrap();
        assert_eq!(sample_xi(&zero, &mut s), vec![0.0, 0.0]);
        let id = linalg::psd_factor(&Matrix::identity(2)).unwrap();
        let mut t = derive_stream(StreamKey::new(0, 0));
        let direct = [t.standard_normal(), t.standard_normal()];
        let mut u = derive_stream(StreamKey::new(0, 0));
        assert_eq!(sample_xi(&id, &mut u), direct.to_vec());
    }

    #[test]
    fn xi_sample_covariance() {
        let p = FhnParams { eps: 0.05, gamma: 1.5, beta: 0.1, sigma1: 0.1, sigma2: 0.2 };
        let model = ModelSpec::fhn(p).unwrap();
        let prop = model.propagator(0.01).unwrap();
        let mut s = derive_stream(StreamKey::new(9, 0));
        let draws: Vec<Vec<f64>> = (0..100_000).map(|_| sample_xi(&prop.factor, &mut s)).collect();
        let (cov, se) = sample_cov(&draws);
        for i in 0..2 {
            for j in 0..2 {
                let z = (cov[(i, j)] - prop.covariance[(i, j)]).abs() / se[(i, j)];
                assert!(z < 3.0, "entry ({i},{j}) z={z}");
            }
        }
    }

    #[test]
    fn convolution_trivial_cases() {
        let fine = FineBrownianPath::from_increments(0.25, 2, vec![0.0; 16]).unwrap();
        let a = Matrix::from_rows(&[&[-1.0, 2.0], &[0.5, -3.0]]).unwrap();
        let sigma = Matrix::diag(&[0.3, 0.7]);
        assert_eq!(xi_from_fine_path(&a, &sigma, &fine, (0.5, 1.5)).unwrap(), vec![0.0, 0.0]);

        let mut s = derive_stream(StreamKey::new(5, 5));
        let fine = FineBrownianPath::generate(&mut s, 2, 0.25, 8).unwrap();
        let xi = xi_from_fine_path(&Matrix::zeros(2, 2), &sigma, &fine, (0.5, 1.5)).unwrap();
        let mut w = [0.0; 2];
        fine.aggregate(2, 4, &mut w);
        let expected = sigma.mul_vec(&w);
        assert!((xi[0] - expected[0]).abs() < 1e-15 && (xi[1] - expected[1]).abs() < 1e-15);
    }

    #[test]
    fn convolution_rejects_misaligned_windows() {
        let fine = FineBrownianPath::from_increments(0.25, 1, vec![0.0; 8]).unwrap();
        let a = Matrix::scalar(-1.0);
        let s = Matrix::scalar(1.0);
        assert!(matches!(xi_from_fine_path(&a, &s, &fine, (0.1, 1.0)), Err(NoiseError::Misaligned { .. })));
        assert!(xi_from_fine_path(&a, &s, &fine, (1.0, 1.0)).is_err());
        assert!(xi_from_fine_path(&a, &s, &fine, (1.0, 3.0)).is_err());
    }

    /// Monte-Carlo covariance of the fine-grid convolution against `C(Δ)`.
    fn convolution_cov_error(p: &FhnParams, delta: f64, substeps: usize, paths: u64) -> f64 {
        let a = p.drift_matrix();
        let sigma = p.diffusion_matrix();
        let delta_fine = delta / substeps as f64;
        let kernel = ConvolutionKernel::new(&a, &sigma, delta, delta_fine).unwrap();
        let mut draws = Vec::with_capacity(paths as usize);
        let mut xi = vec![0.0; 2];
        for l in 0..paths {
            let mut s = derive_stream(StreamKey::new(11, l));
            let fine = FineBrownianPath::generate(&mut s, 2, delta_fine, substeps).unwrap();
            kernel.apply(&fine, 0, &mut xi);
            draws.push(xi.clone());
        }
        let (cov, _) = sample_cov(&draws);
        let exact = fhn_cov(p, delta);
        cov.sub(&exact).max_abs() / exact.max_abs()
    }

    #[test]
    fn convolution_covariance_near_exact() {
        let p = FhnParams { eps: 0.05, gamma: 1.5, beta: 0.1, sigma1: 0.1, sigma2: 0.2 };
        let err = convolution_cov_error(&p, 0.05, 256, 10_000);
        assert!(err < 0.02, "err={err}");
    }

    #[test]
    fn convolution_bias_shrinks_with_fine_step() {
        // Exact second moments of the discrete sum: Σ_j δ e^{A(Δ−s_j)} Q e^{A(Δ−s_j)}ᵀ.
        let p = FhnParams { eps: 0.05, gamma: 1.5, beta: 0.1, sigma1: 0.1, sigma2: 0.2 };
        let a = p.drift_matrix();
        let sigma = p.diffusion_matrix();
        let q = sigma.matmul(&sigma.transpose());
        let delta = 0.05;
        let exact = fhn_cov(&p, delta);
        let errs: Vec<f64> = [16usize, 64, 256]
            .iter()
            .map(|&r| {
                let h = delta / r as f64;
                let mut c = Matrix::zeros(2, 2);
                for j in 0..r {
                    let e = linalg::mat_exp(&a, delta - j as f64 * h).unwrap();
                    c = c.add(&e.matmul(&q).matmul(&e.transpose()).scale(h));
                }
                c.sub(&exact).max_abs() / exact.max_abs()
            })
            .collect();
        // Linear in δ: each 4× refinement cuts the bias roughly 4×.
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.0..5.0).contains(&ratio), "{errs:?}");
        }
    }
}
