//! Bernstein blocking of a sample path, remainder and Lindeberg diagnostics,
//! and convergence of normalised partial sums to the standard normal law.
//!
//! Indices are 0-based: for block length `k = floor(n^alpha_exp)` and gap
//! `m`, block `i` covers `[i k, (i + 1) k - m)` for `i < nu = floor(n / k)`;
//! every other index of `0..n` belongs to the remainder.

use serde::{Deserialize, Serialize};

use crate::charfn::ecf;
use crate::error::{Error, Result};
use crate::normal;
use crate::regime::ModelSpec;
use crate::rng::{derive_seed, replicate_map};

/// Standard deviation of the Kolmogorov distribution; `KOLMOGOROV_SD / sqrt(R)`
/// is the sampling noise of a KS distance from `R` replicates.
pub const KOLMOGOROV_SD: f64 = 0.2605;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDecomposition {
    pub n: usize,
    pub alpha_exp: f64,
    pub m: usize,
    pub k: usize,
    pub nu: usize,
    /// Half-open `[start, end)` index ranges.
    pub block_ranges: Vec<(usize, usize)>,
    pub remainder_indices: Vec<usize>,
}

/// Block length `floor(n^alpha_exp)`, robust to `powf` landing just below an
/// exact integer.
pub fn block_length(n: usize, alpha_exp: f64) -> usize {
    let x = (n as f64).powf(alpha_exp);
    let mut k = x.floor() as usize;
    if ((k + 1) as f64 - x).abs() < 1e-9 {
        k += 1;
    }
    k
}

pub fn decompose(n: usize, alpha_exp: f64, m: usize) -> Result<BlockDecomposition> {
    if n < 4 {
        return Err(Error::InvalidParameter(format!("n = {n} must be at least 4")));
    }
    if !(alpha_exp > 0.0 && alpha_exp <= 0.25) {
        return Err(Error::InvalidParameter(format!(
            "alpha_exp = {alpha_exp} must lie in (0, 1/4]"
        )));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("gap length m must be at least 1".into()));
    }
    let k = block_length(n, alpha_exp);
    if m >= k {
        return Err(Error::GapExceedsBlock { m, k });
    }
    let nu = n / k;
    let block_ranges: Vec<(usize, usize)> = (0..nu).map(|i| (i * k, (i + 1) * k - m)).collect();
    let mut remainder_indices = Vec::with_capacity(nu * m + n - nu * k);
    for i in 0..nu {
        remainder_indices.extend((i + 1) * k - m..(i + 1) * k);
    }
    remainder_indices.extend(nu * k..n);
    Ok(BlockDecomposition {
        n,
        alpha_exp,
        m,
        k,
        nu,
        block_ranges,
        remainder_indices,
    })
}

impl BlockDecomposition {
    /// Leftover `r = n - k nu`.
    pub fn r(&self) -> usize {
        self.n - self.k * self.nu
    }

    /// Number of remainder terms `p = m nu + r`.
    pub fn p(&self) -> usize {
        self.remainder_indices.len()
    }

    /// Per-index membership: `true` for remainder indices.
    pub fn remainder_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n];
        for &i in &self.remainder_indices {
            mask[i] = true;
        }
        mask
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSums {
    pub u: Vec<f64>,
    pub z_sum: f64,
}

/// Block sums `U_i` and the remainder sum of centred observations.
pub fn block_sums(centered: &[f64], d: &BlockDecomposition) -> Result<BlockSums> {
    if centered.len() != d.n {
        return Err(Error::LengthMismatch {
            expected: d.n,
            got: centered.len(),
        });
    }
    let u = d
        .block_ranges
        .iter()
        .map(|&(a, b)| centered[a..b].iter().sum())
        .collect();
    let z_sum = d.remainder_indices.iter().map(|&i| centered[i]).sum();
    Ok(BlockSums { u, z_sum })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderRow {
    pub n: usize,
    pub k: usize,
    pub nu: usize,
    pub p: usize,
    /// Monte Carlo estimate of `E (Z_sum / sqrt(n))^2`.
    pub estimate: f64,
    pub std_error: f64,
    /// `p^2 R^2 / n` with `R = E|X - mu|^3`.
    pub holder_bound: f64,
    /// `p Var(X) / n`, exact when observations are independent.
    pub iid_reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderReport {
    pub alpha_exp: f64,
    pub m: usize,
    pub third_abs_moment: f64,
    pub replicates: usize,
    pub rows: Vec<RemainderRow>,
}

impl RemainderReport {
    /// Consecutive grid points where the estimate rises by more than
    /// `sigmas` combined standard errors.
    pub fn monotonicity_breaks(&self, sigmas: f64) -> Vec<usize> {
        self.rows
            .windows(2)
            .filter(|w| {
                let noise = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
                w[1].estimate > w[0].estimate + sigmas * noise
            })
            .map(|w| w[1].n)
            .collect()
    }
}

/// Mean-square size of the normalised remainder across an `n` grid.
pub fn remainder_diagnostic(
    model: &ModelSpec,
    n_grid: &[usize],
    alpha_exp: f64,
    m: usize,
    replicates: usize,
    seed: u64,
) -> Result<RemainderReport> {
    if replicates < 2 {
        return Err(Error::InvalidParameter("need at least 2 replicates".into()));
    }
    let model = model.stationary_version()?;
    let mu = model.stationary_mean()?;
    let var = model.stationary_variance()?;
    let r3 = model.stationary_abs_third_moment()?;
    let mut rows = Vec::with_capacity(n_grid.len());
    for (gi, &n) in n_grid.iter().enumerate() {
        let d = decompose(n, alpha_exp, m)?;
        let mask = d.remainder_mask();
        let values = replicate_map(derive_seed(seed, gi as u64), replicates, |rng, _| {
            let z: f64 = model
                .walk(rng)
                .take(n)
                .zip(&mask)
                .filter(|(_, &keep)| keep)
                .map(|((_, x), _)| x - mu)
                .sum();
            z * z / n as f64
        });
        let (estimate, std_error) = mean_and_se(&values);
        let p = d.p() as f64;
        rows.push(RemainderRow {
            n,
            k: d.k,
            nu: d.nu,
            p: d.p(),
            estimate,
            std_error,
            holder_bound: p * p * r3 * r3 / n as f64,
            iid_reference: p * var / n as f64,
        });
    }
    Ok(RemainderReport {
        alpha_exp,
        m,
        third_abs_moment: r3,
        replicates,
        rows,
    })
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LindebergRow {
    pub n: usize,
    pub eta: f64,
    /// Monte Carlo mean of `sum_k X_kn^2 1{|X_kn| > eta}` over stationary paths.
    pub estimate: f64,
    pub std_error: f64,
    /// The same expectation in closed form.
    pub exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LindebergReport {
    pub mean: f64,
    pub sigma: f64,
    pub replicates: usize,
    pub rows: Vec<LindebergRow>,
}

/// Closed-form `E[(X - mu)^2 / sigma^2 ; |X - mu| > eta sigma sqrt(n)]` under
/// the stationary marginal; equal to the Lindeberg sum of the array
/// `X_kn = (X_k - mu) / (sigma sqrt(n))`.
pub fn lindeberg_exact(model: &ModelSpec, n: usize, eta: f64) -> Result<f64> {
    let pi = model.stationary()?;
    let mu = model.stationary_mean()?;
    let sigma2 = model.stationary_variance()?;
    let a = eta * sigma2.sqrt() * (n as f64).sqrt();
    let tails: f64 = pi
        .iter()
        .zip(model.emissions().laws())
        .map(|(p, e)| {
            p * (e.partial_second_moment(mu, f64::NEG_INFINITY, mu - a)
                + e.partial_second_moment(mu, mu + a, f64::INFINITY))
        })
        .sum();
    Ok(tails / sigma2)
}

/// Lindeberg sums for the stationary array normalised by the marginal
/// standard deviation, so that `sum_k E X_kn^2 = 1`.
pub fn lindeberg_check(
    model: &ModelSpec,
    n_grid: &[usize],
    eta_grid: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<LindebergReport> {
    if replicates < 2 {
        return Err(Error::InvalidParameter("need at least 2 replicates".into()));
    }
    if eta_grid.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::InvalidParameter("eta must be nonnegative".into()));
    }
    let model = model.stationary_version()?;
    let mu = model.stationary_mean()?;
    let sigma = model.stationary_variance()?.sqrt();
    let mut rows = Vec::new();
    for (gi, &n) in n_grid.iter().enumerate() {
        let scale = sigma * (n as f64).sqrt();
        let sums = replicate_map(derive_seed(seed, gi as u64), replicates, |rng, _| {
            let mut acc = vec![0.0; eta_grid.len()];
            for (_, x) in model.walk(rng).take(n) {
                let y = (x - mu) / scale;
                for (a, &eta) in acc.iter_mut().zip(eta_grid) {
                    if y.abs() > eta {
                        *a += y * y;
                    }
                }
            }
            acc
        });
        for (ei, &eta) in eta_grid.iter().enumerate() {
            let values: Vec<f64> = sums.iter().map(|s| s[ei]).collect();
            let (estimate, std_error) = mean_and_se(&values);
            rows.push(LindebergRow {
                n,
                eta,
                estimate,
                std_error,
                exact: lindeberg_exact(&model, n, eta)?,
            });
        }
    }
    Ok(LindebergReport {
        mean: mu,
        sigma,
        replicates,
        rows,
    })
}

/// How the partial sum `S_n` is scaled before comparison with `N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalizer {
    /// Long-run standard deviation from non-overlapping batch means of one
    /// stationary pilot path. `batch_len = None` uses `ceil(100 / (1 - alpha))`.
    BatchMeans {
        #[serde(default)]
        batch_len: Option<usize>,
        #[serde(default = "default_batches")]
        batches: usize,
    },
    /// Closed-form long-run standard deviation.
    Exact,
    Fixed { sd: f64 },
}

fn default_batches() -> usize {
    10_000
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer::BatchMeans {
            batch_len: None,
            batches: default_batches(),
        }
    }
}

/// Batch-means estimate of the long-run standard deviation.
pub fn batch_means_sd(model: &ModelSpec, batch_len: usize, batches: usize, seed: u64) -> Result<f64> {
    if batch_len == 0 || batches < 2 {
        return Err(Error::InvalidParameter("batch means need batch_len >= 1 and batches >= 2".into()));
    }
    let model = model.stationary_version()?;
    let mu = model.stationary_mean()?;
    let mut rng = crate::rng::stream_rng(seed, 0);
    let mut walk = model.walk(&mut rng);
    let means: Vec<f64> = (0..batches)
        .map(|_| walk.by_ref().take(batch_len).map(|(_, x)| x - mu).sum::<f64>() / batch_len as f64)
        .collect();
    // centred at the exact mean, so no degree of freedom is spent on it
    let var = means.iter().map(|b| b * b).sum::<f64>() / batches as f64;
    Ok((var * batch_len as f64).sqrt())
}

pub fn resolve_normalizer(model: &ModelSpec, normalizer: Normalizer, seed: u64) -> Result<f64> {
    match normalizer {
        Normalizer::Exact => Ok(model.long_run_variance_exact()?.sqrt()),
        Normalizer::Fixed { sd } => {
            if sd > 0.0 {
                Ok(sd)
            } else {
                Err(Error::InvalidParameter("fixed normalizer must be positive".into()))
            }
        }
        Normalizer::BatchMeans { batch_len, batches } => {
            let len = match batch_len {
                Some(b) => b,
                None => {
                    let alpha = model.chain().slem();
                    (100.0 / (1.0 - alpha).max(1e-3)).ceil() as usize
                }
            };
            batch_means_sd(model, len, batches, seed)
        }
    }
}

/// Kolmogorov limiting distribution `P(sqrt(R) D <= x)`.
pub fn kolmogorov_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < 0.3 {
        // dual series, accurate for small x
        let s: f64 = (1..=20)
            .map(|k| {
                let y = (2 * k - 1) as f64 * std::f64::consts::PI / x;
                (-y * y / 8.0).exp()
            })
            .sum();
        return (2.0 * std::f64::consts::PI).sqrt() / x * s;
    }
    let s: f64 = (1..=100)
        .map(|k| {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * (k * k) as f64 * x * x).exp()
        })
        .sum();
    (1.0 - 2.0 * s).clamp(0.0, 1.0)
}

/// Asymptotic `level` quantile of the KS distance from `replicates` draws.
pub fn ks_null_quantile(replicates: usize, level: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 5.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_cdf(mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) / (replicates as f64).sqrt()
}

/// One-sample KS distance of `samples` to the standard normal law.
pub fn ks_distance_normal(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let r = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let f = normal::cdf(y);
            (((i + 1) as f64 / r) - f).max(f - i as f64 / r)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub t_grid: Vec<f64>,
    #[serde(default)]
    pub eta_grid: Vec<f64>,
    #[serde(default)]
    pub normalizer: Normalizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub normalizer: f64,
    pub exact_long_run_sd: f64,
    pub ks_distance: Vec<f64>,
    /// Sampling noise scale of a KS distance at this replicate count.
    pub ks_noise: f64,
    /// 99% quantile of the KS distance under exact normality.
    pub ks_null_99: f64,
    pub cf_distance: Vec<f64>,
    /// Largest ECF standard error over the t grid, per n.
    pub cf_noise: Vec<f64>,
    pub variance_ratio: Vec<f64>,
    pub mean: Vec<f64>,
    pub lindeberg_values: Vec<LindebergRow>,
}

impl ConvergenceReport {
    /// Grid points where the KS distance rises by more than `factor` times
    /// the noise of a difference of two independent KS distances.
    pub fn ks_increases(&self, factor: f64) -> Vec<usize> {
        let noise = std::f64::consts::SQRT_2 * self.ks_noise;
        self.ks_distance
            .windows(2)
            .zip(&self.n_grid[1..])
            .filter(|(w, _)| w[1] > w[0] + factor * noise)
            .map(|(_, &n)| n)
            .collect()
    }

    pub fn cf_increases(&self, factor: f64) -> Vec<usize> {
        (1..self.cf_distance.len())
            .filter(|&i| {
                let noise = self.cf_noise[i].hypot(self.cf_noise[i - 1]);
                self.cf_distance[i] > self.cf_distance[i - 1] + factor * noise
            })
            .map(|i| self.n_grid[i])
            .collect()
    }

    /// Long-format CSV: `n,metric,value,std_error`.
    pub fn csv(&self) -> String {
        let mut out = String::from("n,metric,value,std_error\n");
        let r = self.replicates as f64;
        for (i, &n) in self.n_grid.iter().enumerate() {
            out.push_str(&format!("{n},ks_distance,{},{}\n", self.ks_distance[i], self.ks_noise));
            out.push_str(&format!("{n},cf_distance,{},{}\n", self.cf_distance[i], self.cf_noise[i]));
            let vr = self.variance_ratio[i];
            out.push_str(&format!("{n},variance_ratio,{vr},{}\n", vr * (2.0 / (r - 1.0)).sqrt()));
            out.push_str(&format!("{n},mean,{},{}\n", self.mean[i], (vr / r).sqrt()));
        }
        for row in &self.lindeberg_values {
            out.push_str(&format!("{},lindeberg_eta_{},{},0\n", row.n, row.eta, row.exact));
        }
        out
    }
}

/// Distance of `Y_n = S_n / (normalizer sqrt(n))` to `N(0, 1)` across an `n`
/// grid, with `S_n` the partial sum of observations centred at the exact
/// stationary mean.
pub fn clt_convergence(model: &ModelSpec, config: &ConvergenceConfig, seed: u64) -> Result<ConvergenceReport> {
    if config.n_grid.is_empty() || config.t_grid.is_empty() {
        return Err(Error::InvalidParameter("n_grid and t_grid must be nonempty".into()));
    }
    if config.replicates < 2 {
        return Err(Error::InvalidParameter("need at least 2 replicates".into()));
    }
    let model = model.stationary_version()?;
    let mu = model.stationary_mean()?;
    let sd = resolve_normalizer(&model, config.normalizer, derive_seed(seed, u64::MAX))?;
    let r = config.replicates as f64;
    let mut report = ConvergenceReport {
        n_grid: config.n_grid.clone(),
        replicates: config.replicates,
        normalizer: sd,
        exact_long_run_sd: model.long_run_variance_exact()?.sqrt(),
        ks_distance: Vec::new(),
        ks_noise: KOLMOGOROV_SD / r.sqrt(),
        ks_null_99: ks_null_quantile(config.replicates, 0.99),
        cf_distance: Vec::new(),
        cf_noise: Vec::new(),
        variance_ratio: Vec::new(),
        mean: Vec::new(),
        lindeberg_values: Vec::new(),
    };
    for (gi, &n) in config.n_grid.iter().enumerate() {
        if n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        let scale = sd * (n as f64).sqrt();
        let ys = replicate_map(derive_seed(seed, gi as u64), config.replicates, |rng, _| {
            model.walk(rng).take(n).map(|(_, x)| x - mu).sum::<f64>() / scale
        });
        report.ks_distance.push(ks_distance_normal(&ys));
        let est = ecf(&ys, &config.t_grid)?;
        let cf = est
            .t_grid
            .iter()
            .zip(&est.values)
            .map(|(t, v)| (v - num_complex::Complex64::new((-0.5 * t * t).exp(), 0.0)).norm())
            .fold(0.0, f64::max);
        report.cf_distance.push(cf);
        report.cf_noise.push(est.std_error.iter().copied().fold(0.0, f64::max));
        let (mean, _) = mean_and_se(&ys);
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (r - 1.0);
        report.variance_ratio.push(var);
        report.mean.push(mean);
        for &eta in &config.eta_grid {
            report.lindeberg_values.push(LindebergRow {
                n,
                eta,
                estimate: f64::NAN,
                std_error: 0.0,
                exact: lindeberg_exact(&model, n, eta)?,
            });
        }
    }
    // NaN is not valid JSON; closed-form rows carry the exact value as estimate
    for row in &mut report.lindeberg_values {
        row.estimate = row.exact;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::TransitionMatrix;
    use crate::emission::{Emission, EmissionSpec};
    use crate::independence::{IndependenceLab, Method, RectEvent};
    use crate::regime::Initial;

    fn benchmark() -> ModelSpec {
        let p = TransitionMatrix::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let e = EmissionSpec::new(vec![
            Emission::Gaussian { mu: -1.0, sigma: 1.0 },
            Emission::Gaussian { mu: 1.0, sigma: 1.0 },
        ])
        .unwrap();
        ModelSpec::new(p, e, Initial::Stationary).unwrap()
    }

    fn iid_gaussian_mixture() -> ModelSpec {
        let p = TransitionMatrix::rank_one(&[0.5, 0.5]).unwrap();
        let e = EmissionSpec::new(vec![
            Emission::Gaussian { mu: -0.5, sigma: 0.8 },
            Emission::Gaussian { mu: 0.5, sigma: 0.8 },
        ])
        .unwrap();
        ModelSpec::new(p, e, Initial::Stationary).unwrap()
    }

    fn std_normal() -> ModelSpec {
        ModelSpec::new(
            TransitionMatrix::identity(1),
            EmissionSpec::new(vec![Emission::Gaussian { mu: 0.0, sigma: 1.0 }]).unwrap(),
            Initial::Stationary,
        )
        .unwrap()
    }

    #[test]
    fn decompose_example() {
        let d = decompose(1000, 0.25, 2).unwrap();
        assert_eq!((d.k, d.nu, d.r()), (5, 200, 0));
        assert!(d.block_ranges.iter().all(|(a, b)| b - a == 3));
        assert_eq!(d.p(), 400);
        assert_eq!(d.block_ranges[1], (5, 8));
    }

    #[test]
    fn decompose_boundaries() {
        let d = decompose(1000, 0.25, 4).unwrap();
        assert!(d.block_ranges.iter().all(|(a, b)| b - a == 1));
        assert!(matches!(decompose(1000, 0.25, 5), Err(Error::GapExceedsBlock { m: 5, k: 5 })));
        assert!(decompose(1000, 0.25, 0).is_err());
        assert!(decompose(3, 0.2, 1).is_err());
        assert!(decompose(1000, 0.3, 1).is_err());
        assert!(decompose(1000, 0.0, 1).is_err());
        assert_eq!(block_length(16, 0.25), 2);
        assert_eq!(block_length(81, 0.25), 3);
    }

    #[test]
    fn remainder_count_with_unit_gap() {
        let d = decompose(1003, 0.25, 1).unwrap();
        assert_eq!(d.p(), d.nu + d.r());
        assert_eq!(d.r(), 3);
    }

    #[test]
    fn block_sums_examples() {
        let d = decompose(500, 0.24, 1).unwrap();
        let zeros = vec![0.0; 500];
        let s = block_sums(&zeros, &d).unwrap();
        assert!(s.u.iter().all(|&u| u == 0.0) && s.z_sum == 0.0);
        assert_eq!(s.u.len(), d.nu);
        assert!(matches!(block_sums(&zeros[..10], &d), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn blocks_of_benchmark_are_nearly_independent() {
        // block starts are k >= m + 1 apart
        let model = benchmark();
        let lab = IndependenceLab::new(&model).unwrap();
        let d = decompose(4096, 0.25, 3).unwrap();
        let nu = 4;
        let family = crate::independence::rectangle_family(&model, nu, 2).unwrap();
        let lags = vec![d.k; nu - 1];
        let cert = lab.epsilon_certificate(&lags, &family, Method::Exact, 0, 0).unwrap();
        let prof = lab.profile();
        assert!(cert.epsilon <= nu as f64 * prof.c * prof.alpha.powi(d.m as i32));
        let _ = RectEvent::everything();
    }

    #[test]
    fn lindeberg_examples() {
        let p = TransitionMatrix::new(vec![vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap();
        let e = EmissionSpec::new(vec![
            Emission::Uniform { a: -1.0, b: 1.0 },
            Emission::Uniform { a: 0.0, b: 3.0 },
        ])
        .unwrap();
        let model = ModelSpec::new(p, e, Initial::Stationary).unwrap();
        let mu = model.stationary_mean().unwrap();
        let sigma = model.stationary_variance().unwrap().sqrt();
        let bound = (-1.0 - mu).abs().max(3.0 - mu);
        let n = 400;
        let eta = 1.01 * bound / (sigma * (n as f64).sqrt());
        let report = lindeberg_check(&model, &[n], &[0.0, eta], 50, 1).unwrap();
        let zero = &report.rows[0];
        assert!((zero.exact - 1.0).abs() < 1e-12);
        assert!((zero.estimate - 1.0).abs() < 5.0 * zero.std_error + 0.05);
        let beyond = &report.rows[1];
        assert_eq!(beyond.exact, 0.0);
        assert_eq!(beyond.estimate, 0.0);
    }

    #[test]
    fn lindeberg_gaussian_decreases() {
        let model = iid_gaussian_mixture();
        let report = lindeberg_check(&model, &[100, 1000, 10_000], &[0.1], 20, 2).unwrap();
        let exact: Vec<f64> = report.rows.iter().map(|r| r.exact).collect();
        assert!(exact[0] > exact[1] && exact[1] > exact[2], "{exact:?}");
        for row in &report.rows {
            assert!((row.estimate - row.exact).abs() <= 5.0 * row.std_error + 1e-12);
        }
    }

    #[test]
    fn lindeberg_exact_matches_quadrature_for_iid_gaussian() {
        // single N(0,1) regime: E[Z^2; |Z| > a] = 2 (a phi(a) + 1 - Phi(a))
        let model = std_normal();
        for (n, eta) in [(100, 0.1), (400, 0.05), (25, 0.3)] {
            let a = eta * (n as f64).sqrt();
            let expected = 2.0 * (a * normal::pdf(a) + normal::sf(a));
            assert!((lindeberg_exact(&model, n, eta).unwrap() - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn remainder_matches_iid_reference() {
        let model = iid_gaussian_mixture();
        let report = remainder_diagnostic(&model, &[1000, 4000], 0.24, 2, 800, 3).unwrap();
        for row in &report.rows {
            assert!((row.estimate - row.iid_reference).abs() <= 4.0 * row.std_error, "{row:?}");
            assert!(row.estimate <= row.holder_bound + 2.0 * row.std_error);
        }
    }

    #[test]
    fn batch_means_near_exact() {
        let model = benchmark();
        let exact = model.long_run_variance_exact().unwrap().sqrt();
        let est = resolve_normalizer(&model, Normalizer::default(), 4).unwrap();
        assert!((est / exact - 1.0).abs() < 0.03, "{est} vs {exact}");
    }

    #[test]
    fn kolmogorov_quantiles() {
        assert!((kolmogorov_cdf(1.3581) - 0.95).abs() < 1e-4);
        assert!((kolmogorov_cdf(1.6276) - 0.99).abs() < 1e-4);
        assert!((kolmogorov_cdf(0.25) - kolmogorov_cdf(0.2500001)).abs() < 1e-5);
        assert!((ks_null_quantile(10_000, 0.95) - 0.013581).abs() < 1e-5);
    }

    #[test]
    fn ks_distance_of_exact_quantiles_is_small() {
        let r = 1000;
        let mut ys = Vec::new();
        for i in 0..r {
            let level = (i as f64 + 0.5) / r as f64;
            let (mut lo, mut hi) = (-10.0, 10.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if normal::cdf(mid) < level {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            ys.push(0.5 * (lo + hi));
        }
        assert!((ks_distance_normal(&ys) - 0.5 / r as f64).abs() < 1e-9);
    }

    #[test]
    fn convergence_of_exact_normal() {
        let config = ConvergenceConfig {
            n_grid: vec![1, 10],
            replicates: 4000,
            t_grid: vec![0.5, 1.0, 2.0],
            eta_grid: vec![0.1],
            normalizer: Normalizer::Exact,
        };
        let report = clt_convergence(&std_normal(), &config, 6).unwrap();
        for (ks, cf) in report.ks_distance.iter().zip(&report.cf_distance) {
            assert!(*ks < report.ks_null_99);
            assert!(*cf < 4.0 * report.cf_noise[0] + 0.01);
        }
        assert!(report.variance_ratio.iter().all(|v| (v - 1.0).abs() < 0.1));
        let csv = report.csv();
        assert!(csv.starts_with("n,metric,value,std_error\n1,ks_distance,"));
        assert_eq!(report.lindeberg_values.len(), 2);
    }
}
