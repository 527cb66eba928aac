//! Empirical characteristic functions, step-function approximations of
//! `x -> exp(itx)`, and the gap between the characteristic function of a sum
//! of dependent observations and the product of the marginal ones.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::independence::{IndependenceLab, Method};
use crate::emission::Emission;

/// Points used to check a step approximation against `exp(itx)`.
pub const STEP_CHECK_POINTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcfEstimate {
    pub t_grid: Vec<f64>,
    pub values: Vec<Complex64>,
    pub replicates: usize,
    pub std_error: Vec<f64>,
}

/// `mean_r exp(i t x_r)` for every `t`, with the standard error of the mean
/// from the per-component sample variances.
pub fn ecf(samples: &[f64], t_grid: &[f64]) -> Result<EcfEstimate> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("ecf needs at least one sample".into()));
    }
    let r = samples.len() as f64;
    let mut values = Vec::with_capacity(t_grid.len());
    let mut std_error = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let (mut c, mut s, mut cc, mut ss) = (0.0, 0.0, 0.0, 0.0);
        for &x in samples {
            let (sin, cos) = (t * x).sin_cos();
            c += cos;
            s += sin;
            cc += cos * cos;
            ss += sin * sin;
        }
        let (mc, ms) = (c / r, s / r);
        values.push(Complex64::new(mc, ms));
        let var = if samples.len() > 1 {
            ((cc - r * mc * mc) + (ss - r * ms * ms)).max(0.0) / (r - 1.0)
        } else {
            0.0
        };
        std_error.push((var / r).sqrt());
    }
    Ok(EcfEstimate {
        t_grid: t_grid.to_vec(),
        values,
        replicates: samples.len(),
        std_error,
    })
}

/// Piecewise-constant approximation of `exp(itx)` on `[-M, M]` over a
/// uniform partition. Zero outside the truncation interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepApproximation {
    pub t: f64,
    pub eta: f64,
    pub truncation: f64,
    pub breakpoints: Vec<f64>,
    pub coefficients: Vec<Complex64>,
    /// Largest deviation from `exp(itx)` seen on the check grid.
    pub max_grid_error: f64,
}

/// Cells of width at most `eta / (|t| + 1)` carrying `exp(it * midpoint)`;
/// within a cell `|exp(itx) - exp(itx')| <= |t| |x - x'|`, so the error is at
/// most `eta / 2`. For `t = 0` a single cell is exact.
pub fn build_step_approximation(t: f64, eta: f64, truncation: f64) -> Result<StepApproximation> {
    if !(eta > 0.0) || !(truncation > 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "step approximation needs eta > 0 and M > 0 (got eta = {eta}, M = {truncation})"
        )));
    }
    let cells = if t == 0.0 {
        1
    } else {
        (2.0 * truncation * (t.abs() + 1.0) / eta).ceil() as usize
    };
    let width = 2.0 * truncation / cells as f64;
    let breakpoints: Vec<f64> = (0..=cells).map(|i| -truncation + width * i as f64).collect();
    let coefficients: Vec<Complex64> = breakpoints
        .windows(2)
        .map(|w| Complex64::from_polar(1.0, t * 0.5 * (w[0] + w[1])))
        .collect();
    let mut approx = StepApproximation {
        t,
        eta,
        truncation,
        breakpoints,
        coefficients,
        max_grid_error: 0.0,
    };
    approx.max_grid_error = approx.grid_error(STEP_CHECK_POINTS);
    Ok(approx)
}

impl StepApproximation {
    pub fn cells(&self) -> usize {
        self.coefficients.len()
    }

    pub fn cell_width(&self) -> f64 {
        2.0 * self.truncation / self.cells() as f64
    }

    fn cell_of(&self, x: f64) -> Option<usize> {
        if x < -self.truncation || x > self.truncation {
            return None;
        }
        let i = ((x + self.truncation) / self.cell_width()).floor() as usize;
        Some(i.min(self.cells() - 1))
    }

    pub fn eval(&self, x: f64) -> Complex64 {
        self.cell_of(x)
            .map_or(Complex64::new(0.0, 0.0), |i| self.coefficients[i])
    }

    /// `max |f(x) - exp(itx)|` over `points` equally spaced points of `[-M, M]`.
    pub fn grid_error(&self, points: usize) -> f64 {
        let step = 2.0 * self.truncation / (points - 1) as f64;
        (0..points)
            .map(|i| {
                // the last grid point can round past M
                let x = (-self.truncation + step * i as f64).min(self.truncation);
                (self.eval(x) - Complex64::from_polar(1.0, self.t * x)).norm()
            })
            .fold(0.0, f64::max)
    }

    /// `E f(X) = sum_j c_j P(X in cell_j)`.
    pub fn expectation(&self, law: &Emission) -> Complex64 {
        self.breakpoints
            .windows(2)
            .zip(&self.coefficients)
            .map(|(w, c)| c * law.prob_interval(w[0], w[1]))
            .sum()
    }
}

/// Chebyshev radius: `P(|X| > M) <= E X^2 / M^2 <= eta`.
pub fn truncation_radius(second_moment: f64, eta: f64) -> f64 {
    (second_moment / eta).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfGapRow {
    pub t: f64,
    pub gap: f64,
    pub std_error: f64,
    pub bound: f64,
    pub sum_cf: Complex64,
    pub product_cf: Complex64,
    /// Gap computed in closed form, for reference.
    pub exact_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfGapReport {
    pub lags: Vec<usize>,
    pub replicates: usize,
    pub epsilon: f64,
    pub rows: Vec<CfGapRow>,
}

impl CfGapReport {
    pub const CSV_HEADER: &'static str = "t,gap,std_error,bound";

    pub fn csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.t, r.gap, r.std_error, r.bound));
        }
        out
    }

    /// Rows where `gap > bound + sigmas * std_error`.
    pub fn violations(&self, sigmas: f64) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.gap > r.bound + sigmas * r.std_error)
            .map(|r| r.t)
            .collect()
    }
}

/// `|phi_{X_1 + ... + X_k}(t) - prod_j phi_{X_j}(t)|` estimated from one set
/// of simulated replicates of the lagged observations, compared against
/// `2 epsilon`.
pub fn cf_gap(
    lab: &IndependenceLab,
    lags: &[usize],
    t_grid: &[f64],
    replicates: usize,
    seed: u64,
    epsilon: f64,
) -> Result<CfGapReport> {
    let draws = lab.simulate(lags, replicates, seed)?;
    let k = draws.points();
    let r = replicates as f64;
    let mut rows = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let mut sum_acc = Complex64::new(0.0, 0.0);
        let mut marg_acc = vec![Complex64::new(0.0, 0.0); k];
        let mut per_rep = Vec::with_capacity(replicates * (k + 1));
        for rep in 0..replicates {
            let xs = draws.xs(rep);
            let whole = Complex64::from_polar(1.0, t * xs.iter().sum::<f64>());
            sum_acc += whole;
            per_rep.push(whole);
            for (acc, &x) in marg_acc.iter_mut().zip(xs) {
                let e = Complex64::from_polar(1.0, t * x);
                *acc += e;
                per_rep.push(e);
            }
        }
        let sum_cf = sum_acc / r;
        let marg: Vec<Complex64> = marg_acc.iter().map(|a| a / r).collect();
        let product_cf: Complex64 = marg.iter().product();
        let leave_one: Vec<Complex64> = (0..k)
            .map(|j| marg.iter().enumerate().filter(|&(l, _)| l != j).map(|(_, m)| m).product())
            .collect();
        // delta-method influence of one replicate on sum_cf - product_cf
        let influence: Vec<Complex64> = per_rep
            .chunks(k + 1)
            .map(|row| row[0] - row[1..].iter().zip(&leave_one).map(|(e, l)| e * l).sum::<Complex64>())
            .collect();
        let mean: Complex64 = influence.iter().sum::<Complex64>() / r;
        let var = influence.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / (r - 1.0);
        rows.push(CfGapRow {
            t,
            gap: (sum_cf - product_cf).norm(),
            std_error: (var / r).sqrt(),
            bound: 2.0 * epsilon,
            sum_cf,
            product_cf,
            exact_gap: cf_exact_gap(lab, lags, t)?,
        });
    }
    Ok(CfGapReport {
        lags: lags.to_vec(),
        replicates,
        epsilon,
        rows,
    })
}

/// Closed-form characteristic-function gap: the sum's transform is a
/// forward recursion with complex weights `phi_j(t)`.
pub fn cf_exact_gap(lab: &IndependenceLab, lags: &[usize], t: f64) -> Result<f64> {
    let model = lab.model();
    let pi = model.stationary()?;
    let phis: Vec<Complex64> = model.emissions().laws().iter().map(|e| e.char_fn(t)).collect();
    let mut v: Vec<Complex64> = pi.iter().zip(&phis).map(|(p, f)| f * p).collect();
    for &lag in lags {
        let kernel = model.chain().n_step(lag)?;
        let n = model.n_states();
        let mut next = vec![Complex64::new(0.0, 0.0); n];
        for (i, vi) in v.iter().enumerate() {
            for (j, nj) in next.iter_mut().enumerate() {
                *nj += vi * kernel.get(i, j);
            }
        }
        v = next.iter().zip(&phis).map(|(a, f)| a * f).collect();
    }
    let sum_cf: Complex64 = v.iter().sum();
    let marginal: Complex64 = pi.iter().zip(&phis).map(|(p, f)| f * p).sum();
    Ok((sum_cf - marginal.powi(lags.len() as i32 + 1)).norm())
}

/// Certified epsilon for `lags` from the exact evaluator over the default
/// rectangle family with `levels` quantile thresholds.
pub fn exact_epsilon(lab: &IndependenceLab, lags: &[usize], levels: usize) -> Result<f64> {
    let family = crate::independence::rectangle_family(lab.model(), lags.len() + 1, levels)?;
    Ok(lab.epsilon_certificate(lags, &family, Method::Exact, 0, 0)?.epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::TransitionMatrix;
    use crate::emission::EmissionSpec;
    use crate::regime::{Initial, ModelSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn ecf_degenerate_and_origin() {
        let est = ecf(&[0.0; 10], &[0.0, 1.0, -3.0]).unwrap();
        assert!(est.values.iter().all(|v| *v == Complex64::new(1.0, 0.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let est = ecf(&xs, &[0.0, 0.7, -0.7]).unwrap();
        assert_eq!(est.values[0], Complex64::new(1.0, 0.0));
        assert_eq!(est.values[2], est.values[1].conj());
        assert!(ecf(&[], &[1.0]).is_err());
    }

    #[test]
    fn ecf_of_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let est = ecf(&xs, &[0.5, 1.0, 2.0]).unwrap();
        for ((t, v), se) in est.t_grid.iter().zip(&est.values).zip(&est.std_error) {
            let target = (-0.5 * t * t).exp();
            assert!((v - Complex64::new(target, 0.0)).norm() <= 4.0 * se, "t = {t}");
            assert!(v.norm() <= 1.0 + 4.0 * se);
        }
    }

    #[test]
    fn step_approximation_examples() {
        let flat = build_step_approximation(0.0, 0.3, 5.0).unwrap();
        assert_eq!(flat.cells(), 1);
        assert_eq!(flat.coefficients[0], Complex64::new(1.0, 0.0));
        assert_eq!(flat.max_grid_error, 0.0);

        let s = build_step_approximation(1.0, 0.1, 10.0).unwrap();
        assert!(s.cell_width() <= 0.05 + 1e-15);
        assert!(s.max_grid_error <= 0.1);
        assert!(s.coefficients.iter().all(|c| c.norm() <= 1.0 + 1e-15));

        for t in [0.5, 1.0, 2.0, 7.3] {
            let a = build_step_approximation(t, 0.2, 6.0).unwrap().cells();
            let b = build_step_approximation(t, 0.1, 6.0).unwrap().cells();
            assert!(b.abs_diff(2 * a) <= 1, "t = {t}: {a} -> {b}");
        }
        assert!(build_step_approximation(1.0, 0.0, 1.0).is_err());
        assert!(build_step_approximation(1.0, 0.1, -1.0).is_err());
    }

    #[test]
    fn truncated_step_expectation_within_budget() {
        // |E f(X) - phi(t)| <= eta (inside) + P(|X| > M) (outside) <= 2 eta
        let law = Emission::Gaussian { mu: 0.5, sigma: 1.2 };
        for eta in [0.2, 0.05] {
            let m = truncation_radius(law.second_moment_about(0.0), eta);
            for t in [0.5, 1.0, 2.0] {
                let s = build_step_approximation(t, eta, m).unwrap();
                assert!((s.expectation(&law) - law.char_fn(t)).norm() <= 2.0 * eta);
            }
        }
    }

    fn benchmark() -> ModelSpec {
        let p = TransitionMatrix::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let e = EmissionSpec::new(vec![
            Emission::Gaussian { mu: -1.0, sigma: 1.0 },
            Emission::Gaussian { mu: 1.0, sigma: 1.0 },
        ])
        .unwrap();
        ModelSpec::new(p, e, Initial::Stationary).unwrap()
    }

    #[test]
    fn cf_gap_on_independent_source() {
        let p = TransitionMatrix::rank_one(&[0.4, 0.6]).unwrap();
        let e = EmissionSpec::new(vec![
            Emission::Gaussian { mu: -1.0, sigma: 1.0 },
            Emission::Uniform { a: 0.0, b: 2.0 },
        ])
        .unwrap();
        let model = ModelSpec::new(p, e, Initial::Stationary).unwrap();
        let lab = IndependenceLab::new(&model).unwrap();
        let report = cf_gap(&lab, &[2, 3], &[0.0, 0.5, 1.0, 2.0], 20_000, 5, 0.0).unwrap();
        assert_eq!(report.rows[0].gap, 0.0);
        for row in &report.rows {
            assert!(row.gap <= 4.0 * row.std_error + 1e-15, "t = {}", row.t);
            assert!(row.exact_gap < 1e-15);
        }
    }

    #[test]
    fn cf_gap_monte_carlo_tracks_exact_gap() {
        let lab = IndependenceLab::new(&benchmark()).unwrap();
        let report = cf_gap(&lab, &[1, 1], &[0.5, 1.0, 2.0], 50_000, 8, 0.0).unwrap();
        for row in &report.rows {
            assert!(row.exact_gap > 0.0);
            assert!((row.gap - row.exact_gap).abs() <= 4.0 * row.std_error, "t = {}", row.t);
        }
    }

    #[test]
    fn cf_gap_csv() {
        let lab = IndependenceLab::new(&benchmark()).unwrap();
        let report = cf_gap(&lab, &[5], &[1.0], 100, 1, 0.25).unwrap();
        let csv = report.csv();
        assert!(csv.starts_with("t,gap,std_error,bound\n1,"));
        assert!(csv.trim_end().ends_with(",0.5"));
    }
}
