//! The hidden-chain-modulated process `(S_t, X_t)`.
//!
//! Emissions depend on the current regime only. The predictive filter
//! supplies `P(S_t = j | x_0..x_{t-1})`, and the one-step conditional density
//! of `X_t` is the mixture of the regime densities under those weights.
//! States are 0-based.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::TransitionMatrix;
use crate::emission::{Emission, EmissionSpec};
use crate::error::{Error, Result};
use crate::rng::SeedRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Initial {
    #[default]
    Stationary,
    Fixed(usize),
    Explicit(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    chain: TransitionMatrix,
    emissions: EmissionSpec,
    #[serde(default)]
    initial: Initial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct ModelSpec {
    chain: TransitionMatrix,
    emissions: EmissionSpec,
    initial: Initial,
    initial_probs: Vec<f64>,
    stationary: Option<Vec<f64>>,
    cum_initial: Vec<f64>,
    cum_rows: Vec<Vec<f64>>,
}

impl TryFrom<RawModel> for ModelSpec {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        ModelSpec::new(raw.chain, raw.emissions, raw.initial)
    }
}

impl From<ModelSpec> for RawModel {
    fn from(m: ModelSpec) -> Self {
        RawModel {
            chain: m.chain,
            emissions: m.emissions,
            initial: m.initial,
        }
    }
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = p
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = f64::INFINITY;
    }
    out
}

#[inline]
pub(crate) fn draw_index<R: Rng + ?Sized>(cum: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
}

impl ModelSpec {
    pub fn new(chain: TransitionMatrix, emissions: EmissionSpec, initial: Initial) -> Result<Self> {
        let n = chain.n_states();
        if emissions.n_states() != n {
            return Err(Error::InvalidModel(format!(
                "chain has {n} states but {} emission laws were given",
                emissions.n_states()
            )));
        }
        let stationary = chain.stationary_distribution().ok().map(|s| s.into_vec());
        let initial_probs = match &initial {
            Initial::Stationary => stationary.clone().ok_or_else(|| {
                Error::InvalidModel("stationary start requires an ergodic chain".into())
            })?,
            Initial::Fixed(j) => {
                if *j >= n {
                    return Err(Error::InvalidModel(format!("fixed start state {j} out of range")));
                }
                let mut v = vec![0.0; n];
                v[*j] = 1.0;
                v
            }
            Initial::Explicit(v) => {
                let sum: f64 = v.iter().sum();
                if v.len() != n
                    || v.iter().any(|p| !p.is_finite() || *p < 0.0)
                    || (sum - 1.0).abs() > crate::chain::STOCHASTIC_TOL
                {
                    return Err(Error::InvalidModel(
                        "explicit initial vector is not a probability vector".into(),
                    ));
                }
                v.clone()
            }
        };
        let cum_rows = (0..n).map(|i| cumulative(chain.row(i))).collect();
        Ok(ModelSpec {
            cum_initial: cumulative(&initial_probs),
            chain,
            emissions,
            initial,
            initial_probs,
            stationary,
            cum_rows,
        })
    }

    /// Same chain and emissions, started in stationarity.
    pub fn stationary_version(&self) -> Result<ModelSpec> {
        ModelSpec::new(self.chain.clone(), self.emissions.clone(), Initial::Stationary)
    }

    pub fn n_states(&self) -> usize {
        self.chain.n_states()
    }

    pub fn chain(&self) -> &TransitionMatrix {
        &self.chain
    }

    pub fn emissions(&self) -> &EmissionSpec {
        &self.emissions
    }

    pub fn emission(&self, state: usize) -> &Emission {
        self.emissions.get(state)
    }

    pub fn initial(&self) -> &Initial {
        &self.initial
    }

    pub fn initial_probs(&self) -> &[f64] {
        &self.initial_probs
    }

    pub fn is_stationary_start(&self) -> bool {
        matches!(self.initial, Initial::Stationary)
    }

    pub fn stationary(&self) -> Result<&[f64]> {
        self.stationary
            .as_deref()
            .ok_or_else(|| Error::NotErgodic(self.chain.is_ergodic().diagnostic))
    }

    /// Mean of the stationary marginal mixture.
    pub fn stationary_mean(&self) -> Result<f64> {
        let pi = self.stationary()?;
        Ok(pi
            .iter()
            .zip(self.emissions.laws())
            .map(|(p, e)| p * e.mean())
            .sum())
    }

    /// Variance of the stationary marginal mixture.
    pub fn stationary_variance(&self) -> Result<f64> {
        let mu = self.stationary_mean()?;
        let pi = self.stationary()?;
        Ok(pi
            .iter()
            .zip(self.emissions.laws())
            .map(|(p, e)| p * e.second_moment_about(mu))
            .sum())
    }

    /// `E|X - mu|^3` under the stationary marginal.
    pub fn stationary_abs_third_moment(&self) -> Result<f64> {
        let mu = self.stationary_mean()?;
        let pi = self.stationary()?;
        Ok(pi
            .iter()
            .zip(self.emissions.laws())
            .map(|(p, e)| p * e.abs_third_moment_about(mu))
            .sum())
    }

    /// Closed-form long-run variance `lim Var(S_n)/n` of the stationary
    /// process, via the fundamental matrix `Z = (I - P + 1 pi)^{-1}`:
    /// `Var(X) + 2 m' diag(pi) (Z - I) m` with `m` the centred regime means.
    pub fn long_run_variance_exact(&self) -> Result<f64> {
        let pi = self.stationary()?;
        let n = self.n_states();
        let mu = self.stationary_mean()?;
        let p = self.chain.to_dmatrix();
        let one_pi = DMatrix::from_fn(n, n, |_, j| pi[j]);
        let z = (DMatrix::<f64>::identity(n, n) - p + one_pi)
            .try_inverse()
            .ok_or_else(|| Error::NotErgodic("fundamental matrix is singular".into()))?;
        let m = DVector::from_fn(n, |i, _| self.emissions.get(i).mean() - mu);
        let weighted = DVector::from_fn(n, |i, _| pi[i] * m[i]);
        let z_minus_i = z - DMatrix::<f64>::identity(n, n);
        let cross = weighted.dot(&(z_minus_i * &m));
        Ok(self.stationary_variance()? + 2.0 * cross)
    }

    /// An infinite walk `(state, x)` driven by `rng`.
    pub fn walk<'a, R: Rng + ?Sized>(&'a self, rng: &'a mut R) -> Walk<'a, R> {
        Walk {
            model: self,
            rng,
            state: None,
        }
    }

    pub fn sample_path(&self, n: usize, seed: SeedRecord) -> Result<PathSample> {
        if n == 0 {
            return Err(Error::InvalidParameter("path length must be at least 1".into()));
        }
        let mut rng = seed.rng();
        let (states, observations) = self.walk(&mut rng).take(n).unzip();
        Ok(PathSample {
            states,
            observations,
            seed,
        })
    }

    /// One-step-ahead regime probabilities given observed `prefix`.
    /// With an empty prefix this is the initial law (the law of the first
    /// state).
    pub fn predictive_state_probs(&self, prefix: &[f64]) -> Result<Vec<f64>> {
        let mut pred = self.initial_probs.clone();
        for (index, &x) in prefix.iter().enumerate() {
            let mut post: Vec<f64> = pred
                .iter()
                .zip(self.emissions.laws())
                .map(|(p, e)| p * e.pdf(x))
                .collect();
            let total: f64 = post.iter().sum();
            if !(total > 0.0) {
                return Err(Error::ZeroLikelihood { index, value: x });
            }
            post.iter_mut().for_each(|v| *v /= total);
            pred = self.chain.propagate(&post);
        }
        let total: f64 = pred.iter().sum();
        pred.iter_mut().for_each(|v| *v /= total);
        Ok(pred)
    }

    /// `f(x | prefix) = sum_j f_j(x) P(S_t = j | prefix)`.
    pub fn conditional_density(&self, x: f64, prefix: &[f64]) -> Result<f64> {
        let weights = self.predictive_state_probs(prefix)?;
        Ok(self.mixture_density(x, &weights))
    }

    pub fn mixture_density(&self, x: f64, weights: &[f64]) -> f64 {
        weights
            .iter()
            .zip(self.emissions.laws())
            .map(|(w, e)| w * e.pdf(x))
            .sum()
    }
}

pub struct Walk<'a, R: Rng + ?Sized> {
    model: &'a ModelSpec,
    rng: &'a mut R,
    state: Option<usize>,
}

impl<R: Rng + ?Sized> Iterator for Walk<'_, R> {
    type Item = (usize, f64);

    #[inline]
    fn next(&mut self) -> Option<(usize, f64)> {
        let cum = match self.state {
            None => &self.model.cum_initial,
            Some(s) => &self.model.cum_rows[s],
        };
        let s = draw_index(cum, self.rng);
        self.state = Some(s);
        let x = self.model.emissions.get(s).sample(self.rng);
        Some((s, x))
    }
}

/// Draws `(S, X)` at the time points `T, T + lags[0], T + lags[0] + lags[1], ...`
/// with `S_T` from the model's initial law, jumping directly through the
/// precomputed kernels `P^lag`.
#[derive(Debug, Clone)]
pub struct LaggedSampler<'a> {
    model: &'a ModelSpec,
    kernels: Vec<Vec<Vec<f64>>>,
}

impl<'a> LaggedSampler<'a> {
    pub fn new(model: &'a ModelSpec, lags: &[usize]) -> Result<Self> {
        let mut kernels = Vec::with_capacity(lags.len());
        for &lag in lags {
            let k = model.chain.n_step(lag)?;
            kernels.push((0..model.n_states()).map(|i| cumulative(k.row(i))).collect());
        }
        Ok(LaggedSampler { model, kernels })
    }

    /// Number of time points (`lags.len() + 1`).
    pub fn points(&self) -> usize {
        self.kernels.len() + 1
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, states: &mut [usize], xs: &mut [f64]) {
        let mut s = draw_index(&self.model.cum_initial, rng);
        states[0] = s;
        xs[0] = self.model.emission(s).sample(rng);
        for (r, kernel) in self.kernels.iter().enumerate() {
            s = draw_index(&kernel[s], rng);
            states[r + 1] = s;
            xs[r + 1] = self.model.emission(s).sample(rng);
        }
    }
}

/// A realised trajectory of regimes and observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub states: Vec<usize>,
    pub observations: Vec<f64>,
    pub seed: SeedRecord,
}

impl PathSample {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Observations minus `center`.
    pub fn centered(&self, center: f64) -> Vec<f64> {
        self.observations.iter().map(|x| x - center).collect()
    }

    /// CSV with header `t,state,x`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,state,x\n");
        for (t, (s, x)) in self.states.iter().zip(&self.observations).enumerate() {
            out.push_str(&format!("{t},{s},{x}\n"));
        }
        out
    }
}
