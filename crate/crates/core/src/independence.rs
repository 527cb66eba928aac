//! Dependence gaps between observations of a stationary regime-switching
//! process, exact and by simulation, and certificates of epsilon-independence
//! over finite families of rectangle events.
//!
//! Events are rectangles `states x (lo, hi]`. Observations sit at the time
//! points `T, T + lag_1, T + lag_1 + lag_2, ...`; `k` events need `k - 1`
//! lags. In stationarity `T` itself is irrelevant.
//!
//! Every report carries two bounds:
//! - `theoretical_bound`: `k c alpha^(sum of lags)` (or `2 c alpha^tau` for
//!   the conditional gap), with `(alpha, c)` from the chain's mixing profile;
//! - `telescoping_bound`: `sum_r d(lag_r)` with `d(s)` the worst-row total
//!   variation distance of `P^s` from `pi`. This one always holds.

use serde::{Deserialize, Serialize};

use crate::chain::{MixingProfile, TransitionMatrix};
use crate::error::{Error, Result};
use crate::regime::{LaggedSampler, ModelSpec};
use crate::rng::replicate_map;

/// Largest number of events the exact evaluator accepts.
pub const MAX_EXACT_EVENTS: usize = 6;
/// Steps over which the mixing prefactor `c` is fitted.
pub const PROFILE_HORIZON: usize = 60;
/// Default number of quantile thresholds in the rectangle family.
pub const DEFAULT_QUANTILE_LEVELS: usize = 9;

/// `states x (lo, hi]`. `None` means all states / unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectEvent {
    #[serde(default)]
    pub states: Option<Vec<usize>>,
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
}

impl RectEvent {
    pub fn new(states: Option<Vec<usize>>, lo: Option<f64>, hi: Option<f64>) -> Result<Self> {
        let e = RectEvent { states, lo, hi };
        e.check()?;
        Ok(e)
    }

    /// The whole sample space.
    pub fn everything() -> Self {
        RectEvent {
            states: None,
            lo: None,
            hi: None,
        }
    }

    pub fn state(j: usize) -> Self {
        RectEvent {
            states: Some(vec![j]),
            lo: None,
            hi: None,
        }
    }

    pub fn lower(&self) -> f64 {
        self.lo.unwrap_or(f64::NEG_INFINITY)
    }

    pub fn upper(&self) -> f64 {
        self.hi.unwrap_or(f64::INFINITY)
    }

    fn check(&self) -> Result<()> {
        if self.lower() >= self.upper() || self.lo.is_some_and(f64::is_nan) || self.hi.is_some_and(f64::is_nan) {
            return Err(Error::InvalidEvent(format!(
                "interval ({}, {}] is empty",
                self.lower(),
                self.upper()
            )));
        }
        if self.states.as_ref().is_some_and(|s| s.is_empty()) {
            return Err(Error::InvalidEvent("state set is empty".into()));
        }
        Ok(())
    }

    pub fn validate(&self, n_states: usize) -> Result<()> {
        self.check()?;
        if let Some(s) = &self.states {
            if let Some(bad) = s.iter().find(|&&j| j >= n_states) {
                return Err(Error::InvalidEvent(format!("state {bad} out of range")));
            }
        }
        Ok(())
    }

    pub fn has_state(&self, j: usize) -> bool {
        self.states.as_ref().is_none_or(|s| s.contains(&j))
    }

    #[inline]
    pub fn contains(&self, state: usize, x: f64) -> bool {
        self.has_state(state) && x > self.lower() && x <= self.upper()
    }

    /// `q_j = 1{j in states} P_j(lo < X <= hi)` for every regime `j`.
    pub fn regime_masses(&self, model: &ModelSpec) -> Vec<f64> {
        (0..model.n_states())
            .map(|j| {
                if self.has_state(j) {
                    model.emission(j).prob_interval(self.lower(), self.upper())
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub gap_estimate: f64,
    pub std_error: f64,
    pub theoretical_bound: f64,
    pub telescoping_bound: f64,
    pub method: Method,
    pub lags: Vec<usize>,
    pub k: usize,
    /// Joint (or conditional) probability.
    pub joint: f64,
    /// Product of marginals (or unconditional probability).
    pub product: f64,
}

impl GapReport {
    /// Whether the estimate stays below `bound`, allowing `sigmas` standard
    /// errors of sampling noise and rounding at the level of `GAP_FLOOR`.
    pub fn within(&self, bound: f64, sigmas: f64) -> bool {
        self.gap_estimate <= bound + sigmas * self.std_error + crate::chain::GAP_FLOOR
    }

    pub const CSV_HEADER: &'static str =
        "method,k,lags,lag_sum,gap,std_error,theoretical_bound,telescoping_bound,joint,product";

    pub fn csv_row(&self) -> String {
        let lags: Vec<String> = self.lags.iter().map(|l| l.to_string()).collect();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            match self.method {
                Method::Exact => "exact",
                Method::MonteCarlo => "monte_carlo",
            },
            self.k,
            lags.join(";"),
            self.lags.iter().sum::<usize>(),
            self.gap_estimate,
            self.std_error,
            self.theoretical_bound,
            self.telescoping_bound,
            self.joint,
            self.product
        )
    }
}

/// Worst-row total variation distance `max_i 1/2 sum_j |K_ij - pi_j|`.
pub fn tv_distance(kernel: &TransitionMatrix, pi: &[f64]) -> f64 {
    (0..kernel.n_states())
        .map(|i| 0.5 * kernel.row(i).iter().zip(pi).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Exact and simulated dependence gaps for one stationary model.
#[derive(Debug, Clone)]
pub struct IndependenceLab {
    model: ModelSpec,
    profile: MixingProfile,
}

impl IndependenceLab {
    /// Requires an ergodic chain; the model is switched to a stationary start.
    pub fn new(model: &ModelSpec) -> Result<Self> {
        let model = model.stationary_version()?;
        let profile = model.chain().mixing_rate(PROFILE_HORIZON)?;
        Ok(IndependenceLab { model, profile })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn profile(&self) -> &MixingProfile {
        &self.profile
    }

    fn pi(&self) -> &[f64] {
        &self.profile.stationary
    }

    /// Stationary `P(X_T in event)`.
    pub fn marginal(&self, event: &RectEvent) -> f64 {
        event
            .regime_masses(&self.model)
            .iter()
            .zip(self.pi())
            .map(|(q, p)| q * p)
            .sum()
    }

    fn telescoping(&self, lags: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for &lag in lags {
            total += tv_distance(&self.model.chain().n_step(lag)?, self.pi());
        }
        Ok(total)
    }

    /// `|P(X_{T+tau} in A | X_T in B) - P(X_{T+tau} in A)|` in closed form.
    /// The state at `T` given `X_T in B` has law `pi_s q^B_s / P(B)`.
    pub fn conditional_gap_exact(&self, a: &RectEvent, b: &RectEvent, tau: usize) -> Result<GapReport> {
        a.validate(self.model.n_states())?;
        b.validate(self.model.n_states())?;
        if tau == 0 {
            return Err(Error::InvalidParameter("tau must be positive".into()));
        }
        let kernel = self.model.chain().n_step(tau)?;
        let pi = self.pi();
        let qa = a.regime_masses(&self.model);
        let qb = b.regime_masses(&self.model);
        let pb: f64 = pi.iter().zip(&qb).map(|(p, q)| p * q).sum();
        if !(pb > 0.0) {
            return Err(Error::EmptyConditioningEvent);
        }
        let n = self.model.n_states();
        let to_a = |s: usize| -> f64 { (0..n).map(|i| kernel.get(s, i) * qa[i]).sum() };
        let conditional: f64 = (0..n).map(|s| pi[s] * qb[s] / pb * to_a(s)).sum();
        let unconditional: f64 = (0..n).map(|s| pi[s] * to_a(s)).sum();
        Ok(GapReport {
            gap_estimate: (conditional - unconditional).abs(),
            std_error: 0.0,
            theoretical_bound: 2.0 * self.profile.bound(tau),
            telescoping_bound: self.telescoping(&[tau])?,
            method: Method::Exact,
            lags: vec![tau],
            k: 2,
            joint: conditional,
            product: unconditional,
        })
    }

    fn check_config(&self, events: &[RectEvent], lags: &[usize]) -> Result<()> {
        if events.len() < 2 {
            return Err(Error::InvalidParameter("need at least two events".into()));
        }
        if lags.len() + 1 != events.len() {
            return Err(Error::InvalidParameter(format!(
                "{} events need {} lags, got {}",
                events.len(),
                events.len() - 1,
                lags.len()
            )));
        }
        if lags.contains(&0) {
            return Err(Error::InvalidParameter("lags must be positive".into()));
        }
        for e in events {
            e.validate(self.model.n_states())?;
        }
        Ok(())
    }

    fn bounds(&self, k: usize, lags: &[usize]) -> Result<(f64, f64)> {
        let total: usize = lags.iter().sum();
        Ok((k as f64 * self.profile.bound(total), self.telescoping(lags)?))
    }

    /// Joint-versus-product gap `|P(all events) - prod P(event)|`.
    pub fn joint_product_gap(
        &self,
        events: &[RectEvent],
        lags: &[usize],
        method: Method,
        replicates: usize,
        seed: u64,
    ) -> Result<GapReport> {
        self.check_config(events, lags)?;
        match method {
            Method::Exact => self.joint_exact(events, lags),
            Method::MonteCarlo => {
                let sample = self.simulate(lags, replicates, seed)?;
                self.joint_from_sample(events, lags, &sample)
            }
        }
    }

    fn joint_exact(&self, events: &[RectEvent], lags: &[usize]) -> Result<GapReport> {
        let kernels = self.kernels(lags)?;
        let bounds = self.bounds(events.len(), lags)?;
        self.joint_exact_with(events, lags, &kernels, bounds)
    }

    fn kernels(&self, lags: &[usize]) -> Result<Vec<TransitionMatrix>> {
        lags.iter().map(|&l| self.model.chain().n_step(l)).collect()
    }

    fn joint_exact_with(
        &self,
        events: &[RectEvent],
        lags: &[usize],
        kernels: &[TransitionMatrix],
        (theoretical_bound, telescoping_bound): (f64, f64),
    ) -> Result<GapReport> {
        let k = events.len();
        if k > MAX_EXACT_EVENTS {
            return Err(Error::TooManyEventsForExact { k, max: MAX_EXACT_EVENTS });
        }
        let masses: Vec<Vec<f64>> = events.iter().map(|e| e.regime_masses(&self.model)).collect();
        let joint = forward_joint(self.pi(), kernels, &masses);
        let product: f64 = masses
            .iter()
            .map(|q| q.iter().zip(self.pi()).map(|(a, b)| a * b).sum::<f64>())
            .product();
        Ok(GapReport {
            gap_estimate: (joint - product).abs(),
            std_error: 0.0,
            theoretical_bound,
            telescoping_bound,
            method: Method::Exact,
            lags: lags.to_vec(),
            k,
            joint,
            product,
        })
    }

    /// `replicates` independent draws of `(S, X)` at the lagged time points.
    pub fn simulate(&self, lags: &[usize], replicates: usize, seed: u64) -> Result<LaggedDraws> {
        if replicates < 2 {
            return Err(Error::InvalidParameter("Monte Carlo needs at least 2 replicates".into()));
        }
        let sampler = LaggedSampler::new(&self.model, lags)?;
        let points = sampler.points();
        let rows = replicate_map(seed, replicates, |rng, _| {
            let mut s = vec![0usize; points];
            let mut x = vec![0.0; points];
            sampler.sample_into(rng, &mut s, &mut x);
            (s, x)
        });
        let mut states = Vec::with_capacity(points * replicates);
        let mut xs = Vec::with_capacity(points * replicates);
        for (s, x) in rows {
            states.extend(s);
            xs.extend(x);
        }
        Ok(LaggedDraws {
            points,
            states,
            xs,
        })
    }

    fn joint_from_sample(&self, events: &[RectEvent], lags: &[usize], sample: &LaggedDraws) -> Result<GapReport> {
        let k = events.len();
        if sample.points != k {
            return Err(Error::LengthMismatch {
                expected: k,
                got: sample.points,
            });
        }
        let reps = sample.replicates();
        let r = reps as f64;
        let mut hits = vec![0usize; k];
        let mut joint_hits = 0usize;
        let mut indicators = vec![false; k * reps];
        for rep in 0..reps {
            let mut all = true;
            for (pos, e) in events.iter().enumerate() {
                let (s, x) = sample.get(rep, pos);
                let hit = e.contains(s, x);
                indicators[rep * k + pos] = hit;
                hits[pos] += hit as usize;
                all &= hit;
            }
            joint_hits += all as usize;
        }
        let marg: Vec<f64> = hits.iter().map(|&h| h as f64 / r).collect();
        let joint = joint_hits as f64 / r;
        let product: f64 = marg.iter().product();
        // delta method: influence of one replicate on joint - prod(marginals)
        let leave_one: Vec<f64> = (0..k)
            .map(|pos| marg.iter().enumerate().filter(|&(l, _)| l != pos).map(|(_, m)| m).product())
            .collect();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for rep in 0..reps {
            let row = &indicators[rep * k..(rep + 1) * k];
            let mut z = row.iter().all(|&b| b) as u8 as f64;
            for pos in 0..k {
                if row[pos] {
                    z -= leave_one[pos];
                }
            }
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / r;
        let var = ((sum_sq - r * mean * mean) / (r - 1.0)).max(0.0);
        let (theoretical_bound, telescoping_bound) = self.bounds(k, lags)?;
        Ok(GapReport {
            gap_estimate: (joint - product).abs(),
            std_error: (var / r).sqrt(),
            theoretical_bound,
            telescoping_bound,
            method: Method::MonteCarlo,
            lags: lags.to_vec(),
            k,
            joint,
            product,
        })
    }

    /// Largest gap over `family` (plus three standard errors in Monte Carlo
    /// mode). Monte Carlo tuples share one simulated sample.
    pub fn epsilon_certificate(
        &self,
        lags: &[usize],
        family: &[Vec<RectEvent>],
        method: Method,
        replicates: usize,
        seed: u64,
    ) -> Result<EpsilonCertificate> {
        if family.is_empty() {
            return Err(Error::InvalidParameter("event family is empty".into()));
        }
        let sample = match method {
            Method::Exact => None,
            Method::MonteCarlo => Some(self.simulate(lags, replicates, seed)?),
        };
        let kernels = self.kernels(lags)?;
        let bounds = self.bounds(lags.len() + 1, lags)?;
        let mut best: Option<(usize, GapReport, f64)> = None;
        for (i, tuple) in family.iter().enumerate() {
            self.check_config(tuple, lags)?;
            let report = match &sample {
                None => self.joint_exact_with(tuple, lags, &kernels, bounds)?,
                Some(s) => self.joint_from_sample(tuple, lags, s)?,
            };
            let score = report.gap_estimate + 3.0 * report.std_error;
            if best.as_ref().is_none_or(|b| score > b.2) {
                best = Some((i, report, score));
            }
        }
        let (worst_index, worst, epsilon) = best.expect("family is nonempty");
        Ok(EpsilonCertificate {
            epsilon,
            worst_index,
            worst,
            family_size: family.len(),
        })
    }
}

/// `sum_{s_1..s_k} pi_{s_1} q^1_{s_1} K^1_{s_1 s_2} q^2_{s_2} ...` by forward
/// recursion.
fn forward_joint(pi: &[f64], kernels: &[TransitionMatrix], masses: &[Vec<f64>]) -> f64 {
    let mut v: Vec<f64> = pi.iter().zip(&masses[0]).map(|(p, q)| p * q).collect();
    for (kernel, q) in kernels.iter().zip(&masses[1..]) {
        v = kernel.propagate(&v).iter().zip(q).map(|(a, b)| a * b).collect();
    }
    v.iter().sum()
}

/// Simulated `(S, X)` draws, `points` per replicate, replicate-major.
#[derive(Debug, Clone)]
pub struct LaggedDraws {
    points: usize,
    states: Vec<usize>,
    xs: Vec<f64>,
}

impl LaggedDraws {
    pub fn points(&self) -> usize {
        self.points
    }

    pub fn replicates(&self) -> usize {
        self.states.len() / self.points
    }

    #[inline]
    pub fn get(&self, replicate: usize, point: usize) -> (usize, f64) {
        let i = replicate * self.points + point;
        (self.states[i], self.xs[i])
    }

    /// Observations of one replicate.
    pub fn xs(&self, replicate: usize) -> &[f64] {
        &self.xs[replicate * self.points..(replicate + 1) * self.points]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonCertificate {
    pub epsilon: f64,
    pub worst_index: usize,
    pub worst: GapReport,
    pub family_size: usize,
}

/// Quantile of the stationary marginal mixture, by bisection.
pub fn marginal_quantile(model: &ModelSpec, level: f64) -> Result<f64> {
    let pi = model.stationary()?;
    let laws = model.emissions().laws();
    let cdf = |x: f64| -> f64 { pi.iter().zip(laws).map(|(p, e)| p * e.cdf(x)).sum() };
    let mut lo = laws.iter().map(|e| e.effective_support().0).fold(f64::INFINITY, f64::min);
    let mut hi = laws.iter().map(|e| e.effective_support().1).fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Per-position candidate events: single regime x half-line `(-inf, q]` and
/// all regimes x `(-inf, q]` at the `levels` marginal quantiles
/// `l / (levels + 1)`, plus the whole space.
pub fn rectangle_candidates(model: &ModelSpec, levels: usize) -> Result<Vec<RectEvent>> {
    let mut out = Vec::new();
    for l in 1..=levels {
        let q = marginal_quantile(model, l as f64 / (levels + 1) as f64)?;
        for j in 0..model.n_states() {
            out.push(RectEvent {
                states: Some(vec![j]),
                lo: None,
                hi: Some(q),
            });
        }
        out.push(RectEvent {
            states: None,
            lo: None,
            hi: Some(q),
        });
    }
    out.push(RectEvent::everything());
    Ok(out)
}

/// All `k`-tuples of [`rectangle_candidates`].
pub fn rectangle_family(model: &ModelSpec, k: usize, levels: usize) -> Result<Vec<Vec<RectEvent>>> {
    let cands = rectangle_candidates(model, levels)?;
    let mut family: Vec<Vec<RectEvent>> = vec![Vec::new()];
    for _ in 0..k {
        family = family
            .into_iter()
            .flat_map(|prefix| {
                cands.iter().map(move |c| {
                    let mut t = prefix.clone();
                    t.push(c.clone());
                    t
                })
            })
            .collect();
    }
    Ok(family)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emission::{Emission, EmissionSpec};
    use crate::regime::Initial;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(mu: f64, sigma: f64) -> Emission {
        Emission::Gaussian { mu, sigma }
    }

    fn benchmark() -> ModelSpec {
        let p = TransitionMatrix::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let e = EmissionSpec::new(vec![gaussian(-1.0, 1.0), gaussian(1.0, 1.0)]).unwrap();
        ModelSpec::new(p, e, Initial::Stationary).unwrap()
    }

    fn random_model(n: usize, seed: u64) -> ModelSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = TransitionMatrix::random_positive(n, 0.02, &mut rng);
        let laws = (0..n)
            .map(|j| match j % 3 {
                0 => gaussian(j as f64 - 1.0, 0.5 + 0.3 * j as f64),
                1 => Emission::Uniform { a: -1.0, b: j as f64 },
                _ => Emission::ShiftedExponential { rate: 1.0 + j as f64, shift: -0.5 },
            })
            .collect();
        ModelSpec::new(p, EmissionSpec::new(laws).unwrap(), Initial::Stationary).unwrap()
    }

    /// Brute-force sum over all regime assignments at the k time points.
    fn enumerate_joint(model: &ModelSpec, events: &[RectEvent], lags: &[usize]) -> f64 {
        let n = model.n_states();
        let k = events.len();
        let pi = model.stationary().unwrap();
        let kernels: Vec<_> = lags.iter().map(|&l| model.chain().n_step(l).unwrap()).collect();
        let masses: Vec<_> = events.iter().map(|e| e.regime_masses(model)).collect();
        let mut total = 0.0;
        for code in 0..n.pow(k as u32) {
            let mut s = Vec::with_capacity(k);
            let mut c = code;
            for _ in 0..k {
                s.push(c % n);
                c /= n;
            }
            let mut w = pi[s[0]] * masses[0][s[0]];
            for r in 1..k {
                w *= kernels[r - 1].get(s[r - 1], s[r]) * masses[r][s[r]];
            }
            total += w;
        }
        total
    }

    #[test]
    fn forward_recursion_matches_enumeration() {
        for seed in 0..4 {
            let model = random_model(3, seed);
            let lab = IndependenceLab::new(&model).unwrap();
            let cands = rectangle_candidates(&model, 3).unwrap();
            let events = vec![cands[0].clone(), cands[5].clone(), cands[2].clone(), cands[9].clone()];
            let lags = [1, 3, 2];
            let r = lab.joint_product_gap(&events, &lags, Method::Exact, 0, 0).unwrap();
            assert!((r.joint - enumerate_joint(&model, &events, &lags)).abs() < 1e-14);
        }
    }

    #[test]
    fn rank_one_chain_has_no_gap() {
        let p = TransitionMatrix::rank_one(&[0.3, 0.7]).unwrap();
        let e = EmissionSpec::new(vec![gaussian(-1.0, 1.0), gaussian(2.0, 1.0)]).unwrap();
        let model = ModelSpec::new(p, e, Initial::Stationary).unwrap();
        let lab = IndependenceLab::new(&model).unwrap();
        let a = RectEvent::new(Some(vec![0]), None, Some(0.5)).unwrap();
        let b = RectEvent::new(None, Some(-0.2), None).unwrap();
        for tau in 1..5 {
            assert!(lab.conditional_gap_exact(&a, &b, tau).unwrap().gap_estimate < 1e-15);
        }
        for k in 2..=5 {
            let events = vec![a.clone(); k];
            let lags = vec![1; k - 1];
            let r = lab.joint_product_gap(&events, &lags, Method::Exact, 0, 0).unwrap();
            assert!(r.gap_estimate < 1e-15);
        }
        let family = rectangle_family(&model, 2, 3).unwrap();
        let cert = lab.epsilon_certificate(&[1], &family, Method::Exact, 0, 0).unwrap();
        assert!(cert.epsilon < 1e-15);
    }

    #[test]
    fn full_event_has_no_gap() {
        let lab = IndependenceLab::new(&benchmark()).unwrap();
        let r = lab
            .conditional_gap_exact(&RectEvent::everything(), &RectEvent::state(0), 2)
            .unwrap();
        assert!(r.gap_estimate < 1e-15);
        assert!((r.joint - 1.0).abs() < 1e-15);
    }

    #[test]
    fn conditional_gap_by_hand() {
        let lab = IndependenceLab::new(&benchmark()).unwrap();
        let r = lab
            .conditional_gap_exact(&RectEvent::state(0), &RectEvent::state(0), 3)
            .unwrap();
        // p_11(3) - pi_1 = (1/3) 0.7^3
        let expected = 0.7f64.powi(3) / 3.0;
        assert!((r.gap_estimate - expected).abs() < 1e-14);
        assert!((r.theoretical_bound / (2.0 * (2.0 / 3.0) * 0.7f64.powi(3)) - 1.0).abs() < 1e-5, "{}", r.theoretical_bound);
        assert!(r.gap_estimate <= 2.0 * 0.7f64.powi(3));
        assert!(r.gap_estimate <= r.telescoping_bound + 1e-15);
    }

    #[test]
    fn two_event_identity() {
        let model = random_model(3, 17);
        let lab = IndependenceLab::new(&model).unwrap();
        let a = RectEvent::new(Some(vec![0, 2]), Some(-0.5), Some(1.5)).unwrap();
        let b = RectEvent::new(Some(vec![1]), None, Some(0.7)).unwrap();
        for tau in [1, 2, 5] {
            let cond = lab.conditional_gap_exact(&a, &b, tau).unwrap();
            let joint = lab
                .joint_product_gap(&[b.clone(), a.clone()], &[tau], Method::Exact, 0, 0)
                .unwrap();
            let pb = lab.marginal(&b);
            assert!((joint.gap_estimate - cond.gap_estimate * pb).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_gaps_respect_telescoping_bound() {
        for seed in 0..6 {
            let model = random_model(2 + seed as usize % 4, seed);
            let lab = IndependenceLab::new(&model).unwrap();
            let cands = rectangle_candidates(&model, 3).unwrap();
            for k in 2..=4 {
                for lag in [1, 2, 4] {
                    let events: Vec<_> = (0..k).map(|i| cands[(i * 7 + seed as usize) % cands.len()].clone()).collect();
                    let lags = vec![lag; k - 1];
                    let r = lab.joint_product_gap(&events, &lags, Method::Exact, 0, 0).unwrap();
                    assert!(r.gap_estimate <= r.telescoping_bound + 1e-14);
                }
            }
        }
    }

    #[test]
    fn monte_carlo_agrees_with_exact() {
        let lab = IndependenceLab::new(&benchmark()).unwrap();
        let events = vec![
            RectEvent::new(None, None, Some(0.0)).unwrap(),
            RectEvent::new(Some(vec![1]), None, None).unwrap(),
            RectEvent::new(None, Some(-0.5), None).unwrap(),
        ];
        let lags = [1, 2];
        let exact = lab.joint_product_gap(&events, &lags, Method::Exact, 0, 0).unwrap();
        let mc = lab.joint_product_gap(&events, &lags, Method::MonteCarlo, 100_000, 3).unwrap();
        assert!(mc.std_error > 0.0);
        assert!((mc.gap_estimate - exact.gap_estimate).abs() <= 4.0 * mc.std_error);
    }

    #[test]
    fn configuration_errors() {
        let lab = IndependenceLab::new(&benchmark()).unwrap();
        let e = RectEvent::everything();
        assert!(matches!(
            lab.joint_product_gap(&vec![e.clone(); 7], &[1; 6], Method::Exact, 0, 0),
            Err(Error::TooManyEventsForExact { k: 7, .. })
        ));
        assert!(lab.joint_product_gap(&[e.clone(), e.clone()], &[1, 1], Method::Exact, 0, 0).is_err());
        assert!(lab.joint_product_gap(&[e.clone()], &[], Method::Exact, 0, 0).is_err());
        let nowhere = RectEvent::new(Some(vec![0]), Some(1e6), None).unwrap();
        assert!(matches!(
            lab.conditional_gap_exact(&e, &nowhere, 1),
            Err(Error::EmptyConditioningEvent)
        ));
        assert!(RectEvent::new(None, Some(1.0), Some(1.0)).is_err());
        assert!(RectEvent::new(Some(vec![]), None, None).is_err());
        assert!(lab.conditional_gap_exact(&RectEvent::state(5), &e, 1).is_err());
        assert!(lab.epsilon_certificate(&[1], &[], Method::Exact, 0, 0).is_err());
    }

    #[test]
    fn certificate_of_singleton_family() {
        let lab = IndependenceLab::new(&benchmark()).unwrap();
        let tuple = vec![RectEvent::state(0), RectEvent::new(None, None, Some(0.3)).unwrap()];
        let direct = lab.joint_product_gap(&tuple, &[2], Method::Exact, 0, 0).unwrap();
        let cert = lab.epsilon_certificate(&[2], &[tuple], Method::Exact, 0, 0).unwrap();
        assert_eq!(cert.epsilon, direct.gap_estimate);
    }

    #[test]
    fn certificate_two_events_below_pair_bound() {
        let model = benchmark();
        let lab = IndependenceLab::new(&model).unwrap();
        let family = rectangle_family(&model, 2, 5).unwrap();
        for tau in 1..=10 {
            let cert = lab.epsilon_certificate(&[tau], &family, Method::Exact, 0, 0).unwrap();
            assert!(cert.epsilon <= 2.0 * 0.7f64.powi(tau as i32));
        }
    }

    #[test]
    fn certificate_shrinks_with_lag() {
        let model = benchmark();
        let lab = IndependenceLab::new(&model).unwrap();
        for k in 2..=3 {
            let family = rectangle_family(&model, k, 5).unwrap();
            let mut previous = f64::INFINITY;
            for tau in 1..=12 {
                let eps = lab
                    .epsilon_certificate(&vec![tau; k - 1], &family, Method::Exact, 0, 0)
                    .unwrap()
                    .epsilon;
                assert!(eps <= previous + 1e-15, "k={k} tau={tau}");
                previous = eps;
            }
        }
    }

    #[test]
    fn marginal_quantiles() {
        let model = benchmark();
        let median = marginal_quantile(&model, 0.5).unwrap();
        let pi = model.stationary().unwrap();
        let cdf: f64 = pi
            .iter()
            .zip(model.emissions().laws())
            .map(|(p, e)| p * e.cdf(median))
            .sum();
        assert!((cdf - 0.5).abs() < 1e-12);
        assert_eq!(rectangle_candidates(&model, 9).unwrap().len(), 9 * 3 + 1);
        assert_eq!(rectangle_family(&model, 2, 2).unwrap().len(), 49);
    }

    #[test]
    fn gap_report_json_and_csv() {
        let lab = IndependenceLab::new(&benchmark()).unwrap();
        let r = lab
            .joint_product_gap(&[RectEvent::state(0), RectEvent::state(1)], &[3], Method::Exact, 0, 0)
            .unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["method"], "exact");
        assert_eq!(json["std_error"], 0.0);
        let row = r.csv_row();
        assert_eq!(row.split(',').count(), GapReport::CSV_HEADER.split(',').count());
        assert!(row.starts_with("exact,2,3,3,"));
    }
}
