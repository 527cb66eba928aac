//! Finite-state Markov chains: validation, n-step kernels, ergodicity,
//! stationary laws and geometric mixing profiles.
//!
//! The mixing profile records `sup_gap(s) = max_{i,j} |P^s_ij - pi_j|` and a
//! pair `(alpha, c)` with `alpha` the second-largest eigenvalue modulus (SLEM)
//! and `c` the smallest prefactor making `sup_gap(s) <= c * alpha^s` on the
//! recorded range.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums must equal one to within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Maximum-norm tolerance on `pi P = pi`.
pub const STATIONARITY_TOL: f64 = 1e-10;
/// Gaps at or below this level are indistinguishable from accumulated
/// rounding in dense matrix powers and are excluded from prefactor fitting.
pub const GAP_FLOOR: f64 = 1e-12;

/// Row-stochastic matrix of regime transition probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct TransitionMatrix {
    n: usize,
    p: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    n_states: usize,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<RawMatrix> for TransitionMatrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        if raw.rows.len() != raw.n_states {
            return Err(Error::InvalidMatrix(format!(
                "n_states = {} but {} rows given",
                raw.n_states,
                raw.rows.len()
            )));
        }
        TransitionMatrix::new(raw.rows)
    }
}

impl From<TransitionMatrix> for RawMatrix {
    fn from(m: TransitionMatrix) -> Self {
        RawMatrix {
            n_states: m.n,
            rows: m.rows(),
        }
    }
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidMatrix("matrix has no states".into()));
        }
        let mut p = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidMatrix(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidMatrix(format!(
                        "entry ({i},{j}) = {v} is not a probability"
                    )));
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidMatrix(format!(
                    "row {i} sums to {sum}, not 1"
                )));
            }
            p.extend_from_slice(row);
        }
        Ok(TransitionMatrix { n, p })
    }

    pub fn identity(n: usize) -> Self {
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            p[i * n + i] = 1.0;
        }
        TransitionMatrix { n, p }
    }

    /// Every row equal to `row`: the chain forgets its state in one step.
    pub fn rank_one(row: &[f64]) -> Result<Self> {
        TransitionMatrix::new(vec![row.to_vec(); row.len()])
    }

    /// Random matrix with strictly positive entries (each at least
    /// `min_entry` before normalisation), hence ergodic.
    pub fn random_positive<R: Rng + ?Sized>(n: usize, min_entry: f64, rng: &mut R) -> Self {
        let mut p = Vec::with_capacity(n * n);
        for _ in 0..n {
            let row: Vec<f64> = (0..n).map(|_| min_entry + rng.random::<f64>()).collect();
            let sum: f64 = row.iter().sum();
            p.extend(row.into_iter().map(|v| v / sum));
        }
        TransitionMatrix { n, p }
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.p[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.p)
    }

    /// Matrix product `self * other`. The product of stochastic matrices is
    /// stochastic, so no re-validation happens here.
    pub fn compose(&self, other: &TransitionMatrix) -> TransitionMatrix {
        assert_eq!(self.n, other.n, "dimension mismatch");
        let n = self.n;
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            for l in 0..n {
                let a = self.get(i, l);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    p[i * n + j] += a * other.get(l, j);
                }
            }
        }
        TransitionMatrix { n, p }
    }

    /// Row vector times matrix: `(v P)_j = sum_i v_i p_ij`.
    pub fn propagate(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &pij) in out.iter_mut().zip(self.row(i)) {
                *o += vi * pij;
            }
        }
        out
    }

    /// The `s`-step kernel `P^s`.
    pub fn n_step(&self, s: usize) -> Result<TransitionMatrix> {
        if s == 0 {
            return Err(Error::InvalidParameter("n_step requires s >= 1".into()));
        }
        let mut result: Option<TransitionMatrix> = None;
        let mut base = self.clone();
        let mut e = s;
        loop {
            if e & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(r) => r.compose(&base),
                });
            }
            e >>= 1;
            if e == 0 {
                break;
            }
            base = base.compose(&base);
        }
        Ok(result.expect("s >= 1"))
    }

    /// Irreducibility and period of the support graph.
    pub fn is_ergodic(&self) -> ErgodicityReport {
        let n = self.n;
        let succ: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| self.get(i, j) > 0.0).collect())
            .collect();
        let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, s) in succ.iter().enumerate() {
            for &j in s {
                pred[j].push(i);
            }
        }
        let forward = bfs_levels(&succ, 0);
        let backward = bfs_levels(&pred, 0);
        let unreachable: Vec<usize> = (0..n)
            .filter(|&i| forward[i].is_none() || backward[i].is_none())
            .collect();
        if !unreachable.is_empty() {
            return ErgodicityReport {
                irreducible: false,
                period: None,
                ergodic: false,
                diagnostic: format!(
                    "states {unreachable:?} do not communicate with state 0"
                ),
            };
        }
        // For an irreducible chain the period is the gcd over all support
        // edges (u, v) of level(u) + 1 - level(v).
        let mut period = 0usize;
        for (u, s) in succ.iter().enumerate() {
            let lu = forward[u].unwrap();
            for &v in s {
                let lv = forward[v].unwrap();
                period = gcd(period, (lu + 1).abs_diff(lv));
            }
        }
        let ergodic = period == 1;
        ErgodicityReport {
            irreducible: true,
            period: Some(period),
            ergodic,
            diagnostic: if ergodic {
                "irreducible and aperiodic".into()
            } else {
                format!("irreducible with period {period}")
            },
        }
    }

    fn require_ergodic(&self) -> Result<()> {
        let report = self.is_ergodic();
        if report.ergodic {
            Ok(())
        } else {
            Err(Error::NotErgodic(report.diagnostic))
        }
    }

    /// Unique stationary law of an ergodic chain, from a dense solve of
    /// `(P^T - I) x = 0` with the last equation replaced by `sum x = 1`.
    pub fn stationary_distribution(&self) -> Result<StationaryDistribution> {
        self.require_ergodic()?;
        let n = self.n;
        let mut a = self.to_dmatrix().transpose() - DMatrix::<f64>::identity(n, n);
        let mut b = nalgebra::DVector::<f64>::zeros(n);
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        b[n - 1] = 1.0;
        let x = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::NotErgodic("singular stationary system".into()))?;
        let mut pi: Vec<f64> = x.iter().map(|&v| v.max(0.0)).collect();
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|v| *v /= total);
        Ok(StationaryDistribution { pi })
    }

    /// Second-largest eigenvalue modulus. The eigenvalue nearest to 1 is
    /// dropped; moduli below 1e-12 are reported as zero.
    pub fn slem(&self) -> f64 {
        if self.n == 1 {
            return 0.0;
        }
        let eig = self.to_dmatrix().complex_eigenvalues();
        let mut values: Vec<_> = eig.iter().copied().collect();
        let unit = values
            .iter()
            .enumerate()
            .min_by(|a, b| {
                let da = (a.1 - nalgebra::Complex::new(1.0, 0.0)).norm();
                let db = (b.1 - nalgebra::Complex::new(1.0, 0.0)).norm();
                da.total_cmp(&db)
            })
            .map(|(i, _)| i)
            .unwrap();
        values.remove(unit);
        let alpha = values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if alpha < 1e-12 {
            0.0
        } else {
            alpha.min(1.0)
        }
    }

    /// Geometric mixing profile over `s = 1..=s_max`, computed from exact
    /// matrix powers.
    pub fn mixing_rate(&self, s_max: usize) -> Result<MixingProfile> {
        if s_max < 2 {
            return Err(Error::InvalidParameter("mixing_rate requires s_max >= 2".into()));
        }
        let pi = self.stationary_distribution()?;
        let mut alpha = self.slem();
        let mut gaps = Vec::with_capacity(s_max);
        let mut power = self.clone();
        for s in 1..=s_max {
            if s > 1 {
                power = power.compose(self);
            }
            gaps.push(GapPoint {
                s,
                sup_gap: sup_gap(&power, pi.probs()),
            });
        }
        if alpha == 0.0 && gaps.iter().any(|g| g.sup_gap > GAP_FLOOR) {
            // defective zero eigenvalue: fall back to the smallest rate the
            // recorded gaps allow
            alpha = gaps
                .iter()
                .filter(|g| g.sup_gap > GAP_FLOOR)
                .map(|g| g.sup_gap.powf(1.0 / g.s as f64))
                .fold(f64::EPSILON.sqrt(), f64::max)
                .min(1.0);
        }
        let c = gaps
            .iter()
            .filter(|g| g.sup_gap > GAP_FLOOR)
            .map(|g| g.sup_gap / alpha.powi(g.s as i32))
            .fold(0.0, f64::max);
        Ok(MixingProfile {
            alpha,
            c,
            stationary: pi.pi,
            gaps,
        })
    }
}

/// `max_{i,j} |K_ij - pi_j|`.
pub fn sup_gap(kernel: &TransitionMatrix, pi: &[f64]) -> f64 {
    let n = kernel.n_states();
    let mut worst = 0.0f64;
    for i in 0..n {
        for (j, &pj) in pi.iter().enumerate() {
            worst = worst.max((kernel.get(i, j) - pj).abs());
        }
    }
    worst
}

fn bfs_levels(adj: &[Vec<usize>], start: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    let mut queue = std::collections::VecDeque::new();
    level[start] = Some(0);
    queue.push_back(start);
    while let Some(u) = queue.pop_front() {
        let lu = level[u].unwrap();
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = Some(lu + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErgodicityReport {
    pub irreducible: bool,
    /// `None` when the chain is reducible.
    pub period: Option<usize>,
    pub ergodic: bool,
    pub diagnostic: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDistribution {
    pi: Vec<f64>,
}

impl StationaryDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.pi
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.pi
    }

    /// `max_j |(pi P)_j - pi_j|`.
    pub fn residual(&self, p: &TransitionMatrix) -> f64 {
        p.propagate(&self.pi)
            .iter()
            .zip(&self.pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Power-iteration estimate of the stationary law (`v <- v P` from uniform).
/// Independent of the dense solve and used to cross-check it.
pub fn stationary_by_power_iteration(p: &TransitionMatrix, max_iter: usize) -> Vec<f64> {
    let n = p.n_states();
    let mut v = vec![1.0 / n as f64; n];
    for _ in 0..max_iter {
        let next = p.propagate(&v);
        let delta = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if delta < 1e-16 {
            break;
        }
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub s: usize,
    pub sup_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingProfile {
    pub alpha: f64,
    pub c: f64,
    pub stationary: Vec<f64>,
    pub gaps: Vec<GapPoint>,
}

impl MixingProfile {
    /// `c * alpha^s`.
    pub fn bound(&self, s: usize) -> f64 {
        if s == 0 {
            return self.c.max(1.0);
        }
        self.c * self.alpha.powi(s as i32)
    }

    /// Steps whose recorded gap exceeds `c * alpha^s` beyond rounding.
    pub fn violations(&self) -> Vec<usize> {
        self.gaps
            .iter()
            .filter(|g| g.sup_gap > self.bound(g.s) * (1.0 + 1e-9) + GAP_FLOOR)
            .map(|g| g.s)
            .collect()
    }

    /// Steps where the gap grows relative to the previous step.
    pub fn monotonicity_breaks(&self) -> Vec<usize> {
        self.gaps
            .windows(2)
            .filter(|w| w[1].sup_gap > w[0].sup_gap + GAP_FLOOR)
            .map(|w| w[1].s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_state() -> TransitionMatrix {
        TransitionMatrix::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap()
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(TransitionMatrix::new(vec![vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
        assert!(TransitionMatrix::new(vec![vec![1.2, -0.2], vec![0.5, 0.5]]).is_err());
        assert!(TransitionMatrix::new(vec![vec![1.0]; 2]).is_err());
        assert!(TransitionMatrix::new(vec![]).is_err());
    }

    #[test]
    fn json_shape() {
        let p = two_state();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"n_states":2,"rows":[[0.9,0.1],[0.2,0.8]]}"#);
        let back: TransitionMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let bad = r#"{"n_states":3,"rows":[[0.9,0.1],[0.2,0.8]]}"#;
        assert!(serde_json::from_str::<TransitionMatrix>(bad).is_err());
    }

    #[test]
    fn stationary_examples() {
        let half = TransitionMatrix::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let pi = half.stationary_distribution().unwrap();
        assert!((pi.probs()[0] - 0.5).abs() < 1e-15);

        let pi = two_state().stationary_distribution().unwrap();
        // closed form (q/(p+q), p/(p+q)) with p = 0.1, q = 0.2
        assert!((pi.probs()[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((pi.probs()[1] - 1.0 / 3.0).abs() < 1e-14);
        let p50 = two_state().n_step(50).unwrap();
        assert!((p50.get(1, 0) - 2.0 / 3.0).abs() < 1e-7);

        assert!(matches!(
            TransitionMatrix::identity(2).stationary_distribution(),
            Err(Error::NotErgodic(_))
        ));
    }

    #[test]
    fn n_step_examples() {
        let p = two_state();
        assert_eq!(p.n_step(1).unwrap(), p);
        let flip = TransitionMatrix::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(flip.n_step(2).unwrap(), TransitionMatrix::identity(2));
        let p2 = p.n_step(2).unwrap();
        let expected = [[0.83, 0.17], [0.34, 0.66]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((p2.get(i, j) - expected[i][j]).abs() < 1e-15);
            }
        }
        assert!(p.n_step(0).is_err());
    }

    #[test]
    fn ergodicity_examples() {
        assert!(two_state().is_ergodic().ergodic);
        let flip = TransitionMatrix::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let r = flip.is_ergodic();
        assert!(r.irreducible && !r.ergodic);
        assert_eq!(r.period, Some(2));
        let r = TransitionMatrix::identity(2).is_ergodic();
        assert!(!r.irreducible && !r.ergodic);
        assert!(TransitionMatrix::identity(1).is_ergodic().ergodic);
    }

    #[test]
    fn mixing_examples() {
        let prof = two_state().mixing_rate(30).unwrap();
        assert!((prof.alpha - 0.7).abs() < 1e-12);
        // P^s_21 - pi_1 = -(2/3) 0.7^s dominates, so c = 2/3
        assert!((prof.c - 2.0 / 3.0).abs() < 1e-9);
        assert!(prof.violations().is_empty());
        assert!(prof.monotonicity_breaks().is_empty());

        let rank_one = TransitionMatrix::rank_one(&[0.2, 0.3, 0.5]).unwrap();
        let prof = rank_one.mixing_rate(10).unwrap();
        assert_eq!(prof.alpha, 0.0);
        assert!(prof.gaps.iter().all(|g| g.sup_gap <= GAP_FLOOR));

        assert!(TransitionMatrix::identity(2).mixing_rate(10).is_err());
        assert!(two_state().mixing_rate(1).is_err());
    }

    #[test]
    fn random_four_state_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = TransitionMatrix::random_positive(4, 0.05, &mut rng);
        let prof = p.mixing_rate(50).unwrap();
        let pi = p.stationary_distribution().unwrap();
        for s in 1..=50 {
            let exact = sup_gap(&p.n_step(s).unwrap(), pi.probs());
            assert!(exact <= prof.bound(s) * (1.0 + 1e-9) + GAP_FLOOR, "s = {s}");
        }
    }

    #[test]
    fn three_cycle_with_loop_is_aperiodic() {
        let p = TransitionMatrix::new(vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.5, 0.0, 0.5],
        ])
        .unwrap();
        assert!(p.is_ergodic().ergodic);
        let cyc = TransitionMatrix::new(vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(cyc.is_ergodic().period, Some(3));
    }
}
