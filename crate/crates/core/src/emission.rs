//! Per-regime emission laws with closed-form moments.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// Tolerance for the construction-time check that each density integrates to 1.
pub const DENSITY_MASS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Emission {
    Gaussian { mu: f64, sigma: f64 },
    Uniform { a: f64, b: f64 },
    /// Density `rate * exp(-rate (x - shift))` on `x >= shift`.
    ShiftedExponential { rate: f64, shift: f64 },
}

impl Emission {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Emission::Gaussian { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma > 0.0,
            Emission::Uniform { a, b } => a.is_finite() && b.is_finite() && b > a,
            Emission::ShiftedExponential { rate, shift } => {
                rate.is_finite() && shift.is_finite() && rate > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("bad emission parameters {self:?}")))
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Emission::Gaussian { mu, sigma } => normal::pdf((x - mu) / sigma) / sigma,
            Emission::Uniform { a, b } => {
                if (a..=b).contains(&x) {
                    1.0 / (b - a)
                } else {
                    0.0
                }
            }
            Emission::ShiftedExponential { rate, shift } => {
                if x >= shift {
                    rate * (-rate * (x - shift)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Emission::Gaussian { mu, sigma } => normal::cdf((x - mu) / sigma),
            Emission::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            Emission::ShiftedExponential { rate, shift } => {
                if x <= shift {
                    0.0
                } else {
                    -(-rate * (x - shift)).exp_m1()
                }
            }
        }
    }

    pub fn sf(&self, x: f64) -> f64 {
        match *self {
            Emission::Gaussian { mu, sigma } => normal::sf((x - mu) / sigma),
            Emission::Uniform { a, b } => ((b - x) / (b - a)).clamp(0.0, 1.0),
            Emission::ShiftedExponential { rate, shift } => {
                if x <= shift {
                    1.0
                } else {
                    (-rate * (x - shift)).exp()
                }
            }
        }
    }

    /// `P(lo < Y <= hi)`; endpoints may be infinite.
    pub fn prob_interval(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        if let Emission::Gaussian { mu, sigma } = *self {
            return normal::mass((lo - mu) / sigma, (hi - mu) / sigma);
        }
        // pick the form that avoids cancellation in the far tail
        let p = if lo >= self.mean() {
            self.sf(lo) - self.sf(hi)
        } else {
            self.cdf(hi) - self.cdf(lo)
        };
        p.clamp(0.0, 1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Emission::Gaussian { mu, sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                mu + sigma * z
            }
            Emission::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
            Emission::ShiftedExponential { rate, shift } => {
                let e: f64 = rng.sample(Exp1);
                shift + e / rate
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Emission::Gaussian { mu, .. } => mu,
            Emission::Uniform { a, b } => 0.5 * (a + b),
            Emission::ShiftedExponential { rate, shift } => shift + 1.0 / rate,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Emission::Gaussian { sigma, .. } => sigma * sigma,
            Emission::Uniform { a, b } => (b - a) * (b - a) / 12.0,
            Emission::ShiftedExponential { rate, .. } => 1.0 / (rate * rate),
        }
    }

    /// `E (Y - c)^2`.
    pub fn second_moment_about(&self, c: f64) -> f64 {
        let d = self.mean() - c;
        self.variance() + d * d
    }

    /// `E |Y - c|^3` in closed form.
    pub fn abs_third_moment_about(&self, c: f64) -> f64 {
        match *self {
            Emission::Gaussian { mu, sigma } => {
                // Y - c = d + s Z; split at Z = a where d + s a = 0
                let (d, s) = (mu - c, sigma);
                let a = -d / s;
                let (phi, upper, lower) = (normal::pdf(a), normal::sf(a), normal::cdf(a));
                let up = [upper, phi, a * phi + upper, (a * a + 2.0) * phi];
                let lo = [lower, -phi, lower - a * phi, -(a * a + 2.0) * phi];
                let cube = |m: &[f64; 4]| {
                    d * d * d * m[0] + 3.0 * d * d * s * m[1] + 3.0 * d * s * s * m[2] + s * s * s * m[3]
                };
                cube(&up) - cube(&lo)
            }
            Emission::Uniform { a, b } => {
                let w = 4.0 * (b - a);
                if c <= a {
                    ((b - c).powi(4) - (a - c).powi(4)) / w
                } else if c >= b {
                    ((c - a).powi(4) - (c - b).powi(4)) / w
                } else {
                    ((c - a).powi(4) + (b - c).powi(4)) / w
                }
            }
            Emission::ShiftedExponential { rate, shift } => {
                let d = c - shift;
                let l = rate;
                let central = 6.0 / l.powi(3) - 6.0 * d / (l * l) + 3.0 * d * d / l - d.powi(3);
                if d <= 0.0 {
                    central
                } else {
                    // E|U-d|^3 = E(U-d)^3 + 2 E[(d-U)^3; U < d]
                    let below = d.powi(3) - 3.0 * d * d / l + 6.0 * d / (l * l) - 6.0 / l.powi(3)
                        + 6.0 * (-l * d).exp() / l.powi(3);
                    central + 2.0 * below
                }
            }
        }
    }

    /// `E[(Y - c)^2 ; lo < Y < hi]`; endpoints may be infinite.
    pub fn partial_second_moment(&self, c: f64, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        match *self {
            Emission::Gaussian { mu, sigma } => {
                let (d, s) = (mu - c, sigma);
                let za = (lo - mu) / s;
                let zb = (hi - mu) / s;
                let m0 = normal::mass(za, zb);
                let pa = if za.is_finite() { normal::pdf(za) } else { 0.0 };
                let pb = if zb.is_finite() { normal::pdf(zb) } else { 0.0 };
                let m1 = pa - pb;
                let apa = if za.is_finite() { za * pa } else { 0.0 };
                let bpb = if zb.is_finite() { zb * pb } else { 0.0 };
                let m2 = m0 + apa - bpb;
                (d * d * m0 + 2.0 * d * s * m1 + s * s * m2).max(0.0)
            }
            Emission::Uniform { a, b } => {
                let l = lo.max(a);
                let h = hi.min(b);
                if h <= l {
                    0.0
                } else {
                    ((h - c).powi(3) - (l - c).powi(3)) / (3.0 * (b - a))
                }
            }
            Emission::ShiftedExponential { rate, shift } => {
                let l = lo.max(shift);
                if hi <= l {
                    return 0.0;
                }
                // antiderivative of (y-c)^2 rate e^{-rate (y-shift)}
                let anti = |y: f64| -> f64 {
                    if y.is_infinite() {
                        return 0.0;
                    }
                    let u = y - c;
                    -(-rate * (y - shift)).exp()
                        * (u * u + 2.0 * u / rate + 2.0 / (rate * rate))
                };
                (anti(hi) - anti(l)).max(0.0)
            }
        }
    }

    /// `E exp(i t Y)`.
    pub fn char_fn(&self, t: f64) -> Complex64 {
        match *self {
            Emission::Gaussian { mu, sigma } => {
                Complex64::from_polar((-0.5 * sigma * sigma * t * t).exp(), mu * t)
            }
            Emission::Uniform { a, b } => {
                if t == 0.0 {
                    return Complex64::new(1.0, 0.0);
                }
                let num = Complex64::from_polar(1.0, t * b) - Complex64::from_polar(1.0, t * a);
                num / Complex64::new(0.0, t * (b - a))
            }
            Emission::ShiftedExponential { rate, shift } => {
                Complex64::from_polar(1.0, t * shift) * rate / Complex64::new(rate, -t)
            }
        }
    }

    /// Finite interval carrying all but a negligible part of the mass, with
    /// density discontinuities only at its ends.
    pub fn effective_support(&self) -> (f64, f64) {
        match *self {
            Emission::Gaussian { mu, sigma } => (mu - 12.0 * sigma, mu + 12.0 * sigma),
            Emission::Uniform { a, b } => (a, b),
            Emission::ShiftedExponential { rate, shift } => (shift, shift + 45.0 / rate),
        }
    }

    /// Largest `|Y - c|` on the support, if bounded.
    pub fn max_abs_deviation(&self, c: f64) -> Option<f64> {
        match *self {
            Emission::Uniform { a, b } => Some((a - c).abs().max((b - c).abs())),
            _ => None,
        }
    }
}

/// Composite Simpson rule on `[lo, hi]` with `intervals` (made even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, intervals: usize) -> f64 {
    let n = intervals.max(2) + intervals % 2;
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let x = lo + h * i as f64;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    acc * h / 3.0
}

/// One emission law per regime, indexed by state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Emission>", into = "Vec<Emission>")]
pub struct EmissionSpec(Vec<Emission>);

impl TryFrom<Vec<Emission>> for EmissionSpec {
    type Error = Error;

    fn try_from(v: Vec<Emission>) -> Result<Self> {
        EmissionSpec::new(v)
    }
}

impl From<EmissionSpec> for Vec<Emission> {
    fn from(e: EmissionSpec) -> Self {
        e.0
    }
}

impl EmissionSpec {
    pub fn new(laws: Vec<Emission>) -> Result<Self> {
        if laws.is_empty() {
            return Err(Error::InvalidModel("no emission laws".into()));
        }
        for law in &laws {
            law.validate()?;
            let (lo, hi) = law.effective_support();
            let mass = simpson(|x| law.pdf(x), lo, hi, 4000);
            if (mass - 1.0).abs() > DENSITY_MASS_TOL {
                return Err(Error::InvalidModel(format!(
                    "density of {law:?} integrates to {mass}"
                )));
            }
        }
        Ok(EmissionSpec(laws))
    }

    pub fn n_states(&self) -> usize {
        self.0.len()
    }

    pub fn laws(&self) -> &[Emission] {
        &self.0
    }

    pub fn get(&self, state: usize) -> &Emission {
        &self.0[state]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn laws() -> Vec<Emission> {
        vec![
            Emission::Gaussian { mu: 0.7, sigma: 1.3 },
            Emission::Uniform { a: -1.0, b: 2.5 },
            Emission::ShiftedExponential { rate: 1.7, shift: -0.4 },
        ]
    }

    fn quad<F: Fn(f64) -> f64>(law: &Emission, f: F) -> f64 {
        let (lo, hi) = law.effective_support();
        simpson(|x| f(x) * law.pdf(x), lo, hi, 200_000)
    }

    #[test]
    fn moments_match_quadrature() {
        for law in laws() {
            assert!((quad(&law, |x| x) - law.mean()).abs() < 1e-8, "{law:?}");
            let m = law.mean();
            assert!((quad(&law, |x| (x - m).powi(2)) - law.variance()).abs() < 1e-8);
            for c in [-3.0, -0.2, 0.0, 0.45, 1.1, 4.0] {
                let q = quad(&law, |x| (x - c).abs().powi(3));
                let exact = law.abs_third_moment_about(c);
                assert!((q - exact).abs() < 1e-6 * exact.max(1.0), "{law:?} c={c}: {q} vs {exact}");
                for (lo, hi) in [(-1.0, 0.5), (0.2, f64::INFINITY), (f64::NEG_INFINITY, -0.3)] {
                    let q = quad(&law, |x| if x > lo && x < hi { (x - c).powi(2) } else { 0.0 });
                    let exact = law.partial_second_moment(c, lo, hi);
                    // the indicator makes the quadrature first-order accurate
                    assert!((q - exact).abs() < 1e-3, "{law:?} c={c} ({lo},{hi}): {q} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn interval_probabilities() {
        for law in laws() {
            assert!((law.prob_interval(f64::NEG_INFINITY, f64::INFINITY) - 1.0).abs() < 1e-15);
            let split = law.prob_interval(f64::NEG_INFINITY, 0.3) + law.prob_interval(0.3, f64::INFINITY);
            assert!((split - 1.0).abs() < 1e-14);
            assert_eq!(law.prob_interval(1.0, 1.0), 0.0);
        }
    }

    #[test]
    fn char_fn_matches_quadrature() {
        for law in laws() {
            for t in [0.0, 0.5, 1.0, 2.0] {
                let re = quad(&law, |x| (t * x).cos());
                let im = quad(&law, |x| (t * x).sin());
                let exact = law.char_fn(t);
                assert!((exact.re - re).abs() < 1e-6 && (exact.im - im).abs() < 1e-6, "{law:?} t={t}");
            }
        }
    }

    #[test]
    fn sampling_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for law in laws() {
            let n = 200_000;
            let mean = (0..n).map(|_| law.sample(&mut rng)).sum::<f64>() / n as f64;
            let se = (law.variance() / n as f64).sqrt();
            assert!((mean - law.mean()).abs() < 5.0 * se, "{law:?}");
        }
    }

    #[test]
    fn spec_validation() {
        assert!(EmissionSpec::new(laws()).is_ok());
        assert!(EmissionSpec::new(vec![]).is_err());
        assert!(EmissionSpec::new(vec![Emission::Gaussian { mu: 0.0, sigma: 0.0 }]).is_err());
        assert!(EmissionSpec::new(vec![Emission::Uniform { a: 1.0, b: 1.0 }]).is_err());
        assert!(EmissionSpec::new(vec![Emission::ShiftedExponential { rate: -1.0, shift: 0.0 }]).is_err());
        let json = r#"[{"family":"gaussian","mu":0.0,"sigma":1.0},{"family":"shifted_exponential","rate":2.0,"shift":1.0}]"#;
        let spec: EmissionSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.n_states(), 2);
    }
}
