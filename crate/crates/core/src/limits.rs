//! Theoretical limit laws and the exact identities relating them.
//!
//! The hitting-time and return-time distribution functions of a process
//! determine each other through
//!
//! ```text
//! F^[d+1](t0, t1..td) = ∫_0^t0 [ F̃^[d](t1..td) - F̃^[d+1](s, t1..td) ] ds
//! ```
//!
//! and the compound law `F̃(t) = (1-θ) + θ(1 - e^{-θt})` is the unique
//! solution of `F̃(t) = (1-θ) + θ ∫_0^t (1 - F̃(s)) ds`. Both are evaluated
//! here on exact laws and on empirical step functions, where every integral
//! is a finite sum of rectangles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::EmpiricalLaw;

/// A theoretical limit law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LimitLaw {
    /// Standard exponential.
    Exp,
    /// `(1-θ) + θ(1 - e^{-θt})`: atom `1-θ` at zero, otherwise `Exp(θ)`.
    ExpTheta(f64),
    Uniform01,
    /// pmf on `{0, .., m-1}`.
    Bernoulli(Vec<f64>),
    /// iid vector of `dim` copies of a one-dimensional law.
    ProductIid(Box<LimitLaw>, usize),
    /// Poisson count with mean `t`.
    PoissonCount(f64),
    /// Compound Poisson count: Poisson(`t`) batches of geometric(θ) size.
    CompoundGeomCount(f64, f64),
}

impl LimitLaw {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self {
            LimitLaw::ExpTheta(theta) if !(*theta > 0.0 && *theta <= 1.0) => {
                bad(format!("θ = {theta} not in (0,1]"))
            }
            LimitLaw::Bernoulli(p) => {
                let s: f64 = p.iter().sum();
                if p.is_empty() || p.iter().any(|v| *v < 0.0) || (s - 1.0).abs() > 1e-12 {
                    bad(format!("Bernoulli probabilities {p:?} do not sum to 1"))
                } else {
                    Ok(())
                }
            }
            LimitLaw::ProductIid(inner, d) => {
                if *d == 0 || matches!(**inner, LimitLaw::ProductIid(..)) {
                    bad("product law needs a 1-d component and dim >= 1".into())
                } else {
                    inner.validate()
                }
            }
            LimitLaw::PoissonCount(t) if !(*t >= 0.0) => bad(format!("t = {t} < 0")),
            LimitLaw::CompoundGeomCount(t, theta) => {
                if !(*t >= 0.0) || !(*theta > 0.0 && *theta <= 1.0) {
                    bad(format!("compound law needs t >= 0, θ in (0,1], got {t}, {theta}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            LimitLaw::ProductIid(_, d) => *d,
            _ => 1,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(
            self,
            LimitLaw::Bernoulli(_) | LimitLaw::PoissonCount(_) | LimitLaw::CompoundGeomCount(..)
        )
    }

    /// Probability mass at the integer `k` (zero for continuous laws).
    pub fn pmf(&self, k: u64) -> f64 {
        match self {
            LimitLaw::Bernoulli(p) => p.get(k as usize).copied().unwrap_or(0.0),
            LimitLaw::PoissonCount(t) => poisson_pmf(*t, k),
            LimitLaw::CompoundGeomCount(t, theta) => compound_geom_pmf(*t, *theta, k),
            _ => 0.0,
        }
    }

    /// One-dimensional distribution function (the diagonal for product laws).
    pub fn cdf(&self, t: f64) -> f64 {
        if t.is_nan() {
            return f64::NAN;
        }
        match self {
            LimitLaw::Exp => {
                if t < 0.0 {
                    0.0
                } else {
                    -(-t).exp_m1()
                }
            }
            LimitLaw::ExpTheta(theta) => {
                if t < 0.0 {
                    0.0
                } else {
                    1.0 - theta * (-theta * t).exp()
                }
            }
            LimitLaw::Uniform01 => t.clamp(0.0, 1.0),
            LimitLaw::ProductIid(inner, d) => inner.cdf(t).powi(*d as i32),
            LimitLaw::Bernoulli(_) | LimitLaw::PoissonCount(_) | LimitLaw::CompoundGeomCount(..) => {
                if t < 0.0 {
                    return 0.0;
                }
                if t.is_infinite() {
                    return 1.0;
                }
                let kmax = t.floor() as u64;
                self.discrete_cdf(kmax)
            }
        }
    }

    /// Left limit `F(t-)`.
    pub fn cdf_left(&self, t: f64) -> f64 {
        match self {
            LimitLaw::ExpTheta(_) if t == 0.0 => 0.0,
            LimitLaw::Bernoulli(_) | LimitLaw::PoissonCount(_) | LimitLaw::CompoundGeomCount(..) => {
                if t <= 0.0 {
                    0.0
                } else if t.fract() == 0.0 {
                    self.discrete_cdf(t as u64 - 1)
                } else {
                    self.cdf(t)
                }
            }
            _ => self.cdf(t),
        }
    }

    fn discrete_cdf(&self, kmax: u64) -> f64 {
        self.pmf_table(kmax).iter().sum::<f64>().min(1.0)
    }

    /// `pmf(0..=kmax)`, cut where the remaining mass is below `1e-17`.
    fn pmf_table(&self, kmax: u64) -> Vec<f64> {
        match self {
            LimitLaw::Bernoulli(p) => p.iter().take(kmax as usize + 1).copied().collect(),
            LimitLaw::PoissonCount(t) => {
                let cut = (t + 15.0 * t.sqrt() + 40.0).ceil() as u64;
                let mut out = Vec::new();
                let mut p = (-t).exp();
                for k in 0..=kmax.min(cut) {
                    if k > 0 {
                        p *= t / k as f64;
                    }
                    out.push(p);
                }
                out
            }
            LimitLaw::CompoundGeomCount(t, theta) => {
                let cut = (40.0 * (1.0 + t) / theta).ceil() as u64;
                compound_geom_pmf_vec(*t, *theta, kmax.min(cut) as usize)
            }
            _ => Vec::new(),
        }
    }

    /// `∫_0^t F(s) ds` for one-dimensional laws.
    fn cdf_integral(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            LimitLaw::Exp => t + (-t).exp_m1(),
            LimitLaw::ExpTheta(theta) => t + (-theta * t).exp_m1(),
            LimitLaw::Uniform01 => {
                if t <= 1.0 {
                    0.5 * t * t
                } else {
                    t - 0.5
                }
            }
            LimitLaw::ProductIid(..) => f64::NAN,
            _ => {
                self.pmf_table(t.floor() as u64)
                    .iter()
                    .enumerate()
                    .map(|(k, p)| p * (t - k as f64))
                    .sum()
            }
        }
    }
}

/// A (possibly multivariate) distribution function that can be integrated
/// along its first axis.
pub trait DistributionFunction {
    fn dim(&self) -> usize;
    /// Marginal distribution function of the first `t.len()` coordinates.
    fn cdf_prefix(&self, t: &[f64]) -> f64;
    /// `∫_0^{t0} F(s, rest) ds` where `rest` covers coordinates `1..=rest.len()`.
    fn integral_first_axis(&self, t0: f64, rest: &[f64]) -> f64;
}

impl DistributionFunction for EmpiricalLaw {
    fn dim(&self) -> usize {
        EmpiricalLaw::dim(self)
    }
    fn cdf_prefix(&self, t: &[f64]) -> f64 {
        EmpiricalLaw::cdf_prefix(self, t)
    }
    fn integral_first_axis(&self, t0: f64, rest: &[f64]) -> f64 {
        EmpiricalLaw::integral_first_axis(self, t0, rest)
    }
}

impl DistributionFunction for LimitLaw {
    fn dim(&self) -> usize {
        LimitLaw::dim(self)
    }
    fn cdf_prefix(&self, t: &[f64]) -> f64 {
        match self {
            LimitLaw::ProductIid(inner, _) => t.iter().map(|&s| inner.cdf(s)).product(),
            _ => t.first().map_or(1.0, |&s| self.cdf(s)),
        }
    }
    fn integral_first_axis(&self, t0: f64, rest: &[f64]) -> f64 {
        match self {
            LimitLaw::ProductIid(inner, _) => {
                inner.cdf_integral(t0) * rest.iter().map(|&s| inner.cdf(s)).product::<f64>()
            }
            _ => self.cdf_integral(t0),
        }
    }
}

/// Predicted hitting-time distribution function `F^[d+1](t0, .., td)` from
/// return-time marginals `F̃^[d]` and `F̃^[d+1]`.
pub fn duality_predict_hitting<L: DistributionFunction + ?Sized>(
    ret_law: &L,
    d: usize,
    t_vector: &[f64],
) -> Result<f64> {
    if t_vector.len() != d + 1 {
        return Err(Error::DimensionMismatch {
            expected: d + 1,
            got: t_vector.len(),
        });
    }
    if ret_law.dim() < d + 1 {
        return Err(Error::DimensionMismatch {
            expected: d + 1,
            got: ret_law.dim(),
        });
    }
    let t0 = t_vector[0].max(0.0);
    let rest = &t_vector[1..];
    let lower = if d == 0 { 1.0 } else { ret_law.cdf_prefix(rest) };
    Ok(t0 * lower - ret_law.integral_first_axis(t0, rest))
}

/// `sup_{t ∈ grid} |F̃(t) - (1-θ) - θ ∫_0^t (1 - F̃(s)) ds|`.
pub fn fixed_point_residual<L: DistributionFunction + ?Sized>(
    ret_law: &L,
    theta: f64,
    grid: &[f64],
) -> Result<f64> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidArgument(format!("θ = {theta} not in (0,1]")));
    }
    if ret_law.dim() < 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    let mut worst: f64 = 0.0;
    for &t in grid {
        let t = t.max(0.0);
        let survival_integral = t - ret_law.integral_first_axis(t, &[]);
        let rhs = (1.0 - theta) + theta * survival_integral;
        worst = worst.max((ret_law.cdf_prefix(&[t]) - rhs).abs());
    }
    Ok(worst)
}

pub fn poisson_pmf(t: f64, k: u64) -> f64 {
    if t == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    // log-space keeps large k finite
    let ln = -t + k as f64 * t.ln() - ln_factorial(k);
    ln.exp()
}

fn ln_factorial(k: u64) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// `P[N = k]` for `N = Σ_{i ≤ Poisson(t)} G_i` with `P[G = m] = θ(1-θ)^{m-1}`.
pub fn compound_geom_pmf(t: f64, theta: f64, k: u64) -> f64 {
    compound_geom_pmf_vec(t, theta, k as usize)[k as usize]
}

/// `P[N = k]` for `k = 0..=kmax`, by explicit convolution of the batch law.
pub fn compound_geom_pmf_vec(t: f64, theta: f64, kmax: usize) -> Vec<f64> {
    let mut out = vec![0.0; kmax + 1];
    // law of G_1 + .. + G_j restricted to 0..=kmax, starting from j = 0
    let mut conv = vec![0.0; kmax + 1];
    conv[0] = 1.0;
    for j in 0..=kmax {
        let w = poisson_pmf(t, j as u64);
        if w == 0.0 && j as f64 > t {
            break;
        }
        for (o, c) in out.iter_mut().zip(&conv) {
            *o += w * c;
        }
        // (conv * geom)[s] = θ conv[s-1] + (1-θ) (conv * geom)[s-1]
        let mut next = vec![0.0; kmax + 1];
        for s in 1..=kmax {
            next[s] = theta * conv[s - 1] + (1.0 - theta) * next[s - 1];
        }
        conv = next;
    }
    out
}

/// `[0, ∞]` with an explicit point at infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExtReal {
    Finite(f64),
    Infinity,
}

impl ExtReal {
    pub fn exp_neg(self) -> f64 {
        match self {
            ExtReal::Finite(s) => (-s).exp(),
            ExtReal::Infinity => 0.0,
        }
    }
}

impl From<f64> for ExtReal {
    fn from(v: f64) -> Self {
        if v == f64::INFINITY {
            ExtReal::Infinity
        } else {
            ExtReal::Finite(v)
        }
    }
}

/// `|e^{-s} - e^{-t}|` on `[0, ∞]`.
pub fn metric_time(s: ExtReal, t: ExtReal) -> f64 {
    (s.exp_neg() - t.exp_neg()).abs()
}

/// Product metric `Σ_{j<J} 2^{-(j+1)} d(a_j, b_j)`, returned with the
/// truncation bound `2^{-J}`.
pub fn metric_sequence(a: &[ExtReal], b: &[ExtReal], truncation: usize) -> Result<(f64, f64)> {
    if a.len() < truncation || b.len() < truncation {
        return Err(Error::DimensionMismatch {
            expected: truncation,
            got: a.len().min(b.len()),
        });
    }
    let mut weight = 0.5;
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b).take(truncation) {
        sum += weight * metric_time(*x, *y);
        weight *= 0.5;
    }
    Ok((sum, 0.5f64.powi(truncation as i32)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const E: f64 = std::f64::consts::E;

    #[test]
    fn cdf_examples() {
        assert!((LimitLaw::Exp.cdf(1.0) - (1.0 - 1.0 / E)).abs() < 1e-15);
        assert!((LimitLaw::Exp.cdf(1.0) - 0.632_120_6).abs() < 1e-7);
        let theta = 0.618_034;
        assert!((LimitLaw::ExpTheta(theta).cdf(0.0) - (1.0 - theta)).abs() < 1e-15);
        assert!((LimitLaw::ExpTheta(theta).cdf(1e9) - 1.0).abs() < 1e-12);
        assert_eq!(LimitLaw::ExpTheta(theta).cdf_left(0.0), 0.0);
        assert_eq!(LimitLaw::Uniform01.cdf(-1.0), 0.0);
    }

    #[test]
    fn duality_examples() {
        let v = duality_predict_hitting(&LimitLaw::Exp, 0, &[1.0]).unwrap();
        assert!((v - 0.632_120_6).abs() < 1e-7);
        let v = duality_predict_hitting(&LimitLaw::ExpTheta(0.5), 0, &[2.0]).unwrap();
        assert!((v - (1.0 - 1.0 / E)).abs() < 1e-15);
        let point = EmpiricalLaw::from_values(vec![1.0]).unwrap();
        assert_eq!(duality_predict_hitting(&point, 0, &[0.5]).unwrap(), 0.5);
        assert_eq!(duality_predict_hitting(&point, 0, &[4.0]).unwrap(), 1.0);
        assert!(matches!(
            duality_predict_hitting(&LimitLaw::Exp, 1, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(duality_predict_hitting(&LimitLaw::Exp, 1, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn duality_of_product_exp_is_product_exp() {
        let law = LimitLaw::ProductIid(Box::new(LimitLaw::Exp), 3);
        for &(t0, t1, t2) in &[(0.3, 1.0, 2.0), (2.0, 0.1, 0.7), (5.0, 5.0, 5.0)] {
            let v = duality_predict_hitting(&law, 2, &[t0, t1, t2]).unwrap();
            let expect = LimitLaw::Exp.cdf(t0) * LimitLaw::Exp.cdf(t1) * LimitLaw::Exp.cdf(t2);
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_point_examples() {
        let grid: Vec<f64> = (0..=50).map(|i| i as f64 * 0.1).collect();
        for theta in [0.2, 0.5, 0.618_034, 0.9] {
            let r = fixed_point_residual(&LimitLaw::ExpTheta(theta), theta, &grid).unwrap();
            assert!(r <= 1e-12, "{theta}: {r}");
        }
        assert!(fixed_point_residual(&LimitLaw::Exp, 1.0, &grid).unwrap() <= 1e-12);
        let r = fixed_point_residual(&LimitLaw::Exp, 0.5, &[0.0]).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fixed_point_detects_mismatch() {
        let grid: Vec<f64> = (0..=30).map(|i| i as f64 * 0.1).collect();
        let thetas: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        for &law_theta in &thetas {
            for &theta in &thetas {
                let r = fixed_point_residual(&LimitLaw::ExpTheta(law_theta), theta, &grid).unwrap();
                if (law_theta - theta).abs() >= 0.1 - 1e-12 {
                    assert!(r > 0.05, "law {law_theta} vs θ {theta}: {r}");
                }
            }
        }
    }

    /// Negative-binomial closed form `P[G_1+..+G_j = k] = C(k-1, j-1) θ^j (1-θ)^{k-j}`.
    fn compound_oracle(t: f64, theta: f64, k: u64) -> f64 {
        if k == 0 {
            return (-t).exp();
        }
        (1..=k)
            .map(|j| {
                let ln_binom = ln_factorial(k - 1) - ln_factorial(j - 1) - ln_factorial(k - j);
                let nb = (ln_binom + j as f64 * theta.ln()).exp() * (1.0 - theta).powi((k - j) as i32);
                poisson_pmf(t, j) * nb
            })
            .sum()
    }

    #[test]
    fn compound_examples() {
        let (t, theta): (f64, f64) = (1.3, 0.4);
        let e = (-t).exp();
        assert!((compound_geom_pmf(t, theta, 0) - e).abs() < 1e-15);
        assert!((compound_geom_pmf(t, theta, 1) - e * t * theta).abs() < 1e-15);
        let k2 = e * (t * theta * (1.0 - theta) + t * t * theta * theta / 2.0);
        assert!((compound_geom_pmf(t, theta, 2) - k2).abs() < 1e-15);
        for k in 0..30 {
            let a = compound_geom_pmf(t, theta, k);
            let b = compound_oracle(t, theta, k);
            assert!((a - b).abs() < 1e-13 * b.max(1e-300) + 1e-300, "k={k}: {a} vs {b}");
        }
    }

    #[test]
    fn compound_pmf_sums_to_one() {
        for &(t, theta) in &[(0.5f64, 0.9f64), (1.0, 0.381_966), (3.0, 0.3), (5.0, 0.618), (2.0, 0.1)] {
            let kmax = ((20.0 + 10.0 * t) / theta).ceil() as usize;
            let s: f64 = compound_geom_pmf_vec(t, theta, kmax).iter().sum();
            assert!((1.0 - 1e-10..=1.0 + 1e-12).contains(&s), "{t} {theta}: {s}");
        }
    }

    #[test]
    fn short_cutoff_misses_geometric_tail() {
        // K = 20 + 10t/θ leaves more than 1e-10 of mass above K here
        let (t, theta): (f64, f64) = (1.0, 0.381_966);
        let kmax = (20.0 + 10.0 * t / theta).ceil() as u64;
        let s: f64 = (0..=kmax).map(|k| compound_oracle(t, theta, k)).sum();
        assert!(1.0 - s > 1e-8, "{s}");
    }

    #[test]
    fn metric_examples() {
        use ExtReal::*;
        assert_eq!(metric_time(Finite(0.0), Infinity), 1.0);
        assert_eq!(metric_time(Finite(1.0), Finite(1.0)), 0.0);
        assert!((metric_time(Finite(1.0), Finite(2.0)) - 0.232_544_2).abs() < 1e-7);

        let a = vec![Finite(0.0); 4];
        let b = vec![Infinity; 4];
        let (v, bound) = metric_sequence(&a, &b, 4).unwrap();
        assert_eq!(v, 0.9375);
        assert_eq!(bound, 0.0625);
        assert_eq!(metric_sequence(&a, &a, 4).unwrap().0, 0.0);
        let mut c = a.clone();
        c[2] = Infinity;
        assert_eq!(metric_sequence(&a, &c, 4).unwrap().0, 0.125);
    }

    #[test]
    fn law_validation() {
        assert!(LimitLaw::Bernoulli(vec![0.5, 0.5]).validate().is_ok());
        assert!(LimitLaw::Bernoulli(vec![0.5, 0.6]).validate().is_err());
        assert!(LimitLaw::ExpTheta(1.5).validate().is_err());
        assert!(LimitLaw::CompoundGeomCount(-1.0, 0.5).validate().is_err());
    }

    #[test]
    fn discrete_cdfs() {
        let b = LimitLaw::Bernoulli(vec![0.25, 0.75]);
        assert_eq!(b.cdf(0.0), 0.25);
        assert_eq!(b.cdf_left(0.0), 0.0);
        assert_eq!(b.cdf_left(1.0), 0.25);
        assert_eq!(b.cdf(1.0), 1.0);
        let p = LimitLaw::PoissonCount(1.0);
        assert!((p.cdf(0.5) - (-1.0f64).exp()).abs() < 1e-15);
    }
}
