//! Empirical laws and the discrepancies used to compare them with oracles.

mod montecarlo;
mod rng;

pub use montecarlo::{run_monte_carlo, sample_start, McConfig, McRun, StartMeasure};
pub use rng::SeededRng;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limits::LimitLaw;

/// Empirical distribution of `dim`-dimensional samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLaw", into = "RawLaw")]
pub struct EmpiricalLaw {
    dim: usize,
    /// row-major, `n × dim`
    samples: Vec<f64>,
    sorted: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RawLaw {
    dim: usize,
    samples: Vec<Vec<f64>>,
}

impl TryFrom<RawLaw> for EmpiricalLaw {
    type Error = Error;
    fn try_from(raw: RawLaw) -> Result<Self> {
        EmpiricalLaw::new(raw.dim, raw.samples)
    }
}

impl From<EmpiricalLaw> for RawLaw {
    fn from(law: EmpiricalLaw) -> Self {
        RawLaw {
            dim: law.dim,
            samples: law.rows().map(<[f64]>::to_vec).collect(),
        }
    }
}

impl EmpiricalLaw {
    pub fn new(dim: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 || rows.is_empty() {
            return Err(Error::InvalidArgument(
                "empirical law needs dim >= 1 and at least one sample".into(),
            ));
        }
        let mut samples = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite sample".into()));
            }
            samples.extend_from_slice(row);
        }
        Ok(Self::from_flat(dim, samples))
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        Self::new(1, values.into_iter().map(|v| vec![v]).collect())
    }

    fn from_flat(dim: usize, samples: Vec<f64>) -> Self {
        let sorted = (0..dim)
            .map(|axis| {
                let mut col: Vec<f64> = samples.iter().skip(axis).step_by(dim).copied().collect();
                col.sort_by(f64::total_cmp);
                col
            })
            .collect();
        Self {
            dim,
            samples,
            sorted,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.dim)
    }

    /// Sorted values of one coordinate.
    pub fn sorted_axis(&self, axis: usize) -> &[f64] {
        &self.sorted[axis]
    }

    /// Marginal law of a single coordinate.
    pub fn axis_law(&self, axis: usize) -> EmpiricalLaw {
        EmpiricalLaw::from_flat(1, self.sorted[axis].clone())
    }

    /// Lower empirical `p`-quantile of one coordinate.
    pub fn quantile(&self, axis: usize, p: f64) -> f64 {
        let col = &self.sorted[axis];
        let idx = ((p * col.len() as f64).ceil() as usize).clamp(1, col.len()) - 1;
        col[idx]
    }

    pub fn mean(&self, axis: usize) -> f64 {
        self.sorted[axis].iter().sum::<f64>() / self.len() as f64
    }

    /// Fraction of samples `≤ t` coordinatewise on the first `t.len()` axes.
    pub fn cdf_prefix(&self, t: &[f64]) -> f64 {
        if t.len() == 1 {
            let col = &self.sorted[0];
            return col.partition_point(|&v| v <= t[0]) as f64 / col.len() as f64;
        }
        let hits = self
            .rows()
            .filter(|row| row.iter().zip(t).all(|(x, s)| x <= s))
            .count();
        hits as f64 / self.len() as f64
    }

    /// `∫_0^{t0} F(s, rest) ds`, computed exactly from the step function.
    pub fn integral_first_axis(&self, t0: f64, rest: &[f64]) -> f64 {
        if t0 <= 0.0 {
            return 0.0;
        }
        if rest.is_empty() {
            let col = &self.sorted[0];
            let m = col.partition_point(|&v| v <= t0);
            let area: f64 = col[..m].iter().map(|x| t0 - x.max(0.0)).sum();
            return area / col.len() as f64;
        }
        let area: f64 = self
            .rows()
            .filter(|row| row[1..].iter().zip(rest).all(|(x, s)| x <= s))
            .map(|row| (t0 - row[0].max(0.0)).max(0.0))
            .sum();
        area / self.len() as f64
    }
}

/// Fraction of samples coordinatewise `≤ t_vector`.
pub fn ecdf_eval(law: &EmpiricalLaw, t_vector: &[f64]) -> Result<f64> {
    if t_vector.len() != law.dim() {
        return Err(Error::DimensionMismatch {
            expected: law.dim(),
            got: t_vector.len(),
        });
    }
    Ok(law.cdf_prefix(t_vector))
}

/// Kolmogorov-Smirnov distance between a 1-d empirical law and an oracle,
/// evaluated on both sides of every jump.
pub fn ks_distance(law: &EmpiricalLaw, oracle: &LimitLaw) -> Result<f64> {
    if law.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: law.dim(),
        });
    }
    let xs = law.sorted_axis(0);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        let x = xs[i];
        let mut j = i;
        while j < xs.len() && xs[j] == x {
            j += 1;
        }
        let f = oracle.cdf(x);
        let f_left = oracle.cdf_left(x);
        d = d.max((i as f64 / n - f_left).abs()).max((j as f64 / n - f).abs());
        i = j;
    }
    Ok(d.min(1.0))
}

/// Two-sample Kolmogorov-Smirnov distance `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &EmpiricalLaw, b: &EmpiricalLaw) -> Result<f64> {
    if a.dim() != 1 || b.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: a.dim().max(b.dim()),
        });
    }
    let (xa, xb) = (a.sorted_axis(0), b.sorted_axis(0));
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xa.len() || j < xb.len() {
        let x = match (xa.get(i), xb.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Histogram of a nonnegative integer statistic over `0..=cutoff`, with the
/// mass above the cutoff kept in `overflow`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountHistogram {
    pub counts: Vec<u64>,
    pub overflow: u64,
}

impl CountHistogram {
    pub fn new(cutoff: usize) -> Self {
        Self {
            counts: vec![0; cutoff + 1],
            overflow: 0,
        }
    }

    pub fn from_values(values: impl IntoIterator<Item = u64>, cutoff: usize) -> Self {
        let mut h = Self::new(cutoff);
        for v in values {
            h.add(v);
        }
        h
    }

    pub fn add(&mut self, v: u64) {
        match self.counts.get_mut(v as usize) {
            Some(c) => *c += 1,
            None => self.overflow += 1,
        }
    }

    pub fn cutoff(&self) -> usize {
        self.counts.len() - 1
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    pub fn mean_lower_bound(&self) -> f64 {
        let s: u64 = self.counts.iter().enumerate().map(|(k, c)| k as u64 * c).sum();
        s as f64 / self.total() as f64
    }
}

/// Total variation distance between a histogram and a pmf, with the tails
/// above the cutoff compared as one lumped cell.
pub fn tv_discrete(hist: &CountHistogram, oracle_pmf: impl Fn(u64) -> f64) -> f64 {
    let n = hist.total() as f64;
    let mut head = 0.0;
    let mut pmf_mass = 0.0;
    for (k, &c) in hist.counts.iter().enumerate() {
        let p = oracle_pmf(k as u64);
        pmf_mass += p;
        head += (c as f64 / n - p).abs();
    }
    let tail = (hist.overflow as f64 / n - (1.0 - pmf_mass).max(0.0)).abs();
    0.5 * (head + tail)
}

/// Maps values to finitely many cells.
#[derive(Debug, Clone, PartialEq)]
pub enum Partitioner {
    /// Cell index = number of cuts `≤ value` (cuts sorted ascending).
    Cuts(Vec<f64>),
    /// Values are already cell indices `0..cells`.
    Integer { cells: usize },
}

impl Partitioner {
    /// Cuts at the empirical quartiles of `values`.
    pub fn quartiles(values: &[f64]) -> Self {
        Self::quantiles(values, 4)
    }

    pub fn quantiles(values: &[f64], cells: usize) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mut cuts: Vec<f64> = (1..cells)
            .map(|i| {
                let idx = (i * v.len() / cells).min(v.len() - 1);
                v[idx]
            })
            .collect();
        cuts.dedup();
        Partitioner::Cuts(cuts)
    }

    /// Two cells split at `cut`.
    pub fn threshold(cut: f64) -> Self {
        Partitioner::Cuts(vec![cut])
    }

    pub fn cells(&self) -> usize {
        match self {
            Partitioner::Cuts(c) => c.len() + 1,
            Partitioner::Integer { cells } => *cells,
        }
    }

    pub fn cell(&self, v: f64) -> usize {
        match self {
            Partitioner::Cuts(c) => c.partition_point(|&cut| cut <= v),
            Partitioner::Integer { cells } => (v.max(0.0) as usize).min(cells - 1),
        }
    }
}

/// `max_{i,j} |P(a ∈ i, b ∈ j) - P(a ∈ i) P(b ∈ j)|` over the empirical joint law.
pub fn pair_dependence(a: &[f64], b: &[f64], pa: &Partitioner, pb: &Partitioner) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let (ca, cb) = (pa.cells(), pb.cells());
    let mut joint = vec![0u64; ca * cb];
    let mut ma = vec![0u64; ca];
    let mut mb = vec![0u64; cb];
    for (&x, &y) in a.iter().zip(b) {
        let (i, j) = (pa.cell(x), pb.cell(y));
        joint[i * cb + j] += 1;
        ma[i] += 1;
        mb[j] += 1;
    }
    let n = a.len() as f64;
    let mut worst: f64 = 0.0;
    for i in 0..ca {
        for j in 0..cb {
            let pij = joint[i * cb + j] as f64 / n;
            let prod = (ma[i] as f64 / n) * (mb[j] as f64 / n);
            worst = worst.max((pij - prod).abs());
        }
    }
    Ok(worst)
}

/// 95% Kolmogorov-Smirnov sampling scale `1.36 / √n`.
pub fn ks_mc_error(n: usize) -> f64 {
    1.36 / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ecdf_examples() {
        let law = EmpiricalLaw::from_values(vec![0.2, 0.8]).unwrap();
        assert_eq!(ecdf_eval(&law, &[0.5]).unwrap(), 0.5);
        assert_eq!(ecdf_eval(&law, &[0.1]).unwrap(), 0.0);
        let law2 = EmpiricalLaw::new(2, vec![vec![1.0, 1.0], vec![2.0, 3.0], vec![4.0, 0.0]]).unwrap();
        assert!((ecdf_eval(&law2, &[2.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(ecdf_eval(&law2, &[2.0]).is_err());
    }

    #[test]
    fn empirical_law_rejects_bad_samples() {
        assert!(EmpiricalLaw::from_values(vec![]).is_err());
        assert!(EmpiricalLaw::from_values(vec![f64::NAN]).is_err());
        assert!(EmpiricalLaw::new(2, vec![vec![1.0]]).is_err());
    }

    #[test]
    fn ks_examples() {
        let n = 100;
        let quantiles: Vec<f64> = (1..=n)
            .map(|i| -(1.0 - (i as f64 - 0.5) / n as f64).ln())
            .collect();
        let law = EmpiricalLaw::from_values(quantiles).unwrap();
        let d = ks_distance(&law, &LimitLaw::Exp).unwrap();
        assert!(d <= 0.005 + 1e-12, "{d}");

        let median = EmpiricalLaw::from_values(vec![2f64.ln()]).unwrap();
        assert!((ks_distance(&median, &LimitLaw::Exp).unwrap() - 0.5).abs() < 1e-15);

        let zeros = EmpiricalLaw::from_values(vec![0.0; 10]).unwrap();
        assert_eq!(ks_distance(&zeros, &LimitLaw::Uniform01).unwrap(), 1.0);
    }

    #[test]
    fn ks_counts_atoms_on_both_sides() {
        // an atom of the oracle at 0: ExpTheta has F(0) = 1 - θ
        let law = EmpiricalLaw::from_values(vec![0.0, 0.0, 1.0, 2.0]).unwrap();
        let d = ks_distance(&law, &LimitLaw::ExpTheta(0.5)).unwrap();
        // at 0: ecdf jumps 0 → 0.5, oracle left limit 0, value 0.5
        let brute = [0.0f64, 1.0, 2.0]
            .iter()
            .flat_map(|&x| {
                let f = LimitLaw::ExpTheta(0.5).cdf(x);
                let fl = LimitLaw::ExpTheta(0.5).cdf_left(x);
                let right = law.cdf_prefix(&[x]);
                let left = law.sorted_axis(0).iter().filter(|&&v| v < x).count() as f64 / 4.0;
                [(right - f).abs(), (left - fl).abs()]
            })
            .fold(0.0f64, f64::max);
        assert!((d - brute).abs() < 1e-15);
    }

    #[test]
    fn ks_two_sample_basic() {
        let a = EmpiricalLaw::from_values(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = EmpiricalLaw::from_values(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(ks_two_sample(&a, &b).unwrap(), 0.0);
        let c = EmpiricalLaw::from_values(vec![10.0, 11.0]).unwrap();
        assert_eq!(ks_two_sample(&a, &c).unwrap(), 1.0);
        let d = EmpiricalLaw::from_values(vec![2.5]).unwrap();
        assert!((ks_two_sample(&a, &d).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tv_examples() {
        let exact = |k: u64| if k == 0 { 0.25 } else if k == 1 { 0.75 } else { 0.0 };
        let h = CountHistogram {
            counts: vec![1, 3, 0],
            overflow: 0,
        };
        assert!(tv_discrete(&h, exact) < 1e-15);

        let at_zero = CountHistogram::from_values(vec![0; 50], 25);
        let poisson = |k: u64| LimitLaw::PoissonCount(1.0).pmf(k);
        let tv = tv_discrete(&at_zero, poisson);
        assert!((tv - (1.0 - (-1.0f64).exp())).abs() < 1e-12, "{tv}");

        let far = CountHistogram::from_values(vec![5; 10], 25);
        assert!((tv_discrete(&far, |k| if k == 0 { 1.0 } else { 0.0 }) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pair_dependence_examples() {
        let a: Vec<f64> = (0..1000).map(|i| (i % 2) as f64).collect();
        let two = Partitioner::Integer { cells: 2 };
        assert!((pair_dependence(&a, &a, &two, &two).unwrap() - 0.25).abs() < 1e-15);
        let constant = vec![0.0; 1000];
        assert_eq!(pair_dependence(&a, &constant, &two, &two).unwrap(), 0.0);
        // exactly balanced product design
        let b: Vec<f64> = (0..1000).map(|i| ((i / 2) % 2) as f64).collect();
        assert!(pair_dependence(&a, &b, &two, &two).unwrap() < 1e-15);
        assert!(pair_dependence(&a, &b[..3], &two, &two).is_err());
    }

    #[test]
    fn quartile_partitioner() {
        let v: Vec<f64> = (0..100).map(f64::from).collect();
        let p = Partitioner::quartiles(&v);
        assert_eq!(p.cells(), 4);
        let counts = v.iter().fold([0; 4], |mut c, &x| {
            c[p.cell(x)] += 1;
            c
        });
        assert_eq!(counts, [25, 25, 25, 25]);
    }

    #[test]
    fn step_integral_is_exact() {
        let law = EmpiricalLaw::from_values(vec![1.0]).unwrap();
        assert_eq!(law.integral_first_axis(0.5, &[]), 0.0);
        assert_eq!(law.integral_first_axis(3.0, &[]), 2.0);
        let law2 = EmpiricalLaw::new(2, vec![vec![1.0, 5.0], vec![2.0, 0.0]]).unwrap();
        // only the second row passes the rest filter t1 = 1
        assert_eq!(law2.integral_first_axis(3.0, &[1.0]), 0.5);
    }

    #[test]
    fn serde_roundtrip_rebuilds_caches() {
        let law = EmpiricalLaw::new(2, vec![vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let json = serde_json::to_string(&law).unwrap();
        let back: EmpiricalLaw = serde_json::from_str(&json).unwrap();
        assert_eq!(back, law);
        assert_eq!(back.sorted_axis(0), &[1.0, 3.0]);
    }
}
