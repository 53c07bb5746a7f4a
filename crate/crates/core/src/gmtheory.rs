//! Gibbs-Markov structure constants and transfer-operator checks.

use std::ops::RangeInclusive;

use num_bigint::BigInt;
use num_rational::{BigRational, Rational64};
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynsys::{cylinder, invariant_measure_of_interval, pull_back, PwlMarkov, SystemSpec};
use crate::error::{Error, Result};
use crate::rare_events::Interval;
use crate::stats::SeededRng;

/// Largest Gauss digit used when enumerating cylinders.
pub const GAUSS_SCAN_DIGITS: u64 = 50;
const MAX_ENUMERATED: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmConstants {
    /// `v'_Z(x)/v'_Z(y) ≤ e^r` on every scanned cylinder.
    pub r: f64,
    /// `inf_Z μ(TZ)`.
    pub flat: f64,
    pub kappa: f64,
    pub q: f64,
}

/// Scans distortion, big images and cylinder decay in one go.
pub fn gm_constants(
    sys: &SystemSpec,
    max_rank: u32,
    pairs_per_cylinder: usize,
    rng: &mut SeededRng,
) -> Result<GmConstants> {
    let d = distortion_scan(sys, max_rank, pairs_per_cylinder, rng)?;
    let fit = cylinder_decay_fit(sys, 1..=max_rank)?;
    Ok(GmConstants {
        r: d.ln_1p(),
        flat: big_image_bound(sys)?,
        kappa: fit.kappa,
        q: fit.q,
    })
}

fn require_markov(sys: &SystemSpec) -> Result<()> {
    match sys {
        SystemSpec::Intermittent(_) => Err(Error::InvalidSystem(
            "the intermittent map is not Gibbs-Markov".into(),
        )),
        _ => Ok(()),
    }
}

/// Symbols allowed after `prev`.
fn successors(sys: &SystemSpec, prev: Option<u64>) -> Vec<u64> {
    match sys {
        SystemSpec::Gauss => (1..=GAUSS_SCAN_DIGITS).collect(),
        SystemSpec::PiecewiseLinearMarkov(m) => match prev {
            None => (0..m.cells() as u64).collect(),
            Some(p) => {
                let b = &m.branches()[p as usize];
                (b.image_start as u64..b.image_end as u64).collect()
            }
        },
        _ => vec![0, 1],
    }
}

fn count_words(sys: &SystemSpec, n: u32, limit: usize) -> usize {
    fn go(sys: &SystemSpec, prev: Option<u64>, left: u32, limit: usize) -> usize {
        if left == 0 {
            return 1;
        }
        let mut total = 0;
        for s in successors(sys, prev) {
            total += go(sys, Some(s), left - 1, limit);
            if total > limit {
                break;
            }
        }
        total
    }
    go(sys, None, n, limit)
}

/// All admissible words of length `n`, or `MAX_ENUMERATED` random ones.
fn words_of_rank(sys: &SystemSpec, n: u32, rng: &mut SeededRng) -> Vec<Vec<u64>> {
    if count_words(sys, n, MAX_ENUMERATED) <= MAX_ENUMERATED {
        let mut out = vec![Vec::new()];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|w: Vec<u64>| {
                    successors(sys, w.last().copied()).into_iter().map(move |s| {
                        let mut v = w.clone();
                        v.push(s);
                        v
                    })
                })
                .collect();
        }
        out
    } else {
        (0..MAX_ENUMERATED)
            .map(|_| {
                let mut w = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    let next = successors(sys, w.last().copied());
                    w.push(next[rng.gen_range(0..next.len())]);
                }
                w
            })
            .collect()
    }
}

/// `|v_w'(y)|` and `v_w(y)` for the composed inverse branch of `word`.
pub fn inverse_word(sys: &SystemSpec, word: &[u64], y: f64) -> (f64, f64) {
    let (mut y, mut d) = (y, 1.0);
    for &k in word.iter().rev() {
        d *= sys.inverse_branch_derivative(k, y);
        y = sys.inverse_branch(k, y);
    }
    (y, d)
}

/// Lipschitz quotient `|v'(x)/v'(y) - 1| / |x - y|` maximized over sampled
/// cylinders, per rank `1..=max_rank`.
pub fn distortion_by_rank(
    sys: &SystemSpec,
    max_rank: u32,
    pairs_per_cylinder: usize,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    require_markov(sys)?;
    if max_rank == 0 || (matches!(sys, SystemSpec::Gauss) && max_rank > 8) {
        return Err(Error::InvalidArgument(format!("max_rank = {max_rank} out of range")));
    }
    let mut out = Vec::with_capacity(max_rank as usize);
    for n in 1..=max_rank {
        let mut worst: f64 = 0.0;
        for word in words_of_rank(sys, n, rng) {
            let img = sys.branch_image(*word.last().unwrap())?;
            let mut pts = vec![(img.lo, img.hi)];
            for _ in 0..pairs_per_cylinder {
                let x = img.lo + rng.gen::<f64>() * (img.hi - img.lo);
                let y = img.lo + rng.gen::<f64>() * (img.hi - img.lo);
                pts.push((x, y));
            }
            for (x, y) in pts {
                if x == y {
                    continue;
                }
                let dx = inverse_word(sys, &word, x).1;
                let dy = inverse_word(sys, &word, y).1;
                let dist = (x - y).abs();
                worst = worst
                    .max((dx / dy - 1.0).abs() / dist)
                    .max((dy / dx - 1.0).abs() / dist);
            }
        }
        out.push(worst);
    }
    Ok(out)
}

/// Maximum of [`distortion_by_rank`] over all ranks.
pub fn distortion_scan(
    sys: &SystemSpec,
    max_rank: u32,
    pairs_per_cylinder: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    Ok(distortion_by_rank(sys, max_rank, pairs_per_cylinder, rng)?
        .into_iter()
        .fold(0.0, f64::max))
}

/// `inf_k μ(T Z_k)`.
pub fn big_image_bound(sys: &SystemSpec) -> Result<f64> {
    require_markov(sys)?;
    match sys {
        SystemSpec::PiecewiseLinearMarkov(m) => {
            let mut best = f64::INFINITY;
            for k in 0..m.cells() as u64 {
                let img = sys.branch_image(k)?;
                best = best.min(invariant_measure_of_interval(sys, img.lo, img.hi)?);
            }
            Ok(best)
        }
        _ => Ok(1.0),
    }
}

/// The periodic point `x* = v_w(x*)` of a word and `|v_w'(x*)|` (Lebesgue).
pub fn periodic_point(sys: &SystemSpec, word: &[u64]) -> Result<(f64, f64)> {
    let none = || Error::NoFixedPoint { word: word.to_vec() };
    let twice: Vec<u64> = word.iter().chain(word).copied().collect();
    let cyl = cylinder(sys, word).map_err(|_| none())?;
    cylinder(sys, &twice).map_err(|_| none())?;
    let mut x = 0.5 * (cyl.lo + cyl.hi);
    let mut converged = false;
    for _ in 0..100_000 {
        let next = inverse_word(sys, word, x).0;
        let step = (next - x).abs();
        x = next;
        if step <= 1e-16 {
            converged = true;
            break;
        }
    }
    let (vx, d) = inverse_word(sys, word, x);
    let in_closure = x >= cyl.lo - 1e-14 && x <= cyl.hi + 1e-14;
    if !converged && (vx - x).abs() > 1e-14 || !in_closure {
        return Err(none());
    }
    Ok((x, d))
}

/// `θ = 1 - v_w'(x*)` at the periodic point of `word`.
pub fn theta_at_periodic(sys: &SystemSpec, word: &[u64]) -> Result<f64> {
    let (_, d) = periodic_point(sys, word)?;
    Ok(1.0 - d)
}

/// `θ` with `v'` taken as the μ-Radon-Nikodym derivative
/// `v'_λ(x*) h(v(x*)) / h(x*)`.
pub fn theta_at_periodic_density_form(sys: &SystemSpec, word: &[u64]) -> Result<f64> {
    let (x, d) = periodic_point(sys, word)?;
    let vx = inverse_word(sys, word, x).0;
    let (hv, hx) = match (sys.density(vx), sys.density(x)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::NoClosedFormMeasure),
    };
    Ok(1.0 - d * hv / hx)
}

/// Least-squares fit of `log max_Z μ(Z) ≈ log κ + n log q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub kappa: f64,
    pub q: f64,
    /// Largest cylinder mass at each fitted rank.
    pub max_masses: Vec<f64>,
    /// Largest `|ln mass - fit|` over the ranks.
    pub max_residual: f64,
}

fn pull_word(sys: &SystemSpec, word: &[u64], iv: Interval) -> Result<Option<Interval>> {
    let mut j = iv;
    for &k in word.iter().rev() {
        match pull_back(sys, k, &j)? {
            Some(next) => j = next,
            None => return Ok(None),
        }
    }
    Ok(Some(j))
}

fn mass(sys: &SystemSpec, iv: Option<Interval>) -> Result<f64> {
    match iv {
        Some(iv) => invariant_measure_of_interval(sys, iv.lo, iv.hi),
        None => Ok(0.0),
    }
}

/// Largest μ-mass of a rank-`n` cylinder, by branch and bound.
pub fn max_cylinder_mass(sys: &SystemSpec, n: u32) -> Result<f64> {
    require_markov(sys)?;
    fn dfs(sys: &SystemSpec, prefix: &mut Vec<u64>, n: u32, best: &mut f64) -> Result<()> {
        let gauss = matches!(sys, SystemSpec::Gauss);
        let symbols: Box<dyn Iterator<Item = u64>> = if gauss {
            Box::new(1..)
        } else {
            Box::new(successors(sys, prefix.last().copied()).into_iter())
        };
        for k in symbols {
            if gauss {
                // all children with digit >= k together
                let tail = pull_word(sys, prefix, Interval::open_closed(0.0, 1.0 / k as f64))?;
                if mass(sys, tail)? <= *best {
                    break;
                }
            }
            prefix.push(k);
            let m = match cylinder(sys, prefix) {
                Ok(iv) => invariant_measure_of_interval(sys, iv.lo, iv.hi)?,
                Err(Error::EmptyCylinder { .. }) => 0.0,
                Err(e) => return Err(e),
            };
            if m > *best {
                if prefix.len() == n as usize {
                    *best = m;
                } else {
                    dfs(sys, prefix, n, best)?;
                }
            }
            prefix.pop();
        }
        Ok(())
    }
    let mut best = 0.0;
    dfs(sys, &mut Vec::new(), n, &mut best)?;
    Ok(best)
}

/// Fits `μ(Z) ≤ κ q^n` to the largest cylinders over `ranks`. The fit is
/// done in base 2, which keeps dyadic data exact.
pub fn cylinder_decay_fit(sys: &SystemSpec, ranks: RangeInclusive<u32>) -> Result<DecayFit> {
    let ns: Vec<u32> = ranks.collect();
    if ns.len() < 2 || ns[0] == 0 {
        return Err(Error::InvalidArgument("need at least two ranks >= 1".into()));
    }
    let max_masses: Vec<f64> = ns.iter().map(|&n| max_cylinder_mass(sys, n)).collect::<Result<_>>()?;
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = max_masses.iter().map(|m| m.log2()).collect();
    let k = xs.len() as f64;
    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    let intercept = (sy - slope * sx) / k;
    let max_residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| ((y - intercept - slope * x) * std::f64::consts::LN_2).abs())
        .fold(0.0, f64::max);
    Ok(DecayFit {
        kappa: intercept.exp2(),
        q: slope.exp2(),
        max_masses,
        max_residual,
    })
}

/// Transfer operator on mass vectors over a finite grid.
struct MassChain {
    /// `cols[i]`: where the mass of cell `i` goes.
    cols: Vec<Vec<(usize, BigRational)>>,
    /// μ-mass of each cell.
    cell_mass: Vec<BigRational>,
}

fn rat(r: Rational64) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

/// Exact stationary mass vector of a PWL Markov map.
pub fn exact_stationary_mass(m: &PwlMarkov) -> Result<Vec<BigRational>> {
    let n = m.cells();
    let cols = m.transition();
    // rows: (P - I) m = 0 with the last equation replaced by Σ m = 1
    let mut a = vec![vec![BigRational::zero(); n + 1]; n];
    for (i, col) in cols.iter().enumerate() {
        for (j, p) in col {
            a[*j][i] += rat(*p);
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] -= BigRational::one();
    }
    a[n - 1] = vec![BigRational::one(); n + 1];
    for c in 0..n {
        let piv = (c..n)
            .find(|&r| !a[r][c].is_zero())
            .ok_or_else(|| Error::InvalidSystem("singular stationary system".into()))?;
        a.swap(c, piv);
        let p = a[c][c].clone();
        for v in a[c].iter_mut() {
            *v = &*v / &p;
        }
        for r in 0..n {
            if r != c && !a[r][c].is_zero() {
                let f = a[r][c].clone();
                for col in 0..=n {
                    let sub = &f * &a[c][col];
                    a[r][col] -= sub;
                }
            }
        }
    }
    Ok(a.into_iter().map(|row| row[n].clone()).collect())
}

fn mass_chain(sys: &SystemSpec, cells: usize) -> Result<MassChain> {
    match sys {
        SystemSpec::Doubling => {
            if cells < 2 || !cells.is_power_of_two() {
                return Err(Error::GridMismatch {
                    expected: cells.next_power_of_two().max(2),
                    got: cells,
                });
            }
            let half = BigRational::new(1.into(), 2.into());
            let cols = (0..cells)
                .map(|j| {
                    vec![
                        ((2 * j) % cells, half.clone()),
                        ((2 * j + 1) % cells, half.clone()),
                    ]
                })
                .collect();
            let cm = BigRational::new(1.into(), BigInt::from(cells));
            Ok(MassChain {
                cols,
                cell_mass: vec![cm; cells],
            })
        }
        SystemSpec::PiecewiseLinearMarkov(m) => {
            if cells != m.cells() {
                return Err(Error::GridMismatch {
                    expected: m.cells(),
                    got: cells,
                });
            }
            let cols = m
                .transition()
                .into_iter()
                .map(|c| c.into_iter().map(|(j, p)| (j, rat(p))).collect())
                .collect();
            Ok(MassChain {
                cols,
                cell_mass: exact_stationary_mass(m)?,
            })
        }
        _ => Err(Error::InvalidSystem(
            "exact transfer matrices need the doubling or a PWL Markov map".into(),
        )),
    }
}

impl MassChain {
    fn step(&self, m: &[BigRational]) -> Vec<BigRational> {
        let mut out = vec![BigRational::zero(); m.len()];
        for (i, col) in self.cols.iter().enumerate() {
            if m[i].is_zero() {
                continue;
            }
            for (j, p) in col {
                out[*j] += &m[i] * p;
            }
        }
        out
    }

    /// Signed mass vector of `u - v` for μ-densities `u`, `v`.
    fn difference(&self, u: &[f64], v: &[f64]) -> Result<Vec<BigRational>> {
        let n = self.cell_mass.len();
        for d in [u, v] {
            if d.len() != n {
                return Err(Error::GridMismatch {
                    expected: n,
                    got: d.len(),
                });
            }
            let total: f64 = d
                .iter()
                .zip(&self.cell_mass)
                .map(|(f, c)| f * c.to_f64().unwrap())
                .sum();
            if d.iter().any(|f| !(*f >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(
                    "densities must be nonnegative with μ-integral 1".into(),
                ));
            }
        }
        u.iter()
            .zip(v)
            .zip(&self.cell_mass)
            .map(|((a, b), c)| {
                let a = BigRational::from_float(*a).ok_or_else(|| Error::InvalidArgument("non-finite density".into()))?;
                let b = BigRational::from_float(*b).ok_or_else(|| Error::InvalidArgument("non-finite density".into()))?;
                Ok((a - b) * c)
            })
            .collect()
    }
}

fn l1(m: &[BigRational]) -> BigRational {
    m.iter().fold(BigRational::zero(), |acc, x| acc + x.abs())
}

/// `‖T̂^k (u - v)‖_{L¹(μ)}` for `k = 0..=k_max`, exact.
pub fn transfer_difference_norms(sys: &SystemSpec, u: &[f64], v: &[f64], k_max: usize) -> Result<Vec<BigRational>> {
    let chain = mass_chain(sys, u.len())?;
    let mut m = chain.difference(u, v)?;
    let mut out = Vec::with_capacity(k_max + 1);
    for _ in 0..=k_max {
        out.push(l1(&m));
        m = chain.step(&m);
    }
    Ok(out)
}

/// `‖(1/n) Σ_{k<n} T̂^k (u - v)‖_{L¹(μ)}` for every `n = 1..=n_max`, exact.
pub fn yosida_profile(sys: &SystemSpec, u: &[f64], v: &[f64], n_max: usize) -> Result<Vec<BigRational>> {
    let chain = mass_chain(sys, u.len())?;
    if v.len() != u.len() {
        return Err(Error::GridMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let mut m = chain.difference(u, v)?;
    let mut sum = vec![BigRational::zero(); m.len()];
    let mut out = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        for (s, x) in sum.iter_mut().zip(&m) {
            *s += x;
        }
        out.push(l1(&sum) / BigRational::from_integer(BigInt::from(n)));
        m = chain.step(&m);
    }
    Ok(out)
}

/// `‖(1/n) Σ_{k<n} T̂^k (u - v)‖_{L¹(μ)}`.
pub fn yosida_average_decay(sys: &SystemSpec, u: &[f64], v: &[f64], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let profile = yosida_profile(sys, u, v, n)?;
    Ok(profile[n - 1].to_f64().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn theta_examples() {
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        let t = theta_at_periodic(&SystemSpec::Gauss, &[1]).unwrap();
        assert!((t - (1.0 - golden * golden)).abs() < 1e-14);
        assert!((t - 0.618_034).abs() < 1e-6);
        let td = theta_at_periodic_density_form(&SystemSpec::Gauss, &[1]).unwrap();
        assert!((t - td).abs() < 1e-14);
        assert_eq!(theta_at_periodic(&SystemSpec::Doubling, &[0]).unwrap(), 0.5);
        assert_eq!(theta_at_periodic(&SystemSpec::Doubling, &[0, 1]).unwrap(), 0.75);
        assert_eq!(theta_at_periodic(&SystemSpec::Doubling, &[1, 1, 0]).unwrap(), 0.875);
    }

    #[test]
    fn gauss_period_two() {
        // word (1,2): x* = [0; 1, 2, 1, 2, ...] = (√3 - 1)
        let (x, d) = periodic_point(&SystemSpec::Gauss, &[1, 2]).unwrap();
        assert!((x - (3f64.sqrt() - 1.0)).abs() < 1e-14);
        let y = 1.0 / x - 1.0;
        assert!((d - (x * x * y * y)).abs() < 1e-14);
    }

    #[test]
    fn distortion_examples() {
        let mut rng = SeededRng::new(1, 0);
        assert_eq!(distortion_scan(&SystemSpec::Doubling, 8, 4, &mut rng).unwrap(), 0.0);
        let g1 = distortion_by_rank(&SystemSpec::Gauss, 1, 0, &mut rng).unwrap()[0];
        assert!(g1 >= 3.0 - 1e-12, "{g1}");
        let pwl = SystemSpec::PiecewiseLinearMarkov(
            PwlMarkov::full_branch(vec![r(0, 1), r(1, 3), r(1, 1)]).unwrap(),
        );
        assert_eq!(distortion_scan(&pwl, 6, 4, &mut rng).unwrap(), 0.0);
        assert!(distortion_scan(&SystemSpec::Gauss, 9, 1, &mut rng).is_err());
    }

    #[test]
    fn decay_fit_doubling_is_exact() {
        let fit = cylinder_decay_fit(&SystemSpec::Doubling, 1..=8).unwrap();
        assert_eq!(fit.q, 0.5);
        assert_eq!(fit.kappa, 1.0);
        assert_eq!(fit.max_residual, 0.0);
    }

    #[test]
    fn gauss_max_cylinder_is_golden() {
        for n in 1..=6u32 {
            let golden = cylinder(&SystemSpec::Gauss, &vec![1; n as usize]).unwrap();
            let m = invariant_measure_of_interval(&SystemSpec::Gauss, golden.lo, golden.hi).unwrap();
            assert_eq!(max_cylinder_mass(&SystemSpec::Gauss, n).unwrap(), m);
        }
    }

    #[test]
    fn yosida_examples() {
        let n = 256;
        let u: Vec<f64> = (0..n).map(|i| if i < n / 2 { 2.0 } else { 0.0 }).collect();
        let v = vec![1.0; n];
        let d = yosida_average_decay(&SystemSpec::Doubling, &u, &v, 80).unwrap();
        assert!(d <= 0.1, "{d}");
        assert_eq!(yosida_average_decay(&SystemSpec::Doubling, &u, &v, 1).unwrap(), 1.0);
        assert_eq!(yosida_average_decay(&SystemSpec::Doubling, &v, &v, 5).unwrap(), 0.0);
        assert!(matches!(
            yosida_average_decay(&SystemSpec::Doubling, &u[..100], &v[..100], 3),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn pwl_stationary_mass_is_exact() {
        let pts = vec![r(0, 1), r(1, 4), r(1, 2), r(1, 1)];
        let branches = vec![
            crate::dynsys::PwlBranch { image_start: 0, image_end: 3, increasing: true },
            crate::dynsys::PwlBranch { image_start: 2, image_end: 3, increasing: true },
            crate::dynsys::PwlBranch { image_start: 0, image_end: 3, increasing: true },
        ];
        let m = PwlMarkov::new(pts, branches).unwrap();
        let exact = exact_stationary_mass(&m).unwrap();
        let total = exact.iter().fold(BigRational::zero(), |a, b| a + b);
        assert!(total.is_one());
        for (e, f) in exact.iter().zip(m.cell_mass()) {
            assert!((e.to_f64().unwrap() - f).abs() < 1e-13);
        }
    }
}
