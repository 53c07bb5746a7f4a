//! Concrete interval maps and the iteration engine.
//!
//! Four families are supported: the Gauss (continued-fraction) map, the
//! doubling map, piecewise-linear Markov maps with rational breakpoints and
//! the two-branch intermittent map
//!
//! ```text
//! T(x) = x (1 + ((1-c)/c) (x/c)^α)   on [0, c)
//! T(x) = (x - c) / (1 - c)           on [c, 1]
//! ```
//!
//! which for `c = 1/2` is the usual `x(1 + 2^α x^α)`, `2x - 1` form.
//!
//! Partition conventions: Gauss digits live on `I_k = (1/(k+1), 1/k]`,
//! every other map uses left-closed cells `[p_i, p_{i+1})` with the last
//! cell also owning `x = 1`.
//!
//! All arithmetic is `f64`. Orbits of the doubling map are the one place
//! where that is not good enough (every step discards a mantissa bit), so
//! [`Orbit`] runs it on a 64-bit fixed-point window which either shifts in
//! zeros (exact dyadic start points) or fresh random bits (a μ-typical
//! point whose unseen binary digits are drawn lazily).

use num_rational::Rational64;
use num_traits::ToPrimitive;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::rare_events::{Interval, IntervalUnion};
use crate::stats::SeededRng;

/// Gauss digits beyond this are treated as overflow.
pub const GAUSS_DIGIT_CAP: f64 = 1e12;
const GAUSS_MIN_X: f64 = 1.0 / GAUSS_DIGIT_CAP;

/// A point of the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PointX(f64);

impl PointX {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::OutOfRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemKind {
    Gauss,
    Doubling,
    PiecewiseLinearMarkov,
    Intermittent,
}

/// One branch of a piecewise-linear Markov map: the cell `[p_i, p_{i+1})`
/// is mapped affinely onto the union of cells `image_start..image_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct PwlBranch {
    pub image_start: usize,
    pub image_end: usize,
    pub increasing: bool,
}

/// Piecewise-linear Markov map on a rational partition of `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PwlMarkov {
    points: Vec<Rational64>,
    points_f: Vec<f64>,
    branches: Vec<PwlBranch>,
    /// Stationary μ-mass of each cell.
    cell_mass: Vec<f64>,
    /// μ([0, p_i]).
    cdf_at_points: Vec<f64>,
}

impl PwlMarkov {
    pub fn new(points: Vec<Rational64>, branches: Vec<PwlBranch>) -> Result<Self> {
        let zero = Rational64::from_integer(0);
        let one = Rational64::from_integer(1);
        if points.len() < 2 || points[0] != zero || *points.last().unwrap() != one {
            return Err(Error::InvalidSystem(
                "breakpoints must start at 0 and end at 1".into(),
            ));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSystem(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        let cells = points.len() - 1;
        if branches.len() != cells {
            return Err(Error::InvalidSystem(format!(
                "{} cells but {} branches",
                cells,
                branches.len()
            )));
        }
        for (i, b) in branches.iter().enumerate() {
            if b.image_start >= b.image_end || b.image_end > cells {
                return Err(Error::InvalidSystem(format!("branch {i} has an empty image")));
            }
            let dom = points[i + 1] - points[i];
            let img = points[b.image_end] - points[b.image_start];
            if img <= dom {
                return Err(Error::InvalidSystem(format!("branch {i} is not expanding")));
            }
        }
        let points_f: Vec<f64> = points.iter().map(|p| p.to_f64().unwrap()).collect();
        let mut map = Self {
            points,
            points_f,
            branches,
            cell_mass: Vec::new(),
            cdf_at_points: Vec::new(),
        };
        map.cell_mass = map.stationary_mass()?;
        let mut acc = 0.0;
        map.cdf_at_points.push(0.0);
        for m in &map.cell_mass {
            acc += m;
            map.cdf_at_points.push(acc);
        }
        *map.cdf_at_points.last_mut().unwrap() = 1.0;
        Ok(map)
    }

    /// Convenience constructor: every branch maps its cell increasingly onto `[0, 1]`.
    pub fn full_branch(points: Vec<Rational64>) -> Result<Self> {
        let cells = points.len().saturating_sub(1);
        let branches = (0..cells)
            .map(|_| PwlBranch {
                image_start: 0,
                image_end: cells,
                increasing: true,
            })
            .collect();
        Self::new(points, branches)
    }

    pub fn points(&self) -> &[Rational64] {
        &self.points
    }

    pub fn branches(&self) -> &[PwlBranch] {
        &self.branches
    }

    pub fn cells(&self) -> usize {
        self.branches.len()
    }

    pub fn cell_mass(&self) -> &[f64] {
        &self.cell_mass
    }

    /// Exact slope of branch `i`.
    pub fn slope(&self, i: usize) -> Rational64 {
        let b = &self.branches[i];
        (self.points[b.image_end] - self.points[b.image_start]) / (self.points[i + 1] - self.points[i])
    }

    /// Mass transition matrix `P[j][i] = |J_j| / |T(I_i)|` for `J_j ⊆ T(I_i)`.
    pub fn transition(&self) -> Vec<Vec<(usize, Rational64)>> {
        (0..self.cells())
            .map(|i| {
                let b = &self.branches[i];
                let img = self.points[b.image_end] - self.points[b.image_start];
                (b.image_start..b.image_end)
                    .map(|j| (j, (self.points[j + 1] - self.points[j]) / img))
                    .collect()
            })
            .collect()
    }

    fn stationary_mass(&self) -> Result<Vec<f64>> {
        let n = self.cells();
        let cols: Vec<Vec<(usize, f64)>> = self
            .transition()
            .into_iter()
            .map(|c| c.into_iter().map(|(j, p)| (j, p.to_f64().unwrap())).collect())
            .collect();
        // Lazy chain (P + I)/2 has the same stationary vector and is aperiodic.
        let mut m = vec![1.0 / n as f64; n];
        for _ in 0..200_000 {
            let mut next: Vec<f64> = m.iter().map(|v| 0.5 * v).collect();
            for (i, col) in cols.iter().enumerate() {
                for &(j, p) in col {
                    next[j] += 0.5 * p * m[i];
                }
            }
            let total: f64 = next.iter().sum();
            next.iter_mut().for_each(|v| *v /= total);
            // lazy step moves by half the eigen-residual ‖Pm − m‖₁
            let residual: f64 = 2.0 * next.iter().zip(&m).map(|(a, b)| (a - b).abs()).sum::<f64>();
            m = next;
            if residual < 1e-14 {
                return Ok(m);
            }
        }
        Err(Error::InvalidSystem(
            "stationary vector did not converge (reducible chain?)".into(),
        ))
    }

    fn cell_of(&self, x: f64) -> usize {
        let idx = self.points_f.partition_point(|&p| p <= x);
        idx.saturating_sub(1).min(self.cells() - 1)
    }

    fn cdf(&self, x: f64) -> f64 {
        let i = self.cell_of(x);
        let (lo, hi) = (self.points_f[i], self.points_f[i + 1]);
        self.cdf_at_points[i] + self.cell_mass[i] * (x - lo) / (hi - lo)
    }

    fn quantile(&self, u: f64) -> f64 {
        let i = self
            .cdf_at_points
            .partition_point(|&c| c <= u)
            .saturating_sub(1)
            .min(self.cells() - 1);
        let (lo, hi) = (self.points_f[i], self.points_f[i + 1]);
        let frac = (u - self.cdf_at_points[i]) / self.cell_mass[i];
        (lo + frac * (hi - lo)).clamp(lo, hi)
    }
}

/// Parameters of the two-branch intermittent map.
#[derive(Debug, Clone, PartialEq)]
pub struct Intermittent {
    pub alpha: f64,
    pub c: f64,
    /// Burn-in length used when sampling the invariant measure.
    pub burn_in: u64,
}

impl Intermittent {
    pub fn new(alpha: f64, c: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidSystem(format!("alpha = {alpha} not in (0,1)")));
        }
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::InvalidSystem(format!("c = {c} not in (0,1)")));
        }
        Ok(Self {
            alpha,
            c,
            burn_in: 10_000,
        })
    }

    pub fn with_burn_in(mut self, burn_in: u64) -> Self {
        self.burn_in = burn_in;
        self
    }

    #[inline]
    fn left(&self, x: f64) -> f64 {
        let beta = (1.0 - self.c) / self.c;
        x * (1.0 + beta * (x / self.c).powf(self.alpha))
    }

    fn left_derivative(&self, x: f64) -> f64 {
        let beta = (1.0 - self.c) / self.c;
        1.0 + beta * (1.0 + self.alpha) * (x / self.c).powf(self.alpha)
    }

    fn left_inverse(&self, y: f64) -> f64 {
        // T is increasing on [0, c) with T(x) >= x, so the root lies in [0, min(y, c)].
        let (mut lo, mut hi) = (0.0, y.min(self.c));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.left(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// A concrete interval map.
#[derive(Debug, Clone, PartialEq)]
pub enum SystemSpec {
    Gauss,
    Doubling,
    PiecewiseLinearMarkov(PwlMarkov),
    Intermittent(Intermittent),
}

impl SystemSpec {
    pub fn kind(&self) -> SystemKind {
        match self {
            SystemSpec::Gauss => SystemKind::Gauss,
            SystemSpec::Doubling => SystemKind::Doubling,
            SystemSpec::PiecewiseLinearMarkov(_) => SystemKind::PiecewiseLinearMarkov,
            SystemSpec::Intermittent(_) => SystemKind::Intermittent,
        }
    }

    /// Number of branches, `None` for the countable Gauss partition.
    pub fn branch_count(&self) -> Option<u64> {
        match self {
            SystemSpec::Gauss => None,
            SystemSpec::Doubling | SystemSpec::Intermittent(_) => Some(2),
            SystemSpec::PiecewiseLinearMarkov(m) => Some(m.cells() as u64),
        }
    }

    /// Smallest valid branch index (Gauss digits start at 1).
    pub fn first_branch(&self) -> u64 {
        match self {
            SystemSpec::Gauss => 1,
            _ => 0,
        }
    }

    pub fn has_exact_measure(&self) -> bool {
        !matches!(self, SystemSpec::Intermittent(_))
    }

    fn check_branch(&self, k: u64) -> Result<()> {
        let ok = match self.branch_count() {
            None => k >= 1,
            Some(n) => k < n,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::NoSuchBranch { index: k })
        }
    }

    /// The partition element owning branch `k`.
    pub fn branch_interval(&self, k: u64) -> Result<Interval> {
        self.check_branch(k)?;
        Ok(match self {
            SystemSpec::Gauss => Interval::open_closed(1.0 / (k as f64 + 1.0), 1.0 / k as f64),
            SystemSpec::Doubling => {
                if k == 0 {
                    Interval::closed_open(0.0, 0.5)
                } else {
                    Interval::closed(0.5, 1.0)
                }
            }
            SystemSpec::Intermittent(p) => {
                if k == 0 {
                    Interval::closed_open(0.0, p.c)
                } else {
                    Interval::closed(p.c, 1.0)
                }
            }
            SystemSpec::PiecewiseLinearMarkov(m) => {
                let i = k as usize;
                let (lo, hi) = (m.points_f[i], m.points_f[i + 1]);
                if i + 1 == m.cells() {
                    Interval::closed(lo, hi)
                } else {
                    Interval::closed_open(lo, hi)
                }
            }
        })
    }

    /// `T(Z_k)`, the image of branch `k`.
    pub fn branch_image(&self, k: u64) -> Result<Interval> {
        self.check_branch(k)?;
        Ok(match self {
            SystemSpec::Gauss => Interval::closed_open(0.0, 1.0),
            SystemSpec::Doubling | SystemSpec::Intermittent(_) => {
                if k == 0 {
                    Interval::closed_open(0.0, 1.0)
                } else {
                    Interval::closed(0.0, 1.0)
                }
            }
            SystemSpec::PiecewiseLinearMarkov(m) => {
                let b = &m.branches[k as usize];
                let (lo, hi) = (m.points_f[b.image_start], m.points_f[b.image_end]);
                let last = k as usize + 1 == m.cells();
                match (b.increasing, last) {
                    (true, false) => Interval::closed_open(lo, hi),
                    (false, false) => Interval::open_closed(lo, hi),
                    _ => Interval::closed(lo, hi),
                }
            }
        })
    }

    pub fn branch_increasing(&self, k: u64) -> bool {
        match self {
            SystemSpec::Gauss => false,
            SystemSpec::PiecewiseLinearMarkov(m) => m.branches[k as usize].increasing,
            _ => true,
        }
    }

    /// Branch index owning `x`.
    pub fn branch_of(&self, x: f64) -> Result<u64> {
        match self {
            SystemSpec::Gauss => cf_digit(x),
            SystemSpec::Doubling => Ok(u64::from(x >= 0.5)),
            SystemSpec::Intermittent(p) => Ok(u64::from(x >= p.c)),
            SystemSpec::PiecewiseLinearMarkov(m) => Ok(m.cell_of(x) as u64),
        }
    }

    /// Inverse branch `v_k(y)`, defined for `y` in the image of branch `k`.
    pub fn inverse_branch(&self, k: u64, y: f64) -> f64 {
        match self {
            SystemSpec::Gauss => 1.0 / (k as f64 + y),
            SystemSpec::Doubling => 0.5 * (y + k as f64),
            SystemSpec::Intermittent(p) => {
                if k == 0 {
                    p.left_inverse(y)
                } else {
                    p.c + (1.0 - p.c) * y
                }
            }
            SystemSpec::PiecewiseLinearMarkov(m) => {
                let i = k as usize;
                let b = &m.branches[i];
                let (lo, hi) = (m.points_f[i], m.points_f[i + 1]);
                let (ilo, ihi) = (m.points_f[b.image_start], m.points_f[b.image_end]);
                let frac = (y - ilo) / (ihi - ilo);
                if b.increasing {
                    lo + frac * (hi - lo)
                } else {
                    hi - frac * (hi - lo)
                }
            }
        }
    }

    /// `|v_k'(y)|` with respect to Lebesgue measure.
    pub fn inverse_branch_derivative(&self, k: u64, y: f64) -> f64 {
        match self {
            SystemSpec::Gauss => {
                let d = k as f64 + y;
                1.0 / (d * d)
            }
            SystemSpec::Doubling => 0.5,
            SystemSpec::Intermittent(p) => {
                if k == 0 {
                    1.0 / p.left_derivative(p.left_inverse(y))
                } else {
                    1.0 - p.c
                }
            }
            SystemSpec::PiecewiseLinearMarkov(m) => 1.0 / m.slope(k as usize).to_f64().unwrap(),
        }
    }

    /// Lebesgue density of μ where it is known in closed form.
    pub fn density(&self, x: f64) -> Option<f64> {
        match self {
            SystemSpec::Gauss => Some(1.0 / (std::f64::consts::LN_2 * (1.0 + x))),
            SystemSpec::Doubling => Some(1.0),
            SystemSpec::PiecewiseLinearMarkov(m) => {
                let i = m.cell_of(x);
                Some(m.cell_mass[i] / (m.points_f[i + 1] - m.points_f[i]))
            }
            SystemSpec::Intermittent(_) => None,
        }
    }

    /// Distribution function `μ([0, x])` for systems with an exact measure.
    pub fn invariant_cdf(&self, x: f64) -> Result<f64> {
        let x = x.clamp(0.0, 1.0);
        match self {
            SystemSpec::Gauss => Ok(x.ln_1p() / std::f64::consts::LN_2),
            SystemSpec::Doubling => Ok(x),
            SystemSpec::PiecewiseLinearMarkov(m) => Ok(m.cdf(x)),
            SystemSpec::Intermittent(_) => Err(Error::NoClosedFormMeasure),
        }
    }

    /// Inverse of [`Self::invariant_cdf`].
    pub fn invariant_quantile(&self, u: f64) -> Result<f64> {
        let u = u.clamp(0.0, 1.0);
        match self {
            SystemSpec::Gauss => Ok((u * std::f64::consts::LN_2).exp_m1()),
            SystemSpec::Doubling => Ok(u),
            SystemSpec::PiecewiseLinearMarkov(m) => Ok(m.quantile(u)),
            SystemSpec::Intermittent(_) => Err(Error::NoClosedFormMeasure),
        }
    }
}

/// The continued-fraction digit `⌊1/x⌋`.
pub fn cf_digit(x: f64) -> Result<u64> {
    if x <= 0.0 {
        return Err(Error::GaussAtZero);
    }
    if x > 1.0 {
        return Err(Error::OutOfRange(x));
    }
    if x < GAUSS_MIN_X {
        return Err(Error::DigitCapExceeded {
            x,
            cap: GAUSS_DIGIT_CAP,
        });
    }
    Ok((1.0 / x).floor() as u64)
}

#[inline]
fn gauss_step(x: f64) -> Result<f64> {
    let inv = 1.0 / x;
    let k = cf_digit(x)?;
    Ok((inv - k as f64).max(0.0))
}

/// One application of the map.
pub fn evaluate_map(sys: &SystemSpec, x: PointX) -> Result<PointX> {
    let x = x.value();
    let y = match sys {
        SystemSpec::Gauss => gauss_step(x)?,
        SystemSpec::Doubling => {
            if x < 0.5 {
                2.0 * x
            } else {
                2.0 * x - 1.0
            }
        }
        SystemSpec::Intermittent(p) => {
            if x < p.c {
                p.left(x).min(1.0)
            } else {
                (x - p.c) / (1.0 - p.c)
            }
        }
        SystemSpec::PiecewiseLinearMarkov(m) => {
            let i = m.cell_of(x);
            let b = &m.branches[i];
            let (lo, hi) = (m.points_f[i], m.points_f[i + 1]);
            let (ilo, ihi) = (m.points_f[b.image_start], m.points_f[b.image_end]);
            let frac = (x - lo) / (hi - lo);
            if b.increasing {
                ilo + frac * (ihi - ilo)
            } else {
                ihi - frac * (ihi - ilo)
            }
        }
    };
    PointX::new(y.clamp(0.0, 1.0))
}

/// `μ([a, b])`.
pub fn invariant_measure_of_interval(sys: &SystemSpec, a: f64, b: f64) -> Result<f64> {
    if !(0.0 <= a && a <= b && b <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= a <= b <= 1, got [{a}, {b}]"
        )));
    }
    match sys {
        // Direct form keeps full relative precision for tiny intervals near 0.
        SystemSpec::Gauss => Ok(((b - a) / (1.0 + a)).ln_1p() / std::f64::consts::LN_2),
        SystemSpec::Doubling => Ok(b - a),
        _ => Ok(sys.invariant_cdf(b)? - sys.invariant_cdf(a)?),
    }
}

/// One draw from μ. Gauss, doubling and PWL maps use exact inverse-CDF
/// sampling; the intermittent map pushes a uniform point forward for its
/// configured burn-in.
pub fn sample_invariant(sys: &SystemSpec, rng: &mut SeededRng) -> PointX {
    let x = match sys {
        SystemSpec::Gauss => loop {
            let x = sys.invariant_quantile(rng.gen::<f64>()).unwrap();
            if x >= GAUSS_MIN_X {
                break x;
            }
        },
        SystemSpec::Doubling | SystemSpec::PiecewiseLinearMarkov(_) => {
            sys.invariant_quantile(rng.gen::<f64>()).unwrap()
        }
        SystemSpec::Intermittent(p) => {
            let start = PointX(rng.gen::<f64>());
            let mut orbit = Orbit::randomized(sys, start, rng.fork());
            for _ in 0..p.burn_in {
                orbit.step().expect("intermittent orbits never fail");
            }
            orbit.position()
        }
    };
    PointX(x)
}

/// The cylinder `⋂_{i<n} T^{-i} Z_{w_i}` built by composing inverse branches.
pub fn cylinder_interval(sys: &SystemSpec, word: &[u64]) -> Result<IntervalUnion> {
    let iv = cylinder(sys, word)?;
    IntervalUnion::exact(sys, vec![iv])
}

/// Like [`cylinder_interval`] but returns the bare interval (no measure).
pub fn cylinder(sys: &SystemSpec, word: &[u64]) -> Result<Interval> {
    let empty = || Error::EmptyCylinder {
        word: word.to_vec(),
    };
    let (&last, rest) = word.split_last().ok_or_else(empty)?;
    let mut j = sys.branch_interval(last)?;
    for &k in rest.iter().rev() {
        j = pull_back(sys, k, &j)?.ok_or_else(empty)?;
    }
    Ok(j)
}

/// `Z_k ∩ T^{-1} J`, i.e. the preimage of `J` under branch `k`.
pub fn pull_back(sys: &SystemSpec, k: u64, j: &Interval) -> Result<Option<Interval>> {
    let img = sys.branch_image(k)?;
    let Some(j) = j.intersect(&img) else {
        return Ok(None);
    };
    let a = sys.inverse_branch(k, j.lo);
    let b = sys.inverse_branch(k, j.hi);
    let mapped = if sys.branch_increasing(k) {
        Interval::new(a, b, j.lo_closed, j.hi_closed)
    } else {
        Interval::new(b, a, j.hi_closed, j.lo_closed)
    };
    Ok(mapped.intersect(&sys.branch_interval(k)?))
}

enum OrbitState {
    Real(f64),
    /// Doubling map state as a 64-bit binary fraction.
    Dyadic(u64),
}

/// A forward orbit.
///
/// `Orbit::exact` follows the floating-point map literally (and, for the
/// doubling map, treats the start point as a finite binary fraction);
/// `Orbit::randomized` treats the start point as the first 53 bits of a
/// μ-typical point and draws the rest on demand.
pub struct Orbit<'a> {
    sys: &'a SystemSpec,
    state: OrbitState,
    tail: Option<SeededRng>,
    bits: u64,
    bits_left: u32,
}

impl<'a> Orbit<'a> {
    pub fn exact(sys: &'a SystemSpec, x: PointX) -> Self {
        Self::build(sys, x, None)
    }

    pub fn randomized(sys: &'a SystemSpec, x: PointX, rng: SeededRng) -> Self {
        Self::build(sys, x, Some(rng))
    }

    fn build(sys: &'a SystemSpec, x: PointX, mut tail: Option<SeededRng>) -> Self {
        let x = x.value();
        let state = match sys {
            SystemSpec::Doubling if x < 1.0 => {
                let mut s = (x * 18_446_744_073_709_551_616.0) as u64;
                if let (Some(rng), true) = (tail.as_mut(), x > 0.0) {
                    // bits below the last mantissa bit of x are unknown
                    let e = ((x.to_bits() >> 52) & 0x7ff) as i32 - 1023;
                    let unknown = (e + 12).clamp(0, 11) as u32;
                    if unknown > 0 {
                        s |= rng.next_u64() >> (64 - unknown);
                    }
                }
                OrbitState::Dyadic(s)
            }
            _ => OrbitState::Real(x),
        };
        Self {
            sys,
            state,
            tail,
            bits: 0,
            bits_left: 0,
        }
    }

    pub fn system(&self) -> &'a SystemSpec {
        self.sys
    }

    #[inline]
    pub fn position(&self) -> f64 {
        match self.state {
            OrbitState::Real(x) => x,
            // truncating keeps the value strictly below 1
            OrbitState::Dyadic(s) => (s >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0),
        }
    }

    #[inline]
    fn next_bit(&mut self) -> u64 {
        match self.tail.as_mut() {
            None => 0,
            Some(rng) => {
                if self.bits_left == 0 {
                    self.bits = rng.next_u64();
                    self.bits_left = 64;
                }
                let b = self.bits & 1;
                self.bits >>= 1;
                self.bits_left -= 1;
                b
            }
        }
    }

    /// Advance one step and return the new position.
    #[inline]
    pub fn step(&mut self) -> Result<f64> {
        match self.state {
            OrbitState::Dyadic(s) => {
                let bit = self.next_bit();
                self.state = OrbitState::Dyadic((s << 1) | bit);
            }
            OrbitState::Real(x) => {
                let y = match self.sys {
                    SystemSpec::Gauss => {
                        let y = gauss_step(x)?;
                        match self.tail.as_mut() {
                            // below the digit cap: the true point is some x in (0, 1e-12)
                            Some(rng) if y < GAUSS_MIN_X => {
                                GAUSS_MIN_X * (1.0 - rng.gen::<f64>())
                            }
                            _ => y,
                        }
                    }
                    _ => {
                        let y = evaluate_map(self.sys, PointX(x))?.value();
                        match self.tail.as_mut() {
                            // exact 0 is a fixed point only reached through rounding
                            Some(rng) if y == 0.0 => f64::EPSILON * (1.0 - rng.gen::<f64>()),
                            _ => y,
                        }
                    }
                };
                self.state = OrbitState::Real(y);
            }
        }
        Ok(self.position())
    }
}
