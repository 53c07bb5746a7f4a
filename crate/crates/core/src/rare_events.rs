//! Rare target sets: interval unions, the shrinking families used in the
//! experiments, and inner approximation of intervals by cylinders.

use serde::{Deserialize, Serialize};

use crate::dynsys::{cylinder, invariant_measure_of_interval, pull_back, SystemSpec};
use crate::error::{Error, Result};

/// An interval of `[0, 1]` with explicit endpoint closedness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn new(lo: f64, hi: f64, lo_closed: bool, hi_closed: bool) -> Self {
        Self {
            lo,
            hi,
            lo_closed,
            hi_closed,
        }
    }
    pub fn closed(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, true, true)
    }
    pub fn open(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, false, false)
    }
    pub fn closed_open(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, true, false)
    }
    pub fn open_closed(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, false, true)
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        (x > self.lo || (self.lo_closed && x == self.lo))
            && (x < self.hi || (self.hi_closed && x == self.hi))
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }

    pub fn length(&self) -> f64 {
        (self.hi - self.lo).max(0.0)
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let (lo, lo_closed) = if self.lo > other.lo {
            (self.lo, self.lo_closed)
        } else if other.lo > self.lo {
            (other.lo, other.lo_closed)
        } else {
            (self.lo, self.lo_closed && other.lo_closed)
        };
        let (hi, hi_closed) = if self.hi < other.hi {
            (self.hi, self.hi_closed)
        } else if other.hi < self.hi {
            (other.hi, other.hi_closed)
        } else {
            (self.hi, self.hi_closed && other.hi_closed)
        };
        let iv = Interval::new(lo, hi, lo_closed, hi_closed);
        (!iv.is_empty()).then_some(iv)
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        if self.is_empty() {
            return true;
        }
        let lo_ok = self.lo > other.lo || (self.lo == other.lo && (other.lo_closed || !self.lo_closed));
        let hi_ok = self.hi < other.hi || (self.hi == other.hi && (other.hi_closed || !self.hi_closed));
        lo_ok && hi_ok
    }

    /// Whether `self` ends exactly where `next` starts with no gap or overlap.
    fn abuts(&self, next: &Interval) -> bool {
        self.hi == next.lo && (self.hi_closed != next.lo_closed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MassKind {
    Exact,
    Estimated { std_err: f64 },
}

/// A rare event: a finite union of disjoint subintervals of `[0, 1]`
/// together with its μ-mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalUnion {
    intervals: Vec<Interval>,
    mu_mass: f64,
    mass_kind: MassKind,
}

impl IntervalUnion {
    /// Builds a union whose mass is computed from the system's exact measure.
    pub fn exact(sys: &SystemSpec, intervals: Vec<Interval>) -> Result<Self> {
        let intervals = normalize(intervals)?;
        let mut mass = 0.0;
        for iv in &intervals {
            mass += invariant_measure_of_interval(sys, iv.lo, iv.hi).map_err(|e| match e {
                Error::InvalidArgument(m) => Error::DegenerateTarget(m),
                other => other,
            })?;
        }
        if !(mass > 0.0) {
            return Err(Error::DegenerateTarget(format!("mass {mass}")));
        }
        Ok(Self {
            intervals,
            mu_mass: mass,
            mass_kind: MassKind::Exact,
        })
    }

    /// Builds a union with an externally estimated mass.
    pub fn estimated(intervals: Vec<Interval>, mass: f64, std_err: f64) -> Result<Self> {
        let intervals = normalize(intervals)?;
        if !(mass > 0.0) {
            return Err(Error::DegenerateTarget(format!("estimated mass {mass}")));
        }
        Ok(Self {
            intervals,
            mu_mass: mass,
            mass_kind: MassKind::Estimated { std_err },
        })
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn mu_mass(&self) -> f64 {
        self.mu_mass
    }

    pub fn mass_kind(&self) -> MassKind {
        self.mass_kind
    }

    /// The single interval, if the union has exactly one piece.
    pub fn as_single(&self) -> Option<&Interval> {
        match self.intervals.as_slice() {
            [iv] => Some(iv),
            _ => None,
        }
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        match self.intervals.as_slice() {
            [iv] => iv.contains(x),
            ivs => ivs.iter().any(|iv| iv.contains(x)),
        }
    }

    pub fn is_subset_of(&self, other: &IntervalUnion) -> bool {
        self.intervals
            .iter()
            .all(|a| other.intervals.iter().any(|b| a.is_subset_of(b)))
    }

    pub fn hull(&self) -> Interval {
        let first = self.intervals.first().unwrap();
        let last = self.intervals.last().unwrap();
        Interval::new(first.lo, last.hi, first.lo_closed, last.hi_closed)
    }
}

/// Sorts, rejects overlaps, and merges abutting pieces.
fn normalize(mut intervals: Vec<Interval>) -> Result<Vec<Interval>> {
    intervals.retain(|iv| !iv.is_empty());
    if intervals.is_empty() {
        return Err(Error::DegenerateTarget("empty interval union".into()));
    }
    for iv in &intervals {
        if iv.lo < 0.0 || iv.hi > 1.0 || iv.lo.is_nan() || iv.hi.is_nan() {
            return Err(Error::DegenerateTarget(format!(
                "[{}, {}] leaves the unit interval",
                iv.lo, iv.hi
            )));
        }
    }
    intervals.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let mut out: Vec<Interval> = Vec::with_capacity(intervals.len());
    for iv in intervals {
        if let Some(prev) = out.last_mut() {
            if prev.abuts(&iv) {
                prev.hi = iv.hi;
                prev.hi_closed = iv.hi_closed;
                continue;
            }
            if prev.intersect(&iv).is_some() {
                return Err(Error::DegenerateTarget("overlapping intervals".into()));
            }
        }
        out.push(iv);
    }
    Ok(out)
}

/// Symbolic itinerary `prefix · period^∞` of a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Itinerary {
    pub prefix: Vec<u64>,
    pub period: Vec<u64>,
}

impl Itinerary {
    pub fn periodic(period: Vec<u64>) -> Self {
        Self {
            prefix: Vec::new(),
            period,
        }
    }

    /// The first `n` symbols.
    pub fn symbols(&self, n: usize) -> Vec<u64> {
        self.prefix
            .iter()
            .copied()
            .chain(self.period.iter().copied().cycle())
            .take(n)
            .collect()
    }

    pub fn is_purely_periodic(&self) -> bool {
        self.prefix.is_empty() && !self.period.is_empty()
    }
}

/// How the radius of a shrinking interval depends on `l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum RadiusRule {
    /// `r_l = rho0 / l`
    Harmonic { rho0: f64 },
    /// `r_l = base^{-(l + offset)}`
    Geometric { base: f64, offset: i32 },
}

impl Default for RadiusRule {
    fn default() -> Self {
        RadiusRule::Harmonic { rho0: 0.5 }
    }
}

impl RadiusRule {
    pub fn radius(&self, l: u64) -> f64 {
        match *self {
            RadiusRule::Harmonic { rho0 } => rho0 / l as f64,
            RadiusRule::Geometric { base, offset } => base.powi(-(l as i32 + offset)),
        }
    }
}

/// Which rank-one cylinders make up a union target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum UnionRule {
    /// Gauss digits `l ≤ k < factor·l`.
    DigitWindow { factor: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RareFamilySpec {
    CylinderAtPoint(Itinerary),
    DigitTail,
    ShrinkingInterval { center: f64, radius: RadiusRule },
    UnionOfRankOne(UnionRule),
}

/// The intervals of the `l`-th member of a family (no measure attached).
pub fn target_intervals(sys: &SystemSpec, fam: &RareFamilySpec, l: u64) -> Result<Vec<Interval>> {
    if l == 0 {
        return Err(Error::InvalidArgument("l must be >= 1".into()));
    }
    match fam {
        RareFamilySpec::DigitTail => {
            require_gauss(sys, "DigitTail")?;
            Ok(vec![Interval::open_closed(0.0, 1.0 / l as f64)])
        }
        RareFamilySpec::CylinderAtPoint(it) => {
            let word = it.symbols(l as usize);
            Ok(vec![cylinder(sys, &word)?])
        }
        RareFamilySpec::ShrinkingInterval { center, radius } => {
            let r = radius.radius(l);
            let lo = (center - r).max(0.0);
            let hi = (center + r).min(1.0);
            if !(r > 0.0) || lo >= hi {
                return Err(Error::DegenerateTarget(format!("radius {r} at l = {l}")));
            }
            Ok(vec![Interval::closed(lo, hi)])
        }
        RareFamilySpec::UnionOfRankOne(UnionRule::DigitWindow { factor }) => {
            require_gauss(sys, "UnionOfRankOne")?;
            if *factor < 2 {
                return Err(Error::DegenerateTarget("digit window factor must be >= 2".into()));
            }
            // ⋃_{l ≤ k < factor·l} (1/(k+1), 1/k] = (1/(factor·l), 1/l]
            Ok(vec![Interval::open_closed(
                1.0 / (factor * l) as f64,
                1.0 / l as f64,
            )])
        }
    }
}

fn require_gauss(sys: &SystemSpec, what: &str) -> Result<()> {
    if matches!(sys, SystemSpec::Gauss) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} targets need the Gauss map")))
    }
}

/// The `l`-th member of a rare family with its exact measure.
pub fn make_target(sys: &SystemSpec, fam: &RareFamilySpec, l: u64) -> Result<IntervalUnion> {
    IntervalUnion::exact(sys, target_intervals(sys, fam, l)?)
}

/// Cylinder rank `⌈-2 log μ(A) / -log q⌉`.
pub fn rank_of(mu_a: f64, q: f64) -> Result<u32> {
    if !(mu_a > 0.0 && mu_a < 1.0) || !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rank_of needs 0 < μ(A) < 1 and 0 < q < 1, got {mu_a}, {q}"
        )));
    }
    let r = (-2.0 * mu_a.ln()) / (-q.ln());
    // absorb rounding so that e.g. μ = 1/16, q = 1/2 gives 8, not 9
    let nearest = r.round();
    let r = if (r - nearest).abs() <= 1e-9 * r { nearest } else { r };
    Ok((r.ceil() as u32).max(1))
}

/// Union of all rank-`rank` cylinders contained in the single interval `A`.
///
/// Gauss cylinders accumulate at one endpoint; a run of siblings from
/// digit `K` on is handled as the single interval `v_w((0, 1/K])` and the
/// enumeration stops once that tail is inside `A`, disjoint from it, or
/// lighter than `1e-15 μ(A)`.
pub fn approximate_by_cylinders(sys: &SystemSpec, a: &IntervalUnion, rank: u32) -> Result<IntervalUnion> {
    let target = *a.as_single().ok_or_else(|| {
        Error::InvalidArgument("cylinder approximation needs a single interval".into())
    })?;
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be >= 1".into()));
    }
    let mut ctx = Approx {
        sys,
        target,
        rank,
        min_mass: 1e-15 * a.mu_mass(),
        out: Vec::new(),
    };
    let mut word = Vec::new();
    ctx.children(&mut word)?;
    if ctx.out.is_empty() {
        return Err(Error::EmptyApproximation { rank });
    }
    IntervalUnion::exact(sys, ctx.out)
}

#[derive(PartialEq)]
enum Status {
    Inside,
    Below,
    Above,
    Straddles(Interval),
}

struct Approx<'a> {
    sys: &'a SystemSpec,
    target: Interval,
    rank: u32,
    min_mass: f64,
    out: Vec<Interval>,
}

impl Approx<'_> {
    fn pull_back_word(&self, word: &[u64], j: Interval) -> Result<Option<Interval>> {
        let mut j = j;
        for &k in word.iter().rev() {
            match pull_back(self.sys, k, &j)? {
                Some(next) => j = next,
                None => return Ok(None),
            }
        }
        Ok(Some(j))
    }

    fn child_status(&self, word: &[u64], k: u64) -> Result<Status> {
        let zk = self.sys.branch_interval(k)?;
        Ok(match self.pull_back_word(word, zk)? {
            Some(c) if c.is_subset_of(&self.target) => Status::Inside,
            Some(c) if c.intersect(&self.target).is_some() => Status::Straddles(c),
            Some(c) if c.hi <= self.target.lo => Status::Below,
            _ => Status::Above,
        })
    }

    /// Largest `j >= k` such that children `k..=j` of `word` all have `status`.
    fn last_same(&self, word: &[u64], k: u64, status: Status) -> Result<u64> {
        const LIMIT: u64 = 1 << 52;
        let same = |j: u64| -> Result<bool> { Ok(self.child_status(word, j)? == status) };
        let (mut lo, mut step) = (k, 1u64);
        while lo + step < LIMIT && same(lo + step)? {
            lo += step;
            step *= 2;
        }
        let mut hi = (lo + step).min(LIMIT);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if same(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }

    fn visit(&mut self, word: &mut Vec<u64>, cyl: Interval) -> Result<()> {
        if cyl.is_subset_of(&self.target) {
            self.out.push(cyl);
        } else if cyl.intersect(&self.target).is_some() && (word.len() as u32) < self.rank {
            self.children(word)?;
        }
        Ok(())
    }

    fn children(&mut self, word: &mut Vec<u64>) -> Result<()> {
        match self.sys.branch_count() {
            Some(n) => {
                for k in 0..n {
                    let zk = self.sys.branch_interval(k)?;
                    word.push(k);
                    if let Some(cyl) = self.pull_back_word(&word[..word.len() - 1], zk)? {
                        self.visit(word, cyl)?;
                    }
                    word.pop();
                }
            }
            None => {
                let mut k = 1u64;
                loop {
                    let tail_set = Interval::open_closed(0.0, 1.0 / k as f64);
                    let Some(tail) = self.pull_back_word(word, tail_set)? else {
                        break;
                    };
                    if tail.is_subset_of(&self.target) {
                        self.out.push(tail);
                        break;
                    }
                    if tail.intersect(&self.target).is_none()
                        || invariant_measure_of_interval(self.sys, tail.lo, tail.hi)? < self.min_mass
                    {
                        break;
                    }
                    // siblings move monotonically toward the tail point, so
                    // those inside, below or above the target form runs
                    match self.child_status(word, k)? {
                        Status::Inside => {
                            let last = self.last_same(word, k, Status::Inside)?;
                            let run = Interval::open_closed(1.0 / (last + 1) as f64, 1.0 / k as f64);
                            if let Some(iv) = self.pull_back_word(word, run)? {
                                self.out.push(iv);
                            }
                            k = last + 1;
                            continue;
                        }
                        side @ (Status::Below | Status::Above) => {
                            k = self.last_same(word, k, side)? + 1;
                            continue;
                        }
                        Status::Straddles(cyl) => {
                            word.push(k);
                            self.visit(word, cyl)?;
                            word.pop();
                        }
                    }
                    k += 1;
                }
            }
        }
        Ok(())
    }
}
