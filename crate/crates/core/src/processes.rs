//! Hitting-time, return-time, local and counting processes along orbits.

use serde::{Deserialize, Serialize};

use crate::dynsys::{cf_digit, Orbit, PointX, SystemSpec};
use crate::error::{Error, Result};
use crate::rare_events::{Interval, IntervalUnion};

/// Which local observable (mark) to record at each hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableSpec {
    #[default]
    None,
    /// Relative position `(x - a)/(b - a)` inside a single-interval target.
    IntervalChart,
    /// 1 if the CF digit at the hit is at least `l/ϑ`, else 0.
    DigitThreshold { vartheta: f64 },
    /// CF digit at the hit modulo `modulus`.
    DigitResidue { modulus: u64 },
    /// Index of the cell of a partition of the target that contains the hit.
    SubsetIndex { cells: Vec<Interval> },
}

/// An observable bound to a concrete target.
#[derive(Debug, Clone, PartialEq)]
pub enum Observable {
    None,
    Chart { lo: f64, width: f64 },
    Threshold { min_digit: u64 },
    Residue { modulus: u64 },
    Subset(Vec<Interval>),
}

impl ObservableSpec {
    /// Checks applicability and binds to the `l`-th target.
    pub fn bind(&self, sys: &SystemSpec, target: &IntervalUnion, l: u64) -> Result<Observable> {
        let gauss_tail = || -> Result<()> {
            let tail = matches!(sys, SystemSpec::Gauss)
                && matches!(target.as_single(), Some(iv) if iv.lo == 0.0);
            if tail {
                Ok(())
            } else {
                Err(Error::InvalidArgument(
                    "digit observables need a Gauss digit-tail target".into(),
                ))
            }
        };
        match self {
            ObservableSpec::None => Ok(Observable::None),
            ObservableSpec::IntervalChart => {
                let iv = target.as_single().ok_or_else(|| {
                    Error::InvalidArgument("interval chart needs a single-interval target".into())
                })?;
                Ok(Observable::Chart {
                    lo: iv.lo,
                    width: iv.hi - iv.lo,
                })
            }
            ObservableSpec::DigitThreshold { vartheta } => {
                gauss_tail()?;
                if !(*vartheta > 0.0 && *vartheta <= 1.0) {
                    return Err(Error::InvalidArgument(format!("ϑ = {vartheta} not in (0,1]")));
                }
                Ok(Observable::Threshold {
                    min_digit: (l as f64 / vartheta).ceil() as u64,
                })
            }
            ObservableSpec::DigitResidue { modulus } => {
                gauss_tail()?;
                if *modulus < 1 {
                    return Err(Error::InvalidArgument("modulus must be >= 1".into()));
                }
                Ok(Observable::Residue { modulus: *modulus })
            }
            ObservableSpec::SubsetIndex { cells } => {
                let union = IntervalUnion::estimated(cells.clone(), 1.0, 0.0);
                if !matches!(union, Ok(u) if u.intervals() == target.intervals()) {
                    return Err(Error::InvalidArgument(
                        "subset cells must partition the target".into(),
                    ));
                }
                Ok(Observable::Subset(cells.clone()))
            }
        }
    }
}

impl Observable {
    /// The mark of a point of the target.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Observable::None => 0.0,
            Observable::Chart { lo, width } => ((x - lo) / width).clamp(0.0, 1.0),
            Observable::Threshold { min_digit } => match cf_digit(x) {
                Ok(k) => (k >= *min_digit) as u8 as f64,
                Err(_) => 1.0,
            },
            Observable::Residue { modulus } => match cf_digit(x) {
                Ok(k) => (k % modulus) as f64,
                Err(_) => 0.0,
            },
            Observable::Subset(cells) => cells
                .iter()
                .position(|c| c.contains(x))
                .map_or(f64::NAN, |i| i as f64),
        }
    }
}

/// One orbit's record of its first hits of a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct HitSample {
    /// Cumulative step counts of the hits, strictly increasing.
    pub raw_times: Vec<u64>,
    /// Mark at each hit.
    pub marks: Vec<f64>,
    pub start_in_a: bool,
    /// Mark of the start point when it lies in the target.
    pub mark0: Option<f64>,
    /// The orbit went `cap` steps without a hit before `k` hits were seen.
    pub overflowed: bool,
}

impl HitSample {
    pub fn hits(&self) -> usize {
        self.raw_times.len()
    }

    /// Raw gaps between consecutive hits (the first gap is the first hit time).
    pub fn gaps(&self) -> impl Iterator<Item = u64> + '_ {
        let mut prev = 0;
        self.raw_times.iter().map(move |&t| {
            let g = t - prev;
            prev = t;
            g
        })
    }
}

/// `φ_A(x)`: the first `n ≥ 1` with `T^n x ∈ A`.
pub fn first_hitting_time(sys: &SystemSpec, a: &IntervalUnion, x: PointX, cap: u64) -> Result<u64> {
    let mut orbit = Orbit::exact(sys, x);
    for n in 1..=cap {
        if a.contains(orbit.step()?) {
            return Ok(n);
        }
    }
    Err(Error::HittingOverflow { cap })
}

/// First `k` hits of `A` along the orbit of `x` (exact floating-point orbit).
pub fn collect_hit_sample(
    sys: &SystemSpec,
    a: &IntervalUnion,
    obs: &Observable,
    x: PointX,
    k: usize,
    cap: u64,
) -> Result<HitSample> {
    let mut orbit = Orbit::exact(sys, x);
    Ok(collect_along(&mut orbit, a, obs, k, cap, &[])?.0)
}

/// Records the first `k` hits along `orbit` and, in the same pass, the
/// number of visits among the first `h` steps for every `h` in `horizons`.
///
/// `cap` bounds each individual gap; a longer gap sets `overflowed` and
/// ends hit collection, while counting continues up to the largest horizon.
pub fn collect_along(
    orbit: &mut Orbit<'_>,
    a: &IntervalUnion,
    obs: &Observable,
    k: usize,
    cap: u64,
    horizons: &[u64],
) -> Result<(HitSample, Vec<u64>)> {
    if k == 0 || cap == 0 {
        return Err(Error::InvalidArgument("k and cap must be >= 1".into()));
    }
    let x0 = orbit.position();
    let start_in_a = a.contains(x0);
    let mut sample = HitSample {
        start_in_a,
        mark0: start_in_a.then(|| obs.eval(x0)),
        ..HitSample::default()
    };
    let max_h = horizons.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0u64; horizons.len()];
    let mut last_hit = 0u64;
    let mut collecting = true;
    let mut n = 0u64;
    while collecting || n < max_h {
        n += 1;
        let y = orbit.step()?;
        let hit = a.contains(y);
        if hit {
            for (c, &h) in counts.iter_mut().zip(horizons) {
                if n <= h {
                    *c += 1;
                }
            }
        }
        if collecting {
            if hit {
                sample.raw_times.push(n);
                sample.marks.push(obs.eval(y));
                last_hit = n;
                collecting = sample.raw_times.len() < k;
            } else if n - last_hit >= cap {
                sample.overflowed = true;
                collecting = false;
            }
        }
    }
    Ok((sample, counts))
}

/// Normalized gaps `μ(A)·(φ_A, φ_A∘T_A, ...)`.
pub fn normalize_times(sample: &HitSample, mu_a: f64) -> Vec<f64> {
    sample.gaps().map(|g| g as f64 * mu_a).collect()
}

/// Number of steps `⌊t/μ(A)⌋` covered by normalized time `t`.
pub fn horizon(t: f64, mu_a: f64) -> u64 {
    (t / mu_a).floor() as u64
}

/// `N_{A,t}(x)`: visits to `A` among the first `⌊t/μ(A)⌋` steps.
pub fn counting_marginal(sys: &SystemSpec, a: &IntervalUnion, x: PointX, t: f64, mu_a: f64) -> Result<u64> {
    if !(t >= 0.0) || !(mu_a > 0.0) {
        return Err(Error::InvalidArgument(format!("need t >= 0, μ(A) > 0, got {t}, {mu_a}")));
    }
    let mut orbit = Orbit::exact(sys, x);
    let mut visits = 0;
    for _ in 0..horizon(t, mu_a) {
        if a.contains(orbit.step()?) {
            visits += 1;
        }
    }
    Ok(visits)
}

/// Points `(μ(A)·raw_time_j, mark_j)` of the spatiotemporal process.
pub fn spatiotemporal_points(sample: &HitSample, mu_a: f64) -> Vec<(f64, f64)> {
    sample
        .raw_times
        .iter()
        .zip(&sample.marks)
        .map(|(&t, &m)| (t as f64 * mu_a, m))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rare_events::{make_target, RareFamilySpec};

    fn quarter() -> IntervalUnion {
        IntervalUnion::exact(&SystemSpec::Doubling, vec![Interval::closed_open(0.0, 0.25)]).unwrap()
    }

    fn p(x: f64) -> PointX {
        PointX::new(x).unwrap()
    }

    #[test]
    fn hitting_examples() {
        let sys = SystemSpec::Doubling;
        assert_eq!(first_hitting_time(&sys, &quarter(), p(0.375), 100).unwrap(), 3);
        // 1/16 ∈ T^{-1}[0,1/4)
        assert_eq!(first_hitting_time(&sys, &quarter(), p(0.0625), 1).unwrap(), 1);
        assert_eq!(
            first_hitting_time(&sys, &quarter(), p(0.875), 1),
            Err(Error::HittingOverflow { cap: 1 })
        );
    }

    #[test]
    fn hit_sample_examples() {
        let sys = SystemSpec::Doubling;
        let a = quarter();
        let chart = ObservableSpec::IntervalChart.bind(&sys, &a, 1).unwrap();
        let s = collect_hit_sample(&sys, &a, &chart, p(0.375), 1, 100).unwrap();
        assert_eq!(s.raw_times, vec![3]);
        assert_eq!(s.marks, vec![0.0]);
        assert!(!s.start_in_a && s.mark0.is_none());

        let s = collect_hit_sample(&sys, &a, &chart, p(0.125), 1, 100).unwrap();
        assert_eq!(s.mark0, Some(0.5));

        let s = collect_hit_sample(&sys, &a, &chart, p(0.875), 3, 1).unwrap();
        assert!(s.overflowed && s.raw_times.is_empty());
    }

    #[test]
    fn residue_and_threshold_marks() {
        let sys = SystemSpec::Gauss;
        let a = make_target(&sys, &RareFamilySpec::DigitTail, 2).unwrap();
        let res = ObservableSpec::DigitResidue { modulus: 2 }.bind(&sys, &a, 2).unwrap();
        // digit 5
        assert_eq!(res.eval(1.0 / 5.5), 1.0);
        let thr = ObservableSpec::DigitThreshold { vartheta: 0.5 }.bind(&sys, &a, 2).unwrap();
        assert_eq!(thr, Observable::Threshold { min_digit: 4 });
        assert_eq!(thr.eval(1.0 / 5.5), 1.0);
        assert_eq!(thr.eval(0.4), 0.0);
        assert!(ObservableSpec::DigitResidue { modulus: 2 }
            .bind(&SystemSpec::Doubling, &quarter(), 2)
            .is_err());
    }

    #[test]
    fn subset_index_validation() {
        let sys = SystemSpec::Doubling;
        let a = quarter();
        let good = ObservableSpec::SubsetIndex {
            cells: vec![Interval::closed_open(0.0, 0.125), Interval::closed_open(0.125, 0.25)],
        };
        let obs = good.bind(&sys, &a, 1).unwrap();
        assert_eq!(obs.eval(0.2), 1.0);
        let bad = ObservableSpec::SubsetIndex {
            cells: vec![Interval::closed_open(0.0, 0.125)],
        };
        assert!(bad.bind(&sys, &a, 1).is_err());
    }

    #[test]
    fn normalization_examples() {
        let s = HitSample {
            raw_times: vec![3, 10],
            marks: vec![0.2, 0.9],
            ..HitSample::default()
        };
        assert_eq!(normalize_times(&s, 0.25), vec![0.75, 1.75]);
        let pts = spatiotemporal_points(&s, 0.1);
        assert!((pts[0].0 - 0.3).abs() < 1e-15 && (pts[1].0 - 1.0).abs() < 1e-15);
        assert_eq!((pts[0].1, pts[1].1), (0.2, 0.9));
        let one = HitSample {
            raw_times: vec![1],
            marks: vec![0.0],
            ..HitSample::default()
        };
        assert_eq!(normalize_times(&one, 1e-3), vec![1e-3]);
        assert!(normalize_times(&HitSample::default(), 0.5).is_empty());
    }

    #[test]
    fn counting_examples() {
        let sys = SystemSpec::Doubling;
        let a = quarter();
        assert_eq!(counting_marginal(&sys, &a, p(0.375), 0.0, 0.25).unwrap(), 0);
        assert_eq!(counting_marginal(&sys, &a, p(0.375), 0.75, 0.25).unwrap(), 1);
        assert_eq!(counting_marginal(&sys, &a, p(0.375), 0.5, 0.25).unwrap(), 0);
    }
}
