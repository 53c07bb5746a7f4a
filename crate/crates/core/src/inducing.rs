//! First-return (induced) dynamics on a reference set `Y`.
//!
//! For `A ⊆ Y` the first-return maps on `A` induced by `T` and by `T_Y`
//! coincide, and the original hitting time of `A` is the sum of the
//! return times to `Y` along the induced orbit:
//!
//! ```text
//! φ_A = Σ_{j < φ_A^Y} φ_Y ∘ T_Y^j
//! ```

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynsys::{sample_invariant, Orbit, PointX, SystemSpec};
use crate::error::{Error, Result};
use crate::processes::{collect_along, HitSample, Observable};
use crate::rare_events::IntervalUnion;
use crate::stats::{sample_start, EmpiricalLaw, SeededRng, StartMeasure};

/// `T_Y` on top of a base system.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedSystem {
    pub base: SystemSpec,
    pub y: IntervalUnion,
    pub return_cap: u64,
}

impl InducedSystem {
    pub fn new(base: SystemSpec, y: IntervalUnion, return_cap: u64) -> Result<Self> {
        if return_cap == 0 {
            return Err(Error::InvalidArgument("return_cap must be >= 1".into()));
        }
        Ok(Self { base, y, return_cap })
    }

    fn check_start(&self, x: PointX) -> Result<()> {
        if self.y.contains(x.value()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("{} is not in Y", x.value())))
        }
    }
}

/// Advances `orbit` to its next visit of `Y` and returns the step count.
pub fn induced_step(orbit: &mut Orbit<'_>, y: &IntervalUnion, return_cap: u64) -> Result<u64> {
    for n in 1..=return_cap {
        if y.contains(orbit.step()?) {
            return Ok(n);
        }
    }
    Err(Error::ReturnOverflow { cap: return_cap })
}

/// `(T_Y x, φ_Y(x))`.
pub fn first_return_step(ind: &InducedSystem, x: PointX) -> Result<(PointX, u64)> {
    ind.check_start(x)?;
    let mut orbit = Orbit::exact(&ind.base, x);
    let n = induced_step(&mut orbit, &ind.y, ind.return_cap)?;
    Ok((PointX::new(orbit.position())?, n))
}

/// Hit record under `T_Y` together with the matching original step counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducedHitSample {
    /// Times count `T_Y`-steps.
    pub sample: HitSample,
    /// Cumulative `T`-steps at the same hits.
    pub original_times: Vec<u64>,
}

/// First `k` hits of `A ⊆ Y` along the induced orbit of `x ∈ Y`.
pub fn induced_hit_sample(
    ind: &InducedSystem,
    a: &IntervalUnion,
    obs: &Observable,
    x: PointX,
    k: usize,
    cap: u64,
) -> Result<InducedHitSample> {
    ind.check_start(x)?;
    let mut orbit = Orbit::exact(&ind.base, x);
    induced_along(&mut orbit, ind, a, obs, k, cap)
}

/// [`induced_hit_sample`] on a caller-supplied orbit. `cap` bounds each
/// induced gap.
pub fn induced_along(
    orbit: &mut Orbit<'_>,
    ind: &InducedSystem,
    a: &IntervalUnion,
    obs: &Observable,
    k: usize,
    cap: u64,
) -> Result<InducedHitSample> {
    if !a.is_subset_of(&ind.y) {
        return Err(Error::InvalidArgument("target must lie inside Y".into()));
    }
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
    let mut original_times = Vec::with_capacity(k);
    let (mut j, mut t, mut last) = (0u64, 0u64, 0u64);
    while sample.raw_times.len() < k {
        t += induced_step(orbit, &ind.y, ind.return_cap)?;
        j += 1;
        let x = orbit.position();
        if a.contains(x) {
            sample.raw_times.push(j);
            sample.marks.push(obs.eval(x));
            original_times.push(t);
            last = j;
        } else if j - last >= cap {
            sample.overflowed = true;
            break;
        }
    }
    Ok(InducedHitSample {
        sample,
        original_times,
    })
}

/// Mean return time to `Y` over `j_steps` induced steps from `x`.
pub fn time_change_check(ind: &InducedSystem, x: PointX, j_steps: u64) -> Result<f64> {
    ind.check_start(x)?;
    if j_steps == 0 {
        return Err(Error::InvalidArgument("j_steps must be >= 1".into()));
    }
    let mut orbit = Orbit::exact(&ind.base, x);
    let mut total = 0u64;
    for _ in 0..j_steps {
        total += induced_step(&mut orbit, &ind.y, ind.return_cap)?;
    }
    Ok(total as f64 / j_steps as f64)
}

/// Mass estimate with a batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub mass: f64,
    pub std_err: f64,
}

/// Birkhoff frequencies of `sets` along one orbit of `steps` steps after
/// `burn_in` steps from a uniform start.
pub fn estimate_measure(
    sys: &SystemSpec,
    sets: &[&IntervalUnion],
    steps: u64,
    burn_in: u64,
    seed: u64,
) -> Result<Vec<MeasureEstimate>> {
    const BATCHES: u64 = 100;
    if steps < BATCHES {
        return Err(Error::InvalidArgument(format!("steps = {steps} < {BATCHES}")));
    }
    let mut rng = SeededRng::new(seed, 0);
    let start = PointX::new(rng.gen::<f64>())?;
    let mut orbit = Orbit::randomized(sys, start, rng.fork());
    for _ in 0..burn_in {
        orbit.step()?;
    }
    let per = steps / BATCHES;
    let mut batch = vec![vec![0u64; BATCHES as usize]; sets.len()];
    for b in 0..BATCHES as usize {
        for _ in 0..per {
            let x = orbit.step()?;
            for (i, s) in sets.iter().enumerate() {
                if s.contains(x) {
                    batch[i][b] += 1;
                }
            }
        }
    }
    Ok(batch
        .iter()
        .map(|counts| {
            let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / per as f64).collect();
            let mass = freqs.iter().sum::<f64>() / BATCHES as f64;
            let var = freqs.iter().map(|f| (f - mass).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
            MeasureEstimate {
                mass,
                std_err: (var / BATCHES as f64).sqrt(),
            }
        })
        .collect())
}

/// Induced Monte Carlo output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducedRun {
    /// `μ_Y(A)`, the normalizer of induced times.
    pub mu_y_a: f64,
    pub samples: Vec<InducedHitSample>,
    pub overflow_count: u64,
    /// Orbits whose original hit record was recomputed directly.
    pub identity_checked: u64,
    /// Of those, how many disagreed with the summed return times or marks.
    pub identity_violations: u64,
}

impl InducedRun {
    /// Law of the first `dim` induced gaps, normalized by `μ_Y(A)`.
    pub fn gap_law(&self, dim: usize) -> Result<EmpiricalLaw> {
        let rows: Vec<Vec<f64>> = self
            .samples
            .iter()
            .filter(|s| s.sample.hits() >= dim)
            .map(|s| s.sample.gaps().take(dim).map(|g| g as f64 * self.mu_y_a).collect())
            .collect();
        EmpiricalLaw::new(dim, rows)
    }
}

/// Orbits started under `μ_Y`, followed under `T_Y` until `k` hits of `A`.
/// Every orbit is also replayed under `T` with the same random tail, and
/// its direct hit record is compared with the induced one.
#[allow(clippy::too_many_arguments)]
pub fn run_induced_monte_carlo(
    ind: &InducedSystem,
    a: &IntervalUnion,
    obs: &Observable,
    mu_y_a: f64,
    n_samples: usize,
    k: usize,
    cap: u64,
    master_seed: u64,
) -> Result<InducedRun> {
    let sys = &ind.base;
    let one = |i: usize| -> Result<(InducedHitSample, bool)> {
        let mut rng = SeededRng::new(master_seed, i as u64);
        let x = match sys.has_exact_measure() {
            true => sample_start(sys, &ind.y, StartMeasure::MuA, &mut rng)?,
            false => loop {
                let x = sample_invariant(sys, &mut rng);
                if ind.y.contains(x.value()) {
                    break x;
                }
            },
        };
        let tail = rng.fork();
        let mut orbit = Orbit::randomized(sys, x, tail.clone());
        let induced = induced_along(&mut orbit, ind, a, obs, k, cap)?;
        let mut replay = Orbit::randomized(sys, x, tail);
        let direct_cap = cap.saturating_mul(ind.return_cap);
        let (direct, _) = collect_along(&mut replay, a, obs, induced.sample.hits().max(1), direct_cap, &[])?;
        let n = induced.sample.hits();
        let agree = direct.raw_times[..n.min(direct.hits())] == induced.original_times[..]
            && direct.marks[..n.min(direct.hits())] == induced.sample.marks[..];
        Ok((induced, agree))
    };
    let results: Vec<Result<(InducedHitSample, bool)>> =
        (0..n_samples).into_par_iter().map(one).collect();
    let mut samples = Vec::with_capacity(n_samples);
    let mut violations = 0;
    for r in results {
        let (s, ok) = r?;
        violations += (!ok) as u64;
        samples.push(s);
    }
    let overflow_count = samples.iter().filter(|s| s.sample.overflowed).count() as u64;
    Ok(InducedRun {
        mu_y_a,
        identity_checked: samples.len() as u64,
        samples,
        overflow_count,
        identity_violations: violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rare_events::Interval;

    fn p(x: f64) -> PointX {
        PointX::new(x).unwrap()
    }

    fn doubling_half() -> InducedSystem {
        let y = IntervalUnion::exact(&SystemSpec::Doubling, vec![Interval::closed_open(0.5, 1.0)]).unwrap();
        InducedSystem::new(SystemSpec::Doubling, y, 1000).unwrap()
    }

    #[test]
    fn first_return_examples() {
        let ind = doubling_half();
        assert_eq!(first_return_step(&ind, p(0.75)).unwrap(), (p(0.5), 1));
        assert_eq!(first_return_step(&ind, p(0.5625)).unwrap(), (p(0.5), 3));
        assert!(first_return_step(&ind, p(0.25)).is_err());
    }

    #[test]
    fn induced_hit_example() {
        // 0.6875 → 0.375 → 0.75 (Y) → 0.5 (Y, A)
        let ind = doubling_half();
        let a = IntervalUnion::exact(&SystemSpec::Doubling, vec![Interval::closed_open(0.5, 0.5625)]).unwrap();
        let s = induced_hit_sample(&ind, &a, &Observable::None, p(0.6875), 1, 10).unwrap();
        assert_eq!(s.sample.raw_times, vec![2]);
        assert_eq!(s.original_times, vec![3]);
        let direct = crate::processes::first_hitting_time(&SystemSpec::Doubling, &a, p(0.6875), 10).unwrap();
        assert_eq!(direct, 3);
    }

    #[test]
    fn full_space_returns_in_one_step() {
        let y = IntervalUnion::exact(&SystemSpec::Doubling, vec![Interval::closed(0.0, 1.0)]).unwrap();
        let ind = InducedSystem::new(SystemSpec::Doubling, y, 10).unwrap();
        assert_eq!(time_change_check(&ind, p(0.3), 100).unwrap(), 1.0);
    }

    #[test]
    fn kac_on_y() {
        let ind = doubling_half();
        let mut rng = SeededRng::new(5, 0);
        let x = sample_start(&ind.base, &ind.y, StartMeasure::MuA, &mut rng).unwrap();
        let j = 200_000;
        let mut orbit = Orbit::randomized(&ind.base, x, rng.fork());
        let mut total = 0;
        for _ in 0..j {
            total += induced_step(&mut orbit, &ind.y, 1000).unwrap();
        }
        let mean = total as f64 / j as f64;
        assert!((mean - 2.0).abs() <= 3.0 / (j as f64).sqrt(), "{mean}");
    }
}
