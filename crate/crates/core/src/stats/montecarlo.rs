use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CountHistogram, EmpiricalLaw, SeededRng};
use crate::dynsys::{sample_invariant, Orbit, PointX, SystemSpec, GAUSS_DIGIT_CAP};
use crate::error::{Error, Result};
use crate::processes::{collect_along, horizon, normalize_times, HitSample, Observable};
use crate::rare_events::IntervalUnion;

/// Initial distribution of the orbits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StartMeasure {
    /// The invariant measure.
    #[default]
    Mu,
    /// The invariant measure conditioned on the target.
    MuA,
    /// Lebesgue density `2x` on `[0, 1]`.
    LinearDensity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub n_samples: usize,
    pub k_hits: usize,
    /// Largest admissible gap in raw steps; `None` means `⌈50/μ(A)⌉`.
    pub cap: Option<u64>,
    pub start: StartMeasure,
    /// Normalized times at which the counting process is recorded.
    pub count_times: Vec<f64>,
    pub count_cutoff: usize,
    pub max_overflow_fraction: f64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            k_hits: 4,
            cap: None,
            start: StartMeasure::Mu,
            count_times: Vec::new(),
            count_cutoff: 25,
            max_overflow_fraction: 1e-6,
            threads: None,
        }
    }
}

/// Output of a Monte Carlo run: one hit record per orbit plus counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRun {
    pub mu_a: f64,
    pub cap: u64,
    pub samples: Vec<HitSample>,
    /// `counts[i][j]`: visits of orbit `i` up to normalized time `count_times[j]`.
    pub counts: Vec<Vec<u64>>,
    pub count_times: Vec<f64>,
    pub count_cutoff: usize,
    pub overflow_count: u64,
}

impl McRun {
    pub fn n(&self) -> usize {
        self.samples.len()
    }

    /// Law of the first `dim` normalized gaps over orbits that have them.
    pub fn gap_law(&self, dim: usize) -> Result<EmpiricalLaw> {
        let rows: Vec<Vec<f64>> = self
            .samples
            .iter()
            .filter(|s| s.hits() >= dim)
            .map(|s| normalize_times(s, self.mu_a)[..dim].to_vec())
            .collect();
        EmpiricalLaw::new(dim, rows)
    }

    /// Normalized gap number `j` (0-based) of every orbit that has it.
    pub fn gaps(&self, j: usize) -> Vec<f64> {
        self.samples
            .iter()
            .filter_map(|s| s.gaps().nth(j).map(|g| g as f64 * self.mu_a))
            .collect()
    }

    /// Mark at hit `j` (0-based) of every orbit that has it.
    pub fn marks(&self, j: usize) -> Vec<f64> {
        self.samples.iter().filter_map(|s| s.marks.get(j).copied()).collect()
    }

    /// Pairs (normalized gap `j`, mark `j`).
    pub fn time_mark_pairs(&self, j: usize) -> (Vec<f64>, Vec<f64>) {
        self.samples
            .iter()
            .filter_map(|s| Some((s.gaps().nth(j)? as f64 * self.mu_a, *s.marks.get(j)?)))
            .unzip()
    }

    /// Pairs (gap `j`, gap `j + 1`).
    pub fn consecutive_gaps(&self, j: usize) -> (Vec<f64>, Vec<f64>) {
        self.samples
            .iter()
            .filter(|s| s.hits() > j + 1)
            .map(|s| {
                let g = normalize_times(s, self.mu_a);
                (g[j], g[j + 1])
            })
            .unzip()
    }

    /// Pairs (mark `j`, mark `j + 1`).
    pub fn consecutive_marks(&self, j: usize) -> (Vec<f64>, Vec<f64>) {
        self.samples
            .iter()
            .filter(|s| s.marks.len() > j + 1)
            .map(|s| (s.marks[j], s.marks[j + 1]))
            .unzip()
    }

    pub fn mark0s(&self) -> Vec<f64> {
        self.samples.iter().filter_map(|s| s.mark0).collect()
    }

    /// Histogram of `N_{A,t}` for `t = count_times[idx]`.
    pub fn counting_histogram(&self, idx: usize) -> CountHistogram {
        CountHistogram::from_values(self.counts.iter().map(|c| c[idx]), self.count_cutoff)
    }
}

/// One start point drawn from `start`.
pub fn sample_start(
    sys: &SystemSpec,
    target: &IntervalUnion,
    start: StartMeasure,
    rng: &mut SeededRng,
) -> Result<PointX> {
    let min_x = match sys {
        SystemSpec::Gauss => 1.0 / GAUSS_DIGIT_CAP,
        _ => 0.0,
    };
    match start {
        StartMeasure::Mu => Ok(sample_invariant(sys, rng)),
        StartMeasure::LinearDensity => loop {
            let x = rng.gen::<f64>().sqrt();
            if x >= min_x {
                return PointX::new(x);
            }
        },
        StartMeasure::MuA if sys.has_exact_measure() => {
            let ivs = target.intervals();
            let cdf: Vec<(f64, f64)> = ivs
                .iter()
                .map(|iv| Ok((sys.invariant_cdf(iv.lo)?, sys.invariant_cdf(iv.hi)?)))
                .collect::<Result<_>>()?;
            let total: f64 = cdf.iter().map(|(a, b)| b - a).sum();
            loop {
                let mut u = rng.gen::<f64>() * total;
                let mut pick = cdf.len() - 1;
                for (i, (a, b)) in cdf.iter().enumerate() {
                    if u < b - a {
                        pick = i;
                        break;
                    }
                    u -= b - a;
                }
                let (a, b) = cdf[pick];
                let x = sys.invariant_quantile((a + u).min(b))?;
                if x >= min_x && target.contains(x) {
                    return PointX::new(x);
                }
            }
        }
        StartMeasure::MuA => {
            for _ in 0..100_000_000u64 {
                let x = sample_invariant(sys, rng);
                if target.contains(x.value()) {
                    return Ok(x);
                }
            }
            Err(Error::DegenerateTarget("rejection sampling never hit the target".into()))
        }
    }
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs `n_samples` independent orbits. Orbit `i` uses stream `i` of
/// `master_seed`, so results do not depend on scheduling.
pub fn run_monte_carlo(
    sys: &SystemSpec,
    target: &IntervalUnion,
    obs: &Observable,
    cfg: &McConfig,
    master_seed: u64,
) -> Result<McRun> {
    if cfg.n_samples < 100 {
        return Err(Error::InvalidArgument(format!(
            "n_samples = {} < 100",
            cfg.n_samples
        )));
    }
    if cfg.k_hits == 0 {
        return Err(Error::InvalidArgument("k_hits must be >= 1".into()));
    }
    let mu_a = target.mu_mass();
    let cap = cfg.cap.unwrap_or_else(|| (50.0 / mu_a).ceil() as u64).max(1);
    let horizons: Vec<u64> = cfg.count_times.iter().map(|&t| horizon(t, mu_a)).collect();

    let one = |i: usize| -> Result<(HitSample, Vec<u64>)> {
        let mut rng = SeededRng::new(master_seed, i as u64);
        let x = sample_start(sys, target, cfg.start, &mut rng)?;
        let mut orbit = Orbit::randomized(sys, x, rng.fork());
        collect_along(&mut orbit, target, obs, cfg.k_hits, cap, &horizons)
    };
    let results: Vec<Result<(HitSample, Vec<u64>)>> =
        with_pool(cfg.threads, || (0..cfg.n_samples).into_par_iter().map(one).collect())?;

    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut counts = Vec::with_capacity(cfg.n_samples);
    for r in results {
        let (s, c) = r?;
        samples.push(s);
        counts.push(c);
    }
    let overflow_count = samples.iter().filter(|s| s.overflowed).count() as u64;
    if overflow_count as f64 > cfg.max_overflow_fraction * cfg.n_samples as f64 {
        return Err(Error::TooManyOverflows {
            count: overflow_count,
            n: cfg.n_samples as u64,
        });
    }
    Ok(McRun {
        mu_a,
        cap,
        samples,
        counts,
        count_times: cfg.count_times.clone(),
        count_cutoff: cfg.count_cutoff,
        overflow_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rare_events::{make_target, RareFamilySpec};

    #[test]
    fn runs_are_reproducible() {
        let sys = SystemSpec::Gauss;
        let a = make_target(&sys, &RareFamilySpec::DigitTail, 20).unwrap();
        let cfg = McConfig {
            n_samples: 300,
            k_hits: 2,
            count_times: vec![1.0],
            ..McConfig::default()
        };
        let r1 = run_monte_carlo(&sys, &a, &Observable::None, &cfg, 9).unwrap();
        let r2 = run_monte_carlo(
            &sys,
            &a,
            &Observable::None,
            &McConfig {
                threads: Some(2),
                ..cfg.clone()
            },
            9,
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
        let r3 = run_monte_carlo(&sys, &a, &Observable::None, &cfg, 10).unwrap();
        assert_ne!(r1.samples, r3.samples);
    }

    #[test]
    fn too_few_samples_rejected() {
        let sys = SystemSpec::Doubling;
        let a = make_target(&sys, &RareFamilySpec::DigitTail, 2);
        assert!(a.is_err());
        let a = IntervalUnion::exact(&sys, vec![crate::rare_events::Interval::closed_open(0.0, 0.25)]).unwrap();
        let cfg = McConfig {
            n_samples: 0,
            ..McConfig::default()
        };
        assert!(run_monte_carlo(&sys, &a, &Observable::None, &cfg, 1).is_err());
    }

    #[test]
    fn mu_a_starts_lie_in_target() {
        let sys = SystemSpec::Gauss;
        let a = make_target(&sys, &RareFamilySpec::DigitTail, 7).unwrap();
        let mut rng = SeededRng::new(3, 0);
        for _ in 0..1000 {
            let x = sample_start(&sys, &a, StartMeasure::MuA, &mut rng).unwrap();
            assert!(a.contains(x.value()));
        }
    }

    #[test]
    fn counts_match_hit_times() {
        let sys = SystemSpec::Doubling;
        let a = IntervalUnion::exact(&sys, vec![crate::rare_events::Interval::closed_open(0.3, 0.35)]).unwrap();
        let cfg = McConfig {
            n_samples: 200,
            k_hits: 30,
            count_times: vec![0.5, 1.0],
            count_cutoff: 25,
            ..McConfig::default()
        };
        let run = run_monte_carlo(&sys, &a, &Observable::None, &cfg, 4).unwrap();
        for (s, c) in run.samples.iter().zip(&run.counts) {
            for (j, &t) in cfg.count_times.iter().enumerate() {
                let h = horizon(t, run.mu_a);
                let direct = s.raw_times.iter().filter(|&&r| r <= h).count() as u64;
                if s.raw_times.len() < cfg.k_hits || s.raw_times.last().unwrap() >= &h {
                    assert_eq!(direct, c[j]);
                }
            }
        }
    }
}
