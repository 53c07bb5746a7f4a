//! Parallel, reproducible Monte Carlo runs compared with the limit laws.

use rarelab::dynsys::SystemSpec;
use rarelab::limits::{poisson_pmf, LimitLaw};
use rarelab::processes::Observable;
use rarelab::rare_events::{make_target, RareFamilySpec};
use rarelab::stats::{ks_distance, pair_dependence, run_monte_carlo, tv_discrete, EmpiricalLaw, McConfig, Partitioner, StartMeasure};

fn main() -> rarelab::Result<()> {
    let g = SystemSpec::Gauss;
    let a = make_target(&g, &RareFamilySpec::DigitTail, 100)?;
    let cfg = McConfig { n_samples: 20_000, k_hits: 3, count_times: vec![1.0], ..McConfig::default() };
    let run = run_monte_carlo(&g, &a, &Observable::None, &cfg, 7)?;

    let first = EmpiricalLaw::from_values(run.gaps(0))?;
    println!("KS(first gap, Exp) = {:.4}", ks_distance(&first, &LimitLaw::Exp)?);
    let (g1, g2) = run.consecutive_gaps(0);
    println!(
        "dependence of consecutive gaps = {:.4}",
        pair_dependence(&g1, &g2, &Partitioner::quartiles(&g1), &Partitioner::quartiles(&g2))?
    );
    println!("TV(N_1, Poisson(1)) = {:.4}", tv_discrete(&run.counting_histogram(0), |k| poisson_pmf(1.0, k)));

    let ret = run_monte_carlo(&g, &a, &Observable::None, &McConfig { start: StartMeasure::MuA, k_hits: 1, ..cfg }, 8)?;
    let gaps = ret.gaps(0);
    println!("Kac: mean normalized return = {:.4}", gaps.iter().sum::<f64>() / gaps.len() as f64);
    Ok(())
}
