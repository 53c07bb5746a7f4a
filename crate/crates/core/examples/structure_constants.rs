//! Constants of the Gibbs-Markov structure: θ at periodic points,
//! cylinder decay, distortion and transfer-operator averaging.

use rarelab::dynsys::SystemSpec;
use rarelab::gmtheory::{cylinder_decay_fit, distortion_by_rank, theta_at_periodic, yosida_average_decay};
use rarelab::stats::SeededRng;

fn main() -> rarelab::Result<()> {
    let g = SystemSpec::Gauss;
    for word in [vec![1], vec![2], vec![1, 2]] {
        println!("Gauss θ at word {word:?}: {:.6}", theta_at_periodic(&g, &word)?);
    }
    let fit = cylinder_decay_fit(&g, 1..=6)?;
    println!("Gauss: max cylinder mass ≈ {:.3}·{:.4}^n (max log residual {:.3})", fit.kappa, fit.q, fit.max_residual);
    let d = distortion_by_rank(&g, 5, 16, &mut SeededRng::new(3, 0))?;
    println!("Gauss distortion by rank: {d:.3?}");

    let dbl = SystemSpec::Doubling;
    let cells = 256;
    let u: Vec<f64> = (0..cells).map(|i| (2 * i + 1) as f64 / cells as f64).collect();
    let v = vec![1.0; cells];
    for n in [1, 8, 80] {
        println!("doubling: Cesàro average of T^k(u - v) at n = {n}: {:.5}", yosida_average_decay(&dbl, &u, &v, n)?);
    }
    Ok(())
}
