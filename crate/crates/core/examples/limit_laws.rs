//! Theoretical limit laws: exponential, compound and counting laws, the
//! hitting/return duality and the compound fixed point.

use rarelab::limits::{
    compound_geom_pmf_vec, duality_predict_hitting, fixed_point_residual, metric_sequence, poisson_pmf, ExtReal,
    LimitLaw,
};

fn main() -> rarelab::Result<()> {
    let theta = 1.0 - 0.381966;
    let ret = LimitLaw::ExpTheta(theta);
    for t in [0.0, 0.5, 1.0, 2.0] {
        let hit = duality_predict_hitting(&ret, 0, &[t])?;
        println!("t = {t}: return cdf {:.4}, predicted hitting cdf {:.4}", ret.cdf(t), hit);
    }
    let grid: Vec<f64> = (1..=30).map(|i| i as f64 / 10.0).collect();
    println!("fixed-point residual at the true θ: {:.1e}", fixed_point_residual(&ret, theta, &grid)?);
    println!("fixed-point residual at θ - 0.2: {:.3}", fixed_point_residual(&ret, theta - 0.2, &grid)?);

    let pmf = compound_geom_pmf_vec(1.0, 0.5, 6);
    for (k, p) in pmf.iter().enumerate() {
        println!("P[N = {k}]: compound {p:.5}, Poisson {:.5}", poisson_pmf(1.0, k as u64));
    }

    let a = [ExtReal::Finite(0.3), ExtReal::Finite(1.2), ExtReal::Infinity];
    let b = [ExtReal::Finite(0.4), ExtReal::Infinity, ExtReal::Infinity];
    let (d, slack) = metric_sequence(&a, &b, 3)?;
    println!("distance between hit sequences: {d:.4} (+ at most {slack})");
    Ok(())
}
