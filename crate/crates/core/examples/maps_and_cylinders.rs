//! Interval maps, their invariant measures and cylinder sets.

use num_rational::Rational64;
use rarelab::dynsys::{
    cf_digit, cylinder, invariant_measure_of_interval, sample_invariant, Orbit, PointX, PwlMarkov, SystemSpec,
};
use rarelab::stats::SeededRng;

fn main() -> rarelab::Result<()> {
    let gauss = SystemSpec::Gauss;
    let x = PointX::new(std::f64::consts::PI - 3.0)?;

    // continued-fraction digits of π are the Gauss itinerary of π - 3
    let mut orbit = Orbit::exact(&gauss, x);
    let mut digits = vec![cf_digit(x.value())?];
    for _ in 0..4 {
        digits.push(cf_digit(orbit.step()?)?);
    }
    println!("π = [3; {digits:?}]");

    let z = cylinder(&gauss, &[7, 15])?;
    println!(
        "cylinder [7, 15] = {z:?}, Gauss measure {:.3e}",
        invariant_measure_of_interval(&gauss, z.lo, z.hi)?
    );

    // a piecewise-linear Markov map with rational breakpoints
    let pts = vec![Rational64::new(0, 1), Rational64::new(1, 3), Rational64::new(1, 1)];
    let pwl = SystemSpec::PiecewiseLinearMarkov(PwlMarkov::full_branch(pts)?);
    println!("PWL density at 0.2 and 0.7: {:?}, {:?}", pwl.density(0.2), pwl.density(0.7));

    // samples from μ for the doubling map land uniformly
    let mut rng = SeededRng::new(1, 0);
    let mean: f64 = (0..10_000).map(|_| sample_invariant(&SystemSpec::Doubling, &mut rng).value()).sum::<f64>() / 1e4;
    println!("mean of 10^4 doubling-map samples: {mean:.4}");
    Ok(())
}
