//! Hitting times, marks and counts along single orbits.

use rarelab::dynsys::{PointX, SystemSpec};
use rarelab::processes::{
    collect_hit_sample, counting_marginal, first_hitting_time, normalize_times, spatiotemporal_points, ObservableSpec,
};
use rarelab::rare_events::{make_target, RareFamilySpec};

fn main() -> rarelab::Result<()> {
    let g = SystemSpec::Gauss;
    let l = 20;
    let a = make_target(&g, &RareFamilySpec::DigitTail, l)?;
    let x = PointX::new(2f64.sqrt() - 1.0 + 1e-3)?;

    println!("first visit to digits >= {l}: step {}", first_hitting_time(&g, &a, x, 1_000_000)?);

    let residue = ObservableSpec::DigitResidue { modulus: 3 }.bind(&g, &a, l)?;
    let s = collect_hit_sample(&g, &a, &residue, x, 6, 1_000_000)?;
    println!("raw hit times {:?}", s.raw_times);
    println!("normalized gaps {:.3?}", normalize_times(&s, a.mu_mass()));
    println!("(time, digit mod 3) {:.3?}", spatiotemporal_points(&s, a.mu_mass()));
    println!("visits up to normalized time 2: {}", counting_marginal(&g, &a, x, 2.0, a.mu_mass())?);
    Ok(())
}
