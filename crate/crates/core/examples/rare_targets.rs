//! Shrinking families of rare events and their cylinder approximations.

use rarelab::dynsys::SystemSpec;
use rarelab::rare_events::{approximate_by_cylinders, make_target, rank_of, Itinerary, RadiusRule, RareFamilySpec};

fn main() -> rarelab::Result<()> {
    let g = SystemSpec::Gauss;
    for l in [10, 100, 1000] {
        let a = make_target(&g, &RareFamilySpec::DigitTail, l)?;
        println!("digit >= {l:>4}: μ = {:.4e}, l·μ·ln 2 = {:.4}", a.mu_mass(), l as f64 * a.mu_mass() * 2f64.ln());
    }

    let golden = RareFamilySpec::CylinderAtPoint(Itinerary::periodic(vec![1]));
    for l in [2, 4, 8] {
        println!("golden cylinder of length {l}: {:?}", make_target(&g, &golden, l)?.hull());
    }

    let fam = RareFamilySpec::ShrinkingInterval { center: 0.3, radius: RadiusRule::Harmonic { rho0: 0.5 } };
    let a = make_target(&g, &fam, 25)?;
    let rank = rank_of(a.mu_mass(), 0.3805)?;
    let inner = approximate_by_cylinders(&g, &a, rank)?;
    println!(
        "interval {:?}: rank {rank}, {} cylinder runs, relative error {:.2e}",
        a.hull(),
        inner.intervals().len(),
        1.0 - inner.mu_mass() / a.mu_mass()
    );
    Ok(())
}
