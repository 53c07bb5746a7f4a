//! Inducing on a reference set: first returns and the time-change identity.

use rarelab::dynsys::{Intermittent, PointX, SystemSpec};
use rarelab::inducing::{estimate_measure, first_return_step, induced_hit_sample, InducedSystem};
use rarelab::processes::{collect_hit_sample, Observable};
use rarelab::rare_events::{Interval, IntervalUnion};

fn main() -> rarelab::Result<()> {
    let lsv = SystemSpec::Intermittent(Intermittent::new(0.5, 0.5)?);
    let y = vec![Interval::closed_open(0.5, 1.0)];
    let a = vec![Interval::closed(0.7, 0.71)];
    let probe_y = IntervalUnion::estimated(y.clone(), 1.0, 0.0)?;
    let probe_a = IntervalUnion::estimated(a.clone(), 1.0, 0.0)?;
    let est = estimate_measure(&lsv, &[&probe_y, &probe_a], 10_000_000, 10_000, 1)?;
    println!("μ(Y) ≈ {:.4} ± {:.1e}, μ(A) ≈ {:.5}", est[0].mass, est[0].std_err, est[1].mass);

    let y = IntervalUnion::estimated(y, est[0].mass, est[0].std_err)?;
    let a = IntervalUnion::estimated(a, est[1].mass, est[1].std_err)?;
    let ind = InducedSystem::new(lsv.clone(), y, 1 << 30)?;

    let x = PointX::new(0.9)?;
    let (next, r) = first_return_step(&ind, x)?;
    println!("T_Y(0.9) = {:.6} after {r} steps", next.value());

    let induced = induced_hit_sample(&ind, &a, &Observable::None, x, 3, 1_000_000)?;
    let direct = collect_hit_sample(&lsv, &a, &Observable::None, x, 3, 1_000_000)?;
    println!("induced hit times {:?}", induced.sample.raw_times);
    println!("same hits in original time {:?} = {:?}", induced.original_times, direct.raw_times);
    Ok(())
}
