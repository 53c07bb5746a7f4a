//! End-to-end acceptance runs. Prints one PASS/FAIL line per criterion.

use std::process::ExitCode;
use std::time::Instant;

use rarelab::dynsys::{Intermittent, SystemSpec};
use rarelab::gmtheory::{cylinder_decay_fit, distortion_scan, theta_at_periodic, yosida_average_decay};
use rarelab::inducing::{estimate_measure, run_induced_monte_carlo, InducedSystem};
use rarelab::limits::{compound_geom_pmf_vec, duality_predict_hitting, fixed_point_residual, poisson_pmf, LimitLaw};
use rarelab::processes::{Observable, ObservableSpec};
use rarelab::rare_events::{make_target, target_intervals, Interval, IntervalUnion, Itinerary, RadiusRule, RareFamilySpec};
use rarelab::stats::{
    ks_distance, ks_mc_error, ks_two_sample, pair_dependence, run_monte_carlo, tv_discrete, EmpiricalLaw, McConfig,
    McRun, Partitioner, SeededRng, StartMeasure,
};

struct Report {
    failures: Vec<String>,
    allowed: Vec<&'static str>,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, detail: String) {
        println!("{id:<8} {} {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures.push(id.to_string());
        }
    }
}

fn grid() -> Vec<f64> {
    (1..=30).map(|i| i as f64 / 10.0).collect()
}

fn mc(
    sys: &SystemSpec,
    a: &IntervalUnion,
    obs: &Observable,
    n: usize,
    k: usize,
    start: StartMeasure,
    count_times: Vec<f64>,
    seed: u64,
) -> McRun {
    let cfg = McConfig {
        n_samples: n,
        k_hits: k,
        start,
        count_times,
        ..McConfig::default()
    };
    run_monte_carlo(sys, a, obs, &cfg, seed).expect("monte carlo run")
}

fn exp_cdf(t: f64) -> f64 {
    1.0 - (-t).exp()
}

fn fraction(values: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    values.iter().filter(|v| pred(**v)).count() as f64 / values.len() as f64
}

fn main() -> ExitCode {
    // The stated count law in the periodic-point check has mean 1/θ at t = 1,
    // which no μ-stationary count can match; its companion line uses the
    // mean-t scaling.
    let mut rep = Report {
        failures: Vec::new(),
        allowed: vec!["A9(ii)"],
    };
    let total = Instant::now();
    let gauss = SystemSpec::Gauss;

    // Gauss, large first digit.
    let clock = Instant::now();
    let a100 = make_target(&gauss, &RareFamilySpec::DigitTail, 100).unwrap();
    let mu100 = a100.mu_mass();
    let n = 40_000;
    let hit = mc(&gauss, &a100, &Observable::None, n, 3, StartMeasure::Mu, vec![1.0], 101);
    let hit_law = EmpiricalLaw::from_values(hit.gaps(0)).unwrap();
    let ks = ks_distance(&hit_law, &LimitLaw::Exp).unwrap();
    rep.line("A1", ks <= 0.02, format!("KS(hit, Exp) = {ks:.5} <= 0.02, μ(A) = {mu100:.5}, {:.1?}", clock.elapsed()));

    let clock = Instant::now();
    let ret = mc(&gauss, &a100, &Observable::None, n, 1, StartMeasure::MuA, vec![], 102);
    let ret_gaps = ret.gaps(0);
    let ret_law = EmpiricalLaw::from_values(ret_gaps.clone()).unwrap();
    let ks = ks_distance(&ret_law, &LimitLaw::Exp).unwrap();
    let kac = (ret_gaps.iter().sum::<f64>() / ret_gaps.len() as f64 - 1.0).abs();
    rep.line(
        "A2",
        ks <= 0.02 && kac <= 0.02,
        format!("KS(ret, Exp) = {ks:.5} <= 0.02, |Kac mean - 1| = {kac:.5} <= 0.02, {:.1?}", clock.elapsed()),
    );

    let (g1, g2) = hit.consecutive_gaps(0);
    let dep = pair_dependence(&g1, &g2, &Partitioner::quartiles(&g1), &Partitioner::quartiles(&g2)).unwrap();
    let joint = hit.gap_law(2).unwrap();
    let mut sup: f64 = 0.0;
    for i in 1..=9 {
        for j in 1..=9 {
            let s = joint.quantile(0, i as f64 / 10.0);
            let t = joint.quantile(1, j as f64 / 10.0);
            sup = sup.max((joint.cdf_prefix(&[s, t]) - exp_cdf(s) * exp_cdf(t)).abs());
        }
    }
    rep.line(
        "A3",
        dep <= 0.02 && sup <= 0.025,
        format!("pair dependence = {dep:.5} <= 0.02, 2-d sup = {sup:.5} <= 0.025"),
    );

    // Golden-mean periodic point.
    let clock = Instant::now();
    let theta = theta_at_periodic(&gauss, &[1]).unwrap();
    let golden = RareFamilySpec::CylinderAtPoint(Itinerary::periodic(vec![1]));
    let a8 = make_target(&gauss, &golden, 8).unwrap();
    let per = mc(&gauss, &a8, &Observable::None, 20_000, 1, StartMeasure::MuA, vec![], 104);
    let per_law = per.gap_law(1).unwrap();
    let short = fraction(&per.gaps(0), |g| g <= 0.01);
    let resid = fixed_point_residual(&per_law, theta, &grid()).unwrap();
    rep.line(
        "A4",
        (short - 0.381966).abs() <= 0.02 && resid <= 0.03,
        format!(
            "θ = {theta:.6}, P(ret <= 0.01) = {short:.5} (0.381966 ± 0.02), residual = {resid:.5} <= 0.03, {:.1?}",
            clock.elapsed()
        ),
    );

    let first_ret = ret.gap_law(1).unwrap();
    let mut dual: f64 = 0.0;
    for t in grid() {
        let pred = duality_predict_hitting(&first_ret, 0, &[t]).unwrap();
        dual = dual.max((hit_law.cdf_prefix(&[t]) - pred).abs());
    }
    let dual_tol = mu100 + 3.0 * ks_mc_error(n);
    rep.line("A5", dual <= dual_tol, format!("duality sup = {dual:.5} <= {dual_tol:.5}"));

    // Digit marks.
    let clock = Instant::now();
    let a50 = make_target(&gauss, &RareFamilySpec::DigitTail, 50).unwrap();
    let thr = ObservableSpec::DigitThreshold { vartheta: 0.5 }.bind(&gauss, &a50, 50).unwrap();
    let marks = mc(&gauss, &a50, &thr, 30_000, 4, StartMeasure::Mu, vec![], 106);
    let exact = (1.0f64 + 1.0 / 100.0).ln() / (1.0f64 + 1.0 / 50.0).ln();
    let mut worst: f64 = 0.0;
    let mut covered = true;
    for j in 0..4 {
        let m = marks.marks(j);
        let p = fraction(&m, |v| v == 1.0);
        worst = worst.max((p - 0.5).abs());
        let half_width = 4.0 * (p * (1.0 - p) / m.len() as f64).sqrt();
        covered &= (p - exact).abs() <= half_width;
    }
    let (m1, m2) = marks.consecutive_marks(0);
    let two = Partitioner::Integer { cells: 2 };
    let dep = pair_dependence(&m1, &m2, &two, &two).unwrap();
    rep.line(
        "A6",
        worst <= 0.02 && dep <= 0.02 && covered,
        format!(
            "max |P(mark=1) - 0.5| = {worst:.5} <= 0.02, pair dependence = {dep:.5} <= 0.02, {exact:.5} in every CI: {covered}, {:.1?}",
            clock.elapsed()
        ),
    );

    let clock = Instant::now();
    let res = ObservableSpec::DigitResidue { modulus: 3 }.bind(&gauss, &a50, 50).unwrap();
    let rmarks = mc(&gauss, &a50, &res, 30_000, 1, StartMeasure::Mu, vec![], 107);
    let m = rmarks.marks(0);
    let freq_err = (0..3)
        .map(|r| (fraction(&m, |v| v == r as f64) - 1.0 / 3.0).abs())
        .fold(0.0, f64::max);
    let (t, mk) = rmarks.time_mark_pairs(0);
    let dep = pair_dependence(&t, &mk, &Partitioner::quartiles(&t), &Partitioner::Integer { cells: 3 }).unwrap();
    rep.line(
        "A7",
        freq_err <= 0.02 && dep <= 0.02,
        format!("max |freq - 1/3| = {freq_err:.5} <= 0.02, time-mark dependence = {dep:.5} <= 0.02, {:.1?}", clock.elapsed()),
    );

    // Doubling chart marks.
    let clock = Instant::now();
    let dbl = SystemSpec::Doubling;
    let fam = RareFamilySpec::ShrinkingInterval {
        center: 2f64.sqrt() - 1.0,
        radius: RadiusRule::Geometric { base: 2.0, offset: 2 },
    };
    let a12 = make_target(&dbl, &fam, 12).unwrap();
    let chart = ObservableSpec::IntervalChart.bind(&dbl, &a12, 12).unwrap();
    let cm = mc(&dbl, &a12, &chart, 30_000, 1, StartMeasure::Mu, vec![], 108);
    let ks = ks_distance(&EmpiricalLaw::from_values(cm.marks(0)).unwrap(), &LimitLaw::Uniform01).unwrap();
    let (t, mk) = cm.time_mark_pairs(0);
    let dep = pair_dependence(&t, &mk, &Partitioner::quartiles(&t), &Partitioner::quartiles(&mk)).unwrap();
    rep.line(
        "A8",
        ks <= 0.02 && dep <= 0.02,
        format!("KS(marks, U) = {ks:.5} <= 0.02, time-mark dependence = {dep:.5} <= 0.02, {:.1?}", clock.elapsed()),
    );

    // Counting marginals.
    let hist = hit.counting_histogram(0);
    let tv = tv_discrete(&hist, |k| poisson_pmf(1.0, k));
    rep.line("A9(i)", tv <= 0.02, format!("TV(N_1, Poisson(1)) = {tv:.5} <= 0.02"));

    let clock = Instant::now();
    let pc = mc(&gauss, &a8, &Observable::None, 20_000, 1, StartMeasure::Mu, vec![1.0], 109);
    let hist = pc.counting_histogram(0);
    let stated = compound_geom_pmf_vec(1.0, theta, 25);
    let tv = tv_discrete(&hist, |k| stated.get(k as usize).copied().unwrap_or(0.0));
    let mean = hist.mean_lower_bound();
    rep.line(
        "A9(ii)",
        tv <= 0.03,
        format!("TV(N_1, CPG(1, θ)) = {tv:.5} <= 0.03, empirical mean = {mean:.4} vs law mean {:.4}", 1.0 / theta),
    );
    let scaled = compound_geom_pmf_vec(theta, theta, 25);
    let tv = tv_discrete(&hist, |k| scaled.get(k as usize).copied().unwrap_or(0.0));
    rep.line(
        "A9(ii')",
        tv <= 0.03,
        format!("TV(N_1, CPG(θ, θ)) = {tv:.5} <= 0.03, law mean 1, {:.1?}", clock.elapsed()),
    );

    // Inducing for the intermittent map.
    let clock = Instant::now();
    let lsv = SystemSpec::Intermittent(Intermittent::new(0.5, 0.5).unwrap());
    let y_iv = vec![Interval::closed_open(0.5, 1.0)];
    let probe_y = IntervalUnion::estimated(y_iv.clone(), 1.0, 0.0).unwrap();
    let fam = RareFamilySpec::ShrinkingInterval {
        center: 0.5f64.sqrt(),
        radius: RadiusRule::Harmonic { rho0: 0.5 },
    };
    let l = 1000;
    let a_iv = target_intervals(&lsv, &fam, l).unwrap();
    let probe_a = IntervalUnion::estimated(a_iv.clone(), 1.0, 0.0).unwrap();
    let est = estimate_measure(&lsv, &[&probe_a, &probe_y], 50_000_000, 10_000, 110).unwrap();
    let (mu_a, mu_y) = (est[0].mass, est[1].mass);
    let a = IntervalUnion::estimated(a_iv, mu_a, est[0].std_err).unwrap();
    let y = IntervalUnion::estimated(y_iv, mu_y, est[1].std_err).unwrap();
    let mu_y_a = mu_a / mu_y;
    let orig = mc(&lsv, &a, &Observable::None, 20_000, 1, StartMeasure::Mu, vec![], 111);
    let ind = InducedSystem::new(lsv.clone(), y, 1 << 40).unwrap();
    let cap = (50.0 / mu_y_a).ceil() as u64;
    let induced = run_induced_monte_carlo(&ind, &a, &Observable::None, mu_y_a, 20_000, 1, cap, 112).unwrap();
    let ks = ks_two_sample(&orig.gap_law(1).unwrap(), &induced.gap_law(1).unwrap()).unwrap();
    rep.line(
        "A10",
        ks <= 0.03 && induced.identity_violations == 0,
        format!(
            "μ_Y(A) = {mu_y_a:.2e}, KS(orig, induced) = {ks:.5} <= 0.03, identity violations {}/{}, {:.1?}",
            induced.identity_violations,
            induced.identity_checked,
            clock.elapsed()
        ),
    );

    // Structure constants of the doubling map.
    let th = theta_at_periodic(&dbl, &[0]).unwrap();
    let fit = cylinder_decay_fit(&dbl, 1..=10).unwrap();
    let dist = distortion_scan(&dbl, 8, 16, &mut SeededRng::new(113, 0)).unwrap();
    let cells = 256;
    let u: Vec<f64> = (0..cells).map(|i| (2 * i + 1) as f64 / cells as f64).collect();
    let v = vec![1.0; cells];
    let norm = u.iter().map(|x| (x - 1.0).abs()).sum::<f64>() / cells as f64;
    let yos = yosida_average_decay(&dbl, &u, &v, 80).unwrap();
    rep.line(
        "A11",
        th == 0.5 && fit.q == 0.5 && fit.kappa == 1.0 && dist == 0.0 && yos <= 0.1 * norm,
        format!(
            "θ = {th}, q = {}, κ = {}, distortion = {dist}, Cesàro = {yos:.6} <= {:.6}",
            fit.q,
            fit.kappa,
            0.1 * norm
        ),
    );

    // Start measure independence.
    let clock = Instant::now();
    let lin = mc(&gauss, &a100, &Observable::None, n, 1, StartMeasure::LinearDensity, vec![], 114);
    let ks = ks_distance(&EmpiricalLaw::from_values(lin.gaps(0)).unwrap(), &LimitLaw::Exp).unwrap();
    rep.line("A12", ks <= 0.025, format!("KS(hit from 2x dx, Exp) = {ks:.5} <= 0.025, {:.1?}", clock.elapsed()));

    let unexpected: Vec<&String> = rep.failures.iter().filter(|f| !rep.allowed.contains(&f.as_str())).collect();
    println!(
        "{} failed ({} expected), total {:.1?}",
        rep.failures.len(),
        rep.failures.len() - unexpected.len(),
        total.elapsed()
    );
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
