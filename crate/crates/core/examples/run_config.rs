//! Running a batch experiment from a TOML config, as the CLI does.

use rarelab::experiment::{parse_config_str, run_experiment, RunOptions};

const CONFIG: &str = r#"
seed = 11
system = { kind = "gauss" }
family = { kind = "digit_tail" }
l_values = [20, 80]
n_samples = 5000
k_hits = 2

[[tests]]
kind = "ks"
law = { kind = "exp" }

[[tests]]
kind = "kac"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_config_str(CONFIG)?;
    let dir = std::env::temp_dir().join("rarelab-example");
    let out = run_experiment(&cfg, &RunOptions { out_dir: Some(dir), ..RunOptions::default() })?;
    for r in &out.rows {
        println!("l = {:>3} {:<5} stat {:.4} tol {:.4} {}", r.l, r.test, r.stat, r.tol, if r.pass { "pass" } else { "FAIL" });
    }
    println!("report: {}", out.report_path.display());
    Ok(())
}
