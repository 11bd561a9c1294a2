//! Rejection rates of `rct`, `aipw` and `tmle` in setting 5 over a grid of
//! effect sizes and external-control sample sizes.
//!
//! Usage: `cargo run --release --example power_table -- [reps] [seed] [trees] [effects] [n_ec]`
//! e.g. `-- 200 9100 100 0.25,0.5,0.75 25,50,100,200`.

use std::time::Instant;

use extcontrol::simulation::{power_curve, setting, HarnessOptions, SettingOptions};
use extcontrol::Method;

fn list<T: std::str::FromStr>(s: &str) -> Vec<T> {
    s.split(',').map(|v| v.parse().ok().expect("list entry")).collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let reps: usize = args.get(1).map_or(200, |s| s.parse().expect("reps"));
    let seed: u64 = args.get(2).map_or(9100, |s| s.parse().expect("seed"));
    let trees: usize = args.get(3).map_or(100, |s| s.parse().expect("trees"));
    let effects: Vec<f64> = list(args.get(4).map_or("0.25,0.5,0.75", |s| s.as_str()));
    let n_ec: Vec<usize> = list(args.get(5).map_or("25,50,100,200", |s| s.as_str()));
    let (dgp, est) = setting(5, &SettingOptions { trees, ..SettingOptions::default() }).expect("setting");
    let est: Vec<_> = est.into_iter().filter(|e| e.method.has_eif()).collect();
    debug_assert!(est.iter().any(|e| e.method == Method::Aipw));
    let opts = HarnessOptions { antithetic: reps % 2 == 0, ..HarnessOptions::default() };
    let t0 = Instant::now();
    let table = power_curve(&dgp, &effects, &n_ec, &est, reps, seed, &opts).expect("power");
    println!("{} reps in {:.1}s", reps, t0.elapsed().as_secs_f64());
    println!("{:>7} {:>5} {:<6} {:>7} {:>7} {:>7} {:>8}", "effect", "n_ec", "est", "power", "bse", "cover", "bias");
    for r in &table.rows {
        println!(
            "{:>7.2} {:>5} {:<6} {:>7.3} {:>7.4} {:>7.3} {:>8.4}",
            r.effect, r.n_ec, r.label, r.rejection_rate, r.binomial_se, r.coverage, r.bias
        );
    }
}
