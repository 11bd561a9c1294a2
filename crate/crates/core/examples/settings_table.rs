//! Prints a bias / MSE / coverage table for the five specification settings.
//!
//! Usage: `cargo run --release --example settings_table -- [reps] [seed] [trees] [settings] [n_boot]`
//! e.g. `-- 200 9000 100 1,2,3 200`.

use std::time::Instant;

use extcontrol::simulation::{run_replicates_with, setting, HarnessOptions, SettingOptions};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let reps: usize = args.get(1).map_or(200, |s| s.parse().expect("reps"));
    let seed: u64 = args.get(2).map_or(9000, |s| s.parse().expect("seed"));
    let trees: usize = args.get(3).map_or(100, |s| s.parse().expect("trees"));
    let which: Vec<u8> = args
        .get(4)
        .map_or("1,2,3,4,5".to_string(), |s| s.clone())
        .split(',')
        .map(|s| s.parse().expect("setting"))
        .collect();
    let n_boot: usize = args.get(5).map_or(200, |s| s.parse().expect("n_boot"));
    let so = SettingOptions { trees, n_boot, ..SettingOptions::default() };
    let opts = HarnessOptions { antithetic: reps % 2 == 0, ..HarnessOptions::default() };
    for k in which {
        let (dgp, est) = setting(k, &so).expect("setting");
        let t0 = Instant::now();
        let res = run_replicates_with(&dgp, &est, reps, seed + k as u64, &opts).expect("run");
        println!("setting {k} ({:.1}s)", t0.elapsed().as_secs_f64());
        println!("  {:<6} {:>9} {:>8} {:>8} {:>7} {:>8} {:>6}", "est", "bias", "mc_se", "mse", "sd", "cover", "rej");
        for s in &res.summaries {
            println!(
                "  {:<6} {:>9.4} {:>8.4} {:>8.4} {:>7.4} {:>8.3} {:>6.3}",
                s.label,
                s.bias,
                s.mc_se.unwrap_or(f64::NAN),
                s.mse,
                s.sd.unwrap_or(f64::NAN),
                s.coverage,
                s.rejection_rate
            );
        }
    }
}
