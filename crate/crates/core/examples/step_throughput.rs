//! Measures particle-steps per second of the Euler–Maruyama kernel.
//!
//! cargo run --release -p leibenson-core --example step_throughput -- [particles] [steps]

use std::time::Instant;

use leibenson::sde::{init_ensemble, step, SDEConfig};
use leibenson::LeibensonParams;

fn main() {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(200_000, |s| s.parse().expect("particles"));
    let steps: u64 = args.next().map_or(200, |s| s.parse().expect("steps"));
    let params = LeibensonParams::new(2, 3.0, 1.0).expect("valid parameters");
    let dt = 1e-4;
    let mut config = SDEConfig::new(params, 1.0, dt * steps as f64, dt, n, 42);
    config.snap_times = vec![];
    let mut ensemble = init_ensemble(&config).expect("initial ensemble");
    let start = Instant::now();
    for _ in 0..steps {
        step(&mut ensemble, &config).expect("step");
    }
    let elapsed = start.elapsed().as_secs_f64();
    let rate = n as f64 * steps as f64 / elapsed;
    println!("{n} particles x {steps} steps: {elapsed:.3} s, {:.1} ns per particle-step", 1e9 / rate);
}
