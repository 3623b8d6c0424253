use std::time::Instant;
use sms::scenarios::{self, half_plane_centers, Overrides, ScenarioId};

fn main() {
    let tend: f64 = std::env::args().nth(1).unwrap().parse().unwrap();
    let sc = scenarios::build(
        ScenarioId::FpDuffing,
        &Overrides {
            t_span: Some((0.0, tend)),
            ..Overrides::default()
        },
    )
    .unwrap();
    let t0 = Instant::now();
    let (traj, report) = scenarios::run(&sc).unwrap();
    println!(
        "t_end {tend}: steps {} in {:.1}s",
        traj.times.len(),
        t0.elapsed().as_secs_f64()
    );
    let drift = traj
        .diagnostics
        .iter()
        .map(|d| (d.invariant_values[0] - 1.0).abs())
        .fold(0.0, f64::max);
    println!("mass drift {drift:.2e}");
    let (p, n) = half_plane_centers(&sc.family, traj.states.last().unwrap()).unwrap();
    println!("centers ({:.3},{:.3}) ({:.3},{:.3})", p[0], p[1], n[0], n[1]);
    for c in &report.checks {
        println!(
            "  {}: {} measured {:.3e}",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.measured
        );
    }
}
