use std::time::Instant;
use sms::scenarios::{self, oracles, Overrides, ScenarioId};

fn main() {
    let sc = scenarios::build(ScenarioId::FpDuffing, &Overrides::default()).unwrap();
    let t0 = Instant::now();
    let samples = oracles::euler_maruyama_duffing(
        &sc.family, &sc.theta0, 1.0 / 40.0, 20_000, 2e-3, 50.0, 777,
    )
    .unwrap();
    let (p, n) = oracles::half_plane_centers_of(&samples).unwrap();
    println!(
        "EM ({:.1}s): pos ({:.3},{:.3}) neg ({:.3},{:.3})",
        t0.elapsed().as_secs_f64(),
        p[0],
        p[1],
        n[0],
        n[1]
    );
}
