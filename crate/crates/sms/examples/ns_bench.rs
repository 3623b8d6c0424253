use sms::ansatz::{AnsatzFamily, ParameterVector};
use sms::constraints::{ConservedQuantity, QuantityKind};
use sms::operator::RhsOperator;
use sms::quadrature::QuadratureRule;
use sms::stepper::{integrate, AssemblyMode, StepperConfig, Scheme, RunStatus};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let rtol: f64 = args[1].parse().unwrap();
    let tend: f64 = args[2].parse().unwrap();
    let gamma: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.0);
    let family = AnsatzFamily::GaussianMixture { dim: 2, terms: 4 };
    let theta0 = ParameterVector::new(
        vec![1.5, 1.0, 1.0, 0.8, -1.5, 1.0, -1.0, 0.8, 1.5, -1.0, 1.0, 0.8, -1.5, -1.0, -1.0, 0.8],
        family.block_layout(),
    ).unwrap();
    let constraints = vec![
        ConservedQuantity::new(QuantityKind::KineticEnergy, &family, &theta0, None).unwrap(),
        ConservedQuantity::new(QuantityKind::Enstrophy, &family, &theta0, None).unwrap(),
    ];
    let op = RhsOperator::NsVorticity2d { nu: 0.0 };
    let mode = AssemblyMode::Galerkin {
        quad: QuadratureRule::gauss_legendre_box(&[(-8.0, 40.0), (-6.0, 6.0)], 64).unwrap(),
        closed_form: args.get(5).map(|s| s.as_str()) != Some("quad"),
    };
    let cfg = StepperConfig {
        scheme: Scheme::Rk45Adaptive { rtol, atol: rtol * 1e-2 },
        t_span: (0.0, tend), gamma, sketch: None, rank_tol: Some(1e-10), positivity_floor: 1e-8,
    };
    let t0 = std::time::Instant::now();
    let nocon: Vec<sms::constraints::ConservedQuantity> = vec![];
    let cons: &[sms::constraints::ConservedQuantity] = if args.get(4).map(|s| s.as_str()) == Some("nocon") { &nocon } else { &constraints };
    let traj = integrate(&family, &theta0, &op, &mode, cons, &[], &cfg).unwrap();
    let min_dt = traj.diagnostics.iter().map(|d| d.dt).fold(f64::INFINITY, f64::min);
    let max_cond = traj.diagnostics.iter().map(|d| d.condition_estimate).fold(0.0, f64::max);
    let rej: u32 = traj.diagnostics.iter().map(|d| d.step_rejections).sum();
    // worst relative invariant drift
    let mut drift = 0.0f64;
    for d in &traj.diagnostics {
        for (v, q) in d.invariant_values.iter().zip(&constraints) {
            drift = drift.max(((v - q.reference_value) / q.reference_value).abs());
        }
    }
    println!("rtol={rtol:.0e} gamma={gamma:.1e} tend={tend}: {} steps, {} rej, min_dt={min_dt:.2e}, max_cond={max_cond:.2e}, drift={drift:.2e}, {:.1}s{}",
        traj.times.len()-1, rej, t0.elapsed().as_secs_f64(),
        if traj.status == RunStatus::Completed { "" } else { " STIFF" });
    let y = &traj.states.last().unwrap().values;
    println!("final state: {:?}", y.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
}
