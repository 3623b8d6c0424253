use sms::ansatz::{AnsatzFamily, ParameterVector};
use sms::operator::RhsOperator;
use sms::quadrature::QuadratureRule;
use sms::stepper::{integrate, AssemblyMode, StepperConfig, Scheme, RunStatus};

fn main() {
    // state captured mid-pass, just before the oracle run re-expands
    let th = vec![
        1.712, 4.119, 1.466, 0.836, -1.712, 4.119, -1.466, 0.836,
        11.098, 3.661, 0.036, 0.690, -11.098, 3.661, -0.036, 0.690,
    ];
    let family = AnsatzFamily::GaussianMixture { dim: 2, terms: 4 };
    let theta0 = ParameterVector::new(th, family.block_layout()).unwrap();
    let op = RhsOperator::NsVorticity2d { nu: 0.0 };
    let mode = AssemblyMode::Galerkin {
        quad: QuadratureRule::gauss_legendre_box(&[(-8.0, 40.0), (-6.0, 6.0)], 64).unwrap(),
        closed_form: true,
    };
    let cfg = StepperConfig {
        scheme: Scheme::Rk45Adaptive { rtol: 1e-6, atol: 1e-8 },
        t_span: (0.0, 4.0), gamma: 0.0, sketch: None,
        rank_tol: Some(1e-10), positivity_floor: 1e-8,
    };
    let t0 = std::time::Instant::now();
    let traj = integrate(&family, &theta0, &op, &mode, &[], &[], &cfg).unwrap();
    for (t, s) in traj.times.iter().zip(&traj.states) {
        if (t * 10.0).fract().abs() < 1e-9 || t == traj.times.last().unwrap() {
            let v = &s.values;
            println!("t={t:.3} ampB={:.3} yB={:.4} xB={:.3} xA={:.3}", v[8], v[10], v[9], v[1]);
        }
    }
    println!("{} steps, {:.1}s, {:?}", traj.times.len()-1, t0.elapsed().as_secs_f64(),
        matches!(traj.status, RunStatus::Completed));
}
