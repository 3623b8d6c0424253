use sms::ansatz::{AnsatzFamily, ParameterVector};
use sms::constraints::{ConservedQuantity, QuantityKind};
use sms::operator::RhsOperator;
use sms::quadrature::QuadratureRule;
use sms::scenarios::oracles::{point_vortex_reduction, point_vortex_tracks};
use sms::scenarios::leapfrog_metric;
use sms::stepper::{integrate, AssemblyMode, Scheme, StepperConfig, Trajectory, RunStatus};

fn run_sms(alpha: f64, sigma: f64, h: f64, tend: f64) -> Trajectory {
    let family = AnsatzFamily::GaussianMixture { dim: 2, terms: 4 };
    let theta0 = ParameterVector::new(
        vec![
            alpha, h, h, sigma, -alpha, h, -h, sigma, alpha, -h, h, sigma, -alpha, -h, -h,
            sigma,
        ],
        family.block_layout(),
    )
    .unwrap();
    let constraints = vec![
        ConservedQuantity::new(QuantityKind::KineticEnergy, &family, &theta0, None).unwrap(),
        ConservedQuantity::new(QuantityKind::Enstrophy, &family, &theta0, None).unwrap(),
    ];
    let cfg = StepperConfig {
        scheme: Scheme::Rk45Adaptive { rtol: 1e-8, atol: 1e-10 },
        t_span: (0.0, tend),
        gamma: 0.0,
        sketch: None,
        rank_tol: Some(1e-10),
        positivity_floor: 1e-8,
    };
    integrate(
        &family,
        &theta0,
        &RhsOperator::NsVorticity2d { nu: 0.0 },
        &AssemblyMode::Galerkin {
            quad: QuadratureRule::gauss_legendre_box(&[(-8.0, 40.0), (-6.0, 6.0)], 64).unwrap(),
            closed_form: true,
        },
        &constraints,
        &[],
        &cfg,
    )
    .unwrap()
}

fn interp(times: &[f64], tracks: &[Vec<[f64; 2]>], t: f64) -> Vec<[f64; 2]> {
    let k = times.partition_point(|&x| x <= t).min(times.len() - 1).max(1);
    let (t0, t1) = (times[k - 1], times[k]);
    let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
    (0..tracks[0].len())
        .map(|i| {
            [
                tracks[k - 1][i][0] * (1.0 - w) + tracks[k][i][0] * w,
                tracks[k - 1][i][1] * (1.0 - w) + tracks[k][i][1] * w,
            ]
        })
        .collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let configs: Vec<(f64, f64)> = if args.len() > 2 {
        vec![(args[1].parse().unwrap(), args[2].parse().unwrap())]
    } else {
        vec![(1.5, 0.8), (1.0, 1.2), (1.0, 1.6), (0.8, 2.0), (0.7, 2.4)]
    };
    for (alpha, sigma) in configs {
        let t0 = std::time::Instant::now();
        let tend: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(40.0);
        let traj = run_sms(alpha, sigma, 1.0, tend);
        let m = leapfrog_metric(&traj).unwrap();
        let family = AnsatzFamily::GaussianMixture { dim: 2, terms: 4 };
        let cfg = point_vortex_reduction(&family, &traj.states[0]).unwrap();
        let (pt, ptracks) = point_vortex_tracks(&cfg, (0.0, tend), 1e-10, 1e-12).unwrap();
        // mismatch over the first SMS swap window
        let t_first = m.swap_times.first().copied().unwrap_or(40.0);
        let mut err = 0.0f64;
        let mut extent = 0.0f64;
        for (ti, &t) in m.times.iter().enumerate() {
            if t > t_first {
                break;
            }
            let pv = interp(&pt, &ptracks, t);
            for v in 0..4 {
                let dx = m.tracks[ti][v][0] - pv[v][0];
                let dy = m.tracks[ti][v][1] - pv[v][1];
                err = err.max((dx * dx + dy * dy).sqrt());
                let ex = pv[v][0] - ptracks[0][v][0];
                let ey = pv[v][1] - ptracks[0][v][1];
                extent = extent.max((ex * ex + ey * ey).sqrt());
            }
        }
        let stiff = traj.status != RunStatus::Completed;
        println!(
            "a={alpha} s={sigma}: swaps={} times={:?} relLinf={:.3} ({} steps, {:.1}s{})",
            m.swaps,
            m.swap_times.iter().map(|t| (t * 100.0).round() / 100.0).collect::<Vec<_>>(),
            err / extent.max(1e-12),
            traj.times.len(),
            t0.elapsed().as_secs_f64(),
            if stiff { ", STIFF" } else { "" }
        );
    }
}
