//! Independent reference computations used to validate scenario results:
//! a point-vortex reduction of the four-bump stream function and a
//! path-sampling simulation of the stochastic Duffing oscillator.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ansatz::{AnsatzFamily, ParameterVector};
use crate::error::{Result, SmsError};
use crate::stepper::{integrate_ode, RunStatus};

#[derive(Clone, Debug)]
pub struct PointVortexConfig {
    pub positions: Vec<[f64; 2]>,
    pub circulations: Vec<f64>,
}

/// Effective circulation of one Gaussian stream-function bump: the largest
/// loop circulation around its center, attained on the circle r = sigma.
pub fn effective_circulation(alpha: f64) -> f64 {
    4.0 * PI * alpha / std::f64::consts::E
}

/// Reduces a 2D Gaussian-bump stream function to point vortices at the bump
/// centers with the bumps' effective circulations.
pub fn point_vortex_reduction(
    family: &AnsatzFamily,
    theta: &ParameterVector,
) -> Result<PointVortexConfig> {
    let AnsatzFamily::GaussianMixture { dim: 2, terms } = family else {
        return Err(SmsError::config(
            "point-vortex reduction expects a 2d bump mixture",
        ));
    };
    let mut positions = Vec::with_capacity(*terms);
    let mut circulations = Vec::with_capacity(*terms);
    for i in 0..*terms {
        let b = &theta.values[4 * i..4 * i + 4];
        positions.push([b[1], b[2]]);
        circulations.push(effective_circulation(b[0]));
    }
    Ok(PointVortexConfig {
        positions,
        circulations,
    })
}

/// Integrates the point-vortex equations (each vortex advected by the others'
/// irrotational velocity fields) adaptively over the span.
pub fn point_vortex_tracks(
    cfg: &PointVortexConfig,
    t_span: (f64, f64),
    rtol: f64,
    atol: f64,
) -> Result<(Vec<f64>, Vec<Vec<[f64; 2]>>)> {
    let n = cfg.positions.len();
    if n != cfg.circulations.len() || n == 0 {
        return Err(SmsError::config("positions and circulations must match"));
    }
    let y0: Vec<f64> = cfg.positions.iter().flatten().copied().collect();
    let gamma = cfg.circulations.clone();
    let rhs = move |_t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let mut dy = vec![0.0; 2 * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let dx = y[2 * i] - y[2 * j];
                let dyv = y[2 * i + 1] - y[2 * j + 1];
                let r2 = dx * dx + dyv * dyv;
                if r2 < 1e-12 {
                    return Err(SmsError::numeric("vortex collision"));
                }
                let k = gamma[j] / (2.0 * PI * r2);
                dy[2 * i] -= k * dyv;
                dy[2 * i + 1] += k * dx;
            }
        }
        Ok(dy)
    };
    let (times, states, status) = integrate_ode(&rhs, &y0, t_span, rtol, atol)?;
    if status != RunStatus::Completed {
        return Err(SmsError::numeric("point-vortex integration stalled"));
    }
    let tracks = states
        .iter()
        .map(|s| (0..n).map(|i| [s[2 * i], s[2 * i + 1]]).collect())
        .collect();
    Ok((times, tracks))
}

/// Simulates `n_paths` realizations of dX = v(X) dt + sqrt(2 nu) dW for the
/// Duffing drift v = [x2, x1 - 0.2 x2 - x1^3], starting from the mixture
/// density, and returns the final states. Deterministic for a fixed seed
/// regardless of thread count: each path owns a seeded generator.
pub fn euler_maruyama_duffing(
    family: &AnsatzFamily,
    theta0: &ParameterVector,
    nu: f64,
    n_paths: usize,
    dt: f64,
    t_end: f64,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    let AnsatzFamily::GaussianMixture { dim: 2, terms } = family else {
        return Err(SmsError::config("path sampling expects a 2d bump mixture"));
    };
    if !(nu > 0.0 && dt > 0.0 && t_end > 0.0) {
        return Err(SmsError::config("need nu > 0, dt > 0, t_end > 0"));
    }
    // sampling weights: each bump integrates to alpha * pi * sigma^2
    let mut weights = Vec::with_capacity(*terms);
    let mut total = 0.0;
    for i in 0..*terms {
        let b = &theta0.values[4 * i..4 * i + 4];
        if b[0] <= 0.0 {
            return Err(SmsError::capability(
                "initial sampling needs nonnegative bump amplitudes",
            ));
        }
        let w = b[0] * PI * b[3] * b[3];
        total += w;
        weights.push(w);
    }
    let n_steps = (t_end / dt).round() as usize;
    let noise = (2.0 * nu * dt).sqrt();
    let theta = theta0.values.clone();
    let out: Vec<[f64; 2]> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (p as u64).wrapping_mul(0x9E3779B97F4A7C15));
            // pick a mixture component, then a point from it
            let draw = rng.gen_range(0.0..total);
            let mut acc = 0.0;
            let mut comp = 0;
            for (i, w) in weights.iter().enumerate() {
                acc += w;
                if draw < acc {
                    comp = i;
                    break;
                }
            }
            let b = &theta[4 * comp..4 * comp + 4];
            let std = b[3] / std::f64::consts::SQRT_2;
            let mut x = b[1] + std * gaussian(&mut rng);
            let mut y = b[2] + std * gaussian(&mut rng);
            for _ in 0..n_steps {
                let vx = y;
                let vy = x - 0.2 * y - x * x * x;
                x += vx * dt + noise * gaussian(&mut rng);
                y += vy * dt + noise * gaussian(&mut rng);
            }
            [x, y]
        })
        .collect();
    Ok(out)
}

/// One standard normal draw (Box-Muller).
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Half-plane centers of mass of a point cloud, same convention as the
/// density version.
pub fn half_plane_centers_of(points: &[[f64; 2]]) -> Result<([f64; 2], [f64; 2])> {
    let mut count = [0usize; 2];
    let mut mx = [0.0; 2];
    let mut my = [0.0; 2];
    for p in points {
        if p[0] == 0.0 {
            continue;
        }
        let side = usize::from(p[0] < 0.0);
        count[side] += 1;
        mx[side] += p[0];
        my[side] += p[1];
    }
    if count[0] == 0 || count[1] == 0 {
        return Err(SmsError::numeric("a half-plane holds no samples"));
    }
    Ok((
        [mx[0] / count[0] as f64, my[0] / count[0] as f64],
        [mx[1] / count[1] as f64, my[1] / count[1] as f64],
    ))
}
