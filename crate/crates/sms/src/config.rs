//! Strict TOML run configuration: named setups with overrides, or a fully
//! custom setup mirroring the library types. Unknown keys are hard errors,
//! and `render` emits the effective configuration with every default filled
//! in so that `parse(render(c))` round-trips.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::ansatz::{AnsatzFamily, ParameterVector};
use crate::assembly::CollocationSet;
use crate::constraints::{ConservedQuantity, QuantityKind};
use crate::error::{Result, SmsError};
use crate::gausscalc::Poly;
use crate::operator::RhsOperator;
use crate::quadrature::QuadratureRule;
use crate::scenarios::{self, Overrides, Scenario, ScenarioId};
use crate::stepper::{AssemblyMode, Scheme, SketchConfig, StepperConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "OverridesSection::is_empty")]
    pub overrides: OverridesSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<SnapshotSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub cadence: Cadence,
}

fn default_seed() -> u64 {
    7_777
}

/// Output sampling: every k-th accepted step, or resampled at a fixed
/// interval; exactly one of the two.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cadence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

impl Default for Cadence {
    fn default() -> Self {
        Cadence {
            every: Some(1),
            dt: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverridesSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_span: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
}

impl OverridesSection {
    fn is_empty(&self) -> bool {
        self == &OverridesSection::default()
    }
}

/// A fully explicit setup mirroring the library types.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSpec {
    pub family: AnsatzFamily,
    pub theta0: Vec<f64>,
    pub operator: OperatorSpec,
    pub assembly: AssemblySpec,
    #[serde(default)]
    pub constraints: Vec<QuantityKind>,
    #[serde(default)]
    pub monitors: Vec<QuantityKind>,
    pub stepper: StepperSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    AdvectionDiffusion {
        c: Vec<f64>,
        nu: f64,
    },
    /// Drift components as polynomial terms: each component is a list of
    /// (exponents, coefficient) pairs.
    FokkerPlanck {
        nu: f64,
        drift: Vec<Vec<(Vec<u8>, f64)>>,
    },
    KuramotoSivashinsky {},
    NsVorticity2d {
        nu: f64,
    },
}

impl OperatorSpec {
    pub fn build(&self) -> Result<RhsOperator> {
        Ok(match self {
            OperatorSpec::AdvectionDiffusion { c, nu } => RhsOperator::AdvectionDiffusion {
                c: c.clone(),
                nu: *nu,
            },
            OperatorSpec::FokkerPlanck { nu, drift } => {
                let dim = drift.len();
                let drift = drift
                    .iter()
                    .map(|terms| {
                        let mut p = Poly::zero(dim);
                        for (exps, coeff) in terms {
                            if exps.len() != dim {
                                return Err(SmsError::config(
                                    "drift exponent tuple length must match the dimension",
                                ));
                            }
                            p.add_term(exps.clone(), *coeff);
                        }
                        Ok(p)
                    })
                    .collect::<Result<Vec<_>>>()?;
                RhsOperator::FokkerPlanck { nu: *nu, drift }
            }
            OperatorSpec::KuramotoSivashinsky {} => RhsOperator::KuramotoSivashinsky,
            OperatorSpec::NsVorticity2d { nu } => RhsOperator::NsVorticity2d { nu: *nu },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AssemblySpec {
    Galerkin {
        quad: QuadSpec,
        #[serde(default)]
        closed_form: bool,
    },
    Collocation {
        points: PointsSpec,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QuadSpec {
    LegendreTruncated {
        dim: usize,
        nodes_per_axis: usize,
        radius: f64,
    },
    LegendreBox {
        bounds: Vec<(f64, f64)>,
        nodes_per_axis: usize,
    },
    PeriodicTrapezoid {
        n: usize,
        period: f64,
    },
}

impl QuadSpec {
    pub fn build(&self) -> Result<QuadratureRule> {
        match self {
            QuadSpec::LegendreTruncated {
                dim,
                nodes_per_axis,
                radius,
            } => QuadratureRule::gauss_legendre_truncated(*dim, *nodes_per_axis, *radius),
            QuadSpec::LegendreBox {
                bounds,
                nodes_per_axis,
            } => QuadratureRule::gauss_legendre_box(bounds, *nodes_per_axis),
            QuadSpec::PeriodicTrapezoid { n, period } => {
                QuadratureRule::periodic_trapezoid(*n, *period)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PointsSpec {
    EquispacedBox {
        bounds: Vec<(f64, f64)>,
        per_axis: usize,
    },
    EquispacedPeriodic {
        n: usize,
        period: f64,
    },
    RandomUniform {
        bounds: Vec<(f64, f64)>,
        n: usize,
        seed: u64,
    },
}

impl PointsSpec {
    pub fn build(&self) -> Result<CollocationSet> {
        match self {
            PointsSpec::EquispacedBox { bounds, per_axis } => {
                CollocationSet::equispaced_box(bounds, *per_axis)
            }
            PointsSpec::EquispacedPeriodic { n, period } => {
                CollocationSet::equispaced_periodic(*n, *period)
            }
            PointsSpec::RandomUniform { bounds, n, seed } => {
                CollocationSet::random_uniform(bounds, *n, *seed)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeSpec {
    Rk4Fixed { dt: f64 },
    Rk45Adaptive { rtol: f64, atol: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchSpec {
    pub k: usize,
    #[serde(default = "default_reseed")]
    pub reseed_every: usize,
    pub seed: u64,
}

fn default_reseed() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperSpec {
    pub scheme: SchemeSpec,
    pub t_span: (f64, f64),
    #[serde(default)]
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sketch: Option<SketchSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_tol: Option<f64>,
    #[serde(default = "default_floor")]
    pub positivity_floor: f64,
}

fn default_floor() -> f64 {
    1e-8
}

impl StepperSpec {
    pub fn build(&self) -> StepperConfig {
        StepperConfig {
            scheme: match self.scheme {
                SchemeSpec::Rk4Fixed { dt } => Scheme::Rk4Fixed { dt },
                SchemeSpec::Rk45Adaptive { rtol, atol } => Scheme::Rk45Adaptive { rtol, atol },
            },
            t_span: self.t_span,
            gamma: self.gamma,
            sketch: self.sketch.as_ref().map(|s| SketchConfig {
                k: s.k,
                reseed_every: s.reseed_every,
                seed: s.seed,
            }),
            rank_tol: self.rank_tol,
            positivity_floor: self.positivity_floor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotSpec {
    pub times: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
    pub per_axis: usize,
}

/// Parses and semantically validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text)
        .map_err(|e| SmsError::config(format!("configuration parse error: {e}")))?;
    validate(&cfg)?;
    Ok(cfg)
}

/// Effective configuration, defaults included.
pub fn render_config(cfg: &RunConfig) -> Result<String> {
    toml::to_string_pretty(cfg)
        .map_err(|e| SmsError::config(format!("configuration render error: {e}")))
}

fn validate(cfg: &RunConfig) -> Result<()> {
    match (&cfg.run.scenario, &cfg.custom) {
        (Some(_), Some(_)) => {
            return Err(SmsError::config(
                "run.scenario and [custom] are mutually exclusive",
            ))
        }
        (None, None) => {
            return Err(SmsError::config(
                "either run.scenario or a [custom] block is required",
            ))
        }
        _ => {}
    }
    if let Some(name) = &cfg.run.scenario {
        // "all" expands to every named setup, one output directory each
        if name != "all" {
            ScenarioId::parse(name)?;
        }
    }
    match (&cfg.run.cadence.every, &cfg.run.cadence.dt) {
        (Some(_), Some(_)) => {
            return Err(SmsError::config(
                "cadence.every and cadence.dt are mutually exclusive",
            ))
        }
        (None, None) => {
            return Err(SmsError::config("cadence needs either `every` or `dt`"))
        }
        (Some(0), _) => return Err(SmsError::config("cadence.every must be >= 1")),
        (_, Some(dt)) if !(dt > &0.0) => {
            return Err(SmsError::config("cadence.dt must be positive"))
        }
        _ => {}
    }
    if let Some(o) = cfg_gamma(cfg) {
        if !(o >= 0.0) {
            return Err(SmsError::config("gamma must be >= 0"));
        }
    }
    if let Some(custom) = &cfg.custom {
        let scenario = build_custom(custom, cfg.run.seed)?;
        scenario.stepper.validate(scenario.theta0.len())?;
    }
    if let Some(snap) = &cfg.snapshots {
        if snap.times.is_empty() || snap.per_axis < 2 || snap.bounds.is_empty() {
            return Err(SmsError::config(
                "snapshots need times, bounds, and per_axis >= 2",
            ));
        }
    }
    Ok(())
}

fn cfg_gamma(cfg: &RunConfig) -> Option<f64> {
    cfg.overrides
        .gamma
        .or_else(|| cfg.custom.as_ref().map(|c| c.stepper.gamma))
}

/// Materializes the configured setup: named with overrides, or custom.
pub fn build_scenario(cfg: &RunConfig) -> Result<Scenario> {
    if let Some(name) = &cfg.run.scenario {
        let id = ScenarioId::parse(name)?;
        let o = Overrides {
            c: cfg.overrides.c,
            nu: cfg.overrides.nu,
            t_span: cfg.overrides.t_span,
            seed: Some(cfg.run.seed),
            gamma: cfg.overrides.gamma,
            rtol: cfg.overrides.rtol,
            atol: cfg.overrides.atol,
        };
        return scenarios::build(id, &o);
    }
    let custom = cfg
        .custom
        .as_ref()
        .ok_or_else(|| SmsError::config("no scenario and no custom block"))?;
    if !cfg.overrides.is_empty() {
        return Err(SmsError::config(
            "[overrides] only applies to named scenarios",
        ));
    }
    build_custom(custom, cfg.run.seed)
}

fn build_custom(custom: &CustomSpec, seed: u64) -> Result<Scenario> {
    let family = custom.family.clone();
    let theta0 = ParameterVector::new(custom.theta0.clone(), family.block_layout())?;
    family.validate(&theta0)?;
    let operator = custom.operator.build()?;
    operator.validate(family.dim(), family.max_jet_order())?;
    let mode = match &custom.assembly {
        AssemblySpec::Galerkin { quad, closed_form } => AssemblyMode::Galerkin {
            quad: quad.build()?,
            closed_form: *closed_form,
        },
        AssemblySpec::Collocation { points } => AssemblyMode::Collocation {
            points: points.build()?,
        },
    };
    let mk = |kinds: &[QuantityKind]| -> Result<Vec<ConservedQuantity>> {
        kinds
            .iter()
            .map(|&k| {
                let quad = quantity_quadrature(&mode, k, &family)?;
                ConservedQuantity::new(k, &family, &theta0, quad)
            })
            .collect()
    };
    let constraints = mk(&custom.constraints)?;
    let monitors = mk(&custom.monitors)?;
    let stepper = custom.stepper.build();
    stepper.validate(theta0.len())?;
    Ok(Scenario {
        id: ScenarioId::AdvectionDiffusion, // placeholder tag, unused for custom runs
        family,
        theta0,
        operator,
        mode,
        constraints,
        monitors,
        stepper,
        direct_ode: None,
        seed,
    })
}

/// Families without closed-form invariants need a quadrature rule; reuse the
/// assembly's rule when there is one, otherwise a generous truncated default.
fn quantity_quadrature(
    mode: &AssemblyMode,
    kind: QuantityKind,
    family: &AnsatzFamily,
) -> Result<Option<QuadratureRule>> {
    let closed_form = matches!(family, AnsatzFamily::GaussianMixture { .. })
        || matches!(family, AnsatzFamily::NlsWavepacket { .. })
            && matches!(
                kind,
                QuantityKind::NlsMass | QuantityKind::NlsHamiltonian
            );
    if closed_form {
        return Ok(None);
    }
    match mode {
        AssemblyMode::Galerkin { quad, .. } => Ok(Some(quad.clone())),
        AssemblyMode::Collocation { .. } => {
            Ok(Some(QuadratureRule::gauss_legendre_truncated(
                family.dim(),
                128,
                16.0,
            )?))
        }
    }
}
