//! Batch front-end: JSON experiment configs in, JSON/CSV/SVG artifacts out.
//!
//! [`execute`] is pure given the config and returns everything that goes to
//! disk, so reports can be compared byte for byte across thread counts. The
//! wall-clock block is attached afterwards under `metadata`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::gaussian_limits::{build_prelimit_ustat, ContinuousLimit, GaussianProcessSpec, StepMatrixFn};
use crate::graph::{self, Graph, GraphSampler, GraphSpec};
use crate::kernels::{KernelConfig, MeasureConfig};
use crate::mc_verify::{
    self, dominance, empirical_covariance, estimate_distances, random_functionals, rate_fit, GaussianSampler, PathSampler,
    Streams, UProcessSampler,
};
use crate::runs::{self, RunsSampler, RunsSpec};
use crate::stein_bounds::{self, Variant};
use crate::uprocess::{self, UComponent, UProcessSpec, WeightConfig};
use crate::{rng_for, stable_hash, Error};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_VIOLATION: i32 = 4;

/// Covariance entries may differ by this many combined standard errors.
pub const COVARIANCE_SE: f64 = 5.0;
pub const GRAPH_REGRESSION_TOL: f64 = 1e-12;
/// Relative tolerance for the U-process regression identity.
pub const UPROCESS_REGRESSION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Uprocess,
    Homsum,
    Runs,
    Graph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Simulate,
    Bound,
    VerifyCovariance,
    VerifyRegression,
    VerifyDistance,
    RateStudy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    #[default]
    Prelimit,
    Limit,
}

/// Run lengths, given as `"2,1"` or `[2, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunLengths {
    Text(String),
    List(Vec<usize>),
}

impl RunLengths {
    pub fn resolve(&self) -> crate::Result<Vec<usize>> {
        match self {
            RunLengths::Text(s) => RunsSpec::parse_rs(s),
            RunLengths::List(v) => Ok(v.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub weights: WeightConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelConfig>,
    /// Normalizer; defaults to the standard deviation at `t = 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Action>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rs: Option<RunLengths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<ComponentConfig>,
    /// Constant `phi` of the continuous limit, row-major.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit_phi: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ns: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functionals: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub common_random_numbers: bool,
    /// Output directory, overridden by `--out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

const DEFAULT_REPS: usize = 2000;
const DEFAULT_FUNCTIONALS: usize = 10;
const DEFAULT_TIMES: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

impl ExperimentConfig {
    pub fn reps(&self) -> usize {
        self.reps.unwrap_or(DEFAULT_REPS)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

fn cfg_err(e: Error) -> CliError {
    CliError::Config(e.to_string())
}

fn num_err(e: Error) -> CliError {
    CliError::Numerical(e.to_string())
}

/// Parse and validate; serde reports line and column of schema errors.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    validate(&cfg)?;
    Ok(cfg)
}

pub fn validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if cfg.action.is_none() {
        return Err(CliError::Config("missing action".into()));
    }
    let model = build_model(cfg, cfg.n)?;
    if let (Some(phi), Model::U(spec)) = (limit_phi(cfg)?, &model) {
        if phi.dim() != spec.dim() {
            return Err(CliError::Config(format!("limit_phi is {0}x{0}, process has d = {1}", phi.dim(), spec.dim())));
        }
    }
    if let Some(ns) = &cfg.ns {
        for &n in ns {
            build_model(cfg, n)?;
        }
    }
    if let Some(times) = &cfg.times {
        if times.is_empty() || times.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(CliError::Config("times must be nonempty and lie in [0, 1]".into()));
        }
    }
    Ok(())
}

/// A concrete model at one `n`.
#[derive(Debug, Clone)]
pub enum Model {
    U(UProcessSpec),
    Runs(RunsSpec),
    Graph(GraphSpec),
}

fn require_p(cfg: &ExperimentConfig) -> Result<f64, CliError> {
    cfg.p.ok_or_else(|| CliError::Config(format!("{:?} needs p", cfg.kind)))
}

pub fn build_model(cfg: &ExperimentConfig, n: usize) -> Result<Model, CliError> {
    match cfg.kind {
        Kind::Graph => Ok(Model::Graph(GraphSpec::new(n, require_p(cfg)?).map_err(cfg_err)?)),
        Kind::Runs => {
            let rs = cfg.rs.as_ref().ok_or_else(|| CliError::Config("runs needs rs".into()))?.resolve().map_err(cfg_err)?;
            Ok(Model::Runs(RunsSpec::new(n, require_p(cfg)?, rs).map_err(cfg_err)?))
        }
        Kind::Uprocess | Kind::Homsum => {
            let measure = cfg.measure.as_ref().ok_or_else(|| CliError::Config("missing measure".into()))?.build().map_err(cfg_err)?;
            if cfg.components.is_empty() {
                return Err(CliError::Config("need at least one component".into()));
            }
            if cfg.kind == Kind::Homsum {
                measure.check_standardized(1e-12).map_err(cfg_err)?;
            }
            let mut comps = Vec::new();
            for (i, c) in cfg.components.iter().enumerate() {
                let weights = c.weights.build(n).map_err(cfg_err)?;
                let kernel_cfg = match (cfg.kind, &c.kernel) {
                    (Kind::Homsum, None | Some(KernelConfig::Product)) => KernelConfig::Product,
                    (Kind::Homsum, Some(_)) => {
                        return Err(CliError::Config(format!("component {i}: homsum kernels are products")))
                    }
                    (_, Some(k)) => k.clone(),
                    (_, None) => return Err(CliError::Config(format!("component {i}: missing kernel"))),
                };
                let kernel = kernel_cfg.build(weights.order(), &measure).map_err(cfg_err)?;
                let sigma = match c.sigma {
                    Some(s) => s,
                    None => uprocess::variance_sigma(&kernel, &weights).map_err(cfg_err)?,
                };
                comps.push(UComponent { kernel, weights, sigma });
            }
            Ok(Model::U(UProcessSpec::new(n, measure, comps).map_err(cfg_err)?))
        }
    }
}

impl Model {
    pub fn n(&self) -> usize {
        match self {
            Model::U(s) => s.n(),
            Model::Runs(s) => s.n(),
            Model::Graph(s) => s.n(),
        }
    }

    pub fn discrete(&self) -> Box<dyn PathSampler> {
        match self {
            Model::U(s) => Box::new(UProcessSampler { label: "config".into(), spec: s.clone() }),
            Model::Runs(s) => Box::new(RunsSampler(s.clone())),
            Model::Graph(s) => Box::new(GraphSampler(*s)),
        }
    }

    pub fn gaussian(&self, target: Target, phi: Option<&StepMatrixFn>) -> Result<Box<dyn PathSampler>, CliError> {
        let label = format!("n={}", self.n());
        let spec = match (self, target) {
            (Model::U(s), Target::Prelimit) => GaussianProcessSpec::Ustat(build_prelimit_ustat(s).map_err(num_err)?),
            (Model::U(s), Target::Limit) => {
                let phi = phi.ok_or_else(|| CliError::Config("limit target needs limit_phi".into()))?;
                GaussianProcessSpec::Continuous(ContinuousLimit::new(phi, s.n()).map_err(cfg_err)?)
            }
            (Model::Runs(s), Target::Prelimit) => GaussianProcessSpec::RunsPrelimit(runs::RunsPrelimit::new(s)),
            (Model::Runs(s), Target::Limit) => GaussianProcessSpec::RunsLimit(runs::runs_limit_sampler(s).map_err(num_err)?),
            (Model::Graph(s), Target::Prelimit) => GaussianProcessSpec::GraphPrelimit(*s),
            (Model::Graph(s), Target::Limit) => GaussianProcessSpec::GraphLimit(*s),
        };
        Ok(Box::new(GaussianSampler::new(&label, spec)))
    }

    /// Bound on `|E g(Y) - E g(target)|` per unit certified norm.
    pub fn distance_bound(&self, target: Target, phi: Option<&StepMatrixFn>) -> Result<f64, CliError> {
        Ok(match (self, target) {
            (Model::U(s), Target::Prelimit) => stein_bounds::bound_weighted_pre(s, Variant::Sharp).map_err(num_err)?.total,
            (Model::U(s), Target::Limit) => {
                let phi = phi.ok_or_else(|| CliError::Config("limit target needs limit_phi".into()))?;
                stein_bounds::gammas_con(s, phi).map_err(num_err)?.alt_totals["M0"]
            }
            (Model::Runs(s), Target::Prelimit) => runs::runs_bound_pre(s).total,
            (Model::Runs(s), Target::Limit) => runs::runs_bound_con(s).total,
            (Model::Graph(s), Target::Prelimit) => graph::graph_bounds(s.n()).map_err(cfg_err)?.pre,
            (Model::Graph(s), Target::Limit) => graph::graph_bounds(s.n()).map_err(cfg_err)?.con,
        })
    }
}

fn limit_phi(cfg: &ExperimentConfig) -> Result<Option<StepMatrixFn>, CliError> {
    let Some(rows) = &cfg.limit_phi else { return Ok(None) };
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(CliError::Config("limit_phi must be a square matrix".into()));
    }
    Ok(Some(StepMatrixFn::constant(DMatrix::from_fn(d, d, |i, j| rows[i][j]))))
}

/// Everything an experiment produces, minus timing.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub result: Value,
    /// A verify check failed.
    pub violation: bool,
    /// `(file name, contents)` of CSV and SVG side outputs.
    pub artifacts: Vec<(String, String)>,
}

impl Execution {
    /// The comparable part of the report.
    pub fn report(&self, cfg: &ExperimentConfig) -> Value {
        json!({
            "config": cfg,
            "status": if self.violation { "violation" } else { "ok" },
            "result": self.result,
        })
    }
}

/// Run `cfg` on `threads` workers (global pool when `None`).
pub fn execute(cfg: &ExperimentConfig, threads: Option<usize>, emit_svg: bool) -> Result<Execution, CliError> {
    validate(cfg)?;
    mc_verify::with_threads(threads, || execute_inner(cfg, emit_svg)).map_err(cfg_err)?
}

fn execute_inner(cfg: &ExperimentConfig, emit_svg: bool) -> Result<Execution, CliError> {
    let model = build_model(cfg, cfg.n)?;
    let phi = limit_phi(cfg)?;
    match cfg.action.expect("validated") {
        Action::Simulate => simulate(cfg, &model),
        Action::Bound => bound(&model, phi.as_ref()),
        Action::VerifyCovariance => verify_covariance(cfg, &model, phi.as_ref()),
        Action::VerifyRegression => verify_regression(cfg, &model),
        Action::VerifyDistance => verify_distance(cfg, &model, phi.as_ref()),
        Action::RateStudy => rate_study(cfg, phi.as_ref(), emit_svg),
    }
}

fn simulate(cfg: &ExperimentConfig, model: &Model) -> Result<Execution, CliError> {
    let s = model.discrete();
    let path = s.sample(&mut rng_for(cfg.seed(), stable_hash(s.id().as_bytes()), 0));
    Ok(Execution {
        result: json!({
            "sampler": s.id(),
            "d": path.dim(),
            "n": path.grid(),
            "end": path.row(path.grid()),
            "sup_norm": path.sup_norm(),
        }),
        violation: false,
        artifacts: vec![("path.csv".into(), path.to_csv_string())],
    })
}

fn bound(model: &Model, phi: Option<&StepMatrixFn>) -> Result<Execution, CliError> {
    let result = match model {
        Model::U(s) => {
            let mut v = json!({
                "prelimit": stein_bounds::bound_weighted_pre(s, Variant::Simple).map_err(num_err)?,
                "prelimit_sharp": stein_bounds::bound_weighted_pre(s, Variant::Sharp).map_err(num_err)?,
            });
            if let Some(phi) = phi {
                v["limit"] = json!(stein_bounds::gammas_con(s, phi).map_err(num_err)?);
            }
            v
        }
        Model::Runs(s) => json!({
            "prelimit": runs::runs_bound_pre(s),
            "limit": runs::runs_bound_con(s),
        }),
        Model::Graph(s) => {
            let b = graph::graph_bounds(s.n()).map_err(cfg_err)?;
            json!({ "prelimit": b.pre, "limit": b.con, "multiplier": "M" })
        }
    };
    Ok(Execution { result, violation: false, artifacts: vec![] })
}

fn verify_covariance(cfg: &ExperimentConfig, model: &Model, phi: Option<&StepMatrixFn>) -> Result<Execution, CliError> {
    let times = cfg.times.clone().unwrap_or_else(|| DEFAULT_TIMES.to_vec());
    let target = cfg.target.unwrap_or_default();
    let a = model.discrete();
    let b = model.gaussian(target, phi)?;
    let ca = empirical_covariance(a.as_ref(), &times, cfg.reps(), cfg.seed()).map_err(num_err)?;
    let cb = empirical_covariance(b.as_ref(), &times, cfg.reps(), cfg.seed()).map_err(num_err)?;
    let (mut max_diff, mut max_z) = (0.0f64, 0.0f64);
    let mut csv = String::from("row,col,cov_a,cov_b,se_a,se_b\n");
    for i in 0..ca.cov.nrows() {
        for j in 0..ca.cov.ncols() {
            let diff = (ca.cov[(i, j)] - cb.cov[(i, j)]).abs();
            let se = ca.se[(i, j)].hypot(cb.se[(i, j)]);
            max_diff = max_diff.max(diff);
            let z = if se > 0.0 { diff / se } else if diff > 0.0 { f64::INFINITY } else { 0.0 };
            max_z = max_z.max(z);
            let _ = writeln!(csv, "{i},{j},{},{},{},{}", ca.cov[(i, j)], cb.cov[(i, j)], ca.se[(i, j)], cb.se[(i, j)]);
        }
    }
    let violation = max_z > COVARIANCE_SE;
    Ok(Execution {
        result: json!({
            "samplers": [a.id(), b.id()],
            "times": times,
            "reps": cfg.reps(),
            "max_abs_diff": max_diff,
            "max_z": if max_z.is_finite() { json!(max_z) } else { json!("inf") },
            "threshold_se": COVARIANCE_SE,
            "matched": !violation,
        }),
        violation,
        artifacts: vec![("covariance.csv".into(), csv)],
    })
}

fn verify_regression(cfg: &ExperimentConfig, model: &Model) -> Result<Execution, CliError> {
    let seed = cfg.seed();
    match model {
        Model::Graph(s) => {
            let n = s.n();
            let pairs = n * (n - 1) / 2;
            let graphs: Vec<Graph> = if n <= 5 {
                (0..1u64 << pairs).map(|bits| Graph::from_bits(n, bits)).collect()
            } else if n <= 12 {
                let mut rng = rng_for(seed, stable_hash(b"graph-regression"), 0);
                (0..cfg.reps.unwrap_or(100)).map(|_| Graph::random(n, s.p(), &mut rng)).collect()
            } else {
                return Err(CliError::Config("graph regression check needs n <= 12".into()));
            };
            let (mut edge, mut two_star) = (0.0f64, 0.0f64);
            for g in &graphs {
                let r = graph::graph_regression_residual(s, g).map_err(num_err)?;
                edge = edge.max(r.edge);
                two_star = two_star.max(r.two_star);
            }
            let violation = edge > GRAPH_REGRESSION_TOL || two_star > GRAPH_REGRESSION_TOL;
            Ok(Execution {
                result: json!({
                    "configurations": graphs.len(),
                    "exhaustive": n <= 5,
                    "max_edge_residual": edge,
                    "max_two_star_residual": two_star,
                    "tolerance": GRAPH_REGRESSION_TOL,
                }),
                violation,
                artifacts: vec![],
            })
        }
        Model::U(s) => {
            let (worst, draws) = uprocess_regression(s, cfg)?;
            Ok(Execution {
                result: json!({ "draws": draws, "max_relative_residual": worst, "tolerance": UPROCESS_REGRESSION_TOL }),
                violation: worst > UPROCESS_REGRESSION_TOL,
                artifacts: vec![],
            })
        }
        Model::Runs(s) => {
            let dec = runs::runs_decompose(s).map_err(num_err)?;
            let (worst, draws) = uprocess_regression(&dec.uspec, cfg)?;
            let mut end = 0.0f64;
            let mut rng = rng_for(seed, stable_hash(b"runs-decomposition"), 0);
            for _ in 0..draws {
                let xi = runs::draw_trials(s, &mut rng);
                end = end.max(dec.reconstruction_residual(&xi).map_err(num_err)?.1);
            }
            let violation = worst > UPROCESS_REGRESSION_TOL || end > UPROCESS_REGRESSION_TOL;
            Ok(Execution {
                result: json!({
                    "draws": draws,
                    "max_relative_residual": worst,
                    "max_end_reconstruction_residual": end,
                    "tolerance": UPROCESS_REGRESSION_TOL,
                }),
                violation,
                artifacts: vec![],
            })
        }
    }
}

/// Worst `residual / (1 + sup |Y|)` over random samples.
fn uprocess_regression(s: &UProcessSpec, cfg: &ExperimentConfig) -> Result<(f64, usize), CliError> {
    if s.measure().atoms().is_none() {
        return Err(CliError::Config("regression check needs a finite measure".into()));
    }
    let lambda = uprocess::lambda_weighted(s);
    let draws = cfg.reps.unwrap_or(50);
    let mut rng = rng_for(cfg.seed(), stable_hash(b"uprocess-regression"), 0);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let x = s.draw_sample(&mut rng);
        let y = s.evaluate_path(&x).map_err(num_err)?;
        let r = uprocess::regression_residual(s, &x, &lambda).map_err(num_err)?;
        worst = worst.max(r / (1.0 + y.sup_norm()));
    }
    Ok((worst, draws))
}

fn verify_distance(cfg: &ExperimentConfig, model: &Model, phi: Option<&StepMatrixFn>) -> Result<Execution, CliError> {
    let target = cfg.target.unwrap_or_default();
    let a = model.discrete();
    let b = model.gaussian(target, phi)?;
    let bound = model.distance_bound(target, phi)?;
    let gs = random_functionals(a.dim(), cfg.functionals.unwrap_or(DEFAULT_FUNCTIONALS), cfg.seed()).map_err(num_err)?;
    let streams = if cfg.common_random_numbers { Streams::Common } else { Streams::Independent };
    let est = estimate_distances(a.as_ref(), b.as_ref(), &gs, cfg.reps(), cfg.seed(), streams).map_err(num_err)?;
    let checks: Vec<_> = est.iter().zip(&gs).map(|(e, g)| dominance(e, g, bound)).collect();
    let violation = checks.iter().any(|c| !c.dominated);
    Ok(Execution {
        result: json!({
            "samplers": [a.id(), b.id()],
            "bound_per_norm": bound,
            "reps": cfg.reps(),
            "checks": checks,
            "functionals": gs.iter().map(|g| g.id()).collect::<Vec<_>>(),
        }),
        violation,
        artifacts: vec![],
    })
}

fn rate_study(cfg: &ExperimentConfig, phi: Option<&StepMatrixFn>, emit_svg: bool) -> Result<Execution, CliError> {
    let ns = cfg.ns.clone().ok_or_else(|| CliError::Config("rate-study needs ns".into()))?;
    let target = cfg.target.unwrap_or(match cfg.kind {
        Kind::Graph | Kind::Runs => Target::Limit,
        Kind::Uprocess | Kind::Homsum => Target::Prelimit,
    });
    let streams = if cfg.common_random_numbers { Streams::Common } else { Streams::Independent };
    let mut csv = String::from("n,functional,estimate,se,bound\n");
    let (mut bounds, mut worst) = (Vec::new(), Vec::new());
    let mut rows = Vec::new();
    for &n in &ns {
        let model = build_model(cfg, n)?;
        let a = model.discrete();
        let b = model.gaussian(target, phi)?;
        let bound = model.distance_bound(target, phi)?;
        let gs = random_functionals(a.dim(), cfg.functionals.unwrap_or(DEFAULT_FUNCTIONALS), cfg.seed()).map_err(num_err)?;
        let est = estimate_distances(a.as_ref(), b.as_ref(), &gs, cfg.reps(), cfg.seed(), streams).map_err(num_err)?;
        for (k, e) in est.iter().enumerate() {
            let _ = writeln!(csv, "{n},{k},{},{},{bound}", e.estimate, e.standard_error);
        }
        let top = est.iter().map(|e| e.estimate).fold(0.0, f64::max);
        bounds.push(bound);
        worst.push(top);
        rows.push(json!({ "n": n, "bound": bound, "max_estimate": top }));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let bound_fit = rate_fit(&xs, &bounds).map_err(num_err)?;
    // estimates can be exactly zero, in which case no fit is reported
    let estimate_fit = rate_fit(&xs, &worst).ok();
    let mut artifacts = vec![("rate.csv".into(), csv)];
    if emit_svg {
        let mut series = vec![("bound", bounds.clone(), bound_fit.slope)];
        if let Some(f) = estimate_fit {
            series.push(("estimate", worst.clone(), f.slope));
        }
        artifacts.push(("rate.svg".into(), loglog_svg(&xs, &series)));
    }
    Ok(Execution {
        result: json!({
            "target": target,
            "rows": rows,
            "bound_fit": bound_fit,
            "estimate_fit": estimate_fit,
        }),
        violation: false,
        artifacts,
    })
}

/// Log-log polylines with axes and one slope label per series.
pub fn loglog_svg(xs: &[f64], series: &[(&str, Vec<f64>, f64)]) -> String {
    let (w, h, m) = (480.0, 320.0, 50.0);
    let lx: Vec<f64> = xs.iter().map(|x| x.log10()).collect();
    let ly: Vec<f64> = series.iter().flat_map(|s| s.1.iter().map(|v| v.log10())).collect();
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) }
    };
    let (x0, x1) = span(&lx);
    let (y0, y1) = span(&ly);
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let colors = ["#1f77b4", "#d62728", "#2ca02c"];
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - m, w - m, h - m);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12">log10 n</text>"#, w / 2.0, h - 15.0);
    for (k, (name, vals, slope)) in series.iter().enumerate() {
        let pts: Vec<String> = lx.iter().zip(vals).map(|(x, v)| format!("{:.2},{:.2}", px(*x), py(v.log10()))).collect();
        let c = colors[k % colors.len()];
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" fill="{c}">{name}: slope {slope:.3}</text>"#, m + 10.0, m - 20.0 + 15.0 * k as f64);
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Parser)]
#[command(name = "stein-fclt", version, about = "Bounds and Monte Carlo checks for functional CLTs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub emit_svg: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw one path.
    Simulate(Common),
    /// Evaluate the explicit bounds.
    Bound(Common),
    /// Covariance, regression or distance checks; exits 4 on a violation.
    Verify(Common),
    /// Bounds and distances over a range of n.
    Rate(Common),
    /// Random-graph shortcuts that need no config file.
    Graph {
        #[command(subcommand)]
        action: GraphAction,
    },
}

#[derive(Debug, Args, Clone)]
pub struct GraphArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum GraphAction {
    Simulate(GraphArgs),
    Bounds(GraphArgs),
    /// Regression identities for `n <= 12`, bound dominance otherwise.
    Verify(GraphArgs),
}

fn allowed(cmd: &str, a: Action) -> bool {
    matches!(
        (cmd, a),
        ("simulate", Action::Simulate)
            | ("bound", Action::Bound)
            | ("rate", Action::RateStudy)
            | ("verify", Action::VerifyCovariance | Action::VerifyRegression | Action::VerifyDistance)
    )
}

fn load(common: &Common, cmd: &str) -> Result<ExperimentConfig, CliError> {
    let path = common.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(obj) = value.as_object_mut() {
        let default = match cmd {
            "simulate" => "simulate",
            "bound" => "bound",
            "rate" => "rate-study",
            _ => "verify-distance",
        };
        obj.entry("action").or_insert_with(|| json!(default));
    }
    let mut cfg = parse_config(&value.to_string()).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let action = cfg.action.expect("validated");
    if !allowed(cmd, action) {
        return Err(CliError::Config(format!("action {action:?} does not belong to `{cmd}`")));
    }
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if common.reps.is_some() {
        cfg.reps = common.reps;
    }
    Ok(cfg)
}

fn graph_config(action: Action, a: &GraphArgs) -> ExperimentConfig {
    ExperimentConfig {
        kind: Kind::Graph,
        action: Some(action),
        n: a.n,
        p: Some(a.p),
        rs: None,
        measure: None,
        components: vec![],
        limit_phi: None,
        reps: a.reps,
        seed: a.seed,
        times: None,
        ns: None,
        functionals: None,
        target: None,
        common_random_numbers: false,
        out: None,
    }
}

/// Write `report.json` and side outputs; returns written paths.
pub fn write_outputs(dir: &Path, report: &Value, exec: &Execution) -> Result<Vec<PathBuf>, CliError> {
    let io = |e: std::io::Error| CliError::Numerical(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut written = Vec::new();
    let path = dir.join("report.json");
    let text = serde_json::to_string_pretty(report).map_err(|e| CliError::Numerical(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(io)?;
    written.push(path);
    for (name, body) in &exec.artifacts {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(io)?;
        written.push(p);
    }
    Ok(written)
}

/// Full report with the timing block attached.
pub fn finish(cfg: &ExperimentConfig, exec: &Execution, threads: Option<usize>, started: Instant) -> Value {
    let mut report = exec.report(cfg);
    report["metadata"] = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "threads": threads.unwrap_or_else(rayon::current_num_threads),
        "wall_time_s": started.elapsed().as_secs_f64(),
    });
    report
}

/// Drop the `metadata` block for determinism comparisons.
pub fn strip_metadata(mut report: Value) -> Value {
    if let Some(obj) = report.as_object_mut() {
        obj.remove("metadata");
    }
    report
}

fn run_one(cfg: ExperimentConfig, out: Option<PathBuf>, threads: Option<usize>, emit_svg: bool) -> Result<i32, CliError> {
    let started = Instant::now();
    let exec = execute(&cfg, threads, emit_svg)?;
    let report = finish(&cfg, &exec, threads, started);
    let dir = out.or_else(|| cfg.out.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("."));
    let written = write_outputs(&dir, &report, &exec)?;
    println!("{}", serde_json::to_string_pretty(&report["result"]).unwrap_or_default());
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(if exec.violation { EXIT_VIOLATION } else { EXIT_OK })
}

/// Entry point shared by the binary; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Simulate(c) => load(&c, "simulate").and_then(|cfg| run_one(cfg, c.out, c.threads, c.emit_svg)),
        Command::Bound(c) => load(&c, "bound").and_then(|cfg| run_one(cfg, c.out, c.threads, c.emit_svg)),
        Command::Verify(c) => load(&c, "verify").and_then(|cfg| run_one(cfg, c.out, c.threads, c.emit_svg)),
        Command::Rate(c) => load(&c, "rate").and_then(|cfg| run_one(cfg, c.out, c.threads, c.emit_svg)),
        Command::Graph { action } => {
            let (act, a) = match action {
                GraphAction::Simulate(a) => (Action::Simulate, a),
                GraphAction::Bounds(a) => (Action::Bound, a),
                GraphAction::Verify(a) if a.n <= 12 => (Action::VerifyRegression, a),
                GraphAction::Verify(a) => (Action::VerifyDistance, a),
            };
            let cfg = graph_config(act, &a);
            validate(&cfg).and_then(|_| run_one(cfg, a.out.clone(), a.threads, false))
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph_cfg(action: &str, n: usize) -> ExperimentConfig {
        parse_config(&format!(r#"{{"kind":"graph","action":"{action}","n":{n},"p":0.5,"reps":200,"seed":4}}"#)).unwrap()
    }

    #[test]
    fn unknown_field_is_rejected_with_position() {
        let e = parse_config("{\n\"kind\":\"graph\",\n\"n\":5,\n\"bogus\":1}").unwrap_err();
        assert_eq!(e.exit_code(), EXIT_CONFIG);
        assert!(e.to_string().contains("line 4"), "{e}");
        assert!(parse_config("{not json").is_err());
    }

    #[test]
    fn rs_accepts_string_or_list() {
        let a = parse_config(r#"{"kind":"runs","action":"bound","n":50,"p":0.5,"rs":"2,1"}"#).unwrap();
        let b = parse_config(r#"{"kind":"runs","action":"bound","n":50,"p":0.5,"rs":[2,1]}"#).unwrap();
        assert_eq!(a.rs.unwrap().resolve().unwrap(), b.rs.unwrap().resolve().unwrap());
        assert!(parse_config(r#"{"kind":"runs","action":"bound","n":50,"p":0.5}"#).is_err());
    }

    #[test]
    fn runs_bound_matches_module() {
        let cfg = parse_config(r#"{"kind":"runs","action":"bound","n":1000,"p":0.5,"rs":"2,1"}"#).unwrap();
        let exec = execute(&cfg, Some(1), false).unwrap();
        let direct = runs::runs_bound_pre(&RunsSpec::new(1000, 0.5, vec![2, 1]).unwrap());
        assert_eq!(exec.result["prelimit"]["total"].as_f64().unwrap(), direct.total);
        for k in ["gamma1", "gamma2"] {
            assert_eq!(exec.result["prelimit"]["terms"][k].as_f64().unwrap(), direct.get(k));
        }
        assert!(exec.result["limit"]["terms"]["gamma3"].as_f64().is_some());
    }

    #[test]
    fn graph_regression_small() {
        let exec = execute(&graph_cfg("verify-regression", 5), None, false).unwrap();
        assert!(!exec.violation);
        assert!(exec.result["max_edge_residual"].as_f64().unwrap() <= 1e-12);
        assert_eq!(exec.result["configurations"].as_u64().unwrap(), 1024);
    }

    #[test]
    fn homsum_regression_and_bound() {
        let text = r#"{"kind":"homsum","action":"verify-regression","n":6,"measure":{"sampler":"rademacher"},
            "components":[{"weights":{"builtin":"complete","p":1}},{"weights":{"builtin":"banded","p":2,"width":2}}],"reps":5}"#;
        let cfg = parse_config(text).unwrap();
        let exec = execute(&cfg, None, false).unwrap();
        assert!(!exec.violation, "{}", exec.result);
        let mut b = cfg.clone();
        b.action = Some(Action::Bound);
        let r = execute(&b, None, false).unwrap();
        assert!(r.result["prelimit_sharp"]["total"].as_f64().unwrap() <= r.result["prelimit"]["total"].as_f64().unwrap());
    }

    #[test]
    fn simulate_writes_csv() {
        let exec = execute(&graph_cfg("simulate", 10), None, false).unwrap();
        assert!(exec.artifacts[0].1.starts_with("t,v1,v2\n"));
        assert_eq!(exec.result["n"].as_u64().unwrap(), 10);
    }

    #[test]
    fn verify_is_thread_independent() {
        let cfg = graph_cfg("verify-distance", 20);
        let a = execute(&cfg, Some(1), false).unwrap();
        let b = execute(&cfg, Some(4), false).unwrap();
        assert_eq!(serde_json::to_string(&a.report(&cfg)).unwrap(), serde_json::to_string(&b.report(&cfg)).unwrap());
    }

    #[test]
    fn rate_study_emits_svg() {
        let mut cfg = graph_cfg("rate-study", 10);
        cfg.ns = Some(vec![10, 20, 40]);
        cfg.functionals = Some(2);
        let exec = execute(&cfg, None, true).unwrap();
        let svg = &exec.artifacts.iter().find(|a| a.0 == "rate.svg").unwrap().1;
        assert!(svg.contains("<polyline") && svg.contains("slope"));
        assert!(exec.result["bound_fit"]["slope"].as_f64().unwrap() < 0.0);
    }

    #[test]
    fn bad_model_is_a_config_error() {
        let e = parse_config(r#"{"kind":"graph","action":"bound","n":2,"p":0.5}"#).unwrap_err();
        assert_eq!(e.exit_code(), EXIT_CONFIG);
        let e = parse_config(r#"{"kind":"homsum","action":"bound","n":5,"measure":{"atoms":[[0.0,0.5],[1.0,0.5]]},"components":[{"weights":{"builtin":"complete","p":1}}]}"#).unwrap_err();
        assert_eq!(e.exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::Numerical("x".into()).exit_code(), EXIT_NUMERICAL);
    }

    #[test]
    fn metadata_is_stripped() {
        let cfg = graph_cfg("bound", 20);
        let exec = execute(&cfg, None, false).unwrap();
        let full = finish(&cfg, &exec, Some(2), Instant::now());
        assert!(full.get("metadata").is_some());
        assert_eq!(strip_metadata(full), exec.report(&cfg));
    }
}
