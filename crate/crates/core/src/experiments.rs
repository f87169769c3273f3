//! The five experiment suites, their configuration and their reports.
//!
//! A [`RunConfig`] comes from a flat `key = value` file (see [`RunConfig::parse`])
//! with command-line overrides on top. Every suite returns an
//! [`ExperimentOutcome`]: a JSON summary, one CSV table and the list of
//! acceptance checks it evaluated.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{NeckError, Result};
use crate::exec::Execution;
use crate::grid::CylinderGrid;
use crate::harmap::{interpolating_init, moebius_family, pohozaev_profile, solve_dirichlet, HeatFlowConfig};
use crate::harmonic::{random_bounded_harmonic, verify_bounds};
use crate::jacobi::{ni_experiment, JacobiConfig};
use crate::neck::{
    bootstrap, center_map, classify_limit, conformal_residuals, moreover_residual, Classification, LimitCoefficients,
    NeckCoefficients,
};
use crate::poisson::{solve_weighted_with, PoissonConfig, RandomSource};
use crate::target::RoundSphere;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    PoissonUniformity,
    HarmonicBounds,
    NeckExpansion,
    CenterClassification,
    NiTable,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::PoissonUniformity,
        Experiment::HarmonicBounds,
        Experiment::NeckExpansion,
        Experiment::CenterClassification,
        Experiment::NiTable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::PoissonUniformity => "poisson-uniformity",
            Experiment::HarmonicBounds => "harmonic-bounds",
            Experiment::NeckExpansion => "neck-expansion",
            Experiment::CenterClassification => "center-classification",
            Experiment::NiTable => "ni-table",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Experiment::PoissonUniformity => "observed weighted constant of the neck Poisson solver across cylinder lengths",
            Experiment::HarmonicBounds => "coefficient and remainder bounds for random bounded harmonic functions",
            Experiment::NeckExpansion => "neck coefficients, remainder uniformity and the q relation along the Moebius family",
            Experiment::CenterClassification => "rescaled center map, conformality residuals and limit classification",
            Experiment::NiTable => "index plus nullity along the family against the limit and the bubble",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = NeckError;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| NeckError::InvalidArgument(format!("unknown experiment '{s}'")))
    }
}

/// Where the neck-expansion suite takes its maps from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NeckSource {
    /// The analytic family sampled on the neck grid.
    Analytic,
    /// The Dirichlet problem on the neck with the family's traces, solved by heat flow.
    Dirichlet,
}

impl FromStr for NeckSource {
    type Err = NeckError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(NeckSource::Analytic),
            "dirichlet" => Ok(NeckSource::Dirichlet),
            _ => Err(NeckError::InvalidArgument(format!("unknown neck source '{s}'"))),
        }
    }
}

/// One experiment run. Empty lists and `None` mean "use the suite default".
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    /// Axial samples per unit length of `t` (the axial spacing is `1/grid_nt`).
    pub grid_nt: Option<usize>,
    pub grid_ntheta: Option<usize>,
    pub lambdas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Half-lengths `L` for poisson-uniformity.
    pub lengths: Vec<f64>,
    /// Random draws per setting.
    pub samples: Option<usize>,
    pub seed: u64,
    pub source: NeckSource,
    /// Inner radius of the gluing / neck region.
    pub delta: Option<f64>,
    /// Half-width of the center-map window.
    pub window: Option<f64>,
    pub m_lowest: Option<usize>,
    pub tolerances: BTreeMap<String, f64>,
    pub output_path: PathBuf,
    #[serde(skip)]
    pub exec: Execution,
}

impl RunConfig {
    pub fn new(experiment: Experiment) -> Self {
        RunConfig {
            experiment,
            grid_nt: None,
            grid_ntheta: None,
            lambdas: vec![],
            alphas: vec![],
            lengths: vec![],
            samples: None,
            seed: 1,
            source: NeckSource::Dirichlet,
            delta: None,
            window: None,
            m_lowest: None,
            tolerances: BTreeMap::new(),
            output_path: PathBuf::from("out"),
            exec: Execution::Parallel,
        }
    }

    /// Parse a flat `key = value` file; `#` starts a comment.
    ///
    /// Keys: `experiment`, `grid.nt`, `grid.ntheta`, `lambdas`, `alpha`, `L`,
    /// `samples`, `seed`, `source`, `delta`, `M`, `m_lowest`, `out` and
    /// `tol.<check>`. Lists are comma separated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut experiment = None;
        let mut pairs = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| NeckError::Config(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "experiment" {
                experiment = Some(v.parse::<Experiment>().map_err(|e| NeckError::Config(e.to_string()))?);
            } else {
                pairs.push((no + 1, k.to_string(), v.to_string()));
            }
        }
        let mut cfg = RunConfig::new(experiment.ok_or_else(|| NeckError::Config("missing key 'experiment'".into()))?);
        for (no, k, v) in pairs {
            cfg.set(&k, &v).map_err(|e| NeckError::Config(format!("line {no}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set one key, as in the config file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| NeckError::Config(format!("'{key}': cannot parse '{v}'")))
        }
        fn list(key: &str, v: &str) -> Result<Vec<f64>> {
            v.split(',').map(|x| num(key, x.trim())).collect()
        }
        match key {
            "experiment" => self.experiment = value.parse().map_err(|e: NeckError| NeckError::Config(e.to_string()))?,
            "grid.nt" => self.grid_nt = Some(num(key, value)?),
            "grid.ntheta" => self.grid_ntheta = Some(num(key, value)?),
            "lambdas" => self.lambdas = list(key, value)?,
            "alpha" => self.alphas = list(key, value)?,
            "L" => self.lengths = list(key, value)?,
            "samples" => self.samples = Some(num(key, value)?),
            "seed" => self.seed = num(key, value)?,
            "source" => self.source = value.parse().map_err(|e: NeckError| NeckError::Config(e.to_string()))?,
            "delta" => self.delta = Some(num(key, value)?),
            "M" => self.window = Some(num(key, value)?),
            "m_lowest" => self.m_lowest = Some(num(key, value)?),
            "out" => self.output_path = PathBuf::from(value),
            k if k.starts_with("tol.") => {
                self.tolerances.insert(k[4..].to_string(), num(key, value)?);
            }
            _ => return Err(NeckError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NeckError::Config(m));
        if let Some((k, v)) = self.tolerances.iter().find(|(_, v)| !(**v > 0.0)) {
            return bad(format!("tolerance '{k}' must be positive, got {v}"));
        }
        if self.lambdas.windows(2).any(|w| w[1] >= w[0]) {
            return bad("lambdas must be strictly decreasing".into());
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return bad(format!("lambda {l} outside (0, 1)"));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 2.0)) {
            return bad(format!("alpha {a} outside (0, 2)"));
        }
        if let Some(l) = self.lengths.iter().find(|l| !(**l > 0.0)) {
            return bad(format!("L = {l} must be positive"));
        }
        if self.grid_nt == Some(0) || self.grid_ntheta.is_some_and(|n| n < 4) {
            return bad("grid.nt must be positive and grid.ntheta at least 4".into());
        }
        if self.samples == Some(0) || self.m_lowest == Some(0) {
            return bad("samples and m_lowest must be positive".into());
        }
        Ok(())
    }

    fn dt(&self, default: f64) -> f64 {
        self.grid_nt.map_or(default, |n| 1.0 / n as f64)
    }

    fn tol(&self, name: &str, default: f64) -> f64 {
        self.tolerances.get(name).copied().unwrap_or(default)
    }

    fn or<'a>(v: &'a [f64], default: &'a [f64]) -> &'a [f64] {
        if v.is_empty() {
            default
        } else {
            v
        }
    }
}

/// One acceptance check: `value` against `bound` in the stated direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub bound: f64,
    pub detail: String,
}

impl Check {
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            passed: value <= bound,
            value,
            bound,
            detail: format!("{value:.4e} <= {bound:.4e}"),
        }
    }

    pub fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            passed: value >= bound,
            value,
            bound,
            detail: format!("{value:.4e} >= {bound:.4e}"),
        }
    }

    pub fn holds(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.into(),
            passed,
            value: passed as u8 as f64,
            bound: 1.0,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutcome {
    pub experiment: Experiment,
    pub summary: Value,
    #[serde(skip)]
    pub csv: String,
    pub checks: Vec<Check>,
}

impl ExperimentOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failing(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// The summary with `passed` and the check list attached.
    pub fn summary_json(&self) -> Value {
        json!({
            "experiment": self.experiment.name(),
            "passed": self.passed(),
            "checks": self.checks,
            "failing": self.failing().iter().map(|c| c.name.clone()).collect::<Vec<_>>(),
            "results": self.summary,
        })
    }
}

fn spread(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    hi / lo
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn run(cfg: &RunConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    match cfg.experiment {
        Experiment::PoissonUniformity => poisson_uniformity(cfg),
        Experiment::HarmonicBounds => harmonic_bounds(cfg),
        Experiment::NeckExpansion => neck_expansion(cfg),
        Experiment::CenterClassification => center_classification(cfg),
        Experiment::NiTable => ni_table(cfg),
    }
}

/// Observed constants `sup|v|/η^α` of the weighted solver for random sources
/// of unit weighted norm, on `[−L, L]` with `λ = 1`.
pub fn poisson_uniformity(cfg: &RunConfig) -> Result<ExperimentOutcome> {
    let alphas = RunConfig::or(&cfg.alphas, &[0.5, 1.5]).to_vec();
    let lengths = RunConfig::or(&cfg.lengths, &[4.0, 8.0, 16.0, 32.0]).to_vec();
    let samples = cfg.samples.unwrap_or(10);
    let dt = cfg.dt(0.1);
    let nth = cfg.grid_ntheta.unwrap_or(8);
    let (spread_tol, res_tol) = (cfg.tol("spread", 2.0), cfg.tol("residual", 1e-8));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut jobs = Vec::new();
    for &alpha in &alphas {
        for s in 0..samples {
            jobs.push((alpha, s, RandomSource::new(3, &mut rng)));
        }
    }
    let pcfg = PoissonConfig {
        tolerance: res_tol,
        execution: Execution::Sequential,
    };
    let rows: Vec<Result<Vec<(f64, usize, f64, f64, f64)>>> = cfg.exec.map(jobs, |(alpha, s, src)| {
        lengths
            .iter()
            .map(|&l| {
                let g = CylinderGrid::with_spacing(-l, l, dt, nth, 1)?;
                let r = solve_weighted_with(&src.sample(&g, alpha, 1.0), alpha, 1.0, &pcfg)?;
                Ok((alpha, s, l, r.observed_constant, r.residual))
            })
            .collect()
    });
    let mut csv = String::from("alpha,source,L,observed_constant,residual\n");
    let mut worst_spread = 0.0f64;
    let mut worst_res = 0.0f64;
    let mut per = Vec::new();
    for r in rows {
        let r = r?;
        for &(a, s, l, c, res) in &r {
            csv.push_str(&format!("{a},{s},{l},{c:.12e},{res:.6e}\n"));
            worst_res = worst_res.max(res);
        }
        let consts: Vec<f64> = r.iter().map(|x| x.3).collect();
        let sp = spread(&consts);
        worst_spread = worst_spread.max(sp);
        per.push(json!({"alpha": r[0].0, "source": r[0].1, "constants": consts, "spread": sp}));
    }
    Ok(ExperimentOutcome {
        experiment: Experiment::PoissonUniformity,
        summary: json!({"alphas": alphas, "L": lengths, "samples": samples, "dt": dt, "n_theta": nth,
            "worst_spread": worst_spread, "worst_residual": worst_res, "per_source": per}),
        csv,
        checks: vec![
            Check::at_most("spread", worst_spread, spread_tol),
            Check::at_most("residual", worst_res, res_tol),
        ],
    })
}

/// Coefficient ratios and remainder decay exponents of random bounded
/// harmonic functions on `[−M, M]`.
pub fn harmonic_bounds(cfg: &RunConfig) -> Result<ExperimentOutcome> {
    let ms = RunConfig::or(&cfg.lengths, &[1.0, 2.0, 4.0]).to_vec();
    let samples = cfg.samples.unwrap_or(100);
    let dt = cfg.dt(0.05);
    let nth = cfg.grid_ntheta.unwrap_or(16);
    let (eps, slack) = (0.1, cfg.tol("exponent_slack", 0.05));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draws = Vec::new();
    for &m in &ms {
        let g = CylinderGrid::with_spacing(-m, m, dt, nth, 1)?;
        for s in 0..samples {
            draws.push((m, s, random_bounded_harmonic(&g, m, eps, 4, &mut rng).0));
        }
    }
    let rows: Vec<Result<Vec<(f64, usize, usize, f64, f64, f64)>>> = cfg.exec.map(draws, |(m, s, h)| {
        (0..2)
            .map(|k| {
                let r = verify_bounds(&h, m, eps, k)?;
                let e = r.remainder_exponent.unwrap_or(f64::INFINITY);
                Ok((m, s, k, r.max_coefficient_ratio(), r.b0_ratio, e))
            })
            .collect()
    });
    let mut csv = String::from("M,sample,k,max_ratio,b0_ratio,remainder_exponent\n");
    let (mut worst_ratio, mut worst_margin) = (0.0f64, f64::INFINITY);
    for r in rows {
        for (m, s, k, ratio, b0, e) in r? {
            csv.push_str(&format!("{m},{s},{k},{ratio:.6e},{b0:.6e},{e:.6}\n"));
            worst_ratio = worst_ratio.max(ratio);
            worst_margin = worst_margin.min(e - (k as f64 + 1.0));
        }
    }
    Ok(ExperimentOutcome {
        experiment: Experiment::HarmonicBounds,
        summary: json!({"M": ms, "samples_per_M": samples, "eps": eps, "worst_ratio": worst_ratio,
            "worst_exponent_margin": worst_margin}),
        csv,
        checks: vec![
            Check::at_most("coefficient_ratio", worst_ratio, 1.0),
            Check::at_least("remainder_exponent", worst_margin, -slack),
        ],
    })
}

/// Maps of the Möbius family on the neck `[log(λ/δ), log δ]`, from `source`.
pub fn neck_maps(
    lambdas: &[f64],
    delta: f64,
    dt: f64,
    nth: usize,
    source: NeckSource,
    exec: Execution,
) -> Result<Vec<(f64, crate::grid::Field, crate::grid::Field)>> {
    let s = RoundSphere::new(3);
    exec.map(lambdas.to_vec(), |lam| {
        let f = moebius_family(lam)?;
        let g = f.neck_grid(delta, dt, nth)?;
        let exact = f.sample(&g);
        let u = match source {
            NeckSource::Analytic => exact.clone(),
            NeckSource::Dirichlet => {
                let n = g.n_t;
                let (bot, top) = (exact.row(0).to_vec(), exact.row(n - 1).to_vec());
                let init = interpolating_init(&g, &bot, &top, &s);
                solve_dirichlet(&top, &bot, &s, &init, &HeatFlowConfig::semi_implicit())?.field
            }
        };
        Ok((lam, exact, u))
    })
    .into_iter()
    .collect()
}

/// Largest Pohozaev defect on rows at least four samples from the ends.
pub fn pohozaev_sup(u: &crate::grid::Field) -> f64 {
    let p = pohozaev_profile(u);
    let n = p.len();
    p[4.min(n)..n.saturating_sub(4)].iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn coefficient_error(nc: &NeckCoefficients, lc: &LimitCoefficients) -> f64 {
    [(&nc.a, &lc.a), (&nc.b, &lc.b), (&nc.c, &lc.c), (&nc.d, &lc.d)]
        .iter()
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Neck coefficients per λ, remainder uniformity, the q relation's decay and
/// the Pohozaev defect.
pub fn neck_expansion(cfg: &RunConfig) -> Result<ExperimentOutcome> {
    let lambdas = RunConfig::or(&cfg.lambdas, &[1e-2, 1e-3, 1e-4]).to_vec();
    let alpha0 = cfg.alphas.first().copied().unwrap_or(0.75);
    let delta = cfg.delta.unwrap_or(0.25);
    let dt = cfg.dt(0.05);
    let nth = cfg.grid_ntheta.unwrap_or(16);
    let maps = neck_maps(&lambdas, delta, dt, nth, cfg.source, cfg.exec)?;
    let s = RoundSphere::new(3);
    let fits: Vec<Result<NeckCoefficients>> = cfg.exec.map(maps.iter().collect(), |(lam, _, u)| bootstrap(u, &s, *lam, alpha0));
    let coeffs: Vec<NeckCoefficients> = fits.into_iter().collect::<Result<_>>()?;
    let residuals: Vec<f64> = coeffs.iter().map(moreover_residual).collect();
    let fitted = if lambdas.len() >= 2 && residuals.iter().all(|r| *r > 0.0) {
        log_log_slope(&lambdas, &residuals)
    } else {
        f64::NAN
    };
    let mut csv = String::from("lambda,|q|,moreover_residual,fitted_exponent\n");
    for (nc, r) in coeffs.iter().zip(&residuals) {
        csv.push_str(&format!("{:e},{:.6e},{:.6e},{:.6}\n", nc.lambda, norm(&nc.q), r, fitted));
    }
    let theorem_alpha = coeffs.last().map(|c| c.theorem_alpha()).unwrap_or(f64::NAN);
    let remainders: Vec<f64> = coeffs.iter().map(|c| c.remainder_weighted_norm).collect();
    let smallest = coeffs.last().unwrap();
    let exact_poh = maps.iter().map(|(_, e, _)| pohozaev_sup(e)).fold(0.0, f64::max);
    let solved_poh = maps.iter().map(|(_, _, u)| pohozaev_sup(u)).fold(0.0, f64::max);
    let mut checks = vec![
        Check::at_most("coefficients", coefficient_error(smallest, &LimitCoefficients::moebius()), cfg.tol("coefficients", 1e-2)),
        Check::at_most("remainder_spread", spread(&remainders), cfg.tol("spread", 2.0)),
        Check::at_least("moreover_exponent", fitted, 1.0 + theorem_alpha / 2.0 - 0.1),
        Check::at_most("pohozaev_analytic", exact_poh, cfg.tol("pohozaev_analytic", 1e-8)),
    ];
    if cfg.source == NeckSource::Dirichlet {
        checks.push(Check::at_most("pohozaev_solved", solved_poh, cfg.tol("pohozaev_solved", 1e-6)));
    }
    let q_const: Vec<f64> = coeffs.iter().map(|c| norm(&c.q) / c.lambda.sqrt()).collect();
    Ok(ExperimentOutcome {
        experiment: Experiment::NeckExpansion,
        summary: json!({
            "source": cfg.source, "delta": delta, "dt": dt, "n_theta": nth, "alpha0": alpha0,
            "theorem_alpha": theorem_alpha,
            "coefficients": coeffs,
            "moreover_residuals": residuals,
            "moreover_ratios": coeffs.iter().zip(&residuals).map(|(c, r)| r / c.lambda.powf(1.0 + theorem_alpha / 2.0)).collect::<Vec<_>>(),
            "fitted_exponent": fitted,
            "remainder_norms": remainders,
            "q_over_sqrt_lambda": q_const,
            "pohozaev_analytic": exact_poh,
            "pohozaev_solved": solved_poh,
        }),
        csv,
        checks,
    })
}

fn classification_json(c: &Classification) -> Value {
    json!({"label": c.label(), "detail": format!("{c:?}")})
}

/// Center map of the family at the smallest λ against its closed form, the
/// conformality residuals and the classification of the limits.
pub fn center_classification(cfg: &RunConfig) -> Result<ExperimentOutcome> {
    let lambda = cfg.lambdas.last().copied().unwrap_or(1e-4);
    let m = cfg.window.unwrap_or(3.0);
    let delta = cfg.delta.unwrap_or(0.25);
    let dt = cfg.dt(0.05);
    let nth = cfg.grid_ntheta.unwrap_or(16);
    let alpha0 = cfg.alphas.first().copied().unwrap_or(0.75);
    let ctol = cfg.tol("conformal", 1e-6);
    let (_, _, u) = neck_maps(&[lambda], delta, dt, nth, cfg.source, cfg.exec)?.remove(0);
    let nc = bootstrap(&u, &RoundSphere::new(3), lambda, alpha0)?;
    let cm = center_map(&u, &nc, m)?;
    let err = cm.closed_form_error();
    let comp = cm.component_errors();
    let analytic = LimitCoefficients::moebius();
    let witness = LimitCoefficients::catenoid_witness();
    let extracted = nc.limit();
    let r_an = conformal_residuals(&analytic);
    let r_wit = conformal_residuals(&witness);
    let r_ex = conformal_residuals(&extracted);
    let sup = |r: &[f64; 10]| r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let c_an = classify_limit(&analytic, ctol);
    let c_wit = classify_limit(&witness, ctol);
    let c_ex = classify_limit(&extracted, cfg.tol("classification_extracted", 1e-1));
    let mut csv = String::from("s,theta,component,v,closed_form\n");
    let d = cm.deviation();
    let g = &cm.v.grid;
    for i in (0..g.n_t).step_by(((g.n_t - 1) / 20).max(1)) {
        for j in 0..g.n_theta {
            for c in 0..3 {
                let k = d.index(i, j, c);
                csv.push_str(&format!("{:.4},{:.6},{c},{:.10e},{:.10e}\n", g.t(i), g.theta(j), cm.v.values[k], cm.v.values[k] - d.values[k]));
            }
        }
    }
    Ok(ExperimentOutcome {
        experiment: Experiment::CenterClassification,
        summary: json!({
            "lambda": lambda, "M": m, "source": cfg.source,
            "center_map_error": err, "component_errors": comp,
            "q_scaled": cm.q_scaled,
            "extracted_limit": {"q": extracted.q, "a": extracted.a, "b": extracted.b, "c": extracted.c, "d": extracted.d},
            "conformal_residuals": {"moebius": r_an, "catenoid_witness": r_wit, "extracted": r_ex},
            "classification": {"moebius": classification_json(&c_an), "catenoid_witness": classification_json(&c_wit),
                "extracted": classification_json(&c_ex)},
        }),
        csv,
        checks: vec![
            Check::at_most("center_map", err, cfg.tol("center_map", 0.05)),
            Check::at_most("conformal_residuals", sup(&r_an).max(sup(&r_wit)), ctol),
            Check::holds("moebius_opposite_orientation", c_an.label() == "opposite-orientation", c_an.label().into()),
            Check::holds("witness_catenoid", c_wit.label() == "catenoid", c_wit.label().into()),
        ],
    })
}

/// NI table of the Möbius family.
pub fn ni_table(cfg: &RunConfig) -> Result<ExperimentOutcome> {
    let lambdas = RunConfig::or(&cfg.lambdas, &[1e-2, 1e-3]).to_vec();
    let jc = JacobiConfig {
        dt: cfg.dt(0.1),
        n_theta: cfg.grid_ntheta.unwrap_or(16),
        exec: cfg.exec,
        ..JacobiConfig::default()
    };
    let fam = moebius_family(lambdas[0])?;
    let zero_tol = cfg.tolerances.get("zero").copied();
    let rep = ni_experiment(&fam, &lambdas, cfg.m_lowest.unwrap_or(12), zero_tol, cfg.delta.unwrap_or(0.2), &jc)?;
    let smallest = rep.rows.last().unwrap();
    let oracle_ok = rep
        .rows
        .iter()
        .all(|r| r.oracle_residual <= 1e-5 && r.oracle_rank == 10 && r.nullity >= 10);
    let sups: Vec<f64> = rep.rows.iter().filter_map(|r| r.neck_sup).collect();
    let mut checks = vec![
        Check::holds(
            "ni_inequality",
            rep.holds_at_smallest,
            format!("NI = {} <= {}", smallest.ni, rep.bound),
        ),
        Check::holds("bound_is_twelve", rep.bound == 12, format!("NI(u_inf) + NI(omega) = {}", rep.bound)),
        Check::holds(
            "nullity_oracle",
            oracle_ok,
            rep.rows
                .iter()
                .map(|r| format!("nul {} residual {:.2e} rank {}", r.nullity, r.oracle_residual, r.oracle_rank))
                .collect::<Vec<_>>()
                .join("; "),
        ),
        Check::at_least("gram_rank", smallest.gram_rank_sum as f64, smallest.l as f64),
        Check::holds("gram_trend", rep.gram_trend_nonincreasing, format!("{:?}", rep.rows.iter().map(|r| r.gram_defect).collect::<Vec<_>>())),
        Check::holds("rayleigh_floor", rep.rows.iter().all(|r| r.floor_holds), String::new()),
    ];
    if sups.len() >= 2 {
        checks.push(Check::at_most("neck_sup_spread", spread(&sups), cfg.tol("spread", 2.0)));
    }
    Ok(ExperimentOutcome {
        experiment: Experiment::NiTable,
        summary: serde_json::to_value(&rep)?,
        csv: rep.to_csv(),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_config() {
        let text = "# sweep\nexperiment = neck-expansion\nlambdas = 1e-2, 1e-3\ngrid.ntheta = 16\ntol.spread = 2.5\nsource = analytic\nout = /tmp/x\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.experiment, Experiment::NeckExpansion);
        assert_eq!(c.lambdas, vec![1e-2, 1e-3]);
        assert_eq!(c.grid_ntheta, Some(16));
        assert_eq!(c.tolerances["spread"], 2.5);
        assert_eq!(c.source, NeckSource::Analytic);
        assert_eq!(c.output_path, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "lambdas = 1e-2",
            "experiment = nope",
            "experiment = ni-table\nlambdas = 1e-3, 1e-2",
            "experiment = ni-table\ntol.zero = -1",
            "experiment = ni-table\nfoo = 1",
            "experiment = ni-table\nlambdas",
            "experiment = ni-table\ngrid.nt = x",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(NeckError::Config(_))), "{text}");
        }
    }

    #[test]
    fn names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
    }

    #[test]
    fn slope_of_a_power_law() {
        let x = [1e-2, 1e-3, 1e-4];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.7)).collect();
        assert!((log_log_slope(&x, &y) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn small_uniformity_run_is_deterministic() {
        let mut c = RunConfig::new(Experiment::PoissonUniformity);
        c.samples = Some(2);
        c.lengths = vec![4.0, 8.0];
        let a = run(&c).unwrap();
        c.exec = Execution::Sequential;
        let b = run(&c).unwrap();
        assert_eq!(a.csv, b.csv);
        assert!(a.passed(), "{:?}", a.failing());
        assert_eq!(a.csv.lines().count(), 1 + 2 * 2 * 2);
    }

    #[test]
    fn small_bounds_run() {
        let mut c = RunConfig::new(Experiment::HarmonicBounds);
        c.samples = Some(3);
        let out = run(&c).unwrap();
        assert!(out.passed(), "{:?}", out.failing());
    }
}
