//! Index and nullity along a bubbling family, against the limit and the bubble.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{NeckError, Result};
use crate::exec::Execution;
use crate::grid::CylinderGrid;
use crate::harmap::{moebius_family, BlowupFamily, MapKind, RationalMap};
use crate::jacobi::fields::holomorphic_jacobi_fields;
use crate::jacobi::metric::ConformalMetric;
use crate::jacobi::operator::{assemble_jacobi_with, JacobiOperator};
use crate::jacobi::spectrum::{calibrate_zero_tol, spectrum_with, EigenConfig, Spectrum, SpectrumReport};
use crate::target::RoundSphere;

/// Discretization of one Jacobi problem on `[t_lo − T_cap, t_hi + T_cap] × S¹`.
#[derive(Debug, Clone, Copy)]
pub struct JacobiConfig {
    pub t_cap: f64,
    pub dt: f64,
    pub n_theta: usize,
    /// The Richardson partner uses `coarsen · dt`.
    pub coarsen: f64,
    pub eigen: EigenConfig,
    pub exec: Execution,
}

impl Default for JacobiConfig {
    fn default() -> Self {
        JacobiConfig {
            t_cap: 10.0,
            dt: 0.1,
            n_theta: 16,
            coarsen: 2.0,
            eigen: EigenConfig::default(),
            exec: Execution::Parallel,
        }
    }
}

/// Spectrum of `J_u` for a rational `u` and its explicit kernel fields.
#[derive(Debug, Clone)]
pub struct JacobiRun {
    pub grid: CylinderGrid,
    pub operator: JacobiOperator,
    pub spectrum: Spectrum,
    pub coarse_eigenvalues: Vec<f64>,
    pub report: SpectrumReport,
    /// Largest flat residual of the explicit fields.
    pub oracle_residual: f64,
    pub oracle_rayleigh: Vec<f64>,
    /// Numerical rank of the explicit fields' mass Gram matrix.
    pub oracle_rank: usize,
    pub oracle_count: usize,
    /// Largest relative mass-norm part of an explicit field outside the computed kernel.
    pub kernel_capture: f64,
}

fn grid_for(t_lo: f64, t_hi: f64, dt: f64, n_theta: usize) -> Result<CylinderGrid> {
    CylinderGrid::with_spacing(t_lo, t_hi, dt, n_theta, 3)
}

fn assemble(map: &RationalMap, metric: &ConformalMetric, grid: &CylinderGrid) -> Result<JacobiOperator> {
    let u = map.field(grid);
    let (ut, uth) = map.gradient_fields(grid);
    let rho = metric.cylinder_factors(grid)?;
    assemble_jacobi_with(&u, &ut, &uth, &rho, &RoundSphere::new(3))
}

/// Symmetric Gram matrix eigenvalues, descending. Rank counts those above `cut`.
fn gram_rank(g: &DMatrix<f64>, cut: f64) -> usize {
    let scale = (0..g.nrows()).map(|i| g[(i, i)]).fold(0.0f64, f64::max);
    g.clone().symmetric_eigenvalues().iter().filter(|s| **s > cut * scale).count()
}

/// Run `J_u` for `u = St⁻¹ ∘ map` under `metric` on `[t_lo − T_cap, t_hi + T_cap]`.
pub fn jacobi_run(
    map: &RationalMap,
    metric: &ConformalMetric,
    t_lo: f64,
    t_hi: f64,
    m_lowest: usize,
    zero_tol: Option<f64>,
    cfg: &JacobiConfig,
) -> Result<JacobiRun> {
    let (a, b) = (t_lo - cfg.t_cap, t_hi + cfg.t_cap);
    let grid = grid_for(a, b, cfg.dt, cfg.n_theta)?;
    let coarse_grid = grid_for(a, b, cfg.coarsen * cfg.dt, cfg.n_theta)?;
    let op = assemble(map, metric, &grid)?;
    let provisional = 1e-6;
    let (sp, coarse) = {
        let jobs = cfg.exec.map(vec![true, false], |fine| -> Result<Spectrum> {
            if fine {
                spectrum_with(&op, m_lowest, provisional, &cfg.eigen)
            } else {
                let cop = assemble(map, metric, &coarse_grid)?;
                spectrum_with(&cop, m_lowest, provisional, &cfg.eigen)
            }
        });
        let mut it = jobs.into_iter();
        (it.next().unwrap()?, it.next().unwrap()?)
    };

    let fields = holomorphic_jacobi_fields(map, &grid);
    let oracle_residual = fields.iter().map(|f| op.residual(&f.values)).fold(0.0f64, f64::max);
    let oracle_rayleigh: Vec<f64> = fields.iter().map(|f| op.rayleigh_quotient(&f.values)).collect();

    // Richardson estimate of the fine error for an eighth-order method
    let order_gain = cfg.coarsen.powi(8) - 1.0;
    let coarse_scaled: Vec<f64> = sp
        .report
        .eigenvalues
        .iter()
        .zip(&coarse.report.eigenvalues)
        .map(|(f, c)| f + (c - f) / order_gain)
        .collect();
    let tol = match zero_tol {
        Some(t) => t,
        None => calibrate_zero_tol(&sp.report.eigenvalues, &coarse_scaled, &oracle_rayleigh),
    };
    let report = sp.report.recount(tol);
    if report.eigenvalues.last().is_some_and(|b| *b <= tol) {
        return Err(NeckError::InvalidArgument(format!(
            "all {m_lowest} computed eigenvalues are nonpositive; raise m_lowest"
        )));
    }

    let n = fields.len();
    let normed: Vec<Vec<f64>> = fields
        .iter()
        .map(|f| {
            let s = op.mass_inner(&f.values, &f.values).sqrt();
            f.values.iter().map(|x| x / s).collect()
        })
        .collect();
    let g = DMatrix::from_fn(n, n, |i, j| op.mass_inner(&normed[i], &normed[j]));
    let oracle_rank = gram_rank(&g, tol.sqrt());
    let kernel: Vec<&Vec<f64>> = sp
        .vectors
        .iter()
        .zip(&report.eigenvalues)
        .filter(|(_, b)| b.abs() <= tol)
        .map(|(v, _)| v)
        .collect();
    let kernel_capture = normed
        .iter()
        .map(|f| {
            let mut r = f.clone();
            for k in &kernel {
                let c = op.mass_inner(f, k);
                r.iter_mut().zip(k.iter()).for_each(|(x, y)| *x -= c * y);
            }
            op.mass_inner(&r, &r).sqrt()
        })
        .fold(0.0f64, f64::max);

    Ok(JacobiRun {
        grid,
        operator: op,
        coarse_eigenvalues: coarse.report.eigenvalues,
        report,
        spectrum: sp,
        oracle_residual,
        oracle_rayleigh,
        oracle_rank,
        oracle_count: n,
        kernel_capture,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NiRow {
    pub lambda: f64,
    pub index: usize,
    pub nullity: usize,
    pub ni: usize,
    pub bound_ni_sum: usize,
    pub inequality_holds: bool,
    pub gram_rank_sum: usize,
    pub l: usize,
    pub zero_tol: f64,
    pub first_positive: Option<f64>,
    pub oracle_residual: f64,
    pub oracle_rank: usize,
    pub kernel_capture: f64,
    /// `‖I − (ℳ₁ + ℳ₂)‖₂` over the nonpositive eigenfunctions.
    pub gram_defect: f64,
    pub gram_offdiag: f64,
    /// `sup √(Σ_k |v_k|²)` over `B_{1/16} ∖ B_{16λ}`; `None` when that annulus is empty.
    pub neck_sup: Option<f64>,
    pub floor_holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NiReport {
    pub rows: Vec<NiRow>,
    pub limit: SpectrumReport,
    pub bubble: SpectrumReport,
    pub bound: usize,
    /// `NI(u_λ) ≤ NI(u_∞) + NI(ω)` at the smallest λ.
    pub holds_at_smallest: bool,
    pub delta: f64,
    /// Gram defect does not grow as λ decreases.
    pub gram_trend_nonincreasing: bool,
}

impl NiReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,index,nullity,ni,bound_ni_sum,inequality_holds,gram_rank_sum,l\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:e},{},{},{},{},{},{},{}\n",
                r.lambda, r.index, r.nullity, r.ni, r.bound_ni_sum, r.inequality_holds, r.gram_rank_sum, r.l
            ));
        }
        s
    }
}

/// Gram blocks `ℳ₁ = ∫_{M∖B_δ} ⟨v_k, v_k'⟩ dV_g` and
/// `ℳ₂ = ∫_{B_{1/δ}} ⟨ṽ_k, ṽ_k'⟩ dV_{g_b}`, `ṽ(y) = v(λy)`.
pub fn gram_blocks(run: &JacobiRun, vectors: &[&Vec<f64>], lambda: f64, delta: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let g = &run.grid;
    let base = ConformalMetric::glued(0.0)?;
    let bubble = ConformalMetric::bubble();
    let (p, nth) = (g.vector_dim, g.n_theta);
    let wt = g.axial_weights();
    let l = vectors.len();
    let mut m1 = DMatrix::zeros(l, l);
    let mut m2 = DMatrix::zeros(l, l);
    let (outer, inner) = (delta.ln(), (lambda / delta).ln());
    for i in 0..g.n_t {
        let t = g.t(i);
        let (target, rho) = if t > outer {
            (&mut m1, base.cylinder_factor(t))
        } else if t < inner {
            (&mut m2, bubble.cylinder_factor(t - lambda.ln()))
        } else {
            continue;
        };
        let w = wt[i] * g.dtheta() * rho;
        let s = i * nth * p..(i + 1) * nth * p;
        for a in 0..l {
            for b in 0..=a {
                let d: f64 = vectors[a][s.clone()].iter().zip(&vectors[b][s.clone()]).map(|(x, y)| x * y).sum();
                target[(a, b)] += w * d;
                if a != b {
                    target[(b, a)] += w * d;
                }
            }
        }
    }
    Ok((m1, m2))
}

/// `sup √(Σ_k |v_k|²)` over rows with `t ∈ [lo, hi]`.
pub fn kernel_sup(run: &JacobiRun, vectors: &[&Vec<f64>], lo: f64, hi: f64) -> Option<f64> {
    if lo >= hi {
        return None;
    }
    let g = &run.grid;
    let (p, nth) = (g.vector_dim, g.n_theta);
    let mut best = 0.0f64;
    for i in 0..g.n_t {
        let t = g.t(i);
        if t < lo || t > hi {
            continue;
        }
        for j in 0..nth {
            let k = (i * nth + j) * p;
            let s: f64 = vectors.iter().map(|v| v[k..k + p].iter().map(|x| x * x).sum::<f64>()).sum();
            best = best.max(s.sqrt());
        }
    }
    Some(best)
}

/// Index and nullity of `u_λ` under `g_λ` for each λ, compared with `u_∞`
/// under `g` and `ω` under `g_b`.
pub fn ni_experiment(
    family: &BlowupFamily,
    lambdas: &[f64],
    m_lowest: usize,
    zero_tol: Option<f64>,
    delta: f64,
    cfg: &JacobiConfig,
) -> Result<NiReport> {
    if lambdas.is_empty() || lambdas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(NeckError::InvalidArgument("lambdas must be non-empty and strictly decreasing".into()));
    }
    let smallest = *lambdas.last().unwrap();
    if !(delta < 0.25 && lambdas[0] / delta < delta) {
        return Err(NeckError::InvalidArgument(format!(
            "delta = {delta} must satisfy λ/δ < δ < 1/4 for every λ"
        )));
    }
    let base = ConformalMetric::glued(0.0)?;
    let bubble_metric = ConformalMetric::bubble();
    let limit = jacobi_run(&family.u_infinity, &base, 0.0, 0.0, m_lowest, zero_tol, cfg)?;
    let bubble = jacobi_run(&family.bubble, &bubble_metric, 0.0, 0.0, m_lowest, zero_tol, cfg)?;
    let bound = limit.report.ni + bubble.report.ni;

    let runs: Vec<Result<(f64, JacobiRun)>> = cfg.exec.map(lambdas.to_vec(), |lambda| {
        let fam = family_at(family, lambda)?;
        let metric = ConformalMetric::glued(lambda)?;
        let run = jacobi_run(&fam.u_lambda, &metric, lambda.ln(), 0.0, m_lowest, zero_tol, cfg)?;
        Ok((lambda, run))
    });
    let mut rows = Vec::new();
    for r in runs {
        let (lambda, run) = r?;
        let rep = &run.report;
        let nonpos: Vec<&Vec<f64>> = run
            .spectrum
            .vectors
            .iter()
            .zip(&rep.eigenvalues)
            .filter(|(_, b)| **b <= rep.zero_tol)
            .map(|(v, _)| v)
            .collect();
        let l = nonpos.len();
        let (m1, m2) = gram_blocks(&run, &nonpos, lambda, delta)?;
        let cut = rep.zero_tol.sqrt();
        let gram_rank_sum = gram_rank(&m1, cut) + gram_rank(&m2, cut);
        let sum = &m1 + &m2;
        let defect = (DMatrix::identity(l, l) - &sum).symmetric_eigenvalues().iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let mut off = 0.0f64;
        for a in 0..l {
            for b in 0..l {
                if a != b {
                    off = off.max(sum[(a, b)].abs());
                }
            }
        }
        rows.push(NiRow {
            lambda,
            index: rep.index,
            nullity: rep.nullity,
            ni: rep.ni,
            bound_ni_sum: bound,
            inequality_holds: rep.ni <= bound,
            gram_rank_sum,
            l,
            zero_tol: rep.zero_tol,
            first_positive: rep.first_positive(),
            oracle_residual: run.oracle_residual,
            oracle_rank: run.oracle_rank,
            kernel_capture: run.kernel_capture,
            gram_defect: defect,
            gram_offdiag: off,
            neck_sup: kernel_sup(&run, &nonpos, (16.0 * lambda).ln(), (1.0f64 / 16.0).ln()),
            floor_holds: rep.floor_holds(),
        });
    }
    let holds_at_smallest = rows.iter().find(|r| r.lambda == smallest).is_some_and(|r| r.inequality_holds);
    let gram_trend_nonincreasing = rows.windows(2).all(|w| w[1].gram_defect <= w[0].gram_defect * (1.0 + 1e-9));
    Ok(NiReport {
        rows,
        limit: limit.report,
        bubble: bubble.report,
        bound,
        holds_at_smallest,
        delta,
        gram_trend_nonincreasing,
    })
}

/// The member of `family` at another λ. Custom families exist at one λ only.
fn family_at(family: &BlowupFamily, lambda: f64) -> Result<BlowupFamily> {
    match family.kind {
        MapKind::SumPole => moebius_family(lambda),
        MapKind::CustomRational if lambda == family.lambda => Ok(family.clone()),
        MapKind::CustomRational => Err(NeckError::InvalidArgument(format!(
            "custom family is fixed at lambda = {}, cannot evaluate at {lambda}",
            family.lambda
        ))),
    }
}
