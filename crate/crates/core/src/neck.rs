//! Neck expansion: the bootstrap from `u = p + O(η^α)` to
//! `u = p + qt + ae^t cosθ + be^t sinθ + cλe^{-t}cosθ + dλe^{-t}sinθ + O(η^{1+α})`,
//! the rescaled center map and the conformality relations of its limit.

use serde::{Deserialize, Serialize};

use crate::grid::{CylinderGrid, Field};
use crate::harmonic::{expand_about, HarmonicExpansion};
use crate::poisson::{nudge_alpha, solve_weighted_with, PoissonConfig};
use crate::target::TargetManifold;
use crate::{eta_weight, weighted_sup_norm, NeckError, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `A(u)(∇̃u, ∇̃u)`.
pub fn nonlinearity(u: &Field, target: &dyn TargetManifold) -> Field {
    let ut = u.t_derivative(1);
    let uth = u.theta_derivative(1);
    let g = &u.grid;
    let mut out = Field::zeros(g);
    for i in 0..g.n_t {
        for j in 0..g.n_theta {
            let y = u.point(i, j);
            let a = target.second_fundamental_form(y, ut.point(i, j), ut.point(i, j));
            let b = target.second_fundamental_form(y, uth.point(i, j), uth.point(i, j));
            for (c, o) in out.point_mut(i, j).iter_mut().enumerate() {
                *o = a[c] + b[c];
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    /// Half-width of the fitting window about `½ log λ`; `None` uses the
    /// largest window inside the grid.
    pub window: Option<f64>,
    pub max_mode: usize,
    /// `C` in the check `|q| ≤ C (√λ)^{2α}`; inputs exceeding ten times the
    /// bound are rejected as non-harmonic.
    pub q_constant: f64,
    /// A stage whose weighted remainder exceeds this is reported as divergent.
    pub divergence_bound: f64,
    pub poisson: PoissonConfig,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            window: None,
            max_mode: 3,
            q_constant: 10.0,
            divergence_bound: 1e6,
            poisson: PoissonConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    /// Exponent used for the Poisson solve, `2α`.
    pub alpha: f64,
    pub q_norm: f64,
    pub q_bound: f64,
    pub poisson_residual: f64,
    /// sup |u − expansion| / η^{2α}.
    pub remainder_weighted_norm: f64,
}

/// Theorem-style neck coefficients at one λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeckCoefficients {
    pub lambda: f64,
    /// Final remainder exponent, in (1, 2).
    pub alpha: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    #[serde(rename = "remainder_norm")]
    pub remainder_weighted_norm: f64,
    pub moreover_ratio: f64,
    #[serde(skip)]
    pub stages: Vec<StageReport>,
}

impl NeckCoefficients {
    pub fn dim(&self) -> usize {
        self.p.len()
    }

    /// `p + qt + ae^t cosθ + be^t sinθ + cλe^{-t}cosθ + dλe^{-t}sinθ`.
    pub fn evaluate_into(&self, t: f64, theta: f64, out: &mut [f64]) {
        let (ep, em) = (t.exp(), self.lambda * (-t).exp());
        let (cs, sn) = (theta.cos(), theta.sin());
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.p[k]
                + self.q[k] * t
                + (self.a[k] * ep + self.c[k] * em) * cs
                + (self.b[k] * ep + self.d[k] * em) * sn;
        }
    }

    pub fn sample(&self, grid: &CylinderGrid) -> Field {
        Field::from_fn(&grid.with_vector_dim(self.dim()), |t, th, o| self.evaluate_into(t, th, o))
    }

    /// Exponent of Theorem 1.1's remainder `O(η^{1+α})`, i.e. `alpha − 1`.
    pub fn theorem_alpha(&self) -> f64 {
        self.alpha - 1.0
    }

    /// Limit coefficients `(q/√λ, a, b, c, d)`.
    pub fn limit(&self) -> LimitCoefficients {
        let s = self.lambda.sqrt();
        LimitCoefficients {
            q: self.q.iter().map(|v| v / s).collect(),
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c.clone(),
            d: self.d.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `| |q|² − 2λ(a·c + b·d) |`.
pub fn moreover_residual(nc: &NeckCoefficients) -> f64 {
    (norm2(&nc.q) - 2.0 * nc.lambda * (dot(&nc.a, &nc.c) + dot(&nc.b, &nc.d))).abs()
}

/// The t-form coefficients of an expansion in `s = t − ½ log λ`.
fn t_form(exp: &HarmonicExpansion, lambda: f64) -> (Vec<f64>, Vec<f64>, [Vec<f64>; 4]) {
    let p_dim = exp.dim();
    let half_log = 0.5 * lambda.ln();
    let sq = lambda.sqrt();
    let p: Vec<f64> = (0..p_dim).map(|k| exp.a0[k] - exp.b0[k] * half_log).collect();
    let q = exp.b0.clone();
    let m1 = exp.mode(1);
    let pick = |f: &dyn Fn(&crate::harmonic::ModeCoefficients) -> &Vec<f64>| -> Vec<f64> {
        m1.map_or(vec![0.0; p_dim], |m| f(m).iter().map(|v| v / sq).collect())
    };
    let a = pick(&|m| &m.a);
    let b = pick(&|m| &m.b);
    let c = pick(&|m| &m.c);
    let d = pick(&|m| &m.d);
    (p, q, [a, b, c, d])
}

fn largest_window(grid: &CylinderGrid, center: f64) -> Result<f64> {
    let m = (center - grid.t_min).min(grid.t_max - center);
    if m <= 2.0 * grid.dt() {
        return Err(NeckError::WindowOutsideGrid {
            lo: center,
            hi: center,
        });
    }
    Ok(m)
}

/// Run the bootstrap with default settings.
pub fn bootstrap(u: &Field, target: &dyn TargetManifold, lambda: f64, alpha0: f64) -> Result<NeckCoefficients> {
    bootstrap_with(u, target, lambda, alpha0, &BootstrapConfig::default())
}

/// Repeated Poisson/harmonic splitting `u = h + v`, `Δ̃v = A(u)(∇̃u,∇̃u)`, doubling
/// the exponent each stage until it lies in (1, 2).
pub fn bootstrap_with(
    u: &Field,
    target: &dyn TargetManifold,
    lambda: f64,
    alpha0: f64,
    cfg: &BootstrapConfig,
) -> Result<NeckCoefficients> {
    if !(alpha0 > 0.0 && alpha0 < 1.0) {
        return Err(NeckError::InvalidArgument(format!("alpha0 must lie in (0, 1), got {alpha0}")));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(NeckError::InvalidArgument(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    let g = &u.grid;
    let center = 0.5 * lambda.ln();
    let m = match cfg.window {
        Some(m) => m,
        None => largest_window(g, center)?,
    };
    let f = nonlinearity(u, target);
    let mut alpha = alpha0;
    let mut stages = Vec::new();
    let mut stage = 0;
    loop {
        stage += 1;
        let two_alpha = nudge_alpha(2.0 * alpha);
        let sol = solve_weighted_with(&f, two_alpha, lambda, &cfg.poisson).map_err(|e| NeckError::BootstrapDiverged {
            stage,
            reason: e.to_string(),
        })?;
        let h = u - &sol.solution;
        let exp = expand_about(&h, center, m, cfg.max_mode).map_err(|e| NeckError::BootstrapDiverged {
            stage,
            reason: e.to_string(),
        })?;
        let (p, q, [a, b, c, d]) = t_form(&exp, lambda);
        let q_norm = norm2(&q).sqrt();
        let q_bound = cfg.q_constant * lambda.sqrt().powf(2.0 * alpha.min(1.0));
        if q_norm > 10.0 * q_bound {
            return Err(NeckError::BootstrapDiverged {
                stage,
                reason: format!("|q| = {q_norm:.3e} exceeds ten times its bound {q_bound:.3e}; input is not harmonic"),
            });
        }
        let nc = NeckCoefficients {
            lambda,
            alpha: two_alpha,
            p,
            q,
            a,
            b,
            c,
            d,
            remainder_weighted_norm: 0.0,
            moreover_ratio: 0.0,
            stages: Vec::new(),
        };
        // modes 0 and 1 carry the expansion only once 2α > 1
        let remainder = if two_alpha > 1.0 {
            u - &nc.sample(g)
        } else {
            let mut zero_mode = nc.clone();
            for v in [&mut zero_mode.a, &mut zero_mode.b, &mut zero_mode.c, &mut zero_mode.d] {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
            u - &zero_mode.sample(g)
        };
        let (lo, hi) = crate::harmonic::window_rows(g, center, m)?;
        let rem = weighted_sup_norm(&remainder.restrict(lo, hi)?, two_alpha, lambda);
        stages.push(StageReport {
            stage,
            alpha: two_alpha,
            q_norm,
            q_bound,
            poisson_residual: sol.residual,
            remainder_weighted_norm: rem,
        });
        if !rem.is_finite() || rem > cfg.divergence_bound {
            return Err(NeckError::BootstrapDiverged {
                stage,
                reason: format!("weighted remainder {rem:.3e}"),
            });
        }
        if two_alpha > 1.0 {
            let mut nc = nc;
            nc.remainder_weighted_norm = rem;
            nc.moreover_ratio = moreover_residual(&nc) / lambda.powf(1.0 + 0.5 * (two_alpha - 1.0));
            nc.stages = stages;
            return Ok(nc);
        }
        alpha = two_alpha;
    }
}

/// Limit coefficients `(q_∞, a_∞, b_∞, c_∞, d_∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCoefficients {
    pub q: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

impl LimitCoefficients {
    /// `q_∞s + ae^s cosθ + be^s sinθ + ce^{-s}cosθ + de^{-s}sinθ`.
    pub fn evaluate_into(&self, s: f64, theta: f64, out: &mut [f64]) {
        let (ep, em) = (s.exp(), (-s).exp());
        let (cs, sn) = (theta.cos(), theta.sin());
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.q[k] * s + (self.a[k] * ep + self.c[k] * em) * cs + (self.b[k] * ep + self.d[k] * em) * sn;
        }
    }

    /// `(∂_s v, ∂_θ v)` of the closed form.
    pub fn gradient(&self, s: f64, theta: f64) -> (Vec<f64>, Vec<f64>) {
        let (ep, em) = (s.exp(), (-s).exp());
        let (cs, sn) = (theta.cos(), theta.sin());
        let p = self.q.len();
        let ds = (0..p)
            .map(|k| self.q[k] + (self.a[k] * ep - self.c[k] * em) * cs + (self.b[k] * ep - self.d[k] * em) * sn)
            .collect();
        let dth = (0..p)
            .map(|k| -(self.a[k] * ep + self.c[k] * em) * sn + (self.b[k] * ep + self.d[k] * em) * cs)
            .collect();
        (ds, dth)
    }

    /// The analytic limit of the Möbius family.
    pub fn moebius() -> Self {
        LimitCoefficients {
            q: vec![0.0; 3],
            a: vec![2.0, 0.0, 0.0],
            b: vec![0.0, 2.0, 0.0],
            c: vec![2.0, 0.0, 0.0],
            d: vec![0.0, -2.0, 0.0],
        }
    }

    /// `a = c = e₁`, `b = d = e₂`, `q = 2e₃`: the catenoid.
    pub fn catenoid_witness() -> Self {
        LimitCoefficients {
            q: vec![0.0, 0.0, 2.0],
            a: vec![1.0, 0.0, 0.0],
            b: vec![0.0, 1.0, 0.0],
            c: vec![1.0, 0.0, 0.0],
            d: vec![0.0, 1.0, 0.0],
        }
    }
}

/// The rescaled center map on `[−M, M] × S¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterMap {
    /// Grid coordinate is `s = t − ½ log λ`.
    pub v: Field,
    pub q_scaled: Vec<f64>,
    pub limit_coefficients: LimitCoefficients,
    pub m: f64,
}

impl CenterMap {
    /// `v` minus the closed form of the limit coefficients.
    pub fn deviation(&self) -> Field {
        let lc = &self.limit_coefficients;
        let closed = Field::from_fn(&self.v.grid, |s, th, out| lc.evaluate_into(s, th, out));
        &self.v - &closed
    }

    pub fn closed_form_error(&self) -> f64 {
        self.deviation().sup_norm()
    }

    /// Sup of the deviation in each component.
    pub fn component_errors(&self) -> Vec<f64> {
        let d = self.deviation();
        let p = d.dim();
        (0..p)
            .map(|c| d.values.iter().skip(c).step_by(p).fold(0.0f64, |m, v| m.max(v.abs())))
            .collect()
    }

    /// `C (√λ)^{α−1} e^{(1+α)M}` with the theorem exponent `α`.
    pub fn expected_bound(&self, constant: f64, lambda: f64, alpha: f64) -> f64 {
        constant * lambda.sqrt().powf(alpha - 1.0) * ((1.0 + alpha) * self.m).exp()
    }
}

/// `v(s,θ) = (u(s + ½ log λ, θ) − (p + q·½ log λ)) / √λ` on `[−M, M]`.
pub fn center_map(u: &Field, nc: &NeckCoefficients, m: f64) -> Result<CenterMap> {
    let lambda = nc.lambda;
    let c = 0.5 * lambda.ln();
    let (lo, hi) = crate::harmonic::window_rows(&u.grid, c, m)?;
    let win = u.restrict(lo, hi)?;
    let sq = lambda.sqrt();
    let shift: Vec<f64> = (0..nc.dim()).map(|k| nc.p[k] + nc.q[k] * c).collect();
    let mut grid = win.grid.clone();
    grid.t_min -= c;
    grid.t_max -= c;
    let values = win
        .values
        .chunks(nc.dim())
        .flat_map(|pt| pt.iter().zip(&shift).map(|(v, s)| (v - s) / sq).collect::<Vec<_>>())
        .collect();
    Ok(CenterMap {
        v: Field::from_values(&grid, values)?,
        q_scaled: nc.q.iter().map(|v| v / sq).collect(),
        limit_coefficients: nc.limit(),
        m,
    })
}

/// `(q·a, q·b, q·c, q·d, |q|² − 2(a·c + b·d), a·d − b·c, |a|² − |b|², |c|² − |d|², a·b, c·d)`.
pub fn conformal_residuals(lc: &LimitCoefficients) -> [f64; 10] {
    let (q, a, b, c, d) = (&lc.q, &lc.a, &lc.b, &lc.c, &lc.d);
    [
        dot(q, a),
        dot(q, b),
        dot(q, c),
        dot(q, d),
        norm2(q) - 2.0 * (dot(a, c) + dot(b, d)),
        dot(a, d) - dot(b, c),
        norm2(a) - norm2(b),
        norm2(c) - norm2(d),
        dot(a, b),
        dot(c, d),
    ]
}

/// `|q|² − 4(a·c + b·d)`: the alternative normalization of the q-relation.
pub fn factor_four_residual(lc: &LimitCoefficients) -> f64 {
    norm2(&lc.q) - 4.0 * (dot(&lc.a, &lc.c) + dot(&lc.b, &lc.d))
}

/// Max over the grid of `| |∂_s v|² − |∂_θ v|² |` and `|∂_s v·∂_θ v − (a·d − b·c)|`
/// for the closed form.
pub fn pointwise_conformality(lc: &LimitCoefficients, grid: &CylinderGrid) -> (f64, f64) {
    let det = dot(&lc.a, &lc.d) - dot(&lc.b, &lc.c);
    let mut worst = (0.0f64, 0.0f64);
    for i in 0..grid.n_t {
        for j in 0..grid.n_theta {
            let (ds, dth) = lc.gradient(grid.t(i), grid.theta(j));
            worst.0 = worst.0.max((norm2(&ds) - norm2(&dth)).abs());
            worst.1 = worst.1.max((dot(&ds, &dth) - det).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Classification {
    NonConformal { worst_residual: f64 },
    Degenerate,
    /// `q = 0`; `orientation` is `(a·c)(b·d) − (a·d)(b·c)`, negative for
    /// opposite orientations.
    OppositeOrientation { orientation: f64 },
    /// `q ≠ 0`, `a = μc`, `b = μd`, `μ > 0`.
    Catenoid { ratio: f64 },
    /// `q ≠ 0` but the pairs are not positively proportional.
    ConjectureViolation { ratio: f64, mismatch: f64 },
}

impl Classification {
    pub fn label(&self) -> &'static str {
        match self {
            Classification::NonConformal { .. } => "non-conformal",
            Classification::Degenerate => "degenerate",
            Classification::OppositeOrientation { .. } => "opposite-orientation",
            Classification::Catenoid { .. } => "catenoid",
            Classification::ConjectureViolation { .. } => "conjecture-violation",
        }
    }
}

/// Relative tolerance deciding `q = 0`.
pub const Q_ZERO_TOLERANCE: f64 = 1e-6;

pub fn classify_limit(lc: &LimitCoefficients, tol: f64) -> Classification {
    let worst = conformal_residuals(lc).iter().fold(0.0f64, |m, r| m.max(r.abs()));
    if worst > tol {
        return Classification::NonConformal { worst_residual: worst };
    }
    let (a, b, c, d) = (&lc.a, &lc.b, &lc.c, &lc.d);
    let scale = [a, b, c, d].iter().fold(0.0f64, |m, v| m.max(norm2(v).sqrt()));
    if (norm2(a) + norm2(b)) * (norm2(c) + norm2(d)) <= tol * scale.powi(4).max(f64::MIN_POSITIVE) {
        return Classification::Degenerate;
    }
    if norm2(&lc.q).sqrt() <= Q_ZERO_TOLERANCE * scale {
        let orientation = dot(a, c) * dot(b, d) - dot(a, d) * dot(b, c);
        return Classification::OppositeOrientation { orientation };
    }
    let denom = norm2(c) + norm2(d);
    let ratio = (dot(a, c) + dot(b, d)) / denom;
    let mismatch = a
        .iter()
        .zip(c)
        .chain(b.iter().zip(d))
        .map(|(x, y)| (x - ratio * y).powi(2))
        .sum::<f64>()
        .sqrt();
    if ratio > 0.0 && mismatch <= tol.sqrt() * scale {
        Classification::Catenoid { ratio }
    } else {
        Classification::ConjectureViolation { ratio, mismatch }
    }
}

/// η-weight of the remainder at every axial sample (diagnostic).
pub fn remainder_profile(u: &Field, nc: &NeckCoefficients) -> Vec<f64> {
    let r = u - &nc.sample(&u.grid);
    let g = &u.grid;
    (0..g.n_t)
        .map(|i| {
            r.row(i).iter().fold(0.0f64, |m, v| m.max(v.abs())) / eta_weight(g.t(i), nc.lambda).powf(nc.alpha)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmap::moebius_family;
    use crate::target::{FlatSpace, RoundSphere};

    fn moebius_coefficients(lambda: f64) -> NeckCoefficients {
        let f = moebius_family(lambda).unwrap();
        let g = f.neck_grid(0.25, 0.05, 16).unwrap();
        bootstrap(&f.sample(&g), &RoundSphere::new(3), lambda, 0.75).unwrap()
    }

    #[test]
    fn moebius_coefficients_match_linearization() {
        let nc = moebius_coefficients(1e-4);
        let lc = LimitCoefficients::moebius();
        for (got, want) in [(&nc.a, &lc.a), (&nc.b, &lc.b), (&nc.c, &lc.c), (&nc.d, &lc.d)] {
            for k in 0..3 {
                assert!((got[k] - want[k]).abs() <= 1e-2, "{got:?} vs {want:?}");
            }
        }
        assert!(norm2(&nc.q).sqrt() <= 1e-4);
        assert!(nc.alpha > 1.0 && nc.alpha < 2.0);
        assert!((nc.p[2] + 1.0).abs() < 1e-2);
        let json: serde_json::Value = serde_json::from_str(&nc.to_json().unwrap()).unwrap();
        for key in ["lambda", "alpha", "p", "q", "a", "b", "c", "d", "remainder_norm", "moreover_ratio"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn coefficient_error_shrinks_with_lambda() {
        let err = |lam: f64| {
            let nc = moebius_coefficients(lam);
            (nc.a[0] - 2.0).abs().max((nc.c[0] - 2.0).abs())
        };
        let (e3, e4) = (err(1e-3), err(1e-4));
        assert!(e4 < 0.2 * e3, "{e3} {e4}");
    }

    #[test]
    fn constant_input_gives_constant_coefficients() {
        let g = CylinderGrid::with_spacing(-6.0, -1.0, 0.05, 16, 3).unwrap();
        let p0 = [0.0, 0.6, 0.8];
        let u = Field::from_fn(&g, |_, _, o| o.copy_from_slice(&p0));
        let nc = bootstrap(&u, &RoundSphere::new(3), 1e-3, 0.5).unwrap();
        for k in 0..3 {
            assert!((nc.p[k] - p0[k]).abs() < 1e-12);
            for v in [&nc.q, &nc.a, &nc.b, &nc.c, &nc.d] {
                assert!(v[k].abs() < 1e-10);
            }
        }
    }

    #[test]
    fn flat_harmonic_input_is_recovered_exactly() {
        let lambda = 1e-2;
        let g = CylinderGrid::with_spacing(-4.0, -0.6, 0.05, 16, 2).unwrap();
        let (p, a, c) = ([0.3, -0.1], [1.5, 0.2], [-0.7, 0.4]);
        let u = Field::from_fn(&g, |t, th, o| {
            for k in 0..2 {
                o[k] = p[k] + (a[k] * t.exp() + c[k] * lambda * (-t).exp()) * th.cos();
            }
        });
        let nc = bootstrap(&u, &FlatSpace { p: 2 }, lambda, 0.6).unwrap();
        for k in 0..2 {
            assert!((nc.p[k] - p[k]).abs() < 1e-10);
            assert!((nc.a[k] - a[k]).abs() < 1e-10);
            assert!((nc.c[k] - c[k]).abs() < 1e-10);
            assert!(nc.q[k].abs() < 1e-10 && nc.b[k].abs() < 1e-10 && nc.d[k].abs() < 1e-10);
        }
        // idempotence: the expansion itself returns the same coefficients
        let again = bootstrap(&nc.sample(&g), &FlatSpace { p: 2 }, lambda, 0.6).unwrap();
        for k in 0..2 {
            assert!((again.a[k] - nc.a[k]).abs() < 1e-12 && (again.c[k] - nc.c[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn large_q_trips_the_check() {
        let lambda = 1e-2;
        let g = CylinderGrid::with_spacing(-4.0, -0.6, 0.05, 16, 2).unwrap();
        let u = Field::from_fn(&g, |t, _, o| {
            o[0] = 50.0 * t;
            o[1] = 0.0;
        });
        let err = bootstrap(&u, &FlatSpace { p: 2 }, lambda, 0.6).unwrap_err();
        assert!(matches!(err, NeckError::BootstrapDiverged { .. }));
    }

    fn from_limit(lc: &LimitCoefficients, lambda: f64) -> NeckCoefficients {
        NeckCoefficients {
            lambda,
            alpha: 1.5,
            p: vec![0.1, 0.2, 0.3],
            q: lc.q.iter().map(|v| v * lambda.sqrt()).collect(),
            a: lc.a.clone(),
            b: lc.b.clone(),
            c: lc.c.clone(),
            d: lc.d.clone(),
            remainder_weighted_norm: 0.0,
            moreover_ratio: 0.0,
            stages: vec![],
        }
    }

    #[test]
    fn moreover_residual_examples() {
        let analytic = from_limit(&LimitCoefficients::moebius(), 1e-2);
        assert!(moreover_residual(&analytic) <= 1e-8);
        // the catenoid satisfies the factor-2 relation exactly
        assert_eq!(moreover_residual(&from_limit(&LimitCoefficients::catenoid_witness(), 0.25)), 0.0);
        let mut z = analytic.clone();
        z.a = vec![1.0, 0.0, 0.0];
        z.c = vec![0.0, 1.0, 0.0];
        z.b = vec![0.0; 3];
        z.d = vec![0.0; 3];
        assert_eq!(moreover_residual(&z), 0.0);
        // numerical coefficients: the residual is O(λ²) since a·c + b·d = O(λ)
        let r2 = moreover_residual(&moebius_coefficients(1e-2));
        let r3 = moreover_residual(&moebius_coefficients(1e-3));
        assert!((r2 / r3).log10() >= 1.15, "{r2} {r3}");
    }

    #[test]
    fn center_map_of_the_family() {
        let lambda = 1e-4;
        let nc = moebius_coefficients(lambda);
        let f = moebius_family(lambda).unwrap();
        let g = f.neck_grid(0.25, 0.05, 16).unwrap();
        let m = 1.0;
        let cm = center_map(&f.sample(&g), &nc, m).unwrap();
        let errs = cm.component_errors();
        // the deviation is the |ζ|² correction of St⁻¹: O(√λ e^{3M}) in the
        // first two components and O(√λ e^{2M}) in the third
        let sq = lambda.sqrt();
        assert!(errs[0] <= 4.0 * sq * (3.0 * m).exp(), "{errs:?}");
        assert!(errs[1] <= 4.0 * sq * (3.0 * m).exp(), "{errs:?}");
        assert!(errs[2] <= 4.0 * sq * (2.0 * m).exp(), "{errs:?}");
        assert!(cm.q_scaled.iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn center_map_of_an_exact_expansion() {
        let lambda = 1e-2;
        let g = CylinderGrid::with_spacing(-6.0, 1.0, 0.05, 16, 3).unwrap();
        let nc = from_limit(&LimitCoefficients::catenoid_witness(), lambda);
        let cm = center_map(&nc.sample(&g), &nc, 2.0).unwrap();
        assert!(cm.closed_form_error() < 1e-10);
        let u0 = Field::from_fn(&g, |_, _, o| o.copy_from_slice(&[0.1, 0.2, 0.3]));
        let mut zero = nc.clone();
        zero.q = vec![0.0; 3];
        let cz = center_map(&u0, &zero, 2.0).unwrap();
        assert!(cz.v.sup_norm() < 1e-14);
        assert!(center_map(&u0, &zero, 10.0).is_err());
    }

    #[test]
    fn conformal_residual_witnesses() {
        let r = conformal_residuals(&LimitCoefficients::moebius());
        assert!(r.iter().all(|v| v.abs() <= 1e-12));
        let r = conformal_residuals(&LimitCoefficients::catenoid_witness());
        assert!(r.iter().all(|v| *v == 0.0));
        let bad = LimitCoefficients {
            q: vec![0.0; 3],
            a: vec![1.0, 0.0, 0.0],
            b: vec![0.0, 2.0, 0.0],
            c: vec![0.0; 3],
            d: vec![0.0; 3],
        };
        assert_eq!(conformal_residuals(&bad)[6], -3.0);
        assert_eq!(classify_limit(&bad, 1e-6).label(), "non-conformal");
    }

    #[test]
    fn pointwise_conformality_of_closed_forms() {
        let g = CylinderGrid::with_spacing(-2.0, 2.0, 0.1, 16, 3).unwrap();
        for lc in [LimitCoefficients::moebius(), LimitCoefficients::catenoid_witness()] {
            let (a, b) = pointwise_conformality(&lc, &g);
            assert!(a < 1e-12 && b < 1e-12);
        }
    }

    #[test]
    fn classification_examples() {
        match classify_limit(&LimitCoefficients::moebius(), 1e-6) {
            Classification::OppositeOrientation { orientation } => assert!(orientation < 0.0),
            other => panic!("{other:?}"),
        }
        match classify_limit(&LimitCoefficients::catenoid_witness(), 1e-6) {
            Classification::Catenoid { ratio } => assert!((ratio - 1.0).abs() < 1e-14),
            other => panic!("{other:?}"),
        }
        let mut deg = LimitCoefficients::moebius();
        deg.c = vec![0.0; 3];
        deg.d = vec![0.0; 3];
        assert_eq!(classify_limit(&deg, 1e-6).label(), "degenerate");
        assert!(factor_four_residual(&LimitCoefficients::catenoid_witness()) != 0.0);
    }

    #[test]
    fn catenoid_with_negative_ratio_is_a_violation() {
        let mut lc = LimitCoefficients::catenoid_witness();
        lc.c = vec![-1.0, 0.0, 0.0];
        lc.d = vec![0.0, -1.0, 0.0];
        // |q|² = 2(a·c + b·d) fails, so relax the tolerance to reach the ratio test
        assert_eq!(classify_limit(&lc, 1e-6).label(), "non-conformal");
        lc.q = vec![0.0; 3];
        lc.q[2] = 0.0;
        assert_ne!(classify_limit(&lc, 10.0).label(), "catenoid");
    }
}
