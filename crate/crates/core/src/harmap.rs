//! Harmonic maps from cylinders: the tension field, a Dirichlet heat-flow
//! solver, the Möbius blow-up family, energy, Pohozaev defect and the
//! catenoid-metric gradient bound.
use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::grid::{full_spectrum, synthesize, CylinderGrid, Field};
use crate::linalg::BandLu;
use crate::stencil::AxialOperator;
use crate::target::TargetManifold;
use crate::{eta_weight, NeckError, Result};

/// Points farther than this from `N` are rejected by [`tension_residual`].
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-8;

pub type C64 = Complex<f64>;

/// `St⁻¹(ζ) = (2Re ζ, 2Im ζ, |ζ|² − 1)/(|ζ|² + 1)`.
pub fn inverse_stereographic(z: C64) -> [f64; 3] {
    let r2 = z.norm_sqr();
    let d = r2 + 1.0;
    [2.0 * z.re / d, 2.0 * z.im / d, (r2 - 1.0) / d]
}

/// Differential of `St⁻¹` at `z` applied to the (real-linear) direction `dz`.
pub fn inverse_stereographic_derivative(z: C64, dz: C64) -> [f64; 3] {
    let (x, y) = (z.re, z.im);
    let d = x * x + y * y + 1.0;
    let d2 = d * d;
    let px = [2.0 * (d - 2.0 * x * x) / d2, -4.0 * x * y / d2, 4.0 * x / d2];
    let py = [-4.0 * x * y / d2, 2.0 * (d - 2.0 * y * y) / d2, 4.0 * y / d2];
    [
        dz.re * px[0] + dz.im * py[0],
        dz.re * px[1] + dz.im * py[1],
        dz.re * px[2] + dz.im * py[2],
    ]
}

fn poly_eval(c: &[C64], z: C64) -> (C64, C64) {
    let mut f = C64::new(0.0, 0.0);
    let mut df = C64::new(0.0, 0.0);
    for a in c.iter().rev() {
        df = df * z + f;
        f = f * z + a;
    }
    (f, df)
}

/// A rational function `F = P/Q` (coefficients in ascending powers), whose
/// composition `St⁻¹ ∘ F` is a holomorphic hence harmonic map into S².
#[derive(Debug, Clone, PartialEq)]
pub struct RationalMap {
    pub numerator: Vec<C64>,
    pub denominator: Vec<C64>,
}

impl RationalMap {
    pub fn new(numerator: Vec<C64>, denominator: Vec<C64>) -> Self {
        RationalMap { numerator, denominator }
    }

    /// `F(z) = z`.
    pub fn identity() -> Self {
        Self::new(vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)], vec![C64::new(1.0, 0.0)])
    }

    /// `F` and `F'` at `z`.
    pub fn eval(&self, z: C64) -> (C64, C64) {
        let (p, dp) = poly_eval(&self.numerator, z);
        let (q, dq) = poly_eval(&self.denominator, z);
        (p / q, (dp * q - p * dq) / (q * q))
    }

    /// `St⁻¹(F(e^{t+iθ}))`.
    pub fn point(&self, t: f64, theta: f64) -> [f64; 3] {
        inverse_stereographic(self.eval(C64::from_polar(t.exp(), theta)).0)
    }

    /// Value and exact `∂_t`, `∂_θ` at `(t, θ)`.
    pub fn jet(&self, t: f64, theta: f64) -> ([f64; 3], [f64; 3], [f64; 3]) {
        let z = C64::from_polar(t.exp(), theta);
        let (f, df) = self.eval(z);
        let zt = z * df;
        let zth = C64::new(0.0, 1.0) * zt;
        (
            inverse_stereographic(f),
            inverse_stereographic_derivative(f, zt),
            inverse_stereographic_derivative(f, zth),
        )
    }

    pub fn field(&self, grid: &CylinderGrid) -> Field {
        Field::from_fn(&grid.with_vector_dim(3), |t, th, out| out.copy_from_slice(&self.point(t, th)))
    }

    /// Exact `(∂_t u, ∂_θ u)` sampled on the grid.
    pub fn gradient_fields(&self, grid: &CylinderGrid) -> (Field, Field) {
        let g = grid.with_vector_dim(3);
        let dt = Field::from_fn(&g, |t, th, out| out.copy_from_slice(&self.jet(t, th).1));
        let dth = Field::from_fn(&g, |t, th, out| out.copy_from_slice(&self.jet(t, th).2));
        (dt, dth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    SumPole,
    CustomRational,
}

/// Configuration descriptor `{kind, lambda}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyDescriptor {
    pub kind: MapKind,
    pub lambda: f64,
}

/// A bubbling family `u_λ → u_∞` with one bubble `ω` at the origin.
///
/// `bubble` is written in the rescaled variable `w = z/λ`, so
/// `u_λ(λw) → ω(w)` on compacts of ℂ∖{0}.
#[derive(Debug, Clone, PartialEq)]
pub struct BlowupFamily {
    pub kind: MapKind,
    pub lambda: f64,
    pub u_lambda: RationalMap,
    pub u_infinity: RationalMap,
    pub bubble: RationalMap,
    pub touching_point: [f64; 3],
}

/// `u_λ = St⁻¹(z + λ/z)`, `u_∞ = St⁻¹(z)`, `ω(w) = St⁻¹(1/w)`.
pub fn moebius_family(lambda: f64) -> Result<BlowupFamily> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(NeckError::InvalidArgument(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    let c = |x: f64| C64::new(x, 0.0);
    Ok(BlowupFamily {
        kind: MapKind::SumPole,
        lambda,
        u_lambda: RationalMap::new(vec![c(lambda), c(0.0), c(1.0)], vec![c(0.0), c(1.0)]),
        u_infinity: RationalMap::identity(),
        bubble: RationalMap::new(vec![c(1.0)], vec![c(0.0), c(1.0)]),
        touching_point: inverse_stereographic(c(0.0)),
    })
}

impl BlowupFamily {
    pub fn from_descriptor(d: &FamilyDescriptor) -> Result<Self> {
        match d.kind {
            MapKind::SumPole => moebius_family(d.lambda),
            MapKind::CustomRational => Err(NeckError::InvalidArgument(
                "custom rational families must be built with BlowupFamily::custom".into(),
            )),
        }
    }

    pub fn custom(
        lambda: f64,
        u_lambda: RationalMap,
        u_infinity: RationalMap,
        bubble: RationalMap,
        touching_point: [f64; 3],
    ) -> Self {
        BlowupFamily {
            kind: MapKind::CustomRational,
            lambda,
            u_lambda,
            u_infinity,
            bubble,
            touching_point,
        }
    }

    pub fn descriptor(&self) -> FamilyDescriptor {
        FamilyDescriptor {
            kind: self.kind,
            lambda: self.lambda,
        }
    }

    /// Neck center `t = ½ log λ`.
    pub fn neck_center(&self) -> f64 {
        0.5 * self.lambda.ln()
    }

    pub fn sample(&self, grid: &CylinderGrid) -> Field {
        self.u_lambda.field(grid)
    }

    /// The catenoid-type neck grid `[log(λ/δ), log δ]`.
    pub fn neck_grid(&self, delta: f64, dt: f64, n_theta: usize) -> Result<CylinderGrid> {
        CylinderGrid::with_spacing((self.lambda / delta).ln(), delta.ln(), dt, n_theta, 3)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_membership(u: &Field, target: &dyn TargetManifold) -> Result<()> {
    if u.dim() != target.ambient_dim() {
        return Err(NeckError::InvalidArgument(format!(
            "field has {} components, target lives in R^{}",
            u.dim(),
            target.ambient_dim()
        )));
    }
    let g = &u.grid;
    let mut worst = 0.0f64;
    for i in 0..g.n_t {
        for j in 0..g.n_theta {
            worst = worst.max(target.membership_residual(u.point(i, j)));
        }
    }
    if worst > MEMBERSHIP_TOLERANCE {
        return Err(NeckError::OffTarget(worst));
    }
    Ok(())
}

/// `Δ̃u − A(u)(∇̃u, ∇̃u)`, divided by the conformal factor `rho[i_t]` when given.
pub fn tension_residual(u: &Field, target: &dyn TargetManifold, rho: Option<&[f64]>) -> Result<Field> {
    check_membership(u, target)?;
    if let Some(r) = rho {
        if r.len() != u.grid.n_t {
            return Err(NeckError::InvalidArgument("conformal factor needs one value per axial sample".into()));
        }
    }
    Ok(raw_tension(u, target, rho))
}

fn raw_tension(u: &Field, target: &dyn TargetManifold, rho: Option<&[f64]>) -> Field {
    let op = u.grid.axial_operator();
    tension_with(u, &op, target, rho).0
}

/// Tension together with the energy density of every cross-section.
fn tension_with(
    u: &Field,
    op: &AxialOperator,
    target: &dyn TargetManifold,
    rho: Option<&[f64]>,
) -> (Field, Vec<f64>) {
    let ut = u.t_derivative_with(op, 1);
    let uth = u.theta_derivative(1);
    let mut out = &u.t_derivative_with(op, 2) + &u.theta_derivative(2);
    let g = &u.grid;
    for i in 0..g.n_t {
        let scale = rho.map_or(1.0, |r| 1.0 / r[i]);
        for j in 0..g.n_theta {
            let y = u.point(i, j);
            let (a, b) = (ut.point(i, j), uth.point(i, j));
            let aa = target.second_fundamental_form(y, a, a);
            let bb = target.second_fundamental_form(y, b, b);
            for (c, v) in out.point_mut(i, j).iter_mut().enumerate() {
                *v = (*v - aa[c] - bb[c]) * scale;
            }
        }
    }
    (out, energy_rows(&ut, &uth))
}

/// Replace `t` by `Π(u) t` pointwise.
pub fn tangential_part(t: &mut Field, u: &Field, target: &dyn TargetManifold) {
    let g = &u.grid;
    let p = g.vector_dim;
    for i in 0..g.n_t {
        for j in 0..g.n_theta {
            let pm = target.projection(u.point(i, j));
            let v = nalgebra::DVector::from_column_slice(t.point(i, j));
            let w = pm * v;
            t.point_mut(i, j)[..p].copy_from_slice(w.as_slice());
        }
    }
}

/// Sup of the tension over rows `1..n_t-1`.
pub fn interior_tension(u: &Field, target: &dyn TargetManifold) -> Result<f64> {
    let t = tension_residual(u, target, None)?;
    Ok(t.sup_on_rows(1, u.grid.n_t - 2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowScheme {
    /// `u ← R(u + τ T(u))`.
    Explicit,
    /// `u ← R(u + (I − τΔ̃)⁻¹ τ T(u))`; same fixed points, far larger steps.
    SemiImplicit,
}

/// Heat-flow settings `{tol, max_iter, tau}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatFlowConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial step; `None` picks a stable default for the scheme.
    pub tau: Option<f64>,
    pub scheme: FlowScheme,
}

impl Default for HeatFlowConfig {
    fn default() -> Self {
        HeatFlowConfig {
            tol: 1e-8,
            max_iter: 200_000,
            tau: None,
            scheme: FlowScheme::Explicit,
        }
    }
}

impl HeatFlowConfig {
    pub fn semi_implicit() -> Self {
        HeatFlowConfig {
            scheme: FlowScheme::SemiImplicit,
            max_iter: 5_000,
            ..Default::default()
        }
    }

    /// Default step for `grid`. The explicit bound uses the spectral radius of
    /// the eighth-order second difference (about `6/dt²`) plus `(n_θ/2)²`.
    pub fn default_tau(&self, grid: &CylinderGrid) -> f64 {
        match self.scheme {
            FlowScheme::Explicit => {
                let nyq = (grid.n_theta / 2) as f64;
                1.6 / (6.0 / (grid.dt() * grid.dt()) + nyq * nyq)
            }
            FlowScheme::SemiImplicit => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatFlowOutcome {
    pub field: Field,
    pub iterations: usize,
    /// Interior sup of the tangential tension `Π(u)T(u)`.
    pub residual: f64,
    pub energy: f64,
}

/// Per-mode factorizations of `I − τ(∂_t² − n²)` with zero end values.
struct Smoother {
    tau: f64,
    lus: Vec<BandLu>,
}

impl Smoother {
    fn new(grid: &CylinderGrid, tau: f64) -> Result<Self> {
        let op = grid.axial_operator();
        let nt = grid.n_t;
        let lus = (0..=grid.n_theta / 2)
            .map(|n| {
                let n2 = (n * n) as f64;
                let mut rows = vec![vec![(0usize, 1.0)]];
                for i in 1..nt - 1 {
                    let r = op.d2_row(i);
                    let mut row: Vec<(usize, f64)> =
                        r.nodes.iter().zip(&r.weights).map(|(&k, &w)| (k, -tau * w)).collect();
                    match row.iter_mut().find(|e| e.0 == i) {
                        Some(e) => e.1 += 1.0 + tau * n2,
                        None => row.push((i, 1.0 + tau * n2)),
                    }
                    rows.push(row);
                }
                rows.push(vec![(nt - 1, 1.0)]);
                BandLu::from_rows(&rows)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Smoother { tau, lus })
    }

    fn apply(&self, r: &Field) -> Field {
        let g = &r.grid;
        let p = g.vector_dim;
        let nt = g.n_t;
        let mut modes = full_spectrum(r);
        let mut buf = vec![0.0; nt];
        for m in &mut modes {
            let lu = &self.lus[m.mode_index];
            for part in [&mut m.cos_part, &mut m.sin_part] {
                for c in 0..p {
                    for i in 0..nt {
                        buf[i] = self.tau * part[i * p + c];
                    }
                    buf[0] = 0.0;
                    buf[nt - 1] = 0.0;
                    lu.solve_in_place(&mut buf);
                    for i in 0..nt {
                        part[i * p + c] = buf[i];
                    }
                }
            }
        }
        synthesize(g, &modes)
    }
}

fn step(u: &Field, dir: &Field, scale: f64, target: &dyn TargetManifold) -> Field {
    let g = &u.grid;
    let mut out = u.clone();
    for i in 1..g.n_t - 1 {
        for j in 0..g.n_theta {
            let y: Vec<f64> = u.point(i, j).iter().zip(dir.point(i, j)).map(|(a, b)| a + scale * b).collect();
            out.point_mut(i, j).copy_from_slice(&target.retract(&y));
        }
    }
    out
}

/// Heat flow with the end cross-sections held at the given traces (each of
/// length `n_θ·p`, layout `[j·p + c]`) until the interior tension is at most
/// `cfg.tol`.
pub fn solve_dirichlet(
    boundary_top: &[f64],
    boundary_bottom: &[f64],
    target: &dyn TargetManifold,
    init: &Field,
    cfg: &HeatFlowConfig,
) -> Result<HeatFlowOutcome> {
    let g = init.grid.clone();
    let stride = g.n_theta * g.vector_dim;
    if boundary_top.len() != stride || boundary_bottom.len() != stride {
        return Err(NeckError::InvalidArgument(format!("traces must have {stride} entries")));
    }
    if g.n_t < 3 {
        return Err(NeckError::InvalidGrid("need at least three axial samples".into()));
    }
    let mut u = init.clone();
    u.values[..stride].copy_from_slice(boundary_bottom);
    u.values[(g.n_t - 1) * stride..].copy_from_slice(boundary_top);
    check_membership(&u, target)?;
    // start from the retraction of the initial guess
    u = step(&u, &Field::zeros(&g), 0.0, target);

    let mut tau = cfg.tau.unwrap_or_else(|| cfg.default_tau(&g));
    let mut smoother = match cfg.scheme {
        FlowScheme::SemiImplicit => Some(Smoother::new(&g, tau)?),
        FlowScheme::Explicit => None,
    };
    let op = g.axial_operator();
    let last = g.n_t - 2;
    let eval = |u: &Field| {
        let (mut t, rows) = tension_with(u, &op, target, None);
        tangential_part(&mut t, u, target);
        let r = t.sup_on_rows(1, last);
        (t, r, trapezoid(&rows, g.dt()))
    };
    let (mut t, mut residual, mut e) = eval(&u);
    // convergence is measured on Π(u)T(u): the normal part of the discrete
    // tension is a discretization error the retraction cannot remove.
    // Backtracking accepts a step that lowers either the energy or the tension;
    // near convergence the discrete energy gradient and the discrete tension
    // differ at the one-sided boundary stencils
    for it in 0..cfg.max_iter {
        if residual <= cfg.tol {
            return Ok(HeatFlowOutcome {
                field: u,
                iterations: it,
                residual,
                energy: e,
            });
        }
        let mut accepted = false;
        for _ in 0..40 {
            let (dir, scale) = match &smoother {
                Some(s) => (s.apply(&t), 1.0),
                None => (t.clone(), tau),
            };
            let cand = step(&u, &dir, scale, target);
            let (tc, rc, ec) = eval(&cand);
            if ec <= e * (1.0 + 1e-12) || rc < residual {
                u = cand;
                (t, residual, e) = (tc, rc, ec);
                accepted = true;
                break;
            }
            tau *= 0.5;
            if smoother.is_some() {
                smoother = Some(Smoother::new(&g, tau)?);
            }
        }
        if !accepted {
            break;
        }
    }
    Err(NeckError::NoConvergence {
        iterations: cfg.max_iter,
        residual,
    })
}

/// Linear-in-t initial guess between two traces, retracted onto `N`.
pub fn interpolating_init(
    grid: &CylinderGrid,
    boundary_bottom: &[f64],
    boundary_top: &[f64],
    target: &dyn TargetManifold,
) -> Field {
    let p = grid.vector_dim;
    let len = (grid.t_max - grid.t_min).max(f64::MIN_POSITIVE);
    Field::from_fn(grid, |t, th, out| {
        let s = (t - grid.t_min) / len;
        let j = ((th / grid.dtheta()).round() as usize) % grid.n_theta;
        let y: Vec<f64> = (0..p)
            .map(|c| (1.0 - s) * boundary_bottom[j * p + c] + s * boundary_top[j * p + c])
            .collect();
        out.copy_from_slice(&target.retract(&y));
    })
}

fn row_range(grid: &CylinderGrid, t_range: (f64, f64)) -> Result<(usize, usize)> {
    let (a, b) = t_range;
    let eps = 1e-9 * grid.dt().max(1.0);
    if !(a <= b) || a < grid.t_min - eps || b > grid.t_max + eps {
        return Err(NeckError::WindowOutsideGrid { lo: a, hi: b });
    }
    Ok((grid.nearest_index(a), grid.nearest_index(b)))
}

/// `½∬(|∂_t u|² + |∂_θ u|²) dt dθ` over `t_range` (trapezoid in t, exact in θ).
pub fn energy(u: &Field, t_range: (f64, f64)) -> Result<f64> {
    let g = &u.grid;
    let (lo, hi) = row_range(g, t_range)?;
    let op = g.axial_operator();
    let ut = u.t_derivative_with(&op, 1);
    let uth = u.theta_derivative(1);
    let rows = energy_rows(&ut, &uth);
    Ok(trapezoid(&rows[lo..=hi], g.dt()))
}

/// Energy on a conformally flat metric `ρ(dt² + dθ²)`. Dirichlet energy is
/// conformally invariant in two dimensions, so `rho` does not enter.
pub fn energy_with_factor(u: &Field, t_range: (f64, f64), _rho: &[f64]) -> Result<f64> {
    energy(u, t_range)
}

/// Energy from exact derivative fields.
pub fn energy_from_gradient(ut: &Field, uth: &Field, t_range: (f64, f64)) -> Result<f64> {
    let (lo, hi) = row_range(&ut.grid, t_range)?;
    Ok(trapezoid(&energy_rows(ut, uth)[lo..=hi], ut.grid.dt()))
}

fn energy_rows(ut: &Field, uth: &Field) -> Vec<f64> {
    let g = &ut.grid;
    let dth = g.dtheta();
    (0..g.n_t)
        .map(|i| {
            (0..g.n_theta)
                .map(|j| dot(ut.point(i, j), ut.point(i, j)) + dot(uth.point(i, j), uth.point(i, j)))
                .sum::<f64>()
                * 0.5
                * dth
        })
        .collect()
}

fn trapezoid(v: &[f64], h: f64) -> f64 {
    match v.len() {
        0 | 1 => 0.0,
        n => h * (v.iter().sum::<f64>() - 0.5 * (v[0] + v[n - 1])),
    }
}

/// `∫|∂_t u|² dθ − ∫|∂_θ u|² dθ` on the cross-section nearest `t`.
pub fn pohozaev_defect(u: &Field, t: f64) -> Result<f64> {
    let g = &u.grid;
    let (i, _) = row_range(g, (t, t))?;
    Ok(pohozaev_profile(u)[i])
}

/// Pohozaev defect at every axial sample.
pub fn pohozaev_profile(u: &Field) -> Vec<f64> {
    let a = u.t_derivative(1);
    let b = u.theta_derivative(1);
    let g = &u.grid;
    (0..g.n_t)
        .map(|i| {
            (0..g.n_theta)
                .map(|j| dot(a.point(i, j), a.point(i, j)) - dot(b.point(i, j), b.point(i, j)))
                .sum::<f64>()
                * g.dtheta()
        })
        .collect()
}

/// `sup (|∂_t u|² + |∂_θ u|²)^{1/2} / (e^t + λe^{−t})` over `region`.
pub fn gi_gradient_bound(u: &Field, lambda: f64, region: (f64, f64)) -> Result<f64> {
    let g = &u.grid;
    let (lo, hi) = row_range(g, region)?;
    let ut = u.t_derivative(1);
    let uth = u.theta_derivative(1);
    let mut best = 0.0f64;
    for i in lo..=hi {
        let w = eta_weight(g.t(i), lambda);
        for j in 0..g.n_theta {
            let s = dot(ut.point(i, j), ut.point(i, j)) + dot(uth.point(i, j), uth.point(i, j));
            best = best.max(s.sqrt() / w);
        }
    }
    Ok(best)
}
