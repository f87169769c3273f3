//! Discrete Jacobi operator of a harmonic map `u : (cylinder, ρ(dt²+dθ²)) → N`.
//!
//! The index form is
//! `a(v, w) = ∫ Σ_a ∂_a v·∂_a w − (∂_aΠ)v·(∂_aΠ)w − ⟨R(∂_a u, v)∂_a u, w⟩ dt dθ`
//! on fields with `Π(u)v = v`; `(∂_aΠ)v` is the normal part `A(∂_a u, v)` of
//! `∂_a v`. It does not see `ρ`, which only enters the mass `ρ dt dθ`.
//!
//! Axially the kinetic term is the eighth-order centred stencil, closed by even
//! reflection at the ends (a cosine-transform discretization, symmetric under
//! the trapezoid weights). Each angular mode `n ≥ 1` gets the energy `n v_n²`
//! of its decaying harmonic extension past each end, which imposes
//! `v_n ∝ e^{∓nt}` there; mode 0 is left Neumann. Periodic grids wrap instead.

use nalgebra::DMatrix;

use crate::error::{NeckError, Result};
use crate::grid::{AngularTransform, CylinderGrid, Field};
use crate::harmap::MEMBERSHIP_TOLERANCE;
use crate::jacobi::metric::ConformalMetric;
use crate::linalg::SymBand;
use crate::stencil::fornberg_weights;
use crate::target::TargetManifold;

/// Rows this far from a cap are clear of the reflected stencil.
pub const CLOSURE_ROWS: usize = 8;

const PENALTY_FACTOR: f64 = 1e4;

/// Assembled index form, mass and tangency projector.
#[derive(Debug, Clone)]
pub struct JacobiOperator {
    pub grid: CylinderGrid,
    /// `P K P + σ (I − P)`.
    pub stiffness: SymBand,
    /// `ρ · w_t · w_θ` per degree of freedom.
    pub mass: Vec<f64>,
    /// Flat quadrature weight `w_t · w_θ` per node.
    pub node_weights: Vec<f64>,
    pub rho: Vec<f64>,
    /// Row-major `p × p` projector `Π(u)` per node.
    pub projectors: Vec<Vec<f64>>,
    /// Lower bound on the Rayleigh quotient of tangent fields.
    pub rayleigh_floor: f64,
    /// Smallest normal-block eigenvalue `σ_n / M_n`.
    pub penalty_floor: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Symmetric axial kinetic matrix `−W L` as (i, j, value) with `j ≥ i`.
fn axial_kinetic(grid: &CylinderGrid) -> Vec<(usize, usize, f64)> {
    let n = grid.n_t;
    let h = grid.dt();
    let offsets: Vec<f64> = (-4..=4).map(|k| k as f64).collect();
    let c = fornberg_weights(0.0, &offsets, 2)[2].iter().map(|w| w / (h * h)).collect::<Vec<_>>();
    let w = grid.axial_weights();
    let mut dense = vec![std::collections::BTreeMap::<usize, f64>::new(); n];
    for i in 0..n {
        for (k, ck) in c.iter().enumerate() {
            let mut j = i as i64 + k as i64 - 4;
            if grid.periodic_t {
                j = j.rem_euclid(n as i64);
            } else {
                if j < 0 {
                    j = -j;
                }
                if j > n as i64 - 1 {
                    j = 2 * (n as i64 - 1) - j;
                }
            }
            *dense[i].entry(j as usize).or_insert(0.0) += -w[i] * ck;
        }
    }
    let mut out = Vec::new();
    for (i, row) in dense.iter().enumerate() {
        for (&j, &v) in row {
            if j >= i && v != 0.0 {
                out.push((i, j, v));
            }
        }
    }
    out
}

/// Circulant `|∂_θ|` on `n` samples (Nyquist symbol `n/2`).
fn abs_theta_derivative(n: usize) -> Vec<f64> {
    let mut g = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            let d = 2.0 * std::f64::consts::PI * (j as f64 - k as f64) / n as f64;
            let mut s = 0.0;
            for m in 1..=(n - 1) / 2 {
                s += 2.0 * m as f64 * (m as f64 * d).cos();
            }
            if n % 2 == 0 {
                s += (n / 2) as f64 * ((n / 2) as f64 * d).cos();
            }
            g[j * n + k] = s / n as f64;
        }
    }
    g
}

/// Pointwise symmetric potential `−Σ_a (∂_aΠ)ᵀ(∂_aΠ) + C_a`, `C_a v = R(∂_a u, v)∂_a u`.
fn potential(target: &dyn TargetManifold, y: &[f64], grads: [&[f64]; 2]) -> DMatrix<f64> {
    let p = y.len();
    let mut v = DMatrix::zeros(p, p);
    for g in grads {
        let s = target.directional_projection_derivative(y, g);
        v -= s.transpose() * &s;
        let mut c = DMatrix::zeros(p, p);
        let mut e = vec![0.0; p];
        for k in 0..p {
            e[k] = 1.0;
            let col = target.curvature(y, g, &e, g);
            e[k] = 0.0;
            for (r, x) in col.iter().enumerate() {
                c[(r, k)] = *x;
            }
        }
        v -= (&c + c.transpose()) * 0.5;
    }
    v
}

/// Assemble with axial derivatives of `u` from the grid stencils.
pub fn assemble_jacobi(u: &Field, metric: &ConformalMetric, target: &dyn TargetManifold) -> Result<JacobiOperator> {
    let rho = metric.cylinder_factors(&u.grid)?;
    let ut = u.t_derivative(1);
    let uth = u.theta_derivative(1);
    assemble_jacobi_with(u, &ut, &uth, &rho, target)
}

/// Assemble from `u`, its gradient and the axial conformal factor `ρ(t_i)`.
pub fn assemble_jacobi_with(
    u: &Field,
    ut: &Field,
    uth: &Field,
    rho: &[f64],
    target: &dyn TargetManifold,
) -> Result<JacobiOperator> {
    let grid = u.grid.clone();
    let p = grid.vector_dim;
    if p != target.ambient_dim() {
        return Err(NeckError::InvalidArgument(format!(
            "field dimension {p} does not match target ambient dimension {}",
            target.ambient_dim()
        )));
    }
    if rho.len() != grid.n_t {
        return Err(NeckError::InvalidArgument(format!(
            "conformal factor has {} samples for {} rows",
            rho.len(),
            grid.n_t
        )));
    }
    if let Some(bad) = rho.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
        return Err(NeckError::InvalidArgument(format!("non-positive conformal factor {bad}")));
    }
    if grid.n_t < 9 {
        return Err(NeckError::InvalidGrid("the Jacobi operator needs at least 9 axial rows".into()));
    }
    let (nt, nth) = (grid.n_t, grid.n_theta);
    let nodes = nt * nth;
    let mut worst = 0.0f64;
    for k in 0..nodes {
        worst = worst.max(target.membership_residual(&u.values[k * p..(k + 1) * p]));
    }
    if worst > MEMBERSHIP_TOLERANCE {
        return Err(NeckError::OffTarget(worst));
    }

    let wt = grid.axial_weights();
    let wth = grid.dtheta();
    let node_weights: Vec<f64> = (0..nodes).map(|k| wt[k / nth] * wth).collect();
    let mass: Vec<f64> = (0..nodes * p).map(|d| rho[d / p / nth] * node_weights[d / p]).collect();

    let projectors: Vec<DMatrix<f64>> = (0..nodes)
        .map(|k| target.projection(&u.values[k * p..(k + 1) * p]))
        .collect();
    let potentials: Vec<DMatrix<f64>> = (0..nodes)
        .map(|k| {
            let s = k * p..(k + 1) * p;
            potential(target, &u.values[s.clone()], [&ut.values[s.clone()], &uth.values[s]])
        })
        .collect();

    // scalar node-pair couplings k(n1, n2), n2 >= n1
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for (i1, i2, v) in axial_kinetic(&grid) {
        for j in 0..nth {
            pairs.push((i1 * nth + j, i2 * nth + j, v * wth));
        }
    }
    let d2 = AngularTransform::new(nth).derivative_matrix(2);
    for i in 0..nt {
        for j1 in 0..nth {
            for j2 in j1..nth {
                let v = -wt[i] * wth * d2[j1 * nth + j2];
                if v != 0.0 {
                    pairs.push((i * nth + j1, i * nth + j2, v));
                }
            }
        }
    }
    if !grid.periodic_t {
        let g = abs_theta_derivative(nth);
        for i in [0, nt - 1] {
            for j1 in 0..nth {
                for j2 in j1..nth {
                    let v = wth * g[j1 * nth + j2];
                    if v.abs() > 1e-15 {
                        pairs.push((i * nth + j1, i * nth + j2, v));
                    }
                }
            }
        }
    }

    let bw = if grid.periodic_t {
        nodes * p - 1
    } else {
        pairs.iter().map(|&(a, b, _)| (b - a) * p + p - 1).max().unwrap_or(p - 1)
    };
    let mut stiffness = SymBand::zeros(nodes * p, bw);
    let mut diag_scale = vec![0.0; nodes];
    for &(a, b, v) in &pairs {
        if a == b {
            diag_scale[a] += v.abs();
        }
        let pp = &projectors[a] * &projectors[b];
        for c1 in 0..p {
            for c2 in 0..p {
                if a == b && c2 > c1 {
                    continue;
                }
                let x = v * pp[(c1, c2)];
                if x != 0.0 {
                    stiffness.add(a * p + c1, b * p + c2, x);
                }
            }
        }
    }
    let mut floor = 0.0f64;
    let mut penalty_floor = f64::INFINITY;
    for k in 0..nodes {
        let pr = &projectors[k];
        let pvp = pr * &potentials[k] * pr;
        let local = pvp.norm() * node_weights[k];
        let sigma = PENALTY_FACTOR * (diag_scale[k] + local);
        let normal = DMatrix::identity(p, p) - pr;
        let block = pvp * node_weights[k] + normal * sigma;
        for c1 in 0..p {
            for c2 in 0..=c1 {
                stiffness.add(k * p + c1, k * p + c2, block[(c1, c2)]);
            }
        }
        let r = rho[k / nth];
        let lo = (pr * &potentials[k] * pr).symmetric_eigenvalues().min();
        floor = floor.min(lo / r);
        penalty_floor = penalty_floor.min(sigma / (r * node_weights[k]));
    }

    Ok(JacobiOperator {
        grid,
        stiffness,
        mass,
        node_weights,
        rho: rho.to_vec(),
        projectors: projectors.iter().map(|m| m.transpose().as_slice().to_vec()).collect(),
        rayleigh_floor: floor,
        penalty_floor,
    })
}

impl JacobiOperator {
    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    fn p(&self) -> usize {
        self.grid.vector_dim
    }

    /// `Π(u) v` node by node.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let p = self.p();
        let mut out = vec![0.0; v.len()];
        for (k, pr) in self.projectors.iter().enumerate() {
            for r in 0..p {
                out[k * p + r] = (0..p).map(|c| pr[r * p + c] * v[k * p + c]).sum();
            }
        }
        out
    }

    /// `⟨v, w⟩` in the mass inner product.
    pub fn mass_inner(&self, v: &[f64], w: &[f64]) -> f64 {
        v.iter().zip(w).zip(&self.mass).map(|((a, b), m)| a * b * m).sum()
    }

    /// `M⁻¹ K v`, the discrete `J_u(v)`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut y = self.stiffness.matvec(v);
        for (x, m) in y.iter_mut().zip(&self.mass) {
            *x /= m;
        }
        y
    }

    /// `vᵀKv / vᵀMv`.
    pub fn rayleigh_quotient(&self, v: &[f64]) -> f64 {
        dot(v, &self.stiffness.matvec(v)) / self.mass_inner(v, v)
    }

    /// Flat-form residual `sup |ρ J_u(v)| / sup |v|` on rows clear of the caps.
    pub fn residual(&self, v: &[f64]) -> f64 {
        let p = self.p();
        let nth = self.grid.n_theta;
        let kv = self.stiffness.matvec(v);
        let (lo, hi) = self.interior_rows();
        let mut r = 0.0f64;
        for i in lo..hi {
            for j in 0..nth {
                let k = i * nth + j;
                for c in 0..p {
                    r = r.max((kv[k * p + c] / self.node_weights[k]).abs());
                }
            }
        }
        r / v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
    }

    /// Row range `[lo, hi)` used by [`JacobiOperator::residual`].
    pub fn interior_rows(&self) -> (usize, usize) {
        if self.grid.periodic_t {
            (0, self.grid.n_t)
        } else {
            (CLOSURE_ROWS, self.grid.n_t - CLOSURE_ROWS)
        }
    }

    /// Largest normal component of `v` relative to `sup |v|`.
    pub fn tangency_defect(&self, v: &[f64]) -> f64 {
        let pv = self.project(v);
        let d = v.iter().zip(&pv).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        d / v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
    }
}

/// `J_u(v)` in the expanded pointwise form with `∂²Π` and `∂²u`, from grid
/// derivatives. Its value on tangent fields does not depend on how `Π` is
/// extended off `N`.
pub fn jacobi_strong(u: &Field, v: &Field, rho: &[f64], target: &dyn TargetManifold) -> Result<Field> {
    if u.grid != v.grid {
        return Err(NeckError::InvalidArgument("u and v live on different grids".into()));
    }
    let p = u.grid.vector_dim;
    let du = [u.t_derivative(1), u.theta_derivative(1)];
    let ddu = [u.t_derivative(2), u.theta_derivative(2)];
    let dv = [v.t_derivative(1), v.theta_derivative(1)];
    let lap_v = v.laplacian();
    let nth = u.grid.n_theta;
    let mut out = Field::zeros(&u.grid);
    let nodes = u.grid.n_t * nth;
    for k in 0..nodes {
        let s = k * p..(k + 1) * p;
        let y = &u.values[s.clone()];
        let vk = &v.values[s.clone()];
        let pr = target.projection(y);
        let lap_u: Vec<f64> = (0..p).map(|c| ddu[0].values[k * p + c] + ddu[1].values[k * p + c]).collect();
        let mut j = vec![0.0; p];
        for c in 0..p {
            j[c] = -lap_v.values[k * p + c];
        }
        for a in 0..2 {
            let g = &du[a].values[s.clone()];
            let dva = &dv[a].values[s.clone()];
            let sa = target.directional_projection_derivative(y, g);
            let sdv = &sa * nalgebra::DVector::from_column_slice(dva);
            let psdv = &pr * &sdv;
            let curv = target.curvature(y, g, vk, g);
            let mut hess = DMatrix::zeros(p, p);
            for mu in 0..p {
                for nu in 0..p {
                    let coef = g[mu] * g[nu];
                    if coef != 0.0 {
                        hess += target.projection_second_derivative(y, mu, nu) * coef;
                    }
                }
            }
            let hv = hess * nalgebra::DVector::from_column_slice(vk);
            for c in 0..p {
                j[c] += -psdv[c] + 2.0 * sdv[c] - curv[c] + hv[c];
            }
        }
        let su = target.directional_projection_derivative(y, &lap_u) * nalgebra::DVector::from_column_slice(vk);
        let r = rho[k / nth];
        for c in 0..p {
            out.values[k * p + c] = (j[c] + su[c]) / r;
        }
    }
    Ok(out)
}
