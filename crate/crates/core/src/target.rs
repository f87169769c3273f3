//! Embedded target manifolds `N ⊂ ℝ^p`: the tangent projection `Π` (extended to
//! a neighbourhood of `N`), its derivatives, the second fundamental form and
//! the curvature tensor.

use nalgebra::{DMatrix, DVector};

/// A closed submanifold of ℝ^p together with an extension of its tangent projection.
pub trait TargetManifold: Send + Sync {
    fn name(&self) -> &str;
    fn ambient_dim(&self) -> usize;
    fn intrinsic_dim(&self) -> usize;
    /// Orthogonal projector onto `T_yN` (for `y` on `N`).
    fn projection(&self, y: &[f64]) -> DMatrix<f64>;
    /// `∂Π/∂y_μ`.
    fn projection_derivative(&self, y: &[f64], mu: usize) -> DMatrix<f64>;
    /// `∂²Π/∂y_μ∂y_ν`.
    fn projection_second_derivative(&self, y: &[f64], mu: usize, nu: usize) -> DMatrix<f64>;
    /// `A(y)(X, Y)`, normal to `T_yN`.
    fn second_fundamental_form(&self, y: &[f64], x: &[f64], yv: &[f64]) -> Vec<f64>;
    /// `R(X, V)Y`.
    fn curvature(&self, y: &[f64], x: &[f64], v: &[f64], yv: &[f64]) -> Vec<f64>;
    /// Distance-to-`N` proxy.
    fn membership_residual(&self, y: &[f64]) -> f64;
    /// Closest-point map onto `N`.
    fn retract(&self, y: &[f64]) -> Vec<f64>;

    /// `(∂_X Π) Y = Σ_μ X_μ (∂_μ Π) Y`.
    fn directional_projection_derivative(&self, y: &[f64], x: &[f64]) -> DMatrix<f64> {
        let p = self.ambient_dim();
        let mut out = DMatrix::zeros(p, p);
        for (mu, xm) in x.iter().enumerate() {
            if *xm != 0.0 {
                out += self.projection_derivative(y, mu) * *xm;
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(p: usize, mu: usize) -> DVector<f64> {
    let mut e = DVector::zeros(p);
    e[mu] = 1.0;
    e
}

/// Unit sphere `S^{p-1} ⊂ ℝ^p` with the radial extension `Π(y) = I - yyᵀ/|y|²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundSphere {
    pub p: usize,
}

impl RoundSphere {
    pub fn new(p: usize) -> Self {
        assert!(p >= 2);
        RoundSphere { p }
    }
}

impl TargetManifold for RoundSphere {
    fn name(&self) -> &str {
        "round-sphere"
    }

    fn ambient_dim(&self) -> usize {
        self.p
    }

    fn intrinsic_dim(&self) -> usize {
        self.p - 1
    }

    fn projection(&self, y: &[f64]) -> DMatrix<f64> {
        let v = DVector::from_column_slice(y);
        DMatrix::identity(self.p, self.p) - &v * v.transpose() / v.norm_squared()
    }

    fn projection_derivative(&self, y: &[f64], mu: usize) -> DMatrix<f64> {
        let v = DVector::from_column_slice(y);
        let r2 = v.norm_squared();
        let e = unit(self.p, mu);
        let sym = &e * v.transpose() + &v * e.transpose();
        -(sym / r2) + &v * v.transpose() * (2.0 * y[mu] / (r2 * r2))
    }

    fn projection_second_derivative(&self, y: &[f64], mu: usize, nu: usize) -> DMatrix<f64> {
        let v = DVector::from_column_slice(y);
        let r2 = v.norm_squared();
        let (em, en) = (unit(self.p, mu), unit(self.p, nu));
        let yy = &v * v.transpose();
        let s_mu = &em * v.transpose() + &v * em.transpose();
        let s_nu = &en * v.transpose() + &v * en.transpose();
        let enm = &em * en.transpose() + &en * em.transpose();
        let delta = if mu == nu { 1.0 } else { 0.0 };
        let second = enm / r2 - s_mu * (2.0 * y[nu] / (r2 * r2)) - s_nu * (2.0 * y[mu] / (r2 * r2))
            - &yy * (2.0 * delta / (r2 * r2))
            + &yy * (8.0 * y[mu] * y[nu] / (r2 * r2 * r2));
        -second
    }

    fn second_fundamental_form(&self, y: &[f64], x: &[f64], yv: &[f64]) -> Vec<f64> {
        let c = -dot(x, yv);
        y.iter().map(|v| c * v).collect()
    }

    fn curvature(&self, _y: &[f64], x: &[f64], v: &[f64], yv: &[f64]) -> Vec<f64> {
        let (xy, vy) = (dot(x, yv), dot(v, yv));
        v.iter().zip(x).map(|(vi, xi)| xy * vi - vy * xi).collect()
    }

    fn membership_residual(&self, y: &[f64]) -> f64 {
        (dot(y, y).sqrt() - 1.0).abs()
    }

    fn retract(&self, y: &[f64]) -> Vec<f64> {
        let r = dot(y, y).sqrt();
        y.iter().map(|v| v / r).collect()
    }
}

/// The unit sphere with the polynomial extension `Π(y) = I - yyᵀ`, which agrees
/// with [`RoundSphere`] on `N` but not off it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolynomialSphere {
    pub p: usize,
}

impl TargetManifold for PolynomialSphere {
    fn name(&self) -> &str {
        "polynomial-sphere"
    }

    fn ambient_dim(&self) -> usize {
        self.p
    }

    fn intrinsic_dim(&self) -> usize {
        self.p - 1
    }

    fn projection(&self, y: &[f64]) -> DMatrix<f64> {
        let v = DVector::from_column_slice(y);
        DMatrix::identity(self.p, self.p) - &v * v.transpose()
    }

    fn projection_derivative(&self, y: &[f64], mu: usize) -> DMatrix<f64> {
        let v = DVector::from_column_slice(y);
        let e = unit(self.p, mu);
        -(&e * v.transpose() + &v * e.transpose())
    }

    fn projection_second_derivative(&self, _y: &[f64], mu: usize, nu: usize) -> DMatrix<f64> {
        let (em, en) = (unit(self.p, mu), unit(self.p, nu));
        -(&em * en.transpose() + &en * em.transpose())
    }

    fn second_fundamental_form(&self, y: &[f64], x: &[f64], yv: &[f64]) -> Vec<f64> {
        RoundSphere { p: self.p }.second_fundamental_form(y, x, yv)
    }

    fn curvature(&self, y: &[f64], x: &[f64], v: &[f64], yv: &[f64]) -> Vec<f64> {
        RoundSphere { p: self.p }.curvature(y, x, v, yv)
    }

    fn membership_residual(&self, y: &[f64]) -> f64 {
        RoundSphere { p: self.p }.membership_residual(y)
    }

    fn retract(&self, y: &[f64]) -> Vec<f64> {
        RoundSphere { p: self.p }.retract(y)
    }
}

/// ℝ^p itself: `Π = I`, `A = 0`, `R = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlatSpace {
    pub p: usize,
}

impl TargetManifold for FlatSpace {
    fn name(&self) -> &str {
        "flat"
    }

    fn ambient_dim(&self) -> usize {
        self.p
    }

    fn intrinsic_dim(&self) -> usize {
        self.p
    }

    fn projection(&self, _y: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.p, self.p)
    }

    fn projection_derivative(&self, _y: &[f64], _mu: usize) -> DMatrix<f64> {
        DMatrix::zeros(self.p, self.p)
    }

    fn projection_second_derivative(&self, _y: &[f64], _mu: usize, _nu: usize) -> DMatrix<f64> {
        DMatrix::zeros(self.p, self.p)
    }

    fn second_fundamental_form(&self, _y: &[f64], _x: &[f64], _yv: &[f64]) -> Vec<f64> {
        vec![0.0; self.p]
    }

    fn curvature(&self, _y: &[f64], _x: &[f64], _v: &[f64], _yv: &[f64]) -> Vec<f64> {
        vec![0.0; self.p]
    }

    fn membership_residual(&self, _y: &[f64]) -> f64 {
        0.0
    }

    fn retract(&self, y: &[f64]) -> Vec<f64> {
        y.to_vec()
    }
}
