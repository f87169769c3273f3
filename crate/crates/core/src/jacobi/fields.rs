//! Explicit Jacobi fields of rational maps `St⁻¹ ∘ (P/Q)`.
//!
//! A variation `P + εδP`, `Q + εδQ` moves `F = P/Q` by `h = (δP·Q − P·δQ)/Q²`.
//! With `deg P, deg Q ≤ d` the numerators `δP·Q − P·δQ` span the polynomials
//! of degree `≤ 2d`, so `h = z^k/Q²`, `k = 0..=2d`, times `1` and `i`, give
//! `2(2d + 1)` real fields `dSt⁻¹_F[h]`.

use crate::grid::{CylinderGrid, Field};
use crate::harmap::{inverse_stereographic_derivative, RationalMap, C64};

fn poly(coeffs: &[C64], z: C64) -> C64 {
    coeffs.iter().rev().fold(C64::new(0.0, 0.0), |acc, c| acc * z + c)
}

/// Degree of `P/Q` (assuming no common factor).
pub fn rational_degree(map: &RationalMap) -> usize {
    let deg = |c: &[C64]| c.iter().rposition(|x| x.norm() > 0.0).unwrap_or(0);
    deg(&map.numerator).max(deg(&map.denominator))
}

/// `dSt⁻¹_{F(z)}[h(z)]` sampled on `grid`, `z = e^{t+iθ}`.
pub fn variation_field(map: &RationalMap, grid: &CylinderGrid, h: impl Fn(C64) -> C64) -> Field {
    let g = grid.with_vector_dim(3);
    Field::from_fn(&g, |t, th, out| {
        let z = C64::from_polar(t.exp(), th);
        let (f, _) = map.eval(z);
        let v = inverse_stereographic_derivative(f, h(z));
        out.copy_from_slice(&v);
    })
}

/// The `2(2d + 1)` fields `dSt⁻¹_F[i^s z^k / Q(z)²]`.
pub fn holomorphic_jacobi_fields(map: &RationalMap, grid: &CylinderGrid) -> Vec<Field> {
    let d = rational_degree(map);
    let mut out = Vec::with_capacity(2 * (2 * d + 1));
    for k in 0..=2 * d {
        for unit in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)] {
            out.push(variation_field(map, grid, |z| {
                let q = poly(&map.denominator, z);
                unit * z.powu(k as u32) / (q * q)
            }));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmap::moebius_family;

    #[test]
    fn degrees_and_counts() {
        let id = RationalMap::identity();
        assert_eq!(rational_degree(&id), 1);
        let grid = CylinderGrid::new(-2.0, 2.0, 9, 8, 3).unwrap();
        assert_eq!(holomorphic_jacobi_fields(&id, &grid).len(), 6);
        let fam = moebius_family(1e-2).unwrap();
        assert_eq!(rational_degree(&fam.u_lambda), 2);
        assert_eq!(holomorphic_jacobi_fields(&fam.u_lambda, &grid).len(), 10);
    }

    #[test]
    fn lambda_derivative_matches_finite_differences() {
        // ∂_λ St⁻¹(z + λ/z) = dSt⁻¹[1/z], which is the k = 1 field
        let grid = CylinderGrid::new(-4.0, 2.0, 25, 8, 3).unwrap();
        let l = 1e-2;
        let eps = 1e-5;
        let plus = moebius_family(l + eps).unwrap().u_lambda.field(&grid);
        let minus = moebius_family(l - eps).unwrap().u_lambda.field(&grid);
        let fd = (&plus - &minus).scaled(0.5 / eps);
        let fields = holomorphic_jacobi_fields(&moebius_family(l).unwrap().u_lambda, &grid);
        let err = (&fd - &fields[2]).sup_norm() / fields[2].sup_norm();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn fields_are_tangent() {
        let fam = moebius_family(1e-3).unwrap();
        let grid = CylinderGrid::new(-9.0, 3.0, 31, 8, 3).unwrap();
        let u = fam.u_lambda.field(&grid);
        for v in holomorphic_jacobi_fields(&fam.u_lambda, &grid) {
            let mut worst = 0.0f64;
            for k in 0..grid.n_t * grid.n_theta {
                let a = &u.values[3 * k..3 * k + 3];
                let b = &v.values[3 * k..3 * k + 3];
                let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                worst = worst.max(d.abs());
            }
            assert!(worst < 1e-12 * v.sup_norm().max(1.0));
        }
    }
}
