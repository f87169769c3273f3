//! Lowest eigenpairs of `K v = β M v` by shift-invert subspace iteration.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NeckError, Result};
use crate::exec::Execution;
use crate::jacobi::operator::JacobiOperator;
use crate::linalg::BandCholesky;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub zero_tol: f64,
    pub index: usize,
    pub nullity: usize,
    pub ni: usize,
    pub rayleigh_floor: f64,
}

impl SpectrumReport {
    pub fn new(eigenvalues: Vec<f64>, zero_tol: f64, rayleigh_floor: f64) -> Self {
        let index = eigenvalues.iter().filter(|b| **b < -zero_tol).count();
        let nullity = eigenvalues.iter().filter(|b| b.abs() <= zero_tol).count();
        SpectrumReport {
            eigenvalues,
            zero_tol,
            index,
            nullity,
            ni: index + nullity,
            rayleigh_floor,
        }
    }

    /// Recount with a different tolerance.
    pub fn recount(&self, zero_tol: f64) -> Self {
        Self::new(self.eigenvalues.clone(), zero_tol, self.rayleigh_floor)
    }

    /// First eigenvalue above the zero band, if computed.
    pub fn first_positive(&self) -> Option<f64> {
        self.eigenvalues.iter().copied().find(|b| *b > self.zero_tol)
    }

    pub fn floor_holds(&self) -> bool {
        self.eigenvalues.iter().all(|b| *b >= self.rayleigh_floor - 1e-9 * self.rayleigh_floor.abs().max(1.0))
    }
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    pub report: SpectrumReport,
    /// Mass-orthonormal eigenvectors, in eigenvalue order.
    pub vectors: Vec<Vec<f64>>,
    /// `‖K x − β M x‖_{M⁻¹}` per pair.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EigenConfig {
    /// Extra block vectors beyond the requested count.
    pub guard: usize,
    /// Converged when every residual is below `tol · max(1, |β|)`.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for EigenConfig {
    fn default() -> Self {
        EigenConfig {
            guard: 8,
            tol: 1e-7,
            max_iter: 400,
            seed: 7,
            exec: Execution::Parallel,
        }
    }
}

pub fn spectrum(op: &JacobiOperator, m_lowest: usize, zero_tol: f64) -> Result<Spectrum> {
    spectrum_with(op, m_lowest, zero_tol, &EigenConfig::default())
}

fn mgs(op: &JacobiOperator, x: &mut [Vec<f64>]) {
    for k in 0..x.len() {
        for j in 0..k {
            let c = op.mass_inner(&x[k], &x[j]);
            let (a, b) = x.split_at_mut(k);
            for (y, z) in b[0].iter_mut().zip(&a[j]) {
                *y -= c * z;
            }
        }
        let n = op.mass_inner(&x[k], &x[k]).sqrt();
        x[k].iter_mut().for_each(|y| *y /= n);
    }
}

pub fn spectrum_with(op: &JacobiOperator, m_lowest: usize, zero_tol: f64, cfg: &EigenConfig) -> Result<Spectrum> {
    let n = op.dim();
    if m_lowest == 0 || m_lowest + cfg.guard > n {
        return Err(NeckError::InvalidArgument(format!(
            "cannot compute {m_lowest} eigenpairs of a {n}-dimensional problem"
        )));
    }
    if !(zero_tol > 0.0) {
        return Err(NeckError::InvalidArgument(format!("zero_tol must be positive, got {zero_tol}")));
    }
    let b = m_lowest + cfg.guard;
    let floor = op.rayleigh_floor;
    // A shift just below zero separates the kernel fastest; a failed factorization
    // means eigenvalues below it, and the floor shift is always safe.
    let mut shifts = vec![-1.0, floor - 1.0_f64.max(0.1 * floor.abs())];
    shifts.retain(|s| *s < 0.0);
    let mut factored = None;
    for &s in &shifts {
        let mut shifted = op.stiffness.clone();
        shifted.add_diagonal(&op.mass, -s);
        if let Ok(c) = BandCholesky::factor(&shifted) {
            factored = Some((s, c));
            break;
        }
    }
    let (shift, chol) = factored.ok_or_else(|| {
        NeckError::SingularSystem(format!("operator is not bounded below by the Rayleigh floor {floor:.3e}"))
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x: Vec<Vec<f64>> = (0..b)
        .map(|_| op.project(&(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>()))
        .collect();
    mgs(op, &mut x);

    let mut theta = vec![0.0; b];
    let mut residuals = vec![f64::INFINITY; m_lowest];
    for iter in 1..=cfg.max_iter {
        let mx: Vec<Vec<f64>> = x
            .iter()
            .map(|v| v.iter().zip(&op.mass).map(|(a, m)| a * m).collect())
            .collect();
        let y: Vec<Vec<f64>> = cfg.exec.map(mx.clone(), |mut r| {
            chol.solve_in_place(&mut r);
            r
        });
        // Rayleigh–Ritz: H = Yᵀ K Y = Yᵀ M X + s Yᵀ M Y, G = Yᵀ M Y
        let mut g = DMatrix::zeros(b, b);
        let mut h = DMatrix::zeros(b, b);
        for i in 0..b {
            for j in 0..=i {
                let gij = op.mass_inner(&y[i], &y[j]);
                let hij = 0.5
                    * (y[i].iter().zip(&mx[j]).map(|(a, c)| a * c).sum::<f64>()
                        + y[j].iter().zip(&mx[i]).map(|(a, c)| a * c).sum::<f64>())
                    + shift * gij;
                g[(i, j)] = gij;
                g[(j, i)] = gij;
                h[(i, j)] = hij;
                h[(j, i)] = hij;
            }
        }
        let l = g
            .clone()
            .cholesky()
            .ok_or_else(|| NeckError::SingularSystem("subspace lost rank".into()))?
            .l();
        let linv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| NeckError::SingularSystem("subspace lost rank".into()))?;
        let c = &linv * &h * linv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let eig = c.symmetric_eigen();
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
        let coeffs = linv.transpose() * &eig.eigenvectors;
        let mut nx = vec![vec![0.0; n]; b];
        for (slot, &k) in order.iter().enumerate() {
            for (i, yi) in y.iter().enumerate() {
                let a = coeffs[(i, k)];
                for (o, v) in nx[slot].iter_mut().zip(yi) {
                    *o += a * v;
                }
            }
            theta[slot] = eig.eigenvalues[k];
        }
        mgs(op, &mut nx);
        x = nx;

        if iter % 5 == 0 || iter == cfg.max_iter {
            let res: Vec<f64> = cfg.exec.map((0..m_lowest).collect(), |k| {
                let kx = op.stiffness.matvec(&x[k]);
                kx.iter()
                    .zip(&x[k])
                    .zip(&op.mass)
                    .map(|((a, v), m)| {
                        let r = a - theta[k] * m * v;
                        r * r / m
                    })
                    .sum::<f64>()
                    .sqrt()
            });
            residuals = res;
            let done = residuals
                .iter()
                .zip(&theta)
                .all(|(r, t)| *r <= cfg.tol * t.abs().max(1.0));
            if done {
                theta.truncate(m_lowest);
                x.truncate(m_lowest);
                return Ok(Spectrum {
                    report: SpectrumReport::new(theta, zero_tol, floor),
                    vectors: x,
                    residuals,
                    iterations: iter,
                });
            }
        }
    }
    Err(NeckError::NoConvergence {
        iterations: cfg.max_iter,
        residual: residuals.iter().fold(0.0, |a: f64, b| a.max(*b)),
    })
}

/// Nullity threshold: the larger of ten times the resolution change of the
/// lowest eigenvalues, `1e−6` times the lowest magnitude, and ten times the
/// largest Rayleigh quotient of the explicit kernel fields.
pub fn calibrate_zero_tol(fine: &[f64], coarse: &[f64], oracle_rayleigh: &[f64]) -> f64 {
    let rich = fine
        .iter()
        .zip(coarse)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let lowest = fine.first().map(|b| b.abs()).unwrap_or(0.0);
    let oracle = oracle_rayleigh.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    (10.0 * rich).max(1e-6 * lowest).max(10.0 * oracle).max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CylinderGrid, Field};
    use crate::harmap::RationalMap;
    use crate::jacobi::fields::holomorphic_jacobi_fields;
    use crate::jacobi::metric::ConformalMetric;
    use crate::jacobi::operator::{assemble_jacobi, assemble_jacobi_with};
    use crate::target::RoundSphere;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn identity_op(t_cap: f64, warp: f64) -> JacobiOperator {
        let grid = CylinderGrid::with_spacing(-t_cap, t_cap, 0.1, 8, 3).unwrap();
        let id = RationalMap::identity();
        let (ut, uth) = id.gradient_fields(&grid);
        let round = ConformalMetric::round_sphere();
        let rho: Vec<f64> = grid
            .t_values()
            .iter()
            .map(|&t| round.cylinder_factor(t) * (1.0 + warp * (t - 1.0).tanh().powi(2)))
            .collect();
        assemble_jacobi_with(&id.field(&grid), &ut, &uth, &rho, &RoundSphere::new(3)).unwrap()
    }

    #[test]
    fn constant_map_on_a_flat_torus() {
        let grid = CylinderGrid::periodic(0.0, 2.0 * PI, 24, 8, 3).unwrap();
        let u = Field::from_fn(&grid, |_, _, out| out.copy_from_slice(&[1.0, 0.0, 0.0]));
        let op = assemble_jacobi(&u, &ConformalMetric::flat(), &RoundSphere::new(3)).unwrap();
        let sp = spectrum(&op, 4, 1e-6).unwrap();
        assert_eq!(sp.report.nullity, 2);
        assert_eq!(sp.report.index, 0);
        // next level: modes e^{±it}, e^{±iθ} in two tangent directions
        assert!((sp.report.eigenvalues[2] - 1.0).abs() < 1e-6, "{:?}", sp.report.eigenvalues);
    }

    #[test]
    fn identity_has_the_moebius_kernel() {
        let op = identity_op(10.0, 0.0);
        let sp = spectrum(&op, 10, 1e-6).unwrap();
        let fields = holomorphic_jacobi_fields(&RationalMap::identity(), &op.grid);
        let rq: Vec<f64> = fields.iter().map(|f| op.rayleigh_quotient(&f.values)).collect();
        let tol = calibrate_zero_tol(&sp.report.eigenvalues, &sp.report.eigenvalues, &rq);
        let rep = sp.report.recount(tol);
        assert_eq!((rep.index, rep.nullity), (0, 6), "{:?}", rep.eigenvalues);
        assert!(rep.eigenvalues[6] > 10.0 * tol);
        assert!(rep.floor_holds());
        for i in 0..sp.vectors.len() {
            for j in 0..=i {
                let g = op.mass_inner(&sp.vectors[i], &sp.vectors[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-8, "({i},{j}) {g}");
            }
            assert!(op.tangency_defect(&sp.vectors[i]) < 1e-8);
        }
    }

    #[test]
    fn counts_are_conformally_invariant() {
        let a = spectrum(&identity_op(10.0, 0.0), 8, 1e-5).unwrap().report;
        let b = spectrum(&identity_op(10.0, 0.7), 8, 1e-5).unwrap().report;
        assert_eq!((a.index, a.nullity), (b.index, b.nullity));
        assert!((a.eigenvalues[6] - b.eigenvalues[6]).abs() > 1e-3);
    }

    #[test]
    fn cap_truncation_converges() {
        let a = spectrum(&identity_op(8.0, 0.0), 8, 1e-5).unwrap().report;
        let b = spectrum(&identity_op(10.0, 0.0), 8, 1e-5).unwrap().report;
        assert_eq!(a.nullity, b.nullity);
        assert!((a.eigenvalues[6] - b.eigenvalues[6]).abs() < 1e-5 * b.eigenvalues[6]);
        assert!(b.eigenvalues[..6].iter().all(|x| x.abs() < 1e-7), "{:?}", b.eigenvalues);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let op = identity_op(6.0, 0.0);
        let seq = EigenConfig {
            exec: Execution::Sequential,
            ..EigenConfig::default()
        };
        let a = spectrum_with(&op, 8, 1e-5, &seq).unwrap();
        let b = spectrum(&op, 8, 1e-5).unwrap();
        assert_eq!(a.report.eigenvalues, b.report.eigenvalues);
    }

    #[test]
    fn rejects_bad_requests() {
        let op = identity_op(3.0, 0.0);
        assert!(spectrum(&op, 0, 1e-6).is_err());
        assert!(spectrum(&op, op.dim(), 1e-6).is_err());
        assert!(spectrum(&op, 4, 0.0).is_err());
        let cfg = EigenConfig {
            max_iter: 5,
            tol: 1e-16,
            ..EigenConfig::default()
        };
        assert!(matches!(spectrum_with(&op, 4, 1e-6, &cfg), Err(NeckError::NoConvergence { .. })));
    }

    #[test]
    fn zero_tol_takes_the_largest_estimate() {
        assert!((calibrate_zero_tol(&[1e-8, 2.0], &[2e-8, 2.001], &[1e-9]) - 0.01).abs() < 1e-12);
        assert!((calibrate_zero_tol(&[-3.0], &[-3.0], &[]) - 3e-6).abs() < 1e-18);
        assert_eq!(calibrate_zero_tol(&[0.0], &[0.0], &[2e-7]), 2e-6);
    }

    proptest! {
        #[test]
        fn report_counts_are_consistent(mut ev in prop::collection::vec(-5.0f64..5.0, 1..30), tol in 1e-6f64..1.0) {
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let r = SpectrumReport::new(ev.clone(), tol, -10.0);
            prop_assert_eq!(r.index + r.nullity, r.ni);
            prop_assert_eq!(r.index + r.nullity + ev.iter().filter(|b| **b > tol).count(), ev.len());
            prop_assert!(r.floor_holds());
            if let Some(b) = r.first_positive() {
                prop_assert!(b > tol);
            }
        }
    }
}
