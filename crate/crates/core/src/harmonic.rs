//! Harmonic functions on straight cylinders: expansion in
//! `{1, s, e^{±ns}cos nθ, e^{±ns}sin nθ}`, partial sums and the coefficient
//! and remainder estimates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NeckError, Result};
use crate::grid::{fourier_modes, CylinderGrid, Field};

/// Rescaled coefficients below this fraction of `sup|h|` are unresolvable.
pub const CONDITIONING_THRESHOLD: f64 = 1e-13;
/// Relative Laplacian tolerance for accepting input as harmonic.
pub const HARMONIC_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCoefficients {
    pub n: usize,
    /// e^{ns} cos nθ
    pub a: Vec<f64>,
    /// e^{ns} sin nθ
    pub b: Vec<f64>,
    /// e^{-ns} cos nθ
    pub c: Vec<f64>,
    /// e^{-ns} sin nθ
    pub d: Vec<f64>,
}

/// A coefficient that was below the conditioning threshold and reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UncertainCoefficient {
    pub n: usize,
    pub component: usize,
    /// One of 'a', 'b', 'c', 'd'.
    pub name: char,
}

/// `h(s,θ) = a₀ + b₀s + Σ (aₙe^{ns} + cₙe^{-ns}) cos nθ + (bₙe^{ns} + dₙe^{-ns}) sin nθ`,
/// with `s = t - center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicExpansion {
    pub center: f64,
    pub a0: Vec<f64>,
    pub b0: Vec<f64>,
    pub modes: Vec<ModeCoefficients>,
    /// sup of input minus evaluated expansion over the fitting window.
    #[serde(skip)]
    pub fit_residual: f64,
    #[serde(skip)]
    pub uncertain: Vec<UncertainCoefficient>,
}

impl HarmonicExpansion {
    pub fn zero(center: f64, p: usize, max_mode: usize) -> Self {
        HarmonicExpansion {
            center,
            a0: vec![0.0; p],
            b0: vec![0.0; p],
            modes: (1..=max_mode)
                .map(|n| ModeCoefficients {
                    n,
                    a: vec![0.0; p],
                    b: vec![0.0; p],
                    c: vec![0.0; p],
                    d: vec![0.0; p],
                })
                .collect(),
            fit_residual: 0.0,
            uncertain: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.a0.len()
    }

    pub fn max_mode(&self) -> usize {
        self.modes.iter().map(|m| m.n).max().unwrap_or(0)
    }

    pub fn mode(&self, n: usize) -> Option<&ModeCoefficients> {
        self.modes.iter().find(|m| m.n == n)
    }

    pub fn mode_mut(&mut self, n: usize) -> Option<&mut ModeCoefficients> {
        self.modes.iter_mut().find(|m| m.n == n)
    }

    /// Value of `P_k` at `(t, θ)` written into `out`.
    pub fn evaluate_into(&self, k: usize, t: f64, theta: f64, out: &mut [f64]) {
        let s = t - self.center;
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.a0[c] + self.b0[c] * s;
        }
        for m in self.modes.iter().filter(|m| m.n <= k) {
            let nf = m.n as f64;
            let (ep, em) = ((nf * s).exp(), (-nf * s).exp());
            let (cs, sn) = ((nf * theta).cos(), (nf * theta).sin());
            for (c, o) in out.iter_mut().enumerate() {
                *o += (m.a[c] * ep + m.c[c] * em) * cs + (m.b[c] * ep + m.d[c] * em) * sn;
            }
        }
    }

    pub fn evaluate(&self, t: f64, theta: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.evaluate_into(usize::MAX, t, theta, &mut out);
        out
    }

    /// Same function, expanded about `center + shift`.
    pub fn recentered(&self, shift: f64) -> Self {
        let mut e = self.clone();
        e.center += shift;
        for c in 0..e.dim() {
            e.a0[c] += e.b0[c] * shift;
        }
        for m in &mut e.modes {
            let nf = m.n as f64;
            let (gp, gm) = ((nf * shift).exp(), (-nf * shift).exp());
            for c in 0..m.a.len() {
                m.a[c] *= gp;
                m.b[c] *= gp;
                m.c[c] *= gm;
                m.d[c] *= gm;
            }
        }
        e
    }
}

/// Least-squares fit of `y ≈ α₊e^{n(s-M)} + α₋e^{-n(s+M)}` (or `a + b s` for `n = 0`).
///
/// Returns the unscaled coefficients of `e^{ns}` and `e^{-ns}` together with
/// the rescaled magnitudes `|α₊|`, `|α₋|`.
pub fn fit_profile(s: &[f64], y: &[f64], n: usize, m: f64) -> ([f64; 2], [f64; 2]) {
    let rows = s.len();
    let nf = n as f64;
    let a = DMatrix::from_fn(rows, 2, |r, col| match (n, col) {
        (0, 0) => 1.0,
        (0, _) => s[r],
        (_, 0) => (nf * (s[r] - m)).exp(),
        _ => (-nf * (s[r] + m)).exp(),
    });
    let b = DVector::from_column_slice(y);
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-300)
        .unwrap_or_else(|_| DVector::zeros(2));
    if n == 0 {
        return ([sol[0], sol[1]], [sol[0].abs(), sol[1].abs()]);
    }
    let g = (-nf * m).exp();
    ([sol[0] * g, sol[1] * g], [sol[0].abs(), sol[1].abs()])
}

/// Sampling window `center ± m` as row indices of `grid`.
pub fn window_rows(grid: &CylinderGrid, center: f64, m: f64) -> Result<(usize, usize)> {
    let tol = 1e-9 * grid.dt();
    if center - m < grid.t_min - tol || center + m > grid.t_max + tol || m <= 0.0 {
        return Err(NeckError::WindowOutsideGrid {
            lo: center - m,
            hi: center + m,
        });
    }
    let lo = ((center - m - grid.t_min) / grid.dt() - 1e-9).ceil().max(0.0) as usize;
    let hi = (((center + m - grid.t_min) / grid.dt() + 1e-9).floor() as usize).min(grid.n_t - 1);
    if hi < lo + 2 {
        return Err(NeckError::InvalidGrid(format!(
            "window [{}, {}] holds fewer than three samples",
            center - m,
            center + m
        )));
    }
    Ok((lo, hi))
}

/// Harmonicity of `h` on axial rows `lo..=hi`, using the stencils of the full grid.
pub(crate) fn check_harmonic(h: &Field, lo: usize, hi: usize) -> Result<()> {
    let lo = lo.max(1);
    let hi = hi.min(h.grid.n_t - 2);
    let lap = h.laplacian().sup_on_rows(lo, hi);
    let bound = HARMONIC_TOLERANCE * h.sup_on_rows(lo, hi);
    if lap > bound {
        return Err(NeckError::NotHarmonic {
            laplacian: lap,
            bound,
        });
    }
    Ok(())
}

/// Expand `h` about the midpoint of its grid over the whole axial extent `[-M, M]`.
pub fn expand(h: &Field, m: f64, max_mode: usize) -> Result<HarmonicExpansion> {
    let center = 0.5 * (h.grid.t_min + h.grid.t_max);
    expand_about(h, center, m, max_mode)
}

/// Expand `h` restricted to `[center - M, center + M]`.
pub fn expand_about(h: &Field, center: f64, m: f64, max_mode: usize) -> Result<HarmonicExpansion> {
    if 2 * max_mode >= h.grid.n_theta {
        return Err(NeckError::Aliasing {
            mode: max_mode,
            n_theta: h.grid.n_theta,
        });
    }
    let (lo, hi) = window_rows(&h.grid, center, m)?;
    check_harmonic(h, lo, hi)?;
    let win = if lo == 0 && hi == h.grid.n_t - 1 {
        h.clone()
    } else {
        h.restrict(lo, hi)?
    };
    Ok(fit_window(&win, center, m, max_mode))
}

/// Fit without the harmonicity check; `win` is the fitting window already.
pub(crate) fn fit_window(win: &Field, center: f64, m: f64, max_mode: usize) -> HarmonicExpansion {
    let g = &win.grid;
    let p = g.vector_dim;
    let s: Vec<f64> = g.t_values().iter().map(|t| t - center).collect();
    let scale = win.sup_norm();
    let floor = CONDITIONING_THRESHOLD * scale;
    let profiles = fourier_modes(win, max_mode).expect("mode count checked by caller");
    let mut exp = HarmonicExpansion::zero(center, p, max_mode);
    let mut col = vec![0.0; g.n_t];
    for prof in &profiles {
        let n = prof.mode_index;
        for c in 0..p {
            for (part, names) in [(&prof.cos_part, ['a', 'c']), (&prof.sin_part, ['b', 'd'])] {
                if n == 0 && names[0] == 'b' {
                    continue;
                }
                for i in 0..g.n_t {
                    col[i] = part[i * p + c];
                }
                let (mut coef, rescaled) = fit_profile(&s, &col, n, m);
                if n > 0 {
                    for q in 0..2 {
                        if rescaled[q] < floor && coef[q] != 0.0 {
                            coef[q] = 0.0;
                            exp.uncertain.push(UncertainCoefficient {
                                n,
                                component: c,
                                name: names[q],
                            });
                        }
                    }
                }
                if n == 0 {
                    exp.a0[c] = coef[0];
                    exp.b0[c] = coef[1];
                } else {
                    let mc = exp.mode_mut(n).unwrap();
                    if names[0] == 'a' {
                        mc.a[c] = coef[0];
                        mc.c[c] = coef[1];
                    } else {
                        mc.b[c] = coef[0];
                        mc.d[c] = coef[1];
                    }
                }
            }
        }
    }
    exp.fit_residual = (win - &partial_sum(&exp, max_mode, g)).sup_norm();
    exp
}

/// `P_k` sampled on `grid` (its vector dimension is taken from the expansion).
pub fn partial_sum(exp: &HarmonicExpansion, k: usize, grid: &CylinderGrid) -> Field {
    let g = grid.with_vector_dim(exp.dim());
    Field::from_fn(&g, |t, th, out| exp.evaluate_into(k, t, th, out))
}

/// Measured coefficient ratios and remainder behaviour for one harmonic function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub m: f64,
    pub eps: f64,
    pub k: usize,
    /// |a₀| / ε.
    pub a0_ratio: f64,
    /// |b₀| / (2ε/M).
    pub b0_ratio: f64,
    /// Per mode n ≥ 1: max(|aₙ|,|bₙ|,|cₙ|,|dₙ|) / (4εe^{-nM}).
    pub mode_ratios: Vec<(usize, f64)>,
    /// sup_s |h - P_k|(s) e^{(k+1)(M-|s|)} / ε.
    pub remainder_constant: f64,
    /// Rayleigh estimate of the axial decay rate of `h - P_k`; `None` when the remainder vanishes.
    pub remainder_exponent: Option<f64>,
}

impl BoundsReport {
    pub fn max_coefficient_ratio(&self) -> f64 {
        self.mode_ratios
            .iter()
            .map(|r| r.1)
            .fold(self.a0_ratio.max(self.b0_ratio), f64::max)
    }
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Check the coefficient and remainder estimates for `h` on `[-M, M]` (the grid's extent).
pub fn verify_bounds(h: &Field, m: f64, eps: f64, k: usize) -> Result<BoundsReport> {
    if m < 1.0 {
        return Err(NeckError::InvalidArgument(format!("M = {m} < 1")));
    }
    let max_mode = h.grid.max_mode();
    if k > max_mode {
        return Err(NeckError::Aliasing {
            mode: k,
            n_theta: h.grid.n_theta,
        });
    }
    let exp = expand(h, m, max_mode)?;
    let mode_ratios = exp
        .modes
        .iter()
        .map(|mc| {
            let v = [&mc.a, &mc.b, &mc.c, &mc.d]
                .iter()
                .map(|x| euclid(x))
                .fold(0.0, f64::max);
            (mc.n, v / (4.0 * eps * (-(mc.n as f64) * m).exp()))
        })
        .collect();
    let r = h - &partial_sum(&exp, k, &h.grid);
    let g = &h.grid;
    let stride = g.n_theta * g.vector_dim;
    let kk = (k + 1) as f64;
    let mut remainder_constant = 0.0f64;
    for i in 0..g.n_t {
        let s = g.t(i) - exp.center;
        let row = r.values[i * stride..(i + 1) * stride]
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        remainder_constant = remainder_constant.max(row * (kk * (m - s.abs())).exp() / eps);
    }
    Ok(BoundsReport {
        m,
        eps,
        k,
        a0_ratio: euclid(&exp.a0) / eps,
        b0_ratio: euclid(&exp.b0) / (2.0 * eps / m),
        mode_ratios,
        remainder_constant,
        remainder_exponent: rayleigh_exponent(&r),
    })
}

/// `sqrt(Σ R ∂²_s R / Σ R²)`: the effective axial exponent of a harmonic remainder.
pub fn rayleigh_exponent(r: &Field) -> Option<f64> {
    let d2 = r.t_derivative(2);
    let g = &r.grid;
    let stride = g.n_theta * g.vector_dim;
    let w = g.axial_weights();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 1..g.n_t - 1 {
        for off in 0..stride {
            let x = r.values[i * stride + off];
            num += w[i] * x * d2.values[i * stride + off];
            den += w[i] * x * x;
        }
    }
    if den <= f64::MIN_POSITIVE || r.sup_norm() <= 1e-14 {
        return None;
    }
    Some((num / den).max(0.0).sqrt())
}

/// `w(s) = (1/π)∫ |h - P_order|² dθ` per axial sample.
pub fn remainder_cross_section(h: &Field, exp: &HarmonicExpansion, order: usize) -> Vec<f64> {
    let r = h - &partial_sum(exp, order, &h.grid);
    let g = &h.grid;
    let stride = g.n_theta * g.vector_dim;
    let dth = g.dtheta();
    (0..g.n_t)
        .map(|i| {
            r.values[i * stride..(i + 1) * stride]
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                * dth
                / std::f64::consts::PI
        })
        .collect()
}

/// min over interior samples of `w'' - c·w`, normalized by `max w`
/// where `w` is the cross-section of `h - P_order`.
pub fn convexity_margin(h: &Field, exp: &HarmonicExpansion, order: usize, c: f64) -> f64 {
    let w = remainder_cross_section(h, exp, order);
    let op = h.grid.axial_operator();
    let d2 = op.d2(&w);
    let wmax = w.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    (1..w.len() - 1)
        .map(|i| (d2[i] - c * w[i]) / wmax)
        .fold(f64::INFINITY, f64::min)
}

/// Random harmonic function on `grid` with modes `n ≤ modes`, coefficients drawn
/// at the natural scale `e^{-nM}` (`b₀ ~ 1/M`) and rescaled to grid sup `eps`.
pub fn random_bounded_harmonic<R: Rng>(
    grid: &CylinderGrid,
    m: f64,
    eps: f64,
    modes: usize,
    rng: &mut R,
) -> (Field, HarmonicExpansion) {
    let p = grid.vector_dim;
    let center = 0.5 * (grid.t_min + grid.t_max);
    let mut exp = HarmonicExpansion::zero(center, p, modes);
    let mut u = || rng.gen_range(-1.0..1.0);
    for c in 0..p {
        exp.a0[c] = u();
        exp.b0[c] = u() / m;
    }
    for mc in &mut exp.modes {
        let g = (-(mc.n as f64) * m).exp();
        for c in 0..p {
            mc.a[c] = u() * g;
            mc.b[c] = u() * g;
            mc.c[c] = u() * g;
            mc.d[c] = u() * g;
        }
    }
    let raw = partial_sum(&exp, modes, grid);
    let scale = eps / raw.sup_norm();
    for c in 0..p {
        exp.a0[c] *= scale;
        exp.b0[c] *= scale;
    }
    for mc in &mut exp.modes {
        for v in [&mut mc.a, &mut mc.b, &mut mc.c, &mut mc.d] {
            v.iter_mut().for_each(|x| *x *= scale);
        }
    }
    (raw.scaled(scale), exp)
}
