//! Cylinder domains `[t_min, t_max] × S¹`, ℝ^p-valued fields on them, the
//! angular Fourier decomposition, and the neck weight η(t) = e^t + λe^{-t}.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{NeckError, Result};
use crate::stencil::{AxialOperator, DEFAULT_ORDER};

/// Uniform axial samples times a uniform angular ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub n_t: usize,
    pub n_theta: usize,
    pub vector_dim: usize,
    /// Identify `t_min` with `t_max` (torus-like domain). Node `n_t` would coincide with node 0.
    #[serde(default)]
    pub periodic_t: bool,
}

impl CylinderGrid {
    pub fn new(t_min: f64, t_max: f64, n_t: usize, n_theta: usize, vector_dim: usize) -> Result<Self> {
        let g = CylinderGrid {
            t_min,
            t_max,
            n_t,
            n_theta,
            vector_dim,
            periodic_t: false,
        };
        g.validate()?;
        Ok(g)
    }

    /// Grid with axial spacing as close as possible to `dt` (never coarser).
    pub fn with_spacing(t_min: f64, t_max: f64, dt: f64, n_theta: usize, vector_dim: usize) -> Result<Self> {
        let n_t = ((t_max - t_min) / dt).ceil() as usize + 1;
        Self::new(t_min, t_max, n_t, n_theta, vector_dim)
    }

    pub fn periodic(t_min: f64, t_max: f64, n_t: usize, n_theta: usize, vector_dim: usize) -> Result<Self> {
        let g = CylinderGrid {
            t_min,
            t_max,
            n_t,
            n_theta,
            vector_dim,
            periodic_t: true,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_min < self.t_max) || !self.t_min.is_finite() || !self.t_max.is_finite() {
            return Err(NeckError::InvalidGrid(format!(
                "need t_min < t_max, got [{}, {}]",
                self.t_min, self.t_max
            )));
        }
        if self.n_theta < 4 || self.n_theta % 2 != 0 {
            return Err(NeckError::InvalidGrid(format!(
                "n_theta must be even and >= 4, got {}",
                self.n_theta
            )));
        }
        if self.n_t < 2 {
            return Err(NeckError::InvalidGrid("n_t must be at least 2".into()));
        }
        if self.vector_dim == 0 {
            return Err(NeckError::InvalidGrid("vector_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        if self.periodic_t {
            (self.t_max - self.t_min) / self.n_t as f64
        } else {
            (self.t_max - self.t_min) / (self.n_t - 1) as f64
        }
    }

    pub fn dtheta(&self) -> f64 {
        2.0 * PI / self.n_theta as f64
    }

    #[inline]
    pub fn t(&self, i: usize) -> f64 {
        self.t_min + i as f64 * self.dt()
    }

    #[inline]
    pub fn theta(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.n_theta as f64
    }

    pub fn t_values(&self) -> Vec<f64> {
        (0..self.n_t).map(|i| self.t(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.n_t * self.n_theta * self.vector_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same sampling, different ambient dimension.
    pub fn with_vector_dim(&self, p: usize) -> Self {
        CylinderGrid {
            vector_dim: p,
            ..self.clone()
        }
    }

    /// Highest angular mode resolvable without aliasing.
    pub fn max_mode(&self) -> usize {
        self.n_theta / 2 - 1
    }

    pub fn axial_operator(&self) -> AxialOperator {
        AxialOperator::new(self.n_t, self.dt(), DEFAULT_ORDER, self.periodic_t)
    }

    /// Index of the axial sample nearest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let k = ((t - self.t_min) / self.dt()).round();
        k.clamp(0.0, (self.n_t - 1) as f64) as usize
    }

    /// Trapezoid weights for ∫ dt (uniform for periodic grids).
    pub fn axial_weights(&self) -> Vec<f64> {
        let h = self.dt();
        let mut w = vec![h; self.n_t];
        if !self.periodic_t {
            w[0] *= 0.5;
            w[self.n_t - 1] *= 0.5;
        }
        w
    }
}

/// An ℝ^p-valued function sampled on a [`CylinderGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: CylinderGrid,
    /// Layout `[(i_t * n_theta + j_theta) * p + component]`.
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &CylinderGrid) -> Self {
        Field {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: &CylinderGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(NeckError::InvalidArgument(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Field {
            grid: grid.clone(),
            values,
        })
    }

    /// Sample `f(t, θ, out)` at every grid point.
    pub fn from_fn<F: Fn(f64, f64, &mut [f64])>(grid: &CylinderGrid, f: F) -> Self {
        let p = grid.vector_dim;
        let mut values = vec![0.0; grid.len()];
        for i in 0..grid.n_t {
            let t = grid.t(i);
            for j in 0..grid.n_theta {
                let k = (i * grid.n_theta + j) * p;
                f(t, grid.theta(j), &mut values[k..k + p]);
            }
        }
        Field {
            grid: grid.clone(),
            values,
        }
    }

    pub fn scalar_from_fn<F: Fn(f64, f64) -> f64>(grid: &CylinderGrid, f: F) -> Self {
        Self::from_fn(grid, |t, th, out| {
            out.iter_mut().for_each(|o| *o = f(t, th));
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.grid.vector_dim
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, c: usize) -> usize {
        (i * self.grid.n_theta + j) * self.grid.vector_dim + c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.values[self.index(i, j, c)]
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> &[f64] {
        let k = self.index(i, j, 0);
        &self.values[k..k + self.grid.vector_dim]
    }

    #[inline]
    pub fn point_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let k = self.index(i, j, 0);
        let p = self.grid.vector_dim;
        &mut self.values[k..k + p]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pointwise Euclidean norm `|field(t_i, θ_j)|`, row-major in `(i, j)`.
    pub fn pointwise_norms(&self) -> Vec<f64> {
        self.values
            .chunks(self.grid.vector_dim)
            .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn map_points<F: Fn(f64, &[f64], &mut [f64])>(&self, f: F) -> Self {
        let mut out = Field::zeros(&self.grid);
        let p = self.dim();
        for i in 0..self.grid.n_t {
            let t = self.grid.t(i);
            for j in 0..self.grid.n_theta {
                let k = self.index(i, j, 0);
                f(t, &self.values[k..k + p], &mut out.values[k..k + p]);
            }
        }
        out
    }

    /// Axial profile of one component at one angle.
    pub fn axial_line(&self, j: usize, c: usize) -> Vec<f64> {
        (0..self.grid.n_t).map(|i| self.get(i, j, c)).collect()
    }

    /// Restrict to axial samples `lo..=hi`.
    pub fn restrict(&self, lo: usize, hi: usize) -> Result<Self> {
        if lo >= hi || hi >= self.grid.n_t {
            return Err(NeckError::InvalidArgument(format!(
                "bad restriction {lo}..={hi} of {} samples",
                self.grid.n_t
            )));
        }
        let grid = CylinderGrid {
            t_min: self.grid.t(lo),
            t_max: self.grid.t(hi),
            n_t: hi - lo + 1,
            periodic_t: false,
            ..self.grid.clone()
        };
        let stride = self.grid.n_theta * self.grid.vector_dim;
        let values = self.values[lo * stride..(hi + 1) * stride].to_vec();
        Ok(Field { grid, values })
    }

    /// Samples of the cross-section `i`, layout `[j·p + c]`.
    pub fn row(&self, i: usize) -> &[f64] {
        let stride = self.grid.n_theta * self.dim();
        &self.values[i * stride..(i + 1) * stride]
    }

    /// ∂_θ^order by exact trigonometric interpolation on the ring.
    pub fn theta_derivative(&self, order: usize) -> Self {
        let nth = self.grid.n_theta;
        let d = cached_derivative_matrix(nth, order);
        let p = self.dim();
        let mut out = Field::zeros(&self.grid);
        for i in 0..self.grid.n_t {
            let src = self.row(i);
            let dst = &mut out.values[i * nth * p..(i + 1) * nth * p];
            for j in 0..nth {
                let drow = &d[j * nth..(j + 1) * nth];
                for (k, w) in drow.iter().enumerate() {
                    if *w != 0.0 {
                        for c in 0..p {
                            dst[j * p + c] += w * src[k * p + c];
                        }
                    }
                }
            }
        }
        out
    }

    /// ∂_t (order 1) or ∂_t² (order 2) with the grid's axial stencils.
    pub fn t_derivative_with(&self, op: &AxialOperator, order: usize) -> Self {
        assert!(order == 1 || order == 2);
        let mut out = Field::zeros(&self.grid);
        let stride = self.grid.n_theta * self.dim();
        for i in 0..self.grid.n_t {
            let row = if order == 1 { op.d1_row(i) } else { op.d2_row(i) };
            for off in 0..stride {
                out.values[i * stride + off] = row.apply_strided(&self.values, off, stride);
            }
        }
        out
    }

    pub fn t_derivative(&self, order: usize) -> Self {
        self.t_derivative_with(&self.grid.axial_operator(), order)
    }

    /// Flat cylinder Laplacian ∂_t² + ∂_θ².
    pub fn laplacian_with(&self, op: &AxialOperator) -> Self {
        &self.t_derivative_with(op, 2) + &self.theta_derivative(2)
    }

    pub fn laplacian(&self) -> Self {
        self.laplacian_with(&self.grid.axial_operator())
    }

    /// Sup over axial samples in `lo..=hi` (all angles, all components).
    pub fn sup_on_rows(&self, lo: usize, hi: usize) -> f64 {
        let stride = self.grid.n_theta * self.dim();
        self.values[lo * stride..(hi + 1) * stride]
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sup over rows whose equation is enforced (drops the two ends unless periodic).
    pub fn sup_interior(&self) -> f64 {
        if self.grid.periodic_t {
            self.sup_norm()
        } else {
            self.sup_on_rows(1, self.grid.n_t - 2)
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let p = self.dim();
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain(std::iter::once("theta".to_string()))
            .chain((0..p).map(|c| format!("c{c}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.grid.n_t {
            for j in 0..self.grid.n_theta {
                write!(w, "{:e},{:e}", self.grid.t(i), self.grid.theta(j))?;
                for c in 0..p {
                    write!(w, ",{:e}", self.get(i, j, c))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(grid: &CylinderGrid, r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| NeckError::Parse("empty snapshot".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() != 2 + grid.vector_dim || cols[0] != "t" || cols[1] != "theta" {
            return Err(NeckError::Parse(format!("unexpected header `{header}`")));
        }
        let mut values = Vec::with_capacity(grid.len());
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            for tok in line.split(',').skip(2) {
                values.push(
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|e| NeckError::Parse(format!("`{tok}`: {e}")))?,
                );
            }
        }
        Field::from_values(grid, values)
    }

    /// Grid descriptor accompanying a CSV snapshot.
    pub fn descriptor_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.grid)?)
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        assert_eq!(self.grid, rhs.grid, "fields live on different grids");
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&rhs.values).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        assert_eq!(self.grid, rhs.grid, "fields live on different grids");
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&rhs.values).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, s: f64) -> Field {
        self.scaled(s)
    }
}

/// Cosine/sine tables for one angular ring of `n` samples.
#[derive(Debug, Clone)]
pub struct AngularTransform {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl AngularTransform {
    pub fn new(n: usize) -> Self {
        let mut cos = vec![0.0; n];
        let mut sin = vec![0.0; n];
        for k in 0..n {
            let a = 2.0 * PI * k as f64 / n as f64;
            cos[k] = a.cos();
            sin[k] = a.sin();
        }
        AngularTransform { n, cos, sin }
    }

    #[inline]
    fn trig(&self, m: usize, j: usize) -> (f64, f64) {
        let k = (m * j) % self.n;
        (self.cos[k], self.sin[k])
    }

    /// Coefficients `(a_m, b_m)` with `f = a_0 + Σ a_m cos mθ + b_m sin mθ`, for `m ≤ n/2`.
    pub fn analyze(&self, ring: &[f64], max_mode: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut a = vec![0.0; max_mode + 1];
        let mut b = vec![0.0; max_mode + 1];
        for m in 0..=max_mode {
            let (mut sa, mut sb) = (0.0, 0.0);
            for (j, &f) in ring.iter().enumerate() {
                let (c, s) = self.trig(m, j);
                sa += f * c;
                sb += f * s;
            }
            let norm = if m == 0 || 2 * m == n { 1.0 / n as f64 } else { 2.0 / n as f64 };
            a[m] = sa * norm;
            b[m] = if m == 0 || 2 * m == n { 0.0 } else { sb * norm };
        }
        (a, b)
    }

    pub fn synthesize(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|j| {
                a.iter()
                    .zip(b)
                    .enumerate()
                    .map(|(m, (am, bm))| {
                        let (c, s) = self.trig(m, j);
                        am * c + bm * s
                    })
                    .sum()
            })
            .collect()
    }

    /// Row-major `n × n` matrix of [`AngularTransform::derivative`].
    pub fn derivative_matrix(&self, order: usize) -> Vec<f64> {
        let n = self.n;
        let mut m = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for k in 0..n {
            e[k] = 1.0;
            let col = self.derivative(&e, order);
            e[k] = 0.0;
            for j in 0..n {
                m[j * n + k] = if col[j].abs() < 1e-14 { 0.0 } else { col[j] };
            }
        }
        m
    }

    /// Derivative of the trigonometric interpolant. The Nyquist cosine has zero
    /// odd derivatives on the ring and contributes `(-(n/2)²)^{k}` to even ones.
    pub fn derivative(&self, ring: &[f64], order: usize) -> Vec<f64> {
        let nyq = self.n / 2;
        let (a, b) = self.analyze(ring, nyq);
        let mut da = vec![0.0; nyq + 1];
        let mut db = vec![0.0; nyq + 1];
        for m in 1..=nyq {
            let mf = m as f64;
            let (mut x, mut y) = (a[m], b[m]);
            for _ in 0..order {
                // d/dθ (x cos + y sin) = m y cos - m x sin
                let nx = mf * y;
                let ny = -mf * x;
                x = nx;
                y = ny;
            }
            if m == nyq {
                y = 0.0;
                if order % 2 == 1 {
                    x = 0.0;
                }
            }
            da[m] = x;
            db[m] = y;
        }
        self.synthesize(&da, &db)
    }
}

thread_local! {
    static DERIVATIVE_MATRICES: std::cell::RefCell<std::collections::HashMap<(usize, usize), std::rc::Rc<Vec<f64>>>> =
        Default::default();
}

fn cached_derivative_matrix(n: usize, order: usize) -> std::rc::Rc<Vec<f64>> {
    DERIVATIVE_MATRICES.with(|m| {
        m.borrow_mut()
            .entry((n, order))
            .or_insert_with(|| std::rc::Rc::new(AngularTransform::new(n).derivative_matrix(order)))
            .clone()
    })
}

/// Per-mode axial profiles; layouts `[i_t * p + component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeProfile {
    pub mode_index: usize,
    pub cos_part: Vec<f64>,
    pub sin_part: Vec<f64>,
}

/// Angular Fourier analysis of every axial cross-section.
///
/// Mode `n ≥ 1` profiles are `(1/π)∫ f cos nθ dθ` and `(1/π)∫ f sin nθ dθ`;
/// mode 0 is the mean `(1/2π)∫ f dθ`. The discrete sums are exact for
/// band-limited data.
pub fn fourier_modes(field: &Field, max_mode: usize) -> Result<Vec<ModeProfile>> {
    let g = &field.grid;
    if 2 * max_mode >= g.n_theta {
        return Err(NeckError::Aliasing {
            mode: max_mode,
            n_theta: g.n_theta,
        });
    }
    Ok(spectrum(field, max_mode))
}

/// All angular modes `0..=n_theta/2`, Nyquist included (its sine part is zero).
pub fn full_spectrum(field: &Field) -> Vec<ModeProfile> {
    spectrum(field, field.grid.n_theta / 2)
}

fn spectrum(field: &Field, max_mode: usize) -> Vec<ModeProfile> {
    let g = &field.grid;
    let ring = AngularTransform::new(g.n_theta);
    let p = g.vector_dim;
    let mut modes: Vec<ModeProfile> = (0..=max_mode)
        .map(|n| ModeProfile {
            mode_index: n,
            cos_part: vec![0.0; g.n_t * p],
            sin_part: vec![0.0; g.n_t * p],
        })
        .collect();
    let mut buf = vec![0.0; g.n_theta];
    for i in 0..g.n_t {
        for c in 0..p {
            for j in 0..g.n_theta {
                buf[j] = field.get(i, j, c);
            }
            let (a, b) = ring.analyze(&buf, max_mode);
            for n in 0..=max_mode {
                modes[n].cos_part[i * p + c] = a[n];
                modes[n].sin_part[i * p + c] = b[n];
            }
        }
    }
    modes
}

/// Inverse of [`fourier_modes`].
pub fn synthesize(grid: &CylinderGrid, modes: &[ModeProfile]) -> Field {
    let p = grid.vector_dim;
    let ring = AngularTransform::new(grid.n_theta);
    let mut out = Field::zeros(grid);
    for mode in modes {
        let n = mode.mode_index;
        for j in 0..grid.n_theta {
            let (c, s) = ring.trig(n, j);
            for i in 0..grid.n_t {
                for k in 0..p {
                    let idx = out.index(i, j, k);
                    out.values[idx] += mode.cos_part[i * p + k] * c + mode.sin_part[i * p + k] * s;
                }
            }
        }
    }
    out
}

/// η(t) = e^t + λe^{-t}.
#[inline]
pub fn eta_weight(t: f64, lambda: f64) -> f64 {
    t.exp() + lambda * (-t).exp()
}

/// max |field| / η^α over the grid.
pub fn weighted_sup_norm(field: &Field, alpha: f64, lambda: f64) -> f64 {
    let g = &field.grid;
    let stride = g.n_theta * g.vector_dim;
    (0..g.n_t)
        .map(|i| {
            let w = eta_weight(g.t(i), lambda).powf(alpha);
            field.values[i * stride..(i + 1) * stride]
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
                / w
        })
        .fold(0.0, f64::max)
}
