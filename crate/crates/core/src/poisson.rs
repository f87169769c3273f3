//! Length-uniform Poisson solver on neck cylinders, built piece by piece from
//! per-mode potentials with harmonic truncation, and an independent
//! per-mode boundary-value oracle.

use rand::Rng;
use serde::Serialize;

use crate::error::{NeckError, Result};
use crate::exec::Execution;
use crate::grid::{eta_weight, full_spectrum, synthesize, weighted_sup_norm, CylinderGrid, Field, ModeProfile};
use crate::harmonic::{expand_about, partial_sum};
use crate::linalg::BandLu;
use crate::stencil::AxialOperator;

/// Weighted residual tolerance used when none is configured.
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonConfig {
    /// Bound on `sup |Δ̃v - f| / η^α`.
    pub tolerance: f64,
    pub execution: Execution,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        PoissonConfig {
            tolerance: DEFAULT_TOLERANCE,
            execution: Execution::default(),
        }
    }
}

/// Homogeneous end conditions for one angular mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeBoundary {
    Dirichlet,
    Neumann,
    /// `v' = n v` at the bottom and `v' = -n v` at the top; Dirichlet for n = 0.
    Decay,
    /// `v = v' = 0` at the bottom.
    PinnedBottom,
    /// `v = v' = 0` at the top.
    PinnedTop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySpec {
    pub default: ModeBoundary,
    pub overrides: Vec<(usize, ModeBoundary)>,
}

impl BoundarySpec {
    pub fn uniform(b: ModeBoundary) -> Self {
        BoundarySpec {
            default: b,
            overrides: Vec::new(),
        }
    }

    pub fn dirichlet() -> Self {
        Self::uniform(ModeBoundary::Dirichlet)
    }

    pub fn with(mut self, n: usize, b: ModeBoundary) -> Self {
        self.overrides.retain(|o| o.0 != n);
        self.overrides.push((n, b));
        self
    }

    pub fn for_mode(&self, n: usize) -> ModeBoundary {
        self.overrides
            .iter()
            .find(|o| o.0 == n)
            .map(|o| o.1)
            .unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, Copy)]
enum EndRow {
    Value,
    Slope,
    Robin(f64),
}

/// Per-mode operator `d²/ds² - n²` on the axial grid with two boundary rows.
struct ModeOperator<'a> {
    op: &'a AxialOperator,
}

impl<'a> ModeOperator<'a> {
    fn end_row(&self, at: usize, kind: EndRow) -> Vec<(usize, f64)> {
        match kind {
            EndRow::Value => vec![(at, 1.0)],
            EndRow::Slope | EndRow::Robin(_) => {
                let r = self.op.d1_row(at);
                let mut row: Vec<(usize, f64)> = r.nodes.iter().cloned().zip(r.weights.iter().cloned()).collect();
                if let EndRow::Robin(k) = kind {
                    for e in &mut row {
                        if e.0 == at {
                            e.1 -= k;
                        }
                    }
                }
                row
            }
        }
    }

    fn factor(&self, n: usize, bottom: EndRow, top: EndRow) -> Result<BandLu> {
        let nt = self.op.n;
        let n2 = (n * n) as f64;
        let mut rows = Vec::with_capacity(nt);
        rows.push(self.end_row(0, bottom));
        for i in 1..nt - 1 {
            let r = self.op.d2_row(i);
            let mut row: Vec<(usize, f64)> = r.nodes.iter().cloned().zip(r.weights.iter().cloned()).collect();
            match row.iter_mut().find(|e| e.0 == i) {
                Some(e) => e.1 -= n2,
                None => row.push((i, -n2)),
            }
            rows.push(row);
        }
        rows.push(self.end_row(nt - 1, top));
        BandLu::from_rows(&rows)
    }
}

/// Solve with the interior right-hand side `rhs` (end entries are replaced by `ends`).
fn solve_rows(lu: &BandLu, rhs: &[f64], ends: (f64, f64)) -> Vec<f64> {
    let mut b = rhs.to_vec();
    let last = b.len() - 1;
    b[0] = ends.0;
    b[last] = ends.1;
    lu.solve_in_place(&mut b);
    b
}

/// Factorizations shared by every piece of one weighted solve.
///
/// All piece solutions are computed in the local index coordinate `x = r·dt`;
/// pieces pinned at the top are solved on reversed profiles, which the
/// symmetric stencils make equivalent.
struct PieceSolver {
    op: AxialOperator,
    dirichlet0: BandLu,
    decay: Vec<BandLu>,
    /// Mode-n solution with decay at the bottom and value 1 at the top, n = 1..=k.
    rising: Vec<Vec<f64>>,
}

impl PieceSolver {
    fn new(grid: &CylinderGrid, k: usize) -> Result<Self> {
        let op = grid.axial_operator();
        let mo = ModeOperator { op: &op };
        let dirichlet0 = mo.factor(0, EndRow::Value, EndRow::Value)?;
        let nyq = grid.n_theta / 2;
        let mut decay = Vec::with_capacity(nyq);
        for n in 1..=nyq {
            let kf = n as f64;
            decay.push(mo.factor(n, EndRow::Robin(kf), EndRow::Robin(-kf))?);
        }
        let zero = vec![0.0; grid.n_t];
        let mut rising = Vec::new();
        for n in 1..=k.min(nyq) {
            let lu = mo.factor(n, EndRow::Robin(n as f64), EndRow::Value)?;
            rising.push(solve_rows(&lu, &zero, (0.0, 1.0)));
        }
        Ok(PieceSolver {
            op,
            dirichlet0,
            decay,
            rising,
        })
    }

    /// Decaying representative of a mode n ≥ 1 profile.
    fn decaying(&self, n: usize, rhs: &[f64]) -> Vec<f64> {
        solve_rows(&self.decay[n - 1], rhs, (0.0, 0.0))
    }

    /// Factorization of the system whose solutions vanish on rows `< q`
    /// (`q = 0`: value and slope vanish at row 0) with a prescribed last value.
    fn pinned_lu(&self, n: usize, q: usize) -> Result<BandLu> {
        let nt = self.op.n;
        let n2 = (n * n) as f64;
        let mut rows = Vec::with_capacity(nt - q);
        let first_eq = if q == 0 {
            rows.push(vec![(0, 1.0)]);
            let r = self.op.d1_row(0);
            rows.push(r.nodes.iter().cloned().zip(r.weights.iter().cloned()).collect());
            2
        } else {
            q
        };
        for i in first_eq..nt - 1 {
            let r = self.op.d2_row(i);
            let mut row: Vec<(usize, f64)> = r
                .nodes
                .iter()
                .cloned()
                .zip(r.weights.iter().cloned())
                .filter(|e| e.0 >= q)
                .map(|(j, w)| (j - q, w))
                .collect();
            match row.iter_mut().find(|e| e.0 == i - q) {
                Some(e) => e.1 -= n2,
                None => row.push((i - q, -n2)),
            }
            rows.push(row);
        }
        rows.push(vec![(nt - 1 - q, 1.0)]);
        BandLu::from_rows(&rows)
    }

    /// Last value of the pinned solution, read off a bounded representative.
    fn pinned_top_value(&self, n: usize, rhs: &[f64], q: usize) -> f64 {
        let nt = rhs.len();
        if n == 0 {
            let w = solve_rows(&self.dirichlet0, rhs, (0.0, 0.0));
            let b = self.op.d1_row(q).apply(&w);
            w[nt - 1] - w[q] - b * (nt - 1 - q) as f64 * self.op.h
        } else {
            let w = self.decaying(n, rhs);
            let k = &self.rising[n - 1];
            w[nt - 1] - w[q] / k[q] * k[nt - 1]
        }
    }

    /// Solution of the mode-n equation vanishing below row `q`.
    fn pinned(&self, n: usize, lu: &BandLu, q: usize, rhs: &[f64]) -> Vec<f64> {
        let nt = rhs.len();
        let top = self.pinned_top_value(n, rhs, q);
        let mut b: Vec<f64> = rhs[q..].to_vec();
        if q == 0 {
            b[0] = 0.0;
            b[1] = 0.0;
        }
        b[nt - 1 - q] = top;
        lu.solve_in_place(&mut b);
        let mut v = vec![0.0; q];
        v.extend_from_slice(&b);
        v
    }
}

/// Assignment of axial samples to unit pieces `(i-1, i]` of the recentred coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct PieceLayout {
    pub center: f64,
    pub lo: i64,
    pub hi: i64,
    /// Piece owning each axial sample.
    pub owner: Vec<i64>,
}

impl PieceLayout {
    pub fn new(grid: &CylinderGrid, lambda: f64) -> Self {
        let center = recentre(lambda);
        let tol = 1e-9;
        let s_min = grid.t_min - center;
        let s_max = grid.t_max - center;
        let mut lo = (s_min - tol).ceil() as i64 + 1;
        let hi = (s_max + tol).floor() as i64;
        if lo > hi {
            lo = hi;
        }
        let owner = (0..grid.n_t)
            .map(|r| (((grid.t(r) - center) - tol).ceil() as i64).clamp(lo, hi))
            .collect();
        PieceLayout { center, lo, hi, owner }
    }

    pub fn pieces(&self) -> Vec<i64> {
        (self.lo..=self.hi).collect()
    }

    fn check(&self, i: i64) -> Result<()> {
        if i < self.lo || i > self.hi {
            return Err(NeckError::PieceOutOfRange {
                piece: i,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(())
    }
}

/// Axial position of the neck centre, `½ log λ` (0 when λ = 0).
pub fn recentre(lambda: f64) -> f64 {
    if lambda > 0.0 {
        0.5 * lambda.ln()
    } else {
        0.0
    }
}

fn masked(profile: &[f64], p: usize, c: usize, owner: &[i64], i: i64) -> Vec<f64> {
    owner
        .iter()
        .enumerate()
        .map(|(r, &o)| if o == i { profile[r * p + c] } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PieceSolution {
    pub piece_index: i64,
    pub raw: Field,
    pub modified: Field,
    pub truncation_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PieceSummary {
    pub i: i64,
    pub sup_raw: f64,
    pub sup_modified: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedSolveReport {
    #[serde(skip)]
    pub solution: Field,
    pub alpha: f64,
    pub lambda: f64,
    #[serde(rename = "L")]
    pub half_length: f64,
    /// sup |v| / η^α.
    pub observed_constant: f64,
    /// sup |Δ̃v - f| / η^α over rows carrying the equation.
    pub residual: f64,
    #[serde(skip)]
    pub truncation_order: usize,
    pub per_piece: Vec<PieceSummary>,
}

impl WeightedSolveReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct PieceModes {
    raw: Vec<ModeProfile>,
    modified: Vec<ModeProfile>,
}

/// Rows between a piece edge and the cut of its pinned representative; enough
/// for the stencil's parasitic response to the source jump to die out.
const PIN_MARGIN_ROWS: usize = 12;

/// Orientation and cut row of the pinned representative of piece `i`. Pieces
/// above the centre vanish below the cut, pieces below it vanish above; `q`
/// is counted from the pinned end. The cut sits a fixed number of rows beyond
/// the samples the piece owns (edge pieces own everything past the last edge).
fn pin_for(layout: &PieceLayout, nt: usize, i: i64) -> (bool, usize) {
    let upward = i >= 1;
    let first = layout.owner.iter().position(|&o| o == i).unwrap_or(0);
    let last = layout.owner.iter().rposition(|&o| o == i).unwrap_or(nt - 1);
    let q = if upward {
        first.saturating_sub(PIN_MARGIN_ROWS)
    } else {
        (nt - 1 - last).saturating_sub(PIN_MARGIN_ROWS)
    };
    (upward, q.min(nt.saturating_sub(12)))
}

/// Pieces whose interval `(i-1, i]` lies outside `(-1, 1]` carry the
/// truncation `v_i − P_k`; the two central pieces keep their raw modes.
fn truncated(i: i64) -> bool {
    i >= 2 || i <= -1
}

fn reversed(v: &[f64]) -> Vec<f64> {
    v.iter().rev().cloned().collect()
}

fn solve_piece_modes(
    solver: &PieceSolver,
    spectrum: &[ModeProfile],
    layout: &PieceLayout,
    grid: &CylinderGrid,
    i: i64,
    k: Option<usize>,
) -> Result<PieceModes> {
    let p = grid.vector_dim;
    let nt = grid.n_t;
    let (upward, q) = pin_for(layout, nt, i);
    let orient = |v: Vec<f64>| if upward { v } else { reversed(&v) };
    let balanced = layout.lo == layout.hi && q == 0;
    let pinned_modes = match k {
        Some(k) if truncated(i) => k,
        _ => 0,
    };
    let mut lus = Vec::new();
    for n in 0..=pinned_modes.min(grid.n_theta / 2) {
        lus.push(solver.pinned_lu(n, q)?);
    }
    let mut raw = Vec::with_capacity(spectrum.len());
    let mut modified = Vec::with_capacity(spectrum.len());
    for prof in spectrum {
        let n = prof.mode_index;
        let mut r_mode = ModeProfile {
            mode_index: n,
            cos_part: vec![0.0; nt * p],
            sin_part: vec![0.0; nt * p],
        };
        let mut m_mode = r_mode.clone();
        for c in 0..p {
            for (src, dst_raw, dst_mod) in [
                (&prof.cos_part, &mut r_mode.cos_part, &mut m_mode.cos_part),
                (&prof.sin_part, &mut r_mode.sin_part, &mut m_mode.sin_part),
            ] {
                let rhs = masked(src, p, c, &layout.owner, i);
                if rhs.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let local = orient(rhs);
                let pin = |n: usize| orient(solver.pinned(n, &lus[n], q, &local));
                let (v_raw, v_mod) = if n == 0 {
                    let mut v = pin(0);
                    if balanced {
                        // a lone piece owns both ends: average the two pinned
                        // representatives so symmetric data gets an odd slope
                        let w = orient(reversed(&solver.pinned(0, &lus[0], q, &reversed(&local))));
                        for (a, b) in v.iter_mut().zip(&w) {
                            *a = 0.5 * (*a + b);
                        }
                    }
                    (v.clone(), v)
                } else {
                    let v = orient(solver.decaying(n, &local));
                    if n <= pinned_modes {
                        (v, pin(n))
                    } else {
                        (v.clone(), v)
                    }
                };
                for r in 0..nt {
                    dst_raw[r * p + c] = v_raw[r];
                    dst_mod[r * p + c] = v_mod[r];
                }
            }
        }
        raw.push(r_mode);
        modified.push(m_mode);
    }
    Ok(PieceModes { raw, modified })
}

/// Truncation order `k` with `k < α < k + 1`.
pub fn truncation_order(alpha: f64) -> Result<usize> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(NeckError::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    if (alpha - alpha.round()).abs() < 1e-12 {
        return Err(NeckError::InvalidArgument(format!("alpha = {alpha} is an integer")));
    }
    Ok(alpha.floor() as usize)
}

/// Move α off an integer by −0.05 when it is within 0.01 of one.
pub fn nudge_alpha(alpha: f64) -> f64 {
    if (alpha - alpha.round()).abs() < 0.01 {
        alpha - 0.05
    } else {
        alpha
    }
}

/// `v` for a single piece: the potential of `f·χ_{𝒞_i}`.
pub fn solve_piece(f: &Field, i: i64, lambda: f64) -> Result<Field> {
    Ok(piece_solution(f, i, None, lambda)?.raw)
}

/// Raw and truncated solutions for piece `i` (`k = None` skips truncation).
pub fn piece_solution(f: &Field, i: i64, k: Option<usize>, lambda: f64) -> Result<PieceSolution> {
    let layout = PieceLayout::new(&f.grid, lambda);
    layout.check(i)?;
    let solver = PieceSolver::new(&f.grid, k.unwrap_or(0))?;
    let spectrum = full_spectrum(f);
    let pm = solve_piece_modes(&solver, &spectrum, &layout, &f.grid, i, k)?;
    let raw = synthesize(&f.grid, &pm.raw);
    let modified = if k.is_some() {
        synthesize(&f.grid, &pm.modified)
    } else {
        raw.clone()
    };
    Ok(PieceSolution {
        piece_index: i,
        raw,
        modified,
        truncation_order: k.unwrap_or(0),
    })
}

/// `raw - P_k`, with `P_k` fitted on `[-M, M]` of the recentred coordinate.
pub fn truncate_piece(raw: &Field, k: usize, m: f64, lambda: f64) -> Result<Field> {
    let exp = expand_about(raw, recentre(lambda), m, k)?;
    Ok(raw - &partial_sum(&exp, k, &raw.grid))
}

/// `sup |Δ̃v - f| / η^α` over rows `1..n_t-1`.
pub fn weighted_residual(v: &Field, f: &Field, alpha: f64, lambda: f64) -> f64 {
    let r = &v.laplacian() - f;
    let g = &r.grid;
    let stride = g.n_theta * g.vector_dim;
    let rows = if g.periodic_t { 0..g.n_t } else { 1..g.n_t - 1 };
    rows.map(|i| {
        let w = eta_weight(g.t(i), lambda).powf(alpha);
        r.values[i * stride..(i + 1) * stride]
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()))
            / w
    })
    .fold(0.0, f64::max)
}

pub fn solve_weighted(f: &Field, alpha: f64, lambda: f64) -> Result<WeightedSolveReport> {
    solve_weighted_with(f, alpha, lambda, &PoissonConfig::default())
}

/// Solve `Δ̃v = f` on the whole grid as a sum of truncated piece potentials.
pub fn solve_weighted_with(f: &Field, alpha: f64, lambda: f64, cfg: &PoissonConfig) -> Result<WeightedSolveReport> {
    if lambda < 0.0 {
        return Err(NeckError::InvalidArgument(format!("lambda = {lambda} < 0")));
    }
    let k = truncation_order(alpha)?;
    let grid = &f.grid;
    let layout = PieceLayout::new(grid, lambda);
    let solver = PieceSolver::new(grid, k)?;
    let spectrum = full_spectrum(f);
    let results = cfg.execution.map(layout.pieces(), |i| {
        let pm = solve_piece_modes(&solver, &spectrum, &layout, grid, i, Some(k))?;
        let sup_raw = synthesize(grid, &pm.raw).sup_norm();
        let sup_modified = synthesize(grid, &pm.modified).sup_norm();
        Ok((PieceSummary { i, sup_raw, sup_modified }, pm.modified))
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut total: Vec<ModeProfile> = spectrum
        .iter()
        .map(|m| ModeProfile {
            mode_index: m.mode_index,
            cos_part: vec![0.0; m.cos_part.len()],
            sin_part: vec![0.0; m.sin_part.len()],
        })
        .collect();
    let mut per_piece = Vec::with_capacity(results.len());
    for (summary, modes) in results {
        for (acc, m) in total.iter_mut().zip(&modes) {
            acc.cos_part.iter_mut().zip(&m.cos_part).for_each(|(a, b)| *a += b);
            acc.sin_part.iter_mut().zip(&m.sin_part).for_each(|(a, b)| *a += b);
        }
        per_piece.push(summary);
    }
    let solution = synthesize(grid, &total);
    let residual = weighted_residual(&solution, f, alpha, lambda);
    if !(residual <= cfg.tolerance) {
        return Err(NeckError::ResidualTooLarge {
            residual,
            tolerance: cfg.tolerance,
        });
    }
    Ok(WeightedSolveReport {
        observed_constant: weighted_sup_norm(&solution, alpha, lambda),
        solution,
        alpha,
        lambda,
        half_length: 0.5 * (grid.t_max - grid.t_min),
        residual,
        truncation_order: k,
        per_piece,
    })
}

/// Per-mode two-point boundary-value solve of `vₙ'' - n²vₙ = fₙ`.
pub fn solve_spectral_oracle(f: &Field, boundary: &BoundarySpec) -> Result<Field> {
    let grid = &f.grid;
    let op = grid.axial_operator();
    let mo = ModeOperator { op: &op };
    let p = grid.vector_dim;
    let nt = grid.n_t;
    let w = grid.axial_weights();
    let spectrum = full_spectrum(f);
    let mut out = Vec::with_capacity(spectrum.len());
    for prof in &spectrum {
        let n = prof.mode_index;
        let kind = boundary.for_mode(n);
        let kf = n as f64;
        let (bottom, top, pin_neumann) = match kind {
            ModeBoundary::Dirichlet => (EndRow::Value, EndRow::Value, false),
            ModeBoundary::Decay if n == 0 => (EndRow::Value, EndRow::Value, false),
            ModeBoundary::Decay => (EndRow::Robin(kf), EndRow::Robin(-kf), false),
            ModeBoundary::Neumann if n == 0 => (EndRow::Value, EndRow::Slope, true),
            ModeBoundary::Neumann => (EndRow::Slope, EndRow::Slope, false),
            ModeBoundary::PinnedBottom | ModeBoundary::PinnedTop => (EndRow::Value, EndRow::Value, false),
        };
        let lu = mo.factor(n, bottom, top)?;
        let kernel = match kind {
            ModeBoundary::PinnedBottom => Some((0, solve_rows(&lu, &vec![0.0; nt], (0.0, 1.0)))),
            ModeBoundary::PinnedTop => Some((nt - 1, solve_rows(&lu, &vec![0.0; nt], (1.0, 0.0)))),
            _ => None,
        };
        let mut mode = ModeProfile {
            mode_index: n,
            cos_part: vec![0.0; nt * p],
            sin_part: vec![0.0; nt * p],
        };
        for c in 0..p {
            for (src, dst) in [(&prof.cos_part, &mut mode.cos_part), (&prof.sin_part, &mut mode.sin_part)] {
                let rhs: Vec<f64> = (0..nt).map(|r| src[r * p + c]).collect();
                if pin_neumann {
                    let mass: f64 = rhs.iter().zip(&w).map(|(a, b)| a * b).sum();
                    let scale: f64 = rhs.iter().zip(&w).map(|(a, b)| a.abs() * b).sum();
                    if mass.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
                        return Err(NeckError::SingularSystem(format!(
                            "mode-0 Neumann data incompatible: ∫f₀ = {mass:e}"
                        )));
                    }
                }
                let mut v = solve_rows(&lu, &rhs, (0.0, 0.0));
                if let Some((at, ker)) = &kernel {
                    let slope_v = op.d1_row(*at).apply(&v);
                    let slope_k = op.d1_row(*at).apply(ker);
                    if slope_k.abs() <= f64::MIN_POSITIVE {
                        return Err(NeckError::SingularSystem(format!("initial-value problem for mode {n}")));
                    }
                    let b = slope_v / slope_k;
                    v.iter_mut().zip(ker).for_each(|(x, y)| *x -= b * y);
                }
                for r in 0..nt {
                    dst[r * p + c] = v[r];
                }
            }
        }
        out.push(mode);
    }
    Ok(synthesize(grid, &out))
}

/// The discrete-harmonic part of `d`: per mode, the combination of the two
/// unit-end discrete kernel solutions matching `d` at both ends.
pub fn discrete_harmonic_part(d: &Field) -> Result<Field> {
    let grid = &d.grid;
    let op = grid.axial_operator();
    let mo = ModeOperator { op: &op };
    let p = grid.vector_dim;
    let nt = grid.n_t;
    let zero = vec![0.0; nt];
    let spectrum = full_spectrum(d);
    let mut out = Vec::with_capacity(spectrum.len());
    for prof in &spectrum {
        let lu = mo.factor(prof.mode_index, EndRow::Value, EndRow::Value)?;
        let k_lo = solve_rows(&lu, &zero, (1.0, 0.0));
        let k_hi = solve_rows(&lu, &zero, (0.0, 1.0));
        let mut mode = ModeProfile {
            mode_index: prof.mode_index,
            cos_part: vec![0.0; nt * p],
            sin_part: vec![0.0; nt * p],
        };
        for c in 0..p {
            for (src, dst) in [(&prof.cos_part, &mut mode.cos_part), (&prof.sin_part, &mut mode.sin_part)] {
                let (lo, hi) = (src[c], src[(nt - 1) * p + c]);
                for r in 0..nt {
                    dst[r * p + c] = lo * k_lo[r] + hi * k_hi[r];
                }
            }
        }
        out.push(mode);
    }
    Ok(synthesize(grid, &out))
}

/// A random smooth source pattern `η^α · g(s, θ)` in the recentred coordinate,
/// band-limited in θ; the same pattern can be sampled on cylinders of any length.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSource {
    /// (mode, amplitude, angular phase, axial frequency, axial phase)
    terms: Vec<(usize, f64, f64, f64, f64)>,
}

impl RandomSource {
    pub fn new<R: Rng>(modes: usize, rng: &mut R) -> Self {
        let tau = 2.0 * std::f64::consts::PI;
        let terms = (0..=modes)
            .flat_map(|n| (0..3).map(move |_| n))
            .map(|n| {
                (
                    n,
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.0..tau),
                    rng.gen_range(0.2..2.0),
                    rng.gen_range(0.0..tau),
                )
            })
            .collect();
        RandomSource { terms }
    }

    /// Sample on `grid`, normalized to `weighted_sup_norm(f, α, λ) = 1`.
    pub fn sample(&self, grid: &CylinderGrid, alpha: f64, lambda: f64) -> Field {
        let center = recentre(lambda);
        let raw = Field::from_fn(grid, |t, th, out| {
            let s = t - center;
            let g: f64 = self
                .terms
                .iter()
                .map(|&(n, amp, phase, freq, sphase)| amp * (n as f64 * th + phase).cos() * (freq * s + sphase).cos())
                .sum();
            let w = eta_weight(t, lambda).powf(alpha);
            out.iter_mut().enumerate().for_each(|(c, o)| *o = w * g * (1.0 + 0.1 * c as f64));
        });
        let norm = weighted_sup_norm(&raw, alpha, lambda);
        raw.scaled(1.0 / norm)
    }
}

/// Shorthand for a fresh [`RandomSource`] sampled once.
pub fn random_source<R: Rng>(grid: &CylinderGrid, alpha: f64, lambda: f64, modes: usize, rng: &mut R) -> Field {
    RandomSource::new(modes, rng).sample(grid, alpha, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn neck_grid(l: f64, n_theta: usize) -> CylinderGrid {
        CylinderGrid::with_spacing(-l, l, 0.05, n_theta, 1).unwrap()
    }

    #[test]
    fn layout_covers_pieces() {
        let g = neck_grid(4.0, 8);
        let lay = PieceLayout::new(&g, 1.0);
        assert_eq!((lay.lo, lay.hi), (-3, 4));
        assert_eq!(lay.owner[0], -3);
        assert_eq!(*lay.owner.last().unwrap(), 4);
        let r = g.nearest_index(0.0);
        assert_eq!(lay.owner[r], 0);
        assert_eq!(lay.owner[r + 1], 1);
        let lam: f64 = 1e-4;
        let g = CylinderGrid::with_spacing(0.5 * lam.ln() - 2.3, 0.5 * lam.ln() + 2.3, 0.05, 8, 1).unwrap();
        let lay = PieceLayout::new(&g, lam);
        assert_eq!((lay.lo, lay.hi), (-1, 2));
    }

    #[test]
    fn zero_source_gives_zero() {
        let g = neck_grid(4.0, 8);
        let f = Field::zeros(&g);
        let rep = solve_weighted(&f, 0.5, 1.0).unwrap();
        assert_eq!(rep.observed_constant, 0.0);
        assert!(rep.solution.sup_norm() == 0.0);
        assert_eq!(solve_piece(&f, 1, 1.0).unwrap().sup_norm(), 0.0);
        let o = solve_spectral_oracle(&f, &BoundarySpec::dirichlet()).unwrap();
        assert_eq!(o.sup_norm(), 0.0);
    }

    #[test]
    fn piece_mode0_grows_with_unit_slope() {
        let g = neck_grid(4.0, 8);
        let f = Field::scalar_from_fn(&g, |_, _| 1.0);
        let v = solve_piece(&f, 1, 1.0).unwrap();
        // Oracle: v'' = χ_(0,1], v = v' = 0 below 0 ⇒ v = s²/2 on [0,1], (s - 1/2) above.
        for i in 0..g.n_t {
            let s = g.t(i);
            let want = if s <= 0.0 {
                0.0
            } else if s <= 1.0 {
                0.5 * s * s
            } else {
                s - 0.5
            };
            assert!((v.get(i, 0, 0) - want).abs() < 0.03, "s={s} v={} want={want}", v.get(i, 0, 0));
        }
        let i2 = g.nearest_index(3.0);
        let i1 = g.nearest_index(2.0);
        assert!((v.get(i2, 3, 0) - v.get(i1, 3, 0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn piece_mode1_decays() {
        let g = neck_grid(6.0, 8);
        let f = Field::scalar_from_fn(&g, |_, th| th.cos());
        let v = solve_piece(&f, 1, 1.0).unwrap();
        let at = |s: f64| v.get(g.nearest_index(s), 0, 0);
        // Closed form away from the source: C e^{-|s - ½|}.
        let r_up = at(4.0) / at(3.0);
        let r_dn = at(-3.0) / at(-2.0);
        assert!((r_up - (-1.0f64).exp()).abs() < 1e-6);
        assert!((r_dn - (-1.0f64).exp()).abs() < 1e-6);
        // Green's function -e^{-|s-σ|}/2 integrated over (0, 1].
        let e = 1.0f64.exp();
        let want = -0.5 * (e - 1.0) * (-3.0f64).exp();
        // the masked source is a first-order quadrature of χ
        assert!((at(3.0) - want).abs() < 0.05 * want.abs(), "{} vs {want}", at(3.0));
    }

    #[test]
    fn out_of_range_piece_rejected() {
        let g = neck_grid(4.0, 8);
        let f = Field::zeros(&g);
        assert!(matches!(solve_piece(&f, 9, 1.0), Err(NeckError::PieceOutOfRange { .. })));
    }

    #[test]
    fn truncation_removes_low_harmonics() {
        let g = neck_grid(4.0, 8);
        let raw = Field::scalar_from_fn(&g, |s, th| {
            let bump = if s > 3.0 { (s - 3.0).powi(3) } else { 0.0 };
            5.0 + 2.0 * s + bump * th.cos()
        });
        let m = truncate_piece(&raw, 0, 2.0, 1.0);
        let m = m.unwrap();
        let lo = g.nearest_index(-2.0);
        let hi = g.nearest_index(2.0);
        assert!(m.sup_on_rows(lo, hi) < 1e-10);
        let raw = Field::scalar_from_fn(&g, |s, th| s.exp() * th.cos() + 0.3);
        let m = truncate_piece(&raw, 1, 3.0, 1.0).unwrap();
        assert!(m.sup_norm() < 1e-10);
        assert!(truncate_piece(&raw, 4, 3.0, 1.0).is_err());
    }

    #[test]
    fn particular_solution_differs_by_harmonic() {
        let g = neck_grid(3.0, 8);
        let (beta, n) = (0.5, 2.0);
        let f = Field::scalar_from_fn(&g, |s, th| (beta * s).exp() * (n * th).cos());
        let rep = solve_weighted(&f, 0.5, 1.0).unwrap();
        assert!(rep.residual < 1e-8);
        let part = Field::scalar_from_fn(&g, |s, th| (beta * s).exp() * (n * th).cos() / (beta * beta - n * n));
        let d = &rep.solution - &part;
        let h = discrete_harmonic_part(&d).unwrap();
        assert!((&d - &h).sup_norm() < 1e-8);
    }

    #[test]
    fn oracle_matches_closed_form() {
        let g = neck_grid(2.0, 8);
        let f = Field::scalar_from_fn(&g, |_, th| th.cos());
        let v = solve_spectral_oracle(&f, &BoundarySpec::dirichlet()).unwrap();
        let l = 2.0f64;
        for i in 0..g.n_t {
            let s = g.t(i);
            let want = s.cosh() / l.cosh() - 1.0;
            for j in 0..g.n_theta {
                assert!((v.get(i, j, 0) - want * g.theta(j).cos()).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn oracle_residual_for_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = CylinderGrid::with_spacing(-2.0, 2.0, 0.05, 12, 2).unwrap();
        let f = Field::from_values(&g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        for spec in [
            BoundarySpec::dirichlet(),
            BoundarySpec::uniform(ModeBoundary::Decay),
            BoundarySpec::dirichlet().with(3, ModeBoundary::Neumann),
        ] {
            let v = solve_spectral_oracle(&f, &spec).unwrap();
            let r = (&v.laplacian() - &f).sup_interior();
            assert!(r <= 1e-10, "{spec:?}: {r}");
        }
    }

    #[test]
    fn neumann_mode0_compatibility() {
        let g = neck_grid(2.0, 8);
        let bad = Field::scalar_from_fn(&g, |_, _| 1.0);
        let spec = BoundarySpec::uniform(ModeBoundary::Neumann);
        assert!(matches!(solve_spectral_oracle(&bad, &spec), Err(NeckError::SingularSystem(_))));
        let good = Field::scalar_from_fn(&g, |s, _| (std::f64::consts::PI * s / 2.0).cos() * 0.0 + s);
        let v = solve_spectral_oracle(&good, &spec).unwrap();
        assert!((&v.laplacian() - &good).sup_interior() < 1e-9);
    }

    #[test]
    fn weighted_agrees_with_oracle_modulo_harmonic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lam = 1e-3;
        let c = recentre(lam);
        let g = CylinderGrid::with_spacing(c - 6.0, c + 6.0, 0.05, 8, 1).unwrap();
        for alpha in [0.5, 1.5] {
            let f = random_source(&g, alpha, lam, 3, &mut rng);
            let rep = solve_weighted(&f, alpha, lam).unwrap();
            let o = solve_spectral_oracle(&f, &BoundarySpec::dirichlet()).unwrap();
            let d = &rep.solution - &o;
            let h = discrete_harmonic_part(&d).unwrap();
            let gap = weighted_sup_norm(&(&d - &h), alpha, lam);
            assert!(gap <= 1e-8, "alpha {alpha}: {gap}");
        }
    }

    #[test]
    fn observed_constant_is_roughly_length_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for alpha in [0.5, 1.5] {
            for _ in 0..3 {
                let src = RandomSource::new(3, &mut rng);
                let consts: Vec<f64> = [4.0, 8.0, 16.0]
                    .iter()
                    .map(|&l| {
                        let g = CylinderGrid::with_spacing(-l, l, 0.1, 8, 1).unwrap();
                        solve_weighted(&src.sample(&g, alpha, 1.0), alpha, 1.0).unwrap().observed_constant
                    })
                    .collect();
                let (mn, mx) = consts.iter().fold((f64::MAX, 0.0f64), |a, &c| (a.0.min(c), a.1.max(c)));
                assert!(mx / mn <= 2.0, "alpha {alpha}: {consts:?}");
            }
        }
    }

    #[test]
    fn piece_growth_bound_is_uniform() {
        let alpha = 0.5;
        let g = neck_grid(8.0, 8);
        let f = Field::scalar_from_fn(&g, |t, th| eta_weight(t, 1.0).powf(alpha) * (1.0 + th.cos()));
        let mut worst = 0.0f64;
        for i in [-6i64, -3, 2, 5, 8] {
            let v = solve_piece(&f, i, 1.0).unwrap();
            for r in 0..g.n_t {
                let s = g.t(r);
                let ia = i.abs() as f64;
                let env = (alpha * ia).exp() * if s.abs() <= ia { 1.0 } else { s.abs() - ia + 1.0 };
                worst = worst.max(v.sup_on_rows(r, r) / env);
            }
        }
        assert!(worst < 5.0, "{worst}");
    }

    #[test]
    fn truncated_piece_is_raw_minus_window_expansion() {
        let g = CylinderGrid::with_spacing(-6.0, 6.0, 0.05, 8, 1).unwrap();
        let f = Field::scalar_from_fn(&g, |t, th| eta_weight(t, 1.0).powf(1.5) * (1.0 + th.cos() + 0.5 * (2.0 * th).sin()));
        for i in [3i64, -4] {
            let ps = piece_solution(&f, i, Some(1), 1.0).unwrap();
            let m = (i.abs() - 1) as f64;
            let exp = expand_about(&ps.raw, 0.0, m, 1).unwrap();
            let pk = partial_sum(&exp, 1, &g);
            let (lo, hi) = (g.nearest_index(-m), g.nearest_index(m));
            let d = &(&ps.raw - &ps.modified) - &pk;
            let (a, b) = (d.sup_on_rows(lo, hi), ps.raw.sup_norm());
            // continuous P_k against discrete kernels: equal to discretization error
            assert!(a <= 1e-6 * b, "piece {i}: {a} vs {b}");
            // modes above k are untouched
            let diff = &ps.raw - &ps.modified;
            let modes = crate::grid::fourier_modes(&diff, 3).unwrap();
            assert!(modes[2].sin_part.iter().chain(&modes[3].cos_part).all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn truncated_pieces_decay_uniformly_toward_centre() {
        let alpha = 0.5;
        let g = CylinderGrid::with_spacing(-10.0, 10.0, 0.05, 8, 1).unwrap();
        let f = Field::scalar_from_fn(&g, |t, th| eta_weight(t, 1.0).powf(alpha) * (1.0 + th.cos()));
        let mut consts = Vec::new();
        for i in [2i64, 4, 8] {
            let ps = piece_solution(&f, i, Some(0), 1.0).unwrap();
            let ia = i as f64;
            let mut c = 0.0f64;
            for r in 0..g.n_t {
                let s = g.t(r);
                if s.abs() <= ia - 1.0 {
                    c = c.max(ps.modified.sup_on_rows(r, r) * (ia - s.abs()).exp() * (-alpha * ia).exp());
                }
            }
            consts.push(c);
        }
        let (mn, mx) = consts.iter().fold((f64::MAX, 0.0f64), |a, &c| (a.0.min(c), a.1.max(c)));
        assert!(mx / mn <= 1.5 && mx < 10.0, "{consts:?}");
    }

    #[test]
    fn integer_alpha_rejected_and_nudged() {
        let g = neck_grid(2.0, 8);
        assert!(solve_weighted(&Field::zeros(&g), 1.0, 1.0).is_err());
        assert!((nudge_alpha(1.005) - 0.955).abs() < 1e-15);
        assert_eq!(nudge_alpha(0.7), 0.7);
    }

    #[test]
    fn policies_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = neck_grid(5.0, 8);
        let f = random_source(&g, 1.5, 1.0, 3, &mut rng);
        let seq = PoissonConfig {
            execution: Execution::Sequential,
            ..Default::default()
        };
        let a = solve_weighted_with(&f, 1.5, 1.0, &seq).unwrap();
        let b = solve_weighted(&f, 1.5, 1.0).unwrap();
        assert_eq!(a.solution.values, b.solution.values);
        let js: serde_json::Value = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        for key in ["alpha", "lambda", "L", "observed_constant", "residual", "per_piece"] {
            assert!(js.get(key).is_some(), "{key}");
        }
    }
}
