//! Finite-difference stencils on uniform axial grids.
//!
//! Weights come from Fornberg's recursion, so any order and any (possibly
//! one-sided) window is available. Interior rows are centered; rows near a
//! non-periodic end slide the window inward and keep the formal order.

/// Fornberg weights for derivatives `0..=m` at `z` from nodes `x`.
/// Returns `w[k][j]`, the weight of node `j` for the `k`-th derivative.
pub fn fornberg_weights(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// One stencil row: node indices and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilRow {
    pub nodes: Vec<usize>,
    pub weights: Vec<f64>,
}

impl StencilRow {
    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&j, &w)| w * values[j])
            .sum()
    }

    /// Apply to a strided view: value of node `j` is `values[offset + j*stride]`.
    #[inline]
    pub fn apply_strided(&self, values: &[f64], offset: usize, stride: usize) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&j, &w)| w * values[offset + j * stride])
            .sum()
    }
}

/// First- and second-derivative operators on `n` uniform nodes with spacing `h`.
#[derive(Debug, Clone)]
pub struct AxialOperator {
    pub n: usize,
    pub h: f64,
    pub order: usize,
    pub periodic: bool,
    d1: Vec<StencilRow>,
    d2: Vec<StencilRow>,
    half: Vec<StencilRow>,
}

pub const DEFAULT_ORDER: usize = 8;

impl AxialOperator {
    pub fn new(n: usize, h: f64, order: usize, periodic: bool) -> Self {
        assert!(order >= 2 && order % 2 == 0, "stencil order must be even and >= 2");
        assert!(n >= order + 3, "need at least order+3 axial nodes");
        let d1 = (0..n).map(|i| build_row(i as f64, n, h, order + 1, 1, periodic)).collect();
        let d2 = (0..n)
            .map(|i| {
                let near_end = !periodic && (i < order / 2 || i + order / 2 >= n);
                let width = if near_end { order + 2 } else { order + 1 };
                build_row(i as f64, n, h, width, 2, periodic)
            })
            .collect();
        let n_half = if periodic { n } else { n - 1 };
        let half = (0..n_half)
            .map(|i| build_row(i as f64 + 0.5, n, h, order, 1, periodic))
            .collect();
        AxialOperator {
            n,
            h,
            order,
            periodic,
            d1,
            d2,
            half,
        }
    }

    pub fn d1_row(&self, i: usize) -> &StencilRow {
        &self.d1[i]
    }

    pub fn d2_row(&self, i: usize) -> &StencilRow {
        &self.d2[i]
    }

    /// Derivative at the midpoint between node `i` and `i + 1` (wrapping when periodic).
    pub fn half_rows(&self) -> &[StencilRow] {
        &self.half
    }

    pub fn d1(&self, v: &[f64]) -> Vec<f64> {
        self.d1.iter().map(|r| r.apply(v)).collect()
    }

    pub fn d2(&self, v: &[f64]) -> Vec<f64> {
        self.d2.iter().map(|r| r.apply(v)).collect()
    }
}

fn build_row(center: f64, n: usize, h: f64, width: usize, deriv: usize, periodic: bool) -> StencilRow {
    // window of `width` consecutive nodes as centered on `center` as possible
    let start_f = center - (width as f64 - 1.0) / 2.0;
    let mut start = start_f.round() as i64;
    if (start_f - start_f.floor() - 0.5).abs() < 1e-12 {
        start = start_f.floor() as i64;
    }
    if !periodic {
        start = start.clamp(0, n as i64 - width as i64);
    }
    let offsets: Vec<i64> = (0..width as i64).map(|k| start + k).collect();
    let x: Vec<f64> = offsets.iter().map(|&o| o as f64 * h).collect();
    let w = fornberg_weights(center * h, &x, deriv);
    let nodes = offsets
        .iter()
        .map(|&o| o.rem_euclid(n as i64) as usize)
        .collect();
    StencilRow {
        nodes,
        weights: w[deriv].clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fornberg_reproduces_classic_second_difference() {
        let w = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[2][0] - 1.0).abs() < 1e-14);
        assert!((w[2][1] + 2.0).abs() < 1e-14);
        assert!((w[2][2] - 1.0).abs() < 1e-14);
        assert!((w[1][0] + 0.5).abs() < 1e-14 && (w[1][2] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn eighth_order_derivatives_of_exponential() {
        let n = 81;
        let h = 0.05;
        let op = AxialOperator::new(n, h, 8, false);
        let t: Vec<f64> = (0..n).map(|i| -2.0 + i as f64 * h).collect();
        let f: Vec<f64> = t.iter().map(|x| (1.3 * x).exp()).collect();
        let d1 = op.d1(&f);
        let d2 = op.d2(&f);
        for i in 0..n {
            assert!((d1[i] - 1.3 * f[i]).abs() < 1e-9 * f[i], "d1 row {i}");
            assert!((d2[i] - 1.69 * f[i]).abs() < 1e-8 * f[i], "d2 row {i}");
        }
    }

    #[test]
    fn staggered_rows_do_not_annihilate_sawtooth() {
        let op = AxialOperator::new(30, 0.1, 8, false);
        let saw: Vec<f64> = (0..30).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let row = &op.half_rows()[14];
        assert!(row.apply(&saw).abs() > 1.0);
        // the centered node derivative does annihilate it
        assert!(op.d1_row(14).apply(&saw).abs() < 1e-10);
    }

    #[test]
    fn periodic_rows_wrap() {
        let n = 64;
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let op = AxialOperator::new(n, h, 8, true);
        let f: Vec<f64> = (0..n).map(|i| (i as f64 * h).sin()).collect();
        let d2 = op.d2(&f);
        for i in 0..n {
            assert!((d2[i] + f[i]).abs() < 1e-9);
        }
    }
}
