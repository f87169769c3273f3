//! Banded direct solvers used by the mode-wise ODE solves and by the
//! shift-invert eigensolver.

use crate::error::{NeckError, Result};

/// LU factorization with partial pivoting of a general banded matrix.
///
/// Row `i` stores columns `i - kl ..= i + kl + ku`; the extra `kl` columns hold
/// the fill created by row interchanges.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    /// Factor the matrix whose row `i` has the sparse entries `rows[i]`.
    pub fn from_rows(rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        let n = rows.len();
        let mut kl = 0usize;
        let mut ku = 0usize;
        for (i, row) in rows.iter().enumerate() {
            for &(j, _) in row {
                if j >= n {
                    return Err(NeckError::InvalidArgument(format!(
                        "column {j} out of range for {n}x{n} system"
                    )));
                }
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        let width = 2 * kl + ku + 1;
        let mut lu = BandLu {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            pivots: vec![0; n],
        };
        for (i, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                *lu.at_mut(i, j) += v;
            }
        }
        lu.factor()?;
        Ok(lu)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let k = self.idx(i, j);
        &mut self.data[k]
    }

    fn factor(&mut self) -> Result<()> {
        let n = self.n;
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let last_col = (k + self.kl + self.ku).min(n - 1);
            let mut p = k;
            let mut best = self.at(k, k).abs();
            for r in k + 1..=last_row {
                let v = self.at(r, k).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= scale * 1e-300 {
                return Err(NeckError::SingularSystem(format!("zero pivot in column {k}")));
            }
            self.pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    let a = self.idx(k, j);
                    let b = self.idx(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.at(k, k);
            for r in k + 1..=last_row {
                let l = self.at(r, k) / pivot;
                if l == 0.0 {
                    continue;
                }
                *self.at_mut(r, k) = l;
                for j in k + 1..=last_col {
                    let kj = self.at(k, j);
                    *self.at_mut(r, j) -= l * kj;
                }
            }
        }
        Ok(())
    }

    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for r in k + 1..=(k + self.kl).min(n - 1) {
                    b[r] -= self.at(r, k) * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + self.kl + self.ku).min(n - 1) {
                s -= self.at(k, j) * b[j];
            }
            b[k] = s / self.at(k, k);
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Symmetric banded matrix stored by its lower band: `A[i][i-k]` for `k <= bw`.
#[derive(Debug, Clone)]
pub struct SymBand {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, bw: usize) -> Self {
        SymBand {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Add `v` to entry `(i, j)` (and implicitly `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = i - j;
        assert!(k <= self.bw, "entry ({i},{j}) outside bandwidth {}", self.bw);
        self.data[i * (self.bw + 1) + k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = i - j;
        if k > self.bw {
            0.0
        } else {
            self.data[i * (self.bw + 1) + k]
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * (self.bw + 1)]).collect()
    }

    pub fn add_diagonal(&mut self, d: &[f64], scale: f64) {
        for (i, v) in d.iter().enumerate() {
            self.data[i * (self.bw + 1)] += scale * v;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        let w = self.bw + 1;
        for i in 0..self.n {
            let row = &self.data[i * w..(i + 1) * w];
            y[i] += row[0] * x[i];
            for k in 1..=self.bw.min(i) {
                let a = row[k];
                if a != 0.0 {
                    y[i] += a * x[i - k];
                    y[i - k] += a * x[i];
                }
            }
        }
        y
    }

    /// Largest absolute row sum, an upper bound for the spectral norm.
    pub fn inf_norm(&self) -> f64 {
        let mut sums = vec![0.0; self.n];
        let w = self.bw + 1;
        for i in 0..self.n {
            sums[i] += self.data[i * w].abs();
            for k in 1..=self.bw.min(i) {
                let a = self.data[i * w + k].abs();
                sums[i] += a;
                sums[i - k] += a;
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }
}

/// Cholesky factor `L` of a symmetric positive definite banded matrix.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &SymBand) -> Result<Self> {
        let n = a.n;
        let bw = a.bw;
        let w = bw + 1;
        let mut l = a.data.clone();
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut s = l[i * w + (i - j)];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(NeckError::SingularSystem(format!(
                            "matrix not positive definite at row {i} (pivot {s:.3e})"
                        )));
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Ok(BandCholesky { n, bw, data: l })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.n {
            let mut s = b[i];
            for k in 1..=self.bw.min(i) {
                s -= self.data[i * w + k] * b[i - k];
            }
            b[i] = s / self.data[i * w];
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for k in 1..=self.bw.min(self.n - 1 - i) {
                s -= self.data[(i + k) * w + k] * b[i + k];
            }
            b[i] = s / self.data[i * w];
        }
    }
}
