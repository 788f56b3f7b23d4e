//! Small dense solves used by the Newton iterations.
//!
//! Sizes here are tiny (a handful of species per node), so hand-rolled LU
//! with partial pivoting is both simpler and faster than pulling in a full
//! linear algebra stack.

/// Dense square matrix in row-major order.
#[derive(Debug, Clone)]
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    /// `self * other`, both n-by-n.
    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        let n = self.n;
        let mut out = DenseMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += self.data[i * n + j] * x[j];
            }
            y[i] = s;
        }
        y
    }
}

/// In-place LU factorization with partial pivoting.
///
/// Returns the pivot permutation, or `None` if a pivot underflows.
pub fn lu_factor(a: &mut DenseMatrix) -> Option<Vec<usize>> {
    let n = a.n;
    let mut piv: Vec<usize> = (0..n).collect();
    for col in 0..n {
        // pivot search
        let mut p = col;
        let mut pmax = a.get(col, col).abs();
        for r in col + 1..n {
            let v = a.get(r, col).abs();
            if v > pmax {
                pmax = v;
                p = r;
            }
        }
        if pmax < 1e-300 {
            return None;
        }
        if p != col {
            for j in 0..n {
                let t = a.get(col, j);
                a.set(col, j, a.get(p, j));
                a.set(p, j, t);
            }
            piv.swap(col, p);
        }
        let inv = 1.0 / a.get(col, col);
        for r in col + 1..n {
            let f = a.get(r, col) * inv;
            a.set(r, col, f);
            if f != 0.0 {
                for j in col + 1..n {
                    let v = a.get(r, j) - f * a.get(col, j);
                    a.set(r, j, v);
                }
            }
        }
    }
    Some(piv)
}

/// Solve with a factorization produced by [`lu_factor`].
pub fn lu_solve(a: &DenseMatrix, piv: &[usize], b: &[f64]) -> Vec<f64> {
    let n = a.n;
    let mut x: Vec<f64> = piv.iter().map(|&p| b[p]).collect();
    for i in 0..n {
        for j in 0..i {
            x[i] -= a.get(i, j) * x[j];
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            x[i] -= a.get(i, j) * x[j];
        }
        x[i] /= a.get(i, i);
    }
    x
}

/// Solve `A x = b` for a single right-hand side, destroying `a`.
pub fn solve_dense(a: &mut DenseMatrix, b: &[f64]) -> Option<Vec<f64>> {
    let piv = lu_factor(a)?;
    Some(lu_solve(a, &piv, b))
}

/// Block-tridiagonal system with square blocks of uniform size.
///
/// Row i couples blocks `lower[i-1]`, `diag[i]`, `upper[i]`. Solved by block
/// Thomas elimination; each diagonal pivot block is LU-factored with partial
/// pivoting.
pub struct BlockTridiag {
    pub block: usize,
    pub diag: Vec<DenseMatrix>,
    pub lower: Vec<DenseMatrix>,
    pub upper: Vec<DenseMatrix>,
}

impl BlockTridiag {
    pub fn new(nblocks: usize, block: usize) -> Self {
        Self {
            block,
            diag: (0..nblocks).map(|_| DenseMatrix::zeros(block)).collect(),
            lower: (0..nblocks.saturating_sub(1))
                .map(|_| DenseMatrix::zeros(block))
                .collect(),
            upper: (0..nblocks.saturating_sub(1))
                .map(|_| DenseMatrix::zeros(block))
                .collect(),
        }
    }

    /// Solve in place against `rhs` (length `nblocks * block`).
    ///
    /// Consumes the matrix content (forward elimination overwrites blocks).
    pub fn solve(mut self, rhs: &[f64]) -> Option<Vec<f64>> {
        let nb = self.diag.len();
        let m = self.block;
        assert_eq!(rhs.len(), nb * m);
        let mut r: Vec<Vec<f64>> = (0..nb).map(|i| rhs[i * m..(i + 1) * m].to_vec()).collect();

        // Forward sweep: eliminate lower blocks.
        // After step i, diag[i] holds its LU factors and upper[i] holds
        // D_i^{-1} U_i.
        let mut pivs: Vec<Vec<usize>> = Vec::with_capacity(nb);
        for i in 0..nb {
            if i > 0 {
                // row_i -= L_{i-1} * (D_{i-1}^{-1} row_{i-1})
                let lower = self.lower[i - 1].clone();
                // rhs update
                let y = lu_solve(&self.diag[i - 1], &pivs[i - 1], &r[i - 1]);
                let ly = lower.matvec(&y);
                for k in 0..m {
                    r[i][k] -= ly[k];
                }
                // diag update: D_i -= L_{i-1} * (D_{i-1}^{-1} U_{i-1})
                if i - 1 < self.upper.len() {
                    let mut dinv_u = DenseMatrix::zeros(m);
                    for col in 0..m {
                        let b: Vec<f64> = (0..m).map(|row| self.upper[i - 1].get(row, col)).collect();
                        let x = lu_solve(&self.diag[i - 1], &pivs[i - 1], &b);
                        for row in 0..m {
                            dinv_u.set(row, col, x[row]);
                        }
                    }
                    let lu_prod = lower.matmul(&dinv_u);
                    for k in 0..m * m {
                        self.diag[i].data[k] -= lu_prod.data[k];
                    }
                }
            }
            let piv = lu_factor(&mut self.diag[i])?;
            pivs.push(piv);
        }

        // Back substitution.
        let mut x = vec![0.0; nb * m];
        let mut xi = lu_solve(&self.diag[nb - 1], &pivs[nb - 1], &r[nb - 1]);
        x[(nb - 1) * m..].copy_from_slice(&xi);
        for i in (0..nb - 1).rev() {
            let ux = self.upper[i].matvec(&xi);
            let mut b = r[i].clone();
            for k in 0..m {
                b[k] -= ux[k];
            }
            xi = lu_solve(&self.diag[i], &pivs[i], &b);
            x[i * m..(i + 1) * m].copy_from_slice(&xi);
        }
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_solve_recovers_known_solution() {
        let mut a = DenseMatrix::zeros(3);
        let vals = [[4.0, 1.0, 0.0], [1.0, 3.0, -1.0], [0.0, -1.0, 2.0]];
        for i in 0..3 {
            for j in 0..3 {
                a.set(i, j, vals[i][j]);
            }
        }
        let x_true = [1.0, -2.0, 0.5];
        let b = a.matvec(&x_true);
        let x = solve_dense(&mut a.clone(), &b).unwrap();
        for i in 0..3 {
            assert!((x[i] - x_true[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_solve_rejects_singular() {
        let mut a = DenseMatrix::zeros(2);
        a.set(0, 0, 1.0);
        a.set(0, 1, 2.0);
        a.set(1, 0, 2.0);
        a.set(1, 1, 4.0);
        assert!(solve_dense(&mut a, &[1.0, 1.0]).is_none());
    }

    #[test]
    fn block_tridiag_matches_dense_solve() {
        // 4 blocks of size 2, diagonally dominant.
        let nb = 4;
        let m = 2;
        let mut bt = BlockTridiag::new(nb, m);
        let mut full = DenseMatrix::zeros(nb * m);
        let mut seed = 12345u64;
        let mut rng = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64) / (u32::MAX as f64) - 0.5
        };
        for i in 0..nb {
            for a in 0..m {
                for b in 0..m {
                    let v = rng() + if a == b { 5.0 } else { 0.0 };
                    bt.diag[i].set(a, b, v);
                    full.set(i * m + a, i * m + b, v);
                }
            }
        }
        for i in 0..nb - 1 {
            for a in 0..m {
                for b in 0..m {
                    let lv = rng();
                    let uv = rng();
                    bt.lower[i].set(a, b, lv);
                    bt.upper[i].set(a, b, uv);
                    full.set((i + 1) * m + a, i * m + b, lv);
                    full.set(i * m + a, (i + 1) * m + b, uv);
                }
            }
        }
        let rhs: Vec<f64> = (0..nb * m).map(|i| (i as f64) - 3.0).collect();
        let x_bt = bt.solve(&rhs).unwrap();
        let x_full = solve_dense(&mut full, &rhs).unwrap();
        for i in 0..nb * m {
            assert!((x_bt[i] - x_full[i]).abs() < 1e-10, "entry {i}");
        }
    }
}
