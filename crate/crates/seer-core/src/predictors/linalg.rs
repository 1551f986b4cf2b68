//! Small dense linear-algebra kernels: symmetric eigendecomposition and
//! minimum-norm least squares. Everything here operates on matrices of at
//! most a few thousand rows and ~60 columns.

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged matrix");
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// self · v
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// selfᵀ · v
    pub fn transpose_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let s = v[r];
            for (o, a) in out.iter_mut().zip(row) {
                *o += s * a;
            }
        }
        out
    }

    /// selfᵀ · self (symmetric Gram matrix).
    pub fn gram(&self) -> Mat {
        let d = self.cols;
        let mut g = Mat::zeros(d, d);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..d {
                let xi = row[i];
                if xi == 0.0 {
                    continue;
                }
                for j in i..d {
                    *g.at_mut(i, j) += xi * row[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                *g.at_mut(i, j) = g.at(j, i);
            }
        }
        g
    }
}

/// Eigendecomposition of a symmetric matrix via the cyclic Jacobi method.
/// Returns (eigenvalues, V) with A = V·diag(λ)·Vᵀ; V's columns are the
/// eigenvectors.
pub fn jacobi_eigh(a: &Mat) -> (Vec<f64>, Mat) {
    assert_eq!(a.rows, a.cols, "matrix must be square");
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Mat::zeros(n, n);
    for i in 0..n {
        *v.at_mut(i, i) = 1.0;
    }
    let off = |m: &Mat| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += m.at(i, j) * m.at(i, j);
            }
        }
        s
    };
    let scale: f64 = (0..n).map(|i| m.at(i, i).abs()).fold(1e-300, f64::max);
    let tol = (scale * 1e-14).powi(2) * (n * n) as f64;
    for _sweep in 0..100 {
        if off(&m) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.at(p, q);
                if apq.abs() <= scale * 1e-300 {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q of m.
                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkq = m.at(k, q);
                    *m.at_mut(k, p) = c * mkp - s * mkq;
                    *m.at_mut(k, q) = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mqk = m.at(q, k);
                    *m.at_mut(p, k) = c * mpk - s * mqk;
                    *m.at_mut(q, k) = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    *v.at_mut(k, p) = c * vkp - s * vkq;
                    *v.at_mut(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigvals: Vec<f64> = (0..n).map(|i| m.at(i, i)).collect();
    (eigvals, v)
}

/// Minimum-norm least-squares solution of X·β ≈ y for each column y of Y.
///
/// Solves through the pseudo-inverse of the Gram matrix: β = V Λ⁺ Vᵀ Xᵀ y,
/// dropping eigenvalue directions below a relative cutoff, which yields the
/// minimum-norm solution when X is rank-deficient. Returns a cols(X)×cols(Y)
/// coefficient matrix.
pub fn lstsq_min_norm(x: &Mat, y: &Mat) -> Mat {
    assert_eq!(x.rows, y.rows, "X and Y row counts differ");
    let d = x.cols;
    let m = y.cols;
    let (eigvals, v) = jacobi_eigh(&x.gram());
    let max_eig = eigvals.iter().cloned().fold(0.0, f64::max);
    let cutoff = max_eig * d as f64 * 1e-12;
    let mut beta = Mat::zeros(d, m);
    let mut ycol = vec![0.0; x.rows];
    for out in 0..m {
        for r in 0..x.rows {
            ycol[r] = y.at(r, out);
        }
        let xty = x.transpose_matvec(&ycol);
        // V Λ⁺ Vᵀ (Xᵀy)
        let mut proj = vec![0.0; d];
        for e in 0..d {
            if eigvals[e] <= cutoff {
                continue;
            }
            let mut dot = 0.0;
            for i in 0..d {
                dot += v.at(i, e) * xty[i];
            }
            proj[e] = dot / eigvals[e];
        }
        for i in 0..d {
            let mut s = 0.0;
            for e in 0..d {
                s += v.at(i, e) * proj[e];
            }
            *beta.at_mut(i, out) = s;
        }
    }
    beta
}

/// Mean squared error, averaged over every sample and output.
pub fn mse(y: &Mat, yhat: &Mat) -> f64 {
    assert_eq!((y.rows, y.cols), (yhat.rows, yhat.cols));
    let n = (y.rows * y.cols).max(1);
    let mut s = 0.0;
    for i in 0..y.rows {
        for j in 0..y.cols {
            let d = y.at(i, j) - yhat.at(i, j);
            s += d * d;
        }
    }
    s / n as f64
}
