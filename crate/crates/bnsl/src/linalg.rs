//! Small dense symmetric linear algebra: cyclic Jacobi eigendecomposition and
//! a pivot-tolerant Cholesky. Matrices here are tiny (tens of rows), so a
//! deterministic pure-Rust implementation beats linking an external backend.

use ndarray::{Array1, Array2};

/// Eigendecomposition of a symmetric matrix: `values` ascending, `vectors`
/// holding the matching eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

/// Cyclic Jacobi iteration. Converges quadratically; the sweep cap is far
/// beyond what symmetric matrices of this size ever need.
pub fn sym_eigen(a: &Array2<f64>) -> SymEigen {
    let m = a.nrows();
    assert_eq!(m, a.ncols(), "matrix must be square");
    let mut w = a.clone();
    let mut v: Array2<f64> = Array2::eye(m);
    let scale = a.iter().fold(0.0f64, |acc, x| acc + x * x).sqrt().max(1e-300);

    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..m {
            for q in (p + 1)..m {
                off += w[[p, q]] * w[[p, q]];
            }
        }
        if off.sqrt() <= 1e-13 * scale {
            break;
        }
        for p in 0..m {
            for q in (p + 1)..m {
                let apq = w[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = w[[p, p]];
                let aqq = w[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                // Stable tangent of the rotation angle.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..m {
                    let wip = w[[i, p]];
                    let wiq = w[[i, q]];
                    w[[i, p]] = c * wip - s * wiq;
                    w[[i, q]] = s * wip + c * wiq;
                }
                for i in 0..m {
                    let wpi = w[[p, i]];
                    let wqi = w[[q, i]];
                    w[[p, i]] = c * wpi - s * wqi;
                    w[[q, i]] = s * wpi + c * wqi;
                }
                for i in 0..m {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - s * viq;
                    v[[i, q]] = s * vip + c * viq;
                }
            }
        }
    }

    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&i, &j| w[[i, i]].partial_cmp(&w[[j, j]]).unwrap());
    let values = Array1::from_iter(idx.iter().map(|&i| w[[i, i]]));
    let mut vectors = Array2::zeros((m, m));
    for (col, &i) in idx.iter().enumerate() {
        for r in 0..m {
            vectors[[r, col]] = v[[r, i]];
        }
    }
    SymEigen { values, vectors }
}

pub fn min_eigenvalue(a: &Array2<f64>) -> f64 {
    sym_eigen(a).values[0]
}

/// A pivot that fell below the tolerated floor during Cholesky.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotFailure {
    pub index: usize,
    pub pivot: f64,
}

/// Cholesky factorization of a positive semidefinite matrix, returning the
/// lower-triangular factor. Pivots in `[-tol*scale, tol*scale]` are treated
/// as exact zeros, which requires the rest of the column to vanish; anything
/// below that is reported as a failure.
pub fn cholesky_psd(a: &Array2<f64>, tol: f64) -> Result<Array2<f64>, PivotFailure> {
    let m = a.nrows();
    assert_eq!(m, a.ncols(), "matrix must be square");
    let scale = (0..m).fold(1.0f64, |acc, i| acc.max(a[[i, i]].abs()));
    let floor = tol * scale;
    let mut l: Array2<f64> = Array2::zeros((m, m));
    for j in 0..m {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d < -floor {
            return Err(PivotFailure { index: j, pivot: d });
        }
        if d <= floor {
            // Semidefinite pivot: the Schur complement column must be zero.
            for i in (j + 1)..m {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                if s * s > floor.max(1e-300) * scale {
                    return Err(PivotFailure {
                        index: i,
                        pivot: -(s * s) / scale.max(1e-300),
                    });
                }
            }
            continue; // l[[j, j]] stays 0, column stays 0
        }
        let dj = d.sqrt();
        l[[j, j]] = dj;
        for i in (j + 1)..m {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / dj;
        }
    }
    Ok(l)
}

/// Solve `a x = b` for symmetric positive definite `a` via Cholesky.
/// Returns `None` when `a` is numerically singular.
pub fn solve_spd(a: &Array2<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let m = a.nrows();
    if m == 0 {
        return Some(Vec::new());
    }
    let scale = (0..m).fold(0.0f64, |acc, i| acc.max(a[[i, i]].abs()));
    let l = cholesky_psd(a, 1e-12).ok()?;
    for j in 0..m {
        if l[[j, j]] * l[[j, j]] <= 1e-12 * scale.max(1e-300) {
            return None; // effectively rank-deficient
        }
    }
    let mut y = b.to_vec();
    for i in 0..m {
        for k in 0..i {
            let t = l[[i, k] ] * y[k];
            y[i] -= t;
        }
        y[i] /= l[[i, i]];
    }
    for i in (0..m).rev() {
        for k in (i + 1)..m {
            let t = l[[k, i]] * y[k];
            y[i] -= t;
        }
        y[i] /= l[[i, i]];
    }
    Some(y)
}

/// Minimum-norm solution of `a x = b` for symmetric PSD `a`, built from the
/// eigendecomposition with a relative rank cutoff. Used as the rank-revealing
/// fallback when plain Cholesky detects singularity.
pub fn solve_min_norm(a: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let m = a.nrows();
    if m == 0 {
        return Vec::new();
    }
    let e = sym_eigen(a);
    let lmax = e.values.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let cutoff = 1e-12 * lmax.max(1e-300);
    let mut x = vec![0.0; m];
    for j in 0..m {
        let lam = e.values[j];
        if lam <= cutoff {
            continue;
        }
        let mut proj = 0.0;
        for i in 0..m {
            proj += e.vectors[[i, j]] * b[i];
        }
        let w = proj / lam;
        for i in 0..m {
            x[i] += w * e.vectors[[i, j]];
        }
    }
    x
}
