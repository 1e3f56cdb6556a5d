//! Dense symmetric eigensolvers.
//!
//! [`sym_eigen`] reduces to tridiagonal form with Householder reflections and
//! finishes with implicit-shift QL (the EISPACK `tred2`/`tql2` pair). The
//! working matrix is stored transposed so that every inner loop walks
//! contiguous memory; rows of the working array end up holding eigenvectors.
//! [`jacobi_eigen`] is an independent cyclic Jacobi solver used for small
//! problems and as a cross-check.

use ndarray::Array2;

use crate::{Error, Result};

/// Eigenvalues sorted descending, eigenvectors as orthonormal columns.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Array2<f64>,
    pub dim: usize,
}

impl EigenDecomposition {
    /// `‖A − VΛVᵀ‖_F / ‖A‖_F`.
    pub fn reconstruction_error(&self, a: &Array2<f64>) -> f64 {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
            col *= self.eigenvalues[j];
        }
        let rec = scaled.dot(&v.t());
        let num: f64 = (a - &rec).iter().map(|x| x * x).sum::<f64>().sqrt();
        let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }

    /// `max |VᵀV − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.eigenvectors.t().dot(&self.eigenvectors);
        let mut worst: f64 = 0.0;
        for ((i, j), v) in g.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
        worst
    }
}

const ASYMMETRY_TOL: f64 = 1e-10;
const QL_MAX_ITER: usize = 64;
const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_TOL: f64 = 1e-12;

fn check_symmetric(a: &Array2<f64>) -> Result<usize> {
    let (n, m) = a.dim();
    if n != m {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: m,
        });
    }
    if n == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let rel = if scale > 0.0 { asym / scale } else { 0.0 };
    if rel > ASYMMETRY_TOL {
        return Err(Error::NotSymmetric(rel));
    }
    Ok(n)
}

/// Full eigendecomposition of a dense symmetric matrix.
pub fn sym_eigen(a: &Array2<f64>) -> Result<EigenDecomposition> {
    let n = check_symmetric(a)?;
    let mut w = transposed(a, n);
    let (mut d, mut e) = tred2(&mut w, n, true);
    tql2(&mut d, &mut e, Some((&mut w, n)))?;

    let order = descending_order(&d);
    let mut vectors = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        let row = &w[src * n..(src + 1) * n];
        for (k, &v) in row.iter().enumerate() {
            vectors[[k, col]] = v;
        }
    }
    Ok(EigenDecomposition {
        eigenvalues: order.iter().map(|&i| d[i]).collect(),
        eigenvectors: vectors,
        dim: n,
    })
}

/// Eigenvalues only (descending). Skips the accumulation of the orthogonal
/// factor, which is most of the cost for large matrices.
pub fn sym_eigenvalues(a: &Array2<f64>) -> Result<Vec<f64>> {
    let n = check_symmetric(a)?;
    let mut w = transposed(a, n);
    let (mut d, mut e) = tred2(&mut w, n, false);
    tql2(&mut d, &mut e, None)?;
    let mut vals = d;
    vals.sort_by(|x, y| y.total_cmp(x));
    Ok(vals)
}

/// Eigenvalues (ascending) of the symmetric tridiagonal matrix with the given
/// diagonal and sub-diagonal, together with the first component of each
/// normalized eigenvector.
pub fn tridiagonal_first_components(diag: &[f64], sub: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = diag.len();
    if n == 0 || sub.len() + 1 != n {
        return Err(Error::invalid("tridiagonal: need n diagonal and n-1 sub-diagonal entries"));
    }
    let mut d = diag.to_vec();
    // tql2 expects e[i] to hold the coupling between i-1 and i.
    let mut e = vec![0.0; n];
    e[1..].copy_from_slice(sub);
    let mut w = vec![0.0; n];
    w[0] = 1.0;
    tql2(&mut d, &mut e, Some((&mut w, 1)))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
    Ok((
        order.iter().map(|&i| d[i]).collect(),
        order.iter().map(|&i| w[i]).collect(),
    ))
}

fn transposed(a: &Array2<f64>, n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            w[j * n + k] = a[[k, j]];
        }
    }
    w
}

fn descending_order(d: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]).then(i.cmp(&j)));
    order
}

/// Householder tridiagonalization. `w` holds the transposed matrix; on exit
/// (with `accumulate`) row `i` of `w` is the `i`-th column of the orthogonal
/// factor. Returns (diagonal, sub-diagonal with `e[i]` coupling `i-1, i`).
fn tred2(w: &mut [f64], n: usize, accumulate: bool) -> (Vec<f64>, Vec<f64>) {
    let mut d: Vec<f64> = (0..n).map(|j| w[j * n + n - 1]).collect();
    let mut e = vec![0.0; n];

    for i in (1..n).rev() {
        let scale: f64 = d[..i].iter().map(|v| v.abs()).sum();
        let mut h = 0.0;
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = w[j * n + i - 1];
                w[j * n + i] = 0.0;
                w[i * n + j] = 0.0;
            }
        } else {
            for v in d[..i].iter_mut() {
                *v /= scale;
                h += *v * *v;
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            e[..i].fill(0.0);

            for j in 0..i {
                let f = d[j];
                w[i * n + j] = f;
                let row = &w[j * n..j * n + i];
                let mut g = e[j] + row[j] * f;
                for k in (j + 1)..i {
                    g += row[k] * d[k];
                    e[k] += row[k] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let (f, g) = (d[j], e[j]);
                let row = &mut w[j * n..j * n + i];
                for k in j..i {
                    row[k] -= f * e[k] + g * d[k];
                }
                d[j] = w[j * n + i - 1];
                w[j * n + i] = 0.0;
            }
        }
        d[i] = h;
    }

    if !accumulate {
        for (i, di) in d.iter_mut().enumerate() {
            *di = w[i * n + i];
        }
        e[0] = 0.0;
        return (d, e);
    }

    for i in 0..n.saturating_sub(1) {
        w[i * n + n - 1] = w[i * n + i];
        w[i * n + i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            let (head, tail) = w.split_at_mut((i + 1) * n);
            let hv = &tail[..=i];
            for k in 0..=i {
                d[k] = hv[k] / h;
            }
            for j in 0..=i {
                let row = &mut head[j * n..j * n + i + 1];
                let g: f64 = hv.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
                for (r, dk) in row.iter_mut().zip(d.iter()) {
                    *r -= g * dk;
                }
            }
        }
        for k in 0..=i {
            w[(i + 1) * n + k] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = w[j * n + n - 1];
        w[j * n + n - 1] = 0.0;
    }
    w[(n - 1) * n + n - 1] = 1.0;
    e[0] = 0.0;
    (d, e)
}

/// Implicit-shift QL on a symmetric tridiagonal matrix. `vectors`, when
/// present, is a row-major array with one row per tridiagonal index and
/// `cols` columns; the plane rotations are applied to its rows.
fn tql2(d: &mut [f64], e: &mut [f64], mut vectors: Option<(&mut [f64], usize)>) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m == n {
            m = n - 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > QL_MAX_ITER {
                    return Err(Error::NoConvergence {
                        solver: "tridiagonal QL",
                        iterations: QL_MAX_ITER,
                    });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if let Some((w, cols)) = vectors.as_mut() {
                        let cols = *cols;
                        let (lo, hi) = w.split_at_mut((i + 1) * cols);
                        let row_i = &mut lo[i * cols..];
                        let row_next = &mut hi[..cols];
                        for (a, b) in row_i.iter_mut().zip(row_next.iter_mut()) {
                            let hv = *b;
                            *b = s * *a + c * hv;
                            *a = c * *a - s * hv;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Cyclic Jacobi eigensolver: at most 100 sweeps, converged once the
/// off-diagonal Frobenius norm falls below `1e-12 ‖A‖_F`.
pub fn jacobi_eigen(a: &Array2<f64>) -> Result<EigenDecomposition> {
    let n = check_symmetric(a)?;
    let mut m = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
    let mut v = Array2::<f64>::eye(n);
    let norm: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = JACOBI_TOL * norm;

    let off = |m: &Array2<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[[i, j]] * m[[i, j]];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = off(&m) <= tol;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence {
                solver: "cyclic Jacobi",
                iterations: JACOBI_MAX_SWEEPS,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let (akp, akq) = (m[[k, p]], m[[k, q]]);
                    let np = c * akp - s * akq;
                    let nq = s * akp + c * akq;
                    m[[k, p]] = np;
                    m[[p, k]] = np;
                    m[[k, q]] = nq;
                    m[[q, k]] = nq;
                }
                m[[p, p]] -= t * apq;
                m[[q, q]] += t * apq;
                m[[p, q]] = 0.0;
                m[[q, p]] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
        converged = off(&m) <= tol;
    }

    let diag: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    let order = descending_order(&diag);
    let mut vectors = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        vectors.column_mut(col).assign(&v.column(src));
    }
    Ok(EigenDecomposition {
        eigenvalues: order.iter().map(|&i| diag[i]).collect(),
        eigenvectors: vectors,
        dim: n,
    })
}
