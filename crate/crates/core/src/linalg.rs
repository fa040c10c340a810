//! Small dense/iterative solvers used by the profile solver.

/// Result of a GMRES solve.
pub(crate) struct GmresOutcome {
    pub x: Vec<f64>,
    pub relative_residual: f64,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Restarted GMRES with right preconditioning, solving `A x = b` from `x = 0`.
pub(crate) fn gmres(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    restart: usize,
    max_iterations: usize,
) -> GmresOutcome {
    let n = b.len();
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return GmresOutcome { x, relative_residual: 0.0, iterations: 0 };
    }
    let mut total = 0;
    let mut rel = 1.0;
    while total < max_iterations {
        let ax = apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        rel = beta / b_norm;
        if rel <= tol {
            break;
        }
        let m = restart.min(max_iterations - total);
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for j in 0..m {
            let z = precond(&basis[j]);
            let mut w = apply(&z);
            for (i, vi) in basis.iter().enumerate() {
                let hij = dot(&w, vi);
                h[i][j] = hij;
                w.iter_mut().zip(vi).for_each(|(wk, vk)| *wk -= hij * vk);
            }
            let hn = norm(&w);
            h[j + 1][j] = hn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let d = (h[j][j] * h[j][j] + h[j + 1][j] * h[j + 1][j]).sqrt();
            if d == 0.0 {
                k_used = j;
                break;
            }
            cs[j] = h[j][j] / d;
            sn[j] = h[j + 1][j] / d;
            h[j][j] = d;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            k_used = j + 1;
            total += 1;
            rel = g[j + 1].abs() / b_norm;
            if rel <= tol || hn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let s: f64 = (i + 1..k_used).map(|k| h[i][k] * y[k]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        let mut update = vec![0.0; n];
        for (yi, vi) in y.iter().zip(&basis) {
            update.iter_mut().zip(vi).for_each(|(u, v)| *u += yi * v);
        }
        let dz = precond(&update);
        x.iter_mut().zip(&dz).for_each(|(xi, di)| *xi += di);
        if rel <= tol || k_used == 0 {
            let ax = apply(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            rel = norm(&r) / b_norm;
            if rel <= tol || k_used == 0 {
                break;
            }
        }
    }
    GmresOutcome { x, relative_residual: rel, iterations: total }
}

/// Thomas algorithm for a tridiagonal system with constant off-diagonals `off`.
pub(crate) fn solve_tridiagonal(diag: &[f64], off: f64, rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut m = diag[0];
    c[0] = off / m;
    d[0] = rhs[0] / m;
    for i in 1..n {
        m = diag[i] - off * c[i - 1];
        c[i] = off / m;
        d[i] = (rhs[i] - off * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_matches_dense_product() {
        let diag = vec![4.0, 5.0, 6.0, 7.0, 8.0];
        let x_true = vec![1.0, -2.0, 0.5, 3.0, -1.0];
        let rhs: Vec<f64> = (0..5)
            .map(|i| {
                let mut s = diag[i] * x_true[i];
                if i > 0 {
                    s -= x_true[i - 1];
                }
                if i < 4 {
                    s -= x_true[i + 1];
                }
                s
            })
            .collect();
        let x = solve_tridiagonal(&diag, -1.0, &rhs);
        for (a, b) in x.iter().zip(&x_true) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let n = 40;
        let apply = |v: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let mut s = 3.0 * v[i];
                    if i > 0 {
                        s -= 1.2 * v[i - 1];
                    }
                    if i + 1 < n {
                        s -= 0.7 * v[i + 1];
                    }
                    s
                })
                .collect()
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let out = gmres(apply, |v| v.to_vec(), &b, 1e-12, 10, 500);
        let r = apply(&out.x);
        let err: f64 = r.iter().zip(&b).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }
}
