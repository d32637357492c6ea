//! Small dense eigen-solvers: cyclic Jacobi for symmetric 3×3 matrices and
//! Hessenberg reduction + Francis double-shift QR for general real matrices.

use nalgebra::{Complex, DMatrix, Matrix3};

use crate::error::{Error, Result};

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 64;

/// Maximum total QR iterations before giving up.
pub const QR_MAX_ITERATIONS: usize = 500;

/// Eigen-decomposition of a symmetric 3×3 matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the corresponding unit
/// eigenvectors as the columns of the second element.
pub fn symmetric_eigen3(m: &Matrix3<f64>) -> ([f64; 3], Matrix3<f64>) {
    let mut a = (m + m.transpose()) * 0.5;
    let mut v = Matrix3::identity();
    let scale = a.norm().max(f64::MIN_POSITIVE);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = (a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2)).sqrt();
        if off <= JACOBI_TOL * scale {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq.abs() <= f64::MIN_POSITIVE {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;

            let mut rot = Matrix3::identity();
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;
            a = rot.transpose() * a * rot;
            a[(p, q)] = 0.0;
            a[(q, p)] = 0.0;
            v *= rot;
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let vals = order.map(|i| a[(i, i)]);
    let mut vecs = Matrix3::zeros();
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &v.column(i));
    }
    (vals, vecs)
}

/// Householder reduction to upper Hessenberg form (similarity transform).
pub fn hessenberg(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for k in 0..n.saturating_sub(2) {
        let alpha_norm = (k + 1..n).map(|i| a[(i, k)].powi(2)).sum::<f64>().sqrt();
        if alpha_norm == 0.0 {
            continue;
        }
        let alpha = if a[(k + 1, k)] > 0.0 { -alpha_norm } else { alpha_norm };
        let mut v = vec![0.0; n];
        v[k + 1] = a[(k + 1, k)] - alpha;
        for i in k + 2..n {
            v[i] = a[(i, k)];
        }
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // A <- H A H with H = I - 2 v vᵀ / (vᵀv)
        for j in 0..n {
            let dot: f64 = (k + 1..n).map(|i| v[i] * a[(i, j)]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k + 1..n {
                a[(i, j)] -= f * v[i];
            }
        }
        for i in 0..n {
            let dot: f64 = (k + 1..n).map(|j| a[(i, j)] * v[j]).sum();
            let f = 2.0 * dot / vnorm2;
            for j in k + 1..n {
                a[(i, j)] -= f * v[j];
            }
        }
        for i in k + 2..n {
            a[(i, k)] = 0.0;
        }
    }
    a
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    assert!(m.is_square(), "eigenvalues of a non-square matrix");
    let mut h = hessenberg(m);
    hessenberg_qr(&mut h)
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (EISPACK `hqr`
/// structure, with exceptional shifts after 10 and 20 stalled iterations).
fn hessenberg_qr(a: &mut DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let n = a.nrows() as isize;
    let mut out = vec![Complex::new(0.0, 0.0); n as usize];
    if n == 0 {
        return Ok(out);
    }
    let eps = f64::EPSILON;
    let idx = |i: isize, j: isize| (i as usize, j as usize);

    let mut anorm = 0.0;
    for i in 0..n {
        for j in (i - 1).max(0)..n {
            anorm += a[idx(i, j)].abs();
        }
    }

    let mut nn = n - 1;
    let mut t = 0.0;
    let mut its = 0usize;
    let mut total = 0usize;
    while nn >= 0 {
        let mut l = nn;
        while l > 0 {
            let mut s = a[idx(l - 1, l - 1)].abs() + a[idx(l, l)].abs();
            if s == 0.0 {
                s = anorm;
            }
            if a[idx(l, l - 1)].abs() <= eps * s {
                a[idx(l, l - 1)] = 0.0;
                break;
            }
            l -= 1;
        }

        let mut x = a[idx(nn, nn)];
        if l == nn {
            out[nn as usize] = Complex::new(x + t, 0.0);
            nn -= 1;
            its = 0;
            continue;
        }
        let mut y = a[idx(nn - 1, nn - 1)];
        let mut w = a[idx(nn, nn - 1)] * a[idx(nn - 1, nn)];
        if l == nn - 1 {
            let p = 0.5 * (y - x);
            let q = p * p + w;
            let z = q.abs().sqrt();
            x += t;
            if q >= 0.0 {
                let z = p + sign(z, p);
                out[(nn - 1) as usize] = Complex::new(x + z, 0.0);
                out[nn as usize] = Complex::new(if z != 0.0 { x - w / z } else { x + z }, 0.0);
            } else {
                out[nn as usize] = Complex::new(x + p, -z);
                out[(nn - 1) as usize] = Complex::new(x + p, z);
            }
            nn -= 2;
            its = 0;
            continue;
        }

        if total >= QR_MAX_ITERATIONS {
            return Err(Error::EigenNoConvergence(total));
        }
        if its == 10 || its == 20 {
            t += x;
            for i in 0..=nn {
                a[idx(i, i)] -= x;
            }
            let s = a[idx(nn, nn - 1)].abs() + a[idx(nn - 1, nn - 2)].abs();
            x = 0.75 * s;
            y = x;
            w = -0.4375 * s * s;
        }
        its += 1;
        total += 1;

        // Look for two consecutive small subdiagonal elements.
        let (mut p, mut q, mut r);
        let mut m = nn - 2;
        loop {
            let z = a[idx(m, m)];
            let rr = x - z;
            let ss = y - z;
            p = (rr * ss - w) / a[idx(m + 1, m)] + a[idx(m, m + 1)];
            q = a[idx(m + 1, m + 1)] - z - rr - ss;
            r = a[idx(m + 2, m + 1)];
            let s = p.abs() + q.abs() + r.abs();
            p /= s;
            q /= s;
            r /= s;
            if m == l {
                break;
            }
            let u = a[idx(m, m - 1)].abs() * (q.abs() + r.abs());
            let v = p.abs() * (a[idx(m - 1, m - 1)].abs() + z.abs() + a[idx(m + 1, m + 1)].abs());
            if u <= eps * v {
                break;
            }
            m -= 1;
        }
        for i in m..nn - 1 {
            a[idx(i + 2, i)] = 0.0;
            if i != m {
                a[idx(i + 2, i - 1)] = 0.0;
            }
        }

        // Double QR step on rows l..nn and columns m..nn.
        let mut k = m;
        while k < nn {
            if k != m {
                p = a[idx(k, k - 1)];
                q = a[idx(k + 1, k - 1)];
                r = if k + 1 != nn { a[idx(k + 2, k - 1)] } else { 0.0 };
                x = p.abs() + q.abs() + r.abs();
                if x != 0.0 {
                    p /= x;
                    q /= x;
                    r /= x;
                }
            }
            let s = sign((p * p + q * q + r * r).sqrt(), p);
            if s != 0.0 {
                if k == m {
                    if l != m {
                        a[idx(k, k - 1)] = -a[idx(k, k - 1)];
                    }
                } else {
                    a[idx(k, k - 1)] = -s * x;
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                for j in k..=nn {
                    let mut pp = a[idx(k, j)] + q * a[idx(k + 1, j)];
                    if k + 1 != nn {
                        pp += r * a[idx(k + 2, j)];
                        a[idx(k + 2, j)] -= pp * z;
                    }
                    a[idx(k + 1, j)] -= pp * y;
                    a[idx(k, j)] -= pp * x;
                }
                let mmin = if nn < k + 3 { nn } else { k + 3 };
                for i in l..=mmin {
                    let mut pp = x * a[idx(i, k)] + y * a[idx(i, k + 1)];
                    if k + 1 != nn {
                        pp += z * a[idx(i, k + 2)];
                        a[idx(i, k + 2)] -= pp * r;
                    }
                    a[idx(i, k + 1)] -= pp * q;
                    a[idx(i, k)] -= pp;
                }
            }
            k += 1;
        }
    }
    Ok(out)
}
