//! Dense real eigenvalue computation via Hessenberg reduction and Francis
//! double-shift QR iteration. Eigenvalues only, no Schur vectors; sized for
//! the small matrices this crate works with (n up to a few dozen).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Convergence tolerance for subdiagonal deflation.
pub const EIG_TOL: f64 = 1e-12;
/// Total Francis sweeps before giving up.
pub const MAX_QR_SWEEPS: usize = 500;

/// Eigenvalues of a square matrix together with the largest modulus.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub values: Vec<Complex64>,
    pub max_modulus: f64,
}

impl EigenResult {
    /// Schur test: every eigenvalue strictly inside the unit circle.
    pub fn is_schur(&self) -> bool {
        self.max_modulus < 1.0
    }
}

/// Householder reduction to upper Hessenberg form, in place.
fn hessenberg(h: &mut DMatrix<f64>) {
    let n = h.nrows();
    if n < 3 {
        return;
    }
    for col in 0..n - 2 {
        // Reflector annihilating h[col+2.., col].
        let mut alpha = 0.0;
        for i in col + 1..n {
            alpha += h[(i, col)] * h[(i, col)];
        }
        alpha = alpha.sqrt();
        if alpha <= f64::MIN_POSITIVE {
            continue;
        }
        if h[(col + 1, col)] > 0.0 {
            alpha = -alpha;
        }
        let mut v = vec![0.0; n];
        v[col + 1] = h[(col + 1, col)] - alpha;
        for i in col + 2..n {
            v[i] = h[(i, col)];
        }
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 <= f64::MIN_POSITIVE {
            continue;
        }
        let beta = 2.0 / vnorm2;
        // H <- (I - beta v v^T) H
        for j in 0..n {
            let mut dot = 0.0;
            for i in col + 1..n {
                dot += v[i] * h[(i, j)];
            }
            let s = beta * dot;
            for i in col + 1..n {
                h[(i, j)] -= s * v[i];
            }
        }
        // H <- H (I - beta v v^T)
        for i in 0..n {
            let mut dot = 0.0;
            for j in col + 1..n {
                dot += h[(i, j)] * v[j];
            }
            let s = beta * dot;
            for j in col + 1..n {
                h[(i, j)] -= s * v[j];
            }
        }
        for i in col + 2..n {
            h[(i, col)] = 0.0;
        }
    }
}

/// Eigenvalues of the trailing/embedded 2x2 block [[a,b],[c,d]].
fn eig2(a: f64, b: f64, c: f64, d: f64) -> (Complex64, Complex64) {
    let tr = a + d;
    let det = a * d - b * c;
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        // Stable split: larger-magnitude root first, companion via det.
        let r1 = if tr >= 0.0 { tr / 2.0 + sq } else { tr / 2.0 - sq };
        let r2 = if r1.abs() > f64::MIN_POSITIVE { det / r1 } else { tr / 2.0 - sq.copysign(tr) };
        (Complex64::new(r1, 0.0), Complex64::new(r2, 0.0))
    } else {
        let im = (-disc).sqrt();
        (
            Complex64::new(tr / 2.0, im),
            Complex64::new(tr / 2.0, -im),
        )
    }
}

/// All eigenvalues of a real square matrix.
///
/// Reduces to Hessenberg form, then runs Francis double-shift QR sweeps with
/// deflation. Fails with [`Error::EigenNonConvergence`] if the active block
/// has not deflated after `max_sweeps` total sweeps.
pub fn eigenvalues_with(
    m: &DMatrix<f64>,
    tol: f64,
    max_sweeps: usize,
) -> Result<Vec<Complex64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            context: "eigenvalues",
            expected: "square matrix".into(),
            actual: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut h = m.clone();
    hessenberg(&mut h);

    let mut values = Vec::with_capacity(n);
    let mut hi = n; // active block is h[lo..hi, lo..hi]
    let mut sweeps = 0usize;
    let mut since_deflation = 0usize;

    while hi > 0 {
        if hi == 1 {
            values.push(Complex64::new(h[(0, 0)], 0.0));
            break;
        }
        // Deflate tiny subdiagonals from the bottom of the active block.
        let mut deflated = true;
        while deflated && hi > 0 {
            deflated = false;
            if hi == 1 {
                values.push(Complex64::new(h[(0, 0)], 0.0));
                hi = 0;
                break;
            }
            let s = h[(hi - 1, hi - 1)].abs() + h[(hi - 2, hi - 2)].abs();
            let s = if s == 0.0 { 1.0 } else { s };
            if h[(hi - 1, hi - 2)].abs() <= tol * s {
                values.push(Complex64::new(h[(hi - 1, hi - 1)], 0.0));
                hi -= 1;
                since_deflation = 0;
                deflated = true;
                continue;
            }
            if hi >= 2 {
                let split = if hi == 2 {
                    true
                } else {
                    let s2 = h[(hi - 2, hi - 2)].abs() + h[(hi - 3, hi - 3)].abs();
                    let s2 = if s2 == 0.0 { 1.0 } else { s2 };
                    h[(hi - 2, hi - 3)].abs() <= tol * s2
                };
                if split {
                    let (l1, l2) = eig2(
                        h[(hi - 2, hi - 2)],
                        h[(hi - 2, hi - 1)],
                        h[(hi - 1, hi - 2)],
                        h[(hi - 1, hi - 1)],
                    );
                    values.push(l1);
                    values.push(l2);
                    hi -= 2;
                    since_deflation = 0;
                    deflated = true;
                    continue;
                }
            }
        }
        if hi == 0 {
            break;
        }

        // Find the top of the unreduced block.
        let mut lo = hi - 1;
        while lo > 0 {
            let s = h[(lo, lo)].abs() + h[(lo - 1, lo - 1)].abs();
            let s = if s == 0.0 { 1.0 } else { s };
            if h[(lo, lo - 1)].abs() <= tol * s {
                h[(lo, lo - 1)] = 0.0;
                break;
            }
            lo -= 1;
        }

        if sweeps >= max_sweeps {
            return Err(Error::EigenNonConvergence {
                sweeps,
                residual: h[(hi - 1, hi - 2)].abs(),
            });
        }
        sweeps += 1;
        since_deflation += 1;

        // Double-shift from the trailing 2x2; exceptional shift when stuck.
        let (mut tr, mut det);
        if since_deflation % 12 == 0 {
            let s = h[(hi - 1, hi - 2)].abs() + if hi >= 3 { h[(hi - 2, hi - 3)].abs() } else { 0.0 };
            tr = 1.5 * s;
            det = s * s;
        } else {
            let a = h[(hi - 2, hi - 2)];
            let b = h[(hi - 2, hi - 1)];
            let c = h[(hi - 1, hi - 2)];
            let d = h[(hi - 1, hi - 1)];
            tr = a + d;
            det = a * d - b * c;
        }
        if !tr.is_finite() || !det.is_finite() {
            tr = 0.0;
            det = 0.0;
        }

        // First column of (H - l1 I)(H - l2 I) restricted to the block.
        let h00 = h[(lo, lo)];
        let h01 = h[(lo, lo + 1)];
        let h10 = h[(lo + 1, lo)];
        let h11 = h[(lo + 1, lo + 1)];
        let mut x = h00 * h00 + h01 * h10 - tr * h00 + det;
        let mut y = h10 * (h00 + h11 - tr);
        let mut z = if lo + 2 < hi { h10 * h[(lo + 2, lo + 1)] } else { 0.0 };

        // Chase the bulge.
        for k in lo..hi - 2 {
            // Householder on (x, y, z).
            let scale = x.abs() + y.abs() + z.abs();
            if scale > f64::MIN_POSITIVE {
                let (xs, ys, zs) = (x / scale, y / scale, z / scale);
                let mut alpha = (xs * xs + ys * ys + zs * zs).sqrt();
                if xs > 0.0 {
                    alpha = -alpha;
                }
                if alpha.abs() > f64::MIN_POSITIVE {
                    let v0 = xs - alpha;
                    let (v1, v2) = (ys, zs);
                    let vnorm2 = v0 * v0 + v1 * v1 + v2 * v2;
                    if vnorm2 > f64::MIN_POSITIVE {
                        let beta = 2.0 / vnorm2;
                        let jlo = if k > lo { k - 1 } else { lo };
                        // Rows k..k+3 of H (columns jlo..n).
                        for j in jlo..n {
                            let dot = v0 * h[(k, j)]
                                + v1 * h[(k + 1, j)]
                                + if k + 2 < n { v2 * h[(k + 2, j)] } else { 0.0 };
                            let s = beta * dot;
                            h[(k, j)] -= s * v0;
                            h[(k + 1, j)] -= s * v1;
                            if k + 2 < n {
                                h[(k + 2, j)] -= s * v2;
                            }
                        }
                        // Columns k..k+3 of H (rows 0..min(k+4, hi)).
                        let imax = usize::min(k + 4, hi);
                        for i in 0..imax {
                            let dot = v0 * h[(i, k)]
                                + v1 * h[(i, k + 1)]
                                + if k + 2 < n { v2 * h[(i, k + 2)] } else { 0.0 };
                            let s = beta * dot;
                            h[(i, k)] -= s * v0;
                            h[(i, k + 1)] -= s * v1;
                            if k + 2 < n {
                                h[(i, k + 2)] -= s * v2;
                            }
                        }
                    }
                }
            }
            x = h[(k + 1, k)];
            y = h[(k + 2, k)];
            z = if k + 3 < hi { h[(k + 3, k)] } else { 0.0 };
            if k > lo {
                h[(k + 1, k - 1)] = 0.0;
                h[(k + 2, k - 1)] = 0.0;
            }
        }
        // Final Givens on the last 2x2 of the bulge.
        let k = hi - 2;
        let scale = x.abs() + y.abs();
        if scale > f64::MIN_POSITIVE {
            let (xs, ys) = (x / scale, y / scale);
            let r = (xs * xs + ys * ys).sqrt();
            let (c, s) = (xs / r, ys / r);
            let jlo = if k > lo { k - 1 } else { lo };
            for j in jlo..n {
                let t = c * h[(k, j)] + s * h[(k + 1, j)];
                h[(k + 1, j)] = -s * h[(k, j)] + c * h[(k + 1, j)];
                h[(k, j)] = t;
            }
            for i in 0..hi {
                let t = c * h[(i, k)] + s * h[(i, k + 1)];
                h[(i, k + 1)] = -s * h[(i, k)] + c * h[(i, k + 1)];
                h[(i, k)] = t;
            }
            if k > lo {
                h[(k + 1, k - 1)] = 0.0;
            }
        }
    }

    debug_assert_eq!(values.len(), n);
    Ok(values)
}

/// Eigenvalues with the default tolerance and sweep budget.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    eigenvalues_with(m, EIG_TOL, MAX_QR_SWEEPS)
}

/// Spectral radius of a real square matrix; `max_modulus < 1` means Schur.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<EigenResult> {
    let values = eigenvalues(m)?;
    let max_modulus = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    Ok(EigenResult { values, max_modulus })
}
