//! Discrete-time LTI state-space machinery: stepping, composition, frequency
//! response, Schur tests and invariant zeros.
//!
//! Global stepping convention: the output is computed from the current state
//! before the state update, i.e. `y(k) = C x(k) + D u(k)` followed by
//! `x(k+1) = A x(k) + B u(k)`. Every filter in this crate follows it.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

pub use crate::eigen::{spectral_radius, EigenResult};

/// Default tolerance for rank / null-space decisions.
pub const RANK_TOL: f64 = 1e-8;

/// A real discrete-time LTI system `(A, B, C, D)` with internal state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    state: DVector<f64>,
}

impl StateSpaceSystem {
    /// Builds a system after checking dimension consistency. The state starts
    /// at zero.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "StateSpaceSystem::new (A square)",
                expected: format!("{n}x{n}"),
                actual: format!("{}x{}", a.nrows(), a.ncols()),
            });
        }
        let p = b.ncols();
        let m = c.nrows();
        if b.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "StateSpaceSystem::new (B rows)",
                expected: format!("{n}"),
                actual: format!("{}", b.nrows()),
            });
        }
        if c.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "StateSpaceSystem::new (C cols)",
                expected: format!("{n}"),
                actual: format!("{}", c.ncols()),
            });
        }
        if d.nrows() != m || d.ncols() != p {
            return Err(Error::DimensionMismatch {
                context: "StateSpaceSystem::new (D)",
                expected: format!("{m}x{p}"),
                actual: format!("{}x{}", d.nrows(), d.ncols()),
            });
        }
        let state = DVector::zeros(n);
        Ok(Self { a, b, c, d, state })
    }

    /// Static (memoryless) system `y = D u`.
    pub fn from_static(d: DMatrix<f64>) -> Self {
        let (m, p) = (d.nrows(), d.ncols());
        Self {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, p),
            c: DMatrix::zeros(m, 0),
            d,
            state: DVector::zeros(0),
        }
    }

    /// Static identity of the given dimension.
    pub fn identity_static(dim: usize) -> Self {
        Self::from_static(DMatrix::identity(dim, dim))
    }

    /// Zero system with the given output/input dimensions (no dynamics).
    pub fn zero_static(m: usize, p: usize) -> Self {
        Self::from_static(DMatrix::zeros(m, p))
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.state
    }

    pub fn set_state(&mut self, x: DVector<f64>) -> Result<()> {
        if x.len() != self.n_states() {
            return Err(Error::DimensionMismatch {
                context: "StateSpaceSystem::set_state",
                expected: format!("{}", self.n_states()),
                actual: format!("{}", x.len()),
            });
        }
        self.state = x;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.state.fill(0.0);
    }

    /// One step: returns `y = C x + D u`, then advances `x <- A x + B u`.
    pub fn step(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.n_inputs() {
            return Err(Error::DimensionMismatch {
                context: "StateSpaceSystem::step",
                expected: format!("{}", self.n_inputs()),
                actual: format!("{}", u.len()),
            });
        }
        let y = &self.c * &self.state + &self.d * u;
        self.state = &self.a * &self.state + &self.b * u;
        Ok(y)
    }

    /// Frequency response `C (zI - A)^{-1} B + D`.
    ///
    /// Fails if `z` is within `RANK_TOL` of an eigenvalue of `A` (relative to
    /// the matrix scale).
    pub fn freq_response(&self, z: Complex64) -> Result<DMatrix<Complex64>> {
        let n = self.n_states();
        let dc = self.d.map(|x| Complex64::new(x, 0.0));
        if n == 0 {
            return Ok(dc);
        }
        let ac = self.a.map(|x| Complex64::new(x, 0.0));
        let shifted = DMatrix::from_diagonal_element(n, n, z) - ac;
        let lu = shifted.lu();
        let det = lu.determinant();
        let scale = self.a.amax().max(z.norm()).max(1.0).powi(n as i32);
        if !det.is_finite() || det.norm() <= RANK_TOL * scale {
            return Err(Error::Singular {
                context: "freq_response: z at a pole",
                tol: RANK_TOL,
            });
        }
        let bc = self.b.map(|x| Complex64::new(x, 0.0));
        let x = lu
            .solve(&bc)
            .ok_or(Error::Singular {
                context: "freq_response: z at a pole",
                tol: RANK_TOL,
            })?;
        let cc = self.c.map(|x| Complex64::new(x, 0.0));
        Ok(&cc * x + dc)
    }

    /// Spectral radius of the A-matrix.
    pub fn pole_radius(&self) -> Result<f64> {
        Ok(spectral_radius(&self.a)?.max_modulus)
    }

    /// True when all poles are strictly inside the unit circle.
    pub fn is_stable(&self) -> Result<bool> {
        Ok(self.pole_radius()? < 1.0)
    }
}

/// Composition kinds for [`compose`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComposeKind {
    /// `s1 * s2` as a transfer-matrix product: the input feeds `s2`, its
    /// output feeds `s1`.
    Series,
    /// `s1 + s2` (shared input, summed outputs).
    Sum,
    /// `s1 - s2`.
    Difference,
}

/// Block realization of a composed pair; the frequency response equals the
/// composed response at every z that is not a pole.
pub fn compose(
    kind: ComposeKind,
    s1: &StateSpaceSystem,
    s2: &StateSpaceSystem,
) -> Result<StateSpaceSystem> {
    match kind {
        ComposeKind::Series => {
            if s1.n_inputs() != s2.n_outputs() {
                return Err(Error::DimensionMismatch {
                    context: "compose(series)",
                    expected: format!("s1 inputs = s2 outputs = {}", s2.n_outputs()),
                    actual: format!("{}", s1.n_inputs()),
                });
            }
            let (n1, n2) = (s1.n_states(), s2.n_states());
            let n = n1 + n2;
            let mut a = DMatrix::zeros(n, n);
            a.view_mut((0, 0), (n1, n1)).copy_from(&s1.a);
            a.view_mut((0, n1), (n1, n2)).copy_from(&(&s1.b * &s2.c));
            a.view_mut((n1, n1), (n2, n2)).copy_from(&s2.a);
            let mut b = DMatrix::zeros(n, s2.n_inputs());
            b.view_mut((0, 0), (n1, s2.n_inputs()))
                .copy_from(&(&s1.b * &s2.d));
            b.view_mut((n1, 0), (n2, s2.n_inputs())).copy_from(&s2.b);
            let mut c = DMatrix::zeros(s1.n_outputs(), n);
            c.view_mut((0, 0), (s1.n_outputs(), n1)).copy_from(&s1.c);
            c.view_mut((0, n1), (s1.n_outputs(), n2))
                .copy_from(&(&s1.d * &s2.c));
            let d = &s1.d * &s2.d;
            StateSpaceSystem::new(a, b, c, d)
        }
        ComposeKind::Sum | ComposeKind::Difference => {
            if s1.n_inputs() != s2.n_inputs() || s1.n_outputs() != s2.n_outputs() {
                return Err(Error::DimensionMismatch {
                    context: "compose(sum/difference)",
                    expected: format!("{}x{} io", s1.n_outputs(), s1.n_inputs()),
                    actual: format!("{}x{} io", s2.n_outputs(), s2.n_inputs()),
                });
            }
            let sign = if kind == ComposeKind::Sum { 1.0 } else { -1.0 };
            let (n1, n2) = (s1.n_states(), s2.n_states());
            let n = n1 + n2;
            let mut a = DMatrix::zeros(n, n);
            a.view_mut((0, 0), (n1, n1)).copy_from(&s1.a);
            a.view_mut((n1, n1), (n2, n2)).copy_from(&s2.a);
            let mut b = DMatrix::zeros(n, s1.n_inputs());
            b.view_mut((0, 0), (n1, s1.n_inputs())).copy_from(&s1.b);
            b.view_mut((n1, 0), (n2, s1.n_inputs())).copy_from(&s2.b);
            let mut c = DMatrix::zeros(s1.n_outputs(), n);
            c.view_mut((0, 0), (s1.n_outputs(), n1)).copy_from(&s1.c);
            c.view_mut((0, n1), (s1.n_outputs(), n2))
                .copy_from(&(&s2.c * sign));
            let d = &s1.d + &s2.d * sign;
            StateSpaceSystem::new(a, b, c, d)
        }
    }
}

/// Series product `s1 * s2`.
pub fn series(s1: &StateSpaceSystem, s2: &StateSpaceSystem) -> Result<StateSpaceSystem> {
    compose(ComposeKind::Series, s1, s2)
}

/// Parallel sum `s1 + s2`.
pub fn sum(s1: &StateSpaceSystem, s2: &StateSpaceSystem) -> Result<StateSpaceSystem> {
    compose(ComposeKind::Sum, s1, s2)
}

/// Parallel difference `s1 - s2`.
pub fn difference(s1: &StateSpaceSystem, s2: &StateSpaceSystem) -> Result<StateSpaceSystem> {
    compose(ComposeKind::Difference, s1, s2)
}

/// An invariant zero `z0` with a null direction `(x0, g)` of the Rosenbrock
/// matrix `[z0 I - A, -B; C, D]`.
#[derive(Debug, Clone)]
pub struct ZeroDirection {
    pub z0: Complex64,
    pub x0: DVector<Complex64>,
    pub g: DVector<Complex64>,
}

impl ZeroDirection {
    /// Residual `‖[z0 I − A, −B; C, D]·[x0; g]‖ / (‖x0‖+‖g‖)`.
    pub fn residual(&self, sys: &StateSpaceSystem) -> f64 {
        let n = sys.n_states();
        let top = {
            let ac = sys.a.map(|x| Complex64::new(x, 0.0));
            let bc = sys.b.map(|x| Complex64::new(x, 0.0));
            (DMatrix::from_diagonal_element(n, n, self.z0) - ac) * &self.x0 - bc * &self.g
        };
        let bottom = {
            let cc = sys.c.map(|x| Complex64::new(x, 0.0));
            let dc = sys.d.map(|x| Complex64::new(x, 0.0));
            cc * &self.x0 + dc * &self.g
        };
        let num = (top.norm_squared() + bottom.norm_squared()).sqrt();
        let den = self.x0.norm() + self.g.norm();
        if den == 0.0 {
            f64::INFINITY
        } else {
            num / den
        }
    }
}

/// Solves `m x = rhs` by full-pivot Gaussian elimination with tiny pivots
/// floored, so near-singular systems act as inverse-iteration amplifiers.
fn complex_solve_floored(
    m: &DMatrix<Complex64>,
    rhs: &DVector<Complex64>,
    floor: f64,
) -> Option<DVector<Complex64>> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut b = rhs.clone();
    let mut col_perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (mut pi, mut pj, mut pv) = (k, k, 0.0);
        for i in k..n {
            for j in k..n {
                let v = a[(i, j)].norm();
                if v > pv {
                    (pi, pj, pv) = (i, j, v);
                }
            }
        }
        a.swap_rows(k, pi);
        b.swap_rows(k, pi);
        a.swap_columns(k, pj);
        col_perm.swap(k, pj);
        if a[(k, k)].norm() < floor {
            a[(k, k)] = Complex64::new(floor, 0.0);
        }
        for i in k + 1..n {
            let f = a[(i, k)] / a[(k, k)];
            for j in k..n {
                let akj = a[(k, j)];
                a[(i, j)] -= f * akj;
            }
            let bk = b[k];
            b[i] -= f * bk;
        }
    }
    let mut x = DVector::from_element(n, Complex64::new(0.0, 0.0));
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= a[(i, j)] * x[j];
        }
        if !s.is_finite() {
            return None;
        }
        x[i] = s / a[(i, i)];
    }
    let mut out = DVector::from_element(n, Complex64::new(0.0, 0.0));
    for (k, &orig) in col_perm.iter().enumerate() {
        out[orig] = x[k];
    }
    Some(out)
}

/// Null vector of a square complex matrix by Gaussian elimination with full
/// pivoting; `None` when the matrix has full rank at the tolerance.
fn complex_null_vector(m: &DMatrix<Complex64>, tol: f64) -> Option<DVector<Complex64>> {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    if n == 0 {
        return None;
    }
    let mut a = m.clone();
    let mut col_perm: Vec<usize> = (0..n).collect();
    let scale = a.iter().map(|x| x.norm()).fold(0.0, f64::max).max(1.0);
    let mut rank = 0usize;
    for k in 0..n {
        // Full pivot search in the trailing block.
        let (mut pi, mut pj, mut pv) = (k, k, 0.0);
        for i in k..n {
            for j in k..n {
                let v = a[(i, j)].norm();
                if v > pv {
                    (pi, pj, pv) = (i, j, v);
                }
            }
        }
        if pv <= tol * scale {
            break;
        }
        a.swap_rows(k, pi);
        a.swap_columns(k, pj);
        col_perm.swap(k, pj);
        for i in k + 1..n {
            let f = a[(i, k)] / a[(k, k)];
            for j in k..n {
                let akj = a[(k, j)];
                a[(i, j)] -= f * akj;
            }
        }
        rank += 1;
    }
    if rank == n {
        return None;
    }
    // Free variable = first deficient column (index `rank` after permutation).
    let mut x = DVector::from_element(n, Complex64::new(0.0, 0.0));
    x[rank] = Complex64::new(1.0, 0.0);
    for i in (0..rank).rev() {
        let mut s = Complex64::new(0.0, 0.0);
        for j in i + 1..n {
            s += a[(i, j)] * x[j];
        }
        x[i] = -s / a[(i, i)];
    }
    // Undo the column permutation.
    let mut out = DVector::from_element(n, Complex64::new(0.0, 0.0));
    for (k, &orig) in col_perm.iter().enumerate() {
        out[orig] = x[k];
    }
    let norm = out.norm();
    if norm > 0.0 {
        out /= Complex64::new(norm, 0.0);
    }
    Some(out)
}

/// All finite invariant zeros of a square system with a verified null
/// direction each.
///
/// The singular Rosenbrock pencil is handled by shift-and-invert: with
/// `M1 = [A, B; C, D]`, `M2 = [I, 0; 0, 0]` and a random real shift `s`,
/// the ordinary eigenvalues `mu` of `(M1 - s M2)^{-1} M2` map to zeros
/// `z = s + 1/mu` for `|mu|` above tolerance.
pub fn invariant_zeros(sys: &StateSpaceSystem, rng: &mut impl Rng) -> Result<Vec<ZeroDirection>> {
    let (n, m, p) = (sys.n_states(), sys.n_outputs(), sys.n_inputs());
    if m != p {
        return Err(Error::ZerosUnsupported {
            reason: format!("system must be square (m = p), got m={m}, p={p}"),
        });
    }
    let dim = n + m;
    if dim == 0 {
        return Ok(Vec::new());
    }

    let mut m1 = DMatrix::zeros(dim, dim);
    m1.view_mut((0, 0), (n, n)).copy_from(&sys.a);
    m1.view_mut((0, n), (n, p)).copy_from(&sys.b);
    m1.view_mut((n, 0), (m, n)).copy_from(&sys.c);
    m1.view_mut((n, n), (m, p)).copy_from(&sys.d);

    let scale = m1.amax().max(1.0);
    let mut candidates: Vec<Complex64> = Vec::new();
    let mut shifted_ok = false;
    for _ in 0..8 {
        let s: f64 = rng.gen_range(-2.0..2.0) * scale + rng.gen_range(0.1..0.9);
        let mut ms = m1.clone();
        for i in 0..n {
            ms[(i, i)] -= s;
        }
        let lu = ms.lu();
        let det = lu.determinant();
        if !det.is_finite() || det.abs() <= 1e-300 {
            continue;
        }
        // K = (M1 - s M2)^{-1} M2: columns past n are zero.
        let mut m2 = DMatrix::zeros(dim, dim);
        for i in 0..n {
            m2[(i, i)] = 1.0;
        }
        let Some(k) = lu.solve(&m2) else { continue };
        let mus = crate::eigen::eigenvalues(&k)?;
        candidates = mus
            .into_iter()
            .filter(|mu| mu.norm() > RANK_TOL)
            .map(|mu| Complex64::new(s, 0.0) + mu.inv())
            .collect();
        shifted_ok = true;
        break;
    }
    if !shifted_ok {
        return Err(Error::DefectivePencil { zeros: Vec::new() });
    }

    // Deduplicate (multiplicities and conjugate re-hits at the same point).
    let mut unique: Vec<Complex64> = Vec::new();
    for z in candidates {
        let near = unique
            .iter()
            .any(|u| (u - z).norm() <= 1e-6 * z.norm().max(1.0));
        if !near {
            unique.push(z);
        }
    }
    unique.sort_by(|a, b| {
        (a.re, a.im)
            .partial_cmp(&(b.re, b.im))
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut out = Vec::new();
    let mut unverified: Vec<(f64, f64)> = Vec::new();
    for z0 in unique {
        match refine_zero_direction(sys, z0) {
            Some(zd) => out.push(zd),
            None => unverified.push((z0.re, z0.im)),
        }
    }
    if out.is_empty() && !unverified.is_empty() {
        return Err(Error::DefectivePencil { zeros: unverified });
    }
    Ok(out)
}

fn rosenbrock_pencil(sys: &StateSpaceSystem, z: Complex64) -> DMatrix<Complex64> {
    let (n, m, p) = (sys.n_states(), sys.n_outputs(), sys.n_inputs());
    let dim = n + m;
    let mut pencil = DMatrix::from_element(dim, dim, Complex64::new(0.0, 0.0));
    for i in 0..n {
        for j in 0..n {
            pencil[(i, j)] = -Complex64::new(sys.a[(i, j)], 0.0);
        }
        pencil[(i, i)] += z;
        for j in 0..p {
            pencil[(i, n + j)] = Complex64::new(-sys.b[(i, j)], 0.0);
        }
    }
    for i in 0..m {
        for j in 0..n {
            pencil[(n + i, j)] = Complex64::new(sys.c[(i, j)], 0.0);
        }
        for j in 0..p {
            pencil[(n + i, n + j)] = Complex64::new(sys.d[(i, j)], 0.0);
        }
    }
    pencil
}

/// Polishes a zero estimate by Rayleigh refinement of `z` interleaved with
/// floored inverse iteration for the null direction; keeps the best-residual
/// candidate and drops zeros that never meet the rank tolerance.
fn refine_zero_direction(sys: &StateSpaceSystem, z_init: Complex64) -> Option<ZeroDirection> {
    let (n, p) = (sys.n_states(), sys.n_inputs());
    let dim = n + p;
    let scale = sys.a.amax().max(sys.b.amax()).max(1.0);
    let ac = sys.a.map(|x| Complex64::new(x, 0.0));
    let bc = sys.b.map(|x| Complex64::new(x, 0.0));

    let make = |z0: Complex64, w: &DVector<Complex64>| ZeroDirection {
        z0,
        x0: w.rows(0, n).into_owned(),
        g: w.rows(n, p).into_owned(),
    };
    let rayleigh = |z0: Complex64, w: &DVector<Complex64>| {
        let x0 = w.rows(0, n).into_owned();
        let g = w.rows(n, p).into_owned();
        let denom = x0.norm_squared();
        if denom > 1e-20 {
            (x0.adjoint() * (&ac * &x0 + &bc * &g))[(0, 0)] / Complex64::new(denom, 0.0)
        } else {
            z0
        }
    };

    let w_ge = complex_null_vector(&rosenbrock_pencil(sys, z_init), RANK_TOL)?;
    let mut best = make(z_init, &w_ge);
    let mut best_res = best.residual(sys);

    // Generic right-hand sides: the previous iterate can be orthogonal to
    // the left null vector, which kills the amplification.
    let seeds: [Box<dyn Fn(usize) -> Complex64>; 2] = [
        Box::new(|_| Complex64::new(1.0, 0.0)),
        Box::new(|i| Complex64::new(1.0 + 0.37 * i as f64, 0.11 * (i as f64 + 1.0))),
    ];
    let mut w = w_ge;
    let mut z0 = z_init;
    for round in 0..4 {
        z0 = rayleigh(z0, &w);
        let pencil = rosenbrock_pencil(sys, z0);
        let rhs = if round < seeds.len() {
            DVector::from_fn(dim, |i, _| seeds[round](i))
        } else {
            w.clone()
        };
        let Some(next) = complex_solve_floored(&pencil, &rhs, 1e-14 * scale) else {
            break;
        };
        let norm = next.norm();
        if !norm.is_finite() || norm == 0.0 {
            break;
        }
        w = next / Complex64::new(norm, 0.0);
        let cand = make(z0, &w);
        let res = cand.residual(sys);
        if res < best_res {
            best = cand;
            best_res = res;
        }
    }
    if best_res <= RANK_TOL {
        Some(best)
    } else {
        None
    }
}
