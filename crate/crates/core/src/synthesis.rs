//! Gain synthesis (Riccati fixed points), switched gain banks, coprime factor
//! construction and the derived detector filter families.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eigen::spectral_radius;
use crate::error::{Error, Result};
use crate::statespace::{difference, series, StateSpaceSystem};

/// Riccati fixed-point tolerance (infinity norm of the iterate difference).
pub const RICCATI_TOL: f64 = 1e-11;
/// Riccati iteration budget.
pub const RICCATI_MAX_ITERS: usize = 100_000;

/// Noise statistics of the plant: process, measurement, cross term and
/// initial-state covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub sigma_w: DMatrix<f64>,
    pub sigma_v: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub pi0: DMatrix<f64>,
}

impl NoiseSpec {
    pub fn new(
        sigma_w: DMatrix<f64>,
        sigma_v: DMatrix<f64>,
        s: DMatrix<f64>,
        pi0: DMatrix<f64>,
    ) -> Result<Self> {
        let n = sigma_w.nrows();
        let m = sigma_v.nrows();
        if sigma_w.ncols() != n || sigma_v.ncols() != m || pi0.nrows() != n || pi0.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "NoiseSpec::new",
                expected: format!("Sigma_w {n}x{n}, Sigma_v {m}x{m}, Pi0 {n}x{n}"),
                actual: format!(
                    "{}x{}, {}x{}, {}x{}",
                    sigma_w.nrows(),
                    sigma_w.ncols(),
                    sigma_v.nrows(),
                    sigma_v.ncols(),
                    pi0.nrows(),
                    pi0.ncols()
                ),
            });
        }
        if s.nrows() != n || s.ncols() != m {
            return Err(Error::DimensionMismatch {
                context: "NoiseSpec::new (S)",
                expected: format!("{n}x{m}"),
                actual: format!("{}x{}", s.nrows(), s.ncols()),
            });
        }
        check_psd(&sigma_w, "Sigma_w")?;
        check_psd(&pi0, "Pi0")?;
        check_pd(&sigma_v, "Sigma_v")?;
        // Joint [[Sigma_w, S], [S^T, Sigma_v]] must be PSD as well.
        let dim = n + m;
        let mut joint = DMatrix::zeros(dim, dim);
        joint.view_mut((0, 0), (n, n)).copy_from(&sigma_w);
        joint.view_mut((0, n), (n, m)).copy_from(&s);
        joint.view_mut((n, 0), (m, n)).copy_from(&s.transpose());
        joint.view_mut((n, n), (m, m)).copy_from(&sigma_v);
        check_psd(&joint, "joint noise covariance")?;
        Ok(Self {
            sigma_w,
            sigma_v,
            s,
            pi0,
        })
    }

    /// Isotropic spec without cross terms; handy for tests and gain design.
    pub fn isotropic(n: usize, m: usize, q: f64, r: f64) -> Self {
        Self {
            sigma_w: DMatrix::identity(n, n) * q,
            sigma_v: DMatrix::identity(m, m) * r,
            s: DMatrix::zeros(n, m),
            pi0: DMatrix::zeros(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.sigma_w.nrows()
    }
    pub fn m(&self) -> usize {
        self.sigma_v.nrows()
    }
}

fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-8 * scale {
        return Err(Error::InvalidArgument(format!("{what} is not symmetric")));
    }
    if m.nrows() == 0 {
        return Ok(());
    }
    let min = m.clone().symmetric_eigen().eigenvalues.min();
    if min < -1e-8 * scale {
        return Err(Error::IndefiniteCovariance { eigenvalue: min });
    }
    Ok(())
}

fn check_pd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    check_psd(m, what)?;
    if m.clone().cholesky().is_none() {
        return Err(Error::InvalidArgument(format!(
            "{what} must be positive definite"
        )));
    }
    Ok(())
}

/// Steady Kalman one-step-predictor solution.
#[derive(Debug, Clone)]
pub struct KalmanSolution {
    pub p: DMatrix<f64>,
    pub l_k: DMatrix<f64>,
    pub sigma_r: DMatrix<f64>,
}

impl KalmanSolution {
    /// Residual of the fixed point equation at the stored P.
    pub fn dare_residual(&self, a: &DMatrix<f64>, c: &DMatrix<f64>, noise: &NoiseSpec) -> f64 {
        let next = dare_iterate(&self.p, a, c, &noise.sigma_w, &noise.sigma_v, &noise.s);
        (next - &self.p).amax()
    }

    pub fn sigma_r_inv(&self) -> Result<DMatrix<f64>> {
        self.sigma_r
            .clone()
            .cholesky()
            .map(|ch| ch.inverse())
            .ok_or(Error::Singular {
                context: "Sigma_r inverse",
                tol: 0.0,
            })
    }
}

fn dare_iterate(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    sigma_w: &DMatrix<f64>,
    sigma_v: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> DMatrix<f64> {
    let apct = a * p * c.transpose() + s;
    let sr = c * p * c.transpose() + sigma_v;
    let gain = &apct
        * sr.clone()
            .cholesky()
            .map(|ch| ch.inverse())
            .unwrap_or_else(|| sr.clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(sr.nrows(), sr.ncols())));
    a * p * a.transpose() + sigma_w - &gain * apct.transpose()
}

/// Steady Kalman gain by fixed-point iteration started at `Pi0`.
pub fn kalman_gain(a: &DMatrix<f64>, c: &DMatrix<f64>, noise: &NoiseSpec) -> Result<KalmanSolution> {
    let n = a.nrows();
    if a.ncols() != n || c.ncols() != n || noise.n() != n || noise.m() != c.nrows() {
        return Err(Error::DimensionMismatch {
            context: "kalman_gain",
            expected: format!("A {n}x{n}, C m x {n}, matching noise"),
            actual: format!(
                "A {}x{}, C {}x{}, noise ({}, {})",
                a.nrows(),
                a.ncols(),
                c.nrows(),
                c.ncols(),
                noise.n(),
                noise.m()
            ),
        });
    }
    let mut p = noise.pi0.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..RICCATI_MAX_ITERS {
        let next = dare_iterate(&p, a, c, &noise.sigma_w, &noise.sigma_v, &noise.s);
        residual = (&next - &p).amax();
        p = next;
        if residual < RICCATI_TOL {
            let sigma_r = c * &p * c.transpose() + &noise.sigma_v;
            let sr_inv = sigma_r
                .clone()
                .cholesky()
                .ok_or(Error::Singular {
                    context: "kalman_gain: Sigma_r",
                    tol: 0.0,
                })?
                .inverse();
            let l_k = (a * &p * c.transpose() + &noise.s) * sr_inv;
            let radius = spectral_radius(&(a - &l_k * c))?.max_modulus;
            if radius >= 1.0 {
                return Err(Error::NotDetectable { radius });
            }
            return Ok(KalmanSolution { p, l_k, sigma_r });
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(Error::IterationDiverged {
        iterations: RICCATI_MAX_ITERS,
        residual,
    })
}

/// Stabilizing state-feedback gain with the convention `u = F x`:
/// `F = -(Rw + B' P B)^{-1} B' P A` from the dual Riccati fixed point.
pub fn feedback_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    qw: &DMatrix<f64>,
    rw: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let p_in = b.ncols();
    if a.ncols() != n || b.nrows() != n || qw.nrows() != n || rw.nrows() != p_in {
        return Err(Error::DimensionMismatch {
            context: "feedback_gain",
            expected: format!("A {n}x{n}, B {n}xp, Qw {n}x{n}, Rw pxp"),
            actual: format!(
                "A {}x{}, B {}x{}, Qw {}x{}, Rw {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                qw.nrows(),
                qw.ncols(),
                rw.nrows(),
                rw.ncols()
            ),
        });
    }
    check_pd(rw, "Rw")?;
    let mut p = qw.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..RICCATI_MAX_ITERS {
        let btpb = rw + b.transpose() * &p * b;
        let inv = btpb.clone().cholesky().ok_or(Error::Singular {
            context: "feedback_gain: Rw + B'PB",
            tol: 0.0,
        })?;
        let gain = inv.inverse() * b.transpose() * &p * a;
        let next = a.transpose() * &p * a + qw - a.transpose() * &p * b * &gain;
        residual = (&next - &p).amax();
        let done = residual < RICCATI_TOL;
        p = next;
        if done {
            let f = -gain;
            let radius = spectral_radius(&(a + b * &f))?.max_modulus;
            if radius >= 1.0 {
                return Err(Error::NotStabilizable { radius });
            }
            return Ok(f);
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(Error::IterationDiverged {
        iterations: RICCATI_MAX_ITERS,
        residual,
    })
}

/// A bank of stabilizing gain pairs `(F_i, L_i)`, `i = 0..=kappa`, with a
/// seeded switching schedule over modes `1..=kappa` respecting a dwell-time
/// floor. Mode 0 is the controller's own pair and is never scheduled.
#[derive(Debug, Clone)]
pub struct GainBank {
    pub f: Vec<DMatrix<f64>>,
    pub l: Vec<DMatrix<f64>>,
    pub seed: u64,
    pub dwell_min: usize,
    schedule: Vec<u16>,
}

impl GainBank {
    pub fn kappa(&self) -> usize {
        self.f.len() - 1
    }

    /// Mode index at step `k` (the last segment extends past the horizon).
    pub fn mode_at(&self, k: usize) -> usize {
        let idx = k.min(self.schedule.len().saturating_sub(1));
        self.schedule[idx] as usize
    }

    pub fn schedule(&self) -> &[u16] {
        &self.schedule
    }

    /// Steps where the scheduled mode changes.
    pub fn switch_instants(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for k in 1..self.schedule.len() {
            if self.schedule[k] != self.schedule[k - 1] {
                out.push(k);
            }
        }
        out
    }
}

/// Generates `kappa` extra stabilizing pairs by re-weighted Riccati solves and
/// a seeded random schedule with the dwell floor.
#[allow(clippy::too_many_arguments)]
pub fn build_gain_bank(
    plant: &StateSpaceSystem,
    f0: DMatrix<f64>,
    l0: DMatrix<f64>,
    kappa: usize,
    seed: u64,
    dwell_min: usize,
    perturbation_scale: f64,
    horizon: usize,
) -> Result<GainBank> {
    if kappa == 0 {
        return Err(Error::InvalidArgument("gain bank needs kappa >= 1".into()));
    }
    if dwell_min == 0 {
        return Err(Error::InvalidArgument("dwell_min must be >= 1".into()));
    }
    let (a, b, c) = (plant.a(), plant.b(), plant.c());
    let n = plant.n_states();
    let (m, p) = (plant.n_outputs(), plant.n_inputs());
    for (mat, what, radius_err) in [
        (a + b * &f0, "A+BF0", true),
        (a - &l0 * c, "A-L0C", false),
    ] {
        let radius = spectral_radius(&mat)?.max_modulus;
        if radius >= 1.0 {
            let _ = what;
            return Err(if radius_err {
                Error::NotStabilizable { radius }
            } else {
                Error::NotDetectable { radius }
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = vec![f0];
    let mut l = vec![l0];
    let mut attempts = 0usize;
    let max_attempts = 60 * kappa;
    while f.len() <= kappa {
        if attempts >= max_attempts {
            return Err(Error::GainBankSynthesis {
                found: f.len() - 1,
                requested: kappa,
                attempts,
            });
        }
        attempts += 1;
        let qw = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| {
            (perturbation_scale * rng.gen_range(-1.0..1.0f64)).exp()
        }));
        let rw = DMatrix::from_diagonal(&DVector::from_fn(p, |_, _| {
            (perturbation_scale * rng.gen_range(-1.0..1.0f64)).exp()
        }));
        let Ok(fi) = feedback_gain(a, b, &qw, &rw) else {
            continue;
        };
        let ow = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| {
            (perturbation_scale * rng.gen_range(-1.0..1.0f64)).exp()
        }));
        let ov = DMatrix::from_diagonal(&DVector::from_fn(m, |_, _| {
            (perturbation_scale * rng.gen_range(-1.0..1.0f64)).exp()
        }));
        let design = NoiseSpec {
            sigma_w: ow,
            sigma_v: ov,
            s: DMatrix::zeros(n, m),
            pi0: DMatrix::identity(n, n),
        };
        let Ok(sol) = kalman_gain(a, c, &design) else {
            continue;
        };
        // Schur by construction; double-check anyway.
        if spectral_radius(&(a + b * &fi))?.max_modulus >= 1.0
            || spectral_radius(&(a - &sol.l_k * c))?.max_modulus >= 1.0
        {
            continue;
        }
        f.push(fi);
        l.push(sol.l_k);
    }

    // Seeded schedule over modes 1..=kappa with dwell in [dwell_min, 2*dwell_min].
    let mut schedule = vec![0u16; horizon.max(1)];
    let mut mode = rng.gen_range(1..=kappa) as u16;
    let mut t = 0usize;
    while t < schedule.len() {
        let dwell = dwell_min + rng.gen_range(0..=dwell_min);
        let end = (t + dwell).min(schedule.len());
        for slot in &mut schedule[t..end] {
            *slot = mode;
        }
        t = end;
        if kappa >= 2 {
            let step = rng.gen_range(1..kappa);
            mode = (((mode as usize - 1) + step) % kappa + 1) as u16;
        }
    }

    Ok(GainBank {
        f,
        l,
        seed,
        dwell_min,
        schedule,
    })
}

/// The eight Bezout factors realized as state-space systems for one `(F, L)`.
#[derive(Debug, Clone)]
pub struct CoprimeFactorSet {
    pub mhat: StateSpaceSystem,
    pub nhat: StateSpaceSystem,
    pub m: StateSpaceSystem,
    pub n: StateSpaceSystem,
    pub xhat: StateSpaceSystem,
    pub yhat: StateSpaceSystem,
    pub x: StateSpaceSystem,
    pub y: StateSpaceSystem,
}

impl CoprimeFactorSet {
    pub fn all(&self) -> [(&'static str, &StateSpaceSystem); 8] {
        [
            ("Mhat", &self.mhat),
            ("Nhat", &self.nhat),
            ("M", &self.m),
            ("N", &self.n),
            ("Xhat", &self.xhat),
            ("Yhat", &self.yhat),
            ("X", &self.x),
            ("Y", &self.y),
        ]
    }
}

/// Left/right coprime factors and the Bezout complements for a stabilizing
/// pair `(F, L)`:
///
/// ```text
/// Mhat = (A-LC, -L,      C,    I)    Nhat = (A-LC, B-LD, C,    D)
/// M    = (A+BF, B,       F,    I)    N    = (A+BF, B,    C+DF, D)
/// Xhat = (A+BF, L,       C+DF, I)    Yhat = (A+BF, -L,   F,    0)
/// X    = (A-LC, -(B-LD), F,    I)    Y    = (A-LC, -L,   F,    0)
/// ```
pub fn coprime_factors(
    plant: &StateSpaceSystem,
    f: &DMatrix<f64>,
    l: &DMatrix<f64>,
) -> Result<CoprimeFactorSet> {
    let (a, b, c, d) = (plant.a(), plant.b(), plant.c(), plant.d());
    let (n_dim, m_dim, p_dim) = (plant.n_states(), plant.n_outputs(), plant.n_inputs());
    if f.nrows() != p_dim || f.ncols() != n_dim || l.nrows() != n_dim || l.ncols() != m_dim {
        return Err(Error::DimensionMismatch {
            context: "coprime_factors",
            expected: format!("F {p_dim}x{n_dim}, L {n_dim}x{m_dim}"),
            actual: format!("F {}x{}, L {}x{}", f.nrows(), f.ncols(), l.nrows(), l.ncols()),
        });
    }
    let a_l = a - l * c;
    let a_f = a + b * f;
    for (mat, stabilizable) in [(&a_f, true), (&a_l, false)] {
        let radius = spectral_radius(mat)?.max_modulus;
        if radius >= 1.0 {
            return Err(if stabilizable {
                Error::NotStabilizable { radius }
            } else {
                Error::NotDetectable { radius }
            });
        }
    }
    let b_l = b - l * d;
    let c_f = c + d * f;
    let eye_m = DMatrix::identity(m_dim, m_dim);
    let eye_p = DMatrix::identity(p_dim, p_dim);

    Ok(CoprimeFactorSet {
        mhat: StateSpaceSystem::new(a_l.clone(), -l.clone(), c.clone(), eye_m.clone())?,
        nhat: StateSpaceSystem::new(a_l.clone(), b_l.clone(), c.clone(), d.clone())?,
        m: StateSpaceSystem::new(a_f.clone(), b.clone(), f.clone(), eye_p.clone())?,
        n: StateSpaceSystem::new(a_f.clone(), b.clone(), c_f.clone(), d.clone())?,
        xhat: StateSpaceSystem::new(a_f.clone(), l.clone(), c_f.clone(), eye_m)?,
        yhat: StateSpaceSystem::new(a_f.clone(), -l.clone(), f.clone(), DMatrix::zeros(p_dim, m_dim))?,
        x: StateSpaceSystem::new(a_l.clone(), -b_l, f.clone(), eye_p)?,
        y: StateSpaceSystem::new(a_l, -l.clone(), f.clone(), DMatrix::zeros(p_dim, m_dim))?,
    })
}

/// Outcome of a Bezout identity check.
#[derive(Debug, Clone, Copy)]
pub struct BezoutReport {
    pub max_error: f64,
    pub pass: bool,
}

/// Evaluates the 2x2 block Bezout product and its Q-extended form at sample
/// points on |z| = 2; passes iff the worst deviation from identity is within
/// `tol`. A supplied stable `Q` (maps the m-dim residual to the p-dim input
/// space) extends the identity; `None` means Q = 0.
pub fn verify_bezout(
    set: &CoprimeFactorSet,
    q: Option<&StateSpaceSystem>,
    n_samples: usize,
    tol: f64,
    rng: &mut impl Rng,
) -> Result<BezoutReport> {
    let p_dim = set.m.n_outputs();
    let m_dim = set.mhat.n_outputs();
    if let Some(q) = q {
        if q.n_inputs() != m_dim || q.n_outputs() != p_dim {
            return Err(Error::DimensionMismatch {
                context: "verify_bezout (Q)",
                expected: format!("{p_dim}x{m_dim} transfer"),
                actual: format!("{}x{}", q.n_outputs(), q.n_inputs()),
            });
        }
    }
    let dim = p_dim + m_dim;
    let mut max_error: f64 = 0.0;
    let mut taken = 0usize;
    let mut guard = 0usize;
    while taken < n_samples && guard < n_samples * 4 {
        guard += 1;
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let z = num_complex::Complex64::from_polar(2.0, theta);
        let responses: Result<Vec<_>> = [
            &set.x, &set.y, &set.nhat, &set.mhat, &set.m, &set.yhat, &set.n, &set.xhat,
        ]
        .iter()
        .map(|s| s.freq_response(z))
        .collect();
        let Ok(r) = responses else { continue }; // pole hit: resample
        let qz = match q {
            Some(qsys) => match qsys.freq_response(z) {
                Ok(v) => v,
                Err(_) => continue,
            },
            None => DMatrix::from_element(p_dim, m_dim, num_complex::Complex64::new(0.0, 0.0)),
        };
        let (x, y, nhat, mhat, m, yhat, n, xhat) =
            (&r[0], &r[1], &r[2], &r[3], &r[4], &r[5], &r[6], &r[7]);

        let mut left = DMatrix::zeros(dim, dim);
        left.view_mut((0, 0), (p_dim, p_dim)).copy_from(&(x - &qz * nhat));
        left.view_mut((0, p_dim), (p_dim, m_dim))
            .copy_from(&(y + &qz * mhat));
        left.view_mut((p_dim, 0), (m_dim, p_dim)).copy_from(&(-nhat));
        left.view_mut((p_dim, p_dim), (m_dim, m_dim)).copy_from(mhat);

        let mut right = DMatrix::zeros(dim, dim);
        right.view_mut((0, 0), (p_dim, p_dim)).copy_from(m);
        right
            .view_mut((0, p_dim), (p_dim, m_dim))
            .copy_from(&(-yhat - m * &qz));
        right.view_mut((p_dim, 0), (m_dim, p_dim)).copy_from(n);
        right
            .view_mut((p_dim, p_dim), (m_dim, m_dim))
            .copy_from(&(xhat - n * &qz));

        let mut prod = left * right;
        for i in 0..dim {
            prod[(i, i)] -= num_complex::Complex64::new(1.0, 0.0);
        }
        let err = prod.iter().map(|v| v.norm()).fold(0.0, f64::max);
        max_error = max_error.max(err);
        taken += 1;
    }
    if taken < n_samples {
        return Err(Error::Singular {
            context: "verify_bezout: could not sample away from poles",
            tol,
        });
    }
    Ok(BezoutReport {
        max_error,
        pass: max_error <= tol,
    })
}

/// The filters of the two-pair gain-change identity: varying `(F_2, L_2)` to
/// `(F_1, L_1)` equals a stable invertible post-filter plus an extra residual
/// term.
#[derive(Debug, Clone)]
pub struct Lemma1Filters {
    pub r12: StateSpaceSystem,
    pub rbar12: StateSpaceSystem,
    pub q21: StateSpaceSystem,
    pub qbar11: StateSpaceSystem,
    pub qbar12: StateSpaceSystem,
}

/// Realizes the gain-change filters for the pairs `(F_1, L_1)`, `(F_2, L_2)`:
///
/// ```text
/// R12    = I + (F2-F1)(zI - A-BF2)^{-1} B
/// Rbar12 = (F1-F2)(zI - A-BF2)^{-1} L2
/// Q21    = I + C(zI - A+L2C)^{-1}(L1-L2)
/// Qbar12 = F1(zI - A+L1C)^{-1}(L2-L1) - (F1-F2)(zI - A-BF2)^{-1} L2
/// Qbar11 = F1(zI - A+L2C)^{-1}(L2-L1) - Rbar12 * Q21
/// ```
pub fn lemma1_filters(
    plant: &StateSpaceSystem,
    f1: &DMatrix<f64>,
    l1: &DMatrix<f64>,
    f2: &DMatrix<f64>,
    l2: &DMatrix<f64>,
) -> Result<Lemma1Filters> {
    let (a, b, c) = (plant.a(), plant.b(), plant.c());
    let (m_dim, p_dim) = (plant.n_outputs(), plant.n_inputs());
    for (mat, stab) in [
        (a + b * f1, true),
        (a + b * f2, true),
        (a - l1 * c, false),
        (a - l2 * c, false),
    ] {
        let radius = spectral_radius(&mat)?.max_modulus;
        if radius >= 1.0 {
            return Err(if stab {
                Error::NotStabilizable { radius }
            } else {
                Error::NotDetectable { radius }
            });
        }
    }
    let a_f2 = a + b * f2;
    let a_l1 = a - l1 * c;
    let a_l2 = a - l2 * c;

    let r12 = StateSpaceSystem::new(
        a_f2.clone(),
        b.clone(),
        f2 - f1,
        DMatrix::identity(p_dim, p_dim),
    )?;
    let rbar12 = StateSpaceSystem::new(
        a_f2.clone(),
        l2.clone(),
        f1 - f2,
        DMatrix::zeros(p_dim, m_dim),
    )?;
    let q21 = StateSpaceSystem::new(
        a_l2.clone(),
        l1 - l2,
        c.clone(),
        DMatrix::identity(m_dim, m_dim),
    )?;
    let qbar12 = difference(
        &StateSpaceSystem::new(a_l1, l2 - l1, f1.clone(), DMatrix::zeros(p_dim, m_dim))?,
        &StateSpaceSystem::new(a_f2, l2.clone(), f1 - f2, DMatrix::zeros(p_dim, m_dim))?,
    )?;
    let qbar11 = difference(
        &StateSpaceSystem::new(a_l2, l2 - l1, f1.clone(), DMatrix::zeros(p_dim, m_dim))?,
        &series(&rbar12, &q21)?,
    )?;

    Ok(Lemma1Filters {
        r12,
        rbar12,
        q21,
        qbar11,
        qbar12,
    })
}

/// Per-mode LTI filter family used by the switched detectors.
#[derive(Debug, Clone)]
pub struct SchemeFilters {
    pub p_0s: StateSpaceSystem,
    pub p_us: StateSpaceSystem,
    pub q_s: StateSpaceSystem,
    pub qbar_s: StateSpaceSystem,
    pub q_k0: StateSpaceSystem,
    pub r_0s: StateSpaceSystem,
    pub q_0s: StateSpaceSystem,
    pub mode: usize,
}

/// Realizes the mode-`i` filters:
///
/// ```text
/// P_0s = I + C(zI - A+L_iC)^{-1}(L_0 - L_i)
/// P_us = I + (F_0 - F_i)(zI - A-BF_0)^{-1} B
/// Q_s  = F_i(zI - A+L_iC)^{-1}(L_0-L_i) - (F_i-F_0)(zI - A-BF_0)^{-1} L_0
/// Qbar_s = Q_s - P_us * Q          (Q = 0 when not supplied)
/// Q_K0 = I + C(zI - A+L_KC)^{-1}(L_0 - L_K)
/// R_0s = P_us - I   (strictly proper part)
/// Q_0s = (F_0 - F_i)(zI - A-BF_0)^{-1} L_0
/// ```
pub fn scheme_filters(
    plant: &StateSpaceSystem,
    bank: &GainBank,
    mode: usize,
    l_k: &DMatrix<f64>,
    q: Option<&StateSpaceSystem>,
) -> Result<SchemeFilters> {
    if mode >= bank.f.len() {
        return Err(Error::InvalidArgument(format!(
            "mode {mode} out of range (bank has {} modes)",
            bank.f.len()
        )));
    }
    let (a, b, c) = (plant.a(), plant.b(), plant.c());
    let (m_dim, p_dim) = (plant.n_outputs(), plant.n_inputs());
    let f0 = &bank.f[0];
    let l0 = &bank.l[0];
    let fi = &bank.f[mode];
    let li = &bank.l[mode];
    let a_f0 = a + b * f0;
    let a_li = a - li * c;
    let a_lk = a - l_k * c;

    let p_0s = StateSpaceSystem::new(
        a_li.clone(),
        l0 - li,
        c.clone(),
        DMatrix::identity(m_dim, m_dim),
    )?;
    let p_us = StateSpaceSystem::new(
        a_f0.clone(),
        b.clone(),
        f0 - fi,
        DMatrix::identity(p_dim, p_dim),
    )?;
    let q_s = difference(
        &StateSpaceSystem::new(a_li, l0 - li, fi.clone(), DMatrix::zeros(p_dim, m_dim))?,
        &StateSpaceSystem::new(
            a_f0.clone(),
            l0.clone(),
            fi - f0,
            DMatrix::zeros(p_dim, m_dim),
        )?,
    )?;
    let qbar_s = match q {
        Some(qsys) => difference(&q_s, &series(&p_us, qsys)?)?,
        None => q_s.clone(),
    };
    let q_k0 = StateSpaceSystem::new(
        a_lk,
        l0 - l_k,
        c.clone(),
        DMatrix::identity(m_dim, m_dim),
    )?;
    let r_0s = StateSpaceSystem::new(
        a_f0.clone(),
        b.clone(),
        f0 - fi,
        DMatrix::zeros(p_dim, p_dim),
    )?;
    let q_0s = StateSpaceSystem::new(a_f0, l0.clone(), f0 - fi, DMatrix::zeros(p_dim, m_dim))?;

    Ok(SchemeFilters {
        p_0s,
        p_us,
        q_s,
        qbar_s,
        q_k0,
        r_0s,
        q_0s,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;
    use num_complex::Complex64;

    fn desk_plant() -> StateSpaceSystem {
        StateSpaceSystem::new(
            dmatrix![0.9, 0.1; 0.0, 0.8],
            dmatrix![0.0; 1.0],
            dmatrix![1.0, 0.0],
            dmatrix![0.0],
        )
        .unwrap()
    }

    #[test]
    fn kalman_scalar_closed_form() {
        let noise = NoiseSpec::new(dmatrix![1.0], dmatrix![1.0], dmatrix![0.0], dmatrix![0.0]).unwrap();
        let sol = kalman_gain(&dmatrix![0.5], &dmatrix![1.0], &noise).unwrap();
        // P solves P^2 - 0.25 P - 1 = 0.
        assert_abs_diff_eq!(sol.p[(0, 0)], 1.1327822185373186, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.l_k[(0, 0)], 0.2655644370746334, epsilon = 1e-9);
    }

    #[test]
    fn kalman_no_dynamics_gives_zero_gain() {
        let noise = NoiseSpec::new(dmatrix![0.7], dmatrix![0.3], dmatrix![0.0], dmatrix![0.0]).unwrap();
        let sol = kalman_gain(&dmatrix![0.0], &dmatrix![1.0], &noise).unwrap();
        assert_abs_diff_eq!(sol.p[(0, 0)], 0.7, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.l_k[(0, 0)], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn kalman_desk_plant_fixed_point() {
        let plant = desk_plant();
        let noise = NoiseSpec::isotropic(2, 1, 0.01, 0.01);
        let sol = kalman_gain(plant.a(), plant.c(), &noise).unwrap();
        assert!(sol.dare_residual(plant.a(), plant.c(), &noise) < 1e-10);
        let radius = spectral_radius(&(plant.a() - &sol.l_k * plant.c()))
            .unwrap()
            .max_modulus;
        assert!(radius < 1.0);
    }

    #[test]
    fn feedback_scalar_golden_ratio() {
        let f = feedback_gain(&dmatrix![2.0], &dmatrix![1.0], &dmatrix![1.0], &dmatrix![1.0]).unwrap();
        assert_abs_diff_eq!(f[(0, 0)], -1.618033988749895, epsilon = 1e-9);
        assert!((2.0 + f[(0, 0)]).abs() < 1.0);
    }

    #[test]
    fn feedback_no_authority_on_stable_plant() {
        let f = feedback_gain(&dmatrix![0.5], &dmatrix![0.0], &dmatrix![1.0], &dmatrix![1.0]).unwrap();
        assert_abs_diff_eq!(f[(0, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn feedback_desk_plant_schur() {
        let plant = desk_plant();
        let f = feedback_gain(
            plant.a(),
            plant.b(),
            &DMatrix::identity(2, 2),
            &dmatrix![1.0],
        )
        .unwrap();
        let radius = spectral_radius(&(plant.a() + plant.b() * &f))
            .unwrap()
            .max_modulus;
        assert!(radius < 1.0);
    }

    fn desk_gains() -> (StateSpaceSystem, DMatrix<f64>, DMatrix<f64>) {
        let plant = desk_plant();
        let f = feedback_gain(
            plant.a(),
            plant.b(),
            &DMatrix::identity(2, 2),
            &dmatrix![1.0],
        )
        .unwrap();
        let noise = NoiseSpec::isotropic(2, 1, 0.05, 0.05);
        let l = kalman_gain(plant.a(), plant.c(), &noise).unwrap().l_k;
        (plant, f, l)
    }

    #[test]
    fn gain_bank_modes_all_schur_and_deterministic() {
        let (plant, f0, l0) = desk_gains();
        let bank = build_gain_bank(&plant, f0.clone(), l0.clone(), 2, 99, 25, 0.8, 1000).unwrap();
        assert_eq!(bank.f.len(), 3);
        for i in 0..bank.f.len() {
            assert!(
                spectral_radius(&(plant.a() + plant.b() * &bank.f[i]))
                    .unwrap()
                    .max_modulus
                    < 1.0
            );
            assert!(
                spectral_radius(&(plant.a() - &bank.l[i] * plant.c()))
                    .unwrap()
                    .max_modulus
                    < 1.0
            );
        }
        let again = build_gain_bank(&plant, f0, l0, 2, 99, 25, 0.8, 1000).unwrap();
        assert_eq!(bank.schedule(), again.schedule());
        for i in 0..bank.f.len() {
            assert_eq!(bank.f[i], again.f[i]);
            assert_eq!(bank.l[i], again.l[i]);
        }
    }

    #[test]
    fn gain_bank_single_extra_mode() {
        let (plant, f0, l0) = desk_gains();
        let bank = build_gain_bank(&plant, f0, l0, 1, 3, 25, 0.5, 400).unwrap();
        assert_eq!(bank.f.len(), 2);
        assert!(bank.schedule().iter().all(|&mo| mo == bank.schedule()[0]));
    }

    #[test]
    fn gain_bank_dwell_floor_bounds_switches() {
        let (plant, f0, l0) = desk_gains();
        let bank = build_gain_bank(&plant, f0, l0, 3, 17, 50, 0.8, 1000).unwrap();
        let switches = bank.switch_instants();
        assert!(switches.len() <= 20, "switches {}", switches.len());
        for w in switches.windows(2) {
            assert!(w[1] - w[0] >= 50);
        }
        // Modes are drawn from 1..=kappa only.
        assert!(bank.schedule().iter().all(|&mo| mo >= 1 && mo <= 3));
    }

    #[test]
    fn coprime_static_plant_collapses() {
        let plant = StateSpaceSystem::from_static(dmatrix![2.0]);
        let set = coprime_factors(&plant, &DMatrix::zeros(1, 0), &DMatrix::zeros(0, 1)).unwrap();
        let z = Complex64::new(1.3, 0.4);
        assert_abs_diff_eq!(set.mhat.freq_response(z).unwrap()[(0, 0)].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(set.nhat.freq_response(z).unwrap()[(0, 0)].re, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(set.x.freq_response(z).unwrap()[(0, 0)].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(set.y.freq_response(z).unwrap()[(0, 0)].norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn coprime_factors_all_stable_and_match_plant() {
        let (plant, f, l) = desk_gains();
        let set = coprime_factors(&plant, &f, &l).unwrap();
        for (name, sys) in set.all() {
            assert!(sys.is_stable().unwrap(), "{name} unstable");
        }
        // Mhat^{-1} Nhat = G_u at sample points.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..16 {
            let z = Complex64::from_polar(2.0, rng.gen_range(0.0..std::f64::consts::TAU));
            let g = plant.freq_response(z).unwrap();
            let mhat = set.mhat.freq_response(z).unwrap();
            let nhat = set.nhat.freq_response(z).unwrap();
            let recon = mhat.try_inverse().unwrap() * nhat;
            assert!((recon - g).norm() < 1e-9);
        }
    }

    #[test]
    fn bezout_identity_holds_and_breaks_under_perturbation() {
        let (plant, f, l) = desk_gains();
        let set = coprime_factors(&plant, &f, &l).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let report = verify_bezout(&set, None, 32, 1e-8, &mut rng).unwrap();
        assert!(report.pass, "max error {}", report.max_error);

        // Negating Y breaks the identity.
        let mut broken = set.clone();
        broken.y = difference(&StateSpaceSystem::zero_static(1, 1), &set.y).unwrap();
        let report = verify_bezout(&broken, None, 32, 1e-8, &mut rng).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn bezout_extended_with_random_stable_q() {
        let (plant, f, l) = desk_gains();
        let set = coprime_factors(&plant, &f, &l).unwrap();
        let q = StateSpaceSystem::new(dmatrix![0.4], dmatrix![1.0], dmatrix![0.7], dmatrix![0.2]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let report = verify_bezout(&set, Some(&q), 32, 1e-8, &mut rng).unwrap();
        assert!(report.pass, "max error {}", report.max_error);
    }

    #[test]
    fn lemma1_degenerate_pairs_are_identity_and_zero() {
        let (plant, f, l) = desk_gains();
        let filters = lemma1_filters(&plant, &f, &l, &f, &l).unwrap();
        let z = Complex64::new(0.0, 2.0);
        let r12 = filters.r12.freq_response(z).unwrap();
        assert!((r12[(0, 0)] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        assert!(filters.qbar11.freq_response(z).unwrap().norm() < 1e-14);
        assert!(filters.qbar12.freq_response(z).unwrap().norm() < 1e-14);
    }

    #[test]
    fn scheme_filters_mode_zero_degenerates() {
        let (plant, f0, l0) = desk_gains();
        let noise = NoiseSpec::isotropic(2, 1, 0.05, 0.05);
        let l_k = kalman_gain(plant.a(), plant.c(), &noise).unwrap().l_k;
        let bank = build_gain_bank(&plant, f0, l0, 1, 4, 25, 0.5, 100).unwrap();
        let filters = scheme_filters(&plant, &bank, 0, &l_k, None).unwrap();
        let z = Complex64::new(1.5, 1.0);
        assert!((filters.p_0s.freq_response(z).unwrap()[(0, 0)] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        assert!((filters.p_us.freq_response(z).unwrap()[(0, 0)] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        assert!(filters.q_s.freq_response(z).unwrap().norm() < 1e-14);
        assert!(filters.r_0s.freq_response(z).unwrap().norm() < 1e-14);
        assert!(filters.q_0s.freq_response(z).unwrap().norm() < 1e-14);
    }

    #[test]
    fn scheme_filters_pus_minus_r0s_is_identity() {
        let (plant, f0, l0) = desk_gains();
        let noise = NoiseSpec::isotropic(2, 1, 0.05, 0.05);
        let l_k = kalman_gain(plant.a(), plant.c(), &noise).unwrap().l_k;
        let bank = build_gain_bank(&plant, f0, l0, 2, 4, 25, 0.8, 100).unwrap();
        for mode in 0..=2 {
            let filters = scheme_filters(&plant, &bank, mode, &l_k, None).unwrap();
            let diff = difference(&filters.p_us, &filters.r_0s).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
            for _ in 0..16 {
                let z = Complex64::from_polar(2.0, rng.gen_range(0.0..std::f64::consts::TAU));
                let r = diff.freq_response(z).unwrap();
                assert!((r[(0, 0)] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_spec_rejects_indefinite() {
        assert!(NoiseSpec::new(dmatrix![-1.0], dmatrix![1.0], dmatrix![0.0], dmatrix![0.0]).is_err());
        // Joint PSD violated: |S| too large for the diagonal blocks.
        assert!(NoiseSpec::new(dmatrix![1.0], dmatrix![1.0], dmatrix![2.0], dmatrix![0.0]).is_err());
    }
}
