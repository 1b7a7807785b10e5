//! Identity suites behind `kernelguard verify`: the Bezout block product,
//! the gain-change filter identities and the switched-encoder trajectory
//! identity, all evaluated on a supplied plant.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kernelguard_core::detect_a::Encoder;
use kernelguard_core::loopsim::{Controller, NoisyPlant, ResidualObserver};
use kernelguard_core::statespace::StateSpaceSystem;
use kernelguard_core::synthesis::{
    coprime_factors, feedback_gain, kalman_gain, lemma1_filters, verify_bezout, NoiseSpec,
};

use crate::error::{HarnessError, Result};
use crate::scenario::Built;

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub pass: bool,
    pub max_error: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn line(&self) -> String {
        format!(
            "{}: {} (max error {:.3e}, tol {:.0e})",
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.max_error,
            self.tolerance
        )
    }
}

/// Runs all three identity suites on the built scenario's plant.
pub fn run_identity_suites(built: &Built, seed: u64) -> Result<Vec<SuiteResult>> {
    let mut out = Vec::new();
    out.push(bezout_suite(built, seed)?);
    out.push(lemma1_suite(built, seed)?);
    out.push(trajectory_suite(built, seed)?);
    Ok(out)
}

fn random_stable_q(p: usize, m: usize, rng: &mut ChaCha8Rng) -> StateSpaceSystem {
    let order = 2;
    let mut a = DMatrix::from_fn(order, order, |_, _| rng.gen_range(-1.0..1.0));
    let radius = kernelguard_core::eigen::spectral_radius(&a)
        .map(|r| r.max_modulus)
        .unwrap_or(1.0);
    if radius > 0.0 {
        a *= 0.7 / radius.max(0.7);
    }
    StateSpaceSystem::new(
        a,
        DMatrix::from_fn(order, m, |_, _| rng.gen_range(-1.0..1.0)),
        DMatrix::from_fn(p, order, |_, _| rng.gen_range(-1.0..1.0)),
        DMatrix::from_fn(p, m, |_, _| 0.3 * rng.gen_range(-1.0..1.0)),
    )
    .expect("q dims")
}

fn bezout_suite(built: &Built, seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbe20u64);
    let tol = 1e-8;
    let factors = &built.controller.factors;
    let plain = verify_bezout(factors, None, 32, tol, &mut rng)?;
    let q = random_stable_q(
        built.plant_sys.n_inputs(),
        built.plant_sys.n_outputs(),
        &mut rng,
    );
    let extended = verify_bezout(factors, Some(&q), 32, tol, &mut rng)?;
    Ok(SuiteResult {
        name: "bezout",
        pass: plain.pass && extended.pass,
        max_error: plain.max_error.max(extended.max_error),
        tolerance: tol,
    })
}

/// Stacks `[X(z) Y(z)]` for one gain pair.
fn xy_response(
    plant: &StateSpaceSystem,
    f: &DMatrix<f64>,
    l: &DMatrix<f64>,
    z: Complex64,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>, DMatrix<Complex64>, DMatrix<Complex64>)> {
    let set = coprime_factors(plant, f, l).map_err(HarnessError::from_core)?;
    Ok((
        set.x.freq_response(z).map_err(HarnessError::from_core)?,
        set.y.freq_response(z).map_err(HarnessError::from_core)?,
        set.nhat.freq_response(z).map_err(HarnessError::from_core)?,
        set.mhat.freq_response(z).map_err(HarnessError::from_core)?,
    ))
}

fn lemma1_suite(built: &Built, seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1e44u64);
    let tol = 1e-7;
    let plant = &built.plant_sys;
    let n = plant.n_states();
    let (m_dim, p_dim) = (plant.n_outputs(), plant.n_inputs());
    let mut max_error: f64 = 0.0;
    for _ in 0..5 {
        let mut gains = Vec::new();
        for _ in 0..2 {
            let qw = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| {
                (0.8 * rng.gen_range(-1.0..1.0f64)).exp()
            }));
            let rw = DMatrix::from_diagonal(&DVector::from_fn(p_dim, |_, _| {
                (0.8 * rng.gen_range(-1.0..1.0f64)).exp()
            }));
            let f = feedback_gain(plant.a(), plant.b(), &qw, &rw)
                .map_err(HarnessError::from_core)?;
            let ow = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| {
                (0.8 * rng.gen_range(-1.0..1.0f64)).exp()
            }));
            let ov = DMatrix::from_diagonal(&DVector::from_fn(m_dim, |_, _| {
                (0.8 * rng.gen_range(-1.0..1.0f64)).exp()
            }));
            let noise = NoiseSpec {
                sigma_w: ow,
                sigma_v: ov,
                s: DMatrix::zeros(n, m_dim),
                pi0: DMatrix::identity(n, n),
            };
            let l = kalman_gain(plant.a(), plant.c(), &noise)
                .map_err(HarnessError::from_core)?
                .l_k;
            gains.push((f, l));
        }
        let (f1, l1) = gains[0].clone();
        let (f2, l2) = gains[1].clone();
        let filters =
            lemma1_filters(plant, &f1, &l1, &f2, &l2).map_err(HarnessError::from_core)?;
        for _ in 0..64 {
            let z = Complex64::from_polar(2.0, rng.gen_range(0.0..std::f64::consts::TAU));
            let (x1, y1, nhat1, mhat1) = xy_response(plant, &f1, &l1, z)?;
            let (x2, y2, nhat2, mhat2) = xy_response(plant, &f2, &l2, z)?;
            let r12 = filters.r12.freq_response(z).map_err(HarnessError::from_core)?;
            let qbar11 = filters
                .qbar11
                .freq_response(z)
                .map_err(HarnessError::from_core)?;
            let qbar12 = filters
                .qbar12
                .freq_response(z)
                .map_err(HarnessError::from_core)?;
            // [X1 Y1] = R12 [X2 Y2] + Qbar11 [-Nhat1 Mhat1]
            let e20a = (&r12 * &x2 - &qbar11 * &nhat1 - &x1).norm()
                + (&r12 * &y2 + &qbar11 * &mhat1 - &y1).norm();
            // [X1 Y1] = R12 [X2 Y2] + Qbar12 [-Nhat2 Mhat2]
            let e20b = (&r12 * &x2 - &qbar12 * &nhat2 - &x1).norm()
                + (&r12 * &y2 + &qbar12 * &mhat2 - &y1).norm();
            max_error = max_error.max(e20a).max(e20b);
        }
    }
    Ok(SuiteResult {
        name: "lemma1",
        pass: max_error <= tol,
        max_error,
        tolerance: tol,
    })
}

fn trajectory_suite(built: &Built, seed: u64) -> Result<SuiteResult> {
    let tol = 1e-8;
    let plant = &built.plant_sys;
    let bank = &built.bank;
    let n = plant.n_states();
    let horizon = built.horizon.min(800);
    // Noise-free copy of the plant spec.
    let noise = NoiseSpec::new(
        DMatrix::zeros(n, n),
        DMatrix::identity(plant.n_outputs(), plant.n_outputs()) * 1e-30,
        DMatrix::zeros(n, plant.n_outputs()),
        DMatrix::zeros(n, n),
    )
    .map_err(HarnessError::from_core)?;
    let spec = kernelguard_core::loopsim::PlantSpec::new(
        plant.clone(),
        noise,
        kernelguard_core::loopsim::X0Mode::Zero,
    )
    .map_err(HarnessError::from_core)?;
    let mut sim = NoisyPlant::new(&spec, seed).map_err(HarnessError::from_core)?;
    let mut ctrl =
        Controller::new(plant, &built.controller).map_err(HarnessError::from_core)?;
    let mut enc = Encoder::new(plant, bank);
    let mut obs0 = ResidualObserver::new(plant, built.controller.l0.clone())
        .map_err(HarnessError::from_core)?;
    let f0 = &bank.f[0];
    let l0 = &bank.l[0];
    let a_f0 = plant.a() + plant.b() * f0;
    let mut x_p = DVector::zeros(n);
    let mut x_q1 = DVector::zeros(n);
    let mut x_q2 = DVector::zeros(n);
    let mut x_p0 = DVector::zeros(n);
    let switches = bank.switch_instants();
    let excluded = |k: usize| {
        switches
            .iter()
            .any(|&s| k >= s && k < s + bank.dwell_min / 2)
    };
    let mut max_error: f64 = 0.0;
    for k in 0..horizon {
        let v = DVector::from_fn(plant.n_inputs(), |i, _| {
            (k as f64 * 0.07 + i as f64).sin()
        });
        let u = ctrl.command(&v).map_err(HarnessError::from_core)?;
        let y = sim.step(&u).map_err(HarnessError::from_core)?;
        ctrl.absorb(&y);
        let out = enc.step(&u, &y);
        let mode = out.mode;
        let f_s = &bank.f[mode];
        let l_s = &bank.l[mode];

        let xhat0 = obs0.xhat().clone();
        let r_en0 = &u - f0 * &xhat0;
        let r_0p = obs0.step(&u, &y);

        // r_en,s = P_us(r_en,0) + Q_s(r_0p)
        let want_en = (f0 - f_s) * &x_p + &r_en0 + f_s * &x_q1 - (f_s - f0) * &x_q2;
        // r_0,s = P_0s(r_0p)
        let want_0s = plant.c() * &x_p0 + &r_0p;
        if !excluded(k) {
            max_error = max_error.max((out.r_en.clone() - want_en).norm());
            max_error = max_error.max((out.r_0sigma.clone() - want_0s).norm());
        }

        x_p = &a_f0 * &x_p + plant.b() * &r_en0;
        x_q1 = (plant.a() - l_s * plant.c()) * &x_q1 + (l0 - l_s) * &r_0p;
        x_q2 = &a_f0 * &x_q2 + l0 * &r_0p;
        x_p0 = (plant.a() - l_s * plant.c()) * &x_p0 + (l0 - l_s) * &r_0p;
    }
    Ok(SuiteResult {
        name: "theorem-4-3-trajectory",
        pass: max_error <= tol,
        max_error,
        tolerance: tol,
    })
}
