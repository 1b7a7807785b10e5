//! Closed-loop simulation: the noisy plant, the observer-based realization of
//! the stabilizing controller, and the auxiliary residual generators.
//!
//! Loop timing: the monitor computes and sends `u(k)` before `y(k)` arrives,
//! so the Youla term runs on the one-step-delayed residual stream; the
//! residual itself is formed with the current `u(k)`, which the monitor knows.
//! For `D = 0` and strictly proper Q this is exactly the textbook loop.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::statespace::{spectral_radius, StateSpaceSystem};
use crate::stats::{sample_gaussian, JointNoiseSampler};
use crate::synthesis::{CoprimeFactorSet, NoiseSpec};

/// Initial-state law of the plant.
#[derive(Debug, Clone, PartialEq)]
pub enum X0Mode {
    Zero,
    SampledFromPi0,
    Fixed(DVector<f64>),
}

/// Plant matrices plus noise statistics and the initial-state law.
#[derive(Debug, Clone)]
pub struct PlantSpec {
    pub sys: StateSpaceSystem,
    pub noise: NoiseSpec,
    pub x0_mode: X0Mode,
}

impl PlantSpec {
    pub fn new(sys: StateSpaceSystem, noise: NoiseSpec, x0_mode: X0Mode) -> Result<Self> {
        if noise.n() != sys.n_states() || noise.m() != sys.n_outputs() {
            return Err(Error::DimensionMismatch {
                context: "PlantSpec::new",
                expected: format!("noise ({}, {})", sys.n_states(), sys.n_outputs()),
                actual: format!("noise ({}, {})", noise.n(), noise.m()),
            });
        }
        if let X0Mode::Fixed(x0) = &x0_mode {
            if x0.len() != sys.n_states() {
                return Err(Error::DimensionMismatch {
                    context: "PlantSpec::new (x0)",
                    expected: format!("{}", sys.n_states()),
                    actual: format!("{}", x0.len()),
                });
            }
        }
        Ok(Self { sys, noise, x0_mode })
    }
}

/// Simulation-side plant: draws `(omega, nu)` jointly each step, emits
/// `y = C x + D u + nu` from the pre-update state, then advances
/// `x <- A x + B u + omega`.
#[derive(Debug, Clone)]
pub struct NoisyPlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    x: DVector<f64>,
    sampler: JointNoiseSampler,
    rng: ChaCha8Rng,
}

impl NoisyPlant {
    pub fn new(spec: &PlantSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = match &spec.x0_mode {
            X0Mode::Zero => DVector::zeros(spec.sys.n_states()),
            X0Mode::SampledFromPi0 => sample_gaussian(&spec.noise.pi0, &mut rng)?,
            X0Mode::Fixed(x0) => x0.clone(),
        };
        Ok(Self {
            a: spec.sys.a().clone(),
            b: spec.sys.b().clone(),
            c: spec.sys.c().clone(),
            d: spec.sys.d().clone(),
            x,
            sampler: JointNoiseSampler::new(&spec.noise)?,
            rng,
        })
    }

    pub fn step(&mut self, u_applied: &DVector<f64>) -> Result<DVector<f64>> {
        if u_applied.len() != self.b.ncols() {
            return Err(Error::DimensionMismatch {
                context: "NoisyPlant::step",
                expected: format!("{}", self.b.ncols()),
                actual: format!("{}", u_applied.len()),
            });
        }
        let (omega, nu) = self.sampler.sample(&mut self.rng);
        let y = &self.c * &self.x + &self.d * u_applied + nu;
        self.x = &self.a * &self.x + &self.b * u_applied + omega;
        Ok(y)
    }

    /// Adds an offset to the plant state (the matched-x0 option of the
    /// zero-dynamics attack; a scenario feature, not a channel tap).
    pub fn add_state_offset(&mut self, dx: &DVector<f64>) {
        self.x += dx;
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }
}

/// An observer `x^ <- A x^ + B u + L (y - C x^ - D u)` exposing the residual.
/// Serves as the plant-side residual generator and the Kalman-gain baseline
/// detector front end.
#[derive(Debug, Clone)]
pub struct ResidualObserver {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    l: DMatrix<f64>,
    xhat: DVector<f64>,
}

impl ResidualObserver {
    pub fn new(plant: &StateSpaceSystem, l: DMatrix<f64>) -> Result<Self> {
        if l.nrows() != plant.n_states() || l.ncols() != plant.n_outputs() {
            return Err(Error::DimensionMismatch {
                context: "ResidualObserver::new",
                expected: format!("{}x{}", plant.n_states(), plant.n_outputs()),
                actual: format!("{}x{}", l.nrows(), l.ncols()),
            });
        }
        Ok(Self {
            a: plant.a().clone(),
            b: plant.b().clone(),
            c: plant.c().clone(),
            d: plant.d().clone(),
            l,
            xhat: DVector::zeros(plant.n_states()),
        })
    }

    /// Residual for the pair `(u, y)` at this step; advances the observer.
    pub fn step(&mut self, u: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let r = y - &self.c * &self.xhat - &self.d * u;
        self.xhat = &self.a * &self.xhat + &self.b * u + &self.l * &r;
        r
    }

    pub fn xhat(&self) -> &DVector<f64> {
        &self.xhat
    }

    pub fn set_xhat(&mut self, x: DVector<f64>) {
        self.xhat = x;
    }
}

/// Observer-based realization of the stabilizing controller.
#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub f0: DMatrix<f64>,
    pub l0: DMatrix<f64>,
    /// Youla parameter (stable, m inputs, p outputs); `None` means Q = 0.
    pub q: Option<StateSpaceSystem>,
    pub factors: CoprimeFactorSet,
}

impl ControllerConfig {
    pub fn validate(&self, plant: &StateSpaceSystem) -> Result<()> {
        let radius = spectral_radius(&(plant.a() + plant.b() * &self.f0))?.max_modulus;
        if radius >= 1.0 {
            return Err(Error::NotStabilizable { radius });
        }
        let radius = spectral_radius(&(plant.a() - &self.l0 * plant.c()))?.max_modulus;
        if radius >= 1.0 {
            return Err(Error::NotDetectable { radius });
        }
        if let Some(q) = &self.q {
            if q.n_inputs() != plant.n_outputs() || q.n_outputs() != plant.n_inputs() {
                return Err(Error::DimensionMismatch {
                    context: "ControllerConfig (Q)",
                    expected: format!("{}x{}", plant.n_inputs(), plant.n_outputs()),
                    actual: format!("{}x{}", q.n_outputs(), q.n_inputs()),
                });
            }
            if !q.is_stable()? {
                return Err(Error::InvalidArgument("Q must be stable".into()));
            }
        }
        Ok(())
    }
}

/// Controller state machine driven in lockstep: `command` forms `u(k)` from
/// the reference and the stored residual history, `absorb` folds in `y(k)`.
#[derive(Debug, Clone)]
pub struct Controller {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    f0: DMatrix<f64>,
    l0: DMatrix<f64>,
    a_l0: DMatrix<f64>,
    b_l0: DMatrix<f64>,
    xhat: DVector<f64>,
    xv: DVector<f64>,
    q_r: Option<StateSpaceSystem>,
    q_v: Option<StateSpaceSystem>,
    r_prev: DVector<f64>,
    last_u: DVector<f64>,
    last_w: DVector<f64>,
    last_vbar: DVector<f64>,
}

impl Controller {
    pub fn new(plant: &StateSpaceSystem, cfg: &ControllerConfig) -> Result<Self> {
        cfg.validate(plant)?;
        let (n, m, p) = (plant.n_states(), plant.n_outputs(), plant.n_inputs());
        let q_r = cfg.q.clone().map(|mut q| {
            q.reset();
            q
        });
        let q_v = q_r.clone();
        Ok(Self {
            a: plant.a().clone(),
            b: plant.b().clone(),
            c: plant.c().clone(),
            d: plant.d().clone(),
            f0: cfg.f0.clone(),
            l0: cfg.l0.clone(),
            a_l0: plant.a() - &cfg.l0 * plant.c(),
            b_l0: plant.b() - &cfg.l0 * plant.d(),
            xhat: DVector::zeros(n),
            xv: DVector::zeros(n),
            q_r,
            q_v,
            r_prev: DVector::zeros(m),
            last_u: DVector::zeros(p),
            last_w: DVector::zeros(p),
            last_vbar: DVector::zeros(p),
        })
    }

    /// `u(k) = F0 x^(k) - Q(r_0)(k) + vbar(k)` with
    /// `vbar = v - F0 x_v - Q(C x_v + D v)`; the Q-on-residual path runs on
    /// the delayed residual stream.
    pub fn command(&mut self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let n_v = &self.c * &self.xv + &self.d * v;
        let q_v_out = match &mut self.q_v {
            Some(q) => q.step(&n_v)?,
            None => DVector::zeros(self.last_u.len()),
        };
        let vbar = v - &self.f0 * &self.xv - q_v_out;
        let q_r_out = match &mut self.q_r {
            Some(q) => q.step(&self.r_prev.clone())?,
            None => DVector::zeros(self.last_u.len()),
        };
        let w = &vbar - &q_r_out;
        let u = &self.f0 * &self.xhat + &w;
        self.xv = &self.a_l0 * &self.xv + &self.b_l0 * v;
        self.last_u = u.clone();
        self.last_w = w;
        self.last_vbar = vbar;
        Ok(u)
    }

    /// Folds in the received `y(k)`: returns `r_0(k) = y - C x^ - D u(k)` and
    /// advances the observer.
    pub fn absorb(&mut self, y_received: &DVector<f64>) -> DVector<f64> {
        let r0 = y_received - &self.c * &self.xhat - &self.d * &self.last_u;
        self.xhat = &self.a * &self.xhat + &self.b * &self.last_u + &self.l0 * &r0;
        self.r_prev = r0.clone();
        r0
    }

    pub fn xhat(&self) -> &DVector<f64> {
        &self.xhat
    }

    pub fn set_xhat(&mut self, x: DVector<f64>) {
        self.xhat = x;
    }

    pub fn last_u(&self) -> &DVector<f64> {
        &self.last_u
    }

    /// `u(k) - F0 x^(k)`: the feedforward excess the Scheme-A decoder filters.
    pub fn last_w(&self) -> &DVector<f64> {
        &self.last_w
    }

    pub fn last_vbar(&self) -> &DVector<f64> {
        &self.last_vbar
    }
}

/// Output of the auxiliary residual generators.
#[derive(Debug, Clone)]
pub struct AuxOutput {
    /// Controller-kernel residual (dimension p).
    pub r_u: DVector<f64>,
    /// Closed-loop residual, input side (dimension p).
    pub r_uc: DVector<f64>,
    /// Closed-loop residual, output side (dimension m).
    pub r_yc: DVector<f64>,
}

/// Controller-kernel and closed-loop residual generators running on the
/// synchronized `(u, y, v)` streams.
#[derive(Debug, Clone)]
pub struct AuxResiduals {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    f: DMatrix<f64>,
    l: DMatrix<f64>,
    q_u: Option<StateSpaceSystem>,
    q_v: Option<StateSpaceSystem>,
    x_u: DVector<f64>,
    x_v: DVector<f64>,
    x_c: DVector<f64>,
}

impl AuxResiduals {
    pub fn new(
        plant: &StateSpaceSystem,
        f: DMatrix<f64>,
        l: DMatrix<f64>,
        q: Option<&StateSpaceSystem>,
    ) -> Result<Self> {
        let n = plant.n_states();
        let q_u = q.cloned().map(|mut q| {
            q.reset();
            q
        });
        Ok(Self {
            a: plant.a().clone(),
            b: plant.b().clone(),
            c: plant.c().clone(),
            d: plant.d().clone(),
            f,
            l,
            q_v: q_u.clone(),
            q_u,
            x_u: DVector::zeros(n),
            x_v: DVector::zeros(n),
            x_c: DVector::zeros(n),
        })
    }

    pub fn step(
        &mut self,
        u: &DVector<f64>,
        y: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<AuxOutput> {
        let p = self.b.ncols();
        let uv = u - v;
        // Controller-kernel residual via the observer on (u - v, y).
        let r_u1 = &uv - &self.f * &self.x_u;
        let r_u2 = y - &self.d * &uv - &self.c * &self.x_u;
        let q_out = match &mut self.q_u {
            Some(q) => q.step(&r_u2)?,
            None => DVector::zeros(p),
        };
        let r_u = r_u1 + q_out;
        let a_l = &self.a - &self.l * &self.c;
        let b_l = &self.b - &self.l * &self.d;
        self.x_u = &a_l * &self.x_u + &b_l * &uv + &self.l * y;

        // Closed-loop residual pair driven by the reference model.
        let n_v = &self.c * &self.x_v + &self.d * v;
        let q_v_out = match &mut self.q_v {
            Some(q) => q.step(&n_v)?,
            None => DVector::zeros(p),
        };
        let vbar = v - &self.f * &self.x_v - q_v_out;
        let r_uc = u - &self.f * &self.x_c - &vbar;
        let r_yc = y - (&self.c + &self.d * &self.f) * &self.x_c - &self.d * &vbar;
        self.x_v = &a_l * &self.x_v + &b_l * v;
        self.x_c = (&self.a + &self.b * &self.f) * &self.x_c + &self.b * &vbar;

        Ok(AuxOutput { r_u, r_uc, r_yc })
    }
}

/// Exact LTI representation of the attack-free noise-free lockstep loop from
/// the reference `v` to the plant output `y` (plant, observer, feedforward,
/// delayed-residual Youla path).
pub fn assemble_closed_loop(
    plant: &StateSpaceSystem,
    cfg: &ControllerConfig,
) -> Result<StateSpaceSystem> {
    cfg.validate(plant)?;
    let (n, m, p) = (plant.n_states(), plant.n_outputs(), plant.n_inputs());
    let (a, b, c, d) = (plant.a(), plant.b(), plant.c(), plant.d());
    let f0 = &cfg.f0;
    let l0 = &cfg.l0;
    let nq = cfg.q.as_ref().map_or(0, |q| q.n_states());
    let with_q = cfg.q.is_some();
    // State layout: x (n), xhat (n), xv (n) [, xd (m), xqr (nq), xqv (nq)].
    let total = if with_q { 3 * n + m + 2 * nq } else { 3 * n };
    let (ox, oxh, oxv) = (0usize, n, 2 * n);
    let (oxd, oqr, oqv) = (3 * n, 3 * n + m, 3 * n + m + nq);

    // u as a linear form over the states and v.
    let mut u_rows = DMatrix::zeros(p, total);
    let mut u_v = DMatrix::identity(p, p);
    u_rows.view_mut((0, oxh), (p, n)).copy_from(f0);
    u_rows
        .view_mut((0, oxv), (p, n))
        .copy_from(&(-f0.clone()));
    if let Some(q) = &cfg.q {
        let (aq, bq, cq, dq) = (q.a(), q.b(), q.c(), q.d());
        u_rows.view_mut((0, oxd), (p, m)).copy_from(&(-dq.clone()));
        u_rows.view_mut((0, oqr), (p, nq)).copy_from(&(-cq.clone()));
        u_rows.view_mut((0, oqv), (p, nq)).copy_from(&(-cq.clone()));
        let mut dqc = u_rows.view_mut((0, oxv), (p, n)).clone_owned();
        dqc -= dq * c;
        u_rows.view_mut((0, oxv), (p, n)).copy_from(&dqc);
        u_v -= dq * d;
        let _ = (aq, bq);
    }

    let mut big_a = DMatrix::zeros(total, total);
    let mut big_b = DMatrix::zeros(total, p);
    // x+ = A x + B u
    big_a.view_mut((ox, ox), (n, n)).copy_from(a);
    add_block(&mut big_a, &mut big_b, ox, n, b, &u_rows, &u_v);
    // xhat+ = A xhat + B u + L0 C (x - xhat)
    big_a.view_mut((oxh, oxh), (n, n)).copy_from(&(a - l0 * c));
    let mut blk = big_a.view_mut((oxh, ox), (n, n)).clone_owned();
    blk += l0 * c;
    big_a.view_mut((oxh, ox), (n, n)).copy_from(&blk);
    add_block(&mut big_a, &mut big_b, oxh, n, b, &u_rows, &u_v);
    // xv+ = (A - L0 C) xv + (B - L0 D) v
    big_a.view_mut((oxv, oxv), (n, n)).copy_from(&(a - l0 * c));
    big_b.view_mut((oxv, 0), (n, p)).copy_from(&(b - l0 * d));
    if let Some(q) = &cfg.q {
        let (aq, bq) = (q.a(), q.b());
        // xd+ = C (x - xhat)
        big_a.view_mut((oxd, ox), (m, n)).copy_from(c);
        big_a.view_mut((oxd, oxh), (m, n)).copy_from(&(-c.clone()));
        // xqr+ = Aq xqr + Bq xd
        big_a.view_mut((oqr, oqr), (nq, nq)).copy_from(aq);
        big_a.view_mut((oqr, oxd), (nq, m)).copy_from(bq);
        // xqv+ = Aq xqv + Bq (C xv + D v)
        big_a.view_mut((oqv, oqv), (nq, nq)).copy_from(aq);
        big_a.view_mut((oqv, oxv), (nq, n)).copy_from(&(bq * c));
        big_b.view_mut((oqv, 0), (nq, p)).copy_from(&(bq * d));
    }

    // y = C x + D u
    let mut big_c = DMatrix::zeros(m, total);
    big_c.view_mut((0, ox), (m, n)).copy_from(c);
    big_c += d * &u_rows;
    let big_d = d * &u_v;
    StateSpaceSystem::new(big_a, big_b, big_c, big_d)
}

/// Adds `gain * (u_rows x + u_v v)` into block row `row` of the realization.
fn add_block(
    big_a: &mut DMatrix<f64>,
    big_b: &mut DMatrix<f64>,
    row: usize,
    rows: usize,
    gain: &DMatrix<f64>,
    u_rows: &DMatrix<f64>,
    u_v: &DMatrix<f64>,
) {
    let add_a = gain * u_rows;
    let add_b = gain * u_v;
    let mut blk = big_a.view_mut((row, 0), (rows, big_a.ncols())).clone_owned();
    blk += add_a;
    big_a.view_mut((row, 0), (rows, blk.ncols())).copy_from(&blk);
    let mut blk = big_b.view_mut((row, 0), (rows, big_b.ncols())).clone_owned();
    blk += add_b;
    big_b.view_mut((row, 0), (rows, blk.ncols())).copy_from(&blk);
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use num_complex::Complex64;
    use rand::Rng;

    use crate::statespace::{difference, series};
    use crate::synthesis::{coprime_factors, feedback_gain, kalman_gain};

    fn desk_plant() -> StateSpaceSystem {
        StateSpaceSystem::new(
            dmatrix![0.9, 0.1; 0.0, 0.8],
            dmatrix![0.0; 1.0],
            dmatrix![1.0, 0.0],
            dmatrix![0.0],
        )
        .unwrap()
    }

    fn desk_config(plant: &StateSpaceSystem, q: Option<StateSpaceSystem>) -> ControllerConfig {
        let f0 = feedback_gain(plant.a(), plant.b(), &DMatrix::identity(2, 2), &dmatrix![1.0]).unwrap();
        let noise = NoiseSpec::isotropic(2, 1, 0.05, 0.05);
        let l0 = kalman_gain(plant.a(), plant.c(), &noise).unwrap().l_k;
        let factors = coprime_factors(plant, &f0, &l0).unwrap();
        ControllerConfig { f0, l0, q, factors }
    }

    #[test]
    fn noise_free_plant_stays_at_zero() {
        let plant = desk_plant();
        let spec = PlantSpec::new(
            plant,
            NoiseSpec::isotropic(2, 1, 0.0, 1e-12),
            X0Mode::Zero,
        )
        .unwrap();
        let mut sim = NoisyPlant::new(&spec, 1).unwrap();
        // Sigma_v must be PD per the spec; 1e-12 variance is below any assert here.
        for _ in 0..50 {
            let y = sim.step(&dvector![0.0]).unwrap();
            assert!(y[0].abs() < 1e-5);
        }
        assert!(sim.state().norm() < 1e-5);
    }

    #[test]
    fn plant_trajectories_deterministic_per_seed() {
        let plant = desk_plant();
        let spec = PlantSpec::new(plant, NoiseSpec::isotropic(2, 1, 0.02, 0.01), X0Mode::Zero).unwrap();
        let run = |seed| {
            let mut sim = NoisyPlant::new(&spec, seed).unwrap();
            (0..100)
                .map(|_| sim.step(&dvector![0.3]).unwrap()[0])
                .collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn measurement_noise_sample_covariance() {
        let plant = StateSpaceSystem::from_static(dmatrix![0.0]);
        let spec = PlantSpec::new(
            plant,
            NoiseSpec::new(
                DMatrix::zeros(0, 0),
                dmatrix![0.04],
                DMatrix::zeros(0, 1),
                DMatrix::zeros(0, 0),
            )
            .unwrap(),
            X0Mode::Zero,
        )
        .unwrap();
        let mut sim = NoisyPlant::new(&spec, 3).unwrap();
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let y = sim.step(&dvector![0.0]).unwrap();
            acc += y[0] * y[0];
        }
        let sample = acc / n as f64;
        assert!((sample - 0.04).abs() / 0.04 < 0.05, "sample var {sample}");
    }

    #[test]
    fn perfect_observer_reproduces_state_feedback() {
        let plant = desk_plant();
        let cfg = desk_config(&plant, None);
        let mut ctrl = Controller::new(&plant, &cfg).unwrap();
        let x0 = dvector![0.7, -0.3];
        ctrl.set_xhat(x0.clone());
        let spec = PlantSpec::new(
            plant.clone(),
            NoiseSpec::isotropic(2, 1, 0.0, 1e-30),
            X0Mode::Fixed(x0),
        )
        .unwrap();
        let mut sim = NoisyPlant::new(&spec, 1).unwrap();
        for _ in 0..40 {
            let x = sim.state().clone();
            let u = ctrl.command(&dvector![0.0]).unwrap();
            let expect = &cfg.f0 * &x;
            assert!((u.clone() - expect).norm() < 1e-9);
            let y = sim.step(&u).unwrap();
            ctrl.absorb(&y);
        }
    }

    #[test]
    fn estimator_property_decays_geometrically() {
        let plant = desk_plant();
        let cfg = desk_config(&plant, None);
        let rho = spectral_radius(&(plant.a() - &cfg.l0 * plant.c()))
            .unwrap()
            .max_modulus;
        let mut ctrl = Controller::new(&plant, &cfg).unwrap();
        let spec = PlantSpec::new(
            plant.clone(),
            NoiseSpec::isotropic(2, 1, 0.0, 1e-30),
            X0Mode::Fixed(dvector![1.0, -0.8]),
        )
        .unwrap();
        let mut sim = NoisyPlant::new(&spec, 1).unwrap();
        let mut errs = Vec::new();
        for _ in 0..60 {
            let x = sim.state().clone();
            let v = dvector![0.2];
            let u = ctrl.command(&v).unwrap();
            let gap = (&u - &cfg.f0 * &x - ctrl.last_vbar()).norm();
            errs.push(gap);
            let y = sim.step(&u).unwrap();
            ctrl.absorb(&y);
        }
        // After the transient the error contracts at least at rate rho + margin.
        let bound = rho + 0.05;
        for k in 20..50 {
            assert!(
                errs[k + 5] <= errs[k] * bound.powi(5) + 1e-12,
                "k={k}: {} vs {}",
                errs[k + 5],
                errs[k] * bound.powi(5)
            );
        }
        assert!(errs[59] < 1e-6);
    }

    #[test]
    fn closed_loop_block_matrix_is_schur() {
        let plant = desk_plant();
        let cfg = desk_config(&plant, None);
        let loop_sys = assemble_closed_loop(&plant, &cfg).unwrap();
        let radius = spectral_radius(loop_sys.a()).unwrap().max_modulus;
        assert!(radius < 1.0, "closed-loop radius {radius}");
    }

    #[test]
    fn attack_free_residual_decays_at_observer_rate() {
        let plant = desk_plant();
        let cfg = desk_config(&plant, None);
        let rho = spectral_radius(&(plant.a() - &cfg.l0 * plant.c()))
            .unwrap()
            .max_modulus;
        let mut ctrl = Controller::new(&plant, &cfg).unwrap();
        let spec = PlantSpec::new(
            plant.clone(),
            NoiseSpec::isotropic(2, 1, 0.0, 1e-30),
            X0Mode::Fixed(dvector![0.9, 0.4]),
        )
        .unwrap();
        let mut sim = NoisyPlant::new(&spec, 1).unwrap();
        let mut norms = Vec::new();
        for _ in 0..80 {
            let u = ctrl.command(&dvector![0.0]).unwrap();
            let y = sim.step(&u).unwrap();
            norms.push(ctrl.absorb(&y).norm());
        }
        let bound = rho + 0.05;
        for k in 15..60 {
            assert!(norms[k + 10] <= norms[k] * bound.powi(10) + 1e-13);
        }
    }

    #[test]
    fn youla_equivalence_against_transfer_form() {
        // Closed loop v -> y of the lockstep realization equals N (X - Q Nhat):
        // the residual-path Q is unexcited attack-free, so only the
        // feedforward Q matters. Checked at 16 frequency points.
        let plant = desk_plant();
        let q = StateSpaceSystem::new(dmatrix![0.3], dmatrix![0.5], dmatrix![0.4], dmatrix![0.2]).unwrap();
        let cfg = desk_config(&plant, Some(q.clone()));
        let assembled = assemble_closed_loop(&plant, &cfg).unwrap();

        let vhat = difference(&cfg.factors.x, &series(&q, &cfg.factors.nhat).unwrap()).unwrap();
        let oracle = series(&cfg.factors.n, &vhat).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..16 {
            let z = Complex64::from_polar(2.0, rng.gen_range(0.0..std::f64::consts::TAU));
            let got = assembled.freq_response(z).unwrap();
            let want = oracle.freq_response(z).unwrap();
            assert!((got - want).norm() < 1e-7);
        }
    }

    #[test]
    fn aux_residuals_vanish_attack_free() {
        let plant = desk_plant();
        let cfg = desk_config(&plant, None);
        let mut ctrl = Controller::new(&plant, &cfg).unwrap();
        let mut aux = AuxResiduals::new(&plant, cfg.f0.clone(), cfg.l0.clone(), None).unwrap();
        let spec = PlantSpec::new(
            plant.clone(),
            NoiseSpec::isotropic(2, 1, 0.0, 1e-30),
            X0Mode::Zero,
        )
        .unwrap();
        let mut sim = NoisyPlant::new(&spec, 1).unwrap();
        for k in 0..120 {
            let v = dvector![(k as f64 * 0.13).sin()];
            let u = ctrl.command(&v).unwrap();
            let y = sim.step(&u).unwrap();
            ctrl.absorb(&y);
            let out = aux.step(&u, &y, &v).unwrap();
            assert_eq!(out.r_u.len(), 1);
            assert_eq!(out.r_yc.len(), 1);
            if k > 30 {
                assert!(out.r_u.norm() < 1e-8, "k={k} r_u {}", out.r_u.norm());
                assert!(out.r_uc.norm() < 1e-8);
                assert!(out.r_yc.norm() < 1e-8);
            }
        }
    }

    #[test]
    fn aux_residual_departs_with_actuator_attack() {
        let plant = desk_plant();
        let cfg = desk_config(&plant, None);
        let mut ctrl = Controller::new(&plant, &cfg).unwrap();
        let mut aux = AuxResiduals::new(&plant, cfg.f0.clone(), cfg.l0.clone(), None).unwrap();
        let spec = PlantSpec::new(
            plant.clone(),
            NoiseSpec::isotropic(2, 1, 0.0, 1e-30),
            X0Mode::Zero,
        )
        .unwrap();
        let mut sim = NoisyPlant::new(&spec, 1).unwrap();
        let mut first_hit = None;
        for k in 0..140 {
            let v = dvector![0.5];
            let u = ctrl.command(&v).unwrap();
            let ua = if k >= 100 { &u + dvector![1.0] } else { u.clone() };
            let y = sim.step(&ua).unwrap();
            ctrl.absorb(&y);
            // The monitor-side generator sees the corrupted actuation stream.
            let out = aux.step(&ua, &y, &v).unwrap();
            if k < 100 {
                assert!(k < 40 || out.r_u.norm() < 1e-8);
            } else if out.r_u.norm() > 1e-3 && first_hit.is_none() {
                first_hit = Some(k);
            }
        }
        assert_eq!(first_hit, Some(100));
    }
}
