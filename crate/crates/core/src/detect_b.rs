//! Encrypted loop configuration: the plant side runs a local observer-based
//! state-feedback controller and transmits only the innovation `r_0p` and the
//! switched-gain encoding `beta`; the monitor side transmits the encoded
//! control correction `gamma`. Eavesdropped traffic is filtered noise, and
//! the decoded pair `(r_u, r_0K)` detects tampering on any wire.

use nalgebra::{DMatrix, DVector};

use crate::detect_a::{ChiSquareEvaluator, ResidualFrame};
use crate::error::{Error, Result};
use crate::statespace::{spectral_radius, StateSpaceSystem};
use crate::synthesis::{GainBank, KalmanSolution};

/// Plant-side node: local observer, control reconstruction `u = F0 xhat + gamma`,
/// innovation `r_0p` and the switched encoding `beta = (F0 - F_s) xhat`.
#[derive(Debug, Clone)]
pub struct PlantNode {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    f: Vec<DMatrix<f64>>,
    l0: DMatrix<f64>,
    schedule: Vec<u16>,
    xhat: DVector<f64>,
    last_u: DVector<f64>,
    k: usize,
}

/// Plant-side outputs for one step.
#[derive(Debug, Clone)]
pub struct PlantNodeOutput {
    pub r_0p: DVector<f64>,
    pub beta: DVector<f64>,
    pub mode: usize,
}

impl PlantNode {
    pub fn new(plant: &StateSpaceSystem, bank: &GainBank) -> Self {
        Self {
            a: plant.a().clone(),
            b: plant.b().clone(),
            c: plant.c().clone(),
            d: plant.d().clone(),
            f: bank.f.clone(),
            l0: bank.l[0].clone(),
            schedule: bank.schedule().to_vec(),
            xhat: DVector::zeros(plant.n_states()),
            last_u: DVector::zeros(plant.n_inputs()),
            k: 0,
        }
    }

    fn mode_at(&self, k: usize) -> usize {
        self.schedule[k.min(self.schedule.len() - 1)] as usize
    }

    /// Decodes the received control correction into the actuator command
    /// `u(k) = F0 xhat(k) + gamma^a(k)`.
    pub fn command(&mut self, gamma_received: &DVector<f64>) -> DVector<f64> {
        let u = &self.f[0] * &self.xhat + gamma_received;
        self.last_u = u.clone();
        u
    }

    /// Consumes the measured `y(k)`: emits the innovation and the encoded
    /// signal, then advances the local observer.
    pub fn absorb(&mut self, y: &DVector<f64>) -> PlantNodeOutput {
        let mode = self.mode_at(self.k);
        let r_0p = y - &self.c * &self.xhat - &self.d * &self.last_u;
        let beta = (&self.f[0] - &self.f[mode]) * &self.xhat;
        self.xhat = &self.a * &self.xhat + &self.b * &self.last_u + &self.l0 * &r_0p;
        self.k += 1;
        PlantNodeOutput { r_0p, beta, mode }
    }

    pub fn xhat(&self) -> &DVector<f64> {
        &self.xhat
    }

    /// Spectral radius of the local loop (plant + observer + F0) with the
    /// monitor link cut (`gamma` frozen at zero).
    pub fn blackout_radius(&self, plant: &StateSpaceSystem) -> Result<f64> {
        let n = plant.n_states();
        let mut block = DMatrix::zeros(2 * n, 2 * n);
        block.view_mut((0, 0), (n, n)).copy_from(plant.a());
        block
            .view_mut((0, n), (n, n))
            .copy_from(&(plant.b() * &self.f[0]));
        block
            .view_mut((n, 0), (n, n))
            .copy_from(&(&self.l0 * plant.c()));
        block.view_mut((n, n), (n, n)).copy_from(
            &(plant.a() + plant.b() * &self.f[0] - &self.l0 * plant.c()),
        );
        Ok(spectral_radius(&block)?.max_modulus)
    }
}

/// Monitor-side outputs for one step.
#[derive(Debug, Clone)]
pub struct MonitorOutput {
    pub frame: ResidualFrame,
    pub r_beta: DVector<f64>,
    pub y_reconstructed: DVector<f64>,
}

/// Monitor-side node: encodes `gamma`, decodes `beta` into `r_beta`, forms
/// the detection pair and reconstructs `y` for reporting.
#[derive(Debug, Clone)]
pub struct MonitorNode {
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    f: Vec<DMatrix<f64>>,
    l0: DMatrix<f64>,
    l_k: DMatrix<f64>,
    a_f0: DMatrix<f64>,
    a_l0: DMatrix<f64>,
    a_lk: DMatrix<f64>,
    schedule: Vec<u16>,
    q: Option<StateSpaceSystem>,
    evaluator: ChiSquareEvaluator,
    x_v: DVector<f64>,
    x_beta: DVector<f64>,
    x_qb: DVector<f64>,
    x_k: DVector<f64>,
    x_recon: DVector<f64>,
    last_gamma: DVector<f64>,
    last_r0a: DVector<f64>,
    k: usize,
}

impl MonitorNode {
    pub fn new(
        plant: &StateSpaceSystem,
        bank: &GainBank,
        kalman: &KalmanSolution,
        q: Option<StateSpaceSystem>,
        lambda: f64,
        alpha: f64,
    ) -> Result<Self> {
        if let Some(qsys) = &q {
            if qsys.n_inputs() != plant.n_outputs() || qsys.n_outputs() != plant.n_inputs() {
                return Err(Error::DimensionMismatch {
                    context: "MonitorNode (Q)",
                    expected: format!("{}x{}", plant.n_inputs(), plant.n_outputs()),
                    actual: format!("{}x{}", qsys.n_outputs(), qsys.n_inputs()),
                });
            }
            if !qsys.is_stable()? {
                return Err(Error::InvalidArgument("Q must be stable".into()));
            }
        }
        let n = plant.n_states();
        let evaluator = ChiSquareEvaluator::new(kalman, lambda, alpha)?;
        Ok(Self {
            b: plant.b().clone(),
            c: plant.c().clone(),
            d: plant.d().clone(),
            f: bank.f.clone(),
            l0: bank.l[0].clone(),
            l_k: kalman.l_k.clone(),
            a_f0: plant.a() + plant.b() * &bank.f[0],
            a_l0: plant.a() - &bank.l[0] * plant.c(),
            a_lk: plant.a() - &kalman.l_k * plant.c(),
            schedule: bank.schedule().to_vec(),
            q: q.map(|mut qsys| {
                qsys.reset();
                qsys
            }),
            evaluator,
            x_v: DVector::zeros(n),
            x_beta: DVector::zeros(n),
            x_qb: DVector::zeros(n),
            x_k: DVector::zeros(n),
            x_recon: DVector::zeros(n),
            last_gamma: DVector::zeros(plant.n_inputs()),
            last_r0a: DVector::zeros(plant.n_outputs()),
            k: 0,
        })
    }

    fn mode_at(&self, k: usize) -> usize {
        self.schedule[k.min(self.schedule.len() - 1)] as usize
    }

    /// Encodes the control correction
    /// `gamma = v - F0 x_v - Q(C x_v + D v - r_0^a)`, using the latest
    /// received innovation in the Q path.
    pub fn command(&mut self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let q_out = match &mut self.q {
            Some(q) => {
                let input = &self.c * &self.x_v + &self.d * v - &self.last_r0a;
                q.step(&input)?
            }
            None => DVector::zeros(self.b.ncols()),
        };
        let gamma = v - &self.f[0] * &self.x_v - q_out;
        self.x_v = &self.a_l0 * &self.x_v + (&self.b - &self.l0 * &self.d) * v;
        self.last_gamma = gamma.clone();
        Ok(gamma)
    }

    /// Consumes the received `(r_0p^a, beta^a)` frames for step `k`.
    pub fn absorb(
        &mut self,
        k: usize,
        r0_received: &DVector<f64>,
        beta_received: &DVector<f64>,
    ) -> Result<MonitorOutput> {
        if k != self.k {
            return Err(Error::ScheduleDesync {
                expected: self.k,
                got: k,
            });
        }
        let mode = self.mode_at(k);
        let df = &self.f[0] - &self.f[mode];

        // Decode beta against the gamma-driven model; the sign makes the
        // attack-free identity r_beta = Q_0s(r_0p) hold.
        let r_beta = beta_received - &df * &self.x_beta;
        let q0_out = &df * &self.x_qb;
        let r_u = &r_beta - q0_out;
        let r_0k = &self.c * &self.x_k + r0_received;
        let y_recon =
            (&self.c + &self.d * &self.f[0]) * &self.x_recon + &self.d * &self.last_gamma + r0_received;

        self.x_beta = &self.a_f0 * &self.x_beta + &self.b * &self.last_gamma;
        self.x_qb = &self.a_f0 * &self.x_qb + &self.l0 * r0_received;
        self.x_k = &self.a_lk * &self.x_k + (&self.l0 - &self.l_k) * r0_received;
        self.x_recon =
            &self.a_f0 * &self.x_recon + &self.b * &self.last_gamma + &self.l0 * r0_received;
        self.last_r0a = r0_received.clone();
        self.k += 1;

        let frame = self.evaluator.evaluate(k, mode, r_u, r_0k);
        Ok(MonitorOutput {
            frame,
            r_beta,
            y_reconstructed: y_recon,
        })
    }
}

/// Raw and smoothed covert-attack reconstruction.
#[derive(Debug, Clone)]
pub struct CovertReconstruction {
    /// Inverse-realization output, one vector per step.
    pub a_y_raw: Vec<DVector<f64>>,
    /// Moving-average of the raw trace (window given at call time).
    pub a_y: Vec<DVector<f64>>,
    /// Actuator estimate when the plant admits a stable causal inversion.
    pub a_u: Option<Vec<DVector<f64>>>,
    /// Reason the actuator estimate is infeasible, when it is.
    pub a_u_infeasible: Option<String>,
}

/// Recovers the sensor-side covert signal from the Kalman-filtered residual
/// stream via the stable inverse of the post-filter,
/// `a_y_hat = Q_K0^{-1}(r_0K)`, and the actuator signal by stable inversion
/// of the left factor when the plant is square, biproper and minimum phase.
///
/// `smoothing` is the moving-average window applied to the raw estimate
/// (1 = raw); the white estimation noise shrinks with the window while a
/// slowly varying attack passes through.
pub fn reconstruct_covert(
    r_0k_stream: &[DVector<f64>],
    plant: &StateSpaceSystem,
    l0: &DMatrix<f64>,
    l_k: &DMatrix<f64>,
    smoothing: usize,
) -> Result<CovertReconstruction> {
    let m = plant.n_outputs();
    // Q_K0^{-1} = (A - L0 C, L0 - L_K, -C, I): stable whenever A - L0 C is.
    let a_l0 = plant.a() - l0 * plant.c();
    let mut inv = StateSpaceSystem::new(
        a_l0.clone(),
        l0 - l_k,
        -plant.c().clone(),
        DMatrix::identity(m, m),
    )?;
    let mut a_y_raw = Vec::with_capacity(r_0k_stream.len());
    for r in r_0k_stream {
        a_y_raw.push(inv.step(r)?);
    }
    let w = smoothing.max(1);
    let mut a_y = Vec::with_capacity(a_y_raw.len());
    let mut acc = DVector::zeros(m);
    for (i, value) in a_y_raw.iter().enumerate() {
        acc += value;
        if i >= w {
            acc -= &a_y_raw[i - w];
        }
        a_y.push(&acc / (i + 1).min(w) as f64);
    }

    // a_u solves Nhat0 a_u = -Mhat0 a_y.
    let p = plant.n_inputs();
    let (a_u, a_u_infeasible) = if m != p {
        (None, Some("plant is not square".to_string()))
    } else {
        match plant.d().clone().try_inverse() {
            None => (
                None,
                Some("feedthrough D is singular; no causal stable inversion".to_string()),
            ),
            Some(d_inv) => {
                let b_l = plant.b() - l0 * plant.d();
                let a_inv = &a_l0 - &b_l * &d_inv * plant.c();
                let radius = spectral_radius(&a_inv)?.max_modulus;
                if radius >= 1.0 {
                    (
                        None,
                        Some(format!(
                            "plant is non-minimum phase (inverse radius {radius:.3})"
                        )),
                    )
                } else {
                    // Nhat0^{-1} = (A_inv, B_l D^{-1}, -D^{-1} C, D^{-1}).
                    let mut nhat_inv = StateSpaceSystem::new(
                        a_inv,
                        &b_l * &d_inv,
                        -(&d_inv * plant.c()),
                        d_inv,
                    )?;
                    let mut mhat = StateSpaceSystem::new(
                        a_l0.clone(),
                        -l0.clone(),
                        plant.c().clone(),
                        DMatrix::identity(m, m),
                    )?;
                    let mut out = Vec::with_capacity(a_y_raw.len());
                    for ay in &a_y_raw {
                        let rhs = -mhat.step(ay)?;
                        out.push(nhat_inv.step(&rhs)?);
                    }
                    (Some(out), None)
                }
            }
        }
    };
    Ok(CovertReconstruction {
        a_y_raw,
        a_y,
        a_u,
        a_u_infeasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    use crate::loopsim::{NoisyPlant, PlantSpec, X0Mode};
    use crate::synthesis::{build_gain_bank, feedback_gain, kalman_gain, NoiseSpec};

    fn desk_plant() -> StateSpaceSystem {
        StateSpaceSystem::new(
            dmatrix![0.9, 0.1; 0.0, 0.8],
            dmatrix![0.0; 1.0],
            dmatrix![1.0, 0.0],
            dmatrix![0.0],
        )
        .unwrap()
    }

    struct Rig {
        plant: StateSpaceSystem,
        spec: PlantSpec,
        bank: GainBank,
        kalman: KalmanSolution,
    }

    fn rig(noise_q: f64, noise_r: f64, bank_seed: u64, horizon: usize) -> Rig {
        let plant = desk_plant();
        let noise = NoiseSpec::isotropic(2, 1, noise_q, noise_r);
        let f0 = feedback_gain(plant.a(), plant.b(), &DMatrix::identity(2, 2), &dmatrix![1.0]).unwrap();
        let kalman = kalman_gain(plant.a(), plant.c(), &noise).unwrap();
        let l0 = kalman.l_k.clone();
        let bank = build_gain_bank(&plant, f0, l0, 2, bank_seed, 25, 0.8, horizon).unwrap();
        let spec = PlantSpec::new(plant.clone(), noise, X0Mode::Zero).unwrap();
        Rig {
            plant,
            spec,
            bank,
            kalman,
        }
    }

    fn run_attack_free(r: &Rig, horizon: usize, plant_seed: u64) -> Vec<(MonitorOutput, DVector<f64>, DVector<f64>)> {
        let mut plant = NoisyPlant::new(&r.spec, plant_seed).unwrap();
        let mut pnode = PlantNode::new(&r.plant, &r.bank);
        let mut mnode =
            MonitorNode::new(&r.plant, &r.bank, &r.kalman, None, 1e6, 0.05).unwrap();
        let mut out = Vec::new();
        for k in 0..horizon {
            let v = dvector![0.8];
            let gamma = mnode.command(&v).unwrap();
            let u = pnode.command(&gamma);
            let y = plant.step(&u).unwrap();
            let pout = pnode.absorb(&y);
            let mout = mnode.absorb(k, &pout.r_0p, &pout.beta).unwrap();
            out.push((mout, y, pout.r_0p));
        }
        out
    }

    #[test]
    fn mode_zero_beta_vanishes() {
        let r = rig(0.01, 0.01, 5, 200);
        let mut bank = r.bank.clone();
        for i in 1..bank.f.len() {
            bank.f[i] = bank.f[0].clone();
        }
        let mut plant = NoisyPlant::new(&r.spec, 9).unwrap();
        let mut pnode = PlantNode::new(&r.plant, &bank);
        for _ in 0..100 {
            let u = pnode.command(&dvector![0.3]);
            let y = plant.step(&u).unwrap();
            let out = pnode.absorb(&y);
            assert_eq!(out.beta.norm(), 0.0);
        }
    }

    #[test]
    fn quiescent_plant_node_stays_at_zero() {
        let r = rig(0.0, 1e-30, 5, 100);
        let mut plant = NoisyPlant::new(&r.spec, 1).unwrap();
        let mut pnode = PlantNode::new(&r.plant, &r.bank);
        for _ in 0..60 {
            let u = pnode.command(&dvector![0.0]);
            assert!(u.norm() < 1e-12);
            let y = plant.step(&u).unwrap();
            let out = pnode.absorb(&y);
            assert!(out.r_0p.norm() < 1e-12);
        }
    }

    #[test]
    fn attack_free_residuals_are_decoupled() {
        let r = rig(0.01, 0.02, 11, 500);
        for (i, (mout, _, _)) in run_attack_free(&r, 500, 77).iter().enumerate() {
            assert!(
                mout.frame.r_u.norm() < 1e-8,
                "k={i} r_u {}",
                mout.frame.r_u.norm()
            );
        }
    }

    #[test]
    fn r_beta_equals_filtered_innovation() {
        // Attack-free: r_beta = Q_0s(r_0p) with the fixed-dynamics path.
        let r = rig(0.01, 0.02, 13, 400);
        let mut x_qb = DVector::zeros(2);
        let f0 = &r.bank.f[0];
        let l0 = &r.bank.l[0];
        let a_f0 = r.plant.a() + r.plant.b() * f0;
        for (k, (mout, _, r_0p)) in run_attack_free(&r, 400, 3).iter().enumerate() {
            let mode = r.bank.mode_at(k);
            let want = (f0 - &r.bank.f[mode]) * &x_qb;
            let err = (mout.r_beta.clone() - want).norm();
            assert!(err < 1e-9, "k={k}: {err}");
            x_qb = &a_f0 * &x_qb + l0 * r_0p;
        }
    }

    #[test]
    fn y_reconstruction_tracks_the_measurement() {
        let r = rig(0.01, 0.02, 7, 300);
        for (k, (mout, y, _)) in run_attack_free(&r, 300, 21).iter().enumerate() {
            assert!(
                (mout.y_reconstructed.clone() - y).norm() < 1e-9,
                "k={k}: {}",
                (mout.y_reconstructed.clone() - y).norm()
            );
        }
    }

    #[test]
    fn innovation_attack_alarms_through_r0k() {
        let r = rig(0.005, 0.01, 5, 600);
        let mut plant = NoisyPlant::new(&r.spec, 5).unwrap();
        let mut pnode = PlantNode::new(&r.plant, &r.bank);
        let mut mnode = MonitorNode::new(&r.plant, &r.bank, &r.kalman, None, 1e6, 0.05).unwrap();
        let mut first_alarm = None;
        for k in 0..600 {
            let gamma = mnode.command(&dvector![0.0]).unwrap();
            let u = pnode.command(&gamma);
            let y = plant.step(&u).unwrap();
            let pout = pnode.absorb(&y);
            let mut r0a = pout.r_0p.clone();
            if k >= 300 {
                r0a += dvector![1.0];
            }
            let mout = mnode.absorb(k, &r0a, &pout.beta).unwrap();
            if k >= 300 && mout.frame.alarm && first_alarm.is_none() {
                first_alarm = Some(k - 300);
            }
            if k < 300 {
                assert!(mout.frame.r_u.norm() < 1e-8);
            }
        }
        assert!(first_alarm.unwrap() <= 2, "delay {:?}", first_alarm);
    }

    #[test]
    fn gamma_attack_alarms_through_ru() {
        let r = rig(0.005, 0.01, 5, 600);
        let mut plant = NoisyPlant::new(&r.spec, 6).unwrap();
        let mut pnode = PlantNode::new(&r.plant, &r.bank);
        let mut mnode = MonitorNode::new(&r.plant, &r.bank, &r.kalman, None, 1e6, 0.05).unwrap();
        let mut detected = false;
        for k in 0..600 {
            let gamma = mnode.command(&dvector![0.0]).unwrap();
            let mut gamma_a = gamma.clone();
            if k >= 300 {
                gamma_a += dvector![0.8];
            }
            let u = pnode.command(&gamma_a);
            let y = plant.step(&u).unwrap();
            let pout = pnode.absorb(&y);
            let mout = mnode.absorb(k, &pout.r_0p, &pout.beta).unwrap();
            if k >= 300 && k <= 330 && mout.frame.alarm {
                detected = true;
            }
            // r_0p stays pure innovation: the r_0K term never sees a_gamma.
            if k >= 330 {
                break;
            }
        }
        assert!(detected, "gamma attack must alarm within the first dwell");
    }

    #[test]
    fn blackout_keeps_local_loop_stable() {
        let r = rig(0.01, 0.01, 5, 100);
        let pnode = PlantNode::new(&r.plant, &r.bank);
        let radius = pnode.blackout_radius(&r.plant).unwrap();
        assert!(radius < 1.0, "blackout radius {radius}");
    }

    #[test]
    fn desync_is_fatal() {
        let r = rig(0.01, 0.01, 5, 100);
        let mut mnode = MonitorNode::new(&r.plant, &r.bank, &r.kalman, None, 1e6, 0.05).unwrap();
        let _ = mnode.command(&dvector![0.0]).unwrap();
        assert!(matches!(
            mnode.absorb(4, &dvector![0.0], &dvector![0.0]),
            Err(Error::ScheduleDesync { .. })
        ));
    }

    #[test]
    fn reconstruction_recovers_injected_sensor_signal() {
        // Covert pair on (gamma, r_0p) with a slow sinusoid; the smoothed
        // reconstruction tracks a_y within a few percent at high SNR.
        let r = rig(1e-6, 1e-6, 5, 4000);
        let mut plant = NoisyPlant::new(&r.spec, 31).unwrap();
        let mut pnode = PlantNode::new(&r.plant, &r.bank);
        let mut mnode = MonitorNode::new(&r.plant, &r.bank, &r.kalman, None, 1e6, 0.05).unwrap();
        let mut copy = r.plant.clone();
        copy.reset();
        let mut r0k_stream = Vec::new();
        let mut injected = Vec::new();
        let onset = 500usize;
        for k in 0..4000 {
            let gamma = mnode.command(&dvector![0.0]).unwrap();
            let mut gamma_a = gamma.clone();
            let a_u = if k >= onset {
                dvector![(k as f64 * 0.01).sin()]
            } else {
                dvector![0.0]
            };
            gamma_a += &a_u;
            let a_y = -copy.step(&a_u).unwrap();
            let u = pnode.command(&gamma_a);
            let y = plant.step(&u).unwrap();
            let pout = pnode.absorb(&y);
            let r0a = &pout.r_0p + &a_y;
            let mout = mnode.absorb(k, &r0a, &pout.beta).unwrap();
            r0k_stream.push(mout.frame.r_0k.clone());
            injected.push(a_y);
        }
        let recon = reconstruct_covert(&r0k_stream, &r.plant, &r.bank.l[0], &r.kalman.l_k, 8).unwrap();
        let mut err = 0.0;
        let mut sig = 0.0;
        for k in onset + 100..4000 {
            err += (recon.a_y[k].clone() - &injected[k]).norm_squared();
            sig += injected[k].norm_squared();
        }
        let rel = (err / sig).sqrt();
        assert!(rel < 0.05, "relative reconstruction error {rel}");
        // D = 0 here, so the actuator estimate is declared infeasible.
        assert!(recon.a_u.is_none());
        assert!(recon.a_u_infeasible.is_some());
    }

    #[test]
    fn reconstruction_inverts_biproper_minimum_phase_plants() {
        // Biproper plant with a stable zero: both estimates come back.
        let plant = StateSpaceSystem::new(
            dmatrix![0.5],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
        )
        .unwrap();
        let noise = NoiseSpec::isotropic(1, 1, 1e-8, 1e-8);
        let kalman = kalman_gain(plant.a(), plant.c(), &noise).unwrap();
        let l0 = kalman.l_k.clone();
        // In the encrypted loop the covert sensor half rides directly on the
        // transmitted innovation: noise-free, r_0K = Q_K0(a_y) and Q_K0 = I
        // for L0 = L_K.
        let mut copy = plant.clone();
        let mut stream = Vec::new();
        let mut a_us = Vec::new();
        for k in 0..800 {
            let a_u = dvector![(k as f64 * 0.02).sin()];
            let a_y = -copy.step(&a_u).unwrap();
            stream.push(a_y);
            a_us.push(a_u);
        }
        let recon = reconstruct_covert(&stream, &plant, &l0, &kalman.l_k, 1).unwrap();
        let a_u_hat = recon.a_u.expect("biproper minimum-phase inversion");
        let mut err = 0.0;
        let mut sig = 0.0;
        for k in 100..800 {
            err += (a_u_hat[k].clone() - &a_us[k]).norm_squared();
            sig += a_us[k].norm_squared();
        }
        assert!((err / sig).sqrt() < 1e-6, "a_u error {}", (err / sig).sqrt());
    }

    #[test]
    fn reconstruction_refuses_non_minimum_phase() {
        // Zero at -2 (outside the unit circle): a_u infeasible, a_y returned.
        let plant = StateSpaceSystem::new(
            dmatrix![0.5],
            dmatrix![1.0],
            dmatrix![2.5],
            dmatrix![1.0],
        )
        .unwrap();
        let noise = NoiseSpec::isotropic(1, 1, 1e-6, 1e-6);
        let kalman = kalman_gain(plant.a(), plant.c(), &noise).unwrap();
        let stream = vec![dvector![0.1]; 50];
        let recon = reconstruct_covert(&stream, &plant, &kalman.l_k, &kalman.l_k, 1).unwrap();
        assert_eq!(recon.a_y.len(), 50);
        assert!(recon.a_u.is_none());
        assert!(recon
            .a_u_infeasible
            .as_deref()
            .unwrap()
            .contains("minimum phase"));
    }
}
