//! Residual-encoder detection scheme: the plant side runs a switched encoder
//! over `(u^a, y)`, the monitor side decodes it against the feedforward
//! excess and the baseline residual, and evaluates a chi-square statistic on
//! the pair `(r_u, r_0K)`.
//!
//! All mode-dependent filters switch their matrices simultaneously on the
//! shared schedule while carrying their states across switch instants.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::loopsim::{Controller, ControllerConfig};
use crate::statespace::StateSpaceSystem;
use crate::stats::chi2_threshold;
use crate::synthesis::{GainBank, KalmanSolution};

/// Default weight on the noise-decoupled residual in the test statistic.
pub const LAMBDA_DEFAULT: f64 = 1e6;

/// One evaluated detector step.
#[derive(Debug, Clone)]
pub struct ResidualFrame {
    pub k: usize,
    pub mode: usize,
    pub r_u: DVector<f64>,
    pub r_0k: DVector<f64>,
    pub j: f64,
    pub j_th: f64,
    pub alarm: bool,
}

/// `J = lambda * r_u' r_u + r_0K' Sigma_r^{-1} r_0K` against the chi-square
/// quantile.
#[derive(Debug, Clone)]
pub struct ChiSquareEvaluator {
    pub lambda: f64,
    sigma_r_inv: DMatrix<f64>,
    j_th: f64,
}

impl ChiSquareEvaluator {
    pub fn new(kalman: &KalmanSolution, lambda: f64, alpha: f64) -> Result<Self> {
        if lambda <= 0.0 {
            return Err(Error::InvalidArgument("lambda must be positive".into()));
        }
        let m = kalman.sigma_r.nrows();
        Ok(Self {
            lambda,
            sigma_r_inv: kalman.sigma_r_inv()?,
            j_th: chi2_threshold(alpha, m),
        })
    }

    pub fn evaluate(&self, k: usize, mode: usize, r_u: DVector<f64>, r_0k: DVector<f64>) -> ResidualFrame {
        let j = self.lambda * r_u.norm_squared()
            + (r_0k.transpose() * &self.sigma_r_inv * &r_0k)[(0, 0)];
        ResidualFrame {
            k,
            mode,
            alarm: j > self.j_th,
            j,
            j_th: self.j_th,
            r_u,
            r_0k,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.j_th
    }
}

/// Plant-side switched encoder: `r_en = u^a - F_s sigma` with
/// `sigma <- (A - L_s C) sigma + L_s y + (B - L_s D) u^a`; the state carries
/// over at switch instants.
#[derive(Debug, Clone)]
pub struct Encoder {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    f: Vec<DMatrix<f64>>,
    l: Vec<DMatrix<f64>>,
    schedule: Vec<u16>,
    sigma: DVector<f64>,
    k: usize,
}

/// Encoder outputs: the transmitted encoded residual and the switched-gain
/// plant-side residual (used by identity suites; not transmitted).
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub r_en: DVector<f64>,
    pub r_0sigma: DVector<f64>,
    pub mode: usize,
}

impl Encoder {
    pub fn new(plant: &StateSpaceSystem, bank: &GainBank) -> Self {
        Self {
            a: plant.a().clone(),
            b: plant.b().clone(),
            c: plant.c().clone(),
            d: plant.d().clone(),
            f: bank.f.clone(),
            l: bank.l.clone(),
            schedule: bank.schedule().to_vec(),
            sigma: DVector::zeros(plant.n_states()),
            k: 0,
        }
    }

    pub fn mode_at(&self, k: usize) -> usize {
        self.schedule[k.min(self.schedule.len() - 1)] as usize
    }

    pub fn step(&mut self, u_applied: &DVector<f64>, y: &DVector<f64>) -> EncoderOutput {
        let mode = self.mode_at(self.k);
        let f_s = &self.f[mode];
        let l_s = &self.l[mode];
        let r_en = u_applied - f_s * &self.sigma;
        let r_0sigma = y - &self.c * &self.sigma - &self.d * u_applied;
        self.sigma = (&self.a - l_s * &self.c) * &self.sigma
            + l_s * y
            + (&self.b - l_s * &self.d) * u_applied;
        self.k += 1;
        EncoderOutput { r_en, r_0sigma, mode }
    }
}

/// Monitor-side decoder; owns the observer-based controller (they share the
/// observer and the residual per the unified configuration).
#[derive(Debug, Clone)]
pub struct Decoder {
    controller: Controller,
    evaluator: ChiSquareEvaluator,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    f: Vec<DMatrix<f64>>,
    l: Vec<DMatrix<f64>>,
    a_f0: DMatrix<f64>,
    a_lk: DMatrix<f64>,
    l_k: DMatrix<f64>,
    schedule: Vec<u16>,
    /// Feedforward-excess path (fixed dynamics, switched output tap).
    x_p: DVector<f64>,
    /// Switched-observer path of the mode filter.
    x_q1: DVector<f64>,
    /// Fixed path of the mode filter.
    x_q2: DVector<f64>,
    /// Kalman post-filter state.
    x_k: DVector<f64>,
    k: usize,
}

impl Decoder {
    pub fn new(
        plant: &StateSpaceSystem,
        cfg: &ControllerConfig,
        bank: &GainBank,
        kalman: &KalmanSolution,
        lambda: f64,
        alpha: f64,
    ) -> Result<Self> {
        let controller = Controller::new(plant, cfg)?;
        let evaluator = ChiSquareEvaluator::new(kalman, lambda, alpha)?;
        let n = plant.n_states();
        Ok(Self {
            controller,
            evaluator,
            a: plant.a().clone(),
            b: plant.b().clone(),
            c: plant.c().clone(),
            f: bank.f.clone(),
            l: bank.l.clone(),
            a_f0: plant.a() + plant.b() * &cfg.f0,
            a_lk: plant.a() - &kalman.l_k * plant.c(),
            l_k: kalman.l_k.clone(),
            schedule: bank.schedule().to_vec(),
            x_p: DVector::zeros(n),
            x_q1: DVector::zeros(n),
            x_q2: DVector::zeros(n),
            x_k: DVector::zeros(n),
            k: 0,
        })
    }

    pub fn mode_at(&self, k: usize) -> usize {
        self.schedule[k.min(self.schedule.len() - 1)] as usize
    }

    /// Forms and caches `u(k)`; the frame goes on the wire.
    pub fn command(&mut self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.controller.command(v)
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn set_xhat(&mut self, x: DVector<f64>) {
        self.controller.set_xhat(x);
    }

    /// Consumes the received `(y^a, r_en^a)` frames for step `k` and produces
    /// the evaluated residual pair. The step index must match the decoder's
    /// own counter; a mismatch is a schedule desync and aborts the run.
    pub fn absorb(
        &mut self,
        k: usize,
        y_received: &DVector<f64>,
        r_en_received: &DVector<f64>,
    ) -> Result<ResidualFrame> {
        if k != self.k {
            return Err(Error::ScheduleDesync {
                expected: self.k,
                got: k,
            });
        }
        let mode = self.mode_at(k);
        let f_s = &self.f[mode];
        let l_s = &self.l[mode];
        let f0 = &self.f[0];
        let l0 = &self.l[0];

        // w(k) = u(k) - F0 xhat(k), cached by the controller at command time.
        let w = self.controller.last_w().clone();
        let r_0 = self.controller.absorb(y_received);

        let p_out = (f0 - f_s) * &self.x_p + &w;
        let q_out = f_s * &self.x_q1 - (f_s - f0) * &self.x_q2;
        let r_u = r_en_received - p_out - q_out;
        let r_0k = &self.c * &self.x_k + &r_0;

        self.x_p = &self.a_f0 * &self.x_p + &self.b * &w;
        self.x_q1 = (&self.a - l_s * &self.c) * &self.x_q1 + (l0 - l_s) * &r_0;
        self.x_q2 = &self.a_f0 * &self.x_q2 + l0 * &r_0;
        self.x_k = &self.a_lk * &self.x_k + (l0 - &self.l_k) * &r_0;
        self.k += 1;

        Ok(self.evaluator.evaluate(k, mode, r_u, r_0k))
    }
}
