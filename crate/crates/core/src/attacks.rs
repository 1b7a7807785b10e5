//! Kernel attacks (zero-dynamics, covert, replay), arbitrary additive
//! injections, and stealth verification against the Kalman chi-square
//! baseline detector.
//!
//! Attacks act on channel frames in flight. Per step the runner first lets
//! the set tamper plant-bound frames (actuator-side injections advance the
//! covert plant copy), then monitor-bound frames (sensor-side injections,
//! replay substitution and the omniscient encoder mask).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loopsim::{Controller, ControllerConfig, NoisyPlant, PlantSpec, ResidualObserver};
use crate::statespace::{invariant_zeros, StateSpaceSystem};
use crate::stats::{chi2_threshold, empirical_rates};
use crate::synthesis::{GainBank, KalmanSolution};

/// Attackable channels. `Au`/`Ay` live in the baseline and encoder loops;
/// `Aren` is the encoded-residual wire; `Agamma`, `Ar0` and `Abeta` belong to
/// the encrypted configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Au,
    Ay,
    Aren,
    Agamma,
    Ar0,
    Abeta,
}

impl Channel {
    pub fn is_plant_bound(self) -> bool {
        matches!(self, Channel::Au | Channel::Agamma)
    }
}

/// Half-open activation window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveWindow {
    pub start: usize,
    pub end: usize,
}

impl ActiveWindow {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if end <= start {
            return Err(Error::InvalidArgument(format!(
                "attack window [{start}, {end}) is empty"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, k: usize) -> bool {
        self.start <= k && k < self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Deterministic additive signal shapes.
#[derive(Debug, Clone, PartialEq)]
pub enum AdditiveSignal {
    Constant(DVector<f64>),
    /// Sinusoid `amplitude * sin(2 pi j / period + phase)` with `j` counted
    /// from the window start.
    Sine {
        amplitude: DVector<f64>,
        period: f64,
        phase: f64,
    },
}

impl AdditiveSignal {
    pub fn dim(&self) -> usize {
        match self {
            AdditiveSignal::Constant(v) => v.len(),
            AdditiveSignal::Sine { amplitude, .. } => amplitude.len(),
        }
    }

    pub fn value(&self, j: usize) -> DVector<f64> {
        match self {
            AdditiveSignal::Constant(v) => v.clone(),
            AdditiveSignal::Sine {
                amplitude,
                period,
                phase,
            } => amplitude * (std::f64::consts::TAU * j as f64 / period + phase).sin(),
        }
    }
}

/// Attack description on one channel.
#[derive(Debug, Clone)]
pub struct AttackEntry {
    pub channel: Channel,
    pub window: ActiveWindow,
    pub kind: AttackKind,
}

#[derive(Debug, Clone)]
pub enum AttackKind {
    Additive(AdditiveSignal),
    /// Actuator injection along an invariant-zero direction. `z0 = None`
    /// searches the plant zeros; unstable zeros are amplitude-clipped after
    /// `saturation_steps`.
    ZeroDynamics {
        amplitude: f64,
        phase: f64,
        z0: Option<Complex64>,
        match_x0: bool,
        saturation_steps: usize,
    },
    /// Actuator half of a covert pair; drives a private plant copy.
    CovertInput(AdditiveSignal),
    /// Sensor half of a covert pair: emits `-(C x_a + D a_u)`.
    CovertOutput,
    /// Substitutes this channel's frames with ones recorded from
    /// `record_start` onward (same length as the window).
    Replay { record_start: usize },
    /// Scheme-A omniscient adversary: cancels the covert pair inside the
    /// switched encoder using the (secret) bank and schedule.
    OmniscientMask,
}

/// Zero-dynamics generator: `a_u(k) = amplitude * Re(g z0^(k - start))`.
#[derive(Debug, Clone)]
pub struct ZeroDynamicsAttack {
    pub z0: Complex64,
    g: DVector<Complex64>,
    x0: DVector<Complex64>,
    amplitude: f64,
    saturation_steps: usize,
}

impl ZeroDynamicsAttack {
    /// Builds the generator from a verified zero direction, or searches the
    /// plant's invariant zeros when `z0` is not supplied. Among candidates the
    /// zero closest to the unit circle is taken (slowest decay or growth).
    pub fn new(
        plant: &StateSpaceSystem,
        z0: Option<Complex64>,
        amplitude: f64,
        phase: f64,
        saturation_steps: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zeros = invariant_zeros(plant, &mut rng)?;
        if zeros.is_empty() {
            return Err(Error::AttackInfeasible {
                reason: "plant has no finite invariant zeros".into(),
            });
        }
        let picked = match z0 {
            Some(target) => zeros
                .iter()
                .min_by(|a, b| {
                    (a.z0 - target)
                        .norm()
                        .partial_cmp(&(b.z0 - target).norm())
                        .unwrap()
                })
                .filter(|zd| (zd.z0 - target).norm() < 1e-6 * target.norm().max(1.0))
                .ok_or_else(|| Error::AttackInfeasible {
                    reason: format!("no invariant zero near {target}"),
                })?,
            None => zeros
                .iter()
                .max_by(|a, b| {
                    let close = |z: Complex64| {
                        let r = z.norm();
                        if r <= 1.0 {
                            r
                        } else {
                            1.0 / r
                        }
                    };
                    close(a.z0).partial_cmp(&close(b.z0)).unwrap()
                })
                .unwrap(),
        };
        let gnorm = picked.g.norm();
        if gnorm < 1e-10 {
            return Err(Error::AttackInfeasible {
                reason: "zero direction has no input component".into(),
            });
        }
        let rot = Complex64::from_polar(1.0 / gnorm, phase);
        Ok(Self {
            z0: picked.z0,
            g: &picked.g * rot,
            x0: &picked.x0 * rot,
            amplitude,
            saturation_steps,
        })
    }

    /// Signal value `j` steps after onset.
    pub fn value(&self, j: usize) -> DVector<f64> {
        let r = self.z0.norm();
        let theta = self.z0.arg();
        let mag = if r > 1.0 {
            r.powi(j.min(self.saturation_steps) as i32)
        } else {
            r.powi(j as i32)
        };
        let rot = Complex64::from_polar(mag, theta * j as f64);
        DVector::from_iterator(self.g.len(), self.g.iter().map(|gi| (gi * rot).re * self.amplitude))
    }

    /// Plant-state offset that makes the attack exactly stealthy when added
    /// at onset.
    pub fn matched_offset(&self) -> DVector<f64> {
        DVector::from_iterator(self.x0.len(), self.x0.iter().map(|xi| xi.re * self.amplitude))
    }
}

/// Covert pair state: a private plant copy driven by the injected actuator
/// signal; the sensor-side signal cancels its output response. The sensor
/// half keeps emitting after the input window closes so the response tail
/// stays cancelled.
#[derive(Debug, Clone)]
struct CovertState {
    window: ActiveWindow,
    signal: AdditiveSignal,
    in_channel: Channel,
    out_channel: Channel,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    x_a: DVector<f64>,
    last_au: DVector<f64>,
    last_ay: DVector<f64>,
}

impl CovertState {
    fn plant_bound(&mut self, k: usize) -> Option<DVector<f64>> {
        let a_u = if self.window.contains(k) {
            self.signal.value(k - self.window.start)
        } else {
            DVector::zeros(self.b.ncols())
        };
        // a_y(k) = -(C x_a(k) + D a_u(k)); then x_a advances.
        self.last_ay = -(&self.c * &self.x_a + &self.d * &a_u);
        self.x_a = &self.a * &self.x_a + &self.b * &a_u;
        self.last_au = a_u.clone();
        if self.window.contains(k) {
            Some(a_u)
        } else {
            None
        }
    }

    fn monitor_bound(&self, k: usize) -> Option<&DVector<f64>> {
        if k >= self.window.start {
            Some(&self.last_ay)
        } else {
            None
        }
    }
}

/// Ring buffer of tapped channel frames.
#[derive(Debug, Clone)]
pub struct EavesdropLog {
    pub start: usize,
    frames: Vec<DVector<f64>>,
    capacity: usize,
}

impl EavesdropLog {
    pub fn new(start: usize, capacity: usize) -> Self {
        Self {
            start,
            frames: Vec::with_capacity(capacity),
            capacity,
        }
    }

    pub fn record(&mut self, k: usize, value: &DVector<f64>) {
        if k >= self.start && self.frames.len() < self.capacity {
            self.frames.push(value.clone());
        }
    }

    pub fn get(&self, offset: usize) -> Option<&DVector<f64>> {
        self.frames.get(offset)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone)]
struct ReplayState {
    channel: Channel,
    window: ActiveWindow,
    log: EavesdropLog,
}

#[derive(Debug, Clone)]
struct ZeroDynState {
    window: ActiveWindow,
    channel: Channel,
    gen: ZeroDynamicsAttack,
    match_x0: bool,
    offset_pending: bool,
}

#[derive(Debug, Clone)]
struct OmniscientState {
    window: ActiveWindow,
    f: Vec<DMatrix<f64>>,
    l: Vec<DMatrix<f64>>,
    schedule: Vec<u16>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    sigma: DVector<f64>,
    mask: DVector<f64>,
}

impl OmniscientState {
    /// Advances the adversary's switched filter copy on this step's covert
    /// pair and produces the cancelling encoder mask.
    fn advance(&mut self, k: usize, a_u: &DVector<f64>, a_y: &DVector<f64>) {
        if !self.window.contains(k) {
            self.mask.fill(0.0);
            return;
        }
        let mode = self.schedule[k.min(self.schedule.len() - 1)] as usize;
        let f_s = &self.f[mode];
        let l_s = &self.l[mode];
        // Encoder deviation under the pair is a_u - F_s sigma with sigma driven
        // by (a_u, -a_y); the mask is its negation.
        self.mask = f_s * &self.sigma - a_u;
        let a_l = &self.a - l_s * &self.c;
        let b_l = &self.b - l_s * &self.d;
        self.sigma = a_l * &self.sigma + l_s * (-a_y) + b_l * a_u;
    }
}

/// Compiled, stateful attack set for one simulation run.
#[derive(Debug, Clone)]
pub struct AttackSet {
    additive: Vec<(Channel, ActiveWindow, AdditiveSignal)>,
    zero_dyn: Option<ZeroDynState>,
    covert: Option<CovertState>,
    replay: Vec<ReplayState>,
    omniscient: Option<OmniscientState>,
    windows: Vec<ActiveWindow>,
}

impl AttackSet {
    /// Compiles per-channel entries, validating pairings and windows.
    /// `dim_of` maps a channel to its frame dimension; `bank` is required by
    /// the omniscient mask.
    pub fn compile(
        entries: &[AttackEntry],
        plant: &StateSpaceSystem,
        dim_of: impl Fn(Channel) -> usize,
        bank: Option<&GainBank>,
        seed: u64,
    ) -> Result<Self> {
        let mut set = AttackSet {
            additive: Vec::new(),
            zero_dyn: None,
            covert: None,
            replay: Vec::new(),
            omniscient: None,
            windows: Vec::new(),
        };
        let mut covert_in: Option<(Channel, ActiveWindow, AdditiveSignal)> = None;
        let mut covert_out: Option<(Channel, ActiveWindow)> = None;
        let mut omniscient_win: Option<ActiveWindow> = None;

        for entry in entries {
            set.windows.push(entry.window);
            match &entry.kind {
                AttackKind::Additive(sig) => {
                    if sig.dim() != dim_of(entry.channel) {
                        return Err(Error::DimensionMismatch {
                            context: "AttackSet::compile (additive)",
                            expected: format!("{}", dim_of(entry.channel)),
                            actual: format!("{}", sig.dim()),
                        });
                    }
                    set.additive.push((entry.channel, entry.window, sig.clone()));
                }
                AttackKind::ZeroDynamics {
                    amplitude,
                    phase,
                    z0,
                    match_x0,
                    saturation_steps,
                } => {
                    if !entry.channel.is_plant_bound() {
                        return Err(Error::InvalidArgument(
                            "zero-dynamics attacks inject on an actuator-side channel".into(),
                        ));
                    }
                    let gen = ZeroDynamicsAttack::new(
                        plant,
                        *z0,
                        *amplitude,
                        *phase,
                        *saturation_steps,
                        seed,
                    )?;
                    set.zero_dyn = Some(ZeroDynState {
                        window: entry.window,
                        channel: entry.channel,
                        gen,
                        match_x0: *match_x0,
                        offset_pending: *match_x0,
                    });
                }
                AttackKind::CovertInput(sig) => {
                    if !entry.channel.is_plant_bound() {
                        return Err(Error::InvalidArgument(
                            "covert input must be on an actuator-side channel".into(),
                        ));
                    }
                    if sig.dim() != dim_of(entry.channel) {
                        return Err(Error::DimensionMismatch {
                            context: "AttackSet::compile (covert input)",
                            expected: format!("{}", dim_of(entry.channel)),
                            actual: format!("{}", sig.dim()),
                        });
                    }
                    covert_in = Some((entry.channel, entry.window, sig.clone()));
                }
                AttackKind::CovertOutput => {
                    if entry.channel.is_plant_bound() {
                        return Err(Error::InvalidArgument(
                            "covert output must be on a sensor-side channel".into(),
                        ));
                    }
                    covert_out = Some((entry.channel, entry.window));
                }
                AttackKind::Replay { record_start } => {
                    let len = entry.window.len();
                    if record_start + len > entry.window.start {
                        return Err(Error::InvalidArgument(format!(
                            "replay window [{}, {}) must start after the recording [{}, {}) ends",
                            entry.window.start,
                            entry.window.end,
                            record_start,
                            record_start + len
                        )));
                    }
                    set.replay.push(ReplayState {
                        channel: entry.channel,
                        window: entry.window,
                        log: EavesdropLog::new(*record_start, len),
                    });
                }
                AttackKind::OmniscientMask => {
                    if entry.channel != Channel::Aren {
                        return Err(Error::InvalidArgument(
                            "the omniscient mask targets the encoded-residual channel".into(),
                        ));
                    }
                    omniscient_win = Some(entry.window);
                }
            }
        }

        match (covert_in, covert_out) {
            (Some((in_ch, win_in, signal)), Some((out_ch, win_out))) => {
                if win_in != win_out {
                    return Err(Error::InvalidArgument(
                        "covert pair windows must match".into(),
                    ));
                }
                set.covert = Some(CovertState {
                    window: win_in,
                    signal,
                    in_channel: in_ch,
                    out_channel: out_ch,
                    a: plant.a().clone(),
                    b: plant.b().clone(),
                    c: plant.c().clone(),
                    d: plant.d().clone(),
                    x_a: DVector::zeros(plant.n_states()),
                    last_au: DVector::zeros(plant.n_inputs()),
                    last_ay: DVector::zeros(plant.n_outputs()),
                });
            }
            (None, None) => {}
            _ => {
                return Err(Error::InvalidArgument(
                    "covert attacks require the (input, output) pair".into(),
                ));
            }
        }

        if let Some(window) = omniscient_win {
            let covert = set.covert.as_ref().ok_or_else(|| {
                Error::InvalidArgument("the omniscient mask requires a covert pair".into())
            })?;
            let bank = bank.ok_or_else(|| {
                Error::InvalidArgument("the omniscient mask needs the gain bank".into())
            })?;
            if covert.window != window {
                return Err(Error::InvalidArgument(
                    "omniscient mask window must match the covert pair".into(),
                ));
            }
            set.omniscient = Some(OmniscientState {
                window,
                f: bank.f.clone(),
                l: bank.l.clone(),
                schedule: bank.schedule().to_vec(),
                a: plant.a().clone(),
                b: plant.b().clone(),
                c: plant.c().clone(),
                d: plant.d().clone(),
                sigma: DVector::zeros(plant.n_states()),
                mask: DVector::zeros(plant.n_inputs()),
            });
        }
        Ok(set)
    }

    /// True when any configured window covers step `k`.
    pub fn active_at(&self, k: usize) -> bool {
        self.windows.iter().any(|w| w.contains(k))
    }

    /// Matched zero-dynamics state offset to add to the plant at onset.
    pub fn pending_state_offset(&mut self, k: usize) -> Option<DVector<f64>> {
        let zd = self.zero_dyn.as_mut()?;
        if zd.offset_pending && zd.match_x0 && k == zd.window.start {
            zd.offset_pending = false;
            Some(zd.gen.matched_offset())
        } else {
            None
        }
    }

    /// Tampers a plant-bound frame (actuator side). Must be called before
    /// `tamper_monitor_bound` within a step.
    pub fn tamper_plant_bound(&mut self, k: usize, channel: Channel, value: &mut DVector<f64>) {
        debug_assert!(channel.is_plant_bound());
        for (ch, win, sig) in &self.additive {
            if *ch == channel && win.contains(k) {
                *value += sig.value(k - win.start);
            }
        }
        if let Some(zd) = &self.zero_dyn {
            if zd.channel == channel && zd.window.contains(k) {
                *value += zd.gen.value(k - zd.window.start);
            }
        }
        let mut pair = None;
        if let Some(covert) = &mut self.covert {
            if covert.in_channel == channel {
                if let Some(a_u) = covert.plant_bound(k) {
                    *value += &a_u;
                }
                pair = Some((covert.last_au.clone(), covert.last_ay.clone()));
            }
        }
        if let (Some(omni), Some((a_u, a_y))) = (&mut self.omniscient, pair) {
            omni.advance(k, &a_u, &a_y);
        }
    }

    /// Tampers a monitor-bound frame (sensor side): additive terms, the covert
    /// sensor half, the omniscient mask and replay substitution, in that
    /// order.
    pub fn tamper_monitor_bound(&mut self, k: usize, channel: Channel, value: &mut DVector<f64>) {
        debug_assert!(!channel.is_plant_bound());
        for (ch, win, sig) in &self.additive {
            if *ch == channel && win.contains(k) {
                *value += sig.value(k - win.start);
            }
        }
        if let Some(covert) = &self.covert {
            if covert.out_channel == channel {
                if let Some(ay) = covert.monitor_bound(k) {
                    *value += ay;
                }
            }
        }
        if let Some(omni) = &self.omniscient {
            if channel == Channel::Aren && omni.window.contains(k) {
                *value += &omni.mask;
            }
        }
        for replay in &mut self.replay {
            if replay.channel != channel {
                continue;
            }
            replay.log.record(k, value);
            if replay.window.contains(k) {
                if let Some(recorded) = replay.log.get(k - replay.window.start) {
                    value.copy_from(recorded);
                }
            }
        }
    }
}

/// Kalman-gain observer plus chi-square evaluation: the standard baseline.
#[derive(Debug, Clone)]
pub struct BaselineChi2Detector {
    observer: ResidualObserver,
    sigma_r_inv: DMatrix<f64>,
    j_th: f64,
}

/// One baseline evaluation.
#[derive(Debug, Clone)]
pub struct BaselineFrame {
    pub r: DVector<f64>,
    pub j: f64,
    pub alarm: bool,
}

impl BaselineChi2Detector {
    pub fn new(plant: &StateSpaceSystem, kalman: &KalmanSolution, alpha: f64) -> Result<Self> {
        Ok(Self {
            observer: ResidualObserver::new(plant, kalman.l_k.clone())?,
            sigma_r_inv: kalman.sigma_r_inv()?,
            j_th: chi2_threshold(alpha, plant.n_outputs()),
        })
    }

    pub fn step(&mut self, u: &DVector<f64>, y: &DVector<f64>) -> BaselineFrame {
        let r = self.observer.step(u, y);
        let j = (r.transpose() * &self.sigma_r_inv * &r)[(0, 0)];
        BaselineFrame {
            alarm: j > self.j_th,
            j,
            r,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.j_th
    }
}

/// Monte-Carlo stealth verdict for an attack against the baseline detector.
#[derive(Debug, Clone)]
pub struct StealthReport {
    pub rate: f64,
    pub mean_j: f64,
    pub stealthy: bool,
    pub n_samples: usize,
    pub alpha: f64,
    /// Half-width of the binomial CI the verdict used.
    pub ci_half_width: f64,
}

/// Runs the closed loop `n_runs` times under the attack set and measures the
/// baseline alarm rate over the attacked steps (whole run when no window is
/// configured). Stealthy iff the rate sits within the binomial CI of alpha.
#[allow(clippy::too_many_arguments)]
pub fn verify_stealth(
    plant_spec: &PlantSpec,
    cfg: &ControllerConfig,
    kalman: &KalmanSolution,
    entries: &[AttackEntry],
    v_ref: &DVector<f64>,
    alpha: f64,
    horizon: usize,
    n_runs: usize,
    seed: u64,
) -> Result<StealthReport> {
    let plant_sys = &plant_spec.sys;
    let (m_dim, p_dim) = (plant_sys.n_outputs(), plant_sys.n_inputs());
    let dim_of = |ch: Channel| match ch {
        Channel::Ay | Channel::Ar0 => m_dim,
        _ => p_dim,
    };
    let mut alarms = Vec::new();
    let mut j_acc = 0.0;
    let mut j_count = 0usize;
    for run in 0..n_runs {
        let run_seed = seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(run as u64 + 1));
        let mut set = AttackSet::compile(entries, plant_sys, dim_of, None, run_seed)?;
        let mut plant = NoisyPlant::new(plant_spec, run_seed)?;
        let mut ctrl = Controller::new(plant_sys, cfg)?;
        let mut detector = BaselineChi2Detector::new(plant_sys, kalman, alpha)?;
        for k in 0..horizon {
            let u = ctrl.command(v_ref)?;
            let mut ua = u.clone();
            set.tamper_plant_bound(k, Channel::Au, &mut ua);
            if let Some(dx) = set.pending_state_offset(k) {
                plant.add_state_offset(&dx);
            }
            let y = plant.step(&ua)?;
            let mut ya = y.clone();
            set.tamper_monitor_bound(k, Channel::Ay, &mut ya);
            ctrl.absorb(&ya);
            let frame = detector.step(&u, &ya);
            let counted = if entries.is_empty() {
                true
            } else {
                set.active_at(k)
            };
            if counted {
                alarms.push(frame.alarm);
                j_acc += frame.j;
                j_count += 1;
            }
        }
    }
    let report = empirical_rates(&alarms, None);
    let n = alarms.len().max(1) as f64;
    let ci_half_width = 1.96 * (alpha * (1.0 - alpha) / n).sqrt() + 0.5 / n;
    Ok(StealthReport {
        rate: report.rate,
        mean_j: j_acc / j_count.max(1) as f64,
        stealthy: (report.rate - alpha).abs() <= ci_half_width,
        n_samples: alarms.len(),
        alpha,
        ci_half_width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    use crate::loopsim::X0Mode;
    use crate::synthesis::{coprime_factors, feedback_gain, kalman_gain, NoiseSpec};

    fn zero_plant() -> StateSpaceSystem {
        // G(z) = (z - 0.5)/((z - 0.9)(z - 0.8)): one invariant zero at 0.5.
        StateSpaceSystem::new(
            dmatrix![1.7, -0.72; 1.0, 0.0],
            dmatrix![1.0; 0.0],
            dmatrix![1.0, -0.5],
            dmatrix![0.0],
        )
        .unwrap()
    }

    fn loop_pieces(
        plant: &StateSpaceSystem,
        q_noise: f64,
        r_noise: f64,
    ) -> (PlantSpec, ControllerConfig, KalmanSolution) {
        let n = plant.n_states();
        let noise = NoiseSpec::isotropic(n, 1, q_noise, r_noise);
        let f0 = feedback_gain(
            plant.a(),
            plant.b(),
            &DMatrix::identity(n, n),
            &DMatrix::identity(1, 1),
        )
        .unwrap();
        let kalman = kalman_gain(plant.a(), plant.c(), &noise).unwrap();
        let l0 = kalman.l_k.clone();
        let factors = coprime_factors(plant, &f0, &l0).unwrap();
        let spec = PlantSpec::new(plant.clone(), noise, X0Mode::Zero).unwrap();
        let cfg = ControllerConfig {
            f0,
            l0,
            q: None,
            factors,
        };
        (spec, cfg, kalman)
    }

    #[test]
    fn zero_dynamics_residual_decays_without_matching() {
        let plant = zero_plant();
        let (spec, cfg, kalman) = loop_pieces(&plant, 0.0, 1e-30);
        let entries = [AttackEntry {
            channel: Channel::Au,
            window: ActiveWindow::new(50, 400).unwrap(),
            kind: AttackKind::ZeroDynamics {
                amplitude: 1.0,
                phase: 0.0,
                z0: None,
                match_x0: false,
                saturation_steps: 200,
            },
        }];
        let mut set = AttackSet::compile(&entries, &plant, |_| 1, None, 1).unwrap();
        let mut sim = NoisyPlant::new(&spec, 1).unwrap();
        let mut ctrl = Controller::new(&plant, &cfg).unwrap();
        let mut det = BaselineChi2Detector::new(&plant, &kalman, 0.05).unwrap();
        let mut peak: f64 = 0.0;
        let mut tail: f64 = 0.0;
        for k in 0..400 {
            let u = ctrl.command(&dvector![0.0]).unwrap();
            let mut ua = u.clone();
            set.tamper_plant_bound(k, Channel::Au, &mut ua);
            let y = sim.step(&ua).unwrap();
            ctrl.absorb(&y);
            let frame = det.step(&u, &y);
            let norm = frame.r.norm();
            if k >= 50 {
                peak = peak.max(norm);
            }
            if k >= 350 {
                tail = tail.max(norm);
            }
        }
        // Transient response decays toward zero (zero at 0.5 is stable).
        assert!(peak > 1e-6, "attack should perturb the residual transiently");
        assert!(tail < 1e-9, "tail {tail}");
    }

    #[test]
    fn zero_dynamics_with_matched_offset_is_exact() {
        let plant = zero_plant();
        let (spec, cfg, kalman) = loop_pieces(&plant, 0.0, 1e-30);
        let entries = [AttackEntry {
            channel: Channel::Au,
            window: ActiveWindow::new(50, 400).unwrap(),
            kind: AttackKind::ZeroDynamics {
                amplitude: 1.0,
                phase: 0.0,
                z0: Some(Complex64::new(0.5, 0.0)),
                match_x0: true,
                saturation_steps: 200,
            },
        }];
        let mut set = AttackSet::compile(&entries, &plant, |_| 1, None, 1).unwrap();
        let mut sim = NoisyPlant::new(&spec, 1).unwrap();
        let mut ctrl = Controller::new(&plant, &cfg).unwrap();
        let mut det = BaselineChi2Detector::new(&plant, &kalman, 0.05).unwrap();
        for k in 0..400 {
            let u = ctrl.command(&dvector![0.0]).unwrap();
            let mut ua = u.clone();
            set.tamper_plant_bound(k, Channel::Au, &mut ua);
            if let Some(dx) = set.pending_state_offset(k) {
                sim.add_state_offset(&dx);
            }
            let y = sim.step(&ua).unwrap();
            ctrl.absorb(&y);
            let frame = det.step(&u, &y);
            assert!(frame.r.norm() < 1e-10, "k={k}: {}", frame.r.norm());
        }
    }

    #[test]
    fn zero_dynamics_infeasible_without_zeros() {
        let plant = StateSpaceSystem::new(
            dmatrix![0.5],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![0.0],
        )
        .unwrap();
        let err = ZeroDynamicsAttack::new(&plant, None, 1.0, 0.0, 100, 1);
        assert!(matches!(err, Err(Error::AttackInfeasible { .. })));
    }

    #[test]
    fn covert_pair_cancels_exactly() {
        let plant = zero_plant();
        let (spec, cfg, kalman) = loop_pieces(&plant, 0.0, 1e-30);
        let entries = [
            AttackEntry {
                channel: Channel::Au,
                window: ActiveWindow::new(30, 300).unwrap(),
                kind: AttackKind::CovertInput(AdditiveSignal::Sine {
                    amplitude: dvector![2.0],
                    period: 40.0,
                    phase: 0.3,
                }),
            },
            AttackEntry {
                channel: Channel::Ay,
                window: ActiveWindow::new(30, 300).unwrap(),
                kind: AttackKind::CovertOutput,
            },
        ];
        let mut set = AttackSet::compile(&entries, &plant, |_| 1, None, 1).unwrap();
        let mut sim = NoisyPlant::new(&spec, 1).unwrap();
        let mut ctrl = Controller::new(&plant, &cfg).unwrap();
        let mut det = BaselineChi2Detector::new(&plant, &kalman, 0.05).unwrap();
        let mut plant_moved: f64 = 0.0;
        for k in 0..350 {
            let u = ctrl.command(&dvector![0.0]).unwrap();
            let mut ua = u.clone();
            set.tamper_plant_bound(k, Channel::Au, &mut ua);
            let y = sim.step(&ua).unwrap();
            let mut ya = y.clone();
            set.tamper_monitor_bound(k, Channel::Ay, &mut ya);
            ctrl.absorb(&ya);
            let frame = det.step(&u, &ya);
            assert!(frame.r.norm() < 1e-10, "k={k}: {}", frame.r.norm());
            plant_moved = plant_moved.max(sim.state().norm());
        }
        assert!(plant_moved > 0.5, "the attack should move the plant state");
    }

    #[test]
    fn covert_step_response_matches_direct_simulation() {
        let plant = zero_plant();
        let entries = [
            AttackEntry {
                channel: Channel::Au,
                window: ActiveWindow::new(0, 50).unwrap(),
                kind: AttackKind::CovertInput(AdditiveSignal::Constant(dvector![1.0])),
            },
            AttackEntry {
                channel: Channel::Ay,
                window: ActiveWindow::new(0, 50).unwrap(),
                kind: AttackKind::CovertOutput,
            },
        ];
        let mut set = AttackSet::compile(&entries, &plant, |_| 1, None, 1).unwrap();
        let mut copy = plant.clone();
        for k in 0..50 {
            let mut ua = dvector![0.0];
            set.tamper_plant_bound(k, Channel::Au, &mut ua);
            let expect = -copy.step(&dvector![1.0]).unwrap();
            let mut ay = dvector![0.0];
            set.tamper_monitor_bound(k, Channel::Ay, &mut ay);
            assert!((ay - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn replay_requires_recording_before_replaying() {
        let plant = zero_plant();
        let entries = [AttackEntry {
            channel: Channel::Ay,
            window: ActiveWindow::new(100, 200).unwrap(),
            kind: AttackKind::Replay { record_start: 50 },
        }];
        assert!(AttackSet::compile(&entries, &plant, |_| 1, None, 1).is_err());
    }

    #[test]
    fn replay_substitutes_recorded_frames() {
        let plant = zero_plant();
        let entries = [AttackEntry {
            channel: Channel::Ay,
            window: ActiveWindow::new(100, 150).unwrap(),
            kind: AttackKind::Replay { record_start: 10 },
        }];
        let mut set = AttackSet::compile(&entries, &plant, |_| 1, None, 1).unwrap();
        let mut seen = Vec::new();
        for k in 0..150 {
            let mut v = dvector![k as f64];
            set.tamper_monitor_bound(k, Channel::Ay, &mut v);
            seen.push(v[0]);
        }
        for k in 100..150 {
            assert_eq!(seen[k], (k - 90) as f64, "k={k}");
        }
        assert_eq!(seen[50], 50.0);
    }

    #[test]
    fn stealth_verdicts() {
        let plant = zero_plant();
        let (spec, cfg, kalman) = loop_pieces(&plant, 1e-4, 1e-4);
        // Covert attack: stealthy.
        let covert = [
            AttackEntry {
                channel: Channel::Au,
                window: ActiveWindow::new(200, 3000).unwrap(),
                kind: AttackKind::CovertInput(AdditiveSignal::Sine {
                    amplitude: dvector![1.0],
                    period: 60.0,
                    phase: 0.0,
                }),
            },
            AttackEntry {
                channel: Channel::Ay,
                window: ActiveWindow::new(200, 3000).unwrap(),
                kind: AttackKind::CovertOutput,
            },
        ];
        let report = verify_stealth(&spec, &cfg, &kalman, &covert, &dvector![0.0], 0.05, 3000, 6, 11).unwrap();
        assert!(report.stealthy, "covert rate {}", report.rate);

        // Naive additive sensor sinusoid: detected (a constant bias would be
        // partially absorbed by the observer; a sinusoid stays visible).
        let naive = [AttackEntry {
            channel: Channel::Ay,
            window: ActiveWindow::new(200, 3000).unwrap(),
            kind: AttackKind::Additive(AdditiveSignal::Sine {
                amplitude: dvector![0.5],
                period: 25.0,
                phase: 0.0,
            }),
        }];
        let report = verify_stealth(&spec, &cfg, &kalman, &naive, &dvector![0.0], 0.05, 3000, 6, 11).unwrap();
        assert!(!report.stealthy);
        assert!(report.rate > 0.3, "naive attack rate {}", report.rate);

        // No attack: calibrated.
        let report = verify_stealth(&spec, &cfg, &kalman, &[], &dvector![0.0], 0.05, 3000, 6, 11).unwrap();
        assert!(report.stealthy, "attack-free rate {}", report.rate);
    }
}
