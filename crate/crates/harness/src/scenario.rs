//! Scenario files: JSON schema, validation and compilation into the core
//! simulation objects. Matrices are row-major nested arrays of doubles.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use kernelguard_core::attacks::{
    ActiveWindow, AdditiveSignal, AttackEntry, AttackKind, Channel,
};
use kernelguard_core::loopsim::{ControllerConfig, PlantSpec, X0Mode};
use kernelguard_core::statespace::StateSpaceSystem;
use kernelguard_core::synthesis::{
    build_gain_bank, coprime_factors, feedback_gain, kalman_gain, GainBank, KalmanSolution,
    NoiseSpec,
};

use crate::error::HarnessError;

/// Seed salts for the per-subsystem RNG streams.
const SALT_BANK: u64 = 0x6261_6e6b_0000_0001;
const SALT_PLANT: u64 = 0x706c_616e_0000_0002;
const SALT_ATTACK: u64 = 0x6174_6b73_0000_0003;

fn default_alpha() -> f64 {
    0.05
}
fn default_lambda() -> f64 {
    1e6
}
fn default_dwell() -> usize {
    25
}
fn default_kappa() -> usize {
    2
}
fn default_perturbation() -> f64 {
    0.8
}
fn default_window() -> usize {
    kernelguard_core::stats::WindowedMeanShift::DEFAULT_WINDOW
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub horizon: i64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub scheme: Scheme,
    #[serde(default)]
    pub transport: Transport,
    pub plant: PlantConfig,
    pub controller: ControllerConfigFile,
    #[serde(default)]
    pub gain_bank: GainBankConfig,
    #[serde(default)]
    pub reference: Reference,
    #[serde(default)]
    pub attacks: Vec<AttackConfig>,
    #[serde(default = "default_window")]
    pub mean_shift_window: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Baseline,
    SchemeA,
    SchemeB,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Baseline => "baseline",
            Scheme::SchemeA => "scheme_a",
            Scheme::SchemeB => "scheme_b",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    #[default]
    Inproc,
    Tcp {
        host: String,
        port: u16,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    #[serde(default)]
    pub d: Option<Vec<Vec<f64>>>,
    pub sigma_w: Vec<Vec<f64>>,
    pub sigma_v: Vec<Vec<f64>>,
    #[serde(default)]
    pub s: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub pi0: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub x0: X0Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum X0Config {
    #[default]
    Zero,
    Sampled,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfigFile {
    pub feedback: FeedbackConfig,
    #[serde(default)]
    pub observer: ObserverConfig,
    #[serde(default)]
    pub youla: YoulaConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackConfig {
    Weights { q_weight: f64, r_weight: f64 },
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObserverConfig {
    /// Use the steady Kalman gain for L0 (the encrypted loop's whiteness
    /// guarantee needs this).
    #[default]
    Kalman,
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum YoulaConfig {
    #[default]
    Zero,
    Explicit {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        d: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainBankConfig {
    #[serde(default = "default_kappa")]
    pub kappa: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_dwell")]
    pub dwell_min: usize,
    #[serde(default = "default_perturbation")]
    pub perturbation_scale: f64,
}

impl Default for GainBankConfig {
    fn default() -> Self {
        Self {
            kappa: default_kappa(),
            seed: None,
            dwell_min: default_dwell(),
            perturbation_scale: default_perturbation(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    #[default]
    Zero,
    Constant(Vec<f64>),
    Sine {
        amplitude: Vec<f64>,
        period: f64,
    },
}

impl Reference {
    pub fn value(&self, k: usize, dim: usize) -> DVector<f64> {
        match self {
            Reference::Zero => DVector::zeros(dim),
            Reference::Constant(v) => DVector::from_vec(v.clone()),
            Reference::Sine { amplitude, period } => {
                DVector::from_vec(amplitude.clone())
                    * (std::f64::consts::TAU * k as f64 / period).sin()
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub channel: ChannelName,
    /// Half-open activation window `[start, end)`.
    pub window: [usize; 2],
    pub generator: GeneratorConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelName {
    #[serde(rename = "a_u")]
    Au,
    #[serde(rename = "a_y")]
    Ay,
    #[serde(rename = "a_r_en")]
    Aren,
    #[serde(rename = "a_gamma")]
    Agamma,
    #[serde(rename = "a_r0")]
    Ar0,
    #[serde(rename = "a_beta")]
    Abeta,
}

impl ChannelName {
    pub fn to_core(self) -> Channel {
        match self {
            ChannelName::Au => Channel::Au,
            ChannelName::Ay => Channel::Ay,
            ChannelName::Aren => Channel::Aren,
            ChannelName::Agamma => Channel::Agamma,
            ChannelName::Ar0 => Channel::Ar0,
            ChannelName::Abeta => Channel::Abeta,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    Additive {
        signal: SignalConfig,
    },
    ZeroDynamics {
        amplitude: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        z0: Option<[f64; 2]>,
        #[serde(default)]
        match_x0: bool,
        #[serde(default = "default_saturation")]
        saturation_steps: usize,
    },
    CovertInput {
        signal: SignalConfig,
    },
    CovertOutput,
    Replay {
        record_start: usize,
    },
    OmniscientMask,
}

fn default_saturation() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalConfig {
    Constant { value: Vec<f64> },
    Sine { amplitude: Vec<f64>, period: f64, #[serde(default)] phase: f64 },
}

impl SignalConfig {
    fn to_core(&self) -> AdditiveSignal {
        match self {
            SignalConfig::Constant { value } => {
                AdditiveSignal::Constant(DVector::from_vec(value.clone()))
            }
            SignalConfig::Sine {
                amplitude,
                period,
                phase,
            } => AdditiveSignal::Sine {
                amplitude: DVector::from_vec(amplitude.clone()),
                period: *period,
                phase: *phase,
            },
        }
    }
}

/// Everything needed to run one scenario, compiled and validated.
pub struct Built {
    pub scenario: Scenario,
    pub plant_sys: StateSpaceSystem,
    pub plant_spec: PlantSpec,
    pub controller: ControllerConfig,
    pub kalman: KalmanSolution,
    pub bank: GainBank,
    pub attack_entries: Vec<AttackEntry>,
    pub horizon: usize,
    pub plant_seed: u64,
    pub attack_seed: u64,
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, HarnessError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(HarnessError::Validation(format!(
                "matrix {what}: row {i} has {} entries, expected {ncols}",
                r.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn load_scenario(path: &std::path::Path) -> Result<Scenario, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let scenario: Scenario = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))?;
    Ok(scenario)
}

/// Validates the scenario and compiles the core objects. Synthesis failures
/// (Riccati divergence, non-Schur gains) surface as numerical errors.
pub fn build(scenario: &Scenario) -> Result<Built, HarnessError> {
    if scenario.horizon <= 0 {
        return Err(HarnessError::Validation(format!(
            "horizon must be positive, got {}",
            scenario.horizon
        )));
    }
    let horizon = scenario.horizon as usize;
    if !(0.0 < scenario.alpha && scenario.alpha < 1.0) {
        return Err(HarnessError::Validation(format!(
            "alpha must be in (0,1), got {}",
            scenario.alpha
        )));
    }
    if scenario.lambda <= 0.0 {
        return Err(HarnessError::Validation(format!(
            "lambda must be positive, got {}",
            scenario.lambda
        )));
    }

    let a = to_matrix(&scenario.plant.a, "plant.a")?;
    let b = to_matrix(&scenario.plant.b, "plant.b")?;
    let c = to_matrix(&scenario.plant.c, "plant.c")?;
    let d = match &scenario.plant.d {
        Some(d) => to_matrix(d, "plant.d")?,
        None => DMatrix::zeros(c.nrows(), b.ncols()),
    };
    let n = a.nrows();
    let (m_dim, p_dim) = (c.nrows(), b.ncols());
    let plant_sys = StateSpaceSystem::new(a, b, c, d).map_err(HarnessError::from_core)?;
    if horizon <= 10 * n {
        return Err(HarnessError::Validation(format!(
            "horizon {horizon} too short: need more than 10*n = {}",
            10 * n
        )));
    }

    let sigma_w = to_matrix(&scenario.plant.sigma_w, "plant.sigma_w")?;
    let sigma_v = to_matrix(&scenario.plant.sigma_v, "plant.sigma_v")?;
    let s = match &scenario.plant.s {
        Some(s) => to_matrix(s, "plant.s")?,
        None => DMatrix::zeros(n, m_dim),
    };
    let pi0 = match &scenario.plant.pi0 {
        Some(p) => to_matrix(p, "plant.pi0")?,
        None => DMatrix::zeros(n, n),
    };
    let noise =
        NoiseSpec::new(sigma_w, sigma_v, s, pi0).map_err(HarnessError::from_core)?;

    let x0_mode = match &scenario.plant.x0 {
        X0Config::Zero => X0Mode::Zero,
        X0Config::Sampled => X0Mode::SampledFromPi0,
        X0Config::Fixed(v) => X0Mode::Fixed(DVector::from_vec(v.clone())),
    };
    let plant_spec = PlantSpec::new(plant_sys.clone(), noise.clone(), x0_mode)
        .map_err(HarnessError::from_core)?;

    let f0 = match &scenario.controller.feedback {
        FeedbackConfig::Weights { q_weight, r_weight } => feedback_gain(
            plant_sys.a(),
            plant_sys.b(),
            &(DMatrix::identity(n, n) * *q_weight),
            &(DMatrix::identity(p_dim, p_dim) * *r_weight),
        )
        .map_err(HarnessError::from_core)?,
        FeedbackConfig::Explicit(rows) => to_matrix(rows, "controller.feedback")?,
    };
    let kalman = kalman_gain(plant_sys.a(), plant_sys.c(), &noise)
        .map_err(HarnessError::from_core)?;
    let l0 = match &scenario.controller.observer {
        ObserverConfig::Kalman => kalman.l_k.clone(),
        ObserverConfig::Explicit(rows) => to_matrix(rows, "controller.observer")?,
    };
    let q = match &scenario.controller.youla {
        YoulaConfig::Zero => None,
        YoulaConfig::Explicit { a, b, c, d } => Some(
            StateSpaceSystem::new(
                to_matrix(a, "youla.a")?,
                to_matrix(b, "youla.b")?,
                to_matrix(c, "youla.c")?,
                to_matrix(d, "youla.d")?,
            )
            .map_err(HarnessError::from_core)?,
        ),
    };
    let factors =
        coprime_factors(&plant_sys, &f0, &l0).map_err(HarnessError::from_core)?;
    let controller = ControllerConfig {
        f0: f0.clone(),
        l0: l0.clone(),
        q,
        factors,
    };
    controller
        .validate(&plant_sys)
        .map_err(HarnessError::from_core)?;

    let bank_seed = scenario.gain_bank.seed.unwrap_or(scenario.seed ^ SALT_BANK);
    let bank = build_gain_bank(
        &plant_sys,
        f0,
        l0,
        scenario.gain_bank.kappa,
        bank_seed,
        scenario.gain_bank.dwell_min,
        scenario.gain_bank.perturbation_scale,
        horizon,
    )
    .map_err(HarnessError::from_core)?;

    // Reference dimension check.
    match &scenario.reference {
        Reference::Constant(v) if v.len() != p_dim => {
            return Err(HarnessError::Validation(format!(
                "reference dimension {} does not match plant inputs {p_dim}",
                v.len()
            )));
        }
        Reference::Sine { amplitude, .. } if amplitude.len() != p_dim => {
            return Err(HarnessError::Validation(format!(
                "reference dimension {} does not match plant inputs {p_dim}",
                amplitude.len()
            )));
        }
        _ => {}
    }

    // Attack entries: channel/scheme compatibility, windows within horizon.
    let allowed: &[ChannelName] = match scenario.scheme {
        Scheme::Baseline => &[ChannelName::Au, ChannelName::Ay],
        Scheme::SchemeA => &[ChannelName::Au, ChannelName::Ay, ChannelName::Aren],
        Scheme::SchemeB => &[ChannelName::Agamma, ChannelName::Ar0, ChannelName::Abeta],
    };
    let mut attack_entries = Vec::new();
    for (i, atk) in scenario.attacks.iter().enumerate() {
        if !allowed.contains(&atk.channel) {
            return Err(HarnessError::Validation(format!(
                "attacks[{i}]: channel {:?} is not part of scheme {}",
                atk.channel,
                scenario.scheme.as_str()
            )));
        }
        let window = ActiveWindow::new(atk.window[0], atk.window[1])
            .map_err(HarnessError::from_core)?;
        if window.end > horizon {
            return Err(HarnessError::Validation(format!(
                "attacks[{i}]: window [{}, {}) exceeds horizon {horizon}",
                window.start, window.end
            )));
        }
        let kind = match &atk.generator {
            GeneratorConfig::Additive { signal } => AttackKind::Additive(signal.to_core()),
            GeneratorConfig::ZeroDynamics {
                amplitude,
                phase,
                z0,
                match_x0,
                saturation_steps,
            } => AttackKind::ZeroDynamics {
                amplitude: *amplitude,
                phase: *phase,
                z0: z0.map(|c| Complex64::new(c[0], c[1])),
                match_x0: *match_x0,
                saturation_steps: *saturation_steps,
            },
            GeneratorConfig::CovertInput { signal } => AttackKind::CovertInput(signal.to_core()),
            GeneratorConfig::CovertOutput => AttackKind::CovertOutput,
            GeneratorConfig::Replay { record_start } => AttackKind::Replay {
                record_start: *record_start,
            },
            GeneratorConfig::OmniscientMask => AttackKind::OmniscientMask,
        };
        attack_entries.push(AttackEntry {
            channel: atk.channel.to_core(),
            window,
            kind,
        });
    }

    // Validate the compiled set once (pairings, replay windows, feasibility).
    let attack_seed = scenario.seed ^ SALT_ATTACK;
    let dim_of = |ch: Channel| match ch {
        Channel::Ay | Channel::Ar0 => m_dim,
        _ => p_dim,
    };
    kernelguard_core::attacks::AttackSet::compile(
        &attack_entries,
        &plant_sys,
        dim_of,
        Some(&bank),
        attack_seed,
    )
    .map_err(HarnessError::from_core)?;

    Ok(Built {
        scenario: scenario.clone(),
        plant_sys,
        plant_spec,
        controller,
        kalman,
        bank,
        attack_entries,
        horizon,
        plant_seed: scenario.seed ^ SALT_PLANT,
        attack_seed,
    })
}

impl Built {
    pub fn dim_of(&self, ch: Channel) -> usize {
        match ch {
            Channel::Ay | Channel::Ar0 => self.plant_sys.n_outputs(),
            _ => self.plant_sys.n_inputs(),
        }
    }

    /// Earliest attack onset, if any attack is configured.
    pub fn attack_onset(&self) -> Option<usize> {
        self.attack_entries.iter().map(|e| e.window.start).min()
    }
}
