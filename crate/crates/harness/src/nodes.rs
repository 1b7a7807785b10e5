//! The two lockstep endpoints. Each node is single-threaded; all cross-node
//! interaction happens through channel frames.

use nalgebra::DVector;

use kernelguard_core::attacks::{AttackKind, BaselineChi2Detector, ZeroDynamicsAttack};
use kernelguard_core::detect_a;
use kernelguard_core::detect_b;
use kernelguard_core::loopsim::{Controller, NoisyPlant};

use crate::codec::{ChannelFrame, MsgType};
use crate::error::{HarnessError, Result};
use crate::scenario::{Built, Reference, Scheme};

/// Per-step monitor outcome feeding the CSV row.
#[derive(Debug, Clone)]
pub struct MonitorRow {
    pub j: f64,
    pub j_th: f64,
    pub alarm: bool,
    pub ru_norm: f64,
    pub r0k_norm: f64,
    pub mode: usize,
}

/// Plant-side endpoint: the physical plant plus the scheme's plant-side
/// computation (switched encoder or local controller/encoder).
pub struct PlantSideNode {
    scheme: Scheme,
    plant: NoisyPlant,
    encoder: Option<detect_a::Encoder>,
    bnode: Option<detect_b::PlantNode>,
    state_offset: Option<(usize, DVector<f64>)>,
    expect_k: u64,
}

impl PlantSideNode {
    pub fn build(built: &Built) -> Result<Self> {
        let plant = NoisyPlant::new(&built.plant_spec, built.plant_seed)?;
        let (encoder, bnode) = match built.scenario.scheme {
            Scheme::Baseline => (None, None),
            Scheme::SchemeA => (
                Some(detect_a::Encoder::new(&built.plant_sys, &built.bank)),
                None,
            ),
            Scheme::SchemeB => (
                None,
                Some(detect_b::PlantNode::new(&built.plant_sys, &built.bank)),
            ),
        };
        // The matched-x0 option of a zero-dynamics attack is applied on the
        // plant node (it offsets physical state, not a frame in flight).
        let mut state_offset = None;
        for entry in &built.attack_entries {
            if let AttackKind::ZeroDynamics {
                amplitude,
                phase,
                z0,
                match_x0: true,
                saturation_steps,
            } = &entry.kind
            {
                let gen = ZeroDynamicsAttack::new(
                    &built.plant_sys,
                    *z0,
                    *amplitude,
                    *phase,
                    *saturation_steps,
                    built.attack_seed,
                )?;
                state_offset = Some((entry.window.start, gen.matched_offset()));
            }
        }
        Ok(Self {
            scheme: built.scenario.scheme,
            plant,
            encoder,
            bnode,
            state_offset,
            expect_k: 0,
        })
    }

    /// Processes one inbound command frame and produces the reply frames.
    pub fn handle(&mut self, frame: &ChannelFrame) -> Result<Vec<ChannelFrame>> {
        if frame.k != self.expect_k {
            return Err(HarnessError::Transport(format!(
                "plant node desync: got step {}, expected {}",
                frame.k, self.expect_k
            )));
        }
        let k = frame.k as usize;
        let expected_type = match self.scheme {
            Scheme::Baseline | Scheme::SchemeA => MsgType::U,
            Scheme::SchemeB => MsgType::Gamma,
        };
        if frame.msg_type != expected_type {
            return Err(HarnessError::Transport(format!(
                "plant node: unexpected frame type {:?} at step {k}",
                frame.msg_type
            )));
        }
        if let Some((onset, dx)) = &self.state_offset {
            if *onset == k {
                self.plant.add_state_offset(dx);
            }
        }
        let inbound = DVector::from_vec(frame.payload.clone());
        let replies = match self.scheme {
            Scheme::Baseline => {
                let y = self.plant.step(&inbound)?;
                vec![ChannelFrame::new(MsgType::Y, frame.k, y.as_slice().to_vec())]
            }
            Scheme::SchemeA => {
                let y = self.plant.step(&inbound)?;
                let out = self.encoder.as_mut().unwrap().step(&inbound, &y);
                vec![
                    ChannelFrame::new(MsgType::Y, frame.k, y.as_slice().to_vec()),
                    ChannelFrame::new(MsgType::Ren, frame.k, out.r_en.as_slice().to_vec()),
                ]
            }
            Scheme::SchemeB => {
                let bnode = self.bnode.as_mut().unwrap();
                let u = bnode.command(&inbound);
                let y = self.plant.step(&u)?;
                let out = bnode.absorb(&y);
                vec![
                    ChannelFrame::new(MsgType::R0p, frame.k, out.r_0p.as_slice().to_vec()),
                    ChannelFrame::new(MsgType::Beta, frame.k, out.beta.as_slice().to_vec()),
                ]
            }
        };
        self.expect_k += 1;
        Ok(replies)
    }

    /// Frames a command step produces on the return path.
    pub fn replies_per_step(scheme: Scheme) -> usize {
        match scheme {
            Scheme::Baseline => 1,
            Scheme::SchemeA | Scheme::SchemeB => 2,
        }
    }
}

/// Monitor-side endpoint: controller/reference, detector and evaluation.
pub struct MonitorSideNode {
    scheme: Scheme,
    reference: Reference,
    p_dim: usize,
    ctrl: Option<Controller>,
    baseline: Option<BaselineChi2Detector>,
    decoder: Option<detect_a::Decoder>,
    bmon: Option<detect_b::MonitorNode>,
    j_th: f64,
}

impl MonitorSideNode {
    pub fn build(built: &Built) -> Result<Self> {
        let scheme = built.scenario.scheme;
        let alpha = built.scenario.alpha;
        let lambda = built.scenario.lambda;
        let j_th = kernelguard_core::stats::chi2_threshold(alpha, built.plant_sys.n_outputs());
        let mut node = Self {
            scheme,
            reference: built.scenario.reference.clone(),
            p_dim: built.plant_sys.n_inputs(),
            ctrl: None,
            baseline: None,
            decoder: None,
            bmon: None,
            j_th,
        };
        match scheme {
            Scheme::Baseline => {
                node.ctrl = Some(Controller::new(&built.plant_sys, &built.controller)?);
                node.baseline = Some(BaselineChi2Detector::new(
                    &built.plant_sys,
                    &built.kalman,
                    alpha,
                )?);
            }
            Scheme::SchemeA => {
                node.decoder = Some(detect_a::Decoder::new(
                    &built.plant_sys,
                    &built.controller,
                    &built.bank,
                    &built.kalman,
                    lambda,
                    alpha,
                )?);
            }
            Scheme::SchemeB => {
                node.bmon = Some(detect_b::MonitorNode::new(
                    &built.plant_sys,
                    &built.bank,
                    &built.kalman,
                    built.controller.q.clone(),
                    lambda,
                    alpha,
                )?);
            }
        }
        Ok(node)
    }

    /// Forms the outbound command frame for step `k`.
    pub fn command(&mut self, k: usize) -> Result<ChannelFrame> {
        let v = self.reference.value(k, self.p_dim);
        let frame = match self.scheme {
            Scheme::Baseline => {
                let u = self.ctrl.as_mut().unwrap().command(&v)?;
                ChannelFrame::new(MsgType::U, k as u64, u.as_slice().to_vec())
            }
            Scheme::SchemeA => {
                let u = self.decoder.as_mut().unwrap().command(&v)?;
                ChannelFrame::new(MsgType::U, k as u64, u.as_slice().to_vec())
            }
            Scheme::SchemeB => {
                let gamma = self.bmon.as_mut().unwrap().command(&v)?;
                ChannelFrame::new(MsgType::Gamma, k as u64, gamma.as_slice().to_vec())
            }
        };
        Ok(frame)
    }

    fn take(frames: &[ChannelFrame], msg: MsgType, k: usize) -> Result<DVector<f64>> {
        frames
            .iter()
            .find(|f| f.msg_type == msg && f.k == k as u64)
            .map(|f| DVector::from_vec(f.payload.clone()))
            .ok_or_else(|| {
                HarnessError::Transport(format!("monitor node: missing {msg:?} frame at step {k}"))
            })
    }

    /// Consumes the reply frames of step `k` and evaluates the detector.
    pub fn absorb(&mut self, k: usize, frames: &[ChannelFrame]) -> Result<MonitorRow> {
        match self.scheme {
            Scheme::Baseline => {
                let ya = Self::take(frames, MsgType::Y, k)?;
                let ctrl = self.ctrl.as_mut().unwrap();
                let frame = self
                    .baseline
                    .as_mut()
                    .unwrap()
                    .step(&ctrl.last_u().clone(), &ya);
                ctrl.absorb(&ya);
                Ok(MonitorRow {
                    j: frame.j,
                    j_th: self.j_th,
                    alarm: frame.alarm,
                    ru_norm: 0.0,
                    r0k_norm: frame.r.norm(),
                    mode: 0,
                })
            }
            Scheme::SchemeA => {
                let ya = Self::take(frames, MsgType::Y, k)?;
                let ren = Self::take(frames, MsgType::Ren, k)?;
                let frame = self.decoder.as_mut().unwrap().absorb(k, &ya, &ren)?;
                Ok(MonitorRow {
                    j: frame.j,
                    j_th: frame.j_th,
                    alarm: frame.alarm,
                    ru_norm: frame.r_u.norm(),
                    r0k_norm: frame.r_0k.norm(),
                    mode: frame.mode,
                })
            }
            Scheme::SchemeB => {
                let r0 = Self::take(frames, MsgType::R0p, k)?;
                let beta = Self::take(frames, MsgType::Beta, k)?;
                let out = self.bmon.as_mut().unwrap().absorb(k, &r0, &beta)?;
                Ok(MonitorRow {
                    j: out.frame.j,
                    j_th: out.frame.j_th,
                    alarm: out.frame.alarm,
                    ru_norm: out.frame.r_u.norm(),
                    r0k_norm: out.frame.r_0k.norm(),
                    mode: out.frame.mode,
                })
            }
        }
    }
}
