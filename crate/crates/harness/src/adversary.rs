//! Adversary layer: tampers frames in flight on the monitor-hosted channel
//! tap. Outbound (monitor -> plant) frames are tampered before send,
//! inbound (plant -> monitor) frames after receipt, so both transports see
//! the exact same arithmetic.

use nalgebra::DVector;

use kernelguard_core::attacks::{AttackSet, Channel};

use crate::codec::{ChannelFrame, MsgType};
use crate::error::Result;
use crate::scenario::Built;

pub struct Adversary {
    set: AttackSet,
}

impl Adversary {
    pub fn new(built: &Built) -> Result<Self> {
        let set = AttackSet::compile(
            &built.attack_entries,
            &built.plant_sys,
            |ch| built.dim_of(ch),
            Some(&built.bank),
            built.attack_seed,
        )?;
        Ok(Self { set })
    }

    fn out_channel(msg: MsgType) -> Option<Channel> {
        match msg {
            MsgType::U => Some(Channel::Au),
            MsgType::Gamma => Some(Channel::Agamma),
            _ => None,
        }
    }

    fn in_channel(msg: MsgType) -> Option<Channel> {
        match msg {
            MsgType::Y => Some(Channel::Ay),
            MsgType::Ren => Some(Channel::Aren),
            MsgType::R0p => Some(Channel::Ar0),
            MsgType::Beta => Some(Channel::Abeta),
            _ => None,
        }
    }

    /// Tampers a monitor-to-plant frame in place. Must run before the
    /// inbound tamper of the same step (actuator-side generators advance
    /// here).
    pub fn tamper_out(&mut self, k: usize, frame: &mut ChannelFrame) {
        if let Some(ch) = Self::out_channel(frame.msg_type) {
            let mut value = DVector::from_vec(std::mem::take(&mut frame.payload));
            self.set.tamper_plant_bound(k, ch, &mut value);
            frame.payload = value.as_slice().to_vec();
        }
    }

    /// Tampers a plant-to-monitor frame in place.
    pub fn tamper_in(&mut self, k: usize, frame: &mut ChannelFrame) {
        if let Some(ch) = Self::in_channel(frame.msg_type) {
            let mut value = DVector::from_vec(std::mem::take(&mut frame.payload));
            self.set.tamper_monitor_bound(k, ch, &mut value);
            frame.payload = value.as_slice().to_vec();
        }
    }

    pub fn active_at(&self, k: usize) -> bool {
        self.set.active_at(k)
    }
}
