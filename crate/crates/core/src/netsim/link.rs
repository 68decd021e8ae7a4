//! Emulated link impairments: latency, uniform jitter, Bernoulli loss and a
//! FIFO serialization queue for finite bandwidth.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kernel::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub latency_ms: f64,
    pub jitter_ms: f64,
    pub loss_prob: f64,
    pub bandwidth_bps: Option<f64>,
    pub reorder_allowed: bool,
}

impl LinkSpec {
    /// Intra-vehicle "cabling".
    pub fn sim_subnet() -> Self {
        LinkSpec {
            latency_ms: 0.2,
            jitter_ms: 0.0,
            loss_prob: 0.0,
            bandwidth_bps: None,
            reorder_allowed: false,
        }
    }

    /// Inter-vehicle / ground radio.
    pub fn air_subnet() -> Self {
        LinkSpec {
            latency_ms: 20.0,
            jitter_ms: 5.0,
            loss_prob: 0.05,
            bandwidth_bps: Some(1_000_000.0),
            reorder_allowed: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.latency_ms >= 0.0) || !self.latency_ms.is_finite() {
            return Err(format!("latency_ms must be >= 0, got {}", self.latency_ms));
        }
        if !(self.jitter_ms >= 0.0) || !self.jitter_ms.is_finite() {
            return Err(format!("jitter_ms must be >= 0, got {}", self.jitter_ms));
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(format!("loss_prob must lie in [0, 1], got {}", self.loss_prob));
        }
        if let Some(bw) = self.bandwidth_bps {
            if !(bw > 0.0) {
                return Err(format!("bandwidth_bps must be positive, got {bw}"));
            }
        }
        Ok(())
    }

    pub fn latency_ns(&self) -> u64 {
        (self.latency_ms * 1e6).round() as u64
    }
}

/// Per directed link state.
#[derive(Debug, Clone, Default)]
pub struct LinkState {
    busy_until: SimTime,
    last_delivery: SimTime,
    pub sent: u64,
    pub dropped: u64,
}

impl LinkState {
    /// Schedules one packet. Returns the delivery time, or `None` if lost.
    /// A lost packet still occupies the serializer.
    pub fn schedule(
        &mut self,
        spec: &LinkSpec,
        rng: &mut impl Rng,
        send_time: SimTime,
        payload_len: usize,
    ) -> Option<SimTime> {
        self.sent += 1;
        let lost = spec.loss_prob > 0.0 && rng.gen::<f64>() < spec.loss_prob;
        let jitter_ns = if spec.jitter_ms > 0.0 {
            (rng.gen::<f64>() * spec.jitter_ms * 1e6).round() as u64
        } else {
            0
        };
        let wire_done = match spec.bandwidth_bps {
            Some(bps) => {
                let ser_ns = ((payload_len as f64 * 8.0) / bps * 1e9).ceil() as u64;
                let start = self.busy_until.max(send_time);
                self.busy_until = start.plus_nanos(ser_ns);
                self.busy_until
            }
            None => send_time,
        };
        if lost {
            self.dropped += 1;
            return None;
        }
        let mut at = wire_done.plus_nanos(spec.latency_ns() + jitter_ns);
        if !spec.reorder_allowed {
            at = at.max(self.last_delivery);
        }
        self.last_delivery = self.last_delivery.max(at);
        Some(at)
    }
}
