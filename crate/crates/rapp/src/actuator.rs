//! Actuator: ships decisions to the O-DU and waits for the ACK.

use std::thread;
use std::time::Duration;

use prbcast_o1::{AllocationSender, O1Message, Payload};
use serde::{Deserialize, Serialize};

use crate::policy::Decision;
use crate::{RappError, Result};

/// Anything that can deliver an allocation and return its ACK.
pub trait AllocationSink: Send + Sync {
    fn send_allocation(&self, msg: &O1Message) -> prbcast_o1::Result<O1Message>;
}

impl AllocationSink for AllocationSender {
    fn send_allocation(&self, msg: &O1Message) -> prbcast_o1::Result<O1Message> {
        AllocationSender::send_allocation(self, msg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff_ms: 100,
        }
    }
}

/// The PRB_ALLOCATION frame for `d`. Its `msg_id` is the decision id, so a
/// retransmission is recognisable as the same allocation.
pub fn allocation_message(d: &Decision) -> O1Message {
    O1Message::new(
        d.decision_id,
        &d.tenant_id,
        d.forecast_start,
        Payload::Allocation {
            forecast_start: d.forecast_start,
            prbs: d.prbs.clone(),
        },
    )
}

/// Sends `d`, retrying failed attempts with doubling backoff. Returns the
/// ACK and the number of attempts used.
pub fn actuate(d: &Decision, sink: &dyn AllocationSink, retry: RetryPolicy) -> Result<(O1Message, u32)> {
    let msg = allocation_message(d);
    let attempts = retry.attempts.max(1);
    let mut backoff = Duration::from_millis(retry.initial_backoff_ms);
    let mut last = String::new();
    for attempt in 1..=attempts {
        match sink.send_allocation(&msg) {
            Ok(ack) => return Ok((ack, attempt)),
            Err(e) => last = e.to_string(),
        }
        if attempt < attempts {
            thread::sleep(backoff);
            backoff *= 2;
        }
    }
    Err(RappError::Actuation {
        decision_id: d.decision_id,
        attempts,
        last,
    })
}
