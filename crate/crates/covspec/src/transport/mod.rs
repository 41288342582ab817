//! Message fabrics between the device and edge roles: a deterministic
//! in-process loopback and a real stream-socket pair. Both move the exact
//! bytes the codec produces, so simulation cannot diverge from the wire.

mod loopback;
mod socket;

pub use loopback::{loopback_pair, LoopbackEndpoint};
pub use socket::{Hello, SocketEndpoint, HELLO_BYTES, PROTOCOL_VERSION};

use crate::comm::codec::Message;
use crate::error::Result;

/// Which protocol role an endpoint hosts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Device,
    Edge,
}

/// A message endpoint. One device and one edge per session; one in-flight
/// verification request at a time.
pub trait Endpoint {
    fn send(&mut self, msg: &Message) -> Result<()>;
    /// Blocking receive.
    fn recv(&mut self) -> Result<Message>;
    /// Non-blocking check for a delivered message, used by branch
    /// planning to notice verification arrival at token boundaries.
    fn poll(&mut self) -> Result<Option<Message>>;
}

/// Discrete-event virtual clock: monotone time plus an ordered queue of
/// (delivery time, message) events, FIFO within equal times.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now_s: f64,
    seq: u64,
    // (time, insertion sequence, message), kept sorted.
    pending: Vec<(f64, u64, Message)>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now_s(&self) -> f64 {
        self.now_s
    }

    /// Moves time forward; backward movement is a logic error.
    pub fn advance(&mut self, dt_s: f64) {
        assert!(dt_s >= 0.0, "virtual clock cannot move backward");
        self.now_s += dt_s;
    }

    pub fn advance_to(&mut self, t_s: f64) {
        assert!(t_s >= self.now_s, "virtual clock cannot move backward");
        self.now_s = t_s;
    }

    /// Schedules a message for delivery at absolute time `at_s`.
    pub fn schedule(&mut self, at_s: f64, msg: Message) {
        assert!(at_s >= self.now_s, "cannot deliver in the past");
        let seq = self.seq;
        self.seq += 1;
        let idx = self
            .pending
            .partition_point(|(t, s, _)| (*t, *s) <= (at_s, seq));
        self.pending.insert(idx, (at_s, seq, msg));
    }

    /// Delivers the earliest pending event, advancing time to it.
    pub fn pop(&mut self) -> Option<Message> {
        if self.pending.is_empty() {
            return None;
        }
        let (t, _, msg) = self.pending.remove(0);
        self.advance_to(t);
        Some(msg)
    }

    /// Delivery time of the next pending event, if any.
    pub fn peek_time(&self) -> Option<f64> {
        self.pending.first().map(|(t, _, _)| *t)
    }
}
