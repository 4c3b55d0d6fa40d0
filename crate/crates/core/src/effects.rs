//! What a protocol step asks the outside world to do.

use crate::message::{NodeId, ProtocolMessage, Round, Value};
use crate::time::LocalTime;
use crate::trace::EventKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dest {
    All,
    To(NodeId),
}

/// Output of a protocol step: messages to send, observable events, and
/// cross-layer notifications consumed by the owning node.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Effects {
    pub sends: Vec<(Dest, ProtocolMessage)>,
    pub events: Vec<EventKind>,
    /// `(p, m, k)` triples accepted by the broadcast layer.
    pub accepts: Vec<(NodeId, Value, Round)>,
    /// `(m, anchor)` produced by the initiator layer.
    pub iaccepts: Vec<(Value, LocalTime)>,
}

impl Effects {
    pub fn send_all(&mut self, msg: ProtocolMessage) {
        self.sends.push((Dest::All, msg));
    }

    pub fn event(&mut self, e: EventKind) {
        self.events.push(e);
    }

    pub fn is_empty(&self) -> bool {
        self.sends.is_empty() && self.events.is_empty() && self.accepts.is_empty() && self.iaccepts.is_empty()
    }
}
