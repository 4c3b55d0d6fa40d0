//! Message-driven reliable broadcast anchored at a local time estimate.
//!
//! One instance per (node, General). Messages are logged as they arrive;
//! the threshold blocks only run once an anchor is known. Rounds have
//! deadlines relative to the anchor, except the final relay block which is
//! untimed.

use std::collections::{BTreeMap, BTreeSet};

use crate::constants::ProtocolConstants;
use crate::effects::Effects;
use crate::history::{DupPolicy, TimestampedLog, Topic};
use crate::message::{Envelope, MsgKind, NodeId, ProtocolMessage, Round, Value};
use crate::time::{LocalTime, Span};
use crate::trace::EventKind;

/// Send and accept flags of one `(p, m, k)` triple.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TripleFlags {
    pub sent_echo: bool,
    pub sent_init_prime: bool,
    pub sent_echo_prime: bool,
    pub accepted: bool,
    pub detected: bool,
}

pub type Triple = (NodeId, Value, Round);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BroadcastInstance {
    pub owner: NodeId,
    pub g: NodeId,
    pub anchor: Option<LocalTime>,
    pub log: TimestampedLog,
    pub flags: BTreeMap<Triple, TripleFlags>,
    pub broadcasters: BTreeSet<NodeId>,
}

impl BroadcastInstance {
    pub fn new(owner: NodeId, g: NodeId) -> Self {
        BroadcastInstance {
            owner,
            g,
            anchor: None,
            log: TimestampedLog::new(DupPolicy::KeepFirst),
            flags: BTreeMap::new(),
            broadcasters: BTreeSet::new(),
        }
    }

    /// Sets the anchor and processes everything logged so far.
    ///
    /// Every anchor starts a new instance: flags and broadcasters are
    /// cleared and only messages from the last `3d` are kept, so nothing
    /// from an earlier execution is replayed.
    pub fn set_anchor(&mut self, c: &ProtocolConstants, anchor: LocalTime, now: LocalTime, eff: &mut Effects) {
        self.flags.clear();
        self.broadcasters.clear();
        self.log.prune(now, c.ds(3));
        self.anchor = Some(anchor);
        self.log.restamp(now);
        eff.event(EventKind::Anchor { g: self.g, anchor });
        let triples: BTreeSet<Triple> = self
            .log
            .topics()
            .filter_map(|(t, _)| Some((t.p?, t.m.clone(), t.k?)))
            .collect();
        for t in triples {
            self.evaluate(c, &t, now, eff);
        }
    }

    /// Drops the anchor and all derived state.
    pub fn reset(&mut self, eff: &mut Effects) {
        self.anchor = None;
        self.flags.clear();
        self.broadcasters.clear();
        self.log.clear();
        eff.event(EventKind::BcastReset { g: self.g });
    }

    /// Starts a broadcast of `(owner, m, k)`.
    pub fn invoke(&mut self, m: Value, k: Round, eff: &mut Effects) {
        let Some(anchor) = self.anchor else { return };
        eff.send_all(ProtocolMessage::BInit { g: self.g, p: self.owner, m: m.clone(), k });
        eff.event(EventKind::BmInvoke { g: self.g, m, k, anchor });
    }

    /// Logs a broadcast-layer message and runs the blocks for its triple.
    pub fn on_message(&mut self, c: &ProtocolConstants, env: &Envelope, now: LocalTime, eff: &mut Effects) {
        let Some((p, k)) = env.msg.triple_tag() else { return };
        if env.msg.general() != self.g || k < 1 || k as usize > c.f + 1 {
            return;
        }
        if env.msg.kind() == MsgKind::BInit && env.sender != p {
            return;
        }
        if !self.log.insert(env, now) {
            return;
        }
        if self.anchor.is_some() {
            self.evaluate(c, &(p, env.msg.value().clone(), k), now, eff);
        }
    }

    fn count(&self, kind: MsgKind, t: &Triple) -> usize {
        self.log.count(&Topic::triple(kind, self.g, t.0, t.1.clone(), t.2))
    }

    /// Runs the init, echo, init' and echo' blocks for one triple.
    pub fn evaluate(&mut self, c: &ProtocolConstants, t: &Triple, now: LocalTime, eff: &mut Effects) {
        let Some(anchor) = self.anchor else { return };
        let (p, m, k) = (t.0, t.1.clone(), t.2);
        let elapsed = now.since(anchor);
        let phase = |j: i64| -> Span { c.phi * j };
        let k64 = k as i64;
        let init = self.count(MsgKind::BInit, t) > 0;
        let echoes = self.count(MsgKind::BEcho, t);
        let init_primes = self.count(MsgKind::BInitPrime, t);
        let echo_primes = self.count(MsgKind::BEchoPrime, t);
        let g = self.g;
        let mut fl = self.flags.get(t).copied().unwrap_or_default();

        if elapsed <= phase(2 * k64) && init && !fl.sent_echo {
            fl.sent_echo = true;
            eff.send_all(ProtocolMessage::BEcho { g, p, m: m.clone(), k });
        }
        if elapsed <= phase(2 * k64 + 1) {
            if echoes >= c.weak() && !fl.sent_init_prime {
                fl.sent_init_prime = true;
                eff.send_all(ProtocolMessage::BInitPrime { g, p, m: m.clone(), k });
            }
            if echoes >= c.strong() && !fl.accepted {
                fl.accepted = true;
                eff.accepts.push((p, m.clone(), k));
                eff.event(EventKind::Accept { g, p, m: m.clone(), k, anchor });
            }
        }
        if elapsed <= phase(2 * k64 + 2) {
            if init_primes >= c.weak() && !fl.detected {
                fl.detected = true;
                if self.broadcasters.insert(p) {
                    eff.event(EventKind::Broadcaster { g, p, anchor });
                }
            }
            if init_primes >= c.strong() && !fl.sent_echo_prime {
                fl.sent_echo_prime = true;
                eff.send_all(ProtocolMessage::BEchoPrime { g, p, m: m.clone(), k });
            }
        }
        if echo_primes >= c.weak() && !fl.sent_echo_prime {
            fl.sent_echo_prime = true;
            eff.send_all(ProtocolMessage::BEchoPrime { g, p, m: m.clone(), k });
        }
        if echo_primes >= c.strong() && !fl.accepted {
            fl.accepted = true;
            eff.accepts.push((p, m.clone(), k));
            eff.event(EventKind::Accept { g, p, m, k, anchor });
        }
        if fl != TripleFlags::default() {
            self.flags.insert(t.clone(), fl);
        }
    }

    /// Removes messages older than `(2f+3)Φ` and an anchor that is in the
    /// future or older than that horizon.
    pub fn cleanup(&mut self, c: &ProtocolConstants, now: LocalTime, eff: &mut Effects) {
        let horizon = c.broadcast_horizon();
        self.log.prune(now, horizon);
        if let Some(a) = self.anchor {
            let age = now.since(a);
            if age.0 < 0 || age > horizon {
                self.anchor = None;
                self.flags.clear();
                self.broadcasters.clear();
                eff.event(EventKind::BcastReset { g: self.g });
            }
        }
    }
}
