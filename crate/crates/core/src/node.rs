//! A protocol-running node: one layer stack per General, plus the sending
//! rules when the node is itself a General.

use std::collections::BTreeMap;

use crate::agreement::{AgreementInstance, BroadcastRequest, GeneralState, Phase};
use crate::broadcast::BroadcastInstance;
use crate::constants::ProtocolConstants;
use crate::effects::Effects;
use crate::initiator::InitiatorInstance;
use crate::message::{Envelope, MsgKind, NodeId, ProtocolMessage, Round, Value};
use crate::time::LocalTime;
use crate::trace::EventKind;

/// Which layers a node runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Initiator, agreement and broadcast.
    Full,
    /// Broadcast only, with anchors supplied from outside.
    BroadcastOnly,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stack {
    pub initiator: InitiatorInstance,
    pub broadcast: BroadcastInstance,
    pub agreement: AgreementInstance,
}

impl Stack {
    pub fn new(c: &ProtocolConstants, owner: NodeId, g: NodeId) -> Self {
        Stack {
            initiator: InitiatorInstance::new(c, owner, g),
            broadcast: BroadcastInstance::new(owner, g),
            agreement: AgreementInstance::new(owner, g),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    pub mode: Mode,
    pub stacks: BTreeMap<NodeId, Stack>,
    pub general: GeneralState,
}

impl Node {
    pub fn new(id: NodeId, mode: Mode) -> Self {
        Node { id, mode, stacks: BTreeMap::new(), general: GeneralState::default() }
    }

    pub fn stack(&mut self, c: &ProtocolConstants, g: NodeId) -> &mut Stack {
        let id = self.id;
        self.stacks.entry(g).or_insert_with(|| Stack::new(c, id, g))
    }

    fn valid(c: &ProtocolConstants, env: &Envelope) -> bool {
        let n = c.n as u32;
        env.sender.0 < n
            && env.msg.general().0 < n
            && env.msg.triple_tag().map_or(true, |(p, _)| p.0 < n)
    }

    /// Handles one delivered message.
    pub fn on_message(&mut self, c: &ProtocolConstants, env: &Envelope, now: LocalTime) -> Effects {
        let mut eff = Effects::default();
        if !Self::valid(c, env) {
            return eff;
        }
        let g = env.msg.general();
        let kind = env.msg.kind();
        if kind.is_broadcast() {
            self.stack(c, g).broadcast.on_message(c, env, now, &mut eff);
        } else if self.mode == Mode::Full {
            match &env.msg {
                ProtocolMessage::Initiator { m, .. } => {
                    if env.sender == g && !self.stack(c, g).initiator.ignoring(m, now) {
                        let ok = self.stack(c, g).initiator.invoke(c, m, now, &mut eff);
                        eff.event(EventKind::Invoke { g, m: m.clone(), ok });
                        if g == self.id {
                            self.general.on_own_invoke(m, now);
                        }
                    }
                }
                _ => {
                    debug_assert!(matches!(kind, MsgKind::Support | MsgKind::Approve | MsgKind::Ready));
                    self.stack(c, g).initiator.on_message(c, env, now, &mut eff);
                }
            }
        }
        self.settle(c, g, now, &mut eff);
        eff
    }

    /// Routes i-accepts and broadcast accepts into the agreement layer until
    /// nothing new is produced.
    fn settle(&mut self, c: &ProtocolConstants, g: NodeId, now: LocalTime, eff: &mut Effects) {
        let mut seen_events = 0;
        loop {
            self.watch_own_lines(eff, &mut seen_events);
            let iaccepts = std::mem::take(&mut eff.iaccepts);
            let accepts = std::mem::take(&mut eff.accepts);
            if iaccepts.is_empty() && accepts.is_empty() {
                break;
            }
            if self.mode != Mode::Full {
                continue;
            }
            let stack = self.stack(c, g);
            for (m, anchor) in iaccepts {
                if stack.agreement.phase == Phase::Returned {
                    continue;
                }
                stack.broadcast.set_anchor(c, anchor, now, eff);
                let b = stack.broadcast.broadcasters.len();
                if let Some(req) = stack.agreement.on_iaccept(c, m, anchor, now, b, eff) {
                    Self::broadcast(stack, req, eff);
                }
            }
            for (p, m, k) in accepts {
                if let Some(req) = stack.agreement.on_accept(c, p, m, k, now, eff) {
                    Self::broadcast(stack, req, eff);
                }
            }
        }
        self.watch_own_lines(eff, &mut seen_events);
    }

    fn broadcast(stack: &mut Stack, req: BroadcastRequest, eff: &mut Effects) {
        stack.broadcast.invoke(req.m, req.k, eff);
    }

    /// Feeds the General's own line markers to its completion deadlines.
    fn watch_own_lines(&mut self, eff: &Effects, seen: &mut usize) {
        for e in &eff.events[*seen..] {
            if let EventKind::Line { g, m, line } = e {
                if *g == self.id {
                    self.general.on_line(m, *line);
                }
            }
        }
        *seen = eff.events.len();
    }

    /// Periodic housekeeping and re-evaluation.
    pub fn on_tick(&mut self, c: &ProtocolConstants, now: LocalTime) -> Effects {
        let mut eff = Effects::default();
        let gs: Vec<NodeId> = self.stacks.keys().copied().collect();
        for g in gs {
            let mode = self.mode;
            let stack = self.stack(c, g);
            stack.initiator.cleanup(c, now);
            stack.broadcast.cleanup(c, now, &mut eff);
            if stack.agreement.cleanup(c, now) {
                stack.initiator.reset_execution();
                eff.event(EventKind::Reset { g });
            }
            if mode == Mode::Full {
                stack.initiator.on_tick(c, now, &mut eff);
                let b = stack.broadcast.broadcasters.len();
                if let Some(req) = stack.agreement.step(c, now, b, &mut eff) {
                    Self::broadcast(stack, req, &mut eff);
                }
            }
            self.settle(c, g, now, &mut eff);
        }
        self.general.cleanup(c, now);
        if let Some((m, line)) = self.general.check(c, now) {
            let until = self.general.blocked_until.expect("set on a missed deadline");
            eff.event(EventKind::SelfCheckFailed { g: self.id, m, line, blocked_until: until });
        }
        eff
    }

    /// The General starts an agreement on `m`, subject to its sending rules.
    pub fn initiate(&mut self, c: &ProtocolConstants, m: &Value, now: LocalTime) -> Effects {
        let mut eff = Effects::default();
        let g = self.id;
        self.general.cleanup(c, now);
        match self.general.initiate(c, m, now) {
            Ok(()) => {
                self.stack(c, g).initiator.log.clear();
                eff.send_all(ProtocolMessage::Initiator { g, m: m.clone() });
                eff.event(EventKind::GeneralInitiate { g, m: m.clone() });
            }
            Err(crit) => {
                eff.event(EventKind::GeneralReject { g, m: m.clone(), criterion: crit.label().into() });
            }
        }
        eff
    }

    /// Sets the broadcast anchor directly (broadcast-only runs).
    pub fn set_broadcast_anchor(&mut self, c: &ProtocolConstants, g: NodeId, anchor: LocalTime, now: LocalTime) -> Effects {
        let mut eff = Effects::default();
        self.stack(c, g).broadcast.set_anchor(c, anchor, now, &mut eff);
        self.settle(c, g, now, &mut eff);
        eff
    }

    /// Starts a broadcast directly (broadcast-only runs).
    pub fn bm_invoke(&mut self, c: &ProtocolConstants, g: NodeId, m: Value, k: Round, now: LocalTime) -> Effects {
        let mut eff = Effects::default();
        self.stack(c, g).broadcast.invoke(m, k, &mut eff);
        self.settle(c, g, now, &mut eff);
        eff
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::derive_constants;
    use crate::effects::Dest;
    use crate::time::Span;
    use num_rational::Ratio;

    fn consts() -> ProtocolConstants {
        derive_constants(4, 1, Span(1000), Span(900), Span(100), Ratio::from_integer(0)).unwrap()
    }

    fn at(x: f64) -> LocalTime {
        LocalTime((x * 1000.0).round() as u64 + 77)
    }

    /// Delivers every send to every node instantly, in FIFO order.
    fn instant_run(nodes: &mut [Node], c: &ProtocolConstants, first: Effects, from: NodeId, now: LocalTime) -> Vec<(NodeId, EventKind)> {
        let mut queue: std::collections::VecDeque<(NodeId, Effects)> = [(from, first)].into();
        let mut events = Vec::new();
        while let Some((src, eff)) = queue.pop_front() {
            events.extend(eff.events.iter().cloned().map(|e| (src, e)));
            for (dest, msg) in eff.sends {
                assert_eq!(dest, Dest::All);
                for n in nodes.iter_mut() {
                    let env = Envelope { sender: src, msg: msg.clone() };
                    let out = n.on_message(c, &env, now);
                    queue.push_back((n.id, out));
                }
            }
        }
        events
    }

    #[test]
    fn zero_delay_agreement() {
        let c = consts();
        let mut nodes: Vec<Node> = (0..4).map(|i| Node::new(NodeId(i), Mode::Full)).collect();
        let now = at(100.0);
        let first = nodes[0].initiate(&c, &"m".into(), now);
        let events = instant_run(&mut nodes, &c, first, NodeId(0), now);
        let decides: Vec<_> = events
            .iter()
            .filter_map(|(n, e)| match e {
                EventKind::Decide { m, block, anchor, .. } => Some((*n, m.clone(), block.clone(), *anchor)),
                _ => None,
            })
            .collect();
        assert_eq!(decides.len(), 4, "{decides:?}");
        for (_, m, block, anchor) in decides {
            assert_eq!(m, Value::from("m"));
            assert_eq!(block, "R");
            assert_eq!(anchor, now.minus(c.d));
        }
        let eff = nodes[0].on_tick(&c, now);
        assert!(!eff.events.iter().any(|e| matches!(e, EventKind::SelfCheckFailed { .. })));
        assert!(nodes[0].general.pending.is_none(), "own deadlines satisfied");
    }

    #[test]
    fn initiator_from_non_general_is_ignored() {
        let c = consts();
        let mut n = Node::new(NodeId(1), Mode::Full);
        let env = Envelope { sender: NodeId(2), msg: ProtocolMessage::Initiator { g: NodeId(0), m: "m".into() } };
        assert!(n.on_message(&c, &env, at(1.0)).is_empty());
    }

    #[test]
    fn out_of_range_ids_are_dropped() {
        let c = consts();
        let mut n = Node::new(NodeId(1), Mode::Full);
        let env = Envelope { sender: NodeId(9), msg: ProtocolMessage::Support { g: NodeId(0), m: "m".into() } };
        assert!(n.on_message(&c, &env, at(1.0)).is_empty());
        assert!(n.stacks.is_empty());
    }

    #[test]
    fn reset_three_d_after_return() {
        let c = consts();
        let mut nodes: Vec<Node> = (0..4).map(|i| Node::new(NodeId(i), Mode::Full)).collect();
        let now = at(100.0);
        let first = nodes[0].initiate(&c, &"m".into(), now);
        instant_run(&mut nodes, &c, first, NodeId(0), now);
        let eff = nodes[1].on_tick(&c, at(102.9));
        assert!(!eff.events.iter().any(|e| matches!(e, EventKind::Reset { .. })));
        let eff = nodes[1].on_tick(&c, at(103.0));
        assert!(eff.events.iter().any(|e| matches!(e, EventKind::Reset { .. })));
        let st = &nodes[1].stacks[&NodeId(0)];
        assert_eq!(st.agreement.phase, Phase::Idle);
        assert!(st.initiator.last_g.current().is_some());
        assert!(st.broadcast.anchor.is_some(), "broadcast keeps relaying until its own horizon");
    }
}
