//! Arbitrary-state injection: every protocol variable of a node is replaced
//! with random contents, including future timestamps and quorums of messages
//! that were never sent.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::agreement::{GeneralState, Phase, SelfCheck};
use crate::constants::ProtocolConstants;
use crate::history::{HistoryCell, Topic};
use crate::message::{MsgKind, NodeId, ProtocolMessage, Round, Value};
use crate::node::{Node, Stack};
use crate::time::{LocalTime, Span};
use crate::trace::Line;

/// Source of arbitrary values around a node's current clock reading.
pub struct Garbage<'a, R: Rng> {
    pub rng: &'a mut R,
    pub c: &'a ProtocolConstants,
    pub now: LocalTime,
    pub values: &'a [Value],
}

impl<R: Rng> Garbage<'_, R> {
    /// A stamp anywhere from `2Δ_stb` in the past to `Δ_stb` in the future.
    pub fn stamp(&mut self) -> LocalTime {
        let s = self.c.d_stb.0;
        self.now.plus(Span(self.rng.gen_range(-2 * s..=s)))
    }

    /// A stamp biased toward the recent past, where it can still matter.
    pub fn recent(&mut self) -> LocalTime {
        let r = self.c.d_rmv.0;
        self.now.plus(Span(self.rng.gen_range(-r..=self.c.d.0 * 4)))
    }

    fn any_stamp(&mut self) -> LocalTime {
        if self.rng.gen_bool(0.5) {
            self.recent()
        } else {
            self.stamp()
        }
    }

    fn maybe_stamp(&mut self) -> Option<LocalTime> {
        self.rng.gen_bool(0.5).then(|| self.any_stamp())
    }

    pub fn value(&mut self) -> Value {
        self.values.choose(self.rng).cloned().unwrap_or_else(|| Value::from("m"))
    }

    pub fn node(&mut self) -> NodeId {
        NodeId(self.rng.gen_range(0..self.c.n as u32))
    }

    fn round(&mut self) -> Round {
        self.rng.gen_range(1..=self.c.f as Round + 1)
    }

    fn senders(&mut self) -> Vec<NodeId> {
        let n = self.c.n;
        let want = if self.rng.gen_bool(0.4) { self.c.strong() } else { self.rng.gen_range(0..=n) };
        let mut all: Vec<NodeId> = (0..n as u32).map(NodeId).collect();
        all.shuffle(self.rng);
        all.truncate(want);
        all
    }

    fn cell(&mut self) -> HistoryCell<LocalTime> {
        let mut cell = HistoryCell::new(self.c.d * 2);
        let base = self.maybe_stamp();
        let changes = (0..self.rng.gen_range(0..3)).map(|_| (self.recent(), self.maybe_stamp())).collect();
        cell.overwrite(base, changes);
        cell
    }

    /// An arbitrary message, possibly attributed to any node.
    pub fn message(&mut self) -> ProtocolMessage {
        let kind = *MsgKind::ALL.choose(self.rng).expect("non-empty");
        let (g, p, m, k) = (self.node(), self.node(), self.value(), self.round());
        kind.make(g, p, m, k)
    }
}

/// Replaces every protocol variable of `node` with arbitrary contents.
pub fn corrupt_node<R: Rng>(node: &mut Node, gb: &mut Garbage<'_, R>) {
    let c = gb.c;
    let id = node.id;
    node.stacks.clear();
    for g in (0..c.n as u32).map(NodeId) {
        let mut st = Stack::new(c, id, g);
        corrupt_initiator(&mut st, g, gb);
        corrupt_broadcast(&mut st, g, gb);
        corrupt_agreement(&mut st, gb);
        node.stacks.insert(g, st);
    }
    node.general = corrupt_general(gb);
}

fn corrupt_initiator<R: Rng>(st: &mut Stack, g: NodeId, gb: &mut Garbage<'_, R>) {
    let ini = &mut st.initiator;
    for _ in 0..gb.rng.gen_range(0..3) {
        let v = gb.value();
        let cell = gb.cell();
        ini.recording.insert(v, cell);
    }
    for _ in 0..gb.rng.gen_range(0..3) {
        let v = gb.value();
        let cell = gb.cell();
        ini.last_gm.insert(v, cell);
    }
    ini.last_g = gb.cell();
    for _ in 0..gb.rng.gen_range(0..3) {
        let (v, t) = (gb.value(), gb.any_stamp());
        ini.ready.insert(v, t);
    }
    for _ in 0..gb.rng.gen_range(0..3) {
        let (t, v) = (gb.recent(), gb.value());
        ini.support_sent.push_back((t, v));
    }
    for _ in 0..gb.rng.gen_range(0..6) {
        let kind = *[MsgKind::Support, MsgKind::Approve, MsgKind::Ready].choose(gb.rng).expect("non-empty");
        let topic = Topic::plain(kind, g, gb.value());
        for s in gb.senders() {
            let t = gb.any_stamp();
            ini.log.insert_raw(topic.clone(), s, t);
        }
    }
    for _ in 0..gb.rng.gen_range(0..2) {
        let (v, t) = (gb.value(), gb.any_stamp());
        ini.ignore_until.insert(v, t);
    }
    for _ in 0..gb.rng.gen_range(0..4) {
        let kind = *[MsgKind::Support, MsgKind::Approve, MsgKind::Ready].choose(gb.rng).expect("non-empty");
        let (v, t) = (gb.value(), gb.any_stamp());
        ini.sent.insert((kind, v), t);
    }
    if gb.rng.gen_bool(0.3) {
        ini.anchor_out = Some((gb.value(), gb.any_stamp()));
    }
}

fn corrupt_broadcast<R: Rng>(st: &mut Stack, g: NodeId, gb: &mut Garbage<'_, R>) {
    let b = &mut st.broadcast;
    b.anchor = gb.maybe_stamp();
    for _ in 0..gb.rng.gen_range(0..6) {
        let kind = *[MsgKind::BInit, MsgKind::BEcho, MsgKind::BInitPrime, MsgKind::BEchoPrime].choose(gb.rng).expect("non-empty");
        let (p, m, k) = (gb.node(), gb.value(), gb.round());
        let topic = Topic::triple(kind, g, p, m, k);
        for s in gb.senders() {
            let t = gb.any_stamp();
            b.log.insert_raw(topic.clone(), s, t);
        }
    }
    for _ in 0..gb.rng.gen_range(0..4) {
        let key = (gb.node(), gb.value(), gb.round());
        let flags = b.flags.entry(key).or_default();
        flags.sent_echo = gb.rng.gen_bool(0.5);
        flags.sent_init_prime = gb.rng.gen_bool(0.5);
        flags.sent_echo_prime = gb.rng.gen_bool(0.5);
        flags.accepted = gb.rng.gen_bool(0.5);
        flags.detected = gb.rng.gen_bool(0.5);
    }
    for _ in 0..gb.rng.gen_range(0..3) {
        let p = gb.node();
        b.broadcasters.insert(p);
    }
}

fn corrupt_agreement<R: Rng>(st: &mut Stack, gb: &mut Garbage<'_, R>) {
    let a = &mut st.agreement;
    a.anchor = gb.maybe_stamp();
    a.phase = *[Phase::Idle, Phase::Anchored, Phase::Returned].choose(gb.rng).expect("non-empty");
    a.value = gb.rng.gen_bool(0.5).then(|| gb.value());
    a.candidate = gb.rng.gen_bool(0.5).then(|| gb.value());
    if gb.rng.gen_bool(0.3) {
        let v = gb.rng.gen_bool(0.5).then(|| gb.value());
        a.returned = Some((v, gb.any_stamp(), gb.any_stamp()));
    }
    for _ in 0..gb.rng.gen_range(0..4) {
        let key = (gb.value(), gb.round());
        let senders = gb.senders();
        a.accepted.entry(key).or_default().extend(senders);
    }
}

fn corrupt_general<R: Rng>(gb: &mut Garbage<'_, R>) -> GeneralState {
    let mut s = GeneralState {
        last_initiation: gb.maybe_stamp(),
        blocked_until: gb.maybe_stamp(),
        ..GeneralState::default()
    };
    for _ in 0..gb.rng.gen_range(0..3) {
        let (v, t) = (gb.value(), gb.any_stamp());
        s.last_per_value.insert(v, t);
    }
    if gb.rng.gen_bool(0.3) {
        let mut done = std::collections::BTreeSet::new();
        for l in [Line::L4, Line::M4, Line::N4] {
            if gb.rng.gen_bool(0.5) {
                done.insert(l);
            }
        }
        s.pending = Some(SelfCheck { m: gb.value(), sent_at: gb.any_stamp(), invoked_at: gb.maybe_stamp(), done });
    }
    s
}
