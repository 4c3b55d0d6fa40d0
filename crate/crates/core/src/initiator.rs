//! The initiator primitive: turns a General's initiation into a common
//! candidate value and a bounded-skew local anchor at every correct node.
//!
//! Line markers (`K2`, `L2`, ...) are emitted every time the corresponding
//! block executes so the checker can reason about the internal schedule.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::constants::ProtocolConstants;
use crate::effects::Effects;
use crate::history::{DupPolicy, HistoryCell, TimestampedLog, Topic};
use crate::message::{Envelope, MsgKind, NodeId, ProtocolMessage, Value};
use crate::time::{LocalTime, Span};
use crate::trace::{EventKind, Line};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InitiatorInstance {
    pub owner: NodeId,
    pub g: NodeId,
    /// Recording time per value.
    pub recording: BTreeMap<Value, HistoryCell<LocalTime>>,
    /// Last time a block ran for `(g, m)`.
    pub last_gm: BTreeMap<Value, HistoryCell<LocalTime>>,
    /// Last i-accept time for `g`.
    pub last_g: HistoryCell<LocalTime>,
    /// Values whose ready flag is set, with the time it was last set.
    pub ready: BTreeMap<Value, LocalTime>,
    /// Supports sent recently, oldest first.
    pub support_sent: VecDeque<(LocalTime, Value)>,
    pub log: TimestampedLog,
    pub ignore_until: BTreeMap<Value, LocalTime>,
    /// Approve and ready messages already sent, with their send times.
    pub sent: BTreeMap<(MsgKind, Value), LocalTime>,
    /// The latest i-accept produced.
    pub anchor_out: Option<(Value, LocalTime)>,
}

impl InitiatorInstance {
    pub fn new(c: &ProtocolConstants, owner: NodeId, g: NodeId) -> Self {
        InitiatorInstance {
            owner,
            g,
            recording: BTreeMap::new(),
            last_gm: BTreeMap::new(),
            last_g: HistoryCell::new(Self::lookback(c)),
            ready: BTreeMap::new(),
            support_sent: VecDeque::new(),
            log: TimestampedLog::new(DupPolicy::KeepLatest),
            ignore_until: BTreeMap::new(),
            sent: BTreeMap::new(),
            anchor_out: None,
        }
    }

    /// Retained look-back of every history cell.
    pub fn lookback(c: &ProtocolConstants) -> Span {
        c.ds(2)
    }

    fn cell<'a>(
        map: &'a mut BTreeMap<Value, HistoryCell<LocalTime>>,
        c: &ProtocolConstants,
        m: &Value,
    ) -> &'a mut HistoryCell<LocalTime> {
        map.entry(m.clone()).or_insert_with(|| HistoryCell::new(Self::lookback(c)))
    }

    fn touch(&mut self, c: &ProtocolConstants, m: &Value, now: LocalTime) {
        Self::cell(&mut self.last_gm, c, m).set(now, Some(now));
    }

    fn line(&self, eff: &mut Effects, m: &Value, line: Line) {
        eff.event(EventKind::Line { g: self.g, m: m.clone(), line });
    }

    pub fn ignoring(&self, m: &Value, now: LocalTime) -> bool {
        self.ignore_until.get(m).is_some_and(|until| !now.after(*until))
    }

    /// Explicit invocation on receipt of the General's message. Returns true
    /// when the support was sent.
    pub fn invoke(&mut self, c: &ProtocolConstants, m: &Value, now: LocalTime, eff: &mut Effects) -> bool {
        let others_clear = self.recording.iter().all(|(v, cell)| v == m || cell.is_none());
        let quiet_g = self.last_g.is_none();
        let no_recent_support = self.support_sent.iter().all(|(at, _)| {
            let age = now.since(*at);
            age.0 < 0 || age > c.d
        });
        let gm_clear_before = self
            .last_gm
            .get(m)
            .map_or(true, |cell| cell.at(now, c.d).expect("d is within the look-back").is_none());
        if !(others_clear && quiet_g && no_recent_support && gm_clear_before) {
            return false;
        }
        Self::cell(&mut self.recording, c, m).set(now, Some(now.minus(c.d)));
        eff.send_all(ProtocolMessage::Support { g: self.g, m: m.clone() });
        self.support_sent.push_back((now, m.clone()));
        self.touch(c, m, now);
        self.line(eff, m, Line::K2);
        true
    }

    /// Logs an initiator-layer message and re-runs the blocks for its value.
    pub fn on_message(&mut self, c: &ProtocolConstants, env: &Envelope, now: LocalTime, eff: &mut Effects) {
        if !matches!(env.msg.kind(), MsgKind::Support | MsgKind::Approve | MsgKind::Ready) {
            return;
        }
        if env.msg.general() != self.g {
            return;
        }
        let m = env.msg.value().clone();
        if self.ignoring(&m, now) {
            return;
        }
        self.log.insert(env, now);
        self.evaluate(c, &m, now, eff);
    }

    fn topic(&self, kind: MsgKind, m: &Value) -> Topic {
        Topic::plain(kind, self.g, m.clone())
    }

    fn send_once(&mut self, kind: MsgKind, m: &Value, now: LocalTime, eff: &mut Effects) {
        if self.sent.contains_key(&(kind, m.clone())) {
            return;
        }
        self.sent.insert((kind, m.clone()), now);
        eff.send_all(kind.make(self.g, self.owner, m.clone(), 0));
    }

    /// Runs blocks L, M and N for one value.
    pub fn evaluate(&mut self, c: &ProtocolConstants, m: &Value, now: LocalTime, eff: &mut Effects) {
        if self.ignoring(m, now) {
            return;
        }
        // L1-L2
        let supports = self.topic(MsgKind::Support, m);
        if let Some(alpha) = self.log.shortest_window(&supports, now, c.weak()) {
            if alpha <= c.ds(4) {
                let candidate = now.minus(alpha).minus(c.ds(2));
                let cell = Self::cell(&mut self.recording, c, m);
                let next = match cell.current() {
                    Some(cur) => cur.max(candidate),
                    None => candidate,
                };
                cell.set(now, Some(next));
                self.touch(c, m, now);
                self.line(eff, m, Line::L2);
            }
        }
        // L3-L4
        if self.log.count_within(&supports, now, c.ds(2)) >= c.strong() {
            self.send_once(MsgKind::Approve, m, now, eff);
            self.touch(c, m, now);
            self.line(eff, m, Line::L4);
        }
        // M1-M4
        let approves = self.topic(MsgKind::Approve, m);
        if self.log.count_within(&approves, now, c.ds(5)) >= c.weak() {
            self.ready.insert(m.clone(), now);
            self.touch(c, m, now);
            self.line(eff, m, Line::M2);
        }
        if self.log.count_within(&approves, now, c.ds(3)) >= c.strong() {
            self.send_once(MsgKind::Ready, m, now, eff);
            self.touch(c, m, now);
            self.line(eff, m, Line::M4);
        }
        // N1-N4
        if !self.ready.contains_key(m) {
            return;
        }
        let readies = self.log.count(&self.topic(MsgKind::Ready, m));
        if readies >= c.weak() {
            self.send_once(MsgKind::Ready, m, now, eff);
            self.touch(c, m, now);
            self.line(eff, m, Line::N2);
        }
        // A quorum of Ready can outrun the Support messages; the accept
        // waits until the recording time exists.
        let recorded = self.recording.get(m).and_then(|cell| cell.current().copied());
        if let (true, Some(anchor)) = (readies >= c.strong(), recorded) {
            self.accept(c, m, anchor, now, eff);
        }
    }

    fn accept(&mut self, c: &ProtocolConstants, m: &Value, anchor: LocalTime, now: LocalTime, eff: &mut Effects) {
        for cell in self.recording.values_mut() {
            cell.set(now, None);
        }
        let g = self.g;
        self.log.remove_topics(|t| t.g == g && &t.m == m);
        self.ignore_until.insert(m.clone(), now.plus(c.ds(3)));
        self.sent.retain(|(_, v), _| v != m);
        self.line(eff, m, Line::N4);
        self.anchor_out = Some((m.clone(), anchor));
        eff.iaccepts.push((m.clone(), anchor));
        eff.event(EventKind::IAccept { g, m: m.clone(), anchor });
        self.touch(c, m, now);
        self.last_g.set(now, Some(now));
    }

    /// All values with logged messages or a ready flag.
    pub fn active_values(&self) -> BTreeSet<Value> {
        let mut vs: BTreeSet<Value> = self.log.topics().map(|(t, _)| t.m.clone()).collect();
        vs.extend(self.ready.keys().cloned());
        vs
    }

    /// Periodic re-evaluation of every active value.
    pub fn on_tick(&mut self, c: &ProtocolConstants, now: LocalTime, eff: &mut Effects) {
        for m in self.active_values() {
            self.evaluate(c, &m, now, eff);
        }
    }

    /// Decays old values and clears clearly wrong timestamps.
    pub fn cleanup(&mut self, c: &ProtocolConstants, now: LocalTime) {
        let fresh = |at: LocalTime, limit: Span| {
            let age = now.since(at);
            age.0 >= 0 && age <= limit
        };
        self.log.prune(now, c.d_rmv);
        for cell in self.recording.values_mut() {
            cell.prune(now);
            if let Some(rec) = cell.current() {
                if !fresh(*rec, c.d_rmv) {
                    cell.set(now, None);
                }
            }
        }
        self.ready.retain(|_, at| fresh(*at, c.d_rmv));
        self.sent.retain(|_, at| fresh(*at, c.d_rmv));
        self.ignore_until.retain(|_, until| {
            let left = until.since(now);
            left.0 >= 0 && left <= c.ds(3)
        });
        self.support_sent.retain(|(at, _)| fresh(*at, Self::lookback(c)));

        self.last_g.prune(now);
        if let Some(v) = self.last_g.current() {
            if !fresh(*v, c.d_zero - c.ds(6)) {
                self.last_g.set(now, None);
            }
        }
        for cell in self.last_gm.values_mut() {
            cell.prune(now);
            if let Some(v) = cell.current() {
                if !fresh(*v, c.d_rmv * 2 + c.ds(9)) {
                    cell.set(now, None);
                }
            }
        }
        let idle = |cell: &HistoryCell<LocalTime>| cell.is_none() && cell.changes().next().is_none();
        self.recording.retain(|_, cell| !idle(cell));
        self.last_gm.retain(|_, cell| !idle(cell));
        if let Some((_, a)) = &self.anchor_out {
            if !fresh(*a, c.d_rmv) {
                self.anchor_out = None;
            }
        }
    }

    /// True iff, `d` ago, no recording time was set and neither last-time
    /// variable held a value.
    pub fn freshness(&self, c: &ProtocolConstants, m: &Value, now: LocalTime) -> bool {
        let at = |cell: &HistoryCell<LocalTime>| cell.at(now, c.d).expect("d is within the look-back").is_none();
        self.recording.values().all(at) && self.last_gm.get(m).map_or(true, at) && at(&self.last_g)
    }

    /// Forgets the current execution but keeps the spacing variables
    /// (`last_g`, `last_gm`, sent supports).
    pub fn reset_execution(&mut self) {
        self.recording.clear();
        self.ready.clear();
        self.log.clear();
        self.ignore_until.clear();
        self.sent.clear();
        self.anchor_out = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::derive_constants;
    use num_rational::Ratio;

    fn consts() -> ProtocolConstants {
        derive_constants(4, 1, Span(1000), Span(900), Span(100), Ratio::from_integer(0)).unwrap()
    }

    fn at(x: f64) -> LocalTime {
        LocalTime((x * 1000.0).round() as u64 + 1_000_000)
    }

    fn inst() -> InitiatorInstance {
        InitiatorInstance::new(&consts(), NodeId(1), NodeId(0))
    }

    fn msg(kind: MsgKind, from: u32, m: &str) -> Envelope {
        Envelope { sender: NodeId(from), msg: kind.make(NodeId(0), NodeId(0), m.into(), 0) }
    }

    fn kinds(eff: &Effects) -> Vec<MsgKind> {
        eff.sends.iter().map(|(_, m)| m.kind()).collect()
    }

    fn lines(eff: &Effects) -> Vec<Line> {
        eff.events
            .iter()
            .filter_map(|e| match e {
                EventKind::Line { line, .. } => Some(*line),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn fresh_invoke_records_and_supports() {
        let c = consts();
        let mut i = inst();
        let mut eff = Effects::default();
        assert!(i.invoke(&c, &"m".into(), at(10.0), &mut eff));
        assert_eq!(i.recording[&Value::from("m")].current(), Some(&at(9.0)));
        assert_eq!(kinds(&eff), vec![MsgKind::Support]);
        assert_eq!(i.last_gm[&Value::from("m")].current(), Some(&at(10.0)));
    }

    #[test]
    fn invoke_blocked_by_last_g() {
        let c = consts();
        let mut i = inst();
        i.last_g.set(at(7.0), Some(at(7.0)));
        let mut eff = Effects::default();
        assert!(!i.invoke(&c, &"m".into(), at(10.0), &mut eff));
        assert!(eff.is_empty());
    }

    #[test]
    fn invoke_blocked_by_recent_support() {
        let c = consts();
        let mut i = inst();
        i.support_sent.push_back((at(9.5), "x".into()));
        let mut eff = Effects::default();
        assert!(!i.invoke(&c, &"m".into(), at(10.0), &mut eff));
    }

    #[test]
    fn invoke_blocked_by_other_recording() {
        let c = consts();
        let mut i = inst();
        InitiatorInstance::cell(&mut i.recording, &c, &"x".into()).set(at(9.0), Some(at(8.0)));
        assert!(!i.invoke(&c, &"m".into(), at(10.0), &mut Effects::default()));
    }

    #[test]
    fn invoke_reads_last_gm_one_d_ago() {
        let c = consts();
        let mut i = inst();
        // set after the look-back point: guard (d) still passes
        InitiatorInstance::cell(&mut i.last_gm, &c, &"m".into()).set(at(9.5), Some(at(9.5)));
        assert!(i.invoke(&c, &"m".into(), at(10.0), &mut Effects::default()));
        let mut j = inst();
        InitiatorInstance::cell(&mut j.last_gm, &c, &"m".into()).set(at(8.5), Some(at(8.5)));
        assert!(!j.invoke(&c, &"m".into(), at(10.0), &mut Effects::default()));
    }

    #[test]
    fn two_supports_set_recording_from_shortest_window() {
        let c = consts();
        let mut i = inst();
        let mut eff = Effects::default();
        i.on_message(&c, &msg(MsgKind::Support, 2, "m"), at(10.0), &mut eff);
        i.on_message(&c, &msg(MsgKind::Support, 3, "m"), at(13.5), &mut eff);
        assert_eq!(i.recording[&Value::from("m")].current(), Some(&at(8.0)));
        assert_eq!(lines(&eff), vec![Line::L2]);
    }

    #[test]
    fn three_supports_within_two_d_send_approve() {
        let c = consts();
        let mut i = inst();
        let mut eff = Effects::default();
        i.on_message(&c, &msg(MsgKind::Support, 0, "m"), at(10.0), &mut eff);
        i.on_message(&c, &msg(MsgKind::Support, 2, "m"), at(10.8), &mut eff);
        assert!(!kinds(&eff).contains(&MsgKind::Approve));
        i.on_message(&c, &msg(MsgKind::Support, 3, "m"), at(11.9), &mut eff);
        assert_eq!(kinds(&eff), vec![MsgKind::Approve]);
    }

    #[test]
    fn spread_supports_do_nothing() {
        let c = consts();
        let mut i = inst();
        let mut eff = Effects::default();
        i.on_message(&c, &msg(MsgKind::Support, 2, "m"), at(0.0), &mut eff);
        i.on_message(&c, &msg(MsgKind::Support, 3, "m"), at(10.0), &mut eff);
        assert!(eff.is_empty());
        assert!(i.recording.is_empty());
    }

    #[test]
    fn approve_thresholds() {
        let c = consts();
        let mut i = inst();
        let mut eff = Effects::default();
        i.on_message(&c, &msg(MsgKind::Approve, 0, "m"), at(10.0), &mut eff);
        i.on_message(&c, &msg(MsgKind::Approve, 2, "m"), at(11.0), &mut eff);
        assert!(i.ready.contains_key(&Value::from("m")));
        assert!(eff.sends.is_empty());
        i.on_message(&c, &msg(MsgKind::Approve, 3, "m"), at(12.0), &mut eff);
        assert_eq!(kinds(&eff), vec![MsgKind::Ready]);

        // three approves spread over 4d: ready flag only
        let mut j = inst();
        let mut eff = Effects::default();
        j.on_message(&c, &msg(MsgKind::Approve, 0, "m"), at(10.0), &mut eff);
        j.on_message(&c, &msg(MsgKind::Approve, 2, "m"), at(12.0), &mut eff);
        j.on_message(&c, &msg(MsgKind::Approve, 3, "m"), at(14.0), &mut eff);
        assert!(j.ready.contains_key(&Value::from("m")));
        assert!(eff.sends.is_empty());
    }

    #[test]
    fn ready_relay_and_accept() {
        let c = consts();
        let mut i = inst();
        i.ready.insert("m".into(), at(10.0));
        InitiatorInstance::cell(&mut i.recording, &c, &"m".into()).set(at(9.0), Some(at(8.0)));
        let mut eff = Effects::default();
        i.on_message(&c, &msg(MsgKind::Ready, 0, "m"), at(10.0), &mut eff);
        i.on_message(&c, &msg(MsgKind::Ready, 2, "m"), at(10.0), &mut eff);
        assert_eq!(kinds(&eff), vec![MsgKind::Ready]);
        i.on_message(&c, &msg(MsgKind::Ready, 3, "m"), at(10.5), &mut eff);
        assert_eq!(eff.iaccepts, vec![(Value::from("m"), at(8.0))]);
        assert!(i.recording.values().all(|c| c.is_none()));
        assert!(i.log.is_empty());
        assert_eq!(i.last_g.current(), Some(&at(10.5)));
        // messages for m are now ignored for 3d
        let mut eff = Effects::default();
        i.on_message(&c, &msg(MsgKind::Ready, 1, "m"), at(13.4), &mut eff);
        assert!(i.log.is_empty());
    }

    #[test]
    fn readies_without_flag_do_nothing() {
        let c = consts();
        let mut i = inst();
        let mut eff = Effects::default();
        for s in [0, 2, 3] {
            i.on_message(&c, &msg(MsgKind::Ready, s, "m"), at(10.0), &mut eff);
        }
        assert!(eff.is_empty());
    }

    #[test]
    fn ready_quorum_waits_for_recording_time() {
        let c = consts();
        let mut i = inst();
        i.ready.insert("m".into(), at(10.0));
        let mut eff = Effects::default();
        for s in [0, 2, 3] {
            i.on_message(&c, &msg(MsgKind::Ready, s, "m"), at(10.0), &mut eff);
        }
        assert!(eff.iaccepts.is_empty());
        i.on_message(&c, &msg(MsgKind::Support, 2, "m"), at(10.5), &mut eff);
        assert!(eff.iaccepts.is_empty());
        i.on_message(&c, &msg(MsgKind::Support, 3, "m"), at(10.75), &mut eff);
        // Two supports 0.25 apart: recording 10.75 - 0.25 - 2 = 8.5.
        assert_eq!(eff.iaccepts, vec![("m".into(), at(8.5))]);
    }

    #[test]
    fn cleanup_last_g_bounds() {
        let c = consts();
        for (age, kept) in [(8.0, false), (7.1, false), (7.0, true), (6.5, true), (-5.0, false)] {
            let mut i = inst();
            let now = at(100.0);
            let v = at(100.0 - age);
            i.last_g.set(now, Some(v));
            i.cleanup(&c, now);
            assert_eq!(i.last_g.current().is_some(), kept, "age {age}");
        }
    }

    #[test]
    fn cleanup_last_gm_bound() {
        let c = consts();
        for (age, kept) in [(84.0, false), (83.0, true)] {
            let mut i = inst();
            let now = at(200.0);
            InitiatorInstance::cell(&mut i.last_gm, &c, &"m".into()).set(now, Some(at(200.0 - age)));
            i.cleanup(&c, now);
            assert_eq!(i.last_gm.get(&Value::from("m")).and_then(|c| c.current()).is_some(), kept, "age {age}");
        }
    }

    #[test]
    fn cleanup_decays_messages_and_ready() {
        let c = consts();
        let mut i = inst();
        let mut eff = Effects::default();
        i.on_message(&c, &msg(MsgKind::Support, 2, "m"), at(0.0), &mut eff);
        i.ready.insert("m".into(), at(0.0));
        i.cleanup(&c, at(37.0));
        assert_eq!(i.log.len(), 1);
        i.cleanup(&c, at(37.5));
        assert!(i.log.is_empty());
        assert!(i.ready.is_empty());
    }

    #[test]
    fn freshness_cases() {
        let c = consts();
        let i = inst();
        assert!(i.freshness(&c, &"m".into(), at(10.0)));

        let mut j = inst();
        InitiatorInstance::cell(&mut j.recording, &c, &"x".into()).set(at(8.0), Some(at(7.0)));
        assert!(!j.freshness(&c, &"m".into(), at(10.0)));

        let mut k = inst();
        k.last_g.set(at(9.5), Some(at(9.5)));
        assert!(k.freshness(&c, &"m".into(), at(10.0)));
    }

    #[test]
    fn reset_keeps_spacing_variables() {
        let c = consts();
        let mut i = inst();
        let mut eff = Effects::default();
        i.invoke(&c, &"m".into(), at(10.0), &mut eff);
        i.last_g.set(at(11.0), Some(at(11.0)));
        i.reset_execution();
        assert!(i.recording.is_empty());
        assert!(i.last_g.current().is_some());
        assert!(i.last_gm.contains_key(&Value::from("m")));
    }
}
