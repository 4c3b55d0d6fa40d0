//! Agreement on top of the initiator and broadcast primitives, and the
//! General's sending rules.
//!
//! An instance becomes active when the initiator i-accepts. It then returns
//! exactly once: by deciding right away when the anchor is recent, by
//! deciding on a chain of accepted broadcasts, or by aborting.

use std::collections::{BTreeMap, BTreeSet};

use crate::constants::ProtocolConstants;
use crate::effects::Effects;
use crate::message::{NodeId, Round, Value};
use crate::time::{LocalTime, Span};
use crate::trace::{EventKind, Line};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Anchored,
    Returned,
}

/// A decided value together with the round the node must broadcast it in.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BroadcastRequest {
    pub m: Value,
    pub k: Round,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgreementInstance {
    pub owner: NodeId,
    pub g: NodeId,
    pub anchor: Option<LocalTime>,
    pub phase: Phase,
    pub value: Option<Value>,
    /// The value of the i-accept that set the anchor; only chains for it
    /// count.
    pub candidate: Option<Value>,
    /// `(value or null, anchor, local return time)`.
    pub returned: Option<(Option<Value>, LocalTime, LocalTime)>,
    /// Senders `p != g` of accepted `(p, m, i)`, per `(m, i)`.
    pub accepted: BTreeMap<(Value, Round), BTreeSet<NodeId>>,
}

impl AgreementInstance {
    pub fn new(owner: NodeId, g: NodeId) -> Self {
        AgreementInstance {
            owner,
            g,
            anchor: None,
            phase: Phase::Idle,
            value: None,
            candidate: None,
            returned: None,
            accepted: BTreeMap::new(),
        }
    }

    fn elapsed(&self, now: LocalTime) -> Option<Span> {
        self.anchor.map(|a| now.since(a))
    }

    fn decide(&mut self, m: Value, k: Round, block: &str, now: LocalTime, eff: &mut Effects) -> BroadcastRequest {
        let anchor = self.anchor.expect("decide requires an anchor");
        self.phase = Phase::Returned;
        self.value = Some(m.clone());
        self.returned = Some((Some(m.clone()), anchor, now));
        eff.event(EventKind::Decide { g: self.g, m: m.clone(), anchor, block: block.into() });
        BroadcastRequest { m, k }
    }

    fn abort(&mut self, block: &str, now: LocalTime, eff: &mut Effects) {
        let anchor = self.anchor.expect("abort requires an anchor");
        self.phase = Phase::Returned;
        self.returned = Some((None, anchor, now));
        eff.event(EventKind::Abort { g: self.g, anchor, block: block.into() });
    }

    /// Handles an i-accept. Returns the round-1 broadcast on an immediate decision.
    pub fn on_iaccept(
        &mut self,
        c: &ProtocolConstants,
        m: Value,
        anchor: LocalTime,
        now: LocalTime,
        broadcasters: usize,
        eff: &mut Effects,
    ) -> Option<BroadcastRequest> {
        if self.phase == Phase::Returned {
            return None;
        }
        self.anchor = Some(anchor);
        self.phase = Phase::Anchored;
        self.candidate = Some(m.clone());
        self.accepted.clear();
        // A correct General's invocations spread over d and each i-accept
        // can trail its own invocation by up to 4d, so 5d is the widest gap
        // between anchor and i-accept an honest run produces. It stays
        // below Φ, which is all the decision chain relies on.
        if now.since(anchor) <= c.ds(5) {
            return Some(self.decide(m, 1, "R", now, eff));
        }
        self.step(c, now, broadcasters, eff)
    }

    /// Records a broadcast accept and re-checks the chain rule.
    pub fn on_accept(
        &mut self,
        c: &ProtocolConstants,
        p: NodeId,
        m: Value,
        k: Round,
        now: LocalTime,
        eff: &mut Effects,
    ) -> Option<BroadcastRequest> {
        if self.phase != Phase::Anchored || p == self.g {
            return None;
        }
        self.accepted.entry((m, k)).or_default().insert(p);
        self.chain(c, now, eff)
    }

    /// Smallest `r` with a chain of `r` accepted broadcasts of the candidate
    /// value from distinct non-General senders, before that round's deadline.
    fn chain(&mut self, c: &ProtocolConstants, now: LocalTime, eff: &mut Effects) -> Option<BroadcastRequest> {
        let elapsed = self.elapsed(now)?;
        let values: BTreeSet<Value> =
            self.accepted.keys().map(|(m, _)| m.clone()).filter(|m| self.candidate.as_ref() == Some(m)).collect();
        for r in 1..=c.f as Round {
            if elapsed > c.phi * (2 * r as i64 + 1) {
                continue;
            }
            for m in &values {
                let rounds: Vec<Vec<NodeId>> = (1..=r)
                    .map(|i| {
                        self.accepted
                            .get(&(m.clone(), i))
                            .map(|s| s.iter().copied().collect())
                            .unwrap_or_default()
                    })
                    .collect();
                if distinct_representatives(&rounds) {
                    return Some(self.decide(m.clone(), r + 1, "S", now, eff));
                }
            }
        }
        None
    }

    /// Runs the chain rule and the two abort rules.
    pub fn step(
        &mut self,
        c: &ProtocolConstants,
        now: LocalTime,
        broadcasters: usize,
        eff: &mut Effects,
    ) -> Option<BroadcastRequest> {
        if self.phase != Phase::Anchored {
            return None;
        }
        if let Some(req) = self.chain(c, now, eff) {
            return Some(req);
        }
        let elapsed = self.elapsed(now)?;
        for r in 1..=c.f as i64 {
            if elapsed > c.phi * (2 * r + 1) && (broadcasters as i64) < r - 1 {
                self.abort("T", now, eff);
                return None;
            }
        }
        if elapsed > c.d_agr {
            self.abort("U", now, eff);
        }
        None
    }

    /// Age-based cleanup. Returns true when the node must also drop the
    /// initiator's execution state (three `d` after returning).
    pub fn cleanup(&mut self, c: &ProtocolConstants, now: LocalTime) -> bool {
        match self.phase {
            Phase::Returned => {
                let since = self.returned.as_ref().map(|(_, _, at)| now.since(*at)).unwrap_or(Span(-1));
                if since.0 < 0 || since >= c.ds(3) {
                    *self = AgreementInstance::new(self.owner, self.g);
                    return true;
                }
            }
            Phase::Anchored => {
                let age = self.elapsed(now).unwrap_or(Span(-1));
                if age.0 < 0 || age > c.agreement_horizon() {
                    *self = AgreementInstance::new(self.owner, self.g);
                }
            }
            Phase::Idle => {}
        }
        false
    }
}

/// Whether each round can be assigned a distinct sender from its set.
pub fn distinct_representatives(rounds: &[Vec<NodeId>]) -> bool {
    fn augment(
        i: usize,
        rounds: &[Vec<NodeId>],
        owner: &mut BTreeMap<NodeId, usize>,
        seen: &mut BTreeSet<NodeId>,
    ) -> bool {
        for &p in &rounds[i] {
            if !seen.insert(p) {
                continue;
            }
            let free = match owner.get(&p).copied() {
                None => true,
                Some(j) => augment(j, rounds, owner, seen),
            };
            if free {
                owner.insert(p, i);
                return true;
            }
        }
        false
    }
    let mut owner = BTreeMap::new();
    (0..rounds.len()).all(|i| augment(i, rounds, &mut owner, &mut BTreeSet::new()))
}

/// Which sending rule blocked an initiation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Criterion {
    /// Too soon after the previous initiation.
    Spacing,
    /// Too soon after the previous initiation with the same value.
    SameValue,
    /// Backing off after a failed initiation.
    Backoff,
}

impl Criterion {
    pub fn label(self) -> &'static str {
        match self {
            Criterion::Spacing => "IG1",
            Criterion::SameValue => "IG2",
            Criterion::Backoff => "IG3",
        }
    }
}

/// Completion deadlines of the General's own latest initiation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelfCheck {
    pub m: Value,
    pub sent_at: LocalTime,
    pub invoked_at: Option<LocalTime>,
    pub done: BTreeSet<Line>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GeneralState {
    pub last_initiation: Option<LocalTime>,
    pub last_per_value: BTreeMap<Value, LocalTime>,
    pub blocked_until: Option<LocalTime>,
    pub pending: Option<SelfCheck>,
}

impl GeneralState {
    /// Applies the sending rules; on success records the initiation and arms
    /// the completion deadlines.
    pub fn initiate(&mut self, c: &ProtocolConstants, m: &Value, now: LocalTime) -> Result<(), Criterion> {
        if let Some(last) = self.last_initiation {
            if now.since(last) < c.d_zero {
                return Err(Criterion::Spacing);
            }
        }
        if let Some(last) = self.last_per_value.get(m) {
            if now.since(*last) < c.d_val {
                return Err(Criterion::SameValue);
            }
        }
        if let Some(until) = self.blocked_until {
            if now.before(until) {
                return Err(Criterion::Backoff);
            }
        }
        self.last_initiation = Some(now);
        self.last_per_value.insert(m.clone(), now);
        self.pending = Some(SelfCheck { m: m.clone(), sent_at: now, invoked_at: None, done: BTreeSet::new() });
        Ok(())
    }

    /// Notes the General's own invocation of its initiation.
    pub fn on_own_invoke(&mut self, m: &Value, now: LocalTime) {
        if let Some(p) = &mut self.pending {
            if &p.m == m && p.invoked_at.is_none() {
                p.invoked_at = Some(now);
            }
        }
    }

    /// Notes a line executed by the General's own initiator.
    pub fn on_line(&mut self, m: &Value, line: Line) {
        if let Some(p) = &mut self.pending {
            if &p.m == m && p.invoked_at.is_some() {
                p.done.insert(line);
            }
        }
    }

    /// Checks the deadlines. On a miss, blocks further initiations for
    /// `Δ_reset` and returns the missed line.
    pub fn check(&mut self, c: &ProtocolConstants, now: LocalTime) -> Option<(Value, Line)> {
        let p = self.pending.as_ref()?;
        let missed = match p.invoked_at {
            None if now.since(p.sent_at) > c.d => Some(Line::K2),
            None => None,
            Some(base) => {
                let age = now.since(base);
                [(Line::L4, 2), (Line::M4, 3), (Line::N4, 4)]
                    .into_iter()
                    .find(|(l, k)| age > c.ds(*k) && !p.done.contains(l))
                    .map(|(l, _)| l)
            }
        };
        if let Some(line) = missed {
            let m = p.m.clone();
            self.pending = None;
            self.blocked_until = Some(now.plus(c.d_reset));
            return Some((m, line));
        }
        if [Line::L4, Line::M4, Line::N4].iter().all(|l| p.done.contains(l)) {
            self.pending = None;
        }
        None
    }

    /// Drops future or expired stamps.
    pub fn cleanup(&mut self, c: &ProtocolConstants, now: LocalTime) {
        let within = |at: LocalTime, limit: Span| {
            let age = now.since(at);
            age.0 >= 0 && age <= limit
        };
        if self.last_initiation.is_some_and(|t| !within(t, c.d_zero)) {
            self.last_initiation = None;
        }
        self.last_per_value.retain(|_, t| within(*t, c.d_val));
        if let Some(until) = self.blocked_until {
            let left = until.since(now);
            if left.0 <= 0 || left > c.d_reset {
                self.blocked_until = None;
            }
        }
        if self.pending.as_ref().is_some_and(|p| !within(p.sent_at, c.ds(6))) {
            self.pending = None;
        }
    }
}
