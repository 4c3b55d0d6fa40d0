//! Timestamped message logs and look-back cells.

use std::collections::{BTreeMap, VecDeque};

use crate::error::HorizonError;
use crate::message::{Envelope, MsgKind, NodeId, Round, Value};
use crate::time::{LocalTime, Span};

/// A variable whose past values can be queried for a bounded look-back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistoryCell<T> {
    base: Option<T>,
    changes: VecDeque<(LocalTime, Option<T>)>,
    horizon: Span,
}

impl<T: Clone + PartialEq> HistoryCell<T> {
    pub fn new(horizon: Span) -> Self {
        HistoryCell { base: None, changes: VecDeque::new(), horizon }
    }

    pub fn horizon(&self) -> Span {
        self.horizon
    }

    pub fn current(&self) -> Option<&T> {
        match self.changes.back() {
            Some((_, v)) => v.as_ref(),
            None => self.base.as_ref(),
        }
    }

    pub fn is_none(&self) -> bool {
        self.current().is_none()
    }

    /// Records a new value at `now`. Writing the current value again is a no-op.
    pub fn set(&mut self, now: LocalTime, value: Option<T>) {
        if self.current() == value.as_ref() {
            return;
        }
        self.changes.push_back((now, value));
    }

    /// The value held at `now - lookback`.
    pub fn at(&self, now: LocalTime, lookback: Span) -> Result<Option<&T>, HorizonError> {
        if lookback.0 < 0 || lookback > self.horizon {
            return Err(HorizonError { requested: lookback.0, horizon: self.horizon.0 });
        }
        let point = now.minus(lookback);
        // Changes are chronological in normal operation; after a transient
        // fault they may not be, so pick the latest change not after `point`.
        let mut best: Option<(Span, &Option<T>)> = None;
        for (at, v) in &self.changes {
            let age = point.since(*at);
            if age.0 >= 0 && best.map_or(true, |(a, _)| age <= a) {
                best = Some((age, v));
            }
        }
        Ok(match best {
            Some((_, v)) => v.as_ref(),
            None => self.base.as_ref(),
        })
    }

    /// Drops changes stamped after `now` and folds changes older than the
    /// horizon into the base value.
    pub fn prune(&mut self, now: LocalTime) {
        self.changes.retain(|(at, _)| !at.after(now));
        let limit = now.minus(self.horizon);
        while let Some((at, _)) = self.changes.front() {
            if at.before(limit) {
                let (_, v) = self.changes.pop_front().expect("front exists");
                self.base = v;
            } else {
                break;
            }
        }
    }

    /// Replaces the whole history; used by fault injection.
    pub fn overwrite(&mut self, base: Option<T>, changes: Vec<(LocalTime, Option<T>)>) {
        self.base = base;
        self.changes = changes.into();
    }

    pub fn changes(&self) -> impl Iterator<Item = &(LocalTime, Option<T>)> {
        self.changes.iter()
    }
}

/// Which arrival a log keeps when the same dedup key arrives twice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DupPolicy {
    KeepFirst,
    KeepLatest,
}

/// Group key of a log: everything in the dedup key except the sender.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Topic {
    pub kind: MsgKind,
    pub g: NodeId,
    pub m: Value,
    pub p: Option<NodeId>,
    pub k: Option<Round>,
}

impl Topic {
    pub fn plain(kind: MsgKind, g: NodeId, m: Value) -> Self {
        Topic { kind, g, m, p: None, k: None }
    }

    pub fn triple(kind: MsgKind, g: NodeId, p: NodeId, m: Value, k: Round) -> Self {
        Topic { kind, g, m, p: Some(p), k: Some(k) }
    }

    pub fn of(env: &Envelope) -> Self {
        let key = env.dedup_key();
        Topic { kind: key.kind, g: key.g, m: key.m, p: key.p, k: key.k }
    }
}

/// Received messages with arrival stamps, at most one per dedup key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimestampedLog {
    policy: DupPolicy,
    topics: BTreeMap<Topic, BTreeMap<NodeId, LocalTime>>,
}

impl TimestampedLog {
    pub fn new(policy: DupPolicy) -> Self {
        TimestampedLog { policy, topics: BTreeMap::new() }
    }

    /// Records an arrival. Returns false when the dedup policy discarded it.
    pub fn insert(&mut self, env: &Envelope, at: LocalTime) -> bool {
        self.insert_raw(Topic::of(env), env.sender, at)
    }

    pub fn insert_raw(&mut self, topic: Topic, sender: NodeId, at: LocalTime) -> bool {
        let senders = self.topics.entry(topic).or_default();
        match (senders.get(&sender), self.policy) {
            (Some(_), DupPolicy::KeepFirst) => false,
            _ => {
                senders.insert(sender, at);
                true
            }
        }
    }

    pub fn arrivals(&self, topic: &Topic) -> Option<&BTreeMap<NodeId, LocalTime>> {
        self.topics.get(topic)
    }

    /// Number of distinct senders logged for `topic`.
    pub fn count(&self, topic: &Topic) -> usize {
        self.topics.get(topic).map_or(0, |s| s.len())
    }

    /// Number of distinct senders whose arrival lies in `[now - window, now]`.
    pub fn count_within(&self, topic: &Topic, now: LocalTime, window: Span) -> usize {
        self.topics.get(topic).map_or(0, |s| {
            s.values()
                .filter(|at| {
                    let age = now.since(**at);
                    age.0 >= 0 && age <= window
                })
                .count()
        })
    }

    /// Length of the shortest window `[now - alpha, now]` holding `q`
    /// distinct senders, if any.
    pub fn shortest_window(&self, topic: &Topic, now: LocalTime, q: usize) -> Option<Span> {
        if q == 0 {
            return Some(Span::ZERO);
        }
        let senders = self.topics.get(topic)?;
        let mut ages: Vec<Span> =
            senders.values().map(|at| now.since(*at)).filter(|a| a.0 >= 0).collect();
        if ages.len() < q {
            return None;
        }
        ages.sort_unstable();
        Some(ages[q - 1])
    }

    /// Removes entries stamped after `now` or strictly older than `now - horizon`.
    pub fn prune(&mut self, now: LocalTime, horizon: Span) {
        for senders in self.topics.values_mut() {
            senders.retain(|_, at| {
                let age = now.since(*at);
                age.0 >= 0 && age <= horizon
            });
        }
        self.topics.retain(|_, s| !s.is_empty());
    }

    /// Removes every topic matching the predicate.
    pub fn remove_topics(&mut self, mut pred: impl FnMut(&Topic) -> bool) {
        self.topics.retain(|t, _| !pred(t));
    }

    /// Moves every stamp to `now`.
    pub fn restamp(&mut self, now: LocalTime) {
        for senders in self.topics.values_mut() {
            for at in senders.values_mut() {
                *at = now;
            }
        }
    }

    pub fn topics(&self) -> impl Iterator<Item = (&Topic, &BTreeMap<NodeId, LocalTime>)> {
        self.topics.iter()
    }

    pub fn len(&self) -> usize {
        self.topics.values().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    pub fn clear(&mut self) {
        self.topics.clear();
    }
}
