//! Byzantine strategies. One `Adversary` drives every faulty node, sees every
//! message the moment it is sent, and may only send under faulty identities.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constants::ProtocolConstants;
use crate::effects::{Dest, Effects};
use crate::error::ConfigError;
use crate::message::{Envelope, MsgKind, NodeId, ProtocolMessage, Round, Value};
use crate::node::Node;
use crate::scenario::{parse_decimal, ScenarioConfig, StrategySpec};
use crate::time::{ClockModel, LocalTime, RealTime, Span};

pub const KINDS: &[&str] = &["silent", "equivocating", "split-brain", "random", "flood", "ready-forger", "withhold"];

/// A message a faulty node sends. `delay` of `None` uses the ordinary
/// network draw; otherwise it is clamped to the network bound.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Emit {
    pub from: NodeId,
    pub to: Option<NodeId>,
    pub msg: ProtocolMessage,
    pub delay: Option<Span>,
}

/// How a faulty node echoes what it observes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Collude {
    /// Never.
    Off,
    /// To a random subset, with the given per-mille probability of acting.
    Random(u32),
    /// Messages about the first value go to one side of the partition, the
    /// second value to the other.
    Partitioned,
}

#[derive(Clone, Debug)]
enum Kind {
    Silent,
    /// A faulty General that sends different values to different nodes.
    Equivocating { gap: Option<Span>, split: Option<Vec<NodeId>> },
    SplitBrain,
    Random { rate: Ratio },
    Flood { kinds: Vec<MsgKind>, rate: Ratio },
    ReadyForger { every: Span },
    /// Runs the protocol honestly but sends only to `targets`.
    Withhold { targets: Vec<NodeId>, shadow: Box<Node>, clock: ClockModel },
}

type Ratio = num_rational::Ratio<i64>;

#[derive(Clone, Debug)]
struct Member {
    id: NodeId,
    kind: Kind,
    collude: Collude,
    values: Vec<Value>,
    rng: ChaCha8Rng,
    next_fire: Option<RealTime>,
    every: Span,
    jitter: Span,
    pending: Vec<(RealTime, Emit)>,
    /// Last time each (message, target) was echoed.
    echoed: BTreeMap<(ProtocolMessage, Option<NodeId>), RealTime>,
    /// One side of the partition for split strategies.
    side_a: Vec<NodeId>,
    credit: Ratio,
}

#[derive(Clone, Debug)]
pub struct Adversary {
    members: Vec<Member>,
    n: usize,
    f: usize,
    general: NodeId,
    delta: Span,
    correct: Vec<NodeId>,
}

fn param<'a>(s: &'a StrategySpec, key: &str) -> Option<&'a str> {
    s.params.get(key).map(|v| v.as_str())
}

fn bad(name: &str, msg: String) -> ConfigError {
    ConfigError::Invalid(format!("strategy {name}: {msg}"))
}

impl Adversary {
    pub fn new(cfg: &ScenarioConfig, c: &ProtocolConstants) -> Result<Self, ConfigError> {
        let correct: Vec<NodeId> = (0..cfg.n as u32).map(NodeId).filter(|&i| !cfg.is_byzantine(i)).collect();
        let clocks = crate::sim::clocks_for(cfg);
        let mut members = Vec::new();
        for i in (0..cfg.n as u32).map(NodeId) {
            let Some(spec) = cfg.strategy_of(i) else { continue };
            let name = spec.kind.clone();
            let time = |key: &str, default: Option<Span>| -> Result<Option<Span>, ConfigError> {
                match param(&spec, key) {
                    None => Ok(default),
                    Some(v) => parse_decimal(v)
                        .map(|r| Some(cfg.units_to_span(r)))
                        .ok_or_else(|| bad(&name, format!("{key}: not a time: {v}"))),
                }
            };
            let rate = |default: i64| -> Result<Ratio, ConfigError> {
                match param(&spec, "rate") {
                    None => Ok(Ratio::from_integer(default)),
                    Some(v) => parse_decimal(v).ok_or_else(|| bad(&name, format!("rate: {v}"))),
                }
            };
            let nodes = |key: &str| -> Result<Option<Vec<NodeId>>, ConfigError> {
                match param(&spec, key) {
                    None => Ok(None),
                    Some(v) => v
                        .split(',')
                        .map(|s| s.parse::<u32>().ok().filter(|&x| (x as usize) < cfg.n).map(NodeId))
                        .collect::<Option<Vec<_>>>()
                        .map(Some)
                        .ok_or_else(|| bad(&name, format!("{key}: bad node list {v}"))),
                }
            };
            let values = match param(&spec, "values").or(param(&spec, "value")) {
                None => vec![Value::from("a"), Value::from("b")],
                Some(v) => v.split(',').map(Value::parse).collect::<Result<Vec<_>, _>>().map_err(|e| bad(&name, e))?,
            };

            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(0x5eed_0000 + i.0 as u64);
            let d = c.d;
            let at = time("at", None)?.unwrap_or_else(|| Span(rng.gen_range(5 * d.0..=15 * d.0)));
            let every = time("every", Some(d * 40))?.unwrap();
            let jitter = time("jitter", Some(d * 10))?.unwrap();
            let mut shuffled = correct.clone();
            shuffled.shuffle(&mut rng);
            let side_a = nodes("side")?.unwrap_or_else(|| shuffled[..shuffled.len() / 2].to_vec());

            let (kind, collude) = match name.as_str() {
                "silent" => (Kind::Silent, Collude::Off),
                "equivocating" => (
                    Kind::Equivocating { gap: time("gap", None)?, split: nodes("split")? },
                    Collude::Random(1000),
                ),
                "split-brain" => (Kind::SplitBrain, Collude::Partitioned),
                "random" => (Kind::Random { rate: rate(4)? }, Collude::Random(300)),
                "flood" => {
                    let kinds = match param(&spec, "kinds") {
                        None => vec![MsgKind::Ready],
                        Some(v) => v
                            .split(',')
                            .map(|k| MsgKind::parse(k).ok_or_else(|| bad(&name, format!("unknown kind {k}"))))
                            .collect::<Result<_, _>>()?,
                    };
                    (Kind::Flood { kinds, rate: rate(8)? }, Collude::Off)
                }
                "ready-forger" => (Kind::ReadyForger { every: time("every", Some(d))?.unwrap() }, Collude::Off),
                "withhold" => {
                    let targets = nodes("to")?.unwrap_or_else(|| {
                        let mut t: Vec<NodeId> = correct[..(correct.len() + 1) / 2].to_vec();
                        t.push(i);
                        t
                    });
                    let shadow = Box::new(Node::new(i, cfg.mode));
                    (Kind::Withhold { targets, shadow, clock: clocks[i.index()].clone() }, Collude::Off)
                }
                other => return Err(bad(other, "unknown kind".into())),
            };
            let is_general = i == cfg.general;
            let scheduled = matches!(kind, Kind::Equivocating { .. } | Kind::SplitBrain | Kind::ReadyForger { .. })
                && (is_general || matches!(kind, Kind::ReadyForger { .. }));
            let next_fire = scheduled.then(|| RealTime(at.0.max(0) as u64));
            members.push(Member {
                id: i,
                kind,
                collude,
                values,
                rng,
                next_fire,
                every,
                jitter,
                pending: Vec::new(),
                echoed: BTreeMap::new(),
                side_a,
                credit: Ratio::from_integer(0),
            });
        }
        Ok(Adversary { members, n: cfg.n, f: cfg.f, general: cfg.general, delta: c.delta, correct })
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Periodic step: scheduled sends, rate-driven traffic, shadow ticks.
    pub fn on_tick(&mut self, c: &ProtocolConstants, now: RealTime, tick: Span) -> Vec<Emit> {
        let (n, f, general, delta) = (self.n, self.f, self.general, self.delta);
        let correct = self.correct.clone();
        let mut out = Vec::new();
        for mb in &mut self.members {
            let due: Vec<Emit> = {
                let (ready, later): (Vec<_>, Vec<_>) = mb.pending.drain(..).partition(|(t, _)| *t <= now);
                mb.pending = later;
                ready.into_iter().map(|(_, e)| e).collect()
            };
            out.extend(due);
            if mb.next_fire.is_some_and(|t| t <= now) {
                mb.fire(n, f, general, &correct, now, c, &mut out);
                let j = if mb.jitter.0 > 0 { mb.rng.gen_range(0..=mb.jitter.0) } else { 0 };
                mb.next_fire = Some(now.plus(mb.every + Span(j)));
            }
            match &mut mb.kind {
                Kind::Random { rate } | Kind::Flood { rate, .. } => {
                    mb.credit += *rate * Ratio::new(tick.0, c.d.0);
                    let count = mb.credit.to_integer();
                    mb.credit -= Ratio::from_integer(count);
                    for _ in 0..count {
                        if let Some(e) = mb.noise(n, f, general, delta) {
                            out.push(e);
                        }
                    }
                }
                Kind::Withhold { shadow, clock, targets } => {
                    let eff = shadow.on_tick(c, clock.read(now));
                    out.extend(fan_out(mb.id, targets, eff));
                }
                _ => {}
            }
        }
        out
    }

    /// Reacts to a message sent by anyone; faulty nodes echo selectively.
    pub fn observe_send(&mut self, c: &ProtocolConstants, now: RealTime, env: &Envelope) -> Vec<Emit> {
        let n = self.n;
        let mut out = Vec::new();
        for mb in &mut self.members {
            if env.sender == mb.id || matches!(env.msg, ProtocolMessage::Initiator { .. } | ProtocolMessage::BInit { .. }) {
                continue;
            }
            let targets: Vec<Option<NodeId>> = match mb.collude {
                Collude::Off => continue,
                Collude::Random(per_mille) => {
                    if mb.rng.gen_range(0..1000) >= per_mille {
                        continue;
                    }
                    if mb.rng.gen_bool(0.5) {
                        vec![None]
                    } else {
                        (0..n as u32).map(NodeId).filter(|_| mb.rng.gen_bool(0.5)).map(Some).collect()
                    }
                }
                Collude::Partitioned => {
                    let m = env.msg.value();
                    if mb.values.first() == Some(m) {
                        mb.side_a.iter().copied().map(Some).collect()
                    } else if mb.values.get(1) == Some(m) {
                        (0..n as u32).map(NodeId).filter(|i| !mb.side_a.contains(i)).map(Some).collect()
                    } else {
                        continue;
                    }
                }
            };
            for to in targets {
                let key = (env.msg.clone(), to);
                if mb.echoed.get(&key).is_some_and(|t| now.since(*t) <= c.d_rmv) {
                    continue;
                }
                mb.echoed.insert(key, now);
                out.push(Emit { from: mb.id, to, msg: env.msg.clone(), delay: Some(Span(0)) });
            }
        }
        out
    }

    /// A message delivered to faulty node `to`.
    pub fn deliver(&mut self, c: &ProtocolConstants, now: RealTime, to: NodeId, env: &Envelope) -> Vec<Emit> {
        let mut out = Vec::new();
        for mb in &mut self.members {
            if mb.id != to {
                continue;
            }
            if let Kind::Withhold { shadow, clock, targets } = &mut mb.kind {
                let eff = shadow.on_message(c, env, clock.read(now));
                out.extend(fan_out(mb.id, targets, eff));
            }
        }
        out
    }

    /// Scripted actions addressed to a faulty node. Only honest-running
    /// strategies act on them.
    pub fn initiate(&mut self, c: &ProtocolConstants, now: RealTime, g: NodeId, m: &Value) -> Vec<Emit> {
        self.with_shadow(g, |shadow, local| shadow.initiate(c, m, local), now)
    }

    pub fn bm_invoke(&mut self, c: &ProtocolConstants, now: RealTime, p: NodeId, g: NodeId, m: Value, k: Round) -> Vec<Emit> {
        self.with_shadow(p, |shadow, local| shadow.bm_invoke(c, g, m, k, local), now)
    }

    pub fn set_anchor(&mut self, c: &ProtocolConstants, now: RealTime, g: NodeId, anchor_real: RealTime) -> Vec<Emit> {
        let mut out = Vec::new();
        for mb in &mut self.members {
            if let Kind::Withhold { shadow, clock, targets } = &mut mb.kind {
                let eff = shadow.set_broadcast_anchor(c, g, clock.read(anchor_real), clock.read(now));
                out.extend(fan_out(mb.id, targets, eff));
            }
        }
        out
    }

    fn with_shadow(&mut self, who: NodeId, f: impl FnOnce(&mut Node, LocalTime) -> Effects, now: RealTime) -> Vec<Emit> {
        for mb in &mut self.members {
            if mb.id != who {
                continue;
            }
            if let Kind::Withhold { shadow, clock, targets } = &mut mb.kind {
                let eff = f(shadow, clock.read(now));
                return fan_out(mb.id, targets, eff);
            }
        }
        Vec::new()
    }
}

fn fan_out(from: NodeId, targets: &[NodeId], eff: Effects) -> Vec<Emit> {
    let mut out = Vec::new();
    for (dest, msg) in eff.sends {
        match dest {
            Dest::All => out.extend(targets.iter().map(|&t| Emit { from, to: Some(t), msg: msg.clone(), delay: None })),
            Dest::To(t) if targets.contains(&t) => out.push(Emit { from, to: Some(t), msg, delay: None }),
            Dest::To(_) => {}
        }
    }
    out
}

impl Member {
    fn two_values(&mut self) -> (Value, Value) {
        let a = self.values[0].clone();
        let b = self.values.get(1).cloned().unwrap_or_else(|| Value::from("b"));
        if self.rng.gen_bool(0.5) {
            (a, b)
        } else {
            (b, a)
        }
    }

    fn draw_delay(&mut self, delta: Span) -> Option<Span> {
        Some(Span(if self.rng.gen_bool(0.5) { 0 } else { self.rng.gen_range(0..=delta.0) }))
    }

    #[allow(clippy::too_many_arguments)]
    fn fire(&mut self, n: usize, f: usize, g: NodeId, correct: &[NodeId], now: RealTime, c: &ProtocolConstants, out: &mut Vec<Emit>) {
        let me = self.id;
        let all: Vec<NodeId> = (0..n as u32).map(NodeId).collect();
        match self.kind.clone() {
            Kind::Equivocating { gap, split } => {
                let (m1, m2) = self.two_values();
                let side: Vec<NodeId> = split.unwrap_or_else(|| {
                    let mut s: Vec<NodeId> = all.iter().copied().filter(|_| self.rng.gen_bool(0.5)).collect();
                    if s.is_empty() {
                        s.push(all[self.rng.gen_range(0..n)]);
                    }
                    s
                });
                let gap = gap.unwrap_or_else(|| Span(self.rng.gen_range(0..=6 * c.d.0)));
                for &to in &all {
                    let delay = self.draw_delay(c.delta);
                    if side.contains(&to) {
                        out.push(Emit { from: me, to: Some(to), msg: ProtocolMessage::Initiator { g, m: m1.clone() }, delay });
                    } else {
                        let e = Emit { from: me, to: Some(to), msg: ProtocolMessage::Initiator { g, m: m2.clone() }, delay };
                        self.pending.push((now.plus(gap), e));
                    }
                }
            }
            Kind::SplitBrain => {
                let a = self.values[0].clone();
                let b = self.values.get(1).cloned().unwrap_or_else(|| Value::from("b"));
                for &to in &all {
                    let m = if self.side_a.contains(&to) { a.clone() } else { b.clone() };
                    let delay = self.draw_delay(c.delta);
                    out.push(Emit { from: me, to: Some(to), msg: ProtocolMessage::Initiator { g, m }, delay });
                }
            }
            Kind::ReadyForger { every } => {
                self.every = every;
                self.jitter = Span(0);
                let m = self.values[0].clone();
                for kind in [MsgKind::Support, MsgKind::Approve, MsgKind::Ready] {
                    out.push(Emit { from: me, to: None, msg: kind.make(g, me, m.clone(), 1), delay: Some(Span(0)) });
                }
                for &p in correct {
                    for k in 1..=(f as Round + 1) {
                        for kind in [MsgKind::BEcho, MsgKind::BInitPrime, MsgKind::BEchoPrime] {
                            out.push(Emit { from: me, to: None, msg: kind.make(g, p, m.clone(), k), delay: Some(Span(0)) });
                        }
                    }
                }
            }
            _ => {}
        }
    }

    /// One message of rate-driven traffic.
    fn noise(&mut self, n: usize, f: usize, general: NodeId, delta: Span) -> Option<Emit> {
        let me = self.id;
        let m = self.values.choose(&mut self.rng)?.clone();
        let (kind, to) = match &self.kind {
            Kind::Flood { kinds, .. } => (*kinds.choose(&mut self.rng)?, None),
            _ => {
                let kind = MsgKind::ALL[self.rng.gen_range(0..MsgKind::ALL.len())];
                let to = if self.rng.gen_bool(0.5) { None } else { Some(NodeId(self.rng.gen_range(0..n as u32))) };
                (kind, to)
            }
        };
        let g = if kind == MsgKind::Initiator || self.rng.gen_bool(0.8) { general } else { NodeId(self.rng.gen_range(0..n as u32)) };
        let p = if kind == MsgKind::BInit { me } else { NodeId(self.rng.gen_range(0..n as u32)) };
        // Out-of-range rounds now and then, to exercise validation.
        let k = self.rng.gen_range(0..=f as Round + 2);
        let delay = self.draw_delay(delta);
        Some(Emit { from: me, to, msg: kind.make(g, p, m, k), delay })
    }
}
