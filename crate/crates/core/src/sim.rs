//! Deterministic discrete-event engine: bounded-delay network, per-node
//! clocks and housekeeping ticks, scripted faults, and the adversary.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversary::{Adversary, Emit};
use crate::constants::ProtocolConstants;
use crate::effects::{Dest, Effects};
use crate::error::{ConfigError, SimError};
use crate::message::{Envelope, NodeId, Value};
use crate::node::Node;
use crate::scenario::{Action, FaultRule, NetFault, Role, ScenarioConfig};
use crate::time::{ClockModel, RealTime, Span};
use crate::trace::{EventKind, TraceEvent};
use crate::transient::{corrupt_node, Garbage};

#[derive(Clone, Debug, PartialEq, Eq)]
enum Ev {
    Deliver { to: NodeId, env: Envelope },
    Tick(NodeId),
    AdvTick,
    Script(usize),
    Recover(NodeId),
}

const STREAM_CORRUPT: u64 = 1 << 62;
const STREAM_ANCHOR: u64 = (1 << 62) + 1;
const STREAM_FAULT: u64 = (1 << 62) + 2;
const STREAM_CLOCKS: u64 = (1 << 62) + 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub struct Simulation {
    cfg: ScenarioConfig,
    c: ProtocolConstants,
    clocks: Vec<ClockModel>,
    nodes: Vec<Option<Node>>,
    queue: BTreeMap<(RealTime, u64), Ev>,
    seq: u64,
    now: RealTime,
    delay_base: ChaCha8Rng,
    send_counts: BTreeMap<(u32, u32), u64>,
    faults: Vec<(RealTime, NetFault)>,
    adversary: Adversary,
    corrupt_rng: ChaCha8Rng,
    anchor_rng: ChaCha8Rng,
    fault_rng: ChaCha8Rng,
    values: Vec<Value>,
    trace: Vec<TraceEvent>,
}

/// The clocks a run uses: configured ones, or seed-drawn offsets anywhere in
/// the 64-bit range (so wrap-around is exercised) with rates in the drift band.
pub fn clocks_for(cfg: &ScenarioConfig) -> Vec<ClockModel> {
    if !cfg.random_clocks {
        return cfg.clocks.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_CLOCKS);
    let scale = 1_000_000i64;
    let band = (cfg.rho * scale).to_integer();
    (0..cfg.n as u32)
        .map(|i| {
            let rate = num_rational::Ratio::new(scale + rng.gen_range(-band..=band), scale);
            ClockModel { owner: i, rate, offset: rng.gen() }
        })
        .collect()
}

/// Runs a scenario to its horizon and returns the trace.
pub fn sim_run(cfg: &ScenarioConfig) -> Result<Vec<TraceEvent>, RunError> {
    let mut sim = Simulation::new(cfg.clone())?;
    sim.run()?;
    Ok(sim.trace)
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, ConfigError> {
        let c = cfg.constants()?;
        let adversary = Adversary::new(&cfg, &c)?;
        let clocks = clocks_for(&cfg);
        let rng = |stream: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(stream);
            r
        };
        let mut values: Vec<Value> = vec!["a".into(), "b".into(), "m".into()];
        for e in &cfg.script {
            if let Action::Initiate(m) | Action::BmInvoke { m, .. } = &e.action {
                if !values.contains(m) {
                    values.push(m.clone());
                }
            }
        }
        let nodes = (0..cfg.n as u32)
            .map(|i| matches!(cfg.roles[i as usize], Role::Correct).then(|| Node::new(NodeId(i), cfg.mode)))
            .collect();
        let mut sim = Simulation {
            delay_base: ChaCha8Rng::seed_from_u64(cfg.seed),
            corrupt_rng: rng(STREAM_CORRUPT),
            anchor_rng: rng(STREAM_ANCHOR),
            fault_rng: rng(STREAM_FAULT),
            cfg,
            c,
            clocks,
            nodes,
            queue: BTreeMap::new(),
            seq: 0,
            now: RealTime(0),
            send_counts: BTreeMap::new(),
            faults: Vec::new(),
            adversary,
            values,
            trace: Vec::new(),
        };
        for i in 0..sim.cfg.n as u32 {
            match sim.cfg.roles[i as usize] {
                Role::Correct => sim.schedule_first_tick(NodeId(i), RealTime(0)),
                Role::Recovering { at } => sim.push(at, Ev::Recover(NodeId(i))),
                Role::Byzantine(_) => {}
            }
        }
        if !sim.adversary.is_empty() {
            sim.push(RealTime(0), Ev::AdvTick);
        }
        for idx in 0..sim.cfg.script.len() {
            let at = sim.cfg.script[idx].at;
            sim.push(at, Ev::Script(idx));
        }
        Ok(sim)
    }

    pub fn constants(&self) -> &ProtocolConstants {
        &self.c
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<TraceEvent> {
        self.trace
    }

    fn push(&mut self, at: RealTime, ev: Ev) {
        self.seq += 1;
        self.queue.insert((at, self.seq), ev);
    }

    /// Ticks of different nodes are staggered within one period.
    fn schedule_first_tick(&mut self, i: NodeId, from: RealTime) {
        let phase = self.cfg.tick.0 * i.0 as i64 / self.cfg.n as i64;
        self.push(from.plus(Span(phase)), Ev::Tick(i));
    }

    pub fn run(&mut self) -> Result<(), SimError> {
        while let Some((&(at, seq), _)) = self.queue.iter().next() {
            if at > self.cfg.horizon {
                break;
            }
            let ev = self.queue.remove(&(at, seq)).expect("present");
            self.now = at;
            self.step(ev);
            if self.queue.len() > self.cfg.queue_max {
                return Err(SimError::QueueOverflow(self.cfg.queue_max));
            }
        }
        Ok(())
    }

    fn step(&mut self, ev: Ev) {
        let now = self.now;
        match ev {
            Ev::Deliver { to, env } => {
                if let Some(node) = self.nodes[to.index()].as_mut() {
                    let local = self.clocks[to.index()].read(now);
                    let eff = node.on_message(&self.c, &env, local);
                    self.apply(to, eff);
                } else if self.cfg.is_byzantine(to) {
                    let emits = self.adversary.deliver(&self.c, now, to, &env);
                    self.emit_all(emits);
                }
            }
            Ev::Tick(i) => {
                if let Some(node) = self.nodes[i.index()].as_mut() {
                    let local = self.clocks[i.index()].read(now);
                    let eff = node.on_tick(&self.c, local);
                    if self.cfg.trace_ticks {
                        self.record(i, EventKind::Tick);
                    }
                    self.apply(i, eff);
                    self.push(now.plus(self.cfg.tick), Ev::Tick(i));
                }
            }
            Ev::AdvTick => {
                let emits = self.adversary.on_tick(&self.c, now, self.cfg.tick);
                self.emit_all(emits);
                self.push(now.plus(self.cfg.tick), Ev::AdvTick);
            }
            Ev::Recover(i) => {
                let mut node = Node::new(i, self.cfg.mode);
                self.corrupt(&mut node);
                self.nodes[i.index()] = Some(node);
                self.record(i, EventKind::Recover);
                self.schedule_first_tick(i, now);
            }
            Ev::Script(idx) => {
                let action = self.cfg.script[idx].action.clone();
                self.script(action);
            }
        }
    }

    fn script(&mut self, action: Action) {
        let now = self.now;
        let g = self.cfg.general;
        match action {
            Action::Initiate(m) => {
                if let Some(node) = self.nodes[g.index()].as_mut() {
                    let local = self.clocks[g.index()].read(now);
                    let eff = node.initiate(&self.c, &m, local);
                    self.apply(g, eff);
                } else {
                    let emits = self.adversary.initiate(&self.c, now, g, &m);
                    self.emit_all(emits);
                }
            }
            Action::Corrupt => self.corrupt_all(),
            Action::NetFault(nf) => self.faults.push((now, nf)),
            Action::BmInvoke { p, m, k } => {
                if let Some(node) = self.nodes[p.index()].as_mut() {
                    let local = self.clocks[p.index()].read(now);
                    let eff = node.bm_invoke(&self.c, g, m, k, local);
                    self.apply(p, eff);
                } else {
                    let emits = self.adversary.bm_invoke(&self.c, now, p, g, m, k);
                    self.emit_all(emits);
                }
            }
            Action::BcastAnchor { spread } => {
                for i in 0..self.cfg.n {
                    let u = if spread.0 > 0 { self.anchor_rng.gen_range(0..=spread.0) } else { 0 };
                    let at = RealTime(now.0.saturating_sub(u as u64));
                    if let Some(node) = self.nodes[i].as_mut() {
                        let clock = &self.clocks[i];
                        let eff = node.set_broadcast_anchor(&self.c, g, clock.read(at), clock.read(now));
                        self.apply(NodeId(i as u32), eff);
                    }
                }
                let emits = self.adversary.set_anchor(&self.c, now, g, now);
                self.emit_all(emits);
            }
        }
    }

    fn corrupt(&mut self, node: &mut Node) {
        let local = self.clocks[node.id.index()].read(self.now);
        let mut gb = Garbage { rng: &mut self.corrupt_rng, c: &self.c, now: local, values: &self.values };
        corrupt_node(node, &mut gb);
    }

    /// Arbitrary state everywhere: node variables, in-flight contents, plus a
    /// bounded batch of phantom messages attributed to arbitrary senders.
    fn corrupt_all(&mut self) {
        let now = self.now;
        for i in 0..self.cfg.n {
            if let Some(mut node) = self.nodes[i].take() {
                self.corrupt(&mut node);
                self.nodes[i] = Some(node);
                self.record(NodeId(i as u32), EventKind::Corrupt);
            }
        }
        let c = self.c.clone();
        let local = self.clocks[0].read(now);
        let mut gb = Garbage { rng: &mut self.corrupt_rng, c: &c, now: local, values: &self.values };
        for ev in self.queue.values_mut() {
            if let Ev::Deliver { env, .. } = ev {
                env.sender = gb.node();
                env.msg = gb.message();
            }
        }
        let mut phantoms = Vec::new();
        for _ in 0..self.cfg.inflight_max {
            let to = gb.node();
            let env = Envelope { sender: gb.node(), msg: gb.message() };
            let at = now.plus(Span(gb.rng.gen_range(0..=c.delta.0)));
            phantoms.push((at, Ev::Deliver { to, env }));
        }
        for (at, ev) in phantoms {
            self.push(at, ev);
        }
    }

    fn record(&mut self, node: NodeId, event: EventKind) {
        let local_time = self.clocks[node.index()].read(self.now);
        self.trace.push(TraceEvent { t_real: self.now, node, local_time, event });
    }

    fn apply(&mut self, from: NodeId, eff: Effects) {
        for e in eff.events {
            self.record(from, e);
        }
        for (dest, msg) in eff.sends {
            let env = Envelope { sender: from, msg };
            let emits = self.adversary.observe_send(&self.c, self.now, &env);
            match dest {
                Dest::All => {
                    for to in 0..self.cfg.n as u32 {
                        self.send(NodeId(to), env.clone(), None);
                    }
                }
                Dest::To(to) => self.send(to, env.clone(), None),
            }
            self.emit_all(emits);
        }
    }

    fn emit_all(&mut self, emits: Vec<Emit>) {
        for e in emits {
            if !self.cfg.is_byzantine(e.from) {
                continue;
            }
            let env = Envelope { sender: e.from, msg: e.msg };
            let delay = e.delay.map(|d| Span(d.0.clamp(0, self.c.delta.0)));
            match e.to {
                Some(to) if to.index() < self.cfg.n => self.send(to, env, delay),
                Some(_) => {}
                None => {
                    for to in 0..self.cfg.n as u32 {
                        self.send(NodeId(to), env.clone(), delay);
                    }
                }
            }
        }
    }

    /// Counter-keyed draw in `[0, δ]`: the `k`-th message on a link always
    /// gets the same delay, whatever else happens in the run.
    fn draw_delay(&mut self, from: NodeId, to: NodeId) -> Span {
        let count = self.send_counts.entry((from.0, to.0)).or_insert(0);
        let k = *count;
        *count += 1;
        let mut rng = self.delay_base.clone();
        rng.set_stream(((from.0 as u64) << 32) | to.0 as u64);
        rng.set_word_pos(k as u128 * 16);
        Span(rng.gen_range(0..=self.c.delta.0))
    }

    fn send(&mut self, to: NodeId, env: Envelope, delay: Option<Span>) {
        let now = self.now;
        let base = match delay {
            Some(d) => d,
            None => self.draw_delay(env.sender, to),
        };
        let rule = self
            .faults
            .iter()
            .rev()
            .find(|(start, nf)| *start <= now && now <= nf.until && nf.applies(env.sender, to))
            .map(|(_, nf)| nf.rule);
        match rule {
            None => self.push(now.plus(base), Ev::Deliver { to, env }),
            Some(FaultRule::Drop) => {}
            Some(FaultRule::Duplicate) => {
                let extra = Span(self.fault_rng.gen_range(0..=self.c.delta.0));
                self.push(now.plus(base), Ev::Deliver { to, env: env.clone() });
                self.push(now.plus(extra), Ev::Deliver { to, env });
            }
            Some(FaultRule::Delay(x)) => {
                let extra = Span(self.fault_rng.gen_range(0..=x.0.max(0)));
                self.push(now.plus(base + extra), Ev::Deliver { to, env });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::trace_to_string;

    fn run(text: &str) -> Vec<TraceEvent> {
        sim_run(&ScenarioConfig::parse(text).unwrap()).unwrap()
    }

    const VALIDITY: &str = "role.3 = byzantine silent\nscript.0 = \"100 initiate m\"\nhorizon = 110\ntrace.ticks = false";

    #[test]
    fn validity_run_decides_everywhere() {
        let trace = run(VALIDITY);
        let decides: Vec<_> = trace
            .iter()
            .filter_map(|e| match &e.event {
                EventKind::Decide { m, .. } => Some((e.node.0, m.clone(), e.t_real.0)),
                _ => None,
            })
            .collect();
        assert_eq!(decides.len(), 3, "{decides:?}");
        for (_, m, t) in decides {
            assert_eq!(m, Value::from("m"));
            assert!((100_000..=104_000).contains(&t));
        }
    }

    #[test]
    fn empty_script_traces_only_ticks() {
        let trace = run("horizon = 2");
        assert!(!trace.is_empty());
        assert!(trace.iter().all(|e| e.event == EventKind::Tick));
        // Node 0 ticks at 0, 0.25, ..., 2; the others are staggered later.
        assert_eq!(trace.len(), 9 + 3 * 8);
    }

    #[test]
    fn same_seed_same_bytes() {
        let text = "seed = 5\nrole.0 = byzantine r\nstrategy.r = random\nhorizon = 60";
        assert_eq!(trace_to_string(&run(text)), trace_to_string(&run(text)));
        let other = "seed = 6\nrole.0 = byzantine r\nstrategy.r = random\nhorizon = 60";
        assert_ne!(trace_to_string(&run(text)), trace_to_string(&run(other)));
    }

    #[test]
    fn delays_are_bounded_and_counter_keyed() {
        let cfg = ScenarioConfig::parse("seed = 11").unwrap();
        let mut a = Simulation::new(cfg.clone()).unwrap();
        let mut b = Simulation::new(cfg).unwrap();
        let da: Vec<_> = (0..50).map(|_| a.draw_delay(NodeId(1), NodeId(2))).collect();
        // Unrelated traffic on another link does not perturb the draws.
        for _ in 0..7 {
            b.draw_delay(NodeId(2), NodeId(1));
        }
        let db: Vec<_> = (0..50).map(|_| b.draw_delay(NodeId(1), NodeId(2))).collect();
        assert_eq!(da, db);
        assert!(da.iter().all(|d| (0..=900).contains(&d.0)));
    }

    #[test]
    fn dropped_window_loses_messages() {
        let trace = run("script.0 = \"100 initiate m\"\nscript.1 = \"99 netfault 120 drop\"\nhorizon = 110\ntrace.ticks = false");
        assert!(trace.iter().all(|e| !matches!(e.event, EventKind::Invoke { .. })));
    }

    #[test]
    fn queue_guard_trips() {
        let cfg = ScenarioConfig::parse("role.1 = byzantine fl\nstrategy.fl = flood rate=400\nqueue_max = 100\nhorizon = 5").unwrap();
        assert_eq!(sim_run(&cfg), Err(RunError::Sim(SimError::QueueOverflow(100))));
    }

    #[test]
    fn corruption_marks_nodes() {
        let trace = run("script.0 = \"1 corrupt\"\nhorizon = 3\ntrace.ticks = false");
        assert_eq!(trace.iter().filter(|e| e.event == EventKind::Corrupt).count(), 4);
    }
}
