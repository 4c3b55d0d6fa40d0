//! Scenario files: flat `key = value` text, `#` comments, times in units of
//! the scenario's own time unit (so `d = 1` makes every time a multiple of d).

use std::collections::BTreeMap;

use num_rational::Ratio;

use crate::constants::{derive_constants, ProtocolConstants};
use crate::error::ConfigError;
use crate::message::{NodeId, Round, Value};
use crate::node::Mode;
use crate::time::{ClockModel, RealTime, Span, TICKS_PER_D};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Role {
    Correct,
    /// Driven by the named strategy for the whole run.
    Byzantine(String),
    /// Silent until `at`, then runs the protocol from a corrupted state.
    Recovering { at: RealTime },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultRule {
    Drop,
    Duplicate,
    /// Adds up to this much delay on top of the normal draw.
    Delay(Span),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetFault {
    pub until: RealTime,
    pub rule: FaultRule,
    pub from: Option<NodeId>,
    pub to: Option<NodeId>,
}

impl NetFault {
    pub fn applies(&self, from: NodeId, to: NodeId) -> bool {
        self.from.map_or(true, |f| f == from) && self.to.map_or(true, |t| t == to)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    /// The General initiates an agreement on the value.
    Initiate(Value),
    /// Arbitrary state at every node and in the network.
    Corrupt,
    NetFault(NetFault),
    /// Node `p` starts a broadcast of `(m, k)` for the scenario's General.
    BmInvoke { p: NodeId, m: Value, k: Round },
    /// Every node takes a broadcast anchor drawn within `spread` before now.
    BcastAnchor { spread: Span },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScriptEntry {
    pub at: RealTime,
    pub action: Action,
}

/// A named adversary strategy: its kind plus `key=value` parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StrategySpec {
    pub kind: String,
    pub params: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioConfig {
    pub n: usize,
    pub f: usize,
    /// Ticks per scenario time unit.
    pub unit: Ratio<i64>,
    pub d: Span,
    pub delta: Span,
    pub pi: Span,
    pub rho: Ratio<i64>,
    pub general: NodeId,
    pub roles: Vec<Role>,
    pub strategies: BTreeMap<String, StrategySpec>,
    pub clocks: Vec<ClockModel>,
    pub random_clocks: bool,
    pub script: Vec<ScriptEntry>,
    pub seed: u64,
    pub horizon: RealTime,
    pub mode: Mode,
    /// Phantom messages injected into the network on each corruption.
    pub inflight_max: usize,
    pub queue_max: usize,
    pub tick: Span,
    pub trace_ticks: bool,
}

/// Parses a decimal such as `0.9`, `-3`, or `1.0001` exactly.
pub fn parse_decimal(s: &str) -> Option<Ratio<i64>> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 12 {
        return None;
    }
    let digits: i64 = format!("{int}{frac}").parse().ok()?;
    let r = Ratio::new(digits, 10i64.pow(frac.len() as u32));
    Some(if neg { -r } else { r })
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut kv: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Parse { line: i + 1, msg: format!("expected key = value, got `{line}`") })?;
            kv.push((i + 1, k.trim().to_string(), unquote(v.trim()).to_string()));
        }
        let get = |key: &str| kv.iter().rev().find(|(_, k, _)| k == key).map(|(l, _, v)| (*l, v.as_str()));

        let count = |key: &str, default: usize| -> Result<usize, ConfigError> {
            match get(key) {
                None => Ok(default),
                Some((line, v)) => v.parse().map_err(|_| ConfigError::Parse { line, msg: format!("{key}: not a count: {v}") }),
            }
        };
        let dec = |key: &str, default: &str| -> Result<Ratio<i64>, ConfigError> {
            let (line, v) = get(key).unwrap_or((0, default));
            parse_decimal(v).ok_or_else(|| ConfigError::Parse { line, msg: format!("{key}: not a decimal: {v}") })
        };

        let n = count("n", 4)?;
        let f = count("f", 1)?;
        let d_units = dec("d", "1")?;
        if d_units <= Ratio::from_integer(0) {
            return Err(ConfigError::Timing("d must be positive".into()));
        }
        let unit = Ratio::from_integer(TICKS_PER_D) / d_units;
        let ticks = |r: Ratio<i64>, line: usize, what: &str| -> Result<Span, ConfigError> {
            let t = r * unit;
            if !t.is_integer() {
                return Err(ConfigError::Parse { line, msg: format!("{what} is not a whole number of ticks (d/{TICKS_PER_D})") });
            }
            Ok(Span(t.to_integer()))
        };
        let span = |key: &str, default: &str| -> Result<Span, ConfigError> {
            let line = get(key).map_or(0, |(l, _)| l);
            ticks(dec(key, default)?, line, key)
        };
        let time_of = |s: &str, line: usize, what: &str| -> Result<RealTime, ConfigError> {
            let r = parse_decimal(s).ok_or_else(|| ConfigError::Parse { line, msg: format!("{what}: not a time: {s}") })?;
            let t = ticks(r, line, what)?;
            if t.0 < 0 {
                return Err(ConfigError::Parse { line, msg: format!("{what}: negative time") });
            }
            Ok(RealTime(t.0 as u64))
        };

        let d = Span(TICKS_PER_D);
        let delta = span("delta", "0.9")?;
        let pi = span("pi", "0.1")?;
        let rho = dec("rho", "0")?;
        let general = NodeId(count("general", 0)? as u32);
        let seed = match get("seed") {
            None => 0,
            Some((line, v)) => v.parse().map_err(|_| ConfigError::Parse { line, msg: format!("seed: {v}") })?,
        };
        let horizon = match get("horizon") {
            None => RealTime(200 * TICKS_PER_D as u64),
            Some((line, v)) => time_of(v, line, "horizon")?,
        };
        let mode = match get("mode") {
            None | Some((_, "full")) => Mode::Full,
            Some((_, "broadcast")) => Mode::BroadcastOnly,
            Some((line, v)) => return Err(ConfigError::Parse { line, msg: format!("mode: expected full or broadcast, got {v}") }),
        };
        let tick = span("tick", "0.25")?;
        if tick.0 <= 0 {
            return Err(ConfigError::Timing("tick must be positive".into()));
        }
        let trace_ticks = match get("trace.ticks") {
            None | Some((_, "true")) => true,
            Some((_, "false")) => false,
            Some((line, v)) => return Err(ConfigError::Parse { line, msg: format!("trace.ticks: {v}") }),
        };

        let mut roles = vec![Role::Correct; n];
        let mut strategies = BTreeMap::new();
        let mut clocks: Vec<ClockModel> = (0..n as u32).map(ClockModel::identity).collect();
        let mut random_clocks = false;
        let mut script = Vec::new();

        for (line, key, v) in &kv {
            let line = *line;
            let bad = |msg: String| ConfigError::Parse { line, msg };
            if let Some(idx) = key.strip_prefix("role.") {
                let i: usize = idx.parse().map_err(|_| bad(format!("role index: {idx}")))?;
                if i >= n {
                    return Err(bad(format!("role.{i}: node out of range")));
                }
                let words: Vec<&str> = v.split_whitespace().collect();
                roles[i] = match words.as_slice() {
                    ["correct"] => Role::Correct,
                    ["byzantine", name] => Role::Byzantine(name.to_string()),
                    ["recovering", t] => Role::Recovering { at: time_of(t, line, "recovering")? },
                    _ => return Err(bad(format!("role.{i}: expected correct | byzantine <strategy> | recovering <t>"))),
                };
            } else if let Some(name) = key.strip_prefix("strategy.") {
                let mut words = v.split_whitespace();
                let kind = words.next().ok_or_else(|| bad(format!("strategy.{name}: missing kind")))?;
                let mut params = BTreeMap::new();
                for w in words {
                    let (pk, pv) = w.split_once('=').ok_or_else(|| bad(format!("strategy.{name}: expected key=value, got {w}")))?;
                    params.insert(pk.to_string(), pv.to_string());
                }
                strategies.insert(name.to_string(), StrategySpec { kind: kind.to_string(), params });
            } else if let Some(idx) = key.strip_prefix("clock.") {
                let i: usize = idx.parse().map_err(|_| bad(format!("clock index: {idx}")))?;
                if i >= n {
                    return Err(bad(format!("clock.{i}: node out of range")));
                }
                let words: Vec<&str> = v.split_whitespace().collect();
                let [rate, offset] = words.as_slice() else {
                    return Err(bad(format!("clock.{i}: expected <rate> <offset>")));
                };
                let rate = parse_decimal(rate).ok_or_else(|| bad(format!("clock.{i}: rate {rate}")))?;
                let offset = time_of(offset, line, "clock offset")?;
                clocks[i] = ClockModel { owner: i as u32, rate, offset: offset.0 };
            } else if key == "clocks" {
                random_clocks = match v.as_str() {
                    "random" => true,
                    "identity" => false,
                    _ => return Err(bad(format!("clocks: expected random or identity, got {v}"))),
                };
            } else if key.starts_with("script.") {
                script.push(parse_script(v, line, n, &time_of)?);
            } else if !KNOWN.contains(&key.as_str()) {
                return Err(bad(format!("unknown key `{key}`")));
            }
        }
        script.sort_by_key(|e| e.at);

        let cfg = ScenarioConfig {
            n,
            f,
            unit,
            d,
            delta,
            pi,
            rho,
            general,
            roles,
            strategies,
            clocks,
            random_clocks,
            script,
            seed,
            horizon,
            mode,
            inflight_max: count("inflight_max", 32)?,
            queue_max: count("queue_max", 2_000_000)?,
            tick,
            trace_ticks,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let c = self.constants()?;
        if self.general.index() >= self.n {
            return Err(ConfigError::Invalid(format!("general {} out of range", self.general.0)));
        }
        let lo = Ratio::from_integer(1) - c.rho;
        let hi = Ratio::from_integer(1) + c.rho;
        for clk in &self.clocks {
            if clk.rate < lo || clk.rate > hi {
                return Err(ConfigError::Invalid(format!("clock.{} rate outside [1-rho, 1+rho]", clk.owner)));
            }
        }
        for r in &self.roles {
            if let Role::Byzantine(name) = r {
                let kind = self.strategies.get(name).map_or(name.as_str(), |s| s.kind.as_str());
                if !crate::adversary::KINDS.contains(&kind) {
                    return Err(ConfigError::Invalid(format!("unknown strategy `{name}`")));
                }
            }
        }
        Ok(())
    }

    pub fn constants(&self) -> Result<ProtocolConstants, ConfigError> {
        derive_constants(self.n, self.f, self.d, self.delta, self.pi, self.rho)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_horizon(mut self, horizon: RealTime) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn is_byzantine(&self, i: NodeId) -> bool {
        matches!(self.roles[i.index()], Role::Byzantine(_))
    }

    /// Whether node `i` counts as correct at real time `t`: scripted correct,
    /// or recovered at least `Δ_node` ago.
    pub fn correct_at(&self, c: &ProtocolConstants, i: NodeId, t: RealTime) -> bool {
        match &self.roles[i.index()] {
            Role::Correct => true,
            Role::Byzantine(_) => false,
            Role::Recovering { at } => t.0 >= at.0 + c.d_node.0 as u64,
        }
    }

    /// The strategy spec for a byzantine node, with bare kind names allowed.
    pub fn strategy_of(&self, i: NodeId) -> Option<StrategySpec> {
        match &self.roles[i.index()] {
            Role::Byzantine(name) => Some(
                self.strategies
                    .get(name)
                    .cloned()
                    .unwrap_or_else(|| StrategySpec { kind: name.clone(), params: BTreeMap::new() }),
            ),
            _ => None,
        }
    }

    /// Converts a scenario time (in scenario units) to ticks.
    pub fn units_to_span(&self, r: Ratio<i64>) -> Span {
        Span((r * self.unit).to_integer())
    }

    /// The last instant at which the system may be outside its model:
    /// corruption, network faults, or too many nodes not yet correct.
    pub fn iota0(&self, c: &ProtocolConstants) -> RealTime {
        let mut t = 0u64;
        for e in &self.script {
            match &e.action {
                Action::Corrupt => t = t.max(e.at.0),
                Action::NetFault(nf) => t = t.max(nf.until.0),
                _ => {}
            }
        }
        let byz = self.roles.iter().filter(|r| matches!(r, Role::Byzantine(_))).count();
        let mut recs: Vec<u64> = self
            .roles
            .iter()
            .filter_map(|r| match r {
                Role::Recovering { at } => Some(at.0),
                _ => None,
            })
            .collect();
        recs.sort_unstable();
        let excess = (byz + recs.len()).saturating_sub(self.f);
        if excess > 0 {
            let needed = recs.get(excess - 1).copied().unwrap_or(u64::MAX / 4);
            t = t.max(needed + c.d_node.0 as u64);
        }
        RealTime(t)
    }

    /// Start of the window over which properties are checked. A run that
    /// starts from the clean initial state with no faults beyond `f` is
    /// stable from time zero; otherwise stability follows `Δ_stb` after
    /// `iota0`.
    pub fn iota1(&self, c: &ProtocolConstants) -> RealTime {
        let t0 = self.iota0(c);
        if t0.0 == 0 && !self.script.iter().any(|e| matches!(e.action, Action::Corrupt)) {
            RealTime(0)
        } else {
            t0.plus(c.d_stb)
        }
    }
}

const KNOWN: &[&str] = &[
    "n", "f", "d", "delta", "pi", "rho", "general", "seed", "horizon", "mode", "tick", "trace.ticks", "inflight_max", "queue_max",
];

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => in_quote = !in_quote,
            '#' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v)
}

fn parse_script(
    v: &str,
    line: usize,
    n: usize,
    time_of: &dyn Fn(&str, usize, &str) -> Result<RealTime, ConfigError>,
) -> Result<ScriptEntry, ConfigError> {
    let bad = |msg: String| ConfigError::Parse { line, msg };
    let words: Vec<&str> = v.split_whitespace().collect();
    let (t, rest) = words.split_first().ok_or_else(|| bad("empty script entry".into()))?;
    let at = time_of(t, line, "script time")?;
    let node = |s: &str| -> Result<NodeId, ConfigError> {
        let i: usize = s.parse().map_err(|_| bad(format!("not a node: {s}")))?;
        if i >= n {
            return Err(bad(format!("node {i} out of range")));
        }
        Ok(NodeId(i as u32))
    };
    let value = |s: &str| Value::parse(s).map_err(|e| bad(e));
    let action = match rest {
        ["initiate", m] => Action::Initiate(value(m)?),
        ["corrupt"] => Action::Corrupt,
        ["netfault", until, rule @ ..] => {
            let until = time_of(until, line, "netfault end")?;
            if until < at {
                return Err(bad("netfault ends before it starts".into()));
            }
            let mut parsed = None;
            let (mut from, mut to) = (None, None);
            let mut it = rule.iter();
            while let Some(w) = it.next() {
                match *w {
                    "drop" => parsed = Some(FaultRule::Drop),
                    "dup" => parsed = Some(FaultRule::Duplicate),
                    "delay" => {
                        let x = it.next().ok_or_else(|| bad("delay needs an amount".into()))?;
                        parsed = Some(FaultRule::Delay(Span(time_of(x, line, "delay")?.0 as i64)));
                    }
                    w if w.starts_with("from=") => from = Some(node(&w[5..])?),
                    w if w.starts_with("to=") => to = Some(node(&w[3..])?),
                    w => return Err(bad(format!("netfault: unknown word {w}"))),
                }
            }
            let rule = parsed.ok_or_else(|| bad("netfault needs drop, dup or delay".into()))?;
            Action::NetFault(NetFault { until, rule, from, to })
        }
        ["bm-invoke", p, m, k] => {
            let k: Round = k.parse().map_err(|_| bad(format!("round: {k}")))?;
            Action::BmInvoke { p: node(p)?, m: value(m)?, k }
        }
        ["bcast-anchor"] => Action::BcastAnchor { spread: Span(6 * TICKS_PER_D) },
        ["bcast-anchor", s] => Action::BcastAnchor { spread: Span(time_of(s, line, "spread")?.0 as i64) },
        _ => return Err(bad(format!("unknown script action: {}", rest.join(" ")))),
    };
    Ok(ScriptEntry { at, action })
}
