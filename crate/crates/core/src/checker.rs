//! Post-hoc trace verification. Every property is evaluated over the stable
//! part of a run, with exact rational real times.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_rational::Ratio;

use crate::constants::ProtocolConstants;
use crate::error::ConfigError;
use crate::message::{NodeId, Round, Value};
use crate::scenario::ScenarioConfig;
use crate::sim::clocks_for;
use crate::time::{ClockModel, LocalTime, RealTime, Span};
use crate::trace::{EventKind, Line, TraceEvent};

/// Real time in ticks, exact.
type Rt = Ratio<i128>;

pub const PROPERTIES: &[&str] = &[
    "agreement",
    "validity",
    "termination",
    "timeliness-1a",
    "timeliness-1b",
    "timeliness-1c",
    "timeliness-1d",
    "timeliness-2",
    "timeliness-4a",
    "timeliness-4b",
    "ia-1a",
    "ia-1b",
    "ia-1c",
    "ia-1d",
    "ia-2",
    "ia-3a",
    "ia-3b",
    "ia-3c",
    "ia-4a",
    "ia-4b",
    "tps-1",
    "tps-2",
    "tps-3",
    "tps-4",
];

pub const DIAGNOSTICS: &[&str] =
    &["diag-cor-2m2", "diag-cor-2m4", "diag-good-reset", "diag-faulty-reset", "diag-before-support"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub id: &'static str,
    pub diagnostic: bool,
    /// Instances the property was evaluated on.
    pub checked: usize,
    pub violations: usize,
    /// Trace line numbers (1-based) of the first violation.
    pub witnesses: Vec<usize>,
    pub note: Option<String>,
}

impl Verdict {
    fn new(id: &'static str) -> Self {
        Verdict { id, diagnostic: id.starts_with("diag-"), checked: 0, violations: 0, witnesses: Vec::new(), note: None }
    }

    pub fn pass(&self) -> bool {
        self.violations == 0
    }

    fn tally(&mut self, ok: bool, witnesses: impl FnOnce() -> Vec<usize>) {
        self.checked += 1;
        if !ok {
            if self.violations == 0 {
                let mut w: Vec<usize> = witnesses().into_iter().map(|i| i + 1).collect();
                w.sort_unstable();
                w.dedup();
                self.witnesses = w;
            }
            self.violations += 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub verdicts: Vec<Verdict>,
}

impl Report {
    pub fn get(&self, id: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.id == id)
    }

    /// All non-diagnostic properties hold.
    pub fn passed(&self) -> bool {
        self.verdicts.iter().filter(|v| !v.diagnostic).all(Verdict::pass)
    }

    pub fn diagnostics_passed(&self) -> bool {
        self.verdicts.iter().filter(|v| v.diagnostic).all(Verdict::pass)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.verdicts.iter().filter(|v| !v.pass()).map(|v| v.id).collect()
    }

    /// One line per property: id, PASS/FAIL, counts, witness lines.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for v in &self.verdicts {
            let status = if v.pass() { "PASS" } else { "FAIL" };
            let _ = write!(s, "{:<20} {} checked={} violations={}", v.id, status, v.checked, v.violations);
            if !v.witnesses.is_empty() {
                let lines: Vec<String> = v.witnesses.iter().map(|w| w.to_string()).collect();
                let _ = write!(s, " witnesses={}", lines.join(","));
            }
            if let Some(note) = &v.note {
                let _ = write!(s, " note=\"{note}\"");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug)]
struct Ret {
    idx: usize,
    node: NodeId,
    g: NodeId,
    m: Option<Value>,
    t: Rt,
    anchor_rt: Rt,
}

#[derive(Clone, Debug)]
struct Acc {
    idx: usize,
    node: NodeId,
    g: NodeId,
    m: Value,
    t: Rt,
    anchor_rt: Rt,
}

#[derive(Clone, Debug)]
struct Inv {
    idx: usize,
    node: NodeId,
    g: NodeId,
    m: Value,
    t: Rt,
    ok: bool,
}

#[derive(Clone, Debug)]
struct LineEv {
    idx: usize,
    node: NodeId,
    g: NodeId,
    m: Value,
    line: Line,
    t: Rt,
}

#[derive(Clone, Debug)]
struct Bcast {
    idx: usize,
    node: NodeId,
    g: NodeId,
    p: NodeId,
    m: Value,
    k: Round,
    t: Rt,
    local: LocalTime,
    anchor: LocalTime,
    anchor_rt: Rt,
}

#[derive(Clone, Debug)]
struct Det {
    idx: usize,
    node: NodeId,
    g: NodeId,
    p: NodeId,
    t: Rt,
    local: LocalTime,
    anchor: LocalTime,
}

#[derive(Clone, Debug)]
struct AnchorEv {
    node: NodeId,
    g: NodeId,
    anchor: LocalTime,
    anchor_rt: Rt,
}

struct Ctx<'a> {
    cfg: &'a ScenarioConfig,
    c: ProtocolConstants,
    clocks: Vec<ClockModel>,
    iota1: Rt,
    horizon: Rt,
    d: Rt,
    returns: Vec<Ret>,
    iaccepts: Vec<Acc>,
    invokes: Vec<Inv>,
    lines: Vec<LineEv>,
    initiations: Vec<(usize, NodeId, Value, Rt)>,
    bm_invokes: Vec<Bcast>,
    accepts: Vec<Bcast>,
    detections: Vec<Det>,
    anchors: Vec<AnchorEv>,
}

fn rt(t: RealTime) -> Rt {
    Ratio::from_integer(t.0 as i128)
}

fn span(s: Span) -> Rt {
    Ratio::from_integer(s.0 as i128)
}

fn abs(x: Rt) -> Rt {
    if x < Ratio::from_integer(0) {
        -x
    } else {
        x
    }
}

impl<'a> Ctx<'a> {
    fn new(trace: &[TraceEvent], cfg: &'a ScenarioConfig) -> Result<Self, ConfigError> {
        let c = cfg.constants()?;
        let clocks = clocks_for(cfg);
        let mut cx = Ctx {
            iota1: rt(cfg.iota1(&c)),
            horizon: rt(cfg.horizon),
            d: span(c.d),
            cfg,
            c,
            clocks,
            returns: Vec::new(),
            iaccepts: Vec::new(),
            invokes: Vec::new(),
            lines: Vec::new(),
            initiations: Vec::new(),
            bm_invokes: Vec::new(),
            accepts: Vec::new(),
            detections: Vec::new(),
            anchors: Vec::new(),
        };
        for (idx, e) in trace.iter().enumerate() {
            if e.node.index() >= cfg.n || !cx.stable(e.node, rt(e.t_real)) {
                continue;
            }
            let t = rt(e.t_real);
            let node = e.node;
            let arl = |a: LocalTime| cx.clocks[node.index()].real_of(a, e.t_real);
            match &e.event {
                EventKind::Decide { g, m, anchor, .. } => cx.returns.push(Ret {
                    idx,
                    node,
                    g: *g,
                    m: Some(m.clone()),
                    t,
                    anchor_rt: arl(*anchor),
                }),
                EventKind::Abort { g, anchor, .. } => cx.returns.push(Ret {
                    idx,
                    node,
                    g: *g,
                    m: None,
                    t,
                    anchor_rt: arl(*anchor),
                }),
                EventKind::IAccept { g, m, anchor } => {
                    cx.iaccepts.push(Acc { idx, node, g: *g, m: m.clone(), t, anchor_rt: arl(*anchor) })
                }
                EventKind::Invoke { g, m, ok } => cx.invokes.push(Inv { idx, node, g: *g, m: m.clone(), t, ok: *ok }),
                EventKind::Line { g, m, line } => cx.lines.push(LineEv { idx, node, g: *g, m: m.clone(), line: *line, t }),
                EventKind::GeneralInitiate { g, m } if *g == node => cx.initiations.push((idx, *g, m.clone(), t)),
                EventKind::BmInvoke { g, m, k, anchor } => cx.bm_invokes.push(Bcast {
                    idx,
                    node,
                    g: *g,
                    p: node,
                    m: m.clone(),
                    k: *k,
                    t,
                    local: e.local_time,
                    anchor: *anchor,
                    anchor_rt: arl(*anchor),
                }),
                EventKind::Accept { g, p, m, k, anchor } => cx.accepts.push(Bcast {
                    idx,
                    node,
                    g: *g,
                    p: *p,
                    m: m.clone(),
                    k: *k,
                    t,
                    local: e.local_time,
                    anchor: *anchor,
                    anchor_rt: arl(*anchor),
                }),
                EventKind::Broadcaster { g, p, anchor } => {
                    cx.detections.push(Det { idx, node, g: *g, p: *p, t, local: e.local_time, anchor: *anchor })
                }
                EventKind::Anchor { g, anchor } => {
                    cx.anchors.push(AnchorEv { node, g: *g, anchor: *anchor, anchor_rt: arl(*anchor) })
                }
                _ => {}
            }
        }
        Ok(cx)
    }

    fn ds(&self, k: i64) -> Rt {
        self.d * Ratio::from_integer(k as i128)
    }

    fn sp(&self, s: Span) -> Rt {
        span(s)
    }

    /// Correct at `t`, and `t` inside the checked window.
    fn stable(&self, node: NodeId, t: Rt) -> bool {
        t >= self.iota1 && self.correct(node, t)
    }

    fn correct(&self, node: NodeId, t: Rt) -> bool {
        let whole = t.floor().to_integer().max(0) as u64;
        self.cfg.correct_at(&self.c, node, RealTime(whole))
    }

    fn correct_nodes(&self, t: Rt) -> Vec<NodeId> {
        (0..self.cfg.n as u32).map(NodeId).filter(|&q| self.correct(q, t)).collect()
    }

    fn within_horizon(&self, deadline: Rt) -> bool {
        deadline <= self.horizon
    }

    /// Whether a decide of `m` for `g` with this anchor stems from an
    /// initiation by a correct General.
    fn validity_case(&self, g: NodeId, m: &Value, anchor_rt: Rt) -> bool {
        self.initiations.iter().any(|(_, ig, im, t0)| {
            *ig == g && im == m && anchor_rt >= *t0 - self.d && anchor_rt <= *t0 + self.ds(4)
        })
    }

    /// Broadcast-layer participants of the execution anchored near `a`.
    fn anchored_near(&self, g: NodeId, a: Rt) -> BTreeMap<NodeId, Vec<&AnchorEv>> {
        let mut out: BTreeMap<NodeId, Vec<&AnchorEv>> = BTreeMap::new();
        for e in &self.anchors {
            if e.g == g && abs(e.anchor_rt - a) <= self.sp(self.c.tau_skew) {
                out.entry(e.node).or_default().push(e);
            }
        }
        out
    }

    /// True when every correct node took an anchor near `a`, the premise of
    /// the broadcast properties.
    fn all_anchored(&self, g: NodeId, a: Rt, t: Rt) -> Option<BTreeMap<NodeId, Vec<&AnchorEv>>> {
        let near = self.anchored_near(g, a);
        self.correct_nodes(t).iter().all(|q| near.contains_key(q)).then_some(near)
    }
}

/// Checks every property (and, when asked, the diagnostics) on a trace.
pub fn check(trace: &[TraceEvent], cfg: &ScenarioConfig, diagnostics: bool) -> Result<Report, ConfigError> {
    let cx = Ctx::new(trace, cfg)?;
    let mut verdicts = Vec::new();
    core_properties(&cx, &mut verdicts);
    separation(&cx, &mut verdicts);
    initiator_properties(&cx, &mut verdicts);
    broadcast_properties(&cx, &mut verdicts);
    let order = |id: &str| PROPERTIES.iter().position(|p| *p == id).unwrap_or(usize::MAX);
    verdicts.sort_by_key(|v: &Verdict| order(v.id));
    if diagnostics {
        diagnostic_checks(&cx, &mut verdicts);
    }
    Ok(Report { verdicts })
}

fn core_properties(cx: &Ctx, out: &mut Vec<Verdict>) {
    let mut agreement = Verdict::new("agreement");
    let mut t1a = Verdict::new("timeliness-1a");
    let mut t1b = Verdict::new("timeliness-1b");
    let mut t1c = Verdict::new("timeliness-1c");
    let mut t1d = Verdict::new("timeliness-1d");
    let agr = cx.sp(cx.c.d_agr);

    for e in &cx.returns {
        let Some(m) = &e.m else { continue };
        if e.anchor_rt >= e.t + Ratio::from_integer(1) || e.t - e.anchor_rt > agr {
            t1d.tally(false, || vec![e.idx]);
        } else {
            t1d.tally(true, Vec::new);
        }
        if e.anchor_rt < cx.iota1 || !cx.within_horizon(e.t + agr) {
            continue;
        }
        let mut matched = vec![e];
        for q in cx.correct_nodes(e.anchor_rt.max(cx.iota1)) {
            if q == e.node {
                continue;
            }
            let best = cx
                .returns
                .iter()
                .filter(|r| r.node == q && r.g == e.g && r.m.as_ref() == Some(m) && abs(r.t - e.t) <= agr)
                .min_by_key(|r| abs(r.t - e.t));
            match best {
                None => {
                    let conflicting: Vec<usize> = cx
                        .returns
                        .iter()
                        .filter(|r| r.node == q && r.g == e.g && abs(r.t - e.t) <= agr)
                        .map(|r| r.idx)
                        .collect();
                    agreement.tally(false, || [vec![e.idx], conflicting].concat());
                }
                Some(r) => {
                    agreement.tally(true, Vec::new);
                    let bound = if cx.validity_case(e.g, m, e.anchor_rt) { cx.ds(2) } else { cx.ds(3) };
                    t1a.tally(abs(r.t - e.t) <= bound, || vec![e.idx, r.idx]);
                    t1b.tally(abs(r.anchor_rt - e.anchor_rt) <= cx.sp(cx.c.tau_skew), || vec![e.idx, r.idx]);
                    matched.push(r);
                }
            }
        }
        // Anchors against the interval spanned by correct invocations of
        // (g, m) that could have fed this execution.
        let lo = matched.iter().map(|r| r.anchor_rt).min().expect("non-empty") - cx.ds(4);
        let hi = matched.iter().map(|r| r.t).max().expect("non-empty");
        let inv: Vec<&Inv> =
            cx.invokes.iter().filter(|i| i.ok && i.g == e.g && &i.m == m && i.t >= lo && i.t <= hi).collect();
        if let (Some(t1), Some(t2)) = (inv.iter().map(|i| i.t).min(), inv.iter().map(|i| i.t).max()) {
            for r in &matched {
                let ok = r.anchor_rt >= t1 - cx.ds(2) && r.anchor_rt <= t2;
                t1c.tally(ok, || inv.iter().map(|i| i.idx).chain([r.idx]).collect());
            }
        }
    }
    let slack = cx
        .returns
        .iter()
        .filter(|e| e.m.is_some() && e.t - e.anchor_rt > agr && e.t - e.anchor_rt <= agr + cx.ds(8))
        .count();
    if slack > 0 {
        t1d.note = Some(format!("{slack} decide(s) within the +8d slack"));
    }

    // Validity and its timing, per initiation by a correct General.
    let mut validity = Verdict::new("validity");
    let mut t2 = Verdict::new("timeliness-2");
    for (idx, g, m, t0) in &cx.initiations {
        if !cx.within_horizon(*t0 + cx.ds(4)) {
            continue;
        }
        for q in cx.correct_nodes(*t0) {
            let found = cx
                .returns
                .iter()
                .filter(|r| r.node == q && r.g == *g && r.m.as_ref() == Some(m) && r.t >= *t0 && r.t <= *t0 + agr + cx.ds(8))
                .min_by_key(|r| r.t);
            match found {
                None => {
                    let others: Vec<usize> =
                        cx.returns.iter().filter(|r| r.node == q && r.g == *g && r.t >= *t0).take(1).map(|r| r.idx).collect();
                    validity.tally(false, || [vec![*idx], others].concat());
                }
                Some(r) => {
                    validity.tally(true, Vec::new);
                    let ok = r.anchor_rt >= *t0 - cx.d && r.anchor_rt <= r.t && r.t <= *t0 + cx.ds(4);
                    t2.tally(ok, || vec![*idx, r.idx]);
                }
            }
        }
    }

    // Termination: every i-accept leads to one return in time.
    let mut termination = Verdict::new("termination");
    for a in &cx.iaccepts {
        if a.anchor_rt < cx.iota1 {
            continue;
        }
        // Only an invocation of this execution counts: after the node's
        // previous i-accept for g, within the removal horizon, and no
        // earlier than the anchor skew allows.
        let since = cx
            .iaccepts
            .iter()
            .filter(|b| b.node == a.node && b.g == a.g && b.t < a.t)
            .map(|b| b.t)
            .max()
            .unwrap_or_else(|| a.t - cx.sp(cx.c.d_rmv))
            .max(a.t - cx.sp(cx.c.d_rmv));
        let invoked = cx
            .invokes
            .iter()
            .filter(|i| i.node == a.node && i.g == a.g && i.m == a.m && i.ok && i.t <= a.t && i.t > since && i.t >= a.anchor_rt - cx.ds(6))
            .map(|i| i.t)
            .next_back();
        let deadline = match invoked {
            Some(ti) => ti + agr,
            None => a.anchor_rt + agr + cx.ds(7),
        };
        if !cx.within_horizon(deadline) {
            continue;
        }
        let ok = cx.returns.iter().any(|r| r.node == a.node && r.g == a.g && r.t >= a.t && r.t <= deadline);
        let late: Vec<usize> =
            cx.returns.iter().filter(|r| r.node == a.node && r.g == a.g && r.t >= a.t).take(1).map(|r| r.idx).collect();
        termination.tally(ok, || [vec![a.idx], late].concat());
    }
    // At most one return per i-accept.
    let mut per_node: BTreeMap<(NodeId, NodeId), Vec<(Rt, bool, usize)>> = BTreeMap::new();
    for r in &cx.returns {
        per_node.entry((r.node, r.g)).or_default().push((r.t, true, r.idx));
    }
    for a in &cx.iaccepts {
        per_node.entry((a.node, a.g)).or_default().push((a.t, false, a.idx));
    }
    for seq in per_node.values_mut() {
        seq.sort_by_key(|x| (x.0, x.2));
        let mut prev_return: Option<usize> = None;
        for &(_, is_return, idx) in seq.iter() {
            if is_return {
                if let Some(p) = prev_return {
                    termination.tally(false, || vec![p, idx]);
                }
                prev_return = Some(idx);
            } else {
                prev_return = None;
            }
        }
    }

    out.extend([agreement, validity, termination, t1a, t1b, t1c, t1d, t2]);
}

/// Pairwise anchor separation for m ≠ m′ and m = m′.
fn separate<T>(
    items: &[T],
    key: impl Fn(&T) -> (NodeId, Option<&Value>, Rt, usize),
    cx: &Ctx,
    diff: &mut Verdict,
    same: &mut Verdict,
) {
    let far = cx.sp(cx.c.d_rmv) * Ratio::from_integer(2) - cx.ds(3);
    let mut sorted: Vec<_> = items.iter().map(&key).collect();
    sorted.sort_by_key(|x| (x.0, x.2, x.3));
    for (i, a) in sorted.iter().enumerate() {
        for b in &sorted[i + 1..] {
            if b.0 != a.0 {
                break;
            }
            let gap = b.2 - a.2;
            if gap > far {
                break;
            }
            match (a.1, b.1) {
                (Some(x), Some(y)) if x != y => diff.tally(gap > cx.ds(4), || vec![a.3, b.3]),
                (Some(_), Some(_)) => same.tally(gap <= cx.ds(6), || vec![a.3, b.3]),
                _ => {}
            }
        }
    }
}

fn separation(cx: &Ctx, out: &mut Vec<Verdict>) {
    let mut t4a = Verdict::new("timeliness-4a");
    let mut t4b = Verdict::new("timeliness-4b");
    let decides: Vec<&Ret> = cx.returns.iter().filter(|r| r.m.is_some() && r.anchor_rt >= cx.iota1).collect();
    separate(&decides, |r| (r.g, r.m.as_ref(), r.anchor_rt, r.idx), cx, &mut t4a, &mut t4b);
    let mut ia4a = Verdict::new("ia-4a");
    let mut ia4b = Verdict::new("ia-4b");
    let accs: Vec<&Acc> = cx.iaccepts.iter().filter(|a| a.anchor_rt >= cx.iota1).collect();
    separate(&accs, |a| (a.g, Some(&a.m), a.anchor_rt, a.idx), cx, &mut ia4a, &mut ia4b);
    out.extend([t4a, t4b, ia4a, ia4b]);
}

fn initiator_properties(cx: &Ctx, out: &mut Vec<Verdict>) {
    let agr = cx.sp(cx.c.d_agr);
    let mut ia1a = Verdict::new("ia-1a");
    let mut ia1b = Verdict::new("ia-1b");
    let mut ia1c = Verdict::new("ia-1c");
    let mut ia1d = Verdict::new("ia-1d");
    for (idx, g, m, t0) in &cx.initiations {
        if !cx.within_horizon(*t0 + cx.ds(4)) {
            continue;
        }
        let mut got: Vec<&Acc> = Vec::new();
        for q in cx.correct_nodes(*t0) {
            let a = cx.iaccepts.iter().find(|a| a.node == q && a.g == *g && a.m == *m && a.t >= *t0 && a.t <= *t0 + agr);
            match a {
                Some(a) if a.t <= *t0 + cx.ds(4) => {
                    ia1a.tally(true, Vec::new);
                    got.push(a);
                }
                Some(a) => {
                    ia1a.tally(false, || vec![*idx, a.idx]);
                    got.push(a);
                }
                None => ia1a.tally(false, || vec![*idx]),
            }
        }
        for (i, a) in got.iter().enumerate() {
            ia1d.tally(a.anchor_rt >= *t0 - cx.d && a.anchor_rt <= a.t && a.t <= *t0 + cx.ds(4), || vec![*idx, a.idx]);
            for b in &got[i + 1..] {
                ia1b.tally(abs(a.t - b.t) <= cx.ds(2), || vec![a.idx, b.idx]);
                ia1c.tally(abs(a.anchor_rt - b.anchor_rt) <= cx.d, || vec![a.idx, b.idx]);
            }
        }
    }

    let mut ia2 = Verdict::new("ia-2");
    let mut ia3a = Verdict::new("ia-3a");
    let mut ia3b = Verdict::new("ia-3b");
    let mut ia3c = Verdict::new("ia-3c");
    let rmv = cx.sp(cx.c.d_rmv);
    for a in &cx.iaccepts {
        let ok_invokes = || cx.invokes.iter().filter(|i| i.ok && i.g == a.g && i.m == a.m);
        ia2.tally(ok_invokes().any(|i| i.t <= a.t && a.t - i.t <= rmv), || vec![a.idx]);
        ia3b.tally(ok_invokes().any(|i| i.t >= a.anchor_rt && i.t <= a.t + agr), || vec![a.idx]);
        ia3c.tally(a.anchor_rt <= a.t && a.t - a.anchor_rt <= agr + cx.ds(8), || vec![a.idx]);
        if a.t - a.anchor_rt <= agr && a.anchor_rt >= cx.iota1 && cx.within_horizon(a.t + cx.ds(2)) {
            for q in cx.correct_nodes(a.anchor_rt) {
                if q == a.node {
                    continue;
                }
                let ok = cx.iaccepts.iter().any(|b| {
                    b.node == q
                        && b.g == a.g
                        && b.m == a.m
                        && abs(b.t - a.t) <= cx.ds(2)
                        && abs(b.anchor_rt - a.anchor_rt) <= cx.sp(cx.c.tau_skew)
                });
                ia3a.tally(ok, || vec![a.idx]);
            }
        }
    }
    out.extend([ia1a, ia1b, ia1c, ia1d, ia2, ia3a, ia3b, ia3c]);
}

fn broadcast_properties(cx: &Ctx, out: &mut Vec<Verdict>) {
    let phi = cx.sp(cx.c.phi);
    let phi_ticks = cx.c.phi.0;
    let mut tps1 = Verdict::new("tps-1");
    for b in &cx.bm_invokes {
        if b.local.since(b.anchor).0 > phi_ticks * (2 * b.k as i64 - 1) || b.anchor_rt < cx.iota1 {
            continue;
        }
        if !cx.within_horizon(b.t + cx.ds(3)) {
            continue;
        }
        let Some(near) = cx.all_anchored(b.g, b.anchor_rt, b.t) else { continue };
        for (q, _) in near {
            let ok = cx.accepts.iter().any(|a| {
                a.node == q
                    && a.g == b.g
                    && a.p == b.node
                    && a.m == b.m
                    && a.k == b.k
                    && abs(a.t - b.t) <= cx.ds(3)
                    && a.local.since(a.anchor).0 <= phi_ticks * (2 * b.k as i64 + 1)
            });
            tps1.tally(ok, || vec![b.idx]);
        }
    }

    let horizon_b = cx.sp(cx.c.broadcast_horizon()) + cx.ds(2);
    let mut tps2 = Verdict::new("tps-2");
    for a in &cx.accepts {
        if !cx.correct(a.p, a.t) {
            continue;
        }
        let ok = cx
            .bm_invokes
            .iter()
            .any(|b| b.node == a.p && b.g == a.g && b.m == a.m && b.k == a.k && b.t <= a.t && a.t - b.t <= horizon_b);
        tps2.tally(ok, || vec![a.idx]);
    }

    let mut tps3 = Verdict::new("tps-3");
    let mut tps4 = Verdict::new("tps-4");
    for a in &cx.accepts {
        if a.anchor_rt < cx.iota1 {
            continue;
        }
        let elapsed = a.local.since(a.anchor).0.max(0);
        let r = (elapsed + phi_ticks - 1) / phi_ticks;
        // The relay deadline must fall inside the instance lifetime.
        let relay_applies = r + 2 <= 2 * cx.c.f as i64 + 3;
        let Some(near) = cx.all_anchored(a.g, a.anchor_rt, a.t) else { continue };
        for (q, anchors) in near {
            let relay_deadline = anchors.iter().map(|x| x.anchor_rt).max().expect("non-empty")
                + phi * Ratio::from_integer(r as i128 + 2)
                + cx.d;
            if relay_applies && cx.within_horizon(relay_deadline) {
                let ok = cx.accepts.iter().any(|b| {
                    b.node == q
                        && b.g == a.g
                        && (b.p, &b.m, b.k) == (a.p, &a.m, a.k)
                        && b.local.since(b.anchor).0 <= phi_ticks * (r + 2)
                });
                tps3.tally(ok, || vec![a.idx]);
            }
            let detect_deadline = anchors.iter().map(|x| x.anchor_rt).max().expect("non-empty")
                + phi * Ratio::from_integer(2 * a.k as i128 + 2)
                + cx.d;
            if cx.within_horizon(detect_deadline) {
                let ok = cx.detections.iter().any(|dt| {
                    dt.node == q
                        && dt.g == a.g
                        && dt.p == a.p
                        && anchors.iter().any(|x| x.anchor == dt.anchor)
                        && dt.local.since(dt.anchor).0 <= phi_ticks * (2 * a.k as i64 + 2)
                });
                tps4.tally(ok, || vec![a.idx]);
            }
        }
    }
    for dt in &cx.detections {
        if !cx.correct(dt.p, dt.t) {
            continue;
        }
        let ok = cx.bm_invokes.iter().any(|b| b.node == dt.p && b.g == dt.g && b.t <= dt.t && dt.t - b.t <= horizon_b);
        tps4.tally(ok, || vec![dt.idx]);
    }
    out.extend([tps1, tps2, tps3, tps4]);
}

fn diagnostic_checks(cx: &Ctx, out: &mut Vec<Verdict>) {
    let two_rmv = cx.sp(cx.c.d_rmv) * Ratio::from_integer(2);
    let pairs = |line: Line, near: Rt, v: &mut Verdict| {
        let mut ev: Vec<&LineEv> = cx.lines.iter().filter(|l| l.line == line).collect();
        ev.sort_by(|a, b| (a.g, &a.m, a.t).cmp(&(b.g, &b.m, b.t)));
        for (i, a) in ev.iter().enumerate() {
            for b in &ev[i + 1..] {
                if (b.g, &b.m) != (a.g, &a.m) || b.t - a.t > two_rmv {
                    break;
                }
                v.tally(b.t - a.t <= near, || vec![a.idx, b.idx]);
            }
        }
    };
    let mut m2 = Verdict::new("diag-cor-2m2");
    pairs(Line::M2, cx.ds(9), &mut m2);
    let mut m4 = Verdict::new("diag-cor-2m4");
    pairs(Line::M4, cx.ds(7), &mut m4);

    let mut good = Verdict::new("diag-good-reset");
    let reset = cx.sp(cx.c.d_reset);
    for (i, (idx, g, m, t0)) in cx.initiations.iter().enumerate() {
        let quiet = cx.initiations[..i].iter().all(|x| x.1 != *g || *t0 - x.3 > reset);
        if !quiet || *t0 - reset < cx.iota1 || !cx.within_horizon(*t0 + cx.ds(4)) {
            continue;
        }
        let of = |line: Line, q: NodeId| {
            cx.lines.iter().find(|l| l.node == q && l.g == *g && l.m == *m && l.line == line && l.t >= *t0 && l.t <= *t0 + cx.ds(4))
        };
        let mut n4s = Vec::new();
        for q in cx.correct_nodes(*t0) {
            let support = of(Line::K2, q);
            good.tally(support.is_some_and(|s| s.t <= *t0 + cx.d), || vec![*idx]);
            match of(Line::N4, q) {
                Some(n) => n4s.push(n),
                None => good.tally(false, || vec![*idx]),
            }
        }
        for (j, a) in n4s.iter().enumerate() {
            for b in &n4s[j + 1..] {
                good.tally(abs(a.t - b.t) <= cx.ds(2), || vec![a.idx, b.idx]);
            }
        }
    }

    let mut faulty = Verdict::new("diag-faulty-reset");
    let window = cx.sp(cx.c.d_rmv) - cx.ds(7);
    for n in cx.lines.iter().filter(|l| l.line == Line::N4 && l.t >= cx.iota1 + window) {
        let ok = cx.lines.iter().any(|l| l.line == Line::M4 && l.g == n.g && l.m == n.m && l.t <= n.t && n.t - l.t <= window);
        faulty.tally(ok, || vec![n.idx]);
    }

    let mut before = Verdict::new("diag-before-support");
    for a in &cx.iaccepts {
        let ok = cx.lines.iter().any(|l| l.line == Line::K2 && l.g == a.g && l.m == a.m && l.t >= a.anchor_rt && l.t <= a.t);
        before.tally(ok, || vec![a.idx]);
    }
    out.extend([m2, m4, good, faulty, before]);
}
