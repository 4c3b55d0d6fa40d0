//! Forged traces. Each one edits an honest run so that the named property
//! (or diagnostic) no longer holds.

#![allow(dead_code)]

use stabyz::trace::{EventKind, Line, TraceEvent};
use stabyz::{sim_run, LocalTime, NodeId, RealTime, ScenarioConfig, Value};

pub const T0: u64 = 200_000;
const D: u64 = 1000;

/// Correct General 0 initiates `m` at 200 after a long quiet start; node 3
/// is a silent faulty node. Clocks are identity, so local time = real time.
pub fn honest() -> (ScenarioConfig, Vec<TraceEvent>) {
    let cfg = ScenarioConfig::parse("role.3 = byzantine silent\nscript.0 = \"200 initiate m\"\nhorizon = 240\ntrace.ticks = false")
        .expect("scenario parses");
    let trace = sim_run(&cfg).expect("honest run");
    (cfg, trace)
}

fn at(t: u64, node: u32, event: EventKind) -> TraceEvent {
    TraceEvent { t_real: RealTime(t), node: NodeId(node), local_time: LocalTime(t), event }
}

fn retime(e: &mut TraceEvent, t: u64) {
    e.t_real = RealTime(t);
    e.local_time = LocalTime(t);
}

fn find(tr: &[TraceEvent], node: u32, pick: impl Fn(&EventKind) -> bool) -> usize {
    tr.iter().position(|e| e.node == NodeId(node) && pick(&e.event)).expect("event present in the honest run")
}

fn is_decide(e: &EventKind) -> bool {
    matches!(e, EventKind::Decide { .. })
}

fn is_iaccept(e: &EventKind) -> bool {
    matches!(e, EventKind::IAccept { .. })
}

fn anchor_of(e: &EventKind) -> u64 {
    match e {
        EventKind::Decide { anchor, .. } | EventKind::IAccept { anchor, .. } => anchor.0,
        _ => unreachable!(),
    }
}

fn set_anchor(e: &mut EventKind, to: u64) {
    match e {
        EventKind::Decide { anchor, .. } | EventKind::IAccept { anchor, .. } => *anchor = LocalTime(to),
        _ => unreachable!(),
    }
}

/// Appends, for every correct decide (or i-accept), a shifted copy with the given value.
fn shifted_copies(tr: &mut Vec<TraceEvent>, pick: fn(&EventKind) -> bool, shift: u64, m: &str) {
    let extra: Vec<TraceEvent> = tr
        .iter()
        .filter(|e| pick(&e.event))
        .map(|e| {
            let mut c = e.clone();
            retime(&mut c, e.t_real.0 + shift);
            let a = anchor_of(&c.event);
            set_anchor(&mut c.event, a + shift);
            match &mut c.event {
                EventKind::Decide { m: v, .. } | EventKind::IAccept { m: v, .. } => *v = Value::from(m),
                _ => unreachable!(),
            }
            c
        })
        .collect();
    tr.extend(extra);
}

fn line(t: u64, node: u32, m: &str, l: Line) -> TraceEvent {
    at(t, node, EventKind::Line { g: NodeId(0), m: Value::from(m), line: l })
}

/// One forged trace per property and diagnostic id.
pub fn corpus() -> (ScenarioConfig, Vec<(&'static str, Vec<TraceEvent>)>) {
    let (cfg, base) = honest();
    let mut out: Vec<(&'static str, Vec<TraceEvent>)> = Vec::new();
    let mut forge = |id: &'static str, edit: &dyn Fn(&mut Vec<TraceEvent>)| {
        let mut tr = base.clone();
        edit(&mut tr);
        out.push((id, tr));
    };
    let first_invoke = base.iter().filter(|e| matches!(e.event, EventKind::Invoke { .. })).map(|e| e.t_real.0).min().unwrap();
    let last_invoke = base.iter().filter(|e| matches!(e.event, EventKind::Invoke { .. })).map(|e| e.t_real.0).max().unwrap();

    forge("agreement", &|tr| {
        let i = find(tr, 1, is_decide);
        if let EventKind::Decide { m, .. } = &mut tr[i].event {
            *m = Value::from("x");
        }
    });
    forge("validity", &|tr| {
        tr.remove(find(tr, 2, is_decide));
    });
    forge("termination", &|tr| {
        let i = find(tr, 1, is_decide);
        let dup = tr[i].clone();
        tr.insert(i + 1, dup);
    });
    forge("timeliness-1a", &|tr| {
        let i = find(tr, 2, is_decide);
        let earliest = tr.iter().filter(|e| is_decide(&e.event)).map(|e| e.t_real.0).min().unwrap();
        retime(&mut tr[i], earliest + 2 * D + D / 2);
    });
    forge("timeliness-1b", &|tr| {
        let i = find(tr, 2, is_decide);
        let a = anchor_of(&tr[i].event);
        set_anchor(&mut tr[i].event, a - 7 * D);
    });
    forge("timeliness-1c", &|tr| {
        let i = find(tr, 2, is_decide);
        set_anchor(&mut tr[i].event, first_invoke - 2 * D - D / 2);
    });
    forge("timeliness-1d", &|tr| {
        let i = find(tr, 1, is_decide);
        let t = tr[i].t_real.0;
        set_anchor(&mut tr[i].event, t + D);
    });
    forge("timeliness-2", &|tr| {
        let i = find(tr, 1, is_decide);
        retime(&mut tr[i], T0 + 4 * D + D / 2);
    });
    forge("timeliness-4a", &|tr| shifted_copies(tr, is_decide, 3 * D, "x"));
    forge("timeliness-4b", &|tr| shifted_copies(tr, is_decide, 10 * D, "m"));
    forge("ia-1a", &|tr| {
        tr.remove(find(tr, 2, is_iaccept));
    });
    forge("ia-1b", &|tr| {
        let i = find(tr, 2, is_iaccept);
        let earliest = tr.iter().filter(|e| is_iaccept(&e.event)).map(|e| e.t_real.0).min().unwrap();
        retime(&mut tr[i], earliest + 2 * D + D / 2);
    });
    forge("ia-1c", &|tr| {
        let i = find(tr, 2, is_iaccept);
        let a = anchor_of(&tr[i].event);
        set_anchor(&mut tr[i].event, a - D - D / 2);
    });
    forge("ia-1d", &|tr| {
        let i = find(tr, 2, is_iaccept);
        set_anchor(&mut tr[i].event, T0 - D - D / 2);
    });
    forge("ia-2", &|tr| {
        tr.push(at(T0 + 20 * D, 1, EventKind::IAccept { g: NodeId(0), m: Value::from("z"), anchor: LocalTime(T0 + 19 * D) }));
    });
    forge("ia-3a", &|tr| {
        tr.push(at(T0 + 20 * D, 1, EventKind::IAccept { g: NodeId(0), m: Value::from("m"), anchor: LocalTime(T0 + 19 * D) }));
    });
    forge("ia-3b", &|tr| {
        let i = find(tr, 2, is_iaccept);
        set_anchor(&mut tr[i].event, last_invoke + D / 4);
    });
    forge("ia-3c", &|tr| {
        let i = find(tr, 2, is_iaccept);
        let t = tr[i].t_real.0;
        set_anchor(&mut tr[i].event, t - 40 * D);
    });
    forge("ia-4a", &|tr| shifted_copies(tr, is_iaccept, 2 * D, "x"));
    forge("ia-4b", &|tr| shifted_copies(tr, is_iaccept, 10 * D, "m"));
    forge("tps-1", &|tr| {
        tr.retain(|e| !(e.node == NodeId(2) && matches!(e.event, EventKind::Accept { p: NodeId(0), .. })));
    });
    forge("tps-2", &|tr| {
        let i = find(tr, 1, is_decide);
        let anchor = LocalTime(anchor_of(&tr[i].event));
        let t = tr[i].t_real.0 + D;
        tr.push(at(t, 1, EventKind::Accept { g: NodeId(0), p: NodeId(2), m: Value::from("q"), k: 1, anchor }));
    });
    forge("tps-3", &|tr| {
        let i = find(tr, 0, is_decide);
        let anchor = LocalTime(anchor_of(&tr[i].event));
        let t = tr[i].t_real.0 + D;
        tr.push(at(t, 0, EventKind::Accept { g: NodeId(0), p: NodeId(3), m: Value::from("m"), k: 1, anchor }));
    });
    forge("tps-4", &|tr| {
        tr.retain(|e| !matches!(e.event, EventKind::Broadcaster { .. }));
    });
    forge("diag-cor-2m2", &|tr| tr.push(line(T0 + 20 * D, 1, "m", Line::M2)));
    forge("diag-cor-2m4", &|tr| tr.push(line(T0 + 15 * D, 1, "m", Line::M4)));
    forge("diag-good-reset", &|tr| {
        tr.retain(|e| !(e.node == NodeId(2) && matches!(e.event, EventKind::Line { line: Line::K2, .. })));
    });
    forge("diag-faulty-reset", &|tr| tr.push(line(T0 + 10 * D, 1, "y", Line::N4)));
    forge("diag-before-support", &|tr| {
        tr.retain(|e| !matches!(e.event, EventKind::Line { line: Line::K2, .. }));
    });
    (cfg, out)
}
