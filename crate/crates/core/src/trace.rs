//! The observable history of a run: one JSON object per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::TraceError;
use crate::message::{NodeId, Round, Value};
use crate::time::{LocalTime, RealTime};

/// Internal line markers of the initiator primitive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Line {
    K2,
    L2,
    L4,
    M2,
    M4,
    N2,
    N4,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    Tick,
    /// A correct General sent its initiation message.
    GeneralInitiate { g: NodeId, m: Value },
    GeneralReject { g: NodeId, m: Value, criterion: String },
    /// The General missed a completion deadline of its own invocation.
    SelfCheckFailed { g: NodeId, m: Value, line: Line, blocked_until: LocalTime },
    /// Receipt of an initiation message; `ok` when the support was sent.
    Invoke { g: NodeId, m: Value, ok: bool },
    Line { g: NodeId, m: Value, line: Line },
    IAccept { g: NodeId, m: Value, anchor: LocalTime },
    BmInvoke { g: NodeId, m: Value, k: Round, anchor: LocalTime },
    Accept { g: NodeId, p: NodeId, m: Value, k: Round, anchor: LocalTime },
    Broadcaster { g: NodeId, p: NodeId, anchor: LocalTime },
    /// The broadcast layer took a new anchor.
    Anchor { g: NodeId, anchor: LocalTime },
    Decide { g: NodeId, m: Value, anchor: LocalTime, block: String },
    Abort { g: NodeId, anchor: LocalTime, block: String },
    /// Initiator and agreement state dropped after a return.
    Reset { g: NodeId },
    /// Broadcast instance dropped.
    BcastReset { g: NodeId },
    Corrupt,
    Recover,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t_real: RealTime,
    pub node: NodeId,
    pub local_time: LocalTime,
    #[serde(flatten)]
    pub event: EventKind,
}

impl TraceEvent {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace events always serialize")
    }
}

pub fn write_trace<W: Write>(events: &[TraceEvent], mut w: W) -> Result<(), TraceError> {
    for e in events {
        writeln!(w, "{}", e.to_line())?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_to_string(events: &[TraceEvent]) -> String {
    let mut s = String::new();
    for e in events {
        s.push_str(&e.to_line());
        s.push('\n');
    }
    s
}

/// Parses a trace, failing on the first malformed line. Blank lines are skipped.
pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<TraceEvent>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: TraceEvent = serde_json::from_str(&line)
            .map_err(|e| TraceError::Malformed { line: i + 1, msg: e.to_string() })?;
        out.push(ev);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_order_is_stable() {
        let e = TraceEvent {
            t_real: RealTime(100_000),
            node: NodeId(2),
            local_time: LocalTime(7),
            event: EventKind::Decide { g: NodeId(0), m: "m".into(), anchor: LocalTime(3), block: "R".into() },
        };
        assert_eq!(
            e.to_line(),
            r#"{"t_real":100000,"node":2,"local_time":7,"kind":"decide","payload":{"g":0,"m":"m","anchor":3,"block":"R"}}"#
        );
        let t = TraceEvent { event: EventKind::Tick, ..e.clone() };
        assert_eq!(t.to_line(), r#"{"t_real":100000,"node":2,"local_time":7,"kind":"tick"}"#);
    }

    #[test]
    fn round_trip_and_line_numbers() {
        let e = TraceEvent {
            t_real: RealTime(1),
            node: NodeId(0),
            local_time: LocalTime(u64::MAX),
            event: EventKind::Line { g: NodeId(0), m: "a".into(), line: Line::M4 },
        };
        let text = format!("{}\n\n{}\n", e.to_line(), e.to_line());
        assert_eq!(read_trace(text.as_bytes()).unwrap(), vec![e.clone(), e.clone()]);
        let bad = format!("{}\n{{\"t_real\":1}}\n", e.to_line());
        match read_trace(bad.as_bytes()) {
            Err(TraceError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }
}
