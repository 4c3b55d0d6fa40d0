//! Node identities, values and wire messages.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Index of a node in `[0, n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An opaque payload. The null value is represented as `Option::<Value>::None`.
///
/// Serialized as plain text when the bytes are ASCII alphanumerics, `_` or
/// `-` (and do not start with `0x`), and as `0x`-prefixed hex otherwise.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Value(pub Vec<u8>);

impl Value {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Value(bytes.into())
    }

    fn is_plain(&self) -> bool {
        !self.0.is_empty()
            && !self.0.starts_with(b"0x")
            && self.0.iter().all(|b| b.is_ascii_alphanumeric() || *b == b'_' || *b == b'-')
    }

    pub fn parse(s: &str) -> Result<Value, String> {
        match s.strip_prefix("0x") {
            Some(h) => hex::decode(h).map(Value).map_err(|e| format!("bad hex value {s:?}: {e}")),
            None => Ok(Value(s.as_bytes().to_vec())),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value(s.as_bytes().to_vec())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_plain() {
            f.write_str(std::str::from_utf8(&self.0).expect("plain values are ascii"))
        } else {
            write!(f, "0x{}", hex::encode(&self.0))
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Value::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Broadcast round, in `[1, f+1]`.
pub type Round = u32;

/// Every message kind on the wire. All carry the General `g` whose execution
/// they belong to; broadcast messages also carry the broadcaster `p`, the
/// value and the round.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProtocolMessage {
    Initiator { g: NodeId, m: Value },
    Support { g: NodeId, m: Value },
    Approve { g: NodeId, m: Value },
    Ready { g: NodeId, m: Value },
    BInit { g: NodeId, p: NodeId, m: Value, k: Round },
    BEcho { g: NodeId, p: NodeId, m: Value, k: Round },
    BInitPrime { g: NodeId, p: NodeId, m: Value, k: Round },
    BEchoPrime { g: NodeId, p: NodeId, m: Value, k: Round },
}

/// Discriminant of [`ProtocolMessage`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgKind {
    Initiator,
    Support,
    Approve,
    Ready,
    BInit,
    BEcho,
    BInitPrime,
    BEchoPrime,
}

impl MsgKind {
    pub const ALL: [MsgKind; 8] = [
        MsgKind::Initiator,
        MsgKind::Support,
        MsgKind::Approve,
        MsgKind::Ready,
        MsgKind::BInit,
        MsgKind::BEcho,
        MsgKind::BInitPrime,
        MsgKind::BEchoPrime,
    ];

    pub fn parse(s: &str) -> Option<MsgKind> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgKind::Initiator => "initiator",
            MsgKind::Support => "support",
            MsgKind::Approve => "approve",
            MsgKind::Ready => "ready",
            MsgKind::BInit => "b_init",
            MsgKind::BEcho => "b_echo",
            MsgKind::BInitPrime => "b_init_prime",
            MsgKind::BEchoPrime => "b_echo_prime",
        }
    }

    pub fn is_broadcast(self) -> bool {
        matches!(self, MsgKind::BInit | MsgKind::BEcho | MsgKind::BInitPrime | MsgKind::BEchoPrime)
    }

    /// Builds a message of this kind. `p` and `k` are ignored by the
    /// initiator-layer kinds.
    pub fn make(self, g: NodeId, p: NodeId, m: Value, k: Round) -> ProtocolMessage {
        match self {
            MsgKind::Initiator => ProtocolMessage::Initiator { g, m },
            MsgKind::Support => ProtocolMessage::Support { g, m },
            MsgKind::Approve => ProtocolMessage::Approve { g, m },
            MsgKind::Ready => ProtocolMessage::Ready { g, m },
            MsgKind::BInit => ProtocolMessage::BInit { g, p, m, k },
            MsgKind::BEcho => ProtocolMessage::BEcho { g, p, m, k },
            MsgKind::BInitPrime => ProtocolMessage::BInitPrime { g, p, m, k },
            MsgKind::BEchoPrime => ProtocolMessage::BEchoPrime { g, p, m, k },
        }
    }
}

impl ProtocolMessage {
    pub fn kind(&self) -> MsgKind {
        match self {
            ProtocolMessage::Initiator { .. } => MsgKind::Initiator,
            ProtocolMessage::Support { .. } => MsgKind::Support,
            ProtocolMessage::Approve { .. } => MsgKind::Approve,
            ProtocolMessage::Ready { .. } => MsgKind::Ready,
            ProtocolMessage::BInit { .. } => MsgKind::BInit,
            ProtocolMessage::BEcho { .. } => MsgKind::BEcho,
            ProtocolMessage::BInitPrime { .. } => MsgKind::BInitPrime,
            ProtocolMessage::BEchoPrime { .. } => MsgKind::BEchoPrime,
        }
    }

    pub fn general(&self) -> NodeId {
        match self {
            ProtocolMessage::Initiator { g, .. }
            | ProtocolMessage::Support { g, .. }
            | ProtocolMessage::Approve { g, .. }
            | ProtocolMessage::Ready { g, .. }
            | ProtocolMessage::BInit { g, .. }
            | ProtocolMessage::BEcho { g, .. }
            | ProtocolMessage::BInitPrime { g, .. }
            | ProtocolMessage::BEchoPrime { g, .. } => *g,
        }
    }

    pub fn value(&self) -> &Value {
        match self {
            ProtocolMessage::Initiator { m, .. }
            | ProtocolMessage::Support { m, .. }
            | ProtocolMessage::Approve { m, .. }
            | ProtocolMessage::Ready { m, .. }
            | ProtocolMessage::BInit { m, .. }
            | ProtocolMessage::BEcho { m, .. }
            | ProtocolMessage::BInitPrime { m, .. }
            | ProtocolMessage::BEchoPrime { m, .. } => m,
        }
    }

    /// `(p, k)` for broadcast-layer messages.
    pub fn triple_tag(&self) -> Option<(NodeId, Round)> {
        match self {
            ProtocolMessage::BInit { p, k, .. }
            | ProtocolMessage::BEcho { p, k, .. }
            | ProtocolMessage::BInitPrime { p, k, .. }
            | ProtocolMessage::BEchoPrime { p, k, .. } => Some((*p, *k)),
            _ => None,
        }
    }
}

/// A message together with its authenticated sender.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub sender: NodeId,
    pub msg: ProtocolMessage,
}

/// Receiver-side deduplication key: one entry per sender, kind and payload.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DedupKey {
    pub sender: NodeId,
    pub kind: MsgKind,
    pub g: NodeId,
    pub m: Value,
    pub p: Option<NodeId>,
    pub k: Option<Round>,
}

impl Envelope {
    pub fn dedup_key(&self) -> DedupKey {
        let tag = self.msg.triple_tag();
        DedupKey {
            sender: self.sender,
            kind: self.msg.kind(),
            g: self.msg.general(),
            m: self.msg.value().clone(),
            p: tag.map(|t| t.0),
            k: tag.map(|t| t.1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_text_round_trip() {
        for v in [Value::from("m1"), Value::new(vec![0u8, 255, 7]), Value::from("0xab")] {
            let s = serde_json::to_string(&v).unwrap();
            let back: Value = serde_json::from_str(&s).unwrap();
            assert_eq!(back, v, "{s}");
        }
        assert_eq!(Value::from("abc").to_string(), "abc");
        assert_eq!(Value::from("0xab").to_string(), "0x30786162");
    }

    #[test]
    fn message_json_shape() {
        let m = ProtocolMessage::BEcho { g: NodeId(0), p: NodeId(2), m: "a".into(), k: 1 };
        assert_eq!(
            serde_json::to_string(&m).unwrap(),
            r#"{"type":"b_echo","g":0,"p":2,"m":"a","k":1}"#
        );
    }

    #[test]
    fn dedup_key_distinguishes_kind_and_round() {
        let e1 = Envelope { sender: NodeId(1), msg: ProtocolMessage::BEcho { g: NodeId(0), p: NodeId(2), m: "a".into(), k: 1 } };
        let e2 = Envelope { sender: NodeId(1), msg: ProtocolMessage::BEcho { g: NodeId(0), p: NodeId(2), m: "a".into(), k: 2 } };
        let e3 = Envelope { sender: NodeId(1), msg: ProtocolMessage::BInitPrime { g: NodeId(0), p: NodeId(2), m: "a".into(), k: 1 } };
        assert_ne!(e1.dedup_key(), e2.dedup_key());
        assert_ne!(e1.dedup_key(), e3.dedup_key());
        assert_eq!(e1.dedup_key(), e1.clone().dedup_key());
    }

    #[test]
    fn kind_names_parse() {
        for k in MsgKind::ALL {
            assert_eq!(MsgKind::parse(k.name()), Some(k));
        }
    }
}
