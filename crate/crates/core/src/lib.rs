//! Simulator and trace checker for a self-stabilizing Byzantine agreement
//! stack: initiator accept, timed broadcast, and agreement.

pub mod adversary;
pub mod agreement;
pub mod broadcast;
pub mod checker;
pub mod constants;
pub mod effects;
pub mod error;
pub mod history;
pub mod initiator;
pub mod message;
pub mod node;
pub mod scenario;
pub mod sim;
pub mod sweep;
pub mod time;
pub mod trace;
pub mod transient;

pub use constants::{derive_constants, ProtocolConstants};
pub use error::{ConfigError, HorizonError, SimError, TraceError};
pub use scenario::ScenarioConfig;
pub use sim::{sim_run, RunError};
pub use message::{Envelope, MsgKind, NodeId, ProtocolMessage, Round, Value};
pub use time::{ClockModel, LocalTime, RealTime, Span};
pub use trace::{read_trace, write_trace, EventKind, Line, TraceEvent};
pub use checker::{check, Report, Verdict};
pub use sweep::{sweep, trace_digest, Summary};
