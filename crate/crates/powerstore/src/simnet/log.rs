//! Event log and operation records produced by a run.

use std::fmt;
use std::io::{self, Write};

use serde::{Serialize, Serializer};

use crate::codec::MessageKind;
use crate::crypto::Digest;
use crate::types::{ClientId, ServerId, Timestamp};

/// A process in the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pid {
    Server(ServerId),
    Writer(ClientId),
    Reader(ClientId),
    /// A Byzantine reader.
    Intruder(ClientId),
}

impl Pid {
    pub fn is_server(self) -> bool {
        matches!(self, Pid::Server(_))
    }
}

impl fmt::Display for Pid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pid::Server(i) => write!(f, "s{i}"),
            Pid::Writer(i) => write!(f, "w{i}"),
            Pid::Reader(i) => write!(f, "r{i}"),
            Pid::Intruder(i) => write!(f, "b{i}"),
        }
    }
}

impl Serialize for Pid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Write,
    Read,
}

/// Short printable label for a value: the harness prefix up to `|`.
pub fn value_label(v: &[u8]) -> String {
    let end = v.iter().position(|&b| b == b'|').unwrap_or(v.len().min(24));
    String::from_utf8_lossy(&v[..end]).into_owned()
}

fn ser_value<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.serialize_some(&value_label(v)),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Send { id: u64, from: Pid, to: Pid, kind: MessageKind, bytes: usize },
    Deliver { id: u64, from: Pid, to: Pid, kind: MessageKind },
    Drop { id: u64, to: Pid, reason: &'static str },
    Invoke {
        client: Pid,
        op: usize,
        kind: OpKind,
        #[serde(serialize_with = "ser_value")]
        value: Option<Vec<u8>>,
    },
    Respond {
        client: Pid,
        op: usize,
        #[serde(serialize_with = "ser_value")]
        value: Option<Vec<u8>>,
        rounds: u32,
        repaired: bool,
    },
    Stored { server: ServerId, ts: Timestamp },
    Accepted { server: ServerId, ts: Timestamp, proof: Digest },
    /// First time a correct process sends a message carrying this proof.
    Emitted { by: Pid, ts: Timestamp, proof: Digest },
    Pruned { reader: Pid, ts: Timestamp, proof: Option<Digest> },
    LcChanged { server: ServerId, from: Timestamp, to: Timestamp },
    Crash { process: Pid },
    Violation { what: String },
    FinalState { server: ServerId, faulty: bool, lc: Timestamp, lc_set: usize, history: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub tick: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// One client operation as seen by the checker. `invoke` and `response`
/// are positions in the event log, which totally orders everything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OperationRecord {
    pub op: usize,
    pub client: Pid,
    pub kind: OpKind,
    pub invoke: usize,
    pub response: Option<usize>,
    pub invoke_tick: u64,
    pub response_tick: Option<u64>,
    /// Argument of a write, or result of a completed read.
    #[serde(serialize_with = "ser_value")]
    pub value: Option<Vec<u8>>,
    pub ts: Option<Timestamp>,
    pub rounds: u32,
    pub repaired: bool,
    pub failed: Option<String>,
    /// Messages and bytes the client sent for this operation.
    pub messages: u64,
    pub bytes: u64,
    /// Bytes of the fragment fields in STORE messages.
    pub fragment_bytes: u64,
}

impl OperationRecord {
    pub fn is_complete(&self) -> bool {
        self.response.is_some()
    }
}

/// Writes one JSON object per line.
pub fn write_ndjson<W: Write, T: Serialize>(mut out: W, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_serialize_as_flat_records() {
        let e = Event {
            tick: 3,
            kind: EventKind::Send { id: 7, from: Pid::Writer(1), to: Pid::Server(2), kind: MessageKind::Store, bytes: 99 },
        };
        let line = serde_json::to_string(&e).unwrap();
        assert_eq!(
            line,
            r#"{"tick":3,"event":"send","id":7,"from":"w1","to":"s2","kind":"STORE","bytes":99}"#
        );
        let e = Event {
            tick: 4,
            kind: EventKind::Stored { server: 2, ts: Timestamp { num: 3, pid: 1, tag: None } },
        };
        assert_eq!(serde_json::to_string(&e).unwrap(), r#"{"tick":4,"event":"stored","server":2,"ts":"3.1"}"#);
    }

    #[test]
    fn value_labels() {
        assert_eq!(value_label(b"w1-3|xxxx"), "w1-3");
        assert_eq!(value_label(b"abc"), "abc");
    }

    #[test]
    fn ndjson_lines() {
        let mut buf = Vec::new();
        write_ndjson(&mut buf, &[1, 2, 3]).unwrap();
        assert_eq!(buf, b"1\n2\n3\n");
    }
}
