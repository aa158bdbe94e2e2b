//! Event stream wire format.
//!
//! Every message in either direction is a 4-byte big-endian length followed
//! by that many bytes of UTF-8 JSON. Server-to-client messages are
//! [`Event`]s `{kind, n, payload}`; client-to-server messages are
//! [`ControlCommand`]s.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tiltstream_core::recon::SliceSpec;

/// Frames larger than this are refused instead of allocated.
pub const MAX_FRAME: usize = 64 << 20;

/// Event kinds in their precedence order within one projection count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ProjectionAdded,
    HistoryRestarted,
    SlicesUpdated,
    MetricsUpdated,
    StopSuggested,
    ControlAck,
    Error,
    SessionEnded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    /// Projections processed when the event was raised.
    pub n: usize,
    pub payload: Value,
}

impl Event {
    pub fn new(kind: EventKind, n: usize, payload: Value) -> Self {
        Self { kind, n, payload }
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("events always serialize")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    /// Key of the total order: `(n, kind precedence)`.
    pub fn order_key(&self) -> (usize, EventKind) {
        (self.n, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlCommand {
    Stop,
    Continue,
    Reorient { slices: Vec<SliceSpec> },
}

impl ControlCommand {
    pub fn name(&self) -> &'static str {
        match self {
            ControlCommand::Stop => "stop",
            ControlCommand::Continue => "continue",
            ControlCommand::Reorient { .. } => "reorient",
        }
    }

    /// Parses a command body; the error text is sent back in an `error`
    /// event.
    pub fn parse(bytes: &[u8]) -> Result<Self, String> {
        serde_json::from_slice(bytes).map_err(|e| format!("invalid control command: {e}"))
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("commands always serialize")
    }
}

pub fn write_frame(w: &mut impl Write, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len()).ok().filter(|&l| l as usize <= MAX_FRAME);
    let len = len.ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(body)?;
    w.flush()
}

/// Next frame, or `None` on a clean end of stream between frames.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(k) => got += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes exceeds limit")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn write_event(w: &mut impl Write, event: &Event) -> io::Result<()> {
    write_frame(w, &event.to_json())
}

pub fn read_event(r: &mut impl Read) -> io::Result<Option<Event>> {
    match read_frame(r)? {
        None => Ok(None),
        Some(body) => Event::from_json(&body).map(Some).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
    }
}

pub fn write_command(w: &mut impl Write, command: &ControlCommand) -> io::Result<()> {
    write_frame(w, &command.to_json())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn frame_layout_is_big_endian_length_then_json() {
        let mut buf = Vec::new();
        write_event(&mut buf, &Event::new(EventKind::MetricsUpdated, 5, json!({"srod": 0.09}))).unwrap();
        let body = br#"{"kind":"metrics_updated","n":5,"payload":{"srod":0.09}}"#;
        assert_eq!(buf[..4], (body.len() as u32).to_be_bytes());
        assert_eq!(&buf[4..], body);
    }

    #[test]
    fn commands_parse_from_json() {
        assert_eq!(ControlCommand::parse(br#"{"command":"stop"}"#), Ok(ControlCommand::Stop));
        assert_eq!(ControlCommand::parse(br#"{"command":"continue"}"#), Ok(ControlCommand::Continue));
        let r = ControlCommand::parse(br#"{"command":"reorient","slices":[{"plane":"xy","rotation_deg":45}]}"#).unwrap();
        assert_eq!(
            r,
            ControlCommand::Reorient {
                slices: vec![SliceSpec { rotation_deg: 45.0, ..SliceSpec::through_origin(tiltstream_core::recon::Plane::Xy) }]
            }
        );
        assert!(ControlCommand::parse(br#"{"command":"explode"}"#).is_err());
        assert!(ControlCommand::parse(b"not json").is_err());
    }

    #[test]
    fn clean_eof_and_truncation() {
        let mut empty: &[u8] = &[];
        assert!(read_frame(&mut empty).unwrap().is_none());
        let mut short: &[u8] = &[0, 0];
        assert!(read_frame(&mut short).is_err());
        let mut cut: &[u8] = &[0, 0, 0, 9, b'{'];
        assert!(read_frame(&mut cut).is_err());
        let mut huge: &[u8] = &[0xff, 0xff, 0xff, 0xff];
        assert!(read_frame(&mut huge).is_err());
    }

    #[test]
    fn precedence_follows_declaration() {
        assert!(EventKind::ProjectionAdded < EventKind::HistoryRestarted);
        assert!(EventKind::HistoryRestarted < EventKind::SlicesUpdated);
        assert!(EventKind::MetricsUpdated < EventKind::StopSuggested);
        assert!(EventKind::Error < EventKind::SessionEnded);
    }
}
