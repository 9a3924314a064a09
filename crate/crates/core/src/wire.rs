//! Binary message framing shared by the capture stream, the viewer stream
//! and replay.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ARCD" | version u8 = 1 | msg_type u8 | header_len u32 | header (JSON)
//!        | payload_count u8 | payload_count × (len u32 | bytes)
//! ```
//!
//! One envelope occupies exactly one transport message.

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::imageio::{self, CodecError};
use crate::model::{DepthMap, Frame, FrameMeta, Pose, SessionManifest, TaskKind};

pub const MAGIC: [u8; 4] = *b"ARCD";
pub const VERSION: u8 = 1;
pub const MAX_PAYLOADS: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum MessageType {
    Init = 0x01,
    Frame = 0x02,
    Ack = 0x03,
    Composite = 0x04,
    Control = 0x05,
    PointCloud = 0x06,
    Error = 0x07,
    End = 0x08,
}

impl TryFrom<u8> for MessageType {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        Ok(match v {
            0x01 => MessageType::Init,
            0x02 => MessageType::Frame,
            0x03 => MessageType::Ack,
            0x04 => MessageType::Composite,
            0x05 => MessageType::Control,
            0x06 => MessageType::PointCloud,
            0x07 => MessageType::Error,
            0x08 => MessageType::End,
            other => return Err(WireError::UnknownMessageType(other)),
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("header of {0} bytes does not fit a u32 length")]
    HeaderTooLarge(usize),
    #[error("{0} payloads exceed the limit of 255")]
    TooManyPayloads(usize),
    #[error("payload of {0} bytes does not fit a u32 length")]
    PayloadTooLarge(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type 0x{0:02x}")]
    UnknownMessageType(u8),
    #[error("truncated message")]
    Truncated,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("expected {expected:?} message, got {actual:?}")]
    UnexpectedType {
        expected: MessageType,
        actual: MessageType,
    },
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("encoding failure: {0}")]
    EncodingFailure(#[from] CodecError),
    #[error("image must be nonempty")]
    EmptyImage,
}

impl WireError {
    /// Stable name used in ERROR envelopes.
    pub fn code(&self) -> &'static str {
        match self {
            WireError::HeaderTooLarge(_) => "HeaderTooLarge",
            WireError::TooManyPayloads(_) => "TooManyPayloads",
            WireError::PayloadTooLarge(_) => "PayloadTooLarge",
            WireError::BadMagic => "BadMagic",
            WireError::UnsupportedVersion(_) => "UnsupportedVersion",
            WireError::UnknownMessageType(_) => "UnknownMessageType",
            WireError::Truncated => "Truncated",
            WireError::MalformedHeader(_) => "MalformedHeader",
            WireError::TrailingBytes(_) => "TrailingBytes",
            WireError::UnexpectedType { .. } => "UnexpectedType",
            WireError::MalformedPayload(_) => "MalformedPayload",
            WireError::EncodingFailure(_) => "EncodingFailure",
            WireError::EmptyImage => "EmptyImage",
        }
    }
}

/// A decoded message: type, JSON header and raw payload segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub msg_type: MessageType,
    pub header: Value,
    pub payloads: Vec<Vec<u8>>,
}

impl Envelope {
    pub fn new(msg_type: MessageType, header: Value, payloads: Vec<Vec<u8>>) -> Self {
        Envelope {
            msg_type,
            header,
            payloads,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        encode(self.msg_type, &self.header, &self.payloads)
    }

    pub fn decode(buf: &[u8]) -> Result<Envelope, WireError> {
        decode(buf)
    }

    pub fn ack(header: Value) -> Self {
        Envelope::new(MessageType::Ack, header, Vec::new())
    }

    pub fn error(code: &str, message: impl Into<String>) -> Self {
        Envelope::new(
            MessageType::Error,
            json!({ "code": code, "message": message.into() }),
            Vec::new(),
        )
    }

    pub fn end() -> Self {
        Envelope::new(MessageType::End, json!({}), Vec::new())
    }

    fn expect(&self, t: MessageType) -> Result<(), WireError> {
        if self.msg_type != t {
            return Err(WireError::UnexpectedType {
                expected: t,
                actual: self.msg_type,
            });
        }
        Ok(())
    }
}

pub fn encode<P: AsRef<[u8]>>(msg_type: MessageType, header: &Value, payloads: &[P]) -> Result<Vec<u8>, WireError> {
    let header_bytes = serde_json::to_vec(header).map_err(|e| WireError::MalformedHeader(e.to_string()))?;
    if header_bytes.len() > u32::MAX as usize {
        return Err(WireError::HeaderTooLarge(header_bytes.len()));
    }
    if payloads.len() > MAX_PAYLOADS {
        return Err(WireError::TooManyPayloads(payloads.len()));
    }
    let body: usize = payloads.iter().map(|p| 4 + p.as_ref().len()).sum();
    let mut out = Vec::with_capacity(4 + 2 + 4 + header_bytes.len() + 1 + body);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg_type as u8);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.push(payloads.len() as u8);
    for p in payloads {
        let p = p.as_ref();
        if p.len() > u32::MAX as usize {
            return Err(WireError::PayloadTooLarge(p.len()));
        }
        out.extend_from_slice(&(p.len() as u32).to_le_bytes());
        out.extend_from_slice(p);
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(WireError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        let s = self.take(4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }
}

pub fn decode(buf: &[u8]) -> Result<Envelope, WireError> {
    let prefix = &buf[..buf.len().min(4)];
    if prefix != &MAGIC[..prefix.len()] {
        return Err(WireError::BadMagic);
    }
    let mut r = Reader { buf, pos: 0 };
    r.take(4)?;
    let version = r.u8()?;
    if version != VERSION {
        return Err(WireError::UnsupportedVersion(version));
    }
    let msg_type = MessageType::try_from(r.u8()?)?;
    let header_len = r.u32()? as usize;
    let header_bytes = r.take(header_len)?;
    let header: Value = serde_json::from_slice(header_bytes).map_err(|e| WireError::MalformedHeader(e.to_string()))?;
    let count = r.u8()? as usize;
    let mut payloads = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        payloads.push(r.take(len)?.to_vec());
    }
    if r.pos != buf.len() {
        return Err(WireError::TrailingBytes(buf.len() - r.pos));
    }
    Ok(Envelope {
        msg_type,
        header,
        payloads,
    })
}

/// Interactive commands carried in CONTROL headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum ControlCommand {
    SetPlaneDepth {
        session_id: String,
        depth_m: f64,
    },
    SetObjectPose {
        session_id: String,
        object_id: String,
        pose: Pose,
        scale: f64,
    },
    SelectModels {
        session_id: String,
        model_ids: Vec<String>,
    },
    ReplaySeek {
        session_id: String,
        frame_index: u64,
    },
    ReplayMode {
        session_id: String,
        mode: ReplayMode,
        fps: f64,
    },
}

impl ControlCommand {
    pub fn session_id(&self) -> &str {
        match self {
            ControlCommand::SetPlaneDepth { session_id, .. }
            | ControlCommand::SetObjectPose { session_id, .. }
            | ControlCommand::SelectModels { session_id, .. }
            | ControlCommand::ReplaySeek { session_id, .. }
            | ControlCommand::ReplayMode { session_id, .. } => session_id,
        }
    }

    pub fn to_envelope(&self) -> Envelope {
        Envelope::new(
            MessageType::Control,
            serde_json::to_value(self).expect("control commands serialize"),
            Vec::new(),
        )
    }

    pub fn from_envelope(env: &Envelope) -> Result<Self, WireError> {
        env.expect(MessageType::Control)?;
        serde_json::from_value(env.header.clone()).map_err(|e| WireError::MalformedHeader(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMode {
    Video,
    FrameByFrame,
}

pub fn init_envelope(m: &SessionManifest) -> Envelope {
    Envelope::new(
        MessageType::Init,
        serde_json::to_value(m).expect("manifest serializes"),
        Vec::new(),
    )
}

pub fn manifest_from_init(env: &Envelope) -> Result<SessionManifest, WireError> {
    env.expect(MessageType::Init)?;
    serde_json::from_value(env.header.clone()).map_err(|e| WireError::MalformedHeader(e.to_string()))
}

/// Lossless PNG of the color image and the raw16 little-endian depth buffer.
pub fn encode_frame_payloads(f: &Frame) -> Result<(Vec<u8>, Vec<u8>), WireError> {
    let rgb_png = imageio::encode_png(&f.rgb)?;
    Ok((rgb_png, f.depth.to_le_bytes()))
}

/// FRAME envelope; the header carries only `{index, timestamp_ns, pose}`.
pub fn frame_envelope(f: &Frame) -> Result<Envelope, WireError> {
    let (rgb, depth) = encode_frame_payloads(f)?;
    Ok(Envelope::new(
        MessageType::Frame,
        serde_json::to_value(f.meta()).expect("frame meta serializes"),
        vec![rgb, depth],
    ))
}

/// Decodes a FRAME envelope using the depth resolution from the session's
/// INIT manifest.
pub fn frame_from_envelope(env: &Envelope, manifest: &SessionManifest) -> Result<Frame, WireError> {
    env.expect(MessageType::Frame)?;
    let meta: FrameMeta =
        serde_json::from_value(env.header.clone()).map_err(|e| WireError::MalformedHeader(e.to_string()))?;
    if env.payloads.len() != 2 {
        return Err(WireError::MalformedPayload(format!(
            "FRAME carries {} payloads, expected 2",
            env.payloads.len()
        )));
    }
    let rgb = imageio::decode_png(&env.payloads[0])?;
    let (dw, dh) = manifest.depth_resolution;
    let depth = DepthMap::from_le_bytes(dw, dh, &env.payloads[1])
        .map_err(|e| WireError::MalformedPayload(format!("depth: {e}")))?;
    Ok(Frame {
        index: meta.index,
        timestamp_ns: meta.timestamp_ns,
        rgb,
        depth,
        pose: meta.pose,
    })
}

/// Header of a COMPOSITE envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeHeader {
    pub session_id: String,
    pub frame_index: u64,
    pub model_id: String,
    pub task: TaskKind,
}

pub fn composite_envelope(h: &CompositeHeader, png: Vec<u8>) -> Envelope {
    Envelope::new(
        MessageType::Composite,
        serde_json::to_value(h).expect("composite header serializes"),
        vec![png],
    )
}

/// Standard padded Base64 of a binary image for REST payloads.
pub fn encode_rest_image(img: &[u8]) -> Result<String, WireError> {
    if img.is_empty() {
        return Err(WireError::EmptyImage);
    }
    Ok(base64::engine::general_purpose::STANDARD.encode(img))
}

pub fn decode_rest_image(s: &str) -> Result<Vec<u8>, WireError> {
    base64::engine::general_purpose::STANDARD
        .decode(s)
        .map_err(|e| WireError::MalformedPayload(format!("base64: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RgbImage;

    #[test]
    fn end_message_hand_assembled() {
        let bytes = encode(MessageType::End, &json!({}), &[] as &[Vec<u8>]).unwrap();
        let expected: Vec<u8> = [b"ARCD".as_slice(), &[0x01, 0x08, 2, 0, 0, 0], b"{}", &[0x00]].concat();
        assert_eq!(bytes.len(), 13);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn too_many_payloads() {
        let payloads = vec![Vec::<u8>::new(); 256];
        assert!(matches!(
            encode(MessageType::Frame, &json!({}), &payloads),
            Err(WireError::TooManyPayloads(256))
        ));
        let payloads = vec![Vec::<u8>::new(); 255];
        assert!(encode(MessageType::Frame, &json!({}), &payloads).is_ok());
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(decode(b"XXXX\x01\x08"), Err(WireError::BadMagic)));
        assert!(matches!(decode(b"AR"), Err(WireError::Truncated)));
        assert!(matches!(decode(b"AX"), Err(WireError::BadMagic)));
        let mut good = Envelope::end().encode().unwrap();
        good[4] = 2;
        assert!(matches!(decode(&good), Err(WireError::UnsupportedVersion(2))));
        let mut good = Envelope::end().encode().unwrap();
        good[5] = 0x09;
        assert!(matches!(decode(&good), Err(WireError::UnknownMessageType(9))));
        let mut good = Envelope::end().encode().unwrap();
        good.push(0);
        assert!(matches!(decode(&good), Err(WireError::TrailingBytes(1))));
        let good = Envelope::end().encode().unwrap();
        assert!(matches!(decode(&good[..good.len() - 1]), Err(WireError::Truncated)));
        let bad_json = [b"ARCD".as_slice(), &[1, 8, 2, 0, 0, 0], b"{x", &[0]].concat();
        assert!(matches!(decode(&bad_json), Err(WireError::MalformedHeader(_))));
    }

    #[test]
    fn depth_payload_is_little_endian() {
        let f = Frame {
            index: 0,
            timestamp_ns: 1,
            rgb: RgbImage::filled(2, 2, [1, 2, 3]),
            depth: DepthMap::new(2, 2, vec![1000, 2000, 0, 65535]).unwrap(),
            pose: Pose::IDENTITY,
        };
        let (_, raw) = encode_frame_payloads(&f).unwrap();
        assert_eq!(raw, vec![0xE8, 0x03, 0xD0, 0x07, 0x00, 0x00, 0xFF, 0xFF]);
    }

    #[test]
    fn lidar_sized_depth_payload_length() {
        let depth = DepthMap::filled(192, 256, 1234);
        assert_eq!(depth.to_le_bytes().len(), 98304);
    }

    #[test]
    fn frame_round_trip_through_envelope() {
        let mut m = crate::model::sample_manifest();
        m.depth_resolution = (1, 1);
        let f = Frame {
            index: 3,
            timestamp_ns: 123_456_789,
            rgb: RgbImage::new(1, 1, 3, vec![9, 8, 7]).unwrap(),
            depth: DepthMap::new(1, 1, vec![4242]).unwrap(),
            pose: Pose::from_translation([0.1, 0.2, 0.3]),
        };
        let env = frame_envelope(&f).unwrap();
        let bytes = env.encode().unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back, env);
        assert_eq!(frame_from_envelope(&back, &m).unwrap(), f);
    }

    #[test]
    fn base64_rest_images() {
        assert_eq!(encode_rest_image(b"AR").unwrap(), "QVI=");
        assert!(matches!(encode_rest_image(b""), Err(WireError::EmptyImage)));
        let data: Vec<u8> = (0..1024u32).map(|i| (i * 31 % 251) as u8).collect();
        assert_eq!(decode_rest_image(&encode_rest_image(&data).unwrap()).unwrap(), data);
    }

    #[test]
    fn control_commands_round_trip() {
        let cmd = ControlCommand::ReplayMode {
            session_id: "s".into(),
            mode: ReplayMode::FrameByFrame,
            fps: 30.0,
        };
        let env = cmd.to_envelope();
        assert_eq!(env.header["command"], "replay_mode");
        assert_eq!(env.header["mode"], "frame_by_frame");
        let back = ControlCommand::from_envelope(&decode(&env.encode().unwrap()).unwrap()).unwrap();
        assert_eq!(back, cmd);
    }
}
