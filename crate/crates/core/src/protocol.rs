//! Control channel messages and their wire framing.
//!
//! Every frame is
//!
//! ```text
//! +---------+------+----------------+---------+
//! | version | type | payload_len    | payload |
//! | 1 byte  | 1 B  | 4 bytes, BE    | ...     |
//! +---------+------+----------------+---------+
//! ```
//!
//! Integers are big-endian. Strings are a 2-byte length followed by UTF-8.
//! Optional fields carry a 1-byte presence flag (0 or 1). Lists carry a
//! 2-byte element count.

use std::fmt;
use std::net::Ipv4Addr;

use bitflags::bitflags;
use thiserror::Error;

pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 6;

bitflags! {
    /// Element capabilities advertised in `FEATURES_REPLY`.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
    pub struct Capabilities: u32 {
        const EXTRACT_METADATA = 1 << 0;
        const CACHE_CONTENT = 1 << 1;
        const PROXY_CONTENT = 1 << 2;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("frame truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown protocol version {0:#04x}")]
    UnknownVersion(u8),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("reserved capability bits set: {0:#010x}")]
    ReservedCapabilityBits(u32),
    #[error("payload length {declared} does not match message body ({actual} bytes used)")]
    PayloadLengthMismatch { declared: usize, actual: usize },
    #[error("invalid presence flag {0}")]
    InvalidPresenceFlag(u8),
    #[error("unknown action code {0}")]
    UnknownAction(u8),
    #[error("string is not valid UTF-8")]
    InvalidUtf8,
    #[error("invariant violated: {0}")]
    Invariant(&'static str),
}

/// Transport 5-tuple. In a flow match, an all-zero address, port or
/// protocol field is a wildcard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FiveTuple {
    pub src_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
    pub protocol: u8,
}

impl FiveTuple {
    pub const TCP: u8 = 6;

    pub fn tcp(src_ip: Ipv4Addr, src_port: u16, dst_ip: Ipv4Addr, dst_port: u16) -> Self {
        Self { src_ip, src_port, dst_ip, dst_port, protocol: Self::TCP }
    }

    /// Whether `packet` satisfies this tuple used as a (wildcarded) pattern.
    pub fn covers(&self, packet: &FiveTuple) -> bool {
        fn ip_ok(pat: Ipv4Addr, v: Ipv4Addr) -> bool {
            pat.is_unspecified() || pat == v
        }
        fn num_ok<T: PartialEq + Default>(pat: T, v: T) -> bool {
            pat == T::default() || pat == v
        }
        ip_ok(self.src_ip, packet.src_ip)
            && ip_ok(self.dst_ip, packet.dst_ip)
            && num_ok(self.src_port, packet.src_port)
            && num_ok(self.dst_port, packet.dst_port)
            && num_ok(self.protocol, packet.protocol)
    }
}

impl fmt::Display for FiveTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{} -> {}:{} /{}",
            self.src_ip, self.src_port, self.dst_ip, self.dst_port, self.protocol
        )
    }
}

/// Flow match on content name, transport tuple, or both.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FlowMatch {
    pub content_name: Option<String>,
    pub tuple: Option<FiveTuple>,
}

impl FlowMatch {
    pub fn content(name: impl Into<String>) -> Self {
        Self { content_name: Some(name.into()), tuple: None }
    }

    pub fn tuple(tuple: FiveTuple) -> Self {
        Self { content_name: None, tuple: Some(tuple) }
    }

    pub fn content_flow(name: impl Into<String>, tuple: FiveTuple) -> Self {
        Self { content_name: Some(name.into()), tuple: Some(tuple) }
    }

    pub fn matches(&self, content_name: Option<&str>, tuple: &FiveTuple) -> bool {
        let name_ok = match &self.content_name {
            Some(want) => content_name == Some(want.as_str()),
            None => true,
        };
        let tuple_ok = self.tuple.is_none_or(|t| t.covers(tuple));
        name_ok && tuple_ok
    }

    fn validate(&self) -> Result<(), CodecError> {
        if self.content_name.is_none() && self.tuple.is_none() {
            return Err(CodecError::Invariant("flow match needs a content name or a tuple"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    ExtractMetadata,
    Normal,
    Output(u16),
    Cache,
    Drop,
}

impl Action {
    fn code(self) -> u8 {
        match self {
            Action::ExtractMetadata => 0,
            Action::Normal => 1,
            Action::Output(_) => 2,
            Action::Cache => 3,
            Action::Drop => 4,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::ExtractMetadata => f.write_str("EXTRACT_METADATA"),
            Action::Normal => f.write_str("NORMAL"),
            Action::Output(p) => write!(f, "OUTPUT:{p}"),
            Action::Cache => f.write_str("CACHE"),
            Action::Drop => f.write_str("DROP"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FlowMod {
    pub matcher: FlowMatch,
    pub priority: u16,
    pub actions: Vec<Action>,
    /// Cumulative byte budget after which the flow expires; 0 = none.
    pub until_byte_count: u64,
}

/// Metadata tuple reported by a switch after reading a response head.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PacketInMeta {
    pub content_name: String,
    pub content_size: u64,
    pub src_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Message {
    Hello,
    FeaturesRequest,
    FeaturesReply { datapath_id: u64, capabilities: Capabilities },
    FlowMod(FlowMod),
    PacketIn(PacketInMeta),
    FlowExpired { matcher: FlowMatch, bytes_counted: u64 },
    CacheReport { content_name: String, footprint_bytes: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    Hello = 0,
    FeaturesRequest = 1,
    FeaturesReply = 2,
    FlowMod = 3,
    PacketIn = 4,
    FlowExpired = 5,
    CacheReport = 6,
}

impl MessageType {
    pub const ALL: [MessageType; 7] = [
        MessageType::Hello,
        MessageType::FeaturesRequest,
        MessageType::FeaturesReply,
        MessageType::FlowMod,
        MessageType::PacketIn,
        MessageType::FlowExpired,
        MessageType::CacheReport,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageType::Hello => "HELLO",
            MessageType::FeaturesRequest => "FEATURES_REQUEST",
            MessageType::FeaturesReply => "FEATURES_REPLY",
            MessageType::FlowMod => "FLOW_MOD",
            MessageType::PacketIn => "PACKET_IN",
            MessageType::FlowExpired => "FLOW_EXPIRED",
            MessageType::CacheReport => "CACHE_REPORT",
        }
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Message {
    pub fn message_type(&self) -> MessageType {
        match self {
            Message::Hello => MessageType::Hello,
            Message::FeaturesRequest => MessageType::FeaturesRequest,
            Message::FeaturesReply { .. } => MessageType::FeaturesReply,
            Message::FlowMod(_) => MessageType::FlowMod,
            Message::PacketIn(_) => MessageType::PacketIn,
            Message::FlowExpired { .. } => MessageType::FlowExpired,
            Message::CacheReport { .. } => MessageType::CacheReport,
        }
    }
}

/// Encodes one message as a complete frame.
pub fn encode(msg: &Message) -> Result<Vec<u8>, CodecError> {
    let mut w = Writer(Vec::with_capacity(64));
    w.0.extend_from_slice(&[VERSION, msg.message_type() as u8, 0, 0, 0, 0]);
    match msg {
        Message::Hello | Message::FeaturesRequest => {}
        Message::FeaturesReply { datapath_id, capabilities } => {
            w.u64(*datapath_id);
            w.u32(capabilities.bits());
        }
        Message::FlowMod(fm) => {
            if fm.actions.is_empty() {
                return Err(CodecError::Invariant("flow mod needs at least one action"));
            }
            w.flow_match(&fm.matcher)?;
            w.u16(fm.priority);
            let count = u16::try_from(fm.actions.len())
                .map_err(|_| CodecError::Invariant("too many actions"))?;
            w.u16(count);
            for a in &fm.actions {
                w.u8(a.code());
                if let Action::Output(port) = a {
                    w.u16(*port);
                }
            }
            w.u64(fm.until_byte_count);
        }
        Message::PacketIn(p) => {
            w.string(&p.content_name)?;
            w.u64(p.content_size);
            w.ip(p.src_ip);
            w.u16(p.src_port);
            w.ip(p.dst_ip);
            w.u16(p.dst_port);
        }
        Message::FlowExpired { matcher, bytes_counted } => {
            w.flow_match(matcher)?;
            w.u64(*bytes_counted);
        }
        Message::CacheReport { content_name, footprint_bytes } => {
            w.string(content_name)?;
            w.u64(*footprint_bytes);
        }
    }
    let mut buf = w.0;
    let payload_len = u32::try_from(buf.len() - HEADER_LEN)
        .map_err(|_| CodecError::Invariant("payload exceeds 4 GiB"))?;
    buf[2..HEADER_LEN].copy_from_slice(&payload_len.to_be_bytes());
    Ok(buf)
}

/// Decodes the first frame in `bytes`, returning the message and the number
/// of bytes consumed. Never reads beyond the declared payload length.
pub fn decode(bytes: &[u8]) -> Result<(Message, usize), CodecError> {
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::Truncated { needed: HEADER_LEN, available: bytes.len() });
    }
    if bytes[0] != VERSION {
        return Err(CodecError::UnknownVersion(bytes[0]));
    }
    let ty = MessageType::from_code(bytes[1]).ok_or(CodecError::UnknownType(bytes[1]))?;
    let declared = u32::from_be_bytes([bytes[2], bytes[3], bytes[4], bytes[5]]) as usize;
    let total = HEADER_LEN
        .checked_add(declared)
        .ok_or(CodecError::Truncated { needed: usize::MAX, available: bytes.len() })?;
    if bytes.len() < total {
        return Err(CodecError::Truncated { needed: total, available: bytes.len() });
    }
    let mut r = Reader { buf: &bytes[HEADER_LEN..total], pos: 0 };
    let msg = match ty {
        MessageType::Hello => Message::Hello,
        MessageType::FeaturesRequest => Message::FeaturesRequest,
        MessageType::FeaturesReply => {
            let datapath_id = r.u64()?;
            let bits = r.u32()?;
            let capabilities = Capabilities::from_bits(bits)
                .ok_or(CodecError::ReservedCapabilityBits(bits & !Capabilities::all().bits()))?;
            Message::FeaturesReply { datapath_id, capabilities }
        }
        MessageType::FlowMod => {
            let matcher = r.flow_match()?;
            let priority = r.u16()?;
            let count = r.u16()?;
            if count == 0 {
                return Err(CodecError::Invariant("flow mod needs at least one action"));
            }
            let mut actions = Vec::with_capacity(count as usize);
            for _ in 0..count {
                actions.push(match r.u8()? {
                    0 => Action::ExtractMetadata,
                    1 => Action::Normal,
                    2 => Action::Output(r.u16()?),
                    3 => Action::Cache,
                    4 => Action::Drop,
                    other => return Err(CodecError::UnknownAction(other)),
                });
            }
            let until_byte_count = r.u64()?;
            Message::FlowMod(FlowMod { matcher, priority, actions, until_byte_count })
        }
        MessageType::PacketIn => Message::PacketIn(PacketInMeta {
            content_name: r.string()?,
            content_size: r.u64()?,
            src_ip: r.ip()?,
            src_port: r.u16()?,
            dst_ip: r.ip()?,
            dst_port: r.u16()?,
        }),
        MessageType::FlowExpired => Message::FlowExpired {
            matcher: r.flow_match()?,
            bytes_counted: r.u64()?,
        },
        MessageType::CacheReport => Message::CacheReport {
            content_name: r.string()?,
            footprint_bytes: r.u64()?,
        },
    };
    if r.pos != declared {
        return Err(CodecError::PayloadLengthMismatch { declared, actual: r.pos });
    }
    Ok((msg, total))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }

    fn ip(&mut self, v: Ipv4Addr) {
        self.0.extend_from_slice(&v.octets());
    }

    fn string(&mut self, s: &str) -> Result<(), CodecError> {
        let len = u16::try_from(s.len()).map_err(|_| CodecError::Invariant("string longer than 65535 bytes"))?;
        self.u16(len);
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }

    fn flow_match(&mut self, m: &FlowMatch) -> Result<(), CodecError> {
        m.validate()?;
        match &m.content_name {
            Some(name) => {
                self.u8(1);
                self.string(name)?;
            }
            None => self.u8(0),
        }
        match &m.tuple {
            Some(t) => {
                self.u8(1);
                self.ip(t.src_ip);
                self.u16(t.src_port);
                self.ip(t.dst_ip);
                self.u16(t.dst_port);
                self.u8(t.protocol);
            }
            None => self.u8(0),
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos + n;
        if end > self.buf.len() {
            // The frame claimed fewer bytes than its body needs.
            return Err(CodecError::PayloadLengthMismatch { declared: self.buf.len(), actual: end });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        self.array().map(u16::from_be_bytes)
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        self.array().map(u32::from_be_bytes)
    }

    fn u64(&mut self) -> Result<u64, CodecError> {
        self.array().map(u64::from_be_bytes)
    }

    fn ip(&mut self) -> Result<Ipv4Addr, CodecError> {
        self.array::<4>().map(Ipv4Addr::from)
    }

    fn string(&mut self) -> Result<String, CodecError> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        std::str::from_utf8(raw).map(str::to_owned).map_err(|_| CodecError::InvalidUtf8)
    }

    fn present(&mut self) -> Result<bool, CodecError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(CodecError::InvalidPresenceFlag(other)),
        }
    }

    fn flow_match(&mut self) -> Result<FlowMatch, CodecError> {
        let content_name = if self.present()? { Some(self.string()?) } else { None };
        let tuple = if self.present()? {
            Some(FiveTuple {
                src_ip: self.ip()?,
                src_port: self.u16()?,
                dst_ip: self.ip()?,
                dst_port: self.u16()?,
                protocol: self.u8()?,
            })
        } else {
            None
        };
        let m = FlowMatch { content_name, tuple };
        m.validate()?;
        Ok(m)
    }
}

/// One fixed message of each type, in type-code order.
pub fn sample_messages() -> Vec<Message> {
    let tuple = FiveTuple::tcp(Ipv4Addr::new(10, 0, 0, 1), 80, Ipv4Addr::new(10, 0, 0, 7), 40_001);
    vec![
        Message::Hello,
        Message::FeaturesRequest,
        Message::FeaturesReply { datapath_id: 1, capabilities: Capabilities::EXTRACT_METADATA | Capabilities::CACHE_CONTENT },
        Message::FlowMod(FlowMod {
            matcher: FlowMatch::content_flow("/a", tuple),
            priority: 200,
            actions: vec![Action::ExtractMetadata, Action::Output(3)],
            until_byte_count: 1040,
        }),
        Message::PacketIn(PacketInMeta {
            content_name: "/a".into(),
            content_size: 1000,
            src_ip: tuple.src_ip,
            src_port: tuple.src_port,
            dst_ip: tuple.dst_ip,
            dst_port: tuple.dst_port,
        }),
        Message::FlowExpired { matcher: FlowMatch::content("/a"), bytes_counted: 1040 },
        Message::CacheReport { content_name: "/a".into(), footprint_bytes: 1000 },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_frame() {
        let bytes = encode(&Message::Hello).unwrap();
        assert_eq!(bytes, [0x01, 0x00, 0x00, 0x00, 0x00, 0x00]);
        assert_eq!(decode(&bytes).unwrap(), (Message::Hello, 6));
    }

    #[test]
    fn features_reply_frame() {
        let msg = Message::FeaturesReply { datapath_id: 1, capabilities: Capabilities::all() };
        let bytes = encode(&msg).unwrap();
        assert_eq!(
            bytes,
            [
                0x01, 0x02, 0x00, 0x00, 0x00, 0x0C, //
                0, 0, 0, 0, 0, 0, 0, 1, //
                0, 0, 0, 7,
            ]
        );
    }

    #[test]
    fn decode_errors() {
        assert_eq!(decode(&[0x02, 0, 0, 0, 0, 0]), Err(CodecError::UnknownVersion(2)));
        assert_eq!(decode(&[0x01, 9, 0, 0, 0, 0]), Err(CodecError::UnknownType(9)));
        assert!(matches!(decode(&[0x01, 0, 0]), Err(CodecError::Truncated { .. })));
        assert!(matches!(decode(&[0x01, 0, 0, 0, 0, 3, 1]), Err(CodecError::Truncated { .. })));
        // HELLO claiming a one-byte payload.
        assert!(matches!(
            decode(&[0x01, 0, 0, 0, 0, 1, 0xff]),
            Err(CodecError::PayloadLengthMismatch { declared: 1, actual: 0 })
        ));
        let reserved = [0x01, 0x02, 0, 0, 0, 12, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0x0f];
        assert_eq!(decode(&reserved), Err(CodecError::ReservedCapabilityBits(8)));
    }

    #[test]
    fn decode_consumes_exactly_one_frame() {
        let mut stream = encode(&Message::FeaturesRequest).unwrap();
        stream.extend(encode(&Message::Hello).unwrap());
        let (first, used) = decode(&stream).unwrap();
        assert_eq!(first, Message::FeaturesRequest);
        assert_eq!(used, 6);
        assert_eq!(decode(&stream[used..]).unwrap().0, Message::Hello);
    }

    #[test]
    fn encode_rejects_invalid_messages() {
        let empty_match = FlowMatch { content_name: None, tuple: None };
        let fm = FlowMod { matcher: empty_match, priority: 1, actions: vec![Action::Normal], until_byte_count: 0 };
        assert!(matches!(encode(&Message::FlowMod(fm)), Err(CodecError::Invariant(_))));
        let fm = FlowMod { matcher: FlowMatch::content("x"), priority: 1, actions: vec![], until_byte_count: 0 };
        assert!(matches!(encode(&Message::FlowMod(fm)), Err(CodecError::Invariant(_))));
        let long = "x".repeat(70_000);
        let report = Message::CacheReport { content_name: long, footprint_bytes: 1 };
        assert!(matches!(encode(&report), Err(CodecError::Invariant(_))));
    }

    #[test]
    fn wildcard_tuple_match() {
        let any_http = FiveTuple::tcp(Ipv4Addr::UNSPECIFIED, 80, Ipv4Addr::UNSPECIFIED, 0);
        let pkt = FiveTuple::tcp(Ipv4Addr::new(10, 0, 0, 2), 80, Ipv4Addr::new(10, 0, 0, 3), 40000);
        assert!(any_http.covers(&pkt));
        let other = FiveTuple { src_port: 8080, ..pkt };
        assert!(!any_http.covers(&other));
        let m = FlowMatch::content_flow("a", pkt);
        assert!(m.matches(Some("a"), &pkt));
        assert!(!m.matches(Some("b"), &pkt));
        assert!(!m.matches(None, &pkt));
    }
}
