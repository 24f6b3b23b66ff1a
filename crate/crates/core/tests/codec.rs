use std::net::Ipv4Addr;
use std::path::PathBuf;

use proptest::prelude::*;

use contentflow::protocol::{sample_messages, MessageType, PacketInMeta, HEADER_LEN};
use contentflow::{decode, encode, Action, Capabilities, CodecError, FiveTuple, FlowMatch, FlowMod, Message};

fn ipv4() -> impl Strategy<Value = Ipv4Addr> {
    any::<u32>().prop_map(Ipv4Addr::from)
}

fn tuple() -> impl Strategy<Value = FiveTuple> {
    (ipv4(), any::<u16>(), ipv4(), any::<u16>(), any::<u8>()).prop_map(|(src_ip, src_port, dst_ip, dst_port, protocol)| {
        FiveTuple { src_ip, src_port, dst_ip, dst_port, protocol }
    })
}

fn name() -> impl Strategy<Value = String> {
    "\\PC{0,40}"
}

fn flow_match() -> impl Strategy<Value = FlowMatch> {
    prop_oneof![
        name().prop_map(FlowMatch::content),
        tuple().prop_map(FlowMatch::tuple),
        (name(), tuple()).prop_map(|(n, t)| FlowMatch::content_flow(n, t)),
    ]
}

fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        Just(Action::ExtractMetadata),
        Just(Action::Normal),
        any::<u16>().prop_map(Action::Output),
        Just(Action::Cache),
        Just(Action::Drop),
    ]
}

fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        Just(Message::Hello),
        Just(Message::FeaturesRequest),
        (any::<u64>(), 0u32..8).prop_map(|(datapath_id, bits)| Message::FeaturesReply {
            datapath_id,
            capabilities: Capabilities::from_bits_truncate(bits),
        }),
        (flow_match(), any::<u16>(), prop::collection::vec(action(), 1..8), any::<u64>()).prop_map(
            |(matcher, priority, actions, until_byte_count)| Message::FlowMod(FlowMod {
                matcher,
                priority,
                actions,
                until_byte_count
            })
        ),
        (name(), any::<u64>(), tuple()).prop_map(|(content_name, content_size, t)| Message::PacketIn(PacketInMeta {
            content_name,
            content_size,
            src_ip: t.src_ip,
            src_port: t.src_port,
            dst_ip: t.dst_ip,
            dst_port: t.dst_port,
        })),
        (flow_match(), any::<u64>()).prop_map(|(matcher, bytes_counted)| Message::FlowExpired { matcher, bytes_counted }),
        (name(), any::<u64>())
            .prop_map(|(content_name, footprint_bytes)| Message::CacheReport { content_name, footprint_bytes }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip(msg in message()) {
        let bytes = encode(&msg).unwrap();
        prop_assert_eq!(decode(&bytes).unwrap(), (msg, bytes.len()));
    }

    #[test]
    fn header_declares_payload_length(msg in message()) {
        let bytes = encode(&msg).unwrap();
        let declared = u32::from_be_bytes(bytes[2..6].try_into().unwrap()) as usize;
        prop_assert_eq!(declared, bytes.len() - HEADER_LEN);
        prop_assert_eq!(bytes[1], msg.message_type() as u8);
    }

    #[test]
    fn truncation_is_always_an_error(msg in message(), cut in any::<prop::sample::Index>()) {
        let bytes = encode(&msg).unwrap();
        let len = cut.index(bytes.len());
        prop_assert!(decode(&bytes[..len]).is_err());
    }

    #[test]
    fn frames_concatenate(a in message(), b in message()) {
        let mut stream = encode(&a).unwrap();
        let first = stream.len();
        stream.extend(encode(&b).unwrap());
        let (m1, n1) = decode(&stream).unwrap();
        let (m2, n2) = decode(&stream[n1..]).unwrap();
        prop_assert_eq!((m1, n1), (a, first));
        prop_assert_eq!((m2, n1 + n2), (b, stream.len()));
    }

    #[test]
    fn corrupted_frames_never_misparse(msg in message(), at in any::<prop::sample::Index>(), byte in any::<u8>()) {
        let mut bytes = encode(&msg).unwrap();
        let i = at.index(bytes.len());
        bytes[i] = byte;
        if let Ok((m, used)) = decode(&bytes) {
            prop_assert_eq!(encode(&m).unwrap(), bytes[..used].to_vec());
        }
    }
}

fn golden(name: &str) -> Vec<u8> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/golden").join(format!("{name}.hex"));
    let hex = std::fs::read_to_string(path).unwrap();
    let hex = hex.trim();
    (0..hex.len()).step_by(2).map(|i| u8::from_str_radix(&hex[i..i + 2], 16).unwrap()).collect()
}

#[test]
fn golden_frames() {
    let names = ["hello", "features_request", "features_reply", "flow_mod", "packet_in", "flow_expired", "cache_report"];
    let samples = sample_messages();
    assert_eq!(samples.len(), MessageType::ALL.len());
    for (name, msg) in names.iter().zip(samples) {
        let bytes = golden(name);
        assert_eq!(encode(&msg).unwrap(), bytes, "{name}");
        assert_eq!(decode(&bytes).unwrap(), (msg, bytes.len()), "{name}");
    }
}

#[test]
fn unknown_type_and_version() {
    let mut frame = golden("hello");
    frame[1] = 7;
    assert!(matches!(decode(&frame), Err(CodecError::UnknownType(7))));
    frame[1] = 0;
    frame[0] = 2;
    assert!(matches!(decode(&frame), Err(CodecError::UnknownVersion(2))));
}
