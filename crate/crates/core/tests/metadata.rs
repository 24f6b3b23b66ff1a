use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use contentflow::metadata::{finalize_size_from_counter, parse_http_response_head, HttpHeadError};
use contentflow::{ContentMetadata, MetadataStore, NodeId};

/// Reference reader: lowercase every header name and take the last
/// Content-Length value with leading zeros stripped.
fn reference_length(head: &str) -> Option<u64> {
    head.split("\r\n")
        .skip(1)
        .take_while(|l| !l.is_empty())
        .filter_map(|l| l.split_once(':'))
        .filter(|(k, _)| k.to_lowercase() == "content-length")
        .map(|(_, v)| v.trim().trim_start_matches('0'))
        .map(|v| if v.is_empty() { Some(0) } else { v.parse().ok() })
        .last()
        .flatten()
}

fn casing(rng: &mut ChaCha8Rng, s: &str) -> String {
    s.chars()
        .map(|c| if rng.gen_bool(0.5) { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() })
        .collect()
}

#[test]
fn content_length_matches_reference_reader() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..2000 {
        let value: u64 = rng.gen_range(0..10_000_000);
        let zeros = "0".repeat(rng.gen_range(0..4));
        let pad = [" ", "", "\t", "  "][rng.gen_range(0..4)];
        let mut head = format!("HTTP/1.1 200 OK\r\nServer: t\r\n{}:{pad}{zeros}{value}{pad}\r\n", casing(&mut rng, "content-length"));
        if rng.gen_bool(0.5) {
            head.push_str(&format!("{}: text/html; charset=utf-8\r\n", casing(&mut rng, "content-type")));
        }
        head.push_str("\r\nBODY");
        let want = reference_length(&head).unwrap();
        assert_eq!(want, value);
        assert_eq!(parse_http_response_head(head.as_bytes()).unwrap().content_length, want, "{head:?}");
    }
    let leading = b"HTTP/1.1 200 OK\r\ncontent-length: 007\r\n\r\n";
    assert_eq!(parse_http_response_head(leading).unwrap().content_length, 7);
    assert_eq!(
        parse_http_response_head(b"HTTP/1.1 200 OK\r\nContent-Length: 12\r\nContent-Length: 13\r\n\r\n"),
        Err(HttpHeadError::InvalidContentLength)
    );
}

proptest! {
    #[test]
    fn parser_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = parse_http_response_head(&bytes);
    }

    #[test]
    fn counter_correction_is_exact(payload in 0u64..1 << 40, packets in 1u64..1 << 20, overhead in 0u64..100) {
        let counted = payload + packets * overhead;
        prop_assert_eq!(finalize_size_from_counter(counted, packets, overhead), Ok(payload));
    }
}

#[derive(Default, Clone, PartialEq, Debug)]
struct RefRecord {
    size: u64,
    mime: Option<String>,
    popularity: u64,
    at: BTreeSet<String>,
}

#[test]
fn store_matches_map_replay() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let names: Vec<String> = (0..1000).map(|i| format!("/c/{i}")).collect();
    let mut store = MetadataStore::new();
    let mut reference: BTreeMap<String, RefRecord> = BTreeMap::new();
    for _ in 0..20_000 {
        let name = &names[rng.gen_range(0..names.len())];
        if rng.gen_bool(0.5) {
            let size = if rng.gen_bool(0.3) { 0 } else { rng.gen_range(1..1_000_000) };
            let mime = rng.gen_bool(0.3).then(|| "video/mp4".to_owned());
            let loc = rng.gen_bool(0.3).then(|| format!("cache{}", rng.gen_range(0..3)));
            let mut rec = ContentMetadata::new(name.as_str());
            rec.size_bytes = size;
            rec.mime_type = mime.clone();
            rec.cached_at.extend(loc.iter().map(|l| NodeId::new(l.as_str())));
            store.put(rec).unwrap();

            let r = reference.entry(name.clone()).or_default();
            if size > 0 {
                r.size = size;
            }
            if mime.is_some() {
                r.mime = mime;
            }
            r.at.extend(loc);
        } else {
            let known = reference.get_mut(name);
            let got = store.record_access(name);
            match known {
                Some(r) => {
                    r.popularity += 1;
                    assert_eq!(got.unwrap(), r.popularity);
                }
                None => assert!(got.is_err()),
            }
        }
    }
    assert_eq!(store.len(), reference.len());
    for (name, r) in &reference {
        let rec = store.get(name).unwrap();
        let at: BTreeSet<String> = rec.cached_at.iter().map(|n| n.as_str().to_owned()).collect();
        assert_eq!(
            RefRecord { size: rec.size_bytes, mime: rec.mime_type.clone(), popularity: rec.popularity, at },
            *r,
            "{name}"
        );
    }
}
