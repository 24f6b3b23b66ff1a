//! Content metadata: acquisition from HTTP response heads and byte counters,
//! size classification, and the name-keyed metadata store.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::netmodel::NodeId;

/// Default elephant/mice boundary, in bytes.
pub const DEFAULT_ELEPHANT_THRESHOLD: u64 = 100_000;
/// Default per-packet header overhead subtracted from counted bytes.
pub const DEFAULT_PER_PACKET_OVERHEAD: u64 = 40;

const HEAD_TERMINATOR: &[u8] = b"\r\n\r\n";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HttpHeadError {
    #[error("response head has no CRLFCRLF terminator")]
    Unterminated,
    #[error("response does not start with an HTTP/1.x status line")]
    BadStatusLine,
    #[error("malformed header line")]
    BadHeaderLine,
    #[error("no Content-Length header")]
    MissingContentLength,
    #[error("Content-Length is not a decimal number")]
    InvalidContentLength,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseHead {
    pub content_length: u64,
    /// Media type with parameters stripped, lowercased.
    pub mime_type: Option<String>,
}

/// Reads `Content-Length` and `Content-Type` out of an HTTP/1.x response
/// head. Nothing past the first CRLFCRLF is inspected.
pub fn parse_http_response_head(bytes: &[u8]) -> Result<ResponseHead, HttpHeadError> {
    let end = bytes
        .windows(HEAD_TERMINATOR.len())
        .position(|w| w == HEAD_TERMINATOR)
        .ok_or(HttpHeadError::Unterminated)?;
    let head = std::str::from_utf8(&bytes[..end]).map_err(|_| HttpHeadError::BadHeaderLine)?;
    let mut lines = head.split("\r\n");

    let status = lines.next().unwrap_or_default();
    let version = status.split(' ').next().unwrap_or_default();
    if !matches!(version, "HTTP/1.0" | "HTTP/1.1") || status.len() < version.len() + 4 {
        return Err(HttpHeadError::BadStatusLine);
    }

    let mut content_length = None;
    let mut mime_type = None;
    for line in lines {
        let (name, value) = line.split_once(':').ok_or(HttpHeadError::BadHeaderLine)?;
        if name.is_empty() || name.ends_with([' ', '\t']) {
            return Err(HttpHeadError::BadHeaderLine);
        }
        let value = value.trim_matches([' ', '\t']);
        if name.eq_ignore_ascii_case("content-length") {
            let parsed = parse_decimal(value)?;
            // Conflicting duplicates are a smuggling vector; reject them.
            if content_length.is_some_and(|prev| prev != parsed) {
                return Err(HttpHeadError::InvalidContentLength);
            }
            content_length = Some(parsed);
        } else if name.eq_ignore_ascii_case("content-type") && mime_type.is_none() {
            let media = value.split(';').next().unwrap_or_default().trim();
            if !media.is_empty() {
                mime_type = Some(media.to_ascii_lowercase());
            }
        }
    }
    Ok(ResponseHead {
        content_length: content_length.ok_or(HttpHeadError::MissingContentLength)?,
        mime_type,
    })
}

fn parse_decimal(value: &str) -> Result<u64, HttpHeadError> {
    if value.is_empty() || !value.bytes().all(|b| b.is_ascii_digit()) {
        return Err(HttpHeadError::InvalidContentLength);
    }
    value.parse().map_err(|_| HttpHeadError::InvalidContentLength)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("overhead correction {correction} exceeds counted bytes {counted}")]
pub struct CounterUnderflow {
    pub counted: u64,
    pub correction: u128,
}

/// Subtracts per-packet header overhead from a switch byte counter.
pub fn finalize_size_from_counter(
    counted_bytes: u64,
    packet_count: u64,
    per_packet_overhead: u64,
) -> Result<u64, CounterUnderflow> {
    let correction = packet_count as u128 * per_packet_overhead as u128;
    (counted_bytes as u128)
        .checked_sub(correction)
        .map(|v| v as u64)
        .ok_or(CounterUnderflow { counted: counted_bytes, correction })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    Elephant,
    Mice,
}

/// Elephant iff `size_bytes >= threshold`.
pub fn classify(size_bytes: u64, threshold: u64) -> SizeClass {
    debug_assert!(threshold > 0);
    if size_bytes >= threshold {
        SizeClass::Elephant
    } else {
        SizeClass::Mice
    }
}

/// Where a recorded size came from. Later sources only replace a size
/// from a source of equal or lower rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeSource {
    #[default]
    Unknown,
    Counter,
    Header,
    Footprint,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ContentMetadata {
    pub name: String,
    /// 0 when unknown.
    pub size_bytes: u64,
    pub size_source: SizeSource,
    pub mime_type: Option<String>,
    pub popularity: u64,
    pub cached_at: BTreeSet<NodeId>,
}

impl ContentMetadata {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), ..Default::default() }
    }

    pub fn size_known(&self) -> bool {
        self.size_bytes > 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("content name must not be empty")]
    EmptyName,
    #[error("no metadata for `{0}`")]
    NotFound(String),
}

/// Key-value store mapping content name to metadata.
#[derive(Debug, Clone, Default, Serialize)]
#[serde(transparent)]
pub struct MetadataStore {
    records: BTreeMap<String, ContentMetadata>,
}

impl MetadataStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.records.contains_key(name)
    }

    /// Upserts by name. On update, a non-zero size or a MIME type replaces
    /// the old value, cache locations are merged and popularity is kept.
    pub fn put(&mut self, record: ContentMetadata) -> Result<&ContentMetadata, StoreError> {
        if record.name.is_empty() {
            return Err(StoreError::EmptyName);
        }
        let name = record.name.clone();
        match self.records.get_mut(&name) {
            Some(existing) => {
                if record.size_bytes > 0 {
                    existing.size_bytes = record.size_bytes;
                    existing.size_source = record.size_source.max(SizeSource::Counter);
                }
                if record.mime_type.is_some() {
                    existing.mime_type = record.mime_type;
                }
                existing.cached_at.extend(record.cached_at);
            }
            None => {
                self.records.insert(name.clone(), record);
            }
        }
        Ok(&self.records[&name])
    }

    pub fn get(&self, name: &str) -> Result<&ContentMetadata, StoreError> {
        self.records.get(name).ok_or_else(|| StoreError::NotFound(name.to_owned()))
    }

    /// Counts one request for `name`.
    pub fn record_access(&mut self, name: &str) -> Result<u64, StoreError> {
        let rec = self.records.get_mut(name).ok_or_else(|| StoreError::NotFound(name.to_owned()))?;
        rec.popularity += 1;
        Ok(rec.popularity)
    }

    /// Records a size measurement unless a higher-ranked source already set one.
    /// Returns whether the stored size changed.
    pub fn update_size(&mut self, name: &str, size_bytes: u64, source: SizeSource) -> Result<bool, StoreError> {
        if name.is_empty() {
            return Err(StoreError::EmptyName);
        }
        let rec = self
            .records
            .entry(name.to_owned())
            .or_insert_with(|| ContentMetadata::new(name));
        if size_bytes == 0 || source < rec.size_source {
            return Ok(false);
        }
        let changed = rec.size_bytes != size_bytes;
        rec.size_bytes = size_bytes;
        rec.size_source = source;
        Ok(changed)
    }

    pub fn set_mime(&mut self, name: &str, mime: String) -> Result<(), StoreError> {
        let rec = self.records.get_mut(name).ok_or_else(|| StoreError::NotFound(name.to_owned()))?;
        rec.mime_type = Some(mime);
        Ok(())
    }

    pub fn add_location(&mut self, name: &str, node: NodeId) -> Result<(), StoreError> {
        let rec = self.records.get_mut(name).ok_or_else(|| StoreError::NotFound(name.to_owned()))?;
        rec.cached_at.insert(node);
        Ok(())
    }

    pub fn remove_location(&mut self, name: &str, node: &NodeId) {
        if let Some(rec) = self.records.get_mut(name) {
            rec.cached_at.remove(node);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &ContentMetadata> {
        self.records.values()
    }

    /// Name-keyed JSON dump for debugging.
    pub fn dump_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metadata serializes")
    }
}
