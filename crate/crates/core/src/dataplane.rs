//! Simulated forwarding elements: switches with flow tables and byte-budget
//! expiry, caches that report their footprint, and the request proxy.
//!
//! [`Fabric`] ties the elements to a [`Graph`] and walks packets hop by hop.

use std::collections::BTreeMap;

use log::{debug, trace};
use thiserror::Error;

use crate::controller::{ContentRequest, Decision};
use crate::metadata::parse_http_response_head;
use crate::netmodel::{Graph, LinkIdx, NodeId, NodeKind};
use crate::protocol::{Action, Capabilities, FiveTuple, FlowMod, Message, PacketInMeta};

/// Payload bytes per full-size segment.
pub const MSS_BYTES: u32 = 1460;
/// Header bytes carried by every simulated packet.
pub const HEADER_BYTES: u32 = 40;
/// Hop limit for a single packet walk.
const MAX_HOPS: usize = 64;

/// A simulated packet. `len` is the wire length seen by switch counters and
/// includes `header_len` bytes of headers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub tuple: FiveTuple,
    pub content_name: Option<String>,
    pub len: u32,
    pub header_len: u32,
    /// Application response head, carried out of band (not counted in `len`).
    pub http_head: Option<Vec<u8>>,
    /// Last segment of the transfer.
    pub fin: bool,
}

impl Packet {
    pub fn payload_len(&self) -> u32 {
        self.len.saturating_sub(self.header_len)
    }

    /// Same packet cut down to `len` wire bytes.
    fn truncated(&self, len: u32) -> Packet {
        Packet { len, ..self.clone() }
    }
}

/// Splits `payload_bytes` into MSS-sized packets. The first packet carries
/// `http_head`, the last one is flagged `fin`.
pub fn segment(
    tuple: FiveTuple,
    content_name: Option<&str>,
    payload_bytes: u64,
    http_head: Option<Vec<u8>>,
) -> Vec<Packet> {
    let mut out = Vec::new();
    let mut left = payload_bytes;
    let mut head = http_head;
    loop {
        let chunk = left.min(MSS_BYTES as u64) as u32;
        left -= chunk as u64;
        out.push(Packet {
            tuple,
            content_name: content_name.map(str::to_owned),
            len: chunk + HEADER_BYTES,
            header_len: HEADER_BYTES,
            http_head: head.take(),
            fin: left == 0,
        });
        if left == 0 {
            return out;
        }
    }
}

/// Wire bytes a transfer of `payload_bytes` puts on each link.
pub fn wire_bytes(payload_bytes: u64) -> u64 {
    payload_bytes + payload_bytes.div_ceil(MSS_BYTES as u64).max(1) * HEADER_BYTES as u64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowEntry {
    pub rule: FlowMod,
    pub byte_counter: u64,
    pub packet_counter: u64,
    pub expired: bool,
}

impl FlowEntry {
    fn new(rule: FlowMod) -> Self {
        Self { rule, byte_counter: 0, packet_counter: 0, expired: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Egress {
    /// Default minimum-hop forwarding toward the destination address.
    Normal,
    Port(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disposition {
    Forwarded,
    /// Dropped by a DROP action, an exhausted byte budget or an expired entry.
    Dropped,
    /// No entry matched; the packet went to the controller.
    TableMiss,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchOutcome {
    pub disposition: Disposition,
    pub egress: Vec<Egress>,
    /// Wire bytes carried by each forwarded copy.
    pub forwarded_bytes: u32,
    pub emitted: Vec<Message>,
}

enum Lookup {
    Hit(usize),
    ExpiredOnly,
    Miss,
}

/// A switch and its flow table, kept in descending priority order with
/// insertion order preserved among equal priorities.
#[derive(Debug, Clone)]
pub struct SwitchState {
    pub node: NodeId,
    pub datapath_id: u64,
    pub capabilities: Capabilities,
    table: Vec<FlowEntry>,
}

impl SwitchState {
    pub fn new(node: NodeId, datapath_id: u64, capabilities: Capabilities) -> Self {
        Self { node, datapath_id, capabilities, table: Vec::new() }
    }

    pub fn table(&self) -> &[FlowEntry] {
        &self.table
    }

    /// Applies a controller message, returning any replies.
    pub fn handle_control(&mut self, msg: &Message) -> Vec<Message> {
        match msg {
            Message::FeaturesRequest => vec![Message::FeaturesReply {
                datapath_id: self.datapath_id,
                capabilities: self.capabilities,
            }],
            Message::FlowMod(fm) => {
                self.install(fm.clone());
                Vec::new()
            }
            other => {
                debug!("{}: ignoring {}", self.node, other.message_type());
                Vec::new()
            }
        }
    }

    /// Adds a rule. A rule with the same match and priority as an existing
    /// one replaces it and resets its counters.
    pub fn install(&mut self, rule: FlowMod) {
        if let Some(e) = self
            .table
            .iter_mut()
            .find(|e| e.rule.priority == rule.priority && e.rule.matcher == rule.matcher)
        {
            *e = FlowEntry::new(rule);
            return;
        }
        let at = self.table.partition_point(|e| e.rule.priority >= rule.priority);
        self.table.insert(at, FlowEntry::new(rule));
    }

    fn lookup(&self, packet: &Packet) -> Lookup {
        let name = packet.content_name.as_deref();
        let mut saw_expired = false;
        for (i, e) in self.table.iter().enumerate() {
            if e.rule.matcher.matches(name, &packet.tuple) {
                if !e.expired {
                    return Lookup::Hit(i);
                }
                saw_expired = true;
            }
        }
        if saw_expired {
            Lookup::ExpiredOnly
        } else {
            Lookup::Miss
        }
    }

    /// Runs one packet through the flow table.
    pub fn process(&mut self, packet: &Packet) -> SwitchOutcome {
        let idx = match self.lookup(packet) {
            Lookup::Hit(i) => i,
            Lookup::ExpiredOnly => {
                trace!("{}: drop {} on expired flow", self.node, packet.tuple);
                return SwitchOutcome {
                    disposition: Disposition::Dropped,
                    egress: Vec::new(),
                    forwarded_bytes: 0,
                    emitted: Vec::new(),
                };
            }
            Lookup::Miss => {
                let t = packet.tuple;
                return SwitchOutcome {
                    disposition: Disposition::TableMiss,
                    egress: Vec::new(),
                    forwarded_bytes: 0,
                    emitted: vec![Message::PacketIn(PacketInMeta {
                        content_name: packet.content_name.clone().unwrap_or_default(),
                        content_size: 0,
                        src_ip: t.src_ip,
                        src_port: t.src_port,
                        dst_ip: t.dst_ip,
                        dst_port: t.dst_port,
                    })],
                };
            }
        };

        let entry = &mut self.table[idx];
        let until = entry.rule.until_byte_count;
        let allowed = if until > 0 {
            (packet.len as u64).min(until - entry.byte_counter) as u32
        } else {
            packet.len
        };
        entry.byte_counter += allowed as u64;
        entry.packet_counter += 1;

        let mut emitted = Vec::new();
        let mut egress = Vec::new();
        let mut dropped = false;
        for action in &entry.rule.actions {
            match *action {
                Action::ExtractMetadata => {
                    if let Some(meta) = extract_metadata(packet) {
                        emitted.push(Message::PacketIn(meta));
                    }
                }
                Action::Normal => egress.push(Egress::Normal),
                Action::Output(port) => egress.push(Egress::Port(port)),
                Action::Cache => {}
                Action::Drop => {
                    egress.clear();
                    dropped = true;
                    break;
                }
            }
        }

        if until > 0 && entry.byte_counter >= until {
            entry.expired = true;
            emitted.push(Message::FlowExpired {
                matcher: entry.rule.matcher.clone(),
                bytes_counted: entry.byte_counter,
            });
        }

        // A counting flow closes with its transfer and reports what it saw.
        let counting = until == 0
            && entry.rule.matcher.content_name.is_some()
            && entry.rule.actions.contains(&Action::ExtractMetadata);
        if packet.fin && counting {
            emitted.push(Message::FlowExpired {
                matcher: entry.rule.matcher.clone(),
                bytes_counted: entry.byte_counter,
            });
            self.table.remove(idx);
        }

        let disposition = if dropped || egress.is_empty() || allowed == 0 {
            Disposition::Dropped
        } else {
            Disposition::Forwarded
        };
        if disposition == Disposition::Dropped {
            egress.clear();
        }
        SwitchOutcome { disposition, egress, forwarded_bytes: allowed, emitted }
    }
}

fn extract_metadata(packet: &Packet) -> Option<PacketInMeta> {
    let head = packet.http_head.as_deref()?;
    let name = packet.content_name.as_deref()?;
    // Without a usable Content-Length the counter path takes over.
    let parsed = parse_http_response_head(head).ok()?;
    (parsed.content_length > 0).then(|| PacketInMeta {
        content_name: name.to_owned(),
        content_size: parsed.content_length,
        src_ip: packet.tuple.src_ip,
        src_port: packet.tuple.src_port,
        dst_ip: packet.tuple.dst_ip,
        dst_port: packet.tuple.dst_port,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CacheError {
    #[error("cannot store an empty object")]
    Empty,
    #[error("object of {size} bytes exceeds cache capacity {capacity}")]
    TooLarge { size: u64, capacity: u64 },
    #[error("eviction list frees {freed} bytes, {needed} needed")]
    EvictionShortfall { needed: u64, freed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheStoreOutcome {
    /// `CACHE_REPORT` for the stored object, followed by zero-footprint
    /// reports for every evicted one.
    pub reports: Vec<Message>,
    pub evicted: Vec<(String, u64)>,
}

/// A cache node: name → stored byte length, bounded by capacity.
#[derive(Debug, Clone)]
pub struct CacheState {
    pub node: NodeId,
    pub datapath_id: u64,
    pub capacity_bytes: u64,
    stored: BTreeMap<String, u64>,
    assembling: BTreeMap<String, u64>,
    reporting: bool,
}

impl CacheState {
    pub fn new(node: NodeId, datapath_id: u64, capacity_bytes: u64) -> Self {
        Self {
            node,
            datapath_id,
            capacity_bytes,
            stored: BTreeMap::new(),
            assembling: BTreeMap::new(),
            reporting: false,
        }
    }

    pub fn used_bytes(&self) -> u64 {
        self.stored.values().sum()
    }

    pub fn get(&self, name: &str) -> Option<u64> {
        self.stored.get(name).copied()
    }

    pub fn contents(&self) -> impl Iterator<Item = (&str, u64)> {
        self.stored.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Whether the controller has asked this cache to report metadata.
    pub fn reporting(&self) -> bool {
        self.reporting
    }

    /// Bytes that must be freed before `name` of `bytes` fits.
    pub fn deficit_for(&self, name: &str, bytes: u64) -> u64 {
        let used = self.used_bytes() - self.get(name).unwrap_or(0);
        (used + bytes).saturating_sub(self.capacity_bytes)
    }

    pub fn handle_control(&mut self, msg: &Message) -> Vec<Message> {
        match msg {
            Message::FeaturesRequest => vec![Message::FeaturesReply {
                datapath_id: self.datapath_id,
                capabilities: Capabilities::CACHE_CONTENT,
            }],
            Message::FlowMod(fm) if fm.actions.contains(&Action::Cache) => {
                self.reporting = true;
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    /// Stores an object, evicting entries from `evict` (in order) as far as
    /// needed. Nothing changes if the list cannot cover the deficit.
    pub fn store(&mut self, name: &str, bytes: u64, evict: &[String]) -> Result<CacheStoreOutcome, CacheError> {
        if bytes == 0 {
            return Err(CacheError::Empty);
        }
        if bytes > self.capacity_bytes {
            return Err(CacheError::TooLarge { size: bytes, capacity: self.capacity_bytes });
        }
        let needed = self.deficit_for(name, bytes);
        let mut freed = 0;
        let mut victims = Vec::new();
        for victim in evict {
            if freed >= needed {
                break;
            }
            if victim == name || victims.iter().any(|(v, _)| v == victim) {
                continue;
            }
            if let Some(&size) = self.stored.get(victim) {
                freed += size;
                victims.push((victim.clone(), size));
            }
        }
        if freed < needed {
            return Err(CacheError::EvictionShortfall { needed, freed });
        }
        let mut reports = vec![Message::CacheReport { content_name: name.to_owned(), footprint_bytes: bytes }];
        for (victim, _) in &victims {
            self.stored.remove(victim);
            reports.push(Message::CacheReport { content_name: victim.clone(), footprint_bytes: 0 });
        }
        self.stored.insert(name.to_owned(), bytes);
        debug_assert!(self.used_bytes() <= self.capacity_bytes);
        Ok(CacheStoreOutcome { reports, evicted: victims })
    }

    /// Accumulates payload of an incoming content packet. Returns the
    /// completed object on its final segment.
    pub fn receive(&mut self, packet: &Packet) -> Option<(String, u64)> {
        let name = packet.content_name.as_ref()?;
        *self.assembling.entry(name.clone()).or_default() += packet.payload_len() as u64;
        if packet.fin {
            self.assembling.remove_entry(name)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProxyAction {
    ForwardToOrigin(NodeId),
    RedirectToCache(NodeId),
}

/// The transparent request proxy.
#[derive(Debug, Clone)]
pub struct ProxyState {
    pub node: NodeId,
    pub datapath_id: u64,
    connected: bool,
}

impl ProxyState {
    pub fn new(node: NodeId, datapath_id: u64) -> Self {
        Self { node, datapath_id, connected: false }
    }

    pub fn connected(&self) -> bool {
        self.connected
    }

    pub fn handle_control(&mut self, msg: &Message) -> Vec<Message> {
        match msg {
            Message::FeaturesRequest => {
                self.connected = true;
                vec![Message::FeaturesReply {
                    datapath_id: self.datapath_id,
                    capabilities: Capabilities::PROXY_CONTENT,
                }]
            }
            _ => Vec::new(),
        }
    }

    /// Reads the media type off an origin response head the proxy relays.
    pub fn observe_response(&self, head: &[u8]) -> Option<String> {
        parse_http_response_head(head).ok()?.mime_type
    }

    /// Turns a client GET into the query sent to the controller.
    pub fn handle_get(&self, request: ContentRequest) -> ContentRequest {
        request
    }

    /// Applies the controller's answer. `None` means the controller did not
    /// answer in time; the proxy then fails open to the origin.
    pub fn apply(&self, request: &ContentRequest, decision: Option<&Decision>) -> ProxyAction {
        match decision {
            Some(Decision::Hit(hit)) => ProxyAction::RedirectToCache(hit.cache.clone()),
            Some(Decision::Miss(_)) | None => ProxyAction::ForwardToOrigin(request.origin.clone()),
        }
    }
}

/// Something that reached a non-switch node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arrival {
    /// Payload delivered to a client or server.
    Host { node: NodeId, packet: Packet },
    Proxy { node: NodeId, packet: Packet },
    /// A cache received the last segment of an object.
    CacheComplete { node: NodeId, name: String, bytes: u64 },
}

/// Result of walking one injected packet through the fabric.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transit {
    /// Messages from switches to the controller, tagged with their source.
    pub to_controller: Vec<(NodeId, Message)>,
    pub arrivals: Vec<Arrival>,
    /// Switches where a copy was dropped or missed the table.
    pub stopped_at: Vec<(NodeId, Disposition)>,
    /// Wire bytes forwarded per switch.
    pub forwarded: Vec<(NodeId, u32)>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FabricError {
    #[error("unknown element `{0}`")]
    UnknownElement(NodeId),
    #[error("no route from `{from}` toward {dst}")]
    NoRoute { from: NodeId, dst: std::net::Ipv4Addr },
    #[error("link index {port} is not an outgoing link of `{node}`")]
    BadPort { node: NodeId, port: u16 },
}

/// All elements of a topology plus per-host delivery counters.
#[derive(Debug, Clone)]
pub struct Fabric {
    graph: Graph,
    pub switches: BTreeMap<NodeId, SwitchState>,
    pub caches: BTreeMap<NodeId, CacheState>,
    pub proxies: BTreeMap<NodeId, ProxyState>,
    delivered: BTreeMap<NodeId, u64>,
}

impl Fabric {
    /// Builds one element per node. Ingress switches advertise metadata
    /// extraction; datapath ids follow declaration order starting at 1.
    pub fn new(graph: Graph, cache_capacity_bytes: u64) -> Self {
        let mut switches = BTreeMap::new();
        let mut caches = BTreeMap::new();
        let mut proxies = BTreeMap::new();
        for (i, n) in graph.nodes().iter().enumerate() {
            let dpid = i as u64 + 1;
            match n.kind {
                NodeKind::IngressSwitch => {
                    switches.insert(n.id.clone(), SwitchState::new(n.id.clone(), dpid, Capabilities::EXTRACT_METADATA));
                }
                NodeKind::Switch => {
                    switches.insert(n.id.clone(), SwitchState::new(n.id.clone(), dpid, Capabilities::empty()));
                }
                NodeKind::Cache => {
                    caches.insert(n.id.clone(), CacheState::new(n.id.clone(), dpid, cache_capacity_bytes));
                }
                NodeKind::Proxy => {
                    proxies.insert(n.id.clone(), ProxyState::new(n.id.clone(), dpid));
                }
                NodeKind::Client | NodeKind::Server => {}
            }
        }
        Self { graph, switches, caches, proxies, delivered: BTreeMap::new() }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Elements that hold a controller session, in id order.
    pub fn elements(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self
            .switches
            .keys()
            .chain(self.caches.keys())
            .chain(self.proxies.keys())
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    /// Payload bytes delivered to a client or server so far.
    pub fn delivered_to(&self, node: &NodeId) -> u64 {
        self.delivered.get(node).copied().unwrap_or(0)
    }

    /// Delivers a controller message to an element and returns its replies.
    pub fn control(&mut self, to: &NodeId, msg: &Message) -> Result<Vec<Message>, FabricError> {
        if let Some(sw) = self.switches.get_mut(to) {
            Ok(sw.handle_control(msg))
        } else if let Some(c) = self.caches.get_mut(to) {
            Ok(c.handle_control(msg))
        } else if let Some(p) = self.proxies.get_mut(to) {
            Ok(p.handle_control(msg))
        } else {
            Err(FabricError::UnknownElement(to.clone()))
        }
    }

    /// Sends a packet from `origin`, out of `first_link` if given or along the
    /// default route otherwise, and follows it until every copy stops.
    pub fn send(&mut self, origin: &NodeId, first_link: Option<LinkIdx>, packet: Packet) -> Result<Transit, FabricError> {
        let link = match first_link {
            Some(l) => {
                if self.graph.link(l).src != *origin {
                    return Err(FabricError::BadPort { node: origin.clone(), port: l.0 as u16 });
                }
                l
            }
            None => self.route(origin, &packet)?,
        };
        let mut transit = Transit::default();
        let mut work = vec![(self.graph.link(link).dst.clone(), packet, 0usize)];
        while let Some((node, packet, hops)) = work.pop() {
            if hops >= MAX_HOPS {
                debug!("hop limit reached at {node}");
                continue;
            }
            let kind = self.graph.kind(&node).ok_or_else(|| FabricError::UnknownElement(node.clone()))?;
            match kind {
                NodeKind::Switch | NodeKind::IngressSwitch => {
                    let sw = self.switches.get_mut(&node).expect("switch element exists");
                    let outcome = sw.process(&packet);
                    transit.to_controller.extend(outcome.emitted.into_iter().map(|m| (node.clone(), m)));
                    if outcome.disposition != Disposition::Forwarded {
                        transit.stopped_at.push((node.clone(), outcome.disposition));
                        continue;
                    }
                    transit.forwarded.push((node.clone(), outcome.forwarded_bytes));
                    let copy = packet.truncated(outcome.forwarded_bytes);
                    // Reverse so copies are walked in action order.
                    for egress in outcome.egress.iter().rev() {
                        let l = match *egress {
                            Egress::Normal => self.route(&node, &copy)?,
                            Egress::Port(p) => {
                                let l = LinkIdx(p as usize);
                                if p as usize >= self.graph.links().len() || self.graph.link(l).src != node {
                                    return Err(FabricError::BadPort { node: node.clone(), port: p });
                                }
                                l
                            }
                        };
                        work.push((self.graph.link(l).dst.clone(), copy.clone(), hops + 1));
                    }
                }
                NodeKind::Cache => {
                    let cache = self.caches.get_mut(&node).expect("cache element exists");
                    if let Some((name, bytes)) = cache.receive(&packet) {
                        transit.arrivals.push(Arrival::CacheComplete { node: node.clone(), name, bytes });
                    }
                }
                NodeKind::Proxy => transit.arrivals.push(Arrival::Proxy { node, packet }),
                NodeKind::Client | NodeKind::Server => {
                    *self.delivered.entry(node.clone()).or_default() += packet.payload_len() as u64;
                    transit.arrivals.push(Arrival::Host { node, packet });
                }
            }
        }
        Ok(transit)
    }

    fn route(&self, from: &NodeId, packet: &Packet) -> Result<LinkIdx, FabricError> {
        let dst_ip = packet.tuple.dst_ip;
        let no_route = || FabricError::NoRoute { from: from.clone(), dst: dst_ip };
        let dst = self.graph.node_by_ip(dst_ip).ok_or_else(no_route)?;
        self.graph.next_hop(from, dst).ok_or_else(no_route)
    }
}

#[cfg(test)]
mod tests {
    use std::net::Ipv4Addr;

    use super::*;
    use crate::protocol::FlowMatch;

    fn tuple() -> FiveTuple {
        FiveTuple::tcp(Ipv4Addr::new(10, 0, 0, 2), 8080, Ipv4Addr::new(10, 0, 0, 3), 40000)
    }

    fn pkt(len: u32) -> Packet {
        Packet { tuple: tuple(), content_name: Some("x".into()), len, header_len: 0, http_head: None, fin: false }
    }

    fn budget_rule(until: u64) -> FlowMod {
        FlowMod {
            matcher: FlowMatch::content_flow("x", tuple()),
            priority: 200,
            actions: vec![Action::Output(0)],
            until_byte_count: until,
        }
    }

    #[test]
    fn byte_budget_truncates_and_expires() {
        let mut sw = SwitchState::new("s".into(), 1, Capabilities::empty());
        sw.install(budget_rule(1000));
        let a = sw.process(&pkt(400));
        let b = sw.process(&pkt(400));
        let c = sw.process(&pkt(400));
        assert_eq!((a.forwarded_bytes, b.forwarded_bytes, c.forwarded_bytes), (400, 400, 200));
        assert!(a.emitted.is_empty() && b.emitted.is_empty());
        assert_eq!(
            c.emitted,
            vec![Message::FlowExpired { matcher: budget_rule(0).matcher, bytes_counted: 1000 }]
        );
        assert!(sw.table()[0].expired);
        let d = sw.process(&pkt(400));
        assert_eq!(d.disposition, Disposition::Dropped);
        assert!(d.emitted.is_empty());
    }

    #[test]
    fn table_miss_goes_to_controller() {
        let mut sw = SwitchState::new("s".into(), 1, Capabilities::empty());
        let out = sw.process(&pkt(10));
        assert_eq!(out.disposition, Disposition::TableMiss);
        assert!(matches!(&out.emitted[..], [Message::PacketIn(m)] if m.content_size == 0));
    }

    #[test]
    fn priority_then_insertion_order() {
        let mut sw = SwitchState::new("s".into(), 1, Capabilities::empty());
        let rule = |prio, port| FlowMod {
            matcher: FlowMatch::tuple(tuple()),
            priority: prio,
            actions: vec![Action::Output(port)],
            until_byte_count: 0,
        };
        sw.install(rule(10, 1));
        sw.install(FlowMod { matcher: FlowMatch::content("x"), ..rule(10, 2) });
        sw.install(rule(20, 3));
        assert_eq!(sw.process(&pkt(1)).egress, vec![Egress::Port(3)]);
        sw.install(rule(20, 4));
        assert_eq!(sw.table().len(), 3);
        assert_eq!(sw.process(&pkt(1)).egress, vec![Egress::Port(4)]);
        let prios: Vec<u16> = sw.table().iter().map(|e| e.rule.priority).collect();
        assert_eq!(prios, [20, 10, 10]);
        assert_eq!(sw.table()[1].rule.actions, vec![Action::Output(1)]);
    }

    #[test]
    fn extract_metadata_reports_content_length() {
        let mut sw = SwitchState::new("s".into(), 1, Capabilities::EXTRACT_METADATA);
        sw.install(FlowMod {
            matcher: FlowMatch::content("x"),
            priority: 100,
            actions: vec![Action::ExtractMetadata, Action::Normal],
            until_byte_count: 0,
        });
        let mut first = pkt(1500);
        first.http_head = Some(b"HTTP/1.1 200 OK\r\nContent-Length: 2920\r\n\r\n".to_vec());
        let out = sw.process(&first);
        assert_eq!(out.egress, vec![Egress::Normal]);
        assert!(matches!(&out.emitted[..], [Message::PacketIn(m)] if m.content_size == 2920 && m.content_name == "x"));
        let mut last = pkt(1500);
        last.fin = true;
        let out = sw.process(&last);
        assert!(matches!(&out.emitted[..], [Message::FlowExpired { bytes_counted: 3000, .. }]));
        assert!(sw.table().is_empty());
    }

    #[test]
    fn drop_action_discards() {
        let mut sw = SwitchState::new("s".into(), 1, Capabilities::empty());
        sw.install(FlowMod {
            matcher: FlowMatch::tuple(tuple()),
            priority: 1,
            actions: vec![Action::Normal, Action::Drop],
            until_byte_count: 0,
        });
        let out = sw.process(&pkt(10));
        assert_eq!(out.disposition, Disposition::Dropped);
        assert!(out.egress.is_empty());
    }

    #[test]
    fn cache_store_and_evict() {
        let mut c = CacheState::new("c".into(), 1, 10_000_000);
        let out = c.store("a", 1_000_000, &[]).unwrap();
        assert_eq!(out.reports, vec![Message::CacheReport { content_name: "a".into(), footprint_bytes: 1_000_000 }]);
        c.store("b", 8_000_000, &[]).unwrap();
        assert_eq!(c.store("c", 2_000_000, &[]), Err(CacheError::EvictionShortfall { needed: 1_000_000, freed: 0 }));
        let out = c.store("c", 2_000_000, &["a".into(), "b".into()]).unwrap();
        assert_eq!(out.evicted, vec![("a".into(), 1_000_000)]);
        assert_eq!(c.used_bytes(), 10_000_000);
        assert_eq!(c.store("z", 0, &[]), Err(CacheError::Empty));
        assert!(matches!(c.store("z", 20_000_000, &[]), Err(CacheError::TooLarge { .. })));
    }

    #[test]
    fn segmentation() {
        let t = tuple();
        let p = segment(t, Some("x"), 3000, Some(b"h".to_vec()));
        assert_eq!(p.iter().map(|p| p.payload_len()).collect::<Vec<_>>(), [1460, 1460, 80]);
        assert!(p[0].http_head.is_some() && p[1].http_head.is_none());
        assert!(p[2].fin && !p[0].fin);
        assert_eq!(p.iter().map(|p| p.len as u64).sum::<u64>(), wire_bytes(3000));
        assert_eq!(wire_bytes(1460), 1500);
    }
}
