//! The content management layer: element sessions, metadata bookkeeping,
//! traffic engineering over content size, the byte-budget firewall and
//! cache placement/eviction.
//!
//! All inbound messages go through [`Controller::handle_message`] one at a
//! time; the controller has no other mutation path for session or store
//! state.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataplane::{HEADER_BYTES, MSS_BYTES};
use crate::metadata::{
    finalize_size_from_counter, ContentMetadata, CounterUnderflow, MetadataStore, SizeSource, StoreError,
    DEFAULT_ELEPHANT_THRESHOLD, DEFAULT_PER_PACKET_OVERHEAD,
};
use crate::netmodel::{Graph, NodeId, NodeKind, Path, PathError, DEFAULT_MAX_PATHS};
use crate::protocol::{Action, Capabilities, FiveTuple, FlowMatch, FlowMod, Message, MessageType};

/// Port caches serve content from.
pub const CACHE_SERVE_PORT: u16 = 8080;
/// Port origin servers answer HTTP on.
pub const HTTP_PORT: u16 = 80;

pub const PRIORITY_STANDING: u16 = 1;
pub const PRIORITY_CONTENT: u16 = 100;
pub const PRIORITY_REDIRECT: u16 = 150;
pub const PRIORITY_FIREWALL: u16 = 200;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("message from unknown element `{0}`")]
    UnknownSource(NodeId),
    #[error("{message} from `{source_node}` is out of order (session state {state:?})")]
    OutOfOrder {
        source_node: NodeId,
        message: MessageType,
        state: Option<SessionState>,
    },
    #[error("no proxy session is ready")]
    ProxyNotReady,
    #[error("unknown client `{0}`")]
    UnknownClient(NodeId),
    #[error("no path from any candidate cache to `{0}`")]
    NoPath(NodeId),
    #[error("no candidate cache is reachable")]
    NoReachableCache,
    #[error("content `{0}` has no known size")]
    UnknownSize(String),
    #[error("delay bound must be positive")]
    BadBound,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Counter(#[from] CounterUnderflow),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed controller config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid controller config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeObjective {
    /// Least summed `(b_e + F) / c_e` over the path.
    #[default]
    MinCostPath,
    /// Least `F / bottleneck rate`.
    MinRetrievalDelay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub elephant_threshold_bytes: u64,
    pub per_packet_overhead_bytes: u64,
    pub te_objective: TeObjective,
    /// Media-type prefix → delay bound in seconds.
    pub delay_bounds: BTreeMap<String, f64>,
    pub max_paths: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            elephant_threshold_bytes: DEFAULT_ELEPHANT_THRESHOLD,
            per_packet_overhead_bytes: DEFAULT_PER_PACKET_OVERHEAD,
            te_objective: TeObjective::MinCostPath,
            delay_bounds: BTreeMap::new(),
            max_paths: DEFAULT_MAX_PATHS,
        }
    }
}

impl ControllerConfig {
    pub fn from_json(document: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(document)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.elephant_threshold_bytes == 0 {
            return Err(ConfigError::Invalid("elephant_threshold_bytes must be positive".into()));
        }
        if self.max_paths == 0 {
            return Err(ConfigError::Invalid("max_paths must be positive".into()));
        }
        if let Some((k, v)) = self.delay_bounds.iter().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(ConfigError::Invalid(format!("delay bound for `{k}` must be positive, got {v}")));
        }
        Ok(())
    }

    /// Bound of the longest media-type prefix matching `mime`.
    pub fn delay_bound_for(&self, mime: &str) -> Option<f64> {
        self.delay_bounds
            .iter()
            .filter(|(prefix, _)| mime.starts_with(prefix.as_str()))
            .max_by_key(|(prefix, _)| prefix.len())
            .map(|(_, &b)| b)
    }

    /// Budget slack for headers when the packet count is not known up front:
    /// one overhead per full-size segment.
    pub fn overhead_allowance(&self, size_bytes: u64) -> u64 {
        size_bytes.div_ceil(MSS_BYTES as u64) * self.per_packet_overhead_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    HelloSeen,
    FeaturesRequested,
    Ready,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementSession {
    pub element: NodeId,
    pub datapath_id: u64,
    pub capabilities: Capabilities,
    pub state: SessionState,
}

/// A client GET as relayed by the proxy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentRequest {
    pub name: String,
    pub client: NodeId,
    pub client_port: u16,
    pub origin: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissDecision {
    /// Cache and ingress→cache path the content is forked onto, if any.
    pub storage: Option<(NodeId, Path)>,
    pub ingress: Option<NodeId>,
    pub flow_mods: Vec<(NodeId, Message)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitDecision {
    pub cache: NodeId,
    pub path: Path,
    /// Size used for path selection, in bits.
    pub content_bits: f64,
    /// Transfer tuple the flows below are keyed on.
    pub tuple: FiveTuple,
    /// Byte budget of the firewall flows; `None` when size is unknown.
    pub until_byte_count: Option<u64>,
    pub flow_mods: Vec<(NodeId, Message)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Miss(MissDecision),
    Hit(HitDecision),
}

impl Decision {
    pub fn flow_mods(&self) -> &[(NodeId, Message)] {
        match self {
            Decision::Miss(m) => &m.flow_mods,
            Decision::Hit(h) => &h.flow_mods,
        }
    }
}

/// A firewall flow the controller installed and whether it has closed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FirewallRecord {
    pub switch: NodeId,
    pub matcher: FlowMatch,
    pub until_byte_count: u64,
    pub bytes_counted: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Controller {
    graph: Graph,
    config: ControllerConfig,
    sessions: BTreeMap<NodeId, ElementSession>,
    store: MetadataStore,
    writes_in_progress: BTreeMap<NodeId, u32>,
    pending_storage: BTreeMap<String, NodeId>,
    firewalls: Vec<FirewallRecord>,
}

impl Controller {
    pub fn new(graph: Graph, config: ControllerConfig) -> Self {
        Self {
            graph,
            config,
            sessions: BTreeMap::new(),
            store: MetadataStore::new(),
            writes_in_progress: BTreeMap::new(),
            pending_storage: BTreeMap::new(),
            firewalls: Vec::new(),
        }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn store(&self) -> &MetadataStore {
        &self.store
    }

    pub fn sessions(&self) -> &BTreeMap<NodeId, ElementSession> {
        &self.sessions
    }

    pub fn firewalls(&self) -> &[FirewallRecord] {
        &self.firewalls
    }

    pub fn writes_in_progress(&self) -> &BTreeMap<NodeId, u32> {
        &self.writes_in_progress
    }

    pub fn is_ready(&self, node: &NodeId) -> bool {
        self.sessions.get(node).is_some_and(|s| s.state == SessionState::Ready)
    }

    fn ready_of_kind(&self, kind: NodeKind) -> Vec<NodeId> {
        self.sessions
            .values()
            .filter(|s| s.state == SessionState::Ready && self.graph.kind(&s.element) == Some(kind))
            .map(|s| s.element.clone())
            .collect()
    }

    /// Processes one inbound message and returns the messages to send.
    pub fn handle_message(&mut self, source: &NodeId, msg: &Message) -> Result<Vec<(NodeId, Message)>, ControllerError> {
        let kind = self.graph.kind(source).ok_or_else(|| ControllerError::UnknownSource(source.clone()))?;
        let state = self.sessions.get(source).map(|s| s.state);
        let out_of_order = || ControllerError::OutOfOrder {
            source_node: source.clone(),
            message: msg.message_type(),
            state,
        };
        let mut out = Vec::new();
        match msg {
            Message::Hello => {
                if state.is_some() {
                    return Err(out_of_order());
                }
                self.sessions.insert(
                    source.clone(),
                    ElementSession {
                        element: source.clone(),
                        datapath_id: 0,
                        capabilities: Capabilities::empty(),
                        state: SessionState::HelloSeen,
                    },
                );
                out.push((source.clone(), Message::FeaturesRequest));
                self.sessions.get_mut(source).expect("just inserted").state = SessionState::FeaturesRequested;
            }
            Message::FeaturesReply { datapath_id, capabilities } => {
                if state != Some(SessionState::FeaturesRequested) {
                    return Err(out_of_order());
                }
                let session = self.sessions.get_mut(source).expect("session exists");
                session.datapath_id = *datapath_id;
                session.capabilities = *capabilities;
                session.state = SessionState::Ready;
                if kind == NodeKind::IngressSwitch && capabilities.contains(Capabilities::EXTRACT_METADATA) {
                    out.push((source.clone(), Message::FlowMod(standing_extraction_flow())));
                }
                if kind == NodeKind::Cache && capabilities.contains(Capabilities::CACHE_CONTENT) {
                    out.push((source.clone(), Message::FlowMod(cache_report_flow())));
                }
            }
            Message::PacketIn(meta) => {
                if state != Some(SessionState::Ready) {
                    return Err(out_of_order());
                }
                if meta.content_size > 0 && !meta.content_name.is_empty() {
                    self.store.update_size(&meta.content_name, meta.content_size, SizeSource::Header)?;
                } else {
                    if !meta.content_name.is_empty() && !self.store.contains(&meta.content_name) {
                        self.store.put(ContentMetadata::new(&meta.content_name))?;
                    }
                    out.extend(self.redirect_to_proxy(source, meta));
                }
            }
            Message::FlowExpired { matcher, bytes_counted } => {
                if state != Some(SessionState::Ready) {
                    return Err(out_of_order());
                }
                if let Some(fw) = self
                    .firewalls
                    .iter_mut()
                    .find(|f| f.switch == *source && f.matcher == *matcher && f.bytes_counted.is_none())
                {
                    fw.bytes_counted = Some(*bytes_counted);
                } else if let (Some(name), NodeKind::IngressSwitch) = (&matcher.content_name, kind) {
                    let wire_per_packet = MSS_BYTES as u64 + self.config.per_packet_overhead_bytes;
                    let packets = bytes_counted.div_ceil(wire_per_packet).max(1);
                    let size = finalize_size_from_counter(*bytes_counted, packets, self.config.per_packet_overhead_bytes)?;
                    self.store.update_size(name, size, SizeSource::Counter)?;
                }
            }
            Message::CacheReport { content_name, footprint_bytes } => {
                if state != Some(SessionState::Ready) || kind != NodeKind::Cache {
                    return Err(out_of_order());
                }
                if *footprint_bytes == 0 {
                    self.store.remove_location(content_name, source);
                } else {
                    self.store.update_size(content_name, *footprint_bytes, SizeSource::Footprint)?;
                    self.store.add_location(content_name, source.clone())?;
                    if self.pending_storage.get(content_name) == Some(source) {
                        self.pending_storage.remove(content_name);
                        if let Some(w) = self.writes_in_progress.get_mut(source) {
                            *w = w.saturating_sub(1);
                        }
                    }
                }
            }
            Message::FeaturesRequest | Message::FlowMod(_) => return Err(out_of_order()),
        }
        Ok(self.only_ready(out))
    }

    /// Drops FLOW_MODs addressed to elements whose session is not ready.
    fn only_ready(&self, out: Vec<(NodeId, Message)>) -> Vec<(NodeId, Message)> {
        out.into_iter()
            .filter(|(to, msg)| {
                let ok = !matches!(msg, Message::FlowMod(_)) || self.is_ready(to);
                if !ok {
                    warn!("withholding FLOW_MOD for `{to}`: session not ready");
                }
                ok
            })
            .collect()
    }

    /// Table-miss from a client toward an origin: steer it to the proxy.
    fn redirect_to_proxy(&self, switch: &NodeId, meta: &crate::protocol::PacketInMeta) -> Vec<(NodeId, Message)> {
        let from_client = self
            .graph
            .node_by_ip(meta.src_ip)
            .is_some_and(|n| self.graph.kind(n) == Some(NodeKind::Client));
        let to_server = self
            .graph
            .node_by_ip(meta.dst_ip)
            .is_some_and(|n| self.graph.kind(n) == Some(NodeKind::Server));
        if !(from_client && to_server) {
            debug!("table miss at {switch} for {}:{} ignored", meta.dst_ip, meta.dst_port);
            return Vec::new();
        }
        let Some(proxy) = self.ready_of_kind(NodeKind::Proxy).into_iter().next() else {
            warn!("table miss at {switch}: no ready proxy to redirect to");
            return Vec::new();
        };
        let Some(path) = self.graph.shortest_path(switch, &proxy) else {
            warn!("no route from {switch} to proxy {proxy}");
            return Vec::new();
        };
        let tuple = FiveTuple::tcp(meta.src_ip, meta.src_port, meta.dst_ip, meta.dst_port);
        forwarding_hops(&self.graph, &path)
            .into_iter()
            .map(|(sw, port)| {
                (
                    sw,
                    Message::FlowMod(FlowMod {
                        matcher: FlowMatch::tuple(tuple),
                        priority: PRIORITY_REDIRECT,
                        actions: vec![Action::Output(port)],
                        until_byte_count: 0,
                    }),
                )
            })
            .collect()
    }

    /// Answers a proxy query: redirect to a cache holding the content, or
    /// let the request through to the origin while arranging to count and
    /// cache the response.
    pub fn handle_content_request(&mut self, req: &ContentRequest) -> Result<Decision, ControllerError> {
        if self.ready_of_kind(NodeKind::Proxy).is_empty() {
            return Err(ControllerError::ProxyNotReady);
        }
        if self.graph.kind(&req.client) != Some(NodeKind::Client) {
            return Err(ControllerError::UnknownClient(req.client.clone()));
        }
        if !self.store.contains(&req.name) {
            self.store.put(ContentMetadata::new(&req.name))?;
        }
        self.store.record_access(&req.name)?;
        let record = self.store.get(&req.name)?.clone();
        let holders: Vec<NodeId> = record.cached_at.iter().filter(|c| self.is_ready(c)).cloned().collect();

        let decision = if holders.is_empty() {
            Decision::Miss(self.plan_miss(req, &record))
        } else {
            Decision::Hit(self.plan_hit(req, &record, &holders)?)
        };
        Ok(match decision {
            Decision::Miss(mut m) => {
                m.flow_mods = self.only_ready(m.flow_mods);
                Decision::Miss(m)
            }
            Decision::Hit(mut h) => {
                h.flow_mods = self.only_ready(h.flow_mods);
                Decision::Hit(h)
            }
        })
    }

    /// Size to plan with: the stored size, or the elephant threshold as a
    /// conservative stand-in while it is unknown.
    fn planning_bits(&self, record: &ContentMetadata) -> f64 {
        let bytes = if record.size_known() { record.size_bytes } else { self.config.elephant_threshold_bytes };
        bytes as f64 * 8.0
    }

    fn plan_miss(&mut self, req: &ContentRequest, record: &ContentMetadata) -> MissDecision {
        let ingress = self.ingress_for(&req.origin, &req.client);
        // The origin's answer to this connection; flows are scoped to it.
        let response = self.response_tuple(req);
        let matcher = FlowMatch { content_name: Some(req.name.clone()), tuple: response };
        let mut flow_mods = Vec::new();
        let mut storage = None;
        if let Some(ingress) = &ingress {
            let mut actions = vec![Action::ExtractMetadata, Action::Normal];
            let caches: Vec<NodeId> = self
                .ready_of_kind(NodeKind::Cache)
                .into_iter()
                .filter(|c| self.sessions[c].capabilities.contains(Capabilities::CACHE_CONTENT))
                .collect();
            if !caches.is_empty() && !self.pending_storage.contains_key(&req.name) {
                match select_cache_for_storage(
                    &self.graph,
                    ingress,
                    &caches,
                    self.planning_bits(record),
                    self.config.max_paths,
                    &self.writes_in_progress,
                ) {
                    Ok((cache, path)) => {
                        let hops = forwarding_hops(&self.graph, &path);
                        for (sw, port) in &hops {
                            if sw == ingress {
                                actions.push(Action::Output(*port));
                            } else {
                                flow_mods.push((
                                    sw.clone(),
                                    Message::FlowMod(FlowMod {
                                        matcher: matcher.clone(),
                                        priority: PRIORITY_CONTENT,
                                        actions: vec![Action::Output(*port)],
                                        until_byte_count: 0,
                                    }),
                                ));
                            }
                        }
                        *self.writes_in_progress.entry(cache.clone()).or_default() += 1;
                        self.pending_storage.insert(req.name.clone(), cache.clone());
                        storage = Some((cache, path));
                    }
                    Err(e) => debug!("no cache placement for `{}`: {e}", req.name),
                }
            }
            flow_mods.insert(
                0,
                (
                    ingress.clone(),
                    Message::FlowMod(FlowMod {
                        matcher: matcher.clone(),
                        priority: PRIORITY_CONTENT,
                        actions,
                        until_byte_count: 0,
                    }),
                ),
            );
        }
        MissDecision { storage, ingress, flow_mods }
    }

    fn response_tuple(&self, req: &ContentRequest) -> Option<FiveTuple> {
        let origin = self.graph.node_ip(&req.origin)?;
        let client = self.graph.node_ip(&req.client)?;
        Some(FiveTuple::tcp(origin, HTTP_PORT, client, req.client_port))
    }

    /// Ingress switch on the default route from the origin to the client,
    /// falling back to the first ready ingress.
    fn ingress_for(&self, origin: &NodeId, client: &NodeId) -> Option<NodeId> {
        let on_route = self.graph.shortest_path(origin, client).and_then(|p| {
            self.graph
                .path_nodes(&p)
                .into_iter()
                .find(|n| self.graph.kind(n) == Some(NodeKind::IngressSwitch) && self.is_ready(n))
        });
        on_route.or_else(|| self.ready_of_kind(NodeKind::IngressSwitch).into_iter().next())
    }

    fn plan_hit(
        &self,
        req: &ContentRequest,
        record: &ContentMetadata,
        holders: &[NodeId],
    ) -> Result<HitDecision, ControllerError> {
        let bits = self.planning_bits(record);
        let bound = record.mime_type.as_deref().and_then(|m| self.config.delay_bound_for(m));
        let (cache, path) = self.choose_retrieval(bits, &req.client, holders, bound)?;

        let cache_ip = self.graph.node_ip(&cache).expect("cache in graph");
        let client_ip = self.graph.node_ip(&req.client).expect("client in graph");
        let tuple = FiveTuple::tcp(cache_ip, CACHE_SERVE_PORT, client_ip, req.client_port);

        let (until, flow_mods) = if record.size_known() {
            let allowance = self.config.overhead_allowance(record.size_bytes);
            let mods = install_firewall_flows(&self.graph, &req.name, record.size_bytes, &path, tuple, allowance)?;
            (Some(record.size_bytes + allowance), mods)
        } else {
            let mods = forwarding_hops(&self.graph, &path)
                .into_iter()
                .map(|(sw, port)| {
                    (
                        sw,
                        FlowMod {
                            matcher: FlowMatch::content_flow(&req.name, tuple),
                            priority: PRIORITY_CONTENT,
                            actions: vec![Action::Output(port)],
                            until_byte_count: 0,
                        },
                    )
                })
                .collect();
            (None, mods)
        };
        Ok(HitDecision {
            cache,
            path,
            content_bits: bits,
            tuple,
            until_byte_count: until,
            flow_mods: flow_mods.into_iter().map(|(n, fm)| (n, Message::FlowMod(fm))).collect(),
        })
    }

    /// Picks the serving cache and path. With a delay bound, candidates that
    /// meet it are kept first; the objective then ranks what is left.
    fn choose_retrieval(
        &self,
        bits: f64,
        client: &NodeId,
        holders: &[NodeId],
        bound: Option<f64>,
    ) -> Result<(NodeId, Path), ControllerError> {
        let mut candidates: Vec<Candidate> = Vec::new();
        for cache in holders {
            for path in self.graph.enumerate_paths(cache, client, self.config.max_paths) {
                candidates.push(Candidate {
                    cost: self.graph.path_cost(&path, bits),
                    delay: self.graph.retrieval_delay(&path, bits)?,
                    cache: cache.clone(),
                    path,
                });
            }
        }
        if candidates.is_empty() {
            return Err(ControllerError::NoPath(client.clone()));
        }
        if let Some(bound) = bound {
            if candidates.iter().any(|c| c.delay <= bound) {
                candidates.retain(|c| c.delay <= bound);
            } else {
                // Nothing meets the bound: least excess delay wins outright.
                let best = candidates.into_iter().min_by(Candidate::by_delay).expect("non-empty");
                return Ok((best.cache, best.path));
            }
        }
        let cmp = match self.config.te_objective {
            TeObjective::MinCostPath => Candidate::by_cost,
            TeObjective::MinRetrievalDelay => Candidate::by_delay,
        };
        let best = candidates.into_iter().min_by(cmp).expect("non-empty");
        Ok((best.cache, best.path))
    }

    /// Media type the proxy read from an origin response head.
    pub fn record_content_type(&mut self, name: &str, mime: &str) -> Result<(), ControllerError> {
        if !self.store.contains(name) {
            self.store.put(ContentMetadata::new(name))?;
        }
        self.store.set_mime(name, mime.to_ascii_lowercase())?;
        Ok(())
    }

    /// Eviction order for `cache_contents` using the store's popularity.
    pub fn eviction_plan(&self, cache_contents: &[(String, u64)], bytes_needed: u64) -> EvictionPlan {
        let items: Vec<CacheItem> = cache_contents
            .iter()
            .map(|(name, size)| CacheItem {
                name: name.clone(),
                size_bytes: *size,
                popularity: self.store.get(name).map(|r| r.popularity).unwrap_or(0),
            })
            .collect();
        eviction_candidates(&items, bytes_needed)
    }
}

struct Candidate {
    cache: NodeId,
    path: Path,
    cost: f64,
    delay: f64,
}

impl Candidate {
    fn by_cost(a: &Self, b: &Self) -> Ordering {
        a.cost
            .total_cmp(&b.cost)
            .then_with(|| a.cache.cmp(&b.cache))
            .then_with(|| a.path.canonical_cmp(&b.path))
    }

    fn by_delay(a: &Self, b: &Self) -> Ordering {
        a.delay
            .total_cmp(&b.delay)
            .then_with(|| a.cache.cmp(&b.cache))
            .then_with(|| a.path.canonical_cmp(&b.path))
    }
}

/// Wildcard rule asking an ingress switch to read HTTP response heads.
pub fn standing_extraction_flow() -> FlowMod {
    FlowMod {
        matcher: FlowMatch::tuple(FiveTuple {
            src_ip: std::net::Ipv4Addr::UNSPECIFIED,
            src_port: HTTP_PORT,
            dst_ip: std::net::Ipv4Addr::UNSPECIFIED,
            dst_port: 0,
            protocol: FiveTuple::TCP,
        }),
        priority: PRIORITY_STANDING,
        actions: vec![Action::ExtractMetadata, Action::Normal],
        until_byte_count: 0,
    }
}

/// Rule asking a cache to report the footprint of what it stores.
pub fn cache_report_flow() -> FlowMod {
    FlowMod {
        matcher: FlowMatch::tuple(FiveTuple {
            src_ip: std::net::Ipv4Addr::UNSPECIFIED,
            src_port: 0,
            dst_ip: std::net::Ipv4Addr::UNSPECIFIED,
            dst_port: 0,
            protocol: 0,
        }),
        priority: PRIORITY_STANDING,
        actions: vec![Action::Cache],
        until_byte_count: 0,
    }
}

/// `(switch, outgoing link index)` for every switch a path passes through.
pub fn forwarding_hops(graph: &Graph, path: &Path) -> Vec<(NodeId, u16)> {
    path.links()
        .iter()
        .filter_map(|&l| {
            let src = &graph.link(l).src;
            graph
                .kind(src)
                .is_some_and(NodeKind::is_switch)
                .then(|| (src.clone(), l.0 as u16))
        })
        .collect()
}

/// Best `(cache, ingress→cache path)` by path cost. Equal costs go to the
/// cache with fewer writes in progress, then fewer links, then cache id.
pub fn select_cache_for_storage(
    graph: &Graph,
    ingress: &NodeId,
    candidates: &[NodeId],
    content_bits: f64,
    max_paths: usize,
    writes_in_progress: &BTreeMap<NodeId, u32>,
) -> Result<(NodeId, Path), ControllerError> {
    let writes = |c: &NodeId| writes_in_progress.get(c).copied().unwrap_or(0);
    candidates
        .iter()
        .filter_map(|cache| {
            let paths = graph.enumerate_paths(ingress, cache, max_paths);
            let best = graph.select_min_cost_path(&paths, content_bits).ok()?.clone();
            Some((graph.path_cost(&best, content_bits), cache, best))
        })
        .min_by(|(ca, a, pa), (cb, b, pb)| {
            ca.total_cmp(cb)
                .then_with(|| writes(a).cmp(&writes(b)))
                .then_with(|| pa.hop_count().cmp(&pb.hop_count()))
                .then_with(|| a.cmp(b))
        })
        .map(|(_, c, p)| (c.clone(), p))
        .ok_or(ControllerError::NoReachableCache)
}

/// `(cache, cache→client path, delay)` with the least retrieval delay.
/// Ties go to the lower cache id.
pub fn select_cache_for_retrieval(
    graph: &Graph,
    client: &NodeId,
    caches_holding: &[NodeId],
    content_bits: f64,
    max_paths: usize,
) -> Result<(NodeId, Path, f64), ControllerError> {
    let mut best: Option<(f64, &NodeId, Path)> = None;
    for cache in caches_holding {
        let paths = graph.enumerate_paths(cache, client, max_paths);
        let Ok(path) = select_path_with_delay_bound(graph, &paths, content_bits, f64::INFINITY) else {
            continue;
        };
        let delay = graph.retrieval_delay(path, content_bits)?;
        let better = match &best {
            None => true,
            Some((d, c, _)) => delay.total_cmp(d).then_with(|| cache.cmp(c)) == Ordering::Less,
        };
        if better {
            best = Some((delay, cache, path.clone()));
        }
    }
    best.map(|(d, c, p)| (c.clone(), p, d)).ok_or(ControllerError::NoReachableCache)
}

/// Least-delay path among those meeting `bound`; if none does, the path
/// whose delay exceeds the bound the least.
pub fn select_path_with_delay_bound<'p>(
    graph: &Graph,
    paths: &'p [Path],
    content_bits: f64,
    bound: f64,
) -> Result<&'p Path, ControllerError> {
    if bound.is_nan() || bound <= 0.0 {
        return Err(ControllerError::BadBound);
    }
    let delays = paths
        .iter()
        .map(|p| graph.retrieval_delay(p, content_bits).map(|d| (d, p)))
        .collect::<Result<Vec<_>, _>>()?;
    let by_delay = |a: &&(f64, &Path), b: &&(f64, &Path)| a.0.total_cmp(&b.0).then_with(|| a.1.canonical_cmp(b.1));
    let within = delays.iter().filter(|(d, _)| *d <= bound).min_by(by_delay);
    let chosen = match within {
        Some(c) => c,
        None => delays
            .iter()
            .min_by(|a, b| (a.0 - bound).total_cmp(&(b.0 - bound)).then_with(|| a.1.canonical_cmp(b.1)))
            .ok_or(PathError::NoCandidates)?,
    };
    Ok(chosen.1)
}

/// One byte-budgeted rule per switch on the path, keyed on the content
/// name and transfer tuple. Each rule forwards along the path and expires
/// after `size_bytes + overhead_allowance` bytes.
pub fn install_firewall_flows(
    graph: &Graph,
    name: &str,
    size_bytes: u64,
    path: &Path,
    tuple: FiveTuple,
    overhead_allowance: u64,
) -> Result<Vec<(NodeId, FlowMod)>, ControllerError> {
    if size_bytes == 0 {
        return Err(ControllerError::UnknownSize(name.to_owned()));
    }
    let until = size_bytes + overhead_allowance;
    Ok(forwarding_hops(graph, path)
        .into_iter()
        .map(|(sw, port)| {
            (
                sw,
                FlowMod {
                    matcher: FlowMatch::content_flow(name, tuple),
                    priority: PRIORITY_FIREWALL,
                    actions: vec![Action::Output(port)],
                    until_byte_count: until,
                },
            )
        })
        .collect())
}

impl Controller {
    /// Records firewall rules about to be sent so their expiry can be
    /// matched up later.
    pub fn track_firewalls(&mut self, flow_mods: &[(NodeId, Message)]) {
        for (sw, msg) in flow_mods {
            if let Message::FlowMod(fm) = msg {
                if fm.until_byte_count > 0 {
                    self.firewalls.push(FirewallRecord {
                        switch: sw.clone(),
                        matcher: fm.matcher.clone(),
                        until_byte_count: fm.until_byte_count,
                        bytes_counted: None,
                    });
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheItem {
    pub name: String,
    pub size_bytes: u64,
    pub popularity: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EvictionPlan {
    pub evict: Vec<String>,
    pub freed_bytes: u64,
    /// Bytes still missing when every item is evicted; 0 when covered.
    pub shortfall: u64,
}

/// Orders by popularity per byte (ascending), larger items first on ties,
/// then by name. Zero-size items free nothing and sort last.
fn density_cmp(a: &CacheItem, b: &CacheItem) -> Ordering {
    let density = match (a.size_bytes, b.size_bytes) {
        (0, 0) => Ordering::Equal,
        (0, _) => Ordering::Greater,
        (_, 0) => Ordering::Less,
        // a.pop / a.size vs b.pop / b.size, cross-multiplied exactly.
        (sa, sb) => (a.popularity as u128 * sb as u128).cmp(&(b.popularity as u128 * sa as u128)),
    };
    density
        .then_with(|| b.size_bytes.cmp(&a.size_bytes))
        .then_with(|| a.name.cmp(&b.name))
}

/// Shortest prefix of the density-ranked contents freeing `bytes_needed`.
pub fn eviction_candidates(cache_contents: &[CacheItem], bytes_needed: u64) -> EvictionPlan {
    let mut ranked: Vec<&CacheItem> = cache_contents.iter().collect();
    ranked.sort_by(|a, b| density_cmp(a, b));
    let mut plan = EvictionPlan::default();
    for item in ranked {
        if plan.freed_bytes >= bytes_needed {
            break;
        }
        plan.freed_bytes += item.size_bytes;
        plan.evict.push(item.name.clone());
    }
    plan.shortfall = bytes_needed.saturating_sub(plan.freed_bytes);
    plan
}

/// Header budget for a transfer of `size_bytes` with default segmenting.
pub fn default_overhead_allowance(size_bytes: u64) -> u64 {
    size_bytes.div_ceil(MSS_BYTES as u64) * HEADER_BYTES as u64
}
