//! Network graph, simple-path enumeration and the content-size-aware path
//! metrics used for traffic engineering.
//!
//! Links are directed. A [`Path`] stores link indices into the owning
//! [`Graph`], so it is only meaningful together with that graph.

use std::cmp::Ordering;
use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on the number of enumerated paths.
pub const DEFAULT_MAX_PATHS: usize = 32;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("malformed topology document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate node id `{0}`")]
    DuplicateNode(NodeId),
    #[error("duplicate link id `{0}`")]
    DuplicateLink(LinkId),
    #[error("link `{link}` references unknown node `{node}`")]
    DanglingEndpoint { link: LinkId, node: NodeId },
    #[error("link `{0}` is a self-loop")]
    SelfLoop(LinkId),
    #[error("link `{0}`: capacity must be positive and finite")]
    BadCapacity(LinkId),
    #[error("link `{link}`: background {background} exceeds capacity {capacity}")]
    BackgroundExceedsCapacity { link: LinkId, background: f64, capacity: f64 },
    #[error("link `{link}`: rate {rate} must be positive and at most capacity {capacity}")]
    BadRate { link: LinkId, rate: f64, capacity: f64 },
    #[error("too many nodes for the simulated address plan ({0})")]
    TooManyNodes(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("path has no links")]
    EmptyPath,
    #[error("no candidate paths")]
    NoCandidates,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub String);

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Switch,
    IngressSwitch,
    Cache,
    Proxy,
    Client,
    Server,
}

impl NodeKind {
    /// Forwarding elements that hold a flow table.
    pub fn is_switch(self) -> bool {
        matches!(self, NodeKind::Switch | NodeKind::IngressSwitch)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
}

/// A directed link. Rates are in bits per second.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub src: NodeId,
    pub dst: NodeId,
    pub capacity_bps: f64,
    pub background_bps: f64,
    /// Currently available rate.
    pub rate_bps: f64,
}

/// Index of a link inside its [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkIdx(pub usize);

/// A simple walk through the graph, as an ordered list of link indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    links: Vec<LinkIdx>,
}

impl Path {
    pub fn new(links: Vec<LinkIdx>) -> Self {
        Self { links }
    }

    pub fn links(&self) -> &[LinkIdx] {
        &self.links
    }

    pub fn hop_count(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Canonical enumeration order: hop count, then link indices.
    pub fn canonical_cmp(&self, other: &Path) -> Ordering {
        self.links
            .len()
            .cmp(&other.links.len())
            .then_with(|| self.links.cmp(&other.links))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyDoc {
    nodes: Vec<NodeDoc>,
    links: Vec<LinkDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    kind: NodeKind,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    id: String,
    src: String,
    dst: String,
    capacity_bps: f64,
    background_bps: f64,
    #[serde(default)]
    rate_bps: Option<f64>,
}

/// Immutable-by-default topology snapshot.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    links: Vec<Link>,
    node_index: HashMap<NodeId, usize>,
    link_index: HashMap<LinkId, LinkIdx>,
    /// Outgoing links per node, in declaration order.
    out_links: Vec<Vec<LinkIdx>>,
}

/// Parses and validates a JSON topology document.
pub fn load_topology(document: &str) -> Result<Graph, TopologyError> {
    let doc: TopologyDoc = serde_json::from_str(document)?;
    let nodes = doc
        .nodes
        .into_iter()
        .map(|n| Node { id: NodeId(n.id), kind: n.kind })
        .collect();
    let links = doc
        .links
        .into_iter()
        .map(|l| Link {
            id: LinkId(l.id),
            src: NodeId(l.src),
            dst: NodeId(l.dst),
            capacity_bps: l.capacity_bps,
            background_bps: l.background_bps,
            rate_bps: l.rate_bps.unwrap_or(l.capacity_bps - l.background_bps),
        })
        .collect();
    Graph::new(nodes, links)
}

impl Graph {
    pub fn new(nodes: Vec<Node>, links: Vec<Link>) -> Result<Self, TopologyError> {
        // The address plan below hands out 10.0.x.y, skipping .0 hosts.
        if nodes.len() > 250 * 256 {
            return Err(TopologyError::TooManyNodes(nodes.len()));
        }
        let mut node_index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if node_index.insert(n.id.clone(), i).is_some() {
                return Err(TopologyError::DuplicateNode(n.id.clone()));
            }
        }
        let mut link_index = HashMap::with_capacity(links.len());
        let mut out_links = vec![Vec::new(); nodes.len()];
        for (i, l) in links.iter().enumerate() {
            if link_index.insert(l.id.clone(), LinkIdx(i)).is_some() {
                return Err(TopologyError::DuplicateLink(l.id.clone()));
            }
            for end in [&l.src, &l.dst] {
                if !node_index.contains_key(end) {
                    return Err(TopologyError::DanglingEndpoint {
                        link: l.id.clone(),
                        node: end.clone(),
                    });
                }
            }
            if l.src == l.dst {
                return Err(TopologyError::SelfLoop(l.id.clone()));
            }
            if !(l.capacity_bps.is_finite() && l.capacity_bps > 0.0) {
                return Err(TopologyError::BadCapacity(l.id.clone()));
            }
            if !(l.background_bps >= 0.0 && l.background_bps <= l.capacity_bps) {
                return Err(TopologyError::BackgroundExceedsCapacity {
                    link: l.id.clone(),
                    background: l.background_bps,
                    capacity: l.capacity_bps,
                });
            }
            if !(l.rate_bps > 0.0 && l.rate_bps <= l.capacity_bps) {
                return Err(TopologyError::BadRate {
                    link: l.id.clone(),
                    rate: l.rate_bps,
                    capacity: l.capacity_bps,
                });
            }
            out_links[node_index[&l.src]].push(LinkIdx(i));
        }
        Ok(Self { nodes, links, node_index, link_index, out_links })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.node_index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.node_index.contains_key(id)
    }

    pub fn kind(&self, id: &NodeId) -> Option<NodeKind> {
        self.node(id).map(|n| n.kind)
    }

    pub fn link(&self, idx: LinkIdx) -> &Link {
        &self.links[idx.0]
    }

    pub fn link_idx(&self, id: &LinkId) -> Option<LinkIdx> {
        self.link_index.get(id).copied()
    }

    pub fn outgoing(&self, id: &NodeId) -> &[LinkIdx] {
        self.node_index
            .get(id)
            .map(|&i| self.out_links[i].as_slice())
            .unwrap_or(&[])
    }

    pub fn nodes_of_kind(&self, kind: NodeKind) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(move |n| n.kind == kind)
    }

    /// Replaces the background traffic of a link, re-deriving nothing else.
    pub fn set_background(&mut self, idx: LinkIdx, background_bps: f64) -> Result<(), TopologyError> {
        let link = &mut self.links[idx.0];
        if !(background_bps >= 0.0 && background_bps <= link.capacity_bps) {
            return Err(TopologyError::BackgroundExceedsCapacity {
                link: link.id.clone(),
                background: background_bps,
                capacity: link.capacity_bps,
            });
        }
        link.background_bps = background_bps;
        Ok(())
    }

    /// Simulated address of a node: `10.0.x.y` derived from its declaration index.
    pub fn node_ip(&self, id: &NodeId) -> Option<Ipv4Addr> {
        self.node_index.get(id).map(|&i| {
            let host = i + 1;
            Ipv4Addr::new(10, 0, (host / 250) as u8, (host % 250 + 1) as u8)
        })
    }

    pub fn node_by_ip(&self, ip: Ipv4Addr) -> Option<&NodeId> {
        let [a, b, hi, lo] = ip.octets();
        if a != 10 || b != 0 || lo == 0 || lo > 250 {
            return None;
        }
        let host = hi as usize * 250 + (lo as usize - 1);
        host.checked_sub(1).and_then(|i| self.nodes.get(i)).map(|n| &n.id)
    }

    /// Node sequence visited by a path, starting with its source.
    pub fn path_nodes(&self, path: &Path) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(path.hop_count() + 1);
        if let Some(first) = path.links().first() {
            out.push(self.link(*first).src.clone());
        }
        out.extend(path.links().iter().map(|&l| self.link(l).dst.clone()));
        out
    }

    pub fn path_link_ids(&self, path: &Path) -> Vec<LinkId> {
        path.links().iter().map(|&l| self.link(l).id.clone()).collect()
    }

    /// All simple paths from `src` to `dst`, in canonical order (hop count,
    /// then link indices), truncated to `max_paths`.
    ///
    /// `src == dst` yields no paths.
    pub fn enumerate_paths(&self, src: &NodeId, dst: &NodeId, max_paths: usize) -> Vec<Path> {
        let (Some(&s), Some(&d)) = (self.node_index.get(src), self.node_index.get(dst)) else {
            return Vec::new();
        };
        if s == d || max_paths == 0 {
            return Vec::new();
        }
        let mut found = Vec::new();
        let mut visited = vec![false; self.nodes.len()];
        let mut stack = Vec::new();
        visited[s] = true;
        self.dfs(s, d, &mut visited, &mut stack, &mut found);
        found.sort_by(Path::canonical_cmp);
        found.truncate(max_paths);
        found
    }

    fn dfs(
        &self,
        at: usize,
        dst: usize,
        visited: &mut [bool],
        stack: &mut Vec<LinkIdx>,
        found: &mut Vec<Path>,
    ) {
        for &l in &self.out_links[at] {
            let next = self.node_index[&self.links[l.0].dst];
            if visited[next] {
                continue;
            }
            stack.push(l);
            if next == dst {
                found.push(Path::new(stack.clone()));
            } else {
                visited[next] = true;
                self.dfs(next, dst, visited, stack, found);
                visited[next] = false;
            }
            stack.pop();
        }
    }

    /// Sum over the path's links of `(b_e + F) / c_e`.
    pub fn path_cost(&self, path: &Path, content_bits: f64) -> f64 {
        path.links()
            .iter()
            .map(|&l| {
                let link = self.link(l);
                (link.background_bps + content_bits) / link.capacity_bps
            })
            .sum()
    }

    /// Minimum available rate along the path.
    pub fn bottleneck_rate(&self, path: &Path) -> Result<f64, PathError> {
        path.links()
            .iter()
            .map(|&l| self.link(l).rate_bps)
            .min_by(f64::total_cmp)
            .ok_or(PathError::EmptyPath)
    }

    /// Transfer time of `content_bits` over the path's bottleneck.
    pub fn retrieval_delay(&self, path: &Path, content_bits: f64) -> Result<f64, PathError> {
        Ok(content_bits / self.bottleneck_rate(path)?)
    }

    /// Picks the path of least [`Graph::path_cost`]. Ties go to the path with
    /// fewer links, then to the earlier path in canonical order, so the
    /// result does not depend on the order of `paths`.
    pub fn select_min_cost_path<'p>(
        &self,
        paths: &'p [Path],
        content_bits: f64,
    ) -> Result<&'p Path, PathError> {
        paths
            .iter()
            .map(|p| (self.path_cost(p, content_bits), p))
            .min_by(|(ca, pa), (cb, pb)| ca.total_cmp(cb).then_with(|| pa.canonical_cmp(pb)))
            .map(|(_, p)| p)
            .ok_or(PathError::NoCandidates)
    }

    /// First link of a minimum-hop route, used for default (`NORMAL`)
    /// forwarding. Breadth-first with links visited in declaration order.
    pub fn next_hop(&self, from: &NodeId, to: &NodeId) -> Option<LinkIdx> {
        let (&s, &d) = (self.node_index.get(from)?, self.node_index.get(to)?);
        if s == d {
            return None;
        }
        let mut first: Vec<Option<LinkIdx>> = vec![None; self.nodes.len()];
        let mut seen = vec![false; self.nodes.len()];
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(at) = queue.pop_front() {
            for &l in &self.out_links[at] {
                let next = self.node_index[&self.links[l.0].dst];
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                first[next] = if at == s { Some(l) } else { first[at] };
                if next == d {
                    return first[next];
                }
                queue.push_back(next);
            }
        }
        None
    }

    /// Minimum-hop path following [`Graph::next_hop`].
    pub fn shortest_path(&self, from: &NodeId, to: &NodeId) -> Option<Path> {
        let mut links = Vec::new();
        let mut at = from.clone();
        while &at != to {
            let l = self.next_hop(&at, to)?;
            links.push(l);
            at = self.link(l).dst.clone();
        }
        (!links.is_empty()).then(|| Path::new(links))
    }
}
