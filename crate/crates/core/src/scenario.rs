//! Scripted end-to-end run: elements boot and register, a client fetches a
//! content twice through the transparent proxy, the first fetch is cached
//! on the way back from the origin and the second is served from the cache
//! along a traffic-engineered, byte-budgeted path.
//!
//! Every control message travels through the codec and is logged to the
//! transcript; each check the run makes becomes a transcript entry.

use std::collections::VecDeque;

use log::info;
use serde::Serialize;
use thiserror::Error;

use crate::controller::{Controller, ContentRequest, Decision, HTTP_PORT};
use crate::dataplane::{segment, Arrival, Disposition, Fabric, FabricError, Packet, ProxyAction, HEADER_BYTES};
use crate::netmodel::{Graph, NodeId, NodeKind};
use crate::protocol::{decode, encode, Capabilities, FiveTuple, Message};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("topology has no {0} node")]
    Precondition(&'static str),
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioOptions {
    pub content_name: String,
    pub content_bytes: u64,
    pub mime_type: String,
    pub cache_capacity_bytes: u64,
    pub first_client_port: u16,
    pub second_client_port: u16,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            content_name: "/videos/clip.mp4".into(),
            content_bytes: 1_000_000,
            mime_type: "video/mp4".into(),
            cache_capacity_bytes: 64_000_000,
            first_client_port: 40_001,
            second_client_port: 40_002,
        }
    }
}

/// One transcript line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TranscriptEntry {
    pub step: u8,
    pub actor: String,
    pub message_type: String,
    pub assertion: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub transcript: Vec<TranscriptEntry>,
    pub content_name: String,
    /// Size the controller holds after the first transfer.
    pub stored_size_bytes: u64,
    pub serving_cache: Option<NodeId>,
    pub hit_path_links: Vec<String>,
    pub origin_bytes_first_request: u64,
    pub origin_bytes_second_request: u64,
    pub passed: bool,
    pub first_failure: Option<TranscriptEntry>,
}

const CONTROLLER: &str = "controller";

struct Run {
    ctl: Controller,
    fabric: Fabric,
    transcript: Vec<TranscriptEntry>,
}

impl Run {
    fn check(&mut self, step: u8, actor: &str, message_type: &str, assertion: impl Into<String>, pass: bool) -> bool {
        let assertion = assertion.into();
        if !pass {
            info!("step {step}: check failed: {assertion}");
        }
        self.transcript.push(TranscriptEntry {
            step,
            actor: actor.to_owned(),
            message_type: message_type.to_owned(),
            assertion,
            pass,
        });
        pass
    }

    /// Puts a message through the codec and logs it.
    fn wire(&mut self, step: u8, from: &str, to: &str, msg: &Message) -> Message {
        let name = msg.message_type().name();
        let decoded = encode(msg).and_then(|bytes| decode(&bytes));
        let ok = matches!(&decoded, Ok((m, _)) if m == msg);
        self.check(step, from, name, format!("{from} -> {to}: frame decodes to the message sent"), ok);
        decoded.map(|(m, _)| m).unwrap_or_else(|_| msg.clone())
    }

    /// Delivers element→controller messages and everything they trigger
    /// until no message is in flight.
    fn pump(&mut self, step: u8, initial: Vec<(NodeId, Message)>) -> Result<(), ScenarioError> {
        let mut to_controller: VecDeque<(NodeId, Message)> = initial.into();
        while let Some((from, msg)) = to_controller.pop_front() {
            let msg = self.wire(step, from.as_str(), CONTROLLER, &msg);
            let out = match self.ctl.handle_message(&from, &msg) {
                Ok(out) => out,
                Err(e) => {
                    self.check(step, CONTROLLER, msg.message_type().name(), format!("accepted: {e}"), false);
                    continue;
                }
            };
            for (to, reply) in out {
                let reply = self.wire(step, CONTROLLER, to.as_str(), &reply);
                for back in self.fabric.control(&to, &reply)? {
                    to_controller.push_back((to.clone(), back));
                }
            }
        }
        Ok(())
    }

    fn install(&mut self, step: u8, mods: &[(NodeId, Message)]) -> Result<(), ScenarioError> {
        for (to, msg) in mods {
            let msg = self.wire(step, CONTROLLER, to.as_str(), msg);
            let replies = self.fabric.control(to, &msg)?;
            self.pump(step, replies.into_iter().map(|m| (to.clone(), m)).collect())?;
        }
        Ok(())
    }

    fn send(&mut self, step: u8, from: &NodeId, first_link: Option<crate::netmodel::LinkIdx>, packets: Vec<Packet>) -> Result<Vec<Arrival>, ScenarioError> {
        let mut arrivals = Vec::new();
        for p in packets {
            let transit = self.fabric.send(from, first_link, p)?;
            self.pump(step, transit.to_controller)?;
            arrivals.extend(transit.arrivals);
        }
        Ok(arrivals)
    }
}

fn first_of(graph: &Graph, kind: NodeKind, what: &'static str) -> Result<NodeId, ScenarioError> {
    graph
        .nodes_of_kind(kind)
        .next()
        .map(|n| n.id.clone())
        .ok_or(ScenarioError::Precondition(what))
}

fn bytes_from(arrivals: &[Arrival], to: &NodeId, src_ip: std::net::Ipv4Addr) -> u64 {
    arrivals
        .iter()
        .filter_map(|a| match a {
            Arrival::Host { node, packet } if node == to && packet.tuple.src_ip == src_ip => {
                Some(packet.payload_len() as u64)
            }
            _ => None,
        })
        .sum()
}

/// Runs the scenario. `Err` only for topologies that cannot host it;
/// failed checks are reported in the transcript.
pub fn run_scenario(controller: Controller, opts: &ScenarioOptions) -> Result<ScenarioReport, ScenarioError> {
    let graph = controller.graph().clone();
    let ingress = first_of(&graph, NodeKind::IngressSwitch, "ingress switch")?;
    first_of(&graph, NodeKind::Cache, "cache")?;
    let proxy = first_of(&graph, NodeKind::Proxy, "proxy")?;
    let client = first_of(&graph, NodeKind::Client, "client")?;
    let server = first_of(&graph, NodeKind::Server, "server")?;
    let ip = |n: &NodeId| graph.node_ip(n).expect("node in graph");
    let (client_ip, server_ip) = (ip(&client), ip(&server));

    let mut run = Run {
        fabric: Fabric::new(graph.clone(), opts.cache_capacity_bytes),
        ctl: controller,
        transcript: Vec::new(),
    };

    // 1. Every element boots and says hello.
    let hellos = run.fabric.elements().into_iter().map(|e| (e, Message::Hello)).collect();
    // 2. The handshake runs to completion inside the pump.
    run.pump(1, hellos)?;
    let elements = run.fabric.elements();
    let all_ready = elements.iter().all(|e| run.ctl.is_ready(e));
    run.check(2, CONTROLLER, "FEATURES_REPLY", format!("{} sessions ready", elements.len()), all_ready);
    let ingress_caps = run.ctl.sessions().get(&ingress).map(|s| s.capabilities);
    run.check(
        2,
        CONTROLLER,
        "FEATURES_REPLY",
        format!("{ingress} advertises EXTRACT_METADATA"),
        ingress_caps.is_some_and(|c| c.contains(Capabilities::EXTRACT_METADATA)),
    );

    // 3. Standing flows: extraction at ingress, reporting at caches.
    let extraction = run.fabric.switches[&ingress]
        .table()
        .iter()
        .any(|e| e.rule == crate::controller::standing_extraction_flow());
    run.check(3, ingress.as_str(), "FLOW_MOD", "standing extraction flow installed", extraction);
    let reporting = run.fabric.caches.values().all(|c| c.reporting());
    run.check(3, "caches", "FLOW_MOD", "every cache reports footprints", reporting);

    // 4-5. Connect, redirect to the proxy, and query the controller.
    let request = |port: u16| ContentRequest {
        name: opts.content_name.clone(),
        client: client.clone(),
        client_port: port,
        origin: server.clone(),
    };
    let first = request(opts.first_client_port);
    let decision1 = connect_and_query(&mut run, &first, client_ip, server_ip, &proxy)?;

    // 6-7. A miss: the proxy forwards the GET to the origin.
    let miss = matches!(decision1, Some(Decision::Miss(_)));
    run.check(7, CONTROLLER, "DECISION", "first request is a cache miss", miss);
    let action = run.fabric.proxies[&proxy].apply(&first, decision1.as_ref());
    run.check(7, proxy.as_str(), "DECISION", "proxy forwards to origin", action == ProxyAction::ForwardToOrigin(server.clone()));
    let storage_cache = match &decision1 {
        Some(Decision::Miss(m)) => {
            let flows = m.flow_mods.clone();
            run.install(7, &flows)?;
            m.storage.as_ref().map(|(c, _)| c.clone())
        }
        _ => None,
    };
    run.check(9, CONTROLLER, "FLOW_MOD", "a cache was chosen for the content", storage_cache.is_some());

    // 8-9. The origin answers; the ingress reads the head and the fork
    // carries a copy to the cache.
    let head = format!(
        "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nContent-Type: {}\r\n\r\n",
        opts.content_bytes, opts.mime_type
    );
    let response = FiveTuple::tcp(server_ip, HTTP_PORT, client_ip, first.client_port);
    let head = head.into_bytes();
    if let Some(mime) = run.fabric.proxies[&proxy].observe_response(&head) {
        if let Err(e) = run.ctl.record_content_type(&opts.content_name, &mime) {
            run.check(8, proxy.as_str(), "DATA", format!("media type not recorded: {e}"), false);
        }
    }
    let packets = segment(response, Some(&opts.content_name), opts.content_bytes, Some(head));
    let arrivals = run.send(8, &server, None, packets)?;
    let origin_bytes_first = bytes_from(&arrivals, &client, server_ip);
    run.check(
        8,
        server.as_str(),
        "DATA",
        format!("client received {origin_bytes_first} of {} bytes from origin", opts.content_bytes),
        origin_bytes_first == opts.content_bytes,
    );
    let header_size = run.ctl.store().get(&opts.content_name).map(|r| r.size_bytes).unwrap_or(0);
    run.check(8, ingress.as_str(), "PACKET_IN", "ingress reported Content-Length", header_size == opts.content_bytes);

    let mut reported = false;
    for a in &arrivals {
        if let Arrival::CacheComplete { node, name, bytes } = a {
            let plan = {
                let cache = &run.fabric.caches[node];
                let contents: Vec<(String, u64)> = cache.contents().map(|(n, s)| (n.to_owned(), s)).collect();
                run.ctl.eviction_plan(&contents, cache.deficit_for(name, *bytes))
            };
            let cache = run.fabric.caches.get_mut(node).expect("cache exists");
            match cache.store(name, *bytes, &plan.evict) {
                Ok(outcome) => {
                    run.check(9, node.as_str(), "DATA", format!("stored {name} ({bytes} bytes)"), true);
                    let reports = outcome.reports.into_iter().map(|m| (node.clone(), m)).collect();
                    run.pump(10, reports)?;
                    reported = true;
                }
                Err(e) => {
                    run.check(9, node.as_str(), "DATA", format!("store {name}: {e}"), false);
                }
            }
        }
    }

    // 10. Metadata from ingress and cache is mapped to the content name.
    run.check(10, CONTROLLER, "CACHE_REPORT", "CACHE_REPORT received", reported);
    let record = run.ctl.store().get(&opts.content_name).ok().cloned();
    let stored_size = record.as_ref().map(|r| r.size_bytes).unwrap_or(0);
    let located = record
        .as_ref()
        .is_some_and(|r| storage_cache.as_ref().is_some_and(|c| r.cached_at.contains(c)));
    run.check(10, CONTROLLER, "CACHE_REPORT", "controller knows where the content is cached", located);
    run.check(
        10,
        CONTROLLER,
        "CACHE_REPORT",
        format!("stored size {stored_size} matches the transfer"),
        stored_size == opts.content_bytes,
    );
    let mime = record.as_ref().and_then(|r| r.mime_type.clone());
    run.check(
        10,
        CONTROLLER,
        "DATA",
        format!("media type {} mapped to the content", mime.as_deref().unwrap_or("none")),
        mime.as_deref() == Some(opts.mime_type.as_str()),
    );

    // 11. Second request: hit, TE path, byte-budgeted flows.
    let second = request(opts.second_client_port);
    let decision2 = connect_and_query(&mut run, &second, client_ip, server_ip, &proxy)?;
    let hit = match decision2 {
        Some(Decision::Hit(h)) => Some(h),
        _ => None,
    };
    run.check(11, CONTROLLER, "DECISION", "second request is a cache hit", hit.is_some());
    let mut report_hit_path = Vec::new();
    let mut serving_cache = None;
    let mut origin_bytes_second = 0;
    if let Some(hit) = hit {
        let action = run.fabric.proxies[&proxy].apply(&second, Some(&Decision::Hit(hit.clone())));
        run.check(11, proxy.as_str(), "DECISION", format!("proxy redirects to {}", hit.cache), action == ProxyAction::RedirectToCache(hit.cache.clone()));
        report_hit_path = graph.path_link_ids(&hit.path).into_iter().map(|l| l.0.clone()).collect();
        serving_cache = Some(hit.cache.clone());

        let expected_until = stored_size + run.ctl.config().overhead_allowance(stored_size);
        let firewalls: Vec<u64> = hit
            .flow_mods
            .iter()
            .filter_map(|(_, m)| match m {
                Message::FlowMod(fm) => Some(fm.until_byte_count),
                _ => None,
            })
            .collect();
        let until_ok = !firewalls.is_empty() && firewalls.iter().all(|&u| u == expected_until);
        run.check(11, CONTROLLER, "FLOW_MOD", format!("firewall flows carry until={expected_until}"), until_ok);
        run.ctl.track_firewalls(&hit.flow_mods);
        run.install(11, &hit.flow_mods)?;

        let served = segment(hit.tuple, Some(&opts.content_name), stored_size, None);
        let first_link = hit.path.links().first().copied();
        let arrivals = run.send(11, &hit.cache, first_link, served)?;
        origin_bytes_second = bytes_from(&arrivals, &client, server_ip);
        let from_cache = bytes_from(&arrivals, &client, hit.tuple.src_ip);
        run.check(
            11,
            hit.cache.as_str(),
            "DATA",
            format!("client received {from_cache} of {stored_size} bytes from the cache"),
            from_cache == stored_size,
        );
        run.check(
            11,
            server.as_str(),
            "DATA",
            format!("origin_bytes_second_request = {origin_bytes_second}"),
            origin_bytes_second == 0,
        );
        let closed = run.ctl.firewalls().iter().filter(|f| f.bytes_counted == Some(f.until_byte_count)).count();
        run.check(
            11,
            CONTROLLER,
            "FLOW_EXPIRED",
            format!("{closed} of {} firewall flows closed at their budget", firewalls.len()),
            closed == firewalls.len(),
        );

        // A late packet claiming the finished transfer's tuple is stopped at
        // the first switch that carried it.
        if let Some(&l) = hit.path.links().iter().find(|l| graph.kind(&graph.link(**l).dst).is_some_and(NodeKind::is_switch)) {
            let entry = graph.link(l).dst.clone();
            let spoof = Packet {
                tuple: hit.tuple,
                content_name: Some(opts.content_name.clone()),
                len: HEADER_BYTES + 100,
                header_len: HEADER_BYTES,
                http_head: None,
                fin: true,
            };
            let before = run.fabric.delivered_to(&client);
            let transit = run.fabric.send(&hit.cache, Some(l), spoof)?;
            let dropped = transit.stopped_at.iter().any(|(n, d)| *n == entry && *d == Disposition::Dropped);
            run.check(
                11,
                "spoofer",
                "DATA",
                format!("post-expiry packet on {} dropped at {entry}", hit.tuple),
                dropped && run.fabric.delivered_to(&client) == before,
            );
        }
    }

    let first_failure = run.transcript.iter().find(|e| !e.pass).cloned();
    Ok(ScenarioReport {
        passed: first_failure.is_none(),
        first_failure,
        transcript: run.transcript,
        content_name: opts.content_name.clone(),
        stored_size_bytes: stored_size,
        serving_cache,
        hit_path_links: report_hit_path,
        origin_bytes_first_request: origin_bytes_first,
        origin_bytes_second_request: origin_bytes_second,
    })
}

/// Opens a connection from the client (steps 4-5), sends the GET through
/// the proxy and returns the controller's decision (step 6).
fn connect_and_query(
    run: &mut Run,
    req: &ContentRequest,
    client_ip: std::net::Ipv4Addr,
    server_ip: std::net::Ipv4Addr,
    proxy: &NodeId,
) -> Result<Option<Decision>, ScenarioError> {
    let tuple = FiveTuple::tcp(client_ip, req.client_port, server_ip, HTTP_PORT);
    let syn = segment(tuple, None, 0, None);
    let arrivals = run.send(4, &req.client, None, syn)?;
    let at_proxy = |arrivals: &[Arrival]| arrivals.iter().any(|a| matches!(a, Arrival::Proxy { node, .. } if node == proxy));
    if !at_proxy(&arrivals) {
        // The first packet missed the table; the redirect is in place now.
        let syn = segment(tuple, None, 0, None);
        let arrivals = run.send(5, &req.client, None, syn)?;
        let ok = at_proxy(&arrivals);
        run.check(5, proxy.as_str(), "FLOW_MOD", format!("connection {tuple} redirected to proxy"), ok);
    }
    let get = segment(tuple, Some(&req.name), 0, None);
    let arrivals = run.send(6, &req.client, None, get)?;
    if !run.check(6, proxy.as_str(), "DATA", format!("GET {} reached the proxy", req.name), at_proxy(&arrivals)) {
        return Ok(None);
    }
    let query = run.fabric.proxies[proxy].handle_get(req.clone());
    match run.ctl.handle_content_request(&query) {
        Ok(d) => {
            let kind = if matches!(d, Decision::Hit(_)) { "hit" } else { "miss" };
            run.check(6, CONTROLLER, "DECISION", format!("{} for {}", kind, req.name), true);
            Ok(Some(d))
        }
        Err(e) => {
            run.check(6, CONTROLLER, "DECISION", format!("query {}: {e}", req.name), false);
            Ok(None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{ControllerConfig, CACHE_SERVE_PORT};
    use crate::netmodel::load_topology;

    const TOPOLOGY: &str = r#"{
      "nodes": [
        {"id": "server", "kind": "server"}, {"id": "s1", "kind": "ingress_switch"},
        {"id": "s2", "kind": "switch"}, {"id": "s3", "kind": "switch"}, {"id": "s4", "kind": "switch"},
        {"id": "cache", "kind": "cache"}, {"id": "client", "kind": "client"}, {"id": "proxy", "kind": "proxy"}
      ],
      "links": [
        {"id": "server-s1", "src": "server", "dst": "s1", "capacity_bps": 1e9, "background_bps": 0},
        {"id": "s1-server", "src": "s1", "dst": "server", "capacity_bps": 1e9, "background_bps": 0},
        {"id": "s1-s2", "src": "s1", "dst": "s2", "capacity_bps": 1e9, "background_bps": 1e8},
        {"id": "s2-s1", "src": "s2", "dst": "s1", "capacity_bps": 1e9, "background_bps": 6e8},
        {"id": "s1-s3", "src": "s1", "dst": "s3", "capacity_bps": 1e9, "background_bps": 5e8},
        {"id": "s3-s1", "src": "s3", "dst": "s1", "capacity_bps": 1e9, "background_bps": 1e8},
        {"id": "s2-s4", "src": "s2", "dst": "s4", "capacity_bps": 1e9, "background_bps": 0},
        {"id": "s4-s2", "src": "s4", "dst": "s2", "capacity_bps": 1e9, "background_bps": 0},
        {"id": "s3-s4", "src": "s3", "dst": "s4", "capacity_bps": 1e9, "background_bps": 0},
        {"id": "s4-s3", "src": "s4", "dst": "s3", "capacity_bps": 1e9, "background_bps": 0},
        {"id": "s4-cache", "src": "s4", "dst": "cache", "capacity_bps": 1e9, "background_bps": 0},
        {"id": "cache-s4", "src": "cache", "dst": "s4", "capacity_bps": 1e9, "background_bps": 0},
        {"id": "client-s1", "src": "client", "dst": "s1", "capacity_bps": 1e9, "background_bps": 0},
        {"id": "s1-client", "src": "s1", "dst": "client", "capacity_bps": 1e9, "background_bps": 0},
        {"id": "proxy-s1", "src": "proxy", "dst": "s1", "capacity_bps": 1e9, "background_bps": 0},
        {"id": "s1-proxy", "src": "s1", "dst": "proxy", "capacity_bps": 1e9, "background_bps": 0}
      ]
    }"#;

    fn run(doc: &str) -> Result<ScenarioReport, ScenarioError> {
        let ctl = Controller::new(load_topology(doc).unwrap(), ControllerConfig::default());
        run_scenario(ctl, &ScenarioOptions::default())
    }

    #[test]
    fn full_run_passes() {
        let report = run(TOPOLOGY).unwrap();
        assert!(report.passed, "{:#?}", report.first_failure);
        assert_eq!(report.origin_bytes_second_request, 0);
        assert_eq!(report.origin_bytes_first_request, 1_000_000);
        assert_eq!(report.hit_path_links, ["cache-s4", "s4-s3", "s3-s1", "s1-client"]);
        assert!(report.transcript.iter().any(|e| e.message_type == "CACHE_REPORT"));
    }

    #[test]
    fn deterministic_transcript() {
        assert_eq!(run(TOPOLOGY).unwrap(), run(TOPOLOGY).unwrap());
    }

    #[test]
    fn missing_roles_are_preconditions() {
        let no_cache = r#"{"nodes":[{"id":"i","kind":"ingress_switch"},{"id":"p","kind":"proxy"},
            {"id":"c","kind":"client"},{"id":"s","kind":"server"}],"links":[]}"#;
        assert!(matches!(run(no_cache), Err(ScenarioError::Precondition("cache"))));
        let no_proxy = r#"{"nodes":[{"id":"i","kind":"ingress_switch"},{"id":"k","kind":"cache"},
            {"id":"c","kind":"client"},{"id":"s","kind":"server"}],"links":[]}"#;
        assert!(matches!(run(no_proxy), Err(ScenarioError::Precondition("proxy"))));
    }

    #[test]
    fn cache_serve_port_keys_the_hit_tuple() {
        let report = run(TOPOLOGY).unwrap();
        assert!(report
            .transcript
            .iter()
            .any(|e| e.assertion.contains(&format!(":{CACHE_SERVE_PORT} ->"))));
    }
}
