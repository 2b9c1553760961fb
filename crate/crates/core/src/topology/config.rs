//! Line-oriented topology config format.
//!
//! ```text
//! # comment
//! node <id> kind=<client|access-router|core-router|seeder|lan-switch>
//! link <idA> <idB> bw=<int><kbps|mbps> delay=<int>ms queue=<int>
//! lan <id> members=<id,...>
//! island <router-id> lans=<id,...>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{NodeId, NodeKind, NodeSpec, Topology, TopologyBuilder, TopologyError};
use crate::time::SimTime;

fn syntax(line: usize, message: impl Into<String>) -> TopologyError {
    TopologyError::Syntax {
        line,
        message: message.into(),
    }
}

struct Attrs<'a> {
    line: usize,
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Attrs<'a> {
    fn parse(line: usize, tokens: &[&'a str]) -> Result<Self, TopologyError> {
        let mut map = BTreeMap::new();
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| syntax(line, format!("expected key=value, got `{tok}`")))?;
            if map.insert(k, v).is_some() {
                return Err(syntax(line, format!("duplicate attribute `{k}`")));
            }
        }
        Ok(Attrs { line, map })
    }

    fn take(&mut self, key: &str) -> Result<&'a str, TopologyError> {
        self.map
            .remove(key)
            .ok_or_else(|| syntax(self.line, format!("missing attribute `{key}`")))
    }

    fn finish(self) -> Result<(), TopologyError> {
        if let Some((k, _)) = self.map.into_iter().next() {
            return Err(syntax(self.line, format!("unknown attribute `{k}`")));
        }
        Ok(())
    }
}

fn parse_bandwidth(line: usize, s: &str) -> Result<u64, TopologyError> {
    let (digits, unit) = s.split_at(s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len()));
    let value: u64 = digits
        .parse()
        .map_err(|_| syntax(line, format!("bad bandwidth `{s}`")))?;
    let scale = match unit {
        "kbps" => 1_000,
        "mbps" => 1_000_000,
        _ => return Err(syntax(line, format!("bandwidth unit must be kbps or mbps, got `{s}`"))),
    };
    Ok(value * scale)
}

fn parse_delay(line: usize, s: &str) -> Result<SimTime, TopologyError> {
    let ms = s
        .strip_suffix("ms")
        .and_then(|d| d.parse::<u64>().ok())
        .ok_or_else(|| syntax(line, format!("delay must look like `<int>ms`, got `{s}`")))?;
    Ok(SimTime::from_millis(ms))
}

/// Parses a config document into a validated topology.
pub fn parse_topology(text: &str) -> Result<Topology, TopologyError> {
    struct PendingLink {
        line: usize,
        a: String,
        b: String,
        bw: u64,
        delay: SimTime,
        queue: usize,
    }

    let mut nodes: Vec<NodeSpec> = Vec::new();
    let mut pending_links: Vec<PendingLink> = Vec::new();
    let mut pending_lans: Vec<(usize, String, Vec<String>)> = Vec::new();
    let mut pending_islands: Vec<(usize, String, Vec<String>)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "node" => {
                if tokens.len() != 3 {
                    return Err(syntax(lineno, "expected `node <id> kind=<kind>`"));
                }
                let mut attrs = Attrs::parse(lineno, &tokens[2..])?;
                let kind_str = attrs.take("kind")?;
                attrs.finish()?;
                let kind: NodeKind = kind_str
                    .parse()
                    .map_err(|_| syntax(lineno, format!("unknown node kind `{kind_str}`")))?;
                nodes.push(NodeSpec {
                    name: tokens[1].to_string(),
                    kind,
                });
            }
            "link" => {
                if tokens.len() != 6 {
                    return Err(syntax(
                        lineno,
                        "expected `link <idA> <idB> bw=<bw> delay=<int>ms queue=<int>`",
                    ));
                }
                let mut attrs = Attrs::parse(lineno, &tokens[3..])?;
                let bw = parse_bandwidth(lineno, attrs.take("bw")?)?;
                let delay = parse_delay(lineno, attrs.take("delay")?)?;
                let queue: usize = attrs
                    .take("queue")?
                    .parse()
                    .map_err(|_| syntax(lineno, "bad queue capacity"))?;
                attrs.finish()?;
                pending_links.push(PendingLink {
                    line: lineno,
                    a: tokens[1].to_string(),
                    b: tokens[2].to_string(),
                    bw,
                    delay,
                    queue,
                });
            }
            "lan" => {
                if tokens.len() != 3 {
                    return Err(syntax(lineno, "expected `lan <id> members=<id,...>`"));
                }
                let mut attrs = Attrs::parse(lineno, &tokens[2..])?;
                let members = attrs.take("members")?.split(',').map(String::from).collect();
                attrs.finish()?;
                pending_lans.push((lineno, tokens[1].to_string(), members));
            }
            "island" => {
                if tokens.len() != 3 {
                    return Err(syntax(lineno, "expected `island <router-id> lans=<id,...>`"));
                }
                let mut attrs = Attrs::parse(lineno, &tokens[2..])?;
                let lans = attrs.take("lans")?.split(',').map(String::from).collect();
                attrs.finish()?;
                pending_islands.push((lineno, tokens[1].to_string(), lans));
            }
            other => {
                return Err(syntax(lineno, format!("unknown directive `{other}`")));
            }
        }
    }

    let mut b = TopologyBuilder::new();
    let mut ids: BTreeMap<String, NodeId> = BTreeMap::new();
    for n in &nodes {
        let id = b.node(&n.name, n.kind);
        ids.insert(n.name.clone(), id);
    }
    let resolve = |ids: &BTreeMap<String, NodeId>, line: usize, name: &str| {
        ids.get(name)
            .copied()
            .ok_or_else(|| syntax(line, format!("reference to undeclared node `{name}`")))
    };

    for l in pending_links {
        let a = resolve(&ids, l.line, &l.a)?;
        let bb = resolve(&ids, l.line, &l.b)?;
        b.link(a, bb, l.bw, l.delay, l.queue);
    }
    let mut lan_switches: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (line, switch, members) in pending_lans {
        let sw = resolve(&ids, line, &switch)?;
        let mut member_ids = Vec::new();
        for m in &members {
            member_ids.push(resolve(&ids, line, m)?);
        }
        lan_switches.insert(switch.clone(), members);
        b.lan(sw, member_ids);
    }
    for (line, router, lans) in pending_islands {
        let r = resolve(&ids, line, &router)?;
        let mut switch_ids = Vec::new();
        for lan_name in &lans {
            let sw = resolve(&ids, line, lan_name)?;
            if !lan_switches.contains_key(lan_name) {
                return Err(syntax(
                    line,
                    format!("island references `{lan_name}` which has no lan directive"),
                ));
            }
            switch_ids.push(sw);
        }
        b.island(r, &switch_ids);
    }
    b.build()
}

/// Renders a topology in the config format; `parse_topology` round-trips it.
pub fn serialize_topology(topo: &Topology) -> String {
    let mut out = String::new();
    for n in topo.nodes() {
        writeln!(out, "node {} kind={}", n.name, n.kind.as_str()).unwrap();
    }
    for l in topo.links() {
        let bw = if l.bandwidth_bps % 1_000_000 == 0 {
            format!("{}mbps", l.bandwidth_bps / 1_000_000)
        } else {
            debug_assert_eq!(l.bandwidth_bps % 1_000, 0, "bandwidth not expressible in kbps");
            format!("{}kbps", l.bandwidth_bps / 1_000)
        };
        let delay_ms = l.delay.as_nanos() / 1_000_000;
        writeln!(
            out,
            "link {} {} bw={} delay={}ms queue={}",
            topo.node_name(l.a),
            topo.node_name(l.b),
            bw,
            delay_ms,
            l.queue_capacity
        )
        .unwrap();
    }
    for lan in topo.lans() {
        let members: Vec<&str> = lan.members.iter().map(|&m| topo.node_name(m)).collect();
        writeln!(
            out,
            "lan {} members={}",
            topo.node_name(lan.switch),
            members.join(",")
        )
        .unwrap();
    }
    for island in topo.islands() {
        let lans: Vec<&str> = island
            .lans
            .iter()
            .map(|&i| topo.node_name(topo.lans()[i].switch))
            .collect();
        writeln!(
            out,
            "island {} lans={}",
            topo.node_name(island.router),
            lans.join(",")
        )
        .unwrap();
    }
    out
}
