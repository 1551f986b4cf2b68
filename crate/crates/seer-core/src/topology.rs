//! Network graphs (geographic backbone, fat tree), replica placement, and
//! pairwise base path delays.

use thiserror::Error;

/// Index of a switch within a [`Topology`].
pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("failed to load topology data: {0}")]
    TopologyLoadError(String),
    #[error("placement error: {0}")]
    PlacementError(String),
    #[error("no path between {0} and {1}")]
    Unreachable(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyKind {
    Internet2,
    FatTree,
}

/// An undirected switch graph with per-link one-way propagation delays.
#[derive(Debug, Clone)]
pub struct Topology {
    pub kind: TopologyKind,
    names: Vec<String>,
    /// Undirected links as (a, b, one-way delay ms); a < b.
    links: Vec<(NodeId, NodeId, f64)>,
    adjacency: Vec<Vec<(NodeId, f64)>>,
    /// Switches that may host a replica/client pair, in canonical order.
    eligible_hosts: Vec<NodeId>,
}

impl Topology {
    /// Builds a topology from explicit parts. Host eligibility defaults to
    /// every node; no connectivity requirement is imposed.
    pub fn custom(
        kind: TopologyKind,
        names: Vec<String>,
        links: Vec<(NodeId, NodeId, f64)>,
        eligible_hosts: Option<Vec<NodeId>>,
    ) -> Result<Self, TopologyError> {
        let n = names.len();
        let mut adjacency = vec![Vec::new(); n];
        let mut normalized = Vec::with_capacity(links.len());
        for (a, b, delay) in links {
            if a >= n || b >= n || a == b {
                return Err(TopologyError::InvalidTopology(format!(
                    "link ({a}, {b}) references an invalid node"
                )));
            }
            if !(delay >= 0.0) {
                return Err(TopologyError::InvalidTopology(format!(
                    "link ({a}, {b}) has negative delay {delay}"
                )));
            }
            adjacency[a].push((b, delay));
            adjacency[b].push((a, delay));
            normalized.push((a.min(b), a.max(b), delay));
        }
        let eligible_hosts = eligible_hosts.unwrap_or_else(|| (0..n).collect());
        Ok(Self { kind, names, links: normalized, adjacency, eligible_hosts })
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.names[id]
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn links(&self) -> &[(NodeId, NodeId, f64)] {
        &self.links
    }

    /// Switches eligible to host a replica/client pair, in canonical order.
    pub fn eligible_hosts(&self) -> &[NodeId] {
        &self.eligible_hosts
    }

    pub fn is_connected(&self) -> bool {
        let n = self.node_count();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        let mut count = 0;
        while let Some(v) = stack.pop() {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            count += 1;
            stack.extend(self.adjacency[v].iter().map(|&(w, _)| w));
        }
        count == n
    }

    /// Minimal one-way delay between `a` and `b` (Dijkstra over link delays).
    pub fn shortest_path_delay(&self, a: NodeId, b: NodeId) -> Result<f64, TopologyError> {
        let n = self.node_count();
        assert!(a < n && b < n, "node out of range");
        if a == b {
            return Ok(0.0);
        }
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        dist[a] = 0.0;
        // O(n²) scan; every graph here is small (tens of switches).
        loop {
            let mut next = None;
            let mut best = f64::INFINITY;
            for v in 0..n {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    next = Some(v);
                }
            }
            let Some(v) = next else { break };
            if v == b {
                return Ok(dist[b]);
            }
            done[v] = true;
            for &(w, delay) in &self.adjacency[v] {
                let cand = dist[v] + delay;
                if cand < dist[w] {
                    dist[w] = cand;
                }
            }
        }
        Err(TopologyError::Unreachable(
            self.names[a].clone(),
            self.names[b].clone(),
        ))
    }
}

/// Parsed geographic node/edge data for backbone topologies.
#[derive(Debug, Clone)]
pub struct GeoData {
    /// (name, latitude, longitude)
    pub nodes: Vec<(String, f64, f64)>,
    /// (nameA, nameB, great-circle distance in km)
    pub edges: Vec<(String, String, f64)>,
}

const INTERNET2_NODES: &str = include_str!("../assets/internet2_nodes.txt");
const INTERNET2_EDGES: &str = include_str!("../assets/internet2_edges.txt");

impl GeoData {
    /// Parses node (`name lat lon`) and edge (`nameA nameB distance_km`)
    /// listings. Blank lines and `#` comments are ignored.
    pub fn parse(nodes_text: &str, edges_text: &str) -> Result<Self, TopologyError> {
        let mut nodes = Vec::new();
        for (lineno, line) in data_lines(nodes_text) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(TopologyError::TopologyLoadError(format!(
                    "node line {lineno}: expected `name lat lon`, got {line:?}"
                )));
            }
            let lat = parse_float(fields[1], lineno)?;
            let lon = parse_float(fields[2], lineno)?;
            nodes.push((fields[0].to_string(), lat, lon));
        }
        let mut edges = Vec::new();
        for (lineno, line) in data_lines(edges_text) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(TopologyError::TopologyLoadError(format!(
                    "edge line {lineno}: expected `nodeA nodeB distance_km`, got {line:?}"
                )));
            }
            let km = parse_float(fields[2], lineno)?;
            edges.push((fields[0].to_string(), fields[1].to_string(), km));
        }
        Ok(Self { nodes, edges })
    }

    /// The Internet2 backbone shipped with the crate (34 points of presence).
    pub fn bundled_internet2() -> Self {
        Self::parse(INTERNET2_NODES, INTERNET2_EDGES)
            .expect("bundled geographic asset is well-formed")
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_float(s: &str, lineno: usize) -> Result<f64, TopologyError> {
    s.parse::<f64>().map_err(|_| {
        TopologyError::TopologyLoadError(format!("line {lineno}: invalid number {s:?}"))
    })
}

/// Builds a geographic backbone where each link's one-way delay is its
/// great-circle distance divided by `light_speed_km_s`.
pub fn build_internet2(geo: &GeoData, light_speed_km_s: f64) -> Result<Topology, TopologyError> {
    if !(light_speed_km_s > 0.0) {
        return Err(TopologyError::InvalidTopology(format!(
            "light speed must be positive, got {light_speed_km_s}"
        )));
    }
    let names: Vec<String> = geo.nodes.iter().map(|(n, _, _)| n.clone()).collect();
    let mut links = Vec::with_capacity(geo.edges.len());
    for (a, b, km) in &geo.edges {
        let find = |name: &str| {
            names.iter().position(|n| n == name).ok_or_else(|| {
                TopologyError::TopologyLoadError(format!("edge references unknown node {name:?}"))
            })
        };
        if *km < 0.0 {
            return Err(TopologyError::TopologyLoadError(format!(
                "edge {a} {b} has negative distance {km}"
            )));
        }
        let delay_ms = km / light_speed_km_s * 1000.0;
        links.push((find(a)?, find(b)?, delay_ms));
    }
    let topo = Topology::custom(TopologyKind::Internet2, names, links, None)?;
    if !topo.is_connected() {
        return Err(TopologyError::InvalidTopology(
            "geographic backbone is disconnected".into(),
        ));
    }
    Ok(topo)
}

/// Builds a standard 3-level fat tree: (radix/2)² core switches and `radix`
/// pods, each with radix/2 aggregation and radix/2 edge switches. Every link
/// carries the uniform `hop_delay_ms`.
pub fn build_fat_tree(radix: usize, levels: usize, hop_delay_ms: f64) -> Result<Topology, TopologyError> {
    if radix == 0 || radix % 2 != 0 {
        return Err(TopologyError::InvalidTopology(format!(
            "fat-tree radix must be a positive even number, got {radix}"
        )));
    }
    if levels != 3 {
        return Err(TopologyError::InvalidTopology(format!(
            "only 3-level fat trees are supported, got {levels} levels"
        )));
    }
    if !(hop_delay_ms >= 0.0) {
        return Err(TopologyError::InvalidTopology(format!(
            "hop delay must be non-negative, got {hop_delay_ms}"
        )));
    }
    let half = radix / 2;
    let mut names: Vec<String> = (0..half * half).map(|c| format!("core{c}")).collect();
    let mut agg_ids = vec![Vec::with_capacity(half); radix];
    let mut edge_ids = Vec::with_capacity(radix * half);
    for pod in 0..radix {
        for i in 0..half {
            agg_ids[pod].push(names.len());
            names.push(format!("pod{pod}_agg{i}"));
        }
        for i in 0..half {
            edge_ids.push(names.len());
            names.push(format!("pod{pod}_edge{i}"));
        }
    }
    let mut links = Vec::new();
    for pod in 0..radix {
        for (i, &agg) in agg_ids[pod].iter().enumerate() {
            // Aggregation switch at position i uplinks to core group i.
            for c in 0..half {
                links.push((agg, i * half + c, hop_delay_ms));
            }
            for &edge in &edge_ids[pod * half..(pod + 1) * half] {
                links.push((agg, edge, hop_delay_ms));
            }
        }
    }
    Topology::custom(TopologyKind::FatTree, names, links, Some(edge_ids))
}

/// How replica/client pairs are assigned to switches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlacementStrategy {
    /// Round-robin for fat trees, max-min distance spread for backbones.
    Auto,
    /// First `cluster_size` eligible hosts in canonical order.
    RoundRobin,
    /// Greedy spread maximizing the minimum pairwise path delay.
    MaxMinSpread,
    /// Hosts given by switch name, one per replica.
    Explicit(Vec<String>),
}

/// Replica-to-switch assignment; client `i` is co-located with replica `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    replica_hosts: Vec<NodeId>,
}

impl Placement {
    pub fn cluster_size(&self) -> usize {
        self.replica_hosts.len()
    }

    pub fn replica_host(&self, replica: usize) -> NodeId {
        self.replica_hosts[replica]
    }

    /// Clients attach at their replica's switch.
    pub fn client_host(&self, client: usize) -> NodeId {
        self.replica_hosts[client]
    }

    pub fn replica_hosts(&self) -> &[NodeId] {
        &self.replica_hosts
    }
}

pub fn place_replicas(
    topology: &Topology,
    cluster_size: usize,
    strategy: &PlacementStrategy,
) -> Result<Placement, TopologyError> {
    if cluster_size == 0 {
        return Err(TopologyError::PlacementError("cluster size must be positive".into()));
    }
    let eligible = topology.eligible_hosts();
    if cluster_size > eligible.len() {
        return Err(TopologyError::PlacementError(format!(
            "cluster size {cluster_size} exceeds the {} host slots",
            eligible.len()
        )));
    }
    let strategy = match strategy {
        PlacementStrategy::Auto => match topology.kind {
            TopologyKind::FatTree => &PlacementStrategy::RoundRobin,
            TopologyKind::Internet2 => &PlacementStrategy::MaxMinSpread,
        },
        s => s,
    };
    let replica_hosts = match strategy {
        PlacementStrategy::Auto => unreachable!("resolved above"),
        PlacementStrategy::RoundRobin => eligible[..cluster_size].to_vec(),
        PlacementStrategy::MaxMinSpread => max_min_spread(topology, cluster_size)?,
        PlacementStrategy::Explicit(names) => {
            if names.len() != cluster_size {
                return Err(TopologyError::PlacementError(format!(
                    "explicit placement lists {} hosts for cluster size {cluster_size}",
                    names.len()
                )));
            }
            let mut hosts = Vec::with_capacity(names.len());
            for name in names {
                let id = topology.node_by_name(name).ok_or_else(|| {
                    TopologyError::PlacementError(format!("unknown switch {name:?}"))
                })?;
                if !eligible.contains(&id) {
                    return Err(TopologyError::PlacementError(format!(
                        "switch {name:?} cannot host a replica"
                    )));
                }
                if hosts.contains(&id) {
                    return Err(TopologyError::PlacementError(format!(
                        "switch {name:?} listed twice"
                    )));
                }
                hosts.push(id);
            }
            hosts
        }
    };
    Ok(Placement { replica_hosts })
}

/// Greedy spread: seed with the farthest eligible pair, then repeatedly add
/// the host maximizing its minimum delay to the chosen set. Ties break toward
/// the lower node id, so the result is deterministic.
fn max_min_spread(topology: &Topology, cluster_size: usize) -> Result<Vec<NodeId>, TopologyError> {
    let eligible = topology.eligible_hosts();
    if cluster_size == 1 {
        return Ok(vec![eligible[0]]);
    }
    let delay = |a: NodeId, b: NodeId| topology.shortest_path_delay(a, b);
    let mut best_pair = (eligible[0], eligible[1]);
    let mut best = f64::NEG_INFINITY;
    for (i, &a) in eligible.iter().enumerate() {
        for &b in &eligible[i + 1..] {
            let d = delay(a, b)?;
            if d > best {
                best = d;
                best_pair = (a, b);
            }
        }
    }
    let mut chosen = vec![best_pair.0.min(best_pair.1), best_pair.0.max(best_pair.1)];
    while chosen.len() < cluster_size {
        let mut next = None;
        let mut next_score = f64::NEG_INFINITY;
        for &cand in eligible {
            if chosen.contains(&cand) {
                continue;
            }
            let mut min_d = f64::INFINITY;
            for &c in &chosen {
                min_d = min_d.min(delay(cand, c)?);
            }
            if min_d > next_score {
                next_score = min_d;
                next = Some(cand);
            }
        }
        chosen.push(next.expect("eligible hosts remain"));
    }
    Ok(chosen)
}

/// Round-trip propagation delays between every pair of replica hosts.
#[derive(Debug, Clone)]
pub struct DelayMatrix {
    n: usize,
    one_way: Vec<f64>,
}

impl DelayMatrix {
    pub fn from_placement(topology: &Topology, placement: &Placement) -> Result<Self, TopologyError> {
        let n = placement.cluster_size();
        let mut one_way = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = topology
                    .shortest_path_delay(placement.replica_host(i), placement.replica_host(j))?;
                one_way[i * n + j] = d;
                one_way[j * n + i] = d;
            }
        }
        Ok(Self { n, one_way })
    }

    pub fn cluster_size(&self) -> usize {
        self.n
    }

    /// One-way base propagation delay between replicas `i` and `j`.
    pub fn one_way(&self, i: usize, j: usize) -> f64 {
        self.one_way[i * self.n + j]
    }

    /// Base round-trip propagation delay (2× one-way shortest path).
    pub fn base_rtt(&self, i: usize, j: usize) -> f64 {
        2.0 * self.one_way(i, j)
    }
}
