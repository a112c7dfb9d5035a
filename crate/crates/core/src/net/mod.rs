//! Mobility network construction.
//!
//! Ground flows come from a radiation-type model restricted to a distance
//! neighborhood, air flows are spread from an airport-to-airport table onto
//! the population cells of each airport's nearest-site cell, and the two are
//! summed into a sparse directed [`FlowMatrix`] carrying row-normalized rates
//! and the global flow-to-population ratio.

mod synth;

pub use synth::{synth_world, PopulationDist, SynthParams, SynthWorld};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// How node and airport coordinates are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    /// `lat`/`lon` in degrees; great-circle distance in km.
    #[default]
    Spherical,
    /// `lat` is y and `lon` is x, both in km; Euclidean distance.
    Planar,
}

impl Geometry {
    /// Distance in km between `(lat, lon)` pairs.
    pub fn distance(self, a: (f64, f64), b: (f64, f64)) -> f64 {
        match self {
            Geometry::Planar => (a.0 - b.0).hypot(a.1 - b.1),
            Geometry::Spherical => {
                let (phi1, phi2) = (a.0.to_radians(), b.0.to_radians());
                let dphi = phi2 - phi1;
                let dlambda = (b.1 - a.1).to_radians();
                let h = (dphi / 2.0).sin().powi(2)
                    + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
                2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
            }
        }
    }

    /// Span of the `lat` coordinate that a distance `d` can cover. Any pair
    /// within distance `d` differs in `lat` by at most this amount.
    fn lat_span(self, d: f64) -> f64 {
        match self {
            Geometry::Planar => d,
            Geometry::Spherical => (d / EARTH_RADIUS_KM).to_degrees(),
        }
    }

    fn check_coordinates(self, lat: f64, lon: f64) -> bool {
        match self {
            Geometry::Planar => lat.is_finite() && lon.is_finite(),
            Geometry::Spherical => (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon),
        }
    }
}

/// One population cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub lat: f64,
    pub lon: f64,
    pub population: f64,
    pub agent_id: usize,
    #[serde(default)]
    pub airport_id: Option<usize>,
}

impl NodeRecord {
    pub fn position(&self) -> (f64, f64) {
        (self.lat, self.lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirportRecord {
    pub id: usize,
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub polygon_population: f64,
}

/// Directed airport-to-airport flow, persons per period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AirFlow {
    pub origin: usize,
    pub destination: usize,
    pub flow: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AirFlowTable {
    pub entries: Vec<AirFlow>,
}

impl AirFlowTable {
    /// Build a directed table from undirected totals by splitting each total
    /// evenly between the two directions.
    pub fn from_undirected(totals: &[AirFlow]) -> Self {
        let entries = totals
            .iter()
            .flat_map(|e| {
                let half = e.flow / 2.0;
                [
                    AirFlow { origin: e.origin, destination: e.destination, flow: half },
                    AirFlow { origin: e.destination, destination: e.origin, flow: half },
                ]
            })
            .collect();
        Self { entries }
    }

    /// Validated, de-duplicated positive entries keyed by `(origin, destination)`.
    fn aggregate(&self, airport_count: usize) -> Result<BTreeMap<(usize, usize), f64>> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            if e.origin == e.destination {
                return Err(Error::Invalid(format!("air flow self-loop at airport {}", e.origin)));
            }
            if e.origin >= airport_count || e.destination >= airport_count {
                return Err(Error::Invalid(format!(
                    "air flow {} -> {} references an unknown airport",
                    e.origin, e.destination
                )));
            }
            if !(e.flow.is_finite() && e.flow >= 0.0) {
                return Err(Error::Invalid(format!(
                    "air flow {} -> {} is {}",
                    e.origin, e.destination, e.flow
                )));
            }
            *out.entry((e.origin, e.destination)).or_insert(0.0) += e.flow;
        }
        out.retain(|_, g| *g > 0.0);
        Ok(out)
    }
}

/// Sparse nonnegative flows, one sorted row per origin node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseFlows {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseFlows {
    pub fn empty(n: usize) -> Self {
        Self { rows: vec![Vec::new(); n] }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.rows[i];
        row.binary_search_by_key(&j, |&(k, _)| k).map_or(0.0, |p| row[p].1)
    }

    pub fn total(&self) -> f64 {
        self.rows.iter().flatten().map(|&(_, f)| f).sum()
    }
}

/// One directed arc of the combined network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub to: usize,
    pub ground: f64,
    pub air: f64,
    pub flow: f64,
    pub rate: f64,
}

/// Reverse view of an arc, stored on its destination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InEdge {
    pub from: usize,
    pub flow: f64,
    pub rate: f64,
}

/// Combined mobility network: arcs exist exactly where the total flow is
/// positive, so the out-neighborhood of `i` is the arc list of row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrix {
    out: Vec<Vec<Edge>>,
    incoming: Vec<Vec<InEdge>>,
    rho: f64,
}

impl FlowMatrix {
    /// Assemble from arc rows. Rows must be sorted by destination, free of
    /// self-loops and carry positive flows.
    pub fn from_rows(out: Vec<Vec<Edge>>, rho: f64) -> Result<Self> {
        let n = out.len();
        let mut incoming = vec![Vec::new(); n];
        for (i, row) in out.iter().enumerate() {
            let mut prev = None;
            for e in row {
                if e.to >= n || e.to == i {
                    return Err(Error::Invalid(format!("invalid arc {} -> {}", i, e.to)));
                }
                if prev.is_some_and(|p| p >= e.to) {
                    return Err(Error::Invalid(format!("row {i} is not sorted by destination")));
                }
                if !(e.flow > 0.0 && e.rate > 0.0 && e.rate <= 1.0 + 1e-12) {
                    return Err(Error::Invalid(format!(
                        "arc {} -> {} has flow {} and rate {}",
                        i, e.to, e.flow, e.rate
                    )));
                }
                prev = Some(e.to);
                incoming[e.to].push(InEdge { from: i, flow: e.flow, rate: e.rate });
            }
        }
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(Error::Invalid(format!("flow-to-population ratio {rho}")));
        }
        Ok(Self { out, incoming, rho })
    }

    /// Network with no arcs at all.
    pub fn isolated(n: usize) -> Self {
        Self { out: vec![Vec::new(); n], incoming: vec![Vec::new(); n], rho: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.out.is_empty()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Arcs leaving `i`, sorted by destination.
    pub fn neighbors(&self, i: usize) -> &[Edge] {
        &self.out[i]
    }

    /// Arcs entering `i`, sorted by origin.
    pub fn incoming(&self, i: usize) -> &[InEdge] {
        &self.incoming[i]
    }

    pub fn rows(&self) -> &[Vec<Edge>] {
        &self.out
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    pub fn outflow(&self, i: usize) -> f64 {
        self.out[i].iter().map(|e| e.flow).sum()
    }

    /// Inflow into `i` from its own out-neighbors, `Σ_{j ∈ N_i} f_ji`.
    pub fn neighborhood_inflow(&self, i: usize) -> f64 {
        let row = &self.out[i];
        self.incoming[i]
            .iter()
            .filter(|e| row.binary_search_by_key(&e.from, |o| o.to).is_ok())
            .map(|e| e.flow)
            .sum()
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        let row = &self.out[i];
        row.binary_search_by_key(&j, |e| e.to).map_or(0.0, |p| row[p].rate)
    }
}

fn check_nodes(nodes: &[NodeRecord], geometry: Geometry) -> Result<()> {
    if nodes.is_empty() {
        return Err(Error::NoNodes);
    }
    for (idx, n) in nodes.iter().enumerate() {
        if n.id != idx {
            return Err(Error::Invalid(format!(
                "node ids must be contiguous from 0; position {idx} holds id {}",
                n.id
            )));
        }
        if !geometry.check_coordinates(n.lat, n.lon) {
            return Err(Error::Invalid(format!("node {} has invalid coordinates", n.id)));
        }
        if !(n.population.is_finite() && n.population > 0.0) {
            return Err(Error::Invalid(format!(
                "node {} has non-positive population {}",
                n.id, n.population
            )));
        }
    }
    Ok(())
}

/// For every node, the nodes within `radius_km` of it (itself excluded), sorted.
pub fn ground_neighborhoods(
    nodes: &[NodeRecord],
    radius_km: f64,
    geometry: Geometry,
) -> Result<Vec<Vec<usize>>> {
    check_nodes(nodes, geometry)?;
    if !(radius_km.is_finite() && radius_km > 0.0) {
        return Err(Error::Invalid(format!("ground radius must be positive, got {radius_km}")));
    }
    // Sweep over nodes sorted by `lat`: only the band within `span` can qualify.
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&a, &b| nodes[a].lat.total_cmp(&nodes[b].lat).then(a.cmp(&b)));
    let lats: Vec<f64> = order.iter().map(|&k| nodes[k].lat).collect();
    let span = geometry.lat_span(radius_km) * (1.0 + 1e-9);

    let mut out = vec![Vec::new(); nodes.len()];
    for (pos, &i) in order.iter().enumerate() {
        let lo = lats.partition_point(|&l| l < lats[pos] - span);
        for &j in &order[lo..] {
            if nodes[j].lat > nodes[i].lat + span {
                break;
            }
            if j != i && geometry.distance(nodes[i].position(), nodes[j].position()) <= radius_km {
                out[i].push(j);
            }
        }
        out[i].sort_unstable();
    }
    Ok(out)
}

/// Ground flows from the radiation-type model
/// `f_ij = α P_i · P_i P_j / (Σ_{i'∈N_i} P_i' · (P_j + Σ_{j'∈N_i} P_j'))`.
pub fn radiation_flows(
    nodes: &[NodeRecord],
    neighborhoods: &[Vec<usize>],
    alpha: f64,
) -> Result<SparseFlows> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Invalid(format!("commute fraction must lie in [0,1], got {alpha}")));
    }
    if neighborhoods.len() != nodes.len() {
        return Err(Error::Invalid("neighborhood count does not match node count".into()));
    }
    let rows = neighborhoods
        .iter()
        .enumerate()
        .map(|(i, hood)| {
            let p_i = nodes[i].population;
            let hood_pop: f64 = hood.iter().map(|&k| nodes[k].population).sum();
            hood.iter()
                .map(|&j| {
                    let p_j = nodes[j].population;
                    let f = alpha * p_i * (p_i * p_j) / (hood_pop * (p_j + hood_pop));
                    (j, f)
                })
                .collect()
        })
        .collect();
    Ok(SparseFlows { rows })
}

/// Nearest-airport assignment and the population of each airport's cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AirportAssignment {
    pub airport_of: Vec<usize>,
    pub polygon_population: Vec<f64>,
}

impl AirportAssignment {
    /// Node indices grouped by airport, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.polygon_population.len()];
        for (i, &a) in self.airport_of.iter().enumerate() {
            m[a].push(i);
        }
        m
    }
}

/// Assign each node to its nearest airport; ties go to the lower airport id.
pub fn assign_airports(
    nodes: &[NodeRecord],
    airports: &[AirportRecord],
    geometry: Geometry,
) -> Result<AirportAssignment> {
    check_nodes(nodes, geometry)?;
    if airports.is_empty() {
        return Err(Error::Invalid("at least one airport is required".into()));
    }
    for (idx, a) in airports.iter().enumerate() {
        if a.id != idx {
            return Err(Error::Invalid(format!(
                "airport ids must be contiguous from 0; position {idx} holds id {}",
                a.id
            )));
        }
        if !geometry.check_coordinates(a.lat, a.lon) {
            return Err(Error::Invalid(format!("airport {} has invalid coordinates", a.id)));
        }
    }
    let airport_of: Vec<usize> = nodes
        .iter()
        .map(|n| {
            let mut best = (f64::INFINITY, 0);
            for a in airports {
                let d = geometry.distance(n.position(), (a.lat, a.lon));
                if d < best.0 {
                    best = (d, a.id);
                }
            }
            best.1
        })
        .collect();
    let mut polygon_population = vec![0.0; airports.len()];
    for (n, &a) in nodes.iter().zip(&airport_of) {
        polygon_population[a] += n.population;
    }
    Ok(AirportAssignment { airport_of, polygon_population })
}

/// Air flows `f_ij = g_{μi μj} (P_i + P_j) / (P_{μi} + P_{μj})` for every pair
/// of nodes whose airports are linked.
pub fn air_flows(
    assignment: &AirportAssignment,
    table: &AirFlowTable,
    nodes: &[NodeRecord],
) -> Result<SparseFlows> {
    if assignment.airport_of.len() != nodes.len() {
        return Err(Error::Invalid("airport assignment does not match node count".into()));
    }
    let members = assignment.members();
    for (a, m) in members.iter().enumerate() {
        if let Some(&node) = m.first() {
            if assignment.polygon_population[a] <= 0.0 {
                return Err(Error::EmptyPolygon { airport: a, node });
            }
        }
    }
    let links = table.aggregate(members.len())?;
    let mut flows = SparseFlows::empty(nodes.len());
    for (&(a, b), &g) in &links {
        let polygon_sum = assignment.polygon_population[a] + assignment.polygon_population[b];
        for &i in &members[a] {
            for &j in &members[b] {
                let f = g * (nodes[i].population + nodes[j].population) / polygon_sum;
                flows.rows[i].push((j, f));
            }
        }
    }
    for row in &mut flows.rows {
        row.sort_unstable_by_key(|&(j, _)| j);
    }
    Ok(flows)
}

/// Sum ground and air flows, normalize rows into rates and compute the global
/// flow-to-population ratio. Zero-flow pairs do not become arcs; nodes with no
/// outflow keep an empty row.
pub fn combine_and_rate(
    ground: &SparseFlows,
    air: &SparseFlows,
    nodes: &[NodeRecord],
) -> Result<FlowMatrix> {
    let n = nodes.len();
    if ground.rows.len() != n || air.rows.len() != n {
        return Err(Error::Invalid("flow components do not match node count".into()));
    }
    let total_population: f64 = nodes.iter().map(|n| n.population).sum();
    if total_population <= 0.0 {
        return Err(Error::ZeroPopulation);
    }

    let mut total_flow = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut merged: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        for &(j, f) in &ground.rows[i] {
            merged.entry(j).or_default().0 += f;
        }
        for &(j, f) in &air.rows[i] {
            merged.entry(j).or_default().1 += f;
        }
        let mut row = Vec::with_capacity(merged.len());
        for (j, (g, a)) in merged {
            if !(g >= 0.0 && a >= 0.0) {
                return Err(Error::Invalid(format!("negative flow on {i} -> {j}")));
            }
            if j == i {
                return Err(Error::Invalid(format!("self-loop at node {i}")));
            }
            let flow = g + a;
            if flow > 0.0 {
                row.push(Edge { to: j, ground: g, air: a, flow, rate: 0.0 });
            }
        }
        let outflow: f64 = row.iter().map(|e| e.flow).sum();
        for e in &mut row {
            e.rate = e.flow / outflow;
        }
        total_flow += outflow;
        out.push(row);
    }
    FlowMatrix::from_rows(out, total_flow / total_population)
}

/// Parameters of network construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkParams {
    #[serde(default = "NetworkParams::default_radius")]
    pub ground_radius_km: f64,
    #[serde(default = "NetworkParams::default_alpha")]
    pub commute_fraction: f64,
}

impl NetworkParams {
    fn default_radius() -> f64 {
        100.0
    }
    fn default_alpha() -> f64 {
        0.11
    }
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self { ground_radius_km: Self::default_radius(), commute_fraction: Self::default_alpha() }
    }
}

/// A fully built world: nodes (with airport assignment), airports (with
/// polygon populations) and the combined flow matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub geometry: Geometry,
    pub nodes: Vec<NodeRecord>,
    pub airports: Vec<AirportRecord>,
    pub flows: FlowMatrix,
}

impl Network {
    pub fn populations(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.population).collect()
    }

    pub fn total_population(&self) -> f64 {
        self.nodes.iter().map(|n| n.population).sum()
    }

    /// Number of agents, i.e. one past the largest agent id.
    pub fn agent_count(&self) -> usize {
        self.nodes.iter().map(|n| n.agent_id + 1).max().unwrap_or(0)
    }

    /// Node indices owned by each agent.
    pub fn partition(&self) -> Vec<Vec<usize>> {
        let mut parts = vec![Vec::new(); self.agent_count()];
        for n in &self.nodes {
            parts[n.agent_id].push(n.id);
        }
        parts
    }

    /// Every agent id between 0 and the maximum must own at least one node.
    pub fn check_partition(&self) -> Result<()> {
        match self.partition().iter().position(Vec::is_empty) {
            Some(k) => Err(Error::Invalid(format!("agent {k} owns no nodes"))),
            None => Ok(()),
        }
    }
}

/// Build the combined network. Without airports, only ground flows are used.
pub fn build_network(
    mut nodes: Vec<NodeRecord>,
    mut airports: Vec<AirportRecord>,
    table: &AirFlowTable,
    params: &NetworkParams,
    geometry: Geometry,
) -> Result<Network> {
    let hoods = ground_neighborhoods(&nodes, params.ground_radius_km, geometry)?;
    let ground = radiation_flows(&nodes, &hoods, params.commute_fraction)?;
    let air = if airports.is_empty() {
        if !table.entries.is_empty() {
            return Err(Error::Invalid("air flows given without airports".into()));
        }
        for n in &mut nodes {
            n.airport_id = None;
        }
        SparseFlows::empty(nodes.len())
    } else {
        let assignment = assign_airports(&nodes, &airports, geometry)?;
        for (n, &a) in nodes.iter_mut().zip(&assignment.airport_of) {
            n.airport_id = Some(a);
        }
        for (a, &p) in airports.iter_mut().zip(&assignment.polygon_population) {
            a.polygon_population = p;
        }
        air_flows(&assignment, table, &nodes)?
    };
    let flows = combine_and_rate(&ground, &air, &nodes)?;
    let net = Network { geometry, nodes, airports, flows };
    net.check_partition()?;
    Ok(net)
}
