//! Deterministic synthetic worlds for desk-scale experiments.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::{assign_airports, AirFlow, AirFlowTable, AirportRecord, Geometry, NodeRecord};
use crate::error::{Error, Result};
use crate::streams::{Purpose, Streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PopulationDist {
    LogNormal { median: f64, sigma: f64 },
    Uniform { min: f64, max: f64 },
}

impl Default for PopulationDist {
    fn default() -> Self {
        PopulationDist::LogNormal { median: 50_000.0, sigma: 0.8 }
    }
}

/// Parameters of the planar grid generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub nodes: usize,
    pub agents: usize,
    #[serde(default = "SynthParams::default_spacing")]
    pub spacing_km: f64,
    #[serde(default)]
    pub population: PopulationDist,
    /// Number of airports, placed on randomly chosen cells.
    #[serde(default = "SynthParams::default_airports")]
    pub airports: usize,
    /// Share of each airport cell's population flying out per period.
    #[serde(default = "SynthParams::default_air_fraction")]
    pub air_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthParams {
    fn default_spacing() -> f64 {
        50.0
    }
    fn default_airports() -> usize {
        4
    }
    fn default_air_fraction() -> f64 {
        0.01
    }

    pub fn new(nodes: usize, agents: usize, seed: u64) -> Self {
        Self {
            nodes,
            agents,
            spacing_km: Self::default_spacing(),
            population: PopulationDist::default(),
            airports: Self::default_airports().min(nodes),
            air_fraction: Self::default_air_fraction(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.agents == 0 {
            return Err(Error::Invalid("node and agent counts must be at least 1".into()));
        }
        if self.agents > self.nodes {
            return Err(Error::Invalid(format!(
                "{} agents cannot share {} nodes",
                self.agents, self.nodes
            )));
        }
        if self.airports > self.nodes {
            return Err(Error::Invalid(format!(
                "{} airports exceed {} nodes",
                self.airports, self.nodes
            )));
        }
        if !(self.spacing_km.is_finite() && self.spacing_km > 0.0) {
            return Err(Error::Invalid("grid spacing must be positive".into()));
        }
        if !(self.air_fraction.is_finite() && self.air_fraction >= 0.0) {
            return Err(Error::Invalid("air fraction must be nonnegative".into()));
        }
        match self.population {
            PopulationDist::LogNormal { median, sigma } if median > 0.0 && sigma >= 0.0 => Ok(()),
            PopulationDist::Uniform { min, max } if min > 0.0 && max >= min => Ok(()),
            other => Err(Error::Invalid(format!("invalid population distribution {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub nodes: Vec<NodeRecord>,
    pub airports: Vec<AirportRecord>,
    pub air_table: AirFlowTable,
}

/// Generate a planar grid world.
///
/// Cells are laid out row-major on a square-ish grid; agents own contiguous
/// runs of cells (horizontal bands). Airports sit on randomly chosen cells and
/// each emits `air_fraction` of its cell population, split across the other
/// airports with gravity weights `P_b / d_ab²`. Table entries are scaled so
/// that the node-level air flows between two cells add up to that target.
pub fn synth_world(params: &SynthParams) -> Result<SynthWorld> {
    params.validate()?;
    let streams = Streams::new(params.seed);
    let n = params.nodes;
    let cols = (n as f64).sqrt().ceil() as usize;

    let mut pop_rng = streams.rng(Purpose::World, 0, 0);
    let nodes: Vec<NodeRecord> = (0..n)
        .map(|k| {
            let population = match params.population {
                PopulationDist::LogNormal { median, sigma } => LogNormal::new(median.ln(), sigma)
                    .expect("validated")
                    .sample(&mut pop_rng),
                PopulationDist::Uniform { min, max } => {
                    min + (max - min) * pop_rng.random::<f64>()
                }
            };
            NodeRecord {
                id: k,
                lat: (k / cols) as f64 * params.spacing_km,
                lon: (k % cols) as f64 * params.spacing_km,
                population: population.max(1.0),
                agent_id: k * params.agents / n,
                airport_id: None,
            }
        })
        .collect();

    let mut site_rng = streams.rng(Purpose::World, 0, 1);
    let mut sites = index::sample(&mut site_rng, n, params.airports).into_vec();
    sites.sort_unstable();
    let airports: Vec<AirportRecord> = sites
        .iter()
        .enumerate()
        .map(|(id, &k)| AirportRecord {
            id,
            lat: nodes[k].lat,
            lon: nodes[k].lon,
            polygon_population: 0.0,
        })
        .collect();

    let mut air_table = AirFlowTable::default();
    if airports.len() > 1 {
        let assignment = assign_airports(&nodes, &airports, Geometry::Planar)?;
        let pops = &assignment.polygon_population;
        let sizes: Vec<f64> = assignment.members().iter().map(|m| m.len() as f64).collect();
        for a in &airports {
            let weights: Vec<f64> = airports
                .iter()
                .map(|b| {
                    if a.id == b.id {
                        return 0.0;
                    }
                    let d = Geometry::Planar
                        .distance((a.lat, a.lon), (b.lat, b.lon))
                        .max(params.spacing_km);
                    pops[b.id] / (d * d)
                })
                .collect();
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                continue;
            }
            for (b, w) in weights.iter().enumerate() {
                // Node-level flows sum to g_ab (n_b P_a + n_a P_b) / (P_a + P_b).
                let spread = (sizes[b] * pops[a.id] + sizes[a.id] * pops[b]) / (pops[a.id] + pops[b]);
                let flow = params.air_fraction * pops[a.id] * w / total / spread;
                if flow > 0.0 {
                    air_table.entries.push(AirFlow { origin: a.id, destination: b, flow });
                }
            }
        }
    }

    Ok(SynthWorld { nodes, airports, air_table })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_world() {
        let p = SynthParams::new(60, 3, 11);
        assert_eq!(synth_world(&p).unwrap(), synth_world(&p).unwrap());
        let q = SynthParams { seed: 12, ..p.clone() };
        assert_ne!(synth_world(&p).unwrap().nodes, synth_world(&q).unwrap().nodes);
    }

    #[test]
    fn one_agent_owns_everything() {
        let w = synth_world(&SynthParams::new(30, 1, 1)).unwrap();
        assert!(w.nodes.iter().all(|n| n.agent_id == 0));
    }

    #[test]
    fn partition_sizes_sum_to_node_count() {
        let w = synth_world(&SynthParams::new(200, 5, 7)).unwrap();
        let mut sizes = [0usize; 5];
        for n in &w.nodes {
            sizes[n.agent_id] += 1;
        }
        assert_eq!(sizes.iter().sum::<usize>(), 200);
        assert!(sizes.iter().all(|&s| s == 40));
    }

    #[test]
    fn infeasible_parameters_fail() {
        let p = SynthParams { airports: 11, ..SynthParams::new(10, 2, 0) };
        assert!(synth_world(&p).is_err());
        assert!(synth_world(&SynthParams::new(3, 4, 0)).is_err());
        assert!(synth_world(&SynthParams::new(0, 1, 0)).is_err());
    }

    #[test]
    fn air_table_has_no_self_loops() {
        let p = SynthParams { airports: 6, ..SynthParams::new(100, 2, 3) };
        let w = synth_world(&p).unwrap();
        assert_eq!(w.airports.len(), 6);
        assert!(!w.air_table.entries.is_empty());
        assert!(w.air_table.entries.iter().all(|e| e.origin != e.destination && e.flow > 0.0));
    }

    #[test]
    fn air_outflow_matches_target_share() {
        let p = SynthParams { airports: 5, air_fraction: 0.02, ..SynthParams::new(120, 3, 9) };
        let w = synth_world(&p).unwrap();
        let net = crate::net::build_network(
            w.nodes,
            w.airports,
            &w.air_table,
            &crate::net::NetworkParams { ground_radius_km: 1.0, commute_fraction: 0.0 },
            Geometry::Planar,
        )
        .unwrap();
        let air: f64 = net.flows.rows().iter().flatten().map(|e| e.air).sum();
        let expected = 0.02 * net.total_population();
        assert!((air - expected).abs() < 1e-9 * expected, "{air} vs {expected}");
    }
}
