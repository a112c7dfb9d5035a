//! Scenario configuration and instance generation: capacities, efficiency
//! rates, budgets, costs and initial epidemic states.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::epi::{CompartmentState, EpiParams, StabilityGuard};
use crate::error::{Error, Result};
use crate::io;
use crate::net::{build_network, synth_world, AirFlowTable, Geometry, Network, NetworkParams, SynthParams};
use crate::policy::Policy;
use crate::streams::{Purpose, Streams};

/// Lowest and highest mean efficiency an agent can be mapped to.
pub const EFFICIENCY_RANGE: (f64, f64) = (0.5, 0.9);

/// Where the world comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WorldSpec {
    Synthetic(SynthParams),
    /// Delimited node / airport / flight files. Paths are relative to the
    /// configuration file.
    Files {
        nodes: PathBuf,
        #[serde(default)]
        airports: Option<PathBuf>,
        #[serde(default)]
        flights: Option<PathBuf>,
        #[serde(default)]
        geometry: Geometry,
        /// Flight totals are undirected and get split evenly.
        #[serde(default)]
        undirected_flights: bool,
    },
    /// A directory written by `build-net`.
    Network { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpidemicSpec {
    #[serde(default = "EpidemicSpec::default_beta")]
    pub beta: f64,
    #[serde(default = "EpidemicSpec::default_gamma")]
    pub gamma: f64,
    #[serde(default = "EpidemicSpec::default_fatality")]
    pub fatality: f64,
    #[serde(default = "EpidemicSpec::default_infected")]
    pub initial_infected: f64,
    #[serde(default)]
    pub initial_recovered: f64,
    /// Clamp any out-of-range proportion instead of aborting.
    #[serde(default)]
    pub clamp_unstable: bool,
}

impl EpidemicSpec {
    fn default_beta() -> f64 {
        0.6
    }
    fn default_gamma() -> f64 {
        0.4
    }
    fn default_fatality() -> f64 {
        0.01
    }
    fn default_infected() -> f64 {
        0.001
    }
}

impl Default for EpidemicSpec {
    fn default() -> Self {
        Self {
            beta: Self::default_beta(),
            gamma: Self::default_gamma(),
            fatality: Self::default_fatality(),
            initial_infected: Self::default_infected(),
            initial_recovered: 0.0,
            clamp_unstable: false,
        }
    }
}

/// Per-period vaccination capacities of the agents (fraction of population).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CapacitySpec {
    Fixed { values: Vec<f64> },
    /// Log-normal draws clipped to `[min, max]`.
    LogNormal { median: f64, sigma: f64, min: f64, max: f64, seed: u64 },
}

impl Default for CapacitySpec {
    fn default() -> Self {
        CapacitySpec::LogNormal { median: 0.03, sigma: 0.5, min: 0.005, max: 0.08, seed: 0 }
    }
}

/// Per-agent overrides of capacity and epidemic parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentOverride {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fatality: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_infected: Option<f64>,
}

/// Complete description of a run. Every field has a default except `world`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "ScenarioConfig::default_horizon")]
    pub horizon: usize,
    #[serde(default = "ScenarioConfig::default_policy")]
    pub policy: Policy,
    #[serde(default)]
    pub sharing: bool,
    #[serde(default = "ScenarioConfig::default_multiplier")]
    pub budget_multiplier: f64,
    #[serde(default = "ScenarioConfig::default_epsilon")]
    pub epsilon: f64,
    pub world: WorldSpec,
    #[serde(default)]
    pub network: NetworkParams,
    #[serde(default)]
    pub epidemic: EpidemicSpec,
    #[serde(default)]
    pub capacities: CapacitySpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentOverride>,
}

impl ScenarioConfig {
    fn default_horizon() -> usize {
        104
    }
    fn default_policy() -> Policy {
        Policy::Ts
    }
    fn default_multiplier() -> f64 {
        1.0
    }
    fn default_epsilon() -> f64 {
        0.2
    }

    /// Defaults around a given world.
    pub fn new(world: WorldSpec) -> Self {
        Self {
            seed: 0,
            horizon: Self::default_horizon(),
            policy: Self::default_policy(),
            sharing: false,
            budget_multiplier: Self::default_multiplier(),
            epsilon: Self::default_epsilon(),
            world,
            network: NetworkParams::default(),
            epidemic: EpidemicSpec::default(),
            capacities: CapacitySpec::default(),
            agents: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|m| Error::parse(path, m))?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialize")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.world {
            WorldSpec::Synthetic(_) => {}
            WorldSpec::Files { nodes, airports, flights, .. } => {
                fix(nodes);
                airports.iter_mut().for_each(fix);
                flights.iter_mut().for_each(fix);
            }
            WorldSpec::Network { dir } => fix(dir),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Invalid("horizon must be at least 1".into()));
        }
        if !(self.budget_multiplier.is_finite() && self.budget_multiplier > 0.0) {
            return Err(Error::Invalid("budget multiplier must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.epsilon) {
            return Err(Error::Invalid(format!("epsilon must lie in [0, 0.5], got {}", self.epsilon)));
        }
        let e = &self.epidemic;
        if !(0.0..=1.0).contains(&(e.initial_infected + e.initial_recovered))
            || e.initial_infected < 0.0
            || e.initial_recovered < 0.0
        {
            return Err(Error::Invalid("initial infected and recovered shares must be in [0,1]".into()));
        }
        if let CapacitySpec::LogNormal { median, sigma, min, max, .. } = self.capacities {
            if !(median > 0.0 && sigma >= 0.0 && min > 0.0 && min <= max && max <= 1.0) {
                return Err(Error::Invalid("invalid log-normal capacity parameters".into()));
            }
        }
        Ok(())
    }

    /// The configuration with run-specific choices (policy) normalized, used to
    /// check that two runs are paired.
    pub fn pairing_key(&self) -> ScenarioConfig {
        ScenarioConfig { policy: Policy::Pb, ..self.clone() }
    }
}

/// Build the world described by `spec`.
pub fn load_world(spec: &WorldSpec, params: &NetworkParams) -> Result<Network> {
    match spec {
        WorldSpec::Synthetic(p) => {
            let w = synth_world(p)?;
            build_network(w.nodes, w.airports, &w.air_table, params, Geometry::Planar)
        }
        WorldSpec::Files { nodes, airports, flights, geometry, undirected_flights } => {
            let nodes = io::read_nodes(nodes)?;
            let airports = match airports {
                Some(p) => io::read_airports(p)?,
                None => Vec::new(),
            };
            let table = match flights {
                Some(p) => {
                    let entries = io::read_air_flows(p)?;
                    if *undirected_flights {
                        AirFlowTable::from_undirected(&entries)
                    } else {
                        AirFlowTable { entries }
                    }
                }
                None => AirFlowTable::default(),
            };
            build_network(nodes, airports, &table, params, *geometry)
        }
        WorldSpec::Network { dir } => io::read_network(dir),
    }
}

/// Min–max map of capacities onto the efficiency range; all agents get the
/// midpoint when capacities do not vary.
pub fn capacity_to_mean_efficiency(capacities: &[f64]) -> Vec<f64> {
    let (lo, hi) = EFFICIENCY_RANGE;
    let min = capacities.iter().copied().fold(f64::INFINITY, f64::min);
    let max = capacities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    capacities
        .iter()
        .map(|&c| {
            if max > min {
                lo + (hi - lo) * (c - min) / (max - min)
            } else {
                (lo + hi) / 2.0
            }
        })
        .collect()
}

/// Uniform draw on `[center − ε, center + ε]`, clipped to `[0, 1]`.
pub fn draw_clipped<R: Rng + ?Sized>(center: f64, epsilon: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    (center + epsilon * (2.0 * u - 1.0)).clamp(0.0, 1.0)
}

/// Mean efficiency of every node around its agent's base rate.
pub fn draw_mean_rates<R: Rng + ?Sized>(node_base: &[f64], epsilon: f64, rng: &mut R) -> Vec<f64> {
    node_base.iter().map(|&g| draw_clipped(g, epsilon, rng)).collect()
}

/// Efficiency realized at a vaccinated node in one period.
pub fn draw_realized_rate<R: Rng + ?Sized>(theta: f64, epsilon: f64, rng: &mut R) -> f64 {
    draw_clipped(theta, epsilon, rng)
}

/// Per-period budget `multiplier · Γ_k · Σ_{i∈V_k} P_i` of every agent.
pub fn budgets(capacities: &[f64], partition: &[Vec<usize>], populations: &[f64], multiplier: f64) -> Vec<f64> {
    capacities
        .iter()
        .zip(partition)
        .map(|(gamma, nodes)| multiplier * gamma * nodes.iter().map(|&i| populations[i]).sum::<f64>())
        .collect()
}

/// Everything random or derived about one run besides the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub capacities: Vec<f64>,
    pub base_rates: Vec<f64>,
    pub mean_rates: Vec<f64>,
    pub epsilon: f64,
    pub budgets: Vec<f64>,
    pub costs: Vec<f64>,
    pub params: EpiParams,
    pub initial: CompartmentState,
    pub streams: Streams,
}

impl Instance {
    pub fn generate(config: &ScenarioConfig, net: &Network) -> Result<Self> {
        config.validate()?;
        let agents = net.agent_count();
        let partition = net.partition();
        let n = net.nodes.len();
        for o in &config.agents {
            if o.id >= agents {
                return Err(Error::Invalid(format!("override for unknown agent {}", o.id)));
            }
        }
        let overrides = |k: usize| config.agents.iter().filter(move |o| o.id == k);

        let mut capacities = match &config.capacities {
            CapacitySpec::Fixed { values } => {
                if values.len() != agents {
                    return Err(Error::Invalid(format!(
                        "{} capacities given for {agents} agents",
                        values.len()
                    )));
                }
                values.clone()
            }
            &CapacitySpec::LogNormal { median, sigma, min, max, seed } => {
                let dist = LogNormal::new(median.ln(), sigma)
                    .map_err(|e| Error::Invalid(format!("capacity distribution: {e}")))?;
                let mut rng = Streams::new(seed).rng(Purpose::Capacity, 0, 0);
                (0..agents).map(|_| dist.sample(&mut rng).clamp(min, max)).collect()
            }
        };
        for (k, cap) in capacities.iter_mut().enumerate() {
            if let Some(c) = overrides(k).find_map(|o| o.capacity) {
                *cap = c;
            }
            if !(*cap > 0.0 && *cap <= 1.0) {
                return Err(Error::Invalid(format!("agent {k} capacity {cap} outside (0, 1]")));
            }
        }

        let e = &config.epidemic;
        let mut params = EpiParams::uniform(n, e.beta, e.gamma, e.fatality);
        params.guard = StabilityGuard { clamp_all: e.clamp_unstable, ..StabilityGuard::default() };
        let mut infected = vec![e.initial_infected; n];
        for (k, nodes) in partition.iter().enumerate() {
            for o in overrides(k) {
                for &i in nodes {
                    if let Some(b) = o.beta {
                        params.beta[i] = b;
                    }
                    if let Some(g) = o.gamma {
                        params.gamma[i] = g;
                    }
                    if let Some(l) = o.fatality {
                        params.lambda[i] = l;
                    }
                    if let Some(inf) = o.initial_infected {
                        infected[i] = inf;
                    }
                }
            }
        }
        params.validate(n)?;
        let initial = CompartmentState::initial(&infected, &vec![e.initial_recovered; n])?;

        let base_rates = capacity_to_mean_efficiency(&capacities);
        let node_base: Vec<f64> = net.nodes.iter().map(|nd| base_rates[nd.agent_id]).collect();
        let streams = Streams::new(config.seed);
        let mean_rates = draw_mean_rates(&node_base, config.epsilon, &mut streams.rng(Purpose::MeanRate, 0, 0));

        let populations = net.populations();
        let budgets = budgets(&capacities, &partition, &populations, config.budget_multiplier);

        Ok(Self {
            capacities,
            base_rates,
            mean_rates,
            epsilon: config.epsilon,
            budgets,
            costs: populations,
            params,
            initial,
            streams,
        })
    }

    /// Efficiency realized at `node` in period `t`; independent of which
    /// other nodes are vaccinated.
    pub fn realized_rate(&self, t: usize, node: usize) -> f64 {
        draw_realized_rate(
            self.mean_rates[node],
            self.epsilon,
            &mut self.streams.rng(Purpose::RealizedRate, t, node),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn efficiency_mapping() {
        let g = capacity_to_mean_efficiency(&[0.01, 0.03, 0.05]);
        assert!((g[0] - 0.5).abs() < 1e-15 && (g[1] - 0.7).abs() < 1e-12 && (g[2] - 0.9).abs() < 1e-15);
        assert_eq!(capacity_to_mean_efficiency(&[0.02]), vec![0.7]);
        assert_eq!(capacity_to_mean_efficiency(&[0.02, 0.02]), vec![0.7, 0.7]);
    }

    #[test]
    fn zero_epsilon_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(draw_mean_rates(&[0.63, 0.5], 0.0, &mut rng), vec![0.63, 0.5]);
        assert_eq!(draw_realized_rate(0.42, 0.0, &mut rng), 0.42);
    }

    #[test]
    fn clipped_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let v = draw_clipped(0.9, 0.3, &mut rng);
            assert!((0.6..=1.0).contains(&v));
        }
    }

    #[test]
    fn budget_values() {
        let b = budgets(&[0.02], &[vec![0, 1]], &[400_000.0, 600_000.0], 1.0);
        assert!((b[0] - 20_000.0).abs() < 1e-9);
        let b2 = budgets(&[0.02], &[vec![0, 1]], &[400_000.0, 600_000.0], 2.0);
        assert_eq!(b2[0], 2.0 * b[0]);
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = ScenarioConfig::from_toml(
            r#"
            [world]
            kind = "synthetic"
            nodes = 20
            agents = 2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.horizon, 104);
        assert_eq!(cfg.policy, Policy::Ts);
        assert_eq!(cfg.network.commute_fraction, 0.11);
        let again = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);

        assert!(ScenarioConfig::from_toml("horizon = 0\n[world]\nkind='synthetic'\nnodes=2\nagents=1").is_err());
        assert!(ScenarioConfig::from_toml("bogus = 1\n[world]\nkind='synthetic'\nnodes=2\nagents=1").is_err());
    }

    #[test]
    fn instance_is_deterministic() {
        let mut cfg = ScenarioConfig::new(WorldSpec::Synthetic(SynthParams::new(50, 3, 1)));
        cfg.seed = 5;
        let net = load_world(&cfg.world, &cfg.network).unwrap();
        let a = Instance::generate(&cfg, &net).unwrap();
        let b = Instance::generate(&cfg, &net).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.realized_rate(3, 7), b.realized_rate(3, 7));
        assert!(a.mean_rates.iter().all(|t| (0.0..=1.0).contains(t)));
        cfg.seed = 6;
        assert_ne!(Instance::generate(&cfg, &net).unwrap().mean_rates, a.mean_rates);
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = ScenarioConfig::new(WorldSpec::Synthetic(SynthParams::new(20, 2, 1)));
        cfg.capacities = CapacitySpec::Fixed { values: vec![0.01, 0.02] };
        cfg.agents.push(AgentOverride {
            id: 1,
            capacity: Some(0.04),
            beta: Some(0.9),
            gamma: None,
            fatality: None,
            initial_infected: Some(0.01),
        });
        let net = load_world(&cfg.world, &cfg.network).unwrap();
        let inst = Instance::generate(&cfg, &net).unwrap();
        assert_eq!(inst.capacities, vec![0.01, 0.04]);
        let last = net.nodes.len() - 1;
        assert_eq!(inst.params.beta[last], 0.9);
        assert_eq!(inst.initial.i[last], 0.01);
        assert_eq!(inst.params.beta[0], 0.6);
    }
}
