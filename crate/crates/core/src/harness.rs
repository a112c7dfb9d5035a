//! Simulation orchestration: the per-period allocation loop, paired gain
//! metrics against the population-based baseline, and seeded replication.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epi::{self, CompartmentState, Totals};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::policy::{self, AllocationProblem, BetaPrior, Policy, PolicyState};
use crate::scenario::{Instance, ScenarioConfig};
use crate::sharing;
use crate::streams::Purpose;

/// Per-agent quantities for one period.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentPeriod {
    /// Compartment totals after the period's epidemic step.
    pub totals: Totals,
    /// Configured budget `B_k`.
    pub budget: f64,
    /// Budget used by the solve this period.
    pub budget_effective: f64,
    pub spent: f64,
    /// External infection ratio computed from the post-step state.
    pub sharing_ratio: f64,
    /// Budget made available for the next period.
    pub budget_next: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodRecord {
    /// 1-based period; the totals describe the state at the end of it.
    pub t: usize,
    pub global: Totals,
    /// Persons created by the mobility operator this period (0 on balanced networks).
    pub mobility_drift: f64,
    pub agents: Vec<AgentPeriod>,
}

/// One positive allocation decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationRecord {
    pub t: usize,
    pub agent_id: usize,
    pub node_id: usize,
    pub x: f64,
    /// Efficiency estimate fed to the knapsack; absent for the population baseline.
    pub theta_hat: Option<f64>,
    pub theta_obs: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config: ScenarioConfig,
    pub periods: Vec<PeriodRecord>,
    pub allocations: Vec<AllocationRecord>,
    pub priors: Vec<BetaPrior>,
    pub final_state: CompartmentState,
}

impl RunResult {
    pub fn susceptible_series(&self, agent: Option<usize>) -> Vec<f64> {
        self.periods
            .iter()
            .map(|p| match agent {
                Some(k) => p.agents[k].totals.s,
                None => p.global.s,
            })
            .collect()
    }

    pub fn final_totals(&self) -> Totals {
        self.periods.last().map(|p| p.global).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Solve the agents' problems on the rayon pool.
    pub parallel_agents: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { parallel_agents: true }
    }
}

struct AgentDecision {
    spent: f64,
    nodes: Vec<(usize, f64, Option<f64>)>,
}

fn decide(
    policy: Policy,
    agent_nodes: &[usize],
    state: &CompartmentState,
    pstate: &PolicyState,
    net: &Network,
    instance: &Instance,
    budget: f64,
    period: usize,
) -> AgentDecision {
    let bounds: Vec<f64> = agent_nodes.iter().map(|&i| pstate.upper_bounds[i]).collect();
    let costs: Vec<f64> = agent_nodes.iter().map(|&i| instance.costs[i]).collect();

    let (x, estimates) = if policy == Policy::Pb {
        let pops: Vec<f64> = agent_nodes.iter().map(|&i| net.nodes[i].population).collect();
        (policy::pb_allocate(&pops, &costs, budget, &bounds).x, None)
    } else {
        let mut theta_hat = vec![0.0; net.nodes.len()];
        for &i in agent_nodes {
            theta_hat[i] = match policy {
                Policy::Ts => pstate.priors[i].sample(&mut instance.streams.rng(Purpose::PriorSample, period, i)),
                Policy::Gy => pstate.priors[i].mean(),
                Policy::Ma => policy::moving_average(&pstate.obs_history[i]),
                Policy::Oracle => instance.mean_rates[i],
                Policy::Pb | Policy::None => unreachable!("handled by the caller"),
            };
        }
        let losses = policy::loss_coefficients(state, &instance.params, &net.flows, agent_nodes, &theta_hat);
        let problem = AllocationProblem { nodes: agent_nodes.to_vec(), losses, costs: costs.clone(), budget, bounds };
        let estimates: Vec<f64> = agent_nodes.iter().map(|&i| theta_hat[i]).collect();
        (policy::solve_knapsack(&problem).x, Some(estimates))
    };

    let spent = x.iter().zip(&costs).map(|(x, c)| x * c).sum();
    let nodes = agent_nodes
        .iter()
        .enumerate()
        .filter(|&(k, _)| x[k] > 0.0)
        .map(|(k, &i)| (i, x[k], estimates.as_ref().map(|e| e[k])))
        .collect();
    AgentDecision { spent, nodes }
}

/// Run one instance over the horizon.
///
/// Within a period: budgets, agent solves (bounds cover decisions strictly
/// before the period), the epidemic step with realized efficiencies, the
/// sharing quantities for the next period, then the Bernoulli prior updates.
pub fn run(config: &ScenarioConfig, net: &Network, instance: &Instance, options: RunOptions) -> Result<RunResult> {
    config.validate()?;
    let n = net.nodes.len();
    let partition = net.partition();
    let agents = partition.len();
    if instance.mean_rates.len() != n || instance.budgets.len() != agents {
        return Err(Error::Invalid("instance does not match the network".into()));
    }
    let agent_of: Vec<usize> = net.nodes.iter().map(|nd| nd.agent_id).collect();
    let populations = net.populations();
    let policy = config.policy;

    let mut state = instance.initial.clone();
    let mut pstate = PolicyState::new(policy::window_width(&populations, &net.flows, config.horizon));
    let mut budget_now = instance.budgets.clone();
    let mut periods = Vec::with_capacity(config.horizon);
    let mut allocations = Vec::new();

    for period in 0..config.horizon {
        let t = period + 1;
        let mut x = vec![0.0; n];
        let mut theta_obs = vec![0.0; n];
        let mut spent = vec![0.0; agents];

        if policy != Policy::None {
            for nodes in &partition {
                pstate.refresh_bounds(nodes, period);
            }
            let solve = |k: usize| {
                decide(policy, &partition[k], &state, &pstate, net, instance, budget_now[k], period)
            };
            let decisions: Vec<AgentDecision> = if options.parallel_agents {
                (0..agents).into_par_iter().map(solve).collect()
            } else {
                (0..agents).map(solve).collect()
            };
            for (k, d) in decisions.into_iter().enumerate() {
                spent[k] = d.spent;
                for (i, xi, theta_hat) in d.nodes {
                    x[i] = xi;
                    theta_obs[i] = instance.realized_rate(period, i);
                    pstate.record_allocation(i, period, xi);
                    allocations.push(AllocationRecord {
                        t,
                        agent_id: k,
                        node_id: i,
                        x: xi,
                        theta_hat,
                        theta_obs: theta_obs[i],
                        bound: pstate.upper_bounds[i],
                    });
                }
            }
        }

        let drift = epi::mobility_imbalance(&state, &net.flows, &populations);
        state = if policy == Policy::None {
            epi::step(&state, &instance.params, &net.flows)?
        } else {
            epi::step_vaccinated(&state, &instance.params, &net.flows, &x, &theta_obs)?
        };

        let (ratios, budget_next) = if config.sharing {
            let plan = sharing::plan(
                &state,
                &instance.params,
                &net.flows,
                &partition,
                &agent_of,
                &instance.budgets,
                &instance.capacities,
            );
            (plan.ratios, plan.budgets_out)
        } else {
            (vec![0.0; agents], instance.budgets.clone())
        };

        for i in 0..n {
            if x[i] > 0.0 {
                let mut rng = instance.streams.rng(Purpose::Bernoulli, period, i);
                pstate.priors[i].observe(theta_obs[i], &mut rng);
                pstate.record_observation(i, theta_obs[i]);
            }
        }

        let agent_rows = (0..agents)
            .map(|k| AgentPeriod {
                totals: state.totals(&populations, Some(&partition[k])),
                budget: instance.budgets[k],
                budget_effective: budget_now[k],
                spent: spent[k],
                sharing_ratio: ratios[k],
                budget_next: budget_next[k],
            })
            .collect();
        periods.push(PeriodRecord {
            t,
            global: state.totals(&populations, None),
            mobility_drift: drift,
            agents: agent_rows,
        });
        budget_now = budget_next;
    }

    Ok(RunResult { config: config.clone(), periods, allocations, priors: pstate.priors, final_state: state })
}

/// Relative reduction of susceptible mass versus a baseline, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGain {
    /// `world` or `agent-<id>`.
    pub region: String,
    pub cumulative_pct: f64,
    pub last_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainReport {
    pub regions: Vec<RegionGain>,
}

impl GainReport {
    pub fn world(&self) -> &RegionGain {
        &self.regions[0]
    }
}

fn gain(policy: &[f64], baseline: &[f64]) -> (f64, f64) {
    let cum = 1.0 - policy.iter().sum::<f64>() / baseline.iter().sum::<f64>();
    let last = 1.0 - policy[policy.len() - 1] / baseline[baseline.len() - 1];
    (100.0 * cum, 100.0 * last)
}

/// Cumulative and last-period susceptible gains of `result` over `baseline`,
/// for the world and for every agent. Both runs must share the scenario.
pub fn gains(result: &RunResult, baseline: &RunResult) -> Result<GainReport> {
    if result.config.pairing_key() != baseline.config.pairing_key() {
        return Err(Error::ScenarioMismatch("configurations differ beyond the policy".into()));
    }
    if result.periods.len() != baseline.periods.len() || result.periods.is_empty() {
        return Err(Error::ScenarioMismatch("runs cover different horizons".into()));
    }
    let agents = result.periods[0].agents.len();
    if baseline.periods[0].agents.len() != agents {
        return Err(Error::ScenarioMismatch("runs have different agent counts".into()));
    }
    let mut regions = Vec::with_capacity(agents + 1);
    let (c, l) = gain(&result.susceptible_series(None), &baseline.susceptible_series(None));
    regions.push(RegionGain { region: "world".into(), cumulative_pct: c, last_pct: l });
    for k in 0..agents {
        let (c, l) = gain(&result.susceptible_series(Some(k)), &baseline.susceptible_series(Some(k)));
        regions.push(RegionGain { region: format!("agent-{k}"), cumulative_pct: c, last_pct: l });
    }
    Ok(GainReport { regions })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodStats {
    pub t: usize,
    pub s: MeanStd,
    pub i: MeanStd,
    pub r: MeanStd,
    pub d: MeanStd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionGainStats {
    pub region: String,
    pub cumulative: MeanStd,
    pub last: MeanStd,
}

/// Aggregate over independently seeded instances.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateStats {
    pub seeds: Vec<u64>,
    pub periods: Vec<PeriodStats>,
    /// Gains against the population baseline; empty when the policy is the baseline.
    pub gains: Vec<RegionGainStats>,
    /// Per-seed world gains `(seed, cumulative %, last %)`.
    pub instance_gains: Vec<(u64, GainReport)>,
}

/// Run `template` once per seed, each paired with a population-based baseline
/// on the same instance, in parallel across seeds.
pub fn replicate(template: &ScenarioConfig, net: &Network, seeds: &[u64]) -> Result<ReplicateStats> {
    if seeds.is_empty() {
        return Err(Error::Invalid("at least one instance is required".into()));
    }
    let paired = !matches!(template.policy, Policy::Pb);
    let runs: Vec<(RunResult, Option<GainReport>)> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = ScenarioConfig { seed, ..template.clone() };
            let inst = Instance::generate(&cfg, net)?;
            let opts = RunOptions { parallel_agents: false };
            let res = run(&cfg, net, &inst, opts)?;
            let report = if paired {
                let base_cfg = ScenarioConfig { policy: Policy::Pb, ..cfg.clone() };
                let base = run(&base_cfg, net, &inst, opts)?;
                Some(gains(&res, &base)?)
            } else {
                None
            };
            Ok((res, report))
        })
        .collect::<Result<_>>()?;

    let horizon = template.horizon;
    let periods = (0..horizon)
        .map(|p| {
            let col = |f: fn(&Totals) -> f64| -> MeanStd {
                MeanStd::of(&runs.iter().map(|(r, _)| f(&r.periods[p].global)).collect::<Vec<_>>())
            };
            PeriodStats { t: p + 1, s: col(|t| t.s), i: col(|t| t.i), r: col(|t| t.r), d: col(|t| t.d) }
        })
        .collect();

    let instance_gains: Vec<(u64, GainReport)> = seeds
        .iter()
        .zip(&runs)
        .filter_map(|(&s, (_, g))| g.clone().map(|g| (s, g)))
        .collect();
    let gains = match instance_gains.first() {
        None => Vec::new(),
        Some((_, first)) => (0..first.regions.len())
            .map(|r| {
                let cum: Vec<f64> = instance_gains.iter().map(|(_, g)| g.regions[r].cumulative_pct).collect();
                let last: Vec<f64> = instance_gains.iter().map(|(_, g)| g.regions[r].last_pct).collect();
                RegionGainStats {
                    region: first.regions[r].region.clone(),
                    cumulative: MeanStd::of(&cum),
                    last: MeanStd::of(&last),
                }
            })
            .collect(),
    };

    Ok(ReplicateStats { seeds: seeds.to_vec(), periods, gains, instance_gains })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::SynthParams;
    use crate::scenario::{load_world, WorldSpec};

    fn setup(policy: Policy, horizon: usize) -> (ScenarioConfig, Network, Instance) {
        let mut cfg = ScenarioConfig::new(WorldSpec::Synthetic(SynthParams::new(40, 2, 3)));
        cfg.policy = policy;
        cfg.horizon = horizon;
        cfg.seed = 11;
        let net = load_world(&cfg.world, &cfg.network).unwrap();
        let inst = Instance::generate(&cfg, &net).unwrap();
        (cfg, net, inst)
    }

    #[test]
    fn no_policy_matches_plain_iteration() {
        let (cfg, net, inst) = setup(Policy::None, 12);
        let res = run(&cfg, &net, &inst, RunOptions::default()).unwrap();
        let mut st = inst.initial.clone();
        for _ in 0..12 {
            st = epi::step(&st, &inst.params, &net.flows).unwrap();
        }
        assert_eq!(res.final_state, st);
        assert!(res.allocations.is_empty());
        assert_eq!(res.periods.len(), 12);
    }

    #[test]
    fn horizon_one() {
        let (cfg, net, inst) = setup(Policy::Ts, 1);
        let res = run(&cfg, &net, &inst, RunOptions::default()).unwrap();
        assert_eq!(res.periods.len(), 1);
        assert_eq!(res.final_state.t, 1);
        assert!(res.allocations.iter().all(|a| a.t == 1));
        assert!(!res.allocations.is_empty());
    }

    #[test]
    fn budgets_are_respected() {
        for policy in [Policy::Ts, Policy::Gy, Policy::Ma, Policy::Pb, Policy::Oracle] {
            let (cfg, net, inst) = setup(policy, 20);
            let res = run(&cfg, &net, &inst, RunOptions::default()).unwrap();
            for p in &res.periods {
                for a in &p.agents {
                    assert!(a.spent <= a.budget_effective * (1.0 + 1e-9), "{policy}");
                }
            }
            assert!(res.allocations.iter().all(|a| a.x <= a.bound + 1e-12));
        }
    }

    #[test]
    fn self_gain_is_zero() {
        let (cfg, net, inst) = setup(Policy::Ts, 10);
        let res = run(&cfg, &net, &inst, RunOptions::default()).unwrap();
        let g = gains(&res, &res).unwrap();
        assert!(g.regions.iter().all(|r| r.cumulative_pct == 0.0 && r.last_pct == 0.0));
    }

    #[test]
    fn gain_arithmetic() {
        assert!((gain(&[99.0, 198.0], &[100.0, 200.0]).0 - 1.0).abs() < 1e-12);
        assert!((gain(&[99.0, 198.0], &[100.0, 200.0]).1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_runs_are_rejected() {
        let (cfg, net, inst) = setup(Policy::Ts, 5);
        let a = run(&cfg, &net, &inst, RunOptions::default()).unwrap();
        let other = ScenarioConfig { seed: 99, ..cfg };
        let b = run(&other, &net, &Instance::generate(&other, &net).unwrap(), RunOptions::default()).unwrap();
        assert!(matches!(gains(&a, &b), Err(Error::ScenarioMismatch(_))));
    }

    #[test]
    fn single_replicate_equals_single_run() {
        let (cfg, net, inst) = setup(Policy::Gy, 8);
        let stats = replicate(&cfg, &net, &[cfg.seed]).unwrap();
        let res = run(&cfg, &net, &inst, RunOptions::default()).unwrap();
        for (p, r) in stats.periods.iter().zip(&res.periods) {
            assert_eq!(p.s.mean, r.global.s);
            assert_eq!(p.s.std, 0.0);
        }
        let base = run(&ScenarioConfig { policy: Policy::Pb, ..cfg }, &net, &inst, RunOptions::default()).unwrap();
        assert_eq!(stats.instance_gains[0].1, gains(&res, &base).unwrap());
        assert_eq!(stats.gains[0].cumulative.mean, stats.instance_gains[0].1.world().cumulative_pct);
    }
}
