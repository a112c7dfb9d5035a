//! Allocation policies: sampled loss coefficients, the per-agent fractional
//! knapsack, Beta–Bernoulli learning of efficiency rates, rolling upper
//! bounds, and the population-based baseline.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::epi::{CompartmentState, EpiParams};
use crate::net::FlowMatrix;

/// Allocation policy run by every agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Thompson sampling: efficiencies sampled from the Beta posteriors.
    Ts,
    /// Greedy: posterior means.
    Gy,
    /// Moving average of observed efficiencies.
    Ma,
    /// Population-based uniform coverage.
    Pb,
    /// No vaccination.
    None,
    /// Knapsack on the true mean efficiencies. Not learnable in practice;
    /// used as a reference.
    Oracle,
}

impl Policy {
    pub const ALL: [Policy; 6] =
        [Policy::Ts, Policy::Gy, Policy::Ma, Policy::Pb, Policy::None, Policy::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Ts => "ts",
            Policy::Gy => "gy",
            Policy::Ma => "ma",
            Policy::Pb => "pb",
            Policy::None => "none",
            Policy::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown policy '{s}' (expected ts, gy, ma, pb, none or oracle)"))
    }
}

/// Beta prior over a node's mean efficiency rate, in success/failure counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub a: u64,
    pub b: u64,
}

impl Default for BetaPrior {
    fn default() -> Self {
        Self { a: 1, b: 1 }
    }
}

impl BetaPrior {
    pub fn mean(&self) -> f64 {
        self.a as f64 / (self.a + self.b) as f64
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Beta::new(self.a as f64, self.b as f64)
            .expect("Beta counts are at least 1")
            .sample(rng)
    }

    /// Bernoulli trial with success probability `theta_obs`; a success
    /// increments `a`, a failure `b`.
    pub fn observe<R: Rng + ?Sized>(&mut self, theta_obs: f64, rng: &mut R) {
        if rng.random::<f64>() < theta_obs {
            self.a += 1;
        } else {
            self.b += 1;
        }
    }
}

/// Independent posterior draws, one per prior.
pub fn ts_sample<R: Rng + ?Sized>(priors: &[BetaPrior], rng: &mut R) -> Vec<f64> {
    priors.iter().map(|p| p.sample(rng)).collect()
}

pub fn gy_estimate(priors: &[BetaPrior]) -> Vec<f64> {
    priors.iter().map(BetaPrior::mean).collect()
}

/// Efficiency assumed for a node that has never been observed.
pub const UNOBSERVED_EFFICIENCY: f64 = 0.5;

/// Cumulative mean of each node's observed efficiencies.
pub fn ma_estimate(obs_history: &[Vec<f64>]) -> Vec<f64> {
    obs_history.iter().map(|h| moving_average(h)).collect()
}

pub(crate) fn moving_average(history: &[f64]) -> f64 {
    if history.is_empty() {
        UNOBSERVED_EFFICIENCY
    } else {
        history.iter().sum::<f64>() / history.len() as f64
    }
}

/// Bernoulli update of every prior whose node received vaccines.
pub fn observe_and_update<R: Rng + ?Sized>(
    priors: &mut [BetaPrior],
    x: &[f64],
    theta_obs: &[f64],
    rng: &mut R,
) {
    for ((prior, &xi), &theta) in priors.iter_mut().zip(x).zip(theta_obs) {
        if xi > 0.0 {
            prior.observe(theta, rng);
        }
    }
}

/// Coefficient of `x_i` in agent `k`'s one-period-ahead susceptible objective,
/// for each node of `agent_nodes`, with other agents assumed not to vaccinate:
///
/// `l_i = θ̂_i S̄_i [ −(1 − β_i Ī_i) + ρ Σ_{j∈N_i} p_ij − ρ Σ_{j∈V_k, i∈N_j} p_ji ]`
///
/// `theta_hat` is indexed by global node id.
pub fn loss_coefficients(
    state: &CompartmentState,
    params: &EpiParams,
    net: &FlowMatrix,
    agent_nodes: &[usize],
    theta_hat: &[f64],
) -> Vec<f64> {
    let mut owned = vec![false; net.len()];
    for &i in agent_nodes {
        owned[i] = true;
    }
    let rho = net.rho();
    agent_nodes
        .iter()
        .map(|&i| {
            let out_rate: f64 = net.neighbors(i).iter().map(|e| e.rate).sum();
            let in_rate: f64 = net
                .incoming(i)
                .iter()
                .filter(|e| owned[e.from])
                .map(|e| e.rate)
                .sum();
            let local = -(1.0 - params.beta[i] * state.i[i]);
            theta_hat[i] * state.s[i] * (local + rho * out_rate - rho * in_rate)
        })
        .collect()
}

/// One agent's approximated allocation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    /// Global ids of the agent's nodes; used for tie-breaking.
    pub nodes: Vec<usize>,
    pub losses: Vec<f64>,
    pub costs: Vec<f64>,
    pub budget: f64,
    pub bounds: Vec<f64>,
}

impl AllocationProblem {
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.losses.iter().zip(x).map(|(l, x)| l * x).sum()
    }
}

/// Allocation fractions aligned with [`AllocationProblem::nodes`].
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub x: Vec<f64>,
}

impl Allocation {
    pub fn spend(&self, costs: &[f64]) -> f64 {
        self.x.iter().zip(costs).map(|(x, c)| x * c).sum()
    }
}

/// Greedy solution of the continuous knapsack: nodes are funded up to their
/// bound by increasing loss-to-cost ratio (ties by node id) while the loss is
/// negative and budget remains; the last funded node takes the remainder.
pub fn solve_knapsack(problem: &AllocationProblem) -> Allocation {
    let n = problem.losses.len();
    let mut order: Vec<usize> = (0..n).collect();
    let ratio = |k: usize| problem.losses[k] / problem.costs[k];
    order.sort_by(|&a, &b| ratio(a).total_cmp(&ratio(b)).then(problem.nodes[a].cmp(&problem.nodes[b])));

    let mut x = vec![0.0; n];
    let mut remaining = problem.budget.max(0.0);
    for k in order {
        if problem.losses[k] >= 0.0 || remaining <= 0.0 {
            break;
        }
        let bound = problem.bounds[k];
        if bound <= 0.0 {
            continue;
        }
        let full = bound * problem.costs[k];
        if full <= remaining {
            x[k] = bound;
            remaining -= full;
        } else {
            x[k] = remaining / problem.costs[k];
            break;
        }
    }
    Allocation { x }
}

/// Population-based allocation: the same coverage `B / ΣC` everywhere, capped
/// by bounds, with leftover budget spilled onto nodes by decreasing population.
pub fn pb_allocate(populations: &[f64], costs: &[f64], budget: f64, bounds: &[f64]) -> Allocation {
    let total_cost: f64 = costs.iter().sum();
    if total_cost <= 0.0 || budget <= 0.0 {
        return Allocation { x: vec![0.0; costs.len()] };
    }
    let coverage = budget / total_cost;
    let mut x: Vec<f64> = bounds.iter().map(|&b| coverage.min(b)).collect();
    let mut remaining = budget - x.iter().zip(costs).map(|(x, c)| x * c).sum::<f64>();

    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.sort_by(|&a, &b| populations[b].total_cmp(&populations[a]).then(a.cmp(&b)));
    for k in order {
        if remaining <= 0.0 {
            break;
        }
        let room = bounds[k] - x[k];
        if room <= 0.0 {
            continue;
        }
        let extra = room.min(remaining / costs[k]);
        x[k] += extra;
        remaining -= extra * costs[k];
    }
    Allocation { x }
}

/// Upper bound for period `t` from decisions in `[t − m, t − 1]`:
/// `max(0, 1 − Σ x(t'))`. `history` holds `(period, x)` pairs.
pub fn update_bounds(history: &[(usize, f64)], window: usize, t: usize) -> f64 {
    let start = t.saturating_sub(window);
    let used: f64 = history
        .iter()
        .filter(|&&(tp, _)| tp >= start && tp < t)
        .map(|&(_, x)| x)
        .sum();
    (1.0 - used).max(0.0)
}

/// Renewal window `m_i = ⌈P_i / Σ_{j∈N_i} f_ji⌉`; nodes without inflow get
/// the full horizon.
pub fn window_width(populations: &[f64], net: &FlowMatrix, horizon: usize) -> Vec<usize> {
    populations
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let inflow = net.neighborhood_inflow(i);
            if inflow > 0.0 {
                ((p / inflow).ceil() as usize).max(1)
            } else {
                horizon.max(1)
            }
        })
        .collect()
}

/// Learning and allocation memory of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub priors: Vec<BetaPrior>,
    pub obs_history: Vec<Vec<f64>>,
    pub alloc_history: Vec<Vec<(usize, f64)>>,
    pub window: Vec<usize>,
    pub upper_bounds: Vec<f64>,
}

impl PolicyState {
    pub fn new(window: Vec<usize>) -> Self {
        let n = window.len();
        Self {
            priors: vec![BetaPrior::default(); n],
            obs_history: vec![Vec::new(); n],
            alloc_history: vec![Vec::new(); n],
            window,
            upper_bounds: vec![1.0; n],
        }
    }

    /// Refresh the upper bounds of `nodes` for period `t`.
    pub fn refresh_bounds(&mut self, nodes: &[usize], t: usize) {
        for &i in nodes {
            self.upper_bounds[i] = update_bounds(&self.alloc_history[i], self.window[i], t);
        }
    }

    /// Record a positive allocation; zero allocations leave no trace.
    pub fn record_allocation(&mut self, node: usize, t: usize, x: f64) {
        if x > 0.0 {
            self.alloc_history[node].push((t, x));
        }
    }

    pub fn record_observation(&mut self, node: usize, theta_obs: f64) {
        self.obs_history[node].push(theta_obs);
    }
}
