//! Independent oracles and random instance builders shared by the test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vaxsim::epi::{CompartmentState, EpiParams};
use vaxsim::net::{Edge, FlowMatrix};
use vaxsim::policy::AllocationProblem;
use vaxsim::scenario::ScenarioConfig;

pub const TOY: &str = include_str!("../../../../configs/toy.toml");
pub const SHARING: &str = include_str!("../../../../configs/sharing.toml");

pub fn toy_config() -> ScenarioConfig {
    ScenarioConfig::from_toml(TOY).expect("toy config parses")
}

pub fn sharing_config() -> ScenarioConfig {
    ScenarioConfig::from_toml(SHARING).expect("sharing config parses")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random sparse network: each ordered pair gets an arc with probability
/// `density`; rates are row-normalized flows.
pub fn random_flows<R: Rng>(rng: &mut R, n: usize, density: f64, rho: f64) -> FlowMatrix {
    let rows = (0..n)
        .map(|i| {
            let mut row = Vec::new();
            for j in 0..n {
                if j != i && rng.random::<f64>() < density {
                    let flow = rng.random_range(0.1..10.0);
                    row.push(Edge { to: j, ground: flow, air: 0.0, flow, rate: 0.0 });
                }
            }
            let total: f64 = row.iter().map(|e| e.flow).sum();
            for e in &mut row {
                e.rate = e.flow / total;
            }
            row
        })
        .collect();
    FlowMatrix::from_rows(rows, rho).expect("valid random network")
}

/// Random proportions on the simplex, biased towards mostly susceptible.
pub fn random_state<R: Rng>(rng: &mut R, n: usize) -> CompartmentState {
    let mut st = CompartmentState { t: 0, s: vec![], i: vec![], r: vec![], d: vec![] };
    for _ in 0..n {
        let w: [f64; 4] = [rng.random_range(0.5..4.0), rng.random(), rng.random(), rng.random::<f64>() * 0.1];
        let total: f64 = w.iter().sum();
        st.s.push(w[0] / total);
        st.i.push(w[1] / total);
        st.r.push(w[2] / total);
        st.d.push(1.0 - (w[0] + w[1] + w[2]) / total);
    }
    st
}

pub fn random_params<R: Rng>(rng: &mut R, n: usize) -> EpiParams {
    let mut p = EpiParams::uniform(n, 0.0, 0.0, 0.0);
    for k in 0..n {
        p.beta[k] = rng.random_range(0.0..1.0);
        p.gamma[k] = rng.random_range(0.05..0.5);
        p.lambda[k] = rng.random_range(0.0..0.05);
    }
    p
}

/// Direct evaluation of the agent objective: the sum over `agent` nodes of
/// the next-period susceptible share, with `theta[i] * x[i]` immunized at
/// agent nodes and no vaccination elsewhere. `theta` and `x` are global.
pub fn direct_objective(
    state: &CompartmentState,
    params: &EpiParams,
    net: &FlowMatrix,
    agent: &[usize],
    theta: &[f64],
    x: &[f64],
) -> f64 {
    let mut owned = vec![false; net.len()];
    for &i in agent {
        owned[i] = true;
    }
    let kept = |j: usize| if owned[j] { 1.0 - theta[j] * x[j] } else { 1.0 };
    let rho = net.rho();
    agent
        .iter()
        .map(|&i| {
            let s = &state.s;
            let local = (s[i] - params.beta[i] * s[i] * state.i[i]) * kept(i);
            let mobility: f64 = net
                .neighbors(i)
                .iter()
                .map(|e| e.rate * (s[e.to] * kept(e.to) - s[i] * kept(i)))
                .sum();
            local + rho * mobility
        })
        .sum()
}

/// Exact optimum of `problem` restricted to `x_i ∈ {0, step, 2·step, …} ∩ [0, x̄_i]`,
/// by enumerating both halves of the node set and merging on cost.
pub fn grid_optimum(problem: &AllocationProblem, step: f64) -> f64 {
    let n = problem.losses.len();
    let levels: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let top = (problem.bounds[k] / step + 1e-9).floor() as usize;
            (0..=top).map(|q| q as f64 * step).collect()
        })
        .collect();
    let half = n / 2;
    let enumerate = |idx: &[usize]| -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, 0.0)];
        for &k in idx {
            let mut next = Vec::with_capacity(out.len() * levels[k].len());
            for &(c, v) in &out {
                for &q in &levels[k] {
                    next.push((c + q * problem.costs[k], v + q * problem.losses[k]));
                }
            }
            out = next;
        }
        out
    };
    let left_idx: Vec<usize> = (0..half).collect();
    let right_idx: Vec<usize> = (half..n).collect();
    let mut left = enumerate(&left_idx);
    let mut right = enumerate(&right_idx);
    left.sort_by(|a, b| a.0.total_cmp(&b.0));
    right.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best_prefix = Vec::with_capacity(right.len());
    let mut running = f64::INFINITY;
    for &(_, v) in &right {
        running = running.min(v);
        best_prefix.push(running);
    }
    // Tolerate rounding in cost sums so exactly-affordable grid points count.
    let budget = problem.budget * (1.0 + 1e-12) + 1e-12;
    let mut best = f64::INFINITY;
    let mut hi = right.len();
    for &(c, v) in &left {
        if c > budget {
            break;
        }
        while hi > 0 && right[hi - 1].0 + c > budget {
            hi -= 1;
        }
        if hi > 0 {
            best = best.min(v + best_prefix[hi - 1]);
        }
    }
    best
}

/// Random knapsack instance with up to `max_nodes` nodes. Bounds are 1 or a
/// multiple of 0.01 so that only the greedy's fractional node is off-grid.
pub fn random_problem<R: Rng>(rng: &mut R, max_nodes: usize) -> AllocationProblem {
    let n = rng.random_range(1..=max_nodes);
    let losses = (0..n)
        .map(|_| if rng.random::<f64>() < 0.15 { rng.random_range(0.0..1.0) } else { -rng.random_range(0.0..1.0) })
        .collect();
    let costs: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
    let bounds = (0..n)
        .map(|_| if rng.random::<f64>() < 0.5 { 1.0 } else { rng.random_range(0..=100) as f64 / 100.0 })
        .collect();
    let total: f64 = costs.iter().sum();
    let budget = match rng.random_range(0..10) {
        0 => 0.0,
        1 => total * 2.0,
        _ => rng.random_range(0.0..total),
    };
    AllocationProblem { nodes: (0..n).collect(), losses, costs, budget, bounds }
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
