//! Budget-balanced resource sharing among agents.
//!
//! Each agent offers the share of its budget equal to its external infection
//! ratio. The offer of agent `k'` is split among the agents whose infected
//! populations travel into `k'`, weighted by infected flow over the receiving
//! agent's capacity. The sum of budgets is preserved.

use crate::epi::{CompartmentState, EpiParams};
use crate::net::FlowMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct InfectionSplit {
    pub internal: Vec<f64>,
    pub external: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharingPlan {
    pub ratios: Vec<f64>,
    /// `infected_flows[src][dst]`: infected proportion travelling from nodes
    /// of `src` into nodes of `dst`.
    pub infected_flows: Vec<Vec<f64>>,
    pub budgets_out: Vec<f64>,
}

/// Internal infections (local dynamics plus same-agent mobility) and
/// external infections (other-agent mobility) at every node.
pub fn infection_split(
    state: &CompartmentState,
    params: &EpiParams,
    net: &FlowMatrix,
    agent_of: &[usize],
) -> InfectionSplit {
    let rho = net.rho();
    let n = state.len();
    let mut internal = Vec::with_capacity(n);
    let mut external = Vec::with_capacity(n);
    for k in 0..n {
        let (mut same, mut other) = (0.0, 0.0);
        for e in net.neighbors(k) {
            let term = e.rate * state.i[e.to];
            if agent_of[e.to] == agent_of[k] {
                same += term;
            } else {
                other += term;
            }
        }
        let ik = state.i[k];
        internal.push(ik + params.beta[k] * state.s[k] * ik - params.gamma[k] * ik + rho * same);
        external.push(rho * other);
    }
    InfectionSplit { internal, external }
}

/// External infection ratio of each agent; zero when the agent has no
/// infections at all.
pub fn sharing_ratios(split: &InfectionSplit, partition: &[Vec<usize>]) -> Vec<f64> {
    partition
        .iter()
        .map(|nodes| {
            let inside: f64 = nodes.iter().map(|&i| split.internal[i]).sum();
            let outside: f64 = nodes.iter().map(|&i| split.external[i]).sum();
            let total = inside + outside;
            if total > 0.0 {
                outside / total
            } else {
                0.0
            }
        })
        .collect()
}

/// Agent-by-agent infected flows `[src][dst] = ρ Σ_{i∈V_dst} Σ_{j∈N_i∩V_src} p_ij Ī_j`
/// with a zero diagonal.
pub fn infected_flow_matrix(
    state: &CompartmentState,
    net: &FlowMatrix,
    agent_of: &[usize],
    agents: usize,
) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; agents]; agents];
    for i in 0..state.len() {
        let dst = agent_of[i];
        for e in net.neighbors(i) {
            let src = agent_of[e.to];
            if src != dst {
                m[src][dst] += e.rate * state.i[e.to];
            }
        }
    }
    let rho = net.rho();
    for row in &mut m {
        for v in row.iter_mut() {
            *v *= rho;
        }
    }
    m
}

/// Redistribute budgets. An offering agent whose capacity-weighted incoming
/// infected flow is zero keeps its offer.
pub fn redistribute(
    budgets: &[f64],
    ratios: &[f64],
    infected_flows: &[Vec<f64>],
    capacities: &[f64],
) -> Vec<f64> {
    let agents = budgets.len();
    let mut out: Vec<f64> = budgets.iter().zip(ratios).map(|(b, r)| b * (1.0 - r)).collect();
    for giver in 0..agents {
        let offer = budgets[giver] * ratios[giver];
        if offer == 0.0 {
            continue;
        }
        let weight = |k: usize| if k == giver { 0.0 } else { infected_flows[k][giver] / capacities[k] };
        let denom: f64 = (0..agents).map(weight).sum();
        if denom > 0.0 {
            for (k, slot) in out.iter_mut().enumerate() {
                let w = weight(k);
                if w > 0.0 {
                    *slot += offer * w / denom;
                }
            }
        } else {
            out[giver] += offer;
        }
    }
    out
}

/// Full sharing computation from one state snapshot.
pub fn plan(
    state: &CompartmentState,
    params: &EpiParams,
    net: &FlowMatrix,
    partition: &[Vec<usize>],
    agent_of: &[usize],
    budgets: &[f64],
    capacities: &[f64],
) -> SharingPlan {
    let split = infection_split(state, params, net, agent_of);
    let ratios = sharing_ratios(&split, partition);
    let infected_flows = infected_flow_matrix(state, net, agent_of, partition.len());
    let budgets_out = redistribute(budgets, &ratios, &infected_flows, capacities);
    SharingPlan { ratios, infected_flows, budgets_out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Edge;

    fn pair(rho: f64) -> FlowMatrix {
        let e = |to| Edge { to, ground: 1.0, air: 0.0, flow: 1.0, rate: 1.0 };
        FlowMatrix::from_rows(vec![vec![e(1)], vec![e(0)]], rho).unwrap()
    }

    fn state(i: [f64; 2]) -> CompartmentState {
        CompartmentState {
            t: 0,
            s: vec![1.0 - i[0], 1.0 - i[1]],
            i: i.to_vec(),
            r: vec![0.0; 2],
            d: vec![0.0; 2],
        }
    }

    #[test]
    fn single_agent_has_no_external_infections() {
        let sp = infection_split(&state([0.1, 0.2]), &EpiParams::uniform(2, 0.5, 0.1, 0.0), &pair(0.11), &[0, 0]);
        assert_eq!(sp.external, vec![0.0, 0.0]);
    }

    #[test]
    fn no_mobility_means_local_terms_only() {
        let st = state([0.1, 0.2]);
        let sp = infection_split(&st, &EpiParams::uniform(2, 0.5, 0.1, 0.0), &pair(0.0), &[0, 1]);
        assert_eq!(sp.external, vec![0.0, 0.0]);
        assert!((sp.internal[0] - (0.1 + 0.5 * 0.9 * 0.1 - 0.01)).abs() < 1e-15);
    }

    #[test]
    fn external_infection_hand_value() {
        let sp = infection_split(&state([0.1, 0.2]), &EpiParams::uniform(2, 0.5, 0.1, 0.0), &pair(0.11), &[0, 1]);
        assert!((sp.external[0] - 0.022).abs() < 1e-15);
        assert!((sp.external[1] - 0.011).abs() < 1e-15);
    }

    #[test]
    fn ratio_cases() {
        let split = |inside: f64, outside: f64| InfectionSplit { internal: vec![inside], external: vec![outside] };
        assert_eq!(sharing_ratios(&split(0.1, 0.0), &[vec![0]]), vec![0.0]);
        assert!((sharing_ratios(&split(0.08, 0.02), &[vec![0]])[0] - 0.2).abs() < 1e-15);
        assert_eq!(sharing_ratios(&split(0.0, 0.3), &[vec![0]]), vec![1.0]);
        assert_eq!(sharing_ratios(&split(0.0, 0.0), &[vec![0]]), vec![0.0]);
    }

    #[test]
    fn infected_flow_cases() {
        let m = infected_flow_matrix(&state([0.0, 0.0]), &pair(0.11), &[0, 1], 2);
        assert_eq!(m, vec![vec![0.0; 2]; 2]);

        // Single arc 0 -> 1, node 0 in agent 0, node 1 in agent 1.
        let e = Edge { to: 1, ground: 1.0, air: 0.0, flow: 1.0, rate: 1.0 };
        let net = FlowMatrix::from_rows(vec![vec![e], vec![]], 0.11).unwrap();
        let m = infected_flow_matrix(&state([0.0, 0.3]), &net, &[0, 1], 2);
        assert!((m[1][0] - 0.033).abs() < 1e-15);
        assert_eq!(m[0][1], 0.0);
        assert_eq!((m[0][0], m[1][1]), (0.0, 0.0));
    }

    #[test]
    fn redistribution_cases() {
        let flows = vec![vec![0.0, 0.0], vec![0.5, 0.0]];
        assert_eq!(redistribute(&[10.0, 10.0], &[0.0, 0.0], &flows, &[0.1, 0.2]), vec![10.0, 10.0]);
        let b = redistribute(&[10.0, 10.0], &[0.2, 0.0], &flows, &[0.1, 0.2]);
        assert!((b[0] - 8.0).abs() < 1e-12 && (b[1] - 12.0).abs() < 1e-12);
        // No infected flow into agent 1: it keeps its offer.
        let b = redistribute(&[10.0, 10.0], &[0.0, 0.5], &flows, &[0.1, 0.2]);
        assert_eq!(b, vec![10.0, 10.0]);
    }

    #[test]
    fn lower_capacity_receives_more() {
        // Agents 1 and 2 both send infections into agent 0.
        let flows = vec![vec![0.0; 3], vec![0.2, 0.0, 0.0], vec![0.2, 0.0, 0.0]];
        let base = redistribute(&[10.0, 5.0, 5.0], &[0.5, 0.0, 0.0], &flows, &[0.1, 0.1, 0.1]);
        let lowered = redistribute(&[10.0, 5.0, 5.0], &[0.5, 0.0, 0.0], &flows, &[0.1, 0.05, 0.1]);
        assert!(lowered[1] > base[1]);
        assert!((lowered.iter().sum::<f64>() - 20.0).abs() < 1e-12);
    }
}
