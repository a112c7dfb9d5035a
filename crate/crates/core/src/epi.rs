//! Discrete-time metapopulation SIRD dynamics, with and without vaccination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::FlowMatrix;

/// What to do when an updated proportion leaves `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityGuard {
    /// Overshoot tolerated and clamped silently.
    pub band: f64,
    /// Clamp any overshoot instead of failing.
    pub clamp_all: bool,
}

impl Default for StabilityGuard {
    fn default() -> Self {
        Self { band: 1e-9, clamp_all: false }
    }
}

impl StabilityGuard {
    fn apply(&self, value: f64, period: usize, node: usize, compartment: &'static str) -> Result<f64> {
        let in_band = value >= -self.band && value <= 1.0 + self.band;
        if !(in_band || (self.clamp_all && !value.is_nan())) {
            return Err(Error::Unstable { period, node, compartment, value });
        }
        Ok(value.clamp(0.0, 1.0))
    }
}

/// Per-node transmission, recovery and case fatality rates.
#[derive(Debug, Clone, PartialEq)]
pub struct EpiParams {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
    pub guard: StabilityGuard,
}

impl EpiParams {
    pub fn uniform(n: usize, beta: f64, gamma: f64, lambda: f64) -> Self {
        Self {
            beta: vec![beta; n],
            gamma: vec![gamma; n],
            lambda: vec![lambda; n],
            guard: StabilityGuard::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.beta.len() != n || self.gamma.len() != n || self.lambda.len() != n {
            return Err(Error::Invalid(format!("epidemic parameters must cover all {n} nodes")));
        }
        for i in 0..n {
            let (b, g, l) = (self.beta[i], self.gamma[i], self.lambda[i]);
            if !(b.is_finite() && b >= 0.0) || !(0.0..=1.0).contains(&g) || !(0.0..=1.0).contains(&l)
            {
                return Err(Error::Invalid(format!(
                    "node {i}: beta={b}, gamma={g}, lambda={l} out of range"
                )));
            }
        }
        Ok(())
    }
}

/// Compartment proportions of every node at period `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompartmentState {
    pub t: usize,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
    pub d: Vec<f64>,
}

/// Population-weighted compartment sums, in persons.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub s: f64,
    pub i: f64,
    pub r: f64,
    pub d: f64,
}

impl CompartmentState {
    /// Disease-free state with `infected` and `recovered` seeded per node.
    pub fn initial(infected: &[f64], recovered: &[f64]) -> Result<Self> {
        if infected.len() != recovered.len() {
            return Err(Error::Invalid("initial condition vectors differ in length".into()));
        }
        let n = infected.len();
        let s = infected.iter().zip(recovered).map(|(i, r)| 1.0 - i - r).collect();
        let state = Self {
            t: 0,
            s,
            i: infected.to_vec(),
            r: recovered.to_vec(),
            d: vec![0.0; n],
        };
        state.validate()?;
        Ok(state)
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.s.len();
        if self.i.len() != n || self.r.len() != n || self.d.len() != n {
            return Err(Error::Invalid("compartment vectors differ in length".into()));
        }
        for k in 0..n {
            let parts = [self.s[k], self.i[k], self.r[k], self.d[k]];
            if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Invalid(format!("node {k} has a proportion outside [0,1]")));
            }
            let sum: f64 = parts.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Invalid(format!("node {k} compartments sum to {sum}")));
            }
        }
        Ok(())
    }

    /// Persons in each compartment over `nodes` (all nodes when `None`).
    pub fn totals(&self, populations: &[f64], nodes: Option<&[usize]>) -> Totals {
        let mut t = Totals::default();
        let mut add = |k: usize| {
            let p = populations[k];
            t.s += p * self.s[k];
            t.i += p * self.i[k];
            t.r += p * self.r[k];
            t.d += p * self.d[k];
        };
        match nodes {
            Some(list) => list.iter().copied().for_each(&mut add),
            None => (0..self.len()).for_each(&mut add),
        }
        t
    }
}

/// Advance one period without vaccination.
pub fn step(state: &CompartmentState, params: &EpiParams, net: &FlowMatrix) -> Result<CompartmentState> {
    let none = vec![0.0; state.len()];
    advance(state, params, net, &none)
}

/// Advance one period with allocation `x` and realized efficiencies `theta_obs`.
/// `theta_obs` is only read where `x > 0`.
pub fn step_vaccinated(
    state: &CompartmentState,
    params: &EpiParams,
    net: &FlowMatrix,
    x: &[f64],
    theta_obs: &[f64],
) -> Result<CompartmentState> {
    let n = state.len();
    if x.len() != n || theta_obs.len() != n {
        return Err(Error::Invalid("allocation vectors must cover every node".into()));
    }
    let mut vaccinated = vec![0.0; n];
    for k in 0..n {
        if x[k] > 0.0 {
            if !(x[k] <= 1.0 && (0.0..=1.0).contains(&theta_obs[k])) {
                return Err(Error::Invalid(format!(
                    "node {k}: allocation {} or efficiency {} out of range",
                    x[k], theta_obs[k]
                )));
            }
            vaccinated[k] = theta_obs[k] * x[k];
        } else if x[k] < 0.0 || x[k].is_nan() {
            return Err(Error::Invalid(format!("node {k}: negative allocation {}", x[k])));
        }
    }
    advance(state, params, net, &vaccinated)
}

/// Shared update. `v[k] = θ_k(t) x_k(t)` is the immunized share of node
/// `k`'s susceptibles; with `v ≡ 0` every term reduces exactly to the
/// unvaccinated system.
fn advance(
    state: &CompartmentState,
    params: &EpiParams,
    net: &FlowMatrix,
    v: &[f64],
) -> Result<CompartmentState> {
    let n = state.len();
    if net.len() != n || params.len() != n {
        return Err(Error::Invalid("state, parameters and network sizes differ".into()));
    }
    let rho = net.rho();
    let (s, i, r) = (&state.s, &state.i, &state.r);
    let period = state.t;
    let guard = params.guard;

    let mut next = CompartmentState {
        t: state.t + 1,
        s: Vec::with_capacity(n),
        i: Vec::with_capacity(n),
        r: Vec::with_capacity(n),
        d: Vec::with_capacity(n),
    };
    for k in 0..n {
        let (beta, gamma, lambda) = (params.beta[k], params.gamma[k], params.lambda[k]);
        let kept = 1.0 - v[k];
        let infection = beta * s[k] * i[k];

        let (mut mob_s, mut mob_i, mut mob_r) = (0.0, 0.0, 0.0);
        for e in net.neighbors(k) {
            let j = e.to;
            mob_s += e.rate * (s[j] * (1.0 - v[j]) - s[k] * kept);
            mob_i += e.rate * (i[j] - i[k]);
            mob_r += e.rate * (r[j] + s[j] * v[j] - r[k] - s[k] * v[k]);
        }

        let s_next = (s[k] - infection) * kept + rho * mob_s;
        let i_next = i[k] + infection * kept - gamma * i[k] + rho * mob_i;
        let r_next = r[k] + s[k] * v[k] + (1.0 - lambda) * gamma * i[k] + rho * mob_r;

        let s_next = guard.apply(s_next, period, k, "S")?;
        let i_next = guard.apply(i_next, period, k, "I")?;
        let r_next = guard.apply(r_next, period, k, "R")?;
        let d_next = guard.apply(1.0 - s_next - i_next - r_next, period, k, "D")?;
        next.s.push(s_next);
        next.i.push(i_next);
        next.r.push(r_next);
        next.d.push(d_next);
    }
    Ok(next)
}

/// Persons created (positive) or removed by one application of the mobility
/// operator to the living compartments. Zero when `P_i p_ij = P_j p_ji` holds
/// for every pair; asymmetric networks drift.
pub fn mobility_imbalance(state: &CompartmentState, net: &FlowMatrix, populations: &[f64]) -> f64 {
    let living: Vec<f64> = (0..state.len()).map(|k| state.s[k] + state.i[k] + state.r[k]).collect();
    let rho = net.rho();
    (0..state.len())
        .map(|k| {
            let m: f64 = net.neighbors(k).iter().map(|e| e.rate * (living[e.to] - living[k])).sum();
            populations[k] * rho * m
        })
        .sum()
}
