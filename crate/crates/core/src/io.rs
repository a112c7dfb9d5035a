//! Delimited-text inputs and outputs.
//!
//! Inputs: nodes (`id,lat,lon,population,agent_id`), airports (`id,lat,lon`)
//! and flights (`origin,destination,flow`). Outputs: network directories
//! (`nodes.csv`, `airports.csv`, `edges.csv`, `network.json`) and run
//! directories (`manifest.toml` plus one table per trace).

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::epi::{CompartmentState, Totals};
use crate::error::{Error, Result};
use crate::harness::{AgentPeriod, AllocationRecord, GainReport, PeriodRecord, RegionGain, ReplicateStats, RunResult};
use crate::net::{AirFlow, AirportRecord, Edge, FlowMatrix, Geometry, Network, NodeRecord};
use crate::policy::BetaPrior;
use crate::scenario::ScenarioConfig;

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    rdr.deserialize().map(|r| r.map_err(|e| Error::csv(path, e))).collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_nodes(path: &Path) -> Result<Vec<NodeRecord>> {
    read_rows(path)
}

pub fn read_airports(path: &Path) -> Result<Vec<AirportRecord>> {
    read_rows(path)
}

pub fn read_air_flows(path: &Path) -> Result<Vec<AirFlow>> {
    read_rows(path)
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRow {
    i: usize,
    j: usize,
    f_ground: f64,
    f_air: f64,
    f_total: f64,
    p: f64,
}

/// Scalars stored next to a network's edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkMeta {
    pub geometry: Geometry,
    pub rho: f64,
    pub nodes: usize,
    pub edges: usize,
    pub total_population: f64,
    pub total_flow: f64,
}

/// Create `dir`, refusing to reuse a non-empty directory unless `overwrite`.
pub fn prepare_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() && !overwrite {
            return Err(Error::OutputExists(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_network(net: &Network, dir: &Path, overwrite: bool) -> Result<()> {
    prepare_dir(dir, overwrite)?;
    write_rows(&dir.join("nodes.csv"), &net.nodes)?;
    write_rows(&dir.join("airports.csv"), &net.airports)?;
    let edges = net.flows.rows().iter().enumerate().flat_map(|(i, row)| {
        row.iter().map(move |e| EdgeRow { i, j: e.to, f_ground: e.ground, f_air: e.air, f_total: e.flow, p: e.rate })
    });
    write_rows(&dir.join("edges.csv"), edges)?;
    let total_flow: f64 = (0..net.flows.len()).map(|i| net.flows.outflow(i)).sum();
    let meta = NetworkMeta {
        geometry: net.geometry,
        rho: net.flows.rho(),
        nodes: net.nodes.len(),
        edges: net.flows.edge_count(),
        total_population: net.total_population(),
        total_flow,
    };
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    write_text(&dir.join("network.json"), &(json + "\n"))
}

pub fn read_network(dir: &Path) -> Result<Network> {
    let meta_path = dir.join("network.json");
    let meta: NetworkMeta = serde_json::from_str(&read_text(&meta_path)?)
        .map_err(|e| Error::parse(&meta_path, e.to_string()))?;
    let nodes = read_nodes(&dir.join("nodes.csv"))?;
    let airports = read_airports(&dir.join("airports.csv"))?;
    let edge_path = dir.join("edges.csv");
    let mut rows: Vec<Vec<Edge>> = vec![Vec::new(); nodes.len()];
    for e in read_rows::<EdgeRow>(&edge_path)? {
        if e.i >= nodes.len() {
            return Err(Error::parse(&edge_path, format!("edge origin {} out of range", e.i)));
        }
        rows[e.i].push(Edge { to: e.j, ground: e.f_ground, air: e.f_air, flow: e.f_total, rate: e.p });
    }
    if nodes.len() != meta.nodes {
        return Err(Error::parse(&meta_path, "node count does not match nodes.csv"));
    }
    let flows = FlowMatrix::from_rows(rows, meta.rho)?;
    let net = Network { geometry: meta.geometry, nodes, airports, flows };
    net.check_partition()?;
    Ok(net)
}

#[derive(Debug, Serialize, Deserialize)]
struct GlobalRow {
    t: usize,
    #[serde(rename = "S")]
    s: f64,
    #[serde(rename = "I")]
    i: f64,
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "D")]
    d: f64,
    mobility_drift: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentRow {
    t: usize,
    agent_id: usize,
    #[serde(rename = "S")]
    s: f64,
    #[serde(rename = "I")]
    i: f64,
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "D")]
    d: f64,
    budget: f64,
    budget_effective: f64,
    spent: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SharingRow {
    t: usize,
    agent_id: usize,
    ratio: f64,
    budget_in: f64,
    budget_out: f64,
    budget_effective: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct StateRow {
    t: usize,
    node_id: usize,
    s: f64,
    i: f64,
    r: f64,
    d: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PriorRow {
    node_id: usize,
    a: u64,
    b: u64,
}

/// Snapshot rows `t,node_id,s,i,r,d`.
pub fn write_state(path: &Path, state: &CompartmentState) -> Result<()> {
    write_rows(
        path,
        (0..state.len()).map(|k| StateRow {
            t: state.t,
            node_id: k,
            s: state.s[k],
            i: state.i[k],
            r: state.r[k],
            d: state.d[k],
        }),
    )
}

pub fn read_state(path: &Path) -> Result<CompartmentState> {
    let rows: Vec<StateRow> = read_rows(path)?;
    let t = rows.first().map_or(0, |r| r.t);
    let mut st = CompartmentState { t, s: vec![], i: vec![], r: vec![], d: vec![] };
    for (k, row) in rows.into_iter().enumerate() {
        if row.node_id != k || row.t != t {
            return Err(Error::parse(path, format!("unexpected row for node {}", row.node_id)));
        }
        st.s.push(row.s);
        st.i.push(row.i);
        st.r.push(row.r);
        st.d.push(row.d);
    }
    Ok(st)
}

pub const MANIFEST: &str = "manifest.toml";

/// Write every trace of a run into `dir`.
pub fn export_run(result: &RunResult, dir: &Path, overwrite: bool) -> Result<()> {
    prepare_dir(dir, overwrite)?;
    let header = format!("# vaxsim {} run manifest\n", env!("CARGO_PKG_VERSION"));
    write_text(&dir.join(MANIFEST), &(header + &result.config.to_toml()))?;
    write_rows(
        &dir.join("global.csv"),
        result.periods.iter().map(|p| GlobalRow {
            t: p.t,
            s: p.global.s,
            i: p.global.i,
            r: p.global.r,
            d: p.global.d,
            mobility_drift: p.mobility_drift,
        }),
    )?;
    let agent_rows = result.periods.iter().flat_map(|p| {
        p.agents.iter().enumerate().map(move |(k, a)| AgentRow {
            t: p.t,
            agent_id: k,
            s: a.totals.s,
            i: a.totals.i,
            r: a.totals.r,
            d: a.totals.d,
            budget: a.budget,
            budget_effective: a.budget_effective,
            spent: a.spent,
        })
    });
    write_rows(&dir.join("agents.csv"), agent_rows)?;
    let sharing_rows = result.periods.iter().flat_map(|p| {
        p.agents.iter().enumerate().map(move |(k, a)| SharingRow {
            t: p.t,
            agent_id: k,
            ratio: a.sharing_ratio,
            budget_in: a.budget,
            budget_out: a.budget_next,
            budget_effective: a.budget_effective,
        })
    });
    write_rows(&dir.join("sharing.csv"), sharing_rows)?;
    write_rows(&dir.join("allocations.csv"), &result.allocations)?;
    write_rows(
        &dir.join("priors.csv"),
        result.priors.iter().enumerate().map(|(k, p)| PriorRow { node_id: k, a: p.a, b: p.b }),
    )?;
    write_state(&dir.join("final_state.csv"), &result.final_state)
}

/// Read a directory written by [`export_run`].
pub fn import_run(dir: &Path) -> Result<RunResult> {
    let manifest = dir.join(MANIFEST);
    let config = ScenarioConfig::from_toml(&read_text(&manifest)?).map_err(|m| Error::parse(&manifest, m))?;

    let agents_path = dir.join("agents.csv");
    let globals: Vec<GlobalRow> = read_rows(&dir.join("global.csv"))?;
    let agent_rows: Vec<AgentRow> = read_rows(&agents_path)?;
    let sharing_rows: Vec<SharingRow> = read_rows(&dir.join("sharing.csv"))?;
    if agent_rows.len() != sharing_rows.len() {
        return Err(Error::parse(&agents_path, "agents.csv and sharing.csv differ in length"));
    }

    let mut periods: Vec<PeriodRecord> = globals
        .into_iter()
        .map(|g| PeriodRecord {
            t: g.t,
            global: Totals { s: g.s, i: g.i, r: g.r, d: g.d },
            mobility_drift: g.mobility_drift,
            agents: Vec::new(),
        })
        .collect();
    for (a, s) in agent_rows.into_iter().zip(sharing_rows) {
        if a.t != s.t || a.agent_id != s.agent_id || a.t == 0 || a.t > periods.len() {
            return Err(Error::parse(&agents_path, format!("row t={} agent={} is misaligned", a.t, a.agent_id)));
        }
        let record = &mut periods[a.t - 1];
        if record.agents.len() != a.agent_id {
            return Err(Error::parse(&agents_path, format!("agents out of order at t={}", a.t)));
        }
        record.agents.push(AgentPeriod {
            totals: Totals { s: a.s, i: a.i, r: a.r, d: a.d },
            budget: a.budget,
            budget_effective: a.budget_effective,
            spent: a.spent,
            sharing_ratio: s.ratio,
            budget_next: s.budget_out,
        });
    }

    let allocations: Vec<AllocationRecord> = read_rows(&dir.join("allocations.csv"))?;
    let priors = read_rows::<PriorRow>(&dir.join("priors.csv"))?
        .into_iter()
        .map(|p| BetaPrior { a: p.a, b: p.b })
        .collect();
    let final_state = read_state(&dir.join("final_state.csv"))?;
    Ok(RunResult { config, periods, allocations, priors, final_state })
}

pub fn write_gains(path: &Path, report: &GainReport) -> Result<()> {
    write_rows(path, &report.regions)
}

pub fn read_gains(path: &Path) -> Result<GainReport> {
    Ok(GainReport { regions: read_rows::<RegionGain>(path)? })
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    t: usize,
    s_mean: f64,
    s_std: f64,
    i_mean: f64,
    i_std: f64,
    r_mean: f64,
    r_std: f64,
    d_mean: f64,
    d_std: f64,
}

#[derive(Debug, Serialize)]
struct GainSummaryRow<'a> {
    region: &'a str,
    cumulative_mean: f64,
    cumulative_std: f64,
    last_mean: f64,
    last_std: f64,
}

#[derive(Debug, Serialize)]
struct InstanceGainRow<'a> {
    seed: u64,
    region: &'a str,
    cumulative_pct: f64,
    last_pct: f64,
}

/// Write replication tables; returns the files written.
pub fn export_replicate(
    stats: &ReplicateStats,
    template: &ScenarioConfig,
    dir: &Path,
    overwrite: bool,
) -> Result<Vec<PathBuf>> {
    prepare_dir(dir, overwrite)?;
    let mut written = Vec::new();
    let manifest = dir.join(MANIFEST);
    let seeds = stats.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(", ");
    let header = format!("# vaxsim {} replication manifest\n# seeds: {seeds}\n", env!("CARGO_PKG_VERSION"));
    write_text(&manifest, &(header + &template.to_toml()))?;
    written.push(manifest);

    let summary = dir.join("summary.csv");
    write_rows(
        &summary,
        stats.periods.iter().map(|p| SummaryRow {
            t: p.t,
            s_mean: p.s.mean,
            s_std: p.s.std,
            i_mean: p.i.mean,
            i_std: p.i.std,
            r_mean: p.r.mean,
            r_std: p.r.std,
            d_mean: p.d.mean,
            d_std: p.d.std,
        }),
    )?;
    written.push(summary);

    if !stats.gains.is_empty() {
        let path = dir.join("gains_summary.csv");
        write_rows(
            &path,
            stats.gains.iter().map(|g| GainSummaryRow {
                region: &g.region,
                cumulative_mean: g.cumulative.mean,
                cumulative_std: g.cumulative.std,
                last_mean: g.last.mean,
                last_std: g.last.std,
            }),
        )?;
        written.push(path);
        let path = dir.join("gains_by_seed.csv");
        write_rows(
            &path,
            stats.instance_gains.iter().flat_map(|(seed, report)| {
                report.regions.iter().map(move |r| InstanceGainRow {
                    seed: *seed,
                    region: &r.region,
                    cumulative_pct: r.cumulative_pct,
                    last_pct: r.last_pct,
                })
            }),
        )?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_node_file_without_airport_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nodes.csv");
        fs::write(&path, "id,lat,lon,population,agent_id\n0,1.5,2.5,1000,0\n1, -3.0 ,4,250.5,1\n").unwrap();
        let nodes = read_nodes(&path).unwrap();
        assert_eq!(nodes.len(), 2);
        assert_eq!(nodes[1].lat, -3.0);
        assert_eq!(nodes[1].airport_id, None);
    }

    #[test]
    fn malformed_rows_report_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flights.csv");
        fs::write(&path, "origin,destination,flow\n0,1,abc\n").unwrap();
        let err = read_air_flows(&path).unwrap_err();
        assert!(err.to_string().contains("flights.csv"));
    }

    #[test]
    fn non_empty_directories_need_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), "").unwrap();
        assert!(matches!(prepare_dir(dir.path(), false), Err(Error::OutputExists(_))));
        assert!(prepare_dir(dir.path(), true).is_ok());
        assert!(prepare_dir(&dir.path().join("fresh"), false).is_ok());
    }
}
