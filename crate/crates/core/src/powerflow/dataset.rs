//! Hourly ground-truth snapshots: dispatch the synthetic profiles, solve the
//! AC power flow, and record node/edge features in physical units.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ac::{solve_ac_power_flow, InjectionSet, PowerFlowSolution, SolverOptions};
use super::profiles::{regional_capacity, ProfileSeries};
use super::PowerFlowError;
use crate::grid::{GridGraph, Technology};

/// `[V (p.u.), θ (deg), P (MW), Q (MVAr)]`
pub const NODE_FEATURES: usize = 4;
/// `[P_from, Q_from, P_to, Q_to (MW/MVAr), loading (%)]`
pub const EDGE_FEATURES: usize = 5;

pub const NODE_FEATURE_NAMES: [&str; NODE_FEATURES] = ["v_mag", "v_ang_deg", "p_mw", "q_mvar"];
pub const EDGE_FEATURE_NAMES: [&str; EDGE_FEATURES] =
    ["p_from", "q_from", "p_to", "q_to", "loading_pct"];

/// Node (N×4) and edge (E×5) feature matrices of one timestep, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: usize,
    pub node: Vec<f64>,
    pub edge: Vec<f64>,
}

impl Snapshot {
    pub fn from_solution(t: usize, sol: &PowerFlowSolution) -> Self {
        let n = sol.v_mag.len();
        let mut node = Vec::with_capacity(n * NODE_FEATURES);
        for i in 0..n {
            node.extend([sol.v_mag[i], sol.v_ang[i], sol.p[i], sol.q[i]]);
        }
        let e = sol.p_from.len();
        let mut edge = Vec::with_capacity(e * EDGE_FEATURES);
        for k in 0..e {
            edge.extend([
                sol.p_from[k],
                sol.q_from[k],
                sol.p_to[k],
                sol.q_to[k],
                sol.loading_pct[k],
            ]);
        }
        Snapshot { t, node, edge }
    }

    pub fn n_nodes(&self) -> usize {
        self.node.len() / NODE_FEATURES
    }

    pub fn n_edges(&self) -> usize {
        self.edge.len() / EDGE_FEATURES
    }

    pub fn node_row(&self, v: usize) -> &[f64] {
        &self.node[v * NODE_FEATURES..(v + 1) * NODE_FEATURES]
    }

    pub fn edge_row(&self, e: usize) -> &[f64] {
        &self.edge[e * EDGE_FEATURES..(e + 1) * EDGE_FEATURES]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub solver: SolverOptions,
    /// Voltage setpoint (p.u.) of the slack and every pv bus.
    pub v_setpoint: f64,
    pub max_retries: usize,
    /// Injection scale applied per retry of a failed timestep.
    pub retry_scale: f64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            solver: SolverOptions::default(),
            v_setpoint: 1.02,
            max_retries: 3,
            retry_scale: 0.95,
        }
    }
}

/// Per-timestep solver diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverLog {
    pub iterations: Vec<usize>,
    pub final_mismatch: Vec<f64>,
    /// Timesteps that needed scaled-down injections, with the retry count.
    pub retried: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub snapshots: Vec<Snapshot>,
    pub log: SolverLog,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
}

/// Bus injections for hour `t`: loads follow their region's profile,
/// renewables their share of the regional wind/solar output (capped at
/// `p_max`), and dispatchable units split the remaining regional demand in
/// proportion to `p_max`, clamped to `[p_min, p_max]`. The slack absorbs
/// whatever imbalance and losses remain.
pub fn dispatch(grid: &GridGraph, profiles: &ProfileSeries, t: usize, v_setpoint: f64) -> InjectionSet {
    let n = grid.n_buses();
    let (base, wind_cap, solar_cap) = regional_capacity(grid);
    let regions = base.len();
    let region_of = |bus: usize| grid.buses()[bus].region as usize;
    let scale = |r: usize| if base[r] > 0.0 { profiles.load[r][t] / base[r] } else { 0.0 };

    let mut inj = InjectionSet {
        p_inj: vec![0.0; n],
        q_inj: vec![0.0; n],
        v_setpoint: vec![v_setpoint; n],
    };
    let mut regional_need = vec![0.0; regions];
    for b in grid.buses() {
        let s = scale(b.region as usize);
        inj.p_inj[b.id] -= b.load_mw * s;
        inj.q_inj[b.id] -= b.load_mvar * s;
        regional_need[b.region as usize] += b.load_mw * s;
    }

    let mut dispatchable_cap = vec![0.0; regions];
    for g in grid.generators() {
        let r = region_of(g.bus);
        let output = match g.technology {
            Technology::Wind if wind_cap[r] > 0.0 => profiles.wind[r][t] * g.p_max / wind_cap[r],
            Technology::Solar if solar_cap[r] > 0.0 => profiles.solar[r][t] * g.p_max / solar_cap[r],
            _ => {
                if g.dispatchable {
                    dispatchable_cap[r] += g.p_max;
                }
                continue;
            }
        };
        let output = output.min(g.p_max);
        inj.p_inj[g.bus] += output;
        regional_need[r] -= output;
    }
    for g in grid.generators().iter().filter(|g| g.dispatchable) {
        let r = region_of(g.bus);
        if g.technology.is_renewable() || regional_need[r] <= 0.0 || dispatchable_cap[r] <= 0.0 {
            continue;
        }
        let share = regional_need[r] * g.p_max / dispatchable_cap[r];
        inj.p_inj[g.bus] += share.clamp(g.p_min, g.p_max);
    }
    inj
}

/// Solves one AC power flow per profile hour. A failed hour is re-solved
/// with all injections scaled by `retry_scale` (compounding) up to
/// `max_retries` times; hours that still fail are reported together.
pub fn generate_dataset(
    grid: &GridGraph,
    profiles: &ProfileSeries,
    opts: &DatasetOptions,
) -> Result<Dataset, PowerFlowError> {
    if profiles.n_regions() < grid.n_regions() {
        return Err(PowerFlowError::Dimension(format!(
            "profiles cover {} regions, grid has {}",
            profiles.n_regions(),
            grid.n_regions()
        )));
    }
    let horizon = profiles.horizon();
    let mut snapshots = Vec::with_capacity(horizon);
    let mut log = SolverLog::default();
    let mut failed = Vec::new();
    for t in 0..horizon {
        let base = dispatch(grid, profiles, t, opts.v_setpoint);
        let mut solved = None;
        for attempt in 0..=opts.max_retries {
            let factor = opts.retry_scale.powi(attempt as i32);
            let mut inj = base.clone();
            inj.p_inj.iter_mut().chain(inj.q_inj.iter_mut()).for_each(|x| *x *= factor);
            if let Ok(sol) = solve_ac_power_flow(grid, &inj, &opts.solver) {
                if attempt > 0 {
                    log.retried.push((t, attempt));
                }
                solved = Some(sol);
                break;
            }
        }
        match solved {
            Some(sol) => {
                log.iterations.push(sol.iterations);
                log.final_mismatch.push(sol.final_mismatch());
                snapshots.push(Snapshot::from_solution(t, &sol));
            }
            None => failed.push(t),
        }
    }
    if !failed.is_empty() {
        return Err(PowerFlowError::DatasetGeneration { timesteps: failed });
    }
    Ok(Dataset {
        n_nodes: grid.n_buses(),
        n_edges: grid.n_branches(),
        snapshots,
        log,
    })
}

pub const NODES_HEADER: &str = "t,bus,v_mag,v_ang_deg,p_mw,q_mvar";
pub const EDGES_HEADER: &str = "t,branch,p_from,q_from,p_to,q_to,loading_pct";
pub const PROFILES_HEADER: &str = "t,region,load_mw,wind_mw,solar_mw";

/// Writes `nodes.csv` and `edges.csv` into `dir`.
pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> std::io::Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut nodes = String::from(NODES_HEADER);
    nodes.push('\n');
    let mut edges = String::from(EDGES_HEADER);
    edges.push('\n');
    for s in &ds.snapshots {
        for v in 0..s.n_nodes() {
            let r = s.node_row(v);
            let _ = writeln!(nodes, "{},{v},{},{},{},{}", s.t, r[0], r[1], r[2], r[3]);
        }
        for e in 0..s.n_edges() {
            let r = s.edge_row(e);
            let _ = writeln!(edges, "{},{e},{},{},{},{},{}", s.t, r[0], r[1], r[2], r[3], r[4]);
        }
    }
    fs::write(dir.join("nodes.csv"), nodes)?;
    fs::write(dir.join("edges.csv"), edges)?;
    Ok(())
}

pub fn write_profiles(p: &ProfileSeries, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut out = String::from(PROFILES_HEADER);
    out.push('\n');
    for t in 0..p.horizon() {
        for r in 0..p.n_regions() {
            let _ = writeln!(out, "{t},{r},{},{},{}", p.load[r][t], p.wind[r][t], p.solar[r][t]);
        }
    }
    fs::write(path, out)
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetIoError {
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_table(
    path: &Path,
    header: &str,
    width: usize,
) -> Result<Vec<(usize, usize, Vec<f64>)>, DatasetIoError> {
    let text = fs::read_to_string(path)?;
    let file = path.display().to_string();
    let err = |line: usize, message: String| DatasetIoError::Parse {
        file: file.clone(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        other => {
            return Err(err(1, format!("expected header {header:?}, found {:?}", other.map(|l| l.1))))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width + 2 {
            return Err(err(i + 1, format!("expected {} fields, found {}", width + 2, fields.len())));
        }
        let t = fields[0].trim().parse().map_err(|_| err(i + 1, "bad t".into()))?;
        let idx = fields[1].trim().parse().map_err(|_| err(i + 1, "bad index".into()))?;
        let vals = fields[2..]
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| err(i + 1, e.to_string()))?;
        rows.push((t, idx, vals));
    }
    Ok(rows)
}

/// Reads a bundle written by [`write_dataset`]. Rows must be grouped by `t`
/// in ascending order with contiguous indices.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset, DatasetIoError> {
    let dir = dir.as_ref();
    let nodes = parse_table(&dir.join("nodes.csv"), NODES_HEADER, NODE_FEATURES)?;
    let edges = parse_table(&dir.join("edges.csv"), EDGES_HEADER, EDGE_FEATURES)?;
    let shape_err = |message: String| DatasetIoError::Parse {
        file: dir.display().to_string(),
        line: 0,
        message,
    };

    let mut snapshots: Vec<Snapshot> = Vec::new();
    for (t, idx, vals) in nodes {
        if snapshots.last().is_none_or(|s| s.t != t) {
            snapshots.push(Snapshot {
                t,
                node: Vec::new(),
                edge: Vec::new(),
            });
        }
        let s = snapshots.last_mut().unwrap();
        if idx != s.n_nodes() {
            return Err(shape_err(format!("t={t}: bus rows out of order at {idx}")));
        }
        s.node.extend(vals);
    }
    let mut cursor = 0;
    for (t, idx, vals) in edges {
        while cursor < snapshots.len() && snapshots[cursor].t != t {
            cursor += 1;
        }
        let Some(s) = snapshots.get_mut(cursor) else {
            return Err(shape_err(format!("edge rows reference unknown t={t}")));
        };
        if idx != s.n_edges() {
            return Err(shape_err(format!("t={t}: branch rows out of order at {idx}")));
        }
        s.edge.extend(vals);
    }
    let n_nodes = snapshots.first().map_or(0, Snapshot::n_nodes);
    let n_edges = snapshots.first().map_or(0, Snapshot::n_edges);
    for w in snapshots.windows(2) {
        if w[1].t <= w[0].t {
            return Err(shape_err(format!("timesteps not ascending at t={}", w[1].t)));
        }
    }
    if let Some(s) = snapshots.iter().find(|s| s.n_nodes() != n_nodes || s.n_edges() != n_edges) {
        return Err(shape_err(format!("t={} has a different shape", s.t)));
    }
    Ok(Dataset {
        n_nodes,
        n_edges,
        snapshots,
        log: SolverLog::default(),
    })
}

/// Reads a series written by [`write_profiles`]: hour-major, regions
/// `0..R` contiguous within each hour.
pub fn read_profiles(path: impl AsRef<Path>) -> Result<ProfileSeries, DatasetIoError> {
    let path = path.as_ref();
    let rows = parse_table(path, PROFILES_HEADER, 3)?;
    let n_regions = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let mut p = ProfileSeries {
        load: vec![Vec::new(); n_regions],
        wind: vec![Vec::new(); n_regions],
        solar: vec![Vec::new(); n_regions],
    };
    for (k, (t, r, vals)) in rows.into_iter().enumerate() {
        if t != k / n_regions || r != k % n_regions {
            return Err(DatasetIoError::Parse {
                file: path.display().to_string(),
                line: k + 2,
                message: format!("expected hour {} region {}, found {t},{r}", k / n_regions, k % n_regions),
            });
        }
        p.load[r].push(vals[0]);
        p.wind[r].push(vals[1]);
        p.solar[r].push(vals[2]);
    }
    Ok(p)
}

/// Renewable share of total generation and system load per hour; used for
/// stratified error breakdowns.
pub fn system_conditions(profiles: &ProfileSeries) -> (Vec<f64>, Vec<f64>) {
    let load = (0..profiles.horizon()).map(|t| profiles.total_load(t)).collect();
    let share = (0..profiles.horizon())
        .map(|t| {
            let l = profiles.total_load(t);
            if l > 0.0 {
                (profiles.total_renewable(t) / l).min(1.0)
            } else {
                0.0
            }
        })
        .collect();
    (load, share)
}
