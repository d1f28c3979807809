//! Transmission network topology: buses, branches, generators and the
//! directed computational edge list used by message passing.

mod builder;
mod ieee118_data;
mod io;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use builder::{build_nrel118_like, nrel118_base_ratings, BASE_RATING_SCALE};
pub use io::{load_grid, write_grid, BRANCH_HEADER, BUS_HEADER, GEN_HEADER};

/// Number of balancing regions a grid may be partitioned into.
pub const MAX_REGIONS: u8 = 3;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },
    #[error("invalid grid: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(msg: impl Into<String>) -> GridError {
    GridError::Validation(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

impl fmt::Display for BusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BusKind::Slack => "slack",
            BusKind::Pv => "pv",
            BusKind::Pq => "pq",
        })
    }
}

impl FromStr for BusKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "slack" | "ref" => Ok(BusKind::Slack),
            "pv" => Ok(BusKind::Pv),
            "pq" => Ok(BusKind::Pq),
            other => Err(format!("unknown bus kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub region: u8,
    pub base_kv: f64,
    pub kind: BusKind,
    /// Nominal active load (MW) that regional load profiles are scaled from.
    pub load_mw: f64,
    /// Nominal reactive load (MVAr).
    pub load_mvar: f64,
}

/// A line or transformer. Impedances are per unit on the 100 MVA system base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub rating_mva: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technology {
    Thermal,
    Hydro,
    Wind,
    Solar,
    Other,
}

impl Technology {
    pub fn is_renewable(self) -> bool {
        matches!(self, Technology::Wind | Technology::Solar)
    }
}

impl fmt::Display for Technology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Technology::Thermal => "thermal",
            Technology::Hydro => "hydro",
            Technology::Wind => "wind",
            Technology::Solar => "solar",
            Technology::Other => "other",
        })
    }
}

impl FromStr for Technology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "thermal" => Ok(Technology::Thermal),
            "hydro" => Ok(Technology::Hydro),
            "wind" => Ok(Technology::Wind),
            "solar" => Ok(Technology::Solar),
            "other" => Ok(Technology::Other),
            other => Err(format!("unknown technology {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub technology: Technology,
    /// Non-dispatchable units follow a fixed profile instead of the dispatch rule.
    pub dispatchable: bool,
}

/// Validated, immutable network. Branch `i` yields directed edges `2i`
/// (from → to) and `2i + 1` (to → from).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGraph {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<GeneratorSpec>,
    directed_edges: Vec<(usize, usize)>,
    slack: usize,
}

impl GridGraph {
    pub fn new(
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<GeneratorSpec>,
    ) -> Result<Self, GridError> {
        if buses.is_empty() {
            return Err(invalid("grid has no buses"));
        }
        for (i, bus) in buses.iter().enumerate() {
            if bus.id != i {
                return Err(invalid(format!(
                    "bus ids must be contiguous 0..N-1 (found id {} at position {i})",
                    bus.id
                )));
            }
            if bus.region >= MAX_REGIONS {
                return Err(invalid(format!(
                    "bus {i} has region {} (at most {MAX_REGIONS} regions)",
                    bus.region
                )));
            }
            if !(bus.base_kv.is_finite() && bus.base_kv > 0.0) {
                return Err(invalid(format!("bus {i} has non-positive base_kv")));
            }
            if !(bus.load_mw.is_finite() && bus.load_mvar.is_finite()) {
                return Err(invalid(format!("bus {i} has non-finite nominal load")));
            }
        }
        let slacks: Vec<usize> = buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .map(|b| b.id)
            .collect();
        let slack = match slacks.as_slice() {
            [] => return Err(invalid("no slack bus")),
            [s] => *s,
            _ => return Err(invalid(format!("more than one slack bus: {slacks:?}"))),
        };

        let n = buses.len();
        for (i, br) in branches.iter().enumerate() {
            for end in [br.from, br.to] {
                if end >= n {
                    return Err(invalid(format!("branch {i}: unknown bus id {end}")));
                }
            }
            if br.from == br.to {
                return Err(invalid(format!("branch {i}: self loop at bus {}", br.from)));
            }
            if !br.r.is_finite() || !br.x.is_finite() || br.x == 0.0 {
                return Err(invalid(format!("branch {i}: reactance must be non-zero")));
            }
            if !(br.rating_mva.is_finite() && br.rating_mva > 0.0) {
                return Err(invalid(format!("branch {i}: rating_mva must be positive")));
            }
        }
        for (i, g) in generators.iter().enumerate() {
            if g.bus >= n {
                return Err(invalid(format!("generator {i}: unknown bus id {}", g.bus)));
            }
            if !(g.p_min <= g.p_max) {
                return Err(invalid(format!("generator {i}: p_min exceeds p_max")));
            }
            if !(g.q_min <= g.q_max) {
                return Err(invalid(format!("generator {i}: q_min exceeds q_max")));
            }
        }

        let directed_edges = branches
            .iter()
            .flat_map(|b| [(b.from, b.to), (b.to, b.from)])
            .collect();
        let grid = GridGraph {
            buses,
            branches,
            generators,
            directed_edges,
            slack,
        };
        let unreached = grid.unreachable_from_slack();
        if !unreached.is_empty() {
            return Err(invalid(format!(
                "graph is not connected; buses unreachable from slack: {unreached:?}"
            )));
        }
        Ok(grid)
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn generators(&self) -> &[GeneratorSpec] {
        &self.generators
    }

    pub fn directed_edges(&self) -> &[(usize, usize)] {
        &self.directed_edges
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn n_regions(&self) -> usize {
        self.buses.iter().map(|b| b.region as usize + 1).max().unwrap_or(0)
    }

    /// Undirected branch incidences per bus.
    pub fn node_degrees(&self) -> Vec<usize> {
        node_degrees(self.buses.len(), self.branches.iter().map(|b| (b.from, b.to)))
    }

    fn unreachable_from_slack(&self) -> Vec<usize> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for &(s, d) in &self.directed_edges {
            adj[s].push(d);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.slack]);
        seen[self.slack] = true;
        while let Some(v) = queue.pop_front() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        (0..n).filter(|&i| !seen[i]).collect()
    }
}

/// Degree of every node of an undirected edge list.
pub fn node_degrees(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut deg = vec![0; n];
    for (a, b) in edges {
        deg[a] += 1;
        deg[b] += 1;
    }
    deg
}
