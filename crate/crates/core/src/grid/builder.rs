use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ieee118_data::{BRANCHES, BUSES, UNITS};
use super::{Branch, Bus, BusKind, GeneratorSpec, GridGraph, Technology};

/// Capacity uplift applied to the embedded base line ratings.
pub const BASE_RATING_SCALE: f64 = 3.5;

const WIND_UNITS_PER_REGION: usize = 3;
const SOLAR_UNITS_PER_REGION: usize = 3;

/// Pre-scaling thermal ratings (MVA) of the embedded branch table.
pub fn nrel118_base_ratings() -> Vec<f64> {
    BRANCHES.iter().map(|b| b.4).collect()
}

/// Three-area partition of the 118-bus system (0-based bus index).
fn region_of(bus: usize) -> u8 {
    match bus + 1 {
        1..=23 | 25..=32 | 113..=115 | 117 => 0,
        33..=67 => 1,
        _ => 2,
    }
}

/// Deterministic NREL-118-shaped grid: IEEE 118-bus topology and impedances
/// (179 branches once parallel circuits are merged), ratings scaled by
/// [`BASE_RATING_SCALE`], three regions, and a seeded generator mix with wind
/// and solar units attached to conventional generator buses.
pub fn build_nrel118_like(seed: u64) -> GridGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut generators: Vec<GeneratorSpec> = UNITS
        .iter()
        .map(|&(bus, p_max, q_min, q_max)| {
            let technology = if p_max >= 300.0 {
                Technology::Thermal
            } else {
                match rng.random_range(0..20) {
                    0..=11 => Technology::Thermal,
                    12..=16 => Technology::Hydro,
                    _ => Technology::Other,
                }
            };
            let p_max = p_max * rng.random_range(0.9..1.1);
            let p_min = if technology == Technology::Thermal {
                0.1 * p_max
            } else {
                0.0
            };
            GeneratorSpec {
                bus,
                p_min,
                p_max,
                q_min,
                q_max,
                technology,
                dispatchable: true,
            }
        })
        .collect();

    let slack = generators
        .iter()
        .filter(|g| g.technology == Technology::Thermal)
        .max_by(|a, b| a.p_max.total_cmp(&b.p_max))
        .map(|g| g.bus)
        .expect("embedded data has thermal units");

    for region in 0..3u8 {
        let mut hosts: Vec<usize> = UNITS
            .iter()
            .map(|u| u.0)
            .filter(|&b| region_of(b) == region && b != slack)
            .collect();
        hosts.dedup();
        let picks = sample(&mut rng, hosts.len(), WIND_UNITS_PER_REGION + SOLAR_UNITS_PER_REGION);
        for (k, idx) in picks.into_iter().enumerate() {
            let (technology, p_max) = if k < WIND_UNITS_PER_REGION {
                (Technology::Wind, rng.random_range(150.0..300.0))
            } else {
                (Technology::Solar, rng.random_range(100.0..250.0))
            };
            generators.push(GeneratorSpec {
                bus: hosts[idx],
                p_min: 0.0,
                p_max,
                q_min: -0.3 * p_max,
                q_max: 0.3 * p_max,
                technology,
                dispatchable: false,
            });
        }
    }

    let mut has_gen = vec![false; BUSES.len()];
    for g in &generators {
        has_gen[g.bus] = true;
    }
    let buses = BUSES
        .iter()
        .enumerate()
        .map(|(id, &(base_kv, pd, qd))| Bus {
            id,
            region: region_of(id),
            base_kv,
            kind: if id == slack {
                BusKind::Slack
            } else if has_gen[id] {
                BusKind::Pv
            } else {
                BusKind::Pq
            },
            load_mw: pd,
            load_mvar: qd,
        })
        .collect();

    let branches = BRANCHES
        .iter()
        .map(|&(from, to, r, x, base)| Branch {
            from,
            to,
            r,
            x,
            rating_mva: base * BASE_RATING_SCALE,
        })
        .collect();

    GridGraph::new(buses, branches, generators).expect("embedded 118-bus data is valid")
}
