//! CSV import/export of grids.
//!
//! Bus rows may carry two optional trailing columns with the nominal load
//! (`load_mw,load_mvar`); they default to zero when absent.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use super::{Branch, Bus, GeneratorSpec, GridError, GridGraph};

pub const BUS_HEADER: [&str; 4] = ["id", "region", "base_kv", "kind"];
const BUS_LOAD_COLUMNS: [&str; 2] = ["load_mw", "load_mvar"];
pub const BRANCH_HEADER: [&str; 5] = ["from", "to", "r_pu", "x_pu", "rating_mva"];
pub const GEN_HEADER: [&str; 7] = ["bus", "p_min", "p_max", "q_min", "q_max", "tech", "dispatchable"];

pub fn load_grid(
    bus_csv: impl AsRef<Path>,
    branch_csv: impl AsRef<Path>,
    gen_csv: impl AsRef<Path>,
) -> Result<GridGraph, GridError> {
    let buses = read_rows(bus_csv.as_ref(), &BUS_HEADER, BUS_LOAD_COLUMNS.len(), parse_bus)?;
    let branches = read_rows(branch_csv.as_ref(), &BRANCH_HEADER, 0, parse_branch)?;
    let gens = read_rows(gen_csv.as_ref(), &GEN_HEADER, 0, parse_gen)?;
    GridGraph::new(buses, branches, gens)
}

/// Writes `bus.csv`, `branch.csv` and `gen.csv` into `dir`.
pub fn write_grid(grid: &GridGraph, dir: impl AsRef<Path>) -> Result<(), GridError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;

    let mut out = String::new();
    out.push_str(&[&BUS_HEADER[..], &BUS_LOAD_COLUMNS[..]].concat().join(","));
    out.push('\n');
    for b in grid.buses() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            b.id, b.region, b.base_kv, b.kind, b.load_mw, b.load_mvar
        ));
    }
    File::create(dir.join("bus.csv"))?.write_all(out.as_bytes())?;

    let mut out = BRANCH_HEADER.join(",") + "\n";
    for b in grid.branches() {
        out.push_str(&format!("{},{},{},{},{}\n", b.from, b.to, b.r, b.x, b.rating_mva));
    }
    File::create(dir.join("branch.csv"))?.write_all(out.as_bytes())?;

    let mut out = GEN_HEADER.join(",") + "\n";
    for g in grid.generators() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            g.bus, g.p_min, g.p_max, g.q_min, g.q_max, g.technology, g.dispatchable
        ));
    }
    File::create(dir.join("gen.csv"))?.write_all(out.as_bytes())?;
    Ok(())
}

struct Row<'a> {
    record: &'a csv::StringRecord,
}

impl Row<'_> {
    fn get<T: FromStr>(&self, idx: usize, name: &str) -> Result<T, String> {
        let raw = self
            .record
            .get(idx)
            .ok_or_else(|| format!("missing column {name}"))?
            .trim();
        raw.parse()
            .map_err(|_| format!("cannot parse {name} from {raw:?}"))
    }

    fn opt<T: FromStr>(&self, idx: usize, name: &str, default: T) -> Result<T, String> {
        match self.record.get(idx) {
            None => Ok(default),
            Some(_) => self.get(idx, name),
        }
    }
}

fn parse_bus(row: Row) -> Result<Bus, String> {
    Ok(Bus {
        id: row.get(0, "id")?,
        region: row.get(1, "region")?,
        base_kv: row.get(2, "base_kv")?,
        kind: row.get(3, "kind")?,
        load_mw: row.opt(4, "load_mw", 0.0)?,
        load_mvar: row.opt(5, "load_mvar", 0.0)?,
    })
}

fn parse_branch(row: Row) -> Result<Branch, String> {
    Ok(Branch {
        from: row.get(0, "from")?,
        to: row.get(1, "to")?,
        r: row.get(2, "r_pu")?,
        x: row.get(3, "x_pu")?,
        rating_mva: row.get(4, "rating_mva")?,
    })
}

fn parse_gen(row: Row) -> Result<GeneratorSpec, String> {
    Ok(GeneratorSpec {
        bus: row.get(0, "bus")?,
        p_min: row.get(1, "p_min")?,
        p_max: row.get(2, "p_max")?,
        q_min: row.get(3, "q_min")?,
        q_max: row.get(4, "q_max")?,
        technology: row.get(5, "tech")?,
        dispatchable: row.get(6, "dispatchable")?,
    })
}

fn read_rows<T>(
    path: &Path,
    header: &[&str],
    optional: usize,
    parse: impl Fn(Row) -> Result<T, String>,
) -> Result<Vec<T>, GridError> {
    let file = path.display().to_string();
    let perr = |line: u64, message: String| GridError::Parse {
        file: file.clone(),
        line,
        message,
    };
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut rows = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut seen_header = false;
    loop {
        let more = reader
            .read_record(&mut record)
            .map_err(|e| perr(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if !seen_header {
            let got: Vec<&str> = record.iter().map(str::trim).collect();
            let ok = got.len() >= header.len()
                && got.len() <= header.len() + optional
                && got[..header.len()] == *header;
            if !ok {
                return Err(perr(
                    line,
                    format!("expected header {:?}, found {:?}", header.join(","), got.join(",")),
                ));
            }
            seen_header = true;
            continue;
        }
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        rows.push(parse(Row { record: &record }).map_err(|m| perr(line, m))?);
    }
    if !seen_header {
        return Err(perr(1, "missing header row".into()));
    }
    Ok(rows)
}
