//! Surveillance panels and spatial structure.
//!
//! CSV schemas (UTF-8, comma separated, header row mandatory):
//!
//! | file             | columns                                    |
//! |------------------|--------------------------------------------|
//! | `panel.csv`      | `t, region, age, count[, week_of_year]`    |
//! | `population.csv` | `region, age, pop`                         |
//! | `adjacency.csv`  | `from, to` (undirected edge list)          |
//! | `tracts.csv`     | `puma, lat, lon, pop`                      |
//!
//! Region and age order is the order of first appearance in
//! `population.csv`. `t` runs over `1..=T` without gaps. When the optional
//! `week_of_year` column is absent it defaults to `((t − 1) mod 52) + 1`.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Incidence counts indexed `(t, g, i)` with populations `(g, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    counts: Array3<u64>,
    populations: Array2<u64>,
    week_of_year: Vec<u32>,
    regions: Vec<String>,
    ages: Vec<String>,
}

impl PanelData {
    pub fn new(
        counts: Array3<u64>,
        populations: Array2<u64>,
        week_of_year: Vec<u32>,
        regions: Vec<String>,
        ages: Vec<String>,
    ) -> Result<Self> {
        let (t, g, i) = counts.dim();
        if populations.dim() != (g, i) {
            return Err(Error::Shape(format!(
                "populations are {:?}, counts imply ({g}, {i})",
                populations.dim()
            )));
        }
        if week_of_year.len() != t {
            return Err(Error::Shape(format!(
                "{} week_of_year entries for {t} weeks",
                week_of_year.len()
            )));
        }
        if regions.len() != g || ages.len() != i {
            return Err(Error::Shape(format!(
                "{} region and {} age labels for a {g}x{i} panel",
                regions.len(),
                ages.len()
            )));
        }
        if let Some(w) = week_of_year.iter().find(|w| !(1..=52).contains(*w)) {
            return Err(Error::Validation(format!("week_of_year {w} outside 1..=52")));
        }
        if let Some(((gg, ii), _)) = populations.indexed_iter().find(|(_, &p)| p == 0) {
            return Err(Error::Validation(format!(
                "population of ({}, {}) must be at least 1",
                regions[gg], ages[ii]
            )));
        }
        Ok(Self {
            counts,
            populations,
            week_of_year,
            regions,
            ages,
        })
    }

    /// Panel with generic labels `R1..`, `A1..` and weeks continuing from `first_week`.
    pub fn from_counts(
        counts: Array3<u64>,
        populations: Array2<u64>,
        first_week: u32,
    ) -> Result<Self> {
        let (t, g, i) = counts.dim();
        let weeks = (0..t as u32).map(|k| (first_week - 1 + k) % 52 + 1).collect();
        let regions = (1..=g).map(|k| format!("R{k}")).collect();
        let ages = (1..=i).map(|k| format!("A{k}")).collect();
        Self::new(counts, populations, weeks, regions, ages)
    }

    pub fn counts(&self) -> &Array3<u64> {
        &self.counts
    }

    pub fn populations(&self) -> &Array2<u64> {
        &self.populations
    }

    pub fn week_of_year(&self) -> &[u32] {
        &self.week_of_year
    }

    pub fn regions(&self) -> &[String] {
        &self.regions
    }

    pub fn ages(&self) -> &[String] {
        &self.ages
    }

    pub fn n_weeks(&self) -> usize {
        self.counts.dim().0
    }

    pub fn n_regions(&self) -> usize {
        self.counts.dim().1
    }

    pub fn n_ages(&self) -> usize {
        self.counts.dim().2
    }

    pub fn week(&self, t: usize) -> ArrayView2<'_, u64> {
        self.counts.index_axis(Axis(0), t)
    }

    /// Sub-panel with weeks `start..end` (0-based, end exclusive).
    pub fn slice_weeks(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_weeks() {
            return Err(Error::Shape(format!(
                "week range {start}..{end} outside 0..{}",
                self.n_weeks()
            )));
        }
        Ok(Self {
            counts: self
                .counts
                .slice(ndarray::s![start..end, .., ..])
                .to_owned(),
            populations: self.populations.clone(),
            week_of_year: self.week_of_year[start..end].to_vec(),
            regions: self.regions.clone(),
            ages: self.ages.clone(),
        })
    }

    /// Writes `panel.csv` and `population.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("panel.csv"))?;
        w.write_record(["t", "region", "age", "count", "week_of_year"])?;
        for ((t, g, i), c) in self.counts.indexed_iter() {
            w.write_record([
                (t + 1).to_string(),
                self.regions[g].clone(),
                self.ages[i].clone(),
                c.to_string(),
                self.week_of_year[t].to_string(),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("population.csv"))?;
        w.write_record(["region", "age", "pop"])?;
        for ((g, i), p) in self.populations.indexed_iter() {
            w.write_record([self.regions[g].clone(), self.ages[i].clone(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        load_panel(&dir.join("panel.csv"), &dir.join("population.csv"))
    }
}

fn parse_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    name: &str,
    path: &Path,
    line: usize,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(idx).ok_or_else(|| Error::Parse {
        path: path.to_owned(),
        line,
        msg: format!("missing column `{name}`"),
    })?;
    raw.trim().parse::<T>().map_err(|e| Error::Parse {
        path: path.to_owned(),
        line,
        msg: format!("column `{name}`: `{raw}` ({e})"),
    })
}

fn column_index(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Parse {
            path: path.to_owned(),
            line: 1,
            msg: format!("header lacks column `{name}`"),
        })
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?)
}

struct Labels {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Labels {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn intern(&mut self, name: &str) -> usize {
        if let Some(&k) = self.index.get(name) {
            return k;
        }
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), self.names.len() - 1);
        self.names.len() - 1
    }
}

/// Reads a long-format panel and its population table.
pub fn load_panel(panel_path: &Path, population_path: &Path) -> Result<PanelData> {
    // populations fix the label order
    let mut rdr = reader(population_path)?;
    let headers = rdr.headers()?.clone();
    let (rc, ac, pc) = (
        column_index(&headers, "region", population_path)?,
        column_index(&headers, "age", population_path)?,
        column_index(&headers, "pop", population_path)?,
    );
    let mut regions = Labels::new();
    let mut ages = Labels::new();
    let mut pops: Vec<(usize, usize, i64, usize)> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec?;
        let g = regions.intern(rec.get(rc).unwrap_or("").trim());
        let i = ages.intern(rec.get(ac).unwrap_or("").trim());
        let p: i64 = parse_field(&rec, pc, "pop", population_path, line)?;
        pops.push((g, i, p, line));
    }
    let (ng, ni) = (regions.names.len(), ages.names.len());
    let mut populations = Array2::<u64>::zeros((ng, ni));
    let mut seen = Array2::<bool>::from_elem((ng, ni), false);
    for (g, i, p, line) in pops {
        if p < 1 {
            return Err(Error::Validation(format!(
                "{}:{line}: population {p} must be at least 1",
                population_path.display()
            )));
        }
        populations[(g, i)] = p as u64;
        seen[(g, i)] = true;
    }
    if let Some(((g, i), _)) = seen.indexed_iter().find(|(_, s)| !**s) {
        return Err(Error::Shape(format!(
            "population missing for region {} age {}",
            regions.names[g], ages.names[i]
        )));
    }

    let mut rdr = reader(panel_path)?;
    let headers = rdr.headers()?.clone();
    let tc = column_index(&headers, "t", panel_path)?;
    let rc = column_index(&headers, "region", panel_path)?;
    let ac = column_index(&headers, "age", panel_path)?;
    let cc = column_index(&headers, "count", panel_path)?;
    let wc = headers.iter().position(|h| h.trim() == "week_of_year");
    let mut cells: BTreeMap<(usize, usize, usize), u64> = BTreeMap::new();
    let mut weeks: BTreeMap<usize, u32> = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Parse {
            path: panel_path.to_owned(),
            line,
            msg: e.to_string(),
        })?;
        let t: usize = parse_field(&rec, tc, "t", panel_path, line)?;
        if t == 0 {
            return Err(Error::Parse {
                path: panel_path.to_owned(),
                line,
                msg: "t is 1-based".into(),
            });
        }
        let region = rec.get(rc).unwrap_or("").trim();
        let age = rec.get(ac).unwrap_or("").trim();
        let g = *regions.index.get(region).ok_or_else(|| Error::Parse {
            path: panel_path.to_owned(),
            line,
            msg: format!("region `{region}` has no population entry"),
        })?;
        let i = *ages.index.get(age).ok_or_else(|| Error::Parse {
            path: panel_path.to_owned(),
            line,
            msg: format!("age `{age}` has no population entry"),
        })?;
        let count: i64 = parse_field(&rec, cc, "count", panel_path, line)?;
        if count < 0 {
            return Err(Error::Validation(format!(
                "{}:{line}: negative count {count}",
                panel_path.display()
            )));
        }
        if cells.insert((t - 1, g, i), count as u64).is_some() {
            return Err(Error::Parse {
                path: panel_path.to_owned(),
                line,
                msg: format!("duplicate cell (t={t}, region={region}, age={age})"),
            });
        }
        let woy = match wc {
            Some(c) => parse_field(&rec, c, "week_of_year", panel_path, line)?,
            None => ((t - 1) % 52) as u32 + 1,
        };
        if let Some(prev) = weeks.insert(t - 1, woy) {
            if prev != woy {
                return Err(Error::Validation(format!(
                    "{}:{line}: week {t} has conflicting week_of_year {prev} and {woy}",
                    panel_path.display()
                )));
            }
        }
    }
    let nt = weeks.keys().next_back().map_or(0, |t| t + 1);
    if nt == 0 {
        return Err(Error::Shape("panel has no rows".into()));
    }
    let mut counts = Array3::<u64>::zeros((nt, ng, ni));
    for t in 0..nt {
        for g in 0..ng {
            for i in 0..ni {
                match cells.get(&(t, g, i)) {
                    Some(&c) => counts[(t, g, i)] = c,
                    None => {
                        return Err(Error::Shape(format!(
                            "missing cell (t={}, g={}, i={}) [region {}, age {}]",
                            t + 1,
                            g + 1,
                            i + 1,
                            regions.names[g],
                            ages.names[i]
                        )))
                    }
                }
            }
        }
    }
    let week_of_year = (0..nt).map(|t| weeks[&t]).collect();
    PanelData::new(counts, populations, week_of_year, regions.names, ages.names)
}

/// Adjacency orders and optional distances between regions.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialStructure {
    adjacency_order: Array2<u32>,
    distance: Option<Array2<f64>>,
}

impl SpatialStructure {
    pub fn new(adjacency_order: Array2<u32>, distance: Option<Array2<f64>>) -> Result<Self> {
        let (n, m) = adjacency_order.dim();
        if n != m {
            return Err(Error::Shape(format!("adjacency order is {n}x{m}")));
        }
        for a in 0..n {
            if adjacency_order[(a, a)] != 0 {
                return Err(Error::Validation(format!("o[{a},{a}] must be 0")));
            }
            for b in 0..n {
                if adjacency_order[(a, b)] != adjacency_order[(b, a)] {
                    return Err(Error::Validation(format!("o[{a},{b}] != o[{b},{a}]")));
                }
                if a != b && adjacency_order[(a, b)] == 0 {
                    return Err(Error::Validation(format!("o[{a},{b}] = 0 off the diagonal")));
                }
                for c in 0..n {
                    if adjacency_order[(a, c)] > adjacency_order[(a, b)] + adjacency_order[(b, c)] {
                        return Err(Error::Validation(format!(
                            "adjacency orders violate the triangle inequality at ({a},{b},{c})"
                        )));
                    }
                }
            }
        }
        if let Some(d) = &distance {
            validate_distance(d)?;
            if d.dim() != (n, n) {
                return Err(Error::Shape(format!(
                    "distance matrix {:?} for {n} regions",
                    d.dim()
                )));
            }
        }
        Ok(Self {
            adjacency_order,
            distance,
        })
    }

    pub fn adjacency_order(&self) -> &Array2<u32> {
        &self.adjacency_order
    }

    pub fn distance(&self) -> Option<&Array2<f64>> {
        self.distance.as_ref()
    }
}

pub fn validate_distance(d: &Array2<f64>) -> Result<()> {
    let (n, m) = d.dim();
    if n != m {
        return Err(Error::Shape(format!("distance matrix is {n}x{m}")));
    }
    for a in 0..n {
        if !(d[(a, a)] >= 0.0) {
            return Err(Error::Validation(format!("D[{a},{a}] must be nonnegative")));
        }
        for b in 0..n {
            if a != b && !(d[(a, b)] > 0.0) {
                return Err(Error::Validation(format!("D[{a},{b}] must be positive")));
            }
            let scale = d[(a, b)].abs().max(d[(b, a)].abs()).max(1.0);
            if (d[(a, b)] - d[(b, a)]).abs() > 1e-12 * scale {
                return Err(Error::Validation(format!("D[{a},{b}] != D[{b},{a}]")));
            }
        }
    }
    Ok(())
}

/// Shortest-path hop counts on an undirected, connected graph.
pub fn adjacency_orders(adjacency: &Array2<bool>) -> Result<Array2<u32>> {
    let (n, m) = adjacency.dim();
    if n != m {
        return Err(Error::Shape(format!("adjacency matrix is {n}x{m}")));
    }
    for a in 0..n {
        if adjacency[(a, a)] {
            return Err(Error::Validation(format!("region {a} is adjacent to itself")));
        }
        for b in 0..n {
            if adjacency[(a, b)] != adjacency[(b, a)] {
                return Err(Error::Validation(format!("adjacency not symmetric at ({a},{b})")));
            }
        }
    }
    let mut orders = Array2::<u32>::from_elem((n, n), u32::MAX);
    let mut queue = VecDeque::new();
    for src in 0..n {
        orders[(src, src)] = 0;
        queue.clear();
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let du = orders[(src, u)];
            for v in 0..n {
                if adjacency[(u, v)] && orders[(src, v)] == u32::MAX {
                    orders[(src, v)] = du + 1;
                    queue.push_back(v);
                }
            }
        }
        if let Some(v) = (0..n).find(|&v| orders[(src, v)] == u32::MAX) {
            return Err(Error::Disconnected(src, v));
        }
    }
    Ok(orders)
}

/// Reads an `adjacency.csv` edge list against the given region labels.
pub fn load_adjacency(path: &Path, regions: &[String]) -> Result<Array2<bool>> {
    let index: HashMap<&str, usize> = regions
        .iter()
        .enumerate()
        .map(|(k, r)| (r.as_str(), k))
        .collect();
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let fc = column_index(&headers, "from", path)?;
    let tc = column_index(&headers, "to", path)?;
    let n = regions.len();
    let mut adj = Array2::from_elem((n, n), false);
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec?;
        let lookup = |c: usize| -> Result<usize> {
            let name = rec.get(c).unwrap_or("").trim();
            index.get(name).copied().ok_or_else(|| Error::Parse {
                path: path.to_owned(),
                line,
                msg: format!("unknown region `{name}`"),
            })
        };
        let (a, b) = (lookup(fc)?, lookup(tc)?);
        if a == b {
            return Err(Error::Parse {
                path: path.to_owned(),
                line,
                msg: "self loop".into(),
            });
        }
        adj[(a, b)] = true;
        adj[(b, a)] = true;
    }
    Ok(adj)
}

pub fn save_adjacency(path: &Path, adjacency: &Array2<bool>, regions: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["from", "to"])?;
    for ((a, b), &e) in adjacency.indexed_iter() {
        if e && a < b {
            w.write_record([regions[a].as_str(), regions[b].as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Adjacency of a `rows × cols` rook grid, a convenient synthetic geography.
pub fn grid_adjacency(rows: usize, cols: usize) -> Array2<bool> {
    let n = rows * cols;
    let mut adj = Array2::from_elem((n, n), false);
    for r in 0..rows {
        for c in 0..cols {
            let a = r * cols + c;
            if c + 1 < cols {
                adj[(a, a + 1)] = true;
                adj[(a + 1, a)] = true;
            }
            if r + 1 < rows {
                adj[(a, a + cols)] = true;
                adj[(a + cols, a)] = true;
            }
        }
    }
    adj
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tract {
    pub puma: String,
    pub lat: f64,
    pub lon: f64,
    pub pop: f64,
}

/// Census tracts with centroids and populations, grouped by PUMA.
#[derive(Debug, Clone, PartialEq)]
pub struct TractTable {
    tracts: Vec<Tract>,
}

impl TractTable {
    pub fn new(tracts: Vec<Tract>) -> Result<Self> {
        let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
        for t in &tracts {
            if !(t.pop >= 0.0) {
                return Err(Error::Validation(format!(
                    "tract in {} has negative population",
                    t.puma
                )));
            }
            if !(-90.0..=90.0).contains(&t.lat) || !(-180.0..=180.0).contains(&t.lon) {
                return Err(Error::Validation(format!(
                    "tract in {} has invalid coordinates ({}, {})",
                    t.puma, t.lat, t.lon
                )));
            }
            *totals.entry(t.puma.as_str()).or_default() += t.pop;
        }
        if totals.is_empty() {
            return Err(Error::Validation("tract table is empty".into()));
        }
        if let Some((p, _)) = totals.iter().find(|(_, &tot)| !(tot > 0.0)) {
            return Err(Error::Validation(format!("puma {p} has zero total population")));
        }
        Ok(Self { tracts })
    }

    pub fn tracts(&self) -> &[Tract] {
        &self.tracts
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = reader(path)?;
        let mut tracts = Vec::new();
        for (k, rec) in rdr.deserialize::<Tract>().enumerate() {
            tracts.push(rec.map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: k + 2,
                msg: e.to_string(),
            })?);
        }
        Self::new(tracts)
    }

    /// PUMA labels in sorted order; rows/columns of [`build_distance_matrix`].
    pub fn pumas(&self) -> Vec<String> {
        let mut p: Vec<String> = self.tracts.iter().map(|t| t.puma.clone()).collect();
        p.sort();
        p.dedup();
        p
    }
}

/// Mean Earth radius in km (IUGG).
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Great-circle distance in km between two (lat, lon) points in degrees.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Population-weighted mean tract-to-tract distance between PUMAs, in tens
/// of km. Rows and columns follow [`TractTable::pumas`]. The diagonal is the
/// within-PUMA mean distance, which is positive whenever a PUMA has two
/// populated tracts at distinct centroids.
pub fn build_distance_matrix(table: &TractTable) -> Result<(Vec<String>, Array2<f64>)> {
    let pumas = table.pumas();
    let index: HashMap<&str, usize> = pumas
        .iter()
        .enumerate()
        .map(|(k, p)| (p.as_str(), k))
        .collect();
    let n = pumas.len();
    let mut groups: Vec<Vec<&Tract>> = vec![Vec::new(); n];
    for t in table.tracts() {
        groups[index[t.puma.as_str()]].push(t);
    }
    let totals: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().map(|t| t.pop).sum())
        .collect();
    let mut d = Array2::<f64>::zeros((n, n));
    for a in 0..n {
        for b in a..n {
            let mut acc = 0.0;
            for u in &groups[a] {
                for v in &groups[b] {
                    acc += u.pop * v.pop * haversine_km(u.lat, u.lon, v.lat, v.lon);
                }
            }
            let value = acc / (totals[a] * totals[b]) / 10.0;
            d[(a, b)] = value;
            d[(b, a)] = value;
        }
    }
    Ok((pumas, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn floyd_warshall(adj: &Array2<bool>) -> Array2<u32> {
        let n = adj.nrows();
        let inf = u32::MAX / 4;
        let mut d = Array2::from_shape_fn((n, n), |(a, b)| {
            if a == b {
                0
            } else if adj[(a, b)] {
                1
            } else {
                inf
            }
        });
        for k in 0..n {
            for a in 0..n {
                for b in 0..n {
                    let via = d[(a, k)] + d[(k, b)];
                    if via < d[(a, b)] {
                        d[(a, b)] = via;
                    }
                }
            }
        }
        d
    }

    #[test]
    fn path_graph_orders() {
        let mut adj = Array2::from_elem((3, 3), false);
        adj[(0, 1)] = true;
        adj[(1, 0)] = true;
        adj[(1, 2)] = true;
        adj[(2, 1)] = true;
        let o = adjacency_orders(&adj).unwrap();
        assert_eq!(o[(0, 2)], 2);
        assert_eq!(o[(0, 0)], 0);
    }

    #[test]
    fn complete_graph_orders() {
        let adj = Array2::from_shape_fn((5, 5), |(a, b)| a != b);
        let o = adjacency_orders(&adj).unwrap();
        for ((a, b), &v) in o.indexed_iter() {
            assert_eq!(v, u32::from(a != b));
        }
    }

    #[test]
    fn twelve_node_graph_matches_floyd_warshall() {
        // 3x4 grid plus two diagonal shortcuts
        let mut adj = grid_adjacency(3, 4);
        for &(a, b) in &[(0usize, 5usize), (6, 11)] {
            adj[(a, b)] = true;
            adj[(b, a)] = true;
        }
        let o = adjacency_orders(&adj).unwrap();
        assert_eq!(o, floyd_warshall(&adj));
        SpatialStructure::new(o, None).unwrap();
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let mut adj = Array2::from_elem((3, 3), false);
        adj[(0, 1)] = true;
        adj[(1, 0)] = true;
        assert!(matches!(adjacency_orders(&adj), Err(Error::Disconnected(0, 2))));
    }

    #[test]
    fn two_single_tract_pumas_ten_km_apart() {
        // 10 km along a meridian
        let dlat = (10.0 / EARTH_RADIUS_KM).to_degrees();
        let table = TractTable::new(vec![
            Tract { puma: "a".into(), lat: 42.0, lon: -84.0, pop: 100.0 },
            Tract { puma: "b".into(), lat: 42.0 + dlat, lon: -84.0, pop: 50.0 },
        ])
        .unwrap();
        let (labels, d) = build_distance_matrix(&table).unwrap();
        assert_eq!(labels, vec!["a", "b"]);
        assert_relative_eq!(d[(0, 1)], 1.0, max_relative = 1e-12);
        assert_eq!(d[(0, 0)], 0.0);
    }

    #[test]
    fn zero_population_puma_is_rejected() {
        let err = TractTable::new(vec![
            Tract { puma: "a".into(), lat: 1.0, lon: 1.0, pop: 0.0 },
            Tract { puma: "b".into(), lat: 1.0, lon: 2.0, pop: 3.0 },
        ]);
        assert!(err.is_err());
    }

    #[test]
    fn panel_rejects_bad_weeks_and_populations() {
        let counts = Array3::<u64>::zeros((2, 1, 1));
        assert!(PanelData::from_counts(counts.clone(), Array2::zeros((1, 1)), 1).is_err());
        let p = PanelData::new(
            counts,
            Array2::ones((1, 1)),
            vec![1, 53],
            vec!["r".into()],
            vec!["a".into()],
        );
        assert!(matches!(p, Err(Error::Validation(_))));
    }

    #[test]
    fn week_of_year_wraps() {
        let p = PanelData::from_counts(Array3::zeros((4, 1, 1)), Array2::ones((1, 1)), 51).unwrap();
        assert_eq!(p.week_of_year(), &[51, 52, 1, 2]);
    }
}
