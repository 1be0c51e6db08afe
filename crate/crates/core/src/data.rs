//! Domain types for area- and unit-level survey data, CSV ingestion, and
//! design-weighted direct estimators.
//!
//! Area order is the file order and is kept by every downstream consumer.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Separator between covariate values in a class label (`1|0|1|0`).
pub const CLASS_LABEL_SEPARATOR: char = '|';

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: count `{value}` is not a non-negative integer")]
    NonIntegerCount { row: usize, value: String },
    #[error("row {row}: population `{value}` is not a positive integer")]
    NonPositivePopulation { row: usize, value: String },
    #[error("row {row}: invalid number `{value}` in column `{column}`")]
    InvalidNumber { row: usize, column: String, value: String },
    #[error("duplicate area id `{0}`")]
    DuplicateAreaId(String),
    #[error("at least two areas are required, got {0}")]
    TooFewAreas(usize),
    #[error("area `{area}` has {got} covariates, expected {expected}")]
    DimensionMismatch { area: String, expected: usize, got: usize },
    #[error("area `{0}`: first covariate must be the intercept 1")]
    MissingIntercept(String),
    #[error("unit {row}: covariate vector {pattern} matches no covariate class")]
    UnknownClass { row: usize, pattern: String },
    #[error("inconsistent class counts: {0}")]
    InconsistentClassCount(String),
    #[error("area `{0}` has no sampled units")]
    EmptyArea(String),
    #[error("row {row}: {message}")]
    InvalidUnit { row: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaRecord {
    pub area_id: String,
    /// Observed count y_d.
    pub y: u64,
    /// Covariates with the intercept in position 0.
    pub x: Vec<f64>,
    /// Population size N_d.
    pub population: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaDataset {
    pub areas: Vec<AreaRecord>,
    /// Names of the non-intercept covariates, in column order.
    pub covariate_names: Vec<String>,
}

impl AreaDataset {
    pub fn new(areas: Vec<AreaRecord>, covariate_names: Vec<String>) -> Result<Self, DataError> {
        if areas.len() < 2 {
            return Err(DataError::TooFewAreas(areas.len()));
        }
        let p = covariate_names.len() + 1;
        let mut seen = HashSet::new();
        for a in &areas {
            if a.x.len() != p {
                return Err(DataError::DimensionMismatch { area: a.area_id.clone(), expected: p, got: a.x.len() });
            }
            if a.x[0] != 1.0 {
                return Err(DataError::MissingIntercept(a.area_id.clone()));
            }
            if a.population == 0 {
                return Err(DataError::NonPositivePopulation { row: 0, value: "0".into() });
            }
            if !seen.insert(a.area_id.as_str()) {
                return Err(DataError::DuplicateAreaId(a.area_id.clone()));
            }
        }
        Ok(Self { areas, covariate_names })
    }

    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }

    /// Number of fixed effects, including the intercept.
    pub fn p(&self) -> usize {
        self.covariate_names.len() + 1
    }

    pub fn populations(&self) -> Vec<f64> {
        self.areas.iter().map(|a| a.population as f64).collect()
    }

    /// Same design with the counts replaced.
    pub fn with_counts(&self, y: &[u64]) -> Self {
        debug_assert_eq!(y.len(), self.areas.len());
        let areas = self.areas.iter().zip(y).map(|(a, &y)| AreaRecord { y, ..a.clone() }).collect();
        Self { areas, covariate_names: self.covariate_names.clone() }
    }

    /// Subset (with repetition allowed) by area index; duplicated ids get a `#k` suffix.
    pub fn select(&self, indices: &[usize]) -> Result<Self, DataError> {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        let areas = indices
            .iter()
            .map(|&i| {
                let c = counts.entry(i).or_insert(0);
                *c += 1;
                let mut a = self.areas[i].clone();
                if *c > 1 {
                    a.area_id = format!("{}#{}", a.area_id, c);
                }
                a
            })
            .collect();
        Self::new(areas, self.covariate_names.clone())
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>, DataError> {
    let file = File::open(path)?;
    Ok(reader_from(file))
}

fn reader_from<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(r)
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers.iter().position(|h| h == name).ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

fn parse_count(row: usize, raw: &str) -> Result<u64, DataError> {
    let v: f64 = raw.parse().map_err(|_| DataError::NonIntegerCount { row, value: raw.to_string() })?;
    if !(v >= 0.0) || v.fract() != 0.0 || v > u64::MAX as f64 {
        return Err(DataError::NonIntegerCount { row, value: raw.to_string() });
    }
    Ok(v as u64)
}

fn parse_population(row: usize, raw: &str) -> Result<u64, DataError> {
    let bad = || DataError::NonPositivePopulation { row, value: raw.to_string() };
    let v: f64 = raw.parse().map_err(|_| bad())?;
    if !(v >= 1.0) || v.fract() != 0.0 || v > u64::MAX as f64 {
        return Err(bad());
    }
    Ok(v as u64)
}

fn parse_real(row: usize, column: &str, raw: &str) -> Result<f64, DataError> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(DataError::InvalidNumber { row, column: column.to_string(), value: raw.to_string() }),
    }
}

/// Reads `area,y,N,<covariates...>`; the intercept is prepended.
pub fn load_area_csv(path: impl AsRef<Path>) -> Result<AreaDataset, DataError> {
    read_area_csv(open_reader(path.as_ref())?)
}

pub fn read_area_csv<R: Read>(mut rdr: csv::Reader<R>) -> Result<AreaDataset, DataError> {
    let headers = rdr.headers()?.clone();
    let ia = column(&headers, "area")?;
    let iy = column(&headers, "y")?;
    let in_ = column(&headers, "N")?;
    let cov: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != ia && *i != iy && *i != in_)
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    let mut areas = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let mut x = Vec::with_capacity(cov.len() + 1);
        x.push(1.0);
        for (i, name) in &cov {
            x.push(parse_real(row, name, &rec[*i])?);
        }
        areas.push(AreaRecord {
            area_id: rec[ia].to_string(),
            y: parse_count(row, &rec[iy])?,
            x,
            population: parse_population(row, &rec[in_])?,
        });
    }
    AreaDataset::new(areas, cov.into_iter().map(|(_, n)| n).collect())
}

pub fn write_area_csv(data: &AreaDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut f = File::create(path)?;
    write_area_csv_to(data, &mut f)
}

pub fn write_area_csv_to<W: Write>(data: &AreaDataset, w: W) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["area".to_string(), "y".to_string(), "N".to_string()];
    header.extend(data.covariate_names.iter().cloned());
    wtr.write_record(&header)?;
    for a in &data.areas {
        let mut row = vec![a.area_id.clone(), a.y.to_string(), a.population.to_string()];
        row.extend(a.x[1..].iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    /// Index into [`UnitDataset::area_ids`].
    pub area: usize,
    pub y: u64,
    /// Number of trials m_dj.
    pub m: u64,
    /// Sampling weight w_dj.
    pub w: f64,
    /// Covariates with the intercept in position 0.
    pub x: Vec<f64>,
    /// Index into [`UnitDataset::classes`].
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitDataset {
    pub area_ids: Vec<String>,
    pub covariate_names: Vec<String>,
    pub units: Vec<UnitRecord>,
    /// Covariate classes z_l, intercept included.
    pub classes: Vec<Vec<f64>>,
    /// Population class sizes N_dl, one row per area.
    pub class_sizes: Vec<Vec<u64>>,
}

pub fn class_label(z: &[f64]) -> String {
    z.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(&CLASS_LABEL_SEPARATOR.to_string())
}

fn same_pattern(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x == y)
}

impl UnitDataset {
    /// Builds a dataset; `units[*].class` is recomputed from the covariates.
    pub fn new(
        area_ids: Vec<String>,
        covariate_names: Vec<String>,
        mut units: Vec<UnitRecord>,
        classes: Vec<Vec<f64>>,
        class_sizes: Vec<Vec<u64>>,
    ) -> Result<Self, DataError> {
        let d = area_ids.len();
        let p = covariate_names.len() + 1;
        let mut seen = HashSet::new();
        for id in &area_ids {
            if !seen.insert(id.as_str()) {
                return Err(DataError::DuplicateAreaId(id.clone()));
            }
        }
        if class_sizes.len() != d {
            return Err(DataError::InconsistentClassCount(format!(
                "{} class-size rows for {d} areas",
                class_sizes.len()
            )));
        }
        for (l, z) in classes.iter().enumerate() {
            if z.len() != p || z[0] != 1.0 {
                return Err(DataError::InconsistentClassCount(format!("class {l} has a malformed covariate vector")));
            }
        }
        for row in &class_sizes {
            if row.len() != classes.len() {
                return Err(DataError::InconsistentClassCount("class-size row length differs from class count".into()));
            }
        }
        let mut in_sample = vec![vec![0u64; classes.len()]; d];
        for (row, u) in units.iter_mut().enumerate() {
            if u.area >= d {
                return Err(DataError::InvalidUnit { row: row + 1, message: format!("area index {} out of range", u.area) });
            }
            if u.x.len() != p {
                return Err(DataError::DimensionMismatch { area: area_ids[u.area].clone(), expected: p, got: u.x.len() });
            }
            if u.y > u.m {
                return Err(DataError::InvalidUnit { row: row + 1, message: format!("y = {} exceeds m = {}", u.y, u.m) });
            }
            if !(u.w > 0.0 && u.w.is_finite()) {
                return Err(DataError::InvalidUnit { row: row + 1, message: format!("weight {} is not positive", u.w) });
            }
            let l = classes
                .iter()
                .position(|z| same_pattern(z, &u.x))
                .ok_or_else(|| DataError::UnknownClass { row: row + 1, pattern: class_label(&u.x[1..]) })?;
            u.class = l;
            in_sample[u.area][l] += 1;
        }
        for (a, counts) in in_sample.iter().enumerate() {
            if counts.iter().sum::<u64>() == 0 {
                return Err(DataError::EmptyArea(area_ids[a].clone()));
            }
            for (l, &n) in counts.iter().enumerate() {
                if class_sizes[a][l] < n {
                    return Err(DataError::InconsistentClassCount(format!(
                        "area `{}` class {}: N_dl = {} < {} sampled units",
                        area_ids[a],
                        class_label(&classes[l][1..]),
                        class_sizes[a][l],
                        n
                    )));
                }
            }
        }
        Ok(Self { area_ids, covariate_names, units, classes, class_sizes })
    }

    pub fn num_areas(&self) -> usize {
        self.area_ids.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn p(&self) -> usize {
        self.covariate_names.len() + 1
    }

    /// N_d = Σ_l N_dl.
    pub fn populations(&self) -> Vec<f64> {
        self.class_sizes.iter().map(|r| r.iter().sum::<u64>() as f64).collect()
    }

    /// Sample size per area.
    pub fn sample_sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.num_areas()];
        for u in &self.units {
            n[u.area] += 1;
        }
        n
    }

    pub fn with_outcomes(&self, y: &[u64]) -> Self {
        let units = self.units.iter().zip(y).map(|(u, &y)| UnitRecord { y, ..u.clone() }).collect();
        Self { units, ..self.clone() }
    }
}

/// Reads `area,y,m,w,<covariates...>` (m optional, default 1) and
/// `area,class,N` where `class` is the covariate pattern `v1|v2|...`.
pub fn load_unit_csv(path: impl AsRef<Path>, class_sizes_path: impl AsRef<Path>) -> Result<UnitDataset, DataError> {
    read_unit_csv(open_reader(path.as_ref())?, open_reader(class_sizes_path.as_ref())?)
}

pub fn read_unit_csv<R1: Read, R2: Read>(
    mut units_rdr: csv::Reader<R1>,
    mut sizes_rdr: csv::Reader<R2>,
) -> Result<UnitDataset, DataError> {
    let headers = units_rdr.headers()?.clone();
    let ia = column(&headers, "area")?;
    let iy = column(&headers, "y")?;
    let iw = column(&headers, "w")?;
    let im = headers.iter().position(|h| h == "m");
    let cov: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != ia && *i != iy && *i != iw && Some(*i) != im)
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut area_ids: Vec<String> = Vec::new();
    let mut area_index: HashMap<String, usize> = HashMap::new();
    let mut units = Vec::new();
    for (r, rec) in units_rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let id = rec[ia].to_string();
        let area = *area_index.entry(id.clone()).or_insert_with(|| {
            area_ids.push(id);
            area_ids.len() - 1
        });
        let m = match im {
            Some(i) => parse_count(row, &rec[i])?,
            None => 1,
        };
        let w = parse_real(row, "w", &rec[iw])?;
        let mut x = vec![1.0];
        for (i, name) in &cov {
            x.push(parse_real(row, name, &rec[*i])?);
        }
        units.push(UnitRecord { area, y: parse_count(row, &rec[iy])?, m, w, x, class: 0 });
    }

    let sh = sizes_rdr.headers()?.clone();
    let sa = column(&sh, "area")?;
    let sc = column(&sh, "class")?;
    let sn = column(&sh, "N")?;
    let mut classes: Vec<Vec<f64>> = Vec::new();
    let mut entries: Vec<(usize, usize, u64)> = Vec::new();
    for (r, rec) in sizes_rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let id = &rec[sa];
        let area = *area_index.get(id).ok_or_else(|| DataError::EmptyArea(id.to_string()))?;
        let mut z = vec![1.0];
        for part in rec[sc].split(CLASS_LABEL_SEPARATOR) {
            z.push(parse_real(row, "class", part.trim())?);
        }
        if z.len() != cov.len() + 1 {
            return Err(DataError::InconsistentClassCount(format!(
                "row {row}: class `{}` has {} values, expected {}",
                &rec[sc],
                z.len() - 1,
                cov.len()
            )));
        }
        let l = match classes.iter().position(|c| same_pattern(c, &z)) {
            Some(l) => l,
            None => {
                classes.push(z);
                classes.len() - 1
            }
        };
        let n = parse_count(row, &rec[sn])?;
        entries.push((area, l, n));
    }
    let mut class_sizes = vec![vec![0u64; classes.len()]; area_ids.len()];
    let mut given = vec![vec![false; classes.len()]; area_ids.len()];
    for (a, l, n) in entries {
        if given[a][l] {
            return Err(DataError::InconsistentClassCount(format!(
                "duplicate class-size row for area `{}` class {}",
                area_ids[a],
                class_label(&classes[l][1..])
            )));
        }
        given[a][l] = true;
        class_sizes[a][l] = n;
    }
    for (a, row) in given.iter().enumerate() {
        if !row.iter().any(|&g| g) {
            return Err(DataError::InconsistentClassCount(format!("area `{}` has no class-size rows", area_ids[a])));
        }
    }
    UnitDataset::new(area_ids, cov.into_iter().map(|(_, n)| n).collect(), units, classes, class_sizes)
}

pub fn write_unit_csv(data: &UnitDataset, units_path: impl AsRef<Path>, sizes_path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_path(units_path)?;
    let mut header = vec!["area".to_string(), "y".into(), "m".into(), "w".into()];
    header.extend(data.covariate_names.iter().cloned());
    wtr.write_record(&header)?;
    for u in &data.units {
        let mut row = vec![data.area_ids[u.area].clone(), u.y.to_string(), u.m.to_string(), u.w.to_string()];
        row.extend(u.x[1..].iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    let mut wtr = csv::Writer::from_path(sizes_path)?;
    wtr.write_record(["area", "class", "N"])?;
    for (a, row) in data.class_sizes.iter().enumerate() {
        for (l, n) in row.iter().enumerate() {
            wtr.write_record([data.area_ids[a].clone(), class_label(&data.classes[l][1..]), n.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Weighted direct estimates for one area. Covariate totals exclude the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectEstimate {
    pub area_id: String,
    pub y_total: f64,
    pub n_total: f64,
    pub class_totals: Vec<f64>,
    pub x_totals: Vec<f64>,
    pub x_means: Vec<f64>,
}

pub fn direct_estimators(data: &UnitDataset) -> Result<Vec<DirectEstimate>, DataError> {
    let k = data.covariate_names.len();
    let mut out: Vec<DirectEstimate> = data
        .area_ids
        .iter()
        .map(|id| DirectEstimate {
            area_id: id.clone(),
            y_total: 0.0,
            n_total: 0.0,
            class_totals: vec![0.0; data.num_classes()],
            x_totals: vec![0.0; k],
            x_means: vec![0.0; k],
        })
        .collect();
    for (row, u) in data.units.iter().enumerate() {
        if !(u.w > 0.0) {
            return Err(DataError::InvalidUnit { row: row + 1, message: "non-positive weight".into() });
        }
        let e = &mut out[u.area];
        e.y_total += u.w * u.y as f64;
        e.n_total += u.w;
        e.class_totals[u.class] += u.w;
        for (t, x) in e.x_totals.iter_mut().zip(&u.x[1..]) {
            *t += u.w * x;
        }
    }
    for e in &mut out {
        if e.n_total == 0.0 {
            return Err(DataError::EmptyArea(e.area_id.clone()));
        }
        for (m, t) in e.x_means.iter_mut().zip(&e.x_totals) {
            *m = t / e.n_total;
        }
    }
    Ok(out)
}

/// Where the area-level model takes N_d from when built out of direct estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PopulationSource {
    /// Known census sizes, in area order.
    Supplied(Vec<u64>),
    /// Rounded N̂_d.
    Estimated,
}

/// Area-level dataset with y_d = round(Ŷ_d) and covariates X̄̂_d.
pub fn area_dataset_from_direct(
    estimates: &[DirectEstimate],
    covariate_names: Vec<String>,
    population: &PopulationSource,
) -> Result<AreaDataset, DataError> {
    let areas = estimates
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let population = match population {
                PopulationSource::Supplied(n) => *n.get(i).ok_or_else(|| {
                    DataError::InconsistentClassCount(format!("no supplied population for area `{}`", e.area_id))
                })?,
                PopulationSource::Estimated => e.n_total.round().max(1.0) as u64,
            };
            let mut x = vec![1.0];
            x.extend_from_slice(&e.x_means);
            Ok(AreaRecord { area_id: e.area_id.clone(), y: e.y_total.round() as u64, x, population })
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    AreaDataset::new(areas, covariate_names)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn area_csv(body: &str) -> Result<AreaDataset, DataError> {
        read_area_csv(reader_from(body.as_bytes()))
    }

    fn unit_csv(units: &str, sizes: &str) -> Result<UnitDataset, DataError> {
        read_unit_csv(reader_from(units.as_bytes()), reader_from(sizes.as_bytes()))
    }

    #[test]
    fn minimal_area_file() {
        let d = area_csv("area,y,N,x1\na,3,100,0.2\nb,0,50,0.4\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.p(), 2);
        assert_eq!(d.areas[1].x, vec![1.0, 0.4]);
    }

    #[test]
    fn area_file_errors() {
        assert!(matches!(area_csv("area,y,N\na,-1,10\nb,2,10\n"), Err(DataError::NonIntegerCount { row: 1, .. })));
        assert!(matches!(area_csv("area,y,N\na,1.5,10\nb,2,10\n"), Err(DataError::NonIntegerCount { .. })));
        assert!(matches!(area_csv("area,y,N\na,1,0\nb,2,10\n"), Err(DataError::NonPositivePopulation { .. })));
        assert!(matches!(area_csv("area,y,N\na,1,4\na,2,10\n"), Err(DataError::DuplicateAreaId(_))));
        assert!(matches!(area_csv("area,N\na,4\nb,10\n"), Err(DataError::MissingColumn(c)) if c == "y"));
        assert!(matches!(area_csv("area,y,N\na,1,4\n"), Err(DataError::TooFewAreas(1))));
        assert!(matches!(area_csv("area,y,N,x\na,1,4,abc\nb,1,4,1\n"), Err(DataError::InvalidNumber { .. })));
    }

    #[test]
    fn area_round_trip_is_exact() {
        let d = area_csv("area,y,N,u,v\na,3,100,0.1,0.3333333333333333\nb,7,250,1e-7,2.5\nc,0,9,0.7,0\n").unwrap();
        let mut buf = Vec::new();
        write_area_csv_to(&d, &mut buf).unwrap();
        let back = area_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(d, back);
    }

    const UNITS: &str = "area,y,m,w,a,b\nd1,1,1,2,1,0\nd1,0,1,3,0,1\nd2,1,1,1,1,1\n";
    const SIZES: &str = "area,class,N\nd1,1|0,10\nd1,0|1,20\nd1,1|1,5\nd2,1|1,7\nd2,0|1,3\n";

    #[test]
    fn unit_file_classes() {
        let d = unit_csv(UNITS, SIZES).unwrap();
        assert_eq!(d.num_areas(), 2);
        assert_eq!(d.num_classes(), 3);
        assert_eq!(d.classes[0], vec![1.0, 1.0, 0.0]);
        assert_eq!(d.class_sizes, vec![vec![10, 20, 5], vec![0, 3, 7]]);
        assert_eq!(d.units[2].class, 2);
        assert_eq!(d.populations(), vec![35.0, 10.0]);
    }

    #[test]
    fn single_area_single_class() {
        let d = unit_csv("area,y,w,a\nz,1,1,0\nz,0,1,0\n", "area,class,N\nz,0,40\n").unwrap();
        assert_eq!(d.num_classes(), 1);
        assert_eq!(d.class_sizes, vec![vec![40]]);
        assert!(d.units.iter().all(|u| u.m == 1));
    }

    #[test]
    fn unknown_class_rejected() {
        let err = unit_csv("area,y,w,a\nz,1,1,0.5\n", "area,class,N\nz,0,40\nz,1,3\n").unwrap_err();
        assert!(matches!(err, DataError::UnknownClass { row: 1, .. }));
    }

    #[test]
    fn class_smaller_than_sample_rejected() {
        let err = unit_csv("area,y,w,a\nz,1,1,0\nz,1,1,0\n", "area,class,N\nz,0,1\n").unwrap_err();
        assert!(matches!(err, DataError::InconsistentClassCount(_)));
    }

    #[test]
    fn direct_estimates_hand_computed() {
        let d = unit_csv(
            "area,y,w,x1,x2\nq,1,2,0.5,1\nq,0,3,0.25,0\n",
            "area,class,N\nq,0.5|1,10\nq,0.25|0,10\n",
        )
        .unwrap();
        let e = &direct_estimators(&d).unwrap()[0];
        assert_eq!(e.y_total, 2.0);
        assert_eq!(e.n_total, 5.0);
        assert_eq!(e.x_means[0], (2.0 * 0.5 + 3.0 * 0.25) / 5.0);
        assert_eq!(e.x_means[1], 2.0 / 5.0);
        assert_eq!(e.class_totals.iter().sum::<f64>(), e.n_total);
    }

    #[test]
    fn unit_weights_reduce_to_counts() {
        let d = unit_csv("area,y,w,a\nz,1,1,0\nz,0,1,1\nz,1,1,1\n", "area,class,N\nz,0,5\nz,1,5\n").unwrap();
        let e = &direct_estimators(&d).unwrap()[0];
        assert_eq!(e.y_total, 2.0);
        assert_eq!(e.n_total, 3.0);
        assert_eq!(e.x_means[0], 2.0 / 3.0);
    }

    #[test]
    fn exhaustive_category_shares_sum_to_one() {
        // three mutually exclusive indicators
        let d = unit_csv(
            "area,y,w,c1,c2,c3\nz,1,1.5,1,0,0\nz,0,2,0,1,0\nz,0,0.5,0,0,1\nz,1,4,0,1,0\n",
            "area,class,N\nz,1|0|0,9\nz,0|1|0,9\nz,0|0|1,9\n",
        )
        .unwrap();
        let e = &direct_estimators(&d).unwrap()[0];
        assert!((e.x_means.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn area_from_direct_population_flag() {
        let d = unit_csv(UNITS, SIZES).unwrap();
        let est = direct_estimators(&d).unwrap();
        let names = d.covariate_names.clone();
        let sup = area_dataset_from_direct(&est, names.clone(), &PopulationSource::Supplied(vec![35, 10])).unwrap();
        assert_eq!(sup.areas[0].population, 35);
        let est_pop = area_dataset_from_direct(&est, names, &PopulationSource::Estimated).unwrap();
        assert_eq!(est_pop.areas[0].population, 5);
        assert_eq!(est_pop.areas[0].y, 2);
    }
}
