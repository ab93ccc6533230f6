//! Grid file formats.
//!
//! `raw` is the native format: `key=value` header lines followed by a
//! `t,row,col,value` CSV payload with one line per cell. Values are written
//! in shortest round-trip form, so a write/read cycle is bit-exact. Missing
//! cells are written as `NaN`.
//!
//! ```text
//! # stfm grid v1
//! T=2
//! H=1
//! W=2
//! dt_days=1
//! start=2013-10-01
//! lat0=10.125
//! lon0=115.125
//! cell_deg=0.25
//! t,row,col,value
//! 0,0,0,28.61
//! ...
//! ```
//!
//! `csv` reads long-form extracts as served by OISST/ERDDAP: a header row
//! naming `time`, `latitude`, `longitude` and one value column, optionally
//! followed by a units row. Grid geometry and time step are inferred;
//! absent or empty cells become missing.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{GridMeta, GridSeries, TimeOrigin};
use crate::error::{Error, Result};

const PAYLOAD_HEADER: &str = "t,row,col,value";
const HEADER_KEYS: [&str; 8] = ["T", "H", "W", "dt_days", "start", "lat0", "lon0", "cell_deg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridFormat {
    #[default]
    Raw,
    Csv,
}

impl FromStr for GridFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(GridFormat::Raw),
            "csv" => Ok(GridFormat::Csv),
            other => Err(Error::Format(format!("unknown grid format {other:?}"))),
        }
    }
}

pub fn load_grid(path: impl AsRef<Path>, format: GridFormat) -> Result<GridSeries> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    read_grid(&text, format)
}

pub fn read_grid(text: &str, format: GridFormat) -> Result<GridSeries> {
    match format {
        GridFormat::Raw => read_raw(text),
        GridFormat::Csv => read_long_csv(text),
    }
}

pub fn write_grid(grid: &GridSeries, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), grid_to_raw(grid)).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn grid_to_raw(grid: &GridSeries) -> String {
    let meta = grid.meta();
    let mut out = String::with_capacity(grid.values().len() * 24 + 256);
    out.push_str("# stfm grid v1\n");
    let _ = writeln!(out, "T={}", grid.t_len());
    let _ = writeln!(out, "H={}", grid.rows());
    let _ = writeln!(out, "W={}", grid.cols());
    let _ = writeln!(out, "dt_days={:?}", meta.dt_days);
    let _ = writeln!(out, "start={}", meta.start);
    let _ = writeln!(out, "lat0={:?}", meta.lat0);
    let _ = writeln!(out, "lon0={:?}", meta.lon0);
    let _ = writeln!(out, "cell_deg={:?}", meta.cell_deg);
    out.push_str(PAYLOAD_HEADER);
    out.push('\n');
    for t in 0..grid.t_len() {
        for r in 0..grid.rows() {
            for c in 0..grid.cols() {
                if grid.is_missing(t, r, c) {
                    let _ = writeln!(out, "{t},{r},{c},NaN");
                } else {
                    let _ = writeln!(out, "{t},{r},{c},{:?}", grid.get(t, r, c));
                }
            }
        }
    }
    out
}

fn read_raw(text: &str) -> Result<GridSeries> {
    let mut header: HashMap<&str, &str> = HashMap::new();
    let mut lines = text.lines().enumerate();
    let mut saw_payload = false;
    for (_, line) in lines.by_ref() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == PAYLOAD_HEADER {
            saw_payload = true;
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("header line {line:?} is not key=value")))?;
        let (k, v) = (k.trim(), v.trim());
        if !HEADER_KEYS.contains(&k) {
            return Err(Error::Format(format!("unknown header key {k:?}")));
        }
        if let Some(prev) = header.insert(k, v) {
            if prev != v {
                return Err(Error::Format(format!("header key {k} given twice ({prev} vs {v})")));
            }
        }
    }
    if !saw_payload {
        return Err(Error::Format(format!("missing payload header {PAYLOAD_HEADER:?}")));
    }
    let get = |k: &str| {
        header
            .get(k)
            .copied()
            .ok_or_else(|| Error::Format(format!("missing header key {k}")))
    };
    let dim = |k: &str| -> Result<usize> {
        get(k)?
            .parse::<usize>()
            .map_err(|_| Error::Format(format!("header {k} must be a non-negative integer")))
    };
    let num = |k: &str| -> Result<f64> {
        get(k)?
            .parse::<f64>()
            .map_err(|_| Error::Format(format!("header {k} must be numeric")))
    };
    let (t_len, rows, cols) = (dim("T")?, dim("H")?, dim("W")?);
    if t_len == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format(format!("header dims must be positive (T={t_len}, H={rows}, W={cols})")));
    }
    let meta = GridMeta {
        start: get("start")?.parse()?,
        dt_days: num("dt_days")?,
        lat0: num("lat0")?,
        lon0: num("lon0")?,
        cell_deg: num("cell_deg")?,
    };

    let n = t_len * rows * cols;
    let mut values = vec![f64::NAN; n];
    let mut seen = vec![false; n];
    let mut missing = vec![false; n];
    let mut count = 0usize;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        count += 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let index = |s: &str, what: &str| -> Result<usize> {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("{what} index {s:?} is not an integer"),
            })
        };
        let (t, r, c) = (index(fields[0], "t")?, index(fields[1], "row")?, index(fields[2], "col")?);
        if count > n {
            continue;
        }
        if t >= t_len || r >= rows || c >= cols {
            return Err(Error::Dimension(format!(
                "line {lineno}: cell ({t}, {r}, {c}) outside T={t_len} H={rows} W={cols}"
            )));
        }
        let off = (t * rows + r) * cols + c;
        if seen[off] {
            return Err(Error::Format(format!("line {lineno}: cell ({t}, {r}, {c}) given twice")));
        }
        seen[off] = true;
        let raw = fields[3];
        if raw.is_empty() || raw.eq_ignore_ascii_case("nan") {
            missing[off] = true;
            continue;
        }
        let v: f64 = raw.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("value {raw:?} is not numeric"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("value {raw:?} is not finite"),
            });
        }
        values[off] = v;
    }
    if count != n {
        return Err(Error::Dimension(format!(
            "header declares T*H*W = {n} cells but payload has {count} rows"
        )));
    }
    GridSeries::with_mask(t_len, rows, cols, values, Some(missing), meta)
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim().trim_matches('"');
    NaiveDate::parse_from_str(s.get(..10)?, "%Y-%m-%d").ok()
}

/// Sorted distinct coordinates and their uniform spacing, if any.
fn axis(values: &[f64]) -> Result<(Vec<f64>, Option<f64>)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if v.len() < 2 {
        return Ok((v, None));
    }
    let step = v[1] - v[0];
    if v.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-6 * step.abs().max(1.0)) {
        return Err(Error::Format("coordinates are not uniformly spaced".into()));
    }
    Ok((v, Some(step)))
}

fn read_long_csv(text: &str) -> Result<GridSeries> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or_else(|| Error::Format("empty csv".into()))?;
    let names: Vec<String> = head
        .split(',')
        .map(|s| s.trim().trim_matches('"').to_ascii_lowercase())
        .collect();
    let find = |cands: &[&str]| names.iter().position(|n| cands.contains(&n.as_str()));
    let ti = find(&["time", "date"]).ok_or_else(|| Error::Format("csv needs a time column".into()))?;
    let lai = find(&["latitude", "lat"]).ok_or_else(|| Error::Format("csv needs a latitude column".into()))?;
    let loi = find(&["longitude", "lon"]).ok_or_else(|| Error::Format("csv needs a longitude column".into()))?;
    let vi = (0..names.len())
        .find(|i| ![ti, lai, loi].contains(i) && !matches!(names[*i].as_str(), "zlev" | "depth"))
        .ok_or_else(|| Error::Format("csv needs a value column".into()))?;

    let mut records: Vec<(NaiveDate, f64, f64, Option<f64>)> = Vec::new();
    for (pos, (idx, line)) in lines.enumerate() {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(|s| s.trim().trim_matches('"')).collect();
        if fields.len() != names.len() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {} fields, found {}", names.len(), fields.len()),
            });
        }
        let lat = fields[lai].parse::<f64>();
        if pos == 0 && lat.is_err() {
            continue; // units row
        }
        let bad = |what: &str| Error::Parse {
            line: lineno,
            msg: format!("{what} is not numeric"),
        };
        let date = parse_date(fields[ti]).ok_or_else(|| Error::Parse {
            line: lineno,
            msg: format!("time {:?} is not a date", fields[ti]),
        })?;
        let lat = lat.map_err(|_| bad("latitude"))?;
        let lon = fields[loi].parse::<f64>().map_err(|_| bad("longitude"))?;
        let raw = fields[vi];
        let value = if raw.is_empty() || raw.eq_ignore_ascii_case("nan") {
            None
        } else {
            let v = raw.parse::<f64>().map_err(|_| bad("value"))?;
            v.is_finite().then_some(v)
        };
        records.push((date, lat, lon, value));
    }
    if records.is_empty() {
        return Err(Error::Format("csv has no data rows".into()));
    }

    let dates: BTreeMap<NaiveDate, ()> = records.iter().map(|r| (r.0, ())).collect();
    let dates: Vec<NaiveDate> = dates.into_keys().collect();
    let dt_days = match dates.windows(2).next() {
        Some(w) => {
            let step = (w[1] - w[0]).num_days();
            if dates.windows(2).any(|w| (w[1] - w[0]).num_days() != step) {
                return Err(Error::Format("time axis is not uniformly spaced".into()));
            }
            step as f64
        }
        None => 1.0,
    };
    let (lats, lat_step) = axis(&records.iter().map(|r| r.1).collect::<Vec<_>>())?;
    let (lons, lon_step) = axis(&records.iter().map(|r| r.2).collect::<Vec<_>>())?;
    let cell_deg = match (lat_step, lon_step) {
        (Some(a), Some(b)) if (a - b).abs() > 1e-6 => {
            return Err(Error::Format(format!("latitude step {a} differs from longitude step {b}")))
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => {
            log::warn!("single-cell extract; assuming 0.25 degree cells");
            0.25
        }
    };
    let meta = GridMeta {
        start: TimeOrigin::Date(dates[0]),
        dt_days,
        lat0: lats[0],
        lon0: lons[0],
        cell_deg,
    };
    let (t_len, rows, cols) = (dates.len(), lats.len(), lons.len());
    let n = t_len * rows * cols;
    let mut values = vec![f64::NAN; n];
    let mut missing = vec![true; n];
    for (date, lat, lon, value) in records {
        let t = ((date - dates[0]).num_days() as f64 / dt_days).round() as usize;
        let r = ((lat - meta.lat0) / cell_deg).round() as usize;
        let c = ((lon - meta.lon0) / cell_deg).round() as usize;
        let off = (t * rows + r) * cols + c;
        if let Some(v) = value {
            values[off] = v;
            missing[off] = false;
        }
    }
    GridSeries::with_mask(t_len, rows, cols, values, Some(missing), meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(t: usize, h: usize, w: usize) -> String {
        format!("T={t}\nH={h}\nW={w}\ndt_days=1\nstart=0\nlat0=0\nlon0=0\ncell_deg=0.25\n{PAYLOAD_HEADER}\n")
    }

    #[test]
    fn minimal_grid() {
        let g = read_grid(&format!("{}0,0,0,0\n", header(1, 1, 1)), GridFormat::Raw).unwrap();
        assert_eq!((g.t_len(), g.rows(), g.cols()), (1, 1, 1));
        assert_eq!(g.values(), &[0.0]);
    }

    #[test]
    fn payload_length_mismatch() {
        let text = format!("{}0,0,0,1\n0,0,1,2\n1,0,0,3\n", header(2, 1, 2));
        assert!(matches!(read_grid(&text, GridFormat::Raw), Err(Error::Dimension(_))));
    }

    #[test]
    fn header_errors() {
        let missing_key = format!("T=1\nH=1\nW=1\n{PAYLOAD_HEADER}\n0,0,0,1\n");
        assert!(matches!(read_grid(&missing_key, GridFormat::Raw), Err(Error::Format(_))));
        let contradictory = format!("T=2\n{}0,0,0,1\n", header(1, 1, 1));
        assert!(matches!(read_grid(&contradictory, GridFormat::Raw), Err(Error::Format(_))));
        assert!(matches!(read_grid("T=1\n", GridFormat::Raw), Err(Error::Format(_))));
    }

    #[test]
    fn non_numeric_cell_reports_line() {
        let text = format!("{}0,0,0,1\n0,0,1,abc\n", header(1, 1, 2));
        match read_grid(&text, GridFormat::Raw) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 11),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nan_becomes_missing() {
        let text = format!("{}0,0,0,1.5\n0,0,1,NaN\n", header(1, 1, 2));
        let g = read_grid(&text, GridFormat::Raw).unwrap();
        assert!(g.is_missing(0, 0, 1));
        assert!(!g.is_missing(0, 0, 0));
        let again = read_grid(&grid_to_raw(&g), GridFormat::Raw).unwrap();
        assert!(again.is_missing(0, 0, 1));
    }

    #[test]
    fn long_csv_with_units_row() {
        let text = "time,zlev,latitude,longitude,sst\n\
                    UTC,m,degrees_north,degrees_east,degree_C\n\
                    2013-10-01T12:00:00Z,0.0,10.125,115.125,28.5\n\
                    2013-10-01T12:00:00Z,0.0,10.125,115.375,28.6\n\
                    2013-10-02T12:00:00Z,0.0,10.125,115.125,28.4\n\
                    2013-10-02T12:00:00Z,0.0,10.125,115.375,NaN\n";
        let g = read_grid(text, GridFormat::Csv).unwrap();
        assert_eq!((g.t_len(), g.rows(), g.cols()), (2, 1, 2));
        assert_eq!(g.meta().cell_deg, 0.25);
        assert_eq!(g.get(1, 0, 0), 28.4);
        assert!(g.is_missing(1, 0, 1));
        assert_eq!(g.meta().start, TimeOrigin::Date(NaiveDate::from_ymd_opt(2013, 10, 1).unwrap()));
    }
}
