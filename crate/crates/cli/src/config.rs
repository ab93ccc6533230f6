//! Run configuration: TOML file, `--set` overrides and resolution against a
//! loaded grid.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use stfm::evaluation::ParallelRunSpec;
use stfm::grid::{GridFormat, GridSeries, SamplingConfig, TimeOrigin};
use stfm::model::{ModelConfig, Variant};
use stfm::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub parallel: ParallelSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Relative paths are taken from the config file's directory.
    pub grid: PathBuf,
    #[serde(default)]
    pub format: GridFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    /// Target point as `[lat, lon]` in degrees.
    pub center: Option<[f64; 2]>,
    /// Target point as `[row, col]` grid indices.
    pub center_cell: Option<[usize; 2]>,
    /// Side of the square association window in degrees.
    pub window: Option<f64>,
    /// Association half-window as `[rows, cols]` in cells.
    pub window_cells: Option<[usize; 2]>,
    /// Time between samples in grid time units; defaults to the grid step.
    pub delta_t: Option<f64>,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    /// Date of the first sample, or its step index.
    pub start: Option<TimeOrigin>,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            center: None,
            center_cell: None,
            window: None,
            window_cells: None,
            delta_t: None,
            m: 30,
            l: 15,
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub variant: Variant,
    pub hidden: usize,
    pub dropout: f64,
    pub decompose_size: usize,
    pub attention: bool,
    pub trend: bool,
    pub season: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(1, 1, 1);
        Self {
            variant: m.variant,
            hidden: m.hidden,
            dropout: m.dropout_rate,
            decompose_size: m.decompose_size,
            attention: m.use_attention,
            trend: m.use_trend,
            season: m.use_season,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParallelSection {
    /// Side of the square prediction region in degrees.
    pub region: Option<f64>,
    /// Prediction region as `[rows, cols]` target points.
    pub region_cells: Option<[usize; 2]>,
    pub t_span: usize,
    /// Grid steps between time slides.
    pub slide_stride: usize,
    pub base_seed: u64,
    pub threads: Option<usize>,
}

impl Default for ParallelSection {
    fn default() -> Self {
        Self {
            region: None,
            region_cells: None,
            t_span: 1,
            slide_stride: 1,
            base_seed: 0,
            threads: None,
        }
    }
}

/// Parses a `key=value` override; the value is read as a TOML literal and
/// falls back to a bare string.
pub fn parse_override(raw: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .with_context(|| format!("override {raw:?} is not of the form key=value"))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    ensure!(path.iter().all(|p| !p.is_empty()), "empty key segment in {key:?}");
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((path, parsed))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .with_context(|| format!("{p} is not a section"))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Bare TOML dates (`start = 2013-10-01`) become strings so they
/// deserialize like quoted ones.
fn dates_to_strings(value: &mut toml::Value) {
    match value {
        toml::Value::Datetime(d) => *value = toml::Value::String(d.to_string()),
        toml::Value::Table(t) => t.iter_mut().for_each(|(_, v)| dates_to_strings(v)),
        toml::Value::Array(a) => a.iter_mut().for_each(dates_to_strings),
        _ => {}
    }
}

impl RunConfig {
    /// Reads `path`, applies overrides and makes the grid path absolute.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut table: toml::Table = text
            .parse()
            .with_context(|| format!("parsing config {}", path.display()))?;
        for raw in overrides {
            let (key, value) = parse_override(raw)?;
            apply_override(&mut table, &key, value)?;
        }
        let mut value = toml::Value::Table(table);
        dates_to_strings(&mut value);
        let mut cfg: RunConfig = value
            .try_into()
            .with_context(|| format!("invalid config {}", path.display()))?;
        if cfg.data.grid.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.data.grid = base.join(&cfg.data.grid);
        }
        cfg.data.grid = std::path::absolute(&cfg.data.grid)
            .with_context(|| format!("resolving {}", cfg.data.grid.display()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load_grid(&self) -> Result<GridSeries> {
        stfm::grid::load_grid(&self.data.grid, self.data.format)
            .with_context(|| format!("loading grid {}", self.data.grid.display()))
    }

    pub fn sampling(&self, grid: &GridSeries) -> Result<SamplingConfig> {
        let s = &self.sampling;
        let (center_row, center_col) = match (s.center, s.center_cell) {
            (Some(_), Some(_)) => bail!("set only one of sampling.center and sampling.center_cell"),
            (Some([lat, lon]), None) => grid.cell_of(lat, lon)?,
            (None, Some([r, c])) => (r, c),
            (None, None) => bail!("sampling.center or sampling.center_cell is required"),
        };
        let (half_rows, half_cols) = match (s.window, s.window_cells) {
            (Some(_), Some(_)) => bail!("set only one of sampling.window and sampling.window_cells"),
            (Some(deg), None) => {
                let h = grid.half_cells(deg);
                (h, h)
            }
            (None, Some([r, c])) => (r, c),
            (None, None) => (0, 0),
        };
        let dt = grid.meta().dt_days;
        let stride = match s.delta_t {
            None => 1,
            Some(d) => {
                let ratio = d / dt;
                ensure!(
                    ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9,
                    "delta_t {d} is not a positive multiple of the grid step {dt}"
                );
                ratio.round() as usize
            }
        };
        let t_start = match s.start {
            None => 0,
            Some(TimeOrigin::Index(i)) => usize::try_from(i).context("sampling.start must be non-negative")?,
            Some(TimeOrigin::Date(d)) => grid
                .index_of_date(d)
                .with_context(|| format!("start date {d} is not a step of the grid"))?,
        };
        let cfg = SamplingConfig {
            center_row,
            center_col,
            half_rows,
            half_cols,
            m: s.m,
            l: s.l,
            stride,
            t_start,
        };
        cfg.validate(grid)?;
        Ok(cfg)
    }

    pub fn model(&self, sampling: &SamplingConfig) -> Result<ModelConfig> {
        let m = &self.model;
        let cfg = ModelConfig {
            n: sampling.variables(),
            m: sampling.m,
            l: sampling.l,
            hidden: m.hidden,
            dropout_rate: m.dropout,
            decompose_size: m.decompose_size,
            use_attention: m.attention,
            use_trend: m.trend,
            use_season: m.season,
            variant: m.variant,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parallel_spec(&self, grid: &GridSeries, threads: Option<usize>) -> Result<ParallelRunSpec> {
        let base = self.sampling(grid)?;
        let p = &self.parallel;
        let (region_rows, region_cols) = match (p.region, p.region_cells) {
            (Some(_), Some(_)) => bail!("set only one of parallel.region and parallel.region_cells"),
            (Some(deg), None) => {
                let n = 2 * grid.half_cells(deg) + 1;
                (n, n)
            }
            (None, Some([r, c])) => (r, c),
            (None, None) => (1, 1),
        };
        Ok(ParallelRunSpec {
            base,
            region_rows,
            region_cols,
            t_span: p.t_span,
            slide_stride: p.slide_stride,
            model: self.model(&base)?,
            train: self.train,
            base_seed: p.base_seed,
            threads: threads.or(p.threads),
        })
    }
}
