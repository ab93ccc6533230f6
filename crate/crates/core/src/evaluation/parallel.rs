//! Space × time fan-out of independent point experiments.
//!
//! Every target point of the prediction region is forecast from its own
//! association window, once per time slide. Tasks share only the immutable
//! grid. Results are collected by task index, so pooled statistics do not
//! depend on execution order or thread count.

use std::fmt::Write as _;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_point_experiment, PointReport};
use crate::error::{Error, Result};
use crate::grid::{GridSeries, SamplingConfig};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParallelRunSpec {
    /// Sampling of the region's central target; other targets reuse its
    /// window sizes and timing.
    pub base: SamplingConfig,
    /// Target points per region row / column. The region is centred on
    /// `base.center_*` (for even counts the extra row/column lies below/left).
    pub region_rows: usize,
    pub region_cols: usize,
    /// Number of time slides per point.
    pub t_span: usize,
    /// Grid steps between consecutive slides.
    pub slide_stride: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Task `i` trains with seed `base_seed + i`.
    pub base_seed: u64,
    /// Worker threads; `None` uses all cores.
    pub threads: Option<usize>,
}

impl ParallelRunSpec {
    pub fn task_count(&self) -> usize {
        self.region_rows * self.region_cols * self.t_span
    }

    /// Sampling config and seed of every task, in task-index order
    /// (region row, region column, slide).
    pub fn tasks(&self) -> Vec<(SamplingConfig, usize, u64)> {
        let row0 = self.base.center_row as isize - (self.region_rows as isize - 1) / 2;
        let col0 = self.base.center_col as isize - (self.region_cols as isize - 1) / 2;
        let mut out = Vec::with_capacity(self.task_count());
        for r in 0..self.region_rows {
            for c in 0..self.region_cols {
                for s in 0..self.t_span {
                    let idx = out.len();
                    let cfg = SamplingConfig {
                        center_row: (row0 + r as isize).max(0) as usize,
                        center_col: (col0 + c as isize).max(0) as usize,
                        t_start: self.base.t_start + s * self.slide_stride,
                        ..self.base
                    };
                    out.push((cfg, s, self.base_seed.wrapping_add(idx as u64)));
                }
            }
        }
        out
    }

    pub fn validate(&self, grid: &GridSeries) -> Result<()> {
        if self.region_rows == 0 || self.region_cols == 0 || self.t_span == 0 {
            return Err(Error::Config("region and t_span must be non-empty".into()));
        }
        if self.t_span > 1 && self.slide_stride == 0 {
            return Err(Error::Config("slide_stride must be positive when t_span > 1".into()));
        }
        let row0 = self.base.center_row as isize - (self.region_rows as isize - 1) / 2;
        let col0 = self.base.center_col as isize - (self.region_cols as isize - 1) / 2;
        if row0 < 0 || col0 < 0 {
            return Err(Error::Bounds("prediction region extends past the grid origin".into()));
        }
        for (cfg, _, _) in self.tasks() {
            cfg.validate(grid)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskOutcome {
    Done(PointReport),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub index: usize,
    pub sampling: SamplingConfig,
    pub slide: usize,
    pub seed: u64,
    pub outcome: TaskOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRmse {
    /// 1-based forecast step.
    pub step: usize,
    pub rmse: f64,
    pub rmse_persistence: f64,
    pub n_tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelReport {
    /// Pooled over all successful tasks.
    pub per_step: Vec<StepRmse>,
    /// Pooled over space only, one curve per slide.
    pub per_slide: Vec<Vec<StepRmse>>,
    pub tasks: Vec<TaskRecord>,
    pub failures: usize,
}

/// Per-step RMSE pooled jointly over all squared errors of `reports`.
fn pool_steps<'a>(reports: impl Iterator<Item = &'a PointReport> + Clone, horizon: usize) -> Vec<StepRmse> {
    (0..horizon)
        .map(|s| {
            let (mut sq, mut sq_p, mut n) = (0.0, 0.0, 0usize);
            for r in reports.clone() {
                sq += r.model.per_step_error[s].powi(2);
                sq_p += r.persistence.per_step_error[s].powi(2);
                n += 1;
            }
            let div = n.max(1) as f64;
            StepRmse {
                step: s + 1,
                rmse: if n == 0 { f64::NAN } else { (sq / div).sqrt() },
                rmse_persistence: if n == 0 { f64::NAN } else { (sq_p / div).sqrt() },
                n_tasks: n,
            }
        })
        .collect()
}

pub fn run_parallel_experiment(grid: &GridSeries, spec: &ParallelRunSpec) -> Result<ParallelReport> {
    run_parallel_experiment_ordered(grid, spec, None)
}

/// Like [`run_parallel_experiment`], dispatching tasks in the given order
/// (a permutation of task indices).
pub fn run_parallel_experiment_ordered(
    grid: &GridSeries,
    spec: &ParallelRunSpec,
    order: Option<&[usize]>,
) -> Result<ParallelReport> {
    spec.validate(grid)?;
    let tasks = spec.tasks();
    let order: Vec<usize> = match order {
        Some(o) => {
            let mut sorted = o.to_vec();
            sorted.sort_unstable();
            if sorted != (0..tasks.len()).collect::<Vec<_>>() {
                return Err(Error::Config("execution order is not a permutation of the tasks".into()));
            }
            o.to_vec()
        }
        None => (0..tasks.len()).collect(),
    };

    let run = |&idx: &usize| {
        let (sampling, slide, seed) = tasks[idx];
        let train = TrainConfig { seed, ..spec.train };
        let outcome = match run_point_experiment(grid, &sampling, &spec.model, &train) {
            Ok(r) => TaskOutcome::Done(r),
            Err(e) => {
                log::warn!("task {idx} failed: {e}");
                TaskOutcome::Failed(e.to_string())
            }
        };
        TaskRecord {
            index: idx,
            sampling,
            slide,
            seed,
            outcome,
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = spec.threads {
        builder = builder.num_threads(n);
    }
    let workers = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut records: Vec<TaskRecord> = workers.install(|| order.par_iter().map(run).collect());
    records.sort_by_key(|r| r.index);

    let horizon = spec.base.l - 1;
    let done = |slide: Option<usize>| {
        records.iter().filter_map(move |r| match &r.outcome {
            TaskOutcome::Done(p) if slide.is_none_or(|s| s == r.slide) => Some(p),
            _ => None,
        })
    };
    let per_step = pool_steps(done(None), horizon);
    let per_slide = (0..spec.t_span).map(|s| pool_steps(done(Some(s)), horizon)).collect();
    let failures = records
        .iter()
        .filter(|r| matches!(r.outcome, TaskOutcome::Failed(_)))
        .count();
    Ok(ParallelReport {
        per_step,
        per_slide,
        tasks: records,
        failures,
    })
}

/// `step,rmse,rmse_persistence,n_tasks`
pub fn per_step_csv(report: &ParallelReport) -> String {
    let mut out = String::from("step,rmse,rmse_persistence,n_tasks\n");
    for s in &report.per_step {
        let _ = writeln!(out, "{},{:?},{:?},{}", s.step, s.rmse, s.rmse_persistence, s.n_tasks);
    }
    out
}

/// `slide,step,rmse,rmse_persistence,n_tasks`
pub fn per_slide_csv(report: &ParallelReport) -> String {
    let mut out = String::from("slide,step,rmse,rmse_persistence,n_tasks\n");
    for (slide, curve) in report.per_slide.iter().enumerate() {
        for s in curve {
            let _ = writeln!(out, "{slide},{},{:?},{:?},{}", s.step, s.rmse, s.rmse_persistence, s.n_tasks);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonStart {
    pub name: String,
    pub month: u32,
    pub day: u32,
}

/// Spring from 1 March, summer from 1 June, autumn from 1 September,
/// winter from 1 December.
pub fn meteorological_seasons() -> Vec<SeasonStart> {
    [("spring", 3), ("summer", 6), ("autumn", 9), ("winter", 12)]
        .into_iter()
        .map(|(name, month)| SeasonStart {
            name: name.into(),
            month,
            day: 1,
        })
        .collect()
}

/// One parallel experiment per season, each starting at the season's first
/// day in `year`.
pub fn run_seasonal_experiment(
    grid: &GridSeries,
    spec: &ParallelRunSpec,
    year: i32,
    seasons: &[SeasonStart],
) -> Result<Vec<(String, ParallelReport)>> {
    seasons
        .iter()
        .map(|season| {
            let date = NaiveDate::from_ymd_opt(year, season.month, season.day)
                .ok_or_else(|| Error::Config(format!("invalid season start {}-{}", season.month, season.day)))?;
            let t_start = grid.index_of_date(date).ok_or_else(|| {
                Error::Bounds(format!(
                    "season {} start {} is not a step of the grid (year {})",
                    season.name,
                    date,
                    date.year()
                ))
            })?;
            let spec = ParallelRunSpec {
                base: SamplingConfig { t_start, ..spec.base },
                ..*spec
            };
            Ok((season.name.clone(), run_parallel_experiment(grid, &spec)?))
        })
        .collect()
}
