//! Batch execution: seeds × sweep points × modes, result files, and the
//! across-seed summary.
//!
//! Output layout under the output directory:
//! `results.csv` (one row per run), `config.json` (resolved config),
//! `overlays/<run>.json`, `reports/<run>-<mode>.json` and, when tracing,
//! `traces/<run>-<mode>.jsonl`.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Mode, ScenarioConfig};
use crate::error::RunError;
use crate::metrics::{build_report, MetricsReport};
use crate::overlay::{generate_overlay, Overlay};
use crate::simulation::{run_mode, ScenarioResult, SimulationParams};
use crate::trace::{JsonLines, NoTrace};

/// Number of delivery-ratio columns in the CSV.
pub const CSV_LAYERS: usize = 6;

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub sweep_index: usize,
    pub sweep_value: Option<f64>,
    pub config: ScenarioConfig,
    pub mode: Mode,
    pub result: ScenarioResult,
    pub report: MetricsReport,
    pub trace: Option<Vec<u8>>,
}

impl RunOutput {
    /// File stem shared by the overlay, report and trace of this run.
    pub fn stem(&self) -> String {
        run_stem(self.seed, self.sweep_value.map(|_| self.sweep_index))
    }
}

fn run_stem(seed: u64, sweep_index: Option<usize>) -> String {
    match sweep_index {
        Some(i) => format!("seed{seed}-p{i}"),
        None => format!("seed{seed}"),
    }
}

fn run_one(
    overlay: &Overlay,
    mode: Mode,
    params: &SimulationParams,
    trace: bool,
) -> Result<(ScenarioResult, Option<Vec<u8>>), crate::error::SimulationError> {
    if trace {
        let mut sink = JsonLines::new(Vec::new());
        let r = run_mode(mode, overlay, params, &mut sink)?;
        let bytes = sink.finish().expect("writes to memory do not fail");
        Ok((r, Some(bytes)))
    } else {
        Ok((run_mode(mode, overlay, params, &mut NoTrace)?, None))
    }
}

/// Runs every (seed, sweep point, mode) combination. Runs execute in
/// parallel; the output is in (seed, sweep point, mode) order.
pub fn execute(
    config: &ScenarioConfig,
    params: &SimulationParams,
    trace: bool,
) -> Result<Vec<RunOutput>, RunError> {
    config.validate()?;
    let points = config.sweep_points()?;
    let jobs: Vec<(u64, usize)> = config
        .seeds
        .iter()
        .flat_map(|s| (0..points.len()).map(move |i| (s, i)))
        .collect();
    let nested: Vec<Result<Vec<RunOutput>, RunError>> = jobs
        .par_iter()
        .map(|&(seed, i)| {
            let (value, cfg) = &points[i];
            let overlay = generate_overlay(cfg, seed)?;
            config
                .modes
                .iter()
                .map(|&mode| {
                    let (result, trace) =
                        run_one(&overlay, mode, params, trace).map_err(|source| {
                            RunError::Simulation {
                                seed,
                                mode: mode.to_string(),
                                source,
                            }
                        })?;
                    Ok(RunOutput {
                        seed,
                        sweep_index: i,
                        sweep_value: *value,
                        config: cfg.clone(),
                        mode,
                        report: build_report(&result),
                        result,
                        trace,
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for runs in nested {
        out.extend(runs?);
    }
    Ok(out)
}

/// One CSV row: run provenance followed by the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub seed: u64,
    pub mode: Mode,
    pub n_upstream: usize,
    pub n_downstream: usize,
    pub degree: usize,
    pub upload_lo: f64,
    pub upload_hi: f64,
    pub delivery_ratio_0: Option<f64>,
    pub delivery_ratio_1: Option<f64>,
    pub delivery_ratio_2: Option<f64>,
    pub delivery_ratio_3: Option<f64>,
    pub delivery_ratio_4: Option<f64>,
    pub delivery_ratio_5: Option<f64>,
    pub useless_ratio: f64,
    pub cost_all: Option<f64>,
    pub cost_q1: Option<f64>,
    pub cost_q2: Option<f64>,
    pub cost_q3: Option<f64>,
    pub max_rounds: u32,
    pub total_rounds: u32,
    /// Colon separated class shares, Q1 first.
    pub class_shares: String,
}

impl CsvRow {
    pub fn new(config: &ScenarioConfig, report: &MetricsReport) -> Self {
        let d = |k: usize| report.delivery_ratio.get(k).copied().flatten();
        CsvRow {
            seed: report.seed,
            mode: report.mode,
            n_upstream: config.n_upstream,
            n_downstream: config.n_downstream,
            degree: config.degree,
            upload_lo: config.upload_range.lo(),
            upload_hi: config.upload_range.hi(),
            delivery_ratio_0: d(0),
            delivery_ratio_1: d(1),
            delivery_ratio_2: d(2),
            delivery_ratio_3: d(3),
            delivery_ratio_4: d(4),
            delivery_ratio_5: d(5),
            useless_ratio: report.useless_chunk_ratio,
            cost_all: report.avg_cost,
            cost_q1: report.class_cost(0),
            cost_q2: report.class_cost(1),
            cost_q3: report.class_cost(2),
            max_rounds: report.convergence.max_rounds,
            total_rounds: report.convergence.total_rounds,
            class_shares: config
                .classes
                .iter()
                .map(|c| c.share.to_string())
                .collect::<Vec<_>>()
                .join(":"),
        }
    }

    fn group_key(&self) -> (Mode, usize, usize, usize, u64, u64, String) {
        (
            self.mode,
            self.n_upstream,
            self.n_downstream,
            self.degree,
            self.upload_lo.to_bits(),
            self.upload_hi.to_bits(),
            self.class_shares.clone(),
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), RunError> {
    let csv_err = |source| RunError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_rows(path: &Path) -> Result<Vec<CsvRow>, RunError> {
    let csv_err = |source| RunError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err)
}

/// Writes every output file of a batch. Returns the CSV rows written.
pub fn write_outputs(
    out: &Path,
    config: &ScenarioConfig,
    runs: &[RunOutput],
) -> Result<Vec<CsvRow>, RunError> {
    for sub in ["overlays", "reports", "traces"] {
        if sub == "traces" && runs.iter().all(|r| r.trace.is_none()) {
            continue;
        }
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let resolved = serde_json::to_string_pretty(config).expect("config serializes");
    write_file(&out.join("config.json"), resolved.as_bytes())?;
    let mut rows = Vec::with_capacity(runs.len());
    for r in runs {
        let stem = r.stem();
        let overlay_path = out.join("overlays").join(format!("{stem}.json"));
        if r.mode == config.modes[0] {
            write_file(&overlay_path, r.result.overlay.to_json().as_bytes())?;
        }
        let report_path = out.join("reports").join(format!("{stem}-{}.json", r.mode));
        write_file(&report_path, r.report.to_json().as_bytes())?;
        if let Some(t) = &r.trace {
            let p = out.join("traces").join(format!("{stem}-{}.jsonl", r.mode));
            write_file(&p, t)?;
        }
        rows.push(CsvRow::new(&r.config, &r.report));
    }
    write_csv(&out.join("results.csv"), &rows)?;
    Ok(rows)
}

/// Means across seeds of every metric column, one row per distinct
/// (mode, configuration) in first-appearance order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub mode: Mode,
    pub n_upstream: usize,
    pub n_downstream: usize,
    pub degree: usize,
    pub upload_lo: f64,
    pub upload_hi: f64,
    pub class_shares: String,
    pub runs: usize,
    pub delivery_ratio_0: Option<f64>,
    pub delivery_ratio_1: Option<f64>,
    pub delivery_ratio_2: Option<f64>,
    pub delivery_ratio_3: Option<f64>,
    pub delivery_ratio_4: Option<f64>,
    pub delivery_ratio_5: Option<f64>,
    pub useless_ratio: f64,
    pub cost_all: Option<f64>,
    pub cost_q1: Option<f64>,
    pub cost_q2: Option<f64>,
    pub cost_q3: Option<f64>,
    pub max_rounds: u32,
    pub mean_total_rounds: f64,
}

fn mean_opt<'a>(vals: impl Iterator<Item = &'a Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = vals.flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

pub fn summarize(rows: &[CsvRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<(_, Vec<&CsvRow>)> = Vec::new();
    for r in rows {
        let key = r.group_key();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(_, g)| {
            let n = g.len() as f64;
            let first = g[0];
            macro_rules! m {
                ($f:ident) => {
                    mean_opt(g.iter().map(|r| &r.$f))
                };
            }
            SummaryRow {
                mode: first.mode,
                n_upstream: first.n_upstream,
                n_downstream: first.n_downstream,
                degree: first.degree,
                upload_lo: first.upload_lo,
                upload_hi: first.upload_hi,
                class_shares: first.class_shares.clone(),
                runs: g.len(),
                delivery_ratio_0: m!(delivery_ratio_0),
                delivery_ratio_1: m!(delivery_ratio_1),
                delivery_ratio_2: m!(delivery_ratio_2),
                delivery_ratio_3: m!(delivery_ratio_3),
                delivery_ratio_4: m!(delivery_ratio_4),
                delivery_ratio_5: m!(delivery_ratio_5),
                useless_ratio: g.iter().map(|r| r.useless_ratio).sum::<f64>() / n,
                cost_all: m!(cost_all),
                cost_q1: m!(cost_q1),
                cost_q2: m!(cost_q2),
                cost_q3: m!(cost_q3),
                max_rounds: g.iter().map(|r| r.max_rounds).max().unwrap_or(0),
                mean_total_rounds: g.iter().map(|r| f64::from(r.total_rounds)).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Re-runs one mode on a saved overlay.
pub fn replay(
    overlay_path: &Path,
    mode: Mode,
    params: &SimulationParams,
) -> Result<MetricsReport, RunError> {
    let text = fs::read_to_string(overlay_path).map_err(io_err(overlay_path))?;
    let overlay = Overlay::from_json(&text).map_err(|source| RunError::Json {
        path: overlay_path.to_path_buf(),
        source,
    })?;
    let result = run_mode(mode, &overlay, params, &mut NoTrace).map_err(|source| {
        RunError::Simulation {
            seed: overlay.seed,
            mode: mode.to_string(),
            source,
        }
    })?;
    Ok(build_report(&result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SeedRange;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            n_upstream: 6,
            n_downstream: 20,
            degree: 2,
            seeds: SeedRange { first: 1, last: 3 },
            ..Default::default()
        }
    }

    #[test]
    fn run_order_and_count() {
        let runs = execute(&small(), &SimulationParams::default(), false).unwrap();
        let order: Vec<(u64, Mode)> = runs.iter().map(|r| (r.seed, r.mode)).collect();
        assert_eq!(
            order,
            vec![
                (1, Mode::Proposed),
                (1, Mode::Baseline),
                (2, Mode::Proposed),
                (2, Mode::Baseline),
                (3, Mode::Proposed),
                (3, Mode::Baseline)
            ]
        );
    }

    #[test]
    fn summary_means() {
        let runs = execute(&small(), &SimulationParams::default(), false).unwrap();
        let rows: Vec<CsvRow> = runs.iter().map(|r| CsvRow::new(&r.config, &r.report)).collect();
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].runs, 3);
        let mean: f64 = rows
            .iter()
            .filter(|r| r.mode == Mode::Proposed)
            .map(|r| r.useless_ratio)
            .sum::<f64>()
            / 3.0;
        assert!((s[0].useless_ratio - mean).abs() < 1e-12);
    }
}
