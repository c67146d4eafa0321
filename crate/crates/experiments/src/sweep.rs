//! Figure-analog batches and their CSV output.

use rayon::prelude::*;
use serde::Serialize;
use std::fs;
use std::path::Path;
use xltrack::tracker::PriorMode;

use crate::config::ExperimentConfig;
use crate::error::{ExpError, ExpResult};
use crate::run::{run_scenario, RunOutcome, RunSpec};

pub const CONVERGENCE_CSV: &str = "convergence.csv";
pub const CONVERGENCE_TRACE_CSV: &str = "convergence_trace.csv";
pub const SNR_CSV: &str = "nmse_vs_snr.csv";
pub const VR_CSV: &str = "vr_nmse_vs_snr.csv";
pub const PATHS_CSV: &str = "nmse_vs_paths.csv";
pub const SPEED_CSV: &str = "nmse_vs_speed.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const TIMING_CSV: &str = "timing.csv";

/// Files whose content depends only on the configuration.
pub const DETERMINISTIC_CSVS: [&str; 7] = [CONVERGENCE_CSV, CONVERGENCE_TRACE_CSV, SNR_CSV, VR_CSV, PATHS_CSV, SPEED_CSV, SUMMARY_CSV];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub experiment: String,
    pub mode: String,
    pub seed: u64,
    pub snr_db: f64,
    pub paths: usize,
    pub speed_kmh: f64,
    pub frame: usize,
    pub channel_nmse_db: Option<f64>,
    pub vr_nmse_db: Option<f64>,
    pub outer_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub mode: String,
    pub seed: u64,
    pub snr_db: f64,
    pub frame: usize,
    pub iteration: usize,
    pub channel_nmse_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub mode: String,
    pub snr_db: f64,
    pub paths: usize,
    pub speed_kmh: f64,
    pub metric: String,
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub experiment: String,
    pub mode: String,
    pub seed: u64,
    pub snr_db: f64,
    pub paths: usize,
    pub speed_kmh: f64,
    pub frames: usize,
    pub wall_ms: f64,
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Scenarios of one batch, in output order.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub experiment: &'static str,
    pub runs: Vec<RunOutcome>,
}

impl Batch {
    /// Per-frame metric rows.
    pub fn frame_rows(&self) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        for r in &self.runs {
            for f in &r.frames {
                rows.push(MetricRow {
                    experiment: self.experiment.to_string(),
                    mode: r.spec.mode.to_string(),
                    seed: r.spec.seed,
                    snr_db: r.spec.snr_db,
                    paths: r.spec.paths,
                    speed_kmh: r.spec.speed_kmh,
                    frame: f.frame,
                    channel_nmse_db: f.channel_nmse_db,
                    vr_nmse_db: f.vr_ratio.map(xltrack::metrics::to_db),
                    outer_iterations: f.outer_iterations,
                });
            }
        }
        rows
    }

    /// One row per run with `frame = 0`: frame-averaged NMSEs and the total outer iterations.
    pub fn sequence_rows(&self) -> Vec<MetricRow> {
        self.runs
            .iter()
            .map(|r| {
                let ch: Vec<f64> = r.frames.iter().filter_map(|f| f.channel_nmse_db).map(|d| 10f64.powf(d / 10.0)).collect();
                MetricRow {
                    experiment: self.experiment.to_string(),
                    mode: r.spec.mode.to_string(),
                    seed: r.spec.seed,
                    snr_db: r.spec.snr_db,
                    paths: r.spec.paths,
                    speed_kmh: r.spec.speed_kmh,
                    frame: 0,
                    channel_nmse_db: if ch.is_empty() { None } else { Some(xltrack::metrics::to_db(ch.iter().sum::<f64>() / ch.len() as f64)) },
                    vr_nmse_db: r.vr_nmse_db(),
                    outer_iterations: r.frames.iter().map(|f| f.outer_iterations).sum(),
                }
            })
            .collect()
    }

    pub fn trace_rows(&self) -> Vec<TraceRow> {
        let mut rows = Vec::new();
        for r in &self.runs {
            for f in &r.frames {
                for (i, v) in f.iteration_nmse_db.iter().enumerate() {
                    rows.push(TraceRow {
                        mode: r.spec.mode.to_string(),
                        seed: r.spec.seed,
                        snr_db: r.spec.snr_db,
                        frame: f.frame,
                        iteration: i + 1,
                        channel_nmse_db: *v,
                    });
                }
            }
        }
        rows
    }

    pub fn timing_rows(&self) -> Vec<TimingRow> {
        self.runs
            .iter()
            .map(|r| TimingRow {
                experiment: self.experiment.to_string(),
                mode: r.spec.mode.to_string(),
                seed: r.spec.seed,
                snr_db: r.spec.snr_db,
                paths: r.spec.paths,
                speed_kmh: r.spec.speed_kmh,
                frames: r.frames.len(),
                wall_ms: r.wall_ms,
            })
            .collect()
    }

    /// Runs matching a predicate.
    pub fn select<'a>(&'a self, pred: impl Fn(&RunSpec) -> bool + 'a) -> impl Iterator<Item = &'a RunOutcome> + 'a {
        self.runs.iter().filter(move |r| pred(&r.spec))
    }

    /// Per-frame channel NMSE values (dB) of the matching runs.
    pub fn channel_nmse(&self, pred: impl Fn(&RunSpec) -> bool) -> Vec<f64> {
        self.select(pred).flat_map(|r| r.frames.iter().filter_map(|f| f.channel_nmse_db)).collect()
    }

    /// Outer iteration counts of the matching runs, split into the first frame and the rest.
    pub fn iterations(&self, pred: impl Fn(&RunSpec) -> bool) -> (Vec<f64>, Vec<f64>) {
        let (mut first, mut later) = (Vec::new(), Vec::new());
        for r in self.select(pred) {
            for f in &r.frames {
                if f.frame == 1 {
                    first.push(f.outer_iterations as f64);
                } else {
                    later.push(f.outer_iterations as f64);
                }
            }
        }
        (first, later)
    }

    /// Median and quartiles grouped by `(mode, snr, paths, speed)` in first-seen order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<RunSpec> = Vec::new();
        for r in &self.runs {
            if !keys.iter().any(|k| same_group(k, &r.spec)) {
                keys.push(r.spec);
            }
        }
        let mut rows = Vec::new();
        for k in keys {
            let in_group = |s: &RunSpec| same_group(&k, s);
            let (first, later) = self.iterations(in_group);
            let vr: Vec<f64> = self.select(in_group).filter_map(|r| r.vr_nmse_db()).collect();
            let metrics = [
                ("channel_nmse_db", self.channel_nmse(in_group)),
                ("vr_nmse_db", vr),
                ("outer_iterations_first_frame", first),
                ("outer_iterations_later_frames", later),
            ];
            for (name, values) in metrics {
                if values.is_empty() {
                    continue;
                }
                rows.push(SummaryRow {
                    experiment: self.experiment.to_string(),
                    mode: k.mode.to_string(),
                    snr_db: k.snr_db,
                    paths: k.paths,
                    speed_kmh: k.speed_kmh,
                    metric: name.to_string(),
                    count: values.len(),
                    median: median(&values).unwrap_or(f64::NAN),
                    q1: quantile(&values, 0.25).unwrap_or(f64::NAN),
                    q3: quantile(&values, 0.75).unwrap_or(f64::NAN),
                });
            }
        }
        rows
    }
}

fn same_group(a: &RunSpec, b: &RunSpec) -> bool {
    a.mode == b.mode && a.snr_db == b.snr_db && a.paths == b.paths && a.speed_kmh == b.speed_kmh
}

fn seeds(cfg: &ExperimentConfig) -> impl Iterator<Item = u64> + '_ {
    (0..cfg.sweep.seeds as u64).map(move |s| cfg.sweep.base_seed + s)
}

fn execute(cfg: &ExperimentConfig, experiment: &'static str, specs: Vec<RunSpec>, trace: bool) -> ExpResult<Batch> {
    let frames = cfg.sweep.frames;
    let runs = specs.par_iter().map(|s| run_scenario(cfg, s, frames, trace)).collect::<ExpResult<Vec<_>>>()?;
    Ok(Batch { experiment, runs })
}

/// Channel NMSE against SNR, every seed and mode.
pub fn snr_batch(cfg: &ExperimentConfig, modes: &[PriorMode]) -> ExpResult<Batch> {
    let mut specs = Vec::new();
    for &mode in modes {
        for (i, &snr) in cfg.sweep.snr_db.iter().enumerate() {
            for seed in seeds(cfg) {
                specs.push(RunSpec { seed, snr_index: i, snr_db: snr, mode, paths: cfg.scene.paths, speed_kmh: cfg.scene.speed_kmh });
            }
        }
    }
    execute(cfg, "snr", specs, false)
}

pub fn paths_batch(cfg: &ExperimentConfig, modes: &[PriorMode]) -> ExpResult<Batch> {
    let mut specs = Vec::new();
    for &mode in modes {
        for &paths in &cfg.sweep.paths {
            for seed in seeds(cfg) {
                specs.push(RunSpec { seed, snr_index: 0, snr_db: cfg.sweep.paths_snr_db, mode, paths, speed_kmh: cfg.scene.speed_kmh });
            }
        }
    }
    execute(cfg, "paths", specs, false)
}

pub fn speed_batch(cfg: &ExperimentConfig, modes: &[PriorMode]) -> ExpResult<Batch> {
    let mut specs = Vec::new();
    for &mode in modes {
        for &speed_kmh in &cfg.sweep.speeds_kmh {
            for seed in seeds(cfg) {
                specs.push(RunSpec { seed, snr_index: 0, snr_db: cfg.sweep.speed_snr_db, mode, paths: cfg.scene.paths, speed_kmh });
            }
        }
    }
    execute(cfg, "speed", specs, false)
}

/// One seed per mode with per-iteration traces.
pub fn convergence_batch(cfg: &ExperimentConfig, modes: &[PriorMode]) -> ExpResult<Batch> {
    let specs = modes
        .iter()
        .map(|&mode| RunSpec {
            seed: cfg.sweep.base_seed,
            snr_index: 0,
            snr_db: cfg.sweep.convergence_snr_db,
            mode,
            paths: cfg.scene.paths,
            speed_kmh: cfg.scene.speed_kmh,
        })
        .collect();
    execute(cfg, "convergence", specs, true)
}

/// Writes rows with a header line; `None` fields become empty.
pub fn write_rows<W: std::io::Write, T: Serialize>(out: W, rows: &[T]) -> ExpResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> ExpResult<()> {
    let file = fs::File::create(path).map_err(|e| ExpError::Io(format!("{}: {e}", path.display())))?;
    write_rows(std::io::BufWriter::new(file), rows)
}

/// Creates the output directory and checks that it accepts files.
pub fn prepare_out_dir(dir: &Path) -> ExpResult<()> {
    fs::create_dir_all(dir).map_err(|e| ExpError::Io(format!("{}: {e}", dir.display())))?;
    let probe = dir.join(".xltrack-write-test");
    fs::write(&probe, b"").map_err(|e| ExpError::Io(format!("{} is not writable: {e}", dir.display())))?;
    fs::remove_file(&probe)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResults {
    pub convergence: Batch,
    pub snr: Batch,
    pub paths: Batch,
    pub speed: Batch,
}

impl SweepResults {
    pub fn write(&self, dir: &Path) -> ExpResult<()> {
        write_csv(&dir.join(CONVERGENCE_CSV), &self.convergence.frame_rows())?;
        write_csv(&dir.join(CONVERGENCE_TRACE_CSV), &self.convergence.trace_rows())?;
        write_csv(&dir.join(SNR_CSV), &self.snr.frame_rows())?;
        write_csv(&dir.join(VR_CSV), &self.snr.sequence_rows())?;
        write_csv(&dir.join(PATHS_CSV), &self.paths.frame_rows())?;
        write_csv(&dir.join(SPEED_CSV), &self.speed.frame_rows())?;
        let batches = [&self.convergence, &self.snr, &self.paths, &self.speed];
        let summary: Vec<SummaryRow> = batches.iter().flat_map(|b| b.summary()).collect();
        write_csv(&dir.join(SUMMARY_CSV), &summary)?;
        let timing: Vec<TimingRow> = batches.iter().flat_map(|b| b.timing_rows()).collect();
        write_csv(&dir.join(TIMING_CSV), &timing)
    }
}

fn pool(threads: usize) -> ExpResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| ExpError::Config(e.to_string()))
}

/// Runs every batch for the configured modes and writes the CSVs into `sweep.out_dir`.
pub fn run_sweep(cfg: &ExperimentConfig) -> ExpResult<SweepResults> {
    cfg.validate()?;
    let dir = cfg.sweep.out_dir.clone();
    prepare_out_dir(&dir)?;
    let modes = cfg.sweep.modes.clone();
    let results = pool(cfg.sweep.threads)?.install(|| -> ExpResult<SweepResults> {
        Ok(SweepResults {
            convergence: convergence_batch(cfg, &modes)?,
            snr: snr_batch(cfg, &modes)?,
            paths: paths_batch(cfg, &modes)?,
            speed: speed_batch(cfg, &modes)?,
        })
    })?;
    results.write(&dir)?;
    Ok(results)
}

/// Runs `f` on a pool sized by `sweep.threads`.
pub fn with_pool<T: Send>(cfg: &ExperimentConfig, f: impl FnOnce() -> T + Send) -> ExpResult<T> {
    Ok(pool(cfg.sweep.threads)?.install(f))
}
