//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero on any failure.

use std::path::Path;
use std::process::Command;
use std::time::Instant;
use xltrack::tracker::PriorMode;
use xltrack_experiments::config::ExperimentConfig;
use xltrack_experiments::run::RunSpec;
use xltrack_experiments::sweep::{median, paths_batch, snr_batch, speed_batch, with_pool, DETERMINISTIC_CSVS};
use xltrack_experiments::verify::{run_check, CHECKS};

const SEED: u64 = 1;

struct Report {
    failed: Vec<String>,
}

impl Report {
    fn record(&mut self, name: &str, passed: bool, detail: String) {
        println!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
        if !passed {
            self.failed.push(name.to_string());
        }
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(", ")
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn non_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

fn oracles(report: &mut Report) {
    for name in CHECKS {
        match run_check(name, SEED) {
            Ok(o) => report.record(name, o.passed, o.detail),
            Err(e) => report.record(name, false, format!("error: {e}")),
        }
    }
}

fn desk_study(report: &mut Report, cfg: &ExperimentConfig) -> Result<(), String> {
    let start = Instant::now();
    let modes = [PriorMode::Markov, PriorMode::Iid];
    let snr = with_pool(cfg, || snr_batch(cfg, &modes)).and_then(|r| r).map_err(|e| e.to_string())?;
    let medians = |mode: PriorMode| -> Vec<f64> {
        cfg.sweep
            .snr_db
            .iter()
            .map(|&s| median(&snr.channel_nmse(|r: &RunSpec| r.mode == mode && r.snr_db == s)).unwrap_or(f64::NAN))
            .collect()
    };
    let markov = medians(PriorMode::Markov);
    let iid = medians(PriorMode::Iid);
    report.record(
        "desk_a_nmse_decreases_with_snr",
        strictly_decreasing(&markov) && strictly_decreasing(&iid),
        format!("median NMSE (dB) at SNR {:?}: markov [{}], iid [{}]", cfg.sweep.snr_db, fmt_list(&markov), fmt_list(&iid)),
    );
    report.record(
        "desk_b_markov_beats_iid",
        markov.iter().zip(&iid).all(|(m, i)| m < i),
        format!("markov minus iid (dB): [{}]", fmt_list(&markov.iter().zip(&iid).map(|(m, i)| m - i).collect::<Vec<_>>())),
    );
    let mut ok = true;
    let mut parts = Vec::new();
    for mode in modes {
        let (first, later) = snr.iterations(|r: &RunSpec| r.mode == mode);
        let (f, l) = (median(&first).unwrap_or(f64::NAN), median(&later).unwrap_or(f64::NAN));
        ok &= l <= f;
        parts.push(format!("{mode}: first frame {f}, later frames {l}"));
    }
    report.record("desk_c_later_frames_no_slower", ok, format!("median outer iterations, {}", parts.join("; ")));

    let paths = with_pool(cfg, || paths_batch(cfg, &[PriorMode::Markov])).and_then(|r| r).map_err(|e| e.to_string())?;
    let by_paths: Vec<f64> =
        cfg.sweep.paths.iter().map(|&l| median(&paths.channel_nmse(|r: &RunSpec| r.paths == l)).unwrap_or(f64::NAN)).collect();
    report.record(
        "path_count_degradation",
        non_decreasing(&by_paths),
        format!("markov median NMSE (dB) at {} dB for L = {:?}: [{}]", cfg.sweep.paths_snr_db, cfg.sweep.paths, fmt_list(&by_paths)),
    );

    let speed = with_pool(cfg, || speed_batch(cfg, &[PriorMode::Markov])).and_then(|r| r).map_err(|e| e.to_string())?;
    let by_speed: Vec<f64> =
        cfg.sweep.speeds_kmh.iter().map(|&v| median(&speed.channel_nmse(|r: &RunSpec| r.speed_kmh == v)).unwrap_or(f64::NAN)).collect();
    report.record(
        "speed_sensitivity",
        non_decreasing(&by_speed),
        format!("markov median NMSE (dB) at {} dB for {:?} km/h: [{}]", cfg.sweep.speed_snr_db, cfg.sweep.speeds_kmh, fmt_list(&by_speed)),
    );
    println!("info desk study wall time {:.0} s (target < 600 s)", start.elapsed().as_secs_f64());
    Ok(())
}

const TINY: &str = r#"
[system]
antennas = 16
rf_chains = 4
subcarriers = 8
pilots = 4

[grid]
delay_points = 4
[grid.polar]
points = 8

[tracker]
outer_iterations = 4

[sweep]
seeds = 2
frames = 3
snr_db = [0.0, 10.0]
paths = [1, 2]
speeds_kmh = [3.0, 30.0]
"#;

fn sweep_once(config: &Path, out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_xltrack"))
        .args(["sweep", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("XLTRACK_OUT")
        .env_remove("XLTRACK_THREADS")
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    Ok(())
}

fn determinism(report: &mut Report) -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY).map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    sweep_once(&config, &a)?;
    sweep_once(&config, &b)?;
    let mut differing = Vec::new();
    for name in DETERMINISTIC_CSVS {
        let x = std::fs::read(a.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let y = std::fs::read(b.join(name)).map_err(|e| format!("{name}: {e}"))?;
        if x != y || x.is_empty() {
            differing.push(name);
        }
    }
    report.record(
        "determinism",
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} CSV files byte-identical across two runs", DETERMINISTIC_CSVS.len())
        } else {
            format!("differing or empty: {}", differing.join(", "))
        },
    );
    Ok(())
}

fn main() {
    let mut report = Report { failed: Vec::new() };
    oracles(&mut report);
    if let Err(e) = determinism(&mut report) {
        report.record("determinism", false, format!("error: {e}"));
    }
    let cfg = ExperimentConfig::default();
    if let Err(e) = desk_study(&mut report, &cfg) {
        report.record("desk_study", false, format!("error: {e}"));
    }
    if report.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: {} failed: {}", report.failed.len(), report.failed.join(", "));
        std::process::exit(1);
    }
}
