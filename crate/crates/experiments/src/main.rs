use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use xltrack::tracker::PriorMode;
use xltrack::vbi::VbiMode;
use xltrack_experiments::config::ExperimentConfig;
use xltrack_experiments::run::{run_scenario, simulate_scenes, RunSpec};
use xltrack_experiments::sweep::{run_sweep, with_pool, write_rows, Batch};
use xltrack_experiments::verify;

#[derive(Parser)]
#[command(name = "xltrack", version, about = "Near-field XL-MIMO channel tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the ground-truth scenes of one seed.
    Simulate(Common),
    /// Track one scenario and print per-frame metrics as CSV.
    Track(Common),
    /// Run every batch and write the CSV files.
    Sweep(Common),
    /// Run the oracle self-checks.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Run only this check.
        #[arg(long)]
        check: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Markov,
    Iid,
}

#[derive(Clone, Copy, ValueEnum)]
enum VbiArg {
    Exact,
    If,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed of the scenario, or the first seed of a sweep.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    vbi: Option<VbiArg>,
    /// SNR values in dB, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Option<Vec<f64>>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_env()?;
        if let Some(s) = self.seed {
            cfg.sweep.base_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.sweep.out_dir = o.clone();
        }
        if let Some(m) = self.mode {
            let mode = match m {
                ModeArg::Markov => PriorMode::Markov,
                ModeArg::Iid => PriorMode::Iid,
            };
            cfg.sweep.modes = vec![mode];
            cfg.tracker.mode = mode;
        }
        if let Some(v) = self.vbi {
            cfg.tracker.vbi.mode = match v {
                VbiArg::Exact => VbiMode::Exact,
                VbiArg::If => VbiMode::InverseFree,
            };
        }
        if let Some(s) = &self.snr {
            cfg.sweep.snr_db = s.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Where single-scenario output goes: a file under `--out` when given, stdout otherwise.
    fn sink(&self, name: &str) -> Result<Box<dyn Write>> {
        match &self.out {
            Some(dir) => {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                let path = dir.join(name);
                let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                Ok(Box::new(std::io::BufWriter::new(f)))
            }
            None => Ok(Box::new(std::io::stdout().lock())),
        }
    }
}

fn simulate(args: &Common) -> Result<()> {
    let cfg = args.load()?;
    let scenes = simulate_scenes(&cfg, cfg.sweep.base_seed, cfg.scene.paths, cfg.scene.speed_kmh, cfg.sweep.frames)?;
    let mut out = args.sink("scenes.txt")?;
    for s in &scenes {
        out.write_all(xltrack::scenario::format_scene(s).as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn track(args: &Common) -> Result<()> {
    let cfg = args.load()?;
    if cfg.sweep.snr_db.len() != 1 && args.snr.is_some() {
        bail!("track takes a single SNR value");
    }
    let snr_db = if args.snr.is_some() { cfg.sweep.snr_db[0] } else { cfg.sweep.convergence_snr_db };
    let spec = RunSpec {
        seed: cfg.sweep.base_seed,
        snr_index: 0,
        snr_db,
        mode: cfg.tracker.mode,
        paths: cfg.scene.paths,
        speed_kmh: cfg.scene.speed_kmh,
    };
    let outcome = run_scenario(&cfg, &spec, cfg.sweep.frames, false)?;
    let batch = Batch { experiment: "track", runs: vec![outcome] };
    write_rows(args.sink("track.csv")?, &batch.frame_rows())?;
    Ok(())
}

fn sweep(args: &Common) -> Result<()> {
    let cfg = args.load()?;
    let results = run_sweep(&cfg)?;
    let runs = results.snr.runs.len() + results.paths.runs.len() + results.speed.runs.len() + results.convergence.runs.len();
    eprintln!("{runs} scenarios written to {}", cfg.sweep.out_dir.display());
    Ok(())
}

fn run_verify(seed: u64, check: Option<&str>) -> Result<()> {
    let cfg = ExperimentConfig::default();
    let outcomes = match check {
        Some(c) => vec![verify::run_check(c, seed)?],
        None => with_pool(&cfg, || verify::run_all(seed))??,
    };
    let mut failed = 0;
    for o in &outcomes {
        println!("{}", o.line());
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        bail!("{failed} of {} checks failed", outcomes.len());
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(a) => simulate(&a),
        Command::Track(a) => track(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Verify { seed, check } => run_verify(seed, check.as_deref()),
    }
}
