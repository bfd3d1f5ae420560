//! `memgeom`: generate spheres datasets, train, and measure manifold geometry.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 I/O or file-format error.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use memgeom::empirical::EmpiricalConfig;
use memgeom::experiments::output::{RunDir, RunManifest};
use memgeom::experiments::{
    analysis_epochs, analyze_epochs, build_dataset, ingest_activation_dump, plot, rewind_sweep, trend_inversions,
    width_sweep, ExperimentConfig,
};
use memgeom::geometry::{analyze, AnalysisConfig, ProjectionOptions};
use memgeom::graddecomp::subset_grad_report;
use memgeom::net::{init_model, train, CheckpointStore, TrainingTrace};
use memgeom::synthdata::{read_dataset, write_dataset, write_dataset_csv, PermutedDataset};
use memgeom::{Error, ErrorKind, Result};

const CONFIG_FILE: &str = "config.toml";
const DATASET_FILE: &str = "dataset.mpd1";
const TRACE_FILE: &str = "trace.json";
const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Parser, Debug)]
#[command(name = "memgeom", version, about = "Manifold geometry of memorization in feedforward networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML). Run-based commands default to the run's
    /// saved config, the others to the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in config used when --config is absent: desk, full, small or
    /// reduced.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    /// Master seed. Reseeds everything for new runs; only the analysis
    /// seed for commands reading an existing run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "memgeom-out")]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the permuted spheres dataset.
    GenData {
        /// Also write a CSV copy.
        #[arg(long)]
        csv: bool,
    },
    /// Train a network and store checkpoints.
    Train {
        /// Dataset file; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Manifold geometry over epochs, layers and example sets of a run.
    Analyze {
        /// Training run directory (default: --out).
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        epochs: Vec<usize>,
    },
    /// Label-dependent / label-independent gradient norms of a run.
    GradReport {
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        epochs: Vec<usize>,
    },
    /// Test accuracy after restoring single layers to earlier epochs.
    RewindSweep {
        #[arg(long)]
        run: Option<PathBuf>,
        /// Weight layers, 1-based (default: all).
        #[arg(long, value_delimiter = ',')]
        layers: Vec<usize>,
        /// Target epochs (default: the analysis epochs).
        #[arg(long, value_delimiter = ',')]
        epochs: Vec<usize>,
    },
    /// Train one network per hidden-width factor.
    WidthSweep {
        /// Width multipliers (default: the config's).
        #[arg(long, value_delimiter = ',')]
        factors: Vec<f64>,
    },
    /// Standalone geometry of an activation dump (MFP1 or CSV).
    Capacity {
        dump: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_samples: usize,
        /// Skip the center null-space projection.
        #[arg(long)]
        no_projection: bool,
        /// Also estimate the empirical capacity with this many dichotomies
        /// per feature count.
        #[arg(long)]
        empirical_trials: Option<usize>,
    },
    /// Render SVG charts from the CSV reports in a directory.
    Plot {
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::Io => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let c = &cli.common;
    match &cli.command {
        Command::GenData { csv } => gen_data(c, *csv),
        Command::Train { data } => train_cmd(c, data.as_deref()),
        Command::Analyze { run, epochs } => analyze_cmd(c, run.as_deref(), epochs),
        Command::GradReport { run, epochs } => grad_cmd(c, run.as_deref(), epochs),
        Command::RewindSweep { run, layers, epochs } => rewind_cmd(c, run.as_deref(), layers, epochs),
        Command::WidthSweep { factors } => width_cmd(c, factors),
        Command::Capacity {
            dump,
            n_samples,
            no_projection,
            empirical_trials,
        } => capacity_cmd(c, dump, *n_samples, *no_projection, *empirical_trials),
        Command::Plot { run } => plot_cmd(c, run.as_deref()),
    }
}

/// Config for a new run: file or preset, then the master seed.
fn fresh_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::preset(&c.preset)?,
    };
    if let Some(s) = c.seed {
        cfg.reseed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A finished training run read back from disk.
struct StoredRun {
    cfg: ExperimentConfig,
    data: PermutedDataset,
    store: CheckpointStore,
    trace: TrainingTrace,
}

fn load_run(c: &Common, run: Option<&Path>) -> Result<StoredRun> {
    let dir = run.unwrap_or(&c.out);
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::load(dir.join(CONFIG_FILE))?,
    };
    if let Some(s) = c.seed {
        cfg.analysis.seed = s;
    }
    let data = read_dataset(BufReader::new(File::open(dir.join(DATASET_FILE))?))?;
    let store = CheckpointStore::open(dir.join(CHECKPOINT_DIR))?;
    if store.spec() != &cfg.net_spec() {
        return Err(Error::Config(format!(
            "config does not describe the network stored in {}",
            dir.display()
        )));
    }
    let trace: TrainingTrace = serde_json::from_reader(BufReader::new(File::open(dir.join(TRACE_FILE))?))?;
    Ok(StoredRun { cfg, data, store, trace })
}

fn threads() -> usize {
    rayon::current_num_threads()
}

fn finish(out: RunDir, command: &str, cfg: &ExperimentConfig) -> Result<()> {
    let written = out.finish(RunManifest::new(command, cfg, threads()))?;
    for w in written {
        println!("wrote {w}");
    }
    Ok(())
}

/// Runs `body`, leaving a failure marker in the output directory on error.
fn guarded(out: &mut RunDir, stage: &str, body: impl FnOnce(&mut RunDir) -> Result<()>) -> Result<()> {
    body(out).inspect_err(|e| {
        let _ = out.mark_failed(stage, e);
    })
}

fn gen_data(c: &Common, csv: bool) -> Result<()> {
    let cfg = fresh_config(c)?;
    let mut out = RunDir::create(&c.out, c.force)?;
    guarded(&mut out, "gen-data", |out| {
        let data = build_dataset(&cfg)?;
        out.write_with(CONFIG_FILE, |w| Ok(w.write_all(cfg.to_toml_string().as_bytes())?))?;
        out.write_with(DATASET_FILE, |w| write_dataset(&data, w))?;
        if csv {
            out.write_with("dataset.csv", |w| write_dataset_csv(&data, w))?;
        }
        Ok(())
    })?;
    finish(out, "gen-data", &cfg)
}

fn train_cmd(c: &Common, data_path: Option<&Path>) -> Result<()> {
    let mut cfg = fresh_config(c)?;
    let data = match data_path {
        Some(p) => {
            let d = read_dataset(BufReader::new(File::open(p)?))?;
            cfg.dataset = d.spec().clone();
            cfg.epsilon = d.epsilon();
            cfg.permutation_seed = d.permutation_seed();
            cfg.validate()?;
            d
        }
        None => build_dataset(&cfg)?,
    };
    let mut out = RunDir::create(&c.out, c.force)?;
    let ckpt_dir = out.check_free(CHECKPOINT_DIR)?;
    if ckpt_dir.exists() {
        std::fs::remove_dir_all(&ckpt_dir)?;
    }
    guarded(&mut out, "train", |out| {
        out.write_with(CONFIG_FILE, |w| Ok(w.write_all(cfg.to_toml_string().as_bytes())?))?;
        out.write_with(DATASET_FILE, |w| write_dataset(&data, w))?;
        let spec = cfg.net_spec();
        let mut store = CheckpointStore::on_disk(&ckpt_dir, &spec)?;
        let mut model = init_model(&spec)?;
        let trace = train(&mut model, &data, &cfg.train, &mut store)?;
        out.write_with("trace.csv", |w| trace.write_csv(w))?;
        out.write_json(TRACE_FILE, &trace)?;
        println!(
            "best epoch {} (test {:.4}), final epoch {}, target reached: {}",
            trace.best_epoch,
            trace.record(trace.best_epoch).and_then(|r| r.accuracy.test).unwrap_or(f64::NAN),
            trace.final_epoch,
            trace.reached_target
        );
        Ok(())
    })?;
    finish(out, "train", &cfg)
}

fn analyze_cmd(c: &Common, run: Option<&Path>, epochs: &[usize]) -> Result<()> {
    let r = load_run(c, run)?;
    let epochs = if epochs.is_empty() {
        analysis_epochs(&r.cfg, &r.store, &r.trace)
    } else {
        epochs.to_vec()
    };
    let mut out = RunDir::create(&c.out, c.force)?;
    guarded(&mut out, "analyze", |out| {
        let table = analyze_epochs(&r.cfg, &r.store, &r.data, &epochs)?;
        for (e, l, s, msg) in &table.failures {
            eprintln!("warning: epoch {e} layer {l} {s}: {msg}");
        }
        out.write_with("mgm.csv", |w| table.write_csv(w))?;
        out.write_json("mgm.json", &table)
    })?;
    finish(out, "analyze", &r.cfg)
}

fn grad_cmd(c: &Common, run: Option<&Path>, epochs: &[usize]) -> Result<()> {
    let r = load_run(c, run)?;
    let epochs = if epochs.is_empty() {
        let mut e = vec![0, r.trace.best_epoch, r.trace.final_epoch];
        e.sort_unstable();
        e.dedup();
        e
    } else {
        epochs.to_vec()
    };
    let mut out = RunDir::create(&c.out, c.force)?;
    guarded(&mut out, "grad-report", |out| {
        let report = subset_grad_report(&r.store, &r.data, &epochs)?;
        if !report.missing_epochs.is_empty() {
            eprintln!("warning: no checkpoint for epochs {:?}", report.missing_epochs);
        }
        out.write_with("grad.csv", |w| report.write_csv(w))?;
        out.write_json("grad.json", &report)
    })?;
    finish(out, "grad-report", &r.cfg)
}

fn rewind_cmd(c: &Common, run: Option<&Path>, layers: &[usize], epochs: &[usize]) -> Result<()> {
    let r = load_run(c, run)?;
    let layers: Vec<usize> = if layers.is_empty() {
        (1..=r.store.spec().n_layers()).collect()
    } else {
        layers.to_vec()
    };
    let epochs = if epochs.is_empty() {
        analysis_epochs(&r.cfg, &r.store, &r.trace)
    } else {
        epochs.to_vec()
    };
    let mut out = RunDir::create(&c.out, c.force)?;
    guarded(&mut out, "rewind-sweep", |out| {
        let final_model = r.store.get(r.trace.final_epoch)?;
        let result = rewind_sweep(&final_model, &r.store, &r.data, r.trace.best_epoch, &layers, &epochs)?;
        out.write_with("rewind.csv", |w| result.write_csv(w))?;
        out.write_json("rewind.json", &result)
    })?;
    finish(out, "rewind-sweep", &r.cfg)
}

fn width_cmd(c: &Common, factors: &[f64]) -> Result<()> {
    let cfg = fresh_config(c)?;
    let factors = if factors.is_empty() { cfg.width_factors.clone() } else { factors.to_vec() };
    let mut out = RunDir::create(&c.out, c.force)?;
    guarded(&mut out, "width-sweep", |out| {
        let sweep = width_sweep(&cfg, &factors)?;
        for row in sweep.rows.iter().filter(|r| r.error.is_some()) {
            eprintln!("warning: width factor {}: {}", row.factor, row.error.as_deref().unwrap_or(""));
        }
        println!(
            "trend inversions: R_M {}, rho_center {}, D_M {}",
            trend_inversions(&sweep.final_r_m()),
            trend_inversions(&sweep.final_rho()),
            trend_inversions(&sweep.final_d_m())
        );
        out.write_with("width.csv", |w| sweep.write_csv(w))?;
        out.write_json("width.json", &sweep)
    })?;
    finish(out, "width-sweep", &cfg)
}

fn capacity_cmd(
    c: &Common,
    dump: &Path,
    n_samples: usize,
    no_projection: bool,
    empirical_trials: Option<usize>,
) -> Result<()> {
    let set = ingest_activation_dump(dump)?;
    let seed = c.seed.unwrap_or(0);
    let cfg = AnalysisConfig {
        n_samples,
        seed,
        global_centering: true,
        center_projection: (!no_projection).then(ProjectionOptions::default),
        empirical: empirical_trials.map(|t| EmpiricalConfig {
            trials_per_n: t,
            seed,
            ..EmpiricalConfig::default()
        }),
    };
    let mut out = RunDir::create(&c.out, c.force)?;
    let report = analyze(&set, &cfg)?;
    println!(
        "alpha_M {:.6}  R_M {:.6}  D_M {:.6}  rho_center {:.6}{}",
        report.alpha_m,
        report.r_m,
        report.d_m,
        report.rho_center,
        report.alpha_empirical.map(|a| format!("  alpha_empirical {a:.6}")).unwrap_or_default()
    );
    out.write_json("capacity.json", &report)?;
    out.write_with("capacity.csv", |w| {
        writeln!(w, "class_id,alpha,r_m,d_m,subspace_dim,n_points,n_active,degenerate")?;
        for m in &report.per_manifold {
            writeln!(
                w,
                "{},{:?},{:?},{:?},{},{},{},{}",
                m.class_id, m.alpha, m.r_m, m.d_m, m.subspace_dim, m.n_points, m.n_active, m.degenerate
            )?;
        }
        Ok(())
    })?;
    for w in out.written() {
        println!("wrote {w}");
    }
    Ok(())
}

fn plot_cmd(c: &Common, run: Option<&Path>) -> Result<()> {
    let src = run.unwrap_or(&c.out);
    if !c.force && c.out.is_dir() {
        for entry in std::fs::read_dir(&c.out)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "svg") {
                return Err(Error::WouldOverwrite(path));
            }
        }
    }
    let result = plot::emit_plots(src, &c.out)?;
    for p in &result.written {
        println!("wrote {}", p.display());
    }
    for s in &result.skipped {
        eprintln!("skipped {s}");
    }
    if result.written.is_empty() {
        return Err(Error::InvalidInput(format!("no report CSVs found in {}", src.display())));
    }
    Ok(())
}
