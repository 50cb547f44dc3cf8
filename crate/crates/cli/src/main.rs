//! `sdnet`: command-line workbench for the MIMO detection pipeline.
//!
//! Producer-side commands (`gen-data`, `train-collective`, `extract`) build
//! datasets, the collective model, and the transferable unit; consumer-side
//! commands (`train-individual`, `evaluate`) specialize and score per-task
//! detectors; `analyze` renders the supporting studies.

mod config;

use clap::{Args, Parser, Subcommand};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use config::RunConfig;
use sdnet_core::channel::{generate_dataset, load_dataset, make_task, save_dataset, TaskDataset};
use sdnet_core::detectors::zf_noise_stats;
use sdnet_core::experiments::{
    complexity_report, distance_vs_generalization, generalization_matrix, run_scheme, snr_sweep,
    write_gradsig_csv, write_spectra_csv, write_summary_csv, write_svg_chart, MetricsRecord,
    SchemeContext, SchemeKind,
};
use sdnet_core::learngene::{
    extract_learngene, load_unit, save_unit_tagged, train_collective, CollectiveConfig,
    ExpansionStrategy, Family, GradSigLog, Position,
};
use sdnet_core::neuralnet::{load_checkpoint, save_checkpoint, Model};
use sdnet_core::numerics::RngStream;
use sdnet_core::sdnet::{build_sdnet, init_model};

/// Errors split into the two exit classes the interface promises.
#[derive(Debug)]
enum CliError {
    /// Bad configuration or flag usage; exit code 2.
    Config(String),
    /// Failure while executing a valid request; exit code 1.
    Runtime(String),
}

impl From<sdnet_core::Error> for CliError {
    fn from(e: sdnet_core::Error) -> Self {
        match e {
            sdnet_core::Error::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "sdnet",
    version,
    about = "Deep MIMO detection workbench: datasets, collective and individual training, \
             transferable-unit extraction, evaluation, and analysis"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every subcommand. Any flag given here overrides the value
/// from the JSON config file.
#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run-configuration file (versioned schema; unknown keys rejected)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override samples per task
    #[arg(long, global = true)]
    samples_per_task: Option<usize>,
    /// Override the training SNR in dB
    #[arg(long, global = true)]
    snr_db: Option<f64>,
    /// Override individual-training epochs
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Override collective-training epochs per task
    #[arg(long, global = true)]
    collective_epochs: Option<usize>,
    /// Override the number of collective tasks
    #[arg(long, global = true)]
    collective_tasks: Option<usize>,
    /// Override transmit antenna count
    #[arg(long, global = true)]
    nt: Option<usize>,
    /// Override receive antenna count
    #[arg(long, global = true)]
    nr: Option<usize>,
    /// Override pilot length
    #[arg(long, global = true)]
    np: Option<usize>,
}

impl Common {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).map_err(CliError::Config)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.master_seed = v;
        }
        if let Some(v) = self.samples_per_task {
            cfg.samples_per_task = v;
        }
        if let Some(v) = self.snr_db {
            cfg.snr_db = v;
        }
        if let Some(v) = self.epochs {
            cfg.individual_epochs = v;
        }
        if let Some(v) = self.collective_epochs {
            cfg.collective_epochs = v;
        }
        if let Some(v) = self.collective_tasks {
            cfg.collective_tasks = v;
        }
        if let Some(v) = self.nt {
            cfg.nt = v;
        }
        if let Some(v) = self.nr {
            cfg.nr = v;
        }
        if let Some(v) = self.np {
            cfg.np = v;
        }
        cfg.validate().map_err(CliError::Config)?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the per-task datasets for a run
    GenData {
        #[command(flatten)]
        common: Common,
        /// Output directory for task_NNN.ds files and the run manifest
        #[arg(long)]
        out: PathBuf,
    },
    /// Sequentially train the collective model over the task datasets
    TrainCollective {
        #[command(flatten)]
        common: Common,
        /// Directory produced by gen-data
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint path
        #[arg(long)]
        out: PathBuf,
        /// Output path for the gradient-significance matrix CSV
        #[arg(long)]
        gradsig: PathBuf,
    },
    /// Extract the transferable unit from a collective checkpoint
    Extract {
        #[command(flatten)]
        common: Common,
        /// Collective model checkpoint
        #[arg(long)]
        model: PathBuf,
        /// Gradient-significance CSV from train-collective
        #[arg(long)]
        gradsig: PathBuf,
        /// Output unit file
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an individual detector under one of the comparison schemes
    TrainIndividual {
        #[command(flatten)]
        common: Common,
        /// scratch | transfer | learngene
        #[arg(long)]
        scheme: String,
        /// Expansion strategy for the learngene scheme, e.g. bottom-embedding
        #[arg(long)]
        strategy: Option<String>,
        /// Unit file (learngene scheme)
        #[arg(long)]
        unit: Option<PathBuf>,
        /// Collective checkpoint (inheriting strategies)
        #[arg(long)]
        collective: Option<PathBuf>,
        /// Target task dataset file
        #[arg(long)]
        task: PathBuf,
        /// Source task dataset file (transfer scheme)
        #[arg(long)]
        source: Option<PathBuf>,
        /// Output checkpoint path
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch metrics JSONL path
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a trained detector on a task across an SNR grid
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Detector checkpoint
        #[arg(long)]
        model: PathBuf,
        /// Task dataset file
        #[arg(long)]
        task: PathBuf,
        /// Comma-separated SNR grid in dB; defaults to the config grid
        #[arg(long)]
        snr_grid: Option<String>,
        /// Output summary CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Supporting studies: correlation, noise statistics, spectra, complexity
    Analyze {
        #[command(flatten)]
        common: Common,
        #[command(subcommand)]
        what: AnalyzeCmd,
    },
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Correlate dataset distance with cross-task generalization error
    Pcc {
        /// Directory produced by gen-data
        #[arg(long)]
        data: PathBuf,
        /// Number of tasks to include (default 4)
        #[arg(long, default_value_t = 4)]
        tasks: usize,
        /// Output directory for pcc.csv, gen_matrix.csv, pcc.svg
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Post-equalization noise statistics for one task's first test channel
    ZfNoise {
        /// Directory produced by gen-data
        #[arg(long)]
        data: PathBuf,
        /// Task index within the directory
        #[arg(long, default_value_t = 0)]
        task: usize,
        /// Monte Carlo trials
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        /// Output CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean channel eigen-spectra per task
    Spectra {
        /// Directory produced by gen-data
        #[arg(long)]
        data: PathBuf,
        /// Output CSV; an SVG is written next to it
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the architecture accounting table
    Complexity {
        /// Optional CSV output path
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, message, code) = match e {
                CliError::Config(m) => ("config", m, 2),
                CliError::Runtime(m) => ("runtime", m, 1),
            };
            let payload = serde_json::json!({ "error": { "kind": kind, "message": message } });
            eprintln!("{payload}");
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Cmd) -> CliResult<()> {
    match cmd {
        Cmd::GenData { common, out } => gen_data(&common.resolve()?, &out),
        Cmd::TrainCollective { common, data, out, gradsig } => {
            cmd_train_collective(&common.resolve()?, &data, &out, &gradsig)
        }
        Cmd::Extract { common, model, gradsig, out } => {
            cmd_extract(&common.resolve()?, &model, &gradsig, &out)
        }
        Cmd::TrainIndividual {
            common,
            scheme,
            strategy,
            unit,
            collective,
            task,
            source,
            out,
            log,
        } => cmd_train_individual(
            &common.resolve()?,
            &scheme,
            strategy.as_deref(),
            unit.as_deref(),
            collective.as_deref(),
            &task,
            source.as_deref(),
            &out,
            log.as_deref(),
        ),
        Cmd::Evaluate { common, model, task, snr_grid, out } => {
            cmd_evaluate(&common.resolve()?, &model, &task, snr_grid.as_deref(), &out)
        }
        Cmd::Analyze { common, what } => {
            let cfg = common.resolve()?;
            match what {
                AnalyzeCmd::Pcc { data, tasks, out_dir } => {
                    analyze_pcc(&cfg, &data, tasks, &out_dir)
                }
                AnalyzeCmd::ZfNoise { data, task, trials, out } => {
                    analyze_zf_noise(&cfg, &data, task, trials, &out)
                }
                AnalyzeCmd::Spectra { data, out } => analyze_spectra(&cfg, &data, &out),
                AnalyzeCmd::Complexity { out } => analyze_complexity(&cfg, out.as_deref()),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

fn task_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("task_{index:03}.ds"))
}

fn load_tasks(dir: &Path, count: usize) -> CliResult<Vec<TaskDataset>> {
    (0..count)
        .map(|i| {
            let path = task_path(dir, i);
            if !path.exists() {
                return Err(CliError::Config(format!("missing dataset {}", path.display())));
            }
            Ok(load_dataset(&path)?)
        })
        .collect()
}

/// Prepend the provenance comment every CSV output carries.
fn stamp_csv(path: &Path, cfg: &RunConfig) -> CliResult<()> {
    let body = std::fs::read_to_string(path)?;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# config_hash={} master_seed={}", cfg.hash(), cfg.master_seed)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

fn parse_strategy(s: &str) -> CliResult<ExpansionStrategy> {
    let strategy = match s {
        "top-embedding" => ExpansionStrategy { family: Family::Embedding, position: Position::Top },
        "middle-embedding" => {
            ExpansionStrategy { family: Family::Embedding, position: Position::Middle }
        }
        "bottom-embedding" | "bottom-inheriting" => {
            ExpansionStrategy { family: Family::Embedding, position: Position::Bottom }
        }
        "top-inheriting" => {
            ExpansionStrategy { family: Family::Inheriting, position: Position::Top }
        }
        "middle-inheriting" => {
            ExpansionStrategy { family: Family::Inheriting, position: Position::Middle }
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown strategy {other:?}; expected one of top-embedding, middle-embedding, \
                 bottom-embedding, top-inheriting, middle-inheriting"
            )))
        }
    };
    Ok(strategy)
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn gen_data(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out)?;
    let params = cfg.channel_params();
    let total = cfg.collective_tasks + cfg.target_tasks;
    let mut files = Vec::new();
    for t in 0..total {
        let task_cfg = make_task(cfg.master_seed, t as u64, &params);
        let ds = generate_dataset(
            &task_cfg,
            cfg.samples_per_task,
            cfg.snr_db,
            &params,
            cfg.master_seed,
        )?;
        let path = task_path(out, t);
        save_dataset(&ds, &path)?;
        files.push(path.file_name().unwrap().to_string_lossy().into_owned());
        println!("wrote {} ({} samples, hash {})", task_path(out, t).display(), ds.samples.len(), &ds.content_hash()[..12]);
    }
    let manifest = serde_json::json!({
        "config_hash": cfg.hash(),
        "master_seed": cfg.master_seed,
        "config": cfg,
        "files": files,
    });
    std::fs::write(out.join("run.json"), serde_json::to_string_pretty(&manifest)? .as_bytes())
        .map_err(CliError::from)?;
    Ok(())
}

fn cmd_train_collective(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    gradsig: &Path,
) -> CliResult<()> {
    let tasks = load_tasks(data, cfg.collective_tasks)?;
    let spec = build_sdnet(cfg.collective_n_conv, cfg.nt, cfg.nr);
    let mut model = init_model(spec, cfg.master_seed, "collective-init", 0)?;
    let collective_cfg = CollectiveConfig { train: cfg.collective_train(), tau: cfg.tau };
    let (log, epoch_logs) = train_collective(&mut model, &tasks, &collective_cfg)?;
    save_checkpoint(&model, out, Some(cfg.master_seed), Some(cfg.hash()))?;
    write_gradsig_csv(gradsig, &log)?;
    stamp_csv(gradsig, cfg)?;
    let last_val = epoch_logs
        .last()
        .and_then(|l| l.last())
        .map(|e| e.val_ser)
        .unwrap_or(f64::NAN);
    println!(
        "collective model: {} tasks, final val SER {last_val:.4}, checkpoint {}",
        tasks.len(),
        out.display()
    );
    Ok(())
}

/// Parse the gradient-significance CSV back into a log. Skips the provenance
/// comment; rows are `layer,rho_task1,...,rho_taskK`.
fn read_gradsig_csv(path: &Path, cfg: &RunConfig) -> CliResult<GradSigLog> {
    let text = std::fs::read_to_string(path)?;
    let mut rho = Vec::new();
    let mut k = 0usize;
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("layer,") || line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 2 {
            return Err(CliError::Runtime(format!("malformed gradsig row: {line}")));
        }
        let row: std::result::Result<Vec<f64>, _> =
            cells[1..].iter().map(|c| c.parse::<f64>()).collect();
        let row = row.map_err(|e| CliError::Runtime(format!("malformed gradsig value: {e}")))?;
        k = row.len();
        rho.push(row);
    }
    if rho.is_empty() {
        return Err(CliError::Runtime("gradsig file holds no data rows".into()));
    }
    Ok(GradSigLog {
        rho,
        tau: cfg.tau,
        epochs_per_task: cfg.collective_epochs,
        task_ids: (0..k as u64).collect(),
    })
}

fn cmd_extract(cfg: &RunConfig, model: &Path, gradsig: &Path, out: &Path) -> CliResult<()> {
    let (model, _manifest) = load_checkpoint(model)?;
    let log = read_gradsig_csv(gradsig, cfg)?;
    let unit = extract_learngene(&model, &log, &cfg.policy())?;
    save_unit_tagged(&unit, out, Some(cfg.hash()), Some(cfg.master_seed))?;
    let summary = serde_json::json!({
        "unit": out.display().to_string(),
        "layers": unit.source_ids,
        "parameters": unit.param_count(),
        "fallback": unit.fallback,
    });
    println!("{summary}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train_individual(
    cfg: &RunConfig,
    scheme: &str,
    strategy: Option<&str>,
    unit: Option<&Path>,
    collective: Option<&Path>,
    task: &Path,
    source: Option<&Path>,
    out: &Path,
    log: Option<&Path>,
) -> CliResult<()> {
    let target = load_dataset(task)?;
    let kind = match scheme {
        "scratch" => SchemeKind::Scratch,
        "transfer" => SchemeKind::Transfer,
        "learngene" => {
            let s = strategy.ok_or_else(|| {
                CliError::Config("the learngene scheme requires --strategy".into())
            })?;
            SchemeKind::Learngene(parse_strategy(s)?)
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown scheme {other:?}; expected scratch, transfer, or learngene"
            )))
        }
    };
    if matches!(kind, SchemeKind::Transfer) && source.is_none() {
        return Err(CliError::Config("the transfer scheme requires --source".into()));
    }
    if matches!(kind, SchemeKind::Learngene(_)) && unit.is_none() {
        return Err(CliError::Config("the learngene scheme requires --unit".into()));
    }
    if let SchemeKind::Learngene(s) = &kind {
        if s.canonical().family == Family::Inheriting && collective.is_none() {
            return Err(CliError::Config(
                "inheriting strategies require --collective".into(),
            ));
        }
    }

    let source_ds = source.map(load_dataset).transpose()?;
    let unit_file = unit.map(load_unit).transpose()?;
    let collective_model: Option<Model> =
        collective.map(|p| load_checkpoint(p).map(|(m, _)| m)).transpose()?;

    let ctx = SchemeContext {
        target: &target,
        source: source_ds.as_ref(),
        collective: collective_model.as_ref(),
        unit: unit_file.as_ref(),
        individual_n_conv: cfg.individual_n_conv,
        train: cfg.individual_train(),
        pretrain_epochs: cfg.individual_epochs,
    };
    let (record, model) = run_scheme(&kind, &ctx, cfg.master_seed)?;
    save_checkpoint(&model, out, Some(cfg.master_seed), Some(cfg.hash()))?;
    if let Some(log_path) = log {
        write_metrics_jsonl_tagged(log_path, &[record.clone()], cfg)?;
    }
    let point = &record.test_points[0];
    println!(
        "{} on task {}: test SER {:.4} +/- {:.4} ({} symbols), transferred ratio {:.3}, {} ms",
        record.scheme,
        record.task_id,
        point.ser,
        point.stderr,
        point.n_symbols,
        record.transferred_ratio,
        record.wall_ms
    );
    Ok(())
}

/// JSONL with a leading provenance record, then one record per epoch.
fn write_metrics_jsonl_tagged(
    path: &Path,
    records: &[MetricsRecord],
    cfg: &RunConfig,
) -> CliResult<()> {
    let mut f = std::fs::File::create(path)?;
    let header = serde_json::json!({
        "kind": "run-header",
        "config_hash": cfg.hash(),
        "master_seed": cfg.master_seed,
    });
    writeln!(f, "{header}")?;
    for r in records {
        for e in &r.epochs {
            let line = serde_json::json!({
                "scheme": r.scheme,
                "task_id": r.task_id,
                "seed": r.seed,
                "epoch": e.epoch,
                "train_loss": e.train_loss,
                "val_ser": e.val_ser,
                "wall_ms": e.wall_ms,
            });
            writeln!(f, "{line}")?;
        }
        let final_line = serde_json::json!({
            "kind": "final",
            "scheme": r.scheme,
            "task_id": r.task_id,
            "seed": r.seed,
            "test_points": r.test_points,
            "transferred_ratio": r.transferred_ratio,
            "dataset_hash": r.dataset_hash,
        });
        writeln!(f, "{final_line}")?;
    }
    Ok(())
}

fn cmd_evaluate(
    cfg: &RunConfig,
    model_path: &Path,
    task: &Path,
    snr_grid: Option<&str>,
    out: &Path,
) -> CliResult<()> {
    let (mut model, manifest) = load_checkpoint(model_path)?;
    let ds = load_dataset(task)?;
    let meta = &manifest.spec.meta;
    if meta.nt != ds.nt || meta.nr != ds.nr {
        return Err(CliError::Config(format!(
            "geometry mismatch: model is {}x{}, dataset is {}x{}",
            meta.nt, meta.nr, ds.nt, ds.nr
        )));
    }
    let grid: Vec<f64> = match snr_grid {
        Some(text) => text
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CliError::Config(format!("bad --snr-grid: {e}")))?,
        None => cfg.snr_grid.clone(),
    };
    if grid.is_empty() {
        return Err(CliError::Config("empty SNR grid".into()));
    }
    let params = sdnet_core::channel::ChannelParams {
        nt: ds.nt,
        nr: ds.nr,
        np: ds.np,
        ..cfg.channel_params()
    };
    let mut models = [("model".to_string(), &mut model)];
    let curves = snr_sweep(&mut models, &ds, &params, &grid)?;
    let records: Vec<MetricsRecord> = curves
        .iter()
        .map(|c| MetricsRecord {
            scheme: c.scheme.clone(),
            task_id: ds.task_id,
            seed: cfg.master_seed,
            epochs: Vec::new(),
            test_points: c.points.clone(),
            wall_ms: 0,
            transferred_ratio: 0.0,
            dataset_hash: ds.content_hash(),
        })
        .collect();
    write_summary_csv(out, &records, &cfg.hash(), cfg.master_seed)?;
    for c in &curves {
        let sers: Vec<String> = c.points.iter().map(|p| format!("{:.4}", p.ser)).collect();
        println!("{}: SER over grid [{}]", c.scheme, sers.join(", "));
    }
    Ok(())
}

fn analyze_pcc(cfg: &RunConfig, data: &Path, n_tasks: usize, out_dir: &Path) -> CliResult<()> {
    if n_tasks < 2 {
        return Err(CliError::Config("pcc needs at least 2 tasks".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let tasks = load_tasks(data, n_tasks)?;
    let mut models = Vec::new();
    for t in &tasks {
        let ctx = SchemeContext {
            target: t,
            source: None,
            collective: None,
            unit: None,
            individual_n_conv: cfg.individual_n_conv,
            train: cfg.individual_train(),
            pretrain_epochs: cfg.individual_epochs,
        };
        let (_, model) = run_scheme(&SchemeKind::Scratch, &ctx, cfg.master_seed)?;
        models.push(model);
    }
    let gen = generalization_matrix(&mut models, &tasks)?;
    let (xs, ys, r) = distance_vs_generalization(&tasks, &gen, 200, cfg.master_seed)?;

    let pcc_path = out_dir.join("pcc.csv");
    {
        let mut f = std::fs::File::create(&pcc_path)?;
        writeln!(f, "dataset_distance,gen_error_db")?;
        for (x, y) in xs.iter().zip(&ys) {
            writeln!(f, "{x},{y}")?;
        }
    }
    stamp_csv(&pcc_path, cfg)?;

    let matrix_path = out_dir.join("gen_matrix.csv");
    {
        let mut f = std::fs::File::create(&matrix_path)?;
        writeln!(f, "trained_on,tested_on,ser,gen_error_db")?;
        for m in 0..tasks.len() {
            for n in 0..tasks.len() {
                let g = gen.gen_error_db[m][n]
                    .map(|v| v.to_string())
                    .unwrap_or_default();
                writeln!(f, "{},{},{},{}", tasks[m].task_id, tasks[n].task_id, gen.ser[m][n], g)?;
            }
        }
    }
    stamp_csv(&matrix_path, cfg)?;

    let mut pts: Vec<(f64, f64)> = xs.iter().cloned().zip(ys.iter().cloned()).collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let _ = write_svg_chart(
        &out_dir.join("pcc.svg"),
        "generalization error vs dataset distance",
        &[("tasks".into(), pts)],
    );
    println!("pcc {r:.4} over {} pairs ({} degenerate excluded)", xs.len(), gen.excluded);
    Ok(())
}

fn analyze_zf_noise(
    cfg: &RunConfig,
    data: &Path,
    task: usize,
    trials: usize,
    out: &Path,
) -> CliResult<()> {
    let ds = load_tasks(data, task + 1)?.pop().unwrap();
    let sample = ds
        .test()
        .first()
        .ok_or_else(|| CliError::Runtime("dataset has no test samples".into()))?;
    let mut rng = RngStream::derive(cfg.master_seed, "zf-noise", ds.task_id);
    let stats = zf_noise_stats(&sample.h, sample.noise_var, trials, &mut rng)?;
    {
        let mut f = std::fs::File::create(out)?;
        writeln!(f, "quantity,empirical,analytic")?;
        writeln!(
            f,
            "total_variance,{},{}",
            stats.empirical_total_var, stats.analytic_total_var
        )?;
        for i in 0..stats.analytic_cov.nrows() {
            writeln!(
                f,
                "cov_diag_{i},{},{}",
                stats.empirical_cov[(i, i)].re,
                stats.analytic_cov[(i, i)].re
            )?;
        }
    }
    stamp_csv(out, cfg)?;
    let rel = (stats.empirical_total_var - stats.analytic_total_var).abs()
        / stats.analytic_total_var.max(f64::MIN_POSITIVE);
    println!(
        "zf-noise over {trials} trials: empirical {:.6e}, analytic {:.6e}, relative error {:.3}%",
        stats.empirical_total_var,
        stats.analytic_total_var,
        100.0 * rel
    );
    Ok(())
}

fn analyze_spectra(cfg: &RunConfig, data: &Path, out: &Path) -> CliResult<()> {
    let total = cfg.collective_tasks + cfg.target_tasks;
    let mut tasks = Vec::new();
    for i in 0..total {
        if !task_path(data, i).exists() {
            break;
        }
        tasks.push(load_dataset(&task_path(data, i))?);
    }
    if tasks.is_empty() {
        return Err(CliError::Config(format!("no datasets found in {}", data.display())));
    }
    write_spectra_csv(out, &tasks)?;
    stamp_csv(out, cfg)?;
    let series: Vec<(String, Vec<(f64, f64)>)> = tasks
        .iter()
        .map(|t| {
            let spectrum = sdnet_core::experiments::mean_spectrum(t);
            let pts = spectrum
                .iter()
                .enumerate()
                .map(|(i, v)| ((i + 1) as f64, v.max(f64::MIN_POSITIVE)))
                .collect();
            (format!("task {}", t.task_id), pts)
        })
        .collect();
    let _ = write_svg_chart(
        &out.with_extension("svg"),
        "mean channel eigen-spectra",
        &series,
    );
    println!("wrote spectra for {} tasks to {}", tasks.len(), out.display());
    Ok(())
}

fn analyze_complexity(cfg: &RunConfig, out: Option<&Path>) -> CliResult<()> {
    let rows = complexity_report(cfg.nt, cfg.nr)?;
    println!(
        "{:<24} {:>11} {:>12} {:>12} {:>12}",
        "model", "conv layers", "parameters", "flops", "transferred"
    );
    for r in &rows {
        println!(
            "{:<24} {:>11} {:>12} {:>12} {:>12}",
            r.name, r.conv_layers, r.trainable_params, r.flops, r.transferred_ratio
        );
    }
    if let Some(path) = out {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "model,conv_layers,parameters,flops,transferred_ratio")?;
        for r in &rows {
            writeln!(
                f,
                "{},{},{},{},{}",
                r.name, r.conv_layers, r.trainable_params, r.flops, r.transferred_ratio
            )?;
        }
        stamp_csv(path, cfg)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_parse_to_canonical_forms() {
        let s = parse_strategy("bottom-inheriting").unwrap();
        assert_eq!(s, parse_strategy("bottom-embedding").unwrap());
        assert!(parse_strategy("sideways-embedding").is_err());
        for name in [
            "top-embedding",
            "middle-embedding",
            "bottom-embedding",
            "top-inheriting",
            "middle-inheriting",
        ] {
            assert_eq!(parse_strategy(name).unwrap().label(), name);
        }
    }

    #[test]
    fn overrides_take_precedence_over_defaults() {
        let common = Common { seed: Some(9), nt: Some(4), nr: Some(8), np: Some(8), ..Common::default() };
        let cfg = common.resolve().unwrap();
        assert_eq!(cfg.master_seed, 9);
        assert_eq!((cfg.nt, cfg.nr, cfg.np), (4, 8, 8));
    }

    #[test]
    fn invalid_override_combination_is_config_error() {
        // np < nt violates the schema.
        let common = Common { nt: Some(8), np: Some(4), ..Common::default() };
        assert!(matches!(common.resolve(), Err(CliError::Config(_))));
    }

    #[test]
    fn gradsig_round_trip_through_csv() {
        let cfg = RunConfig::default();
        let log = GradSigLog {
            rho: vec![vec![0.5, 0.25], vec![0.125, 0.0625]],
            tau: cfg.tau,
            epochs_per_task: cfg.collective_epochs,
            task_ids: vec![0, 1],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        write_gradsig_csv(&path, &log).unwrap();
        stamp_csv(&path, &cfg).unwrap();
        let back = read_gradsig_csv(&path, &cfg).unwrap();
        assert_eq!(back.rho, log.rho);
    }
}
