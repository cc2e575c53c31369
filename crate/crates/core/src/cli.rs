//! Command-line front end: pretrain, fit, evaluate, export-embedding, sweep.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::export_matrix;
use crate::graph::{load_graph, DatasetManifest, Graph, LoadInfo};
use crate::metrics::MetricsReport;
use crate::proximity::{proximity, ProximityMatrix};
use crate::trainer::{RunRecord, TrainConfig, Trainer};
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "daegc", version, about = "Attentional embedded graph clustering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the autoencoder on reconstruction only and save a checkpoint.
    Pretrain(TrainArgs),
    /// Full training; writes run.json, labels.txt, embedding.tsv, q.tsv, p.tsv, checkpoint.bin.
    Fit(TrainArgs),
    /// Compare a label file against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Write the embedding of a checkpointed model.
    ExportEmbedding {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit once per embedding width and tabulate ACC/NMI.
    Sweep {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_delimiter = ',', default_value = "4,16,64,256,1024")]
        widths: Vec<usize>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON file with training config fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed list such as `0,1,2` or `0..5`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Seeds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long = "t-order")]
    pub t_order: Option<usize>,
    #[arg(long = "embed-dim")]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long = "pretrain-epochs")]
    pub pretrain_epochs: Option<usize>,
    #[arg(long = "joint-iters")]
    pub joint_iters: Option<usize>,
}

/// Parses `a,b,c` or a half-open range `a..b`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, Error> {
    let bad = || Error::Cli(format!("invalid seed list '{s}'"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    let seeds: Vec<u64> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

impl TrainArgs {
    /// Config file (if any) with flag overrides applied.
    pub fn resolve_config(&self) -> Result<TrainConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Cli(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Cli(format!("{}: {e}", path.display())))?
            }
            None => TrainConfig::default(),
        };
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.t_order {
            cfg.t = v;
        }
        if let Some(v) = self.embed_dim {
            cfg.embed = v;
        }
        if let Some(v) = self.k {
            cfg.k = Some(v);
        }
        if let Some(v) = self.pretrain_epochs {
            cfg.pretrain_epochs = v;
        }
        if let Some(v) = self.joint_iters {
            cfg.joint_iters = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_seeds(&self, cfg: &TrainConfig) -> Result<Vec<u64>, Error> {
        match &self.seeds {
            Some(s) => parse_seeds(s),
            None => Ok(vec![cfg.seed]),
        }
    }
}

/// Loads a dataset, applying the config's normalization override when set.
pub fn load_dataset(manifest: &Path, cfg: &TrainConfig) -> Result<(Graph, LoadInfo), Error> {
    let mut m = DatasetManifest::from_path(manifest)?;
    if cfg.normalization.is_some() {
        m.normalization = cfg.normalization;
    }
    Ok(load_graph(&m)?)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<(), Error> {
    let mut text = String::with_capacity(labels.len() * 3);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::Cli(format!("{}: {e}", path.display())))
}

/// One integer label per line; blank lines are ignored.
pub fn read_labels(path: &Path) -> Result<Vec<usize>, Error> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Cli(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| {
                Error::Cli(format!("{}:{}: not a label: '{l}'", path.display(), i + 1))
            })
        })
        .collect()
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Cli(format!("{}: {e}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub manifest: PathBuf,
    pub load: LoadInfo,
    pub config: TrainConfig,
}

/// Trains one seed and writes its artifacts into `dir`.
pub fn fit_one(
    graph: &Graph,
    prox: &ProximityMatrix,
    echo: &ConfigEcho,
    dir: &Path,
) -> Result<RunRecord, Error> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_json(&dir.join("config.json"), echo)?;
    let mut trainer = Trainer::new(graph, prox, echo.config.clone())?;
    let record = trainer.run()?;
    write_json(&dir.join("run.json"), &record)?;
    write_labels(&dir.join("labels.txt"), &record.final_labels)?;
    let z = trainer.embedding()?;
    let p = dir.join("embedding.tsv");
    export_matrix(&p, &z).map_err(|e| io_err(&p, e))?;
    let state = trainer.cluster_state().expect("finished run has cluster state");
    for (name, m) in [("q.tsv", &state.q), ("p.tsv", &state.p)] {
        let p = dir.join(name);
        export_matrix(&p, m).map_err(|e| io_err(&p, e))?;
    }
    if let Some(report) = &record.final_metrics {
        write_json(&dir.join("metrics.json"), report)?;
    }
    trainer.save_checkpoint(&dir.join("checkpoint.bin"))?;
    Ok(record)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub seeds: Vec<u64>,
    pub acc: MeanStd,
    pub nmi: MeanStd,
    pub fscore: MeanStd,
    pub ari: MeanStd,
}

impl Summary {
    pub fn from_reports(seeds: Vec<u64>, reports: &[MetricsReport]) -> Self {
        let col = |f: fn(&MetricsReport) -> f64| {
            MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>())
        };
        Self {
            seeds,
            acc: col(|r| r.acc),
            nmi: col(|r| r.nmi),
            fscore: col(|r| r.fscore),
            ari: col(|r| r.ari),
        }
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<8} {:>8} {:>8}\n", "metric", "mean", "std");
        for (name, m) in [
            ("ACC", self.acc),
            ("NMI", self.nmi),
            ("F-score", self.fscore),
            ("ARI", self.ari),
        ] {
            s.push_str(&format!("{name:<8} {:>8.4} {:>8.4}\n", m.mean, m.std));
        }
        s
    }
}

fn map_seeds<T: Send>(
    seeds: &[u64],
    jobs: usize,
    f: impl Fn(u64) -> Result<T, Error> + Sync + Send,
) -> Result<Vec<T>, Error> {
    if jobs <= 1 || seeds.len() <= 1 {
        return seeds.iter().map(|&s| f(s)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Cli(format!("thread pool: {e}")))?;
    pool.install(|| seeds.par_iter().map(|&s| f(s)).collect())
}

/// Fits every seed. A single seed writes straight into `out`; several seeds write
/// `out/seed-<s>/` plus `summary.json`.
pub fn run_fit(
    manifest: &Path,
    cfg: &TrainConfig,
    seeds: &[u64],
    jobs: usize,
    out: &Path,
) -> Result<Vec<RunRecord>, Error> {
    let (graph, load) = load_dataset(manifest, cfg)?;
    let prox = proximity(&graph, cfg.t)?;
    let single = seeds.len() == 1;
    let records = map_seeds(seeds, jobs, |seed| {
        let echo = ConfigEcho {
            manifest: manifest.to_path_buf(),
            load: load.clone(),
            config: TrainConfig {
                seed,
                ..cfg.clone()
            },
        };
        let dir = if single {
            out.to_path_buf()
        } else {
            out.join(format!("seed-{seed}"))
        };
        fit_one(&graph, &prox, &echo, &dir)
    })?;
    let reports: Vec<MetricsReport> = records
        .iter()
        .filter_map(|r| r.final_metrics.clone())
        .collect();
    if !single && reports.len() == records.len() {
        let summary = Summary::from_reports(seeds.to_vec(), &reports);
        write_json(&out.join("summary.json"), &summary)?;
    }
    Ok(records)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub width: usize,
    pub acc: MeanStd,
    pub nmi: MeanStd,
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = format!("{:>6} {:>8} {:>8} {:>8} {:>8}\n", "width", "ACC", "±", "NMI", "±");
    for r in rows {
        s.push_str(&format!(
            "{:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
            r.width, r.acc.mean, r.acc.std, r.nmi.mean, r.nmi.std
        ));
    }
    s
}

/// Fits each embedding width over all seeds; writes `sweep.json` and `sweep.tsv`.
pub fn run_sweep(
    manifest: &Path,
    cfg: &TrainConfig,
    widths: &[usize],
    seeds: &[u64],
    jobs: usize,
    out: &Path,
) -> Result<Vec<SweepRow>, Error> {
    if widths.is_empty() {
        return Err(Error::Cli("no widths given".into()));
    }
    let (graph, load) = load_dataset(manifest, cfg)?;
    if graph.labels().is_none() {
        return Err(Error::Cli("sweep needs ground-truth labels".into()));
    }
    let prox = proximity(&graph, cfg.t)?;
    let mut rows = Vec::new();
    for &width in widths {
        let reports = map_seeds(seeds, jobs, |seed| {
            let config = TrainConfig {
                seed,
                embed: width,
                ..cfg.clone()
            };
            let echo = ConfigEcho {
                manifest: manifest.to_path_buf(),
                load: load.clone(),
                config,
            };
            let dir = out.join(format!("width-{width}")).join(format!("seed-{seed}"));
            let rec = fit_one(&graph, &prox, &echo, &dir)?;
            Ok(rec.final_metrics.expect("labels present"))
        })?;
        rows.push(SweepRow {
            width,
            acc: MeanStd::of(&reports.iter().map(|r| r.acc).collect::<Vec<_>>()),
            nmi: MeanStd::of(&reports.iter().map(|r| r.nmi).collect::<Vec<_>>()),
        });
    }
    write_json(&out.join("sweep.json"), &rows)?;
    let tsv: String = std::iter::once("width\tacc\tacc_std\tnmi\tnmi_std\n".to_string())
        .chain(rows.iter().map(|r| {
            format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.width, r.acc.mean, r.acc.std, r.nmi.mean, r.nmi.std
            )
        }))
        .collect();
    fs::write(out.join("sweep.tsv"), tsv).map_err(|e| io_err(out, e))?;
    Ok(rows)
}

/// Pretrains one seed and saves the reconstruction-only model.
pub fn run_pretrain(
    manifest: &Path,
    cfg: &TrainConfig,
    seed: u64,
    out: &Path,
) -> Result<RunRecord, Error> {
    let (graph, load) = load_dataset(manifest, cfg)?;
    let prox = proximity(&graph, cfg.t)?;
    let cfg = TrainConfig {
        seed,
        ..cfg.clone()
    };
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_json(
        &out.join("config.json"),
        &ConfigEcho {
            manifest: manifest.to_path_buf(),
            load,
            config: cfg.clone(),
        },
    )?;
    let mut trainer = Trainer::new(&graph, &prox, cfg)?;
    let z = trainer.pretrain()?;
    let p = out.join("embedding.tsv");
    export_matrix(&p, &z).map_err(|e| io_err(&p, e))?;
    trainer.save_checkpoint(&out.join("checkpoint.bin"))?;
    let record = trainer.record().clone();
    write_json(&out.join("pretrain.json"), &record)?;
    Ok(record)
}

pub fn run_export(manifest: &Path, checkpoint: &Path, out: &Path) -> Result<(), Error> {
    let bytes = fs::read(checkpoint).map_err(|e| io_err(checkpoint, e))?;
    let (header, _) = crate::kernels::checkpoint::decode_checkpoint(&bytes)?;
    let cfg: TrainConfig = serde_json::from_value(header.meta["record"]["config"].clone())
        .map_err(|e| io_err(checkpoint, e))?;
    let (graph, _) = load_dataset(manifest, &cfg)?;
    let prox = proximity(&graph, cfg.t)?;
    let trainer = Trainer::from_checkpoint_bytes(&graph, &prox, &bytes)?;
    let z = trainer.embedding()?;
    export_matrix(out, &z).map_err(|e| io_err(out, e))
}

pub fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Pretrain(args) => {
            let cfg = args.resolve_config()?;
            let seeds = args.resolve_seeds(&cfg)?;
            if seeds.len() != 1 {
                return Err(Error::Cli("pretrain takes a single seed".into()));
            }
            let rec = run_pretrain(&args.manifest, &cfg, seeds[0], &args.out)?;
            println!(
                "pretrained {} epochs, final L_r {:.6}",
                rec.pretrain_loss.len(),
                rec.pretrain_loss.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Fit(args) => {
            let cfg = args.resolve_config()?;
            let seeds = args.resolve_seeds(&cfg)?;
            let records = run_fit(&args.manifest, &cfg, &seeds, args.jobs, &args.out)?;
            let reports: Vec<MetricsReport> = records
                .iter()
                .filter_map(|r| r.final_metrics.clone())
                .collect();
            if reports.len() == 1 {
                println!("{}", reports[0]);
            } else if !reports.is_empty() {
                print!("{}", Summary::from_reports(seeds, &reports).table());
            } else {
                println!("wrote {} run(s) to {}", records.len(), args.out.display());
            }
        }
        Command::Evaluate { pred, truth, json } => {
            let p = read_labels(&pred)?;
            let t = read_labels(&truth)?;
            let report = MetricsReport::compute(&p, &t)?;
            if json {
                println!("{}", report.to_json());
            } else {
                println!("{report}");
            }
        }
        Command::ExportEmbedding {
            manifest,
            checkpoint,
            out,
        } => run_export(&manifest, &checkpoint, &out)?,
        Command::Sweep { train, widths } => {
            let cfg = train.resolve_config()?;
            let seeds = match &train.seeds {
                Some(s) => parse_seeds(s)?,
                None => (0..5).collect(),
            };
            let rows = run_sweep(&train.manifest, &cfg, &widths, &seeds, train.jobs, &train.out)?;
            print!("{}", sweep_table(&rows));
        }
    }
    Ok(())
}
