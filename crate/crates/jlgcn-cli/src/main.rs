//! Command-line entry point: train / eval / ablate / export-graph /
//! make-synth / convert, driven by a JSON config file with flag overrides.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error.

use clap::{Args, Parser, Subcommand};
use jlgcn::checkpoint::{self, Checkpoint};
use jlgcn::data::{
    load_citation, load_pointsets, save_citation, save_pointsets, synth_citation,
    synth_pointsets, CitationSynthSpec, PointSetDataset, ShapeFamily,
};
use jlgcn::error::Error;
use jlgcn::graphlearn::{write_matrix_csv, write_pgm_heatmap};
use jlgcn::layer::{GlrSignalSource, LayerMode, RInit};
use jlgcn::linalg::Rng;
use jlgcn::lossopt::{masked_accuracy, Reduction};
use jlgcn::model::GraphFrom;
use jlgcn::train::{
    ablate, extract_learned_adjacency, rebuild_graph_net, rebuild_node_net, run_with_config,
    sweep_csv, Precision, Selection, SweepSpec, Task, TrainConfig,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "jlgcn", about = "Joint graph-structure and feature learning trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a JSON report plus a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run a sweep over λ / missing-ratio grids and emit CSV.
    Ablate(AblateArgs),
    /// Export a learned (or ground-truth) adjacency as CSV + PGM heatmap.
    ExportGraph(ExportArgs),
    /// Generate synthetic datasets (point sets or citation analogs).
    MakeSynth(SynthArgs),
    /// Validate a dataset directory and print its statistics.
    Convert(ConvertArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON config file; fields mirror the TrainConfig structure.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base profile when no config file is given.
    #[arg(long, value_parser = ["citation", "pointcloud"])]
    profile: Option<String>,

    #[arg(long, value_parser = ["node", "graph"])]
    task: Option<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_parser = ["plain_gcn", "jlgcn", "jlgcn_concat"])]
    mode: Option<String>,
    /// Comma-separated hidden widths, e.g. 16 or 64,128,1024.
    #[arg(long)]
    hidden: Option<String>,
    /// Comma-separated fully connected head widths (graph task).
    #[arg(long)]
    head_hidden: Option<String>,
    #[arg(long)]
    metric_rank: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    decay_factor: Option<f64>,
    #[arg(long)]
    decay_period: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout_p: Option<f64>,
    #[arg(long)]
    leaky_slope: Option<f64>,
    /// Comma-separated seed list, e.g. 0,1,2.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    edge_missing: Option<f64>,
    #[arg(long)]
    label_missing: Option<f64>,
    #[arg(long)]
    point_missing: Option<f64>,
    #[arg(long)]
    perturb_seed: Option<u64>,
    #[arg(long, value_parser = ["random", "identity"])]
    r_init: Option<String>,
    #[arg(long, value_parser = ["input", "output"])]
    glr_signal: Option<String>,
    #[arg(long, value_parser = ["f32", "f64"])]
    precision: Option<String>,
    #[arg(long)]
    dropout_all_layers: Option<bool>,
    #[arg(long, value_parser = ["pre_dropout", "post_dropout"])]
    graph_from: Option<String>,
    #[arg(long, value_parser = ["mean", "sum"])]
    ce_reduction: Option<String>,
    #[arg(long)]
    weight_decay_on_r: Option<bool>,
    #[arg(long, value_parser = ["best_val", "final_epoch"])]
    selection: Option<String>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    node_budget: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    log_every: Option<usize>,
}

impl ConfigArgs {
    fn build(&self) -> Result<TrainConfig, Error> {
        let mut cfg = if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("bad config file {}: {e}", path.display())))?
        } else {
            match (self.profile.as_deref(), self.task.as_deref()) {
                (Some("pointcloud"), _) | (None, Some("graph")) => {
                    TrainConfig::pointcloud_defaults()
                }
                _ => TrainConfig::citation_defaults(),
            }
        };

        if let Some(t) = &self.task {
            cfg.task = match t.as_str() {
                "node" => Task::Node,
                _ => Task::Graph,
            };
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        if let Some(m) = &self.mode {
            cfg.mode = parse_mode(m);
        }
        if let Some(h) = &self.hidden {
            cfg.hidden = parse_usize_list(h)?;
        }
        if let Some(h) = &self.head_hidden {
            cfg.head_hidden = parse_usize_list(h)?;
        }
        if let Some(v) = self.metric_rank {
            cfg.metric_rank = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.decay_factor {
            cfg.decay_factor = v;
        }
        if let Some(v) = self.decay_period {
            cfg.decay_period = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.dropout_p {
            cfg.dropout_p = v;
        }
        if let Some(v) = self.leaky_slope {
            cfg.leaky_slope = v;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = parse_u64_list(s)?;
        }
        if let Some(v) = self.edge_missing {
            cfg.perturb.edge_missing = v;
        }
        if let Some(v) = self.label_missing {
            cfg.perturb.label_missing = v;
        }
        if let Some(v) = self.point_missing {
            cfg.perturb.point_missing = v;
        }
        if let Some(v) = self.perturb_seed {
            cfg.perturb.seed = v;
        }
        if let Some(v) = &self.r_init {
            cfg.r_init = if v == "identity" {
                RInit::Identity
            } else {
                RInit::Random
            };
        }
        if let Some(v) = &self.glr_signal {
            cfg.glr_signal = if v == "output" {
                GlrSignalSource::Output
            } else {
                GlrSignalSource::Input
            };
        }
        if let Some(v) = &self.precision {
            cfg.precision = if v == "f32" {
                Precision::F32
            } else {
                Precision::F64
            };
        }
        if let Some(v) = self.dropout_all_layers {
            cfg.dropout_all_layers = v;
        }
        if let Some(v) = &self.graph_from {
            cfg.graph_from = if v == "post_dropout" {
                GraphFrom::PostDropout
            } else {
                GraphFrom::PreDropout
            };
        }
        if let Some(v) = &self.ce_reduction {
            cfg.ce_reduction = if v == "sum" {
                Reduction::Sum
            } else {
                Reduction::Mean
            };
        }
        if let Some(v) = self.weight_decay_on_r {
            cfg.weight_decay_on_r = v;
        }
        if let Some(v) = &self.selection {
            cfg.selection = if v == "final_epoch" {
                Selection::FinalEpoch
            } else {
                Selection::BestVal
            };
        }
        if let Some(v) = self.patience {
            cfg.patience = Some(v);
        }
        if let Some(v) = self.node_budget {
            cfg.node_budget = Some(v);
        }
        if let Some(v) = self.eval_every {
            cfg.eval_every = v;
        }
        if let Some(v) = self.log_every {
            cfg.log_every = v;
        }
        Ok(cfg)
    }
}

fn parse_mode(m: &str) -> LayerMode {
    match m {
        "plain_gcn" => LayerMode::PlainGcn,
        "jlgcn_concat" => LayerMode::JlgcnConcat,
        _ => LayerMode::Jlgcn,
    }
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>, Error> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|e| Error::Config(format!("bad integer {p:?}: {e}")))
        })
        .collect()
}

fn parse_u64_list(s: &str) -> Result<Vec<u64>, Error> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|e| Error::Config(format!("bad integer {p:?}: {e}")))
        })
        .collect()
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, Error> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|e| Error::Config(format!("bad number {p:?}: {e}")))
        })
        .collect()
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Where to write the JSON run report.
    #[arg(long, default_value = "report.json")]
    report: PathBuf,
    /// Where to write the best seed's checkpoint.
    #[arg(long, default_value = "model.ckpt")]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated λ grid.
    #[arg(long)]
    lambda_grid: Option<String>,
    #[arg(long)]
    edge_missing_grid: Option<String>,
    #[arg(long)]
    label_missing_grid: Option<String>,
    #[arg(long)]
    point_missing_grid: Option<String>,
    /// Output CSV path.
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Layer whose learned adjacency to export; -1 exports the
    /// ground-truth graph.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    layer_index: isize,
    /// Node range lo:hi (half-open).
    #[arg(long, default_value = "0:50")]
    node_range: String,
    /// Log-transform scale c in v -> log(1 + v*c).
    #[arg(long, default_value_t = 100.0)]
    log_scale_c: f64,
    #[arg(long, default_value = "graph.csv")]
    csv: PathBuf,
    #[arg(long, default_value = "graph.pgm")]
    pgm: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// What to generate.
    #[arg(long, value_parser = ["pointset", "citation"], default_value = "pointset")]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,

    /// Point sets: comma-separated shape families
    /// (sphere-shell,cube-surface,plane-disk,two-cluster,helix,torus).
    #[arg(long, default_value = "sphere-shell,cube-surface,plane-disk,two-cluster,helix,torus")]
    families: String,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 128)]
    points: usize,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    #[arg(long, default_value_t = 0.75)]
    train_fraction: f64,

    /// Citation analogs: preset shape.
    #[arg(long, value_parser = ["cora-analog", "citeseer-analog"], default_value = "cora-analog")]
    preset: String,
}

#[derive(Args)]
struct ConvertArgs {
    /// Citation dataset directory to validate.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Point-set dataset directory to validate.
    #[arg(long)]
    pointsets: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.config.build()?;
            let outcome = run_with_config(&cfg)?;
            std::fs::write(
                &args.report,
                serde_json::to_string_pretty(&outcome.report)
                    .map_err(|e| Error::Config(format!("report serialization: {e}")))?,
            )?;
            checkpoint::save(&outcome.to_checkpoint(), &args.checkpoint)?;
            println!(
                "mean selected test accuracy: {:.4} ± {:.4} over {} seeds",
                outcome.report.aggregate.mean_selected_test_acc,
                outcome.report.aggregate.std_selected_test_acc,
                outcome.report.per_seed.len()
            );
            println!("report: {}", args.report.display());
            println!("checkpoint: {}", args.checkpoint.display());
            Ok(())
        }
        Command::Eval(args) => {
            let ckpt: Checkpoint<f64> = checkpoint::load(&args.checkpoint)?;
            let cfg: TrainConfig = serde_json::from_str(&ckpt.config_json)
                .map_err(|e| Error::Checkpoint(format!("config echo: {e}")))?;
            match cfg.task {
                Task::Node => {
                    let (bundle, _) = load_citation(&args.dataset)?;
                    let classes = bundle.num_classes().max(2);
                    let mut net =
                        rebuild_node_net::<f64>(&cfg, bundle.k(), classes, &ckpt.tensors)?;
                    let features = bundle.features.clone();
                    let graph0 = bundle.adjacency::<f64>();
                    let mut rng = Rng::new(0);
                    let (logits, _) = net.forward(&features, &graph0, false, false, &mut rng)?;
                    let report = serde_json::json!({
                        "train_acc": masked_accuracy(&logits, &bundle.labels, &bundle.masks.train),
                        "val_acc": masked_accuracy(&logits, &bundle.labels, &bundle.masks.val),
                        "test_acc": masked_accuracy(&logits, &bundle.labels, &bundle.masks.test),
                    });
                    println!("{report}");
                }
                Task::Graph => {
                    let data = load_pointsets(&args.dataset)?;
                    let classes = data.num_classes().max(2);
                    let mut net = rebuild_graph_net::<f64>(&cfg, classes, &ckpt.tensors)?;
                    let labels: Vec<usize> = data.instances.iter().map(|p| p.label).collect();
                    let mut hit = 0usize;
                    let mut total = 0usize;
                    let test_idx: Vec<usize> = (0..data.instances.len())
                        .filter(|&i| data.test[i])
                        .collect();
                    let mut rng = Rng::new(0);
                    for chunk in test_idx.chunks(cfg.batch_size.max(1)) {
                        let insts: Vec<_> = chunk
                            .iter()
                            .map(|&i| data.instances[i].points.clone())
                            .collect();
                        let (logits, _) = net.forward(&insts, false, false, &mut rng)?;
                        let pred = logits.argmax_rows();
                        for (row, &i) in chunk.iter().enumerate() {
                            total += 1;
                            if pred[row] == labels[i] {
                                hit += 1;
                            }
                        }
                    }
                    let report = serde_json::json!({
                        "test_acc": hit as f64 / total.max(1) as f64,
                        "test_instances": total,
                    });
                    println!("{report}");
                }
            }
            Ok(())
        }
        Command::Ablate(args) => {
            let cfg = args.config.build()?;
            let sweep = SweepSpec {
                lambda_grid: args
                    .lambda_grid
                    .as_deref()
                    .map(parse_f64_list)
                    .transpose()?
                    .unwrap_or_default(),
                edge_missing_grid: args
                    .edge_missing_grid
                    .as_deref()
                    .map(parse_f64_list)
                    .transpose()?
                    .unwrap_or_default(),
                label_missing_grid: args
                    .label_missing_grid
                    .as_deref()
                    .map(parse_f64_list)
                    .transpose()?
                    .unwrap_or_default(),
                point_missing_grid: args
                    .point_missing_grid
                    .as_deref()
                    .map(parse_f64_list)
                    .transpose()?
                    .unwrap_or_default(),
            };
            let rows = ablate(&cfg, &sweep, |cell| Ok(run_with_config(cell)?.report))?;
            std::fs::write(&args.out, sweep_csv(&rows))?;
            println!("sweep rows: {} -> {}", rows.len(), args.out.display());
            Ok(())
        }
        Command::ExportGraph(args) => {
            let ckpt: Checkpoint<f64> = checkpoint::load(&args.checkpoint)?;
            let cfg: TrainConfig = serde_json::from_str(&ckpt.config_json)
                .map_err(|e| Error::Checkpoint(format!("config echo: {e}")))?;
            let (bundle, _) = load_citation(&args.dataset)?;
            let (lo, hi) = parse_range(&args.node_range)?;
            let sub = extract_learned_adjacency(
                &cfg,
                &bundle,
                &ckpt.tensors,
                args.layer_index,
                (lo, hi),
            )?;
            write_matrix_csv(&sub, &args.csv)?;
            write_pgm_heatmap(&sub, &args.pgm, args.log_scale_c)?;
            println!(
                "exported layer {} adjacency for nodes [{lo},{hi}) to {} and {}",
                args.layer_index,
                args.csv.display(),
                args.pgm.display()
            );
            Ok(())
        }
        Command::MakeSynth(args) => match args.kind.as_str() {
            "pointset" => {
                let families: Result<Vec<ShapeFamily>, Error> = args
                    .families
                    .split(',')
                    .filter(|p| !p.trim().is_empty())
                    .map(|p| p.trim().parse())
                    .collect();
                let families = families?;
                let sets = synth_pointsets(
                    &families,
                    args.per_class,
                    args.points,
                    args.noise,
                    &mut Rng::new(args.seed),
                )?;
                let data = PointSetDataset::from_collection(sets, args.train_fraction);
                save_pointsets(&data, &args.out)?;
                println!(
                    "wrote {} instances ({} classes) to {}",
                    data.instances.len(),
                    families.len(),
                    args.out.display()
                );
                Ok(())
            }
            _ => {
                let spec = match args.preset.as_str() {
                    "citeseer-analog" => CitationSynthSpec::citeseer_analog(args.seed),
                    _ => CitationSynthSpec::cora_analog(args.seed),
                };
                let bundle = synth_citation(&spec)?;
                save_citation(&bundle, &args.out)?;
                println!(
                    "wrote {} ({} nodes, {} features, {} classes, {} edges) to {}",
                    spec.name,
                    bundle.n(),
                    bundle.k(),
                    bundle.num_classes(),
                    bundle.edges.len(),
                    args.out.display()
                );
                Ok(())
            }
        },
        Command::Convert(args) => {
            if args.dataset.is_none() && args.pointsets.is_none() {
                return Err(Error::Config(
                    "convert needs --dataset or --pointsets".into(),
                ));
            }
            if let Some(dir) = &args.dataset {
                let (bundle, stats) = load_citation(dir)?;
                println!(
                    "valid citation dataset {}: {} nodes, {} features, {} classes, {} edges \
                     (dropped {} self-loops, {} duplicates), splits {}/{}/{}",
                    bundle.name,
                    bundle.n(),
                    bundle.k(),
                    bundle.num_classes(),
                    bundle.edges.len(),
                    stats.self_loops_dropped,
                    stats.duplicate_edges_dropped,
                    bundle.masks.train.iter().filter(|&&x| x).count(),
                    bundle.masks.val.iter().filter(|&&x| x).count(),
                    bundle.masks.test.iter().filter(|&&x| x).count(),
                );
            }
            if let Some(dir) = &args.pointsets {
                let data = load_pointsets(dir)?;
                println!(
                    "valid point-set dataset: {} instances, {} classes, {} train / {} test",
                    data.instances.len(),
                    data.num_classes(),
                    data.train.iter().filter(|&&x| x).count(),
                    data.test.iter().filter(|&&x| x).count(),
                );
            }
            Ok(())
        }
    }
}

fn parse_range(s: &str) -> Result<(usize, usize), Error> {
    let mut parts = s.split(':');
    let lo = parts
        .next()
        .unwrap_or_default()
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("bad range {s:?}: {e}")))?;
    let hi = parts
        .next()
        .unwrap_or_default()
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("bad range {s:?}: {e}")))?;
    Ok((lo, hi))
}
