//! Config-driven training: the full loop with the step learning-rate
//! schedule, best-validation model selection, deterministic multi-seed
//! runs, sweep grids, and checkpoint assembly.

use crate::checkpoint::Checkpoint;
use crate::data::{
    drop_points, load_citation, load_pointsets, perturb, subsample_nodes, DatasetBundle,
    PerturbationSpec, PointSetDataset,
};
use crate::error::{Error, Result};
use crate::layer::{GlrSignalSource, LayerMode, RInit};
use crate::linalg::{DenseMatrix, Rng, Scalar};
use crate::lossopt::{cross_entropy_reduced, masked_accuracy, AdamConfig, AdamState, Reduction};
use crate::model::{
    GraphClassifierNet, GraphFrom, GraphNetConfig, NodeClassifierNet, NodeNetConfig,
};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Node,
    Graph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    BestVal,
    FinalEpoch,
}

/// Every hyperparameter of a run. The citation and point-cloud profiles
/// carry the experimental defaults; the CLI mirrors each field as a flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub dataset: Option<PathBuf>,
    pub mode: LayerMode,
    pub hidden: Vec<usize>,
    /// Fully connected head widths (graph task only).
    pub head_hidden: Vec<usize>,
    pub metric_rank: usize,
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub decay_factor: f64,
    pub decay_period: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout_p: f64,
    pub leaky_slope: f64,
    pub seeds: Vec<u64>,
    pub perturb: PerturbationSpec,
    pub r_init: RInit,
    pub glr_signal: GlrSignalSource,
    pub precision: Precision,
    pub dropout_all_layers: bool,
    pub graph_from: GraphFrom,
    pub ce_reduction: Reduction,
    pub weight_decay_on_r: bool,
    pub selection: Selection,
    /// Early stopping patience in epochs (None disables it).
    pub patience: Option<usize>,
    /// Subsample the dataset to this many nodes before training.
    pub node_budget: Option<usize>,
    /// Evaluate accuracies every this many epochs (the last epoch is
    /// always evaluated). 1 = every epoch.
    pub eval_every: usize,
    /// Print a progress line every this many epochs (0 = silent).
    pub log_every: usize,
}

impl TrainConfig {
    /// Citation-network profile: 2 layers of 16 hidden units, S=16,
    /// dropout 0.5 on both layers' inputs, leaky slope 0.2, Adam at
    /// lr 0.1 with weight decay 5e-4, decayed by 0.5 every 100 epochs,
    /// 500 epochs, λ=1e-4, 10 seeds.
    pub fn citation_defaults() -> Self {
        TrainConfig {
            task: Task::Node,
            dataset: None,
            mode: LayerMode::Jlgcn,
            hidden: vec![16],
            head_hidden: vec![],
            metric_rank: 16,
            lambda: 1e-4,
            lr: 0.1,
            weight_decay: 5e-4,
            decay_factor: 0.5,
            decay_period: 100,
            epochs: 500,
            batch_size: 1,
            dropout_p: 0.5,
            leaky_slope: 0.2,
            seeds: (0..10).collect(),
            perturb: PerturbationSpec::default(),
            r_init: RInit::Random,
            glr_signal: GlrSignalSource::Input,
            precision: Precision::F64,
            dropout_all_layers: true,
            graph_from: GraphFrom::PreDropout,
            ce_reduction: Reduction::Mean,
            weight_decay_on_r: true,
            selection: Selection::BestVal,
            patience: None,
            node_budget: None,
            eval_every: 1,
            log_every: 0,
        }
    }

    /// Point-cloud profile: 3 concatenation layers {64,128,1024}, head
    /// {512,256}, batch 32, Adam at lr 0.001 with weight decay 1e-4,
    /// decayed by 0.5 every 40 epochs, 400 epochs, λ=0.01.
    pub fn pointcloud_defaults() -> Self {
        TrainConfig {
            task: Task::Graph,
            dataset: None,
            mode: LayerMode::JlgcnConcat,
            hidden: vec![64, 128, 1024],
            head_hidden: vec![512, 256],
            metric_rank: 16,
            lambda: 0.01,
            lr: 0.001,
            weight_decay: 1e-4,
            decay_factor: 0.5,
            decay_period: 40,
            epochs: 400,
            batch_size: 32,
            dropout_p: 0.5,
            leaky_slope: 0.2,
            seeds: vec![0],
            perturb: PerturbationSpec::default(),
            r_init: RInit::Random,
            glr_signal: GlrSignalSource::Input,
            precision: Precision::F64,
            dropout_all_layers: false,
            graph_from: GraphFrom::PreDropout,
            ce_reduction: Reduction::Mean,
            weight_decay_on_r: true,
            selection: Selection::FinalEpoch,
            patience: None,
            node_budget: None,
            eval_every: 1,
            log_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config("dropout_p must be in [0,1)".into()));
        }
        if !(0.0 < self.leaky_slope && self.leaky_slope < 1.0) {
            return Err(Error::Config("leaky_slope must be in (0,1)".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.hidden.is_empty() && self.task == Task::Graph {
            return Err(Error::Config("graph task needs hidden widths".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        self.perturb.validate()
    }

    fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: self.weight_decay,
            decay_factor: self.decay_factor,
            decay_period: self.decay_period,
        }
    }

    fn node_net_config(&self, classes: usize) -> NodeNetConfig {
        NodeNetConfig {
            mode: self.mode,
            hidden: self.hidden.clone(),
            classes,
            metric_rank: self.metric_rank,
            r_init: self.r_init,
            glr_signal: self.glr_signal,
            dropout_p: self.dropout_p,
            leaky_slope: self.leaky_slope,
            dropout_all_layers: self.dropout_all_layers,
            graph_from: self.graph_from,
            static_input: true,
            weight_decay_on_r: self.weight_decay_on_r,
        }
    }

    fn graph_net_config(&self, classes: usize) -> GraphNetConfig {
        GraphNetConfig {
            mode: self.mode,
            hidden: self.hidden.clone(),
            head: self.head_hidden.clone(),
            classes,
            metric_rank: self.metric_rank,
            glr_signal: self.glr_signal,
            dropout_p: self.dropout_p,
            leaky_slope: self.leaky_slope,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
            weight_decay_on_r: self.weight_decay_on_r,
        }
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub final_train_acc: f64,
    pub final_val_acc: Option<f64>,
    pub final_test_acc: f64,
    pub best_val_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
    pub test_acc_at_best_val: Option<f64>,
    /// The accuracy chosen by the configured selection rule.
    pub selected_test_acc: f64,
    pub train_loss_curve: Vec<f64>,
    pub val_acc_curve: Vec<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_selected_test_acc: f64,
    pub std_selected_test_acc: f64,
    pub mean_final_test_acc: f64,
    pub std_final_test_acc: f64,
}

/// Mean and sample standard deviation (n-1 denominator; 0 for n=1).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl Aggregate {
    pub fn from_seeds(per_seed: &[SeedReport]) -> Self {
        let sel: Vec<f64> = per_seed.iter().map(|r| r.selected_test_acc).collect();
        let fin: Vec<f64> = per_seed.iter().map(|r| r.final_test_acc).collect();
        let (ms, ss) = mean_std(&sel);
        let (mf, sf) = mean_std(&fin);
        Aggregate {
            mean_selected_test_acc: ms,
            std_selected_test_acc: ss,
            mean_final_test_acc: mf,
            std_final_test_acc: sf,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub dataset_name: String,
    pub per_seed: Vec<SeedReport>,
    pub aggregate: Aggregate,
}

impl RunReport {
    /// The report with timing zeroed, for bit-level metric comparison.
    pub fn metrics_fingerprint(&self) -> String {
        let mut clone = self.clone();
        for s in &mut clone.per_seed {
            s.wall_time_s = 0.0;
        }
        serde_json::to_string(&clone).expect("report serializes")
    }
}

// ---------------------------------------------------------------------------
// Node-task training
// ---------------------------------------------------------------------------

/// The trained tensors of one seed, for checkpointing.
pub struct TrainedSeed {
    pub report: SeedReport,
    pub tensors_f64: Vec<(String, DenseMatrix<f64>)>,
    pub rng_seed: u64,
    pub rng_draws: u64,
}

fn effective_perturb(cfg: &TrainConfig, seed: u64) -> PerturbationSpec {
    PerturbationSpec {
        seed: cfg.perturb.seed.wrapping_add(seed),
        ..cfg.perturb
    }
}

/// Prepare the per-seed view of a citation dataset: perturbation first,
/// then optional node subsampling.
pub fn prepare_bundle(
    cfg: &TrainConfig,
    base: &DatasetBundle,
    seed: u64,
) -> Result<DatasetBundle> {
    let spec = effective_perturb(cfg, seed);
    let mut work = perturb(base, &spec)?;
    if let Some(budget) = cfg.node_budget {
        let mut rng = Rng::new(spec.seed ^ 0x5153_55B5_u64);
        work = subsample_nodes(&work, budget, &mut rng)?;
    }
    Ok(work)
}

fn run_node_seed<S: Scalar>(
    cfg: &TrainConfig,
    base: &DatasetBundle,
    seed: u64,
) -> Result<TrainedSeed> {
    let t0 = Instant::now();
    let work = prepare_bundle(cfg, base, seed)?;
    let features: DenseMatrix<S> = work.features.cast();
    let graph0: DenseMatrix<S> = work.adjacency();
    let classes = work.num_classes().max(2);
    let need_glr = cfg.lambda != 0.0;
    let lambda = S::from_f64(cfg.lambda);

    let mut rng = Rng::new(seed);
    let mut net = NodeClassifierNet::<S>::new(work.k(), cfg.node_net_config(classes), &mut rng)?;
    let mut adam = AdamState::<S>::new(cfg.adam_config(), &net.param_specs());

    let mut train_loss_curve = Vec::with_capacity(cfg.epochs);
    let mut val_acc_curve = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::NEG_INFINITY;
    let mut best_val_epoch = 0usize;
    let mut test_at_best = 0.0;
    let mut since_best = 0usize;

    let timing = std::env::var("JLGCN_TIMING").is_ok();
    let mut final_accs = evaluate_node(&mut net, &features, &graph0, &work, &mut rng)?;
    for epoch in 0..cfg.epochs {
        let lr = cfg.adam_config().lr_at_epoch(epoch);
        let t0 = Instant::now();
        let (logits, glr_total) = net.forward(&features, &graph0, true, need_glr, &mut rng)?;
        if timing { eprintln!("fwd: {:?}", t0.elapsed()); }
        let (ce, d_logits) =
            cross_entropy_reduced(&logits, &work.labels, &work.masks.train, cfg.ce_reduction)?;
        let loss = (ce + lambda * glr_total).to_f64();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        let t0 = Instant::now();
        let grads = net.backward(&d_logits, lambda)?;
        if timing { eprintln!("bwd: {:?}", t0.elapsed()); }
        {
            let grad_refs = net.grad_refs(&grads);
            // grad_refs borrows grads, params_mut borrows net; the
            // optimizer updates in the fixed spec order.
            let mut params = net.params_mut();
            adam.step(&mut params, &grad_refs, lr)?;
        }
        train_loss_curve.push(loss);

        if (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs {
            let t0 = Instant::now();
            final_accs = evaluate_node(&mut net, &features, &graph0, &work, &mut rng)?;
            if timing { eprintln!("eval: {:?}", t0.elapsed()); }
            val_acc_curve.push(final_accs.1);
            if final_accs.1 > best_val {
                best_val = final_accs.1;
                best_val_epoch = epoch;
                test_at_best = final_accs.2;
                since_best = 0;
            } else {
                since_best += 1;
            }
        }
        if cfg.log_every > 0 && (epoch % cfg.log_every == 0 || epoch + 1 == cfg.epochs) {
            eprintln!(
                "[seed {seed}] epoch {epoch}: loss {loss:.4} train {:.4} val {:.4} test {:.4}",
                final_accs.0, final_accs.1, final_accs.2
            );
        }
        if let Some(p) = cfg.patience {
            if since_best > p {
                break;
            }
        }
    }
    if cfg.epochs == 0 {
        best_val = final_accs.1;
        test_at_best = final_accs.2;
    }

    let selected_test_acc = match cfg.selection {
        Selection::BestVal => test_at_best,
        Selection::FinalEpoch => final_accs.2,
    };
    let report = SeedReport {
        seed,
        final_train_acc: final_accs.0,
        final_val_acc: Some(final_accs.1),
        final_test_acc: final_accs.2,
        best_val_epoch: Some(best_val_epoch),
        best_val_acc: Some(best_val),
        test_acc_at_best_val: Some(test_at_best),
        selected_test_acc,
        train_loss_curve,
        val_acc_curve,
        wall_time_s: t0.elapsed().as_secs_f64(),
    };
    Ok(TrainedSeed {
        report,
        tensors_f64: net
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.cast::<f64>()))
            .collect(),
        rng_seed: rng.seed(),
        rng_draws: rng.draws(),
    })
}

fn evaluate_node<S: Scalar>(
    net: &mut NodeClassifierNet<S>,
    features: &DenseMatrix<S>,
    graph0: &DenseMatrix<S>,
    work: &DatasetBundle,
    rng: &mut Rng,
) -> Result<(f64, f64, f64)> {
    let (logits, _) = net.forward(features, graph0, false, false, rng)?;
    Ok((
        masked_accuracy(&logits, &work.labels, &work.masks.train),
        masked_accuracy(&logits, &work.labels, &work.masks.val),
        masked_accuracy(&logits, &work.labels, &work.masks.test),
    ))
}

// ---------------------------------------------------------------------------
// Graph-task training
// ---------------------------------------------------------------------------

fn run_graph_seed<S: Scalar>(
    cfg: &TrainConfig,
    data: &PointSetDataset,
    seed: u64,
) -> Result<TrainedSeed> {
    let t0 = Instant::now();
    let classes = data.num_classes().max(2);
    let need_glr = cfg.lambda != 0.0;
    let lambda = S::from_f64(cfg.lambda);
    let spec = effective_perturb(cfg, seed);

    let train_idx: Vec<usize> = (0..data.instances.len())
        .filter(|&i| data.train[i])
        .collect();
    let test_idx: Vec<usize> = (0..data.instances.len())
        .filter(|&i| data.test[i])
        .collect();
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Config("point-set split has an empty side".into()));
    }
    let all: Vec<DenseMatrix<S>> = data
        .instances
        .iter()
        .map(|p| p.points.cast::<S>())
        .collect();
    let labels: Vec<usize> = data.instances.iter().map(|p| p.label).collect();

    // Test-time point dropout per the robustness protocol.
    let eval_instances: Vec<DenseMatrix<S>> = if spec.point_missing > 0.0 {
        data.instances
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut r = Rng::new(spec.seed.wrapping_add(i as u64));
                drop_points(&p.points, spec.point_missing, &mut r).cast::<S>()
            })
            .collect()
    } else {
        all.clone()
    };

    let mut rng = Rng::new(seed);
    let mut net = GraphClassifierNet::<S>::new(3, cfg.graph_net_config(classes), &mut rng)?;
    let mut adam = AdamState::<S>::new(cfg.adam_config(), &net.param_specs());

    let mut train_loss_curve = Vec::with_capacity(cfg.epochs);
    let mut order = train_idx.clone();
    let mut final_train_acc;
    let mut final_test_acc =
        evaluate_graph(&mut net, &eval_instances, &labels, &test_idx, cfg.batch_size)?;
    for epoch in 0..cfg.epochs {
        let lr = cfg.adam_config().lr_at_epoch(epoch);
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0_f64;
        let mut batches = 0.0_f64;
        for chunk in order.chunks(cfg.batch_size) {
            let insts: Vec<DenseMatrix<S>> = chunk.iter().map(|&i| all[i].clone()).collect();
            let blabels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mask = vec![true; blabels.len()];
            let (logits, glr_total) = net.forward(&insts, true, need_glr, &mut rng)?;
            let (ce, d_logits) =
                cross_entropy_reduced(&logits, &blabels, &mask, cfg.ce_reduction)?;
            let loss = (ce + lambda * glr_total).to_f64();
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            epoch_loss += loss;
            batches += 1.0;
            let grads = net.backward(&d_logits, lambda)?;
            {
                let grad_refs = net.grad_refs(&grads);
                let mut params = net.params_mut();
                adam.step(&mut params, &grad_refs, lr)?;
            }
        }
        train_loss_curve.push(epoch_loss / batches.max(1.0));

        if (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs {
            final_test_acc =
                evaluate_graph(&mut net, &eval_instances, &labels, &test_idx, cfg.batch_size)?;
        }
        if cfg.log_every > 0 && (epoch % cfg.log_every == 0 || epoch + 1 == cfg.epochs) {
            final_train_acc =
                evaluate_graph(&mut net, &eval_instances, &labels, &train_idx, cfg.batch_size)?;
            eprintln!(
                "[seed {seed}] epoch {epoch}: loss {:.4} train {final_train_acc:.4} test {final_test_acc:.4}",
                epoch_loss / batches.max(1.0)
            );
        }
    }
    final_train_acc = evaluate_graph(&mut net, &eval_instances, &labels, &train_idx, cfg.batch_size)?;

    let report = SeedReport {
        seed,
        final_train_acc,
        final_val_acc: None,
        final_test_acc,
        best_val_epoch: None,
        best_val_acc: None,
        test_acc_at_best_val: None,
        selected_test_acc: final_test_acc,
        train_loss_curve,
        val_acc_curve: Vec::new(),
        wall_time_s: t0.elapsed().as_secs_f64(),
    };
    Ok(TrainedSeed {
        report,
        tensors_f64: net
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.cast::<f64>()))
            .collect(),
        rng_seed: rng.seed(),
        rng_draws: rng.draws(),
    })
}

fn evaluate_graph<S: Scalar>(
    net: &mut GraphClassifierNet<S>,
    instances: &[DenseMatrix<S>],
    labels: &[usize],
    idx: &[usize],
    batch_size: usize,
) -> Result<f64> {
    let mut hit = 0usize;
    let mut rng = Rng::new(0);
    for chunk in idx.chunks(batch_size.max(1)) {
        let insts: Vec<DenseMatrix<S>> = chunk.iter().map(|&i| instances[i].clone()).collect();
        let (logits, _) = net.forward(&insts, false, false, &mut rng)?;
        let pred = logits.argmax_rows();
        for (row, &i) in chunk.iter().enumerate() {
            if pred[row] == labels[i] {
                hit += 1;
            }
        }
    }
    Ok(hit as f64 / idx.len() as f64)
}

// ---------------------------------------------------------------------------
// Multi-seed drivers
// ---------------------------------------------------------------------------

pub struct TrainOutcome {
    pub report: RunReport,
    /// Trained tensors of the best seed (by selected accuracy), as f64.
    pub best_tensors: Vec<(String, DenseMatrix<f64>)>,
    pub best_seed: u64,
    pub rng_draws: u64,
}

impl TrainOutcome {
    pub fn to_checkpoint(&self) -> Checkpoint<f64> {
        Checkpoint {
            config_json: serde_json::to_string(&self.report.config).expect("config serializes"),
            rng_seed: self.best_seed,
            rng_draws: self.rng_draws,
            tensors: self.best_tensors.clone(),
        }
    }
}

/// Train on an in-memory citation bundle across all configured seeds.
pub fn train_node_bundle(cfg: &TrainConfig, bundle: &DatasetBundle) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        let trained = match cfg.precision {
            Precision::F64 => run_node_seed::<f64>(cfg, bundle, seed)?,
            Precision::F32 => run_node_seed::<f32>(cfg, bundle, seed)?,
        };
        seeds.push(trained);
    }
    assemble(cfg, &bundle.name, seeds)
}

/// Train on an in-memory point-set collection across all configured seeds.
pub fn train_graph_data(cfg: &TrainConfig, data: &PointSetDataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        let trained = match cfg.precision {
            Precision::F64 => run_graph_seed::<f64>(cfg, data, seed)?,
            Precision::F32 => run_graph_seed::<f32>(cfg, data, seed)?,
        };
        seeds.push(trained);
    }
    assemble(cfg, "pointsets", seeds)
}

fn assemble(cfg: &TrainConfig, name: &str, seeds: Vec<TrainedSeed>) -> Result<TrainOutcome> {
    let best = seeds
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| {
            a.report
                .selected_test_acc
                .partial_cmp(&b.report.selected_test_acc)
                .unwrap()
        })
        .map(|(i, _)| i)
        .unwrap();
    let best_seed = seeds[best].rng_seed;
    let rng_draws = seeds[best].rng_draws;
    let best_tensors = seeds[best].tensors_f64.clone();
    let per_seed: Vec<SeedReport> = seeds.into_iter().map(|s| s.report).collect();
    let aggregate = Aggregate::from_seeds(&per_seed);
    Ok(TrainOutcome {
        report: RunReport {
            config: cfg.clone(),
            dataset_name: name.to_string(),
            per_seed,
            aggregate,
        },
        best_tensors,
        best_seed,
        rng_draws,
    })
}

/// Load the configured dataset and train (the `train` CLI verb).
pub fn run_with_config(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dir = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset directory configured".into()))?;
    match cfg.task {
        Task::Node => {
            let (bundle, _) = load_citation(dir)?;
            train_node_bundle(cfg, &bundle)
        }
        Task::Graph => {
            let data = load_pointsets(dir)?;
            train_graph_data(cfg, &data)
        }
    }
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepSpec {
    pub lambda_grid: Vec<f64>,
    pub edge_missing_grid: Vec<f64>,
    pub label_missing_grid: Vec<f64>,
    pub point_missing_grid: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub edge_missing: f64,
    pub label_missing: f64,
    pub point_missing: f64,
    /// Seed number, or "mean"/"std" for the aggregate rows of a cell.
    pub seed: String,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub selected_test_acc: f64,
    pub wall_time_s: f64,
}

fn grid_or_default(grid: &[f64], default: f64) -> Vec<f64> {
    if grid.is_empty() {
        vec![default]
    } else {
        grid.to_vec()
    }
}

/// Cross-product sweep; one row per cell per seed plus mean/std rows.
pub fn ablate<FR>(cfg: &TrainConfig, sweep: &SweepSpec, mut run: FR) -> Result<Vec<SweepRow>>
where
    FR: FnMut(&TrainConfig) -> Result<RunReport>,
{
    let lambdas = grid_or_default(&sweep.lambda_grid, cfg.lambda);
    let edges = grid_or_default(&sweep.edge_missing_grid, cfg.perturb.edge_missing);
    let labels = grid_or_default(&sweep.label_missing_grid, cfg.perturb.label_missing);
    let points = grid_or_default(&sweep.point_missing_grid, cfg.perturb.point_missing);

    let mut rows = Vec::new();
    for &lam in &lambdas {
        for &em in &edges {
            for &lm in &labels {
                for &pm in &points {
                    let mut cell_cfg = cfg.clone();
                    cell_cfg.lambda = lam;
                    cell_cfg.perturb.edge_missing = em;
                    cell_cfg.perturb.label_missing = lm;
                    cell_cfg.perturb.point_missing = pm;
                    let report = run(&cell_cfg)?;
                    let mut sel = Vec::new();
                    for s in &report.per_seed {
                        rows.push(SweepRow {
                            lambda: lam,
                            edge_missing: em,
                            label_missing: lm,
                            point_missing: pm,
                            seed: s.seed.to_string(),
                            train_acc: s.final_train_acc,
                            val_acc: s.final_val_acc.unwrap_or(f64::NAN),
                            test_acc: s.final_test_acc,
                            selected_test_acc: s.selected_test_acc,
                            wall_time_s: s.wall_time_s,
                        });
                        sel.push((
                            s.final_train_acc,
                            s.final_val_acc.unwrap_or(f64::NAN),
                            s.final_test_acc,
                            s.selected_test_acc,
                            s.wall_time_s,
                        ));
                    }
                    for (tag, f) in [("mean", 0usize), ("std", 1usize)] {
                        let stat = |xs: Vec<f64>| {
                            let (m, s) = mean_std(&xs);
                            if f == 0 {
                                m
                            } else {
                                s
                            }
                        };
                        rows.push(SweepRow {
                            lambda: lam,
                            edge_missing: em,
                            label_missing: lm,
                            point_missing: pm,
                            seed: tag.to_string(),
                            train_acc: stat(sel.iter().map(|x| x.0).collect()),
                            val_acc: stat(sel.iter().map(|x| x.1).collect()),
                            test_acc: stat(sel.iter().map(|x| x.2).collect()),
                            selected_test_acc: stat(sel.iter().map(|x| x.3).collect()),
                            wall_time_s: stat(sel.iter().map(|x| x.4).collect()),
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Stable CSV schema:
/// lambda,edge_missing,label_missing,point_missing,seed,train_acc,val_acc,test_acc,selected_test_acc,wall_time_s
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "lambda,edge_missing,label_missing,point_missing,seed,train_acc,val_acc,test_acc,selected_test_acc,wall_time_s\n",
    );
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.lambda,
            r.edge_missing,
            r.label_missing,
            r.point_missing,
            r.seed,
            fmt_acc(r.train_acc),
            fmt_acc(r.val_acc),
            fmt_acc(r.test_acc),
            fmt_acc(r.selected_test_acc),
            r.wall_time_s
        )
        .unwrap();
    }
    out
}

fn fmt_acc(v: f64) -> String {
    if v.is_nan() {
        "".to_string()
    } else {
        format!("{v}")
    }
}

// ---------------------------------------------------------------------------
// Checkpoint rebuild + evaluation + graph export
// ---------------------------------------------------------------------------

pub fn rebuild_node_net<S: Scalar>(
    cfg: &TrainConfig,
    input_dim: usize,
    classes: usize,
    tensors: &[(String, DenseMatrix<f64>)],
) -> Result<NodeClassifierNet<S>> {
    let mut rng = Rng::new(0);
    let mut net = NodeClassifierNet::<S>::new(input_dim, cfg.node_net_config(classes), &mut rng)?;
    let cast: Vec<(String, DenseMatrix<S>)> = tensors
        .iter()
        .map(|(n, t)| (n.clone(), t.cast::<S>()))
        .collect();
    net.load_tensors(&cast)?;
    Ok(net)
}

pub fn rebuild_graph_net<S: Scalar>(
    cfg: &TrainConfig,
    classes: usize,
    tensors: &[(String, DenseMatrix<f64>)],
) -> Result<GraphClassifierNet<S>> {
    let mut rng = Rng::new(0);
    let mut net = GraphClassifierNet::<S>::new(3, cfg.graph_net_config(classes), &mut rng)?;
    let cast: Vec<(String, DenseMatrix<S>)> = tensors
        .iter()
        .map(|(n, t)| (n.clone(), t.cast::<S>()))
        .collect();
    net.load_tensors(&cast)?;
    Ok(net)
}

/// Rebuild a trained graph classifier and score it on the test split,
/// optionally dropping a fraction of each test instance's points first
/// (the low-density robustness protocol).
pub fn evaluate_pointsets(
    cfg: &TrainConfig,
    tensors: &[(String, DenseMatrix<f64>)],
    data: &PointSetDataset,
    point_missing: f64,
    drop_seed: u64,
) -> Result<f64> {
    let classes = data.num_classes().max(2);
    let mut net = rebuild_graph_net::<f64>(cfg, classes, tensors)?;
    let labels: Vec<usize> = data.instances.iter().map(|p| p.label).collect();
    let test_idx: Vec<usize> = (0..data.instances.len())
        .filter(|&i| data.test[i])
        .collect();
    let instances: Vec<DenseMatrix<f64>> = data
        .instances
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if point_missing > 0.0 {
                let mut r = Rng::new(drop_seed.wrapping_add(i as u64));
                drop_points(&p.points, point_missing, &mut r)
            } else {
                p.points.clone()
            }
        })
        .collect();
    evaluate_graph(&mut net, &instances, &labels, &test_idx, cfg.batch_size)
}

/// Run an eval forward on a rebuilt node net and return the requested
/// layer's learned adjacency restricted to the node range.
pub fn extract_learned_adjacency(
    cfg: &TrainConfig,
    bundle: &DatasetBundle,
    tensors: &[(String, DenseMatrix<f64>)],
    layer_index: isize,
    range: (usize, usize),
) -> Result<DenseMatrix<f64>> {
    let (lo, hi) = range;
    if lo >= hi || hi > bundle.n() {
        return Err(Error::Config(format!(
            "node range [{lo},{hi}) is invalid for {} nodes",
            bundle.n()
        )));
    }
    let full: DenseMatrix<f64> = if layer_index < 0 {
        bundle.adjacency()
    } else {
        let l = layer_index as usize;
        let classes = bundle.num_classes().max(2);
        let mut net = rebuild_node_net::<f64>(cfg, bundle.k(), classes, tensors)?;
        if l >= net.layers.len() {
            return Err(Error::Config(format!(
                "layer index {l} out of range ({} layers)",
                net.layers.len()
            )));
        }
        let features = bundle.features.clone();
        let graph0: DenseMatrix<f64> = bundle.adjacency();
        let mut rng = Rng::new(0);
        net.forward(&features, &graph0, false, false, &mut rng)?;
        net.layers[l]
            .learned_adjacency()
            .ok_or_else(|| {
                Error::Config("layer has no learned adjacency (plain mode)".into())
            })?
            .clone()
    };
    let mut out = DenseMatrix::zeros(hi - lo, hi - lo);
    for i in lo..hi {
        for j in lo..hi {
            *out.at_mut(i - lo, j - lo) = full.at(i, j);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_citation, synth_pointsets, CitationSynthSpec, ShapeFamily};

    fn tiny_citation(seed: u64) -> DatasetBundle {
        synth_citation(&CitationSynthSpec {
            nodes: 60,
            features: 24,
            classes: 3,
            edges: 90,
            train_per_class: 4,
            val: 15,
            test: 20,
            words_per_doc: 6,
            topic_words: 6,
            topic_bias: 0.8,
            confusion: 0.0,
            homophily: 0.85,
            isolated: 0.0,
            seed,
            name: "tiny".into(),
        })
        .unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        let mut cfg = TrainConfig::citation_defaults();
        cfg.hidden = vec![8];
        cfg.metric_rank = 4;
        cfg.epochs = 30;
        cfg.seeds = vec![0, 1];
        cfg.log_every = 0;
        cfg
    }

    #[test]
    fn node_training_learns_the_tiny_fixture() {
        let bundle = tiny_citation(5);
        let out = train_node_bundle(&tiny_cfg(), &bundle).unwrap();
        assert_eq!(out.report.per_seed.len(), 2);
        assert!(
            out.report.aggregate.mean_selected_test_acc > 0.5,
            "accuracy {}",
            out.report.aggregate.mean_selected_test_acc
        );
    }

    #[test]
    fn training_is_bit_deterministic_per_seed() {
        let bundle = tiny_citation(6);
        let mut cfg = tiny_cfg();
        cfg.epochs = 10;
        cfg.seeds = vec![3];
        let a = train_node_bundle(&cfg, &bundle).unwrap();
        let b = train_node_bundle(&cfg, &bundle).unwrap();
        assert_eq!(a.report.metrics_fingerprint(), b.report.metrics_fingerprint());
        for ((n1, t1), (n2, t2)) in a.best_tensors.iter().zip(&b.best_tensors) {
            assert_eq!(n1, n2);
            assert_eq!(t1, t2);
        }
    }

    #[test]
    fn zero_epochs_report_chance_accuracy_and_checkpoint() {
        let bundle = tiny_citation(7);
        let mut cfg = tiny_cfg();
        cfg.epochs = 0;
        cfg.seeds = vec![0];
        let out = train_node_bundle(&cfg, &bundle).unwrap();
        let acc = out.report.per_seed[0].final_test_acc;
        // chance level for 3 classes, with generous slack for a tiny test set
        assert!(acc < 0.65, "untrained accuracy suspiciously high: {acc}");
        assert!(!out.best_tensors.is_empty());
    }

    #[test]
    fn aggregate_is_recomputable_from_seed_entries() {
        let bundle = tiny_citation(8);
        let out = train_node_bundle(&tiny_cfg(), &bundle).unwrap();
        let sel: Vec<f64> = out
            .report
            .per_seed
            .iter()
            .map(|s| s.selected_test_acc)
            .collect();
        let (m, s) = mean_std(&sel);
        assert!((m - out.report.aggregate.mean_selected_test_acc).abs() < 1e-12);
        assert!((s - out.report.aggregate.std_selected_test_acc).abs() < 1e-12);
    }

    #[test]
    fn f32_precision_runs_end_to_end() {
        let bundle = tiny_citation(9);
        let mut cfg = tiny_cfg();
        cfg.precision = Precision::F32;
        cfg.epochs = 5;
        cfg.seeds = vec![0];
        let out = train_node_bundle(&cfg, &bundle).unwrap();
        assert!(out.report.per_seed[0].final_test_acc.is_finite());
    }

    #[test]
    fn graph_training_learns_tiny_pointsets() {
        let fams = [ShapeFamily::SphereShell, ShapeFamily::TwoCluster];
        let sets = synth_pointsets(&fams, 12, 24, 0.02, &mut Rng::new(3)).unwrap();
        let data = PointSetDataset::from_collection(sets, 0.75);
        let mut cfg = TrainConfig::pointcloud_defaults();
        cfg.hidden = vec![8, 16];
        cfg.head_hidden = vec![16];
        cfg.metric_rank = 3;
        cfg.epochs = 40;
        cfg.batch_size = 6;
        cfg.seeds = vec![0];
        cfg.lambda = 0.001;
        let out = train_graph_data(&cfg, &data).unwrap();
        assert!(
            out.report.aggregate.mean_final_test_acc >= 0.8,
            "accuracy {}",
            out.report.aggregate.mean_final_test_acc
        );
    }

    #[test]
    fn single_cell_sweep_equals_plain_training() {
        let bundle = tiny_citation(10);
        let mut cfg = tiny_cfg();
        cfg.epochs = 8;
        cfg.seeds = vec![0];
        let direct = train_node_bundle(&cfg, &bundle).unwrap();
        let sweep = SweepSpec::default();
        let rows = ablate(&cfg, &sweep, |c| {
            Ok(train_node_bundle(c, &bundle)?.report)
        })
        .unwrap();
        // one seed row + mean + std
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].seed, "0");
        assert_eq!(
            rows[0].selected_test_acc,
            direct.report.per_seed[0].selected_test_acc
        );
        let csv = sweep_csv(&rows);
        assert!(csv.starts_with("lambda,edge_missing"));
        assert_eq!(csv.lines().count(), 4);
    }
}
