//! Task networks: a node classifier (stacked graph-learning layers with
//! leaky ReLU and dropout) and a graph classifier (concatenation-mode
//! layers with batch normalization, per-feature graph max pooling, and a
//! fully connected head).

use crate::error::{Error, Result};
use crate::layer::{GlrSignalSource, LayerCache, LayerGrads, LayerMode, LayerState, RInit};
use crate::linalg::{DenseMatrix, Rng, Scalar};
use serde::{Deserialize, Serialize};

/// Whether the graph is learned from the features before or after dropout
/// is applied to them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphFrom {
    PreDropout,
    PostDropout,
}

// ---------------------------------------------------------------------------
// Node classification network
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct NodeNetConfig {
    pub mode: LayerMode,
    /// Hidden widths; the full width chain is input -> hidden... -> classes.
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub metric_rank: usize,
    pub r_init: RInit,
    pub glr_signal: GlrSignalSource,
    pub dropout_p: f64,
    pub leaky_slope: f64,
    /// Dropout on every layer's input rather than only the last layer's.
    pub dropout_all_layers: bool,
    pub graph_from: GraphFrom,
    /// Input features are identical across forwards, letting the first
    /// layer compute its pair statistics once.
    pub static_input: bool,
    pub weight_decay_on_r: bool,
}

impl Default for NodeNetConfig {
    fn default() -> Self {
        NodeNetConfig {
            mode: LayerMode::Jlgcn,
            hidden: vec![16],
            classes: 2,
            metric_rank: 16,
            r_init: RInit::Random,
            glr_signal: GlrSignalSource::Input,
            dropout_p: 0.5,
            leaky_slope: 0.2,
            dropout_all_layers: false,
            graph_from: GraphFrom::PreDropout,
            static_input: false,
            weight_decay_on_r: true,
        }
    }
}

/// Per-layer parameter gradients, in layer order.
pub struct NetGrads<S: Scalar> {
    pub d_w: Vec<DenseMatrix<S>>,
    pub d_r: Vec<Option<DenseMatrix<S>>>,
}

/// Gradients on the network inputs (finite-difference harness support).
pub struct InputGrads<S: Scalar> {
    pub d_features: DenseMatrix<S>,
    pub d_graph: DenseMatrix<S>,
}

struct NodeFwd<S: Scalar> {
    masks: Vec<Option<DenseMatrix<S>>>,
    pre_acts: Vec<DenseMatrix<S>>,
}

pub struct NodeClassifierNet<S: Scalar> {
    pub layers: Vec<LayerState<S>>,
    pub cfg: NodeNetConfig,
    fwd: Option<NodeFwd<S>>,
}

impl<S: Scalar> NodeClassifierNet<S> {
    pub fn new(input_dim: usize, cfg: NodeNetConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        let mut widths = vec![input_dim];
        widths.extend_from_slice(&cfg.hidden);
        widths.push(cfg.classes);
        let mut layers = Vec::new();
        for l in 0..widths.len() - 1 {
            let (ind, outd) = (widths[l], widths[l + 1]);
            let layer = match cfg.mode {
                LayerMode::PlainGcn => LayerState::new_plain(ind, outd, rng),
                mode => {
                    let rank = match cfg.r_init {
                        RInit::Identity => ind,
                        RInit::Random => cfg.metric_rank.min(ind),
                    };
                    LayerState::new_jlgcn(mode, ind, outd, rank, cfg.r_init, cfg.glr_signal, rng)?
                }
            };
            layers.push(layer);
        }
        if cfg.static_input && cfg.graph_from == GraphFrom::PreDropout {
            layers[0].set_static_source(true);
        }
        Ok(NodeClassifierNet {
            layers,
            cfg,
            fwd: None,
        })
    }

    pub fn classes(&self) -> usize {
        self.cfg.classes
    }

    /// Forward through all layers: leaky ReLU between layers, none after
    /// the last; dropout per config on layer inputs when training.
    /// Returns (logits, glr_total = Σ_l glr_term_l).
    pub fn forward(
        &mut self,
        features: &DenseMatrix<S>,
        graph0: &DenseMatrix<S>,
        training: bool,
        need_glr: bool,
        rng: &mut Rng,
    ) -> Result<(DenseMatrix<S>, S)> {
        let l_count = self.layers.len();
        let slope = S::from_f64(self.cfg.leaky_slope);
        let mut masks: Vec<Option<DenseMatrix<S>>> = Vec::with_capacity(l_count);
        let mut pre_acts: Vec<DenseMatrix<S>> = Vec::with_capacity(l_count - 1);
        let mut x = features.clone();
        let mut graph = graph0.clone();
        let mut glr_total = S::ZERO;
        let mut logits = None;

        for l in 0..l_count {
            let is_last = l + 1 == l_count;
            let do_drop = training
                && self.cfg.dropout_p > 0.0
                && (self.cfg.dropout_all_layers || is_last);
            let (prop, mask) = if do_drop {
                let (dropped, mask) = x.dropout_split(self.cfg.dropout_p, rng);
                (dropped, Some(mask))
            } else {
                (x.clone(), None)
            };
            masks.push(mask);
            let source = match self.cfg.graph_from {
                GraphFrom::PreDropout => &x,
                GraphFrom::PostDropout => &prop,
            };
            let out = self.layers[l].forward_split(source, &prop, &graph, training, need_glr)?;
            glr_total += out.glr_term;
            graph = out.graph;
            if is_last {
                logits = Some(out.features);
            } else {
                let act = out.features.leaky_relu(slope);
                pre_acts.push(out.features);
                x = act;
            }
        }

        self.fwd = if training {
            Some(NodeFwd { masks, pre_acts })
        } else {
            None
        };
        Ok((logits.expect("at least one layer"), glr_total))
    }

    /// Backward from d(loss)/d(logits); adds glr_weight times each layer's
    /// GLR gradient. Parameter gradients only.
    pub fn backward(&mut self, d_logits: &DenseMatrix<S>, glr_weight: S) -> Result<NetGrads<S>> {
        Ok(self.backward_full(d_logits, glr_weight, false)?.0)
    }

    /// Backward that optionally also returns gradients on the network
    /// inputs (features and the ground-truth graph).
    pub fn backward_full(
        &mut self,
        d_logits: &DenseMatrix<S>,
        glr_weight: S,
        need_input_grads: bool,
    ) -> Result<(NetGrads<S>, Option<InputGrads<S>>)> {
        let fwd = self.fwd.take().ok_or(Error::MissingCache)?;
        let l_count = self.layers.len();
        let slope = S::from_f64(self.cfg.leaky_slope);

        let mut d_w_rev: Vec<DenseMatrix<S>> = Vec::with_capacity(l_count);
        let mut d_r_rev: Vec<Option<DenseMatrix<S>>> = Vec::with_capacity(l_count);
        let mut upstream = d_logits.clone();
        let mut upstream_graph: Option<DenseMatrix<S>> = None;
        let mut input_grads = None;

        for l in (0..l_count).rev() {
            let want_inputs = l > 0 || need_input_grads;
            // The graph chain is consumed by the previous jlgcn layer, or
            // by the caller when it asked for input gradients.
            let want_graph = if l > 0 {
                self.layers[l - 1].mode() != LayerMode::PlainGcn
            } else {
                need_input_grads
            };
            let grads: LayerGrads<S> = self.layers[l].backward(
                &upstream,
                upstream_graph.as_ref(),
                glr_weight,
                want_inputs,
                want_graph,
            )?;
            d_w_rev.push(grads.d_w);
            d_r_rev.push(grads.d_r);

            if want_inputs {
                let d_source = grads.d_source.expect("requested input grads");
                let d_prop = grads.d_prop.expect("requested input grads");
                // Combine through the dropout split.
                let d_x = match (self.cfg.graph_from, &fwd.masks[l]) {
                    (GraphFrom::PreDropout, Some(mask)) => {
                        let mut d = d_prop.hadamard(mask)?;
                        d.add_assign(&d_source)?;
                        d
                    }
                    (GraphFrom::PreDropout, None) => d_source.add(&d_prop)?,
                    (GraphFrom::PostDropout, Some(mask)) => {
                        d_source.add(&d_prop)?.hadamard(mask)?
                    }
                    (GraphFrom::PostDropout, None) => d_source.add(&d_prop)?,
                };
                if l > 0 {
                    upstream =
                        DenseMatrix::leaky_relu_backward(&fwd.pre_acts[l - 1], &d_x, slope)?;
                    upstream_graph = grads.d_graph_in;
                } else {
                    input_grads = Some(InputGrads {
                        d_features: d_x,
                        d_graph: grads
                            .d_graph_in
                            .expect("graph gradient requested for the input layer"),
                    });
                }
            }
        }
        self.fwd = Some(fwd);

        d_w_rev.reverse();
        d_r_rev.reverse();
        Ok((
            NetGrads {
                d_w: d_w_rev,
                d_r: d_r_rev,
            },
            input_grads,
        ))
    }

    /// (rows, cols, weight-decay) for every trainable tensor, in the fixed
    /// optimizer order: layer0.w, layer0.r, layer1.w, layer1.r, ...
    pub fn param_specs(&self) -> Vec<(usize, usize, bool)> {
        let mut specs = Vec::new();
        for layer in &self.layers {
            specs.push((layer.w.rows(), layer.w.cols(), true));
            if let Some(r) = &layer.r {
                specs.push((
                    r.factor().rows(),
                    r.factor().cols(),
                    self.cfg.weight_decay_on_r,
                ));
            }
        }
        specs
    }

    pub fn params_mut(&mut self) -> Vec<&mut DenseMatrix<S>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.w);
            if let Some(r) = &mut layer.r {
                out.push(r.factor_mut());
            }
        }
        out
    }

    pub fn grad_refs<'a>(&self, grads: &'a NetGrads<S>) -> Vec<&'a DenseMatrix<S>> {
        let mut out = Vec::new();
        for l in 0..grads.d_w.len() {
            out.push(&grads.d_w[l]);
            if let Some(dr) = &grads.d_r[l] {
                out.push(dr);
            }
        }
        out
    }

    /// Named tensors for checkpointing, in a stable order.
    pub fn named_tensors(&self) -> Vec<(String, DenseMatrix<S>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.w"), layer.w.clone()));
            if let Some(r) = &layer.r {
                out.push((format!("layer{l}.r"), r.factor().clone()));
            }
        }
        out
    }

    pub fn load_tensors(&mut self, tensors: &[(String, DenseMatrix<S>)]) -> Result<()> {
        for (name, value) in tensors {
            let mut parts = name.splitn(2, '.');
            let layer_tag = parts.next().unwrap_or_default();
            let field = parts.next().unwrap_or_default();
            let idx: usize = layer_tag
                .strip_prefix("layer")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
            if idx >= self.layers.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} refers to a missing layer"
                )));
            }
            match field {
                "w" => {
                    if self.layers[idx].w.shape() != value.shape() {
                        return Err(Error::Checkpoint(format!(
                            "shape mismatch for {name}: {:?} vs {:?}",
                            self.layers[idx].w.shape(),
                            value.shape()
                        )));
                    }
                    self.layers[idx].w = value.clone();
                }
                "r" => {
                    let r = self.layers[idx]
                        .r
                        .as_mut()
                        .ok_or_else(|| Error::Checkpoint(format!("{name}: layer has no metric")))?;
                    if r.factor().shape() != value.shape() {
                        return Err(Error::Checkpoint(format!(
                            "shape mismatch for {name}: {:?} vs {:?}",
                            r.factor().shape(),
                            value.shape()
                        )));
                    }
                    *r.factor_mut() = value.clone();
                }
                _ => return Err(Error::Checkpoint(format!("unknown tensor {name}"))),
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Batch normalization (graph classifier)
// ---------------------------------------------------------------------------

struct BnCache<S: Scalar> {
    x_hat: DenseMatrix<S>,
    inv_std: Vec<S>,
}

pub struct BatchNorm<S: Scalar> {
    pub gamma: DenseMatrix<S>,
    pub beta: DenseMatrix<S>,
    pub running_mean: DenseMatrix<S>,
    pub running_var: DenseMatrix<S>,
    momentum: f64,
    eps: f64,
    cache: Option<BnCache<S>>,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(features: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm {
            gamma: DenseMatrix::filled(1, features, S::ONE),
            beta: DenseMatrix::zeros(1, features),
            running_mean: DenseMatrix::zeros(1, features),
            running_var: DenseMatrix::filled(1, features, S::ONE),
            momentum,
            eps,
            cache: None,
        }
    }

    /// Normalize per feature over all rows. Training mode uses batch
    /// statistics and updates the running ones; eval uses the running.
    pub fn forward(&mut self, x: &DenseMatrix<S>, training: bool) -> Result<DenseMatrix<S>> {
        let (m, c) = x.shape();
        if c != self.gamma.cols() {
            return Err(Error::dimension(
                "batchnorm",
                format!("{c} features vs {}", self.gamma.cols()),
            ));
        }
        if m == 0 {
            return Err(Error::EmptyInput("batchnorm on zero rows".into()));
        }
        let eps = S::from_f64(self.eps);
        let mut out = DenseMatrix::zeros(m, c);
        if training {
            let inv_m = S::from_f64(1.0 / m as f64);
            let mut mean = vec![S::ZERO; c];
            for i in 0..m {
                for (j, &v) in x.row(i).iter().enumerate() {
                    mean[j] += v;
                }
            }
            for v in mean.iter_mut() {
                *v *= inv_m;
            }
            let mut var = vec![S::ZERO; c];
            for i in 0..m {
                for (j, &v) in x.row(i).iter().enumerate() {
                    let d = v - mean[j];
                    var[j] += d * d;
                }
            }
            for v in var.iter_mut() {
                *v *= inv_m;
            }
            let inv_std: Vec<S> = var.iter().map(|&v| S::ONE / (v + eps).sqrt()).collect();
            let mut x_hat = DenseMatrix::zeros(m, c);
            for i in 0..m {
                let xr = x.row(i);
                let hr = x_hat.row_mut(i);
                for j in 0..c {
                    hr[j] = (xr[j] - mean[j]) * inv_std[j];
                }
                let or = out.row_mut(i);
                for j in 0..c {
                    or[j] = self.gamma.at(0, j) * x_hat.at(i, j) + self.beta.at(0, j);
                }
            }
            // Running stats: retain `momentum`, blend in the batch stats
            // (unbiased variance).
            let mom = S::from_f64(self.momentum);
            let one_m = S::ONE - mom;
            let unbias = if m > 1 {
                S::from_f64(m as f64 / (m as f64 - 1.0))
            } else {
                S::ONE
            };
            for j in 0..c {
                let rm = self.running_mean.at(0, j);
                *self.running_mean.at_mut(0, j) = mom * rm + one_m * mean[j];
                let rv = self.running_var.at(0, j);
                *self.running_var.at_mut(0, j) = mom * rv + one_m * var[j] * unbias;
            }
            self.cache = Some(BnCache { x_hat, inv_std });
        } else {
            for i in 0..m {
                let xr = x.row(i);
                let or = out.row_mut(i);
                for j in 0..c {
                    let inv = S::ONE / (self.running_var.at(0, j) + eps).sqrt();
                    or[j] = self.gamma.at(0, j) * (xr[j] - self.running_mean.at(0, j)) * inv
                        + self.beta.at(0, j);
                }
            }
            self.cache = None;
        }
        Ok(out)
    }

    /// Returns (dx, dgamma, dbeta).
    pub fn backward(
        &self,
        dy: &DenseMatrix<S>,
    ) -> Result<(DenseMatrix<S>, DenseMatrix<S>, DenseMatrix<S>)> {
        let cache = self.cache.as_ref().ok_or(Error::MissingCache)?;
        let (m, c) = dy.shape();
        if cache.x_hat.shape() != (m, c) {
            return Err(Error::dimension(
                "batchnorm backward",
                format!("{m}x{c} vs cached {:?}", cache.x_hat.shape()),
            ));
        }
        let mut d_gamma = DenseMatrix::zeros(1, c);
        let mut d_beta = DenseMatrix::zeros(1, c);
        let mut sum_dxhat = vec![S::ZERO; c];
        let mut sum_dxhat_xhat = vec![S::ZERO; c];
        for i in 0..m {
            let dyr = dy.row(i);
            let xr = cache.x_hat.row(i);
            for j in 0..c {
                let dxh = dyr[j] * self.gamma.at(0, j);
                *d_gamma.at_mut(0, j) += dyr[j] * xr[j];
                *d_beta.at_mut(0, j) += dyr[j];
                sum_dxhat[j] += dxh;
                sum_dxhat_xhat[j] += dxh * xr[j];
            }
        }
        let inv_m = S::from_f64(1.0 / m as f64);
        let mut dx = DenseMatrix::zeros(m, c);
        for i in 0..m {
            let dyr = dy.row(i);
            let xr = cache.x_hat.row(i);
            let dxr = dx.row_mut(i);
            for j in 0..c {
                let dxh = dyr[j] * self.gamma.at(0, j);
                dxr[j] = cache.inv_std[j]
                    * (dxh - inv_m * sum_dxhat[j] - xr[j] * inv_m * sum_dxhat_xhat[j]);
            }
        }
        Ok((dx, d_gamma, d_beta))
    }
}

// ---------------------------------------------------------------------------
// Fully connected head
// ---------------------------------------------------------------------------

pub struct Linear<S: Scalar> {
    pub w: DenseMatrix<S>,
    pub b: DenseMatrix<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Linear {
            w: DenseMatrix::glorot_init(in_dim, out_dim, rng),
            b: DenseMatrix::zeros(1, out_dim),
        }
    }

    pub fn forward(&self, x: &DenseMatrix<S>) -> Result<DenseMatrix<S>> {
        let mut y = x.matmul(&self.w)?;
        for i in 0..y.rows() {
            let row = y.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v += self.b.at(0, j);
            }
        }
        Ok(y)
    }

    /// Returns (d_w, d_b, d_x).
    pub fn backward(
        &self,
        x: &DenseMatrix<S>,
        dy: &DenseMatrix<S>,
    ) -> Result<(DenseMatrix<S>, DenseMatrix<S>, DenseMatrix<S>)> {
        let d_w = x.matmul_tn(dy)?;
        let mut d_b = DenseMatrix::zeros(1, dy.cols());
        for i in 0..dy.rows() {
            for (j, &v) in dy.row(i).iter().enumerate() {
                *d_b.at_mut(0, j) += v;
            }
        }
        let d_x = dy.matmul_nt(&self.w)?;
        Ok((d_w, d_b, d_x))
    }
}

// ---------------------------------------------------------------------------
// Graph classification network
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GraphNetConfig {
    pub mode: LayerMode,
    /// Graph-layer widths, e.g. [64, 128, 1024].
    pub hidden: Vec<usize>,
    /// Fully connected head widths before the class layer, e.g. [512, 256].
    pub head: Vec<usize>,
    pub classes: usize,
    pub metric_rank: usize,
    pub glr_signal: GlrSignalSource,
    pub dropout_p: f64,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub weight_decay_on_r: bool,
}

impl Default for GraphNetConfig {
    fn default() -> Self {
        GraphNetConfig {
            mode: LayerMode::JlgcnConcat,
            hidden: vec![64, 128, 1024],
            head: vec![512, 256],
            classes: 40,
            metric_rank: 16,
            glr_signal: GlrSignalSource::Input,
            dropout_p: 0.5,
            leaky_slope: 0.2,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
            weight_decay_on_r: true,
        }
    }
}

struct GraphFwd<S: Scalar> {
    /// Per layer, per instance caches.
    layer_caches: Vec<Vec<LayerCache<S>>>,
    /// Per layer: BN output (pre-activation) over the concatenated rows.
    pre_acts: Vec<DenseMatrix<S>>,
    /// Row counts per instance.
    sizes: Vec<usize>,
    /// Per instance, per feature: row index that won the max pool.
    pool_argmax: Vec<Vec<usize>>,
    /// Head caches: (input, pre-activation) per hidden layer plus the
    /// final input; dropout masks per hidden layer.
    head_inputs: Vec<DenseMatrix<S>>,
    head_preacts: Vec<DenseMatrix<S>>,
    head_masks: Vec<Option<DenseMatrix<S>>>,
    batch: usize,
}

pub struct GraphClassifierNet<S: Scalar> {
    pub layers: Vec<LayerState<S>>,
    pub bns: Vec<BatchNorm<S>>,
    pub head: Vec<Linear<S>>,
    pub cfg: GraphNetConfig,
    fwd: Option<GraphFwd<S>>,
}

pub struct GraphNetGrads<S: Scalar> {
    pub d_w: Vec<DenseMatrix<S>>,
    pub d_r: Vec<Option<DenseMatrix<S>>>,
    pub d_gamma: Vec<DenseMatrix<S>>,
    pub d_beta: Vec<DenseMatrix<S>>,
    pub d_head_w: Vec<DenseMatrix<S>>,
    pub d_head_b: Vec<DenseMatrix<S>>,
}

impl<S: Scalar> GraphClassifierNet<S> {
    pub fn new(input_dim: usize, cfg: GraphNetConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.hidden.is_empty() {
            return Err(Error::Config("graph net needs at least one layer".into()));
        }
        let mut layers = Vec::new();
        let mut bns = Vec::new();
        let mut ind = input_dim;
        for &outd in &cfg.hidden {
            let layer = match cfg.mode {
                LayerMode::PlainGcn => LayerState::new_plain(ind, outd, rng),
                mode => LayerState::new_jlgcn(
                    mode,
                    ind,
                    outd,
                    cfg.metric_rank.min(ind),
                    RInit::Random,
                    cfg.glr_signal,
                    rng,
                )?,
            };
            layers.push(layer);
            bns.push(BatchNorm::new(outd, cfg.bn_momentum, cfg.bn_eps));
            ind = outd;
        }
        let mut head = Vec::new();
        let mut hd = ind;
        for &w in &cfg.head {
            head.push(Linear::new(hd, w, rng));
            hd = w;
        }
        head.push(Linear::new(hd, cfg.classes, rng));
        Ok(GraphClassifierNet {
            layers,
            bns,
            head,
            cfg,
            fwd: None,
        })
    }

    /// Forward a batch of point-set instances (each N_i x K). Each instance
    /// learns its own graph starting from the empty one. Returns
    /// (logits B x C, glr_total averaged over the batch).
    pub fn forward(
        &mut self,
        instances: &[DenseMatrix<S>],
        training: bool,
        need_glr: bool,
        rng: &mut Rng,
    ) -> Result<(DenseMatrix<S>, S)> {
        let b = instances.len();
        if b == 0 {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        for inst in instances {
            if inst.rows() == 0 {
                return Err(Error::EmptyInput("instance with zero points".into()));
            }
        }
        let slope = S::from_f64(self.cfg.leaky_slope);
        let sizes: Vec<usize> = instances.iter().map(|m| m.rows()).collect();
        let mut xs: Vec<DenseMatrix<S>> = instances.to_vec();
        let mut graphs: Vec<DenseMatrix<S>> =
            sizes.iter().map(|&n| DenseMatrix::zeros(n, n)).collect();
        let mut glr_sum = S::ZERO;
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        let mut pre_acts = Vec::with_capacity(self.layers.len());

        for l in 0..self.layers.len() {
            let width = self.layers[l].out_dim();
            let total: usize = sizes.iter().sum();
            let mut concat = DenseMatrix::zeros(total, width);
            let mut caches = Vec::with_capacity(b);
            let mut row0 = 0;
            for i in 0..b {
                let (out, cache) =
                    self.layers[l].forward_detached(&xs[i], &xs[i], &graphs[i], need_glr)?;
                glr_sum += out.glr_term;
                graphs[i] = out.graph;
                for r in 0..sizes[i] {
                    concat.row_mut(row0 + r).copy_from_slice(out.features.row(r));
                }
                row0 += sizes[i];
                caches.push(cache);
            }
            layer_caches.push(caches);
            let bn_out = self.bns[l].forward(&concat, training)?;
            let act = bn_out.leaky_relu(slope);
            pre_acts.push(bn_out);
            // Split back into instances.
            let mut row0 = 0;
            xs = sizes
                .iter()
                .map(|&n| {
                    let mut m = DenseMatrix::zeros(n, width);
                    for r in 0..n {
                        m.row_mut(r).copy_from_slice(act.row(row0 + r));
                    }
                    row0 += n;
                    m
                })
                .collect();
        }

        // Per-feature max pool over each instance's nodes.
        let width = self.layers.last().unwrap().out_dim();
        let mut pooled = DenseMatrix::zeros(b, width);
        let mut pool_argmax = Vec::with_capacity(b);
        for i in 0..b {
            let x = &xs[i];
            let mut arg = vec![0usize; width];
            let prow = pooled.row_mut(i);
            for c in 0..width {
                let mut best = x.at(0, c);
                for r in 1..x.rows() {
                    if x.at(r, c) > best {
                        best = x.at(r, c);
                        arg[c] = r;
                    }
                }
                prow[c] = best;
            }
            pool_argmax.push(arg);
        }

        // Fully connected head with dropout between hidden layers.
        let hidden_head = self.head.len() - 1;
        let mut head_inputs = Vec::with_capacity(self.head.len());
        let mut head_preacts = Vec::with_capacity(hidden_head);
        let mut head_masks = Vec::with_capacity(hidden_head);
        let mut h = pooled;
        for j in 0..hidden_head {
            head_inputs.push(h.clone());
            let z = self.head[j].forward(&h)?;
            let mut a = z.leaky_relu(slope);
            head_preacts.push(z);
            if training && self.cfg.dropout_p > 0.0 {
                let mask =
                    DenseMatrix::dropout_mask(a.rows(), a.cols(), self.cfg.dropout_p, rng);
                a = a.hadamard(&mask)?;
                head_masks.push(Some(mask));
            } else {
                head_masks.push(None);
            }
            h = a;
        }
        head_inputs.push(h.clone());
        let logits = self.head[hidden_head].forward(&h)?;

        self.fwd = if training {
            Some(GraphFwd {
                layer_caches,
                pre_acts,
                sizes,
                pool_argmax,
                head_inputs,
                head_preacts,
                head_masks,
                batch: b,
            })
        } else {
            None
        };
        let glr_total = glr_sum * S::from_f64(1.0 / b as f64);
        Ok((logits, glr_total))
    }

    /// Backward from d(loss)/d(logits); the GLR weight is interpreted
    /// against the batch-averaged GLR returned by forward.
    pub fn backward(&mut self, d_logits: &DenseMatrix<S>, glr_weight: S) -> Result<GraphNetGrads<S>> {
        let fwd = self.fwd.take().ok_or(Error::MissingCache)?;
        let slope = S::from_f64(self.cfg.leaky_slope);
        let b = fwd.batch;
        let per_instance_w = glr_weight * S::from_f64(1.0 / b as f64);

        // Head.
        let hidden_head = self.head.len() - 1;
        let mut d_head_w = vec![DenseMatrix::zeros(0, 0); self.head.len()];
        let mut d_head_b = vec![DenseMatrix::zeros(0, 0); self.head.len()];
        let (dw, db, mut d) =
            self.head[hidden_head].backward(&fwd.head_inputs[hidden_head], d_logits)?;
        d_head_w[hidden_head] = dw;
        d_head_b[hidden_head] = db;
        for j in (0..hidden_head).rev() {
            if let Some(mask) = &fwd.head_masks[j] {
                d = d.hadamard(mask)?;
            }
            d = DenseMatrix::leaky_relu_backward(&fwd.head_preacts[j], &d, slope)?;
            let (dw, db, dx) = self.head[j].backward(&fwd.head_inputs[j], &d)?;
            d_head_w[j] = dw;
            d_head_b[j] = db;
            d = dx;
        }
        let d_pooled = d;

        // Scatter pool gradients back to node rows (concatenated layout).
        let width = self.layers.last().unwrap().out_dim();
        let total: usize = fwd.sizes.iter().sum();
        let mut d_act = DenseMatrix::zeros(total, width);
        let mut row0 = 0;
        for i in 0..b {
            for c in 0..width {
                let r = fwd.pool_argmax[i][c];
                *d_act.at_mut(row0 + r, c) += d_pooled.at(i, c);
            }
            row0 += fwd.sizes[i];
        }

        // Graph layers in reverse, instance by instance.
        let l_count = self.layers.len();
        let mut d_w = vec![DenseMatrix::zeros(0, 0); l_count];
        let mut d_r: Vec<Option<DenseMatrix<S>>> = vec![None; l_count];
        let mut d_gamma = vec![DenseMatrix::zeros(0, 0); l_count];
        let mut d_beta = vec![DenseMatrix::zeros(0, 0); l_count];
        let mut upstream_graphs: Vec<Option<DenseMatrix<S>>> = vec![None; b];

        let mut d_act_concat = d_act;
        for l in (0..l_count).rev() {
            let d_bn_out =
                DenseMatrix::leaky_relu_backward(&fwd.pre_acts[l], &d_act_concat, slope)?;
            let (d_layer_out, dg, dbta) = self.bns[l].backward(&d_bn_out)?;
            d_gamma[l] = dg;
            d_beta[l] = dbta;

            let in_dim = self.layers[l].in_dim();
            let mut next_d_act = DenseMatrix::zeros(
                if l > 0 { fwd.sizes.iter().sum() } else { 0 },
                if l > 0 { in_dim } else { 0 },
            );
            let mut row0 = 0;
            for i in 0..b {
                let n = fwd.sizes[i];
                let mut d_feat = DenseMatrix::zeros(n, d_layer_out.cols());
                for r in 0..n {
                    d_feat.row_mut(r).copy_from_slice(d_layer_out.row(row0 + r));
                }
                let want_graph = l > 0 && self.layers[l - 1].mode() != LayerMode::PlainGcn;
                let grads = self.layers[l].backward_with(
                    &fwd.layer_caches[l][i],
                    &d_feat,
                    upstream_graphs[i].as_ref(),
                    per_instance_w,
                    l > 0,
                    want_graph,
                )?;
                if d_w[l].rows() == 0 {
                    d_w[l] = grads.d_w;
                } else {
                    d_w[l].add_assign(&grads.d_w)?;
                }
                if let Some(dr) = grads.d_r {
                    match &mut d_r[l] {
                        Some(acc) => acc.add_assign(&dr)?,
                        slot => *slot = Some(dr),
                    }
                }
                upstream_graphs[i] = grads.d_graph_in;
                if l > 0 {
                    let d_in = grads
                        .d_source
                        .expect("input grads requested")
                        .add(&grads.d_prop.expect("input grads requested"))?;
                    for r in 0..n {
                        next_d_act.row_mut(row0 + r).copy_from_slice(d_in.row(r));
                    }
                }
                row0 += n;
            }
            d_act_concat = next_d_act;
        }
        self.fwd = Some(fwd);

        Ok(GraphNetGrads {
            d_w,
            d_r,
            d_gamma,
            d_beta,
            d_head_w,
            d_head_b,
        })
    }

    /// Optimizer order: per layer (w, r), per bn (gamma, beta), per head
    /// linear (w, b).
    pub fn param_specs(&self) -> Vec<(usize, usize, bool)> {
        let mut specs = Vec::new();
        for layer in &self.layers {
            specs.push((layer.w.rows(), layer.w.cols(), true));
            if let Some(r) = &layer.r {
                specs.push((
                    r.factor().rows(),
                    r.factor().cols(),
                    self.cfg.weight_decay_on_r,
                ));
            }
        }
        for bn in &self.bns {
            specs.push((1, bn.gamma.cols(), false));
            specs.push((1, bn.beta.cols(), false));
        }
        for lin in &self.head {
            specs.push((lin.w.rows(), lin.w.cols(), true));
            specs.push((1, lin.b.cols(), false));
        }
        specs
    }

    pub fn params_mut(&mut self) -> Vec<&mut DenseMatrix<S>> {
        let mut out: Vec<&mut DenseMatrix<S>> = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.w);
            if let Some(r) = &mut layer.r {
                out.push(r.factor_mut());
            }
        }
        for bn in &mut self.bns {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        for lin in &mut self.head {
            out.push(&mut lin.w);
            out.push(&mut lin.b);
        }
        out
    }

    pub fn grad_refs<'a>(&self, grads: &'a GraphNetGrads<S>) -> Vec<&'a DenseMatrix<S>> {
        let mut out: Vec<&DenseMatrix<S>> = Vec::new();
        for l in 0..grads.d_w.len() {
            out.push(&grads.d_w[l]);
            if let Some(dr) = &grads.d_r[l] {
                out.push(dr);
            }
        }
        for l in 0..grads.d_gamma.len() {
            out.push(&grads.d_gamma[l]);
            out.push(&grads.d_beta[l]);
        }
        for j in 0..grads.d_head_w.len() {
            out.push(&grads.d_head_w[j]);
            out.push(&grads.d_head_b[j]);
        }
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, DenseMatrix<S>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.w"), layer.w.clone()));
            if let Some(r) = &layer.r {
                out.push((format!("layer{l}.r"), r.factor().clone()));
            }
        }
        for (l, bn) in self.bns.iter().enumerate() {
            out.push((format!("bn{l}.gamma"), bn.gamma.clone()));
            out.push((format!("bn{l}.beta"), bn.beta.clone()));
            out.push((format!("bn{l}.running_mean"), bn.running_mean.clone()));
            out.push((format!("bn{l}.running_var"), bn.running_var.clone()));
        }
        for (j, lin) in self.head.iter().enumerate() {
            out.push((format!("head{j}.w"), lin.w.clone()));
            out.push((format!("head{j}.b"), lin.b.clone()));
        }
        out
    }

    pub fn load_tensors(&mut self, tensors: &[(String, DenseMatrix<S>)]) -> Result<()> {
        for (name, value) in tensors {
            let slot: Option<&mut DenseMatrix<S>> = if let Some(rest) = name.strip_prefix("layer") {
                let (idx, field) = split_idx_field(rest)?;
                let layer = self
                    .layers
                    .get_mut(idx)
                    .ok_or_else(|| Error::Checkpoint(format!("missing layer for {name}")))?;
                match field {
                    "w" => Some(&mut layer.w),
                    "r" => layer.r.as_mut().map(|r| r.factor_mut()),
                    _ => None,
                }
            } else if let Some(rest) = name.strip_prefix("bn") {
                let (idx, field) = split_idx_field(rest)?;
                let bn = self
                    .bns
                    .get_mut(idx)
                    .ok_or_else(|| Error::Checkpoint(format!("missing bn for {name}")))?;
                match field {
                    "gamma" => Some(&mut bn.gamma),
                    "beta" => Some(&mut bn.beta),
                    "running_mean" => Some(&mut bn.running_mean),
                    "running_var" => Some(&mut bn.running_var),
                    _ => None,
                }
            } else if let Some(rest) = name.strip_prefix("head") {
                let (idx, field) = split_idx_field(rest)?;
                let lin = self
                    .head
                    .get_mut(idx)
                    .ok_or_else(|| Error::Checkpoint(format!("missing head for {name}")))?;
                match field {
                    "w" => Some(&mut lin.w),
                    "b" => Some(&mut lin.b),
                    _ => None,
                }
            } else {
                None
            };
            let slot = slot.ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
            if slot.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: {:?} vs {:?}",
                    slot.shape(),
                    value.shape()
                )));
            }
            *slot = value.clone();
        }
        Ok(())
    }
}

fn split_idx_field(rest: &str) -> Result<(usize, &str)> {
    let mut parts = rest.splitn(2, '.');
    let idx = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("bad tensor name suffix {rest}")))?;
    let field = parts.next().unwrap_or_default();
    Ok((idx, field))
}
