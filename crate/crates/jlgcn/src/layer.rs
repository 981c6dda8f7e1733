//! One graph-learning convolution layer: learn a kernel graph from the
//! incoming features, accumulate it with the previous layer's graph,
//! renormalize, and propagate features. Three modes:
//!
//! - `PlainGcn`: no graph learning; the propagation operator is
//!   Λ^{-1/2}(graph_in + I)Λ^{-1/2}, recovering the standard GCN layer, and
//!   the incoming graph is passed through unchanged.
//! - `Jlgcn`: features = Â·F·W with Â = Λ^{-1/2}(graph_in + A*)Λ^{-1/2},
//!   A* the learned kernel adjacency.
//! - `JlgcnConcat`: features = (F ‖ Â·F)·W, the concatenation variant used
//!   when no ground-truth graph is available.
//!
//! The graph handed to the next layer is the un-renormalized accumulation
//! graph_in + A*; each layer renormalizes its own total.
//!
//! Forward may take distinct "source" (graph-building) and "prop"
//! (propagated) feature matrices so dropout can apply to the propagated
//! path while the graph is learned from the clean features.

use crate::error::{Error, Result};
use crate::graphlearn::{
    accumulate_renormalize, fused_graph_chain_backward, glr_from_gram, glr_signal_backward,
    kernel_from_projected, renorm_backward_with, renormalize_raw, MetricFactor,
};
use crate::linalg::{DenseMatrix, Rng, Scalar};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerMode {
    PlainGcn,
    Jlgcn,
    JlgcnConcat,
}

/// Which features the GLR smooths: the layer's input features (the same
/// ones the graph is built from, the default) or the layer's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlrSignalSource {
    Input,
    Output,
}

/// Metric factor initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RInit {
    Random,
    Identity,
}

pub struct LayerOutput<S: Scalar> {
    /// F_l, shape N x out_dim.
    pub features: DenseMatrix<S>,
    /// Accumulated un-renormalized graph passed to the next layer.
    pub graph: DenseMatrix<S>,
    /// This layer's GLR contribution (0 in plain mode).
    pub glr_term: S,
}

pub struct LayerGrads<S: Scalar> {
    pub d_w: DenseMatrix<S>,
    pub d_r: Option<DenseMatrix<S>>,
    /// Gradient on the graph-source features (None unless requested).
    pub d_source: Option<DenseMatrix<S>>,
    /// Gradient on the propagated input features (None unless requested).
    pub d_prop: Option<DenseMatrix<S>>,
    /// Gradient on the incoming graph (None unless requested).
    pub d_graph_in: Option<DenseMatrix<S>>,
}

impl<S: Scalar> LayerGrads<S> {
    /// Combined input-feature gradient for the common case where the same
    /// matrix was both graph source and propagation input.
    pub fn d_features_in(&self) -> Result<DenseMatrix<S>> {
        match (&self.d_source, &self.d_prop) {
            (Some(s), Some(p)) => s.add(p),
            (Some(s), None) => Ok(s.clone()),
            (None, Some(p)) => Ok(p.clone()),
            (None, None) => Err(Error::Config(
                "input gradients were not requested in backward".into(),
            )),
        }
    }
}

/// Everything the backward pass needs from one forward pass.
pub struct LayerCache<S: Scalar> {
    source: DenseMatrix<S>,
    prop: DenseMatrix<S>,
    /// G = source · R (jlgcn modes only).
    projected: Option<DenseMatrix<S>>,
    /// Learned kernel adjacency A* (jlgcn modes only).
    adj_star: Option<DenseMatrix<S>>,
    /// Λ^{-1/2} of the accumulated graph.
    inv_sqrt: Vec<S>,
    a_hat: DenseMatrix<S>,
    /// prop · W (or prop · W_bottom in concat mode).
    h: DenseMatrix<S>,
    /// Output features (cached only when the GLR smooths the output).
    output: Option<DenseMatrix<S>>,
    /// (squared row norms, Gram) of the GLR signal, unless held in the
    /// persistent static-source stats.
    glr_stats: Option<(Vec<S>, DenseMatrix<S>)>,
    glr_enabled: bool,
    used_static_stats: bool,
}

impl<S: Scalar> LayerCache<S> {
    pub fn learned_adjacency(&self) -> Option<&DenseMatrix<S>> {
        self.adj_star.as_ref()
    }
}

/// Per-layer trainable state plus the forward cache needed by backward.
pub struct LayerState<S: Scalar> {
    mode: LayerMode,
    in_dim: usize,
    out_dim: usize,
    pub w: DenseMatrix<S>,
    pub r: Option<MetricFactor<S>>,
    glr_signal: GlrSignalSource,
    /// Set when the graph-source features are identical across forwards
    /// (first layer of a node net); pair statistics are then computed once.
    static_source: bool,
    source_stats: Option<(Vec<S>, DenseMatrix<S>)>,
    cache: Option<LayerCache<S>>,
    /// Learned adjacency kept from an eval-mode forward (graph export).
    last_adj_star: Option<DenseMatrix<S>>,
}

impl<S: Scalar> LayerState<S> {
    pub fn new_plain(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        LayerState {
            mode: LayerMode::PlainGcn,
            in_dim,
            out_dim,
            w: DenseMatrix::glorot_init(in_dim, out_dim, rng),
            r: None,
            glr_signal: GlrSignalSource::Input,
            static_source: false,
            source_stats: None,
            cache: None,
            last_adj_star: None,
        }
    }

    pub fn new_jlgcn(
        mode: LayerMode,
        in_dim: usize,
        out_dim: usize,
        rank: usize,
        r_init: RInit,
        glr_signal: GlrSignalSource,
        rng: &mut Rng,
    ) -> Result<Self> {
        if mode == LayerMode::PlainGcn {
            return Ok(Self::new_plain(in_dim, out_dim, rng));
        }
        let w_rows = match mode {
            LayerMode::JlgcnConcat => 2 * in_dim,
            _ => in_dim,
        };
        let w = DenseMatrix::glorot_init(w_rows, out_dim, rng);
        let r = match r_init {
            RInit::Random => MetricFactor::new(DenseMatrix::glorot_init(in_dim, rank, rng))?,
            RInit::Identity => {
                if rank != in_dim {
                    return Err(Error::Config(format!(
                        "identity metric init requires rank S == feature dim K (S={rank}, K={in_dim})"
                    )));
                }
                MetricFactor::identity(in_dim)
            }
        };
        Ok(LayerState {
            mode,
            in_dim,
            out_dim,
            w,
            r: Some(r),
            glr_signal,
            static_source: false,
            source_stats: None,
            cache: None,
            last_adj_star: None,
        })
    }

    pub fn mode(&self) -> LayerMode {
        self.mode
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn set_static_source(&mut self, on: bool) {
        self.static_source = on;
        if !on {
            self.source_stats = None;
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
        self.last_adj_star = None;
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    /// The learned kernel adjacency from the most recent forward.
    pub fn learned_adjacency(&self) -> Option<&DenseMatrix<S>> {
        self.cache
            .as_ref()
            .and_then(|c| c.adj_star.as_ref())
            .or(self.last_adj_star.as_ref())
    }

    fn shape_check(
        &self,
        source: &DenseMatrix<S>,
        prop: &DenseMatrix<S>,
        graph_in: &DenseMatrix<S>,
    ) -> Result<()> {
        let n = source.rows();
        if prop.rows() != n || source.cols() != self.in_dim || prop.cols() != self.in_dim {
            return Err(Error::dimension(
                "layer forward",
                format!(
                    "source {}x{}, prop {}x{}, expected {} columns",
                    source.rows(),
                    source.cols(),
                    prop.rows(),
                    prop.cols(),
                    self.in_dim
                ),
            ));
        }
        if graph_in.rows() != n || graph_in.cols() != n {
            return Err(Error::dimension(
                "layer forward",
                format!(
                    "graph_in {}x{} for {} nodes",
                    graph_in.rows(),
                    graph_in.cols(),
                    n
                ),
            ));
        }
        Ok(())
    }

    /// Single-features convenience wrapper: the same matrix is both graph
    /// source and propagation input.
    pub fn forward(
        &mut self,
        features_in: &DenseMatrix<S>,
        graph_in: &DenseMatrix<S>,
        training: bool,
    ) -> Result<LayerOutput<S>> {
        self.forward_split(features_in, features_in, graph_in, training, true)
    }

    /// Full forward. `source` builds the graph, `prop` is propagated; they
    /// are the same matrix unless dropout split them. `need_glr` skips the
    /// regularizer bookkeeping when the objective has no GLR term.
    pub fn forward_split(
        &mut self,
        source: &DenseMatrix<S>,
        prop: &DenseMatrix<S>,
        graph_in: &DenseMatrix<S>,
        training: bool,
        need_glr: bool,
    ) -> Result<LayerOutput<S>> {
        self.shape_check(source, prop, graph_in)?;
        if self.static_source && self.is_jlgcn() && need_glr && self.source_stats.is_none() {
            self.source_stats = Some(pair_stats(source));
        }
        let (out, cache) = self.run_forward(source, prop, graph_in, training, need_glr)?;
        if training {
            self.last_adj_star = None;
            self.cache = cache;
        } else {
            self.cache = None;
            self.last_adj_star = cache.and_then(|c| c.adj_star);
        }
        Ok(out)
    }

    /// Forward that hands the caller the cache instead of storing it, for
    /// the case where one set of weights serves many instances per step
    /// (graph-classification batches). Never uses static source stats.
    pub fn forward_detached(
        &self,
        source: &DenseMatrix<S>,
        prop: &DenseMatrix<S>,
        graph_in: &DenseMatrix<S>,
        need_glr: bool,
    ) -> Result<(LayerOutput<S>, LayerCache<S>)> {
        self.shape_check(source, prop, graph_in)?;
        let (out, cache) = self.run_forward_impl(source, prop, graph_in, true, need_glr, false)?;
        Ok((out, cache.expect("training forward produces a cache")))
    }

    fn is_jlgcn(&self) -> bool {
        matches!(self.mode, LayerMode::Jlgcn | LayerMode::JlgcnConcat)
    }

    fn run_forward(
        &self,
        source: &DenseMatrix<S>,
        prop: &DenseMatrix<S>,
        graph_in: &DenseMatrix<S>,
        want_cache: bool,
        need_glr: bool,
    ) -> Result<(LayerOutput<S>, Option<LayerCache<S>>)> {
        self.run_forward_impl(source, prop, graph_in, want_cache, need_glr, self.static_source)
    }

    fn run_forward_impl(
        &self,
        source: &DenseMatrix<S>,
        prop: &DenseMatrix<S>,
        graph_in: &DenseMatrix<S>,
        want_cache: bool,
        need_glr: bool,
        use_static_stats: bool,
    ) -> Result<(LayerOutput<S>, Option<LayerCache<S>>)> {
        match self.mode {
            LayerMode::PlainGcn => {
                let n = prop.rows();
                let mut t = graph_in.clone();
                for i in 0..n {
                    *t.at_mut(i, i) += S::ONE;
                }
                let (a_hat, inv_sqrt) = renormalize_raw(&t)?;
                let h = prop.matmul(&self.w)?;
                let features = a_hat.matmul_sym(&h)?;
                let cache = want_cache.then(|| LayerCache {
                    source: source.clone(),
                    prop: prop.clone(),
                    projected: None,
                    adj_star: None,
                    inv_sqrt,
                    a_hat,
                    h,
                    output: None,
                    glr_stats: None,
                    glr_enabled: false,
                    used_static_stats: false,
                });
                Ok((
                    LayerOutput {
                        features,
                        graph: graph_in.clone(),
                        glr_term: S::ZERO,
                    },
                    cache,
                ))
            }
            LayerMode::Jlgcn | LayerMode::JlgcnConcat => {
                let metric = self.r.as_ref().expect("jlgcn mode has a metric factor");
                let projected = source.matmul(metric.factor())?;
                let mut adj_star = DenseMatrix::zeros(0, 0);
                kernel_from_projected(&projected, &mut adj_star);

                let (t, a_hat, inv_sqrt) = accumulate_renormalize(graph_in, &adj_star)?;

                // Propagate: Â·(P·W), plus the skip term P·W_top in concat.
                let (h, features) = match self.mode {
                    LayerMode::Jlgcn => {
                        let h = prop.matmul(&self.w)?;
                        let features = a_hat.matmul_sym(&h)?;
                        (h, features)
                    }
                    LayerMode::JlgcnConcat => {
                        let (w_top, w_bot) = self.split_w();
                        let h = prop.matmul(&w_bot)?;
                        let mut features = a_hat.matmul_sym(&h)?;
                        features.add_assign(&prop.matmul(&w_top)?)?;
                        (h, features)
                    }
                    LayerMode::PlainGcn => unreachable!(),
                };

                let mut glr_term = S::ZERO;
                let mut glr_stats = None;
                let mut cached_output = None;
                let mut used_static = false;
                if need_glr {
                    match self.glr_signal {
                        GlrSignalSource::Input => {
                            if use_static_stats {
                                let (sq, gram) = self
                                    .source_stats
                                    .as_ref()
                                    .expect("static source stats populated before forward");
                                glr_term = glr_from_gram(&adj_star, sq, gram);
                                used_static = true;
                            } else {
                                let stats = pair_stats(source);
                                glr_term = glr_from_gram(&adj_star, &stats.0, &stats.1);
                                glr_stats = Some(stats);
                            }
                        }
                        GlrSignalSource::Output => {
                            let stats = pair_stats(&features);
                            glr_term = glr_from_gram(&adj_star, &stats.0, &stats.1);
                            glr_stats = Some(stats);
                            cached_output = Some(features.clone());
                        }
                    }
                }

                let cache = if want_cache {
                    LayerCache {
                        source: source.clone(),
                        prop: prop.clone(),
                        projected: Some(projected),
                        adj_star: Some(adj_star),
                        inv_sqrt,
                        a_hat,
                        h,
                        output: cached_output,
                        glr_stats,
                        glr_enabled: need_glr,
                        used_static_stats: used_static,
                    }
                } else {
                    // Eval forward keeps only the learned adjacency, which
                    // graph export reads.
                    LayerCache {
                        source: DenseMatrix::zeros(0, 0),
                        prop: DenseMatrix::zeros(0, 0),
                        projected: None,
                        adj_star: Some(adj_star),
                        inv_sqrt: Vec::new(),
                        a_hat: DenseMatrix::zeros(0, 0),
                        h: DenseMatrix::zeros(0, 0),
                        output: None,
                        glr_stats: None,
                        glr_enabled: false,
                        used_static_stats: false,
                    }
                };
                Ok((
                    LayerOutput {
                        features,
                        graph: t,
                        glr_term,
                    },
                    Some(cache),
                ))
            }
        }
    }

    fn split_w(&self) -> (DenseMatrix<S>, DenseMatrix<S>) {
        let k = self.in_dim;
        let out = self.out_dim;
        let mut top = DenseMatrix::zeros(k, out);
        let mut bot = DenseMatrix::zeros(k, out);
        top.data_mut().copy_from_slice(&self.w.data()[..k * out]);
        bot.data_mut().copy_from_slice(&self.w.data()[k * out..]);
        (top, bot)
    }

    /// Exact analytic gradients of
    /// (task loss via `upstream` and `upstream_graph`) + glr_weight · glr_term
    /// with respect to the layer parameters and inputs, using the cache
    /// stored by the last training-mode forward.
    ///
    /// `upstream` is d(loss)/d(output features); `upstream_graph` is
    /// d(loss)/d(output graph) — the next layer's d_graph_in — if any.
    /// Input-feature gradients are computed only when `need_input_grads`
    /// (the first layer of a network never needs them).
    pub fn backward(
        &mut self,
        upstream: &DenseMatrix<S>,
        upstream_graph: Option<&DenseMatrix<S>>,
        glr_weight: S,
        need_input_grads: bool,
        need_graph_grad: bool,
    ) -> Result<LayerGrads<S>> {
        let cache = self.cache.take().ok_or(Error::MissingCache)?;
        let out = self.backward_with(
            &cache,
            upstream,
            upstream_graph,
            glr_weight,
            need_input_grads,
            need_graph_grad,
        );
        self.cache = Some(cache);
        out
    }

    /// Backward against an explicit cache from [`Self::forward_detached`].
    pub fn backward_with(
        &self,
        cache: &LayerCache<S>,
        upstream: &DenseMatrix<S>,
        upstream_graph: Option<&DenseMatrix<S>>,
        glr_weight: S,
        need_input_grads: bool,
        need_graph_grad: bool,
    ) -> Result<LayerGrads<S>> {
        if upstream.shape() != (cache.prop.rows(), self.out_dim) {
            return Err(Error::dimension(
                "layer backward",
                format!(
                    "upstream {}x{}, expected {}x{}",
                    upstream.rows(),
                    upstream.cols(),
                    cache.prop.rows(),
                    self.out_dim
                ),
            ));
        }
        match self.mode {
            LayerMode::PlainGcn => {
                self.backward_plain(cache, upstream, upstream_graph, need_input_grads, need_graph_grad)
            }
            LayerMode::Jlgcn | LayerMode::JlgcnConcat => self.backward_jlgcn(
                cache,
                upstream,
                upstream_graph,
                glr_weight,
                need_input_grads,
                need_graph_grad,
            ),
        }
    }

    fn backward_plain(
        &self,
        cache: &LayerCache<S>,
        upstream: &DenseMatrix<S>,
        upstream_graph: Option<&DenseMatrix<S>>,
        need_input_grads: bool,
        need_graph_grad: bool,
    ) -> Result<LayerGrads<S>> {
        // Y = Â·(P·W); Â depends on graph_in only, so the whole graph
        // chain is skippable when nothing consumes it.
        // Â is symmetric, so Âᵀ·U = Â·U.
        let d_h = cache.a_hat.matmul_sym(upstream)?;
        let d_w = cache.prop.matmul_tn(&d_h)?;
        let d_graph_in = if need_graph_grad {
            let u_ahat = upstream.matmul_nt(&cache.h)?;
            Some(renorm_backward_with(
                &u_ahat,
                &cache.a_hat,
                &cache.inv_sqrt,
                upstream_graph,
            ))
        } else {
            None
        };
        let d_prop = if need_input_grads {
            Some(d_h.matmul_nt(&self.w)?)
        } else {
            None
        };
        Ok(LayerGrads {
            d_w,
            d_r: None,
            d_source: need_input_grads
                .then(|| DenseMatrix::zeros(cache.source.rows(), self.in_dim)),
            d_prop,
            d_graph_in,
        })
    }

    fn backward_jlgcn(
        &self,
        cache: &LayerCache<S>,
        upstream: &DenseMatrix<S>,
        upstream_graph: Option<&DenseMatrix<S>>,
        glr_weight: S,
        need_input_grads: bool,
        need_graph_grad: bool,
    ) -> Result<LayerGrads<S>> {
        let metric = self.r.as_ref().unwrap();
        let adj_star = cache.adj_star.as_ref().ok_or(Error::MissingCache)?;
        let projected = cache.projected.as_ref().ok_or(Error::MissingCache)?;
        let use_glr = glr_weight != S::ZERO;
        if use_glr && !cache.glr_enabled {
            return Err(Error::Config(
                "backward with a GLR weight requires forward with need_glr".into(),
            ));
        }

        // If the GLR smooths the output features, fold its direct gradient
        // into the upstream before the propagation chain.
        let mut upstream_eff = None;
        if use_glr && self.glr_signal == GlrSignalSource::Output {
            let out = cache
                .output
                .as_ref()
                .expect("output cached for output-signal GLR");
            let mut u = upstream.clone();
            u.add_assign(&glr_signal_backward(adj_star, out, glr_weight))?;
            upstream_eff = Some(u);
        }
        let upstream = upstream_eff.as_ref().unwrap_or(upstream);

        // Propagation chain (Â symmetric, so Âᵀ·U = Â·U).
        let d_h = cache.a_hat.matmul_sym(upstream)?;
        let (d_w, u_ahat, d_prop) = match self.mode {
            LayerMode::Jlgcn => {
                let d_w = cache.prop.matmul_tn(&d_h)?;
                let u_ahat = upstream.matmul_nt(&cache.h)?;
                let d_prop = if need_input_grads {
                    Some(d_h.matmul_nt(&self.w)?)
                } else {
                    None
                };
                (d_w, u_ahat, d_prop)
            }
            LayerMode::JlgcnConcat => {
                // Y = P·W_top + Â·(P·W_bot), cache.h = P·W_bot.
                let (w_top, w_bot) = self.split_w();
                let d_w_top = cache.prop.matmul_tn(upstream)?;
                let d_w_bot = cache.prop.matmul_tn(&d_h)?;
                let k = self.in_dim;
                let out = self.out_dim;
                let mut d_w = DenseMatrix::zeros(2 * k, out);
                d_w.data_mut()[..k * out].copy_from_slice(d_w_top.data());
                d_w.data_mut()[k * out..].copy_from_slice(d_w_bot.data());
                let u_ahat = upstream.matmul_nt(&cache.h)?;
                let d_prop = if need_input_grads {
                    let mut d_p = upstream.matmul_nt(&w_top)?;
                    d_p.add_assign(&d_h.matmul_nt(&w_bot)?)?;
                    Some(d_p)
                } else {
                    None
                };
                (d_w, u_ahat, d_prop)
            }
            LayerMode::PlainGcn => unreachable!(),
        };

        // Graph chain: through the renormalization to the accumulated
        // graph; this is also the task-path gradient on A*.
        let d_t = renorm_backward_with(&u_ahat, &cache.a_hat, &cache.inv_sqrt, upstream_graph);
        let d_graph_in = need_graph_grad.then(|| d_t.clone());

        // Kernel -> squared distances -> projected features, with the
        // GLR's adjacency term folded in.
        let glr_stats = if use_glr {
            let stats = if cache.used_static_stats {
                self.source_stats.as_ref().expect("static stats populated")
            } else {
                cache.glr_stats.as_ref().expect("glr stats cached")
            };
            Some((stats.0.as_slice(), &stats.1, glr_weight))
        } else {
            None
        };
        let d_projected = fused_graph_chain_backward(adj_star, &d_t, glr_stats, projected);
        let d_r = cache.source.matmul_tn(&d_projected)?;

        let d_source = if need_input_grads {
            let mut d_s = d_projected.matmul_nt(metric.factor())?;
            if use_glr && self.glr_signal == GlrSignalSource::Input {
                d_s.add_assign(&glr_signal_backward(adj_star, &cache.source, glr_weight))?;
            }
            Some(d_s)
        } else {
            None
        };

        Ok(LayerGrads {
            d_w,
            d_r: Some(d_r),
            d_source,
            d_prop,
            d_graph_in,
        })
    }
}

fn pair_stats<S: Scalar>(signal: &DenseMatrix<S>) -> (Vec<S>, DenseMatrix<S>) {
    let sq = signal.row_sq_norms();
    let mut gram = DenseMatrix::zeros(0, 0);
    signal.gram_into(&mut gram);
    (sq, gram)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphlearn::{glr, kernel_adjacency, mahalanobis_distances, renormalize};

    type M = DenseMatrix<f64>;

    fn randn(n: usize, k: usize, seed: u64) -> M {
        let mut rng = Rng::new(seed);
        let data = (0..n * k).map(|_| rng.normal()).collect();
        M::from_vec(n, k, data).unwrap()
    }

    #[test]
    fn plain_single_node_identity_renormalization() {
        // graph_in = 0, N=1: T = I, Â = [[1]], output = F·W.
        let mut rng = Rng::new(1);
        let mut layer = LayerState::<f64>::new_plain(3, 2, &mut rng);
        let f = randn(1, 3, 2);
        let out = layer.forward(&f, &M::zeros(1, 1), false).unwrap();
        let expect = f.matmul(&layer.w).unwrap();
        for (a, b) in out.features.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn jlgcn_far_features_reduce_to_identity_operator() {
        // Distances blown up by a large metric scale on well-separated
        // features: off-diagonal kernel entries vanish, Â -> I, output -> F
        // (with W = I and empty previous graph).
        let mut rng = Rng::new(3);
        let mut layer = LayerState::<f64>::new_jlgcn(
            LayerMode::Jlgcn,
            2,
            2,
            2,
            RInit::Identity,
            GlrSignalSource::Input,
            &mut rng,
        )
        .unwrap();
        layer.w = M::identity(2);
        if let Some(r) = layer.r.as_mut() {
            *r.factor_mut() = M::identity(2).scale(50.0);
        }
        let f = M::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]]);
        let out = layer.forward(&f, &M::zeros(3, 3), false).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert!(
                    (out.features.at(i, j) - f.at(i, j)).abs() < 1e-9,
                    "feature ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn jlgcn_forward_matches_straightline_reference() {
        // Independent single-purpose composition of the public ops.
        let (n, k, s, out_dim) = (4, 3, 2, 2);
        let f = randn(n, k, 10);
        let mut rng = Rng::new(11);
        let mut layer = LayerState::<f64>::new_jlgcn(
            LayerMode::Jlgcn,
            k,
            out_dim,
            s,
            RInit::Random,
            GlrSignalSource::Input,
            &mut rng,
        )
        .unwrap();
        let mut graph_in = M::zeros(n, n);
        *graph_in.at_mut(0, 1) = 1.0;
        *graph_in.at_mut(1, 0) = 1.0;

        let got = layer.forward(&f, &graph_in, false).unwrap();

        let metric = layer.r.as_ref().unwrap();
        let d = mahalanobis_distances(&f, metric).unwrap();
        let a_star = kernel_adjacency(&d);
        let a_hat = renormalize(&graph_in, &a_star).unwrap();
        let expect = a_hat.matmul(&f.matmul(&layer.w).unwrap()).unwrap();
        for (a, b) in got.features.data().iter().zip(expect.data()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
        // graph handed to the next layer is graph_in + A* exactly
        let t = graph_in.add(a_star.adjacency()).unwrap();
        for (a, b) in got.graph.data().iter().zip(t.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
        // glr term agrees with the reference op
        let g = glr(&a_star, &f);
        assert!((got.glr_term - g).abs() <= 1e-9 * g.abs().max(1.0));
    }

    #[test]
    fn euclidean_reduction_matches_plain_with_augmented_graph() {
        // jlgcn with R = I (S = K) produces the same output as plain GCN
        // whose input graph is graph_in + (Euclidean kernel graph - I).
        let (n, k) = (5, 3);
        let f = randn(n, k, 20);
        let mut rng = Rng::new(21);
        let mut jl = LayerState::<f64>::new_jlgcn(
            LayerMode::Jlgcn,
            k,
            2,
            k,
            RInit::Identity,
            GlrSignalSource::Input,
            &mut rng,
        )
        .unwrap();
        let mut graph_in = M::zeros(n, n);
        *graph_in.at_mut(0, 2) = 1.0;
        *graph_in.at_mut(2, 0) = 1.0;

        let out_jl = jl.forward(&f, &graph_in, false).unwrap();

        let d = mahalanobis_distances(&f, &MetricFactor::identity(k)).unwrap();
        let euclid_kernel = kernel_adjacency(&d);
        // the plain layer adds I itself, so hand it graph_in + (A* - I)
        let mut augmented = graph_in.add(euclid_kernel.adjacency()).unwrap();
        for i in 0..n {
            *augmented.at_mut(i, i) -= 1.0;
        }
        let mut plain = LayerState::<f64>::new_plain(k, 2, &mut Rng::new(99));
        plain.w = jl.w.clone();
        let out_plain = plain.forward(&f, &augmented, false).unwrap();
        for (a, b) in out_jl
            .features
            .data()
            .iter()
            .zip(out_plain.features.data())
        {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_without_forward_cache_errors() {
        let mut rng = Rng::new(1);
        let mut layer = LayerState::<f64>::new_plain(3, 2, &mut rng);
        let up = M::zeros(4, 2);
        assert!(matches!(
            layer.backward(&up, None, 0.0, false, false),
            Err(Error::MissingCache)
        ));
    }

    #[test]
    fn backward_zero_upstream_zero_weight_gives_zero_grads() {
        let (n, k) = (4, 3);
        let f = randn(n, k, 30);
        let mut rng = Rng::new(31);
        let mut layer = LayerState::<f64>::new_jlgcn(
            LayerMode::Jlgcn,
            k,
            2,
            2,
            RInit::Random,
            GlrSignalSource::Input,
            &mut rng,
        )
        .unwrap();
        layer.forward(&f, &M::zeros(n, n), true).unwrap();
        let grads = layer.backward(&M::zeros(n, 2), None, 0.0, true, true).unwrap();
        assert!(grads.d_w.data().iter().all(|&v| v == 0.0));
        assert!(grads
            .d_r
            .as_ref()
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(grads
            .d_graph_in
            .as_ref()
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(grads
            .d_features_in()
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn plain_backward_d_w_closed_form() {
        // d_W = (Â·P)ᵀ·upstream for the linear plain layer.
        let (n, k) = (5, 3);
        let f = randn(n, k, 40);
        let mut rng = Rng::new(41);
        let mut layer = LayerState::<f64>::new_plain(k, 2, &mut rng);
        let mut graph_in = M::zeros(n, n);
        for i in 0..n - 1 {
            *graph_in.at_mut(i, i + 1) = 1.0;
            *graph_in.at_mut(i + 1, i) = 1.0;
        }
        layer.forward(&f, &graph_in, true).unwrap();
        let upstream = randn(n, 2, 42);
        let grads = layer.backward(&upstream, None, 0.0, false, true).unwrap();
        assert!(grads.d_r.is_none());

        let mut t = graph_in.clone();
        for i in 0..n {
            *t.at_mut(i, i) += 1.0;
        }
        let (a_hat, _) = renormalize_raw(&t).unwrap();
        let closed = a_hat.matmul(&f).unwrap().matmul_tn(&upstream).unwrap();
        for (a, b) in grads.d_w.data().iter().zip(closed.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    // Full-layer finite-difference check over all four gradient blocks.
    fn layer_objective(
        mode: LayerMode,
        w: &M,
        r: &M,
        f: &M,
        graph_in: &M,
        upstream: &M,
        graph_upstream: &M,
        glr_weight: f64,
        glr_signal: GlrSignalSource,
    ) -> f64 {
        let mut layer = LayerState {
            mode,
            in_dim: f.cols(),
            out_dim: w.cols(),
            w: w.clone(),
            r: Some(MetricFactor::new(r.clone()).unwrap()),
            glr_signal,
            static_source: false,
            source_stats: None,
            cache: None,
            last_adj_star: None,
        };
        let out = layer.forward_split(f, f, graph_in, false, true).unwrap();
        out.features.frob_dot(upstream).unwrap()
            + out.graph.frob_dot(graph_upstream).unwrap()
            + glr_weight * out.glr_term
    }

    fn fd_layer_check(mode: LayerMode, glr_signal: GlrSignalSource, seed: u64, glr_weight: f64) {
        let (n, k, s, out_dim) = (5, 4, 2, 3);
        let f = randn(n, k, seed);
        let mut rng = Rng::new(seed ^ 0xFF);
        let w_rows = if mode == LayerMode::JlgcnConcat {
            2 * k
        } else {
            k
        };
        let w = M::glorot_init(w_rows, out_dim, &mut rng);
        let r = M::glorot_init(k, s, &mut rng).scale(2.0);
        let mut graph_in = M::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.next_f64() < 0.5 {
                    *graph_in.at_mut(i, j) = 1.0;
                    *graph_in.at_mut(j, i) = 1.0;
                }
            }
        }
        let upstream = randn(n, out_dim, seed ^ 0xAA);
        let graph_upstream = randn(n, n, seed ^ 0xBB).scale(0.3);

        let mut layer = LayerState {
            mode,
            in_dim: k,
            out_dim,
            w: w.clone(),
            r: Some(MetricFactor::new(r.clone()).unwrap()),
            glr_signal,
            static_source: false,
            source_stats: None,
            cache: None,
            last_adj_star: None,
        };
        layer.forward_split(&f, &f, &graph_in, true, true).unwrap();
        let grads = layer
            .backward(&upstream, Some(&graph_upstream), glr_weight, true, true)
            .unwrap();
        let d_feat = grads.d_features_in().unwrap();

        let h = 1e-6;
        let obj = |w_: &M, r_: &M, f_: &M, g_: &M| {
            layer_objective(
                mode,
                w_,
                r_,
                f_,
                g_,
                &upstream,
                &graph_upstream,
                glr_weight,
                glr_signal,
            )
        };

        let check_block = |analytic: &M, which: &str, perturb: &dyn Fn(usize, usize, f64) -> f64| {
            let mut max_abs: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for i in 0..analytic.rows() {
                for j in 0..analytic.cols() {
                    let fp = perturb(i, j, h);
                    let fm = perturb(i, j, -h);
                    let fd = (fp - fm) / (2.0 * h);
                    max_abs = max_abs.max((analytic.at(i, j) - fd).abs());
                    scale = scale.max(fd.abs());
                }
            }
            let rel = max_abs / scale.max(1e-10);
            assert!(
                rel < 1e-5,
                "{which} rel err {rel} (mode {mode:?}, seed {seed})"
            );
        };

        check_block(&grads.d_w, "d_w", &|i, j, eps| {
            let mut wp = w.clone();
            *wp.at_mut(i, j) += eps;
            obj(&wp, &r, &f, &graph_in)
        });
        check_block(grads.d_r.as_ref().unwrap(), "d_r", &|i, j, eps| {
            let mut rp = r.clone();
            *rp.at_mut(i, j) += eps;
            obj(&w, &rp, &f, &graph_in)
        });
        check_block(&d_feat, "d_features", &|i, j, eps| {
            let mut fp = f.clone();
            *fp.at_mut(i, j) += eps;
            obj(&w, &r, &fp, &graph_in)
        });
        // The incoming graph is symmetric by contract, so probe it along
        // symmetric directions: analytic gradient of the (i,j)+(j,i) pair.
        let d_g = grads.d_graph_in.as_ref().unwrap();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                let fd = {
                    let mut gp = graph_in.clone();
                    *gp.at_mut(i, j) += h;
                    if j != i {
                        *gp.at_mut(j, i) += h;
                    }
                    let fp = obj(&w, &r, &f, &gp);
                    *gp.at_mut(i, j) -= 2.0 * h;
                    if j != i {
                        *gp.at_mut(j, i) -= 2.0 * h;
                    }
                    let fm = obj(&w, &r, &f, &gp);
                    (fp - fm) / (2.0 * h)
                };
                let analytic = if j == i {
                    d_g.at(i, i)
                } else {
                    d_g.at(i, j) + d_g.at(j, i)
                };
                worst = worst.max((analytic - fd).abs());
                scale = scale.max(fd.abs());
            }
        }
        let rel = worst / scale.max(1e-10);
        assert!(rel < 1e-5, "d_graph_in rel err {rel} (mode {mode:?}, seed {seed})");
    }

    #[test]
    fn full_layer_gradients_match_finite_differences() {
        fd_layer_check(LayerMode::Jlgcn, GlrSignalSource::Input, 51, 0.1);
        fd_layer_check(LayerMode::Jlgcn, GlrSignalSource::Input, 52, 0.0);
        fd_layer_check(LayerMode::JlgcnConcat, GlrSignalSource::Input, 53, 0.1);
    }

    #[test]
    fn output_signal_glr_gradients_match_finite_differences() {
        fd_layer_check(LayerMode::Jlgcn, GlrSignalSource::Output, 54, 0.1);
        fd_layer_check(LayerMode::JlgcnConcat, GlrSignalSource::Output, 55, 0.05);
    }
}
