//! Learned-graph machinery: low-rank Mahalanobis distances, Gaussian-kernel
//! adjacency, degree/Laplacian, symmetric renormalization with graph
//! accumulation, the graph Laplacian regularizer (GLR), and the analytic
//! gradients of all of these.
//!
//! Distance convention: with metric factor `R` (K x S), the distance between
//! node features f_i and f_j is ||Rᵀ(f_i - f_j)||₂, computed through the
//! projected features G = F·R so the cost is O(NKS + N²S) instead of
//! O(N²KS).
//!
//! GLR convention: the regularizer sums over unordered pairs,
//! glr = Σ_{i<j} a_ij ||x_i - x_j||², which equals the quadratic form
//! trace(XᵀLX) for the combinatorial Laplacian L = D - A.

use crate::error::{Error, Result};
use crate::linalg::{dot, exp_neg_domain, row_sum, DenseMatrix, Scalar};
use std::io::Write;
use std::path::Path;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// Low-rank factor R (K x S) of the Mahalanobis metric M = R·Rᵀ.
///
/// M is PSD by construction and never materialized unless requested.
#[derive(Debug, Clone)]
pub struct MetricFactor<S: Scalar> {
    r: DenseMatrix<S>,
}

impl<S: Scalar> MetricFactor<S> {
    pub fn new(r: DenseMatrix<S>) -> Result<Self> {
        if r.cols() < 1 || r.cols() > r.rows() {
            return Err(Error::Config(format!(
                "metric rank must satisfy 1 <= S <= K, got K={} S={}",
                r.rows(),
                r.cols()
            )));
        }
        Ok(MetricFactor { r })
    }

    pub fn identity(k: usize) -> Self {
        MetricFactor {
            r: DenseMatrix::identity(k),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.r.rows()
    }

    pub fn rank(&self) -> usize {
        self.r.cols()
    }

    pub fn factor(&self) -> &DenseMatrix<S> {
        &self.r
    }

    pub fn factor_mut(&mut self) -> &mut DenseMatrix<S> {
        &mut self.r
    }

    /// Materialize M = R·Rᵀ (diagnostics only).
    pub fn metric_matrix(&self) -> DenseMatrix<S> {
        self.r.matmul_nt(&self.r).expect("same inner dim")
    }
}

/// Adjacency + degree (+ Laplacian on demand) for one learned graph.
#[derive(Debug, Clone)]
pub struct LearnedGraph<S: Scalar> {
    adjacency: DenseMatrix<S>,
    degree: Vec<S>,
}

impl<S: Scalar> LearnedGraph<S> {
    pub fn from_adjacency(adjacency: DenseMatrix<S>) -> Self {
        let degree = adjacency.row_sums();
        LearnedGraph { adjacency, degree }
    }

    pub fn n(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn adjacency(&self) -> &DenseMatrix<S> {
        &self.adjacency
    }

    /// d_ii = Σ_j a_ij (full row sums, self-loop weight included).
    pub fn degree(&self) -> &[S] {
        &self.degree
    }

    /// Combinatorial Laplacian L = D - A, materialized on demand.
    pub fn laplacian(&self) -> DenseMatrix<S> {
        let n = self.n();
        let mut l = self.adjacency.scale(-S::ONE);
        for i in 0..n {
            *l.at_mut(i, i) += self.degree[i];
        }
        l
    }
}

/// Gradients of a scalar objective with respect to the metric factor and
/// the node features that fed the graph.
#[derive(Debug, Clone)]
pub struct GraphGradients<S: Scalar> {
    pub d_r: DenseMatrix<S>,
    pub d_features: DenseMatrix<S>,
}

/// Which signal the GLR smooths. The network uses the same features that
/// built the graph; a fixed external signal is allowed for diagnostics.
pub enum GlrSignal<'a, S: Scalar> {
    SameAsFeatures,
    Fixed(&'a DenseMatrix<S>),
}

// ---------------------------------------------------------------------------
// Forward operations
// ---------------------------------------------------------------------------

/// Pairwise metric distances, entry (i,j) = ||Rᵀ(f_i - f_j)||₂.
pub fn mahalanobis_distances<S: Scalar>(
    features: &DenseMatrix<S>,
    metric: &MetricFactor<S>,
) -> Result<DenseMatrix<S>> {
    if features.cols() != metric.feature_dim() {
        return Err(Error::dimension(
            "mahalanobis_distances",
            format!(
                "features {}x{} vs metric factor {}x{}",
                features.rows(),
                features.cols(),
                metric.feature_dim(),
                metric.rank()
            ),
        ));
    }
    let projected = features.matmul(metric.factor())?;
    let mut dsq = DenseMatrix::zeros(0, 0);
    sqdist_from_projected(&projected, &mut dsq);
    dsq.map_inplace(|v| v.sqrt());
    Ok(dsq)
}

/// Gaussian-kernel adjacency a_ij = exp(-d_ij²) with unit diagonal.
pub fn kernel_adjacency<S: Scalar>(distances: &DenseMatrix<S>) -> LearnedGraph<S> {
    debug_assert_eq!(distances.rows(), distances.cols());
    let mut adj = distances.map(|d| S::from_f64(exp_neg_domain(-(d * d).to_f64())));
    let n = adj.rows();
    for i in 0..n {
        *adj.at_mut(i, i) = S::ONE;
    }
    LearnedGraph::from_adjacency(adj)
}

/// Graph Laplacian regularizer over unordered pairs:
/// Σ_{i<j} a_ij ||x_i - x_j||², summed over signal columns.
///
/// Straight-line reference form; the layer's training path uses the
/// algebraically identical Gram decomposition and is cross-checked against
/// this function in tests.
pub fn glr<S: Scalar>(graph: &LearnedGraph<S>, signal: &DenseMatrix<S>) -> S {
    let n = graph.n();
    debug_assert_eq!(signal.rows(), n);
    let a = graph.adjacency();
    let mut acc = S::ZERO;
    for i in 0..n {
        let xi = signal.row(i);
        for j in (i + 1)..n {
            let xj = signal.row(j);
            let mut sq = S::ZERO;
            for (p, q) in xi.iter().zip(xj) {
                let d = *p - *q;
                sq = d.mul_add(d, sq);
            }
            acc = a.at(i, j).mul_add(sq, acc);
        }
    }
    acc
}

/// Symmetric renormalization with graph accumulation:
/// T = a_prev + a_star, Λ_ii = Σ_j T_ij, output Λ^{-1/2} T Λ^{-1/2}.
pub fn renormalize<S: Scalar>(
    a_prev: &DenseMatrix<S>,
    a_star: &LearnedGraph<S>,
) -> Result<DenseMatrix<S>> {
    if a_prev.shape() != a_star.adjacency().shape() {
        return Err(Error::dimension(
            "renormalize",
            format!(
                "a_prev {}x{} vs a_star {}x{}",
                a_prev.rows(),
                a_prev.cols(),
                a_star.n(),
                a_star.n()
            ),
        ));
    }
    let t = a_prev.add(a_star.adjacency())?;
    let (a_hat, _) = renormalize_raw(&t)?;
    Ok(a_hat)
}

// ---------------------------------------------------------------------------
// Internal kernels shared by the public ops and the layer's fused path
// ---------------------------------------------------------------------------

/// Pairwise squared Euclidean distances of the rows of `g`, via
/// d²_ij = n_i + n_j - 2<g_i, g_j>. Tiny negative values from cancellation
/// are clamped to zero; the diagonal is exactly zero.
pub(crate) fn sqdist_from_projected<S: Scalar>(g: &DenseMatrix<S>, out: &mut DenseMatrix<S>) {
    let n = g.rows();
    g.gram_into(out); // out = G·Gᵀ
    let sq: Vec<S> = (0..n).map(|i| out.at(i, i)).collect();
    let two = S::from_f64(2.0);
    for i in 0..n {
        let row = out.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            let d = sq[i] + sq[j] - two * *v;
            *v = d.max_s(S::ZERO);
        }
        row[i] = S::ZERO;
    }
}

/// a_ij = exp(-d²_ij), diagonal forced to exactly one. The input is
/// symmetric by construction, so only the upper triangle goes through the
/// exponential and the lower is mirrored.
pub(crate) fn kernel_from_sqdist<S: Scalar>(dsq: &DenseMatrix<S>, out: &mut DenseMatrix<S>) {
    let n = dsq.rows();
    out.reset(n, n);
    for i in 0..n {
        *out.at_mut(i, i) = S::ONE;
        for j in (i + 1)..n {
            let v = S::from_f64(exp_neg_domain(-dsq.at(i, j).to_f64()));
            *out.at_mut(i, j) = v;
            *out.at_mut(j, i) = v;
        }
    }
}

/// Fused Gaussian kernel straight from projected features: builds the
/// Gram matrix of `g` into `out`, then rewrites it in place as
/// a_ij = exp(-(n_i + n_j - 2 Γ_ij)) with unit diagonal. The transform is
/// row-contiguous and branch-free so it vectorizes; (i,j) and (j,i) run
/// the identical computation on a bit-symmetric Gram, so the result is
/// bit-symmetric without mirroring.
pub(crate) fn kernel_from_projected<S: Scalar>(g: &DenseMatrix<S>, out: &mut DenseMatrix<S>) {
    let n = g.rows();
    g.gram_into(out);
    let sq: Vec<f64> = (0..n).map(|i| out.at(i, i).to_f64()).collect();
    for i in 0..n {
        let sq_i = sq[i];
        let row = out.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            let dsq = (sq_i + sq[j] - 2.0 * v.to_f64()).max(0.0);
            *v = S::from_f64(exp_neg_domain(-dsq));
        }
        row[i] = S::ONE;
    }
}

/// Fused accumulate-and-renormalize: T = graph_in + adj_star with row
/// sums collected in the same pass, then Â = Λ^{-1/2} T Λ^{-1/2}.
/// Single extra pass over T instead of three.
pub(crate) fn accumulate_renormalize<S: Scalar>(
    graph_in: &DenseMatrix<S>,
    adj_star: &DenseMatrix<S>,
) -> Result<(DenseMatrix<S>, DenseMatrix<S>, Vec<S>)> {
    let n = graph_in.rows();
    let mut t = DenseMatrix::zeros(n, n);
    let mut inv_sqrt = Vec::with_capacity(n);
    for i in 0..n {
        let g = graph_in.row(i);
        let a = adj_star.row(i);
        let trow = t.row_mut(i);
        for j in 0..n {
            trow[j] = g[j] + a[j];
        }
        let lam = row_sum(trow);
        if lam <= S::ZERO {
            return Err(Error::DegenerateGraph {
                row: i,
                weight: lam.to_f64(),
            });
        }
        inv_sqrt.push(S::ONE / lam.sqrt());
    }
    let mut a_hat = t.clone();
    for i in 0..n {
        let li = inv_sqrt[i];
        let row = a_hat.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v *= li * inv_sqrt[j];
        }
    }
    Ok((t, a_hat, inv_sqrt))
}

/// Renormalize a raw accumulated graph `t`: returns (Λ^{-1/2} T Λ^{-1/2},
/// the vector Λ^{-1/2}). Errors if any row sum is non-positive.
pub(crate) fn renormalize_raw<S: Scalar>(t: &DenseMatrix<S>) -> Result<(DenseMatrix<S>, Vec<S>)> {
    let n = t.rows();
    let mut inv_sqrt = Vec::with_capacity(n);
    for i in 0..n {
        let lam = row_sum(t.row(i));
        if lam <= S::ZERO {
            return Err(Error::DegenerateGraph {
                row: i,
                weight: lam.to_f64(),
            });
        }
        inv_sqrt.push(S::ONE / lam.sqrt());
    }
    let mut a_hat = t.clone();
    for i in 0..n {
        let li = inv_sqrt[i];
        let row = a_hat.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            // λ_i·λ_j first: multiplication commutes bit-exactly, keeping
            // Â bit-symmetric when T is.
            *v *= li * inv_sqrt[j];
        }
    }
    Ok((a_hat, inv_sqrt))
}

/// Chain an upstream gradient on Â = Λ^{-1/2} T Λ^{-1/2} back to T, with Λ
/// treated as a function of T (full chain through the row sums).
///
/// Perturbing T_pq moves only Λ_pp, which scales row p and column p of Â,
/// so both degree-correction terms attach to row p:
///
///   dT_pq = λ_p λ_q U_pq - ½ λ_p² (r_p + c_p),
///
/// where λ = Λ^{-1/2}, r_p = Σ_j U_pj Â_pj and c_p = Σ_i U_ip Â_ip.
/// `extra` is an optional upstream gradient on T itself, folded into the
/// same pass.
pub(crate) fn renorm_backward_with<S: Scalar>(
    upstream: &DenseMatrix<S>,
    a_hat: &DenseMatrix<S>,
    inv_sqrt: &[S],
    extra: Option<&DenseMatrix<S>>,
) -> DenseMatrix<S> {
    let n = upstream.rows();
    let half = S::from_f64(0.5);
    let mut r = vec![S::ZERO; n];
    let mut c = vec![S::ZERO; n];
    for i in 0..n {
        let urow = upstream.row(i);
        let arow = a_hat.row(i);
        r[i] = dot(urow, arow);
        for q in 0..n {
            c[q] = urow[q].mul_add(arow[q], c[q]);
        }
    }
    let mut out = DenseMatrix::zeros(n, n);
    for p in 0..n {
        let lp = inv_sqrt[p];
        let row_term = half * lp * lp * (r[p] + c[p]);
        let urow = upstream.row(p);
        let orow = out.row_mut(p);
        match extra {
            Some(e) => {
                let erow = e.row(p);
                for q in 0..n {
                    orow[q] = lp * inv_sqrt[q] * urow[q] - row_term + erow[q];
                }
            }
            None => {
                for q in 0..n {
                    orow[q] = lp * inv_sqrt[q] * urow[q] - row_term;
                }
            }
        }
    }
    out
}

pub(crate) fn renorm_backward<S: Scalar>(
    upstream: &DenseMatrix<S>,
    a_hat: &DenseMatrix<S>,
    inv_sqrt: &[S],
) -> DenseMatrix<S> {
    renorm_backward_with(upstream, a_hat, inv_sqrt, None)
}

/// Chain a gradient on the kernel adjacency back to the squared distances:
/// dD²_pq = -a_pq · dA_pq, diagonal zeroed (d²_pp is structurally zero).
pub(crate) fn kernel_backward<S: Scalar>(
    a_star: &DenseMatrix<S>,
    d_a_star: &DenseMatrix<S>,
) -> DenseMatrix<S> {
    let n = a_star.rows();
    let mut out = DenseMatrix::zeros(n, n);
    for p in 0..n {
        let arow = a_star.row(p);
        let grow = d_a_star.row(p);
        let orow = out.row_mut(p);
        for q in 0..n {
            orow[q] = -arow[q] * grow[q];
        }
        orow[p] = S::ZERO;
    }
    out
}

/// Chain a gradient on the squared-distance matrix back to the projected
/// features: d_G = 2 (diag(e) G - E G) with E = D + Dᵀ, e = row sums of E.
pub(crate) fn sqdist_backward<S: Scalar>(
    g: &DenseMatrix<S>,
    d_dsq: &DenseMatrix<S>,
) -> DenseMatrix<S> {
    let n = g.rows();
    let mut e = DenseMatrix::zeros(n, n);
    for p in 0..n {
        for q in 0..n {
            *e.at_mut(p, q) = d_dsq.at(p, q) + d_dsq.at(q, p);
        }
    }
    let esums = e.row_sums();
    // E = D + Dᵀ is bit-symmetric.
    let mut out = e.matmul_sym(g).expect("square times n x s");
    let two = S::from_f64(2.0);
    for p in 0..n {
        let gp = g.row(p);
        let es = esums[p];
        let orow = out.row_mut(p);
        for (o, &gv) in orow.iter_mut().zip(gp) {
            *o = two * (es * gv - *o);
        }
    }
    out
}

/// Fused backward from the gradient on the accumulated graph down to the
/// projected features, collapsing the kernel chain, the GLR adjacency
/// term, and the pairwise-distance chain into two N x N passes plus one
/// matmul:
///
///   dA*_pq = dT_pq + (w/2)·s_pq            (GLR term, off-diagonal)
///   D_pq   = -A*_pq · dA*_pq               (kernel backward, zero diag)
///   E      = D + Dᵀ, e = row sums of E
///   d_G    = 2 (diag(e) G - E G)
///
/// `glr` carries (squared row norms, Gram, weight) of the GLR signal.
pub(crate) fn fused_graph_chain_backward<S: Scalar>(
    adj_star: &DenseMatrix<S>,
    d_t: &DenseMatrix<S>,
    glr: Option<(&[S], &DenseMatrix<S>, S)>,
    projected: &DenseMatrix<S>,
) -> DenseMatrix<S> {
    let n = adj_star.rows();
    let mut e = DenseMatrix::zeros(n, n);
    for p in 0..n {
        for q in (p + 1)..n {
            let mut d_astar = d_t.at(p, q) + d_t.at(q, p);
            if let Some((sq, gram, w)) = glr {
                let s_pq = (sq[p] + sq[q] - S::from_f64(2.0) * gram.at(p, q)).max_s(S::ZERO);
                d_astar += w * s_pq;
            }
            let v = -adj_star.at(p, q) * d_astar;
            *e.at_mut(p, q) = v;
            *e.at_mut(q, p) = v;
        }
    }
    let esums = e.row_sums();
    let mut out = e.matmul_sym(projected).expect("square times n x s");
    let two = S::from_f64(2.0);
    for p in 0..n {
        let gp = projected.row(p);
        let es = esums[p];
        let orow = out.row_mut(p);
        for (o, &gv) in orow.iter_mut().zip(gp) {
            *o = two * (es * gv - *o);
        }
    }
    out
}

/// Direct gradient of weight·glr on the signal itself:
/// d_x_p = 2·weight·Σ_q a_pq (x_p - x_q) = 2w (diag(deg) X - A X)_p.
pub(crate) fn glr_signal_backward<S: Scalar>(
    a_star: &DenseMatrix<S>,
    signal: &DenseMatrix<S>,
    weight: S,
) -> DenseMatrix<S> {
    let deg = a_star.row_sums();
    let mut out = a_star.matmul_sym(signal).expect("square times n x k");
    let two_w = S::from_f64(2.0) * weight;
    for p in 0..signal.rows() {
        let xp = signal.row(p);
        let d = deg[p];
        let orow = out.row_mut(p);
        for (o, &x) in orow.iter_mut().zip(xp) {
            *o = two_w * (d * x - *o);
        }
    }
    out
}

/// GLR value from cached pair statistics: with squared row norms n and the
/// Gram matrix Γ of the signal, glr = Σ_p n_p d*_p - <A*, Γ>_F where d* are
/// the full row sums of A*. Algebraically equal to [`glr`].
pub(crate) fn glr_from_gram<S: Scalar>(
    a_star: &DenseMatrix<S>,
    sq_norms: &[S],
    gram: &DenseMatrix<S>,
) -> S {
    let deg = a_star.row_sums();
    let mut acc = S::ZERO;
    for (n_p, d_p) in sq_norms.iter().zip(&deg) {
        acc = (*n_p).mul_add(*d_p, acc);
    }
    acc - a_star.frob_dot(gram).expect("same shape")
}

/// Add the GLR's gradient on the kernel adjacency, w/2 · s_pq on both
/// triangles, with s_pq = n_p + n_q - 2Γ_pq off the diagonal.
pub(crate) fn glr_adjacency_backward_into<S: Scalar>(
    d_a_star: &mut DenseMatrix<S>,
    sq_norms: &[S],
    gram: &DenseMatrix<S>,
    weight: S,
) {
    let half_w = S::from_f64(0.5) * weight;
    let two = S::from_f64(2.0);
    let n = d_a_star.rows();
    for p in 0..n {
        let grow = gram.row(p);
        let orow = d_a_star.row_mut(p);
        for q in 0..n {
            if p != q {
                let s_pq = (sq_norms[p] + sq_norms[q] - two * grow[q]).max_s(S::ZERO);
                orow[q] += half_w * s_pq;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// The composed backward op
// ---------------------------------------------------------------------------

/// Exact analytic gradients of
///
///   objective(R, F) = Σ_pq U_pq · Â_pq(R, F) + glr_weight · glr(A*(R,F), signal)
///
/// with respect to the metric factor R and the features F, where
/// A* is the kernel adjacency built from F through R, and
/// Â = Λ^{-1/2}(a_prev + A*)Λ^{-1/2} with Λ the row sums of the accumulated
/// graph (the degree dependence of Λ is part of the chain).
///
/// With [`GlrSignal::SameAsFeatures`], the regularizer's direct dependence
/// on the features is included in `d_features`.
pub fn backward_through_graph<S: Scalar>(
    features: &DenseMatrix<S>,
    metric: &MetricFactor<S>,
    a_prev: &DenseMatrix<S>,
    upstream_on_renormalized: &DenseMatrix<S>,
    glr_weight: S,
    glr_signal: GlrSignal<'_, S>,
) -> Result<GraphGradients<S>> {
    // Recompute the forward pieces this op needs.
    let projected = features.matmul(metric.factor())?;
    let mut dsq = DenseMatrix::zeros(0, 0);
    sqdist_from_projected(&projected, &mut dsq);
    let mut a_star = DenseMatrix::zeros(0, 0);
    kernel_from_sqdist(&dsq, &mut a_star);
    let t = a_prev.add(&a_star)?;
    let (a_hat, inv_sqrt) = renormalize_raw(&t)?;

    // Task path: upstream on Â chained to the accumulated graph T; since
    // T = a_prev + A*, this is also the gradient on A*.
    let mut d_a_star = renorm_backward(upstream_on_renormalized, &a_hat, &inv_sqrt);

    let signal = match glr_signal {
        GlrSignal::SameAsFeatures => features,
        GlrSignal::Fixed(m) => m,
    };
    if glr_weight != S::ZERO {
        let sq_norms = signal.row_sq_norms();
        let mut gram = DenseMatrix::zeros(0, 0);
        signal.gram_into(&mut gram);
        glr_adjacency_backward_into(&mut d_a_star, &sq_norms, &gram, glr_weight);
    }

    // Kernel and distance chain down to R and F.
    let d_dsq = kernel_backward(&a_star, &d_a_star);
    let d_projected = sqdist_backward(&projected, &d_dsq);
    let d_r = features.matmul_tn(&d_projected)?;
    let mut d_features = d_projected.matmul_nt(metric.factor())?;

    if glr_weight != S::ZERO && matches!(glr_signal, GlrSignal::SameAsFeatures) {
        let direct = glr_signal_backward(&a_star, features, glr_weight);
        d_features.add_assign(&direct)?;
    }

    Ok(GraphGradients { d_r, d_features })
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

/// All eigenvalues of a symmetric matrix by the cyclic Jacobi method.
/// Intended for small diagnostic checks (PSD-ness of Laplacians, N <= 50).
pub fn symmetric_eigenvalues<S: Scalar>(m: &DenseMatrix<S>) -> Vec<f64> {
    let n = m.rows();
    assert_eq!(n, m.cols(), "eigenvalues of a non-square matrix");
    let mut a: Vec<f64> = m.data().iter().map(|v| v.to_f64()).collect();
    let idx = |i: usize, j: usize| i * n + j;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[idx(i, j)] * a[idx(i, j)];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[idx(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[idx(p, p)];
                let aqq = a[idx(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows and columns p, q.
                for k in 0..n {
                    let akp = a[idx(k, p)];
                    let akq = a[idx(k, q)];
                    a[idx(k, p)] = c * akp - s * akq;
                    a[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[idx(p, k)];
                    let aqk = a[idx(q, k)];
                    a[idx(p, k)] = c * apk - s * aqk;
                    a[idx(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[idx(i, i)]).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eigs
}

// ---------------------------------------------------------------------------
// Adjacency export
// ---------------------------------------------------------------------------

/// Write a matrix as CSV with 12 significant digits per entry.
pub fn write_matrix_csv<S: Scalar>(m: &DenseMatrix<S>, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..m.rows() {
        let mut first = true;
        for j in 0..m.cols() {
            if !first {
                write!(f, ",")?;
            }
            write!(f, "{:.11e}", m.at(i, j).to_f64())?;
            first = false;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

/// Read a matrix written by [`write_matrix_csv`].
pub fn read_matrix_csv<S: Scalar>(path: &Path) -> Result<DenseMatrix<S>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<S>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                detail: format!("bad float {field:?}: {e}"),
            })?;
            row.push(S::from_f64(v));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("{}", path.display())));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            detail: "ragged rows".into(),
        });
    }
    let rows_n = rows.len();
    DenseMatrix::from_vec(rows_n, cols, rows.into_iter().flatten().collect())
}

/// Write an 8-bit PGM (P5) heatmap of a nonnegative matrix with the log
/// transform v -> log(1 + v·c), scaled so the largest entry maps to 255.
pub fn write_pgm_heatmap<S: Scalar>(m: &DenseMatrix<S>, path: &Path, c: f64) -> Result<()> {
    let mut max = 0.0_f64;
    for &v in m.data() {
        max = max.max(v.to_f64());
    }
    let denom = (1.0 + max * c).ln();
    let mut bytes = Vec::with_capacity(m.rows() * m.cols());
    for &v in m.data() {
        let x = (1.0 + v.to_f64().max(0.0) * c).ln();
        let px = if denom > 0.0 {
            (255.0 * x / denom).round().clamp(0.0, 255.0) as u8
        } else {
            0
        };
        bytes.push(px);
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{} {}\n255\n", m.cols(), m.rows())?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}
