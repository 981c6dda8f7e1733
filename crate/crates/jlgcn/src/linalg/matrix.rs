//! Dense row-major matrix and the elementary operations the network needs.
//!
//! Determinism contract: every reduction in this module runs in a fixed,
//! documented order. Plain matmul accumulates over the inner index `k` in
//! ascending order (ikj loop). Row-dot kernels (`matmul_nt`, `gram`)
//! accumulate in eight independent lanes over ascending `k` and combine
//! the lanes in a fixed tree. Identical inputs therefore give bit-identical
//! outputs on every run.
//!
//! Finiteness contract: constructors reject NaN/Inf, operations
//! debug-assert finite outputs, and long-running callers (the training
//! loop) revalidate at epoch boundaries rather than silently propagating.

use super::scalar::Scalar;
use super::Rng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<S: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> DenseMatrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![S::ZERO; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = S::ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dimension(
                "from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("from_vec".into()));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Test/fixture helper: build from nested rows, panicking on raggedness.
    pub fn from_rows(rows: &[&[S]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        DenseMatrix { rows: r, cols: c, data }
    }

    #[inline(always)]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline(always)]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline(always)]
    pub fn at(&self, i: usize, j: usize) -> S {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline(always)]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut S {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }

    #[inline(always)]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline(always)]
    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn fill(&mut self, v: S) {
        self.data.fill(v);
    }

    /// Reshape in place to `rows x cols`, reusing the allocation. Contents
    /// are unspecified afterwards; callers overwrite everything.
    pub fn reset(&mut self, rows: usize, cols: usize) {
        self.rows = rows;
        self.cols = cols;
        self.data.clear();
        self.data.resize(rows * cols, S::ZERO);
    }

    pub fn copy_from(&mut self, other: &DenseMatrix<S>) {
        self.rows = other.rows;
        self.cols = other.cols;
        self.data.clear();
        self.data.extend_from_slice(&other.data);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn validate_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    /// Convert element type (used by the precision-selection boundary).
    pub fn cast<T: Scalar>(&self) -> DenseMatrix<T> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn transpose(&self) -> DenseMatrix<S> {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> DenseMatrix<S> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(S) -> S) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    pub fn add(&self, other: &DenseMatrix<S>) -> Result<DenseMatrix<S>> {
        self.check_same_shape("add", other)?;
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &DenseMatrix<S>) -> Result<DenseMatrix<S>> {
        self.check_same_shape("sub", other)?;
        let mut out = self.clone();
        for (o, &b) in out.data.iter_mut().zip(&other.data) {
            *o -= b;
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &DenseMatrix<S>) -> Result<()> {
        self.check_same_shape("add_assign", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// self += alpha * other
    pub fn axpy(&mut self, alpha: S, other: &DenseMatrix<S>) -> Result<()> {
        self.check_same_shape("axpy", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = b.mul_add(alpha, *a);
        }
        Ok(())
    }

    pub fn scale(&self, alpha: S) -> DenseMatrix<S> {
        self.map(|v| v * alpha)
    }

    pub fn hadamard(&self, other: &DenseMatrix<S>) -> Result<DenseMatrix<S>> {
        self.check_same_shape("hadamard", other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Sum of elementwise products (Frobenius inner product).
    pub fn frob_dot(&self, other: &DenseMatrix<S>) -> Result<S> {
        self.check_same_shape("frob_dot", other)?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn sum(&self) -> S {
        let mut acc = S::ZERO;
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn row_sums(&self) -> Vec<S> {
        (0..self.rows).map(|i| row_sum(self.row(i))).collect()
    }

    pub fn row_max(&self) -> Vec<S> {
        (0..self.rows)
            .map(|i| {
                let r = self.row(i);
                let mut m = r[0];
                for &v in &r[1..] {
                    m = m.max_s(v);
                }
                m
            })
            .collect()
    }

    /// Per-row index of the maximum entry; first index wins ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|i| {
                let r = self.row(i);
                let mut best = 0;
                for (j, &v) in r.iter().enumerate().skip(1) {
                    if v > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    fn check_same_shape(&self, op: &'static str, other: &DenseMatrix<S>) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dimension(
                op,
                format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        Ok(())
    }

    fn debug_check_finite(&self, op: &str) {
        debug_assert!(self.is_finite(), "non-finite output of {op}");
    }
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

impl<S: Scalar> DenseMatrix<S> {
    /// `self * other`, inner sum over ascending k (see module docs).
    pub fn matmul(&self, other: &DenseMatrix<S>) -> Result<DenseMatrix<S>> {
        if self.cols != other.rows {
            return Err(Error::dimension(
                "matmul",
                format!(
                    "{}x{} * {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        self.matmul_into(other, &mut out)?;
        Ok(out)
    }

    /// `out = self * other`, reusing `out`'s allocation.
    ///
    /// Blocked over the inner dimension with an 8-wide register tile on
    /// the output; each output element still accumulates over ascending k
    /// with a single accumulator, so results are bit-deterministic and
    /// independent of the blocking.
    pub fn matmul_into(&self, other: &DenseMatrix<S>, out: &mut DenseMatrix<S>) -> Result<()> {
        if self.cols != other.rows {
            return Err(Error::dimension(
                "matmul",
                format!(
                    "{}x{} * {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let (m, p, n) = (self.rows, self.cols, other.cols);
        out.reset(m, n);
        let a = &self.data;
        let b = &other.data;
        let o = &mut out.data;
        let mut kb = 0;
        while kb < p {
            let kend = (kb + KBLOCK).min(p);
            for i in 0..m {
                let arow = &a[i * p + kb..i * p + kend];
                let orow = &mut o[i * n..(i + 1) * n];
                let mut jt = 0;
                while jt + 32 <= n {
                    mm_tile::<S, 32>(arow, b, kb, n, jt, orow);
                    jt += 32;
                }
                while jt + 16 <= n {
                    mm_tile::<S, 16>(arow, b, kb, n, jt, orow);
                    jt += 16;
                }
                while jt + 8 <= n {
                    mm_tile::<S, 8>(arow, b, kb, n, jt, orow);
                    jt += 8;
                }
                while jt + 4 <= n {
                    mm_tile::<S, 4>(arow, b, kb, n, jt, orow);
                    jt += 4;
                }
                while jt + 2 <= n {
                    mm_tile::<S, 2>(arow, b, kb, n, jt, orow);
                    jt += 2;
                }
                if jt < n {
                    mm_tile::<S, 1>(arow, b, kb, n, jt, orow);
                }
            }
            kb = kend;
        }
        out.debug_check_finite("matmul");
        Ok(())
    }

    /// `self * other` where `self` is bit-symmetric. Computes
    /// (otherᵀ · self)ᵀ, which turns a narrow-output product into a
    /// wide-output one the tiled kernel handles at full speed. Bit-equal
    /// to `matmul` because the k-order per output element is unchanged
    /// and self[i,k] == self[k,i] exactly.
    pub fn matmul_sym(&self, other: &DenseMatrix<S>) -> Result<DenseMatrix<S>> {
        debug_assert_eq!(self.rows, self.cols);
        debug_assert!({
            let n = self.rows;
            let mut ok = true;
            'outer: for i in 0..n.min(64) {
                for j in (i + 1)..n.min(64) {
                    if self.data[i * n + j] != self.data[j * n + i] {
                        ok = false;
                        break 'outer;
                    }
                }
            }
            ok
        });
        if other.cols() >= 32 {
            return self.matmul(other);
        }
        let bt = other.transpose();
        let mut tmp = DenseMatrix::zeros(0, 0);
        bt.matmul_into(self, &mut tmp)?;
        Ok(tmp.transpose())
    }

    /// `selfᵀ * other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &DenseMatrix<S>) -> Result<DenseMatrix<S>> {
        if self.rows != other.rows {
            return Err(Error::dimension(
                "matmul_tn",
                format!(
                    "{}x{}ᵀ * {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let (m, p, n) = (self.cols, self.rows, other.cols);
        let mut out = Self::zeros(m, n);
        for k in 0..p {
            let arow = self.row(k);
            let brow = other.row(k);
            for i in 0..m {
                let aki = arow[i];
                let orow = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o = b.mul_add(aki, *o);
                }
            }
        }
        out.debug_check_finite("matmul_tn");
        Ok(out)
    }

    /// `self * otherᵀ` via row-dot products.
    pub fn matmul_nt(&self, other: &DenseMatrix<S>) -> Result<DenseMatrix<S>> {
        if self.cols != other.cols {
            return Err(Error::dimension(
                "matmul_nt",
                format!(
                    "{}x{} * {}x{}ᵀ",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        self.matmul_nt_into(other, &mut out)?;
        Ok(out)
    }

    pub fn matmul_nt_into(&self, other: &DenseMatrix<S>, out: &mut DenseMatrix<S>) -> Result<()> {
        if self.cols != other.cols {
            return Err(Error::dimension(
                "matmul_nt",
                format!(
                    "{}x{} * {}x{}ᵀ",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        // Materializing the transpose once keeps the hot path in the
        // blocked kernel.
        let bt = other.transpose();
        self.matmul_into(&bt, out)
    }

    /// Symmetric Gram product `self * selfᵀ`. Products commute entrywise,
    /// so (i,j) and (j,i) come out bit-identical.
    pub fn gram_into(&self, out: &mut DenseMatrix<S>) {
        let t = self.transpose();
        self.matmul_into(&t, out).expect("shapes agree");
    }
}

/// Inner-dimension block size of the matmul kernel: keeps the active
/// slice of `b` cache-resident while streaming output rows.
const KBLOCK: usize = 64;

/// exp(x) for x <= 0, accurate to ~1e-15 relative, via the standard
/// power-of-two range reduction and a degree-12 Taylor core. Pure
/// branch-free arithmetic (no libm), so results are bit-identical across
/// platforms and the loop over a kernel matrix vectorizes. Inputs below
/// -708 clamp to exp(-708) ~ 3e-308, the edge of the normal range.
#[inline(always)]
pub fn exp_neg_domain(x: f64) -> f64 {
    debug_assert!(x <= 0.0);
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let x = x.max(-708.0);
    let nf = (x * LOG2E).round();
    let r = (x - nf * LN2_HI) - nf * LN2_LO;
    // Taylor: sum r^k / k!, k = 0..=12; |r| <= ln2/2 keeps the tail
    // below 1e-16.
    let mut p = 1.0 / 479_001_600.0; // 1/12!
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    // x >= -708 keeps n >= -1022, inside the normal exponent range.
    p * f64::from_bits(((nf as i64 + 1023) as u64) << 52)
}

/// One register tile of the matmul: accumulate `W` output columns of row
/// `i` over the k-range already sliced into `arow`. Single accumulator
/// per output element, ascending k.
#[inline(always)]
fn mm_tile<S: Scalar, const W: usize>(
    arow: &[S],
    b: &[S],
    kb: usize,
    n: usize,
    jt: usize,
    orow: &mut [S],
) {
    let mut acc = [S::ZERO; W];
    acc.copy_from_slice(&orow[jt..jt + W]);
    for (dk, &aik) in arow.iter().enumerate() {
        let brow = &b[(kb + dk) * n + jt..(kb + dk) * n + jt + W];
        for l in 0..W {
            acc[l] = brow[l].mul_add(aik, acc[l]);
        }
    }
    orow[jt..jt + W].copy_from_slice(&acc);
}

/// Fixed-order dot product: eight independent lane accumulators over
/// ascending k, combined in a fixed tree. Vectorizes without changing the
/// result between runs.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 8;
    let mut acc = [S::ZERO; 8];
    for c in 0..chunks {
        let pa = &a[c * 8..c * 8 + 8];
        let pb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] = pa[l].mul_add(pb[l], acc[l]);
        }
    }
    let mut tail = S::ZERO;
    for k in chunks * 8..a.len() {
        tail = a[k].mul_add(b[k], tail);
    }
    let s01 = acc[0] + acc[1];
    let s23 = acc[2] + acc[3];
    let s45 = acc[4] + acc[5];
    let s67 = acc[6] + acc[7];
    ((s01 + s23) + (s45 + s67)) + tail
}

/// Fixed-order row sum (same lane scheme as [`dot`]).
#[inline]
pub fn row_sum<S: Scalar>(a: &[S]) -> S {
    let chunks = a.len() / 8;
    let mut acc = [S::ZERO; 8];
    for c in 0..chunks {
        let pa = &a[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += pa[l];
        }
    }
    let mut tail = S::ZERO;
    for &v in &a[chunks * 8..] {
        tail += v;
    }
    let s01 = acc[0] + acc[1];
    let s23 = acc[2] + acc[3];
    let s45 = acc[4] + acc[5];
    let s67 = acc[6] + acc[7];
    ((s01 + s23) + (s45 + s67)) + tail
}

// ---------------------------------------------------------------------------
// Neural elementary ops
// ---------------------------------------------------------------------------

impl<S: Scalar> DenseMatrix<S> {
    /// Elementwise max(x, slope*x). `slope` must be in (0, 1).
    pub fn leaky_relu(&self, slope: S) -> DenseMatrix<S> {
        debug_assert!(slope > S::ZERO && slope < S::ONE);
        self.map(|v| if v > S::ZERO { v } else { v * slope })
    }

    /// Gradient of leaky_relu given the pre-activation values.
    pub fn leaky_relu_backward(pre: &DenseMatrix<S>, grad: &DenseMatrix<S>, slope: S) -> Result<DenseMatrix<S>> {
        pre.check_same_shape("leaky_relu_backward", grad)?;
        let data = pre
            .data
            .iter()
            .zip(&grad.data)
            .map(|(&x, &g)| if x > S::ZERO { g } else { g * slope })
            .collect();
        Ok(DenseMatrix {
            rows: pre.rows,
            cols: pre.cols,
            data,
        })
    }

    /// Row-wise softmax with max subtraction.
    pub fn row_softmax(&self) -> DenseMatrix<S> {
        let mut out = self.clone();
        for i in 0..out.rows {
            let row = out.row_mut(i);
            let mut m = row[0];
            for &v in row.iter() {
                m = m.max_s(v);
            }
            let mut z = S::ZERO;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        out.debug_check_finite("row_softmax");
        out
    }

    /// Inverted-dropout mask: entries are 0 with probability p, else
    /// 1/(1-p). Draw order is row-major.
    pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut Rng) -> DenseMatrix<S> {
        assert!((0.0..1.0).contains(&p), "dropout p must be in [0,1)");
        let keep_scale = S::from_f64(1.0 / (1.0 - p));
        let data = (0..rows * cols)
            .map(|_| {
                if rng.next_f64() < p {
                    S::ZERO
                } else {
                    keep_scale
                }
            })
            .collect();
        DenseMatrix { rows, cols, data }
    }

    /// Inverted dropout. Identity when `training` is false or p == 0.
    pub fn dropout(&self, p: f64, rng: &mut Rng, training: bool) -> DenseMatrix<S> {
        if !training || p == 0.0 {
            return self.clone();
        }
        self.dropout_split(p, rng).0
    }

    /// One-pass dropout returning (dropped values, mask). The mask holds
    /// 0 or 1/(1-p), so backward is an elementwise product with it.
    pub fn dropout_split(&self, p: f64, rng: &mut Rng) -> (DenseMatrix<S>, DenseMatrix<S>) {
        assert!((0.0..1.0).contains(&p), "dropout p must be in [0,1)");
        let keep_scale = S::from_f64(1.0 / (1.0 - p));
        let mut dropped = DenseMatrix::zeros(self.rows, self.cols);
        let mut mask = DenseMatrix::zeros(self.rows, self.cols);
        for ((d, m), &x) in dropped
            .data
            .iter_mut()
            .zip(mask.data.iter_mut())
            .zip(&self.data)
        {
            if rng.next_f64() >= p {
                *m = keep_scale;
                *d = x * keep_scale;
            }
        }
        (dropped, mask)
    }

    /// Glorot (Xavier) uniform init with limit sqrt(6/(fan_in+fan_out)),
    /// fan_in = rows, fan_out = cols. Row-major draw order.
    pub fn glorot_init(rows: usize, cols: usize, rng: &mut Rng) -> DenseMatrix<S> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| S::from_f64(rng.uniform(-limit, limit)))
            .collect();
        DenseMatrix { rows, cols, data }
    }

    /// Scale each row to unit L2 norm; all-zero rows stay zero.
    pub fn l2_normalize_rows(&self) -> DenseMatrix<S> {
        let mut out = self.clone();
        for i in 0..out.rows {
            let row = out.row_mut(i);
            let norm = dot(row, row).sqrt();
            if norm > S::ZERO {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
        out
    }

    /// Squared L2 norm of each row.
    pub fn row_sq_norms(&self) -> Vec<S> {
        (0..self.rows)
            .map(|i| {
                let r = self.row(i);
                dot(r, r)
            })
            .collect()
    }
}
