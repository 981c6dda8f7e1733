//! Joint objective (masked cross-entropy + λ·GLR), Adam with classic
//! L2-in-gradient weight decay, and the step learning-rate schedule.

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, Scalar};
use serde::{Deserialize, Serialize};

/// Reduction over the labeled rows. The default is mean, which keeps λ's
/// meaning stable when the label ratio changes; raw sum is selectable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Mean,
    Sum,
}

/// Masked cross-entropy via log-sum-exp.
///
/// Returns the loss and d(loss)/d(logits): (softmax - onehot) / |mask| on
/// masked rows (un-divided for [`Reduction::Sum`]), zero elsewhere.
pub fn cross_entropy_reduced<S: Scalar>(
    logits: &DenseMatrix<S>,
    labels: &[usize],
    mask: &[bool],
    reduction: Reduction,
) -> Result<(S, DenseMatrix<S>)> {
    let (n, c) = logits.shape();
    if labels.len() != n || mask.len() != n {
        return Err(Error::dimension(
            "cross_entropy",
            format!(
                "{n} logit rows, {} labels, {} mask entries",
                labels.len(),
                mask.len()
            ),
        ));
    }
    let m = mask.iter().filter(|&&b| b).count();
    if m == 0 {
        return Err(Error::EmptyMask);
    }
    let inv = match reduction {
        Reduction::Mean => S::from_f64(1.0 / m as f64),
        Reduction::Sum => S::ONE,
    };

    let mut loss = S::ZERO;
    let mut d = DenseMatrix::zeros(n, c);
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let y = labels[i];
        if y >= c {
            return Err(Error::Index { id: y, n: c });
        }
        let row = logits.row(i);
        let mut mx = row[0];
        for &v in row {
            mx = mx.max_s(v);
        }
        let mut z = S::ZERO;
        for &v in row {
            z += (v - mx).exp();
        }
        let lse = mx + z.ln();
        loss += (lse - row[y]) * inv;
        let drow = d.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            drow[j] = (v - mx).exp() / z * inv;
        }
        drow[y] -= inv;
    }
    Ok((loss, d))
}

/// Mean masked cross-entropy (the default reduction).
pub fn cross_entropy<S: Scalar>(
    logits: &DenseMatrix<S>,
    labels: &[usize],
    mask: &[bool],
) -> Result<(S, DenseMatrix<S>)> {
    cross_entropy_reduced(logits, labels, mask, Reduction::Mean)
}

/// The joint objective: cross-entropy plus λ times the GLR accumulated
/// over layers.
pub fn joint_loss<S: Scalar>(
    logits: &DenseMatrix<S>,
    labels: &[usize],
    mask: &[bool],
    glr_total: S,
    lambda: S,
) -> Result<S> {
    let (ce, _) = cross_entropy(logits, labels, mask)?;
    Ok(ce + lambda * glr_total)
}

/// Fraction of masked rows whose argmax matches the label.
pub fn masked_accuracy<S: Scalar>(
    logits: &DenseMatrix<S>,
    labels: &[usize],
    mask: &[bool],
) -> f64 {
    let pred = logits.argmax_rows();
    let mut hit = 0usize;
    let mut tot = 0usize;
    for i in 0..labels.len() {
        if mask[i] {
            tot += 1;
            if pred[i] == labels[i] {
                hit += 1;
            }
        }
    }
    if tot == 0 {
        0.0
    } else {
        hit as f64 / tot as f64
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Multiplicative factor applied to the learning rate every
    /// `decay_period` epochs.
    pub decay_factor: f64,
    pub decay_period: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
            decay_factor: 0.5,
            decay_period: 100,
        }
    }
}

impl AdamConfig {
    /// Step schedule: lr · factor^floor(epoch / period).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        if self.decay_period == 0 {
            return self.lr;
        }
        self.lr * self.decay_factor.powi((epoch / self.decay_period) as i32)
    }
}

/// Per-parameter first/second moments plus the step counter. Parameters
/// are identified by their position in the slice handed to
/// [`AdamState::step`], which must stay in one fixed order for the run.
pub struct AdamState<S: Scalar> {
    cfg: AdamConfig,
    m: Vec<DenseMatrix<S>>,
    v: Vec<DenseMatrix<S>>,
    /// Whether weight decay applies to each parameter.
    decay: Vec<bool>,
    step_count: u64,
}

impl<S: Scalar> AdamState<S> {
    /// `params` gives (rows, cols, weight_decay_applies) per parameter.
    pub fn new(cfg: AdamConfig, params: &[(usize, usize, bool)]) -> Self {
        let m = params
            .iter()
            .map(|&(r, c, _)| DenseMatrix::zeros(r, c))
            .collect();
        let v = params
            .iter()
            .map(|&(r, c, _)| DenseMatrix::zeros(r, c))
            .collect();
        let decay = params.iter().map(|&(_, _, d)| d).collect();
        AdamState {
            cfg,
            m,
            v,
            decay,
            step_count: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update with the given effective learning rate (after schedule).
    /// Weight decay is the classic Adam-with-L2 form: grad + wd·param goes
    /// into the moment updates.
    pub fn step(
        &mut self,
        params: &mut [&mut DenseMatrix<S>],
        grads: &[&DenseMatrix<S>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dimension(
                "adam_step",
                format!(
                    "{} params / {} grads for {} optimizer slots",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = S::from_f64(self.cfg.beta1);
        let b2 = S::from_f64(self.cfg.beta2);
        let one_m_b1 = S::from_f64(1.0 - self.cfg.beta1);
        let one_m_b2 = S::from_f64(1.0 - self.cfg.beta2);
        let bc1 = S::from_f64(1.0 - self.cfg.beta1.powi(t));
        let bc2 = S::from_f64(1.0 - self.cfg.beta2.powi(t));
        let eps = S::from_f64(self.cfg.eps);
        let lr_s = S::from_f64(lr);

        for idx in 0..params.len() {
            let p = &mut *params[idx];
            let g = grads[idx];
            if p.shape() != g.shape() || p.shape() != self.m[idx].shape() {
                return Err(Error::dimension(
                    "adam_step",
                    format!(
                        "param {:?} vs grad {:?} vs moment {:?} at slot {idx}",
                        p.shape(),
                        g.shape(),
                        self.m[idx].shape()
                    ),
                ));
            }
            let wd = if self.decay[idx] {
                S::from_f64(self.cfg.weight_decay)
            } else {
                S::ZERO
            };
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let pd = p.data_mut();
            for i in 0..pd.len() {
                let geff = g.data()[i] + wd * pd[i];
                m[i] = b1 * m[i] + one_m_b1 * geff;
                v[i] = b2 * v[i] + one_m_b2 * geff * geff;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                pd[i] -= lr_s * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    type M = DenseMatrix<f64>;

    #[test]
    fn ce_uniform_logits_is_ln_c() {
        let logits = M::zeros(3, 7);
        let labels = vec![0, 3, 6];
        let mask = vec![true, true, true];
        let (loss, _) = cross_entropy(&logits, &labels, &mask).unwrap();
        assert!((loss - (7.0_f64).ln()).abs() < 1e-12);
        assert!((loss - 1.9459).abs() < 1e-4);
    }

    #[test]
    fn ce_peaked_logits_go_to_zero() {
        let mut logits = M::zeros(2, 4);
        *logits.at_mut(0, 1) = 200.0;
        *logits.at_mut(1, 2) = 200.0;
        let (loss, _) = cross_entropy(&logits, &[1, 2], &[true, true]).unwrap();
        assert!(loss >= 0.0 && loss < 1e-12);
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let logits = M::glorot_init(3, 4, &mut rng).scale(4.0);
        let labels = vec![2, 0, 3];
        let mask = vec![true, false, true];
        let (_, d) = cross_entropy(&logits, &labels, &mask).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..4 {
                let mut lp = logits.clone();
                *lp.at_mut(i, j) += h;
                let (fp, _) = cross_entropy(&lp, &labels, &mask).unwrap();
                *lp.at_mut(i, j) -= 2.0 * h;
                let (fm, _) = cross_entropy(&lp, &labels, &mask).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    (d.at(i, j) - fd).abs() < 1e-7,
                    "logit grad ({i},{j}): {} vs {}",
                    d.at(i, j),
                    fd
                );
            }
        }
        // unmasked rows get zero gradient
        for j in 0..4 {
            assert_eq!(d.at(1, j), 0.0);
        }
    }

    #[test]
    fn ce_empty_mask_errors() {
        let logits = M::zeros(2, 3);
        assert!(matches!(
            cross_entropy(&logits, &[0, 1], &[false, false]),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn joint_loss_cases() {
        let logits = M::zeros(2, 7);
        let labels = vec![1, 2];
        let mask = vec![true, true];
        let (ce, _) = cross_entropy(&logits, &labels, &mask).unwrap();
        // λ=0 -> exactly cross-entropy
        let j0 = joint_loss(&logits, &labels, &mask, 123.0, 0.0).unwrap();
        assert_eq!(j0, ce);
        // λ=1e-4 with glr_total=100 adds 0.01
        let j = joint_loss(&logits, &labels, &mask, 100.0, 1e-4).unwrap();
        assert!((j - (ce + 0.01)).abs() < 1e-12);
        // monotone in glr_total when λ>0
        let j2 = joint_loss(&logits, &labels, &mask, 200.0, 1e-4).unwrap();
        assert!(j2 > j);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = AdamState::<f64>::new(cfg, &[(2, 2, true)]);
        let mut p = M::filled(2, 2, 3.0);
        let g = M::zeros(2, 2);
        st.step(&mut [&mut p], &[&g], 0.1).unwrap();
        assert!(p.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        // With |g| >> eps, the first update is ~ -lr·sign(g).
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = AdamState::<f64>::new(cfg, &[(1, 2, false)]);
        let mut p = M::zeros(1, 2);
        let g = M::from_rows(&[&[5.0, -0.3]]);
        st.step(&mut [&mut p], &[&g], 0.01).unwrap();
        assert!((p.at(0, 0) + 0.01).abs() < 1e-6);
        assert!((p.at(0, 1) - 0.01).abs() < 1e-6);
    }

    #[test]
    fn adam_scale_invariance_at_step_one() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut s1 = AdamState::<f64>::new(cfg.clone(), &[(1, 3, false)]);
        let mut s2 = AdamState::<f64>::new(cfg, &[(1, 3, false)]);
        let mut p1 = M::zeros(1, 3);
        let mut p2 = M::zeros(1, 3);
        let g = M::from_rows(&[&[0.7, -1.3, 2.2]]);
        let g_big = g.scale(1000.0);
        s1.step(&mut [&mut p1], &[&g], 0.05).unwrap();
        s2.step(&mut [&mut p2], &[&g_big], 0.05).unwrap();
        for (a, b) in p1.data().iter().zip(p2.data()) {
            assert!((a - b).abs() / a.abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn lr_schedule_halves_every_period() {
        let cfg = AdamConfig::default(); // lr 0.1, decay 0.5 every 100
        assert_eq!(cfg.lr_at_epoch(0), 0.1);
        assert_eq!(cfg.lr_at_epoch(99), 0.1);
        assert_eq!(cfg.lr_at_epoch(100), 0.05);
        assert_eq!(cfg.lr_at_epoch(250), 0.025);
    }

    #[test]
    fn weight_decay_moves_params_without_gradient() {
        let cfg = AdamConfig {
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut st = AdamState::<f64>::new(cfg, &[(1, 1, true)]);
        let mut p = M::filled(1, 1, 2.0);
        let g = M::zeros(1, 1);
        st.step(&mut [&mut p], &[&g], 0.01).unwrap();
        assert!(p.at(0, 0) < 2.0);
    }
}
