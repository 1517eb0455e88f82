//! Logistic-regression head, trained alone on fixed market vectors or jointly
//! with the attention fusion block.
//!
//! Both trainers run full-batch gradient descent on mean binary cross-entropy
//! plus `(lambda / 2) * |w|^2`. A step that would raise the loss is rejected and
//! retried at half the learning rate, so the emitted loss trace never increases.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{attention_fuse, fusion_backward, FusionConfig, FusionParams, Pass};
use crate::ingest::Direction;
use crate::scalar::Scalar;
use crate::seeds::mask_seed;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the log.
pub const PROB_CLAMP: f64 = 1e-12;

/// Step halvings allowed before the trainer declares convergence.
const MAX_HALVINGS: u32 = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LRHead<T> {
    pub w: Array1<T>,
    pub b: T,
}

impl<T: Scalar> LRHead<T> {
    pub fn zeros(dim: usize) -> Self {
        LRHead {
            w: Array1::zeros(dim),
            b: T::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// L2 penalty on `w` (never on `b`).
    pub l2_lambda: f64,
    pub max_epochs: usize,
    /// Stop once an accepted step lowers the loss by less than this.
    pub tolerance: f64,
    /// Seeds dropout masks in joint training.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            l2_lambda: 1e-4,
            max_epochs: 500,
            tolerance: 1e-7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    // negated comparisons so NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.tolerance > 0.0) || !(self.l2_lambda >= 0.0) {
            return Err(Error::Validation(
                "learning_rate and tolerance must be positive, l2_lambda non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub fn predict_proba<T: Scalar>(head: &LRHead<T>, m: ArrayView1<'_, T>) -> Result<T> {
    if m.len() != head.dim() {
        return Err(Error::Shape(format!(
            "head expects {} inputs, got {}",
            head.dim(),
            m.len()
        )));
    }
    Ok(sigmoid(head.w.dot(&m) + head.b))
}

/// `Up` iff the probability is at least 0.5.
pub fn predict<T: Scalar>(head: &LRHead<T>, m: ArrayView1<'_, T>) -> Result<Direction> {
    Ok(Direction::from_bool(predict_proba(head, m)? >= T::of(0.5)))
}

#[derive(Debug, Clone)]
pub struct LossGrad<T> {
    pub loss: T,
    pub dw: Array1<T>,
    pub db: T,
    /// Gradient with respect to each sample's market vector (rows follow the batch).
    pub dm: Array2<T>,
}

fn bce<T: Scalar>(p: T, y: T) -> T {
    let eps = T::of(PROB_CLAMP);
    let p_c = p.max(eps).min(T::one() - eps);
    let q_c = (T::one() - p).max(eps).min(T::one() - eps);
    -(y * p_c.ln() + (T::one() - y) * q_c.ln())
}

fn l2_term<T: Scalar>(w: &Array1<T>, lambda: T) -> T {
    lambda * T::of(0.5) * w.dot(w)
}

fn mean_loss<T: Scalar>(head: &LRHead<T>, ms: ArrayView2<'_, T>, ys: &[Direction], lambda: T) -> T {
    let n = T::of(ms.nrows() as f64);
    let data = ms
        .outer_iter()
        .zip(ys)
        .fold(T::zero(), |acc, (m, y)| acc + bce(sigmoid(head.w.dot(&m) + head.b), y.indicator()));
    data / n + l2_term(&head.w, lambda)
}

/// Mean cross-entropy plus L2 and its exact gradients. `ms` is batch x d.
pub fn loss_and_grad<T: Scalar>(
    head: &LRHead<T>,
    ms: ArrayView2<'_, T>,
    ys: &[Direction],
    l2_lambda: T,
) -> Result<LossGrad<T>> {
    if ms.nrows() == 0 {
        return Err(Error::Precondition("empty batch".into()));
    }
    if ms.nrows() != ys.len() || ms.ncols() != head.dim() {
        return Err(Error::Shape(format!(
            "batch {}x{} with {} labels for a head of dim {}",
            ms.nrows(),
            ms.ncols(),
            ys.len(),
            head.dim()
        )));
    }
    let n = T::of(ms.nrows() as f64);
    let mut loss = T::zero();
    let mut dw = Array1::zeros(head.dim());
    let mut db = T::zero();
    let mut dm = Array2::zeros(ms.raw_dim());
    for ((m, y), mut dmi) in ms.outer_iter().zip(ys).zip(dm.outer_iter_mut()) {
        let y = y.indicator::<T>();
        let p = sigmoid(head.w.dot(&m) + head.b);
        loss += bce(p, y);
        let r = (p - y) / n;
        dw.scaled_add(r, &m);
        db += r;
        dmi.assign(&(&head.w * r));
    }
    dw.scaled_add(l2_lambda, &head.w);
    Ok(LossGrad {
        loss: loss / n + l2_term(&head.w, l2_lambda),
        dw,
        db,
        dm,
    })
}

fn require_both_classes(ys: &[Direction]) -> Result<()> {
    let ups = ys.iter().filter(|y| y.is_up()).count();
    if ups == 0 || ups == ys.len() {
        return Err(Error::Precondition(
            "training data must contain both classes".into(),
        ));
    }
    Ok(())
}

/// Monotone gradient descent with step halving.
///
/// `eval` scores parameters deterministically, `grad` returns a gradient at
/// the current parameters for the given epoch, `step` applies `params - lr * grad`.
fn descend<P, G, T: Scalar>(
    init: P,
    cfg: &TrainConfig,
    eval: impl Fn(&P) -> Result<T>,
    grad: impl Fn(&P, usize) -> Result<G>,
    step: impl Fn(&P, &G, T) -> P,
) -> Result<(P, Vec<T>)> {
    let mut cur = init;
    let mut loss = eval(&cur)?;
    if !loss.is_finite() {
        return Err(Error::Divergence { epoch: 0 });
    }
    let mut trace = vec![loss];
    let mut lr = T::of(cfg.learning_rate);
    let mut halvings = 0u32;
    'epochs: for epoch in 1..=cfg.max_epochs {
        let g = grad(&cur, epoch)?;
        let (cand, cand_loss) = loop {
            let cand = step(&cur, &g, lr);
            let l = eval(&cand)?;
            if !l.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            if l <= loss {
                break (cand, l);
            }
            halvings += 1;
            if halvings > MAX_HALVINGS {
                break 'epochs;
            }
            lr *= T::of(0.5);
        };
        let decrease = loss - cand_loss;
        cur = cand;
        loss = cand_loss;
        trace.push(loss);
        if decrease < T::of(cfg.tolerance) {
            break;
        }
    }
    Ok((cur, trace))
}

#[derive(Debug, Clone)]
pub struct TrainedHead<T> {
    pub head: LRHead<T>,
    pub loss_trace: Vec<T>,
}

/// Fits a head on fixed market vectors, starting from `init`.
pub fn train_head<T: Scalar>(
    ms: ArrayView2<'_, T>,
    ys: &[Direction],
    init: LRHead<T>,
    cfg: &TrainConfig,
) -> Result<TrainedHead<T>> {
    cfg.validate()?;
    require_both_classes(ys)?;
    let lambda = T::of(cfg.l2_lambda);
    // shape check up front
    loss_and_grad(&init, ms, ys, lambda)?;
    let (head, loss_trace) = descend(
        init,
        cfg,
        |h| Ok(mean_loss(h, ms, ys, lambda)),
        |h, _| loss_and_grad(h, ms, ys, lambda),
        |h, g, lr| LRHead {
            w: &h.w - &(&g.dw * lr),
            b: h.b - g.db * lr,
        },
    )?;
    Ok(TrainedHead { head, loss_trace })
}

/// One attention-mode sample: scaled numeric vector and its text tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSample<T> {
    pub x: Array1<T>,
    /// n_tokens x d_t.
    pub tokens: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct JointModel<T> {
    pub fusion: FusionParams<T>,
    pub head: LRHead<T>,
}

#[derive(Debug, Clone)]
pub struct TrainedJoint<T> {
    pub model: JointModel<T>,
    pub loss_trace: Vec<T>,
}

struct JointGrad<T> {
    fusion: FusionParams<T>,
    dw: Array1<T>,
    db: T,
}

/// Market vectors for every sample in inference mode. Rows follow `samples`.
pub fn fuse_batch<T: Scalar>(
    samples: &[AttentionSample<T>],
    fusion: &FusionParams<T>,
    fcfg: &FusionConfig,
) -> Result<Array2<T>> {
    let rows = samples
        .par_iter()
        .map(|s| attention_fuse(s.x.view(), s.tokens.view(), fusion, fcfg, Pass::Inference).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Array2::zeros((samples.len(), fcfg.d_out));
    for (mut dst, row) in out.outer_iter_mut().zip(rows) {
        dst.assign(&row);
    }
    Ok(out)
}

/// Trains the fusion block and head together under one objective. Gradients
/// are taken with dropout active; acceptance of a step is judged on the
/// dropout-free loss.
pub fn train_joint<T: Scalar>(
    samples: &[AttentionSample<T>],
    ys: &[Direction],
    init: JointModel<T>,
    fcfg: &FusionConfig,
    cfg: &TrainConfig,
) -> Result<TrainedJoint<T>> {
    cfg.validate()?;
    fcfg.validate()?;
    require_both_classes(ys)?;
    if samples.len() != ys.len() {
        return Err(Error::Shape(format!(
            "{} samples but {} labels",
            samples.len(),
            ys.len()
        )));
    }
    init.fusion.check_shapes(fcfg)?;
    if init.head.dim() != fcfg.d_out {
        return Err(Error::Shape("head dimension differs from d_out".into()));
    }
    let lambda = T::of(cfg.l2_lambda);
    let n = T::of(samples.len() as f64);

    let eval = |m: &JointModel<T>| -> Result<T> {
        let ms = fuse_batch(samples, &m.fusion, fcfg)?;
        Ok(mean_loss(&m.head, ms.view(), ys, lambda))
    };
    let grad = |m: &JointModel<T>, epoch: usize| -> Result<JointGrad<T>> {
        let per_sample = samples
            .par_iter()
            .zip(ys.par_iter())
            .enumerate()
            .map(|(i, (s, y))| {
                let pass = Pass::Training {
                    mask_seed: mask_seed(cfg.seed, epoch, i),
                };
                let (mv, cache) = attention_fuse(s.x.view(), s.tokens.view(), &m.fusion, fcfg, pass)?;
                let p = sigmoid(m.head.w.dot(&mv) + m.head.b);
                let r = (p - y.indicator::<T>()) / n;
                let dm = &m.head.w * r;
                let g = fusion_backward(&cache, dm.view(), &m.fusion, fcfg)?;
                Ok((g.params, mv * r, r))
            })
            .collect::<Result<Vec<_>>>()?;
        // fixed reduction order: by sample index
        let mut acc = JointGrad {
            fusion: FusionParams::zeros(fcfg),
            dw: Array1::zeros(m.head.dim()),
            db: T::zero(),
        };
        for (gf, dw, db) in per_sample {
            acc.fusion.scaled_add(T::one(), &gf);
            acc.dw += &dw;
            acc.db += db;
        }
        acc.dw.scaled_add(lambda, &m.head.w);
        Ok(acc)
    };
    let step = |m: &JointModel<T>, g: &JointGrad<T>, lr: T| {
        let mut fusion = m.fusion.clone();
        fusion.scaled_add(-lr, &g.fusion);
        JointModel {
            fusion,
            head: LRHead {
                w: &m.head.w - &(&g.dw * lr),
                b: m.head.b - g.db * lr,
            },
        }
    };
    let (model, loss_trace) = descend(init, cfg, eval, grad, step)?;
    Ok(TrainedJoint { model, loss_trace })
}

/// Predicted directions for each row of `ms`.
pub fn predict_batch<T: Scalar>(head: &LRHead<T>, ms: ArrayView2<'_, T>) -> Result<Vec<Direction>> {
    ms.axis_iter(Axis(0)).map(|m| predict(head, m)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn proba_examples() {
        let h = LRHead { w: array![0.0, 0.0], b: 0.0 };
        assert_eq!(predict_proba(&h, array![3.0, -7.0].view()).unwrap(), 0.5);
        let h = LRHead { w: array![1.0], b: 0.0 };
        assert_eq!(predict_proba(&h, array![0.0].view()).unwrap(), 0.5);
        assert!(predict_proba(&h, array![50.0].view()).unwrap() >= 1.0 - 1e-15);
        let h = LRHead { w: array![2.0], b: -1.0 };
        assert_eq!(predict_proba(&h, array![0.5].view()).unwrap(), 0.5);
        assert_eq!(predict(&h, array![0.5].view()).unwrap(), Direction::Up);
        assert!(predict_proba(&h, array![0.5, 1.0].view()).is_err());
    }

    #[test]
    fn loss_at_zero_is_ln2() {
        let h = LRHead::<f64>::zeros(2);
        let ms = array![[1.0, 2.0], [-3.0, 0.5], [0.0, 0.0]];
        let ys = [Direction::Up, Direction::Down, Direction::Up];
        let lg = loss_and_grad(&h, ms.view(), &ys, 0.0).unwrap();
        assert!((lg.loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(loss_and_grad(&h, Array2::zeros((0, 2)).view(), &[], 0.0).is_err());
    }

    #[test]
    fn single_sample_bias_gradient() {
        let h = LRHead::<f64>::zeros(1);
        let lg = loss_and_grad(&h, array![[0.7]].view(), &[Direction::Up], 0.0).unwrap();
        assert_eq!(lg.db, -0.5);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let ms = array![[1.0], [-1.0]];
        let ys = [Direction::Up, Direction::Down];
        let init = LRHead { w: array![0.25], b: -0.1 };
        let cfg = TrainConfig { max_epochs: 0, ..TrainConfig::default() };
        let out = train_head(ms.view(), &ys, init.clone(), &cfg).unwrap();
        assert_eq!(out.head, init);
        assert_eq!(out.loss_trace.len(), 1);
    }

    #[test]
    fn single_class_rejected() {
        let ms = array![[1.0], [2.0]];
        let ys = [Direction::Up, Direction::Up];
        let err = train_head(ms.view(), &ys, LRHead::zeros(1), &TrainConfig::default());
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn huge_step_backs_off_and_trace_is_monotone() {
        let ms = array![[1.0, 0.3], [-1.0, 0.2], [0.5, -0.4], [-0.2, 0.9]];
        let ys = [Direction::Up, Direction::Down, Direction::Up, Direction::Down];
        let cfg = TrainConfig { learning_rate: 1e4, ..TrainConfig::default() };
        let out = train_head(ms.view(), &ys, LRHead::zeros(2), &cfg).unwrap();
        assert!(out.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
