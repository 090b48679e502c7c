//! Optimal-transport flow matching with contrastive vector-field regularisation.
//!
//! Training pulls the velocity predicted under a valid condition `c` toward the
//! straight-line target `u_t = x1 − x0`, while a second evaluation under a mined
//! off-manifold condition `c̃` is pushed away from it, both in magnitude
//! (repulsion hinge) and in direction (cosine hinge).

mod losses;

pub use losses::{cosine_distance, curve_loss, fm_loss, repel_loss, COSINE_EPS};

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::field::VelocityField;
use crate::netgrad::{
    adamw_step, backward_batch, backward_input_batch, build_input, forward_batch, init_params, AdamwConfig, AdamwState,
    MlpParams,
};
use crate::odeint::OdeMethod;
use crate::rng::{stream_rng, Stream};
use crate::scalar::{sign, standard_normal, uniform, unit_uniform, Scalar};
use losses::{curve_with_grad, repel_with_grad};

/// One training tuple on the straight-line probability path.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample<T> {
    pub x0: Array1<T>,
    pub x1: Array1<T>,
    pub c: Array1<T>,
    pub t: T,
    /// `(1 − t)·x0 + t·x1`
    pub x_t: Array1<T>,
    /// `x1 − x0`
    pub u_t: Array1<T>,
}

impl<T: Scalar> FlowSample<T> {
    pub fn new(x0: Array1<T>, x1: Array1<T>, c: Array1<T>, t: T) -> Result<Self> {
        ensure_dim("x0 vs x1", x1.len(), x0.len())?;
        if !x1.iter().chain(x0.iter()).chain(c.iter()).all(|v| v.is_finite()) || !t.is_finite() {
            return Err(Error::NonFinite("flow sample"));
        }
        let mut x_t = x0.mapv(|v| (T::one() - t) * v);
        x_t.scaled_add(t, &x1);
        let u_t = &x1 - &x0;
        Ok(Self { x0, x1, c, t, x_t, u_t })
    }
}

/// Draws `x0 ~ N(0, I)` and `t ~ U[0, 1)` for the pair `(x1, c)`.
pub fn make_flow_sample<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    x1: ArrayView1<T>,
    c: ArrayView1<T>,
) -> Result<FlowSample<T>> {
    let x0 = Array1::from_shape_fn(x1.len(), |_| standard_normal(rng));
    let t = unit_uniform(rng);
    FlowSample::new(x0, x1.to_owned(), c.to_owned(), t)
}

/// A minibatch of flow samples stored as row-stacked matrices.
#[derive(Clone, Debug)]
pub struct FlowBatch<T> {
    pub x0: Array2<T>,
    pub x1: Array2<T>,
    pub c: Array2<T>,
    pub t: Array1<T>,
    pub x_t: Array2<T>,
    pub u_t: Array2<T>,
}

impl<T: Scalar> FlowBatch<T> {
    pub fn new(x0: Array2<T>, x1: Array2<T>, c: Array2<T>, t: Array1<T>) -> Result<Self> {
        let n = x1.nrows();
        if n == 0 {
            return Err(Error::Empty("flow batch"));
        }
        ensure_dim("x0 rows", n, x0.nrows())?;
        ensure_dim("x0 cols", x1.ncols(), x0.ncols())?;
        ensure_dim("condition rows", n, c.nrows())?;
        ensure_dim("time rows", n, t.len())?;
        let mut x_t = x0.clone();
        Zip::from(x_t.rows_mut())
            .and(x1.rows())
            .and(&t)
            .for_each(|mut xt, x1r, &tt| {
                xt.mapv_inplace(|v| (T::one() - tt) * v);
                xt.scaled_add(tt, &x1r);
            });
        let u_t = &x1 - &x0;
        Ok(Self { x0, x1, c, t, x_t, u_t })
    }

    pub fn from_samples(samples: &[FlowSample<T>]) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("flow batch"))?;
        let (d, k) = (first.x1.len(), first.c.len());
        let n = samples.len();
        let mut x0 = Array2::zeros((n, d));
        let mut x1 = Array2::zeros((n, d));
        let mut c = Array2::zeros((n, k));
        let mut t = Array1::zeros(n);
        for (i, s) in samples.iter().enumerate() {
            ensure_dim("sample state", d, s.x1.len())?;
            ensure_dim("sample condition", k, s.c.len())?;
            x0.row_mut(i).assign(&s.x0);
            x1.row_mut(i).assign(&s.x1);
            c.row_mut(i).assign(&s.c);
            t[i] = s.t;
        }
        Self::new(x0, x1, c, t)
    }

    /// Fresh `x0` and `t` for the given pairs.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, x1: Array2<T>, c: Array2<T>) -> Result<Self> {
        let x0 = Array2::from_shape_fn(x1.raw_dim(), |_| standard_normal(rng));
        let t = Array1::from_shape_fn(x1.nrows(), |_| unit_uniform(rng));
        Self::new(x0, x1, c, t)
    }

    pub fn len(&self) -> usize {
        self.x1.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Source of off-manifold conditions for the contrastive terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// Sign-gradient ascent on the pointwise FM loss, projected onto an L∞ ball.
    Pgd,
    /// `c̃ ~ U[−1, 1]^k`, independent of `c`.
    UniformRandom,
    /// No negatives: plain flow matching.
    None,
}

impl fmt::Display for NegativeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegativeMode::Pgd => "pgd",
            NegativeMode::UniformRandom => "uniform_random",
            NegativeMode::None => "none",
        })
    }
}

impl FromStr for NegativeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgd" => Ok(NegativeMode::Pgd),
            "uniform_random" | "uniform" => Ok(NegativeMode::UniformRandom),
            "none" => Ok(NegativeMode::None),
            other => Err(Error::InvalidArgument(format!("unknown negative mode {other:?}"))),
        }
    }
}

/// Hyperparameters of the training loop and of inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_repel: f64,
    pub beta_curve: f64,
    pub margin_r: f64,
    pub margin_c: f64,
    pub pgd_steps: usize,
    pub pgd_eta: f64,
    pub pgd_epsilon: f64,
    pub negative_mode: NegativeMode,
    pub hidden: usize,
    pub depth: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub ode_steps: usize,
    pub ode_method: OdeMethod,
    pub alpha: f64,
}

impl Default for TrainConfig {
    /// Probabilistic-regression settings at full width.
    fn default() -> Self {
        Self {
            lambda_repel: 0.1,
            beta_curve: 0.1,
            margin_r: 1.0,
            margin_c: 0.9,
            pgd_steps: 3,
            pgd_eta: 0.1,
            pgd_epsilon: 0.1,
            negative_mode: NegativeMode::Pgd,
            hidden: 512,
            depth: 3,
            lr: 3e-4,
            weight_decay: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 256,
            iterations: 20_000,
            seed: 0,
            ode_steps: 50,
            ode_method: OdeMethod::Rk4,
            alpha: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lambda_repel >= 0.0 && self.beta_curve >= 0.0) {
            return bad(format!(
                "loss weights must be nonnegative (lambda={}, beta={})",
                self.lambda_repel, self.beta_curve
            ));
        }
        if !(self.margin_r >= 0.0 && self.margin_c >= 0.0) {
            return bad("margins must be nonnegative".into());
        }
        if self.negative_mode == NegativeMode::Pgd && !(self.pgd_epsilon > 0.0) {
            return bad("pgd_epsilon must be positive in pgd mode".into());
        }
        if !(self.pgd_eta >= 0.0) {
            return bad("pgd_eta must be nonnegative".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.batch_size == 0 || self.hidden == 0 || self.depth == 0 || self.ode_steps == 0 {
            return bad("batch_size, hidden, depth and ode_steps must be positive".into());
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamwConfig {
        AdamwConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Whether the contrastive branch contributes to the loss at all.
    pub fn negatives_active(&self) -> bool {
        self.negative_mode != NegativeMode::None && (self.lambda_repel > 0.0 || self.beta_curve > 0.0)
    }
}

/// Batch-averaged loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub fm: T,
    pub repel: T,
    pub curve: T,
    /// `fm + λ·repel + β·curve`
    pub total: T,
}

impl<T: Scalar> LossBreakdown<T> {
    pub fn is_finite(&self) -> bool {
        self.fm.is_finite() && self.repel.is_finite() && self.curve.is_finite() && self.total.is_finite()
    }
}

/// Mines one off-manifold condition per sample. See [`pgd_mine_batch`].
pub fn pgd_mine<T: Scalar>(
    params: &MlpParams<T>,
    sample: &FlowSample<T>,
    steps: usize,
    eta: T,
    epsilon: T,
) -> Result<Array1<T>> {
    let batch = FlowBatch::from_samples(std::slice::from_ref(sample))?;
    let c = pgd_mine_batch(params, &batch, steps, eta, epsilon)?;
    Ok(c.row(0).to_owned())
}

/// `steps` iterations of `c̃ ← clamp(c̃ + η·sgn(∇_c̃ ‖v(x_t, c̃, t) − u_t‖²), c − ε, c + ε)`,
/// starting from `c̃ = c`, evaluated at each sample's own `(x_t, t, u_t)`.
///
/// The result is a plain array: nothing downstream differentiates through it.
pub fn pgd_mine_batch<T: Scalar>(
    params: &MlpParams<T>,
    batch: &FlowBatch<T>,
    steps: usize,
    eta: T,
    epsilon: T,
) -> Result<Array2<T>> {
    let d = params.state_dim();
    let k = params.cond_dim();
    ensure_dim("batch condition width", k, batch.c.ncols())?;
    let mut c_adv = batch.c.clone();
    for _ in 0..steps {
        let cache = forward_batch(params, build_input(batch.x_t.view(), c_adv.view(), batch.t.view())?)?;
        let mut cot = cache.output().to_owned();
        cot -= &batch.u_t;
        cot.mapv_inplace(|v| v + v);
        let g = backward_input_batch(params, &cache, cot.view())?;
        let gc = g.slice(s![.., d..d + k]);
        Zip::from(&mut c_adv).and(&gc).and(&batch.c).for_each(|ca, &gi, &c0| {
            let stepped = *ca + eta * sign(gi);
            *ca = stepped.max(c0 - epsilon).min(c0 + epsilon);
        });
    }
    Ok(c_adv)
}

fn negatives<T: Scalar, R: Rng + ?Sized>(
    params: &MlpParams<T>,
    batch: &FlowBatch<T>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Array2<T>> {
    match cfg.negative_mode {
        NegativeMode::Pgd => pgd_mine_batch(
            params,
            batch,
            cfg.pgd_steps,
            T::lit(cfg.pgd_eta),
            T::lit(cfg.pgd_epsilon),
        ),
        NegativeMode::UniformRandom => Ok(Array2::from_shape_fn(batch.c.raw_dim(), |_| uniform(rng, -1.0, 1.0))),
        NegativeMode::None => Ok(batch.c.clone()),
    }
}

/// Loss and parameter gradients on one minibatch. Slice-of-samples wrapper
/// around [`flow_batch_loss`].
pub fn diflo_batch_loss<T: Scalar, R: Rng + ?Sized>(
    params: &MlpParams<T>,
    batch: &[FlowSample<T>],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(LossBreakdown<T>, MlpParams<T>)> {
    flow_batch_loss(params, &FlowBatch::from_samples(batch)?, cfg, rng)
}

/// Batch-mean of `‖v_c − u‖² + λ·repel + β·curve` and its gradient.
///
/// Gradients flow through both network evaluations (`v_c` and `v_c̃`) but not
/// through the mining of `c̃`. `rng` is only consumed for uniform negatives, and
/// not at all when the contrastive branch is inactive.
pub fn flow_batch_loss<T: Scalar, R: Rng + ?Sized>(
    params: &MlpParams<T>,
    batch: &FlowBatch<T>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(LossBreakdown<T>, MlpParams<T>)> {
    if batch.is_empty() {
        return Err(Error::Empty("flow batch"));
    }
    ensure_dim("batch state width", params.state_dim(), batch.x1.ncols())?;
    ensure_dim("batch condition width", params.cond_dim(), batch.c.ncols())?;
    let n = batch.len();
    let inv_n = T::one() / T::from_usize_lossy(n);
    let lambda = T::lit(cfg.lambda_repel);
    let beta = T::lit(cfg.beta_curve);
    let m_r = T::lit(cfg.margin_r);
    let m_c = T::lit(cfg.margin_c);

    let pos_cache = forward_batch(params, build_input(batch.x_t.view(), batch.c.view(), batch.t.view())?)?;
    let v_pos = pos_cache.output();

    let mut cot_pos = v_pos.to_owned();
    cot_pos -= &batch.u_t;
    let fm_sum = cot_pos.iter().fold(T::zero(), |a, &v| a + v * v);
    cot_pos.mapv_inplace(|v| (v + v) * inv_n);

    let mut loss = LossBreakdown {
        fm: fm_sum * inv_n,
        ..Default::default()
    };

    if !cfg.negatives_active() {
        loss.total = loss.fm;
        let (grads, _) = backward_batch(params, &pos_cache, cot_pos.view())?;
        return Ok((loss, grads));
    }

    let c_neg = negatives(params, batch, cfg, rng)?;
    let neg_cache = forward_batch(params, build_input(batch.x_t.view(), c_neg.view(), batch.t.view())?)?;
    let v_neg = neg_cache.output();
    let mut cot_neg = Array2::zeros(v_neg.raw_dim());

    let (mut repel_sum, mut curve_sum) = (T::zero(), T::zero());
    for i in 0..n {
        let (u, vp, vn) = (batch.u_t.row(i), v_pos.row(i), v_neg.row(i));
        if cfg.lambda_repel > 0.0 {
            let (h, gp, gn) = repel_with_grad(u, vp, vn, m_r);
            repel_sum += h;
            cot_pos.row_mut(i).scaled_add(lambda * inv_n, &gp);
            cot_neg.row_mut(i).scaled_add(lambda * inv_n, &gn);
        } else {
            repel_sum += repel_loss(u, vp, vn, m_r)?;
        }
        if cfg.beta_curve > 0.0 {
            let (h, gp, gn) = curve_with_grad(u, vp, vn, m_c);
            curve_sum += h;
            cot_pos.row_mut(i).scaled_add(beta * inv_n, &gp);
            cot_neg.row_mut(i).scaled_add(beta * inv_n, &gn);
        } else {
            curve_sum += curve_loss(u, vp, vn, m_c)?;
        }
    }
    loss.repel = repel_sum * inv_n;
    loss.curve = curve_sum * inv_n;
    loss.total = loss.fm + lambda * loss.repel + beta * loss.curve;

    let (mut grads, _) = backward_batch(params, &pos_cache, cot_pos.view())?;
    let (g_neg, _) = backward_batch(params, &neg_cache, cot_neg.view())?;
    grads.scaled_add(T::one(), &g_neg);
    Ok((loss, grads))
}

/// Supplies `(x1, c)` training pairs; rows of the two matrices correspond.
pub trait PairSource<T: Scalar> {
    fn state_dim(&self) -> usize;
    fn cond_dim(&self) -> usize;
    fn sample_pairs<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<(Array2<T>, Array2<T>)>;
}

/// A fixed list of pairs, sampled uniformly with replacement.
#[derive(Clone, Debug)]
pub struct PairSet<T> {
    pub x1: Array2<T>,
    pub c: Array2<T>,
}

impl<T: Scalar> PairSet<T> {
    pub fn new(x1: Array2<T>, c: Array2<T>) -> Result<Self> {
        if x1.nrows() == 0 {
            return Err(Error::Empty("pair set"));
        }
        ensure_dim("pair rows", x1.nrows(), c.nrows())?;
        Ok(Self { x1, c })
    }
}

impl<T: Scalar> PairSource<T> for PairSet<T> {
    fn state_dim(&self) -> usize {
        self.x1.ncols()
    }

    fn cond_dim(&self) -> usize {
        self.c.ncols()
    }

    fn sample_pairs<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<(Array2<T>, Array2<T>)> {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.x1.nrows())).collect();
        Ok((self.x1.select(Axis(0), &idx), self.c.select(Axis(0), &idx)))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub params: MlpParams<T>,
    pub history: Vec<LossBreakdown<T>>,
}

/// Runs `cfg.iterations` AdamW steps on freshly drawn minibatches.
///
/// Randomness comes from named streams of `cfg.seed`: `Init` for the weights,
/// `Batch` for pairs, `x0` and `t`, `Negatives` for uniform negatives.
pub fn train<T: Scalar, S: PairSource<T>>(source: &S, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with_progress(source, cfg, |_, _| {})
}

/// [`train`] with a callback invoked after every iteration.
pub fn train_with_progress<T: Scalar, S: PairSource<T>>(
    source: &S,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, &LossBreakdown<T>),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let mut init_rng = stream_rng(cfg.seed, Stream::Init);
    let mut batch_rng = stream_rng(cfg.seed, Stream::Batch);
    let mut neg_rng = stream_rng(cfg.seed, Stream::Negatives);
    let mut params = init_params(
        &mut init_rng,
        source.state_dim(),
        source.cond_dim(),
        cfg.hidden,
        cfg.depth,
    )?;
    let mut opt = AdamwState::new(&params);
    let adam = cfg.adamw();
    let mut history = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let (x1, c) = source.sample_pairs(&mut batch_rng, cfg.batch_size)?;
        let batch = FlowBatch::sample(&mut batch_rng, x1, c)?;
        let (loss, grads) = flow_batch_loss(&params, &batch, cfg, &mut neg_rng)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration,
                fm: loss.fm.to_f64_lossy(),
                repel: loss.repel.to_f64_lossy(),
                curve: loss.curve.to_f64_lossy(),
            });
        }
        adamw_step(&mut params, &grads, &mut opt, &adam)?;
        progress(iteration, &loss);
        history.push(loss);
    }
    Ok(TrainOutcome { params, history })
}

/// Monte-Carlo estimate of `E_{x0, t} ‖v(x_t, c) − (x1 − x0)‖²`, averaged over
/// the given pairs with `n_mc` draws of `(x0, t)` each.
pub fn transport_energy<T: Scalar, F: VelocityField<T> + ?Sized, R: Rng + ?Sized>(
    field: &F,
    x1: ArrayView2<T>,
    c: ArrayView2<T>,
    n_mc: usize,
    rng: &mut R,
) -> Result<T> {
    if x1.nrows() == 0 {
        return Err(Error::Empty("transport energy pairs"));
    }
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    ensure_dim("pair rows", x1.nrows(), c.nrows())?;
    let idx: Vec<usize> = (0..x1.nrows()).flat_map(|i| std::iter::repeat_n(i, n_mc)).collect();
    let batch = FlowBatch::sample(rng, x1.select(Axis(0), &idx), c.select(Axis(0), &idx))?;
    let v = field.velocity(batch.x_t.view(), batch.c.view(), batch.t.view())?;
    let total = Zip::from(&v)
        .and(&batch.u_t)
        .fold(T::zero(), |a, &p, &q| a + (p - q) * (p - q));
    Ok(total / T::from_usize_lossy(idx.len()))
}

#[cfg(test)]
mod tests;
