//! Fixed-step integration of a learned flow, trajectory-divergence scoring and
//! the Hutchinson likelihood baseline.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::field::VelocityField;
use crate::rng::{indexed_rng, Stream};
use crate::scalar::{standard_normal, Scalar};

/// Rows per work unit in the batched scorers. Work units never straddle
/// different conditions' random streams, so results do not depend on the
/// worker count.
pub const SCORING_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeMethod {
    Euler,
    Rk4,
}

impl fmt::Display for OdeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OdeMethod::Euler => "euler",
            OdeMethod::Rk4 => "rk4",
        })
    }
}

impl FromStr for OdeMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(OdeMethod::Euler),
            "rk4" => Ok(OdeMethod::Rk4),
            other => Err(Error::InvalidArgument(format!("unknown integrator {other:?}"))),
        }
    }
}

/// States at the uniform grid `t_i = i / N`, `i = 0..=N`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    /// `(N + 1) × D`; row 0 is `x0`, row N the generated sample.
    pub states: Array2<T>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn new(times: Vec<T>, states: Array2<T>) -> Result<Self> {
        ensure_dim("trajectory length", times.len(), states.nrows())?;
        if times.len() < 2 {
            return Err(Error::InvalidArgument("a trajectory needs at least two points".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("trajectory times must increase strictly".into()));
        }
        Ok(Self { times, states })
    }

    /// Uniform time grid over `[0, 1]` with `states.nrows() − 1` steps.
    pub fn uniform(states: Array2<T>) -> Result<Self> {
        let n = states.nrows().saturating_sub(1);
        Self::new(time_grid(n), states)
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn x0(&self) -> ArrayView1<'_, T> {
        self.states.row(0)
    }

    pub fn x1_hat(&self) -> ArrayView1<'_, T> {
        self.states.row(self.states.nrows() - 1)
    }
}

fn time_grid<T: Scalar>(n: usize) -> Vec<T> {
    let nn = T::from_usize_lossy(n.max(1));
    (0..=n).map(|i| T::from_usize_lossy(i) / nn).collect()
}

/// Integrates a batch of initial states from `t = 0` to `t = 1` in `steps`
/// uniform steps. Returns `steps + 1` snapshots, each `B × D`.
pub fn integrate_batch<T: Scalar, F: VelocityField<T> + ?Sized>(
    field: &F,
    x0: ArrayView2<T>,
    c: ArrayView2<T>,
    steps: usize,
    method: OdeMethod,
) -> Result<Vec<Array2<T>>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("need at least one integration step".into()));
    }
    ensure_dim("state width", field.state_dim(), x0.ncols())?;
    ensure_dim("condition width", field.cond_dim(), c.ncols())?;
    ensure_dim("condition rows", x0.nrows(), c.nrows())?;
    let b = x0.nrows();
    let dt = T::one() / T::from_usize_lossy(steps);
    let half = dt / T::lit(2.0);
    let tvec = |t: T| Array1::from_elem(b, t);
    let mut x = x0.to_owned();
    let mut snapshots = Vec::with_capacity(steps + 1);
    snapshots.push(x.clone());
    for i in 0..steps {
        let t = T::from_usize_lossy(i) * dt;
        match method {
            OdeMethod::Euler => {
                let v = field.velocity(x.view(), c, tvec(t).view())?;
                x.scaled_add(dt, &v);
            }
            OdeMethod::Rk4 => {
                let k1 = field.velocity(x.view(), c, tvec(t).view())?;
                let k2 = field.velocity((&x + &(&k1 * half)).view(), c, tvec(t + half).view())?;
                let k3 = field.velocity((&x + &(&k2 * half)).view(), c, tvec(t + half).view())?;
                let k4 = field.velocity((&x + &(&k3 * dt)).view(), c, tvec(t + dt).view())?;
                let sixth = dt / T::lit(6.0);
                let two = T::lit(2.0);
                Zip::from(&mut x)
                    .and(&k1)
                    .and(&k2)
                    .and(&k3)
                    .and(&k4)
                    .for_each(|xv, &a, &b2, &c3, &d| *xv += sixth * (a + two * b2 + two * c3 + d));
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState { step: i + 1 });
        }
        snapshots.push(x.clone());
    }
    Ok(snapshots)
}

/// Integrates one initial state and records every step.
pub fn integrate<T: Scalar, F: VelocityField<T> + ?Sized>(
    field: &F,
    x0: ArrayView1<T>,
    c: ArrayView1<T>,
    steps: usize,
    method: OdeMethod,
) -> Result<Trajectory<T>> {
    let snaps = integrate_batch(field, x0.insert_axis(Axis(0)), c.insert_axis(Axis(0)), steps, method)?;
    let mut states = Array2::zeros((steps + 1, x0.len()));
    for (i, s) in snaps.iter().enumerate() {
        states.row_mut(i).assign(&s.row(0));
    }
    Trajectory::uniform(states)
}

/// Discrete divergence-from-optimal-trajectory score:
/// `Σ_i (1/D) Σ_d |x̂_{t_i,d} − ((1 − t_i) x0_d + t_i x̂_{1,d})|`.
pub fn dot_score<T: Scalar>(traj: &Trajectory<T>) -> Result<T> {
    if traj.states.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "DOT needs at least two trajectory points".into(),
        ));
    }
    let x0 = traj.x0();
    let x1 = traj.x1_hat();
    let inv_d = T::one() / T::from_usize_lossy(x0.len());
    let mut score = T::zero();
    for (state, &t) in traj.states.rows().into_iter().zip(&traj.times) {
        let gap = Zip::from(&state).and(&x0).and(&x1).fold(T::zero(), |acc, &x, &a, &b| {
            acc + (x - ((T::one() - t) * a + t * b)).abs()
        });
        score += gap * inv_d;
    }
    Ok(score)
}

/// Row-wise DOT over snapshots produced by [`integrate_batch`].
fn dot_scores_batch<T: Scalar>(snapshots: &[Array2<T>]) -> Array1<T> {
    let n = snapshots.len() - 1;
    let x0 = &snapshots[0];
    let x1 = &snapshots[n];
    let b = x0.nrows();
    let inv_d = T::one() / T::from_usize_lossy(x0.ncols());
    let nn = T::from_usize_lossy(n);
    let mut scores = Array1::<T>::zeros(b);
    for (i, snap) in snapshots.iter().enumerate() {
        let t = T::from_usize_lossy(i) / nn;
        for r in 0..b {
            let gap = Zip::from(&snap.row(r))
                .and(&x0.row(r))
                .and(&x1.row(r))
                .fold(T::zero(), |acc, &x, &a, &bb| {
                    acc + (x - ((T::one() - t) * a + t * bb)).abs()
                });
            scores[r] += gap * inv_d;
        }
    }
    scores
}

/// Samples `x0 ~ N(0, I)`, integrates under `c` and scores the trajectory.
pub fn score_condition<T: Scalar, F: VelocityField<T> + ?Sized, R: Rng + ?Sized>(
    field: &F,
    c: ArrayView1<T>,
    steps: usize,
    method: OdeMethod,
    rng: &mut R,
) -> Result<(Array1<T>, T)> {
    let x0 = Array1::from_shape_fn(field.state_dim(), |_| standard_normal(rng));
    let traj = integrate(field, x0.view(), c, steps, method)?;
    let s = dot_score(&traj)?;
    Ok((traj.x1_hat().to_owned(), s))
}

/// Generated samples and DOT scores for many conditions.
#[derive(Clone, Debug)]
pub struct ScoredBatch<T> {
    /// Generated `x̂1`, one row per condition.
    pub samples: Array2<T>,
    pub scores: Array1<T>,
}

fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .step_by(SCORING_CHUNK)
        .map(|s| (s, (s + SCORING_CHUNK).min(n)))
        .collect()
}

fn initial_states<T: Scalar>(seed: u64, stream: Stream, first: usize, rows: usize, d: usize) -> Array2<T> {
    let mut x0 = Array2::zeros((rows, d));
    for (r, mut row) in x0.rows_mut().into_iter().enumerate() {
        let mut rng = indexed_rng(seed, stream, (first + r) as u64);
        row.iter_mut().for_each(|v| *v = standard_normal(&mut rng));
    }
    x0
}

/// Scores every row of `conds`. The `x0` of condition `i` is drawn from
/// `indexed_rng(seed, Stream::Eval, i)`, so results are reproducible and
/// independent of batching and thread count. Chunks run on the current rayon pool.
pub fn score_conditions<T: Scalar, F: VelocityField<T> + ?Sized>(
    field: &F,
    conds: ArrayView2<T>,
    steps: usize,
    method: OdeMethod,
    seed: u64,
) -> Result<ScoredBatch<T>> {
    ensure_dim("condition width", field.cond_dim(), conds.ncols())?;
    let d = field.state_dim();
    let n = conds.nrows();
    let parts: Vec<Result<(Array2<T>, Array1<T>)>> = chunk_ranges(n)
        .into_par_iter()
        .map(|(a, b)| {
            let x0 = initial_states(seed, Stream::Eval, a, b - a, d);
            let snaps = integrate_batch(field, x0.view(), conds.slice(ndarray::s![a..b, ..]), steps, method)?;
            let scores = dot_scores_batch(&snaps);
            Ok((snaps.last().unwrap().clone(), scores))
        })
        .collect();
    let mut samples = Array2::zeros((n, d));
    let mut scores = Array1::zeros(n);
    for ((a, b), part) in chunk_ranges(n).into_iter().zip(parts) {
        let (s, sc) = part?;
        samples.slice_mut(ndarray::s![a..b, ..]).assign(&s);
        scores.slice_mut(ndarray::s![a..b]).assign(&sc);
    }
    Ok(ScoredBatch { samples, scores })
}

/// Mean of `n_samples` generated endpoints for condition `c`.
pub fn predict_mean<T: Scalar, F: VelocityField<T> + ?Sized, R: Rng + ?Sized>(
    field: &F,
    c: ArrayView1<T>,
    n_samples: usize,
    steps: usize,
    method: OdeMethod,
    rng: &mut R,
) -> Result<Array1<T>> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let d = field.state_dim();
    let x0 = Array2::from_shape_fn((n_samples, d), |_| standard_normal(rng));
    let conds = c
        .insert_axis(Axis(0))
        .broadcast((n_samples, c.len()))
        .unwrap()
        .to_owned();
    let snaps = integrate_batch(field, x0.view(), conds.view(), steps, method)?;
    Ok(mean_rows(snaps.last().unwrap()))
}

fn mean_rows<T: Scalar>(m: &Array2<T>) -> Array1<T> {
    let mut acc = Array1::zeros(m.ncols());
    for row in m.rows() {
        acc += &row;
    }
    acc / T::from_usize_lossy(m.nrows())
}

/// [`predict_mean`] for many conditions; sample `j` of condition `i` uses
/// `indexed_rng(seed, Stream::Predict, i)`.
pub fn predict_means<T: Scalar, F: VelocityField<T> + ?Sized>(
    field: &F,
    conds: ArrayView2<T>,
    n_samples: usize,
    steps: usize,
    method: OdeMethod,
    seed: u64,
) -> Result<Array2<T>> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let d = field.state_dim();
    let n = conds.nrows();
    let per_chunk = (SCORING_CHUNK / n_samples).max(1);
    let ranges: Vec<(usize, usize)> = (0..n).step_by(per_chunk).map(|s| (s, (s + per_chunk).min(n))).collect();
    let parts: Vec<Result<Array2<T>>> = ranges
        .par_iter()
        .map(|&(a, b)| {
            let rows = (b - a) * n_samples;
            let mut x0 = Array2::zeros((rows, d));
            let mut cc = Array2::zeros((rows, conds.ncols()));
            for i in a..b {
                let mut rng = indexed_rng(seed, Stream::Predict, i as u64);
                for j in 0..n_samples {
                    let r = (i - a) * n_samples + j;
                    x0.row_mut(r).iter_mut().for_each(|v| *v = standard_normal(&mut rng));
                    cc.row_mut(r).assign(&conds.row(i));
                }
            }
            let snaps = integrate_batch(field, x0.view(), cc.view(), steps, method)?;
            let end = snaps.last().unwrap();
            let mut out = Array2::zeros((b - a, d));
            for i in 0..(b - a) {
                let block = end.slice(ndarray::s![i * n_samples..(i + 1) * n_samples, ..]);
                out.row_mut(i).assign(&mean_rows(&block.to_owned()));
            }
            Ok(out)
        })
        .collect();
    let mut means = Array2::zeros((n, d));
    for ((a, b), part) in ranges.into_iter().zip(parts) {
        means.slice_mut(ndarray::s![a..b, ..]).assign(&part?);
    }
    Ok(means)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LikelihoodEstimate<T> {
    /// `log N(x_0; 0, I) − divergence_integral`
    pub log_p: T,
    pub n_probes: usize,
    /// Left-endpoint quadrature of the estimated `∫₀¹ tr ∂v/∂x dt` along the path.
    pub divergence_integral: T,
}

fn standard_normal_log_density<T: Scalar>(x: ArrayView1<T>) -> T {
    let d = T::from_usize_lossy(x.len());
    let half = T::lit(0.5);
    -half * d * (T::lit(2.0) * T::PI()).ln() - half * x.dot(&x)
}

fn rademacher<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    if rng.random::<bool>() {
        T::one()
    } else {
        -T::one()
    }
}

/// Log-likelihood of `x1` under the flow, by Euler integration backwards from
/// `t = 1` to `t = 0` with a Rademacher-Hutchinson divergence estimate.
pub fn log_likelihood<T: Scalar, F: VelocityField<T> + ?Sized, R: Rng + ?Sized>(
    field: &F,
    x1: ArrayView1<T>,
    c: ArrayView1<T>,
    steps: usize,
    n_probes: usize,
    rng: &mut R,
) -> Result<LikelihoodEstimate<T>> {
    let mut rngs = vec![rng];
    let est = log_likelihood_rows(
        field,
        x1.insert_axis(Axis(0)),
        c.insert_axis(Axis(0)),
        steps,
        n_probes,
        &mut rngs,
    )?;
    Ok(est[0])
}

fn log_likelihood_rows<T: Scalar, F: VelocityField<T> + ?Sized, R: Rng + ?Sized>(
    field: &F,
    x1: ArrayView2<T>,
    c: ArrayView2<T>,
    steps: usize,
    n_probes: usize,
    rngs: &mut [&mut R],
) -> Result<Vec<LikelihoodEstimate<T>>> {
    if steps == 0 || n_probes == 0 {
        return Err(Error::InvalidArgument("steps and n_probes must be at least 1".into()));
    }
    ensure_dim("state width", field.state_dim(), x1.ncols())?;
    ensure_dim("condition rows", x1.nrows(), c.nrows())?;
    let (b, d) = x1.dim();
    let dt = T::one() / T::from_usize_lossy(steps);
    let mut x = x1.to_owned();
    let mut integral = Array1::<T>::zeros(b);
    for i in 0..steps {
        let t = T::one() - T::from_usize_lossy(i) * dt;
        let mut probes: Vec<Array2<T>> = (0..n_probes).map(|_| Array2::zeros((b, d))).collect();
        for (r, rng) in rngs.iter_mut().enumerate() {
            for z in probes.iter_mut() {
                z.row_mut(r).iter_mut().for_each(|v| *v = rademacher(&mut **rng));
            }
        }
        let (v, div) = field.velocity_and_probe(x.view(), c, Array1::from_elem(b, t).view(), &probes)?;
        integral.scaled_add(dt, &div);
        x.scaled_add(-dt, &v);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState { step: i + 1 });
        }
    }
    Ok((0..b)
        .map(|r| LikelihoodEstimate {
            log_p: standard_normal_log_density(x.row(r)) - integral[r],
            n_probes,
            divergence_integral: integral[r],
        })
        .collect())
}

/// [`log_likelihood`] for many rows; probes for row `i` come from
/// `indexed_rng(seed, Stream::Probes, i)`.
pub fn log_likelihoods<T: Scalar, F: VelocityField<T> + ?Sized>(
    field: &F,
    x1: ArrayView2<T>,
    c: ArrayView2<T>,
    steps: usize,
    n_probes: usize,
    seed: u64,
) -> Result<Vec<LikelihoodEstimate<T>>> {
    ensure_dim("condition rows", x1.nrows(), c.nrows())?;
    let parts: Vec<Result<Vec<LikelihoodEstimate<T>>>> = chunk_ranges(x1.nrows())
        .into_par_iter()
        .map(|(a, b)| {
            let mut owned: Vec<_> = (a..b).map(|i| indexed_rng(seed, Stream::Probes, i as u64)).collect();
            let mut refs: Vec<&mut _> = owned.iter_mut().collect();
            log_likelihood_rows(
                field,
                x1.slice(ndarray::s![a..b, ..]),
                c.slice(ndarray::s![a..b, ..]),
                steps,
                n_probes,
                &mut refs,
            )
        })
        .collect();
    let mut out = Vec::with_capacity(x1.nrows());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Square grid of conditions over `[lo, hi]²`, endpoints included.
/// Row-major: cell `(i, j)` sits at `(lo + j·h, lo + i·h)`.
pub fn grid_conditions<T: Scalar>(bounds: (f64, f64), resolution: usize) -> Result<Array2<T>> {
    if resolution < 2 {
        return Err(Error::InvalidArgument("grid resolution must be at least 2".into()));
    }
    let (lo, hi) = bounds;
    let h = (hi - lo) / (resolution - 1) as f64;
    let mut grid = Array2::zeros((resolution * resolution, 2));
    for i in 0..resolution {
        for j in 0..resolution {
            let r = i * resolution + j;
            grid[[r, 0]] = T::lit(if j + 1 == resolution { hi } else { lo + j as f64 * h });
            grid[[r, 1]] = T::lit(if i + 1 == resolution { hi } else { lo + i as f64 * h });
        }
    }
    Ok(grid)
}

/// DOT scores over a `resolution × resolution` grid of 2-D conditions, all
/// cells sharing a single `x0` drawn from `seed`.
pub fn landscape_grid<T: Scalar, F: VelocityField<T> + ?Sized>(
    field: &F,
    bounds: (f64, f64),
    resolution: usize,
    steps: usize,
    method: OdeMethod,
    seed: u64,
) -> Result<Array2<T>> {
    if field.cond_dim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "landscape needs 2-D conditions, field has {}",
            field.cond_dim()
        )));
    }
    let conds = grid_conditions::<T>(bounds, resolution)?;
    let d = field.state_dim();
    let shared = initial_states::<T>(seed, Stream::Landscape, 0, 1, d);
    let parts: Vec<Result<Array1<T>>> = chunk_ranges(conds.nrows())
        .into_par_iter()
        .map(|(a, b)| {
            let x0 = shared.broadcast((b - a, d)).unwrap().to_owned();
            let snaps = integrate_batch(field, x0.view(), conds.slice(ndarray::s![a..b, ..]), steps, method)?;
            Ok(dot_scores_batch(&snaps))
        })
        .collect();
    let mut flat = Vec::with_capacity(conds.nrows());
    for p in parts {
        flat.extend(p?);
    }
    Ok(Array2::from_shape_vec((resolution, resolution), flat).expect("grid shape"))
}
