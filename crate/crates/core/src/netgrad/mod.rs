//! Dense SiLU MLP with hand-written reverse-mode gradients.
//!
//! The network maps the concatenation `[x_t | c | t]` to a velocity with the
//! dimension of `x_t`. Hidden layers use SiLU; the output layer is affine.
//! Everything operates on row-major batches: one row per sample.

mod adamw;
mod checkpoint;

pub use adamw::{adamw_step, AdamwConfig, AdamwState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};

use ndarray::{linalg::general_mat_mul, s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{ensure_dim, Error, Result};
use crate::scalar::{silu, silu_prime, Scalar};

/// Weights and biases of the velocity network. Also used as the container for
/// parameter gradients and optimizer moments, which share its shape.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    /// One `out × in` matrix per layer.
    pub layer_weights: Vec<Array2<T>>,
    pub layer_biases: Vec<Array1<T>>,
    /// `widths[0]` is the input width, `widths[last]` the output width.
    pub widths: Vec<usize>,
}

impl<T: Scalar> MlpParams<T> {
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "widths must have at least two positive entries, got {widths:?}"
            )));
        }
        let layer_weights = widths.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect();
        let layer_biases = widths[1..].iter().map(|&w| Array1::zeros(w)).collect();
        Ok(Self {
            layer_weights,
            layer_biases,
            widths: widths.to_vec(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.widths).expect("widths already validated")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    /// Dimension of the state `x_t` (and of the predicted velocity).
    pub fn state_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn cond_dim(&self) -> usize {
        self.input_dim() - self.state_dim() - 1
    }

    pub fn num_params(&self) -> usize {
        self.layer_weights.iter().map(|w| w.len()).sum::<usize>()
            + self.layer_biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Checks the shape and finiteness invariants.
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        ensure_dim("layer count", self.widths.len() - 1, self.layer_weights.len())?;
        ensure_dim("bias count", self.widths.len() - 1, self.layer_biases.len())?;
        if self.input_dim() < self.state_dim() + 1 {
            return Err(Error::InvalidArgument(format!(
                "input width {} cannot hold a state of width {} plus time",
                self.input_dim(),
                self.state_dim()
            )));
        }
        for (l, (w, b)) in self.layer_weights.iter().zip(&self.layer_biases).enumerate() {
            ensure_dim("weight rows", self.widths[l + 1], w.nrows())?;
            ensure_dim("weight cols", self.widths[l], w.ncols())?;
            ensure_dim("bias length", self.widths[l + 1], b.len())?;
            if !w.iter().chain(b.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite("network parameters"));
            }
        }
        Ok(())
    }

    /// Flattens weights then biases, layer by layer.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.layer_weights.iter().zip(&self.layer_biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    /// Inverse of [`MlpParams::to_flat`] for a network with these widths.
    pub fn with_flat(&self, flat: &[T]) -> Result<Self> {
        ensure_dim("flat parameter vector", self.num_params(), flat.len())?;
        let mut out = self.zeros_like();
        let mut it = flat.iter().copied();
        for (w, b) in out.layer_weights.iter_mut().zip(out.layer_biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = it.next().unwrap());
            b.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        Ok(out)
    }

    /// `self += alpha * other`, elementwise.
    pub fn scaled_add(&mut self, alpha: T, other: &Self) {
        for (w, ow) in self.layer_weights.iter_mut().zip(&other.layer_weights) {
            w.scaled_add(alpha, ow);
        }
        for (b, ob) in self.layer_biases.iter_mut().zip(&other.layer_biases) {
            b.scaled_add(alpha, ob);
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.to_flat()
            .into_iter()
            .zip(other.to_flat())
            .fold(T::zero(), |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn cast<U: Scalar>(&self) -> MlpParams<U> {
        MlpParams {
            layer_weights: self
                .layer_weights
                .iter()
                .map(|w| w.mapv(|v| U::lit(v.to_f64_lossy())))
                .collect(),
            layer_biases: self
                .layer_biases
                .iter()
                .map(|b| b.mapv(|v| U::lit(v.to_f64_lossy())))
                .collect(),
            widths: self.widths.clone(),
        }
    }
}

/// He-uniform initialisation (bound `sqrt(6 / fan_in)`) with zero biases.
///
/// `depth` counts hidden layers, so the network has `depth + 1` affine layers.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    state_dim: usize,
    cond_dim: usize,
    hidden: usize,
    depth: usize,
) -> Result<MlpParams<T>> {
    if state_dim == 0 || hidden == 0 || depth == 0 {
        return Err(Error::InvalidArgument(format!(
            "state_dim={state_dim}, hidden={hidden}, depth={depth} must all be positive"
        )));
    }
    let mut widths = vec![state_dim + cond_dim + 1];
    widths.extend(std::iter::repeat_n(hidden, depth));
    widths.push(state_dim);
    let mut params = MlpParams::zeros(&widths)?;
    for w in params.layer_weights.iter_mut() {
        let bound = (6.0 / w.ncols() as f64).sqrt();
        w.iter_mut().for_each(|v| *v = T::lit(rng.random_range(-bound..bound)));
    }
    Ok(params)
}

/// Activations recorded by a forward pass, one row per batch element.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    widths: Vec<usize>,
    /// `acts[0]` is the network input, `acts[l]` the post-SiLU output of hidden layer `l`.
    acts: Vec<Array2<T>>,
    /// Pre-activations of every layer; the last entry is the network output.
    pre: Vec<Array2<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.acts[0].nrows()
    }

    pub fn n_layers(&self) -> usize {
        self.pre.len()
    }

    pub fn input(&self) -> ArrayView2<'_, T> {
        self.acts[0].view()
    }

    pub fn output(&self) -> ArrayView2<'_, T> {
        self.pre.last().unwrap().view()
    }

    pub fn pre_activations(&self) -> &[Array2<T>] {
        &self.pre
    }

    pub fn post_activations(&self) -> &[Array2<T>] {
        &self.acts[1..]
    }

    pub fn into_output(mut self) -> Array2<T> {
        self.pre.pop().unwrap()
    }

    fn check(&self, params: &MlpParams<T>, cotangent: &ArrayView2<T>) -> Result<()> {
        if self.widths != params.widths {
            return Err(Error::StaleCache(format!(
                "cache widths {:?} differ from parameter widths {:?}",
                self.widths, params.widths
            )));
        }
        for (l, w) in params.layer_weights.iter().enumerate() {
            if self.acts[l].ncols() != w.ncols() {
                return Err(Error::StaleCache(format!("layer {l} input shape")));
            }
        }
        ensure_dim("cotangent rows", self.batch_size(), cotangent.nrows())?;
        ensure_dim("cotangent cols", params.state_dim(), cotangent.ncols())?;
        Ok(())
    }
}

/// Assembles the network input `[x | c | t]` row by row.
pub fn build_input<T: Scalar>(x: ArrayView2<T>, c: ArrayView2<T>, t: ArrayView1<T>) -> Result<Array2<T>> {
    let n = x.nrows();
    ensure_dim("condition rows", n, c.nrows())?;
    ensure_dim("time rows", n, t.len())?;
    let (dx, dc) = (x.ncols(), c.ncols());
    let mut input = Array2::zeros((n, dx + dc + 1));
    input.slice_mut(s![.., ..dx]).assign(&x);
    input.slice_mut(s![.., dx..dx + dc]).assign(&c);
    input.column_mut(dx + dc).assign(&t);
    Ok(input)
}

/// Batched forward pass over rows of `input`.
pub fn forward_batch<T: Scalar>(params: &MlpParams<T>, input: Array2<T>) -> Result<ForwardCache<T>> {
    ensure_dim("network input width", params.input_dim(), input.ncols())?;
    if !input.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("network input"));
    }
    let n = input.nrows();
    let n_layers = params.n_layers();
    let mut acts = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers);
    acts.push(input);
    for (l, (w, b)) in params.layer_weights.iter().zip(&params.layer_biases).enumerate() {
        let mut z = b.broadcast((n, b.len())).unwrap().to_owned();
        general_mat_mul(T::one(), &acts[l], &w.t(), T::one(), &mut z);
        if l + 1 < n_layers {
            acts.push(z.mapv(silu));
        }
        pre.push(z);
    }
    Ok(ForwardCache {
        widths: params.widths.clone(),
        acts,
        pre,
    })
}

/// Forward pass for a single `(x_t, c, t)`.
pub fn forward<T: Scalar>(
    params: &MlpParams<T>,
    x_t: ArrayView1<T>,
    c: ArrayView1<T>,
    t: T,
) -> Result<(Array1<T>, ForwardCache<T>)> {
    ensure_dim("state", params.state_dim(), x_t.len())?;
    ensure_dim("condition", params.cond_dim(), c.len())?;
    let input = build_input(x_t.insert_axis(Axis(0)), c.insert_axis(Axis(0)), ndarray::aview1(&[t]))?;
    let cache = forward_batch(params, input)?;
    let out = cache.output().row(0).to_owned();
    Ok((out, cache))
}

/// Reverse pass for `sum_rows <cotangent_row, output_row>`.
///
/// Returns parameter gradients (summed over the batch) and the gradient with
/// respect to each row of the network input.
pub fn backward_batch<T: Scalar>(
    params: &MlpParams<T>,
    cache: &ForwardCache<T>,
    cotangent: ArrayView2<T>,
) -> Result<(MlpParams<T>, Array2<T>)> {
    cache.check(params, &cotangent)?;
    let mut grads = params.zeros_like();
    let mut delta = cotangent.to_owned();
    for l in (0..params.n_layers()).rev() {
        general_mat_mul(
            T::one(),
            &delta.t(),
            &cache.acts[l],
            T::zero(),
            &mut grads.layer_weights[l],
        );
        grads.layer_biases[l] = delta.sum_axis(Axis(0));
        delta = propagate(params, cache, l, &delta);
    }
    Ok((grads, delta))
}

/// Input gradient only; skips the parameter-gradient products.
pub fn backward_input_batch<T: Scalar>(
    params: &MlpParams<T>,
    cache: &ForwardCache<T>,
    cotangent: ArrayView2<T>,
) -> Result<Array2<T>> {
    cache.check(params, &cotangent)?;
    let mut delta = cotangent.to_owned();
    for l in (0..params.n_layers()).rev() {
        delta = propagate(params, cache, l, &delta);
    }
    Ok(delta)
}

/// Maps `dL/dz_l` to `dL/dz_{l-1}` (or to `dL/dinput` when `l == 0`).
fn propagate<T: Scalar>(params: &MlpParams<T>, cache: &ForwardCache<T>, l: usize, delta: &Array2<T>) -> Array2<T> {
    let w = &params.layer_weights[l];
    let mut dh = Array2::zeros((delta.nrows(), w.ncols()));
    general_mat_mul(T::one(), delta, w, T::zero(), &mut dh);
    if l > 0 {
        Zip::from(&mut dh)
            .and(&cache.pre[l - 1])
            .for_each(|d, &z| *d *= silu_prime(z));
    }
    dh
}

/// Single-sample reverse pass. See [`backward_batch`].
pub fn backward<T: Scalar>(
    params: &MlpParams<T>,
    cache: &ForwardCache<T>,
    cotangent: ArrayView1<T>,
) -> Result<(MlpParams<T>, Array1<T>)> {
    let (grads, input_grad) = backward_batch(params, cache, cotangent.insert_axis(Axis(0)))?;
    Ok((grads, input_grad.row(0).to_owned()))
}

/// `zᵀ (∂v/∂x_t) z` with `c` and `t` held fixed.
pub fn vjp_state<T: Scalar>(
    params: &MlpParams<T>,
    x_t: ArrayView1<T>,
    c: ArrayView1<T>,
    t: T,
    probe: ArrayView1<T>,
) -> Result<T> {
    ensure_dim("probe", params.state_dim(), probe.len())?;
    let (_, cache) = forward(params, x_t, c, t)?;
    let g = backward_input_batch(params, &cache, probe.insert_axis(Axis(0)))?;
    let row: ArrayView1<T> = g.slice(s![0, ..probe.len()]);
    Ok(row.dot(&probe))
}

/// Row-wise `z_iᵀ (∂v/∂x)(row i) z_i`, reusing one forward pass for all probe sets.
///
/// Returns the velocities and, per row, the mean contraction over `probes`.
pub fn probe_contractions<T: Scalar>(
    params: &MlpParams<T>,
    x: ArrayView2<T>,
    c: ArrayView2<T>,
    t: ArrayView1<T>,
    probes: &[Array2<T>],
) -> Result<(Array2<T>, Array1<T>)> {
    let cache = forward_batch(params, build_input(x, c, t)?)?;
    let d = params.state_dim();
    let mut acc = Array1::<T>::zeros(x.nrows());
    for z in probes {
        let g = backward_input_batch(params, &cache, z.view())?;
        let gx = g.slice(s![.., ..d]);
        Zip::from(&mut acc)
            .and(gx.rows())
            .and(z.rows())
            .for_each(|a, gr, zr| *a += gr.dot(&zr));
    }
    if !probes.is_empty() {
        let k = T::from_usize_lossy(probes.len());
        acc.mapv_inplace(|v| v / k);
    }
    Ok((cache.into_output(), acc))
}
