//! Pointwise losses on velocity vectors and their gradients.

use ndarray::{Array1, ArrayView1, Zip};

use crate::error::{ensure_dim, Result};
use crate::scalar::Scalar;

/// Norms below this are treated as zero by the cosine distance.
pub const COSINE_EPS: f64 = 1e-12;

/// Squared L2 error `‖v̂ − u‖²`, summed over dimensions.
pub fn fm_loss<T: Scalar>(v_hat: ArrayView1<T>, u_t: ArrayView1<T>) -> Result<T> {
    ensure_dim("fm_loss operands", v_hat.len(), u_t.len())?;
    Ok(Zip::from(&v_hat)
        .and(&u_t)
        .fold(T::zero(), |acc, &a, &b| acc + (a - b) * (a - b)))
}

fn euclidean<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> T {
    Zip::from(&a)
        .and(&b)
        .fold(T::zero(), |acc, &x, &y| acc + (x - y) * (x - y))
        .sqrt()
}

/// `1 − a·b / (‖a‖‖b‖)`, in `[0, 2]`. Returns 1 when either norm is below
/// [`COSINE_EPS`].
pub fn cosine_distance<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> T {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    let eps = T::lit(COSINE_EPS);
    if na < eps || nb < eps || a.len() != b.len() {
        return T::one();
    }
    let cos = (a.dot(&b) / (na * nb)).max(-T::one()).min(T::one());
    T::one() - cos
}

/// Gradient of `cosine_distance(u, v)` with respect to `v`.
pub(crate) fn cosine_distance_grad<T: Scalar>(u: ArrayView1<T>, v: ArrayView1<T>) -> Array1<T> {
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    let eps = T::lit(COSINE_EPS);
    if nu < eps || nv < eps {
        return Array1::zeros(v.len());
    }
    let uv = u.dot(&v);
    // d/dv [-(u·v)/(|u||v|)] = -u/(|u||v|) + (u·v) v / (|u| |v|^3)
    let a = -T::one() / (nu * nv);
    let b = uv / (nu * nv * nv * nv);
    let mut g = u.mapv(|x| x * a);
    g.scaled_add(b, &v);
    g
}

/// `max(‖u − v_pos‖ − ‖u − v_neg‖ + m_r, 0)` with unsquared Euclidean distances.
pub fn repel_loss<T: Scalar>(u_t: ArrayView1<T>, v_pos: ArrayView1<T>, v_neg: ArrayView1<T>, margin: T) -> Result<T> {
    ensure_dim("repel_loss positive", u_t.len(), v_pos.len())?;
    ensure_dim("repel_loss negative", u_t.len(), v_neg.len())?;
    Ok((euclidean(u_t, v_pos) - euclidean(u_t, v_neg) + margin).max(T::zero()))
}

/// `max(d_cos(u, v_pos) − d_cos(u, v_neg) + m_c, 0)`.
pub fn curve_loss<T: Scalar>(u_t: ArrayView1<T>, v_pos: ArrayView1<T>, v_neg: ArrayView1<T>, margin: T) -> Result<T> {
    ensure_dim("curve_loss positive", u_t.len(), v_pos.len())?;
    ensure_dim("curve_loss negative", u_t.len(), v_neg.len())?;
    Ok((cosine_distance(u_t, v_pos) - cosine_distance(u_t, v_neg) + margin).max(T::zero()))
}

/// Value and gradients `(∂/∂v_pos, ∂/∂v_neg)` of [`repel_loss`].
pub(crate) fn repel_with_grad<T: Scalar>(
    u: ArrayView1<T>,
    v_pos: ArrayView1<T>,
    v_neg: ArrayView1<T>,
    margin: T,
) -> (T, Array1<T>, Array1<T>) {
    let d_pos = euclidean(u, v_pos);
    let d_neg = euclidean(u, v_neg);
    let h = d_pos - d_neg + margin;
    let mut g_pos = Array1::zeros(u.len());
    let mut g_neg = Array1::zeros(u.len());
    if h <= T::zero() {
        return (T::zero(), g_pos, g_neg);
    }
    if d_pos > T::zero() {
        Zip::from(&mut g_pos)
            .and(&v_pos)
            .and(&u)
            .for_each(|g, &v, &u| *g = (v - u) / d_pos);
    }
    if d_neg > T::zero() {
        Zip::from(&mut g_neg)
            .and(&v_neg)
            .and(&u)
            .for_each(|g, &v, &u| *g = -(v - u) / d_neg);
    }
    (h, g_pos, g_neg)
}

/// Value and gradients `(∂/∂v_pos, ∂/∂v_neg)` of [`curve_loss`].
pub(crate) fn curve_with_grad<T: Scalar>(
    u: ArrayView1<T>,
    v_pos: ArrayView1<T>,
    v_neg: ArrayView1<T>,
    margin: T,
) -> (T, Array1<T>, Array1<T>) {
    let h = cosine_distance(u, v_pos) - cosine_distance(u, v_neg) + margin;
    if h <= T::zero() {
        return (T::zero(), Array1::zeros(u.len()), Array1::zeros(u.len()));
    }
    let g_pos = cosine_distance_grad(u, v_pos);
    let g_neg = -cosine_distance_grad(u, v_neg);
    (h, g_pos, g_neg)
}
