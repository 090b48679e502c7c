//! Velocity fields `v(x, c, t)` consumed by the integrators and diagnostics.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use crate::error::{ensure_dim, Result};
use crate::netgrad::{build_input, forward_batch, probe_contractions, MlpParams};
use crate::scalar::Scalar;

/// A (possibly learned) conditional velocity field evaluated row-wise on batches.
pub trait VelocityField<T: Scalar>: Sync {
    fn state_dim(&self) -> usize;
    fn cond_dim(&self) -> usize;

    /// Velocities for each row `(x_i, c_i, t_i)`.
    fn velocity(&self, x: ArrayView2<T>, c: ArrayView2<T>, t: ArrayView1<T>) -> Result<Array2<T>>;

    /// Velocities plus, for every row, the mean over `probes` of `z_iᵀ (∂v/∂x) z_i`.
    fn velocity_and_probe(
        &self,
        x: ArrayView2<T>,
        c: ArrayView2<T>,
        t: ArrayView1<T>,
        probes: &[Array2<T>],
    ) -> Result<(Array2<T>, Array1<T>)>;
}

impl<T: Scalar> VelocityField<T> for MlpParams<T> {
    fn state_dim(&self) -> usize {
        MlpParams::state_dim(self)
    }

    fn cond_dim(&self) -> usize {
        MlpParams::cond_dim(self)
    }

    fn velocity(&self, x: ArrayView2<T>, c: ArrayView2<T>, t: ArrayView1<T>) -> Result<Array2<T>> {
        Ok(forward_batch(self, build_input(x, c, t)?)?.into_output())
    }

    fn velocity_and_probe(
        &self,
        x: ArrayView2<T>,
        c: ArrayView2<T>,
        t: ArrayView1<T>,
        probes: &[Array2<T>],
    ) -> Result<(Array2<T>, Array1<T>)> {
        probe_contractions(self, x, c, t, probes)
    }
}

/// `v ≡ k`, independent of state, condition and time.
#[derive(Clone, Debug)]
pub struct ConstantField<T> {
    pub velocity: Array1<T>,
    pub cond_dim: usize,
}

impl<T: Scalar> VelocityField<T> for ConstantField<T> {
    fn state_dim(&self) -> usize {
        self.velocity.len()
    }

    fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    fn velocity(&self, x: ArrayView2<T>, _c: ArrayView2<T>, _t: ArrayView1<T>) -> Result<Array2<T>> {
        ensure_dim("state", self.velocity.len(), x.ncols())?;
        Ok(self
            .velocity
            .broadcast((x.nrows(), self.velocity.len()))
            .unwrap()
            .to_owned())
    }

    fn velocity_and_probe(
        &self,
        x: ArrayView2<T>,
        c: ArrayView2<T>,
        t: ArrayView1<T>,
        _probes: &[Array2<T>],
    ) -> Result<(Array2<T>, Array1<T>)> {
        Ok((self.velocity(x, c, t)?, Array1::zeros(x.nrows())))
    }
}

/// `v(x) = A x` for a fixed square matrix `A`.
#[derive(Clone, Debug)]
pub struct LinearField<T> {
    pub matrix: Array2<T>,
    pub cond_dim: usize,
}

impl<T: Scalar> LinearField<T> {
    pub fn scaled_identity(a: T, dim: usize, cond_dim: usize) -> Self {
        Self {
            matrix: Array2::eye(dim) * a,
            cond_dim,
        }
    }
}

impl<T: Scalar> VelocityField<T> for LinearField<T> {
    fn state_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    fn velocity(&self, x: ArrayView2<T>, _c: ArrayView2<T>, _t: ArrayView1<T>) -> Result<Array2<T>> {
        ensure_dim("state", self.matrix.ncols(), x.ncols())?;
        Ok(x.dot(&self.matrix.t()))
    }

    fn velocity_and_probe(
        &self,
        x: ArrayView2<T>,
        c: ArrayView2<T>,
        t: ArrayView1<T>,
        probes: &[Array2<T>],
    ) -> Result<(Array2<T>, Array1<T>)> {
        let v = self.velocity(x, c, t)?;
        let mut acc = Array1::<T>::zeros(x.nrows());
        for z in probes {
            let az = z.dot(&self.matrix.t());
            Zip::from(&mut acc)
                .and(z.rows())
                .and(az.rows())
                .for_each(|a, zr, azr| *a += zr.dot(&azr));
        }
        if !probes.is_empty() {
            let k = T::from_usize_lossy(probes.len());
            acc.mapv_inplace(|v| v / k);
        }
        Ok((v, acc))
    }
}
