//! Conditional flow matching with contrastive off-manifold divergence.
//!
//! A velocity field `v(x, c, t)` is trained with optimal-transport flow
//! matching plus two hinge terms on adversarially mined conditions, so that
//! conditions off the training manifold produce curved, high-energy
//! trajectories. The deviation-from-optimal-transport score of an integrated
//! trajectory then acts as an OOD detector, calibrated with split conformal
//! prediction.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix it to `f64`.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conformal;
pub mod error;
pub mod field;
pub mod flowmatch;
pub mod manifolds;
pub mod netgrad;
pub mod odeint;
pub mod rng;
pub mod scalar;

pub use conformal::{
    accept, auroc, calibrate, conformal_ranks, coverage_sweep, detection_report, mse, ConformalInterval,
    DetectionReport, SweepRow,
};
pub use error::{Error, Result};
pub use field::{ConstantField, LinearField, VelocityField};
pub use flowmatch::{
    flow_batch_loss, pgd_mine_batch, train, train_with_progress, transport_energy, FlowBatch, FlowSample,
    LossBreakdown, NegativeMode, PairSet, PairSource, TrainConfig, TrainOutcome,
};
pub use manifolds::{SpiralConfig, TaskDataset, TaskKind, TaskSampler};
pub use netgrad::{init_params, AdamwConfig, MlpParams};
pub use odeint::{OdeMethod, Trajectory};
pub use rng::{indexed_rng, stream_rng, Stream, StreamRng};
pub use scalar::Scalar;

pub type Mlp = MlpParams<f64>;
pub type Interval = ConformalInterval<f64>;
pub type Dataset = TaskDataset<f64>;
pub type Outcome = TrainOutcome<f64>;
