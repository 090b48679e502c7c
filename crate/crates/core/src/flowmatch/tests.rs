use ndarray::{array, Array1, Array2};
use proptest::prelude::{prop_assert, prop_assert_eq, prop_assume, proptest, ProptestConfig, Strategy};
use rand::SeedableRng;

use super::*;
use crate::field::ConstantField;
use crate::rng::StreamRng;

fn seeded(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

fn small_cfg(mode: NegativeMode) -> TrainConfig {
    TrainConfig {
        hidden: 8,
        depth: 2,
        batch_size: 6,
        iterations: 5,
        negative_mode: mode,
        seed: 3,
        ..Default::default()
    }
}

fn random_batch(rng: &mut StreamRng, n: usize, d: usize, k: usize) -> FlowBatch<f64> {
    let x1 = Array2::from_shape_fn((n, d), |_| standard_normal(rng));
    let c = Array2::from_shape_fn((n, k), |_| uniform(rng, -1.0, 1.0));
    FlowBatch::sample(rng, x1, c).unwrap()
}

#[test]
fn flow_sample_endpoints_and_arithmetic() {
    let x0 = array![0.3, -1.2];
    let x1 = array![2.0, 4.0];
    let c = array![0.1, 0.2];
    let s0 = FlowSample::new(x0.clone(), x1.clone(), c.clone(), 0.0).unwrap();
    assert_eq!(s0.x_t, x0);
    let s1 = FlowSample::new(x0.clone(), x1.clone(), c.clone(), 1.0).unwrap();
    assert_eq!(s1.x_t, x1);
    let mid = FlowSample::new(array![0.0, 0.0], x1.clone(), c.clone(), 0.5).unwrap();
    assert_eq!(mid.x_t, array![1.0, 2.0]);
    assert_eq!(mid.u_t, array![2.0, 4.0]);
    assert!(FlowSample::new(x0, array![f64::NAN, 0.0], c, 0.5).is_err());
}

#[test]
fn make_flow_sample_draws_time_in_unit_interval() {
    let mut rng = seeded(1);
    for _ in 0..200 {
        let s = make_flow_sample(&mut rng, array![1.0, 2.0].view(), array![0.0, 0.0].view()).unwrap();
        assert!((0.0..=1.0).contains(&s.t));
    }
}

#[test]
fn fm_loss_matches_scalar_loop() {
    let mut rng = seeded(2);
    for _ in 0..20 {
        let a: Array1<f64> = Array1::from_shape_fn(7, |_| standard_normal(&mut rng));
        let b: Array1<f64> = Array1::from_shape_fn(7, |_| standard_normal(&mut rng));
        let mut expect = 0.0;
        for i in 0..7 {
            expect += (a[i] - b[i]) * (a[i] - b[i]);
        }
        assert!((fm_loss(a.view(), b.view()).unwrap() - expect).abs() < 1e-12);
    }
}

#[test]
fn zero_weights_disable_contrastive_terms() {
    let mut rng = seeded(4);
    let params = init_params::<f64, _>(&mut rng, 3, 2, 8, 2).unwrap();
    let batch = random_batch(&mut rng, 5, 3, 2);
    let base = TrainConfig {
        lambda_repel: 0.0,
        beta_curve: 0.0,
        ..small_cfg(NegativeMode::Pgd)
    };
    let (l_pgd, g_pgd) = flow_batch_loss(&params, &batch, &base, &mut seeded(9)).unwrap();
    assert_eq!(l_pgd.total, l_pgd.fm);
    let none = TrainConfig {
        negative_mode: NegativeMode::None,
        ..base
    };
    let (l_none, g_none) = flow_batch_loss(&params, &batch, &none, &mut seeded(9)).unwrap();
    assert_eq!(l_pgd, l_none);
    assert_eq!(g_pgd, g_none);
    let with_weights = small_cfg(NegativeMode::None);
    let (l_w, _) = flow_batch_loss(&params, &batch, &with_weights, &mut seeded(9)).unwrap();
    assert_eq!((l_w.repel, l_w.curve), (0.0, 0.0));
    assert_eq!(l_w.total, l_w.fm);
}

#[test]
fn breakdown_total_is_weighted_sum() {
    let mut rng = seeded(5);
    let params = init_params::<f64, _>(&mut rng, 4, 2, 8, 2).unwrap();
    let batch = random_batch(&mut rng, 7, 4, 2);
    for mode in [NegativeMode::Pgd, NegativeMode::UniformRandom] {
        let cfg = small_cfg(mode);
        let (l, _) = flow_batch_loss(&params, &batch, &cfg, &mut seeded(1)).unwrap();
        let expect = l.fm + cfg.lambda_repel * l.repel + cfg.beta_curve * l.curve;
        assert!((l.total - expect).abs() < 1e-12);
        assert!(l.fm >= 0.0 && l.repel >= 0.0 && l.curve >= 0.0);
    }
}

/// Central differences of the total loss over every parameter. The negatives are
/// recomputed at each perturbed point from a cloned rng, as the loss function sees them.
fn fd_check(cfg: &TrainConfig, seed: u64) {
    let mut rng = seeded(seed);
    let params = init_params::<f64, _>(&mut rng, 3, 2, 8, 2).unwrap();
    let batch = random_batch(&mut rng, 6, 3, 2);
    let neg_rng = seeded(seed + 100);
    let (_, grads) = flow_batch_loss(&params, &batch, cfg, &mut neg_rng.clone()).unwrap();
    let flat = params.to_flat();
    let g = grads.to_flat();
    let h = 1e-6;
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += h;
        let mut minus = flat.clone();
        minus[i] -= h;
        let lp = flow_batch_loss(&params.with_flat(&plus).unwrap(), &batch, cfg, &mut neg_rng.clone())
            .unwrap()
            .0
            .total;
        let lm = flow_batch_loss(&params.with_flat(&minus).unwrap(), &batch, cfg, &mut neg_rng.clone())
            .unwrap()
            .0
            .total;
        let fd = (lp - lm) / (2.0 * h);
        let tol = 1e-4 * fd.abs().max(g[i].abs()) + 1e-7;
        assert!((fd - g[i]).abs() <= tol, "param {i}: fd {fd} vs analytic {}", g[i]);
    }
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    fd_check(&small_cfg(NegativeMode::None), 11);
    fd_check(&small_cfg(NegativeMode::UniformRandom), 12);
    fd_check(
        &TrainConfig {
            margin_r: 50.0,
            margin_c: 2.5,
            ..small_cfg(NegativeMode::UniformRandom)
        },
        13,
    );
    fd_check(
        &TrainConfig {
            margin_r: 50.0,
            margin_c: 2.5,
            ..small_cfg(NegativeMode::Pgd)
        },
        14,
    );
}

#[test]
fn pgd_on_zero_network_keeps_condition() {
    let params = MlpParams::<f64>::zeros(&[6, 8, 3]).unwrap();
    let batch = random_batch(&mut seeded(6), 4, 3, 2);
    let mined = pgd_mine_batch(&params, &batch, 3, 0.1, 0.1).unwrap();
    assert_eq!(mined, batch.c);
}

#[test]
fn pgd_with_zero_steps_is_identity() {
    let params = init_params::<f64, _>(&mut seeded(7), 3, 2, 8, 2).unwrap();
    let batch = random_batch(&mut seeded(8), 4, 3, 2);
    assert_eq!(pgd_mine_batch(&params, &batch, 0, 0.1, 0.1).unwrap(), batch.c);
}

#[test]
fn pgd_single_step_on_linear_network_matches_closed_form() {
    // One affine layer: v = W [x; c; t] + b, so ∇_c ‖v − u‖² = 2 W_cᵀ (v − u).
    let (d, k) = (2, 2);
    let mut params = MlpParams::<f64>::zeros(&[d + k + 1, d]).unwrap();
    params.layer_weights[0] = array![[0.5, -1.0, 2.0, 0.3, 0.7], [1.5, 0.2, -0.4, -2.0, 0.1]];
    params.layer_biases[0] = array![0.05, -0.3];
    let sample = FlowSample::new(array![0.4, -0.2], array![1.0, 0.5], array![0.25, -0.6], 0.3).unwrap();
    let (eta, eps) = (0.07, 0.05);
    let mined = pgd_mine(&params, &sample, 1, eta, eps).unwrap();

    let w = &params.layer_weights[0];
    let input = [sample.x_t[0], sample.x_t[1], sample.c[0], sample.c[1], sample.t];
    let mut resid = [0.0; 2];
    for (r, res) in resid.iter_mut().enumerate() {
        *res = params.layer_biases[0][r] + (0..5).map(|j| w[[r, j]] * input[j]).sum::<f64>() - sample.u_t[r];
    }
    for j in 0..k {
        let g: f64 = (0..d).map(|r| 2.0 * w[[r, d + j]] * resid[r]).sum();
        let c0 = sample.c[j];
        let expect = (c0 + eta * g.signum()).clamp(c0 - eps, c0 + eps);
        assert!((mined[j] - expect).abs() < 1e-15, "coord {j}: {} vs {expect}", mined[j]);
    }
}

struct OracleField;

/// With `c = x1`, `(c − x_t)/(1 − t)` is exactly the straight-line velocity `x1 − x0`.
impl VelocityField<f64> for OracleField {
    fn state_dim(&self) -> usize {
        2
    }
    fn cond_dim(&self) -> usize {
        2
    }
    fn velocity(&self, x: ArrayView2<f64>, c: ArrayView2<f64>, t: ArrayView1<f64>) -> Result<Array2<f64>> {
        let mut v = &c - &x;
        for (mut row, &tt) in v.rows_mut().into_iter().zip(t.iter()) {
            row /= 1.0 - tt;
        }
        Ok(v)
    }
    fn velocity_and_probe(
        &self,
        x: ArrayView2<f64>,
        c: ArrayView2<f64>,
        t: ArrayView1<f64>,
        _probes: &[Array2<f64>],
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        Ok((self.velocity(x, c, t)?, Array1::zeros(x.nrows())))
    }
}

#[test]
fn transport_energy_of_oracle_field_vanishes() {
    let x1 = array![[0.3, -0.4], [1.0, 0.2], [-0.7, 0.9]];
    let e = transport_energy(&OracleField, x1.view(), x1.view(), 50, &mut seeded(10)).unwrap();
    assert!(e < 1e-12, "energy {e}");
}

#[test]
fn transport_energy_of_zero_field_is_second_moment() {
    let x1 = array![[0.3, -0.4], [1.0, 0.2]];
    let c = Array2::zeros((2, 2));
    let field = ConstantField {
        velocity: array![0.0, 0.0],
        cond_dim: 2,
    };
    let n_mc = 20_000;
    let e = transport_energy(&field, x1.view(), c.view(), n_mc, &mut seeded(11)).unwrap();
    let mean_sq = (0.25 + 1.04) / 2.0;
    let expect = mean_sq + 2.0;
    // Var ‖x1 − x0‖² for x0 ~ N(0, I_2) is 2d + 4‖x1‖²; standard error over 2·n_mc draws.
    let se = ((4.0 + 4.0 * mean_sq) / (2.0 * n_mc as f64)).sqrt();
    assert!((e - expect).abs() < 5.0 * se, "energy {e} vs {expect} (se {se})");
}

#[test]
fn transport_energy_rejects_empty_and_zero_draws() {
    let empty = Array2::<f64>::zeros((0, 2));
    assert!(transport_energy(&OracleField, empty.view(), empty.view(), 5, &mut seeded(0)).is_err());
    let x1 = array![[0.3, -0.4]];
    assert!(transport_energy(&OracleField, x1.view(), x1.view(), 0, &mut seeded(0)).is_err());
}

struct Gaussians;

impl PairSource<f64> for Gaussians {
    fn state_dim(&self) -> usize {
        3
    }
    fn cond_dim(&self) -> usize {
        2
    }
    fn sample_pairs<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<(Array2<f64>, Array2<f64>)> {
        let c = Array2::from_shape_fn((n, 2), |_| uniform(rng, -1.0, 1.0));
        let x1 = Array2::from_shape_fn((n, 3), |(i, j)| c[[i, j % 2]] + 0.1 * standard_normal::<f64, _>(rng));
        Ok((x1, c))
    }
}

#[test]
fn zero_iterations_returns_initialisation() {
    let cfg = TrainConfig {
        iterations: 0,
        ..small_cfg(NegativeMode::Pgd)
    };
    let out = train::<f64, _>(&Gaussians, &cfg).unwrap();
    let init = init_params::<f64, _>(&mut stream_rng(cfg.seed, Stream::Init), 3, 2, cfg.hidden, cfg.depth).unwrap();
    assert_eq!(out.params, init);
    assert!(out.history.is_empty());
}

#[test]
fn training_is_deterministic_per_seed() {
    let cfg = small_cfg(NegativeMode::Pgd);
    let a = train::<f64, _>(&Gaussians, &cfg).unwrap();
    let b = train::<f64, _>(&Gaussians, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
    let c = train::<f64, _>(&Gaussians, &TrainConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn zero_weight_training_equals_plain_flow_matching() {
    for mode in [NegativeMode::Pgd, NegativeMode::UniformRandom] {
        let zeroed = TrainConfig {
            lambda_repel: 0.0,
            beta_curve: 0.0,
            iterations: 12,
            ..small_cfg(mode)
        };
        let plain = TrainConfig {
            negative_mode: NegativeMode::None,
            ..zeroed.clone()
        };
        let a = train::<f64, _>(&Gaussians, &zeroed).unwrap();
        let b = train::<f64, _>(&Gaussians, &plain).unwrap();
        assert_eq!(a.params, b.params, "{mode}");
    }
}

#[test]
fn plain_flow_matching_history_has_zero_contrastive_columns() {
    let cfg = small_cfg(NegativeMode::None);
    let out = train::<f64, _>(&Gaussians, &cfg).unwrap();
    assert!(out
        .history
        .iter()
        .all(|l| l.repel == 0.0 && l.curve == 0.0 && l.total == l.fm));
}

#[test]
fn flow_matching_loss_decreases_on_spiral_regression() {
    let source = crate::manifolds::TaskSampler {
        task: crate::manifolds::TaskKind::Regression,
        spiral: Default::default(),
    };
    let cfg = TrainConfig {
        hidden: 32,
        depth: 2,
        batch_size: 64,
        iterations: 2000,
        lr: 1e-3,
        negative_mode: NegativeMode::None,
        seed: 1,
        ..Default::default()
    };
    let out = train::<f64, _>(&source, &cfg).unwrap();
    let window = |r: std::ops::Range<usize>| out.history[r.clone()].iter().map(|l| l.fm).sum::<f64>() / r.len() as f64;
    let (early, late) = (window(0..100), window(1900..2000));
    assert!(late < early, "fm loss {early} → {late}");
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = [
        TrainConfig {
            lambda_repel: -0.1,
            ..Default::default()
        },
        TrainConfig {
            margin_c: -1.0,
            ..Default::default()
        },
        TrainConfig {
            pgd_epsilon: 0.0,
            ..Default::default()
        },
        TrainConfig {
            alpha: 1.0,
            ..Default::default()
        },
        TrainConfig {
            batch_size: 0,
            ..Default::default()
        },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
    let uniform_no_eps = TrainConfig {
        pgd_epsilon: 0.0,
        negative_mode: NegativeMode::UniformRandom,
        ..Default::default()
    };
    assert!(uniform_no_eps.validate().is_ok());
}

#[test]
fn negative_mode_parses_and_prints() {
    for mode in [NegativeMode::Pgd, NegativeMode::UniformRandom, NegativeMode::None] {
        assert_eq!(mode.to_string().parse::<NegativeMode>().unwrap(), mode);
    }
    assert!("random".parse::<NegativeMode>().is_err());
}

fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-5.0f64..5.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flow_sample_reconstructs_target(x0 in vec_strategy(4), x1 in vec_strategy(4), t in 0.01f64..=1.0) {
        let s = FlowSample::new(Array1::from(x0.clone()), Array1::from(x1.clone()), array![0.0], t).unwrap();
        for i in 0..4 {
            let back = (s.x_t[i] - (1.0 - t) * x0[i]) / t;
            prop_assert!((back - x1[i]).abs() < 1e-12 * (1.0 + x1[i].abs() + x0[i].abs() / t));
            prop_assert_eq!(s.u_t[i], x1[i] - x0[i]);
        }
    }

    #[test]
    fn hinges_are_nonnegative(u in vec_strategy(3), p in vec_strategy(3), n in vec_strategy(3), m in 0.0f64..3.0) {
        let (u, p, n) = (Array1::from(u), Array1::from(p), Array1::from(n));
        prop_assert!(repel_loss(u.view(), p.view(), n.view(), m).unwrap() >= 0.0);
        let c = curve_loss(u.view(), p.view(), n.view(), m).unwrap();
        prop_assert!(c >= 0.0 && c <= 2.0 + m + 1e-12);
    }

    #[test]
    fn curve_loss_is_scale_invariant(u in vec_strategy(3), p in vec_strategy(3), n in vec_strategy(3), a in 0.01f64..100.0) {
        let (u, p, n) = (Array1::from(u), Array1::from(p), Array1::from(n));
        prop_assume!(u.dot(&u) > 1e-6 && p.dot(&p) > 1e-6 && n.dot(&n) > 1e-6);
        let base = curve_loss(u.view(), p.view(), n.view(), 0.9).unwrap();
        let scaled = curve_loss((&u * a).view(), (&p * a).view(), (&n * a).view(), 0.9).unwrap();
        prop_assert!((base - scaled).abs() < 1e-10);
    }

    #[test]
    fn pgd_stays_in_linf_ball(seed in 0u64..1000, eps in 0.001f64..0.5, eta in 0.001f64..0.5, steps in 0usize..5) {
        let mut rng = seeded(seed);
        let params = init_params::<f64, _>(&mut rng, 3, 2, 8, 2).unwrap();
        let batch = random_batch(&mut rng, 5, 3, 2);
        let mined = pgd_mine_batch(&params, &batch, steps, eta, eps).unwrap();
        for (a, c) in mined.iter().zip(batch.c.iter()) {
            prop_assert!((a - c).abs() <= eps * (1.0 + 1e-12));
        }
    }
}
