//! Single-run commands: train, eval, sweep, landscape, predict.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use diflo::netgrad::{read_checkpoint, write_checkpoint, CheckpointMeta};
use diflo::odeint::{
    integrate, landscape_grid, log_likelihoods, predict_mean, predict_means, score_condition, score_conditions,
};
use diflo::scalar::standard_normal;
use diflo::{
    accept, calibrate, coverage_sweep, detection_report, indexed_rng, mse, pgd_mine_batch, stream_rng,
    train_with_progress, transport_energy, FlowBatch, MlpParams, PairSet, Scalar, Stream, SweepRow, TaskSampler,
};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Precision, ScoreKind};
use crate::data::{eval_splits, read_train_split, Split};
use crate::manifest::RunManifest;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const CAL_SCORES_FILE: &str = "calibration.csv";
pub const METRICS_FILE: &str = "metrics.json";
/// DOT metrics written next to likelihood metrics, which need the same trajectories.
pub const DOT_METRICS_FILE: &str = "metrics_dot.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const LANDSCAPE_FILE: &str = "landscape.csv";
pub const TRAJECTORY_FILE: &str = "trajectories.csv";
pub const CHORD_FILE: &str = "chords.csv";
pub const CONFIG_FILE: &str = "config.txt";

/// Trajectories dumped per split (ID test and OOD) for plotting.
const DUMPED_TRAJECTORIES: usize = 8;

pub const DEFAULT_SWEEP_ALPHAS: [f64; 9] = [0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub task: String,
    pub seed: u64,
    pub auroc: f64,
    pub fpr: f64,
    pub alpha: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    pub empirical_coverage: f64,
    pub mse: Option<f64>,
    pub config_hash: String,
}

/// Transport energy on ID pairs versus the same pairs with PGD-mined conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyDiagnostic {
    pub n_pairs: usize,
    pub draws: usize,
    pub on_manifold: f64,
    pub mined: f64,
    pub ratio: f64,
}

fn timed<R>(f: impl FnOnce() -> Result<R>) -> Result<(R, f64)> {
    let t0 = Instant::now();
    let r = f()?;
    Ok((r, t0.elapsed().as_secs_f64()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn prepare_dir(cfg: &ExperimentConfig) -> Result<RunManifest> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    fs::write(cfg.out.join(CONFIG_FILE), cfg.serialize())?;
    let mut m = RunManifest::open(&cfg.out, &cfg.hash(), cfg.train.seed)?;
    m.record_artifact("config", CONFIG_FILE);
    Ok(m)
}

pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut m = prepare_dir(cfg)?;
    let (paths, secs) = timed(|| crate::data::write_splits(cfg))?;
    for (split, p) in Split::ALL.iter().zip(&paths) {
        let rel = p.strip_prefix(&cfg.out).unwrap_or(p).to_path_buf();
        m.record_artifact(&format!("data_{}", split.file_name().trim_end_matches(".csv")), rel);
    }
    m.record_duration("gen_data", secs);
    m.save(&cfg.out)?;
    Ok(paths)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let mut m = prepare_dir(cfg)?;
    let (history, secs) = timed(|| match cfg.precision {
        Precision::F32 => train_impl::<f32>(cfg),
        Precision::F64 => train_impl::<f64>(cfg),
    })?;
    let mut w = create(&cfg.out.join(HISTORY_FILE))?;
    writeln!(w, "iter,fm,repel,curve,total")?;
    for (i, l) in history.iter().enumerate() {
        writeln!(w, "{i},{},{},{},{}", l[0], l[1], l[2], l[3])?;
    }
    w.flush()?;
    m.record_artifact("checkpoint", CHECKPOINT_FILE);
    m.record_artifact("history", HISTORY_FILE);
    m.record_duration("train", secs);
    m.save(&cfg.out)?;
    log::info!("trained {} iterations in {secs:.1}s", cfg.train.iterations);
    Ok(cfg.out.join(CHECKPOINT_FILE))
}

fn train_impl<T: Scalar>(cfg: &ExperimentConfig) -> Result<Vec<[f64; 4]>> {
    let tcfg = cfg.effective_train();
    let every = (tcfg.iterations / 20).max(1);
    let t0 = Instant::now();
    let progress = |i: usize, l: &diflo::LossBreakdown<T>| {
        if i.is_multiple_of(every) || i + 1 == tcfg.iterations {
            log::info!(
                "iter {i:>6} fm={:.4} repel={:.4} curve={:.4} total={:.4} ({:.0}s)",
                l.fm.to_f64_lossy(),
                l.repel.to_f64_lossy(),
                l.curve.to_f64_lossy(),
                l.total.to_f64_lossy(),
                t0.elapsed().as_secs_f64()
            );
        }
    };
    let outcome = if cfg.train_from_file {
        let ds = read_train_split::<T>(&cfg.out)?;
        if ds.task != cfg.task {
            bail!(
                "train split was generated for task {}, config says {}",
                ds.task,
                cfg.task
            );
        }
        train_with_progress(&PairSet::new(ds.targets, ds.conditions)?, &tcfg, progress)?
    } else {
        let src = TaskSampler {
            task: cfg.task,
            spiral: cfg.spiral.clone(),
        };
        train_with_progress(&src, &tcfg, progress)?
    };
    let meta = CheckpointMeta {
        widths: outcome.params.widths.clone(),
        seed: tcfg.seed,
        config_hash: cfg.hash(),
        config: Some(cfg.serialize()),
    };
    write_checkpoint(create(&cfg.out.join(CHECKPOINT_FILE))?, &outcome.params, &meta)?;
    Ok(outcome
        .history
        .iter()
        .map(|l| [l.fm, l.repel, l.curve, l.total].map(|v| v.to_f64_lossy()))
        .collect())
}

pub fn load_params<T: Scalar>(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<MlpParams<T>> {
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out.join(CHECKPOINT_FILE));
    let f = File::open(&path).with_context(|| format!("opening checkpoint {}", path.display()))?;
    let (params, meta): (MlpParams<T>, _) =
        read_checkpoint(BufReader::new(f)).with_context(|| format!("reading checkpoint {}", path.display()))?;
    if params.state_dim() != cfg.task.target_dim() || params.cond_dim() != cfg.task.cond_dim() {
        bail!(
            "checkpoint {} has state/condition widths {}/{}, task {} needs {}/{}",
            path.display(),
            params.state_dim(),
            params.cond_dim(),
            cfg.task,
            cfg.task.target_dim(),
            cfg.task.cond_dim()
        );
    }
    if meta.config_hash != cfg.hash() {
        log::debug!(
            "checkpoint config hash {} differs from current config",
            meta.config_hash
        );
    }
    Ok(params)
}

/// Per-split anomaly scores. `log_p` is present only for likelihood runs.
struct SplitScores {
    dot: Vec<f64>,
    log_p: Option<Vec<f64>>,
}

impl SplitScores {
    fn anomaly(&self, kind: ScoreKind) -> Vec<f64> {
        match (kind, &self.log_p) {
            (ScoreKind::Likelihood, Some(lp)) => lp.iter().map(|v| -v).collect(),
            _ => self.dot.clone(),
        }
    }
}

fn score_split<T: Scalar>(
    cfg: &ExperimentConfig,
    params: &MlpParams<T>,
    conds: ArrayView2<T>,
    split: Split,
    likelihood: bool,
) -> Result<SplitScores> {
    let t = &cfg.train;
    let seed = split.eval_seed(t.seed);
    let scored = score_conditions(params, conds, t.ode_steps, t.ode_method, seed)?;
    let dot = scored.scores.iter().map(|v| v.to_f64_lossy()).collect();
    let log_p = if likelihood {
        let est = log_likelihoods(params, scored.samples.view(), conds, t.ode_steps, cfg.n_probes, seed)?;
        Some(est.iter().map(|e| e.log_p.to_f64_lossy()).collect())
    } else {
        None
    };
    Ok(SplitScores { dot, log_p })
}

fn write_scores(path: &Path, rows: &[(&str, &SplitScores)]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "id,label,s_dot,log_p")?;
    let mut id = 0usize;
    for (label, sc) in rows {
        for (i, d) in sc.dot.iter().enumerate() {
            match &sc.log_p {
                Some(lp) => writeln!(w, "{id},{label},{d},{}", lp[i])?,
                None => writeln!(w, "{id},{label},{d},")?,
            }
            id += 1;
        }
    }
    w.flush()?;
    Ok(())
}

fn build_metrics(cfg: &ExperimentConfig, cal: &[f64], test: &[f64], ood: &[f64], mse: Option<f64>) -> Result<Metrics> {
    let alpha = cfg.train.alpha;
    let (iv, rep) = if ood.is_empty() {
        let iv = calibrate(cal, alpha)?;
        let cov = test.iter().filter(|&&s| accept(&iv, s)).count() as f64 / test.len() as f64;
        (
            iv,
            diflo::DetectionReport {
                auroc: f64::NAN,
                fpr: f64::NAN,
                tpr_empirical: cov,
                n_id: test.len(),
                n_ood: 0,
            },
        )
    } else {
        detection_report(cal, test, ood, alpha)?
    };
    Ok(Metrics {
        task: cfg.task.to_string(),
        seed: cfg.train.seed,
        auroc: rep.auroc,
        fpr: rep.fpr,
        alpha,
        q_lo: iv.q_lo,
        q_hi: iv.q_hi,
        empirical_coverage: rep.tpr_empirical,
        mse,
        config_hash: cfg.hash(),
    })
}

fn write_json<S: Serialize>(path: &Path, v: &S) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_metrics(path: &Path) -> Result<Metrics> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Scores calibration, ID-test and OOD conditions, calibrates, and writes
/// scores, metrics, diagnostics and a trajectory dump.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Metrics> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => eval_impl::<f32>(cfg, checkpoint),
        Precision::F64 => eval_impl::<f64>(cfg, checkpoint),
    }
}

fn eval_impl<T: Scalar>(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Metrics> {
    let mut m = prepare_dir(cfg)?;
    let params = load_params::<T>(cfg, checkpoint)?;
    let splits = eval_splits::<T>(cfg)?;
    let likelihood = cfg.score == ScoreKind::Likelihood;

    let ((cal, test, ood), secs) = timed(|| {
        Ok((
            score_split(cfg, &params, splits.cal.conditions.view(), Split::Cal, likelihood)?,
            score_split(cfg, &params, splits.test.conditions.view(), Split::Test, likelihood)?,
            score_split(cfg, &params, splits.ood.view(), Split::Ood, likelihood)?,
        ))
    })?;
    m.record_duration("eval_score", secs);
    write_scores(&cfg.out.join(CAL_SCORES_FILE), &[("ID", &cal)])?;
    write_scores(&cfg.out.join(SCORES_FILE), &[("ID", &test), ("OOD", &ood)])?;

    let mse_value = if cfg.task == diflo::TaskKind::Regression {
        let t = &cfg.train;
        let (value, secs) = timed(|| {
            let preds = predict_means(
                &params,
                splits.test.conditions.view(),
                cfg.n_predict,
                t.ode_steps,
                t.ode_method,
                t.seed,
            )?;
            Ok(mse(&rows_f64(preds.view()), &rows_f64(splits.test.targets.view()))?)
        })?;
        m.record_duration("eval_predict", secs);
        Some(value)
    } else {
        None
    };

    let metrics = build_metrics(
        cfg,
        &cal.anomaly(cfg.score),
        &test.anomaly(cfg.score),
        &ood.anomaly(cfg.score),
        mse_value,
    )?;
    write_json(&cfg.out.join(METRICS_FILE), &metrics)?;
    m.record_artifact("metrics", METRICS_FILE);
    if likelihood {
        let dot = build_metrics(cfg, &cal.dot, &test.dot, &ood.dot, mse_value)?;
        write_json(&cfg.out.join(DOT_METRICS_FILE), &dot)?;
        m.record_artifact("metrics_dot", DOT_METRICS_FILE);
    }

    let (energy, secs) = timed(|| energy_diagnostic(cfg, &params, &splits.test))?;
    m.record_duration("eval_energy", secs);
    write_json(&cfg.out.join(DIAGNOSTICS_FILE), &energy)?;

    dump_trajectories(cfg, &params, &splits.test.conditions, &splits.ood)?;

    m.record_artifact("scores", SCORES_FILE);
    m.record_artifact("calibration_scores", CAL_SCORES_FILE);
    m.record_artifact("diagnostics", DIAGNOSTICS_FILE);
    m.record_artifact("trajectories", TRAJECTORY_FILE);
    m.record_artifact("chords", CHORD_FILE);
    m.save(&cfg.out)?;
    log::info!(
        "{} {}: auroc={:.4} fpr={:.4} coverage={:.4} mse={:?} energy ratio={:.2}",
        cfg.task,
        cfg.score,
        metrics.auroc,
        metrics.fpr,
        metrics.empirical_coverage,
        metrics.mse,
        energy.ratio
    );
    Ok(metrics)
}

fn energy_diagnostic<T: Scalar>(
    cfg: &ExperimentConfig,
    params: &MlpParams<T>,
    id: &diflo::TaskDataset<T>,
) -> Result<EnergyDiagnostic> {
    let n = cfg.n_energy.min(id.len());
    if n == 0 {
        bail!("transport-energy diagnostic needs at least one ID pair");
    }
    let t = &cfg.train;
    let x1 = id.targets.slice(s![..n, ..]).to_owned();
    let c = id.conditions.slice(s![..n, ..]).to_owned();
    let mut rng = stream_rng(t.seed, Stream::Energy);
    let batch = FlowBatch::sample(&mut rng, x1.clone(), c.clone())?;
    let mined = pgd_mine_batch(params, &batch, t.pgd_steps, T::lit(t.pgd_eta), T::lit(t.pgd_epsilon))?;
    let on = transport_energy(params, x1.view(), c.view(), cfg.energy_draws, &mut rng.clone())?.to_f64_lossy();
    let off = transport_energy(params, x1.view(), mined.view(), cfg.energy_draws, &mut rng)?.to_f64_lossy();
    Ok(EnergyDiagnostic {
        n_pairs: n,
        draws: cfg.energy_draws,
        on_manifold: on,
        mined: off,
        ratio: off / on,
    })
}

/// Same `x0` as the scoring pass for that row.
fn scoring_x0<T: Scalar>(seed: u64, index: usize, d: usize) -> Array1<T> {
    let mut rng = indexed_rng(seed, Stream::Eval, index as u64);
    Array1::from_shape_fn(d, |_| standard_normal(&mut rng))
}

fn dump_trajectories<T: Scalar>(
    cfg: &ExperimentConfig,
    params: &MlpParams<T>,
    id: &Array2<T>,
    ood: &Array2<T>,
) -> Result<()> {
    let d = cfg.task.target_dim();
    let t = &cfg.train;
    let mut w = create(&cfg.out.join(TRAJECTORY_FILE))?;
    let mut wc = create(&cfg.out.join(CHORD_FILE))?;
    let header: Vec<String> = ["traj_id", "step", "t"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..d).map(|i| format!("x_{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    writeln!(wc, "{}", header.join(","))?;
    let mut traj_id = 0usize;
    for (conds, split) in [(id, Split::Test), (ood, Split::Ood)] {
        for i in 0..conds.nrows().min(DUMPED_TRAJECTORIES) {
            let x0 = scoring_x0::<T>(split.eval_seed(t.seed), i, d);
            let traj = integrate(params, x0.view(), conds.row(i), t.ode_steps, t.ode_method)?;
            let (a, b) = (traj.x0(), traj.x1_hat());
            for (step, (state, &time)) in traj.states.rows().into_iter().zip(&traj.times).enumerate() {
                let tf = time.to_f64_lossy();
                let xs: Vec<String> = state.iter().map(|v| v.to_f64_lossy().to_string()).collect();
                writeln!(w, "{traj_id},{step},{tf},{}", xs.join(","))?;
                let chord: Vec<String> = a
                    .iter()
                    .zip(b.iter())
                    .map(|(&p, &q)| ((T::one() - time) * p + time * q).to_f64_lossy().to_string())
                    .collect();
                writeln!(wc, "{traj_id},{step},{tf},{}", chord.join(","))?;
            }
            traj_id += 1;
        }
    }
    w.flush()?;
    wc.flush()?;
    Ok(())
}

/// `(label, anomaly score)` rows of a scores CSV.
fn read_scores(path: &Path, kind: ScoreKind) -> Result<Vec<(String, f64)>> {
    let f = File::open(path).with_context(|| format!("opening {} (run eval first)", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            bail!("{}: malformed row {line:?}", path.display());
        }
        let value = match kind {
            ScoreKind::Dot => fields[2].parse::<f64>()?,
            ScoreKind::Likelihood => {
                if fields[3].is_empty() {
                    bail!("{} has no log_p column; evaluate with score=likelihood", path.display());
                }
                -fields[3].parse::<f64>()?
            }
        };
        out.push((fields[1].to_string(), value));
    }
    Ok(out)
}

/// Coverage and FPR over a list of miscoverage levels from the scores of a
/// previous `eval`, written to `file_name` in the run directory.
pub fn cmd_sweep(cfg: &ExperimentConfig, alphas: &[f64], kind: ScoreKind, file_name: &str) -> Result<Vec<SweepRow>> {
    let cal: Vec<f64> = read_scores(&cfg.out.join(CAL_SCORES_FILE), kind)?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let rows = read_scores(&cfg.out.join(SCORES_FILE), kind)?;
    let id: Vec<f64> = rows.iter().filter(|(l, _)| l == "ID").map(|(_, s)| *s).collect();
    let ood: Vec<f64> = rows.iter().filter(|(l, _)| l == "OOD").map(|(_, s)| *s).collect();
    let sweep = coverage_sweep(&cal, &id, &ood, alphas)?;
    let mut w = create(&cfg.out.join(file_name))?;
    writeln!(w, "alpha,coverage,fpr")?;
    for r in &sweep {
        writeln!(w, "{},{},{}", r.alpha, r.coverage, r.fpr)?;
    }
    w.flush()?;
    let mut m = RunManifest::open(&cfg.out, &cfg.hash(), cfg.train.seed)?;
    m.record_artifact(file_name.trim_end_matches(".csv"), file_name);
    m.save(&cfg.out)?;
    Ok(sweep)
}

/// DOT over a `resolution²` grid on `[−1, 1]²`, with accept flags from an
/// interval calibrated on the calibration split.
pub fn cmd_landscape(cfg: &ExperimentConfig, checkpoint: Option<&Path>, resolution: usize) -> Result<usize> {
    cfg.validate()?;
    if cfg.task.cond_dim() != 2 {
        bail!("landscape needs 2-D conditions");
    }
    match cfg.precision {
        Precision::F32 => landscape_impl::<f32>(cfg, checkpoint, resolution),
        Precision::F64 => landscape_impl::<f64>(cfg, checkpoint, resolution),
    }
}

fn calibration_interval<T: Scalar>(
    cfg: &ExperimentConfig,
    params: &MlpParams<T>,
) -> Result<diflo::ConformalInterval<f64>> {
    let splits = eval_splits::<T>(cfg)?;
    let cal = score_split(cfg, params, splits.cal.conditions.view(), Split::Cal, false)?;
    Ok(calibrate(&cal.dot, cfg.train.alpha)?)
}

fn landscape_impl<T: Scalar>(cfg: &ExperimentConfig, checkpoint: Option<&Path>, resolution: usize) -> Result<usize> {
    let mut m = prepare_dir(cfg)?;
    let params = load_params::<T>(cfg, checkpoint)?;
    let t0 = Instant::now();
    let iv = calibration_interval(cfg, &params)?;
    let t = &cfg.train;
    let grid = landscape_grid(&params, (-1.0, 1.0), resolution, t.ode_steps, t.ode_method, t.seed)?;
    let conds = diflo::odeint::grid_conditions::<f64>((-1.0, 1.0), resolution)?;
    let mut w = create(&cfg.out.join(LANDSCAPE_FILE))?;
    writeln!(w, "cx,cy,s_dot,accepted")?;
    for (r, s) in grid.iter().enumerate() {
        let s = s.to_f64_lossy();
        writeln!(w, "{},{},{s},{}", conds[[r, 0]], conds[[r, 1]], accept(&iv, s))?;
    }
    w.flush()?;
    m.record_artifact("landscape", LANDSCAPE_FILE);
    m.record_duration("landscape", t0.elapsed().as_secs_f64());
    m.save(&cfg.out)?;
    Ok(grid.len())
}

/// Mean prediction, DOT score and accept decision for one condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub condition: Vec<f64>,
    pub prediction: Vec<f64>,
    pub n_samples: usize,
    pub s_dot: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    pub accepted: bool,
}

pub fn cmd_predict(cfg: &ExperimentConfig, checkpoint: Option<&Path>, condition: &[f64]) -> Result<Prediction> {
    cfg.validate()?;
    if condition.len() != cfg.task.cond_dim() {
        bail!(
            "condition has {} values, task {} needs {}",
            condition.len(),
            cfg.task,
            cfg.task.cond_dim()
        );
    }
    match cfg.precision {
        Precision::F32 => predict_impl::<f32>(cfg, checkpoint, condition),
        Precision::F64 => predict_impl::<f64>(cfg, checkpoint, condition),
    }
}

fn predict_impl<T: Scalar>(cfg: &ExperimentConfig, checkpoint: Option<&Path>, condition: &[f64]) -> Result<Prediction> {
    let params = load_params::<T>(cfg, checkpoint)?;
    let iv = calibration_interval(cfg, &params)?;
    let t = &cfg.train;
    let c: Array1<T> = condition.iter().map(|&v| T::lit(v)).collect();
    let mut rng = indexed_rng(t.seed, Stream::Predict, 0);
    let mean = predict_mean(&params, c.view(), cfg.n_predict, t.ode_steps, t.ode_method, &mut rng)?;
    let (_, s_dot) = score_condition(&params, c.view(), t.ode_steps, t.ode_method, &mut rng)?;
    let s_dot = s_dot.to_f64_lossy();
    Ok(Prediction {
        condition: condition.to_vec(),
        prediction: mean.iter().map(|v| v.to_f64_lossy()).collect(),
        n_samples: cfg.n_predict,
        s_dot,
        q_lo: iv.q_lo,
        q_hi: iv.q_hi,
        accepted: accept(&iv, s_dot),
    })
}

fn rows_f64<T: Scalar>(a: ArrayView2<T>) -> Vec<Vec<f64>> {
    a.axis_iter(Axis(0))
        .map(|r| r.iter().map(|v| v.to_f64_lossy()).collect())
        .collect()
}
