//! Two-dimensional spiral benchmark: ID sampling, distance to the curve,
//! buffered OOD sampling and the two conditional tasks built on it.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowmatch::PairSource;
use crate::scalar::{standard_normal, Scalar};

/// Number of future points in a regression target.
pub const HORIZON: usize = 10;

/// Draws after which the running OOD acceptance rate is checked.
const OOD_GUARD_ATTEMPTS: usize = 10_000;
/// Minimum sustained OOD acceptance rate.
const OOD_GUARD_MIN_RATE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpiralConfig {
    pub theta_max: f64,
    pub noise_sigma: f64,
    /// Minimum distance from the noiseless curve for OOD conditions.
    pub epsilon_buffer: f64,
    /// Points on the θ grid that regression trajectories step along.
    pub grid_resolution: usize,
    /// Coarse θ samples used by the distance oracle before refinement.
    pub distance_resolution: usize,
}

impl Default for SpiralConfig {
    fn default() -> Self {
        Self {
            theta_max: 5.0 * std::f64::consts::PI,
            noise_sigma: 0.005,
            epsilon_buffer: 0.025,
            grid_resolution: 1000,
            distance_resolution: 10_000,
        }
    }
}

impl SpiralConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_max > 0.0) || !(self.noise_sigma >= 0.0) || !(self.epsilon_buffer > 0.0) {
            return Err(Error::InvalidArgument(
                "theta_max and epsilon_buffer must be positive, noise_sigma nonnegative".into(),
            ));
        }
        if self.epsilon_buffer <= 3.0 * self.noise_sigma {
            return Err(Error::InvalidArgument(format!(
                "epsilon_buffer {} must exceed 3·noise_sigma {}",
                self.epsilon_buffer,
                3.0 * self.noise_sigma
            )));
        }
        if self.distance_resolution < 2 {
            return Err(Error::InvalidArgument("distance_resolution must be at least 2".into()));
        }
        Ok(())
    }

    fn radius_scale(&self) -> f64 {
        self.theta_max
    }
}

/// Noiseless curve point `r(θ)(cos θ, sin θ)` with `r = θ / θ_max`.
pub fn spiral_point_with<T: Scalar>(theta: f64, cfg: &SpiralConfig) -> Result<[T; 2]> {
    if !(0.0..=cfg.theta_max).contains(&theta) {
        return Err(Error::InvalidArgument(format!(
            "theta {theta} outside [0, {}]",
            cfg.theta_max
        )));
    }
    let (x, y) = raw_point(theta, cfg.radius_scale());
    Ok([T::lit(x), T::lit(y)])
}

/// [`spiral_point_with`] on the default `θ ∈ [0, 5π]` spiral.
pub fn spiral_point<T: Scalar>(theta: f64) -> Result<[T; 2]> {
    spiral_point_with(theta, &SpiralConfig::default())
}

fn raw_point(theta: f64, scale: f64) -> (f64, f64) {
    let r = theta / scale;
    (r * theta.cos(), r * theta.sin())
}

fn noisy_point<R: Rng + ?Sized>(rng: &mut R, theta: f64, cfg: &SpiralConfig) -> (f64, f64) {
    let (x, y) = raw_point(theta, cfg.radius_scale());
    let nx: f64 = standard_normal(rng);
    let ny: f64 = standard_normal(rng);
    (x + cfg.noise_sigma * nx, y + cfg.noise_sigma * ny)
}

/// `n` i.i.d. noisy spiral samples with `θ ~ U[0, θ_max]`.
pub fn sample_spiral<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize, cfg: &SpiralConfig) -> Array2<T> {
    let mut out = Array2::zeros((n, 2));
    for mut row in out.rows_mut() {
        let theta = rng.random::<f64>() * cfg.theta_max;
        let (x, y) = noisy_point(rng, theta, cfg);
        row[0] = T::lit(x);
        row[1] = T::lit(y);
    }
    out
}

fn dist2_at(theta: f64, px: f64, py: f64, scale: f64) -> f64 {
    let (x, y) = raw_point(theta, scale);
    (x - px) * (x - px) + (y - py) * (y - py)
}

/// Euclidean distance from `point` to the noiseless curve.
///
/// Scans `distance_resolution` θ values, then golden-section refines around
/// every coarse local minimum that could still beat the best coarse value.
pub fn min_dist_to_spiral(point: [f64; 2], cfg: &SpiralConfig) -> f64 {
    let [px, py] = point;
    let n = cfg.distance_resolution.max(2);
    let scale = cfg.radius_scale();
    let step = cfg.theta_max / (n - 1) as f64;
    let d2: Vec<f64> = (0..n).map(|i| dist2_at(i as f64 * step, px, py, scale)).collect();
    let best_coarse = d2.iter().cloned().fold(f64::INFINITY, f64::min);
    // The curve moves at most ~step·|dx/dθ| ≤ 1.05·step between grid points.
    let slack = best_coarse.sqrt() + 1.1 * step;
    let slack2 = slack * slack;
    let mut best = best_coarse;
    for i in 0..n {
        let is_local_min = (i == 0 || d2[i] <= d2[i - 1]) && (i + 1 == n || d2[i] <= d2[i + 1]);
        if !is_local_min || d2[i] > slack2 {
            continue;
        }
        let lo = if i == 0 { 0.0 } else { (i - 1) as f64 * step };
        let hi = if i + 1 == n {
            cfg.theta_max
        } else {
            (i + 1) as f64 * step
        };
        best = best.min(golden_min(|th| dist2_at(th, px, py, scale), lo, hi));
    }
    best.sqrt()
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if (b - a).abs() < 1e-14 {
            break;
        }
    }
    f(a).min(f(b)).min(fc).min(fd)
}

/// Uniform points of `[−1, 1]²` farther than `epsilon_buffer` from the curve.
///
/// Fails once at least `OOD_GUARD_ATTEMPTS` draws have been made with an
/// acceptance rate below `OOD_GUARD_MIN_RATE`.
pub fn sample_ood<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize, cfg: &SpiralConfig) -> Result<Array2<T>> {
    require_nonempty(n)?;
    let mut out = Array2::zeros((n, 2));
    let mut filled = 0usize;
    let mut attempts = 0usize;
    while filled < n {
        let p = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
        attempts += 1;
        if min_dist_to_spiral(p, cfg) > cfg.epsilon_buffer {
            out[[filled, 0]] = T::lit(p[0]);
            out[[filled, 1]] = T::lit(p[1]);
            filled += 1;
        } else if attempts >= OOD_GUARD_ATTEMPTS && (filled as f64) < OOD_GUARD_MIN_RATE * attempts as f64 {
            return Err(Error::Misconfigured(format!(
                "OOD acceptance {filled}/{attempts} below {OOD_GUARD_MIN_RATE} with epsilon_buffer={}",
                cfg.epsilon_buffer
            )));
        }
    }
    Ok(out)
}

fn require_nonempty(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Condition is the current state; target the next `HORIZON` states (20 dims).
    Regression,
    /// Condition is a validity token; target an independent spiral sample (2 dims).
    Generation,
}

impl TaskKind {
    pub fn target_dim(self) -> usize {
        match self {
            TaskKind::Regression => 2 * HORIZON,
            TaskKind::Generation => 2,
        }
    }

    pub fn cond_dim(self) -> usize {
        2
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Regression => "regression",
            TaskKind::Generation => "generation",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(TaskKind::Regression),
            "generation" => Ok(TaskKind::Generation),
            other => Err(Error::InvalidArgument(format!("unknown task {other:?}"))),
        }
    }
}

/// Paired conditions and targets for one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset<T> {
    pub task: TaskKind,
    /// `n × k`
    pub conditions: Array2<T>,
    /// `n × d`
    pub targets: Array2<T>,
}

impl<T: Scalar> TaskDataset<T> {
    pub fn len(&self) -> usize {
        self.conditions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Regression pairs: condition `x(θ_k) + ξ`, target `[x(θ_{k+1}) + ξ, …, x(θ_{k+10}) + ξ]`
/// on a uniform grid of `grid_resolution` angles over `[0, θ_max]`.
pub fn build_regression_dataset<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    cfg: &SpiralConfig,
) -> Result<TaskDataset<T>> {
    require_nonempty(n)?;
    let res = cfg.grid_resolution;
    if res < HORIZON + 1 {
        return Err(Error::InvalidArgument(format!(
            "grid_resolution {res} too small for a {HORIZON}-step horizon"
        )));
    }
    let step = cfg.theta_max / (res - 1) as f64;
    let mut conditions = Array2::zeros((n, 2));
    let mut targets = Array2::zeros((n, 2 * HORIZON));
    for i in 0..n {
        let k = rng.random_range(0..=res - 1 - HORIZON);
        let (cx, cy) = noisy_point(rng, k as f64 * step, cfg);
        conditions[[i, 0]] = T::lit(cx);
        conditions[[i, 1]] = T::lit(cy);
        for h in 0..HORIZON {
            let (x, y) = noisy_point(rng, (k + h + 1) as f64 * step, cfg);
            targets[[i, 2 * h]] = T::lit(x);
            targets[[i, 2 * h + 1]] = T::lit(y);
        }
    }
    Ok(TaskDataset {
        task: TaskKind::Regression,
        conditions,
        targets,
    })
}

/// Generation pairs: condition and target are independent spiral samples with `x ≠ c`.
pub fn build_generation_dataset<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    cfg: &SpiralConfig,
) -> Result<TaskDataset<T>> {
    require_nonempty(n)?;
    let conditions: Array2<T> = sample_spiral(rng, n, cfg);
    let mut targets = Array2::zeros((n, 2));
    for i in 0..n {
        loop {
            let x: Array2<T> = sample_spiral(rng, 1, cfg);
            let dx = (x[[0, 0]] - conditions[[i, 0]]).to_f64_lossy();
            let dy = (x[[0, 1]] - conditions[[i, 1]]).to_f64_lossy();
            if (dx * dx + dy * dy).sqrt() >= 1e-9 {
                targets.row_mut(i).assign(&x.row(0));
                break;
            }
        }
    }
    Ok(TaskDataset {
        task: TaskKind::Generation,
        conditions,
        targets,
    })
}

pub fn build_dataset<T: Scalar, R: Rng + ?Sized>(
    task: TaskKind,
    rng: &mut R,
    n: usize,
    cfg: &SpiralConfig,
) -> Result<TaskDataset<T>> {
    match task {
        TaskKind::Regression => build_regression_dataset(rng, n, cfg),
        TaskKind::Generation => build_generation_dataset(rng, n, cfg),
    }
}

/// Draws fresh task pairs on every call: the infinite-data training regime.
#[derive(Clone, Debug)]
pub struct TaskSampler {
    pub task: TaskKind,
    pub spiral: SpiralConfig,
}

impl<T: Scalar> PairSource<T> for TaskSampler {
    fn state_dim(&self) -> usize {
        self.task.target_dim()
    }

    fn cond_dim(&self) -> usize {
        self.task.cond_dim()
    }

    fn sample_pairs<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<(Array2<T>, Array2<T>)> {
        let ds = build_dataset::<T, R>(self.task, rng, n, &self.spiral)?;
        Ok((ds.targets, ds.conditions))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitLabel {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
    #[serde(rename = "CAL")]
    Cal,
    #[serde(rename = "TEST")]
    Test,
}

impl fmt::Display for SplitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitLabel::Id => "ID",
            SplitLabel::Ood => "OOD",
            SplitLabel::Cal => "CAL",
            SplitLabel::Test => "TEST",
        })
    }
}

impl FromStr for SplitLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ID" => Ok(SplitLabel::Id),
            "OOD" => Ok(SplitLabel::Ood),
            "CAL" => Ok(SplitLabel::Cal),
            "TEST" => Ok(SplitLabel::Test),
            other => Err(Error::Dataset(format!("unknown split label {other:?}"))),
        }
    }
}

/// Contents of one dataset CSV file.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile<T> {
    pub task: TaskKind,
    pub k: usize,
    pub d: usize,
    pub labels: Vec<SplitLabel>,
    pub conditions: Array2<T>,
    /// `None` when the rows carry no targets (OOD files).
    pub targets: Option<Array2<T>>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `task,k,d` on the first line, then one row per condition:
/// `id,label,c_0..c_{k-1},y_0..y_{d-1}` with empty `y` fields when `targets` is `None`.
pub fn write_dataset_csv<T: Scalar, W: Write>(
    mut w: W,
    task: TaskKind,
    label: SplitLabel,
    conditions: ArrayView2<T>,
    targets: Option<ArrayView2<T>>,
) -> Result<()> {
    let k = conditions.ncols();
    let d = task.target_dim();
    if let Some(t) = &targets {
        if t.nrows() != conditions.nrows() || t.ncols() != d {
            return Err(Error::Dataset("target shape does not match conditions/task".into()));
        }
    }
    writeln!(w, "{task},{k},{d}")?;
    for i in 0..conditions.nrows() {
        let mut fields = vec![i.to_string(), label.to_string()];
        fields.extend(conditions.row(i).iter().map(|v| fmt_f64(v.to_f64_lossy())));
        match &targets {
            Some(t) => fields.extend(t.row(i).iter().map(|v| fmt_f64(v.to_f64_lossy()))),
            None => fields.extend(std::iter::repeat_n(String::new(), d)),
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<T: Scalar, R: BufRead>(r: R) -> Result<DatasetFile<T>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Dataset("missing header".into()))??;
    let h: Vec<&str> = header.trim().split(',').collect();
    if h.len() != 3 {
        return Err(Error::Dataset(format!("bad header {header:?}")));
    }
    let task: TaskKind = h[0].parse()?;
    let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| Error::Dataset(e.to_string()));
    let (k, d) = (parse_usize(h[1])?, parse_usize(h[2])?);
    let mut labels = Vec::new();
    let mut conds = Vec::new();
    let mut ys = Vec::new();
    let mut any_target = false;
    let mut all_target = true;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 2 + k + d {
            return Err(Error::Dataset(format!(
                "row {lineno}: expected {} fields, got {}",
                2 + k + d,
                f.len()
            )));
        }
        labels.push(f[1].parse()?);
        for v in &f[2..2 + k] {
            conds.push(parse_float::<T>(v)?);
        }
        let yfields = &f[2 + k..];
        if yfields.iter().all(|s| s.is_empty()) {
            all_target = false;
        } else {
            any_target = true;
            for v in yfields {
                ys.push(parse_float::<T>(v)?);
            }
        }
    }
    if any_target && !all_target {
        return Err(Error::Dataset("mixed rows with and without targets".into()));
    }
    let n = labels.len();
    let conditions = Array2::from_shape_vec((n, k), conds).map_err(|e| Error::Dataset(e.to_string()))?;
    let targets = if any_target {
        Some(Array2::from_shape_vec((n, d), ys).map_err(|e| Error::Dataset(e.to_string()))?)
    } else {
        None
    };
    Ok(DatasetFile {
        task,
        k,
        d,
        labels,
        conditions,
        targets,
    })
}

fn parse_float<T: Scalar>(s: &str) -> Result<T> {
    s.trim()
        .parse::<f64>()
        .map(T::lit)
        .map_err(|e| Error::Dataset(format!("{s:?}: {e}")))
}

/// Unflattens a regression target into its `HORIZON` 2-D points.
pub fn target_points<T: Scalar>(target: &Array1<T>) -> Vec<[T; 2]> {
    target.as_slice().unwrap().chunks(2).map(|p| [p[0], p[1]]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use rand::SeedableRng;
    use std::f64::consts::PI;

    fn seeded(seed: u64) -> StreamRng {
        StreamRng::seed_from_u64(seed)
    }

    fn noiseless() -> SpiralConfig {
        SpiralConfig {
            noise_sigma: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn spiral_point_examples() {
        let p: [f64; 2] = spiral_point(0.0).unwrap();
        assert_eq!(p, [0.0, 0.0]);
        let p: [f64; 2] = spiral_point(5.0 * PI).unwrap();
        assert!((p[0] + 1.0).abs() < 1e-15 && p[1].abs() < 1e-14);
        let p: [f64; 2] = spiral_point(2.5 * PI).unwrap();
        assert!(p[0].abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert!(spiral_point::<f64>(-0.1).is_err());
        assert!(spiral_point::<f64>(5.0 * PI + 1e-9).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SpiralConfig::default().validate().is_ok());
        let tight = SpiralConfig {
            epsilon_buffer: 0.015,
            ..Default::default()
        };
        assert!(tight.validate().is_err());
        let zero = SpiralConfig {
            theta_max: 0.0,
            ..Default::default()
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn noiseless_samples_lie_on_the_curve() {
        let cfg = noiseless();
        let pts: Array2<f64> = sample_spiral(&mut seeded(1), 200, &cfg);
        for r in pts.rows() {
            assert!(min_dist_to_spiral([r[0], r[1]], &cfg) < 1e-4);
        }
    }

    #[test]
    fn noisy_samples_stay_inside_tail_bound() {
        let cfg = SpiralConfig::default();
        let pts: Array2<f64> = sample_spiral(&mut seeded(2), 10_000, &cfg);
        let max_r = pts.rows().into_iter().map(|r| r[0].hypot(r[1])).fold(0.0, f64::max);
        assert!(max_r <= 1.0 + 5.0 * cfg.noise_sigma, "{max_r}");
    }

    #[test]
    fn angles_are_uniform() {
        // On the noiseless curve θ = 5π·‖x‖, so the radius histogram is the θ histogram.
        let cfg = noiseless();
        let n = 20_000;
        let bins = 20;
        let pts: Array2<f64> = sample_spiral(&mut seeded(3), n, &cfg);
        let mut counts = vec![0usize; bins];
        for r in pts.rows() {
            let u = r[0].hypot(r[1]);
            counts[((u * bins as f64) as usize).min(bins - 1)] += 1;
        }
        let expect = n as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        // 99th percentile of χ² with 19 degrees of freedom.
        assert!(chi2 < 36.19, "chi2 {chi2}");
    }

    #[test]
    fn distance_examples() {
        let cfg = SpiralConfig::default();
        assert!(min_dist_to_spiral([0.0, 0.0], &cfg) < 1e-12);
        let brute = {
            let n = 1_000_000;
            (0..n)
                .map(|i| {
                    let th = cfg.theta_max * i as f64 / (n - 1) as f64;
                    let (x, y) = raw_point(th, cfg.theta_max);
                    (x - 1.0).hypot(y)
                })
                .fold(f64::INFINITY, f64::min)
        };
        let d = min_dist_to_spiral([1.0, 0.0], &cfg);
        assert!((d - brute).abs() < 1e-4, "{d} vs {brute}");
        assert!(d > 0.0);
    }

    #[test]
    fn refined_grid_agrees_with_default() {
        let cfg = SpiralConfig::default();
        let fine = SpiralConfig {
            distance_resolution: 100_000,
            ..Default::default()
        };
        let mut rng = seeded(4);
        for _ in 0..200 {
            let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let (a, b) = (min_dist_to_spiral(p, &cfg), min_dist_to_spiral(p, &fine));
            assert!((a - b).abs() < 1e-4, "{p:?}: {a} vs {b}");
            assert!(a >= b - 1e-12);
        }
    }

    #[test]
    fn ood_points_respect_the_buffer() {
        let cfg = SpiralConfig::default();
        let pts: Array2<f64> = sample_ood(&mut seeded(5), 500, &cfg).unwrap();
        for r in pts.rows() {
            assert!(r[0].abs() <= 1.0 && r[1].abs() <= 1.0);
            assert!(min_dist_to_spiral([r[0], r[1]], &cfg) > cfg.epsilon_buffer);
        }
        assert!(sample_ood::<f64, _>(&mut seeded(5), 0, &cfg).is_err());
    }

    #[test]
    fn infeasible_buffer_is_reported() {
        let cfg = SpiralConfig {
            epsilon_buffer: 2.9,
            distance_resolution: 1000,
            ..Default::default()
        };
        let err = sample_ood::<f64, _>(&mut seeded(6), 10, &cfg).unwrap_err();
        assert!(matches!(err, Error::Misconfigured(_)), "{err:?}");
    }

    #[test]
    fn ood_acceptance_fraction_is_stable_across_seeds() {
        let cfg = SpiralConfig::default();
        let n = 4000;
        let frac = |seed| {
            let mut rng = seeded(seed);
            (0..n)
                .filter(|_| {
                    let p = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
                    min_dist_to_spiral(p, &cfg) > cfg.epsilon_buffer
                })
                .count() as f64
                / n as f64
        };
        let (a, b) = (frac(7), frac(8));
        let p = (a + b) / 2.0;
        let sd = (2.0 * p * (1.0 - p) / n as f64).sqrt();
        assert!((a - b).abs() < 3.0 * sd, "{a} vs {b}");
        // The excluded tube has area ≈ 2ε·(curve length ≈ 8.3) out of 4.
        assert!((0.85..0.95).contains(&p), "{p}");
    }

    #[test]
    fn regression_targets_follow_the_condition_on_the_grid() {
        let cfg = noiseless();
        let ds: TaskDataset<f64> = build_regression_dataset(&mut seeded(9), 300, &cfg).unwrap();
        assert_eq!(ds.targets.ncols(), 2 * HORIZON);
        assert_eq!(ds.conditions.ncols(), 2);
        let step = cfg.theta_max / (cfg.grid_resolution - 1) as f64;
        for i in 0..ds.len() {
            let c = ds.conditions.row(i);
            let k = (c[0].hypot(c[1]) * (cfg.grid_resolution - 1) as f64).round() as usize;
            let (cx, cy) = raw_point(k as f64 * step, cfg.theta_max);
            assert!((cx - c[0]).abs() < 1e-12 && (cy - c[1]).abs() < 1e-12);
            assert!(k + HORIZON < cfg.grid_resolution);
            for (h, p) in target_points(&ds.targets.row(i).to_owned()).iter().enumerate() {
                let (x, y) = raw_point((k + h + 1) as f64 * step, cfg.theta_max);
                assert!((p[0] - x).abs() < 1e-12 && (p[1] - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn first_grid_window_starts_at_origin() {
        let cfg = noiseless();
        // With one admissible start index every sample is the k = 0 window.
        let tiny = SpiralConfig {
            grid_resolution: HORIZON + 1,
            ..cfg
        };
        let ds: TaskDataset<f64> = build_regression_dataset(&mut seeded(10), 3, &tiny).unwrap();
        let step = tiny.theta_max / HORIZON as f64;
        for i in 0..3 {
            assert_eq!(ds.conditions.row(i).to_vec(), vec![0.0, 0.0]);
            let (x, y) = raw_point(step, tiny.theta_max);
            assert!((ds.targets[[i, 0]] - x).abs() < 1e-15 && (ds.targets[[i, 1]] - y).abs() < 1e-15);
        }
        let too_small = SpiralConfig {
            grid_resolution: HORIZON,
            ..Default::default()
        };
        assert!(build_regression_dataset::<f64, _>(&mut seeded(10), 3, &too_small).is_err());
    }

    #[test]
    fn regression_targets_are_near_the_curve() {
        let cfg = SpiralConfig::default();
        let ds: TaskDataset<f64> = build_regression_dataset(&mut seeded(11), 300, &cfg).unwrap();
        for i in 0..ds.len() {
            for p in target_points(&ds.targets.row(i).to_owned()) {
                assert!(min_dist_to_spiral(p, &cfg) < 5.0 * cfg.noise_sigma);
            }
        }
    }

    fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            let v = a[i].min(b[j]);
            while i < a.len() && a[i] <= v {
                i += 1;
            }
            while j < b.len() && b[j] <= v {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn generation_marginals_match() {
        let cfg = SpiralConfig::default();
        let n = 3000;
        let ds: TaskDataset<f64> = build_generation_dataset(&mut seeded(12), n, &cfg).unwrap();
        assert_eq!((ds.conditions.ncols(), ds.targets.ncols()), (2, 2));
        // Two-sample KS critical value at the 1% level.
        let crit = 1.628 * (2.0 / n as f64).sqrt();
        for col in 0..2 {
            let mut a = ds.conditions.column(col).to_vec();
            let mut b = ds.targets.column(col).to_vec();
            let d = ks_statistic(&mut a, &mut b);
            assert!(d < crit, "column {col}: D={d} crit={crit}");
        }
        for i in 0..n {
            let dx = ds.targets[[i, 0]] - ds.conditions[[i, 0]];
            let dy = ds.targets[[i, 1]] - ds.conditions[[i, 1]];
            assert!(dx.hypot(dy) >= 1e-9);
        }
    }

    #[test]
    fn id_and_ood_sets_are_separated() {
        let cfg = SpiralConfig::default();
        let mut rng = seeded(13);
        let id: TaskDataset<f64> = build_regression_dataset(&mut rng, 1000, &cfg).unwrap();
        let ood: Array2<f64> = sample_ood(&mut rng, 300, &cfg).unwrap();
        let near = id
            .conditions
            .rows()
            .into_iter()
            .filter(|r| min_dist_to_spiral([r[0], r[1]], &cfg) < 5.0 * cfg.noise_sigma + 1e-4)
            .count();
        assert!(near as f64 >= 0.99 * 1000.0);
        assert!(ood
            .rows()
            .into_iter()
            .all(|r| min_dist_to_spiral([r[0], r[1]], &cfg) > cfg.epsilon_buffer));
    }

    #[test]
    fn datasets_are_deterministic_per_seed() {
        let cfg = SpiralConfig::default();
        for task in [TaskKind::Regression, TaskKind::Generation] {
            let a: TaskDataset<f64> = build_dataset(task, &mut seeded(14), 50, &cfg).unwrap();
            let b: TaskDataset<f64> = build_dataset(task, &mut seeded(14), 50, &cfg).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let cfg = SpiralConfig::default();
        let ds: TaskDataset<f64> = build_regression_dataset(&mut seeded(15), 40, &cfg).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(
            &mut buf,
            ds.task,
            SplitLabel::Cal,
            ds.conditions.view(),
            Some(ds.targets.view()),
        )
        .unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("regression,2,20\n0,CAL,"));
        let back: DatasetFile<f64> = read_dataset_csv(buf.as_slice()).unwrap();
        assert_eq!(back.task, TaskKind::Regression);
        assert_eq!((back.k, back.d), (2, 20));
        assert_eq!(back.conditions, ds.conditions);
        assert_eq!(back.targets.unwrap(), ds.targets);
        assert!(back.labels.iter().all(|&l| l == SplitLabel::Cal));
    }

    #[test]
    fn ood_csv_has_empty_targets() {
        let cfg = SpiralConfig::default();
        let ood: Array2<f64> = sample_ood(&mut seeded(16), 5, &cfg).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&mut buf, TaskKind::Generation, SplitLabel::Ood, ood.view(), None).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(",,"));
        let back: DatasetFile<f64> = read_dataset_csv(buf.as_slice()).unwrap();
        assert!(back.targets.is_none());
        assert_eq!(back.conditions, ood);

        let mut empty = Vec::new();
        let none = Array2::<f64>::zeros((0, 2));
        write_dataset_csv(&mut empty, TaskKind::Regression, SplitLabel::Ood, none.view(), None).unwrap();
        assert_eq!(String::from_utf8(empty.clone()).unwrap(), "regression,2,20\n");
        assert_eq!(
            read_dataset_csv::<f64, _>(empty.as_slice()).unwrap().conditions.nrows(),
            0
        );
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(read_dataset_csv::<f64, _>("".as_bytes()).is_err());
        assert!(read_dataset_csv::<f64, _>("spiral,2,2\n".as_bytes()).is_err());
        assert!(read_dataset_csv::<f64, _>("generation,2,2\n0,ID,0.1,0.2,0.3\n".as_bytes()).is_err());
        assert!(read_dataset_csv::<f64, _>("generation,2,2\n0,XX,0.1,0.2,0.3,0.4\n".as_bytes()).is_err());
        assert!(
            read_dataset_csv::<f64, _>("generation,2,2\n0,ID,0.1,0.2,0.3,0.4\n1,OOD,0.1,0.2,,\n".as_bytes()).is_err()
        );
    }

    #[test]
    fn labels_and_tasks_round_trip() {
        for l in [SplitLabel::Id, SplitLabel::Ood, SplitLabel::Cal, SplitLabel::Test] {
            assert_eq!(l.to_string().parse::<SplitLabel>().unwrap(), l);
        }
        for t in [TaskKind::Regression, TaskKind::Generation] {
            assert_eq!(t.to_string().parse::<TaskKind>().unwrap(), t);
        }
    }
}
