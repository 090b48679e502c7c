//! Two-sided split-conformal calibration and detection metrics.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calibrated acceptance band `[q_lo, q_hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformalInterval<T> {
    pub q_lo: T,
    pub q_hi: T,
    pub alpha: f64,
    pub m_cal: usize,
    /// 1-based ranks actually used after clamping into `[1, M]`.
    pub k_lo: usize,
    pub k_hi: usize,
    /// Set when `M` is too small for `alpha` and both ranks were clamped to the extremes.
    pub degenerate: bool,
}

/// Rounds values within `1e-9` relative of an integer to that integer before
/// taking floor/ceil, so rational `alpha` such as `0.05` produces the exact ranks.
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x
    }
}

/// Unclamped ranks `(⌊(M+1)α/2⌋, ⌈(M+1)(1−α/2)⌉)`.
pub fn conformal_ranks(m: usize, alpha: f64) -> (i64, i64) {
    let m1 = (m + 1) as f64;
    let lo = snap(m1 * alpha / 2.0).floor() as i64;
    let hi = snap(m1 * (1.0 - alpha / 2.0)).ceil() as i64;
    (lo, hi)
}

pub fn calibrate<T: Float>(cal_scores: &[T], alpha: f64) -> Result<ConformalInterval<T>> {
    let m = cal_scores.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 calibration scores, got {m}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if cal_scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("calibration scores"));
    }
    let mut sorted = cal_scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (lo, hi) = conformal_ranks(m, alpha);
    let k_lo = lo.clamp(1, m as i64) as usize;
    let k_hi = hi.clamp(1, m as i64) as usize;
    let degenerate = lo < 1 && hi > m as i64;
    if degenerate {
        log::warn!(
            "calibration set of {m} scores is too small for alpha={alpha}: interval spans the full calibration range"
        );
    }
    Ok(ConformalInterval {
        q_lo: sorted[k_lo - 1],
        q_hi: sorted[k_hi - 1],
        alpha,
        m_cal: m,
        k_lo,
        k_hi,
        degenerate,
    })
}

/// Membership in the closed interval. NaN is never accepted.
pub fn accept<T: Float>(interval: &ConformalInterval<T>, score: T) -> bool {
    !score.is_nan() && interval.q_lo <= score && score <= interval.q_hi
}

/// Probability that a random OOD score exceeds a random ID score, ties counted
/// one half, via midranks (Mann–Whitney U).
pub fn auroc<T: Float>(id_scores: &[T], ood_scores: &[T]) -> Result<f64> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::Empty("AUROC score sets"));
    }
    if id_scores.iter().chain(ood_scores).any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUROC scores"));
    }
    let mut all: Vec<(T, bool)> = id_scores
        .iter()
        .map(|&s| (s, false))
        .chain(ood_scores.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut ood_rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        ood_rank_sum += midrank * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let n_ood = ood_scores.len() as f64;
    let n_id = id_scores.len() as f64;
    let u = ood_rank_sum - n_ood * (n_ood + 1.0) / 2.0;
    Ok(u / (n_ood * n_id))
}

/// Fraction of scores accepted by the interval.
pub fn acceptance_rate<T: Float>(interval: &ConformalInterval<T>, scores: &[T]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    Ok(scores.iter().filter(|&&s| accept(interval, s)).count() as f64 / scores.len() as f64)
}

/// Fraction of off-manifold scores that fall inside the acceptance band.
pub fn fpr_at_interval<T: Float>(interval: &ConformalInterval<T>, ood_scores: &[T]) -> Result<f64> {
    if interval.degenerate {
        log::warn!("FPR computed against a degenerate interval");
    }
    acceptance_rate(interval, ood_scores)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub coverage: f64,
    pub fpr: f64,
}

/// One calibration per `alpha`; coverage is measured on held-out ID scores.
pub fn coverage_sweep<T: Float>(
    cal_scores: &[T],
    id_test_scores: &[T],
    ood_scores: &[T],
    alphas: &[f64],
) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() {
        return Err(Error::Empty("alpha list"));
    }
    alphas
        .iter()
        .map(|&alpha| {
            let iv = calibrate(cal_scores, alpha)?;
            Ok(SweepRow {
                alpha,
                coverage: acceptance_rate(&iv, id_test_scores)?,
                fpr: fpr_at_interval(&iv, ood_scores)?,
            })
        })
        .collect()
}

/// Mean over samples of the per-dimension mean squared error.
pub fn mse<T: Float>(preds: &[Vec<T>], targets: &[Vec<T>]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if preds.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            what: "prediction count",
            expected: targets.len(),
            got: preds.len(),
        });
    }
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        if p.len() != t.len() || p.is_empty() {
            return Err(Error::DimensionMismatch {
                what: "prediction width",
                expected: t.len(),
                got: p.len(),
            });
        }
        let se: f64 = p
            .iter()
            .zip(t)
            .map(|(&a, &b)| {
                let d = (a - b).to_f64().unwrap_or(f64::NAN);
                d * d
            })
            .sum();
        total += se / p.len() as f64;
    }
    Ok(total / preds.len() as f64)
}

/// Detection summary for one scoring method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub auroc: f64,
    pub fpr: f64,
    /// Acceptance rate on held-out ID test scores.
    pub tpr_empirical: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

/// Calibrates on `cal`, then evaluates AUROC, FPR and coverage on the same
/// `id_test`/`ood` score sets.
pub fn detection_report<T: Float>(
    cal: &[T],
    id_test: &[T],
    ood: &[T],
    alpha: f64,
) -> Result<(ConformalInterval<T>, DetectionReport)> {
    let iv = calibrate(cal, alpha)?;
    let report = DetectionReport {
        auroc: auroc(id_test, ood)?,
        fpr: fpr_at_interval(&iv, ood)?,
        tpr_empirical: acceptance_rate(&iv, id_test)?,
        n_id: id_test.len(),
        n_ood: ood.len(),
    };
    Ok((iv, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_formula_examples() {
        assert_eq!(conformal_ranks(99, 0.05), (2, 98));
        assert_eq!(conformal_ranks(19, 0.1), (1, 19));
    }

    #[test]
    fn calibrate_picks_ranked_scores() {
        let scores: Vec<f64> = (1..=99).rev().map(|v| v as f64).collect();
        let iv = calibrate(&scores, 0.05).unwrap();
        assert_eq!((iv.q_lo, iv.q_hi), (2.0, 98.0));
        assert!(!iv.degenerate);
    }

    #[test]
    fn constant_scores_collapse_interval() {
        let iv = calibrate(&[0.7; 10], 0.2).unwrap();
        assert_eq!((iv.q_lo, iv.q_hi), (0.7, 0.7));
    }

    #[test]
    fn tiny_calibration_set_is_flagged() {
        // M=2, alpha=0.1: k_lo=0 -> clamped to 1, k_hi=3 -> clamped to 2
        let iv = calibrate(&[1.0, 2.0], 0.1).unwrap();
        assert!(iv.degenerate);
        assert_eq!((iv.q_lo, iv.q_hi), (1.0, 2.0));
        assert!(calibrate(&[1.0], 0.1).is_err());
        assert!(calibrate(&[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn accept_is_closed_and_rejects_nan() {
        let iv = calibrate(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap();
        assert!(accept(&iv, iv.q_lo));
        assert!(accept(&iv, iv.q_hi));
        assert!(!accept(&iv, iv.q_hi + 1e-9));
        assert!(!accept(&iv, f64::NAN));
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 0.0);
        let s = [0.3, 0.1, 0.1, 0.9];
        assert_eq!(auroc(&s, &s).unwrap(), 0.5);
        assert!(auroc::<f64>(&[], &[1.0]).is_err());
    }

    #[test]
    fn fpr_examples() {
        let iv = calibrate(&[1.0, 2.0, 3.0], 0.5).unwrap();
        assert_eq!(fpr_at_interval(&iv, &[10.0, 11.0]).unwrap(), 0.0);
        assert!(fpr_at_interval::<f64>(&iv, &[]).is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[vec![1.0, 2.0]], &[vec![1.0, 2.0]]).unwrap(), 0.0);
        assert_eq!(mse(&[vec![0.0, 0.0]], &[vec![1.0, 1.0]]).unwrap(), 1.0);
        assert!(mse(&[vec![0.0]], &[vec![1.0, 1.0]]).is_err());
        assert!(mse::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn separated_sweep_has_zero_fpr() {
        let cal: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
        let ood: Vec<f64> = (0..50).map(|i| 5.0 + i as f64).collect();
        for row in coverage_sweep(&cal, &cal, &ood, &[0.01, 0.05, 0.2, 0.5]).unwrap() {
            assert_eq!(row.fpr, 0.0);
        }
    }
}
