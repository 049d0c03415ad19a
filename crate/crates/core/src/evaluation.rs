//! Absolute trajectory error (ATE) with timestamp association and rigid
//! (SE(3), unit scale) Umeyama alignment.

use nalgebra::Matrix3;
use thiserror::Error;

use crate::geometry::{Point3, Pose};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("timestamps must increase strictly (sample {index}: {previous} then {next})")]
    NonIncreasing { index: usize, previous: f64, next: f64 },
    #[error("no pose pairs within max_dt = {0}")]
    EmptyAssociation(f64),
    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(String),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Timestamped poses (camera-to-world).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    samples: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(samples: Vec<(f64, Pose)>) -> Result<Self, EvalError> {
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(EvalError::NonIncreasing {
                    index: i + 1,
                    previous: w[0].0,
                    next: w[1].0,
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(f64, Pose)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positions(&self) -> Vec<Point3> {
        self.samples.iter().map(|(_, p)| p.translation).collect()
    }

    /// Left-multiplies every pose by `t` (re-expresses in another frame).
    pub fn transformed(&self, t: &Pose) -> Self {
        Self {
            samples: self.samples.iter().map(|(s, p)| (*s, t.compose(p))).collect(),
        }
    }
}

/// Greedy nearest-timestamp pairing: candidate pairs with `|Δt| ≤ max_dt`
/// are taken in order of `(|Δt|, est index, ref index)`, each pose used at
/// most once. Returns `(est_index, ref_index)` sorted by est index.
pub fn associate(est: &Trajectory, reference: &Trajectory, max_dt: f64) -> Result<Vec<(usize, usize)>, EvalError> {
    if !(max_dt > 0.0) {
        return Err(EvalError::InvalidInput(format!(
            "max_dt must be positive, got {max_dt}"
        )));
    }
    let ref_stamps: Vec<f64> = reference.samples.iter().map(|s| s.0).collect();
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (i, (t, _)) in est.samples.iter().enumerate() {
        // both lists are sorted, so the window is contiguous
        let lo = ref_stamps.partition_point(|&r| r < t - max_dt);
        for (j, &r) in ref_stamps.iter().enumerate().skip(lo) {
            let dt = (r - t).abs();
            if r > t + max_dt {
                break;
            }
            if dt <= max_dt {
                cands.push((dt, i, j));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_est = vec![false; est.len()];
    let mut used_ref = vec![false; reference.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in cands {
        if !used_est[i] && !used_ref[j] {
            used_est[i] = true;
            used_ref[j] = true;
            pairs.push((i, j));
        }
    }
    if pairs.is_empty() {
        return Err(EvalError::EmptyAssociation(max_dt));
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// Least-squares rigid transform mapping `est` positions onto `reference`.
pub fn umeyama_align(est: &[Point3], reference: &[Point3]) -> Result<Pose, EvalError> {
    if est.len() != reference.len() {
        return Err(EvalError::InvalidInput(format!(
            "{} estimated vs {} reference positions",
            est.len(),
            reference.len()
        )));
    }
    let n = est.len();
    if n < 3 {
        return Err(EvalError::DegenerateAlignment(format!(
            "need at least 3 pairs, got {n}"
        )));
    }
    let mu_e = est.iter().sum::<Point3>() / n as f64;
    let mu_r = reference.iter().sum::<Point3>() / n as f64;
    let mut cross = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (e, r) in est.iter().zip(reference) {
        let (de, dr) = (e - mu_e, r - mu_r);
        cross += dr * de.transpose();
        spread += de * de.transpose();
    }
    let sv = spread.symmetric_eigenvalues();
    let (lo, hi) = (sv.min(), sv.max());
    // collinear (or coincident) estimated positions leave rotation about the line free
    let mid = sv.sum() - lo - hi;
    if !(hi > 0.0) || mid <= 1e-12 * hi {
        return Err(EvalError::DegenerateAlignment("positions are collinear".into()));
    }
    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    Ok(Pose {
        rotation,
        translation: mu_r - rotation * mu_e,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AteReport {
    pub max: f64,
    pub med: f64,
    pub rmse: f64,
    pub std: f64,
    pub mean: f64,
    pub per_pose_errors: Vec<f64>,
    /// Alignment applied to the estimate (identity when disabled).
    pub alignment: Pose,
}

impl AteReport {
    /// Statistics over per-pose error norms. Median is the lower middle
    /// element; `std` is the population standard deviation.
    pub fn from_errors(errors: Vec<f64>, alignment: Pose) -> Result<Self, EvalError> {
        if errors.is_empty() {
            return Err(EvalError::EmptyInput);
        }
        let n = errors.len() as f64;
        let mut sorted = errors.clone();
        sorted.sort_by(f64::total_cmp);
        let mean = errors.iter().sum::<f64>() / n;
        let mean_sq = errors.iter().map(|e| e * e).sum::<f64>() / n;
        let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            max: *sorted.last().unwrap(),
            med: sorted[(sorted.len() - 1) / 2],
            rmse: mean_sq.sqrt(),
            std: var.sqrt(),
            mean,
            per_pose_errors: errors,
            alignment,
        })
    }
}

/// ATE of `est` against `reference` (the reference provides the frame).
pub fn ate(est: &Trajectory, reference: &Trajectory, align: bool, max_dt: f64) -> Result<AteReport, EvalError> {
    let pairs = associate(est, reference, max_dt)?;
    let est_pos: Vec<Point3> = pairs.iter().map(|&(i, _)| est.samples[i].1.translation).collect();
    let ref_pos: Vec<Point3> = pairs.iter().map(|&(_, j)| reference.samples[j].1.translation).collect();
    let alignment = if align {
        umeyama_align(&est_pos, &ref_pos)?
    } else {
        Pose::identity()
    };
    let errors = est_pos
        .iter()
        .zip(&ref_pos)
        .map(|(e, r)| (r - alignment.transform_point(e)).norm())
        .collect();
    AteReport::from_errors(errors, alignment)
}

/// Running means of `(rmse, std)` over the first k runs.
pub fn cumulative_ate(runs: &[AteReport]) -> Result<Vec<(f64, f64)>, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let (mut sr, mut ss) = (0.0, 0.0);
    Ok(runs
        .iter()
        .enumerate()
        .map(|(k, r)| {
            sr += r.rmse;
            ss += r.std;
            (sr / (k + 1) as f64, ss / (k + 1) as f64)
        })
        .collect())
}

/// Mean of `values`, optionally after dropping one maximum and one minimum.
pub fn trim_mean_runs(values: &[f64], drop_extremes: bool) -> Result<f64, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if !drop_extremes {
        return Ok(values.iter().sum::<f64>() / values.len() as f64);
    }
    if values.len() < 3 {
        return Err(EvalError::InvalidInput(format!(
            "dropping extremes needs at least 3 values, got {}",
            values.len()
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let inner = &sorted[1..sorted.len() - 1];
    Ok(inner.iter().sum::<f64>() / inner.len() as f64)
}
