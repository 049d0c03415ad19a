//! Keyframe selection with an exponential threshold function.
//!
//! Each frame is scored against the current reference keyframe by four
//! dimensionless factors (temporal, covisibility, translation, rotation):
//!
//! ```text
//! T_H = Σ_i w_i · (exp(c_i · x_i) − 1),   c = (α, β, γ, δ)
//! ```
//!
//! and promoted to keyframe when `T_H > q`.

use thiserror::Error;

use crate::geometry::Pose;

#[derive(Debug, Error, PartialEq)]
pub enum KeyframeError {
    #[error("frame {0} tracks no points")]
    DegenerateFrame(u64),
    #[error("observation stream is empty")]
    EmptyInput,
    #[error("frame indices must increase strictly ({previous} then {next})")]
    NonIncreasing { previous: u64, next: u64 },
    #[error("frame {frame}: shared_with_reference ({shared}) exceeds tracked_points ({tracked})")]
    SharedExceedsTracked { frame: u64, shared: usize, tracked: usize },
    #[error("invalid keyframe config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FactorVector {
    pub t_i: f64,
    pub r_a: f64,
    pub t_r: f64,
    pub r_o: f64,
}

impl FactorVector {
    pub fn new(t_i: f64, r_a: f64, t_r: f64, r_o: f64) -> Self {
        Self { t_i, r_a, t_r, r_o }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.t_i, self.r_a, self.t_r, self.r_o]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframeConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    /// Diagonal of the weight matrix.
    pub weights: [f64; 4],
    pub q: f64,
    pub norm_frames: f64,
    pub norm_trans: f64,
    pub norm_rot: f64,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            delta: 1.0,
            weights: [0.25; 4],
            q: 0.4,
            norm_frames: 30.0,
            norm_trans: 0.1,
            norm_rot: 0.2,
        }
    }
}

impl KeyframeConfig {
    pub fn coefficients(&self) -> [f64; 4] {
        [self.alpha, self.beta, self.gamma, self.delta]
    }

    pub fn validate(&self) -> Result<(), KeyframeError> {
        let bad = |m: String| Err(KeyframeError::InvalidConfig(m));
        if self.coefficients().iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return bad("alpha, beta, gamma and delta must be positive".into());
        }
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("weights must be non-negative".into());
        }
        if !self.weights.iter().any(|w| *w > 0.0) {
            return bad("at least one weight must be positive".into());
        }
        if !(self.q > 0.0) {
            return bad(format!("q must be positive, got {}", self.q));
        }
        if !(self.norm_frames > 0.0 && self.norm_trans > 0.0 && self.norm_rot > 0.0) {
            return bad("normalizers must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameObservation {
    pub frame_index: u64,
    /// Camera-from-world.
    pub pose: Pose,
    pub tracked_points: usize,
    pub shared_with_reference: usize,
}

/// Factors of `current` relative to the reference keyframe.
pub fn compute_factors(
    current: &FrameObservation,
    reference: &FrameObservation,
    cfg: &KeyframeConfig,
) -> Result<FactorVector, KeyframeError> {
    if current.tracked_points == 0 {
        return Err(KeyframeError::DegenerateFrame(current.frame_index));
    }
    if current.shared_with_reference > current.tracked_points {
        return Err(KeyframeError::SharedExceedsTracked {
            frame: current.frame_index,
            shared: current.shared_with_reference,
            tracked: current.tracked_points,
        });
    }
    if current.frame_index <= reference.frame_index {
        return Err(KeyframeError::NonIncreasing {
            previous: reference.frame_index,
            next: current.frame_index,
        });
    }
    let relative = current.pose.compose(&reference.pose.inverse());
    Ok(FactorVector {
        t_i: (current.frame_index - reference.frame_index) as f64 / cfg.norm_frames,
        r_a: 1.0 - current.shared_with_reference as f64 / current.tracked_points as f64,
        t_r: relative.translation.norm() / cfg.norm_trans,
        r_o: relative.angle() / cfg.norm_rot,
    })
}

pub fn threshold_value(x: &FactorVector, cfg: &KeyframeConfig) -> f64 {
    x.as_array()
        .iter()
        .zip(cfg.coefficients())
        .zip(cfg.weights)
        .map(|((xi, ci), wi)| wi * (ci * xi).exp_m1())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub is_keyframe: bool,
    pub t_h: f64,
    pub factors: FactorVector,
}

/// Keyframe iff `T_H > q` (strict).
pub fn decide(
    current: &FrameObservation,
    reference: &FrameObservation,
    cfg: &KeyframeConfig,
) -> Result<Decision, KeyframeError> {
    let factors = compute_factors(current, reference, cfg)?;
    let t_h = threshold_value(&factors, cfg);
    Ok(Decision {
        is_keyframe: t_h > cfg.q,
        t_h,
        factors,
    })
}

/// One row of the per-frame decision table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionRow {
    pub frame_index: u64,
    pub t_h: f64,
    pub is_keyframe: bool,
}

/// Sequential selection over a stream; the first frame is always a keyframe.
pub fn select_keyframes(stream: &[FrameObservation], cfg: &KeyframeConfig) -> Result<Vec<u64>, KeyframeError> {
    Ok(select_keyframes_with_table(stream, cfg)?
        .into_iter()
        .filter(|r| r.is_keyframe)
        .map(|r| r.frame_index)
        .collect())
}

pub fn select_keyframes_with_table(
    stream: &[FrameObservation],
    cfg: &KeyframeConfig,
) -> Result<Vec<DecisionRow>, KeyframeError> {
    cfg.validate()?;
    let first = stream.first().ok_or(KeyframeError::EmptyInput)?;
    for w in stream.windows(2) {
        if w[1].frame_index <= w[0].frame_index {
            return Err(KeyframeError::NonIncreasing {
                previous: w[0].frame_index,
                next: w[1].frame_index,
            });
        }
    }
    let mut rows = vec![DecisionRow {
        frame_index: first.frame_index,
        t_h: 0.0,
        is_keyframe: true,
    }];
    let mut reference = first;
    for obs in &stream[1..] {
        let d = decide(obs, reference, cfg)?;
        rows.push(DecisionRow {
            frame_index: obs.frame_index,
            t_h: d.t_h,
            is_keyframe: d.is_keyframe,
        });
        if d.is_keyframe {
            reference = obs;
        }
    }
    Ok(rows)
}
