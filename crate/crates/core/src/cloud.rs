use thiserror::Error;

use crate::geometry::{Point3, Pose};

#[derive(Debug, Error, PartialEq)]
pub enum CloudError {
    #[error("{points} points but {colors} colors")]
    ColorLengthMismatch { points: usize, colors: usize },
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
}

pub type Rgb = [u8; 3];

/// 3-D points with optional per-point colors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub colors: Option<Vec<Rgb>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points, colors: None }
    }

    pub fn with_colors(points: Vec<Point3>, colors: Vec<Rgb>) -> Result<Self, CloudError> {
        let cloud = Self {
            points,
            colors: Some(colors),
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<(), CloudError> {
        if let Some(c) = &self.colors {
            if c.len() != self.points.len() {
                return Err(CloudError::ColorLengthMismatch {
                    points: self.points.len(),
                    colors: c.len(),
                });
            }
        }
        if let Some(i) = self.points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(CloudError::NonFinite(i));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn color(&self, i: usize) -> Option<Rgb> {
        self.colors.as_ref().map(|c| c[i])
    }

    /// Applies `pose` to every point; colors are carried through.
    pub fn transformed(&self, pose: &Pose) -> Self {
        Self {
            points: pose.transform_points(&self.points),
            colors: self.colors.clone(),
        }
    }

    /// Subset by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self.colors.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
        }
    }

    /// Appends `other`. Colors survive only if both sides carry them
    /// (an empty side adopts the other's convention).
    pub fn append(&mut self, other: &PointCloud) {
        let colors = match (self.colors.take(), &other.colors) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if self.points.is_empty() => Some(b.clone()),
            (Some(a), None) if other.points.is_empty() => Some(a),
            (None, None) => None,
            _ => {
                log::warn!("appending clouds with and without colors; dropping colors");
                None
            }
        };
        self.points.extend_from_slice(&other.points);
        self.colors = colors;
    }

    pub fn concat(a: &PointCloud, b: &PointCloud) -> Self {
        let mut out = a.clone();
        out.append(b);
        out
    }
}
