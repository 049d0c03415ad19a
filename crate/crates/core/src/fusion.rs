//! Centralized multi-robot session: collect robot maps and trajectories,
//! align them coarse-to-fine, merge, sample and smooth.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::cloud::PointCloud;
use crate::cloudops::{self, CloudOpsError, GaussianFilterParams, ReductionRatio};
use crate::evaluation::Trajectory;
use crate::geometry::Pose;
use crate::io::{self, fmt6, Config, IoError, SessionManifest};
use crate::registration::{self, GicpParams, RegistrationError};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("session has no robots")]
    EmptySession,
    #[error("robot {0} is already registered")]
    DuplicateRobot(String),
    #[error("robot {robot}: missing {field}")]
    MissingField { robot: String, field: &'static str },
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    CloudOps(#[from] CloudOpsError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotRecord {
    pub robot_id: String,
    /// World-to-robot.
    pub initial_pose: Pose,
    pub local_cloud: PointCloud,
    pub local_trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    pub overlap_radius: f64,
    pub voxel_size: f64,
    pub gicp: GicpParams,
    pub filter: GaussianFilterParams,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self::from(&Config::default())
    }
}

impl From<&Config> for FusionParams {
    fn from(c: &Config) -> Self {
        Self {
            overlap_radius: c.overlap_radius,
            voxel_size: c.voxel_size,
            gicp: c.gicp,
            filter: c.filter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairStatus {
    /// GICP refined the coarse alignment.
    Refined,
    /// No mutual neighbours: the coarse alignment is final.
    NoOverlap,
    /// GICP failed; the coarse alignment was kept.
    GicpFailed(String),
}

impl PairStatus {
    fn label(&self) -> &'static str {
        match self {
            Self::Refined => "refined",
            Self::NoOverlap => "no_overlap",
            Self::GicpFailed(_) => "gicp_failed",
        }
    }
}

/// Outcome of aligning one robot against the accumulated map.
#[derive(Debug, Clone, PartialEq)]
pub struct PairReport {
    pub robot_id: String,
    pub n_prime: usize,
    pub loop_detected: bool,
    /// Correction applied to the robot's coarse-aligned cloud.
    pub fine_transform: Pose,
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub status: PairStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionReport {
    /// One entry per robot after the first, in robot id order.
    pub pairs: Vec<PairReport>,
    /// Fine correction per robot (identity for the first robot and for
    /// unrefined pairs).
    pub corrections: BTreeMap<String, Pose>,
    pub merged_points: usize,
    pub sampled_points: usize,
    pub filtered_points: usize,
    pub reduction: ReductionRatio,
}

impl FusionReport {
    pub fn to_entries(&self) -> Vec<(String, String)> {
        let mut e = vec![("robots".to_string(), self.corrections.len().to_string())];
        for p in &self.pairs {
            let k = |f: &str| format!("pair.{}.{f}", p.robot_id);
            let q = p.fine_transform.quaternion();
            let t = p.fine_transform.translation;
            let pose = [t.x, t.y, t.z, q.x, q.y, q.z, q.w].map(fmt6).join(" ");
            let trace: Vec<String> = p.cost_trace.iter().map(|c| fmt6(*c)).collect();
            e.push((k("n_prime"), p.n_prime.to_string()));
            e.push((k("loop_detected"), p.loop_detected.to_string()));
            e.push((k("status"), p.status.label().to_string()));
            if let PairStatus::GicpFailed(m) = &p.status {
                e.push((k("error"), m.clone()));
            }
            e.push((k("fine_transform"), pose));
            e.push((k("fine_rotation_deg"), fmt6(p.fine_transform.angle().to_degrees())));
            e.push((k("fine_translation"), fmt6(t.norm())));
            e.push((k("gicp_iterations"), p.iterations.to_string()));
            e.push((k("gicp_converged"), p.converged.to_string()));
            e.push((k("gicp_cost_trace"), trace.join(" ")));
        }
        e.push(("points.merged".into(), self.merged_points.to_string()));
        e.push(("points.sampled".into(), self.sampled_points.to_string()));
        e.push(("points.filtered".into(), self.filtered_points.to_string()));
        e.push(("reduction_percent".into(), fmt6(self.reduction.0)));
        e
    }
}

/// Robot records keyed by id; fusion visits them in id order, so the
/// result does not depend on registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Session {
    robots: BTreeMap<String, RobotRecord>,
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_robot(&mut self, record: RobotRecord) -> Result<(), FusionError> {
        if self.robots.contains_key(&record.robot_id) {
            return Err(FusionError::DuplicateRobot(record.robot_id));
        }
        self.robots.insert(record.robot_id.clone(), record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.robots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.robots.is_empty()
    }

    pub fn robots(&self) -> impl Iterator<Item = &RobotRecord> {
        self.robots.values()
    }

    /// Loads every robot listed in a manifest. Each robot needs a cloud and
    /// a pose; the trajectory is optional.
    pub fn from_manifest(manifest: &SessionManifest) -> Result<Self, FusionError> {
        let mut session = Self::new();
        for (id, entry) in &manifest.robots {
            let missing = |field| FusionError::MissingField {
                robot: id.clone(),
                field,
            };
            let cloud_path = entry.cloud.as_ref().ok_or_else(|| missing("cloud"))?;
            let pose = entry.pose.ok_or_else(|| missing("pose"))?;
            let local_trajectory = entry.trajectory.as_deref().map(io::read_tum).transpose()?;
            session.register_robot(RobotRecord {
                robot_id: id.clone(),
                initial_pose: pose,
                local_cloud: io::read_ply(cloud_path)?,
                local_trajectory,
            })?;
        }
        Ok(session)
    }

    pub fn read_manifest(path: &Path) -> Result<(Self, Config), FusionError> {
        let manifest = io::read_manifest(path)?;
        Ok((Self::from_manifest(&manifest)?, manifest.config))
    }

    /// Coarse-aligns every robot, refines each against the accumulated map
    /// with GICP when they overlap, then samples and smooths the result.
    pub fn fuse(&self, params: &FusionParams) -> Result<(PointCloud, FusionReport), FusionError> {
        let mut records = self.robots.values();
        let first = records.next().ok_or(FusionError::EmptySession)?;
        let mut map = registration::coarse_align(&first.local_cloud, &first.initial_pose);
        let mut corrections = BTreeMap::from([(first.robot_id.clone(), Pose::identity())]);
        let mut pairs = Vec::new();

        for rec in records {
            let coarse = registration::coarse_align(&rec.local_cloud, &rec.initial_pose);
            let overlap = registration::find_overlap(&map, &coarse, params.overlap_radius)?;
            let mut report = PairReport {
                robot_id: rec.robot_id.clone(),
                n_prime: overlap.n_prime,
                loop_detected: overlap.loop_detected(),
                fine_transform: Pose::identity(),
                cost_trace: Vec::new(),
                iterations: 0,
                converged: false,
                status: PairStatus::NoOverlap,
            };
            if overlap.loop_detected() {
                match registration::gicp(&coarse, &map, &Pose::identity(), &params.gicp) {
                    Ok(fine) => {
                        report.fine_transform = fine.transform;
                        report.cost_trace = fine.cost_trace;
                        report.iterations = fine.iterations;
                        report.converged = fine.converged;
                        report.status = PairStatus::Refined;
                    }
                    Err(e) => {
                        log::warn!(
                            "robot {}: fine alignment failed ({e}); keeping coarse alignment",
                            rec.robot_id
                        );
                        report.status = PairStatus::GicpFailed(e.to_string());
                    }
                }
            }
            if report.status == PairStatus::Refined {
                map = registration::fuse_pair(&map, &coarse, &report.fine_transform);
            } else {
                map.append(&coarse);
            }
            corrections.insert(rec.robot_id.clone(), report.fine_transform);
            pairs.push(report);
        }

        let merged_points = map.len();
        let sampled = cloudops::uniform_sample(&map, params.voxel_size)?;
        let sampled_points = sampled.len();
        let filtered = cloudops::gaussian_filter(&sampled, &params.filter)?;
        let reduction = cloudops::reduction_ratio(merged_points.max(1), sampled_points)?;
        let report = FusionReport {
            pairs,
            corrections,
            merged_points,
            sampled_points,
            filtered_points: filtered.len(),
            reduction,
        };
        Ok((filtered, report))
    }

    /// Every robot's trajectory in the world frame:
    /// `correction ∘ initial_pose⁻¹ ∘ local`.
    pub fn fuse_trajectories(&self, corrections: &BTreeMap<String, Pose>) -> BTreeMap<String, Trajectory> {
        self.robots
            .values()
            .filter_map(|rec| {
                let traj = rec.local_trajectory.as_ref()?;
                let fine = corrections.get(&rec.robot_id).copied().unwrap_or_default();
                let to_world = fine.compose(&rec.initial_pose.inverse());
                Some((rec.robot_id.clone(), traj.transformed(&to_world)))
            })
            .collect()
    }
}

/// All samples of `trajectories` ordered by timestamp (ties by robot id).
pub fn combined_view(trajectories: &BTreeMap<String, Trajectory>) -> Vec<(f64, String, Pose)> {
    let mut all: Vec<(f64, String, Pose)> = trajectories
        .iter()
        .flat_map(|(id, t)| t.samples().iter().map(move |(s, p)| (*s, id.clone(), *p)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    all
}

/// Convenience wrapper over [`Session::fuse`].
pub fn fuse_session(session: &Session, params: &FusionParams) -> Result<(PointCloud, FusionReport), FusionError> {
    session.fuse(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(n: usize, seed: u64, offset: Vector3<f64>) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random()) + offset)
                .collect(),
        )
    }

    fn record(id: &str, pose: Pose, cloud: PointCloud) -> RobotRecord {
        RobotRecord {
            robot_id: id.into(),
            initial_pose: pose,
            local_cloud: cloud,
            local_trajectory: None,
        }
    }

    #[test]
    fn registration_rules() {
        let mut s = Session::new();
        assert!(matches!(
            s.fuse(&FusionParams::default()),
            Err(FusionError::EmptySession)
        ));
        s.register_robot(record("a", Pose::identity(), blob(10, 1, Vector3::zeros())))
            .unwrap();
        assert_eq!(s.len(), 1);
        assert!(matches!(
            s.register_robot(record("a", Pose::identity(), PointCloud::default())),
            Err(FusionError::DuplicateRobot(id)) if id == "a"
        ));
    }

    #[test]
    fn single_robot_is_sampled_and_filtered() {
        let cloud = blob(400, 2, Vector3::zeros());
        let mut s = Session::new();
        s.register_robot(record("a", Pose::identity(), cloud.clone())).unwrap();
        let params = FusionParams {
            voxel_size: 0.2,
            ..FusionParams::default()
        };
        let (map, report) = s.fuse(&params).unwrap();
        let expect =
            cloudops::gaussian_filter(&cloudops::uniform_sample(&cloud, 0.2).unwrap(), &params.filter).unwrap();
        assert_eq!(map, expect);
        assert!(report.pairs.is_empty());
        assert_eq!(report.merged_points, 400);
        assert_eq!(report.sampled_points, report.filtered_points);
    }

    #[test]
    fn disjoint_robots_skip_fine_phase() {
        let a = blob(300, 3, Vector3::zeros());
        let b = blob(300, 4, Vector3::zeros());
        let far = Pose::from_translation(Vector3::new(-10.0, 0.0, 0.0));
        let mut s = Session::new();
        s.register_robot(record("a", Pose::identity(), a.clone())).unwrap();
        s.register_robot(record("b", far, b.clone())).unwrap();
        let params = FusionParams {
            voxel_size: 0.1,
            ..FusionParams::default()
        };
        let (map, report) = s.fuse(&params).unwrap();
        assert!(!report.pairs[0].loop_detected);
        assert_eq!(report.pairs[0].status, PairStatus::NoOverlap);
        let coarse = PointCloud::concat(&a, &registration::coarse_align(&b, &far));
        let expect =
            cloudops::gaussian_filter(&cloudops::uniform_sample(&coarse, 0.1).unwrap(), &params.filter).unwrap();
        assert_eq!(map, expect);
    }

    #[test]
    fn trajectories_follow_inverse_initial_pose() {
        let t = Vector3::new(0.5, -0.25, 0.0);
        let traj = Trajectory::new(vec![(0.0, Pose::identity()), (0.1, Pose::rot_z(0.2))]).unwrap();
        let mut s = Session::new();
        let mut rec = record("b", Pose::from_translation(t), PointCloud::default());
        rec.local_trajectory = Some(traj.clone());
        s.register_robot(rec).unwrap();
        let out = s.fuse_trajectories(&BTreeMap::new());
        for ((t0, p), (t1, q)) in traj.samples().iter().zip(out["b"].samples()) {
            assert_eq!(t0, t1);
            assert!((q.translation - (p.translation - t)).norm() < 1e-15);
            assert_eq!(q.rotation, p.rotation);
        }
        let view = combined_view(&out);
        assert!(view.windows(2).all(|w| w[0].0 <= w[1].0));
    }

    #[test]
    fn report_lists_pipeline_counts() {
        let mut s = Session::new();
        s.register_robot(record("a", Pose::identity(), blob(200, 5, Vector3::zeros())))
            .unwrap();
        let (_, report) = s.fuse(&FusionParams::default()).unwrap();
        let entries = report.to_entries();
        let get = |k: &str| entries.iter().find(|e| e.0 == k).map(|e| e.1.clone());
        assert_eq!(get("points.merged").as_deref(), Some("200"));
        assert!(get("reduction_percent").is_some());
    }
}
