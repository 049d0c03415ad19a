//! Deterministic synthetic data with ground truth.
//!
//! Scenes are axis-aligned box rooms (floor plus four walls) centred on the
//! world origin. Each robot observes an azimuth sector of the room around
//! the centre; sector `i` of `n` starts at `i·(1−c)/(n−1)·2π` and spans
//! `c·2π`, so neighbouring robots overlap by a fraction `c − (1−c)/(n−1)` of
//! the full turn. All randomness comes from a seeded ChaCha8 stream.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::cloud::{PointCloud, Rgb};
use crate::evaluation::Trajectory;
use crate::features::{Descriptor, FrameFeatures, FrameProjection, Homography, Keypoint, MatchConfig};
use crate::geometry::{Point3, Pose};
use crate::io::{self, IoError, ProjectionSpec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Room {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl Room {
    /// Floor, then walls at x = −L/2, x = +L/2, y = −W/2, y = +W/2.
    pub fn surfaces(&self) -> [Surface; 5] {
        let (hx, hy, h) = (self.length / 2.0, self.width / 2.0, self.height);
        [
            Surface {
                origin: Point3::new(-hx, -hy, 0.0),
                u: Vector3::new(self.length, 0.0, 0.0),
                v: Vector3::new(0.0, self.width, 0.0),
                color: [128, 128, 128],
            },
            Surface {
                origin: Point3::new(-hx, -hy, 0.0),
                u: Vector3::new(0.0, self.width, 0.0),
                v: Vector3::new(0.0, 0.0, h),
                color: [200, 60, 60],
            },
            Surface {
                origin: Point3::new(hx, -hy, 0.0),
                u: Vector3::new(0.0, self.width, 0.0),
                v: Vector3::new(0.0, 0.0, h),
                color: [60, 200, 60],
            },
            Surface {
                origin: Point3::new(-hx, -hy, 0.0),
                u: Vector3::new(self.length, 0.0, 0.0),
                v: Vector3::new(0.0, 0.0, h),
                color: [60, 60, 200],
            },
            Surface {
                origin: Point3::new(-hx, hy, 0.0),
                u: Vector3::new(self.length, 0.0, 0.0),
                v: Vector3::new(0.0, 0.0, h),
                color: [200, 200, 60],
            },
        ]
    }

    /// Euclidean distance from `p` to the nearest room surface.
    pub fn surface_distance(&self, p: &Point3) -> f64 {
        self.surfaces()
            .iter()
            .map(|s| s.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    fn validate(&self) -> Result<(), SimError> {
        if [self.length, self.width, self.height]
            .iter()
            .any(|d| !(*d > 0.0 && d.is_finite()))
        {
            return Err(SimError::InvalidSpec("room dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Rectangle `origin + s·u + t·v`, `s, t ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surface {
    pub origin: Point3,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub color: Rgb,
}

impl Surface {
    pub fn area(&self) -> f64 {
        self.u.cross(&self.v).norm()
    }

    pub fn point(&self, s: f64, t: f64) -> Point3 {
        self.origin + self.u * s + self.v * t
    }

    pub fn distance(&self, p: &Point3) -> f64 {
        let d = p - self.origin;
        let s = (d.dot(&self.u) / self.u.norm_squared()).clamp(0.0, 1.0);
        let t = (d.dot(&self.v) / self.v.norm_squared()).clamp(0.0, 1.0);
        (p - self.point(s, t)).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotSpec {
    pub id: String,
    /// Exact world-to-robot pose.
    pub pose: Pose,
    pub trajectory_length: usize,
    /// Fraction of the full azimuth turn observed, in (0, 1].
    pub coverage: f64,
    /// Error `E` planted in the reported pose: the coarse-aligned cloud is
    /// `E` applied to the true world cloud.
    pub pose_error: Pose,
}

impl RobotSpec {
    pub fn new(id: impl Into<String>, pose: Pose, coverage: f64) -> Self {
        Self {
            id: id.into(),
            pose,
            trajectory_length: 50,
            coverage,
            pose_error: Pose::identity(),
        }
    }

    /// World-to-robot pose as the robot reports it.
    pub fn reported_pose(&self) -> Pose {
        self.pose.compose(&self.pose_error.inverse())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub room: Room,
    /// Surface points per m².
    pub density: f64,
    pub noise_sigma: f64,
    pub robots: Vec<RobotSpec>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            room: Room {
                length: 5.0,
                width: 5.0,
                height: 2.5,
            },
            density: 400.0,
            noise_sigma: 0.005,
            robots: Vec::new(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        self.room.validate()?;
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(SimError::InvalidSpec(format!(
                "density must be positive, got {}",
                self.density
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(SimError::InvalidSpec("noise_sigma must be non-negative".into()));
        }
        for r in &self.robots {
            if !(r.coverage > 0.0 && r.coverage <= 1.0) {
                return Err(SimError::InvalidSpec(format!(
                    "robot {}: coverage must be in (0, 1], got {}",
                    r.id, r.coverage
                )));
            }
        }
        let mut ids: Vec<&str> = self.robots.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(SimError::InvalidSpec("duplicate robot id".into()));
        }
        Ok(())
    }

    /// Azimuth window `[start, start + span)` of robot `index`.
    pub fn sector(&self, index: usize) -> (f64, f64) {
        let n = self.robots.len();
        let c = self.robots[index].coverage;
        let start = if n > 1 {
            index as f64 * (1.0 - c) / (n - 1) as f64 * TAU
        } else {
            0.0
        };
        (start, c * TAU)
    }
}

/// Whether `p`'s azimuth about the room centre lies in the window.
pub fn in_sector(p: &Point3, (start, span): (f64, f64)) -> bool {
    if span >= TAU {
        return true;
    }
    let az = p.y.atan2(p.x);
    (az - start).rem_euclid(TAU) < span
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotData {
    pub id: String,
    pub exact_pose: Pose,
    pub reported_pose: Pose,
    /// Observed points in the robot frame.
    pub cloud: PointCloud,
    /// Camera-to-robot-frame poses.
    pub trajectory: Trajectory,
    /// Camera-to-world poses.
    pub world_trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub ground_truth: PointCloud,
    pub robots: Vec<RobotData>,
}

/// Uniform surface samples, surface-major.
pub fn sample_room(room: &Room, density: f64, rng: &mut ChaCha8Rng) -> PointCloud {
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for s in room.surfaces() {
        let n = (s.area() * density).round() as usize;
        for _ in 0..n {
            points.push(s.point(rng.random(), rng.random()));
            colors.push(s.color);
        }
    }
    PointCloud {
        points,
        colors: Some(colors),
    }
}

const TRAJECTORY_RADIUS: f64 = 1.0;
const TRAJECTORY_DT: f64 = 0.1;

fn world_trajectory(room: &Room, (start, span): (f64, f64), len: usize) -> Trajectory {
    let radius = TRAJECTORY_RADIUS.min(0.4 * room.length.min(room.width));
    let z = room.height * 0.5;
    let samples = (0..len)
        .map(|k| {
            let theta = start + span * (k as f64 + 0.5) / len as f64;
            let pos = Vector3::new(radius * theta.cos(), radius * theta.sin(), z);
            let pose = Pose {
                rotation: Pose::rot_z(theta).rotation,
                translation: pos,
            };
            (k as f64 * TRAJECTORY_DT, pose)
        })
        .collect();
    Trajectory::new(samples).expect("timestamps are increasing")
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ground_truth = sample_room(&spec.room, spec.density, &mut rng);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| SimError::InvalidSpec(e.to_string()))?;
    let mut robots = Vec::with_capacity(spec.robots.len());
    for (i, r) in spec.robots.iter().enumerate() {
        let sector = spec.sector(i);
        let idx: Vec<usize> = (0..ground_truth.len())
            .filter(|&k| in_sector(&ground_truth.points[k], sector))
            .collect();
        let mut cloud = ground_truth.select(&idx).transformed(&r.pose);
        if spec.noise_sigma > 0.0 {
            for p in &mut cloud.points {
                *p += Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
            }
        }
        let world_trajectory = world_trajectory(&spec.room, sector, r.trajectory_length.max(1));
        let trajectory = world_trajectory.transformed(&r.pose);
        robots.push(RobotData {
            id: r.id.clone(),
            exact_pose: r.pose,
            reported_pose: r.reported_pose(),
            cloud,
            trajectory,
            world_trajectory,
        });
    }
    Ok(Scene { ground_truth, robots })
}

/// Scene spec text: `seed`, `room.length`, `room.width`, `room.height`,
/// `density`, `noise_sigma`, per robot `robot.<id>.pose`,
/// `robot.<id>.coverage`, `robot.<id>.frames`, `robot.<id>.error`
/// (poses as `tx ty tz qx qy qz qw`), and `fixture.*` keys for the match
/// fixture.
pub fn parse_spec(text: &str) -> Result<(SceneSpec, FixtureSpec), SimError> {
    let mut scene = SceneSpec::default();
    let mut fixture = FixtureSpec::default();
    let mut robots: std::collections::BTreeMap<String, RobotSpec> = Default::default();
    let mut unknown = Vec::new();
    for (line, key, value) in io::parse_key_values(text)? {
        let num = || -> Result<f64, SimError> {
            value.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                SimError::Io(IoError::TypeMismatch {
                    key: key.clone(),
                    expected: "number",
                    value: value.clone(),
                })
            })
        };
        let int = || -> Result<u64, SimError> {
            value.parse::<u64>().map_err(|_| {
                SimError::Io(IoError::TypeMismatch {
                    key: key.clone(),
                    expected: "non-negative integer",
                    value: value.clone(),
                })
            })
        };
        match key.as_str() {
            "seed" => scene.seed = int()?,
            "room.length" => scene.room.length = num()?,
            "room.width" => scene.room.width = num()?,
            "room.height" => scene.room.height = num()?,
            "density" => scene.density = num()?,
            "noise_sigma" => scene.noise_sigma = num()?,
            "fixture.inliers" => fixture.n_inliers = int()? as usize,
            "fixture.outliers" => fixture.n_outliers = int()? as usize,
            "fixture.pixel_noise" => fixture.pixel_noise = num()?,
            "fixture.width" => fixture.width = int()? as u32,
            "fixture.height" => fixture.height = int()? as u32,
            k => {
                let Some((id, field)) = k.strip_prefix("robot.").and_then(|t| t.rsplit_once('.')) else {
                    unknown.push(key.clone());
                    continue;
                };
                let r = robots
                    .entry(id.to_string())
                    .or_insert_with(|| RobotSpec::new(id, Pose::identity(), 1.0));
                let pose = || {
                    let f: Vec<&str> = value.split_whitespace().collect();
                    io::parse_pose_fields(line, &f)
                };
                match field {
                    "pose" => r.pose = pose()?,
                    "error" => r.pose_error = pose()?,
                    "coverage" => r.coverage = num()?,
                    "frames" => r.trajectory_length = int()? as usize,
                    _ => unknown.push(key.clone()),
                }
            }
        }
    }
    if !unknown.is_empty() {
        return Err(SimError::Io(IoError::UnknownKeys(unknown)));
    }
    scene.robots = robots.into_values().collect();
    fixture.seed = scene.seed;
    scene.validate()?;
    Ok((scene, fixture))
}

// ---------------------------------------------------------------- match fixtures

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureSpec {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub n_inliers: usize,
    pub n_outliers: usize,
    /// Standard deviation of inlier keypoint noise (px).
    pub pixel_noise: f64,
    /// Matching parameters the outliers are planted against.
    pub matching: MatchConfig,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 640,
            height: 480,
            n_inliers: 200,
            n_outliers: 50,
            pixel_noise: 1.0,
            matching: MatchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchFixture {
    pub frame_a: FrameFeatures,
    pub frame_b: FrameFeatures,
    /// Exact B→A pixel map.
    pub projection: Homography,
    /// Inlier correspondences `(index_in_A, index_in_B)`, ascending.
    pub true_pairs: Vec<(usize, usize)>,
    /// Outlier keypoints as `(index_in_A, index_in_B)`, ascending.
    pub outliers: Vec<(usize, usize)>,
}

fn random_descriptor(rng: &mut ChaCha8Rng) -> Descriptor {
    let mut d = [0u8; 32];
    rng.fill(&mut d);
    Descriptor(d)
}

fn flip_bits(d: &Descriptor, count: usize, rng: &mut ChaCha8Rng) -> Descriptor {
    let mut out = *d;
    let bits = rand::seq::index::sample(rng, Descriptor::BITS as usize, count);
    for b in bits {
        out.flip_bit(b);
    }
    out
}

/// Mild random plane-induced homography around the image centre (B→A).
fn random_homography(w: f64, h: f64, rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let angle = rng.random_range(-4.0f64..4.0).to_radians();
    let scale = rng.random_range(0.97..1.03);
    let (tx, ty) = (rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0));
    let (px, py) = (rng.random_range(-2e-5..2e-5), rng.random_range(-2e-5..2e-5));
    let (c, s) = (angle.cos() * scale, angle.sin() * scale);
    let centre = Matrix3::new(1.0, 0.0, w / 2.0, 0.0, 1.0, h / 2.0, 0.0, 0.0, 1.0);
    let centre_inv = Matrix3::new(1.0, 0.0, -w / 2.0, 0.0, 1.0, -h / 2.0, 0.0, 0.0, 1.0);
    let core = Matrix3::new(c, -s, tx, s, c, ty, px, py, 1.0);
    centre * core * centre_inv
}

const MAX_PLACEMENT_TRIES: usize = 1000;

pub fn generate_match_fixture(spec: &FixtureSpec) -> Result<MatchFixture, SimError> {
    if spec.n_inliers + spec.n_outliers == 0 {
        return Err(SimError::InvalidSpec("fixture needs at least one keypoint".into()));
    }
    if spec.width == 0 || spec.height == 0 {
        return Err(SimError::InvalidSpec("image size must be positive".into()));
    }
    if !(spec.pixel_noise >= 0.0 && spec.pixel_noise.is_finite()) {
        return Err(SimError::InvalidSpec("pixel_noise must be non-negative".into()));
    }
    spec.matching
        .validate()
        .map_err(|e| SimError::InvalidSpec(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let inside = |k: &Keypoint| k.u >= 0.0 && k.v >= 0.0 && k.u < w && k.v < h;
    let homography = Homography::new(random_homography(w, h, &mut rng))
        .ok_or_else(|| SimError::Generation("singular homography".into()))?;
    let noise = Normal::new(0.0, spec.pixel_noise).map_err(|e| SimError::InvalidSpec(e.to_string()))?;
    let r1 = spec.matching.radius_stage1;
    let min_back_error = 1.5 * spec.matching.radius_stage2;

    // (A keypoint, A descriptor, B keypoint, B descriptor, is_inlier)
    let mut planted = Vec::with_capacity(spec.n_inliers + spec.n_outliers);
    for i in 0..spec.n_inliers + spec.n_outliers {
        let inlier = i < spec.n_inliers;
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let a = Keypoint::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
            let Some(ab) = homography.a_to_b(a) else { continue };
            let b = if inlier {
                Keypoint::new(ab.u + noise.sample(&mut rng), ab.v + noise.sample(&mut rng))
            } else {
                let dir = rng.random_range(0.0..TAU);
                let len = rng.random_range(0.75..0.95) * r1;
                let shifted = Keypoint::new(a.u + len * dir.cos(), a.v + len * dir.sin());
                let Some(b) = homography.a_to_b(shifted) else { continue };
                if (b.u - ab.u).hypot(b.v - ab.v) < min_back_error {
                    continue;
                }
                b
            };
            if inside(&a) && inside(&b) {
                placed = Some((a, b));
                break;
            }
        }
        let (a, b) = placed.ok_or_else(|| {
            SimError::Generation(format!(
                "could not place keypoint {i} after {MAX_PLACEMENT_TRIES} tries"
            ))
        })?;
        let da = random_descriptor(&mut rng);
        let flips = if inlier {
            rng.random_range(0..=8)
        } else {
            rng.random_range(10..=20)
        };
        let db = flip_bits(&da, flips, &mut rng);
        planted.push((a, da, b, db, inlier));
    }

    let n = planted.len();
    let mut order_a: Vec<usize> = (0..n).collect();
    let mut order_b: Vec<usize> = (0..n).collect();
    order_a.shuffle(&mut rng);
    order_b.shuffle(&mut rng);
    // order_x[slot] = planted index; pos_x[planted] = slot
    let mut pos_a = vec![0; n];
    let mut pos_b = vec![0; n];
    for (slot, &k) in order_a.iter().enumerate() {
        pos_a[k] = slot;
    }
    for (slot, &k) in order_b.iter().enumerate() {
        pos_b[k] = slot;
    }
    let cell = spec.matching.cell_size;
    let frame_a = FrameFeatures::new(
        spec.width,
        spec.height,
        order_a.iter().map(|&k| planted[k].0).collect(),
        order_a.iter().map(|&k| planted[k].1).collect(),
        cell,
    )
    .map_err(|e| SimError::Generation(e.to_string()))?;
    let frame_b = FrameFeatures::new(
        spec.width,
        spec.height,
        order_b.iter().map(|&k| planted[k].2).collect(),
        order_b.iter().map(|&k| planted[k].3).collect(),
        cell,
    )
    .map_err(|e| SimError::Generation(e.to_string()))?;

    let mut true_pairs = Vec::with_capacity(spec.n_inliers);
    let mut outliers = Vec::with_capacity(spec.n_outliers);
    for (k, p) in planted.iter().enumerate() {
        let pair = (pos_a[k], pos_b[k]);
        if p.4 {
            true_pairs.push(pair);
        } else {
            outliers.push(pair);
        }
    }
    true_pairs.sort_unstable();
    outliers.sort_unstable();
    Ok(MatchFixture {
        frame_a,
        frame_b,
        projection: homography,
        true_pairs,
        outliers,
    })
}

// ---------------------------------------------------------------- bundles

/// Writes the scene, its session manifest, a ground-truth manifest and a
/// match fixture under `dir`.
///
/// Files: `ground_truth.ply`, `<id>.ply`, `<id>_trajectory.txt`,
/// `<id>_world_trajectory.txt`, `session.cfg`, `truth.cfg`,
/// `frame_a.txt`, `frame_b.txt`, `projection.txt`, `true_pairs.txt`.
pub fn write_bundle(spec: &SceneSpec, fixture: &FixtureSpec, dir: &Path) -> Result<(), SimError> {
    let scene = generate_scene(spec)?;
    let fx = generate_match_fixture(fixture)?;
    std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let put = |name: &str, text: &str| -> Result<(), SimError> {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|source| SimError::Io(IoError::Io { path, source }))
    };

    io::write_ply(&scene.ground_truth, &dir.join("ground_truth.ply"), false)?;
    let mut session = String::from("# robot map session\n");
    let mut truth = format!(
        "seed = {}\nroom.length = {}\nroom.width = {}\nroom.height = {}\ndensity = {}\nnoise_sigma = {}\n\
         ground_truth = ground_truth.ply\n",
        spec.seed, spec.room.length, spec.room.width, spec.room.height, spec.density, spec.noise_sigma
    );
    for r in &scene.robots {
        io::write_ply(&r.cloud, &dir.join(format!("{}.ply", r.id)), false)?;
        io::write_tum(&r.trajectory, &dir.join(format!("{}_trajectory.txt", r.id)))?;
        io::write_tum(&r.world_trajectory, &dir.join(format!("{}_world_trajectory.txt", r.id)))?;
        let _ = writeln!(session, "robot.{0}.cloud = {0}.ply", r.id);
        let _ = writeln!(session, "robot.{0}.trajectory = {0}_trajectory.txt", r.id);
        let _ = writeln!(session, "robot.{}.pose = {}", r.id, io::format_pose(&r.reported_pose));
        let planted = spec
            .robots
            .iter()
            .find(|s| s.id == r.id)
            .map(|s| s.pose_error)
            .unwrap_or_default();
        let _ = writeln!(truth, "robot.{}.exact_pose = {}", r.id, io::format_pose(&r.exact_pose));
        let _ = writeln!(truth, "robot.{}.planted_error = {}", r.id, io::format_pose(&planted));
        let _ = writeln!(truth, "robot.{0}.world_trajectory = {0}_world_trajectory.txt", r.id);
    }
    put("session.cfg", &session)?;
    put("truth.cfg", &truth)?;

    io::write_frame(&fx.frame_a, &dir.join("frame_a.txt"))?;
    io::write_frame(&fx.frame_b, &dir.join("frame_b.txt"))?;
    put(
        "projection.txt",
        &io::format_projection(&ProjectionSpec::Homography(*fx.projection.matrix())),
    )?;
    put("true_pairs.txt", &io::format_pairs(&fx.true_pairs))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{cross_validate_match, precision_recall};

    fn one_robot(coverage: f64, noise: f64) -> SceneSpec {
        SceneSpec {
            seed: 11,
            density: 50.0,
            noise_sigma: noise,
            robots: vec![RobotSpec::new("a", Pose::identity(), coverage)],
            ..SceneSpec::default()
        }
    }

    #[test]
    fn noiseless_full_coverage_equals_ground_truth() {
        let scene = generate_scene(&one_robot(1.0, 0.0)).unwrap();
        assert_eq!(scene.robots[0].cloud, scene.ground_truth);
    }

    #[test]
    fn deterministic_per_seed() {
        let mut spec = one_robot(0.6, 0.01);
        assert_eq!(generate_scene(&spec).unwrap(), generate_scene(&spec).unwrap());
        spec.seed += 1;
        assert_ne!(
            generate_scene(&spec).unwrap(),
            generate_scene(&one_robot(0.6, 0.01)).unwrap()
        );
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_scene(&one_robot(0.0, 0.0)).is_err());
        assert!(generate_scene(&one_robot(1.5, 0.0)).is_err());
        let mut s = one_robot(1.0, 0.0);
        s.density = 0.0;
        assert!(generate_scene(&s).is_err());
    }

    #[test]
    fn points_lie_on_surfaces() {
        let spec = one_robot(1.0, 0.0);
        let scene = generate_scene(&spec).unwrap();
        let expected: f64 = spec
            .room
            .surfaces()
            .iter()
            .map(|s| (s.area() * spec.density).round())
            .sum();
        assert_eq!(scene.ground_truth.len(), expected as usize);
        assert!(scene
            .ground_truth
            .points
            .iter()
            .all(|p| spec.room.surface_distance(p) < 1e-12));
    }

    #[test]
    fn robot_cloud_overlays_ground_truth() {
        let pose = Pose::from_axis_angle(&Vector3::new(0.2, 1.0, 0.3), 0.7)
            .compose(&Pose::from_translation(Vector3::new(1.0, -2.0, 0.5)));
        let mut spec = one_robot(0.5, 0.004);
        spec.robots[0].pose = pose;
        let scene = generate_scene(&spec).unwrap();
        let world = scene.robots[0].cloud.transformed(&pose.inverse());
        let ms: f64 = world
            .points
            .iter()
            .map(|p| spec.room.surface_distance(p).powi(2))
            .sum::<f64>()
            / world.len() as f64;
        assert!(ms.sqrt() < 3.0 * spec.noise_sigma);
    }

    #[test]
    fn trajectories_are_consistent() {
        let pose = Pose::rot_z(0.4).compose(&Pose::from_translation(Vector3::new(0.3, 0.0, 0.0)));
        let mut spec = one_robot(0.5, 0.0);
        spec.robots[0].pose = pose;
        let r = &generate_scene(&spec).unwrap().robots[0];
        assert_eq!(r.trajectory.len(), 50);
        for ((t0, local), (t1, world)) in r.trajectory.samples().iter().zip(r.world_trajectory.samples()) {
            assert_eq!(t0, t1);
            let back = pose.inverse().compose(local);
            assert!((back.translation - world.translation).norm() < 1e-12);
            assert!(in_sector(&world.translation, spec.sector(0)));
        }
    }

    #[test]
    fn shared_sector_holds_expected_point_count() {
        let spec = SceneSpec {
            seed: 5,
            robots: vec![
                RobotSpec::new("a", Pose::identity(), 0.7),
                RobotSpec::new("b", Pose::identity(), 0.7),
            ],
            ..SceneSpec::default()
        };
        let (sa, sb) = (spec.sector(0), spec.sector(1));
        let both = |p: &Point3| in_sector(p, sa) && in_sector(p, sb);
        let scene = generate_scene(&spec).unwrap();
        let count = scene.ground_truth.points.iter().filter(|p| both(p)).count() as f64;

        // midpoint-rule area of the shared region
        let n = 400;
        let mut area = 0.0;
        for s in spec.room.surfaces() {
            let cell = s.area() / (n * n) as f64;
            for i in 0..n {
                for j in 0..n {
                    if both(&s.point((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64)) {
                        area += cell;
                    }
                }
            }
        }
        let expected = spec.density * area;
        assert!((count - expected).abs() < 0.1 * expected, "{count} vs {expected}");
    }

    #[test]
    fn reported_pose_plants_error() {
        let mut r = RobotSpec::new("b", Pose::rot_z(0.3), 1.0);
        r.pose_error =
            Pose::from_axis_angle(&Vector3::z(), 0.05).compose(&Pose::from_translation(Vector3::new(0.05, 0.0, 0.0)));
        let p = Point3::new(1.0, 2.0, 3.0);
        let local = r.pose.transform_point(&p);
        let coarse = r.reported_pose().inverse().transform_point(&local);
        assert!((coarse - r.pose_error.transform_point(&p)).norm() < 1e-12);
    }

    #[test]
    fn clean_fixture_has_full_recall() {
        let spec = FixtureSpec {
            seed: 3,
            n_outliers: 0,
            pixel_noise: 0.0,
            ..FixtureSpec::default()
        };
        let fx = generate_match_fixture(&spec).unwrap();
        assert_eq!(fx.true_pairs.len(), 200);
        let m = cross_validate_match(&fx.frame_a, &fx.frame_b, &fx.projection, &spec.matching).unwrap();
        let (precision, recall) = precision_recall(&m.pairs, &fx.true_pairs);
        assert_eq!((precision, recall), (1.0, 1.0));
    }

    #[test]
    fn outliers_are_planted_as_specified() {
        let spec = FixtureSpec {
            seed: 5,
            ..FixtureSpec::default()
        };
        let fx = generate_match_fixture(&spec).unwrap();
        assert_eq!(fx.outliers.len(), 50);
        assert_eq!(fx, generate_match_fixture(&spec).unwrap());
        for &(a, b) in &fx.outliers {
            let ka = fx.frame_a.keypoints[a];
            let kb = fx.frame_b.keypoints[b];
            let back = fx.projection.a_to_b(ka).unwrap();
            assert!((back.u - kb.u).hypot(back.v - kb.v) >= 1.5 * spec.matching.radius_stage2);
            let fwd = fx.projection.b_to_a(kb).unwrap();
            assert!((fwd.u - ka.u).hypot(fwd.v - ka.v) <= spec.matching.radius_stage1);
            let d = crate::features::hamming(&fx.frame_a.descriptors[a], &fx.frame_b.descriptors[b]);
            assert!(d <= spec.matching.max_hamming);
        }
    }

    #[test]
    fn spec_parsing() {
        let text = "seed = 4\ndensity = 100\nrobot.r0.coverage = 0.7\nrobot.r1.coverage = 0.7\n\
                    robot.r1.error = 0.05 0 0 0 0 0 1\nfixture.inliers = 10\n";
        let (scene, fixture) = parse_spec(text).unwrap();
        assert_eq!(scene.seed, 4);
        assert_eq!(scene.robots.len(), 2);
        assert_eq!(scene.robots[1].pose_error.translation.x, 0.05);
        assert_eq!(fixture.n_inliers, 10);
        assert_eq!(fixture.seed, 4);
        assert!(parse_spec("robot.r0.colour = 1\n").is_err());
        assert!(parse_spec("seeed = 1\n").is_err());
    }
}
