//! Property-based invariants across modules.

use nalgebra::Vector3;
use proptest::prelude::*;

use mrslam::cloud::PointCloud;
use mrslam::cloudops::{self, GaussianFilterParams};
use mrslam::evaluation::{self, AteReport, Trajectory};
use mrslam::features::{self, Descriptor, FrameFeatures, IdentityProjection, Keypoint, MatchConfig};
use mrslam::geometry::{Point3, Pose};
use mrslam::io;
use mrslam::keyframe::{self, FactorVector, KeyframeConfig};
use mrslam::registration;

fn point() -> impl Strategy<Value = Point3> {
    (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn pose() -> impl Strategy<Value = Pose> {
    (point(), 0.0..3.1f64, point()).prop_map(|(axis, angle, t)| {
        let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis };
        let r = Pose::from_axis_angle(&axis, angle);
        Pose {
            rotation: r.rotation,
            translation: t,
        }
    })
}

fn cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(point(), 0..max).prop_map(PointCloud::new)
}

fn descriptor() -> impl Strategy<Value = Descriptor> {
    prop::array::uniform32(any::<u8>()).prop_map(Descriptor)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pose_inverse_composes_to_identity(p in pose(), x in point()) {
        let back = p.inverse().compose(&p).transform_point(&x);
        prop_assert!((back - x).norm() < 1e-9);
    }

    #[test]
    fn pose_quaternion_round_trip(p in pose()) {
        let q = Pose::from_quaternion(p.quaternion(), p.translation);
        prop_assert!((q.rotation - p.rotation).abs().max() < 1e-12);
        prop_assert!(q.is_valid());
    }

    #[test]
    fn hamming_is_a_metric(a in descriptor(), b in descriptor(), c in descriptor()) {
        prop_assert_eq!(features::hamming(&a, &a), 0);
        prop_assert_eq!(features::hamming(&a, &b), features::hamming(&b, &a));
        prop_assert!(features::hamming(&a, &c) <= features::hamming(&a, &b) + features::hamming(&b, &c));
        prop_assert_eq!(Descriptor::from_hex(&a.to_hex()).unwrap(), a);
    }

    #[test]
    fn cross_validated_is_subset_of_stage_one(
        kps in prop::collection::vec((0.0..200.0f64, 0.0..150.0f64), 1..60),
        descs in prop::collection::vec(descriptor(), 60),
        shift in (-5.0..5.0f64, -5.0..5.0f64),
        flips in prop::collection::vec(0usize..256, 0..20),
    ) {
        let n = kps.len();
        let a_kps: Vec<Keypoint> = kps.iter().map(|&(u, v)| Keypoint::new(u, v)).collect();
        let b_kps: Vec<Keypoint> = kps
            .iter()
            .map(|&(u, v)| Keypoint::new((u + shift.0).clamp(0.0, 199.0), (v + shift.1).clamp(0.0, 149.0)))
            .collect();
        let a_desc = descs[..n].to_vec();
        let mut b_desc = a_desc.clone();
        for (i, f) in flips.iter().enumerate() {
            b_desc[i % n].flip_bit(*f);
        }
        let cfg = MatchConfig::default();
        let a = FrameFeatures::new(200, 150, a_kps, a_desc, cfg.cell_size).unwrap();
        let b = FrameFeatures::new(200, 150, b_kps, b_desc, cfg.cell_size).unwrap();
        let one = features::stage_one_match(&a, &b, &IdentityProjection, &cfg);
        let cross = features::cross_validate_match(&a, &b, &IdentityProjection, &cfg).unwrap();
        prop_assert!(one.is_one_to_one() && cross.is_one_to_one());
        prop_assert!(cross.pairs.iter().all(|p| one.pairs.contains(p)));
    }

    #[test]
    fn threshold_is_nonnegative_and_monotone(
        x in (0.0..3.0f64, 0.0..1.0f64, 0.0..3.0f64, 0.0..3.0f64),
        bump in 1e-6..1.0f64,
        which in 0usize..4,
    ) {
        let cfg = KeyframeConfig::default();
        let mut arr = [x.0, x.1, x.2, x.3];
        let base = keyframe::threshold_value(&FactorVector::new(arr[0], arr[1], arr[2], arr[3]), &cfg);
        prop_assert!(base >= 0.0);
        arr[which] += bump;
        let more = keyframe::threshold_value(&FactorVector::new(arr[0], arr[1], arr[2], arr[3]), &cfg);
        prop_assert!(more > base);
    }

    #[test]
    fn sampling_is_subset_and_idempotent(c in cloud(300), voxel in 0.1..3.0f64) {
        let s = cloudops::uniform_sample(&c, voxel).unwrap();
        prop_assert!(s.len() <= c.len());
        prop_assert!(s.points.iter().all(|p| c.points.contains(p)));
        prop_assert_eq!(cloudops::uniform_sample(&s, voxel).unwrap(), s.clone());
        if !c.is_empty() {
            let r = cloudops::reduction_ratio(c.len(), s.len()).unwrap();
            prop_assert!((0.0..100.0).contains(&r.0));
        }
    }

    #[test]
    fn filter_preserves_count(c in cloud(200)) {
        let params = GaussianFilterParams::default();
        match cloudops::gaussian_filter(&c, &params) {
            Ok(f) => {
                prop_assert_eq!(f.len(), c.len());
                prop_assert!(f.points.iter().all(|p| p.iter().all(|v| v.is_finite())));
            }
            Err(_) => prop_assert!(c.len() < params.k_neighbors + 1),
        }
    }

    #[test]
    fn overlap_is_symmetric(a in cloud(150), b in cloud(150), r in 0.1..3.0f64) {
        let ab = registration::find_overlap(&a, &b, r).unwrap();
        let ba = registration::find_overlap(&b, &a, r).unwrap();
        let mut flipped: Vec<(usize, usize)> = ba.pairs.iter().map(|&(j, i)| (i, j)).collect();
        flipped.sort_unstable();
        prop_assert_eq!(ab.pairs, flipped);
    }

    #[test]
    fn coarse_align_inverts_pose(c in cloud(50), p in pose()) {
        let back = registration::coarse_align(&c, &p).transformed(&p);
        for (x, y) in c.points.iter().zip(&back.points) {
            prop_assert!((x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn ate_statistics_identities(errors in prop::collection::vec(0.0..5.0f64, 1..100)) {
        let r = AteReport::from_errors(errors, Pose::identity()).unwrap();
        prop_assert!(r.med <= r.max);
        prop_assert!((r.rmse * r.rmse - (r.mean * r.mean + r.std * r.std)).abs() < 1e-12 * r.rmse.max(1.0).powi(2));
    }

    #[test]
    fn aligned_ate_is_rigid_invariant(
        pts in prop::collection::vec(point(), 4..40),
        offset in pose(),
    ) {
        let traj = Trajectory::new(
            pts.iter().enumerate().map(|(i, p)| (i as f64, Pose::from_translation(*p))).collect(),
        ).unwrap();
        let base = evaluation::ate(&traj, &traj, true, 0.02);
        let moved = evaluation::ate(&traj.transformed(&offset), &traj, true, 0.02);
        if let (Ok(base), Ok(moved)) = (base, moved) {
            prop_assert!((base.rmse - moved.rmse).abs() < 1e-9);
            prop_assert!(moved.rmse < 1e-9);
        }
    }

    #[test]
    fn tum_round_trip(stamps in prop::collection::vec(1e-3..10.0f64, 1..30), poses in prop::collection::vec(pose(), 30)) {
        let mut t = 0.0;
        let samples: Vec<(f64, Pose)> = stamps.iter().zip(&poses).map(|(dt, p)| { t += dt; (t, *p) }).collect();
        let traj = Trajectory::new(samples).unwrap();
        let back = io::parse_tum(&io::format_tum(&traj)).unwrap();
        for ((t0, p0), (t1, p1)) in traj.samples().iter().zip(back.samples()) {
            prop_assert_eq!(t0, t1);
            prop_assert!((p0.translation - p1.translation).norm() <= 1e-9);
            prop_assert!((p0.rotation - p1.rotation).abs().max() <= 1e-9);
        }
    }

    #[test]
    fn ply_round_trip(pts in prop::collection::vec((any::<f32>(), any::<f32>(), any::<f32>()), 0..100), ascii in any::<bool>()) {
        let pts: Vec<Point3> = pts
            .into_iter()
            .filter(|(x, y, z)| x.is_finite() && y.is_finite() && z.is_finite())
            .map(|(x, y, z)| Point3::new(x as f64, y as f64, z as f64))
            .collect();
        let c = PointCloud::new(pts);
        let bytes = io::format_ply(&c, ascii);
        prop_assert_eq!(io::parse_ply(&bytes).unwrap(), c);
    }
}
