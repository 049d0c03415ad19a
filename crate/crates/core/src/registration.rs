//! Coarse-to-fine alignment of robot maps.
//!
//! Coarse: each robot's cloud is mapped into the world frame through the
//! inverse of its world-to-robot pose. Overlap: mutual nearest neighbours
//! within a radius. Fine: generalized ICP (plane-regularized point
//! covariances, Mahalanobis residuals) solved by Gauss–Newton.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use thiserror::Error;

pub use crate::cloud::PointCloud;
use crate::geometry::{Point3, Pose};
use crate::spatial::KdTree;

#[derive(Debug, Error, PartialEq)]
pub enum RegistrationError {
    #[error("need at least {needed} points for covariance estimation, got {got}")]
    InsufficientNeighborhood { needed: usize, got: usize },
    #[error("no correspondences between source and target")]
    NoOverlap,
    #[error("combined covariance of pair {0} is singular")]
    Singular(usize),
    #[error("registration diverged (non-finite cost)")]
    Divergence,
    #[error("invalid GICP parameters: {0}")]
    InvalidParams(String),
    #[error("overlap radius must be positive, got {0}")]
    InvalidRadius(f64),
}

/// Mutually matched points of two clouds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OverlapResult {
    /// `(index_in_A, index_in_B)`, ascending by A index.
    pub pairs: Vec<(usize, usize)>,
    pub n_prime: usize,
}

impl OverlapResult {
    /// A non-empty overlap means the two maps close a loop.
    pub fn loop_detected(&self) -> bool {
        self.n_prime > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GicpParams {
    pub k_neighbors: usize,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub translation_tol: f64,
    pub rotation_tol: f64,
    pub max_correspondence_dist: f64,
}

impl Default for GicpParams {
    fn default() -> Self {
        Self {
            k_neighbors: 20,
            epsilon: 1e-3,
            max_iterations: 50,
            translation_tol: 1e-5,
            rotation_tol: 1e-5,
            max_correspondence_dist: 0.25,
        }
    }
}

impl GicpParams {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        let bad = |m: String| Err(RegistrationError::InvalidParams(m));
        if self.k_neighbors < 4 {
            return bad(format!("k_neighbors must be >= 4, got {}", self.k_neighbors));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must be in (0, 1), got {}", self.epsilon));
        }
        if !(self.translation_tol > 0.0 && self.rotation_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if !(self.max_correspondence_dist > 0.0) {
            return bad(format!(
                "max_correspondence_dist must be positive, got {}",
                self.max_correspondence_dist
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GicpResult {
    /// Maps source points into the target frame.
    pub transform: Pose,
    /// Objective value at the start and after every accepted update.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Correspondences at the final transform, `(source, target)`.
    pub correspondences: usize,
}

/// Per-point 3×3 covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCovariances(pub Vec<Matrix3<f64>>);

impl PointCovariances {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// World-frame copy of a robot cloud given its world-to-robot pose.
pub fn coarse_align(cloud: &PointCloud, robot_from_world: &Pose) -> PointCloud {
    cloud.transformed(&robot_from_world.inverse())
}

/// Mutual nearest neighbours within `radius`.
pub fn find_overlap(a: &PointCloud, b: &PointCloud, radius: f64) -> Result<OverlapResult, RegistrationError> {
    if !(radius > 0.0) {
        return Err(RegistrationError::InvalidRadius(radius));
    }
    let tree_a = KdTree::build(&a.points);
    let tree_b = KdTree::build(&b.points);
    let r2 = radius * radius;
    let mut pairs = Vec::new();
    for (i, p) in a.points.iter().enumerate() {
        let Some(nb) = tree_b.nearest(p) else { break };
        if nb.dist2 > r2 {
            continue;
        }
        if tree_a.nearest(&b.points[nb.index]).map(|n| n.index) == Some(i) {
            pairs.push((i, nb.index));
        }
    }
    Ok(OverlapResult {
        n_prime: pairs.len(),
        pairs,
    })
}

/// Plane-regularized k-NN covariances: the neighbourhood covariance's
/// eigenvalues are replaced by `(ε, 1, 1)` in ascending order.
pub fn estimate_covariances(cloud: &PointCloud, params: &GicpParams) -> Result<PointCovariances, RegistrationError> {
    let k = params.k_neighbors;
    if cloud.len() < k + 1 {
        return Err(RegistrationError::InsufficientNeighborhood {
            needed: k + 1,
            got: cloud.len(),
        });
    }
    let tree = KdTree::build(&cloud.points);
    let covs = cloud
        .points
        .iter()
        .map(|p| {
            let nbrs = tree.knn(p, k);
            let mean = nbrs.iter().map(|n| cloud.points[n.index]).sum::<Point3>() / nbrs.len() as f64;
            let mut cov = Matrix3::zeros();
            for n in &nbrs {
                let d = cloud.points[n.index] - mean;
                cov += d * d.transpose();
            }
            cov /= nbrs.len() as f64;
            regularize(&cov, params.epsilon)
        })
        .collect();
    Ok(PointCovariances(covs))
}

fn regularize(cov: &Matrix3<f64>, epsilon: f64) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut out = Matrix3::zeros();
    for (rank, &idx) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(idx);
        let lambda = if rank == 0 { epsilon } else { 1.0 };
        out += lambda * v * v.transpose();
    }
    // exact symmetry
    (out + out.transpose()) * 0.5
}

fn mahalanobis(d: &Vector3<f64>, combined: &Matrix3<f64>) -> Option<f64> {
    let chol = combined.cholesky()?;
    Some(d.dot(&chol.solve(d)))
}

/// Σ dᵢᵀ (C_Bᵢ + R C_Aᵢ Rᵀ)⁻¹ dᵢ with dᵢ = bᵢ − T·aᵢ over `(source, target)` pairs.
pub fn gicp_cost(
    source: &[Point3],
    target: &[Point3],
    pairs: &[(usize, usize)],
    cov_source: &PointCovariances,
    cov_target: &PointCovariances,
    transform: &Pose,
) -> Result<f64, RegistrationError> {
    if pairs.is_empty() {
        return Err(RegistrationError::NoOverlap);
    }
    let r = &transform.rotation;
    let mut cost = 0.0;
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let d = target[j] - transform.transform_point(&source[i]);
        let combined = cov_target.0[j] + r * cov_source.0[i] * r.transpose();
        cost += mahalanobis(&d, &combined).ok_or(RegistrationError::Singular(k))?;
    }
    Ok(cost)
}

struct Objective<'a> {
    source: &'a [Point3],
    target: &'a [Point3],
    tree: KdTree<'a>,
    cov_source: &'a PointCovariances,
    cov_target: &'a PointCovariances,
    max_dist2: f64,
    // Contribution of a source point with no target within range. It bounds
    // every in-range term from above (combined covariances have eigenvalues
    // ≥ 2ε), so bringing a point into range never raises the objective.
    outlier_cost: f64,
}

struct Evaluation {
    cost: f64,
    pairs: Vec<(usize, usize)>,
}

impl Objective<'_> {
    fn evaluate(&self, t: &Pose) -> Result<Evaluation, RegistrationError> {
        let r = &t.rotation;
        let mut cost = 0.0;
        let mut pairs = Vec::new();
        for (i, a) in self.source.iter().enumerate() {
            let p = t.transform_point(a);
            match self.tree.nearest(&p) {
                Some(n) if n.dist2 <= self.max_dist2 => {
                    let d = self.target[n.index] - p;
                    let combined = self.cov_target.0[n.index] + r * self.cov_source.0[i] * r.transpose();
                    let m = mahalanobis(&d, &combined).ok_or(RegistrationError::Singular(i))?;
                    cost += m.min(self.outlier_cost);
                    pairs.push((i, n.index));
                }
                _ => cost += self.outlier_cost,
            }
        }
        if !cost.is_finite() {
            return Err(RegistrationError::Divergence);
        }
        Ok(Evaluation { cost, pairs })
    }

    /// Gauss–Newton step `(ω, v)` for the left update `T ← (Exp(ω), v) · T`.
    fn gauss_newton_step(&self, t: &Pose, pairs: &[(usize, usize)]) -> Option<Vector6<f64>> {
        let r = &t.rotation;
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for &(i, j) in pairs {
            let p = t.transform_point(&self.source[i]);
            let d = self.target[j] - p;
            let combined = self.cov_target.0[j] + r * self.cov_source.0[i] * r.transpose();
            let m = combined.try_inverse()?;
            // ∂d/∂ω = [p]×, ∂d/∂v = −I
            let mut jac = nalgebra::Matrix3x6::<f64>::zeros();
            jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&p.cross_matrix());
            jac.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Matrix3::identity()));
            let jt_m = jac.transpose() * m;
            h += jt_m * jac;
            g += jt_m * d;
        }
        // Rank-revealing solve: directions the overlap does not constrain get
        // a zero update instead of an arbitrary one.
        let svd = h.svd(true, true);
        let tol = svd.singular_values.max() * 1e-10;
        svd.solve(&(-g), tol).ok()
    }
}

fn apply_update(step: &Vector6<f64>, t: &Pose) -> Pose {
    let omega = Vector3::new(step[0], step[1], step[2]);
    let v = Vector3::new(step[3], step[4], step[5]);
    Pose::from_rotation_vector(&omega, v).compose(t).renormalized()
}

const LINE_SEARCH_STEPS: usize = 8;

/// Generalized ICP from `source` (A) onto `target` (B).
///
/// The returned transform maps A-frame points into B's frame. Each
/// iteration re-derives nearest-neighbour correspondences; an update is
/// accepted only if it does not raise the objective (halving the step up to
/// a few times), so `cost_trace` is non-increasing.
pub fn gicp(
    source: &PointCloud,
    target: &PointCloud,
    init: &Pose,
    params: &GicpParams,
) -> Result<GicpResult, RegistrationError> {
    params.validate()?;
    let cov_source = estimate_covariances(source, params)?;
    let cov_target = estimate_covariances(target, params)?;
    gicp_with_covariances(source, target, &cov_source, &cov_target, init, params)
}

/// [`gicp`] with precomputed covariances.
pub fn gicp_with_covariances(
    source: &PointCloud,
    target: &PointCloud,
    cov_source: &PointCovariances,
    cov_target: &PointCovariances,
    init: &Pose,
    params: &GicpParams,
) -> Result<GicpResult, RegistrationError> {
    params.validate()?;
    let max_dist2 = params.max_correspondence_dist.powi(2);
    let objective = Objective {
        source: &source.points,
        target: &target.points,
        tree: KdTree::build(&target.points),
        cov_source,
        cov_target,
        max_dist2,
        outlier_cost: max_dist2 / (2.0 * params.epsilon),
    };

    let mut transform = *init;
    let mut current = objective.evaluate(&transform)?;
    if current.pairs.is_empty() {
        return Err(RegistrationError::NoOverlap);
    }
    let mut cost_trace = vec![current.cost];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < params.max_iterations {
        iterations += 1;
        let Some(step) = objective.gauss_newton_step(&transform, &current.pairs) else {
            return Err(RegistrationError::Divergence);
        };
        if !step.iter().all(|v| v.is_finite()) {
            return Err(RegistrationError::Divergence);
        }
        let small = step.fixed_rows::<3>(0).norm() < params.rotation_tol
            && step.fixed_rows::<3>(3).norm() < params.translation_tol;

        let mut accepted = None;
        let mut scale = 1.0;
        for _ in 0..LINE_SEARCH_STEPS {
            let candidate = apply_update(&(step * scale), &transform);
            let eval = objective.evaluate(&candidate)?;
            if eval.cost <= current.cost && !eval.pairs.is_empty() {
                accepted = Some((candidate, eval));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((t, eval)) => {
                transform = t;
                current = eval;
                cost_trace.push(current.cost);
                if small {
                    converged = true;
                    break;
                }
            }
            None => {
                // no descent along the Gauss–Newton direction: stationary
                log::debug!("gicp: line search exhausted after {iterations} iterations");
                converged = true;
                break;
            }
        }
    }

    Ok(GicpResult {
        transform,
        cost_trace,
        iterations,
        converged,
        correspondences: current.pairs.len(),
    })
}

/// `a` followed by `b` mapped through `correction`.
pub fn fuse_pair(a: &PointCloud, b: &PointCloud, correction: &Pose) -> PointCloud {
    PointCloud::concat(a, &b.transformed(correction))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64, scale: f64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random()) * scale)
                .collect(),
        )
    }

    #[test]
    fn coarse_align_examples() {
        let c = random_cloud(20, 1, 1.0);
        assert_eq!(coarse_align(&c, &Pose::identity()), c);

        let t = Vector3::new(0.5, -1.0, 2.0);
        let shifted = coarse_align(&c, &Pose::from_translation(t));
        for (p, q) in c.points.iter().zip(&shifted.points) {
            assert!((q - (p - t)).norm() < 1e-12);
        }

        let pose = Pose::from_axis_angle(&Vector3::new(1.0, 1.0, 0.0), 0.3).compose(&Pose::from_translation(t));
        let back = coarse_align(&c, &pose).transformed(&pose);
        for (p, q) in c.points.iter().zip(&back.points) {
            assert!((p - q).norm() < 1e-9);
        }
    }

    #[test]
    fn overlap_disjoint_and_identical() {
        let a = random_cloud(100, 2, 1.0);
        let far = a.transformed(&Pose::from_translation(Vector3::new(10.0 * 0.1 + 1.0, 0.0, 0.0)));
        assert_eq!(find_overlap(&a, &far, 0.1).unwrap().n_prime, 0);

        let same = find_overlap(&a, &a, 0.1).unwrap();
        assert_eq!(same.n_prime, 100);
        assert!(same.pairs.iter().all(|&(i, j)| i == j));
        assert!(find_overlap(&a, &a, 0.0).is_err());
    }

    #[test]
    fn plane_patch_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // plane z = 0.3x − 0.2y
        let n = Vector3::new(-0.3, 0.2, 1.0).normalize();
        let pts: Vec<Point3> = (0..200)
            .map(|_| {
                let (x, y): (f64, f64) = (rng.random(), rng.random());
                Point3::new(x, y, 0.3 * x - 0.2 * y)
            })
            .collect();
        let params = GicpParams::default();
        let covs = estimate_covariances(&PointCloud::new(pts), &params).unwrap();
        for c in &covs.0 {
            assert!((c - c.transpose()).abs().max() < 1e-9);
            let eig = SymmetricEigen::new(*c);
            let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            assert!((ev[0] - params.epsilon).abs() < 1e-9);
            assert!((ev[1] - 1.0).abs() < 1e-9 && (ev[2] - 1.0).abs() < 1e-9);
            // the normal is the ε direction
            assert!((n.dot(&(c * n)) - params.epsilon).abs() < 1e-6);
        }
    }

    #[test]
    fn too_few_points_for_covariance() {
        let c = random_cloud(20, 4, 1.0);
        assert_eq!(
            estimate_covariances(&c, &GicpParams::default()),
            Err(RegistrationError::InsufficientNeighborhood { needed: 21, got: 20 })
        );
    }

    #[test]
    fn cost_scalar_example() {
        let src = [Point3::zeros()];
        let tgt = [Point3::new(1.0, 0.0, 0.0)];
        let id = PointCovariances(vec![Matrix3::identity()]);
        let c = gicp_cost(&src, &tgt, &[(0, 0)], &id, &id, &Pose::identity()).unwrap();
        assert!((c - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cost_zero_at_exact_alignment_and_order_invariant() {
        let a = random_cloud(60, 5, 1.0);
        let t = Pose::rot_z(0.3).compose(&Pose::from_translation(Vector3::new(0.1, 0.2, 0.0)));
        let b = a.transformed(&t);
        let params = GicpParams::default();
        let ca = estimate_covariances(&a, &params).unwrap();
        let cb = estimate_covariances(&b, &params).unwrap();
        let pairs: Vec<(usize, usize)> = (0..60).map(|i| (i, i)).collect();
        assert!(gicp_cost(&a.points, &b.points, &pairs, &ca, &cb, &t).unwrap() < 1e-20);

        let c1 = gicp_cost(&a.points, &b.points, &pairs, &ca, &cb, &Pose::identity()).unwrap();
        let mut rev = pairs.clone();
        rev.reverse();
        let c2 = gicp_cost(&a.points, &b.points, &rev, &ca, &cb, &Pose::identity()).unwrap();
        assert!((c1 - c2).abs() <= 1e-9 * c1);
        assert_eq!(
            gicp_cost(&a.points, &b.points, &[], &ca, &cb, &t),
            Err(RegistrationError::NoOverlap)
        );
    }

    #[test]
    fn self_registration_converges_immediately() {
        let c = random_cloud(300, 6, 2.0);
        let r = gicp(&c, &c, &Pose::identity(), &GicpParams::default()).unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 2);
        assert!(r.transform.angle() < 1e-5);
        assert!(r.transform.translation.norm() < 1e-5);
    }

    #[test]
    fn no_overlap_is_error() {
        let a = random_cloud(50, 7, 1.0);
        let b = a.transformed(&Pose::from_translation(Vector3::new(100.0, 0.0, 0.0)));
        assert_eq!(
            gicp(&a, &b, &Pose::identity(), &GicpParams::default()),
            Err(RegistrationError::NoOverlap)
        );
    }

    #[test]
    fn fuse_pair_concatenates() {
        let a = random_cloud(10, 8, 1.0);
        let b = random_cloud(7, 9, 1.0);
        let f = fuse_pair(&a, &b, &Pose::identity());
        assert_eq!(f.len(), 17);
        assert_eq!(&f.points[..10], &a.points[..]);
        assert_eq!(&f.points[10..], &b.points[..]);
        assert_eq!(fuse_pair(&a, &PointCloud::default(), &Pose::identity()), a);
    }
}
