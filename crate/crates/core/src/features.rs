//! Grid-registered binary features and two-stage cross-validation matching.
//!
//! Frame B's keypoints are projected into frame A and matched by Hamming
//! distance within a pixel radius (stage 1). The matched A keypoints are then
//! projected back into frame B and matched again with a smaller radius
//! (stage 2); a pair survives only if stage 2 re-finds the same partner.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("keypoint {index} at ({u}, {v}) lies outside the {width}x{height} image")]
    OutOfBounds {
        index: usize,
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },
    #[error("{keypoints} keypoints but {descriptors} descriptors")]
    LengthMismatch { keypoints: usize, descriptors: usize },
    #[error("invalid match config: {0}")]
    InvalidConfig(String),
    #[error("invalid descriptor hex: {0}")]
    BadDescriptor(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
}

impl Keypoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    fn dist2(&self, other: &Keypoint) -> f64 {
        let (du, dv) = (self.u - other.u, self.v - other.v);
        du * du + dv * dv
    }
}

/// 256-bit binary descriptor (ORB layout, 32 bytes).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Descriptor(pub [u8; 32]);

impl Descriptor {
    pub const BITS: u32 = 256;

    pub fn zeros() -> Self {
        Self([0; 32])
    }

    pub fn ones() -> Self {
        Self([0xff; 32])
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Result<Self, FeatureError> {
        if s.len() != 64 || !s.is_ascii() {
            return Err(FeatureError::BadDescriptor(s.to_string()));
        }
        let mut out = [0u8; 32];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte =
                u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| FeatureError::BadDescriptor(s.to_string()))?;
        }
        Ok(Self(out))
    }

    pub fn flip_bit(&mut self, bit: usize) {
        self.0[bit / 8] ^= 1 << (bit % 8);
    }
}

impl fmt::Debug for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Descriptor({})", self.to_hex())
    }
}

/// Popcount of the XOR of two descriptors.
#[inline]
pub fn hamming(a: &Descriptor, b: &Descriptor) -> u32 {
    let mut d = 0;
    for (x, y) in a.0.chunks_exact(8).zip(b.0.chunks_exact(8)) {
        let x = u64::from_le_bytes(x.try_into().unwrap());
        let y = u64::from_le_bytes(y.try_into().unwrap());
        d += (x ^ y).count_ones();
    }
    d
}

/// Uniform pixel grid mapping each cell to the keypoints inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    cell_size: f64,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<usize>>,
}

impl FeatureGrid {
    /// Registers every keypoint in cell `(⌊u/cell⌋, ⌊v/cell⌋)`.
    pub fn build(keypoints: &[Keypoint], width: u32, height: u32, cell_size: f64) -> Result<Self, FeatureError> {
        if !(cell_size > 0.0) {
            return Err(FeatureError::InvalidConfig(format!(
                "cell_size must be positive, got {cell_size}"
            )));
        }
        let cols = ((width as f64 / cell_size).ceil() as usize).max(1);
        let rows = ((height as f64 / cell_size).ceil() as usize).max(1);
        let mut cells = vec![Vec::new(); cols * rows];
        for (index, kp) in keypoints.iter().enumerate() {
            let inside = kp.u >= 0.0 && kp.v >= 0.0 && kp.u < width as f64 && kp.v < height as f64;
            if !inside {
                return Err(FeatureError::OutOfBounds {
                    index,
                    u: kp.u,
                    v: kp.v,
                    width,
                    height,
                });
            }
            let (cx, cy) = Self::cell_of(kp, cell_size);
            cells[cy * cols + cx].push(index);
        }
        Ok(Self {
            cell_size,
            cols,
            rows,
            cells,
        })
    }

    pub fn cell_of(kp: &Keypoint, cell_size: f64) -> (usize, usize) {
        ((kp.u / cell_size).floor() as usize, (kp.v / cell_size).floor() as usize)
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.cols, self.rows)
    }

    /// Keypoint indices registered in cell `(cx, cy)`.
    pub fn cell(&self, cx: usize, cy: usize) -> &[usize] {
        &self.cells[cy * self.cols + cx]
    }

    /// Iterator over `((cx, cy), indices)` for non-empty cells.
    pub fn occupied(&self) -> impl Iterator<Item = ((usize, usize), &[usize])> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_empty())
            .map(move |(i, c)| ((i % self.cols, i / self.cols), c.as_slice()))
    }

    /// Indices within Euclidean distance `radius` of `p`, ascending.
    pub fn radius_candidates(&self, keypoints: &[Keypoint], p: Keypoint, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !(radius > 0.0) || !p.u.is_finite() || !p.v.is_finite() {
            return out;
        }
        // disc entirely off-image
        if p.u + radius < 0.0
            || p.v + radius < 0.0
            || p.u - radius >= (self.cols as f64) * self.cell_size
            || p.v - radius >= (self.rows as f64) * self.cell_size
        {
            return out;
        }
        let to_cell = |x: f64, n: usize| ((x / self.cell_size).floor().max(0.0) as usize).min(n - 1);
        let (x0, x1) = (to_cell(p.u - radius, self.cols), to_cell(p.u + radius, self.cols));
        let (y0, y1) = (to_cell(p.v - radius, self.rows), to_cell(p.v + radius, self.rows));
        let r2 = radius * radius;
        for cy in y0..=y1 {
            for cx in x0..=x1 {
                for &i in self.cell(cx, cy) {
                    if keypoints[i].dist2(&p) <= r2 {
                        out.push(i);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Keypoints and descriptors of one image, registered in a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub width: u32,
    pub height: u32,
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
    pub grid: FeatureGrid,
}

impl FrameFeatures {
    pub fn new(
        width: u32,
        height: u32,
        keypoints: Vec<Keypoint>,
        descriptors: Vec<Descriptor>,
        cell_size: f64,
    ) -> Result<Self, FeatureError> {
        if keypoints.len() != descriptors.len() {
            return Err(FeatureError::LengthMismatch {
                keypoints: keypoints.len(),
                descriptors: descriptors.len(),
            });
        }
        let grid = FeatureGrid::build(&keypoints, width, height, cell_size)?;
        Ok(Self {
            width,
            height,
            keypoints,
            descriptors,
            grid,
        })
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    pub fn radius_candidates(&self, p: Keypoint, radius: f64) -> Vec<usize> {
        self.grid.radius_candidates(&self.keypoints, p, radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchStage {
    OnePass,
    CrossValidated,
}

/// One-to-one correspondences.
///
/// Pairs are `(index_in_A, index_in_B)` for [`brute_force_match`] and
/// [`cross_validate_match`]. For [`match_one_pass`] they are
/// `(source_index, target_index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pub pairs: Vec<(usize, usize)>,
    pub stage: MatchStage,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// True when no index repeats on either side.
    pub fn is_one_to_one(&self) -> bool {
        let mut left = std::collections::HashSet::new();
        let mut right = std::collections::HashSet::new();
        self.pairs.iter().all(|&(a, b)| left.insert(a) && right.insert(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    pub cell_size: f64,
    pub radius_stage1: f64,
    pub radius_stage2: f64,
    pub max_hamming: u32,
    pub ratio_threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            cell_size: 20.0,
            radius_stage1: 15.0,
            radius_stage2: 7.0,
            max_hamming: 50,
            ratio_threshold: 0.9,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: String| Err(FeatureError::InvalidConfig(m));
        if !(self.cell_size > 0.0) {
            return bad(format!("cell_size must be positive, got {}", self.cell_size));
        }
        if !(self.radius_stage2 > 0.0) || self.radius_stage2 > self.radius_stage1 {
            return bad(format!(
                "need 0 < radius_stage2 <= radius_stage1, got {} and {}",
                self.radius_stage2, self.radius_stage1
            ));
        }
        if self.max_hamming > Descriptor::BITS {
            return bad(format!("max_hamming {} exceeds 256", self.max_hamming));
        }
        if !(self.ratio_threshold > 0.0 && self.ratio_threshold <= 1.0) {
            return bad(format!(
                "ratio_threshold must be in (0, 1], got {}",
                self.ratio_threshold
            ));
        }
        Ok(())
    }
}

/// A pixel mapping between two frames and its inverse.
pub trait FrameProjection {
    /// Maps a pixel of frame B into frame A (`None` if it has no image).
    fn b_to_a(&self, p: Keypoint) -> Option<Keypoint>;
    /// Maps a pixel of frame A into frame B.
    fn a_to_b(&self, p: Keypoint) -> Option<Keypoint>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityProjection;

impl FrameProjection for IdentityProjection {
    fn b_to_a(&self, p: Keypoint) -> Option<Keypoint> {
        Some(p)
    }

    fn a_to_b(&self, p: Keypoint) -> Option<Keypoint> {
        Some(p)
    }
}

/// Planar homography taking B pixels to A pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    b_to_a: Matrix3<f64>,
    a_to_b: Matrix3<f64>,
}

impl Homography {
    pub fn new(b_to_a: Matrix3<f64>) -> Option<Self> {
        let a_to_b = b_to_a.try_inverse()?;
        Some(Self { b_to_a, a_to_b })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.b_to_a
    }

    fn apply(h: &Matrix3<f64>, p: Keypoint) -> Option<Keypoint> {
        let x = h * Vector3::new(p.u, p.v, 1.0);
        if x.z.abs() < 1e-12 {
            return None;
        }
        let out = Keypoint::new(x.x / x.z, x.y / x.z);
        (out.u.is_finite() && out.v.is_finite()).then_some(out)
    }
}

impl FrameProjection for Homography {
    fn b_to_a(&self, p: Keypoint) -> Option<Keypoint> {
        Self::apply(&self.b_to_a, p)
    }

    fn a_to_b(&self, p: Keypoint) -> Option<Keypoint> {
        Self::apply(&self.a_to_b, p)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    source: usize,
    target: usize,
    distance: u32,
}

/// Best/second-best test shared by the gridded and brute-force matchers.
fn pick_best(
    desc: &Descriptor,
    candidates: impl Iterator<Item = usize>,
    target_desc: &[Descriptor],
    cfg: &MatchConfig,
) -> Option<(usize, u32)> {
    let mut best: Option<(usize, u32)> = None;
    let mut second = u32::MAX;
    for t in candidates {
        let d = hamming(desc, &target_desc[t]);
        match best {
            Some((bi, bd)) if d < bd || (d == bd && t < bi) => {
                second = bd;
                best = Some((t, d));
            }
            Some(_) => second = second.min(d),
            None => best = Some((t, d)),
        }
    }
    let (t, d) = best?;
    if d > cfg.max_hamming {
        return None;
    }
    // an exact tie with the runner-up (including 0 vs 0) is ambiguous
    if second != u32::MAX && (second == 0 || d as f64 > cfg.ratio_threshold * second as f64) {
        return None;
    }
    Some((t, d))
}

/// Keeps, for every claimed target, the claim with the lowest Hamming
/// distance (ties: lowest source index). Output sorted by source index.
fn resolve_duplicates(cands: Vec<Candidate>) -> Vec<(usize, usize)> {
    let mut winner: HashMap<usize, Candidate> = HashMap::new();
    for c in cands {
        winner
            .entry(c.target)
            .and_modify(|w| {
                if c.distance < w.distance || (c.distance == w.distance && c.source < w.source) {
                    *w = c;
                }
            })
            .or_insert(c);
    }
    let mut pairs: Vec<(usize, usize)> = winner.into_values().map(|c| (c.source, c.target)).collect();
    pairs.sort_unstable();
    pairs
}

/// Matches projected source points against `target` within `radius`.
///
/// `projected[i]` is the position of source keypoint `source_indices[i]`
/// in the target frame (`None` if it does not project); `source_desc` is
/// indexed by source keypoint index. Returned pairs are
/// `(source_index, target_index)`.
pub fn match_one_pass(
    projected: &[Option<Keypoint>],
    source_indices: &[usize],
    target: &FrameFeatures,
    source_desc: &[Descriptor],
    radius: f64,
    cfg: &MatchConfig,
) -> MatchSet {
    assert_eq!(projected.len(), source_indices.len(), "one projection per source index");
    let mut cands = Vec::with_capacity(projected.len());
    for (p, &s) in projected.iter().zip(source_indices) {
        let Some(p) = p else { continue };
        let near = target.radius_candidates(*p, radius);
        if let Some((t, d)) = pick_best(&source_desc[s], near.into_iter(), &target.descriptors, cfg) {
            cands.push(Candidate {
                source: s,
                target: t,
                distance: d,
            });
        }
    }
    MatchSet {
        pairs: resolve_duplicates(cands),
        stage: MatchStage::OnePass,
    }
}

/// Stage 1 of cross-validation alone: B projected into A with `radius_stage1`.
/// Pairs are `(index_in_A, index_in_B)`.
pub fn stage_one_match(
    frame_a: &FrameFeatures,
    frame_b: &FrameFeatures,
    projection: &dyn FrameProjection,
    cfg: &MatchConfig,
) -> MatchSet {
    let sources: Vec<usize> = (0..frame_b.len()).collect();
    let projected: Vec<Option<Keypoint>> = frame_b.keypoints.iter().map(|&k| projection.b_to_a(k)).collect();
    let stage1 = match_one_pass(
        &projected,
        &sources,
        frame_a,
        &frame_b.descriptors,
        cfg.radius_stage1,
        cfg,
    );
    let mut pairs: Vec<(usize, usize)> = stage1.pairs.into_iter().map(|(b, a)| (a, b)).collect();
    pairs.sort_unstable();
    MatchSet {
        pairs,
        stage: MatchStage::OnePass,
    }
}

/// Two-stage mutually consistent matching. Pairs are `(index_in_A, index_in_B)`.
pub fn cross_validate_match(
    frame_a: &FrameFeatures,
    frame_b: &FrameFeatures,
    projection: &dyn FrameProjection,
    cfg: &MatchConfig,
) -> Result<MatchSet, FeatureError> {
    cfg.validate()?;
    let stage1 = stage_one_match(frame_a, frame_b, projection, cfg);

    let a_indices: Vec<usize> = stage1.pairs.iter().map(|&(a, _)| a).collect();
    let back: Vec<Option<Keypoint>> = a_indices
        .iter()
        .map(|&a| projection.a_to_b(frame_a.keypoints[a]))
        .collect();
    let stage2 = match_one_pass(&back, &a_indices, frame_b, &frame_a.descriptors, cfg.radius_stage2, cfg);
    let refound: HashMap<usize, usize> = stage2.pairs.into_iter().collect();

    let pairs = stage1
        .pairs
        .into_iter()
        .filter(|(a, b)| refound.get(a) == Some(b))
        .collect();
    Ok(MatchSet {
        pairs,
        stage: MatchStage::CrossValidated,
    })
}

/// Exhaustive counterpart of [`stage_one_match`]: every B keypoint is
/// matched against all of A with the same acceptance tests but no spatial
/// gating. Pairs are `(index_in_A, index_in_B)`.
pub fn brute_force_match(frame_a: &FrameFeatures, frame_b: &FrameFeatures, cfg: &MatchConfig) -> MatchSet {
    let mut cands = Vec::with_capacity(frame_b.len());
    for (s, desc) in frame_b.descriptors.iter().enumerate() {
        if let Some((t, d)) = pick_best(desc, 0..frame_a.len(), &frame_a.descriptors, cfg) {
            cands.push(Candidate {
                source: s,
                target: t,
                distance: d,
            });
        }
    }
    let mut pairs: Vec<(usize, usize)> = resolve_duplicates(cands).into_iter().map(|(b, a)| (a, b)).collect();
    pairs.sort_unstable();
    MatchSet {
        pairs,
        stage: MatchStage::OnePass,
    }
}

/// Precision and recall of `found` against a ground-truth pair table.
pub fn precision_recall(found: &[(usize, usize)], truth: &[(usize, usize)]) -> (f64, f64) {
    let truth: std::collections::HashSet<_> = truth.iter().copied().collect();
    let correct = found.iter().filter(|p| truth.contains(p)).count();
    let precision = if found.is_empty() {
        1.0
    } else {
        correct as f64 / found.len() as f64
    };
    let recall = if truth.is_empty() {
        1.0
    } else {
        correct as f64 / truth.len() as f64
    };
    (precision, recall)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_desc(rng: &mut ChaCha8Rng) -> Descriptor {
        let mut d = [0u8; 32];
        rng.fill(&mut d);
        Descriptor(d)
    }

    fn naive_hamming(a: &Descriptor, b: &Descriptor) -> u32 {
        let mut n = 0;
        for bit in 0..256 {
            let x = (a.0[bit / 8] >> (bit % 8)) & 1;
            let y = (b.0[bit / 8] >> (bit % 8)) & 1;
            n += (x != y) as u32;
        }
        n
    }

    #[test]
    fn hamming_examples() {
        assert_eq!(hamming(&Descriptor::zeros(), &Descriptor::zeros()), 0);
        assert_eq!(hamming(&Descriptor::zeros(), &Descriptor::ones()), 256);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let (a, b) = (random_desc(&mut rng), random_desc(&mut rng));
            assert_eq!(hamming(&a, &b), naive_hamming(&a, &b));
            assert_eq!(hamming(&a, &b), hamming(&b, &a));
        }
    }

    #[test]
    fn hex_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_desc(&mut rng);
        assert_eq!(Descriptor::from_hex(&d.to_hex()).unwrap(), d);
        assert!(Descriptor::from_hex("abc").is_err());
        assert!(Descriptor::from_hex(&"zz".repeat(32)).is_err());
    }

    #[test]
    fn grid_cells() {
        let g = FeatureGrid::build(&[], 640, 480, 20.0).unwrap();
        assert_eq!(g.occupied().count(), 0);

        let kps = [Keypoint::new(10.0, 10.0), Keypoint::new(20.0, 0.0)];
        let g = FeatureGrid::build(&kps, 640, 480, 20.0).unwrap();
        assert_eq!(g.cell(0, 0), &[0]);
        assert_eq!(g.cell(1, 0), &[1]);
    }

    #[test]
    fn grid_rejects_out_of_bounds() {
        let kps = [Keypoint::new(1.0, 1.0), Keypoint::new(640.0, 5.0)];
        match FeatureGrid::build(&kps, 640, 480, 20.0) {
            Err(FeatureError::OutOfBounds { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected out-of-bounds, got {other:?}"),
        }
        assert!(FeatureGrid::build(&[Keypoint::new(-0.1, 1.0)], 640, 480, 20.0).is_err());
    }

    #[test]
    fn radius_candidates_match_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kps: Vec<Keypoint> = (0..400)
            .map(|_| Keypoint::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)))
            .collect();
        let grid = FeatureGrid::build(&kps, 640, 480, 20.0).unwrap();
        for _ in 0..200 {
            let q = Keypoint::new(rng.random_range(-50.0..690.0), rng.random_range(-50.0..530.0));
            let r = rng.random_range(0.5..60.0);
            let oracle: Vec<usize> = (0..kps.len()).filter(|&i| kps[i].dist2(&q) <= r * r).collect();
            assert_eq!(grid.radius_candidates(&kps, q, r), oracle);
        }
    }

    #[test]
    fn radius_candidates_trivial_cases() {
        let kps = vec![Keypoint::new(100.0, 100.0); 5];
        let grid = FeatureGrid::build(&kps, 640, 480, 20.0).unwrap();
        assert!(grid
            .radius_candidates(&kps, Keypoint::new(300.0, 300.0), 10.0)
            .is_empty());
        assert_eq!(
            grid.radius_candidates(&kps, Keypoint::new(100.0, 100.0), 1.0),
            vec![0, 1, 2, 3, 4]
        );
    }

    fn random_frame(n: usize, seed: u64) -> FrameFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kps = (0..n)
            .map(|_| Keypoint::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)))
            .collect();
        let desc = (0..n).map(|_| random_desc(&mut rng)).collect();
        FrameFeatures::new(640, 480, kps, desc, 20.0).unwrap()
    }

    #[test]
    fn identical_frames_self_match() {
        let f = random_frame(150, 2);
        let cfg = MatchConfig::default();
        let cv = cross_validate_match(&f, &f, &IdentityProjection, &cfg).unwrap();
        let expect: Vec<(usize, usize)> = (0..150).map(|i| (i, i)).collect();
        assert_eq!(cv.pairs, expect);
        assert_eq!(brute_force_match(&f, &f, &cfg).pairs, expect);
    }

    #[test]
    fn disjoint_projection_gives_nothing() {
        struct Away;
        impl FrameProjection for Away {
            fn b_to_a(&self, p: Keypoint) -> Option<Keypoint> {
                Some(Keypoint::new(p.u + 5000.0, p.v))
            }
            fn a_to_b(&self, p: Keypoint) -> Option<Keypoint> {
                Some(Keypoint::new(p.u - 5000.0, p.v))
            }
        }
        let f = random_frame(50, 3);
        let cv = cross_validate_match(&f, &f, &Away, &MatchConfig::default()).unwrap();
        assert!(cv.is_empty());
    }

    #[test]
    fn one_pass_with_planted_collision_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let target = random_frame(60, 4);
        // sources: copies of the first 20 target points, shifted 3 px, with 3 bit flips
        let mut proj = Vec::new();
        let mut desc = Vec::new();
        for i in 0..20 {
            let k = target.keypoints[i];
            proj.push(Some(Keypoint::new(k.u + 3.0, k.v)));
            let mut d = target.descriptors[i];
            for _ in 0..3 {
                d.flip_bit(rng.random_range(0..256));
            }
            desc.push(d);
        }
        // one outlier whose descriptor collides with target 0 but sits 10 px away from it
        let k0 = target.keypoints[0];
        proj.push(Some(Keypoint::new(k0.u, k0.v + 10.0)));
        desc.push(target.descriptors[0]);
        let sources: Vec<usize> = (0..proj.len()).collect();
        let cfg = MatchConfig::default();
        let got = match_one_pass(&proj, &sources, &target, &desc, 15.0, &cfg);

        // exhaustive oracle
        let mut claims: Vec<(usize, usize, u32)> = Vec::new();
        for (s, p) in proj.iter().enumerate() {
            let p = p.unwrap();
            let mut ds: Vec<(u32, usize)> = (0..target.len())
                .filter(|&t| target.keypoints[t].dist2(&p) <= 225.0)
                .map(|t| (naive_hamming(&desc[s], &target.descriptors[t]), t))
                .collect();
            ds.sort();
            if let Some(&(d, t)) = ds.first() {
                let ok_ratio = ds.get(1).is_none_or(|&(d2, _)| d as f64 <= 0.9 * d2 as f64);
                if d <= 50 && ok_ratio {
                    claims.push((s, t, d));
                }
            }
        }
        let mut oracle: Vec<(usize, usize)> = claims
            .iter()
            .filter(|&&(s, t, d)| {
                claims
                    .iter()
                    .all(|&(s2, t2, d2)| t2 != t || d < d2 || (d == d2 && s <= s2))
            })
            .map(|&(s, t, _)| (s, t))
            .collect();
        oracle.sort();
        assert_eq!(got.pairs, oracle);
        assert!(got.is_one_to_one());
        // the collision resolves in favour of the exact descriptor copy (source 20)
        assert!(got.pairs.contains(&(20, 0)));
    }

    #[test]
    fn duplicate_claim_ties_go_to_lower_source() {
        let target = FrameFeatures::new(
            100,
            100,
            vec![Keypoint::new(50.0, 50.0)],
            vec![Descriptor::zeros()],
            20.0,
        )
        .unwrap();
        let proj = vec![Some(Keypoint::new(50.0, 50.0)); 3];
        let desc = vec![Descriptor::zeros(); 3];
        let got = match_one_pass(&proj, &[2, 0, 1], &target, &desc, 5.0, &MatchConfig::default());
        assert_eq!(got.pairs, vec![(0, 0)]);
    }

    #[test]
    fn ratio_test_rejects_ambiguous() {
        let target = FrameFeatures::new(
            100,
            100,
            vec![Keypoint::new(50.0, 50.0), Keypoint::new(52.0, 50.0)],
            vec![Descriptor::zeros(), Descriptor::zeros()],
            20.0,
        )
        .unwrap();
        let got = match_one_pass(
            &[Some(Keypoint::new(51.0, 50.0))],
            &[0],
            &target,
            &[Descriptor::zeros()],
            5.0,
            &MatchConfig::default(),
        );
        assert!(got.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(MatchConfig::default().validate().is_ok());
        let cfg = MatchConfig {
            radius_stage2: 20.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = MatchConfig {
            max_hamming: 300,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn homography_round_trip() {
        let h = Homography::new(Matrix3::new(1.01, 0.02, 5.0, -0.01, 0.99, -3.0, 1e-5, 2e-5, 1.0)).unwrap();
        let p = Keypoint::new(123.0, 321.0);
        let q = h.a_to_b(h.b_to_a(p).unwrap()).unwrap();
        assert!(p.dist2(&q) < 1e-18);
    }

    #[test]
    fn precision_recall_counts() {
        let (p, r) = precision_recall(&[(0, 0), (1, 2)], &[(0, 0), (1, 1), (2, 2)]);
        assert_eq!(p, 0.5);
        assert!((r - 1.0 / 3.0).abs() < 1e-15);
    }
}
