//! Closed-form rigid alignment and the exhaustive soft-RANSAC pose solver.
//!
//! Every 3-subset of the correspondences yields a Kabsch hypothesis. Each
//! hypothesis is scored by a sigmoid soft inlier count over all points, the
//! counts are softmax-normalized once, and the final pose is the weighted
//! mean translation with the chordal mean rotation.

use alloc::vec::Vec;
use nalgebra::{ComplexField, SymmetricEigen, SVD};

use crate::geometry::RigidTransform;
use crate::{Error, Mat3, Result, Vec3};

/// Relative singular-value threshold under which a model point set counts as
/// collinear.
pub const COLLINEAR_TOLERANCE: f64 = 1e-12;

/// Paired model-frame and world-frame points.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondences {
    model: Vec<Vec3>,
    scene: Vec<Vec3>,
}

impl Correspondences {
    /// Requires equal lengths, at least three pairs and finite coordinates.
    pub fn new(model: Vec<Vec3>, scene: Vec<Vec3>) -> Result<Self> {
        if model.len() != scene.len() {
            return Err(Error::CountMismatch {
                left: model.len(),
                right: scene.len(),
            });
        }
        if model.len() < 3 {
            return Err(Error::TooFewPoints {
                needed: 3,
                got: model.len(),
            });
        }
        if model.iter().chain(&scene).any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self { model, scene })
    }

    /// Model-frame points.
    pub fn model(&self) -> &[Vec3] {
        &self.model
    }

    /// World-frame points.
    pub fn scene(&self) -> &[Vec3] {
        &self.scene
    }

    /// Number of pairs.
    pub fn len(&self) -> usize {
        self.model.len()
    }

    /// Never true for a constructed value.
    pub fn is_empty(&self) -> bool {
        self.model.is_empty()
    }
}

/// Soft inlier scoring parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    /// sigmoid sharpness, 1/m
    pub gamma1: f64,
    /// soft inlier threshold, m
    pub gamma2: f64,
    /// softmax temperature on the raw soft counts
    pub temperature: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            gamma1: 100.0,
            gamma2: 0.02,
            temperature: 1.0,
        }
    }
}

impl SolverParams {
    /// Checks that all three parameters are positive.
    pub fn new(gamma1: f64, gamma2: f64, temperature: f64) -> Result<Self> {
        let params = Self {
            gamma1,
            gamma2,
            temperature,
        };
        params.validate()?;
        Ok(params)
    }

    /// Positivity check for values built by struct literal.
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x > 0.0 && x.is_finite();
        if ok(self.gamma1) && ok(self.gamma2) && ok(self.temperature) {
            Ok(())
        } else {
            Err(Error::InvalidParameter("solver parameters must be positive"))
        }
    }
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().sum::<Vec3>() / points.len() as f64
}

/// Projects a matrix onto SO(3) (orthogonal polar factor with `det = +1`).
pub fn project_to_rotation(m: &Mat3) -> Mat3 {
    let svd = SVD::new(*m, true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Least-squares rigid transform mapping `model` onto `scene` (Kabsch).
pub fn kabsch_align(model: &[Vec3], scene: &[Vec3]) -> Result<RigidTransform> {
    if model.len() != scene.len() {
        return Err(Error::CountMismatch {
            left: model.len(),
            right: scene.len(),
        });
    }
    if model.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: model.len(),
        });
    }
    let mu_m = centroid(model);
    let mu_s = centroid(scene);

    let mut scatter = Mat3::zeros();
    let mut cross = Mat3::zeros();
    for (m, s) in model.iter().zip(scene) {
        let dm = m - mu_m;
        scatter += dm * dm.transpose();
        cross += (s - mu_s) * dm.transpose();
    }
    // Collinear sets have a model scatter of rank ≤ 1.
    let mut spread = SymmetricEigen::new(scatter).eigenvalues;
    spread.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if !(spread[0] > 0.0) || spread[1] < COLLINEAR_TOLERANCE * spread[0] {
        return Err(Error::DegenerateConfiguration);
    }

    let rotation = project_to_rotation(&cross);
    let translation = mu_s - rotation * mu_m;
    Ok(RigidTransform::from_parts_unchecked(rotation, translation))
}

/// Pose hypotheses from every non-degenerate 3-subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypotheses {
    /// one pose per accepted subset
    pub poses: Vec<RigidTransform>,
    /// the index triple behind each pose, lexicographic
    pub subsets: Vec<[usize; 3]>,
    /// triples rejected as degenerate
    pub skipped: Vec<[usize; 3]>,
}

/// `C(n, 3)`.
pub fn triple_count(n: usize) -> usize {
    if n < 3 {
        0
    } else {
        n * (n - 1) * (n - 2) / 6
    }
}

/// Kabsch pose of every 3-subset in lexicographic order.
///
/// Degenerate triples are skipped when more than three points are given; an
/// error is returned only if no hypothesis survives.
pub fn enumerate_hypotheses(c: &Correspondences) -> Result<Hypotheses> {
    let n = c.len();
    if n < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: n });
    }
    let mut out = Hypotheses {
        poses: Vec::with_capacity(triple_count(n)),
        subsets: Vec::with_capacity(triple_count(n)),
        skipped: Vec::new(),
    };
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let model = [c.model[i], c.model[j], c.model[k]];
                let scene = [c.scene[i], c.scene[j], c.scene[k]];
                match kabsch_align(&model, &scene) {
                    Ok(pose) => {
                        out.poses.push(pose);
                        out.subsets.push([i, j, k]);
                    }
                    Err(Error::DegenerateConfiguration) => out.skipped.push([i, j, k]),
                    Err(e) => return Err(e),
                }
            }
        }
    }
    if out.poses.is_empty() {
        return Err(Error::DegenerateConfiguration);
    }
    Ok(out)
}

/// Scored hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    /// candidate poses θ_k
    pub poses: Vec<RigidTransform>,
    /// source triple of each pose
    pub subsets: Vec<[usize; 3]>,
    /// skipped degenerate triples
    pub skipped: Vec<[usize; 3]>,
    /// number of correspondences
    pub n_points: usize,
    /// row-major K×N residual norms `‖θ_k m_i − p̂_i‖`
    pub distances: Vec<f64>,
    /// soft inlier counts before the softmax
    pub raw_counts: Vec<f64>,
    /// softmax weights, summing to one
    pub scores: Vec<f64>,
}

impl HypothesisSet {
    /// Number of hypotheses.
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    /// True when no hypothesis is present.
    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Residuals of hypothesis `k`.
    pub fn distances_of(&self, k: usize) -> &[f64] {
        &self.distances[k * self.n_points..(k + 1) * self.n_points]
    }

    /// Index of the hypothesis with the largest raw count (first on ties).
    pub fn best(&self) -> usize {
        let mut best = 0;
        for (k, &r) in self.raw_counts.iter().enumerate() {
            if r > self.raw_counts[best] {
                best = k;
            }
        }
        best
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Residuals, soft inlier counts and softmax weights for every hypothesis.
pub fn score_hypotheses(hyps: &Hypotheses, c: &Correspondences, params: &SolverParams) -> Result<HypothesisSet> {
    params.validate()?;
    if hyps.poses.is_empty() {
        return Err(Error::InvalidParameter("no hypotheses to score"));
    }
    let n = c.len();
    let mut distances = Vec::with_capacity(hyps.poses.len() * n);
    let mut raw_counts = Vec::with_capacity(hyps.poses.len());
    for pose in &hyps.poses {
        let mut count = 0.0;
        for (m, p) in c.model.iter().zip(&c.scene) {
            let d = (pose.transform_point(m) - p).norm();
            distances.push(d);
            count += sigmoid(params.gamma1 * (-d + params.gamma2));
        }
        raw_counts.push(count);
    }
    let scores = softmax(&raw_counts, params.temperature);
    Ok(HypothesisSet {
        poses: hyps.poses.clone(),
        subsets: hyps.subsets.clone(),
        skipped: hyps.skipped.clone(),
        n_points: n,
        distances,
        raw_counts,
        scores,
    })
}

fn softmax(x: &[f64], temperature: f64) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| ((v - max) / temperature).exp()).collect();
    let total: f64 = out.iter().sum();
    for o in &mut out {
        *o /= total;
    }
    out
}

/// Score-weighted pose: mean translation, chordal mean rotation.
pub fn aggregate_pose(set: &HypothesisSet) -> RigidTransform {
    let mut rotation_sum = Mat3::zeros();
    let mut translation = Vec3::zeros();
    for (pose, &w) in set.poses.iter().zip(&set.scores) {
        rotation_sum += pose.rotation() * w;
        translation += pose.translation() * w;
    }
    RigidTransform::from_parts_unchecked(project_to_rotation(&rotation_sum), translation)
}

/// Enumerate, score and aggregate.
pub fn solve(c: &Correspondences, params: &SolverParams) -> Result<(RigidTransform, HypothesisSet)> {
    let hyps = enumerate_hypotheses(c)?;
    let set = score_hypotheses(&hyps, c, params)?;
    Ok((aggregate_pose(&set), set))
}

/// Single all-point Kabsch fit, scored like a one-element hypothesis set.
/// `subsets` is left empty.
pub fn solve_all_points(c: &Correspondences, params: &SolverParams) -> Result<(RigidTransform, HypothesisSet)> {
    let pose = kabsch_align(&c.model, &c.scene)?;
    let hyps = Hypotheses {
        poses: alloc::vec![pose],
        subsets: Vec::new(),
        skipped: Vec::new(),
    };
    let set = score_hypotheses(&hyps, c, params)?;
    Ok((pose, set))
}

/// `‖t̂ − t‖ + α·‖R̂Rᵀ − I‖_F`.
pub fn pose_loss(est: &RigidTransform, gt: &RigidTransform, alpha: f64) -> f64 {
    let dt = (est.translation() - gt.translation()).norm();
    let dr = (est.rotation() * gt.rotation().transpose() - Mat3::identity()).norm();
    dt + alpha * dr
}

/// Loss components of one pyramid level.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LevelLosses {
    /// pose loss
    pub pose: f64,
    /// smooth-L1 keypoint loss
    pub keypoint: f64,
    /// mean KL divergence
    pub kl: f64,
}

/// `Σ_j β1·pose_j + β2·keypoint_j + β3·kl_j`.
pub fn joint_loss(levels: &[LevelLosses], betas: [f64; 3]) -> f64 {
    levels
        .iter()
        .map(|l| betas[0] * l.pose + betas[1] * l.keypoint + betas[2] * l.kl)
        .sum()
}
