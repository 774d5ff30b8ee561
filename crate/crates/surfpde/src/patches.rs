//! Overlapping surface-centered patches.
//!
//! A patch anchors a local orthonormal frame at a surface point, gathers the
//! `k` nearest band nodes as its stencil and the surface samples around them
//! as geometric conditioning, and expresses everything in the local frame
//! (rows n, t1, t2) for rigid-motion invariance.

use crate::band::{coverage_max_epsilon, NarrowBand};
use crate::geometry::{Aabb, SurfaceSample};
use crate::kdtree::KdTree;
use crate::{Error, Mat3, Result, Vec3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct LocalFrame {
    pub center: Vec3,
    /// Rotation with rows (n, t1, t2); determinant +1 by construction
    /// (t2 is forced to n x t1).
    pub axes: Mat3,
}

impl LocalFrame {
    pub fn from_sample(sample: &SurfaceSample) -> Self {
        let s = sample.with_arbitrary_frame();
        let n = s.normal;
        let t1 = s.t1.unwrap();
        let t1 = (t1 - n * t1.dot(&n)).normalize();
        let t2 = n.cross(&t1);
        LocalFrame {
            center: s.position,
            axes: Mat3::from_rows(&[n.transpose(), t1.transpose(), t2.transpose()]),
        }
    }

    pub fn to_local_point(&self, p: &Vec3) -> Vec3 {
        self.axes * (p - self.center)
    }

    pub fn to_local_vector(&self, v: &Vec3) -> Vec3 {
        self.axes * v
    }

    pub fn from_local_point(&self, p: &Vec3) -> Vec3 {
        self.axes.transpose() * p + self.center
    }

    pub fn from_local_vector(&self, v: &Vec3) -> Vec3 {
        self.axes.transpose() * v
    }
}

/// Transform points (and optionally normals) into a frame's local coordinates.
pub fn to_local(
    frame: &LocalFrame,
    points: &[Vec3],
    normals: Option<&[Vec3]>,
) -> (Vec<Vec3>, Option<Vec<Vec3>>) {
    let pts = points.iter().map(|p| frame.to_local_point(p)).collect();
    let nrm = normals.map(|ns| ns.iter().map(|n| frame.to_local_vector(n)).collect());
    (pts, nrm)
}

/// Which surface feature channels the operator sees; masked channels are
/// zeroed so the feature tensor keeps its N x 6 shape.
#[derive(Debug, Clone, Copy)]
pub struct FeatureMask {
    pub positions: bool,
    pub normals: bool,
}

impl Default for FeatureMask {
    fn default() -> Self {
        FeatureMask {
            positions: true,
            normals: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PatchConfig {
    /// Band nodes per patch stencil.
    pub k: usize,
    /// Center spacing as a fraction of the expected patch radius
    /// dx * (3k/4pi)^(1/3).
    pub spacing_factor: f64,
    /// Feature-box dilation as a fraction of the stencil bbox diagonal.
    pub margin_factor: f64,
    pub feature_mask: FeatureMask,
    pub seed: u64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            k: 400,
            spacing_factor: 0.5,
            margin_factor: 0.1,
            feature_mask: FeatureMask::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Patch {
    pub frame: LocalFrame,
    /// Band-local indices of the stencil nodes, k of them, distinct.
    pub band_idx: Vec<u32>,
    /// Stencil node coordinates in the local frame.
    pub band_local: Vec<Vec3>,
    /// Surface features (local position, local normal) as rows of 6.
    pub feat_local: Vec<[f64; 6]>,
}

impl Patch {
    pub fn k(&self) -> usize {
        self.band_idx.len()
    }

    pub fn feature_count(&self) -> usize {
        self.feat_local.len()
    }
}

/// Greedy surface flood fill: accept a sample as a center when it keeps
/// `spacing` distance from all accepted centers, then push its surface
/// neighbors. Restarts on every unvisited sample, so disconnected components
/// all receive centers. Returns indices into `samples`.
pub fn place_patch_centers(samples: &[SurfaceSample], spacing: f64, seed: u64) -> Vec<usize> {
    assert!(spacing >= 0.0);
    if samples.is_empty() {
        return Vec::new();
    }
    let positions: Vec<Vec3> = samples.iter().map(|s| s.position).collect();
    let tree = KdTree::build(&positions);
    let graph_k = 9.min(samples.len());

    let mut accepted: Vec<usize> = Vec::new();
    let mut accepted_pts: Vec<Vec3> = Vec::new();
    // accepted-set KD-tree rebuilt amortized; fresh points checked linearly
    let mut accepted_tree = KdTree::build(&[]);

    let mut visited = vec![false; samples.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..samples.len());
    let mut queue = VecDeque::from([first]);
    visited[first] = true;
    let mut next_scan = 0usize;

    loop {
        while let Some(i) = queue.pop_front() {
            let p = positions[i];
            let d2_tree = accepted_tree
                .nearest(&p)
                .map(|(_, d)| d)
                .unwrap_or(f64::INFINITY);
            let d2_recent = accepted_pts[accepted_tree.len()..]
                .iter()
                .map(|q| (q - p).norm_squared())
                .fold(f64::INFINITY, f64::min);
            if d2_tree.min(d2_recent) >= spacing * spacing {
                accepted.push(i);
                accepted_pts.push(p);
                if (accepted_pts.len() - accepted_tree.len()) * 2 >= accepted_tree.len().max(64) {
                    accepted_tree = KdTree::build(&accepted_pts);
                }
            }
            for (j, _) in tree.k_nearest(&p, graph_k) {
                if !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        // restart on the next unvisited sample (disconnected component)
        while next_scan < samples.len() && visited[next_scan] {
            next_scan += 1;
        }
        if next_scan == samples.len() {
            break;
        }
        visited[next_scan] = true;
        queue.push_back(next_scan);
    }
    accepted
}

/// Gather the k nearest band nodes around `center` and the surface samples in
/// their dilated bounding box, all expressed in the center's local frame.
pub fn build_patch(
    center: &SurfaceSample,
    band: &NarrowBand,
    band_tree: &KdTree,
    samples: &[SurfaceSample],
    sample_tree: &KdTree,
    config: &PatchConfig,
) -> Result<Patch> {
    if band.len() < config.k {
        return Err(Error::Config(format!(
            "band has {} nodes, fewer than k = {}",
            band.len(),
            config.k
        )));
    }
    let frame = LocalFrame::from_sample(center);
    let nearest = band_tree.k_nearest(&center.position, config.k);
    let band_idx: Vec<u32> = nearest.iter().map(|&(i, _)| i as u32).collect();
    let band_local: Vec<Vec3> = band_idx
        .iter()
        .map(|&i| frame.to_local_point(&band.node_positions[i as usize]))
        .collect();

    let bbox = Aabb::of_points(band_idx.iter().map(|&i| &band.node_positions[i as usize]))
        .expect("k >= 1");
    let margin = config.margin_factor * bbox.diagonal().norm();
    let bbox = bbox.dilated(margin);

    // candidate features via a covering ball, then the exact box test
    let box_center = (bbox.min + bbox.max) * 0.5;
    let radius = bbox.diagonal().norm() * 0.5;
    let mut candidates = sample_tree.within_radius(&box_center, radius);
    candidates.sort_unstable();
    let mask = config.feature_mask;
    let mut feat_local: Vec<[f64; 6]> = Vec::new();
    for si in candidates {
        let s = &samples[si];
        if !bbox.contains(&s.position) {
            continue;
        }
        let p = frame.to_local_point(&s.position);
        let n = frame.to_local_vector(&s.normal);
        feat_local.push([
            if mask.positions { p.x } else { 0.0 },
            if mask.positions { p.y } else { 0.0 },
            if mask.positions { p.z } else { 0.0 },
            if mask.normals { n.x } else { 0.0 },
            if mask.normals { n.y } else { 0.0 },
            if mask.normals { n.z } else { 0.0 },
        ]);
    }
    if feat_local.is_empty() {
        return Err(Error::Geometry(
            "patch feature set is empty; band and samples are inconsistent".into(),
        ));
    }

    Ok(Patch {
        frame,
        band_idx,
        band_local,
        feat_local,
    })
}

/// Uniform random rotation applied jointly to the stencil, feature positions
/// and feature normals; the frame is updated so world-to-local round trips
/// stay exact. Training-time augmentation only.
pub fn augment_rotate(patch: &Patch, seed: u64) -> Patch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot = random_rotation(&mut rng);
    rotate_patch(patch, &rot)
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    use rand_distr::StandardNormal;
    let q = nalgebra::Quaternion::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    nalgebra::UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner()
}

pub fn rotate_patch(patch: &Patch, rot: &Mat3) -> Patch {
    let band_local = patch.band_local.iter().map(|p| rot * p).collect();
    let feat_local = patch
        .feat_local
        .iter()
        .map(|f| {
            let p = rot * Vec3::new(f[0], f[1], f[2]);
            let n = rot * Vec3::new(f[3], f[4], f[5]);
            [p.x, p.y, p.z, n.x, n.y, n.z]
        })
        .collect();
    Patch {
        frame: LocalFrame {
            center: patch.frame.center,
            axes: rot * patch.frame.axes,
        },
        band_idx: patch.band_idx.clone(),
        band_local,
        feat_local,
    }
}

/// The patch cover of a band: placed centers, built patches, per-node cover
/// counts. Construction repairs any uncovered node by adding a patch at that
/// node's closest surface point, so the union of stencils always equals the
/// band.
pub struct PatchSet {
    pub patches: Vec<Patch>,
    pub config: PatchConfig,
    /// How many patch stencils contain each band node (all >= 1).
    pub cover_count: Vec<u32>,
    /// Patches appended by coverage repair.
    pub repaired: usize,
}

pub fn build_patches(
    band: &NarrowBand,
    samples: &[SurfaceSample],
    config: &PatchConfig,
) -> Result<PatchSet> {
    let r_patch = coverage_max_epsilon(band.grid.spacing, config.k);
    if band.epsilon > r_patch + 1e-12 {
        return Err(Error::Config(format!(
            "epsilon {} violates the coverage bound {} for k = {}",
            band.epsilon, r_patch, config.k
        )));
    }
    let spacing = config.spacing_factor * r_patch;
    let centers = place_patch_centers(samples, spacing, config.seed);
    if centers.is_empty() {
        return Err(Error::Geometry("no patch centers placed".into()));
    }

    let band_tree = KdTree::build(&band.node_positions);
    let sample_tree = KdTree::build(&samples.iter().map(|s| s.position).collect::<Vec<_>>());

    let mut patches: Vec<Patch> = centers
        .par_iter()
        .map(|&ci| build_patch(&samples[ci], band, &band_tree, samples, &sample_tree, config))
        .collect::<Result<_>>()?;

    let mut cover_count = vec![0u32; band.len()];
    for p in &patches {
        for &i in &p.band_idx {
            cover_count[i as usize] += 1;
        }
    }

    // repair: a node in no stencil gets a patch centered at its own closest
    // surface point
    let mut repaired = 0usize;
    loop {
        let uncovered = match cover_count.iter().position(|&c| c == 0) {
            Some(i) => i,
            None => break,
        };
        if repaired > band.len() {
            return Err(Error::Geometry("coverage repair failed to terminate".into()));
        }
        let center =
            SurfaceSample::new(band.cp[uncovered], band.cp_normal[uncovered]).with_arbitrary_frame();
        let patch = build_patch(&center, band, &band_tree, samples, &sample_tree, config)?;
        if !patch.band_idx.contains(&(uncovered as u32)) {
            return Err(Error::Geometry(format!(
                "uncovered band node {uncovered} is outside its repair patch; \
                 epsilon/k violate the coverage geometry"
            )));
        }
        for &i in &patch.band_idx {
            cover_count[i as usize] += 1;
        }
        patches.push(patch);
        repaired += 1;
    }

    Ok(PatchSet {
        patches,
        config: config.clone(),
        cover_count,
        repaired,
    })
}
