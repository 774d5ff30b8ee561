//! Oriented point clouds: XYZ/XYZN parsing, PCA normal estimation with
//! orientation propagation, and nearest-sample closest-point queries.

use super::{Aabb, SurfaceSample};
use crate::kdtree::KdTree;
use crate::{Error, Result, Vec3};
use nalgebra::Matrix3;
use std::collections::VecDeque;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct OrientedPointCloud {
    pub points: Vec<Vec3>,
    /// Unit normals, same length as `points`; may be empty for raw clouds.
    pub normals: Vec<Vec3>,
}

impl OrientedPointCloud {
    pub fn new(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if !normals.is_empty() {
            if normals.len() != points.len() {
                return Err(Error::Geometry(
                    "normals and points must have equal length".into(),
                ));
            }
            for (i, n) in normals.iter().enumerate() {
                if (n.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::Geometry(format!(
                        "normal {i} is not unit length (|n| = {})",
                        n.norm()
                    )));
                }
            }
        }
        Ok(OrientedPointCloud { points, normals })
    }

    pub fn has_normals(&self) -> bool {
        !self.normals.is_empty()
    }
}

/// Parse "x y z [nx ny nz]" lines. Blank lines and `#` comments allowed;
/// every data line must have the same arity. Near-unit normals are
/// renormalized, degenerate ones rejected.
pub fn parse_xyz(text: &str) -> Result<OrientedPointCloud> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut arity: Option<usize> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<f64> = content
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad number {t:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line,
                msg: "non-finite value".into(),
            });
        }
        match arity {
            None => {
                if fields.len() != 3 && fields.len() != 6 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("expected 3 or 6 fields, got {}", fields.len()),
                    });
                }
                arity = Some(fields.len());
            }
            Some(a) if a != fields.len() => {
                return Err(Error::Parse {
                    line,
                    msg: format!("inconsistent field count ({} vs {a})", fields.len()),
                });
            }
            _ => {}
        }
        points.push(Vec3::new(fields[0], fields[1], fields[2]));
        if fields.len() == 6 {
            let n = Vec3::new(fields[3], fields[4], fields[5]);
            let len = n.norm();
            if !(0.5..=2.0).contains(&len) {
                return Err(Error::Parse {
                    line,
                    msg: format!("normal length {len} too far from 1"),
                });
            }
            normals.push(n / len);
        }
    }

    if points.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no points in file".into(),
        });
    }
    OrientedPointCloud::new(points, normals)
}

pub fn load_xyz(path: &Path) -> Result<OrientedPointCloud> {
    parse_xyz(&std::fs::read_to_string(path)?)
}

pub fn save_xyz(cloud: &OrientedPointCloud, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (i, p) in cloud.points.iter().enumerate() {
        if cloud.has_normals() {
            let n = cloud.normals[i];
            writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z)?;
        } else {
            writeln!(out, "{} {} {}", p.x, p.y, p.z)?;
        }
    }
    Ok(())
}

/// Estimate normals by PCA over k-NN neighborhoods.
///
/// The normal is the eigenvector of the smallest covariance eigenvalue. Signs
/// follow stored orientation when the cloud has normals; otherwise they are
/// propagated along a BFS spanning tree of the k-NN graph from a seed whose
/// normal is pointed away from the centroid. Rank-deficient neighborhoods
/// (collinear points) are dropped. No curvature is emitted.
pub fn pointcloud_features(cloud: &OrientedPointCloud, k_nn: usize) -> Result<Vec<SurfaceSample>> {
    if k_nn < 3 {
        return Err(Error::Config("pointcloud_features needs k_nn >= 3".into()));
    }
    if cloud.points.len() < k_nn {
        return Err(Error::Geometry(format!(
            "cloud has {} points, fewer than k_nn = {k_nn}",
            cloud.points.len()
        )));
    }
    let tree = KdTree::build(&cloud.points);
    let n = cloud.points.len();
    let mut normals: Vec<Option<Vec3>> = vec![None; n];
    let mut graph: Vec<Vec<u32>> = vec![Vec::new(); n];

    for i in 0..n {
        let nbrs = tree.k_nearest(&cloud.points[i], k_nn);
        let mean: Vec3 = nbrs.iter().map(|&(j, _)| cloud.points[j]).sum::<Vec3>() / k_nn as f64;
        let mut cov = Matrix3::zeros();
        for &(j, _) in &nbrs {
            let d = cloud.points[j] - mean;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigen();
        // eigenvalues unsorted: find smallest and second-smallest
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let lmin = eig.eigenvalues[order[0]].max(0.0);
        let lmid = eig.eigenvalues[order[1]].max(0.0);
        let lmax = eig.eigenvalues[order[2]].max(0.0);
        // collinear neighborhood: no plane to fit
        if lmid <= 1e-10 * lmax.max(1e-300) {
            continue;
        }
        let mut normal = eig.eigenvectors.column(order[0]).into_owned();
        normal.normalize_mut();
        let _ = lmin;
        normals[i] = Some(normal);
        graph[i] = nbrs.iter().map(|&(j, _)| j as u32).collect();
    }

    if cloud.has_normals() {
        for i in 0..n {
            if let Some(nrm) = normals[i].as_mut() {
                if nrm.dot(&cloud.normals[i]) < 0.0 {
                    *nrm = -*nrm;
                }
            }
        }
    } else {
        orient_by_propagation(&cloud.points, &graph, &mut normals);
    }

    Ok((0..n)
        .filter_map(|i| normals[i].map(|nrm| SurfaceSample::new(cloud.points[i], nrm)))
        .collect())
}

fn orient_by_propagation(points: &[Vec3], graph: &[Vec<u32>], normals: &mut [Option<Vec3>]) {
    let centroid = super::reference_center(points);
    let n = points.len();
    let mut visited = vec![false; n];
    for start in 0..n {
        if visited[start] || normals[start].is_none() {
            continue;
        }
        // seed: orient away from the centroid
        let outward = points[start] - centroid;
        if let Some(nrm) = normals[start].as_mut() {
            if outward.norm() > 1e-12 && nrm.dot(&outward) < 0.0 {
                *nrm = -*nrm;
            }
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let parent = normals[i].unwrap();
            for &j in &graph[i] {
                let j = j as usize;
                if visited[j] || normals[j].is_none() {
                    continue;
                }
                visited[j] = true;
                if let Some(nrm) = normals[j].as_mut() {
                    if nrm.dot(&parent) < 0.0 {
                        *nrm = -*nrm;
                    }
                }
                queue.push_back(j);
            }
        }
    }
}

/// A point cloud prepared for closest-point queries.
pub struct CloudSurface {
    pub samples: Vec<SurfaceSample>,
    tree: KdTree,
    /// Refine the closest point by projecting onto the nearest sample's
    /// tangent plane.
    pub tangent_refine: bool,
}

impl CloudSurface {
    pub fn new(cloud: &OrientedPointCloud, k_nn: usize) -> Result<Self> {
        let samples = if cloud.has_normals() && cloud.points.len() < k_nn {
            cloud
                .points
                .iter()
                .zip(cloud.normals.iter())
                .map(|(p, n)| SurfaceSample::new(*p, *n))
                .collect()
        } else {
            pointcloud_features(cloud, k_nn)?
        };
        if samples.is_empty() {
            return Err(Error::Geometry("no usable points in cloud".into()));
        }
        let tree = KdTree::build(&samples.iter().map(|s| s.position).collect::<Vec<_>>());
        Ok(CloudSurface {
            samples,
            tree,
            tangent_refine: true,
        })
    }

    pub fn closest_point(&self, x: &Vec3) -> Result<(Vec3, Vec3)> {
        let (i, _) = self
            .tree
            .nearest(x)
            .ok_or_else(|| Error::Geometry("empty cloud".into()))?;
        let s = &self.samples[i];
        if self.tangent_refine {
            let d = x - s.position;
            let cp = x - s.normal * d.dot(&s.normal);
            Ok((cp, s.normal))
        } else {
            Ok((s.position, s.normal))
        }
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::of_points(self.samples.iter().map(|s| &s.position)).expect("non-empty cloud")
    }
}
