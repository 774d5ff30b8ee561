//! Small static KD-tree over 3D points.
//!
//! Built once, queried many times (nearest, k-nearest, radius). Ties in
//! k-nearest queries are broken by the lowest point index so downstream
//! stencil construction is deterministic.

use crate::Vec3;
use std::cmp::Ordering;

pub struct KdTree {
    points: Vec<Vec3>,
    // implicit tree over `order`: each range [lo, hi) has its pivot at
    // mid = (lo + hi) / 2 and children [lo, mid) / (mid, hi)
    order: Vec<u32>,
    split_axis: Vec<u8>,
}

const LEAF: usize = 16;

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut split_axis = vec![0u8; points.len()];
        if !points.is_empty() {
            build_rec(points, &mut order, &mut split_axis, 0);
        }
        KdTree {
            points: points.to_vec(),
            order,
            split_axis,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, idx: usize) -> Vec3 {
        self.points[idx]
    }

    /// Index and squared distance of the nearest point; `None` on an empty tree.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(q, 0, self.order.len(), &mut best);
        Some(best)
    }

    fn nearest_rec(&self, q: &Vec3, lo: usize, hi: usize, best: &mut (usize, f64)) {
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                let i = i as usize;
                let d2 = (self.points[i] - q).norm_squared();
                if d2 < best.1 || (d2 == best.1 && i < best.0) {
                    *best = (i, d2);
                }
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let pivot = self.order[mid] as usize;
        let d2 = (self.points[pivot] - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && pivot < best.0) {
            *best = (pivot, d2);
        }
        let axis = self.split_axis[mid] as usize;
        let delta = q[axis] - self.points[pivot][axis];
        let (near, far) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_rec(q, near.0, near.1, best);
        if delta * delta <= best.1 {
            self.nearest_rec(q, far.0, far.1, best);
        }
    }

    /// The `k` nearest points, sorted by (distance, index). Ties broken by
    /// lowest index. Returns fewer than `k` entries only if the tree is small.
    pub fn k_nearest(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        self.knn_rec(q, 0, self.order.len(), k, &mut heap);
        heap.into_iter().map(|(d, i)| (i, d)).collect()
    }

    fn knn_rec(&self, q: &Vec3, lo: usize, hi: usize, k: usize, heap: &mut Vec<(f64, usize)>) {
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                let i = i as usize;
                let d2 = (self.points[i] - q).norm_squared();
                push_bounded(heap, k, (d2, i));
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let pivot = self.order[mid] as usize;
        push_bounded(heap, k, ((self.points[pivot] - q).norm_squared(), pivot));
        let axis = self.split_axis[mid] as usize;
        let delta = q[axis] - self.points[pivot][axis];
        let (near, far) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_rec(q, near.0, near.1, k, heap);
        let worst = if heap.len() < k {
            f64::INFINITY
        } else {
            heap.last().unwrap().0
        };
        if delta * delta <= worst {
            self.knn_rec(q, far.0, far.1, k, heap);
        }
    }

    /// All point indices within `radius` of `q` (inclusive), unsorted.
    pub fn within_radius(&self, q: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if self.points.is_empty() {
            return out;
        }
        self.radius_rec(q, 0, self.order.len(), radius * radius, &mut out);
        out
    }

    fn radius_rec(&self, q: &Vec3, lo: usize, hi: usize, r2: f64, out: &mut Vec<usize>) {
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                let i = i as usize;
                if (self.points[i] - q).norm_squared() <= r2 {
                    out.push(i);
                }
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let pivot = self.order[mid] as usize;
        if (self.points[pivot] - q).norm_squared() <= r2 {
            out.push(pivot);
        }
        let axis = self.split_axis[mid] as usize;
        let delta = q[axis] - self.points[pivot][axis];
        let (near, far) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.radius_rec(q, near.0, near.1, r2, out);
        if delta * delta <= r2 {
            self.radius_rec(q, far.0, far.1, r2, out);
        }
    }
}

fn cmp_dist_idx(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.partial_cmp(&b.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

fn push_bounded(heap: &mut Vec<(f64, usize)>, k: usize, item: (f64, usize)) {
    // `heap` kept sorted ascending; k is small enough that insertion wins
    let pos = heap.partition_point(|x| cmp_dist_idx(x, &item) == Ordering::Less);
    if pos < k {
        heap.insert(pos, item);
        heap.truncate(k);
    }
}

fn build_rec(points: &[Vec3], order: &mut [u32], split_axis: &mut [u8], offset: usize) {
    if order.len() <= LEAF {
        return;
    }
    // split on the widest axis of this subset
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in order.iter() {
        let p = points[i as usize];
        lo = lo.inf(&p);
        hi = hi.sup(&p);
    }
    let ext = hi - lo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .partial_cmp(&points[b as usize][axis])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    split_axis[offset + mid] = axis as u8;
    // pivot stays in place at `mid`; children never re-partition it
    let (left, rest) = order.split_at_mut(mid);
    let right = &mut rest[1..];
    build_rec(points, left, split_axis, offset);
    build_rec(points, right, split_axis, offset + mid + 1);
}
