//! Scan representation, grid subsampling, per-scan normal estimation, and
//! the voxel hash map used for closest-point queries.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::MIN_SCAN_WINDOW;

/// Normals are valid when their norm is within this of 1.
pub const NORMAL_UNIT_TOL: f64 = 1e-6;

/// Relative eigenvalue threshold below which a neighborhood is collinear.
const COLLINEAR_EIG_RATIO: f64 = 1e-9;

/// A sensor-frame point with its absolute measurement time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPoint {
    pub position: Vector3<f64>,
    pub timestamp: f64,
}

/// One LiDAR sweep.
///
/// Normals are optional; an invalid normal is stored as the zero vector so
/// the validity flag survives binary round trips.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub index: usize,
    pub points: Vec<TimedPoint>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub t_b: f64,
    pub t_e: f64,
}

impl Scan {
    pub fn new(
        index: usize,
        points: Vec<TimedPoint>,
        normals: Option<Vec<Vector3<f64>>>,
        t_b: f64,
        t_e: f64,
    ) -> Result<Self> {
        if !(t_e - t_b >= MIN_SCAN_WINDOW) {
            return Err(Error::DegenerateScanWindow { t_b, t_e });
        }
        for p in &points {
            let v = p.position;
            if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
                return Err(Error::NonFiniteCoordinate(v.x, v.y, v.z));
            }
            if p.timestamp < t_b || p.timestamp > t_e {
                return Err(Error::TimestampOutOfWindow {
                    t: p.timestamp,
                    t_b,
                    t_e,
                });
            }
        }
        if let Some(n) = &normals {
            if n.len() != points.len() {
                return Err(Error::InvalidScan(format!(
                    "normal count {} does not match point count {}",
                    n.len(),
                    points.len()
                )));
            }
        }
        Ok(Scan {
            index,
            points,
            normals,
            t_b,
            t_e,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// A normal is usable only when close to unit length.
    pub fn normal_valid(&self, i: usize) -> bool {
        match &self.normals {
            Some(n) => (n[i].norm() - 1.0).abs() <= NORMAL_UNIT_TOL,
            None => false,
        }
    }
}

/// Signed integer voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct VoxelKey {
    pub i: i64,
    pub j: i64,
    pub k: i64,
}

impl VoxelKey {
    pub fn offset(&self, di: i64, dj: i64, dk: i64) -> VoxelKey {
        VoxelKey {
            i: self.i + di,
            j: self.j + dj,
            k: self.k + dk,
        }
    }

    fn mixed(&self) -> u64 {
        fn mix(mut z: u64) -> u64 {
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^ (z >> 31)
        }
        mix(mix(mix(self.i as u64) ^ self.j as u64) ^ self.k as u64)
    }
}

impl std::hash::Hash for VoxelKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.mixed());
    }
}

/// Pass-through hasher: [`VoxelKey`] already mixes its coordinates.
#[derive(Default, Clone)]
pub struct PremixedHasher(u64);

impl Hasher for PremixedHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, _bytes: &[u8]) {
        unreachable!("voxel keys hash through write_u64");
    }

    fn write_u64(&mut self, v: u64) {
        self.0 = v;
    }
}

type VoxelTable<V> = HashMap<VoxelKey, V, BuildHasherDefault<PremixedHasher>>;

/// Floor-convention voxel coordinates of a point.
pub fn voxel_key(p: &Vector3<f64>, voxel_size: f64) -> Result<VoxelKey> {
    assert!(voxel_size > 0.0, "voxel size must be positive");
    if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
        return Err(Error::NonFiniteCoordinate(p.x, p.y, p.z));
    }
    Ok(VoxelKey {
        i: (p.x / voxel_size).floor() as i64,
        j: (p.y / voxel_size).floor() as i64,
        k: (p.z / voxel_size).floor() as i64,
    })
}

/// Sparse voxel grid storing, per occupied voxel, the index of the inserted
/// point closest to the voxel center (ties broken by lower index).
#[derive(Debug, Clone)]
pub struct VoxelHashMap {
    voxel_size: f64,
    cells: VoxelTable<usize>,
}

impl VoxelHashMap {
    /// Single pass over `points`; one representative index per voxel.
    pub fn build(points: &[Vector3<f64>], voxel_size: f64) -> Result<Self> {
        assert!(voxel_size > 0.0, "voxel size must be positive");
        let mut cells: VoxelTable<usize> = VoxelTable::default();
        for (idx, p) in points.iter().enumerate() {
            let key = voxel_key(p, voxel_size)?;
            let center = Vector3::new(
                (key.i as f64 + 0.5) * voxel_size,
                (key.j as f64 + 0.5) * voxel_size,
                (key.k as f64 + 0.5) * voxel_size,
            );
            let d2 = (p - center).norm_squared();
            match cells.entry(key) {
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(idx);
                }
                std::collections::hash_map::Entry::Occupied(mut e) => {
                    let cur = *e.get();
                    let cur_d2 = (points[cur] - center).norm_squared();
                    // Strict less-than keeps the lower index on ties.
                    if d2 < cur_d2 {
                        e.insert(idx);
                    }
                }
            }
        }
        Ok(VoxelHashMap { voxel_size, cells })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn occupied(&self) -> usize {
        self.cells.len()
    }

    pub fn get(&self, key: &VoxelKey) -> Option<usize> {
        self.cells.get(key).copied()
    }

    /// Cell contents in deterministic key order.
    pub fn sorted_cells(&self) -> Vec<(VoxelKey, usize)> {
        let mut v: Vec<_> = self.cells.iter().map(|(k, i)| (*k, *i)).collect();
        v.sort();
        v
    }

    /// Closest stored representative among the query's voxel and its 26
    /// neighbors. Returns `(point index, distance)` or `None` when all 27
    /// cells are empty.
    pub fn nearest_in_27(
        &self,
        query: &Vector3<f64>,
        points: &[Vector3<f64>],
    ) -> Option<(usize, f64)> {
        if !(query.x.is_finite() && query.y.is_finite() && query.z.is_finite()) {
            return None;
        }
        let key = voxel_key(query, self.voxel_size).ok()?;
        let mut best: Option<(usize, f64)> = None;
        for di in -1..=1 {
            for dj in -1..=1 {
                for dk in -1..=1 {
                    if let Some(idx) = self.get(&key.offset(di, dj, dk)) {
                        let d2 = (points[idx] - query).norm_squared();
                        if best.map_or(true, |(_, bd2)| d2 < bd2) {
                            best = Some((idx, d2));
                        }
                    }
                }
            }
        }
        best.map(|(idx, d2)| (idx, d2.sqrt()))
    }
}

/// Keeps one point per voxel (closest to the voxel center); normals and
/// timestamps travel with the surviving points. Output preserves the input
/// ordering of the survivors.
pub fn grid_subsample(scan: &Scan, cell: f64) -> Scan {
    assert!(cell > 0.0, "subsample cell must be positive");
    let positions: Vec<Vector3<f64>> = scan.points.iter().map(|p| p.position).collect();
    // Scan constructors reject non-finite coordinates, so build cannot fail.
    let map = VoxelHashMap::build(&positions, cell).expect("scan points are finite");
    let mut keep: Vec<usize> = map.cells.values().copied().collect();
    keep.sort_unstable();
    let points: Vec<TimedPoint> = keep.iter().map(|&i| scan.points[i]).collect();
    let normals = scan
        .normals
        .as_ref()
        .map(|n| keep.iter().map(|&i| n[i]).collect());
    Scan {
        index: scan.index,
        points,
        normals,
        t_b: scan.t_b,
        t_e: scan.t_e,
    }
}

/// Exact k-nearest-neighbor search over a fixed point set, grid accelerated.
struct KnnGrid {
    cell: f64,
    cells: VoxelTable<Vec<usize>>,
}

impl KnnGrid {
    fn build(points: &[Vector3<f64>]) -> Self {
        // Cell size targeting a handful of points per cell.
        let n = points.len().max(1);
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = hi - lo;
        let volume = (extent.x.max(1e-9)) * (extent.y.max(1e-9)) * (extent.z.max(1e-9));
        let cell = (volume / n as f64).cbrt().clamp(1e-6, 1e6) * 2.0;
        let mut cells: VoxelTable<Vec<usize>> = VoxelTable::default();
        for (i, p) in points.iter().enumerate() {
            let key = voxel_key(p, cell).expect("finite points");
            cells.entry(key).or_default().push(i);
        }
        KnnGrid { cell, cells }
    }

    /// Indices of the `k` nearest points to `points[query]`, excluding the
    /// query itself. Exact: rings expand until the k-th best distance is
    /// covered by the searched radius.
    fn knn(&self, points: &[Vector3<f64>], query: usize, k: usize) -> Vec<usize> {
        let q = points[query];
        let center = voxel_key(&q, self.cell).expect("finite points");
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        let mut ring = 0i64;
        loop {
            let mut any_cell = false;
            for di in -ring..=ring {
                for dj in -ring..=ring {
                    for dk in -ring..=ring {
                        if di.abs().max(dj.abs()).max(dk.abs()) != ring {
                            continue;
                        }
                        let Some(indices) = self.cells.get(&center.offset(di, dj, dk)) else {
                            continue;
                        };
                        any_cell = true;
                        for &i in indices {
                            if i == query {
                                continue;
                            }
                            let d2 = (points[i] - q).norm_squared();
                            // Distance ties resolved toward lower index so
                            // results do not depend on traversal order.
                            let entry = (d2, i);
                            if heap.len() < k {
                                heap.push(entry);
                                heap.sort_unstable_by(|a, b| {
                                    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
                                });
                            } else if let Some(last) = heap.last() {
                                if entry.0.total_cmp(&last.0).then(entry.1.cmp(&last.1))
                                    == std::cmp::Ordering::Less
                                {
                                    heap.pop();
                                    let pos = heap
                                        .binary_search_by(|e| {
                                            e.0.total_cmp(&entry.0).then(e.1.cmp(&entry.1))
                                        })
                                        .unwrap_err();
                                    heap.insert(pos, entry);
                                }
                            }
                        }
                    }
                }
            }
            let covered = (ring as f64) * self.cell;
            if heap.len() >= k {
                if let Some(last) = heap.last() {
                    if last.0.sqrt() <= covered {
                        break;
                    }
                }
            }
            // No more occupied cells anywhere beyond the bounding volume.
            if !any_cell && ring > 0 && (ring as f64) * self.cell > 2e6 {
                break;
            }
            if heap.len() >= points.len().saturating_sub(1) && ring > 1 {
                break;
            }
            ring += 1;
        }
        heap.into_iter().map(|(_, i)| i).collect()
    }
}

/// Normal estimation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalParams {
    /// Neighborhood size for the covariance fit.
    pub k: usize,
    /// Neighborhoods with smallest/largest eigenvalue ratio above this are
    /// flagged invalid (not locally planar). Values >= 1 disable the check.
    pub planarity_max_ratio: f64,
}

impl Default for NormalParams {
    fn default() -> Self {
        NormalParams {
            k: 30,
            planarity_max_ratio: 0.1,
        }
    }
}

/// Per-point plane normals from the covariance of the k nearest neighbors
/// within the scan (sensor frame). Degenerate neighborhoods are flagged
/// invalid via a zero normal, never fatal.
pub fn estimate_normals(scan: &Scan, params: &NormalParams) -> Scan {
    let n = scan.points.len();
    let positions: Vec<Vector3<f64>> = scan.points.iter().map(|p| p.position).collect();
    let mut normals = vec![Vector3::zeros(); n];
    if n >= 2 {
        let grid = KnnGrid::build(&positions);
        let k = params.k.min(n - 1);
        for i in 0..n {
            let neighbors = grid.knn(&positions, i, k);
            normals[i] = neighborhood_normal(&positions, &neighbors, params.planarity_max_ratio);
        }
    }
    Scan {
        index: scan.index,
        points: scan.points.clone(),
        normals: Some(normals),
        t_b: scan.t_b,
        t_e: scan.t_e,
    }
}

/// Unit eigenvector of the smallest covariance eigenvalue, or zero when the
/// neighborhood is too small, collinear, or not planar enough.
fn neighborhood_normal(
    positions: &[Vector3<f64>],
    neighbors: &[usize],
    planarity_max_ratio: f64,
) -> Vector3<f64> {
    if neighbors.len() < 3 {
        return Vector3::zeros();
    }
    let mut mean = Vector3::zeros();
    for &i in neighbors {
        mean += positions[i];
    }
    mean /= neighbors.len() as f64;
    let mut cov = Matrix3::zeros();
    for &i in neighbors {
        let d = positions[i] - mean;
        cov += d * d.transpose();
    }
    cov /= neighbors.len() as f64;
    let eig = cov.symmetric_eigen();
    // Ascending order of eigenvalues.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let l0 = eig.eigenvalues[order[0]].max(0.0);
    let l1 = eig.eigenvalues[order[1]].max(0.0);
    let l2 = eig.eigenvalues[order[2]].max(0.0);
    if l2 <= 0.0 || !l2.is_finite() {
        return Vector3::zeros(); // all points coincident
    }
    if l1 <= COLLINEAR_EIG_RATIO * l2 {
        return Vector3::zeros(); // collinear neighborhood
    }
    if l0 > planarity_max_ratio * l2 {
        return Vector3::zeros(); // not planar enough
    }
    let v = eig.eigenvectors.column(order[0]).into_owned();
    let norm = v.norm();
    if norm <= 0.0 || !norm.is_finite() {
        return Vector3::zeros();
    }
    v / norm
}
