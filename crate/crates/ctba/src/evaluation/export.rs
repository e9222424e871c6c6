//! Aggregated map export: deskew every scan with the optimized trajectory
//! and write a single text cloud.

use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{io_err, Result};
use crate::geometry::{compute_alpha, transform_point, Trajectory};
use crate::pointcloud::VoxelHashMap;
use crate::storage::ScanStore;

/// Deskews all scans at per-beam interpolated poses and writes
/// `x y z nx ny nz` lines; normals are zero when a scan carries none.
/// With `subsample_cell` set, one closest-to-center representative per
/// voxel survives.
pub fn export_map(
    traj: &Trajectory,
    store: &mut ScanStore,
    subsample_cell: Option<f64>,
    out: &Path,
) -> Result<()> {
    let mut positions: Vec<Vector3<f64>> = Vec::new();
    let mut normals: Vec<Vector3<f64>> = Vec::new();
    for idx in 0..store.len() {
        let scan = store.get(idx)?;
        for (i, p) in scan.points.iter().enumerate() {
            let alpha = compute_alpha(p.timestamp, scan.t_b, scan.t_e)?;
            let pose = traj.pose_at_alpha(idx, alpha)?;
            positions.push(transform_point(&pose, &p.position));
            normals.push(match &scan.normals {
                Some(n) => pose.rotation.rotate(&n[i]),
                None => Vector3::zeros(),
            });
        }
    }
    let keep: Vec<usize> = match subsample_cell {
        Some(cell) => {
            let map = VoxelHashMap::build(&positions, cell)?;
            let mut keep: Vec<usize> = map.sorted_cells().iter().map(|&(_, i)| i).collect();
            keep.sort_unstable();
            keep
        }
        None => (0..positions.len()).collect(),
    };
    let file = std::fs::File::create(out).map_err(|e| io_err(out, e))?;
    let mut w = BufWriter::new(file);
    for &i in &keep {
        let p = positions[i];
        let n = normals[i];
        writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z)
            .map_err(|e| io_err(out, e))?;
    }
    w.flush().map_err(|e| io_err(out, e))
}
