//! Candidate-scan sampling and per-point closest-point association across
//! scans. The whole state is rebuilt every optimization iteration because
//! deskewing moves the points.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::Trajectory;
use crate::pointcloud::{Scan, VoxelHashMap};
use crate::storage::ScanStore;

/// Deterministic seed mixer so sampling is independent of execution order.
pub fn mix_seed(base: u64, iteration: u64, scan: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix(base ^ splitmix(iteration ^ splitmix(scan)))
}

/// Candidate scans for one source scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub source_scan: usize,
    pub candidates: Vec<usize>,
}

/// One residual-row pairing. The target normal is cached in the global
/// frame at linearization time, so residuals and Jacobians treat it as a
/// constant until the state is rebuilt.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub source_scan: usize,
    pub source_point: usize,
    pub target_scan: usize,
    pub target_point: usize,
    pub normal: Vector3<f64>,
    pub alpha_source: f64,
    pub alpha_target: f64,
}

/// A scan placed into the global frame with the current trajectory.
///
/// Sensor-frame points are retained because the Jacobians differentiate
/// the placement of the raw point, not the deskewed one.
#[derive(Debug, Clone)]
pub struct DeskewedScan {
    pub scan_index: usize,
    pub sensor_points: Vec<Vector3<f64>>,
    pub global_points: Vec<Vector3<f64>>,
    pub global_normals: Vec<Vector3<f64>>,
    pub normal_valid: Vec<bool>,
    pub alphas: Vec<f64>,
}

/// Transforms every beam with its interpolated pose; normals rotate with
/// the per-beam rotation.
pub fn deskew_scan(scan: &Scan, traj: &Trajectory) -> Result<DeskewedScan> {
    let n = scan.len();
    let mut sensor_points = Vec::with_capacity(n);
    let mut global_points = Vec::with_capacity(n);
    let mut global_normals = Vec::with_capacity(n);
    let mut normal_valid = Vec::with_capacity(n);
    let mut alphas = Vec::with_capacity(n);
    for (i, p) in scan.points.iter().enumerate() {
        let alpha = crate::geometry::compute_alpha(p.timestamp, scan.t_b, scan.t_e)?;
        let pose = traj.pose_at_alpha(scan.index, alpha)?;
        sensor_points.push(p.position);
        global_points.push(crate::geometry::transform_point(&pose, &p.position));
        let valid = scan.normal_valid(i);
        let normal = if valid {
            pose.rotation.rotate(&scan.normals.as_ref().unwrap()[i])
        } else {
            Vector3::zeros()
        };
        global_normals.push(normal);
        normal_valid.push(valid);
        alphas.push(alpha);
    }
    Ok(DeskewedScan {
        scan_index: scan.index,
        sensor_points,
        global_points,
        global_normals,
        normal_valid,
        alphas,
    })
}

/// Uniform sample without replacement of up to `n_matches` scans whose
/// positions lie within `tau` of scan `i`. Deterministic in `seed`.
pub fn sample_candidates(
    positions: &[Vector3<f64>],
    i: usize,
    tau: f64,
    n_matches: usize,
    seed: u64,
) -> CandidateSet {
    let eligible: Vec<usize> = (0..positions.len())
        .filter(|&k| k != i && (positions[i] - positions[k]).norm() <= tau)
        .collect();
    let mut candidates: Vec<usize> = if eligible.len() <= n_matches {
        eligible
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, eligible.len(), n_matches)
            .into_iter()
            .map(|j| eligible[j])
            .collect()
    };
    candidates.sort_unstable();
    CandidateSet {
        source_scan: i,
        candidates,
    }
}

/// Closest-point association of one source scan against its candidates.
/// Emits at most one correspondence per (source point, candidate scan).
pub fn associate(
    source: &DeskewedScan,
    candidates: &CandidateSet,
    deskewed: &[DeskewedScan],
    maps: &[VoxelHashMap],
    max_corr_dist: f64,
) -> Vec<Correspondence> {
    let mut out = Vec::new();
    for (j, query) in source.global_points.iter().enumerate() {
        for &c in &candidates.candidates {
            let target = &deskewed[c];
            let Some((tp, dist)) = maps[c].nearest_in_27(query, &target.global_points) else {
                continue;
            };
            if dist > max_corr_dist || !target.normal_valid[tp] {
                continue;
            }
            out.push(Correspondence {
                source_scan: source.scan_index,
                source_point: j,
                target_scan: c,
                target_point: tp,
                normal: target.global_normals[tp],
                alpha_source: source.alphas[j],
                alpha_target: target.alphas[tp],
            });
        }
    }
    out
}

/// Candidate sampling parameters for one iteration.
#[derive(Debug, Clone, Copy)]
pub struct AssociationParams {
    pub tau: f64,
    pub n_matches: usize,
    pub max_corr_dist: f64,
    pub search_grid: f64,
    /// Base seed already mixed with the iteration when resampling per
    /// iteration; scans mix their own index on top.
    pub seed: u64,
}

/// Everything the optimizer consumes for one iteration.
#[derive(Debug)]
pub struct IterationState {
    pub deskewed: Vec<DeskewedScan>,
    pub maps: Vec<VoxelHashMap>,
    pub candidates: Vec<CandidateSet>,
    pub correspondences: Vec<Correspondence>,
}

/// Deskews all scans (store access in `order` for buffer locality), builds
/// one voxel map per scan, samples candidates, and associates.
///
/// Results are merged in scan order, so the output is identical for any
/// worker count.
pub fn rebuild_iteration_state(
    store: &mut ScanStore,
    traj: &Trajectory,
    order: &[usize],
    params: &AssociationParams,
) -> Result<IterationState> {
    let n = store.len();
    if n == 0 {
        return Ok(IterationState {
            deskewed: Vec::new(),
            maps: Vec::new(),
            candidates: Vec::new(),
            correspondences: Vec::new(),
        });
    }
    let mut deskewed: Vec<Option<DeskewedScan>> = (0..n).map(|_| None).collect();
    for &idx in order {
        let scan = store.get(idx)?;
        deskewed[idx] = Some(deskew_scan(&scan, traj)?);
    }
    let deskewed: Vec<DeskewedScan> = deskewed
        .into_iter()
        .enumerate()
        .map(|(idx, d)| d.unwrap_or_else(|| panic!("scan {idx} missing from order")))
        .collect();

    let maps: Vec<VoxelHashMap> = deskewed
        .par_iter()
        .map(|d| VoxelHashMap::build(&d.global_points, params.search_grid))
        .collect::<Result<Vec<_>>>()?;

    let positions = traj.scan_positions();
    let candidates: Vec<CandidateSet> = (0..n)
        .map(|i| {
            sample_candidates(
                &positions,
                i,
                params.tau,
                params.n_matches,
                mix_seed(params.seed, 0, i as u64),
            )
        })
        .collect();

    let per_scan: Vec<Vec<Correspondence>> = deskewed
        .par_iter()
        .map(|d| {
            associate(
                d,
                &candidates[d.scan_index],
                &deskewed,
                &maps,
                params.max_corr_dist,
            )
        })
        .collect();
    let correspondences: Vec<Correspondence> = per_scan.into_iter().flatten().collect();

    Ok(IterationState {
        deskewed,
        maps,
        candidates,
        correspondences,
    })
}
