//! Synthetic scene generation: ray-cast scans of a planar world along a
//! moving ground-truth trajectory, with exact per-beam timestamps.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Pose, PoseKnot, Rotation, ScanWindow, Trajectory};
use crate::pointcloud::{Scan, TimedPoint};
use crate::storage::{scan_file_name, write_pose_file, write_scan, Manifest, ManifestEntry};

/// An axis-aligned rectangle: the plane `coord[axis] = level` clipped to
/// `[lo, hi]` in the remaining two axes (cyclic order).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub axis: usize,
    pub level: f64,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Rect {
    /// Ray-rectangle intersection; returns the ray parameter (range).
    fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let d = dir[self.axis];
        if d.abs() < 1e-12 {
            return None;
        }
        let t = (self.level - origin[self.axis]) / d;
        if t <= 1e-9 {
            return None;
        }
        let u_axis = (self.axis + 1) % 3;
        let v_axis = (self.axis + 2) % 3;
        let u = origin[u_axis] + t * dir[u_axis];
        let v = origin[v_axis] + t * dir[v_axis];
        if u < self.lo[0] || u > self.hi[0] || v < self.lo[1] || v > self.hi[1] {
            return None;
        }
        Some(t)
    }

    /// Unsigned distance of a point to the rectangle's carrier plane.
    pub fn plane_distance(&self, p: &Vector3<f64>) -> f64 {
        (p[self.axis] - self.level).abs()
    }
}

/// World geometry: a set of axis-aligned rectangles.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct World {
    pub rects: Vec<Rect>,
}

impl World {
    /// The six inward faces of an axis-aligned box.
    pub fn box_room(min: Vector3<f64>, max: Vector3<f64>) -> World {
        let mut rects = Vec::new();
        for axis in 0..3 {
            let u = (axis + 1) % 3;
            let v = (axis + 2) % 3;
            for level in [min[axis], max[axis]] {
                rects.push(Rect {
                    axis,
                    level,
                    lo: [min[u], min[v]],
                    hi: [max[u], max[v]],
                });
            }
        }
        World { rects }
    }

    /// Two large horizontal planes (floor and ceiling), no side walls.
    pub fn slabs(z0: f64, z1: f64, half_extent: f64) -> World {
        World {
            rects: [z0, z1]
                .into_iter()
                .map(|level| Rect {
                    axis: 2,
                    level,
                    lo: [-half_extent, -half_extent],
                    hi: [half_extent, half_extent],
                })
                .collect(),
        }
    }

    /// Closest hit over all rectangles.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, rect) in self.rects.iter().enumerate() {
            if let Some(t) = rect.raycast(origin, dir) {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        best
    }

    /// Distance of a point to the nearest carrier plane, for oracles.
    pub fn nearest_plane_distance(&self, p: &Vector3<f64>) -> f64 {
        self.rects
            .iter()
            .map(|r| r.plane_distance(p))
            .fold(f64::INFINITY, f64::min)
    }
}

/// One session of the ground-truth motion: constant linear velocity plus a
/// constant yaw rate, which the knot slerp reproduces exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionSpec {
    pub session_id: u32,
    pub n_scans: usize,
    pub start_time: f64,
    pub start_position: Vector3<f64>,
    pub start_yaw_deg: f64,
    pub velocity: Vector3<f64>,
    pub yaw_rate_deg_per_s: f64,
}

/// Full scene description.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub world: World,
    pub sessions: Vec<SessionSpec>,
    pub scan_period: f64,
    /// Azimuth steps per scan; each step fires all rings at one timestamp.
    pub beam_columns: usize,
    pub rings: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub max_range: f64,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            world: World::box_room(
                Vector3::new(-10.0, -7.0, 0.0),
                Vector3::new(10.0, 7.0, 6.0),
            ),
            sessions: vec![SessionSpec {
                session_id: 0,
                n_scans: 50,
                start_time: 0.0,
                start_position: Vector3::new(-4.0, 0.0, 2.0),
                start_yaw_deg: 0.0,
                velocity: Vector3::new(1.0, 0.3, 0.0),
                yaw_rate_deg_per_s: 6.0,
            }],
            scan_period: 0.1,
            beam_columns: 100,
            rings: 10,
            elevation_min_deg: -42.0,
            elevation_max_deg: 42.0,
            max_range: 80.0,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
        }
    }
}

/// What [`generate_scene`] wrote to disk.
#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub manifest: Manifest,
    pub gt_knots: Vec<PoseKnot>,
    pub gt_pose_path: PathBuf,
}

fn session_pose(spec: &SessionSpec, t: f64) -> Pose {
    let dt = t - spec.start_time;
    let yaw = (spec.start_yaw_deg + spec.yaw_rate_deg_per_s * dt).to_radians();
    Pose::new(
        Rotation::from_axis_angle(Vector3::z(), yaw),
        spec.start_position + spec.velocity * dt,
    )
}

/// Ground-truth knots for a scene (one per scan boundary, per session).
pub fn ground_truth_knots(spec: &SceneSpec) -> Vec<PoseKnot> {
    let mut knots = Vec::new();
    for session in &spec.sessions {
        for i in 0..=session.n_scans {
            let t = session.start_time + i as f64 * spec.scan_period;
            knots.push(PoseKnot {
                pose: session_pose(session, t),
                timestamp: t,
                session_id: session.session_id,
            });
        }
    }
    knots
}

/// Scan windows for a scene, in scan-index order.
pub fn scene_windows(spec: &SceneSpec) -> Vec<ScanWindow> {
    let mut windows = Vec::new();
    for session in &spec.sessions {
        for i in 0..session.n_scans {
            let t_b = session.start_time + i as f64 * spec.scan_period;
            windows.push(ScanWindow {
                t_b,
                t_e: t_b + spec.scan_period,
                session_id: session.session_id,
            });
        }
    }
    windows
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller; plenty for perturbations and range noise.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Ray-casts every beam against the world at its interpolated ground-truth
/// pose and writes scans, a manifest, and the exact ground-truth pose file
/// into `out_dir`.
pub fn generate_scene(spec: &SceneSpec, seed: u64, out_dir: &Path) -> Result<GeneratedScene> {
    if spec.world.rects.is_empty() {
        return Err(Error::Scene("world has no geometry".into()));
    }
    if spec.sessions.is_empty() {
        return Err(Error::Scene("no sessions requested".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| crate::error::io_err(out_dir, e))?;

    let gt_knots = ground_truth_knots(spec);
    let windows = scene_windows(spec);
    let traj = Trajectory::from_knots(gt_knots.clone(), windows.clone())?;

    let mut manifest = Manifest::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total_hits = 0usize;

    for (scan_idx, window) in windows.iter().enumerate() {
        let mut points = Vec::new();
        for col in 0..spec.beam_columns {
            let s = col as f64 / spec.beam_columns as f64;
            let t = window.t_b + s * (window.t_e - window.t_b);
            let pose = traj.pose_at(scan_idx, t)?;
            let azimuth = 2.0 * std::f64::consts::PI * s;
            for ring in 0..spec.rings {
                let f = if spec.rings == 1 {
                    0.5
                } else {
                    ring as f64 / (spec.rings - 1) as f64
                };
                let elevation = (spec.elevation_min_deg
                    + f * (spec.elevation_max_deg - spec.elevation_min_deg))
                    .to_radians();
                let dir_sensor = Vector3::new(
                    elevation.cos() * azimuth.cos(),
                    elevation.cos() * azimuth.sin(),
                    elevation.sin(),
                );
                let dir_global = pose.rotation.rotate(&dir_sensor);
                let Some((range, _)) = spec.world.raycast(&pose.translation, &dir_global)
                else {
                    continue;
                };
                if range > spec.max_range {
                    continue;
                }
                let mut measured = range;
                if spec.outlier_fraction > 0.0 && rng.gen_bool(spec.outlier_fraction) {
                    measured = rng.gen_range(0.5..spec.max_range.min(range * 3.0).max(1.0));
                } else if spec.noise_sigma > 0.0 {
                    measured += spec.noise_sigma * gaussian(&mut rng);
                }
                let hit_global = pose.translation + measured * dir_global;
                let p_sensor = pose
                    .rotation
                    .inverse()
                    .rotate(&(hit_global - pose.translation));
                points.push(TimedPoint {
                    position: p_sensor,
                    timestamp: t,
                });
                total_hits += 1;
            }
        }
        let scan = Scan::new(scan_idx, points, None, window.t_b, window.t_e)?;
        let name = scan_file_name(scan_idx);
        write_scan(&out_dir.join(&name), &scan)?;
        manifest.scans.push(ManifestEntry {
            index: scan_idx,
            file: name,
            points: scan.len() as u64,
            t_b: window.t_b,
            t_e: window.t_e,
            session_id: window.session_id,
        });
    }
    if total_hits == 0 {
        return Err(Error::Scene(
            "no ray hit the world geometry; scene is degenerate".into(),
        ));
    }
    manifest.save(out_dir)?;
    let gt_pose_path = out_dir.join("gt_poses.txt");
    write_pose_file(&gt_pose_path, &gt_knots)?;
    Ok(GeneratedScene {
        manifest,
        gt_knots,
        gt_pose_path,
    })
}

/// Adds independent Gaussian noise to every knot: per-component translation
/// noise of `sigma_t` and a rotation about a random axis with angle drawn
/// at `sigma_rot_deg`. The first knot stays exact when `keep_first`.
pub fn perturb_knots(
    knots: &[PoseKnot],
    sigma_t: f64,
    sigma_rot_deg: f64,
    keep_first: bool,
    seed: u64,
) -> Vec<PoseKnot> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    knots
        .iter()
        .enumerate()
        .map(|(i, k)| {
            if keep_first && i == 0 {
                return *k;
            }
            let axis = loop {
                let v = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if v.norm() > 1e-3 {
                    break v.normalize();
                }
            };
            let angle = (sigma_rot_deg * gaussian(&mut rng)).to_radians();
            let dt = Vector3::new(
                sigma_t * gaussian(&mut rng),
                sigma_t * gaussian(&mut rng),
                sigma_t * gaussian(&mut rng),
            );
            PoseKnot {
                pose: Pose::new(
                    Rotation::exp(axis * angle).compose(&k.pose.rotation),
                    k.pose.translation + dt,
                ),
                timestamp: k.timestamp,
                session_id: k.session_id,
            }
        })
        .collect()
}

/// Applies one rigid offset to every knot of the selected session.
pub fn offset_session(
    knots: &[PoseKnot],
    session_id: u32,
    offset: &Pose,
) -> Vec<PoseKnot> {
    knots
        .iter()
        .map(|k| {
            if k.session_id == session_id {
                PoseKnot {
                    pose: offset.compose(&k.pose),
                    timestamp: k.timestamp,
                    session_id: k.session_id,
                }
            } else {
                *k
            }
        })
        .collect()
}
