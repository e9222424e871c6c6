//! Rigid-body poses, the continuous-time trajectory, per-beam pose
//! interpolation, and point transformation.
//!
//! The trajectory is a sequence of pose knots at scan boundaries. Within a
//! session, consecutive scans share the boundary knot; across sessions the
//! knots are split so the time discontinuity does not couple the poses.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// Scan boundary timestamps must match trajectory knots this closely (seconds).
pub const KNOT_TIME_TOL: f64 = 1e-6;

/// Scan windows shorter than this are rejected as degenerate (seconds).
pub const MIN_SCAN_WINDOW: f64 = 1e-12;

/// A 3D rotation stored as a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Builds from raw quaternion components, normalizing.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Self {
        Rotation(UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)))
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        Rotation(UnitQuaternion::from_scaled_axis(axis.normalize() * angle))
    }

    /// Exponential map: axis-angle vector to rotation.
    pub fn exp(omega: Vector3<f64>) -> Self {
        Rotation(UnitQuaternion::from_scaled_axis(omega))
    }

    /// From an orthonormal rotation matrix.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Rotation(UnitQuaternion::from_rotation_matrix(
            &nalgebra::Rotation3::from_matrix_unchecked(*m),
        ))
    }

    pub fn quaternion_wxyz(&self) -> (f64, f64, f64, f64) {
        let q = self.0.quaternion();
        (q.w, q.i, q.j, q.k)
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.inverse())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    /// Rotation angle in radians, in [0, pi].
    pub fn angle(&self) -> f64 {
        self.0.angle()
    }

    /// Geodesic angle between two rotations.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.0.angle_to(&other.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.as_ref().norm()
    }

    /// Spherical linear interpolation along the shortest arc.
    ///
    /// The sign of the second quaternion is flipped when the dot product is
    /// negative so the path never takes the long way around. At t = 0 and
    /// t = 1 the endpoints are returned bitwise.
    pub fn slerp(&self, other: &Rotation, t: f64) -> Rotation {
        if t == 0.0 {
            return *self;
        }
        if t == 1.0 {
            return *other;
        }
        let qa = *self.0.quaternion();
        let mut qb = *other.0.quaternion();
        let mut dot = qa.dot(&qb);
        if dot < 0.0 {
            qb = -qb;
            dot = -dot;
        }
        // Near-parallel quaternions: fall back to normalized lerp.
        if dot > 1.0 - 1e-10 {
            let q = qa.lerp(&qb, t);
            return Rotation(UnitQuaternion::from_quaternion(q));
        }
        let theta = dot.min(1.0).acos();
        let sin_theta = theta.sin();
        let wa = ((1.0 - t) * theta).sin() / sin_theta;
        let wb = (t * theta).sin() / sin_theta;
        Rotation(UnitQuaternion::from_quaternion(qa * wa + qb * wb))
    }

    fn renormalized(self) -> Self {
        Rotation(UnitQuaternion::from_quaternion(*self.0.quaternion()))
    }
}

/// A rigid-body transform: rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv_rot = self.rotation.inverse();
        Pose {
            rotation: inv_rot,
            translation: -inv_rot.rotate(&self.translation),
        }
    }

    /// Composition `self * other` (apply `other` first).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }
}

/// Maps a sensor-frame point into the global frame: `R * p + t`.
pub fn transform_point(pose: &Pose, p: &Vector3<f64>) -> Vector3<f64> {
    pose.rotation.rotate(p) + pose.translation
}

/// Fraction of the scan window elapsed at time `t`.
pub fn compute_alpha(t: f64, t_b: f64, t_e: f64) -> Result<f64> {
    let dt = t_e - t_b;
    if !(dt >= MIN_SCAN_WINDOW) {
        return Err(Error::DegenerateScanWindow { t_b, t_e });
    }
    if t < t_b || t > t_e {
        return Err(Error::TimestampOutOfWindow { t, t_b, t_e });
    }
    Ok((t - t_b) / dt)
}

/// Interpolates between two poses: slerp on rotation, lerp on translation.
///
/// Endpoints are reproduced bitwise at alpha = 0 and alpha = 1.
pub fn interpolate_pose(start: &Pose, end: &Pose, alpha: f64) -> Pose {
    if alpha == 0.0 {
        return *start;
    }
    if alpha == 1.0 {
        return *end;
    }
    Pose {
        rotation: start.rotation.slerp(&end.rotation, alpha),
        translation: (1.0 - alpha) * start.translation + alpha * end.translation,
    }
}

/// Applies a 6-vector update `[rotation axis-angle; translation]` to a pose.
///
/// The rotation update is multiplicative on the right, `R <- R * exp(dθ)`,
/// which is the perturbation side the residual Jacobians are written
/// against (validated by finite differences). The quaternion is
/// renormalized so chained updates do not drift.
pub fn apply_update(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let dtheta = Vector3::new(delta[0], delta[1], delta[2]);
    let dt = Vector3::new(delta[3], delta[4], delta[5]);
    Pose {
        rotation: pose.rotation.compose(&Rotation::exp(dtheta)).renormalized(),
        translation: pose.translation + dt,
    }
}

/// One pose knot of the continuous-time trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseKnot {
    pub pose: Pose,
    pub timestamp: f64,
    pub session_id: u32,
}

/// Per-scan timing and session metadata used to wire scans onto knots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanWindow {
    pub t_b: f64,
    pub t_e: f64,
    pub session_id: u32,
}

/// Ordered pose knots plus the scan-to-knot wiring.
///
/// Within a session the end knot of scan `i` is the start knot of scan
/// `i + 1`. Across a session boundary the knots are distinct.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    knots: Vec<PoseKnot>,
    scan_to_knot: Vec<(usize, usize)>,
    windows: Vec<ScanWindow>,
}

impl Trajectory {
    /// Wires a knot sequence onto scan windows.
    ///
    /// Scans must be ordered, contiguous per session, and their boundary
    /// timestamps must match the knots within [`KNOT_TIME_TOL`].
    pub fn from_knots(knots: Vec<PoseKnot>, windows: Vec<ScanWindow>) -> Result<Self> {
        if windows.is_empty() {
            if !knots.is_empty() {
                return Err(Error::InvalidTrajectory(
                    "knots present but no scans to wire them to".into(),
                ));
            }
            return Ok(Trajectory {
                knots,
                scan_to_knot: Vec::new(),
                windows,
            });
        }
        for w in &windows {
            if !(w.t_e - w.t_b >= MIN_SCAN_WINDOW) {
                return Err(Error::DegenerateScanWindow {
                    t_b: w.t_b,
                    t_e: w.t_e,
                });
            }
        }
        let mut scan_to_knot = Vec::with_capacity(windows.len());
        let mut k = 0usize;
        let mut prev_session: Option<u32> = None;
        for (i, w) in windows.iter().enumerate() {
            let start = if prev_session == Some(w.session_id) {
                // Shares the previous scan's end knot.
                k
            } else {
                // New session: fresh start knot.
                if prev_session.is_some() {
                    k += 1;
                }
                k
            };
            let end = start + 1;
            if end >= knots.len() {
                return Err(Error::InvalidTrajectory(format!(
                    "knot list too short: scan {i} needs knot {end}, have {}",
                    knots.len()
                )));
            }
            let kb = &knots[start];
            let ke = &knots[end];
            if kb.session_id != w.session_id || ke.session_id != w.session_id {
                return Err(Error::InvalidTrajectory(format!(
                    "scan {i} session {} does not match knots {}:{} sessions {}/{}",
                    w.session_id, start, end, kb.session_id, ke.session_id
                )));
            }
            if (kb.timestamp - w.t_b).abs() > KNOT_TIME_TOL
                || (ke.timestamp - w.t_e).abs() > KNOT_TIME_TOL
            {
                return Err(Error::InvalidTrajectory(format!(
                    "scan {i} window [{}, {}] does not match knot times [{}, {}]",
                    w.t_b, w.t_e, kb.timestamp, ke.timestamp
                )));
            }
            scan_to_knot.push((start, end));
            k = end;
            prev_session = Some(w.session_id);
        }
        if k + 1 != knots.len() {
            return Err(Error::InvalidTrajectory(format!(
                "knot list has {} entries, scans use {}",
                knots.len(),
                k + 1
            )));
        }
        // Strictly increasing timestamps within each session.
        for pair in knots.windows(2) {
            if pair[0].session_id == pair[1].session_id
                && !(pair[1].timestamp > pair[0].timestamp)
            {
                return Err(Error::InvalidTrajectory(format!(
                    "knot timestamps not strictly increasing within session {}: {} then {}",
                    pair[0].session_id, pair[0].timestamp, pair[1].timestamp
                )));
            }
        }
        Ok(Trajectory {
            knots,
            scan_to_knot,
            windows,
        })
    }

    pub fn knots(&self) -> &[PoseKnot] {
        &self.knots
    }

    pub fn knot_count(&self) -> usize {
        self.knots.len()
    }

    pub fn scan_count(&self) -> usize {
        self.scan_to_knot.len()
    }

    pub fn windows(&self) -> &[ScanWindow] {
        &self.windows
    }

    /// (start knot, end knot) indices for a scan.
    pub fn scan_knots(&self, scan_idx: usize) -> Result<(usize, usize)> {
        self.scan_to_knot
            .get(scan_idx)
            .copied()
            .ok_or(Error::UnknownScan(scan_idx))
    }

    pub fn start_pose(&self, scan_idx: usize) -> Result<Pose> {
        let (b, _) = self.scan_knots(scan_idx)?;
        Ok(self.knots[b].pose)
    }

    pub fn end_pose(&self, scan_idx: usize) -> Result<Pose> {
        let (_, e) = self.scan_knots(scan_idx)?;
        Ok(self.knots[e].pose)
    }

    /// Interpolated pose for a beam of `scan_idx` measured at time `t`.
    pub fn pose_at(&self, scan_idx: usize, t: f64) -> Result<Pose> {
        let (b, e) = self.scan_knots(scan_idx)?;
        let w = &self.windows[scan_idx];
        let alpha = compute_alpha(t, w.t_b, w.t_e)?;
        Ok(interpolate_pose(
            &self.knots[b].pose,
            &self.knots[e].pose,
            alpha,
        ))
    }

    /// Interpolated pose for a precomputed fraction of the scan window.
    pub fn pose_at_alpha(&self, scan_idx: usize, alpha: f64) -> Result<Pose> {
        let (b, e) = self.scan_knots(scan_idx)?;
        Ok(interpolate_pose(
            &self.knots[b].pose,
            &self.knots[e].pose,
            alpha,
        ))
    }

    /// Start-knot translations per scan, used for candidate sampling.
    pub fn scan_positions(&self) -> Vec<Vector3<f64>> {
        self.scan_to_knot
            .iter()
            .map(|&(b, _)| self.knots[b].pose.translation)
            .collect()
    }

    /// Applies one per-knot update vector; entries must match knot count.
    pub fn apply_updates(&mut self, deltas: &[Vector6<f64>]) {
        assert_eq!(deltas.len(), self.knots.len());
        for (knot, delta) in self.knots.iter_mut().zip(deltas) {
            knot.pose = apply_update(&knot.pose, delta);
        }
    }

    pub fn set_knot_pose(&mut self, idx: usize, pose: Pose) {
        self.knots[idx].pose = pose;
    }

    /// Left-composes a global rigid transform onto every knot.
    pub fn transformed_by(&self, g: &Pose) -> Trajectory {
        let mut out = self.clone();
        for knot in &mut out.knots {
            knot.pose = g.compose(&knot.pose);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_rotation(rng: &mut impl Rng) -> Rotation {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        if axis.norm() < 1e-6 {
            Rotation::identity()
        } else {
            Rotation::from_axis_angle(axis, angle)
        }
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        Pose::new(
            random_rotation(rng),
            Vector3::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            ),
        )
    }

    /// Independent slerp oracle: q_a * exp(t * log(q_a^-1 * q_b)), shortest arc.
    fn slerp_oracle(a: &Rotation, b: &Rotation, t: f64) -> Rotation {
        let qa = a.0;
        let mut qb = b.0;
        if qa.quaternion().dot(qb.quaternion()) < 0.0 {
            qb = UnitQuaternion::from_quaternion(-*qb.quaternion())
        }
        let rel = qa.inverse() * qb;
        let omega = rel.scaled_axis();
        Rotation(qa * UnitQuaternion::from_scaled_axis(omega * t))
    }

    #[test]
    fn alpha_boundaries() {
        assert_eq!(compute_alpha(0.0, 0.0, 0.1).unwrap(), 0.0);
        assert_eq!(compute_alpha(0.1, 0.0, 0.1).unwrap(), 1.0);
        assert_eq!(compute_alpha(0.025, 0.0, 0.1).unwrap(), 0.25);
    }

    #[test]
    fn alpha_degenerate_window() {
        assert!(matches!(
            compute_alpha(1.0, 1.0, 1.0),
            Err(Error::DegenerateScanWindow { .. })
        ));
        assert!(matches!(
            compute_alpha(1.0, 1.0, 1.0 + 1e-13),
            Err(Error::DegenerateScanWindow { .. })
        ));
    }

    #[test]
    fn alpha_outside_window() {
        assert!(matches!(
            compute_alpha(-0.01, 0.0, 0.1),
            Err(Error::TimestampOutOfWindow { .. })
        ));
        assert!(matches!(
            compute_alpha(0.11, 0.0, 0.1),
            Err(Error::TimestampOutOfWindow { .. })
        ));
    }

    #[test]
    fn interpolate_endpoints_bitwise() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..50 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            assert_eq!(interpolate_pose(&a, &b, 0.0), a);
            assert_eq!(interpolate_pose(&a, &b, 1.0), b);
        }
    }

    #[test]
    fn interpolate_single_axis_midpoint() {
        let a = Pose::identity();
        let b = Pose::new(
            Rotation::from_axis_angle(Vector3::z(), std::f64::consts::FRAC_PI_2),
            Vector3::new(2.0, 0.0, 0.0),
        );
        let mid = interpolate_pose(&a, &b, 0.5);
        assert_relative_eq!(mid.rotation.angle(), std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
        assert_relative_eq!(mid.translation.x, 1.0, epsilon = 1e-15);
        assert_relative_eq!(mid.translation.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn slerp_matches_independent_oracle() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..200 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            let t: f64 = rng.gen_range(0.0..1.0);
            let got = a.slerp(&b, t);
            let want = slerp_oracle(&a, &b, t);
            assert!(
                got.angle_to(&want) < 1e-12,
                "slerp deviates from oracle by {}",
                got.angle_to(&want)
            );
        }
    }

    #[test]
    fn slerp_shortest_arc_monotone() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..100 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            let total = a.angle_to(&b);
            let mut prev = 0.0;
            for step in 0..=10 {
                let t = step as f64 / 10.0;
                let ang = a.angle_to(&a.slerp(&b, t));
                assert!(ang <= total + 1e-9, "angle {ang} exceeds total {total}");
                assert!(ang >= prev - 1e-9, "angle not monotone: {prev} then {ang}");
                prev = ang;
            }
        }
    }

    #[test]
    fn transform_point_basics() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(transform_point(&Pose::identity(), &p), p);

        let pose = Pose::new(
            Rotation::from_axis_angle(Vector3::z(), std::f64::consts::FRAC_PI_2),
            Vector3::new(0.0, 0.0, 1.0),
        );
        let q = transform_point(&pose, &Vector3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(q.x, 0.0, epsilon = 1e-15);
        assert_relative_eq!(q.y, 1.0, epsilon = 1e-15);
        assert_relative_eq!(q.z, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn transform_matches_matrix_oracle() {
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..1000 {
            let pose = random_pose(&mut rng);
            let p = Vector3::new(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
            );
            let got = transform_point(&pose, &p);
            let want = pose.rotation.matrix() * p + pose.translation;
            assert!((got - want).norm() < 1e-12);
        }
    }

    #[test]
    fn apply_update_zero_is_identity() {
        let mut rng = StdRng::seed_from_u64(5);
        let pose = random_pose(&mut rng);
        let updated = apply_update(&pose, &Vector6::zeros());
        assert!(pose.rotation.angle_to(&updated.rotation) < 1e-15);
        assert_eq!(pose.translation, updated.translation);
    }

    #[test]
    fn apply_update_single_axis() {
        let delta = Vector6::new(0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0);
        let pose = apply_update(&Pose::identity(), &delta);
        let want = Rotation::from_axis_angle(Vector3::z(), std::f64::consts::FRAC_PI_2);
        assert!(pose.rotation.angle_to(&want) < 1e-15);
    }

    #[test]
    fn quaternion_norm_stable_over_chained_updates() {
        let mut rng = StdRng::seed_from_u64(6);
        let mut pose = Pose::identity();
        for _ in 0..100_000 {
            let delta = Vector6::new(
                rng.gen_range(-1e-3..1e-3),
                rng.gen_range(-1e-3..1e-3),
                rng.gen_range(-1e-3..1e-3),
                0.0,
                0.0,
                0.0,
            );
            pose = apply_update(&pose, &delta);
        }
        assert!((pose.rotation.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_inverse_composes_to_identity() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let ident = r.compose(&r.inverse());
            assert!(ident.angle() < 1e-9);
            assert!((r.norm() - 1.0).abs() < 1e-9);
        }
    }

    fn two_scan_trajectory() -> Trajectory {
        let mut rng = StdRng::seed_from_u64(8);
        let knots = vec![
            PoseKnot {
                pose: random_pose(&mut rng),
                timestamp: 0.0,
                session_id: 0,
            },
            PoseKnot {
                pose: random_pose(&mut rng),
                timestamp: 0.1,
                session_id: 0,
            },
            PoseKnot {
                pose: random_pose(&mut rng),
                timestamp: 0.2,
                session_id: 0,
            },
        ];
        let windows = vec![
            ScanWindow {
                t_b: 0.0,
                t_e: 0.1,
                session_id: 0,
            },
            ScanWindow {
                t_b: 0.1,
                t_e: 0.2,
                session_id: 0,
            },
        ];
        Trajectory::from_knots(knots, windows).unwrap()
    }

    #[test]
    fn trajectory_shares_knots_within_session() {
        let traj = two_scan_trajectory();
        let (b0, e0) = traj.scan_knots(0).unwrap();
        let (b1, e1) = traj.scan_knots(1).unwrap();
        assert_eq!(e0, b1);
        assert_eq!((b0, e1), (0, 2));
    }

    #[test]
    fn trajectory_splits_knots_across_sessions() {
        let pose = Pose::identity();
        let knots = vec![
            PoseKnot { pose, timestamp: 0.0, session_id: 0 },
            PoseKnot { pose, timestamp: 0.1, session_id: 0 },
            PoseKnot { pose, timestamp: 100.0, session_id: 1 },
            PoseKnot { pose, timestamp: 100.1, session_id: 1 },
        ];
        let windows = vec![
            ScanWindow { t_b: 0.0, t_e: 0.1, session_id: 0 },
            ScanWindow { t_b: 100.0, t_e: 100.1, session_id: 1 },
        ];
        let traj = Trajectory::from_knots(knots, windows).unwrap();
        let (_, e0) = traj.scan_knots(0).unwrap();
        let (b1, _) = traj.scan_knots(1).unwrap();
        assert_ne!(e0, b1, "session boundary must not share knots");
        assert_eq!(traj.knot_count(), 4);
    }

    #[test]
    fn pose_at_endpoints_bitwise() {
        let traj = two_scan_trajectory();
        let start = traj.pose_at(0, 0.0).unwrap();
        let end = traj.pose_at(0, 0.1).unwrap();
        assert_eq!(start, traj.knots()[0].pose);
        assert_eq!(end, traj.knots()[1].pose);
    }

    #[test]
    fn pose_at_matches_slerp_oracle() {
        let traj = two_scan_trajectory();
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..100 {
            let t = rng.gen_range(0.0..0.1);
            let got = traj.pose_at(0, t).unwrap();
            let alpha = t / 0.1;
            let a = &traj.knots()[0].pose;
            let b = &traj.knots()[1].pose;
            let want_rot = slerp_oracle(&a.rotation, &b.rotation, alpha);
            let want_trans = (1.0 - alpha) * a.translation + alpha * b.translation;
            assert!(got.rotation.angle_to(&want_rot) < 1e-12);
            assert!((got.translation - want_trans).norm() < 1e-12);
        }
    }

    #[test]
    fn pose_at_unknown_scan_errors() {
        let traj = two_scan_trajectory();
        assert!(matches!(
            traj.pose_at(5, 0.0),
            Err(Error::UnknownScan(5))
        ));
    }

    #[test]
    fn pose_compose_inverse_roundtrip() {
        let mut rng = StdRng::seed_from_u64(10);
        for _ in 0..100 {
            let pose = random_pose(&mut rng);
            let ident = pose.compose(&pose.inverse());
            assert!(ident.rotation.angle() < 1e-9);
            assert!(ident.translation.norm() < 1e-9);
        }
    }
}
