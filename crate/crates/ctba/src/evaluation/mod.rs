//! Trajectory accuracy metrics: ATE, RPE, and inter-session RPE.

pub mod export;
pub mod scene;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, PoseKnot, Rotation};

/// Metric bundle emitted by `evaluate`; inter-session entries are present
/// only when two sessions were compared.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub ate_trans: f64,
    pub ate_rot: f64,
    pub rpe_trans: f64,
    pub rpe_rot: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inter_rpe_trans: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inter_rpe_rot: Option<f64>,
    pub pose_pairs: usize,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut header = String::from("ate_trans,ate_rot,rpe_trans,rpe_rot");
        let mut row = format!(
            "{},{},{},{}",
            self.ate_trans, self.ate_rot, self.rpe_trans, self.rpe_rot
        );
        if let (Some(it), Some(ir)) = (self.inter_rpe_trans, self.inter_rpe_rot) {
            header.push_str(",inter_rpe_trans,inter_rpe_rot");
            row.push_str(&format!(",{it},{ir}"));
        }
        header.push_str(",pose_pairs");
        row.push_str(&format!(",{}", self.pose_pairs));
        format!("{header}\n{row}\n")
    }
}

/// Nearest-timestamp pairing within half a median knot period, respecting
/// session ids. Unmatched poses are dropped.
pub fn pair_by_timestamp(est: &[PoseKnot], gt: &[PoseKnot]) -> Vec<(usize, usize)> {
    if est.is_empty() || gt.is_empty() {
        return Vec::new();
    }
    let mut dts: Vec<f64> = gt
        .windows(2)
        .filter(|w| w[0].session_id == w[1].session_id)
        .map(|w| (w[1].timestamp - w[0].timestamp).abs())
        .collect();
    let tol = if dts.is_empty() {
        f64::INFINITY
    } else {
        dts.sort_by(f64::total_cmp);
        0.5 * dts[dts.len() / 2]
    };
    let mut pairs = Vec::new();
    for (ei, e) in est.iter().enumerate() {
        let best = gt
            .iter()
            .enumerate()
            .filter(|(_, g)| g.session_id == e.session_id)
            .map(|(gi, g)| ((g.timestamp - e.timestamp).abs(), gi))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((dt, gi)) = best {
            if dt <= tol {
                pairs.push((ei, gi));
            }
        }
    }
    pairs
}

/// Closed-form rigid fit `g` minimizing `sum ||g * src_i - dst_i||^2`.
fn rigid_fit(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Pose {
    assert_eq!(src.len(), dst.len());
    let n = src.len() as f64;
    let cs: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let cd: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (a, b) in src.iter().zip(dst) {
        h += (a - cs) * (b - cd).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut d = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v_t.transpose() * d * u.transpose();
    let rot = Rotation::from_matrix(&r);
    let t = cd - rot.rotate(&cs);
    Pose::new(rot, t)
}

/// Absolute trajectory error: optional closed-form rigid alignment, then
/// RMSE of translation residuals and of geodesic rotation angles.
/// Returns `(meters, degrees, pair count)`.
pub fn ate(est: &[PoseKnot], gt: &[PoseKnot], align: bool) -> Result<(f64, f64, usize)> {
    let pairs = pair_by_timestamp(est, gt);
    if pairs.len() < 3 {
        return Err(Error::Metric(format!(
            "ATE needs at least 3 paired poses, found {}",
            pairs.len()
        )));
    }
    let g = if align {
        let src: Vec<Vector3<f64>> = pairs.iter().map(|&(e, _)| est[e].pose.translation).collect();
        let dst: Vec<Vector3<f64>> = pairs.iter().map(|&(_, g)| gt[g].pose.translation).collect();
        rigid_fit(&src, &dst)
    } else {
        Pose::identity()
    };
    let mut sum_t2 = 0.0;
    let mut sum_r2 = 0.0;
    for &(ei, gi) in &pairs {
        let aligned = g.compose(&est[ei].pose);
        sum_t2 += (aligned.translation - gt[gi].pose.translation).norm_squared();
        let angle = aligned.rotation.angle_to(&gt[gi].pose.rotation).to_degrees();
        sum_r2 += angle * angle;
    }
    let n = pairs.len() as f64;
    Ok(((sum_t2 / n).sqrt(), (sum_r2 / n).sqrt(), pairs.len()))
}

/// Relative pose error between consecutive paired poses, as RMSE of the
/// translation and rotation-angle discrepancies. `(meters, degrees, pairs)`.
pub fn rpe(est: &[PoseKnot], gt: &[PoseKnot]) -> Result<(f64, f64, usize)> {
    let pairs = pair_by_timestamp(est, gt);
    if pairs.len() < 2 {
        return Err(Error::Metric(format!(
            "RPE needs at least 2 paired poses, found {}",
            pairs.len()
        )));
    }
    let mut sum_t2 = 0.0;
    let mut sum_r2 = 0.0;
    let mut count = 0usize;
    for w in pairs.windows(2) {
        let (e0, g0) = w[0];
        let (e1, g1) = w[1];
        if est[e0].session_id != est[e1].session_id {
            continue;
        }
        let d_est = est[e0].pose.inverse().compose(&est[e1].pose);
        let d_gt = gt[g0].pose.inverse().compose(&gt[g1].pose);
        let err = d_gt.inverse().compose(&d_est);
        sum_t2 += err.translation.norm_squared();
        let ang = err.rotation.angle().to_degrees();
        sum_r2 += ang * ang;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Metric("no consecutive pose pairs".into()));
    }
    let n = count as f64;
    Ok(((sum_t2 / n).sqrt(), (sum_r2 / n).sqrt(), count))
}

/// Cross-session consistency: for each pose of session 2 the spatially
/// closest session-1 pose is found on the ground truth, and the same pairs
/// are used to compare relative transforms of ground truth and estimate.
pub fn inter_rpe(
    est1: &[PoseKnot],
    est2: &[PoseKnot],
    gt1: &[PoseKnot],
    gt2: &[PoseKnot],
) -> Result<(f64, f64, usize)> {
    let pairs1 = pair_by_timestamp(est1, gt1);
    let pairs2 = pair_by_timestamp(est2, gt2);
    if pairs1.is_empty() || pairs2.is_empty() {
        return Err(Error::Metric("inter-RPE pairing is empty".into()));
    }
    let mut sum_t2 = 0.0;
    let mut sum_r2 = 0.0;
    let mut count = 0usize;
    for &(e2, g2) in &pairs2 {
        // Closest session-1 pose by ground-truth position; ties to the
        // lower index so the pair list is deterministic.
        let (_, &(e1, g1)) = pairs1
            .iter()
            .map(|p| {
                let d = (gt1[p.1].pose.translation - gt2[g2].pose.translation).norm();
                (d, p)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1 .1.cmp(&b.1 .1)))
            .unwrap();
        let rel_gt = gt1[g1].pose.inverse().compose(&gt2[g2].pose);
        let rel_est = est1[e1].pose.inverse().compose(&est2[e2].pose);
        let err = rel_gt.inverse().compose(&rel_est);
        sum_t2 += err.translation.norm_squared();
        let ang = err.rotation.angle().to_degrees();
        sum_r2 += ang * ang;
        count += 1;
    }
    let n = count as f64;
    Ok(((sum_t2 / n).sqrt(), (sum_r2 / n).sqrt(), count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn knot(t: f64, pose: Pose, session_id: u32) -> PoseKnot {
        PoseKnot {
            pose,
            timestamp: t,
            session_id,
        }
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        Pose::new(
            Rotation::exp(Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )),
            Vector3::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            ),
        )
    }

    fn random_trajectory(n: usize, seed: u64) -> Vec<PoseKnot> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n)
            .map(|i| knot(i as f64 * 0.1, random_pose(&mut rng), 0))
            .collect()
    }

    #[test]
    fn ate_identical_is_zero() {
        let gt = random_trajectory(20, 1);
        let (t, r, n) = ate(&gt, &gt, true).unwrap();
        assert!(t < 1e-12 && r < 1e-9);
        assert_eq!(n, 20);
    }

    #[test]
    fn ate_invariant_under_rigid_transform() {
        let gt = random_trajectory(20, 2);
        let g = Pose::new(
            Rotation::from_axis_angle(Vector3::new(1.0, 2.0, -0.5), 1.2),
            Vector3::new(5.0, -3.0, 12.0),
        );
        let est: Vec<PoseKnot> = gt
            .iter()
            .map(|k| knot(k.timestamp, g.compose(&k.pose), k.session_id))
            .collect();
        let (t, r, _) = ate(&est, &gt, true).unwrap();
        assert!(t < 1e-9, "ate_trans {t}");
        assert!(r < 1e-7, "ate_rot {r}");
    }

    #[test]
    fn ate_hand_case_matches_formula() {
        // 5 poses, one offset by 1 m, no alignment.
        let gt: Vec<PoseKnot> = (0..5)
            .map(|i| {
                knot(
                    i as f64,
                    Pose::new(Rotation::identity(), Vector3::new(i as f64, 0.0, 0.0)),
                    0,
                )
            })
            .collect();
        let mut est = gt.clone();
        est[2].pose.translation += Vector3::new(0.0, 1.0, 0.0);
        let (t, _, _) = ate(&est, &gt, false).unwrap();
        assert!((t - (1.0f64 / 5.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ate_too_few_pairs_errors() {
        let gt = random_trajectory(2, 3);
        assert!(matches!(ate(&gt, &gt, true), Err(Error::Metric(_))));
    }

    #[test]
    fn rpe_zero_for_identity_and_constant_offset() {
        let gt = random_trajectory(15, 4);
        let (t, r, _) = rpe(&gt, &gt).unwrap();
        assert!(t < 1e-12 && r < 1e-9);

        let offset = Pose::new(Rotation::identity(), Vector3::new(3.0, -1.0, 2.0));
        let est: Vec<PoseKnot> = gt
            .iter()
            .map(|k| knot(k.timestamp, offset.compose(&k.pose), k.session_id))
            .collect();
        let (t, r, _) = rpe(&est, &gt).unwrap();
        assert!(t < 1e-12, "rpe_trans {t}");
        assert!(r < 1e-9, "rpe_rot {r}");
    }

    #[test]
    fn rpe_linear_drift_equals_step() {
        let eps = 0.01;
        let gt: Vec<PoseKnot> = (0..10)
            .map(|i| {
                knot(
                    i as f64,
                    Pose::new(Rotation::identity(), Vector3::new(i as f64, 0.0, 0.0)),
                    0,
                )
            })
            .collect();
        let est: Vec<PoseKnot> = gt
            .iter()
            .enumerate()
            .map(|(i, k)| {
                knot(
                    k.timestamp,
                    Pose::new(
                        Rotation::identity(),
                        k.pose.translation + Vector3::new(0.0, i as f64 * eps, 0.0),
                    ),
                    0,
                )
            })
            .collect();
        let (t, r, _) = rpe(&est, &gt).unwrap();
        assert!((t - eps).abs() < 1e-12, "rpe_trans {t} vs {eps}");
        assert!(r < 1e-9);
    }

    fn two_session_gt(seed: u64) -> (Vec<PoseKnot>, Vec<PoseKnot>) {
        let mut rng = StdRng::seed_from_u64(seed);
        let s1: Vec<PoseKnot> = (0..12)
            .map(|i| {
                knot(
                    i as f64 * 0.1,
                    Pose::new(
                        Rotation::exp(Vector3::new(0.0, 0.0, rng.gen_range(-0.3..0.3))),
                        Vector3::new(i as f64, rng.gen_range(-0.2..0.2), 0.0),
                    ),
                    0,
                )
            })
            .collect();
        let s2: Vec<PoseKnot> = (0..12)
            .map(|i| {
                knot(
                    100.0 + i as f64 * 0.1,
                    Pose::new(
                        Rotation::exp(Vector3::new(0.0, 0.0, rng.gen_range(-0.3..0.3))),
                        Vector3::new(i as f64, 0.5 + rng.gen_range(-0.2..0.2), 0.0),
                    ),
                    1,
                )
            })
            .collect();
        (s1, s2)
    }

    #[test]
    fn inter_rpe_zero_for_exact_and_common_transform() {
        let (gt1, gt2) = two_session_gt(5);
        let (t, r, _) = inter_rpe(&gt1, &gt2, &gt1, &gt2).unwrap();
        assert!(t < 1e-12 && r < 1e-9);

        let g = Pose::new(
            Rotation::from_axis_angle(Vector3::new(0.3, 1.0, 0.2), 0.8),
            Vector3::new(-4.0, 2.0, 7.0),
        );
        let est1: Vec<PoseKnot> = gt1
            .iter()
            .map(|k| knot(k.timestamp, g.compose(&k.pose), k.session_id))
            .collect();
        let est2: Vec<PoseKnot> = gt2
            .iter()
            .map(|k| knot(k.timestamp, g.compose(&k.pose), k.session_id))
            .collect();
        let (t, r, _) = inter_rpe(&est1, &est2, &gt1, &gt2).unwrap();
        assert!(t < 1e-9, "inter trans {t}");
        assert!(r < 1e-7, "inter rot {r}");
    }

    #[test]
    fn inter_rpe_constant_session_offset() {
        let (gt1, gt2) = two_session_gt(6);
        let est1 = gt1.clone();
        let est2: Vec<PoseKnot> = gt2
            .iter()
            .map(|k| {
                knot(
                    k.timestamp,
                    Pose::new(
                        k.pose.rotation,
                        k.pose.translation + Vector3::new(0.1, 0.0, 0.0),
                    ),
                    k.session_id,
                )
            })
            .collect();
        let (t, _, _) = inter_rpe(&est1, &est2, &gt1, &gt2).unwrap();
        assert!((t - 0.1).abs() < 1e-12, "inter trans {t}");
    }

    #[test]
    fn inter_rpe_pairing_deterministic() {
        let (gt1, gt2) = two_session_gt(7);
        let a = inter_rpe(&gt1, &gt2, &gt1, &gt2).unwrap();
        let b = inter_rpe(&gt1, &gt2, &gt1, &gt2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rigid_fit_recovers_exact_transform() {
        let mut rng = StdRng::seed_from_u64(8);
        let g = random_pose(&mut rng);
        let src: Vec<Vector3<f64>> = (0..50)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                )
            })
            .collect();
        let dst: Vec<Vector3<f64>> = src
            .iter()
            .map(|p| crate::geometry::transform_point(&g, p))
            .collect();
        let fit = rigid_fit(&src, &dst);
        assert!(fit.rotation.angle_to(&g.rotation) < 1e-10);
        assert!((fit.translation - g.translation).norm() < 1e-9);
    }
}
