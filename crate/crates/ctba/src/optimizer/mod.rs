//! Point-to-plane residuals, analytic Jacobians on the continuous-time
//! trajectory, robust reweighting, and the outer optimization loop.

mod sparse;

pub use sparse::{assemble, SparseNormalSystem};

use std::time::Instant;

use nalgebra::{RowVector3, Vector3};
use rayon::prelude::*;

use crate::correspondence::{
    mix_seed, rebuild_iteration_state, AssociationParams, Correspondence, DeskewedScan,
    IterationState,
};
use crate::error::{Error, Result};
use crate::geometry::{transform_point, Trajectory};
use crate::storage::{iteration_order, ScanStore};

/// Robust loss applied per residual, recomputed every iteration (IRLS).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobustKernel {
    /// Plain least squares: unit weight.
    None,
    /// Geman-McClure: redescending, influence vanishes for large residuals.
    GemanMcClure { sigma: f64 },
}

impl RobustKernel {
    /// IRLS weight `rho'(e) / e`.
    pub fn weight(&self, e: f64) -> f64 {
        match *self {
            RobustKernel::None => 1.0,
            RobustKernel::GemanMcClure { sigma } => gm_weight(e, sigma),
        }
    }

    /// Loss value `rho(e)`.
    pub fn cost(&self, e: f64) -> f64 {
        match *self {
            RobustKernel::None => 0.5 * e * e,
            RobustKernel::GemanMcClure { sigma } => {
                let s2 = sigma * sigma;
                0.5 * s2 * e * e / (s2 + e * e)
            }
        }
    }
}

/// Geman-McClure IRLS weight for `rho(e) = (sigma^2/2) e^2 / (sigma^2 + e^2)`.
pub fn gm_weight(e: f64, sigma: f64) -> f64 {
    assert!(sigma > 0.0, "robust scale must be positive");
    let s2 = sigma * sigma;
    let ratio = s2 / (s2 + e * e);
    ratio * ratio
}

/// How the gauge freedom is removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaugePolicy {
    /// Hold the first knot of the first session fixed (default).
    FixFirstKnot,
    /// Leave all knots free; only the damping regularizes the gauge.
    Free,
}

/// Candidate-scan resampling schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMode {
    /// Fresh candidate sets every iteration (seed mixes the iteration).
    EveryIteration,
    /// Candidate sets sampled once from the initial positions and reused.
    Once,
}

/// Outer-loop settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub n_iter: usize,
    /// Stop when the largest per-knot update norm falls below this.
    pub convergence_threshold: f64,
    pub kernel: RobustKernel,
    pub lambda_init: f64,
    pub gauge: GaugePolicy,
    pub resample: ResampleMode,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            n_iter: 100,
            convergence_threshold: 1e-5,
            kernel: RobustKernel::GemanMcClure { sigma: 0.3 },
            lambda_init: 1e-6,
            gauge: GaugePolicy::FixFirstKnot,
            resample: ResampleMode::EveryIteration,
        }
    }
}

/// Correspondence-search settings consumed each iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub tau: f64,
    pub n_matches: usize,
    pub max_corr_dist: f64,
    pub search_grid: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            tau: 30.0,
            n_matches: 10,
            max_corr_dist: 0.5,
            search_grid: 0.30,
            seed: 0,
        }
    }
}

/// The eight 1x3 Jacobian blocks of one residual, indexed as
/// `[source_b, source_e, target_b, target_e]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianBlocks {
    pub rot: [RowVector3<f64>; 4],
    pub trans: [RowVector3<f64>; 4],
}

/// One linearized residual: value, robust weight, involved knots, blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualRow {
    pub value: f64,
    pub weight: f64,
    pub knots: [usize; 4],
    pub jac: JacobianBlocks,
}

/// Point-to-plane residual `e = n^T (p_hat_j - p_hat_c)` with both points
/// placed by their interpolated poses and the normal frozen at
/// linearization (it lives in the correspondence).
pub fn residual(corr: &Correspondence, traj: &Trajectory, scans: &[DeskewedScan]) -> Result<f64> {
    let p_j = scans[corr.source_scan].sensor_points[corr.source_point];
    let p_c = scans[corr.target_scan].sensor_points[corr.target_point];
    let pose_j = traj.pose_at_alpha(corr.source_scan, corr.alpha_source)?;
    let pose_c = traj.pose_at_alpha(corr.target_scan, corr.alpha_target)?;
    let diff = transform_point(&pose_j, &p_j) - transform_point(&pose_c, &p_c);
    Ok(corr.normal.dot(&diff))
}

/// Analytic Jacobian blocks of [`residual`] with respect to the four knot
/// poses, under the right-multiplicative rotation update of
/// [`crate::geometry::apply_update`].
///
/// Start-knot blocks carry `1 - alpha`, end-knot blocks `alpha`; target
/// blocks flip sign because the target point enters negated; rotation
/// blocks read `n^T R [p]x` through the identity `n^T R [p]x = (R^T n x p)^T`.
pub fn jacobians(
    corr: &Correspondence,
    traj: &Trajectory,
    scans: &[DeskewedScan],
) -> Result<([usize; 4], JacobianBlocks)> {
    let (sb, se) = traj.scan_knots(corr.source_scan)?;
    let (tb, te) = traj.scan_knots(corr.target_scan)?;
    let p_j = scans[corr.source_scan].sensor_points[corr.source_point];
    let p_c = scans[corr.target_scan].sensor_points[corr.target_point];
    let n = corr.normal;
    let a_j = corr.alpha_source;
    let a_c = corr.alpha_target;
    let knots = [sb, se, tb, te];

    let rot_block = |knot: usize, p: &Vector3<f64>, scale: f64| -> RowVector3<f64> {
        let m = traj.knots()[knot].pose.rotation.inverse().rotate(&n);
        (scale * m.cross(p)).transpose()
    };
    let rot = [
        rot_block(sb, &p_j, -(1.0 - a_j)),
        rot_block(se, &p_j, -a_j),
        rot_block(tb, &p_c, 1.0 - a_c),
        rot_block(te, &p_c, a_c),
    ];
    let nt = n.transpose();
    let trans = [
        (1.0 - a_j) * nt,
        a_j * nt,
        -(1.0 - a_c) * nt,
        -a_c * nt,
    ];
    Ok((knots, JacobianBlocks { rot, trans }))
}

/// Builds all residual rows for the current correspondences, weighting each
/// by the robust kernel at its current residual value.
pub fn build_rows(
    state: &IterationState,
    traj: &Trajectory,
    kernel: &RobustKernel,
) -> Result<Vec<ResidualRow>> {
    state
        .correspondences
        .par_iter()
        .map(|corr| {
            let e = residual(corr, traj, &state.deskewed)?;
            let (knots, jac) = jacobians(corr, traj, &state.deskewed)?;
            Ok(ResidualRow {
                value: e,
                weight: kernel.weight(e),
                knots,
                jac,
            })
        })
        .collect()
}

/// Per-iteration record for the report and the iteration CSV.
#[derive(Debug, Clone, Copy)]
pub struct IterationStats {
    pub iteration: usize,
    pub rms_before: f64,
    pub rms_after: f64,
    pub n_corr: usize,
    pub max_update: f64,
    pub lambda: f64,
    pub wall_s: f64,
    pub cost_before: f64,
    pub cost_after: f64,
}

/// Outcome of [`optimize`].
#[derive(Debug, Clone, Default)]
pub struct OptimizeReport {
    pub iterations: Vec<IterationStats>,
    pub converged: bool,
    /// `sum_i |points_i| * n_matches`, the per-iteration row bound.
    pub row_bound: usize,
}

const MAX_LM_ATTEMPTS: usize = 12;
const LAMBDA_MIN: f64 = 1e-12;

fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|e| e * e).sum::<f64>() / values.len() as f64).sqrt()
}

fn residuals_for(
    state: &IterationState,
    traj: &Trajectory,
) -> Result<Vec<f64>> {
    state
        .correspondences
        .par_iter()
        .map(|c| residual(c, traj, &state.deskewed))
        .collect()
}

/// Joint alignment loop: rebuild correspondences (scan order reversing each
/// iteration), assemble, solve with adaptive damping, apply, repeat until
/// the largest knot update drops below the threshold or `n_iter` is hit.
pub fn optimize(
    store: &mut ScanStore,
    traj_init: &Trajectory,
    search: &SearchConfig,
    config: &OptimizerConfig,
) -> Result<(Trajectory, OptimizeReport)> {
    optimize_with(store, traj_init, search, config, |_| {})
}

/// [`optimize`] with a per-iteration progress callback.
pub fn optimize_with<F: FnMut(&IterationStats)>(
    store: &mut ScanStore,
    traj_init: &Trajectory,
    search: &SearchConfig,
    config: &OptimizerConfig,
    mut progress: F,
) -> Result<(Trajectory, OptimizeReport)> {
    let n_scans = store.len();
    if n_scans < 2 {
        return Err(Error::InvalidScan(format!(
            "optimization needs at least 2 scans, found {n_scans}"
        )));
    }
    assert!(config.n_iter >= 1, "n_iter must be at least 1");
    let mut traj = traj_init.clone();
    let n_knots = traj.knot_count();
    let mut fixed = vec![false; n_knots];
    if config.gauge == GaugePolicy::FixFirstKnot {
        fixed[0] = true;
    }

    let mut report = OptimizeReport::default();
    let mut lambda = config.lambda_init;
    let mut fixed_candidates: Option<Vec<crate::correspondence::CandidateSet>> = None;

    for iter in 0..config.n_iter {
        let t0 = Instant::now();
        let order = iteration_order(iter, n_scans);
        let sampling_iter = match config.resample {
            ResampleMode::EveryIteration => iter as u64 + 1,
            ResampleMode::Once => 1,
        };
        let params = AssociationParams {
            tau: search.tau,
            n_matches: search.n_matches,
            max_corr_dist: search.max_corr_dist,
            search_grid: search.search_grid,
            seed: mix_seed(search.seed, sampling_iter, u64::MAX),
        };
        let mut state = rebuild_iteration_state(store, &traj, &order, &params)?;
        match config.resample {
            ResampleMode::Once => match &fixed_candidates {
                None => fixed_candidates = Some(state.candidates.clone()),
                Some(cands) => {
                    // Re-associate with the frozen candidate sets.
                    state = reassociate(state, cands, &params);
                }
            },
            ResampleMode::EveryIteration => {}
        }

        let row_bound: usize = state
            .deskewed
            .iter()
            .map(|d| d.sensor_points.len() * search.n_matches)
            .sum();
        report.row_bound = row_bound;
        let n_corr = state.correspondences.len();
        if n_corr == 0 {
            return Err(Error::NoCorrespondences);
        }
        assert!(
            n_corr <= row_bound,
            "residual rows {n_corr} exceed the linear bound {row_bound}"
        );

        let rows = build_rows(&state, &traj, &config.kernel)?;
        let res_before: Vec<f64> = rows.iter().map(|r| r.value).collect();
        let rms_before = rms(&res_before);
        let cost_before: f64 = res_before.iter().map(|&e| config.kernel.cost(e)).sum();

        let system = assemble(&rows, n_knots, &fixed);

        let mut accepted: Option<(Trajectory, Vec<f64>, f64, f64)> = None;
        let mut factored_once = false;
        let mut attempt_lambda = lambda;
        for _ in 0..MAX_LM_ATTEMPTS {
            let deltas = match system.solve(attempt_lambda) {
                Ok(d) => d,
                Err(_) => {
                    attempt_lambda = (attempt_lambda * 10.0).max(1e-9);
                    continue;
                }
            };
            factored_once = true;
            let mut candidate = traj.clone();
            candidate.apply_updates(&deltas);
            let res_after = residuals_for(&state, &candidate)?;
            let cost_after: f64 = res_after.iter().map(|&e| config.kernel.cost(e)).sum();
            if cost_after <= cost_before * (1.0 + 1e-12) + 1e-300 {
                let max_update = deltas.iter().map(|d| d.norm()).fold(0.0, f64::max);
                accepted = Some((candidate, res_after, cost_after, max_update));
                lambda = (attempt_lambda * 0.5).max(LAMBDA_MIN);
                break;
            }
            attempt_lambda = (attempt_lambda * 10.0).max(1e-9);
        }

        match accepted {
            Some((candidate, res_after, cost_after, max_update)) => {
                traj = candidate;
                let stats = IterationStats {
                    iteration: iter,
                    rms_before,
                    rms_after: rms(&res_after),
                    n_corr,
                    max_update,
                    lambda,
                    wall_s: t0.elapsed().as_secs_f64(),
                    cost_before,
                    cost_after,
                };
                progress(&stats);
                report.iterations.push(stats);
                if max_update < config.convergence_threshold {
                    report.converged = true;
                    break;
                }
            }
            None => {
                if !factored_once {
                    return Err(Error::SolverFailure {
                        attempts: MAX_LM_ATTEMPTS,
                        lambda: attempt_lambda,
                    });
                }
                // No damping level reduced the cost: accept no step and stop.
                let stats = IterationStats {
                    iteration: iter,
                    rms_before,
                    rms_after: rms_before,
                    n_corr,
                    max_update: 0.0,
                    lambda: attempt_lambda,
                    wall_s: t0.elapsed().as_secs_f64(),
                    cost_before,
                    cost_after: cost_before,
                };
                progress(&stats);
                report.iterations.push(stats);
                report.converged = true;
                break;
            }
        }
    }
    Ok((traj, report))
}

/// Swaps in frozen candidate sets and redoes only the association step.
fn reassociate(
    state: IterationState,
    candidates: &[crate::correspondence::CandidateSet],
    params: &AssociationParams,
) -> IterationState {
    let per_scan: Vec<Vec<Correspondence>> = state
        .deskewed
        .par_iter()
        .map(|d| {
            crate::correspondence::associate(
                d,
                &candidates[d.scan_index],
                &state.deskewed,
                &state.maps,
                params.max_corr_dist,
            )
        })
        .collect();
    IterationState {
        correspondences: per_scan.into_iter().flatten().collect(),
        candidates: candidates.to_vec(),
        ..state
    }
}
