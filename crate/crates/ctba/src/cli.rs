//! Batch entry points: optimize, evaluate, generate, export-map.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{io_err, Error, Result};
use crate::evaluation::scene::{
    generate_scene, offset_session, perturb_knots, SceneSpec, SessionSpec, World,
};
use crate::evaluation::{ate, inter_rpe, rpe, MetricReport};
use crate::geometry::{Pose, PoseKnot, Rotation, Trajectory};
use crate::optimizer::{optimize_with, IterationStats, OptimizeReport};
use crate::storage::{read_pose_file, write_pose_file, ScanStore};

/// Builds a rayon pool of the configured size (0 = default) and runs `f`
/// inside it. Results do not depend on the pool size; only wall time does.
fn with_thread_pool<T>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T>
where
    T: Send,
{
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    pool.install(f)
}

/// Output paths of a completed optimize run.
#[derive(Debug, Clone)]
pub struct OptimizeOutputs {
    pub poses: PathBuf,
    pub iterations_csv: PathBuf,
    pub summary_json: PathBuf,
    pub report: OptimizeReport,
}

/// Full optimize pipeline: derived store, initial trajectory, joint
/// optimization, and the three output files.
pub fn cmd_optimize(config: &RunConfig) -> Result<OptimizeOutputs> {
    config.validate()?;
    let t0 = Instant::now();
    fs::create_dir_all(&config.output_dir).map_err(|e| io_err(&config.output_dir, e))?;

    let (traj, report, counters) = with_thread_pool(config.threads, || {
        let mut store = ScanStore::open_derived(
            &config.scan_dir,
            config.n_buffer,
            config.derived_params(),
        )?;
        let knots = read_pose_file(&config.initial_poses)?;
        let traj_init = Trajectory::from_knots(knots, store.manifest().windows())?;
        let (traj, report) = optimize_with(
            &mut store,
            &traj_init,
            &config.search_config(),
            &config.optimizer_config(),
            |s: &IterationStats| {
                eprintln!(
                    "iter {:3}  rms {:.6} -> {:.6}  corr {}  max_update {:.3e}  lambda {:.1e}  {:.2}s",
                    s.iteration, s.rms_before, s.rms_after, s.n_corr, s.max_update, s.lambda, s.wall_s
                );
            },
        )?;
        Ok((traj, report, store.counters()))
    })?;

    let poses = config.output_dir.join("poses_optimized.txt");
    write_pose_file(&poses, traj.knots())?;

    let iterations_csv = config.output_dir.join("iterations.csv");
    let mut csv = String::from("iter,rms_before,rms_after,n_corr,max_update,lambda,wall_s\n");
    for s in &report.iterations {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.iteration, s.rms_before, s.rms_after, s.n_corr, s.max_update, s.lambda, s.wall_s
        ));
    }
    fs::write(&iterations_csv, csv).map_err(|e| io_err(&iterations_csv, e))?;

    let summary_json = config.output_dir.join("summary.json");
    let last = report.iterations.last();
    let summary = json!({
        "scans": traj.scan_count(),
        "knots": traj.knot_count(),
        "iterations": report.iterations.len(),
        "converged": report.converged,
        "final_rms": last.map(|s| s.rms_after),
        "total_correspondences": report.iterations.iter().map(|s| s.n_corr as u64).sum::<u64>(),
        "row_bound": report.row_bound,
        "store": {
            "hits": counters.hits,
            "misses": counters.misses,
            "evictions": counters.evictions,
        },
        "wall_s": t0.elapsed().as_secs_f64(),
        "config": config.to_canonical_string(),
    });
    fs::write(
        &summary_json,
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )
    .map_err(|e| io_err(&summary_json, e))?;

    Ok(OptimizeOutputs {
        poses,
        iterations_csv,
        summary_json,
        report,
    })
}

/// Splits a knot list into its first two sessions (order of appearance).
fn split_two_sessions(knots: &[PoseKnot]) -> Result<(Vec<PoseKnot>, Vec<PoseKnot>)> {
    let mut ids = Vec::new();
    for k in knots {
        if !ids.contains(&k.session_id) {
            ids.push(k.session_id);
        }
    }
    if ids.len() < 2 {
        return Err(Error::Metric(format!(
            "inter-session metrics need two sessions, found {}",
            ids.len()
        )));
    }
    let s1 = knots.iter().filter(|k| k.session_id == ids[0]).copied().collect();
    let s2 = knots.iter().filter(|k| k.session_id == ids[1]).copied().collect();
    Ok((s1, s2))
}

/// Computes ATE/RPE (and inter-RPE with `inter`) between pose files.
pub fn cmd_evaluate(
    est_path: &Path,
    gt_path: &Path,
    inter: bool,
    align: bool,
) -> Result<MetricReport> {
    let est = read_pose_file(est_path)?;
    let gt = read_pose_file(gt_path)?;
    let (ate_trans, ate_rot, pose_pairs) = ate(&est, &gt, align)?;
    let (rpe_trans, rpe_rot, _) = rpe(&est, &gt)?;
    let (inter_rpe_trans, inter_rpe_rot) = if inter {
        let (est1, est2) = split_two_sessions(&est)?;
        let (gt1, gt2) = split_two_sessions(&gt)?;
        let (t, r, _) = inter_rpe(&est1, &est2, &gt1, &gt2)?;
        (Some(t), Some(r))
    } else {
        (None, None)
    };
    Ok(MetricReport {
        ate_trans,
        ate_rot,
        rpe_trans,
        rpe_rot,
        inter_rpe_trans,
        inter_rpe_rot,
        pose_pairs,
    })
}

/// Scene generation options consumed by `cmd_generate`.
#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub out_dir: PathBuf,
    pub preset: String,
    pub n_scans: usize,
    pub sessions: usize,
    pub scan_period: f64,
    pub beam_columns: usize,
    pub rings: usize,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    pub seed: u64,
    pub perturb_t: f64,
    pub perturb_rot_deg: f64,
    pub session2_offset_t: f64,
    pub session2_offset_rot_deg: f64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            out_dir: PathBuf::new(),
            preset: "room".into(),
            n_scans: 50,
            sessions: 1,
            scan_period: 0.1,
            beam_columns: 100,
            rings: 10,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            seed: 0,
            perturb_t: 0.0,
            perturb_rot_deg: 0.0,
            session2_offset_t: 0.0,
            session2_offset_rot_deg: 0.0,
        }
    }
}

/// Builds the scene spec for a preset and generates it; optionally also
/// writes a perturbed initial-guess pose file.
pub fn cmd_generate(opts: &GenerateOptions) -> Result<PathBuf> {
    let spec = scene_spec_for(opts)?;
    let scene = generate_scene(&spec, opts.seed, &opts.out_dir)?;
    let mut init = scene.gt_knots.clone();
    if opts.session2_offset_t != 0.0 || opts.session2_offset_rot_deg != 0.0 {
        let offset = Pose::new(
            Rotation::from_axis_angle(
                Vector3::z(),
                opts.session2_offset_rot_deg.to_radians(),
            ),
            Vector3::new(opts.session2_offset_t, 0.0, 0.0),
        );
        init = offset_session(&init, 1, &offset);
    }
    if opts.perturb_t > 0.0 || opts.perturb_rot_deg > 0.0 {
        init = perturb_knots(&init, opts.perturb_t, opts.perturb_rot_deg, true, opts.seed ^ 0x5eed);
    }
    let init_path = opts.out_dir.join("init_poses.txt");
    write_pose_file(&init_path, &init)?;
    Ok(init_path)
}

/// Scene layout for the named preset; sessions follow parallel passes
/// through the same world, separated by a 100 s time gap.
pub fn scene_spec_for(opts: &GenerateOptions) -> Result<SceneSpec> {
    let world = match opts.preset.as_str() {
        "room" => World::box_room(
            Vector3::new(-10.0, -7.0, 0.0),
            Vector3::new(10.0, 7.0, 6.0),
        ),
        "slabs" => World::slabs(0.0, 4.0, 500.0),
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?} (expected room or slabs)"
            )))
        }
    };
    if !(1..=2).contains(&opts.sessions) {
        return Err(Error::Config("sessions must be 1 or 2".into()));
    }
    let duration = opts.n_scans as f64 * opts.scan_period;
    let mut sessions = vec![SessionSpec {
        session_id: 0,
        n_scans: opts.n_scans,
        start_time: 0.0,
        start_position: Vector3::new(-4.0, -0.5, 2.0),
        start_yaw_deg: 0.0,
        velocity: Vector3::new(8.0 / duration, 1.0 / duration, 0.0),
        yaw_rate_deg_per_s: 30.0 / duration,
    }];
    if opts.sessions == 2 {
        sessions.push(SessionSpec {
            session_id: 1,
            n_scans: opts.n_scans,
            start_time: duration + 100.0,
            start_position: Vector3::new(-4.0, 0.5, 2.0),
            start_yaw_deg: 10.0,
            velocity: Vector3::new(8.0 / duration, -1.0 / duration, 0.0),
            yaw_rate_deg_per_s: -30.0 / duration,
        });
    }
    Ok(SceneSpec {
        world,
        sessions,
        scan_period: opts.scan_period,
        beam_columns: opts.beam_columns,
        rings: opts.rings,
        elevation_min_deg: -42.0,
        elevation_max_deg: 42.0,
        max_range: 80.0,
        noise_sigma: opts.noise_sigma,
        outlier_fraction: opts.outlier_fraction,
    })
}

/// Deskews a dataset with the given poses and writes the aggregated cloud.
pub fn cmd_export_map(
    scan_dir: &Path,
    poses: &Path,
    out: &Path,
    subsample_cell: Option<f64>,
    n_buffer: usize,
) -> Result<()> {
    let mut store = ScanStore::open_raw(scan_dir, n_buffer)?;
    let knots = read_pose_file(poses)?;
    let traj = Trajectory::from_knots(knots, store.manifest().windows())?;
    crate::evaluation::export::export_map(&traj, &mut store, subsample_cell, out)
}

/// Writes a metric report as JSON (default) or CSV.
pub fn write_metrics(report: &MetricReport, csv: bool, out: Option<&Path>) -> Result<()> {
    let text = if csv {
        report.to_csv()
    } else {
        serde_json::to_string_pretty(report).expect("report serializes") + "\n"
    };
    match out {
        Some(path) => fs::write(path, text).map_err(|e| io_err(path, e)),
        None => {
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| io_err("<stdout>", e))
        }
    }
}
