use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctba::cli::{
    cmd_evaluate, cmd_export_map, cmd_generate, cmd_optimize, write_metrics, GenerateOptions,
};
use ctba::config::RunConfig;

/// Continuous-time LiDAR bundle adjustment.
#[derive(Parser)]
#[command(name = "ctba", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Jointly optimize a continuous-time trajectory over a scan dataset.
    Optimize(OptimizeArgs),
    /// Compare an estimated pose file against ground truth.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic scan dataset with exact ground truth.
    Generate(GenerateArgs),
    /// Deskew all scans with a pose file and export the aggregated cloud.
    ExportMap(ExportMapArgs),
}

#[derive(Args)]
struct OptimizeArgs {
    /// key=value configuration file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scan_dir: Option<PathBuf>,
    #[arg(long)]
    initial_poses: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    subsample_cell: Option<f64>,
    #[arg(long)]
    search_grid: Option<f64>,
    #[arg(long)]
    normal_k: Option<usize>,
    #[arg(long)]
    normal_planarity_max: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    n_matches: Option<usize>,
    #[arg(long)]
    n_buffer: Option<usize>,
    #[arg(long)]
    n_iter: Option<usize>,
    #[arg(long)]
    gm_sigma: Option<f64>,
    #[arg(long)]
    robust: Option<bool>,
    #[arg(long)]
    max_corr_dist: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    convergence_threshold: Option<f64>,
    #[arg(long)]
    lambda_init: Option<f64>,
    #[arg(long)]
    resample_once: Option<bool>,
    #[arg(long)]
    fix_gauge: Option<bool>,
    #[arg(long)]
    threads: Option<usize>,
}

impl OptimizeArgs {
    fn into_config(self) -> Result<RunConfig, ctba::Error> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { config.$field = v; })*
            };
        }
        set!(
            scan_dir,
            initial_poses,
            output_dir,
            subsample_cell,
            search_grid,
            normal_k,
            normal_planarity_max,
            tau,
            n_matches,
            n_buffer,
            n_iter,
            gm_sigma,
            robust,
            max_corr_dist,
            seed,
            convergence_threshold,
            lambda_init,
            resample_once,
            fix_gauge,
            threads
        );
        if config.scan_dir.as_os_str().is_empty() {
            return Err(ctba::Error::Config("--scan-dir is required".into()));
        }
        if config.initial_poses.as_os_str().is_empty() {
            return Err(ctba::Error::Config("--initial-poses is required".into()));
        }
        if config.output_dir.as_os_str().is_empty() {
            return Err(ctba::Error::Config("--output-dir is required".into()));
        }
        Ok(config)
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// Estimated pose file
    #[arg(long)]
    est: PathBuf,
    /// Ground-truth pose file
    #[arg(long)]
    gt: PathBuf,
    /// Also compute inter-session RPE (needs two sessions in both files)
    #[arg(long)]
    inter: bool,
    /// Skip the rigid alignment before the ATE
    #[arg(long)]
    no_align: bool,
    /// Emit CSV instead of JSON
    #[arg(long)]
    csv: bool,
    /// Write the report here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// World preset: room | slabs
    #[arg(long, default_value = "room")]
    preset: String,
    /// Scans per session
    #[arg(long, default_value_t = 50)]
    n_scans: usize,
    /// Number of sessions (1 or 2)
    #[arg(long, default_value_t = 1)]
    sessions: usize,
    #[arg(long, default_value_t = 0.1)]
    scan_period: f64,
    #[arg(long, default_value_t = 100)]
    beam_columns: usize,
    #[arg(long, default_value_t = 10)]
    rings: usize,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    outlier_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Std-dev of the initial-guess translation perturbation (meters)
    #[arg(long, default_value_t = 0.0)]
    perturb_t: f64,
    /// Std-dev of the initial-guess rotation perturbation (degrees)
    #[arg(long, default_value_t = 0.0)]
    perturb_rot_deg: f64,
    /// Rigid x-offset applied to session 2 in the initial guess (meters)
    #[arg(long, default_value_t = 0.0)]
    session2_offset_t: f64,
    /// Rigid yaw offset applied to session 2 in the initial guess (degrees)
    #[arg(long, default_value_t = 0.0)]
    session2_offset_rot_deg: f64,
}

#[derive(Args)]
struct ExportMapArgs {
    #[arg(long)]
    scan_dir: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Grid-subsample the aggregated cloud (meters)
    #[arg(long)]
    cell: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    n_buffer: usize,
}

fn run(cli: Cli) -> Result<(), ctba::Error> {
    match cli.command {
        Command::Optimize(args) => {
            let config = args.into_config()?;
            let outputs = cmd_optimize(&config)?;
            eprintln!(
                "wrote {} ({} iterations, converged: {})",
                outputs.poses.display(),
                outputs.report.iterations.len(),
                outputs.report.converged
            );
            Ok(())
        }
        Command::Evaluate(args) => {
            let report = cmd_evaluate(&args.est, &args.gt, args.inter, !args.no_align)?;
            write_metrics(&report, args.csv, args.output.as_deref())
        }
        Command::Generate(args) => {
            let opts = GenerateOptions {
                out_dir: args.out_dir,
                preset: args.preset,
                n_scans: args.n_scans,
                sessions: args.sessions,
                scan_period: args.scan_period,
                beam_columns: args.beam_columns,
                rings: args.rings,
                noise_sigma: args.noise_sigma,
                outlier_fraction: args.outlier_fraction,
                seed: args.seed,
                perturb_t: args.perturb_t,
                perturb_rot_deg: args.perturb_rot_deg,
                session2_offset_t: args.session2_offset_t,
                session2_offset_rot_deg: args.session2_offset_rot_deg,
            };
            let init = cmd_generate(&opts)?;
            eprintln!(
                "wrote dataset to {} (init: {})",
                opts.out_dir.display(),
                init.display()
            );
            Ok(())
        }
        Command::ExportMap(args) => cmd_export_map(
            &args.scan_dir,
            &args.poses,
            &args.output,
            args.cell,
            args.n_buffer,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
