//! Run configuration: flat `key=value` files with CLI-flag overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::optimizer::{GaugePolicy, OptimizerConfig, ResampleMode, RobustKernel, SearchConfig};
use crate::storage::DerivedParams;

/// Everything a reproducible `optimize` run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scan_dir: PathBuf,
    pub initial_poses: PathBuf,
    pub output_dir: PathBuf,
    pub subsample_cell: f64,
    pub search_grid: f64,
    pub normal_k: usize,
    pub normal_planarity_max: f64,
    pub tau: f64,
    pub n_matches: usize,
    pub n_buffer: usize,
    pub n_iter: usize,
    pub gm_sigma: f64,
    pub robust: bool,
    pub max_corr_dist: f64,
    pub seed: u64,
    pub convergence_threshold: f64,
    pub lambda_init: f64,
    pub resample_once: bool,
    pub fix_gauge: bool,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scan_dir: PathBuf::new(),
            initial_poses: PathBuf::new(),
            output_dir: PathBuf::new(),
            subsample_cell: 0.15,
            search_grid: 0.30,
            normal_k: 30,
            normal_planarity_max: 0.1,
            tau: 30.0,
            n_matches: 10,
            n_buffer: 1000,
            n_iter: 100,
            gm_sigma: 0.3,
            robust: true,
            max_corr_dist: 0.5,
            seed: 0,
            convergence_threshold: 1e-5,
            lambda_init: 1e-6,
            resample_once: false,
            fix_gauge: true,
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("subsample_cell", self.subsample_cell),
            ("search_grid", self.search_grid),
            ("tau", self.tau),
            ("gm_sigma", self.gm_sigma),
            ("max_corr_dist", self.max_corr_dist),
            ("convergence_threshold", self.convergence_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.lambda_init < 0.0 {
            return Err(Error::Config("lambda_init must be non-negative".into()));
        }
        for (name, v) in [
            ("normal_k", self.normal_k),
            ("n_matches", self.n_matches),
            ("n_buffer", self.n_buffer),
            ("n_iter", self.n_iter),
        ] {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Canonical `key=value` serialization; parsing it back round-trips.
    pub fn to_canonical_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scan_dir={}", self.scan_dir.display());
        let _ = writeln!(s, "initial_poses={}", self.initial_poses.display());
        let _ = writeln!(s, "output_dir={}", self.output_dir.display());
        let _ = writeln!(s, "subsample_cell={}", self.subsample_cell);
        let _ = writeln!(s, "search_grid={}", self.search_grid);
        let _ = writeln!(s, "normal_k={}", self.normal_k);
        let _ = writeln!(s, "normal_planarity_max={}", self.normal_planarity_max);
        let _ = writeln!(s, "tau={}", self.tau);
        let _ = writeln!(s, "n_matches={}", self.n_matches);
        let _ = writeln!(s, "n_buffer={}", self.n_buffer);
        let _ = writeln!(s, "n_iter={}", self.n_iter);
        let _ = writeln!(s, "gm_sigma={}", self.gm_sigma);
        let _ = writeln!(s, "robust={}", self.robust);
        let _ = writeln!(s, "max_corr_dist={}", self.max_corr_dist);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "convergence_threshold={}", self.convergence_threshold);
        let _ = writeln!(s, "lambda_init={}", self.lambda_init);
        let _ = writeln!(s, "resample_once={}", self.resample_once);
        let _ = writeln!(s, "fix_gauge={}", self.fix_gauge);
        let _ = writeln!(s, "threads={}", self.threads);
        s
    }

    /// Applies `key=value` lines on top of `self`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: lineno + 1,
                    what: format!("expected key=value, found {line:?}"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            self.apply_kv(key, value).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                what: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
        }
        match key {
            "scan_dir" => self.scan_dir = PathBuf::from(value),
            "initial_poses" => self.initial_poses = PathBuf::from(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "subsample_cell" => self.subsample_cell = num(key, value)?,
            "search_grid" => self.search_grid = num(key, value)?,
            "normal_k" => self.normal_k = num(key, value)?,
            "normal_planarity_max" => self.normal_planarity_max = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "n_matches" => self.n_matches = num(key, value)?,
            "n_buffer" => self.n_buffer = num(key, value)?,
            "n_iter" => self.n_iter = num(key, value)?,
            "gm_sigma" => self.gm_sigma = num(key, value)?,
            "robust" => self.robust = num(key, value)?,
            "max_corr_dist" => self.max_corr_dist = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "convergence_threshold" => self.convergence_threshold = num(key, value)?,
            "lambda_init" => self.lambda_init = num(key, value)?,
            "resample_once" => self.resample_once = num(key, value)?,
            "fix_gauge" => self.fix_gauge = num(key, value)?,
            "threads" => self.threads = num(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown configuration key {other:?}")))
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::error::io_err(path, e))?;
        let mut config = RunConfig::default();
        config.apply_text(&text, path)?;
        Ok(config)
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            tau: self.tau,
            n_matches: self.n_matches,
            max_corr_dist: self.max_corr_dist,
            search_grid: self.search_grid,
            seed: self.seed,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            n_iter: self.n_iter,
            convergence_threshold: self.convergence_threshold,
            kernel: if self.robust {
                RobustKernel::GemanMcClure {
                    sigma: self.gm_sigma,
                }
            } else {
                RobustKernel::None
            },
            lambda_init: self.lambda_init,
            gauge: if self.fix_gauge {
                GaugePolicy::FixFirstKnot
            } else {
                GaugePolicy::Free
            },
            resample: if self.resample_once {
                ResampleMode::Once
            } else {
                ResampleMode::EveryIteration
            },
        }
    }

    pub fn derived_params(&self) -> DerivedParams {
        DerivedParams {
            subsample_cell: self.subsample_cell,
            normal_k: self.normal_k,
            planarity_max_ratio: self.normal_planarity_max,
        }
    }
}
