//! Layered run configuration: command-line flags override the optional
//! TOML config file, which overrides built-in defaults. The defaults
//! mirror the benchmark scenario (72 stops on a 12x6 km grid, k = 3,
//! T_max 30 min, walking 4.5 km/h, buses 28 km/h, fleet 10, gamma 0.95).

use std::path::{Path, PathBuf};

use equibus_core::optimizers::GaConfig;
use equibus_core::qnet::QNetHyper;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub q: Option<f64>,
    pub budget_s: Option<f64>,
    pub budget_evals: Option<u64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub stall_limit: Option<u32>,
    pub out_dir: Option<PathBuf>,
    pub optimizer: Option<String>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub qnet: QnetConfig,
    #[serde(default)]
    pub ga: GaFileConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub spacing_km: Option<f64>,
    pub poi_density: Option<f64>,
    pub num_lines: Option<u32>,
    pub fleet_per_line: Option<u32>,
    pub t_max_minutes: Option<f64>,
    pub walk_speed_kmh: Option<f64>,
    pub bus_speed_kmh: Option<f64>,
    pub metro_headway_minutes: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QnetConfig {
    pub embed_dim: Option<usize>,
    pub edge_dim: Option<usize>,
    pub msg_dim: Option<usize>,
    pub rounds: Option<usize>,
    pub learning_rate: Option<f64>,
    pub gamma: Option<f64>,
    pub eps_start: Option<f64>,
    pub eps_end: Option<f64>,
    pub eps_decay_steps: Option<u64>,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip_norm: Option<f64>,
}

impl QnetConfig {
    pub fn to_hyper(&self) -> QNetHyper<f64> {
        let d = QNetHyper::default();
        QNetHyper {
            embed_dim: self.embed_dim.unwrap_or(d.embed_dim),
            edge_dim: self.edge_dim.unwrap_or(d.edge_dim),
            msg_dim: self.msg_dim.unwrap_or(d.msg_dim),
            rounds: self.rounds.unwrap_or(d.rounds),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            gamma: self.gamma.unwrap_or(d.gamma),
            eps_start: self.eps_start.unwrap_or(d.eps_start),
            eps_end: self.eps_end.unwrap_or(d.eps_end),
            eps_decay_steps: self.eps_decay_steps.unwrap_or(d.eps_decay_steps),
            grad_clip_norm: match self.grad_clip_norm {
                Some(v) if v <= 0.0 => None,
                Some(v) => Some(v),
                None => d.grad_clip_norm,
            },
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaFileConfig {
    pub n_pop: Option<usize>,
    pub n_par: Option<usize>,
    pub p_mut: Option<f64>,
    pub tournament_size: Option<usize>,
}

impl GaFileConfig {
    pub fn to_config(&self) -> GaConfig {
        let d = GaConfig::default();
        GaConfig {
            n_pop: self.n_pop.unwrap_or(d.n_pop),
            n_par: self.n_par.unwrap_or(d.n_par),
            p_mut: self.p_mut.unwrap_or(d.p_mut),
            tournament_size: self.tournament_size.unwrap_or(d.tournament_size),
        }
    }
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::io(format!("config {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::validation(format!("config {}: {e}", p.display())))
        }
    }
}

/// Default output directory: `EQUIBUS_OUT_DIR`, the config file, or the
/// working directory.
pub fn resolve_out_dir(flag: Option<PathBuf>, cfg: &FileConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os("EQUIBUS_OUT_DIR").map(PathBuf::from))
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}
