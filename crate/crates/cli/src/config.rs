//! Scenario files, defaults, and validation.
//!
//! A scenario file is a JSON object; every field is optional and missing
//! fields take the documented defaults (each applied default is logged).
//! The `topology` field, when present, is a fully resolved deployment --
//! per-second money rates, drawn capacities and transfer delays -- exactly
//! as written to `scenario.resolved.json` by a run, so a run can be
//! replayed with its drawn values fixed. When absent, the deployment is
//! drawn from the scenario seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use offloadsim_core::simulator::{
    draw_topology, stream_rng, RngStream, Scenario, ScenarioError, Strategy, TopologyParams,
};
use offloadsim_core::{Scenario64, Topology64};

pub const DEFAULT_AREA: (f64, f64) = (500.0, 500.0);
pub const DEFAULT_ARRIVALS_PER_HOUR: f64 = 1200.0;
pub const DEFAULT_DURATION_S: f64 = 3.0 * 3600.0;
pub const DEFAULT_URGENCY_MIX: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
pub const DEFAULT_URGENCY_SLACKS_S: [f64; 3] = [100.0, 200.0, 300.0];
pub const DEFAULT_DATA_SIZE_RANGE_MB: (f64, f64) = (5.0, 60.0);
pub const DEFAULT_CYCLES_PER_BIT: f64 = 1000.0;
pub const DEFAULT_PSI_PER_HOUR: f64 = 1.0;
pub const DEFAULT_ALPHA_PER_HOUR: f64 = 50.0;
pub const DEFAULT_GAMMA_PER_HOUR: f64 = 50.0;
pub const DEFAULT_BETA_PER_HOUR: f64 = 50.0;
pub const DEFAULT_NUM_CLOUDLETS: usize = 8;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_STRATEGY: Strategy = Strategy::Dapa;

/// On-disk scenario schema. Also accepts a serialized resolved [`Scenario`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub area: Option<(f64, f64)>,
    pub arrival_rate_per_s: Option<f64>,
    pub duration_s: Option<f64>,
    pub urgency_mix: Option<[f64; 3]>,
    pub urgency_slacks_s: Option<[f64; 3]>,
    pub data_size_range_mb: Option<(f64, f64)>,
    pub cycles_per_bit: Option<f64>,
    pub psi_per_hour: Option<f64>,
    /// AP time rate used when drawing a topology, money per hour.
    pub alpha_per_hour: Option<f64>,
    /// Server time rate used when drawing a topology, money per hour.
    pub gamma_per_hour: Option<f64>,
    /// Transfer time rate used when drawing a topology, money per hour.
    pub beta_per_hour: Option<f64>,
    /// Number of cloudlets to draw; ignored when `topology` is given.
    pub num_cloudlets: Option<usize>,
    pub seed: Option<u64>,
    pub strategy: Option<Strategy>,
    pub topology: Option<Topology64>,
}

/// Command-line overrides applied before the topology is drawn.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub strategy: Option<Strategy>,
}

/// A problem with configuration input.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ScenarioError),
    #[error("invalid option: {0}")]
    Option(String),
}

/// Loads and fully resolves a scenario. A missing path means "all defaults".
pub fn load_scenario(path: Option<&Path>, overrides: &Overrides) -> Result<Scenario64, ConfigError> {
    let file = match path {
        Some(p) => read_scenario_file(p)?,
        None => ScenarioFile::default(),
    };
    resolve(file, overrides)
}

pub fn read_scenario_file(path: &Path) -> Result<ScenarioFile, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

/// The all-defaults scenario under a given seed and strategy.
pub fn default_scenario(seed: u64, strategy: Strategy) -> Scenario64 {
    resolve(
        ScenarioFile::default(),
        &Overrides {
            seed: Some(seed),
            strategy: Some(strategy),
        },
    )
    .expect("defaults form a valid scenario")
}

/// Fills defaults (logging each one), draws the topology if absent, and
/// validates the result.
pub fn resolve(file: ScenarioFile, overrides: &Overrides) -> Result<Scenario64, ConfigError> {
    fn defaulted<T: Copy + std::fmt::Debug>(field: &str, value: Option<T>, default: T) -> T {
        match value {
            Some(v) => v,
            None => {
                log::info!("scenario field '{field}' defaulted to {default:?}");
                default
            }
        }
    }

    let seed = overrides
        .seed
        .unwrap_or_else(|| defaulted("seed", file.seed, DEFAULT_SEED));
    let strategy = overrides
        .strategy
        .unwrap_or_else(|| defaulted("strategy", file.strategy, DEFAULT_STRATEGY));
    let area = defaulted("area", file.area, DEFAULT_AREA);
    let arrival_rate_per_s = defaulted(
        "arrival_rate_per_s",
        file.arrival_rate_per_s,
        DEFAULT_ARRIVALS_PER_HOUR / 3600.0,
    );
    let duration_s = defaulted("duration_s", file.duration_s, DEFAULT_DURATION_S);
    let urgency_mix = defaulted("urgency_mix", file.urgency_mix, DEFAULT_URGENCY_MIX);
    let urgency_slacks_s = defaulted(
        "urgency_slacks_s",
        file.urgency_slacks_s,
        DEFAULT_URGENCY_SLACKS_S,
    );
    let data_size_range_mb = defaulted(
        "data_size_range_mb",
        file.data_size_range_mb,
        DEFAULT_DATA_SIZE_RANGE_MB,
    );
    let cycles_per_bit = defaulted("cycles_per_bit", file.cycles_per_bit, DEFAULT_CYCLES_PER_BIT);
    let psi_per_hour = defaulted("psi_per_hour", file.psi_per_hour, DEFAULT_PSI_PER_HOUR);

    let topology = match file.topology {
        Some(topology) => {
            if file.alpha_per_hour.is_some()
                || file.gamma_per_hour.is_some()
                || file.beta_per_hour.is_some()
                || file.num_cloudlets.is_some()
            {
                log::warn!(
                    "explicit topology given: alpha/gamma/beta_per_hour and num_cloudlets are ignored"
                );
            }
            topology
        }
        None => {
            let params = TopologyParams::<f64> {
                count: defaulted("num_cloudlets", file.num_cloudlets, DEFAULT_NUM_CLOUDLETS),
                area,
                alpha_per_s: defaulted("alpha_per_hour", file.alpha_per_hour, DEFAULT_ALPHA_PER_HOUR)
                    / 3600.0,
                gamma_per_s: defaulted("gamma_per_hour", file.gamma_per_hour, DEFAULT_GAMMA_PER_HOUR)
                    / 3600.0,
                beta_per_s: defaulted("beta_per_hour", file.beta_per_hour, DEFAULT_BETA_PER_HOUR)
                    / 3600.0,
                ..TopologyParams::default()
            };
            let mut rng = stream_rng(seed, RngStream::Topology);
            draw_topology(&params, &mut rng).map_err(ScenarioError::from)?
        }
    };

    let scenario = Scenario {
        area,
        arrival_rate_per_s,
        duration_s,
        urgency_mix,
        urgency_slacks_s,
        data_size_range_mb,
        cycles_per_bit,
        psi_per_hour,
        seed,
        strategy,
        topology,
    };
    scenario.validate()?;
    Ok(scenario)
}
