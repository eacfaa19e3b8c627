//! TOML run configuration.
//!
//! ```toml
//! schema_version = 1
//! seed = 7
//! jobs = 1
//! dt_minutes = 15
//!
//! [simulate]
//! preset = "heavy"
//! days = 365
//!
//! [ingest]
//! raw_dt_minutes = 5
//! bounds = "mask"
//!
//! [bench]
//! variants = ["bst_adaptive", "arx_adaptive"]
//! eval_stride = 4
//! sigma_min_every = 8
//!
//! [bench.phases]
//! identification = [[0.0, 30.0]]
//! initialization = [30.0, 60.0]
//! evaluation = [60.0]
//!
//! [[channels]]
//! name = "T_z"
//! kind = "output"
//! unit = "degC"
//! min = 5.0
//! max = 40.0
//! ```
//!
//! Keys under `[bench]` other than `variants` and `phases` are harness
//! settings (`t_ini`, `t_f`, `eval_stride`, `sigma_min_every`,
//! `static_column_cap`, `window_days`, `keep_predictions`,
//! `distortion_seed`, `utc_offset_hours`, ...).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zonepred_core::bench::{HarnessConfig, PhaseDays};
use zonepred_core::series::{BoundsMode, ChannelSchema, Schema};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: Option<u32>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub dt_minutes: Option<u32>,
    pub channels: Option<Vec<ChannelSchema>>,
    pub simulate: SimulateSection,
    pub ingest: IngestSection,
    pub bench: BenchSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub preset: Option<String>,
    pub days: Option<usize>,
    pub gap_fraction: Option<f64>,
    pub mean_gap_len: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    /// Grid of the raw file; defaults to the target grid.
    pub raw_dt_minutes: Option<u32>,
    pub bounds: BoundsMode,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSection {
    pub variants: Vec<String>,
    pub phases: PhaseDays,
    #[serde(flatten)]
    pub harness: HarnessConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        match cfg.schema_version {
            Some(SCHEMA_VERSION) => Ok(cfg),
            Some(v) => Err(format!("{}: unsupported schema_version {v}", path.display())),
            None => Err(format!("{}: missing schema_version", path.display())),
        }
    }

    pub fn dt_seconds(&self) -> i64 {
        i64::from(self.dt_minutes.unwrap_or(15)) * 60
    }

    /// Configured channels, else the built-in schema whose names match
    /// `header` (timestamp column excluded).
    pub fn schema_for(&self, header: &[String]) -> Result<Schema, String> {
        if let Some(ch) = &self.channels {
            return Schema::new(ch.clone()).map_err(|e| e.to_string());
        }
        for s in [Schema::building(), Schema::heating_only()] {
            let names: Vec<&str> = s.channels().iter().map(|c| c.name.as_str()).collect();
            if names.iter().all(|n| header.iter().any(|h| h == n)) && header.len() == names.len() {
                return Ok(s);
            }
        }
        Err(format!(
            "schema mismatch: columns {header:?} match no built-in schema; list them under [[channels]]"
        ))
    }
}
