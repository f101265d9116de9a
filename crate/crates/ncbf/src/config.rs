//! JSON configuration schemas.

use ncbf_core::linalg::Matrix;
use ncbf_core::sampling::{build_epsilon_net_with, Dataset, GridSpec, DEFAULT_SAMPLE_CAP};
use ncbf_core::systems::{benchmark, BoxSet, ConstantSource, Plant};
use ncbf_core::trainer::TrainConfig;
use ncbf_core::{Benchmark, Executor, RegionSpec, SystemModel};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::files::{read_json, FileError};

pub const SCHEMA_VERSION: u32 = 1;

/// Plant, regions and optionally replaced system constants.
///
/// Either `benchmark` names a built-in case study, or `plant`,
/// `output_matrix`, `input_bounds` and `region` describe one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub benchmark: Option<String>,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub plant: Option<Plant>,
    #[serde(default)]
    pub output_matrix: Option<Matrix>,
    #[serde(default)]
    pub input_bounds: Option<BoxSet>,
    #[serde(default)]
    pub region: Option<RegionSpec>,
    /// Externally estimated system constants; replace the analytic ones.
    #[serde(default)]
    pub constants: Option<ConstantsOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsOverride {
    pub source: String,
    #[serde(default)]
    pub l_x: Option<f64>,
    #[serde(default)]
    pub l_u: Option<f64>,
    #[serde(default)]
    pub l_h: Option<f64>,
    #[serde(default)]
    pub m_f: Option<f64>,
    #[serde(default)]
    pub m_h: Option<f64>,
}

impl PlantConfig {
    pub fn for_benchmark(name: &str) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            benchmark: Some(name.to_string()),
            name: None,
            plant: None,
            output_matrix: None,
            input_bounds: None,
            region: None,
            constants: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, FileError> {
        let cfg: Self = read_json(path)?;
        check_version(path, cfg.schema_version)?;
        Ok(cfg)
    }

    pub fn resolve(&self) -> anyhow::Result<Benchmark> {
        let mut b = match (&self.benchmark, &self.plant) {
            (Some(name), None) => benchmark(name)?,
            (None, Some(plant)) => {
                let missing = |field: &str| anyhow::anyhow!("custom plant config needs `{field}`");
                let region = self.region.clone().ok_or_else(|| missing("region"))?;
                let output = self.output_matrix.clone().ok_or_else(|| missing("output_matrix"))?;
                let inputs = self.input_bounds.clone().ok_or_else(|| missing("input_bounds"))?;
                let system = SystemModel::new(plant.clone(), output, inputs, &region.domain)?;
                Benchmark {
                    name: self.name.clone().unwrap_or_else(|| "custom".into()),
                    system,
                    region,
                }
            }
            _ => anyhow::bail!("plant config needs exactly one of `benchmark` or `plant`"),
        };
        if let Some(c) = &self.constants {
            let k = &mut b.system.constants;
            for (slot, v) in [(&mut k.l_x, c.l_x), (&mut k.l_u, c.l_u), (&mut k.l_h, c.l_h), (&mut k.m_f, c.m_f), (&mut k.m_h, c.m_h)] {
                if let Some(v) = v {
                    *slot = v;
                }
            }
            k.source = ConstantSource::Estimated;
        }
        Ok(b)
    }
}

/// How the training samples are laid out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Target covering radius over `D × D`.
    pub epsilon: f64,
    /// Accept `ε ≥ ρ`. The resulting net still covers `D × D`, but the
    /// lifting argument behind the certificate needs `ε < ρ`, so such runs
    /// are for quick experiments only.
    #[serde(default)]
    pub coarse: bool,
    #[serde(default)]
    pub cap: Option<u64>,
}

impl DatasetConfig {
    pub fn build<E: Executor>(&self, exec: &E, region: &RegionSpec) -> ncbf_core::Result<Dataset> {
        let cap = self.cap.unwrap_or(DEFAULT_SAMPLE_CAP);
        if self.coarse {
            let grid = GridSpec::for_epsilon(&region.augmented_domain(), self.epsilon)?;
            let eps = grid.covering_radius();
            Dataset::from_grid_with(exec, region, grid, eps, cap)
        } else {
            build_epsilon_net_with(exec, region, self.epsilon, cap)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub schema_version: u32,
    pub dataset: DatasetConfig,
    pub training: TrainConfig,
}

impl TrainFile {
    pub fn load(path: &Path) -> Result<Self, FileError> {
        let cfg: Self = read_json(path)?;
        check_version(path, cfg.schema_version)?;
        Ok(cfg)
    }
}

fn check_version(path: &Path, found: u32) -> Result<(), FileError> {
    if found != SCHEMA_VERSION {
        return Err(FileError::Version {
            path: path.to_path_buf(),
            found,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(())
}
