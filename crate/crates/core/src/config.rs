//! Pipeline configuration, loaded from TOML.
//!
//! Every section is optional and falls back to its defaults:
//!
//! ```toml
//! voxel_size = 0.02
//! master_seed = 7
//!
//! [kernel]
//! k = 3.0
//!
//! [dataset]
//! species = ["oak", "apple", "walnut"]
//! trees_per_species = 10
//! densities = [1, 2, 3, 4]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::FtsemConfig;
use crate::error::{Error, Result};
use crate::fit::FitConfig;
use crate::likelihood::EllipsoidKernelConfig;
use crate::skeleton::{PathSearchConfig, SmoothingConfig};
use crate::synth::{OcclusionParams, Species, TreeGenParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub species: Vec<Species>,
    pub trees_per_species: usize,
    pub densities: Vec<u8>,
    /// Replaces the species presets when set; its seed is ignored.
    pub tree: Option<TreeGenParams>,
    /// Occlusion template; seed and density level are set per tree.
    pub occlusion: OcclusionParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            species: Species::ALL.to_vec(),
            trees_per_species: 10,
            densities: vec![1, 2, 3, 4],
            tree: None,
            occlusion: OcclusionParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Grid voxel edge, vertex sampling spacing and long-edge cut (m).
    pub voxel_size: f64,
    pub master_seed: u64,
    /// Ground-truth match radius for evaluation (m).
    pub match_radius: f64,
    pub kernel: EllipsoidKernelConfig,
    pub fit: FitConfig,
    pub smoothing: SmoothingConfig,
    pub path_search: PathSearchConfig,
    pub ftsem: FtsemConfig,
    pub dataset: DatasetConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.02,
            master_seed: 0,
            match_radius: crate::eval::MATCH_RADIUS,
            kernel: EllipsoidKernelConfig::default(),
            fit: FitConfig::default(),
            smoothing: SmoothingConfig::default(),
            path_search: PathSearchConfig::default(),
            ftsem: FtsemConfig::default(),
            dataset: DatasetConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_text(path).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// Fit settings with the fallback radius tied to the voxel size.
    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            fallback_radius: self.voxel_size,
            ..self.fit
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::Config(format!(
                "voxel_size must be > 0, got {}",
                self.voxel_size
            )));
        }
        if !(self.match_radius >= 0.0 && self.match_radius.is_finite()) {
            return Err(Error::Config(format!(
                "match_radius must be >= 0, got {}",
                self.match_radius
            )));
        }
        self.kernel.validate()?;
        self.fit_config().validate()?;
        self.smoothing.validate()?;
        self.path_search.validate()?;
        self.ftsem.validate()?;
        let d = &self.dataset;
        if d.densities.iter().any(|l| !(1..=4).contains(l)) {
            return Err(Error::Config(format!(
                "density levels must be 1..=4, got {:?}",
                d.densities
            )));
        }
        if let Some(t) = &d.tree {
            t.validate()?;
        }
        OcclusionParams {
            foliage_density_level: 1,
            ..d.occlusion.clone()
        }
        .validate()
    }
}
