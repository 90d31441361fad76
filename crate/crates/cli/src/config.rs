//! Run configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use omnirotor::allocation::{DroneModel, ModelParams, PenaltyWeights, SolverSettings};
use omnirotor::geometry::{build_catalog, CatalogId, DroneGeometry, DEFAULT_SCALE};
use omnirotor::simulation::{CompareSettings, FlightSettings, Scenario};
use omnirotor::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Settings for one-shot allocation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocationSettings {
    pub weights: PenaltyWeights,
    pub solver: SolverSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Catalog name, or a path to a geometry JSON file.
    pub geometry: String,
    /// Arm length of catalog layouts, m.
    pub scale: f64,
    pub model: ModelParams,
    /// Up directions of the efficiency sweep.
    pub samples: usize,
    pub allocation: AllocationSettings,
    pub flight: FlightSettings,
    pub compare: CompareSettings,
    /// Ticks before this time are left out of the statistics, s.
    pub settle_window: f64,
    pub out: PathBuf,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            geometry: CatalogId::OctahedronRot.as_str().to_string(),
            scale: DEFAULT_SCALE,
            model: ModelParams::default(),
            samples: 2000,
            allocation: AllocationSettings::default(),
            flight: FlightSettings::default(),
            compare: CompareSettings::default(),
            settle_window: 2.0,
            out: PathBuf::from("out"),
            format: Format::Csv,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
    }

    pub fn geometry(&self) -> Result<DroneGeometry> {
        match self.geometry.parse::<CatalogId>() {
            Ok(id) => build_catalog(id, self.scale),
            Err(_) if Path::new(&self.geometry).is_file() => DroneGeometry::load(Path::new(&self.geometry)),
            Err(e) => Err(Error::InvalidInput(format!(
                "geometry `{}` is neither a catalog layout nor a file ({e})",
                self.geometry
            ))),
        }
    }

    pub fn drone_model(&self) -> Result<DroneModel> {
        DroneModel::new(self.geometry()?, &self.model)
    }

    pub fn scenario(&self) -> Result<Scenario> {
        Ok(Scenario {
            model: self.drone_model()?,
            settings: self.flight.clone(),
        })
    }

    /// Checks that do not need the geometry.
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::InvalidInput(format!("scale must be positive, got {}", self.scale)));
        }
        if !(self.settle_window >= 0.0) || !self.settle_window.is_finite() {
            return Err(Error::InvalidInput("settle_window must be >= 0".into()));
        }
        self.allocation.weights.validate()?;
        self.allocation.solver.validate()?;
        self.flight.sweep.validate()?;
        self.flight.gains.validate()?;
        self.flight.weights.validate()?;
        self.flight.servo.validate()?;
        let c = &self.compare;
        for (name, v) in [
            ("flip_threshold", c.flip_threshold),
            ("min_gap", c.min_gap),
            ("window_before", c.window_before),
            ("window_after", c.window_after),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!("compare.{name} must be >= 0")));
            }
        }
        Ok(())
    }
}
