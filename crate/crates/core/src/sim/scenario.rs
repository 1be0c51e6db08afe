//! Scenario description and synthetic data for one simulation run.

use std::path::PathBuf;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::design::{area_design, select_unit_areas, unit_design, AreaDesignConfig, UnitDesignConfig};
use super::SimError;
use crate::area::{draw_counts, Design, FitOptions};
use crate::bootstrap::{BootstrapConfig, SigmaKind};
use crate::data::{load_area_csv, load_unit_csv, AreaDataset, UnitDataset};
use crate::numerics::RngStream;
use crate::unit::{draw_unit_outcomes, AgqConfig, LogitParams};

const STAGE_SELECT: u64 = 0x5E1;
const STAGE_DRAW: u64 = 0xD4A;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimModel {
    AreaPoissonGamma,
    UnitLogit,
}

/// Number of areas relative to the base design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DMode {
    #[default]
    Original,
    /// Half of the areas, drawn once without replacement.
    Half,
    /// All areas plus a second copy of half of them.
    Extended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "source")]
pub enum DesignSource {
    /// Synthetic design from [`super::design`].
    Generated {
        #[serde(default = "default_areas")]
        areas: usize,
        #[serde(default = "default_design_seed")]
        seed: u64,
        /// Unit model only.
        #[serde(default)]
        unit: Option<UnitDesignConfig>,
    },
    AreaCsv {
        path: PathBuf,
    },
    UnitCsv {
        units: PathBuf,
        class_sizes: PathBuf,
    },
}

fn default_areas() -> usize {
    52
}

fn default_design_seed() -> u64 {
    2015
}

impl Default for DesignSource {
    fn default() -> Self {
        DesignSource::Generated { areas: default_areas(), seed: default_design_seed(), unit: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub model: SimModel,
    pub beta: Vec<f64>,
    pub delta: f64,
    #[serde(default)]
    pub design: DesignSource,
    #[serde(default)]
    pub d_mode: DMode,
    /// Simulation runs K.
    pub k: usize,
    pub seed: u64,
    /// Interval construction; `None` runs estimation only.
    #[serde(default)]
    pub bootstrap: Option<BootstrapConfig>,
    /// Variability estimates to evaluate; empty means every kind the model supports.
    #[serde(default)]
    pub sigma_kinds: Vec<SigmaKind>,
    /// Shifts Δ for the power table of the max-type test.
    #[serde(default)]
    pub power_deltas: Vec<f64>,
    #[serde(default)]
    pub agq: AgqConfig,
    #[serde(default)]
    pub fit: FitOptions,
}

/// Fixed part of the design shared by all runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Skeleton {
    Area(AreaDataset),
    Unit(UnitDataset),
}

impl Skeleton {
    pub fn num_areas(&self) -> usize {
        match self {
            Skeleton::Area(d) => d.len(),
            Skeleton::Unit(d) => d.num_areas(),
        }
    }

    pub fn area_ids(&self) -> Vec<String> {
        match self {
            Skeleton::Area(d) => d.areas.iter().map(|a| a.area_id.clone()).collect(),
            Skeleton::Unit(d) => d.area_ids.clone(),
        }
    }

    pub fn populations(&self) -> Vec<f64> {
        match self {
            Skeleton::Area(d) => d.populations(),
            Skeleton::Unit(d) => d.populations(),
        }
    }
}

/// Synthetic data of run k and the true totals μ_d.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDraw {
    pub data: Skeleton,
    pub truth: Vec<f64>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.k < 1 {
            return Err(SimError::InvalidScenario("K must be at least 1".into()));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(SimError::InvalidScenario("true parameters must be finite with delta >= 0".into()));
        }
        if self.model == SimModel::AreaPoissonGamma && self.delta == 0.0 {
            return Err(SimError::InvalidScenario("the area-level model needs delta > 0".into()));
        }
        if let Some(b) = &self.bootstrap {
            b.validate()?;
        }
        if self.model == SimModel::UnitLogit
            && self.sigma_kinds.iter().any(|k| matches!(k, SigmaKind::G1 | SigmaKind::MsePlugin))
        {
            return Err(SimError::InvalidScenario("the unit-level model supports only boot and boot-bc".into()));
        }
        Ok(())
    }

    /// Sigma kinds that are evaluated, in report order.
    pub fn kinds(&self) -> Vec<SigmaKind> {
        if !self.sigma_kinds.is_empty() {
            return self.sigma_kinds.clone();
        }
        let b2 = self.bootstrap.as_ref().is_some_and(|b| b.b2 > 0);
        SigmaKind::ALL
            .into_iter()
            .filter(|k| match k {
                SigmaKind::MseBootBc => b2,
                SigmaKind::G1 | SigmaKind::MsePlugin => self.model == SimModel::AreaPoissonGamma,
                SigmaKind::MseBoot => true,
            })
            .collect()
    }

    fn indices(&self, d: usize) -> Vec<usize> {
        let mut rng = RngStream::new(self.seed, 0, STAGE_SELECT);
        match self.d_mode {
            DMode::Original => (0..d).collect(),
            DMode::Half => {
                let mut v = sample(&mut rng, d, d / 2).into_vec();
                v.sort_unstable();
                v
            }
            DMode::Extended => {
                let mut extra = sample(&mut rng, d, d / 2).into_vec();
                extra.sort_unstable();
                (0..d).chain(extra).collect()
            }
        }
    }

    /// Base design with the D-mode applied.
    pub fn skeleton(&self) -> Result<Skeleton, SimError> {
        self.validate()?;
        match (self.model, &self.design) {
            (SimModel::AreaPoissonGamma, DesignSource::Generated { areas, seed, .. }) => {
                let base = area_design(&AreaDesignConfig { areas: *areas, beta: self.beta.clone(), seed: *seed })?;
                Ok(Skeleton::Area(base.select(&self.indices(base.len()))?))
            }
            (SimModel::AreaPoissonGamma, DesignSource::AreaCsv { path }) => {
                let base = load_area_csv(path)?;
                Ok(Skeleton::Area(base.select(&self.indices(base.len()))?))
            }
            (SimModel::UnitLogit, DesignSource::Generated { areas, seed, unit }) => {
                let cfg = UnitDesignConfig { areas: *areas, seed: *seed, ..unit.clone().unwrap_or_default() };
                let base = unit_design(&cfg)?;
                let idx = self.indices(base.num_areas());
                Ok(Skeleton::Unit(select_unit_areas(&base, &idx, self.seed)?))
            }
            (SimModel::UnitLogit, DesignSource::UnitCsv { units, class_sizes }) => {
                let base = load_unit_csv(units, class_sizes)?;
                let idx = self.indices(base.num_areas());
                Ok(Skeleton::Unit(select_unit_areas(&base, &idx, self.seed)?))
            }
            _ => Err(SimError::InvalidScenario("design source does not match the model".into())),
        }
    }
}

/// Draws the outcomes of run k from the true model; covariates stay fixed.
pub fn generate_replicate(scenario: &Scenario, skeleton: &Skeleton, k: usize) -> Result<SimDraw, SimError> {
    let mut rng = RngStream::new(scenario.seed, k as u64 + 1, STAGE_DRAW);
    match skeleton {
        Skeleton::Area(base) => {
            if base.p() != scenario.beta.len() {
                return Err(SimError::InvalidScenario(format!("beta has {} entries, design has p = {}", scenario.beta.len(), base.p())));
            }
            let lam = Design::from_dataset(base).lambdas(&scenario.beta)?;
            let (truth, y) = draw_counts(&lam, scenario.delta, &mut rng)?;
            Ok(SimDraw { data: Skeleton::Area(base.with_counts(&y)), truth })
        }
        Skeleton::Unit(base) => {
            if base.p() != scenario.beta.len() {
                return Err(SimError::InvalidScenario(format!("beta has {} entries, design has p = {}", scenario.beta.len(), base.p())));
            }
            let params = LogitParams::new(scenario.beta.clone(), scenario.delta)?;
            let draw = draw_unit_outcomes(base, &params, &mut rng)?;
            Ok(SimDraw { data: Skeleton::Unit(base.with_outcomes(&draw.y)), truth: draw.mu })
        }
    }
}
