//! Small area estimation of poverty counts and proportions with
//! simultaneous bootstrap confidence intervals.
//!
//! Two empirical best predictors are provided: an area-level Poisson–gamma
//! model and a unit-level mixed logit model. Either can be fed to the
//! parametric bootstrap, which produces simultaneous and individual
//! intervals and a max-type multiple test. [`sim`] runs Monte Carlo studies
//! on top of all of this.

pub mod area;
pub mod bootstrap;
pub mod data;
pub mod numerics;
pub mod sim;
pub mod unit;

pub use data::{AreaDataset, AreaRecord, DataError, UnitDataset, UnitRecord};
pub use numerics::NumericsError;

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Area(#[from] area::AreaError),
    #[error(transparent)]
    Unit(#[from] unit::UnitError),
    #[error(transparent)]
    Bootstrap(#[from] bootstrap::BootError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
}
