use thiserror::Error;

use crate::allocation::AllocationError;
use crate::control::ControlError;
use crate::design::DesignError;
use crate::field::FieldError;
use crate::harness::config::ConfigError;
use crate::harness::spectral::SpectralError;
use crate::ident::IdentError;
use crate::model::ModelError;
use crate::plant::PlantError;
use crate::sensing::SensingError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error. Each variant wraps the error of one module.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Ident(#[from] IdentError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid trace: {0}")]
    Trace(String),
}

impl Error {
    /// Stable machine-readable category, printed by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Model(_) => "model",
            Error::Field(_) => "field",
            Error::Design(_) => "design",
            Error::Allocation(_) => "allocation",
            Error::Plant(_) => "plant",
            Error::Sensing(_) => "sensing",
            Error::Control(_) => "control",
            Error::Ident(_) => "identification",
            Error::Spectral(_) => "spectral",
            Error::Trace(_) => "trace",
        }
    }

    /// Process exit code for the category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 3,
            Error::Io(_) => 4,
            Error::Trace(_) => 6,
            _ => 5,
        }
    }
}
