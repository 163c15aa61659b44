//! Position effects in ranked marketplaces, identified by past A/B tests on the ranker.
//!
//! The pipeline is `simulator` or `datamodel::load_dataset` → `prepare` →
//! `estimator` → `report`, with `specs` naming the regression designs.

pub mod datamodel;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod prepare;
pub mod report;
pub mod rng;
pub mod simulator;
pub mod specs;

pub use datamodel::{Dataset, EdgeObservation, SchemaMap, SessionDataset, SessionObservation};
pub use error::{Error, Result};
pub use estimator::{EffectEstimate, FirstStageReport, FitResult, ItemFit};
pub use prepare::DesignMatrix;
pub use simulator::{SimConfig, SimTruth};
pub use specs::ModelSpec;
