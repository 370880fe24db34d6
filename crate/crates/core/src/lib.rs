//! Federated learning simulator with frequency-domain amplitude
//! normalization and weight-perturbed local training.
//!
//! The numeric modules ([`fourier`], [`harmonize`], [`model`], [`perturb`],
//! [`drift`]) are generic over [`Scalar`]; the aliases below pin them to
//! `f64`, which the federation loop, data generator and file formats use.

pub mod drift;
pub mod error;
pub mod federation;
pub mod fourier;
pub mod harmonize;
pub mod model;
pub mod perturb;
pub mod scalar;
pub mod synthdata;

pub use error::{Error, Result};
pub use federation::{
    client_update, run_federation, server_aggregate, Algorithm, ClientState, ClientUpdate,
    FedConfig, FederationOutcome, RoundRecord, Weighting,
};
pub use perturb::PerturbConfig;
pub use scalar::Scalar;
pub use synthdata::{ClientDataset, DatasetSpec, ShiftProfile};

pub type Image = fourier::Image<f64>;
pub type Spectrum = fourier::Spectrum<f64>;
pub type AmpPhase = fourier::AmpPhase<f64>;
pub type Grid = fourier::Grid<f64>;
pub type AmplitudeState = harmonize::AmplitudeState<f64>;
pub type GlobalAmplitude = harmonize::GlobalAmplitude<f64>;
pub type ParamVector = model::ParamVector<f64>;
pub type Batch = model::Batch<f64>;
pub type DriftConstants = drift::DriftConstants<f64>;
pub type BoundInput = drift::BoundInput<f64>;
