//! Trajectory learning with Gaussian mixture regression and GMR-based
//! Gaussian processes.
//!
//! A [`GmmModel`] fitted on demonstrations gives the GMR conditional
//! distribution. [`GmrGpModel`] turns it into a non-stationary multi-output
//! GP whose prior mean is the GMR mean; conditioning on via-points adapts the
//! trajectory. [`lqr`] tracks the result with precision-weighted costs.

pub mod bench;
pub mod data;
pub mod error;
pub mod gmm;
pub mod gmr;
pub mod gmrgp;
pub mod gp;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod lqr;
pub mod mogp;
pub mod optim;
pub mod scenario;
pub mod synth;

pub use data::DemonstrationSet;
pub use error::{Error, Result};
pub use gmm::{fit_gmm, EmConfig, GaussianComponent, GmmFit, GmmModel, Responsibilities};
pub use gmr::{component_conditional, gmr_mean, gmr_predict, gmr_predict_batch, GmrPrediction};
pub use gmrgp::{GmrGpModel, NoiseModel, NoiseOverride, ViaPoint};
pub use gp::{GpModel, GmrMean, MeanFunction, ObservationSet, PosteriorPrediction, ZeroMean};
pub use kernels::{GmrKernel, KernelSpec, LmcKernel, Matern52Params, MultiOutputKernel};
pub use mogp::MogpModel;
pub use optim::{OptConfig, OptResult};
pub use lqr::{ReferenceTrajectory, TrackerConfig};
pub use scenario::Scenario;
pub use synth::{generate_synthetic, SynthKind, SynthParams};
