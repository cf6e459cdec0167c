//! Trust-region policy optimization, with and without an entropy bonus, on
//! cart-pole balancing, plus an exact oracle for small tabular MDPs.

pub mod advantage;
pub mod cartpole;
pub mod config;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod replay;
pub mod tabular;
pub mod trainer;
pub mod trust_region;

pub use cartpole::{Action, CartPole, EnvParams, EnvState};
pub use nn::{MlpArchitecture, ParamVector, PolicyDistribution};
pub use trainer::{train, Algo, EpochRecord, TrainConfig, TrainRun};
pub use trust_region::{TrustRegionConfig, UpdateDiagnostics};
